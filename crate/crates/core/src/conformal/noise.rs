use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform(0, ε) tie-breaking draw for `(seed, point id, label)`.
///
/// Counter-based: the value depends only on the triple, never on how many
/// draws came before, so calibration and prediction (serial or parallel)
/// see the same noise for the same point and label.
pub fn smoothing_noise(seed: u64, point_id: u64, label: usize, epsilon: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(point_id);
    rng.set_word_pos(2 * label as u128);
    let bits = rng.next_u64() >> 11;
    epsilon * (bits as f64 * (1.0 / (1u64 << 53) as f64))
}
