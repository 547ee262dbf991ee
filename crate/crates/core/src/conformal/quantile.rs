use crate::error::{DanceError, Result};

/// 1-based order-statistic index `⌈(1-α)(n+1)⌉`.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    let x = (1.0 - alpha) * (n as f64 + 1.0);
    // (1-α)(n+1) is often an integer in exact arithmetic; do not let a
    // rounding error push the ceiling up by one.
    (x - 1e-9).ceil().max(0.0) as usize
}

/// The `⌈(1-α)(n+1)⌉`-th smallest score, or `+∞` when that index exceeds `n`.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(DanceError::invalid("conformal quantile of an empty score list"));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(DanceError::invalid(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(DanceError::NonFinite("NaN nonconformity score".into()));
    }
    let j = conformal_rank(scores.len(), alpha);
    if j > scores.len() {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(j.max(1) - 1, f64::total_cmp);
    Ok(*kth)
}

/// Localized threshold: calibration score `i` carries mass
/// `K_i / (1 + Σ_j K_j)`, the test point holding the remaining
/// `1 / (1 + Σ K)` at `+∞`. Returns the smallest calibration score whose
/// cumulative mass reaches `1 - α`, or `+∞`.
pub fn ncp_weighted_quantile(scores: &[f64], similarities: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(DanceError::invalid("weighted quantile of an empty score list"));
    }
    if scores.len() != similarities.len() {
        return Err(DanceError::DimensionMismatch {
            expected: scores.len(),
            actual: similarities.len(),
        });
    }
    if similarities.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
        return Err(DanceError::invalid("localizer similarities must be finite and >= 0"));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(DanceError::invalid(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    let total = 1.0 + similarities.iter().sum::<f64>();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let target = 1.0 - alpha;
    let mut mass = 0.0;
    for i in order {
        mass += similarities[i] / total;
        if mass >= target - 1e-12 {
            return Ok(scores[i]);
        }
    }
    Ok(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_statistic_examples() {
        let s: Vec<f64> = (1..=19).map(f64::from).collect();
        assert_eq!(conformal_quantile(&s, 0.1).unwrap(), 18.0);
        assert_eq!(
            conformal_quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.05).unwrap(),
            f64::INFINITY
        );
        assert_eq!(conformal_quantile(&[4.2], 0.5).unwrap(), 4.2);
        assert!(conformal_quantile(&[], 0.1).is_err());
    }

    #[test]
    fn infinite_scores_sort_last() {
        let s = [f64::INFINITY, 1.0, 2.0, f64::INFINITY];
        // n = 4, α = 0.5: j = ⌈2.5⌉ = 3
        assert_eq!(conformal_quantile(&s, 0.5).unwrap(), f64::INFINITY);
        assert_eq!(conformal_quantile(&s, 0.7).unwrap(), 2.0);
    }

    #[test]
    fn zero_alpha_is_infinite() {
        assert_eq!(conformal_quantile(&[1.0, 2.0], 0.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ncp_examples() {
        let q = ncp_weighted_quantile(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0], 0.5).unwrap();
        assert_eq!(q, 2.0);
        // α close to 1: the first score already carries enough mass
        let q = ncp_weighted_quantile(&[5.0, 1.0, 3.0], &[1.0, 1.0, 1.0], 0.99).unwrap();
        assert_eq!(q, 1.0);
        // not enough calibration mass
        let q = ncp_weighted_quantile(&[1.0], &[0.5], 0.1).unwrap();
        assert_eq!(q, f64::INFINITY);
        assert!(ncp_weighted_quantile(&[1.0], &[-1.0], 0.1).is_err());
    }

    #[test]
    fn ncp_uniform_weights_match_plain_quantile() {
        let n = 1000;
        let scores: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64 / n as f64).collect();
        let ones = vec![1.0; n];
        for alpha in [0.05, 0.1, 0.2, 0.5] {
            let plain = conformal_quantile(&scores, alpha).unwrap();
            let local = ncp_weighted_quantile(&scores, &ones, alpha).unwrap();
            // within one order statistic
            assert!(
                (plain - local).abs() <= 1.0 / n as f64 + 1e-12,
                "{alpha}: {plain} vs {local}"
            );
        }
    }
}
