use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dance_core::conformal::{
    calibrate, dance_set, score_aps, set_clr, set_knn, smoothing_noise, softmax, thresholds_from_scores,
    NeighborhoodScorer,
};
use dance_core::eval::{ccv, per_class_coverage};
use dance_core::io::{decode_dataset, encode_dataset};
use dance_core::kernel::kernel_eval;
use dance_core::neighbors::{build_index, ProjectedIndex};
use dance_core::{
    EmbeddedDataset, FeatureMatrix, KernelParams, Matrix, PredictionSet, ReferenceMode, ScoreConfig, Smoothing,
};

struct Instance {
    data: EmbeddedDataset,
    index: ProjectedIndex,
    kernel: KernelParams,
    query: Vec<f64>,
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(8..=50);
    let c = rng.gen_range(2..=5);
    let d = rng.gen_range(1..=4);
    let rows: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..n).map(|i| if i < c { i } else { rng.gen_range(0..c) }).collect();
    let data = EmbeddedDataset::new(Matrix::from_vec(n, d, rows).unwrap(), labels, c).unwrap();
    let diag: Vec<f64> = (0..d).map(|_| rng.gen_range(0.2..3.0)).collect();
    let m = FeatureMatrix::new(Matrix::from_diagonal(&diag)).unwrap();
    let kernel = KernelParams::new(m, rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)).unwrap();
    let index = build_index(&data, &kernel.feature_matrix).unwrap();
    let query = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Instance {
        data,
        index,
        kernel,
        query,
    }
}

fn config(seed: u64, n: usize, smoothed: bool) -> ScoreConfig {
    ScoreConfig {
        m_knn: n.min(10),
        m_clr: n.min(6),
        temperature: 0.1,
        smoothing: if smoothed {
            Smoothing::Smoothed
        } else {
            Smoothing::Deterministic
        },
        seed,
        ..ScoreConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn branch_sets_grow_with_threshold(seed in any::<u64>(), q in 0.0f64..12.0, dq in 0.0f64..5.0, smoothed in any::<bool>()) {
        let inst = instance(seed);
        let cfg = config(seed, inst.data.len(), smoothed);
        let small = set_knn(&inst.query, q, &inst.index, &inst.kernel, &cfg, 3).unwrap();
        let large = set_knn(&inst.query, q + dq, &inst.index, &inst.kernel, &cfg, 3).unwrap();
        prop_assert!(small.is_subset(&large));
        prop_assert!(small.len() as f64 <= q.floor());
        let small = set_clr(&inst.query, q, &inst.index, &inst.kernel, &cfg).unwrap();
        let large = set_clr(&inst.query, q + dq, &inst.index, &inst.kernel, &cfg).unwrap();
        prop_assert!(small.is_subset(&large));
    }

    #[test]
    fn dance_set_lies_in_both_branches(seed in any::<u64>(), alpha in 0.05f64..0.6, lambda in 0.0f64..=1.0) {
        let inst = instance(seed);
        let cfg = config(seed, inst.data.len() - 1, true);
        let art = calibrate(&inst.data, &inst.index, &inst.kernel, alpha, lambda, ReferenceMode::Reuse, &cfg).unwrap();
        prop_assert!((art.alpha_knn + art.alpha_clr - art.alpha).abs() <= 1e-12);
        let dance = dance_set(&inst.query, &art, &inst.index, &inst.kernel, 9).unwrap();
        let knn = set_knn(&inst.query, art.q_knn, &inst.index, &inst.kernel, &cfg, 9).unwrap();
        let clr = set_clr(&inst.query, art.q_clr, &inst.index, &inst.kernel, &cfg).unwrap();
        prop_assert!(dance.is_subset(&knn));
        prop_assert!(dance.is_subset(&clr));
        prop_assert_eq!(dance, knn.intersection(&clr));
    }

    #[test]
    fn smoothing_noise_is_keyed(seed in any::<u64>(), id in any::<u64>(), label in 0usize..1000, eps in 0.001f64..0.999) {
        let u = smoothing_noise(seed, id, label, eps);
        prop_assert!((0.0..eps).contains(&u));
        prop_assert_eq!(u.to_bits(), smoothing_noise(seed, id, label, eps).to_bits());
    }

    #[test]
    fn calibration_and_prediction_share_noise(seed in any::<u64>()) {
        let inst = instance(seed);
        let cfg = config(seed, inst.data.len(), true);
        let scorer = NeighborhoodScorer::new(&inst.index, &inst.kernel, &cfg).unwrap();
        let a = scorer.point_scores(&inst.query, 77, None).unwrap();
        let b = scorer.point_scores(&inst.query, 77, None).unwrap();
        prop_assert_eq!(&a, &b);
        for (y, (&s, &r)) in a.knn.iter().zip(&a.knn_rank).enumerate() {
            if r.is_finite() {
                prop_assert_eq!(s, r + smoothing_noise(seed, 77, y, cfg.noise_epsilon));
            }
        }
    }

    #[test]
    fn contrastive_weights_normalize(seed in any::<u64>(), tau in 0.01f64..2.0) {
        let inst = instance(seed);
        let m = inst.data.len().min(12);
        let nn = inst.index.knn_projected(&inst.index.project(&inst.query).unwrap(), m, None).unwrap();
        let anchor = inst.data.embedding(nn.indices[0]);
        let logits: Vec<f64> = nn
            .indices
            .iter()
            .map(|&j| -2.0 * (1.0 - kernel_eval(anchor, inst.data.embedding(j), &inst.kernel).unwrap()) / tau)
            .collect();
        let total: f64 = softmax(&logits).iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn aps_of_top_label_is_its_probability(logits in prop::collection::vec(-5.0f64..5.0, 2..10)) {
        let p = softmax(&logits);
        let top = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        prop_assert!((score_aps(&p, top).unwrap() - p[top]).abs() <= 1e-12);
    }

    #[test]
    fn thresholds_split_the_budget(seed in any::<u64>(), alpha in 0.01f64..0.99, lambda in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let knn: Vec<f64> = (0..40).map(|_| rng.gen_range(1.0..10.0)).collect();
        let clr: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..5.0)).collect();
        let (q_knn, q_clr) = thresholds_from_scores(&knn, &clr, alpha, lambda).unwrap();
        if lambda == 0.0 {
            prop_assert_eq!(q_clr, f64::INFINITY);
        }
        if lambda == 1.0 {
            prop_assert_eq!(q_knn, f64::INFINITY);
        }
        prop_assert!(!q_knn.is_nan() && !q_clr.is_nan());
    }

    #[test]
    fn ccv_is_mean_absolute_class_gap(seed in any::<u64>(), alpha in 0.01f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.gen_range(2..6);
        let labels: Vec<usize> = (0..60).map(|_| rng.gen_range(0..c)).collect();
        let sets: Vec<PredictionSet> = (0..60)
            .map(|_| PredictionSet::from_labels((0..c).filter(|_| rng.gen_bool(0.6)).collect()))
            .collect();
        let per = per_class_coverage(&sets, &labels, c).unwrap();
        let want = 100.0 * per.values().map(|v| (v - (1.0 - alpha)).abs()).sum::<f64>() / per.len() as f64;
        prop_assert!((ccv(&sets, &labels, alpha, c).unwrap() - want).abs() <= 1e-12);
    }

    #[test]
    fn dataset_bytes_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, c) = (rng.gen_range(1..30), rng.gen_range(1..6), rng.gen_range(2..5));
        // f32-representable so the round trip is exact
        let rows: Vec<f64> = (0..n * d).map(|_| f64::from(rng.gen_range(-100.0f32..100.0))).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let data = EmbeddedDataset::new(Matrix::from_vec(n, d, rows).unwrap(), labels, c).unwrap();
        let bytes = encode_dataset(&data);
        prop_assert_eq!(bytes.len(), 32 + 4 * n * d + 4 * n);
        let back = decode_dataset(&bytes).unwrap();
        prop_assert_eq!(back.embeddings(), data.embeddings());
        prop_assert_eq!(back.labels(), data.labels());
        prop_assert_eq!(back.class_count(), c);
    }

    #[test]
    fn knn_lists_are_prefixes(seed in any::<u64>()) {
        let inst = instance(seed);
        let pz = inst.index.project(&inst.query).unwrap();
        let n = inst.index.len();
        let full = inst.index.knn_projected(&pz, n, None).unwrap();
        prop_assert!(full.distances.windows(2).all(|w| w[0] <= w[1]));
        for k in 1..n {
            let part = inst.index.knn_projected(&pz, k, None).unwrap();
            prop_assert_eq!(&part.indices[..], &full.indices[..k]);
        }
    }
}
