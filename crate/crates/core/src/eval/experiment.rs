use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::metrics::MetricsReport;
use super::split::{split_dataset, split_indices, SplitSpec};
use super::synth::SynthSpec;
use super::{derive_seed, SeedTag};
use crate::conformal::{
    calibrate_scored, check_alpha, clr_set_from_scores, conformal_quantile, knn_set_from_scores, ncp_weighted_quantile,
    score_raps, select_lambda, softmax, BranchSets, LambdaReference, LambdaWeights, NeighborhoodScorer, PointScores,
    PredictionSet, ReferenceMode, ScoreConfig, DEFAULT_LAMBDA_GRID,
};
use crate::dataset::EmbeddedDataset;
use crate::error::{DanceError, Result};
use crate::kernel::KernelParams;
use crate::neighbors::{build_index, ProjectedIndex};
use crate::rfm::{tune_hyperparameters, RfmConfig, RfmModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dance,
    KnnOnly,
    ClrOnly,
    DeepKnn,
    Aps,
    Raps,
    NcpRaps,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Dance,
        Method::KnnOnly,
        Method::ClrOnly,
        Method::DeepKnn,
        Method::Aps,
        Method::Raps,
        Method::NcpRaps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dance => "dance",
            Method::KnnOnly => "knn_only",
            Method::ClrOnly => "clr_only",
            Method::DeepKnn => "deep_knn",
            Method::Aps => "aps",
            Method::Raps => "raps",
            Method::NcpRaps => "ncp_raps",
        }
    }

    fn uses_neighborhood_scores(self) -> bool {
        matches!(self, Method::Dance | Method::KnnOnly | Method::ClrOnly)
    }

    /// Parses a comma-separated list; `all` expands to every method.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "all" {
                out.extend(Method::ALL);
            } else {
                out.push(part.parse()?);
            }
        }
        out.sort_unstable();
        out.dedup();
        if out.is_empty() {
            return Err(DanceError::invalid("no methods selected"));
        }
        Ok(out)
    }
}

impl FromStr for Method {
    type Err = DanceError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| DanceError::invalid(format!("unknown method '{s}'")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A fixed error-budget split, or a grid search on the calibration set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64),
    Grid,
}

impl FromStr for LambdaChoice {
    type Err = DanceError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "grid" {
            return Ok(LambdaChoice::Grid);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| DanceError::invalid(format!("lambda must be a number in [0, 1] or 'grid', got '{s}'")))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(DanceError::invalid(format!("lambda must lie in [0, 1], got {v}")));
        }
        Ok(LambdaChoice::Fixed(v))
    }
}

impl Serialize for LambdaChoice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LambdaChoice::Fixed(v) => s.serialize_f64(*v),
            LambdaChoice::Grid => s.serialize_str("grid"),
        }
    }
}

impl<'de> Deserialize<'de> for LambdaChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(LambdaChoice::Fixed(v)),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    File { path: PathBuf },
    Synthetic(SynthSpec),
}

impl DataSource {
    pub fn load(&self) -> Result<EmbeddedDataset> {
        match self {
            DataSource::File { path } => crate::io::read_dataset(path),
            DataSource::Synthetic(spec) => spec.generate(),
        }
    }
}

/// Settings of the comparison methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub deep_knn_k: usize,
    pub raps_lambda: f64,
    pub raps_k: usize,
    /// The localizer bandwidth of the weighted-quantile baseline is the
    /// distance to this many-th nearest calibration point.
    pub ncp_neighbors: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            deep_knn_k: 75,
            raps_lambda: 0.001,
            raps_k: 1,
            ncp_neighbors: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub split: SplitSpec,
    pub alpha: f64,
    pub lambda: LambdaChoice,
    pub mode: ReferenceMode,
    pub score: ScoreConfig,
    pub rfm: RfmConfig,
    pub baselines: BaselineConfig,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Where the report goes; not part of the serialized config.
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults everywhere, with every seed set from `seed`.
    pub fn new(source: DataSource, seed: u64) -> Self {
        Self {
            source,
            split: SplitSpec {
                seed,
                ..SplitSpec::default()
            },
            alpha: 0.1,
            lambda: LambdaChoice::Grid,
            mode: ReferenceMode::Reuse,
            score: ScoreConfig {
                seed,
                ..ScoreConfig::default()
            },
            rfm: RfmConfig {
                seed,
                ..RfmConfig::default()
            },
            baselines: BaselineConfig::default(),
            methods: Method::ALL.to_vec(),
            seed,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if let LambdaChoice::Fixed(l) = self.lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(DanceError::invalid(format!("lambda must lie in [0, 1], got {l}")));
            }
        }
        self.score.validate()?;
        self.rfm.validate()?;
        if self.methods.is_empty() {
            return Err(DanceError::invalid("no methods selected"));
        }
        if self.baselines.deep_knn_k == 0 || self.baselines.ncp_neighbors == 0 {
            return Err(DanceError::invalid("baseline neighbor counts must be positive"));
        }
        Ok(())
    }
}

/// The support split and the task adapter trained on it.
#[derive(Debug, Clone)]
pub struct FittedAdapter {
    pub support: EmbeddedDataset,
    pub model: RfmModel,
    pub ridge: f64,
}

impl FittedAdapter {
    pub fn kernel(&self) -> &KernelParams {
        self.model.kernel()
    }
}

/// Tunes and trains the adapter on an inner 80/20 split of `support`.
pub fn fit_adapter(support: EmbeddedDataset, rfm: &RfmConfig, seed: u64) -> Result<FittedAdapter> {
    let parts = split_indices(support.len(), &[0.8, 0.2], derive_seed(seed, SeedTag::AdapterSplit))?;
    let train = support.subset(&parts[0])?;
    let val = support.subset(&parts[1])?;
    let (_, ridge, model) = tune_hyperparameters(&train, &val, rfm)?;
    Ok(FittedAdapter { support, model, ridge })
}

/// Per-method prediction sets for one calibration/test partition.
#[derive(Debug, Clone)]
pub struct PartitionOutcome {
    pub lambda: f64,
    pub sets: Vec<(Method, Vec<PredictionSet>)>,
    /// DANCE's own branch sets at the split budgets `(1-λ)α` and `λα`.
    pub dance_branches: Option<Vec<BranchSets>>,
}

impl PartitionOutcome {
    pub fn sets_for(&self, method: Method) -> Option<&[PredictionSet]> {
        self.sets.iter().find(|(m, _)| *m == method).map(|(_, s)| s.as_slice())
    }
}

pub(crate) struct Pipeline<'a> {
    pub config: &'a ExperimentConfig,
    pub adapter: &'a FittedAdapter,
    /// Prebuilt support index for disjoint mode.
    pub support_index: Option<ProjectedIndex>,
}

fn label_fractions(labels: impl Iterator<Item = usize>, class_count: usize) -> Vec<f64> {
    let mut counts = vec![0usize; class_count];
    let mut k = 0usize;
    for y in labels {
        counts[y] += 1;
        k += 1;
    }
    counts.iter().map(|&n| 1.0 - n as f64 / k as f64).collect()
}

fn threshold_set(scores: &[f64], q: f64) -> PredictionSet {
    if q == f64::INFINITY {
        return PredictionSet::full(scores.len());
    }
    PredictionSet::from_labels((0..scores.len()).filter(|&y| scores[y] <= q).collect())
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a ExperimentConfig, adapter: &'a FittedAdapter) -> Result<Self> {
        let support_index = match config.mode {
            ReferenceMode::Disjoint => Some(build_index(&adapter.support, &adapter.kernel().feature_matrix)?),
            ReferenceMode::Reuse => None,
        };
        Ok(Self {
            config,
            adapter,
            support_index,
        })
    }

    pub fn resolve_lambda(&self, cal: &EmbeddedDataset, index: &ProjectedIndex, cfg: &ScoreConfig) -> Result<f64> {
        match self.config.lambda {
            LambdaChoice::Fixed(l) => Ok(l),
            LambdaChoice::Grid => {
                let reference = match self.config.mode {
                    ReferenceMode::Reuse => LambdaReference::Reuse,
                    ReferenceMode::Disjoint => LambdaReference::Disjoint(index),
                };
                select_lambda(
                    cal,
                    reference,
                    self.adapter.kernel(),
                    self.config.alpha,
                    &DEFAULT_LAMBDA_GRID,
                    cfg,
                    LambdaWeights::default(),
                    derive_seed(self.config.seed, SeedTag::LambdaSplit),
                )
            }
        }
    }

    pub fn reference_index(&self, cal: &EmbeddedDataset) -> Result<std::borrow::Cow<'_, ProjectedIndex>> {
        Ok(match &self.support_index {
            Some(index) => std::borrow::Cow::Borrowed(index),
            None => std::borrow::Cow::Owned(build_index(cal, &self.adapter.kernel().feature_matrix)?),
        })
    }

    pub fn evaluate(
        &self,
        cal: &EmbeddedDataset,
        test: &EmbeddedDataset,
        lambda: Option<f64>,
        cfg: &ScoreConfig,
    ) -> Result<PartitionOutcome> {
        let config = self.config;
        let alpha = config.alpha;
        let reuse = config.mode == ReferenceMode::Reuse;
        let c = cal.class_count();
        let kernel = self.adapter.kernel();
        let index = self.reference_index(cal)?;
        let lambda = match lambda {
            Some(l) => l,
            None => self.resolve_lambda(cal, &index, cfg)?,
        };

        let methods = &config.methods;
        let mut out: Vec<(Method, Vec<PredictionSet>)> = Vec::with_capacity(methods.len());
        let mut dance_branches = None;

        if methods.iter().any(|m| m.uses_neighborhood_scores()) {
            let scorer = NeighborhoodScorer::new(&index, kernel, cfg)?;
            let cal_scores = scorer.score_dataset(cal, reuse)?;
            let test_scores = scorer.score_dataset(test, false)?;
            for &m in methods.iter().filter(|m| m.uses_neighborhood_scores()) {
                let l = match m {
                    Method::Dance => lambda,
                    Method::KnnOnly => 0.0,
                    _ => 1.0,
                };
                let art = calibrate_scored(&cal_scores, cal.labels(), alpha, l, config.mode, cfg)?;
                let sets: Vec<PredictionSet> = match m {
                    Method::Dance => {
                        let branches: Vec<BranchSets> = test_scores
                            .par_iter()
                            .map(|s| BranchSets::from_scores(s, &art))
                            .collect();
                        let sets = branches.iter().map(|b| b.dance.clone()).collect();
                        dance_branches = Some(branches);
                        sets
                    }
                    Method::KnnOnly => test_scores
                        .par_iter()
                        .map(|s: &PointScores| knn_set_from_scores(s, art.q_knn, cfg))
                        .collect(),
                    _ => test_scores
                        .par_iter()
                        .map(|s| clr_set_from_scores(s, art.q_clr))
                        .collect(),
                };
                out.push((m, sets));
            }
        }

        if methods.contains(&Method::DeepKnn) {
            out.push((Method::DeepKnn, self.deep_knn_sets(&index, cal, test, reuse)?));
        }

        let wants_aps = methods.contains(&Method::Aps);
        let wants_raps = methods.contains(&Method::Raps);
        let wants_ncp = methods.contains(&Method::NcpRaps);
        if wants_aps || wants_raps || wants_ncp {
            let b = config.baselines;
            let cal_probs = self.probabilities(cal)?;
            let test_probs = self.probabilities(test)?;
            let all_scores = |probs: &[Vec<f64>], lam: f64, k: usize| -> Result<Vec<Vec<f64>>> {
                probs
                    .par_iter()
                    .map(|p| (0..c).map(|y| score_raps(p, y, lam, k)).collect::<Result<Vec<f64>>>())
                    .collect()
            };
            let true_scores =
                |scores: &[Vec<f64>]| -> Vec<f64> { scores.iter().zip(cal.labels()).map(|(s, &y)| s[y]).collect() };
            if wants_aps {
                let cal_s = all_scores(&cal_probs, 0.0, 0)?;
                let test_s = all_scores(&test_probs, 0.0, 0)?;
                let q = conformal_quantile(&true_scores(&cal_s), alpha)?;
                out.push((Method::Aps, test_s.iter().map(|s| threshold_set(s, q)).collect()));
            }
            if wants_raps || wants_ncp {
                let cal_s = all_scores(&cal_probs, b.raps_lambda, b.raps_k)?;
                let test_s = all_scores(&test_probs, b.raps_lambda, b.raps_k)?;
                let cal_true = true_scores(&cal_s);
                if wants_raps {
                    let q = conformal_quantile(&cal_true, alpha)?;
                    out.push((Method::Raps, test_s.iter().map(|s| threshold_set(s, q)).collect()));
                }
                if wants_ncp {
                    out.push((Method::NcpRaps, self.ncp_sets(cal, test, &cal_true, &test_s)?));
                }
            }
        }

        out.sort_by_key(|(m, _)| *m);
        Ok(PartitionOutcome {
            lambda,
            sets: out,
            dance_branches,
        })
    }

    fn probabilities(&self, data: &EmbeddedDataset) -> Result<Vec<Vec<f64>>> {
        let logits = self.adapter.model.logits(data.embeddings())?;
        Ok(logits.row_iter().map(softmax).collect())
    }

    fn deep_knn_sets(
        &self,
        index: &ProjectedIndex,
        cal: &EmbeddedDataset,
        test: &EmbeddedDataset,
        reuse: bool,
    ) -> Result<Vec<PredictionSet>> {
        let k = self.config.baselines.deep_knn_k;
        let c = cal.class_count();
        let fractions = |data: &EmbeddedDataset, loo: bool| -> Result<Vec<Vec<f64>>> {
            let projected = index.project_all(data)?;
            (0..data.len())
                .into_par_iter()
                .map(|i| {
                    let nn = index.knn_projected(projected.row(i), k, loo.then_some(i))?;
                    Ok(label_fractions(nn.indices.iter().map(|&j| index.labels()[j]), c))
                })
                .collect()
        };
        let cal_f = fractions(cal, reuse)?;
        let cal_true: Vec<f64> = cal_f.iter().zip(cal.labels()).map(|(s, &y)| s[y]).collect();
        let q = conformal_quantile(&cal_true, self.config.alpha)?;
        Ok(fractions(test, false)?.iter().map(|s| threshold_set(s, q)).collect())
    }

    fn ncp_sets(
        &self,
        cal: &EmbeddedDataset,
        test: &EmbeddedDataset,
        cal_true: &[f64],
        test_scores: &[Vec<f64>],
    ) -> Result<Vec<PredictionSet>> {
        let cal_index = build_index(cal, &self.adapter.kernel().feature_matrix)?;
        let projected = cal_index.project_all(test)?;
        let h_rank = self.config.baselines.ncp_neighbors.min(cal.len());
        (0..test.len())
            .into_par_iter()
            .map(|i| {
                let nn = cal_index.knn_projected(projected.row(i), cal.len(), None)?;
                let h = nn.distances[h_rank - 1].max(1e-12);
                let mut weights = vec![0.0; cal.len()];
                for (&j, &d) in nn.indices.iter().zip(&nn.distances) {
                    weights[j] = (-d / h).exp();
                }
                let t = ncp_weighted_quantile(cal_true, &weights, self.config.alpha)?;
                Ok(threshold_set(&test_scores[i], t))
            })
            .collect()
    }
}

/// Everything produced by one full run.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub reports: Vec<MetricsReport>,
    pub partition: PartitionOutcome,
    pub test_labels: Vec<usize>,
    pub adapter: FittedAdapter,
}

pub fn run_experiment_detailed(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let data = config.source.load()?;
    let (support, cal, test) = split_dataset(&data, &config.split)?;
    let adapter = fit_adapter(support, &config.rfm, config.seed)?;
    let pipeline = Pipeline::new(config, &adapter)?;
    let partition = pipeline.evaluate(&cal, &test, None, &config.score)?;
    let accuracy = adapter.model.accuracy(&test)?;
    let reports = partition
        .sets
        .iter()
        .map(|(m, sets)| {
            let lambda = match m {
                Method::Dance => Some(partition.lambda),
                Method::KnnOnly => Some(0.0),
                Method::ClrOnly => Some(1.0),
                _ => None,
            };
            MetricsReport::from_sets(
                m.name(),
                sets,
                test.labels(),
                data.class_count(),
                config.alpha,
                lambda,
                accuracy,
                config.seed,
                config.mode,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    drop(pipeline);
    Ok(ExperimentOutcome {
        reports,
        partition,
        test_labels: test.labels().to_vec(),
        adapter,
    })
}

/// One report per requested method, in method order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<MetricsReport>> {
    Ok(run_experiment_detailed(config)?.reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_fraction_example() {
        // neighbors [A,A,B,C], y = A → 0.5; absent D → 1
        let f = label_fractions([0, 0, 1, 2].into_iter(), 4);
        assert_eq!(f, vec![0.5, 0.75, 0.75, 1.0]);
    }

    #[test]
    fn parse_methods_and_lambda() {
        assert_eq!(
            Method::parse_list("raps, dance,dance").unwrap(),
            vec![Method::Dance, Method::Raps]
        );
        assert_eq!(Method::parse_list("all").unwrap().len(), 7);
        assert!(Method::parse_list("conf_ot").is_err());
        assert_eq!("grid".parse::<LambdaChoice>().unwrap(), LambdaChoice::Grid);
        assert_eq!("0.3".parse::<LambdaChoice>().unwrap(), LambdaChoice::Fixed(0.3));
        assert!("1.2".parse::<LambdaChoice>().is_err());
        let json = serde_json::to_string(&[LambdaChoice::Grid, LambdaChoice::Fixed(0.5)]).unwrap();
        assert_eq!(json, "[\"grid\",0.5]");
    }

    fn small_config(seed: u64) -> ExperimentConfig {
        let spec = SynthSpec {
            classes: 3,
            dim: 4,
            per_class: 60,
            noise_sigma: 0.5,
            informative_dims: 2,
            seed,
        };
        let mut cfg = ExperimentConfig::new(DataSource::Synthetic(spec), seed);
        cfg.rfm.tuning_budget = 3;
        cfg.rfm.iterations = 2;
        cfg.score.m_knn = 20;
        cfg.score.m_clr = 10;
        cfg.baselines.deep_knn_k = 15;
        cfg.baselines.ncp_neighbors = 10;
        cfg
    }

    #[test]
    fn every_method_emits_valid_sets() {
        for mode in [ReferenceMode::Reuse, ReferenceMode::Disjoint] {
            let mut cfg = small_config(4);
            cfg.mode = mode;
            let out = run_experiment_detailed(&cfg).unwrap();
            assert_eq!(out.reports.len(), 7);
            for (_, sets) in &out.partition.sets {
                assert_eq!(sets.len(), out.test_labels.len());
                assert!(sets.iter().all(|s| s.labels().iter().all(|&y| y < 3)));
            }
            let dance = out.partition.sets_for(Method::Dance).unwrap();
            let branches = out.partition.dance_branches.as_ref().unwrap();
            for (d, b) in dance.iter().zip(branches) {
                assert_eq!(d, &b.dance);
                assert!(d.len() <= b.knn.len().min(b.clr.len()));
                assert!(d.is_subset(&b.knn) && d.is_subset(&b.clr));
            }
        }
    }

    #[test]
    fn set_size_shrinks_as_alpha_grows() {
        let mut lo = small_config(9);
        lo.alpha = 0.05;
        lo.lambda = LambdaChoice::Fixed(0.5);
        let mut hi = lo.clone();
        hi.alpha = 0.5;
        let a = run_experiment(&lo).unwrap();
        let b = run_experiment(&hi).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.method, y.method);
            assert!(
                y.mean_set_size <= x.mean_set_size,
                "{}: {} > {}",
                x.method,
                y.mean_set_size,
                x.mean_set_size
            );
        }
    }
}
