//! Metrics, splits, synthetic data and the end-to-end experiment harness.

mod experiment;
mod metrics;
mod monte_carlo;
mod split;
mod synth;

pub use experiment::{
    fit_adapter, run_experiment, run_experiment_detailed, BaselineConfig, DataSource, ExperimentConfig,
    ExperimentOutcome, FittedAdapter, LambdaChoice, Method, PartitionOutcome,
};
pub use metrics::{ccv, coverage, mean_set_size, per_class_coverage, MetricsReport};
pub use monte_carlo::{
    monte_carlo_coverage, monte_carlo_coverage_with, MethodCoverage, MonteCarloOptions, MonteCarloSummary,
};
pub use split::{partition_sizes, shuffled_indices, split_dataset, split_indices, SplitSpec};
pub use synth::{synth_gaussian_mixture, SynthSpec};

#[derive(Debug, Clone, Copy)]
pub(crate) enum SeedTag {
    AdapterSplit,
    LambdaSplit,
    Trial(u64),
}

/// Independent sub-seed for one stage of a seeded run (splitmix64 finalizer).
pub(crate) fn derive_seed(seed: u64, tag: SeedTag) -> u64 {
    let salt = match tag {
        SeedTag::AdapterSplit => 0x0001_0000_0000_0001,
        SeedTag::LambdaSplit => 0x0002_0000_0000_0002,
        SeedTag::Trial(t) => 0x0003_0000_0000_0000 ^ t,
    };
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
