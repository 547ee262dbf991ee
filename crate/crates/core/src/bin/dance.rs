use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dance_core::conformal::{calibrate, select_lambda, LambdaReference, LambdaWeights, DEFAULT_LAMBDA_GRID};
use dance_core::eval::{
    fit_adapter, monte_carlo_coverage_with, run_experiment, synth_gaussian_mixture, DataSource, ExperimentConfig,
    LambdaChoice, Method, MonteCarloOptions, SynthSpec,
};
use dance_core::io::{
    read_artifact, read_dataset, read_model, to_canonical_json, write_artifact, write_dataset, write_model,
    write_report,
};
use dance_core::neighbors::build_index;
use dance_core::{DanceError, DancePredictor, ErrorKind, ReferenceMode, RfmConfig, ScoreConfig, Smoothing};

/// Offset added to row numbers of prediction inputs so their noise keys
/// never collide with calibration rows.
const QUERY_ID_OFFSET: u64 = 1 << 63;

#[derive(Parser)]
#[command(
    name = "dance",
    version,
    about = "Neighborhood conformal prediction sets over embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic Gaussian-mixture dataset
    Synth {
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune and train the kernel adapter on a support set
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        rfm: RfmArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute conformal thresholds on a calibration set
    Calibrate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cal: PathBuf,
        /// Reference set (disjoint mode only)
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        conformal: ConformalArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit one prediction set per input row as JSON lines
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        artifact: PathBuf,
        /// The calibration set in reuse mode, the support set in disjoint mode
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to standard output
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split, fit, calibrate and score every requested method
    Evaluate {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat calibration on fresh calibration/test partitions
    McValidate {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Calibration rows per trial (rest of the pool is test)
        #[arg(long)]
        cal_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Coordinates carrying the class means (defaults to all)
    #[arg(long)]
    informative: Option<usize>,
}

impl SynthArgs {
    fn spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            classes: self.classes,
            dim: self.dim,
            per_class: self.per_class,
            noise_sigma: self.sigma,
            informative_dims: self.informative.unwrap_or(self.dim),
            seed,
        }
    }
}

#[derive(Args, Clone)]
struct RfmArgs {
    #[arg(long, default_value_t = 5)]
    iterations: usize,
    #[arg(long, default_value_t = 25)]
    budget: usize,
}

impl RfmArgs {
    fn config(&self, seed: u64) -> RfmConfig {
        RfmConfig {
            iterations: self.iterations,
            tuning_budget: self.budget,
            seed,
            ..RfmConfig::default()
        }
    }
}

#[derive(Args, Clone)]
struct ConformalArgs {
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// A number in [0, 1] or "grid"
    #[arg(long, default_value = "grid")]
    lambda: String,
    /// reuse | disjoint
    #[arg(long, default_value = "reuse")]
    mode: String,
    #[arg(long, default_value_t = 100)]
    m_knn: usize,
    #[arg(long, default_value_t = 50)]
    m_clr: usize,
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// smoothed | deterministic
    #[arg(long, default_value = "smoothed")]
    smoothing: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

struct Conformal {
    alpha: f64,
    lambda: LambdaChoice,
    mode: ReferenceMode,
    score: ScoreConfig,
    seed: u64,
}

impl ConformalArgs {
    fn parse(&self) -> Result<Conformal, DanceError> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(DanceError::invalid(format!(
                "--alpha must lie in [0, 1), got {}",
                self.alpha
            )));
        }
        let score = ScoreConfig {
            m_knn: self.m_knn,
            m_clr: self.m_clr,
            temperature: self.tau,
            noise_epsilon: self.epsilon,
            smoothing: self.smoothing.parse::<Smoothing>()?,
            seed: self.seed,
        };
        score.validate()?;
        Ok(Conformal {
            alpha: self.alpha,
            lambda: self.lambda.parse()?,
            mode: self.mode.parse()?,
            score,
            seed: self.seed,
        })
    }
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// Dataset file; a synthetic mixture is generated when omitted
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthArgs,
    #[command(flatten)]
    conformal: ConformalArgs,
    #[command(flatten)]
    rfm: RfmArgs,
    /// Comma-separated subset of dance,knn_only,clr_only,deep_knn,aps,raps,ncp_raps, or "all"
    #[arg(long, default_value = "all")]
    methods: String,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig, DanceError> {
        let c = self.conformal.parse()?;
        let source = match &self.data {
            Some(path) => DataSource::File { path: path.clone() },
            None => DataSource::Synthetic(self.synth.spec(c.seed)),
        };
        let mut cfg = ExperimentConfig::new(source, c.seed);
        cfg.alpha = c.alpha;
        cfg.lambda = c.lambda;
        cfg.mode = c.mode;
        cfg.score = c.score;
        cfg.rfm = self.rfm.config(c.seed);
        cfg.methods = Method::parse_list(&self.methods)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    row: usize,
    set: &'a [usize],
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), DanceError> {
    fs::write(path, bytes)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), DanceError> {
    match cli.command {
        Command::Synth { synth, seed, out } => {
            let s = synth.spec(seed);
            let data = synth_gaussian_mixture(s.classes, s.dim, s.per_class, s.noise_sigma, s.informative_dims, seed)?;
            write_dataset(&data, &out)?;
            eprintln!(
                "wrote {} rows ({} dims, {} classes) to {}",
                data.len(),
                data.dim(),
                data.class_count(),
                out.display()
            );
        }
        Command::Fit { data, rfm, seed, out } => {
            let support = read_dataset(&data)?;
            let adapter = fit_adapter(support, &rfm.config(seed), seed)?;
            let m = &adapter.model;
            write_model(m, &out)?;
            eprintln!(
                "bandwidth {:.4} shape {:.4} ridge {:.3e} iteration {} validation accuracy {:.4}",
                m.kernel().bandwidth,
                m.kernel().shape,
                adapter.ridge,
                m.selected_iteration,
                m.validation_accuracy
            );
        }
        Command::Calibrate {
            model,
            cal,
            reference,
            conformal,
            out,
        } => {
            let c = conformal.parse()?;
            let model = read_model(&model)?;
            let kernel = model.kernel().clone();
            let cal = read_dataset(&cal)?;
            let ref_data = match (c.mode, reference) {
                (ReferenceMode::Reuse, None) => None,
                (ReferenceMode::Reuse, Some(_)) => {
                    return Err(DanceError::invalid(
                        "reuse mode uses the calibration set as reference; drop --reference",
                    ))
                }
                (ReferenceMode::Disjoint, Some(p)) => Some(read_dataset(&p)?),
                (ReferenceMode::Disjoint, None) => return Err(DanceError::invalid("disjoint mode needs --reference")),
            };
            let index = build_index(ref_data.as_ref().unwrap_or(&cal), &kernel.feature_matrix)?;
            let lambda = match c.lambda {
                LambdaChoice::Fixed(l) => l,
                LambdaChoice::Grid => {
                    let r = match c.mode {
                        ReferenceMode::Reuse => LambdaReference::Reuse,
                        ReferenceMode::Disjoint => LambdaReference::Disjoint(&index),
                    };
                    select_lambda(
                        &cal,
                        r,
                        &kernel,
                        c.alpha,
                        &DEFAULT_LAMBDA_GRID,
                        &c.score,
                        LambdaWeights::default(),
                        c.seed,
                    )?
                }
            };
            let art = calibrate(&cal, &index, &kernel, c.alpha, lambda, c.mode, &c.score)?;
            write_artifact(&art, &out)?;
            eprintln!("lambda {lambda} q_knn {} q_clr {}", art.q_knn, art.q_clr);
        }
        Command::Predict {
            model,
            artifact,
            reference,
            data,
            out,
        } => {
            let art = read_artifact(&artifact)?;
            let model = read_model(&model)?;
            let reference = read_dataset(&reference)?;
            let queries = read_dataset(&data)?;
            let ids = (0..queries.len() as u64).map(|i| QUERY_ID_OFFSET + i).collect();
            let queries = queries.reassign_ids(ids)?;
            let index = build_index(&reference, &model.kernel().feature_matrix)?;
            let predictor = DancePredictor::new(index, model.kernel().clone(), art)?;
            let sets = predictor.branch_sets_all(&queries)?;
            let mut sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
                None => Box::new(BufWriter::new(io::stdout().lock())),
            };
            for (row, b) in sets.iter().enumerate() {
                let line = PredictionLine {
                    row,
                    set: b.dance.labels(),
                };
                serde_json::to_writer(&mut sink, &line).map_err(|e| DanceError::Format(e.to_string()))?;
                sink.write_all(b"\n")?;
            }
            sink.flush()?;
        }
        Command::Evaluate { exp, out } => {
            let mut cfg = exp.config()?;
            cfg.output = Some(out.clone());
            let reports = run_experiment(&cfg)?;
            write_report(&cfg, &reports, &out)?;
            for r in &reports {
                println!(
                    "{:<9} coverage {:.4}  size {:.3}  ccv {:.3}",
                    r.method, r.coverage, r.mean_set_size, r.ccv
                );
            }
        }
        Command::McValidate {
            exp,
            trials,
            cal_size,
            out,
        } => {
            let mut cfg = exp.config()?;
            cfg.output = Some(out.clone());
            let opts = MonteCarloOptions {
                trials,
                calibration_size: cal_size,
            };
            let summary = monte_carlo_coverage_with(&cfg, &opts)?;
            #[derive(Serialize)]
            struct Doc<'a> {
                config: &'a ExperimentConfig,
                options: &'a MonteCarloOptions,
                summary: &'a dance_core::eval::MonteCarloSummary,
            }
            let bytes = to_canonical_json(&Doc {
                config: &cfg,
                options: &opts,
                summary: &summary,
            })?;
            write_bytes(&out, &bytes)?;
            for m in &summary.methods {
                println!(
                    "{:<9} mean coverage {:.4}  std {:.4}  size {:.3}",
                    m.method, m.mean, m.std, m.mean_set_size
                );
            }
        }
    }
    Ok(())
}

fn configure_threads() -> Result<(), DanceError> {
    let Ok(value) = std::env::var("DANCE_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| DanceError::invalid(format!("DANCE_THREADS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| DanceError::invalid(format!("cannot size the worker pool: {e}")))
}

fn exit_code(e: &DanceError) -> ExitCode {
    match e.kind() {
        ErrorKind::Io => ExitCode::from(2),
        ErrorKind::Validation | ErrorKind::Numerical => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = configure_threads().and_then(|()| run(cli)) {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    ExitCode::SUCCESS
}
