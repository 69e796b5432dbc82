//! Command-line pipeline: validate inputs, estimate agent tastes, fit
//! benchmarks, score predictions, derive elasticities and welfare measures,
//! and pick fare-discount regions.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use glamlogit::benchmarks::ModelKind;

pub use config::RunConfig;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_ESTIMATION: i32 = 3;
pub const EXIT_OPTIMIZATION: i32 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: EXIT_VALIDATION, message: message.into() }
    }

    /// Input errors map to the validation code, everything else to `code`.
    pub fn from_core(e: glamlogit::Error, code: i32) -> Self {
        let code = if e.is_validation() { EXIT_VALIDATION } else { code };
        Self { code, message: e.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Parser)]
#[command(name = "glamlogit", version, about = "Agent-specific mixed logit from market shares")]
pub struct Cli {
    /// JSON run config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $GLAMLOGIT_OUTPUT_DIR, then ./glamlogit_out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for per-agent stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and check a dataset against its spec.
    Validate(InputArgs),
    /// Estimate per-agent tastes and cluster priors.
    Estimate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        est: EstimateArgs,
    },
    /// Fit an MNL, NL or IPDL benchmark by inverted-share regression.
    Benchmark {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Accuracy of GLAM and benchmarks in and out of sample.
    Evaluate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        result: ResultArgs,
        #[arg(long)]
        test_data: Option<PathBuf>,
        /// Fitted benchmark JSON; repeatable.
        #[arg(long = "benchmark")]
        benchmarks: Vec<PathBuf>,
        /// Largest K of the KNN sweep.
        #[arg(long)]
        knn_k: Option<usize>,
    },
    /// Elasticities, diversion ratios, value of time and compensating variation.
    Analyze {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        result: ResultArgs,
        #[arg(long)]
        perturbation: Option<f64>,
        #[arg(long)]
        price_column: Option<String>,
        /// Time column per alternative, comma separated.
        #[arg(long, value_delimiter = ',')]
        time_columns: Option<Vec<String>>,
        #[arg(long)]
        time_param: Option<String>,
        #[arg(long)]
        cost_param: Option<String>,
        /// Alternative removed for the compensating variation.
        #[arg(long)]
        removed_alternative: Option<String>,
    },
    /// Choose fare-discount regions maximising transit ridership.
    Optimize {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        result: ResultArgs,
        #[arg(long)]
        transit_alternative: Option<String>,
        #[arg(long)]
        fare_column: Option<String>,
        /// Maximum number of discounted regions.
        #[arg(long = "max-regions", short = 'O')]
        max_regions: Option<usize>,
        /// Revenue-loss budget per day; `inf` for none.
        #[arg(long, short = 'B')]
        budget: Option<f64>,
        #[arg(long)]
        discount_rate: Option<f64>,
        #[arg(long)]
        demand_weighted_loss: bool,
        /// Use the greedy solver regardless of instance size.
        #[arg(long)]
        heuristic: bool,
    },
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ResultArgs {
    /// Estimation result JSON written by `estimate`.
    #[arg(long)]
    pub result: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    /// Number of taste clusters.
    #[arg(long = "clusters", short = 'M')]
    pub m: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub convergence_threshold: Option<f64>,
    #[arg(long)]
    pub kmeans_restarts: Option<usize>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
}

impl Cli {
    /// The flag values as a config, unset flags left empty.
    fn flags(&self) -> RunConfig {
        let mut c = RunConfig { output_dir: self.out.clone(), threads: self.threads, ..Default::default() };
        let input = |c: &mut RunConfig, i: &InputArgs| {
            c.data = i.data.clone();
            c.spec = i.spec.clone();
        };
        match &self.command {
            Command::Validate(i) => input(&mut c, i),
            Command::Estimate { input: i, est } => {
                input(&mut c, i);
                c.m = est.m;
                c.tol = est.tol;
                c.seed = est.seed;
                c.max_iterations = est.max_iterations;
                c.convergence_threshold = est.convergence_threshold;
                c.kmeans_restarts = est.kmeans_restarts;
                c.bootstrap_resamples = est.bootstrap;
            }
            Command::Benchmark { input: i, model } => {
                input(&mut c, i);
                c.model = *model;
            }
            Command::Evaluate { input: i, result, test_data, benchmarks, knn_k } => {
                input(&mut c, i);
                c.result = result.result.clone();
                c.test_data = test_data.clone();
                c.benchmarks = (!benchmarks.is_empty()).then(|| benchmarks.clone());
                c.knn_k = *knn_k;
            }
            Command::Analyze {
                input: i,
                result,
                perturbation,
                price_column,
                time_columns,
                time_param,
                cost_param,
                removed_alternative,
            } => {
                input(&mut c, i);
                c.result = result.result.clone();
                c.perturbation = *perturbation;
                c.price_column = price_column.clone();
                c.time_columns = time_columns.clone();
                c.time_param = time_param.clone();
                c.cost_param = cost_param.clone();
                c.removed_alternative = removed_alternative.clone();
            }
            Command::Optimize {
                input: i,
                result,
                transit_alternative,
                fare_column,
                max_regions,
                budget,
                discount_rate,
                demand_weighted_loss,
                heuristic,
            } => {
                input(&mut c, i);
                c.result = result.result.clone();
                c.transit_alternative = transit_alternative.clone();
                c.fare_column = fare_column.clone();
                c.max_regions = *max_regions;
                c.budget = *budget;
                c.discount_rate = *discount_rate;
                c.demand_weighted_loss = demand_weighted_loss.then_some(true);
                c.heuristic = heuristic.then_some(true);
            }
        }
        c
    }

    /// Config file values overlaid with flags.
    pub fn settings(&self) -> Result<RunConfig, CliError> {
        let base = match &self.config {
            Some(p) => RunConfig::from_json_file(p)?,
            None => RunConfig::default(),
        };
        let cfg = self.flags().overlay(base);
        cfg.check_ranges()?;
        Ok(cfg)
    }
}

/// Runs the parsed command on a pool of the configured size and returns the
/// summary printed on success.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = cli.settings()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError { code: 1, message: format!("thread pool: {e}") })?;
    pool.install(|| match &cli.command {
        Command::Validate(_) => commands::validate(&cfg),
        Command::Estimate { .. } => commands::estimate(&cfg),
        Command::Benchmark { .. } => commands::benchmark(&cfg),
        Command::Evaluate { .. } => commands::evaluate(&cfg),
        Command::Analyze { .. } => commands::analyze(&cfg),
        Command::Optimize { .. } => commands::optimize(&cfg),
    })
}
