use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use marrr::dataset::{self, MissingMask, MultiCohortDataset};
use marrr::modules_config::IndicatorConfig;
use marrr::preprocess::YTreatment;
use marrr::solver::{Algorithm, SolverOptions};
use marrr::{MarrrError, Result};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "marrr", version, about = "Multiple augmented reduced rank regression for multi-cohort data")]
pub struct Cli {
    /// Settings file (TOML, or the run.json of an earlier run). Flags given
    /// on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the model and write coefficients, factors and a variance table.
    Fit(FitArgs),
    /// Complete missing outcome cells.
    Impute(ImputeArgs),
    /// Generate data and run simulation studies.
    Simulate(SimulateArgs),
    /// Choose module indicators by forward selection or enumeration.
    SelectModules(SelectArgs),
    /// Compute default penalties and check them for degeneracy.
    Penalties(PenaltyArgs),
    /// Time solver epochs on synthetic data.
    Benchmark(BenchmarkArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Impute(_) => "impute",
            Command::Simulate(_) => "simulate",
            Command::SelectModules(_) => "select-modules",
            Command::Penalties(_) => "penalties",
            Command::Benchmark(_) => "benchmark",
        }
    }
}

/// Where the dataset comes from: a directory in the dataset layout, or the
/// three files given separately.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct DataArgs {
    /// Directory holding x.csv, y.csv, cohorts.csv and optionally mask.csv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Outcome matrix (features x samples).
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Covariate matrix (covariates x samples).
    #[arg(long)]
    pub y: Option<PathBuf>,
    /// Sample to cohort map.
    #[arg(long)]
    pub cohorts: Option<PathBuf>,
    /// Extra missing cells (row_index, col_index, 0-based).
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

impl DataArgs {
    pub fn load(&self) -> Result<(MultiCohortDataset, MissingMask)> {
        let (ds, mask) = match (&self.data, &self.x, &self.y, &self.cohorts) {
            (Some(dir), None, None, None) => dataset::load_dataset_dir(dir)?,
            (None, Some(x), Some(y), Some(c)) => dataset::load_dataset(x, y, c)?,
            _ => {
                return Err(MarrrError::Config(
                    "give either --data DIR or all of --x, --y and --cohorts".into(),
                ))
            }
        };
        match &self.mask {
            Some(path) => {
                let extra = MissingMask::read(path, &ds)?;
                let mask = mask.union(&extra, &ds)?;
                Ok((ds, mask))
            }
            None => Ok((ds, mask)),
        }
    }
}

pub fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| MarrrError::Config(format!("missing required setting --{flag}")))
}

pub fn read_modules(path: &Option<PathBuf>, ds: &MultiCohortDataset) -> Result<IndicatorConfig> {
    let path = require(path, "modules")?;
    if !path.is_file() {
        return Err(MarrrError::Config(format!("indicator file {} not found", path.display())));
    }
    let ids: Vec<String> = ds.cohorts().iter().map(|c| c.id.clone()).collect();
    IndicatorConfig::read(path, &ids)
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct SolverArgs {
    /// factored (alternating least squares on factors) or svt (singular
    /// value thresholding; needs orthogonalized covariates).
    #[arg(long)]
    pub algorithm: Option<Algorithm>,
    /// orthogonalize, standardize or none.
    #[arg(long)]
    pub y_transform: Option<YTreatment>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Convergence threshold on the summed squared change per epoch
    /// (default 1e-6 * p * n).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Rank cap of each covariate coefficient matrix.
    #[arg(long)]
    pub rank_b: Option<usize>,
    /// Rank cap of each auxiliary term.
    #[arg(long)]
    pub rank_s: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SolverArgs {
    /// Fills unset values from `base`; the algorithm follows the covariate
    /// transform when not given.
    pub fn resolve(&mut self, base: &SolverOptions) {
        let treatment = *self.y_transform.get_or_insert(YTreatment::Orthogonalize);
        self.algorithm.get_or_insert(if treatment == YTreatment::Orthogonalize {
            Algorithm::SvtAls
        } else {
            Algorithm::FactoredAls
        });
        self.max_epochs.get_or_insert(base.max_epochs);
        self.rank_b.get_or_insert(base.r_b_upper);
        self.rank_s.get_or_insert(base.r_s_upper);
        self.seed.get_or_insert(base.seed);
    }

    pub fn treatment(&self) -> YTreatment {
        self.y_transform.unwrap_or(YTreatment::Orthogonalize)
    }

    pub fn options(&self) -> SolverOptions {
        let base = SolverOptions::default();
        SolverOptions {
            algorithm: self.algorithm.unwrap_or(base.algorithm),
            epsilon: self.epsilon,
            max_epochs: self.max_epochs.unwrap_or(base.max_epochs),
            r_b_upper: self.rank_b.unwrap_or(base.r_b_upper),
            r_s_upper: self.rank_s.unwrap_or(base.r_s_upper),
            seed: self.seed.unwrap_or(base.seed),
            init_scale: base.init_scale,
        }
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Indicator CSV: one row per cohort, columns Y1.. and S1...
    #[arg(long)]
    pub modules: Option<PathBuf>,
    /// Penalty CSV (term, module, lambda); default is the random-matrix rule.
    #[arg(long)]
    pub penalties: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    /// Fail when the penalties allow degenerate solutions.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct ImputeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub modules: Option<PathBuf>,
    #[arg(long)]
    pub penalties: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    /// Maximum number of fill-and-refit passes.
    #[arg(long)]
    pub outer_max: Option<usize>,
    /// Stop when the imputed values move less than this, relative to the
    /// norm of the observed cells.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Complete outcome matrix; reports the relative squared error on the
    /// missing cells by missingness kind.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Preset study: table1a, table1b, table2 or orthogonality.
    #[arg(long)]
    pub reproduce: Option<String>,
    /// arrr_single, mrrr_two_cohort, global_individual or orthogonality_study.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Imputation scenario: large_B, large_S, large_Bi or large_Si.
    #[arg(long)]
    pub which: Option<String>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replicates run in parallel.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// desk or full dimensions for the imputation study.
    #[arg(long)]
    pub scale: Option<String>,
    #[arg(long)]
    pub y_transform: Option<YTreatment>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Samples per cohort.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of cohorts.
    #[arg(long)]
    pub num_cohorts: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// Signal multipliers, comma separated (two for the single- and
    /// two-cohort scenarios, four for global_individual).
    #[arg(long, value_delimiter = ',')]
    pub sds: Vec<f64>,
    /// Fraction of cells removed per missingness kind.
    #[arg(long)]
    pub missing_fraction: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct SelectArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// forward or enumerate.
    #[arg(long)]
    pub method: Option<String>,
    /// Largest number of modules.
    #[arg(long)]
    pub max_modules: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct PenaltyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub modules: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub y_transform: Option<YTreatment>,
    /// Fail when the penalties allow degenerate solutions.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// toy, desk or full.
    #[arg(long)]
    pub scale: Option<String>,
    #[arg(long)]
    pub rank_cap: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// factored, svt or both.
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn out_dir(out: &Option<PathBuf>) -> Result<&Path> {
    let dir = require(out, "out")?;
    marrr::io::create_dir(dir)?;
    Ok(dir)
}
