//! Replicated simulation studies producing tidy metric rows.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::{
    generate, make_missing, rank_sum_ratio, relative_mse, replicate_seed, two_stage_ls_arrr, two_stage_ls_mrrr,
    two_stage_nn_arrr, two_stage_nn_mrrr, MissingKind, SignalSds, SimulatedTruth, SimulationSpec,
};
use crate::dataset::MissingMask;
use crate::error::{MarrrError, Result};
use crate::impute::{self, ImputeOptions};
use crate::io;
use crate::modules_config::{rmt_penalties_for, IndicatorConfig};
use crate::preprocess::{self, PreprocessInfo, YTreatment};
use crate::solver::{self, Algorithm, FitResult, ModelData, SolverOptions};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub scenario: String,
    pub condition: String,
    pub replicate: usize,
    pub seed: u64,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub condition: String,
    pub method: String,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub replicates: usize,
    pub seed: u64,
    /// Worker threads for replicates; 1 runs sequentially.
    pub jobs: usize,
    /// Covariate transform for the proposed method's fits.
    pub treatment: YTreatment,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            replicates: 25,
            seed: 1,
            jobs: 1,
            treatment: YTreatment::Orthogonalize,
        }
    }
}

/// Runs `job(index, seed)` for every task index, in parallel when
/// `jobs > 1`, keeping rows in task order.
fn run_tasks<F>(opts: &StudyOptions, tasks: usize, job: F) -> Result<Vec<MetricRow>>
where
    F: Fn(usize, u64) -> Result<Vec<MetricRow>> + Sync,
{
    let seeds: Vec<u64> = (0..tasks).map(|t| replicate_seed(opts.seed, t as u64)).collect();
    let chunks: Vec<Vec<MetricRow>> = if opts.jobs <= 1 {
        seeds.iter().enumerate().map(|(t, &s)| job(t, s)).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| MarrrError::Config(format!("cannot start worker threads: {e}")))?;
        pool.install(|| seeds.par_iter().enumerate().map(|(t, &s)| job(t, s)).collect::<Result<_>>())?
    };
    Ok(chunks.into_iter().flatten().collect())
}

struct RowSink<'a> {
    scenario: &'a str,
    condition: String,
    replicate: usize,
    seed: u64,
    rows: Vec<MetricRow>,
}

impl RowSink<'_> {
    fn push(&mut self, method: &str, metric: &str, value: f64) {
        self.rows.push(MetricRow {
            scenario: self.scenario.to_string(),
            condition: self.condition.clone(),
            replicate: self.replicate,
            seed: self.seed,
            method: method.to_string(),
            metric: metric.to_string(),
            value,
        });
    }
}

/// Penalized fit of simulated data; outcomes are centered only when the
/// covariates are.
struct SimFit {
    data: ModelData,
    info: PreprocessInfo,
    fit: FitResult,
}

impl SimFit {
    fn run(truth: &SimulatedTruth, cfg: &IndicatorConfig, treatment: YTreatment, opts: &SolverOptions) -> Result<Self> {
        let ds = &truth.dataset;
        // Centered covariates need centered outcomes, or the offset B mean(Y)
        // would be absorbed by the auxiliary terms.
        let center = treatment == YTreatment::Standardize;
        let (data, info) = preprocess::prepare_with(ds, &MissingMask::empty(), cfg, treatment, center)?;
        let pen = rmt_penalties_for(ds.p(), ds.q(), &ds.cohort_sizes(), cfg)?;
        let fit = solver::fit(&data, &pen, opts, None)?;
        Ok(SimFit { data, info, fit })
    }

    /// Covariate coefficients on the original outcome and covariate scale.
    fn b(&self, k: usize) -> DMatrix<f64> {
        preprocess::backmap_b(&self.fit.b(k), &self.info.y_transforms[k]) * self.info.sigma_hat
    }

    fn s(&self, l: usize) -> DMatrix<f64> {
        self.fit.s_full(l, &self.data) * self.info.sigma_hat
    }
}

fn solver_for(treatment: YTreatment, rank_upper: usize, seed: u64) -> SolverOptions {
    SolverOptions {
        algorithm: if treatment == YTreatment::Orthogonalize {
            Algorithm::SvtAls
        } else {
            Algorithm::FactoredAls
        },
        r_b_upper: rank_upper,
        r_s_upper: rank_upper,
        seed,
        ..SolverOptions::default()
    }
}

/// Signal conditions of the single-cohort study: (label, sd(BY), sd(S)).
pub const TABLE1A_SDS: [(&str, f64, f64); 3] = [("10", 5.0, 0.5), ("1", 1.0, 1.0), ("0.1", 0.5, 5.0)];
/// Two-cohort conditions: (label, a, b) for shared and individual coefficients.
pub const TABLE1B_SDS: [(&str, f64, f64); 3] = [("10", 2.0, 0.2), ("1", 1.0, 1.0), ("0.1", 0.2, 2.0)];
pub const TABLE1_RANKS: [usize; 2] = [1, 5];
const TABLE1_RANK_UPPER: usize = 10;

fn table1_conditions(sds: &[(&'static str, f64, f64); 3]) -> Vec<(String, usize, f64, f64)> {
    let mut out = Vec::new();
    for &ry in &TABLE1_RANKS {
        for &(label, a, b) in sds {
            out.push((format!("ratio={label},ry={ry}"), ry, a, b));
        }
    }
    out
}

/// One cohort, `X = BY + S + E` (100 x 100, q = 10): the augmented fit
/// against two-stage least squares and two-stage nuclear-norm baselines.
/// Metrics `mse_b` and `mse_s` per method.
pub fn table1a(opts: &StudyOptions) -> Result<Vec<MetricRow>> {
    let conds = table1_conditions(&TABLE1A_SDS);
    let reps = opts.replicates;
    run_tasks(opts, conds.len() * reps, |task, seed| {
        let (label, ry, sd_by, sd_s) = &conds[task / reps];
        let spec = SimulationSpec::arrr_single(100, 100, 10, *ry, *sd_by, *sd_s, seed);
        let truth = generate(&spec)?;
        let mut sink = RowSink {
            scenario: "table1a",
            condition: label.clone(),
            replicate: task % reps,
            seed,
            rows: Vec::new(),
        };
        let sf = SimFit::run(&truth, &truth.cfg, opts.treatment, &solver_for(opts.treatment, TABLE1_RANK_UPPER, seed))?;
        sink.push("arrr", "mse_b", relative_mse(&truth.true_b[0], &sf.b(0))?);
        sink.push("arrr", "mse_s", relative_mse(&truth.true_s[0], &sf.s(0))?);
        sink.push("arrr", "epochs", sf.fit.epochs as f64);

        let (x, y, _) = truth.dataset.concatenated_view();
        for (name, base) in [
            ("two_stage_ls", two_stage_ls_arrr(x, y, spec.rank_s)?),
            ("two_stage_nn", two_stage_nn_arrr(x, y)?),
        ] {
            sink.push(name, "mse_b", relative_mse(&truth.true_b[0], &base.b[0])?);
            let s = base.s.expect("augmented baselines estimate S");
            sink.push(name, "mse_s", relative_mse(&truth.true_s[0], &s)?);
        }
        Ok(sink.rows)
    })
}

/// Two cohorts of 100, `X_j = (B + B_j) Y_j + E_j`: the multi-cohort
/// regression against both two-stage baselines. `mse_b` is the shared
/// coefficient's error, `mse_bi` the mean over cohort-specific ones.
pub fn table1b(opts: &StudyOptions) -> Result<Vec<MetricRow>> {
    let conds = table1_conditions(&TABLE1B_SDS);
    let reps = opts.replicates;
    run_tasks(opts, conds.len() * reps, |task, seed| {
        let (label, ry, a, b) = &conds[task / reps];
        let spec = SimulationSpec::mrrr_two_cohort(100, 100, 10, *ry, *a, *b, seed);
        let truth = generate(&spec)?;
        let mut sink = RowSink {
            scenario: "table1b",
            condition: label.clone(),
            replicate: task % reps,
            seed,
            rows: Vec::new(),
        };
        let mean_individual = |est: &dyn Fn(usize) -> DMatrix<f64>| -> Result<f64> {
            let j = truth.true_b.len() - 1;
            let mut total = 0.0;
            for k in 1..=j {
                total += relative_mse(&truth.true_b[k], &est(k))?;
            }
            Ok(total / j as f64)
        };
        let sf = SimFit::run(&truth, &truth.cfg, opts.treatment, &solver_for(opts.treatment, TABLE1_RANK_UPPER, seed))?;
        sink.push("mrrr", "mse_b", relative_mse(&truth.true_b[0], &sf.b(0))?);
        sink.push("mrrr", "mse_bi", mean_individual(&|k| sf.b(k))?);
        sink.push("mrrr", "epochs", sf.fit.epochs as f64);
        for (name, base) in [
            ("two_stage_ls", two_stage_ls_mrrr(&truth.dataset)?),
            ("two_stage_nn", two_stage_nn_mrrr(&truth.dataset)?),
        ] {
            sink.push(name, "mse_b", relative_mse(&truth.true_b[0], &base.b[0])?);
            sink.push(name, "mse_bi", mean_individual(&|k| base.b[k].clone())?);
        }
        Ok(sink.rows)
    })
}

/// Replicates of `template` with per-replicate seeds, each fitted with the
/// generating module layout. Metrics `mse_b{k}` and `mse_s{l}` (1-based),
/// plus `epochs`.
pub fn scenario_study(opts: &StudyOptions, template: &SimulationSpec, solver: &SolverOptions) -> Result<Vec<MetricRow>> {
    template.validate()?;
    let scenario = template.scenario.to_string();
    run_tasks(opts, opts.replicates, |task, seed| {
        let spec = SimulationSpec {
            seed,
            ..template.clone()
        };
        let truth = generate(&spec)?;
        let mut sink = RowSink {
            scenario: &scenario,
            condition: String::new(),
            replicate: task,
            seed,
            rows: Vec::new(),
        };
        let sopts = SolverOptions {
            seed,
            ..solver.clone()
        };
        let sf = SimFit::run(&truth, &truth.cfg, opts.treatment, &sopts)?;
        for (k, b) in truth.true_b.iter().enumerate() {
            sink.push("marrr", &format!("mse_b{}", k + 1), relative_mse(b, &sf.b(k))?);
        }
        for (l, s) in truth.true_s.iter().enumerate() {
            sink.push("marrr", &format!("mse_s{}", l + 1), relative_mse(s, &sf.s(l))?);
        }
        sink.push("marrr", "epochs", sf.fit.epochs as f64);
        Ok(sink.rows)
    })
}

/// Large-signal scenarios of the imputation study: one term scaled up by
/// `sqrt(10)`, the rest at unit sd.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table2Scenario {
    LargeB,
    LargeS,
    LargeBi,
    LargeSi,
}

impl Table2Scenario {
    pub const ALL: [Table2Scenario; 4] = [
        Table2Scenario::LargeB,
        Table2Scenario::LargeS,
        Table2Scenario::LargeBi,
        Table2Scenario::LargeSi,
    ];

    pub fn signal_sds(self) -> SignalSds {
        let big = 10f64.sqrt();
        match self {
            Table2Scenario::LargeB => SignalSds::new(big, 1.0, 1.0, 1.0),
            Table2Scenario::LargeS => SignalSds::new(1.0, big, 1.0, 1.0),
            Table2Scenario::LargeBi => SignalSds::new(1.0, 1.0, big, 1.0),
            Table2Scenario::LargeSi => SignalSds::new(1.0, 1.0, 1.0, big),
        }
    }
}

impl fmt::Display for Table2Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Table2Scenario::LargeB => "large_B",
            Table2Scenario::LargeS => "large_S",
            Table2Scenario::LargeBi => "large_Bi",
            Table2Scenario::LargeSi => "large_Si",
        })
    }
}

impl FromStr for Table2Scenario {
    type Err = MarrrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "large_b" => Ok(Table2Scenario::LargeB),
            "large_s" => Ok(Table2Scenario::LargeS),
            "large_bi" => Ok(Table2Scenario::LargeBi),
            "large_si" => Ok(Table2Scenario::LargeSi),
            other => Err(MarrrError::Config(format!(
                "unknown scenario {other:?}; expected large_B, large_S, large_Bi or large_Si"
            ))),
        }
    }
}

/// Dimensions of the imputation study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table2Scale {
    pub p: usize,
    pub cohorts: usize,
    pub n_per_cohort: usize,
    pub q: usize,
    pub rank: usize,
    pub missing_fraction: f64,
}

impl Table2Scale {
    pub fn desk() -> Self {
        Table2Scale {
            p: 100,
            cohorts: 5,
            n_per_cohort: 60,
            q: 10,
            rank: 2,
            missing_fraction: 0.05,
        }
    }

    pub fn full() -> Self {
        Table2Scale {
            p: 1000,
            cohorts: 30,
            n_per_cohort: 219,
            q: 10,
            rank: 2,
            missing_fraction: 0.05,
        }
    }
}

/// Methods compared in the imputation study, by module layout.
pub const TABLE2_METHODS: [&str; 4] = ["marrr", "bidifac", "mrrr", "nn_approx"];

fn table2_config(method: &str, j: usize) -> Result<IndicatorConfig> {
    let gi = IndicatorConfig::global_individual(j);
    match method {
        "marrr" => Ok(gi),
        "bidifac" => gi.with_c_y(Vec::new()),
        "mrrr" => gi.with_c_s(Vec::new()),
        "nn_approx" => IndicatorConfig::new(j, Vec::new(), vec![vec![true; j]]),
        other => Err(MarrrError::Config(format!("unknown imputation method {other:?}"))),
    }
}

/// Imputation under entry, row and column missingness for every method;
/// one `rse` row per (method, kind) plus `outer_iterations`. Methods are
/// labelled `method:kind`; `method:mixed` is the mean over the three kinds.
pub fn table2(opts: &StudyOptions, scale: &Table2Scale, scenarios: &[Table2Scenario]) -> Result<Vec<MetricRow>> {
    let reps = opts.replicates;
    run_tasks(opts, scenarios.len() * reps, |task, seed| {
        let scenario = scenarios[task / reps];
        let spec = SimulationSpec::global_individual(
            scale.p,
            vec![scale.n_per_cohort; scale.cohorts],
            scale.q,
            scale.rank,
            scenario.signal_sds(),
            seed,
        );
        let truth = generate(&spec)?;
        let ds = &truth.dataset;
        let mut sink = RowSink {
            scenario: "table2",
            condition: scenario.to_string(),
            replicate: task % reps,
            seed,
            rows: Vec::new(),
        };
        let mut per_method = vec![0.0; TABLE2_METHODS.len()];
        for (ki, kind) in MissingKind::ALL.into_iter().enumerate() {
            let mask = make_missing(ds, scale.missing_fraction, kind, seed.wrapping_add(ki as u64 + 1))?;
            let x_masked = mask_out(ds.x(), &mask);
            let observed = ds.with_x(x_masked)?;
            for (mi, method) in TABLE2_METHODS.into_iter().enumerate() {
                let cfg = table2_config(method, scale.cohorts)?;
                let sopts = impute::imputation_solver_options(&solver_for(opts.treatment, 20, seed));
                let res = impute::impute_with(
                    &observed,
                    &mask,
                    &cfg,
                    None,
                    &sopts,
                    &ImputeOptions::default(),
                    opts.treatment,
                    false,
                )?;
                let name = format!("{method}:{kind}");
                let rse = impute::rse(ds.x(), &res.x_completed_original, &mask)?;
                per_method[mi] += rse / MissingKind::ALL.len() as f64;
                sink.push(&name, "rse", rse);
                sink.push(&name, "outer_iterations", res.outer_iterations as f64);
            }
        }
        for (method, mixed) in TABLE2_METHODS.into_iter().zip(per_method) {
            sink.push(&format!("{method}:mixed"), "rse", mixed);
        }
        Ok(sink.rows)
    })
}

/// Zeroes masked cells so no held-out value can leak into a fit.
fn mask_out(x: &DMatrix<f64>, mask: &MissingMask) -> DMatrix<f64> {
    let mut out = x.clone();
    for &(i, j) in mask.entries() {
        out[(i, j)] = 0.0;
    }
    out
}

/// Variants of the covariate-orthogonalization study: how covariates were
/// generated and how they are transformed before fitting.
pub const ORTHOGONALITY_VARIANTS: [(&str, bool, YTreatment); 3] = [
    ("no_orth", false, YTreatment::Standardize),
    ("orth_opt", false, YTreatment::Orthogonalize),
    ("orth_gen", true, YTreatment::Standardize),
];

/// Threshold on singular values when counting estimated ranks.
pub const RANK_THRESHOLD: f64 = 0.1;

/// Single-cohort augmented fits with standardized covariates, orthogonalized
/// covariates, and covariates generated orthogonal. All variants use the
/// factored solver with rank bound 10. Metrics `mse_b`, `mse_s`,
/// `est_rank_b` and `ratio_b` (tail/head singular-value sums of `B`).
pub fn orthogonality_study(opts: &StudyOptions) -> Result<Vec<MetricRow>> {
    let conds = table1_conditions(&TABLE1A_SDS);
    let reps = opts.replicates;
    run_tasks(opts, conds.len() * reps, |task, seed| {
        let (label, ry, sd_by, sd_s) = &conds[task / reps];
        let mut sink = RowSink {
            scenario: "orthogonality",
            condition: label.clone(),
            replicate: task % reps,
            seed,
            rows: Vec::new(),
        };
        for (name, orth_gen, treatment) in ORTHOGONALITY_VARIANTS {
            let mut spec = SimulationSpec::arrr_single(100, 100, 10, *ry, *sd_by, *sd_s, seed);
            spec.scenario = super::Scenario::OrthogonalityStudy;
            spec.orthogonalize_y_in_generation = orth_gen;
            let truth = generate(&spec)?;
            let sopts = SolverOptions {
                algorithm: Algorithm::FactoredAls,
                ..solver_for(treatment, TABLE1_RANK_UPPER, seed)
            };
            let sf = SimFit::run(&truth, &truth.cfg, treatment, &sopts)?;
            let b = sf.b(0);
            sink.push(name, "mse_b", relative_mse(&truth.true_b[0], &b)?);
            sink.push(name, "mse_s", relative_mse(&truth.true_s[0], &sf.s(0))?);
            let sv = crate::linalg::singular_values(&b)?;
            sink.push(name, "est_rank_b", sv.iter().filter(|&&s| s > RANK_THRESHOLD).count() as f64);
            sink.push(name, "ratio_b", rank_sum_ratio(&b, *ry, TABLE1_RANK_UPPER)?);
            sink.push(name, "epochs", sf.fit.epochs as f64);
        }
        Ok(sink.rows)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub algorithm: String,
    pub p: usize,
    pub n: usize,
    pub q: usize,
    pub modules_b: usize,
    pub modules_s: usize,
    pub rank_cap: usize,
    pub epochs: usize,
    pub seconds: f64,
    pub seconds_per_epoch: f64,
}

/// Wall time per epoch of each algorithm on global-plus-individual data at
/// the given scale. Convergence checks are disabled so every run performs
/// exactly `epochs` epochs.
pub fn benchmark(
    scale: &Table2Scale,
    rank_cap: usize,
    epochs: usize,
    algorithms: &[Algorithm],
    seed: u64,
) -> Result<Vec<BenchmarkRow>> {
    if epochs == 0 {
        return Err(MarrrError::Config("benchmark needs at least one epoch".into()));
    }
    let spec = SimulationSpec::global_individual(
        scale.p,
        vec![scale.n_per_cohort; scale.cohorts],
        scale.q,
        scale.rank,
        SignalSds::new(1.0, 1.0, 1.0, 1.0),
        seed,
    );
    let truth = generate(&spec)?;
    let ds = &truth.dataset;
    let (data, _) = preprocess::prepare(ds, &MissingMask::empty(), &truth.cfg, YTreatment::Orthogonalize)?;
    let pen = rmt_penalties_for(ds.p(), ds.q(), &ds.cohort_sizes(), &truth.cfg)?;
    let mut rows = Vec::new();
    for &algorithm in algorithms {
        let opts = SolverOptions {
            algorithm,
            epsilon: Some(f64::MIN_POSITIVE),
            max_epochs: epochs,
            r_b_upper: rank_cap,
            r_s_upper: rank_cap,
            seed,
            ..SolverOptions::default()
        };
        let start = Instant::now();
        let fit = solver::fit(&data, &pen, &opts, None)?;
        let seconds = start.elapsed().as_secs_f64();
        rows.push(BenchmarkRow {
            algorithm: algorithm.to_string(),
            p: ds.p(),
            n: ds.n(),
            q: ds.q(),
            modules_b: truth.cfg.k(),
            modules_s: truth.cfg.l(),
            rank_cap,
            epochs: fit.epochs,
            seconds,
            seconds_per_epoch: seconds / fit.epochs as f64,
        });
    }
    Ok(rows)
}

/// Mean and sample sd of every (scenario, condition, method, metric) group,
/// in order of first appearance.
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(&str, &str, &str, &str)> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let key = (r.scenario.as_str(), r.condition.as_str(), r.method.as_str(), r.metric.as_str());
        match keys.iter().position(|k| *k == key) {
            Some(i) => values[i].push(r.value),
            None => {
                keys.push(key);
                values.push(vec![r.value]);
            }
        }
    }
    keys.into_iter()
        .zip(values)
        .map(|((scenario, condition, method, metric), v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let sd = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                scenario: scenario.to_string(),
                condition: condition.to_string(),
                method: method.to_string(),
                metric: metric.to_string(),
                mean,
                sd,
                count: v.len(),
            }
        })
        .collect()
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    io::write_serialized(path, rows)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    io::write_serialized(path, rows)
}
