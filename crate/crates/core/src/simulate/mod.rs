//! Synthetic multi-cohort data, missingness patterns and evaluation metrics
//! for the reproduction studies.

mod baselines;
mod studies;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{save_dataset, MaskKind, MissingMask, MultiCohortDataset};
use crate::error::{MarrrError, Result};
use crate::{io, linalg};
use crate::modules_config::IndicatorConfig;

pub use baselines::{two_stage_ls_arrr, two_stage_ls_mrrr, two_stage_nn_arrr, two_stage_nn_mrrr, TwoStage};
pub use studies::{
    benchmark, orthogonality_study, scenario_study, summarize, table1a, table1b, table2, write_metrics, write_summary, BenchmarkRow,
    MetricRow, StudyOptions, SummaryRow, Table2Scale, Table2Scenario, ORTHOGONALITY_VARIANTS, RANK_THRESHOLD,
    TABLE1A_SDS, TABLE1B_SDS, TABLE1_RANKS, TABLE2_METHODS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// `X = BY + S + E` on one cohort; `a` = sd(BY), `b` = sd(S).
    ArrrSingle,
    /// `X_j = (B + B_j) Y_j + E_j`, two or more cohorts; `a`, `b` multiply
    /// unit-entry factor products.
    MrrrTwoCohort,
    /// One global and J individual modules for both B and S, each term
    /// scaled to unit sd on its active columns, then multiplied by
    /// `a` (global B), `b` (global S), `c` (individual B), `d` (individual S).
    GlobalIndividual,
    /// Same layout as `ArrrSingle`; used with and without orthogonal covariates.
    OrthogonalityStudy,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::ArrrSingle => "arrr_single",
            Scenario::MrrrTwoCohort => "mrrr_two_cohort",
            Scenario::GlobalIndividual => "global_individual",
            Scenario::OrthogonalityStudy => "orthogonality_study",
        })
    }
}

impl FromStr for Scenario {
    type Err = MarrrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "arrr_single" | "arrr" => Ok(Scenario::ArrrSingle),
            "mrrr_two_cohort" | "mrrr" => Ok(Scenario::MrrrTwoCohort),
            "global_individual" => Ok(Scenario::GlobalIndividual),
            "orthogonality_study" | "orthogonality" => Ok(Scenario::OrthogonalityStudy),
            other => Err(MarrrError::Config(format!(
                "unknown scenario {other:?}; expected arrr_single, mrrr_two_cohort, global_individual or orthogonality_study"
            ))),
        }
    }
}

/// Signal sizes; their meaning depends on the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSds {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl SignalSds {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        SignalSds { a, b, c, d }
    }

    pub fn pair(a: f64, b: f64) -> Self {
        SignalSds { a, b, c: 0.0, d: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub p: usize,
    pub q: usize,
    pub cohort_sizes: Vec<usize>,
    pub scenario: Scenario,
    pub signal_sds: SignalSds,
    /// Rank of each covariate coefficient matrix.
    pub rank_y: usize,
    /// Rank of each auxiliary term.
    pub rank_s: usize,
    /// Replace each cohort's covariates by its right singular vectors
    /// divided by the original sample sd.
    pub orthogonalize_y_in_generation: bool,
    pub seed: u64,
}

impl SimulationSpec {
    /// One cohort, `X = BY + S + E` with `sd(BY) = sd_by`, `sd(S) = sd_s`, rank-5 S.
    pub fn arrr_single(p: usize, n: usize, q: usize, rank_y: usize, sd_by: f64, sd_s: f64, seed: u64) -> Self {
        SimulationSpec {
            p,
            q,
            cohort_sizes: vec![n],
            scenario: Scenario::ArrrSingle,
            signal_sds: SignalSds::pair(sd_by, sd_s),
            rank_y,
            rank_s: 5,
            orthogonalize_y_in_generation: false,
            seed,
        }
    }

    pub fn mrrr_two_cohort(p: usize, n_j: usize, q: usize, rank_y: usize, a: f64, b: f64, seed: u64) -> Self {
        SimulationSpec {
            p,
            q,
            cohort_sizes: vec![n_j, n_j],
            scenario: Scenario::MrrrTwoCohort,
            signal_sds: SignalSds::pair(a, b),
            rank_y,
            rank_s: 0,
            orthogonalize_y_in_generation: false,
            seed,
        }
    }

    pub fn global_individual(p: usize, cohort_sizes: Vec<usize>, q: usize, rank: usize, sds: SignalSds, seed: u64) -> Self {
        SimulationSpec {
            p,
            q,
            cohort_sizes,
            scenario: Scenario::GlobalIndividual,
            signal_sds: sds,
            rank_y: rank,
            rank_s: rank,
            orthogonalize_y_in_generation: false,
            seed,
        }
    }

    pub fn n(&self) -> usize {
        self.cohort_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 || self.cohort_sizes.is_empty() || self.cohort_sizes.contains(&0) {
            return Err(MarrrError::Config("simulation dimensions must be positive".into()));
        }
        let s = self.signal_sds;
        if [s.a, s.b, s.c, s.d].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(MarrrError::Config("signal sds must be finite and non-negative".into()));
        }
        match self.scenario {
            Scenario::ArrrSingle | Scenario::OrthogonalityStudy if self.cohort_sizes.len() != 1 => {
                Err(MarrrError::Config(format!("scenario {} uses exactly one cohort", self.scenario)))
            }
            Scenario::MrrrTwoCohort if self.cohort_sizes.len() < 2 => {
                Err(MarrrError::Config("scenario mrrr_two_cohort needs at least two cohorts".into()))
            }
            _ => Ok(()),
        }?;
        if self.orthogonalize_y_in_generation && self.cohort_sizes.iter().any(|&n| n < self.q) {
            return Err(MarrrError::Config(
                "orthogonal covariate generation needs at least q samples per cohort".into(),
            ));
        }
        Ok(())
    }

    /// Module layout used to generate (and, by default, to fit) the data.
    pub fn config(&self) -> IndicatorConfig {
        let j = self.cohort_sizes.len();
        match self.scenario {
            Scenario::ArrrSingle | Scenario::OrthogonalityStudy => {
                IndicatorConfig::new(1, vec![vec![true]], vec![vec![true]]).expect("valid layout")
            }
            Scenario::MrrrTwoCohort => {
                let gi = IndicatorConfig::global_individual(j);
                gi.with_c_s(Vec::new()).expect("valid layout")
            }
            Scenario::GlobalIndividual => IndicatorConfig::global_individual(j),
        }
    }
}

/// Generated data together with every term that produced it.
#[derive(Debug, Clone)]
pub struct SimulatedTruth {
    pub dataset: MultiCohortDataset,
    /// Coefficients on the generated covariates, one per covariate module.
    pub true_b: Vec<DMatrix<f64>>,
    /// Auxiliary terms, p x n with zeros outside their cohorts.
    pub true_s: Vec<DMatrix<f64>>,
    pub true_e: DMatrix<f64>,
    pub cfg: IndicatorConfig,
}

impl SimulatedTruth {
    /// `sum_k B_k Y^(k) + sum_l S^(l)` (noise-free outcomes).
    pub fn signal(&self) -> DMatrix<f64> {
        let (_, y, ranges) = self.dataset.concatenated_view();
        let mut out = DMatrix::zeros(self.dataset.p(), self.dataset.n());
        for (k, b) in self.true_b.iter().enumerate() {
            let cols = self.cfg.y_columns(k, &ranges);
            cols.scatter_add(&(b * cols.gather(y)), 1.0, &mut out);
        }
        for s in &self.true_s {
            out += s;
        }
        out
    }

    /// Writes the dataset (dataset layout) under `dir/data`, the module
    /// indicators as `modules.csv`, and `B_k.csv`, `S_l.csv`, `E.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let ds = &self.dataset;
        save_dataset(ds, &MissingMask::empty(), &dir.join("data"))?;
        let ids: Vec<String> = ds.cohorts().iter().map(|c| c.id.clone()).collect();
        self.cfg.write(&dir.join("modules.csv"), &ids)?;
        let samples = ds.sample_ids();
        for (k, b) in self.true_b.iter().enumerate() {
            io::write_labeled_matrix(
                &dir.join(format!("B_{}.csv", k + 1)),
                "feature_id",
                ds.feature_ids(),
                ds.covariate_ids(),
                b,
            )?;
        }
        for (l, s) in self.true_s.iter().enumerate() {
            io::write_labeled_matrix(&dir.join(format!("S_{}.csv", l + 1)), "feature_id", ds.feature_ids(), &samples, s)?;
        }
        io::write_labeled_matrix(&dir.join("E.csv"), "feature_id", ds.feature_ids(), &samples, &self.true_e)
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Rescales `m` so that `sd(term(m)) = target`; a zero target gives zeros.
fn scale_to_sd(m: DMatrix<f64>, term_sd: f64, target: f64) -> DMatrix<f64> {
    if target == 0.0 || term_sd == 0.0 {
        DMatrix::zeros(m.nrows(), m.ncols())
    } else {
        m * (target / term_sd)
    }
}

/// Draws data for `spec`. Y, then covariate factors, then auxiliary factors,
/// then noise are drawn from one ChaCha8 stream seeded with `spec.seed`.
pub fn generate(spec: &SimulationSpec) -> Result<SimulatedTruth> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (p, q, n) = (spec.p, spec.q, spec.n());
    let ranges: Vec<_> = spec
        .cohort_sizes
        .iter()
        .scan(0, |start, &len| {
            let r = *start..*start + len;
            *start += len;
            Some(r)
        })
        .collect();

    let mut y = gaussian(q, n, &mut rng);
    if spec.orthogonalize_y_in_generation {
        for r in &ranges {
            let block = y.columns(r.start, r.len()).into_owned();
            let sd = linalg::sample_sd(&block);
            let svd = linalg::svd(&block)?;
            let vt = svd.v.columns(0, q).transpose() / sd;
            y.columns_mut(r.start, r.len()).copy_from(&vt);
        }
    }

    let cfg = spec.config();
    let s = spec.signal_sds;
    let (ry, rs) = (spec.rank_y, spec.rank_s);
    let mut true_b = Vec::with_capacity(cfg.k());
    for k in 0..cfg.k() {
        let cols = cfg.y_columns(k, &ranges);
        let raw = gaussian(p, ry, &mut rng) * gaussian(q, ry, &mut rng).transpose();
        let b = match spec.scenario {
            Scenario::ArrrSingle | Scenario::OrthogonalityStudy => {
                let sd = linalg::sample_sd(&(&raw * cols.gather(&y)));
                scale_to_sd(raw, sd, s.a)
            }
            Scenario::MrrrTwoCohort => raw * if k == 0 { s.a } else { s.b },
            Scenario::GlobalIndividual => {
                let sd = linalg::sample_sd(&(&raw * cols.gather(&y)));
                scale_to_sd(raw, sd, if k == 0 { s.a } else { s.c })
            }
        };
        true_b.push(b);
    }
    let mut true_s = Vec::with_capacity(cfg.l());
    for l in 0..cfg.l() {
        let cols = cfg.s_columns(l, &ranges);
        let raw = gaussian(p, rs, &mut rng) * gaussian(cols.len(), rs, &mut rng).transpose();
        let sd = linalg::sample_sd(&raw);
        let target = match spec.scenario {
            Scenario::GlobalIndividual if l > 0 => s.d,
            _ => s.b,
        };
        let compact = scale_to_sd(raw, sd, target);
        let mut full = DMatrix::zeros(p, n);
        cols.scatter(&compact, &mut full);
        true_s.push(full);
    }
    let true_e = gaussian(p, n, &mut rng);

    let mut truth = SimulatedTruth {
        dataset: MultiCohortDataset::from_concatenated(DMatrix::zeros(p, n), y, &spec.cohort_sizes)?,
        true_b,
        true_s,
        true_e,
        cfg,
    };
    let x = truth.signal() + &truth.true_e;
    truth.dataset = truth.dataset.with_x(x)?;
    Ok(truth)
}

/// Seed of replicate `index` under `master`: the first word of ChaCha8
/// stream `index` keyed by `master`.
pub fn replicate_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingKind {
    Entry,
    Column,
    Row,
}

impl MissingKind {
    pub const ALL: [MissingKind; 3] = [MissingKind::Entry, MissingKind::Row, MissingKind::Column];
}

impl fmt::Display for MissingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MissingKind::Entry => "entry",
            MissingKind::Column => "column",
            MissingKind::Row => "row",
        })
    }
}

impl FromStr for MissingKind {
    type Err = MarrrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "entry" | "entries" => Ok(MissingKind::Entry),
            "column" | "columns" => Ok(MissingKind::Column),
            "row" | "rows" => Ok(MissingKind::Row),
            other => Err(MarrrError::Config(format!(
                "unknown missingness kind {other:?}; expected entry, column or row"
            ))),
        }
    }
}

/// Masks about `fraction` of all cells: random single entries, whole
/// columns, or whole rows within one cohort. Every cohort keeps observed
/// columns and rows, and the mask classifies as the requested kind.
pub fn make_missing(ds: &MultiCohortDataset, fraction: f64, kind: MissingKind, seed: u64) -> Result<MissingMask> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(MarrrError::Config(format!("missing fraction must lie in (0, 1), got {fraction}")));
    }
    let (p, n) = (ds.p(), ds.n());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target_cells = (fraction * (p * n) as f64).round() as usize;
    if target_cells == 0 {
        return Err(MarrrError::Config(format!(
            "missing fraction {fraction} masks no cells of a {p}x{n} matrix"
        )));
    }
    let cohorts: Vec<_> = ds.cohorts().iter().map(|c| c.range.clone()).collect();
    let entries = match kind {
        MissingKind::Entry => return entry_mask(ds, target_cells, &mut rng),
        MissingKind::Column => column_mask(p, &cohorts, (fraction * n as f64).round() as usize, &mut rng)?,
        MissingKind::Row => row_mask(p, &cohorts, target_cells, &mut rng)?,
    };
    MissingMask::new(entries, ds)
}

fn entry_mask(ds: &MultiCohortDataset, target: usize, rng: &mut ChaCha8Rng) -> Result<MissingMask> {
    let p = ds.p();
    for _ in 0..100 {
        let picks = rand::seq::index::sample(rng, p * ds.n(), target);
        let mask = MissingMask::new(picks.iter().map(|c| (c % p, c / p)).collect(), ds)?;
        if mask.kind() == MaskKind::Entry {
            return Ok(mask);
        }
    }
    Err(MarrrError::Config(
        "cannot draw scattered missing entries without masking whole rows or columns; lower the fraction".into(),
    ))
}

fn column_mask(
    p: usize,
    cohorts: &[std::ops::Range<usize>],
    target_cols: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    // Each cohort keeps at least one column.
    let available: usize = cohorts.iter().map(|r| r.len() - 1).sum();
    if target_cols == 0 || target_cols > available {
        return Err(MarrrError::Config(format!(
            "cannot mask {target_cols} whole columns while every cohort keeps an observed column"
        )));
    }
    let mut remaining: Vec<usize> = cohorts.iter().map(|r| r.len()).collect();
    let mut order: Vec<usize> = (0..cohorts.iter().map(|r| r.end).max().unwrap_or(0)).collect();
    order.shuffle(rng);
    let mut entries = Vec::with_capacity(target_cols * p);
    let mut taken = 0;
    for j in order {
        if taken == target_cols {
            break;
        }
        let c = cohorts.iter().position(|r| r.contains(&j)).expect("column in a cohort");
        if remaining[c] <= 1 {
            continue;
        }
        remaining[c] -= 1;
        taken += 1;
        entries.extend((0..p).map(|i| (i, j)));
    }
    Ok(entries)
}

/// Picks (row, cohort) pairs, visiting rows in random order so that a row is
/// reused in another cohort only after every row has been used once.
fn row_mask(
    p: usize,
    cohorts: &[std::ops::Range<usize>],
    target: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let j = cohorts.len();
    // A cohort keeps at least one fully observed row.
    let capacity: usize = cohorts.iter().map(|r| r.len() * (p - 1)).sum();
    if p < 2 || target > capacity {
        return Err(MarrrError::Config(format!(
            "cannot mask {target} cells as whole rows while every cohort keeps an observed row"
        )));
    }
    let mut used = vec![vec![false; j]; p];
    let mut rows_used = vec![0usize; j];
    let mut entries = Vec::new();
    let mut cells = 0;
    while cells < target {
        let mut order: Vec<usize> = (0..p).collect();
        order.shuffle(rng);
        let before = cells;
        for i in order {
            if cells >= target {
                break;
            }
            let open: Vec<usize> = (0..j).filter(|&c| !used[i][c] && rows_used[c] + 1 < p).collect();
            let Some(&c) = open.choose(rng) else { continue };
            used[i][c] = true;
            rows_used[c] += 1;
            cells += cohorts[c].len();
            entries.extend(cohorts[c].clone().map(|col| (i, col)));
        }
        if cells == before {
            return Err(MarrrError::Config("not enough rows left to reach the missing fraction".into()));
        }
    }
    Ok(entries)
}

/// `||truth - estimate||_F^2 / ||truth||_F^2`.
pub fn relative_mse(truth: &DMatrix<f64>, estimate: &DMatrix<f64>) -> Result<f64> {
    if truth.shape() != estimate.shape() {
        return Err(MarrrError::Dimension(format!(
            "truth is {:?} but estimate is {:?}",
            truth.shape(),
            estimate.shape()
        )));
    }
    let den = truth.norm_squared();
    if den == 0.0 {
        return Err(MarrrError::DegenerateMetric("relative MSE is undefined for a zero truth".into()));
    }
    Ok((truth - estimate).norm_squared() / den)
}

/// Tail over head singular-value sums: `sum_{r<i<=upper} s_i / sum_{i<=r} s_i`.
/// Zero for an exactly rank-r estimate.
pub fn rank_sum_ratio(estimate: &DMatrix<f64>, true_rank: usize, upper: usize) -> Result<f64> {
    if upper <= true_rank {
        return Err(MarrrError::Config(format!(
            "rank sum ratio needs upper ({upper}) above the true rank ({true_rank})"
        )));
    }
    let s = linalg::singular_values(estimate)?;
    let at = |i: usize| s.get(i).copied().unwrap_or(0.0);
    let head: f64 = (0..true_rank).map(at).sum();
    let tail: f64 = (true_rank..upper).map(at).sum();
    if head == 0.0 {
        return Err(MarrrError::DegenerateMetric("rank sum ratio is undefined: leading singular values are zero".into()));
    }
    Ok(tail / head)
}

/// Limit of the top singular value of `B + E/sqrt(n)` for a rank-one `B`
/// with singular value `sigma_b` and aspect ratio `c`.
pub fn expected_inflated_singular_value(sigma_b: f64, c: f64) -> f64 {
    if sigma_b > c.powf(0.25) {
        let s2 = sigma_b * sigma_b;
        (1.0 + s2 + c + c / s2).sqrt()
    } else {
        1.0 + c.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let t = DMatrix::from_fn(3, 2, |i, j| (i + 2 * j + 1) as f64);
        assert_eq!(relative_mse(&t, &t).unwrap(), 0.0);
        assert_eq!(relative_mse(&t, &DMatrix::zeros(3, 2)).unwrap(), 1.0);
        assert!((relative_mse(&t, &(&t * 1.1)).unwrap() - 0.01).abs() < 1e-12);
        assert!(matches!(
            relative_mse(&DMatrix::zeros(2, 2), &DMatrix::zeros(2, 2)),
            Err(MarrrError::DegenerateMetric(_))
        ));
        let d = DMatrix::from_diagonal(&nalgebra::dvector![10.0, 1.0]);
        assert!((rank_sum_ratio(&d, 1, 2).unwrap() - 0.1).abs() < 1e-12);
        let rank1 = DMatrix::from_fn(4, 3, |i, j| ((i + 1) * (j + 1)) as f64);
        assert!(rank_sum_ratio(&rank1, 1, 3).unwrap() < 1e-12);
        assert!(rank_sum_ratio(&d, 2, 2).is_err());
        assert!(matches!(rank_sum_ratio(&DMatrix::zeros(2, 2), 1, 2), Err(MarrrError::DegenerateMetric(_))));
    }

    #[test]
    fn inflated_singular_value() {
        assert!((expected_inflated_singular_value(2.0, 1.0) - 2.5).abs() < 1e-15);
        let c: f64 = 0.3;
        let edge = c.powf(0.25);
        assert!((expected_inflated_singular_value(edge, c) - (1.0 + c.sqrt())).abs() < 1e-12);
        assert!((expected_inflated_singular_value(edge * (1.0 + 1e-9), c) - (1.0 + c.sqrt())).abs() < 1e-6);
        assert!((expected_inflated_singular_value(1e4, 0.5) / 1e4 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn replicate_seeds_differ() {
        let s: Vec<u64> = (0..5).map(|i| replicate_seed(7, i)).collect();
        assert_eq!(s, (0..5).map(|i| replicate_seed(7, i)).collect::<Vec<_>>());
        let mut d = s.clone();
        d.dedup();
        assert_eq!(d.len(), 5);
    }
}
