//! Estimation of covariate-driven and auxiliary low-rank modules under
//! structured nuclear-norm penalties.
//!
//! Two block-coordinate solvers are provided: [`fit_factored_als`] works on
//! the factored objective with ridge-type updates, and [`fit_svt_als`] applies
//! exact singular-value soft-thresholding per block (requires covariate
//! matrices with orthonormal rows).

mod factored;
mod output;
mod svt_als;

use std::ops::Range;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::columns::ColumnSet;
use crate::dataset::MultiCohortDataset;
use crate::error::{MarrrError, Result};
use crate::linalg::{self, LowRank};
use crate::modules_config::{IndicatorConfig, PenaltySet};

pub use factored::{fit_factored_als, solve_kronecker_ridge};
pub use output::{estimated_ranks, variance_explained, FitLabels, ModuleVariance};
pub use svt_als::fit_svt_als;

/// Outcome matrix plus the per-module covariate matrices and column sets the
/// solvers work on.
#[derive(Debug, Clone)]
pub struct ModelData {
    x: DMatrix<f64>,
    cohorts: Vec<Range<usize>>,
    cfg: IndicatorConfig,
    ys: Vec<DMatrix<f64>>,
    y_cols: Vec<ColumnSet>,
    s_cols: Vec<ColumnSet>,
}

impl ModelData {
    /// `ys[k]` is module `k`'s covariate matrix restricted to its active
    /// columns (q x n_k).
    pub fn with_module_ys(
        x: DMatrix<f64>,
        ys: Vec<DMatrix<f64>>,
        cohorts: Vec<Range<usize>>,
        cfg: IndicatorConfig,
    ) -> Result<Self> {
        let n = x.ncols();
        if cohorts.len() != cfg.num_cohorts() {
            return Err(MarrrError::Dimension(format!(
                "{} cohort ranges for indicator matrices over {} cohorts",
                cohorts.len(),
                cfg.num_cohorts()
            )));
        }
        let mut expect = 0;
        for r in &cohorts {
            if r.start != expect || r.is_empty() {
                return Err(MarrrError::Dimension("cohort ranges must tile the columns in order".into()));
            }
            expect = r.end;
        }
        if expect != n {
            return Err(MarrrError::Dimension(format!("cohort ranges cover {expect} of {n} columns")));
        }
        if ys.len() != cfg.k() {
            return Err(MarrrError::Dimension(format!("{} covariate matrices for {} modules", ys.len(), cfg.k())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(MarrrError::Numerical("outcome matrix has non-finite entries; impute first".into()));
        }
        let y_cols: Vec<ColumnSet> = (0..cfg.k()).map(|k| cfg.y_columns(k, &cohorts)).collect();
        let s_cols: Vec<ColumnSet> = (0..cfg.l()).map(|l| cfg.s_columns(l, &cohorts)).collect();
        for (k, (y, cols)) in ys.iter().zip(&y_cols).enumerate() {
            if y.ncols() != cols.len() {
                return Err(MarrrError::Dimension(format!(
                    "covariate module {k} has {} columns, its cohorts hold {}",
                    y.ncols(),
                    cols.len()
                )));
            }
        }
        Ok(ModelData {
            x,
            cohorts,
            cfg,
            ys,
            y_cols,
            s_cols,
        })
    }

    /// Uses the concatenated covariates as they are for every module.
    pub fn new(x: DMatrix<f64>, y: &DMatrix<f64>, cohorts: Vec<Range<usize>>, cfg: IndicatorConfig) -> Result<Self> {
        if y.ncols() != x.ncols() {
            return Err(MarrrError::Dimension(format!(
                "X has {} columns, Y has {}",
                x.ncols(),
                y.ncols()
            )));
        }
        let ys = (0..cfg.k()).map(|k| cfg.y_columns(k, &cohorts).gather(y)).collect();
        Self::with_module_ys(x, ys, cohorts, cfg)
    }

    /// Raw dataset matrices, no preprocessing.
    pub fn from_dataset(ds: &MultiCohortDataset, cfg: &IndicatorConfig) -> Result<Self> {
        let (x, y, ranges) = ds.concatenated_view();
        Self::new(x.clone(), y, ranges, cfg.clone())
    }

    pub fn p(&self) -> usize {
        self.x.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.ys.first().map_or(0, DMatrix::nrows)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn set_x(&mut self, x: DMatrix<f64>) -> Result<()> {
        if x.shape() != self.x.shape() {
            return Err(MarrrError::Dimension("replacement outcome matrix changes shape".into()));
        }
        self.x = x;
        Ok(())
    }

    pub fn cohorts(&self) -> &[Range<usize>] {
        &self.cohorts
    }

    pub fn cfg(&self) -> &IndicatorConfig {
        &self.cfg
    }

    pub fn y(&self, k: usize) -> &DMatrix<f64> {
        &self.ys[k]
    }

    pub fn ys(&self) -> &[DMatrix<f64>] {
        &self.ys
    }

    pub fn y_cols(&self, k: usize) -> &ColumnSet {
        &self.y_cols[k]
    }

    pub fn s_cols(&self, l: usize) -> &ColumnSet {
        &self.s_cols[l]
    }

    /// Whether module `k`'s covariates have orthonormal rows.
    pub fn y_is_orthonormal(&self, k: usize, tol: f64) -> bool {
        let y = &self.ys[k];
        let g = y * y.transpose();
        linalg::max_abs_diff(&g, &DMatrix::identity(g.nrows(), g.ncols())) < tol
    }

    /// `B_k Y^(k)` on the module's active columns.
    pub fn b_term(&self, k: usize, b: &DMatrix<f64>) -> DMatrix<f64> {
        b * &self.ys[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    FactoredAls,
    SvtAls,
}

impl FromStr for Algorithm {
    type Err = MarrrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factored_als" | "factored" | "als" | "1" => Ok(Algorithm::FactoredAls),
            "svt_als" | "svt" | "2" => Ok(Algorithm::SvtAls),
            other => Err(MarrrError::Config(format!(
                "unknown algorithm {other:?} (expected factored or svt)"
            ))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::FactoredAls => "factored_als",
            Algorithm::SvtAls => "svt_als",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub algorithm: Algorithm,
    /// Stop once the summed squared change of all module matrices over an
    /// epoch falls below this. `None` means `1e-6 * p * n`.
    pub epsilon: Option<f64>,
    pub max_epochs: usize,
    pub r_b_upper: usize,
    pub r_s_upper: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            algorithm: Algorithm::SvtAls,
            epsilon: None,
            max_epochs: 200,
            r_b_upper: 20,
            r_s_upper: 20,
            seed: 0,
            init_scale: 0.01,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(MarrrError::Config(format!("epsilon must be positive, found {e}")));
            }
        }
        if self.r_b_upper == 0 || self.r_s_upper == 0 {
            return Err(MarrrError::Config("rank upper bounds must be at least 1".into()));
        }
        if !(self.init_scale > 0.0) {
            return Err(MarrrError::Config("init_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn epsilon_for(&self, p: usize, n: usize) -> f64 {
        self.epsilon.unwrap_or(1e-6 * p as f64 * n as f64)
    }
}

/// Factored module estimates. `b[k]` holds `B_k = u v^T` with `v` q x r;
/// `s[l]` holds `S^(l)` on its active columns, so `v` has one row per
/// active column (rows for inactive cohorts are implicitly zero).
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleFactors {
    pub b: Vec<LowRank>,
    pub s: Vec<LowRank>,
}

impl ModuleFactors {
    pub fn zeros(data: &ModelData, rank: usize) -> Self {
        ModuleFactors {
            b: (0..data.cfg.k()).map(|_| LowRank::zeros(data.p(), data.q(), rank)).collect(),
            s: (0..data.cfg.l())
                .map(|l| LowRank::zeros(data.p(), data.s_cols[l].len(), rank))
                .collect(),
        }
    }

    fn check(&self, data: &ModelData) -> Result<()> {
        if self.b.len() != data.cfg.k() || self.s.len() != data.cfg.l() {
            return Err(MarrrError::Dimension("factor count does not match the module count".into()));
        }
        for b in &self.b {
            if b.nrows() != data.p() || b.ncols() != data.q() {
                return Err(MarrrError::Dimension(format!(
                    "covariate factors describe a {}x{} matrix, expected {}x{}",
                    b.nrows(),
                    b.ncols(),
                    data.p(),
                    data.q()
                )));
            }
        }
        for (l, s) in self.s.iter().enumerate() {
            if s.nrows() != data.p() || s.ncols() != data.s_cols[l].len() {
                return Err(MarrrError::Dimension(format!(
                    "auxiliary factors {l} describe a {}x{} block, expected {}x{}",
                    s.nrows(),
                    s.ncols(),
                    data.p(),
                    data.s_cols[l].len()
                )));
            }
        }
        Ok(())
    }

    /// Fitted signal `sum_k B_k Y^(k) + sum_l S^(l)` as a p x n matrix.
    pub fn signal(&self, data: &ModelData) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(data.p(), data.n());
        for (k, b) in self.b.iter().enumerate() {
            let term = &b.u * (b.v.transpose() * &data.ys[k]);
            data.y_cols[k].scatter_add(&term, 1.0, &mut out);
        }
        for (l, s) in self.s.iter().enumerate() {
            data.s_cols[l].scatter_add(&s.dense(), 1.0, &mut out);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub algorithm: Algorithm,
    pub factors: ModuleFactors,
    /// Objective after each epoch. The convex objective for the thresholding
    /// solver, the factored objective for the factored solver.
    pub objective_trace: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
    /// `X - fitted signal`.
    pub residual: DMatrix<f64>,
}

impl FitResult {
    pub fn b(&self, k: usize) -> DMatrix<f64> {
        self.factors.b[k].dense()
    }

    pub fn bs(&self) -> Vec<DMatrix<f64>> {
        (0..self.factors.b.len()).map(|k| self.b(k)).collect()
    }

    /// `S^(l)` as a full p x n matrix with zero inactive columns.
    pub fn s_full(&self, l: usize, data: &ModelData) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(data.p(), data.n());
        data.s_cols[l].scatter(&self.factors.s[l].dense(), &mut out);
        out
    }

    pub fn ss_full(&self, data: &ModelData) -> Vec<DMatrix<f64>> {
        (0..self.factors.s.len()).map(|l| self.s_full(l, data)).collect()
    }

    /// `B_k Y^(k)` as a full p x n matrix.
    pub fn by_full(&self, k: usize, data: &ModelData) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(data.p(), data.n());
        data.y_cols[k].scatter(&data.b_term(k, &self.b(k)), &mut out);
        out
    }

    pub fn signal(&self, data: &ModelData) -> DMatrix<f64> {
        self.factors.signal(data)
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }
}

/// `0.5 ||X - sum B_k Y^(k) - sum S^(l)||_F^2 + sum lambda_B ||B_k||_* +
/// sum lambda_S ||S^(l)||_*` with dense `B_k` (p x q) and full `S^(l)` (p x n).
pub fn eval_objective(data: &ModelData, pen: &PenaltySet, b: &[DMatrix<f64>], s: &[DMatrix<f64>]) -> Result<f64> {
    pen.check_shape(&data.cfg)?;
    if b.len() != data.cfg.k() || s.len() != data.cfg.l() {
        return Err(MarrrError::Dimension(format!(
            "{} covariate and {} auxiliary matrices for {} and {} modules",
            b.len(),
            s.len(),
            data.cfg.k(),
            data.cfg.l()
        )));
    }
    let mut resid = data.x.clone();
    let mut penalty = 0.0;
    for (k, bk) in b.iter().enumerate() {
        if bk.shape() != (data.p(), data.q()) {
            return Err(MarrrError::Dimension(format!(
                "B_{k} is {}x{}, expected {}x{}",
                bk.nrows(),
                bk.ncols(),
                data.p(),
                data.q()
            )));
        }
        data.y_cols[k].scatter_add(&data.b_term(k, bk), -1.0, &mut resid);
        penalty += pen.lambda_b[k] * linalg::nuclear_norm(bk)?;
    }
    for (l, sl) in s.iter().enumerate() {
        if sl.shape() != data.x.shape() {
            return Err(MarrrError::Dimension(format!(
                "S^({l}) is {}x{}, expected {}x{}",
                sl.nrows(),
                sl.ncols(),
                data.p(),
                data.n()
            )));
        }
        resid -= sl;
        penalty += pen.lambda_s[l] * linalg::nuclear_norm(sl)?;
    }
    Ok(0.5 * resid.norm_squared() + penalty)
}

/// Factored objective `0.5 {||residual||^2 + sum lambda (||U||^2 + ||V||^2)}`.
pub fn eval_objective_factored(data: &ModelData, pen: &PenaltySet, factors: &ModuleFactors) -> Result<f64> {
    pen.check_shape(&data.cfg)?;
    factors.check(data)?;
    let resid = &data.x - factors.signal(data);
    Ok(factored_objective(&resid, pen, factors))
}

fn factored_objective(resid: &DMatrix<f64>, pen: &PenaltySet, factors: &ModuleFactors) -> f64 {
    let mut total = resid.norm_squared();
    for (f, lam) in factors.b.iter().zip(&pen.lambda_b) {
        total += lam * f.factor_penalty();
    }
    for (f, lam) in factors.s.iter().zip(&pen.lambda_s) {
        total += lam * f.factor_penalty();
    }
    0.5 * total
}

/// Convex objective of a factored estimate (nuclear norms computed exactly).
pub fn eval_objective_of_factors(data: &ModelData, pen: &PenaltySet, factors: &ModuleFactors) -> Result<f64> {
    pen.check_shape(&data.cfg)?;
    factors.check(data)?;
    let resid = &data.x - factors.signal(data);
    let mut total = 0.5 * resid.norm_squared();
    for (f, lam) in factors.b.iter().zip(&pen.lambda_b) {
        total += lam * f.nuclear_norm()?;
    }
    for (f, lam) in factors.s.iter().zip(&pen.lambda_s) {
        total += lam * f.nuclear_norm()?;
    }
    Ok(total)
}

/// Runs the solver selected in `opts`, optionally warm-started.
pub fn fit(data: &ModelData, pen: &PenaltySet, opts: &SolverOptions, warm: Option<&ModuleFactors>) -> Result<FitResult> {
    match opts.algorithm {
        Algorithm::FactoredAls => fit_factored_als(data, pen, opts, warm),
        Algorithm::SvtAls => fit_svt_als(data, pen, opts, warm),
    }
}
