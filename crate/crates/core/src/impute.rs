//! EM-style completion of missing outcome cells: fill, fit, replace the
//! missing cells by the fitted signal, repeat.

use nalgebra::DMatrix;

use crate::dataset::{MissingMask, MultiCohortDataset};
use crate::error::{MarrrError, Result};
use crate::modules_config::{rmt_penalties_for, IndicatorConfig, PenaltySet};
use crate::preprocess::{self, PreprocessInfo, YTreatment};
use crate::solver::{self, FitResult, ModelData, ModuleFactors, SolverOptions};

pub const DEFAULT_OUTER_MAX: usize = 20;
pub const DEFAULT_INNER_EPOCHS: usize = 30;
/// Relative to the Frobenius norm of the observed (scaled) cells.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct ImputeOptions {
    pub outer_max: usize,
    pub tolerance: f64,
    pub warm_start: bool,
}

impl Default for ImputeOptions {
    fn default() -> Self {
        ImputeOptions {
            outer_max: DEFAULT_OUTER_MAX,
            tolerance: DEFAULT_TOLERANCE,
            warm_start: true,
        }
    }
}

/// Solver options with the per-pass epoch budget used for imputation.
pub fn imputation_solver_options(base: &SolverOptions) -> SolverOptions {
    SolverOptions {
        max_epochs: DEFAULT_INNER_EPOCHS,
        ..base.clone()
    }
}

#[derive(Debug, Clone)]
pub struct ImputationResult {
    /// Completed outcomes on the fitting scale.
    pub x_completed: DMatrix<f64>,
    /// Completed outcomes on the original scale.
    pub x_completed_original: DMatrix<f64>,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Fit of the final pass; `None` when nothing was missing.
    pub fit: Option<FitResult>,
    pub info: PreprocessInfo,
    pub rse: Option<f64>,
}

/// Scaled-level loop. `data.x()` must hold the starting values at masked
/// cells (zero for a cold start); observed cells are never written.
/// Returns `(completed, passes, converged, final fit)`.
pub fn impute_scaled(
    data: &mut ModelData,
    mask: &MissingMask,
    pen: &PenaltySet,
    opts: &SolverOptions,
    iopts: &ImputeOptions,
) -> Result<(DMatrix<f64>, usize, bool, Option<FitResult>)> {
    if mask.is_empty() {
        return Ok((data.x().clone(), 0, true, None));
    }
    let missing = mask.indicator(data.p(), data.n());
    let observed_norm = data
        .x()
        .iter()
        .zip(&missing)
        .filter(|(_, &m)| !m)
        .map(|(v, _)| v * v)
        .sum::<f64>()
        .sqrt();
    let tol = iopts.tolerance * observed_norm;
    let mut x = data.x().clone();
    let mut warm: Option<ModuleFactors> = None;
    let mut last = None;
    let mut converged = false;
    let mut passes = 0;
    while passes < iopts.outer_max {
        passes += 1;
        let fit = solver::fit(data, pen, opts, warm.as_ref())?;
        let signal = fit.signal(data);
        let mut change = 0.0;
        for &(i, j) in mask.entries() {
            let d = signal[(i, j)] - x[(i, j)];
            change += d * d;
            x[(i, j)] = signal[(i, j)];
        }
        data.set_x(x.clone())?;
        if iopts.warm_start {
            warm = Some(fit.factors.clone());
        }
        last = Some(fit);
        if change.sqrt() < tol {
            converged = true;
            break;
        }
    }
    Ok((x, passes, converged, last))
}

/// Full pipeline: scale with observed cells only, transform covariates,
/// impute, map back. Penalties default to the random-matrix rule.
pub fn impute(
    ds: &MultiCohortDataset,
    mask: &MissingMask,
    cfg: &IndicatorConfig,
    pen: Option<&PenaltySet>,
    opts: &SolverOptions,
    iopts: &ImputeOptions,
    treatment: YTreatment,
) -> Result<ImputationResult> {
    impute_with(ds, mask, cfg, pen, opts, iopts, treatment, true)
}

/// As [`impute`], optionally skipping row centering (see
/// [`preprocess::scale_x_uncentered`]).
#[allow(clippy::too_many_arguments)]
pub fn impute_with(
    ds: &MultiCohortDataset,
    mask: &MissingMask,
    cfg: &IndicatorConfig,
    pen: Option<&PenaltySet>,
    opts: &SolverOptions,
    iopts: &ImputeOptions,
    treatment: YTreatment,
    center: bool,
) -> Result<ImputationResult> {
    check_cohorts_observed(ds, mask)?;
    let (mut data, info) = preprocess::prepare_with(ds, mask, cfg, treatment, center)?;
    let pen = match pen {
        Some(p) => p.clone(),
        None => rmt_penalties_for(ds.p(), ds.q(), &ds.cohort_sizes(), cfg)?,
    };
    let (x_completed, outer_iterations, converged, fit) = impute_scaled(&mut data, mask, &pen, opts, iopts)?;
    let mut x_completed_original = preprocess::backmap_x(&x_completed, &info);
    // Observed cells are reported exactly as given.
    let raw = ds.x();
    let missing = mask.indicator(ds.p(), ds.n());
    for (idx, v) in x_completed_original.iter_mut().enumerate() {
        if !missing[idx] {
            *v = raw[(idx % ds.p(), idx / ds.p())];
        }
    }
    Ok(ImputationResult {
        x_completed,
        x_completed_original,
        outer_iterations,
        converged,
        fit,
        info,
        rse: None,
    })
}

/// Every cohort needs at least one observed cell.
pub fn check_cohorts_observed(ds: &MultiCohortDataset, mask: &MissingMask) -> Result<()> {
    let p = ds.p();
    let mut per_cohort = vec![0usize; ds.num_cohorts()];
    for &(_, j) in mask.entries() {
        if let Some(c) = ds.cohort_of_column(j) {
            per_cohort[c] += 1;
        }
    }
    for (c, cohort) in ds.cohorts().iter().enumerate() {
        if per_cohort[c] == p * cohort.len() {
            return Err(MarrrError::InsufficientData(format!(
                "cohort {:?} has no observed outcome values",
                cohort.id
            )));
        }
    }
    Ok(())
}

/// `sum_M (truth - completed)^2 / sum_M truth^2`.
pub fn rse(truth: &DMatrix<f64>, completed: &DMatrix<f64>, mask: &MissingMask) -> Result<f64> {
    if truth.shape() != completed.shape() {
        return Err(MarrrError::Dimension("truth and completed matrices differ in shape".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &(i, j) in mask.entries() {
        let t = truth[(i, j)];
        num += (t - completed[(i, j)]).powi(2);
        den += t * t;
    }
    if den == 0.0 {
        return Err(MarrrError::DegenerateMetric(
            "relative squared error is undefined: masked truth values are all zero".into(),
        ));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rse_examples() {
        let ds = MultiCohortDataset::from_concatenated(
            DMatrix::from_fn(2, 3, |i, j| (i + j + 1) as f64),
            DMatrix::from_element(1, 3, 1.0),
            &[3],
        )
        .unwrap();
        let truth = ds.x().clone();
        let mask = MissingMask::new(vec![(0, 1), (1, 2)], &ds).unwrap();
        assert_eq!(rse(&truth, &truth, &mask).unwrap(), 0.0);
        assert_eq!(rse(&truth, &DMatrix::zeros(2, 3), &mask).unwrap(), 1.0);
        let single = MissingMask::new(vec![(1, 1)], &ds).unwrap();
        let mut c = truth.clone();
        c[(1, 1)] += 0.5;
        assert!((rse(&truth, &c, &single).unwrap() - 0.25 / 9.0).abs() < 1e-15);
        let zero = DMatrix::zeros(2, 3);
        assert!(matches!(rse(&zero, &zero, &mask), Err(MarrrError::DegenerateMetric(_))));
    }

    #[test]
    fn fully_missing_cohort_rejected() {
        let ds = MultiCohortDataset::from_concatenated(
            DMatrix::from_fn(2, 4, |i, j| (i * 4 + j) as f64),
            DMatrix::from_element(1, 4, 1.0),
            &[2, 2],
        )
        .unwrap();
        let mask = MissingMask::new(vec![(0, 2), (1, 2), (0, 3), (1, 3)], &ds).unwrap();
        assert!(matches!(check_cohorts_observed(&ds, &mask), Err(MarrrError::InsufficientData(_))));
    }
}
