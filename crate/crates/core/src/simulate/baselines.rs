//! Two-stage competitors: fit the covariate part first, then the rest on the
//! residual. Least-squares versions use ordinary least squares and a fixed
//! rank truncation; nuclear-norm versions use one singular value
//! thresholding per stage with noise-scaled penalties.

use nalgebra::DMatrix;

use crate::dataset::MultiCohortDataset;
use crate::error::{MarrrError, Result};
use crate::linalg;
use crate::preprocess;

#[derive(Debug, Clone)]
pub struct TwoStage {
    /// Covariate coefficients: shared first, then one per cohort when present.
    pub b: Vec<DMatrix<f64>>,
    /// Auxiliary term (p x n), when the scenario has one.
    pub s: Option<DMatrix<f64>>,
}

fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = y * y.transpose();
    let rhs = y * x.transpose();
    let bt = linalg::solve_spd(&gram, &rhs)
        .map_err(|_| MarrrError::RankDeficiency("covariate Gram matrix is singular".into()))?;
    Ok(bt.transpose())
}

/// Nuclear-norm regression on orthogonalized covariates, mapped back to `Y`.
fn nn_regression(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let (yo, t) = preprocess::orthogonalize_y(y)?;
    let b_fit = linalg::svt(&(x * yo.transpose()), lambda)?;
    Ok(preprocess::backmap_b(&b_fit, &t))
}

fn truncate(m: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    let svd = linalg::svd(m)?;
    let r = rank.min(svd.s.len());
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..r {
        out += svd.s[i] * svd.u.column(i) * svd.v.column(i).transpose();
    }
    Ok(out)
}

fn noise_level(x: &DMatrix<f64>) -> Result<f64> {
    preprocess::estimate_sigma(x)
}

/// OLS for `B`, then the rank-`rank_s` truncated SVD of `X - BY` for `S`.
pub fn two_stage_ls_arrr(x: &DMatrix<f64>, y: &DMatrix<f64>, rank_s: usize) -> Result<TwoStage> {
    let b = ols(x, y)?;
    let s = truncate(&(x - &b * y), rank_s)?;
    Ok(TwoStage { b: vec![b], s: Some(s) })
}

/// Nuclear-norm regression for `B`, then `svt(X - BY)` for `S`.
pub fn two_stage_nn_arrr(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<TwoStage> {
    let (p, n) = x.shape();
    let sigma = noise_level(x)?;
    let b = nn_regression(x, y, sigma * ((p as f64).sqrt() + (y.nrows() as f64).sqrt()))?;
    let s = linalg::svt(&(x - &b * y), sigma * ((p as f64).sqrt() + (n as f64).sqrt()))?;
    Ok(TwoStage { b: vec![b], s: Some(s) })
}

/// Pooled OLS for the shared `B`, then per-cohort OLS on the residual.
pub fn two_stage_ls_mrrr(ds: &MultiCohortDataset) -> Result<TwoStage> {
    let (x, y, ranges) = ds.concatenated_view();
    let shared = ols(x, y)?;
    let resid = x - &shared * y;
    let mut b = vec![shared];
    for r in ranges {
        b.push(ols(&resid.columns(r.start, r.len()).into_owned(), &y.columns(r.start, r.len()).into_owned())?);
    }
    Ok(TwoStage { b, s: None })
}

/// Pooled nuclear-norm regression, then per-cohort nuclear-norm regression
/// on the residual. Penalties are `sigma_hat (sqrt(p) + sqrt(q))`.
pub fn two_stage_nn_mrrr(ds: &MultiCohortDataset) -> Result<TwoStage> {
    let (x, y, ranges) = ds.concatenated_view();
    let (p, q) = (ds.p() as f64, ds.q() as f64);
    let lambda = noise_level(x)? * (p.sqrt() + q.sqrt());
    let shared = nn_regression(x, y, lambda)?;
    let resid = x - &shared * y;
    let mut b = vec![shared];
    for r in ranges {
        b.push(nn_regression(
            &resid.columns(r.start, r.len()).into_owned(),
            &y.columns(r.start, r.len()).into_owned(),
            lambda,
        )?);
    }
    Ok(TwoStage { b, s: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_noiseless_coefficients() {
        let y = DMatrix::from_fn(2, 6, |i, j| ((i + 1) * (j + 2)) as f64 + (j * j) as f64 * 0.1 * i as f64);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.0]);
        let x = &b * &y;
        let fit = two_stage_ls_arrr(&x, &y, 1).unwrap();
        assert!(linalg::max_abs_diff(&fit.b[0], &b) < 1e-8);
        assert!(fit.s.unwrap().norm() < 1e-6);
    }
}
