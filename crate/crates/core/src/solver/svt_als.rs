use nalgebra::DMatrix;

use super::{FitResult, ModelData, ModuleFactors, SolverOptions};
use crate::error::{MarrrError, Result};
use crate::linalg::{self, LowRank};
use crate::modules_config::PenaltySet;

/// Tolerance on `||Y Y^T - I||_max` for the thresholding solver.
pub(crate) const ORTHONORMAL_TOL: f64 = 1e-8;

/// Block coordinate descent with exact soft-thresholding updates:
/// `B_k <- svt(R_k Y_k^T, lambda_B)` and `S_l <- svt(R_l, lambda_S)`, where
/// `R_k`, `R_l` are the partial residuals on the module's columns. Starts
/// from zero unless `warm` is given. The returned trace holds the convex
/// objective after every epoch and never increases.
pub fn fit_svt_als(
    data: &ModelData,
    pen: &PenaltySet,
    opts: &SolverOptions,
    warm: Option<&ModuleFactors>,
) -> Result<FitResult> {
    opts.validate()?;
    pen.check_shape(&data.cfg)?;
    for k in 0..data.cfg.k() {
        if !data.y_is_orthonormal(k, ORTHONORMAL_TOL) {
            return Err(MarrrError::Precondition(format!(
                "covariate module {} does not have orthonormal rows; orthogonalize Y or use the factored solver",
                k + 1
            )));
        }
    }
    let (k_count, l_count) = (data.cfg.k(), data.cfg.l());
    let mut b: Vec<DMatrix<f64>> = vec![DMatrix::zeros(data.p(), data.q()); k_count];
    let mut s: Vec<DMatrix<f64>> = (0..l_count)
        .map(|l| DMatrix::zeros(data.p(), data.s_cols[l].len()))
        .collect();
    let mut b_nuc = vec![0.0; k_count];
    let mut s_nuc = vec![0.0; l_count];
    let mut b_fac: Vec<LowRank> = (0..k_count).map(|_| LowRank::zeros(data.p(), data.q(), 0)).collect();
    let mut s_fac: Vec<LowRank> = (0..l_count)
        .map(|l| LowRank::zeros(data.p(), data.s_cols[l].len(), 0))
        .collect();
    if let Some(w) = warm {
        w.check(data)?;
        for k in 0..k_count {
            b[k] = w.b[k].dense();
            b_nuc[k] = w.b[k].nuclear_norm()?;
            b_fac[k] = w.b[k].clone();
        }
        for l in 0..l_count {
            s[l] = w.s[l].dense();
            s_nuc[l] = w.s[l].nuclear_norm()?;
            s_fac[l] = w.s[l].clone();
        }
    }

    let mut resid = data.x.clone();
    for k in 0..k_count {
        data.y_cols[k].scatter_add(&data.b_term(k, &b[k]), -1.0, &mut resid);
    }
    for l in 0..l_count {
        data.s_cols[l].scatter_add(&s[l], -1.0, &mut resid);
    }

    let eps = opts.epsilon_for(data.p(), data.n());
    let mut trace = Vec::new();
    let mut converged = false;
    let mut epochs = 0;
    while epochs < opts.max_epochs {
        epochs += 1;
        let mut delta = 0.0;
        for k in 0..k_count {
            let cols = &data.y_cols[k];
            let y = &data.ys[k];
            let mut partial = cols.gather(&resid);
            partial += &b[k] * y;
            let t = linalg::soft_threshold(&(&partial * y.transpose()), pen.lambda_b[k])?;
            let new_b = t.dense();
            delta += (&new_b - &b[k]).norm_squared();
            partial -= &new_b * y;
            cols.scatter(&partial, &mut resid);
            b[k] = new_b;
            b_nuc[k] = t.nuclear_norm();
            b_fac[k] = t.balanced();
        }
        for l in 0..l_count {
            let cols = &data.s_cols[l];
            let mut partial = cols.gather(&resid);
            partial += &s[l];
            let t = linalg::soft_threshold(&partial, pen.lambda_s[l])?;
            let new_s = t.dense();
            delta += (&new_s - &s[l]).norm_squared();
            partial -= &new_s;
            cols.scatter(&partial, &mut resid);
            s[l] = new_s;
            s_nuc[l] = t.nuclear_norm();
            s_fac[l] = t.balanced();
        }
        let obj = 0.5 * resid.norm_squared()
            + b_nuc.iter().zip(&pen.lambda_b).map(|(a, l)| a * l).sum::<f64>()
            + s_nuc.iter().zip(&pen.lambda_s).map(|(a, l)| a * l).sum::<f64>();
        trace.push(obj);
        if delta < eps {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        algorithm: super::Algorithm::SvtAls,
        factors: ModuleFactors { b: b_fac, s: s_fac },
        objective_trace: trace,
        epochs,
        converged,
        residual: resid,
    })
}
