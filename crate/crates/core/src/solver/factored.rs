use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{factored_objective, Algorithm, FitResult, ModelData, ModuleFactors, SolverOptions};
use crate::error::{MarrrError, Result};
use crate::linalg::{self, LowRank};
use crate::modules_config::PenaltySet;

/// Eigen-decomposition of a covariate Gram matrix `G = Q diag(gamma) Q^T`.
struct GramEigen {
    q: DMatrix<f64>,
    gamma: DVector<f64>,
}

enum GramSolver {
    Identity,
    Eigen(GramEigen),
}

impl GramSolver {
    fn new(g: &DMatrix<f64>) -> Self {
        if linalg::max_abs_diff(g, &DMatrix::identity(g.nrows(), g.ncols())) < 1e-12 {
            GramSolver::Identity
        } else {
            let e = g.clone().symmetric_eigen();
            GramSolver::Eigen(GramEigen {
                q: e.eigenvectors,
                gamma: e.eigenvalues,
            })
        }
    }

    /// Solves `G V W + lambda V = H` for `V` (q x r), `W` symmetric r x r.
    fn solve(&self, w: &DMatrix<f64>, h: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
        match self {
            GramSolver::Identity => linalg::right_ridge_solve(h, w, lambda),
            GramSolver::Eigen(ge) => {
                let ew = w.clone().symmetric_eigen();
                let p = &ew.eigenvectors;
                let mut vt = ge.q.transpose() * h * p;
                for j in 0..vt.ncols() {
                    for i in 0..vt.nrows() {
                        let d = ge.gamma[i].max(0.0) * ew.eigenvalues[j].max(0.0) + lambda;
                        if !(d > 0.0) {
                            return Err(MarrrError::Numerical(
                                "Kronecker system is singular; penalties must be positive".into(),
                            ));
                        }
                        vt[(i, j)] /= d;
                    }
                }
                Ok(&ge.q * vt * p.transpose())
            }
        }
    }
}

/// Solves `(W kron G + lambda I) vec(V) = vec(H)`, i.e. `G V W + lambda V = H`,
/// through the eigen-decompositions of the two symmetric factors.
pub fn solve_kronecker_ridge(g: &DMatrix<f64>, w: &DMatrix<f64>, h: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    GramSolver::new(g).solve(w, h, lambda)
}

fn random_factor(rows: usize, cols: usize, sd: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let normal = Normal::new(0.0, sd).expect("positive sd");
    DMatrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

/// Starting factors: random, or a warm start widened to the rank bound with
/// random columns (zero columns would stay zero forever).
fn initial_factors(
    data: &ModelData,
    opts: &SolverOptions,
    warm: Option<&ModuleFactors>,
    rng: &mut ChaCha8Rng,
) -> Result<ModuleFactors> {
    let widen = |f: &LowRank, rank: usize, rng: &mut ChaCha8Rng| -> LowRank {
        let r = f.u.ncols();
        if r >= rank {
            return f.clone();
        }
        let mut out = f.padded(rank);
        let extra_u = random_factor(f.nrows(), rank - r, opts.init_scale, rng);
        let extra_v = random_factor(f.ncols(), rank - r, opts.init_scale, rng);
        out.u.columns_mut(r, rank - r).copy_from(&extra_u);
        out.v.columns_mut(r, rank - r).copy_from(&extra_v);
        out
    };
    let zeros = ModuleFactors::zeros(data, 0);
    let base = match warm {
        Some(w) => {
            w.check(data)?;
            w
        }
        None => &zeros,
    };
    Ok(ModuleFactors {
        b: base.b.iter().map(|f| widen(f, opts.r_b_upper, rng)).collect(),
        s: base.s.iter().map(|f| widen(f, opts.r_s_upper, rng)).collect(),
    })
}

/// Alternating ridge updates of the factored objective
/// `0.5 {||X - sum U_B V_B^T Y - sum U_S V_S^T||^2 + sum lambda (||U||^2 + ||V||^2)}`.
///
/// Per covariate module: `U <- R Y^T V (V^T Y Y^T V + lambda I)^{-1}`, then `V`
/// from `(U^T U kron Y Y^T + lambda I) vec V = vec(Y R^T U)`. Per auxiliary
/// module: `U <- R V (V^T V + lambda I)^{-1}`, `V <- R^T U (U^T U + lambda I)^{-1}`
/// on the module's columns. The trace records the factored objective.
pub fn fit_factored_als(
    data: &ModelData,
    pen: &PenaltySet,
    opts: &SolverOptions,
    warm: Option<&ModuleFactors>,
) -> Result<FitResult> {
    opts.validate()?;
    pen.check_shape(&data.cfg)?;
    pen.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut f = initial_factors(data, opts, warm, &mut rng)?;
    let grams: Vec<GramSolver> = data.ys.iter().map(|y| GramSolver::new(&(y * y.transpose()))).collect();

    let mut resid = &data.x - f.signal(data);
    let eps = opts.epsilon_for(data.p(), data.n());
    let mut trace = Vec::new();
    let mut converged = false;
    let mut epochs = 0;
    while epochs < opts.max_epochs {
        epochs += 1;
        let mut delta = 0.0;
        for k in 0..data.cfg.k() {
            let cols = &data.y_cols[k];
            let y = &data.ys[k];
            let lam = pen.lambda_b[k];
            let old = f.b[k].clone();
            let mut partial = cols.gather(&resid);
            partial += &old.u * (old.v.transpose() * y);
            let ry = &partial * y.transpose();

            let vty = old.v.transpose() * y;
            let gram_v = &vty * vty.transpose();
            let u = linalg::right_ridge_solve(&(&ry * &old.v), &gram_v, lam)?;
            let w = u.transpose() * &u;
            let h = ry.transpose() * &u;
            let v = grams[k].solve(&w, &h, lam)?;

            let new = LowRank { u, v };
            delta += old.dist2(&new);
            partial -= &new.u * (new.v.transpose() * y);
            cols.scatter(&partial, &mut resid);
            f.b[k] = new;
        }
        for l in 0..data.cfg.l() {
            let cols = &data.s_cols[l];
            let lam = pen.lambda_s[l];
            let old = f.s[l].clone();
            let mut partial = cols.gather(&resid);
            partial += old.dense();

            let u = linalg::right_ridge_solve(&(&partial * &old.v), &(old.v.transpose() * &old.v), lam)?;
            let v = linalg::right_ridge_solve(&(partial.transpose() * &u), &(u.transpose() * &u), lam)?;

            let new = LowRank { u, v };
            delta += old.dist2(&new);
            partial -= new.dense();
            cols.scatter(&partial, &mut resid);
            f.s[l] = new;
        }
        trace.push(factored_objective(&resid, pen, &f));
        if delta < eps {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        algorithm: Algorithm::FactoredAls,
        factors: f,
        objective_trace: trace,
        epochs,
        converged,
        residual: resid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense oracle: builds the (q r) x (q r) system explicitly.
    fn kron_oracle(g: &DMatrix<f64>, w: &DMatrix<f64>, h: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
        let (q, r) = (g.nrows(), w.nrows());
        let mut a = DMatrix::zeros(q * r, q * r);
        for j1 in 0..r {
            for j2 in 0..r {
                for i1 in 0..q {
                    for i2 in 0..q {
                        a[(j1 * q + i1, j2 * q + i2)] = w[(j1, j2)] * g[(i1, i2)];
                    }
                }
            }
        }
        for i in 0..q * r {
            a[(i, i)] += lambda;
        }
        let rhs = DVector::from_column_slice(h.as_slice());
        let x = a.lu().solve(&rhs).unwrap();
        DMatrix::from_column_slice(q, r, x.as_slice())
    }

    #[test]
    fn kronecker_solve_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let y = random_factor(4, 9, 1.0, &mut rng);
            let g = &y * y.transpose();
            let u = random_factor(6, 3, 1.0, &mut rng);
            let w = u.transpose() * &u;
            let h = random_factor(4, 3, 1.0, &mut rng);
            let fast = solve_kronecker_ridge(&g, &w, &h, 0.7).unwrap();
            let dense = kron_oracle(&g, &w, &h, 0.7);
            assert!(linalg::max_abs_diff(&fast, &dense) < 1e-10);
        }
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let h = DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        let id = DMatrix::identity(3, 3);
        let fast = solve_kronecker_ridge(&id, &w, &h, 0.3).unwrap();
        assert!(linalg::max_abs_diff(&fast, &kron_oracle(&id, &w, &h, 0.3)) < 1e-12);
    }
}
