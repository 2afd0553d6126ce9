#![allow(dead_code)]

use std::ops::Range;

use marrr::linalg;
use marrr::modules_config::IndicatorConfig;
use marrr::solver::ModelData;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// q x n with orthonormal rows.
pub fn orthonormal_rows(q: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = gauss(n, q, rng);
    g.qr().q().transpose()
}

pub fn ranges(sizes: &[usize]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut at = 0;
    for &s in sizes {
        out.push(at..at + s);
        at += s;
    }
    out
}

/// Random multi-module problem: each covariate module has orthonormal rows
/// on its active columns and a rank-2 coefficient matrix, each auxiliary
/// module a rank-2 block, plus unit Gaussian noise.
pub fn random_instance(
    seed: u64,
    p: usize,
    q: usize,
    sizes: &[usize],
    cfg: &IndicatorConfig,
    signal: f64,
) -> ModelData {
    let mut r = rng(seed);
    let cohorts = ranges(sizes);
    let n: usize = sizes.iter().sum();
    let mut x = gauss(p, n, &mut r);
    let mut ys = Vec::new();
    for k in 0..cfg.k() {
        let cols = cfg.y_columns(k, &cohorts);
        let y = orthonormal_rows(q, cols.len(), &mut r);
        let b = gauss(p, 2, &mut r) * gauss(2, q, &mut r);
        let b = &b * (signal / linalg::singular_values(&b).unwrap()[0]);
        cols.scatter_add(&(&b * &y), 1.0, &mut x);
        ys.push(y);
    }
    for l in 0..cfg.l() {
        let cols = cfg.s_columns(l, &cohorts);
        let s = gauss(p, 2, &mut r) * gauss(2, cols.len(), &mut r);
        let s = &s * (signal / linalg::singular_values(&s).unwrap()[0]);
        cols.scatter_add(&s, 1.0, &mut x);
    }
    ModelData::with_module_ys(x, ys, cohorts, cfg.clone()).unwrap()
}

pub fn prox_objective(m: &DMatrix<f64>, s: &DMatrix<f64>, lambda: f64) -> f64 {
    0.5 * (m - s).norm_squared() + lambda * linalg::nuclear_norm(s).unwrap()
}

/// `(A)^{1/2}` and its pseudo-inverse for symmetric PSD `A` via the
/// symmetric eigen-decomposition.
fn sqrt_psd(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let e = a.clone().symmetric_eigen();
    let n = a.nrows();
    let mut root = DMatrix::zeros(n, n);
    let mut pinv = DMatrix::zeros(n, n);
    let top = e.eigenvalues.iter().cloned().fold(0.0, f64::max);
    for i in 0..n {
        let w = e.eigenvalues[i].max(0.0);
        let v = e.eigenvectors.column(i);
        root += v * v.transpose() * w.sqrt();
        if w > 1e-24 * top.max(1e-300) {
            pinv += v * v.transpose() / w.sqrt();
        }
    }
    (root, pinv)
}

/// Nuclear norm computed without the crate's SVD.
fn nuclear_eig(s: &DMatrix<f64>) -> f64 {
    let g = s.transpose() * s;
    g.symmetric_eigen().eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum()
}

/// Subgradient descent on `0.5 ||M - S||^2 + lambda ||S||_*` with step
/// `1 / (t + 1)`; stops once the subgradient norm drops below `tol` or after
/// `max_iter` steps. Returns the best objective seen.
pub fn subgradient_oracle(m: &DMatrix<f64>, lambda: f64, tol: f64, max_iter: usize) -> f64 {
    let obj = |s: &DMatrix<f64>| 0.5 * (m - s).norm_squared() + lambda * nuclear_eig(s);
    let mut s = m.clone();
    let mut best = obj(&s);
    for t in 0..max_iter {
        let (_, pinv) = sqrt_psd(&(s.transpose() * &s));
        // S (S^T S)^{+1/2} = U V^T restricted to the range of S.
        let g = (&s - m) + lambda * (&s * pinv);
        if g.norm() < tol {
            break;
        }
        s -= g * (1.0 / (t as f64 + 1.0));
        best = best.min(obj(&s));
    }
    best
}

/// Minimizer of the same objective by iteratively reweighted least squares
/// on the variational form `||S||_* = min_W 0.5 (tr(S^T W^{-1} S) + tr W)`:
/// `S <- W (W + lambda I)^{-1} M`, `W <- (S S^T)^{1/2}`. Independent of the
/// crate's SVD. Returns `(S, objective)`.
pub fn irls_oracle(m: &DMatrix<f64>, lambda: f64, iters: usize) -> (DMatrix<f64>, f64) {
    let p = m.nrows();
    let mut w = sqrt_psd(&(m * m.transpose())).0 + DMatrix::identity(p, p) * 1e-3;
    let mut s = m.clone();
    for _ in 0..iters {
        let mut a = w.clone();
        for i in 0..p {
            a[(i, i)] += lambda;
        }
        s = &w * a.lu().solve(m).unwrap();
        w = sqrt_psd(&(&s * s.transpose())).0 + DMatrix::identity(p, p) * 1e-300;
    }
    let obj = 0.5 * (m - &s).norm_squared() + lambda * nuclear_eig(&s);
    (s, obj)
}
