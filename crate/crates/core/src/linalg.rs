//! Dense linear-algebra kernels shared by every module.
//!
//! Matrices are `nalgebra::DMatrix<f64>`. Singular value decompositions are
//! delegated to `faer`, which is markedly faster than nalgebra's
//! Golub-Kahan implementation at the sizes this crate works with.

use faer::Mat;
use nalgebra::{DMatrix, DVector};

use crate::error::{MarrrError, Result};

/// Thin singular value decomposition `m = u * diag(s) * v^T`.
///
/// Singular values are sorted in decreasing order. Within each left singular
/// vector the entry of largest magnitude is positive (ties go to the lowest
/// index) and the matching right vector is flipped along with it.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl Svd {
    pub fn rank_above(&self, threshold: f64) -> usize {
        self.s.iter().filter(|&&x| x > threshold).count()
    }
}

fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn svd(m: &DMatrix<f64>) -> Result<Svd> {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Ok(Svd {
            u: DMatrix::zeros(rows, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(cols, 0),
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(MarrrError::Numerical(
            "matrix passed to SVD contains non-finite entries".into(),
        ));
    }
    let fm = to_faer(m);
    let dec = fm
        .thin_svd()
        .map_err(|e| MarrrError::Numerical(format!("SVD did not converge: {e:?}")))?;
    let fu = dec.U();
    let fv = dec.V();
    let fs = dec.S().column_vector();

    // faer does not promise an ordering; sort explicitly.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| fs[b].partial_cmp(&fs[a]).unwrap_or(std::cmp::Ordering::Equal));

    let mut u = DMatrix::zeros(rows, k);
    let mut v = DMatrix::zeros(cols, k);
    let mut s = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = fs[src].max(0.0);
        let mut pivot = 0usize;
        let mut best = -1.0f64;
        for i in 0..rows {
            let a = fu[(i, src)].abs();
            if a > best {
                best = a;
                pivot = i;
            }
        }
        let sign = if fu[(pivot, src)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..rows {
            u[(i, dst)] = sign * fu[(i, src)];
        }
        for j in 0..cols {
            v[(j, dst)] = sign * fv[(j, src)];
        }
    }
    Ok(Svd { u, s, v })
}

pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows().min(m.ncols()) == 0 {
        return Ok(Vec::new());
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(MarrrError::Numerical(
            "matrix passed to SVD contains non-finite entries".into(),
        ));
    }
    let mut s = to_faer(m)
        .singular_values()
        .map_err(|e| MarrrError::Numerical(format!("SVD did not converge: {e:?}")))?;
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(s)
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

/// Result of soft-thresholding the singular values of a matrix: only the
/// components that survive the threshold are kept.
#[derive(Debug, Clone)]
pub struct Thresholded {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Thresholded {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.s.sum()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        if self.s.is_empty() {
            return DMatrix::zeros(self.rows, self.cols);
        }
        let mut us = self.u.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= self.s[j];
        }
        us * self.v.transpose()
    }

    /// Balanced factors `(u sqrt(s), v sqrt(s))`, the minimum-Frobenius
    /// factorization of the thresholded matrix.
    pub fn balanced(&self) -> LowRank {
        let mut u = self.u.clone();
        let mut v = self.v.clone();
        for j in 0..self.s.len() {
            let r = self.s[j].sqrt();
            u.column_mut(j).scale_mut(r);
            v.column_mut(j).scale_mut(r);
        }
        LowRank { u, v }
    }
}

/// Soft-thresholds the singular values of `m` by `lambda`.
pub fn soft_threshold(m: &DMatrix<f64>, lambda: f64) -> Result<Thresholded> {
    let dec = svd(m)?;
    let keep = dec.rank_above(lambda);
    let s = DVector::from_iterator(keep, dec.s.iter().take(keep).map(|x| x - lambda));
    Ok(Thresholded {
        u: dec.u.columns(0, keep).into_owned(),
        s,
        v: dec.v.columns(0, keep).into_owned(),
        rows: m.nrows(),
        cols: m.ncols(),
    })
}

/// Singular value thresholding: the minimizer of
/// `0.5 * ||m - s||_F^2 + lambda * ||s||_*`.
pub fn svt(m: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    Ok(soft_threshold(m, lambda.max(0.0))?.dense())
}

/// A matrix held as `u * v^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRank {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl LowRank {
    pub fn zeros(rows: usize, cols: usize, rank: usize) -> Self {
        LowRank {
            u: DMatrix::zeros(rows, rank),
            v: DMatrix::zeros(cols, rank),
        }
    }

    pub fn nrows(&self) -> usize {
        self.u.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.v.nrows()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        &self.u * self.v.transpose()
    }

    /// `||u v^T||_F^2` from the two Gram matrices.
    pub fn frob2(&self) -> f64 {
        let gu = self.u.transpose() * &self.u;
        let gv = self.v.transpose() * &self.v;
        gu.component_mul(&gv).sum()
    }

    /// `||u v^T - other.u other.v^T||_F^2` without forming either product.
    pub fn dist2(&self, other: &LowRank) -> f64 {
        let cross_u = self.u.transpose() * &other.u;
        let cross_v = self.v.transpose() * &other.v;
        (self.frob2() + other.frob2() - 2.0 * cross_u.component_mul(&cross_v).sum()).max(0.0)
    }

    pub fn factor_penalty(&self) -> f64 {
        self.u.norm_squared() + self.v.norm_squared()
    }

    /// Singular values of `u v^T`, from the SVD of the product of the two
    /// triangular QR factors.
    pub fn singular_values(&self) -> Result<Vec<f64>> {
        if self.u.ncols() == 0 || self.u.nrows() == 0 || self.v.nrows() == 0 {
            return Ok(Vec::new());
        }
        let ru = self.u.clone().qr().r();
        let rv = self.v.clone().qr().r();
        singular_values(&(ru * rv.transpose()))
    }

    pub fn nuclear_norm(&self) -> Result<f64> {
        Ok(self.singular_values()?.iter().sum())
    }

    /// Widens both factors to `rank` columns with zeros.
    pub fn padded(&self, rank: usize) -> LowRank {
        let r = self.u.ncols();
        if rank <= r {
            return self.clone();
        }
        LowRank {
            u: self.u.clone().resize_horizontally(rank, 0.0),
            v: self.v.clone().resize_horizontally(rank, 0.0),
        }
    }
}

pub fn frob2(m: &DMatrix<f64>) -> f64 {
    m.norm_squared()
}

/// Largest singular value by power iteration on `m^T m`.
pub fn top_singular_value(m: &DMatrix<f64>, max_iter: usize, tol: f64) -> f64 {
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 {
        return 0.0;
    }
    // Deterministic start that is not orthogonal to typical dominant vectors.
    let mut x = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 101) as f64 / 101.0);
    x /= x.norm();
    let mut sigma = 0.0;
    for _ in 0..max_iter {
        let y = m * &x;
        let z = m.transpose() * &y;
        let nz = z.norm();
        if nz == 0.0 {
            return 0.0;
        }
        let next = y.norm();
        x = z / nz;
        if (next - sigma).abs() <= tol * next.max(1e-300) {
            break;
        }
        sigma = next;
    }
    (m * &x).norm()
}

/// Sample standard deviation (n - 1 denominator) over all entries.
pub fn sample_sd(m: &DMatrix<f64>) -> f64 {
    let n = m.len();
    if n < 2 {
        return 0.0;
    }
    let mean = m.mean();
    let ss: f64 = m.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (n as f64 - 1.0)).sqrt()
}

/// Marchenko-Pastur cumulative distribution at `x` for aspect ratio
/// `beta` in (0, 1], unit noise variance.
fn mp_cdf(beta: f64, x: f64) -> f64 {
    let lo = (1.0 - beta.sqrt()).powi(2);
    let hi = (1.0 + beta.sqrt()).powi(2);
    if x <= lo {
        return 0.0;
    }
    if x >= hi {
        return 1.0;
    }
    // t = lo + (hi - lo) (1 - cos theta) / 2 removes the square-root
    // singularities at both edges of the support.
    let half = (hi - lo) / 2.0;
    let theta_max = (1.0 - (x - lo) / half).clamp(-1.0, 1.0).acos();
    let integrand = |theta: f64| {
        let t = lo + half * (1.0 - theta.cos());
        let sin = theta.sin();
        if t <= 0.0 {
            // beta == 1 at theta == 0: the limit of sin^2 / (1 - cos) is 2.
            return half * 2.0 / (2.0 * std::f64::consts::PI * beta);
        }
        half * half * sin * sin / (2.0 * std::f64::consts::PI * beta * t)
    };
    simpson(integrand, 0.0, theta_max, 2000)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Median of the Marchenko-Pastur law with aspect ratio `beta`
/// (`0 < beta <= 1`), accurate to about 1e-10.
pub fn mp_median(beta: f64) -> f64 {
    assert!(beta > 0.0 && beta <= 1.0, "aspect ratio must lie in (0, 1]");
    let mut lo = (1.0 - beta.sqrt()).powi(2);
    let mut hi = (1.0 + beta.sqrt()).powi(2);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mp_cdf(beta, mid) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = a.clone().cholesky().ok_or_else(|| {
        MarrrError::Numerical("normal-equation matrix is not positive definite".into())
    })?;
    Ok(chol.solve(b))
}

/// `m * (g + lambda I)^{-1}` for symmetric `g`; the right-hand ridge solve
/// used throughout the factored updates.
pub fn right_ridge_solve(m: &DMatrix<f64>, g: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let mut a = g.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    // x a = m  <=>  a x^T = m^T (a symmetric)
    Ok(solve_spd(&a, &m.transpose())?.transpose())
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
