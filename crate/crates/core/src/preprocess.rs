//! Centering and noise scaling of outcomes, per-module covariate transforms,
//! and the inverse maps back to the original scale.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{MissingMask, MultiCohortDataset};
use crate::error::{MarrrError, Result};
use crate::modules_config::IndicatorConfig;
use crate::solver::ModelData;
use crate::{io, linalg};

/// Noise standard deviation estimated from the median singular value of a
/// centered matrix: `s_med / sqrt(max(p, n) * mu_beta)`, with `mu_beta` the
/// Marchenko-Pastur median at aspect ratio `min/max`.
pub fn estimate_sigma(centered: &DMatrix<f64>) -> Result<f64> {
    let (p, n) = centered.shape();
    let s = linalg::singular_values(centered)?;
    if s.is_empty() || s[0] == 0.0 {
        return Err(MarrrError::DegenerateInput("outcome matrix is constant after centering".into()));
    }
    let m = s.len();
    let med = if m % 2 == 1 { s[m / 2] } else { 0.5 * (s[m / 2 - 1] + s[m / 2]) };
    let (small, large) = (p.min(n) as f64, p.max(n) as f64);
    let mu = linalg::mp_median(small / large);
    let sigma = med / (large * mu).sqrt();
    if !(sigma > 0.0) {
        return Err(MarrrError::DegenerateInput(
            "median singular value is zero; the noise level cannot be estimated".into(),
        ));
    }
    Ok(sigma)
}

fn check_not_constant(centered: &DMatrix<f64>, x_norm: f64) -> Result<()> {
    if centered.norm() <= 1e-12 * x_norm {
        return Err(MarrrError::DegenerateInput("outcome matrix is constant after centering".into()));
    }
    Ok(())
}

fn check_x_shape(x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() < 2 || x.ncols() < 2 {
        return Err(MarrrError::Dimension(format!(
            "centering and scaling need at least 2 features and 2 samples, found {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(())
}

/// Returns `((X - row_means) / sigma_hat, row_means, sigma_hat)`.
pub fn center_and_scale_x(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    check_x_shape(x)?;
    let means = x.column_mean();
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &means;
    }
    check_not_constant(&centered, x.norm())?;
    let sigma = estimate_sigma(&centered)?;
    Ok((centered / sigma, means, sigma))
}

/// As [`center_and_scale_x`] with row means over observed cells only. The
/// noise level is estimated with masked cells set to zero after centering,
/// and masked cells are zero in the output.
pub fn center_and_scale_x_masked(x: &DMatrix<f64>, mask: &MissingMask) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    check_x_shape(x)?;
    let (p, n) = x.shape();
    let missing = mask.indicator(p, n);
    let mut sums = vec![0.0; p];
    let mut counts = vec![0usize; p];
    for j in 0..n {
        for i in 0..p {
            if !missing[j * p + i] {
                sums[i] += x[(i, j)];
                counts[i] += 1;
            }
        }
    }
    let means = DVector::from_fn(p, |i, _| if counts[i] > 0 { sums[i] / counts[i] as f64 } else { 0.0 });
    let mut centered = DMatrix::from_fn(p, n, |i, j| if missing[j * p + i] { 0.0 } else { x[(i, j)] - means[i] });
    let observed_norm = x.iter().filter(|v| v.is_finite()).map(|v| v * v).sum::<f64>().sqrt();
    check_not_constant(&centered, observed_norm)?;
    let sigma = estimate_sigma(&centered)?;
    centered /= sigma;
    Ok((centered, means, sigma))
}

/// Inverse of the outcome scaling: `sigma_hat * x + row_means`.
pub fn backmap_x(x_scaled: &DMatrix<f64>, info: &PreprocessInfo) -> DMatrix<f64> {
    let mut out = x_scaled * info.sigma_hat;
    for mut col in out.column_iter_mut() {
        col += &info.row_means;
    }
    out
}

/// How a covariate matrix was transformed before fitting.
#[derive(Debug, Clone, PartialEq)]
pub enum YTransform {
    Identity,
    /// Rows centered by `means`, then divided by `scales`.
    Standardize { means: DVector<f64>, scales: DVector<f64> },
    /// `Y = u diag(d) Y_orth`.
    Orthogonalize { u: DMatrix<f64>, d: DVector<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YTreatment {
    Orthogonalize,
    Standardize,
    None,
}

impl FromStr for YTreatment {
    type Err = MarrrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orthogonalize" | "orth" => Ok(YTreatment::Orthogonalize),
            "standardize" | "scale" => Ok(YTreatment::Standardize),
            "none" | "identity" => Ok(YTreatment::None),
            other => Err(MarrrError::Config(format!(
                "unknown covariate transform {other:?} (expected orthogonalize, standardize or none)"
            ))),
        }
    }
}

impl std::fmt::Display for YTreatment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            YTreatment::Orthogonalize => "orthogonalize",
            YTreatment::Standardize => "standardize",
            YTreatment::None => "none",
        })
    }
}

/// Centers each covariate row and divides it by the root of its sum of
/// squares.
pub fn standardize_y(y: &DMatrix<f64>) -> Result<(DMatrix<f64>, YTransform)> {
    let means = y.column_mean();
    let mut out = y.clone();
    for mut col in out.column_iter_mut() {
        col -= &means;
    }
    let mut scales = DVector::zeros(y.nrows());
    for i in 0..y.nrows() {
        let t = out.row(i).norm();
        if !(t > 1e-12 * (1.0 + means[i].abs())) {
            return Err(MarrrError::DegenerateCovariate(format!("covariate row {} has zero variance", i + 1)));
        }
        scales[i] = t;
        out.row_mut(i).unscale_mut(t);
    }
    Ok((out, YTransform::Standardize { means, scales }))
}

/// Replaces `Y` (q x n) by the right singular vectors of its SVD so that the
/// result has orthonormal rows; `Y = u diag(d) Y_orth`.
pub fn orthogonalize_y(y: &DMatrix<f64>) -> Result<(DMatrix<f64>, YTransform)> {
    let (q, n) = y.shape();
    if q >= n {
        return Err(MarrrError::Degeneracy(format!(
            "{q} covariates for {n} samples: with q >= n the covariate term cannot be told apart from an unsupervised one"
        )));
    }
    let dec = linalg::svd(y)?;
    let dmax = dec.s.iter().cloned().fold(0.0, f64::max);
    if dmax == 0.0 || dec.s.iter().any(|&d| d <= 1e-10 * dmax) {
        return Err(MarrrError::RankDeficiency(format!(
            "covariate matrix has rank below {q}; drop collinear covariates"
        )));
    }
    Ok((
        dec.v.transpose(),
        YTransform::Orthogonalize { u: dec.u, d: dec.s },
    ))
}

pub fn transform_y(y: &DMatrix<f64>, treatment: YTreatment) -> Result<(DMatrix<f64>, YTransform)> {
    match treatment {
        YTreatment::Orthogonalize => orthogonalize_y(y),
        YTreatment::Standardize => standardize_y(y),
        YTreatment::None => Ok((y.clone(), YTransform::Identity)),
    }
}

/// Maps a coefficient matrix fitted on transformed covariates to the
/// original covariates, so that `B_orig Y_centered = B_fit Y_transformed`
/// (`Y_centered` is `Y` itself for the orthogonalizing transform).
pub fn backmap_b(b_fit: &DMatrix<f64>, transform: &YTransform) -> DMatrix<f64> {
    match transform {
        YTransform::Identity => b_fit.clone(),
        YTransform::Standardize { scales, .. } => {
            let mut out = b_fit.clone();
            for (j, mut col) in out.column_iter_mut().enumerate() {
                col /= scales[j];
            }
            out
        }
        YTransform::Orthogonalize { u, d } => {
            let mut scaled = b_fit.clone();
            for (j, mut col) in scaled.column_iter_mut().enumerate() {
                col /= d[j];
            }
            scaled * u.transpose()
        }
    }
}

/// Everything needed to undo preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessInfo {
    pub row_means: DVector<f64>,
    pub sigma_hat: f64,
    pub y_transforms: Vec<YTransform>,
}

fn join(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

impl PreprocessInfo {
    /// Plain-text sidecar: `[section]` headers followed by comma-separated
    /// numeric rows.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("[sigma_hat]\n{}\n", self.sigma_hat));
        out.push_str("[row_means]\n");
        for v in self.row_means.iter() {
            out.push_str(&format!("{v}\n"));
        }
        out.push_str("[y_transforms]\n");
        for (k, t) in self.y_transforms.iter().enumerate() {
            let kind = match t {
                YTransform::Identity => "identity",
                YTransform::Standardize { .. } => "standardize",
                YTransform::Orthogonalize { .. } => "orthogonalize",
            };
            out.push_str(&format!("{},{kind}\n", k + 1));
        }
        for (k, t) in self.y_transforms.iter().enumerate() {
            match t {
                YTransform::Identity => {}
                YTransform::Standardize { means, scales } => {
                    out.push_str(&format!("[y_transform.{}.means]\n{}\n", k + 1, join(means.iter().copied())));
                    out.push_str(&format!("[y_transform.{}.scales]\n{}\n", k + 1, join(scales.iter().copied())));
                }
                YTransform::Orthogonalize { u, d } => {
                    out.push_str(&format!("[y_transform.{}.d]\n{}\n", k + 1, join(d.iter().copied())));
                    out.push_str(&format!("[y_transform.{}.u]\n", k + 1));
                    for row in u.row_iter() {
                        out.push_str(&join(row.iter().copied()));
                        out.push('\n');
                    }
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| MarrrError::Parse {
            location: "preprocess sidecar".into(),
            message: msg,
        };
        let mut sections: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = Some(name.to_string());
                sections.entry(name.to_string()).or_default();
            } else {
                let name = current.as_ref().ok_or_else(|| bad(format!("data before any section: {line:?}")))?;
                sections.get_mut(name).expect("section exists").push(line.to_string());
            }
        }
        let numbers = |line: &str| -> Result<Vec<f64>> {
            line.split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|_| bad(format!("not a number: {c:?}"))))
                .collect()
        };
        let section = |name: &str| -> Result<&Vec<String>> {
            sections.get(name).ok_or_else(|| bad(format!("missing section [{name}]")))
        };
        let sigma_hat = numbers(section("sigma_hat")?.first().ok_or_else(|| bad("empty sigma_hat".into()))?)?[0];
        let row_means: Vec<f64> = section("row_means")?
            .iter()
            .map(|l| numbers(l).map(|v| v[0]))
            .collect::<Result<_>>()?;
        let vector = |name: String| -> Result<DVector<f64>> {
            let lines = section(&name)?;
            Ok(DVector::from_vec(numbers(lines.first().ok_or_else(|| bad(format!("empty [{name}]")))?)?))
        };
        let mut y_transforms = Vec::new();
        for line in section("y_transforms")? {
            let (idx, kind) = line.split_once(',').ok_or_else(|| bad(format!("bad transform line {line:?}")))?;
            let idx = idx.trim();
            y_transforms.push(match kind.trim() {
                "identity" => YTransform::Identity,
                "standardize" => YTransform::Standardize {
                    means: vector(format!("y_transform.{idx}.means"))?,
                    scales: vector(format!("y_transform.{idx}.scales"))?,
                },
                "orthogonalize" => {
                    let d = vector(format!("y_transform.{idx}.d"))?;
                    let rows: Vec<Vec<f64>> = section(&format!("y_transform.{idx}.u"))?
                        .iter()
                        .map(|l| numbers(l))
                        .collect::<Result<_>>()?;
                    let q = rows.len();
                    if rows.iter().any(|r| r.len() != q) {
                        return Err(bad(format!("transform {idx}: u is not square")));
                    }
                    let flat: Vec<f64> = rows.into_iter().flatten().collect();
                    YTransform::Orthogonalize {
                        u: DMatrix::from_row_slice(q, q, &flat),
                        d,
                    }
                }
                other => return Err(bad(format!("unknown transform kind {other:?}"))),
            });
        }
        if !(sigma_hat > 0.0) {
            return Err(bad("sigma_hat must be positive".into()));
        }
        Ok(PreprocessInfo {
            row_means: DVector::from_vec(row_means),
            sigma_hat,
            y_transforms,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_text(path, &self.to_text())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&io::read_text(path)?)
    }
}

/// Scales outcomes (respecting `mask`) and transforms every covariate
/// module's matrix on its own active columns.
pub fn prepare(
    ds: &MultiCohortDataset,
    mask: &MissingMask,
    cfg: &IndicatorConfig,
    treatment: YTreatment,
) -> Result<(ModelData, PreprocessInfo)> {
    prepare_with(ds, mask, cfg, treatment, true)
}

/// Only divides by the noise estimate (row means recorded as zero). Meant
/// for data generated with mean-zero outcomes, where centering would only
/// blur comparisons against the generating matrices.
pub fn scale_x_uncentered(x: &DMatrix<f64>, mask: &MissingMask) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    check_x_shape(x)?;
    let (p, n) = x.shape();
    let missing = mask.indicator(p, n);
    let mut filled = DMatrix::from_fn(p, n, |i, j| if missing[j * p + i] { 0.0 } else { x[(i, j)] });
    if filled.iter().all(|&v| v == 0.0) {
        return Err(MarrrError::DegenerateInput("outcome matrix is identically zero".into()));
    }
    let sigma = estimate_sigma(&filled)?;
    filled /= sigma;
    Ok((filled, DVector::zeros(p), sigma))
}

pub fn prepare_with(
    ds: &MultiCohortDataset,
    mask: &MissingMask,
    cfg: &IndicatorConfig,
    treatment: YTreatment,
    center: bool,
) -> Result<(ModelData, PreprocessInfo)> {
    if cfg.num_cohorts() != ds.num_cohorts() {
        return Err(MarrrError::Dimension(format!(
            "indicator matrices describe {} cohorts, dataset has {}",
            cfg.num_cohorts(),
            ds.num_cohorts()
        )));
    }
    let (x, y, ranges) = ds.concatenated_view();
    let (xs, row_means, sigma_hat) = if !center {
        scale_x_uncentered(x, mask)?
    } else if mask.is_empty() {
        center_and_scale_x(x)?
    } else {
        center_and_scale_x_masked(x, mask)?
    };
    let mut ys = Vec::with_capacity(cfg.k());
    let mut y_transforms = Vec::with_capacity(cfg.k());
    for k in 0..cfg.k() {
        let raw = cfg.y_columns(k, &ranges).gather(y);
        let (t, info) = transform_y(&raw, treatment)?;
        ys.push(t);
        y_transforms.push(info);
    }
    let data = ModelData::with_module_ys(xs, ys, ranges, cfg.clone())?;
    Ok((
        data,
        PreprocessInfo {
            row_means,
            sigma_hat,
            y_transforms,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn standardize_example() {
        let (s, t) = standardize_y(&dmatrix![3.0, 4.0]).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!((s[(0, 0)] + r).abs() < 1e-15 && (s[(0, 1)] - r).abs() < 1e-15);
        match t {
            YTransform::Standardize { scales, .. } => assert!((scales[0] - 0.5f64.sqrt()).abs() < 1e-15),
            _ => unreachable!(),
        }
        let (again, t2) = standardize_y(&s).unwrap();
        assert!(linalg::max_abs_diff(&again, &s) < 1e-12);
        if let YTransform::Standardize { scales, .. } = t2 {
            assert!((scales[0] - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            standardize_y(&dmatrix![0.0, 0.0, 0.0; 1.0, 2.0, 3.0]),
            Err(MarrrError::DegenerateCovariate(_))
        ));
    }

    #[test]
    fn orthogonalize_guards() {
        let y = DMatrix::from_fn(10, 10, |i, j| ((i * 3 + j * 7) % 11) as f64);
        assert!(matches!(orthogonalize_y(&y), Err(MarrrError::Degeneracy(_))));
        let dup = dmatrix![1.0, 2.0, 3.0, 4.0; 2.0, 4.0, 6.0, 8.0];
        assert!(matches!(orthogonalize_y(&dup), Err(MarrrError::RankDeficiency(_))));
        let orth = dmatrix![1.0, 0.0, 0.0; 0.0, 1.0, 0.0];
        let (yo, t) = orthogonalize_y(&orth).unwrap();
        assert!(linalg::max_abs_diff(&(&yo * yo.transpose()), &DMatrix::identity(2, 2)) < 1e-12);
        if let YTransform::Orthogonalize { d, .. } = t {
            assert!(d.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn backmap_scalings() {
        let b = dmatrix![1.0, 2.0, 3.0; 4.0, 5.0, 6.0];
        assert_eq!(backmap_b(&b, &YTransform::Identity), b);
        let t = YTransform::Standardize {
            means: DVector::zeros(3),
            scales: DVector::from_element(3, 2.0),
        };
        assert_eq!(backmap_b(&b, &t), &b / 2.0);
    }

    #[test]
    fn backmap_x_examples() {
        let info = PreprocessInfo {
            row_means: DVector::from_vec(vec![1.0, -1.0]),
            sigma_hat: 2.0,
            y_transforms: vec![],
        };
        let z = backmap_x(&DMatrix::zeros(2, 3), &info);
        assert_eq!(z.column(2), info.row_means.column(0));
        let info0 = PreprocessInfo {
            row_means: DVector::zeros(2),
            ..info
        };
        assert_eq!(backmap_x(&DMatrix::from_element(2, 2, 1.0), &info0), DMatrix::from_element(2, 2, 2.0));
    }

    #[test]
    fn constant_input_is_degenerate() {
        let x = DMatrix::from_element(4, 5, 3.0);
        assert!(matches!(center_and_scale_x(&x), Err(MarrrError::DegenerateInput(_))));
        assert!(matches!(center_and_scale_x(&DMatrix::zeros(1, 5)), Err(MarrrError::Dimension(_))));
    }

    #[test]
    fn sidecar_round_trip() {
        let (_, t1) = orthogonalize_y(&dmatrix![1.0, 2.0, 0.5, -1.0; 0.3, -0.7, 2.0, 1.0]).unwrap();
        let (_, t2) = standardize_y(&dmatrix![1.0, 2.0, 4.0; 0.0, 1.0, 0.0]).unwrap();
        let info = PreprocessInfo {
            row_means: DVector::from_vec(vec![0.1, 1.0 / 3.0, -7.25]),
            sigma_hat: 1.2345678901234567,
            y_transforms: vec![t1, YTransform::Identity, t2],
        };
        let back = PreprocessInfo::from_text(&info.to_text()).unwrap();
        assert_eq!(back, info);
    }
}
