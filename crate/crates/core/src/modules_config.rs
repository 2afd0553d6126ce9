//! Module indicator matrices, penalties, penalty validity checks and module
//! selection.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::columns::ColumnSet;
use crate::dataset::MultiCohortDataset;
use crate::error::{MarrrError, Result};
use crate::{io, linalg};

/// Binary membership of cohorts in covariate (`C_Y`) and auxiliary (`C_S`)
/// modules. Stored module-major: `c_y[k][j]` is cohort `j` in module `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorConfig {
    num_cohorts: usize,
    c_y: Vec<Vec<bool>>,
    c_s: Vec<Vec<bool>>,
}

impl IndicatorConfig {
    pub fn new(num_cohorts: usize, c_y: Vec<Vec<bool>>, c_s: Vec<Vec<bool>>) -> Result<Self> {
        if num_cohorts == 0 {
            return Err(MarrrError::Config("indicator matrices need at least one cohort".into()));
        }
        for (name, cols) in [("C_Y", &c_y), ("C_S", &c_s)] {
            let mut seen = HashSet::new();
            for (i, col) in cols.iter().enumerate() {
                if col.len() != num_cohorts {
                    return Err(MarrrError::Config(format!(
                        "{name} column {i} has {} entries, expected {num_cohorts}",
                        col.len()
                    )));
                }
                if !col.iter().any(|&b| b) {
                    return Err(MarrrError::Config(format!("{name} column {i} is empty")));
                }
                if !seen.insert(col.clone()) {
                    return Err(MarrrError::Config(format!("{name} column {i} duplicates an earlier column")));
                }
            }
        }
        Ok(IndicatorConfig { num_cohorts, c_y, c_s })
    }

    /// Builds from 0/1 rows (one row per cohort) as they appear in files.
    pub fn from_rows(c_y_rows: &[Vec<u8>], c_s_rows: &[Vec<u8>]) -> Result<Self> {
        let j = c_y_rows.len().max(c_s_rows.len());
        let transpose = |rows: &[Vec<u8>]| -> Vec<Vec<bool>> {
            let k = rows.first().map_or(0, Vec::len);
            (0..k).map(|c| rows.iter().map(|r| r[c] != 0).collect()).collect()
        };
        Self::new(j, transpose(c_y_rows), transpose(c_s_rows))
    }

    /// No modules at all.
    pub fn empty(num_cohorts: usize) -> Self {
        IndicatorConfig {
            num_cohorts,
            c_y: Vec::new(),
            c_s: Vec::new(),
        }
    }

    pub fn num_cohorts(&self) -> usize {
        self.num_cohorts
    }

    pub fn k(&self) -> usize {
        self.c_y.len()
    }

    pub fn l(&self) -> usize {
        self.c_s.len()
    }

    pub fn y_module(&self, k: usize) -> &[bool] {
        &self.c_y[k]
    }

    pub fn s_module(&self, l: usize) -> &[bool] {
        &self.c_s[l]
    }

    pub fn c_y(&self) -> &[Vec<bool>] {
        &self.c_y
    }

    pub fn c_s(&self) -> &[Vec<bool>] {
        &self.c_s
    }

    pub fn y_columns(&self, k: usize, cohorts: &[std::ops::Range<usize>]) -> ColumnSet {
        ColumnSet::from_cohorts(&self.c_y[k], cohorts)
    }

    pub fn s_columns(&self, l: usize, cohorts: &[std::ops::Range<usize>]) -> ColumnSet {
        ColumnSet::from_cohorts(&self.c_s[l], cohorts)
    }

    /// Cohort indices belonging to a module column.
    pub fn members(col: &[bool]) -> Vec<usize> {
        col.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j).collect()
    }

    /// Same modules for covariates and auxiliary terms.
    pub fn symmetric(num_cohorts: usize, cols: Vec<Vec<bool>>) -> Result<Self> {
        Self::new(num_cohorts, cols.clone(), cols)
    }

    /// Global module plus one individual module per cohort, for both terms.
    pub fn global_individual(num_cohorts: usize) -> Self {
        let mut cols = vec![vec![true; num_cohorts]];
        if num_cohorts > 1 {
            for j in 0..num_cohorts {
                let mut c = vec![false; num_cohorts];
                c[j] = true;
                cols.push(c);
            }
        }
        Self::symmetric(num_cohorts, cols).expect("distinct non-empty columns")
    }

    pub fn with_c_y(&self, c_y: Vec<Vec<bool>>) -> Result<Self> {
        Self::new(self.num_cohorts, c_y, self.c_s.clone())
    }

    pub fn with_c_s(&self, c_s: Vec<Vec<bool>>) -> Result<Self> {
        Self::new(self.num_cohorts, self.c_y.clone(), c_s)
    }

    /// CSV with one row per cohort and one column per module. Covariate
    /// module headers start with `Y`, auxiliary ones with `S`.
    pub fn write(&self, path: &Path, cohort_ids: &[String]) -> Result<()> {
        assert_eq!(cohort_ids.len(), self.num_cohorts);
        let mut header = vec!["cohort_id".to_string()];
        header.extend((1..=self.k()).map(|k| format!("Y{k}")));
        header.extend((1..=self.l()).map(|l| format!("S{l}")));
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> = (0..self.num_cohorts)
            .map(|j| {
                let mut r = vec![cohort_ids[j].clone()];
                r.extend(self.c_y.iter().chain(&self.c_s).map(|c| u8::from(c[j]).to_string()));
                r
            })
            .collect();
        io::write_records(path, &header_refs, &rows)
    }

    /// Reads the format of [`write`](Self::write); rows are matched to
    /// `cohort_ids` by id.
    pub fn read(path: &Path, cohort_ids: &[String]) -> Result<Self> {
        let (header, rows) = io::read_records(path)?;
        if header.is_empty() {
            return Err(MarrrError::Config(format!("{}: empty indicator file", path.display())));
        }
        let mut kinds = Vec::with_capacity(header.len() - 1);
        for h in &header[1..] {
            match h.chars().next() {
                Some('Y') | Some('y') => kinds.push(true),
                Some('S') | Some('s') => kinds.push(false),
                _ => {
                    return Err(MarrrError::Config(format!(
                        "{}: module column {h:?} must start with Y or S",
                        path.display()
                    )))
                }
            }
        }
        let mut by_cohort: Vec<Option<Vec<bool>>> = vec![None; cohort_ids.len()];
        for (line, r) in rows.iter().enumerate() {
            let j = cohort_ids.iter().position(|c| c == &r[0]).ok_or_else(|| {
                MarrrError::Config(format!("{}: unknown cohort {:?}", path.display(), r[0]))
            })?;
            let mut flags = Vec::with_capacity(kinds.len());
            for (col, cell) in r.iter().enumerate().skip(1) {
                flags.push(match cell.as_str() {
                    "0" => false,
                    "1" => true,
                    other => {
                        return Err(MarrrError::Parse {
                            location: format!("{}:{}:{}", path.display(), line + 2, col + 1),
                            message: format!("indicator entries must be 0 or 1, found {other:?}"),
                        })
                    }
                });
            }
            if by_cohort[j].replace(flags).is_some() {
                return Err(MarrrError::Config(format!("{}: cohort {:?} listed twice", path.display(), r[0])));
            }
        }
        let rows: Vec<Vec<bool>> = by_cohort
            .into_iter()
            .zip(cohort_ids)
            .map(|(r, id)| r.ok_or_else(|| MarrrError::Config(format!("{}: cohort {id:?} missing", path.display()))))
            .collect::<Result<_>>()?;
        let pick = |want: bool| -> Vec<Vec<bool>> {
            kinds
                .iter()
                .enumerate()
                .filter(|(_, &k)| k == want)
                .map(|(c, _)| rows.iter().map(|r| r[c]).collect())
                .collect()
        };
        Self::new(cohort_ids.len(), pick(true), pick(false))
    }
}

/// Nuclear-norm weights, one per module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySet {
    pub lambda_b: Vec<f64>,
    pub lambda_s: Vec<f64>,
}

impl PenaltySet {
    pub fn new(lambda_b: Vec<f64>, lambda_s: Vec<f64>) -> Result<Self> {
        let p = PenaltySet { lambda_b, lambda_s };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.lambda_b.iter().chain(&self.lambda_s).find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(MarrrError::Config(format!("penalties must be positive and finite, found {v}")));
        }
        Ok(())
    }

    pub fn check_shape(&self, cfg: &IndicatorConfig) -> Result<()> {
        if self.lambda_b.len() != cfg.k() || self.lambda_s.len() != cfg.l() {
            return Err(MarrrError::Dimension(format!(
                "{} covariate and {} auxiliary penalties for {} and {} modules",
                self.lambda_b.len(),
                self.lambda_s.len(),
                cfg.k(),
                cfg.l()
            )));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .lambda_b
            .iter()
            .enumerate()
            .map(|(k, v)| vec!["B".into(), (k + 1).to_string(), format!("{v}")])
            .chain(
                self.lambda_s
                    .iter()
                    .enumerate()
                    .map(|(l, v)| vec!["S".into(), (l + 1).to_string(), format!("{v}")]),
            )
            .collect();
        io::write_records(path, &["term", "module", "lambda"], &rows)
    }

    /// Reads the format of [`write`](Self::write). Modules of each term must
    /// appear in order.
    pub fn read(path: &Path) -> Result<Self> {
        let (header, rows) = io::read_records(path)?;
        if header != ["term", "module", "lambda"] {
            return Err(MarrrError::Schema(format!(
                "{}: expected header term,module,lambda",
                path.display()
            )));
        }
        let (mut lambda_b, mut lambda_s) = (Vec::new(), Vec::new());
        for (line, r) in rows.iter().enumerate() {
            let location = format!("{}:{}", path.display(), line + 2);
            let bad = |message: String| MarrrError::Parse {
                location: location.clone(),
                message,
            };
            if r.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", r.len())));
            }
            let target = match r[0].as_str() {
                "B" => &mut lambda_b,
                "S" => &mut lambda_s,
                other => return Err(bad(format!("term must be B or S, found {other:?}"))),
            };
            let module: usize = r[1].parse().map_err(|_| bad(format!("bad module index {:?}", r[1])))?;
            if module != target.len() + 1 {
                return Err(bad(format!("module {module} out of order")));
            }
            let v: f64 = r[2].parse().map_err(|_| bad(format!("bad penalty {:?}", r[2])))?;
            target.push(v);
        }
        Self::new(lambda_b, lambda_s)
    }
}

/// Penalties at the expected largest singular value of unit-variance noise:
/// `sqrt(p) + sqrt(q)` for covariate modules and `sqrt(p) + sqrt(n_l)` for
/// auxiliary modules covering `n_l` samples. Assumes the data were scaled to
/// unit noise variance.
pub fn rmt_penalties_for(p: usize, q: usize, cohort_sizes: &[usize], cfg: &IndicatorConfig) -> Result<PenaltySet> {
    if cohort_sizes.len() != cfg.num_cohorts() {
        return Err(MarrrError::Dimension(format!(
            "{} cohort sizes for {} cohorts",
            cohort_sizes.len(),
            cfg.num_cohorts()
        )));
    }
    let sp = (p as f64).sqrt();
    let lambda_b = vec![sp + (q as f64).sqrt(); cfg.k()];
    let mut lambda_s = Vec::with_capacity(cfg.l());
    for (l, col) in cfg.c_s().iter().enumerate() {
        let n_l: usize = col.iter().zip(cohort_sizes).filter(|(&b, _)| b).map(|(_, &n)| n).sum();
        if n_l == 0 {
            return Err(MarrrError::Config(format!("auxiliary module {l} covers no samples")));
        }
        lambda_s.push(sp + (n_l as f64).sqrt());
    }
    Ok(PenaltySet { lambda_b, lambda_s })
}

pub fn rmt_penalties(ds: &MultiCohortDataset, cfg: &IndicatorConfig) -> Result<PenaltySet> {
    rmt_penalties_for(ds.p(), ds.q(), &ds.cohort_sizes(), cfg)
}

/// A failed penalty validity condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyViolation {
    /// 1..=4.
    pub condition: u8,
    /// Offending module (covariate index for conditions 1-2, auxiliary for 3-4).
    pub module: usize,
    /// Modules of the cover (or the containing module for condition 3).
    pub others: Vec<usize>,
    /// Penalty of `module`.
    pub lambda: f64,
    /// Bound it must stay strictly below.
    pub bound: f64,
}

impl std::fmt::Display for DegeneracyViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let term = if self.condition <= 2 { "covariate" } else { "auxiliary" };
        write!(
            f,
            "condition {}: {term} module {} has penalty {:.6} >= bound {:.6} (modules {:?})",
            self.condition,
            self.module + 1,
            self.lambda,
            self.bound,
            self.others.iter().map(|i| i + 1).collect::<Vec<_>>()
        )
    }
}

/// Beyond this many candidate modules, covers are searched only up to size 3.
const EXHAUSTIVE_COVER_LIMIT: usize = 12;

/// Subsets `I` of `candidates` with `sum_{i in I} cols[i] == c * target`
/// for a positive integer `c`; yields `(I, c)`.
fn exact_covers(target: &[bool], cols: &[Vec<bool>], candidates: &[usize]) -> Vec<(Vec<usize>, usize)> {
    // Only modules inside the target's support can take part in a cover.
    let inside: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&i| cols[i].iter().zip(target).all(|(&a, &t)| !a || t))
        .collect();
    let mut out = Vec::new();
    let check = |subset: &[usize], out: &mut Vec<(Vec<usize>, usize)>| {
        let mut counts = vec![0usize; target.len()];
        for &i in subset {
            for (c, &b) in counts.iter_mut().zip(&cols[i]) {
                *c += usize::from(b);
            }
        }
        let c = counts.iter().zip(target).find(|(_, &t)| t).map_or(0, |(&c, _)| c);
        if c > 0 && counts.iter().zip(target).all(|(&n, &t)| n == if t { c } else { 0 }) {
            out.push((subset.to_vec(), c));
        }
    };
    if inside.len() <= EXHAUSTIVE_COVER_LIMIT {
        for bits in 1u32..(1u32 << inside.len()) {
            let subset: Vec<usize> = (0..inside.len()).filter(|b| bits & (1 << b) != 0).map(|b| inside[b]).collect();
            check(&subset, &mut out);
        }
    } else {
        let m = inside.len();
        for a in 0..m {
            check(&[inside[a]], &mut out);
            for b in a + 1..m {
                check(&[inside[a], inside[b]], &mut out);
                for c in b + 1..m {
                    check(&[inside[a], inside[b], inside[c]], &mut out);
                }
            }
        }
    }
    out
}

/// Evaluates the four penalty conditions under which no module is forced to
/// zero. `y_nuclear[k]` is the nuclear norm of covariate module `k`'s matrix.
/// For each offending module the tightest failing cover is reported.
pub fn check_degeneracy(cfg: &IndicatorConfig, pen: &PenaltySet, y_nuclear: &[f64]) -> Result<Vec<DegeneracyViolation>> {
    pen.check_shape(cfg)?;
    if y_nuclear.len() != cfg.k() {
        return Err(MarrrError::Dimension(format!(
            "{} covariate norms for {} modules",
            y_nuclear.len(),
            cfg.k()
        )));
    }
    let mut out = Vec::new();
    let worst = |module: usize, lambda: f64, condition: u8, covers: Vec<(Vec<usize>, f64)>| {
        covers
            .into_iter()
            .filter(|(_, bound)| lambda >= *bound)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(others, bound)| DegeneracyViolation {
                condition,
                module,
                others,
                lambda,
                bound,
            })
    };

    let all_y: Vec<usize> = (0..cfg.k()).collect();
    let all_s: Vec<usize> = (0..cfg.l()).collect();
    for k in 0..cfg.k() {
        let others: Vec<usize> = all_y.iter().copied().filter(|&i| i != k).collect();
        let covers = exact_covers(&cfg.c_y[k], &cfg.c_y, &others)
            .into_iter()
            .map(|(set, c)| {
                let b = set.iter().map(|&i| pen.lambda_b[i]).sum::<f64>() / c as f64;
                (set, b)
            })
            .collect();
        out.extend(worst(k, pen.lambda_b[k], 1, covers));

        let covers = exact_covers(&cfg.c_y[k], &cfg.c_s, &all_s)
            .into_iter()
            .map(|(set, c)| {
                let b = set.iter().map(|&i| pen.lambda_s[i]).sum::<f64>() * y_nuclear[k] / c as f64;
                (set, b)
            })
            .collect();
        out.extend(worst(k, pen.lambda_b[k], 2, covers));
    }

    for l in 0..cfg.l() {
        // l is nested in m: it must carry the smaller penalty.
        let containers: Vec<(Vec<usize>, f64)> = all_s
            .iter()
            .copied()
            .filter(|&m| m != l && cfg.c_s[m].iter().zip(&cfg.c_s[l]).all(|(&a, &b)| a >= b))
            .map(|m| (vec![m], pen.lambda_s[m]))
            .collect();
        out.extend(worst(l, pen.lambda_s[l], 3, containers));

        let others: Vec<usize> = all_s.iter().copied().filter(|&i| i != l).collect();
        let covers = exact_covers(&cfg.c_s[l], &cfg.c_s, &others)
            .into_iter()
            .map(|(set, c)| {
                let b = set.iter().map(|&i| pen.lambda_s[i]).sum::<f64>() / c as f64;
                (set, b)
            })
            .collect();
        out.extend(worst(l, pen.lambda_s[l], 4, covers));
    }
    Ok(out)
}

/// Nuclear norm of each covariate module's matrix on its active columns.
pub fn module_y_nuclear_norms(ys: &[DMatrix<f64>]) -> Result<Vec<f64>> {
    ys.iter().map(linalg::nuclear_norm).collect()
}

/// All non-empty cohort subsets as symmetric modules, largest first, then
/// lexicographic on member lists, truncated to `max_modules`.
pub fn enumerate_modules(num_cohorts: usize, max_modules: usize) -> Result<IndicatorConfig> {
    if num_cohorts == 0 {
        return Err(MarrrError::Config("cannot enumerate modules over zero cohorts".into()));
    }
    if num_cohorts > 10 {
        return Err(MarrrError::Config(format!(
            "enumerating all modules over {num_cohorts} cohorts is infeasible; use forward selection"
        )));
    }
    let mut subsets: Vec<Vec<usize>> = (1u32..(1 << num_cohorts))
        .map(|bits| (0..num_cohorts).filter(|j| bits & (1 << j) != 0).collect())
        .collect();
    subsets.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    subsets.truncate(max_modules);
    let cols = subsets
        .into_iter()
        .map(|s| {
            let mut c = vec![false; num_cohorts];
            for j in s {
                c[j] = true;
            }
            c
        })
        .collect();
    IndicatorConfig::symmetric(num_cohorts, cols)
}

/// Objective decrease from fitting one auxiliary module on `cols` of the
/// residual: `sum_i (sigma_i - lambda)_+^2 / 2` with `lambda = sqrt(p) + sqrt(n_A)`.
fn module_gain(residual: &DMatrix<f64>, cols: &ColumnSet) -> Result<f64> {
    let block = cols.gather(residual);
    let lambda = (block.nrows() as f64).sqrt() + (block.ncols() as f64).sqrt();
    Ok(linalg::singular_values(&block)?
        .into_iter()
        .map(|s| 0.5 * (s - lambda).max(0.0).powi(2))
        .sum())
}

/// Greedy construction of up to `l_max` modules on scaled data `x` (p x n)
/// with the given cohort column ranges. Each module starts empty and grows by
/// the cohort giving the largest strict decrease of the unsupervised
/// objective; its thresholded fit is then removed from the residual. The
/// covariate modules are set equal to the auxiliary ones.
pub fn forward_select_scaled(
    x: &DMatrix<f64>,
    cohorts: &[std::ops::Range<usize>],
    l_max: usize,
) -> Result<IndicatorConfig> {
    let num_cohorts = cohorts.len();
    let mut residual = x.clone();
    let mut modules: Vec<Vec<bool>> = Vec::new();
    while modules.len() < l_max {
        let mut members = vec![false; num_cohorts];
        let mut best_gain = 0.0;
        loop {
            let mut pick: Option<(usize, f64)> = None;
            for j in (0..num_cohorts).filter(|&j| !members[j]) {
                let mut trial = members.clone();
                trial[j] = true;
                let g = module_gain(&residual, &ColumnSet::from_cohorts(&trial, cohorts))?;
                if g > best_gain && pick.is_none_or(|(_, pg)| g > pg) {
                    pick = Some((j, g));
                }
            }
            match pick {
                Some((j, g)) => {
                    members[j] = true;
                    best_gain = g;
                }
                None => break,
            }
        }
        if !members.iter().any(|&b| b) || modules.contains(&members) {
            break;
        }
        let cols = ColumnSet::from_cohorts(&members, cohorts);
        let block = cols.gather(&residual);
        let lambda = (block.nrows() as f64).sqrt() + (block.ncols() as f64).sqrt();
        let fit = linalg::svt(&block, lambda)?;
        cols.scatter_add(&fit, -1.0, &mut residual);
        modules.push(members);
    }
    IndicatorConfig::symmetric(num_cohorts, modules)
}

/// Forward selection on a dataset whose outcomes are already centered and
/// scaled to unit noise variance.
pub fn forward_select(ds: &MultiCohortDataset, l_max: usize) -> Result<IndicatorConfig> {
    let (x, _, ranges) = ds.concatenated_view();
    forward_select_scaled(x, &ranges, l_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols(v: &[&[u8]]) -> Vec<Vec<bool>> {
        v.iter().map(|c| c.iter().map(|&b| b != 0).collect()).collect()
    }

    #[test]
    fn invariants_enforced() {
        assert!(IndicatorConfig::new(2, cols(&[&[1, 0], &[1, 0]]), vec![]).is_err());
        assert!(IndicatorConfig::new(2, cols(&[&[0, 0]]), vec![]).is_err());
        assert!(IndicatorConfig::new(2, cols(&[&[1]]), vec![]).is_err());
        assert!(IndicatorConfig::new(2, cols(&[&[1, 0]]), cols(&[&[1, 0]])).is_ok());
    }

    #[test]
    fn default_penalty_values() {
        let cfg = IndicatorConfig::symmetric(1, cols(&[&[1]])).unwrap();
        let pen = rmt_penalties_for(1000, 50, &[976], &cfg).unwrap();
        assert!((pen.lambda_b[0] - 38.694).abs() < 1e-3, "{}", pen.lambda_b[0]);
        assert!((pen.lambda_s[0] - 62.864).abs() < 1e-3, "{}", pen.lambda_s[0]);
        let tiny = rmt_penalties_for(1, 1, &[1], &cfg).unwrap();
        assert_eq!((tiny.lambda_b[0], tiny.lambda_s[0]), (2.0, 2.0));
    }

    #[test]
    fn enumerate_order() {
        let two = enumerate_modules(2, usize::MAX).unwrap();
        assert_eq!(two.c_s(), &cols(&[&[1, 1], &[1, 0], &[0, 1]])[..]);
        assert_eq!(two.c_y(), two.c_s());
        let three = enumerate_modules(3, 3).unwrap();
        assert_eq!(three.c_s(), &cols(&[&[1, 1, 1], &[1, 1, 0], &[1, 0, 1]])[..]);
        assert!(matches!(enumerate_modules(11, 5), Err(MarrrError::Config(_))));
        assert_eq!(enumerate_modules(10, usize::MAX).unwrap().l(), 1023);
    }

    #[test]
    fn condition4_holds_for_rmt_global_split() {
        let cfg = IndicatorConfig::new(2, vec![], cols(&[&[1, 1], &[1, 0], &[0, 1]])).unwrap();
        let pen = rmt_penalties_for(50, 3, &[20, 30], &cfg).unwrap();
        assert!(check_degeneracy(&cfg, &pen, &[]).unwrap().is_empty());
    }

    #[test]
    fn condition3_nested_violation() {
        let cfg = IndicatorConfig::new(2, vec![], cols(&[&[1, 1], &[1, 0]])).unwrap();
        let pen = PenaltySet::new(vec![], vec![5.0, 6.0]).unwrap();
        let v = check_degeneracy(&cfg, &pen, &[]).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].condition, v[0].module, v[0].others.clone()), (3, 1, vec![0]));
    }

    #[test]
    fn condition1_and_4_violations() {
        let c = cols(&[&[1, 1], &[1, 0], &[0, 1]]);
        let cfg = IndicatorConfig::new(2, c.clone(), vec![]).unwrap();
        let pen = PenaltySet::new(vec![10.0, 4.0, 4.0], vec![]).unwrap();
        let v = check_degeneracy(&cfg, &pen, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].condition, v[0].module, v[0].others.clone()), (1, 0, vec![1, 2]));
        assert_eq!(v[0].bound, 8.0);

        let cfg = IndicatorConfig::new(2, vec![], c).unwrap();
        let pen = PenaltySet::new(vec![], vec![10.0, 4.0, 4.0]).unwrap();
        let v = check_degeneracy(&cfg, &pen, &[]).unwrap();
        assert!(v.iter().any(|x| x.condition == 4 && x.module == 0));
    }

    #[test]
    fn condition2_boundary() {
        let y = DMatrix::from_row_slice(2, 5, &[1.0, 2.0, 0.0, -1.0, 3.0, 0.5, -1.0, 2.0, 1.0, 0.0]);
        let ynorm = linalg::nuclear_norm(&y).unwrap();
        let cfg = IndicatorConfig::symmetric(1, cols(&[&[1]])).unwrap();
        let lambda_s = 2.0;
        let pen = PenaltySet::new(vec![lambda_s * ynorm], vec![lambda_s]).unwrap();
        let v = check_degeneracy(&cfg, &pen, &[ynorm]).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].condition, 2);
        let pen = PenaltySet::new(vec![lambda_s * ynorm * 0.999], vec![lambda_s]).unwrap();
        assert!(check_degeneracy(&cfg, &pen, &[ynorm]).unwrap().is_empty());
    }

    #[test]
    fn indicator_csv_round_trip() {
        let cfg = IndicatorConfig::new(3, cols(&[&[1, 1, 1]]), cols(&[&[1, 1, 0], &[0, 0, 1]])).unwrap();
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ind.csv");
        cfg.write(&path, &ids).unwrap();
        assert_eq!(IndicatorConfig::read(&path, &ids).unwrap(), cfg);
        let shuffled: Vec<String> = ["c", "a", "b"].iter().map(|s| s.to_string()).collect();
        let other = IndicatorConfig::read(&path, &shuffled).unwrap();
        assert_eq!(other.s_module(1), &[true, false, false]);
    }

    #[test]
    fn forward_select_empty_budget() {
        let x = DMatrix::from_fn(4, 6, |i, j| (i + j) as f64);
        let cfg = forward_select_scaled(&x, &[0..3, 3..6], 0).unwrap();
        assert_eq!((cfg.k(), cfg.l()), (0, 0));
    }
}
