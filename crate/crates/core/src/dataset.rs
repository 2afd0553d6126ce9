//! Multi-cohort outcome/covariate data.
//!
//! Matrices are stored features-as-rows and samples-as-columns. Cohorts are
//! concatenated column-wise in a fixed order, so every cohort owns one
//! contiguous column range of `X·` and `Y·`.

use std::collections::{HashMap, HashSet};
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MarrrError, Result};
use crate::io;

/// One cohort's data before concatenation.
#[derive(Debug, Clone)]
pub struct CohortBlock {
    pub cohort_id: String,
    /// Outcomes, p x n_j. `NaN` marks a missing cell.
    pub x: DMatrix<f64>,
    /// Covariates, q x n_j. Always fully observed.
    pub y: DMatrix<f64>,
    pub sample_ids: Vec<String>,
    pub feature_ids: Vec<String>,
    pub covariate_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cohort {
    pub id: String,
    pub sample_ids: Vec<String>,
    pub range: Range<usize>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }
}

/// Immutable, validated multi-cohort dataset.
#[derive(Debug, Clone)]
pub struct MultiCohortDataset {
    feature_ids: Vec<String>,
    covariate_ids: Vec<String>,
    cohorts: Vec<Cohort>,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl MultiCohortDataset {
    pub fn new(blocks: Vec<CohortBlock>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| MarrrError::Schema("a dataset needs at least one cohort".into()))?;
        let feature_ids = first.feature_ids.clone();
        let covariate_ids = first.covariate_ids.clone();
        let p = feature_ids.len();
        let q = covariate_ids.len();

        let mut seen_samples = HashSet::new();
        let mut seen_cohorts = HashSet::new();
        let mut cohorts = Vec::with_capacity(blocks.len());
        let mut start = 0;
        for b in &blocks {
            if !seen_cohorts.insert(b.cohort_id.clone()) {
                return Err(MarrrError::Schema(format!("duplicate cohort id {:?}", b.cohort_id)));
            }
            let nj = b.sample_ids.len();
            if nj == 0 {
                return Err(MarrrError::Schema(format!("cohort {:?} has no samples", b.cohort_id)));
            }
            if b.feature_ids != feature_ids || b.covariate_ids != covariate_ids {
                return Err(MarrrError::Schema(format!(
                    "cohort {:?} does not share the feature/covariate ids of the first cohort",
                    b.cohort_id
                )));
            }
            if b.x.shape() != (p, nj) {
                return Err(MarrrError::Dimension(format!(
                    "cohort {:?}: X is {}x{}, expected {p}x{nj}",
                    b.cohort_id,
                    b.x.nrows(),
                    b.x.ncols()
                )));
            }
            if b.y.shape() != (q, nj) {
                return Err(MarrrError::Dimension(format!(
                    "cohort {:?}: Y is {}x{}, expected {q}x{nj}",
                    b.cohort_id,
                    b.y.nrows(),
                    b.y.ncols()
                )));
            }
            if b.y.iter().any(|v| !v.is_finite()) {
                return Err(MarrrError::Schema(format!(
                    "cohort {:?}: covariates must be fully observed and finite",
                    b.cohort_id
                )));
            }
            if b.x.iter().any(|v| v.is_infinite()) {
                return Err(MarrrError::Schema(format!("cohort {:?}: infinite outcome value", b.cohort_id)));
            }
            for s in &b.sample_ids {
                if !seen_samples.insert(s.clone()) {
                    return Err(MarrrError::Schema(format!("sample id {s:?} appears more than once")));
                }
            }
            cohorts.push(Cohort {
                id: b.cohort_id.clone(),
                sample_ids: b.sample_ids.clone(),
                range: start..start + nj,
            });
            start += nj;
        }
        let n = start;
        let mut x = DMatrix::zeros(p, n);
        let mut y = DMatrix::zeros(q, n);
        for (b, c) in blocks.iter().zip(&cohorts) {
            x.columns_mut(c.range.start, c.len()).copy_from(&b.x);
            y.columns_mut(c.range.start, c.len()).copy_from(&b.y);
        }
        Ok(MultiCohortDataset {
            feature_ids,
            covariate_ids,
            cohorts,
            x,
            y,
        })
    }

    /// Builds a dataset from already-concatenated matrices and cohort sizes,
    /// generating ids. Used by the simulators.
    pub fn from_concatenated(x: DMatrix<f64>, y: DMatrix<f64>, sizes: &[usize]) -> Result<Self> {
        let p = x.nrows();
        let q = y.nrows();
        let feature_ids: Vec<String> = (0..p).map(|i| format!("f{i}")).collect();
        let covariate_ids: Vec<String> = (0..q).map(|i| format!("y{i}")).collect();
        let total: usize = sizes.iter().sum();
        if total != x.ncols() || total != y.ncols() {
            return Err(MarrrError::Dimension(format!(
                "cohort sizes sum to {total}, X has {} columns, Y has {}",
                x.ncols(),
                y.ncols()
            )));
        }
        let mut blocks = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for (j, &nj) in sizes.iter().enumerate() {
            blocks.push(CohortBlock {
                cohort_id: format!("cohort{}", j + 1),
                x: x.columns(start, nj).into_owned(),
                y: y.columns(start, nj).into_owned(),
                sample_ids: (start..start + nj).map(|s| format!("s{s}")).collect(),
                feature_ids: feature_ids.clone(),
                covariate_ids: covariate_ids.clone(),
            });
            start += nj;
        }
        Self::new(blocks)
    }

    pub fn p(&self) -> usize {
        self.x.nrows()
    }

    pub fn q(&self) -> usize {
        self.y.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_cohorts(&self) -> usize {
        self.cohorts.len()
    }

    pub fn cohorts(&self) -> &[Cohort] {
        &self.cohorts
    }

    pub fn cohort_sizes(&self) -> Vec<usize> {
        self.cohorts.iter().map(Cohort::len).collect()
    }

    pub fn feature_ids(&self) -> &[String] {
        &self.feature_ids
    }

    pub fn covariate_ids(&self) -> &[String] {
        &self.covariate_ids
    }

    pub fn sample_ids(&self) -> Vec<String> {
        self.cohorts.iter().flat_map(|c| c.sample_ids.iter().cloned()).collect()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// `(X·, Y·, column range per cohort)`.
    pub fn concatenated_view(&self) -> (&DMatrix<f64>, &DMatrix<f64>, Vec<Range<usize>>) {
        (&self.x, &self.y, self.cohorts.iter().map(|c| c.range.clone()).collect())
    }

    pub fn block(&self, j: usize) -> CohortBlock {
        let c = &self.cohorts[j];
        CohortBlock {
            cohort_id: c.id.clone(),
            x: self.x.columns(c.range.start, c.len()).into_owned(),
            y: self.y.columns(c.range.start, c.len()).into_owned(),
            sample_ids: c.sample_ids.clone(),
            feature_ids: self.feature_ids.clone(),
            covariate_ids: self.covariate_ids.clone(),
        }
    }

    /// Cohort index owning column `col`.
    pub fn cohort_of_column(&self, col: usize) -> Option<usize> {
        self.cohorts.iter().position(|c| c.range.contains(&col))
    }

    /// Copy of the dataset with a different outcome matrix (same shape).
    pub fn with_x(&self, x: DMatrix<f64>) -> Result<Self> {
        if x.shape() != self.x.shape() {
            return Err(MarrrError::Dimension(format!(
                "replacement X is {}x{}, dataset X is {}x{}",
                x.nrows(),
                x.ncols(),
                self.x.nrows(),
                self.x.ncols()
            )));
        }
        let mut out = self.clone();
        out.x = x;
        Ok(out)
    }
}

/// Structural class of a missingness pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    Entry,
    Column,
    RowWithinCohort,
    Mixed,
}

impl std::fmt::Display for MaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MaskKind::Entry => "entry",
            MaskKind::Column => "column",
            MaskKind::RowWithinCohort => "row",
            MaskKind::Mixed => "mixed",
        };
        f.write_str(s)
    }
}

/// Set of absent `(row, column)` cells of `X·`, sorted column-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingMask {
    entries: Vec<(usize, usize)>,
    kind: MaskKind,
}

impl MissingMask {
    pub fn new(mut entries: Vec<(usize, usize)>, ds: &MultiCohortDataset) -> Result<Self> {
        entries.sort_by_key(|&(i, j)| (j, i));
        entries.dedup();
        let kind = classify_entries(&entries, ds)?;
        Ok(MissingMask { entries, kind })
    }

    pub fn empty() -> Self {
        MissingMask {
            entries: Vec::new(),
            kind: MaskKind::Entry,
        }
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn union(&self, other: &MissingMask, ds: &MultiCohortDataset) -> Result<Self> {
        let mut all = self.entries.clone();
        all.extend_from_slice(&other.entries);
        Self::new(all, ds)
    }

    /// Boolean p x n indicator, `true` where missing.
    pub fn indicator(&self, rows: usize, cols: usize) -> Vec<bool> {
        let mut out = vec![false; rows * cols];
        for &(i, j) in &self.entries {
            out[j * rows + i] = true;
        }
        out
    }

    pub fn read(path: &Path, ds: &MultiCohortDataset) -> Result<Self> {
        let (header, rows) = io::read_records(path)?;
        if header.len() != 2 {
            return Err(MarrrError::Schema(format!(
                "{}: mask file needs columns row_index,col_index",
                path.display()
            )));
        }
        let mut entries = Vec::with_capacity(rows.len());
        for (line, r) in rows.iter().enumerate() {
            let parse = |s: &str, col: usize| {
                s.parse::<usize>().map_err(|_| MarrrError::Parse {
                    location: format!("{}:{}:{}", path.display(), line + 2, col + 1),
                    message: format!("expected a non-negative integer, found {s:?}"),
                })
            };
            entries.push((parse(&r[0], 0)?, parse(&r[1], 1)?));
        }
        Self::new(entries, ds)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .entries
            .iter()
            .map(|(i, j)| vec![i.to_string(), j.to_string()])
            .collect();
        io::write_records(path, &["row_index", "col_index"], &rows)
    }
}

/// Classifies a set of masked cells as whole columns, whole per-cohort rows,
/// scattered entries, or a combination.
pub fn classify_mask(mask: &MissingMask, ds: &MultiCohortDataset) -> Result<MaskKind> {
    classify_entries(&mask.entries, ds)
}

fn classify_entries(entries: &[(usize, usize)], ds: &MultiCohortDataset) -> Result<MaskKind> {
    let (p, n) = (ds.p(), ds.n());
    for &(i, j) in entries {
        if i >= p || j >= n {
            return Err(MarrrError::Index(format!("mask cell ({i}, {j}) outside {p}x{n}")));
        }
    }
    if entries.is_empty() {
        return Ok(MaskKind::Entry);
    }
    let mut per_column = vec![0usize; n];
    let mut per_row_cohort: HashMap<(usize, usize), usize> = HashMap::new();
    let col_cohort: Vec<usize> = ds
        .cohorts()
        .iter()
        .enumerate()
        .flat_map(|(c, coh)| std::iter::repeat_n(c, coh.len()))
        .collect();
    for &(i, j) in entries {
        per_column[j] += 1;
        *per_row_cohort.entry((i, col_cohort[j])).or_default() += 1;
    }
    let sizes = ds.cohort_sizes();
    let in_full_column = |&(_, j): &(usize, usize)| per_column[j] == p;
    let in_full_row = |&(i, j): &(usize, usize)| {
        let c = col_cohort[j];
        per_row_cohort[&(i, c)] == sizes[c]
    };
    let all_columns = entries.iter().all(in_full_column);
    if all_columns {
        return Ok(MaskKind::Column);
    }
    let all_rows = entries.iter().all(in_full_row);
    if all_rows {
        return Ok(MaskKind::RowWithinCohort);
    }
    let structured = entries.iter().any(|e| in_full_column(e) || in_full_row(e));
    Ok(if structured { MaskKind::Mixed } else { MaskKind::Entry })
}

fn index_of(ids: &[String], what: &str, path: &Path) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if map.insert(id.clone(), i).is_some() {
            return Err(MarrrError::Schema(format!("{}: duplicate {what} id {id:?}", path.display())));
        }
    }
    Ok(map)
}

/// Loads outcome, covariate and cohort-map CSVs.
///
/// Cohorts are ordered by first appearance in the cohort map; within a
/// cohort, samples keep the column order of the outcome file. `NA` cells of
/// the outcome file become `NaN` in `X·` and are returned in the mask.
pub fn load_dataset(x_path: &Path, y_path: &Path, cohort_map_path: &Path) -> Result<(MultiCohortDataset, MissingMask)> {
    let xm = io::read_labeled_matrix(x_path)?;
    let ym = io::read_labeled_matrix(y_path)?;
    if xm.col_ids.len() != ym.col_ids.len() {
        return Err(MarrrError::Dimension(format!(
            "outcome file has {} samples, covariate file has {}",
            xm.col_ids.len(),
            ym.col_ids.len()
        )));
    }
    if !ym.missing_cells().is_empty() {
        return Err(MarrrError::Schema(format!(
            "{}: covariates may not contain {}",
            y_path.display(),
            io::MISSING_TOKEN
        )));
    }
    let x_cols = index_of(&xm.col_ids, "sample", x_path)?;
    let y_cols = index_of(&ym.col_ids, "sample", y_path)?;
    index_of(&xm.row_ids, "feature", x_path)?;
    index_of(&ym.row_ids, "covariate", y_path)?;
    for s in &xm.col_ids {
        if !y_cols.contains_key(s) {
            return Err(MarrrError::Schema(format!(
                "sample {s:?} is in {} but not in {}",
                x_path.display(),
                y_path.display()
            )));
        }
    }

    let (header, rows) = io::read_records(cohort_map_path)?;
    let sample_col = header.iter().position(|h| h == "sample_id");
    let cohort_col = header.iter().position(|h| h == "cohort_id");
    let (Some(sc), Some(cc)) = (sample_col, cohort_col) else {
        return Err(MarrrError::Schema(format!(
            "{}: cohort map needs columns sample_id and cohort_id",
            cohort_map_path.display()
        )));
    };
    let mut cohort_order: Vec<String> = Vec::new();
    let mut assignment: HashMap<String, String> = HashMap::new();
    for r in &rows {
        let (s, c) = (r[sc].clone(), r[cc].clone());
        if !x_cols.contains_key(&s) {
            return Err(MarrrError::Schema(format!(
                "cohort map lists unknown sample id {s:?}"
            )));
        }
        if assignment.insert(s.clone(), c.clone()).is_some() {
            return Err(MarrrError::Schema(format!("sample {s:?} assigned to more than one cohort")));
        }
        if !cohort_order.contains(&c) {
            cohort_order.push(c);
        }
    }
    for s in &xm.col_ids {
        if !assignment.contains_key(s) {
            return Err(MarrrError::Schema(format!("sample {s:?} has no cohort assignment")));
        }
    }

    let mut blocks = Vec::with_capacity(cohort_order.len());
    let mut missing = Vec::new();
    let mut offset = 0;
    for c in &cohort_order {
        let members: Vec<&String> = xm.col_ids.iter().filter(|s| &assignment[*s] == c).collect();
        let nj = members.len();
        let mut x = DMatrix::zeros(xm.row_ids.len(), nj);
        let mut y = DMatrix::zeros(ym.row_ids.len(), nj);
        for (k, s) in members.iter().enumerate() {
            x.set_column(k, &xm.values.column(x_cols[*s]));
            y.set_column(k, &ym.values.column(y_cols[*s]));
            for i in 0..x.nrows() {
                if x[(i, k)].is_nan() {
                    missing.push((i, offset + k));
                }
            }
        }
        blocks.push(CohortBlock {
            cohort_id: c.clone(),
            x,
            y,
            sample_ids: members.into_iter().cloned().collect(),
            feature_ids: xm.row_ids.clone(),
            covariate_ids: ym.row_ids.clone(),
        });
        offset += nj;
    }
    let ds = MultiCohortDataset::new(blocks)?;
    let mask = MissingMask::new(missing, &ds)?;
    Ok((ds, mask))
}

/// File names used by [`save_dataset`].
pub const X_FILE: &str = "x.csv";
pub const Y_FILE: &str = "y.csv";
pub const COHORT_FILE: &str = "cohorts.csv";
pub const MASK_FILE: &str = "mask.csv";

/// Writes `x.csv`, `y.csv`, `cohorts.csv` and, when the mask is non-empty,
/// `mask.csv` into `dir`. Masked cells are written as `NA`.
pub fn save_dataset(ds: &MultiCohortDataset, mask: &MissingMask, dir: &Path) -> Result<()> {
    io::create_dir(dir)?;
    let samples = ds.sample_ids();
    let mut x = ds.x().clone();
    for &(i, j) in mask.entries() {
        x[(i, j)] = f64::NAN;
    }
    io::write_labeled_matrix(&dir.join(X_FILE), "feature_id", ds.feature_ids(), &samples, &x)?;
    io::write_labeled_matrix(&dir.join(Y_FILE), "covariate_id", ds.covariate_ids(), &samples, ds.y())?;
    let rows: Vec<Vec<String>> = ds
        .cohorts()
        .iter()
        .flat_map(|c| c.sample_ids.iter().map(move |s| vec![s.clone(), c.id.clone()]))
        .collect();
    io::write_records(&dir.join(COHORT_FILE), &["sample_id", "cohort_id"], &rows)?;
    if !mask.is_empty() {
        mask.write(&dir.join(MASK_FILE))?;
    }
    Ok(())
}

/// Loads a directory written by [`save_dataset`], merging `mask.csv` when present.
pub fn load_dataset_dir(dir: &Path) -> Result<(MultiCohortDataset, MissingMask)> {
    let (ds, na_mask) = load_dataset(&dir.join(X_FILE), &dir.join(Y_FILE), &dir.join(COHORT_FILE))?;
    let mask_path = dir.join(MASK_FILE);
    let mask = if mask_path.exists() {
        na_mask.union(&MissingMask::read(&mask_path, &ds)?, &ds)?
    } else {
        na_mask
    };
    Ok((ds, mask))
}
