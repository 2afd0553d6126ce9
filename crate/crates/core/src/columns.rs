//! Column subsets of the concatenated data made of whole cohorts.

use std::ops::Range;

use nalgebra::DMatrix;

/// Ordered union of disjoint column ranges.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ColumnSet {
    ranges: Vec<Range<usize>>,
    len: usize,
}

impl ColumnSet {
    /// Columns of the cohorts flagged in `members` (one flag per cohort).
    pub fn from_cohorts(members: &[bool], cohorts: &[Range<usize>]) -> Self {
        assert_eq!(members.len(), cohorts.len());
        let mut ranges: Vec<Range<usize>> = Vec::new();
        for (r, _) in cohorts.iter().zip(members).filter(|(_, &m)| m) {
            match ranges.last_mut() {
                Some(last) if last.end == r.start => last.end = r.end,
                _ => ranges.push(r.clone()),
            }
        }
        let len = ranges.iter().map(Range::len).sum();
        ColumnSet { ranges, len }
    }

    pub fn all(n: usize) -> Self {
        ColumnSet {
            ranges: if n > 0 { vec![0..n] } else { Vec::new() },
            len: n,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.ranges.iter().flat_map(Clone::clone)
    }

    pub fn contains(&self, col: usize) -> bool {
        self.ranges.iter().any(|r| r.contains(&col))
    }

    /// Compact copy of the selected columns.
    pub fn gather(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), self.len);
        let mut at = 0;
        for r in &self.ranges {
            out.columns_mut(at, r.len()).copy_from(&m.columns(r.start, r.len()));
            at += r.len();
        }
        out
    }

    /// Writes a compact block back into the selected columns of `m`.
    pub fn scatter(&self, compact: &DMatrix<f64>, m: &mut DMatrix<f64>) {
        debug_assert_eq!(compact.ncols(), self.len);
        let mut at = 0;
        for r in &self.ranges {
            m.columns_mut(r.start, r.len()).copy_from(&compact.columns(at, r.len()));
            at += r.len();
        }
    }

    /// `m[:, cols] += alpha * compact`.
    pub fn scatter_add(&self, compact: &DMatrix<f64>, alpha: f64, m: &mut DMatrix<f64>) {
        debug_assert_eq!(compact.ncols(), self.len);
        let mut at = 0;
        for r in &self.ranges {
            let mut dst = m.columns_mut(r.start, r.len());
            dst.zip_apply(&compact.columns(at, r.len()), |d, c| *d += alpha * c);
            at += r.len();
        }
    }

    /// Expands a compact `len x k` row-block (e.g. right factors) to `n x k`
    /// with zero rows outside the set.
    pub fn expand_rows(&self, compact: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(n, compact.ncols());
        let mut at = 0;
        for r in &self.ranges {
            out.rows_mut(r.start, r.len()).copy_from(&compact.rows(at, r.len()));
            at += r.len();
        }
        out
    }

    /// Inverse of [`expand_rows`](Self::expand_rows).
    pub fn gather_rows(&self, full: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.len, full.ncols());
        let mut at = 0;
        for r in &self.ranges {
            out.rows_mut(at, r.len()).copy_from(&full.rows(r.start, r.len()));
            at += r.len();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gather_scatter() {
        let cohorts = vec![0..2, 2..3, 3..6];
        let set = ColumnSet::from_cohorts(&[true, false, true], &cohorts);
        assert_eq!(set.len(), 5);
        assert_eq!(set.indices().collect::<Vec<_>>(), vec![0, 1, 3, 4, 5]);
        let merged = ColumnSet::from_cohorts(&[true, true, false], &cohorts);
        assert_eq!(merged.ranges(), &[0..3]);

        let m = DMatrix::from_fn(2, 6, |i, j| (10 * i + j) as f64);
        let g = set.gather(&m);
        assert_eq!(g[(1, 2)], 13.0);
        let mut z = DMatrix::zeros(2, 6);
        set.scatter(&g, &mut z);
        assert_eq!(z[(1, 2)], 0.0);
        assert_eq!(z[(1, 5)], 15.0);
        set.scatter_add(&g, -1.0, &mut z);
        assert_eq!(z.norm(), 0.0);

        let v = DMatrix::from_fn(5, 1, |i, _| i as f64 + 1.0);
        let full = set.expand_rows(&v, 6);
        assert_eq!(full[(2, 0)], 0.0);
        assert_eq!(full[(3, 0)], 3.0);
        assert_eq!(set.gather_rows(&full), v);
    }
}
