use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use super::{FitResult, ModelData, SolverOptions};
use crate::error::Result;
use crate::io;
use crate::modules_config::{IndicatorConfig, PenaltySet};

/// Signal variance attributed to the modules on one cohort set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModuleVariance {
    pub cohorts: Vec<usize>,
    pub samples: usize,
    pub b_module: Option<usize>,
    pub s_module: Option<usize>,
    /// `||B_k Y^(k)||_F^2`.
    pub var_by: f64,
    /// `||S^(l)||_F^2`.
    pub var_s: f64,
    /// `||B_k Y^(k) + S^(l)||_F^2`.
    pub total: f64,
}

/// Groups covariate and auxiliary modules by cohort set and reports their
/// squared Frobenius norms, largest total first.
pub fn variance_explained(fit: &FitResult, data: &ModelData) -> Vec<ModuleVariance> {
    let cfg = data.cfg();
    let mut sets: Vec<Vec<bool>> = Vec::new();
    for c in cfg.c_y().iter().chain(cfg.c_s()) {
        if !sets.contains(c) {
            sets.push(c.clone());
        }
    }
    let mut out: Vec<ModuleVariance> = sets
        .into_iter()
        .map(|set| {
            let b_module = cfg.c_y().iter().position(|c| *c == set);
            let s_module = cfg.c_s().iter().position(|c| *c == set);
            let cols = crate::columns::ColumnSet::from_cohorts(&set, data.cohorts());
            let by = b_module.map(|k| data.b_term(k, &fit.b(k)));
            let s = s_module.map(|l| fit.factors.s[l].dense());
            let var_by = by.as_ref().map_or(0.0, DMatrix::norm_squared);
            let var_s = s.as_ref().map_or(0.0, DMatrix::norm_squared);
            let total = match (by, s) {
                (Some(a), Some(b)) => (a + b).norm_squared(),
                _ => var_by + var_s,
            };
            ModuleVariance {
                cohorts: IndicatorConfig::members(&set),
                samples: cols.len(),
                b_module,
                s_module,
                var_by,
                var_s,
                total,
            }
        })
        .collect();
    out.sort_by(|a, b| b.total.total_cmp(&a.total));
    out
}

/// Number of singular values above `threshold` for each `B_k` and `S^(l)`.
pub fn estimated_ranks(fit: &FitResult, threshold: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let count = |f: &crate::linalg::LowRank| -> Result<usize> {
        Ok(f.singular_values()?.into_iter().filter(|&s| s > threshold).count())
    };
    let b = fit.factors.b.iter().map(count).collect::<Result<_>>()?;
    let s = fit.factors.s.iter().map(count).collect::<Result<_>>()?;
    Ok((b, s))
}

#[derive(Serialize)]
struct FitMetadata<'a> {
    algorithm: String,
    options: &'a SolverOptions,
    epsilon: f64,
    penalties: &'a PenaltySet,
    epochs: usize,
    converged: bool,
    final_objective: Option<f64>,
    c_y: &'a [Vec<bool>],
    c_s: &'a [Vec<bool>],
}

/// Ids used when writing a fit.
pub struct FitLabels<'a> {
    pub feature_ids: &'a [String],
    pub covariate_ids: &'a [String],
    pub sample_ids: &'a [String],
}

impl FitResult {
    /// Writes `B_k.csv` (p x q), `U_S_l.csv` (p x r), `V_S_l.csv` (n x r, zero
    /// rows outside the module), `objective_trace.csv` and `fit.json`.
    /// `b_override` replaces the fitted-scale `B_k` (e.g. back-mapped ones).
    pub fn write_dir(
        &self,
        dir: &Path,
        data: &ModelData,
        pen: &PenaltySet,
        opts: &SolverOptions,
        labels: &FitLabels<'_>,
        b_override: Option<&[DMatrix<f64>]>,
    ) -> Result<()> {
        io::create_dir(dir)?;
        for k in 0..self.factors.b.len() {
            let b = match b_override {
                Some(bs) => bs[k].clone(),
                None => self.b(k),
            };
            io::write_labeled_matrix(
                &dir.join(format!("B_{}.csv", k + 1)),
                "feature_id",
                labels.feature_ids,
                labels.covariate_ids,
                &b,
            )?;
        }
        for (l, s) in self.factors.s.iter().enumerate() {
            let rank_ids: Vec<String> = (1..=s.u.ncols()).map(|r| format!("r{r}")).collect();
            io::write_labeled_matrix(
                &dir.join(format!("U_S_{}.csv", l + 1)),
                "feature_id",
                labels.feature_ids,
                &rank_ids,
                &s.u,
            )?;
            let v = data.s_cols(l).expand_rows(&s.v, data.n());
            io::write_labeled_matrix(
                &dir.join(format!("V_S_{}.csv", l + 1)),
                "sample_id",
                labels.sample_ids,
                &rank_ids,
                &v,
            )?;
        }
        let rows: Vec<Vec<String>> = self
            .objective_trace
            .iter()
            .enumerate()
            .map(|(e, v)| vec![(e + 1).to_string(), format!("{v}")])
            .collect();
        io::write_records(&dir.join("objective_trace.csv"), &["epoch", "objective"], &rows)?;
        let meta = FitMetadata {
            algorithm: self.algorithm.to_string(),
            options: opts,
            epsilon: opts.epsilon_for(data.p(), data.n()),
            penalties: pen,
            epochs: self.epochs,
            converged: self.converged,
            final_objective: self.final_objective(),
            c_y: data.cfg().c_y(),
            c_s: data.cfg().c_s(),
        };
        let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        io::write_text(&dir.join("fit.json"), &json)
    }
}
