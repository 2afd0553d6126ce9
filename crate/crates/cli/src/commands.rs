use std::path::Path;

use marrr::dataset::{MissingMask, MultiCohortDataset};
use marrr::impute::{self, ImputeOptions};
use marrr::io;
use marrr::modules_config::{self, check_degeneracy, module_y_nuclear_norms, IndicatorConfig, PenaltySet, DegeneracyViolation};
use marrr::preprocess::{self, PreprocessInfo, YTreatment};
use marrr::simulate::{self, Scenario, SignalSds, SimulationSpec, StudyOptions, Table2Scale, Table2Scenario};
use marrr::solver::{self, Algorithm, FitLabels, FitResult, ModelData, SolverOptions};
use marrr::{MarrrError, Result};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::config::write_metadata;

fn cohort_ids(ds: &MultiCohortDataset) -> Vec<String> {
    ds.cohorts().iter().map(|c| c.id.clone()).collect()
}

fn penalties_for(path: &Option<std::path::PathBuf>, ds: &MultiCohortDataset, cfg: &IndicatorConfig) -> Result<PenaltySet> {
    let pen = match path {
        Some(p) => PenaltySet::read(p)?,
        None => modules_config::rmt_penalties(ds, cfg)?,
    };
    pen.check_shape(cfg)?;
    Ok(pen)
}

/// Prints violations as warnings; with `strict` they become an error.
fn report_degeneracy(violations: &[DegeneracyViolation], strict: bool) -> Result<()> {
    for v in violations {
        eprintln!("warning: {v}");
    }
    if strict && !violations.is_empty() {
        return Err(MarrrError::Config(format!(
            "{} penalty condition(s) violated; rerun without --strict to proceed",
            violations.len()
        )));
    }
    Ok(())
}

fn degeneracy_for(data: &ModelData, pen: &PenaltySet) -> Result<Vec<DegeneracyViolation>> {
    check_degeneracy(data.cfg(), pen, &module_y_nuclear_norms(data.ys())?)
}

/// Writes the fit with coefficients and auxiliary terms on the original
/// outcome scale.
fn write_fit(
    dir: &Path,
    fit: &FitResult,
    data: &ModelData,
    info: &PreprocessInfo,
    pen: &PenaltySet,
    opts: &SolverOptions,
    ds: &MultiCohortDataset,
) -> Result<()> {
    let bs: Vec<DMatrix<f64>> = (0..fit.factors.b.len())
        .map(|k| preprocess::backmap_b(&fit.b(k), &info.y_transforms[k]) * info.sigma_hat)
        .collect();
    let mut scaled = fit.clone();
    for s in &mut scaled.factors.s {
        s.u *= info.sigma_hat;
    }
    let samples = ds.sample_ids();
    let labels = FitLabels {
        feature_ids: ds.feature_ids(),
        covariate_ids: ds.covariate_ids(),
        sample_ids: &samples,
    };
    scaled.write_dir(dir, data, pen, opts, &labels, Some(&bs))?;
    info.write(&dir.join("preprocess.txt"))
}

#[derive(Serialize)]
struct VarianceRow {
    module: usize,
    sample_size: usize,
    var_by: f64,
    var_s: f64,
    var_signal: f64,
    cohorts: String,
}

fn write_variance(path: &Path, fit: &FitResult, data: &ModelData, ds: &MultiCohortDataset) -> Result<()> {
    let ids = cohort_ids(ds);
    let rows: Vec<VarianceRow> = solver::variance_explained(fit, data)
        .into_iter()
        .enumerate()
        .map(|(i, m)| VarianceRow {
            module: i + 1,
            sample_size: m.samples,
            var_by: m.var_by,
            var_s: m.var_s,
            var_signal: m.total,
            cohorts: m.cohorts.iter().map(|&j| ids[j].as_str()).collect::<Vec<_>>().join(";"),
        })
        .collect();
    io::write_serialized(path, &rows)
}

pub fn fit(mut args: FitArgs) -> Result<()> {
    args.solver.resolve(&SolverOptions::default());
    let out = out_dir(&args.out)?;
    let (ds, mask) = args.data.load()?;
    if !mask.is_empty() {
        return Err(MarrrError::Config(format!(
            "the outcome matrix has {} missing cells; use `marrr impute`",
            mask.len()
        )));
    }
    let cfg = read_modules(&args.modules, &ds)?;
    let (data, info) = preprocess::prepare(&ds, &mask, &cfg, args.solver.treatment())?;
    let pen = penalties_for(&args.penalties, &ds, &cfg)?;
    let violations = degeneracy_for(&data, &pen)?;
    report_degeneracy(&violations, args.strict)?;
    let opts = args.solver.options();
    let fit = solver::fit(&data, &pen, &opts, None)?;
    write_fit(&out.join("fit"), &fit, &data, &info, &pen, &opts, &ds)?;
    write_variance(&out.join("variance_explained.csv"), &fit, &data, &ds)?;
    let (rank_b, rank_s) = solver::estimated_ranks(&fit, simulate::RANK_THRESHOLD)?;
    write_metadata(
        out,
        "fit",
        &args,
        &json!({
            "epochs": fit.epochs,
            "converged": fit.converged,
            "final_objective": fit.final_objective(),
            "sigma_hat": info.sigma_hat,
            "penalties": pen,
            "estimated_rank_b": rank_b,
            "estimated_rank_s": rank_s,
            "penalty_warnings": violations.iter().map(ToString::to_string).collect::<Vec<_>>(),
        }),
    )
}

/// Masked cells split by structure: whole columns, whole rows within a
/// cohort, and the rest.
fn split_by_kind(mask: &MissingMask, ds: &MultiCohortDataset) -> Result<Vec<(&'static str, MissingMask)>> {
    let (p, n) = (ds.p(), ds.n());
    let mut per_col = vec![0usize; n];
    let mut per_row = std::collections::HashMap::new();
    let cohort = |j: usize| ds.cohort_of_column(j).expect("mask cells lie inside the dataset");
    for &(i, j) in mask.entries() {
        per_col[j] += 1;
        *per_row.entry((i, cohort(j))).or_insert(0usize) += 1;
    }
    let sizes = ds.cohort_sizes();
    let (mut cols, mut rows, mut cells) = (Vec::new(), Vec::new(), Vec::new());
    for &(i, j) in mask.entries() {
        if per_col[j] == p {
            cols.push((i, j));
        } else if per_row[&(i, cohort(j))] == sizes[cohort(j)] {
            rows.push((i, j));
        } else {
            cells.push((i, j));
        }
    }
    let mut out = Vec::new();
    for (name, entries) in [("entry", cells), ("row", rows), ("column", cols)] {
        if !entries.is_empty() {
            out.push((name, MissingMask::new(entries, ds)?));
        }
    }
    out.push(("all", mask.clone()));
    Ok(out)
}

/// Reads a complete outcome matrix and aligns it to the dataset's ids.
fn read_truth(path: &Path, ds: &MultiCohortDataset) -> Result<DMatrix<f64>> {
    let m = io::read_labeled_matrix(path)?;
    let find = |ids: &[String], id: &str, what: &str| {
        ids.iter()
            .position(|x| x == id)
            .ok_or_else(|| MarrrError::Schema(format!("{}: {what} {id:?} missing", path.display())))
    };
    let samples = ds.sample_ids();
    let rows: Vec<usize> = ds.feature_ids().iter().map(|f| find(&m.row_ids, f, "feature")).collect::<Result<_>>()?;
    let cols: Vec<usize> = samples.iter().map(|s| find(&m.col_ids, s, "sample")).collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(ds.p(), ds.n(), |i, j| m.values[(rows[i], cols[j])]))
}

#[derive(Serialize)]
struct RseRow {
    kind: &'static str,
    cells: usize,
    rse: f64,
}

pub fn impute(mut args: ImputeArgs) -> Result<()> {
    let base = impute::imputation_solver_options(&SolverOptions::default());
    args.solver.resolve(&base);
    let defaults = ImputeOptions::default();
    args.outer_max.get_or_insert(defaults.outer_max);
    args.tolerance.get_or_insert(defaults.tolerance);
    let out = out_dir(&args.out)?;
    let (ds, mask) = args.data.load()?;
    let cfg = read_modules(&args.modules, &ds)?;
    let pen = penalties_for(&args.penalties, &ds, &cfg)?;
    let opts = args.solver.options();
    let iopts = ImputeOptions {
        outer_max: args.outer_max.unwrap_or(defaults.outer_max),
        tolerance: args.tolerance.unwrap_or(defaults.tolerance),
        ..defaults
    };
    let res = impute::impute(&ds, &mask, &cfg, Some(&pen), &opts, &iopts, args.solver.treatment())?;
    let samples = ds.sample_ids();
    io::write_labeled_matrix(
        &out.join("x_completed.csv"),
        "feature_id",
        ds.feature_ids(),
        &samples,
        &res.x_completed_original,
    )?;
    res.info.write(&out.join("preprocess.txt"))?;
    if let Some(fit) = &res.fit {
        let (data, _) = preprocess::prepare(&ds, &mask, &cfg, args.solver.treatment())?;
        let mut data = data;
        data.set_x(res.x_completed.clone())?;
        write_fit(&out.join("fit"), fit, &data, &res.info, &pen, &opts, &ds)?;
    }
    let mut rse_rows = Vec::new();
    if let Some(path) = &args.truth {
        let truth = read_truth(path, &ds)?;
        for (kind, part) in split_by_kind(&mask, &ds)? {
            rse_rows.push(RseRow {
                kind,
                cells: part.len(),
                rse: impute::rse(&truth, &res.x_completed_original, &part)?,
            });
        }
        io::write_serialized(&out.join("rse.csv"), &rse_rows)?;
    }
    write_metadata(
        out,
        "impute",
        &args,
        &json!({
            "missing_cells": mask.len(),
            "mask_kind": mask.kind().to_string(),
            "outer_iterations": res.outer_iterations,
            "converged": res.converged,
            "sigma_hat": res.info.sigma_hat,
            "rse": rse_rows,
        }),
    )
}

fn parse<T: std::str::FromStr<Err = MarrrError>>(value: &Option<String>, default: &str) -> Result<T> {
    value.as_deref().unwrap_or(default).parse()
}

fn table2_scale(args: &SimulateArgs) -> Result<Table2Scale> {
    let mut scale = match args.scale.as_deref().unwrap_or("desk") {
        "desk" => Table2Scale::desk(),
        "full" => Table2Scale::full(),
        other => return Err(MarrrError::Config(format!("unknown scale {other:?}; expected desk or full"))),
    };
    scale.p = args.p.unwrap_or(scale.p);
    scale.cohorts = args.num_cohorts.unwrap_or(scale.cohorts);
    scale.n_per_cohort = args.n.unwrap_or(scale.n_per_cohort);
    scale.q = args.q.unwrap_or(scale.q);
    scale.rank = args.rank.unwrap_or(scale.rank);
    scale.missing_fraction = args.missing_fraction.unwrap_or(scale.missing_fraction);
    Ok(scale)
}

fn sds(args: &SimulateArgs, want: usize) -> Result<Vec<f64>> {
    match args.sds.len() {
        0 => Ok(vec![1.0; want]),
        k if k == want => Ok(args.sds.clone()),
        k => Err(MarrrError::Config(format!("--sds needs {want} values for this scenario, found {k}"))),
    }
}

fn scenario_spec(args: &SimulateArgs, scenario: Scenario, seed: u64) -> Result<SimulationSpec> {
    let p = args.p.unwrap_or(100);
    let q = args.q.unwrap_or(10);
    let spec = match scenario {
        Scenario::ArrrSingle | Scenario::OrthogonalityStudy => {
            let s = sds(args, 2)?;
            let mut spec = SimulationSpec::arrr_single(p, args.n.unwrap_or(100), q, args.rank.unwrap_or(1), s[0], s[1], seed);
            if scenario == Scenario::OrthogonalityStudy {
                spec.scenario = scenario;
                spec.orthogonalize_y_in_generation = true;
            }
            spec
        }
        Scenario::MrrrTwoCohort => {
            let s = sds(args, 2)?;
            let mut spec =
                SimulationSpec::mrrr_two_cohort(p, args.n.unwrap_or(100), q, args.rank.unwrap_or(1), s[0], s[1], seed);
            if let Some(j) = args.num_cohorts {
                spec.cohort_sizes = vec![args.n.unwrap_or(100); j];
            }
            spec
        }
        Scenario::GlobalIndividual => {
            let s = sds(args, 4)?;
            SimulationSpec::global_individual(
                p,
                vec![args.n.unwrap_or(60); args.num_cohorts.unwrap_or(5)],
                q,
                args.rank.unwrap_or(2),
                SignalSds::new(s[0], s[1], s[2], s[3]),
                seed,
            )
        }
    };
    spec.validate()?;
    Ok(spec)
}

pub fn simulate(mut args: SimulateArgs) -> Result<()> {
    args.replicates.get_or_insert(StudyOptions::default().replicates);
    args.seed.get_or_insert(StudyOptions::default().seed);
    args.jobs.get_or_insert(1);
    args.y_transform.get_or_insert(YTreatment::Orthogonalize);
    let out = out_dir(&args.out)?;
    let opts = StudyOptions {
        replicates: args.replicates.unwrap_or(1),
        seed: args.seed.unwrap_or(1),
        jobs: args.jobs.unwrap_or(1),
        treatment: args.y_transform.unwrap_or(YTreatment::Orthogonalize),
    };
    if opts.replicates == 0 {
        return Err(MarrrError::Config("--replicates must be at least 1".into()));
    }
    let which: Vec<Table2Scenario> = match &args.which {
        Some(w) => vec![w.parse()?],
        None => Table2Scenario::ALL.to_vec(),
    };
    let rows = match (args.reproduce.as_deref(), args.scenario.as_deref()) {
        (Some(_), Some(_)) => {
            return Err(MarrrError::Config("give either --reproduce or --scenario, not both".into()));
        }
        (Some("table1a"), None) => simulate::table1a(&opts)?,
        (Some("table1b"), None) => simulate::table1b(&opts)?,
        (Some("table2"), None) => simulate::table2(&opts, &table2_scale(&args)?, &which)?,
        (Some("orthogonality"), None) => simulate::orthogonality_study(&opts)?,
        (Some(other), None) => {
            return Err(MarrrError::Config(format!(
                "unknown study {other:?}; expected table1a, table1b, table2 or orthogonality"
            )));
        }
        (None, Some(_)) => {
            let scenario: Scenario = parse(&args.scenario, "")?;
            if args.which.is_some() {
                if scenario != Scenario::GlobalIndividual {
                    return Err(MarrrError::Config("--which applies to the global_individual scenario".into()));
                }
                simulate::table2(&opts, &table2_scale(&args)?, &which)?
            } else {
                let template = scenario_spec(&args, scenario, opts.seed)?;
                let solver = SolverOptions {
                    algorithm: if opts.treatment == YTreatment::Orthogonalize {
                        Algorithm::SvtAls
                    } else {
                        Algorithm::FactoredAls
                    },
                    r_b_upper: 10,
                    r_s_upper: 10,
                    ..SolverOptions::default()
                };
                for r in 0..opts.replicates {
                    let spec = SimulationSpec {
                        seed: simulate::replicate_seed(opts.seed, r as u64),
                        ..template.clone()
                    };
                    simulate::generate(&spec)?.write_dir(&out.join(format!("replicate_{r}")))?;
                }
                simulate::scenario_study(&opts, &template, &solver)?
            }
        }
        (None, None) => {
            return Err(MarrrError::Config("give --reproduce STUDY or --scenario NAME".into()));
        }
    };
    simulate::write_metrics(&out.join("metrics.csv"), &rows)?;
    let summary = simulate::summarize(&rows);
    simulate::write_summary(&out.join("summary.csv"), &summary)?;
    let seeds: Vec<u64> = {
        let mut s: Vec<u64> = rows.iter().map(|r| r.seed).collect();
        s.dedup();
        s
    };
    write_metadata(out, "simulate", &args, &json!({ "rows": rows.len(), "replicate_seeds": seeds }))
}

pub fn select_modules(mut args: SelectArgs) -> Result<()> {
    args.method.get_or_insert_with(|| "forward".into());
    args.max_modules.get_or_insert(10);
    let out = out_dir(&args.out)?;
    let (ds, mask) = args.data.load()?;
    let max = args.max_modules.unwrap_or(10);
    let cfg = match args.method.as_deref().unwrap_or("forward") {
        "forward" => {
            let (xs, _, _) = preprocess::center_and_scale_x_masked(ds.x(), &mask)?;
            let (_, _, ranges) = ds.concatenated_view();
            modules_config::forward_select_scaled(&xs, &ranges, max)?
        }
        "enumerate" => modules_config::enumerate_modules(ds.num_cohorts(), max)?,
        other => {
            return Err(MarrrError::Config(format!(
                "unknown selection method {other:?}; expected forward or enumerate"
            )))
        }
    };
    cfg.write(&out.join("modules.csv"), &cohort_ids(&ds))?;
    write_metadata(out, "select-modules", &args, &json!({ "modules_b": cfg.k(), "modules_s": cfg.l() }))
}

#[derive(Serialize)]
struct ViolationRow {
    condition: u8,
    module: usize,
    others: String,
    lambda: f64,
    bound: f64,
}

pub fn penalties(mut args: PenaltyArgs) -> Result<()> {
    args.y_transform.get_or_insert(YTreatment::Orthogonalize);
    let out = out_dir(&args.out)?;
    let (ds, mask) = args.data.load()?;
    let cfg = read_modules(&args.modules, &ds)?;
    let pen = modules_config::rmt_penalties(&ds, &cfg)?;
    pen.write(&out.join("penalties.csv"))?;
    let (data, _) = preprocess::prepare(&ds, &mask, &cfg, args.y_transform.unwrap_or(YTreatment::Orthogonalize))?;
    let violations = degeneracy_for(&data, &pen)?;
    let rows: Vec<ViolationRow> = violations
        .iter()
        .map(|v| ViolationRow {
            condition: v.condition,
            module: v.module + 1,
            others: v.others.iter().map(|o| (o + 1).to_string()).collect::<Vec<_>>().join(";"),
            lambda: v.lambda,
            bound: v.bound,
        })
        .collect();
    io::write_serialized(&out.join("violations.csv"), &rows)?;
    write_metadata(out, "penalties", &args, &json!({ "penalties": pen, "violations": rows.len() }))?;
    report_degeneracy(&violations, args.strict)
}

fn benchmark_scale(name: &str) -> Result<Table2Scale> {
    match name {
        "toy" => Ok(Table2Scale {
            p: 50,
            cohorts: 2,
            n_per_cohort: 30,
            q: 5,
            rank: 2,
            missing_fraction: 0.0,
        }),
        "desk" => Ok(Table2Scale::desk()),
        "full" => Ok(Table2Scale::full()),
        other => Err(MarrrError::Config(format!("unknown scale {other:?}; expected toy, desk or full"))),
    }
}

pub fn benchmark(mut args: BenchmarkArgs) -> Result<()> {
    args.scale.get_or_insert_with(|| "toy".into());
    args.rank_cap.get_or_insert(20);
    args.epochs.get_or_insert(5);
    args.algorithm.get_or_insert_with(|| "both".into());
    args.seed.get_or_insert(1);
    let out = out_dir(&args.out)?;
    let scale = benchmark_scale(args.scale.as_deref().unwrap_or("toy"))?;
    let algorithms = match args.algorithm.as_deref().unwrap_or("both") {
        "both" => vec![Algorithm::FactoredAls, Algorithm::SvtAls],
        other => vec![other.parse::<Algorithm>()?],
    };
    let rows = simulate::benchmark(
        &scale,
        args.rank_cap.unwrap_or(20),
        args.epochs.unwrap_or(5),
        &algorithms,
        args.seed.unwrap_or(1),
    )?;
    io::write_serialized(&out.join("benchmark.csv"), &rows)?;
    for r in &rows {
        println!("{}: {:.4} s/epoch ({}x{}, rank cap {})", r.algorithm, r.seconds_per_epoch, r.p, r.n, r.rank_cap);
    }
    write_metadata(out, "benchmark", &args, &json!({ "scale": scale, "rows": rows }))
}
