mod common;

use common::*;
use marrr::linalg;
use marrr::modules_config::{rmt_penalties_for, IndicatorConfig, PenaltySet};
use marrr::solver::{self, eval_objective, eval_objective_of_factors, Algorithm, ModelData, SolverOptions};
use nalgebra::DMatrix;

fn gi(j: usize) -> IndicatorConfig {
    IndicatorConfig::global_individual(j)
}

#[test]
fn svt_matches_prox_oracles() {
    let mut r = rng(11);
    for _ in 0..5 {
        let m = gauss(5, 5, &mut r);
        let s = linalg::svt(&m, 1.0).unwrap();
        let ours = prox_objective(&m, &s, 1.0);
        let (_, irls) = irls_oracle(&m, 1.0, 400);
        assert!(ours <= irls + 1e-9, "{ours} vs {irls}");
        assert!((ours - irls).abs() < 1e-6, "{ours} vs {irls}");
    }
}

#[test]
fn cross_solver_agreement_small() {
    let cfg = gi(2);
    let data = random_instance(5, 20, 3, &[15, 15], &cfg, 15.0);
    let pen = rmt_penalties_for(20, 3, &[15, 15], &cfg).unwrap();
    let opts2 = SolverOptions {
        algorithm: Algorithm::SvtAls,
        epsilon: Some(1e-16),
        max_epochs: 20000,
        ..Default::default()
    };
    let f2 = solver::fit(&data, &pen, &opts2, None).unwrap();
    let opts1 = SolverOptions {
        algorithm: Algorithm::FactoredAls,
        ..opts2.clone()
    };
    let f1 = solver::fit(&data, &pen, &opts1, None).unwrap();
    let o1 = eval_objective_of_factors(&data, &pen, &f1.factors).unwrap();
    let o2 = eval_objective_of_factors(&data, &pen, &f2.factors).unwrap();
    let s1 = f1.signal(&data);
    let s2 = f2.signal(&data);
    eprintln!("epochs {} {} obj {o1} {o2} sig {}", f1.epochs, f2.epochs, (&s1 - &s2).norm() / s2.norm());
    assert!((o1 - o2).abs() / o2 < 1e-4);
    assert!((&s1 - &s2).norm() / s2.norm() < 1e-2);
}

#[test]
fn svt_objective_trace_monotone_and_zero_blocks() {
    let cfg = gi(3);
    let data = random_instance(9, 30, 4, &[10, 12, 14], &cfg, 12.0);
    let pen = rmt_penalties_for(30, 4, &[10, 12, 14], &cfg).unwrap();
    let f = solver::fit_svt_als(&data, &pen, &SolverOptions::default(), None).unwrap();
    for w in f.objective_trace.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", w);
    }
    for l in 0..cfg.l() {
        let full = f.s_full(l, &data);
        for (j, r) in data.cohorts().iter().enumerate() {
            if !cfg.s_module(l)[j] {
                assert!(full.columns(r.start, r.len()).iter().all(|&v| v == 0.0));
            }
        }
    }
    // recomputed objective matches the trace
    let obj = eval_objective(&data, &pen, &f.bs(), &f.ss_full(&data)).unwrap();
    assert!((obj - f.final_objective().unwrap()).abs() < 1e-8 * obj);
}

#[test]
fn factored_regression_matches_closed_form() {
    let cfg = IndicatorConfig::new(1, vec![vec![true]], vec![]).unwrap();
    let mut r = rng(4);
    let y = orthonormal_rows(4, 30, &mut r);
    let b = gauss(12, 2, &mut r) * gauss(2, 4, &mut r) * 3.0;
    let x = &b * &y + gauss(12, 30, &mut r) * 0.3;
    let data = ModelData::new(x.clone(), &y, vec![0..30], cfg).unwrap();
    let pen = PenaltySet::new(vec![1.5], vec![]).unwrap();
    let opts = SolverOptions {
        algorithm: Algorithm::FactoredAls,
        epsilon: Some(1e-20),
        max_epochs: 5000,
        ..Default::default()
    };
    let f = solver::fit(&data, &pen, &opts, None).unwrap();
    let want = linalg::svt(&(&x * y.transpose()), 1.5).unwrap();
    assert!(linalg::max_abs_diff(&f.b(0), &want) < 1e-6, "{}", linalg::max_abs_diff(&f.b(0), &want));
}

#[test]
fn huge_epsilon_stops_after_one_epoch() {
    let cfg = gi(2);
    let data = random_instance(1, 10, 2, &[5, 6], &cfg, 5.0);
    let pen = rmt_penalties_for(10, 2, &[5, 6], &cfg).unwrap();
    for alg in [Algorithm::FactoredAls, Algorithm::SvtAls] {
        let opts = SolverOptions {
            algorithm: alg,
            epsilon: Some(1e300),
            ..Default::default()
        };
        let f = solver::fit(&data, &pen, &opts, None).unwrap();
        assert_eq!((f.epochs, f.converged), (1, true));
    }
}

#[test]
fn svt_rejects_non_orthonormal_y() {
    let cfg = IndicatorConfig::new(1, vec![vec![true]], vec![]).unwrap();
    let mut r = rng(2);
    let y = gauss(3, 20, &mut r);
    let data = ModelData::new(gauss(5, 20, &mut r), &y, vec![0..20], cfg).unwrap();
    let pen = PenaltySet::new(vec![1.0], vec![]).unwrap();
    let err = solver::fit_svt_als(&data, &pen, &SolverOptions::default(), None).unwrap_err();
    assert!(matches!(err, marrr::MarrrError::Precondition(_)));
    let _ = DMatrix::<f64>::zeros(1, 1);
}

#[test]
fn single_global_auxiliary_module_converges_in_one_step() {
    let cfg = IndicatorConfig::new(2, vec![], vec![vec![true, true]]).unwrap();
    let mut r = rng(21);
    let x = gauss(15, 3, &mut r) * gauss(3, 20, &mut r) * 2.0 + gauss(15, 20, &mut r);
    let data = ModelData::new(x.clone(), &DMatrix::zeros(1, 20), vec![0..8, 8..20], cfg).unwrap();
    let pen = PenaltySet::new(vec![], vec![6.0]).unwrap();
    let f = solver::fit_svt_als(&data, &pen, &SolverOptions::default(), None).unwrap();
    let want = linalg::svt(&x, 6.0).unwrap();
    assert!(linalg::max_abs_diff(&f.s_full(0, &data), &want) < 1e-10);
    // The second epoch sees no change.
    assert!(f.epochs <= 2 && f.converged);
}

#[test]
fn nuclear_norm_invariant_under_orthonormal_rows() {
    let mut r = rng(22);
    for _ in 0..10 {
        let b = gauss(7, 4, &mut r);
        let y = orthonormal_rows(4, 25, &mut r);
        let a = linalg::nuclear_norm(&b).unwrap();
        let c = linalg::nuclear_norm(&(&b * &y)).unwrap();
        assert!((a - c).abs() < 1e-10 * a);
    }
}

#[test]
fn square_orthonormal_covariates_match_auxiliary_fit() {
    let n = 12;
    let mut r = rng(23);
    let x = gauss(9, n, &mut r) * 2.0;
    let y = orthonormal_rows(n, n, &mut r);
    let reg = ModelData::new(x.clone(), &y, vec![0..n], IndicatorConfig::new(1, vec![vec![true]], vec![]).unwrap()).unwrap();
    let aux = ModelData::new(x, &DMatrix::zeros(1, n), vec![0..n], IndicatorConfig::new(1, vec![], vec![vec![true]]).unwrap()).unwrap();
    let lambda = 4.0;
    let opts = SolverOptions {
        epsilon: Some(1e-20),
        ..Default::default()
    };
    let fb = solver::fit(&reg, &PenaltySet::new(vec![lambda], vec![]).unwrap(), &opts, None).unwrap();
    let fs = solver::fit(&aux, &PenaltySet::new(vec![], vec![lambda]).unwrap(), &opts, None).unwrap();
    assert!(linalg::max_abs_diff(&fb.by_full(0, &reg), &fs.s_full(0, &aux)) < 1e-8);
}

#[test]
fn variance_table_of_zero_fit() {
    let cfg = gi(2);
    let data = random_instance(3, 10, 2, &[6, 6], &cfg, 0.0);
    let pen = PenaltySet::new(vec![1e6; 3], vec![1e6; 3]).unwrap();
    let f = solver::fit(&data, &pen, &SolverOptions::default(), None).unwrap();
    let table = solver::variance_explained(&f, &data);
    assert_eq!(table.len(), 3);
    assert!(table.iter().all(|m| m.var_by == 0.0 && m.var_s == 0.0 && m.total == 0.0));
    let (rb, rs) = solver::estimated_ranks(&f, 0.1).unwrap();
    assert!(rb.iter().chain(&rs).all(|&r| r == 0));
}

fn arrr_fit(seed: u64, sd_by: f64, sd_s: f64) -> (solver::FitResult, ModelData, marrr::preprocess::PreprocessInfo) {
    use marrr::dataset::MissingMask;
    use marrr::preprocess::{prepare_with, YTreatment};
    use marrr::simulate::{generate, SimulationSpec};
    let t = generate(&SimulationSpec::arrr_single(100, 100, 10, 1, sd_by, sd_s, seed)).unwrap();
    let (data, info) = prepare_with(&t.dataset, &MissingMask::empty(), &t.cfg, YTreatment::Orthogonalize, false).unwrap();
    let pen = rmt_penalties_for(100, 10, &[100], &t.cfg).unwrap();
    let opts = SolverOptions {
        r_b_upper: 10,
        r_s_upper: 10,
        seed,
        ..Default::default()
    };
    (solver::fit(&data, &pen, &opts, None).unwrap(), data, info)
}

#[test]
fn large_covariate_signal_dominates_variance_table() {
    let big = 10f64.sqrt();
    let (f, data, _) = arrr_fit(31, big, 1.0);
    let table = solver::variance_explained(&f, &data);
    let top = &table[0];
    let share = top.var_by / (top.var_by + top.var_s);
    assert!(share > 0.9, "{share}");
}

#[test]
fn estimated_rank_of_rank_one_coefficients() {
    let mut total = 0.0;
    for seed in 0..25 {
        let (f, _, info) = arrr_fit(100 + seed, 1.0, 1.0);
        let b = marrr::preprocess::backmap_b(&f.b(0), &info.y_transforms[0]) * info.sigma_hat;
        total += linalg::singular_values(&b).unwrap().iter().filter(|&&s| s > 0.1).count() as f64;
    }
    let mean = total / 25.0;
    assert!((1.0..=1.5).contains(&mean), "{mean}");
}
