mod common;

use common::*;
use marrr::dataset::{MaskKind, MultiCohortDataset};
use marrr::linalg;
use marrr::simulate::*;
use marrr::MarrrError;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn gi_spec(sds: SignalSds, seed: u64) -> SimulationSpec {
    SimulationSpec::global_individual(30, vec![20, 25, 15], 4, 2, sds, seed)
}

fn reconstruction_error(t: &SimulatedTruth) -> f64 {
    let x = t.dataset.x();
    (x - (t.signal() + &t.true_e)).norm() / x.norm()
}

#[test]
fn generation_reconstructs_outcomes() {
    let specs = [
        gi_spec(SignalSds::new(10f64.sqrt(), 1.0, 1.0, 1.0), 3),
        SimulationSpec::arrr_single(40, 50, 5, 2, 5.0, 0.5, 4),
        SimulationSpec::mrrr_two_cohort(30, 40, 5, 1, 2.0, 0.2, 5),
    ];
    for spec in specs {
        let t = generate(&spec).unwrap();
        assert!(reconstruction_error(&t) < 1e-10);
        assert_eq!(t.true_b.len(), t.cfg.k());
        assert_eq!(t.true_s.len(), t.cfg.l());
    }
}

#[test]
fn global_term_sd_matches_target() {
    let big = 10f64.sqrt();
    let t = generate(&gi_spec(SignalSds::new(big, 1.0, 1.0, 1.0), 8)).unwrap();
    let y = t.dataset.y();
    let sd = linalg::sample_sd(&(&t.true_b[0] * y));
    assert!((sd / big - 1.0).abs() < 0.02, "{sd}");
    // Individual terms have unit sd on their own cohort.
    let (_, _, ranges) = t.dataset.concatenated_view();
    for (k, r) in ranges.iter().enumerate() {
        let term = &t.true_b[k + 1] * y.columns(r.start, r.len());
        assert!((linalg::sample_sd(&term) - 1.0).abs() < 0.02);
        let s = t.true_s[k + 1].columns(r.start, r.len()).into_owned();
        assert!((linalg::sample_sd(&s) - 1.0).abs() < 0.02);
    }
}

#[test]
fn zero_signal_is_pure_noise() {
    let t = generate(&gi_spec(SignalSds::new(0.0, 0.0, 0.0, 0.0), 2)).unwrap();
    assert_eq!(t.dataset.x(), &t.true_e);
}

#[test]
fn arrr_sd_pair_gives_tenfold_ratio() {
    let t = generate(&SimulationSpec::arrr_single(100, 100, 10, 1, 5.0, 0.5, 9)).unwrap();
    let by = &t.true_b[0] * t.dataset.y();
    assert!((linalg::sample_sd(&by) - 5.0).abs() < 1e-10);
    assert!((linalg::sample_sd(&t.true_s[0]) - 0.5).abs() < 1e-10);
    assert!((by.norm() / t.true_s[0].norm() - 10.0).abs() < 0.5);
    assert_eq!(linalg::svd(&t.true_b[0]).unwrap().rank_above(1e-8), 1);
    assert_eq!(linalg::svd(&t.true_s[0]).unwrap().rank_above(1e-8), 5);
}

#[test]
fn orthogonal_generation_has_orthogonal_rows() {
    let mut spec = SimulationSpec::arrr_single(20, 50, 4, 1, 1.0, 1.0, 1);
    spec.orthogonalize_y_in_generation = true;
    let t = generate(&spec).unwrap();
    let y = t.dataset.y();
    let g = y * y.transpose();
    let d = g[(0, 0)];
    assert!(linalg::max_abs_diff(&(g / d), &DMatrix::identity(4, 4)) < 1e-10);
}

#[test]
fn generation_is_deterministic() {
    let spec = gi_spec(SignalSds::new(1.0, 1.0, 1.0, 1.0), 77);
    let a = generate(&spec).unwrap();
    let b = generate(&spec).unwrap();
    assert_eq!(a.dataset.x(), b.dataset.x());
    assert_eq!(a.dataset.y(), b.dataset.y());
}

#[test]
fn invalid_specs_rejected() {
    let mut spec = gi_spec(SignalSds::new(-1.0, 1.0, 1.0, 1.0), 0);
    assert!(matches!(generate(&spec), Err(MarrrError::Config(_))));
    spec.signal_sds = SignalSds::new(1.0, 1.0, 1.0, 1.0);
    spec.p = 0;
    assert!(matches!(generate(&spec), Err(MarrrError::Config(_))));
    assert!(matches!("nope".parse::<Scenario>(), Err(MarrrError::Config(_))));
}

fn square(seed: u64) -> MultiCohortDataset {
    generate(&SimulationSpec::arrr_single(100, 100, 5, 1, 1.0, 1.0, seed)).unwrap().dataset
}

#[test]
fn entry_mask_count_and_kind() {
    let ds = square(1);
    let m = make_missing(&ds, 0.05, MissingKind::Entry, 3).unwrap();
    assert_eq!(m.len(), 500);
    assert_eq!(m.kind(), MaskKind::Entry);
}

#[test]
fn column_mask_kind() {
    let ds = generate(&gi_spec(SignalSds::new(1.0, 1.0, 1.0, 1.0), 4)).unwrap().dataset;
    let m = make_missing(&ds, 0.1, MissingKind::Column, 5).unwrap();
    assert_eq!(m.kind(), MaskKind::Column);
    assert_eq!(m.len(), 6 * ds.p());
}

#[test]
fn row_mask_uses_one_cohort_per_row() {
    let t = generate(&SimulationSpec::mrrr_two_cohort(40, 30, 3, 1, 1.0, 1.0, 6)).unwrap();
    let ds = &t.dataset;
    let m = make_missing(ds, 0.05, MissingKind::Row, 9).unwrap();
    assert_eq!(m.kind(), MaskKind::RowWithinCohort);
    let mut cohorts_per_row = vec![std::collections::BTreeSet::new(); ds.p()];
    for &(i, j) in m.entries() {
        cohorts_per_row[i].insert(ds.cohort_of_column(j).unwrap());
    }
    let affected: Vec<_> = cohorts_per_row.iter().filter(|c| !c.is_empty()).collect();
    assert!(!affected.is_empty());
    assert!(affected.iter().all(|c| c.len() == 1));
    assert_eq!(m.len(), affected.len() * 30);
}

#[test]
fn infeasible_fractions_rejected() {
    let ds = square(2);
    for kind in MissingKind::ALL {
        assert!(matches!(make_missing(&ds, 0.0, kind, 1), Err(MarrrError::Config(_))));
        assert!(matches!(make_missing(&ds, 1.0, kind, 1), Err(MarrrError::Config(_))));
    }
    assert!(matches!(make_missing(&ds, 0.995, MissingKind::Column, 1), Err(MarrrError::Config(_))));
    assert!(matches!(make_missing(&ds, 0.995, MissingKind::Row, 1), Err(MarrrError::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn masks_are_reproducible_and_classified(
        seed in 0u64..1000,
        sizes in prop::collection::vec(8usize..20, 1..4),
        frac in 0.02f64..0.2,
    ) {
        let t = generate(&SimulationSpec::global_individual(25, sizes, 3, 1, SignalSds::new(1.0, 1.0, 1.0, 1.0), seed)).unwrap();
        let ds = &t.dataset;
        for (kind, expected) in [
            (MissingKind::Entry, MaskKind::Entry),
            (MissingKind::Column, MaskKind::Column),
            (MissingKind::Row, MaskKind::RowWithinCohort),
        ] {
            let a = make_missing(ds, frac, kind, seed);
            let b = make_missing(ds, frac, kind, seed);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert_eq!(a.entries(), b.entries());
                    prop_assert_eq!(a.kind(), expected);
                    let target = frac * (ds.p() * ds.n()) as f64;
                    // Whole rows or columns overshoot by at most one unit.
                    prop_assert!((a.len() as f64 - target).abs() <= (ds.p().max(ds.n())) as f64 + 1.0);
                    marrr::impute::check_cohorts_observed(ds, &a).unwrap();
                }
                (Err(MarrrError::Config(_)), Err(MarrrError::Config(_))) => {}
                other => prop_assert!(false, "unexpected {:?}", other.0.map(|m| m.len())),
            }
        }
    }
}

#[test]
fn largest_gaussian_singular_value_bound() {
    let bound = (200f64.sqrt() + 300f64.sqrt()) * 1.05;
    let hits = (0..50)
        .filter(|&s| {
            let e = gauss(200, 300, &mut rng(1000 + s));
            linalg::top_singular_value(&e, 500, 1e-10) <= bound
        })
        .count();
    assert!(hits >= 48, "{hits}/50");
}

#[test]
fn spiked_singular_value_matches_limit() {
    // X = B + E / sqrt(n), rank-one B with singular value 2, aspect ratio 1.
    let n = 2000;
    let mut r = rng(31);
    let u = gauss(n, 1, &mut r).normalize();
    let v = gauss(n, 1, &mut r).normalize();
    let x = &u * v.transpose() * 2.0 + gauss(n, n, &mut r) / (n as f64).sqrt();
    let top = linalg::top_singular_value(&x, 1000, 1e-12);
    let limit = expected_inflated_singular_value(2.0, 1.0);
    assert!((top / limit - 1.0).abs() < 0.05, "{top} vs {limit}");
}

#[test]
fn baselines_run_on_generated_data() {
    let t = generate(&SimulationSpec::mrrr_two_cohort(30, 40, 4, 1, 1.0, 1.0, 12)).unwrap();
    let ls = two_stage_ls_mrrr(&t.dataset).unwrap();
    let nn = two_stage_nn_mrrr(&t.dataset).unwrap();
    assert_eq!(ls.b.len(), 3);
    assert_eq!(nn.b.len(), 3);
    for b in ls.b.iter().chain(&nn.b) {
        assert_eq!(b.shape(), (30, 4));
    }
}

#[test]
fn studies_are_deterministic() {
    let opts = StudyOptions {
        replicates: 1,
        seed: 5,
        ..StudyOptions::default()
    };
    let a = table1b(&opts).unwrap();
    let b = table1b(&opts).unwrap();
    assert_eq!(a, b);
    let methods: std::collections::BTreeSet<_> = a.iter().map(|r| r.method.as_str()).collect();
    assert!(methods.contains("mrrr") && methods.contains("two_stage_ls") && methods.contains("two_stage_nn"));
    let summary = summarize(&a);
    assert!(summary.iter().all(|s| s.count == 1));
}
