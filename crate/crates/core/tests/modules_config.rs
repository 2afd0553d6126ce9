mod common;

use std::collections::HashSet;

use common::*;
use marrr::dataset::MultiCohortDataset;
use marrr::linalg;
use marrr::modules_config::*;
use marrr::preprocess;
use marrr::MarrrError;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn scaled_dataset(x: DMatrix<f64>, sizes: &[usize]) -> MultiCohortDataset {
    let n = x.ncols();
    let (xs, _, _) = preprocess::center_and_scale_x(&x).unwrap();
    let y = DMatrix::from_fn(1, n, |_, j| j as f64);
    MultiCohortDataset::from_concatenated(xs, y, sizes).unwrap()
}

#[test]
fn forward_selection_finds_global_module() {
    let sizes = [30, 30, 30];
    for seed in 0..10 {
        let mut r = rng(40 + seed);
        let u = gauss(50, 1, &mut r);
        let v = gauss(1, 90, &mut r);
        let s = &u * &v;
        let s = &s * (10.0 / linalg::sample_sd(&s));
        let ds = scaled_dataset(s + gauss(50, 90, &mut r), &sizes);
        let cfg = forward_select(&ds, 2).unwrap();
        assert!(cfg.l() >= 1, "seed {seed}");
        assert_eq!(cfg.s_module(0), &[true, true, true], "seed {seed}");
        assert_eq!(cfg.c_y(), cfg.c_s());
    }
}

/// Share of the outcome energy captured by thresholding each selected module.
fn selected_energy(ds: &MultiCohortDataset, cfg: &IndicatorConfig) -> f64 {
    let (x, _, ranges) = ds.concatenated_view();
    let mut total = 0.0;
    for l in 0..cfg.l() {
        let block = cfg.s_columns(l, &ranges).gather(x);
        let lambda = (block.nrows() as f64).sqrt() + (block.ncols() as f64).sqrt();
        total += linalg::svt(&block, lambda).unwrap().norm_squared();
    }
    total / x.norm_squared()
}

#[test]
fn forward_selection_on_noise_selects_nothing_material() {
    let sizes = [30, 30, 30];
    let negligible = (0..10)
        .filter(|&seed| {
            let ds = scaled_dataset(gauss(50, 90, &mut rng(70 + seed)), &sizes);
            let cfg = forward_select(&ds, 3).unwrap();
            cfg.l() == 0 || selected_energy(&ds, &cfg) < 0.01
        })
        .count();
    assert!(negligible >= 8, "{negligible}/10");
}

#[test]
fn forward_selection_with_no_budget() {
    let ds = scaled_dataset(gauss(10, 12, &mut rng(1)), &[6, 6]);
    let cfg = forward_select(&ds, 0).unwrap();
    assert_eq!((cfg.k(), cfg.l()), (0, 0));
}

#[test]
fn penalty_arithmetic() {
    let cfg = IndicatorConfig::symmetric(1, vec![vec![true]]).unwrap();
    let pen = rmt_penalties_for(1, 1, &[1], &cfg).unwrap();
    assert_eq!(pen.lambda_b, vec![2.0]);
    assert_eq!(pen.lambda_s, vec![2.0]);
    let pen = rmt_penalties_for(1000, 50, &[976], &cfg).unwrap();
    assert!((pen.lambda_b[0] - 38.694).abs() < 1e-3);
    assert!((pen.lambda_s[0] - 62.864).abs() < 1e-3);
    assert!(PenaltySet::new(vec![1.0], vec![0.0]).is_err());
}

#[test]
fn enumeration_order_and_limit() {
    let two = enumerate_modules(2, 10).unwrap();
    assert_eq!(two.c_s(), &[vec![true, true], vec![true, false], vec![false, true]]);
    let three = enumerate_modules(3, 3).unwrap();
    assert_eq!(
        three.c_s(),
        &[vec![true, true, true], vec![true, true, false], vec![true, false, true]]
    );
    assert!(matches!(enumerate_modules(11, 5), Err(MarrrError::Config(_))));
}

#[test]
fn condition_two_boundary_is_reported() {
    let y = DMatrix::from_row_slice(2, 5, &[1.0, 2.0, 0.0, -1.0, 3.0, 0.5, 0.0, 1.0, 2.0, -2.0]);
    let nuc = linalg::nuclear_norm(&y).unwrap();
    let cfg = IndicatorConfig::new(1, vec![vec![true]], vec![vec![true]]).unwrap();
    let pen = PenaltySet::new(vec![2.0 * nuc], vec![2.0]).unwrap();
    let v = check_degeneracy(&cfg, &pen, &[nuc]).unwrap();
    assert!(v.iter().any(|v| v.condition == 2), "{v:?}");
    let ok = PenaltySet::new(vec![2.0 * nuc * 0.99], vec![2.0]).unwrap();
    assert!(check_degeneracy(&cfg, &ok, &[nuc]).unwrap().iter().all(|v| v.condition != 2));
}

#[test]
fn nested_modules_with_larger_inner_penalty_violate() {
    let cfg = IndicatorConfig::new(2, vec![], vec![vec![true, true], vec![true, false]]).unwrap();
    let pen = PenaltySet::new(vec![], vec![5.0, 6.0]).unwrap();
    let v = check_degeneracy(&cfg, &pen, &[]).unwrap();
    assert!(v.iter().any(|v| v.condition == 3));
}

fn random_config() -> impl Strategy<Value = (usize, Vec<u32>, Vec<usize>, usize)> {
    (2usize..6).prop_flat_map(|j| {
        (
            Just(j),
            prop::collection::vec(1u32..(1u32 << j), 1..8),
            prop::collection::vec(1usize..200, j),
            5usize..300,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rmt_penalties_meet_auxiliary_conditions((j, masks, sizes, p) in random_config()) {
        let mut cols: Vec<Vec<bool>> = Vec::new();
        for m in masks {
            let c: Vec<bool> = (0..j).map(|b| m & (1 << b) != 0).collect();
            if !cols.contains(&c) {
                cols.push(c);
            }
        }
        let cfg = IndicatorConfig::new(j, vec![], cols).unwrap();
        let pen = rmt_penalties_for(p, 3, &sizes, &cfg).unwrap();
        let v = check_degeneracy(&cfg, &pen, &[]).unwrap();
        prop_assert!(v.iter().all(|v| v.condition != 3 && v.condition != 4), "{:?}", v);
    }

    #[test]
    fn enumeration_has_no_duplicates(j in 1usize..9, limit in 1usize..300) {
        let cfg = enumerate_modules(j, limit).unwrap();
        let set: HashSet<_> = cfg.c_s().iter().collect();
        prop_assert_eq!(set.len(), cfg.l());
        prop_assert_eq!(cfg.l(), limit.min((1 << j) - 1));
        prop_assert_eq!(cfg.c_y(), cfg.c_s());
    }

    #[test]
    fn forward_selection_output_is_valid(seed in 0u64..500, sizes in prop::collection::vec(5usize..15, 1..4)) {
        let n: usize = sizes.iter().sum();
        let ds = scaled_dataset(gauss(12, n, &mut rng(seed)) * 2.0, &sizes);
        let cfg = forward_select(&ds, 3).unwrap();
        let again = IndicatorConfig::new(cfg.num_cohorts(), cfg.c_y().to_vec(), cfg.c_s().to_vec());
        prop_assert!(again.is_ok());
        prop_assert!(cfg.l() <= 3);
    }
}
