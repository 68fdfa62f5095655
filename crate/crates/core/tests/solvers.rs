//! Solver runs on small instances: reproducibility, bookkeeping and accuracy.

mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use saddlepoint::cli::{generate_instance, GenDist};
use saddlepoint::estimators::{EstGeometry, EstimatorKind, Family, LConstants};
use saddlepoint::geometry::{Composite, LocalNormSetup, SetupKind};
use saddlepoint::solvers::{
    solve_mirror_prox_baseline, solve_strongly_monotone, solve_sublinear, solve_vr, SolveReport,
    StronglyMonotoneConfig, SublinearConfig, VrConfig,
};
use saddlepoint::sparse_matrix::SparseMatrix;

const KINDS: [SetupKind; 3] = [SetupKind::L1L1, SetupKind::L2L1, SetupKind::L2L2];

fn instance() -> (SparseMatrix, Vec<Vec<f64>>) {
    let a = generate_instance(12, 10, 40, GenDist::Uniform, 3).unwrap();
    let d = dense(&a);
    (a, d)
}

fn check_trace(rep: &SolveReport) {
    assert!(!rep.trace.is_empty());
    for w in rep.trace.windows(2) {
        assert!(w[1].iteration >= w[0].iteration);
        assert!(w[1].coords_touched >= w[0].coords_touched);
        assert!(w[1].matvecs >= w[0].matvecs);
    }
    assert!(rep.coords_touched >= rep.step_coords_touched);
}

#[test]
fn sublinear_is_reproducible_and_accurate() {
    let (a, d) = instance();
    let eps = 0.1;
    for kind in KINDS {
        let setup = LocalNormSetup::new(kind, 12, 10);
        let est = EstimatorKind::default_for(Family::SublinearCoord, kind, &LConstants::new(&a));
        let run = |seed: u64| {
            let mut cfg = SublinearConfig::new(eps);
            cfg.seed = seed;
            cfg.checkpoint_every = 1000;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            solve_sublinear(&setup, &a, None, None, est, &cfg, &mut rng).unwrap()
        };
        let (z1, r1) = run(5);
        let (z2, r2) = run(5);
        assert_eq!(z1, z2);
        assert_eq!(r1.timeless_trace(), r2.timeless_trace());
        assert_eq!(r1.params, r2.params);
        check_trace(&r1);
        assert!(setup.contains(&z1));
        let g = dense_gap(kind, &d, None, None, &z1);
        assert!((g - r1.final_gap).abs() <= 1e-9 * (1.0 + g));
        let gaps: Vec<f64> = (0..4).map(|s| dense_gap(kind, &d, None, None, &run(s).0)).collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!(mean <= 1.2 * eps, "{kind:?}: mean gap {mean}");
    }
}

#[test]
fn vr_is_reproducible_and_respects_its_perturbation_bound() {
    let (a, d) = instance();
    let eps = 0.05;
    for kind in KINDS {
        let setup = LocalNormSetup::new(kind, 12, 10);
        let est = match kind {
            SetupKind::L2L2 => EstimatorKind::new(Family::VrCoord, EstGeometry::L2L2Dynamic).unwrap(),
            _ => EstimatorKind::default_for(Family::VrCoord, kind, &LConstants::new(&a)),
        };
        let run = |seed: u64, exact: bool| {
            let mut cfg = VrConfig::new(eps);
            cfg.seed = seed;
            cfg.checkpoint_every = 5;
            cfg.exact_maintainers = exact;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            solve_vr(&setup, &a, None, None, est, &cfg, &mut rng).unwrap()
        };
        let (z1, r1) = run(9, false);
        let (z2, r2) = run(9, false);
        assert_eq!(z1, z2);
        assert_eq!(r1.timeless_trace(), r2.timeless_trace());
        check_trace(&r1);
        assert!(r1.perturbation >= 0.0 && r1.perturbation <= r1.perturbation_bound * (1.0 + 1e-9) + 1e-15);
        assert!(setup.contains(&z1));
        let g = dense_gap(kind, &d, None, None, &z1);
        assert!(g <= 1.2 * eps, "{kind:?}: gap {g}");
        let (ze, _) = run(9, true);
        let ge = dense_gap(kind, &d, None, None, &ze);
        assert!(ge <= 1.2 * eps, "{kind:?} with exact maintainers: gap {ge}");
    }
}

#[test]
fn linear_terms_need_ball_blocks() {
    let (a, d) = instance();
    let b = vec![0.1; 10];
    let c = vec![-0.1; 12];
    for kind in [SetupKind::L1L1, SetupKind::L2L1] {
        let setup = LocalNormSetup::new(kind, 12, 10);
        let est = EstimatorKind::default_for(Family::SublinearCoord, kind, &LConstants::new(&a));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(solve_sublinear(&setup, &a, Some(&b), Some(&c), est, &SublinearConfig::new(0.1), &mut rng).is_err());
    }
    let setup = LocalNormSetup::new(SetupKind::L2L2, 12, 10);
    let est = EstimatorKind::new(Family::VrCoord, EstGeometry::L2L2Dynamic).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (z, _) = solve_vr(&setup, &a, Some(&b), Some(&c), est, &VrConfig::new(0.05), &mut rng).unwrap();
    assert!(dense_gap(SetupKind::L2L2, &d, Some(&b), Some(&c), &z) <= 0.06);
}

#[test]
fn mismatched_estimators_are_rejected() {
    let (a, _) = instance();
    let setup = LocalNormSetup::new(SetupKind::L1L1, 12, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let wrong_geom = EstimatorKind::default_for(Family::SublinearCoord, SetupKind::L2L2, &LConstants::new(&a));
    assert!(solve_sublinear(&setup, &a, None, None, wrong_geom, &SublinearConfig::new(0.1), &mut rng).is_err());
    let wrong_family = EstimatorKind::default_for(Family::SublinearCoord, SetupKind::L1L1, &LConstants::new(&a));
    assert!(solve_vr(&setup, &a, None, None, wrong_family, &VrConfig::new(0.1), &mut rng).is_err());
    assert!(solve_sublinear(&setup, &a, None, None, wrong_family, &SublinearConfig::new(-1.0), &mut rng).is_err());
    let other = LocalNormSetup::new(SetupKind::L1L1, 10, 12);
    assert!(solve_sublinear(&other, &a, None, None, wrong_family, &SublinearConfig::new(0.1), &mut rng).is_err());
}

#[test]
fn mirror_prox_baseline_reaches_the_target() {
    let (a, d) = instance();
    for kind in KINDS {
        let setup = LocalNormSetup::new(kind, 12, 10);
        let (z, rep) = solve_mirror_prox_baseline(&setup, &a, None, None, 1e-3).unwrap();
        let g = dense_gap(kind, &d, None, None, &z);
        assert!(g <= 1e-3 * (1.0 + 1e-9), "{kind:?}: gap {g}");
        assert!((g - rep.final_gap).abs() <= 1e-9);
        let g0 = dense_gap(kind, &d, None, None, &setup.center());
        assert!(g0 <= 1e-3 || rep.matvecs > 0);
    }
}

#[test]
fn strongly_monotone_solver_approaches_the_regularized_saddle() {
    let (a, _) = instance();
    for kind in KINDS {
        let setup = LocalNormSetup::new(kind, 12, 10);
        // move the x anchor off the center so the regularized saddle is not the starting point
        let mut x_center = setup.x.center();
        if kind != SetupKind::L1L1 {
            x_center[0] = 0.5;
        }
        let comp = Composite { mu_x: 0.5, mu_y: 0.5, x_center, y_center: setup.y.center() };
        let est = match kind {
            SetupKind::L2L2 => EstimatorKind::new(Family::VrCoord, EstGeometry::L2L2Dynamic).unwrap(),
            _ => EstimatorKind::default_for(Family::VrCoord, kind, &LConstants::new(&a)),
        };
        let mut cfg = StronglyMonotoneConfig::new(0.01);
        cfg.seed = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (z, rep) = solve_strongly_monotone(&setup, &a, None, None, &comp, est, &cfg, &mut rng).unwrap();
        assert!(setup.contains(&z));
        let g = saddlepoint::geometry::gap_with_composite(&setup, &a, None, None, Some(&comp), &z);
        let g0 = saddlepoint::geometry::gap_with_composite(&setup, &a, None, None, Some(&comp), &setup.center());
        assert!(g < g0 && g <= 0.05, "{kind:?}: composite gap {g} (start {g0})");
        assert!(rep.perturbation <= rep.perturbation_bound * (1.0 + 1e-9) + 1e-15);
    }
}
