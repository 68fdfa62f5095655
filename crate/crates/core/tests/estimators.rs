//! Enumeration checks for the gradient estimators on small dense instances.
//!
//! The oracle in the shared test module lists every outcome of each block draw with its probability,
//! written directly from the distribution formulas on a dense matrix.

mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use saddlepoint::estimators::{
    estimate_into, prob_eval, Base, DenseView, EstGeometry, EstimatorKind, Family, GradEstimate, LConstants,
};
use saddlepoint::geometry::{bregman, operator, LocalNormSetup, Point};
use saddlepoint::sparse_matrix::SparseMatrix;

struct Instance {
    d: Vec<Vec<f64>>,
    a: SparseMatrix,
}

fn instances(seed: u64, count: usize) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|t| {
            let (m, n) = [(4, 4), (3, 5), (5, 2)][t % 3];
            let d = random_matrix(&mut rng, m, n);
            let a = SparseMatrix::from_dense(&d).unwrap();
            Instance { d, a }
        })
        .collect()
}

#[test]
fn oracle_expectation_is_the_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for inst in instances(1, 6) {
        let (m, n) = (inst.d.len(), inst.d[0].len());
        for kind in kinds() {
            let z = point(&mut rng, kind, m, n);
            let w0 = point(&mut rng, kind, m, n);
            let outs = oracle(kind, &inst.d, &z, Some(&w0));
            let base = if kind.family == Family::SublinearCoord {
                Point { x: vec![0.0; n], y: vec![0.0; m] }
            } else {
                operator(&inst.a, None, None, &w0)
            };
            let mut mean = base.clone();
            for o in &outs {
                let c = coordinate_of(kind, o, m, n);
                if o.0 == 0 {
                    mean.x[c] += o.3 * o.2;
                } else {
                    mean.y[c] += o.3 * o.2;
                }
            }
            let g = operator(&inst.a, None, None, &z);
            for (u, v) in mean.x.iter().chain(&mean.y).zip(g.x.iter().chain(&g.y)) {
                assert!((u - v).abs() < 1e-9, "{kind}: {u} vs {v}");
            }
        }
    }
}

#[test]
fn prob_eval_matches_oracle_and_sums_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for inst in instances(2, 6) {
        let (m, n) = (inst.d.len(), inst.d[0].len());
        for kind in kinds() {
            let z = point(&mut rng, kind, m, n);
            let w0 = point(&mut rng, kind, m, n);
            let outs = oracle(kind, &inst.d, &z, Some(&w0));
            let (mut sp, mut sq) = (0.0, 0.0);
            if kind.family == Family::VrRowCol {
                for i in 0..m {
                    sp += prob_eval(kind, &inst.a, &z, Some(&w0), i, 0).unwrap().0;
                }
                for j in 0..n {
                    sq += prob_eval(kind, &inst.a, &z, Some(&w0), 0, j).unwrap().1;
                }
                for o in &outs {
                    let (i, j) = if o.0 == 0 { (o.1 / n, 0) } else { (0, o.1 / m) };
                    let (p, q) = prob_eval(kind, &inst.a, &z, Some(&w0), i, j).unwrap();
                    let got = if o.0 == 0 { p } else { q };
                    assert!((got - o.3).abs() < 1e-12, "{kind}");
                }
            } else {
                for i in 0..m {
                    for j in 0..n {
                        let (p, q) = prob_eval(kind, &inst.a, &z, Some(&w0), i, j).unwrap();
                        if inst.d[i][j] == 0.0 {
                            assert_eq!((p, q), (0.0, 0.0), "{kind}: zero entry");
                        }
                        sp += p;
                        sq += q;
                    }
                }
            }
            assert!((sp - 1.0).abs() < 1e-12, "{kind}: p sums to {sp}");
            assert!((sq - 1.0).abs() < 1e-12, "{kind}: q sums to {sq}");
        }
    }
}

fn match_entry(
    kind: EstimatorKind,
    outs: &[Outcome],
    block: usize,
    coord: usize,
    value: f64,
    m: usize,
    n: usize,
) -> bool {
    outs.iter().any(|o| {
        o.0 == block && coordinate_of(kind, o, m, n) == coord && (o.2 - value).abs() <= 1e-9 * (1.0 + o.2.abs())
    })
}

#[test]
fn sampled_estimates_follow_the_oracle_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let insts = instances(3, 3);
    for inst in &insts {
        let (m, n) = (inst.d.len(), inst.d[0].len());
        for kind in kinds() {
            let z = point(&mut rng, kind, m, n);
            let w0 = point(&mut rng, kind, m, n);
            let outs = oracle(kind, &inst.d, &z, Some(&w0));
            let draws = 20000;
            let mut sum = Point { x: vec![0.0; n], y: vec![0.0; m] };
            let mut est = GradEstimate::new(Base::Offset);
            for _ in 0..draws {
                let mut view = DenseView::new(&inst.a, &z, Some(&w0));
                estimate_into(kind, &inst.a, &mut view, &mut rng, &mut est).unwrap();
                if kind.family == Family::VrRowCol {
                    // each row draw contributes entries that must all come from one row outcome
                    for &(j, v) in &est.x {
                        assert!(match_entry(kind, &outs, 0, j, v, m, n), "{kind}: x entry ({j}, {v})");
                    }
                    for &(i, v) in &est.y {
                        assert!(match_entry(kind, &outs, 1, i, v, m, n), "{kind}: y entry ({i}, {v})");
                    }
                } else {
                    assert!(est.x.len() <= 1 && est.y.len() <= 1);
                    for &(j, v) in &est.x {
                        assert!(match_entry(kind, &outs, 0, j, v, m, n), "{kind}: x entry ({j}, {v})");
                    }
                    for &(i, v) in &est.y {
                        assert!(match_entry(kind, &outs, 1, i, v, m, n), "{kind}: y entry ({i}, {v})");
                    }
                }
                for &(j, v) in &est.x {
                    sum.x[j] += v;
                }
                for &(i, v) in &est.y {
                    sum.y[i] += v;
                }
            }
            // the empirical mean of the correction approaches its exact expectation
            let mut exact = Point { x: vec![0.0; n], y: vec![0.0; m] };
            let mut second = Point { x: vec![0.0; n], y: vec![0.0; m] };
            for o in &outs {
                let c = coordinate_of(kind, o, m, n);
                let (e, s) =
                    if o.0 == 0 { (&mut exact.x[c], &mut second.x[c]) } else { (&mut exact.y[c], &mut second.y[c]) };
                *e += o.3 * o.2;
                *s += o.3 * o.2 * o.2;
            }
            for (k, (&s, (&e, &s2))) in sum
                .x
                .iter()
                .chain(&sum.y)
                .zip(exact.x.iter().chain(&exact.y).zip(second.x.iter().chain(&second.y)))
                .enumerate()
            {
                let mean = s / draws as f64;
                let sd = ((s2 - e * e).max(0.0) / draws as f64).sqrt();
                assert!((mean - e).abs() <= 5.0 * sd + 1e-9, "{kind} coord {k}: {mean} vs {e} (sd {sd})");
            }
        }
    }
}

#[test]
fn variance_bounds_hold_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for inst in instances(4, 9) {
        let (m, n) = (inst.d.len(), inst.d[0].len());
        let lc = LConstants::new(&inst.a);
        for kind in kinds() {
            let setup = LocalNormSetup::new(kind.setup(), m, n);
            let l = lc.certified(kind);
            for _ in 0..20 {
                let z = point(&mut rng, kind, m, n);
                let w0 = point(&mut rng, kind, m, n);
                let outs = oracle(kind, &inst.d, &z, Some(&w0));
                let second = sup_local_second_moment(kind, &outs, m, n);
                let bound =
                    if kind.family == Family::SublinearCoord { l * l } else { l * l * bregman(&setup, &w0, &z) };
                assert!(second <= bound * (1.0 + 1e-9) + 1e-12, "{kind}: {second} > {bound}");
            }
        }
    }
}

#[test]
fn oblivious_distribution_ignores_the_iterate() {
    let inst = &instances(6, 1)[0];
    let (m, n) = (inst.d.len(), inst.d[0].len());
    let kind = EstimatorKind::new(Family::SublinearCoord, EstGeometry::L2L2Oblivious).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z1 = point(&mut rng, kind, m, n);
    let z2 = point(&mut rng, kind, m, n);
    for i in 0..m {
        for j in 0..n {
            assert_eq!(
                prob_eval(kind, &inst.a, &z1, None, i, j).unwrap(),
                prob_eval(kind, &inst.a, &z2, None, i, j).unwrap()
            );
        }
    }
}

#[test]
fn rowcol_sparsity_is_bounded_by_rcs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for inst in instances(9, 3) {
        let (m, n) = (inst.d.len(), inst.d[0].len());
        let rcs = inst.a.stats().rcs;
        for g in [EstGeometry::L1L1, EstGeometry::L2L1v1, EstGeometry::L2L2Oblivious] {
            let kind = EstimatorKind::new(Family::VrRowCol, g).unwrap();
            let z = point(&mut rng, kind, m, n);
            let w0 = point(&mut rng, kind, m, n);
            let mut est = GradEstimate::new(Base::Reference);
            for _ in 0..200 {
                let mut view = DenseView::new(&inst.a, &z, Some(&w0));
                estimate_into(kind, &inst.a, &mut view, &mut rng, &mut est).unwrap();
                assert!(est.x.len() <= rcs && est.y.len() <= rcs);
            }
        }
    }
}
