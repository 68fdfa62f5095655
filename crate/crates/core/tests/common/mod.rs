//! Helpers shared by the integration tests: random instances, exact enumeration of
//! the estimator distributions, and dense reference computations.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use saddlepoint::estimators::{EstGeometry, EstimatorKind, Family};
use saddlepoint::geometry::{Point, SetupKind};

pub const ALL_GEOMS: [EstGeometry; 6] = [
    EstGeometry::L1L1,
    EstGeometry::L2L1v1,
    EstGeometry::L2L1v2,
    EstGeometry::L2L1v3,
    EstGeometry::L2L2Oblivious,
    EstGeometry::L2L2Dynamic,
];

pub fn kinds() -> Vec<EstimatorKind> {
    let mut v = Vec::new();
    for f in [Family::SublinearCoord, Family::VrCoord, Family::VrRowCol] {
        for g in ALL_GEOMS {
            if let Ok(k) = EstimatorKind::new(f, g) {
                v.push(k);
            }
        }
    }
    v
}

pub fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Vec<Vec<f64>> {
    loop {
        let d: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..n).map(|_| if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random::<f64>() * 4.0 - 2.0 }).collect()
            })
            .collect();
        let rows_ok = d.iter().all(|r| r.iter().any(|&v| v != 0.0));
        let cols_ok = (0..n).all(|j| d.iter().any(|r| r[j] != 0.0));
        if rows_ok && cols_ok {
            return d;
        }
    }
}

pub fn simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().ln() + 1e-3).collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|t| t / s).collect()
}

pub fn ball(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let nrm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
    let r = rng.random::<f64>();
    v.iter().map(|t| t / nrm * r).collect()
}

pub fn point(rng: &mut ChaCha8Rng, kind: EstimatorKind, m: usize, n: usize) -> Point {
    match kind.geometry {
        EstGeometry::L1L1 => Point { x: simplex(rng, n), y: simplex(rng, m) },
        EstGeometry::L2L2Oblivious | EstGeometry::L2L2Dynamic => Point { x: ball(rng, n), y: ball(rng, m) },
        _ => Point { x: ball(rng, n), y: simplex(rng, m) },
    }
}

/// (block 0 = x / 1 = y, coordinate, value, probability, source) for every outcome. The
/// source is the entry i * n + j for coordinate draws and the row or column otherwise.
pub type Outcome = (usize, usize, f64, f64, usize);

pub fn oracle(kind: EstimatorKind, d: &[Vec<f64>], z: &Point, w0: Option<&Point>) -> Vec<Outcome> {
    let m = d.len();
    let n = d[0].len();
    let rl1: Vec<f64> = d.iter().map(|r| r.iter().map(|v| v.abs()).sum()).collect();
    let rl2: Vec<f64> = d.iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let cl1: Vec<f64> = (0..n).map(|j| d.iter().map(|r| r[j].abs()).sum()).collect();
    let cl2: Vec<f64> = (0..n).map(|j| d.iter().map(|r| r[j] * r[j]).sum()).collect();
    let cnt: Vec<f64> = (0..n).map(|j| d.iter().filter(|r| r[j] != 0.0).count() as f64).collect();
    let fro: f64 = rl2.iter().sum();
    let srl1: f64 = rl1.iter().map(|v| v * v).sum();
    let scl1: f64 = cl1.iter().map(|v| v * v).sum();
    let zero = Point { x: vec![0.0; n], y: vec![0.0; m] };
    let r = if kind.family == Family::SublinearCoord { &zero } else { w0.unwrap() };
    let dy: Vec<f64> = (0..m).map(|i| z.y[i] - r.y[i]).collect();
    let dx: Vec<f64> = (0..n).map(|j| z.x[j] - r.x[j]).collect();
    let my: Vec<f64> = (0..m).map(|i| (z.y[i] + 2.0 * r.y[i]) / 3.0).collect();
    let mx: Vec<f64> = (0..n).map(|j| (z.x[j] + 2.0 * r.x[j]) / 3.0).collect();
    let sq_y: f64 = dy.iter().map(|v| v * v).sum();
    let sq_x: f64 = dx.iter().map(|v| v * v).sum();
    let sq_x_cnt: f64 = (0..n).map(|j| cnt[j] * dx[j] * dx[j]).sum();
    let sq_x_l1: f64 = (0..n).map(|j| cl1[j] * dx[j] * dx[j]).sum();
    let mut out = Vec::new();
    if kind.family == Family::VrRowCol {
        for i in 0..m {
            let p = match kind.geometry {
                EstGeometry::L2L2Oblivious => rl2[i] / fro,
                _ => my[i],
            };
            if p > 0.0 {
                for j in 0..n {
                    out.push((0, j + i * n, d[i][j] * dy[i] / p, p, i));
                }
            }
        }
        for j in 0..n {
            let q = match kind.geometry {
                EstGeometry::L2L2Oblivious => cl2[j] / fro,
                EstGeometry::L1L1 => mx[j],
                _ => {
                    if sq_x > 0.0 {
                        dx[j] * dx[j] / sq_x
                    } else {
                        0.0
                    }
                }
            };
            if q > 0.0 {
                for i in 0..m {
                    out.push((1, i + j * m, -d[i][j] * dx[j] / q, q, j));
                }
            }
        }
        return out;
    }
    let sub = kind.family == Family::SublinearCoord;
    for i in 0..m {
        for j in 0..n {
            let a = d[i][j];
            if a == 0.0 {
                continue;
            }
            let p = match kind.geometry {
                EstGeometry::L1L1 => (if sub { z.y[i] } else { my[i] }) * a * a / rl2[i],
                EstGeometry::L2L1v1 | EstGeometry::L2L1v2 | EstGeometry::L2L1v3 => {
                    (if sub { z.y[i] } else { my[i] }) * a.abs() / rl1[i]
                }
                EstGeometry::L2L2Oblivious => rl1[i] * rl1[i] / srl1 * a.abs() / rl1[i],
                EstGeometry::L2L2Dynamic => {
                    if sq_y > 0.0 {
                        dy[i] * dy[i] / sq_y * a.abs() / rl1[i]
                    } else {
                        0.0
                    }
                }
            };
            if p > 0.0 {
                out.push((0, j, a * dy[i] / p, p, i * n + j));
            }
            let q = match kind.geometry {
                EstGeometry::L1L1 => (if sub { z.x[j] } else { mx[j] }) * a * a / cl2[j],
                EstGeometry::L2L1v1 => a * a / fro,
                EstGeometry::L2L1v2 => {
                    if sq_x_cnt > 0.0 {
                        dx[j] * dx[j] / sq_x_cnt
                    } else {
                        0.0
                    }
                }
                EstGeometry::L2L1v3 => {
                    if sq_x_l1 > 0.0 {
                        a.abs() * dx[j] * dx[j] / sq_x_l1
                    } else {
                        0.0
                    }
                }
                EstGeometry::L2L2Oblivious => cl1[j] * cl1[j] / scl1 * a.abs() / cl1[j],
                EstGeometry::L2L2Dynamic => {
                    if sq_x > 0.0 {
                        dx[j] * dx[j] / sq_x * a.abs() / cl1[j]
                    } else {
                        0.0
                    }
                }
            };
            if q > 0.0 {
                out.push((1, i, -a * dx[j] / q, q, i * n + j));
            }
        }
    }
    out
}

pub fn coordinate_of(kind: EstimatorKind, o: &Outcome, m: usize, n: usize) -> usize {
    if kind.family == Family::VrRowCol {
        if o.0 == 0 {
            o.1 % n
        } else {
            o.1 % m
        }
    } else {
        o.1
    }
}

/// sup over w of E ||estimate - base||_w^2: the largest coordinate on simplex blocks and
/// the sum of coordinates on ball blocks.
pub fn sup_local_second_moment(kind: EstimatorKind, outs: &[Outcome], m: usize, n: usize) -> f64 {
    let mut ex = vec![0.0; n];
    let mut ey = vec![0.0; m];
    if kind.family == Family::VrRowCol {
        for o in outs {
            let c = coordinate_of(kind, o, m, n);
            if o.0 == 0 {
                ex[c] += o.3 * o.2 * o.2;
            } else {
                ey[c] += o.3 * o.2 * o.2;
            }
        }
    } else {
        for o in outs {
            if o.0 == 0 {
                ex[o.1] += o.3 * o.2 * o.2;
            } else {
                ey[o.1] += o.3 * o.2 * o.2;
            }
        }
    }
    let setup = kind.setup();
    let x_simplex = setup == SetupKind::L1L1;
    let y_simplex = setup != SetupKind::L2L2;
    let fx = if x_simplex { ex.iter().cloned().fold(0.0, f64::max) } else { ex.iter().sum() };
    let fy = if y_simplex { ey.iter().cloned().fold(0.0, f64::max) } else { ey.iter().sum() };
    fx + fy
}

/// Dense copy of a sparse matrix.
pub fn dense(a: &saddlepoint::sparse_matrix::SparseMatrix) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; a.cols()]; a.rows()];
    for (i, j, v) in a.triplets() {
        d[i][j] = v;
    }
    d
}

pub fn dense_mv(d: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    d.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

pub fn dense_mvt(d: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = d[0].len();
    (0..n).map(|j| d.iter().zip(y).map(|(r, t)| r[j] * t).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(s, t)| s * t).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Support function of the unit simplex (largest entry) or the unit ball (norm).
fn support(simplex: bool, h: &[f64]) -> f64 {
    if simplex {
        h.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    } else {
        norm2(h)
    }
}

/// Duality gap of y^T A x + b^T x - c^T y, written from the definition: the best
/// response of each player over a unit simplex or a unit ball at the origin.
pub fn dense_gap(kind: SetupKind, d: &[Vec<f64>], b: Option<&[f64]>, c: Option<&[f64]>, z: &Point) -> f64 {
    let (xs, ys) = match kind {
        SetupKind::L1L1 => (true, true),
        SetupKind::L2L1 => (false, true),
        SetupKind::L2L2 => (false, false),
    };
    let m = d.len();
    let n = d[0].len();
    let zb = vec![0.0; n];
    let zc = vec![0.0; m];
    let b = b.unwrap_or(&zb);
    let c = c.unwrap_or(&zc);
    let ax = dense_mv(d, &z.x);
    let aty = dense_mvt(d, &z.y);
    let resp_y: Vec<f64> = ax.iter().zip(c).map(|(s, t)| s - t).collect();
    let resp_x: Vec<f64> = aty.iter().zip(b).map(|(s, t)| -(s + t)).collect();
    let upper = dot(b, &z.x) + support(ys, &resp_y);
    let lower = -support(xs, &resp_x) - dot(c, &z.y);
    upper - lower
}

/// Pearson statistic of observed counts against probabilities, pooling cells whose
/// expected count is below 5 into one. Returns (statistic, degrees of freedom).
pub fn chi_square(counts: &[u64], probs: &[f64]) -> (f64, usize) {
    let total: u64 = counts.iter().sum();
    let t = total as f64;
    let (mut stat, mut cells) = (0.0, 0usize);
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (&o, &p) in counts.iter().zip(probs) {
        let e = p * t;
        if e < 5.0 {
            pool_o += o as f64;
            pool_e += e;
        } else {
            stat += (o as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    if pool_e > 0.0 {
        stat += (pool_o - pool_e).powi(2) / pool_e.max(1e-300);
        cells += 1;
    } else if pool_o > 0.0 {
        return (f64::INFINITY, cells.max(1));
    }
    (stat, cells.saturating_sub(1).max(1))
}

/// Whether the counts are consistent with the probabilities at level alpha.
pub fn chi_square_passes(counts: &[u64], probs: &[f64], alpha: f64) -> bool {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let (stat, df) = chi_square(counts, probs);
    let crit = ChiSquared::new(df as f64).unwrap().inverse_cdf(1.0 - alpha);
    stat <= crit
}

/// Natural log of sum_j exp(t_j).
pub fn log_sum_exp(t: &[f64]) -> f64 {
    let mx = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + t.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}
