//! Domains, Bregman divergences, clipping and exact duality gaps for the three
//! geometries: simplex-simplex (L1L1), ball-simplex (L2L1) and ball-ball (L2L2).
//!
//! The objective is f(x, y) = y^T A x + b^T x - c^T y with x in X and y in Y.
//! Simplex blocks use the entropy mirror map and the KL divergence, ball blocks use
//! half the squared Euclidean distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse_matrix::SparseMatrix;

/// Feasibility tolerance for points produced by the solvers.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetupKind {
    L1L1,
    L2L1,
    L2L2,
}

impl std::str::FromStr for SetupKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1l1" => Ok(SetupKind::L1L1),
            "l2l1" => Ok(SetupKind::L2L1),
            "l2l2" => Ok(SetupKind::L2L2),
            _ => Err(Error::Config(format!("unknown geometry '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Simplex {
        dim: usize,
    },
    /// Euclidean ball; an infinite radius denotes the whole space.
    Ball {
        dim: usize,
        center: Vec<f64>,
        radius: f64,
    },
}

impl Domain {
    pub fn unit_ball(dim: usize) -> Self {
        Domain::Ball { dim, center: vec![0.0; dim], radius: 1.0 }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Simplex { dim } | Domain::Ball { dim, .. } => *dim,
        }
    }

    pub fn is_simplex(&self) -> bool {
        matches!(self, Domain::Simplex { .. })
    }

    /// Minimizer of the distance generating function: uniform vector or ball center.
    pub fn center(&self) -> Vec<f64> {
        match self {
            Domain::Simplex { dim } => vec![1.0 / *dim as f64; *dim],
            Domain::Ball { center, .. } => center.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::Simplex { dim } if *dim == 0 => Err(Error::Config("simplex dimension must be positive".into())),
            Domain::Ball { dim, center, radius } => {
                if *dim == 0 {
                    return Err(Error::Config("ball dimension must be positive".into()));
                }
                if center.len() != *dim {
                    return Err(Error::Config("ball center has the wrong dimension".into()));
                }
                if radius.is_nan() || *radius <= 0.0 {
                    return Err(Error::Config(format!("ball radius must be positive, got {radius}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Checks membership with the library feasibility tolerance.
    pub fn contains(&self, v: &[f64]) -> bool {
        if v.len() != self.dim() || v.iter().any(|t| !t.is_finite()) {
            return false;
        }
        match self {
            Domain::Simplex { .. } => {
                v.iter().all(|&t| t >= -FEAS_TOL) && (v.iter().sum::<f64>() - 1.0).abs() <= FEAS_TOL
            }
            Domain::Ball { center, radius, .. } => dist(v, center) <= radius * (1.0 + FEAS_TOL) + FEAS_TOL,
        }
    }

    /// Bregman divergence V_z(z') of this block.
    pub fn divergence(&self, z: &[f64], zp: &[f64]) -> f64 {
        match self {
            Domain::Simplex { .. } => kl(z, zp),
            Domain::Ball { .. } => 0.5 * dist_sq(z, zp),
        }
    }

    /// max over u in the block of <h, u> - mu * V_{anchor}(u). With mu = 0 this is the
    /// support function of the block.
    pub fn regularized_support(&self, h: &[f64], mu: f64, anchor: &[f64]) -> f64 {
        match self {
            Domain::Simplex { .. } => {
                if mu <= 0.0 {
                    h.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    // mu * log sum_i anchor_i exp(h_i / mu)
                    let mut mx = f64::NEG_INFINITY;
                    for (&hi, &ai) in h.iter().zip(anchor) {
                        if ai > 0.0 {
                            mx = mx.max(hi / mu + ai.ln());
                        }
                    }
                    let s: f64 = h
                        .iter()
                        .zip(anchor)
                        .filter(|(_, &a)| a > 0.0)
                        .map(|(&hi, &ai)| (hi / mu + ai.ln() - mx).exp())
                        .sum();
                    mu * (mx + s.ln())
                }
            }
            Domain::Ball { center, radius, .. } => {
                if mu <= 0.0 {
                    if radius.is_infinite() {
                        if h.iter().all(|&t| t == 0.0) {
                            return 0.0;
                        }
                        return f64::INFINITY;
                    }
                    dot(h, center) + radius * norm(h)
                } else {
                    let mut u: Vec<f64> = anchor.iter().zip(h).map(|(&a, &g)| a + g / mu).collect();
                    project_ball(&mut u, center, *radius);
                    dot(h, &u) - mu * 0.5 * dist_sq(&u, anchor)
                }
            }
        }
    }
}

/// A local norm setup: the pair of domains together with the range constant.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalNormSetup {
    pub kind: SetupKind,
    pub x: Domain,
    pub y: Domain,
    pub theta: f64,
}

impl LocalNormSetup {
    /// Standard setup for an m x n matrix (x has n coordinates, y has m); balls are unit
    /// balls centered at the origin.
    pub fn new(kind: SetupKind, m: usize, n: usize) -> Self {
        let (x, y) = match kind {
            SetupKind::L1L1 => (Domain::Simplex { dim: n }, Domain::Simplex { dim: m }),
            SetupKind::L2L1 => (Domain::unit_ball(n), Domain::Simplex { dim: m }),
            SetupKind::L2L2 => (Domain::unit_ball(n), Domain::unit_ball(m)),
        };
        let theta = theta_for(kind, m, n);
        LocalNormSetup { kind, x, y, theta }
    }

    /// Setup with explicit domains; the kind is inferred from the block types.
    pub fn with_domains(x: Domain, y: Domain) -> Result<Self> {
        x.validate()?;
        y.validate()?;
        let kind = match (&x, &y) {
            (Domain::Simplex { .. }, Domain::Simplex { .. }) => SetupKind::L1L1,
            (Domain::Ball { .. }, Domain::Simplex { .. }) => SetupKind::L2L1,
            (Domain::Ball { .. }, Domain::Ball { .. }) => SetupKind::L2L2,
            (Domain::Simplex { .. }, Domain::Ball { .. }) => {
                return Err(Error::Config("a simplex x-block requires a simplex y-block".into()))
            }
        };
        let theta = theta_for(kind, y.dim(), x.dim());
        Ok(LocalNormSetup { kind, x, y, theta })
    }

    pub fn m(&self) -> usize {
        self.y.dim()
    }

    pub fn n(&self) -> usize {
        self.x.dim()
    }

    pub fn center(&self) -> Point {
        Point { x: self.x.center(), y: self.y.center() }
    }

    pub fn contains(&self, z: &Point) -> bool {
        self.x.contains(&z.x) && self.y.contains(&z.y)
    }

    pub fn check_matrix(&self, a: &SparseMatrix) -> Result<()> {
        if a.rows() != self.m() || a.cols() != self.n() {
            return Err(Error::Input(format!(
                "matrix is {}x{} but the setup expects {}x{}",
                a.rows(),
                a.cols(),
                self.m(),
                self.n()
            )));
        }
        Ok(())
    }
}

/// Range constant of the distance generating function over the domain.
pub fn theta_for(kind: SetupKind, m: usize, n: usize) -> f64 {
    match kind {
        SetupKind::L1L1 => ((m * n) as f64).ln(),
        SetupKind::L2L1 => 0.5 + (m as f64).ln(),
        SetupKind::L2L2 => 1.0,
    }
}

/// Range constant and the minimizer of the distance generating function.
pub fn setup_constants(setup: &LocalNormSetup) -> (f64, Point) {
    (setup.theta, setup.center())
}

/// A primal-dual point (x block with n coordinates, y block with m coordinates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// A gradient-like pair with the same block structure as a point.
pub type Pair = Point;

/// sign(v) * min(|v|, 1).
#[inline]
pub fn clip_scalar(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// Clip map: componentwise clipping to [-1, 1] on simplex blocks, identity on balls.
pub fn clip(setup: &LocalNormSetup, g: &Pair) -> Pair {
    let block = |d: &Domain, v: &[f64]| -> Vec<f64> {
        if d.is_simplex() {
            v.iter().map(|&t| clip_scalar(t)).collect()
        } else {
            v.to_vec()
        }
    };
    Pair { x: block(&setup.x, &g.x), y: block(&setup.y, &g.y) }
}

/// V_z(z') summed over blocks. Returns +infinity when z' charges a coordinate where z
/// vanishes.
pub fn bregman(setup: &LocalNormSetup, z: &Point, zp: &Point) -> f64 {
    setup.x.divergence(&z.x, &zp.x) + setup.y.divergence(&z.y, &zp.y)
}

/// KL-type divergence sum_i z'_i log(z'_i / z_i) + z_i - z'_i with 0 log 0 = 0.
pub fn kl(z: &[f64], zp: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&a, &b) in z.iter().zip(zp) {
        if b > 0.0 {
            if a <= 0.0 {
                return f64::INFINITY;
            }
            s += b * (b / a).ln() + a - b;
        } else {
            s += a;
        }
    }
    s.max(0.0)
}

/// Local norm ||delta||_w^2: weighted by w on simplex blocks, Euclidean on balls.
pub fn local_norm_sq(setup: &LocalNormSetup, w: &Point, delta: &Pair) -> f64 {
    let block = |d: &Domain, w: &[f64], v: &[f64]| -> f64 {
        if d.is_simplex() {
            w.iter().zip(v).map(|(a, b)| a * b * b).sum()
        } else {
            v.iter().map(|b| b * b).sum()
        }
    };
    block(&setup.x, &w.x, &delta.x) + block(&setup.y, &w.y, &delta.y)
}

/// The gradient mapping g(z) = (A^T z^y + b, -A z^x + c).
pub fn operator(a: &SparseMatrix, b: Option<&[f64]>, c: Option<&[f64]>, z: &Point) -> Pair {
    let mut gx = a.matvec_t(&z.y).expect("dimensions checked by caller");
    if let Some(b) = b {
        for (g, bi) in gx.iter_mut().zip(b) {
            *g += bi;
        }
    }
    let ax = a.matvec(&z.x).expect("dimensions checked by caller");
    let gy = match c {
        Some(c) => ax.iter().zip(c).map(|(v, ci)| -v + ci).collect(),
        None => ax.iter().map(|v| -v).collect(),
    };
    Pair { x: gx, y: gy }
}

/// Strongly convex-concave regularization mu_x V_{x'}(x) - mu_y V_{y'}(y) added to f.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub mu_x: f64,
    pub mu_y: f64,
    pub x_center: Vec<f64>,
    pub y_center: Vec<f64>,
}

/// Exact duality gap max_y' f(x, y') - min_x' f(x', y) in O(nnz).
pub fn gap(setup: &LocalNormSetup, a: &SparseMatrix, b: Option<&[f64]>, c: Option<&[f64]>, z: &Point) -> f64 {
    gap_with_composite(setup, a, b, c, None, z)
}

/// Duality gap of f plus an optional composite regularizer, computed in closed form.
pub fn gap_with_composite(
    setup: &LocalNormSetup,
    a: &SparseMatrix,
    b: Option<&[f64]>,
    c: Option<&[f64]>,
    comp: Option<&Composite>,
    z: &Point,
) -> f64 {
    let (mu_x, mu_y) = comp.map(|c| (c.mu_x, c.mu_y)).unwrap_or((0.0, 0.0));
    let xc = comp.map(|c| c.x_center.clone()).unwrap_or_else(|| setup.x.center());
    let yc = comp.map(|c| c.y_center.clone()).unwrap_or_else(|| setup.y.center());
    // max over y' of  y'^T (A x - c) - mu_y V_{y'c}(y'), plus the x-only terms
    let mut hy = a.matvec(&z.x).expect("dimensions checked by caller");
    if let Some(c) = c {
        for (h, ci) in hy.iter_mut().zip(c) {
            *h -= ci;
        }
    }
    let bx = b.map(|b| dot(b, &z.x)).unwrap_or(0.0);
    let upper = bx + mu_x * setup.x.divergence(&xc, &z.x) + setup.y.regularized_support(&hy, mu_y, &yc);
    // min over x' of  x'^T (A^T y + b) + mu_x V_{x'c}(x'), plus the y-only terms
    let mut hx = a.matvec_t(&z.y).expect("dimensions checked by caller");
    if let Some(b) = b {
        for (h, bi) in hx.iter_mut().zip(b) {
            *h += bi;
        }
    }
    let neg: Vec<f64> = hx.iter().map(|v| -v).collect();
    let cy = c.map(|c| dot(c, &z.y)).unwrap_or(0.0);
    let lower = -cy - mu_y * setup.y.divergence(&yc, &z.y) - setup.x.regularized_support(&neg, mu_x, &xc);
    let g = upper - lower;
    if g.is_nan() {
        f64::INFINITY
    } else {
        g
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

/// Euclidean projection onto the ball with the given center and radius.
pub fn project_ball(v: &mut [f64], center: &[f64], radius: f64) {
    if radius.is_infinite() {
        return;
    }
    let d = dist(v, center);
    if d > radius {
        let s = radius / d;
        for (t, c) in v.iter_mut().zip(center) {
            *t = c + (*t - c) * s;
        }
    }
}

/// Normalizes a nonnegative vector to sum one.
pub fn normalize_simplex(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    for t in v.iter_mut() {
        *t /= s;
    }
}

/// Returns softmax(v) computed stably.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|t| (t - mx).exp()).collect();
    normalize_simplex(&mut out);
    out
}
