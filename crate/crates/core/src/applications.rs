//! End-to-end reductions: least-squares regression through a sequence of
//! regularized minimax problems, minimum enclosing ball and maximum inscribed ball
//! through strongly monotone solves, plus an exact enclosing-ball reference.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstGeometry, EstimatorKind, Family, LConstants};
use crate::geometry::{dist, dot, norm, project_ball, Composite, Domain, LocalNormSetup, Pair, Point};
use crate::solvers::{
    emit_trace_row, inner_loop_with_g0, solve_strongly_monotone, InnerParams, Problem, SolveReport,
    StronglyMonotoneConfig, TraceRow,
};
use crate::sparse_matrix::SparseMatrix;

// ---------------------------------------------------------------------------
// Regression
// ---------------------------------------------------------------------------

/// min_x ||A x - b||_2 with mu the smallest eigenvalue of A^T A.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub a: SparseMatrix,
    pub b: Vec<f64>,
    pub mu: f64,
}

/// Parameters of the regression solver; unset values take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    /// Target distance to the least-squares solution.
    pub eps: f64,
    pub alpha: Option<f64>,
    /// Strongly monotone outer steps per phase.
    pub outer_iterations: Option<u64>,
    pub inner_iterations: Option<u64>,
    /// Cap on the number of re-centering phases.
    pub max_phases: Option<u64>,
    pub seed: u64,
    pub exact_maintainers: bool,
}

impl RegressionConfig {
    pub fn new(eps: f64) -> Self {
        RegressionConfig {
            eps,
            alpha: None,
            outer_iterations: None,
            inner_iterations: None,
            max_phases: None,
            seed: 0,
            exact_maintainers: false,
        }
    }
}

/// Certificate ||A^T (A x - b)||_2 / mu, an upper bound on ||x - x*||_2.
pub fn regression_certificate(a: &SparseMatrix, b: &[f64], mu: f64, x: &[f64]) -> Result<f64> {
    if b.len() != a.rows() {
        return Err(Error::Input(format!("b has length {} but {} was expected", b.len(), a.rows())));
    }
    let r: Vec<f64> = a.matvec(x)?.iter().zip(b).map(|(s, t)| s - t).collect();
    Ok(norm(&a.matvec_t(&r)?) / mu)
}

fn mv(a: &SparseMatrix, x: &[f64]) -> Vec<f64> {
    a.matvec(x).expect("dimensions checked by caller")
}

fn mvt(a: &SparseMatrix, y: &[f64]) -> Vec<f64> {
    a.matvec_t(y).expect("dimensions checked by caller")
}

/// Smallest eigenvalue of A^T A estimated by power iteration on lambda_max I - A^T A.
/// The estimate approaches the true value from above, so it is deflated by 10%.
pub fn estimate_mu(a: &SparseMatrix, iterations: usize, seed: u64) -> f64 {
    use rand::Rng;
    let n = a.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ata = |v: &[f64]| mvt(a, &mv(a, v));
    let normalize = |v: &mut Vec<f64>| {
        let s = norm(v);
        if s > 0.0 {
            v.iter_mut().for_each(|t| *t /= s);
        }
    };
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize(&mut v);
    let mut top = 0.0;
    for _ in 0..iterations {
        let w = ata(&v);
        top = norm(&w);
        v = w;
        normalize(&mut v);
    }
    let shift = top * 1.01;
    let mut u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize(&mut u);
    let mut low = shift;
    for _ in 0..iterations {
        let au = ata(&u);
        let w: Vec<f64> = u.iter().zip(&au).map(|(s, t)| shift * s - t).collect();
        low = shift - dot(&w, &u);
        u = w;
        normalize(&mut u);
    }
    0.9 * low.max(0.0)
}

/// Phased variance-reduced solver for min_x max_{||y|| <= 1} y^T (A x - b). Phase h
/// solves the problem regularized by beta/2 ||x - x^(h-1)||^2 - beta/2 ||y||^2 with
/// beta = sqrt(mu) through K extragradient steps, each backed by T inner steps of the
/// dynamic l2-l2 estimator. Phases stop once the residual certificate reaches eps.
pub fn regression_solve(
    prob: &RegressionProblem,
    cfg: &RegressionConfig,
    rng: &mut dyn RngCore,
) -> Result<(Vec<f64>, SolveReport)> {
    let (a, b, mu) = (&prob.a, &prob.b[..], prob.mu);
    let (m, n) = (a.rows(), a.cols());
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::Config(format!("mu must be positive, got {mu}")));
    }
    if !(cfg.eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {}", cfg.eps)));
    }
    if b.len() != m {
        return Err(Error::Input(format!("b has length {} but {m} was expected", b.len())));
    }
    if b.iter().any(|t| !t.is_finite()) {
        return Err(Error::Input("b contains a nonfinite value".into()));
    }
    let start = Instant::now();
    let setup = LocalNormSetup::with_domains(
        Domain::Ball { dim: n, center: vec![0.0; n], radius: f64::INFINITY },
        Domain::unit_ball(m),
    )?;
    let problem = Problem::new(&setup, a, None, None)?;
    let kind = EstimatorKind::new(Family::VrCoord, EstGeometry::L2L2Dynamic)?;
    let l = LConstants::new(a).l22_max;
    let beta = mu.sqrt();
    let alpha = match cfg.alpha {
        Some(v) if v > 0.0 => v,
        Some(v) => return Err(Error::Config(format!("alpha must be positive, got {v}"))),
        None => (l / (a.nnz() as f64).sqrt()).max(beta),
    };
    let eta = alpha / (4.0 * l * l);
    let inner_iterations = cfg.inner_iterations.unwrap_or((4.0 / (eta * alpha)).ceil() as u64).max(1);
    let outer_iterations = cfg
        .outer_iterations
        .unwrap_or(((80.0 / (cfg.eps * cfg.eps)).ln() / (1.0 + beta / alpha).ln()).ceil().max(1.0) as u64);
    let x_bound = (norm(&mvt(a, b)) / mu).max(cfg.eps);
    let max_phases = cfg
        .max_phases
        .unwrap_or(((5.0 * x_bound * x_bound / (cfg.eps * cfg.eps)).ln() / (4.0f64 / 3.0).ln()).ceil().max(1.0) as u64);
    let inner = InnerParams {
        alpha,
        eta,
        iterations: inner_iterations,
        padding: 0.0,
        exact_maintainers: cfg.exact_maintainers,
        composite: None,
    };
    let denom = alpha + 2.0 * beta;
    let mut z = Point { x: vec![0.0; n], y: vec![0.0; m] };
    let mut anchor = vec![0.0; n];
    let mut trace = Vec::new();
    let (mut touched, mut step_touched, mut matvecs) = (0u64, 0u64, 0u64);
    let mut certificate = regression_certificate(a, b, mu, &z.x)?;
    matvecs += 2;
    let first = TraceRow { iteration: 0, elapsed_ns: 0, gap: Some(certificate), coords_touched: 0, matvecs };
    emit_trace_row(&first);
    trace.push(first);
    let mut phases = 0u64;
    while phases < max_phases && certificate > cfg.eps {
        phases += 1;
        for _ in 0..outer_iterations {
            let aty = mvt(a, &z.y);
            let ax = mv(a, &z.x);
            let g0 = Pair {
                x: (0..n).map(|j| aty[j] + beta * (z.x[j] - anchor[j])).collect(),
                y: (0..m).map(|i| -ax[i] + b[i] + beta * z.y[i]).collect(),
            };
            let o = inner_loop_with_g0(&problem, &z, &g0, kind, &inner, rng)?;
            touched += o.touched + (m + n) as u64;
            step_touched += o.step_touched;
            let half = o.point;
            let aty = mvt(a, &half.y);
            let ax = mv(a, &half.x);
            matvecs += 4;
            let x: Vec<f64> = (0..n)
                .map(|j| (alpha * z.x[j] + 2.0 * beta * half.x[j] - (aty[j] + beta * (half.x[j] - anchor[j]))) / denom)
                .collect();
            let mut y: Vec<f64> = (0..m)
                .map(|i| (alpha * z.y[i] + 2.0 * beta * half.y[i] + (ax[i] - b[i] - beta * half.y[i])) / denom)
                .collect();
            project_ball(&mut y, &vec![0.0; m], 1.0);
            z = Point { x, y };
            touched += 2 * (m + n) as u64;
        }
        anchor = z.x.clone();
        certificate = regression_certificate(a, b, mu, &z.x)?;
        matvecs += 2;
        let row = TraceRow {
            iteration: phases,
            elapsed_ns: start.elapsed().as_nanos() as u64,
            gap: Some(certificate),
            coords_touched: touched,
            matvecs,
        };
        emit_trace_row(&row);
        trace.push(row);
    }
    let mut params = BTreeMap::new();
    params.insert("eps".into(), cfg.eps);
    params.insert("mu".into(), mu);
    params.insert("beta".into(), beta);
    params.insert("alpha".into(), alpha);
    params.insert("eta".into(), eta);
    params.insert("l".into(), l);
    params.insert("inner_iterations".into(), inner_iterations as f64);
    params.insert("outer_iterations".into(), outer_iterations as f64);
    params.insert("max_phases".into(), max_phases as f64);
    let report = SolveReport {
        method: "regression".into(),
        estimator: Some(kind.to_string()),
        output: z.clone(),
        trace,
        final_gap: certificate,
        seed: cfg.seed,
        iterations: phases,
        inner_steps: phases * outer_iterations * inner_iterations,
        coords_touched: touched,
        step_coords_touched: step_touched,
        matvecs,
        perturbation: 0.0,
        perturbation_bound: 0.0,
        params,
    };
    Ok((z.x, report))
}

// ---------------------------------------------------------------------------
// Enclosing and inscribed balls
// ---------------------------------------------------------------------------

/// Options shared by the ball applications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallConfig {
    pub seed: u64,
    pub exact_maintainers: bool,
    pub checkpoint_every: u64,
}

impl Default for BallConfig {
    fn default() -> Self {
        BallConfig { seed: 0, exact_maintainers: false, checkpoint_every: 0 }
    }
}

/// A ball in the caller's coordinates and the solves that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallResult {
    pub center: Vec<f64>,
    pub radius: f64,
    /// Reports of every strongly monotone solve, in order.
    pub solves: Vec<SolveReport>,
    /// Certified bounds on the optimum radius where available (lower, upper).
    pub bounds: Option<(f64, f64)>,
}

/// The ball-simplex estimator with the smallest certified constant for `a`.
fn best_l2l1(a: &SparseMatrix) -> Result<EstimatorKind> {
    let lc = LConstants::new(a);
    let variants = [EstGeometry::L2L1v1, EstGeometry::L2L1v2, EstGeometry::L2L1v3];
    let mut best = 0;
    for k in 1..3 {
        if lc.l21[k] < lc.l21[best] {
            best = k;
        }
    }
    EstimatorKind::new(Family::VrCoord, variants[best])
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let d = points.first().map(|p| p.len()).unwrap_or(0);
    if d == 0 {
        return Err(Error::Input("points must have a positive dimension".into()));
    }
    for (i, p) in points.iter().enumerate() {
        if p.len() != d {
            return Err(Error::Input(format!("point {} has dimension {} instead of {d}", i + 1, p.len())));
        }
        if p.iter().any(|t| !t.is_finite()) {
            return Err(Error::Input(format!("point {} has a nonfinite coordinate", i + 1)));
        }
    }
    Ok(d)
}

/// Approximate minimum enclosing ball. The points are shifted so the first one is
/// the origin and scaled into the unit ball; the entropy-regularized problem
/// min_x max_y 1/2 sum_i y_i ||x - a_i||^2 - eps' sum_i y_i log y_i with
/// eps' = eps / (32 ln m) is solved to gap eps / 16, x restricted to the ball of
/// radius 2. The radius returned is the exact enclosing radius of the center found.
pub fn min_eb(points: &[Vec<f64>], eps: f64, cfg: &BallConfig, rng: &mut dyn RngCore) -> Result<BallResult> {
    if points.len() < 2 {
        return Err(Error::Input("at least two points are required".into()));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Config(format!("eps must lie in (0, 1), got {eps}")));
    }
    let d = check_points(points)?;
    let origin = points[0].clone();
    let scale = points.iter().map(|p| dist(p, &origin)).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(BallResult { center: origin, radius: 0.0, solves: Vec::new(), bounds: Some((0.0, 0.0)) });
    }
    let m = points.len();
    let shifted: Vec<Vec<f64>> =
        points.iter().map(|p| p.iter().zip(&origin).map(|(s, o)| (s - o) / scale).collect()).collect();
    let mut t = Vec::new();
    for (i, p) in shifted.iter().enumerate() {
        for (j, &v) in p.iter().enumerate() {
            if v != 0.0 {
                t.push((i, j, -v));
            }
        }
    }
    let a = SparseMatrix::from_triplets_allow_empty(m, d, &t)?;
    let c: Vec<f64> = shifted.iter().map(|p| -0.5 * dot(p, p)).collect();
    let setup = LocalNormSetup::with_domains(
        Domain::Ball { dim: d, center: vec![0.0; d], radius: 2.0 },
        Domain::Simplex { dim: m },
    )?;
    let eps_reg = eps / (32.0 * (m as f64).ln().max(1.0));
    let comp = Composite { mu_x: 1.0, mu_y: eps_reg, x_center: vec![0.0; d], y_center: vec![1.0 / m as f64; m] };
    let kind = best_l2l1(&a)?;
    let mut scfg = StronglyMonotoneConfig::new(eps / 16.0);
    scfg.seed = cfg.seed;
    scfg.exact_maintainers = cfg.exact_maintainers;
    scfg.checkpoint_every = cfg.checkpoint_every;
    let (z, report) = solve_strongly_monotone(&setup, &a, None, Some(&c), &comp, kind, &scfg, rng)?;
    let center: Vec<f64> = z.x.iter().zip(&origin).map(|(s, o)| o + s * scale).collect();
    let radius = points.iter().map(|p| dist(p, &center)).fold(0.0, f64::max);
    Ok(BallResult { center, radius, solves: vec![report], bounds: None })
}

/// Halfspaces <a_i, x> + b_i >= 0 describing a bounded polytope.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspaces {
    pub normals: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

impl Halfspaces {
    pub fn dim(&self) -> usize {
        self.normals.first().map(|a| a.len()).unwrap_or(0)
    }

    /// Rows scaled to unit l2 norm.
    pub fn normalized(&self) -> Result<Halfspaces> {
        if self.normals.is_empty() || self.normals.len() != self.offsets.len() {
            return Err(Error::Input("need as many offsets as normals, and at least one of each".into()));
        }
        check_points(&self.normals)?;
        let mut out = Halfspaces { normals: Vec::new(), offsets: Vec::new() };
        for (i, (a, &b)) in self.normals.iter().zip(&self.offsets).enumerate() {
            let s = norm(a);
            if s == 0.0 {
                return Err(Error::Input(format!("halfspace {} has a zero normal", i + 1)));
            }
            if !b.is_finite() {
                return Err(Error::Input(format!("halfspace {} has a nonfinite offset", i + 1)));
            }
            out.normals.push(a.iter().map(|t| t / s).collect());
            out.offsets.push(b / s);
        }
        Ok(out)
    }

    /// Distance from x to the boundary of the nearest halfspace, negative outside.
    pub fn inradius_at(&self, x: &[f64]) -> f64 {
        self.normals.iter().zip(&self.offsets).map(|(a, b)| (dot(a, x) + b) / norm(a)).fold(f64::INFINITY, f64::min)
    }

    /// Radius of a ball around the origin containing the polytope, read from
    /// axis-aligned constraints. Fails when some coordinate direction is not
    /// bounded by such a constraint.
    pub fn bounding_box_radius(&self) -> Result<f64> {
        let h = self.normalized()?;
        let d = h.dim();
        let mut r2 = 0.0;
        for k in 0..d {
            let mut hi = f64::INFINITY;
            let mut lo = f64::INFINITY;
            for (a, &b) in h.normals.iter().zip(&h.offsets) {
                let axis = a.iter().enumerate().all(|(j, &t)| j == k || t == 0.0);
                if !axis {
                    continue;
                }
                // a_k x_k + b >= 0 with a_k = +-1
                if a[k] < 0.0 {
                    hi = hi.min(b);
                } else {
                    lo = lo.min(b);
                }
            }
            if !hi.is_finite() || !lo.is_finite() {
                return Err(Error::Input(format!(
                    "coordinate {} is not bounded by axis-aligned constraints; pass an enclosing radius",
                    k + 1
                )));
            }
            let e = hi.abs().max(lo.abs());
            r2 += e * e;
        }
        Ok(r2.sqrt())
    }
}

/// Ratio between the certified upper and lower radius bounds at which the search stops.
const SEARCH_RATIO: f64 = 2.0;

/// Approximate maximum inscribed ball of {x : <a_i, x> + b_i >= 0}; the origin must
/// be strictly feasible and `r_bound` (or the bounding-box fallback) must bound the
/// polytope's distance from the origin. A halving search over mu on the regularized
/// game max_{||x|| <= 1} min_y y^T (2R A) x + y^T b + mu sum y log y - mu/2 ||x||^2
/// yields certified bounds r_low <= r* <= r_hat with r_hat <= SEARCH_RATIO * r_low; a final
/// regularized solve reaches one-sided accuracy eps r_low. The search returns early
/// when a stage point already satisfies r_low >= (1 - eps) r_hat.
pub fn max_ib(
    halfspaces: &Halfspaces,
    r_bound: Option<f64>,
    eps: f64,
    cfg: &BallConfig,
    rng: &mut dyn RngCore,
) -> Result<BallResult> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Config(format!("eps must lie in (0, 1), got {eps}")));
    }
    let h = halfspaces.normalized()?;
    let (m, n) = (h.normals.len(), h.dim());
    if let Some(i) = h.offsets.iter().position(|&b| !(b > 0.0)) {
        return Err(Error::Input(format!("the origin is not strictly inside halfspace {}", i + 1)));
    }
    let r = match r_bound {
        Some(r) if r > 0.0 && r.is_finite() => r,
        Some(r) => return Err(Error::Config(format!("the enclosing radius must be positive, got {r}"))),
        None => h.bounding_box_radius()?,
    };
    // min_x max_y y^T (-2R A) x - b^T y is the negated game.
    let mut t = Vec::new();
    for (i, a) in h.normals.iter().enumerate() {
        for (j, &v) in a.iter().enumerate() {
            if v != 0.0 {
                t.push((i, j, -2.0 * r * v));
            }
        }
    }
    let neg = SparseMatrix::from_triplets_allow_empty(m, n, &t)?;
    let setup = LocalNormSetup::with_domains(Domain::unit_ball(n), Domain::Simplex { dim: m })?;
    let kind = best_l2l1(&neg)?;
    let b = &h.offsets;
    // Certified bounds: any x in the ball gives a lower bound min_i (A~ x + b)_i, any
    // y in the simplex an upper bound ||A~^T y|| + b^T y.
    let lower = |x: &[f64]| -> f64 {
        let ax = mv(&neg, x);
        (0..m).map(|i| b[i] - ax[i]).fold(f64::INFINITY, f64::min)
    };
    let upper = |y: &[f64]| -> f64 { norm(&mvt(&neg, y)) + dot(b, y) };
    let log_m = (m as f64).ln();
    let mut solves = Vec::new();
    let mut stage_seed = cfg.seed;
    let mut solve = |mu: f64, gap: f64, start: Option<Point>, rng: &mut dyn RngCore| -> Result<(Point, SolveReport)> {
        let comp = Composite { mu_x: mu, mu_y: mu, x_center: vec![0.0; n], y_center: vec![1.0 / m as f64; m] };
        let mut scfg = StronglyMonotoneConfig::new(gap);
        scfg.seed = stage_seed;
        scfg.exact_maintainers = cfg.exact_maintainers;
        scfg.checkpoint_every = cfg.checkpoint_every;
        scfg.start = start;
        stage_seed = stage_seed.wrapping_add(1);
        solve_strongly_monotone(&setup, &neg, None, Some(b), &comp, kind, &scfg, rng)
    };
    let mut mu = b.iter().cloned().fold(0.0, f64::max);
    let floor = mu * 1e-9;
    let mut start: Option<Point> = None;
    let (mut best_lo, mut best_hi) = (0.0f64, f64::INFINITY);
    let mut best_x: Option<Vec<f64>> = None;
    // The one-sided error of the final point is at most the regularization bias
    // mu (ln m + 1/2) plus the gap; both are set to eps r_low / 2 <= eps r* / 2.
    let final_mu = |r_low: f64| eps * r_low / 2.0 / (log_m + 0.5);
    let r_low = loop {
        let (z, report) = solve(mu, mu, start.take(), rng)?;
        solves.push(report);
        let (lo, hi) = (lower(&z.x), upper(&z.y));
        if lo > r {
            return Err(Error::Input(format!(
                "inscribed radius estimate {lo} exceeds the enclosing radius {r}; the polytope is unbounded or the bound is wrong"
            )));
        }
        if lo > best_lo {
            best_lo = lo;
            best_x = Some(z.x.clone());
        }
        best_hi = best_hi.min(hi);
        start = Some(z);
        if best_lo >= (1.0 - eps) * best_hi {
            // the duality bounds already certify the requested accuracy
            let x = best_x.expect("set with best_lo");
            let center: Vec<f64> = x.iter().map(|t| 2.0 * r * t).collect();
            let radius = halfspaces.inradius_at(&center);
            return Ok(BallResult { center, radius, solves, bounds: Some((best_lo, best_hi)) });
        }
        // An 8-fold bracket already certifies the estimate; halving on to a 2-fold
        // bracket, and further while stages stay far cheaper than the final solve,
        // tightens r_low, on which the final cost depends.
        if best_lo > 0.0 && best_hi <= SEARCH_RATIO * best_lo && mu / 2.0 < 8.0 * final_mu(best_lo) {
            break best_lo;
        }
        mu /= 2.0;
        if mu < floor {
            return Err(Error::Numeric("the radius search did not certify an estimate".into()));
        }
    };
    let final_gap = eps * r_low / 2.0;
    let (z, report) = solve(final_mu(r_low), final_gap, start, rng)?;
    solves.push(report);
    let (r_low, r_hat) = (r_low.max(lower(&z.x)), best_hi.min(upper(&z.y)));
    let center: Vec<f64> = z.x.iter().map(|t| 2.0 * r * t).collect();
    let radius = halfspaces.inradius_at(&center);
    Ok(BallResult { center, radius, solves, bounds: Some((r_low, r_hat)) })
}

// ---------------------------------------------------------------------------
// Exact reference
// ---------------------------------------------------------------------------

/// Ball through the given boundary points, the smallest one whose center lies in
/// their affine hull. None when the points are affinely dependent.
fn circumball(pts: &[&[f64]]) -> Option<(Vec<f64>, f64)> {
    let d = pts.first()?.len();
    let p0 = pts[0];
    let k = pts.len() - 1;
    if k == 0 {
        return Some((p0.to_vec(), 0.0));
    }
    let q: Vec<Vec<f64>> = pts[1..].iter().map(|p| p.iter().zip(p0).map(|(s, t)| s - t).collect()).collect();
    // Solve (2 Q Q^T) lambda = (||q_j||^2)_j by elimination with partial pivoting.
    let mut mat: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut row: Vec<f64> = (0..k).map(|j| 2.0 * dot(&q[i], &q[j])).collect();
            row.push(dot(&q[i], &q[i]));
            row
        })
        .collect();
    let scale = mat.iter().map(|r| r[..k].iter().fold(0.0f64, |s, t| s.max(t.abs()))).fold(0.0, f64::max);
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| mat[i][col].abs().total_cmp(&mat[j][col].abs()))?;
        if mat[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        mat.swap(col, piv);
        for i in 0..k {
            if i != col {
                let f = mat[i][col] / mat[col][col];
                for j in col..=k {
                    mat[i][j] -= f * mat[col][j];
                }
            }
        }
    }
    let mut center = p0.to_vec();
    for (j, qj) in q.iter().enumerate() {
        let lambda = mat[j][k] / mat[j][j];
        for t in 0..d {
            center[t] += lambda * qj[t];
        }
    }
    let radius = pts.iter().map(|p| dist(p, &center)).fold(0.0, f64::max);
    Some((center, radius))
}

fn inside(ball: &(Vec<f64>, f64), p: &[f64]) -> bool {
    dist(p, &ball.0) <= ball.1 * (1.0 + 1e-12) + 1e-12
}

fn move_to_front(pts: &mut Vec<Vec<f64>>, end: usize, boundary: &mut Vec<Vec<f64>>, d: usize) -> (Vec<f64>, f64) {
    let refs: Vec<&[f64]> = boundary.iter().map(|p| p.as_slice()).collect();
    let mut ball = if boundary.is_empty() {
        (vec![0.0; d], -1.0)
    } else {
        match circumball(&refs) {
            Some(b) => b,
            None => {
                // Dependent support: fall back to the widest pair among the support.
                let mut best = (refs[0].to_vec(), 0.0);
                for i in 0..refs.len() {
                    for j in i + 1..refs.len() {
                        let r = dist(refs[i], refs[j]) / 2.0;
                        if r > best.1 {
                            best = (refs[i].iter().zip(refs[j]).map(|(s, t)| (s + t) / 2.0).collect(), r);
                        }
                    }
                }
                best
            }
        }
    };
    if boundary.len() == d + 1 {
        return ball;
    }
    let mut i = 0;
    while i < end {
        if ball.1 < 0.0 || !inside(&ball, &pts[i]) {
            boundary.push(pts[i].clone());
            ball = move_to_front(pts, i, boundary, d);
            boundary.pop();
            let p = pts.remove(i);
            pts.insert(0, p);
        }
        i += 1;
    }
    ball
}

/// Exact minimum enclosing ball by move-to-front recursion after a seeded shuffle.
pub fn welzl_reference(points: &[Vec<f64>], seed: u64) -> Result<(Vec<f64>, f64)> {
    if points.is_empty() {
        return Err(Error::Input("at least one point is required".into()));
    }
    let d = check_points(points)?;
    if d > 4 || points.len() > 2000 {
        return Err(Error::Config("the reference handles at most 2000 points in dimension 4".into()));
    }
    let mut pts = points.to_vec();
    pts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let end = pts.len();
    let (center, _) = move_to_front(&mut pts, end, &mut Vec::new(), d);
    let radius = points.iter().map(|p| dist(p, &center)).fold(0.0, f64::max);
    Ok((center, radius))
}
