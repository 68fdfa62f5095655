//! Optimization loops: stochastic mirror descent with clipped coordinate estimates,
//! the variance-reduced prox-method with a stochastic inner loop, its strongly
//! monotone composite variant, and a deterministic mirror-prox baseline.
//!
//! Simplex blocks of the sublinear method live in [`Im1`]; simplex blocks of the
//! variance-reduced inner loop live in an [`Aem`] (or the exact
//! [`DenseExpMaintainer`] when `exact_maintainers` is set). Ball blocks use [`Im2`]
//! in all methods.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    estimate_into, Block, EstimatorKind, Family, GradEstimate, IterateView, LConstants, SampleMode, Weighting,
};
use crate::exp_maintainer::{Aem, AemParams, DenseExpMaintainer, SimplexMaintainer};
use crate::geometry::{
    clip_scalar, gap_with_composite, operator, project_ball, Composite, Domain, LocalNormSetup, Pair, Point, SetupKind,
};
use crate::iterate_maintainers::{Im1, Im2, StabilityConfig};
use crate::sparse_matrix::SparseMatrix;

/// One row of a solve trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: u64,
    pub elapsed_ns: u64,
    pub gap: Option<f64>,
    pub coords_touched: u64,
    pub matvecs: u64,
}

/// Result summary of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: String,
    pub estimator: Option<String>,
    pub output: Point,
    pub trace: Vec<TraceRow>,
    pub final_gap: f64,
    pub seed: u64,
    /// Iterations of the outermost loop that was run.
    pub iterations: u64,
    /// Stochastic steps taken in total.
    pub inner_steps: u64,
    pub coords_touched: u64,
    /// Coordinates touched by the stochastic steps alone (excludes dense setup work).
    pub step_coords_touched: u64,
    pub matvecs: u64,
    /// l1 mass injected into simplex blocks by truncation.
    pub perturbation: f64,
    /// Bound the injected mass must respect.
    pub perturbation_bound: f64,
    /// Resolved numerical parameters.
    pub params: BTreeMap<String, f64>,
}

impl SolveReport {
    /// Mean coordinates touched per stochastic step.
    pub fn touched_per_step(&self) -> f64 {
        if self.inner_steps == 0 {
            0.0
        } else {
            self.step_coords_touched as f64 / self.inner_steps as f64
        }
    }

    /// The trace without wall-clock times, for reproducibility comparisons.
    pub fn timeless_trace(&self) -> Vec<TraceRow> {
        self.trace.iter().map(|r| TraceRow { elapsed_ns: 0, ..r.clone() }).collect()
    }
}

/// A bilinear problem y^T A x + b^T x - c^T y over a local norm setup.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub setup: &'a LocalNormSetup,
    pub a: &'a SparseMatrix,
    pub b: Option<&'a [f64]>,
    pub c: Option<&'a [f64]>,
}

impl<'a> Problem<'a> {
    pub fn new(
        setup: &'a LocalNormSetup,
        a: &'a SparseMatrix,
        b: Option<&'a [f64]>,
        c: Option<&'a [f64]>,
    ) -> Result<Self> {
        setup.check_matrix(a)?;
        for (name, v, d) in [("b", b, setup.n()), ("c", c, setup.m())] {
            if let Some(v) = v {
                if v.len() != d {
                    return Err(Error::Input(format!("{name} has length {} but {d} was expected", v.len())));
                }
                if v.iter().any(|t| !t.is_finite()) {
                    return Err(Error::Input(format!("{name} contains a nonfinite value")));
                }
            }
        }
        Ok(Problem { setup, a, b, c })
    }

    fn has_linear_terms(&self) -> bool {
        let nz = |v: Option<&[f64]>| v.is_some_and(|v| v.iter().any(|&t| t != 0.0));
        nz(self.b) || nz(self.c)
    }

    /// Linear terms are supported with simplex blocks only in composite mode.
    fn reject_linear_with_simplex(&self) -> Result<()> {
        if self.has_linear_terms() && (self.setup.x.is_simplex() || self.setup.y.is_simplex()) {
            return Err(Error::Config("linear terms b, c are only supported when both blocks are balls".into()));
        }
        Ok(())
    }

    pub fn gradient(&self, z: &Point) -> Pair {
        operator(self.a, self.b, self.c, z)
    }

    pub fn gap(&self, z: &Point, comp: Option<&Composite>) -> f64 {
        gap_with_composite(self.setup, self.a, self.b, self.c, comp, z)
    }
}

fn check_kind(setup: &LocalNormSetup, kind: EstimatorKind, family: &[Family]) -> Result<()> {
    if !family.contains(&kind.family) {
        return Err(Error::Config(format!("estimator {kind} cannot be used by this method")));
    }
    if kind.setup() != setup.kind {
        return Err(Error::Config(format!("estimator {kind} does not match the {:?} setup", setup.kind)));
    }
    Ok(())
}

/// Floors simplex coordinates at delta and renormalizes; ball blocks are unchanged.
pub fn truncate(setup: &LocalNormSetup, z: &Point, delta: f64) -> Point {
    let block = |d: &Domain, v: &[f64]| -> Vec<f64> {
        if d.is_simplex() && delta > 0.0 {
            let mut t: Vec<f64> = v.iter().map(|&a| a.max(delta)).collect();
            let s: f64 = t.iter().sum();
            t.iter_mut().for_each(|a| *a /= s);
            t
        } else {
            v.to_vec()
        }
    };
    Point { x: block(&setup.x, &z.x), y: block(&setup.y, &z.y) }
}

fn added_mass(before: &[f64], delta: f64) -> f64 {
    before.iter().map(|&a| (delta - a).max(0.0)).sum()
}

/// argmin_z <g, z> + (1 / step) V_{anchor}(z) on one block.
fn prox_block(d: &Domain, anchor: &[f64], g: &[f64], step: f64) -> Vec<f64> {
    match d {
        Domain::Simplex { .. } => {
            let logits: Vec<f64> = anchor.iter().zip(g).map(|(&a, &gi)| a.ln() - step * gi).collect();
            softmax_logits(&logits)
        }
        Domain::Ball { center, radius, .. } => {
            let mut v: Vec<f64> = anchor.iter().zip(g).map(|(&a, &gi)| a - step * gi).collect();
            project_ball(&mut v, center, *radius);
            v
        }
    }
}

fn softmax_logits(l: &[f64]) -> Vec<f64> {
    let mx = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = l.iter().map(|&t| (t - mx).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|t| *t /= s);
    out
}

/// Sums repeated coordinates of a sparse correction into `buf`, sorted by index.
fn merge_entries(entries: &[(usize, f64)], buf: &mut Vec<(usize, f64)>) {
    buf.clear();
    buf.extend_from_slice(entries);
    if buf.len() > 1 {
        buf.sort_by_key(|e| e.0);
        let mut w = 0;
        for r in 1..buf.len() {
            if buf[r].0 == buf[w].0 {
                buf[w].1 += buf[r].1;
            } else {
                w += 1;
                buf[w] = buf[r];
            }
        }
        buf.truncate(w + 1);
    }
}

thread_local! {
    static TRACE_SINK: std::cell::RefCell<Option<Box<dyn FnMut(&TraceRow)>>> = const { std::cell::RefCell::new(None) };
}

/// Routes every trace row recorded on this thread to `sink` while `f` runs, so
/// callers can persist a trace as it grows.
pub fn with_trace_sink<T>(sink: Box<dyn FnMut(&TraceRow)>, f: impl FnOnce() -> T) -> T {
    let previous = TRACE_SINK.with(|s| s.borrow_mut().replace(sink));
    let out = f();
    TRACE_SINK.with(|s| *s.borrow_mut() = previous);
    out
}

/// Hands a freshly recorded row to the installed sink, if any.
pub(crate) fn emit_trace_row(row: &TraceRow) {
    TRACE_SINK.with(|s| {
        if let Some(sink) = s.borrow_mut().as_mut() {
            sink(row);
        }
    });
}

struct Recorder {
    start: Instant,
    every: u64,
    rows: Vec<TraceRow>,
    matvecs: u64,
}

impl Recorder {
    fn new(every: u64) -> Self {
        Recorder { start: Instant::now(), every, rows: Vec::new(), matvecs: 0 }
    }

    fn due(&self, it: u64) -> bool {
        self.every > 0 && it % self.every == 0
    }

    fn push(&mut self, iteration: u64, gap: Option<f64>, touched: u64) {
        let elapsed_ns = self.start.elapsed().as_nanos() as u64;
        let row = TraceRow { iteration, elapsed_ns, gap, coords_touched: touched, matvecs: self.matvecs };
        emit_trace_row(&row);
        self.rows.push(row);
    }
}

fn weighting_for(kind: EstimatorKind, block: Block) -> (bool, Option<Weighting>) {
    let mut sampling = false;
    let mut w = None;
    for (b, m) in kind.required_modes() {
        if b != block {
            continue;
        }
        match m {
            SampleMode::Square(wt) | SampleMode::CenteredSquare(wt) => {
                sampling = true;
                w = Some(wt);
            }
            _ => sampling = true,
        }
    }
    (sampling, w)
}

fn weight_vector(a: &SparseMatrix, w: Option<Weighting>) -> Option<Vec<f64>> {
    match w {
        None | Some(Weighting::Plain) => None,
        Some(Weighting::ColNnz) => Some((0..a.cols()).map(|j| a.col_nnz(j) as f64).collect()),
        Some(Weighting::ColL1) => Some(a.col_l1().to_vec()),
    }
}

// ---------------------------------------------------------------------------
// Sublinear method
// ---------------------------------------------------------------------------

/// Parameters of the sublinear method; unset values take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SublinearConfig {
    pub eps: f64,
    pub eta: Option<f64>,
    pub iterations: Option<u64>,
    pub seed: u64,
    pub checkpoint_every: u64,
}

impl SublinearConfig {
    pub fn new(eps: f64) -> Self {
        SublinearConfig { eps, eta: None, iterations: None, seed: 0, checkpoint_every: 0 }
    }
}

/// Resolved step size and iteration count of the sublinear method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SublinearParams {
    pub eta: f64,
    pub iterations: u64,
    pub l: f64,
}

impl SublinearParams {
    pub fn resolve(
        setup: &LocalNormSetup,
        a: &SparseMatrix,
        kind: EstimatorKind,
        cfg: &SublinearConfig,
    ) -> Result<Self> {
        if !(cfg.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", cfg.eps)));
        }
        let l = LConstants::new(a).certified(kind);
        if setup.x.is_simplex() || setup.y.is_simplex() {
            let cap = ((setup.m() + setup.n()) as f64).powi(3);
            if l / cfg.eps > cap {
                return Err(Error::Config(format!("L / eps = {:.3e} exceeds (m + n)^3", l / cfg.eps)));
            }
        }
        let eta = cfg.eta.unwrap_or(cfg.eps / (9.0 * l * l));
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::Config(format!("step size must be positive, got {eta}")));
        }
        let iterations = match cfg.iterations {
            Some(t) => t,
            None => (6.0 * setup.theta / (eta * cfg.eps)).ceil() as u64,
        };
        Ok(SublinearParams { eta, iterations, l })
    }
}

enum SubBlock {
    Simplex(Im1),
    Ball { im: Im2, center: Vec<f64>, radius: f64, dense: bool },
}

impl SubBlock {
    fn new(d: &Domain, a: &SparseMatrix, kind: EstimatorKind, block: Block, linear: Option<&[f64]>) -> Result<Self> {
        let stab = StabilityConfig::for_size(a.rows() + a.cols());
        let (sampling, w) = weighting_for(kind, block);
        match d {
            Domain::Simplex { .. } => {
                let mut im = Im1::new(&d.center(), sampling, stab)?;
                im.set_simplex_mode(true);
                Ok(SubBlock::Simplex(im))
            }
            Domain::Ball { center, radius, .. } => {
                let wv = if block == Block::X { weight_vector(a, w) } else { None };
                let dense = linear.is_some_and(|v| v.iter().any(|&t| t != 0.0));
                let im =
                    Im2::new(center, if dense { linear } else { None }, wv.as_deref(), Some(center), sampling, stab)?;
                Ok(SubBlock::Ball { im, center: center.clone(), radius: *radius, dense })
            }
        }
    }

    fn step(&mut self, eta: f64, entries: &[(usize, f64)]) -> Result<()> {
        match self {
            SubBlock::Simplex(im) => {
                for &(j, g) in entries {
                    im.mult_coord(j, (-clip_scalar(eta * g)).exp())?;
                }
                let nrm = im.norm();
                im.scale(1.0 / nrm)?;
            }
            SubBlock::Ball { im, radius, dense, .. } => {
                if *dense {
                    im.add_dense(-eta)?;
                }
                for &(j, g) in entries {
                    im.add_sparse(j, -eta * g)?;
                }
                let d = im.centered_normsq_plain().sqrt();
                if d > *radius {
                    im.scale_about_anchor(*radius / d)?;
                }
            }
        }
        Ok(())
    }

    fn update_sum(&mut self) {
        match self {
            SubBlock::Simplex(im) => im.update_sum(1.0),
            SubBlock::Ball { im, .. } => im.update_sum(1.0),
        }
    }

    fn average(&self, count: f64) -> Vec<f64> {
        match self {
            SubBlock::Simplex(im) => {
                let mut v = im.sum_vec();
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|t| *t /= s);
                v
            }
            SubBlock::Ball { im, center, radius, .. } => {
                let mut v: Vec<f64> = im.sum_vec().iter().map(|t| t / count).collect();
                project_ball(&mut v, center, *radius);
                v
            }
        }
    }

    fn touched(&self) -> u64 {
        match self {
            SubBlock::Simplex(im) => im.touched(),
            SubBlock::Ball { im, .. } => im.touched(),
        }
    }
}

struct SubView {
    x: SubBlock,
    y: SubBlock,
}

impl SubView {
    fn block(&mut self, b: Block) -> &mut SubBlock {
        match b {
            Block::X => &mut self.x,
            Block::Y => &mut self.y,
        }
    }
}

impl IterateView for SubView {
    fn value(&mut self, block: Block, k: usize) -> f64 {
        match self.block(block) {
            SubBlock::Simplex(im) => im.value(k),
            SubBlock::Ball { im, .. } => im.value(k),
        }
    }

    fn reference(&mut self, _block: Block, _k: usize) -> f64 {
        0.0
    }

    fn mass(&mut self, block: Block, mode: SampleMode) -> f64 {
        match (self.block(block), mode) {
            (SubBlock::Ball { im, .. }, SampleMode::Square(_)) => im.norm().powi(2),
            (SubBlock::Ball { im, .. }, SampleMode::CenteredSquare(_)) => im.centered_normsq(),
            _ => 1.0,
        }
    }

    fn sample(&mut self, block: Block, mode: SampleMode, rng: &mut dyn RngCore) -> Result<usize> {
        match (self.block(block), mode) {
            (SubBlock::Simplex(im), _) => im.sample(rng),
            (SubBlock::Ball { im, .. }, SampleMode::CenteredSquare(_)) => im.sample_centered(rng),
            (SubBlock::Ball { im, .. }, _) => im.sample(rng),
        }
    }
}

/// Stochastic mirror descent with clipped coordinate gradient estimates around
/// g(0) = (b, c). Returns the average of the T + 1 iterates z_0, ..., z_T.
pub fn solve_sublinear(
    setup: &LocalNormSetup,
    a: &SparseMatrix,
    b: Option<&[f64]>,
    c: Option<&[f64]>,
    kind: EstimatorKind,
    cfg: &SublinearConfig,
    rng: &mut dyn RngCore,
) -> Result<(Point, SolveReport)> {
    let prob = Problem::new(setup, a, b, c)?;
    check_kind(setup, kind, &[Family::SublinearCoord])?;
    prob.reject_linear_with_simplex()?;
    let p = SublinearParams::resolve(setup, a, kind, cfg)?;
    let mut rec = Recorder::new(cfg.checkpoint_every);
    let mut view = SubView {
        x: SubBlock::new(&setup.x, a, kind, Block::X, b)?,
        y: SubBlock::new(&setup.y, a, kind, Block::Y, c)?,
    };
    view.x.update_sum();
    view.y.update_sum();
    let base_touched = view.x.touched() + view.y.touched();
    let mut est_touched = 0u64;
    let current =
        |view: &SubView, t: u64| Point { x: view.x.average((t + 1) as f64), y: view.y.average((t + 1) as f64) };
    let g0 = if rec.every > 0 { Some(prob.gap(&setup.center(), None)) } else { None };
    rec.push(0, g0, base_touched);
    let mut est = GradEstimate::new(crate::estimators::Base::Offset);
    let mut bx = Vec::new();
    let mut by = Vec::new();
    for t in 1..=p.iterations {
        estimate_into(kind, a, &mut view, rng, &mut est)?;
        est_touched += est.touched;
        merge_entries(&est.x, &mut bx);
        merge_entries(&est.y, &mut by);
        view.x.step(p.eta, &bx)?;
        view.y.step(p.eta, &by)?;
        view.x.update_sum();
        view.y.update_sum();
        if rec.due(t) && t < p.iterations {
            let z = current(&view, t);
            let touched = view.x.touched() + view.y.touched() + est_touched;
            rec.push(t, Some(prob.gap(&z, None)), touched);
        }
    }
    let out = current(&view, p.iterations);
    let gap = prob.gap(&out, None);
    let touched = view.x.touched() + view.y.touched() + est_touched;
    rec.push(p.iterations, Some(gap), touched);
    let mut params = BTreeMap::new();
    params.insert("eps".into(), cfg.eps);
    params.insert("eta".into(), p.eta);
    params.insert("iterations".into(), p.iterations as f64);
    params.insert("l".into(), p.l);
    let report = SolveReport {
        method: "sublinear".into(),
        estimator: Some(kind.to_string()),
        output: out.clone(),
        trace: rec.rows,
        final_gap: gap,
        seed: cfg.seed,
        iterations: p.iterations,
        inner_steps: p.iterations,
        coords_touched: touched,
        step_coords_touched: touched - base_touched,
        matvecs: 0,
        perturbation: 0.0,
        perturbation_bound: 0.0,
        params,
    };
    Ok((out, report))
}

// ---------------------------------------------------------------------------
// Variance-reduced method
// ---------------------------------------------------------------------------

/// Parameters of the variance-reduced method; unset values take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrConfig {
    pub eps: f64,
    pub alpha: Option<f64>,
    pub eps_outer: Option<f64>,
    pub eps_inner: Option<f64>,
    pub outer_iterations: Option<u64>,
    pub eta: Option<f64>,
    pub inner_iterations: Option<u64>,
    pub padding: Option<f64>,
    pub truncation: Option<f64>,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Replace the approximate simplex maintainer by exact dense updates.
    pub exact_maintainers: bool,
}

impl VrConfig {
    pub fn new(eps: f64) -> Self {
        VrConfig {
            eps,
            alpha: None,
            eps_outer: None,
            eps_inner: None,
            outer_iterations: None,
            eta: None,
            inner_iterations: None,
            padding: None,
            truncation: None,
            seed: 0,
            checkpoint_every: 0,
            exact_maintainers: false,
        }
    }
}

/// Smallest AEM tolerance used; tighter requests are not meaningful in double precision.
pub const MIN_PADDING: f64 = 1e-10;

/// Resolved parameters of the variance-reduced method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VrParams {
    pub alpha: f64,
    pub eps_outer: f64,
    pub eps_inner: f64,
    pub outer_iterations: u64,
    pub eta: f64,
    pub inner_iterations: u64,
    pub phi: f64,
    pub padding: f64,
    pub truncation: f64,
    /// Certified centered-local constant of the estimator.
    pub l: f64,
}

/// Default oracle strength for a setup: the larger of a fraction of eps and the
/// constant-over-root-sparsity term with its logarithmic factors.
pub fn default_alpha(setup: &LocalNormSetup, a: &SparseMatrix, kind: EstimatorKind, eps: f64) -> f64 {
    let lc = LConstants::new(a);
    let lco = lc.co_constant(kind);
    let (m, n) = (setup.m() as f64, setup.n() as f64);
    let nnz = a.nnz() as f64;
    let lmn = (m * n).max(2.0).ln();
    match setup.kind {
        SetupKind::L1L1 => {
            let nnzp = nnz + (m + n) * lmn.powi(3);
            (eps / 3.0).max(lco * lmn * lmn / nnzp.sqrt())
        }
        SetupKind::L2L1 => {
            let lm = m.max(2.0).ln();
            let nnzp = nnz + m * lm * lmn * lmn;
            (eps / 3.0).max(lco * lm * lmn / nnzp.sqrt())
        }
        SetupKind::L2L2 => eps.max(lco / nnz.sqrt()),
    }
}

impl VrParams {
    pub fn resolve(setup: &LocalNormSetup, a: &SparseMatrix, kind: EstimatorKind, cfg: &VrConfig) -> Result<Self> {
        if !(cfg.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", cfg.eps)));
        }
        let l = LConstants::new(a).certified(kind);
        let ball_only = setup.kind == SetupKind::L2L2;
        let (eo, ei) = if ball_only { (0.0, 0.0) } else { (2.0 * cfg.eps / 3.0, cfg.eps / 3.0) };
        let eps_outer = cfg.eps_outer.unwrap_or(eo);
        let eps_inner = cfg.eps_inner.unwrap_or(ei);
        if eps_outer < eps_inner || eps_inner < 0.0 {
            return Err(Error::Config("need 0 <= eps_inner <= eps_outer".into()));
        }
        let alpha = match cfg.alpha {
            Some(al) => {
                if !(al >= eps_inner && al <= l) {
                    return Err(Error::Config(format!("alpha = {al} must lie in [eps_inner, L] = [{eps_inner}, {l}]")));
                }
                al
            }
            None => default_alpha(setup, a, kind, cfg.eps).min(l).max(eps_inner),
        };
        let eta = cfg.eta.unwrap_or(alpha / (10.0 * l * l));
        let inner_iterations = cfg.inner_iterations.unwrap_or((6.0 / (eta * alpha)).ceil() as u64).max(1);
        let budget = cfg.eps - eps_outer;
        let outer_iterations = match cfg.outer_iterations {
            Some(k) => k,
            None => {
                if !(budget > 0.0) {
                    return Err(Error::Config("eps_outer must be smaller than eps".into()));
                }
                (alpha * setup.theta / budget).ceil() as u64
            }
        };
        let mn = (setup.m() + setup.n()) as f64;
        let padding = cfg.padding.unwrap_or(mn.powi(-8)).max(MIN_PADDING);
        let truncation = cfg.truncation.unwrap_or((eps_outer - eps_inner) / (alpha * mn));
        Ok(VrParams {
            alpha,
            eps_outer,
            eps_inner,
            outer_iterations,
            eta,
            inner_iterations,
            phi: eps_inner / 6.0,
            padding,
            truncation,
            l,
        })
    }

    fn insert_into(&self, map: &mut BTreeMap<String, f64>) {
        map.insert("alpha".into(), self.alpha);
        map.insert("eps_outer".into(), self.eps_outer);
        map.insert("eps_inner".into(), self.eps_inner);
        map.insert("outer_iterations".into(), self.outer_iterations as f64);
        map.insert("eta".into(), self.eta);
        map.insert("inner_iterations".into(), self.inner_iterations as f64);
        map.insert("phi".into(), self.phi);
        map.insert("padding".into(), self.padding);
        map.insert("truncation".into(), self.truncation);
        map.insert("l".into(), self.l);
    }
}

/// Parameters of one inner-loop call.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerParams {
    pub alpha: f64,
    pub eta: f64,
    pub iterations: u64,
    pub padding: f64,
    pub exact_maintainers: bool,
    /// Composite regularizer mu_x V_{x'} + mu_y V_{y'} folded into every step; the
    /// divergences are weighted by rho = sqrt(mu_x / mu_y) on x and 1 / rho on y.
    pub composite: Option<Composite>,
}

/// Output of the inner loop.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerOutput {
    pub point: Point,
    /// Coordinates touched by the stochastic steps.
    pub step_touched: u64,
    /// Coordinates touched including maintainer setup.
    pub touched: u64,
}

/// Per-block step coefficients: the iterate (log iterate on simplices) evolves as
/// w <- kappa w + v - s * correction, followed by projection on balls.
struct StepCoef {
    kappa: f64,
    v: Vec<f64>,
    s: f64,
}

fn step_coef(
    d: &Domain,
    w0: &[f64],
    g0: &[f64],
    eta: f64,
    alpha: f64,
    weight: f64,
    mu: f64,
    center: &[f64],
) -> StepCoef {
    let denom = eta * mu + eta * alpha * weight / 2.0 + weight;
    let map = |t: f64| if d.is_simplex() { t.ln() } else { t };
    let v = (0..w0.len())
        .map(|k| {
            let mut num = eta * alpha * weight / 2.0 * map(w0[k]) - eta * g0[k];
            if mu > 0.0 {
                num += eta * mu * map(center[k]);
            }
            num / denom
        })
        .collect();
    StepCoef { kappa: weight / denom, v, s: 1.0 / denom }
}

enum InnerBlock {
    Simplex { m: Box<dyn SimplexMaintainer>, reference: WeightedIndex<f64>, w0: Vec<f64>, s: f64 },
    Ball { im: Im2, center: Vec<f64>, radius: f64, w0: Vec<f64>, s: f64, kappa: f64, square_ok: bool },
}

impl InnerBlock {
    #[allow(clippy::too_many_arguments)]
    fn new(
        d: &Domain,
        a: &SparseMatrix,
        kind: EstimatorKind,
        block: Block,
        w0: &[f64],
        coef: StepCoef,
        padding: f64,
        exact: bool,
    ) -> Result<Self> {
        match d {
            Domain::Simplex { .. } => {
                let m: Box<dyn SimplexMaintainer> = if exact {
                    Box::new(DenseExpMaintainer::new(w0, &coef.v, coef.kappa)?)
                } else {
                    let lambda = w0.iter().cloned().fold(f64::INFINITY, f64::min);
                    let params = AemParams { kappa: coef.kappa, eps: padding, lambda };
                    Box::new(Aem::new(w0, &coef.v, params)?)
                };
                let reference = WeightedIndex::new(w0.iter().map(|t| t.max(0.0)))
                    .map_err(|e| Error::Numeric(format!("reference sampler: {e}")))?;
                Ok(InnerBlock::Simplex { m, reference, w0: w0.to_vec(), s: coef.s })
            }
            Domain::Ball { center, radius, .. } => {
                let (sampling, w) = weighting_for(kind, block);
                let wv = if block == Block::X { weight_vector(a, w) } else { None };
                let shifted: Vec<f64> = w0.iter().zip(center).map(|(a, c)| a - c).collect();
                let vs: Vec<f64> = coef.v.iter().zip(center).map(|(v, c)| v - (1.0 - coef.kappa) * c).collect();
                let stab = StabilityConfig::for_size(a.rows() + a.cols());
                let im = Im2::new(&shifted, Some(&vs), wv.as_deref(), Some(&shifted), sampling, stab)?;
                let square_ok = center.iter().all(|&c| c == 0.0);
                Ok(InnerBlock::Ball {
                    im,
                    center: center.clone(),
                    radius: *radius,
                    w0: w0.to_vec(),
                    s: coef.s,
                    kappa: coef.kappa,
                    square_ok,
                })
            }
        }
    }

    fn step(&mut self, eta: f64, entries: &[(usize, f64)]) -> Result<()> {
        match self {
            InnerBlock::Simplex { m, s, .. } => {
                m.dense_step();
                for &(j, g) in entries {
                    m.mult_sparse(j, -*s * clip_scalar(eta * g))?;
                }
            }
            InnerBlock::Ball { im, radius, s, kappa, .. } => {
                im.scale(*kappa)?;
                im.add_dense(1.0)?;
                for &(j, g) in entries {
                    im.add_sparse(j, -*s * eta * g)?;
                }
                if radius.is_finite() {
                    let d = im.norm_plain();
                    if d > *radius {
                        im.scale(*radius / d)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn update_sum(&mut self) -> Result<()> {
        match self {
            InnerBlock::Simplex { m, .. } => m.update_sum(1.0),
            InnerBlock::Ball { im, .. } => {
                im.update_sum(1.0);
                Ok(())
            }
        }
    }

    fn average(&mut self, count: f64) -> Vec<f64> {
        match self {
            InnerBlock::Simplex { m, .. } => {
                let mut v = m.sum_vec();
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|t| *t /= s);
                v
            }
            InnerBlock::Ball { im, center, radius, .. } => {
                let mut v: Vec<f64> = im.sum_vec().iter().zip(center.iter()).map(|(t, c)| t / count + c).collect();
                project_ball(&mut v, center, *radius);
                v
            }
        }
    }

    fn touched(&self) -> u64 {
        match self {
            InnerBlock::Simplex { m, .. } => m.touched(),
            InnerBlock::Ball { im, .. } => im.touched(),
        }
    }
}

struct InnerView {
    x: InnerBlock,
    y: InnerBlock,
}

impl InnerView {
    fn block(&mut self, b: Block) -> &mut InnerBlock {
        match b {
            Block::X => &mut self.x,
            Block::Y => &mut self.y,
        }
    }
}

impl IterateView for InnerView {
    fn value(&mut self, block: Block, k: usize) -> f64 {
        match self.block(block) {
            InnerBlock::Simplex { m, .. } => m.get(k).unwrap_or(0.0),
            InnerBlock::Ball { im, center, .. } => im.value(k) + center[k],
        }
    }

    fn reference(&mut self, block: Block, k: usize) -> f64 {
        match self.block(block) {
            InnerBlock::Simplex { w0, .. } | InnerBlock::Ball { w0, .. } => w0[k],
        }
    }

    fn mass(&mut self, block: Block, mode: SampleMode) -> f64 {
        match (self.block(block), mode) {
            (InnerBlock::Ball { im, .. }, SampleMode::CenteredSquare(_)) => im.centered_normsq(),
            (InnerBlock::Ball { im, .. }, SampleMode::Square(_)) => im.norm().powi(2),
            _ => 1.0,
        }
    }

    fn sample(&mut self, block: Block, mode: SampleMode, rng: &mut dyn RngCore) -> Result<usize> {
        match (self.block(block), mode) {
            (InnerBlock::Simplex { reference, .. }, SampleMode::Reference) => Ok(reference.sample(rng)),
            (InnerBlock::Simplex { m, .. }, _) => m.sample(rng),
            (InnerBlock::Ball { im, .. }, SampleMode::CenteredSquare(_)) => im.sample_centered(rng),
            (InnerBlock::Ball { im, square_ok, .. }, SampleMode::Square(_)) => {
                if !*square_ok {
                    return Err(Error::Config("squared-iterate sampling needs a ball centered at the origin".into()));
                }
                im.sample(rng)
            }
            (InnerBlock::Ball { .. }, _) => Err(Error::Config("iterate sampling is undefined on a ball".into())),
        }
    }
}

fn composite_weights(comp: Option<&Composite>) -> (f64, f64, f64, f64) {
    match comp {
        Some(c) => {
            let rho = (c.mu_x / c.mu_y).sqrt();
            (rho, 1.0 / rho, c.mu_x, c.mu_y)
        }
        None => (1.0, 1.0, 0.0, 0.0),
    }
}

pub(crate) fn inner_loop_with_g0(
    prob: &Problem,
    w0: &Point,
    g0: &Pair,
    kind: EstimatorKind,
    p: &InnerParams,
    rng: &mut dyn RngCore,
) -> Result<InnerOutput> {
    let setup = prob.setup;
    let comp = p.composite.as_ref();
    let (wx, wy, mux, muy) = composite_weights(comp);
    let cx = comp.map(|c| c.x_center.clone()).unwrap_or_default();
    let cy = comp.map(|c| c.y_center.clone()).unwrap_or_default();
    let coef_x = step_coef(&setup.x, &w0.x, &g0.x, p.eta, p.alpha, wx, mux, &cx);
    let coef_y = step_coef(&setup.y, &w0.y, &g0.y, p.eta, p.alpha, wy, muy, &cy);
    let mut view = InnerView {
        x: InnerBlock::new(&setup.x, prob.a, kind, Block::X, &w0.x, coef_x, p.padding, p.exact_maintainers)?,
        y: InnerBlock::new(&setup.y, prob.a, kind, Block::Y, &w0.y, coef_y, p.padding, p.exact_maintainers)?,
    };
    let base = view.x.touched() + view.y.touched();
    let mut est = GradEstimate::new(crate::estimators::Base::Reference);
    let mut est_touched = 0u64;
    let mut bx = Vec::new();
    let mut by = Vec::new();
    for _ in 0..p.iterations {
        estimate_into(kind, prob.a, &mut view, rng, &mut est)?;
        est_touched += est.touched;
        merge_entries(&est.x, &mut bx);
        merge_entries(&est.y, &mut by);
        view.x.step(p.eta, &bx)?;
        view.y.step(p.eta, &by)?;
        view.x.update_sum()?;
        view.y.update_sum()?;
    }
    let t = p.iterations.max(1) as f64;
    let point = if p.iterations == 0 { w0.clone() } else { Point { x: view.x.average(t), y: view.y.average(t) } };
    let after = view.x.touched() + view.y.touched();
    Ok(InnerOutput { point, step_touched: after - base + est_touched, touched: after + est_touched })
}

/// Runs the stochastic inner loop from w0: T regularized mirror descent steps driven
/// by a centered estimator around g(w0), returning the average of w_1, ..., w_T.
#[allow(clippy::too_many_arguments)]
pub fn inner_loop(
    setup: &LocalNormSetup,
    a: &SparseMatrix,
    b: Option<&[f64]>,
    c: Option<&[f64]>,
    w0: &Point,
    kind: EstimatorKind,
    p: &InnerParams,
    rng: &mut dyn RngCore,
) -> Result<InnerOutput> {
    let prob = Problem::new(setup, a, b, c)?;
    check_kind(setup, kind, &[Family::VrCoord, Family::VrRowCol])?;
    if !setup.contains(w0) {
        return Err(Error::Input("w0 is not a feasible point".into()));
    }
    let g0 = prob.gradient(w0);
    inner_loop_with_g0(&prob, w0, &g0, kind, p, rng)
}

/// Closed-form value of max_u <g(w), w - u> - alpha V_{w0}(u), the quantity bounded by
/// a relaxed proximal oracle.
pub fn relaxed_oracle_value(
    setup: &LocalNormSetup,
    a: &SparseMatrix,
    b: Option<&[f64]>,
    c: Option<&[f64]>,
    w: &Point,
    w0: &Point,
    alpha: f64,
) -> f64 {
    let g = operator(a, b, c, w);
    let inner = crate::geometry::dot(&g.x, &w.x) + crate::geometry::dot(&g.y, &w.y);
    let nx: Vec<f64> = g.x.iter().map(|t| -t).collect();
    let ny: Vec<f64> = g.y.iter().map(|t| -t).collect();
    inner + setup.x.regularized_support(&nx, alpha, &w0.x) + setup.y.regularized_support(&ny, alpha, &w0.y)
}

/// Variance-reduced prox-method: K outer iterations, each an inner-loop oracle call,
/// an exact extragradient step and a truncation. Returns the average of the oracle
/// outputs.
pub fn solve_vr(
    setup: &LocalNormSetup,
    a: &SparseMatrix,
    b: Option<&[f64]>,
    c: Option<&[f64]>,
    kind: EstimatorKind,
    cfg: &VrConfig,
    rng: &mut dyn RngCore,
) -> Result<(Point, SolveReport)> {
    let prob = Problem::new(setup, a, b, c)?;
    check_kind(setup, kind, &[Family::VrCoord, Family::VrRowCol])?;
    prob.reject_linear_with_simplex()?;
    let p = VrParams::resolve(setup, a, kind, cfg)?;
    let mut rec = Recorder::new(cfg.checkpoint_every);
    let inner = InnerParams {
        alpha: p.alpha,
        eta: p.eta,
        iterations: p.inner_iterations,
        padding: p.padding,
        exact_maintainers: cfg.exact_maintainers,
        composite: None,
    };
    let mut z = setup.center();
    let mut sum = Point { x: vec![0.0; setup.n()], y: vec![0.0; setup.m()] };
    let mut touched = 0u64;
    let mut step_touched = 0u64;
    let mut perturbation = 0.0;
    let first_gap = if rec.every > 0 { Some(prob.gap(&z, None)) } else { None };
    rec.push(0, first_gap, 0);
    let average = |sum: &Point, k: u64| -> Point {
        let kf = k as f64;
        let mut out = Point { x: sum.x.iter().map(|t| t / kf).collect(), y: sum.y.iter().map(|t| t / kf).collect() };
        normalize_blocks(setup, &mut out);
        out
    };
    for k in 1..=p.outer_iterations {
        let g0 = prob.gradient(&z);
        rec.matvecs += 2;
        touched += (setup.m() + setup.n()) as u64;
        let o = inner_loop_with_g0(&prob, &z, &g0, kind, &inner, rng)?;
        touched += o.touched;
        step_touched += o.step_touched;
        let w = o.point;
        let gw = prob.gradient(&w);
        rec.matvecs += 2;
        let zx = prox_block(&setup.x, &z.x, &gw.x, 1.0 / p.alpha);
        let zy = prox_block(&setup.y, &z.y, &gw.y, 1.0 / p.alpha);
        for (d, v) in [(&setup.x, &zx), (&setup.y, &zy)] {
            if d.is_simplex() {
                perturbation += added_mass(v, p.truncation);
            }
        }
        z = truncate(setup, &Point { x: zx, y: zy }, p.truncation);
        touched += 2 * (setup.m() + setup.n()) as u64;
        for (s, v) in sum.x.iter_mut().zip(&w.x) {
            *s += v;
        }
        for (s, v) in sum.y.iter_mut().zip(&w.y) {
            *s += v;
        }
        if rec.due(k) && k < p.outer_iterations {
            let gap = prob.gap(&average(&sum, k), None);
            rec.push(k, Some(gap), touched);
        }
    }
    let out = if p.outer_iterations == 0 { setup.center() } else { average(&sum, p.outer_iterations) };
    let gap = prob.gap(&out, None);
    rec.push(p.outer_iterations, Some(gap), touched);
    let simplex_dims: usize = [&setup.x, &setup.y].iter().filter(|d| d.is_simplex()).map(|d| d.dim()).sum();
    let bound = p.outer_iterations as f64 * p.truncation * simplex_dims as f64;
    debug_assert!(perturbation <= bound * (1.0 + 1e-9) + 1e-15);
    let mut params = BTreeMap::new();
    params.insert("eps".into(), cfg.eps);
    p.insert_into(&mut params);
    let method = if kind.family == Family::VrRowCol { "rowcol-vr" } else { "vr" };
    let report = SolveReport {
        method: method.into(),
        estimator: Some(kind.to_string()),
        output: out.clone(),
        trace: rec.rows,
        final_gap: gap,
        seed: cfg.seed,
        iterations: p.outer_iterations,
        inner_steps: p.outer_iterations * p.inner_iterations,
        coords_touched: touched,
        step_coords_touched: step_touched,
        matvecs: rec.matvecs,
        perturbation,
        perturbation_bound: bound,
        params,
    };
    Ok((out, report))
}

fn normalize_blocks(setup: &LocalNormSetup, z: &mut Point) {
    for (d, v) in [(&setup.x, &mut z.x), (&setup.y, &mut z.y)] {
        match d {
            Domain::Simplex { .. } => {
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|t| *t /= s);
            }
            Domain::Ball { center, radius, .. } => project_ball(v, center, *radius),
        }
    }
}

// ---------------------------------------------------------------------------
// Strongly monotone composite problems
// ---------------------------------------------------------------------------

/// Parameters of the strongly monotone solver; unset values take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StronglyMonotoneConfig {
    /// Target duality gap of the composite problem.
    pub eps: f64,
    pub alpha: Option<f64>,
    pub outer_iterations: Option<u64>,
    /// Bound G on the dual norm of the gradient, used for the default K.
    pub grad_bound: Option<f64>,
    pub eta: Option<f64>,
    pub inner_iterations: Option<u64>,
    pub padding: Option<f64>,
    pub truncation: Option<f64>,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub exact_maintainers: bool,
    /// Starting point (defaults to the composite centers).
    pub start: Option<Point>,
}

impl StronglyMonotoneConfig {
    pub fn new(eps: f64) -> Self {
        StronglyMonotoneConfig {
            eps,
            alpha: None,
            outer_iterations: None,
            grad_bound: None,
            eta: None,
            inner_iterations: None,
            padding: None,
            truncation: None,
            seed: 0,
            checkpoint_every: 0,
            exact_maintainers: false,
            start: None,
        }
    }
}

/// Resolved parameters of the strongly monotone solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StronglyMonotoneParams {
    pub mu: f64,
    pub rho: f64,
    pub alpha: f64,
    pub outer_iterations: u64,
    pub eta: f64,
    pub inner_iterations: u64,
    pub eps_oracle: f64,
    pub grad_bound: f64,
    pub padding: f64,
    pub truncation: f64,
    pub l: f64,
}

fn diameter(d: &Domain) -> f64 {
    match d {
        Domain::Simplex { .. } => 2.0,
        Domain::Ball { radius, .. } => 2.0 * radius,
    }
}

fn block_max(d: &Domain, v: &[f64]) -> f64 {
    match d {
        Domain::Simplex { .. } => v.iter().fold(0.0f64, |m, t| m.max(t.abs())),
        Domain::Ball { .. } => crate::geometry::norm(v),
    }
}

impl StronglyMonotoneParams {
    pub fn resolve(
        prob: &Problem,
        comp: &Composite,
        kind: EstimatorKind,
        cfg: &StronglyMonotoneConfig,
    ) -> Result<Self> {
        let setup = prob.setup;
        if !(comp.mu_x > 0.0 && comp.mu_y > 0.0) {
            return Err(Error::Config(format!(
                "strong monotonicity parameters must be positive, got ({}, {})",
                comp.mu_x, comp.mu_y
            )));
        }
        if !(cfg.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", cfg.eps)));
        }
        let mu = (comp.mu_x * comp.mu_y).sqrt();
        let rho = (comp.mu_x / comp.mu_y).sqrt();
        let l = LConstants::new(prob.a).certified(kind);
        let grad_bound = match cfg.grad_bound {
            Some(g) => g,
            None => {
                // |A^T y + b| and |-A x + c| over the domain plus the composite gradients.
                let s = prob.a.stats();
                let gx = match &setup.y {
                    Domain::Simplex { .. } => s.max_row_l2,
                    Domain::Ball { radius, center, .. } => s.frob * (radius + crate::geometry::norm(center)),
                };
                let gy = match &setup.x {
                    Domain::Simplex { .. } => s.amax,
                    Domain::Ball { radius, center, .. } => {
                        s.max_row_l2 * (radius + crate::geometry::norm(center)).min(1e300)
                    }
                };
                let lin =
                    prob.b.map_or(0.0, |b| block_max(&setup.x, b)) + prob.c.map_or(0.0, |c| block_max(&setup.y, c));
                let compx = if setup.x.is_simplex() { 0.0 } else { comp.mu_x * diameter(&setup.x) };
                let compy = if setup.y.is_simplex() { 0.0 } else { comp.mu_y * diameter(&setup.y) };
                (gx * gx + gy * gy).sqrt() + lin + compx + compy
            }
        };
        let eps_oracle = mu * cfg.eps * cfg.eps / (4.0 * grad_bound * grad_bound);
        let alpha = match cfg.alpha {
            Some(a) => {
                if !(a > 0.0) {
                    return Err(Error::Config(format!("alpha must be positive, got {a}")));
                }
                a
            }
            None => {
                let lco = LConstants::new(prob.a).co_constant(kind);
                (lco / (prob.a.nnz() as f64).sqrt()).max(mu).min(l.max(mu))
            }
        };
        let eta = cfg.eta.unwrap_or(alpha / (10.0 * l * l));
        let inner_iterations = cfg.inner_iterations.unwrap_or((8.0 / (eta * alpha)).ceil() as u64).max(1);
        let outer_iterations = match cfg.outer_iterations {
            Some(k) => k,
            None => {
                let target = (rho + 1.0 / rho) * setup.theta * 4.0 * grad_bound * grad_bound / (cfg.eps * cfg.eps);
                (target.max(1.0).ln() / (1.0 + mu / alpha).ln()).ceil() as u64
            }
        };
        let mn = (setup.m() + setup.n()) as f64;
        let padding = cfg.padding.unwrap_or(mn.powi(-8)).max(MIN_PADDING);
        let truncation = cfg.truncation.unwrap_or(eps_oracle / (alpha * mn));
        Ok(StronglyMonotoneParams {
            mu,
            rho,
            alpha,
            outer_iterations,
            eta,
            inner_iterations,
            eps_oracle,
            grad_bound,
            padding,
            truncation,
            l,
        })
    }
}

/// Gradient of the composite problem: g(z) plus the gradient of mu_x V_{x'} and mu_y V_{y'}.
fn composite_gradient(prob: &Problem, comp: &Composite, z: &Point) -> Pair {
    let mut g = prob.gradient(z);
    let add = |d: &Domain, g: &mut [f64], z: &[f64], c: &[f64], mu: f64| {
        for k in 0..g.len() {
            g[k] += mu * if d.is_simplex() { z[k].ln() - c[k].ln() } else { z[k] - c[k] };
        }
    };
    add(&prob.setup.x, &mut g.x, &z.x, &comp.x_center, comp.mu_x);
    add(&prob.setup.y, &mut g.y, &z.y, &comp.y_center, comp.mu_y);
    g
}

/// argmin_z <g, z> + weight (alpha V_{prev}(z) + mu V_{half}(z)) on one block.
fn strongly_monotone_step(
    d: &Domain,
    prev: &[f64],
    half: &[f64],
    g: &[f64],
    alpha: f64,
    mu: f64,
    weight: f64,
) -> Vec<f64> {
    let tot = alpha + mu;
    match d {
        Domain::Simplex { .. } => {
            let logits: Vec<f64> =
                (0..prev.len()).map(|k| (alpha * prev[k].ln() + mu * half[k].ln() - g[k] / weight) / tot).collect();
            softmax_logits(&logits)
        }
        Domain::Ball { center, radius, .. } => {
            let mut v: Vec<f64> =
                (0..prev.len()).map(|k| (alpha * prev[k] + mu * half[k] - g[k] / weight) / tot).collect();
            project_ball(&mut v, center, *radius);
            v
        }
    }
}

fn validate_composite(setup: &LocalNormSetup, comp: &Composite) -> Result<()> {
    if comp.x_center.len() != setup.n() || comp.y_center.len() != setup.m() {
        return Err(Error::Input("composite centers have the wrong dimensions".into()));
    }
    let probe = Point { x: comp.x_center.clone(), y: comp.y_center.clone() };
    if !setup.contains(&probe) {
        return Err(Error::Input("composite centers must lie in the domain".into()));
    }
    for (d, c) in [(&setup.x, &comp.x_center), (&setup.y, &comp.y_center)] {
        if d.is_simplex() && c.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Input("simplex composite centers must be strictly positive".into()));
        }
    }
    Ok(())
}

/// Strongly monotone outer loop for y^T A x + b^T x - c^T y + mu_x V_{x'}(x) -
/// mu_y V_{y'}(y): K oracle calls with the composite inner loop, each followed by
/// the composite extragradient step. Returns the last iterate z_K.
pub fn solve_strongly_monotone(
    setup: &LocalNormSetup,
    a: &SparseMatrix,
    b: Option<&[f64]>,
    c: Option<&[f64]>,
    comp: &Composite,
    kind: EstimatorKind,
    cfg: &StronglyMonotoneConfig,
    rng: &mut dyn RngCore,
) -> Result<(Point, SolveReport)> {
    let prob = Problem::new(setup, a, b, c)?;
    check_kind(setup, kind, &[Family::VrCoord, Family::VrRowCol])?;
    let p = StronglyMonotoneParams::resolve(&prob, comp, kind, cfg)?;
    validate_composite(setup, comp)?;
    let mut rec = Recorder::new(cfg.checkpoint_every);
    let inner = InnerParams {
        alpha: p.alpha,
        eta: p.eta,
        iterations: p.inner_iterations,
        padding: p.padding,
        exact_maintainers: cfg.exact_maintainers,
        composite: Some(comp.clone()),
    };
    let mut z = match &cfg.start {
        Some(s) => {
            if !setup.contains(s) {
                return Err(Error::Input("start point is not feasible".into()));
            }
            truncate(setup, s, p.truncation)
        }
        None => truncate(setup, &Point { x: comp.x_center.clone(), y: comp.y_center.clone() }, p.truncation),
    };
    let (wx, wy, _, _) = composite_weights(Some(comp));
    let mut touched = 0u64;
    let mut step_touched = 0u64;
    let mut perturbation = 0.0;
    let first_gap = if rec.every > 0 { Some(prob.gap(&z, Some(comp))) } else { None };
    rec.push(0, first_gap, 0);
    for k in 1..=p.outer_iterations {
        let g0 = prob.gradient(&z);
        rec.matvecs += 2;
        touched += (setup.m() + setup.n()) as u64;
        let o = inner_loop_with_g0(&prob, &z, &g0, kind, &inner, rng)?;
        touched += o.touched;
        step_touched += o.step_touched;
        let w = truncate(setup, &o.point, p.truncation);
        let gw = composite_gradient(&prob, comp, &w);
        rec.matvecs += 2;
        let zx = strongly_monotone_step(&setup.x, &z.x, &w.x, &gw.x, p.alpha, p.mu, wx);
        let zy = strongly_monotone_step(&setup.y, &z.y, &w.y, &gw.y, p.alpha, p.mu, wy);
        for (d, v) in [(&setup.x, &zx), (&setup.y, &zy)] {
            if d.is_simplex() {
                perturbation += added_mass(v, p.truncation);
            }
        }
        z = truncate(setup, &Point { x: zx, y: zy }, p.truncation);
        touched += 2 * (setup.m() + setup.n()) as u64;
        if rec.due(k) && k < p.outer_iterations {
            rec.push(k, Some(prob.gap(&z, Some(comp))), touched);
        }
    }
    let gap = prob.gap(&z, Some(comp));
    rec.push(p.outer_iterations, Some(gap), touched);
    let simplex_dims: usize = [&setup.x, &setup.y].iter().filter(|d| d.is_simplex()).map(|d| d.dim()).sum();
    let mut params = BTreeMap::new();
    params.insert("eps".into(), cfg.eps);
    params.insert("mu".into(), p.mu);
    params.insert("rho".into(), p.rho);
    params.insert("alpha".into(), p.alpha);
    params.insert("outer_iterations".into(), p.outer_iterations as f64);
    params.insert("eta".into(), p.eta);
    params.insert("inner_iterations".into(), p.inner_iterations as f64);
    params.insert("eps_oracle".into(), p.eps_oracle);
    params.insert("grad_bound".into(), p.grad_bound);
    params.insert("padding".into(), p.padding);
    params.insert("truncation".into(), p.truncation);
    params.insert("l".into(), p.l);
    let report = SolveReport {
        method: "strongly-monotone".into(),
        estimator: Some(kind.to_string()),
        output: z.clone(),
        trace: rec.rows,
        final_gap: gap,
        seed: cfg.seed,
        iterations: p.outer_iterations,
        inner_steps: p.outer_iterations * p.inner_iterations,
        coords_touched: touched,
        step_coords_touched: step_touched,
        matvecs: rec.matvecs,
        perturbation,
        perturbation_bound: (2 * p.outer_iterations + 1) as f64 * p.truncation * simplex_dims as f64,
        params,
    };
    Ok((z, report))
}

// ---------------------------------------------------------------------------
// Deterministic baseline
// ---------------------------------------------------------------------------

/// Lipschitz constant of the gradient mapping in the setup's norm.
pub fn mirror_prox_constant(setup: &LocalNormSetup, a: &SparseMatrix) -> f64 {
    let s = a.stats();
    match setup.kind {
        SetupKind::L1L1 => s.amax,
        SetupKind::L2L1 => s.max_row_l2,
        SetupKind::L2L2 => a.op_norm_estimate(200) * 1.01,
    }
}

/// Cap on the iterations of the baseline.
pub const MIRROR_PROX_MAX_ITERATIONS: u64 = 10_000_000;

/// Deterministic mirror-prox with exact gradients and step 1 / L, stopping once the
/// exact gap of the averaged half-iterates is at most eps.
pub fn solve_mirror_prox_baseline(
    setup: &LocalNormSetup,
    a: &SparseMatrix,
    b: Option<&[f64]>,
    c: Option<&[f64]>,
    eps: f64,
) -> Result<(Point, SolveReport)> {
    let prob = Problem::new(setup, a, b, c)?;
    prob.reject_linear_with_simplex()?;
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let l = mirror_prox_constant(setup, a);
    let step = 1.0 / l;
    let mut rec = Recorder::new(1);
    let mut z = setup.center();
    let mut sum = Point { x: vec![0.0; setup.n()], y: vec![0.0; setup.m()] };
    let mut out = z.clone();
    let mut gap = prob.gap(&out, None);
    rec.push(0, Some(gap), 0);
    let mut it = 0u64;
    let per_iter = 4 * a.nnz() as u64 + 4 * (setup.m() + setup.n()) as u64;
    while gap > eps && it < MIRROR_PROX_MAX_ITERATIONS {
        it += 1;
        let g = prob.gradient(&z);
        let half = Point { x: prox_block(&setup.x, &z.x, &g.x, step), y: prox_block(&setup.y, &z.y, &g.y, step) };
        let gh = prob.gradient(&half);
        rec.matvecs += 4;
        z = Point { x: prox_block(&setup.x, &z.x, &gh.x, step), y: prox_block(&setup.y, &z.y, &gh.y, step) };
        for (s, v) in sum.x.iter_mut().zip(&half.x) {
            *s += v;
        }
        for (s, v) in sum.y.iter_mut().zip(&half.y) {
            *s += v;
        }
        let kf = it as f64;
        out = Point { x: sum.x.iter().map(|t| t / kf).collect(), y: sum.y.iter().map(|t| t / kf).collect() };
        normalize_blocks(setup, &mut out);
        gap = prob.gap(&out, None);
        rec.push(it, Some(gap), it * per_iter);
    }
    let mut params = BTreeMap::new();
    params.insert("eps".into(), eps);
    params.insert("l".into(), l);
    params.insert("iterations".into(), it as f64);
    let report = SolveReport {
        method: "mirror-prox".into(),
        estimator: None,
        output: out.clone(),
        trace: rec.rows,
        final_gap: gap,
        seed: 0,
        iterations: it,
        inner_steps: 0,
        coords_touched: it * per_iter,
        step_coords_touched: 0,
        matvecs: rec.matvecs,
        perturbation: 0.0,
        perturbation_bound: 0.0,
        params,
    };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::EstGeometry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn swap() -> SparseMatrix {
        SparseMatrix::from_dense(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn truncate_examples() {
        let s = LocalNormSetup::new(SetupKind::L1L1, 2, 2);
        let z = Point { x: vec![1.0, 0.0], y: vec![0.5, 0.5] };
        let t = truncate(&s, &z, 0.1);
        assert!((t.x[0] - 10.0 / 11.0).abs() < 1e-15 && (t.x[1] - 1.0 / 11.0).abs() < 1e-15);
        assert_eq!(t.y, vec![0.5, 0.5]);
        assert_eq!(truncate(&s, &z, 0.0), z);
        let u = s.center();
        assert_eq!(truncate(&s, &u, 0.5), u);
        let b = LocalNormSetup::new(SetupKind::L2L2, 2, 2);
        let p = Point { x: vec![0.0, -0.5], y: vec![0.3, 0.0] };
        assert_eq!(truncate(&b, &p, 0.2), p);
    }

    #[test]
    fn zero_iterations_return_the_center() {
        let s = LocalNormSetup::new(SetupKind::L1L1, 2, 2);
        let a = swap();
        let k = EstimatorKind::new(Family::SublinearCoord, EstGeometry::L1L1).unwrap();
        let mut cfg = SublinearConfig::new(0.05);
        cfg.iterations = Some(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (z, r) = solve_sublinear(&s, &a, None, None, k, &cfg, &mut rng).unwrap();
        assert_eq!(z, s.center());
        assert_eq!(r.final_gap, crate::geometry::gap(&s, &a, None, None, &s.center()));
        let kv = EstimatorKind::new(Family::VrCoord, EstGeometry::L1L1).unwrap();
        let mut vc = VrConfig::new(0.05);
        vc.outer_iterations = Some(0);
        let (z, _) = solve_vr(&s, &a, None, None, kv, &vc, &mut rng).unwrap();
        assert_eq!(z, s.center());
    }

    #[test]
    fn linear_terms_rejected_with_simplex_blocks() {
        let s = LocalNormSetup::new(SetupKind::L2L1, 2, 2);
        let a = swap();
        let k = EstimatorKind::new(Family::SublinearCoord, EstGeometry::L2L1v1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = [1.0, 0.0];
        let e = solve_sublinear(&s, &a, Some(&b), None, k, &SublinearConfig::new(0.1), &mut rng).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        let zero = [0.0, 0.0];
        let mut cfg = SublinearConfig::new(0.1);
        cfg.iterations = Some(3);
        assert!(solve_sublinear(&s, &a, Some(&zero), None, k, &cfg, &mut rng).is_ok());
    }

    #[test]
    fn kind_mismatch_rejected() {
        let s = LocalNormSetup::new(SetupKind::L2L2, 2, 2);
        let k = EstimatorKind::new(Family::SublinearCoord, EstGeometry::L1L1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(solve_sublinear(&s, &swap(), None, None, k, &SublinearConfig::new(0.1), &mut rng).is_err());
    }

    #[test]
    fn sublinear_swap_game_reaches_eps() {
        let s = LocalNormSetup::new(SetupKind::L1L1, 2, 2);
        let a = swap();
        let k = EstimatorKind::new(Family::SublinearCoord, EstGeometry::L1L1).unwrap();
        let mut total = 0.0;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (_, r) = solve_sublinear(&s, &a, None, None, k, &SublinearConfig::new(0.05), &mut rng).unwrap();
            total += r.final_gap;
        }
        assert!(total / 10.0 <= 1.2 * 0.05, "mean gap {}", total / 10.0);
    }

    #[test]
    fn sublinear_l2l2_diagonal() {
        let s = LocalNormSetup::new(SetupKind::L2L2, 2, 2);
        let a = SparseMatrix::diag(&[1.0, 2.0]).unwrap();
        let k = EstimatorKind::new(Family::SublinearCoord, EstGeometry::L2L2Oblivious).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, r) = solve_sublinear(&s, &a, None, None, k, &SublinearConfig::new(0.05), &mut rng).unwrap();
        assert!(r.final_gap <= 0.05);
    }

    #[test]
    fn mirror_prox_scalar_converges_fast() {
        let s = LocalNormSetup::new(SetupKind::L2L2, 1, 1);
        let a = SparseMatrix::identity(1);
        let (_, r) = solve_mirror_prox_baseline(&s, &a, None, None, 1e-6).unwrap();
        assert!(r.iterations <= 10 && r.final_gap <= 1e-6);
        let c = [0.5];
        let (_, r) = solve_mirror_prox_baseline(&s, &a, None, Some(&c), 1e-6).unwrap();
        assert!(r.final_gap <= 1e-6);
        assert_eq!(r.matvecs, 4 * r.iterations);
    }

    #[test]
    fn inner_loop_single_step_matches_prox() {
        // With z = w0 the centered estimator has no correction, so one step is the
        // regularized prox step from w0 with the exact gradient.
        let s = LocalNormSetup::new(SetupKind::L1L1, 2, 3);
        let a = SparseMatrix::from_dense(&[vec![1.0, -0.5, 0.0], vec![0.2, 0.0, 0.7]]).unwrap();
        let w0 = Point { x: vec![0.2, 0.3, 0.5], y: vec![0.6, 0.4] };
        let k = EstimatorKind::new(Family::VrCoord, EstGeometry::L1L1).unwrap();
        let (alpha, eta) = (0.5, 0.3);
        for exact in [true, false] {
            let p =
                InnerParams { alpha, eta, iterations: 1, padding: 1e-10, exact_maintainers: exact, composite: None };
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let o = inner_loop(&s, &a, None, None, &w0, k, &p, &mut rng).unwrap();
            let g = operator(&a, None, None, &w0);
            // log w = log w0 - eta g / (1 + eta alpha / 2)
            let kap = 1.0 / (1.0 + eta * alpha / 2.0);
            let ex: Vec<f64> =
                softmax_logits(&w0.x.iter().zip(&g.x).map(|(w, g)| w.ln() - eta * kap * g).collect::<Vec<_>>());
            for (u, v) in o.point.x.iter().zip(&ex) {
                assert!((u - v).abs() < 1e-6, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn vr_exact_and_approximate_maintainers_agree() {
        // The two maintainers draw samples differently, so trajectories differ; their
        // outputs should still be of the same quality.
        let s = LocalNormSetup::new(SetupKind::L1L1, 3, 3);
        let a = SparseMatrix::from_dense(&[vec![1.0, -1.0, 0.5], vec![0.0, 2.0, -1.0], vec![-0.5, 0.0, 1.0]]).unwrap();
        let k = EstimatorKind::new(Family::VrCoord, EstGeometry::L1L1).unwrap();
        let mut cfg = VrConfig::new(0.05);
        cfg.outer_iterations = Some(4);
        cfg.inner_iterations = Some(100);
        let mut gaps = [0.0, 0.0];
        for seed in 0..8 {
            for (slot, exact) in [false, true].into_iter().enumerate() {
                cfg.exact_maintainers = exact;
                let (_, r) = solve_vr(&s, &a, None, None, k, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                gaps[slot] += r.final_gap / 8.0;
            }
        }
        assert!((gaps[0] - gaps[1]).abs() <= 0.25 * gaps[0].max(gaps[1]) + 1e-3, "{gaps:?}");
    }

    #[test]
    fn strongly_monotone_trivial_saddle() {
        let s = LocalNormSetup::new(SetupKind::L2L1, 2, 2);
        // Columns sum to zero, so the composite centers form the saddle point.
        let a = SparseMatrix::from_dense(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let comp = Composite { mu_x: 1.0, mu_y: 1.0, x_center: vec![0.0, 0.0], y_center: vec![0.5; 2] };
        let k = EstimatorKind::new(Family::VrCoord, EstGeometry::L2L1v1).unwrap();
        let mut cfg = StronglyMonotoneConfig::new(1e-3);
        cfg.outer_iterations = Some(5);
        cfg.inner_iterations = Some(20);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (z, _) = solve_strongly_monotone(&s, &a, None, None, &comp, k, &cfg, &mut rng).unwrap();
        for (u, v) in z.x.iter().zip(&comp.x_center).chain(z.y.iter().zip(&comp.y_center)) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}
