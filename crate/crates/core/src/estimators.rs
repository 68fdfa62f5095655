//! Stochastic estimators of the gradient mapping g(z) = (A^T z^y + b, -A z^x + c).
//!
//! Every estimator draws a pair (i, j) ~ p to estimate the x block A^T z^y and an
//! independent pair (i, j) ~ q to estimate the y block -A z^x. The output is a dense
//! base (either g(0) = (b, c) or g(w0) for a reference point w0) plus a sparse
//! correction. Distributions that depend on the iterate are realized through an
//! [`IterateView`], which the solvers back by their iterate maintainers.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, SetupKind};
use crate::sparse_matrix::{GlobalKind, SparseMatrix};

/// Estimator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Coordinate estimator around g(0), used by the sublinear method.
    SublinearCoord,
    /// Coordinate estimator around g(w0), used by the variance-reduced method.
    VrCoord,
    /// Full row and column estimator around g(w0).
    VrRowCol,
}

/// Sampling geometry of an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstGeometry {
    L1L1,
    /// Ball-simplex with q proportional to squared entries.
    L2L1v1,
    /// Ball-simplex with q proportional to squared x entries times column counts.
    L2L1v2,
    /// Ball-simplex with q proportional to |A_ij| times squared x entries.
    L2L1v3,
    /// Ball-ball with iterate-independent distributions.
    L2L2Oblivious,
    /// Ball-ball with distributions proportional to squared iterate entries.
    L2L2Dynamic,
}

impl EstGeometry {
    pub fn setup(self) -> SetupKind {
        match self {
            EstGeometry::L1L1 => SetupKind::L1L1,
            EstGeometry::L2L1v1 | EstGeometry::L2L1v2 | EstGeometry::L2L1v3 => SetupKind::L2L1,
            EstGeometry::L2L2Oblivious | EstGeometry::L2L2Dynamic => SetupKind::L2L2,
        }
    }

    fn l21_variant(self) -> Option<usize> {
        match self {
            EstGeometry::L2L1v1 => Some(0),
            EstGeometry::L2L1v2 => Some(1),
            EstGeometry::L2L1v3 => Some(2),
            _ => None,
        }
    }
}

impl FromStr for EstGeometry {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "l1l1" => Ok(EstGeometry::L1L1),
            "l2l1v1" => Ok(EstGeometry::L2L1v1),
            "l2l1v2" => Ok(EstGeometry::L2L1v2),
            "l2l1v3" => Ok(EstGeometry::L2L1v3),
            "l2l2oblivious" | "l2l2" => Ok(EstGeometry::L2L2Oblivious),
            "l2l2dynamic" => Ok(EstGeometry::L2L2Dynamic),
            _ => Err(Error::Config(format!("unknown estimator geometry '{s}'"))),
        }
    }
}

impl fmt::Display for EstGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EstGeometry::L1L1 => "l1l1",
            EstGeometry::L2L1v1 => "l2l1v1",
            EstGeometry::L2L1v2 => "l2l1v2",
            EstGeometry::L2L1v3 => "l2l1v3",
            EstGeometry::L2L2Oblivious => "l2l2-oblivious",
            EstGeometry::L2L2Dynamic => "l2l2-dynamic",
        };
        f.write_str(s)
    }
}

/// A validated (family, geometry) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EstimatorKind {
    pub family: Family,
    pub geometry: EstGeometry,
}

/// Block of a primal-dual point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    X,
    Y,
}

/// Per-coordinate weights used by squared sampling modes on the x block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Weighting {
    Plain,
    /// Number of nonzeros of column j.
    ColNnz,
    /// l1 norm of column j.
    ColL1,
}

/// Distribution over the coordinates of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleMode {
    /// Proportional to the current iterate (simplex blocks).
    Iterate,
    /// Proportional to the reference point (simplex blocks).
    Reference,
    /// Proportional to w_k z_k^2.
    Square(Weighting),
    /// Proportional to w_k (z_k - z0_k)^2.
    CenteredSquare(Weighting),
}

impl EstimatorKind {
    pub fn new(family: Family, geometry: EstGeometry) -> Result<Self> {
        if family == Family::VrRowCol && geometry == EstGeometry::L2L2Dynamic {
            return Err(Error::Config("the row-column estimator supports l1l1, l2l1 and l2l2-oblivious only".into()));
        }
        Ok(EstimatorKind { family, geometry })
    }

    pub fn setup(&self) -> SetupKind {
        self.geometry.setup()
    }

    /// Default geometry for a family and setup; ball-simplex picks the variant with
    /// the smallest constant.
    pub fn default_for(family: Family, setup: SetupKind, lc: &LConstants) -> Self {
        let geometry = match setup {
            SetupKind::L1L1 => EstGeometry::L1L1,
            SetupKind::L2L2 => EstGeometry::L2L2Oblivious,
            SetupKind::L2L1 => match lc.l21_best_variant() {
                0 => EstGeometry::L2L1v1,
                1 => EstGeometry::L2L1v2,
                _ => EstGeometry::L2L1v3,
            },
        };
        EstimatorKind { family, geometry }
    }

    /// Sampling modes the iterate view must support for this estimator.
    pub fn required_modes(&self) -> Vec<(Block, SampleMode)> {
        use EstGeometry as G;
        use SampleMode as M;
        let mut v = Vec::new();
        match (self.family, self.geometry) {
            (Family::SublinearCoord, G::L1L1) => {
                v.push((Block::Y, M::Iterate));
                v.push((Block::X, M::Iterate));
            }
            (Family::SublinearCoord, G::L2L1v1 | G::L2L1v2 | G::L2L1v3) => {
                v.push((Block::Y, M::Iterate));
                match self.geometry {
                    G::L2L1v2 => v.push((Block::X, M::Square(Weighting::ColNnz))),
                    G::L2L1v3 => v.push((Block::X, M::Square(Weighting::ColL1))),
                    _ => {}
                }
            }
            (Family::SublinearCoord, G::L2L2Dynamic) => {
                v.push((Block::Y, M::Square(Weighting::Plain)));
                v.push((Block::X, M::Square(Weighting::Plain)));
            }
            (_, G::L2L2Oblivious) => {}
            (Family::VrCoord, G::L1L1) | (Family::VrRowCol, G::L1L1) => {
                v.extend([(Block::Y, M::Iterate), (Block::Y, M::Reference)]);
                v.extend([(Block::X, M::Iterate), (Block::X, M::Reference)]);
            }
            (Family::VrCoord, G::L2L1v1 | G::L2L1v2 | G::L2L1v3) => {
                v.extend([(Block::Y, M::Iterate), (Block::Y, M::Reference)]);
                match self.geometry {
                    G::L2L1v2 => v.push((Block::X, M::CenteredSquare(Weighting::ColNnz))),
                    G::L2L1v3 => v.push((Block::X, M::CenteredSquare(Weighting::ColL1))),
                    _ => {}
                }
            }
            (Family::VrRowCol, _) => {
                v.extend([(Block::Y, M::Iterate), (Block::Y, M::Reference)]);
                v.push((Block::X, M::CenteredSquare(Weighting::Plain)));
            }
            (Family::VrCoord, G::L2L2Dynamic) => {
                v.push((Block::Y, M::CenteredSquare(Weighting::Plain)));
                v.push((Block::X, M::CenteredSquare(Weighting::Plain)));
            }
        }
        v
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fam = match self.family {
            Family::SublinearCoord => "sublinear",
            Family::VrCoord => "vr",
            Family::VrRowCol => "vr-rowcol",
        };
        write!(f, "{fam}/{}", self.geometry)
    }
}

/// The constants governing estimator variance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LConstants {
    /// max of the largest row and column l2 norms.
    pub l11: f64,
    /// The three ball-simplex variants.
    pub l21: [f64; 3],
    /// Smallest of the three variants.
    pub l21_best: f64,
    /// Closed form sqrt(max_i ||a_i||_1^2 + min(||A||_F^2, rcs max_i ||a_i||_2^2, max_i ||a_i||_1 max_j ||a_:j||_1)).
    pub l21_closed: f64,
    /// sqrt(sum_i ||a_i||_1^2 + sum_j ||a_:j||_1^2).
    pub l22: f64,
    /// max(sqrt(sum_i ||a_i||_1^2), sqrt(sum_j ||a_:j||_1^2)).
    pub l22_max: f64,
    /// Largest absolute entry.
    pub lmax: f64,
    /// Largest row l2 norm.
    pub max_row_l2: f64,
    /// Frobenius norm.
    pub frob: f64,
}

impl LConstants {
    pub fn new(a: &SparseMatrix) -> Self {
        let s = a.stats();
        let r1 = s.max_row_l1 * s.max_row_l1;
        let v1 = (r1 + s.frob * s.frob).sqrt();
        let v2 = (2.0 * s.rcs as f64 * s.max_row_l2 * s.max_row_l2).sqrt();
        let v3 = (r1 + s.max_row_l1 * s.max_col_l1).sqrt();
        let inner = (s.frob * s.frob).min(s.rcs as f64 * s.max_row_l2 * s.max_row_l2).min(s.max_row_l1 * s.max_col_l1);
        LConstants {
            l11: s.max_row_l2.max(s.max_col_l2),
            l21: [v1, v2, v3],
            l21_best: v1.min(v2).min(v3),
            l21_closed: (r1 + inner).sqrt(),
            l22: (s.sum_row_l1_sq + s.sum_col_l1_sq).sqrt(),
            l22_max: s.sum_row_l1_sq.sqrt().max(s.sum_col_l1_sq.sqrt()),
            lmax: s.amax,
            max_row_l2: s.max_row_l2,
            frob: s.frob,
        }
    }

    /// Index of the smallest ball-simplex variant (ties favor the lower index).
    pub fn l21_best_variant(&self) -> usize {
        let mut best = 0;
        for k in 1..3 {
            if self.l21[k] < self.l21[best] {
                best = k;
            }
        }
        best
    }

    /// Constant L_co used in step sizes. For the coordinate families the certified
    /// constant of the estimator is sqrt(2) L_co (simplex-simplex sublinear and all
    /// variance-reduced kinds) or L_co itself (ball sublinear kinds).
    pub fn co_constant(&self, kind: EstimatorKind) -> f64 {
        match (kind.family, kind.geometry) {
            (Family::VrRowCol, EstGeometry::L1L1) => self.lmax,
            (Family::VrRowCol, EstGeometry::L2L2Oblivious) => self.frob,
            (Family::VrRowCol, _) => self.max_row_l2,
            (_, EstGeometry::L1L1) => self.l11,
            (_, EstGeometry::L2L2Oblivious | EstGeometry::L2L2Dynamic) => self.l22,
            (_, g) => self.l21[g.l21_variant().expect("ball-simplex variant")],
        }
    }

    /// Certified constant: the second moment (sublinear) or the relative variance
    /// divided by the divergence (variance-reduced) is at most its square.
    pub fn certified(&self, kind: EstimatorKind) -> f64 {
        let l = self.co_constant(kind);
        match (kind.family, kind.geometry) {
            (Family::SublinearCoord, EstGeometry::L1L1) => std::f64::consts::SQRT_2 * l,
            (Family::SublinearCoord, _) => l,
            _ => std::f64::consts::SQRT_2 * l,
        }
    }
}

/// Read access to the current iterate z, the reference point w0 and the samplers
/// the estimator needs.
pub trait IterateView {
    /// Coordinate k of the current iterate.
    fn value(&mut self, block: Block, k: usize) -> f64;
    /// Coordinate k of the reference point.
    fn reference(&mut self, block: Block, k: usize) -> f64;
    /// Normalizing mass of a sampling mode (1 for the simplex modes).
    fn mass(&mut self, block: Block, mode: SampleMode) -> f64;
    /// Draws a coordinate from a sampling mode.
    fn sample(&mut self, block: Block, mode: SampleMode, rng: &mut dyn RngCore) -> Result<usize>;
}

/// Dense base of an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Base {
    /// g(0) = (b, c).
    Offset,
    /// g(w0).
    Reference,
}

/// Estimate = base + sparse correction.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub base: Base,
    pub x: Vec<(usize, f64)>,
    pub y: Vec<(usize, f64)>,
    /// Matrix accesses performed.
    pub touched: u64,
}

impl GradEstimate {
    pub fn new(base: Base) -> Self {
        GradEstimate { base, x: Vec::with_capacity(4), y: Vec::with_capacity(4), touched: 0 }
    }

    fn reset(&mut self, base: Base) {
        self.base = base;
        self.x.clear();
        self.y.clear();
        self.touched = 0;
    }

    /// Dense estimate given the base vector.
    pub fn to_dense(&self, base: &Point) -> Point {
        let mut out = base.clone();
        for &(j, v) in &self.x {
            out.x[j] += v;
        }
        for &(i, v) in &self.y {
            out.y[i] += v;
        }
        out
    }
}

fn weight(a: &SparseMatrix, w: Weighting, j: usize) -> f64 {
    match w {
        Weighting::Plain => 1.0,
        Weighting::ColNnz => a.col_nnz(j) as f64,
        Weighting::ColL1 => a.col_l1()[j],
    }
}

/// Draws from a squared-magnitude distribution; None when rounding leaves the
/// maintained mass without a positive leaf, which only happens at noise level.
fn sample_mass(
    view: &mut dyn IterateView,
    block: Block,
    mode: SampleMode,
    rng: &mut dyn RngCore,
) -> Result<Option<usize>> {
    match view.sample(block, mode, rng) {
        Ok(k) => Ok(Some(k)),
        Err(Error::Numeric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn mixture_sample(view: &mut dyn IterateView, block: Block, rng: &mut dyn RngCore) -> Result<usize> {
    let mode = if rng.random::<f64>() < 1.0 / 3.0 { SampleMode::Iterate } else { SampleMode::Reference };
    view.sample(block, mode, rng)
}

fn check_dims(a: &SparseMatrix, kind: EstimatorKind) -> Result<()> {
    if a.nnz() == 0 {
        return Err(Error::Structural("matrix has no nonzeros".into()));
    }
    let _ = kind;
    Ok(())
}

/// Coordinate estimate around g(0); writes into `out`.
pub fn estimate_sublinear_into(
    kind: EstimatorKind,
    a: &SparseMatrix,
    view: &mut dyn IterateView,
    rng: &mut dyn RngCore,
    out: &mut GradEstimate,
) -> Result<()> {
    if kind.family != Family::SublinearCoord {
        return Err(Error::Config(format!("{kind} is not a sublinear estimator")));
    }
    check_dims(a, kind)?;
    out.reset(Base::Offset);
    let s = a.stats();
    use EstGeometry as G;
    // x block: (i, j) ~ p, value A_ij y_i / p_ij at coordinate j
    'xb: {
        match kind.geometry {
            G::L1L1 => {
                let i = view.sample(Block::Y, SampleMode::Iterate, rng)?;
                let Some((j, aij)) = a.sample_row_entry(i, 2, rng) else { break 'xb };
                let r2 = a.row_l2()[i];
                out.x.push((j, r2 * r2 / aij));
            }
            G::L2L1v1 | G::L2L1v2 | G::L2L1v3 => {
                let i = view.sample(Block::Y, SampleMode::Iterate, rng)?;
                let Some((j, aij)) = a.sample_row_entry(i, 1, rng) else { break 'xb };
                out.x.push((j, aij.signum() * a.row_l1()[i]));
            }
            G::L2L2Oblivious => {
                let i = a.sample_row_l1sq(rng).expect("nonempty matrix");
                let Some((j, aij)) = a.sample_row_entry(i, 1, rng) else { break 'xb };
                let yi = view.value(Block::Y, i);
                if yi != 0.0 {
                    out.x.push((j, aij.signum() * yi * s.sum_row_l1_sq / a.row_l1()[i]));
                }
            }
            G::L2L2Dynamic => {
                let mode = SampleMode::Square(Weighting::Plain);
                let mass = view.mass(Block::Y, mode);
                if mass > 0.0 {
                    let Some(i) = sample_mass(view, Block::Y, mode, rng)? else { break 'xb };
                    let Some((j, aij)) = a.sample_row_entry(i, 1, rng) else { break 'xb };
                    let yi = view.value(Block::Y, i);
                    out.x.push((j, aij.signum() * mass * a.row_l1()[i] / yi));
                }
            }
        }
    }
    // y block: (i, j) ~ q, value -A_ij x_j / q_ij at coordinate i
    'yb: {
        match kind.geometry {
            G::L1L1 => {
                let j = view.sample(Block::X, SampleMode::Iterate, rng)?;
                let Some((i, aij)) = a.sample_col_entry(j, 2, rng) else { break 'yb };
                let c2 = a.col_l2()[j];
                out.y.push((i, -c2 * c2 / aij));
            }
            G::L2L1v1 => {
                let (i, j, aij) = a.sample_entry_sq(rng).expect("nonempty matrix");
                let xj = view.value(Block::X, j);
                if xj != 0.0 {
                    out.y.push((i, -xj * s.frob * s.frob / aij));
                }
            }
            G::L2L1v2 | G::L2L1v3 => {
                let w = if kind.geometry == G::L2L1v2 { Weighting::ColNnz } else { Weighting::ColL1 };
                let mode = SampleMode::Square(w);
                let mass = view.mass(Block::X, mode);
                if mass > 0.0 {
                    let Some(j) = sample_mass(view, Block::X, mode, rng)? else { break 'yb };
                    let xj = view.value(Block::X, j);
                    if kind.geometry == G::L2L1v2 {
                        let Some((i, aij)) = a.sample_col_entry(j, 0, rng) else { break 'yb };
                        out.y.push((i, -aij * mass / xj));
                    } else {
                        let Some((i, aij)) = a.sample_col_entry(j, 1, rng) else { break 'yb };
                        out.y.push((i, -aij.signum() * mass / xj));
                    }
                }
            }
            G::L2L2Oblivious => {
                let j = a.sample_col_l1sq(rng).expect("nonempty matrix");
                let Some((i, aij)) = a.sample_col_entry(j, 1, rng) else { break 'yb };
                let xj = view.value(Block::X, j);
                if xj != 0.0 {
                    out.y.push((i, -aij.signum() * xj * s.sum_col_l1_sq / a.col_l1()[j]));
                }
            }
            G::L2L2Dynamic => {
                let mode = SampleMode::Square(Weighting::Plain);
                let mass = view.mass(Block::X, mode);
                if mass > 0.0 {
                    let Some(j) = sample_mass(view, Block::X, mode, rng)? else { break 'yb };
                    let Some((i, aij)) = a.sample_col_entry(j, 1, rng) else { break 'yb };
                    let xj = view.value(Block::X, j);
                    out.y.push((i, -aij.signum() * mass * a.col_l1()[j] / xj));
                }
            }
        }
    }
    out.touched = 4;
    Ok(())
}

/// Coordinate estimate around g(0).
pub fn estimate_sublinear(
    kind: EstimatorKind,
    a: &SparseMatrix,
    view: &mut dyn IterateView,
    rng: &mut dyn RngCore,
) -> Result<GradEstimate> {
    let mut out = GradEstimate::new(Base::Offset);
    estimate_sublinear_into(kind, a, view, rng, &mut out)?;
    Ok(out)
}

/// Variance-reduced coordinate estimate around g(w0); writes into `out`.
pub fn estimate_vr_into(
    kind: EstimatorKind,
    a: &SparseMatrix,
    view: &mut dyn IterateView,
    rng: &mut dyn RngCore,
    out: &mut GradEstimate,
) -> Result<()> {
    if kind.family != Family::VrCoord {
        return Err(Error::Config(format!("{kind} is not a variance-reduced coordinate estimator")));
    }
    check_dims(a, kind)?;
    out.reset(Base::Reference);
    let s = a.stats();
    use EstGeometry as G;
    // x block: value A_ij (y_i - y0_i) / p_ij at coordinate j
    'xb: {
        match kind.geometry {
            G::L1L1 | G::L2L1v1 | G::L2L1v2 | G::L2L1v3 => {
                let i = mixture_sample(view, Block::Y, rng)?;
                let (yi, y0) = (view.value(Block::Y, i), view.reference(Block::Y, i));
                let d = yi - y0;
                let mix = (yi + 2.0 * y0) / 3.0;
                if kind.geometry == G::L1L1 {
                    let Some((j, aij)) = a.sample_row_entry(i, 2, rng) else { break 'xb };
                    let r2 = a.row_l2()[i];
                    if d != 0.0 {
                        out.x.push((j, d * r2 * r2 / (mix * aij)));
                    }
                } else {
                    let Some((j, aij)) = a.sample_row_entry(i, 1, rng) else { break 'xb };
                    if d != 0.0 {
                        out.x.push((j, aij.signum() * d * a.row_l1()[i] / mix));
                    }
                }
            }
            G::L2L2Oblivious => {
                let i = a.sample_row_l1sq(rng).expect("nonempty matrix");
                let Some((j, aij)) = a.sample_row_entry(i, 1, rng) else { break 'xb };
                let d = view.value(Block::Y, i) - view.reference(Block::Y, i);
                if d != 0.0 {
                    out.x.push((j, aij.signum() * d * s.sum_row_l1_sq / a.row_l1()[i]));
                }
            }
            G::L2L2Dynamic => {
                let mode = SampleMode::CenteredSquare(Weighting::Plain);
                let mass = view.mass(Block::Y, mode);
                if mass > 0.0 {
                    let Some(i) = sample_mass(view, Block::Y, mode, rng)? else { break 'xb };
                    let Some((j, aij)) = a.sample_row_entry(i, 1, rng) else { break 'xb };
                    let d = view.value(Block::Y, i) - view.reference(Block::Y, i);
                    if d != 0.0 {
                        out.x.push((j, aij.signum() * mass * a.row_l1()[i] / d));
                    }
                }
            }
        }
    }
    // y block: value -A_ij (x_j - x0_j) / q_ij at coordinate i
    'yb: {
        match kind.geometry {
            G::L1L1 => {
                let j = mixture_sample(view, Block::X, rng)?;
                let (xj, x0) = (view.value(Block::X, j), view.reference(Block::X, j));
                let Some((i, aij)) = a.sample_col_entry(j, 2, rng) else { break 'yb };
                let c2 = a.col_l2()[j];
                let d = xj - x0;
                if d != 0.0 {
                    out.y.push((i, -d * c2 * c2 / ((xj + 2.0 * x0) / 3.0 * aij)));
                }
            }
            G::L2L1v1 => {
                let (i, j, aij) = a.sample_entry_sq(rng).expect("nonempty matrix");
                let d = view.value(Block::X, j) - view.reference(Block::X, j);
                if d != 0.0 {
                    out.y.push((i, -d * s.frob * s.frob / aij));
                }
            }
            G::L2L1v2 | G::L2L1v3 => {
                let w = if kind.geometry == G::L2L1v2 { Weighting::ColNnz } else { Weighting::ColL1 };
                let mode = SampleMode::CenteredSquare(w);
                let mass = view.mass(Block::X, mode);
                if mass > 0.0 {
                    let Some(j) = sample_mass(view, Block::X, mode, rng)? else { break 'yb };
                    let d = view.value(Block::X, j) - view.reference(Block::X, j);
                    if d != 0.0 {
                        if kind.geometry == G::L2L1v2 {
                            let Some((i, aij)) = a.sample_col_entry(j, 0, rng) else { break 'yb };
                            out.y.push((i, -aij * mass / d));
                        } else {
                            let Some((i, aij)) = a.sample_col_entry(j, 1, rng) else { break 'yb };
                            out.y.push((i, -aij.signum() * mass / d));
                        }
                    }
                }
            }
            G::L2L2Oblivious => {
                let j = a.sample_col_l1sq(rng).expect("nonempty matrix");
                let Some((i, aij)) = a.sample_col_entry(j, 1, rng) else { break 'yb };
                let d = view.value(Block::X, j) - view.reference(Block::X, j);
                if d != 0.0 {
                    out.y.push((i, -aij.signum() * d * s.sum_col_l1_sq / a.col_l1()[j]));
                }
            }
            G::L2L2Dynamic => {
                let mode = SampleMode::CenteredSquare(Weighting::Plain);
                let mass = view.mass(Block::X, mode);
                if mass > 0.0 {
                    let Some(j) = sample_mass(view, Block::X, mode, rng)? else { break 'yb };
                    let Some((i, aij)) = a.sample_col_entry(j, 1, rng) else { break 'yb };
                    let d = view.value(Block::X, j) - view.reference(Block::X, j);
                    if d != 0.0 {
                        out.y.push((i, -aij.signum() * mass * a.col_l1()[j] / d));
                    }
                }
            }
        }
    }
    out.touched = 6;
    Ok(())
}

/// Variance-reduced coordinate estimate around g(w0).
pub fn estimate_vr(
    kind: EstimatorKind,
    a: &SparseMatrix,
    view: &mut dyn IterateView,
    rng: &mut dyn RngCore,
) -> Result<GradEstimate> {
    let mut out = GradEstimate::new(Base::Reference);
    estimate_vr_into(kind, a, view, rng, &mut out)?;
    Ok(out)
}

/// Row-column estimate around g(w0); writes into `out`.
pub fn estimate_rowcol_vr_into(
    kind: EstimatorKind,
    a: &SparseMatrix,
    view: &mut dyn IterateView,
    rng: &mut dyn RngCore,
    out: &mut GradEstimate,
) -> Result<()> {
    if kind.family != Family::VrRowCol {
        return Err(Error::Config(format!("{kind} is not a row-column estimator")));
    }
    check_dims(a, kind)?;
    out.reset(Base::Reference);
    let s = a.stats();
    use EstGeometry as G;
    // x block: a_i (y_i - y0_i) / p_i
    let (i, pi) = match kind.geometry {
        G::L2L2Oblivious => {
            let (i, _, _) = a.sample_entry_sq(rng).expect("nonempty matrix");
            let r2 = a.row_l2()[i];
            (i, r2 * r2 / (s.frob * s.frob))
        }
        _ => {
            let i = mixture_sample(view, Block::Y, rng)?;
            (i, (view.value(Block::Y, i) + 2.0 * view.reference(Block::Y, i)) / 3.0)
        }
    };
    let d = view.value(Block::Y, i) - view.reference(Block::Y, i);
    if d != 0.0 {
        let (cols, vals) = a.row(i);
        out.x.extend(cols.iter().zip(vals).map(|(&j, &v)| (j, v * d / pi)));
    }
    // y block: -a_:j (x_j - x0_j) / q_j
    let jq = match kind.geometry {
        G::L2L2Oblivious => {
            let (_, j, _) = a.sample_entry_sq(rng).expect("nonempty matrix");
            let c2 = a.col_l2()[j];
            Some((j, c2 * c2 / (s.frob * s.frob)))
        }
        G::L1L1 => {
            let j = mixture_sample(view, Block::X, rng)?;
            Some((j, (view.value(Block::X, j) + 2.0 * view.reference(Block::X, j)) / 3.0))
        }
        _ => {
            let mode = SampleMode::CenteredSquare(Weighting::Plain);
            let mass = view.mass(Block::X, mode);
            if mass > 0.0 {
                let j = view.sample(Block::X, mode, rng)?;
                let d = view.value(Block::X, j) - view.reference(Block::X, j);
                Some((j, d * d / mass))
            } else {
                None
            }
        }
    };
    if let Some((j, qj)) = jq {
        let d = view.value(Block::X, j) - view.reference(Block::X, j);
        if d != 0.0 && qj > 0.0 {
            let (rows, vals) = a.col(j);
            out.y.extend(rows.iter().zip(vals).map(|(&i, &v)| (i, -v * d / qj)));
        }
    }
    out.touched = 4 + (out.x.len() + out.y.len()) as u64;
    Ok(())
}

/// Row-column estimate around g(w0).
pub fn estimate_rowcol_vr(
    kind: EstimatorKind,
    a: &SparseMatrix,
    view: &mut dyn IterateView,
    rng: &mut dyn RngCore,
) -> Result<GradEstimate> {
    let mut out = GradEstimate::new(Base::Reference);
    estimate_rowcol_vr_into(kind, a, view, rng, &mut out)?;
    Ok(out)
}

/// Draws an estimate of the given family.
pub fn estimate_into(
    kind: EstimatorKind,
    a: &SparseMatrix,
    view: &mut dyn IterateView,
    rng: &mut dyn RngCore,
    out: &mut GradEstimate,
) -> Result<()> {
    match kind.family {
        Family::SublinearCoord => estimate_sublinear_into(kind, a, view, rng, out),
        Family::VrCoord => estimate_vr_into(kind, a, view, rng, out),
        Family::VrRowCol => estimate_rowcol_vr_into(kind, a, view, rng, out),
    }
}

fn centered(z: &[f64], w0: Option<&[f64]>, k: usize) -> f64 {
    z[k] - w0.map_or(0.0, |w| w[k])
}

fn weighted_mass(a: &SparseMatrix, z: &[f64], w0: Option<&[f64]>, w: Weighting) -> f64 {
    (0..z.len()).map(|k| weight(a, w, k) * centered(z, w0, k).powi(2)).sum()
}

/// Exact sampling probabilities (p, q) used by an estimator.
///
/// For the coordinate families p is the probability of the pair (i, j) in the x-block
/// draw and q the probability of (i, j) in the y-block draw. For the row-column family
/// p is the probability of row i and q the probability of column j.
pub fn prob_eval(
    kind: EstimatorKind,
    a: &SparseMatrix,
    z: &Point,
    w0: Option<&Point>,
    i: usize,
    j: usize,
) -> Result<(f64, f64)> {
    if i >= a.rows() || j >= a.cols() {
        return Err(Error::Index(format!("({i}, {j}) outside {}x{}", a.rows(), a.cols())));
    }
    let needs_ref = kind.family != Family::SublinearCoord;
    let w0 = match (needs_ref, w0) {
        (true, None) => return Err(Error::Config("variance-reduced probabilities need a reference point".into())),
        (true, Some(w)) => Some(w),
        (false, _) => None,
    };
    let s = a.stats();
    let aij = a.entry(i, j)?;
    let abs = aij.abs();
    let sq = aij * aij;
    let r1 = a.row_l1()[i];
    let c1 = a.col_l1()[j];
    let r2 = a.row_l2()[i].powi(2);
    let c2 = a.col_l2()[j].powi(2);
    let wy = w0.map(|w| w.y.as_slice());
    let wx = w0.map(|w| w.x.as_slice());
    let mix = |v: &[f64], r: Option<&[f64]>, k: usize| (v[k] + 2.0 * r.map_or(0.0, |r| r[k])) / 3.0;
    let nz = if aij != 0.0 { 1.0 } else { 0.0 };
    use EstGeometry as G;
    let out = match kind.family {
        Family::SublinearCoord => {
            let p = match kind.geometry {
                G::L1L1 => z.y[i] * sq / r2,
                G::L2L1v1 | G::L2L1v2 | G::L2L1v3 => z.y[i] * abs / r1,
                G::L2L2Oblivious => r1 * r1 / s.sum_row_l1_sq * abs / r1,
                G::L2L2Dynamic => {
                    let m = weighted_mass(a, &z.y, None, Weighting::Plain);
                    if m > 0.0 {
                        z.y[i].powi(2) / m * abs / r1
                    } else {
                        0.0
                    }
                }
            };
            let q = match kind.geometry {
                G::L1L1 => z.x[j] * sq / c2,
                G::L2L1v1 => sq / (s.frob * s.frob),
                G::L2L1v2 => {
                    let m = weighted_mass(a, &z.x, None, Weighting::ColNnz);
                    if m > 0.0 {
                        z.x[j].powi(2) * nz / m
                    } else {
                        0.0
                    }
                }
                G::L2L1v3 => {
                    let m = weighted_mass(a, &z.x, None, Weighting::ColL1);
                    if m > 0.0 {
                        abs * z.x[j].powi(2) / m
                    } else {
                        0.0
                    }
                }
                G::L2L2Oblivious => c1 * c1 / s.sum_col_l1_sq * abs / c1,
                G::L2L2Dynamic => {
                    let m = weighted_mass(a, &z.x, None, Weighting::Plain);
                    if m > 0.0 {
                        z.x[j].powi(2) / m * abs / c1
                    } else {
                        0.0
                    }
                }
            };
            (p, q)
        }
        Family::VrCoord => {
            let p = match kind.geometry {
                G::L1L1 => mix(&z.y, wy, i) * sq / r2,
                G::L2L1v1 | G::L2L1v2 | G::L2L1v3 => mix(&z.y, wy, i) * abs / r1,
                G::L2L2Oblivious => abs * r1 / s.sum_row_l1_sq,
                G::L2L2Dynamic => {
                    let m = weighted_mass(a, &z.y, wy, Weighting::Plain);
                    if m > 0.0 {
                        centered(&z.y, wy, i).powi(2) / m * abs / r1
                    } else {
                        0.0
                    }
                }
            };
            let q = match kind.geometry {
                G::L1L1 => mix(&z.x, wx, j) * sq / c2,
                G::L2L1v1 => sq / (s.frob * s.frob),
                G::L2L1v2 => {
                    let m = weighted_mass(a, &z.x, wx, Weighting::ColNnz);
                    if m > 0.0 {
                        centered(&z.x, wx, j).powi(2) * nz / m
                    } else {
                        0.0
                    }
                }
                G::L2L1v3 => {
                    let m = weighted_mass(a, &z.x, wx, Weighting::ColL1);
                    if m > 0.0 {
                        abs * centered(&z.x, wx, j).powi(2) / m
                    } else {
                        0.0
                    }
                }
                G::L2L2Oblivious => abs * c1 / s.sum_col_l1_sq,
                G::L2L2Dynamic => {
                    let m = weighted_mass(a, &z.x, wx, Weighting::Plain);
                    if m > 0.0 {
                        centered(&z.x, wx, j).powi(2) / m * abs / c1
                    } else {
                        0.0
                    }
                }
            };
            (p, q)
        }
        Family::VrRowCol => {
            let f2 = s.frob * s.frob;
            let p = match kind.geometry {
                G::L2L2Oblivious => r2 / f2,
                _ => mix(&z.y, wy, i),
            };
            let q = match kind.geometry {
                G::L2L2Oblivious => c2 / f2,
                G::L1L1 => mix(&z.x, wx, j),
                _ => {
                    let m = weighted_mass(a, &z.x, wx, Weighting::Plain);
                    if m > 0.0 {
                        centered(&z.x, wx, j).powi(2) / m
                    } else {
                        0.0
                    }
                }
            };
            (p, q)
        }
    };
    Ok(out)
}

/// [`IterateView`] over explicit dense vectors; sampling by linear scans.
#[derive(Debug, Clone)]
pub struct DenseView<'a> {
    a: &'a SparseMatrix,
    z: &'a Point,
    w0: Option<&'a Point>,
}

impl<'a> DenseView<'a> {
    pub fn new(a: &'a SparseMatrix, z: &'a Point, w0: Option<&'a Point>) -> Self {
        DenseView { a, z, w0 }
    }

    fn block(&self, block: Block) -> (&'a [f64], Option<&'a [f64]>) {
        match block {
            Block::X => (&self.z.x, self.w0.map(|w| w.x.as_slice())),
            Block::Y => (&self.z.y, self.w0.map(|w| w.y.as_slice())),
        }
    }

    fn weights(&self, block: Block, mode: SampleMode) -> Vec<f64> {
        let (z, w0) = self.block(block);
        let wt = |w: Weighting, k: usize| if block == Block::X { weight(self.a, w, k) } else { 1.0 };
        (0..z.len())
            .map(|k| match mode {
                SampleMode::Iterate => z[k].max(0.0),
                SampleMode::Reference => w0.map_or(0.0, |w| w[k].max(0.0)),
                SampleMode::Square(w) => wt(w, k) * z[k] * z[k],
                SampleMode::CenteredSquare(w) => wt(w, k) * centered(z, w0, k).powi(2),
            })
            .collect()
    }
}

impl IterateView for DenseView<'_> {
    fn value(&mut self, block: Block, k: usize) -> f64 {
        self.block(block).0[k]
    }

    fn reference(&mut self, block: Block, k: usize) -> f64 {
        self.block(block).1.map_or(0.0, |w| w[k])
    }

    fn mass(&mut self, block: Block, mode: SampleMode) -> f64 {
        match mode {
            SampleMode::Iterate | SampleMode::Reference => 1.0,
            _ => self.weights(block, mode).iter().sum(),
        }
    }

    fn sample(&mut self, block: Block, mode: SampleMode, rng: &mut dyn RngCore) -> Result<usize> {
        let w = self.weights(block, mode);
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Numeric("sampling distribution has zero mass".into()));
        }
        let mut t = rng.random::<f64>() * total;
        let mut last = 0;
        for (k, &v) in w.iter().enumerate() {
            if v > 0.0 {
                if t < v {
                    return Ok(k);
                }
                t -= v;
                last = k;
            }
        }
        Ok(last)
    }
}

/// The global samplers an estimator kind draws from the matrix directly.
pub fn global_samplers(kind: EstimatorKind) -> Vec<GlobalKind> {
    use EstGeometry as G;
    match (kind.family, kind.geometry) {
        (Family::VrRowCol, G::L2L2Oblivious) => vec![GlobalKind::EntrySq],
        (Family::VrRowCol, _) => vec![],
        (_, G::L2L2Oblivious) => vec![GlobalKind::RowL1Sq, GlobalKind::ColL1Sq],
        (_, G::L2L1v1) => vec![GlobalKind::EntrySq],
        _ => vec![],
    }
}
