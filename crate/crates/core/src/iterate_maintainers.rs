//! Implicit iterate representations with cheap scaling, sparse and dense updates,
//! running sums and sampling.
//!
//! [`Im1`] keeps a nonnegative vector as x = xi * u and samples coordinates
//! proportionally to x_j. [`Im2`] keeps x = a + e with a fixed anchor a (zero when
//! absent) and e = zeta * a + xi_u * u + xi_v * v for a fixed dense direction v; it
//! samples proportionally to w_j x_j^2 or w_j e_j^2 for optional nonnegative weights
//! w. Sums over subtrees are stored in a static complete binary tree, each node being
//! recomputed from its children on update.
//!
//! Both structures re-baseline themselves (fold the scalar coefficients into the
//! stored vectors) after a bounded number of sparse updates or when the maintained
//! scale leaves a polynomial range, which keeps the floating point error bounded.

use rand::Rng;

use crate::error::{Error, Result};

/// Static complete binary tree of K-component sums.
#[derive(Debug, Clone)]
pub(crate) struct SumTree<const K: usize> {
    size: usize,
    nodes: Vec<[f64; K]>,
}

impl<const K: usize> SumTree<K> {
    pub(crate) fn new(leaves: &[[f64; K]]) -> Self {
        let size = leaves.len().next_power_of_two().max(1);
        let mut nodes = vec![[0.0; K]; 2 * size];
        nodes[size..size + leaves.len()].copy_from_slice(leaves);
        let mut t = SumTree { size, nodes };
        for k in (1..size).rev() {
            t.pull(k);
        }
        t
    }

    #[inline]
    fn pull(&mut self, k: usize) {
        let (l, r) = (self.nodes[2 * k], self.nodes[2 * k + 1]);
        let mut s = [0.0; K];
        for q in 0..K {
            s[q] = l[q] + r[q];
        }
        self.nodes[k] = s;
    }

    /// Replaces leaf j and recomputes its ancestors; returns the number of nodes touched.
    pub(crate) fn set(&mut self, j: usize, val: [f64; K]) -> usize {
        let mut k = self.size + j;
        self.nodes[k] = val;
        let mut touched = 1;
        while k > 1 {
            k /= 2;
            self.pull(k);
            touched += 1;
        }
        touched
    }

    pub(crate) fn root(&self) -> &[f64; K] {
        &self.nodes[1]
    }

    /// Sum of component q over leaves [0, end).
    pub(crate) fn prefix(&self, end: usize, q: usize) -> f64 {
        if end == 0 {
            return 0.0;
        }
        if end >= self.size {
            return self.nodes[1][q];
        }
        // walk from the root towards leaf `end`, adding left siblings
        let mut s = 0.0;
        let mut k = 1;
        let mut lo = 0;
        let mut width = self.size;
        while width > 1 {
            width /= 2;
            if end >= lo + width {
                s += self.nodes[2 * k][q];
                lo += width;
                k = 2 * k + 1;
            } else {
                k *= 2;
            }
        }
        s
    }

    /// Leaf index whose cumulative range of component q contains `target`.
    pub(crate) fn find_prefix(&self, mut target: f64, q: usize) -> usize {
        let mut k = 1;
        while k < self.size {
            let l = self.nodes[2 * k][q];
            if target < l || self.nodes[2 * k + 1][q] <= 0.0 {
                k *= 2;
            } else {
                target -= l;
                k = 2 * k + 1;
            }
        }
        k - self.size
    }

    /// Descends from the root choosing children proportionally to `mass(node)`.
    /// Negative masses from rounding are treated as zero.
    pub(crate) fn descend<R: Rng + ?Sized, F: Fn(&[f64; K]) -> f64>(
        &self,
        len: usize,
        mass: F,
        rng: &mut R,
    ) -> Option<usize> {
        if mass(self.root()) <= 0.0 {
            return None;
        }
        let mut k = 1;
        while k < self.size {
            let ml = mass(&self.nodes[2 * k]).max(0.0);
            let mr = mass(&self.nodes[2 * k + 1]).max(0.0);
            let tot = ml + mr;
            if tot <= 0.0 {
                return None;
            }
            let u: f64 = rng.random::<f64>() * tot;
            k = if u < ml || mr == 0.0 { 2 * k } else { 2 * k + 1 };
        }
        let j = k - self.size;
        if j < len {
            Some(j)
        } else {
            None
        }
    }
}

/// Stability parameters shared by the maintainers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityConfig {
    /// Polynomial range factor: restarts happen when the maintained norm leaves
    /// [nu0 / range, nu0 * range].
    pub range: f64,
    /// Relative floor used when re-baselining nonnegative iterates (0 disables).
    pub truncation: f64,
}

impl StabilityConfig {
    /// The default uses the eighth power of the problem size for both quantities.
    pub fn for_size(total_dim: usize) -> Self {
        let nm = (total_dim.max(2)) as f64;
        StabilityConfig { range: nm.powi(8), truncation: nm.powi(-8) }
    }
}

/// Maintainer of a nonnegative vector x = xi * u with running sum s = u' + sigma * u.
#[derive(Debug, Clone)]
pub struct Im1 {
    u: Vec<f64>,
    uprime: Vec<f64>,
    xi: f64,
    sigma: f64,
    tree: Option<SumTree<1>>,
    sum_u: f64,
    nu0: f64,
    ops: usize,
    restart_every: usize,
    stab: StabilityConfig,
    simplex_mode: bool,
    touched: u64,
    restarts: u64,
    truncated_mass: f64,
}

impl Im1 {
    /// Initializes at x0 (entrywise nonnegative). With `sampling` the structure keeps a
    /// tree and supports [`Im1::sample`]; otherwise sparse updates are O(1).
    pub fn new(x0: &[f64], sampling: bool, stab: StabilityConfig) -> Result<Self> {
        if x0.is_empty() {
            return Err(Error::Input("maintainer dimension must be positive".into()));
        }
        if x0.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Input("IM1 requires a finite nonnegative initial point".into()));
        }
        let n = x0.len();
        let mut s = Im1 {
            u: x0.to_vec(),
            uprime: vec![0.0; n],
            xi: 1.0,
            sigma: 0.0,
            tree: None,
            sum_u: 0.0,
            nu0: 0.0,
            ops: 0,
            restart_every: n.div_ceil(2).max(1),
            stab,
            simplex_mode: false,
            touched: n as u64,
            restarts: 0,
            truncated_mass: 0.0,
        };
        if sampling {
            s.tree = Some(SumTree::new(&s.u.iter().map(|&v| [v]).collect::<Vec<_>>()));
        }
        s.refresh_sums();
        Ok(s)
    }

    /// Enables flooring of tiny coordinates at re-baseline time (simplex iterates).
    pub fn set_simplex_mode(&mut self, on: bool) {
        self.simplex_mode = on;
    }

    fn refresh_sums(&mut self) {
        self.sum_u = match &self.tree {
            Some(t) => t.root()[0],
            None => self.u.iter().sum(),
        };
        self.nu0 = self.xi * self.sum_u;
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// x <- c * x.
    pub fn scale(&mut self, c: f64) -> Result<()> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::Numeric(format!("IM1 scale factor must be finite and nonnegative, got {c}")));
        }
        if c == 0.0 {
            self.fold();
            for v in self.u.iter_mut() {
                *v = 0.0;
            }
            self.rebuild();
            return Ok(());
        }
        self.xi *= c;
        self.check_range();
        Ok(())
    }

    /// x_j <- x_j + c.
    pub fn add_sparse(&mut self, j: usize, c: f64) -> Result<()> {
        self.check_index(j)?;
        let cur = self.xi * self.u[j];
        if cur + c < -1e-12 * cur.abs().max(1e-300) {
            return Err(Error::Numeric(format!("IM1 update would make coordinate {j} negative")));
        }
        let du = c / self.xi;
        let new = (self.u[j] + du).max(0.0);
        let du = new - self.u[j];
        self.u[j] = new;
        self.uprime[j] -= self.sigma * du;
        self.touched += 1;
        match &mut self.tree {
            Some(t) => {
                t.set(j, [new]);
                self.sum_u = t.root()[0];
            }
            None => self.sum_u += du,
        }
        self.ops += 1;
        if self.ops >= self.restart_every {
            self.restart();
        } else {
            self.check_range();
        }
        Ok(())
    }

    /// x_j <- x_j * factor, a convenience for multiplicative updates.
    pub fn mult_coord(&mut self, j: usize, factor: f64) -> Result<()> {
        let cur = self.get(j)?;
        self.add_sparse(j, cur * (factor - 1.0))
    }

    /// s <- s + gamma * x.
    pub fn update_sum(&mut self, gamma: f64) {
        self.sigma += gamma * self.xi;
    }

    pub fn get(&self, j: usize) -> Result<f64> {
        self.check_index(j)?;
        Ok(self.xi * self.u[j])
    }

    /// Unchecked coordinate read used on hot paths.
    #[inline]
    pub fn value(&self, j: usize) -> f64 {
        self.xi * self.u[j]
    }

    pub fn get_sum(&self, j: usize) -> Result<f64> {
        self.check_index(j)?;
        Ok(self.uprime[j] + self.sigma * self.u[j])
    }

    /// ||x||_1.
    pub fn norm(&self) -> f64 {
        self.xi * self.sum_u
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.u.iter().map(|v| self.xi * v).collect()
    }

    pub fn sum_vec(&self) -> Vec<f64> {
        self.u.iter().zip(&self.uprime).map(|(u, up)| up + self.sigma * u).collect()
    }

    /// Draws j with probability x_j / ||x||_1.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize> {
        let t = self.tree.as_ref().ok_or_else(|| Error::Config("IM1 built without sampling support".into()))?;
        let j = t
            .descend(self.u.len(), |s| s[0], rng)
            .ok_or_else(|| Error::Numeric("IM1 sampling from zero mass".into()))?;
        self.touched += 1;
        Ok(j)
    }

    pub fn touched(&self) -> u64 {
        self.touched
    }

    pub fn restarts(&self) -> u64 {
        self.restarts
    }

    /// Total l1 mass added by flooring at re-baselines, relative to the norm at the time.
    pub fn truncated_mass(&self) -> f64 {
        self.truncated_mass
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j >= self.u.len() {
            return Err(Error::Index(format!("coordinate {j} out of range {}", self.u.len())));
        }
        Ok(())
    }

    fn check_range(&mut self) {
        let nu = self.norm();
        let r = self.stab.range;
        let bad_xi = !(self.xi > 1.0 / r && self.xi < r);
        let bad_nu = self.nu0 > 0.0 && !(nu > self.nu0 / r && nu < self.nu0 * r);
        if bad_xi || bad_nu {
            self.restart();
        }
    }

    fn fold(&mut self) {
        for (u, up) in self.u.iter_mut().zip(self.uprime.iter_mut()) {
            *up += self.sigma * *u;
            *u *= self.xi;
        }
        self.sigma = 0.0;
        self.xi = 1.0;
    }

    fn rebuild(&mut self) {
        if let Some(t) = &mut self.tree {
            *t = SumTree::new(&self.u.iter().map(|&v| [v]).collect::<Vec<_>>());
        }
        self.ops = 0;
        self.touched += self.u.len() as u64;
        self.refresh_sums();
    }

    /// Folds the scalars into the stored vectors and, in simplex mode, floors tiny
    /// coordinates at a fixed fraction of the largest one.
    pub fn restart(&mut self) {
        self.fold();
        if self.simplex_mode && self.stab.truncation > 0.0 {
            let mx = self.u.iter().cloned().fold(0.0, f64::max);
            let floor = mx * self.stab.truncation;
            let total: f64 = self.u.iter().sum();
            let mut added = 0.0;
            for v in self.u.iter_mut() {
                if *v < floor {
                    added += floor - *v;
                    *v = floor;
                }
            }
            if total > 0.0 {
                self.truncated_mass += added / total;
            }
        }
        self.restarts += 1;
        self.rebuild();
    }
}

/// Gram-matrix slots over the basis (a, u, v).
const AA: usize = 0;
const AU: usize = 1;
const AV: usize = 2;
const UU: usize = 3;
const UV: usize = 4;
const VV: usize = 5;

#[inline]
fn quad(g: &[f64; 6], ca: f64, cu: f64, cv: f64) -> f64 {
    ca * ca * g[AA] + cu * cu * g[UU] + cv * cv * g[VV] + 2.0 * (ca * cu * g[AU] + ca * cv * g[AV] + cu * cv * g[UV])
}

#[inline]
fn leaf_gram(w: f64, a: f64, u: f64, v: f64) -> [f64; 6] {
    [w * a * a, w * a * u, w * a * v, w * u * u, w * u * v, w * v * v]
}

/// Maintainer of x = a + e, e = zeta * a + xi_u * u + xi_v * v, with optional weights
/// for the norm and the sampler. Covers the plain, weighted and centered variants.
#[derive(Debug, Clone)]
pub struct Im2 {
    n: usize,
    a: Option<Vec<f64>>,
    v: Option<Vec<f64>>,
    w: Option<Vec<f64>>,
    u: Vec<f64>,
    zeta: f64,
    xi_u: f64,
    xi_v: f64,
    uprime: Vec<f64>,
    sig_a: f64,
    sig_u: f64,
    sig_v: f64,
    tree: Option<SumTree<6>>,
    /// Weighted Gram sums (equal to the tree root when a tree exists).
    gram_w: [f64; 6],
    /// Unweighted Gram sums, kept only when weights are present.
    gram_plain: [f64; 6],
    nu0: f64,
    ops: usize,
    restart_every: usize,
    stab: StabilityConfig,
    touched: u64,
    restarts: u64,
}

impl Im2 {
    /// Initializes at x0. `v` is the fixed dense direction used by [`Im2::add_dense`],
    /// `w` nonnegative weights for norms and sampling, `anchor` the reference point
    /// used by centered queries. With `sampling` a tree supports the samplers.
    pub fn new(
        x0: &[f64],
        v: Option<&[f64]>,
        w: Option<&[f64]>,
        anchor: Option<&[f64]>,
        sampling: bool,
        stab: StabilityConfig,
    ) -> Result<Self> {
        let n = x0.len();
        if n == 0 {
            return Err(Error::Input("maintainer dimension must be positive".into()));
        }
        for (name, vec) in [("dense direction", v), ("weights", w), ("anchor", anchor)] {
            if let Some(t) = vec {
                if t.len() != n {
                    return Err(Error::Input(format!("{name} has length {} instead of {n}", t.len())));
                }
                if t.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Input(format!("{name} contains a nonfinite value")));
                }
            }
        }
        if let Some(w) = w {
            if w.iter().any(|&t| t < 0.0) {
                return Err(Error::Input("weights must be nonnegative".into()));
            }
        }
        if x0.iter().any(|t| !t.is_finite()) {
            return Err(Error::Input("initial point contains a nonfinite value".into()));
        }
        let u: Vec<f64> = match anchor {
            Some(a) => x0.iter().zip(a).map(|(x, a)| x - a).collect(),
            None => x0.to_vec(),
        };
        let mut s = Im2 {
            n,
            a: anchor.map(|t| t.to_vec()),
            v: v.map(|t| t.to_vec()),
            w: w.map(|t| t.to_vec()),
            u,
            zeta: 0.0,
            xi_u: 1.0,
            xi_v: 0.0,
            uprime: vec![0.0; n],
            sig_a: 0.0,
            sig_u: 0.0,
            sig_v: 0.0,
            tree: None,
            gram_w: [0.0; 6],
            gram_plain: [0.0; 6],
            nu0: 0.0,
            ops: 0,
            restart_every: n.div_ceil(2).max(1),
            stab,
            touched: 0,
            restarts: 0,
        };
        if sampling {
            s.tree = Some(SumTree::new(&[[0.0; 6]]));
        }
        s.rebuild();
        Ok(s)
    }

    #[inline]
    fn a_at(&self, j: usize) -> f64 {
        self.a.as_ref().map_or(0.0, |a| a[j])
    }

    #[inline]
    fn v_at(&self, j: usize) -> f64 {
        self.v.as_ref().map_or(0.0, |v| v[j])
    }

    #[inline]
    fn w_at(&self, j: usize) -> f64 {
        self.w.as_ref().map_or(1.0, |w| w[j])
    }

    fn rebuild(&mut self) {
        let mut gw = [0.0; 6];
        let mut gp = [0.0; 6];
        let mut leaves = Vec::with_capacity(if self.tree.is_some() { self.n } else { 0 });
        for j in 0..self.n {
            let (a, u, v, w) = (self.a_at(j), self.u[j], self.v_at(j), self.w_at(j));
            let lw = leaf_gram(w, a, u, v);
            let lp = leaf_gram(1.0, a, u, v);
            for q in 0..6 {
                gw[q] += lw[q];
                gp[q] += lp[q];
            }
            if self.tree.is_some() {
                leaves.push(lw);
            }
        }
        if let Some(t) = &mut self.tree {
            *t = SumTree::new(&leaves);
            gw = *t.root();
        }
        self.gram_w = gw;
        self.gram_plain = gp;
        self.ops = 0;
        self.touched += self.n as u64;
        self.nu0 = self.norm();
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn plain_gram(&self) -> &[f64; 6] {
        if self.w.is_some() {
            &self.gram_plain
        } else {
            &self.gram_w
        }
    }

    /// x <- c * x (scaling about the origin).
    pub fn scale(&mut self, c: f64) -> Result<()> {
        if !c.is_finite() {
            return Err(Error::Numeric(format!("nonfinite scale factor {c}")));
        }
        self.zeta = c * self.zeta + (c - 1.0);
        self.xi_u *= c;
        self.xi_v *= c;
        self.after_scale();
        Ok(())
    }

    /// x <- a + c * (x - a) (scaling about the anchor).
    pub fn scale_about_anchor(&mut self, c: f64) -> Result<()> {
        if !c.is_finite() {
            return Err(Error::Numeric(format!("nonfinite scale factor {c}")));
        }
        self.zeta *= c;
        self.xi_u *= c;
        self.xi_v *= c;
        self.after_scale();
        Ok(())
    }

    fn after_scale(&mut self) {
        if self.xi_u == 0.0 {
            self.restart();
        } else {
            self.check_range();
        }
    }

    /// x <- x + c * v.
    pub fn add_dense(&mut self, c: f64) -> Result<()> {
        if self.v.is_none() {
            return Err(Error::Config("maintainer built without a dense direction".into()));
        }
        if !c.is_finite() {
            return Err(Error::Numeric(format!("nonfinite dense coefficient {c}")));
        }
        self.xi_v += c;
        self.check_range();
        Ok(())
    }

    /// x_j <- x_j + c.
    pub fn add_sparse(&mut self, j: usize, c: f64) -> Result<()> {
        self.check_index(j)?;
        if !c.is_finite() {
            return Err(Error::Numeric(format!("nonfinite sparse update {c}")));
        }
        let du = c / self.xi_u;
        let old = self.u[j];
        let new = old + du;
        self.u[j] = new;
        self.uprime[j] -= self.sig_u * du;
        let (a, v, w) = (self.a_at(j), self.v_at(j), self.w_at(j));
        self.touched += 1;
        match &mut self.tree {
            Some(t) => {
                t.set(j, leaf_gram(w, a, new, v));
                self.gram_w = *t.root();
            }
            None => {
                self.gram_w[AU] += w * a * du;
                self.gram_w[UU] += w * (new * new - old * old);
                self.gram_w[UV] += w * v * du;
            }
        }
        if self.w.is_some() {
            self.gram_plain[AU] += a * du;
            self.gram_plain[UU] += new * new - old * old;
            self.gram_plain[UV] += v * du;
        }
        self.ops += 1;
        if self.ops >= self.restart_every {
            self.restart();
        } else {
            self.check_range();
        }
        Ok(())
    }

    /// s <- s + gamma * x.
    pub fn update_sum(&mut self, gamma: f64) {
        if self.a.is_some() {
            self.sig_a += gamma * (1.0 + self.zeta);
        }
        self.sig_u += gamma * self.xi_u;
        self.sig_v += gamma * self.xi_v;
    }

    pub fn get(&self, j: usize) -> Result<f64> {
        self.check_index(j)?;
        Ok(self.value(j))
    }

    /// Unchecked coordinate read.
    #[inline]
    pub fn value(&self, j: usize) -> f64 {
        self.a_at(j) + self.centered_value(j)
    }

    /// Coordinate of x - a.
    #[inline]
    pub fn centered_value(&self, j: usize) -> f64 {
        self.zeta * self.a_at(j) + self.xi_u * self.u[j] + self.xi_v * self.v_at(j)
    }

    pub fn get_sum(&self, j: usize) -> Result<f64> {
        self.check_index(j)?;
        Ok(self.uprime[j] + self.sig_a * self.a_at(j) + self.sig_u * self.u[j] + self.sig_v * self.v_at(j))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.value(j)).collect()
    }

    pub fn sum_vec(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.get_sum(j).expect("in range")).collect()
    }

    fn x_coeffs(&self) -> (f64, f64, f64) {
        (if self.a.is_some() { 1.0 + self.zeta } else { 0.0 }, self.xi_u, self.xi_v)
    }

    fn e_coeffs(&self) -> (f64, f64, f64) {
        (if self.a.is_some() { self.zeta } else { 0.0 }, self.xi_u, self.xi_v)
    }

    /// Weighted norm ||x||_w.
    pub fn norm(&self) -> f64 {
        let (ca, cu, cv) = self.x_coeffs();
        quad(&self.gram_w, ca, cu, cv).max(0.0).sqrt()
    }

    /// Unweighted Euclidean norm ||x||_2.
    pub fn norm_plain(&self) -> f64 {
        let (ca, cu, cv) = self.x_coeffs();
        quad(self.plain_gram(), ca, cu, cv).max(0.0).sqrt()
    }

    /// ||x - a||_w^2.
    pub fn centered_normsq(&self) -> f64 {
        let (ca, cu, cv) = self.e_coeffs();
        quad(&self.gram_w, ca, cu, cv).max(0.0)
    }

    /// ||x - a||_2^2 without weights.
    pub fn centered_normsq_plain(&self) -> f64 {
        let (ca, cu, cv) = self.e_coeffs();
        quad(self.plain_gram(), ca, cu, cv).max(0.0)
    }

    /// <x, v>_w.
    pub fn inner_v(&self) -> f64 {
        let (ca, cu, cv) = self.x_coeffs();
        ca * self.gram_w[AV] + cu * self.gram_w[UV] + cv * self.gram_w[VV]
    }

    /// Draws j with probability w_j x_j^2 / ||x||_w^2.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize> {
        let (ca, cu, cv) = self.x_coeffs();
        self.sample_with(ca, cu, cv, rng)
    }

    /// Draws j with probability w_j (x - a)_j^2 / ||x - a||_w^2.
    pub fn sample_centered<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize> {
        let (ca, cu, cv) = self.e_coeffs();
        self.sample_with(ca, cu, cv, rng)
    }

    fn sample_with<R: Rng + ?Sized>(&mut self, ca: f64, cu: f64, cv: f64, rng: &mut R) -> Result<usize> {
        let t = self.tree.as_ref().ok_or_else(|| Error::Config("maintainer built without sampling support".into()))?;
        let j = t
            .descend(self.n, |g| quad(g, ca, cu, cv), rng)
            .ok_or_else(|| Error::Numeric("sampling from zero mass".into()))?;
        self.touched += 1;
        Ok(j)
    }

    pub fn touched(&self) -> u64 {
        self.touched
    }

    pub fn restarts(&self) -> u64 {
        self.restarts
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j >= self.n {
            return Err(Error::Index(format!("coordinate {j} out of range {}", self.n)));
        }
        Ok(())
    }

    fn check_range(&mut self) {
        let r = self.stab.range;
        let big = self.xi_u.abs().max(self.xi_v.abs()).max(self.zeta.abs());
        let bad_coef = !(self.xi_u.abs() > 1.0 / r) || big > r;
        let bad_nu = if self.nu0 > 0.0 {
            let nu = self.norm();
            !(nu > self.nu0 / r && nu < self.nu0 * r)
        } else {
            false
        };
        if bad_coef || bad_nu {
            self.restart();
        }
    }

    /// Re-baselines: u <- x - a, the running sum moves into u'.
    pub fn restart(&mut self) {
        for j in 0..self.n {
            let e = self.centered_value(j);
            let s = self.uprime[j] + self.sig_a * self.a_at(j) + self.sig_u * self.u[j] + self.sig_v * self.v_at(j);
            self.u[j] = e;
            self.uprime[j] = s;
        }
        self.zeta = 0.0;
        self.xi_u = 1.0;
        self.xi_v = 0.0;
        self.sig_a = 0.0;
        self.sig_u = 0.0;
        self.sig_v = 0.0;
        self.restarts += 1;
        self.rebuild();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stab() -> StabilityConfig {
        StabilityConfig::for_size(10)
    }

    #[test]
    fn im1_examples() {
        let mut m = Im1::new(&[0.5, 0.5], true, stab()).unwrap();
        assert_eq!(m.get(0).unwrap(), 0.5);
        assert_eq!(m.norm(), 1.0);
        m.add_sparse(0, 0.5).unwrap();
        assert_eq!(m.to_vec(), vec![1.0, 0.5]);
        m.scale(2.0 / 3.0).unwrap();
        assert!((m.norm() - 1.0).abs() < 1e-15);
        assert!(Im1::new(&[-1.0], false, stab()).is_err());
        assert!(m.add_sparse(1, -5.0).is_err());
    }

    #[test]
    fn im1_sum() {
        let mut m = Im1::new(&[1.0, 0.0], false, stab()).unwrap();
        m.update_sum(1.0);
        m.update_sum(1.0);
        assert_eq!(m.get_sum(0).unwrap(), 2.0);
        m.scale(0.5).unwrap();
        assert_eq!(m.get(0).unwrap(), 0.5);
    }

    #[test]
    fn im2_examples() {
        let mut m = Im2::new(&[3.0, 4.0], None, None, None, false, stab()).unwrap();
        assert_eq!(m.norm(), 5.0);
        m.add_sparse(0, -3.0).unwrap();
        assert!((m.norm() - 4.0).abs() < 1e-15);
        let mut d = Im2::new(&[0.0, 0.0], Some(&[1.0, 0.0]), None, None, false, stab()).unwrap();
        assert_eq!(d.inner_v(), 0.0);
        assert_eq!(d.norm(), 0.0);
        d.add_dense(2.0).unwrap();
        assert_eq!(d.to_vec(), vec![2.0, 0.0]);
        assert_eq!(d.inner_v(), 2.0);
        assert_eq!(d.norm(), 2.0);
    }

    #[test]
    fn weighted_and_centered() {
        let w = Im2::new(&[1.0, 1.0], None, Some(&[1.0, 4.0]), None, false, stab()).unwrap();
        assert!((w.norm() - 5f64.sqrt()).abs() < 1e-15);
        let c = Im2::new(&[2.0, 2.0], None, Some(&[2.0, 3.0]), Some(&[1.0, 1.0]), true, stab()).unwrap();
        assert!((c.centered_normsq() - 5.0).abs() < 1e-15);
        let mut c2 = Im2::new(&[1.0, 1.0], None, None, Some(&[1.0, 1.0]), true, stab()).unwrap();
        assert_eq!(c2.centered_normsq(), 0.0);
        c2.scale(2.0).unwrap();
        assert!((c2.centered_normsq() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn centered_single_support_sampling() {
        let mut c = Im2::new(&[1.0, 1.0, 1.0], None, None, Some(&[1.0, 1.0, 1.0]), true, stab()).unwrap();
        c.add_sparse(2, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            assert_eq!(c.sample_centered(&mut rng).unwrap(), 2);
        }
        let mut w = Im2::new(&[1.0, 1.0], None, Some(&[1.0, 0.0]), None, true, stab()).unwrap();
        for _ in 0..200 {
            assert_eq!(w.sample(&mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn scale_to_zero_then_update() {
        let mut m = Im2::new(&[1.0, 2.0], None, None, None, true, stab()).unwrap();
        m.scale(0.0).unwrap();
        assert_eq!(m.to_vec(), vec![0.0, 0.0]);
        m.add_sparse(1, 3.0).unwrap();
        assert_eq!(m.to_vec(), vec![0.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(m.sample(&mut rng).unwrap(), 1);
    }
}
