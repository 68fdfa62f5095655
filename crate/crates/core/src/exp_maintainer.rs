//! Maintenance of multiplicative-weights iterates with a fixed dense component.
//!
//! [`Scm`] stores a vector bx (entries in [lambda, 1]) and exponents bg and answers
//! queries about the normalized vector proportional to bx * exp(sigma * bg) for
//! sigma in {0} and [sigma_min, 1]. The range of sigma is split into dyadic buckets.
//! Within a bucket with scale sigma_hat and offset mu, a coordinate has the shifted
//! exponent t = sigma_hat * (bg - mu) <= 0 and its weight is exp(s * t) with
//! s = sigma / sigma_hat in (1, 2]. Coordinates are grouped into bands of unit width
//! in t anchored at their upper end c; inside a band exp(s * t) = exp(s * c) * exp(s * d)
//! with -2 < s * d <= 0, and
//! the second factor is replaced by a fixed-order Taylor polynomial. Each band keeps a
//! tree of moments sum bx * d^q, so norms, coordinates and samples cost O(p) per band
//! or tree node. Coordinates with t <= -R are truncated to t = -R.
//!
//! [`Aem`] keeps the iterate x proportional to exp(delta) under the updates
//! delta <- kappa * delta + v (dense step) and delta_j <- delta_j + g_j (sparse step).
//! Coordinates are partitioned into ranks, each an [`Scm`] of at most 2^k elements
//! sharing a step counter tau, so that a dense step only increments counters and a
//! sparse step deletes the coordinate from its rank and merges small ranks upward.
//!
//! [`DenseExpMaintainer`] implements the same interface with exact O(n) updates and
//! serves as a reference.

use rand::Rng;

use crate::error::{Error, Result};
use crate::iterate_maintainers::SumTree;

/// Width of a Taylor band in shifted-exponent units.
const BAND_WIDTH: f64 = 1.0;

/// Structures with at most this many coordinates are evaluated exactly.
pub const DIRECT_LIMIT: usize = 32;

fn factorials(p: usize) -> Vec<f64> {
    let mut f = vec![1.0; p + 1];
    for q in 1..=p {
        f[q] = f[q - 1] * q as f64;
    }
    f
}

/// Smallest order whose relative Taylor error for exp on [-2 BAND_WIDTH, 0] is below eps.
fn taylor_order(eps: f64) -> usize {
    let h = 2.0 * BAND_WIDTH;
    let mut term = h; // h^{p+1}/(p+1)! for p = 0
    let mut p = 0;
    while h.exp() * term > eps && p < 80 {
        p += 1;
        term *= h / (p + 1) as f64;
    }
    p.max(2)
}

/// Binary tree over a contiguous range storing p+1 moments per node.
#[derive(Debug, Clone)]
struct MomentTree {
    size: usize,
    p1: usize,
    data: Vec<f64>,
}

impl MomentTree {
    /// Builds a tree over `len` leaves; `fill(i, out)` writes the moments of leaf i.
    fn build(p1: usize, len: usize, mut fill: impl FnMut(usize, &mut [f64])) -> Self {
        let size = len.next_power_of_two().max(1);
        let mut data = vec![0.0; 2 * size * p1];
        for i in 0..len {
            fill(i, &mut data[(size + i) * p1..(size + i + 1) * p1]);
        }
        let mut t = MomentTree { size, p1, data };
        for k in (1..size).rev() {
            t.pull(k);
        }
        t
    }

    #[inline]
    fn pull(&mut self, k: usize) {
        let p1 = self.p1;
        let (head, tail) = self.data.split_at_mut(2 * k * p1);
        let dst = &mut head[k * p1..(k + 1) * p1];
        let (l, r) = tail[..2 * p1].split_at(p1);
        for q in 0..p1 {
            dst[q] = l[q] + r[q];
        }
    }

    #[inline]
    fn node(&self, k: usize) -> &[f64] {
        &self.data[k * self.p1..(k + 1) * self.p1]
    }

    fn clear_leaf(&mut self, i: usize) -> usize {
        let mut k = self.size + i;
        let p1 = self.p1;
        for v in &mut self.data[k * p1..(k + 1) * p1] {
            *v = 0.0;
        }
        let mut touched = 1;
        while k > 1 {
            k /= 2;
            self.pull(k);
            touched += 1;
        }
        touched
    }

    /// Picks a leaf with probability proportional to sum_q coef[q] * M[q].
    fn descend<R: Rng + ?Sized>(&self, coef: &[f64], rng: &mut R) -> usize {
        let mass = |k: usize| -> f64 {
            let n = self.node(k);
            let mut s = 0.0;
            for q in 0..self.p1 {
                s += coef[q] * n[q];
            }
            s.max(0.0)
        };
        let mut k = 1;
        while k < self.size {
            let ml = mass(2 * k);
            let mr = mass(2 * k + 1);
            let tot = ml + mr;
            let u: f64 = rng.random::<f64>() * tot;
            k = if (u < ml && ml > 0.0) || mr <= 0.0 { 2 * k } else { 2 * k + 1 };
        }
        k - self.size
    }
}

#[derive(Debug, Clone)]
struct Band {
    /// Sorted positions [start, end) belong to this band.
    start: usize,
    end: usize,
    center: f64,
    tree: MomentTree,
}

#[derive(Debug, Clone)]
struct Bucket {
    sigma_hat: f64,
    mu: f64,
    /// First sorted position covered by the bands (earlier positions are deleted).
    first: usize,
    /// Sorted positions at or after this one are truncated.
    floor_start: usize,
    bands: Vec<Band>,
    /// Running-sum coefficients, p+1 per band.
    coef: Vec<f64>,
    floor_coef: f64,
}

#[derive(Debug, Clone, Default)]
struct QueryCache {
    sigma: f64,
    valid: bool,
    bucket: usize,
    s: f64,
    total: f64,
    band_w: Vec<f64>,
    floor_w: f64,
    powers: Vec<f64>,
}

/// Parameters of a scalar maintainer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScmParams {
    pub sigma_min: f64,
    pub eps: f64,
    pub lambda: f64,
}

/// Taylor-band approximation of normalized vectors bx * exp(sigma * bg).
#[derive(Debug, Clone)]
pub struct Scm {
    params: ScmParams,
    r: f64,
    p: usize,
    fact: Vec<f64>,
    order: Vec<usize>,
    pos: Vec<usize>,
    bx: Vec<f64>,
    ln_bx: Vec<f64>,
    bg: Vec<f64>,
    alive: Vec<bool>,
    live: usize,
    first_live: usize,
    bx_tree: SumTree<1>,
    buckets: Vec<Option<Bucket>>,
    u: Vec<f64>,
    c0: f64,
    cache: QueryCache,
    direct: bool,
    work: u64,
}

impl Scm {
    /// Builds the structure; `ln_bx` are the logarithms of bx (passed explicitly so
    /// callers keep exact exponents).
    pub fn new(ln_bx: &[f64], bg: &[f64], params: ScmParams) -> Result<Self> {
        Self::with_mode(ln_bx, bg, params, ln_bx.len() <= DIRECT_LIMIT)
    }

    /// Builds the structure, evaluating exactly when `direct` is set.
    fn with_mode(ln_bx: &[f64], bg: &[f64], params: ScmParams, direct: bool) -> Result<Self> {
        let n = ln_bx.len();
        if n == 0 || bg.len() != n {
            return Err(Error::Input("SCM requires matching nonempty bx and bg".into()));
        }
        let ScmParams { sigma_min, eps, lambda } = params;
        if !(sigma_min > 0.0 && sigma_min <= 1.0) {
            return Err(Error::Config(format!("sigma_min must lie in (0, 1], got {sigma_min}")));
        }
        if !(eps > 0.0 && eps < 1.0) || !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::Config("SCM tolerance and floor must lie in (0, 1)".into()));
        }
        let ln_lambda = lambda.ln();
        for (j, &l) in ln_bx.iter().enumerate() {
            if !(l <= 1e-12 && l >= ln_lambda - 1e-9) {
                return Err(Error::Input(format!("bx[{j}] = {} outside [{lambda:e}, 1]", l.exp())));
            }
            if !bg[j].is_finite() {
                return Err(Error::Input(format!("bg[{j}] is not finite")));
            }
        }
        let eps_prime = eps / 10.0;
        let r = 2.0 * (2.0 * n as f64 / (lambda * eps_prime)).ln();
        let p = taylor_order(eps_prime / 2.0);
        let mut order: Vec<usize> = if direct { Vec::new() } else { (0..n).collect() };
        let bx: Vec<f64> = ln_bx.iter().map(|l| l.min(0.0).exp()).collect();
        let (pos, bx_tree) = if direct {
            (Vec::new(), SumTree::new(&[]))
        } else {
            order.sort_by(|&a, &b| bg[b].partial_cmp(&bg[a]).unwrap().then(a.cmp(&b)));
            let mut pos = vec![0; n];
            for (ps, &j) in order.iter().enumerate() {
                pos[j] = ps;
            }
            (pos, SumTree::new(&order.iter().map(|&j| [bx[j]]).collect::<Vec<_>>()))
        };
        let kcount = if direct { 0 } else { ((1.0 / sigma_min).log2().ceil().max(0.0) as usize) + 1 };
        Ok(Scm {
            params,
            r,
            p,
            fact: if direct { Vec::new() } else { factorials(p) },
            order,
            pos,
            bx,
            ln_bx: ln_bx.to_vec(),
            bg: bg.to_vec(),
            alive: vec![true; n],
            live: n,
            first_live: 0,
            bx_tree,
            buckets: vec![None; kcount],
            u: vec![0.0; n],
            c0: 0.0,
            cache: QueryCache::default(),
            direct,
            work: n as u64,
        })
    }

    pub fn len(&self) -> usize {
        self.bx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    pub fn live(&self) -> usize {
        self.live
    }

    pub fn is_alive(&self, j: usize) -> bool {
        self.alive[j]
    }

    pub fn taylor_order(&self) -> usize {
        self.p
    }

    pub fn truncation(&self) -> f64 {
        self.r
    }

    /// Accumulated internal work (elements and tree nodes touched).
    pub fn work(&self) -> u64 {
        self.work
    }

    pub fn ln_bx(&self, j: usize) -> f64 {
        self.ln_bx[j]
    }

    pub fn bg(&self, j: usize) -> f64 {
        self.bg[j]
    }

    fn check_sigma(&self, sigma: f64) -> Result<()> {
        if sigma == 0.0 || (sigma >= self.params.sigma_min * (1.0 - 1e-12) && sigma <= 1.0 + 1e-12) {
            Ok(())
        } else {
            Err(Error::Config(format!("sigma {sigma} outside {{0}} and [{}, 1]", self.params.sigma_min)))
        }
    }

    fn bucket_index(&self, sigma: f64) -> usize {
        let k = (sigma / self.params.sigma_min).log2().ceil();
        let k = if k.is_finite() && k > 0.0 { k as usize } else { 0 };
        k.min(self.buckets.len() - 1)
    }

    fn sigma_hat(&self, k: usize) -> f64 {
        self.params.sigma_min * 2f64.powi(k as i32 - 1)
    }

    fn build_bucket(&mut self, k: usize, mu: f64, fold_from: Option<Bucket>) {
        let sh = self.sigma_hat(k);
        let p1 = self.p + 1;
        let n = self.bx.len();
        let first = self.first_live;
        // fold contributions of the previous version of this bucket
        let mut floor_coef = 0.0;
        let mut new_floor_start = first;
        while new_floor_start < n {
            let j = self.order[new_floor_start];
            if sh * (self.bg[j] - mu) <= -self.r {
                break;
            }
            new_floor_start += 1;
        }
        if let Some(old) = fold_from {
            for (bi, band) in old.bands.iter().enumerate() {
                let c = &old.coef[bi * p1..(bi + 1) * p1];
                if c.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for ps in band.start.max(first)..band.end {
                    let j = self.order[ps];
                    if !self.alive[j] {
                        continue;
                    }
                    let d = old.sigma_hat * (self.bg[j] - old.mu) - band.center;
                    self.u[j] += self.bx[j] * horner(c, d);
                }
                self.work += (band.end - band.start) as u64;
            }
            if old.floor_coef != 0.0 {
                for ps in old.floor_start.max(first)..new_floor_start {
                    let j = self.order[ps];
                    if self.alive[j] {
                        self.u[j] += self.bx[j] * old.floor_coef;
                    }
                }
            }
            floor_coef = old.floor_coef;
        }
        let mut bands = Vec::new();
        let mut ps = first;
        while ps < new_floor_start {
            let j = self.order[ps];
            let t = sh * (self.bg[j] - mu);
            let b = ((-t) / BAND_WIDTH).floor().max(0.0);
            let lo = -(b + 1.0) * BAND_WIDTH;
            let center = -b * BAND_WIDTH;
            let start = ps;
            while ps < new_floor_start && sh * (self.bg[self.order[ps]] - mu) > lo {
                ps += 1;
            }
            let (order, bg, bx, alive) = (&self.order, &self.bg, &self.bx, &self.alive);
            let tree = MomentTree::build(p1, ps - start, |i, out| {
                let jj = order[start + i];
                if !alive[jj] {
                    return;
                }
                let d = sh * (bg[jj] - mu) - center;
                let mut pw = bx[jj];
                for o in out.iter_mut() {
                    *o = pw;
                    pw *= d;
                }
            });
            self.work += ((ps - start) * p1) as u64;
            bands.push(Band { start, end: ps, center, tree });
        }
        let nb = bands.len();
        self.buckets[k] = Some(Bucket {
            sigma_hat: sh,
            mu,
            first,
            floor_start: new_floor_start,
            bands,
            coef: vec![0.0; nb * p1],
            floor_coef,
        });
    }

    fn ensure_bucket(&mut self, k: usize) {
        if self.buckets[k].is_none() {
            let mu = self.bg[self.order[self.first_live]];
            self.build_bucket(k, mu, None);
        }
    }

    fn prepare(&mut self, sigma: f64) -> Result<()> {
        self.check_sigma(sigma)?;
        if self.live == 0 {
            return Err(Error::Numeric("SCM has no live coordinates".into()));
        }
        if self.cache.valid && self.cache.sigma == sigma {
            return Ok(());
        }
        let p1 = self.p + 1;
        let mut band_w = std::mem::take(&mut self.cache.band_w);
        let mut powers = std::mem::take(&mut self.cache.powers);
        band_w.clear();
        powers.clear();
        if self.direct {
            // exact weights relative to the largest exponent, stored in s
            let mut mx = f64::NEG_INFINITY;
            for j in 0..self.bx.len() {
                if self.alive[j] {
                    mx = mx.max(self.ln_bx[j] + sigma * self.bg[j]);
                }
            }
            let mut total = 0.0;
            for j in 0..self.bx.len() {
                let w = if self.alive[j] { (self.ln_bx[j] + sigma * self.bg[j] - mx).exp() } else { 0.0 };
                band_w.push(w);
                total += w;
            }
            self.work += self.bx.len() as u64;
            self.cache = QueryCache { sigma, valid: true, bucket: 0, s: mx, total, band_w, floor_w: 0.0, powers };
            return Ok(());
        }
        if sigma == 0.0 {
            let total = self.bx_tree.root()[0];
            self.cache = QueryCache { sigma, valid: true, total, band_w, powers, ..QueryCache::default() };
            return Ok(());
        }
        let k = self.bucket_index(sigma);
        self.ensure_bucket(k);
        let b = self.buckets[k].as_ref().expect("bucket built");
        let s = sigma / b.sigma_hat;
        let mut pw = 1.0;
        for q in 0..p1 {
            powers.push(pw / self.fact[q]);
            pw *= s;
        }
        let mut total = 0.0;
        let step = (-s * BAND_WIDTH).exp();
        let mut last_b = 0.0;
        let mut scale = 1.0;
        for band in &b.bands {
            let m = band.tree.node(1);
            let mut poly = 0.0;
            for q in 0..p1 {
                poly += powers[q] * m[q];
            }
            // exp(s * center) advanced from the previous band
            let bidx = -band.center / BAND_WIDTH;
            scale *= step.powi((bidx - last_b) as i32);
            last_b = bidx;
            let w = scale * poly.max(0.0);
            band_w.push(w);
            total += w;
        }
        let floor_mass = self.bx_tree.root()[0] - self.bx_tree.prefix(b.floor_start, 0);
        let floor_w = (-s * self.r).exp() * floor_mass.max(0.0);
        total += floor_w;
        self.work += (b.bands.len() * p1) as u64;
        self.cache = QueryCache { sigma, valid: true, bucket: k, s, total, band_w, floor_w, powers };
        Ok(())
    }

    /// Natural logarithm of the approximate norm Z[sigma] of bx * exp(sigma * bg).
    pub fn log_norm(&mut self, sigma: f64) -> Result<f64> {
        self.prepare(sigma)?;
        if self.direct {
            return Ok(self.cache.s + self.cache.total.ln());
        }
        if sigma == 0.0 {
            return Ok(self.cache.total.ln());
        }
        let mu = self.buckets[self.cache.bucket].as_ref().expect("built").mu;
        Ok(sigma * mu + self.cache.total.ln())
    }

    /// Approximate norm Z[sigma].
    pub fn get_norm(&mut self, sigma: f64) -> Result<f64> {
        Ok(self.log_norm(sigma)?.exp())
    }

    /// Unnormalized approximate weight of coordinate j in the current query frame.
    fn weight(&self, j: usize) -> f64 {
        let c = &self.cache;
        if self.direct {
            return c.band_w[j];
        }
        if c.sigma == 0.0 {
            return self.bx[j];
        }
        let b = self.buckets[c.bucket].as_ref().expect("built");
        let ps = self.pos[j];
        if ps >= b.floor_start {
            return self.bx[j] * (-c.s * self.r).exp();
        }
        let bi = band_of(&b.bands, ps);
        let band = &b.bands[bi];
        let d = b.sigma_hat * (self.bg[j] - b.mu) - band.center;
        let mut poly = 0.0;
        let mut pw = 1.0;
        for q in 0..=self.p {
            poly += c.powers[q] * pw;
            pw *= d;
        }
        self.bx[j] * (c.s * band.center).exp() * poly
    }

    /// Coordinate j of the approximate normalized vector at sigma.
    pub fn get(&mut self, j: usize, sigma: f64) -> Result<f64> {
        if j >= self.bx.len() || !self.alive[j] {
            return Err(Error::Index(format!("SCM coordinate {j} is not live")));
        }
        self.prepare(sigma)?;
        Ok(self.weight(j) / self.cache.total)
    }

    /// Draws a live coordinate with probability equal to [`Scm::get`].
    pub fn sample<R: Rng + ?Sized>(&mut self, sigma: f64, rng: &mut R) -> Result<usize> {
        self.prepare(sigma)?;
        let c = &self.cache;
        if self.direct {
            let mut t = rng.random::<f64>() * c.total;
            let mut last = 0;
            for (j, &w) in c.band_w.iter().enumerate() {
                if w > 0.0 {
                    if t < w {
                        return Ok(j);
                    }
                    t -= w;
                    last = j;
                }
            }
            return Ok(last);
        }
        if sigma == 0.0 {
            let target = rng.random::<f64>() * self.bx_tree.root()[0];
            let ps = self.bx_tree.find_prefix(target, 0).min(self.bx.len() - 1);
            self.work += self.bx.len().max(2).ilog2() as u64;
            return Ok(self.order[ps]);
        }
        let b = self.buckets[c.bucket].as_ref().expect("built");
        let mut target = rng.random::<f64>() * c.total;
        let mut chosen = None;
        for (bi, &w) in c.band_w.iter().enumerate() {
            if target < w && w > 0.0 {
                chosen = Some(bi);
                break;
            }
            target -= w;
        }
        if chosen.is_none() && c.floor_w <= 0.0 {
            chosen = c.band_w.iter().rposition(|&w| w > 0.0);
        }
        let ps = match chosen {
            Some(bi) => {
                let band = &b.bands[bi];
                band.start + band.tree.descend(&c.powers, rng)
            }
            None => {
                let base = self.bx_tree.prefix(b.floor_start, 0);
                let mass = self.bx_tree.root()[0] - base;
                let t = base + rng.random::<f64>() * mass;
                self.bx_tree.find_prefix(t, 0).clamp(b.floor_start, self.bx.len() - 1)
            }
        };
        self.work += (self.bx.len().max(2).ilog2() as usize * (self.p + 1)) as u64;
        Ok(self.order[ps])
    }

    /// Adds gamma times the current approximate normalized vector at sigma to the
    /// running sum.
    pub fn update_sum(&mut self, gamma: f64, sigma: f64) -> Result<()> {
        if gamma == 0.0 {
            return Ok(());
        }
        self.prepare(sigma)?;
        let total = self.cache.total;
        if self.direct {
            for j in 0..self.bx.len() {
                self.u[j] += gamma * self.cache.band_w[j] / total;
            }
            return Ok(());
        }
        if sigma == 0.0 {
            self.c0 += gamma / total;
            return Ok(());
        }
        let p1 = self.p + 1;
        let k = self.cache.bucket;
        let s = self.cache.s;
        let fw = gamma * (-s * self.r).exp() / total;
        let powers = std::mem::take(&mut self.cache.powers);
        let b = self.buckets[k].as_mut().expect("built");
        for (bi, band) in b.bands.iter().enumerate() {
            let f = gamma * (s * band.center).exp() / total;
            let c = &mut b.coef[bi * p1..(bi + 1) * p1];
            for q in 0..p1 {
                c[q] += f * powers[q];
            }
        }
        b.floor_coef += fw;
        self.work += (b.bands.len() * p1) as u64;
        self.cache.powers = powers;
        Ok(())
    }

    /// Running sum at coordinate j (frozen once j is deleted).
    pub fn get_sum(&self, j: usize) -> f64 {
        if !self.alive[j] || self.direct {
            return self.u[j];
        }
        let ps = self.pos[j];
        let mut s = self.u[j] + self.bx[j] * self.c0;
        let p1 = self.p + 1;
        for b in self.buckets.iter().flatten() {
            if ps >= b.floor_start {
                s += self.bx[j] * b.floor_coef;
            } else if ps >= b.first {
                let bi = band_of(&b.bands, ps);
                let c = &b.coef[bi * p1..(bi + 1) * p1];
                let d = b.sigma_hat * (self.bg[j] - b.mu) - b.bands[bi].center;
                s += self.bx[j] * horner(c, d);
            }
        }
        s
    }

    /// Removes coordinate j; later queries ignore it.
    pub fn del(&mut self, j: usize) -> Result<()> {
        if j >= self.bx.len() || !self.alive[j] {
            return Err(Error::Index(format!("SCM coordinate {j} is not live")));
        }
        self.u[j] = self.get_sum(j);
        self.alive[j] = false;
        self.live -= 1;
        self.cache.valid = false;
        if self.direct {
            return Ok(());
        }
        let ps = self.pos[j];
        self.work += self.bx_tree.set(ps, [0.0]) as u64;
        for b in self.buckets.iter_mut().flatten() {
            if ps >= b.first && ps < b.floor_start {
                let bi = band_of(&b.bands, ps);
                let band = &mut b.bands[bi];
                self.work += band.tree.clear_leaf(ps - band.start) as u64;
            }
        }
        self.cache.valid = false;
        if self.live == 0 {
            return Ok(());
        }
        while !self.alive[self.order[self.first_live]] {
            self.first_live += 1;
        }
        let new_max = self.bg[self.order[self.first_live]];
        for k in 0..self.buckets.len() {
            let reset = match &self.buckets[k] {
                Some(b) => b.sigma_hat * (new_max - b.mu) < -self.r / 2.0,
                None => false,
            };
            if reset {
                let old = self.buckets[k].take();
                self.build_bucket(k, new_max, old);
            }
        }
        Ok(())
    }
}

#[inline]
fn horner(c: &[f64], d: f64) -> f64 {
    let mut acc = 0.0;
    for q in (0..c.len()).rev() {
        acc = acc * d + c[q];
    }
    acc
}

#[inline]
fn band_of(bands: &[Band], ps: usize) -> usize {
    match bands.binary_search_by(|b| {
        if ps < b.start {
            std::cmp::Ordering::Greater
        } else if ps >= b.end {
            std::cmp::Ordering::Less
        } else {
            std::cmp::Ordering::Equal
        }
    }) {
        Ok(i) => i,
        Err(i) => i.min(bands.len() - 1),
    }
}

/// Common interface of the simplex maintainers driven by the variance-reduced inner
/// loop: x is proportional to exp(delta) with dense steps delta <- kappa delta + v and
/// sparse steps delta_j <- delta_j + g.
pub trait SimplexMaintainer {
    fn dim(&self) -> usize;
    fn dense_step(&mut self);
    fn mult_sparse(&mut self, j: usize, g: f64) -> Result<()>;
    fn update_sum(&mut self, gamma: f64) -> Result<()>;
    fn get(&mut self, j: usize) -> Result<f64>;
    fn get_sum(&mut self, j: usize) -> f64;
    fn sample(&mut self, rng: &mut dyn rand::RngCore) -> Result<usize>;
    fn touched(&self) -> u64;
    fn sum_vec(&mut self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.get_sum(j)).collect()
    }
    fn to_vec(&mut self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.get(j).expect("in range")).collect()
    }
}

/// Configuration of an [`Aem`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AemParams {
    pub kappa: f64,
    pub eps: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
struct Rank {
    scm: Scm,
    members: Vec<usize>,
    log_gamma: f64,
    tau: u64,
}

/// Statistics about the internal work of an [`Aem`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AemStats {
    pub ops: u64,
    pub merges: u64,
    pub merged_elements: u64,
    /// Per rank, the MultSparse counter value at each placement of a new structure.
    pub placements: Vec<Vec<u64>>,
    pub sparse_updates: u64,
}

/// Approximate maintainer of multiplicative-weights iterates with a dense component.
#[derive(Debug, Clone)]
pub struct Aem {
    n: usize,
    params: AemParams,
    ln_kappa: f64,
    scm_params: ScmParams,
    /// v / (1 - kappa), the fixed point offset of the dense step.
    vbar: Vec<f64>,
    ranks: Vec<Option<Rank>>,
    loc: Vec<(u32, u32)>,
    u: Vec<f64>,
    log_gamma_total: Option<f64>,
    rank_logw: Vec<f64>,
    stats: AemStats,
    /// Coordinates read or written: placements, sparse updates, reads and samples.
    touched: u64,
    /// Internal work of structures that have been merged away.
    retired_work: u64,
}

impl Aem {
    /// Initializes at x0 (in the simplex, entries at least lambda) with dense vector v
    /// and decay kappa in [0, 1).
    pub fn new(x0: &[f64], v: &[f64], params: AemParams) -> Result<Self> {
        let n = x0.len();
        let AemParams { kappa, eps, lambda } = params;
        if n == 0 || v.len() != n {
            return Err(Error::Input("AEM requires matching nonempty x0 and v".into()));
        }
        if !(0.0..1.0).contains(&kappa) {
            return Err(Error::Config(format!("kappa must lie in [0, 1), got {kappa}")));
        }
        if !(eps > 0.0 && eps < 1.0) || !(lambda > 0.0) {
            return Err(Error::Config("AEM tolerance must lie in (0, 1) and lambda be positive".into()));
        }
        if let Some(j) = x0.iter().position(|&t| !(t >= lambda * (1.0 - 1e-12))) {
            return Err(Error::Input(format!("x0[{j}] = {} is below the floor {lambda:e}", x0[j])));
        }
        if v.iter().any(|t| !t.is_finite()) {
            return Err(Error::Input("dense vector contains a nonfinite value".into()));
        }
        let lambda_scm = (eps / n as f64).min(lambda).min(1.0);
        let scm_params = ScmParams { sigma_min: 1.0 - kappa, eps: eps / 10.0, lambda: lambda_scm };
        let kcount = ((n + 1) as f64).log2().ceil() as usize + 1;
        let vbar: Vec<f64> = v.iter().map(|t| t / (1.0 - kappa)).collect();
        let mut a = Aem {
            n,
            params,
            ln_kappa: kappa.ln(),
            scm_params,
            vbar,
            ranks: vec![None; kcount],
            loc: vec![(0, 0); n],
            u: vec![0.0; n],
            log_gamma_total: None,
            rank_logw: vec![f64::NEG_INFINITY; kcount],
            stats: AemStats { placements: vec![Vec::new(); kcount], ..AemStats::default() },
            touched: 0,
            retired_work: 0,
        };
        let deltas: Vec<(usize, f64)> = x0.iter().enumerate().map(|(j, &t)| (j, t.ln())).collect();
        a.place(kcount - 1, deltas)?;
        Ok(a)
    }

    pub fn stats(&self) -> &AemStats {
        &self.stats
    }

    /// Sizes of the rank structures (live members).
    pub fn rank_sizes(&self) -> Vec<usize> {
        self.ranks.iter().map(|r| r.as_ref().map_or(0, |r| r.scm.live())).collect()
    }

    /// Total internal work including all rank structures ever built.
    pub fn work(&self) -> u64 {
        self.touched
            + self.retired_work
            + self.stats.ops
            + self.ranks.iter().flatten().map(|r| r.scm.work()).sum::<u64>()
    }

    /// log(1 / (1 - kappa)) and n / (lambda eps) combined into omega.
    pub fn omega(&self) -> f64 {
        (1.0 / (1.0 - self.params.kappa)).max(self.n as f64 / (self.scm_params.lambda * self.params.eps))
    }

    #[inline]
    fn sigma_of(&self, tau: u64) -> f64 {
        if tau == 0 {
            0.0
        } else {
            -(tau as f64 * self.ln_kappa).exp_m1()
        }
    }

    /// Exact exponent of a live coordinate.
    fn delta_of(&self, j: usize) -> f64 {
        let (k, l) = self.loc[j];
        let r = self.ranks[k as usize].as_ref().expect("live rank");
        let sigma = self.sigma_of(r.tau);
        r.log_gamma + r.scm.ln_bx(l as usize) + sigma * r.scm.bg(l as usize)
    }

    /// Exact (unnormalized log) exponents of all coordinates, for diagnostics.
    pub fn exact_log_weights(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.delta_of(j)).collect()
    }

    fn place(&mut self, k: usize, mut deltas: Vec<(usize, f64)>) -> Result<()> {
        deltas.sort_by_key(|e| e.0);
        let log_gamma = deltas.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
        let floor = self.scm_params.lambda.ln();
        let mut ln_bx = Vec::with_capacity(deltas.len());
        let mut bg = Vec::with_capacity(deltas.len());
        let mut members = Vec::with_capacity(deltas.len());
        for (l, &(j, d)) in deltas.iter().enumerate() {
            let lb = (d - log_gamma).max(floor);
            ln_bx.push(lb);
            bg.push(self.vbar[j] - (log_gamma + lb));
            members.push(j);
            self.loc[j] = (k as u32, l as u32);
        }
        let scm = Scm::new(&ln_bx, &bg, self.scm_params)?;
        self.stats.merges += 1;
        self.stats.merged_elements += members.len() as u64;
        self.touched += members.len() as u64;
        self.stats.placements[k].push(self.stats.sparse_updates);
        self.ranks[k] = Some(Rank { scm, members, log_gamma, tau: 0 });
        self.log_gamma_total = None;
        Ok(())
    }

    fn refresh_weights(&mut self) -> Result<f64> {
        if let Some(t) = self.log_gamma_total {
            return Ok(t);
        }
        let mut mx = f64::NEG_INFINITY;
        for k in 0..self.ranks.len() {
            let sigma = match &self.ranks[k] {
                Some(r) => self.sigma_of(r.tau),
                None => {
                    self.rank_logw[k] = f64::NEG_INFINITY;
                    continue;
                }
            };
            let r = self.ranks[k].as_mut().expect("checked");
            let lw = r.log_gamma + r.scm.log_norm(sigma)?;
            self.rank_logw[k] = lw;
            mx = mx.max(lw);
        }
        let s: f64 = self.rank_logw.iter().map(|&w| (w - mx).exp()).sum();
        let total = mx + s.ln();
        self.log_gamma_total = Some(total);
        Ok(total)
    }

    /// Sum of the rank masses relative to the normalization (1 up to rounding).
    pub fn rank_fractions(&mut self) -> Result<Vec<f64>> {
        let t = self.refresh_weights()?;
        Ok(self.rank_logw.iter().map(|&w| (w - t).exp()).collect())
    }
}

impl SimplexMaintainer for Aem {
    fn dim(&self) -> usize {
        self.n
    }

    fn dense_step(&mut self) {
        for r in self.ranks.iter_mut().flatten() {
            r.tau += 1;
        }
        self.log_gamma_total = None;
        self.stats.ops += 1;
    }

    fn mult_sparse(&mut self, j: usize, g: f64) -> Result<()> {
        if j >= self.n {
            return Err(Error::Index(format!("coordinate {j} out of range {}", self.n)));
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!("nonfinite sparse exponent {g}")));
        }
        self.stats.ops += 1;
        self.stats.sparse_updates += 1;
        let delta = self.delta_of(j) + g;
        let (k, l) = self.loc[j];
        {
            let r = self.ranks[k as usize].as_mut().expect("live rank");
            self.u[j] += r.scm.get_sum(l as usize);
            r.scm.del(l as usize)?;
            if r.scm.is_empty() {
                self.ranks[k as usize] = None;
            }
        }
        let mut pending = vec![(j, delta)];
        let mut rank = 0;
        loop {
            if let Some(r) = self.ranks[rank].take() {
                let sigma = self.sigma_of(r.tau);
                for (l, &m) in r.members.iter().enumerate() {
                    if !r.scm.is_alive(l) {
                        continue;
                    }
                    self.u[m] += r.scm.get_sum(l);
                    let d = r.log_gamma + r.scm.ln_bx(l) + sigma * r.scm.bg(l);
                    pending.push((m, d));
                }
                self.retired_work += r.scm.work();
            }
            if pending.len() <= (1usize << rank) || rank + 1 == self.ranks.len() {
                self.place(rank, pending)?;
                break;
            }
            rank += 1;
        }
        self.log_gamma_total = None;
        Ok(())
    }

    fn update_sum(&mut self, gamma: f64) -> Result<()> {
        let total = self.refresh_weights()?;
        for k in 0..self.ranks.len() {
            let w = (self.rank_logw[k] - total).exp();
            if let Some(r) = self.ranks[k].as_mut() {
                let sigma = if r.tau == 0 { 0.0 } else { -(r.tau as f64 * self.ln_kappa).exp_m1() };
                r.scm.update_sum(gamma * w, sigma)?;
            }
        }
        Ok(())
    }

    fn get(&mut self, j: usize) -> Result<f64> {
        if j >= self.n {
            return Err(Error::Index(format!("coordinate {j} out of range {}", self.n)));
        }
        let total = self.refresh_weights()?;
        let (k, l) = self.loc[j];
        let w = (self.rank_logw[k as usize] - total).exp();
        let r = self.ranks[k as usize].as_mut().expect("live rank");
        let sigma = if r.tau == 0 { 0.0 } else { -(r.tau as f64 * self.ln_kappa).exp_m1() };
        self.touched += 1;
        Ok(w * r.scm.get(l as usize, sigma)?)
    }

    fn get_sum(&mut self, j: usize) -> f64 {
        let (k, l) = self.loc[j];
        let r = self.ranks[k as usize].as_ref().expect("live rank");
        self.touched += 1;
        self.u[j] + r.scm.get_sum(l as usize)
    }

    fn sample(&mut self, rng: &mut dyn rand::RngCore) -> Result<usize> {
        let total = self.refresh_weights()?;
        let mut target: f64 = rng.random::<f64>();
        let mut chosen = None;
        let mut last = None;
        for k in 0..self.ranks.len() {
            if self.ranks[k].is_none() {
                continue;
            }
            last = Some(k);
            let w = (self.rank_logw[k] - total).exp();
            if target < w {
                chosen = Some(k);
                break;
            }
            target -= w;
        }
        let k = chosen.or(last).ok_or_else(|| Error::Numeric("AEM is empty".into()))?;
        let r = self.ranks[k].as_mut().expect("checked");
        let sigma = if r.tau == 0 { 0.0 } else { -(r.tau as f64 * self.ln_kappa).exp_m1() };
        let l = r.scm.sample(sigma, rng)?;
        self.touched += 1;
        Ok(r.members[l])
    }

    fn touched(&self) -> u64 {
        self.touched
    }
}

/// Exact dense implementation of [`SimplexMaintainer`] with O(n) dense steps.
#[derive(Debug, Clone)]
pub struct DenseExpMaintainer {
    delta: Vec<f64>,
    v: Vec<f64>,
    kappa: f64,
    sum: Vec<f64>,
    probs: Option<Vec<f64>>,
    touched: u64,
}

impl DenseExpMaintainer {
    pub fn new(x0: &[f64], v: &[f64], kappa: f64) -> Result<Self> {
        if x0.len() != v.len() || x0.is_empty() {
            return Err(Error::Input("dense maintainer requires matching nonempty vectors".into()));
        }
        if x0.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Input("dense maintainer requires a positive initial point".into()));
        }
        Ok(DenseExpMaintainer {
            delta: x0.iter().map(|t| t.ln()).collect(),
            v: v.to_vec(),
            kappa,
            sum: vec![0.0; x0.len()],
            probs: None,
            touched: x0.len() as u64,
        })
    }

    fn probs(&mut self) -> &Vec<f64> {
        if self.probs.is_none() {
            let mx = self.delta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut p: Vec<f64> = self.delta.iter().map(|d| (d - mx).exp()).collect();
            let s: f64 = p.iter().sum();
            for t in p.iter_mut() {
                *t /= s;
            }
            self.touched += p.len() as u64;
            self.probs = Some(p);
        }
        self.probs.as_ref().expect("set")
    }
}

impl SimplexMaintainer for DenseExpMaintainer {
    fn dim(&self) -> usize {
        self.delta.len()
    }

    fn dense_step(&mut self) {
        for (d, v) in self.delta.iter_mut().zip(&self.v) {
            *d = self.kappa * *d + v;
        }
        self.touched += self.delta.len() as u64;
        self.probs = None;
    }

    fn mult_sparse(&mut self, j: usize, g: f64) -> Result<()> {
        if j >= self.delta.len() {
            return Err(Error::Index(format!("coordinate {j} out of range")));
        }
        self.delta[j] += g;
        self.probs = None;
        self.touched += 1;
        Ok(())
    }

    fn update_sum(&mut self, gamma: f64) -> Result<()> {
        let p = self.probs().clone();
        for (s, q) in self.sum.iter_mut().zip(&p) {
            *s += gamma * q;
        }
        Ok(())
    }

    fn get(&mut self, j: usize) -> Result<f64> {
        if j >= self.delta.len() {
            return Err(Error::Index(format!("coordinate {j} out of range")));
        }
        Ok(self.probs()[j])
    }

    fn get_sum(&mut self, j: usize) -> f64 {
        self.sum[j]
    }

    fn sample(&mut self, rng: &mut dyn rand::RngCore) -> Result<usize> {
        let p = self.probs();
        let mut t: f64 = rng.random::<f64>();
        for (j, &q) in p.iter().enumerate() {
            if t < q {
                return Ok(j);
            }
            t -= q;
        }
        Ok(p.len() - 1)
    }

    fn touched(&self) -> u64 {
        self.touched
    }
}
