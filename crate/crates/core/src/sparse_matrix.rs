//! Immutable sparse matrix stored in both row-major and column-major order.
//!
//! Besides products with dense vectors, the matrix answers the access queries the
//! coordinate methods rely on: exact per-line norms, and constant-time draws of a
//! nonzero position inside a row or column (proportional to |A_ij|^p) or over the
//! whole matrix. All samplers are alias tables built once at construction.
//!
//! Indices are 0-based throughout the library. Matrix Market files are 1-based and
//! converted at the file boundary.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Row,
    Col,
}

/// Global sampling distributions over the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalKind {
    /// Entry (i, j) with probability A_ij^2 / ||A||_F^2.
    EntrySq,
    /// Row i with probability ||a_i||_1^2 / sum_k ||a_k||_1^2.
    RowL1Sq,
    /// Column j with probability ||a_:j||_1^2 / sum_k ||a_:k||_1^2.
    ColL1Sq,
}

/// Summary statistics computed once at build time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixStats {
    pub m: usize,
    pub n: usize,
    pub nnz: usize,
    /// Largest number of nonzeros in any row or column.
    pub rcs: usize,
    /// Frobenius norm.
    pub frob: f64,
    /// Largest absolute entry.
    pub amax: f64,
    pub max_row_l1: f64,
    pub max_row_l2: f64,
    pub max_col_l1: f64,
    pub max_col_l2: f64,
    pub sum_row_l1_sq: f64,
    pub sum_col_l1_sq: f64,
}

#[derive(Debug, Clone)]
struct LineSamplers {
    l1: Vec<Option<WeightedAliasIndex<f64>>>,
    l2: Vec<Option<WeightedAliasIndex<f64>>>,
}

#[derive(Debug, Clone)]
pub struct SparseMatrix {
    m: usize,
    n: usize,
    row_ptr: Vec<usize>,
    row_col: Vec<usize>,
    row_val: Vec<f64>,
    col_ptr: Vec<usize>,
    col_row: Vec<usize>,
    col_val: Vec<f64>,
    row_l1: Vec<f64>,
    row_l2: Vec<f64>,
    col_l1: Vec<f64>,
    col_l2: Vec<f64>,
    stats: MatrixStats,
    row_samplers: LineSamplers,
    col_samplers: LineSamplers,
    entry_sq: Option<WeightedAliasIndex<f64>>,
    entry_row: Vec<usize>,
    row_l1sq: Option<WeightedAliasIndex<f64>>,
    col_l1sq: Option<WeightedAliasIndex<f64>>,
}

fn alias(weights: Vec<f64>) -> Option<WeightedAliasIndex<f64>> {
    if weights.iter().all(|&w| w == 0.0) {
        return None;
    }
    WeightedAliasIndex::new(weights).ok()
}

impl SparseMatrix {
    /// Builds a matrix from 0-based triplets. Duplicates are summed and exact zeros
    /// dropped. Every row and column must keep at least one nonzero.
    pub fn from_triplets(m: usize, n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        Self::build(m, n, triplets, true)
    }

    /// Like [`SparseMatrix::from_triplets`] but with 1-based indices.
    pub fn from_triplets_one_based(m: usize, n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut shifted = Vec::with_capacity(triplets.len());
        for &(i, j, v) in triplets {
            if i == 0 || j == 0 {
                return Err(Error::Index(format!("1-based index expected, got ({i}, {j})")));
            }
            shifted.push((i - 1, j - 1, v));
        }
        Self::build(m, n, &shifted, true)
    }

    /// Builds a matrix that may contain empty rows or columns. Used internally for
    /// degenerate operators (for instance the zero matrix); samplers over empty lines
    /// return `None`.
    pub fn from_triplets_allow_empty(m: usize, n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        Self::build(m, n, triplets, false)
    }

    /// Dense row-major input, mostly for tests and small examples.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut t = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::Input(format!("row {} has length {} instead of {n}", i + 1, r.len())));
            }
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m, n, &t)
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &t).expect("identity is valid")
    }

    pub fn diag(d: &[f64]) -> Result<Self> {
        let t: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(d.len(), d.len(), &t)
    }

    fn build(m: usize, n: usize, triplets: &[(usize, usize, f64)], check: bool) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Input(format!("matrix dimensions must be positive, got {m}x{n}")));
        }
        let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(i, j, v) in triplets {
            if i >= m || j >= n {
                return Err(Error::Index(format!("entry ({}, {}) outside a {m}x{n} matrix", i + 1, j + 1)));
            }
            if !v.is_finite() {
                return Err(Error::Input(format!("nonfinite value at ({}, {})", i + 1, j + 1)));
            }
            t.push((i, j, v));
        }
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(t.len());
        for (i, j, v) in t {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        merged.retain(|e| e.2 != 0.0);

        let nnz = merged.len();
        let mut row_ptr = vec![0usize; m + 1];
        for &(i, _, _) in &merged {
            row_ptr[i + 1] += 1;
        }
        for i in 0..m {
            row_ptr[i + 1] += row_ptr[i];
        }
        let row_col: Vec<usize> = merged.iter().map(|e| e.1).collect();
        let row_val: Vec<f64> = merged.iter().map(|e| e.2).collect();

        let mut col_ptr = vec![0usize; n + 1];
        for &(_, j, _) in &merged {
            col_ptr[j + 1] += 1;
        }
        for j in 0..n {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut fill = col_ptr.clone();
        let mut col_row = vec![0usize; nnz];
        let mut col_val = vec![0.0; nnz];
        for &(i, j, v) in &merged {
            let p = fill[j];
            col_row[p] = i;
            col_val[p] = v;
            fill[j] += 1;
        }

        if check {
            for i in 0..m {
                if row_ptr[i + 1] == row_ptr[i] {
                    return Err(Error::Structural(format!("row {} has no nonzero entry", i + 1)));
                }
            }
            for j in 0..n {
                if col_ptr[j + 1] == col_ptr[j] {
                    return Err(Error::Structural(format!("column {} has no nonzero entry", j + 1)));
                }
            }
        }

        let line_norms = |ptr: &[usize], val: &[f64], k: usize| {
            let s = &val[ptr[k]..ptr[k + 1]];
            let l1: f64 = s.iter().map(|v| v.abs()).sum();
            let l2: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            (l1, l2)
        };
        let (row_l1, row_l2): (Vec<f64>, Vec<f64>) = (0..m).map(|i| line_norms(&row_ptr, &row_val, i)).unzip();
        let (col_l1, col_l2): (Vec<f64>, Vec<f64>) = (0..n).map(|j| line_norms(&col_ptr, &col_val, j)).unzip();

        let rcs = (0..m)
            .map(|i| row_ptr[i + 1] - row_ptr[i])
            .chain((0..n).map(|j| col_ptr[j + 1] - col_ptr[j]))
            .max()
            .unwrap_or(0);
        let fmax = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
        let stats = MatrixStats {
            m,
            n,
            nnz,
            rcs,
            frob: row_val.iter().map(|v| v * v).sum::<f64>().sqrt(),
            amax: row_val.iter().map(|v| v.abs()).fold(0.0, f64::max),
            max_row_l1: fmax(&row_l1),
            max_row_l2: fmax(&row_l2),
            max_col_l1: fmax(&col_l1),
            max_col_l2: fmax(&col_l2),
            sum_row_l1_sq: row_l1.iter().map(|v| v * v).sum(),
            sum_col_l1_sq: col_l1.iter().map(|v| v * v).sum(),
        };

        let line_samplers = |ptr: &[usize], val: &[f64], count: usize| LineSamplers {
            l1: (0..count).map(|k| alias(val[ptr[k]..ptr[k + 1]].iter().map(|v| v.abs()).collect())).collect(),
            l2: (0..count).map(|k| alias(val[ptr[k]..ptr[k + 1]].iter().map(|v| v * v).collect())).collect(),
        };
        let row_samplers = line_samplers(&row_ptr, &row_val, m);
        let col_samplers = line_samplers(&col_ptr, &col_val, n);
        let mut entry_row = vec![0usize; nnz];
        for i in 0..m {
            for p in row_ptr[i]..row_ptr[i + 1] {
                entry_row[p] = i;
            }
        }
        let entry_sq = alias(row_val.iter().map(|v| v * v).collect());
        let row_l1sq = alias(row_l1.iter().map(|v| v * v).collect());
        let col_l1sq = alias(col_l1.iter().map(|v| v * v).collect());

        Ok(SparseMatrix {
            m,
            n,
            row_ptr,
            row_col,
            row_val,
            col_ptr,
            col_row,
            col_val,
            row_l1,
            row_l2,
            col_l1,
            col_l2,
            stats,
            row_samplers,
            col_samplers,
            entry_sq,
            entry_row,
            row_l1sq,
            col_l1sq,
        })
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.stats.nnz
    }

    pub fn stats(&self) -> &MatrixStats {
        &self.stats
    }

    /// Stored value at (i, j), or 0.
    pub fn entry(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.m || j >= self.n {
            return Err(Error::Index(format!("({}, {}) outside {}x{}", i + 1, j + 1, self.m, self.n)));
        }
        let (cols, vals) = self.row(i);
        Ok(match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        })
    }

    /// Column indices and values of row i.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.row_col[r.clone()], &self.row_val[r])
    }

    /// Row indices and values of column j.
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.col_row[r.clone()], &self.col_val[r])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn col_nnz(&self, j: usize) -> usize {
        self.col_ptr[j + 1] - self.col_ptr[j]
    }

    /// All (i, j, value) triplets in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.m)
            .flat_map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(move |(&j, &a)| (i, j, a))
            })
            .collect()
    }

    /// Exact l_p norm of a row or column, p in {1, 2}.
    pub fn line_norm(&self, axis: Axis, k: usize, p: u8) -> Result<f64> {
        let (l1, l2, len) = match axis {
            Axis::Row => (&self.row_l1, &self.row_l2, self.m),
            Axis::Col => (&self.col_l1, &self.col_l2, self.n),
        };
        if k >= len {
            return Err(Error::Index(format!("line {} out of range", k + 1)));
        }
        match p {
            1 => Ok(l1[k]),
            2 => Ok(l2[k]),
            _ => Err(Error::Config(format!("line norm p must be 1 or 2, got {p}"))),
        }
    }

    pub fn row_l1(&self) -> &[f64] {
        &self.row_l1
    }

    pub fn row_l2(&self) -> &[f64] {
        &self.row_l2
    }

    pub fn col_l1(&self) -> &[f64] {
        &self.col_l1
    }

    pub fn col_l2(&self) -> &[f64] {
        &self.col_l2
    }

    /// Draws a position inside row i with probability |A_ij|^p / ||a_i||_p^p and
    /// returns (j, A_ij). `p = 0` draws uniformly over the nonzeros.
    pub fn sample_row_entry<R: Rng + ?Sized>(&self, i: usize, p: u8, rng: &mut R) -> Option<(usize, f64)> {
        let base = self.row_ptr[i];
        let len = self.row_ptr[i + 1] - base;
        let off = sample_line(&self.row_samplers, i, len, p, rng)?;
        Some((self.row_col[base + off], self.row_val[base + off]))
    }

    /// Draws a position inside column j and returns (i, A_ij); see [`Self::sample_row_entry`].
    pub fn sample_col_entry<R: Rng + ?Sized>(&self, j: usize, p: u8, rng: &mut R) -> Option<(usize, f64)> {
        let base = self.col_ptr[j];
        let len = self.col_ptr[j + 1] - base;
        let off = sample_line(&self.col_samplers, j, len, p, rng)?;
        Some((self.col_row[base + off], self.col_val[base + off]))
    }

    /// Index-only form of the line samplers.
    pub fn sample_in_line<R: Rng + ?Sized>(&self, axis: Axis, k: usize, p: u8, rng: &mut R) -> Result<usize> {
        let limit = match axis {
            Axis::Row => self.m,
            Axis::Col => self.n,
        };
        if k >= limit {
            return Err(Error::Index(format!("line {} out of range", k + 1)));
        }
        if p > 2 {
            return Err(Error::Config(format!("sampling power must be 0, 1 or 2, got {p}")));
        }
        let r = match axis {
            Axis::Row => self.sample_row_entry(k, p, rng),
            Axis::Col => self.sample_col_entry(k, p, rng),
        };
        r.map(|e| e.0).ok_or_else(|| Error::Numeric(format!("line {} is empty", k + 1)))
    }

    /// Draws an entry with probability A_ij^2 / ||A||_F^2, returning (i, j, A_ij).
    pub fn sample_entry_sq<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(usize, usize, f64)> {
        let p = self.entry_sq.as_ref()?.sample(rng);
        Some((self.entry_row[p], self.row_col[p], self.row_val[p]))
    }

    /// Draws a row with probability ||a_i||_1^2 / sum_k ||a_k||_1^2.
    pub fn sample_row_l1sq<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        Some(self.row_l1sq.as_ref()?.sample(rng))
    }

    /// Draws a column with probability ||a_:j||_1^2 / sum_k ||a_:k||_1^2.
    pub fn sample_col_l1sq<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        Some(self.col_l1sq.as_ref()?.sample(rng))
    }

    /// Global sampler returning (row, column); the unused coordinate of the line
    /// samplers is reported as `None`.
    pub fn sample_global<R: Rng + ?Sized>(
        &self,
        kind: GlobalKind,
        rng: &mut R,
    ) -> Option<(Option<usize>, Option<usize>)> {
        match kind {
            GlobalKind::EntrySq => self.sample_entry_sq(rng).map(|(i, j, _)| (Some(i), Some(j))),
            GlobalKind::RowL1Sq => self.sample_row_l1sq(rng).map(|i| (Some(i), None)),
            GlobalKind::ColL1Sq => self.sample_col_l1sq(rng).map(|j| (None, Some(j))),
        }
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.m];
        self.matvec_into(x, &mut out)?;
        Ok(out)
    }

    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.n || out.len() != self.m {
            return Err(Error::Input(format!(
                "matvec dimension mismatch: matrix {}x{}, vector {}",
                self.m,
                self.n,
                x.len()
            )));
        }
        for (i, o) in out.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            *o = c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum();
        }
        Ok(())
    }

    /// x = A^T y.
    pub fn matvec_t(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n];
        self.matvec_t_into(y, &mut out)?;
        Ok(out)
    }

    pub fn matvec_t_into(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        if y.len() != self.m || out.len() != self.n {
            return Err(Error::Input(format!(
                "transposed matvec dimension mismatch: matrix {}x{}, vector {}",
                self.m,
                self.n,
                y.len()
            )));
        }
        for (j, o) in out.iter_mut().enumerate() {
            let (r, v) = self.col(j);
            *o = r.iter().zip(v).map(|(&i, &a)| a * y[i]).sum();
        }
        Ok(())
    }

    /// Copy of the matrix with every entry multiplied by `s` (s != 0).
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if s == 0.0 || !s.is_finite() {
            return Err(Error::Input(format!("invalid scale factor {s}")));
        }
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (i, j, v * s)).collect();
        Self::build(self.m, self.n, &t, false)
    }

    /// Estimate of the spectral norm by power iteration on A^T A from a fixed start.
    pub fn op_norm_estimate(&self, iters: usize) -> f64 {
        let mut x = vec![1.0 / (self.n as f64).sqrt(); self.n];
        let mut est = 0.0;
        for _ in 0..iters.max(1) {
            let y = self.matvec(&x).expect("dimensions match");
            let z = self.matvec_t(&y).expect("dimensions match");
            let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nz == 0.0 {
                return 0.0;
            }
            est = nz.sqrt();
            x = z.into_iter().map(|v| v / nz).collect();
        }
        est
    }

    /// Serializes as a Matrix Market "coordinate real general" file.
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::new();
        s.push_str("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.m, self.n, self.nnz());
        for (i, j, v) in self.triplets() {
            let _ = writeln!(s, "{} {} {:e}", i + 1, j + 1, v);
        }
        s
    }
}

fn sample_line<R: Rng + ?Sized>(s: &LineSamplers, k: usize, len: usize, p: u8, rng: &mut R) -> Option<usize> {
    if len == 0 {
        return None;
    }
    match p {
        0 => Some(rng.random_range(0..len)),
        1 => s.l1[k].as_ref().map(|d| d.sample(rng)),
        _ => s.l2[k].as_ref().map(|d| d.sample(rng)),
    }
}

/// Parses Matrix Market text ("coordinate real general" or "coordinate real symmetric").
pub fn parse_matrix_market(text: &str) -> Result<SparseMatrix> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Input("empty Matrix Market file".into()))?;
    let fields: Vec<String> = header.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(Error::Input(format!("line 1: unsupported header '{header}'")));
    }
    if fields[2] != "coordinate" {
        return Err(Error::Input(format!("line 1: unsupported format '{}'", fields[2])));
    }
    if fields[3] != "real" && fields[3] != "integer" && fields[3] != "double" {
        return Err(Error::Input(format!("line 1: unsupported field '{}'", fields[3])));
    }
    let symmetric = match fields[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(Error::Input(format!("line 1: unsupported symmetry '{other}'"))),
    };
    let mut size: Option<(usize, usize, usize)> = None;
    let mut trip = Vec::new();
    let mut seen = 0usize;
    for (ln, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let bad = |what: &str| Error::Input(format!("line {}: {what}: '{line}'", ln + 1));
        match size {
            None => {
                if toks.len() != 3 {
                    return Err(bad("size line must have three integers"));
                }
                let p = |t: &str| t.parse::<usize>().map_err(|_| bad("cannot parse size"));
                size = Some((p(toks[0])?, p(toks[1])?, p(toks[2])?));
            }
            Some((m, n, _)) => {
                if toks.len() != 3 {
                    return Err(bad("entry line must have three fields"));
                }
                let i: usize = toks[0].parse().map_err(|_| bad("cannot parse row index"))?;
                let j: usize = toks[1].parse().map_err(|_| bad("cannot parse column index"))?;
                let v: f64 = toks[2].parse().map_err(|_| bad("cannot parse value"))?;
                if i == 0 || j == 0 || i > m || j > n {
                    return Err(bad("index out of range"));
                }
                trip.push((i - 1, j - 1, v));
                if symmetric && i != j {
                    trip.push((j - 1, i - 1, v));
                }
                seen += 1;
            }
        }
    }
    let (m, n, count) = size.ok_or_else(|| Error::Input("missing size line".into()))?;
    if seen != count {
        return Err(Error::Input(format!("size line announces {count} entries but {seen} were found")));
    }
    SparseMatrix::from_triplets(m, n, &trip)
}

/// Reads a Matrix Market file from disk.
pub fn load_matrix_market(path: &Path) -> Result<SparseMatrix> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    parse_matrix_market(&text).map_err(|e| match e {
        Error::Input(msg) => Error::Input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Reads a plain-text vector with one real per line.
pub fn load_vector(path: &Path) -> Result<Vec<f64>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    parse_vector(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

pub fn parse_vector(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') || t.starts_with('#') {
            continue;
        }
        let v: f64 = t.parse().map_err(|_| Error::Input(format!("line {}: cannot parse '{t}'", ln + 1)))?;
        if !v.is_finite() {
            return Err(Error::Input(format!("line {}: nonfinite value", ln + 1)));
        }
        out.push(v);
    }
    Ok(out)
}
