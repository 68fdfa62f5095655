//! Command-line front end: instance generation, solver dispatch, reports and traces.
//!
//! Every command that produces results writes `report.json`, which echoes the full
//! command configuration, and `trace.csv`, which is appended row by row while the
//! solver runs. `replay` re-runs the configuration stored in a report.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::applications::{
    estimate_mu, max_ib, min_eb, regression_certificate, regression_solve, BallConfig, BallResult, Halfspaces,
    RegressionConfig, RegressionProblem,
};
use crate::error::{Error, Result};
use crate::estimators::{EstGeometry, EstimatorKind, Family, LConstants};
use crate::geometry::{norm, LocalNormSetup, SetupKind};
use crate::solvers::{
    solve_mirror_prox_baseline, solve_sublinear, solve_vr, with_trace_sink, SolveReport, SublinearConfig, TraceRow,
    VrConfig,
};
use crate::sparse_matrix::{load_matrix_market, load_vector, SparseMatrix};

/// Value distributions of generated instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GenDist {
    /// Uniform positions, values uniform in [-1, 1].
    Uniform,
    /// A few rows hold most of the extra nonzeros.
    Rowdense,
    /// One large entry per row and column, every other entry small.
    Numsparse,
}

/// Deterministic random m x n instance with exactly nnz nonzeros in which every row
/// and every column is nonzero. A random spanning tree of the bipartite row/column
/// graph is placed first; the remaining positions are drawn without repetition.
pub fn generate_instance(m: usize, n: usize, nnz: usize, dist: GenDist, seed: u64) -> Result<SparseMatrix> {
    if m == 0 || n == 0 {
        return Err(Error::Config("m and n must be positive".into()));
    }
    if nnz < m + n - 1 {
        return Err(Error::Config(format!("nnz = {nnz} is below m + n - 1 = {}", m + n - 1)));
    }
    if nnz as u128 > (m as u128) * (n as u128) {
        return Err(Error::Config(format!("nnz = {nnz} exceeds m * n")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = (0..m).collect();
    let mut cols: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    cols.shuffle(&mut rng);
    let mut pos: BTreeSet<(usize, usize)> = BTreeSet::new();
    pos.insert((rows[0], cols[0]));
    let (mut ri, mut ci) = (1, 1);
    while ri < m || ci < n {
        let take_row = ci >= n || (ri < m && rng.random_range(0..(m - ri + n - ci)) < m - ri);
        if take_row {
            let j = cols[rng.random_range(0..ci)];
            pos.insert((rows[ri], j));
            ri += 1;
        } else {
            let i = rows[rng.random_range(0..ri)];
            pos.insert((i, cols[ci]));
            ci += 1;
        }
    }
    let tree = pos.clone();
    let heavy: Vec<usize> = rows.iter().take((m / 16).max(1)).cloned().collect();
    let dense_fill = nnz as u128 * 2 > (m as u128) * (n as u128);
    let mut free: Vec<(usize, usize)> = Vec::new();
    if dense_fill {
        free = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|p| !pos.contains(p)).collect();
        free.shuffle(&mut rng);
    }
    while pos.len() < nnz {
        let p = if dense_fill {
            free.pop().expect("enough free positions")
        } else {
            let i = match dist {
                GenDist::Rowdense if rng.random::<f64>() < 0.5 => heavy[rng.random_range(0..heavy.len())],
                _ => rng.random_range(0..m),
            };
            (i, rng.random_range(0..n))
        };
        pos.insert(p);
    }
    let mut t = Vec::with_capacity(nnz);
    for &(i, j) in &pos {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let mag = match dist {
            GenDist::Numsparse => {
                if tree.contains(&(i, j)) {
                    rng.random_range(0.5..1.0)
                } else {
                    rng.random_range(0.001..0.01)
                }
            }
            _ => rng.random_range(0.05..1.0),
        };
        t.push((i, j, sign * mag));
    }
    SparseMatrix::from_triplets(m, n, &t)
}

/// Top-level parser.
#[derive(Debug, Parser)]
#[command(name = "saddlepoint", version, about = "Sparse bilinear saddle-point solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Subcommands; the serialized form is the configuration echo of a report.
#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Solve a bilinear game given as a Matrix Market file.
    Solve(SolveArgs),
    /// Least-squares regression.
    Regress(RegressArgs),
    /// Minimum enclosing ball of a point set.
    Mineb(MinebArgs),
    /// Maximum inscribed ball of a polytope given by halfspaces.
    Maxib(MaxibArgs),
    /// Generate a random sparse instance.
    Gen(GenArgs),
    /// Run several methods on one instance and summarize their costs.
    Bench(BenchArgs),
    /// Re-run the configuration echoed in a report.
    Replay(ReplayArgs),
}

/// Solution methods for `solve` and `bench`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sublinear,
    Vr,
    RowcolVr,
    MirrorProx,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Sublinear => "sublinear",
            Method::Vr => "vr",
            Method::RowcolVr => "rowcol-vr",
            Method::MirrorProx => "mirror-prox",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SolveArgs {
    /// l1l1, l2l1 or l2l2.
    #[arg(long)]
    pub geometry: String,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Estimator variant: auto, v1, v2, v3, oblivious, dynamic or a full name such as l2l1v2.
    #[arg(long, default_value = "auto")]
    pub estimator: String,
    #[arg(long)]
    pub eps: f64,
    /// Inner-loop regularization: auto or a positive real.
    #[arg(long, default_value = "auto")]
    pub alpha: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Record the exact gap every this many iterations (0: first and last only).
    #[arg(long, default_value_t = 0)]
    pub checkpoint: u64,
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[arg(long)]
    pub c: Option<PathBuf>,
    /// Overrides the iteration count (sublinear) or the outer iteration count (variance reduced).
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Overrides the inner iteration count of the variance-reduced methods.
    #[arg(long)]
    pub inner_iterations: Option<u64>,
    /// Use exact dense simplex updates in place of the approximate maintainer.
    #[arg(long)]
    pub exact_maintainers: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RegressArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Smallest eigenvalue of A^T A; estimated when absent.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub eps: f64,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub exact_maintainers: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct MinebArgs {
    /// One point per line, coordinates separated by spaces or commas.
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub checkpoint: u64,
    #[arg(long)]
    pub exact_maintainers: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct MaxibArgs {
    /// One halfspace a_1 ... a_n b per line, meaning <a, x> + b >= 0.
    #[arg(long)]
    pub halfspaces: PathBuf,
    /// Radius of a ball around the origin that contains the polytope.
    #[arg(long)]
    pub r_bound: Option<f64>,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub checkpoint: u64,
    #[arg(long)]
    pub exact_maintainers: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub nnz: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    pub dist: GenDist,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives instance.mtx and report.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    /// Comma-separated list of methods.
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub geometry: String,
    #[arg(long, default_value = "auto")]
    pub estimator: String,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub inner_iterations: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A report.json written by an earlier run.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Compare the new report with the old one, ignoring wall-clock fields.
    #[arg(long)]
    pub check: bool,
}

/// What a finished command hands back to `main`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// Process exit code (0 unless a benchmark or replay check failed).
    pub code: i32,
    pub message: String,
}

/// Runs a parsed command.
pub fn run(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Solve(a) => {
            let a = a.clone().absolute()?;
            let rep = cmd_solve(&a)?;
            Ok(Outcome { code: 0, message: format!("final gap {:.6e}", rep.final_gap) })
        }
        Command::Regress(a) => cmd_regress(&a.clone().absolute()?),
        Command::Mineb(a) => cmd_mineb(&a.clone().absolute()?),
        Command::Maxib(a) => cmd_maxib(&a.clone().absolute()?),
        Command::Gen(a) => cmd_gen(a),
        Command::Bench(a) => cmd_bench(&a.clone().absolute()?),
        Command::Replay(a) => cmd_replay(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli.command) {
        Ok(o) => {
            if !o.message.is_empty() {
                if o.code == 0 {
                    println!("{}", o.message);
                } else {
                    eprintln!("{}", o.message);
                }
            }
            o.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::Input(format!("{}: {e}", p.display())))
}

impl SolveArgs {
    fn absolute(mut self) -> Result<Self> {
        self.matrix = absolute(&self.matrix)?;
        self.b = self.b.as_deref().map(absolute).transpose()?;
        self.c = self.c.as_deref().map(absolute).transpose()?;
        Ok(self)
    }
}

impl RegressArgs {
    fn absolute(mut self) -> Result<Self> {
        self.matrix = absolute(&self.matrix)?;
        self.b = absolute(&self.b)?;
        Ok(self)
    }
}

impl MinebArgs {
    fn absolute(mut self) -> Result<Self> {
        self.points = absolute(&self.points)?;
        Ok(self)
    }
}

impl MaxibArgs {
    fn absolute(mut self) -> Result<Self> {
        self.halfspaces = absolute(&self.halfspaces)?;
        Ok(self)
    }
}

impl BenchArgs {
    fn absolute(mut self) -> Result<Self> {
        self.matrix = absolute(&self.matrix)?;
        Ok(self)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Input(format!("{}: {e}", path.display()))
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Rows of reals separated by whitespace or commas; blank lines and lines starting
/// with '#' are skipped.
pub fn parse_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let row = t
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Input(format!("line {}: '{s}' is not a finite real", ln + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn load_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_rows(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn load_halfspaces(path: &Path) -> Result<Halfspaces> {
    let rows = load_rows(path)?;
    let mut h = Halfspaces { normals: Vec::new(), offsets: Vec::new() };
    for (i, r) in rows.into_iter().enumerate() {
        if r.len() < 2 {
            return Err(Error::Input(format!("{}: halfspace {} needs a normal and an offset", path.display(), i + 1)));
        }
        let (a, b) = r.split_at(r.len() - 1);
        h.normals.push(a.to_vec());
        h.offsets.push(b[0]);
    }
    Ok(h)
}

/// Appends trace rows to `trace.csv`, writing each row through immediately.
struct TraceFile {
    file: Rc<RefCell<File>>,
    failed: Rc<RefCell<Option<String>>>,
    path: PathBuf,
}

impl TraceFile {
    fn create(dir: &Path) -> Result<Self> {
        let path = dir.join("trace.csv");
        let mut f = File::create(&path).map_err(|e| io_err(&path, e))?;
        writeln!(f, "iteration,elapsed_ns,gap_or_blank,coords_touched,matvecs").map_err(|e| io_err(&path, e))?;
        Ok(TraceFile { file: Rc::new(RefCell::new(f)), failed: Rc::new(RefCell::new(None)), path })
    }

    fn sink(&self) -> Box<dyn FnMut(&TraceRow)> {
        let file = self.file.clone();
        let failed = self.failed.clone();
        Box::new(move |r: &TraceRow| {
            let gap = r.gap.map(|g| format!("{g:e}")).unwrap_or_default();
            let mut f = file.borrow_mut();
            let res = writeln!(f, "{},{},{},{},{}", r.iteration, r.elapsed_ns, gap, r.coords_touched, r.matvecs)
                .and_then(|_| f.flush());
            if let Err(e) = res {
                failed.borrow_mut().get_or_insert(e.to_string());
            }
        })
    }

    fn run<T>(&self, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let out = with_trace_sink(self.sink(), f)?;
        if let Some(e) = self.failed.borrow().as_ref() {
            return Err(Error::Input(format!("{}: {e}", self.path.display())));
        }
        Ok(out)
    }
}

fn write_report(dir: &Path, config: &Command, summary: Value, details: Value) -> Result<()> {
    let path = dir.join("report.json");
    let doc = json!({ "config": config, "summary": summary, "details": details });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Input(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable value")
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn parse_alpha(s: &str) -> Result<Option<f64>> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Config(format!("--alpha must be 'auto' or a positive real, got '{s}'"))),
    }
}

/// Resolves the estimator flag for a geometry and method.
pub fn resolve_estimator(kind: SetupKind, method: Method, flag: &str, a: &SparseMatrix) -> Result<EstimatorKind> {
    let family = match method {
        Method::Sublinear => Family::SublinearCoord,
        Method::Vr => Family::VrCoord,
        Method::RowcolVr => Family::VrRowCol,
        Method::MirrorProx => {
            return Err(Error::Config("the mirror-prox baseline takes no estimator".into()));
        }
    };
    let flag = flag.to_ascii_lowercase();
    let geometry = if flag == "auto" {
        match kind {
            SetupKind::L1L1 => EstGeometry::L1L1,
            SetupKind::L2L1 => {
                let lc = LConstants::new(a);
                let v = [EstGeometry::L2L1v1, EstGeometry::L2L1v2, EstGeometry::L2L1v3];
                let best = (0..3).min_by(|&i, &j| lc.l21[i].total_cmp(&lc.l21[j])).expect("three variants");
                v[best]
            }
            SetupKind::L2L2 if family == Family::VrCoord => EstGeometry::L2L2Dynamic,
            SetupKind::L2L2 => EstGeometry::L2L2Oblivious,
        }
    } else {
        let prefix = match kind {
            SetupKind::L1L1 => "l1l1",
            SetupKind::L2L1 => "l2l1",
            SetupKind::L2L2 => "l2l2",
        };
        EstGeometry::from_str(&flag).or_else(|_| EstGeometry::from_str(&format!("{prefix}{flag}")))?
    };
    let matches = match kind {
        SetupKind::L1L1 => geometry == EstGeometry::L1L1,
        SetupKind::L2L1 => matches!(geometry, EstGeometry::L2L1v1 | EstGeometry::L2L1v2 | EstGeometry::L2L1v3),
        SetupKind::L2L2 => matches!(geometry, EstGeometry::L2L2Oblivious | EstGeometry::L2L2Dynamic),
    };
    if !matches {
        return Err(Error::Config(format!("estimator '{flag}' does not belong to the {kind:?} geometry")));
    }
    EstimatorKind::new(family, geometry)
}

/// Runs `solve`, writing report.json and trace.csv into `args.out`.
pub fn cmd_solve(args: &SolveArgs) -> Result<SolveReport> {
    let kind = SetupKind::from_str(&args.geometry)?;
    if !(args.eps > 0.0) {
        return Err(Error::Config(format!("--eps must be positive, got {}", args.eps)));
    }
    let alpha = parse_alpha(&args.alpha)?;
    let a = load_matrix_market(&args.matrix)?;
    let b = args.b.as_deref().map(load_vector).transpose()?;
    let c = args.c.as_deref().map(load_vector).transpose()?;
    let setup = LocalNormSetup::new(kind, a.rows(), a.cols());
    create_out_dir(&args.out)?;
    let trace = TraceFile::create(&args.out)?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (_, report) = trace.run(|| match args.method {
        Method::MirrorProx => solve_mirror_prox_baseline(&setup, &a, b.as_deref(), c.as_deref(), args.eps),
        Method::Sublinear => {
            let est = resolve_estimator(kind, args.method, &args.estimator, &a)?;
            let mut cfg = SublinearConfig::new(args.eps);
            cfg.iterations = args.iterations;
            cfg.seed = args.seed;
            cfg.checkpoint_every = args.checkpoint;
            solve_sublinear(&setup, &a, b.as_deref(), c.as_deref(), est, &cfg, &mut rng)
        }
        Method::Vr | Method::RowcolVr => {
            let est = resolve_estimator(kind, args.method, &args.estimator, &a)?;
            let mut cfg = VrConfig::new(args.eps);
            cfg.alpha = alpha;
            cfg.outer_iterations = args.iterations;
            cfg.inner_iterations = args.inner_iterations;
            cfg.seed = args.seed;
            cfg.checkpoint_every = args.checkpoint;
            cfg.exact_maintainers = args.exact_maintainers;
            solve_vr(&setup, &a, b.as_deref(), c.as_deref(), est, &cfg, &mut rng)
        }
    })?;
    let wall_ns = start.elapsed().as_nanos() as u64;
    let summary = json!({
        "method": args.method.name(),
        "final_gap": report.final_gap,
        "wall_ns": wall_ns,
        "matvecs": report.matvecs,
        "coords_touched": report.coords_touched,
        "touched_per_step": report.touched_per_step(),
    });
    write_report(&args.out, &Command::Solve(args.clone()), summary, to_value(&report))?;
    Ok(report)
}

fn cmd_regress(args: &RegressArgs) -> Result<Outcome> {
    if !(args.eps > 0.0) {
        return Err(Error::Config(format!("--eps must be positive, got {}", args.eps)));
    }
    if let Some(mu) = args.mu {
        if !(mu > 0.0) {
            return Err(Error::Config(format!("--mu must be positive, got {mu}")));
        }
    }
    let a = load_matrix_market(&args.matrix)?;
    let b = load_vector(&args.b)?;
    if b.len() != a.rows() {
        return Err(Error::Input(format!(
            "{}: length {} but the matrix has {} rows",
            args.b.display(),
            b.len(),
            a.rows()
        )));
    }
    let mu = match args.mu {
        Some(mu) => mu,
        None => {
            let mu = estimate_mu(&a, 2000, args.seed);
            if !(mu > 0.0) {
                return Err(Error::Config("A^T A looks singular; pass --mu".into()));
            }
            mu
        }
    };
    create_out_dir(&args.out)?;
    let trace = TraceFile::create(&args.out)?;
    let start = Instant::now();
    let mut cfg = RegressionConfig::new(args.eps);
    cfg.alpha = args.alpha;
    cfg.seed = args.seed;
    cfg.exact_maintainers = args.exact_maintainers;
    let prob = RegressionProblem { a, b, mu };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (x, report) = trace.run(|| regression_solve(&prob, &cfg, &mut rng))?;
    let wall_ns = start.elapsed().as_nanos() as u64;
    let r: Vec<f64> = prob.a.matvec(&x)?.iter().zip(&prob.b).map(|(s, t)| s - t).collect();
    let residual = norm(&r);
    let certificate = regression_certificate(&prob.a, &prob.b, mu, &x)?;
    let summary = json!({
        "residual_norm": residual,
        "distance_bound": certificate,
        "mu": mu,
        "x": x,
        "wall_ns": wall_ns,
        "matvecs": report.matvecs,
        "coords_touched": report.coords_touched,
    });
    write_report(&args.out, &Command::Regress(args.clone()), summary, to_value(&report))?;
    Ok(Outcome { code: 0, message: format!("residual norm {residual:.6e}") })
}

fn ball_summary(res: &BallResult, wall_ns: u64, radius_key: &str) -> Value {
    json!({
        "center": res.center,
        radius_key: res.radius,
        "bounds": res.bounds,
        "wall_ns": wall_ns,
        "matvecs": res.solves.iter().map(|s| s.matvecs).sum::<u64>(),
        "coords_touched": res.solves.iter().map(|s| s.coords_touched).sum::<u64>(),
    })
}

fn cmd_mineb(args: &MinebArgs) -> Result<Outcome> {
    let points = load_rows(&args.points)?;
    create_out_dir(&args.out)?;
    let trace = TraceFile::create(&args.out)?;
    let cfg =
        BallConfig { seed: args.seed, exact_maintainers: args.exact_maintainers, checkpoint_every: args.checkpoint };
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let res = trace.run(|| min_eb(&points, args.eps, &cfg, &mut rng))?;
    let summary = ball_summary(&res, start.elapsed().as_nanos() as u64, "radius");
    write_report(&args.out, &Command::Mineb(args.clone()), summary, to_value(&res.solves))?;
    Ok(Outcome { code: 0, message: format!("radius {:.6e}", res.radius) })
}

fn cmd_maxib(args: &MaxibArgs) -> Result<Outcome> {
    let h = load_halfspaces(&args.halfspaces)?;
    create_out_dir(&args.out)?;
    let trace = TraceFile::create(&args.out)?;
    let cfg =
        BallConfig { seed: args.seed, exact_maintainers: args.exact_maintainers, checkpoint_every: args.checkpoint };
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let res = trace.run(|| max_ib(&h, args.r_bound, args.eps, &cfg, &mut rng))?;
    let summary = ball_summary(&res, start.elapsed().as_nanos() as u64, "inradius");
    write_report(&args.out, &Command::Maxib(args.clone()), summary, to_value(&res.solves))?;
    Ok(Outcome { code: 0, message: format!("inradius {:.6e}", res.radius) })
}

fn cmd_gen(args: &GenArgs) -> Result<Outcome> {
    let a = generate_instance(args.m, args.n, args.nnz, args.dist, args.seed)?;
    create_out_dir(&args.out)?;
    let path = args.out.join("instance.mtx");
    std::fs::write(&path, a.to_matrix_market()).map_err(|e| io_err(&path, e))?;
    let lc = LConstants::new(&a);
    let s = a.stats();
    let summary = json!({
        "path": path,
        "stats": s,
        "l11": lc.l11,
        "lmax": lc.lmax,
        "l21": lc.l21,
        "l22": lc.l22,
        "lmax_sqrt_rcs": lc.lmax * (s.rcs as f64).sqrt(),
    });
    write_report(&args.out, &Command::Gen(args.clone()), summary, Value::Null)?;
    Ok(Outcome { code: 0, message: format!("wrote {}", path.display()) })
}

fn cmd_bench(args: &BenchArgs) -> Result<Outcome> {
    create_out_dir(&args.out)?;
    let mut rows = Vec::new();
    let mut all_within = true;
    for &method in &args.methods {
        let solve = SolveArgs {
            geometry: args.geometry.clone(),
            method,
            estimator: args.estimator.clone(),
            eps: args.eps,
            alpha: "auto".into(),
            seed: args.seed,
            checkpoint: 0,
            matrix: args.matrix.clone(),
            b: None,
            c: None,
            iterations: if method == Method::MirrorProx { None } else { args.iterations },
            inner_iterations: args.inner_iterations,
            exact_maintainers: false,
            out: args.out.join(method.name()),
        };
        let start = Instant::now();
        let rep = cmd_solve(&solve)?;
        let wall_ns = start.elapsed().as_nanos() as u64;
        all_within &= rep.final_gap <= 1.2 * args.eps;
        rows.push((method, wall_ns, rep));
    }
    let path = args.out.join("summary.csv");
    let mut text = String::from("method,wall_ns,coords_touched,matvecs,final_gap\n");
    for (method, wall_ns, rep) in &rows {
        text.push_str(&format!(
            "{},{},{},{},{:e}\n",
            method.name(),
            wall_ns,
            rep.coords_touched,
            rep.matvecs,
            rep.final_gap
        ));
    }
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    let summary = json!({
        "methods": rows.iter().map(|(m, w, r)| json!({
            "method": m.name(),
            "wall_ns": w,
            "coords_touched": r.coords_touched,
            "touched_per_step": r.touched_per_step(),
            "matvecs": r.matvecs,
            "final_gap": r.final_gap,
        })).collect::<Vec<_>>(),
        "all_within": all_within,
    });
    write_report(&args.out, &Command::Bench(args.clone()), summary, Value::Null)?;
    if all_within {
        Ok(Outcome { code: 0, message: format!("wrote {}", path.display()) })
    } else {
        Ok(Outcome { code: 1, message: format!("some final gap exceeds 1.2 eps; see {}", path.display()) })
    }
}

/// Drops wall-clock fields from a report so that two runs can be compared.
pub fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("elapsed_ns");
            map.remove("wall_ns");
            map.remove("out");
            map.remove("path");
            for (_, x) in map.iter_mut() {
                strip_timing(x);
            }
        }
        Value::Array(xs) => xs.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn read_report(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

/// The command echoed in a report, redirected to write into `out`.
pub fn echoed_command(report: &Value, out: &Path) -> Result<Command> {
    let cfg = report.get("config").cloned().ok_or_else(|| Error::Input("report has no config".into()))?;
    let mut cmd: Command = serde_json::from_value(cfg).map_err(|e| Error::Input(format!("config echo: {e}")))?;
    match &mut cmd {
        Command::Solve(a) => a.out = out.to_path_buf(),
        Command::Regress(a) => a.out = out.to_path_buf(),
        Command::Mineb(a) => a.out = out.to_path_buf(),
        Command::Maxib(a) => a.out = out.to_path_buf(),
        Command::Gen(a) => a.out = out.to_path_buf(),
        Command::Bench(a) => a.out = out.to_path_buf(),
        Command::Replay(_) => return Err(Error::Input("a replay report cannot be replayed".into())),
    }
    Ok(cmd)
}

fn cmd_replay(args: &ReplayArgs) -> Result<Outcome> {
    let old = read_report(&args.report)?;
    let cmd = echoed_command(&old, &args.out)?;
    let out = run(&cmd)?;
    if !args.check {
        return Ok(out);
    }
    let new = read_report(&args.out.join("report.json"))?;
    let (mut a, mut b) = (old, new);
    strip_timing(&mut a);
    strip_timing(&mut b);
    if a == b {
        Ok(Outcome { code: 0, message: "replay identical".into() })
    } else {
        Ok(Outcome { code: 1, message: "replay differs from the original report".into() })
    }
}
