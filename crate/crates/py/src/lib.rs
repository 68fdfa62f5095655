use std::str::FromStr;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use saddlepoint::applications::{self, BallConfig, Halfspaces, RegressionConfig, RegressionProblem};
use saddlepoint::cli::{resolve_estimator, Method};
use saddlepoint::geometry::{self, LocalNormSetup, SetupKind};
use saddlepoint::solvers::{self, SublinearConfig, VrConfig};
use saddlepoint::sparse_matrix::SparseMatrix;

type Triplets = Vec<(usize, usize, f64)>;

fn err(e: saddlepoint::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(m: usize, n: usize, entries: Triplets) -> PyResult<SparseMatrix> {
    SparseMatrix::from_triplets(m, n, &entries).map_err(err)
}

fn method(name: &str) -> PyResult<Method> {
    match name.to_ascii_lowercase().as_str() {
        "sublinear" => Ok(Method::Sublinear),
        "vr" => Ok(Method::Vr),
        "rowcol-vr" => Ok(Method::RowcolVr),
        "mirror-prox" => Ok(Method::MirrorProx),
        other => Err(PyValueError::new_err(format!("unknown method '{other}'"))),
    }
}

/// Exact duality gap of (x, y) for y^T A x + b^T x - c^T y.
#[pyfunction]
#[pyo3(signature = (geometry, m, n, entries, x, y, b=None, c=None))]
#[allow(clippy::too_many_arguments)]
fn gap(
    geometry: &str,
    m: usize,
    n: usize,
    entries: Triplets,
    x: Vec<f64>,
    y: Vec<f64>,
    b: Option<Vec<f64>>,
    c: Option<Vec<f64>>,
) -> PyResult<f64> {
    let kind = SetupKind::from_str(geometry).map_err(err)?;
    let a = matrix(m, n, entries)?;
    if x.len() != n || y.len() != m {
        return Err(PyValueError::new_err("x must have n entries and y must have m"));
    }
    let setup = LocalNormSetup::new(kind, m, n);
    let z = geometry::Point { x, y };
    Ok(geometry::gap(&setup, &a, b.as_deref(), c.as_deref(), &z))
}

/// Solves the bilinear problem and returns (x, y, final_gap, coords_touched).
#[pyfunction]
#[pyo3(signature = (geometry, method, m, n, entries, eps, seed=0, estimator="auto", b=None, c=None))]
#[allow(clippy::too_many_arguments)]
fn solve(
    geometry: &str,
    method: &str,
    m: usize,
    n: usize,
    entries: Triplets,
    eps: f64,
    seed: u64,
    estimator: &str,
    b: Option<Vec<f64>>,
    c: Option<Vec<f64>>,
) -> PyResult<(Vec<f64>, Vec<f64>, f64, u64)> {
    let kind = SetupKind::from_str(geometry).map_err(err)?;
    let method = self::method(method)?;
    let a = matrix(m, n, entries)?;
    let setup = LocalNormSetup::new(kind, m, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, c) = (b.as_deref(), c.as_deref());
    let (z, rep) = match method {
        Method::MirrorProx => solvers::solve_mirror_prox_baseline(&setup, &a, b, c, eps),
        Method::Sublinear => {
            let est = resolve_estimator(kind, method, estimator, &a).map_err(err)?;
            let mut cfg = SublinearConfig::new(eps);
            cfg.seed = seed;
            solvers::solve_sublinear(&setup, &a, b, c, est, &cfg, &mut rng)
        }
        Method::Vr | Method::RowcolVr => {
            let est = resolve_estimator(kind, method, estimator, &a).map_err(err)?;
            let mut cfg = VrConfig::new(eps);
            cfg.seed = seed;
            solvers::solve_vr(&setup, &a, b, c, est, &cfg, &mut rng)
        }
    }
    .map_err(err)?;
    Ok((z.x, z.y, rep.final_gap, rep.coords_touched))
}

/// Least-squares solution of A x = b given mu, a lower bound on the smallest
/// eigenvalue of A^T A.
#[pyfunction]
#[pyo3(signature = (m, n, entries, b, mu, eps, seed=0))]
fn regression(m: usize, n: usize, entries: Triplets, b: Vec<f64>, mu: f64, eps: f64, seed: u64) -> PyResult<Vec<f64>> {
    let prob = RegressionProblem { a: matrix(m, n, entries)?, b, mu };
    let mut cfg = RegressionConfig::new(eps);
    cfg.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, _) = applications::regression_solve(&prob, &cfg, &mut rng).map_err(err)?;
    Ok(x)
}

/// Approximate minimum enclosing ball, returned as (center, radius).
#[pyfunction]
#[pyo3(signature = (points, eps, seed=0))]
fn min_eb(points: Vec<Vec<f64>>, eps: f64, seed: u64) -> PyResult<(Vec<f64>, f64)> {
    let cfg = BallConfig { seed, ..BallConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let res = applications::min_eb(&points, eps, &cfg, &mut rng).map_err(err)?;
    Ok((res.center, res.radius))
}

/// Approximate maximum inscribed ball of {x : <a_i, x> + b_i >= 0}.
#[pyfunction]
#[pyo3(signature = (normals, offsets, eps, r_bound=None, seed=0))]
fn max_ib(
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    eps: f64,
    r_bound: Option<f64>,
    seed: u64,
) -> PyResult<(Vec<f64>, f64)> {
    let cfg = BallConfig { seed, ..BallConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = Halfspaces { normals, offsets };
    let res = applications::max_ib(&h, r_bound, eps, &cfg, &mut rng).map_err(err)?;
    Ok((res.center, res.radius))
}

/// Exact minimum enclosing ball by move-to-front recursion.
#[pyfunction]
#[pyo3(signature = (points, seed=0))]
fn welzl(points: Vec<Vec<f64>>, seed: u64) -> PyResult<(Vec<f64>, f64)> {
    applications::welzl_reference(&points, seed).map_err(err)
}

#[pymodule]
fn saddlepoint_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gap, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(regression, m)?)?;
    m.add_function(wrap_pyfunction!(min_eb, m)?)?;
    m.add_function(wrap_pyfunction!(max_ib, m)?)?;
    m.add_function(wrap_pyfunction!(welzl, m)?)?;
    Ok(())
}
