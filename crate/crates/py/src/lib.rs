//! Python bindings: polygons, intervals, discrete eigenvalues and shape
//! derivatives, Hessian spectra, certification, bounds, descent and torsion.
//! Structured reports are returned as JSON text with the numeric annotation
//! of the command-line outputs.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use polyspec::certify::Interval as CoreInterval;
use polyspec::hessian::ShapeState;
use polyspec::meshgen::fan_refined_mesh;
use polyspec::polygeom::{self, HatWeights};
use polyspec::report::document;

fn err(e: polyspec::Error) -> PyErr {
    match e {
        polyspec::Error::InvalidArgument(_) | polyspec::Error::Parse(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn doc<T: serde::Serialize>(what: &str, v: &T) -> PyResult<String> {
    document(&what, v).map_err(err)
}

/// Simple counter-clockwise polygon.
#[pyclass(module = "polyspec")]
#[derive(Clone)]
pub struct Polygon {
    inner: polygeom::Polygon,
}

#[pymethods]
impl Polygon {
    #[new]
    fn new(vertices: Vec<(f64, f64)>) -> PyResult<Self> {
        let v = vertices.into_iter().map(|(x, y)| [x, y]).collect();
        Ok(Self { inner: polygeom::Polygon::new(v).map_err(err)? })
    }

    /// Regular `n`-gon inscribed in the unit circle with a vertex at (1, 0).
    #[staticmethod]
    fn regular(n: usize) -> PyResult<Self> {
        Ok(Self { inner: polygeom::regular_polygon(n).map_err(err)? })
    }

    /// Seeded random polygon with vertex radii in [0.5, 1.5].
    #[staticmethod]
    fn random(n: usize, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: polyspec::descent::random_polygon(n, seed).map_err(err)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn vertices(&self) -> Vec<(f64, f64)> {
        self.inner.vertices().iter().map(|p| (p[0], p[1])).collect()
    }

    fn coords(&self) -> Vec<f64> {
        self.inner.coords()
    }

    fn area(&self) -> f64 {
        polygeom::polygon_area(&self.inner)
    }

    fn area_gradient(&self) -> Vec<f64> {
        polygeom::area_gradient(&self.inner).iter().copied().collect()
    }

    fn edge_lengths(&self) -> Vec<f64> {
        self.inner.edge_lengths()
    }

    fn angles(&self) -> Vec<f64> {
        self.inner.angles()
    }

    fn diameter(&self) -> f64 {
        self.inner.diameter()
    }

    fn scaled(&self, t: f64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.scaled(t).map_err(err)? })
    }

    fn displaced(&self, d: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: self.inner.displaced(&d).map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!("Polygon(n={}, area={})", self.inner.n(), polygeom::polygon_area(&self.inner))
    }
}

/// Closed interval with outward rounding.
#[pyclass(module = "polyspec")]
#[derive(Clone, Copy)]
pub struct Interval {
    inner: CoreInterval,
}

#[pymethods]
impl Interval {
    #[new]
    fn new(lo: f64, hi: f64) -> PyResult<Self> {
        Ok(Self { inner: CoreInterval::new(lo, hi).map_err(err)? })
    }

    #[getter]
    fn lo(&self) -> f64 {
        self.inner.lo
    }

    #[getter]
    fn hi(&self) -> f64 {
        self.inner.hi
    }

    fn width(&self) -> f64 {
        self.inner.width()
    }

    fn contains(&self, x: f64) -> bool {
        self.inner.contains(x)
    }

    fn sqrt(&self) -> Self {
        Self { inner: self.inner.sqrt() }
    }

    fn __add__(&self, o: &Self) -> Self {
        Self { inner: self.inner + o.inner }
    }

    fn __sub__(&self, o: &Self) -> Self {
        Self { inner: self.inner - o.inner }
    }

    fn __mul__(&self, o: &Self) -> Self {
        Self { inner: self.inner * o.inner }
    }

    fn __truediv__(&self, o: &Self) -> Self {
        Self { inner: self.inner / o.inner }
    }

    fn __repr__(&self) -> String {
        format!("Interval({:e}, {:e})", self.inner.lo, self.inner.hi)
    }
}

/// Discrete first eigenpair of a polygon on its `levels`-refined ear-clip
/// mesh, with the exact derivatives of the discrete eigenvalue.
#[pyclass(module = "polyspec")]
pub struct Shape {
    inner: ShapeState,
}

#[pymethods]
impl Shape {
    #[new]
    fn new(polygon: &Polygon, levels: usize) -> PyResult<Self> {
        let mesh = fan_refined_mesh(&polygon.inner, levels).map_err(err)?;
        Ok(Self { inner: ShapeState::new(mesh, HatWeights::BalancedFan, None).map_err(err)? })
    }

    #[getter]
    fn lambda1(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn lambda2(&self) -> f64 {
        self.inner.lambda2
    }

    /// `J = |P| lambda_1`.
    fn j(&self) -> f64 {
        self.inner.j_value()
    }

    fn grad_lambda(&self) -> Vec<f64> {
        polyspec::hessian::eig_gradient(&self.inner)
    }

    fn grad_j(&self) -> Vec<f64> {
        self.inner.grad_j()
    }

    /// Full `2n x 2n` Hessian of `J` as nested lists.
    fn hessian_j(&self) -> PyResult<Vec<Vec<f64>>> {
        let h = polyspec::hessian::hessian_blocks_direct(&self.inner).map_err(err)?;
        let m = &h.hess_j;
        Ok((0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect())
    }
}

/// Eigenvalues of the Hessian of `J` at the regular `n`-gon, ascending.
#[pyfunction]
fn hessian_spectrum(n: usize, m: usize) -> PyResult<Vec<f64>> {
    Ok(polyspec::hessian::hessian_spectrum(n, m).map_err(err)?.mu)
}

/// Spectrum report (blocks, multiplicities) as annotated JSON.
#[pyfunction]
fn spectrum_report(n: usize, m: usize) -> PyResult<String> {
    doc("spectrum", &polyspec::hessian::hessian_spectrum(n, m).map_err(err)?)
}

/// Guaranteed enclosure of the exact eigenvalue.
#[pyfunction]
fn eigenvalue_interval(lambda_h: f64, c1: f64, h: f64) -> PyResult<Interval> {
    Ok(Interval { inner: polyspec::certify::eigenvalue_interval(lambda_h, c1, h).map_err(err)? })
}

/// Local-minimality verdict over a gamma grid, as annotated JSON.
#[pyfunction]
#[pyo3(signature = (n, m, gamma_grid=None))]
fn certify(n: usize, m: usize, gamma_grid: Option<Vec<f64>>) -> PyResult<String> {
    let grid = gamma_grid.unwrap_or_else(polyspec::certify::default_gamma_grid);
    doc("certify", &polyspec::certify::certify_local_min(n, m, &grid).map_err(err)?)
}

/// Surgery constants, D_max, Makai radius and covering count, as annotated JSON.
#[pyfunction]
#[pyo3(signature = (k_bound=8.0, n=5, delta=1e-3))]
fn bounds(k_bound: f64, n: usize, delta: f64) -> PyResult<String> {
    doc("bounds", &polyspec::bounds::bounds_report(k_bound, n, delta).map_err(err)?)
}

#[pyfunction]
fn lambda_lipschitz(lambda_p: f64, lambda_q: f64, lambda_cap: f64, delta: f64) -> PyResult<f64> {
    polyspec::bounds::lambda_lipschitz(lambda_p, lambda_q, lambda_cap, delta).map_err(err)
}

/// Gradient descent on `J` from `Polygon.random(n, seed)`; returns the final
/// polygon and the diagnostics as annotated JSON.
#[pyfunction]
#[pyo3(signature = (n, seed, max_level=6))]
fn descend(n: usize, seed: u64, max_level: usize) -> PyResult<(Polygon, String)> {
    let top = max_level.max(2);
    let cfg = polyspec::descent::DescentConfig {
        levels: (2..=top).collect(),
        eval_levels: (top, top + 1),
        seed,
        ..Default::default()
    };
    let p0 = polyspec::descent::random_polygon(n, seed).map_err(err)?;
    let run = polyspec::descent::descend(&p0, &cfg).map_err(err)?;
    Ok((Polygon { inner: run.final_polygon.clone() }, doc("descend", &run.diagnostics)?))
}

/// Stability trials of random `eps` perturbations, as annotated JSON.
#[pyfunction]
#[pyo3(signature = (n, eps, count=20, seed=0, levels=4))]
fn stability(n: usize, eps: f64, count: usize, seed: u64, levels: usize) -> PyResult<String> {
    doc("stability", &polyspec::stability::stability_trials(n, eps, count, seed, levels).map_err(err)?)
}

/// Torsional rigidity of a polygon on its `levels`-refined ear-clip mesh.
#[pyfunction]
fn torsion(polygon: &Polygon, levels: usize) -> PyResult<f64> {
    let mesh = fan_refined_mesh(&polygon.inner, levels).map_err(err)?;
    Ok(polyspec::torsion::solve_torsion(&mesh).map_err(err)?.t)
}

/// Torsion Hessian report at the regular `n`-gon, as annotated JSON.
#[pyfunction]
fn torsion_report(n: usize, m: usize) -> PyResult<String> {
    doc("torsion", &polyspec::torsion::torsion_report(n, m).map_err(err)?)
}

#[pymodule]
#[pyo3(name = "polyspec")]
fn polyspec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

/// Adds all classes and functions to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Polygon>()?;
    m.add_class::<Interval>()?;
    m.add_class::<Shape>()?;
    m.add_function(wrap_pyfunction!(hessian_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum_report, m)?)?;
    m.add_function(wrap_pyfunction!(eigenvalue_interval, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(bounds, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_lipschitz, m)?)?;
    m.add_function(wrap_pyfunction!(descend, m)?)?;
    m.add_function(wrap_pyfunction!(stability, m)?)?;
    m.add_function(wrap_pyfunction!(torsion, m)?)?;
    m.add_function(wrap_pyfunction!(torsion_report, m)?)?;
    Ok(())
}
