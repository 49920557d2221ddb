//! Python bindings. Positions are lists of `(x, y, z)` tuples and masks are
//! row-major lists of rows of booleans.

use std::path::PathBuf;

use fluidrecon::config::RunConfig;
use fluidrecon::pipeline;
use fluidrecon::sim::{simulate as run_simulation, ScenarioSpec};
use fluidrecon::{density, kernels, render, surface, BinaryMask, Error, GridSpec, Vec3};
use pyo3::exceptions::{PyFileNotFoundError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

type Point = (f64, f64, f64);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    let mut inner = &e;
    while let Error::Frame { source, .. } = inner {
        inner = source;
    }
    match inner {
        Error::NotFound(_) => PyFileNotFoundError::new_err(msg),
        Error::Io { .. } => PyOSError::new_err(msg),
        Error::Numeric(_) | Error::CapExceeded { .. } => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn vecs(points: Vec<Point>) -> Vec<Vec3> {
    points
        .into_iter()
        .map(|(x, y, z)| Vec3::new(x, y, z))
        .collect()
}

fn points(v: &[Vec3]) -> Vec<Point> {
    v.iter().map(|p| (p.x, p.y, p.z)).collect()
}

fn mask_from_rows(rows: Vec<Vec<bool>>) -> PyResult<BinaryMask> {
    let height = rows.len();
    let width = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("mask rows differ in length"));
    }
    BinaryMask::from_values(width, height, rows.concat()).map_err(to_py)
}

fn mask_rows(mask: &BinaryMask) -> Vec<Vec<bool>> {
    mask.values()
        .chunks(mask.width().max(1))
        .map(|r| r.to_vec())
        .collect()
}

fn toml_value(obj: &Bound<'_, PyAny>) -> PyResult<toml::Value> {
    if let Ok(b) = obj.extract::<bool>() {
        return Ok(toml::Value::Boolean(b));
    }
    if let Ok(i) = obj.extract::<i64>() {
        return Ok(toml::Value::Integer(i));
    }
    if let Ok(f) = obj.extract::<f64>() {
        return Ok(toml::Value::Float(f));
    }
    if let Ok(list) = obj.extract::<Vec<f64>>() {
        return Ok(toml::Value::Array(
            list.into_iter().map(toml::Value::Float).collect(),
        ));
    }
    Err(PyValueError::new_err(format!(
        "unsupported parameter value {obj}"
    )))
}

fn py_value<'py>(py: Python<'py>, v: &toml::Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        toml::Value::Boolean(b) => b.into_pyobject(py)?.to_owned().into_any(),
        toml::Value::Integer(i) => i.into_pyobject(py)?.into_any(),
        toml::Value::Float(f) => f.into_pyobject(py)?.into_any(),
        toml::Value::String(s) => s.into_pyobject(py)?.into_any(),
        toml::Value::Array(a) => {
            let items = a
                .iter()
                .map(|x| py_value(py, x))
                .collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        other => other.to_string().into_pyobject(py)?.into_any(),
    })
}

/// Reconstruction parameters: `HyperParams(h, **overrides)`.
#[pyclass(name = "HyperParams", from_py_object)]
#[derive(Clone)]
struct PyHyperParams {
    inner: fluidrecon::HyperParams,
}

#[pymethods]
impl PyHyperParams {
    #[new]
    #[pyo3(signature = (h, **overrides))]
    fn new(h: f64, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut table = toml::Table::new();
        if let Some(d) = overrides {
            for (k, v) in d.iter() {
                table.insert(k.extract::<String>()?, toml_value(&v)?);
            }
        }
        Ok(Self {
            inner: fluidrecon::HyperParams::with_overrides(h, &table).map_err(to_py)?,
        })
    }

    /// Reads a `params.toml` file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: pipeline::read_params(&path).map_err(to_py)?,
        })
    }

    /// Copy with some fields changed.
    #[pyo3(signature = (**overrides))]
    fn replace(&self, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut table = toml::Table::new();
        if let Some(d) = overrides {
            for (k, v) in d.iter() {
                table.insert(k.extract::<String>()?, toml_value(&v)?);
            }
        }
        Ok(Self {
            inner: self.inner.overridden(&table).map_err(to_py)?,
        })
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let table =
            toml::Table::try_from(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let d = PyDict::new(py);
        for (k, v) in &table {
            d.set_item(k, py_value(py, v)?)?;
        }
        Ok(d)
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h
    }

    #[getter]
    fn rho0(&self) -> f64 {
        self.inner.rho0
    }

    fn __repr__(&self) -> String {
        format!(
            "HyperParams(h={}, n_outer={})",
            self.inner.h, self.inner.n_outer
        )
    }
}

/// Pinhole camera.
#[pyclass(name = "Camera", from_py_object)]
#[derive(Clone)]
struct PyCamera {
    inner: fluidrecon::PinholeCamera,
}

#[pymethods]
impl PyCamera {
    #[staticmethod]
    #[pyo3(signature = (eye, target, focal, width, height, up = (0.0, 0.0, 1.0)))]
    fn look_at(
        eye: Point,
        target: Point,
        focal: f64,
        width: usize,
        height: usize,
        up: Point,
    ) -> PyResult<Self> {
        let v = vecs(vec![eye, target, up]);
        Ok(Self {
            inner: fluidrecon::PinholeCamera::look_at(v[0], v[1], v[2], focal, width, height)
                .map_err(to_py)?,
        })
    }

    /// `(u, v, depth)`, or `None` behind the camera.
    fn project(&self, p: Point) -> Option<Point> {
        self.inner
            .project(&Vec3::new(p.0, p.1, p.2))
            .map(|q| (q.u, q.v, q.depth))
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }
}

#[pyfunction]
fn poly6(r: f64, h: f64) -> PyResult<f64> {
    kernels::poly6(r, h).map_err(to_py)
}

#[pyfunction]
fn spiky_grad_magnitude(r: f64, h: f64) -> PyResult<f64> {
    kernels::spiky_grad_magnitude(r, h).map_err(to_py)
}

#[pyfunction]
fn density_constraint(positions: Vec<Point>, params: &PyHyperParams) -> PyResult<Vec<f64>> {
    density::density_constraint(&vecs(positions), &params.inner).map_err(to_py)
}

/// One density projection; returns the moved positions.
#[pyfunction]
fn density_step(positions: Vec<Point>, params: &PyHyperParams) -> PyResult<Vec<Point>> {
    let mut p = vecs(positions);
    density::apply_density(&mut p, &params.inner).map_err(to_py)?;
    Ok(points(&p))
}

#[pyfunction]
fn render_mask(positions: Vec<Point>, camera: &PyCamera, params: &PyHyperParams) -> Vec<Vec<bool>> {
    mask_rows(&render::render_mask(
        &vecs(positions),
        &camera.inner,
        &params.inner.render_settings(),
    ))
}

/// `{"smape", "iou", "grad", "mean_grad_norm"}` for one view.
#[pyfunction]
fn loss_gradient<'py>(
    py: Python<'py>,
    positions: Vec<Point>,
    camera: &PyCamera,
    mask: Vec<Vec<bool>>,
    params: &PyHyperParams,
) -> PyResult<Bound<'py, PyDict>> {
    let mask = mask_from_rows(mask)?;
    let r = render::loss_gradient(
        &vecs(positions),
        &camera.inner,
        &mask,
        &params.inner.render_settings(),
        params.inner.eps_s,
    )
    .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("smape", r.smape)?;
    d.set_item("iou", r.iou)?;
    d.set_item("grad", points(&r.grad))?;
    d.set_item("mean_grad_norm", r.mean_grad_norm)?;
    Ok(d)
}

/// Oriented surface samples: `(points, normals)`.
#[pyfunction]
#[pyo3(signature = (positions, params, spacing = None))]
fn surface_points(
    positions: Vec<Point>,
    params: &PyHyperParams,
    spacing: Option<f64>,
) -> PyResult<(Vec<Point>, Vec<Point>)> {
    let s = spacing.unwrap_or(0.25 * params.inner.h);
    let c = surface::surface_points(&vecs(positions), &params.inner, s).map_err(to_py)?;
    Ok((points(&c.points), points(&c.normals)))
}

/// Voxel IoU of two particle sets on the grid `[lo, hi]` at `resolution`.
#[pyfunction]
fn iou_3d(
    a: Vec<Point>,
    b: Vec<Point>,
    params: &PyHyperParams,
    lo: Point,
    hi: Point,
    resolution: f64,
) -> PyResult<f64> {
    let ends = vecs(vec![lo, hi]);
    let grid = GridSpec::covering(ends[0], ends[1], resolution).map_err(to_py)?;
    let t = surface::default_occupancy_threshold(&params.inner).map_err(to_py)?;
    let ga = surface::voxelize(&vecs(a), &params.inner, &grid, t).map_err(to_py)?;
    let gb = surface::voxelize(&vecs(b), &params.inner, &grid, t).map_err(to_py)?;
    surface::iou_3d(&ga, &gb).map_err(to_py)
}

/// Simulates a scenario file into a dataset directory; returns the frame count.
#[pyfunction]
fn simulate(scenario: PathBuf, out_dir: PathBuf) -> PyResult<usize> {
    let spec = ScenarioSpec::load(&scenario).map_err(to_py)?;
    let out = run_simulation(&spec).map_err(to_py)?;
    pipeline::write_simulation(&out, &out_dir).map_err(to_py)?;
    Ok(out.states.len())
}

/// Runs a reconstruction configuration; returns `(first_frame, frames_total, final_count)`.
#[pyfunction]
#[pyo3(signature = (config, resume = false))]
fn reconstruct(config: PathBuf, resume: bool) -> PyResult<(usize, usize, usize)> {
    let cfg = RunConfig::load(&config).map_err(to_py)?;
    let s = pipeline::run_reconstruction(&cfg, resume, |_, _| {}).map_err(to_py)?;
    Ok((s.first_frame, s.frames_total, s.final_count))
}

/// Per-frame metrics of a reconstruction against a dataset, as dicts.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    gt_dir: PathBuf,
    rec_dir: PathBuf,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let params = pipeline::read_params(&gt_dir.join(pipeline::PARAMS_FILE)).map_err(to_py)?;
    let metrics = pipeline::evaluate_dirs(&gt_dir, &rec_dir, &params, None).map_err(to_py)?;
    metrics
        .iter()
        .map(|m| {
            let d = PyDict::new(py);
            d.set_item("frame", m.frame)?;
            d.set_item("iou3d", m.iou3d)?;
            d.set_item("iou2d", m.iou2d)?;
            d.set_item("mean_abs_density", m.mean_abs_density)?;
            d.set_item("n_gt", m.n_gt)?;
            d.set_item("n_rec", m.n_rec)?;
            Ok(d)
        })
        .collect()
}

/// Positions stored in a particle file.
#[pyfunction]
fn read_particles(path: PathBuf) -> PyResult<Vec<Point>> {
    Ok(points(
        &fluidrecon::io::read_particles(&path)
            .map_err(to_py)?
            .positions,
    ))
}

#[pymodule]
fn fluidrecon_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHyperParams>()?;
    m.add_class::<PyCamera>()?;
    m.add_function(wrap_pyfunction!(poly6, m)?)?;
    m.add_function(wrap_pyfunction!(spiky_grad_magnitude, m)?)?;
    m.add_function(wrap_pyfunction!(density_constraint, m)?)?;
    m.add_function(wrap_pyfunction!(density_step, m)?)?;
    m.add_function(wrap_pyfunction!(render_mask, m)?)?;
    m.add_function(wrap_pyfunction!(loss_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(surface_points, m)?)?;
    m.add_function(wrap_pyfunction!(iou_3d, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(read_particles, m)?)?;
    Ok(())
}
