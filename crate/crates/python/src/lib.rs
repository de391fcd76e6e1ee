//! Python bindings. Grids cross the boundary as flat row-major lists.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use sparseflow::curation;
use sparseflow::metrics;
use sparseflow::pipeline::{self, PipelineConfig};
use sparseflow::scenes;
use sparseflow::tensor_io::{self as io, Planar, Planes};
use sparseflow::warping::{self, Border};

fn err(e: sparseflow::Error) -> PyErr {
    if e.is_io() {
        PyIOError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// Planar image with 1 or 3 channels, values nominally in [0, 1].
#[pyclass(name = "Image", module = "pysparseflow", skip_from_py_object)]
#[derive(Clone)]
pub struct PyImage(io::Image);

#[pymethods]
impl PyImage {
    #[new]
    fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> PyResult<Self> {
        let planes = Planes::new(channels, height, width, data).map_err(err)?;
        Ok(Self(io::Image::new(planes).map_err(err)?))
    }

    #[staticmethod]
    fn read_png(path: &str) -> PyResult<Self> {
        io::read_png(path).map(Self).map_err(err)
    }

    fn write_png(&self, path: &str) -> PyResult<()> {
        io::write_png(&self.0, path).map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.channels(), self.0.height(), self.0.width())
    }

    fn data(&self) -> Vec<f64> {
        self.0.planes().data().to_vec()
    }
}

/// Dense two-channel displacement field.
#[pyclass(name = "FlowField", module = "pysparseflow", skip_from_py_object)]
#[derive(Clone)]
pub struct PyFlowField(io::FlowField);

#[pymethods]
impl PyFlowField {
    #[new]
    fn new(height: usize, width: usize, u: Vec<f64>, v: Vec<f64>) -> PyResult<Self> {
        io::FlowField::from_uv(height, width, u, v).map(Self).map_err(err)
    }

    #[staticmethod]
    fn constant(height: usize, width: usize, u: f64, v: f64) -> PyResult<Self> {
        io::FlowField::constant(height, width, u, v).map(Self).map_err(err)
    }

    #[staticmethod]
    fn read_flo(path: &str) -> PyResult<Self> {
        io::read_flo(path).map(Self).map_err(err)
    }

    fn write_flo(&self, path: &str) -> PyResult<()> {
        io::write_flo(&self.0, path).map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.height(), self.0.width())
    }

    fn u(&self) -> Vec<f64> {
        self.0.u().to_vec()
    }

    fn v(&self) -> Vec<f64> {
        self.0.v().to_vec()
    }
}

/// Descriptor grid at scale `2^-scale_exponent` of the image.
#[pyclass(name = "FeatureMap", module = "pysparseflow", skip_from_py_object)]
#[derive(Clone)]
pub struct PyFeatureMap(io::FeatureMap);

#[pymethods]
impl PyFeatureMap {
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        io::read_fmap(path).map(Self).map_err(err)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        io::write_fmap(&self.0, path).map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.channels(), self.0.height(), self.0.width())
    }

    #[getter]
    fn scale_exponent(&self) -> u8 {
        self.0.scale_exponent()
    }
}

fn border(name: &str) -> PyResult<Border> {
    match name {
        "clamp" => Ok(Border::Clamp),
        "zero" => Ok(Border::Zero),
        _ => Err(PyValueError::new_err(format!("unknown border {name:?}"))),
    }
}

#[pyfunction]
#[pyo3(signature = (image, flow, border_mode = "clamp"))]
fn backward_warp(image: &PyImage, flow: &PyFlowField, border_mode: &str) -> PyResult<PyImage> {
    warping::backward_warp(&image.0, &flow.0, border(border_mode)?).map(PyImage).map_err(err)
}

/// Returns the splatted image and the per-pixel splat weights.
#[pyfunction]
fn forward_warp(image: &PyImage, flow: &PyFlowField) -> PyResult<(PyImage, Vec<f64>)> {
    let (out, w) = warping::forward_warp(&image.0, &flow.0).map_err(err)?;
    Ok((PyImage(out), w.values().to_vec()))
}

/// `(d0, d1, height, width)` on the grid downscaled by `2^scale_exponent`.
#[pyfunction]
#[pyo3(signature = (i0, i1, ft0, ft1, scale_exponent = 0, tau = warping::DEFAULT_HOLE_TAU))]
fn difference_maps(
    i0: &PyImage,
    i1: &PyImage,
    ft0: &PyFlowField,
    ft1: &PyFlowField,
    scale_exponent: u8,
    tau: f64,
) -> PyResult<(Vec<f64>, Vec<f64>, usize, usize)> {
    let d = sparseflow::flaw::difference_maps_at_scale(&i0.0, &i1.0, &ft0.0, &ft1.0, tau, scale_exponent).map_err(err)?;
    Ok((d.d0.values().to_vec(), d.d1.values().to_vec(), d.d0.height(), d.d0.width()))
}

#[pyfunction]
fn psnr(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    metrics::psnr(&a.0, &b.0).map_err(err)
}

#[pyfunction]
fn ssim(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    metrics::ssim(&a.0, &b.0).map_err(err)
}

#[pyfunction]
fn endpoint_error(flow: &PyFlowField, gt: &PyFlowField) -> PyResult<f64> {
    metrics::endpoint_error(&flow.0, &gt.0, None).map_err(err)
}

/// `(mean_magnitude, top_p_min_magnitude)`.
#[pyfunction]
#[pyo3(signature = (flow, p = curation::DEFAULT_TOP_FRACTION))]
fn motion_stats(flow: &PyFlowField, p: f64) -> PyResult<(f64, f64)> {
    let s = curation::motion_stats(&flow.0, p).map_err(err)?;
    Ok((s.mean_magnitude, s.top_p_min_magnitude))
}

/// The moving-square scene with ground truth, corrupted initial flows and
/// content features.
#[pyclass(name = "Fixture", module = "pysparseflow", skip_from_py_object)]
pub struct PyFixture(scenes::Fixture);

#[pymethods]
impl PyFixture {
    #[staticmethod]
    #[pyo3(signature = (seed = scenes::DEFAULT_SEED))]
    fn moving_square(seed: u64) -> PyResult<Self> {
        scenes::moving_square_fixture(seed).map(Self).map_err(err)
    }

    #[getter]
    fn i0(&self) -> PyImage {
        PyImage(self.0.scene.i0.clone())
    }

    #[getter]
    fn i1(&self) -> PyImage {
        PyImage(self.0.scene.i1.clone())
    }

    #[getter]
    fn igt(&self) -> PyImage {
        PyImage(self.0.scene.igt.clone())
    }

    #[getter]
    fn ft0_gt(&self) -> PyFlowField {
        PyFlowField(self.0.scene.ft0.clone())
    }

    #[getter]
    fn ft1_gt(&self) -> PyFlowField {
        PyFlowField(self.0.scene.ft1.clone())
    }

    #[getter]
    fn ft0_init(&self) -> PyFlowField {
        PyFlowField(self.0.ft0_init.clone())
    }

    #[getter]
    fn ft1_init(&self) -> PyFlowField {
        PyFlowField(self.0.ft1_init.clone())
    }

    #[getter]
    fn a0(&self) -> PyFeatureMap {
        PyFeatureMap(self.0.a0.clone())
    }

    #[getter]
    fn a1(&self) -> PyFeatureMap {
        PyFeatureMap(self.0.a1.clone())
    }

    fn psnr_uncompensated(&self) -> PyResult<f64> {
        self.0.psnr_uncompensated().map_err(err)
    }
}

/// Runs the pipeline; returns `(ft0, ft1, k, support_t0, support_t1)`.
#[pyfunction]
#[pyo3(signature = (i0, i1, ft0, ft1, a0, a1, sparsity, t = pipeline::DEFAULT_T))]
#[allow(clippy::too_many_arguments)]
fn compensate(
    i0: &PyImage,
    i1: &PyImage,
    ft0: &PyFlowField,
    ft1: &PyFlowField,
    a0: &PyFeatureMap,
    a1: &PyFeatureMap,
    sparsity: f64,
    t: f64,
) -> PyResult<(PyFlowField, PyFlowField, usize, usize, usize)> {
    let c = pipeline::compensate(&i0.0, &i1.0, &ft0.0, &ft1.0, &a0.0, &a1.0, t, sparsity, &PipelineConfig::default(), None)
        .map_err(err)?;
    let r = c.report;
    Ok((PyFlowField(c.ft0), PyFlowField(c.ft1), r.k, r.support_t0, r.support_t1))
}

/// Midpoint frame with constant `1 - t` fusion.
#[pyfunction]
#[pyo3(signature = (i0, i1, ft0, ft1, t = pipeline::DEFAULT_T))]
fn synthesize(i0: &PyImage, i1: &PyImage, ft0: &PyFlowField, ft1: &PyFlowField, t: f64) -> PyResult<PyImage> {
    pipeline::midpoint(&i0.0, &i1.0, &ft0.0, &ft1.0, t).map(PyImage).map_err(err)
}

#[pymodule]
fn pysparseflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyFlowField>()?;
    m.add_class::<PyFeatureMap>()?;
    m.add_class::<PyFixture>()?;
    m.add_function(wrap_pyfunction!(backward_warp, m)?)?;
    m.add_function(wrap_pyfunction!(forward_warp, m)?)?;
    m.add_function(wrap_pyfunction!(difference_maps, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(endpoint_error, m)?)?;
    m.add_function(wrap_pyfunction!(motion_stats, m)?)?;
    m.add_function(wrap_pyfunction!(compensate, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    Ok(())
}
