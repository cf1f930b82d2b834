//! Python bindings. Images and masks cross the boundary as flat row-major
//! sequences plus `width` and `height`; masks may be bools or numbers
//! (non-zero is object).

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use isoseg::energy::{ChanVeseConfig, EnergyConfig};
use isoseg::grid::ScalarField;
use isoseg::levelset::{self, BinaryMask};
use isoseg::methods::{self, Method, ModelSet, SegmentConfig, Start};
use isoseg::photogeom;
use isoseg::pose::Pose;
use isoseg::synth::{self, Sample, SynthSpec};
use isoseg::training::{train_models, TrainConfig, TrainMode};
use isoseg::{io, metrics, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Image { .. } => PyOSError::new_err(e.to_string()),
        e if e.is_degenerate() => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn field(values: Vec<f64>, width: usize, height: usize) -> PyResult<ScalarField> {
    ScalarField::new(width, height, values).map_err(py_err)
}

fn mask(values: Vec<f64>, width: usize, height: usize) -> PyResult<BinaryMask> {
    BinaryMask::new(width, height, values.into_iter().map(|v| v != 0.0).collect()).map_err(py_err)
}

/// Signed distance to the mask boundary, negative inside.
#[pyfunction]
fn signed_distance(mask_values: Vec<f64>, width: usize, height: usize) -> PyResult<Vec<f64>> {
    let m = mask(mask_values, width, height)?;
    Ok(levelset::signed_distance(&m).map_err(py_err)?.field.into_values())
}

/// Mean intensity along the iso-contours of the object's signed distance,
/// on a uniform grid over τ ∈ [−1, 0].
#[pyfunction]
#[pyo3(signature = (image, mask_values, width, height, bins = photogeom::DEFAULT_BINS))]
fn extract_profile(
    image: Vec<f64>,
    mask_values: Vec<f64>,
    width: usize,
    height: usize,
    bins: usize,
) -> PyResult<Vec<f64>> {
    let img = field(image, width, height)?;
    let sdf = levelset::signed_distance(&mask(mask_values, width, height)?).map_err(py_err)?;
    let p = photogeom::extract_profile(&img, &sdf, bins).map_err(py_err)?;
    Ok(p.samples().to_vec())
}

#[pyfunction]
fn dice(a: Vec<f64>, b: Vec<f64>, width: usize, height: usize) -> PyResult<f64> {
    metrics::dice(&mask(a, width, height)?, &mask(b, width, height)?).map_err(py_err)
}

#[pyfunction]
fn segmentation_error(a: Vec<f64>, b: Vec<f64>, width: usize, height: usize) -> PyResult<usize> {
    metrics::segmentation_error(&mask(a, width, height)?, &mask(b, width, height)?).map_err(py_err)
}

fn mask_list(m: &BinaryMask) -> Vec<bool> {
    m.data().to_vec()
}

/// Synthetic training set and occluded, noisy test image.
#[pyfunction]
#[pyo3(signature = (seed = 1, count = 12, size = 128, noise_variance = 15.0, occlusion = 0.3, discs = false))]
fn generate<'py>(
    py: Python<'py>,
    seed: u64,
    count: usize,
    size: usize,
    noise_variance: f64,
    occlusion: f64,
    discs: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = SynthSpec {
        family: if discs { synth::Family::Discs } else { synth::Family::Fighters },
        count,
        width: size,
        height: size,
        noise_variance,
        occlusion,
        seed,
        ..SynthSpec::default()
    };
    let data = synth::generate(&spec).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("width", size)?;
    d.set_item("height", size)?;
    d.set_item(
        "training_images",
        data.training.iter().map(|s| s.image.values().to_vec()).collect::<Vec<_>>(),
    )?;
    d.set_item(
        "training_masks",
        data.training.iter().map(|s| mask_list(&s.mask)).collect::<Vec<_>>(),
    )?;
    d.set_item("test_image", data.test.image.values().to_vec())?;
    d.set_item("test_mask", mask_list(&data.test.mask))?;
    d.set_item("background", data.background)?;
    Ok(d)
}

/// Shape, appearance and/or coupled models.
#[pyclass(name = "Models")]
struct PyModels {
    inner: ModelSet,
}

#[pymethods]
impl PyModels {
    /// Train from lists of flat images and masks. `mode` is shape,
    /// appearance, decoupled or coupled.
    #[staticmethod]
    #[pyo3(signature = (images, masks, width, height, mode = "coupled", shape_modes = 4,
                        appearance_modes = 4, coupled_modes = 4, bins = photogeom::DEFAULT_BINS,
                        align = true))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        images: Vec<Vec<f64>>,
        masks: Vec<Vec<f64>>,
        width: usize,
        height: usize,
        mode: &str,
        shape_modes: usize,
        appearance_modes: usize,
        coupled_modes: usize,
        bins: usize,
        align: bool,
    ) -> PyResult<Self> {
        if images.len() != masks.len() {
            return Err(PyValueError::new_err("need one mask per image"));
        }
        let samples = images
            .into_iter()
            .zip(masks)
            .map(|(i, m)| {
                Ok(Sample {
                    image: field(i, width, height)?,
                    mask: mask(m, width, height)?,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        let config = TrainConfig {
            shape_modes,
            appearance_modes,
            coupled_modes,
            bins,
            align,
            block_weight: None,
        };
        let mode: TrainMode = mode.parse().map_err(py_err)?;
        let inner = train_models(&samples, &config, mode).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_model(path).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::model_from_str(text).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::write_model(path, &self.inner).map_err(py_err)
    }

    fn to_text(&self) -> PyResult<String> {
        io::model_to_string(&self.inner).map_err(py_err)
    }

    /// Number of modes per model, `None` where a model is absent.
    #[getter]
    fn shape_modes(&self) -> Option<usize> {
        self.inner.shape.as_ref().map(|s| s.num_components())
    }

    #[getter]
    fn appearance_modes(&self) -> Option<usize> {
        self.inner.appearance.as_ref().map(|a| a.num_components())
    }

    #[getter]
    fn coupled_modes(&self) -> Option<usize> {
        self.inner.coupled.as_ref().map(|c| c.num_components())
    }

    /// Mean appearance profile (decoupled model first, then coupled).
    fn mean_profile(&self) -> Option<Vec<f64>> {
        self.inner
            .appearance
            .as_ref()
            .map(|a| a.mean.values().to_vec())
            .or(self.inner.coupled.as_ref().map(|c| c.appearance_mean.values().to_vec()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Models(shape={:?}, appearance={:?}, coupled={:?})",
            self.shape_modes(),
            self.appearance_modes(),
            self.coupled_modes()
        )
    }
}

/// Segments one image with cv, cvs, esad or esac. `pose` is
/// `(tx, ty, theta, scale)` of the model relative to the image center.
#[pyfunction]
#[pyo3(signature = (image, width, height, models = None, algorithm = "esac",
                    pose = (0.0, 0.0, 0.0, 1.0), alpha = 1.0, beta = 0.1, max_iterations = 2000))]
#[allow(clippy::too_many_arguments)]
fn segment<'py>(
    py: Python<'py>,
    image: Vec<f64>,
    width: usize,
    height: usize,
    models: Option<PyRef<'py, PyModels>>,
    algorithm: &str,
    pose: (f64, f64, f64, f64),
    alpha: f64,
    beta: f64,
    max_iterations: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let img = field(image, width, height)?;
    let method: Method = algorithm.parse().map_err(py_err)?;
    let empty = ModelSet::default();
    let set = models.as_ref().map_or(&empty, |m| &m.inner);
    let config = SegmentConfig {
        energy: EnergyConfig {
            alpha,
            beta,
            max_iterations,
            ..EnergyConfig::default()
        },
        chan_vese: ChanVeseConfig {
            max_iterations,
            ..ChanVeseConfig::default()
        },
        inside_mean: None,
    };
    let start = Start {
        pose: Pose::new(pose.0, pose.1, pose.2, pose.3).map_err(py_err)?,
        ..Start::default()
    };
    let r = py
        .detach(|| methods::segment(&img, set, method, &start, &config))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("mask", mask_list(&r.mask))?;
    d.set_item("levelset", r.levelset.values().to_vec())?;
    d.set_item("energy", r.trace.iter().map(|t| t.total).collect::<Vec<_>>())?;
    d.set_item("e_in", r.trace.iter().map(|t| t.e_in).collect::<Vec<_>>())?;
    d.set_item("e_out", r.trace.iter().map(|t| t.e_out).collect::<Vec<_>>())?;
    d.set_item("pose", (r.pose.tx, r.pose.ty, r.pose.theta, r.pose.scale))?;
    d.set_item("w", r.params.w.clone())?;
    d.set_item("v", r.params.v.clone())?;
    d.set_item("u_out", r.u_out)?;
    d.set_item("profile", r.profile.as_ref().map(|p| p.values().to_vec()))?;
    d.set_item("converged", r.converged)?;
    d.set_item("iterations", r.iterations)?;
    Ok(d)
}

#[pymodule]
fn pyisoseg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModels>()?;
    m.add_function(wrap_pyfunction!(signed_distance, m)?)?;
    m.add_function(wrap_pyfunction!(extract_profile, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(segmentation_error, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    Ok(())
}
