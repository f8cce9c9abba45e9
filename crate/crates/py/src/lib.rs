//! Python bindings: avatars, cameras, rendering, fitting, diffusion and
//! editing. Arrays cross the boundary as flat lists of floats.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use uvhead::diffusion::{self, AnalyticGaussDenoiser};
use uvhead::edit::{self, ChannelSelector, UVMask};
use uvhead::fit::{fit_scene, training_psnr, FitConfig, FitMode, PayloadKind};
use uvhead::{checks, io, render, spatial, Error, RenderConfig, Vec3};

fn py_err(e: Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for uvhead::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn vec3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn selector(s: &str) -> PyResult<ChannelSelector> {
    s.parse().py()
}

#[pyclass(name = "Avatar", module = "uvhead", from_py_object)]
#[derive(Clone)]
struct PyAvatar {
    inner: uvhead::UVAvatar,
}

#[pymethods]
impl PyAvatar {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyAvatar {
            inner: io::load_avatar(path).py()?,
        })
    }

    /// Avatar seeded from an anchor text file.
    #[staticmethod]
    #[pyo3(signature = (path, res=8, channels=8))]
    fn from_anchors(path: PathBuf, res: usize, channels: usize) -> PyResult<Self> {
        let grid = io::load_anchor_grid(path).py()?;
        Ok(PyAvatar {
            inner: uvhead::model::init_from_anchors(&grid, res, channels).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_avatar(&self.inner, path).py()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn res(&self) -> usize {
        self.inner.res()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &PyAvatar) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Avatar({}x{}, S={}, C={})",
            self.inner.height,
            self.inner.width,
            self.inner.res(),
            self.inner.channels()
        )
    }

    fn centers(&self) -> Vec<[f64; 3]> {
        self.inner.poses.iter().map(|p| vec3(&p.center)).collect()
    }

    fn anchors(&self) -> Vec<[f64; 3]> {
        self.inner.anchors.iter().map(vec3).collect()
    }

    /// Nine pose scalars per texel: center, Euler rotation, radii.
    fn poses(&self) -> Vec<[f64; 9]> {
        self.inner.poses.iter().map(|p| p.to_array()).collect()
    }

    fn payload(&self, texel: usize) -> PyResult<Vec<f64>> {
        self.inner
            .payloads
            .get(texel)
            .map(|p| p.data().to_vec())
            .ok_or_else(|| PyValueError::new_err(format!("texel {texel} out of range")))
    }

    fn set_payload(&mut self, texel: usize, values: Vec<f64>) -> PyResult<()> {
        let (res, ch) = (self.inner.res(), self.inner.channels());
        let slot = self
            .inner
            .payloads
            .get_mut(texel)
            .ok_or_else(|| PyValueError::new_err(format!("texel {texel} out of range")))?;
        *slot = uvhead::TriPlanePayload::from_vec(res, ch, values).py()?;
        Ok(())
    }
}

#[pyclass(name = "RenderMlp", module = "uvhead", from_py_object)]
#[derive(Clone)]
struct PyMlp {
    inner: render::RenderMlp,
}

#[pymethods]
impl PyMlp {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyMlp {
            inner: io::load_mlp(path).py()?,
        })
    }

    /// The sidecar stored next to an avatar file.
    #[staticmethod]
    fn for_avatar(path: PathBuf) -> PyResult<Self> {
        Self::load(io::mlp_sidecar(path))
    }

    #[staticmethod]
    fn passthrough() -> Self {
        PyMlp {
            inner: io::passthrough_mlp(),
        }
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_mlp(&self.inner, path).py()
    }

    fn weights(&self) -> Vec<f64> {
        self.inner.to_flat()
    }

    /// RGB and opacity for an 8-channel feature.
    fn eval(&self, feature: [f64; 8]) -> [f64; 4] {
        self.inner.eval(&feature).out
    }
}

#[pyclass(name = "Camera", module = "uvhead", from_py_object)]
#[derive(Clone)]
struct PyCamera {
    inner: uvhead::Camera,
}

#[pymethods]
impl PyCamera {
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        fov_y: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> PyResult<Self> {
        let v = |a: [f64; 3]| Vec3::new(a[0], a[1], a[2]);
        Ok(PyCamera {
            inner: uvhead::Camera::look_at(v(eye), v(target), v(up), fov_y, width, height, near, far).py()?,
        })
    }

    #[staticmethod]
    fn load_all(path: PathBuf) -> PyResult<Vec<PyCamera>> {
        Ok(io::load_cameras(path).py()?.into_iter().map(|inner| PyCamera { inner }).collect())
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    fn position(&self) -> [f64; 3] {
        vec3(&self.inner.position())
    }
}

fn render_config(k: usize, samples: usize, seed: u64) -> RenderConfig {
    RenderConfig {
        knn_k: k,
        samples_per_ray: samples,
        seed,
        ..RenderConfig::default()
    }
}

/// Returns a dict with `width`, `height`, `color` (H·W·3), `depth` and
/// `alpha` (H·W each).
#[pyfunction]
#[pyo3(signature = (avatar, mlp, camera, k=3, samples=32, seed=0))]
fn render_image<'py>(
    py: Python<'py>,
    avatar: &PyAvatar,
    mlp: &PyMlp,
    camera: &PyCamera,
    k: usize,
    samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = render_config(k, samples, seed);
    let out = py
        .detach(|| render::render_image(&avatar.inner, &mlp.inner, &camera.inner, &cfg))
        .py()?;
    let d = PyDict::new(py);
    d.set_item("width", out.width)?;
    d.set_item("height", out.height)?;
    d.set_item("color", out.color)?;
    d.set_item("depth", out.depth)?;
    d.set_item("alpha", out.alpha)?;
    Ok(d)
}

#[pyfunction]
fn psnr(image: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    render::psnr(&image, &reference).py()
}

#[pyfunction]
#[pyo3(signature = (out, kind="checker-sphere", views=16, resolution=32, seed=0))]
fn generate_toy_dataset(py: Python<'_>, out: PathBuf, kind: &str, views: usize, resolution: usize, seed: u64) -> PyResult<()> {
    let spec = io::ToySpec {
        views,
        resolution,
        seed,
        ..io::ToySpec::new(kind.parse().py()?)
    };
    py.detach(|| io::generate_toy_dataset(&spec, &out).map(|_| ())).py()
}

/// Fits a dataset directory; returns `(avatar, mlp, loss_history, psnr)`.
#[pyfunction]
#[pyo3(signature = (dataset, iters=1000, payload="triplane", mode="direct", k=3, patch=16, seed=0))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    dataset: PathBuf,
    iters: usize,
    payload: &str,
    mode: &str,
    k: usize,
    patch: usize,
    seed: u64,
) -> PyResult<(PyAvatar, PyMlp, Vec<f64>, f64)> {
    let payload = match payload {
        "triplane" => PayloadKind::TriPlane,
        "vector" => PayloadKind::Vector,
        other => return Err(PyValueError::new_err(format!("unknown payload {other:?}"))),
    };
    let mode = match mode {
        "direct" => FitMode::Direct,
        "latent" => FitMode::Latent,
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    let data = io::load_dataset(&dataset).py()?;
    let cfg = FitConfig {
        iterations: iters,
        patch_size: patch,
        payload,
        mode,
        knn_k: Some(k),
        seed,
        render: data.spec.render.clone(),
        ..FitConfig::default()
    };
    let (r, p) = py
        .detach(|| {
            let r = fit_scene(&data.views, &data.anchors, &cfg)?;
            let p = training_psnr(&r.avatar, &r.mlp, &data.views, &cfg.render_config())?;
            Ok::<_, Error>((r, p))
        })
        .py()?;
    Ok((PyAvatar { inner: r.avatar }, PyMlp { inner: r.mlp }, r.history, p))
}

/// `(alphas, sigmas)` of the cosine schedule with `steps` steps.
#[pyfunction]
fn cosine_schedule(steps: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let s = diffusion::cosine_schedule(steps).py()?;
    Ok((s.alphas, s.sigmas))
}

/// Normalized, unfolded tensor as `((rows, cols, channels), flat values)`.
#[pyfunction]
fn normalize_avatar(avatar: &PyAvatar) -> PyResult<((usize, usize, usize), Vec<f64>)> {
    let t = diffusion::normalize_avatar(&avatar.inner).py()?;
    Ok((t.shape(), t.data))
}

#[pyfunction]
fn denormalize_avatar(shape: (usize, usize, usize), values: Vec<f64>, template: &PyAvatar) -> PyResult<PyAvatar> {
    let t = diffusion::UVTensor {
        rows: shape.0,
        cols: shape.1,
        channels: shape.2,
        data: values,
    };
    if t.data.len() != shape.0 * shape.1 * shape.2 {
        return Err(PyValueError::new_err("values do not match the shape"));
    }
    Ok(PyAvatar {
        inner: diffusion::denormalize_avatar(&t, &template.inner).py()?,
    })
}

/// Reverse sampling with the analytic Gaussian denoiser over `chains`
/// independent scalar chains.
#[pyfunction]
#[pyo3(signature = (mean, std, steps=200, chains=10000, seed=0))]
fn sample_gaussian(py: Python<'_>, mean: f64, std: f64, steps: usize, chains: usize, seed: u64) -> PyResult<Vec<f64>> {
    let sched = diffusion::cosine_schedule(steps).py()?;
    let d = AnalyticGaussDenoiser::new(mean, std).py()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = py
        .detach(|| diffusion::reverse_sample(&sched, &d, (1, chains, 1), &mut rng, steps))
        .py()?;
    Ok(out.data)
}

fn uv_mask(avatar: &PyAvatar, cells: Vec<bool>, channels: &str) -> PyResult<UVMask> {
    UVMask::new(avatar.inner.height, avatar.inner.width, cells, selector(channels)?).py()
}

/// Inpaints an avatar: masked texels keep the selected channels.
#[pyfunction]
#[pyo3(signature = (avatar, cells, channels="both", mean=0.0, std=0.5, steps=1000, seed=0))]
#[allow(clippy::too_many_arguments)]
fn inpaint(
    py: Python<'_>,
    avatar: &PyAvatar,
    cells: Vec<bool>,
    channels: &str,
    mean: f64,
    std: f64,
    steps: usize,
    seed: u64,
) -> PyResult<PyAvatar> {
    let mask = uv_mask(avatar, cells, channels)?;
    let sched = diffusion::cosine_schedule(steps).py()?;
    let d = AnalyticGaussDenoiser::new(mean, std).py()?;
    let known = diffusion::normalize_avatar(&avatar.inner).py()?;
    let elements = mask.element_mask(avatar.inner.res(), avatar.inner.channels());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = py
        .detach(|| diffusion::inpaint_sample(&sched, &d, &known, &elements, &mut rng, steps))
        .py()?;
    Ok(PyAvatar {
        inner: diffusion::denormalize_avatar(&out, &avatar.inner).py()?,
    })
}

#[pyfunction]
#[pyo3(signature = (target, source, cells, channels="both"))]
fn region_transfer(target: &PyAvatar, source: &PyAvatar, cells: Vec<bool>, channels: &str) -> PyResult<PyAvatar> {
    let mask = uv_mask(target, cells, channels)?;
    Ok(PyAvatar {
        inner: edit::region_transfer(&target.inner, &source.inner, &mask).py()?,
    })
}

#[pyfunction]
fn swap_shape_texture(a: &PyAvatar, b: &PyAvatar) -> PyResult<(PyAvatar, PyAvatar)> {
    let (x, y) = edit::swap_shape_texture(&a.inner, &b.inner).py()?;
    Ok((PyAvatar { inner: x }, PyAvatar { inner: y }))
}

#[pyfunction]
#[pyo3(signature = (a, b, weight, channels="both"))]
fn interpolate(a: &PyAvatar, b: &PyAvatar, weight: f64, channels: &str) -> PyResult<PyAvatar> {
    Ok(PyAvatar {
        inner: edit::interpolate(&a.inner, &b.inner, weight, selector(channels)?).py()?,
    })
}

#[pyfunction]
fn apply_expression_offset(avatar: &PyAvatar, vertices: Vec<[f64; 3]>) -> PyResult<PyAvatar> {
    let v: Vec<Vec3> = vertices.iter().map(|a| Vec3::new(a[0], a[1], a[2])).collect();
    Ok(PyAvatar {
        inner: edit::apply_expression_offset(&avatar.inner, &v).py()?,
    })
}

/// Indices of the `k` nearest centers, ties broken by index.
#[pyfunction]
fn knn(centers: Vec<[f64; 3]>, query: [f64; 3], k: usize) -> PyResult<Vec<usize>> {
    let pts: Vec<Vec3> = centers.iter().map(|a| Vec3::new(a[0], a[1], a[2])).collect();
    let index = spatial::UniformGridIndex::build(&pts, spatial::suggested_cell_size(&pts)).py()?;
    Ok(index
        .knn(&Vec3::new(query[0], query[1], query[2]), k)
        .py()?
        .into_iter()
        .map(|n| n.index)
        .collect())
}

/// Runs an oracle suite (`grad`, `knn` or `diffusion`); True when it passes.
#[pyfunction]
#[pyo3(signature = (suite, seed=11))]
fn check(py: Python<'_>, suite: &str, seed: u64) -> PyResult<bool> {
    py.detach(|| match suite {
        "grad" => Ok(checks::grad_check(seed, 24)?.iter().all(|o| o.passed())),
        "knn" => Ok(checks::knn_check(seed, 1024, 1000, 3)?.mismatches == 0),
        "diffusion" => Ok(checks::diffusion_check(seed, 10_000)?.passed()),
        other => Err(Error::InvalidArgument(format!("unknown suite {other:?}"))),
    })
    .py()
}

#[pymodule]
#[pyo3(name = "uvhead")]
fn uvhead_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAvatar>()?;
    m.add_class::<PyMlp>()?;
    m.add_class::<PyCamera>()?;
    m.add_function(wrap_pyfunction!(render_image, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(generate_toy_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_avatar, m)?)?;
    m.add_function(wrap_pyfunction!(denormalize_avatar, m)?)?;
    m.add_function(wrap_pyfunction!(sample_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(inpaint, m)?)?;
    m.add_function(wrap_pyfunction!(region_transfer, m)?)?;
    m.add_function(wrap_pyfunction!(swap_shape_texture, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate, m)?)?;
    m.add_function(wrap_pyfunction!(apply_expression_offset, m)?)?;
    m.add_function(wrap_pyfunction!(knn, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    Ok(())
}
