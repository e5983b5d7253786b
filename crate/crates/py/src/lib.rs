//! Python bindings: the core tensor types, the matcher and refinement ops,
//! the codec/bundle round trip and the metrics.

use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use ffca_core::codec::rc_roundtrip as core_rc_roundtrip;
use ffca_core::io::{decode_pnm, encode_pnm};
use ffca_core::matcher::{self, Direction, IndexScale, MatchIndexMap, SearchWindow};
use ffca_core::metrics::{self, RDCurve, RDPoint};
use ffca_core::pipeline::bench::analytic_reduction as core_analytic_reduction;
use ffca_core::pipeline::synth::{synth_pair as core_synth_pair, TextureKind};
use ffca_core::pipeline::{self, Bundle};
use ffca_core::pyramid::{extract_pyramid as core_extract_pyramid, ExtractorConfig, PyramidRole};
use ffca_core::refine::{self, ChannelSelection, SelectionMode};
use ffca_core::tensor::{Dims, FeatureMap, ImagePlane};
use ffca_core::weights::{NetworkConfig, NetworkWeights};
use ffca_core::Error;

create_exception!(ffca_py, FormatError, PyValueError, "A bundle, bitstream or weights file is malformed.");
create_exception!(ffca_py, InvariantError, PyRuntimeError, "An internal consistency check failed.");

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::Shape(_) => PyValueError::new_err(e.to_string()),
        Error::Format(_) | Error::Weights { .. } => FormatError::new_err(e.to_string()),
        Error::Invariant(_) => InvariantError::new_err(e.to_string()),
        Error::Io(io) => PyOSError::new_err(io.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for ffca_core::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn parse_direction(s: &str) -> PyResult<Direction> {
    match s {
        "leftward" | "left" => Ok(Direction::Leftward),
        "rightward" | "right" => Ok(Direction::Rightward),
        other => Err(PyValueError::new_err(format!("direction must be leftward or rightward, got {other:?}"))),
    }
}

fn parse_mode(s: &str) -> PyResult<SelectionMode> {
    match s {
        "rms" => Ok(SelectionMode::Rms),
        "raw_l2" => Ok(SelectionMode::RawL2),
        other => Err(PyValueError::new_err(format!("mode must be rms or raw_l2, got {other:?}"))),
    }
}

/// Channel-major float tensor of shape `(channels, height, width)`.
#[pyclass(name = "FeatureMap", module = "ffca_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyFeatureMap {
    pub inner: FeatureMap,
}

#[pymethods]
impl PyFeatureMap {
    #[new]
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> PyResult<Self> {
        Ok(Self { inner: FeatureMap::new(channels, height, width, data).py_err()? })
    }

    #[staticmethod]
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { inner: FeatureMap::zeros(channels, height, width) }
    }

    #[getter]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.inner.channels(), self.inner.height(), self.inner.width())
    }

    /// Flat values in `(c, y, x)` order.
    pub fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> PyResult<f32> {
        let (ch, h, w) = self.shape();
        if c >= ch || y >= h || x >= w {
            return Err(PyValueError::new_err(format!("index ({c}, {y}, {x}) outside {:?}", self.shape())));
        }
        Ok(self.inner.get(c, y, x))
    }

    pub fn avg_pool2(&self) -> PyResult<Self> {
        Ok(Self { inner: self.inner.avg_pool2().py_err()? })
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("FeatureMap{:?}", self.shape())
    }
}

/// Image with samples in `[0, 1]`, one or three channels.
#[pyclass(name = "Image", module = "ffca_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyImage {
    pub inner: ImagePlane,
}

#[pymethods]
impl PyImage {
    #[new]
    pub fn new(channels: usize, height: usize, width: usize, samples: Vec<f32>) -> PyResult<Self> {
        Ok(Self { inner: ImagePlane::new(channels, height, width, samples).py_err()? })
    }

    #[staticmethod]
    pub fn from_pnm(data: &[u8]) -> PyResult<Self> {
        Ok(Self { inner: decode_pnm(data).py_err()? })
    }

    pub fn to_pnm<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &encode_pnm(&self.inner))
    }

    #[getter]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.inner.channels(), self.inner.height(), self.inner.width())
    }

    pub fn tolist(&self) -> Vec<f32> {
        self.inner.samples().to_vec()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Image{:?}", self.shape())
    }
}

/// Pipeline settings; construct from TOML text or take the defaults.
#[pyclass(name = "PipelineConfig", module = "ffca_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    pub inner: pipeline::PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    pub fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(text) => pipeline::PipelineConfig::from_toml(text).py_err()?,
            None => pipeline::PipelineConfig::default(),
        };
        Ok(Self { inner })
    }

    pub fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn patch(&self) -> usize {
        self.inner.patch
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }

    #[getter]
    fn quality(&self) -> u8 {
        self.inner.quality
    }

    #[getter]
    fn window(&self) -> (usize, usize) {
        (self.inner.d_max, self.inner.slack)
    }
}

/// Per-patch match coordinates of one level.
#[pyclass(name = "MatchMap", module = "ffca_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyMatchMap {
    pub inner: MatchIndexMap,
}

#[pymethods]
impl PyMatchMap {
    #[getter]
    pub fn grid(&self) -> (usize, usize) {
        (self.inner.rows, self.inner.cols)
    }

    #[getter]
    pub fn level(&self) -> usize {
        self.inner.level
    }

    #[getter]
    pub fn patch(&self) -> usize {
        self.inner.patch
    }

    /// `(u, v, rho)` of patch `(m, n)`.
    pub fn get(&self, m: usize, n: usize) -> PyResult<(usize, usize, f64)> {
        if m >= self.inner.rows || n >= self.inner.cols {
            return Err(PyValueError::new_err(format!("patch ({m}, {n}) outside {:?}", self.grid())));
        }
        let e = self.inner.get(m, n);
        Ok((e.u, e.v, e.rho))
    }

    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        self.inner.entries().iter().map(|e| (e.u, e.v, e.rho)).collect()
    }

    pub fn to_csv(&self) -> String {
        self.inner.to_csv()
    }
}

#[pyfunction]
fn cosine_distance(a: Vec<f32>, b: Vec<f32>) -> PyResult<f64> {
    matcher::cosine_distance(&a, &b).py_err()
}

/// Four feature levels of an image, finest first.
#[pyfunction]
#[pyo3(signature = (image, channels = 128))]
fn extract_pyramid(image: &PyImage, channels: usize) -> PyResult<Vec<PyFeatureMap>> {
    let p = core_extract_pyramid(&image.inner, &ExtractorConfig { channels }, PyramidRole::MainHat).py_err()?;
    Ok(p.into_levels().into_iter().map(|inner| PyFeatureMap { inner }).collect())
}

#[pyfunction]
#[pyo3(signature = (h_x, h_y, patch = 16, d_max = 64, slack = 4, direction = "leftward"))]
fn match_row_restricted(
    h_x: &PyFeatureMap,
    h_y: &PyFeatureMap,
    patch: usize,
    d_max: usize,
    slack: usize,
    direction: &str,
) -> PyResult<PyMatchMap> {
    let window = SearchWindow { d_max, slack, direction: parse_direction(direction)? };
    let inner = matcher::match_row_restricted(&h_x.inner, &h_y.inner, patch, &window).py_err()?;
    Ok(PyMatchMap { inner })
}

/// Unrestricted search over every window position; slow on large maps.
#[pyfunction]
#[pyo3(signature = (h_x, h_y, patch = 16))]
fn match_full_oracle(h_x: &PyFeatureMap, h_y: &PyFeatureMap, patch: usize) -> PyResult<PyMatchMap> {
    Ok(PyMatchMap { inner: matcher::match_full_oracle(&h_x.inner, &h_y.inner, patch).py_err()? })
}

#[pyfunction]
fn rearrange_side(h_y: &PyFeatureMap, map: &PyMatchMap) -> PyResult<PyFeatureMap> {
    Ok(PyFeatureMap { inner: matcher::rearrange_side(&h_y.inner, &map.inner).py_err()? })
}

#[pyfunction]
#[pyo3(signature = (map, level, multiply = false))]
fn rescale_indices(map: &PyMatchMap, level: usize, multiply: bool) -> PyResult<PyMatchMap> {
    let scale = if multiply { IndexScale::Multiply } else { IndexScale::Divide };
    Ok(PyMatchMap { inner: matcher::rescale_indices(&map.inner, level, scale).py_err()? })
}

/// Indices of channels whose difference reaches `mu`.
#[pyfunction]
#[pyo3(signature = (h_x, h_y_star, mu = 0.5, mode = "rms"))]
fn select_channels(h_x: &PyFeatureMap, h_y_star: &PyFeatureMap, mu: f64, mode: &str) -> PyResult<Vec<usize>> {
    let sel = refine::select_channels(&h_x.inner, &h_y_star.inner, mu, parse_mode(mode)?).py_err()?;
    Ok(sel.indices().to_vec())
}

#[pyfunction]
#[pyo3(signature = (h_y_star, dp, selected, direction = "leftward"))]
fn sparse_warp(
    h_y_star: &PyFeatureMap,
    dp: &PyFeatureMap,
    selected: Vec<usize>,
    direction: &str,
) -> PyResult<PyFeatureMap> {
    let sel = ChannelSelection::from_indices(selected, h_y_star.inner.channels(), 0.0, SelectionMode::Rms).py_err()?;
    let inner = refine::sparse_warp(&h_y_star.inner, &dp.inner, &sel, parse_direction(direction)?).py_err()?;
    Ok(PyFeatureMap { inner })
}

fn config_or_default(config: Option<&PyConfig>) -> pipeline::PipelineConfig {
    config.map(|c| c.inner.clone()).unwrap_or_default()
}

/// Codes the main view into a bundle; the side view is stored losslessly if given.
#[pyfunction]
#[pyo3(signature = (main, side = None, config = None, quality = None))]
fn encode<'py>(
    py: Python<'py>,
    main: &PyImage,
    side: Option<&PyImage>,
    config: Option<&PyConfig>,
    quality: Option<u8>,
) -> PyResult<Bound<'py, PyBytes>> {
    let mut cfg = config_or_default(config);
    if let Some(q) = quality {
        cfg.quality = q;
    }
    let bundle = pipeline::encode_pair(&main.inner, side.map(|s| &s.inner), &cfg).py_err()?;
    Ok(PyBytes::new(py, &bundle.to_bytes()))
}

/// Bytes of the main bitstream inside a bundle.
#[pyfunction]
fn main_bitstream<'py>(py: Python<'py>, bundle: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
    Ok(PyBytes::new(py, &Bundle::from_bytes(bundle).py_err()?.main.to_bytes()))
}

/// Decodes a bundle and returns `(x_out, x_hat, levels)`, where each level is
/// `(level, d2_unaligned, d2_coarse, d2_fine, selected_channels)`.
#[pyfunction]
#[pyo3(signature = (bundle, side = None, config = None, weights = None))]
#[allow(clippy::type_complexity)]
fn decode(
    bundle: &[u8],
    side: Option<&PyImage>,
    config: Option<&PyConfig>,
    weights: Option<&str>,
) -> PyResult<(PyImage, PyImage, Vec<(usize, f64, f64, f64, usize)>)> {
    let bundle = Bundle::from_bytes(bundle).py_err()?;
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_else(|| bundle.config.clone());
    let weights = weights.map(NetworkWeights::load).transpose().py_err()?;
    let d = pipeline::decode_bundle(&bundle, side.map(|s| &s.inner), &cfg, weights.as_ref()).py_err()?;
    let levels = d
        .cascade
        .levels
        .iter()
        .map(|l| (l.level, l.d2_unaligned, l.d2_coarse, l.d2_fine, l.selected_channels))
        .collect();
    Ok((PyImage { inner: d.cascade.x_out }, PyImage { inner: d.x_hat }, levels))
}

#[pyfunction]
fn psnr(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    metrics::psnr(&a.inner, &b.inner).py_err()
}

#[pyfunction]
fn ms_ssim(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    metrics::ms_ssim(&a.inner, &b.inner).py_err()
}

#[pyfunction]
fn ssim(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    metrics::ssim(&a.inner, &b.inner).py_err()
}

fn curve(name: &str, points: &[(f64, f64)]) -> PyResult<RDCurve> {
    let pts = points
        .iter()
        .map(|&(bpp, psnr)| RDPoint::new(name, bpp, psnr, 1.0, 0.0, 0.0, 0.0, 0.0))
        .collect::<ffca_core::Result<Vec<_>>>()
        .py_err()?;
    RDCurve::new(name, pts).py_err()
}

/// `(bd_rate_percent, bd_psnr_db)` of `test` against `reference`, both given as `(bpp, psnr)` lists.
#[pyfunction]
fn bd_metrics(reference: Vec<(f64, f64)>, test: Vec<(f64, f64)>) -> PyResult<(f64, f64)> {
    let r = metrics::bd_metrics(&curve("reference", &reference)?, &curve("test", &test)?).py_err()?;
    Ok((r.bd_rate_percent, r.bd_psnr_db))
}

#[pyfunction]
fn rc_roundtrip<'py>(py: Python<'py>, data: &[u8]) -> Bound<'py, PyBytes> {
    PyBytes::new(py, &core_rc_roundtrip(data))
}

/// Synthetic `(main, side)` pair whose side view is the main view shifted left by `shift` pixels.
#[pyfunction]
#[pyo3(signature = (kind = "noise", channels = 3, height = 256, width = 512, shift = 16, seed = 1))]
fn synth_pair(
    kind: &str,
    channels: usize,
    height: usize,
    width: usize,
    shift: usize,
    seed: u64,
) -> PyResult<(PyImage, PyImage)> {
    let kind: TextureKind = kind.parse().py_err()?;
    let p = core_synth_pair(kind, channels, height, width, shift, seed).py_err()?;
    Ok((PyImage { inner: p.main }, PyImage { inner: p.side }))
}

/// Full-search over row-restricted candidate count for `height x width` features.
#[pyfunction]
#[pyo3(signature = (height, width, patch = 16, d_max = 64, slack = 4))]
fn analytic_reduction(height: usize, width: usize, patch: usize, d_max: usize, slack: usize) -> f64 {
    let window = SearchWindow { d_max, slack, direction: Direction::Leftward };
    core_analytic_reduction(Dims::new(height, width), patch, &window)
}

/// `(refinement, fusion)` parameter counts of the default layout at `channels`.
#[pyfunction]
#[pyo3(signature = (channels = 128))]
fn parameter_counts(channels: usize) -> (usize, usize) {
    let cfg = NetworkConfig { channels, ..NetworkConfig::default() };
    (cfg.refinement_params(), cfg.fusion_params())
}

#[pymodule]
fn ffca_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FormatError", m.py().get_type::<FormatError>())?;
    m.add("InvariantError", m.py().get_type::<InvariantError>())?;
    m.add_class::<PyFeatureMap>()?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyMatchMap>()?;
    m.add_function(wrap_pyfunction!(cosine_distance, m)?)?;
    m.add_function(wrap_pyfunction!(extract_pyramid, m)?)?;
    m.add_function(wrap_pyfunction!(match_row_restricted, m)?)?;
    m.add_function(wrap_pyfunction!(match_full_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(rearrange_side, m)?)?;
    m.add_function(wrap_pyfunction!(rescale_indices, m)?)?;
    m.add_function(wrap_pyfunction!(select_channels, m)?)?;
    m.add_function(wrap_pyfunction!(sparse_warp, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(main_bitstream, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ms_ssim, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(bd_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(rc_roundtrip, m)?)?;
    m.add_function(wrap_pyfunction!(synth_pair, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_reduction, m)?)?;
    m.add_function(wrap_pyfunction!(parameter_counts, m)?)?;
    Ok(())
}
