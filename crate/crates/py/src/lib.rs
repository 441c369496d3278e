//! Python bindings: scenes, ray tracing, channel synthesis, NMSE, and the
//! two networks. Arrays cross the boundary as nested lists of floats.

use adapcsi::channel::{self, OfdmConfig, TraceConfig, UlaConfig};
use adapcsi::config::ExperimentConfig;
use adapcsi::geometry::Point3;
use adapcsi::harness;
use adapcsi::model::{HyperNet, ModelDims, ReconNet};
use adapcsi::scene::{self, SceneParams};
use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_array(rows: Vec<Vec<f64>>, cols: usize) -> PyResult<Array2<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("every row must have {cols} values")));
    }
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect()).map_err(value_err)
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[pyclass(name = "Scene", module = "adapcsi_py", from_py_object)]
#[derive(Clone)]
struct PyScene {
    inner: scene::Scene,
}

#[pymethods]
impl PyScene {
    #[getter]
    fn scene_id(&self) -> u32 {
        self.inner.scene_id
    }

    #[getter]
    fn bs_position(&self) -> (f64, f64, f64) {
        let p = self.inner.bs_position;
        (p.x, p.y, p.z)
    }

    /// Internal walls as `((x0, y0), (x1, y1))`.
    #[getter]
    fn walls(&self) -> Vec<((f64, f64), (f64, f64))> {
        self.inner.walls.iter().map(|w| {
            let [a, b] = w.endpoints;
            ((a.x, a.y), (b.x, b.y))
        }).collect()
    }

    /// Corners of the UE region polygon.
    #[getter]
    fn ue_region(&self) -> Vec<(f64, f64)> {
        self.inner.ue_region.iter().map(|p| (p.x, p.y)).collect()
    }

    fn is_los(&self, x: f64, y: f64) -> bool {
        channel::is_los(&self.inner, Point3::new(x, y, self.inner.ue_height))
    }

    /// `g × g` scene graph with 0 free, 1 wall, 2 boundary.
    fn scene_graph(&self, g: usize) -> Vec<Vec<u8>> {
        let m = scene::rasterize(&self.inner, g);
        m.grid.chunks(m.g).map(|r| r.to_vec()).collect()
    }

    /// Propagation paths to a UE at `(x, y)` as dicts.
    #[pyo3(signature = (x, y, diffraction = true))]
    fn trace<'py>(&self, py: Python<'py>, x: f64, y: f64, diffraction: bool) -> PyResult<Vec<Bound<'py, pyo3::types::PyDict>>> {
        let cfg = TraceConfig { diffraction, ..TraceConfig::default() };
        let paths = channel::trace_paths(&self.inner, Point3::new(x, y, self.inner.ue_height), &cfg).map_err(value_err)?;
        paths
            .iter()
            .map(|p| {
                let d = pyo3::types::PyDict::new(py);
                d.set_item("delay", p.delay)?;
                d.set_item("gain", (p.complex_gain.re, p.complex_gain.im))?;
                d.set_item("aod", p.aod_azimuth)?;
                d.set_item("reflections", p.n_reflections)?;
                d.set_item("diffractions", p.n_diffractions)?;
                d.set_item("los", p.is_los)?;
                Ok(d)
            })
            .collect()
    }

    /// Spatial-frequency channel `(re, im)`, each `subcarriers × antennas`.
    #[pyo3(signature = (x, y, subcarriers = 64, antennas = 8))]
    fn channel(&self, x: f64, y: f64, subcarriers: usize, antennas: usize) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let paths = channel::trace_paths(&self.inner, Point3::new(x, y, self.inner.ue_height), &TraceConfig::default())
            .map_err(value_err)?;
        let ula = UlaConfig { n_antennas: antennas, ..UlaConfig::default() };
        let ofdm = OfdmConfig { n_subcarriers: subcarriers, ..OfdmConfig::default() };
        let h = channel::assemble_channel(&paths, &ula, &ofdm).map_err(value_err)?.h_tilde;
        Ok((to_rows(&h.mapv(|c| c.re)), to_rows(&h.mapv(|c| c.im))))
    }

    fn __repr__(&self) -> String {
        format!("Scene(id={}, walls={})", self.inner.scene_id, self.inner.walls.len())
    }
}

/// Random indoor scene with the default 10 m × 10 m room.
#[pyfunction]
fn generate_scene(scene_id: u32, seed: u64) -> PyResult<PyScene> {
    let inner = scene::generate_scene(scene_id, seed, &SceneParams::default()).map_err(value_err)?;
    Ok(PyScene { inner })
}

/// Per-sample NMSE averaged over rows, as `(linear, dB)`.
#[pyfunction]
fn nmse(recon: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    let cols = truth.first().map_or(0, |r| r.len());
    let (r, t) = (to_array(recon, cols)?, to_array(truth, cols)?);
    harness::nmse(r.view(), t.view()).map_err(value_err)
}

/// Resolved config as TOML text.
#[pyfunction]
#[pyo3(signature = (path = None, profile = None, overrides = Vec::new()))]
fn resolve_config(path: Option<std::path::PathBuf>, profile: Option<String>, overrides: Vec<String>) -> PyResult<String> {
    let profile = profile.map(|p| p.parse()).transpose().map_err(PyValueError::new_err)?;
    let cfg = ExperimentConfig::resolve(path.as_deref(), profile, Vec::new(), &overrides).map_err(value_err)?;
    Ok(cfg.to_toml())
}

#[pyclass(name = "ReconNet", module = "adapcsi_py")]
struct PyReconNet {
    inner: ReconNet,
}

#[pymethods]
impl PyReconNet {
    #[new]
    #[pyo3(signature = (nc, nt, m, g = 32, alpha = 0.6, seed = 0))]
    fn new(nc: usize, nt: usize, m: usize, g: usize, alpha: f64, seed: u64) -> PyResult<Self> {
        let inner = ReconNet::new(ModelDims { nc, nt, m, g }, alpha, seed).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let ck = adapcsi::autodiff::Checkpoint::load(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let (inner, _) = ReconNet::from_checkpoint(&ck).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Baseline reconstruction of a batch of codewords.
    fn forward(&self, codewords: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let s = to_array(codewords, self.inner.dims.m)?;
        Ok(to_rows(&self.inner.forward_baseline(&s).map_err(value_err)?))
    }

    /// Reconstruction with the base matrix replaced by a generated one.
    fn forward_with(&self, hypernet: &PyHyperNet, scene_graph: Vec<f64>, codewords: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let gp = hypernet.inner.generate_params(&scene_graph).map_err(value_err)?;
        let s = to_array(codewords, self.inner.dims.m)?;
        Ok(to_rows(&adapcsi::model::forward_with_params(&self.inner, &gp, &s).map_err(value_err)?))
    }
}

#[pyclass(name = "HyperNet", module = "adapcsi_py")]
struct PyHyperNet {
    inner: HyperNet,
}

#[pymethods]
impl PyHyperNet {
    #[new]
    #[pyo3(signature = (nc, nt, m, g = 32, seed = 0))]
    fn new(nc: usize, nt: usize, m: usize, g: usize, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: HyperNet::new(ModelDims { nc, nt, m, g }, seed).map_err(value_err)? })
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// `(W_H, b_H)` for a flattened `g²` scene-graph input.
    fn generate(&self, scene_graph: Vec<f64>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        let gp = self.inner.generate_params(&scene_graph).map_err(value_err)?;
        Ok((to_rows(&gp.w_h), gp.b_h.to_vec()))
    }
}

/// Flattened model input for a scene graph.
#[pyfunction]
fn scene_graph_input(scene: &PyScene, g: usize) -> Vec<f64> {
    scene::scene_graph_to_model_input(&scene::rasterize(&scene.inner, g)).iter().copied().collect()
}

#[pymodule]
fn adapcsi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScene>()?;
    m.add_class::<PyReconNet>()?;
    m.add_class::<PyHyperNet>()?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(scene_graph_input, m)?)?;
    Ok(())
}
