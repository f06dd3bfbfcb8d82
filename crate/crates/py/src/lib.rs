//! Python bindings: grid, scenario generation, model fits, scoring and the
//! file-based pipeline.

use std::path::{Path, PathBuf};

use co_assim::eval::{build_report, rmse_values, Estimate};
use co_assim::grid::{build_grid, Grid3D, GridSpec};
use co_assim::kriging::{self, fit_kriging, MaternParams, Snapshot};
use co_assim::obs::ObservationSet;
use co_assim::pipeline::{self, RunConfig};
use co_assim::sampler::fit_bhm;
use co_assim::scenario::{observe_seeded, simulate, Simulation};
use co_assim::Error;
use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        3 => PyFileNotFoundError::new_err(e.to_string()),
        4 => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn config(json: Option<&str>, seed: Option<u64>) -> PyResult<RunConfig> {
    let mut cfg = match json {
        Some(s) => RunConfig::from_json(s).map_err(py_err)?,
        None => RunConfig::default(),
    };
    if seed.is_some() {
        cfg.seed = seed;
    }
    Ok(cfg)
}

#[pyclass(name = "Grid", frozen)]
struct PyGrid {
    inner: Grid3D,
}

#[pymethods]
impl PyGrid {
    /// Builds the grid from a JSON grid spec, or the default domain.
    #[new]
    #[pyo3(signature = (spec_json = None))]
    fn new(spec_json: Option<&str>) -> PyResult<Self> {
        let spec = match spec_json {
            Some(s) => serde_json::from_str::<GridSpec>(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => GridSpec::default(),
        };
        Ok(PyGrid {
            inner: build_grid(spec).map_err(py_err)?,
        })
    }

    #[getter]
    fn nx(&self) -> usize {
        self.inner.nx
    }
    #[getter]
    fn ny(&self) -> usize {
        self.inner.ny
    }
    #[getter]
    fn n_levels(&self) -> usize {
        self.inner.n_levels()
    }
    #[getter]
    fn n_cells(&self) -> usize {
        self.inner.n_cells()
    }
    #[getter]
    fn n_ghost(&self) -> usize {
        self.inner.n_ghost()
    }
    fn middle_level(&self) -> usize {
        self.inner.middle_level()
    }
    fn lon(&self, ix: i64) -> f64 {
        self.inner.lon(ix)
    }
    fn lat(&self, iy: i64) -> f64 {
        self.inner.lat(iy)
    }
    /// Flat index `iy * nx + ix` to `(iy, ix)`.
    fn unflatten(&self, i: usize) -> PyResult<(usize, usize)> {
        if i >= self.inner.n_cells() {
            return Err(PyValueError::new_err(format!("cell {i} out of range")));
        }
        let c = self.inner.unflatten(i);
        Ok((c.iy, c.ix))
    }
    /// Great-circle distance between two interior cells, metres.
    fn distance(&self, a: usize, b: usize) -> PyResult<f64> {
        let n = self.inner.n_cells();
        if a >= n || b >= n {
            return Err(PyValueError::new_err("cell index out of range"));
        }
        Ok(self.inner.distance(a, b))
    }
    fn __repr__(&self) -> String {
        format!("Grid(nx={}, ny={}, levels={})", self.inner.nx, self.inner.ny, self.inner.n_levels())
    }
}

/// A field estimate on `(n_times, n_levels, n_cells)`, flattened row-major.
#[pyclass(name = "Posterior", frozen)]
struct PyPosterior {
    #[pyo3(get)]
    name: String,
    #[pyo3(get)]
    shape: (usize, usize, usize),
    #[pyo3(get)]
    levels: Vec<usize>,
    #[pyo3(get)]
    mean: Vec<f64>,
    #[pyo3(get)]
    sd: Vec<f64>,
    /// Sampler diagnostics as JSON; `None` for kriging.
    #[pyo3(get)]
    diagnostics_json: Option<String>,
}

impl PyPosterior {
    fn estimate(&self) -> Estimate {
        Estimate {
            name: self.name.clone(),
            n_times: self.shape.0,
            n_levels: self.shape.1,
            n_cells: self.shape.2,
            levels: self.levels.clone(),
            mean: self.mean.clone(),
            sd: Some(self.sd.clone()),
        }
    }
}

/// Simulated truth, clouds and observations for one seed.
#[pyclass(name = "Scenario", frozen)]
struct PyScenario {
    cfg: RunConfig,
    grid: Grid3D,
    sim: Simulation,
    obs: ObservationSet,
}

#[pymethods]
impl PyScenario {
    /// Runs the scenario generator from a JSON run config (defaults otherwise).
    #[new]
    #[pyo3(signature = (seed, config_json = None))]
    fn new(py: Python<'_>, seed: u64, config_json: Option<&str>) -> PyResult<Self> {
        let cfg = config(config_json, Some(seed))?;
        py.detach(|| {
            let grid = cfg.validate()?;
            let sim = simulate(&grid, &cfg.scenario, seed)?;
            let obs = observe_seeded(&sim, &cfg.scenario, seed)?;
            Ok(PyScenario { cfg, grid, sim, obs })
        })
        .map_err(py_err)
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid { inner: self.grid.clone() }
    }
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let t = &self.sim.truth;
        (t.n_times, t.n_levels, t.n_cells)
    }
    /// Interior truth, flattened over `(k, l, i)`.
    #[getter]
    fn truth(&self) -> Vec<f64> {
        self.sim.truth.x.clone()
    }
    /// Cloud flags, flattened over `(k, i)`.
    #[getter]
    fn mask(&self) -> Vec<bool> {
        self.sim.mask.cloudy.clone()
    }
    #[getter]
    fn mean_cloud_cover(&self) -> f64 {
        self.sim.mask.mean_coverage()
    }
    /// `(k, l, cell, value, sigma)` for every observation.
    fn observations(&self) -> Vec<(usize, usize, usize, f64, f64)> {
        let mut out = Vec::with_capacity(self.obs.total());
        for k in 0..self.obs.n_times {
            for l in 0..self.obs.n_levels {
                out.extend(self.obs.get(k, l).iter().map(|o| (k, l, o.cell, o.value, o.sigma)));
            }
        }
        out
    }
    /// Maximum Courant number of the synthesized winds.
    fn max_courant(&self) -> f64 {
        co_assim::dynamics::courant_report(&self.grid, &self.sim.winds)
    }

    /// Gibbs fit; overrides apply on top of the scenario's config.
    #[pyo3(signature = (coupled = true, n_iter = None, burn_in = None, chains = None, seed = None))]
    fn fit_bhm(
        &self,
        py: Python<'_>,
        coupled: bool,
        n_iter: Option<usize>,
        burn_in: Option<usize>,
        chains: Option<usize>,
        seed: Option<u64>,
    ) -> PyResult<PyPosterior> {
        let mut bhm = self.cfg.bhm.clone();
        bhm.coupled = coupled;
        if let Some(n) = n_iter {
            bhm.sampler.n_iter = n;
        }
        if let Some(b) = burn_in {
            bhm.sampler.burn_in = b;
        }
        if let Some(c) = chains {
            bhm.chains = c;
        }
        let seed = seed.or(self.cfg.seed).unwrap_or(0);
        let post = py
            .detach(|| fit_bhm(&self.grid, &self.sim.winds, &self.obs, &bhm, seed))
            .map_err(py_err)?;
        Ok(PyPosterior {
            name: pipeline::bhm_dir(coupled).into(),
            shape: (post.n_times, post.n_levels, post.n_cells),
            levels: (0..post.n_levels).collect(),
            diagnostics_json: Some(serde_json::to_string(&post.diagnostics).map_err(|e| PyRuntimeError::new_err(e.to_string()))?),
            mean: post.mean,
            sd: post.sd,
        })
    }

    /// Per-snapshot kriging at the given levels (all when omitted).
    #[pyo3(signature = (levels = None))]
    fn fit_kriging(&self, py: Python<'_>, levels: Option<Vec<usize>>) -> PyResult<PyPosterior> {
        let out = py
            .detach(|| fit_kriging(&self.grid, &self.obs, &self.cfg.kriging, levels.as_deref()))
            .map_err(py_err)?;
        Ok(PyPosterior {
            name: "kriging".into(),
            shape: (out.n_times, out.n_levels, out.n_cells),
            levels: out.levels,
            sd: out.var.iter().map(|v| v.max(0.0).sqrt()).collect(),
            mean: out.mean,
            diagnostics_json: None,
        })
    }

    /// Scores estimates against the truth; returns the report as JSON.
    fn evaluate(&self, estimates: Vec<PyRef<'_, PyPosterior>>, level: usize) -> PyResult<String> {
        let ests: Vec<Estimate> = estimates.iter().map(|p| p.estimate()).collect();
        let report = build_report(&ests, &self.sim.truth, &self.sim.mask, level).map_err(py_err)?;
        serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Matérn 5/2 covariance at distance `d` (same units as `rho`).
#[pyfunction]
#[pyo3(signature = (d, sigma2 = 1.0, rho = 1.0))]
fn matern_cov(d: f64, sigma2: f64, rho: f64) -> PyResult<f64> {
    kriging::matern_cov(d, &MaternParams { sigma2, rho, nugget: 0.0 }).map_err(py_err)
}

/// Ordinary kriging prediction at `targets`; positions are `(lon, lat)` degrees.
#[pyfunction]
#[pyo3(signature = (lonlat, values, noise_var, targets, sigma2, rho, nugget = 0.0, radius = 6_371_000.0))]
#[allow(clippy::too_many_arguments)]
fn krige_predict(
    lonlat: Vec<(f64, f64)>,
    values: Vec<f64>,
    noise_var: Vec<f64>,
    targets: Vec<(f64, f64)>,
    sigma2: f64,
    rho: f64,
    nugget: f64,
    radius: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    if lonlat.len() != values.len() || values.len() != noise_var.len() {
        return Err(PyValueError::new_err("lonlat, values and noise_var must have equal length"));
    }
    let snap = Snapshot {
        lonlat,
        values,
        noise_var,
        radius,
    };
    kriging::krige_predict(&snap, &MaternParams { sigma2, rho, nugget }, &targets).map_err(py_err)
}

#[pyfunction]
fn rmse(xhat: Vec<f64>, xtrue: Vec<f64>) -> PyResult<f64> {
    rmse_values(&xhat, &xtrue).map_err(py_err)
}

/// Labeled 64-bit sub-seed of a master seed.
#[pyfunction]
fn sub_seed(master: u64, label: &str) -> u64 {
    co_assim::seed::sub_seed(master, label)
}

/// Runs one file-based stage under `root`; returns its manifest as JSON.
#[pyfunction]
#[pyo3(signature = (stage, root, config_json = None, seed = None))]
fn run_stage(py: Python<'_>, stage: &str, root: PathBuf, config_json: Option<&str>, seed: Option<u64>) -> PyResult<String> {
    let cfg = config(config_json, seed)?;
    let root = root.as_path();
    let run = |f: fn(&RunConfig, &Path) -> co_assim::Result<co_assim::io::Manifest>| py.detach(|| f(&cfg, root)).map_err(py_err);
    let m = match stage {
        "simulate" => run(pipeline::run_simulate)?,
        "observe" => run(pipeline::run_observe)?,
        "fit-bhm" => run(pipeline::run_fit_bhm)?,
        "fit-kriging" => run(pipeline::run_fit_kriging)?,
        "all" => py.detach(|| pipeline::run_all(&cfg, root)).map_err(py_err)?.0.pop().expect("report manifest"),
        other => return Err(PyValueError::new_err(format!("unknown stage `{other}`"))),
    };
    serde_json::to_string(&m).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// File-based evaluate; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (truth, runs, out, level = None))]
fn evaluate(py: Python<'_>, truth: PathBuf, runs: Vec<PathBuf>, out: PathBuf, level: Option<usize>) -> PyResult<String> {
    let (_, report) = py.detach(|| pipeline::run_evaluate(&truth, &runs, level, &out)).map_err(py_err)?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn co_assim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyPosterior>()?;
    m.add_function(wrap_pyfunction!(matern_cov, m)?)?;
    m.add_function(wrap_pyfunction!(krige_predict, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(sub_seed, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
