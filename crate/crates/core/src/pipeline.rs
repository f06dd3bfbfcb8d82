//! Manifest-driven stages: simulate, observe, fit-bhm, fit-kriging, evaluate.
//!
//! Stages other than evaluate share a run root and each owns one
//! subdirectory of it. Every directory ends up with a `manifest.json`
//! listing its files and their checksums; nothing in a manifest depends on
//! wall-clock time, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dynamics::courant_report;
use crate::error::{Error, Result};
use crate::eval::{build_report, Estimate, EvalReport};
use crate::grid::{build_grid, Grid3D, GridSpec};
use crate::io::{self, sha256_hex, Manifest, StageWriter};
use crate::kriging::{fit_kriging, KrigingConfig};
use crate::sampler::{fit_bhm, BhmConfig};
use crate::scenario::{observe_seeded, simulate, ScenarioConfig, Simulation};

pub const SIMULATE_DIR: &str = "simulate";
pub const OBSERVE_DIR: &str = "observe";
pub const KRIGING_DIR: &str = "kriging";
pub const REPORT_DIR: &str = "report";

pub fn bhm_dir(coupled: bool) -> &'static str {
    if coupled {
        "bhm-coupled"
    } else {
        "bhm-uncoupled"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub scenario: ScenarioConfig,
    pub bhm: BhmConfig,
    pub kriging: KrigingConfig,
    /// Levels to krige; all when absent.
    pub kriging_levels: Option<Vec<usize>>,
    /// Reporting level; the middle level when absent.
    pub level: Option<usize>,
    pub out: Option<PathBuf>,
    /// Master seed. Required, either here or on the command line.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridSpec::default(),
            scenario: ScenarioConfig::default(),
            bhm: BhmConfig::default(),
            kriging: KrigingConfig::default(),
            kriging_levels: None,
            level: None,
            out: None,
            seed: None,
        }
    }
}

impl RunConfig {
    /// Parses JSON, reporting the offending field path on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn grid(&self) -> Result<Grid3D> {
        build_grid(self.grid.clone())
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::config("seed", "a master seed is required (config `seed` or --seed)"))
    }

    pub fn level(&self, g: &Grid3D) -> Result<usize> {
        let l = self.level.unwrap_or_else(|| g.middle_level());
        if l >= g.n_levels() {
            return Err(Error::config("level", format!("{l} is not below the level count {}", g.n_levels())));
        }
        Ok(l)
    }

    pub fn validate(&self) -> Result<Grid3D> {
        let g = self.grid()?;
        self.seed()?;
        self.scenario.validate(g.n_levels())?;
        self.bhm.validate()?;
        self.kriging.validate()?;
        if let Some(ls) = &self.kriging_levels {
            if ls.is_empty() || ls.iter().any(|&l| l >= g.n_levels()) {
                return Err(Error::config("kriging_levels", "must be a nonempty list of valid level indices"));
            }
        }
        self.level(&g)?;
        Ok(g)
    }
}

fn base_manifest(stage: &str, seed: u64, scenario_id: &str, config: serde_json::Value) -> Manifest {
    Manifest {
        stage: stage.into(),
        code_version: io::code_version(),
        seed,
        scenario_id: scenario_id.into(),
        config,
        inputs: BTreeMap::new(),
        artifacts: BTreeMap::new(),
        meta: BTreeMap::new(),
    }
}

fn scenario_echo(cfg: &RunConfig) -> serde_json::Value {
    json!({ "grid": cfg.grid, "scenario": cfg.scenario })
}

/// Everything a downstream stage needs from the simulate directory.
pub struct LoadedScenario {
    pub manifest: Manifest,
    pub grid: Grid3D,
    pub sim: Simulation,
    pub inputs: BTreeMap<String, String>,
}

fn input_key(dir: &Path, name: &str) -> String {
    let stage = dir.file_name().map_or_else(|| dir.display().to_string(), |s| s.to_string_lossy().into_owned());
    format!("{stage}/{name}")
}

/// Reads and checksum-verifies an artifact listed in `dir`'s manifest.
fn load_artifact<T: serde::de::DeserializeOwned>(dir: &Path, name: &str, inputs: &mut BTreeMap<String, String>) -> Result<(Manifest, Vec<T>)> {
    let (m, path, sum) = Manifest::verified_artifact(dir, name)?;
    inputs.insert(input_key(dir, name), sum);
    Ok((m, io::read_csv(&path)?))
}

fn meta_f64(m: &Manifest, key: &str) -> Result<f64> {
    m.meta
        .get(key)
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::Parse {
            file: format!("{} manifest", m.stage),
            msg: format!("missing `{key}`"),
        })
}

/// Accepts either a simulate directory or a run root containing one.
pub fn resolve_simulate_dir(dir: &Path) -> PathBuf {
    if dir.join(io::MANIFEST).is_file() {
        dir.to_path_buf()
    } else {
        dir.join(SIMULATE_DIR)
    }
}

pub fn load_scenario(dir: &Path) -> Result<LoadedScenario> {
    let dir = resolve_simulate_dir(dir);
    let mut inputs = BTreeMap::new();
    let (manifest, truth_rows) = load_artifact::<io::FieldRow>(&dir, "truth.csv", &mut inputs)?;
    if manifest.stage != "simulate" {
        return Err(Error::config("--truth", format!("{} is a `{}` directory, not `simulate`", dir.display(), manifest.stage)));
    }
    let (_, ring) = load_artifact::<io::FieldRow>(&dir, "truth_boundary.csv", &mut inputs)?;
    let (_, winds) = load_artifact::<io::WindRow>(&dir, "winds.csv", &mut inputs)?;
    let (_, mask) = load_artifact::<io::MaskRow>(&dir, "mask.csv", &mut inputs)?;
    let grid_spec: GridSpec = serde_json::from_value(manifest.config["grid"].clone()).map_err(|e| Error::Parse {
        file: dir.join(io::MANIFEST).display().to_string(),
        msg: format!("grid: {e}"),
    })?;
    let grid = build_grid(grid_spec)?;
    let n_times = meta_f64(&manifest, "n_times")? as usize;
    let dt = meta_f64(&manifest, "dt_seconds")?;
    let sim = Simulation {
        truth: io::truth_from_rows(&grid, n_times, &truth_rows, &ring)?,
        winds: io::winds_from_rows(&grid, n_times, dt, &winds)?,
        mask: io::mask_from_rows(&grid, n_times, &mask)?,
    };
    Ok(LoadedScenario {
        manifest,
        grid,
        sim,
        inputs,
    })
}

fn check_grid(cfg: &RunConfig, sc: &LoadedScenario) -> Result<()> {
    if cfg.grid != sc.grid.spec {
        return Err(Error::config("grid", "differs from the grid of the simulated scenario"));
    }
    Ok(())
}

pub fn run_simulate(cfg: &RunConfig, root: &Path) -> Result<Manifest> {
    let g = cfg.validate()?;
    let seed = cfg.seed()?;
    let sim = simulate(&g, &cfg.scenario, seed)?;
    let mut w = StageWriter::create(&root.join(SIMULATE_DIR))?;
    w.write("truth.csv", &io::to_csv(io::truth_rows(&g, &sim.truth))?)?;
    w.write("truth_boundary.csv", &io::to_csv(io::boundary_rows(&g, &sim.truth))?)?;
    w.write("winds.csv", &io::to_csv(io::wind_rows(&g, &sim.winds))?)?;
    w.write("mask.csv", &io::to_csv(io::mask_rows(&g, &sim.mask))?)?;
    let id = sha256_hex(serde_json::to_string(w.artifacts())?.as_bytes());
    let mut m = base_manifest("simulate", seed, &id, scenario_echo(cfg));
    m.meta.insert("n_times".into(), json!(cfg.scenario.n_times));
    m.meta.insert("dt_seconds".into(), json!(cfg.scenario.dt_seconds()));
    m.meta.insert("grid_counts".into(), json!({"nx": g.nx, "ny": g.ny, "n_levels": g.n_levels(), "n_ghost": g.n_ghost()}));
    m.meta.insert("mean_cloud_cover".into(), json!(sim.mask.mean_coverage()));
    m.meta.insert("max_courant".into(), json!(courant_report(&g, &sim.winds)));
    m.meta.insert("sub_seed_labels".into(), json!(["winds", "truth", "clouds"]));
    w.finish(m)
}

pub fn run_observe(cfg: &RunConfig, root: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let sc = load_scenario(&root.join(SIMULATE_DIR))?;
    check_grid(cfg, &sc)?;
    let obs = observe_seeded(&sc.sim, &cfg.scenario, seed)?;
    let mut w = StageWriter::create(&root.join(OBSERVE_DIR))?;
    w.write("observations.csv", &io::to_csv(io::obs_rows(&sc.grid, &obs))?)?;
    let echo = json!({ "noise_frac": cfg.scenario.noise_frac, "sigma_floor": cfg.scenario.sigma_floor });
    let mut m = base_manifest("observe", seed, &sc.manifest.scenario_id, echo);
    m.inputs = sc.inputs;
    m.meta.insert("n_times".into(), json!(obs.n_times));
    m.meta.insert("n_observations".into(), json!(obs.total()));
    m.meta.insert("sub_seed_labels".into(), json!(["noise"]));
    w.finish(m)
}

/// Scenario plus observations, both verified against their manifests.
fn load_inputs(cfg: &RunConfig, root: &Path) -> Result<(LoadedScenario, crate::obs::ObservationSet)> {
    let mut sc = load_scenario(&root.join(SIMULATE_DIR))?;
    check_grid(cfg, &sc)?;
    let dir = root.join(OBSERVE_DIR);
    let (om, rows) = load_artifact::<io::ObsRow>(&dir, "observations.csv", &mut sc.inputs)?;
    if om.scenario_id != sc.manifest.scenario_id {
        return Err(Error::config("observe", "observations were drawn from a different scenario"));
    }
    let obs = io::obs_from_rows(&sc.grid, sc.sim.truth.n_times, &rows)?;
    Ok((sc, obs))
}

pub fn run_fit_bhm(cfg: &RunConfig, root: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let (sc, obs) = load_inputs(cfg, root)?;
    let post = fit_bhm(&sc.grid, &sc.sim.winds, &obs, &cfg.bhm, seed)?;
    let levels: Vec<usize> = (0..sc.grid.n_levels()).collect();
    let mut w = StageWriter::create(&root.join(bhm_dir(cfg.bhm.coupled)))?;
    w.write(
        "posterior.csv",
        &io::to_csv(io::posterior_rows(&sc.grid, post.n_times, &levels, &post.mean, &post.sd))?,
    )?;
    for (c, draws) in post.chains.iter().enumerate() {
        w.write(&format!("params_chain{c}.csv"), &io::to_csv(io::param_rows(draws))?)?;
    }
    w.write_json("diagnostics.json", &post.diagnostics)?;
    let method = bhm_dir(cfg.bhm.coupled);
    let mut m = base_manifest("fit-bhm", seed, &sc.manifest.scenario_id, json!({ "grid": cfg.grid, "bhm": cfg.bhm }));
    m.inputs = sc.inputs;
    m.meta.insert("method".into(), json!(method));
    m.meta.insert("n_times".into(), json!(post.n_times));
    m.meta.insert("max_courant".into(), json!(courant_report(&sc.grid, &sc.sim.winds)));
    m.meta.insert("sub_seed_labels".into(), json!((0..cfg.bhm.chains).map(crate::seed::chain_label).collect::<Vec<_>>()));
    w.finish(m)
}

#[derive(Serialize)]
struct FitRow {
    k: usize,
    l: usize,
    n_obs: usize,
    status: String,
    sigma2: f64,
    rho: f64,
    nugget: f64,
    log_lik: f64,
}

pub fn run_fit_kriging(cfg: &RunConfig, root: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let (sc, obs) = load_inputs(cfg, root)?;
    let out = fit_kriging(&sc.grid, &obs, &cfg.kriging, cfg.kriging_levels.as_deref())?;
    let sd: Vec<f64> = out.var.iter().map(|v| v.max(0.0).sqrt()).collect();
    let mut w = StageWriter::create(&root.join(KRIGING_DIR))?;
    w.write("posterior.csv", &io::to_csv(io::posterior_rows(&sc.grid, out.n_times, &out.levels, &out.mean, &sd))?)?;
    let fits = out.fits.iter().map(|f| FitRow {
        k: f.k,
        l: f.l,
        n_obs: f.n_obs,
        status: serde_json::to_value(f.fit.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
        sigma2: f.fit.params.sigma2,
        rho: f.fit.params.rho,
        nugget: f.fit.params.nugget,
        log_lik: f.fit.log_lik,
    });
    w.write("fits.csv", &io::to_csv(fits)?)?;
    let echo = json!({ "grid": cfg.grid, "kriging": cfg.kriging, "kriging_levels": out.levels });
    let mut m = base_manifest("fit-kriging", seed, &sc.manifest.scenario_id, echo);
    m.inputs = sc.inputs;
    m.meta.insert("method".into(), json!("kriging"));
    m.meta.insert("n_times".into(), json!(out.n_times));
    w.finish(m)
}

/// Loads one fitted run as an [`Estimate`] named after its method.
pub fn load_estimate(dir: &Path, sc: &LoadedScenario, inputs: &mut BTreeMap<String, String>) -> Result<Estimate> {
    let (m, rows) = load_artifact::<io::PosteriorRow>(dir, "posterior.csv", inputs)?;
    if m.scenario_id != sc.manifest.scenario_id {
        return Err(Error::config(
            "--runs",
            format!("{} was fit to a different scenario than the truth", dir.display()),
        ));
    }
    let name = m
        .meta
        .get("method")
        .and_then(|v| v.as_str())
        .map(String::from)
        .ok_or_else(|| Error::Parse {
            file: dir.join(io::MANIFEST).display().to_string(),
            msg: "no `method` recorded".into(),
        })?;
    let n_times = sc.sim.truth.n_times;
    let (levels, mean, sd) = io::posterior_from_rows(&sc.grid, n_times, &rows)?;
    Ok(Estimate {
        name,
        n_times,
        n_levels: sc.grid.n_levels(),
        n_cells: sc.grid.n_cells(),
        levels,
        mean,
        sd: Some(sd),
    })
}

pub fn run_evaluate(truth: &Path, runs: &[PathBuf], level: Option<usize>, out: &Path) -> Result<(Manifest, EvalReport)> {
    if runs.is_empty() {
        return Err(Error::config("--runs", "at least one run directory is required"));
    }
    let sc = load_scenario(truth)?;
    let level = level.unwrap_or_else(|| sc.grid.middle_level());
    if level >= sc.grid.n_levels() {
        return Err(Error::config("level", format!("{level} is not below the level count {}", sc.grid.n_levels())));
    }
    let mut inputs = sc.inputs.clone();
    let mut estimates = Vec::with_capacity(runs.len());
    for dir in runs {
        estimates.push(load_estimate(dir, &sc, &mut inputs)?);
    }
    let report = build_report(&estimates, &sc.sim.truth, &sc.sim.mask, level)?;
    let mut w = StageWriter::create(out)?;
    w.write_json("report.json", &report)?;
    w.write("tables.csv", report.tables_csv().as_bytes())?;
    w.write("rmse_series.csv", report.series_csv().as_bytes())?;
    let mut m = base_manifest("evaluate", sc.manifest.seed, &sc.manifest.scenario_id, json!({ "level": level }));
    m.inputs = inputs;
    m.meta.insert("methods".into(), json!(estimates.iter().map(|e| e.name.clone()).collect::<Vec<_>>()));
    Ok((w.finish(m)?, report))
}

/// The whole experiment: both BHM variants, kriging, and the report.
pub fn run_all(cfg: &RunConfig, root: &Path) -> Result<(Vec<Manifest>, EvalReport)> {
    let g = cfg.validate()?;
    let mut manifests = vec![run_simulate(cfg, root)?, run_observe(cfg, root)?];
    let mut runs = Vec::new();
    for coupled in [true, false] {
        let mut c = cfg.clone();
        c.bhm.coupled = coupled;
        manifests.push(run_fit_bhm(&c, root)?);
        runs.push(root.join(bhm_dir(coupled)));
    }
    manifests.push(run_fit_kriging(cfg, root)?);
    runs.push(root.join(KRIGING_DIR));
    let (m, report) = run_evaluate(&root.join(SIMULATE_DIR), &runs, Some(cfg.level(&g)?), &root.join(REPORT_DIR))?;
    manifests.push(m);
    Ok((manifests, report))
}
