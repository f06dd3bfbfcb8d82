//! On-disk artifacts: CSV schemas, checksums, stage manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::WindField;
use crate::error::{Error, Result};
use crate::grid::Grid3D;
use crate::obs::{Observation, ObservationSet};
use crate::sampler::ParamDraw;
use crate::scenario::{CloudMask, TruthField};

pub const MANIFEST: &str = "manifest.json";

pub fn code_version() -> String {
    format!("co-assim {}", env!("CARGO_PKG_VERSION"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub k: usize,
    pub l: usize,
    pub iy: i64,
    pub ix: i64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsRow {
    pub k: usize,
    pub l: usize,
    pub iy: i64,
    pub ix: i64,
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRow {
    pub k: usize,
    pub l: usize,
    pub iy: i64,
    pub ix: i64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindRow {
    pub k: usize,
    pub l: usize,
    pub iy: i64,
    pub ix: i64,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRow {
    pub k: usize,
    pub iy: i64,
    pub ix: i64,
    pub cloudy: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub iter: usize,
    pub level: usize,
    pub m: f64,
    pub f: f64,
    pub sigma2_eta: f64,
    #[serde(rename = "sigma2_B")]
    pub sigma2_b: f64,
}

pub fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Numerical(format!("csv encoding: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Numerical(format!("csv encoding: {e}")))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.is_file() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| parse_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| parse_err(path, e))).collect()
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        msg: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub code_version: String,
    pub seed: u64,
    /// Checksum identifying the simulated scenario every stage descends from.
    pub scenario_id: String,
    pub config: serde_json::Value,
    /// Upstream artifacts consumed, path to checksum.
    pub inputs: BTreeMap<String, String>,
    /// Files written by this stage, name to checksum.
    pub artifacts: BTreeMap<String, String>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST);
        if !path.is_file() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| parse_err(&path, e))
    }

    /// Reads a manifest and checks that `name` exists with its recorded checksum.
    pub fn verified_artifact(dir: &Path, name: &str) -> Result<(Manifest, PathBuf, String)> {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        let m = Manifest::read(dir)?;
        let sum = sha256_hex(&fs::read(&path)?);
        match m.artifacts.get(name) {
            Some(expected) if *expected == sum => Ok((m, path, sum)),
            Some(_) => Err(Error::Parse {
                file: path.display().to_string(),
                msg: "checksum does not match the stage manifest".into(),
            }),
            None => Err(Error::MissingArtifact(format!("{} is not listed in {}", name, dir.join(MANIFEST).display()))),
        }
    }
}

/// Collects a stage's files, then writes its manifest last.
pub struct StageWriter {
    dir: PathBuf,
    artifacts: BTreeMap<String, String>,
}

impl StageWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(StageWriter {
            dir: dir.to_path_buf(),
            artifacts: BTreeMap::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.artifacts.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn artifacts(&self) -> &BTreeMap<String, String> {
        &self.artifacts
    }

    pub fn finish(self, mut manifest: Manifest) -> Result<Manifest> {
        manifest.artifacts = self.artifacts;
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(self.dir.join(MANIFEST), bytes)?;
        Ok(manifest)
    }
}

fn coords(g: &Grid3D, i: usize) -> (i64, i64) {
    let c = g.unflatten(i);
    (c.iy as i64, c.ix as i64)
}

fn cell_of(g: &Grid3D, iy: i64, ix: i64, file: &str) -> Result<usize> {
    if iy < 0 || ix < 0 || iy as usize >= g.ny || ix as usize >= g.nx {
        return Err(Error::Parse {
            file: file.into(),
            msg: format!("cell ({iy}, {ix}) outside the grid"),
        });
    }
    Ok(iy as usize * g.nx + ix as usize)
}

/// Fills a `(k, l, i)` array from rows, requiring every entry exactly once.
fn fill<R>(len: usize, rows: &[R], file: &str, mut at: impl FnMut(&R) -> Result<usize>, mut put: impl FnMut(usize, &R)) -> Result<()> {
    let mut seen = vec![false; len];
    for r in rows {
        let j = at(r)?;
        if j >= len || seen[j] {
            return Err(Error::Parse {
                file: file.into(),
                msg: "duplicate or out-of-range entry".into(),
            });
        }
        seen[j] = true;
        put(j, r);
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Parse {
            file: file.into(),
            msg: "field is incomplete".into(),
        });
    }
    Ok(())
}

pub fn truth_rows(g: &Grid3D, t: &TruthField) -> Vec<FieldRow> {
    let mut rows = Vec::with_capacity(t.x.len());
    for k in 0..t.n_times {
        for l in 0..t.n_levels {
            for i in 0..t.n_cells {
                let (iy, ix) = coords(g, i);
                rows.push(FieldRow {
                    k,
                    l,
                    iy,
                    ix,
                    value: t.x[t.idx(k, l, i)],
                });
            }
        }
    }
    rows
}

pub fn boundary_rows(g: &Grid3D, t: &TruthField) -> Vec<FieldRow> {
    let mut rows = Vec::with_capacity(t.xb.len());
    for k in 0..t.n_times {
        for l in 0..t.n_levels {
            for b in 0..t.n_ghost {
                let (ix, iy) = g.ghost_coords(b);
                rows.push(FieldRow {
                    k,
                    l,
                    iy,
                    ix,
                    value: t.xb[(k * t.n_levels + l) * t.n_ghost + b],
                });
            }
        }
    }
    rows
}

pub fn truth_from_rows(g: &Grid3D, n_times: usize, interior: &[FieldRow], ring: &[FieldRow]) -> Result<TruthField> {
    let (nl, n, nb) = (g.n_levels(), g.n_cells(), g.n_ghost());
    let mut x = vec![0.0; n_times * nl * n];
    let mut xb = vec![0.0; n_times * nl * nb];
    let check_kl = |k: usize, l: usize, file: &str| {
        if k >= n_times || l >= nl {
            Err(Error::Parse {
                file: file.into(),
                msg: format!("(k, l) = ({k}, {l}) out of range"),
            })
        } else {
            Ok(())
        }
    };
    fill(
        x.len(),
        interior,
        "truth.csv",
        |r| {
            check_kl(r.k, r.l, "truth.csv")?;
            Ok((r.k * nl + r.l) * n + cell_of(g, r.iy, r.ix, "truth.csv")?)
        },
        |j, r| x[j] = r.value,
    )?;
    fill(
        xb.len(),
        ring,
        "truth_boundary.csv",
        |r| {
            check_kl(r.k, r.l, "truth_boundary.csv")?;
            let b = g.ghost_at(r.ix, r.iy).ok_or_else(|| Error::Parse {
                file: "truth_boundary.csv".into(),
                msg: format!("({}, {}) is not a ring cell", r.iy, r.ix),
            })?;
            Ok((r.k * nl + r.l) * nb + b)
        },
        |j, r| xb[j] = r.value,
    )?;
    Ok(TruthField {
        n_times,
        n_levels: nl,
        n_cells: n,
        n_ghost: nb,
        x,
        xb,
    })
}

pub fn wind_rows(g: &Grid3D, w: &WindField) -> Vec<WindRow> {
    let mut rows = Vec::with_capacity(w.u.len());
    for k in 0..w.n_times {
        for l in 0..w.n_levels {
            for i in 0..w.n_cells {
                let (iy, ix) = coords(g, i);
                let (u, v) = w.at(k, l, i);
                rows.push(WindRow { k, l, iy, ix, u, v });
            }
        }
    }
    rows
}

pub fn winds_from_rows(g: &Grid3D, n_times: usize, dt: f64, rows: &[WindRow]) -> Result<WindField> {
    let (nl, n) = (g.n_levels(), g.n_cells());
    let mut u = vec![0.0; n_times * nl * n];
    let mut v = vec![0.0; n_times * nl * n];
    fill(
        u.len(),
        rows,
        "winds.csv",
        |r| {
            if r.k >= n_times || r.l >= nl {
                return Err(parse_err(Path::new("winds.csv"), "time or level out of range"));
            }
            Ok((r.k * nl + r.l) * n + cell_of(g, r.iy, r.ix, "winds.csv")?)
        },
        |j, r| {
            u[j] = r.u;
            v[j] = r.v;
        },
    )?;
    WindField::new(n_times, nl, n, dt, u, v)
}

pub fn mask_rows(g: &Grid3D, m: &CloudMask) -> Vec<MaskRow> {
    let mut rows = Vec::with_capacity(m.cloudy.len());
    for k in 0..m.n_times {
        for i in 0..m.n_cells {
            let (iy, ix) = coords(g, i);
            rows.push(MaskRow {
                k,
                iy,
                ix,
                cloudy: m.is_cloudy(k, i) as u8,
            });
        }
    }
    rows
}

pub fn mask_from_rows(g: &Grid3D, n_times: usize, rows: &[MaskRow]) -> Result<CloudMask> {
    let n = g.n_cells();
    let mut cloudy = vec![false; n_times * n];
    fill(
        cloudy.len(),
        rows,
        "mask.csv",
        |r| {
            if r.k >= n_times || r.cloudy > 1 {
                return Err(parse_err(Path::new("mask.csv"), "time out of range or flag not 0/1"));
            }
            Ok(r.k * n + cell_of(g, r.iy, r.ix, "mask.csv")?)
        },
        |j, r| cloudy[j] = r.cloudy == 1,
    )?;
    CloudMask::new(n_times, n, cloudy)
}

pub fn obs_rows(g: &Grid3D, obs: &ObservationSet) -> Vec<ObsRow> {
    let mut rows = Vec::with_capacity(obs.total());
    for k in 0..obs.n_times {
        for l in 0..obs.n_levels {
            for o in obs.get(k, l) {
                let (iy, ix) = coords(g, o.cell);
                rows.push(ObsRow {
                    k,
                    l,
                    iy,
                    ix,
                    value: o.value,
                    sigma: o.sigma,
                });
            }
        }
    }
    rows
}

pub fn obs_from_rows(g: &Grid3D, n_times: usize, rows: &[ObsRow]) -> Result<ObservationSet> {
    let nl = g.n_levels();
    let mut records = vec![Vec::new(); n_times * nl];
    for r in rows {
        if r.k >= n_times || r.l >= nl {
            return Err(parse_err(Path::new("observations.csv"), "time or level out of range"));
        }
        records[r.k * nl + r.l].push(Observation {
            cell: cell_of(g, r.iy, r.ix, "observations.csv")?,
            value: r.value,
            sigma: r.sigma,
        });
    }
    ObservationSet::new(n_times, nl, g.n_cells(), records).map_err(|e| parse_err(Path::new("observations.csv"), e))
}

/// Rows for every level in `levels`; `mean` and `sd` are `(k, l, i)` arrays.
pub fn posterior_rows(g: &Grid3D, n_times: usize, levels: &[usize], mean: &[f64], sd: &[f64]) -> Vec<PosteriorRow> {
    let (nl, n) = (g.n_levels(), g.n_cells());
    let mut rows = Vec::with_capacity(n_times * levels.len() * n);
    for k in 0..n_times {
        for &l in levels {
            for i in 0..n {
                let (iy, ix) = coords(g, i);
                let j = (k * nl + l) * n + i;
                rows.push(PosteriorRow {
                    k,
                    l,
                    iy,
                    ix,
                    mean: mean[j],
                    sd: sd[j],
                });
            }
        }
    }
    rows
}

/// Inverse of [`posterior_rows`]: `(levels, mean, sd)`, NaN where absent.
pub fn posterior_from_rows(g: &Grid3D, n_times: usize, rows: &[PosteriorRow]) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
    let (nl, n) = (g.n_levels(), g.n_cells());
    let mut mean = vec![f64::NAN; n_times * nl * n];
    let mut sd = vec![f64::NAN; n_times * nl * n];
    let mut count = vec![0usize; nl];
    for r in rows {
        if r.k >= n_times || r.l >= nl {
            return Err(parse_err(Path::new("posterior.csv"), "time or level out of range"));
        }
        let j = (r.k * nl + r.l) * n + cell_of(g, r.iy, r.ix, "posterior.csv")?;
        if !mean[j].is_nan() {
            return Err(parse_err(Path::new("posterior.csv"), "duplicate entry"));
        }
        mean[j] = r.mean;
        sd[j] = r.sd;
        count[r.l] += 1;
    }
    let mut levels = Vec::new();
    for (l, &c) in count.iter().enumerate() {
        match c {
            0 => {}
            c if c == n_times * n => levels.push(l),
            _ => return Err(parse_err(Path::new("posterior.csv"), format!("level {l} is incomplete"))),
        }
    }
    Ok((levels, mean, sd))
}

pub fn param_rows(draws: &[ParamDraw]) -> Vec<ParamRow> {
    draws
        .iter()
        .flat_map(|d| {
            (0..d.params.n_levels()).map(move |l| ParamRow {
                iter: d.iter,
                level: l,
                m: d.params.m[l],
                f: d.params.f[l],
                sigma2_eta: d.params.sigma2_eta[l],
                sigma2_b: d.params.sigma2_b[l],
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridSpec};
    use crate::scenario::{observe_seeded, simulate, ScenarioConfig};

    fn small() -> (Grid3D, ScenarioConfig) {
        let g = build_grid(GridSpec {
            lon_min: 240.0,
            lon_max: 245.0,
            lat_min: 35.0,
            lat_max: 39.0,
            levels: vec![850.0, 750.0],
            ..GridSpec::default()
        })
        .unwrap();
        let mut cfg = ScenarioConfig {
            n_times: 4,
            ..ScenarioConfig::default()
        };
        cfg.winds.base_u = vec![5.0, 8.0];
        cfg.truth.plume.level_profile = vec![0.5, 1.0];
        cfg.truth.plume.background = vec![70.0, 80.0];
        (g, cfg)
    }

    fn roundtrip<T: Serialize + DeserializeOwned>(rows: Vec<T>) -> Vec<T> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, to_csv(rows).unwrap()).unwrap();
        read_csv(&p).unwrap()
    }

    #[test]
    fn fields_roundtrip_exactly() {
        let (g, cfg) = small();
        let sim = simulate(&g, &cfg, 3).unwrap();
        let obs = observe_seeded(&sim, &cfg, 3).unwrap();
        let t = truth_from_rows(&g, 4, &roundtrip(truth_rows(&g, &sim.truth)), &roundtrip(boundary_rows(&g, &sim.truth))).unwrap();
        assert_eq!(t, sim.truth);
        let w = winds_from_rows(&g, 4, sim.winds.dt, &roundtrip(wind_rows(&g, &sim.winds))).unwrap();
        assert_eq!(w, sim.winds);
        assert_eq!(mask_from_rows(&g, 4, &roundtrip(mask_rows(&g, &sim.mask))).unwrap(), sim.mask);
        assert_eq!(obs_from_rows(&g, 4, &roundtrip(obs_rows(&g, &obs))).unwrap(), obs);
    }

    #[test]
    fn posterior_roundtrip_and_schema() {
        let (g, _) = small();
        let len = 2 * 2 * g.n_cells();
        let mean: Vec<f64> = (0..len).map(|i| i as f64 * 0.1).collect();
        let sd = vec![0.5; len];
        let rows = posterior_rows(&g, 2, &[1], &mean, &sd);
        let bytes = to_csv(rows.clone()).unwrap();
        assert!(String::from_utf8(bytes).unwrap().starts_with("k,l,iy,ix,mean,sd\n"));
        let (levels, m, _) = posterior_from_rows(&g, 2, &roundtrip(rows)).unwrap();
        assert_eq!(levels, vec![1]);
        assert_eq!(m[g.n_cells() + 3], mean[g.n_cells() + 3]);
        assert!(m[0].is_nan());
    }

    #[test]
    fn param_header_uses_capital_b() {
        let bytes = to_csv(vec![ParamRow {
            iter: 1,
            level: 0,
            m: 1.0,
            f: 0.0,
            sigma2_eta: 0.2,
            sigma2_b: 0.3,
        }])
        .unwrap();
        assert!(String::from_utf8(bytes).unwrap().starts_with("iter,level,m,f,sigma2_eta,sigma2_B\n"));
    }

    #[test]
    fn missing_and_incomplete_files() {
        let (g, _) = small();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_csv::<FieldRow>(&dir.path().join("none.csv")), Err(Error::MissingArtifact(_))));
        let rows = vec![FieldRow {
            k: 0,
            l: 0,
            iy: 0,
            ix: 0,
            value: 1.0,
        }];
        assert!(matches!(truth_from_rows(&g, 1, &rows, &[]), Err(Error::Parse { .. })));
    }
}
