//! Cloud-masked observations, one list per `(time, level)` snapshot.
//!
//! The incidence operator is implicit: a record's `cell` is the interior
//! flat index it observes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub cell: usize,
    pub value: f64,
    /// Recorded noise standard deviation, ppb.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub n_times: usize,
    pub n_levels: usize,
    pub n_cells: usize,
    /// Indexed `k * n_levels + l`, each sorted by cell.
    pub records: Vec<Vec<Observation>>,
}

/// How the sampler turns an observation into a noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// `max(frac * |y|, floor)`: the latent truth is not available at fit time.
    PlugIn { frac: f64, floor: f64 },
    /// Use the sigma stored with each datum.
    Recorded,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::PlugIn {
            frac: 0.10,
            floor: 1.0,
        }
    }
}

impl NoiseModel {
    pub fn sd(&self, o: &Observation) -> f64 {
        match *self {
            NoiseModel::PlugIn { frac, floor } => (frac * o.value.abs()).max(floor),
            NoiseModel::Recorded => o.sigma,
        }
    }
}

/// Per-level summary of the observed values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelStats {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
}

impl ObservationSet {
    pub fn new(n_times: usize, n_levels: usize, n_cells: usize, mut records: Vec<Vec<Observation>>) -> Result<Self> {
        if records.len() != n_times * n_levels {
            return Err(Error::Dimension(format!(
                "{} observation snapshots, expected {}",
                records.len(),
                n_times * n_levels
            )));
        }
        for snap in records.iter_mut() {
            snap.sort_by_key(|o| o.cell);
            if snap.windows(2).any(|w| w[0].cell == w[1].cell) {
                return Err(Error::Dimension("duplicate observation of one cell in a snapshot".into()));
            }
            if let Some(o) = snap.iter().find(|o| o.cell >= n_cells) {
                return Err(Error::OutOfRange(format!("observed cell {} (N = {n_cells})", o.cell)));
            }
            if let Some(o) = snap.iter().find(|o| !(o.sigma > 0.0) || !o.value.is_finite()) {
                return Err(Error::Numerical(format!("bad observation at cell {}: {o:?}", o.cell)));
            }
        }
        Ok(ObservationSet {
            n_times,
            n_levels,
            n_cells,
            records,
        })
    }

    pub fn get(&self, k: usize, l: usize) -> &[Observation] {
        &self.records[k * self.n_levels + l]
    }

    pub fn total(&self) -> usize {
        self.records.iter().map(Vec::len).sum()
    }

    /// Cells observed at time `k` on any level.
    pub fn observed_cells(&self, k: usize) -> Vec<bool> {
        let mut seen = vec![false; self.n_cells];
        for l in 0..self.n_levels {
            for o in self.get(k, l) {
                seen[o.cell] = true;
            }
        }
        seen
    }

    pub fn level_stats(&self, l: usize) -> LevelStats {
        stats((0..self.n_times).flat_map(|k| self.get(k, l).iter().map(|o| o.value)))
    }

    pub fn global_stats(&self) -> LevelStats {
        stats(self.records.iter().flatten().map(|o| o.value))
    }
}

fn stats(values: impl Iterator<Item = f64>) -> LevelStats {
    let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for v in values {
        n += 1;
        let d = v - mean;
        mean += d / n as f64;
        m2 += d * (v - mean);
    }
    let sd = if n > 1 { (m2 / (n - 1) as f64).sqrt() } else { 0.0 };
    LevelStats { count: n, mean, sd }
}
