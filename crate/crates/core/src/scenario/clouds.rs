//! Drifting elliptical cloud blobs, applied per column.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid3D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudSpec {
    pub n_blobs: usize,
    /// Semi-axes before coverage calibration, in cells.
    pub radius_x: f64,
    pub radius_y: f64,
    /// Mean zonal drift, cells per step (negative is westward).
    pub drift_x: f64,
    /// Random-walk sd of blob centers, cells per step.
    pub jitter: f64,
    /// Time-mean cloudy fraction the radii are scaled to hit.
    pub target_coverage: f64,
    /// Centers wrap zonally over the grid widened by this many cells.
    pub margin: f64,
}

impl Default for CloudSpec {
    fn default() -> Self {
        CloudSpec {
            n_blobs: 5,
            radius_x: 3.0,
            radius_y: 2.0,
            drift_x: -0.6,
            jitter: 0.3,
            target_coverage: 0.4,
            margin: 4.0,
        }
    }
}

impl CloudSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.95).contains(&self.target_coverage) {
            return Err(Error::config(
                "scenario.clouds.target_coverage",
                format!("must lie in [0, 0.95], got {}", self.target_coverage),
            ));
        }
        if self.target_coverage > 0.0 && self.n_blobs == 0 {
            return Err(Error::config("scenario.clouds.n_blobs", "positive coverage needs at least one blob"));
        }
        if !(self.radius_x > 0.0 && self.radius_y > 0.0) {
            return Err(Error::config("scenario.clouds", "radii must be positive"));
        }
        if !self.drift_x.is_finite() || !(self.jitter >= 0.0) || !(self.margin >= 0.0) {
            return Err(Error::config("scenario.clouds", "drift must be finite, jitter and margin nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudMask {
    pub n_times: usize,
    pub n_cells: usize,
    /// `cloudy[k * n_cells + i]`.
    pub cloudy: Vec<bool>,
}

impl CloudMask {
    pub fn clear(n_times: usize, n_cells: usize) -> Self {
        CloudMask {
            n_times,
            n_cells,
            cloudy: vec![false; n_times * n_cells],
        }
    }

    pub fn new(n_times: usize, n_cells: usize, cloudy: Vec<bool>) -> Result<Self> {
        if cloudy.len() != n_times * n_cells {
            return Err(Error::Dimension(format!("mask has {} entries, expected {}", cloudy.len(), n_times * n_cells)));
        }
        let m = CloudMask { n_times, n_cells, cloudy };
        if let Some(k) = (0..n_times).find(|&k| m.step(k).iter().all(|&c| c)) {
            return Err(Error::OutOfRange(format!("time {k} is fully cloudy")));
        }
        Ok(m)
    }

    pub fn is_cloudy(&self, k: usize, i: usize) -> bool {
        self.cloudy[k * self.n_cells + i]
    }

    pub fn step(&self, k: usize) -> &[bool] {
        &self.cloudy[k * self.n_cells..(k + 1) * self.n_cells]
    }

    pub fn coverage(&self, k: usize) -> f64 {
        self.step(k).iter().filter(|&&c| c).count() as f64 / self.n_cells as f64
    }

    pub fn mean_coverage(&self) -> f64 {
        (0..self.n_times).map(|k| self.coverage(k)).sum::<f64>() / self.n_times as f64
    }
}

/// Normalized elliptical distance of every cell from a center, in cell units.
fn ellipse_distance(g: &Grid3D, cx: f64, cy: f64, rx: f64, ry: f64) -> impl Iterator<Item = f64> + '_ {
    (0..g.n_cells()).map(move |i| {
        let c = g.unflatten(i);
        let dx = (c.ix as f64 - cx) / rx;
        let dy = (c.iy as f64 - cy) / ry;
        (dx * dx + dy * dy).sqrt()
    })
}

/// Cells inside the ellipse with semi-axes `rx`, `ry` (cells) about `(cx, cy)`.
pub fn blob_footprint(g: &Grid3D, cx: f64, cy: f64, rx: f64, ry: f64) -> Vec<bool> {
    ellipse_distance(g, cx, cy, rx, ry).map(|d| d <= 1.0 + 1e-12).collect()
}

fn reflect(mut y: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let span = hi - lo;
    y = (y - lo).rem_euclid(2.0 * span);
    lo + if y > span { 2.0 * span - y } else { y }
}

/// Per step, the smallest normalized distance to any blob for each cell.
fn nearest_blob(g: &Grid3D, tracks: &[Vec<(f64, f64)>], spec: &CloudSpec) -> Vec<Vec<f64>> {
    tracks
        .iter()
        .map(|centers| {
            let mut best = vec![f64::INFINITY; g.n_cells()];
            for &(cx, cy) in centers {
                for (b, d) in best.iter_mut().zip(ellipse_distance(g, cx, cy, spec.radius_x, spec.radius_y)) {
                    *b = b.min(d);
                }
            }
            best
        })
        .collect()
}

fn mask_at_scale(nearest: &[Vec<f64>], scale: f64) -> Vec<bool> {
    let mut out = Vec::with_capacity(nearest.len() * nearest.first().map_or(0, Vec::len));
    for step in nearest {
        let start = out.len();
        out.extend(step.iter().map(|&d| d <= scale));
        if out[start..].iter().all(|&c| c) {
            // keep the least-covered cell clear so every step carries data
            let (far, _) = step.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
            out[start + far] = false;
        }
    }
    out
}

fn coverage(mask: &[bool]) -> f64 {
    mask.iter().filter(|&&c| c).count() as f64 / mask.len() as f64
}

pub fn synth_clouds<R: Rng + ?Sized>(g: &Grid3D, spec: &CloudSpec, n_times: usize, rng: &mut R) -> Result<CloudMask> {
    spec.validate()?;
    let n = g.n_cells();
    if spec.target_coverage == 0.0 {
        return Ok(CloudMask::clear(n_times, n));
    }
    let (x_lo, x_hi) = (-spec.margin, g.nx as f64 - 1.0 + spec.margin);
    let (y_lo, y_hi) = (0.0, g.ny as f64 - 1.0);
    let mut centers: Vec<(f64, f64)> = (0..spec.n_blobs)
        .map(|_| (rng.random_range(x_lo..=x_hi), rng.random_range(y_lo..=y_hi)))
        .collect();
    let mut tracks = Vec::with_capacity(n_times);
    for _ in 0..n_times {
        tracks.push(centers.clone());
        for c in centers.iter_mut() {
            let zx: f64 = StandardNormal.sample(rng);
            let zy: f64 = StandardNormal.sample(rng);
            c.0 = x_lo + (c.0 + spec.drift_x + spec.jitter * zx - x_lo).rem_euclid(x_hi - x_lo + 1.0);
            c.1 = reflect(c.1 + spec.jitter * zy, y_lo, y_hi);
        }
    }
    let nearest = nearest_blob(g, &tracks, spec);

    // coverage is nondecreasing in the radius scale, so bisect on it
    let mut hi = 1.0;
    while coverage(&mask_at_scale(&nearest, hi)) < spec.target_coverage {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::config("scenario.clouds.target_coverage", "coverage target cannot be reached"));
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if coverage(&mask_at_scale(&nearest, mid)) < spec.target_coverage {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let below = mask_at_scale(&nearest, lo);
    let above = mask_at_scale(&nearest, hi);
    let pick = if (coverage(&below) - spec.target_coverage).abs() < (coverage(&above) - spec.target_coverage).abs() {
        below
    } else {
        above
    };
    CloudMask::new(n_times, n, pick)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridSpec};
    use rand::SeedableRng;

    fn rng(s: u64) -> crate::seed::SimRng {
        crate::seed::SimRng::seed_from_u64(s)
    }

    #[test]
    fn zero_target_is_clear() {
        let g = build_grid(GridSpec::default()).unwrap();
        let spec = CloudSpec {
            target_coverage: 0.0,
            ..CloudSpec::default()
        };
        let m = synth_clouds(&g, &spec, 8, &mut rng(1)).unwrap();
        assert!(m.cloudy.iter().all(|&c| !c));
    }

    #[test]
    fn footprint_covers_radius() {
        let g = build_grid(GridSpec::default()).unwrap();
        let fp = blob_footprint(&g, 8.0, 7.0, 2.0, 2.0);
        for i in 0..g.n_cells() {
            let c = g.unflatten(i);
            let d = ((c.ix as f64 - 8.0).powi(2) + (c.iy as f64 - 7.0).powi(2)).sqrt();
            assert_eq!(fp[i], d <= 2.0, "cell {i}");
        }
    }

    #[test]
    fn default_coverage_near_target() {
        let g = build_grid(GridSpec::default()).unwrap();
        for seed in 0..10 {
            let m = synth_clouds(&g, &CloudSpec::default(), 32, &mut rng(seed)).unwrap();
            let c = m.mean_coverage();
            assert!((0.30..=0.50).contains(&c), "seed {seed}: {c}");
            assert!((0..32).all(|k| m.coverage(k) < 1.0));
        }
    }

    #[test]
    fn clouds_move_west() {
        let g = build_grid(GridSpec::default()).unwrap();
        let spec = CloudSpec {
            n_blobs: 1,
            jitter: 0.0,
            drift_x: -1.0,
            margin: 20.0,
            target_coverage: 0.05,
            ..CloudSpec::default()
        };
        let m = synth_clouds(&g, &spec, 3, &mut rng(4)).unwrap();
        let centroid = |k: usize| -> Option<f64> {
            let xs: Vec<f64> = (0..g.n_cells()).filter(|&i| m.is_cloudy(k, i)).map(|i| g.unflatten(i).ix as f64).collect();
            (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
        };
        if let (Some(a), Some(b)) = (centroid(0), centroid(1)) {
            if a > 2.0 && a < g.nx as f64 - 3.0 {
                assert!(b < a);
            }
        }
    }

    #[test]
    fn deterministic_and_validated() {
        let g = build_grid(GridSpec::default()).unwrap();
        let a = synth_clouds(&g, &CloudSpec::default(), 6, &mut rng(3)).unwrap();
        let b = synth_clouds(&g, &CloudSpec::default(), 6, &mut rng(3)).unwrap();
        assert_eq!(a, b);
        let bad = CloudSpec {
            target_coverage: 0.97,
            ..CloudSpec::default()
        };
        assert!(synth_clouds(&g, &bad, 6, &mut rng(3)).is_err());
    }

    #[test]
    fn reflect_stays_in_range() {
        for y in [-7.3, -0.5, 0.0, 3.2, 15.0, 16.4, 40.0] {
            let r = reflect(y, 0.0, 15.0);
            assert!((0.0..=15.0).contains(&r));
        }
        assert_eq!(reflect(16.0, 0.0, 15.0), 14.0);
    }
}
