//! Per-snapshot ordinary kriging with a Matérn 5/2 covariance whose
//! variance and range are fit by maximum likelihood.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{haversine, Grid3D};
use crate::obs::{NoiseModel, ObservationSet};

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    /// Marginal variance, ppb^2.
    pub sigma2: f64,
    /// Range, meters.
    pub rho: f64,
    /// Observation-noise variance on the diagonal, ppb^2.
    pub nugget: f64,
}

impl MaternParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0) || !(self.rho > 0.0) || !(self.nugget >= 0.0) || !self.sigma2.is_finite() || !self.rho.is_finite() {
            return Err(Error::OutOfRange(format!("invalid Matérn parameters {self:?}")));
        }
        Ok(())
    }
}

/// `sigma2 (1 + sqrt5 d / rho + 5 d^2 / (3 rho^2)) exp(-sqrt5 d / rho)`.
pub fn matern_cov(d: f64, p: &MaternParams) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::OutOfRange(format!("negative distance {d}")));
    }
    Ok(matern(d, p.sigma2, p.rho))
}

#[inline]
fn matern(d: f64, sigma2: f64, rho: f64) -> f64 {
    let s = SQRT5 * d / rho;
    sigma2 * (1.0 + s + s * s / 3.0) * (-s).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KrigingConfig {
    /// Fit the nugget too instead of fixing it at the mean noise variance.
    pub estimate_nugget: bool,
    pub multistarts: usize,
    pub min_obs: usize,
    pub log_sigma2_bounds: (f64, f64),
    pub rho_bounds_m: (f64, f64),
    /// Minimum log-likelihood gain for a search move to count.
    pub tolerance: f64,
    /// Search stops once the step in log-parameter space is this small.
    pub min_step: f64,
    pub noise: NoiseModel,
}

impl Default for KrigingConfig {
    fn default() -> Self {
        KrigingConfig {
            estimate_nugget: false,
            multistarts: 5,
            min_obs: 10,
            log_sigma2_bounds: (-6.0, 12.0),
            rho_bounds_m: (10_000.0, 5_000_000.0),
            tolerance: 1e-6,
            min_step: 1e-3,
            noise: NoiseModel::default(),
        }
    }
}

impl KrigingConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.log_sigma2_bounds;
        let (r0, r1) = self.rho_bounds_m;
        if !(a < b) || !(r0 > 0.0 && r0 < r1) {
            return Err(Error::config("kriging", "search bounds must be ordered and ranges positive"));
        }
        if self.multistarts == 0 || self.min_obs < 2 {
            return Err(Error::config("kriging", "need at least one start and two observations"));
        }
        if !(self.tolerance > 0.0) || !(self.min_step > 0.0) {
            return Err(Error::config("kriging", "tolerance and min_step must be positive"));
        }
        Ok(())
    }
}

/// Observations at one snapshot with their locations in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub lonlat: Vec<(f64, f64)>,
    pub values: Vec<f64>,
    pub noise_var: Vec<f64>,
    pub radius: f64,
}

impl Snapshot {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean_noise_var(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.noise_var.iter().sum::<f64>() / self.len() as f64
        }
    }

    fn distances(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut d = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a + 1..n {
                let (p, q) = (self.lonlat[a], self.lonlat[b]);
                let v = haversine(self.radius, p.0, p.1, q.0, q.1);
                d[(a, b)] = v;
                d[(b, a)] = v;
            }
        }
        d
    }
}

fn covariance(dist: &DMatrix<f64>, p: &MaternParams) -> DMatrix<f64> {
    let n = dist.nrows();
    let mut k = DMatrix::from_fn(n, n, |a, b| matern(dist[(a, b)], p.sigma2, p.rho));
    for a in 0..n {
        k[(a, a)] += p.nugget;
    }
    k
}

struct Factored {
    chol: Cholesky<f64, Dyn>,
    /// `K^-1 1`.
    kinv_one: DVector<f64>,
    /// `1' K^-1 1`.
    one_kinv_one: f64,
    /// GLS estimate of the constant mean.
    beta: f64,
    /// `K^-1 (y - beta)`.
    alpha: DVector<f64>,
}

fn factor(dist: &DMatrix<f64>, values: &[f64], p: &MaternParams) -> Option<Factored> {
    let n = values.len();
    let chol = covariance(dist, p).cholesky()?;
    let kinv_one = chol.solve(&DVector::from_element(n, 1.0));
    let one_kinv_one = kinv_one.sum();
    let y = DVector::from_column_slice(values);
    let beta = kinv_one.dot(&y) / one_kinv_one;
    let alpha = chol.solve(&y.add_scalar(-beta));
    Some(Factored {
        chol,
        kinv_one,
        one_kinv_one,
        beta,
        alpha,
    })
}

/// Gaussian log-likelihood of `values` with the constant mean profiled out
/// by generalized least squares.
pub fn log_likelihood(snap: &Snapshot, p: &MaternParams) -> Result<f64> {
    p.validate()?;
    let dist = snap.distances();
    profile_ll(&dist, &snap.values, p).ok_or_else(|| Error::Numerical("kriging covariance is not positive definite".into()))
}

fn profile_ll(dist: &DMatrix<f64>, values: &[f64], p: &MaternParams) -> Option<f64> {
    let f = factor(dist, values, p)?;
    let n = values.len() as f64;
    let resid = DVector::from_column_slice(values).add_scalar(-f.beta);
    let quad = resid.dot(&f.alpha);
    let logdet = 2.0 * f.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let ll = -0.5 * (quad + logdet + n * (2.0 * std::f64::consts::PI).ln());
    ll.is_finite().then_some(ll)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Fitted,
    /// Variance pinned at its lower bound (e.g. constant data).
    Degenerate,
    /// Too few observations; no covariance was fit.
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub params: MaternParams,
    pub log_lik: f64,
    pub status: FitStatus,
}

/// Maximizes `f` over a box by compass search: poll each coordinate at
/// plus and minus the step, move on the first improvement, halve the step
/// when a full poll fails.
fn compass_search(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], lo: &[f64], hi: &[f64], step0: f64, min_step: f64, tol: f64) -> (Vec<f64>, f64) {
    let mut x: Vec<f64> = x0.iter().zip(lo.iter().zip(hi)).map(|(v, (a, b))| v.clamp(*a, *b)).collect();
    let mut best = f(&x);
    let mut step = step0;
    while step >= min_step {
        let mut moved = false;
        'poll: for d in 0..x.len() {
            for sign in [1.0, -1.0] {
                let mut y = x.clone();
                y[d] = (y[d] + sign * step).clamp(lo[d], hi[d]);
                if y[d] == x[d] {
                    continue;
                }
                let v = f(&y);
                if v > best + tol {
                    x = y;
                    best = v;
                    moved = true;
                    break 'poll;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    (x, best)
}

/// Maximum-likelihood Matérn fit with `multistarts` starting ranges spaced
/// geometrically inside the range bounds.
pub fn mle_fit(snap: &Snapshot, cfg: &KrigingConfig) -> Result<MleFit> {
    cfg.validate()?;
    let nugget0 = snap.mean_noise_var();
    if snap.len() < cfg.min_obs {
        return Ok(MleFit {
            params: MaternParams {
                sigma2: cfg.log_sigma2_bounds.0.exp(),
                rho: cfg.rho_bounds_m.0,
                nugget: nugget0,
            },
            log_lik: f64::NAN,
            status: FitStatus::Skipped,
        });
    }
    let dist = snap.distances();
    let values = &snap.values;
    let (ls_lo, ls_hi) = cfg.log_sigma2_bounds;
    let (lr_lo, lr_hi) = (cfg.rho_bounds_m.0.ln(), cfg.rho_bounds_m.1.ln());
    let nug_bounds = (-6.0f64, ls_hi);
    let unpack = |z: &[f64]| MaternParams {
        sigma2: z[0].exp(),
        rho: z[1].exp(),
        nugget: if cfg.estimate_nugget { z[2].exp() } else { nugget0 },
    };
    let objective = |z: &[f64]| profile_ll(&dist, values, &unpack(z)).unwrap_or(f64::NEG_INFINITY);

    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    let s0 = (var - nugget0).max(0.1 * var).max(1e-2).ln().clamp(ls_lo, ls_hi);
    let mut lo = vec![ls_lo, lr_lo];
    let mut hi = vec![ls_hi, lr_hi];
    if cfg.estimate_nugget {
        lo.push(nug_bounds.0);
        hi.push(nug_bounds.1);
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in 0..cfg.multistarts {
        // interior points of an even split of the log-range interval
        let t = (s as f64 + 0.5) / cfg.multistarts as f64;
        let mut z0 = vec![s0, lr_lo + t * (lr_hi - lr_lo)];
        if cfg.estimate_nugget {
            z0.push(nugget0.max(1e-2).ln().clamp(nug_bounds.0, nug_bounds.1));
        }
        let (z, v) = compass_search(&objective, &z0, &lo, &hi, 1.0, cfg.min_step, cfg.tolerance);
        if best.as_ref().is_none_or(|b| v > b.1) {
            best = Some((z, v));
        }
    }
    let (z, ll) = best.expect("at least one start");
    if !ll.is_finite() {
        return Err(Error::Numerical("no kriging start produced a finite likelihood".into()));
    }
    let status = if z[0] <= ls_lo + 1e-2 {
        FitStatus::Degenerate
    } else {
        FitStatus::Fitted
    };
    Ok(MleFit {
        params: unpack(&z),
        log_lik: ll,
        status,
    })
}

/// Ordinary-kriging prediction of the noise-free field at `targets`
/// (degrees), returning `(mean, variance)` per target.
pub fn krige_predict(snap: &Snapshot, p: &MaternParams, targets: &[(f64, f64)]) -> Result<(Vec<f64>, Vec<f64>)> {
    p.validate()?;
    if snap.is_empty() {
        return Err(Error::EmptySubset("kriging needs at least one observation".into()));
    }
    let dist = snap.distances();
    let f = factor(&dist, &snap.values, p).ok_or_else(|| Error::Numerical("kriging system is not positive definite".into()))?;
    let n = snap.len();
    let mut mean = Vec::with_capacity(targets.len());
    let mut var = Vec::with_capacity(targets.len());
    for &(lon, lat) in targets {
        let c0 = DVector::from_fn(n, |a, _| {
            let q = snap.lonlat[a];
            matern(haversine(snap.radius, lon, lat, q.0, q.1), p.sigma2, p.rho)
        });
        let kinv_c0 = f.chol.solve(&c0);
        let gap = 1.0 - f.kinv_one.dot(&c0);
        mean.push(f.beta + c0.dot(&f.alpha));
        let v = p.sigma2 - c0.dot(&kinv_c0) + gap * gap / f.one_kinv_one;
        var.push(v.max(0.0));
    }
    Ok((mean, var))
}

/// Observations of `(k, l)` as a [`Snapshot`] on the grid's cell centers.
pub fn snapshot(g: &Grid3D, obs: &ObservationSet, noise: NoiseModel, k: usize, l: usize) -> Snapshot {
    let recs = obs.get(k, l);
    Snapshot {
        lonlat: recs
            .iter()
            .map(|o| {
                let c = g.unflatten(o.cell);
                (g.lon(c.ix as i64), g.lat(c.iy as i64))
            })
            .collect(),
        values: recs.iter().map(|o| o.value).collect(),
        noise_var: recs.iter().map(|o| noise.sd(o).powi(2)).collect(),
        radius: g.spec.earth_radius,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFit {
    pub k: usize,
    pub l: usize,
    pub n_obs: usize,
    pub fit: MleFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrigingOutput {
    pub n_times: usize,
    pub n_levels: usize,
    pub n_cells: usize,
    /// Only these levels were interpolated; other entries stay NaN.
    pub levels: Vec<usize>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub fits: Vec<SnapshotFit>,
}

impl KrigingOutput {
    pub fn idx(&self, k: usize, l: usize, i: usize) -> usize {
        (k * self.n_levels + l) * self.n_cells + i
    }
}

/// Fits and predicts every snapshot of the chosen `levels` (all when `None`).
/// Skipped snapshots fall back to the mean of their own observations, or the
/// level's overall observed mean when they have none, with the level's
/// observed variance as the predictive variance.
pub fn fit_kriging(g: &Grid3D, obs: &ObservationSet, cfg: &KrigingConfig, levels: Option<&[usize]>) -> Result<KrigingOutput> {
    cfg.validate()?;
    let (t, nl, n) = (obs.n_times, obs.n_levels, obs.n_cells);
    if nl != g.n_levels() || n != g.n_cells() {
        return Err(Error::Dimension("observations do not match grid".into()));
    }
    let levels: Vec<usize> = levels.map_or_else(|| (0..nl).collect(), <[usize]>::to_vec);
    if let Some(&bad) = levels.iter().find(|&&l| l >= nl) {
        return Err(Error::OutOfRange(format!("level {bad} (L = {nl})")));
    }
    let targets: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let c = g.unflatten(i);
            (g.lon(c.ix as i64), g.lat(c.iy as i64))
        })
        .collect();
    let mut out = KrigingOutput {
        n_times: t,
        n_levels: nl,
        n_cells: n,
        levels: levels.clone(),
        mean: vec![f64::NAN; t * nl * n],
        var: vec![f64::NAN; t * nl * n],
        fits: Vec::new(),
    };
    for &l in &levels {
        let ls = obs.level_stats(l);
        for k in 0..t {
            let snap = snapshot(g, obs, cfg.noise, k, l);
            let fit = mle_fit(&snap, cfg)?;
            let (mean, var) = if fit.status == FitStatus::Skipped {
                let m = if snap.is_empty() {
                    ls.mean
                } else {
                    snap.values.iter().sum::<f64>() / snap.len() as f64
                };
                (vec![m; n], vec![ls.sd * ls.sd; n])
            } else {
                krige_predict(&snap, &fit.params, &targets)?
            };
            let base = out.idx(k, l, 0);
            out.mean[base..base + n].copy_from_slice(&mean);
            out.var[base..base + n].copy_from_slice(&var);
            out.fits.push(SnapshotFit {
                k,
                l,
                n_obs: snap.len(),
                fit,
            });
        }
    }
    Ok(out)
}
