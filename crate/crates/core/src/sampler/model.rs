use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::conjugate::{Gaussian, GaussianAccumulator, InverseGamma};
use super::{InitConfig, ModelParams, PriorConfig, StatePrior};
use crate::dynamics::PropagatorSet;
use crate::error::{Error, Result};
use crate::grid::{Grid3D, NeighborRef};
use crate::obs::{NoiseModel, ObservationSet};
use crate::seed::SimRng;

/// Everything that stays fixed during a chain: stencils, data, priors.
#[derive(Debug, Clone)]
pub struct Model {
    pub n_times: usize,
    pub n_levels: usize,
    pub n_cells: usize,
    pub n_ghost: usize,
    pub props: PropagatorSet,
    /// Observed value per `(k, l, i)`; meaningless where `obs_prec == 0`.
    pub obs_value: Vec<f64>,
    /// Observation precision per `(k, l, i)`, zero where unobserved.
    pub obs_prec: Vec<f64>,
    pub priors: PriorConfig,
    pub state_prior: StatePrior,
    /// When false, `f` is pinned at zero on every level.
    pub coupled: bool,
    /// Alternating `m | f` and `f | m` draws per sweep on coupled levels.
    pub mf_inner: usize,
}

/// Current draw of every unknown plus the chain's random stream.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub xb: Vec<f64>,
    pub params: ModelParams,
    pub iteration: usize,
    pub rng: SimRng,
}

impl Model {
    pub fn new(
        props: PropagatorSet,
        obs: &ObservationSet,
        noise: NoiseModel,
        priors: PriorConfig,
        state_prior: StatePrior,
        coupled: bool,
    ) -> Result<Self> {
        priors.validate()?;
        let (t, l, n) = (obs.n_times, props.n_levels, props.n_cells);
        if obs.n_levels != l || obs.n_cells != n {
            return Err(Error::Dimension(format!(
                "observations are {}x{} (levels x cells), stencils {l}x{n}",
                obs.n_levels, obs.n_cells
            )));
        }
        if props.props.len() != t.saturating_sub(1) * l {
            return Err(Error::Dimension(format!(
                "{} propagators for T = {t}, L = {l}",
                props.props.len()
            )));
        }
        if state_prior.mean.len() != l || state_prior.sd.len() != l || state_prior.ghost_sd.len() != l {
            return Err(Error::Dimension("state prior does not cover every level".into()));
        }
        if state_prior.sd.iter().chain(&state_prior.ghost_sd).any(|s| !(*s > 0.0)) {
            return Err(Error::config("state_prior", "spreads must be positive"));
        }
        let mut obs_value = vec![0.0; t * l * n];
        let mut obs_prec = vec![0.0; t * l * n];
        for k in 0..t {
            for lv in 0..l {
                for o in obs.get(k, lv) {
                    let idx = (k * l + lv) * n + o.cell;
                    let sd = noise.sd(o);
                    obs_value[idx] = o.value;
                    obs_prec[idx] = 1.0 / (sd * sd);
                }
            }
        }
        Ok(Model {
            n_times: t,
            n_levels: l,
            n_cells: n,
            n_ghost: props.n_ghost,
            props,
            obs_value,
            obs_prec,
            priors,
            state_prior,
            coupled,
            mf_inner: 1,
        })
    }

    #[inline]
    pub fn idx(&self, k: usize, l: usize, i: usize) -> usize {
        (k * self.n_levels + l) * self.n_cells + i
    }

    #[inline]
    pub fn gidx(&self, k: usize, l: usize, b: usize) -> usize {
        (k * self.n_levels + l) * self.n_ghost + b
    }

    pub fn state_len(&self) -> usize {
        self.n_times * self.n_levels * self.n_cells
    }

    pub fn ghost_len(&self) -> usize {
        self.n_times * self.n_levels * self.n_ghost
    }

    /// Mean of `X_{kn}(l)` at cell `j` given everything at time `kn - 1`
    /// and level `l - 1` at time `kn`. Requires `kn >= 1`.
    #[inline]
    pub fn transition_mean(&self, x: &[f64], xb: &[f64], p: &ModelParams, kn: usize, l: usize, j: usize) -> f64 {
        let k = kn - 1;
        let base = (k * self.n_levels + l) * self.n_cells;
        let gbase = (k * self.n_levels + l) * self.n_ghost;
        let mut mu = p.m[l] * x[base + j];
        if l > 0 {
            mu += p.f[l] * x[self.idx(kn, l - 1, j)];
        }
        for &(r, c) in &self.props.get(k, l).rows[j] {
            mu += c * match r {
                NeighborRef::Interior(q) => x[base + q],
                NeighborRef::Ghost(b) => xb[gbase + b],
            };
        }
        mu
    }

    /// Exact full conditional of `X_k(s_i, l)`.
    pub fn state_conditional(&self, cs: &ChainState, k: usize, l: usize, i: usize) -> Gaussian {
        let (x, xb, p) = (&cs.x, &cs.xb, &cs.params);
        let idx = self.idx(k, l, i);
        let mut acc = if k == 0 {
            let sd = self.state_prior.sd[l];
            GaussianAccumulator::from_prior(self.state_prior.mean[l], sd * sd)
        } else {
            GaussianAccumulator::from_prior(self.transition_mean(x, xb, p, k, l, i), p.sigma2_eta[l])
        };
        let prec = self.obs_prec[idx];
        if prec > 0.0 {
            acc.add_prec(1.0, self.obs_value[idx], prec);
        }
        let cur = x[idx];
        let v = p.sigma2_eta[l];
        if k + 1 < self.n_times {
            // own successor, entering through the persistence term
            let a = p.m[l];
            let target = x[self.idx(k + 1, l, i)];
            let mu = self.transition_mean(x, xb, p, k + 1, l, i);
            acc.add(a, target - (mu - a * cur), v);
            // successors of the cells whose stencils reference this one
            let prop = self.props.get(k, l);
            for &(row, slot) in &self.props.adjacency.interior[i] {
                let a = prop.rows[row][slot].1;
                let target = x[self.idx(k + 1, l, row)];
                let mu = self.transition_mean(x, xb, p, k + 1, l, row);
                acc.add(a, target - (mu - a * cur), v);
            }
        }
        if k >= 1 && l + 1 < self.n_levels {
            // forcing of the level above at the same time
            let a = p.f[l + 1];
            if a != 0.0 {
                let target = x[self.idx(k, l + 1, i)];
                let mu = self.transition_mean(x, xb, p, k, l + 1, i);
                acc.add(a, target - (mu - a * cur), p.sigma2_eta[l + 1]);
            }
        }
        acc.finish()
    }

    /// Exact full conditional of the ghost value `X^B_k(b, l)`.
    pub fn ghost_conditional(&self, cs: &ChainState, k: usize, l: usize, b: usize) -> Gaussian {
        let (x, xb, p) = (&cs.x, &cs.xb, &cs.params);
        let gi = self.gidx(k, l, b);
        let vb = p.sigma2_b[l];
        let mut acc = if k == 0 {
            let sd = self.state_prior.ghost_sd[l];
            GaussianAccumulator::from_prior(self.state_prior.mean[l], sd * sd)
        } else {
            GaussianAccumulator::from_prior(xb[self.gidx(k - 1, l, b)], vb)
        };
        if k + 1 < self.n_times {
            acc.add(1.0, xb[self.gidx(k + 1, l, b)], vb);
            let cur = xb[gi];
            let prop = self.props.get(k, l);
            let v = p.sigma2_eta[l];
            for &(row, slot) in &self.props.adjacency.ghost[b] {
                let a = prop.rows[row][slot].1;
                let target = x[self.idx(k + 1, l, row)];
                let mu = self.transition_mean(x, xb, p, k + 1, l, row);
                acc.add(a, target - (mu - a * cur), v);
            }
        }
        acc.finish()
    }

    /// Conditional of `m(l)`: regression of each transition on `X_k(s, l)`.
    pub fn m_conditional(&self, cs: &ChainState, l: usize) -> Gaussian {
        let (x, xb, p) = (&cs.x, &cs.xb, &cs.params);
        let mut acc = GaussianAccumulator::from_prior(self.priors.m0, self.priors.sigma2_m);
        let v = p.sigma2_eta[l];
        for kn in 1..self.n_times {
            for i in 0..self.n_cells {
                let a = x[self.idx(kn - 1, l, i)];
                let mu = self.transition_mean(x, xb, p, kn, l, i);
                acc.add(a, x[self.idx(kn, l, i)] - (mu - p.m[l] * a), v);
            }
        }
        acc.finish()
    }

    /// Conditional of `f(l)` for `l >= 1`: regression on `X_{k+1}(s, l-1)`.
    pub fn f_conditional(&self, cs: &ChainState, l: usize) -> Result<Gaussian> {
        if l == 0 || l >= self.n_levels {
            return Err(Error::OutOfRange(format!("forcing is sampled only for levels 1..{}", self.n_levels)));
        }
        let (x, xb, p) = (&cs.x, &cs.xb, &cs.params);
        let mut acc = GaussianAccumulator::from_prior(self.priors.f0, self.priors.sigma2_f);
        let v = p.sigma2_eta[l];
        for kn in 1..self.n_times {
            for i in 0..self.n_cells {
                let a = x[self.idx(kn, l - 1, i)];
                let mu = self.transition_mean(x, xb, p, kn, l, i);
                acc.add(a, x[self.idx(kn, l, i)] - (mu - p.f[l] * a), v);
            }
        }
        Ok(acc.finish())
    }

    /// Sufficient statistics of the `(m, f)` regression at level `l`.
    pub fn regression_stats(&self, cs: &ChainState, l: usize) -> RegressionStats {
        let (x, xb, p) = (&cs.x, &cs.xb, &cs.params);
        let mut s = RegressionStats::default();
        for kn in 1..self.n_times {
            for i in 0..self.n_cells {
                let a = x[self.idx(kn - 1, l, i)];
                let w = if l > 0 { x[self.idx(kn, l - 1, i)] } else { 0.0 };
                let mu = self.transition_mean(x, xb, p, kn, l, i);
                let z = x[self.idx(kn, l, i)] - (mu - p.m[l] * a - p.f[l] * w);
                s.xx += a * a;
                s.ww += w * w;
                s.xw += a * w;
                s.xz += a * z;
                s.wz += w * z;
            }
        }
        s
    }

    /// Alternates the scalar `m` and `f` conditionals `n` times using
    /// `stats`, which do not change while only `m` and `f` move.
    pub fn sample_m_f_inner(&self, cs: &mut ChainState, l: usize, stats: &RegressionStats, n: usize) {
        let pr = &self.priors;
        let v = cs.params.sigma2_eta[l];
        let coupled = self.coupled && l > 0;
        for _ in 0..n.max(1) {
            let f = cs.params.f[l];
            let mut acc = GaussianAccumulator::from_prior(pr.m0, pr.sigma2_m);
            acc.add_suff(stats.xx, stats.xz - f * stats.xw, v);
            cs.params.m[l] = acc.finish().sample(&mut cs.rng);
            if !coupled {
                break;
            }
            let m = cs.params.m[l];
            let mut acc = GaussianAccumulator::from_prior(pr.f0, pr.sigma2_f);
            acc.add_suff(stats.ww, stats.wz - m * stats.xw, v);
            cs.params.f[l] = acc.finish().sample(&mut cs.rng);
        }
    }

    /// Conditional of `sigma2_eta(l)` from the interior transition residuals.
    pub fn sigma2_eta_conditional(&self, cs: &ChainState, l: usize) -> Result<InverseGamma> {
        let (x, xb, p) = (&cs.x, &cs.xb, &cs.params);
        let mut ssr = 0.0;
        for kn in 1..self.n_times {
            for i in 0..self.n_cells {
                let r = x[self.idx(kn, l, i)] - self.transition_mean(x, xb, p, kn, l, i);
                ssr += r * r;
            }
        }
        let count = self.n_times.saturating_sub(1) * self.n_cells;
        self.priors.eta_prior().posterior(ssr, count)
    }

    /// Conditional of `sigma2_B(l)` from the boundary random-walk increments.
    pub fn sigma2_b_conditional(&self, cs: &ChainState, l: usize) -> Result<InverseGamma> {
        let mut ssr = 0.0;
        for kn in 1..self.n_times {
            for b in 0..self.n_ghost {
                let r = cs.xb[self.gidx(kn, l, b)] - cs.xb[self.gidx(kn - 1, l, b)];
                ssr += r * r;
            }
        }
        let count = self.n_times.saturating_sub(1) * self.n_ghost;
        self.priors.boundary_prior().posterior(ssr, count)
    }

    pub fn sample_state_cell(&self, cs: &mut ChainState, k: usize, l: usize, i: usize) -> f64 {
        let g = self.state_conditional(cs, k, l, i);
        let v = g.sample(&mut cs.rng);
        let idx = self.idx(k, l, i);
        cs.x[idx] = v;
        v
    }

    pub fn sample_boundary_cell(&self, cs: &mut ChainState, k: usize, l: usize, b: usize) -> f64 {
        let g = self.ghost_conditional(cs, k, l, b);
        let v = g.sample(&mut cs.rng);
        let idx = self.gidx(k, l, b);
        cs.xb[idx] = v;
        v
    }

    pub fn sample_m(&self, cs: &mut ChainState, l: usize) -> f64 {
        let v = self.m_conditional(cs, l).sample(&mut cs.rng);
        cs.params.m[l] = v;
        v
    }

    pub fn sample_f(&self, cs: &mut ChainState, l: usize) -> Result<f64> {
        let v = self.f_conditional(cs, l)?.sample(&mut cs.rng);
        cs.params.f[l] = v;
        Ok(v)
    }

    pub fn sample_sigma2_eta(&self, cs: &mut ChainState, l: usize) -> Result<f64> {
        let v = self.sigma2_eta_conditional(cs, l)?.sample(&mut cs.rng);
        cs.params.sigma2_eta[l] = v;
        Ok(v)
    }

    pub fn sample_sigma2_b(&self, cs: &mut ChainState, l: usize) -> Result<f64> {
        let v = self.sigma2_b_conditional(cs, l)?.sample(&mut cs.rng);
        cs.params.sigma2_b[l] = v;
        Ok(v)
    }

    /// One pass over every interior cell (time, then level, then cell) and
    /// then every ghost cell.
    pub fn sweep_states(&self, cs: &mut ChainState) {
        for k in 0..self.n_times {
            for l in 0..self.n_levels {
                for i in 0..self.n_cells {
                    self.sample_state_cell(cs, k, l, i);
                }
            }
        }
        for k in 0..self.n_times {
            for l in 0..self.n_levels {
                for b in 0..self.n_ghost {
                    self.sample_boundary_cell(cs, k, l, b);
                }
            }
        }
    }

    /// Per level: `m`, `f` (coupled only, `l >= 1`), `sigma2_eta`, `sigma2_B`.
    pub fn sweep_params(&self, cs: &mut ChainState) -> Result<()> {
        for l in 0..self.n_levels {
            let stats = self.regression_stats(cs, l);
            self.sample_m_f_inner(cs, l, &stats, self.mf_inner);
            self.sample_sigma2_eta(cs, l)?;
            self.sample_sigma2_b(cs, l)?;
        }
        Ok(())
    }

    /// Full Gibbs sweep; fails if any draw is non-finite.
    pub fn sweep(&self, cs: &mut ChainState) -> Result<()> {
        self.sweep_states(cs);
        self.sweep_params(cs)?;
        cs.iteration += 1;
        let bad_state = cs.x.iter().chain(&cs.xb).any(|v| !v.is_finite());
        let p = &cs.params;
        let bad_param = p.m.iter().chain(&p.f).chain(&p.sigma2_eta).chain(&p.sigma2_b).any(|v| !v.is_finite());
        if bad_state || bad_param {
            return Err(Error::Numerical(format!("non-finite draw at iteration {}", cs.iteration)));
        }
        Ok(())
    }

    /// Starting parameters: prior means, with `f` zero when uncoupled.
    pub fn initial_params(&self) -> ModelParams {
        let pr = &self.priors;
        let f0 = if self.coupled { pr.f0 } else { 0.0 };
        ModelParams::uniform(self.n_levels, pr.m0, f0, pr.eta_prior().mean(), pr.boundary_prior().mean())
    }
}

/// Cross products of the `m` regressor `a = X_k(l)`, the `f` regressor
/// `w = X_{k+1}(l-1)` and the response `z` with both terms removed.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RegressionStats {
    pub xx: f64,
    pub ww: f64,
    pub xw: f64,
    pub xz: f64,
    pub wz: f64,
}

impl ChainState {
    pub fn new(model: &Model, x: Vec<f64>, xb: Vec<f64>, params: ModelParams, rng: SimRng) -> Result<Self> {
        if x.len() != model.state_len() || xb.len() != model.ghost_len() || params.n_levels() != model.n_levels {
            return Err(Error::Dimension("chain state does not match model".into()));
        }
        params.validate()?;
        Ok(ChainState {
            x,
            xb,
            params,
            iteration: 0,
            rng,
        })
    }
}

/// Draws the starting state: per-level observation mean plus a spatially
/// correlated Gaussian field (exponential correlation in cell units) over
/// the interior and ghost ring together.
pub fn init_chain(model: &Model, grid: &Grid3D, obs: &ObservationSet, init: &InitConfig, mut rng: SimRng) -> Result<ChainState> {
    let global = obs.global_stats();
    if global.count == 0 {
        return Err(Error::MissingArtifact("cannot initialise a chain without observations".into()));
    }
    if grid.n_cells() != model.n_cells || grid.n_ghost() != model.n_ghost {
        return Err(Error::Dimension("grid does not match model".into()));
    }
    let (nx, ny) = (grid.nx as i64, grid.ny as i64);
    // extended lattice: interior cells first (flat order), then ring cells
    let mut coords: Vec<(f64, f64)> = (0..grid.n_cells())
        .map(|i| {
            let c = grid.unflatten(i);
            (c.ix as f64, c.iy as f64)
        })
        .collect();
    coords.extend((0..grid.n_ghost()).map(|b| {
        let (x, y) = grid.ghost_coords(b);
        debug_assert!((-1..=nx).contains(&x) && (-1..=ny).contains(&y));
        (x as f64, y as f64)
    }));
    let n_ext = coords.len();
    let corr = DMatrix::from_fn(n_ext, n_ext, |a, b| {
        let d = ((coords[a].0 - coords[b].0).powi(2) + (coords[a].1 - coords[b].1).powi(2)).sqrt();
        (-d / init.range_cells).exp()
    });
    let chol = corr
        .cholesky()
        .ok_or_else(|| Error::Numerical("initial correlation matrix is not positive definite".into()))?;
    let lower = chol.l();

    let mut x = vec![0.0; model.state_len()];
    let mut xb = vec![0.0; model.ghost_len()];
    for k in 0..model.n_times {
        for l in 0..model.n_levels {
            let s = obs.level_stats(l);
            let (mean, sd) = match s.count {
                0 => (global.mean, global.sd),
                1 => (s.mean, global.sd),
                _ => (s.mean, s.sd),
            };
            let amp = sd * init.sd_scale;
            let field = if amp > 0.0 {
                let z = DVector::from_fn(n_ext, |_, _| StandardNormal.sample(&mut rng));
                &lower * z
            } else {
                DVector::zeros(n_ext)
            };
            for i in 0..model.n_cells {
                x[model.idx(k, l, i)] = mean + amp * field[i];
            }
            for b in 0..model.n_ghost {
                xb[model.gidx(k, l, b)] = mean + amp * field[model.n_cells + b];
            }
        }
    }
    ChainState::new(model, x, xb, model.initial_params(), rng)
}
