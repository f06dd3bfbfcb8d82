//! Test-only helpers: small problem builders and a dense joint-Gaussian
//! oracle assembled directly from the model equations.

#![allow(dead_code)]

use co_assim::dynamics::{AdvectionSign, PropagatorSet, WindField};
use co_assim::grid::{build_grid, Grid3D, GridSpec, EARTH_RADIUS_M};
use co_assim::obs::{NoiseModel, Observation, ObservationSet};
use co_assim::sampler::{ChainState, Model, ModelParams, PriorConfig, StatePrior};
use co_assim::seed::SimRng;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

pub fn grid(nx: usize, ny: usize, levels: usize) -> Grid3D {
    build_grid(GridSpec {
        lon_min: 240.0,
        lon_max: 240.0 + (nx - 1) as f64,
        lat_min: 40.0,
        lat_max: 40.0 + (ny - 1) as f64,
        d_lon: 1.0,
        d_lat: 1.0,
        levels: (0..levels).map(|l| 850.0 - 100.0 * l as f64).collect(),
        earth_radius: EARTH_RADIUS_M,
    })
    .unwrap()
}

pub fn random_winds(g: &Grid3D, t: usize, scale: f64, rng: &mut SimRng) -> WindField {
    let len = t * g.n_levels() * g.n_cells();
    let u = (0..len).map(|_| rng.random_range(-scale..scale)).collect();
    let v = (0..len).map(|_| rng.random_range(-scale..scale)).collect();
    WindField::new(t, g.n_levels(), g.n_cells(), 10_800.0, u, v).unwrap()
}

/// Observations on a random ~`frac` subset of columns, recorded sigma in
/// `[0.5, 2]`.
pub fn random_obs(g: &Grid3D, t: usize, frac: f64, rng: &mut SimRng) -> ObservationSet {
    let mut records = Vec::new();
    for _k in 0..t {
        let cols: Vec<usize> = (0..g.n_cells()).filter(|_| rng.random::<f64>() < frac).collect();
        for l in 0..g.n_levels() {
            records.push(
                cols.iter()
                    .map(|&c| Observation {
                        cell: c,
                        value: 10.0 + 2.0 * l as f64 + rng.random_range(-3.0..3.0),
                        sigma: rng.random_range(0.5..2.0),
                    })
                    .collect(),
            );
        }
    }
    ObservationSet::new(t, g.n_levels(), g.n_cells(), records).unwrap()
}

pub fn fixed_state_prior(levels: usize) -> StatePrior {
    StatePrior {
        mean: (0..levels).map(|l| 10.0 + 2.0 * l as f64).collect(),
        sd: vec![3.0; levels],
        ghost_sd: vec![6.0; levels],
    }
}

pub fn test_params(levels: usize) -> ModelParams {
    ModelParams {
        m: (0..levels).map(|l| 0.93 + 0.02 * l as f64).collect(),
        f: (0..levels).map(|l| if l == 0 { 0.0 } else { 0.07 }).collect(),
        sigma2_eta: (0..levels).map(|l| 0.6 + 0.3 * l as f64).collect(),
        sigma2_b: (0..levels).map(|l| 0.4 + 0.2 * l as f64).collect(),
    }
}

pub struct Problem {
    pub grid: Grid3D,
    pub winds: WindField,
    pub obs: ObservationSet,
    pub model: Model,
}

pub fn problem(nx: usize, ny: usize, levels: usize, t: usize, wind: f64, seed: u64) -> Problem {
    let mut rng = SimRng::seed_from_u64(seed);
    let g = grid(nx, ny, levels);
    let winds = random_winds(&g, t, wind, &mut rng);
    let obs = random_obs(&g, t, 0.6, &mut rng);
    let props = PropagatorSet::build(&g, &winds, AdvectionSign::Model).unwrap();
    let model = Model::new(props, &obs, NoiseModel::Recorded, PriorConfig::default(), fixed_state_prior(levels), true).unwrap();
    Problem { grid: g, winds, obs, model }
}

pub fn random_state(model: &Model, params: ModelParams, seed: u64) -> ChainState {
    let mut rng = SimRng::seed_from_u64(seed);
    let x = (0..model.state_len()).map(|_| rng.random_range(5.0..20.0)).collect();
    let xb = (0..model.ghost_len()).map(|_| rng.random_range(5.0..20.0)).collect();
    ChainState::new(model, x, xb, params, rng).unwrap()
}

/// Joint Gaussian over `z = [X, X^B]` with precision `q` and linear term
/// `lin` (density proportional to `exp(-z'Qz/2 + lin'z)`), assembled from an
/// explicit residual design matrix. Stencil coefficients are recomputed here
/// from winds and geometry.
pub struct DenseJoint {
    pub n_state: usize,
    pub q: DMatrix<f64>,
    pub lin: DVector<f64>,
}

impl DenseJoint {
    pub fn build(p: &Problem, params: &ModelParams) -> Self {
        let (g, w, m) = (&p.grid, &p.winds, &p.model);
        let (t, nl, n, nb) = (m.n_times, m.n_levels, m.n_cells, m.n_ghost);
        let n_state = t * nl * n;
        let dim = n_state + t * nl * nb;
        let xi = |k: usize, l: usize, i: usize| (k * nl + l) * n + i;
        let bi = |k: usize, l: usize, b: usize| n_state + (k * nl + l) * nb + b;
        // position of (ix, iy) at (k, l) in z, interior or ring
        let at = |k: usize, l: usize, ix: i64, iy: i64| -> usize {
            if ix >= 0 && iy >= 0 && (ix as usize) < g.nx && (iy as usize) < g.ny {
                xi(k, l, iy as usize * g.nx + ix as usize)
            } else {
                bi(k, l, g.ghost_at(ix, iy).expect("stencil leaves the ring"))
            }
        };

        // each row: (sparse coefficients, target, variance)
        let mut rows: Vec<(Vec<(usize, f64)>, f64, f64)> = Vec::new();
        let sp = &m.state_prior;
        for l in 0..nl {
            for i in 0..n {
                rows.push((vec![(xi(0, l, i), 1.0)], sp.mean[l], sp.sd[l].powi(2)));
            }
            for b in 0..nb {
                rows.push((vec![(bi(0, l, b), 1.0)], sp.mean[l], sp.ghost_sd[l].powi(2)));
            }
        }
        for kn in 1..t {
            let k = kn - 1;
            for l in 0..nl {
                for b in 0..nb {
                    rows.push((vec![(bi(kn, l, b), 1.0), (bi(k, l, b), -1.0)], 0.0, params.sigma2_b[l]));
                }
                for i in 0..n {
                    let (ix, iy) = ((i % g.nx) as i64, (i / g.nx) as i64);
                    let lat = (g.spec.lat_min + iy as f64 * g.spec.d_lat).to_radians();
                    let dy = g.spec.earth_radius * g.spec.d_lat.to_radians();
                    let dx = g.spec.earth_radius * lat.cos() * g.spec.d_lon.to_radians();
                    let (u, v) = w.at(k, l, i);
                    let cx = w.dt * u / (2.0 * dx);
                    let cy = w.dt * v / (2.0 * dy);
                    let mut coefs = vec![(xi(kn, l, i), 1.0), (xi(k, l, i), -params.m[l])];
                    if l > 0 {
                        coefs.push((xi(kn, l - 1, i), -params.f[l]));
                    }
                    coefs.push((at(k, l, ix + 1, iy), -cx));
                    coefs.push((at(k, l, ix - 1, iy), cx));
                    coefs.push((at(k, l, ix, iy + 1), -cy));
                    coefs.push((at(k, l, ix, iy - 1), cy));
                    rows.push((coefs, 0.0, params.sigma2_eta[l]));
                }
            }
        }
        for k in 0..t {
            for l in 0..nl {
                for o in p.obs.get(k, l) {
                    rows.push((vec![(xi(k, l, o.cell), 1.0)], o.value, o.sigma * o.sigma));
                }
            }
        }

        let mut design = DMatrix::<f64>::zeros(rows.len(), dim);
        let mut target = DVector::<f64>::zeros(rows.len());
        let mut weight = DVector::<f64>::zeros(rows.len());
        for (r, (coefs, h, v)) in rows.iter().enumerate() {
            for &(c, a) in coefs {
                design[(r, c)] += a;
            }
            target[r] = *h;
            weight[r] = 1.0 / v;
        }
        let weighted = DMatrix::from_fn(rows.len(), dim, |r, c| design[(r, c)] * weight[r]);
        let q = design.transpose() * &weighted;
        let lin = weighted.transpose() * target;
        DenseJoint { n_state, q, lin }
    }

    /// Conditional of coordinate `idx` given all others at `z`, computed by
    /// Gaussian conditioning on the joint covariance.
    pub fn conditional(&self, cov: &DMatrix<f64>, mean: &DVector<f64>, z: &DVector<f64>, idx: usize) -> (f64, f64) {
        let dim = z.len();
        let rest: Vec<usize> = (0..dim).filter(|&j| j != idx).collect();
        let s_rr = DMatrix::from_fn(rest.len(), rest.len(), |a, b| cov[(rest[a], rest[b])]);
        let s_ir = DVector::from_fn(rest.len(), |a, _| cov[(idx, rest[a])]);
        let dev = DVector::from_fn(rest.len(), |a, _| z[rest[a]] - mean[rest[a]]);
        let chol = s_rr.cholesky().expect("marginal covariance is positive definite");
        let w = chol.solve(&s_ir);
        (mean[idx] + w.dot(&dev), cov[(idx, idx)] - w.dot(&s_ir))
    }

    pub fn moments(&self) -> (DMatrix<f64>, DVector<f64>) {
        let cov = self.q.clone().cholesky().expect("joint precision is positive definite").inverse();
        let mean = &cov * &self.lin;
        (cov, mean)
    }
}

pub fn stack(cs: &ChainState) -> DVector<f64> {
    DVector::from_iterator(cs.x.len() + cs.xb.len(), cs.x.iter().chain(cs.xb.iter()).copied())
}
