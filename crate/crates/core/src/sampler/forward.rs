//! Ancestral sampling from the hierarchical model itself: parameters from
//! their priors, states from the process stage, data from the data stage.
//! Used for generate-and-recover checks and joint-distribution tests.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::conjugate::Gaussian;
use super::model::Model;
use super::ModelParams;

fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, var: f64) -> f64 {
    Gaussian { mean, var }.sample(rng)
}

pub fn draw_params<R: Rng + ?Sized>(model: &Model, rng: &mut R) -> ModelParams {
    let pr = &model.priors;
    let l = model.n_levels;
    let m = (0..l).map(|_| normal(rng, pr.m0, pr.sigma2_m)).collect();
    let f = (0..l)
        .map(|lv| if lv == 0 || !model.coupled { 0.0 } else { normal(rng, pr.f0, pr.sigma2_f) })
        .collect();
    let sigma2_eta = (0..l).map(|_| pr.eta_prior().sample(rng)).collect();
    let sigma2_b = (0..l).map(|_| pr.boundary_prior().sample(rng)).collect();
    ModelParams {
        m,
        f,
        sigma2_eta,
        sigma2_b,
    }
}

/// Draws `(X, X^B)` from the process stage given `params`.
pub fn simulate_process<R: Rng + ?Sized>(model: &Model, params: &ModelParams, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let sp = &model.state_prior;
    let mut x = vec![0.0; model.state_len()];
    let mut xb = vec![0.0; model.ghost_len()];
    for l in 0..model.n_levels {
        for i in 0..model.n_cells {
            x[model.idx(0, l, i)] = normal(rng, sp.mean[l], sp.sd[l].powi(2));
        }
        for b in 0..model.n_ghost {
            xb[model.gidx(0, l, b)] = normal(rng, sp.mean[l], sp.ghost_sd[l].powi(2));
        }
    }
    for kn in 1..model.n_times {
        for l in 0..model.n_levels {
            for b in 0..model.n_ghost {
                let prev = xb[model.gidx(kn - 1, l, b)];
                xb[model.gidx(kn, l, b)] = normal(rng, prev, params.sigma2_b[l]);
            }
        }
        // levels bottom-up so the forcing term sees level l-1 at time kn
        for l in 0..model.n_levels {
            for i in 0..model.n_cells {
                let mu = model.transition_mean(&x, &xb, params, kn, l, i);
                x[model.idx(kn, l, i)] = normal(rng, mu, params.sigma2_eta[l]);
            }
        }
    }
    (x, xb)
}

/// Fresh data-stage draws at every observed position of `model`; entries
/// at unobserved positions are left at zero.
pub fn draw_observations<R: Rng + ?Sized>(model: &Model, x: &[f64], rng: &mut R) -> Vec<f64> {
    x.iter()
        .zip(&model.obs_prec)
        .map(|(&xi, &p)| {
            if p > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                xi + z / p.sqrt()
            } else {
                0.0
            }
        })
        .collect()
}
