mod common;

use co_assim::dynamics::{Propagator, PropagatorSet};
use co_assim::grid::NeighborRef;
use co_assim::obs::{NoiseModel, Observation, ObservationSet};
use co_assim::sampler::forward::{draw_params, simulate_process};
use co_assim::sampler::{run_chain, ChainState, Model, ModelParams, PriorConfig, SamplerConfig, StatePrior};
use co_assim::seed::SimRng;
use common::*;
use rand::{Rng, SeedableRng};

/// A single cell with four zero-coefficient ghost neighbors and one level.
fn one_cell_model(t: usize, obs: Vec<Option<(f64, f64)>>, priors: PriorConfig, prior: (f64, f64)) -> Model {
    let row = [
        (NeighborRef::Ghost(0), 0.0),
        (NeighborRef::Ghost(1), 0.0),
        (NeighborRef::Ghost(2), 0.0),
        (NeighborRef::Ghost(3), 0.0),
    ];
    let props = (0..t - 1)
        .map(|k| Propagator {
            k,
            level: 0,
            rows: vec![row],
            n_ghost: 4,
        })
        .collect();
    let set = PropagatorSet::from_parts(1, 1, 4, props).unwrap();
    let records = obs
        .into_iter()
        .map(|o| o.map(|(value, sigma)| vec![Observation { cell: 0, value, sigma }]).unwrap_or_default())
        .collect();
    let obs = ObservationSet::new(t, 1, 1, records).unwrap();
    let sp = StatePrior {
        mean: vec![prior.0],
        sd: vec![prior.1],
        ghost_sd: vec![1.0],
    };
    Model::new(set, &obs, NoiseModel::Recorded, priors, sp, true).unwrap()
}

fn params1(m: f64, s_eta: f64) -> ModelParams {
    ModelParams {
        m: vec![m],
        f: vec![0.0],
        sigma2_eta: vec![s_eta],
        sigma2_b: vec![1.0],
    }
}

#[test]
fn conditionals_match_dense_joint() {
    let p = problem(4, 4, 2, 4, 8.0, 11);
    let params = test_params(2);
    let cs = random_state(&p.model, params.clone(), 5);
    let joint = DenseJoint::build(&p, &params);
    let (cov, mean) = joint.moments();
    let z = stack(&cs);
    let mut rng = SimRng::seed_from_u64(99);
    for _ in 0..40 {
        let idx = rng.random_range(0..z.len());
        let (om, ov) = joint.conditional(&cov, &mean, &z, idx);
        let g = if idx < joint.n_state {
            let (n, nl) = (p.model.n_cells, p.model.n_levels);
            p.model.state_conditional(&cs, idx / (n * nl), (idx / n) % nl, idx % n)
        } else {
            let j = idx - joint.n_state;
            let (nb, nl) = (p.model.n_ghost, p.model.n_levels);
            p.model.ghost_conditional(&cs, j / (nb * nl), (j / nb) % nl, j % nb)
        };
        assert!(((g.mean - om) / om).abs() < 1e-8, "mean {} vs {om} at {idx}", g.mean);
        assert!(((g.var - ov) / ov).abs() < 1e-8, "var {} vs {ov} at {idx}", g.var);
    }
}

#[test]
fn two_state_toy_matches_closed_form_conditionals() {
    let (mu0, s0, m, s_eta, y, s_eps) = (3.0, 2.0, 0.8, 0.5, 4.5, 0.7);
    let model = one_cell_model(2, vec![None, Some((y, s_eps))], PriorConfig::default(), (mu0, s0));
    let cs = ChainState::new(&model, vec![1.7, 2.9], vec![0.0; 8], params1(m, s_eta), SimRng::seed_from_u64(1)).unwrap();

    let g0 = model.state_conditional(&cs, 0, 0, 0);
    let p0 = 1.0 / (s0 * s0) + m * m / s_eta;
    assert!((g0.var - 1.0 / p0).abs() < 1e-14);
    assert!((g0.mean - (mu0 / (s0 * s0) + m * 2.9 / s_eta) / p0).abs() < 1e-13);

    let g1 = model.state_conditional(&cs, 1, 0, 0);
    let p1 = 1.0 / s_eta + 1.0 / (s_eps * s_eps);
    assert!((g1.var - 1.0 / p1).abs() < 1e-14);
    assert!((g1.mean - (m * 1.7 / s_eta + y / (s_eps * s_eps)) / p1).abs() < 1e-13);
}

#[test]
fn three_state_toy_posterior_moments_by_sampling() {
    // X0 ~ N(mu0, s0^2), X_{k+1} = m X_k + eta, y observed at k = 0 and 2
    let (mu0, s0, m, s_eta) = (2.0, 1.5, 0.9, 0.4);
    let (y0, y2, s_eps) = (2.6, 1.2, 0.5);
    let model = one_cell_model(3, vec![Some((y0, s_eps)), None, Some((y2, s_eps))], PriorConfig::default(), (mu0, s0));

    // closed form: precision of (X0, X1, X2)
    let mut q = nalgebra::Matrix3::<f64>::zeros();
    let mut lin = nalgebra::Vector3::<f64>::zeros();
    q[(0, 0)] += 1.0 / (s0 * s0);
    lin[0] += mu0 / (s0 * s0);
    for k in 0..2 {
        q[(k + 1, k + 1)] += 1.0 / s_eta;
        q[(k, k)] += m * m / s_eta;
        q[(k, k + 1)] -= m / s_eta;
        q[(k + 1, k)] -= m / s_eta;
    }
    q[(0, 0)] += 1.0 / (s_eps * s_eps);
    lin[0] += y0 / (s_eps * s_eps);
    q[(2, 2)] += 1.0 / (s_eps * s_eps);
    lin[2] += y2 / (s_eps * s_eps);
    let cov = q.try_inverse().unwrap();
    let mean = cov * lin;

    let mut cs = ChainState::new(&model, vec![0.0; 3], vec![0.0; 12], params1(m, s_eta), SimRng::seed_from_u64(4)).unwrap();
    let n = 20_000;
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..200 {
        model.sweep_states(&mut cs);
    }
    for _ in 0..n {
        model.sweep_states(&mut cs);
        for k in 0..3 {
            sum[k] += cs.x[k];
            sq[k] += cs.x[k] * cs.x[k];
        }
    }
    for k in 0..3 {
        let mk = sum[k] / n as f64;
        let vk = sq[k] / n as f64 - mk * mk;
        assert!((mk - mean[k]).abs() / mean[k].abs() < 0.02, "mean[{k}] {mk} vs {}", mean[k]);
        assert!((vk - cov[(k, k)]).abs() / cov[(k, k)] < 0.05, "var[{k}] {vk} vs {}", cov[(k, k)]);
    }
}

#[test]
fn ghost_without_stencil_weight_is_a_bridge() {
    let model = one_cell_model(3, vec![None, None, None], PriorConfig::default(), (0.0, 1.0));
    let mut xb = vec![0.0; 12];
    xb[2] = 4.0; // k = 0, ghost 2
    xb[4 + 2] = 100.0;
    xb[8 + 2] = 7.0;
    let mut p = params1(1.0, 1.0);
    p.sigma2_b = vec![0.3];
    let cs = ChainState::new(&model, vec![0.0; 3], xb, p, SimRng::seed_from_u64(0)).unwrap();
    let g = model.ghost_conditional(&cs, 1, 0, 2);
    assert!((g.mean - 5.5).abs() < 1e-12);
    assert!((g.var - 0.15).abs() < 1e-12);
}

#[test]
fn last_unobserved_cell_only_sees_its_own_transition() {
    let p = problem(3, 3, 2, 3, 5.0, 3);
    let params = test_params(2);
    let mut cs = random_state(&p.model, params, 8);
    // top level, final time, unobserved: prior is the transition itself
    let mut model = p.model.clone();
    let (k, l, i) = (2, 1, 4);
    let idx = model.idx(k, l, i);
    model.obs_prec[idx] = 0.0;
    let g = model.state_conditional(&cs, k, l, i);
    let mu = model.transition_mean(&cs.x, &cs.xb, &cs.params, k, l, i);
    assert!((g.mean - mu).abs() < 1e-12);
    assert!((g.var - cs.params.sigma2_eta[l]).abs() < 1e-12);
    // changing the cell itself does not move its conditional
    cs.x[idx] += 50.0;
    assert!((model.state_conditional(&cs, k, l, i).mean - mu).abs() < 1e-12);
}

#[test]
fn persistence_single_pair_arithmetic() {
    let model = one_cell_model(2, vec![None, None], PriorConfig::default(), (0.0, 1.0));
    let cs = ChainState::new(&model, vec![2.0, 2.2], vec![0.0; 8], params1(1.0, 0.04), SimRng::seed_from_u64(0)).unwrap();
    let g = model.m_conditional(&cs, 0);
    assert!((1.0 / g.var - 1100.0).abs() < 1e-8);
    assert!((g.mean - 1.009_090_909_090_909).abs() < 1e-12);
    assert!(model.f_conditional(&cs, 0).is_err());

    let tight = PriorConfig { sigma2_m: 1e-14, ..PriorConfig::default() };
    let model = one_cell_model(2, vec![None, None], tight, (0.0, 1.0));
    let g = model.m_conditional(&cs, 0);
    assert!((g.mean - 1.0).abs() < 1e-9);
}

#[test]
fn persistence_and_innovation_variance_recovery() {
    let p = problem(6, 6, 2, 12, 4.0, 21);
    let wide = PriorConfig { sigma2_m: 1.0, sigma2_f: 1.0, ..PriorConfig::default() };
    let model = Model { priors: wide, ..p.model.clone() };
    let truth = ModelParams {
        m: vec![0.9, 0.9],
        f: vec![0.0, 0.05],
        sigma2_eta: vec![4.0, 4.0],
        sigma2_b: vec![1.0, 1.0],
    };
    let mut rng = SimRng::seed_from_u64(77);
    let (x, xb) = simulate_process(&model, &truth, &mut rng);
    let cs = ChainState::new(&model, x, xb, truth.clone(), rng).unwrap();
    for l in 0..2 {
        let g = model.m_conditional(&cs, l);
        assert!((g.mean - 0.9).abs() < 3.0 * g.var.sqrt(), "m[{l}] {} +- {}", g.mean, g.var.sqrt());
        let ig = model.sigma2_eta_conditional(&cs, l).unwrap();
        assert!((ig.mean() - 4.0).abs() < 3.0 * ig.variance().sqrt(), "sigma2_eta[{l}] {}", ig.mean());
    }
    let g = model.f_conditional(&cs, 1).unwrap();
    assert!((g.mean - 0.05).abs() < 3.0 * g.var.sqrt());
}

#[test]
fn prior_draws_respect_structure() {
    let p = problem(3, 3, 3, 3, 1.0, 1);
    let mut rng = SimRng::seed_from_u64(2);
    let d = draw_params(&p.model, &mut rng);
    assert_eq!(d.f[0], 0.0);
    assert!(d.validate().is_ok());
}

#[test]
fn dominant_likelihood_pins_the_state() {
    let p = problem(3, 3, 2, 3, 3.0, 9);
    let records = (0..3 * 2)
        .map(|s| {
            (0..9)
                .map(|c| Observation {
                    cell: c,
                    value: 50.0 + (s * 9 + c) as f64,
                    sigma: 1e-3,
                })
                .collect()
        })
        .collect();
    let obs = ObservationSet::new(3, 2, 9, records).unwrap();
    let model = Model::new(p.model.props.clone(), &obs, NoiseModel::Recorded, PriorConfig::default(), fixed_state_prior(2), true).unwrap();
    let cfg = SamplerConfig {
        n_iter: 300,
        burn_in: 50,
        thin: 5,
        ..SamplerConfig::default()
    };
    let state = co_assim::sampler::init_chain(&model, &p.grid, &obs, &cfg.init, SimRng::seed_from_u64(3)).unwrap();
    let out = run_chain(&model, &cfg, state).unwrap();
    for (est, y) in out.moments.mean.iter().zip(&model.obs_value) {
        assert!(((est - y) / y).abs() < 1e-3);
    }
}

#[test]
fn cross_product_conditionals_match_direct_regressions() {
    use co_assim::sampler::GaussianAccumulator;
    let p = problem(4, 3, 3, 5, 6.0, 17);
    let params = test_params(3);
    let cs = random_state(&p.model, params.clone(), 2);
    let pr = &p.model.priors;
    for l in 0..3 {
        let s = p.model.regression_stats(&cs, l);
        let mut acc = GaussianAccumulator::from_prior(pr.m0, pr.sigma2_m);
        acc.add_suff(s.xx, s.xz - params.f[l] * s.xw, params.sigma2_eta[l]);
        let (fast, direct) = (acc.finish(), p.model.m_conditional(&cs, l));
        assert!(((fast.mean - direct.mean) / direct.mean).abs() < 1e-10);
        assert!(((fast.var - direct.var) / direct.var).abs() < 1e-10);
        if l > 0 {
            let mut acc = GaussianAccumulator::from_prior(pr.f0, pr.sigma2_f);
            acc.add_suff(s.ww, s.wz - params.m[l] * s.xw, params.sigma2_eta[l]);
            let (fast, direct) = (acc.finish(), p.model.f_conditional(&cs, l).unwrap());
            assert!(((fast.mean - direct.mean) / direct.mean).abs() < 1e-10);
            assert!(((fast.var - direct.var) / direct.var).abs() < 1e-10);
        }
    }
}
