//! Convergence summaries for scalar parameter chains.
//!
//! Effective sample size and potential scale reduction follow the split-chain
//! recipe: every chain is cut in half and the halves are treated as separate
//! chains, so within-chain drift shows up as between-chain variance.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub ess: f64,
    pub split_rhat: f64,
    /// Mean of each chain, in chain order.
    pub trace_means: Vec<f64>,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn split_halves<'a>(chains: &[&'a [f64]]) -> Vec<&'a [f64]> {
    chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .filter(|c| !c.is_empty())
        .collect()
}

/// Split potential scale reduction. Returns 1 for constant chains and NaN
/// when there are fewer than two draws per half.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let halves = split_halves(chains);
    let n = halves.iter().map(|c| c.len()).min().unwrap_or(0);
    if halves.len() < 2 || n < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = halves.iter().map(|c| mean(&c[..n])).collect();
    let w = halves.iter().map(|c| variance(&c[..n])).sum::<f64>() / halves.len() as f64;
    let b = n as f64 * variance(&means);
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    (var_plus / w).sqrt()
}

fn autocovariance(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    let m = mean(xs);
    (0..n - lag).map(|t| (xs[t] - m) * (xs[t + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence
/// truncation, computed on split chains.
pub fn effective_sample_size(chains: &[&[f64]]) -> f64 {
    let halves = split_halves(chains);
    let n = halves.iter().map(|c| c.len()).min().unwrap_or(0);
    let m = halves.len();
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let halves: Vec<&[f64]> = halves.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = halves.iter().map(|c| mean(c)).collect();
    let w = halves.iter().map(|c| variance(c)).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 { variance(&means) } else { 0.0 };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    if var_plus == 0.0 {
        return (m * n) as f64;
    }
    let rho = |lag: usize| -> f64 {
        let acov = halves.iter().map(|c| autocovariance(c, lag)).sum::<f64>() / m as f64;
        1.0 - (w - acov) / var_plus
    };
    // pair sums Gamma_t = rho(2t) + rho(2t + 1), kept while positive and
    // forced non-increasing
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while 2 * t + 1 < n {
        let mut pair = rho(2 * t) + rho(2 * t + 1);
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        t += 1;
    }
    let tau = tau.max(1.0 / ((m * n) as f64).log10().max(1.0));
    (m * n) as f64 / tau
}

/// Standard error of the mean by non-overlapping batch means.
pub fn batch_means_se(xs: &[f64], n_batches: usize) -> f64 {
    let size = xs.len() / n_batches.max(1);
    if size == 0 || n_batches < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..n_batches).map(|b| mean(&xs[b * size..(b + 1) * size])).collect();
    (variance(&means) / n_batches as f64).sqrt()
}

pub fn summarize(name: impl Into<String>, chains: &[&[f64]]) -> ParamDiagnostics {
    let pooled: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    ParamDiagnostics {
        name: name.into(),
        mean: if pooled.is_empty() { f64::NAN } else { mean(&pooled) },
        sd: variance(&pooled).sqrt(),
        ess: effective_sample_size(chains),
        split_rhat: split_rhat(chains),
        trace_means: chains.iter().map(|c| if c.is_empty() { f64::NAN } else { mean(c) }).collect(),
    }
}
