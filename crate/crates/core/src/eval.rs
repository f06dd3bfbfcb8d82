//! Scoring: RMSE by level, time and subset, standardized residuals, and
//! the per-method summary tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{CloudMask, TruthField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    Observed,
    /// Cloud-masked columns at that time.
    Unobserved,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::All, Subset::Observed, Subset::Unobserved];

    pub fn name(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::Observed => "observed",
            Subset::Unobserved => "unobserved",
        }
    }

    fn contains(self, cloudy: bool) -> bool {
        match self {
            Subset::All => true,
            Subset::Observed => !cloudy,
            Subset::Unobserved => cloudy,
        }
    }
}

/// `sqrt(mean((xhat - x)^2))` over paired entries.
pub fn rmse_values(xhat: &[f64], xtrue: &[f64]) -> Result<f64> {
    if xhat.len() != xtrue.len() {
        return Err(Error::Dimension(format!("{} estimates for {} truths", xhat.len(), xtrue.len())));
    }
    if xhat.is_empty() {
        return Err(Error::EmptySubset("rmse over no cells".into()));
    }
    let ss: f64 = xhat.iter().zip(xtrue).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / xhat.len() as f64).sqrt())
}

/// A gridded estimate over `(k, l, i)`; levels outside `levels` are unused.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub name: String,
    pub n_times: usize,
    pub n_levels: usize,
    pub n_cells: usize,
    pub levels: Vec<usize>,
    pub mean: Vec<f64>,
    pub sd: Option<Vec<f64>>,
}

impl Estimate {
    pub fn idx(&self, k: usize, l: usize, i: usize) -> usize {
        (k * self.n_levels + l) * self.n_cells + i
    }

    pub fn slice(&self, k: usize, l: usize) -> &[f64] {
        let s = self.idx(k, l, 0);
        &self.mean[s..s + self.n_cells]
    }

    fn check(&self, truth: &TruthField) -> Result<()> {
        let len = truth.n_times * truth.n_levels * truth.n_cells;
        if (self.n_times, self.n_levels, self.n_cells) != (truth.n_times, truth.n_levels, truth.n_cells)
            || self.mean.len() != len
            || self.sd.as_ref().is_some_and(|s| s.len() != len)
        {
            return Err(Error::Dimension(format!("estimate '{}' does not match the truth field", self.name)));
        }
        if let Some(&l) = self.levels.iter().find(|&&l| l >= self.n_levels) {
            return Err(Error::OutOfRange(format!("estimate '{}' lists level {l}", self.name)));
        }
        Ok(())
    }
}

/// RMSE of one `(k, l)` slice over a subset of cells.
pub fn rmse(est: &Estimate, truth: &TruthField, mask: &CloudMask, l: usize, k: usize, subset: Subset) -> Result<f64> {
    est.check(truth)?;
    if k >= truth.n_times || l >= truth.n_levels {
        return Err(Error::OutOfRange(format!("(k, l) = ({k}, {l})")));
    }
    let (xhat, x) = (est.slice(k, l), truth.level_slice(k, l));
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in 0..truth.n_cells {
        if subset.contains(mask.is_cloudy(k, i)) {
            a.push(xhat[i]);
            b.push(x[i]);
        }
    }
    rmse_values(&a, &b).map_err(|e| match e {
        Error::EmptySubset(_) => Error::EmptySubset(format!("subset '{}' is empty at k = {k}", subset.name())),
        other => other,
    })
}

/// `|x - xhat| / sd` elementwise; `None` where `sd` is not positive.
pub fn standardized_residuals(xhat: &[f64], sdhat: &[f64], xtrue: &[f64]) -> Result<Vec<Option<f64>>> {
    if xhat.len() != sdhat.len() || xhat.len() != xtrue.len() {
        return Err(Error::Dimension("standardized residual inputs differ in length".into()));
    }
    Ok(xhat
        .iter()
        .zip(sdhat)
        .zip(xtrue)
        .map(|((m, s), x)| (*s > 0.0 && s.is_finite()).then(|| (x - m).abs() / s))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub level: usize,
    pub k: usize,
    pub all: f64,
    pub observed: Option<f64>,
    pub unobserved: Option<f64>,
    /// Cells with a negative estimate in this slice.
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub level: usize,
    pub mean: f64,
    pub valid: usize,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub name: String,
    /// Time-averaged RMSE at the report level; subsets that are empty at
    /// some times average over the remaining times.
    pub all: f64,
    pub observed: Option<f64>,
    pub unobserved: Option<f64>,
    pub series: Vec<RmseRow>,
    pub residuals: Vec<ResidualSummary>,
    pub negative_means: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: usize,
    pub n_times: usize,
    pub methods: Vec<MethodReport>,
}

fn mean_of(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn build_report(methods: &[Estimate], truth: &TruthField, mask: &CloudMask, level: usize) -> Result<EvalReport> {
    if level >= truth.n_levels {
        return Err(Error::OutOfRange(format!("report level {level} (L = {})", truth.n_levels)));
    }
    if mask.n_times != truth.n_times || mask.n_cells != truth.n_cells {
        return Err(Error::Dimension("cloud mask does not match truth".into()));
    }
    let mut out = Vec::with_capacity(methods.len());
    for est in methods {
        est.check(truth)?;
        if !est.levels.contains(&level) {
            return Err(Error::OutOfRange(format!("method '{}' has no estimate at level {level}", est.name)));
        }
        let mut series = Vec::new();
        let mut residuals = Vec::new();
        for &l in &est.levels {
            for k in 0..truth.n_times {
                let opt = |s| match rmse(est, truth, mask, l, k, s) {
                    Ok(v) => Ok(Some(v)),
                    Err(Error::EmptySubset(_)) => Ok(None),
                    Err(e) => Err(e),
                };
                series.push(RmseRow {
                    level: l,
                    k,
                    all: rmse(est, truth, mask, l, k, Subset::All)?,
                    observed: opt(Subset::Observed)?,
                    unobserved: opt(Subset::Unobserved)?,
                    negative: est.slice(k, l).iter().filter(|v| **v < 0.0).count(),
                });
            }
            if let Some(sd) = &est.sd {
                let mut vals = Vec::new();
                let mut flagged = 0;
                for k in 0..truth.n_times {
                    let s = est.idx(k, l, 0);
                    let r = standardized_residuals(est.slice(k, l), &sd[s..s + truth.n_cells], truth.level_slice(k, l))?;
                    for v in r {
                        match v {
                            Some(v) => vals.push(v),
                            None => flagged += 1,
                        }
                    }
                }
                residuals.push(ResidualSummary {
                    level: l,
                    mean: mean_of(&vals).unwrap_or(f64::NAN),
                    valid: vals.len(),
                    flagged,
                });
            }
        }
        let at_level: Vec<&RmseRow> = series.iter().filter(|r| r.level == level).collect();
        let all: Vec<f64> = at_level.iter().map(|r| r.all).collect();
        let obs: Vec<f64> = at_level.iter().filter_map(|r| r.observed).collect();
        let unobs: Vec<f64> = at_level.iter().filter_map(|r| r.unobserved).collect();
        out.push(MethodReport {
            name: est.name.clone(),
            all: mean_of(&all).unwrap_or(f64::NAN),
            observed: mean_of(&obs),
            unobserved: mean_of(&unobs),
            negative_means: series.iter().map(|r| r.negative).sum(),
            series,
            residuals,
        });
    }
    Ok(EvalReport {
        level,
        n_times: truth.n_times,
        methods: out,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// Table of time-averaged RMSE at the report level, one row per method.
    pub fn tables_csv(&self) -> String {
        let mut s = String::from("method,level,unobserved,observed,all,negative_means\n");
        for m in &self.methods {
            s += &format!(
                "{},{},{},{},{:.6},{}\n",
                m.name,
                self.level,
                fmt_opt(m.unobserved),
                fmt_opt(m.observed),
                m.all,
                m.negative_means
            );
        }
        s
    }

    /// Full RMSE series; `flag` is `<` where the slice had negative estimates.
    pub fn series_csv(&self) -> String {
        let mut s = String::from("method,level,k,all,observed,unobserved,negative,flag\n");
        for m in &self.methods {
            for r in &m.series {
                s += &format!(
                    "{},{},{},{:.6},{},{},{},{}\n",
                    m.name,
                    r.level,
                    r.k,
                    r.all,
                    fmt_opt(r.observed),
                    fmt_opt(r.unobserved),
                    r.negative,
                    if r.negative > 0 { "<" } else { "" }
                );
            }
        }
        s
    }
}

/// Plotting form of an estimate: negatives become zero and are marked `<`.
pub fn plot_value(v: f64) -> (f64, &'static str) {
    if v < 0.0 {
        (0.0, "<")
    } else {
        (v, "")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn truth(t: usize, l: usize, n: usize, f: impl Fn(usize) -> f64) -> TruthField {
        TruthField {
            n_times: t,
            n_levels: l,
            n_cells: n,
            n_ghost: 0,
            x: (0..t * l * n).map(f).collect(),
            xb: vec![],
        }
    }

    fn est(name: &str, tr: &TruthField, f: impl Fn(usize, f64) -> f64) -> Estimate {
        Estimate {
            name: name.into(),
            n_times: tr.n_times,
            n_levels: tr.n_levels,
            n_cells: tr.n_cells,
            levels: (0..tr.n_levels).collect(),
            mean: tr.x.iter().enumerate().map(|(i, &x)| f(i, x)).collect(),
            sd: Some(vec![1.0; tr.x.len()]),
        }
    }

    #[test]
    fn rmse_arithmetic() {
        assert_eq!(rmse_values(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse_values(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 3.535_533_905_932_737_6).abs() < 1e-15);
        assert!((rmse_values(&[5.5, 2.5, -1.5], &[3.0, 0.0, -4.0]).unwrap() - 2.5).abs() < 1e-15);
        assert!(matches!(rmse_values(&[], &[]), Err(Error::EmptySubset(_))));
    }

    #[test]
    fn subsets_bracket_all_and_empty_subset_errors() {
        let tr = truth(2, 1, 4, |i| i as f64);
        let mask = CloudMask::new(2, 4, vec![true, false, false, true, false, false, false, false]).unwrap();
        let e = est("m", &tr, |i, x| x + if i % 2 == 0 { 3.0 } else { 0.5 });
        let all = rmse(&e, &tr, &mask, 0, 0, Subset::All).unwrap();
        let o = rmse(&e, &tr, &mask, 0, 0, Subset::Observed).unwrap();
        let u = rmse(&e, &tr, &mask, 0, 0, Subset::Unobserved).unwrap();
        assert!(all >= o.min(u) && all <= o.max(u));
        assert!(matches!(rmse(&e, &tr, &mask, 0, 1, Subset::Unobserved), Err(Error::EmptySubset(_))));
    }

    #[test]
    fn residual_examples() {
        let r = standardized_residuals(&[1.0, 2.0], &[0.5, 0.0], &[2.0, 2.0]).unwrap();
        assert_eq!(r, vec![Some(2.0), None]);
        let perfect = standardized_residuals(&[3.0; 4], &[1.0; 4], &[3.0; 4]).unwrap();
        assert!(perfect.iter().all(|v| *v == Some(0.0)));
    }

    #[test]
    fn calibrated_errors_have_folded_normal_mean() {
        let mut rng = crate::seed::SimRng::seed_from_u64(11);
        let n = 20_000;
        let sd: Vec<f64> = (0..n).map(|i| 0.5 + (i % 7) as f64).collect();
        let xhat = vec![10.0; n];
        let x: Vec<f64> = sd
            .iter()
            .map(|s| {
                let z: f64 = StandardNormal.sample(&mut rng);
                10.0 + s * z
            })
            .collect();
        let r = standardized_residuals(&xhat, &sd, &x).unwrap();
        let m = r.iter().flatten().sum::<f64>() / n as f64;
        assert!((0.6..=1.1).contains(&m));
        assert!((m - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.02);
    }

    #[test]
    fn report_tables() {
        let tr = truth(3, 2, 4, |i| 10.0 + i as f64);
        let mask = CloudMask::new(3, 4, vec![true, false, false, false, false, true, true, false, false, false, false, false]).unwrap();
        let perfect = est("perfect", &tr, |_, x| x);
        let offset = est("offset", &tr, |_, x| x - 2.0);
        let r = build_report(&[perfect.clone(), offset], &tr, &mask, 1).unwrap();
        let p = r.method("perfect").unwrap();
        assert_eq!((p.all, p.observed, p.unobserved), (0.0, Some(0.0), Some(0.0)));
        let o = r.method("offset").unwrap();
        assert!((o.all - 2.0).abs() < 1e-12);
        assert_eq!(o.series.len(), 6);
        // the cloud-free step contributes no unobserved value
        assert!(o.series.iter().any(|row| row.unobserved.is_none()));
        assert!(r.tables_csv().starts_with("method,level,unobserved,observed,all"));
        let twice = build_report(&[perfect.clone(), perfect.clone()], &tr, &mask, 1).unwrap();
        assert_eq!(twice.methods[0].series, twice.methods[1].series);
        assert_eq!(r.tables_csv(), build_report(&[perfect, est("offset", &tr, |_, x| x - 2.0)], &tr, &mask, 1).unwrap().tables_csv());
    }

    #[test]
    fn negatives_are_flagged_in_series() {
        let tr = truth(1, 1, 3, |_| 1.0);
        let mask = CloudMask::clear(1, 3);
        let e = est("neg", &tr, |i, x| if i == 1 { -0.5 } else { x });
        let r = build_report(&[e], &tr, &mask, 0).unwrap();
        assert_eq!(r.methods[0].negative_means, 1);
        assert!(r.series_csv().lines().nth(1).unwrap().ends_with(",1,<"));
        assert_eq!(plot_value(-0.5), (0.0, "<"));
        assert_eq!(plot_value(2.0), (2.0, ""));
    }
}
