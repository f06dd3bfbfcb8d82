//! Scalar conjugate kernels shared by every full conditional.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// One Gaussian likelihood term `c = a * theta + b + N(0, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Factor {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: f64,
    pub var: f64,
}

/// Running precision / precision-weighted-mean sums.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianAccumulator {
    prec: f64,
    lin: f64,
}

impl GaussianAccumulator {
    pub fn from_prior(mean: f64, var: f64) -> Self {
        GaussianAccumulator {
            prec: 1.0 / var,
            lin: mean / var,
        }
    }

    /// Adds `c = a * theta + b + N(0, v)`; only `c - b` matters.
    #[inline]
    pub fn add(&mut self, a: f64, c_minus_b: f64, v: f64) {
        let w = a / v;
        self.prec += a * w;
        self.lin += w * c_minus_b;
    }

    /// Adds a term given as a precision, `c = a * theta + b + N(0, 1/p)`.
    #[inline]
    pub fn add_prec(&mut self, a: f64, c_minus_b: f64, p: f64) {
        let w = a * p;
        self.prec += a * w;
        self.lin += w * c_minus_b;
    }

    /// Adds many terms sharing variance `v` through `sum a^2` and `sum a (c - b)`.
    #[inline]
    pub fn add_suff(&mut self, sum_aa: f64, sum_a_cb: f64, v: f64) {
        self.prec += sum_aa / v;
        self.lin += sum_a_cb / v;
    }

    #[inline]
    pub fn finish(&self) -> Gaussian {
        let var = 1.0 / self.prec;
        Gaussian {
            mean: self.lin * var,
            var,
        }
    }
}

/// Posterior of `theta ~ N(mu0, var0)` after all `factors`.
pub fn gaussian_fuse(factors: &[Factor], prior: (f64, f64)) -> Result<Gaussian> {
    let (mu0, var0) = prior;
    if !(var0 > 0.0) {
        return Err(Error::Numerical(format!("prior variance {var0} must be positive")));
    }
    let mut acc = GaussianAccumulator::from_prior(mu0, var0);
    for f in factors {
        if !(f.v > 0.0) {
            return Err(Error::Numerical(format!("factor variance {} must be positive", f.v)));
        }
        acc.add(f.a, f.c - f.b, f.v);
    }
    Ok(acc.finish())
}

impl Gaussian {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean + self.var.sqrt() * z
    }
}

/// Inverse gamma with density proportional to `x^-(shape+1) exp(-rate/x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseGamma {
    pub shape: f64,
    pub rate: f64,
}

impl InverseGamma {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
            return Err(Error::Numerical(format!("invalid inverse gamma ({shape}, {rate})")));
        }
        Ok(InverseGamma { shape, rate })
    }

    /// Conjugate update from `count` zero-mean Gaussian residuals with sum of
    /// squares `ssr`.
    pub fn posterior(&self, ssr: f64, count: usize) -> Result<Self> {
        if !(ssr >= 0.0) || !ssr.is_finite() {
            return Err(Error::Numerical(format!("sum of squared residuals is {ssr}")));
        }
        InverseGamma::new(self.shape + count as f64 / 2.0, self.rate + ssr / 2.0)
    }

    /// Defined for `shape > 1`.
    pub fn mean(&self) -> f64 {
        self.rate / (self.shape - 1.0)
    }

    /// Defined for `shape > 2`.
    pub fn variance(&self) -> f64 {
        let s1 = self.shape - 1.0;
        self.rate * self.rate / (s1 * s1 * (self.shape - 2.0))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // 1 / Gamma(shape, scale = 1 / rate)
        let g = Gamma::new(self.shape, 1.0 / self.rate).expect("validated parameters");
        1.0 / g.sample(rng)
    }
}
