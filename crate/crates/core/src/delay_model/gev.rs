//! Generalized extreme value distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const GUMBEL_EPS: f64 = 1e-12;

/// GEV(ξ, μ, σ). For ξ > 0 the support is bounded below at `μ − σ/ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    /// Shape ξ.
    pub xi: f64,
    /// Location μ, seconds.
    pub mu: f64,
    /// Scale σ, seconds.
    pub sigma: f64,
}

impl GevParams {
    pub fn new(xi: f64, mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return invalid(format!("GEV scale must be positive, got {sigma}"));
        }
        if !xi.is_finite() || !mu.is_finite() {
            return invalid("GEV shape and location must be finite");
        }
        Ok(Self { xi, mu, sigma })
    }

    /// Support variable `1 + ξ(t − μ)/σ`.
    #[inline]
    fn support(&self, t: f64) -> f64 {
        1.0 + self.xi * (t - self.mu) / self.sigma
    }

    pub fn lower_bound(&self) -> Option<f64> {
        (self.xi > 0.0).then(|| self.mu - self.sigma / self.xi)
    }

    pub fn pdf(&self, t: f64) -> f64 {
        if self.xi.abs() < GUMBEL_EPS {
            let z = (t - self.mu) / self.sigma;
            return (-z - (-z).exp()).exp() / self.sigma;
        }
        let s = self.support(t);
        if s <= 0.0 {
            return 0.0;
        }
        let inv = -1.0 / self.xi;
        s.powf(inv - 1.0) * (-s.powf(inv)).exp() / self.sigma
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if self.xi.abs() < GUMBEL_EPS {
            let z = (t - self.mu) / self.sigma;
            return (-(-z).exp()).exp();
        }
        let s = self.support(t);
        if s <= 0.0 {
            return if self.xi > 0.0 { 0.0 } else { 1.0 };
        }
        (-s.powf(-1.0 / self.xi)).exp()
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return invalid(format!("quantile probability must lie in (0, 1), got {p}"));
        }
        Ok(self.quantile_unchecked(p))
    }

    fn quantile_unchecked(&self, p: f64) -> f64 {
        let y = -p.ln();
        if self.xi.abs() < GUMBEL_EPS {
            self.mu - self.sigma * y.ln()
        } else {
            self.mu + self.sigma / self.xi * (y.powf(-self.xi) - 1.0)
        }
    }

    /// Sum of log densities; `-inf` when any sample is outside the support.
    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        let ln_sigma = self.sigma.ln();
        if self.xi.abs() < GUMBEL_EPS {
            return samples
                .iter()
                .map(|&t| {
                    let z = (t - self.mu) / self.sigma;
                    -ln_sigma - z - (-z).exp()
                })
                .sum();
        }
        let mut total = 0.0;
        for &t in samples {
            let s = self.support(t);
            if s <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let ln_s = s.ln();
            total += -ln_sigma - (1.0 + 1.0 / self.xi) * ln_s - (-ln_s / self.xi).exp();
        }
        total
    }

    /// Inverse-transform draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut u: f64 = rng.random();
        while u <= 0.0 {
            u = rng.random();
        }
        self.quantile_unchecked(u)
    }
}
