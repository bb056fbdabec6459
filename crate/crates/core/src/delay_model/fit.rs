//! Maximum-likelihood GEV fitting.
//!
//! Starts from Hosking's probability-weighted-moment estimate and polishes it
//! with a Nelder–Mead simplex over `(ξ, μ, ln σ)`. The shape is kept inside
//! `(-0.5, 1.0)`, where the likelihood is regular.

use log::debug;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use super::gev::GevParams;
use crate::error::{invalid, Result};

pub const MIN_FIT_SAMPLES: usize = 20;
pub const XI_BOUNDS: (f64, f64) = (-0.5, 1.0);

/// Surrogate used when every sample is identical.
pub const DEGENERATE_XI: f64 = 0.1;
pub const DEGENERATE_SIGMA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevFit {
    pub params: GevParams,
    pub log_likelihood: f64,
    /// Log-likelihood of the moment initializer.
    pub init_log_likelihood: f64,
    /// Set when the samples were degenerate and the surrogate was returned.
    pub degenerate: bool,
}

pub fn fit_gev(samples: &[f64]) -> Result<GevFit> {
    if samples.len() < MIN_FIT_SAMPLES {
        return invalid(format!(
            "GEV fit needs at least {MIN_FIT_SAMPLES} samples, got {}",
            samples.len()
        ));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return invalid("GEV fit samples must be finite");
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        debug!(
            "degenerate delay window ({} identical samples); using surrogate",
            samples.len()
        );
        let params = GevParams {
            xi: DEGENERATE_XI,
            mu: lo,
            sigma: DEGENERATE_SIGMA,
        };
        let ll = params.log_likelihood(samples);
        return Ok(GevFit {
            params,
            log_likelihood: ll,
            init_log_likelihood: ll,
            degenerate: true,
        });
    }

    let init = feasible_init(pwm_estimate(&sorted), &sorted);
    let init_ll = init.log_likelihood(samples);

    let objective = |v: &[f64; 3]| -> f64 {
        let (xi, mu, sigma) = (v[0], v[1], v[2].exp());
        if !(xi > XI_BOUNDS.0 && xi < XI_BOUNDS.1) {
            return f64::INFINITY;
        }
        let nll = -GevParams { xi, mu, sigma }.log_likelihood(samples);
        if nll.is_nan() {
            f64::INFINITY
        } else {
            nll
        }
    };

    let start = [init.xi, init.mu, init.sigma.ln()];
    let steps = [0.05, 0.25 * init.sigma, 0.2];
    let mut best = nelder_mead(&objective, start, steps, 4000);
    // one restart around the optimum guards against premature collapse
    best = nelder_mead(&objective, best, [0.02, 0.05 * best[2].exp(), 0.05], 4000);

    let mut params = GevParams {
        xi: best[0],
        mu: best[1],
        sigma: best[2].exp(),
    };
    let mut ll = params.log_likelihood(samples);
    if !(ll >= init_ll) {
        params = init;
        ll = init_ll;
    }
    Ok(GevFit {
        params,
        log_likelihood: ll,
        init_log_likelihood: init_ll,
        degenerate: false,
    })
}

/// Hosking, Wallis & Wood PWM estimator on ascending-sorted samples.
fn pwm_estimate(sorted: &[f64]) -> GevParams {
    let n = sorted.len() as f64;
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    for (i, &x) in sorted.iter().enumerate() {
        let j = i as f64;
        b0 += x;
        b1 += x * j / (n - 1.0);
        b2 += x * j * (j - 1.0) / ((n - 1.0) * (n - 2.0));
    }
    b0 /= n;
    b1 /= n;
    b2 /= n;

    let l2 = 2.0 * b1 - b0;
    let c = l2 / (3.0 * b2 - b0) - std::f64::consts::LN_2 / 3f64.ln();
    let k = 7.8590 * c + 2.9554 * c * c;
    let (xi, sigma, mu) = if k.abs() < 1e-6 {
        let sigma = l2 / std::f64::consts::LN_2;
        (0.0, sigma, b0 - 0.577_215_664_901_532_9 * sigma)
    } else {
        let g = gamma(1.0 + k);
        let sigma = l2 * k / (g * (1.0 - 2f64.powf(-k)));
        (-k, sigma, b0 + sigma * (g - 1.0) / k)
    };
    let sigma = if sigma.is_finite() && sigma > 0.0 {
        sigma
    } else {
        l2.abs().max(1e-6)
    };
    let xi = xi.clamp(XI_BOUNDS.0 + 0.01, XI_BOUNDS.1 - 0.01);
    let mu = if mu.is_finite() { mu } else { b0 };
    GevParams { xi, mu, sigma }
}

/// Widens the scale until every sample lies inside the support.
fn feasible_init(mut p: GevParams, samples: &[f64]) -> GevParams {
    for _ in 0..60 {
        if p.log_likelihood(samples).is_finite() {
            return p;
        }
        p.sigma *= 1.5;
    }
    p
}

fn nelder_mead<F>(f: &F, start: [f64; 3], steps: [f64; 3], max_iter: usize) -> [f64; 3]
where
    F: Fn(&[f64; 3]) -> f64,
{
    const N: usize = 3;
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((start, f(&start)));
    for i in 0..N {
        let mut v = start;
        v[i] += steps[i];
        simplex.push((v, f(&v)));
    }

    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[N].1);
        if worst.is_finite() && (worst - best).abs() <= 1e-12 * (1.0 + best.abs()) {
            break;
        }

        let mut centroid = [0.0; N];
        for (v, _) in &simplex[..N] {
            for d in 0..N {
                centroid[d] += v[d] / N as f64;
            }
        }
        let along = |t: f64| -> [f64; N] {
            let mut p = [0.0; N];
            for d in 0..N {
                p[d] = centroid[d] + t * (simplex[N].0[d] - centroid[d]);
            }
            p
        };

        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            simplex[N] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (reflected, fr);
        } else {
            let contracted = if fr < simplex[N].1 { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted);
            if fc < simplex[N].1.min(fr) {
                simplex[N] = (contracted, fc);
            } else {
                let anchor = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    for d in 0..N {
                        entry.0[d] = anchor[d] + 0.5 * (entry.0[d] - anchor[d]);
                    }
                    entry.1 = f(&entry.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0].0
}
