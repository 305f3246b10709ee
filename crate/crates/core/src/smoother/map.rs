// SPDX-License-Identifier: MIT OR Apache-2.0

//! Scalar MAP estimate under a Gaussian observation model and a random-walk
//! prior, computed two ways: numerically, and via its EMA closed form
//! `(1 - λ) o + λ h_prev` with `λ = σ²_o / (σ²_p + σ²_o)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapOracleInputs {
    pub observation: f64,
    pub previous: f64,
    pub obs_variance: f64,
    pub prior_variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapEstimate {
    pub numeric: f64,
    pub closed_form: f64,
}

impl MapEstimate {
    pub fn deviation(&self) -> f64 {
        (self.numeric - self.closed_form).abs()
    }
}

/// Log-likelihood plus log-prior, up to constants.
pub fn map_objective(h: f64, inp: &MapOracleInputs) -> f64 {
    let dobs = inp.observation - h;
    let dprior = h - inp.previous;
    -dobs * dobs / (2.0 * inp.obs_variance) - dprior * dprior / (2.0 * inp.prior_variance)
}

fn objective_slope(h: f64, inp: &MapOracleInputs) -> f64 {
    (inp.observation - h) / inp.obs_variance - (h - inp.previous) / inp.prior_variance
}

/// Maximises [`map_objective`] by bisection on the sign of its derivative
/// inside an expanding bracket, and returns it next to the closed form.
pub fn map_oracle(inp: &MapOracleInputs) -> Result<MapEstimate> {
    for v in [inp.obs_variance, inp.prior_variance] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NonPositiveVariance(v));
        }
    }
    let lambda = inp.obs_variance / (inp.prior_variance + inp.obs_variance);
    let closed_form = (1.0 - lambda) * inp.observation + lambda * inp.previous;

    // The objective is concave, so its slope is decreasing. Grow a bracket
    // around h_prev until the slope changes sign across it.
    let mut half = 1.0f64;
    let (mut lo, mut hi) = (inp.previous - half, inp.previous + half);
    while objective_slope(lo, inp) < 0.0 || objective_slope(hi, inp) > 0.0 {
        half *= 2.0;
        lo = inp.previous - half;
        hi = inp.previous + half;
        if !half.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
    }
    let tol = 1e-13 * (1.0 + inp.observation.abs().max(inp.previous.abs()));
    for _ in 0..400 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if objective_slope(mid, inp) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(MapEstimate {
        numeric: 0.5 * (lo + hi),
        closed_form,
    })
}
