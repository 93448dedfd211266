//! Problem parameters and the closed-form constants attached to them.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Critical Sobolev exponent `2n / (n - 2s)`.
pub fn critical_exponent(n: u32, s: f64) -> Result<f64> {
    let nf = n as f64;
    if !(s > 0.0) || nf <= 2.0 * s {
        return Err(Error::param(format!(
            "critical exponent needs n > 2s (n = {n}, s = {s})"
        )));
    }
    Ok(2.0 * nf / (nf - 2.0 * s))
}

/// Normalization constant of the Gagliardo bilinear form,
/// `pi^(-n/2) 2^(2s-1) s Gamma((n+2s)/2) / Gamma(1-s)`.
pub fn normalization_constant(n: u32, s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::param(format!("order s must lie in (0, 1), got {s}")));
    }
    let nf = n as f64;
    Ok(std::f64::consts::PI.powf(-0.5 * nf)
        * 2f64.powf(2.0 * s - 1.0)
        * s
        * gamma(0.5 * (nf + 2.0 * s))
        / gamma(1.0 - s))
}

/// Admissibility of the singular exponent: `q (2s - 1) < 2s + 1`.
pub fn admissibility(q: f64, s: f64) -> Result<bool> {
    if !(q > 0.0) {
        return Err(Error::param(format!("singular exponent q must be positive, got {q}")));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::param(format!("order s must lie in (0, 1), got {s}")));
    }
    Ok(q * (2.0 * s - 1.0) < 2.0 * s + 1.0)
}

/// `(n, s, q, lambda)` together with the derived critical exponent and
/// normalization constant. Only `n = 1` is supported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub n: u32,
    pub s: f64,
    pub q: f64,
    pub lambda: f64,
    crit: f64,
    cns: f64,
}

impl ProblemParams {
    pub fn new(s: f64, q: f64, lambda: f64) -> Result<Self> {
        if !(s.is_finite() && q.is_finite() && lambda.is_finite()) {
            return Err(Error::NonFinite(format!("s = {s}, q = {q}, lambda = {lambda}")));
        }
        let n = 1;
        if !admissibility(q, s)? {
            return Err(Error::param(format!(
                "q = {q}, s = {s} violates q(2s-1) < 2s+1"
            )));
        }
        let crit = critical_exponent(n, s)?;
        if lambda < 0.0 {
            return Err(Error::param(format!("lambda must be nonnegative, got {lambda}")));
        }
        let cns = normalization_constant(n, s)?;
        Ok(ProblemParams { n, s, q, lambda, crit, cns })
    }

    /// Same `(s, q)` with a different `lambda`.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        ProblemParams::new(self.s, self.q, lambda)
    }

    /// Critical exponent `2*_s`.
    pub fn crit(&self) -> f64 {
        self.crit
    }

    /// Normalization constant `C^n_s`.
    pub fn cns(&self) -> f64 {
        self.cns
    }
}
