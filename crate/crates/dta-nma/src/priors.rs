//! Prior families and the transforms that map constrained parameters to the
//! unconstrained space the sampler works in.
//!
//! Every constrained parameter type has three consistent pieces:
//!
//! * `constrain` / `unconstrain` — the bijection itself,
//! * `log_jacobian` — log |d constrained / d unconstrained| at a point,
//! * `log_density` — the prior density on the *constrained* space.
//!
//! The sampler's target density on the unconstrained space is always
//! `log_likelihood + log_density + log_jacobian`; `build_term` emits the sum
//! `log_density + log_jacobian` directly onto an autodiff tape in a form
//! that stays finite far into the tails.
//!
//! Supported families:
//!
//! * means and regression coefficients: Normal(0, sd^2), identity transform;
//! * standard deviations: Uniform(0, b) via a scaled-logit transform, or
//!   half-Cauchy(0, s) via a log transform;
//! * the between-outcome correlation: Normal on atanh(rho), Uniform(-1, 1),
//!   or the Lewandowski-Kurowicka-Joe (LKJ) family, all via rho = tanh(u).

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::autodiff::{expit, softplus, Tape, Var};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// log N(x | 0, sd^2).
pub fn normal_lpdf0(x: f64, sd: f64) -> f64 {
    -0.5 * LN_2PI - sd.ln() - 0.5 * (x / sd) * (x / sd)
}

/// log of the standard normal density.
pub fn std_normal_lpdf(z: f64) -> f64 {
    -0.5 * LN_2PI - 0.5 * z * z
}

/// Prior on positive scale parameters (between-study and within-study
/// standard deviations).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScalePrior {
    /// Uniform(0, upper); sampled through sigma = upper * expit(u).
    Uniform { upper: f64 },
    /// Half-Cauchy(0, scale); sampled through sigma = exp(u).
    HalfCauchy { scale: f64 },
}

impl ScalePrior {
    pub fn constrain(&self, u: f64) -> f64 {
        match *self {
            ScalePrior::Uniform { upper } => upper * expit(u),
            ScalePrior::HalfCauchy { .. } => u.exp(),
        }
    }

    pub fn unconstrain(&self, x: f64) -> Result<f64> {
        match *self {
            ScalePrior::Uniform { upper } => {
                if x <= 0.0 || x >= upper {
                    return Err(Error::Domain(format!(
                        "scale {x} outside the open support (0, {upper})"
                    )));
                }
                Ok((x / (upper - x)).ln())
            }
            ScalePrior::HalfCauchy { .. } => {
                if x <= 0.0 {
                    return Err(Error::Domain(format!("scale {x} must be positive")));
                }
                Ok(x.ln())
            }
        }
    }

    /// log |d sigma / d u|.
    pub fn log_jacobian(&self, u: f64) -> f64 {
        match *self {
            ScalePrior::Uniform { upper } => {
                // d/du [b expit(u)] = b s (1 - s)
                upper.ln() - softplus(-u) - softplus(u)
            }
            ScalePrior::HalfCauchy { .. } => u,
        }
    }

    /// Prior density of sigma on the constrained space.
    pub fn log_density(&self, sigma: f64) -> f64 {
        match *self {
            ScalePrior::Uniform { upper } => {
                if sigma > 0.0 && sigma < upper {
                    -upper.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            ScalePrior::HalfCauchy { scale } => {
                if sigma > 0.0 {
                    std::f64::consts::LN_2
                        - std::f64::consts::PI.ln()
                        - scale.ln()
                        - ((sigma / scale) * (sigma / scale)).ln_1p()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Emits sigma(u) and the tape term `log_density(sigma) + log_jacobian(u)`.
    pub fn build_term(&self, t: &mut Tape, u: Var) -> (Var, Var) {
        match *self {
            ScalePrior::Uniform { upper } => {
                // density -ln b and jacobian ln b cancel:
                // term = ln s + ln(1-s) = -softplus(-u) - softplus(u)
                let s = t.expit(u);
                let sigma = t.mul_const(s, upper);
                let spp = t.softplus(u);
                let neg_u = t.neg(u);
                let spm = t.softplus(neg_u);
                let sum = t.add(spp, spm);
                let term = t.neg(sum);
                (sigma, term)
            }
            ScalePrior::HalfCauchy { scale } => {
                // term = const + u - ln(1 + (e^u / s)^2)
                //      = const + u - softplus(2 (u - ln s))
                let sigma = t.exp(u);
                let shifted = t.add_const(u, -scale.ln());
                let two = t.mul_const(shifted, 2.0);
                let sp = t.softplus(two);
                let lin = t.sub(u, sp);
                let c = std::f64::consts::LN_2 - std::f64::consts::PI.ln() - scale.ln();
                let term = t.add_const(lin, c);
                (sigma, term)
            }
        }
    }
}

/// Prior on the between-outcome correlation rho in (-1, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CorrelationPrior {
    /// atanh(rho) ~ Normal(0, sd^2).
    AtanhNormal { sd: f64 },
    /// rho ~ Uniform(-1, 1).
    Uniform,
    /// 2x2 LKJ with shape nu >= 1: density proportional to (1-rho^2)^(nu-1).
    Lkj { nu: f64 },
}

impl CorrelationPrior {
    pub fn constrain(u: f64) -> f64 {
        u.tanh()
    }

    pub fn unconstrain(rho: f64) -> Result<f64> {
        if !(-1.0..=1.0).contains(&rho) || rho.abs() >= 1.0 {
            return Err(Error::Domain(format!(
                "correlation {rho} outside the open interval (-1, 1)"
            )));
        }
        Ok(rho.atanh())
    }

    /// log |d rho / d u| = ln(1 - rho^2), computed stably from u.
    pub fn log_jacobian(u: f64) -> f64 {
        2.0 * (std::f64::consts::LN_2 + u - softplus(2.0 * u))
    }

    /// Prior density of rho on the constrained space.
    pub fn log_density(&self, rho: f64) -> f64 {
        if rho.abs() >= 1.0 {
            return f64::NEG_INFINITY;
        }
        match *self {
            CorrelationPrior::AtanhNormal { sd } => {
                // change of variables from atanh(rho) ~ N(0, sd^2)
                normal_lpdf0(rho.atanh(), sd) - (1.0 - rho * rho).ln()
            }
            CorrelationPrior::Uniform => -std::f64::consts::LN_2,
            CorrelationPrior::Lkj { nu } => {
                let ln_beta = 2.0 * ln_gamma(nu) - ln_gamma(2.0 * nu);
                (nu - 1.0) * (1.0 - rho * rho).ln()
                    - (2.0 * nu - 1.0) * std::f64::consts::LN_2
                    - ln_beta
            }
        }
    }

    /// Emits rho(u) and the tape term `log_density(rho) + log_jacobian(u)`.
    pub fn build_term(&self, t: &mut Tape, u: Var) -> (Var, Var) {
        let rho = t.tanh(u);
        // ln(1 - rho^2) = 2 (ln 2 + u - softplus(2u))
        let ln1m = {
            let two_u = t.mul_const(u, 2.0);
            let sp = t.softplus(two_u);
            let diff = t.sub(u, sp);
            let shifted = t.add_const(diff, std::f64::consts::LN_2);
            t.mul_const(shifted, 2.0)
        };
        let term = match *self {
            CorrelationPrior::AtanhNormal { sd } => {
                // prior on u plus jacobian cancels back to N(u | 0, sd^2)
                let q = t.square(u);
                let quad = t.mul_const(q, -0.5 / (sd * sd));
                t.add_const(quad, -0.5 * LN_2PI - sd.ln())
            }
            CorrelationPrior::Uniform => t.add_const(ln1m, -std::f64::consts::LN_2),
            CorrelationPrior::Lkj { nu } => {
                let ln_beta = 2.0 * ln_gamma(nu) - ln_gamma(2.0 * nu);
                let scaled = t.mul_const(ln1m, nu);
                t.add_const(scaled, -(2.0 * nu - 1.0) * std::f64::consts::LN_2 - ln_beta)
            }
        };
        (rho, term)
    }
}

/// A point in the sampler's unconstrained space together with the
/// log-Jacobian of the constraining transform at that point.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedVector {
    pub values: Vec<f64>,
    /// log |d constrained / d unconstrained| evaluated at `values`.
    pub log_jacobian: f64,
}

/// Full prior configuration for either model family.
///
/// `mean_sd` governs every location-type parameter (test means, regression
/// coefficients, contrast means, and the atanh-normal correlation prior when
/// selected).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mean_sd: f64,
    pub scale: ScalePrior,
    pub correlation: CorrelationPrior,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::vague_normal()
    }
}

impl PriorSpec {
    /// Default: Normal(0, 25) means, Uniform(0, 5) scales, atanh-normal
    /// correlation.
    pub fn vague_normal() -> Self {
        PriorSpec {
            mean_sd: 5.0,
            scale: ScalePrior::Uniform { upper: 5.0 },
            correlation: CorrelationPrior::AtanhNormal { sd: 5.0 },
        }
    }

    /// Sensitivity-analysis preset: half-Cauchy(0, 2.5) scales and a uniform
    /// correlation.
    pub fn half_cauchy_uniform() -> Self {
        PriorSpec {
            mean_sd: 5.0,
            scale: ScalePrior::HalfCauchy { scale: 2.5 },
            correlation: CorrelationPrior::Uniform,
        }
    }

    /// LKJ correlation prior with the default mean/scale choices.
    pub fn lkj(nu: f64) -> Self {
        PriorSpec {
            mean_sd: 5.0,
            scale: ScalePrior::Uniform { upper: 5.0 },
            correlation: CorrelationPrior::Lkj { nu },
        }
    }

    /// Named presets accepted by the CLI.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "vague" => Ok(Self::vague_normal()),
            "cauchy" => Ok(Self::half_cauchy_uniform()),
            "lkj1" => Ok(Self::lkj(1.0)),
            "lkj2" => Ok(Self::lkj(2.0)),
            other => Err(Error::Usage(format!(
                "unknown prior preset '{other}' (expected vague, cauchy, lkj1, lkj2)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_sd > 0.0) {
            return Err(Error::Domain("mean_sd must be positive".into()));
        }
        match self.scale {
            ScalePrior::Uniform { upper } if !(upper > 0.0) => {
                return Err(Error::Domain("uniform scale upper bound must be positive".into()))
            }
            ScalePrior::HalfCauchy { scale } if !(scale > 0.0) => {
                return Err(Error::Domain("half-Cauchy scale must be positive".into()))
            }
            _ => {}
        }
        if let CorrelationPrior::Lkj { nu } = self.correlation {
            if !(nu >= 1.0) {
                return Err(Error::Domain("LKJ shape must satisfy nu >= 1".into()));
            }
        }
        if let CorrelationPrior::AtanhNormal { sd } = self.correlation {
            if !(sd > 0.0) {
                return Err(Error::Domain("atanh-normal sd must be positive".into()));
            }
        }
        Ok(())
    }
}
