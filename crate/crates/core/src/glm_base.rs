//! Base distributions for the independence backbone of the model.
//!
//! [`Family`] describes a coordinate's outcome distribution together with its
//! canonical link and is what regression code works with. [`Law`] is a fully
//! specified univariate distribution (a family evaluated at one linear
//! predictor) and carries the density, moment and CDF machinery the sampler
//! and the moment formulas need.

use crate::error::{QcError, Result};
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::{gamma_lr, ln_gamma};
use std::f64::consts::{PI, SQRT_2};

const LN_MAX: f64 = 709.782_712_893_384;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Identity,
    Log,
    Logit,
}

/// Outcome family of a single coordinate.
///
/// Gaussian, Poisson, Bernoulli and negative binomial can be estimated. The
/// remaining families are fully parameterized laws used for sampling only;
/// they ignore the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// Normal with precision `tau` (variance `1/tau`).
    Gaussian { tau: f64 },
    Poisson,
    Bernoulli,
    /// Negative binomial counting failures before the `r`-th success, `r > 0` real.
    NegativeBinomial { r: f64 },
    Gamma { shape: f64, scale: f64 },
    Exponential { scale: f64 },
    Beta { alpha: f64, beta: f64 },
    Binomial { trials: u32, p: f64 },
    /// Failures before the first success.
    Geometric { p: f64 },
}

impl Family {
    /// Parse a family name with unit default parameters.
    pub fn from_name(name: &str) -> Result<Family> {
        let f = match name.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Family::Gaussian { tau: 1.0 },
            "poisson" => Family::Poisson,
            "bernoulli" => Family::Bernoulli,
            "negbin" | "negativebinomial" | "negative_binomial" => {
                Family::NegativeBinomial { r: 1.0 }
            }
            "gamma" => Family::Gamma {
                shape: 1.0,
                scale: 1.0,
            },
            "exponential" => Family::Exponential { scale: 1.0 },
            "beta" => Family::Beta {
                alpha: 1.0,
                beta: 1.0,
            },
            "binomial" => Family::Binomial { trials: 1, p: 0.5 },
            "geometric" => Family::Geometric { p: 0.5 },
            other => return Err(QcError::Config(format!("unknown family '{other}'"))),
        };
        Ok(f)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian { .. } => "gaussian",
            Family::Poisson => "poisson",
            Family::Bernoulli => "bernoulli",
            Family::NegativeBinomial { .. } => "negbin",
            Family::Gamma { .. } => "gamma",
            Family::Exponential { .. } => "exponential",
            Family::Beta { .. } => "beta",
            Family::Binomial { .. } => "binomial",
            Family::Geometric { .. } => "geometric",
        }
    }

    /// Canonical link; `None` for sampling-only families.
    pub fn link(&self) -> Option<Link> {
        match self {
            Family::Gaussian { .. } => Some(Link::Identity),
            Family::Poisson | Family::NegativeBinomial { .. } => Some(Link::Log),
            Family::Bernoulli => Some(Link::Logit),
            _ => None,
        }
    }

    pub fn is_estimable(&self) -> bool {
        self.link().is_some()
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(
            self,
            Family::Gaussian { .. }
                | Family::Gamma { .. }
                | Family::Exponential { .. }
                | Family::Beta { .. }
        )
    }

    /// Dispersion parameter that the estimator treats as free, if any.
    pub fn dispersion(&self) -> Option<f64> {
        match *self {
            Family::Gaussian { tau } => Some(tau),
            Family::NegativeBinomial { r } => Some(r),
            _ => None,
        }
    }

    pub fn with_dispersion(&self, value: f64) -> Family {
        match *self {
            Family::Gaussian { .. } => Family::Gaussian { tau: value },
            Family::NegativeBinomial { .. } => Family::NegativeBinomial { r: value },
            other => other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Family::Gaussian { tau } => tau > 0.0 && tau.is_finite(),
            Family::Poisson | Family::Bernoulli => true,
            Family::NegativeBinomial { r } => r > 0.0 && r.is_finite(),
            Family::Gamma { shape, scale } => shape > 0.0 && scale > 0.0,
            Family::Exponential { scale } => scale > 0.0,
            Family::Beta { alpha, beta } => alpha > 0.0 && beta > 0.0,
            Family::Binomial { trials, p } => trials >= 1 && p > 0.0 && p < 1.0,
            Family::Geometric { p } => p > 0.0 && p < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(QcError::Parameter(format!("invalid parameters for {self:?}")))
        }
    }

    fn estimable(&self) -> Result<()> {
        if self.is_estimable() {
            Ok(())
        } else {
            Err(QcError::Unsupported(format!(
                "{} is a sampling-only family",
                self.name()
            )))
        }
    }

    /// Inverse link.
    pub fn mean_from_eta(&self, eta: f64) -> Result<f64> {
        self.estimable()?;
        if !eta.is_finite() {
            return Err(QcError::Domain(format!("linear predictor {eta}")));
        }
        match self.link() {
            Some(Link::Identity) => Ok(eta),
            Some(Link::Log) => {
                if eta > LN_MAX {
                    Err(QcError::Domain(format!("exp({eta}) overflows")))
                } else {
                    Ok(eta.exp())
                }
            }
            _ => Ok(logistic(eta)),
        }
    }

    pub fn variance_from_mean(&self, mu: f64) -> Result<f64> {
        self.estimable()?;
        self.check_mean(mu)?;
        Ok(match *self {
            Family::Gaussian { tau } => 1.0 / tau,
            Family::Poisson => mu,
            Family::Bernoulli => mu * (1.0 - mu),
            Family::NegativeBinomial { r } => mu * (1.0 + mu / r),
            _ => unreachable!(),
        })
    }

    fn check_mean(&self, mu: f64) -> Result<()> {
        let ok = match self {
            Family::Gaussian { .. } => mu.is_finite(),
            Family::Poisson | Family::NegativeBinomial { .. } => mu > 0.0 && mu.is_finite(),
            Family::Bernoulli => mu > 0.0 && mu < 1.0,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(QcError::Domain(format!("mean {mu} outside the {} domain", self.name())))
        }
    }

    /// `(dμ/dη, d²μ/dη², dσ²/dμ)`.
    pub fn mean_derivatives(&self, eta: f64) -> Result<(f64, f64, f64)> {
        let mu = self.mean_from_eta(eta)?;
        Ok(match *self {
            Family::Gaussian { .. } => (1.0, 0.0, 0.0),
            Family::Poisson => (mu, mu, 1.0),
            Family::Bernoulli => {
                let v = logistic_variance(eta);
                (v, v * (1.0 - 2.0 * mu), 1.0 - 2.0 * mu)
            }
            Family::NegativeBinomial { r } => (mu, mu, 1.0 + 2.0 * mu / r),
            _ => unreachable!(),
        })
    }

    /// Third and fourth central moments of the law with mean `mu`.
    pub fn central_moments(&self, mu: f64) -> Result<(f64, f64)> {
        Ok(self.law_from_mean(mu)?.central_moments())
    }

    /// Natural-scale variance at `eta`; uses the overflow-free logistic form for Bernoulli.
    pub(crate) fn variance_at_eta(&self, eta: f64, mu: f64) -> Result<f64> {
        let v = match self {
            Family::Bernoulli => logistic_variance(eta),
            _ => self.variance_from_mean(mu)?,
        };
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(QcError::Domain(format!("variance {v} at eta {eta}")))
        }
    }

    /// `(ln f(y), d ln f/dη)` at linear predictor `eta`.
    pub fn loglik_and_score(&self, y: f64, eta: f64) -> Result<(f64, f64)> {
        let mu = self.mean_from_eta(eta)?;
        let law = self.law_from_mean(mu)?;
        let lnf = match self {
            Family::Bernoulli => {
                law.check_support(y)?;
                y * eta - softplus(eta)
            }
            _ => law.ln_pdf(y)?,
        };
        let (dmu, _, _) = self.mean_derivatives(eta)?;
        let var = self.variance_at_eta(eta, mu)?;
        Ok((lnf, (y - mu) * dmu / var))
    }

    /// Working weights `(μ′/σ², μ′²/σ²)`.
    pub fn working_weights(&self, eta: f64) -> Result<(f64, f64)> {
        let mu = self.mean_from_eta(eta)?;
        let (dmu, _, _) = self.mean_derivatives(eta)?;
        let var = self.variance_at_eta(eta, mu)?;
        let w1 = dmu / var;
        Ok((w1, w1 * dmu))
    }

    /// The distribution this family takes when its mean is `mu`.
    pub fn law_from_mean(&self, mu: f64) -> Result<Law> {
        self.estimable()?;
        self.check_mean(mu)?;
        Ok(match *self {
            Family::Gaussian { tau } => Law::Normal {
                mean: mu,
                sd: tau.sqrt().recip(),
            },
            Family::Poisson => Law::Poisson { lambda: mu },
            Family::Bernoulli => Law::Bernoulli { p: mu },
            Family::NegativeBinomial { r } => Law::NegBin { r, p: r / (r + mu) },
            _ => unreachable!(),
        })
    }

    /// The distribution at linear predictor `eta`. Sampling-only families
    /// return their fixed law.
    pub fn law_at(&self, eta: f64) -> Result<Law> {
        self.validate()?;
        match *self {
            Family::Gamma { shape, scale } => Ok(Law::Gamma { shape, scale }),
            Family::Exponential { scale } => Ok(Law::Exponential { scale }),
            Family::Beta { alpha, beta } => Ok(Law::Beta { alpha, beta }),
            Family::Binomial { trials, p } => Ok(Law::Binomial { trials, p }),
            Family::Geometric { p } => Ok(Law::Geometric { p }),
            _ => self.law_from_mean(self.mean_from_eta(eta)?),
        }
    }
}

pub(crate) fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn logistic_variance(eta: f64) -> f64 {
    let e = (-eta.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

pub(crate) fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

pub(crate) fn std_normal_quantile(u: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * u)
}

fn ln_choose(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// A fully specified univariate base distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Law {
    Normal { mean: f64, sd: f64 },
    Poisson { lambda: f64 },
    Bernoulli { p: f64 },
    NegBin { r: f64, p: f64 },
    Gamma { shape: f64, scale: f64 },
    Exponential { scale: f64 },
    Beta { alpha: f64, beta: f64 },
    Binomial { trials: u32, p: f64 },
    Geometric { p: f64 },
}

impl Law {
    pub fn is_discrete(&self) -> bool {
        !matches!(
            self,
            Law::Normal { .. } | Law::Gamma { .. } | Law::Exponential { .. } | Law::Beta { .. }
        )
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Law::Normal { mean, .. } => mean,
            Law::Poisson { lambda } => lambda,
            Law::Bernoulli { p } => p,
            Law::NegBin { r, p } => r * (1.0 - p) / p,
            Law::Gamma { shape, scale } => shape * scale,
            Law::Exponential { scale } => scale,
            Law::Beta { alpha, beta } => alpha / (alpha + beta),
            Law::Binomial { trials, p } => trials as f64 * p,
            Law::Geometric { p } => (1.0 - p) / p,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Law::Normal { sd, .. } => sd * sd,
            Law::Poisson { lambda } => lambda,
            Law::Bernoulli { p } => p * (1.0 - p),
            Law::NegBin { r, p } => r * (1.0 - p) / (p * p),
            Law::Gamma { shape, scale } => shape * scale * scale,
            Law::Exponential { scale } => scale * scale,
            Law::Beta { alpha, beta } => {
                let s = alpha + beta;
                alpha * beta / (s * s * (s + 1.0))
            }
            Law::Binomial { trials, p } => trials as f64 * p * (1.0 - p),
            Law::Geometric { p } => (1.0 - p) / (p * p),
        }
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Third and fourth central moments.
    pub fn central_moments(&self) -> (f64, f64) {
        match *self {
            Law::Normal { sd, .. } => (0.0, 3.0 * sd.powi(4)),
            Law::Poisson { lambda } => (lambda, lambda + 3.0 * lambda * lambda),
            Law::Bernoulli { p } => binomial_central(1.0, p),
            Law::Binomial { trials, p } => binomial_central(trials as f64, p),
            Law::NegBin { r, p } => negbin_central(r, p),
            Law::Geometric { p } => negbin_central(1.0, p),
            Law::Gamma { shape, scale } => (
                2.0 * shape * scale.powi(3),
                3.0 * shape * (shape + 2.0) * scale.powi(4),
            ),
            Law::Exponential { scale } => (2.0 * scale.powi(3), 9.0 * scale.powi(4)),
            Law::Beta { alpha: a, beta: b } => {
                let s = a + b;
                let c3 = 2.0 * a * b * (b - a) / (s.powi(3) * (s + 1.0) * (s + 2.0));
                let c4 = 3.0 * a * b * (a * b * (s - 6.0) + 2.0 * s * s)
                    / (s.powi(4) * (s + 1.0) * (s + 2.0) * (s + 3.0));
                (c3, c4)
            }
        }
    }

    pub fn check_support(&self, y: f64) -> Result<()> {
        let int_ok = |y: f64| y >= 0.0 && y.fract() == 0.0 && y.is_finite();
        let ok = match *self {
            Law::Normal { .. } => y.is_finite(),
            Law::Poisson { .. } | Law::NegBin { .. } | Law::Geometric { .. } => int_ok(y),
            Law::Bernoulli { .. } => y == 0.0 || y == 1.0,
            Law::Binomial { trials, .. } => int_ok(y) && y <= trials as f64,
            Law::Gamma { .. } => y > 0.0 && y.is_finite(),
            Law::Exponential { .. } => y >= 0.0 && y.is_finite(),
            Law::Beta { .. } => y > 0.0 && y < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(QcError::Domain(format!("y = {y} outside the support of {self:?}")))
        }
    }

    /// Log density (Lebesgue) or log mass (counting measure).
    pub fn ln_pdf(&self, y: f64) -> Result<f64> {
        self.check_support(y)?;
        Ok(match *self {
            Law::Normal { mean, sd } => {
                let z = (y - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
            }
            Law::Poisson { lambda } => y * lambda.ln() - lambda - ln_gamma(y + 1.0),
            Law::Bernoulli { p } => {
                if y == 1.0 {
                    p.ln()
                } else {
                    (-p).ln_1p()
                }
            }
            Law::NegBin { r, p } => {
                ln_gamma(y + r) - ln_gamma(r) - ln_gamma(y + 1.0) + r * p.ln() + y * (-p).ln_1p()
            }
            Law::Binomial { trials, p } => {
                let n = trials as f64;
                ln_choose(n, y) + y * p.ln() + (n - y) * (-p).ln_1p()
            }
            Law::Geometric { p } => p.ln() + y * (-p).ln_1p(),
            Law::Gamma { shape, scale } => {
                (shape - 1.0) * y.ln() - y / scale - ln_gamma(shape) - shape * scale.ln()
            }
            Law::Exponential { scale } => -scale.ln() - y / scale,
            Law::Beta { alpha, beta } => {
                (alpha - 1.0) * y.ln() + (beta - 1.0) * (-y).ln_1p() - ln_beta(alpha, beta)
            }
        })
    }

    /// Density, zero outside the support.
    pub fn pdf(&self, y: f64) -> f64 {
        self.ln_pdf(y).map(f64::exp).unwrap_or(0.0)
    }

    /// Largest support point for bounded discrete laws.
    pub fn support_max(&self) -> Option<u64> {
        match *self {
            Law::Bernoulli { .. } => Some(1),
            Law::Binomial { trials, .. } => Some(trials as u64),
            _ => None,
        }
    }

    /// `(F(x), ∫_{-∞}^x y f(y) dy, ∫_{-∞}^x y² f(y) dy)` for continuous laws.
    pub fn partial_moments(&self, x: f64) -> (f64, f64, f64) {
        match *self {
            Law::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                let (cdf, pdf) = if z.is_infinite() {
                    (if z > 0.0 { 1.0 } else { 0.0 }, 0.0)
                } else {
                    (std_normal_cdf(z), std_normal_pdf(z))
                };
                // standardized: ∫ z φ = −φ(z), ∫ z² φ = Φ(z) − z φ(z)
                let s1 = -pdf;
                let s2 = cdf - if z.is_infinite() { 0.0 } else { z * pdf };
                (
                    cdf,
                    mean * cdf + sd * s1,
                    mean * mean * cdf + 2.0 * mean * sd * s1 + sd * sd * s2,
                )
            }
            Law::Gamma { shape, scale } => gamma_partial(shape, scale, x),
            Law::Exponential { scale } => gamma_partial(1.0, scale, x),
            Law::Beta { alpha: a, beta: b } => {
                if x <= 0.0 {
                    return (0.0, 0.0, 0.0);
                }
                let x = x.min(1.0);
                let s = a + b;
                (
                    beta_reg(a, b, x),
                    a / s * beta_reg(a + 1.0, b, x),
                    a * (a + 1.0) / (s * (s + 1.0)) * beta_reg(a + 2.0, b, x),
                )
            }
            _ => panic!("partial moments requested for a discrete law"),
        }
    }

    /// Rough quantile used only to seed root brackets.
    pub fn approx_quantile(&self, u: f64) -> f64 {
        let z = std_normal_quantile(u.clamp(1e-300, 1.0 - 1e-16));
        match *self {
            Law::Normal { mean, sd } => mean + sd * z,
            Law::Gamma { shape, scale } => {
                let t = 1.0 - 1.0 / (9.0 * shape) + z / (3.0 * shape.sqrt());
                (shape * scale * t.max(1e-3).powi(3)).max(1e-300)
            }
            Law::Exponential { scale } => -scale * (-u).ln_1p(),
            Law::Beta { .. } => (self.mean() + self.sd() * z).clamp(1e-12, 1.0 - 1e-12),
            _ => self.mean() + self.sd() * z,
        }
    }

    /// Lower end of the support for continuous laws.
    pub fn support_lower(&self) -> f64 {
        match self {
            Law::Normal { .. } => f64::NEG_INFINITY,
            _ => 0.0,
        }
    }

    /// Upper end of the support for continuous laws.
    pub fn support_upper(&self) -> f64 {
        match self {
            Law::Beta { .. } => 1.0,
            _ => f64::INFINITY,
        }
    }
}

fn gamma_partial(shape: f64, scale: f64, x: f64) -> (f64, f64, f64) {
    if x <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if x.is_infinite() {
        return (
            1.0,
            shape * scale,
            shape * (shape + 1.0) * scale * scale,
        );
    }
    let t = x / scale;
    (
        gamma_lr(shape, t),
        shape * scale * gamma_lr(shape + 1.0, t),
        shape * (shape + 1.0) * scale * scale * gamma_lr(shape + 2.0, t),
    )
}

fn binomial_central(n: f64, p: f64) -> (f64, f64) {
    let pq = p * (1.0 - p);
    (
        n * pq * (1.0 - 2.0 * p),
        n * pq * (1.0 + (3.0 * n - 6.0) * pq),
    )
}

fn negbin_central(r: f64, p: f64) -> (f64, f64) {
    let q = 1.0 - p;
    (
        r * q * (1.0 + q) / p.powi(3),
        r * q * (3.0 * r * q + 6.0 * q + p * p) / p.powi(4),
    )
}
