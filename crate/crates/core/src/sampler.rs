//! Sequential sampling from the quasi-copula density.
//!
//! Coordinate `i` is drawn from its conditional law given the earlier ones,
//! which always has the form `c·f(y)(c0 + c1 y + c2 y²)` for the coordinate's
//! base density `f`. Discrete coordinates use inverse-method enumeration
//! outward from the base mean; continuous coordinates invert the closed-form
//! CDF with a safeguarded Newton iteration.

use crate::error::{QcError, Result};
use crate::glm_base::{std_normal_quantile, Law};
use crate::qc_model::{QcDensity, QuasiCopulaModel, SamplingUnit};
use nalgebra::{DMatrix, DVector};
use rand::distributions::Open01;
use rand::Rng;

const DISCRETE_CAP: usize = 100_000;
const CDF_TOL: f64 = 1e-10;
const X_TOL: f64 = 1e-12;

/// A stream of uniforms on the open unit interval.
pub trait UniformSource {
    fn next_uniform(&mut self) -> f64;
}

impl<R: Rng + ?Sized> UniformSource for R {
    fn next_uniform(&mut self) -> f64 {
        self.sample(Open01)
    }
}

/// Coefficients of the stage density `c·f(y)(c0 + c1 y + c2 y²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticKernelCoeffs {
    pub c: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl QuadraticKernelCoeffs {
    pub const IDENTITY: QuadraticKernelCoeffs = QuadraticKernelCoeffs {
        c: 1.0,
        c0: 1.0,
        c1: 0.0,
        c2: 0.0,
    };

    fn weight(&self, y: f64) -> f64 {
        (self.c * (self.c0 + y * (self.c1 + self.c2 * y))).max(0.0)
    }

    /// Stage density (or mass) at `y`.
    pub fn density(&self, law: &Law, y: f64) -> f64 {
        law.pdf(y) * self.weight(y)
    }

    /// `c(c0 + c1 E[Y] + c2 E[Y²])` under the base law; equals 1 for valid coefficients.
    pub fn normalization(&self, law: &Law) -> f64 {
        let m = law.mean();
        self.c * (self.c0 + self.c1 * m + self.c2 * (law.variance() + m * m))
    }

    /// Stage CDF of a continuous law.
    pub fn cdf(&self, law: &Law, x: f64) -> f64 {
        let (f, m1, m2) = law.partial_moments(x);
        (self.c * (self.c0 * f + self.c1 * m1 + self.c2 * m2)).clamp(0.0, 1.0)
    }
}

/// Coefficients for the first coordinate's marginal.
pub fn marginal_coeffs(dens: &QcDensity) -> QuadraticKernelCoeffs {
    conditional_coeffs(dens, 0, &[])
}

/// Coefficients for coordinate `i` (zero-based) given the residuals of the
/// coordinates before it.
pub fn conditional_coeffs(dens: &QcDensity, i: usize, r_prefix: &[f64]) -> QuadraticKernelCoeffs {
    assert_eq!(r_prefix.len(), i, "residual prefix must cover coordinates before {i}");
    let g = &dens.gamma;
    let mut quad = 0.0;
    for a in 0..i {
        for b in 0..i {
            quad += r_prefix[a] * g[(a, b)] * r_prefix[b];
        }
    }
    let tail: f64 = (i..dens.d()).map(|j| g[(j, j)]).sum();
    let norm = 1.0 + 0.5 * quad + 0.5 * tail;
    let cross: f64 = (0..i).map(|j| r_prefix[j] * g[(i, j)]).sum();
    let law = &dens.laws[i];
    let (mu, sd, var) = (law.mean(), law.sd(), law.variance());
    let half = 0.5 * g[(i, i)];
    QuadraticKernelCoeffs {
        c: 1.0 / norm,
        c0: norm - half - mu * cross / sd + half * mu * mu / var,
        c1: cross / sd - 2.0 * half * mu / var,
        c2: half / var,
    }
}

/// Support points `k0, k0+1, k0-1, k0+2, ...` within `[0, max]`.
pub fn probe_order(k0: u64, max: Option<u64>) -> impl Iterator<Item = u64> {
    let max = max.unwrap_or(u64::MAX);
    let k0 = k0.min(max);
    (0u64..).map_while(move |step| {
        let off = step.div_ceil(2);
        let up = k0.checked_add(off).filter(|k| *k <= max);
        let down = k0.checked_sub(off);
        match (up, down) {
            (None, None) => None,
            _ => Some(if step % 2 == 1 { up } else { down }),
        }
    })
    .flatten()
}

/// Inverse-method draw from a discrete stage law.
pub fn sample_discrete_quadratic<U: UniformSource + ?Sized>(
    law: &Law,
    coeffs: &QuadraticKernelCoeffs,
    rng: &mut U,
) -> Result<u64> {
    let u = rng.next_uniform();
    let nu = law.mean();
    let mut cum = 0.0;
    let mut last = nu.floor() as u64;
    for (n, k) in probe_order(nu.floor().max(0.0) as u64, law.support_max()).enumerate() {
        if n >= DISCRETE_CAP {
            break;
        }
        let p = coeffs.density(law, k as f64);
        cum += p;
        last = k;
        if cum >= u {
            return Ok(k);
        }
        // past the mode on the upper side with nothing left below
        if p == 0.0 && k as f64 > nu && n > 2 * (nu as usize + 1) {
            break;
        }
    }
    if cum >= 1.0 - 1e-12 {
        Ok(last)
    } else {
        Err(QcError::Truncation(format!(
            "cumulative mass {cum} after {DISCRETE_CAP} support points"
        )))
    }
}

/// Inverse-transform draw from a continuous stage law.
pub fn sample_continuous_quadratic<U: UniformSource + ?Sized>(
    law: &Law,
    coeffs: &QuadraticKernelCoeffs,
    rng: &mut U,
) -> Result<f64> {
    let u = rng.next_uniform();
    invert_cdf(law, coeffs, u)
}

/// Solve `F(x) = u` for the stage CDF of a continuous law.
pub fn invert_cdf(law: &Law, coeffs: &QuadraticKernelCoeffs, u: f64) -> Result<f64> {
    let f = |x: f64| coeffs.cdf(law, x) - u;
    let (lower, upper) = (law.support_lower(), law.support_upper());
    let mut lo = law.approx_quantile(0.5 * u).max(lower);
    let mut hi = law.approx_quantile(1.0 - 0.5 * (1.0 - u)).min(upper);
    let mut width = (hi - lo).abs().max(law.sd());
    let mut tries = 0;
    while f(lo) > 0.0 {
        tries += 1;
        if tries > 200 {
            return Err(QcError::Numeric(format!("no lower bracket for u = {u}")));
        }
        lo = if lower.is_finite() {
            if lo - lower < 1e-300 {
                lower
            } else {
                lower + 0.5 * (lo - lower)
            }
        } else {
            lo - width
        };
        width *= 2.0;
    }
    width = (hi - lo).abs().max(law.sd());
    tries = 0;
    while f(hi) < 0.0 {
        tries += 1;
        if tries > 200 {
            return Err(QcError::Numeric(format!("no upper bracket for u = {u}")));
        }
        hi = if upper.is_finite() {
            upper - 0.5 * (upper - hi)
        } else {
            hi + width
        };
        width *= 2.0;
    }
    let mut x = law.approx_quantile(u).clamp(lo, hi);
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let fx = f(x);
        let g = coeffs.density(law, x);
        let newton = x - fx / g;
        if fx.abs() <= CDF_TOL {
            return Ok(if g > 0.0 && newton >= lo && newton <= hi { newton } else { x });
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= X_TOL * x.abs().max(1.0) {
            return Ok(0.5 * (lo + hi));
        }
        x = if g > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(QcError::Numeric(format!("root finder did not converge for u = {u}")))
}

/// Mixture weights `(N(0,1), +√χ²₃, −√χ²₃)` of the standardized first
/// Gaussian coordinate.
pub fn gaussian_mixture_weights(gamma: &DMatrix<f64>) -> [f64; 3] {
    let total = 1.0 + 0.5 * gamma.trace();
    let g11 = gamma[(0, 0)];
    let side = 0.25 * g11 / total;
    [(total - 0.5 * g11) / total, side, side]
}

/// Standardized draw of the first coordinate when its base is Gaussian.
pub fn gaussian_first_coordinate_mixture<U: UniformSource + ?Sized>(
    gamma: &DMatrix<f64>,
    rng: &mut U,
) -> f64 {
    let w = gaussian_mixture_weights(gamma);
    let pick = rng.next_uniform();
    let mut z = || std_normal_quantile(rng.next_uniform());
    if pick < w[0] {
        z()
    } else {
        let chi = (z().powi(2) + z().powi(2) + z().powi(2)).sqrt();
        if pick < w[0] + w[1] {
            chi
        } else {
            -chi
        }
    }
}

impl QcDensity {
    /// Draw one response vector.
    pub fn sample<U: UniformSource + ?Sized>(&self, rng: &mut U) -> Result<DVector<f64>> {
        let d = self.d();
        let mut y = DVector::zeros(d);
        let mut r = Vec::with_capacity(d);
        for i in 0..d {
            let law = &self.laws[i];
            let yi = match law {
                Law::Normal { mean, sd } if i == 0 => {
                    mean + sd * gaussian_first_coordinate_mixture(&self.gamma, rng)
                }
                _ => {
                    let coeffs = conditional_coeffs(self, i, &r);
                    if law.is_discrete() {
                        sample_discrete_quadratic(law, &coeffs, rng)? as f64
                    } else {
                        sample_continuous_quadratic(law, &coeffs, rng)?
                    }
                }
            };
            y[i] = yi;
            r.push((yi - law.mean()) / law.sd());
        }
        Ok(y)
    }
}

/// Draw a response vector for the design of `unit` under `model`.
pub fn sample_unit<U: UniformSource + ?Sized>(
    model: &QuasiCopulaModel,
    unit: &SamplingUnit,
    rng: &mut U,
) -> Result<DVector<f64>> {
    model.density(unit)?.sample(rng)
}
