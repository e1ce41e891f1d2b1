//! Per-unit evaluation of the loglikelihood and its exact gradient.

use crate::covariance::{CovarianceSpec, UnitCov};
use crate::error::{QcError, Result};
use crate::glm_base::Family;
use crate::qc_model::{QuasiCopulaModel, SamplingUnit};
use nalgebra::DVector;
use rayon::prelude::*;
use special::Gamma as _;
use statrs::function::gamma::digamma;

const CHUNK: usize = 64;

/// Sum per-unit contributions of fixed length over all units.
///
/// Units are split into fixed chunks that run in parallel; the partial sums
/// are then added in chunk order so the result does not depend on the
/// number of threads.
pub(crate) fn accumulate<F>(units: &[SamplingUnit], len: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(&SamplingUnit, &mut [f64]) -> Result<()> + Sync,
{
    let run = |chunk: &[SamplingUnit]| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; len];
        for u in chunk {
            f(u, &mut acc)?;
        }
        Ok(acc)
    };
    if units.len() <= CHUNK {
        return run(units);
    }
    let parts: Vec<Result<Vec<f64>>> = units.par_chunks(CHUNK).map(run).collect();
    let mut total = vec![0.0; len];
    for p in parts {
        for (t, v) in total.iter_mut().zip(p?) {
            *t += v;
        }
    }
    Ok(total)
}

/// Quantities of one coordinate at the current parameters.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Coord {
    pub fam: usize,
    pub mu: f64,
    pub var: f64,
    /// `y − μ`.
    pub e: f64,
    /// `∂ ln f/∂η`.
    pub score: f64,
    /// `μ′²/σ²`.
    pub w2: f64,
    /// `∂r/∂η`.
    pub dr_deta: f64,
}

pub(crate) struct UnitState<'a> {
    pub cov: UnitCov<'a>,
    pub coords: Vec<Coord>,
    pub r: DVector<f64>,
    /// `Γ r`.
    pub gr: DVector<f64>,
    /// `1 + ½ rᵗΓr`.
    pub den: f64,
    pub lnf: f64,
}

impl<'a> UnitState<'a> {
    pub fn new(model: &'a QuasiCopulaModel, unit: &'a SamplingUnit) -> Result<Self> {
        model.check_unit(unit)?;
        let eta = model.linear_predictor(unit);
        let d = unit.d();
        let mut coords = Vec::with_capacity(d);
        let mut r = DVector::zeros(d);
        let mut lnf = 0.0;
        for j in 0..d {
            let fam_idx = unit.family_of[j];
            let fam = &model.families[fam_idx];
            let y = unit.y[j];
            let (l, score) = fam.loglik_and_score(y, eta[j])?;
            let mu = fam.mean_from_eta(eta[j])?;
            let (dmu, _, dvar) = fam.mean_derivatives(eta[j])?;
            let var = fam.variance_at_eta(eta[j], mu)?;
            let sd = var.sqrt();
            let e = y - mu;
            r[j] = e / sd;
            lnf += l;
            coords.push(Coord {
                fam: fam_idx,
                mu,
                var,
                e,
                score,
                w2: dmu * dmu / var,
                dr_deta: -dmu / sd - 0.5 * e / (sd * var) * dvar * dmu,
            });
        }
        let cov = model.unit_cov(unit)?;
        let gr = cov.apply(&r);
        let den = 1.0 + 0.5 * r.dot(&gr);
        if !(den > 0.0 && lnf.is_finite()) {
            return Err(QcError::Numeric(format!("unit loglikelihood not finite ({lnf}, {den})")));
        }
        Ok(UnitState {
            cov,
            coords,
            r,
            gr,
            den,
            lnf,
        })
    }

    pub fn loglik(&self) -> f64 {
        self.lnf + self.den.ln() - self.cov.half_trace().ln_1p()
    }

    /// `∂ℓ/∂η_j`.
    pub fn eta_gradient(&self) -> DVector<f64> {
        DVector::from_fn(self.coords.len(), |j, _| {
            let c = &self.coords[j];
            c.score + c.dr_deta * self.gr[j] / self.den
        })
    }

    /// `Σ_j a_j (Γr)_j x_j`, the β-gradient of `½ rᵗΓr`.
    pub fn copula_beta_gradient(&self, unit: &SamplingUnit) -> DVector<f64> {
        let v = DVector::from_fn(self.coords.len(), |j, _| self.coords[j].dr_deta * self.gr[j]);
        unit.x.tr_mul(&v)
    }

    /// Gradient in the covariance parameters.
    pub fn cov_gradient(&self) -> Vec<f64> {
        let d = self.r.len() as f64;
        match *self.cov.spec {
            CovarianceSpec::VarianceComponents { .. } => {
                let trace_den = 1.0 + self.cov.half_trace();
                self.cov
                    .vc_quads(&self.r)
                    .iter()
                    .zip(self.cov.vc_traces())
                    .map(|(b, c)| b / self.den - c / trace_den)
                    .collect()
            }
            CovarianceSpec::Ar1 { sigma2, .. } | CovarianceSpec::Cs { sigma2, .. } => {
                let f = self.cov.corr_forms(&self.r);
                vec![
                    0.5 * f.v / self.den - 0.5 * d / (1.0 + 0.5 * d * sigma2),
                    0.5 * sigma2 * f.dv / self.den,
                ]
            }
        }
    }

    /// First and second derivative of the unit loglikelihood in the
    /// dispersion of family `fam`.
    pub fn dispersion_derivatives(&self, families: &[Family], fam: usize) -> (f64, f64) {
        let d = self.r.len();
        let mut dl = 0.0;
        let mut d2l = 0.0;
        let mut dr = DVector::zeros(d);
        let mut d2r = DVector::zeros(d);
        let mut any = false;
        for (j, c) in self.coords.iter().enumerate() {
            if c.fam != fam {
                continue;
            }
            if let Some(k) = coord_dispersion(&families[fam], c, self.r[j]) {
                any = true;
                dl += k.dl;
                d2l += k.d2l;
                dr[j] = k.dr;
                d2r[j] = k.d2r;
            }
        }
        if !any {
            return (0.0, 0.0);
        }
        let q1 = self.gr.dot(&dr);
        let q2 = dr.dot(&self.cov.apply(&dr)) + self.gr.dot(&d2r);
        (dl + q1 / self.den, d2l + q2 / self.den - (q1 / self.den).powi(2))
    }
}

struct DispersionTerms {
    dl: f64,
    d2l: f64,
    dr: f64,
    d2r: f64,
}

fn coord_dispersion(fam: &Family, c: &Coord, r: f64) -> Option<DispersionTerms> {
    match *fam {
        Family::Gaussian { tau } => Some(DispersionTerms {
            dl: 0.5 / tau - 0.5 * c.e * c.e,
            d2l: -0.5 / (tau * tau),
            dr: 0.5 * r / tau,
            d2r: -0.25 * r / (tau * tau),
        }),
        Family::NegativeBinomial { r: size } => {
            let mu = c.mu;
            let y = c.e + mu;
            let s = c.var;
            let s1 = -mu * mu / (size * size);
            let s2 = 2.0 * mu * mu / (size * size * size);
            let sm = s.sqrt() * s;
            let dl = digamma(y + size) - digamma(size) + 1.0 + size.ln()
                - (size + y) / (mu + size)
                - (mu + size).ln();
            let d2l = (y + size).trigamma() - size.trigamma() + 1.0 / size - 2.0 / (mu + size)
                + (size + y) / ((mu + size) * (mu + size));
            Some(DispersionTerms {
                dl,
                d2l,
                dr: -0.5 * c.e / sm * s1,
                d2r: 0.75 * c.e / (sm * s) * s1 * s1 - 0.5 * c.e / sm * s2,
            })
        }
        _ => None,
    }
}
