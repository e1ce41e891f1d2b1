//! Parameterized structures for the within-unit matrix Γ.
//!
//! Three kinds are supported: variance components `Γ = Σ θ_k Ω_k`, AR(1)
//! `Γ = σ² ρ^{|j-l|}` and compound symmetry `Γ = σ²[ρ 11ᵗ + (1-ρ) I]`.
//! Likelihood code never forms Γ; it uses [`UnitCov::apply`] and the
//! structured quadratic forms, which are linear or quadratic in `d`.

use crate::error::{QcError, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Ω shapes that do not need per-unit storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmegaTemplate {
    /// `11ᵗ`, the random-intercept structure.
    Ones,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VcBasis {
    Templates(Vec<OmegaTemplate>),
    /// `m` explicit Ω matrices carried by every unit.
    PerUnit { m: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovKind {
    Vc,
    Ar1,
    Cs,
}

impl CovKind {
    pub fn from_name(name: &str) -> Result<CovKind> {
        match name.trim().to_ascii_lowercase().as_str() {
            "vc" => Ok(CovKind::Vc),
            "ar1" => Ok(CovKind::Ar1),
            "cs" => Ok(CovKind::Cs),
            other => Err(QcError::Config(format!("unknown covariance kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceSpec {
    VarianceComponents { theta: Vec<f64>, basis: VcBasis },
    Ar1 { sigma2: f64, rho: f64 },
    Cs { sigma2: f64, rho: f64 },
}

/// Open interval of admissible CS correlations for units of size `d`.
pub fn cs_rho_bounds(d: usize) -> Result<(f64, f64)> {
    if d < 2 {
        return Err(QcError::Parameter(format!("CS bound needs d >= 2, got {d}")));
    }
    Ok((-1.0 / (d as f64 - 1.0), 1.0))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Validate an explicit Ω: square, symmetric, PSD to −1e-10.
pub fn check_omega(omega: &DMatrix<f64>) -> Result<()> {
    if !omega.is_square() {
        return Err(QcError::Parameter("Ω must be square".into()));
    }
    let asym = (omega - omega.transpose()).abs().max();
    if asym > 1e-12 * omega.abs().max().max(1.0) {
        return Err(QcError::Parameter("Ω must be symmetric".into()));
    }
    if omega.nrows() > 0 && min_eigenvalue(omega) < -1e-10 {
        return Err(QcError::Parameter("Ω must be positive semidefinite".into()));
    }
    Ok(())
}

impl CovarianceSpec {
    /// Random-intercept structure `Γ = θ 11ᵗ`.
    pub fn random_intercept(theta: f64) -> Self {
        CovarianceSpec::VarianceComponents {
            theta: vec![theta],
            basis: VcBasis::Templates(vec![OmegaTemplate::Ones]),
        }
    }

    pub fn ar1(sigma2: f64, rho: f64) -> Self {
        CovarianceSpec::Ar1 { sigma2, rho }
    }

    pub fn cs(sigma2: f64, rho: f64) -> Self {
        CovarianceSpec::Cs { sigma2, rho }
    }

    pub fn kind(&self) -> CovKind {
        match self {
            CovarianceSpec::VarianceComponents { .. } => CovKind::Vc,
            CovarianceSpec::Ar1 { .. } => CovKind::Ar1,
            CovarianceSpec::Cs { .. } => CovKind::Cs,
        }
    }

    /// Number of variance components (VC) or 2 for `(σ², ρ)`.
    pub fn n_params(&self) -> usize {
        match self {
            CovarianceSpec::VarianceComponents { theta, .. } => theta.len(),
            _ => 2,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            CovarianceSpec::VarianceComponents { theta, .. } => theta.clone(),
            CovarianceSpec::Ar1 { sigma2, rho } | CovarianceSpec::Cs { sigma2, rho } => {
                vec![*sigma2, *rho]
            }
        }
    }

    pub fn with_params(&self, p: &[f64]) -> Self {
        match self {
            CovarianceSpec::VarianceComponents { basis, .. } => {
                CovarianceSpec::VarianceComponents {
                    theta: p.to_vec(),
                    basis: basis.clone(),
                }
            }
            CovarianceSpec::Ar1 { .. } => CovarianceSpec::Ar1 {
                sigma2: p[0],
                rho: p[1],
            },
            CovarianceSpec::Cs { .. } => CovarianceSpec::Cs {
                sigma2: p[0],
                rho: p[1],
            },
        }
    }

    /// Box bounds for each parameter, with `margin` kept off open ends.
    pub fn bounds(&self, d_max: usize, margin: f64) -> Vec<(f64, f64)> {
        match self {
            CovarianceSpec::VarianceComponents { theta, .. } => {
                vec![(0.0, f64::INFINITY); theta.len()]
            }
            CovarianceSpec::Ar1 { .. } => vec![(0.0, f64::INFINITY), (-1.0 + margin, 1.0 - margin)],
            CovarianceSpec::Cs { .. } => {
                let lo = cs_rho_bounds(d_max.max(2)).map(|b| b.0).unwrap_or(-1.0);
                vec![(0.0, f64::INFINITY), (lo + margin, 1.0 - margin)]
            }
        }
    }

    /// Check parameter admissibility for units of size up to `d_max`.
    pub fn validate(&self, d_max: usize) -> Result<()> {
        match self {
            CovarianceSpec::VarianceComponents { theta, basis } => {
                if theta.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                    return Err(QcError::Parameter(format!("θ must be nonnegative: {theta:?}")));
                }
                let m = match basis {
                    VcBasis::Templates(t) => t.len(),
                    VcBasis::PerUnit { m } => *m,
                };
                if m != theta.len() {
                    return Err(QcError::Parameter(format!(
                        "{} variance components for {m} Ω matrices",
                        theta.len()
                    )));
                }
            }
            CovarianceSpec::Ar1 { sigma2, rho } => {
                if !(sigma2.is_finite() && *sigma2 >= 0.0) || !(rho.abs() < 1.0) {
                    return Err(QcError::Parameter(format!("AR(1) σ²={sigma2}, ρ={rho}")));
                }
            }
            CovarianceSpec::Cs { sigma2, rho } => {
                let lo = if d_max >= 2 { cs_rho_bounds(d_max)?.0 } else { -1.0 };
                if !(sigma2.is_finite() && *sigma2 >= 0.0) || !(*rho > lo && *rho < 1.0) {
                    return Err(QcError::Parameter(format!(
                        "CS σ²={sigma2}, ρ={rho} outside ({lo}, 1)"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Bind to a unit of size `d` with its explicit Ω list (empty unless
    /// the basis is per-unit).
    pub fn unit<'a>(&'a self, d: usize, omegas: &'a [DMatrix<f64>]) -> Result<UnitCov<'a>> {
        if let CovarianceSpec::VarianceComponents {
            basis: VcBasis::PerUnit { m },
            ..
        } = self
        {
            if omegas.len() != *m || omegas.iter().any(|o| o.nrows() != d || o.ncols() != d) {
                return Err(QcError::Parameter(format!(
                    "unit of size {d} needs {m} Ω matrices of that size"
                )));
            }
        }
        Ok(UnitCov {
            spec: self,
            d,
            omegas,
        })
    }

    /// Γ for a unit of size `d` (template or structured kinds only).
    pub fn materialize(&self, d: usize) -> Result<DMatrix<f64>> {
        self.validate(d)?;
        self.unit(d, &[])?.materialize()
    }

    pub fn trace_term(&self, d: usize) -> Result<f64> {
        Ok(self.unit(d, &[])?.half_trace())
    }

    /// First and second derivatives of the correlation matrix in ρ.
    pub fn rho_derivatives(&self, d: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        match *self {
            CovarianceSpec::Ar1 { rho, .. } => {
                let dv = DMatrix::from_fn(d, d, |j, l| {
                    let k = j.abs_diff(l) as i32;
                    if k == 0 {
                        0.0
                    } else {
                        k as f64 * rho.powi(k - 1)
                    }
                });
                let d2v = DMatrix::from_fn(d, d, |j, l| {
                    let k = j.abs_diff(l) as i32;
                    if k < 2 {
                        0.0
                    } else {
                        (k * (k - 1)) as f64 * rho.powi(k - 2)
                    }
                });
                Ok((dv, d2v))
            }
            CovarianceSpec::Cs { .. } => Ok((
                DMatrix::from_fn(d, d, |j, l| if j == l { 0.0 } else { 1.0 }),
                DMatrix::zeros(d, d),
            )),
            CovarianceSpec::VarianceComponents { .. } => Err(QcError::Unsupported(
                "ρ derivatives are defined for AR(1) and CS only".into(),
            )),
        }
    }
}

/// A covariance specification bound to one unit.
#[derive(Debug, Clone, Copy)]
pub struct UnitCov<'a> {
    pub spec: &'a CovarianceSpec,
    pub d: usize,
    pub omegas: &'a [DMatrix<f64>],
}

/// Quadratic forms `rᵗVr`, `rᵗV′r`, `rᵗV″r` of the AR(1)/CS correlation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrForms {
    pub v: f64,
    pub dv: f64,
    pub d2v: f64,
}

impl UnitCov<'_> {
    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        let d = self.d;
        Ok(match self.spec {
            CovarianceSpec::VarianceComponents { theta, .. } => {
                let mut g = DMatrix::zeros(d, d);
                for k in 0..theta.len() {
                    g += self.omega(k) * theta[k];
                }
                g
            }
            CovarianceSpec::Ar1 { sigma2, rho } => {
                DMatrix::from_fn(d, d, |j, l| sigma2 * rho.powi(j.abs_diff(l) as i32))
            }
            CovarianceSpec::Cs { sigma2, rho } => {
                DMatrix::from_fn(d, d, |j, l| if j == l { *sigma2 } else { sigma2 * rho })
            }
        })
    }

    /// Ω_k as a dense matrix.
    pub fn omega(&self, k: usize) -> DMatrix<f64> {
        match self.spec {
            CovarianceSpec::VarianceComponents {
                basis: VcBasis::Templates(t),
                ..
            } => match t[k] {
                OmegaTemplate::Ones => DMatrix::from_element(self.d, self.d, 1.0),
                OmegaTemplate::Identity => DMatrix::identity(self.d, self.d),
            },
            CovarianceSpec::VarianceComponents { .. } => self.omegas[k].clone(),
            _ => panic!("Ω requested for a non-VC structure"),
        }
    }

    /// `½ tr Γ`.
    pub fn half_trace(&self) -> f64 {
        match self.spec {
            CovarianceSpec::VarianceComponents { theta, .. } => {
                theta.iter().zip(self.vc_traces()).map(|(t, c)| t * c).sum()
            }
            CovarianceSpec::Ar1 { sigma2, .. } | CovarianceSpec::Cs { sigma2, .. } => {
                0.5 * self.d as f64 * sigma2
            }
        }
    }

    /// `c_k = ½ tr Ω_k`.
    pub fn vc_traces(&self) -> Vec<f64> {
        match self.spec {
            CovarianceSpec::VarianceComponents {
                basis: VcBasis::Templates(t),
                ..
            } => t.iter().map(|_| 0.5 * self.d as f64).collect(),
            CovarianceSpec::VarianceComponents { .. } => {
                self.omegas.iter().map(|o| 0.5 * o.trace()).collect()
            }
            _ => Vec::new(),
        }
    }

    /// `b_k = ½ rᵗ Ω_k r`.
    pub fn vc_quads(&self, r: &DVector<f64>) -> Vec<f64> {
        match self.spec {
            CovarianceSpec::VarianceComponents {
                basis: VcBasis::Templates(t),
                ..
            } => t
                .iter()
                .map(|o| match o {
                    OmegaTemplate::Ones => 0.5 * r.sum().powi(2),
                    OmegaTemplate::Identity => 0.5 * r.norm_squared(),
                })
                .collect(),
            CovarianceSpec::VarianceComponents { .. } => {
                self.omegas.iter().map(|o| 0.5 * r.dot(&(o * r))).collect()
            }
            _ => Vec::new(),
        }
    }

    /// Correlation-matrix quadratic forms for AR(1)/CS.
    pub fn corr_forms(&self, r: &DVector<f64>) -> CorrForms {
        match *self.spec {
            CovarianceSpec::Cs { rho, .. } => {
                let s = r.sum().powi(2);
                let q = r.norm_squared();
                CorrForms {
                    v: rho * s + (1.0 - rho) * q,
                    dv: s - q,
                    d2v: 0.0,
                }
            }
            CovarianceSpec::Ar1 { rho, .. } => {
                let d = r.len();
                let mut out = CorrForms {
                    v: r.norm_squared(),
                    dv: 0.0,
                    d2v: 0.0,
                };
                for k in 1..d {
                    let lag: f64 = (0..d - k).map(|j| r[j] * r[j + k]).sum();
                    let kf = k as f64;
                    out.v += 2.0 * rho.powi(k as i32) * lag;
                    out.dv += 2.0 * kf * rho.powi(k as i32 - 1) * lag;
                    if k >= 2 {
                        out.d2v += 2.0 * kf * (kf - 1.0) * rho.powi(k as i32 - 2) * lag;
                    }
                }
                out
            }
            CovarianceSpec::VarianceComponents { .. } => {
                panic!("correlation forms requested for a VC structure")
            }
        }
    }

    /// `Γ r` without forming Γ.
    pub fn apply(&self, r: &DVector<f64>) -> DVector<f64> {
        match self.spec {
            CovarianceSpec::VarianceComponents {
                theta,
                basis: VcBasis::Templates(t),
            } => {
                let mut out = DVector::zeros(r.len());
                let s = r.sum();
                for (th, o) in theta.iter().zip(t) {
                    match o {
                        OmegaTemplate::Ones => out.add_scalar_mut(th * s),
                        OmegaTemplate::Identity => out.axpy(*th, r, 1.0),
                    }
                }
                out
            }
            CovarianceSpec::VarianceComponents { theta, .. } => {
                let mut out = DVector::zeros(r.len());
                for (th, o) in theta.iter().zip(self.omegas) {
                    out.gemv(*th, o, r, 1.0);
                }
                out
            }
            CovarianceSpec::Cs { sigma2, rho } => {
                let s = r.sum();
                r.map(|x| sigma2 * ((1.0 - rho) * x + rho * s))
            }
            CovarianceSpec::Ar1 { sigma2, rho } => {
                let d = r.len();
                let mut out = r.clone();
                let mut acc = 0.0;
                for j in 1..d {
                    acc = rho * (acc + r[j - 1]);
                    out[j] += acc;
                }
                acc = 0.0;
                for j in (0..d.saturating_sub(1)).rev() {
                    acc = rho * (acc + r[j + 1]);
                    out[j] += acc;
                }
                out * *sigma2
            }
        }
    }

    /// `rᵗ Γ r`.
    pub fn quad(&self, r: &DVector<f64>) -> f64 {
        match self.spec {
            CovarianceSpec::VarianceComponents { theta, .. } => {
                2.0 * theta.iter().zip(self.vc_quads(r)).map(|(t, b)| t * b).sum::<f64>()
            }
            CovarianceSpec::Ar1 { sigma2, .. } | CovarianceSpec::Cs { sigma2, .. } => {
                sigma2 * self.corr_forms(r).v
            }
        }
    }
}
