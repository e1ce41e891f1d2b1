//! The quasi-copula joint density and quantities derived from it.
//!
//! For a unit with base densities `f_j`, means `μ_j`, standard deviations
//! `σ_j` and residuals `r = D⁻¹(y − μ)` the density is
//!
//! ```text
//! g(y) = ∏ f_j(y_j) · (1 + ½ rᵗΓr) / (1 + ½ tr Γ)
//! ```

use crate::covariance::{min_eigenvalue, CovarianceSpec, UnitCov};
use crate::error::{QcError, Result};
use crate::glm_base::{Family, Law};
use nalgebra::{DMatrix, DVector};

/// One independent group of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingUnit {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    /// Index into the model's family list, one per coordinate.
    pub family_of: Vec<usize>,
    /// Explicit Ω matrices for per-unit variance-component bases.
    pub omegas: Vec<DMatrix<f64>>,
}

impl SamplingUnit {
    /// A unit whose coordinates all use the model's first family.
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Self {
        let d = y.len();
        SamplingUnit {
            y,
            x,
            family_of: vec![0; d],
            omegas: Vec::new(),
        }
    }

    pub fn with_families(mut self, family_of: Vec<usize>) -> Self {
        self.family_of = family_of;
        self
    }

    pub fn with_omegas(mut self, omegas: Vec<DMatrix<f64>>) -> Self {
        self.omegas = omegas;
        self
    }

    pub fn d(&self) -> usize {
        self.y.len()
    }
}

/// Block-diagonal design `[xᵗ 0; 0 xᵗ]` for `k` outcomes sharing covariates `x`.
pub fn block_diagonal_design(x: &[f64], k: usize) -> DMatrix<f64> {
    let p = x.len();
    let mut m = DMatrix::zeros(k, k * p);
    for j in 0..k {
        for (c, v) in x.iter().enumerate() {
            m[(j, j * p + c)] = *v;
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuasiCopulaModel {
    pub beta: DVector<f64>,
    pub covariance: CovarianceSpec,
    pub families: Vec<Family>,
}

impl QuasiCopulaModel {
    pub fn new(beta: DVector<f64>, covariance: CovarianceSpec, families: Vec<Family>) -> Self {
        QuasiCopulaModel {
            beta,
            covariance,
            families,
        }
    }

    pub fn check_unit(&self, unit: &SamplingUnit) -> Result<()> {
        let d = unit.d();
        if d == 0 || unit.x.nrows() != d || unit.family_of.len() != d {
            return Err(QcError::Parameter(format!(
                "unit with {} responses, {} design rows and {} family tags",
                d,
                unit.x.nrows(),
                unit.family_of.len()
            )));
        }
        if unit.x.ncols() != self.beta.len() {
            return Err(QcError::Parameter(format!(
                "design has {} columns, β has {}",
                unit.x.ncols(),
                self.beta.len()
            )));
        }
        if unit.family_of.iter().any(|&f| f >= self.families.len()) {
            return Err(QcError::Parameter("family index out of range".into()));
        }
        Ok(())
    }

    pub fn unit_cov<'a>(&'a self, unit: &'a SamplingUnit) -> Result<UnitCov<'a>> {
        self.covariance.unit(unit.d(), &unit.omegas)
    }

    pub fn linear_predictor(&self, unit: &SamplingUnit) -> DVector<f64> {
        &unit.x * &self.beta
    }

    /// Base law of every coordinate.
    pub fn laws(&self, unit: &SamplingUnit) -> Result<Vec<Law>> {
        self.check_unit(unit)?;
        let eta = self.linear_predictor(unit);
        (0..unit.d())
            .map(|j| self.families[unit.family_of[j]].law_at(eta[j]))
            .collect()
    }

    pub fn standardized_residuals(&self, unit: &SamplingUnit) -> Result<DVector<f64>> {
        residuals(&self.laws(unit)?, unit.y.as_slice())
    }

    pub fn logdensity_unit(&self, unit: &SamplingUnit) -> Result<f64> {
        let laws = self.laws(unit)?;
        let cov = self.unit_cov(unit)?;
        let mut lnf = 0.0;
        for (law, y) in laws.iter().zip(unit.y.iter()) {
            lnf += law.ln_pdf(*y)?;
        }
        let r = residuals(&laws, unit.y.as_slice())?;
        Ok(lnf + (0.5 * cov.quad(&r)).ln_1p() - cov.half_trace().ln_1p())
    }

    pub fn loglikelihood(&self, units: &[SamplingUnit]) -> Result<f64> {
        units.iter().map(|u| self.logdensity_unit(u)).sum()
    }

    /// The fully specified joint law of one unit.
    pub fn density(&self, unit: &SamplingUnit) -> Result<QcDensity> {
        let laws = self.laws(unit)?;
        let gamma = self.unit_cov(unit)?.materialize()?;
        Ok(QcDensity { laws, gamma })
    }

    pub fn exact_moments(&self, unit: &SamplingUnit) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok(self.density(unit)?.exact_moments())
    }
}

fn residuals(laws: &[Law], y: &[f64]) -> Result<DVector<f64>> {
    let mut r = DVector::zeros(laws.len());
    for (j, law) in laws.iter().enumerate() {
        let sd = law.sd();
        if !(sd > 0.0) {
            return Err(QcError::Degenerate(format!("zero standard deviation at coordinate {j}")));
        }
        r[j] = (y[j] - law.mean()) / sd;
    }
    Ok(r)
}

/// Moments of `Y_S` given `Y_T`. Variances and covariances are second-order
/// approximations in Γ; `approximate` records that.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub approximate: bool,
}

/// Joint quasi-copula law of one unit: base laws plus a dense Γ.
#[derive(Debug, Clone, PartialEq)]
pub struct QcDensity {
    pub laws: Vec<Law>,
    pub gamma: DMatrix<f64>,
}

impl QcDensity {
    pub fn new(laws: Vec<Law>, gamma: DMatrix<f64>) -> Result<Self> {
        let d = laws.len();
        if gamma.nrows() != d || gamma.ncols() != d {
            return Err(QcError::Parameter(format!("Γ must be {d}×{d}")));
        }
        if d > 0 && min_eigenvalue(&gamma) < -1e-12 * gamma.abs().max().max(1.0) {
            return Err(QcError::Parameter("Γ must be positive semidefinite".into()));
        }
        Ok(QcDensity { laws, gamma })
    }

    pub fn d(&self) -> usize {
        self.laws.len()
    }

    fn half_trace(&self, idx: impl Iterator<Item = usize>) -> f64 {
        0.5 * idx.map(|j| self.gamma[(j, j)]).sum::<f64>()
    }

    fn sub_quad(&self, idx: &[usize], r: &[f64]) -> f64 {
        let mut q = 0.0;
        for (a, &j) in idx.iter().enumerate() {
            for (b, &l) in idx.iter().enumerate() {
                q += r[a] * self.gamma[(j, l)] * r[b];
            }
        }
        q
    }

    fn resid(&self, j: usize, y: f64) -> f64 {
        (y - self.laws[j].mean()) / self.laws[j].sd()
    }

    pub fn ln_density(&self, y: &[f64]) -> Result<f64> {
        let all: Vec<usize> = (0..self.d()).collect();
        Ok(self.marginal_density(&all, y)?.ln())
    }

    /// Marginal density of the coordinates in `s` at `y_s`.
    pub fn marginal_density(&self, s: &[usize], y_s: &[f64]) -> Result<f64> {
        let mut prod = 1.0;
        let mut r = Vec::with_capacity(s.len());
        for (&j, &y) in s.iter().zip(y_s) {
            prod *= self.laws[j].ln_pdf(y)?.exp();
            r.push(self.resid(j, y));
        }
        let rest = self.half_trace((0..self.d()).filter(|j| !s.contains(j)));
        let total = self.half_trace(0..self.d());
        Ok(prod * (1.0 + 0.5 * self.sub_quad(s, &r) + rest) / (1.0 + total))
    }

    /// Density of `Y_S = y_s` conditional on `Y_T = y_t`, where `s` and `t`
    /// partition the coordinates.
    pub fn conditional_density(
        &self,
        s: &[usize],
        y_s: &[f64],
        t: &[usize],
        y_t: &[f64],
    ) -> Result<f64> {
        let mut prod = 1.0;
        let mut idx = Vec::with_capacity(self.d());
        let mut r = Vec::with_capacity(self.d());
        for (&j, &y) in s.iter().zip(y_s) {
            prod *= self.laws[j].ln_pdf(y)?.exp();
            idx.push(j);
            r.push(self.resid(j, y));
        }
        let rt: Vec<f64> = t.iter().zip(y_t).map(|(&j, &y)| self.resid(j, y)).collect();
        idx.extend_from_slice(t);
        r.extend_from_slice(&rt);
        let norm = 1.0 + 0.5 * self.sub_quad(t, &rt) + self.half_trace(s.iter().copied());
        Ok(prod * (1.0 + 0.5 * self.sub_quad(&idx, &r)) / norm)
    }

    /// Exact mean vector and covariance matrix.
    pub fn exact_moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.d();
        let scale = 1.0 / (1.0 + self.half_trace(0..d));
        let trace = self.gamma.trace();
        let sd: Vec<f64> = self.laws.iter().map(Law::sd).collect();
        let mut shift = DVector::zeros(d);
        let mut mean = DVector::zeros(d);
        let mut cov = DMatrix::zeros(d, d);
        for k in 0..d {
            let (c3, c4) = self.laws[k].central_moments();
            let gkk = self.gamma[(k, k)];
            let v = self.laws[k].variance();
            shift[k] = scale * c3 * gkk / (2.0 * v);
            mean[k] = self.laws[k].mean() + shift[k];
            cov[(k, k)] = scale * (v + 0.5 * c4 * gkk / v + 0.5 * v * (trace - gkk));
        }
        for k in 0..d {
            for l in 0..d {
                if k != l {
                    cov[(k, l)] = scale * sd[k] * sd[l] * self.gamma[(k, l)];
                }
                cov[(k, l)] -= shift[k] * shift[l];
            }
        }
        (mean, cov)
    }

    /// Conditional moments of `Y_S` given `Y_T = y_t`.
    pub fn conditional_moments(&self, s: &[usize], t: &[usize], y_t: &[f64]) -> ConditionalMoments {
        let rt: Vec<f64> = t.iter().zip(y_t).map(|(&j, &y)| self.resid(j, y)).collect();
        let ds = 1.0 / (1.0 + 0.5 * self.sub_quad(t, &rt) + self.half_trace(s.iter().copied()));
        let n = s.len();
        let mut mean = DVector::zeros(n);
        let mut cov = DMatrix::zeros(n, n);
        for (a, &k) in s.iter().enumerate() {
            let law = &self.laws[k];
            let (c3, c4) = law.central_moments();
            let sd = law.sd();
            let v = law.variance();
            let gkk = self.gamma[(k, k)];
            let cross: f64 = t.iter().zip(&rt).map(|(&j, &r)| r * self.gamma[(j, k)]).sum();
            mean[a] = law.mean() + ds * (c3 * gkk / (2.0 * v) + sd * cross);
            cov[(a, a)] = v + 0.5 * (c4 / v - v) * gkk + c3 * cross / sd;
            for (b, &l) in s.iter().enumerate() {
                if a != b {
                    cov[(a, b)] = sd * self.laws[l].sd() * self.gamma[(k, l)];
                }
            }
        }
        ConditionalMoments {
            mean,
            cov,
            approximate: true,
        }
    }
}
