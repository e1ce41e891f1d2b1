//! Synthetic data for the simulation studies.

use crate::covariance::CovarianceSpec;
use crate::error::{QcError, Result};
use crate::glm_base::{std_normal_quantile, Family};
use crate::qc_model::{QcDensity, QuasiCopulaModel, SamplingUnit};
use crate::sampler::sample_unit;
use nalgebra::{DMatrix, DVector};
use rand::distributions::Open01;
use rand::Rng;

/// Size and truth of one simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub n: usize,
    pub d: usize,
    pub family: Family,
    pub covariance: CovarianceSpec,
    /// True coefficients; the first multiplies the intercept.
    pub beta: Vec<f64>,
}

impl DataConfig {
    pub fn truth(&self) -> QuasiCopulaModel {
        QuasiCopulaModel::new(
            DVector::from_column_slice(&self.beta),
            self.covariance.clone(),
            vec![self.family],
        )
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.beta.is_empty() {
            return Err(QcError::Config(format!(
                "need n, d and β nonempty (n={}, d={}, p={})",
                self.n,
                self.d,
                self.beta.len()
            )));
        }
        self.family.validate()?;
        self.covariance.validate(self.d)
    }
}

pub(crate) fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    std_normal_quantile(rng.sample(Open01))
}

/// `p` coefficients drawn uniformly from `range`.
pub fn draw_beta<R: Rng + ?Sized>(p: usize, range: (f64, f64), rng: &mut R) -> Vec<f64> {
    (0..p).map(|_| rng.gen_range(range.0..range.1)).collect()
}

/// Intercept plus standard normal covariates.
pub fn draw_design<R: Rng + ?Sized>(d: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::from_element(d, p, 1.0);
    for j in 0..d {
        for c in 1..p {
            x[(j, c)] = std_normal(rng);
        }
    }
    x
}

/// Units drawn from the quasi-copula model itself.
pub fn generate_qc_data<R: Rng + ?Sized>(
    cfg: &DataConfig,
    rng: &mut R,
) -> Result<(Vec<SamplingUnit>, QuasiCopulaModel)> {
    cfg.validate()?;
    let truth = cfg.truth();
    let p = cfg.beta.len();
    let mut units = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let mut u = SamplingUnit::new(DVector::zeros(cfg.d), draw_design(cfg.d, p, rng));
        u.y = sample_unit(&truth, &u, rng)?;
        units.push(u);
    }
    Ok((units, truth))
}

/// Units drawn from the random-intercept GLMM with intercept variance equal
/// to the first covariance parameter (θ or σ²).
pub fn generate_glmm_data<R: Rng + ?Sized>(
    cfg: &DataConfig,
    rng: &mut R,
) -> Result<(Vec<SamplingUnit>, QuasiCopulaModel)> {
    cfg.validate()?;
    let truth = cfg.truth();
    let var = cfg.covariance.params()[0];
    let sd = var.sqrt();
    let p = cfg.beta.len();
    let gamma0 = DMatrix::zeros(cfg.d, cfg.d);
    let mut units = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let x = draw_design(cfg.d, p, rng);
        let b = sd * std_normal(rng);
        let eta = &x * &truth.beta;
        let laws = eta
            .iter()
            .map(|e| cfg.family.law_at(e + b))
            .collect::<Result<Vec<_>>>()?;
        let y = QcDensity { laws, gamma: gamma0.clone() }.sample(rng)?;
        units.push(SamplingUnit::new(y, x));
    }
    Ok((units, truth))
}
