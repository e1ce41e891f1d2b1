//! Standard errors and likelihood-ratio tests.

use super::blocks::{ar1_cs_grad_hess, beta_score_and_hessian, vc_grad_hess, vc_parts};
use super::engine::{accumulate, UnitState};
use super::{loglik_and_gradient, max_d, FitResult, Layout};
use crate::covariance::{CovKind, CovarianceSpec};
use crate::error::{QcError, Result};
use crate::qc_model::{QuasiCopulaModel, SamplingUnit};
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Block index of every packed parameter: β, covariance, then one block
/// per dispersion.
fn block_of(layout: &Layout) -> Vec<usize> {
    let mut b = vec![0; layout.p];
    b.extend(std::iter::repeat(1).take(layout.n_cov));
    b.extend((0..layout.dispersion.len()).map(|k| 2 + k));
    b
}

/// Negated approximate Hessian within each parameter block.
fn block_information(
    model: &QuasiCopulaModel,
    units: &[SamplingUnit],
    layout: &Layout,
) -> Result<DMatrix<f64>> {
    let n = layout.len();
    let p = layout.p;
    let mut info = DMatrix::zeros(n, n);
    let (_, hb) = beta_score_and_hessian(model, units)?;
    info.view_mut((0, 0), (p, p)).copy_from(&(-hb));
    let hc = match model.covariance.kind() {
        CovKind::Vc => {
            let (b, c) = vc_parts(model, units)?;
            vc_grad_hess(&model.covariance.params(), &b, &c).1
        }
        CovKind::Ar1 | CovKind::Cs => ar1_cs_grad_hess(model, units)?.h,
    };
    info.view_mut((p, p), (layout.n_cov, layout.n_cov)).copy_from(&(-hc));
    let k = layout.dispersion.len();
    if k > 0 {
        let d2 = accumulate(units, k, |u, acc| {
            let st = UnitState::new(model, u)?;
            for (i, &f) in layout.dispersion.iter().enumerate() {
                acc[i] += st.dispersion_derivatives(&model.families, f).1;
            }
            Ok(())
        })?;
        for i in 0..k {
            let j = p + layout.n_cov + i;
            info[(j, j)] = -d2[i];
        }
    }
    Ok(info)
}

/// Observed information over all packed parameters: analytic approximate
/// blocks on the diagonal, cross-blocks by central differences of the
/// analytic gradient. Entries of fixed parameters are left at zero outside
/// their diagonal block.
pub fn observed_information(
    model: &QuasiCopulaModel,
    units: &[SamplingUnit],
    layout: &Layout,
    free: &[bool],
) -> Result<DMatrix<f64>> {
    let mut info = block_information(model, units, layout)?;
    let blocks = block_of(layout);
    if blocks.iter().copied().max().unwrap_or(0) == 0 {
        return Ok(info);
    }
    let x = layout.pack(model);
    let bounds = layout.bounds(model, max_d(units), 1e-6);
    let grad = |v: &[f64]| -> Result<DVector<f64>> {
        Ok(loglik_and_gradient(&layout.unpack(model, v), units, layout)?.1)
    };
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    for k in (0..n).filter(|&k| free[k]) {
        let h = 1e-5 * x[k].abs().max(1.0);
        let shifted = |delta: f64| {
            let mut v = x.clone();
            v[k] += delta;
            v
        };
        let col = if x[k] - h >= bounds[k].0 && x[k] + h <= bounds[k].1 {
            (grad(&shifted(h))? - grad(&shifted(-h))?) / (2.0 * h)
        } else if x[k] + h <= bounds[k].1 {
            (grad(&shifted(h))? - grad(&x)?) / h
        } else {
            (grad(&x)? - grad(&shifted(-h))?) / h
        };
        jac.set_column(k, &col);
    }
    for i in 0..n {
        for k in 0..n {
            if blocks[i] != blocks[k] && free[i] && free[k] {
                info[(i, k)] = -0.5 * (jac[(i, k)] + jac[(k, i)]);
            }
        }
    }
    Ok(info)
}

#[derive(Debug, Clone)]
pub struct SeResult {
    /// Standard errors aligned with the packed parameters (0 for fixed
    /// ones), or `None` when the information is not positive definite.
    pub se: Option<Vec<f64>>,
    pub information: DMatrix<f64>,
    pub warning: Option<String>,
}

/// Standard errors from the inverse observed information of the free parameters.
pub fn observed_information_se(
    model: &QuasiCopulaModel,
    units: &[SamplingUnit],
    layout: &Layout,
    free: &[bool],
) -> Result<SeResult> {
    let info = observed_information(model, units, layout, free)?;
    let idx: Vec<usize> = (0..layout.len()).filter(|&i| free[i]).collect();
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| info[(idx[a], idx[b])]);
    let Some(chol) = sub.cholesky() else {
        return Ok(SeResult {
            se: None,
            information: info,
            warning: Some("observed information is not positive definite; no standard errors".into()),
        });
    };
    let cov = chol.inverse();
    let mut se = vec![0.0; layout.len()];
    for (a, &i) in idx.iter().enumerate() {
        se[i] = cov[(a, a)].max(0.0).sqrt();
    }
    Ok(SeResult {
        se: Some(se),
        information: info,
        warning: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrtResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df: usize,
    /// The null fixes a variance parameter at zero, on the boundary of the
    /// parameter space; the χ² reference then overstates the p-value.
    pub conservative: bool,
}

/// Likelihood-ratio test of a nested null fit against a full fit.
pub fn lrt(full: &FitResult, null: &FitResult, df: usize) -> Result<LrtResult> {
    if df == 0 {
        return Err(QcError::Config("LRT needs df >= 1".into()));
    }
    let diff = full.loglik - null.loglik;
    if diff < -1e-6 {
        return Err(QcError::Nesting(format!(
            "full loglikelihood {} is below the null's {}",
            full.loglik, null.loglik
        )));
    }
    let statistic = (2.0 * diff).max(0.0);
    let chi = ChiSquared::new(df as f64).map_err(|e| QcError::Numeric(e.to_string()))?;
    let p_value = if statistic == 0.0 { 1.0 } else { chi.sf(statistic) };
    let zero_variance = |r: &FitResult| -> bool {
        let cov = r.layout.cov_range();
        match r.model.covariance {
            CovarianceSpec::VarianceComponents { ref theta, .. } => theta
                .iter()
                .enumerate()
                .any(|(k, t)| *t == 0.0 && !r.free[cov.start + k]),
            CovarianceSpec::Ar1 { sigma2, .. } | CovarianceSpec::Cs { sigma2, .. } => {
                sigma2 == 0.0 && !r.free[cov.start]
            }
        }
    };
    Ok(LrtResult {
        statistic,
        p_value,
        df,
        conservative: zero_variance(null),
    })
}
