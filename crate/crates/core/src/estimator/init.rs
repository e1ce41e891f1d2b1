//! Starting values from the independence model.

use super::blocks::{gaussian_tau_mm_step, theta_mm_step, vc_parts};
use super::{apply_fixed_rho, FitConfig};
use crate::covariance::{CovKind, CovarianceSpec, OmegaTemplate, VcBasis};
use crate::error::{QcError, Result};
use crate::glm_base::Family;
use crate::qc_model::{QuasiCopulaModel, SamplingUnit};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

const IRLS_MAX_ITERS: usize = 100;

pub(super) fn check_rank(units: &[SamplingUnit], p: usize) -> Result<()> {
    let mut xtx = DMatrix::zeros(p, p);
    for u in units {
        xtx += u.x.tr_mul(&u.x);
    }
    let eig = SymmetricEigen::new(xtx).eigenvalues;
    let max = eig.iter().copied().fold(0.0, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= 1e-10 * max {
        return Err(QcError::Design(format!(
            "design is rank deficient (eigenvalues in [{min:.3e}, {max:.3e}])"
        )));
    }
    Ok(())
}

fn independence_loglik(model: &QuasiCopulaModel, units: &[SamplingUnit]) -> Result<f64> {
    let mut ll = 0.0;
    for u in units {
        let eta = model.linear_predictor(u);
        for j in 0..u.d() {
            ll += model.families[u.family_of[j]].loglik_and_score(u.y[j], eta[j])?.0;
        }
    }
    Ok(ll)
}

/// Fisher scoring for β in the independence GLM, with step halving.
fn irls(model: &QuasiCopulaModel, units: &[SamplingUnit]) -> Result<DVector<f64>> {
    let p = model.beta.len();
    let mut m = model.clone();
    let mut ll = independence_loglik(&m, units)
        .map_err(|e| QcError::Init(format!("independence loglikelihood at start: {e}")))?;
    for _ in 0..IRLS_MAX_ITERS {
        let mut g = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for u in units {
            let eta = m.linear_predictor(u);
            for j in 0..u.d() {
                let fam = &m.families[u.family_of[j]];
                let (_, s) = fam.loglik_and_score(u.y[j], eta[j])?;
                let (_, w2) = fam.working_weights(eta[j])?;
                let row = u.x.row(j).transpose();
                g += &row * s;
                info += &row * row.transpose() * w2;
            }
        }
        let delta = info
            .cholesky()
            .ok_or_else(|| QcError::Init("working information is singular".into()))?
            .solve(&g);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial = m.clone();
            trial.beta = &m.beta + &delta * t;
            if let Ok(l) = independence_loglik(&trial, units) {
                if l >= ll {
                    m = trial;
                    ll = l;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        let size = (delta.amax() * t).abs();
        if !accepted || size < 1e-10 * (1.0 + m.beta.amax()) {
            if m.beta.iter().all(|b| b.is_finite()) {
                return Ok(m.beta);
            }
            break;
        }
    }
    if m.beta.amax() > 1e3 || !m.beta.iter().all(|b| b.is_finite()) {
        return Err(QcError::Init(format!("IRLS diverged (β = {:?})", m.beta.as_slice())));
    }
    Err(QcError::Init(format!(
        "IRLS did not converge in {IRLS_MAX_ITERS} iterations"
    )))
}

/// Moment estimates of the Gaussian precision and NB size for every family.
fn moment_dispersions(model: &QuasiCopulaModel, units: &[SamplingUnit]) -> Result<Vec<Family>> {
    let k = model.families.len();
    let mut count = vec![0.0; k];
    let mut rss = vec![0.0; k];
    let mut mu2 = vec![0.0; k];
    for u in units {
        let eta = model.linear_predictor(u);
        for j in 0..u.d() {
            let f = u.family_of[j];
            let mu = model.families[f].mean_from_eta(eta[j])?;
            let e = u.y[j] - mu;
            count[f] += 1.0;
            match model.families[f] {
                Family::NegativeBinomial { .. } => {
                    rss[f] += e * e - mu;
                    mu2[f] += mu * mu;
                }
                _ => rss[f] += e * e,
            }
        }
    }
    Ok(model
        .families
        .iter()
        .enumerate()
        .map(|(f, fam)| match fam {
            Family::Gaussian { .. } if count[f] > 0.0 && rss[f] > 0.0 => {
                Family::Gaussian { tau: count[f] / rss[f] }
            }
            Family::NegativeBinomial { .. } if count[f] > 0.0 => {
                let r = if rss[f] > 0.0 { mu2[f] / rss[f] } else { 1e4 };
                Family::NegativeBinomial { r: r.clamp(0.1, 1e4) }
            }
            other => *other,
        })
        .collect())
}

/// Initial model for [`fit`](super::fit).
///
/// β comes from the independence GLM and the dispersions from moment
/// estimates. Variance components start at 1 and take ten MM steps at fixed
/// β. AR(1)/CS take σ² from the same MM with `V = 11ᵗ` and start at ρ = 0
/// (or the fixed ρ). Held parameters keep the template's values.
pub fn init_params(
    units: &[SamplingUnit],
    template: &QuasiCopulaModel,
    config: &FitConfig,
) -> Result<QuasiCopulaModel> {
    if units.is_empty() {
        return Err(QcError::Parameter("no units".into()));
    }
    let p = template.beta.len();
    check_rank(units, p)?;
    let mut model = template.clone();
    model.beta = DVector::zeros(p);
    if !config.fix_dispersion {
        for f in model.families.iter_mut() {
            match f {
                Family::Gaussian { .. } => *f = Family::Gaussian { tau: 1.0 },
                Family::NegativeBinomial { .. } => *f = Family::NegativeBinomial { r: 1.0 },
                _ => {}
            }
        }
    }
    model.beta = irls(&model, units)?;
    if !config.fix_dispersion {
        model.families = moment_dispersions(&model, units)?;
        model.beta = irls(&model, units)?;
        model.families = moment_dispersions(&model, units)?;
    }
    if config.fix_covariance {
        return Ok(model);
    }
    match model.covariance.kind() {
        CovKind::Vc => {
            let m = model.covariance.n_params();
            model.covariance = model.covariance.with_params(&vec![1.0; m]);
            let gaussian = units.iter().all(|u| u.family_of.iter().all(|&f| f == units[0].family_of[0]))
                && matches!(model.families[units[0].family_of[0]], Family::Gaussian { .. })
                && !config.fix_dispersion;
            for _ in 0..10 {
                if gaussian {
                    let (tau, theta) = gaussian_tau_mm_step(&model, units)?;
                    model.families[units[0].family_of[0]] = Family::Gaussian { tau };
                    model.covariance = model.covariance.with_params(&theta);
                } else {
                    let (b, c) = vc_parts(&model, units)?;
                    let theta = theta_mm_step(&model.covariance.params(), &b, &c);
                    model.covariance = model.covariance.with_params(&theta);
                }
            }
        }
        CovKind::Ar1 | CovKind::Cs => {
            let mut ri = model.clone();
            ri.covariance = CovarianceSpec::VarianceComponents {
                theta: vec![1.0],
                basis: VcBasis::Templates(vec![OmegaTemplate::Ones]),
            };
            let mut theta = vec![1.0];
            let (b, c) = vc_parts(&ri, units)?;
            for _ in 0..10 {
                theta = theta_mm_step(&theta, &b, &c);
            }
            let start = model.covariance.with_params(&[theta[0].max(1e-4), 0.0]);
            model.covariance = apply_fixed_rho(&start, config.fix_rho);
        }
    }
    Ok(model)
}
