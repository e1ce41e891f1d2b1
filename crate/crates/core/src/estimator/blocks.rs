//! Single-block updates used by the block-ascent phase of the fit.

use super::engine::{accumulate, UnitState};
use super::{loglik, max_d, FitConfig, NB_R_FLOOR};
use crate::covariance::{CovKind, CovarianceSpec};
use crate::error::{QcError, Result};
use crate::glm_base::Family;
use crate::qc_model::{QuasiCopulaModel, SamplingUnit};
use nalgebra::{DMatrix, DVector};

/// β gradient and the approximate, negative semidefinite Hessian
/// `−Σ XᵗW₂X − Σ vvᵗ/(1 + ½rᵗΓr)²` where `v` is the β-gradient of `½rᵗΓr`.
pub fn beta_score_and_hessian(
    model: &QuasiCopulaModel,
    units: &[SamplingUnit],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = model.beta.len();
    let v = accumulate(units, p + p * p, |u, acc| {
        let st = UnitState::new(model, u)?;
        let cg = st.copula_beta_gradient(u);
        let scores = DVector::from_fn(u.d(), |j, _| st.coords[j].score);
        let g = u.x.tr_mul(&scores) + &cg / st.den;
        for a in 0..p {
            acc[a] += g[a];
        }
        let rest = &mut acc[p..];
        let den2 = st.den * st.den;
        for (j, c) in st.coords.iter().enumerate() {
            let row = u.x.row(j);
            for a in 0..p {
                let wa = c.w2 * row[a];
                for b in 0..p {
                    rest[a * p + b] -= wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..p {
                rest[a * p + b] -= cg[a] * cg[b] / den2;
            }
        }
        Ok(())
    })?;
    let g = DVector::from_column_slice(&v[..p]);
    let h = DMatrix::from_row_slice(p, p, &v[p..]);
    Ok((g, h))
}

#[derive(Debug, Clone)]
pub struct BetaStep {
    pub model: QuasiCopulaModel,
    pub loglik: f64,
    /// No step length in the backtracking sequence improved the loglikelihood.
    pub stalled: bool,
}

/// One approximate Newton step in β with step halving.
pub fn beta_newton_step(
    model: &QuasiCopulaModel,
    units: &[SamplingUnit],
    config: &FitConfig,
) -> Result<BetaStep> {
    let ll0 = loglik(model, units)?;
    let (g, h) = beta_score_and_hessian(model, units)?;
    let p = g.len();
    let info = -h + DMatrix::identity(p, p) * config.ridge;
    let delta = info
        .cholesky()
        .ok_or_else(|| QcError::Numeric("β information not positive definite".into()))?
        .solve(&g);
    let unchanged = BetaStep {
        model: model.clone(),
        loglik: ll0,
        stalled: false,
    };
    if delta.amax() == 0.0 {
        return Ok(unchanged);
    }
    let mut t = 1.0;
    for _ in 0..config.max_backtracks {
        let mut trial = model.clone();
        trial.beta = &model.beta + &delta * t;
        if let Ok(l) = loglik(&trial, units) {
            if l >= ll0 {
                return Ok(BetaStep {
                    model: trial,
                    loglik: l,
                    stalled: false,
                });
            }
        }
        t *= config.shrink;
    }
    Ok(BetaStep {
        stalled: true,
        ..unchanged
    })
}

fn require_vc(model: &QuasiCopulaModel) -> Result<()> {
    if model.covariance.kind() == CovKind::Vc {
        Ok(())
    } else {
        Err(QcError::Unsupported(
            "variance-component update on a non-VC structure".into(),
        ))
    }
}

/// `b_ik = ½ r_iᵗΩ_k r_i` and `c_ik = ½ tr Ω_k`, one row per unit.
pub fn vc_parts(
    model: &QuasiCopulaModel,
    units: &[SamplingUnit],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    require_vc(model)?;
    let m = model.covariance.n_params();
    let mut b = DMatrix::zeros(units.len(), m);
    let mut c = DMatrix::zeros(units.len(), m);
    for (i, u) in units.iter().enumerate() {
        let st = UnitState::new(model, u)?;
        for (k, v) in st.cov.vc_quads(&st.r).into_iter().enumerate() {
            b[(i, k)] = v;
        }
        for (k, v) in st.cov.vc_traces().into_iter().enumerate() {
            c[(i, k)] = v;
        }
    }
    Ok((b, c))
}

fn row_dot(theta: &[f64], m: &DMatrix<f64>, i: usize) -> f64 {
    theta.iter().enumerate().map(|(k, t)| t * m[(i, k)]).sum()
}

/// The θ part of the loglikelihood at fixed residuals:
/// `Σ ln(1 + θᵗb_i) − Σ ln(1 + θᵗc_i)`.
pub fn vc_objective(theta: &[f64], b: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    (0..b.nrows())
        .map(|i| row_dot(theta, b, i).ln_1p() - row_dot(theta, c, i).ln_1p())
        .sum()
}

/// Multiplicative MM update for the variance components.
pub fn theta_mm_step(theta: &[f64], b: &DMatrix<f64>, c: &DMatrix<f64>) -> Vec<f64> {
    let m = theta.len();
    let mut num = vec![0.0; m];
    let mut den = vec![0.0; m];
    for i in 0..b.nrows() {
        let sb = 1.0 + row_dot(theta, b, i);
        let sc = 1.0 + row_dot(theta, c, i);
        for k in 0..m {
            num[k] += b[(i, k)] / sb;
            den[k] += c[(i, k)] / sc;
        }
    }
    (0..m)
        .map(|k| if den[k] > 0.0 { theta[k] * num[k] / den[k] } else { theta[k] })
        .collect()
}

/// Gradient and Hessian of [`vc_objective`].
pub fn vc_grad_hess(theta: &[f64], b: &DMatrix<f64>, c: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let m = theta.len();
    let mut g = DVector::zeros(m);
    let mut h = DMatrix::zeros(m, m);
    for i in 0..b.nrows() {
        let sb = 1.0 + row_dot(theta, b, i);
        let sc = 1.0 + row_dot(theta, c, i);
        for k in 0..m {
            g[k] += b[(i, k)] / sb - c[(i, k)] / sc;
            for l in 0..m {
                h[(k, l)] += c[(i, k)] * c[(i, l)] / (sc * sc) - b[(i, k)] * b[(i, l)] / (sb * sb);
            }
        }
    }
    (g, h)
}

/// Gradient and Hessian in `(σ², ρ)` for AR(1)/CS structures.
#[derive(Debug, Clone)]
pub struct CovGradHess {
    pub g: DVector<f64>,
    pub h: DMatrix<f64>,
    /// ρ lay outside the interior and was moved inside before evaluating.
    pub clamped: bool,
}

pub fn ar1_cs_grad_hess(model: &QuasiCopulaModel, units: &[SamplingUnit]) -> Result<CovGradHess> {
    let (sigma2, rho) = match model.covariance {
        CovarianceSpec::Ar1 { sigma2, rho } | CovarianceSpec::Cs { sigma2, rho } => (sigma2, rho),
        _ => {
            return Err(QcError::Unsupported(
                "(σ², ρ) derivatives need an AR(1) or CS structure".into(),
            ))
        }
    };
    let (lo, hi) = model.covariance.bounds(max_d(units), FitConfig::default().rho_margin)[1];
    let clamped_rho = rho.clamp(lo, hi);
    let mut m = model.clone();
    m.covariance = m.covariance.with_params(&[sigma2.max(0.0), clamped_rho]);
    let v = accumulate(units, 5, |u, acc| {
        let st = UnitState::new(&m, u)?;
        let f = st.cov.corr_forms(&st.r);
        let d = u.d() as f64;
        let den = st.den;
        let tden = 1.0 + 0.5 * d * sigma2;
        acc[0] += 0.5 * f.v / den - 0.5 * d / tden;
        acc[1] += 0.5 * sigma2 * f.dv / den;
        acc[2] += (0.5 * d / tden).powi(2) - (0.5 * f.v / den).powi(2);
        acc[3] += 0.5 * f.dv / (den * den);
        acc[4] += 0.5 * sigma2 * f.d2v / den - (0.5 * sigma2 * f.dv / den).powi(2);
        Ok(())
    })?;
    Ok(CovGradHess {
        g: DVector::from_column_slice(&v[..2]),
        h: DMatrix::from_row_slice(2, 2, &[v[2], v[3], v[3], v[4]]),
        clamped: clamped_rho != rho,
    })
}

/// MM update of σ² at fixed ρ, treating `σ²V(ρ)` as a single variance component.
pub fn sigma2_mm_step(model: &QuasiCopulaModel, units: &[SamplingUnit]) -> Result<QuasiCopulaModel> {
    let (sigma2, rho) = match model.covariance {
        CovarianceSpec::Ar1 { sigma2, rho } | CovarianceSpec::Cs { sigma2, rho } => (sigma2, rho),
        _ => return Err(QcError::Unsupported("σ² update needs AR(1) or CS".into())),
    };
    let mut b = DMatrix::zeros(units.len(), 1);
    let mut c = DMatrix::zeros(units.len(), 1);
    for (i, u) in units.iter().enumerate() {
        let st = UnitState::new(model, u)?;
        b[(i, 0)] = 0.5 * st.cov.corr_forms(&st.r).v;
        c[(i, 0)] = 0.5 * u.d() as f64;
    }
    let s = theta_mm_step(&[sigma2], &b, &c)[0];
    let mut out = model.clone();
    out.covariance = model.covariance.with_params(&[s, rho]);
    Ok(out)
}

/// Safeguarded Newton iterations for ρ inside its bounds. Returns the
/// updated model and loglikelihood.
pub fn rho_newton_step(
    model: &QuasiCopulaModel,
    units: &[SamplingUnit],
    config: &FitConfig,
) -> Result<(QuasiCopulaModel, f64)> {
    let mut cur = model.clone();
    let mut ll = loglik(&cur, units)?;
    let (lo, hi) = cur.covariance.bounds(max_d(units), config.rho_margin)[1];
    for _ in 0..5 {
        let p = cur.covariance.params();
        let (sigma2, rho) = (p[0], p[1]);
        let gh = ar1_cs_grad_hess(&cur, units)?;
        let (g, h) = (gh.g[1], gh.h[(1, 1)]);
        if g == 0.0 || !g.is_finite() || !h.is_finite() {
            break;
        }
        let step = if h < 0.0 { -g / h } else { g.signum() * 0.1 * (hi - lo) };
        let target = (rho + step).clamp(lo, hi);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..config.max_backtracks {
            let r = rho + t * (target - rho);
            let mut trial = cur.clone();
            trial.covariance = cur.covariance.with_params(&[sigma2, r]);
            if let Ok(l) = loglik(&trial, units) {
                if l >= ll {
                    moved = (r - rho).abs() > 0.0;
                    cur = trial;
                    ll = l;
                    break;
                }
            }
            t *= config.shrink;
        }
        if !moved || (cur.covariance.params()[1] - rho).abs() < config.tol {
            break;
        }
    }
    Ok((cur, ll))
}

#[derive(Debug, Clone)]
pub struct DispersionStep {
    pub model: QuasiCopulaModel,
    pub loglik: f64,
    /// A derivative was not finite and the step was skipped.
    pub flagged: bool,
}

/// One safeguarded Newton step for the dispersion (τ or r) of family `fam`.
///
/// The step is `L′/h` with curvature `h = −L″`, replaced by 1 when the
/// loglikelihood is not locally concave, followed by step halving.
pub fn dispersion_newton_step(
    model: &QuasiCopulaModel,
    units: &[SamplingUnit],
    fam: usize,
    config: &FitConfig,
) -> Result<DispersionStep> {
    let phi = model.families.get(fam).and_then(Family::dispersion).ok_or_else(|| {
        QcError::Unsupported(format!("family {fam} has no dispersion parameter"))
    })?;
    let floor = match model.families[fam] {
        Family::NegativeBinomial { .. } => NB_R_FLOOR,
        _ => 1e-12,
    };
    let v = accumulate(units, 3, |u, acc| {
        let st = UnitState::new(model, u)?;
        let (d1, d2) = st.dispersion_derivatives(&model.families, fam);
        acc[0] += st.loglik();
        acc[1] += d1;
        acc[2] += d2;
        Ok(())
    })?;
    let (ll0, d1, d2) = (v[0], v[1], v[2]);
    let unchanged = DispersionStep {
        model: model.clone(),
        loglik: ll0,
        flagged: false,
    };
    if !(d1.is_finite() && d2.is_finite()) {
        return Ok(DispersionStep {
            flagged: true,
            ..unchanged
        });
    }
    let h = if -d2 > 0.0 { -d2 } else { 1.0 };
    let target = (phi + d1 / h).max(floor);
    if target == phi {
        return Ok(unchanged);
    }
    let mut t = 1.0;
    for _ in 0..config.max_backtracks {
        let mut trial = model.clone();
        trial.families[fam] = model.families[fam].with_dispersion(phi + t * (target - phi));
        if let Ok(l) = loglik(&trial, units) {
            if l >= ll0 {
                return Ok(DispersionStep {
                    model: trial,
                    loglik: l,
                    flagged: false,
                });
            }
        }
        t *= config.shrink;
    }
    Ok(unchanged)
}

/// [`dispersion_newton_step`] for the first negative binomial family.
pub fn nb_r_newton_step(
    model: &QuasiCopulaModel,
    units: &[SamplingUnit],
    config: &FitConfig,
) -> Result<DispersionStep> {
    let fam = model
        .families
        .iter()
        .position(|f| matches!(f, Family::NegativeBinomial { .. }))
        .ok_or_else(|| QcError::Unsupported("model has no negative binomial family".into()))?;
    dispersion_newton_step(model, units, fam, config)
}

/// Joint MM update of the Gaussian precision τ and the variance components.
///
/// Requires every coordinate to use the same Gaussian family and a VC
/// structure. Returns `(τ′, θ′)`.
pub fn gaussian_tau_mm_step(
    model: &QuasiCopulaModel,
    units: &[SamplingUnit],
) -> Result<(f64, Vec<f64>)> {
    require_vc(model)?;
    let fam = units.first().map(|u| u.family_of[0]).unwrap_or(0);
    let tau = match model.families.get(fam) {
        Some(Family::Gaussian { tau }) => *tau,
        _ => return Err(QcError::Unsupported("τ update needs a Gaussian family".into())),
    };
    if units.iter().any(|u| u.family_of.iter().any(|&f| f != fam)) {
        return Err(QcError::Unsupported("τ update needs a single Gaussian family".into()));
    }
    let theta = model.covariance.params();
    let m = theta.len();
    let mut n_obs = 0.0;
    let mut rss = 0.0;
    let mut weight = vec![0.0; m];
    let mut trace = vec![0.0; m];
    for u in units {
        model.check_unit(u)?;
        let cov = model.unit_cov(u)?;
        let e = &u.y - model.linear_predictor(u);
        let q = cov.vc_quads(&e);
        let c = cov.vc_traces();
        let sq = 1.0 + tau * theta.iter().zip(&q).map(|(t, v)| t * v).sum::<f64>();
        let sc = 1.0 + theta.iter().zip(&c).map(|(t, v)| t * v).sum::<f64>();
        for k in 0..m {
            weight[k] += tau * theta[k] * q[k] / sq;
            trace[k] += c[k] / sc;
        }
        n_obs += u.d() as f64;
        rss += e.norm_squared();
    }
    if !(rss > 0.0) {
        return Err(QcError::Degenerate("residual sum of squares is zero".into()));
    }
    let tau_new = (n_obs + 2.0 * weight.iter().sum::<f64>()) / rss;
    let theta_new = (0..m)
        .map(|k| if trace[k] > 0.0 { weight[k] / trace[k] } else { theta[k] })
        .collect();
    Ok((tau_new, theta_new))
}
