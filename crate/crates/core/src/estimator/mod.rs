//! Maximum-likelihood fitting.
//!
//! [`fit`] starts from the independence model, runs block ascent (a Newton
//! step in β, MM updates for the covariance parameters and Newton steps for
//! the dispersions) and finishes with a bound-constrained limited-memory
//! quasi-Newton pass over all free parameters jointly.

mod blocks;
mod engine;
mod inference;
mod init;
mod lbfgs;

pub use blocks::{
    ar1_cs_grad_hess, beta_newton_step, beta_score_and_hessian, dispersion_newton_step,
    gaussian_tau_mm_step, nb_r_newton_step, rho_newton_step, sigma2_mm_step, theta_mm_step,
    vc_grad_hess, vc_objective, vc_parts, BetaStep, CovGradHess, DispersionStep,
};
pub use inference::{lrt, observed_information, observed_information_se, LrtResult, SeResult};
pub use init::init_params;
pub use lbfgs::{minimize_box, BoxResult, LbfgsOptions};

use crate::covariance::{CovKind, CovarianceSpec};
use crate::error::{QcError, Result};
use crate::glm_base::Family;
use crate::qc_model::{QuasiCopulaModel, SamplingUnit};
use engine::{accumulate, UnitState};
use nalgebra::DVector;

/// Tuning for [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub max_block_iters: usize,
    pub max_qn_iters: usize,
    pub max_r_newton_iters: usize,
    pub tol: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    pub ridge: f64,
    /// Distance kept from the open ends of the ρ interval.
    pub rho_margin: f64,
    pub compute_se: bool,
    /// Hold the template's covariance parameters fixed.
    pub fix_covariance: bool,
    /// Hold ρ at this value (AR(1)/CS only); σ² stays free.
    pub fix_rho: Option<f64>,
    /// Hold the template's dispersion parameters (τ, r) fixed.
    pub fix_dispersion: bool,
    /// Start from the template's parameter values rather than from the
    /// independence-model initialization.
    pub warm_start: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_block_iters: 10,
            max_qn_iters: 15,
            max_r_newton_iters: 10,
            tol: 1e-6,
            shrink: 0.5,
            max_backtracks: 20,
            ridge: 1e-8,
            rho_margin: 1e-6,
            compute_se: true,
            fix_covariance: false,
            fix_rho: None,
            fix_dispersion: false,
            warm_start: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.max_block_iters > 0
            && self.max_r_newton_iters > 0
            && self.max_backtracks > 0
            && self.tol > 0.0
            && self.tol < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.ridge > 0.0
            && self.rho_margin > 0.0;
        if positive {
            Ok(())
        } else {
            Err(QcError::Config(format!("invalid fit configuration {self:?}")))
        }
    }
}

/// Position of each parameter group in the packed parameter vector
/// `[β, covariance, dispersions]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub p: usize,
    pub n_cov: usize,
    /// Family indices whose dispersion is a parameter, in packing order.
    pub dispersion: Vec<usize>,
}

impl Layout {
    /// Dispersions are included for Gaussian and NB families used by some unit.
    pub fn new(model: &QuasiCopulaModel, units: &[SamplingUnit]) -> Self {
        let mut used = vec![false; model.families.len()];
        for u in units {
            for &f in &u.family_of {
                if f < used.len() {
                    used[f] = true;
                }
            }
        }
        let dispersion = (0..model.families.len())
            .filter(|&f| used[f] && model.families[f].dispersion().is_some())
            .collect();
        Layout {
            p: model.beta.len(),
            n_cov: model.covariance.n_params(),
            dispersion,
        }
    }

    pub fn len(&self) -> usize {
        self.p + self.n_cov + self.dispersion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cov_range(&self) -> std::ops::Range<usize> {
        self.p..self.p + self.n_cov
    }

    pub fn pack(&self, model: &QuasiCopulaModel) -> Vec<f64> {
        let mut x: Vec<f64> = model.beta.iter().copied().collect();
        x.extend(model.covariance.params());
        x.extend(
            self.dispersion
                .iter()
                .map(|&f| model.families[f].dispersion().unwrap_or(f64::NAN)),
        );
        x
    }

    pub fn unpack(&self, template: &QuasiCopulaModel, x: &[f64]) -> QuasiCopulaModel {
        let mut m = template.clone();
        m.beta = DVector::from_column_slice(&x[..self.p]);
        m.covariance = template.covariance.with_params(&x[self.cov_range()]);
        for (k, &f) in self.dispersion.iter().enumerate() {
            m.families[f] = m.families[f].with_dispersion(x[self.p + self.n_cov + k]);
        }
        m
    }

    pub fn names(&self, model: &QuasiCopulaModel) -> Vec<String> {
        let mut names: Vec<String> = (0..self.p).map(|j| format!("beta[{j}]")).collect();
        match model.covariance.kind() {
            CovKind::Vc => names.extend((0..self.n_cov).map(|k| format!("theta[{k}]"))),
            _ => names.extend(["sigma2".to_string(), "rho".to_string()]),
        }
        let multi = self.dispersion.len() > 1;
        for &f in &self.dispersion {
            let base = match model.families[f] {
                Family::Gaussian { .. } => "tau",
                _ => "r",
            };
            names.push(if multi { format!("{base}[{f}]") } else { base.to_string() });
        }
        names
    }

    /// Box constraints for every packed parameter.
    pub fn bounds(&self, model: &QuasiCopulaModel, d_max: usize, margin: f64) -> Vec<(f64, f64)> {
        let mut b = vec![(f64::NEG_INFINITY, f64::INFINITY); self.p];
        b.extend(model.covariance.bounds(d_max, margin));
        for &f in &self.dispersion {
            let lo = match model.families[f] {
                Family::NegativeBinomial { .. } => NB_R_FLOOR,
                _ => 1e-12,
            };
            b.push((lo, f64::INFINITY));
        }
        b
    }
}

pub(crate) const NB_R_FLOOR: f64 = 1e-3;

pub(crate) fn max_d(units: &[SamplingUnit]) -> usize {
    units.iter().map(SamplingUnit::d).max().unwrap_or(0)
}

/// Loglikelihood of `model` over `units`.
pub fn loglik(model: &QuasiCopulaModel, units: &[SamplingUnit]) -> Result<f64> {
    let v = accumulate(units, 1, |u, acc| {
        acc[0] += UnitState::new(model, u)?.loglik();
        Ok(())
    })?;
    Ok(v[0])
}

/// Loglikelihood and its exact gradient in the packed parameters.
pub fn loglik_and_gradient(
    model: &QuasiCopulaModel,
    units: &[SamplingUnit],
    layout: &Layout,
) -> Result<(f64, DVector<f64>)> {
    let n = layout.len();
    let v = accumulate(units, n + 1, |u, acc| {
        let st = UnitState::new(model, u)?;
        acc[0] += st.loglik();
        let gb = u.x.tr_mul(&st.eta_gradient());
        for j in 0..layout.p {
            acc[1 + j] += gb[j];
        }
        for (k, g) in st.cov_gradient().into_iter().enumerate() {
            acc[1 + layout.p + k] += g;
        }
        for (k, &f) in layout.dispersion.iter().enumerate() {
            acc[1 + layout.p + layout.n_cov + k] += st.dispersion_derivatives(&model.families, f).0;
        }
        Ok(())
    })?;
    Ok((v[0], DVector::from_column_slice(&v[1..])))
}

/// Outcome of [`fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: QuasiCopulaModel,
    pub layout: Layout,
    pub loglik: f64,
    /// Loglikelihood after initialization and after every block and
    /// quasi-Newton iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// Standard errors aligned with `param_names`; fixed parameters get 0.
    pub se: Option<Vec<f64>>,
    pub param_names: Vec<String>,
    /// Which packed parameters were estimated.
    pub free: Vec<bool>,
    pub block_iters: usize,
    pub qn_iters: usize,
    pub projected_gradient: f64,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn estimates(&self) -> Vec<f64> {
        self.layout.pack(&self.model)
    }

    /// Value and standard error of the parameter called `name`.
    pub fn get(&self, name: &str) -> Option<(f64, Option<f64>)> {
        let i = self.param_names.iter().position(|n| n == name)?;
        Some((
            self.estimates()[i],
            self.se.as_ref().map(|s| s[i]),
        ))
    }
}

fn validate_inputs(units: &[SamplingUnit], template: &QuasiCopulaModel) -> Result<()> {
    if units.is_empty() {
        return Err(QcError::Parameter("no units to fit".into()));
    }
    for u in units {
        template.check_unit(u)?;
        template.unit_cov(u)?;
        if u.y.iter().chain(u.x.iter()).any(|v| !v.is_finite()) {
            return Err(QcError::Parameter("non-finite data".into()));
        }
        for &f in &u.family_of {
            if !template.families[f].is_estimable() {
                return Err(QcError::Unsupported(format!(
                    "cannot fit the sampling-only family {}",
                    template.families[f].name()
                )));
            }
        }
    }
    template.covariance.validate(max_d(units))?;
    Ok(())
}

/// Mask of the packed parameters that `config` leaves free.
pub fn free_mask(layout: &Layout, config: &FitConfig) -> Vec<bool> {
    let mut free = vec![true; layout.len()];
    if config.fix_covariance {
        for i in layout.cov_range() {
            free[i] = false;
        }
    } else if config.fix_rho.is_some() && layout.n_cov == 2 {
        free[layout.p + 1] = false;
    }
    if config.fix_dispersion {
        for f in free.iter_mut().skip(layout.p + layout.n_cov) {
            *f = false;
        }
    }
    free
}

fn rel_change(old: f64, new: f64) -> f64 {
    (new - old).abs() / old.abs().max(1.0)
}

/// Whether every coordinate uses one Gaussian family, which enables the
/// joint τ/θ MM update.
fn single_gaussian(model: &QuasiCopulaModel, units: &[SamplingUnit]) -> bool {
    let f0 = units[0].family_of[0];
    matches!(model.families[f0], Family::Gaussian { .. })
        && units.iter().all(|u| u.family_of.iter().all(|&f| f == f0))
}

/// Maximum-likelihood fit of the template's structure to `units`.
///
/// The template fixes the covariance kind and basis, the family of every
/// coordinate and, when the corresponding `fix_*` option is set, the held
/// parameter values. Non-convergence is reported through
/// [`FitResult::converged`], never as an error.
pub fn fit(
    units: &[SamplingUnit],
    template: &QuasiCopulaModel,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    validate_inputs(units, template)?;
    let mut warnings = Vec::new();
    let mut model = if config.warm_start {
        init::check_rank(units, template.beta.len())?;
        let mut m = template.clone();
        m.covariance = apply_fixed_rho(&m.covariance, config.fix_rho);
        m
    } else {
        init_params(units, template, config)?
    };
    let layout = Layout::new(&model, units);
    let free = free_mask(&layout, config);
    let d_max = max_d(units);
    let joint_gaussian = single_gaussian(&model, units)
        && model.covariance.kind() == CovKind::Vc
        && !config.fix_covariance
        && !config.fix_dispersion;

    let mut ll = loglik(&model, units)?;
    let mut trace = vec![ll];
    let mut block_iters = 0;
    let mut last_change = f64::INFINITY;
    for _ in 0..config.max_block_iters {
        block_iters += 1;
        let start = ll;
        let step = beta_newton_step(&model, units, config)?;
        model = step.model;
        if !config.fix_covariance {
            if joint_gaussian {
                for _ in 0..5 {
                    let (tau, theta) = gaussian_tau_mm_step(&model, units)?;
                    let f = units[0].family_of[0];
                    model.families[f] = Family::Gaussian { tau };
                    model.covariance = model.covariance.with_params(&theta);
                }
            } else {
                match model.covariance.kind() {
                    CovKind::Vc => {
                        let (b, c) = vc_parts(&model, units)?;
                        let mut theta = model.covariance.params();
                        for _ in 0..5 {
                            theta = theta_mm_step(&theta, &b, &c);
                        }
                        model.covariance = model.covariance.with_params(&theta);
                    }
                    CovKind::Ar1 | CovKind::Cs => {
                        for _ in 0..5 {
                            model = sigma2_mm_step(&model, units)?;
                        }
                        if config.fix_rho.is_none() {
                            model = rho_newton_step(&model, units, config)?.0;
                        }
                    }
                }
            }
        }
        if !config.fix_dispersion {
            for &f in &layout.dispersion {
                if joint_gaussian && matches!(model.families[f], Family::Gaussian { .. }) {
                    continue;
                }
                for _ in 0..config.max_r_newton_iters {
                    let s = dispersion_newton_step(&model, units, f, config)?;
                    if s.flagged {
                        warnings.push(format!("dispersion step for family {f} skipped"));
                    }
                    let moved = rel_change(
                        model.families[f].dispersion().unwrap_or(0.0),
                        s.model.families[f].dispersion().unwrap_or(0.0),
                    );
                    model = s.model;
                    if s.flagged || moved < config.tol {
                        break;
                    }
                }
            }
        }
        ll = loglik(&model, units)?;
        trace.push(ll);
        last_change = rel_change(start, ll);
        if last_change < config.tol {
            break;
        }
    }

    let bounds = layout.bounds(&model, d_max, config.rho_margin);
    let curvature = observed_information(&model, units, &layout, &free)?;
    let x0 = layout.pack(&model);
    let base = model.clone();
    let objective = |x: &[f64]| -> Result<(f64, DVector<f64>)> {
        let m = layout.unpack(&base, x);
        let (l, g) = loglik_and_gradient(&m, units, &layout)?;
        Ok((-l, -g))
    };
    let opts = LbfgsOptions {
        max_iters: config.max_qn_iters,
        tol: config.tol,
        shrink: config.shrink,
        max_backtracks: config.max_backtracks,
        prior_rel_change: last_change,
        ..LbfgsOptions::default()
    };
    let qn = minimize_box(objective, &x0, &bounds, &free, &curvature, &opts)?;
    model = layout.unpack(&base, &qn.x);
    ll = -qn.f;
    trace.extend(qn.trace.iter().map(|f| -f));
    if qn.iters > 0 {
        last_change = qn.last_rel_change;
    }
    let pg_ok = qn.projected_gradient < config.tol * (1.0 + ll.abs());
    let converged = pg_ok && last_change < config.tol;
    if !converged {
        warnings.push(format!(
            "not converged: relative change {last_change:.3e}, projected gradient {:.3e}",
            qn.projected_gradient
        ));
    }

    let se = if config.compute_se {
        let s = observed_information_se(&model, units, &layout, &free)?;
        if let Some(w) = s.warning {
            warnings.push(w);
        }
        s.se
    } else {
        None
    };
    Ok(FitResult {
        param_names: layout.names(&model),
        model,
        layout,
        loglik: ll,
        trace,
        converged,
        se,
        free,
        block_iters,
        qn_iters: qn.iters,
        projected_gradient: qn.projected_gradient,
        warnings,
    })
}

/// The covariance kind a template was built with, with `fix_rho` applied.
pub(crate) fn apply_fixed_rho(spec: &CovarianceSpec, rho: Option<f64>) -> CovarianceSpec {
    match (spec, rho) {
        (CovarianceSpec::Ar1 { sigma2, .. }, Some(r)) => CovarianceSpec::ar1(*sigma2, r),
        (CovarianceSpec::Cs { sigma2, .. }, Some(r)) => CovarianceSpec::cs(*sigma2, r),
        _ => spec.clone(),
    }
}

#[cfg(test)]
mod tests;
