//! Replicated simulate-and-fit studies.

use super::generate::{draw_beta, generate_glmm_data, generate_qc_data, DataConfig};
use crate::covariance::{CovKind, CovarianceSpec};
use crate::error::{QcError, Result};
use crate::estimator::{fit, FitConfig};
use crate::glm_base::Family;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::time::Instant;

/// Which law generates the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// The quasi-copula model itself.
    QuasiCopula,
    /// A random-intercept GLMM.
    Glmm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStudyConfig {
    pub scenario: Scenario,
    /// Base family with its true dispersion.
    pub family: Family,
    pub covariance: CovKind,
    pub theta: f64,
    pub sigma2: f64,
    pub rho: f64,
    pub n_list: Vec<usize>,
    pub d_list: Vec<usize>,
    /// Number of coefficients including the intercept.
    pub p: usize,
    pub beta_range: (f64, f64),
    /// Fixed true coefficients; drawn from `beta_range` when absent.
    pub beta: Option<Vec<f64>>,
    pub replicates: usize,
    pub seed: u64,
    pub fit: FitConfig,
}

impl Default for SimStudyConfig {
    fn default() -> Self {
        SimStudyConfig {
            scenario: Scenario::QuasiCopula,
            family: Family::Poisson,
            covariance: CovKind::Vc,
            theta: 0.1,
            sigma2: 0.1,
            rho: 0.5,
            n_list: vec![100, 1000],
            d_list: vec![2, 5],
            p: 3,
            beta_range: (-0.2, 0.2),
            beta: None,
            replicates: 20,
            seed: 2024,
            fit: FitConfig::default(),
        }
    }
}

impl SimStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.n_list.is_empty() || self.d_list.is_empty() || self.p == 0 {
            return Err(QcError::Config(
                "need replicates >= 1 and nonempty n, d lists and p".into(),
            ));
        }
        if self.n_list.contains(&0) || self.d_list.contains(&0) {
            return Err(QcError::Config("n and d must be positive".into()));
        }
        if !self.family.is_estimable() {
            return Err(QcError::Config(format!("cannot fit a {} base", self.family.name())));
        }
        if let Some(b) = &self.beta {
            if b.len() != self.p {
                return Err(QcError::Config(format!("β has {} entries, p = {}", b.len(), self.p)));
            }
        }
        if !(self.beta_range.0 < self.beta_range.1) {
            return Err(QcError::Config("empty β range".into()));
        }
        self.family.validate()?;
        self.fit.validate()?;
        for &d in &self.d_list {
            self.true_covariance().validate(d)?;
        }
        Ok(())
    }

    pub fn true_covariance(&self) -> CovarianceSpec {
        match self.covariance {
            CovKind::Vc => CovarianceSpec::random_intercept(self.theta),
            CovKind::Ar1 => CovarianceSpec::ar1(self.sigma2, self.rho),
            CovKind::Cs => CovarianceSpec::cs(self.sigma2, self.rho),
        }
    }

    /// True coefficients, drawn from stream 0 of the seed when not given.
    pub fn true_beta(&self) -> Vec<f64> {
        self.beta.clone().unwrap_or_else(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            draw_beta(self.p, self.beta_range, &mut rng)
        })
    }
}

/// RNG for one replicate. The stream depends only on `(n, d, rep)`, so
/// adding replicates or cells leaves existing replicates unchanged.
pub fn replicate_rng(seed: u64, n: usize, d: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 40) ^ ((d as u64) << 24) ^ (rep as u64 + 1));
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub n: usize,
    pub d: usize,
    pub rep: usize,
    /// Packed estimates `[β, covariance, dispersion]`, empty on failure.
    pub estimates: Vec<f64>,
    pub se: Option<Vec<f64>>,
    pub loglik: f64,
    pub converged: bool,
    /// Wall time of the fit alone.
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub n: usize,
    pub d: usize,
    pub replicates: usize,
    pub failures: usize,
    /// Mean over replicates of `‖β̂ − β‖²/p`.
    pub mse_beta: f64,
    /// Mean over replicates and covariance parameters of the squared error.
    pub mse_cov: f64,
    /// Squared error of the dispersion, when one is estimated.
    pub mse_dispersion: Option<f64>,
    pub mean_seconds: f64,
    /// Standard error of the mean fit time.
    pub se_seconds: f64,
    pub convergence_rate: f64,
    pub mean_estimates: Vec<f64>,
    /// Mean standard error per parameter over replicates that reported one.
    pub mean_se: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub config: SimStudyConfig,
    pub truth: Vec<f64>,
    pub param_names: Vec<String>,
    pub cells: Vec<CellSummary>,
    pub replicates: Vec<ReplicateResult>,
    pub threads: usize,
}

impl StudyResult {
    pub fn cell(&self, n: usize, d: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.n == n && c.d == d)
    }

    pub fn any_nonconverged(&self) -> bool {
        self.replicates.iter().any(|r| !r.converged)
    }
}

fn run_replicate(config: &SimStudyConfig, truth: &DataConfig, rep: usize) -> ReplicateResult {
    let mut rng = replicate_rng(config.seed, truth.n, truth.d, rep);
    let mut out = ReplicateResult {
        n: truth.n,
        d: truth.d,
        rep,
        estimates: Vec::new(),
        se: None,
        loglik: f64::NAN,
        converged: false,
        seconds: 0.0,
        error: None,
    };
    let data = match config.scenario {
        Scenario::QuasiCopula => generate_qc_data(truth, &mut rng),
        Scenario::Glmm => generate_glmm_data(truth, &mut rng),
    };
    let (units, model) = match data {
        Ok(v) => v,
        Err(e) => {
            out.error = Some(format!("generation: {e}"));
            return out;
        }
    };
    let start = Instant::now();
    let fitted = fit(&units, &model, &config.fit);
    out.seconds = start.elapsed().as_secs_f64();
    match fitted {
        Ok(f) => {
            out.estimates = f.estimates();
            out.se = f.se;
            out.loglik = f.loglik;
            out.converged = f.converged;
        }
        Err(e) => out.error = Some(format!("fit: {e}")),
    }
    out
}

fn summarize(n: usize, d: usize, truth: &[f64], p: usize, n_cov: usize, reps: &[ReplicateResult]) -> CellSummary {
    let ok: Vec<&ReplicateResult> = reps.iter().filter(|r| r.error.is_none()).collect();
    let k = ok.len().max(1) as f64;
    let sq = |r: &ReplicateResult, range: std::ops::Range<usize>| -> f64 {
        range.clone().map(|i| (r.estimates[i] - truth[i]).powi(2)).sum::<f64>() / range.len().max(1) as f64
    };
    let len = truth.len();
    let mse_beta = ok.iter().map(|r| sq(r, 0..p)).sum::<f64>() / k;
    let mse_cov = ok.iter().map(|r| sq(r, p..p + n_cov)).sum::<f64>() / k;
    let mse_dispersion = (len > p + n_cov).then(|| ok.iter().map(|r| sq(r, p + n_cov..len)).sum::<f64>() / k);
    let times: Vec<f64> = reps.iter().map(|r| r.seconds).collect();
    let mt = times.iter().sum::<f64>() / times.len() as f64;
    let se_t = if times.len() > 1 {
        (times.iter().map(|t| (t - mt).powi(2)).sum::<f64>() / (times.len() - 1) as f64).sqrt()
            / (times.len() as f64).sqrt()
    } else {
        0.0
    };
    let mean_estimates = (0..len)
        .map(|i| ok.iter().map(|r| r.estimates[i]).sum::<f64>() / k)
        .collect();
    let with_se: Vec<&Vec<f64>> = ok.iter().filter_map(|r| r.se.as_ref()).collect();
    let mean_se = (!with_se.is_empty()).then(|| {
        (0..len)
            .map(|i| with_se.iter().map(|s| s[i]).sum::<f64>() / with_se.len() as f64)
            .collect()
    });
    CellSummary {
        n,
        d,
        replicates: reps.len(),
        failures: reps.len() - ok.len(),
        mse_beta,
        mse_cov,
        mse_dispersion,
        mean_seconds: mt,
        se_seconds: se_t,
        convergence_rate: reps.iter().filter(|r| r.converged).count() as f64 / reps.len() as f64,
        mean_estimates,
        mean_se,
    }
}

/// Run every `(n, d)` cell of the study. Replicates run in parallel on the
/// current rayon pool and are merged by replicate index.
pub fn run_sim_study(config: &SimStudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let beta = config.true_beta();
    let cov = config.true_covariance();
    let mut truth: Vec<f64> = beta.clone();
    truth.extend(cov.params());
    if let Some(v) = config.family.dispersion() {
        truth.push(v);
    }
    let names = {
        let model = DataConfig {
            n: 1,
            d: 2,
            family: config.family,
            covariance: cov.clone(),
            beta: beta.clone(),
        }
        .truth();
        let unit = crate::qc_model::SamplingUnit::new(
            nalgebra::DVector::zeros(2),
            nalgebra::DMatrix::zeros(2, config.p),
        );
        crate::estimator::Layout::new(&model, &[unit]).names(&model)
    };
    let mut cells = Vec::new();
    let mut all = Vec::new();
    for &n in &config.n_list {
        for &d in &config.d_list {
            let dc = DataConfig {
                n,
                d,
                family: config.family,
                covariance: cov.clone(),
                beta: beta.clone(),
            };
            let reps: Vec<ReplicateResult> = (0..config.replicates)
                .into_par_iter()
                .map(|rep| run_replicate(config, &dc, rep))
                .collect();
            cells.push(summarize(n, d, &truth, config.p, cov.n_params(), &reps));
            all.extend(reps);
        }
    }
    Ok(StudyResult {
        config: config.clone(),
        truth,
        param_names: names,
        cells,
        replicates: all,
        threads: rayon::current_num_threads(),
    })
}
