//! Flat `key = value` study configuration files.
//!
//! Blank lines and text after `#` are ignored. Lists are comma separated.
//!
//! ```text
//! scenario = qc          # or glmm
//! family = negbin
//! dispersion = 10
//! covariance = vc
//! theta = 0.1
//! n = 100, 1000
//! d = 2, 5
//! replicates = 20
//! seed = 7
//! ```

use super::study::{Scenario, SimStudyConfig};
use crate::covariance::CovKind;
use crate::error::{QcError, Result};
use crate::glm_base::Family;
use std::path::Path;
use std::str::FromStr;

fn bad(line: usize, msg: impl Into<String>) -> QcError {
    QcError::Parse { line, msg: msg.into() }
}

fn scalar<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| bad(line, format!("invalid value '{v}' for '{key}'")))
}

fn list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| scalar(line, key, s.trim())).collect()
}

fn boolean(line: usize, key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(line, format!("invalid boolean '{v}' for '{key}'"))),
    }
}

pub fn parse_study_config(text: &str) -> Result<SimStudyConfig> {
    let mut cfg = SimStudyConfig::default();
    let mut dispersion: Option<f64> = None;
    let mut family_line = 0;
    let mut p_set = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| bad(line, format!("expected key = value, got '{content}'")))?;
        let key = key.trim().to_ascii_lowercase();
        let v = value.trim();
        match key.as_str() {
            "scenario" => {
                cfg.scenario = match v.to_ascii_lowercase().as_str() {
                    "qc" | "quasicopula" | "i" => Scenario::QuasiCopula,
                    "glmm" | "ii" => Scenario::Glmm,
                    _ => return Err(bad(line, format!("unknown scenario '{v}'"))),
                }
            }
            "family" => {
                cfg.family = Family::from_name(v).map_err(|e| bad(line, e.to_string()))?;
                family_line = line;
            }
            "dispersion" => dispersion = Some(scalar(line, &key, v)?),
            "covariance" => cfg.covariance = CovKind::from_name(v).map_err(|e| bad(line, e.to_string()))?,
            "theta" => cfg.theta = scalar(line, &key, v)?,
            "sigma2" => cfg.sigma2 = scalar(line, &key, v)?,
            "rho" => cfg.rho = scalar(line, &key, v)?,
            "n" => cfg.n_list = list(line, &key, v)?,
            "d" => cfg.d_list = list(line, &key, v)?,
            "p" => {
                cfg.p = scalar(line, &key, v)?;
                p_set = true;
            }
            "beta_min" => cfg.beta_range.0 = scalar(line, &key, v)?,
            "beta_max" => cfg.beta_range.1 = scalar(line, &key, v)?,
            "beta" => cfg.beta = Some(list(line, &key, v)?),
            "replicates" => cfg.replicates = scalar(line, &key, v)?,
            "seed" => cfg.seed = scalar(line, &key, v)?,
            "tol" => cfg.fit.tol = scalar(line, &key, v)?,
            "max_block_iters" => cfg.fit.max_block_iters = scalar(line, &key, v)?,
            "max_qn_iters" => cfg.fit.max_qn_iters = scalar(line, &key, v)?,
            "compute_se" => cfg.fit.compute_se = boolean(line, &key, v)?,
            _ => return Err(QcError::Config(format!("line {line}: unknown key '{key}'"))),
        }
    }
    if let Some(v) = dispersion {
        if cfg.family.dispersion().is_none() {
            return Err(bad(
                family_line.max(1),
                format!("family {} has no dispersion", cfg.family.name()),
            ));
        }
        cfg.family = cfg.family.with_dispersion(v);
    }
    if let (Some(b), false) = (&cfg.beta, p_set) {
        cfg.p = b.len();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_study_config(path: impl AsRef<Path>) -> Result<SimStudyConfig> {
    parse_study_config(&std::fs::read_to_string(path)?)
}
