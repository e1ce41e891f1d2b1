//! Tables for a finished study: `mse.csv`, `estimates.csv` and `report.md`.

use super::study::StudyResult;
use crate::error::{QcError, Result};
use std::fmt::Write as _;
use std::path::Path;

/// One `(n, d)` row of the timing and error table.
#[derive(Debug, Clone, PartialEq)]
pub struct MseRow {
    pub n: usize,
    pub d: usize,
    pub replicates: usize,
    pub failures: usize,
    pub convergence_rate: f64,
    pub mse_beta: f64,
    pub mse_cov: f64,
    pub mse_dispersion: Option<f64>,
    pub time: f64,
    pub time_se: f64,
    pub threads: usize,
}

/// Mean estimate of one parameter in one cell, with a 95% interval built
/// from the mean standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub n: usize,
    pub d: usize,
    pub parameter: String,
    pub truth: f64,
    pub fit: f64,
    pub ci: Option<(f64, f64)>,
}

pub fn mse_table(result: &StudyResult) -> Vec<MseRow> {
    result
        .cells
        .iter()
        .map(|c| MseRow {
            n: c.n,
            d: c.d,
            replicates: c.replicates,
            failures: c.failures,
            convergence_rate: c.convergence_rate,
            mse_beta: c.mse_beta,
            mse_cov: c.mse_cov,
            mse_dispersion: c.mse_dispersion,
            time: c.mean_seconds,
            time_se: c.se_seconds,
            threads: result.threads,
        })
        .collect()
}

pub fn estimate_table(result: &StudyResult) -> Vec<EstimateRow> {
    let mut rows = Vec::new();
    for c in &result.cells {
        if c.failures == c.replicates {
            continue;
        }
        for (i, name) in result.param_names.iter().enumerate() {
            let fit = c.mean_estimates[i];
            let ci = c.mean_se.as_ref().map(|s| (fit - 1.96 * s[i], fit + 1.96 * s[i]));
            rows.push(EstimateRow {
                n: c.n,
                d: c.d,
                parameter: name.clone(),
                truth: result.truth[i],
                fit,
                ci,
            });
        }
    }
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| x.to_string())
}

fn format_ci(ci: Option<(f64, f64)>) -> String {
    ci.map_or_else(|| "NA".into(), |(a, b)| format!("({a}, {b})"))
}

/// Write the three report files into `dir`, creating it if needed.
pub fn write_report(result: &StudyResult, dir: impl AsRef<Path>) -> Result<()> {
    let mse = mse_table(result);
    let est = estimate_table(result);
    if mse.is_empty() || est.is_empty() {
        return Err(QcError::Config("no results to report".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join("mse.csv"))?;
    w.write_record([
        "n", "d", "replicates", "failures", "convergence_rate", "mse_beta", "mse_cov",
        "mse_dispersion", "time", "time_se", "threads",
    ])?;
    for r in &mse {
        w.write_record([
            r.n.to_string(),
            r.d.to_string(),
            r.replicates.to_string(),
            r.failures.to_string(),
            r.convergence_rate.to_string(),
            r.mse_beta.to_string(),
            r.mse_cov.to_string(),
            opt(r.mse_dispersion),
            r.time.to_string(),
            r.time_se.to_string(),
            r.threads.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("estimates.csv"))?;
    w.write_record(["n", "d", "Parameter", "Truth", "Fit", "CI"])?;
    for r in &est {
        w.write_record([
            r.n.to_string(),
            r.d.to_string(),
            r.parameter.clone(),
            r.truth.to_string(),
            r.fit.to_string(),
            format_ci(r.ci),
        ])?;
    }
    w.flush()?;

    std::fs::write(dir.join("report.md"), markdown(result, &mse, &est))?;
    Ok(())
}

fn markdown(result: &StudyResult, mse: &[MseRow], est: &[EstimateRow]) -> String {
    let cfg = &result.config;
    let mut s = String::new();
    let _ = writeln!(s, "# Simulation study\n");
    let _ = writeln!(
        s,
        "Scenario {:?}, family {}, covariance {:?}, {} replicates, seed {}, {} threads.\n",
        cfg.scenario,
        cfg.family.name(),
        cfg.covariance,
        cfg.replicates,
        cfg.seed,
        result.threads
    );
    let _ = writeln!(s, "## Fit time and error\n");
    let _ = writeln!(s, "| n | d | time (s) | SE of time | MSE(β) | MSE(cov) | MSE(disp) | converged |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
    for r in mse {
        let disp = r.mse_dispersion.map_or("-".into(), |v| format!("{v:.3e}"));
        let _ = writeln!(
            s,
            "| {} | {} | {:.4} | {:.4} | {:.3e} | {:.3e} | {} | {:.0}% |",
            r.n,
            r.d,
            r.time,
            r.time_se,
            r.mse_beta,
            r.mse_cov,
            disp,
            100.0 * r.convergence_rate
        );
    }
    let _ = writeln!(s, "\n## Estimates\n");
    let _ = writeln!(s, "| n | d | Parameter | Truth | Fit | CI |");
    let _ = writeln!(s, "|---|---|---|---|---|---|");
    for r in est {
        let ci = r.ci.map_or("-".into(), |(a, b)| format!("({a:.3}, {b:.3})"));
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.3} | {:.3} | {} |",
            r.n, r.d, r.parameter, r.truth, r.fit, ci
        );
    }
    s
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| QcError::Parse {
            line,
            msg: format!("bad field {i}"),
        })
}

fn opt_field(rec: &csv::StringRecord, i: usize, line: usize) -> Result<Option<f64>> {
    if rec.get(i) == Some("NA") {
        Ok(None)
    } else {
        field(rec, i, line).map(Some)
    }
}

pub fn read_mse_csv(path: impl AsRef<Path>) -> Result<Vec<MseRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        rows.push(MseRow {
            n: field(&rec, 0, line)?,
            d: field(&rec, 1, line)?,
            replicates: field(&rec, 2, line)?,
            failures: field(&rec, 3, line)?,
            convergence_rate: field(&rec, 4, line)?,
            mse_beta: field(&rec, 5, line)?,
            mse_cov: field(&rec, 6, line)?,
            mse_dispersion: opt_field(&rec, 7, line)?,
            time: field(&rec, 8, line)?,
            time_se: field(&rec, 9, line)?,
            threads: field(&rec, 10, line)?,
        });
    }
    Ok(rows)
}

fn parse_ci(s: &str, line: usize) -> Result<Option<(f64, f64)>> {
    if s == "NA" {
        return Ok(None);
    }
    let bad = || QcError::Parse {
        line,
        msg: format!("bad interval '{s}'"),
    };
    let inner = s.strip_prefix('(').and_then(|t| t.strip_suffix(')')).ok_or_else(bad)?;
    let (a, b) = inner.split_once(',').ok_or_else(bad)?;
    Ok(Some((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    )))
}

pub fn read_estimates_csv(path: impl AsRef<Path>) -> Result<Vec<EstimateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        rows.push(EstimateRow {
            n: field(&rec, 0, line)?,
            d: field(&rec, 1, line)?,
            parameter: rec.get(2).unwrap_or_default().to_string(),
            truth: field(&rec, 3, line)?,
            fit: field(&rec, 4, line)?,
            ci: parse_ci(rec.get(5).unwrap_or_default(), line)?,
        });
    }
    Ok(rows)
}
