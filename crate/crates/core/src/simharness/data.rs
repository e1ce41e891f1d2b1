//! Long-format CSV input and output.
//!
//! One row per observation: a group id column, one or more response
//! columns and numeric covariates. Rows are grouped by id in order of first
//! appearance. With two response columns every row contributes two
//! coordinates whose design is block diagonal in the covariates.

use crate::error::{QcError, Result};
use crate::qc_model::{block_diagonal_design, SamplingUnit};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct DataSchema {
    pub id_column: String,
    pub response_columns: Vec<String>,
    /// Covariates to use; `None` takes every other column in file order.
    pub covariate_columns: Option<Vec<String>>,
    pub intercept: bool,
}

impl Default for DataSchema {
    fn default() -> Self {
        DataSchema {
            id_column: "id".into(),
            response_columns: vec!["y".into()],
            covariate_columns: None,
            intercept: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongFormatDataset {
    pub group_ids: Vec<String>,
    pub units: Vec<SamplingUnit>,
    /// Names of the design columns per outcome, including the intercept.
    pub covariate_names: Vec<String>,
    pub response_names: Vec<String>,
    /// Rows skipped because a used field was empty or `NA`.
    pub excluded_rows: usize,
}

impl LongFormatDataset {
    pub fn n_obs(&self) -> usize {
        self.units.iter().map(SamplingUnit::d).sum()
    }
}

fn is_missing(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

fn column(headers: &[String], name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| QcError::Parse {
            line: 1,
            msg: format!("missing column '{name}'"),
        })
}

/// Build units from rows.
pub fn load_dataset(path: impl AsRef<Path>, schema: &DataSchema) -> Result<LongFormatDataset> {
    let k = schema.response_columns.len();
    if k == 0 || k > 2 {
        return Err(QcError::Config("one or two response columns are supported".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let id_col = column(&headers, &schema.id_column)?;
    let y_cols = schema
        .response_columns
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let x_names: Vec<String> = match &schema.covariate_columns {
        Some(c) => c.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != id_col && !y_cols.contains(i))
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let x_cols = x_names
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<(Vec<f64>, Vec<f64>)>> = Vec::new();
    let mut excluded = 0;
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let used = std::iter::once(id_col).chain(y_cols.iter().copied()).chain(x_cols.iter().copied());
        if used.clone().any(|c| is_missing(&rec[c])) {
            excluded += 1;
            continue;
        }
        let parse = |c: usize| -> Result<f64> {
            let s = &rec[c];
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| QcError::Parse {
                    line,
                    msg: format!("column '{}' has non-numeric value '{s}'", headers[c]),
                })
        };
        let y = y_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>>>()?;
        let mut x = Vec::with_capacity(x_cols.len() + 1);
        if schema.intercept {
            x.push(1.0);
        }
        for &c in &x_cols {
            x.push(parse(c)?);
        }
        let id = rec[id_col].to_string();
        let g = *index.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            rows.push(Vec::new());
            rows.len() - 1
        });
        rows[g].push((y, x));
    }
    if rows.is_empty() {
        return Err(QcError::Parse {
            line: 1,
            msg: "no complete rows".into(),
        });
    }
    let units = rows
        .into_iter()
        .map(|group| {
            let d = group.len() * k;
            let p = group[0].1.len();
            let mut y = DVector::zeros(d);
            let mut xm = DMatrix::zeros(d, p * k);
            for (r, (yr, xr)) in group.iter().enumerate() {
                let block = block_diagonal_design(xr, k);
                for o in 0..k {
                    y[r * k + o] = yr[o];
                    xm.row_mut(r * k + o).copy_from(&block.row(o));
                }
            }
            let fams = (0..d).map(|j| j % k).collect();
            SamplingUnit::new(y, xm).with_families(fams)
        })
        .collect();
    let mut covariate_names = Vec::new();
    if schema.intercept {
        covariate_names.push("intercept".to_string());
    }
    covariate_names.extend(x_names);
    Ok(LongFormatDataset {
        group_ids: order,
        units,
        covariate_names,
        response_names: schema.response_columns.clone(),
        excluded_rows: excluded,
    })
}

/// Write single-outcome units in long format: `id,y,x1..` with the
/// intercept column (when it is the first design column of ones) omitted.
pub fn write_dataset(path: impl AsRef<Path>, units: &[SamplingUnit], intercept: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let p = units.first().map(|u| u.x.ncols()).unwrap_or(0);
    let skip = usize::from(intercept);
    let mut header = vec!["id".to_string(), "y".to_string()];
    header.extend((skip..p).map(|c| format!("x{c}")));
    w.write_record(&header)?;
    for (i, u) in units.iter().enumerate() {
        for j in 0..u.d() {
            let mut rec = vec![i.to_string(), u.y[j].to_string()];
            rec.extend((skip..p).map(|c| u.x[(j, c)].to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
