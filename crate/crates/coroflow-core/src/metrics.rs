//! Regression metrics and case-wise reporting.
//!
//! Four metrics over paired vectors (y = ground truth, ŷ = prediction):
//!
//! ```text
//! R²    = 1 − Σ(ŷᵢ − yᵢ)² / Σ(ȳ − yᵢ)²
//! PCC   = Σ(ŷᵢ − ȳ̂)(yᵢ − ȳ) / (√Σ(ŷᵢ − ȳ̂)² · √Σ(yᵢ − ȳ)²)
//! RMSE  = √(Σ(ŷᵢ − yᵢ)² / m)
//! NRMSE = RMSE / ō            (ō = mean observation)
//! ```
//!
//! Reports group predictions by case and append an unweighted mean row;
//! R² and Pearson are reported in percent. Metrics that are undefined for a
//! case (constant vectors, too few points, zero mean) come back as nulls
//! with a reason instead of failing the whole report.

use serde::Serialize;
use thiserror::Error;

use crate::io::preds::PredictionRecord;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("vectors have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ground truth is constant; denominator undefined")]
    ConstantTruth,
    #[error("prediction vector is constant; correlation undefined")]
    ConstantPrediction,
    #[error("mean observation is zero; NRMSE undefined")]
    ZeroMeanObservation,
    #[error("no predictions to report")]
    Empty,
}

fn check_lengths(y: &[f64], y_hat: &[f64], needed: usize) -> Result<(), MetricError> {
    if y.len() != y_hat.len() {
        return Err(MetricError::LengthMismatch(y.len(), y_hat.len()));
    }
    if y.len() < needed {
        return Err(MetricError::TooFewSamples {
            needed,
            got: y.len(),
        });
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Coefficient of determination; may be negative for poor fits.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricError> {
    check_lengths(y, y_hat, 2)?;
    let y_bar = mean(y);
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (b - a) * (b - a)).sum();
    let ss_tot: f64 = y.iter().map(|a| (y_bar - a) * (y_bar - a)).sum();
    if ss_tot == 0.0 {
        return Err(MetricError::ConstantTruth);
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Pearson correlation coefficient, in [−1, 1].
pub fn pearson(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricError> {
    check_lengths(y, y_hat, 2)?;
    let my = mean(y);
    let mh = mean(y_hat);
    let mut cov = 0.0;
    let mut var_y = 0.0;
    let mut var_h = 0.0;
    for (a, b) in y.iter().zip(y_hat) {
        cov += (b - mh) * (a - my);
        var_y += (a - my) * (a - my);
        var_h += (b - mh) * (b - mh);
    }
    if var_y == 0.0 {
        return Err(MetricError::ConstantTruth);
    }
    if var_h == 0.0 {
        return Err(MetricError::ConstantPrediction);
    }
    Ok(cov / (var_h.sqrt() * var_y.sqrt()))
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricError> {
    check_lengths(y, y_hat, 1)?;
    let mse: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        / y.len() as f64;
    Ok(mse.sqrt())
}

/// RMSE divided by the mean observation ō.
pub fn nrmse(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricError> {
    let r = rmse(y, y_hat)?;
    let o_bar = mean(y);
    if o_bar == 0.0 {
        return Err(MetricError::ZeroMeanObservation);
    }
    Ok(r / o_bar)
}

/// Per-case metric bundle. R² and Pearson are percentages.
#[derive(Debug, Clone, Serialize)]
pub struct CaseReport {
    pub case_id: String,
    pub m: usize,
    pub r_squared_pct: Option<f64>,
    pub pearson_pct: Option<f64>,
    pub rmse: Option<f64>,
    pub nrmse: Option<f64>,
    /// Reasons for any null metric above.
    pub notes: Vec<String>,
}

/// Unweighted means of the defined per-case values.
#[derive(Debug, Clone, Serialize)]
pub struct MeanRow {
    pub r_squared_pct: Option<f64>,
    pub pearson_pct: Option<f64>,
    pub rmse: Option<f64>,
    pub nrmse: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub cases: Vec<CaseReport>,
    pub mean: MeanRow,
}

fn set_or_note(
    target: &mut Option<f64>,
    notes: &mut Vec<String>,
    name: &str,
    value: Result<f64, MetricError>,
    map: impl Fn(f64) -> f64,
) {
    match value {
        Ok(v) => *target = Some(map(v)),
        Err(e) => notes.push(format!("{name}: {e}")),
    }
}

/// Groups records by case (first-appearance order) and evaluates each case
/// plus the mean row.
pub fn case_report(records: &[PredictionRecord]) -> Result<EvalReport, MetricError> {
    if records.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.case_id.as_str()) {
            order.push(&r.case_id);
        }
    }

    let mut cases = Vec::with_capacity(order.len());
    for id in order {
        let (y, y_hat): (Vec<f64>, Vec<f64>) = records
            .iter()
            .filter(|r| r.case_id == id)
            .map(|r| (r.y_true_mmhg, r.y_pred_mmhg))
            .unzip();
        let mut report = CaseReport {
            case_id: id.to_string(),
            m: y.len(),
            r_squared_pct: None,
            pearson_pct: None,
            rmse: None,
            nrmse: None,
            notes: Vec::new(),
        };
        set_or_note(
            &mut report.r_squared_pct,
            &mut report.notes,
            "r_squared",
            r_squared(&y, &y_hat),
            |v| 100.0 * v,
        );
        set_or_note(
            &mut report.pearson_pct,
            &mut report.notes,
            "pearson",
            pearson(&y, &y_hat),
            |v| 100.0 * v,
        );
        set_or_note(
            &mut report.rmse,
            &mut report.notes,
            "rmse",
            rmse(&y, &y_hat),
            |v| v,
        );
        set_or_note(
            &mut report.nrmse,
            &mut report.notes,
            "nrmse",
            nrmse(&y, &y_hat),
            |v| v,
        );
        cases.push(report);
    }

    let mean_of = |pick: fn(&CaseReport) -> Option<f64>| {
        let vals: Vec<f64> = cases.iter().filter_map(pick).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    let mean = MeanRow {
        r_squared_pct: mean_of(|c| c.r_squared_pct),
        pearson_pct: mean_of(|c| c.pearson_pct),
        rmse: mean_of(|c| c.rmse),
        nrmse: mean_of(|c| c.nrmse),
    };
    Ok(EvalReport { cases, mean })
}

fn cell(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(v) => format!("{v:.decimals$}"),
        None => "n/a".to_string(),
    }
}

/// Renders the report as an aligned text table with a mean row.
pub fn render_table(report: &EvalReport) -> String {
    let mut rows: Vec<[String; 6]> = Vec::new();
    rows.push([
        "case".into(),
        "m".into(),
        "R2 %".into(),
        "Pearson %".into(),
        "RMSE".into(),
        "NRMSE".into(),
    ]);
    for c in &report.cases {
        rows.push([
            c.case_id.clone(),
            c.m.to_string(),
            cell(c.r_squared_pct, 2),
            cell(c.pearson_pct, 2),
            cell(c.rmse, 4),
            cell(c.nrmse, 4),
        ]);
    }
    rows.push([
        "mean".into(),
        report.cases.iter().map(|c| c.m).sum::<usize>().to_string(),
        cell(report.mean.r_squared_pct, 2),
        cell(report.mean.pearson_pct, 2),
        cell(report.mean.rmse, 4),
        cell(report.mean.nrmse, 4),
    ]);

    let mut widths = [0usize; 6];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(widths)
            .map(|(cell, w)| format!("{cell:>w$}"))
            .collect();
        out.push_str(&line.join("  "));
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}
