use std::io::Write;

use crate::data::{HoldoutMask, SeriesMatrix};

pub const REPORT_HEADER: &str = "method,dataset,ratio,seed,rmse,mape,runtime_s";

/// One scored run.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub dataset: String,
    pub ratio: f64,
    /// Seed of the mask the row was scored on.
    pub seed: u64,
    pub rmse: f64,
    /// Percent.
    pub mape: f64,
    /// Wall-clock seconds; the only column that varies between identical runs.
    pub runtime_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    /// Rows with `runtime_s` zeroed, for comparing runs.
    pub fn without_runtime(&self) -> Vec<ReportRow> {
        self.rows
            .iter()
            .map(|r| ReportRow {
                runtime_s: 0.0,
                ..r.clone()
            })
            .collect()
    }

    pub fn find(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn write_csv(&self, comment: Option<&str>, mut out: impl Write) -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "{REPORT_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{:.3}",
                csv_field(&r.method),
                csv_field(&r.dataset),
                r.ratio,
                r.seed,
                r.rmse,
                r.mape,
                r.runtime_s
            )?;
        }
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Wide table for plotting RMSE against the missing ratio: one row per
/// ratio, one column per method, in first-seen order.
pub fn write_sweep_plot(report: &EvalReport, comment: Option<&str>, mut out: impl Write) -> std::io::Result<()> {
    let mut methods: Vec<&str> = Vec::new();
    let mut ratios: Vec<f64> = Vec::new();
    for r in &report.rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
        if !ratios.contains(&r.ratio) {
            ratios.push(r.ratio);
        }
    }
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    let header: Vec<String> = methods.iter().map(|m| csv_field(&format!("rmse_{m}"))).collect();
    writeln!(out, "ratio,{}", header.join(","))?;
    for ratio in ratios {
        let cells: Vec<String> = methods
            .iter()
            .map(|m| {
                report
                    .rows
                    .iter()
                    .find(|r| r.ratio == ratio && r.method == *m)
                    .map(|r| r.rmse.to_string())
                    .unwrap_or_default()
            })
            .collect();
        writeln!(out, "{ratio},{}", cells.join(","))?;
    }
    Ok(())
}

/// One time step of one node and feature.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    /// NaN where the series has no reading.
    pub ground_truth: f64,
    pub imputed: f64,
    /// Whether the model could see the reading.
    pub observed: bool,
}

/// Ground truth against imputation for `node`, feature `feature`.
pub fn imputation_trace(
    truth: &SeriesMatrix,
    mask: &HoldoutMask,
    imputed: &SeriesMatrix,
    node: usize,
    feature: usize,
) -> Vec<TraceRow> {
    (0..truth.n_steps())
        .map(|t| TraceRow {
            t,
            ground_truth: truth.get(node, t, feature),
            imputed: imputed.get(node, t, feature),
            observed: truth.is_observed(node, t) && !mask.is_held_out(node, t),
        })
        .collect()
}

/// Writes `t,ground_truth,imputed,observed`; a missing reading is an empty cell.
pub fn write_trace(rows: &[TraceRow], comment: Option<&str>, mut out: impl Write) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "t,ground_truth,imputed,observed")?;
    let cell = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
    for r in rows {
        writeln!(out, "{},{},{},{}", r.t, cell(r.ground_truth), cell(r.imputed), r.observed as u8)?;
    }
    Ok(())
}
