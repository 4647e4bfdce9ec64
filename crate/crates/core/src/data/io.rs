use std::io::Write;
use std::path::Path;

use super::SeriesMatrix;
use crate::error::{Error, Result};

fn parse_column_name(name: &str) -> Option<(usize, usize)> {
    let rest = name.trim().strip_prefix("node")?;
    let (node, feat) = rest.split_once("_f")?;
    Some((node.parse().ok()?, feat.parse().ok()?))
}

pub fn load_series_csv(path: &Path) -> Result<SeriesMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_series_csv(&text)
}

/// Parses the series format: `#` comment lines, a `node<i>_f<j>` header, one
/// row per time step. An empty cell or `NaN` marks a missing reading.
pub fn parse_series_csv(text: &str) -> Result<SeriesMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Input(format!("series header: {e}")))?
        .clone();
    let columns = header
        .iter()
        .map(|h| {
            parse_column_name(h)
                .ok_or_else(|| Error::Input(format!("column `{h}` is not of the form node<i>_f<j>")))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_nodes = columns.iter().map(|c| c.0 + 1).max().unwrap_or(0);
    let n_features = columns.iter().map(|c| c.1 + 1).max().unwrap_or(0);
    if n_nodes * n_features != columns.len() {
        return Err(Error::Input(format!(
            "header has {} columns but names imply {n_nodes} nodes x {n_features} features",
            columns.len()
        )));
    }
    let mut seen = vec![false; n_nodes * n_features];
    for &(n, f) in &columns {
        if std::mem::replace(&mut seen[n * n_features + f], true) {
            return Err(Error::Input(format!("column node{n}_f{f} appears twice")));
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Input(format!("series row {}: {e}", r + 1)))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(col, cell)| {
                if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                    return Ok(f64::NAN);
                }
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::Input(format!(
                        "series row {} column {}: `{cell}` is not a finite number",
                        r + 1,
                        col + 1
                    ))),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let n_steps = rows.len();
    let mut values = vec![f64::NAN; n_nodes * n_steps * n_features];
    for (t, row) in rows.iter().enumerate() {
        for (&(node, f), &v) in columns.iter().zip(row) {
            values[(node * n_steps + t) * n_features + f] = v;
        }
    }
    SeriesMatrix::new(n_nodes, n_steps, n_features, values)
}

/// Writes the series format. Missing readings become empty cells.
pub fn write_series_csv(series: &SeriesMatrix, comment: Option<&str>, mut out: impl Write) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    let (n, steps, c) = (series.n_nodes(), series.n_steps(), series.n_features());
    let header: Vec<String> = (0..n)
        .flat_map(|i| (0..c).map(move |f| format!("node{i}_f{f}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for t in 0..steps {
        line.clear();
        for i in 0..n {
            for f in 0..c {
                if i + f > 0 {
                    line.push(',');
                }
                let v = series.get(i, t, f);
                if !v.is_nan() {
                    line.push_str(&v.to_string());
                }
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
