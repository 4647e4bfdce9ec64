use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SeriesMatrix;
use crate::error::{Error, Result};

/// Exact-count MCAR keep/drop vector: `floor(ratio * n)` zeros placed by a
/// seeded uniform permutation, ones elsewhere.
pub fn mcar_mask(n_entries: usize, ratio: f64, seed: u64) -> Result<Vec<u8>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Contract(format!("missing ratio {ratio} outside [0, 1]")));
    }
    let n_drop = ((ratio * n_entries as f64) + 1e-9).floor() as usize;
    let n_drop = n_drop.min(n_entries);
    let mut order: Vec<usize> = (0..n_entries).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut keep = vec![1u8; n_entries];
    for &i in &order[..n_drop] {
        keep[i] = 0;
    }
    Ok(keep)
}

/// Positions of a series hidden from the model for scoring, drawn once per
/// dataset. Stored node-major over `N × steps`; 1 means held out.
#[derive(Clone, Debug, PartialEq)]
pub struct HoldoutMask {
    pub n_nodes: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub ratio: f64,
    held_out: Vec<u8>,
}

impl HoldoutMask {
    /// Hides `floor(ratio · #observed)` of the natively observed readings.
    pub fn draw(series: &SeriesMatrix, ratio: f64, seed: u64) -> Result<Self> {
        let (n, steps) = (series.n_nodes(), series.n_steps());
        let observed: Vec<usize> = (0..n * steps)
            .filter(|&p| series.is_observed(p / steps, p % steps))
            .collect();
        let keep = mcar_mask(observed.len(), ratio, seed)?;
        let mut held_out = vec![0u8; n * steps];
        for (&pos, &k) in observed.iter().zip(&keep) {
            if k == 0 {
                held_out[pos] = 1;
            }
        }
        Ok(HoldoutMask {
            n_nodes: n,
            n_steps: steps,
            seed,
            ratio,
            held_out,
        })
    }

    /// Nothing held out.
    pub fn empty(n_nodes: usize, n_steps: usize) -> Self {
        HoldoutMask {
            n_nodes,
            n_steps,
            seed: 0,
            ratio: 0.0,
            held_out: vec![0; n_nodes * n_steps],
        }
    }

    pub fn from_parts(n_nodes: usize, n_steps: usize, seed: u64, ratio: f64, held_out: Vec<u8>) -> Result<Self> {
        if held_out.len() != n_nodes * n_steps || held_out.iter().any(|v| *v > 1) {
            return Err(Error::Input(format!(
                "mask must hold {} zero/one entries",
                n_nodes * n_steps
            )));
        }
        Ok(HoldoutMask {
            n_nodes,
            n_steps,
            seed,
            ratio,
            held_out,
        })
    }

    pub fn is_held_out(&self, node: usize, step: usize) -> bool {
        self.held_out[node * self.n_steps + step] == 1
    }

    pub fn count(&self) -> usize {
        self.held_out.iter().map(|v| *v as usize).sum()
    }

    pub fn check_matches(&self, series: &SeriesMatrix) -> Result<()> {
        if self.n_nodes != series.n_nodes() || self.n_steps != series.n_steps() {
            return Err(Error::Input(format!(
                "mask geometry {}x{} does not match series {}x{}",
                self.n_nodes,
                self.n_steps,
                series.n_nodes(),
                series.n_steps()
            )));
        }
        for node in 0..self.n_nodes {
            for t in 0..self.n_steps {
                if self.is_held_out(node, t) && !series.is_observed(node, t) {
                    return Err(Error::Input(format!(
                        "mask holds out node {node} step {t}, which has no value"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        for (new, &old) in perm.iter().enumerate() {
            out.held_out[new * self.n_steps..(new + 1) * self.n_steps]
                .copy_from_slice(&self.held_out[old * self.n_steps..(old + 1) * self.n_steps]);
        }
        out
    }
}

/// Writes a mask: optional `#` comment, a `seed=..,ratio=..` line, a node
/// header, then one 0/1 row per time step.
pub fn write_mask(mask: &HoldoutMask, comment: Option<&str>, mut out: impl Write) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "seed={},ratio={}", mask.seed, mask.ratio)?;
    let header: Vec<String> = (0..mask.n_nodes).map(|i| format!("node{i}")).collect();
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for t in 0..mask.n_steps {
        line.clear();
        for node in 0..mask.n_nodes {
            if node > 0 {
                line.push(',');
            }
            line.push(if mask.is_held_out(node, t) { '1' } else { '0' });
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<HoldoutMask> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mask(&text)
}

pub fn parse_mask(text: &str) -> Result<HoldoutMask> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (ln, meta) = lines
        .next()
        .ok_or_else(|| Error::Input("mask file is empty".into()))?;
    let mut seed = None;
    let mut ratio = None;
    for kv in meta.split(',') {
        match kv.trim().split_once('=') {
            Some(("seed", v)) => seed = v.parse::<u64>().ok(),
            Some(("ratio", v)) => ratio = v.parse::<f64>().ok(),
            _ => {}
        }
    }
    let (Some(seed), Some(ratio)) = (seed, ratio) else {
        return Err(Error::Input(format!(
            "line {}: expected `seed=<int>,ratio=<float>`, found `{meta}`",
            ln + 1
        )));
    };
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Input("mask file has no node header".into()))?;
    let n_nodes = header.split(',').count();
    let mut rows: Vec<Vec<u8>> = Vec::new();
    for (ln, line) in lines {
        let row = line
            .split(',')
            .enumerate()
            .map(|(col, cell)| match cell.trim() {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(Error::Input(format!(
                    "line {} column {}: expected 0 or 1, found `{other}`",
                    ln + 1,
                    col + 1
                ))),
            })
            .collect::<Result<Vec<u8>>>()?;
        if row.len() != n_nodes {
            return Err(Error::Input(format!(
                "line {}: {} cells, header declares {n_nodes} nodes",
                ln + 1,
                row.len()
            )));
        }
        rows.push(row);
    }
    let n_steps = rows.len();
    let mut held_out = vec![0u8; n_nodes * n_steps];
    for (t, row) in rows.iter().enumerate() {
        for (node, &v) in row.iter().enumerate() {
            held_out[node * n_steps + t] = v;
        }
    }
    HoldoutMask::from_parts(n_nodes, n_steps, seed, ratio, held_out)
}
