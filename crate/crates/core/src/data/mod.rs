//! Series ingestion, missing-value simulation, windowing and normalization.

mod io;
mod mask;
mod normalize;
mod synthetic;
mod window;

pub use io::{load_series_csv, parse_series_csv, write_series_csv};
pub use mask::{load_mask, mcar_mask, parse_mask, write_mask, HoldoutMask};
pub use normalize::Normalizer;
pub use synthetic::{generate_synthetic, synthetic_graph, SyntheticSpec};
pub use window::{split, window, IncompleteWindow, Splits};
pub(crate) use window::cut;

use crate::error::{Error, Result};

/// `N × steps × C` readings; NaN marks a natively missing entry.
#[derive(Clone, Debug)]
pub struct SeriesMatrix {
    n_nodes: usize,
    n_steps: usize,
    n_features: usize,
    values: Vec<f64>,
}

impl PartialEq for SeriesMatrix {
    /// Bitwise comparison so that NaN sentinels compare equal.
    fn eq(&self, other: &Self) -> bool {
        self.n_nodes == other.n_nodes
            && self.n_steps == other.n_steps
            && self.n_features == other.n_features
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()))
    }
}

impl SeriesMatrix {
    /// Values are laid out node-major: `values[(node * steps + t) * C + f]`.
    pub fn new(n_nodes: usize, n_steps: usize, n_features: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_nodes * n_steps * n_features {
            return Err(Error::Dimension(format!(
                "series of {n_nodes}x{n_steps}x{n_features} needs {} values, got {}",
                n_nodes * n_steps * n_features,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| v.is_infinite()) {
            return Err(Error::Input(format!("infinite value at flat index {i}")));
        }
        Ok(SeriesMatrix {
            n_nodes,
            n_steps,
            n_features,
            values,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn index(&self, node: usize, step: usize, feature: usize) -> usize {
        (node * self.n_steps + step) * self.n_features + feature
    }

    pub fn get(&self, node: usize, step: usize, feature: usize) -> f64 {
        self.values[self.index(node, step, feature)]
    }

    pub fn set(&mut self, node: usize, step: usize, feature: usize, value: f64) {
        let i = self.index(node, step, feature);
        self.values[i] = value;
    }

    /// A reading counts as observed when none of its features is missing.
    pub fn is_observed(&self, node: usize, step: usize) -> bool {
        (0..self.n_features).all(|f| !self.get(node, step, f).is_nan())
    }

    /// Mean and (population) standard deviation of all non-missing values.
    pub fn summary(&self) -> (f64, f64) {
        let present: Vec<f64> = self.values.iter().copied().filter(|v| !v.is_nan()).collect();
        if present.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let n = present.len() as f64;
        let mean = present.iter().sum::<f64>() / n;
        let var = present.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Relabels nodes: new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        let block = self.n_steps * self.n_features;
        for (new, &old) in perm.iter().enumerate() {
            out.values[new * block..(new + 1) * block]
                .copy_from_slice(&self.values[old * block..(old + 1) * block]);
        }
        out
    }
}
