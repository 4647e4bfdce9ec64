use serde::{Deserialize, Serialize};

use super::IncompleteWindow;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MIN_STD: f64 = 1e-8;

/// Per-feature z-score fitted on observed training entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(n_features: usize) -> Self {
        Normalizer {
            mean: vec![0.0; n_features],
            std: vec![1.0; n_features],
        }
    }

    /// Statistics over every `m = 1` entry of `windows`.
    pub fn fit(windows: &[IncompleteWindow]) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| Error::EmptySelection("no windows to fit a normalizer on".into()))?;
        let c = first.n_features();
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut count = 0usize;
        for w in windows {
            let m = w.m.data();
            let x = w.x.data();
            for (pos, &mv) in m.iter().enumerate() {
                if mv == 0.0 {
                    continue;
                }
                count += 1;
                for f in 0..c {
                    let v = x[pos * c + f];
                    sum[f] += v;
                    sq[f] += v * v;
                }
            }
        }
        if count == 0 {
            return Err(Error::EmptySelection("no observed entries in the training split".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n - m * m).max(0.0).sqrt().max(MIN_STD))
            .collect();
        Ok(Normalizer { mean, std })
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn forward(&self, v: f64, feature: usize) -> f64 {
        (v - self.mean[feature]) / self.std[feature]
    }

    pub fn inverse(&self, v: f64, feature: usize) -> f64 {
        v * self.std[feature] + self.mean[feature]
    }

    fn map(&self, t: &Tensor, mask: &Tensor, f: impl Fn(f64, usize) -> f64) -> Tensor {
        let c = self.n_features();
        let mut out = t.clone();
        for (pos, &mv) in mask.data().iter().enumerate() {
            if mv == 0.0 {
                continue;
            }
            for k in 0..c {
                let i = pos * c + k;
                out.data_mut()[i] = f(t.data()[i], k);
            }
        }
        out
    }

    /// Normalizes observed features and held-out ground truth; every other
    /// entry is left at zero.
    pub fn normalize_window(&self, w: &IncompleteWindow) -> IncompleteWindow {
        let x = self.map(&w.x, &w.m, |v, k| self.forward(v, k));
        let mut truth = Tensor::zeros(w.ground_truth.shape().to_vec());
        let scored = self.map(&w.ground_truth, &w.eval_mask, |v, k| self.forward(v, k));
        for (pos, &e) in w.eval_mask.data().iter().enumerate() {
            if e != 0.0 {
                let c = self.n_features();
                truth.data_mut()[pos * c..(pos + 1) * c]
                    .copy_from_slice(&scored.data()[pos * c..(pos + 1) * c]);
            }
        }
        IncompleteWindow {
            x,
            m: w.m.clone(),
            eval_mask: w.eval_mask.clone(),
            ground_truth: truth,
            window_start: w.window_start,
        }
    }

    /// Maps a `[.., C]` tensor of normalized values back to data units.
    pub fn denormalize(&self, t: &Tensor) -> Tensor {
        let c = self.n_features();
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = self.inverse(*v, i % c);
        }
        out
    }
}
