//! Error metrics, simple baselines, and experiment drivers.

mod baselines;
mod experiment;
mod report;

pub use baselines::{knn_baseline, mean_baseline, node_distances};
pub use experiment::{
    ablation_run, impute_series, ratio_seed, run_method, sensitivity_sweep, Dataset, Experiment, Imputer, Method,
};
pub use report::{imputation_trace, write_sweep_plot, write_trace, EvalReport, ReportRow, TraceRow};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ground-truth magnitudes below this are left out of MAPE.
pub const MAPE_FLOOR: f64 = 1e-6;

/// Running sums for RMSE and MAPE over selected entries.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorTally {
    sq_sum: f64,
    count: usize,
    pct_sum: f64,
    pct_count: usize,
}

impl ErrorTally {
    /// Adds the entries of `yhat` and `y` (`[.., C]`) selected by `mask`,
    /// which is either the same shape or lacks the trailing feature axis.
    pub fn add(&mut self, yhat: &Tensor, y: &Tensor, mask: &Tensor) -> Result<()> {
        if yhat.shape() != y.shape() {
            return Err(Error::Dimension(format!(
                "metrics: prediction {:?} and truth {:?} differ",
                yhat.shape(),
                y.shape()
            )));
        }
        let per = if mask.shape() == y.shape() {
            1
        } else if mask.shape().len() + 1 == y.shape().len() && y.shape().starts_with(mask.shape()) {
            *y.shape().last().unwrap_or(&1)
        } else {
            return Err(Error::Dimension(format!(
                "metrics: mask {:?} does not cover {:?}",
                mask.shape(),
                y.shape()
            )));
        };
        for (i, (&p, &t)) in yhat.data().iter().zip(y.data()).enumerate() {
            if mask.data()[i / per] == 0.0 {
                continue;
            }
            let e = p - t;
            self.sq_sum += e * e;
            self.count += 1;
            if t.abs() >= MAPE_FLOOR {
                self.pct_sum += (e / t).abs();
                self.pct_count += 1;
            }
        }
        Ok(())
    }

    pub fn merge(mut self, other: &ErrorTally) -> Self {
        self.sq_sum += other.sq_sum;
        self.count += other.count;
        self.pct_sum += other.pct_sum;
        self.pct_count += other.pct_count;
        self
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn rmse(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::EmptySelection("no entries selected for RMSE".into()));
        }
        Ok((self.sq_sum / self.count as f64).sqrt())
    }

    /// Mean absolute percentage error, in percent.
    pub fn mape(&self) -> Result<f64> {
        if self.pct_count == 0 {
            return Err(Error::EmptySelection("no entries selected for MAPE".into()));
        }
        Ok(100.0 * self.pct_sum / self.pct_count as f64)
    }
}

/// Root mean square error over the entries selected by `mask`.
pub fn rmse(yhat: &Tensor, y: &Tensor, mask: &Tensor) -> Result<f64> {
    let mut t = ErrorTally::default();
    t.add(yhat, y, mask)?;
    t.rmse()
}

/// Mean absolute percentage error (percent) over the entries selected by
/// `mask` whose ground truth is at least [`MAPE_FLOOR`] in magnitude.
pub fn mape(yhat: &Tensor, y: &Tensor, mask: &Tensor) -> Result<f64> {
    let mut t = ErrorTally::default();
    t.add(yhat, y, mask)?;
    t.mape()
}
