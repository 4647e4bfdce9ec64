use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{EvalReport, ReportRow};
use super::{knn_baseline, mean_baseline, ErrorTally};
use crate::data::{cut, split, window, HoldoutMask, IncompleteWindow, Normalizer, SeriesMatrix};
use crate::error::{Error, Result};
use crate::graph::TrafficGraph;
use crate::model::{Ablation, Dims, MagiNet, ModelConfig};
use crate::train::{train, TrainConfig, TrainOutcome};

/// A named series and the graph over its nodes.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub series: SeriesMatrix,
    pub graph: TrafficGraph,
}

impl Dataset {
    pub fn new(name: impl Into<String>, series: SeriesMatrix, graph: TrafficGraph) -> Result<Self> {
        if series.n_nodes() != graph.n_nodes() {
            return Err(Error::Input(format!(
                "series has {} nodes but the graph has {}",
                series.n_nodes(),
                graph.n_nodes()
            )));
        }
        Ok(Dataset {
            name: name.into(),
            series,
            graph,
        })
    }
}

/// Windowing, splitting, model and optimizer settings for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub window: usize,
    pub stride: usize,
    /// Train, validation and test fractions of the windows, in time order.
    pub fractions: [f64; 3],
    /// Neighbours used by the KNN baseline.
    pub knn_k: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            window: 12,
            stride: 12,
            fractions: [0.7, 0.1, 0.2],
            knn_k: 3,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// What produces the imputations scored in a report row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Mean,
    Knn,
    MagiNet,
    /// The network with one component switched off.
    Variant(Ablation),
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Mean => "mean".into(),
            Method::Knn => "knn".into(),
            Method::MagiNet => "maginet".into(),
            Method::Variant(a) => a.label().into(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(Method::Mean),
            "knn" => Ok(Method::Knn),
            "maginet" => Ok(Method::MagiNet),
            other => other
                .parse::<Ablation>()
                .map(Method::Variant)
                .map_err(|_| Error::Input(format!("unknown method `{s}` (mean|knn|maginet|<ablation>)"))),
        }
    }
}

/// Anything that can fill a window.
#[derive(Clone, Copy, Debug)]
pub enum Imputer<'a> {
    Mean,
    Knn(usize),
    Model {
        model: &'a MagiNet,
        normalizer: &'a Normalizer,
    },
}

impl Imputer<'_> {
    /// Full `[N, W, C]` reconstruction in data units.
    pub fn impute_window(&self, w: &IncompleteWindow) -> Result<crate::tensor::Tensor> {
        match self {
            Imputer::Mean => mean_baseline(w),
            Imputer::Knn(k) => knn_baseline(w, *k),
            Imputer::Model { model, normalizer } => {
                let z = normalizer.normalize_window(w);
                Ok(normalizer.denormalize(&model.predict(&z.x, &z.m)?))
            }
        }
    }

    /// Pooled error over the held-out positions of `windows`.
    pub fn evaluate(&self, windows: &[IncompleteWindow]) -> Result<ErrorTally> {
        let parts = windows
            .par_iter()
            .map(|w| {
                let mut t = ErrorTally::default();
                t.add(&self.impute_window(w)?, &w.ground_truth, &w.eval_mask)?;
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.iter().fold(ErrorTally::default(), |a, b| a.merge(b)))
    }
}

/// Fills every position the model cannot see (held out by `mask` or missing
/// in `series`) and passes observed readings through unchanged.
///
/// Windows of `width` steps tile the series from the start; when they leave
/// a remainder one more window is aligned to the end.
pub fn impute_series(
    imputer: &Imputer<'_>,
    series: &SeriesMatrix,
    mask: &HoldoutMask,
    width: usize,
) -> Result<SeriesMatrix> {
    if width == 0 || width > series.n_steps() {
        return Err(Error::Input(format!(
            "window width {width} does not fit {} steps",
            series.n_steps()
        )));
    }
    mask.check_matches(series)?;
    let steps = series.n_steps();
    let mut starts: Vec<usize> = (0..=steps - width).step_by(width).collect();
    if starts.last().is_some_and(|s| s + width < steps) {
        starts.push(steps - width);
    }
    let filled = starts
        .par_iter()
        .map(|&s| {
            let w = cut(series, mask, s, width)?;
            Ok((w.clone(), imputer.impute_window(&w)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = series.clone();
    let c = series.n_features();
    for (w, pred) in filled {
        for node in 0..series.n_nodes() {
            for t in 0..width {
                if w.m.at(&[node, t]) != 0.0 {
                    continue;
                }
                for f in 0..c {
                    out.set(node, w.window_start + t, f, pred.at(&[node, t, f]));
                }
            }
        }
    }
    Ok(out)
}

/// Mask seed for one missing ratio of a sweep.
pub fn ratio_seed(seed: u64, ratio: f64) -> u64 {
    // SplitMix64 finalizer.
    let mut z = ratio.to_bits().wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    seed ^ (z ^ (z >> 31))
}

/// Trains one network variant and returns it with its normalizer.
fn fit_model(
    dataset: &Dataset,
    config: ModelConfig,
    exp: &Experiment,
    train_w: &[IncompleteWindow],
    valid_w: &[IncompleteWindow],
) -> Result<(TrainOutcome, Normalizer)> {
    let normalizer = Normalizer::fit(train_w)?;
    let dims = Dims {
        n_nodes: dataset.series.n_nodes(),
        window: exp.window,
        n_features: dataset.series.n_features(),
    };
    let model = MagiNet::new(config, dims, &dataset.graph, exp.train.seed)?;
    let outcome = train(&model, train_w, valid_w, &normalizer, &exp.train)?;
    Ok((outcome, normalizer))
}

/// Scores one method on the test windows of `dataset` under `mask`.
pub fn run_method(
    dataset: &Dataset,
    mask: &HoldoutMask,
    method: Method,
    exp: &Experiment,
) -> Result<(ReportRow, Option<TrainOutcome>)> {
    let started = Instant::now();
    let windows = window(&dataset.series, mask, exp.window, exp.stride)?;
    let splits = split(windows, exp.fractions)?;
    if splits.test.is_empty() {
        return Err(Error::EmptySelection("test split holds no windows".into()));
    }
    let (tally, outcome) = match method {
        Method::Mean => (Imputer::Mean.evaluate(&splits.test)?, None),
        Method::Knn => (Imputer::Knn(exp.knn_k).evaluate(&splits.test)?, None),
        Method::MagiNet | Method::Variant(_) => {
            let config = match method {
                Method::Variant(a) => exp.model.with_ablation(a),
                _ => exp.model.clone(),
            };
            let (outcome, normalizer) = fit_model(dataset, config, exp, &splits.train, &splits.valid)?;
            let imputer = Imputer::Model {
                model: &outcome.model,
                normalizer: &normalizer,
            };
            (imputer.evaluate(&splits.test)?, Some(outcome))
        }
    };
    let row = ReportRow {
        method: method.name(),
        dataset: dataset.name.clone(),
        ratio: mask.ratio,
        seed: mask.seed,
        rmse: tally.rmse()?,
        mape: tally.mape().unwrap_or(f64::NAN),
        runtime_s: started.elapsed().as_secs_f64(),
    };
    Ok((row, outcome))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))
}

/// Every method at every missing ratio, each ratio with its own mask drawn
/// from [`ratio_seed`]. Cells run on up to `jobs` threads; row order is
/// ratio-major regardless.
pub fn sensitivity_sweep(
    dataset: &Dataset,
    ratios: &[f64],
    methods: &[Method],
    exp: &Experiment,
    seed: u64,
    jobs: usize,
) -> Result<EvalReport> {
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(Error::Contract(format!("missing ratio {r} is outside (0, 1)")));
    }
    let masks = ratios
        .iter()
        .map(|&r| HoldoutMask::draw(&dataset.series, r, ratio_seed(seed, r)))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, Method)> = (0..ratios.len())
        .flat_map(|i| methods.iter().map(move |m| (i, *m)))
        .collect();
    let rows = pool(jobs)?.install(|| {
        cells
            .par_iter()
            .map(|&(i, m)| run_method(dataset, &masks[i], m, exp).map(|(row, _)| row))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(EvalReport { rows })
}

/// The full network and each requested variant, trained under the same
/// mask, seed and budget. The full model is always the first row.
pub fn ablation_run(
    dataset: &Dataset,
    mask: &HoldoutMask,
    variants: &[Ablation],
    exp: &Experiment,
    jobs: usize,
) -> Result<EvalReport> {
    let methods: Vec<Method> = std::iter::once(Method::MagiNet)
        .chain(variants.iter().map(|a| Method::Variant(*a)))
        .collect();
    let rows = pool(jobs)?.install(|| {
        methods
            .par_iter()
            .map(|m| run_method(dataset, mask, *m, exp).map(|(row, _)| row))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(EvalReport { rows })
}
