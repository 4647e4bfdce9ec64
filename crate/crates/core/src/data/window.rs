use super::{HoldoutMask, SeriesMatrix};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One training or evaluation sample cut from a series.
///
/// * `x`: `[N, W, C]` features; zero wherever `m = 0`.
/// * `m`: `[N, W]` observation mask (1 = visible to the model).
/// * `eval_mask`: `[N, W]`, 1 where a real value was hidden for scoring.
/// * `ground_truth`: `[N, W, C]`, the raw value wherever one exists.
#[derive(Clone, Debug, PartialEq)]
pub struct IncompleteWindow {
    pub x: Tensor,
    pub m: Tensor,
    pub eval_mask: Tensor,
    pub ground_truth: Tensor,
    pub window_start: usize,
}

impl IncompleteWindow {
    /// Assembles a window and checks the mask invariants.
    pub fn new(x: Tensor, m: Tensor, eval_mask: Tensor, ground_truth: Tensor, window_start: usize) -> Result<Self> {
        let xs = x.shape();
        if xs.len() != 3 || m.shape() != &xs[..2] || eval_mask.shape() != &xs[..2] || ground_truth.shape() != xs {
            return Err(Error::Dimension(format!(
                "window parts disagree: x {:?}, m {:?}, eval {:?}, truth {:?}",
                xs,
                m.shape(),
                eval_mask.shape(),
                ground_truth.shape()
            )));
        }
        let binary = |t: &Tensor| t.data().iter().all(|v| *v == 0.0 || *v == 1.0);
        if !binary(&m) || !binary(&eval_mask) {
            return Err(Error::Input("masks must be 0/1".into()));
        }
        if m.data().iter().zip(eval_mask.data()).any(|(a, b)| a * b != 0.0) {
            return Err(Error::Input("a position is both observed and held out".into()));
        }
        Ok(IncompleteWindow {
            x,
            m,
            eval_mask,
            ground_truth,
            window_start,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn n_features(&self) -> usize {
        self.x.shape()[2]
    }

    pub fn held_out_count(&self) -> usize {
        self.eval_mask.data().iter().filter(|v| **v != 0.0).count()
    }

    pub fn observed_count(&self) -> usize {
        self.m.data().iter().filter(|v| **v != 0.0).count()
    }
}

/// Cuts `width`-step windows every `stride` steps; a trailing partial window is
/// dropped. Held-out positions come from the dataset-level `mask`.
pub fn window(series: &SeriesMatrix, mask: &HoldoutMask, width: usize, stride: usize) -> Result<Vec<IncompleteWindow>> {
    if stride == 0 || width == 0 {
        return Err(Error::Contract("window width and stride must be positive".into()));
    }
    if width > series.n_steps() {
        return Err(Error::Input(format!(
            "window width {width} exceeds the {} available steps",
            series.n_steps()
        )));
    }
    mask.check_matches(series)?;
    let starts = (0..=series.n_steps() - width).step_by(stride);
    starts.map(|s| cut(series, mask, s, width)).collect()
}

/// The window starting at `start`.
pub(crate) fn cut(series: &SeriesMatrix, mask: &HoldoutMask, start: usize, width: usize) -> Result<IncompleteWindow> {
    let (n, c) = (series.n_nodes(), series.n_features());
    let mut x = Tensor::zeros([n, width, c]);
    let mut truth = Tensor::zeros([n, width, c]);
    let mut m = Tensor::zeros([n, width]);
    let mut e = Tensor::zeros([n, width]);
    for node in 0..n {
        for w in 0..width {
            let t = start + w;
            if !series.is_observed(node, t) {
                continue;
            }
            for f in 0..c {
                truth.set(&[node, w, f], series.get(node, t, f));
            }
            if mask.is_held_out(node, t) {
                e.set(&[node, w], 1.0);
            } else {
                m.set(&[node, w], 1.0);
                for f in 0..c {
                    x.set(&[node, w, f], series.get(node, t, f));
                }
            }
        }
    }
    IncompleteWindow::new(x, m, e, truth, start)
}

/// Chronological train / validation / test partition.
#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub train: Vec<IncompleteWindow>,
    pub valid: Vec<IncompleteWindow>,
    pub test: Vec<IncompleteWindow>,
}

/// Contiguous split; validation and test get `floor(n · fraction)` windows and
/// the remainder goes to training.
pub fn split(windows: Vec<IncompleteWindow>, fractions: [f64; 3]) -> Result<Splits> {
    if fractions.iter().any(|f| *f < 0.0 || !f.is_finite()) {
        return Err(Error::Contract(format!("negative split fraction in {fractions:?}")));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("split fractions {fractions:?} do not sum to 1")));
    }
    let n = windows.len();
    let take = |f: f64| ((n as f64 * f) + 1e-9).floor() as usize;
    let n_valid = take(fractions[1]);
    let n_test = take(fractions[2]);
    let n_train = n - n_valid - n_test;
    let mut it = windows.into_iter();
    let train = it.by_ref().take(n_train).collect();
    let valid = it.by_ref().take(n_valid).collect();
    let test = it.collect();
    Ok(Splits { train, valid, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(steps: usize) -> SeriesMatrix {
        let vals = (0..2 * steps).map(|v| v as f64 + 1.0).collect();
        SeriesMatrix::new(2, steps, 1, vals).unwrap()
    }

    #[test]
    fn window_counts() {
        for (steps, expect) in [(24, vec![0, 12]), (25, vec![0, 12]), (12, vec![0])] {
            let s = series(steps);
            let w = window(&s, &HoldoutMask::empty(2, steps), 12, 12).unwrap();
            let starts: Vec<_> = w.iter().map(|w| w.window_start).collect();
            assert_eq!(starts, expect);
        }
        let s = series(5);
        assert!(matches!(
            window(&s, &HoldoutMask::empty(2, 5), 12, 12),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn native_gaps_are_neither_observed_nor_scored() {
        let mut s = series(4);
        s.set(1, 2, 0, f64::NAN);
        let mask = HoldoutMask::draw(&s, 0.5, 1).unwrap();
        let w = &window(&s, &mask, 4, 4).unwrap()[0];
        assert_eq!(w.m.at(&[1, 2]), 0.0);
        assert_eq!(w.eval_mask.at(&[1, 2]), 0.0);
        assert_eq!(w.held_out_count(), 3);
        assert_eq!(w.observed_count(), 4);
        for i in 0..8 {
            let (node, t) = (i / 4, i % 4);
            if w.m.at(&[node, t]) == 0.0 {
                assert_eq!(w.x.at(&[node, t, 0]), 0.0);
            }
        }
    }

    #[test]
    fn split_counts() {
        let s = series(10);
        let ws = window(&s, &HoldoutMask::empty(2, 10), 1, 1).unwrap();
        let sp = split(ws.clone(), [0.7, 0.2, 0.1]).unwrap();
        assert_eq!((sp.train.len(), sp.valid.len(), sp.test.len()), (7, 2, 1));
        assert_eq!(sp.valid[0].window_start, 7);
        let sp = split(ws.clone(), [0.6, 0.2, 0.2]).unwrap();
        assert_eq!((sp.train.len(), sp.valid.len(), sp.test.len()), (6, 2, 2));
        let sp = split(ws[..1].to_vec(), [1.0, 0.0, 0.0]).unwrap();
        assert_eq!((sp.train.len(), sp.valid.len(), sp.test.len()), (1, 0, 0));
        assert!(split(ws.clone(), [1.2, -0.2, 0.0]).is_err());
        assert!(split(ws, [0.5, 0.2, 0.2]).is_err());
    }
}
