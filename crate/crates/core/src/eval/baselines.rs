//! Reference imputers that read only `x` and `m` of a window.

use crate::data::IncompleteWindow;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn means(w: &IncompleteWindow) -> Result<(Vec<Option<Vec<f64>>>, Vec<f64>)> {
    let (n, width, c) = (w.n_nodes(), w.width(), w.n_features());
    let (x, m) = (w.x.data(), w.m.data());
    let mut total = vec![0.0; c];
    let mut total_count = 0usize;
    let mut per_node = Vec::with_capacity(n);
    for i in 0..n {
        let mut sum = vec![0.0; c];
        let mut count = 0usize;
        for t in 0..width {
            if m[i * width + t] != 0.0 {
                count += 1;
                for f in 0..c {
                    sum[f] += x[(i * width + t) * c + f];
                }
            }
        }
        for f in 0..c {
            total[f] += sum[f];
        }
        total_count += count;
        per_node.push((count > 0).then(|| sum.iter().map(|s| s / count as f64).collect()));
    }
    if total_count == 0 {
        return Err(Error::Input("window has no observed entries".into()));
    }
    let global = total.iter().map(|s| s / total_count as f64).collect();
    Ok((per_node, global))
}

/// Fills every unobserved position with its node's observed mean over the
/// window, or the window-wide observed mean for a node with none.
pub fn mean_baseline(w: &IncompleteWindow) -> Result<Tensor> {
    let (per_node, global) = means(w)?;
    let (width, c) = (w.width(), w.n_features());
    let mut out = w.x.clone();
    for (i, mean) in per_node.iter().enumerate() {
        let fill = mean.as_ref().unwrap_or(&global);
        for t in 0..width {
            if w.m.data()[i * width + t] == 0.0 {
                let o = (i * width + t) * c;
                out.data_mut()[o..o + c].copy_from_slice(fill);
            }
        }
    }
    Ok(out)
}

/// Pairwise node distances `[N × N]`: root-mean-square difference over the
/// steps (and features) where both nodes are observed; infinite when they
/// share no observed step.
pub fn node_distances(w: &IncompleteWindow) -> Vec<f64> {
    let (n, width, c) = (w.n_nodes(), w.width(), w.n_features());
    let (x, m) = (w.x.data(), w.m.data());
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut sq = 0.0;
            let mut count = 0usize;
            for t in 0..width {
                if m[i * width + t] != 0.0 && m[j * width + t] != 0.0 {
                    for f in 0..c {
                        let e = x[(i * width + t) * c + f] - x[(j * width + t) * c + f];
                        sq += e * e;
                    }
                    count += c;
                }
            }
            let dist = if count == 0 {
                f64::INFINITY
            } else {
                (sq / count as f64).sqrt()
            };
            d[i * n + j] = dist;
            d[j * n + i] = dist;
        }
    }
    d
}

/// Fills each unobserved `(i, t)` with the mean of the `k` nearest nodes
/// (finite distance, ties by index) that are observed at `t`. Falls back to
/// [`mean_baseline`] when no such node exists.
pub fn knn_baseline(w: &IncompleteWindow, k: usize) -> Result<Tensor> {
    let n = w.n_nodes();
    if k == 0 || k >= n {
        return Err(Error::Contract(format!("k = {k} must be in 1..{n}")));
    }
    let fallback = mean_baseline(w)?;
    let dist = node_distances(w);
    let (width, c) = (w.width(), w.n_features());
    let (x, m) = (w.x.data(), w.m.data());
    let mut out = w.x.clone();
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i && dist[i * n + j].is_finite()).collect();
        order.sort_by(|&a, &b| dist[i * n + a].total_cmp(&dist[i * n + b]).then(a.cmp(&b)));
        for t in 0..width {
            if m[i * width + t] != 0.0 {
                continue;
            }
            let chosen: Vec<usize> = order.iter().copied().filter(|&j| m[j * width + t] != 0.0).take(k).collect();
            let o = (i * width + t) * c;
            if chosen.is_empty() {
                out.data_mut()[o..o + c].copy_from_slice(&fallback.data()[o..o + c]);
                continue;
            }
            for f in 0..c {
                let s: f64 = chosen.iter().map(|&j| x[(j * width + t) * c + f]).sum();
                out.data_mut()[o + f] = s / chosen.len() as f64;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Window from rows of `Option`s; `None` is unobserved (and not scored).
    fn win(rows: &[&[Option<f64>]]) -> IncompleteWindow {
        let (n, w) = (rows.len(), rows[0].len());
        let mut x = Tensor::zeros([n, w, 1]);
        let mut m = Tensor::zeros([n, w]);
        for (i, row) in rows.iter().enumerate() {
            for (t, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    x.set(&[i, t, 0], *v);
                    m.set(&[i, t], 1.0);
                }
            }
        }
        IncompleteWindow::new(x.clone(), m, Tensor::zeros([n, w]), x, 0).unwrap()
    }

    #[test]
    fn node_mean_fills_gaps() {
        let w = win(&[&[Some(2.0), Some(4.0), None]]);
        assert_eq!(mean_baseline(&w).unwrap().data(), &[2.0, 4.0, 3.0]);
    }

    #[test]
    fn empty_node_uses_global_mean() {
        let w = win(&[&[Some(6.0), Some(8.0)], &[None, None]]);
        assert_eq!(mean_baseline(&w).unwrap().data(), &[6.0, 8.0, 7.0, 7.0]);
        let empty = win(&[&[None, None]]);
        assert!(matches!(mean_baseline(&empty), Err(Error::Input(_))));
    }

    #[test]
    fn identical_neighbour_is_copied() {
        let w = win(&[&[Some(1.0), None, Some(3.0)], &[Some(1.0), Some(5.0), Some(3.0)], &[Some(9.0), Some(9.0), Some(0.0)]]);
        let out = knn_baseline(&w, 1).unwrap();
        assert_eq!(out.at(&[0, 1, 0]), 5.0);
    }

    #[test]
    fn k_must_be_below_node_count() {
        let w = win(&[&[Some(1.0)], &[Some(2.0)]]);
        assert!(matches!(knn_baseline(&w, 2), Err(Error::Contract(_))));
    }
}
