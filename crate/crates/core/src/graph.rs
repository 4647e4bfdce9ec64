//! Traffic graph, scaled Laplacian and Chebyshev polynomial basis.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Power-iteration settings for the largest Laplacian eigenvalue.
pub const POWER_TOL: f64 = 1e-9;
pub const POWER_MAX_ITERS: usize = 10_000;
/// Below this estimate the graph is treated as edgeless and `λ_max := 2`.
pub const EDGELESS_LAMBDA: f64 = 1e-12;

/// Undirected weighted graph over `n` sensors.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficGraph {
    n_nodes: usize,
    adjacency: Vec<f64>,
    degree: Vec<f64>,
}

impl TrafficGraph {
    /// Builds a graph from a dense row-major `n×n` adjacency.
    ///
    /// Entries must be finite and nonnegative; the diagonal must be zero.
    pub fn from_dense(n_nodes: usize, adjacency: Vec<f64>) -> Result<Self> {
        if adjacency.len() != n_nodes * n_nodes {
            return Err(Error::Dimension(format!(
                "adjacency has {} entries, expected {n_nodes}x{n_nodes}",
                adjacency.len()
            )));
        }
        for i in 0..n_nodes {
            for j in 0..n_nodes {
                let a = adjacency[i * n_nodes + j];
                if !a.is_finite() || a < 0.0 {
                    return Err(Error::Input(format!("adjacency[{i}][{j}] = {a}")));
                }
                if i == j && a != 0.0 {
                    return Err(Error::Input(format!("self-loop on node {i}")));
                }
            }
        }
        let degree = (0..n_nodes)
            .map(|i| adjacency[i * n_nodes..(i + 1) * n_nodes].iter().sum())
            .collect();
        Ok(TrafficGraph {
            n_nodes,
            adjacency,
            degree,
        })
    }

    pub fn edgeless(n_nodes: usize) -> Self {
        Self::from_dense(n_nodes, vec![0.0; n_nodes * n_nodes]).expect("valid")
    }

    /// Symmetric graph from `(u, v, w)` triples.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut a = vec![0.0; n_nodes * n_nodes];
        for &(u, v, w) in edges {
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::Input(format!("edge ({u},{v}) outside {n_nodes} nodes")));
            }
            if u != v {
                a[u * n_nodes + v] = w;
                a[v * n_nodes + u] = w;
            }
        }
        Self::from_dense(n_nodes, a)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn adjacency(&self) -> &[f64] {
        &self.adjacency
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.n_nodes + j]
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn n_edges(&self) -> usize {
        let n = self.n_nodes;
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.weight(i, j) > 0.0 || self.weight(j, i) > 0.0)
            .count()
    }

    /// Combinatorial Laplacian `D - A`, row-major.
    pub fn laplacian(&self) -> Vec<f64> {
        let n = self.n_nodes;
        let mut l: Vec<f64> = self.adjacency.iter().map(|a| -a).collect();
        for i in 0..n {
            l[i * n + i] = self.degree[i];
        }
        l
    }

    /// Relabels nodes: new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_nodes;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = self.weight(perm[i], perm[j]);
            }
        }
        Self::from_dense(n, a)
    }

    /// Reads an edge-list CSV (`src,dst,weight`).
    ///
    /// Edges are symmetrized, self-loops dropped, and a repeated edge with a
    /// different weight is rejected.
    pub fn load_edge_list(path: &Path, n_nodes: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_edge_list(&text, n_nodes)
    }

    pub fn parse_edge_list(text: &str, n_nodes: usize) -> Result<Self> {
        let mut seen: HashMap<(usize, usize), f64> = HashMap::new();
        let mut header_done = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = lineno + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_done {
                header_done = true;
                if line.replace(' ', "") == "src,dst,weight" {
                    continue;
                }
                return Err(Error::Input(format!(
                    "line {lineno}: expected header `src,dst,weight`, found `{line}`"
                )));
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::Input(format!(
                    "line {lineno}: expected 3 fields, found {}",
                    fields.len()
                )));
            }
            let node = |s: &str| -> Result<usize> {
                let id: usize = s
                    .parse()
                    .map_err(|_| Error::Input(format!("line {lineno}: bad node id `{s}`")))?;
                if id >= n_nodes {
                    return Err(Error::Input(format!(
                        "line {lineno}: node id {id} not below node count {n_nodes}"
                    )));
                }
                Ok(id)
            };
            let (u, v) = (node(fields[0])?, node(fields[1])?);
            let w: f64 = fields[2]
                .parse()
                .map_err(|_| Error::Input(format!("line {lineno}: bad weight `{}`", fields[2])))?;
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Input(format!(
                    "line {lineno}: weight must be finite and nonnegative, got {w}"
                )));
            }
            if u == v {
                continue;
            }
            let key = (u.min(v), u.max(v));
            match seen.get(&key) {
                Some(&prev) if prev != w => {
                    return Err(Error::Input(format!(
                        "line {lineno}: edge {u}-{v} repeated with weight {w} (was {prev})"
                    )));
                }
                _ => {
                    seen.insert(key, w);
                }
            }
        }
        let mut edges: Vec<_> = seen.into_iter().map(|((u, v), w)| (u, v, w)).collect();
        edges.sort_by_key(|&(u, v, _)| (u, v));
        Self::from_edges(n_nodes, &edges)
    }

    /// Writes the upper-triangle edges as an edge-list CSV.
    pub fn write_edge_list(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "src,dst,weight")?;
        let n = self.n_nodes;
        for i in 0..n {
            for j in i + 1..n {
                let w = self.weight(i, j);
                if w > 0.0 {
                    writeln!(out, "{i},{j},{w}")?;
                }
            }
        }
        Ok(())
    }
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration, returning `(λ, iterations)`.
pub fn power_iteration(matrix: &[f64], n: usize, tol: f64, max_iters: usize) -> Result<(f64, usize)> {
    if n == 0 {
        return Ok((0.0, 0));
    }
    // Deterministic start with no symmetry that could hide the top eigenvector.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 + 1.0).sqrt().fract()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut lambda = 0.0;
    let mut w = vec![0.0; n];
    for iter in 1..=max_iters {
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = matrix[i * n..(i + 1) * n].iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok((0.0, iter));
        }
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("power iteration diverged at iteration {iter}")));
        }
        // Rayleigh quotient of the current unit vector.
        let next: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(&w).for_each(|(vi, wi)| *vi = wi / norm);
        if (next - lambda).abs() <= tol * next.abs().max(1.0) {
            return Ok((next, iter));
        }
        lambda = next;
    }
    Err(Error::Numeric(format!(
        "power iteration did not converge within {max_iters} iterations (last estimate {lambda})"
    )))
}

/// Scaled Laplacian `2 L / λ_max - I` together with the `λ_max` used.
pub fn scaled_laplacian(g: &TrafficGraph) -> Result<(Tensor, f64)> {
    let n = g.n_nodes();
    let l = g.laplacian();
    let (mut lambda, _) = power_iteration(&l, n, POWER_TOL, POWER_MAX_ITERS)?;
    if lambda < EDGELESS_LAMBDA {
        lambda = 2.0;
    }
    let mut scaled: Vec<f64> = l.iter().map(|v| 2.0 * v / lambda).collect();
    for i in 0..n {
        scaled[i * n + i] -= 1.0;
    }
    Ok((Tensor::new([n, n], scaled)?, lambda))
}

/// `[T_0(L̃), …, T_{K-1}(L̃)]` from the three-term recurrence.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebyshevBasis {
    pub order: usize,
    pub matrices: Vec<Tensor>,
    pub lambda_max: f64,
}

impl ChebyshevBasis {
    pub fn new(scaled: &Tensor, order: usize, lambda_max: f64) -> Result<Self> {
        if order < 1 {
            return Err(Error::Contract("Chebyshev order must be at least 1".into()));
        }
        let shape = scaled.shape();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(Error::Dimension(format!("scaled Laplacian must be square, got {shape:?}")));
        }
        let n = shape[0];
        let mut matrices = vec![Tensor::eye(n)];
        if order > 1 {
            matrices.push(scaled.clone());
        }
        for k in 2..order {
            let prev = matrices[k - 1].data();
            let prev2 = matrices[k - 2].data();
            let l = scaled.data();
            let mut next = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for m in 0..n {
                        acc += l[i * n + m] * prev[m * n + j];
                    }
                    next[i * n + j] = 2.0 * acc - prev2[i * n + j];
                }
            }
            matrices.push(Tensor::new([n, n], next)?);
        }
        Ok(ChebyshevBasis {
            order,
            matrices,
            lambda_max,
        })
    }

    /// Scaled Laplacian and basis of order `order` for `g`.
    pub fn for_graph(g: &TrafficGraph, order: usize) -> Result<Self> {
        let (scaled, lambda) = scaled_laplacian(g)?;
        Self::new(&scaled, order, lambda)
    }

    pub fn n_nodes(&self) -> usize {
        self.matrices[0].shape()[0]
    }
}
