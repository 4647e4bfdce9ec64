use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SeriesMatrix;
use crate::error::{Error, Result};
use crate::graph::TrafficGraph;

/// Shape of the synthetic traffic signal.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    /// Steps per simulated day (288 = 5-minute sampling).
    pub period: usize,
    pub amplitude: f64,
    /// Baseline level; keeps every value strictly positive.
    pub offset: f64,
    /// Noise standard deviation as a fraction of `amplitude`.
    pub noise_frac: f64,
    /// Explicit per-node phases; drawn from the seed when absent.
    pub phases: Option<Vec<f64>>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            period: 288,
            amplitude: 20.0,
            offset: 55.0,
            noise_frac: 0.05,
            phases: None,
        }
    }
}

/// Smallest value the generator emits.
const FLOOR: f64 = 1e-3;

/// Daily sinusoids with node-specific phase, one step of graph diffusion
/// (`x ← 0.7x + 0.3·Âx`, `Â` row-normalized) and seeded Gaussian noise.
///
/// Phases drift smoothly with the node index so that nodes close in index
/// (and, for [`synthetic_graph`], close on the ring) behave alike.
pub fn generate_synthetic(
    n_nodes: usize,
    n_steps: usize,
    graph: &TrafficGraph,
    seed: u64,
    spec: &SyntheticSpec,
) -> Result<SeriesMatrix> {
    if graph.n_nodes() != n_nodes {
        return Err(Error::Input(format!(
            "graph has {} nodes, series asks for {n_nodes}",
            graph.n_nodes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases = match &spec.phases {
        Some(p) if p.len() == n_nodes => p.clone(),
        Some(p) => {
            return Err(Error::Input(format!("{} phases for {n_nodes} nodes", p.len())));
        }
        None => (0..n_nodes)
            .map(|i| PI * i as f64 / n_nodes as f64 + rng.random_range(-0.3..0.3))
            .collect(),
    };

    // Row-normalized adjacency; an isolated node keeps its own value.
    let mut a_hat = vec![0.0; n_nodes * n_nodes];
    for i in 0..n_nodes {
        let deg = graph.degree()[i];
        if deg > 0.0 {
            for j in 0..n_nodes {
                a_hat[i * n_nodes + j] = graph.weight(i, j) / deg;
            }
        } else {
            a_hat[i * n_nodes + i] = 1.0;
        }
    }

    let sigma = spec.noise_frac * spec.amplitude;
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::Input(e.to_string()))?;
    let mut values = vec![0.0; n_nodes * n_steps];
    let mut clean = vec![0.0; n_nodes];
    for t in 0..n_steps {
        let angle = 2.0 * PI * t as f64 / spec.period as f64;
        for (i, c) in clean.iter_mut().enumerate() {
            *c = spec.offset + spec.amplitude * (angle + phases[i]).sin();
        }
        for i in 0..n_nodes {
            let neigh: f64 = (0..n_nodes).map(|j| a_hat[i * n_nodes + j] * clean[j]).sum();
            let mut v = 0.7 * clean[i] + 0.3 * neigh;
            if sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            values[i * n_steps + t] = v.max(FLOOR);
        }
    }
    SeriesMatrix::new(n_nodes, n_steps, 1, values)
}

/// Ring over the node index plus `n / 4` random chords, unit weights.
pub fn synthetic_graph(n_nodes: usize, seed: u64) -> Result<TrafficGraph> {
    if n_nodes < 2 {
        return Err(Error::Input(format!("need at least 2 nodes, got {n_nodes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut edges: Vec<(usize, usize, f64)> = (0..n_nodes)
        .map(|i| (i, (i + 1) % n_nodes, 1.0))
        .filter(|(u, v, _)| u != v)
        .collect();
    for _ in 0..n_nodes / 4 {
        let u = rng.random_range(0..n_nodes);
        let v = rng.random_range(0..n_nodes);
        if u != v {
            edges.push((u, v, 1.0));
        }
    }
    TrafficGraph::from_edges(n_nodes, &edges)
}
