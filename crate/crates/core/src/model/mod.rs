//! The imputation network.
//!
//! A forward pass encodes the incomplete window, runs it through `L` stacked
//! blocks (temporal attention, spatial attention, attention-weighted
//! Chebyshev graph convolution, gated temporal convolution), sums the block
//! outputs and maps them back to `C` features with a two-layer head.

mod checkpoint;
mod config;
pub mod layers;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{Ablation, MaskMode, ModelConfig};
pub use params::{Bound, Dims, ParamStore};

use layers::{EncoderMode, EncoderParams, GatedParams, SpatialParams, TemporalParams};

use crate::error::{Error, Result};
use crate::graph::{ChebyshevBasis, TrafficGraph};
use crate::tensor::{Tape, Tensor, Var};

/// Handles to the intermediate values of one block.
#[derive(Clone, Debug)]
pub struct BlockTrace {
    /// Per head, accumulated scores before masking.
    pub scores: Vec<Var>,
    /// Per head, temporal attention weights.
    pub temporal_weights: Vec<Var>,
    /// Per head, spatial attention `[N, N]`.
    pub spatial: Vec<Var>,
    pub h_in: Var,
    pub h_matt: Var,
    pub e: Var,
    pub h_out: Var,
}

/// Handles to the intermediate values of a forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    pub encoded: Var,
    pub blocks: Vec<BlockTrace>,
    pub output: Var,
}

/// A configured network bound to one graph and one window geometry.
#[derive(Clone, Debug)]
pub struct MagiNet {
    pub config: ModelConfig,
    pub dims: Dims,
    pub params: ParamStore,
    pub basis: ChebyshevBasis,
    pub seed: u64,
}

impl MagiNet {
    /// Fresh model with seeded parameters.
    pub fn new(config: ModelConfig, dims: Dims, graph: &TrafficGraph, seed: u64) -> Result<Self> {
        let params = ParamStore::init(&config, dims, seed)?;
        let basis = ChebyshevBasis::for_graph(graph, config.cheb_order)?;
        Self::from_parts(config, dims, params, basis, seed)
    }

    pub fn from_parts(
        config: ModelConfig,
        dims: Dims,
        params: ParamStore,
        basis: ChebyshevBasis,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if basis.n_nodes() != dims.n_nodes {
            return Err(Error::Input(format!(
                "graph has {} nodes, model expects {}",
                basis.n_nodes(),
                dims.n_nodes
            )));
        }
        if basis.order < config.cheb_order {
            return Err(Error::Contract(format!(
                "basis order {} below configured {}",
                basis.order, config.cheb_order
            )));
        }
        let widest = config.kernel_sizes.iter().copied().chain([config.collapse_kernel]).max().unwrap_or(1);
        if widest > dims.window {
            return Err(Error::Dimension(format!(
                "kernel width {widest} exceeds window width {}",
                dims.window
            )));
        }
        Ok(MagiNet {
            config,
            dims,
            params,
            basis,
            seed,
        })
    }

    fn encoder_mode(&self) -> EncoderMode {
        let c = &self.config;
        if c.has(Ablation::NoAmstenc) {
            EncoderMode::Linear
        } else if c.has(Ablation::ZeroPrefill) || c.has(Ablation::MeanPrefill) {
            EncoderMode::Prefilled
        } else {
            EncoderMode::Adaptive
        }
    }

    fn check_input(&self, x: &Tensor, m: &Tensor) -> Result<()> {
        let want = [self.dims.n_nodes, self.dims.window, self.dims.n_features];
        if x.shape() != want || m.shape() != &want[..2] {
            return Err(Error::Dimension(format!(
                "model expects x {:?} and m {:?}, got {:?} and {:?}",
                want,
                &want[..2],
                x.shape(),
                m.shape()
            )));
        }
        Ok(())
    }

    /// Records one forward pass; returns `X̂ [N, W, C]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: &Tensor, m: &Tensor) -> Result<Var> {
        Ok(self.forward_traced(tape, bound, x, m)?.output)
    }

    /// [`MagiNet::forward`], also returning handles to intermediate values.
    pub fn forward_traced(&self, tape: &mut Tape, bound: &Bound, x: &Tensor, m: &Tensor) -> Result<Trace> {
        self.check_input(x, m)?;
        let c = &self.config;
        let mode = self.encoder_mode();
        let enc = EncoderParams::bind(bound, mode)?;
        let input = if c.has(Ablation::MeanPrefill) {
            mean_prefill(x, m)
        } else {
            x.clone()
        };
        // Mean prefill makes every position count as observed for the encoder.
        let enc_mask = if c.has(Ablation::MeanPrefill) {
            Tensor::full(m.shape().to_vec(), 1.0)
        } else {
            m.clone()
        };
        let encoded = layers::amst_encode(tape, &input, &enc_mask, &enc, mode)?;

        if c.has(Ablation::NoMastdec) {
            let out = tape.matmul(encoded, bound.var("head.w_lin")?)?;
            let output = tape.add_bcast(out, bound.var("head.b_lin")?)?;
            return Ok(Trace {
                encoded,
                blocks: Vec::new(),
                output,
            });
        }

        let uniform = c.has(Ablation::NoMastatt);
        let mut h = encoded;
        let mut prev: Option<Vec<Var>> = None;
        let mut total: Option<Var> = None;
        let mut blocks = Vec::with_capacity(c.blocks);
        for l in 0..c.blocks {
            let tp = TemporalParams::bind(bound, l, c.heads)?;
            let t = layers::temporal_attention(tape, h, m, prev.as_deref(), &tp, c.mask_mode, uniform)?;
            let (spatial, e) = if c.has(Ablation::NoGraphconv) {
                (Vec::new(), h)
            } else {
                let spatial = if uniform {
                    layers::uniform_spatial(tape, self.dims.n_nodes, c.heads)
                } else {
                    let sp = SpatialParams::bind(bound, l, c.heads)?;
                    layers::spatial_attention(tape, t.h_matt, &sp)?
                };
                let theta = (0..c.cheb_order)
                    .map(|k| bound.var(&format!("block{l}.gc.theta{k}")))
                    .collect::<Result<Vec<_>>>()?;
                let e = layers::graph_conv(tape, h, &spatial, &self.basis, &theta)?;
                (spatial, e)
            };
            let gp = GatedParams::bind(bound, l, c.kernel_sizes.len(), !c.has(Ablation::NoGtconv))?;
            let h_out = layers::gated_temporal_conv(tape, e, h, &gp)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, h_out)?,
                None => h_out,
            });
            blocks.push(BlockTrace {
                scores: t.scores.clone(),
                temporal_weights: t.weights,
                spatial,
                h_in: h,
                h_matt: t.h_matt,
                e,
                h_out,
            });
            prev = Some(t.scores);
            h = h_out;
        }
        let total = total.expect("at least one block");
        let z = tape.matmul(total, bound.var("head.w1")?)?;
        let z = tape.add_bcast(z, bound.var("head.b1")?)?;
        let z = tape.relu(z);
        let z = tape.matmul(z, bound.var("head.w2")?)?;
        let output = tape.add_bcast(z, bound.var("head.b2")?)?;
        Ok(Trace {
            encoded,
            blocks,
            output,
        })
    }

    /// Reconstruction `X̂ [N, W, C]` without gradient bookkeeping.
    pub fn predict(&self, x: &Tensor, m: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let out = self.forward(&mut tape, &bound, x, m)?;
        let mut t = tape.value(out).clone();
        t.zero_grad();
        Tensor::new(t.shape().to_vec(), t.into_data())
    }

    /// The same model with nodes relabeled: new node `i` is old node
    /// `perm[i]`. Node-indexed parameters and the graph basis follow.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Self> {
        let n = self.dims.n_nodes;
        check_perm(perm, n)?;
        let mut params = self.params.clone();
        for (name, t) in params.iter_mut() {
            if name == "enc.z_u" || name.ends_with(".sp.p_s") {
                let row = t.numel() / n;
                let old = t.data().to_vec();
                for (i, &p) in perm.iter().enumerate() {
                    t.data_mut()[i * row..(i + 1) * row].copy_from_slice(&old[p * row..(p + 1) * row]);
                }
            }
        }
        let matrices = self
            .basis
            .matrices
            .iter()
            .map(|mat| {
                let mut data = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        data[i * n + j] = mat.data()[perm[i] * n + perm[j]];
                    }
                }
                Tensor::new([n, n], data)
            })
            .collect::<Result<_>>()?;
        let basis = ChebyshevBasis {
            order: self.basis.order,
            matrices,
            lambda_max: self.basis.lambda_max,
        };
        Self::from_parts(self.config.clone(), self.dims, params, basis, self.seed)
    }
}

fn check_perm(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::Input(format!("not a permutation of 0..{n}: {perm:?}")));
    }
    Ok(())
}

/// `x` with unobserved positions set to the node's observed mean over the
/// window, or the window-wide observed mean for a node with none, or zero.
pub fn mean_prefill(x: &Tensor, m: &Tensor) -> Tensor {
    let (n, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = x.clone();
    let mut global = vec![0.0; c];
    let mut global_count = 0usize;
    let mut node_means = Vec::with_capacity(n);
    for i in 0..n {
        let mut sum = vec![0.0; c];
        let mut count = 0usize;
        for t in 0..w {
            if m.data()[i * w + t] != 0.0 {
                count += 1;
                for f in 0..c {
                    sum[f] += x.data()[(i * w + t) * c + f];
                }
            }
        }
        for f in 0..c {
            global[f] += sum[f];
        }
        global_count += count;
        node_means.push((count > 0).then(|| sum.iter().map(|s| s / count as f64).collect::<Vec<_>>()));
    }
    let global: Vec<f64> = if global_count > 0 {
        global.iter().map(|s| s / global_count as f64).collect()
    } else {
        vec![0.0; c]
    };
    for (i, mean) in node_means.iter().enumerate() {
        let fill = mean.as_ref().unwrap_or(&global);
        for t in 0..w {
            if m.data()[i * w + t] == 0.0 {
                out.data_mut()[(i * w + t) * c..(i * w + t + 1) * c].copy_from_slice(fill);
            }
        }
    }
    out
}
