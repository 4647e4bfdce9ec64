//! The building blocks of one forward pass, each usable on its own.
//!
//! Every function takes the tape, its inputs as tape handles or constant
//! tensors, and a small struct of parameter handles. Shapes use `N` nodes,
//! `W` window steps, `C` features, `d` hidden channels and `d_h` per head.

use super::config::MaskMode;
use super::params::Bound;
use crate::error::{Error, Result};
use crate::graph::ChebyshevBasis;
use crate::tensor::{PadMode, Tape, Tensor, Var};

/// Layer-norm variance floor.
pub const LN_EPS: f64 = 1e-5;

/// How the encoder fills positions with `m = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderMode {
    /// Learned missing embedding `Z_u` plus temporal position embedding.
    Adaptive,
    /// Pre-filled input embedded linearly, plus temporal position embedding.
    Prefilled,
    /// Pre-filled input embedded linearly, nothing else.
    Linear,
}

pub struct EncoderParams {
    pub w_o: Var,
    pub b_o: Var,
    pub z_u: Option<Var>,
    pub p_t: Option<Var>,
}

impl EncoderParams {
    pub fn bind(b: &Bound, mode: EncoderMode) -> Result<Self> {
        Ok(EncoderParams {
            w_o: b.var("enc.w_o")?,
            b_o: b.var("enc.b_o")?,
            z_u: match mode {
                EncoderMode::Adaptive => Some(b.var("enc.z_u")?),
                _ => None,
            },
            p_t: match mode {
                EncoderMode::Linear => None,
                _ => Some(b.var("enc.p_t")?),
            },
        })
    }
}

/// `m` `[N, W]` repeated over a trailing axis of length `len`.
pub fn expand_mask(m: &Tensor, len: usize) -> Tensor {
    let mut shape = m.shape().to_vec();
    shape.push(len);
    let data = m.data().iter().flat_map(|v| std::iter::repeat_n(*v, len)).collect();
    Tensor::new(shape, data).expect("shape built from data")
}

/// Key mask `[N, W, W]` with entry `(n, i, j) = m[n, j]`.
pub fn key_mask(m: &Tensor) -> Tensor {
    let (n, w) = (m.shape()[0], m.shape()[1]);
    let mut out = Vec::with_capacity(n * w * w);
    for row in m.data().chunks(w) {
        for _ in 0..w {
            out.extend_from_slice(row);
        }
    }
    Tensor::new([n, w, w], out).expect("shape built from data")
}

/// Encodes an incomplete window `x [N, W, C]` with mask `m [N, W]` into
/// `H [N, W, d]`.
///
/// `x` is zeroed wherever `m = 0` before anything reads it, so the output
/// never depends on the stored values there. In [`EncoderMode::Adaptive`]
/// those positions take the learned embedding `Z_u` instead of `x·W_o + b_o`.
pub fn amst_encode(tape: &mut Tape, x: &Tensor, m: &Tensor, p: &EncoderParams, mode: EncoderMode) -> Result<Var> {
    let xs = x.shape();
    if xs.len() != 3 || m.shape() != &xs[..2] {
        return Err(Error::Dimension(format!(
            "encoder: x {:?} and mask {:?} disagree",
            xs,
            m.shape()
        )));
    }
    let c = xs[2];
    let mx = expand_mask(m, c);
    if x.data().iter().zip(mx.data()).any(|(v, k)| *k != 0.0 && !v.is_finite()) {
        return Err(Error::Input("non-finite value at an observed position".into()));
    }
    let clean: Vec<f64> = x
        .data()
        .iter()
        .zip(mx.data())
        .map(|(v, k)| if *k != 0.0 { *v } else { 0.0 })
        .collect();
    let xv = tape.constant(Tensor::new(xs.to_vec(), clean)?);
    let proj = tape.matmul(xv, p.w_o)?;
    let x_o = tape.add_bcast(proj, p.b_o)?;
    let x_p = match (mode, p.z_u) {
        (EncoderMode::Adaptive, Some(z_u)) => {
            let d = tape.shape(x_o)[2];
            tape.where_mask(&expand_mask(m, d), x_o, z_u)?
        }
        (EncoderMode::Adaptive, None) => {
            return Err(Error::Contract("adaptive encoder needs Z_u".into()));
        }
        _ => x_o,
    };
    match p.p_t {
        Some(p_t) if mode != EncoderMode::Linear => tape.add_bcast(x_p, p_t),
        _ => Ok(x_p),
    }
}

pub struct HeadProjections {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
}

pub struct TemporalParams {
    pub heads: Vec<HeadProjections>,
    pub w_c: Var,
    pub b_c: Var,
    pub ln_gain: Var,
    pub ln_bias: Var,
}

impl TemporalParams {
    pub fn bind(b: &Bound, block: usize, heads: usize) -> Result<Self> {
        let p = format!("block{block}.att");
        Ok(TemporalParams {
            heads: (0..heads)
                .map(|h| {
                    Ok(HeadProjections {
                        w_q: b.var(&format!("{p}.head{h}.w_q"))?,
                        w_k: b.var(&format!("{p}.head{h}.w_k"))?,
                        w_v: b.var(&format!("{p}.head{h}.w_v"))?,
                    })
                })
                .collect::<Result<_>>()?,
            w_c: b.var(&format!("{p}.w_c"))?,
            b_c: b.var(&format!("{p}.b_c"))?,
            ln_gain: b.var(&format!("{p}.ln_gain"))?,
            ln_bias: b.var(&format!("{p}.ln_bias"))?,
        })
    }
}

/// Output of [`temporal_attention`].
pub struct TemporalOut {
    /// `[N, W, d]`.
    pub h_matt: Var,
    /// Per head, the accumulated pre-mask scores `[N, W, W]` handed to the
    /// next block.
    pub scores: Vec<Var>,
    /// Per head, the attention weights `[N, W, W]`.
    pub weights: Vec<Var>,
}

/// Multi-head self-attention along time for every node.
///
/// Scores are `QKᵀ/√d_h` plus the previous block's scores (`prev`, one per
/// head). Keys with `m = 0` are removed according to `mode`; under
/// [`MaskMode::NegInf`] a query whose keys are all masked gets zero weights
/// and so zero context. With `uniform` set the scores are ignored and every
/// key gets weight `1/W`.
pub fn temporal_attention(
    tape: &mut Tape,
    h: Var,
    m: &Tensor,
    prev: Option<&[Var]>,
    p: &TemporalParams,
    mode: MaskMode,
    uniform: bool,
) -> Result<TemporalOut> {
    let hs = tape.shape(h).to_vec();
    if hs.len() != 3 || m.shape() != &hs[..2] {
        return Err(Error::Dimension(format!(
            "temporal attention: H {hs:?} and mask {:?} disagree",
            m.shape()
        )));
    }
    if let Some(prev) = prev {
        if prev.len() != p.heads.len() {
            return Err(Error::Dimension(format!(
                "{} previous score maps for {} heads",
                prev.len(),
                p.heads.len()
            )));
        }
    }
    let (n, w) = (hs[0], hs[1]);
    let keys = key_mask(m);
    let mut scores = Vec::with_capacity(p.heads.len());
    let mut weights = Vec::with_capacity(p.heads.len());
    let mut contexts = Vec::with_capacity(p.heads.len());
    for (i, head) in p.heads.iter().enumerate() {
        let v = tape.matmul(h, head.w_v)?;
        let (a, wts) = if uniform {
            let a = tape.constant(Tensor::zeros([n, w, w]));
            let wts = tape.constant(Tensor::full([n, w, w], 1.0 / w as f64));
            (a, wts)
        } else {
            let q = tape.matmul(h, head.w_q)?;
            let k = tape.matmul(h, head.w_k)?;
            let kt = tape.transpose_last(k)?;
            let raw = tape.matmul(q, kt)?;
            let dh = tape.shape(q)[2];
            let t_att = tape.scale(raw, 1.0 / (dh as f64).sqrt());
            let a = match prev {
                Some(prev) => tape.add(t_att, prev[i])?,
                None => t_att,
            };
            let masked = match mode {
                MaskMode::NegInf => tape.masked_fill(a, &keys, f64::NEG_INFINITY)?,
                MaskMode::Multiply => {
                    let kc = tape.constant(keys.clone());
                    tape.mul(a, kc)?
                }
            };
            (a, tape.softmax_lastdim(masked)?)
        };
        contexts.push(tape.matmul(wts, v)?);
        scores.push(a);
        weights.push(wts);
    }
    let cat = tape.concat(&contexts, 2)?;
    let proj = tape.matmul(cat, p.w_c)?;
    let proj = tape.add_bcast(proj, p.b_c)?;
    let res = tape.add(proj, h)?;
    let h_matt = tape.layer_norm(res, p.ln_gain, p.ln_bias, LN_EPS)?;
    Ok(TemporalOut {
        h_matt,
        scores,
        weights,
    })
}

pub struct SpatialParams {
    pub conv: Var,
    pub conv_b: Var,
    pub w_f: Var,
    pub b_f: Var,
    pub p_s: Var,
    /// Per head `(W'_q, W'_k)`, each `[F, d_h]`.
    pub heads: Vec<(Var, Var)>,
}

impl SpatialParams {
    pub fn bind(b: &Bound, block: usize, heads: usize) -> Result<Self> {
        let p = format!("block{block}.sp");
        Ok(SpatialParams {
            conv: b.var(&format!("{p}.conv"))?,
            conv_b: b.var(&format!("{p}.conv_b"))?,
            w_f: b.var(&format!("{p}.w_f"))?,
            b_f: b.var(&format!("{p}.b_f"))?,
            p_s: b.var(&format!("{p}.p_s"))?,
            heads: (0..heads)
                .map(|h| Ok((b.var(&format!("{p}.head{h}.w_q"))?, b.var(&format!("{p}.head{h}.w_k"))?)))
                .collect::<Result<_>>()?,
        })
    }
}

/// Node embedding `[N, F]`: same-padded convolution over time, mean over
/// the window, linear map to `F`, plus the spatial position embedding.
pub fn node_summary(tape: &mut Tape, h_matt: Var, p: &SpatialParams) -> Result<Var> {
    let conv = tape.conv1d_time(h_matt, p.conv, PadMode::Same)?;
    let conv = tape.add_bcast(conv, p.conv_b)?;
    let pooled = tape.mean_axis(conv, 1)?;
    let u = tape.matmul(pooled, p.w_f)?;
    let u = tape.add_bcast(u, p.b_f)?;
    tape.add(u, p.p_s)
}

/// Per-head node-to-node attention, each `[N, N]` with rows summing to 1.
pub fn spatial_attention(tape: &mut Tape, h_matt: Var, p: &SpatialParams) -> Result<Vec<Var>> {
    let u = node_summary(tape, h_matt, p)?;
    spatial_attention_from_summary(tape, u, &p.heads)
}

/// [`spatial_attention`] starting from a precomputed node summary `[N, F]`.
pub fn spatial_attention_from_summary(tape: &mut Tape, u: Var, heads: &[(Var, Var)]) -> Result<Vec<Var>> {
    heads
        .iter()
        .map(|&(w_q, w_k)| {
            let q = tape.matmul(u, w_q)?;
            let k = tape.matmul(u, w_k)?;
            let kt = tape.transpose_last(k)?;
            let raw = tape.matmul(q, kt)?;
            let dh = tape.shape(q)[1];
            let scaled = tape.scale(raw, 1.0 / (dh as f64).sqrt());
            tape.softmax_lastdim(scaled)
        })
        .collect()
}

/// Uniform spatial attention (`1/N` everywhere), one map per head.
pub fn uniform_spatial(tape: &mut Tape, n: usize, heads: usize) -> Vec<Var> {
    (0..heads)
        .map(|_| tape.constant(Tensor::full([n, n], 1.0 / n as f64)))
        .collect()
}

/// Chebyshev graph convolution modulated by attention:
/// `E_t = Σ_k (T_k ⊙ S_{k mod m}) · H_t · Θ_k` for every step `t`.
///
/// The number of orders used is `theta.len()`.
pub fn graph_conv(tape: &mut Tape, h: Var, s: &[Var], basis: &ChebyshevBasis, theta: &[Var]) -> Result<Var> {
    if theta.is_empty() {
        return Err(Error::Contract("graph convolution needs at least one order".into()));
    }
    if s.is_empty() {
        return Err(Error::Contract("graph convolution needs at least one attention map".into()));
    }
    if theta.len() > basis.matrices.len() {
        return Err(Error::Contract(format!(
            "{} orders requested but the basis holds {}",
            theta.len(),
            basis.matrices.len()
        )));
    }
    let hs = tape.shape(h).to_vec();
    if hs.len() != 3 || hs[0] != basis.n_nodes() {
        return Err(Error::Dimension(format!(
            "graph convolution: H {hs:?} on a {}-node basis",
            basis.n_nodes()
        )));
    }
    let (n, w, d) = (hs[0], hs[1], hs[2]);
    let flat = tape.reshape(h, &[n, w * d])?;
    let mut acc: Option<Var> = None;
    for (k, &th) in theta.iter().enumerate() {
        let t_k = tape.constant(basis.matrices[k].clone());
        let g = tape.mul(t_k, s[k % s.len()])?;
        let mixed = tape.matmul(g, flat)?;
        let mixed = tape.reshape(mixed, &[n, w, d])?;
        let term = tape.matmul(mixed, th)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("theta is non-empty"))
}

pub struct GatedParams {
    /// Per kernel `(Γ_i [K_i, d, 2d], bias [2d])`; empty when the gated
    /// convolution is switched off.
    pub kernels: Vec<(Var, Var)>,
    pub w_merge: Option<Var>,
    pub b_merge: Option<Var>,
    pub w_out: Var,
    pub b_out: Var,
    pub ln_gain: Var,
    pub ln_bias: Var,
}

impl GatedParams {
    pub fn bind(b: &Bound, block: usize, n_kernels: usize, gated: bool) -> Result<Self> {
        let p = format!("block{block}.tc");
        let (kernels, w_merge, b_merge) = if gated {
            (
                (0..n_kernels)
                    .map(|i| Ok((b.var(&format!("{p}.gamma{i}"))?, b.var(&format!("{p}.gamma{i}_b"))?)))
                    .collect::<Result<_>>()?,
                Some(b.var(&format!("{p}.w_merge"))?),
                Some(b.var(&format!("{p}.b_merge"))?),
            )
        } else {
            (Vec::new(), None, None)
        };
        Ok(GatedParams {
            kernels,
            w_merge,
            b_merge,
            w_out: b.var(&format!("{p}.w_out"))?,
            b_out: b.var(&format!("{p}.b_out"))?,
            ln_gain: b.var(&format!("{p}.ln_gain"))?,
            ln_bias: b.var(&format!("{p}.ln_bias"))?,
        })
    }
}

/// Gated temporal convolution and the block's output projection.
///
/// Each kernel yields `tanh(a) ⊙ σ(b)` from its two `d`-channel halves; the
/// gated outputs are concatenated, merged to `d` channels, added to `E` and
/// passed through ReLU. The result is concatenated with the block input `H`,
/// passed through ReLU, projected to `d` and layer-normalized. Without
/// kernels the gated stage is skipped and `E` goes straight to the concat.
pub fn gated_temporal_conv(tape: &mut Tape, e: Var, h: Var, p: &GatedParams) -> Result<Var> {
    let e_out = if p.kernels.is_empty() {
        e
    } else {
        let d = *tape.shape(e).last().unwrap_or(&0);
        let mut gated = Vec::with_capacity(p.kernels.len());
        for &(gamma, bias) in &p.kernels {
            let z = tape.conv1d_time(e, gamma, PadMode::Same)?;
            let z = tape.add_bcast(z, bias)?;
            let a = tape.slice(z, 2, 0, d)?;
            let b = tape.slice(z, 2, d, d)?;
            let a = tape.tanh(a);
            let b = tape.sigmoid(b);
            gated.push(tape.mul(a, b)?);
        }
        let cat = if gated.len() == 1 { gated[0] } else { tape.concat(&gated, 2)? };
        let (w_merge, b_merge) = match (p.w_merge, p.b_merge) {
            (Some(w), Some(b)) => (w, b),
            _ => return Err(Error::Contract("gated convolution needs merge weights".into())),
        };
        let merged = tape.matmul(cat, w_merge)?;
        let merged = tape.add_bcast(merged, b_merge)?;
        let res = tape.add(merged, e)?;
        tape.relu(res)
    };
    let both = tape.concat(&[e_out, h], 2)?;
    let both = tape.relu(both);
    let out = tape.matmul(both, p.w_out)?;
    let out = tape.add_bcast(out, p.b_out)?;
    tape.layer_norm(out, p.ln_gain, p.ln_bias, LN_EPS)
}
