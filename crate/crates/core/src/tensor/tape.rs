use super::kernels::{self, ConvGeom};
use super::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(super) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(super) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Abs(Var),
    MatMul {
        a: Var,
        b: Var,
        batch_a: usize,
        batch_b: usize,
        p: usize,
        q: usize,
        r: usize,
    },
    TransposeLast {
        input: Var,
        rows: usize,
        cols: usize,
    },
    Reshape(Var),
    BroadcastTo(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    MeanAxis {
        input: Var,
        axis: usize,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Conv1d {
        x: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    Where {
        take_a: Vec<bool>,
        a: Var,
        b: Var,
    },
    MaskedFill {
        input: Var,
        keep: Vec<bool>,
    },
}

pub(super) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub needs_grad: bool,
}

/// Append-only record of a computation; nodes are stored in creation order,
/// so inputs always precede the operations that consume them.
#[derive(Default)]
pub struct Tape {
    pub(super) nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Its gradient is tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        let mut t = t;
        if needs_grad && t.grad.is_none() {
            t.grad = Some(vec![0.0; t.numel()]);
        }
        self.push(t, Op::Leaf, needs_grad)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        let t = if t.requires_grad() { t } else { t.with_grad() };
        self.leaf(t)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        t.grad = None;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    pub(super) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub(super) fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Back-propagates from a one-element node into every trainable leaf.
    ///
    /// Gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out_shape = self.shape(output).to_vec();
        if numel(&out_shape) != 1 {
            return Err(Error::Contract(format!(
                "backward needs a one-element output, got shape {out_shape:?}"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                leaf_grads.push((i, g));
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        for (i, g) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut send = |v: Var, contribution: Vec<f64>| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contribution),
            }
        };
        let val = |v: Var| self.nodes[v.0].value.data();

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if self.needs(*a) {
                    send(*a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
                }
                if self.needs(*b) {
                    send(*b, g.iter().zip(av).map(|(g, a)| g * a).collect());
                }
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|v| v * c).collect()),
            Op::AddScalar(a) => send(*a, g.to_vec()),
            Op::Tanh(a) => send(*a, g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect()),
            Op::Sigmoid(a) => send(*a, g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect()),
            Op::Relu(a) => send(
                *a,
                g.iter()
                    .zip(val(*a))
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect(),
            ),
            Op::Abs(a) => send(
                *a,
                g.iter()
                    .zip(val(*a))
                    .map(|(g, x)| {
                        if *x > 0.0 {
                            *g
                        } else if *x < 0.0 {
                            -*g
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            ),
            Op::MatMul {
                a,
                b,
                batch_a,
                batch_b,
                p,
                q,
                r,
            } => {
                let (p, q, r) = (*p, *q, *r);
                let batch = (*batch_a).max(*batch_b);
                let (av, bv) = (val(*a), val(*b));
                if self.needs(*a) {
                    let mut da = vec![0.0; batch_a * p * q];
                    for i in 0..batch {
                        let ia = if *batch_a == 1 { 0 } else { i };
                        let ib = if *batch_b == 1 { 0 } else { i };
                        kernels::gemm_nt(
                            &g[i * p * r..(i + 1) * p * r],
                            &bv[ib * q * r..(ib + 1) * q * r],
                            &mut da[ia * p * q..(ia + 1) * p * q],
                            p,
                            r,
                            q,
                        );
                    }
                    send(*a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; batch_b * q * r];
                    for i in 0..batch {
                        let ia = if *batch_a == 1 { 0 } else { i };
                        let ib = if *batch_b == 1 { 0 } else { i };
                        kernels::gemm_tn(
                            &av[ia * p * q..(ia + 1) * p * q],
                            &g[i * p * r..(i + 1) * p * r],
                            &mut db[ib * q * r..(ib + 1) * q * r],
                            p,
                            q,
                            r,
                        );
                    }
                    send(*b, db);
                }
            }
            Op::TransposeLast { input, rows, cols } => {
                let (rows, cols) = (*rows, *cols);
                let mut d = vec![0.0; g.len()];
                for (blk, chunk) in g.chunks(rows * cols).enumerate() {
                    let base = blk * rows * cols;
                    for i in 0..cols {
                        for j in 0..rows {
                            d[base + j * cols + i] = chunk[i * rows + j];
                        }
                    }
                }
                send(*input, d);
            }
            Op::Reshape(a) => send(*a, g.to_vec()),
            Op::BroadcastTo(a) => {
                let n = val(*a).len();
                let mut d = vec![0.0; n];
                for chunk in g.chunks(n) {
                    d.iter_mut().zip(chunk).for_each(|(d, c)| *d += c);
                }
                send(*a, d);
            }
            Op::Concat { inputs, axis } => {
                let shape = &node.value.shape;
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for v in inputs {
                    let width = self.shape(*v)[*axis] * inner;
                    if self.needs(*v) {
                        let mut d = Vec::with_capacity(outer * width);
                        for o in 0..outer {
                            d.extend_from_slice(&g[o * total + offset..o * total + offset + width]);
                        }
                        send(*v, d);
                    }
                    offset += width;
                }
            }
            Op::Slice { input, axis, start } => {
                let in_shape = self.shape(*input);
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[*axis + 1..].iter().product();
                let total = in_shape[*axis] * inner;
                let width = node.value.shape[*axis] * inner;
                let mut d = vec![0.0; outer * total];
                for o in 0..outer {
                    d[o * total + start * inner..o * total + start * inner + width]
                        .copy_from_slice(&g[o * width..(o + 1) * width]);
                }
                send(*input, d);
            }
            Op::Sum(a) => send(*a, vec![g[0]; val(*a).len()]),
            Op::Mean(a) => {
                let n = val(*a).len();
                send(*a, vec![g[0] / n as f64; n]);
            }
            Op::MeanAxis { input, axis } => {
                let in_shape = self.shape(*input);
                let outer: usize = in_shape[..*axis].iter().product();
                let len = in_shape[*axis];
                let inner: usize = in_shape[*axis + 1..].iter().product();
                let mut d = vec![0.0; outer * len * inner];
                let scale = 1.0 / len as f64;
                for o in 0..outer {
                    for l in 0..len {
                        for k in 0..inner {
                            d[(o * len + l) * inner + k] = g[o * inner + k] * scale;
                        }
                    }
                }
                send(*input, d);
            }
            Op::Softmax(a) => {
                let width = *node.value.shape.last().unwrap_or(&1);
                let mut d = vec![0.0; g.len()];
                for ((drow, grow), yrow) in d
                    .chunks_mut(width)
                    .zip(g.chunks(width))
                    .zip(out.chunks(width))
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    for ((dv, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *dv = yv * (gv - dot);
                    }
                }
                send(*a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let width = *node.value.shape.last().unwrap_or(&1);
                let gv = val(*gain);
                if self.needs(*gain) {
                    let mut dg = vec![0.0; width];
                    for (grow, hrow) in g.chunks(width).zip(xhat.chunks(width)) {
                        for ((d, gr), h) in dg.iter_mut().zip(grow).zip(hrow) {
                            *d += gr * h;
                        }
                    }
                    send(*gain, dg);
                }
                if self.needs(*bias) {
                    let mut db = vec![0.0; width];
                    for grow in g.chunks(width) {
                        db.iter_mut().zip(grow).for_each(|(d, gr)| *d += gr);
                    }
                    send(*bias, db);
                }
                if self.needs(*x) {
                    let mut dx = vec![0.0; g.len()];
                    let inv_w = 1.0 / width as f64;
                    for (row, ((dxrow, grow), hrow)) in dx
                        .chunks_mut(width)
                        .zip(g.chunks(width))
                        .zip(xhat.chunks(width))
                        .enumerate()
                    {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..width {
                            let dh = grow[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hrow[j];
                        }
                        mean_dh *= inv_w;
                        mean_dh_h *= inv_w;
                        for j in 0..width {
                            let dh = grow[j] * gv[j];
                            dxrow[j] = rstd[row] * (dh - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                    send(*x, dx);
                }
            }
            Op::Conv1d { x, kernel, geom } => {
                let (xv, wv) = (val(*x), val(*kernel));
                let mut dx = self.needs(*x).then(|| vec![0.0; xv.len()]);
                let mut dw = self.needs(*kernel).then(|| vec![0.0; wv.len()]);
                kernels::conv1d_backward(*geom, xv, wv, g, dx.as_deref_mut(), dw.as_deref_mut());
                if let Some(dx) = dx {
                    send(*x, dx);
                }
                if let Some(dw) = dw {
                    send(*kernel, dw);
                }
            }
            Op::Where { take_a, a, b } => {
                if self.needs(*a) {
                    send(
                        *a,
                        g.iter()
                            .zip(take_a)
                            .map(|(g, t)| if *t { *g } else { 0.0 })
                            .collect(),
                    );
                }
                if self.needs(*b) {
                    send(
                        *b,
                        g.iter()
                            .zip(take_a)
                            .map(|(g, t)| if *t { 0.0 } else { *g })
                            .collect(),
                    );
                }
            }
            Op::MaskedFill { input, keep } => send(
                *input,
                g.iter()
                    .zip(keep)
                    .map(|(g, k)| if *k { *g } else { 0.0 })
                    .collect(),
            ),
        }
    }
}
