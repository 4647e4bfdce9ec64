use super::kernels::{self, ConvGeom};
use super::tape::{Op, Tape, Var};
use super::{numel, Tensor};
use crate::error::{Error, Result};

/// Boundary handling for [`Tape::conv1d_time`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    /// Zero padding that keeps the time length unchanged (odd kernels are
    /// centred; even kernels lean one step into the future).
    Same,
    /// No padding; output length is `T - K + 1`.
    Valid,
}

fn same_shape(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "{op}: shapes {a:?} and {b:?} differ"
        )));
    }
    Ok(())
}

fn check_axis(op: &str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::Dimension(format!(
            "{op}: axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok(())
}

impl Tape {
    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = self.value(a);
        let data = src.data().iter().map(|&x| f(x)).collect();
        let shape = src.shape().to_vec();
        let needs = self.needs(a);
        self.push(Tensor::new(shape, data).expect("same size"), op, needs)
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        same_shape(name, self.shape(a), self.shape(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    /// Batched matrix product `[.., p, q] · [.., q, r] -> [.., p, r]`.
    ///
    /// Leading (batch) dimensions must match, or one operand must be a plain
    /// matrix that is shared across the other's batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || {
            Error::Dimension(format!("matmul: cannot multiply shapes {sa:?} and {sb:?}"))
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (p, q) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (q2, r) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if q != q2 {
            return Err(mismatch());
        }
        let (lead_a, lead_b) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let lead = if lead_a == lead_b || lead_b.is_empty() {
            lead_a.to_vec()
        } else if lead_a.is_empty() {
            lead_b.to_vec()
        } else {
            return Err(mismatch());
        };
        let (batch_a, batch_b) = (numel(lead_a), numel(lead_b));
        let batch = numel(&lead);
        let mut out = vec![0.0; batch * p * r];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                let ia = if batch_a == 1 { 0 } else { i };
                let ib = if batch_b == 1 { 0 } else { i };
                kernels::gemm_nn(
                    &av[ia * p * q..(ia + 1) * p * q],
                    &bv[ib * q * r..(ib + 1) * q * r],
                    &mut out[i * p * r..(i + 1) * p * r],
                    p,
                    q,
                    r,
                );
            }
        }
        let mut shape = lead;
        shape.extend([p, r]);
        let needs = self.needs(a) || self.needs(b);
        let op = Op::MatMul {
            a,
            b,
            batch_a,
            batch_b,
            p,
            q,
            r,
        };
        Ok(self.push(Tensor::new(shape, out)?, op, needs))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 {
            return Err(Error::Dimension(format!(
                "transpose_last needs rank >= 2, got {shape:?}"
            )));
        }
        let (rows, cols) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for (blk, chunk) in src.chunks(rows * cols).enumerate() {
            let base = blk * rows * cols;
            for i in 0..rows {
                for j in 0..cols {
                    out[base + j * rows + i] = chunk[i * cols + j];
                }
            }
        }
        let mut new_shape = shape.clone();
        let n = new_shape.len();
        new_shape.swap(n - 2, n - 1);
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(new_shape, out)?,
            Op::TransposeLast {
                input: a,
                rows,
                cols,
            },
            needs,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).numel() {
            return Err(Error::Dimension(format!(
                "reshape: cannot view {:?} as {shape:?}",
                self.shape(a)
            )));
        }
        let data = self.value(a).data().to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape.to_vec(), data)?, Op::Reshape(a), needs))
    }

    /// Repeats `a` over new leading axes; `a.shape` must be a suffix of `shape`.
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src_shape = self.shape(a);
        if src_shape.len() > shape.len() || !shape.ends_with(src_shape) {
            return Err(Error::Dimension(format!(
                "broadcast_to: {src_shape:?} is not a trailing block of {shape:?}"
            )));
        }
        let src = self.value(a).data();
        let reps = numel(shape) / src.len().max(1);
        let mut out = Vec::with_capacity(numel(shape));
        for _ in 0..reps {
            out.extend_from_slice(src);
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape.to_vec(), out)?, Op::BroadcastTo(a), needs))
    }

    /// `a + b` where `b` is broadcast over the leading axes of `a`.
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if self.shape(b) == shape.as_slice() {
            return self.add(a, b);
        }
        let bb = self.broadcast_to(b, &shape)?;
        self.add(a, bb)
    }

    /// `a ⊙ b` where `b` is broadcast over the leading axes of `a`.
    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if self.shape(b) == shape.as_slice() {
            return self.mul(a, b);
        }
        let bb = self.broadcast_to(b, &shape)?;
        self.mul(a, bb)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut axis_len = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::Dimension(format!(
                    "concat along axis {axis}: {s:?} does not match {base:?}"
                )));
            }
            axis_len += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * axis_len * inner);
        for o in 0..outer {
            for v in inputs {
                let width = self.shape(*v)[axis] * inner;
                out.extend_from_slice(&self.value(*v).data()[o * width..(o + 1) * width]);
            }
        }
        let mut shape = base;
        shape[axis] = axis_len;
        let needs = inputs.iter().any(|v| self.needs(*v));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            needs,
        ))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("slice", &shape, axis)?;
        if start + len > shape[axis] {
            return Err(Error::Dimension(format!(
                "slice {start}..{} exceeds axis {axis} of {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let total = shape[axis] * inner;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[o * total + start * inner..o * total + (start + len) * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(new_shape, out)?,
            Op::Slice {
                input: a,
                axis,
                start,
            },
            needs,
        ))
    }

    /// Sum of all entries, as a zero-dimensional tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.value(a).data();
        let m = d.iter().sum::<f64>() / d.len().max(1) as f64;
        let needs = self.needs(a);
        self.push(Tensor::scalar(m), Op::Mean(a), needs)
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("mean_axis", &shape, axis)?;
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        if len == 0 {
            return Err(Error::Dimension("mean_axis over an empty axis".into()));
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for k in 0..inner {
                    out[o * inner + k] += src[(o * len + l) * inner + k];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut new_shape = shape;
        new_shape.remove(axis);
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(new_shape, out)?, Op::MeanAxis { input: a, axis }, needs))
    }

    /// Row-wise softmax over the last axis.
    ///
    /// `-inf` entries get exactly zero weight; a row that is entirely `-inf`
    /// becomes an all-zero row. NaN and `+inf` are rejected.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let width = *shape
            .last()
            .ok_or_else(|| Error::Dimension("softmax of a scalar".into()))?;
        if width == 0 {
            return Err(Error::Dimension("softmax over an empty axis".into()));
        }
        let src = self.value(a).data();
        if let Some(bad) = src.iter().find(|v| v.is_nan() || **v == f64::INFINITY) {
            return Err(Error::Numeric(format!("softmax input contains {bad}")));
        }
        let mut out = vec![0.0; src.len()];
        for (orow, row) in out.chunks_mut(width).zip(src.chunks(width)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            for (o, &x) in orow.iter_mut().zip(row) {
                *o = if x == f64::NEG_INFINITY { 0.0 } else { (x - max).exp() };
                total += *o;
            }
            orow.iter_mut().for_each(|o| *o /= total);
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(a), needs))
    }

    /// Normalizes each row of the last axis to zero mean and unit variance,
    /// then applies `gain ⊙ · + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = shape.last().copied().unwrap_or(0);
        if width == 0 {
            return Err(Error::Dimension(format!(
                "layer_norm needs a non-empty feature axis, got {shape:?}"
            )));
        }
        if self.shape(gain) != [width] || self.shape(bias) != [width] {
            return Err(Error::Dimension(format!(
                "layer_norm: gain {:?} / bias {:?} must be [{width}]",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let src = self.value(x).data();
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let rows = src.len() / width;
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * width..(r + 1) * width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let inv = 1.0 / (var + eps).sqrt();
            rstd[r] = inv;
            for j in 0..width {
                let h = (row[j] - mean) * inv;
                xhat[r * width + j] = h;
                out[r * width + j] = gv[j] * h + bv[j];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// Cross-correlation along time: `x[N, T, c_in] ⋆ kernel[K, c_in, c_out]`.
    pub fn conv1d_time(&mut self, x: Var, kernel: Var, pad: PadMode) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 3 || sk.len() != 3 || sx[2] != sk[1] {
            return Err(Error::Dimension(format!(
                "conv1d_time: input {sx:?} and kernel {sk:?} are incompatible"
            )));
        }
        let (batch, t_in, c_in) = (sx[0], sx[1], sx[2]);
        let (k, c_out) = (sk[0], sk[2]);
        if k == 0 || k > t_in {
            return Err(Error::Dimension(format!(
                "conv1d_time: kernel width {k} does not fit {t_in} time steps"
            )));
        }
        let (pad_left, t_out) = match pad {
            PadMode::Same => ((k - 1) / 2, t_in),
            PadMode::Valid => (0, t_in - k + 1),
        };
        let geom = ConvGeom {
            batch,
            t_in,
            t_out,
            c_in,
            c_out,
            k,
            pad_left,
        };
        let mut out = vec![0.0; batch * t_out * c_out];
        kernels::conv1d_forward(geom, self.value(x).data(), self.value(kernel).data(), &mut out);
        let needs = self.needs(x) || self.needs(kernel);
        Ok(self.push(
            Tensor::new(vec![batch, t_out, c_out], out)?,
            Op::Conv1d { x, kernel, geom },
            needs,
        ))
    }

    /// Picks `a` where `mask` is nonzero and `b` elsewhere. The mask is a
    /// constant 0/1 tensor of the same shape.
    pub fn where_mask(&mut self, mask: &Tensor, a: Var, b: Var) -> Result<Var> {
        same_shape("where_mask", self.shape(a), self.shape(b))?;
        same_shape("where_mask", mask.shape(), self.shape(a))?;
        let take_a: Vec<bool> = mask.data().iter().map(|m| *m != 0.0).collect();
        let out = take_a
            .iter()
            .zip(self.value(a).data().iter().zip(self.value(b).data()))
            .map(|(t, (x, y))| if *t { *x } else { *y })
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Where { take_a, a, b }, needs))
    }

    /// Keeps `a` where `mask` is nonzero and writes the constant `fill`
    /// elsewhere; filled entries receive no gradient.
    pub fn masked_fill(&mut self, a: Var, mask: &Tensor, fill: f64) -> Result<Var> {
        same_shape("masked_fill", mask.shape(), self.shape(a))?;
        let keep: Vec<bool> = mask.data().iter().map(|m| *m != 0.0).collect();
        let out = keep
            .iter()
            .zip(self.value(a).data())
            .map(|(k, x)| if *k { *x } else { fill })
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::MaskedFill { input: a, keep }, needs))
    }
}
