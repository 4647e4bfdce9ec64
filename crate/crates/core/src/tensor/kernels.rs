// Raw loops shared by the forward and backward passes. All slices are
// row-major and the caller has already validated the sizes.

/// c[p×r] += a[p×q] · b[q×r]
pub(super) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let crow = &mut c[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * r..(k + 1) * r];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
}

/// c[p×q] += a[p×r] · b[q×r]ᵀ
pub(super) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], p: usize, r: usize, q: usize) {
    for i in 0..p {
        let arow = &a[i * r..(i + 1) * r];
        for k in 0..q {
            let brow = &b[k * r..(k + 1) * r];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            c[i * q + k] += dot;
        }
    }
}

/// c[q×r] += a[p×q]ᵀ · b[p×r]
pub(super) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let brow = &b[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let crow = &mut c[k * r..(k + 1) * r];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
}

/// Geometry of a time-axis cross-correlation over `[batch, T, c_in]`.
#[derive(Clone, Copy, Debug)]
pub(super) struct ConvGeom {
    pub batch: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    /// Input time index feeding output `t` through tap `j`, if in range.
    #[inline]
    fn source(&self, t: usize, j: usize) -> Option<usize> {
        (t + j).checked_sub(self.pad_left).filter(|&s| s < self.t_in)
    }
}

pub(super) fn conv1d_forward(g: ConvGeom, x: &[f64], w: &[f64], y: &mut [f64]) {
    for n in 0..g.batch {
        for t in 0..g.t_out {
            let yrow = &mut y[(n * g.t_out + t) * g.c_out..(n * g.t_out + t + 1) * g.c_out];
            for j in 0..g.k {
                let Some(s) = g.source(t, j) else { continue };
                let xrow = &x[(n * g.t_in + s) * g.c_in..(n * g.t_in + s + 1) * g.c_in];
                for (c, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let wrow = &w[(j * g.c_in + c) * g.c_out..(j * g.c_in + c + 1) * g.c_out];
                    for (yv, wv) in yrow.iter_mut().zip(wrow) {
                        *yv += xv * wv;
                    }
                }
            }
        }
    }
}

pub(super) fn conv1d_backward(
    g: ConvGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
) {
    if let Some(dx) = dx {
        for n in 0..g.batch {
            for t in 0..g.t_out {
                let dyrow = &dy[(n * g.t_out + t) * g.c_out..(n * g.t_out + t + 1) * g.c_out];
                for j in 0..g.k {
                    let Some(s) = g.source(t, j) else { continue };
                    for c in 0..g.c_in {
                        let wrow = &w[(j * g.c_in + c) * g.c_out..(j * g.c_in + c + 1) * g.c_out];
                        let dot: f64 = dyrow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                        dx[(n * g.t_in + s) * g.c_in + c] += dot;
                    }
                }
            }
        }
    }
    if let Some(dw) = dw {
        for n in 0..g.batch {
            for t in 0..g.t_out {
                let dyrow = &dy[(n * g.t_out + t) * g.c_out..(n * g.t_out + t + 1) * g.c_out];
                for j in 0..g.k {
                    let Some(s) = g.source(t, j) else { continue };
                    let xrow = &x[(n * g.t_in + s) * g.c_in..(n * g.t_in + s + 1) * g.c_in];
                    for (c, &xv) in xrow.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let dwrow =
                            &mut dw[(j * g.c_in + c) * g.c_out..(j * g.c_in + c + 1) * g.c_out];
                        for (d, gv) in dwrow.iter_mut().zip(dyrow) {
                            *d += xv * gv;
                        }
                    }
                }
            }
        }
    }
}
