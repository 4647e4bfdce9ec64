//! Test-only oracles: central finite differences and small fixtures.
#![allow(dead_code)]

pub mod checks;

use maginet::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Relative-error denominators never drop below this, so gradients that are
/// zero up to rounding compare by absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    pub max_rel: f64,
    /// `(input, flat index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Uniform values in `±scale` kept at least `margin` away from zero.
pub fn random_tensor(shape: &[usize], seed: u64, scale: f64, margin: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(margin..scale);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces any output to a scalar with fixed pseudo-random weights, so every
/// output entry feeds the checked gradient.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = tape.shape(out).to_vec();
    let r = random_tensor(&shape, seed ^ 0xabcdef, 1.0, 0.1);
    let rv = tape.constant(r);
    let prod = tape.mul(out, rv).unwrap();
    tape.sum(prod)
}

/// Compares reverse-mode gradients of `f` with central differences with
/// respect to every entry of every input.
pub fn grad_check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> maginet::Result<Var>) -> GradReport {
    let value = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        let out = if tape.value(out).numel() == 1 { out } else { project(&mut tape, out, 5) };
        tape.value(out).item().unwrap()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let out = if tape.value(out).numel() == 1 { out } else { project(&mut tape, out, 5) };
    tape.backward(out).unwrap();
    let grads: Vec<Vec<f64>> = vars.iter().map(|v| tape.grad(*v).unwrap().to_vec()).collect();

    let mut report = GradReport {
        max_rel: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut xs = inputs.to_vec();
    for (i, g) in grads.iter().enumerate() {
        for j in 0..g.len() {
            let orig = xs[i].data()[j];
            if !orig.is_finite() {
                continue;
            }
            xs[i].data_mut()[j] = orig + FD_STEP;
            let up = value(&xs);
            xs[i].data_mut()[j] = orig - FD_STEP;
            let down = value(&xs);
            xs[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let e = rel_err(g[j], numeric);
            report.checked += 1;
            if e > report.max_rel {
                report = GradReport {
                    max_rel: e,
                    worst: (i, j),
                    analytic: g[j],
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    report
}

use maginet::model::MagiNet;
use maginet::train::masked_l1_loss;

/// Loss of `model` on one window, recorded on `tape`.
fn model_loss(model: &MagiNet, tape: &mut Tape, trainable: bool, w: &maginet::data::IncompleteWindow) -> (Var, maginet::model::Bound) {
    let bound = model.params.bind(tape, trainable);
    let xhat = model.forward(tape, &bound, &w.x, &w.m).unwrap();
    (masked_l1_loss(tape, xhat, &w.ground_truth, &w.eval_mask).unwrap(), bound)
}

/// [`grad_check`] for the masked L1 loss of a whole model with respect to
/// every parameter scalar.
pub fn model_grad_check(model: &MagiNet, w: &maginet::data::IncompleteWindow) -> GradReport {
    let mut tape = Tape::new();
    let mut with_grads = model.clone();
    let (loss, bound) = model_loss(model, &mut tape, true, w);
    tape.backward(loss).unwrap();
    with_grads.params.zero_grad();
    with_grads.params.absorb_grads(&tape, &bound);

    let value = |m: &MagiNet| {
        let mut tape = Tape::new();
        let (loss, _) = model_loss(m, &mut tape, false, w);
        tape.value(loss).item().unwrap()
    };
    let mut report = GradReport {
        max_rel: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = model.clone();
    let names: Vec<String> = model.params.names().map(String::from).collect();
    for (i, name) in names.iter().enumerate() {
        let g = with_grads.params.get(name).unwrap().grad().unwrap().to_vec();
        for (j, &a) in g.iter().enumerate() {
            let orig = probe.params.get(name).unwrap().data()[j];
            probe.params.get_mut(name).unwrap().data_mut()[j] = orig + FD_STEP;
            let up = value(&probe);
            probe.params.get_mut(name).unwrap().data_mut()[j] = orig - FD_STEP;
            let down = value(&probe);
            probe.params.get_mut(name).unwrap().data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel {
                report = GradReport {
                    max_rel: e,
                    worst: (i, j),
                    analytic: a,
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    report
}

/// The gradient-check instance: N=4, W=8, C=1, d=4, m=2, K=2, L=1.
pub fn gradcheck_model() -> (MagiNet, maginet::data::IncompleteWindow) {
    use maginet::data::IncompleteWindow;
    use maginet::graph::TrafficGraph;
    use maginet::model::{Dims, ModelConfig};
    let cfg = ModelConfig {
        hidden: 4,
        heads: 2,
        head_dim: 2,
        spatial_dim: 3,
        cheb_order: 2,
        kernel_sizes: vec![3, 5],
        blocks: 1,
        ..Default::default()
    };
    let dims = Dims {
        n_nodes: 4,
        window: 8,
        n_features: 1,
    };
    let g = TrafficGraph::from_edges(4, &[(0, 1, 1.0), (1, 2, 0.5), (2, 3, 2.0), (3, 0, 1.0)]).unwrap();
    let model = MagiNet::new(cfg, dims, &g, 17).unwrap();
    let truth = random_tensor(&[4, 8, 1], 3, 1.5, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut m = Tensor::zeros([4, 8]);
    let mut e = Tensor::zeros([4, 8]);
    let mut x = Tensor::zeros([4, 8, 1]);
    for i in 0..4 {
        for t in 0..8 {
            if rng.random_bool(0.6) {
                m.set(&[i, t], 1.0);
                x.set(&[i, t, 0], truth.at(&[i, t, 0]));
            } else {
                e.set(&[i, t], 1.0);
            }
        }
    }
    (model, IncompleteWindow::new(x, m, e, truth, 0).unwrap())
}

type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> maginet::Result<Var>>);

/// One gradient case per tape primitive.
pub fn primitive_cases() -> Vec<Case> {
    use maginet::tensor::PadMode;
    let r = |shape: &[usize], seed: u64| random_tensor(shape, seed, 1.0, 0.05);
    let mut mask = Tensor::full([2, 3, 4], 1.0);
    mask.set(&[0, 1, 2], 0.0);
    mask.set(&[1, 0, 0], 0.0);
    mask.set(&[1, 2, 3], 0.0);
    let m1 = mask.clone();
    let m2 = mask.clone();
    let m3 = mask;
    vec![
        ("add", vec![r(&[2, 3], 1), r(&[2, 3], 2)], Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1]))),
        ("sub", vec![r(&[2, 3], 3), r(&[2, 3], 4)], Box::new(|t: &mut Tape, v: &[Var]| t.sub(v[0], v[1]))),
        ("mul", vec![r(&[2, 3], 5), r(&[2, 3], 6)], Box::new(|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1]))),
        ("scale", vec![r(&[4], 7)], Box::new(|t: &mut Tape, v: &[Var]| Ok(t.scale(v[0], -2.5)))),
        ("add_scalar", vec![r(&[4], 8)], Box::new(|t: &mut Tape, v: &[Var]| Ok(t.add_scalar(v[0], 0.7)))),
        ("tanh", vec![r(&[5], 9)], Box::new(|t: &mut Tape, v: &[Var]| Ok(t.tanh(v[0])))),
        ("sigmoid", vec![r(&[5], 10)], Box::new(|t: &mut Tape, v: &[Var]| Ok(t.sigmoid(v[0])))),
        ("relu", vec![r(&[6], 11)], Box::new(|t: &mut Tape, v: &[Var]| Ok(t.relu(v[0])))),
        ("abs", vec![r(&[6], 12)], Box::new(|t: &mut Tape, v: &[Var]| Ok(t.abs(v[0])))),
        ("matmul", vec![r(&[2, 3, 4], 13), r(&[2, 4, 2], 14)], Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1]))),
        ("matmul_shared", vec![r(&[2, 3, 4], 15), r(&[4, 5], 16)], Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1]))),
        ("matmul_shared_left", vec![r(&[3, 3], 17), r(&[2, 3, 2], 18)], Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1]))),
        ("transpose_last", vec![r(&[2, 3, 4], 19)], Box::new(|t: &mut Tape, v: &[Var]| t.transpose_last(v[0]))),
        ("reshape", vec![r(&[2, 6], 20)], Box::new(|t: &mut Tape, v: &[Var]| t.reshape(v[0], &[3, 4]))),
        ("broadcast_to", vec![r(&[3], 21)], Box::new(|t: &mut Tape, v: &[Var]| t.broadcast_to(v[0], &[2, 4, 3]))),
        ("concat", vec![r(&[2, 2, 3], 22), r(&[2, 1, 3], 23)], Box::new(|t: &mut Tape, v: &[Var]| t.concat(&[v[0], v[1]], 1))),
        ("slice", vec![r(&[2, 5, 3], 24)], Box::new(|t: &mut Tape, v: &[Var]| t.slice(v[0], 1, 1, 3))),
        ("sum", vec![r(&[2, 3], 25)], Box::new(|t: &mut Tape, v: &[Var]| {
            let s = t.sum(v[0]);
            let sq = t.mul(s, s)?;
            Ok(sq)
        })),
        ("mean", vec![r(&[2, 3], 26)], Box::new(|t: &mut Tape, v: &[Var]| {
            let s = t.mean(v[0]);
            t.mul(s, s)
        })),
        ("mean_axis", vec![r(&[2, 3, 4], 27)], Box::new(|t: &mut Tape, v: &[Var]| t.mean_axis(v[0], 1))),
        ("softmax", vec![r(&[3, 4], 28)], Box::new(|t: &mut Tape, v: &[Var]| t.softmax_lastdim(v[0]))),
        ("softmax_masked", vec![r(&[2, 3, 4], 29)], Box::new(move |t: &mut Tape, v: &[Var]| {
            let f = t.masked_fill(v[0], &m1, f64::NEG_INFINITY)?;
            t.softmax_lastdim(f)
        })),
        ("layer_norm", vec![r(&[3, 5], 30), r(&[5], 31), r(&[5], 32)], Box::new(|t: &mut Tape, v: &[Var]| t.layer_norm(v[0], v[1], v[2], 1e-5))),
        ("conv1d_same", vec![r(&[2, 6, 3], 33), r(&[3, 3, 2], 34)], Box::new(|t: &mut Tape, v: &[Var]| t.conv1d_time(v[0], v[1], PadMode::Same))),
        ("conv1d_valid", vec![r(&[2, 6, 2], 35), r(&[4, 2, 3], 36)], Box::new(|t: &mut Tape, v: &[Var]| t.conv1d_time(v[0], v[1], PadMode::Valid))),
        ("where_mask", vec![r(&[2, 3, 4], 37), r(&[2, 3, 4], 38)], Box::new(move |t: &mut Tape, v: &[Var]| t.where_mask(&m2, v[0], v[1]))),
        ("masked_fill", vec![r(&[2, 3, 4], 39)], Box::new(move |t: &mut Tape, v: &[Var]| t.masked_fill(v[0], &m3, 3.0))),
    ]
}
