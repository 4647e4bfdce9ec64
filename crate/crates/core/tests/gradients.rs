mod common;

use common::{grad_check, gradcheck_model, model_grad_check, primitive_cases};

const TOL: f64 = 1e-4;

#[test]
fn every_primitive_matches_finite_differences() {
    for (name, inputs, f) in primitive_cases() {
        let r = grad_check(&inputs, f);
        assert!(r.checked > 0, "{name}: nothing checked");
        assert!(r.max_rel < TOL, "{name}: {r:?}");
    }
}

#[test]
fn full_model_loss_matches_finite_differences() {
    let (model, window) = gradcheck_model();
    let r = model_grad_check(&model, &window);
    assert_eq!(r.checked, model.params.n_scalars());
    assert!(r.max_rel < TOL, "{r:?}");
}

#[test]
fn gradients_of_a_chain_of_primitives() {
    // tanh(LN(x) · W) through softmax, summed with a relu branch.
    let x = common::random_tensor(&[3, 4], 1, 1.0, 0.05);
    let w = common::random_tensor(&[4, 4], 2, 1.0, 0.05);
    let g = common::random_tensor(&[4], 3, 1.0, 0.5);
    let b = common::random_tensor(&[4], 4, 1.0, 0.05);
    let r = grad_check(&[x, w, g, b], |t, v| {
        let n = t.layer_norm(v[0], v[2], v[3], 1e-5)?;
        let p = t.matmul(n, v[1])?;
        let s = t.softmax_lastdim(p)?;
        let h = t.tanh(p);
        let h = t.relu(h);
        t.add(s, h)
    });
    assert!(r.max_rel < TOL, "{r:?}");
}
