//! End-to-end gradient check of the generator network: every weight of a
//! small encoder-decoder is verified against central finite differences
//! through conv, batch norm, leaky ReLU, upsampling and the complex output
//! head at once.

use dptomo_autodiff::dip::{DipConfig, DipNetwork};
use dptomo_autodiff::gradcheck::{fd_gradient, relative_l2_error};
use dptomo_autodiff::{TapeGraph, Value};
use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_net() -> DipNetwork {
    // 8^3 at depth 2 keeps the bottleneck at 2^3: batch-norm variances stay
    // positive, so activations sit at generic points rather than exactly on
    // the leaky-ReLU kink where finite differences are meaningless.
    let cfg = DipConfig {
        depth: 2,
        base_channels: 2,
        max_channels: 4,
        input_channels: 2,
        output_features: 2,
        bn_eps: 1e-3, // keeps the finite-difference quotient well conditioned
        ..DipConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    DipNetwork::new(cfg, [8, 8, 8], &mut rng).unwrap()
}

#[test]
fn generator_weights_match_finite_differences() {
    let net = tiny_net();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    // Random perturbation moves batch-norm scales/offsets off their identity
    // init, putting every layer at a generic operating point.
    let params: Vec<Value> = net
        .init_params(&mut rng)
        .into_iter()
        .map(|(_, mut v)| {
            for i in 0..v.dof_count() {
                let x = v.dof(i);
                v.set_dof(i, x + 0.3 * (rng.random::<f64>() - 0.5));
            }
            v
        })
        .collect();
    let target = {
        let mut r = ChaCha8Rng::seed_from_u64(23);
        ArrayD::from_shape_fn(IxDyn(&[8, 8, 8]), |_| {
            Complex64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5)
        })
    };

    let build = |t: &mut TapeGraph, vals: &[Value]| {
        let ids: Vec<_> = vals.iter().map(|v| t.leaf(v.clone())).collect();
        let out = net.generate(t, &ids);
        let c = t.constant(Value::Complex(target.clone()));
        let d = t.sub(out, c);
        let a = t.abs_sq(d);
        let l = t.sum(a);
        (ids, l)
    };

    let eval = |vals: &[Value]| {
        let mut t = TapeGraph::new();
        let (_, l) = build(&mut t, vals);
        t.value(l).scalar_value()
    };

    let mut t = TapeGraph::new();
    let (ids, l) = build(&mut t, &params);
    let mut grads = t.backward(l);
    let analytic: Vec<Value> = ids
        .iter()
        .zip(&params)
        .map(|(id, p)| grads.take(*id).unwrap_or_else(|| p.zeros_like()))
        .collect();

    let fd = fd_gradient(eval, &params, 1e-6);
    let err = relative_l2_error(&analytic, &fd);
    assert!(err < 1e-4, "generator gradient error {err}");
}

#[test]
fn region_crop_gradients_flow() {
    // A patch forward must still reach every weight (fully convolutional).
    let net = tiny_net();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let params: Vec<Value> = net.init_params(&mut rng).into_iter().map(|(_, v)| v).collect();

    let mut t = TapeGraph::new();
    let ids: Vec<_> = params.iter().map(|v| t.leaf(v.clone())).collect();
    let out = net.generate_region(&mut t, &ids, [4, 0, 0], [4, 4, 4], true);
    let a = t.abs_sq(out);
    let l = t.sum(a);
    let grads = t.backward(l);
    for (id, p) in ids.iter().zip(&params) {
        let g = grads.get(*id);
        assert!(g.is_some(), "missing gradient for a generator weight");
        assert_eq!(g.unwrap().shape(), p.shape());
    }
}
