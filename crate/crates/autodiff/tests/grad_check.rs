//! Centered finite-difference validation for every op's backward pass.
//!
//! Each case builds `loss = sum(op(inputs) * fixed_random_weights)` so the
//! output gradient is non-uniform, differentiates all inputs through the
//! tape, and compares against numeric differences at f64.

use autodiff::{Graph, GradCheck, Tensor, Var};
use ndarray::IxDyn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic values in (lo, hi).
fn seeded(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn tensor(shape: &[usize], vals: &[f64]) -> Tensor {
    Tensor::from_shape_vec(IxDyn(shape), vals.to_vec()).unwrap()
}

/// Check d(loss)/d(inputs) for a multi-input op. `shapes` gives each input's
/// shape; the flat parameter vector concatenates all inputs in order.
fn check_op(
    name: &str,
    shapes: &[&[usize]],
    x0: &[f64],
    build: impl Fn(&mut Graph, &[Var]) -> Var,
) {
    let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
    let total: usize = sizes.iter().sum();
    assert_eq!(x0.len(), total, "{name}: bad x0 length");

    let mut eval = |x: &[f64]| -> (f64, Vec<f64>) {
        let mut g = Graph::new();
        let mut vars = Vec::new();
        let mut off = 0;
        for (shape, &sz) in shapes.iter().zip(&sizes) {
            vars.push(g.leaf(tensor(shape, &x[off..off + sz])));
            off += sz;
        }
        let out = build(&mut g, &vars);
        let w_vals = seeded(999, g.value(out).len(), -1.0, 1.0);
        let w = g.leaf(Tensor::from_shape_vec(g.value(out).raw_dim(), w_vals).unwrap());
        let prod = g.mul(out, w);
        let loss = g.sum_all(prod);
        let grads = g.backward(loss);
        let mut flat = Vec::with_capacity(total);
        for (&v, &sz) in vars.iter().zip(&sizes) {
            match g.grad_of(&grads, v) {
                Some(t) => flat.extend(t.iter().copied()),
                None => flat.extend(std::iter::repeat(0.0).take(sz)),
            }
        }
        (g.scalar(loss), flat)
    };

    let res = GradCheck::run(x0, &mut eval);
    assert!(
        res.max_rel_err < 1e-6,
        "{name}: max rel err {}",
        res.max_rel_err
    );
}

#[test]
fn elementwise_and_activation_gradients() {
    let x = seeded(1, 12, -2.0, 2.0);
    let y = seeded(2, 12, -2.0, 2.0);
    let xy: Vec<f64> = x.iter().chain(&y).copied().collect();
    let s34: &[usize] = &[3, 4];

    check_op("add", &[s34, s34], &xy, |g, v| g.add(v[0], v[1]));
    check_op("sub", &[s34, s34], &xy, |g, v| g.sub(v[0], v[1]));
    check_op("mul", &[s34, s34], &xy, |g, v| g.mul(v[0], v[1]));
    let ypos: Vec<f64> = x.iter().copied().chain(seeded(3, 12, 0.5, 2.0)).collect();
    check_op("div", &[s34, s34], &ypos, |g, v| g.div(v[0], v[1]));
    check_op("neg", &[s34], &x, |g, v| g.neg(v[0]));
    check_op("add_scalar", &[s34], &x, |g, v| g.add_scalar(v[0], 0.7));
    check_op("mul_scalar", &[s34], &x, |g, v| g.mul_scalar(v[0], -1.3));

    let pos = seeded(4, 12, 0.2, 3.0);
    check_op("ln", &[s34], &pos, |g, v| g.ln(v[0]));
    check_op("sqrt", &[s34], &pos, |g, v| g.sqrt(v[0]));
    check_op("recip", &[s34], &pos, |g, v| g.recip(v[0]));
    check_op("exp", &[s34], &x, |g, v| g.exp(v[0]));
    check_op("sigmoid", &[s34], &x, |g, v| g.sigmoid(v[0]));
    check_op("tanh", &[s34], &x, |g, v| g.tanh(v[0]));
    // Keep kink points away from the perturbation range.
    let off: Vec<f64> = x.iter().map(|&t| if t.abs() < 0.01 { 0.5 } else { t }).collect();
    check_op("relu", &[s34], &off, |g, v| g.relu(v[0]));
    check_op("leaky_relu", &[s34], &off, |g, v| g.leaky_relu(v[0], 0.01));
}

#[test]
fn matmul_reduction_and_shape_gradients() {
    let a = seeded(5, 6, -1.0, 1.0);
    let b = seeded(6, 12, -1.0, 1.0);
    let ab: Vec<f64> = a.iter().chain(&b).copied().collect();
    check_op("matmul", &[&[2, 3], &[3, 4]], &ab, |g, v| g.matmul(v[0], v[1]));
    check_op("transpose2", &[&[2, 3]], &a, |g, v| g.transpose2(v[0]));

    let x = seeded(7, 24, -1.0, 1.0);
    let s234: &[usize] = &[2, 3, 4];
    check_op("sum_all", &[s234], &x, |g, v| g.sum_all(v[0]));
    check_op("mean_all", &[s234], &x, |g, v| g.mean_all(v[0]));
    check_op("sum_axis0", &[s234], &x, |g, v| g.sum_axis(v[0], 0));
    check_op("sum_axis1", &[s234], &x, |g, v| g.sum_axis(v[0], 1));
    check_op("sum_axis2", &[s234], &x, |g, v| g.sum_axis(v[0], 2));
    check_op("mean_axis1", &[s234], &x, |g, v| g.mean_axis(v[0], 1));
    check_op("reshape", &[s234], &x, |g, v| g.reshape(v[0], &[4, 6]));
    check_op("narrow", &[s234], &x, |g, v| g.narrow(v[0], 1, 1, 2));
    check_op("flip_last2", &[s234], &x, |g, v| g.flip_last2(v[0]));

    let y = seeded(8, 24, -1.0, 1.0);
    let xy: Vec<f64> = x.iter().chain(&y).copied().collect();
    check_op("concat_ax1", &[s234, s234], &xy, |g, v| g.concat(&[v[0], v[1]], 1));
}

#[test]
fn broadcast_helper_gradients() {
    let x = seeded(9, 12, -1.0, 1.0);
    let b = seeded(10, 4, -1.0, 1.0);
    let xb: Vec<f64> = x.iter().chain(&b).copied().collect();
    check_op("add_rows", &[&[3, 4], &[4]], &xb, |g, v| g.add_rows(v[0], v[1]));

    let s = seeded(11, 3, 0.2, 2.0);
    let xs: Vec<f64> = x.iter().chain(&s).copied().collect();
    check_op("scale_axis0", &[&[3, 4], &[3]], &xs, |g, v| {
        g.scale_axis0(v[0], v[1])
    });

    let w = seeded(12, 6, -1.0, 1.0);
    let x6 = seeded(13, 24, -1.0, 1.0);
    let xw: Vec<f64> = x6.iter().chain(&w).copied().collect();
    check_op("mul_expand_last", &[&[2, 3, 4], &[2, 3]], &xw, |g, v| {
        g.mul_expand_last(v[0], v[1])
    });

    let sc = [1.7];
    let xsc: Vec<f64> = x.iter().chain(&sc).copied().collect();
    check_op("div_by_scalar", &[&[3, 4], &[1]], &xsc, |g, v| {
        g.div_by_scalar(v[0], v[1])
    });
}

#[test]
fn softmax_family_gradients() {
    let x = seeded(14, 15, -2.0, 2.0);
    let s35: &[usize] = &[3, 5];
    check_op("softmax_last", &[s35], &x, |g, v| g.softmax_last(v[0]));
    check_op("log_softmax_last", &[s35], &x, |g, v| g.log_softmax_last(v[0]));
    check_op("gather_class", &[s35], &x, |g, v| {
        g.gather_class(v[0], &[4, 0, 2])
    });
}

#[test]
fn conv_pool_and_norm_gradients() {
    let x = seeded(15, 2 * 3 * 6 * 5, -1.0, 1.0);
    let w = seeded(16, 4 * 3 * 3 * 3, -0.5, 0.5);
    let bias = seeded(17, 4, -0.5, 0.5);
    let all: Vec<f64> = x.iter().chain(&w).chain(&bias).copied().collect();
    check_op(
        "conv2d",
        &[&[2, 3, 6, 5], &[4, 3, 3, 3], &[4]],
        &all,
        |g, v| g.conv2d(v[0], v[1], Some(v[2]), (2, 1), (1, 1)),
    );

    // Max pooling: keep values well separated so the argmax is FD-stable.
    let mut xp = seeded(18, 1 * 2 * 4 * 4, -1.0, 1.0);
    for (i, v) in xp.iter_mut().enumerate() {
        *v += (i % 7) as f64 * 0.5;
    }
    check_op("maxpool2d", &[&[1, 2, 4, 4]], &xp, |g, v| {
        g.maxpool2d(v[0], (2, 2), (2, 2))
    });

    let x4 = seeded(19, 2 * 3 * 2 * 2, -1.0, 1.0);
    check_op("global_avg_pool", &[&[2, 3, 2, 2]], &x4, |g, v| {
        g.global_avg_pool(v[0])
    });

    let gamma = seeded(20, 3, 0.5, 1.5);
    let beta = seeded(21, 3, -0.5, 0.5);
    let bn_all: Vec<f64> = x4.iter().chain(&gamma).chain(&beta).copied().collect();
    check_op(
        "batchnorm2d_train",
        &[&[2, 3, 2, 2], &[3], &[3]],
        &bn_all,
        |g, v| g.batchnorm2d_train(v[0], v[1], v[2], 1e-5).0,
    );
    let rm = ndarray::Array1::from_vec(seeded(22, 3, -0.5, 0.5));
    let rv = ndarray::Array1::from_vec(seeded(23, 3, 0.5, 1.5));
    check_op(
        "batchnorm2d_eval",
        &[&[2, 3, 2, 2], &[3], &[3]],
        &bn_all,
        move |g, v| g.batchnorm2d_eval(v[0], v[1], v[2], &rm, &rv, 1e-5),
    );
}

#[test]
fn composed_network_gradient() {
    // A miniature conv -> bn -> leaky-relu -> gap -> linear -> log-softmax
    // pipeline, differentiated end to end through every op at once.
    let sizes: &[&[usize]] = &[
        &[2, 1, 6, 6],  // x
        &[3, 1, 3, 3],  // conv w
        &[3],           // conv b
        &[3],           // gamma
        &[3],           // beta
        &[3, 4],        // fc w
        &[4],           // fc b
    ];
    let total: usize = sizes.iter().map(|s| s.iter().product::<usize>()).sum();
    let x0 = seeded(24, total, -0.8, 0.8);
    check_op("mini_net", sizes, &x0, |g, v| {
        let c = g.conv2d(v[0], v[1], Some(v[2]), (1, 1), (1, 1));
        let (bn, _, _) = g.batchnorm2d_train(c, v[3], v[4], 1e-5);
        let a = g.leaky_relu(bn, 0.01);
        let f = g.global_avg_pool(a);
        let z = g.linear(f, v[5], v[6]);
        g.log_softmax_last(z)
    });
}

#[test]
fn dropout_scales_and_masks_consistently() {
    let mut g = Graph::new();
    let x = g.leaf(tensor(&[1000], &vec![1.0; 1000]));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = g.dropout(x, 0.25, true, &mut rng);
    let v = g.value(d).clone();
    let kept = v.iter().filter(|&&t| t != 0.0).count();
    assert!((kept as f64 - 750.0).abs() < 60.0, "kept {kept}");
    for &t in v.iter() {
        assert!(t == 0.0 || (t - 1.0 / 0.75).abs() < 1e-12);
    }
    // Backward passes gradient only through survivors, with the same scale.
    let s = g.sum_all(d);
    let grads = g.backward(s);
    let gx = g.grad_of(&grads, x).unwrap();
    for (a, b) in v.iter().zip(gx.iter()) {
        assert_eq!(*a != 0.0, *b != 0.0);
    }
    // Eval mode is the identity.
    let mut g2 = Graph::new();
    let x2 = g2.leaf(tensor(&[4], &[1.0, 2.0, 3.0, 4.0]));
    let d2 = g2.dropout(x2, 0.25, false, &mut rng);
    assert_eq!(g2.value(d2), g2.value(x2));
}
