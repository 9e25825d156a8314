use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::*;
use crate::error::Error;
use crate::rng::seeded;

fn arr(shape: &[usize], data: &[f64]) -> Array {
    Array::new(shape, data.to_vec()).unwrap()
}

fn random(shape: &[usize], seed: u64) -> Array {
    let mut rng = seeded(seed);
    let n = shape.iter().product();
    Array::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn brute_matmul(a: &Array, b: &Array) -> Array {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
            }
        }
    }
    Array::new(&[m, n], out).unwrap()
}

#[test]
fn matmul_matches_triple_loop() {
    let tape = Tape::new();
    let a = arr(&[2, 2], &[1., 2., 3., 4.]);
    let b = arr(&[2, 2], &[5., 6., 7., 8.]);
    let y = tape.constant(a.clone()).matmul(tape.constant(b.clone())).unwrap();
    assert_eq!(y.value().data(), &[19., 22., 43., 50.]);
    assert_eq!(*y.value(), brute_matmul(&a, &b));

    let a = random(&[3, 5], 1);
    let b = random(&[5, 4], 2);
    let y = tape.constant(a.clone()).matmul(tape.constant(b.clone())).unwrap();
    assert!(y.value().max_abs_diff(&brute_matmul(&a, &b)).unwrap() < 1e-14);
}

#[test]
fn relu_and_uniform_softmax() {
    let tape = Tape::new();
    let r = tape.constant(Array::from_vec(vec![-1., 0., 2.])).relu().unwrap();
    assert_eq!(r.value().data(), &[0., 0., 2.]);
    let s = tape.constant(Array::zeros(&[4])).softmax(0).unwrap();
    assert_eq!(s.value().data(), &[0.25; 4]);
}

#[test]
fn shape_errors_are_reported() {
    let tape = Tape::new();
    let a = tape.constant(Array::zeros(&[2, 3]));
    let b = tape.constant(Array::zeros(&[2, 3]));
    assert!(matches!(a.matmul(b), Err(Error::ShapeMismatch { .. })));
    assert!(matches!(a.softmax(2), Err(Error::InvalidAttribute { .. })));
    let c = tape.constant(Array::zeros(&[3]));
    assert!(matches!(a.add(c), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn non_finite_output_names_the_node() {
    let tape = Tape::new();
    let x = tape.leaf(Array::from_vec(vec![-1.0, 1.0]));
    let before = tape.len();
    match x.log() {
        Err(Error::NonFinite { op, node }) => {
            assert_eq!(op, "log");
            assert_eq!(node, before);
        }
        other => panic!("expected non-finite error, got {other:?}"),
    }
}

#[test]
fn sum_and_dot_gradients() {
    let tape = Tape::new();
    let x = tape.leaf(Array::from_vec(vec![0.3, -2.0, 7.0]));
    let g = tape.gradients(x.sum().unwrap(), &[x]).unwrap();
    assert_eq!(g[0].data(), &[1., 1., 1.]);

    let x = tape.leaf(Array::from_vec(vec![1.0, -4.0]));
    let y = tape.constant(Array::from_vec(vec![2.0, 5.0]));
    let g = tape.gradients(x.dot(y).unwrap(), &[x]).unwrap();
    assert_eq!(g[0].data(), &[2., 5.]);
}

#[test]
fn fan_out_accumulates() {
    let tape = Tape::new();
    let x = tape.leaf(Array::scalar(3.0));
    let y = x.add(x).unwrap();
    assert_eq!(tape.gradients(y, &[x]).unwrap()[0].data(), &[2.0]);
}

#[test]
fn backward_rejects_non_scalar_and_foreign_outputs() {
    let tape = Tape::new();
    let x = tape.leaf(Array::zeros(&[3]));
    assert!(matches!(tape.grad(x, &[x], false), Err(Error::NotScalar(_))));
    let other = Tape::new();
    let y = other.leaf(Array::scalar(1.0));
    assert!(matches!(tape.grad(y, &[x], false), Err(Error::NotOnTape)));
}

#[test]
fn unreached_leaves_get_zeros() {
    let tape = Tape::new();
    let x = tape.leaf(Array::scalar(1.0));
    let unused = tape.leaf(Array::zeros(&[2, 2]));
    let grads = tape.backward(x.scale(4.0).unwrap()).unwrap();
    assert_eq!(grads.get(&x).unwrap().data(), &[4.0]);
    assert_eq!(grads.get(&unused).unwrap(), &Array::zeros(&[2, 2]));
}

#[test]
fn grad_check_is_exact_for_linear_functions() {
    let x = random(&[7], 3);
    let err = grad_check(|_, x| x.scale(3.0)?.sum(), &x, 1e-3).unwrap();
    assert!(err < 1e-10, "{err}");
}

#[test]
fn grad_check_flags_a_corrupted_mul_rule() {
    let x = random(&[5], 4);
    let y = random(&[5], 5);
    let err = grad_check_many(
        |tape, xs| {
            tape.corrupt_mul_backward.set(true);
            xs[0].mul(xs[1])?.sum()
        },
        &[x, y],
        1e-6,
    )
    .unwrap();
    assert!(err > 1e-2, "corruption not detected: {err}");
}

#[test]
fn step_sweep_has_interior_minimum() {
    // large third derivative: truncation dominates at 1e-4, rounding at 1e-8
    let x = random(&[6], 6);
    let errs: Vec<f64> = [1e-4, 1e-6, 1e-8]
        .iter()
        .map(|&h| grad_check(|_, x| x.scale(4.0)?.exp()?.sum(), &x, h).unwrap())
        .collect();
    std::println!("step sweep 1e-4,1e-6,1e-8: {errs:?}");
    assert!(errs[1] < errs[0] && errs[1] < errs[2], "sweep {errs:?}");
}

#[test]
fn softmax_rows_are_distributions() {
    let tape = Tape::new();
    let x = random(&[4, 6], 7).scaled(20.0);
    for axis in 0..2 {
        let s = tape.constant(x.clone()).softmax(axis).unwrap();
        let sums = tape.constant((*s.value()).clone()).sum_axis(axis).unwrap();
        assert!(s.value().data().iter().all(|&v| v >= 0.0));
        assert!(sums.value().data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }
}

#[test]
fn cross_entropy_is_negative_log_softmax() {
    let tape = Tape::new();
    let logits = random(&[5, 4], 8).scaled(5.0);
    let labels = [0usize, 3, 1, 1, 2];
    let ce = tape.constant(logits.clone()).cross_entropy(&labels).unwrap();
    let sm = tape.constant(logits).softmax(1).unwrap();
    for (b, &y) in labels.iter().enumerate() {
        let expect = -libm::log(sm.value().data()[b * 4 + y]);
        assert!((ce.value().data()[b] - expect).abs() < 1e-12);
    }
    assert!(matches!(
        tape.constant(Array::zeros(&[1, 4])).cross_entropy(&[4]),
        Err(Error::LabelOutOfRange { index: 0, label: 4, classes: 4 })
    ));
}

#[test]
fn conv_kernel_grad_is_adjoint_of_conv() {
    // <conv(x, k), g> must equal <k, kernel_grad(x, g)> and <x, conv(g, flip(k))>
    let tape = Tape::new();
    let x = tape.constant(random(&[2, 3, 5, 4], 9));
    let k = tape.constant(random(&[2, 3, 3, 3], 10));
    let g = tape.constant(random(&[2, 2, 5, 4], 11));
    let lhs = x.conv2d(k).unwrap().dot(g).unwrap().item();
    let via_k = k.dot(x.conv2d_kernel_grad(g).unwrap()).unwrap().item();
    let via_x = x.dot(g.conv2d(k.kernel_flip().unwrap()).unwrap()).unwrap().item();
    assert!((lhs - via_k).abs() < 1e-12);
    assert!((lhs - via_x).abs() < 1e-12);
}

#[test]
fn second_order_gradients_match_finite_differences() {
    // h(x) = <grad f(x), v>; its gradient is the Hessian-vector product.
    let v = random(&[2, 2, 4, 4], 12);
    let k = random(&[3, 2, 3, 3], 13);
    let x = random(&[2, 2, 4, 4], 14);
    let err = grad_check(
        |tape, x| {
            let kv = tape.constant(k.clone());
            let y = x.conv2d(kv)?.sigmoid()?.avg_pool3()?.global_avg_pool()?;
            let f = y.softmax(1)?.log()?.sum()?.add(x.mul(x)?.sum()?)?;
            let g = tape.grad(f, &[x], true)?[0];
            g.dot(tape.constant(v.clone()))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn second_order_through_kernel_grad() {
    let x = random(&[2, 2, 4, 4], 15);
    let k = random(&[2, 2, 3, 3], 16);
    let v = random(&[2, 2, 3, 3], 17);
    let err = grad_check_many(
        |tape, xs| {
            let y = xs[0].conv2d(xs[1])?.relu()?.conv2d(xs[1])?;
            let f = y.mul(y)?.mean()?;
            let gk = tape.grad(f, &[xs[1]], true)?[0];
            gk.dot(tape.constant(v.clone()))
        },
        &[x, k],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn random_networks_pass_the_gradient_check() {
    for seed in 0..100 {
        let net = RandomNetwork::sample(seed);
        assert!(net.depth() <= 3);
        let err = net.check(1e-6).unwrap();
        assert!(err < 1e-5, "network {seed}: {err}");
    }
}

/// One primitive applied to random inputs, reduced to a scalar through a
/// fixed random projection.
fn positive(shape: &[usize], seed: u64, scale: f64) -> Array {
    let x = random(shape, seed);
    Array::new(shape, x.data().iter().map(|v| (scale * v).exp()).collect()).unwrap()
}

fn primitive_check(which: usize, seed: u64) -> f64 {
    let (b, n) = (2 + (seed % 2) as usize, 3);
    let proj = random(&[b, n], seed + 1);
    let labels: Vec<usize> = (0..b).map(|i| (i + seed as usize) % n).collect();
    let img = random(&[b, 2, 4, 4], seed + 2);
    let inputs: Vec<Array> = match which {
        0 => vec![random(&[b, 4], seed), random(&[4, n], seed + 3)],
        1 => vec![img, random(&[2, 2, 3, 3], seed + 3)],
        2 | 3 => vec![random(&[b, n], seed), random(&[b, n], seed + 3)],
        // keep log/sqrt/div away from zero
        4 | 5 => vec![positive(&[b, n], seed, 0.5)],
        6 => vec![random(&[b, n], seed), positive(&[b, n], seed + 3, 0.4)],
        12 => vec![img],
        _ => vec![random(&[b, n], seed)],
    };
    grad_check_many(
        |tape, xs| {
            let y = match which {
                0 => xs[0].matmul(xs[1])?,
                1 => xs[0].conv2d(xs[1])?.global_avg_pool()?.matmul(tape.constant(random(&[2, n], seed + 4)))?,
                2 => xs[0].add(xs[1])?,
                3 => xs[0].mul(xs[1])?,
                4 => xs[0].log()?,
                5 => xs[0].sqrt()?,
                6 => xs[0].div(xs[1])?,
                7 => xs[0].sigmoid()?,
                8 => xs[0].softmax(seed as usize % 2)?,
                9 => xs[0].relu()?,
                10 => return xs[0].cross_entropy(&labels)?.mean(),
                11 => concat(&[xs[0], xs[0].exp()?], 1)?.slice_axis(1, 1, n)?,
                12 => xs[0].avg_pool3()?.global_avg_pool()?.matmul(tape.constant(random(&[2, n], seed + 4)))?,
                13 => xs[0].transpose()?.reshape(&[b * n])?.reshape(&[n, b])?.transpose()?,
                14 => xs[0].sum_axis(1)?.broadcast_axis(1, n)?,
                _ => xs[0].exp()?,
            };
            y.mul(tape.constant(proj.clone()))?.sum()
        },
        &inputs,
        1e-6,
    )
    .unwrap()
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(100))]

    #[test]
    fn every_primitive_matches_finite_differences(seed in 0u64..1_000_000) {
        for which in 0..16 {
            let err = primitive_check(which, seed);
            proptest::prop_assert!(err < 1e-5, "primitive {} seed {}: {}", which, seed, err);
        }
    }

    #[test]
    fn softmax_and_cross_entropy_agree(seed in 0u64..1_000_000) {
        let tape = Tape::new();
        let x = random(&[3, 5], seed).scaled(4.0);
        let s = tape.constant(x.clone()).softmax(1).unwrap().to_array();
        let labels = [0usize, 2, 4];
        let ce = tape.constant(x).cross_entropy(&labels).unwrap().to_array();
        for i in 0..3 {
            let row = s.row(i);
            proptest::prop_assert!(row.iter().all(|&p| p >= 0.0));
            proptest::prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            proptest::prop_assert!((ce.data()[i] + row[labels[i]].ln()).abs() < 1e-12);
        }
    }
}
