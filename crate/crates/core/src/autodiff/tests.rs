use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn v<'g>(graph: &'g Graph, data: &[f64]) -> Var<'g> {
    graph.param(Tensor::vector(data.to_vec()))
}

#[test]
fn primitive_values() {
    let g = Graph::new();
    assert_eq!(g.scalar(0.0).sigmoid().unwrap().item(), 0.5);
    assert_eq!(g.scalar(-2.0).relu().unwrap().item(), 0.0);
    assert_eq!(v(&g, &[1.0, 2.0, 3.0, 6.0]).mean().unwrap().item(), 3.0);
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3, 2]));
    let err = a.add(b).unwrap_err();
    assert_eq!(err, AutodiffError::ShapeMismatch { op: "add", lhs: vec![2, 3], rhs: vec![3, 2] });
    let msg = a.matmul(a).unwrap_err().to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn non_finite_results_are_errors() {
    let g = Graph::new();
    let err = g.scalar(2.0).acos().unwrap_err();
    assert_eq!(err, AutodiffError::NonFinite { op: "acos" });
}

#[test]
fn power_rule_first_and_second_order() {
    let g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = x.square().unwrap();
    let dx = g.grad(y, &[x], true).unwrap()[0];
    assert_eq!(dx.item(), 6.0);
    let ddx = g.grad(dx, &[x], false).unwrap()[0];
    assert_eq!(ddx.item(), 2.0);
}

#[test]
fn sigmoid_slope_at_zero() {
    let g = Graph::new();
    let x = g.param(Tensor::scalar(0.0));
    let y = x.sigmoid().unwrap();
    assert_eq!(g.grad(y, &[x], false).unwrap()[0].item(), 0.25);
}

#[test]
fn non_scalar_output_is_rejected() {
    let g = Graph::new();
    let x = v(&g, &[1.0, 2.0]);
    let err = g.grad(x.sin().unwrap(), &[x], false).unwrap_err();
    assert!(matches!(err, AutodiffError::NonScalarOutput { .. }));
}

#[test]
fn unreachable_wrt_gets_zero_gradient() {
    let g = Graph::new();
    let x = v(&g, &[1.0, 2.0]);
    let unused = g.param(Tensor::zeros(&[2, 2]));
    let y = x.sum().unwrap();
    let grads = g.grad(y, &[x, unused], false).unwrap();
    assert_eq!(grads[0].value().data(), &[1.0, 1.0]);
    assert_eq!(grads[1].value().as_ref(), &Tensor::zeros(&[2, 2]));
}

#[test]
fn finite_difference_check_on_quadratic_and_sine() {
    let err = finite_difference_check(|_, x| x[0].square(), &[Tensor::scalar(3.0)], 1e-5).unwrap();
    assert!(err < 1e-6, "{err}");
    let err = finite_difference_check(|_, x| x[0].sin()?.sum(), &[Tensor::scalar(1.0)], 1e-5).unwrap();
    assert!(err < 1e-6, "{err}");
    // the numeric derivative itself lands on cos(1)
    let numeric = central_difference(&|_: &Graph, x: &[Var<'_>]| x[0].sin(), &[Tensor::scalar(1.0)], 1e-5).unwrap();
    assert!((numeric[0].data()[0] - 1f64.cos()).abs() < 1e-9);
}

#[test]
fn finite_difference_check_rejects_non_finite() {
    let err = finite_difference_check(|_, x| x[0].acos(), &[Tensor::scalar(1.0)], 1e-3);
    assert!(err.is_err());
    assert!(finite_difference_check(|_, x| x[0].square(), &[Tensor::scalar(1.0)], 0.0).is_err());
}

#[test]
fn third_power_second_derivative() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let x0: f64 = rng.gen_range(-10.0..10.0);
        let g = Graph::new();
        let x = g.param(Tensor::scalar(x0));
        let y = x.mul(x).unwrap().mul(x).unwrap();
        let d1 = g.grad(y, &[x], true).unwrap()[0];
        let d2 = g.grad(d1, &[x], false).unwrap()[0].item();
        let expected = 6.0 * x0;
        assert!((d2 - expected).abs() <= 1e-8 * expected.abs().max(1e-300), "{d2} vs {expected}");
    }
}

#[test]
fn batch_gradient_is_sum_of_example_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let xs: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |g: &Graph, rows: &[f64]| {
        let weight = g.param(Tensor::matrix(3, 2, w.clone()).unwrap());
        let x = g.constant(Tensor::matrix(rows.len() / 2, 2, rows.to_vec()).unwrap());
        let b = g.constant(Tensor::zeros(&[3]));
        let out = x.linear(weight, b).unwrap().sin().unwrap().sum().unwrap();
        g.grad(out, &[weight], false).unwrap()[0].value().data().to_vec()
    };
    let whole = loss(&Graph::new(), &xs);
    let mut summed = vec![0.0; 6];
    for row in xs.chunks(2) {
        for (s, v) in summed.iter_mut().zip(loss(&Graph::new(), row)) {
            *s += v;
        }
    }
    for (a, b) in whole.iter().zip(&summed) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}

#[test]
fn create_graph_does_not_change_first_order_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let run = |create: bool| {
        let g = Graph::new();
        let weight = g.param(Tensor::matrix(4, 3, w.clone()).unwrap());
        let bias = g.param(Tensor::vector(vec![0.1, -0.2, 0.3, 0.0]));
        let x = g.constant(Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.2, -0.7]).unwrap());
        let out = x.linear(weight, bias).unwrap().relu().unwrap().sigmoid().unwrap().sum().unwrap();
        g.grad(out, &[weight, bias], create)
            .unwrap()
            .iter()
            .map(|t| t.value().data().to_vec())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(false), run(true));
}

#[test]
fn no_grad_records_constants() {
    let g = Graph::new();
    let x = g.param(Tensor::scalar(2.0));
    let y = g.no_grad(|| x.square().unwrap());
    assert!(!y.requires_grad());
    assert!(x.square().unwrap().requires_grad());
}

#[test]
fn every_primitive_matches_finite_differences() {
    // second order: the backward rules must themselves be differentiable
    let report = super::primitive_sweep(2024, 100, 10).unwrap();
    assert!(report.len() >= 38);
    for r in report {
        assert!(r.first_order < 1e-5, "{}: first-order relative error {}", r.name, r.first_order);
        assert!(r.second_order < 1e-4, "{}: second-order relative error {}", r.name, r.second_order);
    }
}
