//! Finite-difference sweep over every differentiable primitive, first and
//! second order. Shared by the unit tests and the `selftest` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{concat, finite_difference_check, Result, Tensor, Var};

#[derive(Clone, Copy)]
enum Domain {
    Any,
    Positive,
    Unit,
    AwayFromZero,
}

fn sample(rng: &mut ChaCha8Rng, shape: &[usize], domain: Domain) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| match domain {
            Domain::Any => rng.gen_range(-2.0..2.0),
            Domain::Positive => rng.gen_range(0.5..2.5),
            Domain::Unit => rng.gen_range(-0.9..0.9),
            Domain::AwayFromZero => {
                let m: f64 = rng.gen_range(0.2..2.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            }
        })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Reduces a node to a scalar with fixed, uneven weights so every output
/// entry contributes a distinct amount.
fn weighted<'g>(out: Var<'g>) -> Result<Var<'g>> {
    let shape = out.shape();
    let n: usize = shape.iter().product();
    let w = (0..n).map(|i| if i % 2 == 0 { 1.0 + 0.37 * (i % 5) as f64 } else { -0.6 - 0.21 * (i % 3) as f64 });
    let w = out.graph().constant(Tensor::new(shape, w.collect())?);
    out.mul(w)?.sum()
}

type Case = (&'static str, Vec<(Vec<usize>, Domain)>, for<'a, 'g> fn(&'a [Var<'g>]) -> Result<Var<'g>>);

fn cases() -> Vec<Case> {
    use Domain::*;
    let m23 = || (vec![2, 3], Any);
    vec![
        ("add", vec![m23(), m23()], |x| weighted(x[0].add(x[1])?)),
        ("sub", vec![m23(), m23()], |x| weighted(x[0].sub(x[1])?)),
        ("mul", vec![m23(), m23()], |x| weighted(x[0].mul(x[1])?)),
        ("div", vec![m23(), (vec![2, 3], Positive)], |x| weighted(x[0].div(x[1])?)),
        ("neg", vec![m23()], |x| weighted(x[0].neg()?)),
        ("scale", vec![m23()], |x| weighted(x[0].scale(1.7)?)),
        ("add_const", vec![m23()], |x| weighted(x[0].add_const(0.3)?.square()?)),
        ("scale_by", vec![(vec![], Any), m23()], |x| weighted(x[0].scale_by_tensor(x[1])?)),
        ("add_scalar", vec![m23(), (vec![1], Any)], |x| weighted(x[0].add_scalar(x[1])?.square()?)),
        ("add_bias", vec![(vec![3, 4], Any), (vec![4], Any)], |x| weighted(x[0].add_bias(x[1])?.square()?)),
        ("matmul", vec![m23(), (vec![3, 4], Any)], |x| weighted(x[0].matmul(x[1])?)),
        ("transpose", vec![m23()], |x| weighted(x[0].transpose()?.square()?)),
        ("linear", vec![(vec![3, 2], Any), (vec![4, 2], Any), (vec![4], Any)], |x| {
            weighted(x[0].linear(x[1], x[2])?.square()?)
        }),
        ("sum", vec![m23()], |x| x[0].sum()?.square()),
        ("mean", vec![m23()], |x| x[0].mean()?.square()),
        ("expand", vec![(vec![], Any)], |x| weighted(x[0].expand(&[2, 2])?.square()?)),
        ("sum_rows", vec![m23()], |x| weighted(x[0].sum_rows()?.square()?)),
        ("broadcast_rows", vec![(vec![3], Any)], |x| weighted(x[0].broadcast_rows(2)?.square()?)),
        ("row_sum", vec![m23()], |x| weighted(x[0].row_sum()?.square()?)),
        ("broadcast_cols", vec![(vec![2], Any)], |x| weighted(x[0].broadcast_cols(3)?.square()?)),
        ("relu", vec![(vec![2, 3], AwayFromZero)], |x| weighted(x[0].relu()?)),
        ("sigmoid", vec![m23()], |x| weighted(x[0].sigmoid()?)),
        ("sin", vec![m23()], |x| weighted(x[0].sin()?)),
        ("cos", vec![m23()], |x| weighted(x[0].cos()?)),
        ("exp", vec![m23()], |x| weighted(x[0].exp()?)),
        ("sqrt", vec![(vec![2, 3], Positive)], |x| weighted(x[0].sqrt()?)),
        ("abs", vec![(vec![2, 3], AwayFromZero)], |x| weighted(x[0].abs()?)),
        ("acos", vec![(vec![2, 3], Unit)], |x| weighted(x[0].acos()?)),
        ("log_softmax", vec![m23()], |x| weighted(x[0].log_softmax()?)),
        ("reshape", vec![m23()], |x| weighted(x[0].reshape(&[3, 2])?.square()?)),
        ("concat", vec![m23(), (vec![2], Any)], |x| weighted(concat(&[x[0], x[1]])?.square()?)),
        ("slice", vec![(vec![5], Any)], |x| weighted(x[0].slice(1, 3)?.square()?)),
        ("pad", vec![(vec![3], Any)], |x| weighted(x[0].pad(1, 5)?.square()?)),
        ("scale_rows", vec![m23(), (vec![2], Any)], |x| weighted(x[0].scale_rows(x[1])?)),
        ("mse", vec![m23(), m23()], |x| x[0].mse(x[1])),
        ("cross_entropy", vec![(vec![3, 4], Any)], |x| x[0].softmax_cross_entropy(&[2, 0, 3])),
        ("dot", vec![m23(), m23()], |x| x[0].dot(x[1])),
        ("l2_norm", vec![(vec![2, 3], AwayFromZero)], |x| x[0].l2_norm()),
    ]
}

/// Worst relative errors seen for one primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveCheck {
    pub name: &'static str,
    pub first_order: f64,
    pub second_order: f64,
}

/// `first_draws` random points per primitive for the gradient and
/// `second_draws` for the gradient of the (weighted) gradient.
pub fn primitive_sweep(seed: u64, first_draws: usize, second_draws: usize) -> Result<Vec<PrimitiveCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, inputs, f) in cases() {
        let mut first_order = 0.0f64;
        for _ in 0..first_draws {
            let point: Vec<Tensor> = inputs.iter().map(|(s, d)| sample(&mut rng, s, *d)).collect();
            first_order = first_order.max(finite_difference_check(|_, x| f(x), &point, 1e-5)?);
        }
        let mut second_order = 0.0f64;
        for _ in 0..second_draws {
            let point: Vec<Tensor> = inputs.iter().map(|(s, d)| sample(&mut rng, s, *d)).collect();
            let err = finite_difference_check(
                |g, x| {
                    let grads = g.grad(f(x)?, x, true)?;
                    let mut total = weighted(grads[0])?;
                    for gr in &grads[1..] {
                        total = total.add(weighted(*gr)?)?;
                    }
                    Ok(total)
                },
                &point,
                1e-5,
            )?;
            second_order = second_order.max(err);
        }
        out.push(PrimitiveCheck { name, first_order, second_order });
    }
    Ok(out)
}
