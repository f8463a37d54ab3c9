//! Finite-difference agreement for every differentiable op.

use lbanp_tensor::{grad_check, GradCheckOptions, Graph, Result, Tensor, TensorError, Var};
use proptest::prelude::*;

fn tensor(shape: &[usize]) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    let shape = shape.to_vec();
    prop::collection::vec(-1.0f64..1.0, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

/// Contract the output against fixed weights so every output coordinate
/// contributes a distinct gradient.
fn weighted_sum(g: &mut Graph, y: Var) -> Result<Var> {
    let n = g.value(y).numel();
    let w = Tensor::new(
        g.shape(y).to_vec(),
        (0..n).map(|i| 0.3 + ((i * 7919) % 13) as f64 / 13.0).collect(),
    )?;
    let w = g.input(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check<F>(params: Vec<Tensor>, f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let report = grad_check(&params, |g, v| {
        let y = f(g, v)?;
        weighted_sum(g, y)
    }, &GradCheckOptions::default())
    .unwrap();
    report.max_rel_error
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_grads(a in tensor(&[2, 3, 4]), b in tensor(&[4, 2])) {
        prop_assert!(check(vec![a, b], |g, v| g.matmul(v[0], v[1])) < 1e-4);
    }

    #[test]
    fn batched_matmul_grads(a in tensor(&[2, 3, 4]), b in tensor(&[2, 4, 3])) {
        prop_assert!(check(vec![a, b], |g, v| g.matmul(v[0], v[1])) < 1e-4);
    }

    #[test]
    fn pointwise_grads(a in tensor(&[3, 4])) {
        for f in [
            |g: &mut Graph, x: Var| g.gelu(x),
            |g: &mut Graph, x: Var| g.softplus(x),
            |g: &mut Graph, x: Var| g.exp(x),
            |g: &mut Graph, x: Var| g.neg(x),
            |g: &mut Graph, x: Var| g.square(x),
        ] {
            prop_assert!(check(vec![a.clone()], |g, v| f(g, v[0])) < 1e-4);
        }
        // log on a shifted positive domain
        let pos = a.map(|x| x + 1.5);
        prop_assert!(check(vec![pos], |g, v| g.log(v[0])) < 1e-4);
    }

    #[test]
    fn relu_grads_away_from_kink(a in tensor(&[3, 4])) {
        let a = a.map(|x| if x.abs() < 0.05 { x + 0.1 } else { x });
        prop_assert!(check(vec![a], |g, v| g.relu(v[0])) < 1e-4);
    }

    #[test]
    fn broadcast_binary_grads(a in tensor(&[2, 3, 4]), b in tensor(&[4])) {
        prop_assert!(check(vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1])) < 1e-4);
        prop_assert!(check(vec![a.clone(), b.clone()], |g, v| g.sub(v[1], v[0])) < 1e-4);
        prop_assert!(check(vec![a.clone(), b.clone()], |g, v| g.mul(v[0], v[1])) < 1e-4);
        let b_pos = b.map(|x| x.abs() + 0.5);
        prop_assert!(check(vec![a, b_pos], |g, v| g.div(v[0], v[1])) < 1e-4);
    }

    #[test]
    fn softmax_grads(a in tensor(&[2, 3, 4])) {
        for axis in 0..3 {
            prop_assert!(check(vec![a.clone()], |g, v| g.softmax(v[0], axis)) < 1e-4);
        }
    }

    #[test]
    fn layer_norm_grads(x in tensor(&[3, 5]), gamma in tensor(&[5]), beta in tensor(&[5])) {
        prop_assert!(check(vec![x, gamma, beta], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)) < 1e-4);
    }

    #[test]
    fn reduction_and_shape_grads(x in tensor(&[2, 3, 4])) {
        prop_assert!(check(vec![x.clone()], |g, v| g.sum_axis(v[0], 1)) < 1e-4);
        prop_assert!(check(vec![x.clone()], |g, v| g.mean_axis(v[0], 2)) < 1e-4);
        prop_assert!(check(vec![x.clone()], |g, v| Ok(g.mean(v[0]))) < 1e-4);
        prop_assert!(check(vec![x.clone()], |g, v| g.permute(v[0], &[2, 0, 1])) < 1e-4);
        prop_assert!(check(vec![x.clone()], |g, v| g.reshape(v[0], &[6, 4])) < 1e-4);
        prop_assert!(check(vec![x.clone()], |g, v| g.slice(v[0], 1, 1, 2)) < 1e-4);
        prop_assert!(check(vec![x.clone()], |g, v| g.expand(v[0], 1, 3)) < 1e-4);
        prop_assert!(check(vec![x.clone(), x], |g, v| g.concat(&[v[0], v[1]], 2)) < 1e-4);
    }

    #[test]
    fn triangular_grads(m in tensor(&[2, 3, 3]), b in tensor(&[2, 3])) {
        prop_assert!(check(vec![m.clone()], |g, v| g.diagonal(v[0])) < 1e-4);
        prop_assert!(check(vec![b.clone()], |g, v| g.diag_embed(v[0])) < 1e-4);
        prop_assert!(check(vec![m.clone()], |g, v| g.tril(v[0], true)) < 1e-4);
        prop_assert!(check(vec![m.clone()], |g, v| g.tril(v[0], false)) < 1e-4);
        // well-conditioned lower factor: unit-ish diagonal
        let mut l = m;
        for t in 0..2 {
            for i in 0..3 {
                l.data_mut()[t * 9 + i * 3 + i] = 1.0 + l.data()[t * 9 + i * 3 + i].abs();
            }
        }
        let err = check(vec![l, b], |g, v| {
            let lt = g.tril(v[0], false)?;
            g.solve_lower(lt, v[1])
        });
        prop_assert!(err < 1e-4);
    }
}

#[test]
fn quadratic_is_checked_to_rounding() {
    let x = Tensor::new([5], vec![0.3, -0.7, 1.1, 2.0, -0.05]).unwrap();
    let report = grad_check(
        &[x],
        |g, v| {
            let s = g.square(v[0])?;
            let s = g.scale(s, 1.5);
            Ok(g.sum(s))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-8, "{report:?}");
    assert!(report.passed());
    assert_eq!(report.coords_checked, 5);
}

#[test]
fn zero_step_is_a_contract_error() {
    let opts = GradCheckOptions {
        h: 0.0,
        ..Default::default()
    };
    let res = grad_check(&[Tensor::scalar(1.0)], |g, v| Ok(g.sum(v[0])), &opts);
    assert!(matches!(res, Err(TensorError::Contract(_))));
}

#[test]
fn large_tensors_are_subsampled() {
    let x = Tensor::new([200], (0..200).map(|i| i as f64 / 200.0).collect()).unwrap();
    let report = grad_check(&[x], |g, v| {
        let s = g.square(v[0])?;
        Ok(g.sum(s))
    }, &GradCheckOptions::default())
    .unwrap();
    assert_eq!(report.coords_checked, 64);
}
