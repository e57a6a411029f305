//! Finite-difference checks over every differentiable operation and the
//! full objective on a small model.
//!
//! Tensor-valued ops are reduced to a scalar by a fixed random projection
//! `sum(out * R)` so every output coordinate contributes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{cross_entropy, kl_divergence, total_loss, Objective, SubsetLabelMap};
use crate::model::{init_model, BoundParams, ElfisModel, ModelConfig};
use crate::subsetting::ClusterAssignment;
use crate::tensor::{finite_diff_check_many, GradCheckReport, Graph, ReduceKind, Tensor, Var};

pub const OP_TOLERANCE: f64 = 1e-5;
pub const COMPOSITE_TOLERANCE: f64 = 1e-4;

/// Values bounded away from zero so no probe crosses a ReLU kink.
fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n)
        .map(|_| {
            let mag = rng.random_range(0.1..2.0);
            if rng.random::<bool>() { mag } else { -mag }
        })
        .collect();
    Tensor::new(shape.to_vec(), values).expect("positive shape")
}

fn project(g: &mut Graph, v: Var, weights: &Tensor) -> Result<Var> {
    let r = g.constant(weights.clone());
    let prod = g.mul(v, r)?;
    g.reduce_all(prod, ReduceKind::Sum)
}

type OpFn = fn(&mut Graph, &[Var]) -> Result<Var>;

struct OpCase {
    name: &'static str,
    shapes: fn(&mut ChaCha8Rng) -> Vec<Vec<usize>>,
    out_shape: fn(&[Vec<usize>]) -> Vec<usize>,
    apply: OpFn,
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(2..5)
}

fn same(s: &[Vec<usize>]) -> Vec<usize> {
    s[0].clone()
}

fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            shapes: |r| {
                let (m, k, p) = (dim(r), dim(r), dim(r));
                vec![vec![m, k], vec![k, p]]
            },
            out_shape: |s| vec![s[0][0], s[1][1]],
            apply: |g, v| g.matmul(v[0], v[1]),
        },
        OpCase {
            name: "add",
            shapes: |r| {
                let s = vec![dim(r), dim(r)];
                vec![s.clone(), s]
            },
            out_shape: same,
            apply: |g, v| g.add(v[0], v[1]),
        },
        OpCase {
            name: "sub_row_broadcast",
            shapes: |r| {
                let (b, c) = (dim(r), dim(r));
                vec![vec![b, c], vec![c]]
            },
            out_shape: same,
            apply: |g, v| g.sub(v[0], v[1]),
        },
        OpCase {
            name: "mul",
            shapes: |r| {
                let s = vec![dim(r), dim(r)];
                vec![s.clone(), s]
            },
            out_shape: same,
            apply: |g, v| g.mul(v[0], v[1]),
        },
        OpCase {
            name: "scale",
            shapes: |r| vec![vec![dim(r), dim(r)]],
            out_shape: same,
            apply: |g, v| Ok(g.scale(v[0], -1.7)),
        },
        OpCase {
            name: "relu",
            shapes: |r| vec![vec![dim(r), dim(r)]],
            out_shape: same,
            apply: |g, v| Ok(g.relu(v[0])),
        },
        OpCase {
            name: "softmax",
            shapes: |r| vec![vec![dim(r), dim(r)]],
            out_shape: same,
            apply: |g, v| g.softmax(v[0]),
        },
        OpCase {
            name: "log_softmax",
            shapes: |r| vec![vec![dim(r), dim(r)]],
            out_shape: same,
            apply: |g, v| g.log_softmax(v[0]),
        },
        OpCase {
            name: "reduce_mean",
            shapes: |r| vec![vec![dim(r), dim(r)]],
            out_shape: |s| vec![s[0][1]],
            apply: |g, v| g.reduce(v[0], ReduceKind::Mean, 0),
        },
        OpCase {
            name: "reduce_sum",
            shapes: |r| vec![vec![dim(r), dim(r)]],
            out_shape: |s| vec![s[0][0]],
            apply: |g, v| g.reduce(v[0], ReduceKind::Sum, 1),
        },
        OpCase {
            name: "reduce_max",
            shapes: |r| vec![vec![dim(r), dim(r), dim(r)]],
            out_shape: |s| vec![s[0][1], s[0][2]],
            apply: |g, v| g.reduce(v[0], ReduceKind::Max, 0),
        },
        OpCase {
            name: "l2_norm",
            shapes: |r| vec![vec![dim(r) + 2]],
            out_shape: |_| vec![],
            apply: |g, v| g.l2_norm(v[0]),
        },
        OpCase {
            name: "normed_linear",
            shapes: |r| {
                let (b, d, c) = (dim(r), dim(r), dim(r));
                vec![vec![b, d], vec![d, c]]
            },
            out_shape: |s| vec![s[0][0], s[1][1]],
            apply: |g, v| g.normed_linear(v[0], v[1], 10.0),
        },
        OpCase {
            name: "stack",
            shapes: |r| {
                let s = vec![dim(r), dim(r)];
                vec![s.clone(), s.clone(), s]
            },
            out_shape: |s| vec![3, s[0][0], s[0][1]],
            apply: |g, v| g.stack(v),
        },
        OpCase {
            name: "concat",
            shapes: |r| {
                let b = dim(r);
                vec![vec![b, dim(r)], vec![b, dim(r)]]
            },
            out_shape: |s| vec![s[0][0], s[0][1] + s[1][1]],
            apply: |g, v| g.concat(v),
        },
        OpCase {
            name: "kl_divergence",
            shapes: |r| {
                let s = vec![dim(r), dim(r)];
                vec![s.clone(), s]
            },
            out_shape: |_| vec![],
            apply: |g, v| kl_divergence(g, v[0], v[1], false),
        },
    ]
}

fn check_op(case: &OpCase, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let shapes = (case.shapes)(rng);
    let inputs: Vec<Tensor> = shapes.iter().map(|s| random_tensor(rng, s)).collect();
    let out_shape = (case.out_shape)(&shapes);
    let weights = if out_shape.is_empty() {
        Tensor::scalar(1.0)
    } else {
        random_tensor(rng, &out_shape)
    };
    let apply = case.apply;
    finite_diff_check_many(
        case.name,
        |g, vars| {
            let out = apply(g, vars)?;
            project(g, out, &weights)
        },
        &inputs,
        OP_TOLERANCE,
    )
}

fn check_cross_entropy(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (b, c) = (dim(rng), dim(rng));
    let logits = random_tensor(rng, &[b, c]);
    let targets: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
    finite_diff_check_many(
        "cross_entropy",
        |g, v| cross_entropy(g, v[0], &targets),
        &[logits],
        OP_TOLERANCE,
    )
}

/// The 6-class, 2-subset model used by the objective check.
pub fn toy_model(seed: u64) -> Result<ElfisModel> {
    let a = ClusterAssignment::from_members(vec![vec![0, 2, 4], vec![1, 3, 5]])?;
    let cfg = ModelConfig {
        input_dim: 4,
        backbone_hidden: vec![6],
        feature_dim: 4,
        n_classes: 6,
        expert_blocks: 1,
        seed,
        ..ModelConfig::default()
    };
    init_model(&cfg, Some(&a))
}

/// Checks the objective with respect to every parameter of a toy model whose
/// weights and biases are all drawn at random. KL targets are live so the
/// analytic gradient is the full derivative of the reported value.
pub fn check_composite(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let model = toy_model(rng.random())?;
    let map = SubsetLabelMap::new(model.assignment().expect("toy model has subsets"));
    let params: Vec<Tensor> = model.params().iter().map(|p| random_tensor(rng, p.value.shape())).collect();
    let batch = 5;
    let x = random_tensor(rng, &[batch, 4]);
    let targets: Vec<usize> = (0..batch).map(|_| rng.random_range(0..6)).collect();
    let objective = Objective {
        live_targets: true,
        ..Objective::default()
    };
    finite_diff_check_many(
        "composite_loss",
        |g, vars| {
            let bound = BoundParams::from_vars(vars.to_vec());
            let xv = g.constant(x.clone());
            let out = model.forward(g, &bound, xv, true)?;
            Ok(total_loss(g, &out, &targets, Some(&map), &objective)?.total)
        },
        &params,
        COMPOSITE_TOLERANCE,
    )
}

/// Runs `instances` random checks per operation; one merged report per op.
pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let merged = |rng: &mut ChaCha8Rng, f: &dyn Fn(&mut ChaCha8Rng) -> Result<GradCheckReport>| -> Result<GradCheckReport> {
        let mut report = f(rng)?;
        for _ in 1..instances {
            report = report.merge(f(rng)?);
        }
        Ok(report)
    };
    for case in op_cases() {
        reports.push(merged(&mut rng, &|r| check_op(&case, r))?);
    }
    reports.push(merged(&mut rng, &check_cross_entropy)?);
    reports.push(merged(&mut rng, &check_composite)?);
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let reports = run_suite(3, 1).unwrap();
        assert_eq!(reports.len(), op_cases().len() + 2);
        for r in &reports {
            assert!(r.passed, "{r:?}");
        }
    }
}
