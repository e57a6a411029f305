use elfis_core::gradsuite::{run_suite, toy_model};
use elfis_core::losses::{total_loss, Objective, SubsetLabelMap};
use elfis_core::tensor::{Graph, Tensor};

#[test]
fn every_op_and_the_objective_pass_finite_differences() {
    let reports = run_suite(50, 2024).unwrap();
    for r in &reports {
        println!("{:<20} {:.3e} (tol {:e})", r.op_name, r.max_relative_error, r.tolerance);
    }
    for r in &reports {
        assert!(r.passed, "{r:?}");
    }
}

fn toy_batch() -> (Tensor, Vec<usize>) {
    let x = Tensor::from_rows(&[
        vec![0.5, -1.0, 0.3, 1.2],
        vec![-0.7, 0.4, 1.1, -0.2],
        vec![0.9, 0.8, -0.6, 0.1],
        vec![-1.3, -0.4, 0.2, 0.6],
    ])
    .unwrap();
    (x, vec![0, 3, 4, 1])
}

#[test]
fn every_head_parameter_gets_gradient() {
    let model = toy_model(5).unwrap();
    let map = SubsetLabelMap::new(model.assignment().unwrap());
    let (x, t) = toy_batch();
    let mut g = Graph::new();
    let p = model.bind(&mut g, true);
    let xv = g.constant(x);
    let out = model.forward(&mut g, &p, xv, true).unwrap();
    let terms = total_loss(&mut g, &out, &t, Some(&map), &Objective::default()).unwrap();
    assert_eq!(terms.n_terms(), 2 + 2 + 2);
    g.backward(terms.total).unwrap();
    for (v, param) in p.vars().iter().zip(model.params()) {
        let grad = g.grad(*v).unwrap();
        assert!(grad.iter().any(|&x| x != 0.0), "{} has zero gradient", param.name);
    }
}

/// With detached targets, the KL term `KL(P_H0 || P_aggr)` must not move the
/// aggregation classifier even though its value depends on it.
#[test]
fn detached_target_branch_has_exactly_zero_gradient() {
    use elfis_core::losses::kl_divergence;
    let model = toy_model(8).unwrap();
    let (x, _) = toy_batch();
    let eval = |m: &elfis_core::model::ElfisModel| {
        let mut g = Graph::new();
        let p = m.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let out = m.forward(&mut g, &p, xv, true).unwrap();
        let kl = kl_divergence(&mut g, out.logits_h0, out.logits_aggr.unwrap(), true).unwrap();
        let value = g.value(kl).item().unwrap();
        g.backward(kl).unwrap();
        let names: Vec<String> = m.params().iter().map(|p| p.name.clone()).collect();
        let grads: Vec<Option<Vec<f64>>> = p.vars().iter().map(|&v| g.grad(v).map(<[f64]>::to_vec)).collect();
        (value, names, grads)
    };
    let (value, names, grads) = eval(&model);
    let idx = names.iter().position(|n| n == "aggregation.classifier.weight").unwrap();
    assert!(grads[idx].as_ref().is_none_or(|g| g.iter().all(|&v| v == 0.0)));
    let h0 = names.iter().position(|n| n == "head0.classifier.weight").unwrap();
    assert!(grads[h0].as_ref().unwrap().iter().any(|&v| v != 0.0));

    let mut moved = model.clone();
    moved.params_mut()[idx].value.values_mut()[0] += 1e-3;
    assert_ne!(eval(&moved).0, value);
}
