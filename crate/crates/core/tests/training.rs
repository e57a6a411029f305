use elfis_core::data::{generate_synthetic, split, Dataset, SyntheticConfig};
use elfis_core::losses::{cross_entropy, total_loss, DistillationMode, LossWeights, Objective, SubsetLabelMap};
use elfis_core::model::{init_model, ElfisModel, ModelConfig};
use elfis_core::subsetting::ClusterAssignment;
use elfis_core::tensor::Graph;
use elfis_core::training::{export_confusion, fit, loss_and_grads, one_cycle_lr, MomentumSgd, TrainConfig};

fn data() -> (Dataset, Dataset, Dataset) {
    let cfg = SyntheticConfig { n_groups: 2, classes_per_group: 3, input_dim: 6, samples_per_class: 20, seed: 3, ..SyntheticConfig::default() };
    split(&generate_synthetic(&cfg).unwrap(), (0.6, 0.2, 0.2), 3).unwrap()
}

fn model(with_experts: bool) -> ElfisModel {
    let a = ClusterAssignment::from_members(vec![vec![0, 1, 2], vec![3, 4, 5]]).unwrap();
    let cfg = ModelConfig { input_dim: 6, backbone_hidden: vec![12], feature_dim: 8, n_classes: 6, seed: 4, ..ModelConfig::default() };
    init_model(&cfg, with_experts.then_some(&a)).unwrap()
}

fn short() -> TrainConfig {
    TrainConfig { max_lr: 0.05, cycle_epochs: 4, annihilation_epochs: 4, max_epochs: 8, patience: 8, batch_size: 8, seed: 1, ..TrainConfig::default() }
}

#[test]
fn fit_is_bit_for_bit_deterministic() {
    let (tr, va, _) = data();
    let (m1, h1) = fit(model(true), &tr, &va, &short()).unwrap();
    let (m2, h2) = fit(model(true), &tr, &va, &short()).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(h1.to_csv(), h2.to_csv());
    assert_eq!(m1, m2);
    assert_eq!(h1.epochs.len(), 8);
    for (e, r) in h1.epochs.iter().enumerate() {
        assert_eq!(r.epoch, e + 1);
        assert_eq!(r.lr, one_cycle_lr(e, &short()));
        assert!(r.val_kl.is_some());
    }
}

#[test]
fn loss_on_a_fixed_batch_decreases() {
    let (tr, _, _) = data();
    let mut m = model(true);
    m.set_input_norm(Some(elfis_core::model::InputNorm::fit(&tr.batch_features(&(0..tr.len()).collect::<Vec<_>>()).unwrap()).unwrap())).unwrap();
    let map = SubsetLabelMap::new(m.assignment().unwrap());
    let rows: Vec<usize> = (0..16).collect();
    let x = tr.batch_features(&rows).unwrap();
    let y = tr.batch_labels(&rows);
    let mut opt = MomentumSgd::new(&m, 0.9);
    let mut losses = Vec::new();
    for _ in 0..=10 {
        let (l, g) = loss_and_grads(&m, Some(&map), &Objective::default(), &x, &y).unwrap();
        losses.push(l);
        opt.step(&mut m, &g, 0.01);
    }
    assert!(losses[10] < losses[0], "{losses:?}");
}

#[test]
fn early_stopping_returns_the_best_snapshot() {
    let (tr, va, _) = data();
    let cfg = TrainConfig { max_epochs: 40, patience: 3, cycle_epochs: 10, annihilation_epochs: 10, ..short() };
    let (best, h) = fit(model(false), &tr, &va, &cfg).unwrap();
    let best_acc = h.epochs.iter().map(|r| r.val_acc).fold(f64::MIN, f64::max);
    assert_eq!(h.best().unwrap().val_acc, best_acc);
    let first_best = h.epochs.iter().find(|r| r.val_acc == best_acc).unwrap().epoch;
    assert_eq!(h.best_epoch, first_best);
    if h.stopped_early {
        assert_eq!(h.epochs.len(), h.best_epoch + 3);
    }
    let acc = elfis_core::evaluation::evaluate(&best, &va).unwrap().accuracy;
    assert_eq!(acc, best_acc);
}

#[test]
fn empty_split_is_rejected() {
    let (tr, va, _) = data();
    let empty = tr.subset(&[]);
    assert!(fit(model(false), &empty, &va, &short()).is_err());
}

#[test]
fn confusion_conserves_examples() {
    let (_, va, _) = data();
    let m = model(true);
    let cm = export_confusion(&m, &va).unwrap();
    assert_eq!(cm.total() as usize, va.len());
    for (c, &count) in va.class_counts().iter().enumerate() {
        assert_eq!(cm.row(c).iter().sum::<u64>() as usize, count);
    }
}

fn terms_for(m: &ElfisModel, w: LossWeights, mode: DistillationMode) -> (Graph, elfis_core::losses::LossTerms) {
    let (tr, _, _) = data();
    let rows: Vec<usize> = (0..10).collect();
    let mut g = Graph::new();
    let p = m.bind(&mut g, true);
    let x = g.constant(tr.batch_features(&rows).unwrap());
    let out = m.forward(&mut g, &p, x, true).unwrap();
    let map = m.assignment().map(SubsetLabelMap::new);
    let obj = Objective { weights: w, distillation: mode, live_targets: false };
    let terms = total_loss(&mut g, &out, &tr.batch_labels(&rows), map.as_ref(), &obj).unwrap();
    (g, terms)
}

#[test]
fn baseline_objective_is_plain_cross_entropy() {
    let m = model(false);
    let (g, t) = terms_for(&m, LossWeights::default(), DistillationMode::None);
    assert_eq!(t.n_terms(), 1);
    assert_eq!(g.value(t.total).item().unwrap(), g.value(t.ce_h0).item().unwrap());

    let (tr, _, _) = data();
    let rows: Vec<usize> = (0..10).collect();
    let mut g2 = Graph::new();
    let p = m.bind(&mut g2, false);
    let x = g2.constant(tr.batch_features(&rows).unwrap());
    let out = m.forward(&mut g2, &p, x, false).unwrap();
    let ce = cross_entropy(&mut g2, out.logits_h0, &tr.batch_labels(&rows)).unwrap();
    assert_eq!(g2.value(ce).item().unwrap(), g.value(t.total).item().unwrap());
}

#[test]
fn disabled_distillation_zeroes_both_mutual_terms() {
    let (g, t) = terms_for(&model(true), LossWeights::default(), DistillationMode::None);
    assert_eq!(g.value(t.ml_h0.unwrap()).item().unwrap(), 0.0);
    assert_eq!(g.value(t.ml_aggr.unwrap()).item().unwrap(), 0.0);
    assert_eq!(t.n_terms(), 2 + 2 + 2);
}

#[test]
fn doubling_lambda2_doubles_the_expert_term() {
    let m = model(true);
    let w = LossWeights { lambda1: 1.0, lambda2: 3.0, lambda3: 1.0 };
    let middle = |w: LossWeights| {
        let (g, t) = terms_for(&m, w, DistillationMode::TwoWay);
        let v = |x| g.value(x).item().unwrap();
        let first = w.lambda1 * (v(t.ce_h0) + v(t.ml_h0.unwrap()));
        let last = w.lambda3 * (v(t.ce_aggr.unwrap()) + v(t.ml_aggr.unwrap()));
        let mid = w.lambda2 * ((v(t.ce_experts[0]) + v(t.ce_experts[1])) * 0.5);
        assert_eq!(first + mid + last, v(t.total));
        mid
    };
    let once = middle(w);
    let twice = middle(LossWeights { lambda2: 6.0, ..w });
    assert_eq!(twice, 2.0 * once);
}
