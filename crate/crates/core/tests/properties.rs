use elfis_core::data::{batches, generate_synthetic, split_indices, SyntheticConfig};
use elfis_core::evaluation::labels_match;
use elfis_core::losses::kl_divergence;
use elfis_core::model::{checkpoint_from_str, checkpoint_to_string, init_model, ModelConfig};
use elfis_core::subsetting::{
    combine, row_normalize, standardize_offdiag, visual_dissimilarity, ClusterAssignment, CombineMode,
    ConfusionMatrix, DissimilarityMatrix,
};
use elfis_core::tensor::{Graph, Tensor};
use proptest::prelude::*;

fn symmetric(n: usize, upper: &[f64]) -> DissimilarityMatrix {
    let mut v = vec![0.0; n * n];
    let mut it = upper.iter();
    for i in 0..n {
        for j in i + 1..n {
            let x = *it.next().unwrap();
            v[i * n + j] = x;
            v[j * n + i] = x;
        }
    }
    DissimilarityMatrix::from_values(n, v).unwrap()
}

fn matrix_pair() -> impl Strategy<Value = (DissimilarityMatrix, DissimilarityMatrix)> {
    (3usize..=9).prop_flat_map(|n| {
        let m = n * (n - 1) / 2;
        (
            prop::collection::vec(0.0f64..2.0, m).prop_filter("spread", |v| spread(v) > 1e-3),
            prop::collection::vec(0.0f64..2.0, m).prop_filter("spread", |v| spread(v) > 1e-3),
        )
            .prop_map(move |(a, b)| (symmetric(n, &a), symmetric(n, &b)))
    })
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::MIN, f64::max);
    let min = v.iter().copied().fold(f64::MAX, f64::min);
    max - min
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

proptest! {
    #[test]
    fn standardized_offdiag_has_zero_mean_unit_sd((a, _) in matrix_pair()) {
        let z = standardize_offdiag(&a, "A").unwrap();
        let (m, sd) = mean_sd(&z.upper_triangle());
        prop_assert!(m.abs() < 1e-9);
        prop_assert!((sd - 1.0).abs() < 1e-9);
        prop_assert!(z.is_symmetric(0.0));
        prop_assert!((0..z.n()).all(|i| z.get(i, i) == 0.0));
    }

    #[test]
    fn std_average_is_affine_invariant((a, b) in matrix_pair(), s in 0.01f64..100.0, t in -5.0f64..5.0) {
        let base = combine(&a, &b, CombineMode::StdAverage).unwrap();
        let (m, _) = mean_sd(&base.upper_triangle());
        prop_assert!(m.abs() < 1e-9);
        let scaled = a.map_offdiag(|x| s * x + t);
        let other = combine(&scaled, &b, CombineMode::StdAverage).unwrap();
        for (x, y) in base.values().iter().zip(other.values()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let other = combine(&a, &b.map_offdiag(|x| s * x + t), CombineMode::StdAverage).unwrap();
        for (x, y) in base.values().iter().zip(other.values()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn visual_dissimilarity_is_symmetric_with_zero_diagonal_of_perfect_rows(
        counts in prop::collection::vec(prop::collection::vec(0u64..20, 5), 5)
    ) {
        let mut rows = counts;
        for (i, r) in rows.iter_mut().enumerate() { r[i] += 1; }
        let cm = ConfusionMatrix::from_rows(rows).unwrap();
        let d = visual_dissimilarity(&row_normalize(&cm)).unwrap();
        prop_assert!(d.is_symmetric(1e-15));
        for i in 0..5 {
            for j in 0..5 {
                prop_assert!(d.get(i, j) >= -1e-12 && d.get(i, j) <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn kl_is_nonnegative(p in prop::collection::vec(-5.0f64..5.0, 6), q in prop::collection::vec(-5.0f64..5.0, 6)) {
        let mut g = Graph::new();
        let pv = g.constant(Tensor::new(vec![2, 3], p.clone()).unwrap());
        let qv = g.constant(Tensor::new(vec![2, 3], q).unwrap());
        let kl = kl_divergence(&mut g, pv, qv, true).unwrap();
        prop_assert!(g.value(kl).item().unwrap() >= -1e-12);
        let self_kl = kl_divergence(&mut g, pv, pv, true).unwrap();
        prop_assert!(g.value(self_kl).item().unwrap().abs() < 1e-12);
        // shifting logits leaves the distribution unchanged
        let shifted = g.constant(Tensor::new(vec![2, 3], p.iter().map(|x| x + 3.0).collect()).unwrap());
        let shift_kl = kl_divergence(&mut g, pv, shifted, true).unwrap();
        prop_assert!(g.value(shift_kl).item().unwrap().abs() < 1e-9);
    }

    #[test]
    fn normed_linear_is_bounded_and_scale_invariant(
        f in prop::collection::vec(-3.0f64..3.0, 8),
        w in prop::collection::vec(-3.0f64..3.0, 12),
    ) {
        prop_assume!(f.iter().any(|x| x.abs() > 1e-3) && w.iter().any(|x| x.abs() > 1e-3));
        let mut g = Graph::new();
        let fv = g.constant(Tensor::new(vec![2, 4], f.clone()).unwrap());
        let wv = g.constant(Tensor::new(vec![4, 3], w).unwrap());
        let s = g.normed_linear(fv, wv, 1.0).unwrap();
        let big = g.constant(Tensor::new(vec![2, 4], f.iter().map(|x| 100.0 * x).collect()).unwrap());
        let s_big = g.normed_linear(big, wv, 1.0).unwrap();
        for (a, b) in g.value(s).values().iter().zip(g.value(s_big).values()) {
            prop_assert!(a.abs() <= 1.0 + 1e-9);
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn partition_agreement_is_symmetric_and_relabel_invariant(
        a in prop::collection::vec(0usize..4, 2..12),
        shift in 1usize..4,
    ) {
        let b: Vec<usize> = a.iter().enumerate().map(|(i, &x)| if i % 3 == 0 { (x + 1) % 4 } else { x }).collect();
        let m1 = labels_match(&a, &b).unwrap();
        let m2 = labels_match(&b, &a).unwrap();
        prop_assert_eq!(m1, m2);
        // rotating cluster ids of one side changes nothing
        let relabelled: Vec<usize> = a.iter().map(|&x| (x + shift) % 4).collect();
        let m3 = labels_match(&relabelled, &b).unwrap();
        prop_assert_eq!(m1, m3);
        prop_assert!(labels_match(&a, &relabelled).unwrap().exact);
        prop_assert!((0.0..=1.0).contains(&m1.agreement));
    }

    #[test]
    fn batches_cover_every_row_once(n in 1usize..200, bs in 1usize..40, seed in 0u64..1000, epoch in 0usize..5) {
        let mut all: Vec<usize> = batches(n, bs, seed, epoch).concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn stratified_split_is_disjoint_and_covers_every_class() {
    let cfg = SyntheticConfig { samples_per_class: 11, ..SyntheticConfig::default() };
    let ds = generate_synthetic(&cfg).unwrap();
    let [tr, va, te] = split_indices(&ds, (0.6, 0.2, 0.2), 4).unwrap();
    let mut all: Vec<usize> = [tr.clone(), va.clone(), te.clone()].concat();
    all.sort_unstable();
    assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
    for part in [&tr, &va, &te] {
        let sub = ds.subset(part);
        assert!(sub.class_counts().iter().all(|&c| c > 0));
    }
    assert_eq!(split_indices(&ds, (0.6, 0.2, 0.2), 4).unwrap(), [tr, va, te]);
}

#[test]
fn hand_standardization_example() {
    let d = DissimilarityMatrix::from_rows(&[
        vec![0.0, 1.0, 2.0],
        vec![1.0, 0.0, 3.0],
        vec![2.0, 3.0, 0.0],
    ])
    .unwrap();
    let z = standardize_offdiag(&d, "D").unwrap();
    let want = [-1.224745, 0.0, 1.224745];
    for (got, w) in z.upper_triangle().iter().zip(want) {
        assert!((got - w).abs() < 1e-6, "{got} vs {w}");
    }
}

#[test]
fn checkpoints_round_trip_for_every_aggregation() {
    use elfis_core::model::Aggregation;
    let a = ClusterAssignment::from_members(vec![vec![0, 1], vec![2, 3, 4]]).unwrap();
    for agg in [Aggregation::Mean, Aggregation::Max, Aggregation::Concat] {
        let cfg = ModelConfig { n_classes: 5, aggregation: agg, expert_blocks: 2, ..ModelConfig::default() };
        let m = init_model(&cfg, Some(&a)).unwrap();
        assert_eq!(checkpoint_from_str(&checkpoint_to_string(&m).unwrap()).unwrap(), m);
    }
}
