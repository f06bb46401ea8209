use proptest::prelude::*;
use usforest::tree::Node;
use usforest::{fit_tree, Dataset, PredictionPoint, TreeConfig};

/// Rows drawn from a coarse grid so that ties in features and responses are common.
fn sample_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (1usize..4).prop_flat_map(|d| {
        prop::collection::vec((prop::collection::vec(0i32..6, d), -5i32..6), 1..40).prop_map(
            |rows| {
                let x = rows
                    .iter()
                    .map(|(r, _)| r.iter().map(|&v| v as f64 * 0.5).collect())
                    .collect();
                let y = rows.iter().map(|(_, y)| *y as f64 * 1.25).collect();
                (x, y)
            },
        )
    })
}

fn config_strategy() -> impl Strategy<Value = TreeConfig> {
    (
        2usize..6,
        1usize..4,
        prop::option::of(0usize..6),
        prop::option::of(1usize..4),
    )
        .prop_map(|(min_split, min_leaf, max_depth, mtry)| TreeConfig {
            min_split,
            min_leaf,
            max_depth,
            mtry,
        })
}

fn dataset(x: Vec<Vec<f64>>, y: Vec<f64>) -> Dataset {
    let d = x[0].len();
    Dataset::new(x, y, (0..d).map(|j| format!("x{j}")).collect()).unwrap()
}

fn clamp_mtry(cfg: TreeConfig, d: usize) -> TreeConfig {
    TreeConfig {
        mtry: cfg.mtry.map(|m| m.min(d)),
        ..cfg
    }
}

fn probe_points(d: usize) -> Vec<PredictionPoint> {
    (0..12)
        .map(|i| {
            PredictionPoint(
                (0..d)
                    .map(|j| ((i * 7 + j * 3) % 13) as f64 * 0.25 - 0.2)
                    .collect(),
            )
        })
        .collect()
}

proptest! {
    #[test]
    fn fitted_tree_ignores_row_order(
        (x, y) in sample_strategy(),
        cfg in config_strategy(),
        seed in any::<u64>(),
        shuffle_seed in any::<u64>(),
    ) {
        let d = x[0].len();
        let cfg = clamp_mtry(cfg, d);
        let n = y.len();
        let mut order: Vec<usize> = (0..n).collect();
        // Fisher-Yates with a small LCG keeps the permutation a pure function of the seed.
        let mut s = shuffle_seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled = dataset(
            order.iter().map(|&i| x[i].clone()).collect(),
            order.iter().map(|&i| y[i]).collect(),
        );
        let original = dataset(x, y);
        let a = fit_tree(&original, &cfg, seed).unwrap();
        let b = fit_tree(&shuffled, &cfg, seed).unwrap();
        prop_assert_eq!(&a, &b);
        for p in probe_points(d) {
            prop_assert_eq!(a.predict(&p).unwrap().to_bits(), b.predict(&p).unwrap().to_bits());
        }
    }

    #[test]
    fn leaves_hold_the_mean_of_their_rows(
        (x, y) in sample_strategy(),
        cfg in config_strategy(),
        seed in any::<u64>(),
    ) {
        let d = x[0].len();
        let cfg = clamp_mtry(cfg, d);
        let data = dataset(x, y);
        let tree = fit_tree(&data, &cfg, seed).unwrap();
        let mut routed: std::collections::HashMap<usize, Vec<f64>> = Default::default();
        for i in 0..data.n() {
            routed.entry(tree.leaf_index(data.row(i))).or_default().push(data.response()[i]);
        }
        for (id, node) in tree.nodes().iter().enumerate() {
            if let Node::Leaf { value, count } = node {
                let ys = &routed[&id];
                prop_assert_eq!(*count, ys.len());
                // Only a split can be held to the leaf minimum; a bare root may be smaller.
                prop_assert!(*count >= cfg.min_leaf || tree.n_leaves() == 1);
                let mean = ys.iter().sum::<f64>() / ys.len() as f64;
                prop_assert!((value - mean).abs() <= 1e-12 * mean.abs().max(1.0), "{} vs {}", value, mean);
            }
        }
    }

    #[test]
    fn predictions_stay_in_training_range(
        (x, y) in sample_strategy(),
        cfg in config_strategy(),
        seed in any::<u64>(),
    ) {
        let d = x[0].len();
        let cfg = clamp_mtry(cfg, d);
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tree = fit_tree(&dataset(x, y), &cfg, seed).unwrap();
        prop_assert_eq!(tree.response_range(), (lo, hi));
        for p in probe_points(d) {
            let v = tree.predict(&p).unwrap();
            prop_assert!(lo <= v && v <= hi);
        }
    }

    #[test]
    fn same_inputs_give_the_same_tree(
        (x, y) in sample_strategy(),
        cfg in config_strategy(),
        seed in any::<u64>(),
    ) {
        let d = x[0].len();
        let cfg = clamp_mtry(cfg, d);
        let data = dataset(x, y);
        prop_assert_eq!(fit_tree(&data, &cfg, seed).unwrap(), fit_tree(&data, &cfg, seed).unwrap());
    }

    #[test]
    fn root_split_maximizes_error_reduction(
        (x, y) in sample_strategy(),
    ) {
        let cfg = TreeConfig { min_split: 2, max_depth: Some(1), ..TreeConfig::default() };
        let data = dataset(x, y);
        let tree = fit_tree(&data, &cfg, 0).unwrap();
        let best = best_reduction(&data);
        match tree.nodes()[0] {
            Node::Leaf { .. } => prop_assert!(best.is_none_or(|b| b <= 1e-9)),
            Node::Split { feature, threshold, .. } => {
                let chosen = reduction(&data, feature, threshold);
                let best = best.unwrap();
                prop_assert!(chosen >= best - 1e-9 * best.max(1.0), "{} < {}", chosen, best);
                let col = data.column(feature);
                let below = col.iter().copied().filter(|&v| v <= threshold).fold(f64::NEG_INFINITY, f64::max);
                let above = col.iter().copied().filter(|&v| v > threshold).fold(f64::INFINITY, f64::min);
                prop_assert!(below.is_finite() && above.is_finite());
                prop_assert_eq!(threshold, below + (above - below) / 2.0);
            }
        }
    }
}

fn sse(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum()
}

/// Parent SSE minus the children's SSE, computed directly.
fn reduction(data: &Dataset, feature: usize, threshold: f64) -> f64 {
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for i in 0..data.n() {
        if data.value(i, feature) <= threshold {
            left.push(data.response()[i]);
        } else {
            right.push(data.response()[i]);
        }
    }
    sse(data.response()) - sse(&left) - sse(&right)
}

fn best_reduction(data: &Dataset) -> Option<f64> {
    let mut best: Option<f64> = None;
    for f in 0..data.d() {
        let mut values = data.column(f);
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let r = reduction(data, f, (w[0] + w[1]) / 2.0);
            best = Some(best.map_or(r, |b: f64| b.max(r)));
        }
    }
    best
}

#[test]
fn constant_response_is_a_single_leaf() {
    let data = dataset(
        (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect(),
        vec![4.25; 10],
    );
    let tree = fit_tree(&data, &TreeConfig::default(), 1).unwrap();
    assert_eq!(tree.n_leaves(), 1);
    assert_eq!(
        tree.predict(&PredictionPoint(vec![100.0, -3.0])).unwrap(),
        4.25
    );
}

#[test]
fn slr_tree_predictions_stay_within_response_range() {
    let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.4]).collect();
    let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.4).clamp(0.0, 20.0)).collect();
    let tree = fit_tree(&dataset(x, y), &TreeConfig::default(), 0).unwrap();
    for i in -10..40 {
        let v = tree.predict(&PredictionPoint(vec![i as f64])).unwrap();
        assert!((0.0..=20.0).contains(&v));
    }
}

#[test]
fn mtry_changes_trees_only_through_the_seed() {
    let x: Vec<Vec<f64>> = (0..30)
        .map(|i| vec![(i % 7) as f64, (i % 5) as f64, (i % 3) as f64])
        .collect();
    let y: Vec<f64> = x.iter().map(|r| r[0] + 2.0 * r[1] - r[2]).collect();
    let data = dataset(x, y);
    let cfg = TreeConfig {
        mtry: Some(1),
        ..TreeConfig::default()
    };
    let trees: Vec<_> = (0..8).map(|s| fit_tree(&data, &cfg, s).unwrap()).collect();
    assert!(
        trees.iter().any(|t| t != &trees[0]),
        "different seeds should give different forests"
    );
    assert_eq!(trees[3], fit_tree(&data, &cfg, 3).unwrap());
}
