mod common;

use common::{random_grid_point, random_tree};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rejex::counterfactual::{all_leaf_regions, closest_counterfactual, l1_distance, leaf_regions, CfConfig};
use rejex::Error;

fn setup(seed: u64, d: usize) -> (rejex::classifiers::DecisionTree, Vec<f64>) {
    let tree = random_tree(seed, d, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let x = random_grid_point(&mut rng, d);
    (tree, x)
}

#[test]
fn leaf_boxes_partition_the_space() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..10 {
        let tree = random_tree(seed, 3, 4);
        let boxes = all_leaf_regions(&tree);
        for _ in 0..100 {
            // Off-grid points, including some outside the unit cube.
            let x: Vec<f64> = (0..3).map(|_| rand::Rng::random_range(&mut rng, -0.5..1.5)).collect();
            let hits: Vec<_> = boxes.iter().filter(|b| b.contains(&x)).collect();
            assert_eq!(hits.len(), 1, "tree {seed}, point {x:?}");
            assert_eq!(hits[0].leaf, tree.leaf_index(&x));
        }
    }
}

#[test]
fn points_on_thresholds_belong_to_the_left_box() {
    let tree = random_tree(3, 2, 4);
    let boxes = all_leaf_regions(&tree);
    for node in &tree.nodes {
        if let Some(s) = node.split {
            let mut x = vec![0.5, 0.5];
            x[s.feature] = s.threshold;
            let hits: Vec<_> = boxes.iter().filter(|b| b.contains(&x)).collect();
            assert_eq!(hits.len(), 1);
            assert_eq!(hits[0].leaf, tree.leaf_index(&x));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn counterfactual_lands_in_target_class(seed in any::<u64>(), d in 1usize..=3, target in 0usize..2) {
        let (tree, x) = setup(seed, d);
        let cfg = CfConfig::default();
        match closest_counterfactual(&tree, &x, target, &cfg) {
            Ok(cf) => {
                prop_assert_eq!(tree.predict_class(&cf.point).unwrap(), target);
                prop_assert!((l1_distance(&cf.point, &x) - cf.distance).abs() < 1e-12);
            }
            Err(Error::TargetUnreachable(_)) => prop_assert!(leaf_regions(&tree, target).is_empty()),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn counterfactual_beats_every_target_box(seed in any::<u64>(), d in 1usize..=3) {
        let (tree, x) = setup(seed, d);
        let cfg = CfConfig::default();
        let Ok(cf) = closest_counterfactual(&tree, &x, 0, &cfg) else { return Ok(()) };
        for b in leaf_regions(&tree, 0) {
            let candidate = b.nearest_point(&x, cfg.margin);
            prop_assert!(cf.distance <= l1_distance(&candidate, &x) + d as f64 * cfg.margin);
        }
    }

    #[test]
    fn moved_coordinates_stop_at_a_boundary(seed in any::<u64>(), d in 1usize..=3) {
        let (tree, x) = setup(seed, d);
        let cfg = CfConfig::default();
        let Ok(cf) = closest_counterfactual(&tree, &x, 0, &cfg) else { return Ok(()) };
        let thresholds: Vec<(usize, f64)> = tree.nodes.iter().filter_map(|n| n.split.map(|s| (s.feature, s.threshold))).collect();
        for j in 0..d {
            if (cf.point[j] - x[j]).abs() > cfg.tolerance {
                let on_boundary = thresholds.iter().any(|&(f, t)| {
                    f == j && ((cf.point[j] - t).abs() < 1e-12 || (cf.point[j] - t - cfg.margin).abs() < 1e-12)
                });
                prop_assert!(on_boundary, "coordinate {} moved to {} without a boundary", j, cf.point[j]);
            }
        }
    }

    #[test]
    fn widening_the_chosen_box_never_increases_distance(seed in any::<u64>(), d in 1usize..=3, widen in 0.0f64..0.3) {
        let (tree, x) = setup(seed, d);
        let cfg = CfConfig::default();
        let Ok(cf) = closest_counterfactual(&tree, &x, 0, &cfg) else { return Ok(()) };
        let chosen = leaf_regions(&tree, 0).into_iter().find(|b| b.leaf == cf.leaf).unwrap();
        for j in 0..d {
            let mut wider = chosen.clone();
            wider.lo[j] -= widen;
            wider.hi[j] += widen;
            let relaxed = wider.nearest_point(&x, cfg.margin);
            prop_assert!(l1_distance(&relaxed, &x) <= cf.distance + 1e-12);
        }
    }
}
