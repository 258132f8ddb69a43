#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rejex::classifiers::{DecisionTree, Node, Split};

pub const GRID_STEP: f64 = 0.01;
/// Grid points per axis on [0, 1].
pub const GRID_POINTS: usize = 101;

pub fn grid_value(i: usize) -> f64 {
    i as f64 / 100.0
}

fn grow(rng: &mut ChaCha8Rng, d: usize, depth: usize, lo: &mut [usize], hi: &mut [usize], nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    let class = rng.random_range(0..2usize);
    let mut counts = vec![1.0, 1.0];
    counts[class] = 3.0;
    nodes.push(Node::leaf(counts));
    // Thresholds sit halfway between grid points: k + 0.5 hundredths, with
    // lo[j] <= k < hi[j] so every box stays nonempty.
    let splittable: Vec<usize> = (0..d).filter(|&j| hi[j] > lo[j] + 1).collect();
    if depth == 0 || splittable.is_empty() || rng.random_bool(0.2) {
        return id;
    }
    let feature = splittable[rng.random_range(0..splittable.len())];
    let k = rng.random_range(lo[feature]..hi[feature] - 1);
    let threshold = (k as f64 + 0.5) / 100.0;

    let saved_hi = hi[feature];
    hi[feature] = k + 1;
    let left = grow(rng, d, depth - 1, lo, hi, nodes);
    hi[feature] = saved_hi;
    let saved_lo = lo[feature];
    lo[feature] = k + 1;
    let right = grow(rng, d, depth - 1, lo, hi, nodes);
    lo[feature] = saved_lo;

    nodes[id].split = Some(Split {
        feature,
        threshold,
        left,
        right,
    });
    id
}

/// Random binary tree on [0, 1]^d with thresholds between 0.01-grid points.
/// Internal node counts are not meaningful; only the geometry and the leaf
/// classes matter.
pub fn random_tree(seed: u64, d: usize, max_depth: usize) -> DecisionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::new();
    let mut lo = vec![0usize; d];
    let mut hi = vec![GRID_POINTS; d];
    grow(&mut rng, d, max_depth, &mut lo, &mut hi, &mut nodes);
    DecisionTree::from_nodes(nodes, d, 2).expect("valid random tree")
}

pub fn random_grid_point(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| grid_value(rng.random_range(0..GRID_POINTS))).collect()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Exhaustive search over the 0.01 grid of [0, 1]^d for the closest point
/// (L1) the tree assigns to `target`. Only uses tree traversal.
pub fn grid_counterfactual(tree: &DecisionTree, x: &[f64], target: usize) -> Option<(Vec<f64>, f64)> {
    let d = x.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut idx = vec![0usize; d];
    let mut point = vec![0.0; d];
    loop {
        for j in 0..d {
            point[j] = grid_value(idx[j]);
        }
        let dist = l1(&point, x);
        if best.as_ref().is_none_or(|(_, b)| dist < *b) && tree.predict_class(&point).unwrap() == target {
            best = Some((point.clone(), dist));
        }
        // Odometer increment.
        let mut j = 0;
        loop {
            if j == d {
                return best;
            }
            idx[j] += 1;
            if idx[j] < GRID_POINTS {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}
