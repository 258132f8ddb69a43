//! Closest counterfactuals of decision trees.
//!
//! Every leaf of a CART tree covers an axis-aligned box. The closest point of
//! a box to `x` under L1 is obtained by clamping each coordinate into the
//! box's interval, so the closest counterfactual is the best clamp over all
//! leaves predicting the target class.

use serde::{Deserialize, Serialize};

use crate::classifiers::DecisionTree;
use crate::error::{Error, Result};

/// Distance ties closer than this are resolved by the secondary criteria.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfConfig {
    /// Step taken past an open (strict) boundary so the point lands inside.
    pub margin: f64,
    /// Coordinates that move by at most this much count as unchanged.
    pub tolerance: f64,
}

impl Default for CfConfig {
    fn default() -> Self {
        CfConfig {
            margin: 1e-4,
            tolerance: 1e-9,
        }
    }
}

impl CfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) || !(self.tolerance >= 0.0) || self.tolerance >= self.margin {
            return Err(Error::InvalidParameter(format!(
                "counterfactual config needs margin > tolerance >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Axis-aligned region covered by one leaf. Left branches (`x <= t`) close
/// the upper bound, right branches (`x > t`) open the lower bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub lo_open: Vec<bool>,
    pub hi_open: Vec<bool>,
    pub class: usize,
    /// Node index of the leaf in its tree.
    pub leaf: usize,
}

impl LeafBox {
    fn unbounded(d: usize) -> Self {
        LeafBox {
            lo: vec![f64::NEG_INFINITY; d],
            hi: vec![f64::INFINITY; d],
            lo_open: vec![true; d],
            hi_open: vec![true; d],
            class: 0,
            leaf: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim()).all(|j| {
            let above = if self.lo_open[j] { x[j] > self.lo[j] } else { x[j] >= self.lo[j] };
            let below = if self.hi_open[j] { x[j] < self.hi[j] } else { x[j] <= self.hi[j] };
            above && below
        })
    }

    /// Clamp `x` into the box, stepping `margin` past open bounds.
    pub fn nearest_point(&self, x: &[f64], margin: f64) -> Vec<f64> {
        (0..self.dim())
            .map(|j| {
                let (lo, hi, v) = (self.lo[j], self.hi[j], x[j]);
                let too_low = v < lo || (self.lo_open[j] && v <= lo);
                let too_high = v > hi || (self.hi_open[j] && v >= hi);
                let inside = |c: f64| {
                    let ok_lo = if self.lo_open[j] { c > lo } else { c >= lo };
                    let ok_hi = if self.hi_open[j] { c < hi } else { c <= hi };
                    ok_lo && ok_hi
                };
                let clamped = if too_low {
                    if self.lo_open[j] { lo + margin } else { lo }
                } else if too_high {
                    if self.hi_open[j] { hi - margin } else { hi }
                } else {
                    return v;
                };
                if inside(clamped) { clamped } else { 0.5 * (lo + hi) }
            })
            .collect()
    }
}

fn collect_boxes(tree: &DecisionTree, id: usize, current: &mut LeafBox, out: &mut Vec<LeafBox>, target: Option<usize>) {
    let node = &tree.nodes[id];
    match node.split {
        None => {
            let class = node.class();
            if target.is_none_or(|t| t == class) {
                let mut b = current.clone();
                b.class = class;
                b.leaf = id;
                out.push(b);
            }
        }
        Some(s) => {
            let j = s.feature;
            let (saved_hi, saved_hi_open) = (current.hi[j], current.hi_open[j]);
            if s.threshold < current.hi[j] {
                current.hi[j] = s.threshold;
                current.hi_open[j] = false;
            }
            collect_boxes(tree, s.left, current, out, target);
            current.hi[j] = saved_hi;
            current.hi_open[j] = saved_hi_open;

            let (saved_lo, saved_lo_open) = (current.lo[j], current.lo_open[j]);
            if s.threshold >= current.lo[j] {
                // At equality the strict inequality only tightens the bound.
                current.lo[j] = s.threshold;
                current.lo_open[j] = true;
            }
            collect_boxes(tree, s.right, current, out, target);
            current.lo[j] = saved_lo;
            current.lo_open[j] = saved_lo_open;
        }
    }
}

/// Boxes of the leaves predicting `target_class`, in depth-first order (left
/// child first).
pub fn leaf_regions(tree: &DecisionTree, target_class: usize) -> Vec<LeafBox> {
    let mut out = Vec::new();
    collect_boxes(tree, 0, &mut LeafBox::unbounded(tree.n_features), &mut out, Some(target_class));
    out
}

/// Boxes of every leaf; together they partition the input space.
pub fn all_leaf_regions(tree: &DecisionTree) -> Vec<LeafBox> {
    let mut out = Vec::new();
    collect_boxes(tree, 0, &mut LeafBox::unbounded(tree.n_features), &mut out, None);
    out
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Number of coordinates that differ by more than `tolerance`.
pub fn sparsity(x_cf: &[f64], x_orig: &[f64], tolerance: f64) -> Result<usize> {
    if x_cf.len() != x_orig.len() {
        return Err(Error::DimensionMismatch {
            expected: x_orig.len(),
            found: x_cf.len(),
        });
    }
    Ok(x_cf
        .iter()
        .zip(x_orig)
        .filter(|(a, b)| (*a - *b).abs() > tolerance)
        .count())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub point: Vec<f64>,
    pub distance: f64,
    /// Node index of the leaf the counterfactual lands in.
    pub leaf: usize,
}

/// Point closest to `x_orig` in L1 at which `tree` predicts `target_class`.
/// Ties prefer fewer changed coordinates, then the earlier leaf in depth-first
/// order.
pub fn closest_counterfactual(
    tree: &DecisionTree,
    x_orig: &[f64],
    target_class: usize,
    cfg: &CfConfig,
) -> Result<Counterfactual> {
    cfg.validate()?;
    if x_orig.len() != tree.n_features {
        return Err(Error::DimensionMismatch {
            expected: tree.n_features,
            found: x_orig.len(),
        });
    }
    let mut best: Option<(Counterfactual, usize)> = None;
    for b in leaf_regions(tree, target_class) {
        let point = b.nearest_point(x_orig, cfg.margin);
        let distance = l1_distance(&point, x_orig);
        let changed = sparsity(&point, x_orig, cfg.tolerance)?;
        let better = match &best {
            None => true,
            Some((cur, cur_changed)) => {
                distance < cur.distance - TIE_EPS
                    || (distance <= cur.distance + TIE_EPS && changed < *cur_changed)
            }
        };
        if better {
            best = Some((
                Counterfactual {
                    point,
                    distance,
                    leaf: b.leaf,
                },
                changed,
            ));
        }
    }
    let (cf, _) = best.ok_or(Error::TargetUnreachable(target_class))?;
    debug_assert_eq!(tree.leaf_index(&cf.point), cf.leaf);
    Ok(cf)
}
