//! Exhaustive search over node-wise strategy grids on tiny trees.
//!
//! A strategy picks one `ξ` per internal node, which is exactly predictability
//! on a tree. The maximum over all such combinations splits over the root's
//! children: once the root position is fixed, each child subtree is
//! maximised on its own. The result is the same number full enumeration would
//! give, at a cost linear rather than exponential in the number of nodes.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tree::{NodeId, ScenarioTree};
use crate::utility::UtilityFunction;

/// Largest number of utility evaluations allowed.
pub const EVALUATION_BUDGET: u128 = 100_000_000;
pub const MAX_HORIZON: usize = 2;

/// The candidate set `{B(2i − (n−1))/(n−1) : 0 <= i < n}` for every node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrategyGrid {
    pub bound: f64,
    /// Number of points; odd, so that 0 is a candidate.
    pub resolution: usize,
}

impl StrategyGrid {
    pub fn new(bound: f64, resolution: usize) -> Result<Self> {
        if resolution.is_multiple_of(2) {
            return Err(Error::Config(format!("oracle resolution {resolution} must be odd")));
        }
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::Config(format!("oracle bound {bound} must be finite and nonnegative")));
        }
        Ok(Self { bound, resolution })
    }

    /// Exactly symmetric, with an exact zero in the middle.
    pub fn points<T: Scalar>(&self) -> Vec<T> {
        if self.resolution == 1 {
            return vec![T::zero()];
        }
        let m = (self.resolution - 1) as i64;
        let b = T::lit(self.bound);
        (0..self.resolution as i64)
            .map(|i| b * T::lit((2 * i - m) as f64) / T::lit(m as f64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult<T> {
    pub value: T,
    /// Chosen position per internal node, in node order.
    pub strategy: Vec<(String, T)>,
    pub evaluations: u128,
}

/// Best `(ξ, value)` at `node` with wealth `x`, the node's children all leaves.
/// Ties keep the first candidate in scan order.
fn last_step<T: Scalar>(tree: &ScenarioTree<T>, u: &UtilityFunction<T>, node: NodeId, x: T, xs: &[T]) -> (T, T) {
    let kids: Vec<(T, T)> = tree
        .children(node)
        .iter()
        .map(|&c| (tree.node(c).cond_prob, tree.increment(c)[0]))
        .collect();
    let mut best = (T::zero(), T::neg_infinity());
    for &xi in xs {
        let v: T = kids.iter().map(|&(p, ds)| p * u.eval(x + xi * ds)).sum();
        if v > best.1 {
            best = (xi, v);
        }
    }
    best
}

/// `max E U(V_T^{x0, φ})` over strategies drawn from `grid` at every node.
pub fn brute_force_value<T: Scalar>(
    tree: &ScenarioTree<T>,
    u: &UtilityFunction<T>,
    x0: T,
    grid: &StrategyGrid,
) -> Result<OracleResult<T>> {
    if tree.dim() != 1 {
        return Err(Error::Unsupported(format!("oracle needs d = 1, got {}", tree.dim())));
    }
    if tree.horizon() > MAX_HORIZON {
        return Err(Error::Unsupported(format!("oracle needs T <= {MAX_HORIZON}, got {}", tree.horizon())));
    }
    let n = grid.resolution as u128;
    let root = tree.root();
    let leaves = tree.leaves().len() as u128;
    let needed = match tree.horizon() {
        1 => n * leaves,
        _ => n * n * leaves,
    };
    if needed > EVALUATION_BUDGET {
        return Err(Error::Budget { needed, budget: EVALUATION_BUDGET });
    }
    let xs: Vec<T> = grid.points();
    let name = |id: NodeId| tree.node(id).id.clone();

    if tree.horizon() == 1 {
        let (xi, value) = last_step(tree, u, root, x0, &xs);
        return Ok(OracleResult { value, strategy: vec![(name(root), xi)], evaluations: needed });
    }

    let children = tree.children(root);
    // One entry per root candidate: total value and the children's choices.
    let scored: Vec<(T, Vec<T>)> = xs
        .par_iter()
        .map(|&xi| {
            let mut total = T::zero();
            let mut picks = Vec::with_capacity(children.len());
            for &c in children {
                let w = x0 + xi * tree.increment(c)[0];
                let (xc, v) = last_step(tree, u, c, w, &xs);
                total = total + tree.node(c).cond_prob * v;
                picks.push(xc);
            }
            (total, picks)
        })
        .collect();
    let mut best = 0;
    for (i, s) in scored.iter().enumerate() {
        if s.0 > scored[best].0 {
            best = i;
        }
    }
    let mut strategy = vec![(name(root), xs[best])];
    strategy.extend(children.iter().zip(&scored[best].1).map(|(&c, &x)| (name(c), x)));
    Ok(OracleResult { value: scored[best].0, strategy, evaluations: needed })
}
