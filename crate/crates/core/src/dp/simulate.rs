//! Forward pass: apply the extracted policy along every path and measure how
//! far each step is from the Bellman identity.

use std::collections::HashMap;

use serde::Serialize;

use super::{DpSolution, OPTIMIZER_TOL};
use crate::error::Result;
use crate::onestep::ValueFn;
use crate::scalar::{dot, norm, Scalar};
use crate::tree::{NodeId, ScenarioTree};

/// Residual tolerance is this multiple of the local error bound.
pub const RESIDUAL_FACTOR: f64 = 5.0;

#[derive(Debug, Clone, Serialize)]
pub struct NodeVisit {
    pub id: String,
    pub depth: usize,
    pub wealth: f64,
    pub xi: Vec<f64>,
    /// `U_t(V_t)` read from the node's slice.
    pub value: f64,
    /// `E(U_{t+1}(V_{t+1}) | node)` under the applied strategy.
    pub achieved: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub in_window: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepResidual {
    /// Trading date `t`; the residual compares depth `t − 1` with depth `t`.
    pub step: usize,
    pub residual: f64,
    /// Tolerance at the node attaining the residual.
    pub tolerance: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub x0: f64,
    pub u0: f64,
    pub expected_terminal_utility: f64,
    pub chain_gap: f64,
    pub chain_tolerance: f64,
    pub chain_ok: bool,
    pub residuals: Vec<StepResidual>,
    pub visits: Vec<NodeVisit>,
    pub window_breach: bool,
    pub certified: bool,
}

/// Maximiser at wealth `w`: local re-optimisation from the policies at the
/// two bracketing grid points, keeping the better one.
fn policy_at<T: Scalar>(sol: &DpSolution<T>, tree: &ScenarioTree<T>, node: NodeId, w: T) -> Result<(Vec<T>, T)> {
    let s = &sol.nodes[&node];
    let problem = sol.problem(tree, node)?;
    if s.basis.dim() == 0 {
        return Ok((Vec::new(), problem.expected_value_at(w)));
    }
    let bound = s.constants.k.max(problem.compute_k(w, w));
    let h = sol.grid.spacing();
    let (i, j) = sol.grid.bracket(w);
    let mut best: Option<(Vec<T>, T)> = None;
    for idx in [i, j] {
        let start = &s.policy[idx];
        let step = (T::lit(8.0) * h).max(T::lit(1e-6)) * (T::one() + norm(start));
        let r = problem.refine_from(w, start, step, bound, &sol.options.search);
        let better = match &best {
            None => true,
            Some((y, v)) => r.value > *v || (r.value == *v && norm(&r.y) < norm(y)),
        };
        if better {
            best = Some((r.y, r.value));
        }
    }
    Ok(best.expect("two starts"))
}

/// Walks every path from `x0`, applying the re-optimised policy at each node.
pub fn extract_and_simulate<T: Scalar>(tree: &ScenarioTree<T>, sol: &DpSolution<T>, x0: T) -> Result<SimulationReport> {
    let mut wealth: HashMap<NodeId, T> = HashMap::from([(tree.root(), x0)]);
    let mut visits = Vec::new();
    let mut residuals = Vec::new();
    let mut chain_tol = T::zero();
    let mut breach = false;

    for depth in 0..tree.horizon() {
        let mut worst: Option<(T, T)> = None;
        let mut ok = true;
        let mut depth_tol = T::zero();
        for &n in tree.at_depth(depth) {
            let w = wealth[&n];
            let s = &sol.nodes[&n];
            let (y, achieved) = policy_at(sol, tree, n, w)?;
            let xi = s.basis.embed(&y);
            let value = s.slice.value(w);
            let in_window = sol.grid.contains(w);
            breach |= !in_window;
            let residual = (achieved - value).abs();
            let local = if in_window { s.slice.interpolation_error(w) } else { T::zero() };
            let tol = T::lit(RESIDUAL_FACTOR) * (local + T::tol(OPTIMIZER_TOL) * (T::one() + value.abs()));
            ok &= residual <= tol;
            depth_tol = depth_tol.max(tol);
            if worst.is_none_or(|(r, _)| residual > r) {
                worst = Some((residual, tol));
            }
            for &c in tree.children(n) {
                wealth.insert(c, w + dot(&xi, &tree.increment(c)));
            }
            visits.push(NodeVisit {
                id: tree.node(n).id.clone(),
                depth,
                wealth: w.as_f64(),
                xi: xi.iter().map(|v| v.as_f64()).collect(),
                value: value.as_f64(),
                achieved: achieved.as_f64(),
                residual: residual.as_f64(),
                tolerance: tol.as_f64(),
                in_window,
            });
        }
        let (r, t) = worst.unwrap_or((T::zero(), T::zero()));
        residuals.push(StepResidual { step: depth + 1, residual: r.as_f64(), tolerance: t.as_f64(), ok });
        chain_tol = chain_tol + depth_tol;
    }

    let terminal: HashMap<NodeId, T> = tree.leaves().iter().map(|&l| (l, sol.utility.eval(wealth[&l]))).collect();
    let eu = tree.total_expect(&terminal)?;
    let u0 = sol.value_fn(tree.root()).value(x0);
    let gap = (eu - u0).abs();
    let chain_ok = gap <= chain_tol;
    let certified = !breach && chain_ok && residuals.iter().all(|r| r.ok);
    Ok(SimulationReport {
        x0: x0.as_f64(),
        u0: u0.as_f64(),
        expected_terminal_utility: eu.as_f64(),
        chain_gap: gap.as_f64(),
        chain_tolerance: chain_tol.as_f64(),
        chain_ok,
        residuals,
        visits,
        window_breach: breach,
        certified,
    })
}
