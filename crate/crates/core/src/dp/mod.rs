//! Backward induction `U_{t-1}(x) = max_ξ E(U_t(x + ξ·ΔS_t) | node)` over a
//! uniform wealth grid, one depth at a time, leaves first.
//!
//! Each internal node gets a [`ValueSlice`] for its value function and the
//! maximiser at every grid point. Downside levels `N` are propagated from the
//! leaves up so that every node's one-step problem carries a valid a-priori
//! bound.

pub mod diagnostics;
mod simulate;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noarb::{certify_tree, NodeCertificate, SubspaceBasis};
use crate::onestep::{OneStepProblem, Outcome, SearchConfig, StepParams, ValueFn, ValueSlice};
use crate::scalar::{norm, Scalar};
use crate::tree::{NodeId, ScenarioTree};
use crate::utility::{growth_constant, UtilityFunction};

pub use diagnostics::{wellposed_check, WellPosedness};
pub use simulate::{extract_and_simulate, NodeVisit, SimulationReport, StepResidual};

/// Slice drops up to this (relative) size are rounding and get clipped.
pub const MONOTONE_TOL: f64 = 1e-9;
/// Relative margin turning the closed-form downside levels into strict ones.
pub const DOWNSIDE_MARGIN: f64 = 1e-6;
/// Optimiser tolerance entering every residual tolerance.
pub const OPTIMIZER_TOL: f64 = 1e-8;
/// Smallest admissible wealth grid.
pub const MIN_GRID: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NVariant {
    /// `N_{t-1}` is the maximum of the successors' `N'`.
    #[default]
    Max,
    /// `N_{t-1} = 2 E(N' | node) / κ`.
    Markov,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DpOptions {
    pub n_variant: NVariant,
    pub search: SearchConfig,
}

/// Uniform wealth grid `lo + (hi − lo) i / (n − 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthGrid<T> {
    points: Vec<T>,
}

impl<T: Scalar> WealthGrid<T> {
    pub fn uniform(lo: T, hi: T, n: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("wealth window [{lo}, {hi}] is empty")));
        }
        if n < MIN_GRID {
            return Err(Error::Config(format!("grid size {n} below {MIN_GRID}")));
        }
        let last = T::from_usize_lossy(n - 1);
        // Convex combination: symmetric windows get an exact 0 in the middle.
        let points: Vec<T> = (0..n)
            .map(|i| {
                let w = T::from_usize_lossy(i);
                (lo * (last - w) + hi * w) / last
            })
            .collect();
        if points.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Config(format!("wealth window [{lo}, {hi}] too narrow for {n} points")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn lo(&self) -> T {
        self.points[0]
    }

    pub fn hi(&self) -> T {
        self.points[self.points.len() - 1]
    }

    pub fn spacing(&self) -> T {
        (self.hi() - self.lo()) / T::from_usize_lossy(self.len() - 1)
    }

    pub fn contains(&self, x: T) -> bool {
        x >= self.lo() && x <= self.hi()
    }

    /// Indices of the grid points bracketing `x`, clamped to the window.
    pub fn bracket(&self, x: T) -> (usize, usize) {
        let n = self.len();
        let i = self.points.partition_point(|&g| g <= x).clamp(1, n - 1) - 1;
        (i, i + 1)
    }

    pub fn nearest(&self, x: T) -> usize {
        let (i, j) = self.bracket(x);
        if (x - self.points[i]).abs() <= (self.points[j] - x).abs() {
            i
        } else {
            j
        }
    }
}

/// Constants of one node's one-step problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeConstants<T> {
    pub delta: T,
    pub kappa: T,
    pub eta: T,
    pub l: T,
    /// Search radius valid over the whole window.
    pub k: T,
    pub ktilde1: T,
    /// Downside level `N` of the children's value functions.
    pub downside: T,
    /// Level `I` handed to the parent through `N'`.
    pub nprime_level: T,
    /// `v(x) <= −nprime_level` for `x <= −nprime`.
    pub nprime: T,
}

/// `U_t(−N) < −2C/κ − 1` at the node's children.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DownsideCheck<T> {
    pub threshold: T,
    pub child_values: Vec<T>,
    /// Conditional probability of the children passing.
    pub pass_prob: T,
    /// `1 − κ/2`.
    pub required: T,
    pub ok: bool,
}

/// `v(−N') <= −I` for the node's own value function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NprimeCheck<T> {
    pub value: T,
    pub tol: T,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct NodeSolution<T> {
    pub node: NodeId,
    pub basis: SubspaceBasis<T>,
    pub slice: ValueSlice<T>,
    /// Maximiser at each grid point, in coordinates of `basis`.
    pub policy: Vec<Vec<T>>,
    /// Grid points whose optimum evaluated a child outside its window.
    pub extrapolated_points: usize,
    /// Largest clipped monotonicity drop.
    pub clipped: T,
    pub constants: NodeConstants<T>,
    pub downside_check: DownsideCheck<T>,
    pub nprime_check: NprimeCheck<T>,
}

impl<T: Scalar> NodeSolution<T> {
    /// Maximiser at grid point `i` as a vector of `R^d`.
    pub fn xi(&self, i: usize) -> Vec<T> {
        self.basis.embed(&self.policy[i])
    }
}

/// Value functions and maximisers at every internal node.
#[derive(Debug, Clone)]
pub struct DpSolution<T> {
    pub utility: UtilityFunction<T>,
    pub grid: WealthGrid<T>,
    pub growth: T,
    pub options: DpOptions,
    pub wellposed: WellPosedness,
    pub nodes: BTreeMap<NodeId, NodeSolution<T>>,
}

impl<T: Scalar> DpSolution<T> {
    /// `U_t` at `node`: the utility at leaves, the node's slice otherwise.
    pub fn value_fn(&self, node: NodeId) -> &dyn ValueFn<T> {
        value_fn_of(&self.utility, &self.nodes, node)
    }

    pub fn node(&self, node: NodeId) -> Option<&NodeSolution<T>> {
        self.nodes.get(&node)
    }

    /// The one-step problem solved at an internal node.
    pub fn problem<'s>(&'s self, tree: &ScenarioTree<T>, node: NodeId) -> Result<OneStepProblem<'s, T>> {
        let sol = self.nodes.get(&node).ok_or_else(|| Error::Config(format!("node {} is a leaf", tree.node(node).id)))?;
        let c = &sol.constants;
        let params = self.params(c.delta, c.kappa, c.downside);
        node_problem(tree, &self.utility, &self.nodes, node, &sol.basis, params)
    }

    fn params(&self, delta: T, kappa: T, downside: T) -> StepParams<T> {
        step_params(&self.utility, self.growth, delta, kappa, downside)
    }
}

fn value_fn_of<'s, T: Scalar>(
    u: &'s UtilityFunction<T>,
    solved: &'s BTreeMap<NodeId, NodeSolution<T>>,
    node: NodeId,
) -> &'s dyn ValueFn<T> {
    match solved.get(&node) {
        Some(s) => &s.slice,
        None => u,
    }
}

fn step_params<T: Scalar>(u: &UtilityFunction<T>, growth: T, delta: T, kappa: T, downside: T) -> StepParams<T> {
    StepParams {
        alpha: delta,
        beta: kappa,
        growth,
        gamma_plus: u.ae.gamma_plus,
        gamma_minus: u.ae.gamma_minus,
        downside,
    }
}

fn node_problem<'s, T: Scalar>(
    tree: &ScenarioTree<T>,
    u: &'s UtilityFunction<T>,
    solved: &'s BTreeMap<NodeId, NodeSolution<T>>,
    node: NodeId,
    basis: &SubspaceBasis<T>,
    params: StepParams<T>,
) -> Result<OneStepProblem<'s, T>> {
    let outcomes = tree
        .children(node)
        .iter()
        .map(|&c| {
            let inc = tree.increment(c);
            Outcome { prob: tree.node(c).cond_prob, coords: basis.coords(&inc), norm: norm(&inc), value: value_fn_of(u, solved, c) }
        })
        .collect();
    OneStepProblem::new(outcomes, basis.dim(), params)
}

/// `N_{T-1} = x̲ ((2C/κ + 1)/(−U(−x̲)))^{1/γ_}`, enlarged by [`DOWNSIDE_MARGIN`].
pub fn terminal_downside<T: Scalar>(u: &UtilityFunction<T>, growth: T, kappa: T) -> T {
    let ae = u.ae;
    let level = T::lit(2.0) * growth / kappa + T::one();
    let base = ae.x_minus * (level / -u.eval(-ae.x_minus)).powf(T::one() / ae.gamma_minus);
    base * (T::one() + T::lit(DOWNSIDE_MARGIN))
}

/// `N_{t-1}` from the children's `N'`.
pub fn propagate_downside<T: Scalar>(variant: NVariant, kappa: T, children: &[(T, T)]) -> T {
    match variant {
        NVariant::Max => children.iter().map(|&(_, n)| n).fold(T::zero(), T::max),
        NVariant::Markov => {
            let mean: T = children.iter().map(|&(p, n)| p * n).sum();
            T::lit(2.0) * mean / kappa
        }
    }
}

/// Level `I = 2C/κ + 1` used for `N'`, with `κ` taken at the parent.
fn nprime_level<T: Scalar>(growth: T, kappa_parent: T) -> T {
    (T::lit(2.0) * growth / kappa_parent + T::one()) * (T::one() + T::lit(DOWNSIDE_MARGIN))
}

/// Global value of the node's problem at a single wealth, with its own bound.
fn point_value<T: Scalar>(problem: &OneStepProblem<'_, T>, x: T, cfg: &SearchConfig) -> T {
    let k = problem.compute_k(x, x);
    problem.solve_with(x, k, &[], cfg).value
}

struct Ctx<'a, T: Scalar> {
    tree: &'a ScenarioTree<T>,
    u: &'a UtilityFunction<T>,
    grid: &'a WealthGrid<T>,
    growth: T,
    certs: &'a BTreeMap<NodeId, NodeCertificate<T>>,
    opts: &'a DpOptions,
}

impl<T: Scalar> Ctx<'_, T> {
    fn solve_node(&self, node: NodeId, solved: &BTreeMap<NodeId, NodeSolution<T>>) -> Result<NodeSolution<T>> {
        let tree = self.tree;
        let cert = &self.certs[&node];
        let (delta, kappa) = (cert.delta, cert.kappa);
        let id = &tree.node(node).id;

        let downside = if tree.node(node).depth + 1 == tree.horizon() {
            terminal_downside(self.u, self.growth, kappa)
        } else {
            let children: Vec<(T, T)> = tree
                .children(node)
                .iter()
                .map(|c| (tree.node(*c).cond_prob, solved[c].constants.nprime))
                .collect();
            propagate_downside(self.opts.n_variant, kappa, &children)
        };

        let params = step_params(self.u, self.growth, delta, kappa, downside);
        let problem = node_problem(tree, self.u, solved, node, &cert.basis, params)?;
        let (lo, hi) = (self.grid.lo(), self.grid.hi());
        let k = problem.compute_k(lo, hi);
        let cfg = &self.opts.search;

        let mut values = Vec::with_capacity(self.grid.len());
        let mut policy: Vec<Vec<T>> = Vec::with_capacity(self.grid.len());
        let mut extrapolated_points = 0;
        for &x in self.grid.points() {
            // The previous maximiser is feasible here and G is nondecreasing in x.
            let hints: Vec<Vec<T>> = policy.last().cloned().into_iter().collect();
            let sol = problem.solve_with(x, k, &hints, cfg);
            if !sol.value.is_finite() {
                return Err(Error::NonFinite { node: id.clone(), x: x.as_f64() });
            }
            extrapolated_points += usize::from(sol.extrapolated);
            values.push(sol.value);
            policy.push(sol.y);
        }

        let mut clipped = T::zero();
        for i in 1..values.len() {
            let drop = values[i - 1] - values[i];
            if drop > T::zero() {
                if drop > T::tol(MONOTONE_TOL) * (T::one() + values[i].abs()) {
                    return Err(Error::Monotonicity {
                        node: id.clone(),
                        x: self.grid.points()[i].as_f64(),
                        drop: drop.as_f64(),
                    });
                }
                clipped = clipped.max(drop);
                values[i] = values[i - 1];
            }
        }

        let kappa_parent = tree.node(node).parent.map_or(kappa, |p| self.certs[&p].kappa);
        let level = nprime_level(self.growth, kappa_parent);
        let nprime = problem.compute_nprime(level)?;
        let np_value = point_value(&problem, -nprime, cfg);
        let np_tol = child_interp_error(solved, tree, node, -nprime) + T::tol(OPTIMIZER_TOL) * (T::one() + level);
        let nprime_check = NprimeCheck { value: np_value, tol: np_tol, ok: np_value <= -level + np_tol };

        let downside_check = self.downside_check(node, kappa, downside, solved)?;

        let constants = NodeConstants {
            delta,
            kappa,
            eta: problem.eta(),
            l: problem.compute_l(),
            k,
            ktilde1: problem.compute_ktilde1(),
            downside,
            nprime_level: level,
            nprime,
        };
        let slice = ValueSlice::new(self.grid.points().to_vec(), values, self.u.ae.gamma_plus, self.u.ae.gamma_minus);
        Ok(NodeSolution {
            node,
            basis: cert.basis.clone(),
            slice,
            policy,
            extrapolated_points,
            clipped,
            constants,
            downside_check,
            nprime_check,
        })
    }

    /// Children's exact values at `−N`: the utility at leaves, a fresh global
    /// maximisation at internal children.
    fn downside_check(
        &self,
        node: NodeId,
        kappa: T,
        downside: T,
        solved: &BTreeMap<NodeId, NodeSolution<T>>,
    ) -> Result<DownsideCheck<T>> {
        let tree = self.tree;
        let threshold = -(T::lit(2.0) * self.growth / kappa) - T::one();
        let mut child_values = Vec::new();
        let mut pass_prob = T::zero();
        for &c in tree.children(node) {
            let v = match solved.get(&c) {
                None => self.u.eval(-downside),
                Some(cs) => {
                    let cc = &cs.constants;
                    let params = step_params(self.u, self.growth, cc.delta, cc.kappa, cc.downside);
                    let p = node_problem(tree, self.u, solved, c, &cs.basis, params)?;
                    point_value(&p, -downside, &self.opts.search)
                }
            };
            if v < threshold {
                pass_prob = pass_prob + tree.node(c).cond_prob;
            }
            child_values.push(v);
        }
        let required = T::one() - kappa / T::lit(2.0);
        let ok = pass_prob >= required - T::tol(1e-12);
        Ok(DownsideCheck { threshold, child_values, pass_prob, required, ok })
    }
}

/// Interpolation error of a child's value function near `x`; zero in closed form.
fn child_interp_error<T: Scalar>(
    solved: &BTreeMap<NodeId, NodeSolution<T>>,
    tree: &ScenarioTree<T>,
    node: NodeId,
    x: T,
) -> T {
    tree.children(node)
        .iter()
        .filter_map(|c| solved.get(c))
        .map(|s| if s.slice.in_window(x) { s.slice.interpolation_error(x) } else { T::zero() })
        .fold(T::zero(), T::max)
}

/// Solves every internal node, deepest first; nodes of one depth in parallel.
pub fn backward_induction<T: Scalar>(
    tree: &ScenarioTree<T>,
    u: &UtilityFunction<T>,
    window: (T, T),
    grid_n: usize,
    opts: &DpOptions,
) -> Result<DpSolution<T>> {
    let wellposed = wellposed_check(tree, u)?;
    if !wellposed.well_posed {
        return Err(Error::IllPosed(wellposed.reason.clone().unwrap_or_default()));
    }
    let grid = WealthGrid::uniform(window.0, window.1, grid_n)?;
    let certs: BTreeMap<NodeId, NodeCertificate<T>> =
        certify_tree(tree)?.into_iter().map(|c| (c.node, c)).collect();
    if let Some(bad) = certs.values().find(|c| !c.na_ok) {
        return Err(Error::Arbitrage {
            node: tree.node(bad.node).id.clone(),
            witness: bad.witness.iter().flatten().map(|x| x.as_f64()).collect(),
        });
    }
    let growth = growth_constant(u).c;
    let ctx = Ctx { tree, u, grid: &grid, growth, certs: &certs, opts };

    let mut solved: BTreeMap<NodeId, NodeSolution<T>> = BTreeMap::new();
    for depth in (0..tree.horizon()).rev() {
        let frozen = &solved;
        let level: Vec<NodeSolution<T>> = tree
            .at_depth(depth)
            .par_iter()
            .map(|&n| ctx.solve_node(n, frozen))
            .collect::<Result<_>>()?;
        for s in level {
            solved.insert(s.node, s);
        }
    }

    Ok(DpSolution { utility: u.clone(), grid, growth, options: *opts, wellposed, nodes: solved })
}
