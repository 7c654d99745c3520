//! Checks run on a solved value function: well-posedness gate, polynomial
//! growth fits, grid invariants and randomised probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{DpSolution, OPTIMIZER_TOL};
use crate::error::Result;
use crate::onestep::ValueFn;
use crate::scalar::{norm, Scalar};
use crate::tree::ScenarioTree;
use crate::utility::{certify_ae, detect_illposed, growth_violations, CertificationMethod, IllPosedness, UtilityFunction};

/// Tolerance of the `U_t >= U`, monotonicity and growth invariants.
pub const INVARIANT_TOL: f64 = 1e-9;
/// Terms of the divergence series attached to an ill-posed verdict.
const DIVERGENCE_TERMS: usize = 100;

#[derive(Debug, Clone, Serialize)]
pub struct WellPosedness {
    pub well_posed: bool,
    pub gamma_gap: bool,
    pub ae_method: Option<CertificationMethod>,
    pub bounded_above: bool,
    /// `E U⁻(x + y·(S_T − S_0)) < ∞` at every probe.
    pub negative_part_finite: bool,
    pub reason: Option<String>,
    pub divergence: Option<IllPosedness>,
}

/// Refuses `γ̄ >= γ_`, then certifies the utility and evaluates `E U⁻` at a
/// few buy-and-hold probes. Finiteness of `E U_0` is established by the
/// induction itself.
pub fn wellposed_check<T: Scalar>(tree: &ScenarioTree<T>, u: &UtilityFunction<T>) -> Result<WellPosedness> {
    let ae = u.ae;
    if ae.gamma_plus >= ae.gamma_minus {
        return Ok(WellPosedness {
            well_posed: false,
            gamma_gap: false,
            ae_method: None,
            bounded_above: u.is_bounded_above(),
            negative_part_finite: true,
            reason: Some("gamma_plus >= gamma_minus".into()),
            divergence: detect_illposed(u, DIVERGENCE_TERMS).ok(),
        });
    }
    let cert = certify_ae(u)?;

    let root = tree.root();
    let s0 = tree.node(root).price.clone();
    let mut finite = true;
    for x in [-1.0, 0.0, 1.0] {
        for y in [-1.0, 0.0, 1.0] {
            let e: T = tree
                .leaves()
                .iter()
                .map(|&l| {
                    let gain: T = tree.node(l).price.iter().zip(&s0).map(|(&a, &b)| (a - b) * T::lit(y)).sum();
                    tree.path_prob(l) * u.eval(T::lit(x) + gain).negative_part()
                })
                .sum();
            finite &= e.is_finite();
        }
    }
    Ok(WellPosedness {
        well_posed: finite,
        gamma_gap: true,
        ae_method: Some(cert.method),
        bounded_above: u.is_bounded_above(),
        negative_part_finite: finite,
        reason: (!finite).then(|| "E U^- is not finite".to_string()),
        divergence: None,
    })
}

/// `max_x f(x)/(|x|^γ̄ + 1)` over the grid, and whether it sits on the edge.
fn fit<T: Scalar>(f: impl Fn(T) -> T, xs: &[T], gamma: T) -> (T, bool) {
    let mut best = T::neg_infinity();
    let mut arg = 0;
    for (i, &x) in xs.iter().enumerate() {
        let r = f(x) / (x.abs().powf(gamma) + T::one());
        if r > best {
            best = r;
            arg = i;
        }
    }
    (best, arg == 0 || arg + 1 == xs.len())
}

#[derive(Debug, Clone, Serialize)]
pub struct TerminalFit {
    pub fitted: f64,
    /// `U(x̄)/x̄^γ̄ + c + U(x̄)`.
    pub proof_bound: f64,
    pub ok: bool,
    pub at_edge: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeFit {
    pub id: String,
    pub depth: usize,
    /// Smallest `C_t` with `U_t(x) <= C_t(|x|^γ̄ + 1)` on the grid.
    pub fitted: f64,
    /// Same fit for `E(U_{t+1}(x) | node)`, a lower bound for `fitted`.
    pub implied_by_children: f64,
    /// `J` with `E(U_{t+1}(x + |y||ΔS|) | node) <= J(|x|^γ̄ + |y|^γ̄ + 1)`.
    pub j: f64,
    pub grows_backward: bool,
    pub ok: bool,
    /// The fit is attained on the window edge, so it says nothing beyond it.
    pub at_edge: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PolynomialBounds {
    pub terminal: TerminalFit,
    pub nodes: Vec<NodeFit>,
}

pub fn polynomial_bound_diagnostics<T: Scalar>(tree: &ScenarioTree<T>, sol: &DpSolution<T>) -> PolynomialBounds {
    let xs = sol.grid.points();
    let u = &sol.utility;
    let g = u.ae.gamma_plus;
    let (c_t, edge_t) = fit(|x| u.eval(x), xs, g);
    let xb = u.ae.x_plus;
    let proof_bound = u.eval(xb) / xb.powf(g) + u.ae.c + u.eval(xb);
    let terminal = TerminalFit {
        fitted: c_t.as_f64(),
        proof_bound: proof_bound.as_f64(),
        ok: c_t <= proof_bound + T::tol(INVARIANT_TOL),
        at_edge: edge_t,
    };

    let fitted = |n| match sol.node(n) {
        Some(s) => fit(|x| s.slice.value(x), xs, g).0,
        None => c_t,
    };
    // (a + b)^γ <= 2^{(γ−1)⁺}(a^γ + b^γ).
    let sub = T::lit(2.0).powf((g - T::one()).positive_part());
    let nodes = sol
        .nodes
        .values()
        .map(|s| {
            let n = s.node;
            let (c, at_edge) = fit(|x| s.slice.value(x), xs, g);
            let children = tree.children(n);
            let implied = fit(
                |x| children.iter().map(|&ch| tree.node(ch).cond_prob * sol.value_fn(ch).value(x)).sum(),
                xs,
                g,
            )
            .0;
            let child_c: Vec<T> = children.iter().map(|&ch| fitted(ch)).collect();
            let j: T = children
                .iter()
                .zip(&child_c)
                .map(|(&ch, &cc)| {
                    let inc = norm(&tree.increment(ch));
                    tree.node(ch).cond_prob * cc.positive_part() * inc.powf(g).max(T::one())
                })
                .sum::<T>()
                * sub;
            let max_child = child_c.iter().copied().fold(T::neg_infinity(), T::max);
            NodeFit {
                id: tree.node(n).id.clone(),
                depth: tree.node(n).depth,
                fitted: c.as_f64(),
                implied_by_children: implied.as_f64(),
                j: j.as_f64(),
                grows_backward: c >= max_child,
                ok: c >= implied - T::tol(INVARIANT_TOL) * (T::one() + implied.abs()),
                at_edge,
            }
        })
        .collect();
    PolynomialBounds { terminal, nodes }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct InvariantReport {
    pub grid_points: usize,
    /// `U_t(x) < U(x) − tol` at a grid point.
    pub below_utility: usize,
    pub monotonicity: usize,
    pub growth_samples: usize,
    pub growth: usize,
    pub ok: bool,
}

/// Number of `λ` values in `[1, 10]` for the growth inequalities.
const GROWTH_LAMBDAS: usize = 40;
/// Number of grid points sampled per slice for the growth inequalities.
const GROWTH_POINTS: usize = 200;

/// `U_t >= U` and monotonicity on every grid point, growth inequalities on a
/// subsample of the grid.
pub fn invariant_checks<T: Scalar>(sol: &DpSolution<T>) -> InvariantReport {
    let u = &sol.utility;
    let tol = T::tol(INVARIANT_TOL);
    let lambdas: Vec<T> = (0..GROWTH_LAMBDAS)
        .map(|i| T::lit(10f64.powf(i as f64 / (GROWTH_LAMBDAS - 1) as f64)))
        .collect();
    let mut r = InvariantReport::default();
    for s in sol.nodes.values() {
        let (xs, vs) = (s.slice.grid(), s.slice.values());
        r.grid_points += xs.len();
        for (&x, &v) in xs.iter().zip(vs) {
            let ux = u.eval(x);
            if v < ux - tol * (T::one() + ux.abs()) {
                r.below_utility += 1;
            }
        }
        r.monotonicity += vs.windows(2).filter(|w| w[1] < w[0] - tol * (T::one() + w[0].abs())).count();
        let step = (xs.len() / GROWTH_POINTS).max(1);
        let sample: Vec<T> = xs.iter().step_by(step).copied().collect();
        r.growth_samples += sample.len() * lambdas.len() * 2;
        r.growth += growth_violations(
            |x| s.slice.value(x),
            [u.ae.gamma_plus, u.ae.gamma_minus],
            sol.growth,
            &sample,
            &lambdas,
            tol,
        )
        .len();
    }
    r.ok = r.below_utility == 0 && r.monotonicity == 0 && r.growth == 0;
    r
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ProbeStats {
    pub probes: usize,
    pub violations: usize,
    pub max_excess: f64,
}

impl ProbeStats {
    fn record(&mut self, excess: f64, violated: bool) {
        self.probes += 1;
        if violated {
            self.violations += 1;
        }
        if excess > self.max_excess || self.probes == 1 {
            self.max_excess = excess;
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ProbeReport {
    pub seed: u64,
    /// `E(U_t(x + ξ·ΔS) | node) <= U_{t−1}(x)` for `|ξ| <= K`.
    pub dominated: ProbeStats,
    /// `G(x, y) <= G(x, 0)` for `|y| ∈ [K, 2K]`.
    pub bound: ProbeStats,
}

fn random_direction<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    match k {
        1 => vec![if rng.random::<bool>() { 1.0 } else { -1.0 }],
        2 => {
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            vec![t.cos(), t.sin()]
        }
        _ => {
            let z: f64 = rng.random_range(-1.0..1.0);
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            vec![r * t.cos(), r * t.sin(), z]
        }
    }
}

/// `probes` random pairs per internal node for each of the two checks. Each
/// node draws from its own ChaCha stream, so results do not depend on order.
pub fn probe_checks<T: Scalar>(tree: &ScenarioTree<T>, sol: &DpSolution<T>, probes: usize, seed: u64) -> Result<ProbeReport> {
    let mut report = ProbeReport { seed, ..Default::default() };
    let (lo, hi) = (sol.grid.lo().as_f64(), sol.grid.hi().as_f64());
    for s in sol.nodes.values() {
        let k = s.basis.dim();
        if k == 0 {
            continue;
        }
        let problem = sol.problem(tree, s.node)?;
        let big_k = s.constants.k.as_f64();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s.node.0 as u64);
        for i in 0..probes {
            let x = rng.random_range(lo..=hi);
            let core = 1.0 + x.abs();
            let r = if i % 2 == 0 || big_k <= core {
                rng.random_range(0.0..=core.min(big_k))
            } else {
                (rng.random_range(core.ln()..=big_k.ln())).exp()
            };
            let y: Vec<T> = random_direction(&mut rng, k).into_iter().map(|c| T::lit(c * r)).collect();
            let xt = T::lit(x);
            let g = problem.bellman_g(xt, &y);
            let v = s.slice.value(xt);
            let tol = s.slice.interpolation_error(xt) + T::tol(OPTIMIZER_TOL) * (T::one() + v.abs());
            let excess = (g - v).as_f64();
            report.dominated.record(excess, g > v + tol);

            let x = rng.random_range(lo..=hi);
            let r = rng.random_range(big_k..=2.0 * big_k);
            let y: Vec<T> = random_direction(&mut rng, k).into_iter().map(|c| T::lit(c * r)).collect();
            let xt = T::lit(x);
            let g = problem.bellman_g(xt, &y);
            let g0 = problem.bellman_g(xt, &vec![T::zero(); k]);
            report.bound.record((g - g0).as_f64(), g > g0);
        }
    }
    Ok(report)
}
