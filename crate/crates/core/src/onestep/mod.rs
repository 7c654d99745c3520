//! The single-node Bellman step.
//!
//! Given the next-period value `V` at each child, the node's outcomes `Y_j`
//! (increments expressed in coordinates of the support subspace `D`) and the
//! no-arbitrage constants `(α, β)`, this module evaluates
//! `G(x, y) = Σ_j p_j V_j(x + y·Y_j)`, computes an a-priori radius `K`
//! outside which no strategy can beat the zero strategy, and maximises `G`
//! over the ball `|y| <= K`.

mod search;
mod slice;

use log::warn;
use serde::Serialize;

pub use search::SearchConfig;
pub use slice::{ValueFn, ValueSlice};

use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};

/// `η = min(0.999, (γ̄/γ_ + 1)/2)`, falling back to the midpoint when the cap
/// would break `γ̄ < η γ_`.
pub fn choose_eta<T: Scalar>(gamma_plus: T, gamma_minus: T) -> Result<T> {
    if !(gamma_plus < gamma_minus) || gamma_minus <= T::zero() {
        return Err(Error::IllPosed(format!(
            "eta needs gamma_plus < gamma_minus, got {gamma_plus} and {gamma_minus}"
        )));
    }
    let mid = (gamma_plus / gamma_minus + T::one()) / T::lit(2.0);
    let capped = mid.min(T::lit(0.999));
    Ok(if gamma_plus < capped * gamma_minus { capped } else { mid })
}

/// Scalars entering the a-priori bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants<T> {
    pub alpha: T,
    pub beta: T,
    pub growth: T,
    pub gamma_plus: T,
    pub gamma_minus: T,
    pub eta: T,
    /// Downside level `N` of the next-period value.
    pub downside: T,
    /// `L = E(V⁺(1 + |Y|))`.
    pub l: T,
}

impl<T: Scalar> BoundConstants<T> {
    fn gap(&self) -> T {
        self.eta * self.gamma_minus - self.gamma_plus
    }

    pub fn k0(&self, x_plus: T) -> T {
        let r = (x_plus + self.downside) / self.alpha;
        T::one()
            .max(x_plus)
            .max(r.powf(T::one() / (T::one() - self.eta)))
            .max(r)
    }

    pub fn k1(&self, x_plus: T) -> T {
        let e = T::one() / self.gap();
        self.k0(x_plus)
            .max((T::lit(6.0) * self.l / self.beta).powf(e))
            .max((T::lit(6.0) * self.growth / self.beta).powf(e))
    }

    /// `neg_part` is `[E(V(−x⁻) | node)]⁻`.
    pub fn k2(&self, neg_part: T) -> T {
        (T::lit(6.0) * neg_part / self.beta).powf(T::one() / (self.eta * self.gamma_minus))
    }

    pub fn ktilde1(&self) -> T {
        let r = self.downside / self.alpha;
        let e = T::one() / self.gap();
        T::one()
            .max(r)
            .max(r.powf(T::one() / (T::one() - self.eta)))
            .max((T::lit(8.0) * self.l / self.beta).powf(e))
            .max((T::lit(8.0) * self.growth / self.beta).powf(e))
    }
}

/// `N' = N (2/β (I + e))^{1/γ_}` with `e = E(V⁺(K̃₁|Y|))`.
pub fn downside_level<T: Scalar>(downside: T, beta: T, level: T, e_plus: T, gamma_minus: T) -> T {
    downside * (T::lit(2.0) / beta * (level + e_plus)).powf(T::one() / gamma_minus)
}

/// One child of the node.
pub struct Outcome<'a, T: Scalar> {
    pub prob: T,
    /// The child's increment in coordinates of the support subspace.
    pub coords: Vec<T>,
    /// Euclidean norm of the increment.
    pub norm: T,
    pub value: &'a dyn ValueFn<T>,
}

/// Node-level inputs other than the outcomes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams<T> {
    pub alpha: T,
    pub beta: T,
    pub growth: T,
    pub gamma_plus: T,
    pub gamma_minus: T,
    pub downside: T,
}

pub struct OneStepProblem<'a, T: Scalar> {
    outcomes: Vec<Outcome<'a, T>>,
    dim: usize,
    params: StepParams<T>,
    eta: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneStepSolution<T> {
    pub value: T,
    /// Optimal strategy in subspace coordinates.
    pub y: Vec<T>,
    /// Some evaluation at the optimum fell outside a child's wealth window.
    pub extrapolated: bool,
}

impl<'a, T: Scalar> OneStepProblem<'a, T> {
    pub fn new(outcomes: Vec<Outcome<'a, T>>, dim: usize, mut params: StepParams<T>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Config("one-step problem without outcomes".into()));
        }
        if outcomes.iter().any(|o| o.coords.len() != dim) {
            return Err(Error::Config("outcome coordinates do not match the subspace dimension".into()));
        }
        if dim > crate::noarb::MAX_SUPPORT_DIM {
            return Err(Error::Unsupported(format!("support dimension {dim}")));
        }
        let eta = choose_eta(params.gamma_plus, params.gamma_minus)?;
        if dim > 0 && !(params.alpha > T::zero() && params.beta > T::zero()) {
            return Err(Error::Config("alpha and beta must be positive".into()));
        }
        if params.beta > T::one() {
            warn!("beta {} clamped to 1", params.beta);
            params.beta = T::one();
        }
        if !(params.downside >= T::zero()) {
            return Err(Error::Config("downside level must be nonnegative".into()));
        }
        Ok(Self { outcomes, dim, params, eta })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &StepParams<T> {
        &self.params
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn outcomes(&self) -> &[Outcome<'a, T>] {
        &self.outcomes
    }

    /// `E(V(x) | node)`.
    pub fn expected_value_at(&self, x: T) -> T {
        self.outcomes.iter().map(|o| o.prob * o.value.value(x)).sum()
    }

    pub fn compute_l(&self) -> T {
        self.outcomes
            .iter()
            .map(|o| o.prob * o.value.value(T::one() + o.norm).positive_part())
            .sum()
    }

    pub fn bound_constants(&self) -> BoundConstants<T> {
        let p = &self.params;
        BoundConstants {
            alpha: p.alpha,
            beta: p.beta,
            growth: p.growth,
            gamma_plus: p.gamma_plus,
            gamma_minus: p.gamma_minus,
            eta: self.eta,
            downside: p.downside,
            l: self.compute_l(),
        }
    }

    /// Radius `K` valid for every `x ∈ [x0, x1]`; zero when `D = {0}`.
    pub fn compute_k(&self, x0: T, x1: T) -> T {
        if self.dim == 0 {
            return T::zero();
        }
        let b = self.bound_constants();
        let neg = self.expected_value_at(-x0.negative_part()).negative_part();
        b.k1(x1.positive_part()).max(b.k2(neg))
    }

    pub fn compute_ktilde1(&self) -> T {
        self.bound_constants().ktilde1()
    }

    /// Level `N'` with `v(x) <= −level` for `x <= −N'`.
    pub fn compute_nprime(&self, level: T) -> Result<T> {
        let p = &self.params;
        if !(p.downside > T::zero()) {
            return Err(Error::Config("N' needs a positive downside level".into()));
        }
        if level < T::lit(0.5) {
            return Err(Error::Config(format!("N' needs I >= 1/2, got {level}")));
        }
        let kt = self.compute_ktilde1();
        let e_plus: T =
            self.outcomes.iter().map(|o| o.prob * o.value.value(kt * o.norm).positive_part()).sum();
        Ok(downside_level(p.downside, p.beta, level, e_plus, p.gamma_minus))
    }

    /// `G(x, y) = Σ_j p_j V_j(x + y·Y_j)`, `y` in subspace coordinates.
    pub fn bellman_g(&self, x: T, y: &[T]) -> T {
        self.outcomes.iter().map(|o| o.prob * o.value.value(x + dot(y, &o.coords))).sum()
    }

    fn extrapolates(&self, x: T, y: &[T]) -> bool {
        self.outcomes.iter().any(|o| !o.value.in_window(x + dot(y, &o.coords)))
    }

    fn finish(&self, x: T, value: T, y: Vec<T>) -> OneStepSolution<T> {
        let extrapolated = self.extrapolates(x, &y);
        OneStepSolution { value, y, extrapolated }
    }

    /// Global maximisation of `G(x, ·)` over `|y| <= bound`. `hints` are
    /// additional starting points, e.g. the optimiser at a neighbouring wealth.
    pub fn solve_with(&self, x: T, bound: T, hints: &[Vec<T>], cfg: &SearchConfig) -> OneStepSolution<T> {
        if self.dim == 0 || bound <= T::zero() {
            return self.finish(x, self.expected_value_at(x), vec![T::zero(); self.dim]);
        }
        let f = |y: &[T]| self.bellman_g(x, y);
        let best = search::maximize(&f, self.dim, bound, T::one() + x.abs(), hints, cfg);
        self.finish(x, best.value, best.y)
    }

    /// Maximisation with `K` computed for the single wealth `x`.
    pub fn solve(&self, x: T) -> OneStepSolution<T> {
        let k = self.compute_k(x, x);
        self.solve_with(x, k, &[], &SearchConfig::default())
    }

    /// Local re-optimisation from `start`, never returning less than `G(x, start)`.
    pub fn refine_from(&self, x: T, start: &[T], step: T, bound: T, cfg: &SearchConfig) -> OneStepSolution<T> {
        if self.dim == 0 {
            return self.finish(x, self.expected_value_at(x), Vec::new());
        }
        let f = |y: &[T]| self.bellman_g(x, y);
        let start = search::Candidate { value: f(start), y: start.to_vec(), step };
        let bound = bound.max(norm(&start.y));
        let best = search::refine(&f, start, bound, T::tol(cfg.step_tol));
        self.finish(x, best.value, best.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::{AeParams, UtilityFunction};

    fn power() -> UtilityFunction<f64> {
        let ae = AeParams { gamma_plus: 0.5, gamma_minus: 1.5, x_plus: 1.0, x_minus: 1.0, c: 0.0 };
        UtilityFunction::two_piece_power(1.0, 1.0, 0.5, 1.5, ae).unwrap()
    }

    fn params(downside: f64) -> StepParams<f64> {
        StepParams { alpha: 0.5, beta: 0.5, growth: 1.0, gamma_plus: 0.5, gamma_minus: 1.5, downside }
    }

    fn binomial<'a>(u: &'a dyn ValueFn<f64>, up: f64, down: f64, p: f64, n: f64) -> OneStepProblem<'a, f64> {
        let outcomes = vec![
            Outcome { prob: p, coords: vec![up], norm: up.abs(), value: u },
            Outcome { prob: 1.0 - p, coords: vec![down], norm: down.abs(), value: u },
        ];
        OneStepProblem::new(outcomes, 1, params(n)).unwrap()
    }

    const N_T1: f64 = 2.924017738212866; // 5^(2/3)

    #[test]
    fn eta_examples() {
        assert!((choose_eta(0.5f64, 1.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((choose_eta(0.01f64, 2.0).unwrap() - 0.5025).abs() < 1e-15);
        assert!(choose_eta(1.0f64, 1.0).is_err());
        let eta = choose_eta(0.9995f64, 1.0).unwrap();
        assert!(0.9995 < eta && eta < 1.0);
    }

    #[test]
    fn l_examples() {
        let u = power();
        let pr = binomial(&u, 1.0, -1.0, 0.5, N_T1);
        assert!((pr.compute_l() - 2f64.sqrt()).abs() < 1e-15);
        let pr = binomial(&u, 3.0, -1.0, 0.5, N_T1);
        assert!((pr.compute_l() - (2.0 + 2f64.sqrt()) / 2.0).abs() < 1e-15);
        let neg = ValueSlice::new(vec![-1.0, 10.0], vec![-5.0, -1.0], 0.5, 1.5);
        let pr = binomial(&neg, 1.0, -1.0, 0.5, N_T1);
        assert_eq!(pr.compute_l(), 0.0);
    }

    #[test]
    fn k_example() {
        let u = power();
        let pr = binomial(&u, 1.0, -1.0, 0.5, N_T1);
        let b = pr.bound_constants();
        let r = (1.0 + N_T1) / 0.5;
        assert!((b.k0(1.0) - r.powi(3)).abs() < 1e-9);
        assert!((b.k0(1.0) - 483.5).abs() < 0.5);
        let k = pr.compute_k(0.0, 1.0);
        assert!((k - r.powi(3)).abs() < 1e-9);
        assert_eq!(b.k2(0.0), 0.0);
        // ηγ_ = 1, β = 0.5, [E V(−1)]⁻ = 2.
        assert!((b.k2(2.0) - 24.0).abs() < 1e-12);
        // K grows once the downside term dominates.
        assert!(pr.compute_k(-1e4, 1.0) > k);
    }

    #[test]
    fn k_with_vanishing_downside() {
        let zero = ValueSlice::new(vec![-1.0, 1.0], vec![0.0, 0.0], 0.5, 1.5);
        let pr = binomial(&zero, 1.0, -1.0, 0.5, 0.0);
        let k = pr.compute_k(0.0, 0.0);
        assert!((k - 144.0).abs() < 1e-9, "{k}"); // (6C/β)^2
    }

    #[test]
    fn ktilde1_examples() {
        let u = power();
        let pr = binomial(&u, 1.0, -1.0, 0.5, N_T1);
        let kt = pr.compute_ktilde1();
        assert!((kt - (16.0 * 2f64.sqrt()).powi(2)).abs() < 1e-9);
        assert!((kt - 512.0).abs() < 1e-9);

        let zero = ValueSlice::new(vec![-1.0, 1.0], vec![0.0, 0.0], 0.5, 1.5);
        let pr = binomial(&zero, 1.0, -1.0, 0.5, 0.0);
        assert!((pr.compute_ktilde1() - 256.0).abs() < 1e-9);

        let mut b = pr.bound_constants();
        let before = b.ktilde1();
        b.beta = 1.0;
        assert!(b.ktilde1() <= before);
    }

    #[test]
    fn nprime_examples() {
        let np = downside_level(1.0, 0.5, 5.0, 3.0, 1.5);
        assert!((np - 32f64.powf(2.0 / 3.0)).abs() < 1e-12);
        assert!((np - 10.08).abs() < 0.01);
        // 2/β (I + e) = 1 leaves N unchanged.
        assert_eq!(downside_level(2.5, 1.0, 0.5, 0.0, 1.5), 2.5);
        let u = power();
        let pr = binomial(&u, 1.0, -1.0, 0.5, N_T1);
        let a = pr.compute_nprime(1.0).unwrap();
        let b = pr.compute_nprime(5.0).unwrap();
        assert!(a >= N_T1 && b >= a);
        assert!(pr.compute_nprime(0.25).is_err());
    }

    #[test]
    fn bellman_g_examples() {
        let u = power();
        let pr = binomial(&u, 1.0, -1.0, 0.5, N_T1);
        assert_eq!(pr.bellman_g(0.7, &[0.0]), u.eval(0.7));
        let y = 1.0f64 / 3.0;
        let expected = 0.5 * (y.sqrt() - y.powf(1.5));
        assert!((pr.bellman_g(0.0, &[y]) - expected).abs() < 1e-15);
        assert!((expected - 0.19245).abs() < 1e-5);
        for y in [-2.0, -0.1, 0.4, 3.0] {
            let mut prev = f64::NEG_INFINITY;
            for i in -50..50 {
                let g = pr.bellman_g(i as f64 * 0.1, &[y]);
                assert!(g >= prev);
                prev = g;
            }
        }
    }

    #[test]
    fn solve_binomial_closed_form() {
        let u = power();
        let pr = binomial(&u, 1.0, -1.0, 0.5, N_T1);
        let sol = pr.solve(0.0);
        let expected = 0.5 * ((1.0f64 / 3.0).sqrt() - (1.0f64 / 3.0).powf(1.5));
        assert!((sol.value - expected).abs() < 1e-12, "{}", sol.value);
        assert!((sol.y[0] - 1.0 / 3.0).abs() < 1e-6, "{:?}", sol.y);
        assert!(!sol.extrapolated);
    }

    #[test]
    fn solve_matches_dense_grid() {
        // Asymmetric binomial; optimiser against exhaustive search at resolution 1e4.
        let u = power();
        for &(up, down, p, x) in &[(2.0, -1.0, 0.4, 0.0), (1.0, -1.0, 0.5, 0.8), (1.0, -3.0, 0.7, -0.5)] {
            let pr = binomial(&u, up, down, p, N_T1);
            let sol = pr.solve(x);
            let b = 4.0;
            let brute = (0..=10_000)
                .map(|i| -b + 2.0 * b * i as f64 / 10_000.0)
                .map(|y| pr.bellman_g(x, &[y]))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(sol.value >= brute - 1e-6 * brute.abs().max(1e-12), "{} < {}", sol.value, brute);
            assert!(sol.value >= u.eval(x) - 1e-15);
        }
    }

    #[test]
    fn concave_interior_maximum_matches_golden_section() {
        // V(w) = w − w²/4 is concave: G(0, y) = y(p·up + (1−p)·down) − y²(p·up² + (1−p)·down²)/4.
        let grid: Vec<f64> = (0..=4000).map(|i| -20.0 + i as f64 * 0.01).collect();
        let values: Vec<f64> = grid.iter().map(|&w| if w <= 2.0 { w - w * w / 4.0 } else { 1.0 }).collect();
        let v = ValueSlice::new(grid, values, 0.5, 1.5);
        let pr = binomial(&v, 1.0, -1.0, 0.6, 1.0);
        let sol = pr.solve_with(0.0, 10.0, &[], &SearchConfig::default());
        // Stationary point: 0.2 − y/2 = 0.
        assert!((sol.y[0] - 0.4).abs() < 1e-6, "{:?}", sol.y);
    }

    #[test]
    fn zero_subspace_returns_value_at_x() {
        let u = power();
        let outcomes = vec![Outcome { prob: 1.0, coords: vec![], norm: 0.0, value: &u as &dyn ValueFn<f64> }];
        let pr = OneStepProblem::new(outcomes, 0, params(N_T1)).unwrap();
        let sol = pr.solve(2.0);
        assert_eq!(sol.value, u.eval(2.0));
        assert!(sol.y.is_empty());
    }

    #[test]
    fn beta_is_clamped() {
        let u = power();
        let outcomes = vec![Outcome { prob: 1.0, coords: vec![1.0], norm: 1.0, value: &u as &dyn ValueFn<f64> }];
        let mut p = params(1.0);
        p.beta = 3.0;
        let pr = OneStepProblem::new(outcomes, 1, p).unwrap();
        assert_eq!(pr.params().beta, 1.0);
    }

    #[test]
    fn generic_over_f32() {
        let ae = AeParams { gamma_plus: 0.5f32, gamma_minus: 1.5, x_plus: 1.0, x_minus: 1.0, c: 0.0 };
        let u = UtilityFunction::two_piece_power(1.0f32, 1.0, 0.5, 1.5, ae).unwrap();
        let outcomes = vec![
            Outcome { prob: 0.5f32, coords: vec![1.0], norm: 1.0, value: &u as &dyn ValueFn<f32> },
            Outcome { prob: 0.5, coords: vec![-1.0], norm: 1.0, value: &u },
        ];
        let p = StepParams { alpha: 0.5f32, beta: 0.5, growth: 1.0, gamma_plus: 0.5, gamma_minus: 1.5, downside: 2.924 };
        let sol = OneStepProblem::new(outcomes, 1, p).unwrap().solve(0.0);
        assert!((sol.value - 0.19245).abs() < 1e-4, "{}", sol.value);
    }
}
