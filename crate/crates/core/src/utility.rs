//! Utility functions on the whole real line, their asymptotic-elasticity
//! certificates and the derived growth constant.
//!
//! A utility is admissible when it is nondecreasing, continuous, `U(0) = 0`,
//! and there are `x̄, x̲ > 0`, `c >= 0`, `0 < γ̄ < γ_` with, for all `λ >= 1`,
//!
//! ```text
//! U(λx) <= λ^γ̄ U(x) + c   for x >= x̄
//! U(λx) <= λ^γ_ U(x)      for x <= -x̲
//! U(-x̲) < 0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of points in each sampled log-grid.
pub const AE_GRID_POINTS: usize = 60;
/// Sampled grids span one factor of `AE_GRID_SPAN` beyond their anchor.
pub const AE_GRID_SPAN: f64 = 1e3;
pub const AE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Family<T> {
    /// `a₊ x^α` for `x >= 0`, `−a₋ (−x)^β` for `x < 0`.
    TwoPiecePower { a_plus: T, a_minus: T, alpha: T, beta: T },
    /// `a (1 − e^{−kx})`, bounded above by `a`.
    BoundedExp { a: T, k: T },
    /// Monotone piecewise-linear through `knots`, with power tails
    /// `u_last (x/x_last)^tail_plus` and `u_first (x/x_first)^tail_minus`
    /// outside the knot range.
    Piecewise { xs: Vec<T>, us: Vec<T>, tail_plus: T, tail_minus: T },
}

/// Declared asymptotic-elasticity parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeParams<T> {
    pub gamma_plus: T,
    pub gamma_minus: T,
    pub x_plus: T,
    pub x_minus: T,
    pub c: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilityFunction<T> {
    pub family: Family<T>,
    pub ae: AeParams<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthConstant<T> {
    pub c: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificationMethod {
    Analytic,
    Sampled,
}

#[derive(Debug, Clone, Serialize)]
pub struct AeCertificate {
    pub method: CertificationMethod,
    /// Number of `(λ, x)` pairs evaluated; zero for analytic certificates.
    pub samples: usize,
    /// Both inequalities hold with equality on the power branches.
    pub tight: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IllPosedVerdict {
    Diverges,
    WellPosedCandidate,
}

/// `E U(n ΔS)` for the one-step ±1 market, as a function of the position size `n`.
#[derive(Debug, Clone, Serialize)]
pub struct IllPosedness {
    pub verdict: IllPosedVerdict,
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
    pub series: Vec<(usize, f64)>,
    /// The series is strictly increasing from this `n` on.
    pub increasing_from: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityDocument {
    pub family: String,
    pub params: serde_json::Value,
    pub ae: AeParams<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerParams {
    #[serde(default = "one")]
    a_plus: f64,
    #[serde(default = "one")]
    a_minus: f64,
    alpha: f64,
    beta: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpParams {
    #[serde(default = "one")]
    a: f64,
    #[serde(default = "one")]
    k: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PiecewiseParams {
    knots: Vec<[f64; 2]>,
    tail_plus: f64,
    tail_minus: f64,
}

fn one() -> f64 {
    1.0
}

pub fn load_utility<T: Scalar>(path: impl AsRef<Path>) -> Result<UtilityFunction<T>> {
    let text = std::fs::read_to_string(path)?;
    parse_utility(&text)
}

pub fn parse_utility<T: Scalar>(text: &str) -> Result<UtilityFunction<T>> {
    let doc: UtilityDocument =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    UtilityFunction::from_document(&doc)
}

fn params<P: for<'de> Deserialize<'de>>(v: &serde_json::Value) -> Result<P> {
    serde_json::from_value(v.clone()).map_err(|e| Error::Schema(format!("params: {e}")))
}

impl<T: Scalar> UtilityFunction<T> {
    pub fn from_document(doc: &UtilityDocument) -> Result<Self> {
        let family = match doc.family.as_str() {
            "two_piece_power" => {
                let p: PowerParams = params(&doc.params)?;
                Family::TwoPiecePower {
                    a_plus: T::lit(p.a_plus),
                    a_minus: T::lit(p.a_minus),
                    alpha: T::lit(p.alpha),
                    beta: T::lit(p.beta),
                }
            }
            "bounded_exp" => {
                let p: ExpParams = params(&doc.params)?;
                Family::BoundedExp { a: T::lit(p.a), k: T::lit(p.k) }
            }
            "piecewise_user" => {
                let p: PiecewiseParams = params(&doc.params)?;
                Family::Piecewise {
                    xs: p.knots.iter().map(|k| T::lit(k[0])).collect(),
                    us: p.knots.iter().map(|k| T::lit(k[1])).collect(),
                    tail_plus: T::lit(p.tail_plus),
                    tail_minus: T::lit(p.tail_minus),
                }
            }
            other => return Err(Error::Schema(format!("unknown utility family {other:?}"))),
        };
        let a = doc.ae;
        let ae = AeParams {
            gamma_plus: T::lit(a.gamma_plus),
            gamma_minus: T::lit(a.gamma_minus),
            x_plus: T::lit(a.x_plus),
            x_minus: T::lit(a.x_minus),
            c: T::lit(a.c),
        };
        Self::new(family, ae)
    }

    /// Validates the family parameters: monotone, continuous, `U(0) = 0`.
    pub fn new(family: Family<T>, ae: AeParams<T>) -> Result<Self> {
        let bad = |m: &str| Err(Error::Schema(m.to_string()));
        match &family {
            Family::TwoPiecePower { a_plus, a_minus, alpha, beta } => {
                if !(*a_plus > T::zero() && *a_minus > T::zero() && *alpha > T::zero() && *beta > T::zero()) {
                    return bad("two_piece_power needs positive a_plus, a_minus, alpha, beta");
                }
            }
            Family::BoundedExp { a, k } => {
                if !(*a > T::zero() && *k > T::zero()) {
                    return bad("bounded_exp needs positive a and k");
                }
            }
            Family::Piecewise { xs, us, tail_plus, tail_minus } => {
                if xs.len() < 2 || xs.len() != us.len() {
                    return bad("piecewise_user needs at least two knots");
                }
                if xs.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("piecewise_user knots must have strictly increasing x");
                }
                if us.windows(2).any(|w| w[1] < w[0]) {
                    return bad("piecewise_user values must be nondecreasing");
                }
                if !(xs[0] < T::zero() && *xs.last().unwrap() > T::zero()) {
                    return bad("piecewise_user knots must bracket 0");
                }
                if us[0] > T::zero() || *us.last().unwrap() < T::zero() {
                    return bad("piecewise_user tails need u_first <= 0 <= u_last");
                }
                if *tail_plus < T::zero() || *tail_minus <= T::zero() {
                    return bad("piecewise_user needs tail_plus >= 0 and tail_minus > 0");
                }
            }
        }
        let u = Self { family, ae };
        if u.eval(T::zero()).abs() > T::tol(1e-12) {
            return bad("utility must satisfy U(0) = 0");
        }
        Ok(u)
    }

    pub fn two_piece_power(a_plus: T, a_minus: T, alpha: T, beta: T, ae: AeParams<T>) -> Result<Self> {
        Self::new(Family::TwoPiecePower { a_plus, a_minus, alpha, beta }, ae)
    }

    pub fn eval(&self, x: T) -> T {
        match &self.family {
            Family::TwoPiecePower { a_plus, a_minus, alpha, beta } => {
                if x >= T::zero() {
                    *a_plus * x.powf(*alpha)
                } else {
                    -*a_minus * (-x).powf(*beta)
                }
            }
            Family::BoundedExp { a, k } => *a * (-(-*k * x).exp_m1()),
            Family::Piecewise { xs, us, tail_plus, tail_minus } => {
                let last = xs.len() - 1;
                if x < xs[0] {
                    us[0] * (x / xs[0]).powf(*tail_minus)
                } else if x > xs[last] {
                    us[last] * (x / xs[last]).powf(*tail_plus)
                } else {
                    let i = xs.partition_point(|&k| k <= x).clamp(1, last);
                    let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
                    us[i - 1] + t * (us[i] - us[i - 1])
                }
            }
        }
    }

    pub fn is_bounded_above(&self) -> bool {
        match &self.family {
            Family::TwoPiecePower { .. } => false,
            Family::BoundedExp { .. } => true,
            Family::Piecewise { tail_plus, .. } => *tail_plus == T::zero(),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::TwoPiecePower { .. } => "two_piece_power",
            Family::BoundedExp { .. } => "bounded_exp",
            Family::Piecewise { .. } => "piecewise_user",
        }
    }
}

/// `count` points from `lo` to `lo · AE_GRID_SPAN`, geometrically spaced.
pub fn log_grid<T: Scalar>(lo: T, count: usize) -> Vec<T> {
    let span = T::lit(AE_GRID_SPAN);
    let last = T::from_usize_lossy(count - 1);
    (0..count).map(|i| lo * span.powf(T::from_usize_lossy(i) / last)).collect()
}

/// `lhs <= rhs + tol`, where `−∞` on the left always passes.
fn leq<T: Scalar>(lhs: T, rhs: T, scale: T) -> bool {
    if lhs == T::neg_infinity() {
        return true;
    }
    if lhs.is_nan() || rhs.is_nan() {
        return false;
    }
    lhs <= rhs + T::tol(AE_TOL) * (T::one() + scale.abs())
}

pub fn certify_ae<T: Scalar>(u: &UtilityFunction<T>) -> Result<AeCertificate> {
    let ae = u.ae;
    let reject = |m: String| Err(Error::AsymptoticElasticity(m));
    if ae.gamma_plus >= ae.gamma_minus {
        return reject("gamma_plus >= gamma_minus".into());
    }
    if !(ae.gamma_plus > T::zero() && ae.x_plus > T::zero() && ae.x_minus > T::zero() && ae.c >= T::zero()) {
        return reject("need gamma_plus > 0, x_plus > 0, x_minus > 0, c >= 0".into());
    }
    if u.eval(-ae.x_minus) >= T::zero() {
        return reject("U(-x_minus) >= 0".into());
    }

    if let Family::TwoPiecePower { alpha, beta, .. } = u.family {
        // Power branches are exactly homogeneous: U(λx) = λ^α U(x) on x > 0.
        if ae.gamma_plus < alpha {
            return reject(format!(
                "U(lambda x) <= lambda^gamma_plus U(x) + c fails for large lambda: gamma_plus {} < alpha {}",
                ae.gamma_plus, alpha
            ));
        }
        if ae.gamma_minus > beta {
            return reject(format!(
                "U(lambda x) <= lambda^gamma_minus U(x) fails for lambda > 1: gamma_minus {} > beta {}",
                ae.gamma_minus, beta
            ));
        }
        return Ok(AeCertificate {
            method: CertificationMethod::Analytic,
            samples: 0,
            tight: ae.gamma_plus == alpha && ae.gamma_minus == beta && ae.c == T::zero(),
        });
    }

    let lambdas = log_grid(T::one(), AE_GRID_POINTS);
    let mut samples = 0;
    for &x in &log_grid(ae.x_plus, AE_GRID_POINTS) {
        let ux = u.eval(x);
        for &l in &lambdas {
            samples += 1;
            let lhs = u.eval(l * x);
            if !leq(lhs, l.powf(ae.gamma_plus) * ux + ae.c, ux) {
                return reject(format!(
                    "U(lambda x) <= lambda^gamma_plus U(x) + c violated at lambda = {l}, x = {x}"
                ));
            }
        }
    }
    for &y in &log_grid(ae.x_minus, AE_GRID_POINTS) {
        let x = -y;
        let ux = u.eval(x);
        for &l in &lambdas {
            samples += 1;
            let lhs = u.eval(l * x);
            if !leq(lhs, l.powf(ae.gamma_minus) * ux, ux) {
                return reject(format!(
                    "U(lambda x) <= lambda^gamma_minus U(x) violated at lambda = {l}, x = {x}"
                ));
            }
        }
    }
    Ok(AeCertificate { method: CertificationMethod::Sampled, samples, tight: false })
}

/// `C = max(U(x̄), −U(−x̲)) + c`.
pub fn growth_constant<T: Scalar>(u: &UtilityFunction<T>) -> GrowthConstant<T> {
    let ae = u.ae;
    GrowthConstant { c: u.eval(ae.x_plus).max(-u.eval(-ae.x_minus)) + ae.c }
}

/// A failed growth inequality `f(λx) <= λ^γ (f(x) + C)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthViolation<T> {
    pub lambda: T,
    pub x: T,
    pub gamma: T,
    pub excess: T,
}

/// Checks `f(λx) <= λ^γ f(x) + Cλ^γ` for `γ ∈ {gamma_plus, gamma_minus}` on
/// every sampled pair. Returns the violations beyond `tol · (1 + |f(x)|)`.
pub fn growth_violations<T: Scalar>(
    f: impl Fn(T) -> T,
    gammas: [T; 2],
    c: T,
    xs: &[T],
    lambdas: &[T],
    tol: T,
) -> Vec<GrowthViolation<T>> {
    let mut out = Vec::new();
    for &x in xs {
        let fx = f(x);
        for &l in lambdas {
            let lhs = f(l * x);
            for g in gammas {
                let lg = l.powf(g);
                let rhs = lg * fx + c * lg;
                let excess = lhs - rhs;
                if lhs != T::neg_infinity() && !(excess <= tol * (T::one() + fx.abs())) {
                    out.push(GrowthViolation { lambda: l, x, gamma: g, excess });
                }
            }
        }
    }
    out
}

/// Expected utility of the position `n` in the one-step ±1 market, for the
/// two-piece power family.
pub fn detect_illposed<T: Scalar>(u: &UtilityFunction<T>, n_max: usize) -> Result<IllPosedness> {
    let Family::TwoPiecePower { a_plus, a_minus, alpha, beta } = u.family else {
        return Err(Error::Unsupported(format!(
            "ill-posedness series needs the two_piece_power family, got {}",
            u.family_name()
        )));
    };
    let (ap, am, a, b) = (a_plus.as_f64(), a_minus.as_f64(), alpha.as_f64(), beta.as_f64());
    if a < b {
        return Ok(IllPosedness {
            verdict: IllPosedVerdict::WellPosedCandidate,
            alpha: a,
            beta: b,
            p: 0.5,
            series: Vec::new(),
            increasing_from: None,
        });
    }
    let (p, n0) = if a > b {
        let p = 0.5;
        let ratio = (1.0 - p) * am * b / (p * ap * a);
        let n0 = (ratio.powf(1.0 / (a - b)).floor() as usize + 1).max(1);
        (p, n0)
    } else {
        // Equal exponents: the coefficient p a₊ − (1−p) a₋ must be positive.
        (f64::max(0.75, (am / (ap + am) + 1.0) / 2.0), 1)
    };
    let series = (1..=n_max)
        .map(|n| {
            let n_f = n as f64;
            (n, p * ap * n_f.powf(a) - (1.0 - p) * am * n_f.powf(b))
        })
        .collect();
    Ok(IllPosedness {
        verdict: IllPosedVerdict::Diverges,
        alpha: a,
        beta: b,
        p,
        series,
        increasing_from: Some(n0),
    })
}
