//! Multi-start maximisation of a non-concave function over a ball in `R^k`,
//! `k <= 3`: coarse polar grid (log-spaced radii), the best cells refined
//! locally, and a fixed tie-break for reproducibility.

use std::cmp::Ordering;

use crate::scalar::{norm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    /// Radii per segment; the inner segment `|y| <= 1 + |x|` is uniform, the
    /// outer one log-spaced up to the bound.
    pub radial: usize,
    /// Directions on the circle for `k = 2`; `4 * angular` Fibonacci points
    /// on the sphere for `k = 3`.
    pub angular: usize,
    /// Number of coarse cells refined locally.
    pub keep: usize,
    /// Relative step tolerance of the local refinement.
    pub step_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { radial: 64, angular: 64, keep: 8, step_tol: 1e-11 }
    }
}

/// Values within this relative gap of the best are ties.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub(crate) struct Candidate<T> {
    pub value: T,
    pub y: Vec<T>,
    pub step: T,
}

fn by_value_desc<T: Scalar>(a: &Candidate<T>, b: &Candidate<T>) -> Ordering {
    b.value.partial_cmp(&a.value).unwrap_or(Ordering::Equal)
}

/// Radii in `(0, bound]`.
fn radii<T: Scalar>(inner: T, bound: T, n: usize) -> Vec<T> {
    let inner = inner.min(bound);
    let nf = T::from_usize_lossy(n);
    let mut r: Vec<T> = (1..=n).map(|i| inner * T::from_usize_lossy(i) / nf).collect();
    if bound > inner * (T::one() + T::epsilon()) {
        let ratio = bound / inner;
        r.extend((1..=n).map(|i| inner * ratio.powf(T::from_usize_lossy(i) / nf)));
    }
    r
}

fn directions<T: Scalar>(k: usize, angular: usize) -> Vec<Vec<T>> {
    match k {
        1 => vec![vec![T::one()], vec![-T::one()]],
        2 => (0..angular)
            .map(|i| {
                let t = T::lit(std::f64::consts::TAU) * T::from_usize_lossy(i) / T::from_usize_lossy(angular);
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => {
            let n = 4 * angular;
            let golden = T::lit(std::f64::consts::PI * (3.0 - 5f64.sqrt()));
            (0..n)
                .map(|i| {
                    let z = T::one() - T::lit(2.0) * (T::from_usize_lossy(i) + T::lit(0.5)) / T::from_usize_lossy(n);
                    let r = (T::one() - z * z).sqrt();
                    let t = golden * T::from_usize_lossy(i);
                    vec![r * t.cos(), r * t.sin(), z]
                })
                .collect()
        }
        _ => unreachable!("search dimension {k}"),
    }
}

fn golden_max<T: Scalar>(f: &impl Fn(&[T]) -> T, mut a: T, mut b: T, tol: T) -> (T, T) {
    let g = T::lit(0.618_033_988_749_894_8);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(&[c]), f(&[d]));
    while (b - a).abs() > tol * (T::one() + a.abs().max(b.abs())) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(&[c]);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(&[d]);
        }
    }
    let x = (a + b) / T::lit(2.0);
    (x, f(&[x]))
}

/// Compass search inside the ball `|y| <= bound`.
fn compass<T: Scalar>(f: &impl Fn(&[T]) -> T, start: Candidate<T>, bound: T, tol: T) -> Candidate<T> {
    let k = start.y.len();
    let mut dirs: Vec<Vec<T>> = Vec::new();
    for i in 0..k {
        for s in [T::one(), -T::one()] {
            let mut d = vec![T::zero(); k];
            d[i] = s;
            dirs.push(d);
        }
    }
    if k == 2 {
        let h = T::lit(std::f64::consts::FRAC_1_SQRT_2);
        for (a, b) in [(h, h), (-h, -h), (h, -h), (-h, h)] {
            dirs.push(vec![a, b]);
        }
    }
    let Candidate { mut value, mut y, mut step } = start;
    while step > tol * (T::one() + norm(&y)) {
        let mut moved = false;
        for d in &dirs {
            let trial: Vec<T> = y.iter().zip(d).map(|(&a, &b)| a + step * b).collect();
            if norm(&trial) > bound {
                continue;
            }
            let v = f(&trial);
            if v > value {
                value = v;
                y = trial;
                moved = true;
                break;
            }
        }
        // Expanding on success keeps long climbs logarithmic in the distance.
        step = if moved { step * T::lit(2.0) } else { step / T::lit(2.0) };
    }
    Candidate { value, y, step }
}

/// Local refinement of one start.
pub(crate) fn refine<T: Scalar>(f: &impl Fn(&[T]) -> T, start: Candidate<T>, bound: T, tol: T) -> Candidate<T> {
    if start.y.len() == 1 {
        let y0 = start.y[0];
        let lo = (y0 - start.step).max(-bound);
        let hi = (y0 + start.step).min(bound);
        let (y, v) = golden_max(f, lo, hi, tol);
        if v > start.value {
            // A kink maximum can sit between golden iterates; polish with compass.
            return compass(f, Candidate { value: v, y: vec![y], step: tol * T::lit(1e3) * (T::one() + y.abs()) }, bound, tol);
        }
        return start;
    }
    compass(f, start, bound, tol)
}

/// Best candidate with the tie-break: among values within `TIE_TOL` of the
/// maximum, the smallest `|y|`, then the lexicographically greatest `y`.
pub(crate) fn select<T: Scalar>(cands: &[Candidate<T>]) -> Candidate<T> {
    let best = cands.iter().map(|c| c.value).fold(T::neg_infinity(), T::max);
    let tie = T::tol(TIE_TOL) * (T::one() + best.abs());
    let near: Vec<&Candidate<T>> = cands.iter().filter(|c| c.value >= best - tie).collect();
    let min_norm = near.iter().map(|c| norm(&c.y)).fold(T::infinity(), T::min);
    // Relative only: an exact zero never ties with a tiny nonzero position.
    let norm_tie = T::tol(1e-7) * min_norm;
    near.into_iter()
        .filter(|c| norm(&c.y) <= min_norm + norm_tie)
        .max_by(|a, b| {
            for (x, y) in a.y.iter().zip(&b.y) {
                match x.partial_cmp(y) {
                    Some(Ordering::Equal) | None => continue,
                    Some(o) => return o,
                }
            }
            Ordering::Equal
        })
        .cloned()
        .expect("at least one candidate")
}

/// Maximises `f` over `|y| <= bound` in `R^k`. `inner` is the radius of the
/// uniformly resolved core; `hints` are extra starting points.
pub(crate) fn maximize<T: Scalar>(
    f: &impl Fn(&[T]) -> T,
    k: usize,
    bound: T,
    inner: T,
    hints: &[Vec<T>],
    cfg: &SearchConfig,
) -> Candidate<T> {
    let tol = T::tol(cfg.step_tol);
    let zero = vec![T::zero(); k];
    let rs = radii(inner, bound, cfg.radial);

    if k == 1 {
        // Sorted positions along the line; each cell is bracketed by its neighbours.
        let mut pos: Vec<T> = rs.iter().map(|&r| -r).chain(std::iter::once(T::zero())).chain(rs.iter().copied()).collect();
        pos.extend(hints.iter().map(|h| h[0]).filter(|h| h.abs() <= bound));
        pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pos.dedup();
        let vals: Vec<T> = pos.iter().map(|&p| f(&[p])).collect();
        let mut order: Vec<usize> = (0..pos.len()).collect();
        order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        let mut out: Vec<Candidate<T>> = Vec::with_capacity(cfg.keep + 1);
        for &i in order.iter().take(cfg.keep) {
            let left = if i > 0 { pos[i] - pos[i - 1] } else { T::zero() };
            let right = if i + 1 < pos.len() { pos[i + 1] - pos[i] } else { T::zero() };
            let start = Candidate { value: vals[i], y: vec![pos[i]], step: left.max(right) };
            out.push(refine(f, start, bound, tol));
        }
        let z = pos.iter().position(|&p| p == T::zero()).unwrap();
        out.push(Candidate { value: vals[z], y: zero, step: T::zero() });
        return select(&out);
    }

    let dirs = directions::<T>(k, cfg.angular);
    let ang_step = T::lit(std::f64::consts::TAU) / T::from_usize_lossy(cfg.angular);
    let mut coarse: Vec<Candidate<T>> = Vec::with_capacity(rs.len() * dirs.len() + 1 + hints.len());
    coarse.push(Candidate { value: f(&zero), y: zero.clone(), step: rs[0] });
    for (ri, &r) in rs.iter().enumerate() {
        let dr = if ri == 0 { r } else { r - rs[ri - 1] };
        for d in &dirs {
            let y: Vec<T> = d.iter().map(|&c| c * r).collect();
            coarse.push(Candidate { value: f(&y), y, step: dr.max(r * ang_step) });
        }
    }
    for h in hints {
        if norm(h) <= bound {
            coarse.push(Candidate { value: f(h), y: h.clone(), step: rs[0] });
        }
    }
    let zero_cand = coarse[0].clone();
    coarse.sort_by(by_value_desc);
    let mut out: Vec<Candidate<T>> =
        coarse.into_iter().take(cfg.keep).map(|c| refine(f, c, bound, tol)).collect();
    out.push(zero_cand);
    select(&out)
}
