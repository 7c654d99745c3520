//! Per-node arbitrage geometry.
//!
//! For an internal node the increments ΔS of its children span the support
//! subspace `D`. No-arbitrage holds at the node iff no direction in `D` has
//! nonnegative payoff in every child and a positive payoff in some child; it is
//! quantified by constants `(delta, kappa)` such that every unit `ξ ∈ D` loses
//! at least `delta` with conditional probability at least `kappa`.

mod simplex;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};
use crate::tree::{NodeId, ScenarioTree};

/// Largest support dimension handled by the sphere minimisation.
pub const MAX_SUPPORT_DIM: usize = 3;
/// Angular step of the sphere grid, in radians.
pub const SPHERE_STEP: f64 = 0.01;

const RANK_TOL: f64 = 1e-10;
const LP_TOL: f64 = 1e-9;

/// Orthonormal basis of a subspace of `R^d`. An empty basis is `{0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis<T> {
    ambient: usize,
    vectors: Vec<Vec<T>>,
}

impl<T: Scalar> SubspaceBasis<T> {
    pub fn full(ambient: usize) -> Self {
        let vectors = (0..ambient)
            .map(|i| (0..ambient).map(|j| if i == j { T::one() } else { T::zero() }).collect())
            .collect();
        Self { ambient, vectors }
    }

    pub fn zero(ambient: usize) -> Self {
        Self { ambient, vectors: Vec::new() }
    }

    /// Orthonormal basis of the span of `vectors`, by Gram–Schmidt with
    /// largest-residual pivoting. Each basis vector's first significant
    /// coordinate is positive.
    pub fn span(ambient: usize, vectors: &[Vec<T>]) -> Self {
        let scale = vectors.iter().map(|v| norm(v)).fold(T::zero(), T::max);
        let tol = T::tol(RANK_TOL) * scale.max(T::one());
        let mut residuals: Vec<Vec<T>> = vectors.to_vec();
        let mut basis: Vec<Vec<T>> = Vec::new();
        while basis.len() < ambient {
            let Some((best, best_norm)) = residuals
                .iter()
                .enumerate()
                .map(|(i, r)| (i, norm(r)))
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            else {
                break;
            };
            if best_norm <= tol {
                break;
            }
            let mut e: Vec<T> = residuals[best].iter().map(|&x| x / best_norm).collect();
            // Re-orthogonalise once against the accepted vectors.
            for b in &basis {
                let p = dot(&e, b);
                e.iter_mut().zip(b).for_each(|(x, &bx)| *x = *x - p * bx);
            }
            let n = norm(&e);
            e.iter_mut().for_each(|x| *x = *x / n);
            if let Some(lead) = e.iter().find(|x| x.abs() > T::tol(RANK_TOL)) {
                if *lead < T::zero() {
                    e.iter_mut().for_each(|x| *x = -*x);
                }
            }
            for r in residuals.iter_mut() {
                let p = dot(r, &e);
                r.iter_mut().zip(&e).for_each(|(x, &ex)| *x = *x - p * ex);
            }
            basis.push(e);
        }
        Self { ambient, vectors: basis }
    }

    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn vectors(&self) -> &[Vec<T>] {
        &self.vectors
    }

    /// Coordinates of `v` in this basis.
    pub fn coords(&self, v: &[T]) -> Vec<T> {
        self.vectors.iter().map(|b| dot(b, v)).collect()
    }

    /// The vector of `R^d` with the given basis coordinates.
    pub fn embed(&self, coords: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.ambient];
        for (b, &c) in self.vectors.iter().zip(coords) {
            out.iter_mut().zip(b).for_each(|(o, &bx)| *o = *o + c * bx);
        }
        out
    }

    /// Orthogonal projection onto the subspace.
    pub fn project(&self, xi: &[T]) -> Vec<T> {
        self.embed(&self.coords(xi))
    }
}

pub fn support_subspace<T: Scalar>(tree: &ScenarioTree<T>, node: NodeId) -> SubspaceBasis<T> {
    let increments: Vec<Vec<T>> = tree.children(node).iter().map(|&c| tree.increment(c)).collect();
    SubspaceBasis::span(tree.dim(), &increments)
}

pub fn project_onto_d<T: Scalar>(xi: &[T], basis: &SubspaceBasis<T>) -> Vec<T> {
    basis.project(xi)
}

/// An arbitrage direction at a node.
#[derive(Debug, Clone, PartialEq)]
pub struct ArbitrageWitness<T> {
    pub node: NodeId,
    pub xi: Vec<T>,
}

/// Solves `max Σ_j ξ·ΔS_j` subject to `ξ·ΔS_j >= 0` and `ξ ∈ [-1, 1]^d`.
/// Returns the maximiser when the optimum is positive.
pub fn node_arbitrage<T: Scalar>(tree: &ScenarioTree<T>, node: NodeId) -> Result<Option<Vec<T>>> {
    let children = tree.children(node);
    if children.is_empty() {
        return Err(Error::DegenerateNode(tree.node(node).id.clone()));
    }
    let d = tree.dim();
    let incs: Vec<Vec<T>> = children.iter().map(|&c| tree.increment(c)).collect();
    let scale = incs.iter().map(|v| norm(v)).fold(T::one(), T::max);

    // ξ = ξ⁺ − ξ⁻ with both parts in [0, 1]^d.
    let total: Vec<T> = (0..d).map(|i| incs.iter().map(|v| v[i]).sum()).collect();
    let c: Vec<T> = total.iter().copied().chain(total.iter().map(|&x| -x)).collect();
    let mut a = Vec::with_capacity(incs.len() + 2 * d);
    let mut b = Vec::with_capacity(incs.len() + 2 * d);
    for v in &incs {
        a.push(v.iter().map(|&x| -x).chain(v.iter().copied()).collect());
        b.push(T::zero());
    }
    for i in 0..2 * d {
        let mut row = vec![T::zero(); 2 * d];
        row[i] = T::one();
        a.push(row);
        b.push(T::one());
    }
    let eps = T::tol(1e-12);
    let sol = simplex::maximize(&c, &a, &b, eps)
        .ok_or_else(|| Error::Unsupported("simplex failed to terminate".into()))?;
    if sol.objective > T::tol(LP_TOL) * scale {
        let xi = (0..d).map(|i| sol.x[i] - sol.x[d + i]).collect();
        Ok(Some(xi))
    } else {
        Ok(None)
    }
}

/// First arbitrage found, scanning internal nodes in file order.
pub fn check_na<T: Scalar>(tree: &ScenarioTree<T>) -> Result<Option<ArbitrageWitness<T>>> {
    for (id, node) in tree.nodes() {
        if node.depth < tree.horizon() {
            if let Some(xi) = node_arbitrage(tree, id)? {
                return Ok(Some(ArbitrageWitness { node: id, xi }));
            }
        }
    }
    Ok(None)
}

/// `max_j(−u·y_j)` for a unit direction `u` in basis coordinates.
fn worst_loss<T: Scalar>(u: &[T], coords: &[Vec<T>]) -> T {
    coords.iter().map(|y| -dot(u, y)).fold(T::neg_infinity(), T::max)
}

fn golden_min<T: Scalar>(f: impl Fn(T) -> T, mut a: T, mut b: T, tol: T) -> (T, T) {
    let g = T::lit(0.618_033_988_749_894_8);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = (a + b) / T::lit(2.0);
    (x, f(x))
}

fn unit_from_angles<T: Scalar>(theta: T, phi: T) -> Vec<T> {
    vec![theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

/// Minimum over the unit sphere of the support of `max_j(−u·y_j)`, with the
/// minimising direction. Exhaustive for dimension 1, angular grid plus local
/// refinement for dimensions 2 and 3.
pub(crate) fn sphere_min<T: Scalar>(coords: &[Vec<T>], k: usize) -> (T, Vec<T>) {
    let step = T::lit(SPHERE_STEP);
    let two_pi = T::lit(std::f64::consts::TAU);
    let refine_tol = T::tol(1e-12);
    match k {
        1 => {
            let plus = worst_loss(&[T::one()], coords);
            let minus = worst_loss(&[-T::one()], coords);
            if plus <= minus {
                (plus, vec![T::one()])
            } else {
                (minus, vec![-T::one()])
            }
        }
        2 => {
            let n = (std::f64::consts::TAU / SPHERE_STEP).ceil() as usize;
            let h = two_pi / T::from_usize_lossy(n);
            let f = |t: T| worst_loss(&[t.cos(), t.sin()], coords);
            let mut grid: Vec<(T, T)> =
                (0..n).map(|i| T::from_usize_lossy(i) * h).map(|t| (f(t), t)).collect();
            grid.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap()));
            let mut best = grid[0];
            for &(_, t) in grid.iter().take(4) {
                let (tr, fr) = golden_min(f, t - h, t + h, refine_tol);
                if fr < best.0 {
                    best = (fr, tr);
                }
            }
            (best.0, vec![best.1.cos(), best.1.sin()])
        }
        3 => {
            let pi = T::lit(std::f64::consts::PI);
            let nt = (std::f64::consts::PI / SPHERE_STEP).ceil() as usize;
            let np = (std::f64::consts::TAU / SPHERE_STEP).ceil() as usize;
            let ht = pi / T::from_usize_lossy(nt);
            let hp = two_pi / T::from_usize_lossy(np);
            let f = |t: T, p: T| worst_loss(&unit_from_angles(t, p), coords);
            let mut grid = Vec::with_capacity((nt + 1) * np);
            for i in 0..=nt {
                let t = T::from_usize_lossy(i) * ht;
                for j in 0..np {
                    let p = T::from_usize_lossy(j) * hp;
                    grid.push((f(t, p), t, p));
                }
            }
            grid.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut best = grid[0];
            for &(v0, t0, p0) in grid.iter().take(4) {
                let (mut v, mut t, mut p) = (v0, t0, p0);
                let mut s = step;
                while s > refine_tol {
                    let mut moved = false;
                    for (dt, dp) in [(s, T::zero()), (-s, T::zero()), (T::zero(), s), (T::zero(), -s)] {
                        let cand = f(t + dt, p + dp);
                        if cand < v {
                            (v, t, p) = (cand, t + dt, p + dp);
                            moved = true;
                            break;
                        }
                    }
                    if !moved {
                        s = s / T::lit(2.0);
                    }
                }
                if v < best.0 {
                    best = (v, t, p);
                }
            }
            (best.0, unit_from_angles(best.1, best.2))
        }
        _ => unreachable!("sphere_min called with dimension {k}"),
    }
}

/// `delta = ½ · min_{|ξ|=1, ξ∈D} max_j(−ξ·ΔS_j)` and `kappa` = smallest child
/// probability. A zero subspace admits no unit direction; it gets `(1, kappa)`.
pub fn na_constants<T: Scalar>(
    tree: &ScenarioTree<T>,
    node: NodeId,
    basis: &SubspaceBasis<T>,
) -> Result<(T, T)> {
    let id = &tree.node(node).id;
    let k = basis.dim();
    if k > MAX_SUPPORT_DIM {
        return Err(Error::UnsupportedDimension { node: id.clone(), dim: k });
    }
    let kappa = tree.min_child_prob(node);
    if k == 0 {
        return Ok((T::one(), kappa));
    }
    let coords: Vec<Vec<T>> =
        tree.children(node).iter().map(|&c| basis.coords(&tree.increment(c))).collect();
    let scale = coords.iter().map(|y| norm(y)).fold(T::one(), T::max);
    let (m, u) = sphere_min(&coords, k);
    if m <= T::tol(LP_TOL) * scale {
        return Err(Error::Arbitrage {
            node: id.clone(),
            witness: basis.embed(&u).into_iter().map(|x| x.as_f64()).collect(),
        });
    }
    Ok((m / T::lit(2.0), kappa))
}

#[derive(Debug, Clone)]
pub struct NodeCertificate<T> {
    pub node: NodeId,
    pub basis: SubspaceBasis<T>,
    pub na_ok: bool,
    pub delta: T,
    pub kappa: T,
    pub witness: Option<Vec<T>>,
}

/// Certificate for one internal node. An arbitrage node gets `na_ok = false`,
/// its witness and `delta = 0`.
pub fn certify_node<T: Scalar>(tree: &ScenarioTree<T>, node: NodeId) -> Result<NodeCertificate<T>> {
    let basis = support_subspace(tree, node);
    if basis.dim() > MAX_SUPPORT_DIM {
        return Err(Error::UnsupportedDimension { node: tree.node(node).id.clone(), dim: basis.dim() });
    }
    if let Some(xi) = node_arbitrage(tree, node)? {
        return Ok(NodeCertificate {
            node,
            basis,
            na_ok: false,
            delta: T::zero(),
            kappa: tree.min_child_prob(node),
            witness: Some(xi),
        });
    }
    match na_constants(tree, node, &basis) {
        Ok((delta, kappa)) => Ok(NodeCertificate { node, basis, na_ok: true, delta, kappa, witness: None }),
        Err(Error::Arbitrage { witness, .. }) => Ok(NodeCertificate {
            node,
            basis,
            na_ok: false,
            delta: T::zero(),
            kappa: tree.min_child_prob(node),
            witness: Some(witness.into_iter().map(T::lit).collect()),
        }),
        Err(e) => Err(e),
    }
}

/// Certificates for every internal node, in node order.
pub fn certify_tree<T: Scalar>(tree: &ScenarioTree<T>) -> Result<Vec<NodeCertificate<T>>> {
    let internal: Vec<NodeId> = tree
        .nodes()
        .filter(|(_, n)| n.depth < tree.horizon())
        .map(|(id, _)| id)
        .collect();
    internal.par_iter().map(|&n| certify_node(tree, n)).collect()
}

/// Serializable per-node certificate line.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateRecord {
    pub id: String,
    pub dim: usize,
    pub delta: f64,
    pub kappa: f64,
    pub na_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<f64>>,
}

impl<T: Scalar> NodeCertificate<T> {
    pub fn record(&self, tree: &ScenarioTree<T>) -> CertificateRecord {
        CertificateRecord {
            id: tree.node(self.node).id.clone(),
            dim: self.basis.dim(),
            delta: self.delta.as_f64(),
            kappa: self.kappa.as_f64(),
            na_ok: self.na_ok,
            witness: self.witness.as_ref().map(|w| w.iter().map(|x| x.as_f64()).collect()),
        }
    }
}
