//! Finite scenario trees: a filtered probability space with an adapted price
//! process, stored as a rooted tree with per-edge conditional probabilities.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance on the sum of conditional child probabilities.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Index of a node inside its [`ScenarioTree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
pub struct Node<T> {
    pub id: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub cond_prob: T,
    pub price: Vec<T>,
    pub depth: usize,
}

impl<T: Scalar> Node<T> {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Immutable after construction; all invariants are checked in [`ScenarioTree::from_document`].
#[derive(Debug, Clone)]
pub struct ScenarioTree<T> {
    horizon: usize,
    dim: usize,
    nodes: Vec<Node<T>>,
    root: NodeId,
    by_depth: Vec<Vec<NodeId>>,
    index: HashMap<String, NodeId>,
}

/// On-disk tree layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDocument {
    pub d: usize,
    pub horizon: usize,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: String,
    pub parent: Option<String>,
    pub cond_prob: f64,
    pub price: Vec<f64>,
}

/// A random variable measurable at one depth of the tree.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedScalar<T> {
    pub depth: usize,
    pub values: BTreeMap<NodeId, T>,
}

impl<T: Scalar> AdaptedScalar<T> {
    pub fn new(depth: usize) -> Self {
        Self { depth, values: BTreeMap::new() }
    }

    pub fn get(&self, node: NodeId) -> Option<T> {
        self.values.get(&node).copied()
    }
}

pub fn load_tree<T: Scalar>(path: impl AsRef<Path>) -> Result<ScenarioTree<T>> {
    let text = std::fs::read_to_string(path)?;
    parse_tree(&text)
}

pub fn parse_tree<T: Scalar>(text: &str) -> Result<ScenarioTree<T>> {
    let doc: TreeDocument =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    ScenarioTree::from_document(&doc)
}

impl<T: Scalar> ScenarioTree<T> {
    pub fn from_document(doc: &TreeDocument) -> Result<Self> {
        if doc.d == 0 {
            return Err(Error::Schema("d must be at least 1".into()));
        }
        if doc.horizon == 0 {
            return Err(Error::Schema("horizon must be at least 1".into()));
        }

        let mut index = HashMap::with_capacity(doc.nodes.len());
        for (i, rec) in doc.nodes.iter().enumerate() {
            if index.insert(rec.id.clone(), NodeId(i)).is_some() {
                return Err(Error::Schema(format!("duplicate node id {}", rec.id)));
            }
        }

        let mut root = None;
        let mut nodes: Vec<Node<T>> = Vec::with_capacity(doc.nodes.len());
        for rec in &doc.nodes {
            if rec.price.len() != doc.d {
                return Err(Error::Dimension {
                    node: rec.id.clone(),
                    got: rec.price.len(),
                    expected: doc.d,
                });
            }
            if rec.price.iter().any(|p| !p.is_finite()) {
                return Err(Error::Schema(format!("non-finite price at node {}", rec.id)));
            }
            let parent = match &rec.parent {
                None => {
                    if root.is_some() {
                        return Err(Error::Schema(format!(
                            "more than one root: node {} has parent null",
                            rec.id
                        )));
                    }
                    root = Some(index[&rec.id]);
                    None
                }
                Some(p) => Some(*index.get(p).ok_or_else(|| {
                    Error::Schema(format!("node {}: unknown parent {}", rec.id, p))
                })?),
            };
            if !(rec.cond_prob.is_finite() && rec.cond_prob > 0.0 && rec.cond_prob <= 1.0) {
                return Err(Error::Schema(format!(
                    "node {}: cond_prob {} outside (0, 1]",
                    rec.id, rec.cond_prob
                )));
            }
            nodes.push(Node {
                id: rec.id.clone(),
                parent,
                children: Vec::new(),
                cond_prob: T::lit(rec.cond_prob),
                price: rec.price.iter().map(|&p| T::lit(p)).collect(),
                depth: 0,
            });
        }
        let root = root.ok_or_else(|| Error::Schema("no node with parent null".into()))?;
        if (doc.nodes[root.0].cond_prob - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Schema(format!(
                "root {} must have cond_prob 1",
                nodes[root.0].id
            )));
        }
        nodes[root.0].cond_prob = T::one();

        for i in 0..nodes.len() {
            if let Some(p) = nodes[i].parent {
                nodes[p.0].children.push(NodeId(i));
            }
        }

        // Depths are derived by a breadth-first walk; unreachable nodes sit on a cycle.
        let mut seen = vec![false; nodes.len()];
        let mut queue = VecDeque::from([root]);
        seen[root.0] = true;
        while let Some(n) = queue.pop_front() {
            let depth = nodes[n.0].depth;
            for c in nodes[n.0].children.clone() {
                seen[c.0] = true;
                nodes[c.0].depth = depth + 1;
                queue.push_back(c);
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Schema(format!(
                "node {} is not reachable from the root",
                nodes[i].id
            )));
        }

        let mut by_depth = vec![Vec::new(); doc.horizon + 1];
        for (i, node) in nodes.iter().enumerate() {
            if node.depth > doc.horizon || (node.is_leaf() && node.depth != doc.horizon) {
                return Err(Error::LeafDepth {
                    node: node.id.clone(),
                    depth: node.depth,
                    horizon: doc.horizon,
                });
            }
            by_depth[node.depth].push(NodeId(i));
        }

        // Renormalise the children exactly once the sum is within tolerance.
        let tol = T::tol(PROB_SUM_TOL);
        for i in 0..nodes.len() {
            if nodes[i].is_leaf() {
                continue;
            }
            let sum: T = nodes[i].children.iter().map(|c| nodes[c.0].cond_prob).sum();
            if (sum - T::one()).abs() > tol {
                let raw: f64 = nodes[i].children.iter().map(|c| doc.nodes[c.0].cond_prob).sum();
                // Reported rounded so that 0.6 + 0.3 reads as 0.9.
                let sum = (raw * 1e12).round() / 1e12;
                return Err(Error::ProbabilitySum { node: nodes[i].id.clone(), sum });
            }
            for c in nodes[i].children.clone() {
                nodes[c.0].cond_prob = nodes[c.0].cond_prob / sum;
            }
        }

        Ok(Self { horizon: doc.horizon, dim: doc.d, nodes, root, by_depth, index })
    }

    pub fn to_document(&self) -> TreeDocument {
        TreeDocument {
            d: self.dim,
            horizon: self.horizon,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id.clone(),
                    parent: n.parent.map(|p| self.nodes[p.0].id.clone()),
                    cond_prob: n.cond_prob.as_f64(),
                    price: n.price.iter().map(|p| p.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node<T> {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node<T>)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    pub fn lookup(&self, id: &str) -> Option<NodeId> {
        self.index.get(id).copied()
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    pub fn at_depth(&self, depth: usize) -> &[NodeId] {
        &self.by_depth[depth]
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.by_depth[self.horizon]
    }

    /// ΔS for a non-root node: its price minus its parent's price.
    pub fn increment(&self, id: NodeId) -> Vec<T> {
        let node = &self.nodes[id.0];
        match node.parent {
            Some(p) => {
                node.price.iter().zip(&self.nodes[p.0].price).map(|(&a, &b)| a - b).collect()
            }
            None => vec![T::zero(); self.dim],
        }
    }

    /// Unconditional probability of reaching `id`: the product of conditional
    /// probabilities along the path from the root.
    pub fn path_prob(&self, id: NodeId) -> T {
        let mut p = T::one();
        let mut cur = Some(id);
        while let Some(n) = cur {
            p = p * self.nodes[n.0].cond_prob;
            cur = self.nodes[n.0].parent;
        }
        p
    }

    /// E(W | node) for a random variable given on the node's children.
    pub fn cond_expect(&self, node: NodeId, values: &HashMap<NodeId, T>) -> Result<T> {
        self.cond_expect_with(node, |c| values.get(&c).copied())
    }

    /// Same as [`Self::cond_expect`] with child values supplied by a closure.
    pub fn cond_expect_with(
        &self,
        node: NodeId,
        mut value: impl FnMut(NodeId) -> Option<T>,
    ) -> Result<T> {
        let n = &self.nodes[node.0];
        if n.is_leaf() {
            return Err(Error::DegenerateNode(n.id.clone()));
        }
        let mut acc = T::zero();
        for &c in &n.children {
            let v = value(c).ok_or_else(|| Error::MissingValue {
                node: n.id.clone(),
                missing: self.nodes[c.0].id.clone(),
            })?;
            acc = acc + self.nodes[c.0].cond_prob * v;
        }
        Ok(acc)
    }

    /// E(Z) for Z given on the leaves, folded depth by depth through
    /// [`Self::cond_expect`].
    pub fn total_expect(&self, leaf_values: &HashMap<NodeId, T>) -> Result<T> {
        let mut level: HashMap<NodeId, T> = HashMap::with_capacity(self.leaves().len());
        for &leaf in self.leaves() {
            let v = leaf_values.get(&leaf).copied().ok_or_else(|| Error::MissingValue {
                node: "<leaves>".into(),
                missing: self.nodes[leaf.0].id.clone(),
            })?;
            level.insert(leaf, v);
        }
        for depth in (0..self.horizon).rev() {
            let mut up = HashMap::with_capacity(self.by_depth[depth].len());
            for &n in &self.by_depth[depth] {
                up.insert(n, self.cond_expect(n, &level)?);
            }
            level = up;
        }
        Ok(level[&self.root])
    }

    /// Smallest conditional child probability at an internal node.
    pub fn min_child_prob(&self, node: NodeId) -> T {
        self.nodes[node.0]
            .children
            .iter()
            .map(|c| self.nodes[c.0].cond_prob)
            .fold(T::infinity(), T::min)
    }
}
