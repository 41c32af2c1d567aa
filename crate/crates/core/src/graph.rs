//! Circuit representation shared by every stage of the pipeline.
//!
//! A [`Network`] is an id-indexed table of [`NodeKind`]s plus an ordered list
//! of roots. Single-rooted networks are plain SPMNs (or top networks); a
//! template network has one root per interface node. Children may be shared,
//! so a network is a DAG rather than a tree.

use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type VarId = usize;

/// Tolerance used when checking that sum weights and leaf probabilities are normalized.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Sum { children: Vec<NodeId>, weights: Vec<f64> },
    Product { children: Vec<NodeId> },
    /// Decision node; `labels[k]` is the decision value on the edge to `children[k]`.
    Max { decision: VarId, children: Vec<NodeId>, labels: Vec<u32> },
    Categorical { var: VarId, probs: Vec<f64> },
    /// Constant utility attached to the (single) utility variable of a step.
    Utility { var: VarId, value: f64 },
    /// Placeholder linked to interface root `index` of the next time step.
    Latent { index: usize },
}

impl NodeKind {
    pub fn children(&self) -> &[NodeId] {
        match self {
            NodeKind::Sum { children, .. }
            | NodeKind::Product { children }
            | NodeKind::Max { children, .. } => children,
            _ => &[],
        }
    }

    pub fn children_mut(&mut self) -> Option<&mut Vec<NodeId>> {
        match self {
            NodeKind::Sum { children, .. }
            | NodeKind::Product { children }
            | NodeKind::Max { children, .. } => Some(children),
            _ => None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(
            self,
            NodeKind::Categorical { .. } | NodeKind::Utility { .. } | NodeKind::Latent { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Sum { .. } => "sum",
            NodeKind::Product { .. } => "product",
            NodeKind::Max { .. } => "max",
            NodeKind::Categorical { .. } => "categorical",
            NodeKind::Utility { .. } => "utility",
            NodeKind::Latent { .. } => "latent",
        }
    }

    /// Drops children for which `keep` returns false, keeping weights and labels aligned.
    pub fn retain_children(&mut self, mut keep: impl FnMut(NodeId) -> bool) {
        match self {
            NodeKind::Sum { children, weights } => {
                let mut k = 0;
                let mut w = 0;
                while k < children.len() {
                    if keep(children[k]) {
                        children.swap(w, k);
                        weights.swap(w, k);
                        w += 1;
                    }
                    k += 1;
                }
                children.truncate(w);
                weights.truncate(w);
            }
            NodeKind::Max { children, labels, .. } => {
                let mut k = 0;
                let mut w = 0;
                while k < children.len() {
                    if keep(children[k]) {
                        children.swap(w, k);
                        labels.swap(w, k);
                        w += 1;
                    }
                    k += 1;
                }
                children.truncate(w);
                labels.truncate(w);
            }
            NodeKind::Product { children } => children.retain(|&c| keep(c)),
            _ => {}
        }
    }
}

/// Rooted DAG of circuit nodes. Immutable once built; construction checks
/// that child references are in range and that the children relation is acyclic.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    nodes: Vec<NodeKind>,
    roots: Vec<NodeId>,
    order: Vec<NodeId>,
    flat: Flat,
}

/// Node table packed in evaluation order: one fixed-size record per node and
/// shared arrays for edges and leaf parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct Flat {
    pub ops: Vec<Op>,
    pub children: Vec<u32>,
    /// Sum weight of each edge (0 under products and max nodes).
    pub weights: Vec<f64>,
    /// Max-node label of each edge (0 elsewhere).
    pub labels: Vec<u32>,
    /// Leaf probabilities and utility values.
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum OpKind {
    Sum,
    Product,
    Max,
    Categorical,
    Utility,
    Latent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Op {
    pub node: u32,
    pub kind: OpKind,
    /// Variable, decision or latent index.
    pub var: u32,
    /// Start of the node's edges, or of its leaf parameters.
    pub first: u32,
    /// Number of edges, or of leaf parameters.
    pub len: u32,
}

impl Flat {
    fn build(nodes: &[NodeKind], order: &[NodeId]) -> Flat {
        let mut f = Flat { ops: Vec::with_capacity(order.len()), ..Flat::default() };
        // group nodes of equal height, kind and fan-in so branches stay predictable
        let mut height = vec![0u32; nodes.len()];
        for &id in order {
            height[id.0] = nodes[id.0].children().iter().map(|c| height[c.0] + 1).max().unwrap_or(0);
        }
        let mut order = order.to_vec();
        order.sort_by_key(|id| {
            let node = &nodes[id.0];
            let kind = match node {
                NodeKind::Sum { .. } => 0,
                NodeKind::Product { .. } => 1,
                NodeKind::Max { .. } => 2,
                NodeKind::Categorical { .. } => 3,
                NodeKind::Utility { .. } => 4,
                NodeKind::Latent { .. } => 5,
            };
            (height[id.0], kind, node.children().len())
        });
        for id in order {
            let node = &nodes[id.0];
            let edges = f.children.len() as u32;
            let leaf = f.params.len() as u32;
            let children = node.children();
            f.children.extend(children.iter().map(|c| c.0 as u32));
            let op = |kind, var: usize, first, len: usize| Op { node: id.0 as u32, kind, var: var as u32, first, len: len as u32 };
            let op = match node {
                NodeKind::Sum { weights, .. } => {
                    f.weights.extend_from_slice(weights);
                    f.labels.resize(f.children.len(), 0);
                    op(OpKind::Sum, 0, edges, children.len())
                }
                NodeKind::Product { .. } => {
                    f.weights.resize(f.children.len(), 0.0);
                    f.labels.resize(f.children.len(), 0);
                    op(OpKind::Product, 0, edges, children.len())
                }
                NodeKind::Max { decision, labels, .. } => {
                    f.weights.resize(f.children.len(), 0.0);
                    f.labels.extend_from_slice(labels);
                    op(OpKind::Max, *decision, edges, children.len())
                }
                NodeKind::Categorical { var, probs } => {
                    f.params.extend_from_slice(probs);
                    op(OpKind::Categorical, *var, leaf, probs.len())
                }
                NodeKind::Utility { var, value } => {
                    f.params.push(*value);
                    op(OpKind::Utility, *var, leaf, 1)
                }
                NodeKind::Latent { index } => op(OpKind::Latent, *index, leaf, 0),
            };
            f.ops.push(op);
        }
        f
    }
}

impl Network {
    pub fn new(nodes: Vec<NodeKind>, roots: Vec<NodeId>) -> Result<Self> {
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            for &c in node.children() {
                if c.0 >= n {
                    return Err(Error::Malformed(format!(
                        "node #{i} references missing child {c}"
                    )));
                }
            }
            match node {
                NodeKind::Sum { children, weights } if children.len() != weights.len() => {
                    return Err(Error::Malformed(format!(
                        "sum node #{i} has {} children but {} weights",
                        children.len(),
                        weights.len()
                    )));
                }
                NodeKind::Max { children, labels, .. } => {
                    if children.len() != labels.len() {
                        return Err(Error::Malformed(format!(
                            "max node #{i} has {} children but {} edge labels",
                            children.len(),
                            labels.len()
                        )));
                    }
                    let mut seen = labels.clone();
                    seen.sort_unstable();
                    seen.dedup();
                    if seen.len() != labels.len() {
                        return Err(Error::Malformed(format!(
                            "max node #{i} has duplicate edge labels"
                        )));
                    }
                }
                _ => {}
            }
        }
        for &r in &roots {
            if r.0 >= n {
                return Err(Error::Malformed(format!("root {r} out of range")));
            }
        }
        let order = topological_order(&nodes)?;
        let flat = Flat::build(&nodes, &order);
        Ok(Network { nodes, roots, order, flat })
    }

    pub fn nodes(&self) -> &[NodeKind] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn roots(&self) -> &[NodeId] {
        &self.roots
    }

    /// First root; the only root of an SPMN or a top network.
    pub fn root(&self) -> NodeId {
        self.roots[0]
    }

    /// All nodes, children before parents.
    pub fn topological_order(&self) -> &[NodeId] {
        &self.order
    }

    pub(crate) fn flat(&self) -> &Flat {
        &self.flat
    }

    pub fn into_parts(self) -> (Vec<NodeKind>, Vec<NodeId>) {
        (self.nodes, self.roots)
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.children().len()).sum()
    }

    /// Sum-weight and leaf-probability normalization problems, one entry per offending node.
    pub fn parameter_violations(&self) -> Vec<(NodeId, String)> {
        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                NodeKind::Sum { weights, .. } => {
                    let total: f64 = weights.iter().sum();
                    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                        || (total - 1.0).abs() > NORMALIZATION_TOL
                    {
                        out.push((NodeId(i), format!("sum weights total {total}")));
                    }
                }
                NodeKind::Categorical { probs, .. } => {
                    let total: f64 = probs.iter().sum();
                    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0))
                        || (total - 1.0).abs() > NORMALIZATION_TOL
                    {
                        out.push((NodeId(i), format!("leaf probabilities total {total}")));
                    }
                }
                NodeKind::Utility { value, .. } if !value.is_finite() => {
                    out.push((NodeId(i), "non-finite utility".to_string()));
                }
                _ => {}
            }
        }
        out
    }

    /// Errors on the first normalization problem.
    pub fn check_parameters(&self) -> Result<()> {
        if let Some((node, _)) = self.parameter_violations().into_iter().next() {
            let total = match &self.nodes[node.0] {
                NodeKind::Sum { weights, .. } => weights.iter().sum(),
                NodeKind::Categorical { probs, .. } => probs.iter().sum(),
                _ => f64::NAN,
            };
            return Err(Error::Normalization { node, total });
        }
        Ok(())
    }

    /// Parent lists, in node order.
    pub fn parents(&self) -> Vec<Vec<NodeId>> {
        let mut parents = vec![Vec::new(); self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            for &c in node.children() {
                parents[c.0].push(NodeId(i));
            }
        }
        parents
    }

    /// Nodes reachable from the roots.
    pub fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<NodeId> = self.roots.clone();
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id.0], true) {
                continue;
            }
            stack.extend(self.nodes[id.0].children().iter().copied());
        }
        seen
    }

    /// Drops unreachable nodes and renumbers the rest, preserving relative order.
    /// Returns the new network and the old-to-new id map.
    pub fn compact(&self) -> (Network, Vec<Option<NodeId>>) {
        let keep = self.reachable();
        let mut map = vec![None; self.nodes.len()];
        let mut next = 0;
        for (i, &k) in keep.iter().enumerate() {
            if k {
                map[i] = Some(NodeId(next));
                next += 1;
            }
        }
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| keep[*i])
            .map(|(_, node)| remap_children(node, &map))
            .collect();
        let roots = self.roots.iter().map(|r| map[r.0].unwrap()).collect();
        let net = Network::new(nodes, roots).expect("compaction preserves structure");
        (net, map)
    }
}

impl Index<NodeId> for Network {
    type Output = NodeKind;

    fn index(&self, id: NodeId) -> &NodeKind {
        &self.nodes[id.0]
    }
}

/// Copies `node` with each child id rewritten through `map`; unmapped children are dropped.
pub fn remap_children(node: &NodeKind, map: &[Option<NodeId>]) -> NodeKind {
    let mut out = node.clone();
    out.retain_children(|c| map[c.0].is_some());
    if let Some(children) = out.children_mut() {
        for c in children.iter_mut() {
            *c = map[c.0].unwrap();
        }
    }
    out
}

fn topological_order(nodes: &[NodeKind]) -> Result<Vec<NodeId>> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; nodes.len()];
    let mut order = Vec::with_capacity(nodes.len());
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for start in 0..nodes.len() {
        if state[start] != 0 {
            continue;
        }
        stack.push((start, 0));
        state[start] = 1;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            let children = nodes[node].children();
            if *next < children.len() {
                let c = children[*next].0;
                *next += 1;
                match state[c] {
                    0 => {
                        state[c] = 1;
                        stack.push((c, 0));
                    }
                    1 => return Err(Error::Cycle(NodeId(c))),
                    _ => {}
                }
            } else {
                state[node] = 2;
                order.push(NodeId(node));
                stack.pop();
            }
        }
    }
    Ok(order)
}

/// (likelihood, expected utility) pair carried by the bottom-up pass.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DualValue {
    pub likelihood: f64,
    pub eu: f64,
}

impl DualValue {
    /// Value of a summed-out node: likelihood 1, no utility.
    pub const ONE: DualValue = DualValue { likelihood: 1.0, eu: 0.0 };
    pub const ZERO: DualValue = DualValue { likelihood: 0.0, eu: 0.0 };

    pub fn new(likelihood: f64, eu: f64) -> Self {
        if likelihood == 0.0 {
            DualValue::ZERO
        } else {
            DualValue { likelihood, eu }
        }
    }
}

/// Element of a node scope. Latent interface leaves contribute a synthetic
/// symbol instead of a variable until they are linked by unfolding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Var(VarId),
    Latent(usize),
}

/// Sorted, duplicate-free set of symbols.
pub type Scope = Vec<Symbol>;

pub fn scope_union(a: &[Symbol], b: &[Symbol]) -> Scope {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

pub fn scopes_disjoint(a: &[Symbol], b: &[Symbol]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return false,
        }
    }
    true
}

/// Per-node scopes with one synthetic symbol per latent interface index.
pub fn scope_of(network: &Network) -> Vec<Scope> {
    scope_of_with(network, Symbol::Latent)
}

/// Per-node scopes; `latent` decides which symbol a latent leaf of a given
/// interface index contributes. Max nodes include their decision variable.
pub fn scope_of_with(network: &Network, latent: impl Fn(usize) -> Symbol) -> Vec<Scope> {
    let mut scopes: Vec<Scope> = vec![Vec::new(); network.len()];
    for &id in network.topological_order() {
        let scope = match &network[id] {
            NodeKind::Categorical { var, .. } | NodeKind::Utility { var, .. } => {
                vec![Symbol::Var(*var)]
            }
            NodeKind::Latent { index } => vec![latent(*index)],
            node => {
                let mut acc: Scope = match node {
                    NodeKind::Max { decision, .. } => vec![Symbol::Var(*decision)],
                    _ => Vec::new(),
                };
                for &c in node.children() {
                    acc = scope_union(&acc, &scopes[c.0]);
                }
                acc
            }
        };
        scopes[id.0] = scope;
    }
    scopes
}

/// Observable variables of a scope, ignoring latent symbols.
pub fn scope_vars(scope: &[Symbol]) -> Vec<VarId> {
    scope
        .iter()
        .filter_map(|s| match s {
            Symbol::Var(v) => Some(*v),
            Symbol::Latent(_) => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(var: VarId) -> NodeKind {
        NodeKind::Categorical { var, probs: vec![0.5, 0.5] }
    }

    #[test]
    fn leaf_scope_is_itself() {
        let net = Network::new(vec![leaf(3)], vec![NodeId(0)]).unwrap();
        assert_eq!(scope_of(&net)[0], vec![Symbol::Var(3)]);
    }

    #[test]
    fn product_scope_is_union() {
        let net = Network::new(
            vec![leaf(1), leaf(0), NodeKind::Product { children: vec![NodeId(0), NodeId(1)] }],
            vec![NodeId(2)],
        )
        .unwrap();
        assert_eq!(scope_of(&net)[2], vec![Symbol::Var(0), Symbol::Var(1)]);
    }

    #[test]
    fn max_scope_includes_decision() {
        let net = Network::new(
            vec![
                NodeKind::Utility { var: 2, value: 1.0 },
                NodeKind::Utility { var: 2, value: 3.0 },
                NodeKind::Max { decision: 1, children: vec![NodeId(0), NodeId(1)], labels: vec![0, 1] },
            ],
            vec![NodeId(2)],
        )
        .unwrap();
        assert_eq!(scope_of(&net)[2], vec![Symbol::Var(1), Symbol::Var(2)]);
    }

    #[test]
    fn cycle_is_rejected() {
        let nodes = vec![
            NodeKind::Product { children: vec![NodeId(1)] },
            NodeKind::Product { children: vec![NodeId(0)] },
        ];
        assert!(matches!(Network::new(nodes, vec![NodeId(0)]), Err(Error::Cycle(_))));
    }

    #[test]
    fn mismatched_labels_rejected() {
        let nodes = vec![
            leaf(0),
            NodeKind::Max { decision: 1, children: vec![NodeId(0)], labels: vec![0, 1] },
        ];
        assert!(Network::new(nodes, vec![NodeId(1)]).is_err());
        let nodes = vec![
            leaf(0),
            leaf(0),
            NodeKind::Max { decision: 1, children: vec![NodeId(0), NodeId(1)], labels: vec![1, 1] },
        ];
        assert!(Network::new(nodes, vec![NodeId(2)]).is_err());
    }

    #[test]
    fn unnormalized_weights_reported() {
        let net = Network::new(
            vec![
                leaf(0),
                leaf(0),
                NodeKind::Sum { children: vec![NodeId(0), NodeId(1)], weights: vec![0.6, 0.6] },
            ],
            vec![NodeId(2)],
        )
        .unwrap();
        assert!(matches!(net.check_parameters(), Err(Error::Normalization { .. })));
    }

    #[test]
    fn compact_drops_unreachable() {
        let net = Network::new(
            vec![leaf(0), leaf(1), NodeKind::Product { children: vec![NodeId(1)] }],
            vec![NodeId(2)],
        )
        .unwrap();
        let (small, map) = net.compact();
        assert_eq!(small.len(), 2);
        assert_eq!(map[0], None);
        assert_eq!(small.root(), NodeId(1));
    }

    #[test]
    fn retain_children_keeps_weights_aligned() {
        let mut node = NodeKind::Sum {
            children: vec![NodeId(0), NodeId(1), NodeId(2)],
            weights: vec![0.2, 0.3, 0.5],
        };
        node.retain_children(|c| c != NodeId(1));
        assert_eq!(
            node,
            NodeKind::Sum { children: vec![NodeId(0), NodeId(2)], weights: vec![0.2, 0.5] }
        );
    }
}
