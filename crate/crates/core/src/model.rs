//! Variables, partial orders and the assembled recurrent model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Evidence;
use crate::graph::{Network, NodeId, NodeKind, VarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    State,
    Decision,
    Utility,
}

/// One per-step variable. Ids are positions in the variable list; in
/// two-step and unfolded networks the id of step `t` is `id + t * num_vars`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableMeta {
    pub name: String,
    pub kind: VarKind,
    /// Number of discrete values; `None` for the utility variable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<u32>,
    /// Index of the slot the variable occupies in the one-step order.
    #[serde(default)]
    pub slot: usize,
}

impl VariableMeta {
    pub fn state(name: &str, cardinality: u32) -> Self {
        VariableMeta { name: name.into(), kind: VarKind::State, cardinality: Some(cardinality), slot: 0 }
    }

    pub fn decision(name: &str, cardinality: u32) -> Self {
        VariableMeta {
            name: name.into(),
            kind: VarKind::Decision,
            cardinality: Some(cardinality),
            slot: 0,
        }
    }

    pub fn utility(name: &str) -> Self {
        VariableMeta { name: name.into(), kind: VarKind::Utility, cardinality: None, slot: 0 }
    }
}

/// Checks the variable-list invariants and returns the utility variable id.
pub fn validate_variables(vars: &[VariableMeta]) -> Result<VarId> {
    let mut utility = None;
    for (i, v) in vars.iter().enumerate() {
        match v.kind {
            VarKind::Utility => {
                if utility.replace(i).is_some() {
                    return Err(Error::Invariant("more than one utility variable".into()));
                }
            }
            _ => match v.cardinality {
                Some(c) if c >= 2 => {}
                _ => {
                    return Err(Error::Invariant(format!(
                        "variable `{}` needs cardinality >= 2",
                        v.name
                    )))
                }
            },
        }
        if vars[..i].iter().any(|o| o.name == v.name) {
            return Err(Error::Invariant(format!("duplicate variable name `{}`", v.name)));
        }
    }
    utility.ok_or_else(|| Error::Invariant("no utility variable".into()))
}

pub fn find_variable(vars: &[VariableMeta], name: &str) -> Result<VarId> {
    vars.iter()
        .position(|v| v.name == name)
        .ok_or_else(|| Error::UnknownVariable(name.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Slot {
    Info(Vec<VarId>),
    Decision(VarId),
}

/// Ordering of information sets and decisions over two consecutive steps.
///
/// Built from the one-step slot list, which is repeated for the next step with
/// variable ids shifted by the number of per-step variables. The utility
/// variable is not part of the order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialOrder {
    step_slots: Vec<Slot>,
    num_vars: usize,
    slots: Vec<Slot>,
}

impl PartialOrder {
    pub fn new(step_slots: Vec<Slot>, vars: &[VariableMeta]) -> Result<Self> {
        let mut seen = vec![0usize; vars.len()];
        let mut last_decision: Option<VarId> = None;
        for slot in &step_slots {
            let ids: Vec<VarId> = match slot {
                Slot::Info(ids) => ids.clone(),
                Slot::Decision(d) => vec![*d],
            };
            for id in ids {
                let meta = vars
                    .get(id)
                    .ok_or_else(|| Error::UnknownVariable(format!("variable id {id}")))?;
                let expected = match slot {
                    Slot::Info(_) => VarKind::State,
                    Slot::Decision(_) => VarKind::Decision,
                };
                if meta.kind != expected {
                    return Err(Error::Invariant(format!(
                        "variable `{}` placed in a {:?} slot",
                        meta.name, expected
                    )));
                }
                seen[id] += 1;
            }
            if let Slot::Decision(d) = slot {
                if last_decision.is_some_and(|p| p > *d) {
                    return Err(Error::Invariant("decision slots out of index order".into()));
                }
                last_decision = Some(*d);
            }
        }
        for (i, v) in vars.iter().enumerate() {
            let want = usize::from(v.kind != VarKind::Utility);
            if seen[i] != want {
                return Err(Error::Invariant(format!(
                    "variable `{}` appears {} times in the order",
                    v.name, seen[i]
                )));
            }
        }
        let n = vars.len();
        let shift = |slot: &Slot| match slot {
            Slot::Info(ids) => Slot::Info(ids.iter().map(|v| v + n).collect()),
            Slot::Decision(d) => Slot::Decision(d + n),
        };
        let slots = step_slots.iter().cloned().chain(step_slots.iter().map(shift)).collect();
        Ok(PartialOrder { step_slots, num_vars: n, slots })
    }

    /// Slots of step t followed by slots of step t+1.
    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn step_slots(&self) -> &[Slot] {
        &self.step_slots
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    /// Two-step slots with each step's utility variable appended to its final
    /// information set (a trailing one is added after a final decision).
    pub fn with_utility(&self, utility: VarId) -> Vec<Slot> {
        let mut out = Vec::new();
        for step in 0..2 {
            let mut slots: Vec<Slot> = self.slots[step * self.step_slots.len()..]
                [..self.step_slots.len()]
                .to_vec();
            let u = utility + step * self.num_vars;
            match slots.last_mut() {
                Some(Slot::Info(ids)) => ids.push(u),
                _ => slots.push(Slot::Info(vec![u])),
            }
            out.extend(slots);
        }
        out
    }

    /// Step-slot index of every per-step variable (utility goes to the last slot).
    pub fn slot_of(&self) -> Vec<usize> {
        let mut out = vec![self.step_slots.len().saturating_sub(1); self.num_vars];
        for (s, slot) in self.step_slots.iter().enumerate() {
            match slot {
                Slot::Info(ids) => ids.iter().for_each(|&v| out[v] = s),
                Slot::Decision(d) => out[*d] = s,
            }
        }
        out
    }
}

/// Multi-rooted network for one time step whose latent leaves link to the
/// interface roots of the following step.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateNetwork {
    network: Network,
    latent_leaves: Vec<NodeId>,
    bijection: Vec<usize>,
}

impl TemplateNetwork {
    /// `bijection[k]` is the interface root targeted by `latent_leaves[k]`.
    pub fn new(network: Network, latent_leaves: Vec<NodeId>, bijection: Vec<usize>) -> Result<Self> {
        if network.roots().is_empty() {
            return Err(Error::NoInterfaceRoots);
        }
        if latent_leaves.len() != bijection.len() {
            return Err(Error::Malformed("latent leaves and bijection differ in length".into()));
        }
        let mut targets = bijection.clone();
        targets.sort_unstable();
        targets.dedup();
        if targets.len() != bijection.len() {
            return Err(Error::Invariant("latent-leaf mapping is not injective".into()));
        }
        for (&leaf, &target) in latent_leaves.iter().zip(&bijection) {
            if target >= network.roots().len() {
                return Err(Error::Invariant(format!(
                    "latent leaf {leaf} maps to missing interface root {target}"
                )));
            }
            match network.nodes().get(leaf.0) {
                Some(NodeKind::Latent { index }) if *index == target => {}
                _ => {
                    return Err(Error::Invariant(format!(
                        "node {leaf} is not a latent leaf for interface root {target}"
                    )))
                }
            }
        }
        for (i, node) in network.nodes().iter().enumerate() {
            if matches!(node, NodeKind::Latent { .. }) && !latent_leaves.contains(&NodeId(i)) {
                return Err(Error::Invariant(format!("latent node #{i} missing from latent leaf list")));
            }
        }
        Ok(TemplateNetwork { network, latent_leaves, bijection })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn interface_roots(&self) -> &[NodeId] {
        self.network.roots()
    }

    pub fn latent_leaves(&self) -> &[NodeId] {
        &self.latent_leaves
    }

    pub fn bijection(&self) -> &[usize] {
        &self.bijection
    }

    pub fn len(&self) -> usize {
        self.network.len()
    }

    pub fn is_empty(&self) -> bool {
        self.network.is_empty()
    }

    /// Nodes removed in the bottom-most copy: every latent leaf plus, transitively,
    /// every internal node whose children are all removed.
    pub fn bottom_prune_mask(&self) -> Vec<bool> {
        bottom_prune_mask(&self.network)
    }
}

pub(crate) fn bottom_prune_mask(network: &Network) -> Vec<bool> {
    let mut pruned = vec![false; network.len()];
    for &id in network.topological_order() {
        let node = &network[id];
        pruned[id.0] = match node {
            NodeKind::Latent { .. } => true,
            n if n.is_leaf() => false,
            n => !n.children().is_empty() && n.children().iter().all(|c| pruned[c.0]),
        };
    }
    pruned
}

/// Sum/product network capping the unrolled templates; its leaves are latent
/// interface nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TopNetwork {
    network: Network,
}

impl TopNetwork {
    pub fn new(network: Network) -> Result<Self> {
        if network.roots().len() != 1 {
            return Err(Error::Invariant("top network must have exactly one root".into()));
        }
        for (i, node) in network.nodes().iter().enumerate() {
            if !matches!(
                node,
                NodeKind::Sum { .. } | NodeKind::Product { .. } | NodeKind::Latent { .. }
            ) {
                return Err(Error::Invariant(format!(
                    "top network node #{i} is a {} node",
                    node.name()
                )));
            }
        }
        Ok(TopNetwork { network })
    }

    /// Single sum with equal weights over one latent leaf per interface root.
    pub fn uniform(num_roots: usize) -> Result<Self> {
        if num_roots == 0 {
            return Err(Error::NoInterfaceRoots);
        }
        let mut nodes: Vec<NodeKind> =
            (0..num_roots).map(|index| NodeKind::Latent { index }).collect();
        nodes.push(NodeKind::Sum {
            children: (0..num_roots).map(NodeId).collect(),
            weights: vec![1.0 / num_roots as f64; num_roots],
        });
        TopNetwork::new(Network::new(nodes, vec![NodeId(num_roots)])?)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn len(&self) -> usize {
        self.network.len()
    }

    pub fn is_empty(&self) -> bool {
        self.network.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    /// Interface roots no latent leaf points to after pruning.
    #[serde(default)]
    pub unreferenced_roots: Vec<usize>,
    /// Longest training episode, the default evaluation horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

/// Top network plus template network plus variable metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct RspmnModel {
    pub variables: Vec<VariableMeta>,
    pub order: PartialOrder,
    pub top: TopNetwork,
    pub template: TemplateNetwork,
    pub metadata: ModelMetadata,
}

impl RspmnModel {
    pub fn new(
        variables: Vec<VariableMeta>,
        order: PartialOrder,
        top: TopNetwork,
        template: TemplateNetwork,
    ) -> Result<Self> {
        validate_variables(&variables)?;
        if order.num_vars() != variables.len() {
            return Err(Error::Invariant("partial order built for a different variable list".into()));
        }
        let roots = template.interface_roots().len();
        for node in top.network().nodes() {
            if let NodeKind::Latent { index } = node {
                if *index >= roots {
                    return Err(Error::Invariant(format!(
                        "top network latent index {index} has no interface root"
                    )));
                }
            }
        }
        let n = variables.len();
        for (i, node) in template.network().nodes().iter().enumerate() {
            let var = match node {
                NodeKind::Categorical { var, .. } | NodeKind::Utility { var, .. } => *var,
                NodeKind::Max { decision, .. } => *decision,
                _ => continue,
            };
            if var >= n {
                return Err(Error::Invariant(format!("template node #{i} uses unknown variable {var}")));
            }
            let meta = &variables[var];
            let ok = match node {
                NodeKind::Categorical { probs, .. } => {
                    meta.kind != VarKind::Utility && meta.cardinality == Some(probs.len() as u32)
                }
                NodeKind::Utility { .. } => meta.kind == VarKind::Utility,
                NodeKind::Max { labels, .. } => {
                    meta.kind == VarKind::Decision
                        && labels.iter().all(|&l| Some(l) < meta.cardinality)
                }
                _ => true,
            };
            if !ok {
                return Err(Error::Invariant(format!(
                    "template node #{i} does not match variable `{}`",
                    meta.name
                )));
            }
        }
        let mut metadata = ModelMetadata::default();
        let referenced: Vec<usize> = template.bijection().to_vec();
        metadata.unreferenced_roots = (0..roots).filter(|r| !referenced.contains(r)).collect();
        Ok(RspmnModel { variables, order, top, template, metadata })
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn utility_var(&self) -> VarId {
        self.variables.iter().position(|v| v.kind == VarKind::Utility).expect("validated")
    }

    pub fn state_vars(&self) -> Vec<VarId> {
        self.vars_of(VarKind::State)
    }

    pub fn decision_vars(&self) -> Vec<VarId> {
        self.vars_of(VarKind::Decision)
    }

    fn vars_of(&self, kind: VarKind) -> Vec<VarId> {
        (0..self.variables.len()).filter(|&i| self.variables[i].kind == kind).collect()
    }

    pub fn variable(&self, name: &str) -> Result<VarId> {
        find_variable(&self.variables, name)
    }

    /// Evidence over step-0 variables from `(name, value)` pairs, range-checked.
    pub fn evidence<'a>(&self, pairs: impl IntoIterator<Item = (&'a str, u32)>) -> Result<Evidence> {
        let mut ev = Evidence::new(self.num_vars());
        for (name, value) in pairs {
            let var = self.variable(name)?;
            let card = self.variables[var].cardinality.ok_or_else(|| {
                Error::Malformed(format!("utility variable `{name}` cannot be discrete evidence"))
            })?;
            if value >= card {
                return Err(Error::ValueOutOfRange { var, value, cardinality: card as usize });
            }
            ev.set(var, value);
        }
        Ok(ev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_vars() -> Vec<VariableMeta> {
        vec![
            VariableMeta::state("X", 2),
            VariableMeta::state("Y", 2),
            VariableMeta::decision("A", 5),
            VariableMeta::utility("U"),
        ]
    }

    #[test]
    fn two_step_order_duplicates_slots() {
        let order = PartialOrder::new(
            vec![Slot::Info(vec![0, 1]), Slot::Decision(2), Slot::Info(vec![])],
            &grid_vars(),
        )
        .unwrap();
        assert_eq!(
            order.slots(),
            &[
                Slot::Info(vec![0, 1]),
                Slot::Decision(2),
                Slot::Info(vec![]),
                Slot::Info(vec![4, 5]),
                Slot::Decision(6),
                Slot::Info(vec![]),
            ]
        );
        assert_eq!(order.with_utility(3)[2], Slot::Info(vec![3]));
        assert_eq!(order.with_utility(3)[5], Slot::Info(vec![7]));
    }

    #[test]
    fn order_must_cover_every_variable_once() {
        let vars = grid_vars();
        assert!(PartialOrder::new(vec![Slot::Info(vec![0]), Slot::Decision(2)], &vars).is_err());
        assert!(PartialOrder::new(
            vec![Slot::Info(vec![0, 1, 1]), Slot::Decision(2)],
            &vars
        )
        .is_err());
        assert!(PartialOrder::new(vec![Slot::Info(vec![0, 1, 2])], &vars).is_err());
    }

    #[test]
    fn decisions_must_be_in_index_order() {
        let vars = vec![
            VariableMeta::state("X", 2),
            VariableMeta::decision("D1", 2),
            VariableMeta::decision("D2", 2),
            VariableMeta::utility("U"),
        ];
        assert!(PartialOrder::new(
            vec![Slot::Info(vec![0]), Slot::Decision(2), Slot::Decision(1)],
            &vars
        )
        .is_err());
    }

    #[test]
    fn variable_invariants() {
        let mut vars = grid_vars();
        assert_eq!(validate_variables(&vars).unwrap(), 3);
        vars.push(VariableMeta::utility("V"));
        assert!(validate_variables(&vars).is_err());
        let bad = vec![VariableMeta::state("X", 1), VariableMeta::utility("U")];
        assert!(validate_variables(&bad).is_err());
    }

    #[test]
    fn uniform_top_has_equal_weights() {
        let top = TopNetwork::uniform(4).unwrap();
        match &top.network()[top.network().root()] {
            NodeKind::Sum { weights, .. } => assert_eq!(weights, &vec![0.25; 4]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(TopNetwork::uniform(0).is_err());
    }

    #[test]
    fn bottom_mask_prunes_transitively() {
        let net = Network::new(
            vec![
                NodeKind::Latent { index: 0 },
                NodeKind::Sum { children: vec![NodeId(0)], weights: vec![1.0] },
                NodeKind::Utility { var: 3, value: 1.0 },
                NodeKind::Product { children: vec![NodeId(2), NodeId(1)] },
            ],
            vec![NodeId(3)],
        )
        .unwrap();
        assert_eq!(bottom_prune_mask(&net), vec![true, true, false, false]);
    }
}
