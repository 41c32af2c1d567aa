//! Random models, networks and datasets for property tests.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{SequenceDataset, Step};
use crate::error::{Error, Result};
use crate::graph::{Network, NodeId, NodeKind, VarId};
use crate::model::{PartialOrder, RspmnModel, Slot, TemplateNetwork, TopNetwork, VariableMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzParams {
    pub state_vars: usize,
    pub state_cardinality: u32,
    pub decision_cardinality: u32,
    pub min_roots: usize,
    pub max_roots: usize,
    /// Nesting depth of sums over the state variables.
    pub max_depth: usize,
    /// Largest number of latent leaves below one attached sum.
    pub max_latent_children: usize,
}

impl Default for FuzzParams {
    fn default() -> Self {
        FuzzParams {
            state_vars: 2,
            state_cardinality: 2,
            decision_cardinality: 2,
            min_roots: 1,
            max_roots: 4,
            max_depth: 2,
            max_latent_children: 4,
        }
    }
}

impl FuzzParams {
    fn validate(&self) -> Result<()> {
        if self.state_vars == 0 || self.min_roots == 0 || self.max_latent_children == 0 {
            return Err(Error::Hyperparameter("fuzz sizes must be at least 1".into()));
        }
        if self.max_roots < self.min_roots {
            return Err(Error::Hyperparameter("max_roots is below min_roots".into()));
        }
        if self.state_cardinality < 2 || self.decision_cardinality < 2 {
            return Err(Error::Hyperparameter("cardinalities must be at least 2".into()));
        }
        Ok(())
    }

    /// States `S0..`, one decision `D`, utility `U`.
    pub fn variables(&self) -> Vec<VariableMeta> {
        let mut vars: Vec<VariableMeta> =
            (0..self.state_vars).map(|i| VariableMeta::state(&format!("S{i}"), self.state_cardinality)).collect();
        let mut d = VariableMeta::decision("D", self.decision_cardinality);
        d.slot = 1;
        vars.push(d);
        let mut u = VariableMeta::utility("U");
        u.slot = 2;
        vars.push(u);
        vars
    }

    pub fn order(&self) -> Result<PartialOrder> {
        let n = self.state_vars;
        PartialOrder::new(vec![Slot::Info((0..n).collect()), Slot::Decision(n), Slot::Info(Vec::new())], &self.variables())
    }
}

fn random_probs(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

struct TemplateGen<'a, R: Rng> {
    rng: &'a mut R,
    p: &'a FuzzParams,
    nodes: Vec<NodeKind>,
    latents: Vec<NodeId>,
}

impl<R: Rng> TemplateGen<'_, R> {
    fn push(&mut self, node: NodeKind) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    fn leaf(&mut self, var: VarId) -> NodeId {
        let probs = random_probs(self.rng, self.p.state_cardinality as usize);
        self.push(NodeKind::Categorical { var, probs })
    }

    fn states(&mut self, rem: &[VarId], depth: usize) -> NodeId {
        if rem.is_empty() {
            return self.decision();
        }
        match self.rng.gen_range(0..3) {
            0 if depth > 0 => {
                let k = self.rng.gen_range(2..=3);
                let children: Vec<NodeId> = (0..k).map(|_| self.states(rem, depth - 1)).collect();
                let weights = random_probs(self.rng, k);
                self.push(NodeKind::Sum { children, weights })
            }
            1 => {
                let head = self.leaf(rem[0]);
                let tail = self.states(&rem[1..], depth);
                self.push(NodeKind::Product { children: vec![head, tail] })
            }
            _ => {
                let mut children: Vec<NodeId> = rem.iter().map(|&v| self.leaf(v)).collect();
                children.push(self.decision());
                self.push(NodeKind::Product { children })
            }
        }
    }

    fn decision(&mut self) -> NodeId {
        let card = self.p.decision_cardinality;
        let mut children = Vec::with_capacity(card as usize);
        for _ in 0..card {
            let c = if !children.is_empty() && self.rng.gen_bool(0.2) {
                *children.choose(self.rng).expect("nonempty")
            } else {
                self.utility()
            };
            children.push(c);
        }
        self.push(NodeKind::Max { decision: self.p.state_vars, children, labels: (0..card).collect() })
    }

    fn utility(&mut self) -> NodeId {
        let k = if self.rng.gen_bool(0.3) { 2 } else { 1 };
        let children: Vec<NodeId> = (0..k)
            .map(|_| {
                let value = (self.rng.gen_range(-10.0f64..10.0) * 100.0).round() / 100.0;
                let u = self.push(NodeKind::Utility { var: self.p.state_vars + 1, value });
                let s = self.latent_sum();
                self.push(NodeKind::Product { children: vec![u, s] })
            })
            .collect();
        if k == 1 {
            return children[0];
        }
        let weights = random_probs(self.rng, k);
        self.push(NodeKind::Sum { children, weights })
    }

    /// Sum over a random nonempty subset of the latent leaves.
    fn latent_sum(&mut self) -> NodeId {
        let max = self.p.max_latent_children.min(self.latents.len());
        let k = self.rng.gen_range(1..=max);
        let mut children: Vec<NodeId> = self.latents.choose_multiple(self.rng, k).copied().collect();
        children.sort_unstable();
        let weights = random_probs(self.rng, k);
        self.push(NodeKind::Sum { children, weights })
    }
}

/// A sound template with `min_roots` to `max_roots` interface roots and a nested-sum
/// top network.
pub fn random_model(seed: u64, p: &FuzzParams) -> Result<RspmnModel> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(p.min_roots..=p.max_roots);
    let mut g = TemplateGen { rng: &mut rng, p, nodes: Vec::new(), latents: Vec::new() };
    g.latents = (0..k).map(|index| g.push(NodeKind::Latent { index })).collect();
    let states: Vec<VarId> = (0..p.state_vars).collect();
    let roots: Vec<NodeId> = (0..k).map(|_| g.states(&states, p.max_depth)).collect();
    let latents = g.latents.clone();
    let template = TemplateNetwork::new(Network::new(g.nodes, roots)?, latents, (0..k).collect())?;
    let top = random_top(&mut rng, k, 2)?;
    RspmnModel::new(p.variables(), p.order()?, top, template)
}

/// Sums nested up to `depth` levels over latent leaves of `num_roots` roots.
pub fn random_top(rng: &mut impl Rng, num_roots: usize, depth: usize) -> Result<TopNetwork> {
    fn build(rng: &mut impl Rng, nodes: &mut Vec<NodeKind>, k: usize, depth: usize) -> NodeId {
        let n = rng.gen_range(1..=3);
        let children: Vec<NodeId> = (0..n)
            .map(|_| {
                if depth > 0 && rng.gen_bool(0.4) {
                    build(rng, nodes, k, depth - 1)
                } else {
                    nodes.push(NodeKind::Latent { index: rng.gen_range(0..k) });
                    NodeId(nodes.len() - 1)
                }
            })
            .collect();
        let weights = random_probs(rng, n);
        nodes.push(NodeKind::Sum { children, weights });
        NodeId(nodes.len() - 1)
    }
    if num_roots == 0 {
        return Err(Error::NoInterfaceRoots);
    }
    let mut nodes = Vec::new();
    let root = build(rng, &mut nodes, num_roots, depth);
    TopNetwork::new(Network::new(nodes, vec![root])?)
}

/// A valid single-rooted network over `num_vars` binary variables in which
/// the variables listed in `decisions` are max nodes, plus utility variable
/// `num_vars`.
pub fn random_spmn(seed: u64, num_vars: usize, decisions: &[VarId]) -> Result<Network> {
    if decisions.iter().any(|&d| d >= num_vars) {
        return Err(Error::Hyperparameter("decision variables must be below the utility id".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<NodeKind> = Vec::new();
    let mut scope: Vec<VarId> = (0..=num_vars).collect();
    scope.shuffle(&mut rng);
    let root = spmn_node(&mut rng, &mut nodes, &scope, decisions, num_vars, 3);
    Network::new(nodes, vec![root])
}

fn spmn_node(
    rng: &mut impl Rng,
    nodes: &mut Vec<NodeKind>,
    scope: &[VarId],
    decisions: &[VarId],
    utility: VarId,
    depth: usize,
) -> NodeId {
    let push = |nodes: &mut Vec<NodeKind>, n: NodeKind| {
        nodes.push(n);
        NodeId(nodes.len() - 1)
    };
    if scope.len() == 1 {
        let v = scope[0];
        let leaf = if v == utility {
            NodeKind::Utility { var: v, value: rng.gen_range(-5..=5) as f64 }
        } else {
            NodeKind::Categorical { var: v, probs: random_probs(rng, 2) }
        };
        return push(nodes, leaf);
    }
    let free: Vec<VarId> =
        scope.iter().copied().filter(|v| !decisions.contains(v) && *v != utility).collect();
    // decisions are only split off together with the utility
    if let Some(&d) = scope.iter().find(|v| decisions.contains(v)) {
        if free.is_empty() || rng.gen_bool(0.5) {
            let rest: Vec<VarId> = scope.iter().copied().filter(|&v| v != d).collect();
            let a = spmn_node(rng, nodes, &rest, decisions, utility, depth.saturating_sub(1));
            let b = if rng.gen_bool(0.3) { a } else { spmn_node(rng, nodes, &rest, decisions, utility, depth.saturating_sub(1)) };
            return push(nodes, NodeKind::Max { decision: d, children: vec![a, b], labels: vec![0, 1] });
        }
    }
    if depth > 0 && rng.gen_bool(0.4) {
        let k = rng.gen_range(2..=3);
        let children: Vec<NodeId> = (0..k).map(|_| spmn_node(rng, nodes, scope, decisions, utility, depth - 1)).collect();
        let weights = random_probs(rng, k);
        return push(nodes, NodeKind::Sum { children, weights });
    }
    let take = rng.gen_range(1..=free.len());
    let mut parts: Vec<Vec<VarId>> = vec![free[..take].to_vec()];
    let rest: Vec<VarId> = scope.iter().copied().filter(|v| !free[..take].contains(v)).collect();
    if !rest.is_empty() {
        parts.push(rest);
    }
    if parts.len() == 1 && parts[0].len() > 1 {
        let v = parts[0].pop().expect("nonempty");
        parts.push(vec![v]);
    }
    let children: Vec<NodeId> =
        parts.iter().map(|p| spmn_node(rng, nodes, p, decisions, utility, depth.saturating_sub(1))).collect();
    push(nodes, NodeKind::Product { children })
}

/// Episodes from a random stochastic process over `variables`: each step
/// draws uniform decisions and next states from a random table keyed by the
/// current state and decisions. Utilities are small integers.
pub fn random_episodes(seed: u64, variables: &[VariableMeta], episodes: usize, len: usize) -> Result<SequenceDataset> {
    let utility = crate::model::validate_variables(variables)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cards: Vec<u32> = variables.iter().map(|v| v.cardinality.unwrap_or(1)).collect();
    let states: Vec<VarId> = (0..variables.len()).filter(|&i| variables[i].kind == crate::model::VarKind::State).collect();
    let table_seed: u64 = rng.gen();
    let mut eps = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut values: Vec<u32> = cards.iter().map(|&c| rng.gen_range(0..c)).collect();
        values[utility] = 0;
        let mut steps = Vec::with_capacity(len);
        for _ in 0..len {
            for (i, v) in variables.iter().enumerate() {
                if v.kind == crate::model::VarKind::Decision {
                    values[i] = rng.gen_range(0..cards[i]);
                }
            }
            // the table entry for this configuration is a seeded generator
            let key = values.iter().fold(table_seed, |h, &v| h.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(u64::from(v) + 1));
            let mut cell = ChaCha8Rng::seed_from_u64(key);
            let utility_value = cell.gen_range(-3..=3) as f64;
            steps.push(Step { values: values.clone(), utility: utility_value });
            for &s in &states {
                values[s] = if rng.gen_bool(0.8) { cell.gen_range(0..cards[s]) } else { rng.gen_range(0..cards[s]) };
            }
        }
        eps.push(steps);
    }
    SequenceDataset::new(variables.to_vec(), eps)
}

/// Episodes drawn top-down from `model` with uniformly random decisions.
///
/// Sums pick a child by weight, products visit every child and the first
/// latent leaf met selects the next step's interface root. An episode ends
/// after `len` steps or when a step reaches no latent leaf. Variables a step
/// does not reach are recorded as 0.
pub fn sample_episodes(model: &RspmnModel, seed: u64, episodes: usize, len: usize) -> Result<SequenceDataset> {
    if len == 0 {
        return Err(Error::ZeroSteps);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tpl = model.template.network();
    let top = model.top.network();
    let pick = |rng: &mut ChaCha8Rng, weights: &[f64]| -> usize {
        let r: f64 = rng.gen();
        let mut acc = 0.0;
        for (k, w) in weights.iter().enumerate() {
            acc += w;
            if r < acc {
                return k;
            }
        }
        weights.len() - 1
    };
    let mut eps = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut id = top.root();
        let mut root = loop {
            match &top[id] {
                NodeKind::Latent { index } => break Some(*index),
                NodeKind::Sum { children, weights } => id = children[pick(&mut rng, weights)],
                NodeKind::Product { children } => id = children[0],
                _ => return Err(Error::Invariant("unexpected node in the top network".into())),
            }
        };
        let mut steps = Vec::with_capacity(len);
        while let Some(r) = root.take() {
            if steps.len() == len {
                break;
            }
            let mut values = vec![0u32; model.num_vars()];
            let mut utility = 0.0;
            let mut stack = vec![tpl.roots()[r]];
            while let Some(id) = stack.pop() {
                match &tpl[id] {
                    NodeKind::Sum { children, weights } => stack.push(children[pick(&mut rng, weights)]),
                    NodeKind::Product { children } => stack.extend(children.iter().rev()),
                    NodeKind::Max { decision, children, labels } => {
                        let k = rng.gen_range(0..children.len());
                        values[*decision] = labels[k];
                        stack.push(children[k]);
                    }
                    NodeKind::Categorical { var, probs } => values[*var] = pick(&mut rng, probs) as u32,
                    NodeKind::Utility { value, .. } => utility += value,
                    NodeKind::Latent { index } => {
                        if root.is_none() {
                            root = Some(*index);
                        }
                    }
                }
            }
            steps.push(Step { values, utility });
        }
        eps.push(steps);
    }
    SequenceDataset::new(model.variables.clone(), eps)
}
