//! Structural validity, template soundness and explicit unfolding.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{
    scope_of, scope_of_with, scope_union, scope_vars, scopes_disjoint, Network,
    NodeId, NodeKind, Scope, Symbol, VarId,
};
use crate::model::{RspmnModel, TemplateNetwork, TopNetwork};

/// Outcome of one condition: `None` when the condition was not checked,
/// otherwise the offending nodes (empty means it holds).
pub type Condition = Option<Vec<NodeId>>;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidityReport {
    /// Childless internal nodes and unnormalized parameters.
    pub well_formed: Condition,
    pub sum_complete: Condition,
    pub decomposable: Condition,
    pub max_complete: Condition,
    pub max_unique: Condition,
    /// Interface roots whose scope differs from the first one.
    pub template_sound: Condition,
    /// Top-network nodes violating its own conditions.
    pub top_valid: Condition,
}

impl ValidityReport {
    fn conditions(&self) -> [(&'static str, &Condition); 7] {
        [
            ("well_formed", &self.well_formed),
            ("sum_complete", &self.sum_complete),
            ("decomposable", &self.decomposable),
            ("max_complete", &self.max_complete),
            ("max_unique", &self.max_unique),
            ("template_sound", &self.template_sound),
            ("top_valid", &self.top_valid),
        ]
    }

    /// True when every checked condition holds.
    pub fn all_pass(&self) -> bool {
        self.conditions().iter().all(|(_, c)| c.as_ref().is_none_or(Vec::is_empty))
    }

    /// Names of failing conditions.
    pub fn failures(&self) -> Vec<&'static str> {
        self.conditions()
            .iter()
            .filter(|(_, c)| c.as_ref().is_some_and(|v| !v.is_empty()))
            .map(|(n, _)| *n)
            .collect()
    }

    /// First offending node of any failing condition.
    pub fn first_offender(&self) -> Option<NodeId> {
        self.conditions().iter().find_map(|(_, c)| c.as_ref().and_then(|v| v.first().copied()))
    }
}

impl fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, cond) in self.conditions() {
            match cond {
                None => writeln!(f, "{name}: skipped")?,
                Some(v) if v.is_empty() => writeln!(f, "{name}: pass")?,
                Some(v) => {
                    let ids: Vec<String> = v.iter().take(20).map(ToString::to_string).collect();
                    let more = if v.len() > 20 { format!(" (+{} more)", v.len() - 20) } else { String::new() };
                    writeln!(f, "{name}: FAIL at {}{more}", ids.join(", "))?
                }
            }
        }
        write!(f, "overall: {}", if self.all_pass() { "pass" } else { "FAIL" })
    }
}

/// Checks the four structural conditions over every node reachable from the roots.
pub fn check_spmn_valid(network: &Network) -> ValidityReport {
    check_with_scopes(network, &scope_of(network))
}

fn check_with_scopes(network: &Network, scopes: &[Scope]) -> ValidityReport {
    let reach = network.reachable();
    let mut report = ValidityReport {
        well_formed: Some(Vec::new()),
        sum_complete: Some(Vec::new()),
        decomposable: Some(Vec::new()),
        max_complete: Some(Vec::new()),
        max_unique: Some(Vec::new()),
        ..Default::default()
    };
    let push = |c: &mut Condition, id: NodeId| c.as_mut().expect("checked").push(id);
    let bad_params: Vec<NodeId> = network.parameter_violations().into_iter().map(|(id, _)| id).collect();

    // decision variables of max nodes at or below each node
    let mut below: Vec<Vec<VarId>> = vec![Vec::new(); network.len()];
    for &id in network.topological_order() {
        let node = &network[id];
        let mut acc: Vec<VarId> = Vec::new();
        for &c in node.children() {
            merge_sorted(&mut acc, &below[c.0]);
        }
        if let NodeKind::Max { decision, .. } = node {
            merge_sorted(&mut acc, &[*decision]);
        }
        below[id.0] = acc;
    }

    for (i, node) in network.nodes().iter().enumerate() {
        if !reach[i] {
            continue;
        }
        let id = NodeId(i);
        if (!node.is_leaf() && node.children().is_empty()) || bad_params.contains(&id) {
            push(&mut report.well_formed, id);
        }
        let children = node.children();
        let same_scope = || children.windows(2).all(|w| scopes[w[0].0] == scopes[w[1].0]);
        match node {
            NodeKind::Sum { .. } if !same_scope() => push(&mut report.sum_complete, id),
            NodeKind::Product { .. } => {
                let mut acc: Scope = Vec::new();
                for &c in children {
                    if !scopes_disjoint(&acc, &scopes[c.0]) {
                        push(&mut report.decomposable, id);
                        break;
                    }
                    acc = scope_union(&acc, &scopes[c.0]);
                }
            }
            NodeKind::Max { decision, .. } => {
                if !same_scope() {
                    push(&mut report.max_complete, id);
                }
                if children.iter().any(|c| below[c.0].binary_search(decision).is_ok()) {
                    push(&mut report.max_unique, id);
                }
            }
            _ => {}
        }
    }
    report
}

fn merge_sorted(acc: &mut Vec<VarId>, other: &[VarId]) {
    for &v in other {
        if let Err(pos) = acc.binary_search(&v) {
            acc.insert(pos, v);
        }
    }
}

/// Latent symbol of each interface index: indices whose roots share the
/// same observable scope share one symbol.
pub fn latent_classes(template: &Network) -> Vec<usize> {
    let scopes = scope_of(template);
    let var_scopes: Vec<Vec<VarId>> = template.roots().iter().map(|r| scope_vars(&scopes[r.0])).collect();
    (0..var_scopes.len())
        .map(|i| var_scopes.iter().position(|s| *s == var_scopes[i]).expect("self matches"))
        .collect()
}

/// Structural conditions over the template plus equal scopes across interface roots.
pub fn check_template_sound(template: &TemplateNetwork) -> ValidityReport {
    let net = template.network();
    let classes = latent_classes(net);
    let scopes = scope_of_with(net, |i| Symbol::Latent(classes.get(i).copied().unwrap_or(i)));
    let mut report = check_with_scopes(net, &scopes);
    let roots = net.roots();
    let mut unequal = Vec::new();
    for &r in &roots[1..] {
        if scopes[r.0] != scopes[roots[0].0] {
            unequal.push(r);
        }
    }
    report.template_sound = Some(unequal);
    report
}

/// Structural conditions of the top network with latent symbols classed by
/// the template's interface-root scopes.
pub fn check_top_valid(top: &TopNetwork, template: &TemplateNetwork) -> ValidityReport {
    let net = top.network();
    let classes = latent_classes(template.network());
    let mut offenders: Vec<NodeId> = Vec::new();
    for (i, node) in net.nodes().iter().enumerate() {
        if let NodeKind::Latent { index } = node {
            if *index >= classes.len() {
                offenders.push(NodeId(i));
            }
        }
    }
    let scopes = scope_of_with(net, |i| Symbol::Latent(classes.get(i).copied().unwrap_or(usize::MAX - i)));
    let inner = check_with_scopes(net, &scopes);
    for (_, cond) in inner.conditions() {
        if let Some(v) = cond {
            offenders.extend(v);
        }
    }
    offenders.sort_unstable();
    offenders.dedup();
    ValidityReport { top_valid: Some(offenders), ..Default::default() }
}

/// Node accounting of an unfolding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UnfoldStats {
    pub steps: usize,
    pub top_nodes: usize,
    pub template_nodes: usize,
    /// Latent leaves replaced by edges to the next copy's roots.
    pub latent_replaced: usize,
    /// Nodes removed from the bottom copy (latent leaves included) and from
    /// copies above it whose children were all removed.
    pub pruned: usize,
    /// Remaining nodes not reachable from the top root.
    pub unreachable: usize,
    pub nodes: usize,
}

/// Materializes `steps` linked template copies under the top network.
///
/// Copy `t` shifts every variable id by `t * num_vars`.
pub fn unfold(model: &RspmnModel, steps: usize) -> Result<Network> {
    unfold_with_stats(model, steps, usize::MAX).map(|(net, _)| net)
}

/// Like [`unfold`], erroring when the raw node count would exceed `limit`.
pub fn unfold_with_stats(model: &RspmnModel, steps: usize, limit: usize) -> Result<(Network, UnfoldStats)> {
    if steps == 0 {
        return Err(Error::ZeroSteps);
    }
    let tpl = model.template.network();
    let top = model.top.network();
    let raw = top.len().saturating_add(steps.saturating_mul(tpl.len()));
    if raw > limit {
        return Err(Error::SizeGuard { nodes: raw, limit });
    }
    let n_vars = model.num_vars();
    let m = tpl.len();
    let roots = tpl.roots();

    // pruned[t][node]; the bottom copy drops its latent leaves
    let mut pruned: Vec<Vec<bool>> = vec![Vec::new(); steps];
    for t in (0..steps).rev() {
        let mut mask = vec![false; m];
        for &id in tpl.topological_order() {
            let node = &tpl[id];
            mask[id.0] = match node {
                NodeKind::Latent { index } => t + 1 == steps || pruned[t + 1][roots[*index].0],
                n if n.is_leaf() => false,
                n => n.children().iter().all(|c| mask[c.0]),
            };
        }
        pruned[t] = mask;
    }

    // new id of node i in copy t, None when it is pruned or is a latent leaf
    let mut map: Vec<Vec<Option<NodeId>>> = vec![vec![None; m]; steps];
    let mut nodes: Vec<NodeKind> = Vec::new();
    let mut latent_replaced = 0;
    let mut pruned_count = 0;
    for t in (0..steps).rev() {
        let offset = t * n_vars;
        for &id in tpl.topological_order() {
            if pruned[t][id.0] {
                pruned_count += 1;
                continue;
            }
            let node = &tpl[id];
            if let NodeKind::Latent { .. } = node {
                latent_replaced += 1;
                continue;
            }
            let resolve = |c: NodeId| -> Option<NodeId> {
                match &tpl[c] {
                    NodeKind::Latent { index } => {
                        if pruned[t][c.0] {
                            None
                        } else {
                            map[t + 1][roots[*index].0]
                        }
                    }
                    _ => map[t][c.0],
                }
            };
            let new = relink(node, offset, resolve);
            nodes.push(new);
            map[t][id.0] = Some(NodeId(nodes.len() - 1));
        }
    }

    let mut top_map: Vec<Option<NodeId>> = vec![None; top.len()];
    let mut top_dropped = 0;
    for &id in top.topological_order() {
        let node = &top[id];
        if let NodeKind::Latent { index } = node {
            let target = roots.get(*index).and_then(|r| map[0][r.0]);
            if target.is_none() {
                top_dropped += 1;
            } else {
                latent_replaced += 1;
            }
            top_map[id.0] = target;
            continue;
        }
        let new = relink(node, 0, |c| top_map[c.0]);
        if new.children().is_empty() {
            top_dropped += 1;
            continue;
        }
        nodes.push(new);
        top_map[id.0] = Some(NodeId(nodes.len() - 1));
    }
    let root = top_map[top.root().0]
        .ok_or_else(|| Error::Degenerate("every branch of the top network was pruned".into()))?;
    let net = Network::new(nodes, vec![root])?;
    let (compact, _) = net.compact();
    let stats = UnfoldStats {
        steps,
        top_nodes: top.len(),
        template_nodes: m,
        latent_replaced,
        pruned: pruned_count + top_dropped,
        unreachable: net.len() - compact.len(),
        nodes: compact.len(),
    };
    Ok((compact, stats))
}

/// Copies `node` with shifted variables and children resolved through
/// `resolve`; dropped sum children have the remaining weights renormalized.
fn relink(node: &NodeKind, offset: usize, resolve: impl Fn(NodeId) -> Option<NodeId>) -> NodeKind {
    let ids: Vec<Option<NodeId>> = node.children().iter().map(|&c| resolve(c)).collect();
    let mut out = match node {
        NodeKind::Categorical { var, probs } => NodeKind::Categorical { var: var + offset, probs: probs.clone() },
        NodeKind::Utility { var, value } => NodeKind::Utility { var: var + offset, value: *value },
        NodeKind::Max { decision, children, labels } => {
            NodeKind::Max { decision: decision + offset, children: children.clone(), labels: labels.clone() }
        }
        other => other.clone(),
    };
    let mut k = 0;
    out.retain_children(|_| {
        k += 1;
        ids[k - 1].is_some()
    });
    if let Some(children) = out.children_mut() {
        let kept: Vec<NodeId> = ids.iter().flatten().copied().collect();
        *children = kept;
    }
    if let NodeKind::Sum { weights, .. } = &mut out {
        if ids.iter().any(Option::is_none) {
            let total: f64 = weights.iter().sum();
            if total > 0.0 {
                weights.iter_mut().for_each(|w| *w /= total);
            }
        }
    }
    out
}

/// Applies the bottom-copy pruning to a template viewed as a plain network.
/// Applying it twice is the same as applying it once.
pub fn prune_bottom(network: &Network) -> Network {
    let mask = crate::model::bottom_prune_mask(network);
    let mut map: Vec<Option<NodeId>> = vec![None; network.len()];
    let mut next = 0;
    for (i, &p) in mask.iter().enumerate() {
        if !p {
            map[i] = Some(NodeId(next));
            next += 1;
        }
    }
    let nodes: Vec<NodeKind> = network
        .nodes()
        .iter()
        .enumerate()
        .filter(|(i, _)| !mask[*i])
        .map(|(_, n)| relink(n, 0, |c| map[c.0]))
        .collect();
    let roots: Vec<NodeId> = network.roots().iter().filter_map(|r| map[r.0]).collect();
    Network::new(nodes, roots).expect("pruning preserves acyclicity")
}

/// Result of checking the unfolded network for each horizon.
#[derive(Debug, Clone, Serialize)]
pub struct UnfoldCheck {
    pub template: ValidityReport,
    pub top: ValidityReport,
    /// (steps, report) per unfolding; empty when the preconditions fail.
    pub unfolded: Vec<(usize, ValidityReport)>,
}

impl UnfoldCheck {
    pub fn preconditions_hold(&self) -> bool {
        self.template.all_pass() && self.top.all_pass()
    }

    pub fn passed(&self) -> bool {
        self.preconditions_hold()
            && !self.unfolded.is_empty()
            && self.unfolded.iter().all(|(_, r)| r.all_pass())
    }
}

/// Unfolds for 1..=max_steps and checks each result, after checking the
/// template and top network.
pub fn verify_unfolded(model: &RspmnModel, max_steps: usize) -> Result<UnfoldCheck> {
    let template = check_template_sound(&model.template);
    let top = check_top_valid(&model.top, &model.template);
    let mut unfolded = Vec::new();
    if template.all_pass() && top.all_pass() {
        for steps in 1..=max_steps {
            unfolded.push((steps, check_spmn_valid(&unfold(model, steps)?)));
        }
    }
    Ok(UnfoldCheck { template, top, unfolded })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(var: usize) -> NodeKind {
        NodeKind::Categorical { var, probs: vec![0.5, 0.5] }
    }

    #[test]
    fn sum_with_unequal_scopes_fails() {
        let net = Network::new(
            vec![
                leaf(0),
                leaf(1),
                NodeKind::Product { children: vec![NodeId(0), NodeId(1)] },
                leaf(0),
                NodeKind::Sum { children: vec![NodeId(3), NodeId(2)], weights: vec![0.5, 0.5] },
            ],
            vec![NodeId(4)],
        )
        .unwrap();
        let r = check_spmn_valid(&net);
        assert_eq!(r.sum_complete, Some(vec![NodeId(4)]));
        assert_eq!(r.failures(), vec!["sum_complete"]);
    }

    #[test]
    fn product_with_shared_variable_fails() {
        let net = Network::new(
            vec![leaf(0), leaf(0), NodeKind::Product { children: vec![NodeId(0), NodeId(1)] }],
            vec![NodeId(2)],
        )
        .unwrap();
        assert_eq!(check_spmn_valid(&net).decomposable, Some(vec![NodeId(2)]));
    }

    #[test]
    fn nested_max_on_same_decision_fails() {
        let u = |v| NodeKind::Utility { var: 9, value: v };
        let net = Network::new(
            vec![
                u(1.0),
                u(2.0),
                NodeKind::Max { decision: 5, children: vec![NodeId(0), NodeId(1)], labels: vec![0, 1] },
                u(3.0),
                NodeKind::Max { decision: 5, children: vec![NodeId(2), NodeId(3)], labels: vec![0, 1] },
            ],
            vec![NodeId(4)],
        )
        .unwrap();
        let r = check_spmn_valid(&net);
        assert_eq!(r.max_unique, Some(vec![NodeId(4)]));
        assert_eq!(r.max_complete, Some(vec![NodeId(4)]));
    }

    #[test]
    fn prune_is_idempotent() {
        let net = Network::new(
            vec![
                NodeKind::Latent { index: 0 },
                NodeKind::Latent { index: 1 },
                NodeKind::Sum { children: vec![NodeId(0), NodeId(1)], weights: vec![0.5, 0.5] },
                NodeKind::Utility { var: 1, value: 2.0 },
                NodeKind::Product { children: vec![NodeId(3), NodeId(2)] },
                leaf(0),
                NodeKind::Product { children: vec![NodeId(5), NodeId(4)] },
            ],
            vec![NodeId(6)],
        )
        .unwrap();
        let once = prune_bottom(&net);
        assert_eq!(once.len(), 4);
        assert_eq!(prune_bottom(&once), once);
    }
}
