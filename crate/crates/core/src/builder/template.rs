use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{scope_of, scope_vars, Network, NodeId, NodeKind, VarId};
use crate::model::{TemplateNetwork, TopNetwork};

/// Most interface roots the discovery step may create.
pub const MAX_INTERFACE_ROOTS: usize = 4096;

/// Removes every part of a two-step network that only concerns the next step.
///
/// Variables with id `>= num_vars` belong to the next step. Children whose
/// scope lies entirely in the next step are dropped, then internal nodes left
/// without children, transitively.
pub fn extract_one_step(s2: &Network, num_vars: usize) -> Result<Network> {
    let scopes = scope_of(s2);
    let next_only: Vec<bool> = scopes
        .iter()
        .map(|s| !s.is_empty() && s.iter().all(|sym| matches!(sym, crate::graph::Symbol::Var(v) if *v >= num_vars)))
        .collect();
    let mut dead = vec![false; s2.len()];
    for &id in s2.topological_order() {
        let node = &s2[id];
        dead[id.0] = next_only[id.0] || (!node.is_leaf() && node.children().iter().all(|c| dead[c.0]));
    }
    if dead[s2.root().0] {
        return Err(Error::Degenerate("the learned root only concerns the next step".into()));
    }
    let nodes: Vec<NodeKind> = s2
        .nodes()
        .iter()
        .map(|n| {
            let mut n = n.clone();
            n.retain_children(|c| !dead[c.0]);
            n
        })
        .collect();
    let (net, _) = Network::new(nodes, vec![s2.root()])?.compact();
    Ok(net)
}

/// Interface roots of a one-step network: the topmost products covering every
/// step variable, expanded through their state-mixture sum children.
///
/// Returns a network whose roots are the interface roots, together with a
/// top network of equal weights over them.
pub fn discover_interface_roots(s1: &Network, state_vars: &[VarId]) -> Result<(Network, TopNetwork)> {
    let scopes = scope_of(s1);
    let full = scope_vars(&scopes[s1.root().0]);
    let mut tops: Vec<NodeId> = Vec::new();
    let mut seen = vec![false; s1.len()];
    let mut queue = std::collections::VecDeque::from([s1.root()]);
    seen[s1.root().0] = true;
    while let Some(id) = queue.pop_front() {
        if matches!(s1[id], NodeKind::Product { .. }) {
            tops.push(id);
            continue;
        }
        for &c in s1[id].children() {
            if !seen[c.0] && scope_vars(&scopes[c.0]) == full {
                seen[c.0] = true;
                queue.push_back(c);
            }
        }
    }
    if tops.is_empty() {
        return Err(Error::NoInterfaceRoots);
    }

    let mut nodes: Vec<NodeKind> = s1.nodes().to_vec();
    let mut roots: Vec<NodeId> = Vec::new();
    let touches_state =
        |id: NodeId| scope_vars(&scopes[id.0]).iter().any(|v| state_vars.binary_search(v).is_ok());
    let mut memo: HashMap<NodeId, Vec<Vec<NodeId>>> = HashMap::new();
    for &p in &tops {
        let sets = ir_children(s1, p, &touches_state, &mut memo)?;
        if sets.len() == 1 && sets[0] == s1[p].children() {
            roots.push(p);
            continue;
        }
        for set in sets {
            nodes.push(NodeKind::Product { children: set });
            roots.push(NodeId(nodes.len() - 1));
            if roots.len() > MAX_INTERFACE_ROOTS {
                return Err(Error::Degenerate(format!("more than {MAX_INTERFACE_ROOTS} interface roots")));
            }
        }
    }
    let (net, _) = Network::new(nodes, roots)?.compact();
    let top = TopNetwork::uniform(net.roots().len())?;
    Ok((net, top))
}

/// Child sets of product `p`: a cross product over its children where a
/// state-mixture sum child contributes the alternatives of each of its
/// children (recursively through nested sums), a product child its own child
/// sets and any other child itself.
fn ir_children(
    net: &Network,
    p: NodeId,
    touches_state: &impl Fn(NodeId) -> bool,
    memo: &mut HashMap<NodeId, Vec<Vec<NodeId>>>,
) -> Result<Vec<Vec<NodeId>>> {
    if let Some(v) = memo.get(&p) {
        return Ok(v.clone());
    }
    let mut acc: Vec<Vec<NodeId>> = vec![Vec::new()];
    for &c in net[p].children() {
        let options = alternatives(net, c, touches_state, memo)?;
        if acc.len().saturating_mul(options.len()) > MAX_INTERFACE_ROOTS {
            return Err(Error::Degenerate(format!("more than {MAX_INTERFACE_ROOTS} interface roots")));
        }
        acc = acc
            .iter()
            .flat_map(|a| {
                options.iter().map(move |o| {
                    let mut s = a.clone();
                    s.extend_from_slice(o);
                    s
                })
            })
            .collect();
    }
    memo.insert(p, acc.clone());
    Ok(acc)
}

fn alternatives(
    net: &Network,
    c: NodeId,
    touches_state: &impl Fn(NodeId) -> bool,
    memo: &mut HashMap<NodeId, Vec<Vec<NodeId>>>,
) -> Result<Vec<Vec<NodeId>>> {
    Ok(match &net[c] {
        NodeKind::Sum { children, .. } if touches_state(c) => {
            let mut opts = Vec::new();
            for &g in children {
                opts.extend(alternatives(net, g, touches_state, memo)?);
                if opts.len() > MAX_INTERFACE_ROOTS {
                    return Err(Error::Degenerate(format!("more than {MAX_INTERFACE_ROOTS} interface roots")));
                }
            }
            opts
        }
        NodeKind::Product { .. } => ir_children(net, c, touches_state, memo)?,
        _ => vec![vec![c]],
    })
}

/// Attaches a fresh equal-weight sum over one latent leaf per interface root
/// (shared across attachments) below every interface root.
///
/// Sums and max nodes receive attachments in every child (leaf children are
/// wrapped in a product with the new sum). A product with only leaf children
/// gains the sum as an extra child; otherwise only the child holding the
/// variable of the latest slot (`slot_of`) is descended into.
pub fn build_initial_template(ir: &Network, slot_of: &[usize]) -> Result<TemplateNetwork> {
    let k = ir.roots().len();
    if k == 0 {
        return Err(Error::NoInterfaceRoots);
    }
    let scopes = scope_of(ir);
    let mut b = Builder { ir, nodes: ir.nodes().to_vec(), latents: Vec::new(), memo: HashMap::new(), k };
    b.latents = (0..k)
        .map(|index| {
            b.nodes.push(NodeKind::Latent { index });
            NodeId(b.nodes.len() - 1)
        })
        .collect();
    let latest = |id: NodeId| -> usize {
        scope_vars(&scopes[id.0]).iter().map(|&v| slot_of.get(v).copied().unwrap_or(0)).max().unwrap_or(0)
    };
    let roots: Vec<NodeId> = ir.roots().iter().map(|&r| b.attach(r, &latest)).collect();
    let latents = b.latents.clone();
    let (net, map) = Network::new(b.nodes, roots)?.compact();
    let latent_leaves: Vec<NodeId> = latents.iter().map(|l| map[l.0].expect("every latent leaf is used")).collect();
    TemplateNetwork::new(net, latent_leaves, (0..k).collect())
}

struct Builder<'a> {
    ir: &'a Network,
    nodes: Vec<NodeKind>,
    latents: Vec<NodeId>,
    memo: HashMap<NodeId, NodeId>,
    k: usize,
}

impl Builder<'_> {
    fn push(&mut self, node: NodeKind) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    fn latent_sum(&mut self) -> NodeId {
        let weights = vec![1.0 / self.k as f64; self.k];
        self.push(NodeKind::Sum { children: self.latents.clone(), weights })
    }

    fn attach(&mut self, id: NodeId, latest: &impl Fn(NodeId) -> usize) -> NodeId {
        if let Some(&done) = self.memo.get(&id) {
            return done;
        }
        let node = self.ir[id].clone();
        let out = match &node {
            n if n.is_leaf() => {
                let s = self.latent_sum();
                self.push(NodeKind::Product { children: vec![id, s] })
            }
            NodeKind::Sum { .. } | NodeKind::Max { .. } => {
                let mut n = node.clone();
                let children: Vec<NodeId> = node.children().iter().map(|&c| self.attach(c, latest)).collect();
                *n.children_mut().expect("internal node") = children;
                self.push(n)
            }
            NodeKind::Product { children } => {
                let mut children = children.clone();
                let all_leaves = children.iter().all(|&c| self.ir[c].is_leaf());
                let target = (0..children.len()).max_by_key(|&i| (latest(children[i]), std::cmp::Reverse(i)));
                match target {
                    Some(i) if !all_leaves && !self.ir[children[i]].is_leaf() => {
                        children[i] = self.attach(children[i], latest);
                    }
                    _ => {
                        let s = self.latent_sum();
                        children.push(s);
                    }
                }
                self.push(NodeKind::Product { children })
            }
            _ => unreachable!("leaves handled above"),
        };
        self.memo.insert(id, out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(var: usize) -> NodeKind {
        NodeKind::Categorical { var, probs: vec![0.5, 0.5] }
    }

    #[test]
    fn product_of_leaves_is_its_own_interface_root() {
        let net = Network::new(vec![cat(0), cat(1), NodeKind::Product { children: vec![NodeId(0), NodeId(1)] }], vec![
            NodeId(2),
        ])
        .unwrap();
        let (ir, top) = discover_interface_roots(&net, &[0, 1]).unwrap();
        assert_eq!(ir.roots().len(), 1);
        assert_eq!(top.len(), 2);
    }

    #[test]
    fn single_root_template_adds_latent_sum() {
        let net = Network::new(vec![cat(0), cat(1), NodeKind::Product { children: vec![NodeId(0), NodeId(1)] }], vec![
            NodeId(2),
        ])
        .unwrap();
        let t = build_initial_template(&net, &[0, 0]).unwrap();
        assert_eq!(t.latent_leaves().len(), 1);
        let root = &t.network()[t.interface_roots()[0]];
        assert_eq!(root.children().len(), 3);
        let s = root.children()[2];
        assert!(matches!(&t.network()[s], NodeKind::Sum { weights, .. } if weights == &vec![1.0]));
    }

    #[test]
    fn extraction_drops_next_step_children() {
        // vars per step: 0 state, 1 utility; next step uses 2 and 3
        let net = Network::new(
            vec![
                cat(0),
                NodeKind::Utility { var: 1, value: 1.0 },
                cat(2),
                NodeKind::Utility { var: 3, value: 2.0 },
                NodeKind::Product { children: vec![NodeId(2), NodeId(3)] },
                NodeKind::Product { children: vec![NodeId(0), NodeId(1), NodeId(4)] },
            ],
            vec![NodeId(5)],
        )
        .unwrap();
        let s1 = extract_one_step(&net, 2).unwrap();
        assert_eq!(s1.len(), 3);
        assert!(scope_of(&s1).iter().all(|s| scope_vars(s).iter().all(|&v| v < 2)));
        let only_next = Network::new(vec![cat(2)], vec![NodeId(0)]).unwrap();
        assert!(extract_one_step(&only_next, 2).is_err());
    }

    #[test]
    fn state_mixture_expands_into_roots() {
        // Product{Y, Sum{Product{X=.., U}, Product{X=.., U}}}
        let u = |v| NodeKind::Utility { var: 2, value: v };
        let net = Network::new(
            vec![
                cat(1),
                cat(0),
                u(1.0),
                NodeKind::Product { children: vec![NodeId(1), NodeId(2)] },
                cat(0),
                u(2.0),
                NodeKind::Product { children: vec![NodeId(4), NodeId(5)] },
                NodeKind::Sum { children: vec![NodeId(3), NodeId(6)], weights: vec![0.5, 0.5] },
                NodeKind::Product { children: vec![NodeId(0), NodeId(7)] },
            ],
            vec![NodeId(8)],
        )
        .unwrap();
        let (ir, top) = discover_interface_roots(&net, &[0, 1]).unwrap();
        assert_eq!(ir.roots().len(), 2);
        assert_eq!(top.len(), 3);
        let scopes = scope_of(&ir);
        assert_eq!(scopes[ir.roots()[0].0], scopes[ir.roots()[1].0]);
        let t = build_initial_template(&ir, &[0, 0, 2]).unwrap();
        assert!(crate::validity::check_template_sound(&t).all_pass());
    }
}
