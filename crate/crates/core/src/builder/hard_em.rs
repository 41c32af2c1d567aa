use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SequenceDataset, Step};
use crate::error::{Error, Result};
use crate::eval::{evaluate_into, EvalOptions, Evaluation, Evidence};
use crate::graph::{DualValue, Network, NodeId, NodeKind};
use crate::model::{bottom_prune_mask, RspmnModel, TemplateNetwork, VarKind};
use crate::validity::check_template_sound;

/// Largest change of a sum weight regarded as no change.
pub const WEIGHT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmParams {
    pub epochs: usize,
    /// Pseudo-count added to every edge of a visited sum before normalizing.
    pub count_smoothing: f64,
}

impl Default for EmParams {
    fn default() -> Self {
        EmParams { epochs: 2, count_smoothing: 0.0 }
    }
}

/// Edge counts and visit counts of the sum nodes of a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SumCounts {
    /// `edges[node][k]` counts selections of child `k`; empty for non-sum nodes.
    pub edges: Vec<Vec<u64>>,
    pub visits: Vec<u64>,
}

impl SumCounts {
    pub fn new(net: &Network) -> Self {
        let edges = net
            .nodes()
            .iter()
            .map(|n| match n {
                NodeKind::Sum { children, .. } => vec![0; children.len()],
                _ => Vec::new(),
            })
            .collect();
        SumCounts { edges, visits: vec![0; net.len()] }
    }

    fn add(&mut self, other: &SumCounts) {
        for (a, b) in self.edges.iter_mut().zip(&other.edges) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.visits.iter_mut().zip(&other.visits).for_each(|(x, y)| *x += y);
    }

    /// Sum nodes whose edge counts do not add up to their visits.
    pub fn conservation_violations(&self) -> Vec<NodeId> {
        (0..self.visits.len())
            .filter(|&i| self.edges[i].iter().sum::<u64>() != self.visits[i] && !self.edges[i].is_empty())
            .map(NodeId)
            .collect()
    }
}

/// Per-record outcome of the two sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecordOutcome {
    /// Record used; natural log of the top likelihood under utility matching.
    Counted(f64),
    /// Zero likelihood everywhere; the record was skipped.
    Skipped,
}

/// Count tallies for one pass over the data.
#[derive(Debug, Clone)]
pub struct HardEmState {
    pub template: SumCounts,
    pub top: SumCounts,
    pub records: usize,
    pub skipped: usize,
}

struct Scratch {
    evals: Vec<Evaluation>,
    top: Evaluation,
    ev: Evidence,
    stack: Vec<(usize, NodeId)>,
}

impl HardEmState {
    pub fn new(model: &RspmnModel) -> Self {
        HardEmState {
            template: SumCounts::new(model.template.network()),
            top: SumCounts::new(model.top.network()),
            records: 0,
            skipped: 0,
        }
    }

    /// Runs the bottom-up and top-down sweeps of one episode, adding its counts.
    pub fn process_record(&mut self, model: &RspmnModel, episode: &[Step]) -> Result<RecordOutcome> {
        let mask = bottom_prune_mask(model.template.network());
        let mut scratch = Scratch::new(model);
        self.process(model, &mask, episode, &mut scratch)
    }

    fn process(&mut self, model: &RspmnModel, mask: &[bool], episode: &[Step], s: &mut Scratch) -> Result<RecordOutcome> {
        check_record(model, episode)?;
        let tpl = model.template.network();
        let top = model.top.network();
        let len = episode.len();
        if s.evals.len() < len {
            s.evals.resize_with(len, Evaluation::default);
        }
        let opts = EvalOptions { match_utility: true, ..EvalOptions::likelihood() };
        let mut next: Option<Vec<DualValue>> = None;
        for t in (0..len).rev() {
            s.ev.clear();
            episode[t].write_evidence(&model.variables, 0, true, &mut s.ev);
            evaluate_into(tpl, &s.ev, next.as_deref(), opts, &mut s.evals[t])?;
            next = Some(s.evals[t].root_values(tpl));
        }
        s.ev.clear();
        evaluate_into(top, &s.ev, next.as_deref(), opts, &mut s.top)?;
        let lik = s.top.values[top.root().0].likelihood;
        self.records += 1;
        if lik <= 0.0 {
            self.skipped += 1;
            return Ok(RecordOutcome::Skipped);
        }

        // top network
        s.stack.clear();
        s.stack.push((0, top.root()));
        let mut entries: Vec<usize> = Vec::new();
        while let Some((_, id)) = s.stack.pop() {
            match &top[id] {
                NodeKind::Latent { index } => entries.push(*index),
                NodeKind::Sum { children, weights } => {
                    let k = argmax_mass(children, weights, &s.top.values);
                    self.top.edges[id.0][k] += 1;
                    self.top.visits[id.0] += 1;
                    s.stack.push((0, children[k]));
                }
                node => s.stack.extend(node.children().iter().rev().map(|&c| (0, c))),
            }
        }
        // template copies
        let roots = tpl.roots();
        s.stack.clear();
        s.stack.extend(entries.iter().rev().map(|&i| (0, roots[i])));
        while let Some((t, id)) = s.stack.pop() {
            let bottom = t + 1 == len;
            if bottom && mask[id.0] {
                continue;
            }
            let values = &s.evals[t].values;
            match &tpl[id] {
                NodeKind::Latent { index } => s.stack.push((t + 1, roots[*index])),
                NodeKind::Sum { children, weights } => {
                    let k = argmax_mass(children, weights, values);
                    self.template.edges[id.0][k] += 1;
                    self.template.visits[id.0] += 1;
                    s.stack.push((t, children[k]));
                }
                NodeKind::Max { children, .. } => {
                    if let Some(k) = s.evals[t].choices[id.0] {
                        s.stack.push((t, children[k]));
                    }
                }
                node => s.stack.extend(node.children().iter().rev().map(|&c| (t, c))),
            }
        }
        Ok(RecordOutcome::Counted(lik.ln()))
    }
}

impl Scratch {
    fn new(model: &RspmnModel) -> Self {
        Scratch {
            evals: Vec::new(),
            top: Evaluation::default(),
            ev: Evidence::new(model.num_vars()),
            stack: Vec::new(),
        }
    }
}

fn argmax_mass(children: &[NodeId], weights: &[f64], values: &[DualValue]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, (c, w)) in children.iter().zip(weights).enumerate() {
        let m = w * values[c.0].likelihood;
        if m > best.1 {
            best = (k, m);
        }
    }
    best.0
}

fn check_record(model: &RspmnModel, episode: &[Step]) -> Result<()> {
    if episode.is_empty() {
        return Err(Error::EmptyData("episode with no steps".into()));
    }
    for step in episode {
        if step.values.len() != model.num_vars() {
            return Err(Error::Malformed("record does not match the model's variables".into()));
        }
        for (i, v) in model.variables.iter().enumerate() {
            if v.kind == VarKind::Utility {
                continue;
            }
            let card = v.cardinality.expect("discrete variable");
            if step.values[i] >= card {
                return Err(Error::ValueOutOfRange { var: i, value: step.values[i], cardinality: card as usize });
            }
        }
    }
    Ok(())
}

/// Counts of one pass over every episode, merged from parallel workers.
pub fn count_pass(model: &RspmnModel, data: &SequenceDataset) -> Result<HardEmState> {
    let mask = bottom_prune_mask(model.template.network());
    let chunk = (data.episodes.len() / (rayon::current_num_threads() * 4)).max(64);
    let parts: Vec<Result<HardEmState>> = data
        .episodes
        .par_chunks(chunk)
        .map(|eps| {
            let mut state = HardEmState::new(model);
            let mut scratch = Scratch::new(model);
            for ep in eps {
                state.process(model, &mask, ep, &mut scratch)?;
            }
            Ok(state)
        })
        .collect();
    let mut total = HardEmState::new(model);
    for part in parts {
        let part = part?;
        total.template.add(&part.template);
        total.top.add(&part.top);
        total.records += part.records;
        total.skipped += part.skipped;
    }
    Ok(total)
}

/// What one weight update changed.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct UpdateSummary {
    pub visited_sums: usize,
    pub pruned_edges: usize,
    pub removed_nodes: usize,
    pub max_weight_change: f64,
}

/// Sets every visited template sum's weights to its count frequencies, drops
/// zero-count children and unreferenced nodes, and re-checks soundness.
pub fn apply_counts(template: &TemplateNetwork, counts: &SumCounts, smoothing: f64) -> Result<(TemplateNetwork, UpdateSummary)> {
    let net = template.network();
    let (nodes, mut summary) = reweighted_nodes(net, counts, smoothing);
    let before = net.len();
    let (compact, map) = Network::new(nodes, net.roots().to_vec())?.compact();
    summary.removed_nodes = before - compact.len();
    let mut leaves = Vec::new();
    let mut bijection = Vec::new();
    for (&leaf, &target) in template.latent_leaves().iter().zip(template.bijection()) {
        if let Some(new) = map[leaf.0] {
            leaves.push(new);
            bijection.push(target);
        }
    }
    let updated = TemplateNetwork::new(compact, leaves, bijection)?;
    let report = check_template_sound(&updated);
    if !report.all_pass() {
        return Err(Error::Invariant(format!("template unsound after weight update:\n{report}")));
    }
    Ok((updated, summary))
}

/// Nodes of `net` with every visited sum set to its count frequencies and its
/// zero-weight children dropped; node ids are unchanged.
pub fn reweighted_nodes(net: &Network, counts: &SumCounts, smoothing: f64) -> (Vec<NodeKind>, UpdateSummary) {
    let mut summary = UpdateSummary::default();
    let mut nodes: Vec<NodeKind> = net.nodes().to_vec();
    for (i, node) in nodes.iter_mut().enumerate() {
        let NodeKind::Sum { children, weights } = node else { continue };
        let visits = counts.visits[i];
        if visits == 0 {
            continue;
        }
        summary.visited_sums += 1;
        let c = &counts.edges[i];
        let total = visits as f64 + smoothing * c.len() as f64;
        let fresh: Vec<f64> = c.iter().map(|&n| (n as f64 + smoothing) / total).collect();
        for (old, new) in weights.iter().zip(&fresh) {
            summary.max_weight_change = summary.max_weight_change.max((old - new).abs());
        }
        let keep: Vec<bool> = fresh.iter().map(|&w| w > 0.0).collect();
        summary.pruned_edges += keep.iter().filter(|k| !**k).count();
        *weights = fresh;
        let mut k = 0;
        let mut kept_children = Vec::new();
        let mut kept_weights = Vec::new();
        for (&ch, &w) in children.iter().zip(weights.iter()) {
            if keep[k] {
                kept_children.push(ch);
                kept_weights.push(w);
            }
            k += 1;
        }
        *children = kept_children;
        *weights = kept_weights;
    }
    (nodes, summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean per-record log-likelihood (utilities excluded) after the update.
    pub log_likelihood: f64,
    pub skipped_records: usize,
    pub template_nodes: usize,
    pub update: UpdateSummary,
}

/// Refines the template's sum weights by hard EM. Top-network weights are left
/// as they are.
pub fn hard_em_refine(model: &RspmnModel, data: &SequenceDataset, params: &EmParams) -> Result<(RspmnModel, Vec<EpochReport>)> {
    if !(params.count_smoothing >= 0.0 && params.count_smoothing.is_finite()) {
        return Err(Error::Hyperparameter("count smoothing must be a finite nonnegative number".into()));
    }
    if data.variables != model.variables {
        return Err(Error::Malformed("dataset variables differ from the model's".into()));
    }
    let mut current = model.clone();
    let mut reports = Vec::new();
    for epoch in 1..=params.epochs {
        let state = count_pass(&current, data)?;
        let (template, update) = apply_counts(&current.template, &state.template, params.count_smoothing)?;
        current = RspmnModel::new(current.variables.clone(), current.order.clone(), current.top.clone(), template)?;
        let (ll, _) = crate::evaluator::log_likelihood(&current, data)?;
        let stop = update.max_weight_change <= WEIGHT_TOL && update.pruned_edges == 0;
        reports.push(EpochReport {
            epoch,
            log_likelihood: ll,
            skipped_records: state.skipped,
            template_nodes: current.template.len(),
            update,
        });
        if stop {
            break;
        }
    }
    Ok((current, reports))
}
