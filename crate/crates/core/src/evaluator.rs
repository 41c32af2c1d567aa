//! Maximum expected utility, policies and data log-likelihood.

use std::cell::RefCell;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::SequenceDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate_bottom_up, evaluate_into, EvalOptions, Evaluation, Evidence, Observation};
use crate::graph::{DualValue, NodeId, NodeKind, VarId};
use crate::model::RspmnModel;
use crate::validity::unfold_with_stats;

/// Largest unfolded network [`meu_via_unfold`] will build.
pub const UNFOLD_GUARD: usize = 1_000_000;

thread_local! {
    static SCRATCH: RefCell<Evaluation> = RefCell::new(Evaluation::default());
}

/// Root values of every template iteration plus the top-network result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeuTable {
    pub horizon: usize,
    /// `iterations[k]` holds the interface-root values after `k + 1` passes
    /// without evidence.
    pub iterations: Vec<Vec<DualValue>>,
    /// Top root value, with the step-0 evidence when given.
    pub top: DualValue,
    pub meu: f64,
}

impl fmt::Display for MeuTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "horizon: {}", self.horizon)?;
        for (k, roots) in self.iterations.iter().enumerate() {
            let vals: Vec<String> = roots.iter().map(|v| format!("({:.6}, {:.6})", v.likelihood, v.eu)).collect();
            writeln!(f, "iteration {}: {}", k + 1, vals.join(" "))?;
        }
        writeln!(f, "top likelihood: {:.6}", self.top.likelihood)?;
        write!(f, "meu: {:.6}", self.meu)
    }
}

fn check_evidence(model: &RspmnModel, evidence: &Evidence) -> Result<()> {
    if evidence.len() != model.num_vars() {
        return Err(Error::Malformed(format!(
            "evidence covers {} variables, the model has {}",
            evidence.len(),
            model.num_vars()
        )));
    }
    for (var, obs) in evidence.iter() {
        let meta = &model.variables[var];
        if let (Observation::Discrete(v), Some(card)) = (obs, meta.cardinality) {
            if v >= card {
                return Err(Error::ValueOutOfRange { var, value: v, cardinality: card as usize });
            }
        }
    }
    Ok(())
}

/// Iterates the template `horizon` times, feeding each pass's root values into
/// the next pass's latent leaves, then evaluates the top network.
pub fn evaluate_meu(model: &RspmnModel, horizon: usize, evidence: Option<&Evidence>) -> Result<MeuTable> {
    if horizon == 0 {
        return Err(Error::ZeroHorizon);
    }
    let tpl = model.template.network();
    let empty = Evidence::new(model.num_vars());
    if let Some(ev) = evidence {
        check_evidence(model, ev)?;
    }
    let mut iterations: Vec<Vec<DualValue>> = Vec::with_capacity(horizon);
    let first = SCRATCH.with(|scratch| -> Result<Vec<DualValue>> {
        let eval = &mut *scratch.borrow_mut();
        for _ in 0..horizon {
            let latent = iterations.last().map(Vec::as_slice);
            evaluate_into(tpl, &empty, latent, EvalOptions::meu(), eval)?;
            iterations.push(eval.root_values(tpl));
        }
        Ok(match evidence {
            Some(ev) => {
                let latent = (horizon >= 2).then(|| iterations[horizon - 2].as_slice());
                evaluate_into(tpl, ev, latent, EvalOptions::meu(), eval)?;
                eval.root_values(tpl)
            }
            None => iterations[horizon - 1].clone(),
        })
    })?;
    let top = model.top.network();
    let top_eval = evaluate_bottom_up(top, &empty, Some(&first), EvalOptions::meu())?;
    let value = top_eval.values[top.root().0];
    Ok(MeuTable { horizon, iterations, top: value, meu: value.eu })
}

/// MEU of the explicitly unfolded network.
pub fn meu_via_unfold(model: &RspmnModel, horizon: usize, evidence: Option<&Evidence>) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::ZeroHorizon);
    }
    let (net, _) = unfold_with_stats(model, horizon, UNFOLD_GUARD)?;
    let mut ev = Evidence::new(model.num_vars() * horizon);
    if let Some(e) = evidence {
        check_evidence(model, e)?;
        for (var, obs) in e.iter() {
            match obs {
                Observation::Discrete(v) => ev.set(var, v),
                Observation::Real(u) => ev.set_real(var, u),
            };
        }
    }
    let eval = evaluate_bottom_up(&net, &ev, None, EvalOptions::meu())?;
    Ok(eval.values[net.root().0].eu)
}

/// Decisions chosen by the top-down pass for one state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyDecision {
    /// (decision variable, value) in the order the pass met them.
    pub decisions: Vec<(VarId, u32)>,
    /// Interface root the pass entered.
    pub root: usize,
    /// Expected utility of that root under the state evidence.
    pub eu: f64,
    /// Top-network expected utility under the state evidence.
    pub meu: f64,
}

impl PolicyDecision {
    pub fn value_of(&self, var: VarId) -> Option<u32> {
        self.decisions.iter().find(|(v, _)| *v == var).map(|(_, d)| *d)
    }
}

/// Greedy decisions at `state` for the table's full horizon.
pub fn extract_policy(model: &RspmnModel, meu: &MeuTable, state: &Evidence) -> Result<PolicyDecision> {
    extract_policy_at(model, meu, state, meu.horizon)
}

/// Greedy decisions at `state` with `remaining` steps to go (at most the table's horizon).
pub fn extract_policy_at(model: &RspmnModel, meu: &MeuTable, state: &Evidence, remaining: usize) -> Result<PolicyDecision> {
    if remaining == 0 || remaining > meu.horizon {
        return Err(Error::Malformed(format!(
            "remaining horizon {remaining} outside 1..={}",
            meu.horizon
        )));
    }
    check_evidence(model, state)?;
    let tpl = model.template.network();
    let top = model.top.network();
    let latent = (remaining >= 2).then(|| meu.iterations[remaining - 2].as_slice());
    let eval = evaluate_bottom_up(tpl, state, latent, EvalOptions::meu())?;
    let roots = eval.root_values(tpl);
    let top_eval = evaluate_bottom_up(top, &Evidence::new(0), Some(&roots), EvalOptions::meu())?;
    let top_value = top_eval.values[top.root().0];
    if top_value.likelihood <= 0.0 {
        return Err(Error::NoSupport);
    }
    // top network down to one interface root
    let mut id = top.root();
    let root = loop {
        match &top[id] {
            NodeKind::Latent { index } => break *index,
            NodeKind::Sum { children, weights } => id = children[argmax_mass(children, weights, &top_eval.values)],
            NodeKind::Product { children } => {
                // a product in the top network joins several entry points; take the first
                id = children[0];
            }
            _ => return Err(Error::Invariant("unexpected node in the top network".into())),
        }
    };
    let mut decisions: Vec<(VarId, u32)> = Vec::new();
    let mut stack: Vec<NodeId> = vec![tpl.roots()[root]];
    while let Some(id) = stack.pop() {
        match &tpl[id] {
            NodeKind::Sum { children, weights } => {
                if eval.values[id.0].likelihood > 0.0 {
                    stack.push(children[argmax_mass(children, weights, &eval.values)]);
                }
            }
            NodeKind::Max { decision, children, labels } => {
                if let Some(k) = eval.choices[id.0] {
                    if !decisions.iter().any(|(v, _)| v == decision) {
                        decisions.push((*decision, labels[k]));
                    }
                    stack.push(children[k]);
                }
            }
            NodeKind::Product { children } => stack.extend(children.iter().rev()),
            _ => {}
        }
    }
    Ok(PolicyDecision { decisions, root, eu: roots[root].eu, meu: top_value.eu })
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

/// Mean per-episode natural-log likelihood with utilities excluded, and the
/// number of episodes whose likelihood was zero (floored at the smallest
/// positive double).
pub fn log_likelihood(model: &RspmnModel, data: &SequenceDataset) -> Result<(f64, usize)> {
    if data.episodes.is_empty() {
        return Err(Error::EmptyData("no episodes".into()));
    }
    if data.variables != model.variables {
        return Err(Error::Malformed("dataset variables differ from the model's".into()));
    }
    let tpl = model.template.network();
    let top = model.top.network();
    let per_record: Vec<Result<f64>> = data
        .episodes
        .par_iter()
        .map_init(
            || (Evaluation::default(), Evidence::new(model.num_vars())),
            |(eval, ev), episode| {
                let mut next: Option<Vec<DualValue>> = None;
                for t in (0..episode.len()).rev() {
                    ev.clear();
                    episode[t].write_evidence(&model.variables, 0, false, ev);
                    evaluate_into(tpl, ev, next.as_deref(), EvalOptions::likelihood(), eval)?;
                    next = Some(eval.root_values(tpl));
                }
                ev.clear();
                evaluate_into(top, ev, next.as_deref(), EvalOptions::likelihood(), eval)?;
                Ok(eval.values[top.root().0].likelihood)
            },
        )
        .collect();
    let mut total = 0.0;
    let mut floored = 0;
    for lik in per_record {
        let lik = lik?;
        if lik > 0.0 {
            total += lik.ln();
        } else {
            floored += 1;
            total += f64::MIN_POSITIVE.ln();
        }
    }
    Ok((total / data.episodes.len() as f64, floored))
}
