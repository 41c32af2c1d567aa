//! Bottom-up evaluation in likelihood and MEU semantics.
//!
//! Both modes propagate a [`DualValue`]. Products multiply likelihoods and add
//! expected utilities; sums mix expected utilities by posterior mass. The two
//! modes differ only at max nodes: in [`Mode::Meu`] an unobserved decision
//! picks the child with the largest expected utility, while in
//! [`Mode::Likelihood`] max nodes are gated by the observed decision (or act
//! as an unweighted sum when the decision is unobserved).

use crate::error::{Error, Result};
use crate::graph::{DualValue, Network, OpKind, VarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Likelihood,
    Meu,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    Discrete(u32),
    Real(f64),
}

/// Partial assignment indexed by variable id. Ids beyond the stored length are unobserved.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evidence {
    values: Vec<Option<Observation>>,
}

impl Evidence {
    pub fn new(num_vars: usize) -> Self {
        Evidence { values: vec![None; num_vars] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().all(Option::is_none)
    }

    fn ensure(&mut self, var: VarId) {
        if var >= self.values.len() {
            self.values.resize(var + 1, None);
        }
    }

    pub fn set(&mut self, var: VarId, value: u32) -> &mut Self {
        self.ensure(var);
        self.values[var] = Some(Observation::Discrete(value));
        self
    }

    pub fn set_real(&mut self, var: VarId, value: f64) -> &mut Self {
        self.ensure(var);
        self.values[var] = Some(Observation::Real(value));
        self
    }

    pub fn unset(&mut self, var: VarId) -> &mut Self {
        if var < self.values.len() {
            self.values[var] = None;
        }
        self
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = None);
    }

    pub fn get(&self, var: VarId) -> Option<Observation> {
        self.values.get(var).copied().flatten()
    }

    pub fn discrete(&self, var: VarId) -> Option<u32> {
        match self.get(var) {
            Some(Observation::Discrete(v)) => Some(v),
            _ => None,
        }
    }

    /// Observed variables with their values.
    pub fn iter(&self) -> impl Iterator<Item = (VarId, Observation)> + '_ {
        self.values.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v)))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub mode: Mode,
    /// When set, utility leaves observed with a real value get likelihood 1 on
    /// a match and 0 otherwise. Only the hard-EM pass uses this.
    pub match_utility: bool,
    /// Missing latent inputs default to (1, 0) instead of erroring.
    pub default_latent: bool,
}

impl EvalOptions {
    pub fn likelihood() -> Self {
        EvalOptions { mode: Mode::Likelihood, match_utility: false, default_latent: true }
    }

    pub fn meu() -> Self {
        EvalOptions { mode: Mode::Meu, match_utility: false, default_latent: true }
    }
}

/// Per-node results of one bottom-up pass.
#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub values: Vec<DualValue>,
    /// Position of the child selected at each max node, when one was selected.
    pub choices: Vec<Option<usize>>,
    /// Number of nodes visited by the pass.
    pub visits: usize,
}

impl Evaluation {
    pub fn root_values(&self, network: &Network) -> Vec<DualValue> {
        network.roots().iter().map(|r| self.values[r.0]).collect()
    }
}

pub fn utility_matches(observed: f64, value: f64) -> bool {
    (observed - value).abs() <= 1e-9 * value.abs().max(1.0)
}

/// Evaluates every node of `network` once, children before parents.
///
/// `latent` supplies the value of each latent interface index; indices it
/// does not cover fall back to (1, 0) when `opts.default_latent` is set.
pub fn evaluate_bottom_up(
    network: &Network,
    evidence: &Evidence,
    latent: Option<&[DualValue]>,
    opts: EvalOptions,
) -> Result<Evaluation> {
    let mut out = Evaluation::default();
    evaluate_into(network, evidence, latent, opts, &mut out)?;
    Ok(out)
}

/// Same as [`evaluate_bottom_up`], reusing the buffers of `out`.
pub fn evaluate_into(
    network: &Network,
    evidence: &Evidence,
    latent: Option<&[DualValue]>,
    opts: EvalOptions,
    out: &mut Evaluation,
) -> Result<()> {
    let n = network.len();
    // every value slot is overwritten below
    out.values.resize(n, DualValue::ZERO);
    out.choices.clear();
    out.choices.resize(n, None);
    out.visits = 0;

    let flat = network.flat();
    let values = &mut out.values;
    for op in &flat.ops {
        let first = op.first as usize;
        let len = op.len as usize;
        let var = op.var as usize;
        let value = match op.kind {
            OpKind::Categorical => match evidence.get(var) {
                None => DualValue::ONE,
                Some(Observation::Discrete(v)) => {
                    if v >= op.len {
                        return Err(Error::ValueOutOfRange { var, value: v, cardinality: len });
                    }
                    DualValue::new(flat.params[first + v as usize], 0.0)
                }
                Some(Observation::Real(_)) => {
                    return Err(Error::Malformed(format!(
                        "real-valued evidence for discrete variable {var}"
                    )))
                }
            },
            OpKind::Utility => {
                let value = flat.params[first];
                let l = match (opts.match_utility, evidence.get(var)) {
                    (true, Some(Observation::Real(u))) => {
                        if utility_matches(u, value) {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    _ => 1.0,
                };
                DualValue::new(l, value)
            }
            OpKind::Latent => match latent.and_then(|l| l.get(var)) {
                Some(v) => *v,
                None if opts.default_latent => DualValue::ONE,
                None => return Err(Error::MissingLatentInput(var)),
            },
            OpKind::Product => {
                let mut l = 1.0;
                let mut eu = 0.0;
                for &c in &flat.children[first..first + len] {
                    let v = values[c as usize];
                    l *= v.likelihood;
                    eu += v.eu;
                }
                DualValue::new(l, eu)
            }
            OpKind::Sum => {
                let mut l = 0.0;
                let mut acc = 0.0;
                for (&c, w) in flat.children[first..first + len].iter().zip(&flat.weights[first..first + len]) {
                    let v = values[c as usize];
                    let mass = w * v.likelihood;
                    l += mass;
                    acc += mass * v.eu;
                }
                if l > 0.0 {
                    DualValue::new(l, acc / l)
                } else {
                    DualValue::ZERO
                }
            }
            OpKind::Max => {
                let children = &flat.children[first..first + len];
                match evidence.get(var) {
                    Some(Observation::Discrete(d)) => {
                        match flat.labels[first..first + len].iter().position(|&x| x == d) {
                            Some(k) => {
                                out.choices[op.node as usize] = Some(k);
                                values[children[k] as usize]
                            }
                            None => DualValue::ZERO,
                        }
                    }
                    Some(Observation::Real(_)) => {
                        return Err(Error::Malformed(format!(
                            "real-valued evidence for decision variable {var}"
                        )))
                    }
                    None => match opts.mode {
                        Mode::Meu => {
                            let mut best: Option<(usize, DualValue)> = None;
                            for (k, &c) in children.iter().enumerate() {
                                let v = values[c as usize];
                                if v.likelihood <= 0.0 {
                                    continue;
                                }
                                // strict comparison keeps the lowest index on ties
                                if best.map_or(true, |(_, b)| v.eu > b.eu) {
                                    best = Some((k, v));
                                }
                            }
                            match best {
                                Some((k, v)) => {
                                    out.choices[op.node as usize] = Some(k);
                                    v
                                }
                                None => DualValue::ZERO,
                            }
                        }
                        Mode::Likelihood => {
                            let mut l = 0.0;
                            let mut acc = 0.0;
                            for &c in children {
                                let v = values[c as usize];
                                l += v.likelihood;
                                acc += v.likelihood * v.eu;
                            }
                            if l > 0.0 {
                                DualValue::new(l, acc / l)
                            } else {
                                DualValue::ZERO
                            }
                        }
                    },
                }
            }
        };
        values[op.node as usize] = value;
    }
    out.visits = flat.ops.len();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeId, NodeKind};

    fn cat(var: VarId, probs: &[f64]) -> NodeKind {
        NodeKind::Categorical { var, probs: probs.to_vec() }
    }

    #[test]
    fn sum_is_weighted_average() {
        // leaves give likelihoods 0.2 and 0.4 under evidence X=0
        let net = Network::new(
            vec![
                cat(0, &[0.2, 0.8]),
                cat(0, &[0.4, 0.6]),
                NodeKind::Sum { children: vec![NodeId(0), NodeId(1)], weights: vec![0.5, 0.5] },
            ],
            vec![NodeId(2)],
        )
        .unwrap();
        let mut ev = Evidence::new(1);
        ev.set(0, 0);
        let out = evaluate_bottom_up(&net, &ev, None, EvalOptions::likelihood()).unwrap();
        let root = out.values[2];
        assert!((root.likelihood - 0.3).abs() < 1e-15);
        assert_eq!(root.eu, 0.0);
    }

    #[test]
    fn max_over_constants_picks_largest() {
        let net = Network::new(
            vec![
                NodeKind::Utility { var: 1, value: 3.0 },
                NodeKind::Utility { var: 1, value: -1.0 },
                NodeKind::Max { decision: 0, children: vec![NodeId(0), NodeId(1)], labels: vec![4, 7] },
            ],
            vec![NodeId(2)],
        )
        .unwrap();
        let out = evaluate_bottom_up(&net, &Evidence::default(), None, EvalOptions::meu()).unwrap();
        assert_eq!(out.values[2], DualValue { likelihood: 1.0, eu: 3.0 });
        assert_eq!(out.choices[2], Some(0));
    }

    #[test]
    fn product_adds_utilities() {
        let net = Network::new(
            vec![
                cat(0, &[0.5, 0.5]),
                NodeKind::Utility { var: 2, value: 2.0 },
                NodeKind::Product { children: vec![NodeId(0), NodeId(1)] },
                cat(1, &[0.4, 0.6]),
                NodeKind::Utility { var: 3, value: 3.0 },
                NodeKind::Product { children: vec![NodeId(3), NodeId(4)] },
                NodeKind::Product { children: vec![NodeId(2), NodeId(5)] },
            ],
            vec![NodeId(6)],
        )
        .unwrap();
        let mut ev = Evidence::new(2);
        ev.set(0, 1).set(1, 0);
        let out = evaluate_bottom_up(&net, &ev, None, EvalOptions::meu()).unwrap();
        assert_eq!(out.values[2], DualValue { likelihood: 0.5, eu: 2.0 });
        assert_eq!(out.values[5], DualValue { likelihood: 0.4, eu: 3.0 });
        let root = out.values[6];
        assert!((root.likelihood - 0.2).abs() < 1e-15);
        assert_eq!(root.eu, 5.0);
    }

    #[test]
    fn max_ties_prefer_lowest_index() {
        let net = Network::new(
            vec![
                NodeKind::Utility { var: 1, value: 2.0 },
                NodeKind::Utility { var: 1, value: 2.0 },
                NodeKind::Max { decision: 0, children: vec![NodeId(0), NodeId(1)], labels: vec![3, 1] },
            ],
            vec![NodeId(2)],
        )
        .unwrap();
        let out = evaluate_bottom_up(&net, &Evidence::default(), None, EvalOptions::meu()).unwrap();
        assert_eq!(out.choices[2], Some(0));
    }

    #[test]
    fn observed_decision_gates_max() {
        let net = Network::new(
            vec![
                NodeKind::Utility { var: 1, value: 5.0 },
                NodeKind::Utility { var: 1, value: 1.0 },
                NodeKind::Max { decision: 0, children: vec![NodeId(0), NodeId(1)], labels: vec![0, 1] },
            ],
            vec![NodeId(2)],
        )
        .unwrap();
        let mut ev = Evidence::new(2);
        ev.set(0, 1);
        for opts in [EvalOptions::meu(), EvalOptions::likelihood()] {
            let out = evaluate_bottom_up(&net, &ev, None, opts).unwrap();
            assert_eq!(out.values[2], DualValue { likelihood: 1.0, eu: 1.0 });
        }
        ev.set(0, 9);
        let out = evaluate_bottom_up(&net, &ev, None, EvalOptions::meu()).unwrap();
        assert_eq!(out.values[2], DualValue::ZERO);
    }

    #[test]
    fn unobserved_decision_in_likelihood_mode_sums() {
        let net = Network::new(
            vec![
                cat(1, &[0.25, 0.75]),
                cat(1, &[0.5, 0.5]),
                NodeKind::Max { decision: 0, children: vec![NodeId(0), NodeId(1)], labels: vec![0, 1] },
            ],
            vec![NodeId(2)],
        )
        .unwrap();
        let mut ev = Evidence::new(2);
        ev.set(1, 0);
        let out = evaluate_bottom_up(&net, &ev, None, EvalOptions::likelihood()).unwrap();
        assert!((out.values[2].likelihood - 0.75).abs() < 1e-15);
    }

    #[test]
    fn latent_defaults_and_errors() {
        let net = Network::new(vec![NodeKind::Latent { index: 2 }], vec![NodeId(0)]).unwrap();
        let out = evaluate_bottom_up(&net, &Evidence::default(), None, EvalOptions::meu()).unwrap();
        assert_eq!(out.values[0], DualValue::ONE);
        let strict = EvalOptions { default_latent: false, ..EvalOptions::meu() };
        assert!(matches!(
            evaluate_bottom_up(&net, &Evidence::default(), None, strict),
            Err(Error::MissingLatentInput(2))
        ));
        let inputs = [DualValue::ONE, DualValue::ONE, DualValue { likelihood: 0.5, eu: 4.0 }];
        let out = evaluate_bottom_up(&net, &Evidence::default(), Some(&inputs), strict).unwrap();
        assert_eq!(out.values[0], inputs[2]);
    }

    #[test]
    fn out_of_range_evidence_errors() {
        let net = Network::new(vec![cat(0, &[0.5, 0.5])], vec![NodeId(0)]).unwrap();
        let mut ev = Evidence::new(1);
        ev.set(0, 2);
        assert!(matches!(
            evaluate_bottom_up(&net, &ev, None, EvalOptions::likelihood()),
            Err(Error::ValueOutOfRange { var: 0, value: 2, cardinality: 2 })
        ));
    }

    #[test]
    fn zero_likelihood_sum_has_zero_eu() {
        let net = Network::new(
            vec![
                cat(0, &[0.0, 1.0]),
                NodeKind::Utility { var: 1, value: 7.0 },
                NodeKind::Product { children: vec![NodeId(0), NodeId(1)] },
                NodeKind::Sum { children: vec![NodeId(2)], weights: vec![1.0] },
            ],
            vec![NodeId(3)],
        )
        .unwrap();
        let mut ev = Evidence::new(1);
        ev.set(0, 0);
        let out = evaluate_bottom_up(&net, &ev, None, EvalOptions::meu()).unwrap();
        assert_eq!(out.values[3], DualValue::ZERO);
        assert_eq!(out.values[2], DualValue::ZERO);
    }

    #[test]
    fn utility_matching_gates_likelihood() {
        let net = Network::new(vec![NodeKind::Utility { var: 0, value: -1.0 }], vec![NodeId(0)])
            .unwrap();
        let mut ev = Evidence::new(1);
        ev.set_real(0, -1.0);
        let opts = EvalOptions { match_utility: true, ..EvalOptions::likelihood() };
        assert_eq!(evaluate_bottom_up(&net, &ev, None, opts).unwrap().values[0].likelihood, 1.0);
        ev.set_real(0, 9.0);
        assert_eq!(evaluate_bottom_up(&net, &ev, None, opts).unwrap().values[0].likelihood, 0.0);
        let plain = evaluate_bottom_up(&net, &ev, None, EvalOptions::likelihood()).unwrap();
        assert_eq!(plain.values[0].likelihood, 1.0);
    }

    #[test]
    fn visits_every_node_once() {
        let net = Network::new(
            vec![
                cat(0, &[0.5, 0.5]),
                cat(1, &[0.5, 0.5]),
                NodeKind::Product { children: vec![NodeId(0), NodeId(1)] },
                NodeKind::Sum { children: vec![NodeId(2), NodeId(2)], weights: vec![0.5, 0.5] },
            ],
            vec![NodeId(3)],
        )
        .unwrap();
        let out = evaluate_bottom_up(&net, &Evidence::default(), None, EvalOptions::meu()).unwrap();
        assert_eq!(out.visits, net.len());
    }
}
