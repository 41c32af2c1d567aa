mod common;

use common::{fuzz_params, rel_close};
use proptest::prelude::*;
use rspmn::eval::evaluate_into;
use rspmn::evaluator::{evaluate_meu, extract_policy, meu_via_unfold};
use rspmn::fuzz::random_model;
use rspmn::io::{model_from_json, model_to_json};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rspmn::validity::check_spmn_valid;
use rspmn::{
    evaluate_bottom_up, NodeId, DualValue, EvalOptions, Evaluation, Evidence, Network, NodeKind, RspmnModel, TemplateNetwork,
};

fn map_utilities(model: &RspmnModel, f: impl Fn(f64) -> f64) -> RspmnModel {
    let tpl = &model.template;
    let nodes = tpl
        .network()
        .nodes()
        .iter()
        .map(|n| match n {
            NodeKind::Utility { var, value } => NodeKind::Utility { var: *var, value: f(*value) },
            other => other.clone(),
        })
        .collect();
    let net = Network::new(nodes, tpl.network().roots().to_vec()).unwrap();
    let template = TemplateNetwork::new(net, tpl.latent_leaves().to_vec(), tpl.bijection().to_vec()).unwrap();
    RspmnModel::new(model.variables.clone(), model.order.clone(), model.top.clone(), template).unwrap()
}

fn state_evidence(model: &RspmnModel, values: &[u32]) -> Evidence {
    let mut ev = Evidence::new(model.num_vars());
    for (&s, &v) in model.state_vars().iter().zip(values) {
        ev.set(s, v % model.variables[s].cardinality.unwrap());
    }
    ev
}

/// Arbitrary small DAG over state vars 0..3, decisions 0..2 and utility 4;
/// not necessarily valid.
fn random_dag(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<NodeKind> = Vec::new();
    for _ in 0..rng.gen_range(3..6) {
        nodes.push(if rng.gen_bool(0.8) {
            NodeKind::Categorical { var: rng.gen_range(0..4), probs: vec![0.5, 0.5] }
        } else {
            NodeKind::Utility { var: 4, value: 1.0 }
        });
    }
    for _ in 0..rng.gen_range(3..10) {
        let k = rng.gen_range(1..4).min(nodes.len());
        let mut children: Vec<NodeId> = Vec::new();
        while children.len() < k {
            let c = NodeId(rng.gen_range(0..nodes.len()));
            if !children.contains(&c) {
                children.push(c);
            }
        }
        nodes.push(match rng.gen_range(0..3) {
            0 => NodeKind::Sum { weights: vec![1.0 / k as f64; k], children },
            1 => NodeKind::Product { children },
            _ => NodeKind::Max { decision: rng.gen_range(0..2), labels: (0..k as u32).collect(), children },
        });
    }
    let root = NodeId(nodes.len() - 1);
    Network::new(nodes, vec![root]).unwrap()
}

/// Variables met on some path below `id`, counting max decisions.
fn path_scope(net: &Network, id: NodeId, out: &mut std::collections::BTreeSet<usize>) {
    match &net[id] {
        NodeKind::Categorical { var, .. } | NodeKind::Utility { var, .. } => {
            out.insert(*var);
        }
        NodeKind::Max { decision, children, .. } => {
            out.insert(*decision);
            children.iter().for_each(|&c| path_scope(net, c, out));
        }
        n => n.children().iter().for_each(|&c| path_scope(net, c, out)),
    }
}

/// Whether some path strictly below `id` reaches a max node for `decision`.
fn path_has_max(net: &Network, id: NodeId, decision: usize) -> bool {
    net[id].children().iter().any(|&c| {
        matches!(&net[c], NodeKind::Max { decision: d, .. } if *d == decision) || path_has_max(net, c, decision)
    })
}

fn on_some_path(net: &Network, from: NodeId, to: NodeId) -> bool {
    from == to || net[from].children().iter().any(|&c| on_some_path(net, c, to))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn iterated_meu_matches_unfolded(seed in 0u64..100_000, h in 1usize..5) {
        let m = random_model(seed, &fuzz_params(seed)).unwrap();
        let a = evaluate_meu(&m, h, None).unwrap().meu;
        let b = meu_via_unfold(&m, h, None).unwrap();
        prop_assert!(rel_close(a, b, 1e-9), "{a} vs {b}");
    }

    #[test]
    fn utility_shift_adds_horizon_times_shift(seed in 0u64..100_000, h in 1usize..6, c in -5.0f64..5.0) {
        let m = random_model(seed, &fuzz_params(seed)).unwrap();
        let shifted = map_utilities(&m, |u| u + c);
        let a = evaluate_meu(&m, h, None).unwrap().meu;
        let b = evaluate_meu(&shifted, h, None).unwrap().meu;
        prop_assert!(rel_close(b, a + h as f64 * c, 1e-9), "{b} vs {a} + {h}*{c}");
    }

    #[test]
    fn utility_scaling_scales_meu(seed in 0u64..100_000, h in 1usize..6, k in 0.1f64..10.0) {
        let m = random_model(seed, &fuzz_params(seed)).unwrap();
        let scaled = map_utilities(&m, |u| u * k);
        let a = evaluate_meu(&m, h, None).unwrap().meu;
        let b = evaluate_meu(&scaled, h, None).unwrap().meu;
        prop_assert!(rel_close(b, a * k, 1e-9), "{b} vs {a}*{k}");
    }

    #[test]
    fn fixing_a_decision_never_beats_meu(seed in 0u64..100_000, h in 1usize..5, state in prop::collection::vec(0u32..3, 3)) {
        let m = random_model(seed, &fuzz_params(seed)).unwrap();
        let ev = state_evidence(&m, &state);
        let best = evaluate_meu(&m, h, Some(&ev)).unwrap().meu;
        let d = m.decision_vars()[0];
        for v in 0..m.variables[d].cardinality.unwrap() {
            let mut fixed = ev.clone();
            fixed.set(d, v);
            let meu = evaluate_meu(&m, h, Some(&fixed)).unwrap().meu;
            prop_assert!(meu <= best + 1e-9 * best.abs().max(1.0), "decision {v}: {meu} > {best}");
        }
        let table = evaluate_meu(&m, h, None).unwrap();
        let policy = extract_policy(&m, &table, &ev).unwrap();
        prop_assert!(policy.value_of(d).is_some());
    }

    #[test]
    fn json_round_trip_is_exact(seed in 0u64..100_000) {
        let m = random_model(seed, &fuzz_params(seed)).unwrap();
        let text = model_to_json(&m).unwrap();
        let back = model_from_json(&text).unwrap();
        prop_assert_eq!(model_to_json(&back).unwrap(), text);
        prop_assert_eq!(back.template.network().nodes(), m.template.network().nodes());
        prop_assert_eq!(evaluate_meu(&back, 3, None).unwrap(), evaluate_meu(&m, 3, None).unwrap());
    }

    #[test]
    fn reused_buffers_match_fresh_evaluation(
        seed in 0u64..100_000,
        evidence in prop::collection::vec(prop::option::of(0u32..2), 1..6),
    ) {
        let a = random_model(seed, &fuzz_params(seed)).unwrap();
        let b = random_model(seed + 1, &fuzz_params(seed + 1)).unwrap();
        let mut buf = Evaluation::default();
        for m in [&a, &b, &a] {
            let net = m.template.network();
            let latent = vec![DualValue::new(0.5, 1.0); net.roots().len()];
            let mut ev = Evidence::new(m.num_vars());
            for (var, v) in evidence.iter().enumerate().take(m.num_vars() - 1) {
                if let Some(v) = v {
                    ev.set(var, *v);
                }
            }
            for opts in [EvalOptions::meu(), EvalOptions::likelihood()] {
                evaluate_into(net, &ev, Some(&latent), opts, &mut buf).unwrap();
                let fresh = evaluate_bottom_up(net, &ev, Some(&latent), opts).unwrap();
                prop_assert_eq!(&buf.values, &fresh.values);
                prop_assert_eq!(&buf.choices, &fresh.choices);
                prop_assert_eq!(buf.visits, net.len());
            }
        }
    }

    #[test]
    fn structural_checks_match_path_enumeration(seed in 0u64..1_000_000) {
        let net = random_dag(seed);
        let report = check_spmn_valid(&net);
        let scope = |id: NodeId| {
            let mut s = std::collections::BTreeSet::new();
            path_scope(&net, id, &mut s);
            s
        };
        let (mut sum, mut dec, mut maxc, mut maxu) = (vec![], vec![], vec![], vec![]);
        for i in 0..net.len() {
            let id = NodeId(i);
            if !on_some_path(&net, net.root(), id) {
                continue;
            }
            let scopes: Vec<_> = net[id].children().iter().map(|&c| scope(c)).collect();
            let same = scopes.windows(2).all(|w| w[0] == w[1]);
            match &net[id] {
                NodeKind::Sum { .. } if !same => sum.push(id),
                NodeKind::Product { .. } => {
                    let overlap = scopes.iter().enumerate().any(|(a, x)| scopes[a + 1..].iter().any(|y| !x.is_disjoint(y)));
                    if overlap {
                        dec.push(id);
                    }
                }
                NodeKind::Max { decision, .. } => {
                    if !same {
                        maxc.push(id);
                    }
                    if path_has_max(&net, id, *decision) {
                        maxu.push(id);
                    }
                }
                _ => {}
            }
        }
        prop_assert_eq!(report.sum_complete, Some(sum));
        prop_assert_eq!(report.decomposable, Some(dec));
        prop_assert_eq!(report.max_complete, Some(maxc));
        prop_assert_eq!(report.max_unique, Some(maxu));
    }
}
