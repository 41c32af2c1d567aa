#![allow(dead_code)]

use rspmn::builder::{learn_rspmn, RspmnParams};
use rspmn::envs::{generate_dataset, GridSpec};
use rspmn::fuzz::{random_episodes, random_model, FuzzParams};
use rspmn::validity::unfold;
use rspmn::{evaluate_bottom_up, EvalOptions, Evidence, RspmnModel};

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) + 1e-12
}

/// Varies state count, cardinalities and depth with the seed.
pub fn fuzz_params(seed: u64) -> FuzzParams {
    FuzzParams {
        state_vars: 1 + (seed % 3) as usize,
        state_cardinality: 2 + ((seed / 3) % 2) as u32,
        decision_cardinality: 2 + ((seed / 6) % 2) as u32,
        max_depth: 1 + ((seed / 12) % 2) as usize,
        ..FuzzParams::default()
    }
}

pub fn fuzz_corpus(n: u64) -> Vec<RspmnModel> {
    (0..n).map(|s| random_model(s, &fuzz_params(s)).expect("fuzzed model")).collect()
}

pub fn learned_grid(spec: &GridSpec, episodes: usize, seed: u64) -> RspmnModel {
    let data = generate_dataset(spec, episodes, seed, true).expect("dataset");
    learn_rspmn(&data, &spec.order(), &RspmnParams::default()).expect("learned model")
}

/// Models learned from grid play and from random processes over fuzzed
/// variable sets.
pub fn learned_corpus() -> Vec<(String, RspmnModel)> {
    let mut out = vec![
        ("2x2".to_string(), learned_grid(&GridSpec::grid_2x2(), 10_000, 1)),
        ("3x3".to_string(), learned_grid(&GridSpec::grid_3x3(), 20_000, 2)),
        ("slippery 3x3".to_string(), learned_grid(&GridSpec::slippery_3x3(), 20_000, 3)),
    ];
    for seed in 0..4 {
        let p = fuzz_params(seed);
        let data = random_episodes(seed, &p.variables(), 3000, 4).expect("episodes");
        let model = learn_rspmn(&data, &p.order().expect("order"), &RspmnParams::default()).expect("learned");
        out.push((format!("random process {seed}"), model));
    }
    out
}

/// Every assignment of `cards`, in odometer order.
pub fn assignments(cards: &[u32]) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for &c in cards {
        out = out.into_iter().flat_map(|a| (0..c).map(move |v| {
            let mut b = a.clone();
            b.push(v);
            b
        })).collect();
    }
    out
}

/// Brute-force total likelihood over every state trajectory of the unfolded
/// network with the decisions of each step fixed to `decisions[t]`.
pub fn total_likelihood(model: &RspmnModel, steps: usize, decisions: &[u32]) -> f64 {
    let net = unfold(model, steps).expect("unfold");
    let n = model.num_vars();
    let states = model.state_vars();
    let d = model.decision_vars()[0];
    let cards: Vec<u32> = (0..steps)
        .flat_map(|_| states.iter().map(|&s| model.variables[s].cardinality.unwrap()))
        .collect();
    let mut total = 0.0;
    for a in assignments(&cards) {
        let mut ev = Evidence::new(n * steps);
        for t in 0..steps {
            ev.set(d + t * n, decisions[t]);
            for (j, &s) in states.iter().enumerate() {
                ev.set(s + t * n, a[t * states.len() + j]);
            }
        }
        total += evaluate_bottom_up(&net, &ev, None, EvalOptions::likelihood()).unwrap().values[net.root().0].likelihood;
    }
    total
}
