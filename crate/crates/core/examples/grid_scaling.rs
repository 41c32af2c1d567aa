//! Larger grids: learn from 100K random episodes, then compare MEU, rollout
//! reward and policy with value iteration.

use std::time::Instant;

use rspmn::builder::{learn_rspmn_staged, RspmnParams};
use rspmn::envs::{
    generate_dataset, grid_to_mdp, policy_deviation, reachable_nonterminal, rollout_policy, rspmn_action,
    value_iteration, GridSpec,
};
use rspmn::evaluator::evaluate_meu;

fn run(name: &str, spec: &GridSpec, episodes: usize) -> rspmn::Result<()> {
    let start = Instant::now();
    let data = generate_dataset(spec, episodes, 11, true)?;
    let learned = learn_rspmn_staged(&data, &spec.order(), &RspmnParams::default())?;
    let model = &learned.model;
    let mdp = grid_to_mdp(spec)?;
    let vi = value_iteration(&mdp, spec.horizon);
    let table = evaluate_meu(model, spec.horizon, Some(&spec.evidence(spec.start)))?;
    let s0 = spec.state_of(spec.start);
    let rollout = rollout_policy(spec, |s, k| rspmn_action(spec, model, &table, s, k), 10_000, 5)?;
    let states = reachable_nonterminal(spec, &mdp);
    let ours: Vec<u32> = (0..mdp.num_states)
        .map(|s| if states.contains(&s) { rspmn_action(spec, model, &table, s, spec.horizon).unwrap_or(0) } else { 0 })
        .collect();
    let theirs: Vec<u32> = (0..mdp.num_states).map(|s| vi.action(spec.horizon, s)).collect();
    println!(
        "{name}: optimal {:.4}  meu {:.4}  rollout {:.4}  delta {:.1}%  nodes ({}, {})  {:.1}s",
        vi.value(spec.horizon, s0),
        table.meu,
        rollout.mean,
        policy_deviation(&ours, &theirs, &states),
        model.top.len(),
        model.template.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn main() -> rspmn::Result<()> {
    run("3x3", &GridSpec::grid_3x3(), 100_000)?;
    run("slippery 3x3", &GridSpec::slippery_3x3(), 100_000)?;
    Ok(())
}
