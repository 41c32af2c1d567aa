//! Learn a model from random play on the 2×2 grid and compare its MEU and
//! policy with value iteration.

use rspmn::builder::{learn_rspmn_staged, RspmnParams};
use rspmn::envs::{generate_dataset, grid_to_mdp, value_iteration, GridSpec};
use rspmn::evaluator::{evaluate_meu, extract_policy};

fn main() -> rspmn::Result<()> {
    let spec = GridSpec::grid_2x2();
    let data = generate_dataset(&spec, 10_000, 7, true)?;
    let learned = learn_rspmn_staged(&data, &spec.order(), &RspmnParams::default())?;
    let model = &learned.model;
    println!(
        "template nodes: {} -> {}, top nodes: {}",
        learned.report.initial_template_nodes, learned.report.final_template_nodes, learned.report.top_nodes
    );

    let vi = value_iteration(&grid_to_mdp(&spec)?, spec.horizon);
    let start = spec.evidence(spec.start);
    let table = evaluate_meu(model, spec.horizon, Some(&start))?;
    println!("MEU from {:?}: {:.4} (value iteration {:.4})", spec.start, table.meu, vi.value(spec.horizon, 0));

    for y in 0..spec.height {
        for x in 0..spec.width {
            if spec.is_terminal((x, y)) {
                continue;
            }
            let d = extract_policy(model, &table, &spec.evidence((x, y)))?;
            let s = spec.state_of((x, y));
            println!("({x},{y}): model {:?} vi {}", d.value_of(2), vi.action(spec.horizon, s));
        }
    }
    Ok(())
}
