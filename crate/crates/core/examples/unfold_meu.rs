//! MEU by iterating the template against MEU of the explicitly unfolded
//! network, with and without evidence on the first step.

use rspmn::evaluator::{evaluate_meu, meu_via_unfold};
use rspmn::fuzz::{random_model, FuzzParams};
use rspmn::validity::unfold;
use rspmn::Evidence;

fn main() -> rspmn::Result<()> {
    let model = random_model(3, &FuzzParams::default())?;
    println!("template {} nodes, {} interface roots", model.template.len(), model.template.interface_roots().len());
    let mut state = Evidence::new(model.num_vars());
    state.set(model.state_vars()[0], 1);
    for h in 1..=6 {
        let iterated = evaluate_meu(&model, h, None)?.meu;
        let unfolded = meu_via_unfold(&model, h, None)?;
        let with_ev = evaluate_meu(&model, h, Some(&state))?.meu;
        let with_ev_unfolded = meu_via_unfold(&model, h, Some(&state))?;
        println!(
            "h={h}: {iterated:.6} vs {unfolded:.6}   S0=1: {with_ev:.6} vs {with_ev_unfolded:.6}   unfolded size {}",
            unfold(&model, h)?.len()
        );
    }
    Ok(())
}
