//! Random sound models, episodes sampled from them, and a model relearned
//! from those episodes.

use rspmn::builder::learn_rspmn;
use rspmn::evaluator::log_likelihood;
use rspmn::fuzz::{random_model, sample_episodes, FuzzParams};
use rspmn::validity::verify_unfolded;

fn main() -> rspmn::Result<()> {
    let p = FuzzParams { state_vars: 2, max_roots: 3, ..FuzzParams::default() };
    let truth = random_model(17, &p)?;
    println!("generator: {} template nodes, unfolds valid: {}", truth.template.len(), verify_unfolded(&truth, 3)?.passed());

    let data = sample_episodes(&truth, 1, 4_000, 4)?;
    let relearned = learn_rspmn(&data, &p.order()?, &Default::default())?;
    let (ll_truth, _) = log_likelihood(&truth, &data)?;
    let (ll_learned, floored) = log_likelihood(&relearned, &data)?;
    println!("mean log-likelihood: generator {ll_truth:.4}, relearned {ll_learned:.4} ({floored} floored records)");
    Ok(())
}
