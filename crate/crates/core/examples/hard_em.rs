//! Hard-EM refinement of an initial template, epoch by epoch.

use rspmn::builder::{hard_em_refine, learn_rspmn_staged, EmParams, RspmnParams};
use rspmn::envs::{generate_dataset, GridSpec};

fn main() -> rspmn::Result<()> {
    let spec = GridSpec::slippery_3x3();
    let data = generate_dataset(&spec, 5_000, 9, true)?;
    let learned = learn_rspmn_staged(&data, &spec.order(), &RspmnParams::default())?;

    let params = EmParams { epochs: 5, ..EmParams::default() };
    let (_, epochs) = hard_em_refine(&learned.initial, &data, &params)?;
    for e in &epochs {
        println!(
            "epoch {}: ll {:.4}, skipped {}, nodes {}, pruned edges {}, max weight change {:.2e}",
            e.epoch, e.log_likelihood, e.skipped_records, e.template_nodes, e.update.pruned_edges, e.update.max_weight_change
        );
    }
    Ok(())
}
