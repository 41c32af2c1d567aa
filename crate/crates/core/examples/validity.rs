//! Validity conditions on a learned network, a broken copy of it, and the
//! unfolded networks of a learned model.

use rspmn::builder::learn_rspmn;
use rspmn::envs::{generate_dataset, GridSpec};
use rspmn::validity::{check_spmn_valid, check_template_sound, verify_unfolded};
use rspmn::{Network, NodeKind};

fn main() -> rspmn::Result<()> {
    let spec = GridSpec::grid_2x2();
    let data = generate_dataset(&spec, 5_000, 11, true)?;
    let model = learn_rspmn(&data, &spec.order(), &Default::default())?;

    let sound = check_template_sound(&model.template);
    println!("template sound: {}", sound.all_pass());

    let check = verify_unfolded(&model, 4)?;
    for (steps, report) in &check.unfolded {
        println!("unfolded {steps} steps: {}", if report.all_pass() { "valid" } else { "invalid" });
    }

    // product whose children share a variable
    let unfolded = rspmn::validity::unfold(&model, 1)?;
    let (mut nodes, roots) = unfolded.into_parts();
    let leaves: Vec<_> = (0..nodes.len())
        .filter(|&i| matches!(nodes[i], NodeKind::Categorical { var: 0, .. }))
        .take(2)
        .map(rspmn::NodeId)
        .collect();
    let bad = rspmn::NodeId(nodes.len());
    nodes.push(NodeKind::Product { children: leaves });
    let mut roots = roots;
    roots.push(bad);
    let broken = Network::new(nodes, roots)?;
    let report = check_spmn_valid(&broken);
    println!("broken: failures {:?}, first offender {:?}", report.failures(), report.first_offender());
    Ok(())
}
