//! The stages between a two-step network and a template: one-step
//! extraction, interface roots and latent wiring.

use rspmn::builder::{build_initial_template, discover_interface_roots, extract_one_step};
use rspmn::data::wrap_two_step;
use rspmn::envs::{generate_dataset, GridSpec};
use rspmn::structure::learn_spmn;
use rspmn::validity::check_template_sound;

fn main() -> rspmn::Result<()> {
    let spec = GridSpec::grid_2x2();
    let data = generate_dataset(&spec, 5_000, 2, true)?;
    let order = spec.order();
    let s2 = learn_spmn(&wrap_two_step(&data)?, &data.variables, &order, &Default::default())?;
    let s1 = extract_one_step(&s2, data.num_vars())?;
    let (ir, top) = discover_interface_roots(&s1, &[0, 1])?;
    let template = build_initial_template(&ir, &order.slot_of())?;
    println!("two-step {} nodes, one-step {}, interface network {}", s2.len(), s1.len(), ir.len());
    println!("{} interface roots, top network {} nodes", template.interface_roots().len(), top.len());
    println!("latent leaf -> root: {:?}", template.bijection());
    println!("sound: {}", check_template_sound(&template).all_pass());
    Ok(())
}
