//! Learn a two-step network from wrapped episodes and look at its shape.

use rspmn::data::wrap_two_step;
use rspmn::envs::{generate_dataset, GridSpec};
use rspmn::structure::{learn_spmn, LearnParams};
use rspmn::validity::check_spmn_valid;

fn main() -> rspmn::Result<()> {
    let spec = GridSpec::grid_3x3();
    let data = generate_dataset(&spec, 5_000, 5, true)?;
    let table = wrap_two_step(&data)?;
    println!("{} two-step rows over {} columns", table.len(), table.num_columns());

    for min_rows in [4, 200, 2000] {
        let hp = LearnParams { min_rows, ..LearnParams::default() };
        let net = learn_spmn(&table, &data.variables, &spec.order(), &hp)?;
        let mut counts = std::collections::BTreeMap::new();
        for n in net.nodes() {
            *counts.entry(n.name()).or_insert(0) += 1;
        }
        println!("min_rows {min_rows}: {} nodes {:?}, valid {}", net.len(), counts, check_spmn_valid(&net).all_pass());
    }
    Ok(())
}
