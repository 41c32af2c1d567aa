//! Read episodes from CSV, learn, save the model as JSON and load it back.

use rspmn::builder::learn_rspmn;
use rspmn::envs::{generate_dataset, GridSpec};
use rspmn::evaluator::evaluate_meu;
use rspmn::io::{load_model, read_dataset, save_model, OrderSpec};

fn main() -> rspmn::Result<()> {
    let spec = GridSpec::grid_2x2();
    let mut csv = Vec::new();
    generate_dataset(&spec, 2_000, 4, true)?.write_csv(&mut csv)?;
    println!("{}", String::from_utf8_lossy(&csv).lines().take(4).collect::<Vec<_>>().join("\n"));

    let order = OrderSpec::parse(r#"[{"info": ["X", "Y"]}, {"decision": "A"}]"#)?;
    let (data, partial) = read_dataset(csv.as_slice(), &order)?;
    println!("{} episodes, {} steps", data.episodes.len(), data.num_steps());

    let model = learn_rspmn(&data, &partial, &Default::default())?;
    let path = std::env::temp_dir().join("rspmn_model_io.json");
    save_model(&model, &path)?;
    let loaded = load_model(&path)?;
    let h = loaded.metadata.horizon.unwrap_or(spec.horizon);
    println!(
        "saved {} bytes; meu h={h}: {:.6} before, {:.6} after",
        std::fs::metadata(&path)?.len(),
        evaluate_meu(&model, h, None)?.meu,
        evaluate_meu(&loaded, h, None)?.meu
    );
    Ok(())
}
