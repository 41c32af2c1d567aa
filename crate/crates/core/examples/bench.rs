//! Learn, evaluate and roll out on a grid, reported as a table and as JSON.

use rspmn::bench::{run_bench, BenchConfig};
use rspmn::envs::GridSpec;

fn main() -> rspmn::Result<()> {
    let mut config = BenchConfig::new(GridSpec::grid_2x2(), 10_000, 42);
    config.rollout_episodes = 2_000;
    let report = run_bench(&config)?;
    println!("{report}");
    println!("{}", report.deterministic_json()?);
    Ok(())
}
