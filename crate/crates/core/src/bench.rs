//! End-to-end benchmark on a grid: simulate, learn, evaluate, roll out and
//! compare with value iteration.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::builder::{learn_rspmn_staged, RspmnParams};
use crate::envs::{
    generate_dataset, grid_to_mdp, policy_deviation, reachable_nonterminal, rollout_policy, rspmn_action,
    value_iteration, GridSpec, RolloutStats,
};
use crate::error::Result;
use crate::evaluator::{evaluate_meu, log_likelihood};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub grid: GridSpec,
    pub episodes: usize,
    pub seed: u64,
    pub rollout_episodes: usize,
    /// Keep episodes at full length after a terminal cell is entered.
    pub pad_terminal: bool,
    #[serde(default)]
    pub params: RspmnParams,
}

impl BenchConfig {
    pub fn new(grid: GridSpec, episodes: usize, seed: u64) -> Self {
        BenchConfig { grid, episodes, seed, rollout_episodes: 10_000, pad_terminal: true, params: RspmnParams::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BenchTimings {
    pub simulate_secs: f64,
    pub initial_template_secs: f64,
    pub final_template_secs: f64,
    pub meu_eval_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub horizon: usize,
    pub optimal_meu: f64,
    pub rspmn_meu: f64,
    pub rollout: RolloutStats,
    /// Percentage of reachable non-terminal states where the model's action
    /// differs from value iteration's.
    pub delta_pct: f64,
    pub compared_states: usize,
    pub mean_ll: f64,
    pub floored_records: usize,
    pub interface_roots: usize,
    pub top_nodes: usize,
    pub initial_template_nodes: usize,
    pub template_nodes: usize,
    pub timings: BenchTimings,
}

impl BenchReport {
    /// Report as JSON without the timing fields.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timings");
        }
        Ok(serde_json::to_string_pretty(&v)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Node counts as `(top, template)`.
    pub fn sizes(&self) -> String {
        format!("({}, {})", self.top_nodes, self.template_nodes)
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = &self.config.grid;
        writeln!(f, "grid {}x{}  episodes {}  horizon {}  seed {}", g.width, g.height, self.config.episodes, self.horizon, self.config.seed)?;
        writeln!(f, "{:<28}{:>14}", "optimal MEU (VI)", format!("{:.4}", self.optimal_meu))?;
        writeln!(f, "{:<28}{:>14}", "RSPMN MEU", format!("{:.4}", self.rspmn_meu))?;
        writeln!(f, "{:<28}{:>14}", "average reward", format!("{:.4} ± {:.4}", self.rollout.mean, self.rollout.std_dev))?;
        writeln!(f, "{:<28}{:>14}", "Δ%", format!("{:.1} ({} states)", self.delta_pct, self.compared_states))?;
        writeln!(f, "{:<28}{:>14}", "LL", format!("{:.4}", self.mean_ll))?;
        writeln!(f, "{:<28}{:>14}", "|RSPMN| (top, template)", self.sizes())?;
        writeln!(f, "{:<28}{:>14}", "initial template nodes", self.initial_template_nodes)?;
        writeln!(f, "{:<28}{:>14}", "interface roots", self.interface_roots)?;
        writeln!(f, "{:<28}{:>14}", "initial template time", format!("{:.3}s", self.timings.initial_template_secs))?;
        writeln!(f, "{:<28}{:>14}", "final template time", format!("{:.3}s", self.timings.final_template_secs))?;
        write!(f, "{:<28}{:>14}", "MEU eval time", format!("{:.3}s", self.timings.meu_eval_secs))
    }
}

pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    let total = Instant::now();
    let spec = &config.grid;
    let mdp = grid_to_mdp(spec)?;
    let horizon = spec.horizon;

    let t = Instant::now();
    let data = generate_dataset(spec, config.episodes, config.seed, config.pad_terminal)?;
    let simulate_secs = t.elapsed().as_secs_f64();

    let learned = learn_rspmn_staged(&data, &spec.order(), &config.params)?;
    let model = &learned.model;

    let t = Instant::now();
    let table = evaluate_meu(model, horizon, Some(&spec.evidence(spec.start)))?;
    let meu_eval_secs = t.elapsed().as_secs_f64();

    let vi = value_iteration(&mdp, horizon);
    let start = spec.state_of(spec.start);
    let rollout = rollout_policy(spec, |s, k| rspmn_action(spec, model, &table, s, k), config.rollout_episodes, config.seed)?;

    let states = reachable_nonterminal(spec, &mdp);
    let mut ours = vec![0u32; mdp.num_states];
    for &s in &states {
        ours[s] = rspmn_action(spec, model, &table, s, horizon)?;
    }
    let theirs: Vec<u32> = (0..mdp.num_states).map(|s| vi.action(horizon, s)).collect();
    let (mean_ll, floored) = log_likelihood(model, &data)?;

    Ok(BenchReport {
        config: config.clone(),
        horizon,
        optimal_meu: vi.value(horizon, start),
        rspmn_meu: table.meu,
        rollout,
        delta_pct: policy_deviation(&ours, &theirs, &states),
        compared_states: states.len(),
        mean_ll,
        floored_records: floored,
        interface_roots: learned.report.interface_roots,
        top_nodes: model.top.len(),
        initial_template_nodes: learned.report.initial_template_nodes,
        template_nodes: model.template.len(),
        timings: BenchTimings {
            simulate_secs,
            initial_template_secs: learned.timings.initial_template.as_secs_f64(),
            final_template_secs: learned.timings.final_template.as_secs_f64(),
            meu_eval_secs,
            total_secs: total.elapsed().as_secs_f64(),
        },
    })
}
