use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rspmn::bench::{run_bench, BenchConfig};
use rspmn::builder::{learn_rspmn_staged, RspmnParams};
use rspmn::envs::{
    generate_dataset, grid_to_mdp, rollout_policy, rspmn_action, value_iteration, GridSpec, ACTION_NAMES,
};
use rspmn::evaluator::{evaluate_meu, extract_policy, log_likelihood, meu_via_unfold};
use rspmn::io::{load_model, read_dataset, save_model, OrderSpec};
use rspmn::validity::{check_template_sound, check_top_valid, verify_unfolded};
use rspmn::RspmnModel;

#[derive(Parser, Debug)]
#[command(name = "rspmn", version, about = "Recurrent sum-product-max networks")]
struct Cli {
    /// Base seed for simulation and learning.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for output files given as relative paths and for the config echo.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Simulate a random policy on a grid and write episodes as CSV.
    Simulate {
        /// Grid JSON file or preset (2x2, 3x3, slippery-3x3).
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = 10_000)]
        episodes: usize,
        #[arg(long)]
        out: PathBuf,
        /// End episodes on entering a terminal cell instead of padding them.
        #[arg(long)]
        no_pad: bool,
    },
    /// Learn a model from a CSV dataset.
    Learn {
        #[arg(long)]
        data: PathBuf,
        /// Partial-order JSON file.
        #[arg(long, conflicts_with = "grid")]
        order: Option<PathBuf>,
        /// Take the order and cardinalities from a grid instead.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hp: Hyper,
    },
    /// Check template soundness, top-network validity and unfolded validity.
    Validate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 3)]
        horizon: usize,
    },
    /// Maximum expected utility, optionally given the first step's state.
    EvalMeu {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
        /// Comma-separated `name=value` pairs.
        #[arg(long)]
        state: Option<String>,
    },
    /// Mean log-likelihood of a dataset.
    EvalLl {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "grid")]
        order: Option<PathBuf>,
        #[arg(long)]
        grid: Option<String>,
    },
    /// Decisions chosen at a state.
    Policy {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        state: String,
    },
    /// Average reward of the model's policy on a grid.
    Rollout {
        #[arg(long)]
        grid: String,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 10_000)]
        episodes: usize,
    },
    /// Value-iteration values and policy of a grid.
    Oracle {
        #[arg(long)]
        grid: String,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Compare template iteration with the explicitly unfolded network.
    CheckUnfold {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Full pipeline report on a grid.
    Bench {
        #[arg(long, default_value = "2x2")]
        grid: String,
        #[arg(long, default_value_t = 10_000)]
        episodes: usize,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 10_000)]
        rollout_episodes: usize,
        #[arg(long)]
        no_pad: bool,
        /// Report file (JSON).
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        hp: Hyper,
    },
}

#[derive(Args, Debug, Clone, Serialize)]
struct Hyper {
    #[arg(long, default_value_t = 0.001)]
    indep_threshold: f64,
    #[arg(long, default_value_t = 2)]
    cluster_k: usize,
    #[arg(long, default_value_t = 4)]
    min_rows: usize,
    #[arg(long, default_value_t = 1.0)]
    laplace_alpha: f64,
    #[arg(long, default_value_t = 2)]
    epochs: usize,
}

impl Hyper {
    fn params(&self, seed: u64) -> RspmnParams {
        let mut p = RspmnParams::default();
        p.learn.indep_threshold = self.indep_threshold;
        p.learn.cluster_k = self.cluster_k;
        p.learn.min_rows = self.min_rows;
        p.learn.laplace_alpha = self.laplace_alpha;
        p.learn.seed = seed;
        p.em.epochs = self.epochs;
        p
    }
}

/// Failure that maps to exit code 2.
#[derive(Debug)]
struct ValidationFailed(String);

impl std::fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationFailed {}

#[derive(Serialize)]
struct Echo<'a> {
    seed: u64,
    threads: usize,
    out_dir: Option<&'a Path>,
    command: &'a Command,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<RspmnParams>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ValidationFailed>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn grid(arg: &str) -> Result<GridSpec> {
    let spec = match arg {
        "2x2" => GridSpec::grid_2x2(),
        "3x3" => GridSpec::grid_3x3(),
        "slippery-3x3" => GridSpec::slippery_3x3(),
        path => {
            let text = fs::read_to_string(path).with_context(|| format!("reading grid file {path}"))?;
            serde_json::from_str(&text).with_context(|| format!("parsing grid file {path}"))?
        }
    };
    spec.validate()?;
    Ok(spec)
}

fn with_horizon(mut spec: GridSpec, horizon: Option<usize>) -> GridSpec {
    if let Some(h) = horizon {
        spec.horizon = h;
    }
    spec
}

fn model_horizon(model: &RspmnModel, horizon: Option<usize>) -> Result<usize> {
    horizon
        .or(model.metadata.horizon)
        .context("no --horizon given and the model does not record its training horizon")
}

fn state_evidence(model: &RspmnModel, state: &str) -> Result<rspmn::Evidence> {
    let mut pairs = Vec::new();
    for part in state.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = part.split_once('=').with_context(|| format!("expected name=value, got `{part}`"))?;
        let v: u32 = v.trim().parse().with_context(|| format!("bad value in `{part}`"))?;
        pairs.push((k.trim(), v));
    }
    Ok(model.evidence(pairs)?)
}

fn order_spec(order: Option<&Path>, grid_arg: Option<&str>) -> Result<OrderSpec> {
    match (order, grid_arg) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading order file {}", p.display()))?;
            Ok(OrderSpec::parse(&text)?)
        }
        (None, Some(g)) => {
            let spec = grid(g)?;
            let vars = spec.variables();
            let mut o = OrderSpec::from_order(&spec.order(), &vars);
            for v in vars.iter().filter(|v| v.cardinality.is_some()) {
                o.cardinality.insert(v.name.clone(), v.cardinality.unwrap_or(0));
            }
            Ok(o)
        }
        (None, None) => bail!("either --order or --grid is required"),
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let out = |p: &Path| -> PathBuf {
        match &cli.out_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    };
    if let Some(dir) = &cli.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let params = match &cli.command {
        Command::Learn { hp, .. } | Command::Bench { hp, .. } => Some(hp.params(cli.seed)),
        _ => None,
    };
    let echo = Echo {
        seed: cli.seed,
        threads: rayon::current_num_threads(),
        out_dir: cli.out_dir.as_deref(),
        command: &cli.command,
        params: params.clone(),
    };
    let echo = serde_json::to_string(&echo)?;
    eprintln!("config: {echo}");
    if let Some(dir) = &cli.out_dir {
        fs::write(dir.join("config.json"), &echo)?;
    }

    match &cli.command {
        Command::Simulate { grid: g, episodes, out: path, no_pad } => {
            let spec = grid(g)?;
            let data = generate_dataset(&spec, *episodes, cli.seed, !no_pad)?;
            let path = out(path);
            data.write_csv(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
            println!("episodes: {}", data.episodes.len());
            println!("steps: {}", data.num_steps());
            println!("written: {}", path.display());
        }
        Command::Learn { data, order, grid: g, out: path, .. } => {
            let spec = order_spec(order.as_deref(), g.as_deref())?;
            let file = fs::File::open(data).with_context(|| format!("opening {}", data.display()))?;
            let (dataset, order) = read_dataset(file, &spec)?;
            let learned = learn_rspmn_staged(&dataset, &order, params.as_ref().expect("learn has params"))?;
            let path = out(path);
            save_model(&learned.model, &path)?;
            println!("{}", serde_json::to_string_pretty(&learned.report)?);
            println!("initial template time: {:.3}s", learned.timings.initial_template.as_secs_f64());
            println!("final template time: {:.3}s", learned.timings.final_template.as_secs_f64());
            println!("written: {}", path.display());
        }
        Command::Validate { model, horizon } => {
            let model = load_model(model)?;
            let tpl = check_template_sound(&model.template);
            let top = check_top_valid(&model.top, &model.template);
            println!("template:\n{tpl}");
            println!("top:\n{top}");
            let check = verify_unfolded(&model, *horizon)?;
            for (steps, r) in &check.unfolded {
                println!("unfolded {steps}: {}", if r.all_pass() { "pass".to_string() } else { r.failures().join(", ") });
            }
            if !check.passed() {
                return Err(ValidationFailed("model is not valid".into()).into());
            }
            println!("valid");
        }
        Command::EvalMeu { model, horizon, state } => {
            let model = load_model(model)?;
            let h = model_horizon(&model, *horizon)?;
            let ev = state.as_deref().map(|s| state_evidence(&model, s)).transpose()?;
            let table = evaluate_meu(&model, h, ev.as_ref())?;
            println!("{table}");
        }
        Command::EvalLl { model, data, order, grid: g } => {
            let model = load_model(model)?;
            let spec = match (order, g) {
                (None, None) => OrderSpec {
                    slots: OrderSpec::from_order(&model.order, &model.variables).slots,
                    cardinality: model
                        .variables
                        .iter()
                        .filter_map(|v| v.cardinality.map(|c| (v.name.clone(), c)))
                        .collect(),
                },
                _ => order_spec(order.as_deref(), g.as_deref())?,
            };
            let file = fs::File::open(data).with_context(|| format!("opening {}", data.display()))?;
            let (dataset, _) = read_dataset(file, &spec)?;
            let (ll, floored) = log_likelihood(&model, &dataset)?;
            println!("episodes: {}", dataset.episodes.len());
            println!("mean log-likelihood: {ll:.6}");
            println!("zero-likelihood episodes: {floored}");
        }
        Command::Policy { model, horizon, state } => {
            let model = load_model(model)?;
            let h = model_horizon(&model, *horizon)?;
            let ev = state_evidence(&model, state)?;
            let table = evaluate_meu(&model, h, None)?;
            let d = extract_policy(&model, &table, &ev)?;
            for (var, value) in &d.decisions {
                println!("{}={value}", model.variables[*var].name);
            }
            println!("interface root: {}", d.root);
            println!("eu: {:.6}", d.eu);
            println!("meu: {:.6}", d.meu);
        }
        Command::Rollout { grid: g, model, horizon, episodes } => {
            let spec = with_horizon(grid(g)?, *horizon);
            let model = load_model(model)?;
            let table = evaluate_meu(&model, spec.horizon, Some(&spec.evidence(spec.start)))?;
            let stats =
                rollout_policy(&spec, |s, k| rspmn_action(&spec, &model, &table, s, k), *episodes, cli.seed)?;
            println!("episodes: {}", stats.episodes);
            println!("meu: {:.6}", table.meu);
            println!("average reward: {:.6}", stats.mean);
            println!("std dev: {:.6}", stats.std_dev);
        }
        Command::Oracle { grid: g, horizon } => {
            let spec = with_horizon(grid(g)?, *horizon);
            let mdp = grid_to_mdp(&spec)?;
            let vi = value_iteration(&mdp, spec.horizon);
            println!("horizon: {}", spec.horizon);
            for y in 0..spec.height {
                let row: Vec<String> = (0..spec.width)
                    .map(|x| {
                        let s = spec.state_of((x, y));
                        format!("{:>8.3} {:<5}", vi.value(spec.horizon, s), ACTION_NAMES[vi.action(spec.horizon, s) as usize])
                    })
                    .collect();
                println!("{}", row.join(" "));
            }
            println!("start value: {:.6}", vi.value(spec.horizon, spec.state_of(spec.start)));
        }
        Command::CheckUnfold { model, horizon } => {
            let model = load_model(model)?;
            let h = model_horizon(&model, *horizon)?;
            let mut worst: f64 = 0.0;
            for k in 1..=h {
                let a = evaluate_meu(&model, k, None)?.meu;
                let b = meu_via_unfold(&model, k, None)?;
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
                worst = worst.max(rel);
                println!("horizon {k}: iterated {a:.12} unfolded {b:.12} relative difference {rel:.3e}");
            }
            if worst > 1e-9 {
                return Err(ValidationFailed(format!("relative difference {worst:.3e} exceeds 1e-9")).into());
            }
            println!("equal");
        }
        Command::Bench { grid: g, episodes, horizon, rollout_episodes, no_pad, json, .. } => {
            let spec = with_horizon(grid(g)?, *horizon);
            let mut config = BenchConfig::new(spec, *episodes, cli.seed);
            config.rollout_episodes = *rollout_episodes;
            config.pad_terminal = !no_pad;
            config.params = params.clone().expect("bench has params");
            let report = run_bench(&config)?;
            println!("{report}");
            if let Some(path) = json {
                let path = out(path);
                fs::write(&path, report.to_json()?)?;
                println!("written: {}", path.display());
            }
            if let Some(dir) = &cli.out_dir {
                fs::write(dir.join("report.json"), report.deterministic_json()?)?;
            }
        }
    }
    Ok(())
}
