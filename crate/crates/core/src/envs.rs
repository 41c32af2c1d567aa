//! Gridworlds, random-policy data, value iteration and policy rollouts.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SequenceDataset, Step};
use crate::error::{Error, Result};
use crate::eval::Evidence;
use crate::evaluator::{extract_policy_at, MeuTable};
use crate::model::{PartialOrder, RspmnModel, Slot, VariableMeta};

pub const NUM_ACTIONS: usize = 5;
pub const ACTION_NAMES: [&str; NUM_ACTIONS] = ["NoOp", "Up", "Down", "Left", "Right"];

/// (x, y): column and row, (0, 0) is the top-left corner.
pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub cell: Cell,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    pub goal: Cell,
    pub goal_reward: f64,
    #[serde(default)]
    pub penalties: Vec<Penalty>,
    pub step_cost: f64,
    /// Probability of moving to one of the two perpendicular directions instead.
    #[serde(default)]
    pub slip_prob: f64,
    pub horizon: usize,
    #[serde(default = "yes")]
    pub penalties_terminal: bool,
}

fn yes() -> bool {
    true
}

impl GridSpec {
    /// The 2×2 grid: start (0,0), penalty -10 at (1,0), goal +10 at (1,1), step cost -1.
    pub fn grid_2x2() -> Self {
        GridSpec {
            width: 2,
            height: 2,
            start: (0, 0),
            goal: (1, 1),
            goal_reward: 10.0,
            penalties: vec![Penalty { cell: (1, 0), reward: -10.0 }],
            step_cost: -1.0,
            slip_prob: 0.0,
            horizon: 4,
            penalties_terminal: true,
        }
    }

    /// A 3×3 grid with the goal in the far corner and one penalty cell.
    pub fn grid_3x3() -> Self {
        GridSpec {
            width: 3,
            height: 3,
            start: (0, 0),
            goal: (2, 2),
            goal_reward: 10.0,
            penalties: vec![Penalty { cell: (1, 0), reward: -10.0 }],
            step_cost: -1.0,
            slip_prob: 0.0,
            horizon: 8,
            penalties_terminal: true,
        }
    }

    /// A slippery 3×3 grid with a +1 goal and no step cost.
    pub fn slippery_3x3() -> Self {
        GridSpec {
            width: 3,
            height: 3,
            start: (0, 0),
            goal: (2, 2),
            goal_reward: 1.0,
            penalties: vec![Penalty { cell: (1, 1), reward: 0.0 }],
            step_cost: 0.0,
            slip_prob: 0.2,
            horizon: 8,
            penalties_terminal: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Malformed(m));
        if self.width < 2 || self.height < 2 {
            return bad("grid must be at least 2×2".into());
        }
        let in_bounds = |c: Cell| c.0 < self.width && c.1 < self.height;
        if !in_bounds(self.start) || !in_bounds(self.goal) {
            return bad("start and goal must be inside the grid".into());
        }
        if self.start == self.goal {
            return bad("start and goal must differ".into());
        }
        for p in &self.penalties {
            if !in_bounds(p.cell) || p.cell == self.goal {
                return bad(format!("penalty cell {:?} is outside the grid or on the goal", p.cell));
            }
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return bad("slip probability must be in [0, 1)".into());
        }
        if self.horizon == 0 {
            return Err(Error::ZeroHorizon);
        }
        if ![self.goal_reward, self.step_cost].iter().chain(self.penalties.iter().map(|p| &p.reward)).all(|r| r.is_finite()) {
            return bad("rewards must be finite".into());
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.width * self.height
    }

    pub fn state_of(&self, cell: Cell) -> usize {
        cell.1 * self.width + cell.0
    }

    pub fn cell_of(&self, state: usize) -> Cell {
        (state % self.width, state / self.width)
    }

    pub fn is_terminal(&self, cell: Cell) -> bool {
        cell == self.goal || (self.penalties_terminal && self.penalties.iter().any(|p| p.cell == cell))
    }

    fn cell_reward(&self, cell: Cell) -> f64 {
        if cell == self.goal {
            return self.goal_reward;
        }
        self.penalties.iter().filter(|p| p.cell == cell).map(|p| p.reward).sum()
    }

    fn shift(&self, cell: Cell, action: usize) -> Cell {
        let (x, y) = cell;
        match action {
            1 => (x, y.saturating_sub(1)),
            2 => (x, (y + 1).min(self.height - 1)),
            3 => (x.saturating_sub(1), y),
            4 => ((x + 1).min(self.width - 1), y),
            _ => (x, y),
        }
    }

    /// Variables X, Y, A and U in that order.
    pub fn variables(&self) -> Vec<VariableMeta> {
        let mut vars = vec![
            VariableMeta::state("X", self.width as u32),
            VariableMeta::state("Y", self.height as u32),
            VariableMeta::decision("A", NUM_ACTIONS as u32),
            VariableMeta::utility("U"),
        ];
        vars[2].slot = 1;
        vars[3].slot = 2;
        vars
    }

    /// `{X, Y} ≺ A ≺ {}` for one step.
    pub fn order(&self) -> PartialOrder {
        PartialOrder::new(vec![Slot::Info(vec![0, 1]), Slot::Decision(2), Slot::Info(vec![])], &self.variables())
            .expect("grid order is well formed")
    }

    /// Evidence fixing X and Y to `cell`.
    pub fn evidence(&self, cell: Cell) -> Evidence {
        let mut ev = Evidence::new(4);
        ev.set(0, cell.0 as u32).set(1, cell.1 as u32);
        ev
    }
}

/// Finite MDP with dense transition and reward tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// `transitions[s][a]` lists (next state, probability) with positive probability.
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    /// `rewards[s][a][s2]`.
    pub rewards: Vec<Vec<Vec<f64>>>,
    pub terminal: Vec<bool>,
    pub horizon: usize,
}

/// Ground-truth MDP of a grid: out-of-bounds moves stay put, terminal cells
/// absorb with zero reward, a move earns the step cost plus the reward of the
/// cell it lands in.
pub fn grid_to_mdp(spec: &GridSpec) -> Result<Mdp> {
    spec.validate()?;
    let n = spec.num_states();
    let mut transitions = vec![vec![Vec::new(); NUM_ACTIONS]; n];
    let mut rewards = vec![vec![vec![0.0; n]; NUM_ACTIONS]; n];
    let mut terminal = vec![false; n];
    for s in 0..n {
        let cell = spec.cell_of(s);
        terminal[s] = spec.is_terminal(cell);
        for a in 0..NUM_ACTIONS {
            let mut probs = vec![0.0; n];
            if terminal[s] {
                probs[s] = 1.0;
            } else {
                let lateral: [usize; 2] = match a {
                    1 | 2 => [3, 4],
                    3 | 4 => [1, 2],
                    _ => [0, 0],
                };
                let slip = if a == 0 { 0.0 } else { spec.slip_prob };
                probs[spec.state_of(spec.shift(cell, a))] += 1.0 - slip;
                for l in lateral {
                    probs[spec.state_of(spec.shift(cell, l))] += slip / 2.0;
                }
                for (s2, r) in rewards[s][a].iter_mut().enumerate() {
                    *r = spec.step_cost + spec.cell_reward(spec.cell_of(s2));
                }
            }
            transitions[s][a] = probs.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(s2, &p)| (s2, p)).collect();
        }
    }
    Ok(Mdp { num_states: n, num_actions: NUM_ACTIONS, transitions, rewards, terminal, horizon: spec.horizon })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueIteration {
    /// `values[k][s]`: optimal value with k steps to go.
    pub values: Vec<Vec<f64>>,
    /// `policy[k][s]`: greedy action with k steps to go (`policy[0]` is all NoOp).
    pub policy: Vec<Vec<u32>>,
}

impl ValueIteration {
    pub fn value(&self, steps: usize, state: usize) -> f64 {
        self.values[steps][state]
    }

    pub fn action(&self, steps: usize, state: usize) -> u32 {
        self.policy[steps][state]
    }
}

/// Backward induction with V₀ = 0; ties go to the lowest action index.
pub fn value_iteration(mdp: &Mdp, horizon: usize) -> ValueIteration {
    let n = mdp.num_states;
    let mut values = vec![vec![0.0; n]];
    let mut policy = vec![vec![0u32; n]];
    for k in 1..=horizon {
        let prev = &values[k - 1];
        let mut v = vec![0.0; n];
        let mut pi = vec![0u32; n];
        for s in 0..n {
            let mut best = (0u32, f64::NEG_INFINITY);
            for a in 0..mdp.num_actions {
                let q: f64 = mdp.transitions[s][a].iter().map(|&(s2, p)| p * (mdp.rewards[s][a][s2] + prev[s2])).sum();
                if q > best.1 + 1e-9 {
                    best = (a as u32, q);
                }
            }
            v[s] = best.1;
            pi[s] = best.0;
        }
        values.push(v);
        policy.push(pi);
    }
    ValueIteration { values, policy }
}

/// Runs a uniformly random policy for `episodes` episodes.
///
/// With `pad_terminal` every episode lasts the full horizon, staying in the
/// terminal cell it entered (random actions, zero utility); otherwise it ends
/// on entering a terminal cell. Episode `e` draws from seed `seed ^ e`.
pub fn generate_dataset(spec: &GridSpec, episodes: usize, seed: u64, pad_terminal: bool) -> Result<SequenceDataset> {
    let mdp = grid_to_mdp(spec)?;
    if episodes == 0 {
        return Err(Error::EmptyData("episode count must be at least 1".into()));
    }
    let eps: Vec<Vec<Step>> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ e as u64);
            let mut s = spec.state_of(spec.start);
            let mut steps = Vec::with_capacity(spec.horizon);
            for _ in 0..spec.horizon {
                let a = rng.gen_range(0..NUM_ACTIONS);
                let s2 = sample(&mdp.transitions[s][a], &mut rng);
                let cell = spec.cell_of(s);
                steps.push(Step {
                    values: vec![cell.0 as u32, cell.1 as u32, a as u32, 0],
                    utility: mdp.rewards[s][a][s2],
                });
                let entered_terminal = !mdp.terminal[s] && mdp.terminal[s2];
                s = s2;
                if entered_terminal && !pad_terminal {
                    break;
                }
            }
            steps
        })
        .collect();
    SequenceDataset::new(spec.variables(), eps)
}

fn sample(dist: &[(usize, f64)], rng: &mut impl Rng) -> usize {
    if dist.len() == 1 {
        return dist[0].0;
    }
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for &(s, p) in dist {
        acc += p;
        if r < acc {
            return s;
        }
    }
    dist[dist.len() - 1].0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RolloutStats {
    pub episodes: usize,
    pub mean: f64,
    pub std_dev: f64,
}

/// Mean total reward of `policy(state, steps_to_go)` over simulated episodes.
/// Episode `e` draws from seed `seed ^ e`.
pub fn rollout_policy<F>(spec: &GridSpec, policy: F, episodes: usize, seed: u64) -> Result<RolloutStats>
where
    F: Fn(usize, usize) -> Result<u32> + Sync,
{
    let mdp = grid_to_mdp(spec)?;
    if episodes == 0 {
        return Err(Error::EmptyData("episode count must be at least 1".into()));
    }
    let totals: Vec<Result<f64>> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ e as u64);
            let mut s = spec.state_of(spec.start);
            let mut total = 0.0;
            for t in 0..spec.horizon {
                if mdp.terminal[s] {
                    break;
                }
                let a = policy(s, spec.horizon - t)? as usize;
                if a >= NUM_ACTIONS {
                    return Err(Error::ValueOutOfRange { var: 2, value: a as u32, cardinality: NUM_ACTIONS });
                }
                let s2 = sample(&mdp.transitions[s][a], &mut rng);
                total += mdp.rewards[s][a][s2];
                s = s2;
            }
            Ok(total)
        })
        .collect();
    let totals: Vec<f64> = totals.into_iter().collect::<Result<_>>()?;
    let n = totals.len() as f64;
    let mean = totals.iter().sum::<f64>() / n;
    let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    Ok(RolloutStats { episodes, mean, std_dev: var.sqrt() })
}

/// Action the model picks at grid state `state` with `steps_to_go` remaining.
pub fn rspmn_action(spec: &GridSpec, model: &RspmnModel, table: &MeuTable, state: usize, steps_to_go: usize) -> Result<u32> {
    let ev = spec.evidence(spec.cell_of(state));
    let decision = extract_policy_at(model, table, &ev, steps_to_go)?;
    decision.value_of(2).ok_or(Error::NoSupport)
}

/// Percentage of `states` on which the two action tables differ.
pub fn policy_deviation(a: &[u32], b: &[u32], states: &[usize]) -> f64 {
    if states.is_empty() {
        return 0.0;
    }
    let differ = states.iter().filter(|&&s| a[s] != b[s]).count();
    100.0 * differ as f64 / states.len() as f64
}

/// Non-terminal states reachable from the start within `horizon - 1` moves.
pub fn reachable_nonterminal(spec: &GridSpec, mdp: &Mdp) -> Vec<usize> {
    let mut seen = vec![false; mdp.num_states];
    let mut frontier = vec![spec.state_of(spec.start)];
    seen[frontier[0]] = true;
    for _ in 1..spec.horizon {
        let mut next = Vec::new();
        for &s in &frontier {
            if mdp.terminal[s] {
                continue;
            }
            for a in 0..mdp.num_actions {
                for &(s2, _) in &mdp.transitions[s][a] {
                    if !seen[s2] {
                        seen[s2] = true;
                        next.push(s2);
                    }
                }
            }
        }
        frontier = next;
    }
    (0..mdp.num_states).filter(|&s| seen[s] && !mdp.terminal[s]).collect()
}
