use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bucket_of, cluster_rows, constrained_split, quantile_bounds, CategoricalView};
use crate::data::TwoStepTable;
use crate::error::{Error, Result};
use crate::graph::{Network, NodeId, NodeKind, VarId};
use crate::model::{validate_variables, PartialOrder, Slot, VariableMeta};

/// Row count from which sibling subtrees are learned in parallel.
const PAR_ROWS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnParams {
    /// G-test p-value below which two variables count as dependent.
    pub indep_threshold: f64,
    pub cluster_k: usize,
    pub cluster_restarts: usize,
    pub laplace_alpha: f64,
    /// Row subsets smaller than this are factorized instead of split.
    pub min_rows: usize,
    pub utility_buckets: usize,
    pub seed: u64,
}

impl Default for LearnParams {
    fn default() -> Self {
        LearnParams {
            indep_threshold: 0.001,
            cluster_k: 2,
            cluster_restarts: 3,
            laplace_alpha: 1.0,
            min_rows: 4,
            utility_buckets: 64,
            seed: 42,
        }
    }
}

impl LearnParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Hyperparameter(m.into()));
        if !(self.indep_threshold > 0.0 && self.indep_threshold < 1.0) {
            return bad("indep-threshold must be in (0, 1)");
        }
        if self.cluster_k < 2 {
            return bad("cluster-k must be at least 2");
        }
        if self.cluster_restarts == 0 {
            return bad("cluster restarts must be at least 1");
        }
        if !(self.laplace_alpha >= 0.0 && self.laplace_alpha.is_finite()) {
            return bad("laplace-alpha must be a finite nonnegative number");
        }
        if self.min_rows == 0 {
            return bad("min-rows must be at least 1");
        }
        if self.utility_buckets == 0 {
            return bad("utility buckets must be at least 1");
        }
        Ok(())
    }
}

enum Tree {
    Sum(Vec<(f64, Tree)>),
    Product(Vec<Tree>),
    Max(VarId, Vec<(u32, Tree)>),
    Categorical(VarId, Vec<f64>),
    Utility(VarId, f64),
}

struct Ctx<'a> {
    table: &'a TwoStepTable,
    view: CategoricalView,
    cards: Vec<u32>,
    slots: Vec<Slot>,
    slot_of: Vec<usize>,
    hp: &'a LearnParams,
}

/// Learns a two-step network from wrapped rows, following the order's slots.
///
/// Variable `v` of step t+1 is column `v + n` of the table.
pub fn learn_spmn(
    table: &TwoStepTable,
    variables: &[VariableMeta],
    order: &PartialOrder,
    hp: &LearnParams,
) -> Result<Network> {
    hp.validate()?;
    let utility = validate_variables(variables)?;
    if table.is_empty() {
        return Err(Error::EmptyData("no rows to learn from".into()));
    }
    let n = variables.len();
    if table.num_vars() != n || order.num_vars() != n {
        return Err(Error::Malformed("table, order and variables disagree on the variable count".into()));
    }
    let step_cards: Vec<u32> = variables.iter().map(|v| v.cardinality.unwrap_or(1)).collect();
    let cards: Vec<u32> = step_cards.iter().chain(&step_cards).copied().collect();
    let slots = order.with_utility(utility);
    let mut slot_of = vec![0; 2 * n];
    for (s, slot) in slots.iter().enumerate() {
        match slot {
            Slot::Info(ids) => ids.iter().for_each(|&v| slot_of[v] = s),
            Slot::Decision(d) => slot_of[*d] = s,
        }
    }
    let ctx = Ctx {
        table,
        view: CategoricalView::from_table(table, &step_cards, hp.utility_buckets),
        cards,
        slots,
        slot_of,
        hp,
    };
    let rows: Vec<usize> = (0..table.len()).collect();
    let vars: Vec<usize> = (0..2 * n).collect();
    let tree = ctx.learn(rows, vars, hp.seed)?;
    let mut nodes = Vec::new();
    let root = flatten(tree, &mut nodes);
    Network::new(nodes, vec![root])
}

fn child_seed(seed: u64, i: usize) -> u64 {
    // splitmix64 step
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Ctx<'_> {
    fn learn(&self, rows: Vec<usize>, vars: Vec<usize>, seed: u64) -> Result<Tree> {
        if vars.len() == 1 {
            return Ok(self.leaf(&rows, vars[0]));
        }
        let slot = vars.iter().map(|&v| self.slot_of[v]).min().expect("vars nonempty");
        match &self.slots[slot] {
            Slot::Decision(d) => self.max_node(rows, vars, *d, seed),
            Slot::Info(_) => {
                let (current, future): (Vec<usize>, Vec<usize>) =
                    vars.iter().partition(|&&v| self.slot_of[v] == slot);
                if rows.len() < self.hp.min_rows {
                    return self.factorize(rows, current, future, seed);
                }
                if let Some(groups) =
                    constrained_split(&self.view, &rows, &current, &future, self.hp.indep_threshold)
                {
                    let children = self.map_children(groups.into_iter().map(|g| (rows.clone(), g)).collect(), seed)?;
                    return Ok(Tree::Product(children));
                }
                let clusters = cluster_rows(
                    &self.view,
                    &rows,
                    &current,
                    self.hp.cluster_k,
                    self.hp.cluster_restarts,
                    seed,
                );
                if clusters.len() < 2 {
                    return self.factorize(rows, current, future, seed);
                }
                let total = rows.len() as f64;
                let weights: Vec<f64> = clusters.iter().map(|c| c.len() as f64 / total).collect();
                let children = self.map_children(clusters.into_iter().map(|c| (c, vars.clone())).collect(), seed)?;
                Ok(Tree::Sum(weights.into_iter().zip(children).collect()))
            }
        }
    }

    fn max_node(&self, rows: Vec<usize>, vars: Vec<usize>, d: VarId, seed: u64) -> Result<Tree> {
        let mut by_value: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for &r in &rows {
            by_value.entry(self.table.value(r, d)).or_default().push(r);
        }
        let rest: Vec<usize> = vars.iter().copied().filter(|&v| v != d).collect();
        let labels: Vec<u32> = by_value.keys().copied().collect();
        let jobs = by_value.into_values().map(|r| (r, rest.clone())).collect();
        let children = self.map_children(jobs, seed)?;
        Ok(Tree::Max(d, labels.into_iter().zip(children).collect()))
    }

    fn factorize(&self, rows: Vec<usize>, current: Vec<usize>, future: Vec<usize>, seed: u64) -> Result<Tree> {
        let mut children: Vec<Tree> = current.iter().map(|&v| self.leaf(&rows, v)).collect();
        if !future.is_empty() {
            children.push(self.learn(rows, future, child_seed(seed, 0))?);
        }
        Ok(if children.len() == 1 { children.pop().expect("one child") } else { Tree::Product(children) })
    }

    fn map_children(&self, jobs: Vec<(Vec<usize>, Vec<usize>)>, seed: u64) -> Result<Vec<Tree>> {
        let big = jobs.iter().map(|(r, _)| r.len()).sum::<usize>() >= PAR_ROWS;
        if big {
            jobs.into_par_iter()
                .enumerate()
                .map(|(i, (r, v))| self.learn(r, v, child_seed(seed, i)))
                .collect()
        } else {
            jobs.into_iter()
                .enumerate()
                .map(|(i, (r, v))| self.learn(r, v, child_seed(seed, i)))
                .collect()
        }
    }

    fn leaf(&self, rows: &[usize], col: usize) -> Tree {
        let var = col;
        if self.table.is_utility(col) {
            return utility_leaf(var, rows.iter().map(|&r| self.table.utility(r, col)).collect(), self.hp.utility_buckets);
        }
        let card = self.cards[col] as usize;
        let mut counts = vec![0usize; card];
        for &r in rows {
            counts[self.table.value(r, col) as usize] += 1;
        }
        let alpha = self.hp.laplace_alpha;
        let denom = rows.len() as f64 + alpha * card as f64;
        let probs = if denom > 0.0 {
            counts.iter().map(|&c| (c as f64 + alpha) / denom).collect()
        } else {
            vec![1.0 / card as f64; card]
        };
        Tree::Categorical(var, probs)
    }
}

/// Frequency-weighted sum over the distinct utilities (bucket means when
/// there are more distinct values than buckets); a single value is a bare leaf.
fn utility_leaf(var: VarId, values: Vec<f64>, buckets: usize) -> Tree {
    let mut distinct = values.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let total = values.len() as f64;
    let groups: Vec<(f64, usize)> = if distinct.len() <= buckets {
        distinct
            .iter()
            .map(|&d| (d, values.iter().filter(|&&v| v == d).count()))
            .collect()
    } else {
        let bounds = quantile_bounds(&values, buckets);
        let mut acc = vec![(0.0, 0usize); bounds.len() + 1];
        for &v in &values {
            let b = bucket_of(&bounds, v);
            acc[b].0 += v;
            acc[b].1 += 1;
        }
        acc.into_iter().filter(|a| a.1 > 0).map(|(s, c)| (s / c as f64, c)).collect()
    };
    if groups.len() == 1 {
        return Tree::Utility(var, groups[0].0);
    }
    Tree::Sum(groups.into_iter().map(|(v, c)| (c as f64 / total, Tree::Utility(var, v))).collect())
}

fn flatten(tree: Tree, nodes: &mut Vec<NodeKind>) -> NodeId {
    let node = match tree {
        Tree::Sum(children) => {
            let (weights, kids): (Vec<f64>, Vec<Tree>) = children.into_iter().unzip();
            let children = kids.into_iter().map(|t| flatten(t, nodes)).collect();
            NodeKind::Sum { children, weights }
        }
        Tree::Product(kids) => NodeKind::Product { children: kids.into_iter().map(|t| flatten(t, nodes)).collect() },
        Tree::Max(decision, children) => {
            let (labels, kids): (Vec<u32>, Vec<Tree>) = children.into_iter().unzip();
            let children = kids.into_iter().map(|t| flatten(t, nodes)).collect();
            NodeKind::Max { decision, children, labels }
        }
        Tree::Categorical(var, probs) => NodeKind::Categorical { var, probs },
        Tree::Utility(var, value) => NodeKind::Utility { var, value },
    };
    nodes.push(node);
    NodeId(nodes.len() - 1)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::VariableMeta;

    fn xyz_vars() -> Vec<VariableMeta> {
        vec![
            VariableMeta::state("X", 2),
            VariableMeta::state("Y", 2),
            VariableMeta::decision("D", 2),
            VariableMeta::utility("U"),
        ]
    }

    fn order(vars: &[VariableMeta]) -> PartialOrder {
        PartialOrder::new(vec![Slot::Info(vec![0, 1]), Slot::Decision(2), Slot::Info(vec![])], vars).unwrap()
    }

    #[test]
    fn one_row_one_variable_is_smoothed() {
        let t = TwoStepTable::from_rows(2, 1, &[(vec![0, 0, 0, 0], [0.0, 0.0])]).unwrap();
        let view = CategoricalView::from_table(&t, &[2, 1], 64);
        let hp = LearnParams::default();
        let ctx = Ctx { table: &t, view, cards: vec![2, 1, 2, 1], slots: vec![], slot_of: vec![0; 4], hp: &hp };
        match ctx.leaf(&[0], 0) {
            Tree::Categorical(0, p) => {
                assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15)
            }
            _ => panic!("expected a categorical leaf"),
        }
    }

    #[test]
    fn utility_leaf_weights_by_frequency() {
        match utility_leaf(3, vec![1.0, 2.0, 2.0, 2.0], 64) {
            Tree::Sum(children) => {
                let got: Vec<(f64, f64)> = children
                    .iter()
                    .map(|(w, t)| match t {
                        Tree::Utility(3, v) => (*w, *v),
                        _ => panic!("expected utility leaf"),
                    })
                    .collect();
                assert_eq!(got, vec![(0.25, 1.0), (0.75, 2.0)]);
            }
            _ => panic!("expected a sum"),
        }
        assert!(matches!(utility_leaf(3, vec![5.0; 3], 64), Tree::Utility(3, v) if v == 5.0));
    }

    fn random_table(n_rows: usize, independent: bool) -> TwoStepTable {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<(Vec<u32>, [f64; 2])> = (0..n_rows)
            .map(|_| {
                let x = rng.gen_range(0..2);
                let y = if independent { rng.gen_range(0..2) } else { x };
                let d = rng.gen_range(0..2);
                let x2 = if independent { rng.gen_range(0..2) } else { x };
                let y2 = rng.gen_range(0..2);
                let d2 = rng.gen_range(0..2);
                (vec![x, y, d, 0, x2, y2, d2, 0], [f64::from(d), f64::from(d2)])
            })
            .collect();
        TwoStepTable::from_rows(4, 3, &rows).unwrap()
    }

    #[test]
    fn independent_columns_give_root_product() {
        let vars = xyz_vars();
        let net = learn_spmn(&random_table(4000, true), &vars, &order(&vars), &LearnParams::default()).unwrap();
        match &net[net.root()] {
            NodeKind::Product { children } => {
                let leaves: Vec<VarId> = children
                    .iter()
                    .filter_map(|&c| match &net[c] {
                        NodeKind::Categorical { var, .. } => Some(*var),
                        _ => None,
                    })
                    .collect();
                assert_eq!(leaves, vec![0, 1]);
            }
            other => panic!("expected product root, got {other:?}"),
        }
        net.check_parameters().unwrap();
    }

    #[test]
    fn dependent_states_give_root_sum_and_determinism() {
        let vars = xyz_vars();
        let table = random_table(2000, false);
        let hp = LearnParams::default();
        let a = learn_spmn(&table, &vars, &order(&vars), &hp).unwrap();
        assert!(matches!(a[a.root()], NodeKind::Sum { .. }));
        let b = learn_spmn(&table, &vars, &order(&vars), &hp).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_hyperparameters_error() {
        let vars = xyz_vars();
        let hp = LearnParams { cluster_k: 1, ..LearnParams::default() };
        assert!(matches!(
            learn_spmn(&random_table(10, true), &vars, &order(&vars), &hp),
            Err(Error::Hyperparameter(_))
        ));
    }
}
