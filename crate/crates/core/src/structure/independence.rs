use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::CategoricalView;

/// p-value of the G-test of independence between columns `a` and `b` over `rows`.
///
/// Degrees of freedom count only values observed in `rows`; a column that is
/// constant there is independent of everything (p = 1).
pub fn g_test_pvalue(data: &CategoricalView, rows: &[usize], a: usize, b: usize) -> f64 {
    let ka = data.cardinality(a) as usize;
    let kb = data.cardinality(b) as usize;
    let mut table = vec![0u64; ka * kb];
    let (ca, cb) = (data.column(a), data.column(b));
    for &r in rows {
        table[ca[r] as usize * kb + cb[r] as usize] += 1;
    }
    let mut row_tot = vec![0u64; ka];
    let mut col_tot = vec![0u64; kb];
    for i in 0..ka {
        for j in 0..kb {
            row_tot[i] += table[i * kb + j];
            col_tot[j] += table[i * kb + j];
        }
    }
    let ra = row_tot.iter().filter(|&&c| c > 0).count();
    let rb = col_tot.iter().filter(|&&c| c > 0).count();
    if ra < 2 || rb < 2 {
        return 1.0;
    }
    let n = rows.len() as f64;
    let mut g = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let o = table[i * kb + j];
            if o > 0 {
                let e = row_tot[i] as f64 * col_tot[j] as f64 / n;
                g += o as f64 * (o as f64 / e).ln();
            }
        }
    }
    g *= 2.0;
    let df = ((ra - 1) * (rb - 1)) as f64;
    let chi = ChiSquared::new(df).expect("positive degrees of freedom");
    chi.sf(g.max(0.0))
}

/// Connected components of the dependency graph (edge when p < threshold).
/// Returns `None` when everything stays in one component.
pub fn independence_split(
    data: &CategoricalView,
    rows: &[usize],
    vars: &[usize],
    threshold: f64,
) -> Option<Vec<Vec<usize>>> {
    if vars.len() < 2 {
        return None;
    }
    let mut uf = UnionFind::new(vars.len());
    for i in 0..vars.len() {
        for j in i + 1..vars.len() {
            if uf.find(i) != uf.find(j) && g_test_pvalue(data, rows, vars[i], vars[j]) < threshold {
                uf.union(i, j);
            }
        }
    }
    let groups = uf.groups(vars);
    (groups.len() >= 2).then_some(groups)
}

/// Split that keeps every variable of later slots together.
///
/// `future` forms a single block; only pairs involving a `current` variable
/// are tested. Returns the groups (the future block last, when present) or
/// `None` for a single group.
pub fn constrained_split(
    data: &CategoricalView,
    rows: &[usize],
    current: &[usize],
    future: &[usize],
    threshold: f64,
) -> Option<Vec<Vec<usize>>> {
    let all: Vec<usize> = current.iter().chain(future).copied().collect();
    if all.len() < 2 || current.is_empty() {
        return None;
    }
    let nc = current.len();
    let mut uf = UnionFind::new(all.len());
    for j in nc + 1..all.len() {
        uf.union(nc, j);
    }
    for i in 0..nc {
        for j in i + 1..all.len() {
            if uf.find(i) != uf.find(j) && g_test_pvalue(data, rows, all[i], all[j]) < threshold {
                uf.union(i, j);
            }
        }
    }
    let mut groups = uf.groups(&all);
    if groups.len() < 2 {
        return None;
    }
    if let Some(f) = future.first() {
        let pos = groups.iter().position(|g| g.contains(f)).expect("future block exists");
        let block = groups.remove(pos);
        groups.push(block);
    }
    Some(groups)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }

    /// Groups of `labels` by component, ordered by first member.
    fn groups(&mut self, labels: &[usize]) -> Vec<Vec<usize>> {
        let mut out: Vec<(usize, Vec<usize>)> = Vec::new();
        for (i, &label) in labels.iter().enumerate() {
            let r = self.find(i);
            match out.iter_mut().find(|(root, _)| *root == r) {
                Some((_, g)) => g.push(label),
                None => out.push((r, vec![label])),
            }
        }
        out.into_iter().map(|(_, g)| g).collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn view(cols: Vec<Vec<u32>>) -> CategoricalView {
        let cards = cols.iter().map(|c| c.iter().max().unwrap() + 1).map(|k| k.max(2)).collect();
        CategoricalView::new(cols, cards)
    }

    #[test]
    fn identical_columns_do_not_split() {
        let x: Vec<u32> = (0..200).map(|i| (i % 3 == 0) as u32).collect();
        let data = view(vec![x.clone(), x]);
        let rows: Vec<usize> = (0..200).collect();
        assert_eq!(independence_split(&data, &rows, &[0, 1], 0.001), None);
    }

    #[test]
    fn dependent_pair_and_independent_third() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 5000;
        let x: Vec<u32> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let y: Vec<u32> = x.iter().map(|&v| if rng.gen_bool(0.9) { v } else { 1 - v }).collect();
        let z: Vec<u32> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let data = view(vec![x, y, z]);
        let rows: Vec<usize> = (0..n).collect();
        assert_eq!(
            independence_split(&data, &rows, &[0, 1, 2], 0.001),
            Some(vec![vec![0, 1], vec![2]])
        );
    }

    #[test]
    fn constant_column_is_independent() {
        let data = view(vec![vec![1; 50], (0..50).map(|i| i % 2).collect()]);
        let rows: Vec<usize> = (0..50).collect();
        assert_eq!(g_test_pvalue(&data, &rows, 0, 1), 1.0);
    }

    #[test]
    fn constrained_split_keeps_future_together() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4000;
        let a: Vec<u32> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let f1: Vec<u32> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let f2: Vec<u32> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let data = view(vec![a, f1, f2]);
        let rows: Vec<usize> = (0..n).collect();
        assert_eq!(
            constrained_split(&data, &rows, &[0], &[1, 2], 0.001),
            Some(vec![vec![0], vec![1, 2]])
        );
        let dep = view(vec![data.column(1).to_vec(), data.column(1).to_vec(), data.column(2).to_vec()]);
        assert_eq!(constrained_split(&dep, &rows, &[0], &[1, 2], 0.001), None);
    }
}
