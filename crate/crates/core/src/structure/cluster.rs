use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::CategoricalView;

const MAX_ITERS: usize = 100;

/// Hard k-modes partition of `rows` on the columns `cols`.
///
/// Works on distinct row patterns weighted by multiplicity, Hamming distance,
/// ties to the lowest cluster index. Best of `restarts` seeded runs by total
/// cost. Empty clusters are dropped; with no more than `k` distinct patterns
/// each pattern is its own cluster. Clusters are ordered by their first row.
pub fn cluster_rows(
    data: &CategoricalView,
    rows: &[usize],
    cols: &[usize],
    k: usize,
    restarts: usize,
    seed: u64,
) -> Vec<Vec<usize>> {
    assert!(k >= 2, "k must be at least 2");
    let mut by_pattern: BTreeMap<Vec<u32>, Vec<usize>> = BTreeMap::new();
    for &r in rows {
        let p: Vec<u32> = cols.iter().map(|&c| data.code(r, c)).collect();
        by_pattern.entry(p).or_default().push(r);
    }
    let patterns: Vec<Vec<u32>> = by_pattern.keys().cloned().collect();
    let weights: Vec<usize> = by_pattern.values().map(Vec::len).collect();

    let assignment: Vec<usize> = if patterns.len() <= k {
        (0..patterns.len()).collect()
    } else {
        let cards: Vec<u32> = cols.iter().map(|&c| data.cardinality(c)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: Option<(usize, Vec<usize>)> = None;
        for _ in 0..restarts.max(1) {
            let init: Vec<Vec<u32>> =
                sample(&mut rng, patterns.len(), k).into_iter().map(|i| patterns[i].clone()).collect();
            let (cost, assign) = run_kmodes(&patterns, &weights, &cards, init);
            if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                best = Some((cost, assign));
            }
        }
        best.expect("at least one restart").1
    };

    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); k.max(patterns.len())];
    for (p, &c) in by_pattern.values().zip(&assignment) {
        clusters[c].extend_from_slice(p);
    }
    let mut out: Vec<Vec<usize>> = clusters.into_iter().filter(|c| !c.is_empty()).collect();
    for c in &mut out {
        c.sort_unstable();
    }
    out.sort_by_key(|c| c[0]);
    out
}

fn hamming(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn nearest(p: &[u32], modes: &[Vec<u32>]) -> (usize, usize) {
    let mut best = (0, usize::MAX);
    for (i, m) in modes.iter().enumerate() {
        let d = hamming(p, m);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn run_kmodes(
    patterns: &[Vec<u32>],
    weights: &[usize],
    cards: &[u32],
    mut modes: Vec<Vec<u32>>,
) -> (usize, Vec<usize>) {
    let mut assign: Vec<usize> = patterns.iter().map(|p| nearest(p, &modes).0).collect();
    for _ in 0..MAX_ITERS {
        for (c, mode) in modes.iter_mut().enumerate() {
            for (j, slot) in mode.iter_mut().enumerate() {
                let mut counts = vec![0usize; cards[j] as usize];
                let mut any = false;
                for (p, (&a, &w)) in patterns.iter().zip(assign.iter().zip(weights)) {
                    if a == c {
                        counts[p[j] as usize] += w;
                        any = true;
                    }
                }
                if any {
                    // first maximum keeps the lowest value on ties
                    let (v, _) = counts
                        .iter()
                        .enumerate()
                        .fold((0, 0), |acc, (v, &n)| if n > acc.1 { (v, n) } else { acc });
                    *slot = v as u32;
                }
            }
        }
        let next: Vec<usize> = patterns.iter().map(|p| nearest(p, &modes).0).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    let cost = patterns
        .iter()
        .zip(&assign)
        .zip(weights)
        .map(|((p, &a), &w)| w * hamming(p, &modes[a]))
        .sum();
    (cost, assign)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(cols: Vec<Vec<u32>>) -> CategoricalView {
        let cards = cols.iter().map(|_| 4).collect();
        CategoricalView::new(cols, cards)
    }

    #[test]
    fn identical_rows_form_one_cluster() {
        let data = view(vec![vec![1; 10], vec![2; 10]]);
        let rows: Vec<usize> = (0..10).collect();
        assert_eq!(cluster_rows(&data, &rows, &[0, 1], 2, 3, 42), vec![rows]);
    }

    #[test]
    fn separated_populations_are_recovered() {
        let pattern = |i: usize| if i % 3 == 0 { 1 } else { 0 };
        let cols: Vec<Vec<u32>> = (0..4).map(|_| (0..30).map(pattern).collect()).collect();
        let data = view(cols);
        let rows: Vec<usize> = (0..30).collect();
        let out = cluster_rows(&data, &rows, &[0, 1, 2, 3], 2, 3, 1);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|c| c.iter().all(|&r| pattern(r) == pattern(c[0]))));
    }

    #[test]
    fn deterministic_given_seed() {
        let cols: Vec<Vec<u32>> =
            (0..3).map(|j| (0..60).map(|i| ((i * (j + 3) / 7) % 4) as u32).collect()).collect();
        let data = view(cols);
        let rows: Vec<usize> = (0..60).collect();
        let a = cluster_rows(&data, &rows, &[0, 1, 2], 2, 3, 9);
        assert_eq!(a, cluster_rows(&data, &rows, &[0, 1, 2], 2, 3, 9));
        assert!(a.len() == 2);
        let mut all: Vec<usize> = a.concat();
        all.sort_unstable();
        assert_eq!(all, rows);
    }

    #[test]
    fn few_patterns_each_get_a_cluster() {
        let data = view(vec![vec![0, 1, 0, 1]]);
        assert_eq!(cluster_rows(&data, &[0, 1, 2, 3], &[0], 3, 3, 0), vec![vec![0, 2], vec![1, 3]]);
    }
}
