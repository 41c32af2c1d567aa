//! Structure learning of a two-step network from wrapped data.

mod cluster;
mod independence;
mod learn;

pub use cluster::cluster_rows;
pub use independence::{constrained_split, g_test_pvalue, independence_split};
pub use learn::{learn_spmn, LearnParams};

use crate::data::TwoStepTable;

/// Column-major categorical codes. Utility columns are coded by value rank,
/// bucketized by quantile when they have more than `buckets` distinct values.
#[derive(Debug, Clone)]
pub struct CategoricalView {
    codes: Vec<Vec<u32>>,
    cards: Vec<u32>,
}

impl CategoricalView {
    /// `codes[c][r]` is the value of column `c` in row `r`; `cards[c]` bounds it.
    pub fn new(codes: Vec<Vec<u32>>, cards: Vec<u32>) -> Self {
        assert_eq!(codes.len(), cards.len());
        debug_assert!(codes.iter().zip(&cards).all(|(col, &k)| col.iter().all(|&v| v < k)));
        CategoricalView { codes, cards }
    }

    pub fn from_table(table: &TwoStepTable, cards: &[u32], buckets: usize) -> Self {
        let n = table.num_columns();
        let rows = table.len();
        let mut codes = Vec::with_capacity(n);
        let mut out_cards = Vec::with_capacity(n);
        for col in 0..n {
            if table.is_utility(col) {
                let values: Vec<f64> = (0..rows).map(|r| table.utility(r, col)).collect();
                let (c, k) = utility_codes(&values, buckets);
                codes.push(c);
                out_cards.push(k);
            } else {
                codes.push((0..rows).map(|r| table.value(r, col)).collect());
                out_cards.push(cards[col % table.num_vars()]);
            }
        }
        CategoricalView { codes, cards: out_cards }
    }

    pub fn code(&self, row: usize, col: usize) -> u32 {
        self.codes[col][row]
    }

    pub fn column(&self, col: usize) -> &[u32] {
        &self.codes[col]
    }

    pub fn cardinality(&self, col: usize) -> u32 {
        self.cards[col]
    }

    pub fn num_columns(&self) -> usize {
        self.codes.len()
    }

    pub fn num_rows(&self) -> usize {
        self.codes.first().map_or(0, Vec::len)
    }
}

/// Groups real values into distinct-value codes, merged into at most `buckets`
/// quantile buckets. Returns per-value codes and the code count.
pub(crate) fn utility_codes(values: &[f64], buckets: usize) -> (Vec<u32>, u32) {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let rank = |v: f64| distinct.binary_search_by(|d| d.total_cmp(&v)).expect("present");
    if distinct.len() <= buckets {
        let codes = values.iter().map(|&v| rank(v) as u32).collect();
        return (codes, distinct.len().max(1) as u32);
    }
    let bounds = quantile_bounds(values, buckets);
    let codes = values.iter().map(|&v| bucket_of(&bounds, v) as u32).collect();
    (codes, bounds.len() as u32 + 1)
}

/// Upper edges of equal-frequency buckets (strictly increasing).
pub(crate) fn quantile_bounds(values: &[f64], buckets: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut bounds: Vec<f64> = Vec::new();
    for b in 1..buckets {
        let edge = sorted[(b * n / buckets).min(n - 1)];
        if bounds.last().is_none_or(|&l| edge > l) && edge < sorted[n - 1] {
            bounds.push(edge);
        }
    }
    bounds
}

pub(crate) fn bucket_of(bounds: &[f64], v: f64) -> usize {
    bounds.partition_point(|&b| b < v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn few_utilities_keep_their_rank() {
        let (codes, k) = utility_codes(&[3.0, -1.0, 3.0, 9.0], 64);
        assert_eq!((codes, k), (vec![1, 0, 1, 2], 3));
    }

    #[test]
    fn many_utilities_are_bucketized() {
        let values: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        let (codes, k) = utility_codes(&values, 64);
        assert!(k <= 64);
        assert!(codes.windows(2).all(|w| w[0] <= w[1]));
        let mut counts = vec![0; k as usize];
        codes.iter().for_each(|&c| counts[c as usize] += 1);
        assert!(counts.iter().all(|&c| (10..=20).contains(&c)));
    }
}
