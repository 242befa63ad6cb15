//! Uniform sampling, without replacement, of same-label and different-label
//! index pairs under a budget.

use rand::seq::index;
use rand::Rng;

/// Sampled index pairs; every pair is `(i, j)` with `i < j`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSample {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    /// Size of the full positive pair space.
    pub available_positives: usize,
    /// Size of the full negative pair space.
    pub available_negatives: usize,
}

/// Members of each group in index order, groups ordered by label value.
fn group_members<L: Ord + Copy>(labels: &[L]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by_key(|&i| (labels[i], i));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut last: Option<L> = None;
    for i in order {
        if last != Some(labels[i]) {
            groups.push(Vec::new());
            last = Some(labels[i]);
        }
        groups.last_mut().unwrap().push(i);
    }
    groups
}

fn draw<R: Rng + ?Sized>(total: usize, budget: usize, rng: &mut R) -> Vec<usize> {
    if budget >= total {
        return (0..total).collect();
    }
    let mut picked = index::sample(rng, total, budget).into_vec();
    picked.sort_unstable();
    picked
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Samples up to `pos_budget` same-label pairs and `neg_budget`
/// different-label pairs, each uniformly without replacement over its pair
/// space. When a budget covers its space every pair is returned.
pub fn sample_pairs<L: Ord + Copy, R: Rng + ?Sized>(
    labels: &[L],
    pos_budget: usize,
    neg_budget: usize,
    rng: &mut R,
) -> PairSample {
    let groups = group_members(labels);

    // Positive space: for every group and every member `a` (by position),
    // the pairs (a, b) with b after a. `rows` holds the cumulative count.
    let mut rows: Vec<(usize, usize, usize)> = Vec::new(); // (end offset, group, position)
    let mut total_pos = 0;
    for (g, members) in groups.iter().enumerate() {
        for a in 0..members.len().saturating_sub(1) {
            total_pos += members.len() - 1 - a;
            rows.push((total_pos, g, a));
        }
    }
    let positives = draw(total_pos, pos_budget, rng)
        .into_iter()
        .map(|t| {
            let r = rows.partition_point(|row| row.0 <= t);
            let (end, g, a) = rows[r];
            let members = &groups[g];
            let width = members.len() - 1 - a;
            let b = a + 1 + (t - (end - width));
            ordered(members[a], members[b])
        })
        .collect();

    // Negative space: blocks of n_a × n_b pairs for every group pair a < b.
    let mut blocks: Vec<(usize, usize, usize)> = Vec::new(); // (end offset, group a, group b)
    let mut total_neg = 0;
    for a in 0..groups.len() {
        for b in a + 1..groups.len() {
            total_neg += groups[a].len() * groups[b].len();
            blocks.push((total_neg, a, b));
        }
    }
    let negatives = draw(total_neg, neg_budget, rng)
        .into_iter()
        .map(|t| {
            let k = blocks.partition_point(|blk| blk.0 <= t);
            let (end, a, b) = blocks[k];
            let size = groups[a].len() * groups[b].len();
            let local = t - (end - size);
            let nb = groups[b].len();
            ordered(groups[a][local / nb], groups[b][local % nb])
        })
        .collect();

    PairSample {
        positives,
        negatives,
        available_positives: total_pos,
        available_negatives: total_neg,
    }
}

/// `x_i − x_j` for every pair.
pub fn pair_diffs<V: AsRef<[f64]>>(points: &[V], pairs: &[(usize, usize)]) -> Vec<Vec<f64>> {
    pairs
        .iter()
        .map(|&(i, j)| {
            points[i]
                .as_ref()
                .iter()
                .zip(points[j].as_ref())
                .map(|(a, b)| a - b)
                .collect()
        })
        .collect()
}
