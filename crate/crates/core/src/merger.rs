//! Token connector: compress a clip's tokens by bipartite soft matching.
//!
//! One matching step splits the sequence by position parity into a source
//! set (even positions) and a destination set (odd positions), pairs every
//! source with its most similar destination, and folds the `r` best-matched
//! sources into their destinations. Ties between sources go to the lower
//! position; ties between destinations go to the first one after the source
//! (wrapping around). Features are averaged with the token
//! sizes as weights and the sizes are summed, so a merged token is always the
//! size-weighted mean of the original tokens it absorbed.
//!
//! [`compress_segment`] repeats the step, halving the sequence each time,
//! until the target count is reached. The returned [`MergeTrace`] records
//! which input ids ended up in each output token.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokens::{cosine_with_norms, norm, TokenSeq};

/// Provenance of a merge: `clusters[i]` holds the input ids folded into
/// output token `i`, sorted ascending.
///
/// The id an output token carries is always a member of its own cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeTrace {
    pub clusters: Vec<Vec<u64>>,
    pub iterations_used: usize,
}

impl MergeTrace {
    pub fn identity(ids: &[u64]) -> Self {
        Self {
            clusters: ids.iter().map(|&id| vec![id]).collect(),
            iterations_used: 0,
        }
    }

    /// True if the clusters are disjoint and cover exactly `ids`.
    pub fn is_partition_of(&self, ids: &[u64]) -> bool {
        let mut all: Vec<u64> = self.clusters.iter().flatten().copied().collect();
        all.sort_unstable();
        let mut expected = ids.to_vec();
        expected.sort_unstable();
        all == expected && self.clusters.iter().all(|c| !c.is_empty())
    }

    /// Re-expresses `self` (whose clusters are in terms of `inner`'s output
    /// ids) in terms of `inner`'s input ids.
    fn compose_onto(&self, inner_ids: &[u64], inner: &MergeTrace) -> MergeTrace {
        let lookup: HashMap<u64, usize> = inner_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        let clusters = self
            .clusters
            .iter()
            .map(|cluster| {
                let mut merged: Vec<u64> = cluster
                    .iter()
                    .flat_map(|id| inner.clusters[lookup[id]].iter().copied())
                    .collect();
                merged.sort_unstable();
                merged
            })
            .collect();
        MergeTrace {
            clusters,
            iterations_used: inner.iterations_used + self.iterations_used,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeConfig {
    pub target_n: usize,
    pub max_iterations: usize,
}

impl MergeConfig {
    /// Target `target_n` tokens with a generous iteration cap.
    pub fn new(target_n: usize) -> Self {
        Self {
            target_n,
            max_iterations: 64,
        }
    }

    /// Target `target_n` with the minimal cap that still reaches it from `m` tokens.
    pub fn tight(m: usize, target_n: usize) -> Self {
        Self {
            target_n,
            max_iterations: min_iterations(m, target_n).max(1),
        }
    }
}

/// `ceil(log2(m / n))`: the number of halving steps needed to go from `m`
/// to `n` tokens.
pub fn min_iterations(m: usize, n: usize) -> usize {
    assert!(n >= 1);
    let mut steps = 0;
    let mut reach = n as u128;
    while reach < m as u128 {
        reach *= 2;
        steps += 1;
    }
    steps
}

/// One bipartite soft matching step removing exactly `r` tokens.
pub fn bipartite_match_step(tokens: &TokenSeq, r: usize) -> Result<(TokenSeq, MergeTrace)> {
    let n = tokens.len();
    if r == 0 {
        return Ok((tokens.clone(), MergeTrace::identity(tokens.ids())));
    }
    if r > n / 2 {
        return Err(Error::invalid(format!(
            "cannot merge {r} tokens out of {n}; at most {} per step",
            n / 2
        )));
    }

    let dim = tokens.dim();
    let norms: Vec<f64> = tokens.rows().map(norm).collect();

    // Best destination (odd position) for each source (even position).
    // Destinations are scanned cyclically starting right after the source, so
    // equal similarities resolve to the nearest following destination.
    let matches: Vec<(usize, usize, f64)> = (0..n)
        .step_by(2)
        .map(|a| {
            let fa = tokens.feature(a);
            let mut best_b = 1;
            let mut best_sim = f64::NEG_INFINITY;
            let after = (a + 1..n).step_by(2);
            let before = (1..a).step_by(2);
            for b in after.chain(before) {
                let sim = cosine_with_norms(fa, tokens.feature(b), norms[a], norms[b]);
                if sim > best_sim {
                    best_sim = sim;
                    best_b = b;
                }
            }
            (a, best_b, best_sim)
        })
        .collect();

    let mut ranked: Vec<&(usize, usize, f64)> = matches.iter().collect();
    ranked.sort_by(|x, y| {
        y.2.partial_cmp(&x.2)
            .unwrap_or(Ordering::Equal)
            .then(x.0.cmp(&y.0))
    });

    // merged_into[a] = destination position for merged sources.
    let mut merged_into: Vec<Option<usize>> = vec![None; n];
    for &&(a, b, _) in ranked.iter().take(r) {
        merged_into[a] = Some(b);
    }

    // Sources absorbed by each destination, in source position order.
    let mut absorbed: Vec<Vec<usize>> = vec![Vec::new(); n];
    for a in (0..n).step_by(2) {
        if let Some(b) = merged_into[a] {
            absorbed[b].push(a);
        }
    }

    let out_len = n - r;
    let mut features = Vec::with_capacity(out_len * dim);
    let mut sizes = Vec::with_capacity(out_len);
    let mut ids = Vec::with_capacity(out_len);
    let mut clusters = Vec::with_capacity(out_len);

    for p in 0..n {
        if merged_into[p].is_some() {
            continue;
        }
        let id = tokens.ids()[p];
        if absorbed[p].is_empty() {
            features.extend_from_slice(tokens.feature(p));
            sizes.push(tokens.sizes()[p]);
            ids.push(id);
            clusters.push(vec![id]);
            continue;
        }
        let mut total = tokens.sizes()[p];
        let mut acc: Vec<f64> = tokens.feature(p).iter().map(|x| x * total).collect();
        let mut cluster = vec![id];
        for &a in &absorbed[p] {
            let s = tokens.sizes()[a];
            for (slot, x) in acc.iter_mut().zip(tokens.feature(a)) {
                *slot += s * x;
            }
            total += s;
            cluster.push(tokens.ids()[a]);
        }
        acc.iter_mut().for_each(|x| *x /= total);
        cluster.sort_unstable();
        features.extend_from_slice(&acc);
        sizes.push(total);
        ids.push(id);
        clusters.push(cluster);
    }

    let out = TokenSeq::from_parts_unchecked(dim, features, sizes, ids);
    Ok((
        out,
        MergeTrace {
            clusters,
            iterations_used: 1,
        },
    ))
}

/// Compresses `tokens` to `cfg.target_n` tokens by repeated matching steps.
pub fn compress_segment(tokens: &TokenSeq, cfg: &MergeConfig) -> Result<(TokenSeq, MergeTrace)> {
    let m = tokens.len();
    if cfg.target_n == 0 {
        return Err(Error::invalid("target_n must be at least 1"));
    }
    if cfg.target_n > m {
        return Err(Error::invalid(format!(
            "target_n {} exceeds the {m} input tokens",
            cfg.target_n
        )));
    }

    let mut current = tokens.clone();
    let mut trace = MergeTrace::identity(tokens.ids());
    while current.len() > cfg.target_n {
        if trace.iterations_used >= cfg.max_iterations {
            return Err(Error::Capacity(format!(
                "{} tokens left after {} iterations, target {}",
                current.len(),
                trace.iterations_used,
                cfg.target_n
            )));
        }
        let count = current.len();
        let r = (count / 2).min(count - cfg.target_n);
        let (next, step) = bipartite_match_step(&current, r)?;
        trace = step.compose_onto(current.ids(), &trace);
        current = next;
    }
    Ok((current, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedSpec;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_tokens(seed: u64, n: usize, dim: usize) -> TokenSeq {
        let mut rng = SeedSpec::new(seed).child("merger-test", 0).rng();
        let features: Vec<f64> = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
        TokenSeq::new(dim, features, vec![1.0; n], (100..100 + n as u64).collect()).unwrap()
    }

    #[test]
    fn identical_tokens_merge_losslessly() {
        let rows = vec![vec![0.3, -1.0, 2.0]; 4];
        let t = TokenSeq::from_rows(&rows, vec![0, 1, 2, 3]).unwrap();
        let (out, trace) = bipartite_match_step(&t, 2).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.sizes(), &[2.0, 2.0]);
        for row in out.rows() {
            for (x, y) in row.iter().zip(&rows[0]) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        assert!(trace.is_partition_of(t.ids()));
    }

    #[test]
    fn zero_r_is_identity() {
        let t = random_tokens(1, 5, 3);
        let (out, trace) = bipartite_match_step(&t, 0).unwrap();
        assert_eq!(out, t);
        assert_eq!(trace, MergeTrace::identity(t.ids()));
    }

    #[test]
    fn oversized_r_is_rejected() {
        let t = random_tokens(1, 5, 3);
        assert!(matches!(bipartite_match_step(&t, 3), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn merge_keeps_survivor_order_and_destination_ids() {
        // Source 0 is nearly parallel to destination 3; source 2 is orthogonal to everything.
        let rows = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.1, 0.0],
        ];
        let t = TokenSeq::from_rows(&rows, vec![10, 11, 12, 13]).unwrap();
        let (out, trace) = bipartite_match_step(&t, 1).unwrap();
        assert_eq!(out.ids(), &[11, 12, 13]);
        assert_eq!(trace.clusters, vec![vec![11], vec![12], vec![10, 13]]);
        assert_eq!(out.feature(2), &[1.0, 0.05, 0.0]);
    }

    #[test]
    fn equal_target_is_identity_with_zero_iterations() {
        let t = random_tokens(2, 12, 4);
        let (out, trace) = compress_segment(&t, &MergeConfig::new(12)).unwrap();
        assert_eq!(out, t);
        assert_eq!(trace.iterations_used, 0);
        assert!(trace.clusters.iter().all(|c| c.len() == 1));
    }

    #[test]
    fn clip_of_2048_compresses_to_128_in_four_steps() {
        let t = random_tokens(3, 2048, 16);
        let (out, trace) = compress_segment(&t, &MergeConfig::tight(2048, 128)).unwrap();
        assert_eq!(out.len(), 128);
        assert_eq!(trace.iterations_used, 4);
        assert!(trace.is_partition_of(t.ids()));
        assert!((out.total_size() - 2048.0).abs() < 1e-9 * 2048.0);
    }

    #[test]
    fn target_errors() {
        let t = random_tokens(4, 10, 3);
        assert!(matches!(compress_segment(&t, &MergeConfig::new(11)), Err(Error::InvalidInput(_))));
        assert!(matches!(compress_segment(&t, &MergeConfig::new(0)), Err(Error::InvalidInput(_))));
        let starved = MergeConfig {
            target_n: 1,
            max_iterations: 2,
        };
        assert!(matches!(compress_segment(&t, &starved), Err(Error::Capacity(_))));
    }

    #[test]
    fn min_iterations_values() {
        assert_eq!(min_iterations(2048, 128), 4);
        assert_eq!(min_iterations(5, 5), 0);
        assert_eq!(min_iterations(9, 2), 3);
        assert_eq!(min_iterations(3, 1), 2);
        assert_eq!(min_iterations(17, 4), 3);
    }

    #[test]
    fn zero_vectors_do_not_abort_merging() {
        let t = TokenSeq::new(2, vec![0.0; 12], vec![1.0; 6], (0..6).collect()).unwrap();
        let (out, trace) = compress_segment(&t, &MergeConfig::new(2)).unwrap();
        assert_eq!(out.len(), 2);
        assert!(trace.is_partition_of(t.ids()));
    }
}
