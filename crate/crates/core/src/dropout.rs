//! Two-phase token dropout inside the attention stack.
//!
//! Early layers drop tokens uniformly: every unprotected token survives a
//! layer independently with probability `keep_prob`. Deep layers keep the
//! tokens that receive the most head-averaged attention from the query
//! tokens. Dropped tokens are removed from the sequence, so later layers run
//! on fewer tokens.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedSpec;
use crate::tokens::TokenSeq;
use crate::toyattn::{AttnMap, AttnStack, QueryAttention};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutConfig {
    pub keep_prob: f64,
    #[serde(default)]
    pub early_layers: BTreeSet<usize>,
    #[serde(default)]
    pub deep_layers: BTreeSet<usize>,
    pub deep_keep_ratio: f64,
    /// Never dropped by either phase.
    #[serde(default)]
    pub anchor_ids: BTreeSet<u64>,
    /// Rows used to score tokens in deep layers; `None` means the anchors.
    #[serde(default)]
    pub query_ids: Option<BTreeSet<u64>>,
}

impl DropoutConfig {
    /// No dropout at all.
    pub fn lossless() -> Self {
        Self {
            keep_prob: 1.0,
            early_layers: BTreeSet::new(),
            deep_layers: BTreeSet::new(),
            deep_keep_ratio: 1.0,
            anchor_ids: BTreeSet::new(),
            query_ids: None,
        }
    }

    /// First half of the layers uniform, second half attention-guided.
    pub fn split(num_layers: usize, keep_prob: f64, deep_keep_ratio: f64) -> Self {
        let half = num_layers / 2;
        Self {
            keep_prob,
            early_layers: (0..half).collect(),
            deep_layers: (half..num_layers).collect(),
            deep_keep_ratio,
            anchor_ids: BTreeSet::new(),
            query_ids: None,
        }
    }

    pub fn with_anchors(mut self, anchors: impl IntoIterator<Item = u64>) -> Self {
        self.anchor_ids.extend(anchors);
        self
    }

    pub fn queries(&self) -> &BTreeSet<u64> {
        self.query_ids.as_ref().unwrap_or(&self.anchor_ids)
    }

    /// Anchors plus queries; uniform pruning never touches these.
    fn protected(&self) -> BTreeSet<u64> {
        self.anchor_ids.union(self.queries()).copied().collect()
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        check_keep_prob(self.keep_prob).map_err(|_| Error::config("keep_prob", "must lie in (0, 1]"))?;
        check_ratio(self.deep_keep_ratio)
            .map_err(|_| Error::config("deep_keep_ratio", "must lie in (0, 1]"))?;
        if let Some(l) = self.early_layers.iter().find(|&&l| l >= num_layers) {
            return Err(Error::config(
                "early_layers",
                format!("layer {l} out of range for {num_layers} layers"),
            ));
        }
        if let Some(l) = self.deep_layers.iter().find(|&&l| l >= num_layers) {
            return Err(Error::config(
                "deep_layers",
                format!("layer {l} out of range for {num_layers} layers"),
            ));
        }
        if let Some(l) = self.early_layers.intersection(&self.deep_layers).next() {
            return Err(Error::config(
                "deep_layers",
                format!("layer {l} is also an early layer"),
            ));
        }
        Ok(())
    }
}

/// Survivor ids after every layer, plus the final set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivorSet {
    pub per_layer: Vec<Vec<u64>>,
    pub final_ids: Vec<u64>,
}

fn check_keep_prob(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("keep probability {p} outside (0, 1]")))
    }
}

fn check_ratio(rho: f64) -> Result<()> {
    if rho > 0.0 && rho <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("keep ratio {rho} outside (0, 1]")))
    }
}

/// Keeps each unprotected token with probability `p`, drawing one uniform
/// from the seeded stream per unprotected token, in sequence order.
pub fn uniform_prune(
    tokens: &TokenSeq,
    p: f64,
    protected: &BTreeSet<u64>,
    seed: &SeedSpec,
) -> Result<(TokenSeq, Vec<u64>)> {
    check_keep_prob(p)?;
    let mut rng = seed.rng();
    let keep: Vec<usize> = tokens
        .ids()
        .iter()
        .enumerate()
        .filter(|(_, id)| protected.contains(id) || rng.random::<f64>() < p)
        .map(|(i, _)| i)
        .collect();
    let out = tokens.select(&keep);
    let ids = out.ids().to_vec();
    Ok((out, ids))
}

/// Number of non-query tokens retained at ratio `rho`: `ceil(rho · n)`,
/// with a small tolerance so that e.g. `0.3 · 10` keeps 3, and at least one
/// token whenever any exist.
pub fn retained_count(rho: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let k = (rho * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

fn query_positions(tokens: &TokenSeq, query_ids: &BTreeSet<u64>) -> Result<Vec<usize>> {
    if query_ids.is_empty() {
        return Err(Error::invalid("attention-guided selection needs at least one query token"));
    }
    let positions: Vec<usize> = tokens
        .ids()
        .iter()
        .enumerate()
        .filter(|(_, id)| query_ids.contains(id))
        .map(|(i, _)| i)
        .collect();
    if positions.len() != query_ids.len() {
        return Err(Error::invalid("query ids are not all present in the token sequence"));
    }
    Ok(positions)
}

fn select_by_mass(
    tokens: &TokenSeq,
    attn: &QueryAttention,
    query_ids: &BTreeSet<u64>,
    rho: f64,
) -> (TokenSeq, Vec<u64>) {
    let mass = attn.received_mass();
    let ids = tokens.ids();
    let mut candidates: Vec<usize> = (0..tokens.len())
        .filter(|&i| !query_ids.contains(&ids[i]))
        .collect();
    let k = retained_count(rho, candidates.len());
    candidates.sort_by(|&a, &b| {
        mass[b]
            .partial_cmp(&mass[a])
            .unwrap_or(Ordering::Equal)
            .then(ids[a].cmp(&ids[b]))
    });
    let chosen: BTreeSet<usize> = candidates.into_iter().take(k).collect();
    let keep: Vec<usize> = (0..tokens.len())
        .filter(|i| chosen.contains(i) || query_ids.contains(&ids[*i]))
        .collect();
    let out = tokens.select(&keep);
    let kept = out.ids().to_vec();
    (out, kept)
}

/// Keeps every query token plus the `ceil(rho · n)` non-query tokens that
/// receive the most head-averaged attention from the query rows.
pub fn attention_select(
    tokens: &TokenSeq,
    attn: &AttnMap,
    query_ids: &BTreeSet<u64>,
    rho: f64,
) -> Result<(TokenSeq, Vec<u64>)> {
    check_ratio(rho)?;
    if attn.count() != tokens.len() {
        return Err(Error::invalid("attention map does not match the token count"));
    }
    let positions = query_positions(tokens, query_ids)?;
    Ok(select_by_mass(tokens, &attn.query_rows(&positions), query_ids, rho))
}

fn check_run(stack: &AttnStack, tokens: &TokenSeq, cfg: &DropoutConfig) -> Result<()> {
    cfg.validate(stack.layers())?;
    if tokens.dim() != stack.model_dim() {
        return Err(Error::invalid("token dim does not match the stack"));
    }
    if !cfg.deep_layers.is_empty() {
        query_positions(tokens, cfg.queries())?;
    }
    Ok(())
}

fn layer_seed(seed: &SeedSpec, layer: usize) -> SeedSpec {
    seed.child("prune-layer", layer as i64)
}

/// Runs every layer of `stack`, pruning after each early layer and selecting
/// after each deep layer.
pub fn run_with_dropout(
    stack: &AttnStack,
    tokens: &TokenSeq,
    cfg: &DropoutConfig,
    seed: &SeedSpec,
) -> Result<(TokenSeq, SurvivorSet)> {
    check_run(stack, tokens, cfg)?;
    let protected = cfg.protected();
    let mut x = tokens.clone();
    let mut per_layer = Vec::with_capacity(stack.layers());
    for layer in 0..stack.layers() {
        let (y, map) = stack.forward_layer(layer, &x)?;
        x = if cfg.early_layers.contains(&layer) {
            uniform_prune(&y, cfg.keep_prob, &protected, &layer_seed(seed, layer))?.0
        } else if cfg.deep_layers.contains(&layer) {
            attention_select(&y, &map, cfg.queries(), cfg.deep_keep_ratio)?.0
        } else {
            y
        };
        per_layer.push(x.ids().to_vec());
    }
    let final_ids = x.ids().to_vec();
    Ok((
        x,
        SurvivorSet {
            per_layer,
            final_ids,
        },
    ))
}

/// The survivor history of [`run_with_dropout`] without the final features.
///
/// Survival only depends on layer outputs up to the last deep layer that
/// actually drops tokens, and at that layer only on the query rows of the
/// attention map. Layers past it are not evaluated and that last map is
/// computed for the query rows alone. The history is identical to the one
/// `run_with_dropout` returns for the same inputs.
pub fn trace_survivors(
    stack: &AttnStack,
    tokens: &TokenSeq,
    cfg: &DropoutConfig,
    seed: &SeedSpec,
) -> Result<SurvivorSet> {
    check_run(stack, tokens, cfg)?;
    let protected = cfg.protected();
    let queries = cfg.queries();
    let selective = cfg.deep_keep_ratio < 1.0;
    let last_selective = if selective {
        cfg.deep_layers.iter().next_back().copied()
    } else {
        None
    };

    let mut x = tokens.clone();
    let mut per_layer = Vec::with_capacity(stack.layers());
    for layer in 0..stack.layers() {
        let needs_forward = last_selective.is_some_and(|last| layer < last);
        if cfg.early_layers.contains(&layer) {
            let y = if needs_forward {
                stack.forward_layer(layer, &x)?.0
            } else {
                x
            };
            x = uniform_prune(&y, cfg.keep_prob, &protected, &layer_seed(seed, layer))?.0;
        } else if cfg.deep_layers.contains(&layer) && selective {
            if needs_forward {
                let (y, map) = stack.forward_layer(layer, &x)?;
                x = attention_select(&y, &map, queries, cfg.deep_keep_ratio)?.0;
            } else {
                let positions = query_positions(&x, queries)?;
                let rows = stack.query_attention(layer, &x, &positions)?;
                x = select_by_mass(&x, &rows, queries, cfg.deep_keep_ratio).0;
            }
        } else if needs_forward {
            x = stack.forward_layer(layer, &x)?.0;
        }
        per_layer.push(x.ids().to_vec());
    }
    let final_ids = x.ids().to_vec();
    Ok(SurvivorSet {
        per_layer,
        final_ids,
    })
}
