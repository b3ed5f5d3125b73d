//! Fixed-weight multi-head self-attention and the multi-task loss.
//!
//! The stack has no positional encoding and no training: weights are drawn
//! once from a seeded Gaussian with standard deviation `1/sqrt(D)`. It exists
//! to produce realistic attention distributions for attention-guided token
//! selection, and to run deterministic forward passes over token sequences.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedSpec;
use crate::tokens::{dot, TokenSeq};

#[derive(Debug, Clone, PartialEq)]
struct LayerWeights {
    // D×D, row-major, applied as x · W.
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    wo: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnStack {
    layers: usize,
    heads: usize,
    model_dim: usize,
    weights: Vec<LayerWeights>,
}

/// Per-head attention probabilities, each a `count × count` row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnMap {
    count: usize,
    heads: Vec<Vec<f64>>,
}

impl AttnMap {
    /// Wraps externally computed per-head `count × count` matrices.
    pub fn from_heads(count: usize, heads: Vec<Vec<f64>>) -> Result<Self> {
        if heads.is_empty() || heads.iter().any(|h| h.len() != count * count) {
            return Err(Error::invalid("attention heads must be count × count"));
        }
        Ok(Self { count, heads })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn row(&self, head: usize, query: usize) -> &[f64] {
        &self.heads[head][query * self.count..(query + 1) * self.count]
    }

    pub fn head(&self, head: usize) -> &[f64] {
        &self.heads[head]
    }

    /// Extracts the rows of the given query positions.
    pub fn query_rows(&self, positions: &[usize]) -> QueryAttention {
        let rows = self
            .heads
            .iter()
            .map(|m| {
                positions
                    .iter()
                    .flat_map(|&q| m[q * self.count..(q + 1) * self.count].iter().copied())
                    .collect()
            })
            .collect();
        QueryAttention {
            count: self.count,
            queries: positions.to_vec(),
            rows,
        }
    }
}

/// Attention rows for a subset of query positions, per head.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryAttention {
    count: usize,
    queries: Vec<usize>,
    // rows[h] is queries.len() × count.
    rows: Vec<Vec<f64>>,
}

impl QueryAttention {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn queries(&self) -> &[usize] {
        &self.queries
    }

    /// Head-averaged attention mass each key position receives from the queries.
    pub fn received_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.count];
        if self.count == 0 {
            return mass;
        }
        for head in &self.rows {
            for row in head.chunks_exact(self.count) {
                for (m, a) in mass.iter_mut().zip(row) {
                    *m += a;
                }
            }
        }
        let h = self.rows.len() as f64;
        mass.iter_mut().for_each(|m| *m /= h);
        mass
    }
}

fn random_matrix<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let scale = 1.0 / (dim as f64).sqrt();
    (0..dim * dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect()
}

/// `rows (n×D) · w (D×D)`.
fn project(rows: &[f64], w: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows.len()];
    out.par_chunks_mut(dim)
        .zip(rows.par_chunks(dim))
        .for_each(|(o, x)| {
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let wrow = &w[i * dim..(i + 1) * dim];
                for (oj, wij) in o.iter_mut().zip(wrow) {
                    *oj += xi * wij;
                }
            }
        });
    out
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

struct Projected {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
}

impl AttnStack {
    pub fn new(layers: usize, heads: usize, model_dim: usize, seed: &SeedSpec) -> Result<Self> {
        if layers == 0 || heads == 0 || model_dim == 0 {
            return Err(Error::invalid("layers, heads and model_dim must be positive"));
        }
        if model_dim % heads != 0 {
            return Err(Error::invalid(format!(
                "model_dim {model_dim} is not divisible by {heads} heads"
            )));
        }
        let weights = (0..layers)
            .map(|l| {
                let mut rng = seed.child("attn-layer", l as i64).rng();
                LayerWeights {
                    wq: random_matrix(&mut rng, model_dim),
                    wk: random_matrix(&mut rng, model_dim),
                    wv: random_matrix(&mut rng, model_dim),
                    wo: random_matrix(&mut rng, model_dim),
                }
            })
            .collect();
        Ok(Self {
            layers,
            heads,
            model_dim,
            weights,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn model_dim(&self) -> usize {
        self.model_dim
    }

    fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    fn check(&self, layer: usize, tokens: &TokenSeq) -> Result<()> {
        if layer >= self.layers {
            return Err(Error::invalid(format!(
                "layer {layer} out of range for a {}-layer stack",
                self.layers
            )));
        }
        if tokens.dim() != self.model_dim {
            return Err(Error::invalid(format!(
                "token dim {} does not match model dim {}",
                tokens.dim(),
                self.model_dim
            )));
        }
        Ok(())
    }

    fn project_all(&self, layer: usize, tokens: &TokenSeq) -> Projected {
        let w = &self.weights[layer];
        let x = tokens.features();
        Projected {
            q: project(x, &w.wq, self.model_dim),
            k: project(x, &w.wk, self.model_dim),
            v: project(x, &w.wv, self.model_dim),
        }
    }

    /// Softmax row of query `i` for `head`, written into `row` (length n).
    fn attention_row(&self, p: &Projected, head: usize, i: usize, row: &mut [f64]) {
        let d = self.model_dim;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let off = head * dh;
        let qi = &p.q[i * d + off..i * d + off + dh];
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = dot(qi, &p.k[j * d + off..j * d + off + dh]) * scale;
        }
        softmax_in_place(row);
    }

    /// One attention layer with a residual connection.
    pub fn forward_layer(&self, layer: usize, tokens: &TokenSeq) -> Result<(TokenSeq, AttnMap)> {
        self.check(layer, tokens)?;
        let n = tokens.len();
        let d = self.model_dim;
        let dh = self.head_dim();
        if n == 0 {
            return Ok((
                tokens.clone(),
                AttnMap {
                    count: 0,
                    heads: vec![Vec::new(); self.heads],
                },
            ));
        }
        let p = self.project_all(layer, tokens);

        let mut heads = vec![vec![0.0; n * n]; self.heads];
        let mut mixed = vec![0.0; n * d];
        for (h, map) in heads.iter_mut().enumerate() {
            let off = h * dh;
            map.par_chunks_mut(n)
                .zip(mixed.par_chunks_mut(d))
                .enumerate()
                .for_each(|(i, (row, out))| {
                    self.attention_row(&p, h, i, row);
                    let out = &mut out[off..off + dh];
                    for (j, &a) in row.iter().enumerate() {
                        let vj = &p.v[j * d + off..j * d + off + dh];
                        for (o, v) in out.iter_mut().zip(vj) {
                            *o += a * v;
                        }
                    }
                });
        }

        let delta = project(&mixed, &self.weights[layer].wo, d);
        let features = tokens
            .features()
            .iter()
            .zip(&delta)
            .map(|(x, dx)| x + dx)
            .collect();
        let out = tokens.with_features(features)?;
        Ok((out, AttnMap { count: n, heads }))
    }

    /// Attention rows of `query_positions` at `layer`, without running the
    /// rest of the layer. Rows are bit-identical to the matching rows of
    /// [`AttnStack::forward_layer`]'s map.
    pub fn query_attention(
        &self,
        layer: usize,
        tokens: &TokenSeq,
        query_positions: &[usize],
    ) -> Result<QueryAttention> {
        self.check(layer, tokens)?;
        let n = tokens.len();
        if let Some(&q) = query_positions.iter().find(|&&q| q >= n) {
            return Err(Error::invalid(format!("query position {q} out of range")));
        }
        let p = self.project_all(layer, tokens);
        let rows = (0..self.heads)
            .map(|h| {
                let mut rows = vec![0.0; query_positions.len() * n];
                for (row, &q) in rows.chunks_exact_mut(n.max(1)).zip(query_positions) {
                    self.attention_row(&p, h, q, row);
                }
                rows
            })
            .collect();
        Ok(QueryAttention {
            count: n,
            queries: query_positions.to_vec(),
            rows,
        })
    }
}

/// Components of the multi-task objective
/// `base + lambda1 · task + lambda2 · Σ spec[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub base: f64,
    pub task: f64,
    pub spec: Vec<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub base: f64,
    pub task: f64,
    pub spec: Vec<f64>,
}

impl LossTerms {
    fn check_finite(&self) -> Result<()> {
        let named = [
            ("base", self.base),
            ("task", self.task),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!("loss term `{name}` is not finite")));
        }
        if let Some(k) = self.spec.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("loss term `spec[{k}]` is not finite")));
        }
        Ok(())
    }
}

pub fn compose_total_loss(terms: &LossTerms) -> Result<f64> {
    terms.check_finite()?;
    let spec_sum: f64 = terms.spec.iter().sum();
    Ok(terms.base + terms.lambda1 * terms.task + terms.lambda2 * spec_sum)
}

/// Partial derivatives of [`compose_total_loss`] with respect to each term.
pub fn loss_gradient(terms: &LossTerms) -> Result<LossGradient> {
    terms.check_finite()?;
    Ok(LossGradient {
        base: 1.0,
        task: terms.lambda1,
        spec: vec![terms.lambda2; terms.spec.len()],
    })
}
