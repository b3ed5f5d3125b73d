//! Synthetic single-hop needle-in-a-haystack recall.
//!
//! A haystack is a run of random unit-vector frames with one frame replaced
//! by a seeded signature vector (the needle). Each frame expands to a fixed
//! number of noisy tokens, frames are grouped into clips, and every clip is
//! compressed independently by the token connector. The compressed tokens,
//! followed by the signature as a protected query token, then go through
//! two-phase dropout. Retrieval picks the surviving token most similar to
//! the signature, and a trial succeeds only if that token's merge cluster
//! contains an original needle token.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dropout::{trace_survivors, DropoutConfig};
use crate::error::{Error, Result};
use crate::merger::{compress_segment, MergeConfig};
use crate::seed::SeedSpec;
use crate::tokens::{cosine_sim, normalize, TokenSeq};
use crate::toyattn::AttnStack;

/// Recall a context length must reach (row mean) to count as memorized.
pub const MEMORY_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaystackSpec {
    pub total_frames: usize,
    pub needle_depth: f64,
    pub tokens_per_frame: usize,
    pub frames_per_clip: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub seed: SeedSpec,
}

impl HaystackSpec {
    pub fn validate(&self) -> Result<()> {
        if self.total_frames == 0 || self.tokens_per_frame == 0 || self.feature_dim == 0 {
            return Err(Error::invalid("frames, tokens per frame and feature dim must be positive"));
        }
        if self.frames_per_clip == 0 || self.total_frames < self.frames_per_clip {
            return Err(Error::invalid(format!(
                "need at least one full clip: {} frames, {} per clip",
                self.total_frames, self.frames_per_clip
            )));
        }
        if !(0.0..=1.0).contains(&self.needle_depth) {
            return Err(Error::invalid(format!("needle depth {} outside [0, 1]", self.needle_depth)));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("noise sigma must be a non-negative number"));
        }
        let ids = self.total_frames as u128 * self.tokens_per_frame as u128;
        if ids >= u64::MAX as u128 {
            return Err(Error::invalid("haystack too large to index"));
        }
        Ok(())
    }

    pub fn needle_frame(&self) -> usize {
        let last = self.total_frames.saturating_sub(1);
        let idx = (self.needle_depth * last as f64).round();
        (idx.max(0.0) as usize).min(last)
    }

    /// Id given to the signature query token; one past the last haystack id.
    pub fn signature_id(&self) -> u64 {
        (self.total_frames * self.tokens_per_frame) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Haystack {
    pub clips: Vec<TokenSeq>,
    pub needle_ids: Vec<u64>,
    pub signature: Vec<f64>,
    pub needle_frame: usize,
    pub needle_clip: usize,
}

fn unit_gaussian<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&mut v);
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

pub fn generate_haystack(spec: &HaystackSpec) -> Result<Haystack> {
    spec.validate()?;
    let dim = spec.feature_dim;
    let m = spec.tokens_per_frame;
    let needle_frame = spec.needle_frame();
    let signature = unit_gaussian(&mut spec.seed.child("signature", 0).rng(), dim);
    let mut frame_rng = spec.seed.child("frames", 0).rng();
    let mut noise_rng = spec.seed.child("noise", 0).rng();

    let mut clips = Vec::with_capacity(spec.total_frames.div_ceil(spec.frames_per_clip));
    for first in (0..spec.total_frames).step_by(spec.frames_per_clip) {
        let last = (first + spec.frames_per_clip).min(spec.total_frames);
        let count = (last - first) * m;
        let mut features = Vec::with_capacity(count * dim);
        let mut ids = Vec::with_capacity(count);
        for frame in first..last {
            // Haystack frames are drawn even at the needle slot so the stream
            // layout does not depend on the depth.
            let drawn = unit_gaussian(&mut frame_rng, dim);
            let base = if frame == needle_frame { &signature } else { &drawn };
            for k in 0..m {
                if spec.noise_sigma == 0.0 {
                    features.extend_from_slice(base);
                } else {
                    let mut tok: Vec<f64> = base
                        .iter()
                        .map(|x| x + spec.noise_sigma * noise_rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    normalize(&mut tok);
                    features.extend(tok);
                }
                ids.push((frame * m + k) as u64);
            }
        }
        clips.push(TokenSeq::new(dim, features, vec![1.0; count], ids)?);
    }

    let needle_ids = (0..m).map(|k| (needle_frame * m + k) as u64).collect();
    Ok(Haystack {
        clips,
        needle_ids,
        signature,
        needle_frame,
        needle_clip: needle_frame / spec.frames_per_clip,
    })
}

/// Everything about a trial except the haystack itself.
#[derive(Debug, Clone)]
pub struct Pipeline {
    /// Target token count per clip; short trailing clips keep at most their own length.
    pub tokens_per_clip: usize,
    pub max_iterations: usize,
    /// Signature anchoring is added per trial.
    pub dropout: DropoutConfig,
    pub stack: AttnStack,
}

impl Pipeline {
    pub fn merge_config(&self, clip_len: usize) -> MergeConfig {
        MergeConfig {
            target_n: self.tokens_per_clip.min(clip_len),
            max_iterations: self.max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub success: bool,
    pub retrieved_id: u64,
    pub retrieved_similarity: f64,
    /// Original token ids folded into the retrieved token.
    pub retrieved_cluster: Vec<u64>,
    pub tokens_after_merge: usize,
    pub tokens_after_dropout: usize,
}

/// Runs one haystack through compression, dropout and retrieval.
pub fn run_trial(spec: &HaystackSpec, pipeline: &Pipeline) -> Result<TrialOutcome> {
    let hay = generate_haystack(spec)?;
    run_trial_on(spec, &hay, pipeline)
}

pub fn run_trial_on(spec: &HaystackSpec, hay: &Haystack, pipeline: &Pipeline) -> Result<TrialOutcome> {
    if pipeline.stack.model_dim() != spec.feature_dim {
        return Err(Error::invalid("stack model dim differs from the haystack feature dim"));
    }
    let mut merged = Vec::with_capacity(hay.clips.len());
    let mut traces = Vec::with_capacity(hay.clips.len());
    for clip in &hay.clips {
        let (out, trace) = compress_segment(clip, &pipeline.merge_config(clip.len()))?;
        merged.push(out);
        traces.push(trace);
    }
    let mut context = TokenSeq::concat(spec.feature_dim, &merged)?;
    let tokens_after_merge = context.len();

    let sig_id = spec.signature_id();
    context.push(&hay.signature, 1.0, sig_id)?;
    let mut dropout = pipeline.dropout.clone().with_anchors([sig_id]);
    if let Some(q) = dropout.query_ids.as_mut() {
        q.insert(sig_id);
    }
    let survivors = trace_survivors(&pipeline.stack, &context, &dropout, &spec.seed.child("dropout", 0))?;
    let queries = dropout.queries();

    // Survivors are a subsequence of the context, so one forward walk finds
    // every position.
    let mut best: Option<(usize, f64)> = None;
    let mut remaining = 0;
    let mut pos = 0;
    for &id in &survivors.final_ids {
        while context.ids()[pos] != id {
            pos += 1;
        }
        if queries.contains(&id) {
            continue;
        }
        remaining += 1;
        let sim = cosine_sim(context.feature(pos), &hay.signature);
        if best.is_none_or(|(_, s)| sim > s) {
            best = Some((pos, sim));
        }
    }
    let (best_pos, retrieved_similarity) =
        best.ok_or_else(|| Error::invalid("no non-query token survived dropout"))?;
    let retrieved_id = context.ids()[best_pos];

    let mut offset = best_pos;
    let mut clip = 0;
    while offset >= merged[clip].len() {
        offset -= merged[clip].len();
        clip += 1;
    }
    let retrieved_cluster = traces[clip].clusters[offset].clone();
    let needles: BTreeSet<u64> = hay.needle_ids.iter().copied().collect();
    let success = retrieved_cluster.iter().any(|id| needles.contains(id));
    Ok(TrialOutcome {
        success,
        retrieved_id,
        retrieved_similarity,
        retrieved_cluster,
        tokens_after_merge,
        tokens_after_dropout: remaining,
    })
}

/// Shape of a recall sweep; every cell shares these haystack parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub lengths: Vec<usize>,
    pub depths: Vec<f64>,
    pub trials: usize,
    pub tokens_per_frame: usize,
    pub frames_per_clip: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lengths: vec![64, 128, 256, 512, 1024, 2048],
            depths: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            trials: 20,
            tokens_per_frame: 32,
            frames_per_clip: 8,
            feature_dim: 32,
            noise_sigma: 0.05,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() {
            return Err(Error::config("lengths", "must not be empty"));
        }
        if self.lengths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("lengths", "must be strictly increasing"));
        }
        if self.lengths[0] < self.frames_per_clip {
            return Err(Error::config("lengths", "every length must hold at least one clip"));
        }
        if self.depths.is_empty() {
            return Err(Error::config("depths", "must not be empty"));
        }
        if self.depths.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(Error::config("depths", "values must lie in [0, 1]"));
        }
        if self.depths.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("depths", "must be strictly increasing"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if self.tokens_per_frame == 0 {
            return Err(Error::config("tokens_per_frame", "must be at least 1"));
        }
        if self.frames_per_clip == 0 {
            return Err(Error::config("frames_per_clip", "must be at least 1"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim", "must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::config("noise_sigma", "must be a non-negative number"));
        }
        Ok(())
    }

    pub fn tokens_per_clip(&self) -> usize {
        self.tokens_per_frame * self.frames_per_clip
    }

    /// Seed for one cell trial, derived from the cell coordinates only.
    pub fn cell_seed(base_seed: u64, frames: usize, depth: f64, trial: usize) -> SeedSpec {
        SeedSpec::new(base_seed)
            .child("F", frames as i64)
            .child("depth_pm", (depth * 1000.0).round() as i64)
            .child("trial", trial as i64)
    }

    pub fn haystack(&self, frames: usize, depth: f64, seed: SeedSpec) -> HaystackSpec {
        HaystackSpec {
            total_frames: frames,
            needle_depth: depth,
            tokens_per_frame: self.tokens_per_frame,
            frames_per_clip: self.frames_per_clip,
            feature_dim: self.feature_dim,
            noise_sigma: self.noise_sigma,
            seed,
        }
    }
}

/// Recall per (context length, depth) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiahGrid {
    pub context_lengths: Vec<usize>,
    pub depths: Vec<f64>,
    pub trials: usize,
    /// `recall[i][j]` for `context_lengths[i]`, `depths[j]`.
    pub recall: Vec<Vec<f64>>,
}

impl NiahGrid {
    pub fn mean_recall(&self) -> f64 {
        let cells = self.recall.iter().flatten().count();
        self.recall.iter().flatten().sum::<f64>() / cells as f64
    }

    pub fn row_mean(&self, row: usize) -> f64 {
        let r = &self.recall[row];
        r.iter().sum::<f64>() / r.len() as f64
    }

    /// Largest context length whose mean recall over depths reaches `threshold`.
    pub fn memorized_length(&self, threshold: f64) -> Option<usize> {
        (0..self.context_lengths.len())
            .filter(|&i| self.row_mean(i) >= threshold)
            .map(|i| self.context_lengths[i])
            .max()
    }

    /// `context_frames,depth_fraction,trials,recall`, LF line endings,
    /// recall with four decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("context_frames,depth_fraction,trials,recall\n");
        for (i, &frames) in self.context_lengths.iter().enumerate() {
            for (j, depth) in self.depths.iter().enumerate() {
                let _ = writeln!(out, "{frames},{depth},{},{:.4}", self.trials, self.recall[i][j]);
            }
        }
        out
    }
}

/// Runs every trial of every cell on a pool of `workers` threads.
///
/// Each trial's seed depends only on its cell coordinates and the trial
/// index, so the grid is bit-identical for any worker count.
pub fn evaluate_grid(grid: &GridSpec, pipeline: &Pipeline, base_seed: u64, workers: usize) -> Result<NiahGrid> {
    grid.validate()?;
    if pipeline.stack.model_dim() != grid.feature_dim {
        return Err(Error::config("feature_dim", "must equal the attention stack model dim"));
    }
    let jobs: Vec<(usize, usize, usize)> = (0..grid.lengths.len())
        .flat_map(|i| (0..grid.depths.len()).flat_map(move |j| (0..grid.trials).map(move |t| (i, j, t))))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Result<bool>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, j, t)| {
                let frames = grid.lengths[i];
                let depth = grid.depths[j];
                let seed = GridSpec::cell_seed(base_seed, frames, depth, t);
                run_trial(&grid.haystack(frames, depth, seed), pipeline).map(|o| o.success)
            })
            .collect()
    });

    let mut successes = vec![vec![0usize; grid.depths.len()]; grid.lengths.len()];
    for (&(i, j, _), outcome) in jobs.iter().zip(outcomes) {
        if outcome? {
            successes[i][j] += 1;
        }
    }
    let recall = successes
        .into_iter()
        .map(|row| row.into_iter().map(|s| s as f64 / grid.trials as f64).collect())
        .collect();
    Ok(NiahGrid {
        context_lengths: grid.lengths.clone(),
        depths: grid.depths.clone(),
        trials: grid.trials,
        recall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(frames: usize, depth: f64, sigma: f64, seed: u64) -> HaystackSpec {
        HaystackSpec {
            total_frames: frames,
            needle_depth: depth,
            tokens_per_frame: 8,
            frames_per_clip: 8,
            feature_dim: 16,
            noise_sigma: sigma,
            seed: SeedSpec::new(seed),
        }
    }

    fn lossless(s: &HaystackSpec) -> Pipeline {
        Pipeline {
            tokens_per_clip: s.tokens_per_frame * s.frames_per_clip,
            max_iterations: 16,
            dropout: DropoutConfig::lossless(),
            stack: AttnStack::new(2, 2, s.feature_dim, &SeedSpec::new(1)).unwrap(),
        }
    }

    #[test]
    fn noiseless_tokens_copy_their_frame() {
        let hay = generate_haystack(&spec(16, 0.5, 0.0, 3)).unwrap();
        for clip in &hay.clips {
            for f in 0..8 {
                let first = clip.feature(f * 8);
                for k in 1..8 {
                    assert_eq!(clip.feature(f * 8 + k), first);
                }
            }
        }
        let pos = hay.clips[hay.needle_clip].position_of(hay.needle_ids[0]).unwrap();
        assert_eq!(hay.clips[hay.needle_clip].feature(pos), hay.signature.as_slice());
    }

    #[test]
    fn needle_index_arithmetic() {
        let s = spec(64, 0.0, 0.1, 1);
        let hay = generate_haystack(&s).unwrap();
        assert_eq!(hay.needle_frame, 0);
        assert_eq!(hay.needle_clip, 0);
        assert_eq!(hay.needle_ids, (0..8).collect::<Vec<u64>>());
        assert_eq!(spec(64, 1.0, 0.1, 1).needle_frame(), 63);
        assert_eq!(spec(65, 0.5, 0.1, 1).needle_frame(), 32);
        assert_eq!(s.signature_id(), 512);
    }

    #[test]
    fn partial_last_clip() {
        let hay = generate_haystack(&spec(20, 1.0, 0.1, 2)).unwrap();
        let sizes: Vec<usize> = hay.clips.iter().map(TokenSeq::len).collect();
        assert_eq!(sizes, vec![64, 64, 32]);
        assert_eq!(hay.needle_clip, 2);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_haystack(&spec(4, 0.5, 0.1, 0)).is_err());
        assert!(generate_haystack(&spec(16, 1.5, 0.1, 0)).is_err());
        assert!(generate_haystack(&spec(16, 0.5, -1.0, 0)).is_err());
    }

    #[test]
    fn lossless_single_clip_succeeds() {
        for seed in 0..10 {
            let s = spec(8, seed as f64 / 9.0, 0.05, seed);
            let out = run_trial(&s, &lossless(&s)).unwrap();
            assert!(out.success);
            assert_eq!(out.tokens_after_merge, 64);
        }
    }

    #[test]
    fn grid_csv_format() {
        let grid = NiahGrid {
            context_lengths: vec![64, 128],
            depths: vec![0.0, 0.5],
            trials: 3,
            recall: vec![vec![1.0, 2.0 / 3.0], vec![0.0, 1.0]],
        };
        assert_eq!(
            grid.to_csv(),
            "context_frames,depth_fraction,trials,recall\n\
             64,0,3,1.0000\n64,0.5,3,0.6667\n128,0,3,0.0000\n128,0.5,3,1.0000\n"
        );
        assert_eq!(grid.memorized_length(MEMORY_THRESHOLD), None);
        assert_eq!(grid.memorized_length(0.5), Some(128));
    }

    #[test]
    fn grid_validation_names_keys() {
        let bad = GridSpec {
            depths: vec![0.5, 0.25],
            ..GridSpec::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "depths"));
        let bad = GridSpec {
            trials: 0,
            ..GridSpec::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "trials"));
    }
}
