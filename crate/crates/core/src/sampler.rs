//! Duration-adaptive frame sampling.
//!
//! Short clips are sampled densely to keep motion detail; long videos fall
//! back to a sparse event-level rate. The resulting frame count is clamped to
//! the frame budget, and a clamped plan is re-spaced uniformly over the whole
//! video rather than truncated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub dense_fps: f64,
    pub sparse_fps: f64,
    /// Videos shorter than this (seconds) use `dense_fps`.
    pub threshold_s: f64,
    pub min_frames: usize,
    pub max_frames: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            dense_fps: 15.0,
            sparse_fps: 1.0,
            threshold_s: 60.0,
            min_frames: 64,
            max_frames: 512,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sparse_fps > 0.0) || !self.sparse_fps.is_finite() {
            return Err(Error::config("sparse_fps", "must be a positive number"));
        }
        if !(self.dense_fps > self.sparse_fps) || !self.dense_fps.is_finite() {
            return Err(Error::config("dense_fps", "must exceed sparse_fps"));
        }
        if !(self.threshold_s >= 0.0) || !self.threshold_s.is_finite() {
            return Err(Error::config("threshold_s", "must be a non-negative number"));
        }
        if self.min_frames == 0 {
            return Err(Error::config("min_frames", "must be at least 1"));
        }
        if self.min_frames > self.max_frames {
            return Err(Error::config("max_frames", "must be >= min_frames"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub duration_s: f64,
    pub rate_fps: f64,
    pub raw_frame_count: usize,
    pub final_frame_count: usize,
    pub timestamps_s: Vec<f64>,
}

impl SamplePlan {
    pub fn clamped(&self) -> bool {
        self.raw_frame_count != self.final_frame_count
    }
}

pub fn plan_sampling(duration_s: f64, cfg: &SamplerConfig) -> Result<SamplePlan> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::invalid(format!(
            "duration must be positive and finite, got {duration_s}"
        )));
    }
    cfg.validate()?;

    let rate_fps = if duration_s < cfg.threshold_s {
        cfg.dense_fps
    } else {
        cfg.sparse_fps
    };
    let raw = (duration_s * rate_fps).ceil();
    if raw > usize::MAX as f64 / 2.0 {
        return Err(Error::invalid("duration too long to sample"));
    }
    let raw_frame_count = (raw as usize).max(1);
    let final_frame_count = raw_frame_count.clamp(cfg.min_frames, cfg.max_frames);

    let timestamps_s = if final_frame_count == raw_frame_count {
        (0..raw_frame_count).map(|k| k as f64 / rate_fps).collect()
    } else {
        let stride = duration_s / final_frame_count as f64;
        (0..final_frame_count).map(|k| k as f64 * stride).collect()
    };

    Ok(SamplePlan {
        duration_s,
        rate_fps,
        raw_frame_count,
        final_frame_count,
        timestamps_s,
    })
}
