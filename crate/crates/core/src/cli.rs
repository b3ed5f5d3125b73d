//! Command-line front end: `compress`, `niah`, `pack`, `plan` and `demo`.
//!
//! Exit codes: 0 on success, 2 when arguments or configuration are invalid
//! (nothing is written), 1 on I/O or other runtime failures. Output files are
//! written atomically.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use serde::{Deserialize, Serialize};

use crate::dropout::DropoutConfig;
use crate::error::{Error, Result};
use crate::io::{read_config, read_lengths, write_atomic};
use crate::merger::{compress_segment, MergeConfig};
use crate::niah::{evaluate_grid, generate_haystack, run_trial, GridSpec, HaystackSpec, Pipeline, MEMORY_THRESHOLD};
use crate::packer::pack_sequences;
use crate::planner::{enumerate_plans, ClusterSpec, LinkMapping, Workload};
use crate::sampler::{plan_sampling, SamplerConfig};
use crate::seed::SeedSpec;
use crate::toyattn::AttnStack;

#[derive(Debug, Parser)]
#[command(name = "lrc", version, about = "Long-context video token pipeline toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for grid cells (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic video and compress it clip by clip.
    Compress {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        target_tokens_per_frame: Option<usize>,
    },
    /// Needle-in-a-haystack recall grid, written as CSV.
    Niah {
        #[command(flatten)]
        common: Common,
    },
    /// Pack sequence lengths (one per line) into fixed-capacity batches.
    Pack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lengths: PathBuf,
        #[arg(long)]
        capacity: usize,
    },
    /// Enumerate and cost 2D sequence-parallel plans.
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seq_len: u64,
        #[arg(long)]
        heads: usize,
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        gpus: usize,
        #[arg(long)]
        bytes_per_token: u64,
        /// Inter-node bandwidth, bytes/s.
        #[arg(long)]
        inter_bw: f64,
        /// Intra-node bandwidth, bytes/s.
        #[arg(long)]
        intra_bw: f64,
        #[arg(long, default_value = "paper")]
        mapping: String,
    },
    /// Tiny end-to-end run with a lossless and a lossy configuration.
    Demo {
        #[command(flatten)]
        common: Common,
    },
}

/// `compress` configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressConfig {
    pub duration_s: f64,
    pub sampler: SamplerConfig,
    pub tokens_per_frame: usize,
    pub target_tokens_per_frame: usize,
    pub frames_per_clip: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
}

impl Default for CompressConfig {
    fn default() -> Self {
        Self {
            duration_s: 120.0,
            sampler: SamplerConfig::default(),
            tokens_per_frame: 256,
            target_tokens_per_frame: 16,
            frames_per_clip: 8,
            feature_dim: 32,
            noise_sigma: 0.05,
        }
    }
}

impl CompressConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::config("duration_s", "must be a positive number"));
        }
        self.sampler.validate()?;
        if self.tokens_per_frame == 0 {
            return Err(Error::config("tokens_per_frame", "must be at least 1"));
        }
        if self.target_tokens_per_frame == 0 || self.target_tokens_per_frame > self.tokens_per_frame {
            return Err(Error::config("target_tokens_per_frame", "must lie in [1, tokens_per_frame]"));
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
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressReport {
    pub duration_s: f64,
    pub rate_fps: f64,
    pub raw_frame_count: usize,
    pub final_frame_count: usize,
    pub clips: usize,
    pub tokens_in: usize,
    pub tokens_out: usize,
    pub tokens_per_frame_out: f64,
    pub max_merge_iterations: usize,
    pub total_size_in: f64,
    pub total_size_out: f64,
}

/// Dropout keys accepted in the `niah` config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NiahDropout {
    pub keep_prob: f64,
    pub deep_keep_ratio: f64,
    #[serde(default)]
    pub early_layers: Option<BTreeSet<usize>>,
    #[serde(default)]
    pub deep_layers: Option<BTreeSet<usize>>,
}

/// `niah` configuration. Grid keys default to the standard sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NiahConfig {
    pub lengths: Vec<usize>,
    pub depths: Vec<f64>,
    pub trials: usize,
    pub tokens_per_frame: usize,
    pub frames_per_clip: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    /// Merge target per clip.
    pub tokens_per_clip: usize,
    pub max_iterations: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: Option<NiahDropout>,
}

impl Default for NiahConfig {
    fn default() -> Self {
        let g = GridSpec::default();
        Self {
            lengths: g.lengths,
            depths: g.depths,
            trials: g.trials,
            tokens_per_frame: g.tokens_per_frame,
            frames_per_clip: g.frames_per_clip,
            feature_dim: g.feature_dim,
            noise_sigma: g.noise_sigma,
            tokens_per_clip: 128,
            max_iterations: 16,
            layers: 4,
            heads: 4,
            dropout: None,
        }
    }
}

impl NiahConfig {
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            lengths: self.lengths.clone(),
            depths: self.depths.clone(),
            trials: self.trials,
            tokens_per_frame: self.tokens_per_frame,
            frames_per_clip: self.frames_per_clip,
            feature_dim: self.feature_dim,
            noise_sigma: self.noise_sigma,
        }
    }

    pub fn dropout_config(&self) -> DropoutConfig {
        match &self.dropout {
            None => DropoutConfig::lossless(),
            Some(d) => {
                let mut cfg = DropoutConfig::split(self.layers, d.keep_prob, d.deep_keep_ratio);
                if let Some(early) = &d.early_layers {
                    cfg.early_layers = early.clone();
                }
                if let Some(deep) = &d.deep_layers {
                    cfg.deep_layers = deep.clone();
                }
                cfg
            }
        }
    }

    /// Validates every key, then builds the pipeline for `seed`.
    pub fn pipeline(&self, seed: u64) -> Result<Pipeline> {
        self.grid().validate()?;
        if self.tokens_per_clip == 0 {
            return Err(Error::config("tokens_per_clip", "must be at least 1"));
        }
        if self.tokens_per_clip > self.tokens_per_frame * self.frames_per_clip {
            return Err(Error::config("tokens_per_clip", "exceeds tokens_per_frame × frames_per_clip"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations", "must be at least 1"));
        }
        if self.layers == 0 {
            return Err(Error::config("layers", "must be at least 1"));
        }
        if self.heads == 0 || self.feature_dim % self.heads != 0 {
            return Err(Error::config("heads", "must divide feature_dim"));
        }
        let dropout = self.dropout_config();
        dropout.validate(self.layers)?;
        let stack = AttnStack::new(
            self.layers,
            self.heads,
            self.feature_dim,
            &SeedSpec::new(seed).child("stack", 0),
        )?;
        Ok(Pipeline {
            tokens_per_clip: self.tokens_per_clip,
            max_iterations: self.max_iterations,
            dropout,
            stack,
        })
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::InvalidInput(_) => 2,
        _ => 1,
    }
}

fn init_logging() {
    let filter = std::env::var("LRC_LOG").unwrap_or_else(|_| "error".to_string());
    let _ = env_logger::Builder::new().parse_filters(&filter).try_init();
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            write_atomic(path, text.as_bytes())?;
            info!("wrote {}", path.display());
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn workers(common: &Common) -> Result<usize> {
    match common.workers {
        Some(0) => Err(Error::config("workers", "must be at least 1")),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Compress {
            common,
            duration,
            target_tokens_per_frame,
        } => {
            let mut cfg: CompressConfig = match &common.config {
                Some(p) => read_config(p)?,
                None => CompressConfig::default(),
            };
            if let Some(d) = duration {
                cfg.duration_s = d;
            }
            if let Some(t) = target_tokens_per_frame {
                cfg.target_tokens_per_frame = t;
            }
            cfg.validate()?;
            let report = compress_video(&cfg, common.seed)?;
            emit(common.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
        }
        Command::Niah { common } => {
            let cfg: NiahConfig = match &common.config {
                Some(p) => read_config(p)?,
                None => NiahConfig::default(),
            };
            let workers = workers(&common)?;
            let pipeline = cfg.pipeline(common.seed)?;
            info!(
                "niah grid: {} lengths × {} depths × {} trials on {workers} workers",
                cfg.lengths.len(),
                cfg.depths.len(),
                cfg.trials
            );
            let grid = evaluate_grid(&cfg.grid(), &pipeline, common.seed, workers)?;
            info!(
                "mean recall {:.4}, memorized length {:?}",
                grid.mean_recall(),
                grid.memorized_length(MEMORY_THRESHOLD)
            );
            emit(common.out.as_deref(), &grid.to_csv())
        }
        Command::Pack {
            common,
            lengths,
            capacity,
        } => {
            if capacity == 0 {
                return Err(Error::config("capacity", "must be at least 1"));
            }
            let lengths = read_lengths(&lengths)?;
            let plan = pack_sequences(&lengths, capacity)?;
            emit(common.out.as_deref(), &(serde_json::to_string_pretty(&plan)? + "\n"))
        }
        Command::Plan {
            common,
            seq_len,
            heads,
            nodes,
            gpus,
            bytes_per_token,
            inter_bw,
            intra_bw,
            mapping,
        } => {
            let mapping: LinkMapping = mapping.parse()?;
            if seq_len == 0 {
                return Err(Error::config("seq-len", "must be at least 1"));
            }
            if heads == 0 {
                return Err(Error::config("heads", "must be at least 1"));
            }
            let cluster = ClusterSpec {
                nodes,
                devices_per_node: gpus,
                inter_node_bw: inter_bw,
                intra_node_bw: intra_bw,
            };
            cluster.validate()?;
            let workload = Workload {
                seq_len,
                heads,
                bytes_per_token,
            };
            let plans = enumerate_plans(&workload, &cluster, mapping)?;
            emit(common.out.as_deref(), &(serde_json::to_string_pretty(&plans)? + "\n"))
        }
        Command::Demo { common } => {
            let text = demo(common.seed)?;
            emit(common.out.as_deref(), &text)
        }
    }
}

/// Samples a synthetic video of `cfg.duration_s` seconds and compresses it clip by clip.
pub fn compress_video(cfg: &CompressConfig, seed: u64) -> Result<CompressReport> {
    let plan = plan_sampling(cfg.duration_s, &cfg.sampler)?;
    let frames = plan.final_frame_count.max(cfg.frames_per_clip);
    let hay = generate_haystack(&HaystackSpec {
        total_frames: frames,
        needle_depth: 0.0,
        tokens_per_frame: cfg.tokens_per_frame,
        frames_per_clip: cfg.frames_per_clip,
        feature_dim: cfg.feature_dim,
        noise_sigma: cfg.noise_sigma,
        seed: SeedSpec::new(seed).child("video", 0),
    })?;
    let mut tokens_in = 0;
    let mut tokens_out = 0;
    let mut size_in = 0.0;
    let mut size_out = 0.0;
    let mut max_iters = 0;
    for clip in &hay.clips {
        let frames_here = clip.len() / cfg.tokens_per_frame;
        let merge = MergeConfig::new(cfg.target_tokens_per_frame * frames_here);
        let (out, trace) = compress_segment(clip, &merge)?;
        tokens_in += clip.len();
        tokens_out += out.len();
        size_in += clip.total_size();
        size_out += out.total_size();
        max_iters = max_iters.max(trace.iterations_used);
    }
    Ok(CompressReport {
        duration_s: plan.duration_s,
        rate_fps: plan.rate_fps,
        raw_frame_count: plan.raw_frame_count,
        final_frame_count: plan.final_frame_count,
        clips: hay.clips.len(),
        tokens_in,
        tokens_out,
        tokens_per_frame_out: tokens_out as f64 / frames as f64,
        max_merge_iterations: max_iters,
        total_size_in: size_in,
        total_size_out: size_out,
    })
}

/// 64-frame pipeline under a lossless and a lossy configuration.
pub fn demo(seed: u64) -> Result<String> {
    use std::fmt::Write as _;

    let mut out = String::new();
    let plan = plan_sampling(10.0, &SamplerConfig::default())?;
    let _ = writeln!(
        out,
        "sampling: 10 s at {} fps -> {} frames",
        plan.rate_fps, plan.final_frame_count
    );

    let layers = 4;
    let stack = AttnStack::new(layers, 4, 32, &SeedSpec::new(seed).child("stack", 0))?;
    let configs = [
        ("lossless", 256, DropoutConfig::lossless()),
        ("lossy", 16, DropoutConfig::split(layers, 0.9, 0.5)),
    ];
    for (name, tokens_per_clip, dropout) in configs {
        let pipeline = Pipeline {
            tokens_per_clip,
            max_iterations: 16,
            dropout,
            stack: stack.clone(),
        };
        let mut hits = 0;
        let trials = 5;
        let mut last = None;
        for t in 0..trials {
            let spec = HaystackSpec {
                total_frames: 64,
                needle_depth: t as f64 / (trials - 1) as f64,
                tokens_per_frame: 32,
                frames_per_clip: 8,
                feature_dim: 32,
                noise_sigma: 0.05,
                seed: SeedSpec::new(seed).child("demo", t as i64),
            };
            let outcome = run_trial(&spec, &pipeline)?;
            hits += usize::from(outcome.success);
            last = Some(outcome);
        }
        let last = last.expect("at least one trial");
        let _ = writeln!(
            out,
            "{name}: {tokens_per_clip} tokens/clip, {} tokens after merge, {} after dropout, recall {hits}/{trials}",
            last.tokens_after_merge, last.tokens_after_dropout
        );
    }
    Ok(out)
}
