//! A small needle-in-a-haystack grid: light compression, heavy compression,
//! and light compression followed by two-phase dropout. The printed CSV is
//! the same format `lrc niah` writes.
//!
//! The attention weights are random, so deep-layer selection is blind to the
//! needle and costs far more recall than merging does.

use lrc::dropout::DropoutConfig;
use lrc::niah::{evaluate_grid, GridSpec, Pipeline, MEMORY_THRESHOLD};
use lrc::toyattn::AttnStack;
use lrc::SeedSpec;

fn main() -> lrc::Result<()> {
    let grid = GridSpec {
        lengths: vec![64, 256],
        depths: vec![0.0, 0.5, 1.0],
        trials: 5,
        noise_sigma: 0.3,
        ..GridSpec::default()
    };
    let stack = AttnStack::new(4, 4, grid.feature_dim, &SeedSpec::new(1).child("stack", 0))?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    for (name, per_clip, dropout) in [
        ("128 tokens/clip, no dropout", 128, DropoutConfig::lossless()),
        ("4 tokens/clip, no dropout", 4, DropoutConfig::lossless()),
        ("128 tokens/clip, two-phase dropout", 128, DropoutConfig::split(4, 0.7, 0.3)),
    ] {
        let pipeline = Pipeline {
            tokens_per_clip: per_clip,
            max_iterations: 16,
            dropout,
            stack: stack.clone(),
        };
        let result = evaluate_grid(&grid, &pipeline, 1, workers)?;
        println!("== {name}: mean recall {:.3}, memorized length {:?}", result.mean_recall(), result.memorized_length(MEMORY_THRESHOLD));
        print!("{}", result.to_csv());
    }
    Ok(())
}
