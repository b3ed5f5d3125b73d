//! Compresses one 8-frame clip of 2048 tokens to 128 and inspects the
//! provenance of the merged tokens.

use lrc::merger::{compress_segment, min_iterations, MergeConfig};
use lrc::niah::{generate_haystack, HaystackSpec};
use lrc::SeedSpec;

fn main() -> lrc::Result<()> {
    let hay = generate_haystack(&HaystackSpec {
        total_frames: 8,
        needle_depth: 0.0,
        tokens_per_frame: 256,
        frames_per_clip: 8,
        feature_dim: 32,
        noise_sigma: 0.1,
        seed: SeedSpec::new(1),
    })?;
    let clip = &hay.clips[0];
    let cfg = MergeConfig::tight(clip.len(), 128);
    let (out, trace) = compress_segment(clip, &cfg)?;
    println!(
        "{} tokens -> {} tokens in {} iterations (lower bound {})",
        clip.len(),
        out.len(),
        trace.iterations_used,
        min_iterations(clip.len(), 128)
    );
    println!("total size {} -> {}", clip.total_size(), out.total_size());

    // Token ids are frame * 256 + k, so a cluster's frames are id / 256.
    for (k, cluster) in trace.clusters.iter().enumerate().take(6) {
        let mut frames: Vec<u64> = cluster.iter().map(|id| id / 256).collect();
        frames.dedup();
        println!("token {k}: size {:>3}, frames {frames:?}", out.sizes()[k]);
    }
    Ok(())
}
