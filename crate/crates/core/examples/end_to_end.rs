//! Sample a video, compress each clip, append a query, run dropout and
//! retrieve the needle, printing each stage.

use lrc::dropout::DropoutConfig;
use lrc::niah::{generate_haystack, run_trial_on, HaystackSpec, Pipeline};
use lrc::sampler::{plan_sampling, SamplerConfig};
use lrc::toyattn::AttnStack;
use lrc::SeedSpec;

fn main() -> lrc::Result<()> {
    let sampling = plan_sampling(45.0, &SamplerConfig::default())?;
    println!("45 s video sampled to {} frames", sampling.final_frame_count);

    let spec = HaystackSpec {
        total_frames: sampling.final_frame_count,
        needle_depth: 0.6,
        tokens_per_frame: 64,
        frames_per_clip: 8,
        feature_dim: 32,
        noise_sigma: 0.1,
        seed: SeedSpec::new(2),
    };
    let hay = generate_haystack(&spec)?;
    println!("{} clips, needle in frame {} (clip {})", hay.clips.len(), hay.needle_frame, hay.needle_clip);

    let pipeline = Pipeline {
        tokens_per_clip: 64,
        max_iterations: 16,
        dropout: DropoutConfig::split(4, 0.9, 0.5),
        stack: AttnStack::new(4, 4, 32, &SeedSpec::new(2).child("stack", 0))?,
    };
    let out = run_trial_on(&spec, &hay, &pipeline)?;
    println!(
        "{} tokens after merging, {} after dropout",
        out.tokens_after_merge, out.tokens_after_dropout
    );
    println!(
        "retrieved token {} (similarity {:.3}) covering {} original tokens: {}",
        out.retrieved_id,
        out.retrieved_similarity,
        out.retrieved_cluster.len(),
        if out.success { "needle found" } else { "needle missed" }
    );
    Ok(())
}
