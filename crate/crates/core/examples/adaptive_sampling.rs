//! Frame sampling across video lengths: dense below the threshold, sparse
//! above, clamped into [min, max] frames.

use lrc::sampler::{plan_sampling, SamplerConfig};

fn main() -> lrc::Result<()> {
    let cfg = SamplerConfig::default();
    println!("{:>10} {:>6} {:>8} {:>8}  clamped", "duration", "fps", "raw", "final");
    for duration in [2.0, 10.0, 45.0, 59.9, 60.0, 300.0, 3600.0, 7200.0] {
        let plan = plan_sampling(duration, &cfg)?;
        println!(
            "{:>9}s {:>6} {:>8} {:>8}  {}",
            duration,
            plan.rate_fps,
            plan.raw_frame_count,
            plan.final_frame_count,
            plan.clamped()
        );
    }
    let plan = plan_sampling(3600.0, &cfg)?;
    println!("first timestamps of a 1 h video: {:?}", &plan.timestamps_s[..4]);
    Ok(())
}
