//! Next-fit packing versus pad-and-clip batching on a long-tailed workload.

use lrc::packer::{compare_padding, pack_sequences};
use lrc::SeedSpec;
use rand::Rng;

fn main() -> lrc::Result<()> {
    let plan = pack_sequences(&[7, 5, 4, 6, 15], 10)?;
    for (i, pack) in plan.packs.iter().enumerate() {
        let parts: Vec<String> = pack.iter().map(|s| format!("seq{}:{}", s.seq, s.used)).collect();
        println!("pack {i}: {}", parts.join(" "));
    }
    println!("clipped sequences: {:?}", plan.clipped);

    let capacity = 4096;
    let mut rng = SeedSpec::new(9).rng();
    let lengths: Vec<usize> = (0..1000)
        .map(|_| (rng.random_range(16f64.ln()..=(capacity as f64).ln()).exp() as usize).clamp(16, capacity))
        .collect();
    let cmp = compare_padding(&lengths, capacity)?;
    println!(
        "1000 log-uniform sequences at T = {capacity}: packed utilization {:.3}, padded {:.3}, {:.2}x fewer iterations",
        cmp.pack_util, cmp.pad_util, cmp.iteration_ratio
    );
    Ok(())
}
