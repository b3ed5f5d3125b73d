//! Uniform pruning in the early layers, attention-guided selection in the
//! deep layers, with one protected query token.

use lrc::dropout::{run_with_dropout, DropoutConfig};
use lrc::toyattn::AttnStack;
use lrc::{SeedSpec, TokenSeq};
use rand::Rng;

fn main() -> lrc::Result<()> {
    let (n, dim) = (512, 32);
    let mut rng = SeedSpec::new(3).rng();
    let features: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tokens = TokenSeq::new(dim, features, vec![1.0; n], (0..n as u64).collect())?;

    let stack = AttnStack::new(6, 4, dim, &SeedSpec::new(4))?;
    let query = n as u64 - 1;
    let cfg = DropoutConfig::split(6, 0.8, 0.5).with_anchors([query]);
    println!("early layers {:?} keep p = {}", cfg.early_layers, cfg.keep_prob);
    println!("deep layers {:?} keep rho = {}", cfg.deep_layers, cfg.deep_keep_ratio);

    let (out, survivors) = run_with_dropout(&stack, &tokens, &cfg, &SeedSpec::new(5))?;
    for (layer, ids) in survivors.per_layer.iter().enumerate() {
        println!("after layer {layer}: {:>4} tokens", ids.len());
    }
    assert!(survivors.final_ids.contains(&query));
    println!("final: {} of {n} tokens, query kept", out.len());
    Ok(())
}
