use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use lrc::dropout::{attention_select, run_with_dropout, uniform_prune, DropoutConfig};
use lrc::toyattn::{AttnMap, AttnStack};
use lrc::{SeedSpec, TokenSeq};

fn random_tokens(seed: u64, n: usize, dim: usize) -> TokenSeq {
    let mut rng = SeedSpec::new(seed).child("tokens", 0).rng();
    let features: Vec<f64> = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
    TokenSeq::new(dim, features, vec![1.0; n], (0..n as u64).collect()).unwrap()
}

#[test]
fn fixed_seed_keeps_about_half() {
    let tokens = random_tokens(1, 10_000, 1);
    let (_, kept) = uniform_prune(&tokens, 0.5, &BTreeSet::new(), &SeedSpec::new(42)).unwrap();
    let f = kept.len() as f64 / 10_000.0;
    assert!((0.47..=0.53).contains(&f), "{f}");
    let (_, again) = uniform_prune(&tokens, 0.5, &BTreeSet::new(), &SeedSpec::new(42)).unwrap();
    assert_eq!(kept, again);
}

#[test]
fn single_early_layer_keeps_anchors_plus_half() {
    let n = 400;
    let anchors: Vec<u64> = (0..20).collect();
    let tokens = random_tokens(2, n, 8);
    let stack = AttnStack::new(2, 2, 8, &SeedSpec::new(3)).unwrap();
    let mut cfg = DropoutConfig::lossless().with_anchors(anchors.iter().copied());
    cfg.keep_prob = 0.5;
    cfg.early_layers = BTreeSet::from([0]);
    let mut total = 0usize;
    for s in 0..200 {
        let (out, survivors) = run_with_dropout(&stack, &tokens, &cfg, &SeedSpec::new(s)).unwrap();
        assert_eq!(out.len(), survivors.final_ids.len());
        total += out.len();
    }
    let rest = (n - anchors.len()) as f64;
    let expected = anchors.len() as f64 + 0.5 * rest;
    let sd = (rest * 0.25 / 200.0).sqrt();
    let mean = total as f64 / 200.0;
    assert!((mean - expected).abs() <= 3.0 * sd, "mean {mean}, expected {expected}");
}

#[test]
fn argmax_attention_survives() {
    // Token 0 is the query; it attends 0.7 / 0.2 / 0.1 to tokens 1..=3.
    let tokens = random_tokens(4, 4, 2);
    let mut rows = vec![0.25; 16];
    rows[..4].copy_from_slice(&[0.0, 0.2, 0.7, 0.1]);
    let map = AttnMap::from_heads(4, vec![rows]).unwrap();
    let (_, kept) = attention_select(&tokens, &map, &BTreeSet::from([0]), 0.3).unwrap();
    assert_eq!(kept, vec![0, 2]);
    let (_, all) = attention_select(&tokens, &map, &BTreeSet::from([0]), 1.0).unwrap();
    assert_eq!(all, vec![0, 1, 2, 3]);
    assert!(attention_select(&tokens, &map, &BTreeSet::new(), 0.5).is_err());
}

#[test]
fn random_64_token_select_matches_recomputed_scores() {
    let tokens = random_tokens(64, 64, 16);
    let stack = AttnStack::new(1, 4, 16, &SeedSpec::new(64)).unwrap();
    let (_, map) = stack.forward_layer(0, &tokens).unwrap();
    let queries = BTreeSet::from([10u64, 50]);
    let mut scored: Vec<(f64, u64)> = (0..64u64)
        .filter(|id| !queries.contains(id))
        .map(|j| {
            let s: f64 = (0..4)
                .flat_map(|h| queries.iter().map(move |&q| (h, q)))
                .map(|(h, q)| map.row(h, q as usize)[j as usize])
                .sum();
            (s / 4.0, j)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let k = (0.25f64 * 62.0).ceil() as usize;
    let kept: BTreeSet<u64> = attention_select(&tokens, &map, &queries, 0.25).unwrap().1.into_iter().collect();
    let expected: BTreeSet<u64> = scored.iter().take(k).map(|x| x.1).chain(queries.iter().copied()).collect();
    assert_eq!(kept, expected);
}

#[test]
fn lossless_config_is_identity() {
    let tokens = random_tokens(5, 30, 8);
    let stack = AttnStack::new(4, 2, 8, &SeedSpec::new(5)).unwrap();
    let cfg = DropoutConfig::split(4, 1.0, 1.0).with_anchors([0]);
    let (_, survivors) = run_with_dropout(&stack, &tokens, &cfg, &SeedSpec::new(9)).unwrap();
    assert_eq!(survivors.final_ids, tokens.ids());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn survivors_nest_and_keep_anchors(
        seed in any::<u64>(),
        n in 2usize..80,
        p in 0.05f64..=1.0,
        rho in 0.05f64..=1.0,
        layers in 1usize..5,
        n_anchor in 1usize..4,
    ) {
        let tokens = random_tokens(seed, n, 8);
        let stack = AttnStack::new(layers, 2, 8, &SeedSpec::new(seed).child("stack", 0)).unwrap();
        let anchors: BTreeSet<u64> = (0..n_anchor.min(n) as u64).map(|k| k * (n as u64 / n_anchor as u64).max(1)).collect();
        let cfg = DropoutConfig::split(layers, p, rho).with_anchors(anchors.iter().copied());
        let (out, survivors) = run_with_dropout(&stack, &tokens, &cfg, &SeedSpec::new(seed)).unwrap();
        prop_assert_eq!(out.ids(), &survivors.final_ids[..]);
        let mut previous: BTreeSet<u64> = tokens.ids().iter().copied().collect();
        for layer in &survivors.per_layer {
            let current: BTreeSet<u64> = layer.iter().copied().collect();
            prop_assert!(current.is_subset(&previous));
            prop_assert!(anchors.is_subset(&current));
            previous = current;
        }
    }
}
