//! Deterministic seed derivation.
//!
//! A [`SeedSpec`] is a base seed plus an ordered list of `(label, value)`
//! pairs. The derived 64-bit seed is the first eight bytes (little endian) of
//!
//! ```text
//! SHA-256( "lrc-seed-v1" || base_seed as u64 LE
//!          || for each label: len(label) as u64 LE || label UTF-8 || value as i64 LE )
//! ```
//!
//! The length prefix keeps `("ab", 1), ("c", 2)` and `("a", 1), ("bc", 2)`
//! apart. No platform-dependent hashing is involved, so a derived seed is the
//! same on every machine and in every run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const DOMAIN_TAG: &[u8] = b"lrc-seed-v1";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub base_seed: u64,
    #[serde(default)]
    pub labels: Vec<(String, i64)>,
}

impl SeedSpec {
    pub fn new(base_seed: u64) -> Self {
        Self {
            base_seed,
            labels: Vec::new(),
        }
    }

    /// Returns a new spec with one more label appended.
    pub fn child(&self, label: impl Into<String>, value: i64) -> Self {
        let mut labels = self.labels.clone();
        labels.push((label.into(), value));
        Self {
            base_seed: self.base_seed,
            labels,
        }
    }

    pub fn derive(&self) -> u64 {
        derive_seed(self)
    }

    /// A ChaCha8 stream seeded from [`derive_seed`].
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive())
    }
}

pub fn derive_seed(spec: &SeedSpec) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(DOMAIN_TAG);
    hasher.update(spec.base_seed.to_le_bytes());
    for (label, value) in &spec.labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        hasher.update(value.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn repeated_calls_are_identical() {
        let spec = SeedSpec::new(7);
        let v = derive_seed(&spec);
        for _ in 0..1000 {
            assert_eq!(derive_seed(&spec), v);
        }
    }

    #[test]
    fn label_value_changes_seed() {
        let base = SeedSpec::new(7);
        assert_ne!(
            base.child("trial", 0).derive(),
            base.child("trial", 1).derive()
        );
        assert_ne!(base.derive(), base.child("trial", 0).derive());
    }

    #[test]
    fn length_prefix_separates_label_boundaries() {
        let a = SeedSpec::new(1).child("ab", 1).child("c", 2);
        let b = SeedSpec::new(1).child("a", 1).child("bc", 2);
        assert_ne!(a.derive(), b.derive());
    }

    #[test]
    fn label_order_matters() {
        let a = SeedSpec::new(3).child("F", 128).child("depth", 50);
        let b = SeedSpec::new(3).child("depth", 50).child("F", 128);
        assert_ne!(a.derive(), b.derive());
    }

    #[test]
    fn derived_stream_is_stable_across_threads() {
        let spec = SeedSpec::new(7).child("F", 128).child("depth", 50);
        let draw = |s: &SeedSpec| -> Vec<u64> {
            let mut rng = s.rng();
            (0..16).map(|_| rng.random()).collect()
        };
        let here = draw(&spec);
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let s = spec.clone();
                std::thread::spawn(move || draw(&s))
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), here);
        }
    }

    #[test]
    fn frozen_value() {
        // Pinned so an accidental change to the hash construction is caught.
        let v = derive_seed(&SeedSpec::new(7));
        let again = {
            let mut h = Sha256::new();
            h.update(b"lrc-seed-v1");
            h.update(7u64.to_le_bytes());
            let d = h.finalize();
            u64::from_le_bytes(d[..8].try_into().unwrap())
        };
        assert_eq!(v, again);
    }
}
