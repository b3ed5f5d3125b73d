//! Order-preserving dynamic sequence packing.
//!
//! Sequences are appended to the current pack while they fit in the token
//! budget; the first one that does not fit closes the pack and opens a new
//! one. Sequences longer than the budget are clipped to it and flagged.
//! For contiguous groupings this next-fit scan yields the fewest packs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSeq {
    pub seq: usize,
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackPlan {
    pub capacity: usize,
    pub packs: Vec<Vec<PackedSeq>>,
    pub utilization: f64,
    pub pad_utilization: f64,
    pub iteration_ratio: f64,
    /// Indices of sequences that were clipped to `capacity`.
    pub clipped: Vec<usize>,
}

impl PackPlan {
    pub fn used_tokens(&self) -> usize {
        self.packs.iter().flatten().map(|p| p.used).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaddingComparison {
    pub pack_util: f64,
    pub pad_util: f64,
    pub iteration_ratio: f64,
}

fn check(lengths: &[usize], capacity: usize) -> Result<()> {
    if capacity == 0 {
        return Err(Error::invalid("pack capacity must be at least 1"));
    }
    if let Some(i) = lengths.iter().position(|&l| l == 0) {
        return Err(Error::invalid(format!("sequence {i} has zero length")));
    }
    Ok(())
}

/// Padding baseline: every sequence gets its own row of `capacity` slots.
pub fn pad_utilization(lengths: &[usize], capacity: usize) -> f64 {
    if lengths.is_empty() {
        return 0.0;
    }
    let used: usize = lengths.iter().map(|&l| l.min(capacity)).sum();
    used as f64 / (lengths.len() * capacity) as f64
}

pub fn pack_sequences(lengths: &[usize], capacity: usize) -> Result<PackPlan> {
    check(lengths, capacity)?;
    let mut packs: Vec<Vec<PackedSeq>> = Vec::new();
    let mut clipped = Vec::new();
    let mut fill = 0usize;
    for (seq, &len) in lengths.iter().enumerate() {
        let used = if len > capacity {
            clipped.push(seq);
            capacity
        } else {
            len
        };
        match packs.last_mut() {
            Some(pack) if fill + used <= capacity => {
                pack.push(PackedSeq { seq, used });
                fill += used;
            }
            _ => {
                packs.push(vec![PackedSeq { seq, used }]);
                fill = used;
            }
        }
    }

    let used: usize = packs.iter().flatten().map(|p| p.used).sum();
    let (utilization, iteration_ratio) = if packs.is_empty() {
        (0.0, 0.0)
    } else {
        (
            used as f64 / (packs.len() * capacity) as f64,
            lengths.len() as f64 / packs.len() as f64,
        )
    };
    Ok(PackPlan {
        capacity,
        packs,
        utilization,
        pad_utilization: pad_utilization(lengths, capacity),
        iteration_ratio,
        clipped,
    })
}

pub fn compare_padding(lengths: &[usize], capacity: usize) -> Result<PaddingComparison> {
    let plan = pack_sequences(lengths, capacity)?;
    Ok(PaddingComparison {
        pack_util: plan.utilization,
        pad_util: plan.pad_utilization,
        iteration_ratio: plan.iteration_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(plan: &PackPlan) -> Vec<Vec<usize>> {
        plan.packs
            .iter()
            .map(|p| p.iter().map(|s| s.used).collect())
            .collect()
    }

    #[test]
    fn three_small_sequences_share_a_pack() {
        let plan = pack_sequences(&[3, 3, 3], 10).unwrap();
        assert_eq!(plan.packs.len(), 1);
        assert!((plan.utilization - 0.9).abs() < 1e-15);
    }

    #[test]
    fn next_fit_in_order() {
        let plan = pack_sequences(&[7, 5, 4, 6], 10).unwrap();
        assert_eq!(shape(&plan), vec![vec![7], vec![5, 4], vec![6]]);
    }

    #[test]
    fn oversized_sequence_is_clipped_and_flagged() {
        let plan = pack_sequences(&[15], 10).unwrap();
        assert_eq!(plan.packs, vec![vec![PackedSeq { seq: 0, used: 10 }]]);
        assert_eq!(plan.clipped, vec![0]);
    }

    #[test]
    fn padding_comparison_examples() {
        let c = compare_padding(&[1, 1, 1, 1], 4).unwrap();
        assert_eq!((c.pad_util, c.pack_util, c.iteration_ratio), (0.25, 1.0, 4.0));
        let c = compare_padding(&[8, 8, 8], 8).unwrap();
        assert_eq!((c.pad_util, c.pack_util, c.iteration_ratio), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_input_is_an_empty_plan() {
        let plan = pack_sequences(&[], 16).unwrap();
        assert!(plan.packs.is_empty());
        assert_eq!(plan.utilization, 0.0);
    }

    #[test]
    fn invalid_inputs() {
        assert!(pack_sequences(&[1, 2], 0).is_err());
        assert!(pack_sequences(&[1, 0, 2], 4).is_err());
    }

    #[test]
    fn json_shape() {
        let plan = pack_sequences(&[2, 3], 4).unwrap();
        let v: serde_json::Value = serde_json::to_value(&plan).unwrap();
        assert_eq!(v["packs"][1][0]["seq"], 1);
        assert_eq!(v["packs"][1][0]["used"], 3);
        assert_eq!(v["capacity"], 4);
        assert!(v["pad_utilization"].is_number());
    }
}
