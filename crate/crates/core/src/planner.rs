//! Cost model for 2D sequence parallelism.
//!
//! A plan factors `P` devices into an all-to-all (head-partitioned) degree
//! `u` and a ring (sequence-partitioned) degree `r`, `P = u × r`. Per layer
//! and per device:
//!
//! ```text
//! tokens_per_device = ceil(S / P)
//! a2a_bytes = 4 × tokens_per_device × bytes_per_token × (u − 1) / u
//! p2p_bytes = 2 × tokens_per_device × bytes_per_token × (r − 1)
//! comm_time = a2a_bytes / bw(a2a link) + p2p_bytes / bw(ring link)
//! ```
//!
//! The all-to-all term covers the Q, K, V and output redistributions; the
//! ring term covers K and V blocks circulated `r − 1` times. Which physical
//! link each dimension uses is set by [`LinkMapping`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub nodes: usize,
    pub devices_per_node: usize,
    /// Bytes per second.
    pub inter_node_bw: f64,
    /// Bytes per second.
    pub intra_node_bw: f64,
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 {
            return Err(Error::config("nodes", "must be at least 1"));
        }
        if self.devices_per_node == 0 {
            return Err(Error::config("gpus", "must be at least 1"));
        }
        if !(self.inter_node_bw > 0.0) || !self.inter_node_bw.is_finite() {
            return Err(Error::config("inter-bw", "must be a positive number"));
        }
        if !(self.intra_node_bw > 0.0) || !self.intra_node_bw.is_finite() {
            return Err(Error::config("intra-bw", "must be a positive number"));
        }
        Ok(())
    }

    pub fn total_devices(&self) -> usize {
        self.nodes * self.devices_per_node
    }
}

/// Which parallel dimension runs over the inter-node links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkMapping {
    /// All-to-all on inter-node links, ring on intra-node links.
    #[default]
    Paper,
    /// Ring on inter-node links, all-to-all on intra-node links.
    Inverted,
}

impl LinkMapping {
    fn bandwidths(self, cluster: &ClusterSpec) -> (f64, f64) {
        match self {
            LinkMapping::Paper => (cluster.inter_node_bw, cluster.intra_node_bw),
            LinkMapping::Inverted => (cluster.intra_node_bw, cluster.inter_node_bw),
        }
    }

    fn inter_node_dimension(self) -> &'static str {
        match self {
            LinkMapping::Paper => "ulysses",
            LinkMapping::Inverted => "ring",
        }
    }
}

impl std::str::FromStr for LinkMapping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(LinkMapping::Paper),
            "inverted" => Ok(LinkMapping::Inverted),
            other => Err(Error::config("mapping", format!("expected `paper` or `inverted`, got `{other}`"))),
        }
    }
}

/// Attention workload being partitioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub seq_len: u64,
    pub heads: usize,
    /// Bytes of one token's Q/K/V/O activation row.
    pub bytes_per_token: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelPlan {
    pub ulysses_degree: usize,
    pub ring_degree: usize,
    pub total_degree: usize,
    pub tokens_per_device: u64,
    pub heads_per_device: usize,
    pub a2a_bytes_per_device_per_layer: f64,
    pub p2p_bytes_per_device_per_layer: f64,
    pub est_comm_time_per_layer: f64,
    /// `"ulysses"` or `"ring"`: the dimension spanning inter-node links.
    pub inter_node_dimension: String,
}

pub fn estimate_cost(
    ulysses_degree: usize,
    ring_degree: usize,
    workload: &Workload,
    cluster: &ClusterSpec,
    mapping: LinkMapping,
) -> Result<ParallelPlan> {
    cluster.validate()?;
    let (u, r) = (ulysses_degree, ring_degree);
    if u == 0 || r == 0 {
        return Err(Error::invalid("parallel degrees must be at least 1"));
    }
    if workload.seq_len == 0 || workload.heads == 0 {
        return Err(Error::invalid("sequence length and head count must be at least 1"));
    }
    if workload.heads % u != 0 {
        return Err(Error::invalid(format!(
            "ulysses degree {u} does not divide {} heads",
            workload.heads
        )));
    }
    let p = u * r;
    if p > cluster.total_devices() {
        return Err(Error::invalid(format!(
            "{p} devices requested, cluster has {}",
            cluster.total_devices()
        )));
    }

    let tokens_per_device = workload.seq_len.div_ceil(p as u64);
    let block = tokens_per_device as u128 * workload.bytes_per_token as u128;
    let a2a = (4 * block * (u as u128 - 1)) as f64 / u as f64;
    let p2p = (2 * block * (r as u128 - 1)) as f64;
    let (a2a_bw, p2p_bw) = mapping.bandwidths(cluster);
    Ok(ParallelPlan {
        ulysses_degree: u,
        ring_degree: r,
        total_degree: p,
        tokens_per_device,
        heads_per_device: workload.heads / u,
        a2a_bytes_per_device_per_layer: a2a,
        p2p_bytes_per_device_per_layer: p2p,
        est_comm_time_per_layer: a2a / a2a_bw + p2p / p2p_bw,
        inter_node_dimension: mapping.inter_node_dimension().to_string(),
    })
}

fn plan_order(a: &ParallelPlan, b: &ParallelPlan) -> std::cmp::Ordering {
    a.est_comm_time_per_layer
        .total_cmp(&b.est_comm_time_per_layer)
        .then(a.ulysses_degree.cmp(&b.ulysses_degree))
        .then(a.total_degree.cmp(&b.total_degree))
}

/// Every `(u, r)` with `u × r ≤` cluster size and `u | heads`, cheapest first.
pub fn enumerate_plans(
    workload: &Workload,
    cluster: &ClusterSpec,
    mapping: LinkMapping,
) -> Result<Vec<ParallelPlan>> {
    cluster.validate()?;
    if workload.seq_len == 0 || workload.heads == 0 {
        return Err(Error::invalid("sequence length and head count must be at least 1"));
    }
    let mut plans = Vec::new();
    for p in 1..=cluster.total_devices() {
        for u in (1..=p).filter(|u| p % u == 0 && workload.heads % u == 0) {
            plans.push(estimate_cost(u, p / u, workload, cluster, mapping)?);
        }
    }
    plans.sort_by(plan_order);
    Ok(plans)
}

/// Cheapest plan; ties go to the smaller ulysses degree, then the smaller total.
pub fn select_plan(plans: &[ParallelPlan]) -> Result<ParallelPlan> {
    plans
        .iter()
        .min_by(|a, b| plan_order(a, b))
        .cloned()
        .ok_or(Error::NoFeasiblePlan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(nodes: usize, gpus: usize) -> ClusterSpec {
        ClusterSpec {
            nodes,
            devices_per_node: gpus,
            inter_node_bw: 25e9,
            intra_node_bw: 300e9,
        }
    }

    fn workload(s: u64, h: usize, b: u64) -> Workload {
        Workload {
            seq_len: s,
            heads: h,
            bytes_per_token: b,
        }
    }

    #[test]
    fn ulysses_candidates_for_full_cluster() {
        let plans = enumerate_plans(&workload(65536, 32, 4096), &cluster(4, 8), LinkMapping::Paper).unwrap();
        let mut us: Vec<usize> = plans
            .iter()
            .filter(|p| p.total_degree == 32)
            .map(|p| p.ulysses_degree)
            .collect();
        us.sort_unstable();
        assert_eq!(us, vec![1, 2, 4, 8, 16, 32]);
    }

    #[test]
    fn a2a_example() {
        let plan = estimate_cost(8, 1, &workload(4096, 32, 4096), &cluster(1, 8), LinkMapping::Paper).unwrap();
        assert_eq!(plan.a2a_bytes_per_device_per_layer, 7_340_032.0);
        assert_eq!(plan.p2p_bytes_per_device_per_layer, 0.0);
        assert_eq!(plan.tokens_per_device, 512);
        assert_eq!(plan.heads_per_device, 4);
    }

    #[test]
    fn single_device_is_free() {
        let plan = estimate_cost(1, 1, &workload(1000, 8, 64), &cluster(1, 1), LinkMapping::Paper).unwrap();
        assert_eq!(plan.est_comm_time_per_layer, 0.0);
    }

    #[test]
    fn doubling_bandwidth_halves_time() {
        let w = workload(10_000, 16, 2048);
        let slow = cluster(2, 4);
        let fast = ClusterSpec {
            inter_node_bw: slow.inter_node_bw * 2.0,
            intra_node_bw: slow.intra_node_bw * 2.0,
            ..slow
        };
        for mapping in [LinkMapping::Paper, LinkMapping::Inverted] {
            let a = enumerate_plans(&w, &slow, mapping).unwrap();
            for p in &a {
                let q = estimate_cost(p.ulysses_degree, p.ring_degree, &w, &fast, mapping).unwrap();
                let expect = p.est_comm_time_per_layer / 2.0;
                assert!((q.est_comm_time_per_layer - expect).abs() <= 1e-15 * expect.max(1.0));
            }
        }
    }

    #[test]
    fn invalid_degrees() {
        let w = workload(4096, 12, 8);
        assert!(estimate_cost(0, 1, &w, &cluster(1, 8), LinkMapping::Paper).is_err());
        assert!(estimate_cost(5, 1, &w, &cluster(1, 8), LinkMapping::Paper).is_err());
        assert!(estimate_cost(4, 4, &w, &cluster(1, 8), LinkMapping::Paper).is_err());
    }

    #[test]
    fn select_tie_breaks() {
        assert!(matches!(select_plan(&[]), Err(Error::NoFeasiblePlan)));
        let w = workload(4096, 8, 16);
        let c = cluster(1, 8);
        let one = estimate_cost(2, 2, &w, &c, LinkMapping::Paper).unwrap();
        assert_eq!(select_plan(std::slice::from_ref(&one)).unwrap(), one);
        let mut a = estimate_cost(4, 1, &w, &c, LinkMapping::Paper).unwrap();
        let mut b = estimate_cost(2, 1, &w, &c, LinkMapping::Paper).unwrap();
        a.est_comm_time_per_layer = 1.0;
        b.est_comm_time_per_layer = 1.0;
        assert_eq!(select_plan(&[a, b.clone()]).unwrap(), b);
    }

    #[test]
    fn mapping_parses() {
        assert_eq!("paper".parse::<LinkMapping>().unwrap(), LinkMapping::Paper);
        assert_eq!("inverted".parse::<LinkMapping>().unwrap(), LinkMapping::Inverted);
        assert!("nvlink".parse::<LinkMapping>().is_err());
    }
}
