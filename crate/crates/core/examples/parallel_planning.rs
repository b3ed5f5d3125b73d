//! Costs every (all-to-all, ring) factorization on a 2 x 8 cluster under
//! both link mappings.

use lrc::planner::{enumerate_plans, select_plan, ClusterSpec, LinkMapping, Workload};

fn main() -> lrc::Result<()> {
    let workload = Workload {
        seq_len: 262_144,
        heads: 32,
        bytes_per_token: 8192,
    };
    let cluster = ClusterSpec {
        nodes: 2,
        devices_per_node: 8,
        inter_node_bw: 25e9,
        intra_node_bw: 300e9,
    };
    for mapping in [LinkMapping::Paper, LinkMapping::Inverted] {
        let plans = enumerate_plans(&workload, &cluster, mapping)?;
        let full: Vec<_> = plans.iter().filter(|p| p.total_degree == 16).cloned().collect();
        println!("{mapping:?} mapping, 16 devices:");
        for p in &full {
            println!(
                "  u={:>2} r={:>2}  a2a {:>12.0} B  p2p {:>12.0} B  {:.6} s/layer",
                p.ulysses_degree,
                p.ring_degree,
                p.a2a_bytes_per_device_per_layer,
                p.p2p_bytes_per_device_per_layer,
                p.est_comm_time_per_layer
            );
        }
        let best = select_plan(&full)?;
        println!("  cheapest on all 16 devices: u={} r={}", best.ulysses_degree, best.ring_degree);
    }
    Ok(())
}
