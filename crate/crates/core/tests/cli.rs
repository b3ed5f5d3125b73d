use std::path::Path;
use std::process::{Command, Output};

fn lrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrc"))
        .args(args)
        .env_remove("LRC_LOG")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_GRID: &str = r#"{
  "lengths": [16, 48],
  "depths": [0.0, 0.5, 1.0],
  "trials": 3,
  "tokens_per_frame": 8,
  "feature_dim": 16,
  "tokens_per_clip": 8,
  "layers": 2,
  "heads": 2,
  "dropout": {"keep_prob": 0.8, "deep_keep_ratio": 0.5}
}"#;

#[test]
fn niah_output_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.json");
    std::fs::write(&cfg, SMALL_GRID).unwrap();
    let mut outputs = Vec::new();
    for (i, workers) in ["1", "1", "4", "8"].iter().enumerate() {
        let out = dir.path().join(format!("grid{i}.csv"));
        let o = lrc(&["niah", "--config", path(&cfg), "--seed", "7", "--workers", workers, "--out", path(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read_to_string(&out).unwrap());
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let lines: Vec<&str> = outputs[0].lines().collect();
    assert_eq!(lines[0], "context_frames,depth_fraction,trials,recall");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("16,0,3,"));
}

#[test]
fn pack_respects_capacity() {
    let dir = tempfile::tempdir().unwrap();
    let lens = dir.path().join("lens.txt");
    std::fs::write(&lens, "100\n3000\n5000\n\n2000\n1000\n").unwrap();
    let out = dir.path().join("plan.json");
    let o = lrc(&["pack", "--lengths", path(&lens), "--capacity", "4096", "--out", path(&out)]);
    assert!(o.status.success());
    let plan: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(plan["capacity"], 4096);
    assert_eq!(plan["clipped"], serde_json::json!([2]));
    for pack in plan["packs"].as_array().unwrap() {
        let used: u64 = pack.as_array().unwrap().iter().map(|s| s["used"].as_u64().unwrap()).sum();
        assert!(used <= 4096);
    }
}

#[test]
fn plan_list_is_sorted() {
    let o = lrc(&[
        "plan", "--seq-len", "65536", "--heads", "32", "--nodes", "2", "--gpus", "8",
        "--bytes-per-token", "4096", "--inter-bw", "25e9", "--intra-bw", "300e9",
    ]);
    assert!(o.status.success());
    let plans: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    let times: Vec<f64> = plans.iter().map(|p| p["est_comm_time_per_layer"].as_f64().unwrap()).collect();
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(times, sorted);
    assert!(plans.iter().all(|p| p["inter_node_dimension"] == "ulysses"));
}

#[test]
fn invalid_config_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid.csv");
    for (body, key) in [
        (r#"{"trials": 0}"#, "trials"),
        (r#"{"depths": [1.5]}"#, "depths"),
        (r#"{"tokens_per_clip": 4, "colour": 1}"#, "colour"),
        (r#"{"dropout": {"keep_prob": 0.0, "deep_keep_ratio": 1.0}}"#, "keep_prob"),
    ] {
        let cfg = dir.path().join("bad.json");
        std::fs::write(&cfg, body).unwrap();
        let o = lrc(&["niah", "--config", path(&cfg), "--out", path(&out)]);
        assert_eq!(o.status.code(), Some(2), "{body}");
        let stderr = String::from_utf8_lossy(&o.stderr);
        assert!(stderr.contains(key), "{body}: {stderr}");
        assert!(!out.exists());
    }
    let o = lrc(&["niah", "--workers", "0", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_input_file_exits_1() {
    let o = lrc(&["pack", "--lengths", "/nonexistent/lens.txt", "--capacity", "8"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn compress_reports_sixteen_per_frame() {
    let o = lrc(&["compress", "--duration", "10", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["final_frame_count"], 150);
    assert_eq!(report["tokens_per_frame_out"], 16.0);
    let again = lrc(&["compress", "--duration", "10", "--seed", "3"]);
    assert_eq!(o.stdout, again.stdout);
}

#[test]
fn demo_runs() {
    let o = lrc(&["demo"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("lossless"));
}
