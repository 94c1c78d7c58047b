use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vidserve"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn index_prints_meta() {
    let out = ok(bin()
        .arg("index")
        .arg(fixture("h264_30f_gop8_bframes.mp4"))
        .output()
        .unwrap());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["codec"], "h264");
    assert_eq!(v["frame_pts"].as_array().unwrap().len(), 30);
}

#[test]
fn index_refuses_fragmented() {
    let out = bin().arg("index").arg(fixture("h264_fragmented.mp4")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn index_plan_decode_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(bin()
        .arg("index")
        .arg(fixture("h265_24f_gop6_audio.mp4"))
        .arg("--out")
        .arg(d)
        .output()
        .unwrap());
    let cfg = d.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"plan": {"selection": {"uniform_count": 12}, "world_size": 2, "engines_per_gpu": 2, "temporal_patch": 2},
            "decode": {"topology": {"num_gpus": 2, "engines_per_gpu": 2, "max_decode_tasks": 2}}}"#,
    )
    .unwrap();
    ok(bin()
        .args(["plan", "--config"])
        .arg(&cfg)
        .arg(d.join("meta.json"))
        .arg("--out")
        .arg(d)
        .output()
        .unwrap());
    let plan: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["temporal_patch"], 2);
    ok(bin()
        .args(["decode-sim", "--config"])
        .arg(&cfg)
        .arg(d.join("plan.json"))
        .arg(d.join("plan.json"))
        .arg("--out")
        .arg(d)
        .output()
        .unwrap());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("decode_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["jobs"].as_array().unwrap().len(), 2);
    assert!(summary["makespan"].as_f64().unwrap() > 0.0);
    let csv = std::fs::read_to_string(d.join("decode_trace.csv")).unwrap();
    assert!(csv.starts_with("time,gpu,engine,job,rank,segment,event\n"));
}

#[test]
fn serve_sim_is_byte_deterministic() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        ok(bin()
            .args([
                "serve-sim",
                "--preset",
                "long-video",
                "--arch",
                "unified",
                "--seed",
                "7",
                "--out",
            ])
            .arg(dir.path())
            .output()
            .unwrap());
        read_dir_sorted(dir.path())
    };
    let a = run();
    let b = run();
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["serve_unified.json", "tokens_unified.csv"]);
    assert_eq!(a, b);
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"sim": {"scheduler": {"tau": 2048, "alfa": 1}}}"#).unwrap();
    let out = bin().args(["serve-sim", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sim.scheduler"), "{err}");
    assert!(err.contains("alfa"), "{err}");
}

#[test]
fn invalid_values_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"sim": {"split": {"ep_gpus": 4, "d_gpus": 4}}}"#).unwrap();
    let out = bin()
        .args(["serve-sim", "--arch", "split", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin()
        .args(["serve-sim", "--preset", "no-such-preset"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn baseline_assertion() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let base = d.join("base");
    ok(bin()
        .args([
            "serve-sim",
            "--preset",
            "short-video",
            "--arch",
            "monolithic",
            "--seed",
            "3",
            "--out",
        ])
        .arg(&base)
        .output()
        .unwrap());
    let baseline = base.join("serve_monolithic.json");
    // same run meets its own baseline
    ok(bin()
        .args([
            "serve-sim",
            "--preset",
            "short-video",
            "--arch",
            "monolithic",
            "--seed",
            "3",
            "--assert-baseline",
        ])
        .arg(&baseline)
        .output()
        .unwrap());
    // a much slower prefill is a regression
    let cfg = d.join("slow.json");
    std::fs::write(&cfg, r#"{"sim": {"phase_costs": {"prefill_per_token": 0.001}}}"#).unwrap();
    let out = bin()
        .args([
            "serve-sim",
            "--preset",
            "short-video",
            "--arch",
            "monolithic",
            "--seed",
            "3",
            "--config",
        ])
        .arg(&cfg)
        .arg("--assert-baseline")
        .arg(&baseline)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_writes_capacity_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"sweep": {"rates": [0.05, 0.2, 0.8], "requests": 8}}"#).unwrap();
    let out = ok(bin()
        .args(["sweep", "--preset", "image", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 3, "{stdout}");
    let rows: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("capacity.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 3);
    assert!(std::fs::read_to_string(dir.path().join("capacity.csv"))
        .unwrap()
        .starts_with("arch,rate,attainment\n"));
}
