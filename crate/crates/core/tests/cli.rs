use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn egobench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egobench")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = egobench(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], needle: &str) {
    let out = egobench(args);
    assert!(!out.status.success(), "{args:?} should fail");
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(needle), "{args:?}: `{needle}` not in stderr: {err}");
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--out", p(dir), "--seed", "2", "--duration", "2", "--points", "500", "--depth-stride", "5"];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn simulate_writes_every_manifest_entry() {
    let tmp = TempDir::new().unwrap();
    let seq = tmp.path().join("seq");
    simulate(&seq, &["--occupancy-res", "8"]);
    let m = json(&seq.join("manifest.json"));
    for key in ["trajectory", "calibration", "points", "gt_mesh", "gt_obbs", "detections", "snippet_gt"] {
        let file = m[key].as_str().unwrap();
        assert!(seq.join(file).is_file(), "{key} -> {file} missing");
    }
    assert_eq!(m["depth"].as_array().unwrap().len(), 4);
    assert_eq!(m["occupancy"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(seq.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 21);
}

#[test]
fn fuse_then_score_against_gt_mesh() {
    let tmp = TempDir::new().unwrap();
    let seq = tmp.path().join("seq");
    simulate(&seq, &[]);
    let mesh = tmp.path().join("mesh.ply");
    let vol = tmp.path().join("tsdf.vol");
    ok(&["fuse", "--manifest", p(&seq.join("manifest.json")), "--voxel", "0.08", "--out", p(&mesh), "--volume-out", p(&vol)]);
    assert!(vol.is_file() && tmp.path().join("tsdf.counts.vol").is_file());
    let report = tmp.path().join("surface.json");
    ok(&["eval-surface", p(&mesh), p(&seq.join("gt_mesh.ply")), "--samples", "20000", "--json", p(&report)]);
    let m = json(&report);
    assert!(m["acc"].as_f64().unwrap() < 0.04, "{m}");
    assert!(m["prec"].as_f64().unwrap() > 0.9, "{m}");
}

#[test]
fn identical_meshes_score_perfectly() {
    let tmp = TempDir::new().unwrap();
    let seq = tmp.path().join("seq");
    simulate(&seq, &[]);
    let gt = seq.join("gt_mesh.ply");
    let report = tmp.path().join("surface.json");
    ok(&["eval-surface", p(&gt), p(&gt), "--json", p(&report)]);
    let m = json(&report);
    assert!(m["acc"].as_f64().unwrap() < 1e-9);
    assert!(m["comp"].as_f64().unwrap() < 1e-9);
    assert_eq!(m["prec"].as_f64().unwrap(), 1.0);
    assert_eq!(m["recal"].as_f64().unwrap(), 1.0);
}

#[test]
fn ground_truth_boxes_score_map_one() {
    let tmp = TempDir::new().unwrap();
    let seq = tmp.path().join("seq");
    simulate(&seq, &[]);
    let gt = seq.join("gt_obbs.jsonl");
    let report = tmp.path().join("obb.json");
    let stdout = ok(&["eval-obb", p(&gt), p(&gt), "--json", p(&report)]);
    assert!(stdout.starts_with("mAP 1.0000"), "{stdout}");
    let r = json(&report);
    assert_eq!(r["map"].as_f64().unwrap(), 1.0);
    assert_eq!(r["iou_thresholds"].as_array().unwrap().len(), 11);
}

#[test]
fn track_consumes_the_simulated_stream() {
    let tmp = TempDir::new().unwrap();
    let seq = tmp.path().join("seq");
    simulate(&seq, &["--sigma-center", "0", "--sigma-size", "0", "--sigma-yaw-deg", "0", "--false-positive-rate", "0"]);
    let out = tmp.path().join("tracks.jsonl");
    ok(&["track", "--detections", p(&seq.join("detections.jsonl")), "--manifest", p(&seq.join("manifest.json")), "--out", p(&out)]);
    let tracks = std::fs::read_to_string(&out).unwrap();
    assert!(tracks.lines().count() > 0);
    for line in tracks.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v.is_object());
    }
}

#[test]
fn lift_writes_three_volumes() {
    let tmp = TempDir::new().unwrap();
    let seq = tmp.path().join("seq");
    simulate(&seq, &[]);
    let out = tmp.path().join("lift");
    ok(&["lift", "--manifest", p(&seq.join("manifest.json")), "--time", "1.9", "--resolution", "16", "--out", p(&out)]);
    for name in ["features.vol", "points.vol", "freespace.vol"] {
        assert!(out.join(name).is_file(), "{name}");
    }
}

#[test]
fn gradcheck_passes_and_reports_json() {
    let tmp = TempDir::new().unwrap();
    let report = tmp.path().join("grad.json");
    let stdout = ok(&["gradcheck", "--seed", "3", "--points", "20", "--json", p(&report)]);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{stdout}");
    assert_eq!(json(&report).as_array().unwrap().len(), 4);
}

#[test]
fn bad_inputs_exit_nonzero_with_context() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.json");
    fails(&["fuse", "--manifest", p(&missing), "--out", p(&tmp.path().join("m.ply"))], "--manifest");
    fails(&["eval-obb", p(&missing), p(&missing)], "predictions");
    fails(&["gradcheck", "--points", "0"], "--points");
    let seq = tmp.path().join("seq");
    simulate(&seq, &[]);
    let gt = seq.join("gt_mesh.ply");
    fails(&["eval-surface", p(&gt), p(&gt), "--tau", "0"], "--tau");
    let det = seq.join("detections.jsonl");
    fails(&["track", "--detections", p(&det), "--out", p(&tmp.path().join("t.jsonl")), "--p-inst", "1.5"], "tracker flags");
    fails(
        &[
            "fuse",
            "--manifest",
            p(&seq.join("manifest.json")),
            "--mode",
            "occupancy",
            "--truncation",
            "0.1",
            "--out",
            p(&tmp.path().join("m.ply")),
        ],
        "--truncation",
    );
    let garbage = tmp.path().join("garbage.ply");
    std::fs::write(&garbage, "not a ply").unwrap();
    fails(&["eval-surface", p(&garbage), p(&gt)], "predicted mesh");
}

#[test]
fn thread_override_is_validated() {
    let out =
        Command::new(env!("CARGO_BIN_EXE_egobench")).args(["gradcheck", "--points", "1"]).env("EGOBENCH_THREADS", "0").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("EGOBENCH_THREADS"));
}
