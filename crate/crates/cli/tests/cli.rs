use std::process::{Command, Output};

fn l3conv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l3conv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn plan_feasible_layer_exits_zero() {
    let out = l3conv(&["plan", "--machine", "skylakex", "--c", "64", "--d", "56"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("r_lower        20"), "{text}");
    assert!(text.contains("feasible       true"), "{text}");
}

#[test]
fn plan_infeasible_layer_exits_two() {
    let out = l3conv(&["plan", "--machine", "i7", "--c", "512", "--d", "14"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn plan_json_is_parseable() {
    let out = l3conv(&[
        "plan",
        "--machine",
        "i7",
        "--c",
        "64",
        "--d",
        "56",
        "--json",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["r_lower"], 8);
    assert_eq!(v["machine"], "i7");
}

#[test]
fn plan_reports_missing_machine_field() {
    let dir = std::env::temp_dir().join(format!("l3conv-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("partial.toml");
    std::fs::write(&path, "name = \"x\"\npeak_flops = 1e12\n").unwrap();
    let out = l3conv(&[
        "plan",
        "--machine",
        path.to_str().unwrap(),
        "--c",
        "64",
        "--d",
        "56",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mem_bandwidth_bytes_per_s"), "{err}");
    assert!(!err.contains("panicked"));
}

#[test]
fn dump_basis_prints_f23_matrices() {
    let out = l3conv(&["dump-basis", "-T", "4", "-K", "3"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("points = [0, 1, -1, inf]"));
    assert!(text.contains("[G]  # 4x3"));
    assert!(text.contains("1/2   -1/2    1/2"));
}

#[test]
fn dump_basis_rejects_bad_tiles_and_points() {
    assert!(!l3conv(&["dump-basis", "-T", "9"]).status.success());
    assert!(!l3conv(&["dump-basis", "-T", "4", "--points", "0,1,1"])
        .status
        .success());
    assert!(l3conv(&["dump-basis", "-T", "4", "--points", "0,2,-1/2"])
        .status
        .success());
}

#[test]
fn verify_small_sweep_passes() {
    let out = l3conv(&["verify", "--cases", "2", "--workers", "1"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("2 of 2 cases passed"));
}

#[test]
fn bench_writes_csv() {
    let path = std::env::temp_dir().join(format!("l3conv-bench-{}.csv", std::process::id()));
    let out = l3conv(&[
        "bench",
        "--b",
        "1",
        "--c",
        "8",
        "--d",
        "12",
        "--reps",
        "1",
        "--warmup",
        "0",
        "--format",
        "csv",
        "--out",
        path.to_str().unwrap(),
        "--workers",
        "1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(&path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("label,engine,T,R,workers,median_ms,min_ms,flops,tasks,verify,max_rel_err")
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn unknown_engine_is_an_error() {
    let out = l3conv(&[
        "bench",
        "--c",
        "8",
        "--d",
        "12",
        "--engines",
        "fft",
        "--reps",
        "1",
    ]);
    assert!(!out.status.success());
}
