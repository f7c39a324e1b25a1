use std::process::{Command, Output};

fn capred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capred"))
        .args(args)
        .env_remove("CAPRED_THREADS")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn reduce_pinching_is_log_three() {
    let out = capred(&["reduce", "pinch:[3];blocks=1,1,1"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!((v["result"]["value"].as_f64().unwrap() - 3f64.ln()).abs() < 1e-11);
    assert_eq!(v["job"]["command"], "reduce");
    assert_eq!(v["settings"]["seed"], 42);
}

#[test]
fn noiseless_classical_channel_uses_blahut_arimoto() {
    let out = capred(&["capacity", "dstoch:[[1,0],[0,1]]"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["result"]["method"], "BlahutArimoto");
    assert!((v["result"]["value"].as_f64().unwrap() - 2f64.ln()).abs() < 1e-10);
}

#[test]
fn entropy_inequality_run_passes() {
    let out = capred(&["verify-lemma1", "--shape", "[3]", "--samples", "1000", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!(v["result"]["minSlack"].as_f64().unwrap() >= -1e-9);
    assert_eq!(v["result"]["passed"], true);
}

#[test]
fn reruns_are_byte_identical() {
    for args in [
        vec!["capacity", "unitary:[2];seed=3", "--restarts", "4"],
        vec!["reduce", "depol:[3];corner=2,3"],
        vec!["decompose", "tensor(id:[2],pinch:[2])"],
    ] {
        let a = capred(&args);
        let b = capred(&args);
        assert_eq!(a.status.code(), Some(0));
        assert_eq!(a.stdout, b.stdout);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let args = ["capacity", "depol:[3];corner=2,3", "--restarts", "6"];
    let one = Command::new(env!("CARGO_BIN_EXE_capred")).args(args).env("CAPRED_THREADS", "1").output().unwrap();
    let many = capred(&[&args[..], &["--threads", "4"]].concat());
    assert_eq!(one.stdout, many.stdout);
}

#[test]
fn exit_codes() {
    let out = capred(&["capacity", "tensor(id:[2],"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("position"));
    let out = capred(&["capacity", "id:[2]", "--restarts", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("restarts"));
    let out = capred(&["capacity", "missing-file.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn map_json_files_are_accepted() {
    let dir = std::env::temp_dir().join(format!("capred-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("pinch.json");
    let map = capred::parse::parse_map("pinch:[2];blocks=1,1").unwrap();
    std::fs::write(&path, map.to_json().to_string()).unwrap();
    let out = capred(&["reduce", path.to_str().unwrap(), "--log-base", "bits"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["result"]["value"].as_f64(), Some(1.0));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn csv_and_human_outputs() {
    let out = capred(&["reduce", "pinch:[3];blocks=1,1,1", "--output", "csv"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 4);
    let out = capred(&["tensor-id", "depol:[2]", "--shape", "[2]", "--output", "human", "--restarts", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("expected"));
}
