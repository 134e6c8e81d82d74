use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn meshfi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshfi")).args(args).env_remove("MESHFI_WORKERS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn model() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/toy_cnn.json").display().to_string()
}

/// Lines between `[name]` and the next block header.
fn block(text: &str, name: &str) -> Vec<String> {
    let head = format!("[{name}]");
    text.lines()
        .skip_while(|l| *l != head)
        .skip(1)
        .take_while(|l| !l.starts_with('['))
        .map(str::to_owned)
        .collect()
}

fn mask_cells(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (r, line) in block(text, "diff").iter().enumerate() {
        for (c, v) in line.split(',').enumerate() {
            if v == "1" {
                out.push((r, c));
            }
        }
    }
    out
}

#[test]
fn matmul_reports_closed_form_cycles() {
    let o = meshfi(&["matmul", "--dim", "8", "--k", "8", "--seed", "7"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert_eq!(block(&s, "C").len(), 8);
    assert!(block(&s, "summary")[0].starts_with("cycles=45,"));
}

#[test]
fn matmul_from_csv_files() {
    let d = tempfile::tempdir().unwrap();
    let w = |n: &str, t: &str| {
        let p = d.path().join(n);
        std::fs::write(&p, t).unwrap();
        p.display().to_string()
    };
    let a = w("a.csv", "1, 2, 3\n4,5,6\n");
    let b = w("b.csv", "1,0\n0,1\n-1,2\n");
    let dd = w("d.csv", "10,0\n0,-10\n");
    let o = meshfi(&["matmul", "--a-file", &a, "--b-file", &b, "--d-file", &dd]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(block(&stdout(&o), "C"), vec!["8,8", "-2,7"]);
}

#[test]
fn zero_dim_is_a_usage_error() {
    assert_eq!(meshfi(&["matmul", "--dim", "0", "--k", "4", "--seed", "1"]).status.code(), Some(2));
}

#[test]
fn propag_fault_corrupts_its_column() {
    let o = meshfi(&[
        "inject", "--dim", "8", "--k", "8", "--seed", "1", "--row", "0", "--col", "3", "--signal", "propag", "--bit",
        "0", "--cycle", "12",
    ]);
    assert!(o.status.success());
    let cells = mask_cells(&stdout(&o));
    assert!(!cells.is_empty());
    assert!(cells.iter().all(|&(_, c)| c == 3));
}

#[test]
fn local_valid_fault_hits_one_cell() {
    let o = meshfi(&[
        "inject", "--dim", "4", "--k", "4", "--seed", "3", "--row", "1", "--col", "1", "--signal", "valid", "--bit",
        "0", "--cycle", "8", "--no-valid-propagation",
    ]);
    assert!(o.status.success());
    assert_eq!(mask_cells(&stdout(&o)), vec![(1, 1)]);
}

#[test]
fn out_of_range_fault_flags_are_usage_errors() {
    let base = ["inject", "--dim", "4", "--k", "4", "--seed", "3", "--signal", "operand_a", "--cycle", "5"];
    let run = |extra: &[&str]| meshfi(&[&base[..], extra].concat()).status.code();
    assert_eq!(run(&["--row", "0", "--col", "0", "--bit", "8"]), Some(2));
    assert_eq!(run(&["--row", "4", "--col", "0", "--bit", "1"]), Some(2));
    assert_eq!(run(&["--row", "0", "--col", "0", "--bit", "1"]), Some(0));
}

#[test]
fn null_hook_matches_plain_inference() {
    let m = model();
    let plain = meshfi(&["infer", "--model", &m, "--input-id", "5"]);
    let hooked = meshfi(&["infer", "--model", &m, "--input-id", "5", "--hook-layer", "3", "--tile", "1,1,1"]);
    assert!(plain.status.success() && hooked.status.success());
    assert_eq!(block(&stdout(&plain), "logits"), block(&stdout(&hooked), "logits"));
}

#[test]
fn infer_matches_golden_fixture() {
    let golden: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/golden.json")).unwrap(),
    )
    .unwrap();
    for e in golden["inputs"].as_array().unwrap().iter().take(4) {
        let id = e["id"].to_string();
        let s = stdout(&meshfi(&["infer", "--model", &model(), "--input-id", &id]));
        assert!(block(&s, "summary")[0].starts_with(&format!("top1={},", e["top1"])));
    }
}

#[test]
fn hooking_a_non_gemm_layer_fails() {
    assert_eq!(meshfi(&["infer", "--model", &model(), "--hook-layer", "2"]).status.code(), Some(1));
}

fn write_config(dir: &Path, mode: &str) -> String {
    let p = dir.join("c.json");
    let text = format!(
        r#"{{"model":"{}","inputs":2,"faults_per_layer_per_input":8,"dim":8,"mode":"{mode}","master_seed":11,"out_dir":"out"}}"#,
        model()
    );
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn campaign_prints_summary_and_reruns_identically() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "rtl");
    let out1 = d.path().join("r1").display().to_string();
    let files = ["report.json", "trials.csv", "heatmap_propag.csv"];
    let read = |f: &str| std::fs::read(Path::new(&out1).join(f)).unwrap();
    let a = meshfi(&["campaign", "--config", &cfg, "--workers", "1", "--out", &out1]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(stdout(&a).contains("mean AVF"));
    let first: Vec<Vec<u8>> = files.iter().map(|f| read(f)).collect();
    let b = meshfi(&["campaign", "--config", &cfg, "--workers", "4", "--out", &out1]);
    assert!(b.status.success());
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&read(f), bytes, "{f}");
    }

    let r = meshfi(&["report", "--in", &out1, "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(v["total_trials"], 2 * 3 * 8);
    assert!(stdout(&meshfi(&["report", "--in", &out1])).contains("[heatmap_valid]"));
}

#[test]
fn sw_campaign_reports_pvf() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "sw");
    let o = meshfi(&["campaign", "--config", &cfg]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("mean PVF"));
    assert!(d.path().join("out/report.json").exists());
}

#[test]
fn missing_config_is_a_usage_error() {
    assert_eq!(meshfi(&["campaign", "--config", "/nonexistent/c.json"]).status.code(), Some(2));
    assert_eq!(meshfi(&["report", "--in", "/nonexistent"]).status.code(), Some(2));
}
