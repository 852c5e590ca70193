use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/corpus")
        .join(name)
}

fn twinguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinguard"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn harden_while_loop(dir: &TempDir, mode: &str) -> PathBuf {
    let out = dir.path().join(format!("while_loop-{mode}.sft"));
    let o = twinguard(&[
        "harden",
        corpus("while_loop.ir").to_str().unwrap(),
        "--mode",
        mode,
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    out
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let o = twinguard(&[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    assert!(o.stdout.is_empty());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = twinguard(&["parse", "x.ir", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn harden_then_run_matches_golden() {
    let dir = TempDir::new().unwrap();
    let sft = harden_while_loop(&dir, "critical");
    assert!(sft.exists());
    let o = twinguard(&["run", sft.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["output_tape"], serde_json::json!([3]));
    assert_eq!(v["status"]["status"], "halted");
    assert_eq!(v["detections"], serde_json::json!([]));
}

#[test]
fn invalid_fault_bit_exits_2() {
    let dir = TempDir::new().unwrap();
    let sft = harden_while_loop(&dir, "critical");
    let o = twinguard(&["run", sft.to_str().unwrap(), "--fault", "code:0:9@0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!stderr(&o).is_empty());
    let o = twinguard(&["run", sft.to_str().unwrap(), "--fault", "code:96:0@0"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn msb_position_flag_example() {
    let o = twinguard(&["inject", "--byte", "0b01000110", "--paper-bit", "5"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(
        stdout(&o).starts_with("01000110 -> 01001110"),
        "{}",
        stdout(&o)
    );
    let o = twinguard(&["inject", "--byte", "0x46", "--bit", "3"]);
    assert!(stdout(&o).starts_with("01000110 -> 01001110"));
    let o = twinguard(&["inject", "--byte", "70", "--paper-bit", "9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_while_loop_selects_i_and_the_header() {
    let o = twinguard(&["analyze", corpus("while_loop.ir").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let i = v["variables"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["name"] == "i")
        .unwrap();
    assert_eq!(i["critical"], true);
    let blocks = v["critical_blocks"].as_array().unwrap();
    assert!(blocks
        .iter()
        .any(|b| b["start"] == 0 && b["reason"] == "conditional-terminator"));
}

#[test]
fn analyze_accepts_weights_and_rejects_bad_ones() {
    let while_loop = corpus("while_loop.ir");
    let o = twinguard(&[
        "analyze",
        while_loop.to_str().unwrap(),
        "--weights",
        "1,0,0",
        "--theta",
        "1",
        "--top-k",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let critical: Vec<&str> = v["variables"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["critical"] == true)
        .map(|r| r["name"].as_str().unwrap())
        .collect();
    assert_eq!(critical, ["i"]);
    let o = twinguard(&[
        "analyze",
        while_loop.to_str().unwrap(),
        "--weights",
        "1,-1,0",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_program_exits_1() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.ir");
    fs::write(&bad, "var x = 1\nx = y\nhalt\n").unwrap();
    let o = twinguard(&["parse", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.ir:2"), "{}", stderr(&o));
    let o = twinguard(&["parse", dir.path().join("missing.ir").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupted_backup_exits_1() {
    let dir = TempDir::new().unwrap();
    let sft = harden_while_loop(&dir, "full");
    let mut bytes = fs::read(&sft).unwrap();
    bytes[20] ^= 0x10;
    fs::write(&sft, bytes).unwrap();
    let o = twinguard(&["run", sft.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("integrity"), "{}", stderr(&o));
}

#[test]
fn parse_writes_image_and_disasm_reads_it_back() {
    let dir = TempDir::new().unwrap();
    let img = dir.path().join("fanout_tree.bin");
    let o = twinguard(&[
        "parse",
        corpus("fanout_tree.ir").to_str().unwrap(),
        "-o",
        img.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(&fs::read(&img).unwrap()[..4], b"SFT1");
    let o = twinguard(&["disasm", img.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = dir.path().join("again.ir");
    fs::write(&text, stdout(&o)).unwrap();
    let o = twinguard(&["parse", text.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn disasm_container_keeps_names() {
    let dir = TempDir::new().unwrap();
    let sft = harden_while_loop(&dir, "critical");
    let o = twinguard(&["disasm", sft.to_str().unwrap()]);
    assert!(stdout(&o).contains("br i > one"));
    let o = twinguard(&["disasm", sft.to_str().unwrap(), "--working"]);
    assert!(stdout(&o).contains("out x"));
}

#[test]
fn trace_has_one_line_per_instruction() {
    let dir = TempDir::new().unwrap();
    let sft = harden_while_loop(&dir, "critical");
    let trace = dir.path().join("t.jsonl");
    let o = twinguard(&[
        "run",
        sft.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let lines = fs::read_to_string(&trace).unwrap();
    assert_eq!(
        lines.lines().count() as u64,
        v["dyn_instr_count"].as_u64().unwrap()
    );
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["opcode"], "br");
}

#[test]
fn inject_lists_and_runs_faults() {
    let dir = TempDir::new().unwrap();
    let sft = harden_while_loop(&dir, "critical");
    let s = sft.to_str().unwrap();
    let o = twinguard(&["inject", s, "--enumerate", "--triggers", "0..9"]);
    // 12 instructions and 9 variables, 10 triggers
    assert_eq!(stdout(&o).lines().count(), (8 * 12 + 4 * 9) * 8 * 10);
    let o = twinguard(&[
        "inject",
        s,
        "--sample",
        "5",
        "--seed",
        "3",
        "--triggers",
        "0..20",
    ]);
    assert_eq!(stdout(&o).lines().count(), 5);
    let o = twinguard(&["inject", s, "--fault", "code:0:3@0"]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["outcome"], "detected-recovered");
}

#[test]
fn campaign_is_deterministic_across_jobs_and_reports() {
    let dir = TempDir::new().unwrap();
    let sft = harden_while_loop(&dir, "critical");
    let s = sft.to_str().unwrap();
    let mut csvs = Vec::new();
    for jobs in ["1", "4"] {
        let out = dir.path().join(format!("c{jobs}"));
        let o = twinguard(&[
            "campaign",
            s,
            "--modes",
            "none,critical",
            "--sample",
            "300",
            "--seed",
            "9",
            "--triggers",
            "0..25",
            "--jobs",
            jobs,
            "-o",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        csvs.push(fs::read(out.join("trials.csv")).unwrap());
        assert!(out.join("overhead.csv").exists());
    }
    assert_eq!(csvs[0], csvs[1]);
    let o = twinguard(&["report", dir.path().join("c1").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let table = stdout(&o);
    assert!(table.contains("detected-recovered"));
    assert!(table.lines().any(|l| l.starts_with("critical")));
}

#[test]
fn campaign_needs_a_fault_source() {
    let dir = TempDir::new().unwrap();
    let sft = harden_while_loop(&dir, "critical");
    let o = twinguard(&[
        "campaign",
        sft.to_str().unwrap(),
        "-o",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_on_missing_dir_exits_1() {
    let dir = TempDir::new().unwrap();
    let o = twinguard(&["report", dir.path().join("nope").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
