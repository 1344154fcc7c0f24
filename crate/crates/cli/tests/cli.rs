//! End-to-end tests that drive the compiled binary: output formats, exit
//! codes, file round trips, and byte-level reproducibility.

use std::path::Path;
use std::process::Command;

use codedmm::grid::{CellState, CodedProductGrid};
use codedmm::matrix::{matmul_reference, read_text, write_text, DenseMatrix};
use codedmm::sim::RunReport;
use serde_json::Value;

// ----------
// Harness
// ----------

fn run(args: &[&str]) -> (String, String, i32) {
    let out = Command::new(env!("CARGO_BIN_EXE_codedmm"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        String::from_utf8(out.stdout).expect("utf8 stdout"),
        String::from_utf8(out.stderr).expect("utf8 stderr"),
        out.status.code().expect("exit code"),
    )
}

fn run_ok(args: &[&str]) -> Value {
    let (stdout, stderr, code) = run(args);
    assert_eq!(code, 0, "args {args:?} failed: {stderr}");
    serde_json::from_str(&stdout).expect("stdout is JSON")
}

/// Drops the envelope's timestamp line, the only run-dependent output.
fn strip_timestamp(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("\"timestamp\""))
        .collect::<Vec<_>>()
        .join("\n")
}

fn write_matrix(path: &Path, rows: usize, cols: usize, scale: f64) {
    let data: Vec<f64> = (0..rows * cols)
        .map(|i| scale * ((i as f64 * 0.37).sin() + 0.1))
        .collect();
    let m = DenseMatrix::new(rows, cols, data).expect("valid dims");
    write_text(&m, path).expect("write matrix");
}

// ----------
// Reproducibility
// ----------

#[test]
fn identical_invocations_are_byte_identical_modulo_timestamp() {
    let cases: Vec<Vec<&str>> = vec![
        vec!["bounds", "--p", "0.02", "--la", "10", "--lb", "10", "--x", "100"],
        vec!["simulate", "--strategy", "coded", "--seed", "7"],
        vec!["simulate", "--strategy", "speculative", "--seed", "7"],
        vec!["app", "als", "--strategy", "coded", "--seed", "3", "--size", "16",
             "--items", "12", "--rank", "4", "--blocks-a", "4", "--blocks-b", "4",
             "--iters", "2"],
        vec!["enumerate", "--la", "3", "--lb", "2", "--s", "5"],
    ];
    for args in cases {
        let (first, _, code_a) = run(&args);
        let (second, _, code_b) = run(&args);
        assert_eq!(code_a, 0, "first run of {args:?}");
        assert_eq!(code_b, 0, "second run of {args:?}");
        assert_eq!(
            strip_timestamp(&first),
            strip_timestamp(&second),
            "non-reproducible output for {args:?}"
        );
    }
}

#[test]
fn csv_output_is_byte_identical_across_runs() {
    let args = ["simulate", "--strategy", "coded", "--seed", "9", "--format", "csv"];
    let (first, _, _) = run(&args);
    let (second, _, _) = run(&args);
    assert_eq!(first, second, "csv output embeds no timestamp at all");
}

// ----------
// bounds
// ----------

#[test]
fn bounds_reports_the_reference_design_point() {
    let env = run_ok(&[
        "bounds", "--p", "0.02", "--la", "10", "--lb", "10", "--x", "100",
    ]);
    assert_eq!(env["schema"], 1);
    assert_eq!(env["command"], "bounds");
    let r = &env["result"];
    assert_eq!(r["alpha"]["alpha4"], 3025);
    assert_eq!(r["alpha"]["alpha5"], 353925);
    let t2 = r["theorem2"].as_f64().expect("theorem2");
    assert!(t2 > 3.4e-3 && t2 <= 3.6e-3, "theorem2 = {t2}");
    let t1 = r["theorem1"]["value"].as_f64().expect("theorem1");
    assert!((3.0e-10..=4.0e-10).contains(&t1), "theorem1 = {t1}");
    let co = r["corollary"]["value"].as_f64().expect("corollary");
    assert!((3.0e-3..=3.2e-3).contains(&co), "corollary = {co}");
    let loc = r["locality_lower_bound"]["value"].as_f64().expect("bound");
    assert!((loc - 100.0 / 21.0).abs() < 1e-12, "locality bound = {loc}");
}

#[test]
fn bounds_sweep_emits_one_csv_row_per_l() {
    let (stdout, _, code) = run(&[
        "bounds", "--sweep", "2..6", "--p", "0.05", "--format", "csv",
    ]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = stdout.lines().collect();
    assert!(lines[0].starts_with("# config "), "config comment first");
    assert_eq!(
        lines[1],
        "l,n,bound,redundancy_over_total,redundancy_over_systematic"
    );
    assert_eq!(lines.len(), 2 + 4, "L = 2, 3, 4, 5");
    assert!(lines[2].starts_with("2,9,"), "first swept row is L = 2");
}

// ----------
// simulate
// ----------

#[test]
fn simulate_csv_uses_the_documented_report_header() {
    let (stdout, _, code) = run(&[
        "simulate", "--strategy", "coded", "--seed", "7", "--format", "csv",
    ]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = stdout.lines().collect();
    assert!(lines[0].starts_with("# config "));
    assert_eq!(lines[1], RunReport::csv_header());
    assert_eq!(lines.len(), 3, "one data row");
    assert!(lines[2].starts_with("coded,"));
}

#[test]
fn simulate_echoes_the_resolved_config_and_stays_exact() {
    let env = run_ok(&["simulate", "--strategy", "coded", "--seed", "7"]);
    assert_eq!(env["config"]["sim"]["seed"], 7);
    assert_eq!(env["config"]["sim"]["policy"]["strategy"], "coded");
    assert_eq!(env["config"]["sim"]["model"]["p"], 0.02);
    let rel = env["result"]["rel_error"].as_f64().expect("rel_error");
    assert!(rel <= 1e-9, "coded product drifted: {rel}");
}

#[test]
fn simulate_accepts_a_toml_config_file() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("sim.toml");
    std::fs::write(&path, "seed = 11\n[model]\np = 0.3\n").expect("write config");
    let env = run_ok(&["simulate", "--config", path.to_str().expect("path")]);
    assert_eq!(env["config"]["sim"]["seed"], 11);
    assert_eq!(env["config"]["sim"]["model"]["p"], 0.3);
    // Flag overrides beat the file.
    let env = run_ok(&[
        "simulate", "--config", path.to_str().expect("path"), "--seed", "5",
    ]);
    assert_eq!(env["config"]["sim"]["seed"], 5);
}

// ----------
// multiply and matvec
// ----------

#[test]
fn multiply_writes_the_exact_product_file() {
    let dir = tempfile::tempdir().expect("tempdir");
    let a_path = dir.path().join("a.txt");
    let b_path = dir.path().join("b.txt");
    let c_path = dir.path().join("c.txt");
    write_matrix(&a_path, 12, 5, 1.0);
    write_matrix(&b_path, 9, 5, 0.5);

    let env = run_ok(&[
        "multiply",
        "--a", a_path.to_str().expect("path"),
        "--b", b_path.to_str().expect("path"),
        "--la", "2", "--lb", "3",
        "--blocks-a", "4", "--blocks-b", "3",
        "--seed", "5",
        "--out", c_path.to_str().expect("path"),
    ]);
    assert_eq!(env["result"]["rows"], 12);
    assert_eq!(env["result"]["cols"], 9);
    let rel = env["result"]["rel_error"].as_f64().expect("rel_error");
    assert!(rel <= 1e-12, "product drifted: {rel}");

    let a = read_text(&a_path).expect("a");
    let b = read_text(&b_path).expect("b");
    let c = read_text(&c_path).expect("c");
    let reference = matmul_reference(&a, &b).expect("reference");
    let dist = c.rel_frobenius_distance(&reference).expect("distance");
    assert!(dist <= 1e-12, "written file drifted: {dist}");
}

#[test]
fn matvec_matches_the_reference_product() {
    let dir = tempfile::tempdir().expect("tempdir");
    let a_path = dir.path().join("a.txt");
    let x_path = dir.path().join("x.txt");
    write_matrix(&a_path, 12, 5, 1.0);
    write_matrix(&x_path, 5, 1, 1.0);

    let env = run_ok(&[
        "matvec",
        "--a", a_path.to_str().expect("path"),
        "--x", x_path.to_str().expect("path"),
        "--blocks", "4", "--l", "2",
        "--seed", "5",
    ]);
    assert_eq!(env["result"]["len"], 12);
    let rel = env["result"]["rel_error"].as_f64().expect("rel_error");
    assert!(rel <= 1e-12, "matvec drifted: {rel}");
}

// ----------
// app
// ----------

#[test]
fn app_writes_the_report_to_a_file_when_asked() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("report.json");
    let env = run_ok(&[
        "app", "svd", "--strategy", "coded", "--seed", "1",
        "--size", "24", "--cols", "8",
        "--blocks-a", "4", "--blocks-b", "4",
        "--out", out.to_str().expect("path"),
    ]);
    let on_disk: Value =
        serde_json::from_str(&std::fs::read_to_string(&out).expect("report file"))
            .expect("file is JSON");
    assert_eq!(on_disk["schema"], 1);
    assert_eq!(on_disk["command"], "app");
    assert_eq!(on_disk["result"]["app"], "svd");
    let recon = env["result"]["recon_rel_error"].as_f64().expect("recon");
    assert!(recon <= 1e-8, "svd reconstruction drifted: {recon}");
}

#[test]
fn app_traces_match_between_reference_and_coded_strategies() {
    let common = [
        "--seed", "3", "--size", "16", "--items", "12", "--rank", "4",
        "--blocks-a", "4", "--blocks-b", "4", "--iters", "3",
    ];
    let mut ref_args = vec!["app", "als", "--strategy", "reference"];
    ref_args.extend_from_slice(&common);
    let mut coded_args = vec!["app", "als", "--strategy", "coded"];
    coded_args.extend_from_slice(&common);
    let reference = run_ok(&ref_args);
    let coded = run_ok(&coded_args);
    let ref_trace = reference["result"]["loss_trace"].as_array().expect("trace");
    let coded_trace = coded["result"]["loss_trace"].as_array().expect("trace");
    assert_eq!(ref_trace.len(), coded_trace.len());
    for (r, c) in ref_trace.iter().zip(coded_trace) {
        let (r, c) = (r.as_f64().expect("loss"), c.as_f64().expect("loss"));
        assert!(
            (r - c).abs() <= 1e-8 * r.abs().max(1.0),
            "losses diverged: {r} vs {c}"
        );
    }
    // The simulated executor actually billed simulated time.
    assert!(coded["result"]["sim"]["total"].as_f64().expect("time") > 0.0);
    assert_eq!(reference["result"]["sim"]["calls"], 0);
}

// ----------
// enumerate
// ----------

#[test]
fn enumerate_counts_the_nine_rectangles_of_the_3x3_subgrid() {
    let env = run_ok(&["enumerate", "--la", "2", "--lb", "2", "--s", "4"]);
    assert_eq!(env["result"]["count"], 9);
    assert_eq!(env["result"]["formula"]["kind"], "exact");
    assert_eq!(env["result"]["formula"]["value"], 9);
    assert_eq!(env["result"]["consistent"], true);
}

// ----------
// decode
// ----------

fn manifest_with_missing(missing: &[(usize, usize)], path: &Path) {
    let params = codedmm::code::CodeParams::new(2, 2, 4, 4).expect("params");
    let mut grid = CodedProductGrid::new_present(params);
    for &(i, j) in missing {
        grid.cell_mut(i, j).state = CellState::Missing;
    }
    std::fs::write(path, grid.to_manifest_json()).expect("write manifest");
}

#[test]
fn decode_plans_a_single_straggler_for_two_reads() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("grid.json");
    manifest_with_missing(&[(1, 1)], &path);
    let env = run_ok(&["decode", "--manifest", path.to_str().expect("path")]);
    assert_eq!(env["result"]["all_decodable"], true);
    assert_eq!(env["result"]["total_reads"], 2);
}

#[test]
fn decode_flags_a_rectangle_and_exits_nonzero() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("grid.json");
    manifest_with_missing(&[(0, 0), (0, 1), (1, 0), (1, 1)], &path);
    let (stdout, stderr, code) = run(&[
        "decode", "--manifest", path.to_str().expect("path"), "--dump-grid",
    ]);
    assert_eq!(code, 1, "undecodable grids are runtime errors");
    assert!(stderr.contains("not decodable"), "stderr: {stderr}");
    // The report is still emitted so the caller can see which subgrid failed.
    let env: Value = serde_json::from_str(&stdout).expect("report precedes the error");
    assert_eq!(env["result"]["all_decodable"], false);
    assert!(env["result"]["grid"]
        .as_str()
        .expect("dump")
        .contains("XX"));
}

// ----------
// exit codes
// ----------

#[test]
fn usage_problems_exit_two_and_runtime_problems_exit_one() {
    let (_, _, code) = run(&["bounds", "--no-such-flag"]);
    assert_eq!(code, 2, "unknown flag");

    let (_, stderr, code) = run(&["bounds", "--p", "1.5"]);
    assert_eq!(code, 2, "out-of-range probability");
    assert!(stderr.contains("p must lie"), "stderr: {stderr}");

    let (_, _, code) = run(&["simulate", "--la", "3", "--blocks-a", "20", "--seed", "1"]);
    assert_eq!(code, 2, "block count not divisible by group length");

    let (_, stderr, code) = run(&["app", "krr", "--format", "csv", "--size", "8"]);
    assert_eq!(code, 2, "csv is not defined for app reports");
    assert!(stderr.contains("not supported"), "stderr: {stderr}");

    let (_, _, code) = run(&["multiply", "--a", "/no/such/a.txt", "--b", "/no/such/b.txt"]);
    assert_eq!(code, 1, "missing input files are runtime errors");

    let dir = tempfile::tempdir().expect("tempdir");
    let bad = dir.path().join("sim.toml");
    std::fs::write(&bad, "unknown_key = 1\n").expect("write config");
    let (_, _, code) = run(&["simulate", "--config", bad.to_str().expect("path")]);
    assert_eq!(code, 2, "unknown config keys are usage errors");
}
