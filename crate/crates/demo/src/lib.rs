//! Browser bindings for the local product code playground. Each export takes
//! plain numbers or a JSON string, runs the corresponding library routine,
//! and returns a JSON string so the page never deals with Rust types. All
//! results are deterministic in their inputs, so the page can replay them.

use codedmm::code::CodeParams;
use codedmm::grid::peel_plan;
use codedmm::matrix::{matmul_reference, DenseMatrix};
use codedmm::sim::{run_coded_matmul, run_speculative_matmul, RunReport, SimConfig, Strategy};
use serde_json::{json, Value};
use wasm_bindgen::prelude::wasm_bindgen;

// ----------
// JSON helpers
// ----------

fn ok(mut body: Value) -> String {
    body.as_object_mut()
        .expect("demo results are JSON objects")
        .insert("ok".into(), Value::Bool(true));
    body.to_string()
}

fn err(message: impl std::fmt::Display) -> String {
    json!({ "ok": false, "error": message.to_string() }).to_string()
}

// ----------
// Peeling playground
// ----------

/// Plans a peeling decode of one `(la + 1) x (lb + 1)` subgrid. `missing_json`
/// is a JSON array of `[row, col]` cells, for example `[[0, 1], [2, 2]]`.
/// Returns the recovery order, per-step reads, and any stuck cells.
#[wasm_bindgen]
pub fn demo_peel(la: u32, lb: u32, missing_json: &str) -> String {
    let missing: Vec<(usize, usize)> = match serde_json::from_str(missing_json) {
        Ok(cells) => cells,
        Err(e) => return err(format!("missing cells must be [[row, col], ..]: {e}")),
    };
    let outcome = match peel_plan(la as usize, lb as usize, &missing) {
        Ok(o) => o,
        Err(e) => return err(e),
    };
    ok(json!({
        "la": la,
        "lb": lb,
        "missing": missing,
        "complete": outcome.is_complete(),
        "reads": outcome.reads,
        "locality": (la as usize).min(lb as usize),
        "steps": outcome.steps,
        "recovered": outcome.recovered,
        "unrecovered_systematic": outcome.unrecovered_systematic,
    }))
}

// ----------
// Bound explorer
// ----------

/// Tabulates the undecodability bound and redundancy overhead for square
/// codes with `l` in `[l_min, l_max]` at straggler probability `p`.
#[wasm_bindgen]
pub fn demo_bounds(p: f64, l_min: u32, l_max: u32) -> String {
    if l_min < 1 || l_min > l_max {
        return err(format!("need 1 <= l_min <= l_max, got [{l_min}, {l_max}]"));
    }
    match codedmm::bounds::sweep_undecodability(p, l_min as usize..l_max as usize + 1) {
        Ok(rows) => ok(json!({ "p": p, "rows": rows })),
        Err(e) => err(e),
    }
}

// ----------
// Coded vs speculative race
// ----------

const RACE_LA: usize = 10;
const RACE_LB: usize = 10;
const RACE_BLOCKS: usize = 20;
const RACE_ROWS: usize = 40;
const RACE_COLS: usize = 4;

/// Deterministic matrix fill in [-1, 1), splitmix64 over (seed, index).
fn fill_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(rows, cols);
    let mut state = seed ^ 0x9e37_79b9_7f4a_7c15;
    for i in 0..rows {
        for j in 0..cols {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^= z >> 31;
            m.set(i, j, (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0);
        }
    }
    m
}

fn report_summary(report: &RunReport) -> Value {
    json!({
        "t_enc": report.t_enc,
        "t_comp": report.t_comp,
        "t_dec": report.t_dec,
        "t_total": report.t_total,
        "wall_clock": report.wall_clock,
        "compute_tasks": report.compute_tasks,
        "stragglers": report.straggler_tasks.len(),
        "recomputed_tasks": report.recomputed_tasks,
        "relaunched_tasks": report.relaunched_tasks,
        "reads_sum": report.r_values.iter().sum::<usize>(),
        "reads_max": report.r_values.iter().max().copied().unwrap_or(0),
    })
}

/// Races one coded multiply against the speculative baseline on the same
/// seeded workload: a 10 x 10 code over a 20 x 20 block grid (484 coded
/// tasks vs 400 uncoded ones). Returns both stage breakdowns and the winner.
#[wasm_bindgen]
pub fn demo_race(seed: u32, p: f64, straggler_factor: f64, q: f64) -> String {
    let mut cfg = SimConfig::default();
    cfg.seed = seed as u64;
    cfg.model.p = p;
    cfg.model.straggler_factor = straggler_factor;
    cfg.policy.q = q;
    if let Err(e) = cfg.validate() {
        return err(e);
    }

    let a = fill_matrix(RACE_ROWS, RACE_COLS, cfg.seed.wrapping_add(1));
    let b = fill_matrix(RACE_ROWS, RACE_COLS, cfg.seed.wrapping_add(2));
    let exact = match matmul_reference(&a, &b) {
        Ok(m) => m,
        Err(e) => return err(e),
    };

    let params = match CodeParams::new(RACE_LA, RACE_LB, RACE_BLOCKS, RACE_BLOCKS) {
        Ok(p) => p,
        Err(e) => return err(e),
    };
    let (c_coded, coded) = match run_coded_matmul(&a, &b, &params, &cfg) {
        Ok(r) => r,
        Err(e) => return err(e),
    };

    let mut spec_cfg = cfg.clone();
    spec_cfg.policy.strategy = Strategy::Speculative;
    let (c_spec, spec) = match run_speculative_matmul(&a, &b, RACE_BLOCKS, RACE_BLOCKS, &spec_cfg) {
        Ok(r) => r,
        Err(e) => return err(e),
    };

    let winner = if coded.t_total < spec.t_total {
        "coded"
    } else {
        "speculative"
    };
    let rel_coded = c_coded.rel_frobenius_distance(&exact).unwrap_or(f64::NAN);
    let rel_spec = c_spec.rel_frobenius_distance(&exact).unwrap_or(f64::NAN);
    ok(json!({
        "seed": seed,
        "p": p,
        "straggler_factor": straggler_factor,
        "q": q,
        "coded": report_summary(&coded),
        "speculative": report_summary(&spec),
        "winner": winner,
        "speedup": spec.t_total / coded.t_total,
        "rel_error_coded": rel_coded,
        "rel_error_speculative": rel_spec,
    }))
}

// ----------
// Tests
// ----------
