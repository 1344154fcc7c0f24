//! Per-run accounting: stage times, decode reads, straggler and recompute
//! counts, store traffic. Serializable as JSON or a flat CSV row.

use serde::Serialize;

use crate::sim::config::Strategy;
use crate::sim::store::StoreStats;

/// What one simulated run did and how long it took. Stage times are
/// barrier-to-barrier, so `t_total = t_enc + t_comp + t_dec`; `wall_clock`
/// additionally lets each subgrid decode as soon as its own cells allow,
/// estimating the overlapped pipeline.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub strategy: Strategy,
    pub t_enc: f64,
    pub t_comp: f64,
    pub t_dec: f64,
    pub t_total: f64,
    pub wall_clock: f64,
    /// Blocks fetched by each decoding worker, subgrids in row-major order.
    pub r_values: Vec<usize>,
    /// Stage-qualified ids of tasks whose original draw straggled.
    pub straggler_tasks: Vec<String>,
    /// Compute tasks rerun because their subgrid or group was undecodable.
    pub recomputed_tasks: usize,
    /// Tasks relaunched by the speculative restart rule (any stage).
    pub relaunched_tasks: usize,
    pub encode_tasks: usize,
    pub compute_tasks: usize,
    pub decode_tasks: usize,
    /// Encode tasks spent on each operand; zero when a session reuses a
    /// previously encoded side.
    pub encode_tasks_a: usize,
    pub encode_tasks_b: usize,
    pub store: StoreStats,
    /// Bytes the decode stage read while peeling; equals block size times
    /// the sum of `r_values`.
    pub decode_bytes_read: u64,
}

impl RunReport {
    pub fn new(strategy: Strategy) -> Self {
        RunReport {
            strategy,
            t_enc: 0.0,
            t_comp: 0.0,
            t_dec: 0.0,
            t_total: 0.0,
            wall_clock: 0.0,
            r_values: Vec::new(),
            straggler_tasks: Vec::new(),
            recomputed_tasks: 0,
            relaunched_tasks: 0,
            encode_tasks: 0,
            compute_tasks: 0,
            decode_tasks: 0,
            encode_tasks_a: 0,
            encode_tasks_b: 0,
            store: StoreStats::default(),
            decode_bytes_read: 0,
        }
    }

    pub fn r_sum(&self) -> usize {
        self.r_values.iter().sum()
    }

    pub fn r_max(&self) -> usize {
        self.r_values.iter().copied().max().unwrap_or(0)
    }

    /// Column names for `to_csv_row`, stable across releases.
    pub fn csv_header() -> &'static str {
        "strategy,t_enc,t_comp,t_dec,t_total,wall_clock,r_sum,r_max,stragglers,\
         recomputed,relaunched,encode_tasks,compute_tasks,decode_tasks,\
         reads,writes,bytes_read,bytes_written,decode_bytes_read"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.strategy,
            self.t_enc,
            self.t_comp,
            self.t_dec,
            self.t_total,
            self.wall_clock,
            self.r_sum(),
            self.r_max(),
            self.straggler_tasks.len(),
            self.recomputed_tasks,
            self.relaunched_tasks,
            self.encode_tasks,
            self.compute_tasks,
            self.decode_tasks,
            self.store.reads,
            self.store.writes,
            self.store.bytes_read,
            self.store.bytes_written,
            self.decode_bytes_read
        )
    }
}
