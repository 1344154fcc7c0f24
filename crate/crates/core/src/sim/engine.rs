//! Deterministic event machinery: per-task RNG streams, task-time sampling,
//! FIFO dispatch over bounded worker pools, and quantile-triggered restarts.
//!
//! Every task draws from its own RNG stream derived from (master seed, call
//! index, stage id, task id). Changing one stage's task count or worker
//! pool therefore never perturbs another stage's draws, and repeated
//! library calls inside one session stay independent.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sim::config::StragglerModel;

// ----------
// RNG streams
// ----------

pub(crate) const STAGE_ENCODE: u64 = 0;
pub(crate) const STAGE_COMPUTE: u64 = 1;
pub(crate) const STAGE_DECODE: u64 = 2;

/// Dedicated RNG for one task. `task` ids above the stage's task count are
/// reserved for relaunches and recomputations.
pub fn task_rng(master_seed: u64, call_index: u64, stage: u64, task: u64) -> ChaCha8Rng {
    assert!(stage < 256, "stage id out of range");
    assert!(task < 1 << 32, "task id out of range");
    assert!(call_index < 1 << 24, "call index out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((call_index << 40) | (stage << 32) | task);
    rng
}

// ----------
// Task-time sampling
// ----------

/// Draws one task duration: `base_time * work * Uniform[1 - jitter,
/// 1 + jitter]`, multiplied by `straggler_factor` with probability `p`.
/// Returns the seconds and whether the task straggled.
pub fn sample_task_time(
    model: &StragglerModel,
    work_units: f64,
    rng: &mut impl Rng,
) -> (f64, bool) {
    sample_with_force(model, work_units, rng, false)
}

/// Same draw with an override: forced tasks straggle regardless of the
/// Bernoulli outcome. Both underlying draws are always consumed, so forcing
/// one task never shifts another task's stream.
pub(crate) fn sample_with_force(
    model: &StragglerModel,
    work_units: f64,
    rng: &mut impl Rng,
    force: bool,
) -> (f64, bool) {
    assert!(work_units > 0.0, "work units must be positive");
    let noise = rng.random_range(1.0 - model.jitter..=1.0 + model.jitter);
    let drawn = model.p > 0.0 && rng.random_bool(model.p.min(1.0));
    let straggled = force || drawn;
    let mut seconds = model.base_time * work_units * noise;
    if straggled {
        seconds *= model.straggler_factor;
    }
    (seconds, straggled)
}

// ----------
// Dispatch
// ----------

/// Start times under a FIFO pool of `workers` workers (0 = unbounded).
/// Tasks are taken in (ready time, id) order; each starts as soon as it is
/// ready and a worker is free.
pub(crate) fn dispatch(ready: &[f64], durations: &[f64], workers: usize) -> Vec<f64> {
    assert_eq!(ready.len(), durations.len());
    let mut starts = vec![0.0; ready.len()];
    if workers == 0 {
        starts.copy_from_slice(ready);
        return starts;
    }
    let mut order: Vec<usize> = (0..ready.len()).collect();
    order.sort_by(|&a, &b| ready[a].total_cmp(&ready[b]).then(a.cmp(&b)));
    let mut free: BinaryHeap<Reverse<OrderedF64>> = BinaryHeap::new();
    for _ in 0..workers {
        free.push(Reverse(OrderedF64(0.0)));
    }
    for i in order {
        let Reverse(OrderedF64(at)) = free.pop().expect("pool is nonempty");
        let start = ready[i].max(at);
        starts[i] = start;
        free.push(Reverse(OrderedF64(start + durations[i])));
    }
    starts
}

#[derive(PartialEq)]
struct OrderedF64(f64);

impl Eq for OrderedF64 {}

impl PartialOrd for OrderedF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

// ----------
// Quantiles
// ----------

/// The `q`-quantile of a sample as the ceil(q n)-th order statistic.
pub(crate) fn quantile(times: &[f64], q: f64) -> f64 {
    assert!(!times.is_empty());
    assert!(q > 0.0 && q <= 1.0);
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

// ----------
// Stage runner
// ----------

pub(crate) struct StageSpec<'a> {
    pub stage: u64,
    pub call_index: u64,
    /// Absolute time each task becomes runnable.
    pub ready: &'a [f64],
    pub work: &'a [f64],
    /// Deterministic I/O seconds added to each task's duration.
    pub io: &'a [f64],
    pub forced: &'a HashSet<usize>,
    pub workers: usize,
    /// Completion fraction that triggers relaunch of straggling tasks;
    /// `None` disables restarts for the stage.
    pub restart_q: Option<f64>,
}

pub(crate) struct StageOutcome {
    /// Effective per-task completion (earliest of original and relaunch).
    pub finish: Vec<f64>,
    /// Original completion times, before any relaunch.
    pub original_finish: Vec<f64>,
    pub straggled: Vec<bool>,
    /// Stage barrier: latest effective completion, 0 for an empty stage.
    pub end: f64,
    pub relaunched: usize,
}

/// Runs one stage: samples every task on its own stream, dispatches FIFO,
/// then (optionally) relaunches tasks still straggling when the restart
/// quantile of completions is reached. Relaunches run on fresh workers and
/// never cancel the original; the earlier completion wins. Straggler
/// detection at the trigger is assumed reliable: merely jitter-slow tasks
/// are left alone.
pub(crate) fn run_stage(seed: u64, model: &StragglerModel, spec: StageSpec<'_>) -> StageOutcome {
    let n = spec.ready.len();
    assert_eq!(spec.work.len(), n);
    assert_eq!(spec.io.len(), n);
    if n == 0 {
        return StageOutcome {
            finish: Vec::new(),
            original_finish: Vec::new(),
            straggled: Vec::new(),
            end: 0.0,
            relaunched: 0,
        };
    }

    let mut durations = Vec::with_capacity(n);
    let mut straggled = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = task_rng(seed, spec.call_index, spec.stage, i as u64);
        let (secs, s) = sample_with_force(model, spec.work[i], &mut rng, spec.forced.contains(&i));
        durations.push(secs + spec.io[i]);
        straggled.push(s);
    }
    let starts = dispatch(spec.ready, &durations, spec.workers);
    let original_finish: Vec<f64> = starts
        .iter()
        .zip(&durations)
        .map(|(s, d)| s + d)
        .collect();

    let mut finish = original_finish.clone();
    let mut relaunched = 0;
    if let Some(q) = spec.restart_q {
        let trigger = quantile(&original_finish, q);
        for i in 0..n {
            if straggled[i] && original_finish[i] > trigger {
                let mut rng = task_rng(seed, spec.call_index, spec.stage, (n + i) as u64);
                let (secs, _) = sample_with_force(model, spec.work[i], &mut rng, false);
                finish[i] = original_finish[i].min(trigger + secs + spec.io[i]);
                relaunched += 1;
            }
        }
    }
    let end = finish.iter().copied().fold(0.0, f64::max);
    StageOutcome {
        finish,
        original_finish,
        straggled,
        end,
        relaunched,
    }
}
