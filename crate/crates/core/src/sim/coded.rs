//! The coded pipeline: parallel encode, compute and per-subgrid decode over
//! the object store, with recomputation as the fallback for undecodable
//! subgrids.
//!
//! Timeline semantics: stages are barriers. Encode tasks (one per parity
//! block) start at 0; compute tasks (one per coded cell) start when encode
//! ends; the compute barrier falls when every non-straggling compute task
//! is done, and cells still running at the barrier are the missing set the
//! decoders peel around. Stragglers always finish eventually, so an
//! undecodable subgrid recomputes its blocked systematic cells at the
//! recompute deadline and each such cell becomes available at the earlier
//! of the original straggler and the recomputation. Encode and decode
//! stages relaunch their own stragglers at the `stage_q` completion
//! fraction.

use std::collections::{BTreeMap, HashSet};

use crate::code::{encode_row_blocks, BlockKind, CodeParams, CodedLayout};
use crate::error::{Error, Result};
use crate::grid::{assemble_result, execute_peel, peel_plan, DecodeOutcome};
use crate::matrix::{block_product, partition_rows, split_row_blocks, DenseMatrix, RowBlockPartition};
use crate::matvec::CodedMatvecPlan;
use crate::sim::config::{SimConfig, Strategy};
use crate::sim::engine::{quantile, run_stage, sample_with_force, task_rng, StageSpec};
use crate::sim::engine::{STAGE_COMPUTE, STAGE_DECODE, STAGE_ENCODE};
use crate::sim::report::RunReport;
use crate::sim::store::ObjectStore;

// ----------
// Store keys
// ----------

pub(crate) fn a_key(pos: usize) -> String {
    format!("a_{pos}")
}

pub(crate) fn b_key(pos: usize) -> String {
    format!("b_{pos}")
}

pub(crate) fn cell_key(i: usize, j: usize) -> String {
    crate::grid::default_store_key(i, j)
}

// ----------
// Encoded operands
// ----------

/// One fully encoded operand: its row partition, layout and coded blocks.
/// Sessions cache these per fingerprint so a reused operand costs no encode
/// tasks on later calls.
#[derive(Clone, Debug)]
pub struct CodedOperand {
    pub(crate) fingerprint: u64,
    pub(crate) partition: RowBlockPartition,
    pub(crate) layout: CodedLayout,
    pub(crate) coded: Vec<DenseMatrix>,
}

/// FNV-1a over the dimensions and raw entry bits.
pub(crate) fn fingerprint(m: &DenseMatrix) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |v: u64| {
        for byte in v.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(m.rows() as u64);
    eat(m.cols() as u64);
    for &v in m.data() {
        eat(v.to_bits());
    }
    h
}

pub(crate) fn encode_operand(m: &DenseMatrix, blocks: usize, l: usize) -> Result<CodedOperand> {
    let partition = partition_rows(m.rows(), blocks)?;
    let layout = CodedLayout::new(l, blocks)?;
    let split = split_row_blocks(m, &partition)?;
    let coded = encode_row_blocks(&split, &layout)?;
    Ok(CodedOperand {
        fingerprint: fingerprint(m),
        partition,
        layout,
        coded,
    })
}

// ----------
// Coded matmul
// ----------

struct SubgridDecode {
    ready: f64,
    local_ready: f64,
    plan: DecodeOutcome,
    missing: Vec<(usize, usize)>,
}

/// Runs `C = A * B^T` through the coded pipeline. `reuse_*` supplies an
/// already encoded operand (skipping its encode tasks) when the fingerprint
/// still matches.
#[allow(clippy::too_many_arguments)]
pub(crate) fn simulate_coded_matmul(
    a: &DenseMatrix,
    b: &DenseMatrix,
    params: &CodeParams,
    cfg: &SimConfig,
    call_index: u64,
    reuse_a: Option<&CodedOperand>,
    reuse_b: Option<&CodedOperand>,
) -> Result<(DenseMatrix, RunReport, CodedOperand, CodedOperand)> {
    cfg.validate()?;
    if a.cols() != b.cols() {
        return Err(Error::dims(format!(
            "A is {}x{}, B is {}x{}; A B^T needs matching column counts",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let cached_a = reuse_a.is_some_and(|op| op.fingerprint == fingerprint(a));
    let cached_b = reuse_b.is_some_and(|op| op.fingerprint == fingerprint(b));
    let op_a = if cached_a {
        reuse_a.unwrap().clone()
    } else {
        encode_operand(a, params.blocks_a, params.la)?
    };
    let op_b = if cached_b {
        reuse_b.unwrap().clone()
    } else {
        encode_operand(b, params.blocks_b, params.lb)?
    };

    let mut report = RunReport::new(Strategy::Coded);
    let mut store = ObjectStore::new(cfg.store);

    // Inputs were uploaded before the pipeline starts; a cached operand's
    // parities persist from the call that produced them.
    for (pos, blk) in op_a.coded.iter().enumerate() {
        let parity = matches!(op_a.layout.kind(pos), BlockKind::Parity { .. });
        if !parity || cached_a {
            store.preload(&a_key(pos), blk.to_payload());
        }
    }
    for (pos, blk) in op_b.coded.iter().enumerate() {
        let parity = matches!(op_b.layout.kind(pos), BlockKind::Parity { .. });
        if !parity || cached_b {
            store.preload(&b_key(pos), blk.to_payload());
        }
    }

    let a_block_bytes = op_a.partition.block_rows * a.cols() * 8;
    let b_block_bytes = op_b.partition.block_rows * b.cols() * 8;
    let cell_bytes = op_a.partition.block_rows * op_b.partition.block_rows * 8;

    // --- encode stage ---
    // One task per parity block still to produce: A's groups, then B's.
    let mut enc_sides: Vec<(char, usize)> = Vec::new();
    if !cached_a {
        enc_sides.extend((0..op_a.layout.groups()).map(|g| ('a', g)));
        report.encode_tasks_a = op_a.layout.groups();
    }
    if !cached_b {
        enc_sides.extend((0..op_b.layout.groups()).map(|g| ('b', g)));
        report.encode_tasks_b = op_b.layout.groups();
    }
    let enc_work: Vec<f64> = enc_sides
        .iter()
        .map(|&(side, _)| {
            let l = if side == 'a' { params.la } else { params.lb };
            0.01 * l as f64
        })
        .collect();
    let enc_io: Vec<f64> = enc_sides
        .iter()
        .map(|&(side, _)| {
            let (l, bytes) = if side == 'a' {
                (params.la, a_block_bytes)
            } else {
                (params.lb, b_block_bytes)
            };
            l as f64 * cfg.store.latency(bytes) + cfg.store.latency(bytes)
        })
        .collect();
    let enc_ready = vec![0.0; enc_sides.len()];
    let enc_forced: HashSet<usize> = cfg
        .forced
        .encode
        .iter()
        .copied()
        .filter(|&i| i < enc_sides.len())
        .collect();
    let enc_out = run_stage(
        cfg.seed,
        &cfg.model,
        StageSpec {
            stage: STAGE_ENCODE,
            call_index,
            ready: &enc_ready,
            work: &enc_work,
            io: &enc_io,
            forced: &enc_forced,
            workers: cfg.workers.encode,
            restart_q: Some(cfg.policy.stage_q),
        },
    );
    report.t_enc = enc_out.end;
    report.relaunched_tasks += enc_out.relaunched;
    report.encode_tasks = enc_sides.len();
    for (i, &(side, group)) in enc_sides.iter().enumerate() {
        if enc_out.straggled[i] {
            report.straggler_tasks.push(format!("encode:{i}"));
        }
        // Charged store traffic: read the group's sources, write the parity.
        let (op, key): (&CodedOperand, fn(usize) -> String) = if side == 'a' {
            (&op_a, a_key)
        } else {
            (&op_b, b_key)
        };
        for index in op.layout.group_members(group) {
            store.read(&key(op.layout.coded_pos(index)))?;
        }
        let parity_pos = op.layout.parity_pos(group);
        store.write(&key(parity_pos), op.coded[parity_pos].to_payload());
    }

    // --- compute stage ---
    let (ca, cb) = (params.coded_blocks_a(), params.coded_blocks_b());
    let n_cells = ca * cb;
    let comp_ready = vec![report.t_enc; n_cells];
    let comp_work = vec![1.0; n_cells];
    let comp_io = vec![
        cfg.store.latency(a_block_bytes)
            + cfg.store.latency(b_block_bytes)
            + cfg.store.latency(cell_bytes);
        n_cells
    ];
    let comp_forced: HashSet<usize> = cfg
        .forced
        .compute
        .iter()
        .copied()
        .filter(|&i| i < n_cells)
        .collect();
    let comp_out = run_stage(
        cfg.seed,
        &cfg.model,
        StageSpec {
            stage: STAGE_COMPUTE,
            call_index,
            ready: &comp_ready,
            work: &comp_work,
            io: &comp_io,
            forced: &comp_forced,
            workers: cfg.workers.compute,
            restart_q: None,
        },
    );
    report.compute_tasks = n_cells;

    let mut products: BTreeMap<(usize, usize), DenseMatrix> = BTreeMap::new();
    for i in 0..ca {
        for j in 0..cb {
            let id = i * cb + j;
            if comp_out.straggled[id] {
                report.straggler_tasks.push(format!("compute:{id}"));
            }
            store.read(&a_key(i))?;
            store.read(&b_key(j))?;
            let tile = block_product(&op_a.coded[i], &op_b.coded[j])?;
            store.write(&cell_key(i, j), tile.to_payload());
            products.insert((i, j), tile);
        }
    }

    // The compute barrier: every non-straggler is done; anything still
    // running is what decode has to work around.
    let barrier = {
        let clean = comp_out
            .finish
            .iter()
            .zip(&comp_out.straggled)
            .filter(|(_, &s)| !s)
            .map(|(&f, _)| f)
            .fold(f64::NEG_INFINITY, f64::max);
        if clean.is_finite() {
            clean
        } else {
            comp_out.end
        }
    };
    report.t_comp = barrier - report.t_enc;
    let mut availability = comp_out.finish.clone();

    // --- per-subgrid decode plans, with recomputation where stalled ---
    let (groups_a, groups_b) = (params.groups_a(), params.groups_b());
    let mut subgrids: Vec<SubgridDecode> = Vec::with_capacity(groups_a * groups_b);
    let mut recompute_counter = 0usize;
    for ga in 0..groups_a {
        for gb in 0..groups_b {
            let (oi, oj) = (ga * (params.la + 1), gb * (params.lb + 1));
            let missing_at = |avail: &[f64], t: f64| -> Vec<(usize, usize)> {
                let mut out = Vec::new();
                for la in 0..=params.la {
                    for lb in 0..=params.lb {
                        if avail[(oi + la) * cb + (oj + lb)] > t {
                            out.push((la, lb));
                        }
                    }
                }
                out
            };
            let missing = missing_at(&availability, barrier);
            let plan = peel_plan(params.la, params.lb, &missing)?;
            let local_clean = (0..=params.la)
                .flat_map(|la| (0..=params.lb).map(move |lb| (oi + la) * cb + (oj + lb)))
                .filter(|&id| !comp_out.straggled[id])
                .map(|id| comp_out.finish[id])
                .fold(f64::NEG_INFINITY, f64::max);
            let local_ready = if local_clean.is_finite() {
                local_clean
            } else {
                barrier
            };

            if plan.is_complete() {
                subgrids.push(SubgridDecode {
                    ready: barrier,
                    local_ready,
                    plan,
                    missing,
                });
                continue;
            }
            if !cfg.policy.recompute {
                return Err(Error::NotDecodable {
                    subgrid: (ga, gb),
                    cells: plan.unrecovered_systematic,
                });
            }
            // Recompute the blocked systematic cells; each becomes available
            // at the earlier of the original straggler and the rerun.
            let deadline = match cfg.policy.deadline_quantile {
                Some(dq) => quantile(&comp_out.original_finish, dq),
                None => barrier,
            };
            let mut ready = barrier;
            for &(la, lb) in &plan.unrecovered_systematic {
                let id = (oi + la) * cb + (oj + lb);
                let mut rng = task_rng(
                    cfg.seed,
                    call_index,
                    STAGE_COMPUTE,
                    (n_cells + recompute_counter) as u64,
                );
                let (secs, _) = sample_with_force(&cfg.model, 1.0, &mut rng, false);
                let eff = availability[id].min(deadline + secs + comp_io[id]);
                availability[id] = eff;
                ready = ready.max(eff);
                recompute_counter += 1;
                store.read(&a_key(oi + la))?;
                store.read(&b_key(oj + lb))?;
                store.write(
                    &cell_key(oi + la, oj + lb),
                    products[&(oi + la, oj + lb)].to_payload(),
                );
            }
            let missing = missing_at(&availability, ready);
            let plan = peel_plan(params.la, params.lb, &missing)?;
            debug_assert!(plan.is_complete(), "recomputed subgrid must decode");
            subgrids.push(SubgridDecode {
                ready,
                local_ready: ready,
                plan,
                missing,
            });
        }
    }
    report.recomputed_tasks = recompute_counter;
    report.r_values = subgrids.iter().map(|s| s.plan.reads).collect();

    // --- decode stage ---
    let dec_ready: Vec<f64> = subgrids.iter().map(|s| s.ready).collect();
    let dec_work: Vec<f64> = subgrids
        .iter()
        .map(|s| 0.02 + 0.005 * s.plan.reads as f64)
        .collect();
    let dec_io: Vec<f64> = subgrids
        .iter()
        .map(|s| {
            let recovered_sys = s
                .plan
                .recovered
                .iter()
                .filter(|&&(la, lb)| la < params.la && lb < params.lb)
                .count();
            (s.plan.reads + recovered_sys) as f64 * cfg.store.latency(cell_bytes)
        })
        .collect();
    let dec_forced: HashSet<usize> = cfg
        .forced
        .decode
        .iter()
        .copied()
        .filter(|&i| i < subgrids.len())
        .collect();
    let dec_out = run_stage(
        cfg.seed,
        &cfg.model,
        StageSpec {
            stage: STAGE_DECODE,
            call_index,
            ready: &dec_ready,
            work: &dec_work,
            io: &dec_io,
            forced: &dec_forced,
            workers: cfg.workers.decode,
            restart_q: Some(cfg.policy.stage_q),
        },
    );
    report.decode_tasks = subgrids.len();
    report.relaunched_tasks += dec_out.relaunched;
    report.t_dec = dec_out.end - barrier;
    for g in 0..subgrids.len() {
        if dec_out.straggled[g] {
            report.straggler_tasks.push(format!("decode:{g}"));
        }
    }

    // Decode values: peel each subgrid against the store, charging exactly
    // the planned fresh reads, then write back recovered systematic cells.
    let mut recovered_tiles: BTreeMap<(usize, usize), DenseMatrix> = BTreeMap::new();
    let bytes_before = store.stats.bytes_read;
    for (g, sub) in subgrids.iter().enumerate() {
        let (ga, gb) = (g / groups_b, g % groups_b);
        let (oi, oj) = (ga * (params.la + 1), gb * (params.lb + 1));
        let block_rows_a = op_a.partition.block_rows;
        let block_rows_b = op_b.partition.block_rows;
        let fetch = |la: usize, lb: usize| -> Result<DenseMatrix> {
            let (bytes, _) = store.read(&cell_key(oi + la, oj + lb))?;
            DenseMatrix::from_payload(block_rows_a, block_rows_b, &bytes)
        };
        let (recovered, outcome) = execute_peel(params.la, params.lb, &sub.missing, fetch)?;
        assert_eq!(outcome.reads, sub.plan.reads, "decode read audit");
        for ((la, lb), tile) in recovered {
            if la < params.la && lb < params.lb {
                store.write(&cell_key(oi + la, oj + lb), tile.to_payload());
                recovered_tiles.insert((oi + la, oj + lb), tile);
            }
        }
    }
    report.decode_bytes_read = store.stats.bytes_read - bytes_before;

    report.t_total = report.t_enc + report.t_comp + report.t_dec;
    report.wall_clock = subgrids
        .iter()
        .enumerate()
        .map(|(g, s)| s.local_ready + (dec_out.finish[g] - s.ready))
        .fold(report.t_enc, f64::max);
    report.store = store.stats;

    // Final assembly consumes systematic tiles: recovered values where the
    // decoder produced them, direct products elsewhere.
    let c = assemble_result(params, &op_a.partition, &op_b.partition, |ia, jb| {
        let pos = (op_a.layout.coded_pos(ia), op_b.layout.coded_pos(jb));
        if let Some(tile) = recovered_tiles.get(&pos) {
            return Ok(tile.clone());
        }
        Ok(products[&pos].clone())
    })?;
    Ok((c, report, op_a, op_b))
}

/// One-shot coded matrix multiplication under the simulator.
pub fn run_coded_matmul(
    a: &DenseMatrix,
    b: &DenseMatrix,
    params: &CodeParams,
    cfg: &SimConfig,
) -> Result<(DenseMatrix, RunReport)> {
    let (c, report, _, _) = simulate_coded_matmul(a, b, params, cfg, 0, None, None)?;
    Ok((c, report))
}

// ----------
// Session with operand reuse
// ----------

/// How many recently used operands a session keeps per slot. Iterative apps
/// alternate between a couple of fixed matrices (a ratings matrix and its
/// transpose, a kernel matrix and a preconditioner), so a few slots suffice.
const OPERAND_CACHE_CAP: usize = 4;

fn remember<T>(cache: &mut Vec<T>, op: T, fp: impl Fn(&T) -> u64) {
    if let Some(i) = cache.iter().position(|c| fp(c) == fp(&op)) {
        cache[i] = op;
    } else {
        cache.push(op);
        if cache.len() > OPERAND_CACHE_CAP {
            cache.remove(0);
        }
    }
}

/// A sequence of coded multiplications sharing one config. Each call uses a
/// fresh RNG call index, and an operand that reappears (by fingerprint) on
/// the same side skips its encode tasks, as its parities already sit in the
/// store.
pub struct CodedSession {
    params: CodeParams,
    cfg: SimConfig,
    call_index: u64,
    cached_a: Vec<CodedOperand>,
    cached_b: Vec<CodedOperand>,
    cached_mv: Vec<MatvecOperand>,
}

impl CodedSession {
    pub fn new(params: CodeParams, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(CodedSession {
            params,
            cfg,
            call_index: 0,
            cached_a: Vec::new(),
            cached_b: Vec::new(),
            cached_mv: Vec::new(),
        })
    }

    pub fn params(&self) -> &CodeParams {
        &self.params
    }

    /// `A * B^T` with operand caching across calls.
    pub fn matmul(&mut self, a: &DenseMatrix, b: &DenseMatrix) -> Result<(DenseMatrix, RunReport)> {
        let (fp_a, fp_b) = (fingerprint(a), fingerprint(b));
        let reuse_a = self.cached_a.iter().find(|op| op.fingerprint == fp_a);
        let reuse_b = self.cached_b.iter().find(|op| op.fingerprint == fp_b);
        let (c, report, op_a, op_b) = simulate_coded_matmul(
            a,
            b,
            &self.params,
            &self.cfg,
            self.call_index,
            reuse_a,
            reuse_b,
        )?;
        self.call_index += 1;
        remember(&mut self.cached_a, op_a, |op| op.fingerprint);
        remember(&mut self.cached_b, op_b, |op| op.fingerprint);
        Ok((c, report))
    }

    /// `y = A x` with the session's row-block code (`blocks_a` blocks, one
    /// parity per `la`) and the same operand caching.
    pub fn matvec(&mut self, a: &DenseMatrix, x: &[f64]) -> Result<(Vec<f64>, RunReport)> {
        let fp = fingerprint(a);
        let reuse = self.cached_mv.iter().find(|op| op.fingerprint == fp);
        let (y, report, op) = simulate_coded_matvec(
            a,
            x,
            self.params.blocks_a,
            self.params.la,
            &self.cfg,
            self.call_index,
            reuse,
        )?;
        self.call_index += 1;
        remember(&mut self.cached_mv, op, |op| op.fingerprint);
        Ok((y, report))
    }
}

// ----------
// Coded matvec
// ----------

/// One encoded matvec operand: the row-block plan plus its coded blocks,
/// cacheable across calls by fingerprint.
#[derive(Clone, Debug)]
pub struct MatvecOperand {
    pub(crate) fingerprint: u64,
    pub(crate) plan: CodedMatvecPlan,
    pub(crate) coded: Vec<DenseMatrix>,
}

pub(crate) fn encode_matvec_operand(
    a: &DenseMatrix,
    num_blocks: usize,
    l: usize,
) -> Result<MatvecOperand> {
    let (plan, coded) = crate::matvec::encode_matvec(a, num_blocks, l)?;
    Ok(MatvecOperand {
        fingerprint: fingerprint(a),
        plan,
        coded,
    })
}

/// Runs `y = A x` through the same staged pipeline with the row-block code
/// on `A`: encode writes one parity block per group, compute multiplies
/// each coded block by `x`, and a single decode task patches groups that
/// lost one segment; groups that lost more get their systematic segments
/// recomputed.
pub fn run_coded_matvec(
    a: &DenseMatrix,
    x: &[f64],
    num_blocks: usize,
    l: usize,
    cfg: &SimConfig,
) -> Result<(Vec<f64>, RunReport)> {
    let (y, report, _) = simulate_coded_matvec(a, x, num_blocks, l, cfg, 0, None)?;
    Ok((y, report))
}

pub(crate) fn simulate_coded_matvec(
    a: &DenseMatrix,
    x: &[f64],
    num_blocks: usize,
    l: usize,
    cfg: &SimConfig,
    call_index: u64,
    reuse: Option<&MatvecOperand>,
) -> Result<(Vec<f64>, RunReport, MatvecOperand)> {
    cfg.validate()?;
    if x.len() != a.cols() {
        return Err(Error::dims(format!(
            "A has {} columns, x has {} entries",
            a.cols(),
            x.len()
        )));
    }
    let cached = reuse.is_some_and(|op| op.fingerprint == fingerprint(a));
    let op = if cached {
        reuse.unwrap().clone()
    } else {
        encode_matvec_operand(a, num_blocks, l)?
    };
    let plan = &op.plan;
    let coded = &op.coded;
    let mut report = RunReport::new(Strategy::Coded);
    let mut store = ObjectStore::new(cfg.store);

    let seg_len = plan.segment_len();
    let block_bytes = seg_len * a.cols() * 8;
    let seg_bytes = seg_len * 8;
    let x_bytes = x.len() * 8;
    for (pos, blk) in coded.iter().enumerate() {
        let parity = matches!(plan.layout.kind(pos), BlockKind::Parity { .. });
        if !parity || cached {
            store.preload(&a_key(pos), blk.to_payload());
        }
    }
    store.preload("x", vec_payload(x));

    // --- encode stage (skipped entirely for a cached operand) ---
    let groups = plan.layout.groups();
    let enc_n = if cached { 0 } else { groups };
    let enc_ready = vec![0.0; enc_n];
    let enc_work = vec![0.01 * l as f64; enc_n];
    let enc_io = vec![(l as f64 + 1.0) * cfg.store.latency(block_bytes); enc_n];
    let enc_forced: HashSet<usize> = cfg
        .forced
        .encode
        .iter()
        .copied()
        .filter(|&i| i < enc_n)
        .collect();
    let enc_out = run_stage(
        cfg.seed,
        &cfg.model,
        StageSpec {
            stage: STAGE_ENCODE,
            call_index,
            ready: &enc_ready,
            work: &enc_work,
            io: &enc_io,
            forced: &enc_forced,
            workers: cfg.workers.encode,
            restart_q: Some(cfg.policy.stage_q),
        },
    );
    report.t_enc = enc_out.end;
    report.encode_tasks = enc_n;
    report.encode_tasks_a = enc_n;
    report.relaunched_tasks += enc_out.relaunched;
    for g in 0..enc_n {
        if enc_out.straggled[g] {
            report.straggler_tasks.push(format!("encode:{g}"));
        }
        for index in plan.layout.group_members(g) {
            store.read(&a_key(plan.layout.coded_pos(index)))?;
        }
        let parity_pos = plan.layout.parity_pos(g);
        store.write(&a_key(parity_pos), coded[parity_pos].to_payload());
    }

    // --- compute stage ---
    let n = plan.coded_len();
    let comp_ready = vec![report.t_enc; n];
    let comp_work = vec![1.0; n];
    let comp_io = vec![
        cfg.store.latency(block_bytes) + cfg.store.latency(x_bytes) + cfg.store.latency(seg_bytes);
        n
    ];
    let comp_forced: HashSet<usize> = cfg
        .forced
        .compute
        .iter()
        .copied()
        .filter(|&i| i < n)
        .collect();
    let comp_out = run_stage(
        cfg.seed,
        &cfg.model,
        StageSpec {
            stage: STAGE_COMPUTE,
            call_index,
            ready: &comp_ready,
            work: &comp_work,
            io: &comp_io,
            forced: &comp_forced,
            workers: cfg.workers.compute,
            restart_q: None,
        },
    );
    report.compute_tasks = n;
    let mut segments_all: Vec<Vec<f64>> = Vec::with_capacity(n);
    for pos in 0..n {
        if comp_out.straggled[pos] {
            report.straggler_tasks.push(format!("compute:{pos}"));
        }
        store.read(&a_key(pos))?;
        store.read("x")?;
        let seg = crate::matrix::matvec_reference(&coded[pos], x)?;
        store.write(&seg_key(pos), vec_payload(&seg));
        segments_all.push(seg);
    }
    let barrier = {
        let clean = comp_out
            .finish
            .iter()
            .zip(&comp_out.straggled)
            .filter(|(_, &s)| !s)
            .map(|(&f, _)| f)
            .fold(f64::NEG_INFINITY, f64::max);
        if clean.is_finite() {
            clean
        } else {
            comp_out.end
        }
    };
    report.t_comp = barrier - report.t_enc;
    let mut availability = comp_out.finish.clone();

    // --- group repair ---
    let mut recompute_counter = 0usize;
    let mut ready = barrier;
    for g in 0..groups {
        let positions: Vec<usize> = plan.layout.group_positions(g).collect();
        let missing: Vec<usize> = positions
            .iter()
            .copied()
            .filter(|&pos| availability[pos] > barrier)
            .collect();
        if missing.len() <= 1 {
            continue;
        }
        if !cfg.policy.recompute {
            return Err(Error::GroupNotDecodable {
                group: g,
                missing: missing.len(),
            });
        }
        let deadline = match cfg.policy.deadline_quantile {
            Some(dq) => quantile(&comp_out.original_finish, dq),
            None => barrier,
        };
        for pos in missing {
            if matches!(plan.layout.kind(pos), BlockKind::Parity { .. }) {
                continue;
            }
            let mut rng = task_rng(
                cfg.seed,
                call_index,
                STAGE_COMPUTE,
                (n + recompute_counter) as u64,
            );
            let (secs, _) = sample_with_force(&cfg.model, 1.0, &mut rng, false);
            let eff = availability[pos].min(deadline + secs + comp_io[pos]);
            availability[pos] = eff;
            ready = ready.max(eff);
            recompute_counter += 1;
            store.read(&a_key(pos))?;
            store.read("x")?;
            store.write(&seg_key(pos), vec_payload(&segments_all[pos]));
        }
    }
    report.recomputed_tasks = recompute_counter;

    // Segments still unavailable when the decoder starts.
    let segments: Vec<Option<Vec<f64>>> = (0..n)
        .map(|pos| {
            if availability[pos] > ready {
                None
            } else {
                Some(segments_all[pos].clone())
            }
        })
        .collect();
    // Reads: one parity plus l - 1 siblings per group with a missing
    // systematic segment.
    let mut reads = 0usize;
    for g in 0..groups {
        let has_missing_sys = plan.layout.group_members(g).any(|index| {
            segments[plan.layout.coded_pos(index)].is_none()
        });
        if has_missing_sys {
            reads += l;
        }
    }
    report.r_values = vec![reads];

    // --- decode stage (a single task) ---
    let dec_ready = [ready];
    let dec_work = [0.02 + 0.005 * reads as f64];
    let dec_io = [reads as f64 * cfg.store.latency(seg_bytes) + cfg.store.latency(x_bytes)];
    let dec_forced: HashSet<usize> = cfg
        .forced
        .decode
        .iter()
        .copied()
        .filter(|&i| i < 1)
        .collect();
    let dec_out = run_stage(
        cfg.seed,
        &cfg.model,
        StageSpec {
            stage: STAGE_DECODE,
            call_index,
            ready: &dec_ready,
            work: &dec_work,
            io: &dec_io,
            forced: &dec_forced,
            workers: cfg.workers.decode,
            restart_q: Some(cfg.policy.stage_q),
        },
    );
    report.decode_tasks = 1;
    report.relaunched_tasks += dec_out.relaunched;
    report.t_dec = dec_out.end - barrier;
    if dec_out.straggled[0] {
        report.straggler_tasks.push("decode:0".into());
    }

    let bytes_before = store.stats.bytes_read;
    for g in 0..groups {
        let needs_repair = plan.layout.group_members(g).any(|index| {
            segments[plan.layout.coded_pos(index)].is_none()
        });
        if needs_repair {
            for pos in plan.layout.group_positions(g) {
                if segments[pos].is_some() {
                    store.read(&seg_key(pos))?;
                }
            }
        }
    }
    report.decode_bytes_read = store.stats.bytes_read - bytes_before;

    let y = crate::matvec::decode_matvec(&segments, plan)?;
    store.write("y", vec_payload(&y));

    report.t_total = report.t_enc + report.t_comp + report.t_dec;
    report.wall_clock = report.t_total;
    report.store = store.stats;
    Ok((y, report, op))
}

pub(crate) fn seg_key(pos: usize) -> String {
    format!("y_{pos}")
}

pub(crate) fn vec_payload(v: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(v.len() * 8);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{matmul_reference, matvec_reference, rel_vec_distance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_inputs(seed: u64) -> (DenseMatrix, DenseMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DenseMatrix::random_uniform(12, 5, -1.0, 1.0, &mut rng);
        let b = DenseMatrix::random_uniform(9, 5, -1.0, 1.0, &mut rng);
        (a, b)
    }

    fn quiet_cfg() -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.model.p = 0.0;
        cfg
    }

    // --- clean runs ---

    #[test]
    fn p_zero_run_is_exact_with_no_stragglers() {
        let (a, b) = small_inputs(1);
        let params = CodeParams::new(2, 2, 4, 2).unwrap();
        let (c, report) = run_coded_matmul(&a, &b, &params, &quiet_cfg()).unwrap();
        assert_eq!(c, matmul_reference(&a, &b).unwrap());
        assert!(report.straggler_tasks.is_empty());
        assert_eq!(report.recomputed_tasks, 0);
        assert!(report.r_values.iter().all(|&r| r == 0));
        assert_eq!(report.decode_bytes_read, 0);
        assert!((report.t_total - (report.t_enc + report.t_comp + report.t_dec)).abs() < 1e-12);
        assert!(report.wall_clock <= report.t_total + 1e-12);
    }

    #[test]
    fn encode_stage_writes_parity_blocks_only() {
        let (a, b) = small_inputs(2);
        let params = CodeParams::new(2, 2, 4, 2).unwrap();
        let (_, report) = run_coded_matmul(&a, &b, &params, &quiet_cfg()).unwrap();
        // 2 parity groups for A, 1 for B.
        assert_eq!(report.encode_tasks, 3);
        assert_eq!((report.encode_tasks_a, report.encode_tasks_b), (2, 1));
        // Store writes during encode = 3 parities; compute adds one write
        // per cell, decode none (nothing recovered).
        let cells = params.coded_blocks_a() * params.coded_blocks_b();
        assert_eq!(report.store.writes as usize, 3 + cells);
    }

    // --- forced stragglers ---

    #[test]
    fn forced_single_straggler_per_subgrid_is_decoded_not_recomputed() {
        let (a, b) = small_inputs(3);
        let params = CodeParams::new(2, 2, 4, 2).unwrap();
        let mut cfg = quiet_cfg();
        // Grids are 6x3 coded cells over subgrids of 3x3; force one cell in
        // each of the two subgrids.
        let cb = params.coded_blocks_b();
        cfg.forced.compute = vec![0, 4 * cb + 1];
        let (c, report) = run_coded_matmul(&a, &b, &params, &cfg).unwrap();
        let want = matmul_reference(&a, &b).unwrap();
        assert!(c.rel_frobenius_distance(&want).unwrap() < 1e-9);
        assert_eq!(report.recomputed_tasks, 0);
        assert_eq!(report.r_values, vec![2, 2]);
        assert_eq!(report.straggler_tasks.len(), 2);
    }

    #[test]
    fn forced_rectangle_recomputes_four_cells_and_stays_exact() {
        let (a, b) = small_inputs(4);
        let params = CodeParams::new(2, 2, 4, 2).unwrap();
        let mut cfg = quiet_cfg();
        let cb = params.coded_blocks_b();
        // A 2x2 rectangle of systematic cells in the top-left subgrid.
        cfg.forced.compute = vec![0, 1, cb, cb + 1];
        let (c, report) = run_coded_matmul(&a, &b, &params, &cfg).unwrap();
        let want = matmul_reference(&a, &b).unwrap();
        assert!(c.rel_frobenius_distance(&want).unwrap() < 1e-9);
        assert_eq!(report.recomputed_tasks, 4);
        // The rerun blocks arrive before the stragglers, so nothing is left
        // to peel.
        assert_eq!(report.r_values, vec![0, 0]);
    }

    #[test]
    fn recompute_disabled_surfaces_not_decodable() {
        let (a, b) = small_inputs(5);
        let params = CodeParams::new(2, 2, 4, 2).unwrap();
        let mut cfg = quiet_cfg();
        cfg.policy.recompute = false;
        let cb = params.coded_blocks_b();
        cfg.forced.compute = vec![0, 1, cb, cb + 1];
        match run_coded_matmul(&a, &b, &params, &cfg) {
            Err(Error::NotDecodable { subgrid, cells }) => {
                assert_eq!(subgrid, (0, 0));
                assert_eq!(cells.len(), 4);
            }
            other => panic!("expected NotDecodable, got {other:?}"),
        }
    }

    // --- accounting ---

    #[test]
    fn decode_bytes_equal_r_sum_times_cell_payload() {
        let (a, b) = small_inputs(6);
        let params = CodeParams::new(2, 2, 4, 2).unwrap();
        let mut cfg = quiet_cfg();
        let cb = params.coded_blocks_b();
        cfg.forced.compute = vec![1, 4 * cb + 2];
        let (_, report) = run_coded_matmul(&a, &b, &params, &cfg).unwrap();
        let cell_bytes = 3 * 5 * 8; // block_rows_a x block_rows_b doubles
        assert_eq!(
            report.decode_bytes_read,
            (report.r_sum() * cell_bytes) as u64
        );
    }

    #[test]
    fn random_stragglers_never_corrupt_the_product() {
        let (a, b) = small_inputs(7);
        let params = CodeParams::new(2, 2, 4, 2).unwrap();
        let want = matmul_reference(&a, &b).unwrap();
        for seed in 0..30 {
            let mut cfg = SimConfig::default();
            cfg.seed = seed;
            cfg.model.p = 0.2;
            let (c, _) = run_coded_matmul(&a, &b, &params, &cfg).unwrap();
            assert!(
                c.rel_frobenius_distance(&want).unwrap() < 1e-9,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn identical_config_reproduces_identical_reports() {
        let (a, b) = small_inputs(8);
        let params = CodeParams::new(2, 2, 4, 2).unwrap();
        let mut cfg = SimConfig::default();
        cfg.seed = 31;
        cfg.model.p = 0.1;
        let (c1, r1) = run_coded_matmul(&a, &b, &params, &cfg).unwrap();
        let (c2, r2) = run_coded_matmul(&a, &b, &params, &cfg).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
    }

    #[test]
    fn raising_straggler_factor_never_speeds_up_the_run() {
        let (a, b) = small_inputs(9);
        let params = CodeParams::new(2, 2, 4, 2).unwrap();
        let mut prev = 0.0;
        for factor in [1.5, 3.0, 6.0, 12.0] {
            let mut cfg = SimConfig::default();
            cfg.seed = 77;
            cfg.model.p = 0.15;
            cfg.model.straggler_factor = factor;
            let (_, report) = run_coded_matmul(&a, &b, &params, &cfg).unwrap();
            assert!(
                report.t_total >= prev - 1e-9,
                "t_total fell when factor rose to {factor}"
            );
            prev = report.t_total;
        }
    }

    // --- sessions ---

    #[test]
    fn session_skips_encode_for_a_reused_operand() {
        let (a, b) = small_inputs(10);
        let params = CodeParams::new(2, 2, 4, 2).unwrap();
        let mut session = CodedSession::new(params, quiet_cfg()).unwrap();
        let (_, first) = session.matmul(&a, &b).unwrap();
        assert_eq!((first.encode_tasks_a, first.encode_tasks_b), (2, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let a2 = DenseMatrix::random_uniform(12, 5, -1.0, 1.0, &mut rng);
        let (_, second) = session.matmul(&a2, &b).unwrap();
        assert_eq!((second.encode_tasks_a, second.encode_tasks_b), (2, 0));
        let (_, third) = session.matmul(&a2, &b).unwrap();
        assert_eq!((third.encode_tasks_a, third.encode_tasks_b), (0, 0));
        assert_eq!(third.encode_tasks, 0);
        assert_eq!(third.t_enc, 0.0);
    }

    #[test]
    fn session_results_match_one_shot_runs() {
        let (a, b) = small_inputs(11);
        let params = CodeParams::new(2, 2, 4, 2).unwrap();
        let mut session = CodedSession::new(params, quiet_cfg()).unwrap();
        let (c, _) = session.matmul(&a, &b).unwrap();
        let (c2, _) = session.matmul(&a, &b).unwrap();
        assert_eq!(c, c2);
        assert_eq!(c, matmul_reference(&a, &b).unwrap());
    }

    // --- matvec ---

    #[test]
    fn matvec_p_zero_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = DenseMatrix::random_uniform(10, 4, -1.0, 1.0, &mut rng);
        let x = vec![0.5, -1.0, 2.0, 0.25];
        let (y, report) = run_coded_matvec(&a, &x, 4, 2, &quiet_cfg()).unwrap();
        assert_eq!(y, matvec_reference(&a, &x).unwrap());
        assert_eq!(report.recomputed_tasks, 0);
        assert_eq!(report.r_values, vec![0]);
    }

    #[test]
    fn matvec_single_loss_per_group_decodes_without_recompute() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = DenseMatrix::random_uniform(12, 3, -1.0, 1.0, &mut rng);
        let x = vec![1.0, -0.5, 0.75];
        let mut cfg = quiet_cfg();
        // Positions 0..2 are group 0, 3..5 group 1 (l = 2); lose one
        // systematic segment in each group.
        cfg.forced.compute = vec![0, 4];
        let (y, report) = run_coded_matvec(&a, &x, 4, 2, &cfg).unwrap();
        let want = matvec_reference(&a, &x).unwrap();
        assert!(rel_vec_distance(&y, &want) < 1e-12);
        assert_eq!(report.recomputed_tasks, 0);
        assert_eq!(report.r_values, vec![4]);
        assert_eq!(report.decode_bytes_read, 4 * 3 * 8);
    }

    #[test]
    fn matvec_double_loss_recomputes_the_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = DenseMatrix::random_uniform(12, 3, -1.0, 1.0, &mut rng);
        let x = vec![1.0, 2.0, 3.0];
        let mut cfg = quiet_cfg();
        cfg.forced.compute = vec![0, 1];
        let (y, report) = run_coded_matvec(&a, &x, 4, 2, &cfg).unwrap();
        let want = matvec_reference(&a, &x).unwrap();
        assert!(rel_vec_distance(&y, &want) < 1e-12);
        assert_eq!(report.recomputed_tasks, 2);
        let mut strict = quiet_cfg();
        strict.forced.compute = vec![0, 1];
        strict.policy.recompute = false;
        match run_coded_matvec(&a, &x, 4, 2, &strict) {
            Err(Error::GroupNotDecodable { group: 0, missing: 2 }) => {}
            other => panic!("expected group error, got {other:?}"),
        }
    }

    #[test]
    fn matvec_identity_returns_x_for_any_pattern() {
        let a = DenseMatrix::identity(8);
        let x: Vec<f64> = (0..8).map(|i| (i as f64) - 3.5).collect();
        for forced in [vec![], vec![0], vec![2, 5], vec![0, 1, 3]] {
            let mut cfg = quiet_cfg();
            cfg.forced.compute = forced.clone();
            let (y, _) = run_coded_matvec(&a, &x, 4, 2, &cfg).unwrap();
            assert!(
                rel_vec_distance(&y, &x) < 1e-12,
                "pattern {forced:?}"
            );
        }
    }
}
