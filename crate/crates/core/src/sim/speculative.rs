//! The speculative baseline: uncoded block products with stragglers
//! relaunched once a `q` fraction of tasks has finished. Every task must
//! finish (original or relaunch, whichever lands first), so the run ends at
//! the last effective finish instead of a decode barrier.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::matrix::{block_product, matvec_reference, partition_rows, split_row_blocks, DenseMatrix};
use crate::sim::coded::{a_key, b_key, cell_key, seg_key, vec_payload};
use crate::sim::config::{SimConfig, Strategy};
use crate::sim::engine::{run_stage, StageSpec, STAGE_COMPUTE};
use crate::sim::report::RunReport;
use crate::sim::store::ObjectStore;

/// Runs `C = A * B^T` uncoded: one task per block pair, slow tasks
/// duplicated at the `q` completion fraction.
pub fn run_speculative_matmul(
    a: &DenseMatrix,
    b: &DenseMatrix,
    blocks_a: usize,
    blocks_b: usize,
    cfg: &SimConfig,
) -> Result<(DenseMatrix, RunReport)> {
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
    let pa = partition_rows(a.rows(), blocks_a)?;
    let pb = partition_rows(b.rows(), blocks_b)?;
    let split_a = split_row_blocks(a, &pa)?;
    let split_b = split_row_blocks(b, &pb)?;

    let mut report = RunReport::new(Strategy::Speculative);
    let mut store = ObjectStore::new(cfg.store);
    for (i, blk) in split_a.iter().enumerate() {
        store.preload(&a_key(i), blk.to_payload());
    }
    for (j, blk) in split_b.iter().enumerate() {
        store.preload(&b_key(j), blk.to_payload());
    }

    let a_bytes = pa.block_rows * a.cols() * 8;
    let b_bytes = pb.block_rows * b.cols() * 8;
    let cell_bytes = pa.block_rows * pb.block_rows * 8;
    let n = blocks_a * blocks_b;
    let ready = vec![0.0; n];
    let work = vec![1.0; n];
    let io = vec![
        cfg.store.latency(a_bytes) + cfg.store.latency(b_bytes) + cfg.store.latency(cell_bytes);
        n
    ];
    let forced: HashSet<usize> = cfg
        .forced
        .compute
        .iter()
        .copied()
        .filter(|&i| i < n)
        .collect();
    let out = run_stage(
        cfg.seed,
        &cfg.model,
        StageSpec {
            stage: STAGE_COMPUTE,
            call_index: 0,
            ready: &ready,
            work: &work,
            io: &io,
            forced: &forced,
            workers: cfg.workers.compute,
            restart_q: Some(cfg.policy.q),
        },
    );
    report.compute_tasks = n;
    report.relaunched_tasks = out.relaunched;
    report.t_comp = out.end;
    report.t_total = out.end;
    report.wall_clock = out.end;

    let mut tiles: Vec<DenseMatrix> = Vec::with_capacity(n);
    for i in 0..blocks_a {
        for j in 0..blocks_b {
            let id = i * blocks_b + j;
            if out.straggled[id] {
                report.straggler_tasks.push(format!("compute:{id}"));
            }
            store.read(&a_key(i))?;
            store.read(&b_key(j))?;
            let tile = block_product(&split_a[i], &split_b[j])?;
            store.write(&cell_key(i, j), tile.to_payload());
            tiles.push(tile);
        }
    }
    report.store = store.stats;

    let mut c = DenseMatrix::zeros(a.rows(), b.rows());
    for i in 0..blocks_a {
        for j in 0..blocks_b {
            let tile = &tiles[i * blocks_b + j];
            let (r0, r1) = pa.block_range(i);
            let (c0, c1) = pb.block_range(j);
            for (ti, gi) in (r0..r1.min(a.rows())).enumerate() {
                for (tj, gj) in (c0..c1.min(b.rows())).enumerate() {
                    c.set(gi, gj, tile.get(ti, tj));
                }
            }
        }
    }
    Ok((c, report))
}

/// Runs `y = A x` uncoded with the same relaunch policy: one task per row
/// block.
pub fn run_speculative_matvec(
    a: &DenseMatrix,
    x: &[f64],
    num_blocks: usize,
    cfg: &SimConfig,
) -> Result<(Vec<f64>, RunReport)> {
    cfg.validate()?;
    if x.len() != a.cols() {
        return Err(Error::dims(format!(
            "A has {} columns, x has {} entries",
            a.cols(),
            x.len()
        )));
    }
    let partition = partition_rows(a.rows(), num_blocks)?;
    let split = split_row_blocks(a, &partition)?;

    let mut report = RunReport::new(Strategy::Speculative);
    let mut store = ObjectStore::new(cfg.store);
    for (i, blk) in split.iter().enumerate() {
        store.preload(&a_key(i), blk.to_payload());
    }
    store.preload("x", vec_payload(x));

    let block_bytes = partition.block_rows * a.cols() * 8;
    let seg_bytes = partition.block_rows * 8;
    let ready = vec![0.0; num_blocks];
    let work = vec![1.0; num_blocks];
    let io = vec![
        cfg.store.latency(block_bytes)
            + cfg.store.latency(x.len() * 8)
            + cfg.store.latency(seg_bytes);
        num_blocks
    ];
    let forced: HashSet<usize> = cfg
        .forced
        .compute
        .iter()
        .copied()
        .filter(|&i| i < num_blocks)
        .collect();
    let out = run_stage(
        cfg.seed,
        &cfg.model,
        StageSpec {
            stage: STAGE_COMPUTE,
            call_index: 0,
            ready: &ready,
            work: &work,
            io: &io,
            forced: &forced,
            workers: cfg.workers.compute,
            restart_q: Some(cfg.policy.q),
        },
    );
    report.compute_tasks = num_blocks;
    report.relaunched_tasks = out.relaunched;
    report.t_comp = out.end;
    report.t_total = out.end;
    report.wall_clock = out.end;

    let mut y = Vec::with_capacity(partition.padded_rows());
    for (i, blk) in split.iter().enumerate() {
        if out.straggled[i] {
            report.straggler_tasks.push(format!("compute:{i}"));
        }
        store.read(&a_key(i))?;
        store.read("x")?;
        let seg = matvec_reference(blk, x)?;
        store.write(&seg_key(i), vec_payload(&seg));
        y.extend_from_slice(&seg);
    }
    y.truncate(a.rows());
    report.store = store.stats;
    Ok((y, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{matmul_reference, rel_vec_distance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // --- correctness ---

    #[test]
    fn speculative_product_matches_reference_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = DenseMatrix::random_uniform(11, 6, -1.0, 1.0, &mut rng);
        let b = DenseMatrix::random_uniform(7, 6, -1.0, 1.0, &mut rng);
        let mut cfg = SimConfig::default();
        cfg.model.p = 0.3;
        let (c, report) = run_speculative_matmul(&a, &b, 4, 3, &cfg).unwrap();
        assert_eq!(c, matmul_reference(&a, &b).unwrap());
        assert_eq!(report.compute_tasks, 12);
        assert!(report.r_values.is_empty());
    }

    #[test]
    fn speculative_matvec_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let a = DenseMatrix::random_uniform(13, 4, -1.0, 1.0, &mut rng);
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let mut cfg = SimConfig::default();
        cfg.model.p = 0.25;
        let (y, _) = run_speculative_matvec(&a, &x, 5, &cfg).unwrap();
        let want = matvec_reference(&a, &x).unwrap();
        assert!(rel_vec_distance(&y, &want) < 1e-15);
    }

    // --- relaunch policy ---

    #[test]
    fn p_zero_relaunches_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = DenseMatrix::random_uniform(8, 3, -1.0, 1.0, &mut rng);
        let b = DenseMatrix::random_uniform(8, 3, -1.0, 1.0, &mut rng);
        let mut cfg = SimConfig::default();
        cfg.model.p = 0.0;
        let (_, report) = run_speculative_matmul(&a, &b, 4, 4, &cfg).unwrap();
        assert_eq!(report.relaunched_tasks, 0);
        assert!(report.t_total < cfg.model.base_time * (1.0 + cfg.model.jitter) * 1.2);
    }

    #[test]
    fn forced_straggler_is_relaunched_and_run_still_ends_early() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let a = DenseMatrix::random_uniform(8, 3, -1.0, 1.0, &mut rng);
        let b = DenseMatrix::random_uniform(8, 3, -1.0, 1.0, &mut rng);
        let mut cfg = SimConfig::default();
        cfg.model.p = 0.0;
        cfg.forced.compute = vec![5];
        let (_, report) = run_speculative_matmul(&a, &b, 4, 4, &cfg).unwrap();
        assert_eq!(report.relaunched_tasks, 1);
        assert_eq!(report.straggler_tasks, vec!["compute:5"]);
        // Relaunch lands near trigger + one task time, far below the 3x
        // straggler finish.
        assert!(report.t_total < cfg.model.base_time * 3.0);
    }

    #[test]
    fn all_stragglers_still_terminate() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let a = DenseMatrix::random_uniform(8, 3, -1.0, 1.0, &mut rng);
        let b = DenseMatrix::random_uniform(8, 3, -1.0, 1.0, &mut rng);
        let mut cfg = SimConfig::default();
        cfg.model.p = 1.0;
        let (c, report) = run_speculative_matmul(&a, &b, 2, 2, &cfg).unwrap();
        assert_eq!(c, matmul_reference(&a, &b).unwrap());
        assert_eq!(report.straggler_tasks.len(), 4);
        assert!(report.t_total.is_finite());
    }

    #[test]
    fn speculative_runs_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let a = DenseMatrix::random_uniform(9, 3, -1.0, 1.0, &mut rng);
        let b = DenseMatrix::random_uniform(9, 3, -1.0, 1.0, &mut rng);
        let mut cfg = SimConfig::default();
        cfg.seed = 404;
        cfg.model.p = 0.2;
        let (_, r1) = run_speculative_matmul(&a, &b, 3, 3, &cfg).unwrap();
        let (_, r2) = run_speculative_matmul(&a, &b, 3, 3, &cfg).unwrap();
        assert_eq!(r1.t_total, r2.t_total);
        assert_eq!(r1.straggler_tasks, r2.straggler_tasks);
    }
}
