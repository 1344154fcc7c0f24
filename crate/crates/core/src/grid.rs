//! Output-grid state, the peeling decoder and result assembly.
//!
//! One subgrid is an `(L_A + 1) x (L_B + 1)` tile of the output grid whose
//! last row and last column hold parity products. Every row satisfies
//! `cell(a, L_B) = sum_{b < L_B} cell(a, b)` and every column satisfies
//! `cell(L_A, b) = sum_{a < L_A} cell(a, b)`, so a missing cell that is the
//! only missing cell of its row (or column) is recovered by reading the
//! other `L_B` (or `L_A`) cells of that line and solving the constraint:
//!
//! ```text
//!   missing systematic:  cell = line parity - sum(other line cells)
//!   missing parity:      cell = sum(line cells)
//! ```
//!
//! The decoder sweeps the subgrid in row-major passes until a fixpoint,
//! preferring the cheaper axis (rows on ties). Reads are counted against a
//! per-decoder cache: a block fetched once is free afterwards, and blocks
//! recovered locally are never fetched at all. Parity cells are peeled when
//! that unblocks the grid but are consumed only; success means every
//! systematic cell is present or recovered.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::code::{BlockKind, CodeParams, CodedLayout};
use crate::error::{Error, Result};
use crate::matrix::{stack_row_blocks, DenseMatrix, RowBlockPartition};

// ----------
// Cell state
// ----------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    Present,
    Missing,
    Recovered,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Row,
    Col,
}

/// One recovery in a peeling schedule: which cell, along which axis, and how
/// many of the line's blocks had to be fetched fresh from the store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeelStep {
    pub cell: (usize, usize),
    pub axis: Axis,
    pub fresh_reads: usize,
}

/// Result of a peeling run over one subgrid.
#[derive(Clone, Debug, Default, Serialize)]
pub struct DecodeOutcome {
    /// Cells recovered, in recovery order (parity cells included).
    pub recovered: Vec<(usize, usize)>,
    /// Distinct blocks fetched from the store (the decoding cost `R`).
    pub reads: usize,
    pub steps: Vec<PeelStep>,
    /// Systematic cells peeling could not reach; empty iff decodable.
    pub unrecovered_systematic: Vec<(usize, usize)>,
}

impl DecodeOutcome {
    pub fn is_complete(&self) -> bool {
        self.unrecovered_systematic.is_empty()
    }
}

// ----------
// Peeling schedule
// ----------

fn check_cells(la: usize, lb: usize, missing: &[(usize, usize)]) -> Result<()> {
    if la == 0 || lb == 0 {
        return Err(Error::invalid("L_A and L_B must be at least 1"));
    }
    let mut seen = vec![false; (la + 1) * (lb + 1)];
    for &(a, b) in missing {
        if a > la || b > lb {
            return Err(Error::invalid(format!(
                "cell ({a}, {b}) outside ({} x {}) subgrid",
                la + 1,
                lb + 1
            )));
        }
        let idx = a * (lb + 1) + b;
        if seen[idx] {
            return Err(Error::invalid(format!("duplicate cell ({a}, {b})")));
        }
        seen[idx] = true;
    }
    Ok(())
}

/// Computes the peeling schedule for a missing set without touching values.
pub fn peel_plan(la: usize, lb: usize, missing: &[(usize, usize)]) -> Result<DecodeOutcome> {
    check_cells(la, lb, missing)?;
    let rows = la + 1;
    let cols = lb + 1;
    let idx = |a: usize, b: usize| a * cols + b;

    let mut state = vec![CellState::Present; rows * cols];
    let mut row_missing = vec![0usize; rows];
    let mut col_missing = vec![0usize; cols];
    for &(a, b) in missing {
        state[idx(a, b)] = CellState::Missing;
        row_missing[a] += 1;
        col_missing[b] += 1;
    }

    let mut fetched = vec![false; rows * cols];
    let mut outcome = DecodeOutcome::default();

    loop {
        let mut progress = false;
        for a in 0..rows {
            for b in 0..cols {
                if state[idx(a, b)] != CellState::Missing {
                    continue;
                }
                let row_ok = row_missing[a] == 1;
                let col_ok = col_missing[b] == 1;
                // Row recovery reads the other L_B cells of the row, column
                // recovery the other L_A cells; prefer the cheaper line and
                // rows on ties.
                let axis = match (row_ok, col_ok) {
                    (true, true) => {
                        if lb <= la {
                            Axis::Row
                        } else {
                            Axis::Col
                        }
                    }
                    (true, false) => Axis::Row,
                    (false, true) => Axis::Col,
                    (false, false) => continue,
                };
                let mut fresh = 0;
                let mates: Vec<(usize, usize)> = match axis {
                    Axis::Row => (0..cols).filter(|&y| y != b).map(|y| (a, y)).collect(),
                    Axis::Col => (0..rows).filter(|&x| x != a).map(|x| (x, b)).collect(),
                };
                for (x, y) in mates {
                    if state[idx(x, y)] == CellState::Present && !fetched[idx(x, y)] {
                        fetched[idx(x, y)] = true;
                        fresh += 1;
                    }
                }
                state[idx(a, b)] = CellState::Recovered;
                row_missing[a] -= 1;
                col_missing[b] -= 1;
                outcome.steps.push(PeelStep {
                    cell: (a, b),
                    axis,
                    fresh_reads: fresh,
                });
                outcome.recovered.push((a, b));
                outcome.reads += fresh;
                progress = true;
            }
        }
        if !progress {
            break;
        }
    }

    for a in 0..la {
        for b in 0..lb {
            if state[idx(a, b)] == CellState::Missing {
                outcome.unrecovered_systematic.push((a, b));
            }
        }
    }
    Ok(outcome)
}

/// True iff peeling recovers every missing systematic cell of the subgrid.
/// Missing parity cells never count against decodability.
pub fn is_decodable(la: usize, lb: usize, missing: &[(usize, usize)]) -> Result<bool> {
    Ok(peel_plan(la, lb, missing)?.is_complete())
}

// ----------
// Value-level decoding
// ----------

/// Replays a peeling schedule with real block arithmetic. `fetch` is called
/// exactly once per fresh store read (`DecodeOutcome.reads` audits this);
/// previously fetched and locally recovered blocks come from the cache.
pub fn execute_peel<F>(
    la: usize,
    lb: usize,
    missing: &[(usize, usize)],
    mut fetch: F,
) -> Result<(BTreeMap<(usize, usize), DenseMatrix>, DecodeOutcome)>
where
    F: FnMut(usize, usize) -> Result<DenseMatrix>,
{
    let plan = peel_plan(la, lb, missing)?;
    let mut cache: BTreeMap<(usize, usize), DenseMatrix> = BTreeMap::new();
    let mut recovered: BTreeMap<(usize, usize), DenseMatrix> = BTreeMap::new();
    let mut fetches = 0usize;

    for step in &plan.steps {
        let (a, b) = step.cell;
        let mates: Vec<(usize, usize)> = match step.axis {
            Axis::Row => (0..lb + 1).filter(|&y| y != b).map(|y| (a, y)).collect(),
            Axis::Col => (0..la + 1).filter(|&x| x != a).map(|x| (x, b)).collect(),
        };
        for &(x, y) in &mates {
            if !cache.contains_key(&(x, y)) {
                let block = fetch(x, y)?;
                fetches += 1;
                cache.insert((x, y), block);
            }
        }
        // Line constraint: parity cell = sum of the systematic cells of the
        // line. Solve it for the missing cell.
        let parity_cell = match step.axis {
            Axis::Row => (a, lb),
            Axis::Col => (la, b),
        };
        let is_parity_target = step.cell == parity_cell;
        let mut acc: Option<DenseMatrix> = None;
        let add = |m: &DenseMatrix, acc: &mut Option<DenseMatrix>| -> Result<()> {
            *acc = Some(match acc.take() {
                None => m.clone(),
                Some(v) => v.add(m)?,
            });
            Ok(())
        };
        if is_parity_target {
            for &(x, y) in &mates {
                add(&cache[&(x, y)], &mut acc)?;
            }
        } else {
            let parity = cache
                .get(&parity_cell)
                .expect("parity mate is part of the line")
                .clone();
            let mut sum: Option<DenseMatrix> = None;
            for &(x, y) in &mates {
                if (x, y) != parity_cell {
                    add(&cache[&(x, y)], &mut sum)?;
                }
            }
            let value = match sum {
                None => parity,
                Some(s) => parity.sub(&s)?,
            };
            acc = Some(value);
        }
        let value = acc.expect("line has at least one mate");
        cache.insert(step.cell, value.clone());
        recovered.insert(step.cell, value);
    }

    assert_eq!(fetches, plan.reads, "fetch count must match the plan");
    Ok((recovered, plan))
}

/// One subgrid with block values; `None` marks a missing cell.
pub struct SubgridValues {
    pub la: usize,
    pub lb: usize,
    pub cells: Vec<Option<DenseMatrix>>,
}

impl SubgridValues {
    pub fn new(la: usize, lb: usize, cells: Vec<Option<DenseMatrix>>) -> Result<Self> {
        if cells.len() != (la + 1) * (lb + 1) {
            return Err(Error::dims(format!(
                "expected {} cells, got {}",
                (la + 1) * (lb + 1),
                cells.len()
            )));
        }
        Ok(SubgridValues { la, lb, cells })
    }

    fn idx(&self, a: usize, b: usize) -> usize {
        a * (self.lb + 1) + b
    }

    pub fn missing(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..=self.la {
            for b in 0..=self.lb {
                if self.cells[self.idx(a, b)].is_none() {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

/// Peels one subgrid in place, filling recovered cells. The outcome reports
/// reads, steps and any unrecoverable systematic cells.
pub fn peel_decode_subgrid(sub: &mut SubgridValues) -> Result<DecodeOutcome> {
    let missing = sub.missing();
    let (la, lb) = (sub.la, sub.lb);
    let cells = &sub.cells;
    let fetch = |a: usize, b: usize| -> Result<DenseMatrix> {
        cells[a * (lb + 1) + b]
            .clone()
            .ok_or_else(|| Error::invalid(format!("cell ({a}, {b}) unexpectedly missing")))
    };
    let (recovered, outcome) = execute_peel(la, lb, &missing, fetch)?;
    for ((a, b), value) in recovered {
        let idx = sub.idx(a, b);
        sub.cells[idx] = Some(value);
    }
    Ok(outcome)
}

// ----------
// Full grid and manifest
// ----------

/// State of one output-grid cell, identified by its coded coordinates and
/// the object-store key its payload lives under.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub i: usize,
    pub j: usize,
    pub state: CellState,
    pub store_key: String,
}

/// The whole coded output grid: `coded_blocks_a x coded_blocks_b` cells in
/// row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodedProductGrid {
    pub params: CodeParams,
    pub cells: Vec<GridCell>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema: u32,
    params: CodeParams,
    cells: Vec<GridCell>,
}

pub fn default_store_key(i: usize, j: usize) -> String {
    format!("c_{i}_{j}")
}

impl CodedProductGrid {
    /// Fresh grid with every cell present under the default key scheme.
    pub fn new_present(params: CodeParams) -> Self {
        let (ca, cb) = (params.coded_blocks_a(), params.coded_blocks_b());
        let mut cells = Vec::with_capacity(ca * cb);
        for i in 0..ca {
            for j in 0..cb {
                cells.push(GridCell {
                    i,
                    j,
                    state: CellState::Present,
                    store_key: default_store_key(i, j),
                });
            }
        }
        CodedProductGrid { params, cells }
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        let cb = self.params.coded_blocks_b();
        assert!(
            i < self.params.coded_blocks_a() && j < cb,
            "grid cell out of range"
        );
        i * cb + j
    }

    pub fn cell(&self, i: usize, j: usize) -> &GridCell {
        &self.cells[self.idx(i, j)]
    }

    pub fn cell_mut(&mut self, i: usize, j: usize) -> &mut GridCell {
        let idx = self.idx(i, j);
        &mut self.cells[idx]
    }

    /// Coded coordinates of subgrid `(ga, gb)`'s top-left cell.
    pub fn subgrid_origin(&self, ga: usize, gb: usize) -> (usize, usize) {
        assert!(
            ga < self.params.groups_a() && gb < self.params.groups_b(),
            "subgrid out of range"
        );
        (ga * (self.params.la + 1), gb * (self.params.lb + 1))
    }

    /// Missing cells of subgrid `(ga, gb)` in local coordinates.
    pub fn subgrid_missing(&self, ga: usize, gb: usize) -> Vec<(usize, usize)> {
        let (oi, oj) = self.subgrid_origin(ga, gb);
        let mut out = Vec::new();
        for a in 0..=self.params.la {
            for b in 0..=self.params.lb {
                if self.cell(oi + a, oj + b).state == CellState::Missing {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn to_manifest_json(&self) -> String {
        let m = Manifest {
            schema: 1,
            params: self.params,
            cells: self.cells.clone(),
        };
        serde_json::to_string_pretty(&m).expect("manifest serialization")
    }

    pub fn from_manifest_json(json: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(json)?;
        if m.schema != 1 {
            return Err(Error::Format(format!("unsupported schema {}", m.schema)));
        }
        let params = CodeParams::new(m.params.la, m.params.lb, m.params.blocks_a, m.params.blocks_b)?;
        let (ca, cb) = (params.coded_blocks_a(), params.coded_blocks_b());
        if m.cells.len() != ca * cb {
            return Err(Error::Format(format!(
                "manifest has {} cells, grid needs {}",
                m.cells.len(),
                ca * cb
            )));
        }
        let mut seen = vec![false; ca * cb];
        for c in &m.cells {
            if c.i >= ca || c.j >= cb {
                return Err(Error::Format(format!("cell ({}, {}) out of range", c.i, c.j)));
            }
            if seen[c.i * cb + c.j] {
                return Err(Error::Format(format!("duplicate cell ({}, {})", c.i, c.j)));
            }
            seen[c.i * cb + c.j] = true;
        }
        let mut cells = m.cells;
        cells.sort_by_key(|c| (c.i, c.j));
        Ok(CodedProductGrid { params, cells })
    }
}

// ----------
// Assembly
// ----------

/// Builds the final `C = A * B^T` from systematic cell values. `get(ia, jb)`
/// must return the block product for systematic block row `ia` of `A` and
/// `jb` of `B`; padding rows introduced by the partitions are trimmed.
pub fn assemble_result<F>(
    params: &CodeParams,
    pa: &RowBlockPartition,
    pb: &RowBlockPartition,
    mut get: F,
) -> Result<DenseMatrix>
where
    F: FnMut(usize, usize) -> Result<DenseMatrix>,
{
    if pa.num_blocks != params.blocks_a || pb.num_blocks != params.blocks_b {
        return Err(Error::dims("partitions do not match code params"));
    }
    // Stack block rows: each block row of C is the horizontal concatenation
    // of the tiles C_{ia, 0..blocks_b}.
    let mut c_rows: Vec<DenseMatrix> = Vec::with_capacity(params.blocks_a);
    for ia in 0..params.blocks_a {
        let mut row_tiles: Vec<DenseMatrix> = Vec::with_capacity(params.blocks_b);
        for jb in 0..params.blocks_b {
            let tile = get(ia, jb)?;
            if tile.rows() != pa.block_rows || tile.cols() != pb.block_rows {
                return Err(Error::dims(format!(
                    "tile ({ia}, {jb}) is {}x{}, expected {}x{}",
                    tile.rows(),
                    tile.cols(),
                    pa.block_rows,
                    pb.block_rows
                )));
            }
            row_tiles.push(tile);
        }
        let mut block_row = DenseMatrix::zeros(pa.block_rows, pb.padded_rows());
        for (jb, tile) in row_tiles.iter().enumerate() {
            for r in 0..pa.block_rows {
                for c in 0..pb.block_rows {
                    block_row.set(r, jb * pb.block_rows + c, tile.get(r, c));
                }
            }
        }
        c_rows.push(block_row);
    }
    let padded = stack_row_blocks(
        &c_rows,
        &RowBlockPartition {
            rows: pa.padded_rows(),
            num_blocks: params.blocks_a,
            block_rows: pa.block_rows,
            pad_rows: 0,
        },
    )?;
    // Trim the zero padding down to the true operand row counts.
    let mut out = DenseMatrix::zeros(pa.rows, pb.rows);
    for i in 0..pa.rows {
        for j in 0..pb.rows {
            out.set(i, j, padded.get(i, j));
        }
    }
    Ok(out)
}

/// Convenience: which systematic tile does coded grid cell `(i, j)` hold,
/// if any.
pub fn systematic_tile(
    a_layout: &CodedLayout,
    b_layout: &CodedLayout,
    i: usize,
    j: usize,
) -> Option<(usize, usize)> {
    match (a_layout.kind(i), b_layout.kind(j)) {
        (BlockKind::Systematic { index: ia }, BlockKind::Systematic { index: jb }) => {
            Some((ia, jb))
        }
        _ => None,
    }
}
