//! Straggler-resilient `y = A x` on the one-parity-per-group row-block code.
//!
//! `A` is split into row blocks and encoded exactly like the matmul operand:
//! after every `L` systematic blocks comes their sum. Each worker multiplies
//! one coded block by `x`, producing one segment of the coded result vector.
//! By linearity the parity worker's segment equals the sum of its group's
//! systematic segments, so a single missing segment per group is recovered
//! with one subtraction; no peeling is needed on a vector.

use crate::code::{encode_row_blocks, BlockKind, CodedLayout};
use crate::error::{Error, Result};
use crate::matrix::{partition_rows, split_row_blocks, DenseMatrix, RowBlockPartition};

// ----------
// Plan
// ----------

/// Group structure tying coded block positions to result-vector segments.
#[derive(Clone, Debug)]
pub struct CodedMatvecPlan {
    pub layout: CodedLayout,
    pub partition: RowBlockPartition,
}

impl CodedMatvecPlan {
    /// Segment length produced by every coded block.
    pub fn segment_len(&self) -> usize {
        self.partition.block_rows
    }

    pub fn coded_len(&self) -> usize {
        self.layout.coded_len()
    }
}

// ----------
// Encode / decode
// ----------

/// Splits `A` into `num_blocks` row blocks and appends one parity block per
/// group of `L`. Workers multiply coded block `i` by `x` independently.
pub fn encode_matvec(
    a: &DenseMatrix,
    num_blocks: usize,
    l: usize,
) -> Result<(CodedMatvecPlan, Vec<DenseMatrix>)> {
    let partition = partition_rows(a.rows(), num_blocks)?;
    let layout = CodedLayout::new(l, num_blocks)?;
    let blocks = split_row_blocks(a, &partition)?;
    let coded = encode_row_blocks(&blocks, &layout)?;
    Ok((CodedMatvecPlan { layout, partition }, coded))
}

/// Reassembles `y` from per-coded-block segments, recovering at most one
/// missing segment per group from that group's parity. Padding rows are
/// trimmed from the tail.
pub fn decode_matvec(segments: &[Option<Vec<f64>>], plan: &CodedMatvecPlan) -> Result<Vec<f64>> {
    if segments.len() != plan.coded_len() {
        return Err(Error::dims(format!(
            "expected {} segments, got {}",
            plan.coded_len(),
            segments.len()
        )));
    }
    let seg_len = plan.segment_len();
    for (pos, seg) in segments.iter().enumerate() {
        if let Some(s) = seg {
            if s.len() != seg_len {
                return Err(Error::dims(format!(
                    "segment {pos} has length {}, expected {seg_len}",
                    s.len()
                )));
            }
        }
    }

    let mut y = vec![0.0; plan.partition.padded_rows()];
    for group in 0..plan.layout.groups() {
        let members: Vec<usize> = plan.layout.group_positions(group).collect();
        let missing: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&pos| segments[pos].is_none())
            .collect();
        if missing.len() > 1 {
            return Err(Error::GroupNotDecodable {
                group,
                missing: missing.len(),
            });
        }
        for &pos in &members {
            let index = match plan.layout.kind(pos) {
                BlockKind::Systematic { index } => index,
                BlockKind::Parity { .. } => continue,
            };
            let offset = index * seg_len;
            match &segments[pos] {
                Some(seg) => y[offset..offset + seg_len].copy_from_slice(seg),
                None => {
                    // Parity segment minus the group's other systematic
                    // segments. A missing parity needs no recovery.
                    let parity_pos = plan.layout.parity_pos(group);
                    let parity = segments[parity_pos]
                        .as_ref()
                        .expect("at most one segment missing in the group");
                    let mut rec = parity.clone();
                    for &other in &members {
                        if other == pos || other == parity_pos {
                            continue;
                        }
                        let seg = segments[other]
                            .as_ref()
                            .expect("at most one segment missing in the group");
                        for (r, v) in rec.iter_mut().zip(seg) {
                            *r -= v;
                        }
                    }
                    y[offset..offset + seg_len].copy_from_slice(&rec);
                }
            }
        }
    }
    y.truncate(plan.partition.rows);
    Ok(y)
}
