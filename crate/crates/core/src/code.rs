//! The local product code: parameters, coded block layout and the encoder.
//!
//! Encoding inserts one parity block after every `L` systematic row blocks:
//!
//! ```text
//!   A_1, A_2, ..., A_L, P_1 = A_1 + ... + A_L,  A_{L+1}, ..., A_{2L}, P_2, ...
//! ```
//!
//! With both operands encoded this way, the output grid of block products
//! splits into independent `(L_A + 1) x (L_B + 1)` subgrids. Inside one
//! subgrid every row and every column carries one parity constraint, so each
//! subgrid is a product code with `k = L_A * L_B` data cells out of
//! `n = (L_A + 1)(L_B + 1)`, minimum distance 4 and locality
//! `min(L_A, L_B)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{block_product, DenseMatrix};

// ----------
// Parameters
// ----------

/// Code geometry for one coded multiplication.
///
/// `blocks_a` / `blocks_b` count systematic row blocks and must be multiples
/// of `la` / `lb`; upstream padding picks block counts that satisfy this.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeParams {
    pub la: usize,
    pub lb: usize,
    pub blocks_a: usize,
    pub blocks_b: usize,
}

impl CodeParams {
    pub fn new(la: usize, lb: usize, blocks_a: usize, blocks_b: usize) -> Result<Self> {
        if la == 0 || lb == 0 {
            return Err(Error::invalid("L_A and L_B must be at least 1"));
        }
        if blocks_a == 0 || blocks_b == 0 {
            return Err(Error::invalid("block counts must be positive"));
        }
        if blocks_a % la != 0 || blocks_b % lb != 0 {
            return Err(Error::invalid(format!(
                "block counts ({blocks_a}, {blocks_b}) must be multiples of (L_A, L_B) = ({la}, {lb})"
            )));
        }
        Ok(CodeParams {
            la,
            lb,
            blocks_a,
            blocks_b,
        })
    }

    pub fn groups_a(&self) -> usize {
        self.blocks_a / self.la
    }

    pub fn groups_b(&self) -> usize {
        self.blocks_b / self.lb
    }

    pub fn coded_blocks_a(&self) -> usize {
        self.blocks_a + self.groups_a()
    }

    pub fn coded_blocks_b(&self) -> usize {
        self.blocks_b + self.groups_b()
    }

    /// Cells per subgrid, `n = (L_A + 1)(L_B + 1)`.
    pub fn subgrid_cells(&self) -> usize {
        (self.la + 1) * (self.lb + 1)
    }

    /// Data cells per subgrid, `k = L_A * L_B`.
    pub fn subgrid_data_cells(&self) -> usize {
        self.la * self.lb
    }

    /// Fraction of grid cells that are redundant, `1 - k/n`.
    pub fn redundancy_fraction(&self) -> f64 {
        1.0 - self.subgrid_data_cells() as f64 / self.subgrid_cells() as f64
    }

    /// Blocks read to repair an isolated straggler.
    pub fn locality(&self) -> usize {
        self.la.min(self.lb)
    }

    /// Product-code minimum distance; any straggler set smaller than this
    /// is always decodable.
    pub fn min_distance(&self) -> usize {
        4
    }
}

// ----------
// Coded layout
// ----------

/// Identity of one position in a coded block list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Systematic block, carrying its index into the original block list.
    Systematic { index: usize },
    /// Parity block of group `group`.
    Parity { group: usize },
}

/// Layout of one operand's coded block list: groups of `l` systematic
/// blocks, each followed by that group's parity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodedLayout {
    pub l: usize,
    pub sys_blocks: usize,
}

impl CodedLayout {
    pub fn new(l: usize, sys_blocks: usize) -> Result<Self> {
        if l == 0 || sys_blocks == 0 {
            return Err(Error::invalid("layout needs l >= 1 and blocks >= 1"));
        }
        if sys_blocks % l != 0 {
            return Err(Error::invalid(format!(
                "{sys_blocks} systematic blocks not divisible by l = {l}"
            )));
        }
        Ok(CodedLayout { l, sys_blocks })
    }

    pub fn groups(&self) -> usize {
        self.sys_blocks / self.l
    }

    pub fn coded_len(&self) -> usize {
        self.sys_blocks + self.groups()
    }

    /// What sits at coded position `pos`.
    pub fn kind(&self, pos: usize) -> BlockKind {
        assert!(pos < self.coded_len(), "coded position out of range");
        let group = pos / (self.l + 1);
        let within = pos % (self.l + 1);
        if within == self.l {
            BlockKind::Parity { group }
        } else {
            BlockKind::Systematic {
                index: group * self.l + within,
            }
        }
    }

    pub fn group_of(&self, pos: usize) -> usize {
        assert!(pos < self.coded_len(), "coded position out of range");
        pos / (self.l + 1)
    }

    /// Coded position of systematic block `index`.
    pub fn coded_pos(&self, index: usize) -> usize {
        assert!(index < self.sys_blocks, "systematic index out of range");
        let group = index / self.l;
        group * (self.l + 1) + index % self.l
    }

    pub fn parity_pos(&self, group: usize) -> usize {
        assert!(group < self.groups(), "group out of range");
        group * (self.l + 1) + self.l
    }

    /// Systematic indices covered by `group`.
    pub fn group_members(&self, group: usize) -> std::ops::Range<usize> {
        assert!(group < self.groups(), "group out of range");
        group * self.l..(group + 1) * self.l
    }

    /// Coded positions of `group`'s blocks, parity included.
    pub fn group_positions(&self, group: usize) -> std::ops::Range<usize> {
        assert!(group < self.groups(), "group out of range");
        group * (self.l + 1)..(group + 1) * (self.l + 1)
    }
}

// ----------
// Encoder
// ----------

/// Interleaves parity blocks into a systematic block list. The parity of a
/// group is the unweighted sum of its `l` members.
pub fn encode_row_blocks(blocks: &[DenseMatrix], layout: &CodedLayout) -> Result<Vec<DenseMatrix>> {
    if blocks.len() != layout.sys_blocks {
        return Err(Error::dims(format!(
            "layout expects {} blocks, got {}",
            layout.sys_blocks,
            blocks.len()
        )));
    }
    let (rows, cols) = (blocks[0].rows(), blocks[0].cols());
    if blocks.iter().any(|b| b.rows() != rows || b.cols() != cols) {
        return Err(Error::dims("blocks must share a common shape"));
    }
    let mut coded = Vec::with_capacity(layout.coded_len());
    for g in 0..layout.groups() {
        let members = layout.group_members(g);
        let mut parity = DenseMatrix::zeros(rows, cols);
        for i in members.clone() {
            coded.push(blocks[i].clone());
            parity = parity.add(&blocks[i])?;
        }
        coded.push(parity);
    }
    Ok(coded)
}

/// Materializes coded block `pos` of an operand without encoding the whole
/// list. Used as an independent route for checking encoded data.
pub fn coded_block_value(
    blocks: &[DenseMatrix],
    layout: &CodedLayout,
    pos: usize,
) -> Result<DenseMatrix> {
    if blocks.len() != layout.sys_blocks {
        return Err(Error::dims("block list does not match layout"));
    }
    match layout.kind(pos) {
        BlockKind::Systematic { index } => Ok(blocks[index].clone()),
        BlockKind::Parity { group } => {
            let members = layout.group_members(group);
            let mut parity = DenseMatrix::zeros(blocks[0].rows(), blocks[0].cols());
            for i in members {
                parity = parity.add(&blocks[i])?;
            }
            Ok(parity)
        }
    }
}

/// Value of output grid cell `(i, j)`: `A_coded_i * B_coded_j^T`, computed
/// directly from the original (uncoded) block lists.
pub fn coded_cell_value(
    a_blocks: &[DenseMatrix],
    a_layout: &CodedLayout,
    b_blocks: &[DenseMatrix],
    b_layout: &CodedLayout,
    i: usize,
    j: usize,
) -> Result<DenseMatrix> {
    let ai = coded_block_value(a_blocks, a_layout, i)?;
    let bj = coded_block_value(b_blocks, b_layout, j)?;
    block_product(&ai, &bj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::matmul_reference;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_blocks(count: usize, rows: usize, cols: usize, seed: u64) -> Vec<DenseMatrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| DenseMatrix::random_uniform(rows, cols, -1.0, 1.0, &mut rng))
            .collect()
    }

    // --- params and layout ---

    #[test]
    fn params_reject_indivisible_block_counts() {
        assert!(CodeParams::new(2, 2, 5, 4).is_err());
        assert!(CodeParams::new(0, 1, 1, 1).is_err());
        let p = CodeParams::new(2, 3, 4, 6).unwrap();
        assert_eq!(p.groups_a(), 2);
        assert_eq!(p.groups_b(), 2);
        assert_eq!(p.coded_blocks_a(), 6);
        assert_eq!(p.coded_blocks_b(), 8);
    }

    #[test]
    fn subgrid_counts_match_product_code_shape() {
        let p = CodeParams::new(2, 3, 2, 3).unwrap();
        assert_eq!(p.subgrid_cells(), 12);
        assert_eq!(p.subgrid_data_cells(), 6);
        assert_eq!(p.locality(), 2);
        assert!((p.redundancy_fraction() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn duplication_code_is_full_redundancy() {
        // L_A = L_B = 1 duplicates every block: half the grid is parity.
        let p = CodeParams::new(1, 1, 2, 2).unwrap();
        assert!((p.redundancy_fraction() - 0.75).abs() < 1e-15);
        assert_eq!(p.subgrid_data_cells(), 1);
        assert_eq!(p.subgrid_cells(), 4);
    }

    #[test]
    fn layout_positions_interleave_parities() {
        // Fig-style layout at L = 2, four systematic blocks:
        // [S0, S1, P0, S2, S3, P1]
        let lay = CodedLayout::new(2, 4).unwrap();
        assert_eq!(lay.coded_len(), 6);
        assert_eq!(lay.kind(0), BlockKind::Systematic { index: 0 });
        assert_eq!(lay.kind(1), BlockKind::Systematic { index: 1 });
        assert_eq!(lay.kind(2), BlockKind::Parity { group: 0 });
        assert_eq!(lay.kind(3), BlockKind::Systematic { index: 2 });
        assert_eq!(lay.kind(5), BlockKind::Parity { group: 1 });
        assert_eq!(lay.coded_pos(2), 3);
        assert_eq!(lay.parity_pos(1), 5);
        assert_eq!(lay.group_of(4), 1);
    }

    // --- encoder ---

    #[test]
    fn parity_is_group_sum() {
        let blocks = sample_blocks(4, 3, 5, 1);
        let lay = CodedLayout::new(2, 4).unwrap();
        let coded = encode_row_blocks(&blocks, &lay).unwrap();
        assert_eq!(coded.len(), 6);
        let p0 = blocks[0].add(&blocks[1]).unwrap();
        let p1 = blocks[2].add(&blocks[3]).unwrap();
        assert_eq!(coded[2], p0);
        assert_eq!(coded[5], p1);
        assert_eq!(coded[0], blocks[0]);
        assert_eq!(coded[3], blocks[2]);
    }

    #[test]
    fn encoder_rejects_mixed_shapes() {
        let mut blocks = sample_blocks(2, 3, 5, 2);
        blocks[1] = DenseMatrix::zeros(2, 5);
        let lay = CodedLayout::new(2, 2).unwrap();
        assert!(encode_row_blocks(&blocks, &lay).is_err());
    }

    #[test]
    fn coded_cell_parity_row_sums_group_products() {
        // Cell at (parity of A group 0, systematic j) equals the sum over the
        // group of the systematic products.
        let a_blocks = sample_blocks(4, 2, 6, 3);
        let b_blocks = sample_blocks(3, 3, 6, 4);
        let a_lay = CodedLayout::new(2, 4).unwrap();
        let b_lay = CodedLayout::new(3, 3).unwrap();
        let parity_pos = a_lay.parity_pos(0);
        let cell = coded_cell_value(&a_blocks, &a_lay, &b_blocks, &b_lay, parity_pos, 1).unwrap();
        let want = matmul_reference(&a_blocks[0], &b_blocks[1])
            .unwrap()
            .add(&matmul_reference(&a_blocks[1], &b_blocks[1]).unwrap())
            .unwrap();
        assert!(cell.rel_frobenius_distance(&want).unwrap() < 1e-14);
    }

    #[test]
    fn corner_cell_sums_both_groups() {
        // Parity-row x parity-column cell equals the double sum.
        let a_blocks = sample_blocks(2, 2, 4, 5);
        let b_blocks = sample_blocks(2, 2, 4, 6);
        let a_lay = CodedLayout::new(2, 2).unwrap();
        let b_lay = CodedLayout::new(2, 2).unwrap();
        let cell = coded_cell_value(
            &a_blocks,
            &a_lay,
            &b_blocks,
            &b_lay,
            a_lay.parity_pos(0),
            b_lay.parity_pos(0),
        )
        .unwrap();
        let mut want = DenseMatrix::zeros(2, 2);
        for a in &a_blocks {
            for b in &b_blocks {
                want = want.add(&matmul_reference(a, b).unwrap()).unwrap();
            }
        }
        assert!(cell.rel_frobenius_distance(&want).unwrap() < 1e-14);
    }

    // --- properties ---

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        // Encoding is linear: encode(x*X + Y) = x*encode(X) + encode(Y).
        #[test]
        fn encoding_is_linear(l in 1usize..4, groups in 1usize..3, scale in -2.0f64..2.0, seed in 0u64..500) {
            let count = l * groups;
            let xs = sample_blocks(count, 2, 3, seed);
            let ys = sample_blocks(count, 2, 3, seed + 1000);
            let lay = CodedLayout::new(l, count).unwrap();
            let combo: Vec<DenseMatrix> = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| x.scale(scale).add(y).unwrap())
                .collect();
            let enc_combo = encode_row_blocks(&combo, &lay).unwrap();
            let enc_x = encode_row_blocks(&xs, &lay).unwrap();
            let enc_y = encode_row_blocks(&ys, &lay).unwrap();
            for (c, (x, y)) in enc_combo.iter().zip(enc_x.iter().zip(&enc_y)) {
                let want = x.scale(scale).add(y).unwrap();
                prop_assert!(c.rel_frobenius_distance(&want).unwrap() < 1e-12);
            }
        }

        // Every coded position round-trips through kind/coded_pos/parity_pos.
        #[test]
        fn layout_indexing_is_consistent(l in 1usize..6, groups in 1usize..4) {
            let lay = CodedLayout::new(l, l * groups).unwrap();
            for pos in 0..lay.coded_len() {
                match lay.kind(pos) {
                    BlockKind::Systematic { index } => prop_assert_eq!(lay.coded_pos(index), pos),
                    BlockKind::Parity { group } => prop_assert_eq!(lay.parity_pos(group), pos),
                }
            }
        }
    }
}
