//! Dense row-major matrices, row-block partitioning and reference kernels.
//!
//! Everything downstream (encoder, simulator, apps) speaks in terms of
//! [`DenseMatrix`] row blocks. The multiplication convention throughout the
//! crate is the block-outer-product form `C = A * B^T`, which multiplies a
//! row block of `A` against a row block of `B`; both operands must therefore
//! share their column count (the contraction dimension is never split).

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ----------
// DenseMatrix
// ----------

/// Dense `rows x cols` matrix of `f64`, row-major, 0-based indexing.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::dims(format!(
                "expected {} elements for {}x{}, got {}",
                rows * cols,
                rows,
                cols,
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "zero-sized matrix");
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::invalid("from_rows needs at least one nonempty row"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dims("ragged rows"));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        DenseMatrix::new(rows.len(), cols, data)
    }

    /// Uniform random entries in `[lo, hi)` from the caller's RNG.
    pub fn random_uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        assert!(lo < hi, "empty range");
        let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
        DenseMatrix::new(rows, cols, data).expect("positive dims")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols, "index out of range");
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.rows && j < self.cols, "index out of range");
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        assert!(i < self.rows, "row out of range");
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dims(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| f(*a, *b))
            .collect();
        DenseMatrix::new(self.rows, self.cols, data)
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        let data = self.data.iter().map(|v| v * s).collect();
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `||A - B||_F / ||B||_F`, with an absolute fallback when `B` is zero.
    pub fn rel_frobenius_distance(&self, other: &DenseMatrix) -> Result<f64> {
        let diff = self.sub(other)?;
        let denom = other.frobenius_norm();
        if denom == 0.0 {
            Ok(diff.frobenius_norm())
        } else {
            Ok(diff.frobenius_norm() / denom)
        }
    }

    pub fn to_na(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_na(m: &nalgebra::DMatrix<f64>) -> DenseMatrix {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        DenseMatrix::new(m.nrows(), m.ncols(), data).expect("positive dims")
    }

    /// Raw little-endian payload of the entries, row-major, no header.
    pub fn to_payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_payload(rows: usize, cols: usize, bytes: &[u8]) -> Result<DenseMatrix> {
        if bytes.len() != rows * cols * 8 {
            return Err(Error::Format(format!(
                "payload is {} bytes, expected {} for {}x{}",
                bytes.len(),
                rows * cols * 8,
                rows,
                cols
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        DenseMatrix::new(rows, cols, data)
    }
}

// ----------
// Reference kernels
// ----------

/// Naive `C = A * B^T`. The trusted oracle for every coded execution path.
pub fn matmul_reference(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.cols {
        return Err(Error::dims(format!(
            "A is {}x{}, B is {}x{}; A*B^T needs equal column counts",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut c = DenseMatrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ai = a.row(i);
        for j in 0..b.rows {
            let bj = b.row(j);
            let mut acc = 0.0;
            for k in 0..a.cols {
                acc += ai[k] * bj[k];
            }
            c.data[i * c.cols + j] = acc;
        }
    }
    Ok(c)
}

/// Naive `y = A * x`.
pub fn matvec_reference(a: &DenseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if a.cols != x.len() {
        return Err(Error::dims(format!(
            "A is {}x{}, x has {} entries",
            a.rows,
            a.cols,
            x.len()
        )));
    }
    let mut y = vec![0.0; a.rows];
    for i in 0..a.rows {
        let ai = a.row(i);
        let mut acc = 0.0;
        for k in 0..a.cols {
            acc += ai[k] * x[k];
        }
        y[i] = acc;
    }
    Ok(y)
}

/// One output tile `A_i * B_j^T` of the block grid.
pub fn block_product(a_i: &DenseMatrix, b_j: &DenseMatrix) -> Result<DenseMatrix> {
    matmul_reference(a_i, b_j)
}

// ----------
// Row-block partitioning
// ----------

/// How a matrix's rows map onto `num_blocks` equal blocks.
///
/// `block_rows = ceil(rows / num_blocks)` and the matrix is zero-padded up to
/// `num_blocks * block_rows` rows, so `pad_rows` can reach `num_blocks - 1`
/// but always stays below `num_blocks * block_rows`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowBlockPartition {
    pub rows: usize,
    pub num_blocks: usize,
    pub block_rows: usize,
    pub pad_rows: usize,
}

pub fn partition_rows(rows: usize, num_blocks: usize) -> Result<RowBlockPartition> {
    if rows == 0 || num_blocks == 0 {
        return Err(Error::invalid("rows and num_blocks must be positive"));
    }
    if num_blocks > rows {
        return Err(Error::invalid(format!(
            "cannot split {rows} rows into {num_blocks} blocks"
        )));
    }
    let block_rows = rows.div_ceil(num_blocks);
    let padded = num_blocks * block_rows;
    Ok(RowBlockPartition {
        rows,
        num_blocks,
        block_rows,
        pad_rows: padded - rows,
    })
}

impl RowBlockPartition {
    pub fn padded_rows(&self) -> usize {
        self.num_blocks * self.block_rows
    }

    /// Row range of block `b` in padded coordinates.
    pub fn block_range(&self, b: usize) -> (usize, usize) {
        assert!(b < self.num_blocks, "block out of range");
        (b * self.block_rows, (b + 1) * self.block_rows)
    }
}

/// Cuts `a` into `num_blocks` row blocks, zero-padding the tail block(s).
pub fn split_row_blocks(a: &DenseMatrix, p: &RowBlockPartition) -> Result<Vec<DenseMatrix>> {
    if a.rows != p.rows {
        return Err(Error::dims(format!(
            "partition built for {} rows, matrix has {}",
            p.rows, a.rows
        )));
    }
    let mut blocks = Vec::with_capacity(p.num_blocks);
    for b in 0..p.num_blocks {
        let (start, end) = p.block_range(b);
        let mut data = vec![0.0; p.block_rows * a.cols];
        for (local, global) in (start..end).enumerate() {
            if global < a.rows {
                data[local * a.cols..(local + 1) * a.cols].copy_from_slice(a.row(global));
            }
        }
        blocks.push(DenseMatrix::new(p.block_rows, a.cols, data)?);
    }
    Ok(blocks)
}

/// Inverse of [`split_row_blocks`]: stacks blocks and drops the padding.
pub fn stack_row_blocks(blocks: &[DenseMatrix], p: &RowBlockPartition) -> Result<DenseMatrix> {
    if blocks.len() != p.num_blocks {
        return Err(Error::dims(format!(
            "expected {} blocks, got {}",
            p.num_blocks,
            blocks.len()
        )));
    }
    let cols = blocks[0].cols;
    if blocks
        .iter()
        .any(|b| b.cols != cols || b.rows != p.block_rows)
    {
        return Err(Error::dims("inconsistent block shapes"));
    }
    let mut out = DenseMatrix::zeros(p.rows, cols);
    for i in 0..p.rows {
        let b = i / p.block_rows;
        let local = i % p.block_rows;
        let src = blocks[b].row(local);
        out.data[i * cols..(i + 1) * cols].copy_from_slice(src);
    }
    Ok(out)
}

// ----------
// File formats
// ----------

const CDM_MAGIC: &[u8; 4] = b"CDM1";

/// Binary matrix format: magic `CDM1`, u64 rows, u64 cols, then
/// `rows * cols` little-endian f64 values in row-major order.
pub fn write_cdm(m: &DenseMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CDM_MAGIC)?;
    f.write_all(&(m.rows as u64).to_le_bytes())?;
    f.write_all(&(m.cols as u64).to_le_bytes())?;
    f.write_all(&m.to_payload())?;
    f.flush()?;
    Ok(())
}

pub fn read_cdm(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != CDM_MAGIC {
        return Err(Error::Format("bad magic, expected CDM1".into()));
    }
    let mut word = [0u8; 8];
    f.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    f.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format("zero dimension in header".into()));
    }
    let want = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or(Error::Overflow("CDM1 payload size"))?;
    let mut bytes = Vec::with_capacity(want);
    f.read_to_end(&mut bytes)?;
    if bytes.len() != want {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {want}",
            bytes.len()
        )));
    }
    DenseMatrix::from_payload(rows, cols, &bytes)
}

/// Whitespace-separated text loader: one matrix row per nonempty line.
pub fn read_text(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let content = std::fs::read_to_string(path)?;
    parse_text(&content)
}

pub fn parse_text(content: &str) -> Result<DenseMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse::<f64>).collect();
        let row = row.map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("no rows".into()));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Format("ragged rows".into()));
    }
    DenseMatrix::from_rows(&rows)
}

pub fn write_text(m: &DenseMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ----------
// Vector helpers
// ----------

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len(), "length mismatch");
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn rel_vec_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let denom = norm2(b);
    if denom == 0.0 {
        diff
    } else {
        diff / denom
    }
}
