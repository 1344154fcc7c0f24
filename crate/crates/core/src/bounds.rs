//! Probabilistic guarantees for the local product code: tail bounds on the
//! decoder's read count and on undecodability, exact small-pattern counts
//! with a brute-force enumerator as ground truth, Monte Carlo estimation,
//! and the locality/redundancy trade-off sweep.
//!
//! Throughout, `n = (L_A + 1)(L_B + 1)` is the number of cells per subgrid
//! and `p` the independent per-cell straggling probability.

use std::ops::Range;

use serde::Serialize;
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};
use crate::grid::peel_plan;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ----------
// Closed-form tail bounds
// ----------

/// Chernoff-style bound on the decoder read count: an upper-bound expression
/// for `Pr(R >= x)` with `n` cells, straggling probability `p` and locality
/// `L`. Returns the trivial bound 1 when `x <= npL` (the optimizing
/// parameter is only positive beyond the mean). Caution: Monte Carlo sampling
/// shows the expression falls below the empirical tail at moderate `x`, so
/// treat it as a deep-tail estimate rather than a guarantee.
pub fn theorem1_bound(n: usize, p: f64, l: usize, x: f64) -> Result<f64> {
    if n == 0 || l == 0 {
        return Err(Error::invalid("n and L must be at least 1"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid("p must lie strictly between 0 and 1"));
    }
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::invalid("x must be positive and finite"));
    }
    let np = n as f64 * p;
    let npl = np * l as f64;
    if x <= npl {
        return Ok(1.0);
    }
    let value = (x / npl).powf(-x / l as f64) * (np - x / l as f64).exp();
    Ok(value.clamp(0.0, 1.0))
}

/// Excess-read form of the same bound: `Pr(R >= (np + eps) L)` is at most
/// `(1 + eps/np)^(-(np + eps)) * exp(-eps)`. At `eps = np` this collapses
/// to `(4e)^(-np)`.
pub fn corollary_bound(n: usize, p: f64, eps: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid("p must lie strictly between 0 and 1"));
    }
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::invalid("eps must be positive and finite"));
    }
    let np = n as f64 * p;
    let value = (1.0 + eps / np).powf(-(np + eps)) * (-eps).exp();
    Ok(value.clamp(0.0, 1.0))
}

// ----------
// Undecodable-set counts
// ----------

/// Exact counts of 4- and 5-cell undecodable patterns plus upper bounds for
/// 6 and 7 cells, per subgrid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AlphaCounts {
    pub alpha4: u128,
    pub alpha5: u128,
    pub alpha6_ub: u128,
    pub alpha7_ub: u128,
}

fn binom(n: u64, k: u64) -> Result<u128> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc
            .checked_mul((n - i) as u128)
            .ok_or(Error::Overflow("binomial coefficient"))?;
        // Exact: a product of i+1 consecutive integers divides by (i+1)!.
        acc /= (i + 1) as u128;
    }
    Ok(acc)
}

fn mul(a: u128, b: u128) -> Result<u128> {
    a.checked_mul(b).ok_or(Error::Overflow("alpha count"))
}

fn add(a: u128, b: u128) -> Result<u128> {
    a.checked_add(b).ok_or(Error::Overflow("alpha count"))
}

/// The smallest undecodable patterns are 2x2 rectangles (row pair times
/// column pair); every 5-cell pattern is a rectangle plus one free cell.
/// The 6- and 7-cell figures overcount and are upper bounds only.
pub fn alpha_counts(la: usize, lb: usize) -> Result<AlphaCounts> {
    if la == 0 || lb == 0 {
        return Err(Error::invalid("L_A and L_B must be at least 1"));
    }
    let n = (la as u64 + 1)
        .checked_mul(lb as u64 + 1)
        .ok_or(Error::Overflow("subgrid size"))?;
    let alpha4 = mul(binom(la as u64 + 1, 2)?, binom(lb as u64 + 1, 2)?)?;
    let alpha5 = mul(alpha4, (n - 4) as u128)?;
    let triple = mul(binom(la as u64 + 1, 3)?, binom(lb as u64 + 1, 3)?)?;
    let alpha6_ub = add(mul(triple, binom(9, 6)?)?, mul(alpha4, binom(n - 4, 2)?)?)?;
    let alpha7_ub = add(mul(triple, binom(9, 7)?)?, mul(alpha4, binom(n - 4, 3)?)?)?;
    Ok(AlphaCounts {
        alpha4,
        alpha5,
        alpha6_ub,
        alpha7_ub,
    })
}

/// Upper bound on per-subgrid undecodability: pattern counts for 4..=7
/// stragglers plus the full binomial tail from 8 up. Requires `n >= 8` so
/// the two regimes do not overlap.
pub fn theorem2_bound(la: usize, lb: usize, p: f64) -> Result<f64> {
    if la == 0 || lb == 0 {
        return Err(Error::invalid("L_A and L_B must be at least 1"));
    }
    let n = (la + 1) * (lb + 1);
    if n < 8 {
        return Err(Error::invalid(format!(
            "need at least 8 cells per subgrid, got {n}"
        )));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid("p must lie strictly between 0 and 1"));
    }
    let a = alpha_counts(la, lb)?;
    let alphas = [a.alpha4, a.alpha5, a.alpha6_ub, a.alpha7_ub];
    let mut total = 0.0;
    for (offset, &alpha) in alphas.iter().enumerate() {
        let s = (offset + 4) as f64;
        total += alpha as f64 * p.powf(s) * (1.0 - p).powf(n as f64 - s);
    }
    let tail = Binomial::new(p, n as u64)
        .map_err(|e| Error::invalid(e.to_string()))?
        .sf(7);
    Ok((total + tail).clamp(0.0, 1.0))
}

/// Worker-count adjustment: undecodability anywhere among `k` independent
/// subgrids, by union bound.
pub fn union_bound_workers(per_worker_prob: f64, k_workers: u64) -> f64 {
    (per_worker_prob.max(0.0) * k_workers as f64).min(1.0)
}

// ----------
// Brute-force enumerator
// ----------

const ENUMERATION_GUARD: u128 = 100_000_000;

/// Counts `s`-subsets of the subgrid on which peeling stalls, by exhausting
/// every subset through the real decoder. Ground truth for `AlphaCounts`.
pub fn enumerate_undecodable(la: usize, lb: usize, s: usize) -> Result<u64> {
    if la == 0 || lb == 0 {
        return Err(Error::invalid("L_A and L_B must be at least 1"));
    }
    let n = (la + 1) * (lb + 1);
    if s > n {
        return Err(Error::invalid(format!("s = {s} exceeds {n} cells")));
    }
    let subsets = binom(n as u64, s as u64)?;
    if subsets > ENUMERATION_GUARD {
        return Err(Error::TooLarge(format!(
            "C({n}, {s}) = {subsets} subsets exceeds the {ENUMERATION_GUARD} guard"
        )));
    }
    if s == 0 {
        return Ok(0);
    }
    let cells: Vec<(usize, usize)> = (0..n).map(|c| (c / (lb + 1), c % (lb + 1))).collect();
    let mut indices: Vec<usize> = (0..s).collect();
    let mut count = 0u64;
    loop {
        let missing: Vec<(usize, usize)> = indices.iter().map(|&i| cells[i]).collect();
        if !peel_plan(la, lb, &missing)?.is_complete() {
            count += 1;
        }
        // Advance to the next lexicographic s-combination of 0..n.
        let mut i = s;
        loop {
            if i == 0 {
                return Ok(count);
            }
            i -= 1;
            if indices[i] != i + n - s {
                break;
            }
        }
        indices[i] += 1;
        for j in i + 1..s {
            indices[j] = indices[j - 1] + 1;
        }
    }
}

// ----------
// Locality lower bound
// ----------

/// The minimal locality any `(n, k)` code can achieve, `k / (n - k)`, kept
/// as an exact rational.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LocalityBound {
    pub numerator: u64,
    pub denominator: u64,
}

impl LocalityBound {
    pub fn value(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

pub fn locality_lower_bound(k: u64, n: u64) -> Result<LocalityBound> {
    if k == 0 || n <= k {
        return Err(Error::invalid("need n > k >= 1"));
    }
    Ok(LocalityBound {
        numerator: k,
        denominator: n - k,
    })
}

// ----------
// Monte Carlo
// ----------

/// Aggregates from repeated random straggler draws: undecodability counts
/// and the full histogram of decoder reads.
#[derive(Clone, Debug, Default)]
pub struct McStats {
    pub trials: u64,
    pub undecodable: u64,
    /// `reads_hist[r]` = number of trials whose peeling read `r` blocks.
    pub reads_hist: Vec<u64>,
}

impl McStats {
    fn record(&mut self, reads: usize, complete: bool) {
        self.trials += 1;
        if !complete {
            self.undecodable += 1;
        }
        if reads >= self.reads_hist.len() {
            self.reads_hist.resize(reads + 1, 0);
        }
        self.reads_hist[reads] += 1;
    }

    fn merge(&mut self, other: McStats) {
        self.trials += other.trials;
        self.undecodable += other.undecodable;
        if other.reads_hist.len() > self.reads_hist.len() {
            self.reads_hist.resize(other.reads_hist.len(), 0);
        }
        for (r, count) in other.reads_hist.iter().enumerate() {
            self.reads_hist[r] += count;
        }
    }

    pub fn pr_undecodable(&self) -> f64 {
        self.undecodable as f64 / self.trials as f64
    }

    /// Empirical complementary CDF: fraction of trials with `R >= x`.
    pub fn pr_reads_ge(&self, x: usize) -> f64 {
        let hits: u64 = self.reads_hist.iter().skip(x).sum();
        hits as f64 / self.trials as f64
    }

    pub fn mean_reads(&self) -> f64 {
        let total: u128 = self
            .reads_hist
            .iter()
            .enumerate()
            .map(|(r, &c)| r as u128 * c as u128)
            .sum();
        total as f64 / self.trials as f64
    }
}

/// Number of worker threads for embarrassingly parallel loops, capped by
/// the `CODEDMM_THREADS` environment variable when set.
pub(crate) fn worker_threads() -> usize {
    let available = std::thread::available_parallelism()
        .map(|v| v.get())
        .unwrap_or(1);
    match std::env::var("CODEDMM_THREADS") {
        Ok(v) => v.parse::<usize>().ok().filter(|&t| t >= 1).unwrap_or(available),
        Err(_) => available,
    }
}

fn mc_range(la: usize, lb: usize, p: f64, range: Range<u64>, seed: u64) -> McStats {
    let mut stats = McStats::default();
    let mut missing = Vec::new();
    for trial in range {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        missing.clear();
        for a in 0..=la {
            for b in 0..=lb {
                if rng.random_bool(p) {
                    missing.push((a, b));
                }
            }
        }
        let plan = peel_plan(la, lb, &missing).expect("cells are in range");
        stats.record(plan.reads, plan.is_complete());
    }
    stats
}

/// Draws straggler sets cell-i.i.d. with probability `p` and peels each one.
/// Deterministic for a given seed: every trial uses its own RNG stream, so
/// results do not depend on the thread count.
pub fn monte_carlo_decode_stats(
    la: usize,
    lb: usize,
    p: f64,
    trials: u64,
    seed: u64,
) -> Result<McStats> {
    if la == 0 || lb == 0 {
        return Err(Error::invalid("L_A and L_B must be at least 1"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("p must lie in [0, 1]"));
    }
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    let threads = worker_threads().min(trials as usize).max(1);
    if threads == 1 {
        return Ok(mc_range(la, lb, p, 0..trials, seed));
    }
    let chunk = trials.div_ceil(threads as u64);
    let partials = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for t in 0..threads as u64 {
            let lo = t * chunk;
            let hi = ((t + 1) * chunk).min(trials);
            if lo >= hi {
                break;
            }
            handles.push(scope.spawn(move || mc_range(la, lb, p, lo..hi, seed)));
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect::<Vec<_>>()
    });
    let mut stats = McStats::default();
    for part in partials {
        stats.merge(part);
    }
    Ok(stats)
}

// ----------
// Redundancy sweep
// ----------

/// One row of the square-code sweep (`L_A = L_B = L`). The bound is absent
/// below 8 cells per subgrid. Redundancy is reported under both common
/// conventions: parity cells over all cells, and over systematic cells.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepRow {
    pub l: usize,
    pub n: usize,
    pub bound: Option<f64>,
    pub redundancy_over_total: f64,
    pub redundancy_over_systematic: f64,
}

pub fn sweep_undecodability(p: f64, l_range: Range<usize>) -> Result<Vec<SweepRow>> {
    if l_range.is_empty() {
        return Err(Error::invalid("empty L range"));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid("p must lie in [0, 1)"));
    }
    let mut rows = Vec::new();
    for l in l_range {
        if l == 0 {
            return Err(Error::invalid("L must be at least 1"));
        }
        let n = (l + 1) * (l + 1);
        let bound = if n < 8 {
            None
        } else if p == 0.0 {
            Some(0.0)
        } else {
            Some(theorem2_bound(l, l, p)?)
        };
        let parity = 2 * l + 1;
        rows.push(SweepRow {
            l,
            n,
            bound,
            redundancy_over_total: parity as f64 / n as f64,
            redundancy_over_systematic: parity as f64 / (l * l) as f64,
        });
    }
    Ok(rows)
}
