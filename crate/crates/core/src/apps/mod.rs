//! Application drivers: power iteration, kernel ridge regression via PCG,
//! alternating least squares, and tall-skinny SVD. Each is parameterized by
//! an executor so the same algorithm runs against exact arithmetic, the
//! coded simulator, or the speculative baseline, and results can be checked
//! for numerical equivalence across all three.

mod als;
mod krr;
mod power;
mod svd;

pub use als::{als, synth_ratings, AlsState};
pub use krr::{gaussian_kernel, krr_pcg, krr_pcg_trace, rff_features, rff_preconditioner, synth_krr, KrrProblem};
pub use power::power_iteration;
pub use svd::tall_skinny_svd;

use crate::code::CodeParams;
use crate::error::{Error, Result};
use crate::matrix::{matmul_reference, matvec_reference, DenseMatrix};
use crate::sim::{
    run_speculative_matmul, run_speculative_matvec, CodedSession, RunReport, SimConfig,
};

// ----------
// Executor
// ----------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecKind {
    Reference,
    Coded,
    Speculative,
}

/// Where an app's large products run. The reference executor computes
/// exactly and instantly; the other two route every product through the
/// simulator and accumulate one report per call.
pub struct Executor {
    kind: ExecKind,
    cfg: SimConfig,
    session: Option<CodedSession>,
    spec_blocks: (usize, usize),
    reports: Vec<RunReport>,
}

impl Executor {
    pub fn reference() -> Self {
        Executor {
            kind: ExecKind::Reference,
            cfg: SimConfig::default(),
            session: None,
            spec_blocks: (1, 1),
            reports: Vec::new(),
        }
    }

    pub fn coded(params: CodeParams, cfg: SimConfig) -> Result<Self> {
        let session = CodedSession::new(params, cfg.clone())?;
        Ok(Executor {
            kind: ExecKind::Coded,
            cfg,
            session: Some(session),
            spec_blocks: (params.blocks_a, params.blocks_b),
            reports: Vec::new(),
        })
    }

    pub fn speculative(blocks_a: usize, blocks_b: usize, cfg: SimConfig) -> Result<Self> {
        if blocks_a == 0 || blocks_b == 0 {
            return Err(Error::invalid("block counts must be positive"));
        }
        cfg.validate()?;
        Ok(Executor {
            kind: ExecKind::Speculative,
            cfg,
            session: None,
            spec_blocks: (blocks_a, blocks_b),
            reports: Vec::new(),
        })
    }

    pub fn kind(&self) -> ExecKind {
        self.kind
    }

    /// `A * B^T` under this executor's strategy.
    pub fn matmul(&mut self, a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
        match self.kind {
            ExecKind::Reference => matmul_reference(a, b),
            ExecKind::Coded => {
                let (c, report) = self.session.as_mut().expect("coded session").matmul(a, b)?;
                self.reports.push(report);
                Ok(c)
            }
            ExecKind::Speculative => {
                let (c, report) = run_speculative_matmul(
                    a,
                    b,
                    self.spec_blocks.0.min(a.rows()),
                    self.spec_blocks.1.min(b.rows()),
                    &self.cfg,
                )?;
                self.reports.push(report);
                Ok(c)
            }
        }
    }

    /// `y = A x` under this executor's strategy.
    pub fn matvec(&mut self, a: &DenseMatrix, x: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            ExecKind::Reference => matvec_reference(a, x),
            ExecKind::Coded => {
                let (y, report) = self.session.as_mut().expect("coded session").matvec(a, x)?;
                self.reports.push(report);
                Ok(y)
            }
            ExecKind::Speculative => {
                let (y, report) =
                    run_speculative_matvec(a, x, self.spec_blocks.0.min(a.rows()), &self.cfg)?;
                self.reports.push(report);
                Ok(y)
            }
        }
    }

    /// One report per simulated call, in call order; empty for reference.
    pub fn reports(&self) -> &[RunReport] {
        &self.reports
    }

    pub fn take_reports(&mut self) -> Vec<RunReport> {
        std::mem::take(&mut self.reports)
    }

    /// Sum of simulated end-to-end times across all calls so far.
    pub fn total_sim_time(&self) -> f64 {
        self.reports.iter().map(|r| r.t_total).sum()
    }
}
