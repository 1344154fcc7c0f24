//! Deterministic discrete-event simulator for serverless matrix pipelines.
//!
//! Tasks never fail, they straggle: a straggling task takes
//! `straggler_factor` times its nominal duration. The coded strategy decodes
//! around whatever is still running at the compute barrier; the speculative
//! baseline relaunches slow tasks and waits for everything. All randomness
//! derives from the config seed through per-task counter streams, so a
//! config reproduces its run bit for bit regardless of host or thread
//! count.

pub mod config;
pub mod engine;
pub mod report;
pub mod store;

mod coded;
mod speculative;

pub use coded::{run_coded_matmul, run_coded_matvec, CodedOperand, CodedSession, MatvecOperand};
pub use config::{ForcedStragglers, Policy, SimConfig, StoreModel, StragglerModel, Strategy, Workers};
pub use engine::{sample_task_time, task_rng};
pub use report::RunReport;
pub use speculative::{run_speculative_matmul, run_speculative_matvec};
pub use store::{ObjectStore, StoreStats};
