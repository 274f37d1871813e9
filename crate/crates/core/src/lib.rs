//! Cycle-level out-of-order core model for comparing in-core secure
//! speculation schemes: a rename-stage and an issue-stage taint tracker and
//! a delayed-broadcast scheme, against an unprotected baseline.

pub mod config;
pub mod experiment;
pub mod isa;
pub mod observe;
pub mod pipeline;
pub mod schemes;
pub mod shadows;
pub mod timing;

pub use config::{ConfigError, CoreConfig, Predictor};
pub use isa::{
    assemble, gen_spectre_v1, gen_workload, interpret, ArchInstr, ArchReg, Opcode, Program,
    WorkloadKind,
};
pub use observe::{check_noninterference, collect_stats, RunStats, Verdict};
pub use pipeline::{simulate, SimError, SimRun, Simulator};
pub use schemes::SchemeKind;
pub use shadows::{Seq, Visibility};
