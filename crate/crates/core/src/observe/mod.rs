//! Observation traces, run statistics, the non-interference checker and the
//! taint oracle.

mod dift;
mod noninterference;
mod stats;

use serde::{Deserialize, Serialize};

use crate::shadows::Seq;

pub use dift::{audit_stt, dift_oracle, nonspec_cycles, DiftOracle, OracleMismatch};
pub use noninterference::{check_noninterference, NonInterferenceError, Verdict};
pub use stats::{collect_stats, RunStats, STATS_CSV_VERSION};

/// Something an attacker sharing the core could observe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "channel", rename_all = "snake_case")]
pub enum Observation {
    /// A memory access: load execution or store commit.
    CacheAccess {
        addr: u64,
    },
    BranchResolve {
        seq: Seq,
        taken: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObservationEvent {
    pub cycle: u64,
    #[serde(flatten)]
    pub what: Observation,
}

/// Writes events as JSON lines.
pub fn write_jsonl<T: Serialize>(items: &[T], mut out: impl std::io::Write) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
