use serde::{Deserialize, Serialize};

use crate::pipeline::{CycleReport, SimRun};

/// Bumped whenever the CSV column set or order changes.
pub const STATS_CSV_VERSION: u32 = 1;

/// Counters for one run. Everything here is recountable from the run's
/// `CycleReport` stream.
///
/// Column order (v1): cycles, committed_instrs, ipc, loads_forwarded,
/// forwarding_errors, squashes, taint_delays, nop_issues,
/// partial_store_issues, pending_broadcast_peak, replays, executed_slots,
/// idle_slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub cycles: u64,
    pub committed_instrs: u64,
    pub ipc: f64,
    pub loads_forwarded: u64,
    pub forwarding_errors: u64,
    pub squashes: u64,
    /// Issue-queue entry-cycles spent with the ready signal masked by taint.
    pub taint_delays: u64,
    pub nop_issues: u64,
    pub partial_store_issues: u64,
    pub pending_broadcast_peak: u64,
    pub replays: u64,
    pub executed_slots: u64,
    pub idle_slots: u64,
}

impl RunStats {
    pub fn from_reports(reports: &[CycleReport]) -> Self {
        let sum = |f: fn(&CycleReport) -> u32| reports.iter().map(|r| u64::from(f(r))).sum::<u64>();
        let cycles = reports.len() as u64;
        let committed = sum(|r| r.committed);
        RunStats {
            cycles,
            committed_instrs: committed,
            ipc: if cycles == 0 {
                0.0
            } else {
                committed as f64 / cycles as f64
            },
            loads_forwarded: sum(|r| r.loads_forwarded),
            forwarding_errors: sum(|r| r.forwarding_errors),
            squashes: sum(|r| r.squashes),
            taint_delays: sum(|r| r.masked),
            nop_issues: sum(|r| r.nops),
            partial_store_issues: sum(|r| r.partial_store_issues),
            pending_broadcast_peak: reports
                .iter()
                .map(|r| u64::from(r.pending_broadcasts))
                .max()
                .unwrap_or(0),
            replays: sum(|r| r.replays),
            executed_slots: sum(|r| r.executed),
            idle_slots: sum(|r| r.idle),
        }
    }
}

pub fn collect_stats(run: &SimRun) -> RunStats {
    let stats = RunStats::from_reports(&run.reports);
    debug_assert_eq!(stats.cycles, run.cycles);
    debug_assert_eq!(stats.committed_instrs, run.committed);
    stats
}
