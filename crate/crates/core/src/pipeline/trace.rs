//! Per-cycle reports and the dynamic trace recorded during a run.

use serde::{Deserialize, Serialize};

use crate::isa::ArchInstr;
use crate::schemes::Yrot;
use crate::shadows::{Seq, ShadowKind, Visibility};

/// Activity in one cycle. Counters are deltas for that cycle only.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: u64,
    pub fetched: u32,
    pub renamed: u32,
    /// Issue slots that did real work.
    pub executed: u32,
    /// Slots burned by kill-to-nop.
    pub nops: u32,
    /// Slots burned by replays (missed wakeup speculation, waiting on a
    /// store's data).
    pub replays: u32,
    pub idle: u32,
    pub committed: u32,
    pub squashes: u32,
    pub forwarding_errors: u32,
    pub loads_forwarded: u32,
    pub partial_store_issues: u32,
    /// Issue-queue entries whose ready signal was masked by taint.
    pub masked: u32,
    /// Deferred readiness broadcasts released.
    pub deferred_broadcasts: u32,
    pub pending_broadcasts: u32,
    pub untaint_broadcasts: u32,
    pub visibility: Visibility,
    pub unresolved_shadows: u32,
    pub rob_occupancy: u32,
    pub halted: bool,
}

impl CycleReport {
    pub(crate) fn new(cycle: u64) -> Self {
        Self {
            cycle,
            fetched: 0,
            renamed: 0,
            executed: 0,
            nops: 0,
            replays: 0,
            idle: 0,
            committed: 0,
            squashes: 0,
            forwarding_errors: 0,
            loads_forwarded: 0,
            partial_store_issues: 0,
            masked: 0,
            deferred_broadcasts: 0,
            pending_broadcasts: 0,
            untaint_broadcasts: 0,
            visibility: Visibility::Unbounded,
            unresolved_shadows: 0,
            rob_occupancy: 0,
            halted: false,
        }
    }
}

/// One renamed dynamic instruction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UopRecord {
    pub seq: Seq,
    pub pc: usize,
    pub instr: ArchInstr,
    pub rename_cycle: u64,
    pub squash_cycle: Option<u64>,
    pub commit_cycle: Option<u64>,
    /// Gating root computed at rename (STT-Rename only).
    pub rename_root: Yrot,
    /// Issue-queue mask installed at rename (STT-Rename only).
    pub rename_mask: Option<Seq>,
    /// Cycle an untaint broadcast cleared this uop's mask.
    pub unmask_cycle: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueOutcome {
    Executed,
    Killed { root: Seq },
    Replayed,
    WaitStore { store: Seq },
}

/// One selection of an issue-queue entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueRecord {
    pub seq: Seq,
    pub cycle: u64,
    pub addr_part: bool,
    pub data_part: bool,
    pub outcome: IssueOutcome,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShadowRecord {
    pub seq: Seq,
    pub kind: ShadowKind,
    pub registered: u64,
    pub resolved: Option<u64>,
    pub squashed: Option<u64>,
}

/// Cycle a load's result became visible to its consumers' wakeup logic.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BroadcastRecord {
    pub seq: Seq,
    pub cycle: u64,
    pub deferred: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    /// Sorted by seq.
    pub uops: Vec<UopRecord>,
    pub issues: Vec<IssueRecord>,
    /// Indexed by shadow id.
    pub shadows: Vec<ShadowRecord>,
    pub broadcasts: Vec<BroadcastRecord>,
    /// (cycle, root) for every untaint broadcast.
    pub untaints: Vec<(u64, Seq)>,
    /// (cycle, seq) for loads as they crossed the visibility point.
    pub nonspec: Vec<(u64, Seq)>,
}

impl Trace {
    pub fn uop(&self, seq: Seq) -> Option<&UopRecord> {
        self.uops
            .binary_search_by_key(&seq, |u| u.seq)
            .ok()
            .map(|i| &self.uops[i])
    }

    pub(crate) fn uop_mut(&mut self, seq: Seq) -> Option<&mut UopRecord> {
        self.uops
            .binary_search_by_key(&seq, |u| u.seq)
            .ok()
            .map(move |i| &mut self.uops[i])
    }
}
