//! Secure-speculation schemes, installed into the core as hooks.
//!
//! The core calls into a [`Scheme`] at rename, at select, when a load's data
//! returns, when the visibility point advances, and on recovery. Schemes
//! only ever change timing: they may delay a uop or withhold a readiness
//! broadcast, never alter a value.

mod baseline;
mod nda;
mod stt_issue;
mod stt_rename;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::CoreConfig;
use crate::isa::{ArchInstr, ArchReg, Opcode};
use crate::pipeline::PhysReg;
use crate::shadows::{Seq, Visibility};

pub use baseline::Baseline;
pub use nda::Nda;
pub use stt_issue::{SttIssue, TaintUnit};
pub use stt_rename::{compute_group_yrot, GroupYrot, SttRename, TaintFile};

/// Youngest root of taint: the seq of the youngest speculative load a value
/// depends on, or `None` when untainted.
pub type Yrot = Option<Seq>;

/// The younger of two taints. `None` is the identity.
pub fn join(a: Yrot, b: Yrot) -> Yrot {
    a.max(b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeKind {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "stt-rename")]
    SttRename,
    #[serde(rename = "stt-issue")]
    SttIssue,
    #[serde(rename = "nda")]
    Nda,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [
        SchemeKind::Baseline,
        SchemeKind::SttRename,
        SchemeKind::SttIssue,
        SchemeKind::Nda,
    ];
    pub const SECURE: [SchemeKind; 3] =
        [SchemeKind::SttRename, SchemeKind::SttIssue, SchemeKind::Nda];

    pub fn token(self) -> &'static str {
        match self {
            SchemeKind::Baseline => "baseline",
            SchemeKind::SttRename => "stt-rename",
            SchemeKind::SttIssue => "stt-issue",
            SchemeKind::Nda => "nda",
        }
    }

    pub fn is_secure(self) -> bool {
        self != SchemeKind::Baseline
    }

    pub fn is_stt(self) -> bool {
        matches!(self, SchemeKind::SttRename | SchemeKind::SttIssue)
    }

    pub fn build(self, config: &CoreConfig) -> Box<dyn Scheme> {
        match self {
            SchemeKind::Baseline => Box::new(Baseline),
            SchemeKind::SttRename => Box::new(SttRename::new(
                config.stt_split_store_taint,
                config.untaint_bandwidth,
            )),
            SchemeKind::SttIssue => {
                Box::new(SttIssue::new(config.phys_regs, config.untaint_bandwidth))
            }
            SchemeKind::Nda => Box::new(Nda::default()),
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for SchemeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.token() == norm)
            .ok_or_else(|| {
                format!("unknown scheme `{s}` (expected baseline, stt-rename, stt-issue or nda)")
            })
    }
}

/// True for instructions whose execution is observable and operand
/// dependent: loads (address), stores (address part) and conditional
/// branches. `JMP` has a fixed target.
pub fn is_transmitter(opcode: Opcode) -> bool {
    matches!(
        opcode,
        Opcode::Load | Opcode::Store | Opcode::Beq | Opcode::Bne
    )
}

/// Shared STT execution rule: a transmitter may run only once its root is
/// no longer speculative. Non-transmitters always may.
pub fn may_execute(transmitter: bool, root: Yrot, visibility: Visibility) -> bool {
    !transmitter || root.is_none_or(|r| visibility.covers(r))
}

/// One uop of a rename group, as seen by a scheme.
#[derive(Clone, Debug)]
pub struct RenameInput {
    pub seq: Seq,
    pub instr: ArchInstr,
    /// Younger than the visibility point at rename time.
    pub speculative: bool,
    pub needs_checkpoint: bool,
}

/// What a scheme decided for one renamed uop.
#[derive(Clone, Debug, Default)]
pub struct RenameTaint {
    /// Root masking the uop's ready signal in the issue queue.
    pub mask: Option<Seq>,
    /// The uop's gating root as computed at rename (recorded for audits).
    pub root: Yrot,
    pub checkpoint: Option<SchemeSnapshot>,
    /// Previous taint of the destination register, for walk-back recovery.
    pub undo: Option<(ArchReg, Yrot)>,
}

/// Scheme state saved alongside a branch checkpoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SchemeSnapshot {
    TaintFile(TaintFile),
}

/// How the core rolled back its own rename state.
#[derive(Clone, Copy, Debug)]
pub enum Recovery<'a> {
    /// Restored from the checkpoint of a mispredicted branch.
    Checkpoint(Option<&'a SchemeSnapshot>),
    /// Walked the ROB back; undo records youngest first.
    Walk(&'a [(ArchReg, Yrot)]),
}

/// A uop that won selection this cycle.
#[derive(Clone, Debug)]
pub struct SelectInput {
    pub seq: Seq,
    pub opcode: Opcode,
    /// Physical sources in operand order; `None` for unused operands.
    pub srcs: [Option<PhysReg>; 2],
    pub pdst: Option<PhysReg>,
    /// Store parts being issued. For other uops `addr_part` is set.
    pub addr_part: bool,
    pub data_part: bool,
    pub visibility: Visibility,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IssueDecision {
    Execute,
    /// Issue a nop in this slot and mask the entry until `root` is
    /// untainted.
    Kill {
        root: Seq,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Writeback {
    BroadcastNow,
    Defer,
}

pub trait Scheme: Send + fmt::Debug {
    fn kind(&self) -> SchemeKind;

    /// Whether load dependents may be woken at the predicted L1-hit latency.
    fn allows_speculative_wakeup(&self) -> bool {
        true
    }

    fn on_rename(&mut self, group: &[RenameInput], _visibility: Visibility) -> Vec<RenameTaint> {
        vec![RenameTaint::default(); group.len()]
    }

    fn on_recovery(&mut self, _how: Recovery<'_>, _squash_after: Seq) {}

    fn on_issue_select(&mut self, _sel: &SelectInput) -> IssueDecision {
        IssueDecision::Execute
    }

    fn on_load_complete(
        &mut self,
        _seq: Seq,
        _pdst: Option<PhysReg>,
        _visibility: Visibility,
    ) -> Writeback {
        Writeback::BroadcastNow
    }

    /// Loads that just became non-speculative, oldest first. Returns the
    /// roots whose untaint broadcast goes out this cycle.
    fn on_visibility_advance(
        &mut self,
        _newly_nonspec: &[Seq],
        _visibility: Visibility,
    ) -> Vec<Seq> {
        Vec::new()
    }

    /// Deferred broadcasts released this cycle, at most `ports`.
    fn drain_broadcasts(
        &mut self,
        _ports: usize,
        _visibility: Visibility,
    ) -> Vec<(Seq, Option<PhysReg>)> {
        Vec::new()
    }

    fn on_squash(&mut self, _squash_after: Seq) {}

    fn pending_broadcasts(&self) -> usize {
        0
    }
}

/// Untaint broadcast network shared by the STT variants.
///
/// Roots are broadcast oldest first, optionally capped per cycle. Because
/// loads become non-speculative in order, every root at or below `through`
/// has been broadcast.
#[derive(Clone, Debug, Default)]
pub(crate) struct Untainter {
    backlog: VecDeque<Seq>,
    cap: Option<usize>,
    through: Seq,
}

impl Untainter {
    pub(crate) fn new(cap: Option<usize>) -> Self {
        Self {
            backlog: VecDeque::new(),
            cap,
            through: 0,
        }
    }

    pub(crate) fn advance(&mut self, newly: &[Seq]) -> Vec<Seq> {
        self.backlog.extend(newly.iter().copied());
        let n = self.cap.unwrap_or(usize::MAX).min(self.backlog.len());
        let out: Vec<Seq> = self.backlog.drain(..n).collect();
        if let Some(&last) = out.last() {
            self.through = self.through.max(last);
        }
        out
    }

    /// The root if it is still live, else `None`.
    pub(crate) fn live(&self, root: Yrot) -> Yrot {
        root.filter(|&r| r > self.through)
    }

    pub(crate) fn through(&self) -> Seq {
        self.through
    }

    pub(crate) fn squash_after(&mut self, seq: Seq) {
        self.backlog.retain(|&s| s <= seq);
    }
}
