//! Brute-force taint oracle.
//!
//! Rebuilds the dynamic dataflow graph from the recorded trace alone and
//! recomputes every uop's youngest root of taint. Nothing here looks at
//! scheme state, so it can be used to check the schemes against it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::isa::{Opcode, Operand, NUM_ARCH_REGS};
use crate::pipeline::{IssueOutcome, SimRun, Trace};
use crate::schemes::{is_transmitter, join, SchemeKind, Yrot};
use crate::shadows::Seq;

/// Cycle from which each renamed uop was bound to commit, or `None` if it
/// never was (squashed first, or the run ended with an older shadow
/// outstanding).
///
/// A uop is bound to commit once every shadow older than it that was live at
/// its rename has resolved.
pub fn nonspec_cycles(trace: &Trace) -> BTreeMap<Seq, Option<u64>> {
    let mut out = BTreeMap::new();
    for u in &trace.uops {
        let mut at = Some(0u64);
        for s in trace.shadows.iter().take_while(|s| s.seq < u.seq) {
            if s.squashed.is_some_and(|c| c <= u.rename_cycle) {
                continue;
            }
            at = match (at, s.resolved) {
                (Some(a), Some(r)) => Some(a.max(r)),
                _ => None,
            };
        }
        out.insert(u.seq, at);
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct DiftOracle {
    srcs: BTreeMap<Seq, [Yrot; 2]>,
    value: BTreeMap<Seq, Yrot>,
    nonspec: BTreeMap<Seq, Option<u64>>,
}

/// Recomputes taint roots over the recorded trace.
///
/// The producer of a source register is the youngest older writer of that
/// register not squashed before the reader was renamed. A load's value is
/// rooted at the load itself; any other value at the youngest root among its
/// sources.
pub fn dift_oracle(trace: &Trace) -> DiftOracle {
    let mut writers: Vec<Vec<(Seq, Option<u64>)>> = vec![Vec::new(); NUM_ARCH_REGS];
    let mut o = DiftOracle {
        nonspec: nonspec_cycles(trace),
        ..Default::default()
    };
    for u in &trace.uops {
        let mut srcs = [None; 2];
        for &op in u.instr.sources() {
            let reg = u.instr.operand(op);
            if reg.is_zero() {
                continue;
            }
            let producer = writers[reg.index()]
                .iter()
                .rev()
                .find(|(_, squashed)| squashed.is_none_or(|c| c > u.rename_cycle))
                .map(|&(s, _)| s);
            let root = producer.and_then(|p| o.value[&p]);
            srcs[match op {
                Operand::Src1 => 0,
                Operand::Src2 => 1,
            }] = root;
        }
        let value = if u.instr.opcode == Opcode::Load {
            Some(u.seq)
        } else {
            join(srcs[0], srcs[1])
        };
        o.srcs.insert(u.seq, srcs);
        o.value.insert(u.seq, value);
        if let Some(d) = u.instr.dest() {
            writers[d.index()].push((u.seq, u.squash_cycle));
        }
    }
    o
}

impl DiftOracle {
    /// Root of the value `seq` produces, ignoring speculation status.
    pub fn value_root(&self, seq: Seq) -> Yrot {
        self.value.get(&seq).copied().flatten()
    }

    pub fn src_roots(&self, seq: Seq) -> [Yrot; 2] {
        self.srcs.get(&seq).copied().unwrap_or_default()
    }

    pub fn nonspec_cycle(&self, seq: Seq) -> Option<u64> {
        self.nonspec.get(&seq).copied().flatten()
    }

    /// Whether `root` is still speculative at `cycle`.
    pub fn live_at(&self, root: Yrot, cycle: u64) -> bool {
        root.is_some_and(|r| self.nonspec_cycle(r).is_none_or(|n| n > cycle))
    }

    /// Root gating a transmitter, given which parts are being issued.
    /// Store data only counts when taint is joined over both operands.
    pub fn gating_root(
        &self,
        seq: Seq,
        opcode: Opcode,
        addr_part: bool,
        data_part: bool,
        joined_store: bool,
    ) -> Yrot {
        let [a, b] = self.src_roots(seq);
        match opcode {
            Opcode::Load => a,
            Opcode::Beq | Opcode::Bne => join(a, b),
            Opcode::Store if joined_store => join(a, b),
            Opcode::Store => {
                let a = if addr_part { a } else { None };
                let _ = data_part;
                a
            }
            _ => None,
        }
    }

    /// The youngest speculative load the value of `seq` depends on at
    /// `cycle`.
    pub fn yrot_at(&self, seq: Seq, cycle: u64) -> Yrot {
        let root = self.value_root(seq);
        self.live_at(root, cycle).then_some(root).flatten()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleMismatch {
    pub seq: Seq,
    pub cycle: u64,
    pub what: String,
}

/// Checks every transmitter decision of an STT run against the oracle.
///
/// - soundness: no transmitter part executes while its oracle root is
///   speculative
/// - STT-Issue: every kill names the oracle root, which is speculative at
///   that cycle
/// - STT-Rename: the root computed at rename is the oracle root when that
///   root was speculative at rename (else none), and the mask is lifted
///   exactly when the root stops being speculative
pub fn audit_stt(run: &SimRun) -> Vec<OracleMismatch> {
    let oracle = dift_oracle(&run.trace);
    let joined_store = run.scheme == SchemeKind::SttRename && !run.config.stt_split_store_taint;
    let mut bad = Vec::new();
    let mut push = |seq, cycle, what: String| bad.push(OracleMismatch { seq, cycle, what });

    for rec in &run.trace.issues {
        let Some(u) = run.trace.uop(rec.seq) else {
            push(rec.seq, rec.cycle, "issue of unknown uop".into());
            continue;
        };
        let op = u.instr.opcode;
        if !is_transmitter(op) {
            continue;
        }
        let gate = oracle.gating_root(rec.seq, op, rec.addr_part, rec.data_part, joined_store);
        match rec.outcome {
            IssueOutcome::Executed => {
                if oracle.live_at(gate, rec.cycle) {
                    push(
                        rec.seq,
                        rec.cycle,
                        format!("executed with live root {gate:?}"),
                    );
                }
            }
            IssueOutcome::Killed { root } => {
                if run.scheme != SchemeKind::SttIssue {
                    push(rec.seq, rec.cycle, "kill outside STT-Issue".into());
                } else if gate != Some(root) || !oracle.live_at(gate, rec.cycle) {
                    push(
                        rec.seq,
                        rec.cycle,
                        format!("killed on {root}, oracle root {gate:?}"),
                    );
                }
            }
            IssueOutcome::Replayed | IssueOutcome::WaitStore { .. } => {}
        }
    }

    if run.scheme == SchemeKind::SttRename {
        for u in &run.trace.uops {
            let op = u.instr.opcode;
            if !is_transmitter(op) {
                continue;
            }
            let gate = oracle.gating_root(u.seq, op, true, true, joined_store);
            let expect = oracle
                .live_at(gate, u.rename_cycle)
                .then_some(gate)
                .flatten();
            if u.rename_root != expect || u.rename_mask != expect {
                push(
                    u.seq,
                    u.rename_cycle,
                    format!(
                        "rename root {:?} / mask {:?}, oracle {expect:?}",
                        u.rename_root, u.rename_mask
                    ),
                );
                continue;
            }
            let Some(root) = expect else { continue };
            let clears = oracle.nonspec_cycle(root);
            let still_there = |c: u64| u.squash_cycle.is_none_or(|s| s > c);
            let expected_unmask = clears.filter(|&c| still_there(c));
            if u.unmask_cycle != expected_unmask {
                push(
                    u.seq,
                    u.rename_cycle,
                    format!(
                        "unmasked at {:?}, root cleared at {clears:?}",
                        u.unmask_cycle
                    ),
                );
            }
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{ArchInstr, ArchReg};
    use crate::pipeline::{ShadowRecord, UopRecord};
    use crate::shadows::ShadowKind;

    fn uop(seq: Seq, instr: ArchInstr, rename_cycle: u64) -> UopRecord {
        UopRecord {
            seq,
            pc: seq as usize,
            instr,
            rename_cycle,
            squash_cycle: None,
            commit_cycle: None,
            rename_root: None,
            rename_mask: None,
            unmask_cycle: None,
        }
    }

    fn r(n: u8) -> ArchReg {
        ArchReg::r(n)
    }

    fn branch_at(seq: Seq, resolved: Option<u64>) -> ShadowRecord {
        ShadowRecord {
            seq,
            kind: ShadowKind::C,
            registered: 0,
            resolved,
            squashed: None,
        }
    }

    #[test]
    fn load_then_add_until_visible() {
        let mut t = Trace::default();
        t.uops.push(uop(1, ArchInstr::bne(r(9), r(0), 1), 0));
        t.uops.push(uop(2, ArchInstr::load(r(1), r(2), 0), 0));
        t.uops.push(uop(3, ArchInstr::add(r(3), r(1), r(1)), 0));
        t.shadows.push(branch_at(1, Some(20)));
        let o = dift_oracle(&t);
        assert_eq!(o.value_root(3), Some(2));
        assert_eq!(o.yrot_at(3, 19), Some(2));
        assert_eq!(o.yrot_at(3, 20), None);
    }

    #[test]
    fn diamond_takes_younger_load() {
        let mut t = Trace::default();
        t.uops.push(uop(1, ArchInstr::bne(r(9), r(0), 1), 0));
        t.uops.push(uop(2, ArchInstr::load(r(1), r(0), 0), 0));
        t.uops.push(uop(3, ArchInstr::load(r(2), r(0), 4), 0));
        t.uops.push(uop(4, ArchInstr::add(r(3), r(1), r(2)), 1));
        t.uops.push(uop(5, ArchInstr::add(r(4), r(2), r(1)), 1));
        t.shadows.push(branch_at(1, None));
        let o = dift_oracle(&t);
        assert_eq!(o.value_root(4), Some(3));
        assert_eq!(o.value_root(5), Some(3));
        assert_eq!(o.yrot_at(5, 1_000), Some(3));
    }

    #[test]
    fn deep_chain_shares_root() {
        let mut t = Trace::default();
        t.uops.push(uop(1, ArchInstr::load(r(1), r(0), 0), 0));
        for i in 0..100u64 {
            t.uops
                .push(uop(2 + i, ArchInstr::add(r(1), r(1), r(2)), 1 + i));
        }
        let o = dift_oracle(&t);
        assert!((2..102).all(|s| o.value_root(s) == Some(1)));
    }

    #[test]
    fn squashed_writer_is_skipped() {
        let mut t = Trace::default();
        t.uops.push(uop(1, ArchInstr::load(r(1), r(0), 0), 0));
        let mut wrong = uop(2, ArchInstr::addi(r(1), r(0), 3), 0);
        wrong.squash_cycle = Some(5);
        t.uops.push(wrong);
        t.uops.push(uop(3, ArchInstr::add(r(2), r(1), r(0)), 5));
        let o = dift_oracle(&t);
        assert_eq!(o.value_root(3), Some(1));
    }

    #[test]
    fn nonspec_ignores_shadows_squashed_before_rename() {
        let mut t = Trace::default();
        t.uops.push(uop(1, ArchInstr::bne(r(9), r(0), 1), 0));
        t.uops.push(uop(7, ArchInstr::load(r(1), r(0), 0), 9));
        t.shadows.push(ShadowRecord {
            seq: 1,
            kind: ShadowKind::C,
            registered: 0,
            resolved: None,
            squashed: Some(8),
        });
        assert_eq!(nonspec_cycles(&t)[&7], Some(0));
        t.uops[1].rename_cycle = 3;
        assert_eq!(nonspec_cycles(&t)[&7], None);
    }
}
