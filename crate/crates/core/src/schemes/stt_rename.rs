use serde::{Deserialize, Serialize};

use super::{
    is_transmitter, join, Recovery, RenameInput, RenameTaint, Scheme, SchemeKind, SchemeSnapshot,
    Untainter, Yrot,
};
use crate::isa::{ArchReg, Opcode, Operand, NUM_ARCH_REGS};
use crate::shadows::{Seq, Visibility};

/// Per-architectural-register taint, kept next to the RAT.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaintFile {
    roots: [Yrot; NUM_ARCH_REGS],
}

impl Default for TaintFile {
    fn default() -> Self {
        Self {
            roots: [None; NUM_ARCH_REGS],
        }
    }
}

impl TaintFile {
    pub fn get(&self, r: ArchReg) -> Yrot {
        if r.is_zero() {
            None
        } else {
            self.roots[r.index()]
        }
    }

    pub fn set(&mut self, r: ArchReg, root: Yrot) {
        if !r.is_zero() {
            self.roots[r.index()] = root;
        }
    }

    pub fn clear_where(&mut self, mut dead: impl FnMut(Seq) -> bool) {
        for slot in &mut self.roots {
            if slot.is_some_and(&mut dead) {
                *slot = None;
            }
        }
    }

    pub fn is_clean(&self) -> bool {
        self.roots.iter().all(Option::is_none)
    }
}

/// Taint computed for one uop of a rename group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UopYrot {
    /// Source taints in operand order (`None` for unused operands).
    pub srcs: [Yrot; 2],
    /// Root gating execution if the uop is a transmitter.
    pub gating: Yrot,
    /// Taint written to the destination register.
    pub dst: Yrot,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupYrot {
    pub uops: Vec<UopYrot>,
    /// Taint file after the whole group.
    pub after: TaintFile,
}

/// Rename-stage taint computation for a whole group in one step.
///
/// All sources are first read from the taint file as it stood before the
/// group. Then, oldest first, a source written by an older uop of the same
/// group takes that uop's freshly computed destination taint instead, so
/// the chain through the group is serial.
pub fn compute_group_yrot(
    file: &TaintFile,
    group: &[RenameInput],
    split_store_taint: bool,
) -> GroupYrot {
    let mut uops: Vec<UopYrot> = Vec::with_capacity(group.len());
    for (i, u) in group.iter().enumerate() {
        let mut srcs = [None; 2];
        for &op in u.instr.sources() {
            let reg = u.instr.operand(op);
            let slot = match op {
                Operand::Src1 => 0,
                Operand::Src2 => 1,
            };
            let fwd = group[..i].iter().rposition(|w| w.instr.dest() == Some(reg));
            srcs[slot] = match fwd {
                Some(j) => uops[j].dst,
                None => file.get(reg),
            };
        }
        let gating = match u.instr.opcode {
            Opcode::Load => srcs[0],
            Opcode::Store if split_store_taint => srcs[0],
            _ => join(srcs[0], srcs[1]),
        };
        let dst = match u.instr.opcode {
            Opcode::Load => u.speculative.then_some(u.seq),
            _ => join(srcs[0], srcs[1]),
        };
        uops.push(UopYrot { srcs, gating, dst });
    }
    let mut after = file.clone();
    for (u, y) in group.iter().zip(&uops) {
        if let Some(d) = u.instr.dest() {
            after.set(d, y.dst);
        }
    }
    GroupYrot { uops, after }
}

/// STT with taint tracked at rename.
///
/// Transmitters are masked in the issue queue from rename until their root's
/// untaint broadcast, and become eligible the following cycle.
#[derive(Clone, Debug)]
pub struct SttRename {
    file: TaintFile,
    split_store_taint: bool,
    untaint: Untainter,
}

impl SttRename {
    pub fn new(split_store_taint: bool, untaint_bandwidth: Option<usize>) -> Self {
        Self {
            file: TaintFile::default(),
            split_store_taint,
            untaint: Untainter::new(untaint_bandwidth),
        }
    }

    pub fn taint_file(&self) -> &TaintFile {
        &self.file
    }

    fn invalidate(&mut self, squash_after: Seq) {
        let through = self.untaint.through();
        self.file.clear_where(|r| r <= through || r > squash_after);
    }
}

impl Scheme for SttRename {
    fn kind(&self) -> SchemeKind {
        SchemeKind::SttRename
    }

    fn on_rename(&mut self, group: &[RenameInput], _visibility: Visibility) -> Vec<RenameTaint> {
        let g = compute_group_yrot(&self.file, group, self.split_store_taint);
        let mut out = Vec::with_capacity(group.len());
        for (u, y) in group.iter().zip(&g.uops) {
            let undo = u.instr.dest().map(|d| (d, self.file.get(d)));
            if let Some(d) = u.instr.dest() {
                self.file.set(d, y.dst);
            }
            let root = self.untaint.live(y.gating);
            let mask = if is_transmitter(u.instr.opcode) {
                root
            } else {
                None
            };
            let checkpoint = u
                .needs_checkpoint
                .then(|| SchemeSnapshot::TaintFile(self.file.clone()));
            out.push(RenameTaint {
                mask,
                root,
                checkpoint,
                undo,
            });
        }
        debug_assert_eq!(self.file, g.after);
        out
    }

    fn on_recovery(&mut self, how: Recovery<'_>, squash_after: Seq) {
        match how {
            Recovery::Checkpoint(Some(SchemeSnapshot::TaintFile(snap))) => self.file = snap.clone(),
            Recovery::Checkpoint(None) => {}
            Recovery::Walk(undos) => {
                for &(r, prev) in undos {
                    self.file.set(r, prev);
                }
            }
        }
        self.invalidate(squash_after);
    }

    fn on_visibility_advance(
        &mut self,
        newly_nonspec: &[Seq],
        _visibility: Visibility,
    ) -> Vec<Seq> {
        let roots = self.untaint.advance(newly_nonspec);
        let through = self.untaint.through();
        self.file.clear_where(|r| r <= through);
        roots
    }

    fn on_squash(&mut self, squash_after: Seq) {
        self.untaint.squash_after(squash_after);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::ArchInstr;

    fn r(n: u8) -> ArchReg {
        ArchReg::r(n)
    }

    fn input(seq: Seq, instr: ArchInstr, speculative: bool) -> RenameInput {
        RenameInput {
            seq,
            instr,
            speculative,
            needs_checkpoint: instr.opcode.is_conditional_branch(),
        }
    }

    /// One uop at a time, straight from the taint semantics.
    fn sequential(file: &TaintFile, group: &[RenameInput]) -> (Vec<UopYrot>, TaintFile) {
        let mut f = file.clone();
        let mut out = Vec::new();
        for u in group {
            let g = compute_group_yrot(&f, std::slice::from_ref(u), false);
            f = g.after;
            out.push(g.uops[0]);
        }
        (out, f)
    }

    #[test]
    fn load_add_load_chain() {
        // load r3 <- [r1]; r6 = r3 + r2; load r7 <- [r6]
        let group = [
            input(10, ArchInstr::load(r(3), r(1), 0), true),
            input(11, ArchInstr::add(r(6), r(3), r(2)), true),
            input(12, ArchInstr::load(r(7), r(6), 0), true),
        ];
        let g = compute_group_yrot(&TaintFile::default(), &group, false);
        assert_eq!(g.uops[1].dst, Some(10));
        assert_eq!(g.uops[2].gating, Some(10));
        assert_eq!(g.uops[2].dst, Some(12));
        assert_eq!(g.after.get(r(7)), Some(12));
    }

    #[test]
    fn independent_untainted_group_changes_nothing() {
        let group = [
            input(1, ArchInstr::add(r(3), r(1), r(2)), true),
            input(2, ArchInstr::addi(r(4), r(5), 1), true),
        ];
        let g = compute_group_yrot(&TaintFile::default(), &group, false);
        assert!(g.uops.iter().all(|u| u.dst.is_none() && u.gating.is_none()));
        assert!(g.after.is_clean());
    }

    #[test]
    fn width4_chain_inherits_root() {
        let mut f = TaintFile::default();
        f.set(r(1), Some(42));
        let group: Vec<RenameInput> = (0..4)
            .map(|i| {
                input(
                    50 + i as u64,
                    ArchInstr::add(r(2 + i), r(1 + i), r(1 + i)),
                    true,
                )
            })
            .collect();
        let g = compute_group_yrot(&f, &group, false);
        let (seq, after) = sequential(&f, &group);
        assert_eq!(g.uops, seq);
        assert_eq!(g.after, after);
        assert!(g.uops.iter().all(|u| u.dst == Some(42)));
    }

    #[test]
    fn nonspeculative_load_is_untainted() {
        let g = compute_group_yrot(
            &TaintFile::default(),
            &[input(3, ArchInstr::load(r(2), r(1), 0), false)],
            false,
        );
        assert_eq!(g.uops[0].dst, None);
    }

    #[test]
    fn store_taint_joins_both_operands_unless_split() {
        let mut f = TaintFile::default();
        f.set(r(2), Some(7));
        let st = [input(9, ArchInstr::store(r(2), r(1), 0), true)];
        assert_eq!(compute_group_yrot(&f, &st, false).uops[0].gating, Some(7));
        assert_eq!(compute_group_yrot(&f, &st, true).uops[0].gating, None);
    }

    #[test]
    fn restore_invalidates_outside_window() {
        let mut s = SttRename::new(false, None);
        let group = [
            input(4, ArchInstr::load(r(1), r(0), 0), true),
            input(5, ArchInstr::load(r(2), r(0), 0), true),
            input(6, ArchInstr::bne(r(0), r(0), 1), true),
            input(7, ArchInstr::load(r(3), r(0), 0), true),
        ];
        let out = s.on_rename(&group, Visibility::Bounded(3));
        let snap = out[2].checkpoint.clone().unwrap();
        assert_eq!(s.taint_file().get(r(3)), Some(7));
        // Load 4 becomes non-speculative, then the branch at 6 mispredicts.
        s.on_visibility_advance(&[4], Visibility::Bounded(4));
        s.on_recovery(Recovery::Checkpoint(Some(&snap)), 6);
        assert_eq!(s.taint_file().get(r(1)), None);
        assert_eq!(s.taint_file().get(r(2)), Some(5));
        assert_eq!(s.taint_file().get(r(3)), None);
    }

    #[test]
    fn walk_recovery_applies_undo() {
        let mut s = SttRename::new(false, None);
        let group = [
            input(4, ArchInstr::load(r(1), r(0), 0), true),
            input(5, ArchInstr::load(r(1), r(0), 0), true),
        ];
        let out = s.on_rename(&group, Visibility::Bounded(3));
        let undos: Vec<(ArchReg, Yrot)> = out.iter().rev().filter_map(|t| t.undo).collect();
        s.on_recovery(Recovery::Walk(&undos[..1]), 4);
        assert_eq!(s.taint_file().get(r(1)), Some(4));
    }

    #[test]
    fn transmitters_get_masked() {
        let mut s = SttRename::new(false, None);
        let group = [
            input(4, ArchInstr::load(r(1), r(0), 0), true),
            input(5, ArchInstr::add(r(2), r(1), r(1)), true),
            input(6, ArchInstr::load(r(3), r(2), 0), true),
        ];
        let out = s.on_rename(&group, Visibility::Bounded(3));
        assert_eq!(out[1].mask, None);
        assert_eq!(out[1].root, Some(4));
        assert_eq!(out[2].mask, Some(4));
        assert_eq!(
            s.on_visibility_advance(&[4], Visibility::Bounded(5)),
            vec![4]
        );
        assert_eq!(s.taint_file().get(r(2)), None);
        assert_eq!(s.taint_file().get(r(3)), Some(6));
    }
}
