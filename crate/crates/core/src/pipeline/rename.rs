//! Register renaming: RAT, free list and branch checkpoints.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::isa::{ArchInstr, ArchReg, Operand, NUM_ARCH_REGS};
use crate::schemes::SchemeSnapshot;
use crate::shadows::Seq;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhysReg(pub u32);

impl PhysReg {
    /// Permanently mapped to `r0`; always ready, always zero.
    pub const ZERO: PhysReg = PhysReg(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PhysReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

pub type Rat = [PhysReg; NUM_ARCH_REGS];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Checkpoint {
    pub rat: Rat,
    pub scheme: Option<SchemeSnapshot>,
}

/// Physical mapping of one renamed instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RenamedOp {
    /// In operand order; `None` where the instruction has no such operand.
    pub psrc: [Option<PhysReg>; 2],
    pub pdst: Option<PhysReg>,
    /// Mapping `pdst` replaced; freed when this instruction commits.
    pub prev_pdst: Option<PhysReg>,
}

#[derive(Clone, Debug)]
pub struct RenameState {
    rat: Rat,
    free: VecDeque<PhysReg>,
    checkpoints: BTreeMap<Seq, Checkpoint>,
    checkpoint_capacity: usize,
}

impl RenameState {
    /// Identity mapping `r_i -> p_i`; the rest of the registers start free.
    pub fn new(phys_regs: usize, checkpoint_capacity: usize) -> Self {
        let rat: Rat = std::array::from_fn(|i| PhysReg(i as u32));
        let free = (NUM_ARCH_REGS..phys_regs)
            .map(|i| PhysReg(i as u32))
            .collect();
        Self {
            rat,
            free,
            checkpoints: BTreeMap::new(),
            checkpoint_capacity,
        }
    }

    /// Explicit initial state, for tests.
    pub fn with_state(
        rat: Rat,
        free: impl IntoIterator<Item = PhysReg>,
        checkpoint_capacity: usize,
    ) -> Self {
        Self {
            rat,
            free: free.into_iter().collect(),
            checkpoints: BTreeMap::new(),
            checkpoint_capacity,
        }
    }

    pub fn rat(&self) -> &Rat {
        &self.rat
    }

    pub fn lookup(&self, r: ArchReg) -> PhysReg {
        self.rat[r.index()]
    }

    pub fn free_list(&self) -> impl Iterator<Item = &PhysReg> {
        self.free.iter()
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    pub fn checkpoint_count(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn has_checkpoint(&self, seq: Seq) -> bool {
        self.checkpoints.contains_key(&seq)
    }

    /// Renames the longest prefix of `group` the free list and checkpoint
    /// store can take. A conditional branch gets a checkpoint of the RAT as
    /// it stands right after the branch.
    ///
    /// Sources are read from the RAT as it was at the start of the group,
    /// then corrected for writers earlier in the same group.
    pub fn rename_group(&mut self, group: &[(Seq, ArchInstr)]) -> Vec<RenamedOp> {
        let mut n = 0;
        let (mut regs, mut cps) = (
            self.free.len(),
            self.checkpoint_capacity - self.checkpoints.len(),
        );
        for (_, instr) in group {
            let need_reg = usize::from(instr.dest().is_some());
            let need_cp = usize::from(instr.opcode.is_conditional_branch());
            if need_reg > regs || need_cp > cps {
                break;
            }
            regs -= need_reg;
            cps -= need_cp;
            n += 1;
        }
        let group = &group[..n];

        // Step one: everything reads the old RAT, every dest gets a fresh reg.
        let start = self.rat;
        let mut ops: Vec<RenamedOp> = group
            .iter()
            .map(|(_, instr)| {
                let mut psrc = [None; 2];
                for &op in instr.sources() {
                    psrc[slot(op)] = Some(start[instr.operand(op).index()]);
                }
                let pdst = instr
                    .dest()
                    .map(|_| self.free.pop_front().expect("free list checked"));
                RenamedOp {
                    psrc,
                    pdst,
                    prev_pdst: None,
                }
            })
            .collect();

        // Step two: same-group fix-up and the sequential RAT update.
        for i in 0..group.len() {
            let instr = group[i].1;
            for &op in instr.sources() {
                let reg = instr.operand(op);
                if let Some(j) = group[..i].iter().rposition(|(_, w)| w.dest() == Some(reg)) {
                    ops[i].psrc[slot(op)] = ops[j].pdst;
                }
            }
            if let (Some(d), Some(p)) = (instr.dest(), ops[i].pdst) {
                ops[i].prev_pdst = Some(self.rat[d.index()]);
                self.rat[d.index()] = p;
            }
            if instr.opcode.is_conditional_branch() {
                self.checkpoints.insert(
                    group[i].0,
                    Checkpoint {
                        rat: self.rat,
                        scheme: None,
                    },
                );
            }
        }
        ops
    }

    pub fn attach_scheme_snapshot(&mut self, seq: Seq, snapshot: Option<SchemeSnapshot>) {
        if let Some(cp) = self.checkpoints.get_mut(&seq) {
            cp.scheme = snapshot;
        }
    }

    /// Branch resolved correctly: its checkpoint is no longer needed.
    pub fn release_checkpoint(&mut self, seq: Seq) {
        self.checkpoints.remove(&seq);
    }

    /// Restores the RAT to the checkpoint of branch `seq` and drops it along
    /// with every younger checkpoint. Returns the scheme snapshot.
    pub fn restore_checkpoint(&mut self, seq: Seq) -> Option<Checkpoint> {
        let cp = self.checkpoints.remove(&seq)?;
        self.rat = cp.rat;
        self.drop_checkpoints_after(seq);
        Some(cp)
    }

    pub fn drop_checkpoints_after(&mut self, seq: Seq) {
        self.checkpoints.retain(|&s, _| s <= seq);
    }

    /// Undoes one renamed instruction during a walk back from the youngest.
    pub fn undo(&mut self, dst: ArchReg, prev: PhysReg) {
        self.rat[dst.index()] = prev;
    }

    pub fn free(&mut self, p: PhysReg) {
        debug_assert!(p != PhysReg::ZERO);
        self.free.push_back(p);
    }
}

fn slot(op: Operand) -> usize {
    match op {
        Operand::Src1 => 0,
        Operand::Src2 => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{ArchInstr, ArchReg};

    fn r(n: u8) -> ArchReg {
        ArchReg::r(n)
    }

    fn p(n: u32) -> PhysReg {
        PhysReg(n)
    }

    /// Renames one instruction at a time.
    fn sequential(rat: Rat, free: &[PhysReg], group: &[ArchInstr]) -> Vec<RenamedOp> {
        let mut s = RenameState::with_state(rat, free.iter().copied(), 16);
        group
            .iter()
            .enumerate()
            .map(|(i, g)| s.rename_group(&[(i as u64 + 1, *g)])[0])
            .collect()
    }

    #[test]
    fn three_instruction_example() {
        // r3 -> p7 and r6 -> p3 before the group; free list p5, p2, p4.
        let mut rat: Rat = std::array::from_fn(|i| PhysReg(100 + i as u32));
        rat[3] = p(7);
        rat[6] = p(3);
        let group = [
            (1, ArchInstr::add(r(3), r(1), r(2))),
            (2, ArchInstr::add(r(6), r(3), r(4))),
            (3, ArchInstr::add(r(7), r(6), r(5))),
        ];
        let mut s = RenameState::with_state(rat, [p(5), p(2), p(4)], 16);
        let ops = s.rename_group(&group);
        assert_eq!(
            ops.iter().map(|o| o.pdst.unwrap()).collect::<Vec<_>>(),
            vec![p(5), p(2), p(4)]
        );
        assert_eq!(ops[1].psrc[0], Some(p(5)));
        assert_eq!(ops[2].psrc[0], Some(p(2)));
        assert_eq!(ops[1].prev_pdst, Some(p(3)));
        assert_eq!(s.lookup(r(3)), p(5));
        assert_eq!(s.lookup(r(6)), p(2));
        assert_eq!(s.lookup(r(7)), p(4));
    }

    #[test]
    fn independent_add_reads_rat() {
        let mut s = RenameState::new(64, 16);
        let ops = s.rename_group(&[(1, ArchInstr::add(r(1), r(2), r(3)))]);
        assert_eq!(ops[0].psrc, [Some(p(2)), Some(p(3))]);
        assert_eq!(ops[0].pdst, Some(p(32)));
        assert_eq!(ops[0].prev_pdst, Some(p(1)));
    }

    #[test]
    fn chain_matches_sequential_renamer() {
        let group: Vec<ArchInstr> = (0..4)
            .map(|i| ArchInstr::add(r(2 + i), r(1 + i), r(1 + i)))
            .collect();
        let rat: Rat = std::array::from_fn(|i| PhysReg(i as u32));
        let free: Vec<PhysReg> = (40..48).map(p).collect();
        let mut s = RenameState::with_state(rat, free.clone(), 16);
        let tagged: Vec<(Seq, ArchInstr)> = group
            .iter()
            .enumerate()
            .map(|(i, g)| (i as u64 + 1, *g))
            .collect();
        assert_eq!(s.rename_group(&tagged), sequential(rat, &free, &group));
    }

    #[test]
    fn partial_group_on_free_list_exhaustion() {
        let rat: Rat = std::array::from_fn(|i| PhysReg(i as u32));
        let mut s = RenameState::with_state(rat, [p(40)], 16);
        let ops = s.rename_group(&[
            (1, ArchInstr::addi(r(1), r(0), 1)),
            (2, ArchInstr::beq(r(1), r(0), 1)),
            (3, ArchInstr::addi(r(2), r(0), 1)),
        ]);
        assert_eq!(ops.len(), 2);
        assert!(s.has_checkpoint(2));
    }

    #[test]
    fn checkpoint_capacity_limits_group() {
        let mut s = RenameState::new(64, 1);
        let ops = s.rename_group(&[
            (1, ArchInstr::beq(r(0), r(0), 1)),
            (2, ArchInstr::bne(r(0), r(0), 1)),
        ]);
        assert_eq!(ops.len(), 1);
    }

    #[test]
    fn restore_drops_younger_checkpoints() {
        let mut s = RenameState::new(64, 16);
        s.rename_group(&[
            (1, ArchInstr::addi(r(1), r(0), 1)),
            (2, ArchInstr::beq(r(0), r(0), 1)),
            (3, ArchInstr::addi(r(1), r(0), 2)),
            (4, ArchInstr::beq(r(0), r(0), 1)),
        ]);
        let after_first = p(32);
        assert_eq!(s.checkpoint_count(), 2);
        let cp = s.restore_checkpoint(2).unwrap();
        assert_eq!(cp.rat[1], after_first);
        assert_eq!(s.lookup(r(1)), after_first);
        assert_eq!(s.checkpoint_count(), 0);
    }

    #[test]
    fn r0_writes_allocate_nothing() {
        let mut s = RenameState::new(64, 16);
        let ops = s.rename_group(&[(1, ArchInstr::add(r(0), r(1), r(2)))]);
        assert_eq!(ops[0].pdst, None);
        assert_eq!(s.free_count(), 32);
    }
}
