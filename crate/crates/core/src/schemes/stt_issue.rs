use super::{join, IssueDecision, Scheme, SchemeKind, SelectInput, Untainter, Yrot};
use crate::isa::Opcode;
use crate::pipeline::PhysReg;
use crate::shadows::{Seq, Visibility};

/// Per-physical-register taint, written when a uop executes.
///
/// An entry is always rewritten by its next producer before any consumer of
/// that producer can be selected, so no checkpoints are needed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaintUnit {
    roots: Vec<Yrot>,
}

impl TaintUnit {
    pub fn new(phys_regs: usize) -> Self {
        Self {
            roots: vec![None; phys_regs],
        }
    }

    pub fn get(&self, p: PhysReg) -> Yrot {
        self.roots[p.index()]
    }

    pub fn set(&mut self, p: PhysReg, root: Yrot) {
        self.roots[p.index()] = root;
    }

    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }
}

/// STT with taint computed at select.
///
/// A tainted transmitter that wins selection is turned into a nop; its issue
/// queue entry is masked with the root and re-arbitrates the cycle after the
/// root's untaint broadcast.
#[derive(Clone, Debug)]
pub struct SttIssue {
    unit: TaintUnit,
    untaint: Untainter,
}

impl SttIssue {
    pub fn new(phys_regs: usize, untaint_bandwidth: Option<usize>) -> Self {
        Self {
            unit: TaintUnit::new(phys_regs),
            untaint: Untainter::new(untaint_bandwidth),
        }
    }

    pub fn taint_unit(&self) -> &TaintUnit {
        &self.unit
    }

    fn src(&self, p: Option<PhysReg>) -> Yrot {
        p.and_then(|p| self.untaint.live(self.unit.get(p)))
    }
}

impl Scheme for SttIssue {
    fn kind(&self) -> SchemeKind {
        SchemeKind::SttIssue
    }

    fn on_issue_select(&mut self, sel: &SelectInput) -> IssueDecision {
        let [a, b] = [self.src(sel.srcs[0]), self.src(sel.srcs[1])];
        let gating = match sel.opcode {
            Opcode::Load => a,
            // Only address generation is observable.
            Opcode::Store if sel.addr_part => a,
            Opcode::Beq | Opcode::Bne => join(a, b),
            _ => None,
        };
        if let Some(root) = gating {
            return IssueDecision::Kill { root };
        }
        if let Some(p) = sel.pdst {
            let root = match sel.opcode {
                Opcode::Load => (!sel.visibility.covers(sel.seq)).then_some(sel.seq),
                _ => join(a, b),
            };
            self.unit.set(p, root);
        }
        IssueDecision::Execute
    }

    fn on_visibility_advance(
        &mut self,
        newly_nonspec: &[Seq],
        _visibility: Visibility,
    ) -> Vec<Seq> {
        let roots = self.untaint.advance(newly_nonspec);
        let through = self.untaint.through();
        for slot in &mut self.unit.roots {
            if slot.is_some_and(|r| r <= through) {
                *slot = None;
            }
        }
        roots
    }

    fn on_squash(&mut self, squash_after: Seq) {
        self.untaint.squash_after(squash_after);
    }
}
