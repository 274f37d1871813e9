use std::collections::VecDeque;

use super::{Scheme, SchemeKind, Writeback};
use crate::pipeline::PhysReg;
use crate::shadows::{Seq, Visibility};

/// Permissive NDA: speculative loads write their data but withhold the
/// readiness broadcast until they become non-speculative.
///
/// Deferred broadcasts drain oldest first through their own ports, one port
/// per memory port, alongside the normal writeback path.
#[derive(Clone, Debug, Default)]
pub struct Nda {
    /// Completed speculative loads, kept sorted by seq.
    pending: VecDeque<(Seq, Option<PhysReg>)>,
}

impl Nda {
    pub fn pending(&self) -> impl Iterator<Item = &(Seq, Option<PhysReg>)> {
        self.pending.iter()
    }
}

impl Scheme for Nda {
    fn kind(&self) -> SchemeKind {
        SchemeKind::Nda
    }

    fn allows_speculative_wakeup(&self) -> bool {
        false
    }

    fn on_load_complete(
        &mut self,
        seq: Seq,
        pdst: Option<PhysReg>,
        visibility: Visibility,
    ) -> Writeback {
        if visibility.covers(seq) {
            return Writeback::BroadcastNow;
        }
        let at = self.pending.partition_point(|&(s, _)| s < seq);
        self.pending.insert(at, (seq, pdst));
        Writeback::Defer
    }

    fn drain_broadcasts(
        &mut self,
        ports: usize,
        visibility: Visibility,
    ) -> Vec<(Seq, Option<PhysReg>)> {
        let mut out = Vec::new();
        while out.len() < ports {
            match self.pending.front() {
                Some(&(seq, _)) if visibility.covers(seq) => {
                    out.push(self.pending.pop_front().unwrap())
                }
                _ => break,
            }
        }
        out
    }

    fn on_squash(&mut self, squash_after: Seq) {
        self.pending.retain(|&(s, _)| s <= squash_after);
    }

    fn pending_broadcasts(&self) -> usize {
        self.pending.len()
    }
}
