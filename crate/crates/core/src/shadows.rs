//! Speculation shadows and the visibility point.
//!
//! A C-shadow is an unresolved conditional branch, a D-shadow a store whose
//! address is not yet known. Every instruction younger than an unresolved
//! shadow is speculative. Shadows may resolve in any order but only the
//! oldest unresolved one bounds visibility, so their effect is in order.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Dynamic sequence number. Assigned at fetch, strictly increasing, never
/// reused; the first instruction gets 1.
pub type Seq = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShadowKind {
    /// Unresolved control flow.
    C,
    /// Unverified store-to-load ordering.
    D,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ShadowId(pub u64);

/// Youngest bound-to-commit sequence number.
///
/// `Unbounded` means no shadow is outstanding: everything in flight is
/// bound to commit. Variant order gives `Bounded(_) < Unbounded`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Bounded(Seq),
    Unbounded,
}

impl Visibility {
    pub fn covers(self, seq: Seq) -> bool {
        match self {
            Visibility::Bounded(v) => seq <= v,
            Visibility::Unbounded => true,
        }
    }

    pub fn as_option(self) -> Option<Seq> {
        match self {
            Visibility::Bounded(v) => Some(v),
            Visibility::Unbounded => None,
        }
    }
}

impl fmt::Display for Visibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Visibility::Bounded(v) => write!(f, "{v}"),
            Visibility::Unbounded => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShadowError {
    #[error("shadow ({seq}, {kind:?}) already registered")]
    Duplicate { seq: Seq, kind: ShadowKind },
    #[error("seq {seq} is already bound to commit (visibility {visibility})")]
    AlreadyVisible { seq: Seq, visibility: Visibility },
    #[error("seq {seq} registered after younger seq {last}")]
    OutOfOrder { seq: Seq, last: Seq },
    #[error("unknown shadow id {0:?}")]
    Unknown(ShadowId),
    #[error("shadow id {0:?} already resolved")]
    AlreadyResolved(ShadowId),
    #[error("shadow ledger full ({0} entries)")]
    Full(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shadow {
    pub id: ShadowId,
    pub seq: Seq,
    pub kind: ShadowKind,
    pub resolved: bool,
}

/// Ordered record of outstanding shadows.
///
/// Resolved shadows stay in place until everything older has resolved, at
/// which point they are dropped from the front.
#[derive(Clone, Debug)]
pub struct ShadowLedger {
    shadows: VecDeque<Shadow>,
    capacity: usize,
    next_id: u64,
    /// Youngest (seq, kind) registered since the last squash, for ordering
    /// checks.
    last: Option<(Seq, ShadowKind)>,
}

impl ShadowLedger {
    pub fn new(capacity: usize) -> Self {
        Self {
            shadows: VecDeque::new(),
            capacity,
            next_id: 0,
            last: None,
        }
    }

    pub fn visibility(&self) -> Visibility {
        match self.shadows.iter().find(|s| !s.resolved) {
            Some(s) => Visibility::Bounded(s.seq - 1),
            None => Visibility::Unbounded,
        }
    }

    pub fn is_speculative(&self, seq: Seq) -> bool {
        !self.visibility().covers(seq)
    }

    /// Shadows not yet resolved, oldest first.
    pub fn unresolved(&self) -> impl Iterator<Item = &Shadow> {
        self.shadows.iter().filter(|s| !s.resolved)
    }

    pub fn unresolved_count(&self) -> usize {
        self.unresolved().count()
    }

    pub fn register_shadow(&mut self, seq: Seq, kind: ShadowKind) -> Result<ShadowId, ShadowError> {
        if self.shadows.iter().any(|s| s.seq == seq && s.kind == kind) {
            return Err(ShadowError::Duplicate { seq, kind });
        }
        let visibility = self.visibility();
        if seq == 0 || matches!(visibility, Visibility::Bounded(v) if seq <= v) {
            return Err(ShadowError::AlreadyVisible { seq, visibility });
        }
        if let Some(last) = self.last {
            if (seq, kind) < last {
                return Err(ShadowError::OutOfOrder { seq, last: last.0 });
            }
        }
        if self.shadows.len() >= self.capacity {
            return Err(ShadowError::Full(self.capacity));
        }
        let id = ShadowId(self.next_id);
        self.next_id += 1;
        self.shadows.push_back(Shadow {
            id,
            seq,
            kind,
            resolved: false,
        });
        self.last = Some((seq, kind));
        Ok(id)
    }

    pub fn resolve_shadow(&mut self, id: ShadowId) -> Result<Visibility, ShadowError> {
        let s = self
            .shadows
            .iter_mut()
            .find(|s| s.id == id)
            .ok_or(ShadowError::Unknown(id))?;
        if s.resolved {
            return Err(ShadowError::AlreadyResolved(id));
        }
        s.resolved = true;
        while self.shadows.front().is_some_and(|s| s.resolved) {
            self.shadows.pop_front();
        }
        Ok(self.visibility())
    }

    /// Drops every shadow younger than `seq`.
    pub fn squash_after(&mut self, seq: Seq) {
        self.shadows.retain(|s| s.seq <= seq);
        self.last = self.shadows.back().map(|s| (s.seq, s.kind));
    }

    pub fn len(&self) -> usize {
        self.shadows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shadows.is_empty()
    }

    pub fn get(&self, id: ShadowId) -> Option<&Shadow> {
        self.shadows.iter().find(|s| s.id == id)
    }
}
