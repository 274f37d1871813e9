use super::{Scheme, SchemeKind};

/// Unprotected core: every hook is a no-op.
#[derive(Clone, Copy, Debug, Default)]
pub struct Baseline;

impl Scheme for Baseline {
    fn kind(&self) -> SchemeKind {
        SchemeKind::Baseline
    }
}
