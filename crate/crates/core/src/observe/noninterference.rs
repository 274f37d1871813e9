use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ObservationEvent;
use crate::config::CoreConfig;
use crate::isa::{interpret, Opcode, Program};
use crate::pipeline::{simulate, SimError};
use crate::schemes::SchemeKind;

/// Steps allowed to the interpreter when checking the committed path.
const INTERP_LIMIT: u64 = 10_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Indistinguishable,
    Distinguishable {
        /// Variant whose trace first diverged from variant 0.
        variant: usize,
        /// Position of the first differing event.
        index: usize,
        reference: Option<ObservationEvent>,
        observed: Option<ObservationEvent>,
    },
}

impl Verdict {
    pub fn is_distinguishable(&self) -> bool {
        matches!(self, Verdict::Distinguishable { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NonInterferenceError {
    #[error("need at least two secret variants, got {0}")]
    TooFewVariants(usize),
    #[error("variant {variant} assigns address {addr:#x}, which is not a secret cell")]
    NotSecret { variant: usize, addr: u64 },
    #[error("committed path reads secret cell {addr:#x} (variant {variant})")]
    SecretOnCommittedPath { variant: usize, addr: u64 },
    #[error("interpreter did not halt within {INTERP_LIMIT} steps")]
    NoHalt,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Runs every secret variant and compares the full observation traces.
pub fn check_noninterference(
    program: &Program,
    variants: &[BTreeMap<u64, u64>],
    scheme: SchemeKind,
    config: &CoreConfig,
) -> Result<Verdict, NonInterferenceError> {
    if variants.len() < 2 {
        return Err(NonInterferenceError::TooFewVariants(variants.len()));
    }
    let mut programs = Vec::with_capacity(variants.len());
    for (variant, values) in variants.iter().enumerate() {
        if let Some(&addr) = values.keys().find(|a| !program.secret_cells.contains(a)) {
            return Err(NonInterferenceError::NotSecret { variant, addr });
        }
        let p = program.with_secrets(values);
        let run = interpret(&p, INTERP_LIMIT);
        if !run.halted {
            return Err(NonInterferenceError::NoHalt);
        }
        let read_secret = run.steps.iter().find_map(|s| {
            let is_load = p.instrs.get(s.pc).is_some_and(|i| i.opcode == Opcode::Load);
            s.mem_addr.filter(|a| is_load && p.secret_cells.contains(a))
        });
        if let Some(addr) = read_secret {
            return Err(NonInterferenceError::SecretOnCommittedPath { variant, addr });
        }
        programs.push(p);
    }
    let reference = simulate(config, scheme, &programs[0])?.observations;
    for (variant, p) in programs.iter().enumerate().skip(1) {
        let observed = simulate(config, scheme, p)?.observations;
        if let Some(index) = first_difference(&reference, &observed) {
            return Ok(Verdict::Distinguishable {
                variant,
                index,
                reference: reference.get(index).copied(),
                observed: observed.get(index).copied(),
            });
        }
    }
    Ok(Verdict::Indistinguishable)
}

fn first_difference(a: &[ObservationEvent], b: &[ObservationEvent]) -> Option<usize> {
    let common = a.iter().zip(b).position(|(x, y)| x != y);
    common.or_else(|| (a.len() != b.len()).then(|| a.len().min(b.len())))
}
