//! Program generators: the Spectre-v1 gadget and synthetic micro-workloads.
//!
//! Memory layout shared by all generated programs:
//!
//! | region          | base           | notes                                  |
//! |-----------------|----------------|----------------------------------------|
//! | index table     | `NEAR_BASE`    | read-only, small values                |
//! | gather table    | `NEAR_BASE+256`| read-only                              |
//! | scratch slots   | `SCRATCH_BASE` | store/load traffic, tiny footprint     |
//! | probe array     | `PROBE_BASE`   | Spectre gadget only                    |
//! | far memory      | `FAR_BASE`..   | flat backing latency, see `CoreConfig` |
//!
//! Generated workloads are straight-line code with forward branches only, so
//! they always terminate.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ArchInstr, ArchReg, Program};

pub const NEAR_BASE: u64 = 0x1000;
pub const SCRATCH_BASE: u64 = 0x2000;
pub const PROBE_BASE: u64 = 0x8000;
/// Every address at or above this one is served with the backing-memory
/// latency; everything below hits in L1.
pub const FAR_BASE: u64 = 0x10_0000;
/// Bounds-check word read by the Spectre gadget (far, so the check is slow).
pub const SPECTRE_BOUND_ADDR: u64 = FAR_BASE + 0x100;

const GATHER_BASE: u64 = NEAR_BASE + 0x100;
const INDEX_LEN: u64 = 64;
const GATHER_LEN: u64 = 64;
const SCRATCH_SLOTS: i64 = 8;
const FLAG_BASE: u64 = FAR_BASE + 0x1000;
const CHASE_BASE: u64 = FAR_BASE + 0x10_000;
/// Share of mixed-workload store/reload pairs whose stored value comes from
/// a load. Kept low: a tainted store followed by a reload of the same slot is
/// the pathological case `StoreLoadMix` exists to exercise.
const MIXED_LOADED_STORE: f64 = 0.01;

const R_NEAR: ArchReg = ArchReg(1);
const R_FAR: ArchReg = ArchReg(2);
const R_SCRATCH: ArchReg = ArchReg(3);
const R_CHASE: ArchReg = ArchReg(4);
const R_GATHER: ArchReg = ArchReg(5);
const FIRST_TEMP: u8 = 6;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenError {
    #[error("probe stride must be at least 1")]
    ZeroStride,
    #[error("workload size must be at least 1")]
    ZeroSize,
}

/// Canonical Spectre-v1 bounds-check bypass.
///
/// The bounds flag lives in far memory, so the check resolves late. The
/// branch jumps to the in-bounds path when the flag is non-zero; with the
/// default always-taken predictor that path is always predicted, but the flag
/// is zero, so it only ever runs transiently. On that path the secret is read
/// and used to index the probe array.
pub fn gen_spectre_v1(secret_addr: u64, probe_stride: u64) -> Result<Program, GenError> {
    if probe_stride == 0 {
        return Err(GenError::ZeroStride);
    }
    let r = ArchReg::r;
    let instrs = vec![
        // 0: attacker-controlled pointer, already out of bounds
        ArchInstr::addi(r(1), ArchReg::ZERO, secret_addr as i64),
        ArchInstr::addi(r(7), ArchReg::ZERO, probe_stride as i64),
        ArchInstr::load(r(2), ArchReg::ZERO, SPECTRE_BOUND_ADDR as i64),
        // 3: bounds check, predicted taken
        ArchInstr::bne(r(2), ArchReg::ZERO, 2),
        ArchInstr::halt(),
        // 5: transient path
        ArchInstr::load(r(4), r(1), 0),
        ArchInstr::mul(r(5), r(4), r(7)),
        ArchInstr::load(r(6), r(5), PROBE_BASE as i64),
        ArchInstr::halt(),
    ];
    let mut program = Program::new(instrs);
    program.data_init.insert(SPECTRE_BOUND_ADDR, 0);
    program.data_init.insert(secret_addr, 0);
    program.secret_cells.insert(secret_addr);
    Ok(program)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    ComputeBound,
    PointerChase,
    StoreLoadMix,
    Mixed,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 4] = [
        WorkloadKind::ComputeBound,
        WorkloadKind::PointerChase,
        WorkloadKind::StoreLoadMix,
        WorkloadKind::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::ComputeBound => "compute_bound",
            WorkloadKind::PointerChase => "pointer_chase",
            WorkloadKind::StoreLoadMix => "store_load_mix",
            WorkloadKind::Mixed => "mixed",
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WorkloadKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_").to_ascii_lowercase();
        WorkloadKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| format!("unknown workload kind `{s}`"))
    }
}

/// Deterministic synthetic workload with roughly `size` committed
/// instructions (never fewer).
pub fn gen_workload(kind: WorkloadKind, size: usize, seed: u64) -> Result<Program, GenError> {
    if size == 0 {
        return Err(GenError::ZeroSize);
    }
    let salt = kind as u64 + 1;
    let mut g = Gen::new(ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt,
    ));
    g.prelude();
    while g.committed < size {
        match kind {
            WorkloadKind::ComputeBound => g.compute_block(),
            WorkloadKind::PointerChase => g.chase_block(),
            WorkloadKind::StoreLoadMix => g.store_load_block(true),
            WorkloadKind::Mixed => match g.rng.gen_range(0..10) {
                0..=4 => g.compute_block(),
                5..=6 => g.chase_block(),
                _ => {
                    let loaded = g.rng.gen_bool(MIXED_LOADED_STORE);
                    g.store_load_block(loaded)
                }
            },
        }
    }
    g.emit(ArchInstr::halt());
    Ok(g.finish())
}

struct Gen {
    rng: ChaCha8Rng,
    instrs: Vec<ArchInstr>,
    data: BTreeMap<u64, u64>,
    committed: usize,
    next_flag: u64,
    chase_len: u64,
}

impl Gen {
    fn new(rng: ChaCha8Rng) -> Self {
        Self {
            rng,
            instrs: Vec::new(),
            data: BTreeMap::new(),
            committed: 0,
            next_flag: 0,
            chase_len: 0,
        }
    }

    fn emit(&mut self, i: ArchInstr) {
        self.instrs.push(i);
        self.committed += 1;
    }

    fn temp(&mut self) -> ArchReg {
        ArchReg(self.rng.gen_range(FIRST_TEMP..32))
    }

    fn prelude(&mut self) {
        self.emit(ArchInstr::addi(R_NEAR, ArchReg::ZERO, NEAR_BASE as i64));
        self.emit(ArchInstr::addi(R_FAR, ArchReg::ZERO, FLAG_BASE as i64));
        self.emit(ArchInstr::addi(
            R_SCRATCH,
            ArchReg::ZERO,
            SCRATCH_BASE as i64,
        ));
        self.emit(ArchInstr::addi(R_CHASE, ArchReg::ZERO, CHASE_BASE as i64));
        self.emit(ArchInstr::addi(R_GATHER, ArchReg::ZERO, GATHER_BASE as i64));
        for i in 0..INDEX_LEN {
            let v = self.rng.gen_range(1..GATHER_LEN);
            self.data.insert(NEAR_BASE + i, v);
        }
        for i in 0..GATHER_LEN {
            let v = self.rng.gen_range(1..1000);
            self.data.insert(GATHER_BASE + i, v);
        }
    }

    fn alu(&mut self, dst: ArchReg, a: ArchReg, b: ArchReg) {
        let i = match self.rng.gen_range(0..6) {
            0 => ArchInstr::mul(dst, a, b),
            1 => ArchInstr::addi(dst, a, self.rng.gen_range(-8..8)),
            _ => ArchInstr::add(dst, a, b),
        };
        self.emit(i);
    }

    /// Slow forward branch on a far flag word. Mostly taken (and so
    /// predicted correctly by always-taken); occasionally falls through into a
    /// short block that only runs after a misprediction.
    fn guard_branch(&mut self) {
        let flag_addr = FLAG_BASE + self.next_flag;
        self.next_flag += 1;
        let falls_through = self.rng.gen_bool(0.08);
        self.data.insert(flag_addr, u64::from(falls_through));
        let f = self.temp();
        let skip = self.rng.gen_range(1..4);
        self.emit(ArchInstr::load(f, R_FAR, (flag_addr - FLAG_BASE) as i64));
        self.emit(ArchInstr::beq(f, ArchReg::ZERO, skip + 1));
        let before = self.committed;
        for _ in 0..skip {
            let (d, a, b) = (self.temp(), self.temp(), self.temp());
            self.alu(d, a, b);
        }
        if !falls_through {
            self.committed = before;
        }
    }

    fn compute_block(&mut self) {
        if self.rng.gen_bool(0.3) {
            self.guard_branch();
        }
        let mut acc = self.temp();
        let off = self.rng.gen_range(0..INDEX_LEN) as i64;
        self.emit(ArchInstr::load(acc, R_NEAR, off));
        if self.rng.gen_bool(0.3) {
            // Gather: address formed from the loaded index.
            let addr = self.temp();
            let g = self.temp();
            self.emit(ArchInstr::add(addr, R_GATHER, acc));
            self.emit(ArchInstr::load(g, addr, 0));
            acc = g;
        }
        for _ in 0..self.rng.gen_range(4..9) {
            let other = self.temp();
            let dst = self.temp();
            self.alu(dst, acc, other);
            acc = dst;
        }
    }

    fn chase_block(&mut self) {
        let next = CHASE_BASE + (self.chase_len + 1) * 3;
        self.data.insert(CHASE_BASE + self.chase_len * 3, next);
        self.chase_len += 1;
        self.emit(ArchInstr::load(R_CHASE, R_CHASE, 0));
        let t = self.temp();
        self.emit(ArchInstr::add(t, R_CHASE, t));
        // Pointers are never zero: taken, and predicted so.
        self.emit(ArchInstr::bne(R_CHASE, ArchReg::ZERO, 2));
        let (d, a, b) = (self.temp(), self.temp(), self.temp());
        self.alu(d, a, b);
        self.committed -= 1;
    }

    /// Store to a scratch slot and reload it a few instructions later. With
    /// `loaded` the stored value comes straight from a load; otherwise it is
    /// a constant, as in a register spill.
    fn store_load_block(&mut self, loaded: bool) {
        if self.rng.gen_bool(0.5) {
            self.guard_branch();
        }
        let slot = self.rng.gen_range(0..SCRATCH_SLOTS);
        let v = self.temp();
        if loaded {
            let off = self.rng.gen_range(0..INDEX_LEN) as i64;
            self.emit(ArchInstr::load(v, R_NEAR, off));
        } else {
            let k = self.rng.gen_range(1..1000);
            self.emit(ArchInstr::addi(v, ArchReg::ZERO, k));
        }
        self.emit(ArchInstr::store(v, R_SCRATCH, slot));
        for _ in 0..self.rng.gen_range(4..7) {
            let (d, a, b) = (self.temp(), self.temp(), self.temp());
            self.alu(d, a, b);
        }
        let w = self.temp();
        self.emit(ArchInstr::load(w, R_SCRATCH, slot));
        let d = self.temp();
        self.alu(d, w, v);
    }

    fn finish(self) -> Program {
        Program {
            instrs: self.instrs,
            data_init: self.data,
            secret_cells: Default::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{assemble, disassemble, interpret, Opcode};

    #[test]
    fn zero_stride_is_rejected() {
        assert_eq!(gen_spectre_v1(0x3000, 0), Err(GenError::ZeroStride));
    }

    #[test]
    fn gadget_reads_secret_once_and_only_transiently() {
        let secret = 0x3000;
        let p = gen_spectre_v1(secret, 4).unwrap();
        // Exactly one instruction can read the secret: the LOAD through r1.
        let readers: Vec<usize> = p
            .instrs
            .iter()
            .enumerate()
            .filter(|(_, i)| i.opcode == Opcode::Load && i.src1 == ArchReg::r(1))
            .map(|(pc, _)| pc)
            .collect();
        assert_eq!(readers, vec![5]);
        let run = interpret(&p, 100);
        assert!(run.steps.iter().all(|s| s.pc != 5));
        assert!(run.steps.iter().all(|s| s.mem_addr != Some(secret)));
    }

    #[test]
    fn workloads_are_deterministic_and_round_trip() {
        for kind in WorkloadKind::ALL {
            let a = gen_workload(kind, 100, 7).unwrap();
            let b = gen_workload(kind, 100, 7).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, gen_workload(kind, 100, 8).unwrap());
            a.validate().unwrap();
            assert_eq!(assemble(&disassemble(&a)).unwrap(), a);
        }
    }

    #[test]
    fn committed_length_reaches_size() {
        for kind in WorkloadKind::ALL {
            for seed in 0..5 {
                let p = gen_workload(kind, 300, seed).unwrap();
                let run = interpret(&p, 100_000);
                assert!(run.halted);
                assert!(run.retired >= 300, "{kind} seed {seed}: {}", run.retired);
                assert!(run.retired < 340, "{kind} seed {seed}: {}", run.retired);
            }
        }
    }

    #[test]
    fn pointer_chase_loads_are_serialized() {
        let p = gen_workload(WorkloadKind::PointerChase, 50, 1).unwrap();
        let loads: Vec<&ArchInstr> = p
            .instrs
            .iter()
            .filter(|i| i.opcode == Opcode::Load)
            .collect();
        assert!(loads.len() > 5);
        for pair in loads.windows(2) {
            assert_eq!(pair[1].src1, pair[0].dest().unwrap());
        }
    }

    #[test]
    fn kind_names_parse() {
        for kind in WorkloadKind::ALL {
            assert_eq!(kind.name().parse::<WorkloadKind>().unwrap(), kind);
        }
        assert!("store-load-mix".parse::<WorkloadKind>().is_ok());
        assert!("nope".parse::<WorkloadKind>().is_err());
    }
}
