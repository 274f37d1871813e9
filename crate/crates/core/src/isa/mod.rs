//! The tiny RISC-like instruction set driving every experiment.
//!
//! 32 architectural registers of 64-bit words, word-addressed flat memory.
//! Register `r0` reads as zero and writes to it are dropped. A store is a
//! single instruction carrying both an address operand (`src1 + imm`) and a
//! data operand (`src2`).

mod asm;
mod gen;
mod interp;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use asm::{assemble, disassemble, AsmError, AsmErrorKind, PROGRAM_FORMAT_VERSION};
pub use gen::{
    gen_spectre_v1, gen_workload, WorkloadKind, FAR_BASE, NEAR_BASE, PROBE_BASE, SCRATCH_BASE,
    SPECTRE_BOUND_ADDR,
};
pub use interp::{interpret, ArchState, InterpRun, InterpStep};

pub const NUM_ARCH_REGS: usize = 32;

/// Architectural register index, always `< 32`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArchReg(u8);

impl ArchReg {
    pub const ZERO: ArchReg = ArchReg(0);

    pub fn new(index: u8) -> Option<Self> {
        ((index as usize) < NUM_ARCH_REGS).then_some(ArchReg(index))
    }

    /// Panics on an out-of-range index; for generators and tests.
    pub fn r(index: u8) -> Self {
        Self::new(index).unwrap_or_else(|| panic!("register r{index} out of range"))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for ArchReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Opcode {
    Add,
    Addi,
    Mul,
    Load,
    Store,
    Beq,
    Bne,
    Jmp,
    Halt,
}

impl Opcode {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Add => "ADD",
            Opcode::Addi => "ADDI",
            Opcode::Mul => "MUL",
            Opcode::Load => "LOAD",
            Opcode::Store => "STORE",
            Opcode::Beq => "BEQ",
            Opcode::Bne => "BNE",
            Opcode::Jmp => "JMP",
            Opcode::Halt => "HALT",
        }
    }

    pub fn is_conditional_branch(self) -> bool {
        matches!(self, Opcode::Beq | Opcode::Bne)
    }

    pub fn is_memory(self) -> bool {
        matches!(self, Opcode::Load | Opcode::Store)
    }
}

/// One static instruction.
///
/// Unused register fields hold `r0`. For branches and `JMP`, `imm` is the
/// offset from the instruction's own index to the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchInstr {
    pub opcode: Opcode,
    pub dst: Option<ArchReg>,
    pub src1: ArchReg,
    pub src2: ArchReg,
    pub imm: i64,
}

impl ArchInstr {
    fn new(opcode: Opcode, dst: Option<ArchReg>, src1: ArchReg, src2: ArchReg, imm: i64) -> Self {
        Self {
            opcode,
            dst,
            src1,
            src2,
            imm,
        }
    }

    pub fn add(dst: ArchReg, a: ArchReg, b: ArchReg) -> Self {
        Self::new(Opcode::Add, Some(dst), a, b, 0)
    }

    pub fn addi(dst: ArchReg, a: ArchReg, imm: i64) -> Self {
        Self::new(Opcode::Addi, Some(dst), a, ArchReg::ZERO, imm)
    }

    pub fn mul(dst: ArchReg, a: ArchReg, b: ArchReg) -> Self {
        Self::new(Opcode::Mul, Some(dst), a, b, 0)
    }

    /// `dst <- mem[base + offset]`
    pub fn load(dst: ArchReg, base: ArchReg, offset: i64) -> Self {
        Self::new(Opcode::Load, Some(dst), base, ArchReg::ZERO, offset)
    }

    /// `mem[base + offset] <- data`
    pub fn store(data: ArchReg, base: ArchReg, offset: i64) -> Self {
        Self::new(Opcode::Store, None, base, data, offset)
    }

    pub fn beq(a: ArchReg, b: ArchReg, offset: i64) -> Self {
        Self::new(Opcode::Beq, None, a, b, offset)
    }

    pub fn bne(a: ArchReg, b: ArchReg, offset: i64) -> Self {
        Self::new(Opcode::Bne, None, a, b, offset)
    }

    pub fn jmp(offset: i64) -> Self {
        Self::new(Opcode::Jmp, None, ArchReg::ZERO, ArchReg::ZERO, offset)
    }

    pub fn halt() -> Self {
        Self::new(Opcode::Halt, None, ArchReg::ZERO, ArchReg::ZERO, 0)
    }

    /// Destination that actually gets written; writes to `r0` are dropped.
    pub fn dest(&self) -> Option<ArchReg> {
        self.dst.filter(|r| !r.is_zero())
    }

    /// Registers read by this instruction, in operand order.
    pub fn sources(&self) -> &'static [Operand] {
        match self.opcode {
            Opcode::Add | Opcode::Mul | Opcode::Beq | Opcode::Bne | Opcode::Store => {
                &[Operand::Src1, Operand::Src2]
            }
            Opcode::Addi | Opcode::Load => &[Operand::Src1],
            Opcode::Jmp | Opcode::Halt => &[],
        }
    }

    pub fn operand(&self, which: Operand) -> ArchReg {
        match which {
            Operand::Src1 => self.src1,
            Operand::Src2 => self.src2,
        }
    }

    /// Absolute branch/jump target for an instruction at `pc`.
    pub fn target(&self, pc: usize) -> Option<i64> {
        matches!(self.opcode, Opcode::Beq | Opcode::Bne | Opcode::Jmp).then(|| pc as i64 + self.imm)
    }
}

/// Which register field of an instruction an operand comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Src1,
    Src2,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub instrs: Vec<ArchInstr>,
    pub data_init: BTreeMap<u64, u64>,
    pub secret_cells: BTreeSet<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProgramError {
    #[error("instruction {index}: branch target {target} outside 0..{len}")]
    TargetOutOfRange {
        index: usize,
        target: i64,
        len: usize,
    },
}

impl Program {
    pub fn new(instrs: Vec<ArchInstr>) -> Self {
        Self {
            instrs,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        let len = self.instrs.len();
        for (index, instr) in self.instrs.iter().enumerate() {
            if let Some(target) = instr.target(index) {
                if target < 0 || target as usize >= len {
                    return Err(ProgramError::TargetOutOfRange { index, target, len });
                }
            }
        }
        Ok(())
    }

    /// Copy of this program with the given secret cells overwritten.
    pub fn with_secrets(&self, values: &BTreeMap<u64, u64>) -> Program {
        let mut p = self.clone();
        for (&addr, &value) in values {
            p.data_init.insert(addr, value);
        }
        p
    }
}
