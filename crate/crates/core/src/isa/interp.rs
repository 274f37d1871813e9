//! Simple in-order reference interpreter. The pipeline's committed state must
//! always match what this produces for the same program.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Opcode, Program, NUM_ARCH_REGS};

/// Architectural registers plus memory. Memory holds only non-zero words so
/// two states compare equal regardless of how zeros got there.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchState {
    pub regs: [u64; NUM_ARCH_REGS],
    pub mem: BTreeMap<u64, u64>,
}

impl ArchState {
    pub fn from_program(program: &Program) -> Self {
        let mut s = ArchState {
            regs: [0; NUM_ARCH_REGS],
            mem: BTreeMap::new(),
        };
        for (&a, &v) in &program.data_init {
            s.write_mem(a, v);
        }
        s
    }

    pub fn read_mem(&self, addr: u64) -> u64 {
        self.mem.get(&addr).copied().unwrap_or(0)
    }

    pub fn write_mem(&mut self, addr: u64, value: u64) {
        if value == 0 {
            self.mem.remove(&addr);
        } else {
            self.mem.insert(addr, value);
        }
    }
}

/// One retired instruction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterpStep {
    pub pc: usize,
    /// Effective address for loads and stores.
    pub mem_addr: Option<u64>,
    /// Value written to the destination register (loads: the loaded word).
    pub result: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterpRun {
    pub state: ArchState,
    /// Retired instruction count, including the final `HALT` when one ran.
    pub retired: u64,
    pub steps: Vec<InterpStep>,
    /// False when `max_steps` ran out first.
    pub halted: bool,
}

/// Executes `program` in order for at most `max_steps` instructions.
/// Running off the end of the instruction list halts without retiring
/// anything further.
pub fn interpret(program: &Program, max_steps: u64) -> InterpRun {
    let mut state = ArchState::from_program(program);
    let mut steps = Vec::new();
    let mut pc = 0usize;
    let mut halted = false;
    while (steps.len() as u64) < max_steps {
        let Some(instr) = program.instrs.get(pc) else {
            halted = true;
            break;
        };
        let a = state.regs[instr.src1.index()];
        let b = state.regs[instr.src2.index()];
        let mut next = pc + 1;
        let mut step = InterpStep {
            pc,
            mem_addr: None,
            result: None,
        };
        match instr.opcode {
            Opcode::Add => step.result = Some(a.wrapping_add(b)),
            Opcode::Addi => step.result = Some(a.wrapping_add(instr.imm as u64)),
            Opcode::Mul => step.result = Some(a.wrapping_mul(b)),
            Opcode::Load => {
                let addr = a.wrapping_add(instr.imm as u64);
                step.mem_addr = Some(addr);
                step.result = Some(state.read_mem(addr));
            }
            Opcode::Store => {
                let addr = a.wrapping_add(instr.imm as u64);
                step.mem_addr = Some(addr);
                state.write_mem(addr, b);
            }
            Opcode::Beq | Opcode::Bne => {
                let taken = (a == b) == (instr.opcode == Opcode::Beq);
                if taken {
                    next = (pc as i64 + instr.imm) as usize;
                }
            }
            Opcode::Jmp => next = (pc as i64 + instr.imm) as usize,
            Opcode::Halt => {}
        }
        if let (Some(d), Some(v)) = (instr.dest(), step.result) {
            state.regs[d.index()] = v;
        }
        steps.push(step);
        if instr.opcode == Opcode::Halt {
            halted = true;
            break;
        }
        pc = next;
    }
    let retired = steps.len() as u64;
    InterpRun {
        state,
        retired,
        steps,
        halted,
    }
}
