//! Text assembly and the line-oriented program serialization.
//!
//! Grammar, one item per line (`;` or `#` starts a comment):
//!
//! ```text
//! label:                     ; may share a line with an instruction
//! .data <addr> <value>       ; initial memory word
//! .secret <addr>             ; mark a cell as secret
//! ADD   rd, rs1, rs2
//! ADDI  rd, rs1, imm
//! MUL   rd, rs1, rs2
//! LOAD  rd, imm(rs1)
//! STORE rs2, imm(rs1)        ; mem[rs1 + imm] <- rs2
//! BEQ   rs1, rs2, target     ; target: label, @index (absolute) or +n/-n (relative)
//! BNE   rs1, rs2, target
//! JMP   target
//! HALT
//! ```
//!
//! Numbers are decimal or `0x` hex, optionally negative. [`disassemble`]
//! emits a versioned header, sorted `.data`/`.secret` directives and
//! synthetic `L<index>` labels, so its output is a stable, diffable encoding
//! that [`assemble`] reads back to an identical [`Program`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::{ArchInstr, ArchReg, Opcode, Program};

pub const PROGRAM_FORMAT_VERSION: u32 = 1;
const HEADER_PREFIX: &str = "; specsim program v";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub kind: AsmErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AsmErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("register `{0}` out of range (r0..r31)")]
    RegisterOutOfRange(String),
    #[error("branch target {0} outside the program")]
    TargetOutOfRange(i64),
    #[error("unsupported program format version {0}")]
    UnsupportedVersion(u32),
}

enum Target {
    Label(String),
    Absolute(i64),
    Relative(i64),
}

struct Pending {
    line: usize,
    instr: ArchInstr,
    target: Option<Target>,
}

pub fn assemble(text: &str) -> Result<Program, AsmError> {
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    let mut pending: Vec<Pending> = Vec::new();
    let mut data_init = BTreeMap::new();
    let mut secret_cells = BTreeSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if let Some(v) = raw.trim().strip_prefix(HEADER_PREFIX) {
            let version: u32 = v
                .trim()
                .parse()
                .map_err(|_| syntax(line, "bad version header"))?;
            if version != PROGRAM_FORMAT_VERSION {
                return Err(AsmError {
                    line,
                    kind: AsmErrorKind::UnsupportedVersion(version),
                });
            }
            continue;
        }
        let mut rest = strip_comment(raw).trim();
        if rest.is_empty() {
            continue;
        }
        // Leading labels.
        while let Some(colon) = rest.find(':') {
            let name = rest[..colon].trim();
            if !is_ident(name) {
                break;
            }
            if labels.insert(name.to_string(), pending.len()).is_some() {
                return Err(AsmError {
                    line,
                    kind: AsmErrorKind::DuplicateLabel(name.into()),
                });
            }
            rest = rest[colon + 1..].trim();
        }
        if rest.is_empty() {
            continue;
        }

        let (head, args) = match rest.find(char::is_whitespace) {
            Some(i) => (&rest[..i], rest[i..].trim()),
            None => (rest, ""),
        };
        match head.to_ascii_lowercase().as_str() {
            ".data" => {
                let parts: Vec<&str> = args.split_whitespace().collect();
                if parts.len() != 2 {
                    return Err(syntax(line, ".data expects <addr> <value>"));
                }
                let addr = parse_word(parts[0]).ok_or_else(|| syntax(line, "bad address"))?;
                let value = parse_word(parts[1]).ok_or_else(|| syntax(line, "bad value"))?;
                data_init.insert(addr, value);
            }
            ".secret" => {
                let addr =
                    parse_word(args).ok_or_else(|| syntax(line, ".secret expects <addr>"))?;
                secret_cells.insert(addr);
            }
            _ => pending.push(parse_instr(line, head, args)?),
        }
    }

    let len = pending.len();
    let mut instrs = Vec::with_capacity(len);
    for (pc, p) in pending.into_iter().enumerate() {
        let mut instr = p.instr;
        if let Some(target) = p.target {
            let abs = match target {
                Target::Label(name) => *labels.get(&name).ok_or(AsmError {
                    line: p.line,
                    kind: AsmErrorKind::UndefinedLabel(name.clone()),
                })? as i64,
                Target::Absolute(a) => a,
                Target::Relative(r) => pc as i64 + r,
            };
            if abs < 0 || abs as usize >= len {
                return Err(AsmError {
                    line: p.line,
                    kind: AsmErrorKind::TargetOutOfRange(abs),
                });
            }
            instr.imm = abs - pc as i64;
        }
        instrs.push(instr);
    }
    Ok(Program {
        instrs,
        data_init,
        secret_cells,
    })
}

pub fn disassemble(program: &Program) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER_PREFIX}{PROGRAM_FORMAT_VERSION}");
    for (addr, value) in &program.data_init {
        let _ = writeln!(out, ".data {addr:#x} {value:#x}");
    }
    for addr in &program.secret_cells {
        let _ = writeln!(out, ".secret {addr:#x}");
    }
    let targets: BTreeSet<i64> = program
        .instrs
        .iter()
        .enumerate()
        .filter_map(|(pc, i)| i.target(pc))
        .collect();
    for (pc, instr) in program.instrs.iter().enumerate() {
        if targets.contains(&(pc as i64)) {
            let _ = writeln!(out, "L{pc}:");
        }
        let _ = writeln!(out, "    {}", format_instr(instr, pc));
    }
    out
}

fn format_instr(i: &ArchInstr, pc: usize) -> String {
    let m = i.opcode.mnemonic();
    let dst = i.dst.unwrap_or(ArchReg::ZERO);
    match i.opcode {
        Opcode::Add | Opcode::Mul => format!("{m} {dst}, {}, {}", i.src1, i.src2),
        Opcode::Addi => format!("{m} {dst}, {}, {}", i.src1, i.imm),
        Opcode::Load => format!("{m} {dst}, {}({})", i.imm, i.src1),
        Opcode::Store => format!("{m} {}, {}({})", i.src2, i.imm, i.src1),
        Opcode::Beq | Opcode::Bne => {
            format!("{m} {}, {}, {}", i.src1, i.src2, label_for(i, pc))
        }
        Opcode::Jmp => format!("{m} {}", label_for(i, pc)),
        Opcode::Halt => m.to_string(),
    }
}

fn label_for(i: &ArchInstr, pc: usize) -> String {
    match i.target(pc) {
        Some(t) if t >= 0 => format!("L{t}"),
        Some(t) => format!("@{t}"),
        None => unreachable!("label requested for non-branch"),
    }
}

fn parse_instr(line: usize, head: &str, args: &str) -> Result<Pending, AsmError> {
    let ops: Vec<&str> = if args.is_empty() {
        Vec::new()
    } else {
        args.split(',').map(str::trim).collect()
    };
    let want = |n: usize| -> Result<(), AsmError> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(syntax(
                line,
                &format!("{head} expects {n} operand(s), found {}", ops.len()),
            ))
        }
    };
    let reg = |s: &str| parse_reg(line, s);
    let (instr, target) = match head.to_ascii_uppercase().as_str() {
        "ADD" => {
            want(3)?;
            (
                ArchInstr::add(reg(ops[0])?, reg(ops[1])?, reg(ops[2])?),
                None,
            )
        }
        "MUL" => {
            want(3)?;
            (
                ArchInstr::mul(reg(ops[0])?, reg(ops[1])?, reg(ops[2])?),
                None,
            )
        }
        "ADDI" => {
            want(3)?;
            let imm = parse_imm(ops[2]).ok_or_else(|| syntax(line, "bad immediate"))?;
            (ArchInstr::addi(reg(ops[0])?, reg(ops[1])?, imm), None)
        }
        "LOAD" => {
            want(2)?;
            let (off, base) = parse_mem(line, ops[1])?;
            (ArchInstr::load(reg(ops[0])?, base, off), None)
        }
        "STORE" => {
            want(2)?;
            let (off, base) = parse_mem(line, ops[1])?;
            (ArchInstr::store(reg(ops[0])?, base, off), None)
        }
        "BEQ" | "BNE" => {
            want(3)?;
            let (a, b) = (reg(ops[0])?, reg(ops[1])?);
            let i = if head.eq_ignore_ascii_case("BEQ") {
                ArchInstr::beq(a, b, 0)
            } else {
                ArchInstr::bne(a, b, 0)
            };
            (i, Some(parse_target(line, ops[2])?))
        }
        "JMP" => {
            want(1)?;
            (ArchInstr::jmp(0), Some(parse_target(line, ops[0])?))
        }
        "HALT" => {
            want(0)?;
            (ArchInstr::halt(), None)
        }
        other => return Err(syntax(line, &format!("unknown mnemonic `{other}`"))),
    };
    Ok(Pending {
        line,
        instr,
        target,
    })
}

fn parse_target(line: usize, s: &str) -> Result<Target, AsmError> {
    if let Some(abs) = s.strip_prefix('@') {
        return parse_imm(abs)
            .map(Target::Absolute)
            .ok_or_else(|| syntax(line, "bad absolute target"));
    }
    if s.starts_with('+') || s.starts_with('-') {
        let v = parse_imm(s.trim_start_matches('+'))
            .ok_or_else(|| syntax(line, "bad relative target"))?;
        return Ok(Target::Relative(v));
    }
    if is_ident(s) {
        Ok(Target::Label(s.to_string()))
    } else {
        Err(syntax(line, &format!("bad branch target `{s}`")))
    }
}

fn parse_mem(line: usize, s: &str) -> Result<(i64, ArchReg), AsmError> {
    let open = s
        .find('(')
        .ok_or_else(|| syntax(line, "expected imm(reg)"))?;
    let close = s
        .rfind(')')
        .filter(|&c| c > open)
        .ok_or_else(|| syntax(line, "expected imm(reg)"))?;
    let off_text = s[..open].trim();
    let off = if off_text.is_empty() {
        0
    } else {
        parse_imm(off_text).ok_or_else(|| syntax(line, "bad offset"))?
    };
    Ok((off, parse_reg(line, s[open + 1..close].trim())?))
}

fn parse_reg(line: usize, s: &str) -> Result<ArchReg, AsmError> {
    let digits = s
        .strip_prefix('r')
        .or_else(|| s.strip_prefix('R'))
        .ok_or_else(|| syntax(line, &format!("expected register, found `{s}`")))?;
    let n: u64 = digits
        .parse()
        .map_err(|_| syntax(line, &format!("expected register, found `{s}`")))?;
    u8::try_from(n).ok().and_then(ArchReg::new).ok_or(AsmError {
        line,
        kind: AsmErrorKind::RegisterOutOfRange(s.to_string()),
    })
}

fn parse_imm(s: &str) -> Option<i64> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let mag = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()?
    } else {
        body.parse::<u64>().ok()?
    };
    let v = mag as i64;
    Some(if neg { v.wrapping_neg() } else { v })
}

fn parse_word(s: &str) -> Option<u64> {
    parse_imm(s).map(|v| v as u64)
}

fn strip_comment(line: &str) -> &str {
    let cut = line.find([';', '#']).unwrap_or(line.len());
    &line[..cut]
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn syntax(line: usize, msg: &str) -> AsmError {
    AsmError {
        line,
        kind: AsmErrorKind::Syntax(msg.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn addi_encodes_immediate() {
        let p = assemble("ADDI r1, r0, 5").unwrap();
        assert_eq!(
            p.instrs,
            vec![ArchInstr::addi(ArchReg::r(1), ArchReg::ZERO, 5)]
        );
    }

    #[test]
    fn undefined_label_is_reported_with_line() {
        let err = assemble("ADDI r1, r0, 1\nBEQ r1, r2, L\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert_eq!(err.kind, AsmErrorKind::UndefinedLabel("L".into()));
    }

    #[test]
    fn register_out_of_range() {
        let err = assemble("ADD r32, r1, r2").unwrap_err();
        assert!(matches!(err.kind, AsmErrorKind::RegisterOutOfRange(_)));
        let err = assemble("ADD r1, r1, x2").unwrap_err();
        assert!(matches!(err.kind, AsmErrorKind::Syntax(_)));
    }

    #[test]
    fn three_instruction_rename_example_shape() {
        // Writes r3, then r6 from r3, then loads r7 through r6.
        let p = assemble("ADD r3, r1, r2\nADDI r6, r3, 4\nLOAD r7, 0(r6)\n").unwrap();
        let dsts: Vec<_> = p.instrs.iter().map(|i| i.dest().unwrap().index()).collect();
        assert_eq!(dsts, vec![3, 6, 7]);
        assert_eq!(p.instrs[1].src1, ArchReg::r(3));
        assert_eq!(p.instrs[2].src1, ArchReg::r(6));
    }

    #[test]
    fn labels_directives_and_comments() {
        let text = "
            .data 0x10 -1     ; all ones
            .secret 16
            top: ADDI r1, r0, 1
                 BNE r1, r0, done   # forward
                 JMP top
            done:
                 STORE r1, -2(r3)
                 HALT
        ";
        let p = assemble(text).unwrap();
        assert_eq!(p.data_init[&0x10], u64::MAX);
        assert!(p.secret_cells.contains(&16));
        assert_eq!(p.instrs[1].target(1), Some(3));
        assert_eq!(p.instrs[2].target(2), Some(0));
        assert_eq!(
            p.instrs[3],
            ArchInstr::store(ArchReg::r(1), ArchReg::r(3), -2)
        );
    }

    #[test]
    fn relative_and_absolute_targets() {
        let p = assemble("BEQ r0, r0, +2\nHALT\nBNE r1, r0, @0").unwrap();
        assert_eq!(p.instrs[0].target(0), Some(2));
        assert_eq!(p.instrs[2].target(2), Some(0));
        let err = assemble("JMP +5\nHALT").unwrap_err();
        assert_eq!(err.kind, AsmErrorKind::TargetOutOfRange(5));
    }

    #[test]
    fn disassembly_round_trips() {
        let text = ".data 1 2\n.secret 7\nL: ADDI r1, r0, -3\nMUL r2, r1, r1\nBEQ r2, r1, L\nLOAD r4, 8(r2)\nSTORE r4, 0(r1)\nHALT\n";
        let p = assemble(text).unwrap();
        let d = disassemble(&p);
        assert!(d.starts_with("; specsim program v1"));
        assert_eq!(assemble(&d).unwrap(), p);
    }

    #[test]
    fn rejects_future_versions() {
        let err = assemble("; specsim program v9\nHALT").unwrap_err();
        assert_eq!(err.kind, AsmErrorKind::UnsupportedVersion(9));
    }
}
