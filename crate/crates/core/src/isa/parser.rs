//! Text format parser.
//!
//! One instruction per line, `[label:] mnemonic [op1[, op2]]`, `#` starts a
//! comment. Mnemonics, register names and size prefixes are matched case
//! insensitively; labels are case sensitive. Jump and call targets are
//! resolved to instruction indices in a second pass.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::{ArithOp, Cc, Instruction, MemRef, Mnemonic, Operand, Program, Reg, RegSlice};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnknownMnemonic(String),
    OperandCount {
        mnemonic: String,
        expected: usize,
        got: usize,
    },
    BadOperand(String),
    BadLabel(String),
    DuplicateLabel(String),
    UnresolvedLabel(String),
    SizeMismatch {
        dst: u32,
        src: u32,
    },
    ImmediateTooWide {
        value: i64,
        size: u32,
    },
    BadCombination(String),
    EmptyProgram,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::UnknownMnemonic(m) => write!(f, "unknown mnemonic `{m}`"),
            ParseErrorKind::OperandCount {
                mnemonic,
                expected,
                got,
            } => write!(f, "`{mnemonic}` takes {expected} operand(s), got {got}"),
            ParseErrorKind::BadOperand(s) => write!(f, "cannot parse operand `{s}`"),
            ParseErrorKind::BadLabel(s) => write!(f, "bad label `{s}`"),
            ParseErrorKind::DuplicateLabel(s) => write!(f, "label `{s}` defined twice"),
            ParseErrorKind::UnresolvedLabel(s) => write!(f, "undefined label `{s}`"),
            ParseErrorKind::SizeMismatch { dst, src } => {
                write!(f, "operand sizes differ: {dst} vs {src} bytes")
            }
            ParseErrorKind::ImmediateTooWide { value, size } => {
                write!(f, "immediate {value:#x} does not fit in {size} byte(s)")
            }
            ParseErrorKind::BadCombination(s) => write!(f, "{s}"),
            ParseErrorKind::EmptyProgram => write!(f, "program has no instructions"),
        }
    }
}

/// Look up a register alias. Returns the full register and the bit range
/// the alias names.
pub fn reg_slice(name: &str) -> Option<RegSlice> {
    let lower = name.to_ascii_lowercase();
    let (reg, high) = match lower.as_str() {
        "rax" => (Reg::Rax, 63),
        "rbx" => (Reg::Rbx, 63),
        "rcx" => (Reg::Rcx, 63),
        "rdx" => (Reg::Rdx, 63),
        "rsi" => (Reg::Rsi, 63),
        "rdi" => (Reg::Rdi, 63),
        "rbp" => (Reg::Rbp, 63),
        "rsp" => (Reg::Rsp, 63),
        "r8" => (Reg::R8, 63),
        "r9" => (Reg::R9, 63),
        "r10" => (Reg::R10, 63),
        "r11" => (Reg::R11, 63),
        "r12" => (Reg::R12, 63),
        "r13" => (Reg::R13, 63),
        "r14" => (Reg::R14, 63),
        "r15" => (Reg::R15, 63),
        "eax" => (Reg::Rax, 31),
        "ebx" => (Reg::Rbx, 31),
        "ecx" => (Reg::Rcx, 31),
        "edx" => (Reg::Rdx, 31),
        "esi" => (Reg::Rsi, 31),
        "edi" => (Reg::Rdi, 31),
        "ebp" => (Reg::Rbp, 31),
        "esp" => (Reg::Rsp, 31),
        "r8d" => (Reg::R8, 31),
        "r9d" => (Reg::R9, 31),
        "r10d" => (Reg::R10, 31),
        "r11d" => (Reg::R11, 31),
        "r12d" => (Reg::R12, 31),
        "r13d" => (Reg::R13, 31),
        "r14d" => (Reg::R14, 31),
        "r15d" => (Reg::R15, 31),
        "ax" => (Reg::Rax, 15),
        "bx" => (Reg::Rbx, 15),
        "cx" => (Reg::Rcx, 15),
        "dx" => (Reg::Rdx, 15),
        "si" => (Reg::Rsi, 15),
        "di" => (Reg::Rdi, 15),
        "bp" => (Reg::Rbp, 15),
        "sp" => (Reg::Rsp, 15),
        "r8w" => (Reg::R8, 15),
        "r9w" => (Reg::R9, 15),
        "r10w" => (Reg::R10, 15),
        "r11w" => (Reg::R11, 15),
        "r12w" => (Reg::R12, 15),
        "r13w" => (Reg::R13, 15),
        "r14w" => (Reg::R14, 15),
        "r15w" => (Reg::R15, 15),
        "al" => (Reg::Rax, 7),
        "bl" => (Reg::Rbx, 7),
        "cl" => (Reg::Rcx, 7),
        "dl" => (Reg::Rdx, 7),
        "sil" => (Reg::Rsi, 7),
        "dil" => (Reg::Rdi, 7),
        "bpl" => (Reg::Rbp, 7),
        "spl" => (Reg::Rsp, 7),
        "r8b" => (Reg::R8, 7),
        "r9b" => (Reg::R9, 7),
        "r10b" => (Reg::R10, 7),
        "r11b" => (Reg::R11, 7),
        "r12b" => (Reg::R12, 7),
        "r13b" => (Reg::R13, 7),
        "r14b" => (Reg::R14, 7),
        "r15b" => (Reg::R15, 7),
        _ => return None,
    };
    Some(RegSlice { reg, high, low: 0 })
}

fn mnemonic(token: &str) -> Option<Mnemonic> {
    let lower = token.to_ascii_lowercase();
    Some(match lower.as_str() {
        "mov" => Mnemonic::Mov,
        "movsx" => Mnemonic::Movsx,
        "movzx" => Mnemonic::Movzx,
        "push" => Mnemonic::Push,
        "pop" => Mnemonic::Pop,
        "add" => Mnemonic::Arith(ArithOp::Add),
        "sub" => Mnemonic::Arith(ArithOp::Sub),
        "and" => Mnemonic::Arith(ArithOp::And),
        "or" => Mnemonic::Arith(ArithOp::Or),
        "xor" => Mnemonic::Arith(ArithOp::Xor),
        "cmp" => Mnemonic::Cmp,
        "test" => Mnemonic::Test,
        "jmp" => Mnemonic::Jmp,
        "je" => Mnemonic::Jcc(Cc::E),
        "jne" => Mnemonic::Jcc(Cc::Ne),
        "jl" => Mnemonic::Jcc(Cc::L),
        "jle" => Mnemonic::Jcc(Cc::Le),
        "jg" => Mnemonic::Jcc(Cc::G),
        "jge" => Mnemonic::Jcc(Cc::Ge),
        "jb" => Mnemonic::Jcc(Cc::B),
        "jbe" => Mnemonic::Jcc(Cc::Be),
        "ja" => Mnemonic::Jcc(Cc::A),
        "jae" => Mnemonic::Jcc(Cc::Ae),
        "call" => Mnemonic::Call,
        "ret" => Mnemonic::Ret,
        "cbw" => Mnemonic::Cbw,
        "cwde" => Mnemonic::Cwde,
        "cdqe" => Mnemonic::Cdqe,
        "read_i8" => Mnemonic::Read {
            signed: true,
            width: 8,
        },
        "read_i16" => Mnemonic::Read {
            signed: true,
            width: 16,
        },
        "read_i32" => Mnemonic::Read {
            signed: true,
            width: 32,
        },
        "read_i64" => Mnemonic::Read {
            signed: true,
            width: 64,
        },
        "read_u8" => Mnemonic::Read {
            signed: false,
            width: 8,
        },
        "read_u16" => Mnemonic::Read {
            signed: false,
            width: 16,
        },
        "read_u32" => Mnemonic::Read {
            signed: false,
            width: 32,
        },
        "read_u64" => Mnemonic::Read {
            signed: false,
            width: 64,
        },
        "print" => Mnemonic::Print,
        "exit" => Mnemonic::Exit,
        _ => return None,
    })
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && !s.chars().next().unwrap().is_ascii_digit()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_int(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let magnitude: i128 = if let Some(hex) = body
        .strip_prefix("0x")
        .or_else(|| body.strip_prefix("0X"))
    {
        i128::from_str_radix(hex, 16).ok()?
    } else {
        body.parse().ok()?
    };
    let value = if neg { -magnitude } else { magnitude };
    if value < i64::MIN as i128 || value > u64::MAX as i128 {
        return None;
    }
    // values above i64::MAX keep their bit pattern
    Some(value as u64 as i64)
}

fn mem_size(token: &str) -> Option<u32> {
    match token.to_ascii_lowercase().as_str() {
        "byte" => Some(1),
        "word" => Some(2),
        "dword" => Some(4),
        "qword" => Some(8),
        _ => None,
    }
}

enum RawOperand {
    Reg(RegSlice),
    Mem(MemRef),
    Imm(i64),
    LabelRef(String),
}

fn parse_operand(s: &str) -> Option<RawOperand> {
    let s = s.trim();
    if let Some(slice) = reg_slice(s) {
        return Some(RawOperand::Reg(slice));
    }
    if let Some(value) = parse_int(s) {
        return Some(RawOperand::Imm(value));
    }
    // SIZE PTR [reg] or SIZE PTR [reg+disp] / [reg-disp]
    let mut words = s.split_whitespace();
    if let (Some(size_tok), Some(ptr_tok)) = (words.next(), words.next()) {
        if let Some(size) = mem_size(size_tok) {
            if ptr_tok.eq_ignore_ascii_case("ptr") {
                let rest: String = words.collect::<Vec<_>>().join("");
                let inner = rest.strip_prefix('[')?.strip_suffix(']')?;
                let split = inner.find(['+', '-']);
                let (reg_part, disp) = match split {
                    Some(pos) => {
                        let (r, d) = inner.split_at(pos);
                        (r, parse_int(d)?)
                    }
                    None => (inner, 0),
                };
                let base = reg_slice(reg_part)?;
                if !base.is_full() {
                    return None;
                }
                return Some(RawOperand::Mem(MemRef {
                    base: base.reg,
                    disp,
                    size,
                }));
            }
        }
    }
    if is_ident(s) {
        return Some(RawOperand::LabelRef(s.to_string()));
    }
    None
}

fn imm_fits(value: i64, size: u32) -> bool {
    if size == 8 {
        return true;
    }
    let bits = size * 8;
    let unsigned_max = (1i64 << bits) - 1;
    let signed_min = -(1i64 << (bits - 1));
    value >= signed_min && value <= unsigned_max
}

struct PendingInstruction {
    mnemonic: Mnemonic,
    mnemonic_text: String,
    operand_text: Vec<String>,
    label: Option<String>,
    line: usize,
    text: String,
}

pub fn parse_program(source: &str) -> Result<Program, ParseError> {
    let mut pending: Vec<PendingInstruction> = Vec::new();
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    let mut carried_label: Option<(String, usize)> = None;

    for (idx, raw_line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let err = |kind| ParseError {
            line: line_no,
            kind,
        };
        let mut line = raw_line;
        if let Some(pos) = line.find('#') {
            line = &line[..pos];
        }
        let mut line = line.trim();
        if line.is_empty() {
            continue;
        }

        let mut label_here: Option<String> = carried_label.take().map(|(l, _)| l);
        while let Some(pos) = line.find(':') {
            let candidate = line[..pos].trim();
            // a colon inside an operand never appears in this grammar, so a
            // leading ident followed by ':' is always a label
            if !is_ident(candidate) {
                return Err(err(ParseErrorKind::BadLabel(candidate.to_string())));
            }
            if labels
                .insert(candidate.to_string(), pending.len())
                .is_some()
            {
                return Err(err(ParseErrorKind::DuplicateLabel(candidate.to_string())));
            }
            if label_here.is_none() {
                label_here = Some(candidate.to_string());
            }
            line = line[pos + 1..].trim();
        }
        if line.is_empty() {
            if let Some(l) = label_here {
                carried_label = Some((l, line_no));
            }
            continue;
        }

        let (mn_tok, rest) = match line.find(char::is_whitespace) {
            Some(pos) => (&line[..pos], line[pos..].trim()),
            None => (line, ""),
        };
        let mn = mnemonic(mn_tok)
            .ok_or_else(|| err(ParseErrorKind::UnknownMnemonic(mn_tok.to_string())))?;

        let mut operand_text = Vec::new();
        if !rest.is_empty() {
            for part in rest.split(',') {
                operand_text.push(part.trim().to_string());
            }
        }

        pending.push(PendingInstruction {
            mnemonic: mn,
            mnemonic_text: mn_tok.to_ascii_lowercase(),
            operand_text,
            label: label_here,
            line: line_no,
            text: line.to_string(),
        });
    }

    if let Some((label, line)) = carried_label {
        // a label at the very end has nothing to attach to
        return Err(ParseError {
            line,
            kind: ParseErrorKind::UnresolvedLabel(label),
        });
    }
    if pending.is_empty() {
        return Err(ParseError {
            line: 0,
            kind: ParseErrorKind::EmptyProgram,
        });
    }

    let mut instructions = Vec::with_capacity(pending.len());
    for p in pending {
        instructions.push(finish_instruction(p, &labels)?);
    }
    Ok(Program { instructions })
}

fn finish_instruction(
    p: PendingInstruction,
    labels: &BTreeMap<String, usize>,
) -> Result<Instruction, ParseError> {
    let err = |kind| ParseError { line: p.line, kind };
    let count_err = |expected: usize, got: usize| ParseError {
        line: p.line,
        kind: ParseErrorKind::OperandCount {
            mnemonic: p.mnemonic_text.clone(),
            expected,
            got,
        },
    };

    let expected = match p.mnemonic {
        Mnemonic::Mov
        | Mnemonic::Movsx
        | Mnemonic::Movzx
        | Mnemonic::Arith(_)
        | Mnemonic::Cmp
        | Mnemonic::Test => 2,
        Mnemonic::Push
        | Mnemonic::Pop
        | Mnemonic::Jmp
        | Mnemonic::Jcc(_)
        | Mnemonic::Call
        | Mnemonic::Read { .. }
        | Mnemonic::Print => 1,
        Mnemonic::Ret | Mnemonic::Cbw | Mnemonic::Cwde | Mnemonic::Cdqe | Mnemonic::Exit => 0,
    };
    if p.operand_text.len() != expected {
        return Err(count_err(expected, p.operand_text.len()));
    }

    let mut operands = Vec::with_capacity(p.operand_text.len());
    for part in &p.operand_text {
        let raw = parse_operand(part).ok_or_else(|| ParseError {
            line: p.line,
            kind: ParseErrorKind::BadOperand(part.clone()),
        })?;
        let op = match raw {
            RawOperand::Reg(s) => Operand::Reg(s),
            RawOperand::Mem(m) => Operand::Mem(m),
            RawOperand::Imm(v) => Operand::Imm(v),
            RawOperand::LabelRef(name) => match p.mnemonic {
                Mnemonic::Jmp | Mnemonic::Jcc(_) | Mnemonic::Call => {
                    let index = *labels.get(&name).ok_or_else(|| ParseError {
                        line: p.line,
                        kind: ParseErrorKind::UnresolvedLabel(name.clone()),
                    })?;
                    Operand::Target { name, index }
                }
                _ => {
                    return Err(ParseError {
                        line: p.line,
                        kind: ParseErrorKind::BadOperand(name),
                    })
                }
            },
        };
        operands.push(op);
    }

    check_signature(&p.mnemonic, &p.mnemonic_text, &operands, p.line)?;
    let _ = err;
    Ok(Instruction {
        mnemonic: p.mnemonic,
        operands,
        label: p.label,
        line: p.line,
        text: p.text,
    })
}

fn check_signature(
    mn: &Mnemonic,
    mn_text: &str,
    ops: &[Operand],
    line: usize,
) -> Result<(), ParseError> {
    let err = |kind| ParseError { line, kind };
    let combo = |msg: &str| {
        err(ParseErrorKind::BadCombination(format!(
            "`{mn_text}` does not accept these operands: {msg}"
        )))
    };

    match mn {
        Mnemonic::Mov | Mnemonic::Arith(_) | Mnemonic::Cmp | Mnemonic::Test => {
            match (&ops[0], &ops[1]) {
                (Operand::Reg(d), Operand::Reg(s)) => {
                    if d.size_bytes() != s.size_bytes() {
                        return Err(err(ParseErrorKind::SizeMismatch {
                            dst: d.size_bytes(),
                            src: s.size_bytes(),
                        }));
                    }
                }
                (Operand::Reg(d), Operand::Mem(m)) => {
                    if d.size_bytes() != m.size {
                        return Err(err(ParseErrorKind::SizeMismatch {
                            dst: d.size_bytes(),
                            src: m.size,
                        }));
                    }
                }
                (Operand::Mem(m), Operand::Reg(s)) => {
                    if m.size != s.size_bytes() {
                        return Err(err(ParseErrorKind::SizeMismatch {
                            dst: m.size,
                            src: s.size_bytes(),
                        }));
                    }
                }
                (Operand::Reg(d), Operand::Imm(v)) => {
                    if !imm_fits(*v, d.size_bytes()) {
                        return Err(err(ParseErrorKind::ImmediateTooWide {
                            value: *v,
                            size: d.size_bytes(),
                        }));
                    }
                }
                (Operand::Mem(m), Operand::Imm(v)) => {
                    if !imm_fits(*v, m.size) {
                        return Err(err(ParseErrorKind::ImmediateTooWide {
                            value: *v,
                            size: m.size,
                        }));
                    }
                }
                (Operand::Mem(_), Operand::Mem(_)) => {
                    return Err(combo("memory to memory"));
                }
                _ => return Err(combo("unsupported pair")),
            }
        }
        Mnemonic::Movsx | Mnemonic::Movzx => match (&ops[0], &ops[1]) {
            (Operand::Reg(d), Operand::Reg(s)) => {
                if d.size_bytes() <= s.size_bytes() {
                    return Err(combo("destination must be wider than source"));
                }
            }
            (Operand::Reg(d), Operand::Mem(m)) => {
                if d.size_bytes() <= m.size {
                    return Err(combo("destination must be wider than source"));
                }
            }
            _ => return Err(combo("needs a register destination")),
        },
        Mnemonic::Push => match &ops[0] {
            Operand::Reg(_) | Operand::Mem(_) | Operand::Imm(_) => {}
            _ => return Err(combo("needs a register, memory or immediate operand")),
        },
        Mnemonic::Pop => match &ops[0] {
            Operand::Reg(_) => {}
            _ => return Err(combo("needs a register operand")),
        },
        Mnemonic::Jmp | Mnemonic::Jcc(_) | Mnemonic::Call => match &ops[0] {
            Operand::Target { .. } => {}
            _ => return Err(combo("needs a label")),
        },
        Mnemonic::Read { width, .. } => match &ops[0] {
            Operand::Reg(s) if s.width_bits() == *width => {}
            Operand::Mem(m) if m.size * 8 == *width => {}
            Operand::Reg(s) => {
                return Err(err(ParseErrorKind::SizeMismatch {
                    dst: s.size_bytes(),
                    src: width / 8,
                }))
            }
            Operand::Mem(m) => {
                return Err(err(ParseErrorKind::SizeMismatch {
                    dst: m.size,
                    src: width / 8,
                }))
            }
            _ => return Err(combo("needs a register or memory destination")),
        },
        Mnemonic::Print => match &ops[0] {
            Operand::Reg(_) | Operand::Mem(_) | Operand::Imm(_) => {}
            _ => return Err(combo("needs a register, memory or immediate operand")),
        },
        Mnemonic::Ret | Mnemonic::Cbw | Mnemonic::Cwde | Mnemonic::Cdqe | Mnemonic::Exit => {}
    }
    Ok(())
}
