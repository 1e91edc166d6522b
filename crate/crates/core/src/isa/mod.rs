//! The analyzed instruction set: a small x86-64-flavored assembly dialect.
//!
//! Sixteen 64-bit registers with the usual 32/16/low-8 aliases (no high-byte
//! registers), Intel-syntax memory operands with an explicit size prefix,
//! flag-setting arithmetic, conditional jumps, call/ret, the three
//! sign-extension conversions, and a few pseudo-instructions standing in
//! for libc input and output calls.

mod machine;
mod parser;

pub use machine::{
    HaltKind, Machine, StepEvent, TrapInfo, TrapKind, GLOBAL_BASE, GLOBAL_BYTES, STACK_BYTES,
    STACK_TOP,
};
pub use parser::{parse_program, reg_slice, ParseError, ParseErrorKind};

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Reg {
    Rax,
    Rbx,
    Rcx,
    Rdx,
    Rsi,
    Rdi,
    Rbp,
    Rsp,
    R8,
    R9,
    R10,
    R11,
    R12,
    R13,
    R14,
    R15,
}

pub const ALL_REGS: [Reg; 16] = [
    Reg::Rax,
    Reg::Rbx,
    Reg::Rcx,
    Reg::Rdx,
    Reg::Rsi,
    Reg::Rdi,
    Reg::Rbp,
    Reg::Rsp,
    Reg::R8,
    Reg::R9,
    Reg::R10,
    Reg::R11,
    Reg::R12,
    Reg::R13,
    Reg::R14,
    Reg::R15,
];

impl Reg {
    pub fn index(self) -> usize {
        ALL_REGS.iter().position(|r| *r == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Reg::Rax => "rax",
            Reg::Rbx => "rbx",
            Reg::Rcx => "rcx",
            Reg::Rdx => "rdx",
            Reg::Rsi => "rsi",
            Reg::Rdi => "rdi",
            Reg::Rbp => "rbp",
            Reg::Rsp => "rsp",
            Reg::R8 => "r8",
            Reg::R9 => "r9",
            Reg::R10 => "r10",
            Reg::R11 => "r11",
            Reg::R12 => "r12",
            Reg::R13 => "r13",
            Reg::R14 => "r14",
            Reg::R15 => "r15",
        }
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A named alias of a register: the full register or its low 32, 16 or 8
/// bits. `high`/`low` are bit positions, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RegSlice {
    pub reg: Reg,
    pub high: u32,
    pub low: u32,
}

impl RegSlice {
    pub fn full(reg: Reg) -> RegSlice {
        RegSlice {
            reg,
            high: 63,
            low: 0,
        }
    }

    pub fn width_bits(&self) -> u32 {
        self.high - self.low + 1
    }

    pub fn size_bytes(&self) -> u32 {
        self.width_bits() / 8
    }

    pub fn is_full(&self) -> bool {
        self.width_bits() == 64
    }
}

/// Memory operand `SIZE PTR [base+disp]`. `size` is in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemRef {
    pub base: Reg,
    pub disp: i64,
    pub size: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    Reg(RegSlice),
    Mem(MemRef),
    /// Immediate, stored as raw two's complement bits.
    Imm(i64),
    /// Resolved jump or call target.
    Target { name: String, index: usize },
}

impl Operand {
    /// Operand width in bytes where one is defined (targets have none,
    /// immediates adopt the width of their context).
    pub fn size_bytes(&self) -> Option<u32> {
        match self {
            Operand::Reg(s) => Some(s.size_bytes()),
            Operand::Mem(m) => Some(m.size),
            Operand::Imm(_) | Operand::Target { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cc {
    E,
    Ne,
    L,
    Le,
    G,
    Ge,
    B,
    Be,
    A,
    Ae,
}

impl Cc {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Cc::E => "je",
            Cc::Ne => "jne",
            Cc::L => "jl",
            Cc::Le => "jle",
            Cc::G => "jg",
            Cc::Ge => "jge",
            Cc::B => "jb",
            Cc::Be => "jbe",
            Cc::A => "ja",
            Cc::Ae => "jae",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mnemonic {
    Mov,
    Movsx,
    Movzx,
    Push,
    Pop,
    Arith(ArithOp),
    Cmp,
    Test,
    Jmp,
    Jcc(Cc),
    Call,
    Ret,
    Cbw,
    Cwde,
    Cdqe,
    /// Input pseudo-instruction: consumes `width/8` bytes little-endian.
    Read { signed: bool, width: u32 },
    Print,
    Exit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub mnemonic: Mnemonic,
    pub operands: Vec<Operand>,
    /// Label defined at this instruction, if any.
    pub label: Option<String>,
    /// 1-based line number in the source file.
    pub line: usize,
    /// Trimmed source text, for diagnostics.
    pub text: String,
}

impl Instruction {
    pub fn dst(&self) -> &Operand {
        &self.operands[0]
    }

    pub fn src(&self) -> &Operand {
        &self.operands[1]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub instructions: Vec<Instruction>,
}

impl Program {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }
}
