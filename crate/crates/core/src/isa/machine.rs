//! Concrete interpreter.
//!
//! Registers follow the x86-64 write rules: a 32-bit destination zeroes the
//! upper half of the register, 16- and 8-bit destinations leave the other
//! bits alone. Memory is a sparse byte map restricted to two windows, a
//! 64 KiB stack below the initial rsp and a 64 KiB scratch region for
//! globals; anything else traps. Unwritten bytes read as zero. The input
//! pseudo-instructions consume a byte stream little-endian and zero-fill
//! when it runs short, so a run never blocks on input.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{ArithOp, Cc, Instruction, MemRef, Mnemonic, Operand, Program, Reg, RegSlice};
use crate::bitvec::mask;

pub const STACK_TOP: u64 = 0x7FFF_0000;
pub const STACK_BYTES: u64 = 0x1_0000;
pub const GLOBAL_BASE: u64 = 0x0010_0000;
pub const GLOBAL_BYTES: u64 = 0x1_0000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Flags {
    pub cf: bool,
    pub zf: bool,
    pub sf: bool,
    pub of: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaltKind {
    Exit,
    RetFromEntry,
    EndOfProgram,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepEvent {
    Normal,
    Branch { taken: bool, target: usize },
    Call { target: usize, return_index: usize },
    Ret { return_index: usize },
    Read { value: u64, width: u32, offset: usize, short: bool },
    Print { value: u64 },
    Halt(HaltKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TrapKind {
    #[error("access of {size} byte(s) at {addr:#x} outside valid memory")]
    BadAccess { addr: u64, size: u32 },
    #[error("return to instruction {value:#x} outside the program")]
    BadReturn { value: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trap at instruction {index} (line {line}): {kind}")]
pub struct TrapInfo {
    pub index: usize,
    pub line: usize,
    pub kind: TrapKind,
}

#[derive(Debug, Clone)]
pub struct Machine {
    regs: [u64; 16],
    pub flags: Flags,
    mem: BTreeMap<u64, u8>,
    input: Vec<u8>,
    cursor: usize,
    pc: usize,
    steps: u64,
    call_depth: usize,
    halted: Option<HaltKind>,
    prints: Vec<u64>,
}

impl Machine {
    pub fn new(input: Vec<u8>) -> Machine {
        let mut regs = [0u64; 16];
        regs[Reg::Rsp.index()] = STACK_TOP;
        Machine {
            regs,
            flags: Flags::default(),
            mem: BTreeMap::new(),
            input,
            cursor: 0,
            pc: 0,
            steps: 0,
            call_depth: 0,
            halted: None,
            prints: Vec::new(),
        }
    }

    pub fn pc(&self) -> usize {
        self.pc
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn halted(&self) -> Option<HaltKind> {
        self.halted
    }

    pub fn prints(&self) -> &[u64] {
        &self.prints
    }

    pub fn input_offset(&self) -> usize {
        self.cursor
    }

    pub fn read_reg(&self, reg: Reg) -> u64 {
        self.regs[reg.index()]
    }

    pub fn write_reg(&mut self, reg: Reg, value: u64) {
        self.regs[reg.index()] = value;
    }

    pub fn read_slice(&self, slice: RegSlice) -> u64 {
        (self.regs[slice.reg.index()] >> slice.low) & mask(slice.width_bits())
    }

    /// Write with the x86-64 aliasing rules: 64-bit writes replace, 32-bit
    /// writes zero the upper half, narrower writes merge.
    pub fn write_slice(&mut self, slice: RegSlice, value: u64) {
        let v = value & mask(slice.width_bits());
        let r = &mut self.regs[slice.reg.index()];
        *r = match slice.width_bits() {
            64 => v,
            32 => v,
            w => (*r & !(mask(w) << slice.low)) | (v << slice.low),
        };
    }

    pub fn effective_addr(&self, m: &MemRef) -> u64 {
        self.read_reg(m.base).wrapping_add(m.disp as u64)
    }

    fn in_window(addr: u64, size: u32) -> bool {
        let size = size as u64;
        let end = match addr.checked_add(size) {
            Some(e) => e,
            None => return false,
        };
        let stack_base = STACK_TOP - STACK_BYTES;
        (addr >= stack_base && end <= STACK_TOP)
            || (addr >= GLOBAL_BASE && end <= GLOBAL_BASE + GLOBAL_BYTES)
    }

    pub fn read_mem(&self, addr: u64, size: u32) -> Result<u64, TrapKind> {
        if !Machine::in_window(addr, size) {
            return Err(TrapKind::BadAccess { addr, size });
        }
        let mut v = 0u64;
        for i in (0..size as u64).rev() {
            let b = self.mem.get(&(addr + i)).copied().unwrap_or(0);
            v = (v << 8) | b as u64;
        }
        Ok(v)
    }

    pub fn write_mem(&mut self, addr: u64, size: u32, value: u64) -> Result<(), TrapKind> {
        if !Machine::in_window(addr, size) {
            return Err(TrapKind::BadAccess { addr, size });
        }
        for i in 0..size as u64 {
            self.mem.insert(addr + i, (value >> (8 * i)) as u8);
        }
        Ok(())
    }

    fn operand_value(&self, op: &Operand, width_bits: u32) -> Result<u64, TrapKind> {
        Ok(match op {
            Operand::Reg(s) => self.read_slice(*s),
            Operand::Mem(m) => self.read_mem(self.effective_addr(m), m.size)?,
            Operand::Imm(v) => (*v as u64) & mask(width_bits),
            Operand::Target { .. } => 0,
        })
    }

    fn write_operand(&mut self, op: &Operand, value: u64) -> Result<(), TrapKind> {
        match op {
            Operand::Reg(s) => self.write_slice(*s, value),
            Operand::Mem(m) => self.write_mem(self.effective_addr(m), m.size, value)?,
            _ => {}
        }
        Ok(())
    }

    fn set_flags(&mut self, op: ArithKind, a: u64, b: u64, r: u64, width: u32) {
        let sign = |v: u64| (v >> (width - 1)) & 1 == 1;
        self.flags.zf = r == 0;
        self.flags.sf = sign(r);
        match op {
            ArithKind::Add => {
                self.flags.cf = r < a;
                self.flags.of = sign(a) == sign(b) && sign(r) != sign(a);
            }
            ArithKind::Sub => {
                self.flags.cf = a < b;
                self.flags.of = sign(a) != sign(b) && sign(r) != sign(a);
            }
            ArithKind::Logic => {
                self.flags.cf = false;
                self.flags.of = false;
            }
        }
    }

    /// Execute the instruction at pc. The caller is responsible for any
    /// step limit; a halted machine stays halted.
    pub fn step(&mut self, program: &Program) -> Result<StepEvent, TrapInfo> {
        if self.halted.is_some() {
            return Ok(StepEvent::Halt(self.halted.unwrap()));
        }
        if self.pc >= program.len() {
            self.halted = Some(HaltKind::EndOfProgram);
            return Ok(StepEvent::Halt(HaltKind::EndOfProgram));
        }
        let insn = &program.instructions[self.pc];
        let index = self.pc;
        let line = insn.line;
        let trap = move |kind| TrapInfo { index, line, kind };
        self.steps += 1;

        let event = match &insn.mnemonic {
            Mnemonic::Mov => {
                let w = dest_width_bits(insn);
                let v = self.operand_value(insn.src(), w).map_err(trap)?;
                self.write_operand(insn.dst(), v).map_err(trap)?;
                self.pc += 1;
                StepEvent::Normal
            }
            Mnemonic::Movsx | Mnemonic::Movzx => {
                let sw = insn.src().size_bytes().unwrap() * 8;
                let dw = dest_width_bits(insn);
                let v = self.operand_value(insn.src(), sw).map_err(trap)?;
                let v = if insn.mnemonic == Mnemonic::Movsx {
                    sign_extend_to(v, sw, dw)
                } else {
                    v
                };
                self.write_operand(insn.dst(), v).map_err(trap)?;
                self.pc += 1;
                StepEvent::Normal
            }
            Mnemonic::Push => {
                let size = insn.dst().size_bytes().unwrap_or(8);
                let v = self.operand_value(insn.dst(), size * 8).map_err(trap)?;
                let rsp = self.read_reg(Reg::Rsp).wrapping_sub(size as u64);
                self.write_mem(rsp, size, v).map_err(trap)?;
                self.write_reg(Reg::Rsp, rsp);
                self.pc += 1;
                StepEvent::Normal
            }
            Mnemonic::Pop => {
                let size = insn.dst().size_bytes().unwrap();
                let rsp = self.read_reg(Reg::Rsp);
                let v = self.read_mem(rsp, size).map_err(trap)?;
                self.write_reg(Reg::Rsp, rsp.wrapping_add(size as u64));
                self.write_operand(insn.dst(), v).map_err(trap)?;
                self.pc += 1;
                StepEvent::Normal
            }
            Mnemonic::Arith(op) => {
                let w = dest_width_bits(insn);
                let a = self.operand_value(insn.dst(), w).map_err(trap)?;
                let b = self.operand_value(insn.src(), w).map_err(trap)?;
                let (r, kind) = apply_arith(*op, a, b, w);
                self.set_flags(kind, a, b, r, w);
                self.write_operand(insn.dst(), r).map_err(trap)?;
                self.pc += 1;
                StepEvent::Normal
            }
            Mnemonic::Cmp => {
                let w = dest_width_bits(insn);
                let a = self.operand_value(insn.dst(), w).map_err(trap)?;
                let b = self.operand_value(insn.src(), w).map_err(trap)?;
                let r = a.wrapping_sub(b) & mask(w);
                self.set_flags(ArithKind::Sub, a, b, r, w);
                self.pc += 1;
                StepEvent::Normal
            }
            Mnemonic::Test => {
                let w = dest_width_bits(insn);
                let a = self.operand_value(insn.dst(), w).map_err(trap)?;
                let b = self.operand_value(insn.src(), w).map_err(trap)?;
                self.set_flags(ArithKind::Logic, a, b, a & b, w);
                self.pc += 1;
                StepEvent::Normal
            }
            Mnemonic::Jmp => {
                let target = target_index(insn);
                self.pc = target;
                StepEvent::Normal
            }
            Mnemonic::Jcc(cc) => {
                let target = target_index(insn);
                let taken = jcc_taken(*cc, &self.flags);
                self.pc = if taken { target } else { self.pc + 1 };
                StepEvent::Branch { taken, target }
            }
            Mnemonic::Call => {
                let target = target_index(insn);
                let return_index = self.pc + 1;
                let rsp = self.read_reg(Reg::Rsp).wrapping_sub(8);
                self.write_mem(rsp, 8, return_index as u64).map_err(trap)?;
                self.write_reg(Reg::Rsp, rsp);
                self.call_depth += 1;
                self.pc = target;
                StepEvent::Call {
                    target,
                    return_index,
                }
            }
            Mnemonic::Ret => {
                if self.call_depth == 0 {
                    self.halted = Some(HaltKind::RetFromEntry);
                    StepEvent::Halt(HaltKind::RetFromEntry)
                } else {
                    let rsp = self.read_reg(Reg::Rsp);
                    let v = self.read_mem(rsp, 8).map_err(trap)?;
                    if v as usize >= program.len() {
                        return Err(trap(TrapKind::BadReturn { value: v }));
                    }
                    self.write_reg(Reg::Rsp, rsp.wrapping_add(8));
                    self.call_depth -= 1;
                    self.pc = v as usize;
                    StepEvent::Ret {
                        return_index: v as usize,
                    }
                }
            }
            Mnemonic::Cbw => {
                let al = self.read_reg(Reg::Rax) & 0xFF;
                let ax = sign_extend_to(al, 8, 16);
                self.write_slice(slice16(Reg::Rax), ax);
                self.pc += 1;
                StepEvent::Normal
            }
            Mnemonic::Cwde => {
                let ax = self.read_reg(Reg::Rax) & 0xFFFF;
                let eax = sign_extend_to(ax, 16, 32);
                self.write_slice(slice32(Reg::Rax), eax);
                self.pc += 1;
                StepEvent::Normal
            }
            Mnemonic::Cdqe => {
                let eax = self.read_reg(Reg::Rax) & 0xFFFF_FFFF;
                let rax = sign_extend_to(eax, 32, 64);
                self.write_reg(Reg::Rax, rax);
                self.pc += 1;
                StepEvent::Normal
            }
            Mnemonic::Read { width, .. } => {
                let bytes = (*width / 8) as usize;
                let offset = self.cursor;
                let mut v = 0u64;
                let mut short = false;
                for i in 0..bytes {
                    let b = match self.input.get(offset + i) {
                        Some(b) => *b,
                        None => {
                            short = true;
                            0
                        }
                    };
                    v |= (b as u64) << (8 * i);
                }
                self.cursor += bytes;
                self.write_operand(insn.dst(), v).map_err(trap)?;
                self.pc += 1;
                StepEvent::Read {
                    value: v,
                    width: *width,
                    offset,
                    short,
                }
            }
            Mnemonic::Print => {
                let w = insn
                    .dst()
                    .size_bytes()
                    .map(|s| s * 8)
                    .unwrap_or(64);
                let v = self.operand_value(insn.dst(), w).map_err(trap)?;
                self.prints.push(v);
                self.pc += 1;
                StepEvent::Print { value: v }
            }
            Mnemonic::Exit => {
                self.halted = Some(HaltKind::Exit);
                StepEvent::Halt(HaltKind::Exit)
            }
        };
        Ok(event)
    }
}

#[derive(Debug, Clone, Copy)]
enum ArithKind {
    Add,
    Sub,
    Logic,
}

fn apply_arith(op: ArithOp, a: u64, b: u64, width: u32) -> (u64, ArithKind) {
    match op {
        ArithOp::Add => (a.wrapping_add(b) & mask(width), ArithKind::Add),
        ArithOp::Sub => (a.wrapping_sub(b) & mask(width), ArithKind::Sub),
        ArithOp::And => (a & b, ArithKind::Logic),
        ArithOp::Or => (a | b, ArithKind::Logic),
        ArithOp::Xor => (a ^ b, ArithKind::Logic),
    }
}

pub fn jcc_taken(cc: Cc, f: &Flags) -> bool {
    match cc {
        Cc::E => f.zf,
        Cc::Ne => !f.zf,
        Cc::L => f.sf != f.of,
        Cc::Le => f.zf || f.sf != f.of,
        Cc::G => !f.zf && f.sf == f.of,
        Cc::Ge => f.sf == f.of,
        Cc::B => f.cf,
        Cc::Be => f.cf || f.zf,
        Cc::A => !f.cf && !f.zf,
        Cc::Ae => !f.cf,
    }
}

fn sign_extend_to(value: u64, from_bits: u32, to_bits: u32) -> u64 {
    let v = value & mask(from_bits);
    if v >> (from_bits - 1) & 1 == 1 {
        (v | (mask(to_bits - from_bits) << from_bits)) & mask(to_bits)
    } else {
        v
    }
}

fn dest_width_bits(insn: &Instruction) -> u32 {
    insn.dst().size_bytes().map(|s| s * 8).unwrap_or(64)
}

fn target_index(insn: &Instruction) -> usize {
    match insn.dst() {
        Operand::Target { index, .. } => *index,
        _ => unreachable!("validated at parse time"),
    }
}

fn slice16(reg: Reg) -> RegSlice {
    RegSlice {
        reg,
        high: 15,
        low: 0,
    }
}

fn slice32(reg: Reg) -> RegSlice {
    RegSlice {
        reg,
        high: 31,
        low: 0,
    }
}
