//! Concolic execution engine.
//!
//! The engine runs a program on the concrete machine while mirroring every
//! input-derived value as a bit-vector formula: one 64-bit formula per
//! register that holds symbolic data, one 8-bit formula per symbolic
//! memory byte. Conditional branches whose flags depend on symbolic data
//! contribute a path condition, oriented so it is true on the executed
//! path. Before each instruction executes, the checker looks for a
//! narrowing; each new site becomes a solver job made of the path
//! conditions collected so far plus the truncation predicate, so a model
//! is an input that reaches the site and makes the narrowing lossy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::bitvec::{mask, Assignment, BinOp, BvExpr, CmpOp, ExprError, VarId};
use crate::checker::{build_predicate, find_sites, infer_signedness, CheckContext};
use crate::isa::{
    ArithOp, Cc, HaltKind, Instruction, Machine, Mnemonic, Operand, Program, Reg, RegSlice,
    StepEvent, TrapInfo,
};
use crate::report::{RunReport, TruncationKind, TruncationWarning, Verdict};
use crate::shadow::{ShadowState, StoreContent};
use crate::solver::{
    model_to_input_bytes, run_jobs, InputSlot, JobId, SolverConfig, SolverError, SolverJob,
    SolverVerdict,
};

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Upper bound on executed instructions.
    pub step_limit: u64,
    /// After every instruction, re-evaluate all symbolic state under the
    /// concrete input and compare with the machine.
    pub check_agreement: bool,
    /// Record a line of tracking state after every instruction.
    pub shadow_trace: bool,
}

impl Default for EngineConfig {
    fn default() -> EngineConfig {
        EngineConfig {
            step_limit: 1_000_000,
            check_agreement: false,
            shadow_trace: false,
        }
    }
}

/// One executed conditional branch whose flags carried symbolic data.
#[derive(Debug, Clone)]
pub struct BranchRecord {
    pub insn: usize,
    pub line: usize,
    pub cc: Cc,
    pub taken: bool,
    /// Width-1 condition, true on the path the run took.
    pub cond: BvExpr,
}

/// A detected site waiting for its solver verdict.
#[derive(Debug, Clone)]
pub struct PendingSite {
    pub job: JobId,
    pub insn: usize,
    pub line: usize,
    pub kind: TruncationKind,
    pub low: u32,
    pub high: u32,
}

/// Everything a concolic run produced, before solving.
#[derive(Debug)]
pub struct RunOutcome {
    pub halt: Option<HaltKind>,
    pub trap: Option<TrapInfo>,
    pub hit_step_limit: bool,
    pub steps: u64,
    pub prints: Vec<u64>,
    pub branches: Vec<BranchRecord>,
    pub layout: Vec<InputSlot>,
    pub jobs: Vec<SolverJob>,
    pub sites: Vec<PendingSite>,
    pub hints: BTreeMap<VarId, TruncationKind>,
    pub agreement_violations: Vec<String>,
    pub shadow_trace: Vec<String>,
    /// The seed input the run consumed.
    pub input: Vec<u8>,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Formula view of the machine flags, cached from the last flag-setting
/// instruction.
enum FlagFormula {
    None,
    /// Operands of the last `cmp` or `sub`, at their operand width.
    Cmp {
        lhs: BvExpr,
        rhs: BvExpr,
        symbolic: bool,
    },
    /// Result of the last `add`/`and`/`or`/`xor`/`test`; `None` when the
    /// result was fully concrete. Only the zero flag is modelled for
    /// these, so only `je`/`jne` can pick the formula up.
    Result { expr: Option<BvExpr> },
}

/// Pre-execution snapshot of whatever the symbolic update needs, taken
/// before the concrete machine mutates anything.
struct Pre {
    src_expr: Option<BvExpr>,
    src_conc: u64,
    dst_expr: Option<BvExpr>,
    dst_conc: u64,
    src_addr: Option<u64>,
    dst_addr: Option<u64>,
    /// Full old value of the destination register, for merged partial
    /// writes.
    dst_old_reg: u64,
    rsp: u64,
    rax_expr: Option<BvExpr>,
}

struct Engine {
    machine: Machine,
    sym_regs: BTreeMap<Reg, BvExpr>,
    sym_mem: BTreeMap<u64, BvExpr>,
    shadow: ShadowState,
    flag: FlagFormula,
    branches: Vec<BranchRecord>,
    layout: Vec<InputSlot>,
    hints: BTreeMap<VarId, TruncationKind>,
    /// Concrete value of every input variable, for agreement checking.
    concrete_reads: Assignment,
    jobs: Vec<SolverJob>,
    sites: Vec<PendingSite>,
    seen: BTreeSet<(usize, TruncationKind)>,
    violations: Vec<String>,
    /// How many branch records agreement checking has already validated.
    verified_branches: usize,
    trace: Vec<String>,
}

/// Run the program to completion (or trap, or the step limit) and collect
/// the solver jobs its truncation sites generate.
pub fn run_program(
    program: &Program,
    input: &[u8],
    config: &EngineConfig,
) -> Result<RunOutcome, EngineError> {
    let mut e = Engine {
        machine: Machine::new(input.to_vec()),
        sym_regs: BTreeMap::new(),
        sym_mem: BTreeMap::new(),
        shadow: ShadowState::new(),
        flag: FlagFormula::None,
        branches: Vec::new(),
        layout: Vec::new(),
        hints: BTreeMap::new(),
        concrete_reads: Assignment::new(),
        jobs: Vec::new(),
        sites: Vec::new(),
        seen: BTreeSet::new(),
        violations: Vec::new(),
        verified_branches: 0,
        trace: Vec::new(),
    };

    let mut halt = None;
    let mut trap = None;
    let mut hit_step_limit = false;
    loop {
        if e.machine.steps() >= config.step_limit {
            hit_step_limit = true;
            break;
        }
        let pc = e.machine.pc();
        let insn = if pc < program.len() {
            Some(program.instructions[pc].clone())
        } else {
            None
        };
        if let Some(insn) = &insn {
            e.inspect(insn, pc)?;
        }
        let pre = insn.as_ref().map(|i| e.pre_values(i)).transpose()?;
        let event = match e.machine.step(program) {
            Ok(ev) => ev,
            Err(t) => {
                trap = Some(t);
                break;
            }
        };
        if let StepEvent::Halt(h) = event {
            halt = Some(h);
            break;
        }
        if let (Some(insn), Some(pre)) = (&insn, pre) {
            e.apply(insn, pc, pre, &event)?;
        }
        if config.check_agreement {
            e.check_agreement(pc);
        }
        if config.shadow_trace {
            let line = e.trace_line(pc);
            e.trace.push(line);
        }
    }

    Ok(RunOutcome {
        halt,
        trap,
        hit_step_limit,
        steps: e.machine.steps(),
        prints: e.machine.prints().to_vec(),
        branches: e.branches,
        layout: e.layout,
        jobs: e.jobs,
        sites: e.sites,
        hints: e.hints,
        agreement_violations: e.violations,
        shadow_trace: e.trace,
        input: input.to_vec(),
    })
}

impl Engine {
    /// Checker pass over the instruction about to execute. Each site seen
    /// for the first time (per instruction and signedness) becomes a job:
    /// the path conditions gathered so far plus the truncation predicate.
    fn inspect(&mut self, insn: &Instruction, pc: usize) -> Result<(), EngineError> {
        let ctx = CheckContext {
            machine: &self.machine,
            sym_regs: &self.sym_regs,
            sym_mem: &self.sym_mem,
            shadow: &self.shadow,
        };
        let found = find_sites(&ctx, pc, insn)?;
        for site in found {
            let vars = site.expr.vars();
            let kind = infer_signedness(&vars, &self.hints, &self.branches);
            if !self.seen.insert((site.insn, kind)) {
                continue;
            }
            let mut constraints: Vec<BvExpr> =
                self.branches.iter().map(|b| b.cond.clone()).collect();
            constraints.push(build_predicate(kind, &site)?);
            let mut constraint_vars = BTreeSet::new();
            for c in &constraints {
                constraint_vars.extend(c.vars());
            }
            let layout: Vec<InputSlot> = self
                .layout
                .iter()
                .filter(|s| constraint_vars.contains(&s.var))
                .cloned()
                .collect();
            let id = JobId(self.jobs.len() as u32);
            self.jobs.push(SolverJob {
                id,
                constraints,
                layout,
            });
            self.sites.push(PendingSite {
                job: id,
                insn: site.insn,
                line: site.line,
                kind,
                low: site.low,
                high: site.high,
            });
        }
        Ok(())
    }

    fn pre_values(&self, insn: &Instruction) -> Result<Pre, ExprError> {
        let mut pre = Pre {
            src_expr: None,
            src_conc: 0,
            dst_expr: None,
            dst_conc: 0,
            src_addr: None,
            dst_addr: None,
            dst_old_reg: 0,
            rsp: self.machine.read_reg(Reg::Rsp),
            rax_expr: self.sym_regs.get(&Reg::Rax).cloned(),
        };
        if let Some(dst) = insn.operands.first() {
            let w = operand_bits(dst, None);
            pre.dst_expr = self.sym_operand(dst)?;
            pre.dst_conc = self.conc_operand(dst, w);
            if let Operand::Mem(m) = dst {
                pre.dst_addr = Some(self.machine.effective_addr(m));
            }
            if let Operand::Reg(s) = dst {
                pre.dst_old_reg = self.machine.read_reg(s.reg);
            }
        }
        if let Some(src) = insn.operands.get(1) {
            let w = operand_bits(src, insn.operands.first());
            pre.src_expr = self.sym_operand(src)?;
            pre.src_conc = self.conc_operand(src, w);
            if let Operand::Mem(m) = src {
                pre.src_addr = Some(self.machine.effective_addr(m));
            }
        }
        Ok(pre)
    }

    /// Mirror the step symbolically and update width tracking. `pre` was
    /// captured before the concrete step, so it still sees the old state.
    fn apply(
        &mut self,
        insn: &Instruction,
        pc: usize,
        pre: Pre,
        event: &StepEvent,
    ) -> Result<(), EngineError> {
        match &insn.mnemonic {
            Mnemonic::Mov => match insn.dst() {
                Operand::Reg(d) => {
                    let symbolic = pre.src_expr.is_some();
                    self.write_reg_sym(*d, pre.src_expr, pre.dst_old_reg)?;
                    match insn.src() {
                        Operand::Mem(_) => {
                            self.shadow.on_load(*d, pre.src_addr.unwrap(), symbolic)
                        }
                        Operand::Reg(s) => self.shadow.on_reg_move(*d, *s, symbolic),
                        _ => self.shadow.on_reg_write(*d, symbolic),
                    }
                }
                Operand::Mem(m) => {
                    let addr = pre.dst_addr.unwrap();
                    let symbolic = pre.src_expr.is_some();
                    self.write_mem_sym(addr, m.size, pre.src_expr)?;
                    let content = match insn.src() {
                        Operand::Reg(s) => StoreContent::FromReg(s.reg),
                        _ => StoreContent::Plain,
                    };
                    self.shadow.on_store(addr, m.size, content, symbolic);
                }
                _ => {}
            },
            Mnemonic::Movsx | Mnemonic::Movzx => {
                let d = match insn.dst() {
                    Operand::Reg(d) => *d,
                    _ => return Ok(()),
                };
                let dw = d.width_bits();
                let sw = operand_bits(insn.src(), None);
                let widened = match &pre.src_expr {
                    Some(e) if insn.mnemonic == Mnemonic::Movsx => {
                        Some(BvExpr::sign_extend(dw - sw, e)?)
                    }
                    Some(e) => Some(BvExpr::zero_extend(dw - sw, e)?),
                    None => None,
                };
                let symbolic = widened.is_some();
                self.write_reg_sym(d, widened, pre.dst_old_reg)?;
                match insn.src() {
                    Operand::Mem(_) => self.shadow.on_load(d, pre.src_addr.unwrap(), symbolic),
                    Operand::Reg(s) => self.shadow.on_reg_move(d, *s, symbolic),
                    _ => {}
                }
            }
            Mnemonic::Push => {
                let size = insn.dst().size_bytes().unwrap_or(8);
                let addr = pre.rsp.wrapping_sub(size as u64);
                let symbolic = pre.dst_expr.is_some();
                self.write_mem_sym(addr, size, pre.dst_expr)?;
                let content = match insn.dst() {
                    Operand::Reg(s) => StoreContent::FromReg(s.reg),
                    Operand::Mem(_) => match self
                        .shadow
                        .lookup_stack(pre.dst_addr.unwrap())
                    {
                        Some(t) => StoreContent::Tracked(t),
                        None => StoreContent::Plain,
                    },
                    _ => StoreContent::Plain,
                };
                self.shadow.on_store(addr, size, content, symbolic);
            }
            Mnemonic::Pop => {
                let d = match insn.dst() {
                    Operand::Reg(d) => *d,
                    _ => return Ok(()),
                };
                let size = d.size_bytes();
                let value = self.sym_mem_value(pre.rsp, size)?;
                self.write_reg_sym(d, value, pre.dst_old_reg)?;
                self.shadow.on_pop(d, pre.rsp, size);
            }
            Mnemonic::Arith(op) => {
                let w = operand_bits(insn.dst(), None);
                let zeroing_xor = *op == ArithOp::Xor && insn.dst() == insn.src();
                let symbolic =
                    !zeroing_xor && (pre.dst_expr.is_some() || pre.src_expr.is_some());
                let result = if symbolic {
                    let lhs = expr_or_const(&pre.dst_expr, pre.dst_conc, w)?;
                    let rhs = expr_or_const(&pre.src_expr, pre.src_conc, w)?;
                    Some(BvExpr::bin(bin_op(*op), &lhs, &rhs)?)
                } else {
                    None
                };
                self.flag = match op {
                    ArithOp::Sub => FlagFormula::Cmp {
                        lhs: expr_or_const(&pre.dst_expr, pre.dst_conc, w)?,
                        rhs: expr_or_const(&pre.src_expr, pre.src_conc, w)?,
                        symbolic,
                    },
                    _ => FlagFormula::Result {
                        expr: result.clone(),
                    },
                };
                match insn.dst() {
                    Operand::Reg(d) => {
                        self.write_reg_sym(*d, result.clone(), pre.dst_old_reg)?;
                        self.shadow.on_reg_write(*d, result.is_some());
                    }
                    Operand::Mem(m) => {
                        let addr = pre.dst_addr.unwrap();
                        self.write_mem_sym(addr, m.size, result.clone())?;
                        self.shadow
                            .on_store(addr, m.size, StoreContent::Plain, result.is_some());
                    }
                    _ => {}
                }
            }
            Mnemonic::Cmp => {
                let w = operand_bits(insn.dst(), None);
                let symbolic = pre.dst_expr.is_some() || pre.src_expr.is_some();
                self.flag = FlagFormula::Cmp {
                    lhs: expr_or_const(&pre.dst_expr, pre.dst_conc, w)?,
                    rhs: expr_or_const(&pre.src_expr, pre.src_conc, w)?,
                    symbolic,
                };
            }
            Mnemonic::Test => {
                let w = operand_bits(insn.dst(), None);
                let symbolic = pre.dst_expr.is_some() || pre.src_expr.is_some();
                let expr = if symbolic {
                    let lhs = expr_or_const(&pre.dst_expr, pre.dst_conc, w)?;
                    let rhs = expr_or_const(&pre.src_expr, pre.src_conc, w)?;
                    Some(BvExpr::bin(BinOp::And, &lhs, &rhs)?)
                } else {
                    None
                };
                self.flag = FlagFormula::Result { expr };
            }
            Mnemonic::Jmp => {}
            Mnemonic::Jcc(cc) => {
                if let StepEvent::Branch { taken, .. } = event {
                    self.record_branch(pc, insn.line, *cc, *taken)?;
                }
            }
            Mnemonic::Call => {
                let addr = pre.rsp.wrapping_sub(8);
                self.write_mem_sym(addr, 8, None)?;
                self.shadow.on_call(addr);
            }
            Mnemonic::Ret => {
                self.shadow.on_ret();
            }
            Mnemonic::Cbw | Mnemonic::Cwde | Mnemonic::Cdqe => {
                let source_bytes = match insn.mnemonic {
                    Mnemonic::Cbw => 1,
                    Mnemonic::Cwde => 2,
                    _ => 4,
                };
                match &pre.rax_expr {
                    Some(old) => {
                        let new = match insn.mnemonic {
                            Mnemonic::Cbw => {
                                let widened =
                                    BvExpr::sign_extend(8, &BvExpr::extract(7, 0, old)?)?;
                                BvExpr::concat(&BvExpr::extract(63, 16, old)?, &widened)?
                            }
                            Mnemonic::Cwde => {
                                let widened =
                                    BvExpr::sign_extend(16, &BvExpr::extract(15, 0, old)?)?;
                                BvExpr::zero_extend(32, &widened)?
                            }
                            _ => BvExpr::sign_extend(32, &BvExpr::extract(31, 0, old)?)?,
                        };
                        self.sym_regs.insert(Reg::Rax, new);
                        self.shadow.on_convert(source_bytes, true);
                    }
                    None => self.shadow.on_convert(source_bytes, false),
                }
            }
            Mnemonic::Read { signed, width } => {
                if let StepEvent::Read { value, offset, .. } = event {
                    let id = VarId(self.layout.len() as u32);
                    let name = format!("in{}", self.layout.len());
                    let var = BvExpr::var(id, &name, *width)?;
                    self.layout.push(InputSlot {
                        var: id,
                        width: *width,
                        read_index: self.layout.len(),
                        byte_offset: *offset,
                    });
                    self.hints.insert(
                        id,
                        if *signed {
                            TruncationKind::Signed
                        } else {
                            TruncationKind::Unsigned
                        },
                    );
                    self.concrete_reads.set(id, *value);
                    match insn.dst() {
                        Operand::Reg(d) => {
                            self.write_reg_sym(*d, Some(var), pre.dst_old_reg)?;
                            self.shadow.on_read_reg(*d, width / 8);
                        }
                        Operand::Mem(_) => {
                            let addr = pre.dst_addr.unwrap();
                            self.write_mem_sym(addr, width / 8, Some(var))?;
                            self.shadow.on_read_mem(addr, width / 8);
                        }
                        _ => {}
                    }
                }
            }
            Mnemonic::Print => {
                self.shadow.on_print();
            }
            Mnemonic::Exit => {}
        }
        Ok(())
    }

    fn record_branch(
        &mut self,
        pc: usize,
        line: usize,
        cc: Cc,
        taken: bool,
    ) -> Result<(), ExprError> {
        let cond = match &self.flag {
            FlagFormula::Cmp {
                lhs,
                rhs,
                symbolic: true,
            } => {
                let mut op = cc_to_cmp(cc);
                if !taken {
                    op = op.negate();
                }
                Some(BvExpr::cmp(op, lhs, rhs)?)
            }
            FlagFormula::Result { expr: Some(e) } if matches!(cc, Cc::E | Cc::Ne) => {
                let mut op = match cc {
                    Cc::E => CmpOp::Eq,
                    _ => CmpOp::Ne,
                };
                if !taken {
                    op = op.negate();
                }
                let zero = BvExpr::constant(0, e.width())?;
                Some(BvExpr::cmp(op, e, &zero)?)
            }
            _ => None,
        };
        if let Some(cond) = cond {
            self.branches.push(BranchRecord {
                insn: pc,
                line,
                cc,
                taken,
                cond,
            });
        }
        Ok(())
    }

    /// Symbolic value of an operand at its own width, or `None` when it is
    /// fully concrete.
    fn sym_operand(&self, op: &Operand) -> Result<Option<BvExpr>, ExprError> {
        match op {
            Operand::Reg(s) => match self.sym_regs.get(&s.reg) {
                Some(full) if s.is_full() => Ok(Some(full.clone())),
                Some(full) => Ok(Some(BvExpr::extract(s.width_bits() - 1, 0, full)?)),
                None => Ok(None),
            },
            Operand::Mem(m) => self.sym_mem_value(self.machine.effective_addr(m), m.size),
            _ => Ok(None),
        }
    }

    /// Little-endian concatenation of the byte formulas at
    /// `[addr, addr + size)`, with concrete bytes as constants. `None`
    /// when no byte is symbolic.
    fn sym_mem_value(&self, addr: u64, size: u32) -> Result<Option<BvExpr>, ExprError> {
        if !(0..size as u64).any(|i| self.sym_mem.contains_key(&(addr + i))) {
            return Ok(None);
        }
        let mut expr: Option<BvExpr> = None;
        for i in 0..size as u64 {
            let byte = match self.sym_mem.get(&(addr + i)) {
                Some(b) => b.clone(),
                None => BvExpr::constant(self.machine.read_mem(addr + i, 1).unwrap_or(0), 8)?,
            };
            expr = Some(match expr {
                None => byte,
                Some(low) => BvExpr::concat(&byte, &low)?,
            });
        }
        Ok(expr)
    }

    fn conc_operand(&self, op: &Operand, width: u32) -> u64 {
        match op {
            Operand::Reg(s) => self.machine.read_slice(*s),
            Operand::Mem(m) => self
                .machine
                .read_mem(self.machine.effective_addr(m), m.size)
                .unwrap_or(0),
            Operand::Imm(v) => (*v as u64) & mask(width),
            Operand::Target { .. } => 0,
        }
    }

    /// Write a register at slice width following the machine's aliasing
    /// rules: 64- and 32-bit writes replace the whole formula (the latter
    /// zero-extended), narrower writes merge into the existing one. A
    /// concrete narrow write into a symbolic register keeps the register
    /// symbolic with a constant segment.
    fn write_reg_sym(
        &mut self,
        slice: RegSlice,
        value: Option<BvExpr>,
        old_reg: u64,
    ) -> Result<(), ExprError> {
        let w = slice.width_bits();
        match w {
            64 => match value {
                Some(v) => {
                    self.sym_regs.insert(slice.reg, v);
                }
                None => {
                    self.sym_regs.remove(&slice.reg);
                }
            },
            32 => match value {
                Some(v) => {
                    self.sym_regs
                        .insert(slice.reg, BvExpr::zero_extend(32, &v)?);
                }
                None => {
                    self.sym_regs.remove(&slice.reg);
                }
            },
            _ => {
                let old_sym = self.sym_regs.get(&slice.reg).cloned();
                let new_low = match &value {
                    Some(v) => Some(v.clone()),
                    // the machine has already performed the write, so the
                    // written bits are the current low bits
                    None if old_sym.is_some() => Some(BvExpr::constant(
                        self.machine.read_slice(slice),
                        w,
                    )?),
                    None => None,
                };
                if let Some(low) = new_low {
                    let old_full = match old_sym {
                        Some(o) => o,
                        None => BvExpr::constant(old_reg, 64)?,
                    };
                    let upper = BvExpr::extract(63, w, &old_full)?;
                    self.sym_regs
                        .insert(slice.reg, BvExpr::concat(&upper, &low)?);
                }
            }
        }
        Ok(())
    }

    fn write_mem_sym(
        &mut self,
        addr: u64,
        size: u32,
        value: Option<BvExpr>,
    ) -> Result<(), ExprError> {
        match value {
            Some(v) => {
                for i in 0..size {
                    let byte = BvExpr::extract(8 * i + 7, 8 * i, &v)?;
                    self.sym_mem.insert(addr + i as u64, byte);
                }
            }
            None => {
                for i in 0..size as u64 {
                    self.sym_mem.remove(&(addr + i));
                }
            }
        }
        Ok(())
    }

    /// Evaluate every symbolic register and memory byte under the
    /// concrete input values and compare with the machine.
    fn check_agreement(&mut self, pc: usize) {
        for (reg, e) in &self.sym_regs {
            match e.eval(&self.concrete_reads) {
                Ok(v) if v == self.machine.read_reg(*reg) => {}
                Ok(v) => self.violations.push(format!(
                    "after insn {pc}: {} symbolic {v:#x} vs concrete {:#x}",
                    reg.name(),
                    self.machine.read_reg(*reg)
                )),
                Err(err) => self
                    .violations
                    .push(format!("after insn {pc}: {} eval failed: {err}", reg.name())),
            }
        }
        for (addr, e) in &self.sym_mem {
            let concrete = match self.machine.read_mem(*addr, 1) {
                Ok(b) => b,
                Err(_) => continue,
            };
            match e.eval(&self.concrete_reads) {
                Ok(v) if v == concrete => {}
                Ok(v) => self.violations.push(format!(
                    "after insn {pc}: [{addr:#x}] symbolic {v:#x} vs concrete {concrete:#x}"
                )),
                Err(err) => self
                    .violations
                    .push(format!("after insn {pc}: [{addr:#x}] eval failed: {err}")),
            }
        }
        // every recorded branch condition is oriented to hold on the path
        // actually executed, so each must be true under the seed input
        for b in &self.branches[self.verified_branches..] {
            match b.cond.eval(&self.concrete_reads) {
                Ok(1) => {}
                Ok(_) => self.violations.push(format!(
                    "after insn {pc}: branch at insn {} not satisfied by its own path",
                    b.insn
                )),
                Err(err) => self.violations.push(format!(
                    "after insn {pc}: branch at insn {} eval failed: {err}",
                    b.insn
                )),
            }
        }
        self.verified_branches = self.branches.len();
    }

    fn trace_line(&self, pc: usize) -> String {
        let mut line = format!("insn {pc}: regs{{");
        let mut first = true;
        for (reg, size) in self.shadow.tracked_regs() {
            if !first {
                line.push(',');
            }
            let _ = write!(line, "{}:{size}", reg.name());
            first = false;
        }
        line.push('}');
        for (i, frame) in self.shadow.frames().enumerate() {
            let _ = write!(line, " frame{i}{{");
            let mut first = true;
            for (addr, size) in frame.slots() {
                if !first {
                    line.push(',');
                }
                let _ = write!(line, "{addr:#x}:{size}");
                first = false;
            }
            line.push('}');
        }
        line
    }
}

fn operand_bits(op: &Operand, partner: Option<&Operand>) -> u32 {
    op.size_bytes()
        .or_else(|| partner.and_then(|p| p.size_bytes()))
        .map(|s| s * 8)
        .unwrap_or(64)
}

fn expr_or_const(e: &Option<BvExpr>, concrete: u64, width: u32) -> Result<BvExpr, ExprError> {
    match e {
        Some(e) => Ok(e.clone()),
        None => BvExpr::constant(concrete & mask(width), width),
    }
}

fn bin_op(op: ArithOp) -> BinOp {
    match op {
        ArithOp::Add => BinOp::Add,
        ArithOp::Sub => BinOp::Sub,
        ArithOp::And => BinOp::And,
        ArithOp::Or => BinOp::Or,
        ArithOp::Xor => BinOp::Xor,
    }
}

fn cc_to_cmp(cc: Cc) -> CmpOp {
    match cc {
        Cc::E => CmpOp::Eq,
        Cc::Ne => CmpOp::Ne,
        Cc::L => CmpOp::Slt,
        Cc::Le => CmpOp::Sle,
        Cc::G => CmpOp::Sgt,
        Cc::Ge => CmpOp::Sge,
        Cc::B => CmpOp::Ult,
        Cc::Be => CmpOp::Ule,
        Cc::A => CmpOp::Ugt,
        Cc::Ae => CmpOp::Uge,
    }
}

/// Options for a full analysis: the concolic run plus solving.
#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    pub engine: EngineConfig,
    pub solver: SolverConfig,
    /// Solver worker threads; `0` or `1` solves inline.
    pub workers: usize,
    /// Where witness input files for confirmed warnings are written.
    /// `None` skips writing them.
    pub out_dir: Option<PathBuf>,
}

/// A finished analysis: the raw run artifacts and the decided warnings.
#[derive(Debug)]
pub struct Analysis {
    pub outcome: RunOutcome,
    pub report: RunReport,
}

/// Run the program, solve every generated job, and turn the verdicts into
/// warnings. Confirmed warnings get a witness input file named after the
/// instruction and signedness, built by patching the model's values into
/// the seed input.
pub fn analyze(
    program: &Program,
    input: &[u8],
    opts: &AnalyzeOptions,
) -> Result<Analysis, EngineError> {
    let outcome = run_program(program, input, &opts.engine)?;
    let verdicts = run_jobs(outcome.jobs.clone(), &opts.solver, opts.workers)?;
    let mut warnings = Vec::new();
    for site in &outcome.sites {
        let (verdict, model, input_path, smt2_path) = match &verdicts[&site.job] {
            SolverVerdict::Sat(model) => {
                let mut input_path = None;
                if let Some(dir) = &opts.out_dir {
                    let job = outcome
                        .jobs
                        .iter()
                        .find(|j| j.id == site.job)
                        .expect("job for site");
                    let bytes = model_to_input_bytes(model, &job.layout, &outcome.input);
                    let path = dir.join(format!("repro_insn{}_{}.bin", site.insn, site.kind));
                    std::fs::create_dir_all(dir)
                        .and_then(|_| std::fs::write(&path, &bytes))
                        .map_err(|source| EngineError::Io {
                            path: path.clone(),
                            source,
                        })?;
                    input_path = Some(path);
                }
                (Verdict::Sat, Some(model.clone()), input_path, None)
            }
            SolverVerdict::Unsat => (Verdict::Unsat, None, None, None),
            SolverVerdict::Unknown { smt2_path } => {
                (Verdict::Unknown, None, None, smt2_path.clone())
            }
        };
        warnings.push(TruncationWarning {
            insn: site.insn,
            line: site.line,
            kind: site.kind,
            low: site.low,
            high: site.high,
            verdict,
            model,
            input_path,
            smt2_path,
        });
    }
    Ok(Analysis {
        outcome,
        report: RunReport { warnings },
    })
}
