//! Truncation site detection.
//!
//! The checker inspects each instruction against the machine state as it
//! is about to execute and decides whether the instruction narrows a value
//! below the width it was produced at. Three shapes are recognised:
//!
//! 1. a load whose operand is narrower than the tracked width of the
//!    stack slot it reads,
//! 2. a register source used below the register's tracked width, or, when
//!    the register is untracked, below the width of the symbolic value its
//!    formula visibly slices out of,
//! 3. an in-place sign extension (`cbw`/`cwde`/`cdqe`) whose source is
//!    narrower than rax's tracked width.
//!
//! Each site carries the formula of the wide value and the bit range the
//! narrowing discards. Whether a discarded range is harmful depends on the
//! value's signedness: an unsigned value survives narrowing only when the
//! dropped bits are all zero, a signed one also survives the all-ones
//! pattern left by sign extension of a negative in-range value.

use std::collections::{BTreeMap, BTreeSet};

use crate::bitvec::{mask, BvExpr, CmpOp, ExprError, VarId};
use crate::engine::BranchRecord;
use crate::isa::{Cc, Instruction, Machine, Mnemonic, Operand, Reg, RegSlice};
use crate::report::TruncationKind;
use crate::shadow::ShadowState;

/// Read-only view of the engine state the checker consults.
pub struct CheckContext<'a> {
    pub machine: &'a Machine,
    pub sym_regs: &'a BTreeMap<Reg, BvExpr>,
    pub sym_mem: &'a BTreeMap<u64, BvExpr>,
    pub shadow: &'a ShadowState,
}

/// One place where a wide symbolic value is about to lose bits `low..=high`.
#[derive(Debug, Clone)]
pub struct TruncationSite {
    pub insn: usize,
    pub line: usize,
    pub low: u32,
    pub high: u32,
    /// Formula of the wide value; its width is `high + 1`.
    pub expr: BvExpr,
}

/// Inspect the instruction at `index` before it executes.
pub fn find_sites(
    ctx: &CheckContext,
    index: usize,
    insn: &Instruction,
) -> Result<Vec<TruncationSite>, ExprError> {
    let mut sites = Vec::new();
    let mut push = |low: u32, high: u32, expr: BvExpr| {
        sites.push(TruncationSite {
            insn: index,
            line: insn.line,
            low,
            high,
            expr,
        });
    };

    match insn.mnemonic {
        Mnemonic::Mov | Mnemonic::Movsx | Mnemonic::Movzx => match insn.src() {
            Operand::Mem(m) => {
                let addr = ctx.machine.effective_addr(m);
                if let Some(t) = ctx.shadow.lookup_stack(addr) {
                    if m.size < t {
                        if let Some(expr) = wide_value_at(ctx, addr, t)? {
                            push(8 * m.size, 8 * t - 1, expr);
                        }
                    }
                }
            }
            Operand::Reg(s) => {
                if let Some((low, high, expr)) = reg_source_site(ctx, *s)? {
                    push(low, high, expr);
                }
            }
            _ => {}
        },
        Mnemonic::Cbw | Mnemonic::Cwde | Mnemonic::Cdqe => {
            let source_bytes = match insn.mnemonic {
                Mnemonic::Cbw => 1,
                Mnemonic::Cwde => 2,
                _ => 4,
            };
            if let Some(t) = ctx.shadow.tracked_reg(Reg::Rax) {
                if t > source_bytes {
                    if let Some(full) = ctx.sym_regs.get(&Reg::Rax) {
                        let expr = BvExpr::extract(8 * t - 1, 0, full)?;
                        push(8 * source_bytes, 8 * t - 1, expr);
                    }
                }
            }
        }
        _ => {}
    }
    Ok(sites)
}

/// The tracked-width value starting at `addr`: a little-endian
/// concatenation of `size` byte formulas, with concrete memory filling the
/// gaps. Returns `None` when no byte is symbolic, since a fully concrete
/// value cannot support a solver query.
fn wide_value_at(
    ctx: &CheckContext,
    addr: u64,
    size: u32,
) -> Result<Option<BvExpr>, ExprError> {
    if !(0..size as u64).any(|i| ctx.sym_mem.contains_key(&(addr + i))) {
        return Ok(None);
    }
    let mut expr: Option<BvExpr> = None;
    for i in 0..size as u64 {
        let byte = match ctx.sym_mem.get(&(addr + i)) {
            Some(b) => b.clone(),
            None => {
                let concrete = ctx.machine.read_mem(addr + i, 1).unwrap_or(0);
                BvExpr::constant(concrete, 8)?
            }
        };
        expr = Some(match expr {
            None => byte,
            Some(low) => BvExpr::concat(&byte, &low)?,
        });
    }
    Ok(expr)
}

/// Scenario 2: a register used at `slice`'s width. Tracked registers
/// compare widths directly; untracked ones fall back to what the operand's
/// own formula reveals.
fn reg_source_site(
    ctx: &CheckContext,
    slice: RegSlice,
) -> Result<Option<(u32, u32, BvExpr)>, ExprError> {
    let op_bytes = slice.size_bytes();
    let full = match ctx.sym_regs.get(&slice.reg) {
        Some(f) => f,
        None => return Ok(None),
    };
    if let Some(t) = ctx.shadow.tracked_reg(slice.reg) {
        if op_bytes < t {
            let expr = BvExpr::extract(8 * t - 1, 0, full)?;
            return Ok(Some((8 * op_bytes, 8 * t - 1, expr)));
        }
        return Ok(None);
    }
    if slice.is_full() {
        return Ok(None);
    }
    let operand = BvExpr::extract(8 * op_bytes - 1, 0, full)?;
    if let Some((_, low, inner)) = operand.match_extract() {
        if low == 0 && inner.width() > 8 * op_bytes {
            let high = inner.width() - 1;
            return Ok(Some((8 * op_bytes, high, inner)));
        }
    }
    Ok(None)
}

/// The condition under which dropping `site.low ..= site.high` changes the
/// value: some dropped bit deviates from the fill pattern a legal
/// narrowing would leave. For unsigned values the only legal fill is all
/// zeros; for signed values an all-ones fill is also legal, because sign
/// extension of an in-range negative produces exactly that.
pub fn build_predicate(
    kind: TruncationKind,
    site: &TruncationSite,
) -> Result<BvExpr, ExprError> {
    let dropped = BvExpr::extract(site.high, site.low, &site.expr)?;
    let width = site.high - site.low + 1;
    let zero = BvExpr::constant(0, width)?;
    let is_zero = BvExpr::cmp(CmpOp::Eq, &dropped, &zero)?;
    match kind {
        TruncationKind::Unsigned => BvExpr::bool_not(&is_zero),
        TruncationKind::Signed => {
            let ones = BvExpr::constant(mask(width), width)?;
            let is_ones = BvExpr::cmp(CmpOp::Eq, &dropped, &ones)?;
            BvExpr::bool_not(&BvExpr::bool_or(&is_zero, &is_ones)?)
        }
    }
}

/// Decide whether the value at a site should be treated as signed.
///
/// Priority order: the signedness declared by the read intrinsic that
/// produced the value (the most recently created variable wins when
/// several contribute), then the flavour of the nearest earlier conditional
/// branch that inspected any contributing variable, then signed as the
/// default, since C integer types default that way.
pub fn infer_signedness(
    vars: &BTreeSet<VarId>,
    hints: &BTreeMap<VarId, TruncationKind>,
    branches: &[BranchRecord],
) -> TruncationKind {
    if let Some(kind) = vars.iter().rev().find_map(|v| hints.get(v).copied()) {
        return kind;
    }
    for b in branches.iter().rev() {
        if b.cond.vars().is_disjoint(vars) {
            continue;
        }
        match b.cc {
            Cc::L | Cc::Le | Cc::G | Cc::Ge => return TruncationKind::Signed,
            Cc::B | Cc::Be | Cc::A | Cc::Ae => return TruncationKind::Unsigned,
            Cc::E | Cc::Ne => {}
        }
    }
    TruncationKind::Signed
}
