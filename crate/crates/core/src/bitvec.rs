//! Fixed-width bitvector expressions.
//!
//! Expressions are immutable trees shared through `Arc`, so formulas built
//! during a run can be referenced from path conditions, solver jobs and
//! worker threads without copying. Every node carries its result width in
//! bits; widths are checked at construction and a violation is an error,
//! never a silent mask. Values are two's complement over at most 64 bits.
//!
//! There is no simplifier. The single rewrite applied at construction is
//! collapsing an extract of an extract into one extract with absolute
//! bounds, which keeps `match_extract` a cheap structural probe.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Identity of a symbolic input variable. Ids are allocated in read order,
/// so a larger id always means a later read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub u32);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

pub const MAX_WIDTH: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
}

/// Comparison operators. Results are width-1 bitvectors (1 = true).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Slt,
    Sle,
    Sgt,
    Sge,
    Ult,
    Ule,
    Ugt,
    Uge,
}

impl CmpOp {
    /// The operator that holds exactly when `self` does not.
    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Slt => CmpOp::Sge,
            CmpOp::Sle => CmpOp::Sgt,
            CmpOp::Sgt => CmpOp::Sle,
            CmpOp::Sge => CmpOp::Slt,
            CmpOp::Ult => CmpOp::Uge,
            CmpOp::Ule => CmpOp::Ugt,
            CmpOp::Ugt => CmpOp::Ule,
            CmpOp::Uge => CmpOp::Ult,
        }
    }
}

#[derive(Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Var { id: VarId, name: String, width: u32 },
    Const { value: u64, width: u32 },
    Extract { high: u32, low: u32, child: BvExpr },
    Concat { hi: BvExpr, lo: BvExpr },
    ZeroExtend { extra: u32, child: BvExpr },
    SignExtend { extra: u32, child: BvExpr },
    Bin { op: BinOp, lhs: BvExpr, rhs: BvExpr },
    Not { child: BvExpr },
    Cmp { op: CmpOp, lhs: BvExpr, rhs: BvExpr },
    BoolAnd { lhs: BvExpr, rhs: BvExpr },
    BoolOr { lhs: BvExpr, rhs: BvExpr },
    BoolNot { child: BvExpr },
    /// Bitvector selection on a width-1 condition.
    Ite { cond: BvExpr, then_: BvExpr, else_: BvExpr },
}

#[derive(Debug, PartialEq, Eq, Hash)]
struct Inner {
    node: Node,
    width: u32,
}

/// A shared immutable bitvector expression.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BvExpr(Arc<Inner>);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExprError {
    #[error("width {0} out of range 1..={MAX_WIDTH}")]
    BadWidth(u32),
    #[error("constant {value:#x} does not fit in {width} bits")]
    ConstTooWide { value: u64, width: u32 },
    #[error("extract bounds {high}..{low} invalid for child width {width}")]
    BadExtract { high: u32, low: u32, width: u32 },
    #[error("concat width {0} exceeds {MAX_WIDTH} bits")]
    ConcatTooWide(u32),
    #[error("extension by {extra} bits exceeds {MAX_WIDTH} (child width {width})")]
    ExtendTooWide { extra: u32, width: u32 },
    #[error("operand widths differ: {0} vs {1}")]
    WidthMismatch(u32, u32),
    #[error("expected a width-1 operand, got width {0}")]
    NotBoolean(u32),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no binding for variable {name} ({id})")]
    Unbound { id: VarId, name: String },
    #[error("binding for {id} is {value:#x}, wider than {width} bits")]
    OverWideBinding { id: VarId, value: u64, width: u32 },
}

/// All-ones mask for a width in 1..=64.
pub fn mask(width: u32) -> u64 {
    debug_assert!((1..=MAX_WIDTH).contains(&width));
    if width == 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

fn sext(value: u64, width: u32) -> i64 {
    let shift = 64 - width;
    ((value << shift) as i64) >> shift
}

impl BvExpr {
    fn new(node: Node, width: u32) -> BvExpr {
        BvExpr(Arc::new(Inner { node, width }))
    }

    pub fn width(&self) -> u32 {
        self.0.width
    }

    pub fn node(&self) -> &Node {
        &self.0.node
    }

    pub fn var(id: VarId, name: &str, width: u32) -> Result<BvExpr, ExprError> {
        check_width(width)?;
        Ok(BvExpr::new(
            Node::Var {
                id,
                name: name.to_string(),
                width,
            },
            width,
        ))
    }

    pub fn constant(value: u64, width: u32) -> Result<BvExpr, ExprError> {
        check_width(width)?;
        if value & !mask(width) != 0 {
            return Err(ExprError::ConstTooWide { value, width });
        }
        Ok(BvExpr::new(Node::Const { value, width }, width))
    }

    /// Select bits `high..=low` of `child`. An extract of an extract is
    /// collapsed to a single node with bounds rebased onto the inner child.
    pub fn extract(high: u32, low: u32, child: &BvExpr) -> Result<BvExpr, ExprError> {
        if low > high || high >= child.width() {
            return Err(ExprError::BadExtract {
                high,
                low,
                width: child.width(),
            });
        }
        if let Node::Extract {
            high: _,
            low: inner_low,
            child: inner_child,
        } = child.node()
        {
            // inner selects bits inner_low.. of its child, so bit k of
            // `child` is bit inner_low+k of the inner child
            return BvExpr::extract(inner_low + high, inner_low + low, &inner_child.clone());
        }
        let width = high - low + 1;
        Ok(BvExpr::new(
            Node::Extract {
                high,
                low,
                child: child.clone(),
            },
            width,
        ))
    }

    /// `hi` occupies the upper bits of the result, `lo` the lower.
    pub fn concat(hi: &BvExpr, lo: &BvExpr) -> Result<BvExpr, ExprError> {
        let width = hi.width() + lo.width();
        if width > MAX_WIDTH {
            return Err(ExprError::ConcatTooWide(width));
        }
        Ok(BvExpr::new(
            Node::Concat {
                hi: hi.clone(),
                lo: lo.clone(),
            },
            width,
        ))
    }

    pub fn zero_extend(extra: u32, child: &BvExpr) -> Result<BvExpr, ExprError> {
        let width = child.width() + extra;
        if extra == 0 || width > MAX_WIDTH {
            return Err(ExprError::ExtendTooWide {
                extra,
                width: child.width(),
            });
        }
        Ok(BvExpr::new(
            Node::ZeroExtend {
                extra,
                child: child.clone(),
            },
            width,
        ))
    }

    pub fn sign_extend(extra: u32, child: &BvExpr) -> Result<BvExpr, ExprError> {
        let width = child.width() + extra;
        if extra == 0 || width > MAX_WIDTH {
            return Err(ExprError::ExtendTooWide {
                extra,
                width: child.width(),
            });
        }
        Ok(BvExpr::new(
            Node::SignExtend {
                extra,
                child: child.clone(),
            },
            width,
        ))
    }

    pub fn bin(op: BinOp, lhs: &BvExpr, rhs: &BvExpr) -> Result<BvExpr, ExprError> {
        if lhs.width() != rhs.width() {
            return Err(ExprError::WidthMismatch(lhs.width(), rhs.width()));
        }
        let width = lhs.width();
        Ok(BvExpr::new(
            Node::Bin {
                op,
                lhs: lhs.clone(),
                rhs: rhs.clone(),
            },
            width,
        ))
    }

    pub fn not(child: &BvExpr) -> BvExpr {
        let width = child.width();
        BvExpr::new(
            Node::Not {
                child: child.clone(),
            },
            width,
        )
    }

    pub fn cmp(op: CmpOp, lhs: &BvExpr, rhs: &BvExpr) -> Result<BvExpr, ExprError> {
        if lhs.width() != rhs.width() {
            return Err(ExprError::WidthMismatch(lhs.width(), rhs.width()));
        }
        Ok(BvExpr::new(
            Node::Cmp {
                op,
                lhs: lhs.clone(),
                rhs: rhs.clone(),
            },
            1,
        ))
    }

    pub fn bool_and(lhs: &BvExpr, rhs: &BvExpr) -> Result<BvExpr, ExprError> {
        check_bool(lhs)?;
        check_bool(rhs)?;
        Ok(BvExpr::new(
            Node::BoolAnd {
                lhs: lhs.clone(),
                rhs: rhs.clone(),
            },
            1,
        ))
    }

    pub fn bool_or(lhs: &BvExpr, rhs: &BvExpr) -> Result<BvExpr, ExprError> {
        check_bool(lhs)?;
        check_bool(rhs)?;
        Ok(BvExpr::new(
            Node::BoolOr {
                lhs: lhs.clone(),
                rhs: rhs.clone(),
            },
            1,
        ))
    }

    pub fn bool_not(child: &BvExpr) -> Result<BvExpr, ExprError> {
        check_bool(child)?;
        Ok(BvExpr::new(
            Node::BoolNot {
                child: child.clone(),
            },
            1,
        ))
    }

    pub fn ite(cond: &BvExpr, then_: &BvExpr, else_: &BvExpr) -> Result<BvExpr, ExprError> {
        check_bool(cond)?;
        if then_.width() != else_.width() {
            return Err(ExprError::WidthMismatch(then_.width(), else_.width()));
        }
        let width = then_.width();
        Ok(BvExpr::new(
            Node::Ite {
                cond: cond.clone(),
                then_: then_.clone(),
                else_: else_.clone(),
            },
            width,
        ))
    }

    /// If the expression is (after collapsing) an extract, return its
    /// bounds and the extracted child. Does not look through arithmetic,
    /// extensions or concats.
    pub fn match_extract(&self) -> Option<(u32, u32, BvExpr)> {
        match self.node() {
            Node::Extract { high, low, child } => Some((*high, *low, child.clone())),
            _ => None,
        }
    }

    /// Set of variables the expression depends on.
    pub fn vars(&self) -> BTreeSet<VarId> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<VarId>) {
        match self.node() {
            Node::Var { id, .. } => {
                out.insert(*id);
            }
            Node::Const { .. } => {}
            Node::Extract { child, .. }
            | Node::ZeroExtend { child, .. }
            | Node::SignExtend { child, .. }
            | Node::Not { child }
            | Node::BoolNot { child } => child.collect_vars(out),
            Node::Concat { hi, lo } => {
                hi.collect_vars(out);
                lo.collect_vars(out);
            }
            Node::Bin { lhs, rhs, .. }
            | Node::Cmp { lhs, rhs, .. }
            | Node::BoolAnd { lhs, rhs }
            | Node::BoolOr { lhs, rhs } => {
                lhs.collect_vars(out);
                rhs.collect_vars(out);
            }
            Node::Ite { cond, then_, else_ } => {
                cond.collect_vars(out);
                then_.collect_vars(out);
                else_.collect_vars(out);
            }
        }
    }

    /// Evaluate under `assignment`. The result is masked to the node width;
    /// comparisons and boolean nodes yield 0 or 1.
    pub fn eval(&self, assignment: &Assignment) -> Result<u64, EvalError> {
        let w = self.width();
        let v = match self.node() {
            Node::Var { id, name, width } => {
                let v = assignment
                    .get(*id)
                    .ok_or_else(|| EvalError::Unbound {
                        id: *id,
                        name: name.clone(),
                    })?;
                if v & !mask(*width) != 0 {
                    return Err(EvalError::OverWideBinding {
                        id: *id,
                        value: v,
                        width: *width,
                    });
                }
                v
            }
            Node::Const { value, .. } => *value,
            Node::Extract { high, low, child } => {
                let v = child.eval(assignment)?;
                (v >> low) & mask(high - low + 1)
            }
            Node::Concat { hi, lo } => {
                let h = hi.eval(assignment)?;
                let l = lo.eval(assignment)?;
                (h << lo.width()) | l
            }
            Node::ZeroExtend { child, .. } => child.eval(assignment)?,
            Node::SignExtend { extra, child } => {
                let v = child.eval(assignment)?;
                let cw = child.width();
                if v >> (cw - 1) & 1 == 1 {
                    v | (mask(*extra) << cw)
                } else {
                    v
                }
            }
            Node::Bin { op, lhs, rhs } => {
                let a = lhs.eval(assignment)?;
                let b = rhs.eval(assignment)?;
                match op {
                    BinOp::Add => a.wrapping_add(b) & mask(w),
                    BinOp::Sub => a.wrapping_sub(b) & mask(w),
                    BinOp::And => a & b,
                    BinOp::Or => a | b,
                    BinOp::Xor => a ^ b,
                }
            }
            Node::Not { child } => !child.eval(assignment)? & mask(w),
            Node::Cmp { op, lhs, rhs } => {
                let a = lhs.eval(assignment)?;
                let b = rhs.eval(assignment)?;
                let cw = lhs.width();
                let t = match op {
                    CmpOp::Eq => a == b,
                    CmpOp::Ne => a != b,
                    CmpOp::Slt => sext(a, cw) < sext(b, cw),
                    CmpOp::Sle => sext(a, cw) <= sext(b, cw),
                    CmpOp::Sgt => sext(a, cw) > sext(b, cw),
                    CmpOp::Sge => sext(a, cw) >= sext(b, cw),
                    CmpOp::Ult => a < b,
                    CmpOp::Ule => a <= b,
                    CmpOp::Ugt => a > b,
                    CmpOp::Uge => a >= b,
                };
                t as u64
            }
            Node::BoolAnd { lhs, rhs } => lhs.eval(assignment)? & rhs.eval(assignment)?,
            Node::BoolOr { lhs, rhs } => lhs.eval(assignment)? | rhs.eval(assignment)?,
            Node::BoolNot { child } => child.eval(assignment)? ^ 1,
            Node::Ite { cond, then_, else_ } => {
                if cond.eval(assignment)? == 1 {
                    then_.eval(assignment)?
                } else {
                    else_.eval(assignment)?
                }
            }
        };
        debug_assert_eq!(v & !mask(w), 0, "evaluation escaped node width");
        Ok(v)
    }
}

fn check_width(width: u32) -> Result<(), ExprError> {
    if (1..=MAX_WIDTH).contains(&width) {
        Ok(())
    } else {
        Err(ExprError::BadWidth(width))
    }
}

fn check_bool(e: &BvExpr) -> Result<(), ExprError> {
    if e.width() == 1 {
        Ok(())
    } else {
        Err(ExprError::NotBoolean(e.width()))
    }
}

/// Concrete values for symbolic variables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    map: BTreeMap<VarId, u64>,
}

impl Assignment {
    pub fn new() -> Assignment {
        Assignment::default()
    }

    pub fn set(&mut self, id: VarId, value: u64) {
        self.map.insert(id, value);
    }

    pub fn get(&self, id: VarId) -> Option<u64> {
        self.map.get(&id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, u64)> + '_ {
        self.map.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
