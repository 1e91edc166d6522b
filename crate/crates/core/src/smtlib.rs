//! SMT-LIB2 rendering of constraint lists.
//!
//! Used when enumeration gives up on a job: the constraints are written out
//! as a QF_BV script so an off-the-shelf solver can pick the problem up.
//! Booleans are width-1 bitvectors on our side, so each constraint is
//! asserted equal to `#b1` and relational operators are wrapped in `ite`
//! to convert the SMT Bool sort back to `(_ BitVec 1)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::bitvec::{BinOp, BvExpr, CmpOp, Node, VarId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SmtError {
    #[error("constraint has width {0}, expected 1")]
    NonBooleanConstraint(u32),
    #[error("variable {0} declared with widths {1} and {2}")]
    InconsistentVariable(VarId, u32, u32),
}

/// Render `constraints` as a complete QF_BV script. Declarations are sorted
/// by variable id so identical jobs always produce identical scripts.
pub fn to_smtlib(constraints: &[BvExpr]) -> Result<String, SmtError> {
    let mut vars: BTreeMap<VarId, (String, u32)> = BTreeMap::new();
    for c in constraints {
        if c.width() != 1 {
            return Err(SmtError::NonBooleanConstraint(c.width()));
        }
        collect_vars(c, &mut vars)?;
    }

    let mut out = String::new();
    out.push_str("(set-logic QF_BV)\n");
    for (id, (name, width)) in &vars {
        let _ = writeln!(out, "(declare-const {} (_ BitVec {}))", symbol(*id, name), width);
    }
    for c in constraints {
        let mut body = String::new();
        render(c, &vars, &mut body);
        let _ = writeln!(out, "(assert (= {body} #b1))");
    }
    out.push_str("(check-sat)\n(get-model)\n");
    Ok(out)
}

fn collect_vars(
    e: &BvExpr,
    vars: &mut BTreeMap<VarId, (String, u32)>,
) -> Result<(), SmtError> {
    match e.node() {
        Node::Var { id, name, width } => {
            if let Some((_, w)) = vars.get(id) {
                if *w != *width {
                    return Err(SmtError::InconsistentVariable(*id, *w, *width));
                }
            } else {
                vars.insert(*id, (name.clone(), *width));
            }
        }
        Node::Const { .. } => {}
        Node::Extract { child, .. }
        | Node::ZeroExtend { child, .. }
        | Node::SignExtend { child, .. }
        | Node::Not { child }
        | Node::BoolNot { child } => collect_vars(child, vars)?,
        Node::Concat { hi, lo } => {
            collect_vars(hi, vars)?;
            collect_vars(lo, vars)?;
        }
        Node::Bin { lhs, rhs, .. }
        | Node::Cmp { lhs, rhs, .. }
        | Node::BoolAnd { lhs, rhs }
        | Node::BoolOr { lhs, rhs } => {
            collect_vars(lhs, vars)?;
            collect_vars(rhs, vars)?;
        }
        Node::Ite { cond, then_, else_ } => {
            collect_vars(cond, vars)?;
            collect_vars(then_, vars)?;
            collect_vars(else_, vars)?;
        }
    }
    Ok(())
}

fn symbol(id: VarId, name: &str) -> String {
    let clean = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !name.chars().next().unwrap().is_ascii_digit();
    if clean {
        name.to_string()
    } else {
        format!("v{}", id.0)
    }
}

fn literal(value: u64, width: u32, out: &mut String) {
    if width % 4 == 0 {
        let digits = (width / 4) as usize;
        let _ = write!(out, "#x{value:0digits$x}");
    } else {
        let _ = write!(out, "#b");
        for i in (0..width).rev() {
            out.push(if value >> i & 1 == 1 { '1' } else { '0' });
        }
    }
}

fn render(e: &BvExpr, vars: &BTreeMap<VarId, (String, u32)>, out: &mut String) {
    match e.node() {
        Node::Var { id, .. } => {
            let (name, _) = &vars[id];
            out.push_str(&symbol(*id, name));
        }
        Node::Const { value, width } => literal(*value, *width, out),
        Node::Extract { high, low, child } => {
            let _ = write!(out, "((_ extract {high} {low}) ");
            render(child, vars, out);
            out.push(')');
        }
        Node::Concat { hi, lo } => {
            out.push_str("(concat ");
            render(hi, vars, out);
            out.push(' ');
            render(lo, vars, out);
            out.push(')');
        }
        Node::ZeroExtend { extra, child } => {
            let _ = write!(out, "((_ zero_extend {extra}) ");
            render(child, vars, out);
            out.push(')');
        }
        Node::SignExtend { extra, child } => {
            let _ = write!(out, "((_ sign_extend {extra}) ");
            render(child, vars, out);
            out.push(')');
        }
        Node::Bin { op, lhs, rhs } => {
            let name = match op {
                BinOp::Add => "bvadd",
                BinOp::Sub => "bvsub",
                BinOp::And => "bvand",
                BinOp::Or => "bvor",
                BinOp::Xor => "bvxor",
            };
            let _ = write!(out, "({name} ");
            render(lhs, vars, out);
            out.push(' ');
            render(rhs, vars, out);
            out.push(')');
        }
        Node::Not { child } => {
            out.push_str("(bvnot ");
            render(child, vars, out);
            out.push(')');
        }
        Node::Cmp { op, lhs, rhs } => {
            // relational operators yield Bool in SMT-LIB; fold back to BitVec 1
            let name = match op {
                CmpOp::Eq => "=",
                CmpOp::Ne => "distinct",
                CmpOp::Slt => "bvslt",
                CmpOp::Sle => "bvsle",
                CmpOp::Sgt => "bvsgt",
                CmpOp::Sge => "bvsge",
                CmpOp::Ult => "bvult",
                CmpOp::Ule => "bvule",
                CmpOp::Ugt => "bvugt",
                CmpOp::Uge => "bvuge",
            };
            let _ = write!(out, "(ite ({name} ");
            render(lhs, vars, out);
            out.push(' ');
            render(rhs, vars, out);
            out.push_str(") #b1 #b0)");
        }
        Node::BoolAnd { lhs, rhs } => {
            out.push_str("(bvand ");
            render(lhs, vars, out);
            out.push(' ');
            render(rhs, vars, out);
            out.push(')');
        }
        Node::BoolOr { lhs, rhs } => {
            out.push_str("(bvor ");
            render(lhs, vars, out);
            out.push(' ');
            render(rhs, vars, out);
            out.push(')');
        }
        Node::BoolNot { child } => {
            out.push_str("(bvnot ");
            render(child, vars, out);
            out.push(')');
        }
        Node::Ite { cond, then_, else_ } => {
            out.push_str("(ite (= ");
            render(cond, vars, out);
            out.push_str(" #b1) ");
            render(then_, vars, out);
            out.push(' ');
            render(else_, vars, out);
            out.push(')');
        }
    }
}
