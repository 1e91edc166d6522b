//! Round-trip check of the SMT-LIB rendering: every generated script is
//! parsed back by a small s-expression interpreter written only for this
//! test, and both sides must agree on the value of every assertion under
//! many random assignments.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use truncheck_core::bitvec::{Assignment, BinOp, BvExpr, CmpOp, VarId};
use truncheck_core::smtlib::to_smtlib;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn tokenize(s: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '(' | ')' => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

fn parse_sexp(tokens: &[String], pos: &mut usize) -> Sexp {
    if tokens[*pos] == "(" {
        *pos += 1;
        let mut items = Vec::new();
        while tokens[*pos] != ")" {
            items.push(parse_sexp(tokens, pos));
        }
        *pos += 1;
        Sexp::List(items)
    } else {
        let atom = Sexp::Atom(tokens[*pos].clone());
        *pos += 1;
        atom
    }
}

fn parse_all(s: &str) -> Vec<Sexp> {
    let tokens = tokenize(s);
    let mut pos = 0;
    let mut out = Vec::new();
    while pos < tokens.len() {
        out.push(parse_sexp(&tokens, &mut pos));
    }
    out
}

fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

fn to_signed(value: u64, width: u32) -> i64 {
    let shift = 64 - width;
    ((value << shift) as i64) >> shift
}

/// Evaluate a bit-vector term, returning its value and width.
fn eval_term(s: &Sexp, env: &BTreeMap<String, (u64, u32)>) -> (u64, u32) {
    match s {
        Sexp::Atom(a) => {
            if let Some(hex) = a.strip_prefix("#x") {
                let width = 4 * hex.len() as u32;
                (u64::from_str_radix(hex, 16).unwrap(), width)
            } else if let Some(bits) = a.strip_prefix("#b") {
                let width = bits.len() as u32;
                (u64::from_str_radix(bits, 2).unwrap(), width)
            } else {
                env[a]
            }
        }
        Sexp::List(items) => match &items[0] {
            Sexp::Atom(head) => {
                let bin = |f: fn(u64, u64) -> u64| {
                    let (a, wa) = eval_term(&items[1], env);
                    let (b, wb) = eval_term(&items[2], env);
                    assert_eq!(wa, wb, "operand widths in {head}");
                    (f(a, b) & mask(wa), wa)
                };
                match head.as_str() {
                    "concat" => {
                        let (hi, wh) = eval_term(&items[1], env);
                        let (lo, wl) = eval_term(&items[2], env);
                        ((hi << wl) | lo, wh + wl)
                    }
                    "bvadd" => bin(u64::wrapping_add),
                    "bvsub" => bin(u64::wrapping_sub),
                    "bvand" => bin(|a, b| a & b),
                    "bvor" => bin(|a, b| a | b),
                    "bvxor" => bin(|a, b| a ^ b),
                    "bvnot" => {
                        let (a, w) = eval_term(&items[1], env);
                        (!a & mask(w), w)
                    }
                    "ite" => {
                        let cond = eval_bool(&items[1], env);
                        if cond {
                            eval_term(&items[2], env)
                        } else {
                            eval_term(&items[3], env)
                        }
                    }
                    other => panic!("unexpected operator {other}"),
                }
            }
            Sexp::List(indexed) => {
                // indexed operators: ((_ name args..) term)
                let Sexp::Atom(underscore) = &indexed[0] else {
                    panic!("bad indexed head")
                };
                assert_eq!(underscore, "_");
                let Sexp::Atom(name) = &indexed[1] else {
                    panic!("bad indexed name")
                };
                let num = |i: usize| -> u32 {
                    let Sexp::Atom(a) = &indexed[i] else {
                        panic!("bad index arg")
                    };
                    a.parse().unwrap()
                };
                let (v, w) = eval_term(&items[1], env);
                match name.as_str() {
                    "extract" => {
                        let (high, low) = (num(2), num(3));
                        ((v >> low) & mask(high - low + 1), high - low + 1)
                    }
                    "zero_extend" => (v, w + num(2)),
                    "sign_extend" => {
                        let extra = num(2);
                        (to_signed(v, w) as u64 & mask(w + extra), w + extra)
                    }
                    other => panic!("unexpected indexed operator {other}"),
                }
            }
        },
    }
}

/// Evaluate a Bool-sorted application such as `(bvult a b)` or `(= a b)`.
fn eval_bool(s: &Sexp, env: &BTreeMap<String, (u64, u32)>) -> bool {
    let Sexp::List(items) = s else {
        panic!("boolean position holds non-application {s:?}")
    };
    let Sexp::Atom(op) = &items[0] else {
        panic!("boolean head is not an atom")
    };
    let (a, wa) = eval_term(&items[1], env);
    let (b, wb) = eval_term(&items[2], env);
    assert_eq!(wa, wb, "comparison widths for {op}");
    let (sa, sb) = (to_signed(a, wa), to_signed(b, wb));
    match op.as_str() {
        "=" => a == b,
        "distinct" => a != b,
        "bvult" => a < b,
        "bvule" => a <= b,
        "bvugt" => a > b,
        "bvuge" => a >= b,
        "bvslt" => sa < sb,
        "bvsle" => sa <= sb,
        "bvsgt" => sa > sb,
        "bvsge" => sa >= sb,
        other => panic!("unexpected comparison {other}"),
    }
}

/// Pull declared variables and assertion bodies out of a full script.
fn digest_script(script: &str) -> (BTreeMap<String, u32>, Vec<Sexp>) {
    let mut decls = BTreeMap::new();
    let mut asserts = Vec::new();
    for form in parse_all(script) {
        let Sexp::List(items) = &form else { continue };
        let Some(Sexp::Atom(head)) = items.first() else {
            continue;
        };
        match head.as_str() {
            "declare-const" => {
                let Sexp::Atom(name) = &items[1] else {
                    panic!("bad declaration")
                };
                let Sexp::List(sort) = &items[2] else {
                    panic!("bad sort")
                };
                let Sexp::Atom(width) = &sort[2] else {
                    panic!("bad width")
                };
                decls.insert(name.clone(), width.parse().unwrap());
            }
            "assert" => {
                // shape is (assert (= BODY #b1))
                let Sexp::List(eq) = &items[1] else {
                    panic!("bad assert")
                };
                assert_eq!(eq[0], Sexp::Atom("=".into()));
                assert_eq!(eq[2], Sexp::Atom("#b1".into()));
                asserts.push(eq[1].clone());
            }
            _ => {}
        }
    }
    (decls, asserts)
}

struct GenVar {
    id: VarId,
    name: &'static str,
    width: u32,
}

const GEN_VARS: [GenVar; 3] = [
    GenVar {
        id: VarId(0),
        name: "x",
        width: 8,
    },
    GenVar {
        id: VarId(1),
        name: "y",
        width: 16,
    },
    GenVar {
        id: VarId(2),
        name: "z",
        width: 32,
    },
];

/// Build a random well-formed expression of exactly `width` bits.
fn gen_of_width(rng: &mut StdRng, width: u32, depth: u32) -> BvExpr {
    let leaf = |rng: &mut StdRng| {
        let candidates: Vec<&GenVar> = GEN_VARS.iter().filter(|v| v.width == width).collect();
        if !candidates.is_empty() && rng.gen_bool(0.6) {
            let v = candidates[rng.gen_range(0..candidates.len())];
            BvExpr::var(v.id, v.name, v.width).unwrap()
        } else {
            BvExpr::constant(rng.gen::<u64>() & mask(width), width).unwrap()
        }
    };
    if depth == 0 {
        return leaf(rng);
    }
    match rng.gen_range(0..9) {
        0 => leaf(rng),
        1 => {
            let ops = [BinOp::Add, BinOp::Sub, BinOp::And, BinOp::Or, BinOp::Xor];
            let op = ops[rng.gen_range(0..ops.len())];
            let lhs = gen_of_width(rng, width, depth - 1);
            let rhs = gen_of_width(rng, width, depth - 1);
            BvExpr::bin(op, &lhs, &rhs).unwrap()
        }
        2 => BvExpr::not(&gen_of_width(rng, width, depth - 1)),
        3 if width < 64 => {
            let wider = rng.gen_range(width + 1..=64);
            let low = rng.gen_range(0..=wider - width);
            let child = gen_of_width(rng, wider, depth - 1);
            BvExpr::extract(low + width - 1, low, &child).unwrap()
        }
        4 if width >= 2 => {
            let wh = rng.gen_range(1..width);
            let hi = gen_of_width(rng, wh, depth - 1);
            let lo = gen_of_width(rng, width - wh, depth - 1);
            BvExpr::concat(&hi, &lo).unwrap()
        }
        5 if width >= 2 => {
            let inner = rng.gen_range(1..width);
            let child = gen_of_width(rng, inner, depth - 1);
            if rng.gen_bool(0.5) {
                BvExpr::zero_extend(width - inner, &child).unwrap()
            } else {
                BvExpr::sign_extend(width - inner, &child).unwrap()
            }
        }
        6 => {
            let cond = gen_bool(rng, depth - 1);
            let then_ = gen_of_width(rng, width, depth - 1);
            let else_ = gen_of_width(rng, width, depth - 1);
            BvExpr::ite(&cond, &then_, &else_).unwrap()
        }
        7 if width == 1 => gen_bool(rng, depth - 1),
        _ => leaf(rng),
    }
}

/// Build a random 1-bit expression rooted at a comparison or connective.
fn gen_bool(rng: &mut StdRng, depth: u32) -> BvExpr {
    let cmp_ops = [
        CmpOp::Eq,
        CmpOp::Ne,
        CmpOp::Slt,
        CmpOp::Sle,
        CmpOp::Sgt,
        CmpOp::Sge,
        CmpOp::Ult,
        CmpOp::Ule,
        CmpOp::Ugt,
        CmpOp::Uge,
    ];
    if depth == 0 || rng.gen_bool(0.5) {
        let w = GEN_VARS[rng.gen_range(0..GEN_VARS.len())].width;
        let lhs = gen_of_width(rng, w, depth.saturating_sub(1));
        let rhs = gen_of_width(rng, w, depth.saturating_sub(1));
        let op = cmp_ops[rng.gen_range(0..cmp_ops.len())];
        return BvExpr::cmp(op, &lhs, &rhs).unwrap();
    }
    match rng.gen_range(0..3) {
        0 => {
            let a = gen_bool(rng, depth - 1);
            let b = gen_bool(rng, depth - 1);
            BvExpr::bool_and(&a, &b).unwrap()
        }
        1 => {
            let a = gen_bool(rng, depth - 1);
            let b = gen_bool(rng, depth - 1);
            BvExpr::bool_or(&a, &b).unwrap()
        }
        _ => BvExpr::bool_not(&gen_bool(rng, depth - 1)).unwrap(),
    }
}

#[test]
fn rendered_scripts_evaluate_like_the_expressions() {
    let mut rng = StdRng::seed_from_u64(0x5eed_cafe);
    for round in 0..200 {
        let n = rng.gen_range(1..=3);
        let constraints: Vec<BvExpr> = (0..n).map(|_| gen_bool(&mut rng, 4)).collect();
        let script = to_smtlib(&constraints).unwrap();
        let (decls, asserts) = digest_script(&script);
        assert_eq!(asserts.len(), constraints.len(), "round {round}");

        for _ in 0..20 {
            let mut assignment = Assignment::new();
            let mut env = BTreeMap::new();
            for v in &GEN_VARS {
                let value = rng.gen::<u64>() & mask(v.width);
                assignment.set(v.id, value);
                env.insert(v.name.to_string(), (value, v.width));
            }
            for (expr, body) in constraints.iter().zip(&asserts) {
                let expected = expr.eval(&assignment).unwrap();
                let (got, w) = eval_term(body, &env);
                assert_eq!(w, 1, "assert body width, round {round}");
                assert_eq!(got, expected, "round {round}: {script}");
            }
        }
        // every variable the interpreter saw must carry its true width
        for v in &GEN_VARS {
            if let Some(w) = decls.get(v.name) {
                assert_eq!(*w, v.width);
            }
        }
    }
}

#[test]
fn declarations_cover_exactly_the_used_variables() {
    let x = BvExpr::var(VarId(0), "x", 8).unwrap();
    let c = BvExpr::constant(3, 8).unwrap();
    let constraint = BvExpr::cmp(CmpOp::Ugt, &x, &c).unwrap();
    let (decls, asserts) = digest_script(&to_smtlib(&[constraint]).unwrap());
    assert_eq!(decls.len(), 1);
    assert_eq!(decls["x"], 8);
    assert_eq!(asserts.len(), 1);
}
