//! Expression folding under exact IEEE rules.
//!
//! A float rewrite is applied only if it yields the same bits for every
//! finite operand value; rewrites that depend on the sign of zero consult a
//! "never -0.0" fact.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::cpu::{fmax, fmin, Array, ArrayData};
use crate::ir::{AffineExpr, BinOp, Expr, Index, ScalarType};

pub(crate) struct FoldCtx<'a> {
    pub arrays: &'a BTreeMap<String, Array>,
    /// `None` marks a name declared with conflicting types in different scopes.
    pub types: &'a HashMap<String, Option<ScalarType>>,
    pub array_types: &'a HashMap<String, ScalarType>,
}

/// What forward propagation knows about locals at a program point.
#[derive(Clone, Default)]
pub(crate) struct Facts {
    pub consts: HashMap<String, Expr>,
    pub never_neg_zero: HashSet<String>,
}

impl Facts {
    pub fn forget(&mut self, name: &str) {
        self.consts.remove(name);
        self.never_neg_zero.remove(name);
    }
}

pub(crate) fn is_literal(e: &Expr) -> bool {
    matches!(e, Expr::Int(_) | Expr::Float(_))
}

fn float_lit(e: &Expr) -> Option<f64> {
    match e {
        Expr::Float(v) => Some(*v),
        _ => None,
    }
}

fn int_lit(e: &Expr) -> Option<i64> {
    match e {
        Expr::Int(v) => Some(*v),
        _ => None,
    }
}

fn is_pos_zero(e: &Expr) -> bool {
    float_lit(e).is_some_and(|v| v == 0.0 && v.is_sign_positive())
}

fn is_neg_zero(e: &Expr) -> bool {
    float_lit(e).is_some_and(|v| v == 0.0 && v.is_sign_negative())
}

impl FoldCtx<'_> {
    pub fn type_of(&self, e: &Expr) -> Option<ScalarType> {
        match e {
            Expr::Int(_) => Some(ScalarType::Int),
            Expr::Float(_) => Some(ScalarType::Float),
            Expr::Var(v) => self.types.get(v).copied().flatten(),
            Expr::Load(acc) => self.array_types.get(&acc.array).copied(),
            Expr::Neg(a) => self.type_of(a),
            Expr::Binary(op, _, _) if op.is_comparison() => Some(ScalarType::Int),
            Expr::Binary(_, a, b) | Expr::Select(_, a, b) => match (self.type_of(a), self.type_of(b)) {
                (Some(ScalarType::Int), Some(ScalarType::Int)) => Some(ScalarType::Int),
                (Some(ScalarType::Float), _) | (_, Some(ScalarType::Float)) => Some(ScalarType::Float),
                _ => None,
            },
        }
    }

    /// The value can never be a NaN, assuming finite array contents and no
    /// overflow.
    fn nan_free(&self, e: &Expr) -> bool {
        match e {
            Expr::Int(_) => true,
            Expr::Float(v) => v.is_finite(),
            Expr::Var(_) => self.type_of(e) == Some(ScalarType::Int),
            Expr::Load(acc) => acc.indices.iter().all(|i| match i {
                Index::Affine(_) => true,
                Index::Indirect(x) => self.nan_free(x),
            }),
            Expr::Neg(a) => self.nan_free(a),
            Expr::Binary(BinOp::Div, _, _) => false,
            Expr::Binary(_, a, b) => self.nan_free(a) && self.nan_free(b),
            Expr::Select(c, a, b) => self.nan_free(c) && self.nan_free(a) && self.nan_free(b),
        }
    }

    /// The value can never be `-0.0`.
    pub fn never_neg_zero(&self, e: &Expr, facts: &Facts) -> bool {
        if self.type_of(e) == Some(ScalarType::Int) {
            return true;
        }
        match e {
            Expr::Float(_) => !is_neg_zero(e),
            Expr::Var(v) => facts.never_neg_zero.contains(v),
            // -0 + -0 is the only sum equal to -0.
            Expr::Binary(BinOp::Add, a, b) => self.never_neg_zero(a, facts) || self.never_neg_zero(b, facts),
            // -0 - +0 is the only difference equal to -0.
            Expr::Binary(BinOp::Sub, a, _) => self.never_neg_zero(a, facts),
            Expr::Select(_, a, b) => self.never_neg_zero(a, facts) && self.never_neg_zero(b, facts),
            _ => false,
        }
    }

    /// `x * 0.0` or `0.0 * x` (either zero sign) with a NaN-free `x`.
    fn is_zero_product(&self, e: &Expr) -> bool {
        match e {
            Expr::Binary(BinOp::Mul, a, b) => {
                let zero = |z: &Expr| float_lit(z) == Some(0.0);
                (zero(b) && self.nan_free(a)) || (zero(a) && self.nan_free(b))
            }
            _ => false,
        }
    }

    pub fn fold(&self, e: &Expr, facts: &Facts) -> Expr {
        match e {
            Expr::Int(_) | Expr::Float(_) => e.clone(),
            Expr::Var(v) => facts.consts.get(v).cloned().unwrap_or_else(|| e.clone()),
            Expr::Load(acc) => {
                let mut acc = acc.clone();
                for idx in &mut acc.indices {
                    if let Index::Indirect(x) = idx {
                        let folded = self.fold(x, facts);
                        *idx = match folded {
                            Expr::Int(c) => Index::Affine(AffineExpr::constant(c)),
                            other => Index::Indirect(Box::new(other)),
                        };
                    }
                }
                if let Some(a) = self.arrays.get(&acc.array) {
                    let consts: Option<Vec<i64>> = acc.indices.iter().map(|i| i.as_affine().and_then(AffineExpr::as_constant)).collect();
                    if let Some(consts) = consts {
                        if let Some(v) = lookup(a, &consts) {
                            return v;
                        }
                    }
                }
                Expr::Load(acc)
            }
            Expr::Neg(a) => negate(self.fold(a, facts)),
            Expr::Binary(op, a, b) => self.binary(*op, self.fold(a, facts), self.fold(b, facts), facts),
            Expr::Select(c, a, b) => {
                let c = self.fold(c, facts);
                let truth = match c {
                    Expr::Int(v) => Some(v != 0),
                    Expr::Float(v) => Some(v != 0.0),
                    _ => None,
                };
                match truth {
                    Some(true) => self.fold(a, facts),
                    Some(false) => self.fold(b, facts),
                    None => Expr::select(c, self.fold(a, facts), self.fold(b, facts)),
                }
            }
        }
    }

    fn binary(&self, op: BinOp, a: Expr, b: Expr, facts: &Facts) -> Expr {
        if is_literal(&a) && is_literal(&b) {
            if let Some(v) = eval_literal(op, &a, &b) {
                return v;
            }
        }
        let (ta, tb) = (self.type_of(&a), self.type_of(&b));
        match (ta, tb) {
            (Some(ScalarType::Int), Some(ScalarType::Int)) => int_rules(op, a, b),
            (Some(ScalarType::Float), Some(ScalarType::Float)) => self.float_rules(op, a, b, facts),
            _ => Expr::bin(op, a, b),
        }
    }

    fn float_rules(&self, op: BinOp, a: Expr, b: Expr, facts: &Facts) -> Expr {
        let nnz = |e: &Expr| self.never_neg_zero(e, facts);
        match op {
            BinOp::Mul => match (float_lit(&a), float_lit(&b)) {
                (_, Some(y)) if y == 1.0 => a,
                (Some(x), _) if x == 1.0 => b,
                (_, Some(y)) if y == -1.0 && matches!(a, Expr::Neg(_)) => negate(a),
                (Some(x), _) if x == -1.0 && matches!(b, Expr::Neg(_)) => negate(b),
                _ => Expr::bin(op, a, b),
            },
            BinOp::Add => {
                if is_neg_zero(&b) || ((is_pos_zero(&b) || self.is_zero_product(&b)) && nnz(&a)) {
                    a
                } else if is_neg_zero(&a) || ((is_pos_zero(&a) || self.is_zero_product(&a)) && nnz(&b)) {
                    b
                } else {
                    absorb_add(a, b)
                }
            }
            BinOp::Sub => {
                if is_pos_zero(&b) || ((is_neg_zero(&b) || self.is_zero_product(&b)) && nnz(&a)) {
                    a
                } else {
                    match negated(b) {
                        Ok(y) => Expr::bin(BinOp::Add, a, y),
                        Err(b) => Expr::bin(op, a, b),
                    }
                }
            }
            _ => Expr::bin(op, a, b),
        }
    }
}

fn int_rules(op: BinOp, a: Expr, b: Expr) -> Expr {
    let (la, lb) = (int_lit(&a), int_lit(&b));
    match op {
        BinOp::Add => match (la, lb, a, b) {
            (Some(0), _, _, b) => b,
            (_, Some(0), a, _) => a,
            (_, _, a, b) => absorb_add(a, b),
        },
        BinOp::Sub => match (la, lb, a, b) {
            (_, Some(0), a, _) => a,
            (Some(0), _, _, b) => negate(b),
            (_, _, a, b) => match negated(b) {
                Ok(y) => Expr::bin(BinOp::Add, a, y),
                Err(b) => Expr::bin(op, a, b),
            },
        },
        BinOp::Mul => match (la, lb, a, b) {
            (Some(0), _, _, _) | (_, Some(0), _, _) => Expr::Int(0),
            (Some(1), _, _, b) => b,
            (_, Some(1), a, _) => a,
            (Some(-1), _, _, b @ Expr::Neg(_)) => negate(b),
            (_, Some(-1), a @ Expr::Neg(_), _) => negate(a),
            (_, _, a, b) => Expr::bin(op, a, b),
        },
        _ => Expr::bin(op, a, b),
    }
}

/// `Ok(x)` when `e` is `-x`, `x * -1` or `-1 * x`; the operand otherwise.
/// Multiplies by -1 stay multiplies until an enclosing add or subtract
/// absorbs them, so no rewrite trades a multiply for a negation.
fn negated(e: Expr) -> Result<Expr, Expr> {
    let minus_one = |e: &Expr| matches!(e, Expr::Int(-1)) || float_lit(e) == Some(-1.0);
    match e {
        Expr::Neg(x) => Ok(*x),
        Expr::Binary(BinOp::Mul, a, b) if minus_one(&b) => Ok(*a),
        Expr::Binary(BinOp::Mul, a, b) if minus_one(&a) => Ok(*b),
        other => Err(other),
    }
}

/// `a + b` with a negated operand turned into a subtraction.
fn absorb_add(a: Expr, b: Expr) -> Expr {
    match negated(b) {
        Ok(y) => Expr::bin(BinOp::Sub, a, y),
        Err(b) => match negated(a) {
            Ok(x) => Expr::bin(BinOp::Sub, b, x),
            Err(a) => Expr::bin(BinOp::Add, a, b),
        },
    }
}

fn negate(e: Expr) -> Expr {
    match e {
        Expr::Int(v) => Expr::Int(v.wrapping_neg()),
        Expr::Float(v) => Expr::Float(-v),
        Expr::Neg(x) => *x,
        other => Expr::Neg(Box::new(other)),
    }
}

/// Evaluates `a op b` on literals exactly as the interpreter would.
fn eval_literal(op: BinOp, a: &Expr, b: &Expr) -> Option<Expr> {
    if let (Expr::Int(x), Expr::Int(y)) = (a, b) {
        let (x, y) = (*x, *y);
        return Some(Expr::Int(match op {
            BinOp::Add => x.wrapping_add(y),
            BinOp::Sub => x.wrapping_sub(y),
            BinOp::Mul => x.wrapping_mul(y),
            BinOp::Div => return None,
            BinOp::Min => x.min(y),
            BinOp::Max => x.max(y),
            BinOp::Lt => (x < y) as i64,
            BinOp::Le => (x <= y) as i64,
            BinOp::Gt => (x > y) as i64,
            BinOp::Ge => (x >= y) as i64,
            BinOp::Eq => (x == y) as i64,
            BinOp::Ne => (x != y) as i64,
        }));
    }
    let as_f = |e: &Expr| match e {
        Expr::Int(v) => *v as f64,
        Expr::Float(v) => *v,
        _ => unreachable!("literal operands only"),
    };
    let (x, y) = (as_f(a), as_f(b));
    Some(match op {
        BinOp::Add => Expr::Float(x + y),
        BinOp::Sub => Expr::Float(x - y),
        BinOp::Mul => Expr::Float(x * y),
        BinOp::Div => Expr::Float(x / y),
        BinOp::Min => Expr::Float(fmin(x, y)),
        BinOp::Max => Expr::Float(fmax(x, y)),
        BinOp::Lt => Expr::Int((x < y) as i64),
        BinOp::Le => Expr::Int((x <= y) as i64),
        BinOp::Gt => Expr::Int((x > y) as i64),
        BinOp::Ge => Expr::Int((x >= y) as i64),
        BinOp::Eq => Expr::Int((x == y) as i64),
        BinOp::Ne => Expr::Int((x != y) as i64),
    })
}

/// Element of a bound array as a literal, if the subscripts are in range.
fn lookup(a: &Array, idx: &[i64]) -> Option<Expr> {
    if idx.len() != a.shape.len() {
        return None;
    }
    let mut flat = 0usize;
    for (&i, &ext) in idx.iter().zip(&a.shape) {
        if i < 0 || i as usize >= ext {
            return None;
        }
        flat = flat * ext + i as usize;
    }
    match &a.data {
        ArrayData::Int(v) => v.get(flat).map(|x| Expr::Int(*x)),
        ArrayData::Float(v) => v.get(flat).map(|x| Expr::Float(*x)),
    }
}
