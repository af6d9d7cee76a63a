//! Structural rewrites: substitution, unrolling, forward propagation, and
//! dead local-store elimination.

use std::collections::{HashMap, HashSet};

use super::fold::{is_literal, Facts, FoldCtx};
use crate::ir::{AffineExpr, ArrayAccess, Expr, Index, Local, Loop, Node, Stmt, Target};

/// Unrolling applies only to loops whose constant trip count is at most this.
pub const MAX_UNROLL_TRIP: i64 = 16;

pub(crate) trait Rewriter {
    fn var(&self, _name: &str) -> Option<Expr> {
        None
    }

    fn affine(&self, a: &AffineExpr) -> AffineExpr {
        a.clone()
    }

    fn local(&self, name: &str) -> String {
        name.to_string()
    }
}

pub(crate) struct Substitute<'a> {
    pub ints: &'a HashMap<String, i64>,
    pub floats: &'a HashMap<String, f64>,
}

impl Rewriter for Substitute<'_> {
    fn var(&self, name: &str) -> Option<Expr> {
        self.ints.get(name).map(|v| Expr::Int(*v)).or_else(|| self.floats.get(name).map(|v| Expr::Float(*v)))
    }

    fn affine(&self, a: &AffineExpr) -> AffineExpr {
        a.bind(&|n| self.ints.get(n).copied())
    }
}

struct Rename<'a> {
    from: &'a str,
    to: &'a str,
}

impl Rewriter for Rename<'_> {
    fn var(&self, name: &str) -> Option<Expr> {
        (name == self.from).then(|| Expr::var(self.to))
    }

    fn local(&self, name: &str) -> String {
        if name == self.from { self.to } else { name }.to_string()
    }
}

fn rewrite_access(acc: &ArrayAccess, r: &dyn Rewriter) -> ArrayAccess {
    ArrayAccess {
        array: acc.array.clone(),
        indices: acc
            .indices
            .iter()
            .map(|i| match i {
                Index::Affine(a) => Index::Affine(r.affine(a)),
                Index::Indirect(e) => Index::Indirect(Box::new(rewrite_expr(e, r))),
            })
            .collect(),
    }
}

pub(crate) fn rewrite_expr(e: &Expr, r: &dyn Rewriter) -> Expr {
    match e {
        Expr::Int(_) | Expr::Float(_) => e.clone(),
        Expr::Var(v) => r.var(v).unwrap_or_else(|| e.clone()),
        Expr::Load(acc) => Expr::Load(rewrite_access(acc, r)),
        Expr::Neg(a) => Expr::Neg(Box::new(rewrite_expr(a, r))),
        Expr::Binary(op, a, b) => Expr::bin(*op, rewrite_expr(a, r), rewrite_expr(b, r)),
        Expr::Select(c, a, b) => Expr::select(rewrite_expr(c, r), rewrite_expr(a, r), rewrite_expr(b, r)),
    }
}

pub(crate) fn rewrite_nodes(nodes: &[Node], r: &dyn Rewriter) -> Vec<Node> {
    nodes
        .iter()
        .map(|n| match n {
            Node::Stmt(s) => Node::Stmt(Stmt {
                target: match &s.target {
                    Target::Local(x) => Target::Local(r.local(x)),
                    Target::Array(acc) => Target::Array(rewrite_access(acc, r)),
                },
                value: rewrite_expr(&s.value, r),
            }),
            Node::Loop(l) => Node::Loop(Loop {
                index: l.index.clone(),
                lower: r.affine(&l.lower),
                upper: r.affine(&l.upper),
                step: l.step,
                locals: l.locals.iter().map(|x| Local { name: r.local(&x.name), ty: x.ty }).collect(),
                body: rewrite_nodes(&l.body, r),
            }),
        })
        .collect()
}

pub(crate) fn trip_count(lo: i64, hi: i64, step: i64) -> i64 {
    if hi <= lo {
        0
    } else {
        ((hi as i128 - lo as i128 + step as i128 - 1) / step as i128).min(i64::MAX as i128) as i64
    }
}

/// Constant trip count of `l`, if its bounds are constant.
pub(crate) fn constant_trip(l: &Loop) -> Option<i64> {
    Some(trip_count(l.lower.as_constant()?, l.upper.as_constant()?, l.step))
}

pub(crate) struct Unroller {
    /// Number of declarations of each local name in the function.
    pub decls: HashMap<String, usize>,
    pub changed: bool,
}

impl Unroller {
    fn fresh(&self, base: &str) -> String {
        (1..).map(|k| format!("{base}_{k}")).find(|n| !self.decls.contains_key(n)).unwrap()
    }

    /// Unrolls short constant-trip loops in `nodes`, hoisting their locals
    /// into `scope` (the locals of the enclosing loop or function).
    pub fn block(&mut self, nodes: Vec<Node>, scope: &mut Vec<Local>) -> Vec<Node> {
        let mut out = Vec::with_capacity(nodes.len());
        for n in nodes {
            let mut l = match n {
                Node::Stmt(s) => {
                    out.push(Node::Stmt(s));
                    continue;
                }
                Node::Loop(l) => l,
            };
            match constant_trip(&l) {
                Some(trip) if trip <= MAX_UNROLL_TRIP => {
                    self.changed = true;
                    let mut body = l.body;
                    for local in l.locals {
                        let existing = scope.iter().find(|x| x.name == local.name).map(|x| x.ty);
                        let count = self.decls.get(&local.name).copied().unwrap_or(1);
                        if existing == Some(local.ty) {
                            self.decls.insert(local.name.clone(), count.saturating_sub(1));
                        } else if existing.is_some() || count > 1 {
                            let to = self.fresh(&local.name);
                            body = rewrite_nodes(&body, &Rename { from: &local.name, to: &to });
                            self.decls.insert(local.name.clone(), count.saturating_sub(1));
                            self.decls.insert(to.clone(), 1);
                            scope.push(Local { name: to, ty: local.ty });
                        } else {
                            scope.push(local);
                        }
                    }
                    let lo = l.lower.as_constant().unwrap();
                    for t in 0..trip {
                        let v = lo.wrapping_add(t.wrapping_mul(l.step));
                        let copy = rewrite_nodes(&body, &SetIndex { name: &l.index, value: v });
                        out.extend(self.block(copy, scope));
                    }
                }
                _ => {
                    l.body = self.block(std::mem::take(&mut l.body), &mut l.locals);
                    out.push(Node::Loop(l));
                }
            }
        }
        out
    }
}

struct SetIndex<'a> {
    name: &'a str,
    value: i64,
}

impl Rewriter for SetIndex<'_> {
    fn var(&self, name: &str) -> Option<Expr> {
        (name == self.name).then_some(Expr::Int(self.value))
    }

    fn affine(&self, a: &AffineExpr) -> AffineExpr {
        a.substitute(self.name, &AffineExpr::constant(self.value))
    }
}

fn fold_access(acc: &ArrayAccess, cx: &FoldCtx, facts: &Facts) -> ArrayAccess {
    // Folding a load folds its subscripts; store targets are never bound
    // arrays, so the load itself survives.
    match cx.fold(&Expr::Load(acc.clone()), facts) {
        Expr::Load(folded) if folded.array == acc.array => folded,
        _ => acc.clone(),
    }
}

/// Locals assigned anywhere in `nodes`.
pub(crate) fn written_locals(nodes: &[Node], out: &mut HashSet<String>) {
    for n in nodes {
        match n {
            Node::Stmt(Stmt { target: Target::Local(x), .. }) => {
                out.insert(x.clone());
            }
            Node::Stmt(_) => {}
            Node::Loop(l) => written_locals(&l.body, out),
        }
    }
}

/// Names read anywhere in `nodes`.
pub(crate) fn reads(nodes: &[Node], out: &mut HashSet<String>) {
    for n in nodes {
        match n {
            Node::Stmt(s) => {
                expr_reads(&s.value, out);
                if let Target::Array(acc) = &s.target {
                    for i in &acc.indices {
                        if let Index::Indirect(e) = i {
                            expr_reads(e, out);
                        }
                    }
                }
            }
            Node::Loop(l) => reads(&l.body, out),
        }
    }
}

fn expr_reads(e: &Expr, out: &mut HashSet<String>) {
    e.visit(&mut |x| {
        if let Expr::Var(v) = x {
            out.insert(v.clone());
        }
    });
}

/// Folds every expression, propagating literal values and sign facts of
/// locals forward through straight-line code.
pub(crate) fn propagate(nodes: Vec<Node>, cx: &FoldCtx, facts: &mut Facts) -> Vec<Node> {
    let mut out = Vec::with_capacity(nodes.len());
    for n in nodes {
        match n {
            Node::Stmt(s) => {
                let value = cx.fold(&s.value, facts);
                match s.target {
                    Target::Local(x) => {
                        if value == Expr::Var(x.clone()) {
                            continue;
                        }
                        let nnz = cx.never_neg_zero(&value, facts);
                        facts.forget(&x);
                        if is_literal(&value) {
                            facts.consts.insert(x.clone(), value.clone());
                        }
                        if nnz {
                            facts.never_neg_zero.insert(x.clone());
                        }
                        out.push(Node::Stmt(Stmt { target: Target::Local(x), value }));
                    }
                    Target::Array(acc) => {
                        let acc = fold_access(&acc, cx, facts);
                        out.push(Node::Stmt(Stmt { target: Target::Array(acc), value }));
                    }
                }
            }
            Node::Loop(mut l) => {
                let mut written = HashSet::new();
                written_locals(&l.body, &mut written);
                written.extend(l.locals.iter().map(|x| x.name.clone()));
                for w in &written {
                    facts.forget(w);
                }
                let mut inner = facts.clone();
                l.body = propagate(l.body, cx, &mut inner);
                out.push(Node::Loop(l));
            }
        }
    }
    out
}

/// Removes assignments to locals whose value is never read, and loops left
/// without a body. `live_end` holds the locals that may be read after
/// `nodes` finish.
pub(crate) fn dead_stores(nodes: Vec<Node>, live_end: &HashSet<String>) -> Vec<Node> {
    let mut live = live_end.clone();
    let mut kept = Vec::with_capacity(nodes.len());
    for n in nodes.into_iter().rev() {
        match n {
            Node::Stmt(s) => {
                if let Target::Local(x) = &s.target {
                    if !live.remove(x) {
                        continue;
                    }
                }
                reads(std::slice::from_ref(&Node::Stmt(s.clone())), &mut live);
                kept.push(Node::Stmt(s));
            }
            Node::Loop(mut l) => {
                // A later iteration may read anything the body reads.
                let mut body_end = live.clone();
                reads(&l.body, &mut body_end);
                for x in &l.locals {
                    body_end.remove(&x.name);
                }
                l.body = dead_stores(l.body, &body_end);
                if l.body.is_empty() {
                    continue;
                }
                reads(&l.body, &mut live);
                kept.push(Node::Loop(l));
            }
        }
    }
    kept.reverse();
    kept
}

/// Drops local declarations that are no longer referenced.
pub(crate) fn prune_locals(nodes: &mut [Node], used: &HashSet<String>) {
    for n in nodes {
        if let Node::Loop(l) = n {
            l.locals.retain(|x| used.contains(&x.name));
            prune_locals(&mut l.body, used);
        }
    }
}

/// Every local name referenced by a read or a write.
pub(crate) fn referenced(nodes: &[Node]) -> HashSet<String> {
    let mut used = HashSet::new();
    reads(nodes, &mut used);
    written_locals(nodes, &mut used);
    used
}
