use std::collections::BTreeMap;

use serde::Serialize;

use super::transform::{constant_trip, MAX_UNROLL_TRIP};
use crate::cpu::OpKind;
use crate::ir::{BinOp, Expr, Index, KernelFunction, Node, Target};

/// Static operation counts of a kernel body. Loops with a constant trip of
/// at most 16 contribute trip × body; every other loop contributes a single
/// iteration, so for an image kernel the counts are per output element.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OpCounts(pub BTreeMap<OpKind, u64>);

impl OpCounts {
    pub fn get(&self, k: OpKind) -> u64 {
        self.0.get(&k).copied().unwrap_or(0)
    }

    fn add(&mut self, k: OpKind, n: u64) {
        if n > 0 {
            *self.0.entry(k).or_insert(0) += n;
        }
    }

    fn merge_scaled(&mut self, other: &OpCounts, factor: u64) {
        for (k, v) in &other.0 {
            self.add(*k, v * factor);
        }
    }

    /// True if no kind is counted more often than in `other`.
    pub fn le(&self, other: &OpCounts) -> bool {
        OpKind::ALL.iter().all(|k| self.get(*k) <= other.get(*k))
    }
}

fn expr_counts(e: &Expr, c: &mut OpCounts) {
    e.visit(&mut |x| match x {
        Expr::Load(_) => c.add(OpKind::Load, 1),
        Expr::Neg(_) | Expr::Binary(BinOp::Add | BinOp::Sub, _, _) => c.add(OpKind::AddSub, 1),
        Expr::Binary(BinOp::Mul, _, _) => c.add(OpKind::Mul, 1),
        Expr::Binary(BinOp::Div, _, _) => c.add(OpKind::Div, 1),
        Expr::Binary(_, _, _) => c.add(OpKind::Cmp, 1),
        Expr::Select(..) => c.add(OpKind::Select, 1),
        Expr::Int(_) | Expr::Float(_) | Expr::Var(_) => {}
    });
}

fn node_counts(nodes: &[Node]) -> OpCounts {
    let mut c = OpCounts::default();
    for n in nodes {
        match n {
            Node::Stmt(s) => {
                c.add(OpKind::Store, 1);
                expr_counts(&s.value, &mut c);
                if let Target::Array(acc) = &s.target {
                    for i in &acc.indices {
                        if let Index::Indirect(e) = i {
                            expr_counts(e, &mut c);
                        }
                    }
                }
            }
            Node::Loop(l) => {
                let mut body = node_counts(&l.body);
                body.add(OpKind::LoopOverhead, 1);
                let factor = match constant_trip(l) {
                    Some(t) if t <= MAX_UNROLL_TRIP => t as u64,
                    _ => 1,
                };
                c.merge_scaled(&body, factor);
            }
        }
    }
    c
}

pub fn static_op_counts(f: &KernelFunction) -> OpCounts {
    node_counts(&f.body)
}
