use std::fmt::Write;

use super::{ArrayAccess, BinOp, Direction, Expr, Index, KernelFunction, Local, Node, ParamKind, Program, ScalarType, Target};

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary(op, _, _) if op.is_comparison() => 1,
        Expr::Binary(BinOp::Add | BinOp::Sub, _, _) => 2,
        Expr::Binary(BinOp::Mul | BinOp::Div, _, _) => 3,
        Expr::Neg(_) => 4,
        Expr::Int(v) if *v < 0 => 4,
        Expr::Float(v) if v.is_sign_negative() => 4,
        _ => 5,
    }
}

fn op_precedence(op: BinOp) -> u8 {
    match op {
        BinOp::Add | BinOp::Sub => 2,
        BinOp::Mul | BinOp::Div => 3,
        _ => 1,
    }
}

fn float_literal(v: f64) -> String {
    // `{:?}` is the shortest representation that parses back to `v`.
    format!("{v:?}")
}

fn write_access(out: &mut String, acc: &ArrayAccess) {
    out.push_str(&acc.array);
    for idx in &acc.indices {
        out.push('[');
        match idx {
            Index::Affine(a) => {
                let _ = write!(out, "{a}");
            }
            Index::Indirect(e) => write_expr(out, e),
        }
        out.push(']');
    }
}

fn write_expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Int(v) => {
            let _ = write!(out, "{v}");
        }
        Expr::Float(v) => out.push_str(&float_literal(*v)),
        Expr::Var(v) => out.push_str(v),
        Expr::Load(acc) => write_access(out, acc),
        Expr::Neg(inner) => {
            out.push('-');
            let literal = matches!(**inner, Expr::Int(_) | Expr::Float(_));
            if literal || precedence(inner) < 4 {
                out.push('(');
                write_expr(out, inner);
                out.push(')');
            } else {
                write_expr(out, inner);
            }
        }
        Expr::Binary(op @ (BinOp::Min | BinOp::Max), a, b) => {
            out.push_str(op.symbol());
            out.push('(');
            write_expr(out, a);
            out.push_str(", ");
            write_expr(out, b);
            out.push(')');
        }
        Expr::Binary(op, a, b) => {
            let p = op_precedence(*op);
            let wrap_left = precedence(a) < p;
            let wrap_right = precedence(b) <= p;
            write_wrapped(out, a, wrap_left);
            let _ = write!(out, " {} ", op.symbol());
            write_wrapped(out, b, wrap_right);
        }
        Expr::Select(c, a, b) => {
            out.push_str("select(");
            write_expr(out, c);
            out.push_str(", ");
            write_expr(out, a);
            out.push_str(", ");
            write_expr(out, b);
            out.push(')');
        }
    }
}

fn write_wrapped(out: &mut String, e: &Expr, wrap: bool) {
    if wrap {
        out.push('(');
        write_expr(out, e);
        out.push(')');
    } else {
        write_expr(out, e);
    }
}

/// Renders one expression in surface syntax.
pub fn print_expr(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e);
    s
}

fn type_name(t: ScalarType) -> &'static str {
    match t {
        ScalarType::Int => "int",
        ScalarType::Float => "float",
    }
}

fn write_locals(out: &mut String, locals: &[Local], indent: usize) {
    for l in locals {
        let _ = writeln!(out, "{:indent$}let {}: {};", "", l.name, type_name(l.ty));
    }
}

fn write_nodes(out: &mut String, nodes: &[Node], indent: usize) {
    for n in nodes {
        match n {
            Node::Stmt(s) => {
                let _ = write!(out, "{:indent$}", "");
                match &s.target {
                    Target::Local(name) => out.push_str(name),
                    Target::Array(acc) => write_access(out, acc),
                }
                out.push_str(" = ");
                write_expr(out, &s.value);
                out.push_str(";\n");
            }
            Node::Loop(l) => {
                let _ = write!(out, "{:indent$}for {} in [{}, {})", "", l.index, l.lower, l.upper);
                if l.step != 1 {
                    let _ = write!(out, " step {}", l.step);
                }
                out.push_str(" {\n");
                write_locals(out, &l.locals, indent + 4);
                write_nodes(out, &l.body, indent + 4);
                let _ = writeln!(out, "{:indent$}}}", "");
            }
        }
    }
}

fn write_function(out: &mut String, f: &KernelFunction, io: bool) {
    if io {
        out.push_str("io ");
    }
    let _ = write!(out, "func {}(", f.name);
    for (i, p) in f.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{}: ", p.name);
        match p.kind {
            ParamKind::ScalarInt | ParamKind::ScalarFloat => out.push_str(type_name(p.kind.elem())),
            ParamKind::ArrayInt | ParamKind::ArrayFloat => {
                let dir = match p.direction {
                    Direction::In => "in",
                    Direction::Out => "out",
                    Direction::InOut => "inout",
                };
                let _ = write!(out, "{dir} {}", type_name(p.kind.elem()));
                for e in &p.extents {
                    let _ = write!(out, "[{e}]");
                }
            }
        }
    }
    out.push_str(") {\n");
    write_locals(out, &f.locals, 4);
    write_nodes(out, &f.body, 4);
    out.push_str("}\n");
}

/// Renders a program in the canonical textual form accepted by
/// [`parse_program`](super::parse_program).
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for (i, f) in p.functions.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        write_function(&mut out, f, p.is_io(&f.name));
    }
    if let Some(entry) = &p.entry {
        let _ = writeln!(out, "\nentry {entry};");
    }
    out
}

/// The JSON mirror of the AST accepted by [`super::parse_program_json`].
pub fn print_program_json(p: &Program) -> String {
    serde_json::to_string_pretty(p).expect("the AST always serializes")
}
