use std::collections::{BTreeSet, HashMap};
use std::fmt;

use super::{AffineExpr, ArrayAccess, BinOp, Expr, Index, KernelFunction, Local, Node, ParamKind, Program, ScalarType, Target};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    /// `function/path`, where path is a dot-separated node position.
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Sym {
    Param(ParamKind, bool),
    Index,
    Local(ScalarType),
}

struct Checker<'a> {
    func: &'a KernelFunction,
    scopes: Vec<HashMap<&'a str, Sym>>,
    /// Locals definitely assigned at the current point.
    assigned: Vec<BTreeSet<&'a str>>,
    written_arrays: BTreeSet<&'a str>,
    out: &'a mut Vec<Violation>,
    path: Vec<usize>,
}

impl<'a> Checker<'a> {
    fn loc(&self) -> String {
        let p: Vec<String> = self.path.iter().map(|i| i.to_string()).collect();
        if p.is_empty() {
            self.func.name.clone()
        } else {
            format!("{}/{}", self.func.name, p.join("."))
        }
    }

    fn report(&mut self, message: String) {
        let location = self.loc();
        self.out.push(Violation { location, message });
    }

    fn lookup(&self, name: &str) -> Option<Sym> {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied())
    }

    fn is_assigned(&self, name: &str) -> bool {
        self.assigned.iter().any(|s| s.contains(name))
    }

    fn declare_locals(&mut self, locals: &'a [Local]) {
        for l in locals {
            if self.lookup(&l.name).is_some() {
                self.report(format!("local `{}` shadows an existing name", l.name));
            }
            self.scopes.last_mut().unwrap().insert(&l.name, Sym::Local(l.ty));
        }
    }

    fn check_affine(&mut self, e: &AffineExpr, what: &str, allow_indices: bool) {
        for v in e.vars() {
            match self.lookup(v) {
                Some(Sym::Param(ParamKind::ScalarInt, _)) => {}
                Some(Sym::Index) if allow_indices => {}
                None => self.report(format!("{what} references undeclared name `{v}`")),
                Some(_) => self.report(format!("{what} references `{v}`, which is not an integer parameter{}", if allow_indices { " or loop index" } else { "" })),
            }
        }
    }

    fn check_access(&mut self, acc: &'a ArrayAccess) -> Option<ScalarType> {
        let Some(p) = self.func.param(&acc.array) else {
            self.report(format!("unknown array `{}`", acc.array));
            return None;
        };
        if !p.kind.is_array() {
            self.report(format!("`{}` is not an array", acc.array));
            return None;
        }
        if acc.indices.len() != p.extents.len() {
            self.report(format!(
                "`{}` has rank {} but is subscripted with {} indices",
                acc.array,
                p.extents.len(),
                acc.indices.len()
            ));
        }
        for idx in &acc.indices {
            match idx {
                Index::Affine(a) => self.check_affine(a, "subscript", true),
                Index::Indirect(e) => {
                    if let Some(ScalarType::Float) = self.type_of(e) {
                        self.report(format!("indirect subscript of `{}` is not an integer", acc.array));
                    }
                }
            }
        }
        Some(p.kind.elem())
    }

    fn type_of(&mut self, e: &'a Expr) -> Option<ScalarType> {
        match e {
            Expr::Int(_) => Some(ScalarType::Int),
            Expr::Float(v) => {
                if !v.is_finite() {
                    self.report("non-finite float literal".to_string());
                }
                Some(ScalarType::Float)
            }
            Expr::Var(name) => match self.lookup(name) {
                None => {
                    self.report(format!("unknown identifier `{name}`"));
                    None
                }
                Some(Sym::Index) => Some(ScalarType::Int),
                Some(Sym::Param(kind, _)) if kind.is_array() => {
                    self.report(format!("array `{name}` used without subscripts"));
                    None
                }
                Some(Sym::Param(kind, _)) => Some(kind.elem()),
                Some(Sym::Local(t)) => {
                    if !self.is_assigned(name) {
                        self.report(format!("local `{name}` may be read before it is written"));
                    }
                    Some(t)
                }
            },
            Expr::Load(acc) => self.check_access(acc),
            Expr::Neg(a) => self.type_of(a),
            Expr::Binary(op, a, b) => {
                let (ta, tb) = (self.type_of(a), self.type_of(b));
                let (ta, tb) = (ta?, tb?);
                if op.is_comparison() {
                    return Some(ScalarType::Int);
                }
                let both_int = ta == ScalarType::Int && tb == ScalarType::Int;
                if *op == BinOp::Div && both_int {
                    self.report("integer division is not part of the IR".to_string());
                }
                Some(if both_int { ScalarType::Int } else { ScalarType::Float })
            }
            Expr::Select(c, a, b) => {
                let tc = self.type_of(c);
                let (ta, tb) = (self.type_of(a), self.type_of(b));
                tc?;
                let (ta, tb) = (ta?, tb?);
                Some(if ta == ScalarType::Int && tb == ScalarType::Int { ScalarType::Int } else { ScalarType::Float })
            }
        }
    }

    fn nodes(&mut self, nodes: &'a [Node]) {
        for (i, n) in nodes.iter().enumerate() {
            self.path.push(i);
            match n {
                Node::Stmt(s) => {
                    let vt = self.type_of(&s.value);
                    let tt = match &s.target {
                        Target::Local(name) => match self.lookup(name) {
                            Some(Sym::Local(t)) => {
                                self.assigned.last_mut().unwrap().insert(name);
                                Some(t)
                            }
                            Some(Sym::Index) => {
                                self.report(format!("writes loop index `{name}`"));
                                None
                            }
                            Some(Sym::Param(..)) => {
                                self.report(format!("writes parameter `{name}`"));
                                None
                            }
                            None => {
                                self.report(format!("assignment to undeclared `{name}`"));
                                None
                            }
                        },
                        Target::Array(acc) => {
                            let t = self.check_access(acc);
                            if let Some(Sym::Param(_, writable)) = self.lookup(&acc.array) {
                                if !writable {
                                    self.report(format!("writes input array `{}`", acc.array));
                                }
                            }
                            self.written_arrays.insert(&acc.array);
                            t
                        }
                    };
                    if let (Some(ScalarType::Int), Some(ScalarType::Float)) = (tt, vt) {
                        self.report("float value assigned to an integer target".to_string());
                    }
                }
                Node::Loop(l) => {
                    self.check_affine(&l.lower, "loop bound", true);
                    self.check_affine(&l.upper, "loop bound", true);
                    if l.step <= 0 {
                        self.report(format!("loop `{}` has non-positive step {}", l.index, l.step));
                    }
                    if self.lookup(&l.index).is_some() {
                        self.report(format!("loop index `{}` shadows an existing name", l.index));
                    }
                    let mut scope = HashMap::new();
                    scope.insert(l.index.as_str(), Sym::Index);
                    self.scopes.push(scope);
                    // Writes inside the loop do not count as definite
                    // assignments after it: the loop may run zero times.
                    self.assigned.push(BTreeSet::new());
                    self.declare_locals(&l.locals);
                    self.nodes(&l.body);
                    self.assigned.pop();
                    self.scopes.pop();
                }
            }
            self.path.pop();
        }
    }
}

fn check_function(f: &KernelFunction, out: &mut Vec<Violation>) {
    let mut scope = HashMap::new();
    let mut seen = BTreeSet::new();
    for p in &f.params {
        if !seen.insert(p.name.as_str()) {
            out.push(Violation { location: f.name.clone(), message: format!("duplicate parameter `{}`", p.name) });
        }
        scope.insert(p.name.as_str(), Sym::Param(p.kind, p.direction.is_written()));
    }
    let mut c = Checker {
        func: f,
        scopes: vec![scope],
        assigned: vec![BTreeSet::new()],
        written_arrays: BTreeSet::new(),
        out,
        path: Vec::new(),
    };
    for p in &f.params {
        if p.kind.is_array() {
            if p.extents.is_empty() {
                c.report(format!("array `{}` has no extents", p.name));
            }
            for e in &p.extents {
                c.check_affine(e, &format!("extent of `{}`", p.name), false);
            }
        } else {
            if !p.extents.is_empty() {
                c.report(format!("scalar `{}` has extents", p.name));
            }
            if p.direction.is_written() {
                c.report(format!("scalar parameter `{}` must have direction in", p.name));
            }
        }
    }
    c.declare_locals(&f.locals);
    c.nodes(&f.body);
    let written = std::mem::take(&mut c.written_arrays);
    for p in &f.params {
        if p.kind.is_array() && p.direction.is_written() && !written.contains(p.name.as_str()) {
            c.report(format!("output array `{}` is never written", p.name));
        }
    }
}

/// Checks every structural invariant of the IR. Violations are data: an empty
/// report means the program is valid.
pub fn validate(p: &Program) -> ValidationReport {
    let mut violations = Vec::new();
    let mut names = BTreeSet::new();
    for f in &p.functions {
        if !names.insert(f.name.as_str()) {
            violations.push(Violation { location: f.name.clone(), message: "duplicate function".into() });
        }
    }
    match &p.entry {
        Some(e) if !names.contains(e.as_str()) => {
            violations.push(Violation { location: "program".into(), message: format!("entry `{e}` is not declared") })
        }
        None if !p.functions.is_empty() => {
            violations.push(Violation { location: "program".into(), message: "missing entry function".into() })
        }
        _ => {}
    }
    for io in &p.io_functions {
        if !names.contains(io.as_str()) {
            violations.push(Violation { location: "program".into(), message: format!("io function `{io}` is not declared") });
        }
    }
    for f in &p.functions {
        check_function(f, &mut violations);
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::super::{parse_program, Loop, Param, Stmt};
    use super::*;
    use crate::ir::Direction;

    fn single(f: KernelFunction) -> Program {
        Program { entry: Some(f.name.clone()), functions: vec![f], io_functions: BTreeSet::new() }
    }

    #[test]
    fn convolution_is_valid() {
        let src = "func conv(H: int, W: int, In: in float[H + 2][W + 2], K: in float[3][3], Out: out float[H][W]) {
            for y in [0, H) { for x in [0, W) {
                let s: float;
                s = 0.0;
                for dy in [0, 3) { for dx in [0, 3) { s = s + In[y + dy][x + dx] * K[dy][dx]; } }
                Out[y][x] = s;
            } } }";
        let r = validate(&parse_program(src).unwrap());
        assert!(r.is_valid(), "{r}");
    }

    #[test]
    fn undeclared_bound_name() {
        let f = KernelFunction {
            name: "f".into(),
            params: vec![Param::array("A", ScalarType::Float, Direction::Out, vec![AffineExpr::constant(4)])],
            locals: vec![],
            body: vec![Node::Loop(Loop {
                index: "i".into(),
                lower: AffineExpr::constant(0),
                upper: AffineExpr::var("m"),
                step: 1,
                locals: vec![],
                body: vec![Node::Stmt(Stmt::store(
                    ArrayAccess::affine("A", vec![AffineExpr::var("i")]),
                    Expr::Float(0.0),
                ))],
            })],
        };
        let r = validate(&single(f));
        assert_eq!(r.violations.len(), 1, "{r}");
        assert!(r.violations[0].message.contains("undeclared name `m`"));
    }

    #[test]
    fn writing_loop_index() {
        let src = "func f(n: int, A: out float[n]) { for i in [0, n) { A[i] = 1.0; i = 0; } }";
        let r = validate(&parse_program(src).unwrap());
        assert_eq!(r.violations.len(), 1, "{r}");
        assert!(r.violations[0].message.contains("writes loop index"));
        assert_eq!(r.violations[0].location, "f/0.1");
    }

    #[test]
    fn local_read_before_write() {
        let src = "func f(n: int, A: out float[n]) { for i in [0, n) { let t: float; A[i] = t; t = 1.0; } }";
        let r = validate(&parse_program(src).unwrap());
        assert_eq!(r.violations.len(), 1, "{r}");
    }

    #[test]
    fn integer_division_and_type_errors() {
        let src = "func f(n: int, A: out int[n], B: in float[n]) { for i in [0, n) { A[i] = i / 2; A[i] = B[i]; B[i] = 0.0; } }";
        let r = validate(&parse_program(src).unwrap());
        let msgs: Vec<_> = r.violations.iter().map(|v| v.message.as_str()).collect();
        assert!(msgs.iter().any(|m| m.contains("integer division")));
        assert!(msgs.iter().any(|m| m.contains("float value assigned")));
        assert!(msgs.iter().any(|m| m.contains("writes input array")));
        assert_eq!(msgs.len(), 3);
    }

    #[test]
    fn unwritten_output_and_bad_io() {
        let mut p = parse_program("func f(A: out float[2]) { }").unwrap();
        p.io_functions.insert("missing".into());
        let r = validate(&p);
        assert_eq!(r.violations.len(), 2, "{r}");
    }
}
