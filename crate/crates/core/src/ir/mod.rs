//! Restricted loop-nest IR.
//!
//! Every offloadable function is a static-control part: loop bounds and array
//! subscripts are affine in enclosing loop indices and integer scalar
//! parameters, and data values only influence `select` results, never the
//! iteration domain. The textual grammar lives in `docs/ir-grammar.ebnf`;
//! [`parse_program`] and [`print_program`] round-trip it, and the AST also
//! (de)serializes as JSON through serde.

mod affine;
mod parse;
mod print;
mod validate;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use affine::AffineExpr;
pub use parse::{parse_program, parse_program_json, ParseError};
pub use print::{print_expr, print_program, print_program_json};
pub use validate::{validate, ValidationReport, Violation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    Int,
    Float,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    ScalarInt,
    ScalarFloat,
    ArrayInt,
    ArrayFloat,
}

impl ParamKind {
    pub fn is_array(self) -> bool {
        matches!(self, ParamKind::ArrayInt | ParamKind::ArrayFloat)
    }

    pub fn elem(self) -> ScalarType {
        match self {
            ParamKind::ScalarInt | ParamKind::ArrayInt => ScalarType::Int,
            ParamKind::ScalarFloat | ParamKind::ArrayFloat => ScalarType::Float,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    In,
    Out,
    InOut,
}

impl Direction {
    pub fn is_read(self) -> bool {
        matches!(self, Direction::In | Direction::InOut)
    }

    pub fn is_written(self) -> bool {
        matches!(self, Direction::Out | Direction::InOut)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub direction: Direction,
    /// One extent per dimension; empty for scalars.
    #[serde(default)]
    pub extents: Vec<AffineExpr>,
}

impl Param {
    pub fn scalar(name: &str, ty: ScalarType) -> Self {
        Param {
            name: name.to_string(),
            kind: match ty {
                ScalarType::Int => ParamKind::ScalarInt,
                ScalarType::Float => ParamKind::ScalarFloat,
            },
            direction: Direction::In,
            extents: Vec::new(),
        }
    }

    pub fn array(name: &str, ty: ScalarType, direction: Direction, extents: Vec<AffineExpr>) -> Self {
        Param {
            name: name.to_string(),
            kind: match ty {
                ScalarType::Int => ParamKind::ArrayInt,
                ScalarType::Float => ParamKind::ArrayFloat,
            },
            direction,
            extents,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Local {
    pub name: String,
    pub ty: ScalarType,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl BinOp {
    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Min => "min",
            BinOp::Max => "max",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
        }
    }
}

/// One array subscript. Only `Affine` subscripts belong to a static-control
/// part; `Indirect` (data-dependent) subscripts are executable but make the
/// function ineligible for analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Index {
    Affine(AffineExpr),
    Indirect(Box<Expr>),
}

impl Index {
    pub fn as_affine(&self) -> Option<&AffineExpr> {
        match self {
            Index::Affine(a) => Some(a),
            Index::Indirect(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayAccess {
    pub array: String,
    pub indices: Vec<Index>,
}

impl ArrayAccess {
    pub fn affine(array: &str, indices: Vec<AffineExpr>) -> Self {
        ArrayAccess {
            array: array.to_string(),
            indices: indices.into_iter().map(Index::Affine).collect(),
        }
    }

    /// All subscripts, if every one of them is affine.
    pub fn affine_indices(&self) -> Option<Vec<&AffineExpr>> {
        self.indices.iter().map(Index::as_affine).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expr {
    Int(i64),
    Float(f64),
    /// Loop index, scalar parameter, or local.
    Var(String),
    Load(ArrayAccess),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Select(Box<Expr>, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn select(c: Expr, a: Expr, b: Expr) -> Expr {
        Expr::Select(Box::new(c), Box::new(a), Box::new(b))
    }

    /// Pre-order visit of this expression and every nested subexpression,
    /// including indirect subscripts.
    pub fn visit(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Int(_) | Expr::Float(_) | Expr::Var(_) => {}
            Expr::Load(acc) => {
                for idx in &acc.indices {
                    if let Index::Indirect(e) = idx {
                        e.visit(f);
                    }
                }
            }
            Expr::Neg(e) => e.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Select(c, a, b) => {
                c.visit(f);
                a.visit(f);
                b.visit(f);
            }
        }
    }

    pub fn mentions_var(&self, name: &str) -> bool {
        let mut found = false;
        self.visit(&mut |e| {
            if let Expr::Var(v) = e {
                found |= v == name;
            }
        });
        found
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Local(String),
    Array(ArrayAccess),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stmt {
    pub target: Target,
    pub value: Expr,
}

impl Stmt {
    pub fn local(name: &str, value: Expr) -> Self {
        Stmt {
            target: Target::Local(name.to_string()),
            value,
        }
    }

    pub fn store(access: ArrayAccess, value: Expr) -> Self {
        Stmt {
            target: Target::Array(access),
            value,
        }
    }
}

/// `for index in [lower, upper) step step { locals; body }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Loop {
    pub index: String,
    pub lower: AffineExpr,
    pub upper: AffineExpr,
    pub step: i64,
    #[serde(default)]
    pub locals: Vec<Local>,
    pub body: Vec<Node>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Loop(Loop),
    Stmt(Stmt),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelFunction {
    pub name: String,
    pub params: Vec<Param>,
    /// Function-scope scalars, live for one invocation.
    #[serde(default)]
    pub locals: Vec<Local>,
    pub body: Vec<Node>,
}

impl KernelFunction {
    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Names of integer scalar parameters, i.e. the symbolic sizes.
    pub fn size_params(&self) -> impl Iterator<Item = &str> {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::ScalarInt)
            .map(|p| p.name.as_str())
    }

    /// Visits every statement in textual order together with the loops
    /// enclosing it (outermost first).
    pub fn for_each_stmt<'a>(&'a self, f: &mut dyn FnMut(&'a Stmt, &[&'a Loop])) {
        fn walk<'a>(nodes: &'a [Node], stack: &mut Vec<&'a Loop>, f: &mut dyn FnMut(&'a Stmt, &[&'a Loop])) {
            for n in nodes {
                match n {
                    Node::Stmt(s) => f(s, stack),
                    Node::Loop(l) => {
                        stack.push(l);
                        walk(&l.body, stack, f);
                        stack.pop();
                    }
                }
            }
        }
        walk(&self.body, &mut Vec::new(), f);
    }

    /// Depth of the deepest loop nest.
    pub fn loop_depth(&self) -> usize {
        fn depth(nodes: &[Node]) -> usize {
            nodes
                .iter()
                .map(|n| match n {
                    Node::Loop(l) => 1 + depth(&l.body),
                    Node::Stmt(_) => 0,
                })
                .max()
                .unwrap_or(0)
        }
        depth(&self.body)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub functions: Vec<KernelFunction>,
    /// Required whenever `functions` is non-empty.
    #[serde(default)]
    pub entry: Option<String>,
    /// Functions that perform I/O; they are never profiled as candidates.
    #[serde(default)]
    pub io_functions: BTreeSet<String>,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&KernelFunction> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn is_io(&self, name: &str) -> bool {
        self.io_functions.contains(name)
    }
}
