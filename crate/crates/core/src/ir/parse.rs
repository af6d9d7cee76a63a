//! Lexer and recursive-descent parser for the textual IR.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use super::{
    AffineExpr, ArrayAccess, BinOp, Direction, Expr, Index, KernelFunction, Local, Loop, Node, Param, ParamKind,
    Program, ScalarType, Stmt, Target,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("{line}:{col}: duplicate function `{name}`")]
    DuplicateFunction { line: usize, col: usize, name: String },
    #[error("{line}:{col}: unknown identifier `{name}`")]
    UnknownIdentifier { line: usize, col: usize, name: String },
    #[error("{line}:{col}: non-affine {what}")]
    NonAffine { line: usize, col: usize, what: String },
    #[error("invalid JSON program: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(u64),
    Float(f64),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const PUNCT: [&str; 20] = [
    "<=", ">=", "==", "!=", "(", ")", "[", "]", "{", "}", ",", ";", ":", "=", "+", "-", "*", "/", "<", ">",
];

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let s: String = chars[i..].iter().take_while(|c| c.is_ascii_alphanumeric() || **c == '_').collect();
            i += s.len();
            col += s.len();
            out.push(Token { tok: Tok::Ident(s), line: start_line, col: start_col });
            continue;
        }
        if c.is_ascii_digit() {
            let mut j = i;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            let mut is_float = false;
            if j < chars.len() && chars[j] == '.' && chars.get(j + 1).is_some_and(|c| c.is_ascii_digit()) {
                is_float = true;
                j += 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
            }
            if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                let mut k = j + 1;
                if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                    k += 1;
                }
                if k < chars.len() && chars[k].is_ascii_digit() {
                    is_float = true;
                    j = k;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
            }
            let text: String = chars[i..j].iter().collect();
            let tok = if is_float {
                Tok::Float(text.parse().map_err(|_| syntax(start_line, start_col, "bad float literal"))?)
            } else {
                Tok::Int(text.parse().map_err(|_| syntax(start_line, start_col, "integer literal out of range"))?)
            };
            col += j - i;
            i = j;
            out.push(Token { tok, line: start_line, col: start_col });
            continue;
        }
        let rest: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let p = PUNCT
            .iter()
            .find(|p| rest.starts_with(**p))
            .ok_or_else(|| syntax(line, col, &format!("unexpected character `{c}`")))?;
        i += p.len();
        col += p.len();
        out.push(Token { tok: Tok::Punct(p), line: start_line, col: start_col });
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

fn syntax(line: usize, col: usize, message: &str) -> ParseError {
    ParseError::Syntax { line, col, message: message.to_string() }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Binding {
    Param(ParamKind),
    Index,
    Local(ScalarType),
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    scopes: Vec<HashMap<String, Binding>>,
}

enum AffineFail {
    /// Depends on data (array read or local).
    Data,
    NonAffine,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn err(&self, msg: &str) -> ParseError {
        let (l, c) = self.here();
        syntax(l, c, msg)
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), ParseError> {
        if self.is_punct(p) {
            self.bump();
            Ok(())
        } else {
            Err(self.err(&format!("expected `{p}`")))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.err(&format!("expected `{kw}`")))
        }
    }

    fn ident(&mut self) -> Result<(String, usize, usize), ParseError> {
        let t = self.bump();
        match t.tok {
            Tok::Ident(s) => Ok((s, t.line, t.col)),
            _ => Err(syntax(t.line, t.col, "expected identifier")),
        }
    }

    fn lookup(&self, name: &str) -> Option<Binding> {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied())
    }

    fn scalar_type(&mut self) -> Result<ScalarType, ParseError> {
        if self.is_kw("int") {
            self.bump();
            Ok(ScalarType::Int)
        } else if self.is_kw("float") {
            self.bump();
            Ok(ScalarType::Float)
        } else {
            Err(self.err("expected `int` or `float`"))
        }
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        let mut functions: Vec<KernelFunction> = Vec::new();
        let mut io_functions = BTreeSet::new();
        let mut entry = None;
        while *self.peek() != Tok::Eof {
            if self.is_kw("entry") {
                self.bump();
                let (name, l, c) = self.ident()?;
                self.expect_punct(";")?;
                entry = Some((name, l, c));
                continue;
            }
            let is_io = if self.is_kw("io") {
                self.bump();
                true
            } else {
                false
            };
            self.expect_kw("func")?;
            let (name, l, c) = self.ident()?;
            if functions.iter().any(|f| f.name == name) {
                return Err(ParseError::DuplicateFunction { line: l, col: c, name });
            }
            let f = self.function_rest(name)?;
            if is_io {
                io_functions.insert(f.name.clone());
            }
            functions.push(f);
        }
        let entry = match entry {
            Some((name, l, c)) => {
                if !functions.iter().any(|f| f.name == name) {
                    return Err(ParseError::UnknownIdentifier { line: l, col: c, name });
                }
                Some(name)
            }
            None => functions.first().map(|f| f.name.clone()),
        };
        Ok(Program { functions, entry, io_functions })
    }

    fn function_rest(&mut self, name: String) -> Result<KernelFunction, ParseError> {
        self.expect_punct("(")?;
        // Extents may refer to any scalar parameter, so they are resolved
        // after the whole list is read.
        let mut raw: Vec<(Param, Vec<(Expr, usize, usize)>)> = Vec::new();
        while !self.is_punct(")") {
            if !raw.is_empty() {
                self.expect_punct(",")?;
            }
            let (pname, _, _) = self.ident()?;
            self.expect_punct(":")?;
            let direction = if self.is_kw("in") {
                Some(Direction::In)
            } else if self.is_kw("out") {
                Some(Direction::Out)
            } else if self.is_kw("inout") {
                Some(Direction::InOut)
            } else {
                None
            };
            match direction {
                None => {
                    let ty = self.scalar_type()?;
                    raw.push((Param::scalar(&pname, ty), Vec::new()));
                }
                Some(direction) => {
                    self.bump();
                    let ty = self.scalar_type()?;
                    let mut dims = Vec::new();
                    while self.is_punct("[") {
                        self.bump();
                        let (l, c) = self.here();
                        let e = self.expr_unresolved()?;
                        dims.push((e, l, c));
                        self.expect_punct("]")?;
                    }
                    if dims.is_empty() {
                        return Err(self.err("array parameter needs at least one extent"));
                    }
                    raw.push((Param::array(&pname, ty, direction, Vec::new()), dims));
                }
            }
        }
        self.bump();
        let mut scope = HashMap::new();
        for (p, _) in &raw {
            scope.insert(p.name.clone(), Binding::Param(p.kind));
        }
        self.scopes = vec![scope];
        let mut params = Vec::new();
        for (mut p, dims) in raw {
            for (e, l, c) in dims {
                self.resolve(&e, l, c)?;
                let a = self.to_affine(&e).map_err(|_| ParseError::NonAffine {
                    line: l,
                    col: c,
                    what: "array extent".into(),
                })?;
                p.extents.push(a);
            }
            params.push(p);
        }
        let (locals, body) = self.block()?;
        self.scopes.clear();
        Ok(KernelFunction { name, params, locals, body })
    }

    fn block(&mut self) -> Result<(Vec<Local>, Vec<Node>), ParseError> {
        self.expect_punct("{")?;
        let mut locals = Vec::new();
        while self.is_kw("let") {
            self.bump();
            let (name, _, _) = self.ident()?;
            self.expect_punct(":")?;
            let ty = self.scalar_type()?;
            self.expect_punct(";")?;
            self.scopes.last_mut().unwrap().insert(name.clone(), Binding::Local(ty));
            locals.push(Local { name, ty });
        }
        let mut body = Vec::new();
        while !self.is_punct("}") {
            if *self.peek() == Tok::Eof {
                return Err(self.err("unexpected end of input, expected `}`"));
            }
            body.push(self.node()?);
        }
        self.bump();
        Ok((locals, body))
    }

    fn node(&mut self) -> Result<Node, ParseError> {
        if self.is_kw("for") {
            self.bump();
            let (index, _, _) = self.ident()?;
            self.expect_kw("in")?;
            self.expect_punct("[")?;
            let lower = self.bound()?;
            self.expect_punct(",")?;
            let upper = self.bound()?;
            self.expect_punct(")")?;
            let step = if self.is_kw("step") {
                self.bump();
                match self.bump() {
                    Token { tok: Tok::Int(v), line, col } => {
                        i64::try_from(v).map_err(|_| syntax(line, col, "step out of range"))?
                    }
                    t => return Err(syntax(t.line, t.col, "expected integer step")),
                }
            } else {
                1
            };
            let mut scope = HashMap::new();
            scope.insert(index.clone(), Binding::Index);
            self.scopes.push(scope);
            let (locals, body) = self.block()?;
            self.scopes.pop();
            return Ok(Node::Loop(Loop { index, lower, upper, step, locals, body }));
        }
        let (name, l, c) = self.ident()?;
        let target = match self.lookup(&name) {
            None => return Err(ParseError::UnknownIdentifier { line: l, col: c, name }),
            Some(Binding::Param(k)) if k.is_array() => Target::Array(self.subscripts(name)?),
            Some(_) => Target::Local(name),
        };
        self.expect_punct("=")?;
        let value = self.expr()?;
        self.expect_punct(";")?;
        Ok(Node::Stmt(Stmt { target, value }))
    }

    fn bound(&mut self) -> Result<AffineExpr, ParseError> {
        let (l, c) = self.here();
        let e = self.expr()?;
        self.to_affine(&e).map_err(|_| ParseError::NonAffine { line: l, col: c, what: "loop bound".into() })
    }

    fn subscripts(&mut self, array: String) -> Result<ArrayAccess, ParseError> {
        let mut indices = Vec::new();
        if !self.is_punct("[") {
            return Err(self.err(&format!("array `{array}` needs subscripts")));
        }
        while self.is_punct("[") {
            self.bump();
            let (l, c) = self.here();
            let e = self.expr()?;
            self.expect_punct("]")?;
            let idx = match self.to_affine(&e) {
                Ok(a) => Index::Affine(a),
                Err(AffineFail::Data) => Index::Indirect(Box::new(e)),
                Err(AffineFail::NonAffine) if Self::reads_data(&e, self) => Index::Indirect(Box::new(e)),
                Err(AffineFail::NonAffine) => {
                    return Err(ParseError::NonAffine { line: l, col: c, what: "subscript".into() })
                }
            };
            indices.push(idx);
        }
        Ok(ArrayAccess { array, indices })
    }

    fn reads_data(e: &Expr, p: &Parser) -> bool {
        let mut data = false;
        e.visit(&mut |x| match x {
            Expr::Load(_) => data = true,
            Expr::Var(v) => data |= matches!(p.lookup(v), Some(Binding::Local(_))),
            _ => {}
        });
        data
    }

    fn to_affine(&self, e: &Expr) -> Result<AffineExpr, AffineFail> {
        match e {
            Expr::Int(v) => Ok(AffineExpr::constant(*v)),
            Expr::Var(v) => match self.lookup(v) {
                Some(Binding::Index) | Some(Binding::Param(ParamKind::ScalarInt)) => Ok(AffineExpr::var(v)),
                Some(Binding::Local(_)) => Err(AffineFail::Data),
                _ => Err(AffineFail::NonAffine),
            },
            Expr::Load(_) => Err(AffineFail::Data),
            Expr::Neg(a) => Ok(self.to_affine(a)?.scaled(-1)),
            Expr::Binary(BinOp::Add, a, b) => Ok(self.to_affine(a)?.plus(&self.to_affine(b)?)),
            Expr::Binary(BinOp::Sub, a, b) => Ok(self.to_affine(a)?.minus(&self.to_affine(b)?)),
            Expr::Binary(BinOp::Mul, a, b) => {
                let (x, y) = (self.to_affine(a)?, self.to_affine(b)?);
                match (x.as_constant(), y.as_constant()) {
                    (Some(k), _) => Ok(y.scaled(k)),
                    (_, Some(k)) => Ok(x.scaled(k)),
                    _ => Err(AffineFail::NonAffine),
                }
            }
            _ => {
                if Self::reads_data(e, self) {
                    Err(AffineFail::Data)
                } else {
                    Err(AffineFail::NonAffine)
                }
            }
        }
    }

    /// Name-checks an expression parsed before its scope was known.
    fn resolve(&self, e: &Expr, l: usize, c: usize) -> Result<(), ParseError> {
        let mut missing = None;
        e.visit(&mut |x| {
            let name = match x {
                Expr::Var(v) => v,
                Expr::Load(a) => &a.array,
                _ => return,
            };
            if missing.is_none() && self.lookup(name).is_none() {
                missing = Some(name.clone());
            }
        });
        match missing {
            Some(name) => Err(ParseError::UnknownIdentifier { line: l, col: c, name }),
            None => Ok(()),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.expr_impl(true)
    }

    fn expr_unresolved(&mut self) -> Result<Expr, ParseError> {
        self.expr_impl(false)
    }

    fn expr_impl(&mut self, check: bool) -> Result<Expr, ParseError> {
        let mut lhs = self.sum(check)?;
        loop {
            let op = match self.peek() {
                Tok::Punct("<") => BinOp::Lt,
                Tok::Punct("<=") => BinOp::Le,
                Tok::Punct(">") => BinOp::Gt,
                Tok::Punct(">=") => BinOp::Ge,
                Tok::Punct("==") => BinOp::Eq,
                Tok::Punct("!=") => BinOp::Ne,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.sum(check)?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn sum(&mut self, check: bool) -> Result<Expr, ParseError> {
        let mut lhs = self.term(check)?;
        loop {
            let op = match self.peek() {
                Tok::Punct("+") => BinOp::Add,
                Tok::Punct("-") => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term(check)?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn term(&mut self, check: bool) -> Result<Expr, ParseError> {
        let mut lhs = self.unary(check)?;
        loop {
            let op = match self.peek() {
                Tok::Punct("*") => BinOp::Mul,
                Tok::Punct("/") => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary(check)?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self, check: bool) -> Result<Expr, ParseError> {
        if self.is_punct("-") {
            let t = self.bump();
            // `-5` is a literal, `-(5)` is a negation.
            return match self.peek().clone() {
                Tok::Int(v) => {
                    self.bump();
                    if v > i64::MAX as u64 + 1 {
                        return Err(syntax(t.line, t.col, "integer literal out of range"));
                    }
                    Ok(Expr::Int((-(v as i128)) as i64))
                }
                Tok::Float(v) => {
                    self.bump();
                    Ok(Expr::Float(-v))
                }
                _ => Ok(Expr::Neg(Box::new(self.unary(check)?))),
            };
        }
        self.atom(check)
    }

    fn atom(&mut self, check: bool) -> Result<Expr, ParseError> {
        let t = self.bump();
        match t.tok {
            Tok::Int(v) => {
                let v = i64::try_from(v).map_err(|_| syntax(t.line, t.col, "integer literal out of range"))?;
                Ok(Expr::Int(v))
            }
            Tok::Float(v) => Ok(Expr::Float(v)),
            Tok::Punct("(") => {
                let e = self.expr_impl(check)?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(name) if (name == "select" || name == "min" || name == "max") && self.is_punct("(") => {
                self.bump();
                let a = self.expr_impl(check)?;
                self.expect_punct(",")?;
                let b = self.expr_impl(check)?;
                let e = if name == "select" {
                    self.expect_punct(",")?;
                    let c = self.expr_impl(check)?;
                    Expr::select(a, b, c)
                } else {
                    Expr::bin(if name == "min" { BinOp::Min } else { BinOp::Max }, a, b)
                };
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let binding = self.lookup(&name);
                if check && binding.is_none() {
                    return Err(ParseError::UnknownIdentifier { line: t.line, col: t.col, name });
                }
                let is_array = matches!(binding, Some(Binding::Param(k)) if k.is_array());
                if is_array || self.is_punct("[") {
                    if !is_array && check {
                        return Err(syntax(t.line, t.col, &format!("`{name}` is not an array")));
                    }
                    Ok(Expr::Load(self.subscripts(name)?))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            _ => Err(syntax(t.line, t.col, "expected expression")),
        }
    }
}

/// Parses the textual IR.
pub fn parse_program(src: &str) -> Result<Program, ParseError> {
    let toks = lex(src)?;
    Parser { toks, pos: 0, scopes: Vec::new() }.program()
}

/// Parses the JSON mirror of the AST.
pub fn parse_program_json(src: &str) -> Result<Program, ParseError> {
    let p: Program = serde_json::from_str(src).map_err(|e| ParseError::Json(e.to_string()))?;
    let mut seen = BTreeSet::new();
    for f in &p.functions {
        if !seen.insert(f.name.as_str()) {
            return Err(ParseError::DuplicateFunction { line: 0, col: 0, name: f.name.clone() });
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    const COPY: &str = "func copy(n: int, A: in float[n], B: out float[n]) {\n  for i in [0, n) { B[i] = A[i]; }\n}\n";

    #[test]
    fn parses_copy() {
        let p = parse_program(COPY).unwrap();
        assert_eq!(p.functions.len(), 1);
        assert_eq!(p.entry.as_deref(), Some("copy"));
        let f = &p.functions[0];
        assert_eq!(f.loop_depth(), 1);
        assert_eq!(f.params[1].direction, Direction::In);
    }

    #[test]
    fn non_affine_subscript_is_rejected() {
        let src = "func f(n: int, A: inout float[n]) { for i in [0, n) { A[i*i] = 1.0; } }";
        let err = parse_program(src).unwrap_err();
        assert!(matches!(err, ParseError::NonAffine { ref what, .. } if what == "subscript"), "{err}");
        assert!(err.to_string().contains("non-affine subscript"));
    }

    #[test]
    fn indirect_subscript_is_kept() {
        let src = "func f(n: int, B: in int[n], A: out float[n]) { for i in [0, n) { A[B[i]] = 1.0; } }";
        let p = parse_program(src).unwrap();
        let Node::Loop(l) = &p.functions[0].body[0] else { panic!() };
        let Node::Stmt(Stmt { target: Target::Array(acc), .. }) = &l.body[0] else { panic!() };
        assert!(matches!(acc.indices[0], Index::Indirect(_)));
    }

    #[test]
    fn reports_position_of_unknown_identifier() {
        let src = "func f(n: int, A: out float[n]) {\n  for i in [0, m) { A[i] = 0.0; }\n}";
        match parse_program(src).unwrap_err() {
            ParseError::UnknownIdentifier { line, col, name } => {
                assert_eq!((line, name.as_str()), (2, "m"));
                assert_eq!(col, 16);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn duplicate_function() {
        let src = format!("{COPY}{}", COPY);
        assert!(matches!(parse_program(&src), Err(ParseError::DuplicateFunction { .. })));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_program("func f( { }").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 1, .. }));
    }

    #[test]
    fn negative_literals_and_negation_differ() {
        let src = "func f(A: out float[2]) { A[0] = -1.5; A[1] = -(1.5); }";
        let p = parse_program(src).unwrap();
        let vals: Vec<_> = p.functions[0]
            .body
            .iter()
            .map(|n| match n {
                Node::Stmt(s) => s.value.clone(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(vals[0], Expr::Float(-1.5));
        assert_eq!(vals[1], Expr::Neg(Box::new(Expr::Float(1.5))));
    }

    #[test]
    fn io_and_entry() {
        let src = "io func log(A: in int[1]) { }\nfunc k(A: out int[1]) { A[0] = 1; }\nentry k;\n";
        let p = parse_program(src).unwrap();
        assert!(p.is_io("log"));
        assert_eq!(p.entry.as_deref(), Some("k"));
    }
}
