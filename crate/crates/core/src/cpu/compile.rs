//! Lowering of a [`KernelFunction`] to a tree of closures over numbered slots.
//!
//! Scalars (parameters, loop indices, locals) live in a flat `u64` frame and
//! arrays in shared [`Buffer`]s of atomics, so disjoint iteration ranges of one
//! instance can run on several threads without copying.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering::Relaxed};

use super::{fmax, fmin, vcycle_cost, ExecError, IterationVector, OpKind};
use crate::cpu::memory::{Array, ArrayData, MemoryImage};
use crate::ir::{AffineExpr, BinOp, Direction, Expr, Index, KernelFunction, Local, Node, ParamKind, ScalarType, Target};

const LOAD: u64 = vcycle_cost(OpKind::Load);
const STORE: u64 = vcycle_cost(OpKind::Store);
const ADD: u64 = vcycle_cost(OpKind::AddSub);
const MUL: u64 = vcycle_cost(OpKind::Mul);
const DIV: u64 = vcycle_cost(OpKind::Div);
const SELECT: u64 = vcycle_cost(OpKind::Select);
const CMP: u64 = vcycle_cost(OpKind::Cmp);
const LOOP: u64 = vcycle_cost(OpKind::LoopOverhead);

pub(crate) struct Buffer {
    extents: Vec<usize>,
    cells: Vec<AtomicU64>,
}

#[derive(Clone, Copy, Debug)]
struct Fault {
    buf: usize,
    dim: usize,
    index: i64,
    extent: usize,
}

/// Scalar state of one executing agent.
#[derive(Clone, Debug)]
pub struct Frame {
    vals: Vec<u64>,
    cycles: u64,
    fault: Option<Fault>,
    active: Vec<usize>,
}

impl Frame {
    /// Virtual cycles charged to this frame so far.
    pub fn vcycles(&self) -> u64 {
        self.cycles
    }

    pub(crate) fn add_cycles(&mut self, c: u64) {
        self.cycles += c;
    }
}

type IFn = Box<dyn Fn(&mut Frame, &[Buffer]) -> i64 + Send + Sync>;
type FFn = Box<dyn Fn(&mut Frame, &[Buffer]) -> f64 + Send + Sync>;

enum TFn {
    I(IFn),
    F(FFn),
}

impl TFn {
    fn float(self) -> FFn {
        match self {
            TFn::F(f) => f,
            TFn::I(i) => Box::new(move |f, m| i(f, m) as f64),
        }
    }

    fn truth(self) -> IFn {
        match self {
            TFn::I(i) => i,
            TFn::F(x) => Box::new(move |f, m| (x(f, m) != 0.0) as i64),
        }
    }
}

struct Aff {
    c: i64,
    terms: Vec<(usize, i64)>,
}

impl Aff {
    #[inline]
    fn eval(&self, vals: &[u64]) -> i64 {
        let mut acc = self.c;
        for &(s, k) in &self.terms {
            acc = acc.wrapping_add(k.wrapping_mul(vals[s] as i64));
        }
        acc
    }
}

enum Dim {
    Affine(Aff),
    Indirect(IFn),
}

struct Addr {
    buf: usize,
    dims: Vec<Dim>,
}

impl Addr {
    #[inline]
    fn offset(&self, f: &mut Frame, m: &[Buffer]) -> Option<usize> {
        let b = &m[self.buf];
        let mut flat = 0usize;
        for (d, dim) in self.dims.iter().enumerate() {
            let idx = match dim {
                Dim::Affine(a) => a.eval(&f.vals),
                Dim::Indirect(e) => e(f, m),
            };
            let ext = b.extents[d];
            if idx < 0 || idx as u64 >= ext as u64 {
                f.fault.get_or_insert(Fault { buf: self.buf, dim: d, index: idx, extent: ext });
                return None;
            }
            flat = flat * ext + idx as usize;
        }
        Some(flat)
    }
}

enum StmtKind {
    SetI(usize, IFn),
    SetF(usize, FFn),
    StoreI(Addr, IFn),
    StoreF(Addr, FFn),
}

struct CStmt {
    id: usize,
    kind: StmtKind,
}

struct CLoop {
    id: usize,
    slot: usize,
    lower: Aff,
    upper: Aff,
    step: i64,
    body: Vec<CNode>,
}

enum CNode {
    Loop(CLoop),
    Stmt(CStmt),
}

struct ParamInfo {
    name: String,
    kind: ParamKind,
    direction: Direction,
    /// Frame slot for scalars, buffer index for arrays.
    at: usize,
    extents: Vec<Aff>,
}

/// A kernel lowered for execution. Reusable across invocations and threads.
pub struct CompiledKernel {
    name: String,
    params: Vec<ParamInfo>,
    n_slots: usize,
    top: Vec<CNode>,
    /// Loop index name and slot, by loop id.
    loops: Vec<(String, usize)>,
    buffer_names: Vec<String>,
}

/// Argument storage for one invocation of a [`CompiledKernel`].
pub struct Instance {
    buffers: Vec<Buffer>,
    init: Vec<u64>,
}

#[derive(Clone, Copy)]
enum Sym {
    Slot(usize, ScalarType),
    Buf(usize, ScalarType, usize),
}

struct Compiler {
    scopes: Vec<HashMap<String, Sym>>,
    n_slots: usize,
    loops: Vec<(String, usize)>,
    stmts: usize,
}

macro_rules! bin {
    ($a:expr, $b:expr, $cost:expr, $out:ident, |$x:ident, $y:ident| $body:expr) => {{
        let (a, b) = ($a, $b);
        TFn::$out(Box::new(move |f, m| {
            let $x = a(f, m);
            let $y = b(f, m);
            f.cycles += $cost;
            $body
        }))
    }};
}

impl Compiler {
    fn lookup(&self, name: &str) -> Result<Sym, String> {
        self.scopes
            .iter()
            .rev()
            .find_map(|s| s.get(name).copied())
            .ok_or_else(|| format!("unknown identifier `{name}`"))
    }

    fn slot(&mut self, name: &str, ty: ScalarType) -> usize {
        let s = self.n_slots;
        self.n_slots += 1;
        self.scopes.last_mut().unwrap().insert(name.to_string(), Sym::Slot(s, ty));
        s
    }

    fn declare(&mut self, locals: &[Local]) {
        for l in locals {
            self.slot(&l.name, l.ty);
        }
    }

    fn aff(&self, e: &AffineExpr) -> Result<Aff, String> {
        let mut terms = Vec::new();
        for (name, k) in e.terms() {
            match self.lookup(name)? {
                Sym::Slot(s, ScalarType::Int) => terms.push((s, k)),
                _ => return Err(format!("`{name}` is not an integer scalar")),
            }
        }
        Ok(Aff { c: e.constant_part(), terms })
    }

    fn addr(&self, array: &str, indices: &[Index]) -> Result<(Addr, ScalarType), String> {
        let (buf, elem, rank) = match self.lookup(array)? {
            Sym::Buf(b, t, r) => (b, t, r),
            Sym::Slot(..) => return Err(format!("`{array}` is not an array")),
        };
        if indices.len() != rank {
            return Err(format!("`{array}` expects {rank} subscripts"));
        }
        let mut dims = Vec::new();
        for idx in indices {
            dims.push(match idx {
                Index::Affine(a) => Dim::Affine(self.aff(a)?),
                Index::Indirect(e) => match self.expr(e)? {
                    TFn::I(i) => Dim::Indirect(i),
                    TFn::F(_) => return Err(format!("indirect subscript of `{array}` is not an integer")),
                },
            });
        }
        Ok((Addr { buf, dims }, elem))
    }

    fn expr(&self, e: &Expr) -> Result<TFn, String> {
        Ok(match e {
            Expr::Int(v) => {
                let v = *v;
                TFn::I(Box::new(move |_, _| v))
            }
            Expr::Float(v) => {
                let v = *v;
                TFn::F(Box::new(move |_, _| v))
            }
            Expr::Var(name) => match self.lookup(name)? {
                Sym::Slot(s, ScalarType::Int) => TFn::I(Box::new(move |f, _| f.vals[s] as i64)),
                Sym::Slot(s, ScalarType::Float) => TFn::F(Box::new(move |f, _| f64::from_bits(f.vals[s]))),
                Sym::Buf(..) => return Err(format!("array `{name}` used as a scalar")),
            },
            Expr::Load(acc) => {
                let (addr, elem) = self.addr(&acc.array, &acc.indices)?;
                let buf = addr.buf;
                match elem {
                    ScalarType::Int => TFn::I(Box::new(move |f, m| {
                        f.cycles += LOAD;
                        addr.offset(f, m).map_or(0, |o| m[buf].cells[o].load(Relaxed) as i64)
                    })),
                    ScalarType::Float => TFn::F(Box::new(move |f, m| {
                        f.cycles += LOAD;
                        addr.offset(f, m).map_or(0.0, |o| f64::from_bits(m[buf].cells[o].load(Relaxed)))
                    })),
                }
            }
            Expr::Neg(a) => match self.expr(a)? {
                TFn::I(a) => TFn::I(Box::new(move |f, m| {
                    let x = a(f, m);
                    f.cycles += ADD;
                    x.wrapping_neg()
                })),
                TFn::F(a) => TFn::F(Box::new(move |f, m| {
                    let x = a(f, m);
                    f.cycles += ADD;
                    -x
                })),
            },
            Expr::Binary(op, a, b) => self.binary(*op, self.expr(a)?, self.expr(b)?)?,
            Expr::Select(c, a, b) => {
                let c = self.expr(c)?.truth();
                match (self.expr(a)?, self.expr(b)?) {
                    (TFn::I(a), TFn::I(b)) => TFn::I(Box::new(move |f, m| {
                        let k = c(f, m);
                        f.cycles += SELECT;
                        if k != 0 {
                            a(f, m)
                        } else {
                            b(f, m)
                        }
                    })),
                    (a, b) => {
                        let (a, b) = (a.float(), b.float());
                        TFn::F(Box::new(move |f, m| {
                            let k = c(f, m);
                            f.cycles += SELECT;
                            if k != 0 {
                                a(f, m)
                            } else {
                                b(f, m)
                            }
                        }))
                    }
                }
            }
        })
    }

    fn binary(&self, op: BinOp, a: TFn, b: TFn) -> Result<TFn, String> {
        Ok(match (a, b) {
            (TFn::I(a), TFn::I(b)) => match op {
                BinOp::Add => bin!(a, b, ADD, I, |x, y| x.wrapping_add(y)),
                BinOp::Sub => bin!(a, b, ADD, I, |x, y| x.wrapping_sub(y)),
                BinOp::Mul => bin!(a, b, MUL, I, |x, y| x.wrapping_mul(y)),
                BinOp::Div => return Err("integer division".into()),
                BinOp::Min => bin!(a, b, CMP, I, |x, y| x.min(y)),
                BinOp::Max => bin!(a, b, CMP, I, |x, y| x.max(y)),
                BinOp::Lt => bin!(a, b, CMP, I, |x, y| (x < y) as i64),
                BinOp::Le => bin!(a, b, CMP, I, |x, y| (x <= y) as i64),
                BinOp::Gt => bin!(a, b, CMP, I, |x, y| (x > y) as i64),
                BinOp::Ge => bin!(a, b, CMP, I, |x, y| (x >= y) as i64),
                BinOp::Eq => bin!(a, b, CMP, I, |x, y| (x == y) as i64),
                BinOp::Ne => bin!(a, b, CMP, I, |x, y| (x != y) as i64),
            },
            (a, b) => {
                let (a, b) = (a.float(), b.float());
                match op {
                    BinOp::Add => bin!(a, b, ADD, F, |x, y| x + y),
                    BinOp::Sub => bin!(a, b, ADD, F, |x, y| x - y),
                    BinOp::Mul => bin!(a, b, MUL, F, |x, y| x * y),
                    BinOp::Div => bin!(a, b, DIV, F, |x, y| x / y),
                    BinOp::Min => bin!(a, b, CMP, F, |x, y| fmin(x, y)),
                    BinOp::Max => bin!(a, b, CMP, F, |x, y| fmax(x, y)),
                    BinOp::Lt => bin!(a, b, CMP, I, |x, y| (x < y) as i64),
                    BinOp::Le => bin!(a, b, CMP, I, |x, y| (x <= y) as i64),
                    BinOp::Gt => bin!(a, b, CMP, I, |x, y| (x > y) as i64),
                    BinOp::Ge => bin!(a, b, CMP, I, |x, y| (x >= y) as i64),
                    BinOp::Eq => bin!(a, b, CMP, I, |x, y| (x == y) as i64),
                    BinOp::Ne => bin!(a, b, CMP, I, |x, y| (x != y) as i64),
                }
            }
        })
    }

    fn nodes(&mut self, nodes: &[Node]) -> Result<Vec<CNode>, String> {
        let mut out = Vec::with_capacity(nodes.len());
        for n in nodes {
            out.push(match n {
                Node::Stmt(s) => {
                    let id = self.stmts;
                    self.stmts += 1;
                    let value = self.expr(&s.value)?;
                    let kind = match &s.target {
                        Target::Local(name) => match (self.lookup(name)?, value) {
                            (Sym::Slot(slot, ScalarType::Int), TFn::I(v)) => StmtKind::SetI(slot, v),
                            (Sym::Slot(slot, ScalarType::Float), v) => StmtKind::SetF(slot, v.float()),
                            _ => return Err(format!("bad assignment to `{name}`")),
                        },
                        Target::Array(acc) => {
                            let (addr, elem) = self.addr(&acc.array, &acc.indices)?;
                            match (elem, value) {
                                (ScalarType::Int, TFn::I(v)) => StmtKind::StoreI(addr, v),
                                (ScalarType::Float, v) => StmtKind::StoreF(addr, v.float()),
                                _ => return Err(format!("float stored into integer array `{}`", acc.array)),
                            }
                        }
                    };
                    CNode::Stmt(CStmt { id, kind })
                }
                Node::Loop(l) => {
                    let lower = self.aff(&l.lower)?;
                    let upper = self.aff(&l.upper)?;
                    if l.step <= 0 {
                        return Err(format!("loop `{}` has non-positive step", l.index));
                    }
                    self.scopes.push(HashMap::new());
                    let slot = self.slot(&l.index, ScalarType::Int);
                    let id = self.loops.len();
                    self.loops.push((l.index.clone(), slot));
                    self.declare(&l.locals);
                    let body = self.nodes(&l.body)?;
                    self.scopes.pop();
                    CNode::Loop(CLoop { id, slot, lower, upper, step: l.step, body })
                }
            });
        }
        Ok(out)
    }
}

fn trip_count(lo: i64, hi: i64, step: i64) -> u64 {
    if hi <= lo {
        0
    } else {
        ((hi as i128 - lo as i128 + step as i128 - 1) / step as i128) as u64
    }
}

impl CompiledKernel {
    /// Lowers `f`. Fails only on programs that `validate` rejects.
    pub fn compile(f: &KernelFunction) -> Result<Self, ExecError> {
        let invalid = |message: String| ExecError::Invalid { function: f.name.clone(), message };
        let mut c = Compiler { scopes: vec![HashMap::new()], n_slots: 0, loops: Vec::new(), stmts: 0 };
        let mut params = Vec::new();
        let mut buffer_names = Vec::new();
        for p in &f.params {
            let at = if p.kind.is_array() {
                let b = buffer_names.len();
                buffer_names.push(p.name.clone());
                c.scopes[0].insert(p.name.clone(), Sym::Buf(b, p.kind.elem(), p.extents.len()));
                b
            } else {
                c.slot(&p.name, p.kind.elem())
            };
            params.push((p, at));
        }
        let params = params
            .into_iter()
            .map(|(p, at)| {
                let extents = p.extents.iter().map(|e| c.aff(e)).collect::<Result<_, _>>()?;
                Ok(ParamInfo { name: p.name.clone(), kind: p.kind, direction: p.direction, at, extents })
            })
            .collect::<Result<Vec<_>, String>>()
            .map_err(invalid)?;
        c.declare(&f.locals);
        let top = c.nodes(&f.body).map_err(invalid)?;
        Ok(CompiledKernel { name: f.name.clone(), params, n_slots: c.n_slots, top, loops: c.loops, buffer_names })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Checks `mem` against the signature and copies it into fresh storage.
    /// `out` arrays start zeroed whatever `mem` holds for them.
    pub fn bind(&self, mem: &MemoryImage) -> Result<Instance, ExecError> {
        let bad = |param: &str, message: String| ExecError::BadArgument {
            function: self.name.clone(),
            param: param.to_string(),
            message,
        };
        let mut init = vec![0u64; self.n_slots];
        for p in self.params.iter().filter(|p| !p.kind.is_array()) {
            let v = mem.scalar(&p.name).ok_or_else(|| ExecError::MissingArgument {
                function: self.name.clone(),
                param: p.name.clone(),
            })?;
            if v.ty() != p.kind.elem() {
                return Err(bad(&p.name, format!("expected {:?} scalar", p.kind.elem())));
            }
            init[p.at] = v.to_bits();
        }
        let mut buffers = Vec::new();
        for p in self.params.iter().filter(|p| p.kind.is_array()) {
            let extents: Vec<usize> = p.extents.iter().map(|e| e.eval(&init).max(0) as usize).collect();
            let len: usize = extents.iter().product();
            let cells: Vec<AtomicU64> = match (p.direction, mem.array(&p.name)) {
                (Direction::Out, None) => (0..len).map(|_| AtomicU64::new(0)).collect(),
                (_, None) => {
                    return Err(ExecError::MissingArgument { function: self.name.clone(), param: p.name.clone() })
                }
                (dir, Some(a)) => {
                    if a.shape != extents {
                        return Err(bad(&p.name, format!("shape {:?} does not match extents {:?}", a.shape, extents)));
                    }
                    if a.len() != len {
                        return Err(bad(&p.name, format!("{} elements for shape {:?}", a.len(), a.shape)));
                    }
                    if a.elem() != p.kind.elem() {
                        return Err(bad(&p.name, format!("expected {:?} elements", p.kind.elem())));
                    }
                    if dir == Direction::Out {
                        (0..len).map(|_| AtomicU64::new(0)).collect()
                    } else {
                        (0..len).map(|i| AtomicU64::new(a.data.bits(i))).collect()
                    }
                }
            };
            buffers.push(Buffer { extents, cells });
        }
        Ok(Instance { buffers, init })
    }

    /// A frame holding the bound scalar arguments and nothing else.
    pub fn frame(&self, inst: &Instance) -> Frame {
        Frame { vals: inst.init.clone(), cycles: 0, fault: None, active: Vec::new() }
    }

    /// Runs the whole body; returns the virtual cycles spent.
    pub fn run(&self, inst: &Instance) -> Result<u64, ExecError> {
        let mut f = self.frame(inst);
        self.run_nodes(&self.top, &mut f, &inst.buffers)?;
        Ok(f.cycles)
    }

    pub fn top_level_len(&self) -> usize {
        self.top.len()
    }

    /// Trip count of top-level node `i` if it is a loop. Top-level bounds
    /// depend only on scalar parameters, so any frame of `inst` agrees.
    pub fn top_level_trip(&self, inst: &Instance, i: usize) -> Option<u64> {
        match &self.top[i] {
            CNode::Loop(l) => Some(trip_count(l.lower.eval(&inst.init), l.upper.eval(&inst.init), l.step)),
            CNode::Stmt(_) => None,
        }
    }

    /// Runs top-level node `i`. For a loop, `range` restricts execution to
    /// the iterations with those ordinals (0-based, clipped to the trip count).
    pub fn run_top(&self, inst: &Instance, i: usize, range: Option<Range<u64>>, f: &mut Frame) -> Result<(), ExecError> {
        match &self.top[i] {
            CNode::Loop(l) => self.run_loop(l, range, f, &inst.buffers),
            CNode::Stmt(s) => self.run_stmt(s, f, &inst.buffers),
        }
    }

    fn run_nodes(&self, nodes: &[CNode], f: &mut Frame, m: &[Buffer]) -> Result<(), ExecError> {
        for n in nodes {
            match n {
                CNode::Loop(l) => self.run_loop(l, None, f, m)?,
                CNode::Stmt(s) => self.run_stmt(s, f, m)?,
            }
        }
        Ok(())
    }

    fn run_loop(&self, l: &CLoop, range: Option<Range<u64>>, f: &mut Frame, m: &[Buffer]) -> Result<(), ExecError> {
        let lo = l.lower.eval(&f.vals);
        let trip = trip_count(lo, l.upper.eval(&f.vals), l.step);
        let r = range.unwrap_or(0..trip);
        let (t0, t1) = (r.start.min(trip), r.end.min(trip));
        f.active.push(l.id);
        for t in t0..t1 {
            f.vals[l.slot] = lo.wrapping_add((t as i64).wrapping_mul(l.step)) as u64;
            f.cycles += LOOP;
            self.run_nodes(&l.body, f, m)?;
        }
        f.active.pop();
        Ok(())
    }

    #[inline]
    fn run_stmt(&self, s: &CStmt, f: &mut Frame, m: &[Buffer]) -> Result<(), ExecError> {
        f.cycles += STORE;
        match &s.kind {
            StmtKind::SetI(slot, v) => {
                let x = v(f, m);
                f.vals[*slot] = x as u64;
            }
            StmtKind::SetF(slot, v) => {
                let x = v(f, m);
                f.vals[*slot] = x.to_bits();
            }
            StmtKind::StoreI(addr, v) => {
                let x = v(f, m);
                if let Some(o) = addr.offset(f, m) {
                    m[addr.buf].cells[o].store(x as u64, Relaxed);
                }
            }
            StmtKind::StoreF(addr, v) => {
                let x = v(f, m);
                if let Some(o) = addr.offset(f, m) {
                    m[addr.buf].cells[o].store(x.to_bits(), Relaxed);
                }
            }
        }
        match f.fault.take() {
            None => Ok(()),
            Some(fault) => Err(self.fault_error(s.id, fault, f)),
        }
    }

    fn fault_error(&self, stmt: usize, fault: Fault, f: &Frame) -> ExecError {
        let iteration = f
            .active
            .iter()
            .map(|&id| {
                let (name, slot) = &self.loops[id];
                (name.clone(), f.vals[*slot] as i64)
            })
            .collect();
        ExecError::OutOfBounds {
            function: self.name.clone(),
            stmt,
            array: self.buffer_names[fault.buf].clone(),
            dim: fault.dim,
            index: fault.index,
            extent: fault.extent,
            iteration: IterationVector(iteration),
        }
    }

    /// Bytes moved to the device (`in`/`inout` arrays) and back
    /// (`out`/`inout` arrays).
    pub fn transfer_bytes(&self, inst: &Instance) -> (u64, u64) {
        let (mut bytes_in, mut bytes_out) = (0, 0);
        for p in self.params.iter().filter(|p| p.kind.is_array()) {
            let bytes = inst.buffers[p.at].cells.len() as u64 * 8;
            if p.direction.is_read() {
                bytes_in += bytes;
            }
            if p.direction.is_written() {
                bytes_out += bytes;
            }
        }
        (bytes_in, bytes_out)
    }

    /// Copies the `out`/`inout` arrays of `inst` out.
    pub fn outputs(&self, inst: &Instance) -> MemoryImage {
        let mut img = MemoryImage::new();
        for p in self.params.iter().filter(|p| p.kind.is_array() && p.direction.is_written()) {
            let b = &inst.buffers[p.at];
            let bits = b.cells.iter().map(|c| c.load(Relaxed));
            let data = match p.kind.elem() {
                ScalarType::Int => ArrayData::Int(bits.map(|x| x as i64).collect()),
                ScalarType::Float => ArrayData::Float(bits.map(f64::from_bits).collect()),
            };
            img.arrays.insert(p.name.clone(), Array { shape: b.extents.clone(), data });
        }
        img
    }
}
