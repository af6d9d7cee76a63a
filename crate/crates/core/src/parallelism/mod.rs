//! Loop-level parallelism verdicts for static-control kernels.
//!
//! Array references are tested pairwise with [`dependence_test`]. Scalars
//! declared in a loop's `locals` are private to an iteration of that loop, so
//! they only constrain loops nested inside the declaring one.

mod dependence;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub use dependence::{dependence_test, Access, AccessPair, DependenceResult, LoopDomain};

use crate::ir::{BinOp, Expr, Index, KernelFunction, Node, Target};

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("size parameter `{0}` is unbound; analysis deferred until sizes are known")]
    UnboundSize(String),
    #[error("not a static-control part: {}", .0.join("; "))]
    NotScop(Vec<String>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Distance {
    Known(i64),
    Unknown,
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distance::Known(d) => write!(f, "{d}"),
            Distance::Unknown => f.write_str("*"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DepKind {
    Flow,
    Anti,
    Output,
}

/// A possible dependence between two statement instances, one distance
/// component per common loop (outermost first).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DependenceEdge {
    /// Array or scalar the two accesses share.
    pub variable: String,
    pub source_stmt: usize,
    pub sink_stmt: usize,
    pub distance: Vec<Distance>,
    pub kind: DepKind,
    pub reduction: bool,
}

impl DependenceEdge {
    /// True if the edge may cross iterations of the loop at `level` while
    /// every outer index stays equal.
    pub fn carried_at(&self, level: usize) -> bool {
        level < self.distance.len()
            && self.distance[..level].iter().all(|d| matches!(d, Distance::Known(0) | Distance::Unknown))
            && self.distance[level] != Distance::Known(0)
    }

    /// Carried at `level` with every component up to it known.
    fn exactly_carried_at(&self, level: usize) -> bool {
        self.carried_at(level) && self.distance[..=level].iter().all(|d| matches!(d, Distance::Known(_)))
    }
}

impl fmt::Display for DependenceEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            DepKind::Flow => "flow",
            DepKind::Anti => "anti",
            DepKind::Output => "output",
        };
        let dist: Vec<String> = self.distance.iter().map(|d| d.to_string()).collect();
        write!(f, "{kind}:{}:s{}->s{}:({})", self.variable, self.source_stmt, self.sink_stmt, dist.join(";"))?;
        if self.reduction {
            f.write_str(":reduction")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Parallel,
    Sequential,
    UnknownTreatedSequential,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Parallel => "parallel",
            Verdict::Sequential => "sequential",
            Verdict::UnknownTreatedSequential => "unknown-treated-sequential",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoopReport {
    /// Dot-separated loop ordinals, e.g. `0.1` is the second loop inside the
    /// first top-level loop.
    pub path: String,
    pub index: String,
    pub depth: usize,
    /// Position of the enclosing top-level node in the function body.
    pub top_node: usize,
    pub verdict: Verdict,
    /// Sequential only because of recognized reductions.
    pub reduction: bool,
    pub edges: Vec<DependenceEdge>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParallelismReport {
    pub function: String,
    pub loops: Vec<LoopReport>,
    /// Function-scope scalars that some loop reduces into.
    pub function_reductions: Vec<String>,
}

impl ParallelismReport {
    pub fn by_path(&self, path: &str) -> Option<&LoopReport> {
        self.loops.iter().find(|l| l.path == path)
    }

    pub fn by_index(&self, index: &str) -> Option<&LoopReport> {
        self.loops.iter().find(|l| l.index == index)
    }

    /// `function,loop_path,verdict,reduction,edges` with edges joined by `|`.
    pub fn dump_lines(&self) -> Vec<String> {
        self.loops
            .iter()
            .map(|l| {
                let edges: Vec<String> = l.edges.iter().map(|e| e.to_string()).collect();
                format!("{},{},{},{},{}", self.function, l.path, l.verdict.as_str(), l.reduction, edges.join("|"))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScopReport {
    pub is_scop: bool,
    pub reasons: Vec<String>,
}

/// A function is a static-control part if every subscript is affine. Loop
/// bounds are affine by construction of the IR and kernels contain no calls.
pub fn detect_scop(f: &KernelFunction) -> ScopReport {
    let mut reasons = Vec::new();
    let mut stmt = 0;
    f.for_each_stmt(&mut |s, _| {
        let mut indirect = Vec::new();
        let mut check = |idx: &[Index], array: &str| {
            if idx.iter().any(|i| matches!(i, Index::Indirect(_))) {
                indirect.push(array.to_string());
            }
        };
        if let Target::Array(acc) = &s.target {
            check(&acc.indices, &acc.array);
        }
        s.value.visit(&mut |e| {
            if let Expr::Load(acc) = e {
                check(&acc.indices, &acc.array);
            }
        });
        for a in indirect {
            reasons.push(format!("indirect subscript of `{a}` in statement {stmt}"));
        }
        stmt += 1;
    });
    ScopReport { is_scop: reasons.is_empty(), reasons }
}

struct Decl {
    name: String,
    /// Number of loops enclosing the declaration.
    depth: usize,
}

struct StmtInfo {
    id: usize,
    /// Indices into `Walker::loops`, outermost first.
    stack: Vec<usize>,
    refs: Vec<usize>,
    write: Option<usize>,
    /// `s = s op e` with `e` free of `s`.
    reduction: Option<BinOp>,
}

struct Walker {
    loops: Vec<(LoopDomain, usize)>,
    decls: Vec<Decl>,
    scopes: Vec<HashMap<String, usize>>,
    stmts: Vec<StmtInfo>,
    accesses: Vec<(String, Access)>,
}

impl Walker {
    fn declare(&mut self, names: impl Iterator<Item = String>, depth: usize) {
        for name in names {
            let id = self.decls.len();
            self.decls.push(Decl { name: name.clone(), depth });
            self.scopes.last_mut().unwrap().insert(name, id);
        }
    }

    fn local(&self, name: &str) -> Option<usize> {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied())
    }

    fn walk(&mut self, nodes: &[Node], stack: &mut Vec<usize>, path: &str, top: Option<usize>) {
        let mut ordinal = 0;
        for (pos, n) in nodes.iter().enumerate() {
            match n {
                Node::Loop(l) => {
                    let p = if path.is_empty() { ordinal.to_string() } else { format!("{path}.{ordinal}") };
                    ordinal += 1;
                    let top_node = top.unwrap_or(pos);
                    self.loops.push((
                        LoopDomain {
                            path: p.clone(),
                            index: l.index.clone(),
                            lower: l.lower.clone(),
                            upper: l.upper.clone(),
                            step: l.step,
                        },
                        top_node,
                    ));
                    stack.push(self.loops.len() - 1);
                    self.scopes.push(HashMap::new());
                    self.declare(l.locals.iter().map(|x| x.name.clone()), stack.len());
                    self.walk(&l.body, stack, &p, Some(top_node));
                    self.scopes.pop();
                    stack.pop();
                }
                Node::Stmt(s) => {
                    let id = self.stmts.len();
                    let domains: Vec<LoopDomain> = stack.iter().map(|&i| self.loops[i].0.clone()).collect();
                    let mut refs = Vec::new();
                    let mut reads = Vec::new();
                    s.value.visit(&mut |e| match e {
                        Expr::Var(v) => refs.push(v.clone()),
                        Expr::Load(acc) => reads.push(acc.clone()),
                        _ => {}
                    });
                    for acc in reads {
                        // Static-control parts have only affine subscripts.
                        let subscripts = acc.affine_indices().unwrap().into_iter().cloned().collect();
                        self.accesses.push((acc.array, Access { stmt: id, write: false, subscripts, loops: domains.clone() }));
                    }
                    let mut refs: Vec<usize> = refs.iter().filter_map(|v| self.local(v)).collect();
                    let mut write = None;
                    let mut reduction = None;
                    match &s.target {
                        Target::Array(acc) => {
                            let subscripts = acc.affine_indices().unwrap().into_iter().cloned().collect();
                            self.accesses.push((acc.array.clone(), Access { stmt: id, write: true, subscripts, loops: domains }));
                        }
                        Target::Local(name) => {
                            if let Some(d) = self.local(name) {
                                write = Some(d);
                                refs.push(d);
                                if let Expr::Binary(op @ (BinOp::Add | BinOp::Mul | BinOp::Min | BinOp::Max), a, b) = &s.value {
                                    if matches!(&**a, Expr::Var(v) if v == name) && !b.mentions_var(name) {
                                        reduction = Some(*op);
                                    }
                                }
                            }
                        }
                    }
                    refs.sort_unstable();
                    refs.dedup();
                    self.stmts.push(StmtInfo { id, stack: stack.clone(), refs, write, reduction });
                }
            }
        }
    }
}

/// Builds the per-loop report for `f` with its size parameters bound.
pub fn analyze(f: &KernelFunction, sizes: &BTreeMap<String, i64>) -> Result<ParallelismReport, AnalysisError> {
    let scop = detect_scop(f);
    if !scop.is_scop {
        return Err(AnalysisError::NotScop(scop.reasons));
    }
    let mut w = Walker {
        loops: Vec::new(),
        decls: Vec::new(),
        scopes: vec![HashMap::new()],
        stmts: Vec::new(),
        accesses: Vec::new(),
    };
    w.declare(f.locals.iter().map(|l| l.name.clone()), 0);
    w.walk(&f.body, &mut Vec::new(), "", None);

    let mut loop_edges: Vec<Vec<DependenceEdge>> = vec![Vec::new(); w.loops.len()];
    let loop_pos: HashMap<&str, usize> = w.loops.iter().enumerate().map(|(i, (d, _))| (d.path.as_str(), i)).collect();

    for i in 0..w.accesses.len() {
        for j in i..w.accesses.len() {
            let (ai, a) = &w.accesses[i];
            let (aj, b) = &w.accesses[j];
            if ai != aj || !(a.write || b.write) || (i == j && !a.write) {
                continue;
            }
            let pair = AccessPair { array: ai.clone(), first: a.clone(), second: b.clone() };
            if let DependenceResult::Dependent(edge) = dependence_test(&pair, sizes)? {
                for level in 0..edge.distance.len() {
                    if edge.carried_at(level) {
                        loop_edges[loop_pos[a.loops[level].path.as_str()]].push(edge.clone());
                    }
                }
            }
        }
    }

    let mut function_reductions = Vec::new();
    for (d, decl) in w.decls.iter().enumerate() {
        let users: Vec<&StmtInfo> = w.stmts.iter().filter(|s| s.refs.contains(&d)).collect();
        let mut seen = Vec::new();
        for s in users.iter().filter(|s| s.write == Some(d)) {
            for (level, &m) in s.stack.iter().enumerate().skip(decl.depth) {
                if seen.contains(&m) {
                    continue;
                }
                seen.push(m);
                let inside: Vec<&&StmtInfo> = users.iter().filter(|u| u.stack.contains(&m)).collect();
                let op = inside[0].reduction;
                let reduction = op.is_some() && inside.iter().all(|u| u.write == Some(d) && u.reduction == op);
                if reduction && decl.depth == 0 && !function_reductions.contains(&decl.name) {
                    function_reductions.push(decl.name.clone());
                }
                let mut distance = vec![Distance::Known(0); level + 1];
                distance[level] = Distance::Known(1);
                loop_edges[m].push(DependenceEdge {
                    variable: decl.name.clone(),
                    source_stmt: s.id,
                    sink_stmt: s.id,
                    distance,
                    kind: DepKind::Flow,
                    reduction,
                });
            }
        }
    }

    let loops = w
        .loops
        .iter()
        .zip(loop_edges)
        .map(|((dom, top_node), edges)| {
            let level = dom.path.split('.').count() - 1;
            let verdict = if edges.is_empty() {
                Verdict::Parallel
            } else if edges.iter().any(|e| e.reduction || e.exactly_carried_at(level)) {
                Verdict::Sequential
            } else {
                Verdict::UnknownTreatedSequential
            };
            let reduction = !edges.is_empty() && edges.iter().all(|e| e.reduction);
            LoopReport {
                path: dom.path.clone(),
                index: dom.index.clone(),
                depth: level,
                top_node: *top_node,
                verdict,
                reduction,
                edges,
            }
        })
        .collect();
    Ok(ParallelismReport { function: f.name.clone(), loops, function_reductions })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Eligibility {
    pub eligible: bool,
    /// Top-level body positions whose loop is parallel.
    pub parallel_top_nodes: Vec<usize>,
    pub reason: String,
}

/// A function may be offloaded when at least one of its top-level loops is
/// parallel and no loop reduces into a function-scope scalar.
pub fn eligibility(rep: &ParallelismReport) -> Eligibility {
    let parallel_top_nodes: Vec<usize> = rep
        .loops
        .iter()
        .filter(|l| l.depth == 0 && l.verdict == Verdict::Parallel)
        .map(|l| l.top_node)
        .collect();
    let (eligible, reason) = if !rep.function_reductions.is_empty() {
        (false, format!("reduction into function-scope scalar `{}`", rep.function_reductions[0]))
    } else if parallel_top_nodes.is_empty() {
        (false, "no parallel outermost loop".to_string())
    } else {
        (true, format!("{} parallel outermost loop(s)", parallel_top_nodes.len()))
    };
    Eligibility { eligible, parallel_top_nodes, reason }
}
