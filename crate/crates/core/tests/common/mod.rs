//! Random affine kernels and a brute-force access tracer shared by the
//! property tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use offload_core::cpu::{Array, MemoryImage};
use offload_core::ir::{parse_program, Expr, Index, KernelFunction, Node, Target};

/// Side of every generated 2-D array.
pub const SIDE: i64 = 64;

const ARRAYS: [&str; 3] = ["A", "B", "C"];
const LITERALS: [&str; 6] = ["0.0", "1.0", "-1.0", "0.5", "2.5", "-0.0"];

pub struct Generated {
    pub source: String,
    pub function: KernelFunction,
    pub n: i64,
}

impl Generated {
    pub fn sizes(&self) -> BTreeMap<String, i64> {
        BTreeMap::from([("n".to_string(), self.n)])
    }

    /// Arguments with every input array filled from `seed`.
    pub fn args(&self, seed: u64) -> MemoryImage {
        random_args(self.n, seed)
    }
}

pub fn random_args(n: i64, seed: u64) -> MemoryImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = SIDE as usize;
    let mut grid = || Array::float(vec![side, side], (0..side * side).map(|_| rng.gen_range(-4.0..4.0)).collect());
    let (a, b, c) = (grid(), grid(), grid());
    MemoryImage::new()
        .with_int("n", n)
        .with_float("s", 0.75)
        .with_array("A", a)
        .with_array("B", b)
        .with_array("C", c)
        .with_array("K", Array::float(vec![4], vec![0.0, 1.0, -1.0, 3.0]))
}

struct Gen {
    rng: ChaCha8Rng,
    /// Loop variables in scope, outermost first.
    scope: Vec<String>,
    max_depth: usize,
    written: [bool; 3],
}

impl Gen {
    fn subscript(&mut self) -> String {
        let mut s = self.rng.gen_range(16..=20).to_string();
        let terms = if self.scope.is_empty() { 0 } else { self.rng.gen_range(0..=2) };
        for _ in 0..terms {
            let v = self.scope[self.rng.gen_range(0..self.scope.len())].clone();
            match self.rng.gen_range(0..4) {
                0 => s += &format!(" - {v}"),
                1 => s += &format!(" + 2 * {v}"),
                _ => s += &format!(" + {v}"),
            }
        }
        s
    }

    fn access(&mut self, arrays: &[&str]) -> String {
        let a = arrays[self.rng.gen_range(0..arrays.len())];
        format!("{a}[{}][{}]", self.subscript(), self.subscript())
    }

    fn expr(&mut self, depth: usize) -> String {
        if depth == 0 || self.rng.gen_bool(0.3) {
            return match self.rng.gen_range(0..6) {
                0..=2 => self.access(&ARRAYS),
                3 => format!("K[{}]", self.rng.gen_range(0..4)),
                4 => "s".to_string(),
                _ => LITERALS[self.rng.gen_range(0..LITERALS.len())].to_string(),
            };
        }
        let (a, b) = (self.expr(depth - 1), self.expr(depth - 1));
        match self.rng.gen_range(0..9) {
            0 => format!("({a} + {b})"),
            1 => format!("({a} - {b})"),
            2 | 3 => format!("({a} * {b})"),
            4 => format!("({a} / 2.0)"),
            5 => format!("min({a}, {b})"),
            6 => format!("max({a}, {b})"),
            7 => format!("-({a})"),
            _ => {
                let c = self.expr(depth - 1);
                format!("select({a} < {b}, {c}, {a})")
            }
        }
    }

    fn stmt(&mut self) -> String {
        let k = self.rng.gen_range(0..ARRAYS.len());
        self.written[k] = true;
        let target = self.access(&ARRAYS[k..=k]);
        format!("{target} = {};", self.expr(2))
    }

    fn body(&mut self, depth: usize) -> String {
        let items = self.rng.gen_range(1..=2);
        let mut out = Vec::new();
        for _ in 0..items {
            if depth < self.max_depth && self.rng.gen_bool(0.6) {
                out.push(self.for_loop(depth));
            } else {
                out.push(self.stmt());
            }
        }
        out.join(" ")
    }

    fn for_loop(&mut self, depth: usize) -> String {
        let var = format!("v{depth}");
        let lo = self.rng.gen_range(0..=2);
        let hi = if self.rng.gen_bool(0.3) { "n".to_string() } else { (lo + self.rng.gen_range(1..=6)).to_string() };
        let step = if self.rng.gen_bool(0.8) { 1 } else { 2 };
        self.scope.push(var.clone());
        let body = self.body(depth + 1);
        self.scope.pop();
        let step = if step == 1 { String::new() } else { format!(" step {step}") };
        format!("for {var} in [{lo}, {hi}){step} {{ {body} }}")
    }
}

/// A random valid kernel with up to three nested loops.
pub fn random_kernel(seed: u64) -> Generated {
    let mut g = Gen { rng: ChaCha8Rng::seed_from_u64(seed), scope: Vec::new(), max_depth: 3, written: [false; 3] };
    let n = g.rng.gen_range(3..=8);
    let tops = g.rng.gen_range(1..=2);
    let body: Vec<String> = (0..tops).map(|_| g.for_loop(0)).collect();
    let arrays: Vec<String> = ARRAYS
        .iter()
        .zip(g.written)
        .map(|(a, w)| format!("{a}: {} float[{SIDE}][{SIDE}]", if w { "inout" } else { "in" }))
        .collect();
    let source = format!("func r(n: int, s: float, K: in float[4], {}) {{ {} }}", arrays.join(", "), body.join(" "));
    let function = parse_program(&source).unwrap_or_else(|e| panic!("{e}\n{source}")).functions.remove(0);
    Generated { source, function, n }
}

/// One array access of one statement instance.
#[derive(Clone, Debug)]
pub struct Touch {
    pub array: String,
    pub cell: Vec<i64>,
    pub write: bool,
    /// (loop path, index value) of every enclosing loop, outermost first.
    pub iteration: Vec<(String, i64)>,
}

fn eval(a: &offload_core::ir::AffineExpr, env: &BTreeMap<String, i64>) -> i64 {
    a.eval(&|v| env.get(v).copied()).expect("affine subscript over known names")
}

fn loads(e: &Expr, env: &BTreeMap<String, i64>, iteration: &[(String, i64)], out: &mut Vec<Touch>) {
    e.visit(&mut |x| {
        if let Expr::Load(acc) = x {
            let cell = acc
                .indices
                .iter()
                .map(|i| match i {
                    Index::Affine(a) => eval(a, env),
                    Index::Indirect(_) => panic!("tracer handles affine subscripts only"),
                })
                .collect();
            out.push(Touch { array: acc.array.clone(), cell, write: false, iteration: iteration.to_vec() });
        }
    });
}

fn walk(nodes: &[Node], prefix: &str, env: &mut BTreeMap<String, i64>, iteration: &mut Vec<(String, i64)>, out: &mut Vec<Touch>) {
    let mut ordinal = 0;
    for node in nodes {
        match node {
            Node::Stmt(s) => {
                loads(&s.value, env, iteration, out);
                if let Target::Array(acc) = &s.target {
                    let cell = acc.indices.iter().map(|i| eval(i.as_affine().unwrap(), env)).collect();
                    out.push(Touch { array: acc.array.clone(), cell, write: true, iteration: iteration.clone() });
                }
            }
            Node::Loop(l) => {
                let path = if prefix.is_empty() { ordinal.to_string() } else { format!("{prefix}.{ordinal}") };
                ordinal += 1;
                let (lo, hi) = (eval(&l.lower, env), eval(&l.upper, env));
                let mut v = lo;
                while v < hi {
                    env.insert(l.index.clone(), v);
                    iteration.push((path.clone(), v));
                    walk(&l.body, &path, env, iteration, out);
                    iteration.pop();
                    v += l.step;
                }
                env.remove(&l.index);
            }
        }
    }
}

/// Every array access of `f` in execution order.
pub fn trace(f: &KernelFunction, sizes: &BTreeMap<String, i64>) -> Vec<Touch> {
    let mut out = Vec::new();
    walk(&f.body, "", &mut sizes.clone(), &mut Vec::new(), &mut out);
    out
}

/// True if two iterations of the loop at `path` with equal outer indices
/// touch one cell and at least one of them writes it.
pub fn carried(trace: &[Touch], path: &str) -> bool {
    let mut by_cell: BTreeMap<(&str, &[i64]), Vec<(&Touch, usize)>> = BTreeMap::new();
    for t in trace {
        if let Some(d) = t.iteration.iter().position(|(p, _)| p == path) {
            by_cell.entry((t.array.as_str(), t.cell.as_slice())).or_default().push((t, d));
        }
    }
    by_cell.values().any(|group| {
        group.iter().enumerate().any(|(i, (x, d))| {
            group[i + 1..].iter().any(|(y, _)| {
                (x.write || y.write) && x.iteration[..*d] == y.iteration[..*d] && x.iteration[*d].1 != y.iteration[*d].1
            })
        })
    })
}
