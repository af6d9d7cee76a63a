//! Specialization of kernels on argument values that stay constant across
//! invocations.
//!
//! [`StabilityTracker`] decides which `in` parameters are stable;
//! [`specialize`] clones the kernel with those values substituted and
//! simplifies it to a fixpoint; [`SpecializationCache`] keeps recent results.
//! Float rewrites never reassociate, so a specialized kernel produces the same
//! bits as the original for finite inputs.

mod counts;
mod fold;
mod transform;

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use serde::Serialize;
use thiserror::Error;

pub use counts::{static_op_counts, OpCounts};
pub use transform::MAX_UNROLL_TRIP;

use crate::cpu::{Array, MemoryImage, Value};
use crate::ir::{Direction, Expr, Index, KernelFunction, Node, ParamKind, ScalarType, Target};
use fold::{Facts, FoldCtx};
use transform::{dead_stores, propagate, prune_locals, referenced, rewrite_expr, rewrite_nodes, Substitute, Unroller};

/// Consecutive equal observations before a parameter counts as stable.
pub const DEFAULT_STABILITY_WINDOW: u32 = 3;
/// Parameters larger than this are never treated as constants.
pub const MAX_TRACKED_BYTES: u64 = 4096;
pub const DEFAULT_CACHE_CAPACITY: usize = 32;

/// A value frozen into a specialized kernel.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Constant {
    Scalar(Value),
    Array(Array),
}

impl Constant {
    fn byte_size(&self) -> u64 {
        match self {
            Constant::Scalar(_) => 8,
            Constant::Array(a) => a.byte_size(),
        }
    }
}

pub type Binding = BTreeMap<String, Constant>;

/// Extracts the current value of each named parameter from `args`.
pub fn binding_from(args: &MemoryImage, names: &BTreeSet<String>) -> Binding {
    names
        .iter()
        .filter_map(|n| {
            let c = match args.scalar(n) {
                Some(v) => Constant::Scalar(v),
                None => Constant::Array(args.array(n)?.clone()),
            };
            Some((n.clone(), c))
        })
        .collect()
}

/// True if every bound value equals the corresponding argument bitwise.
pub fn binding_matches(b: &Binding, args: &MemoryImage) -> bool {
    b.iter().all(|(n, c)| match c {
        Constant::Scalar(v) => args.scalar(n) == Some(*v),
        Constant::Array(a) => args.array(n) == Some(a),
    })
}

pub fn binding_hash(function: &str, b: &Binding) -> u64 {
    let mut h = DefaultHasher::new();
    function.hash(&mut h);
    b.hash(&mut h);
    h.finish()
}

#[derive(Clone, Debug, Default)]
struct Track {
    hash: u64,
    count: u32,
}

/// Counts, per `(function, parameter)`, how many consecutive invocations saw
/// the same value.
#[derive(Clone, Debug)]
pub struct StabilityTracker {
    window: u32,
    tracks: HashMap<(String, String), Track>,
}

impl Default for StabilityTracker {
    fn default() -> Self {
        Self::new(DEFAULT_STABILITY_WINDOW)
    }
}

impl StabilityTracker {
    pub fn new(window: u32) -> Self {
        StabilityTracker { window: window.max(1), tracks: HashMap::new() }
    }

    /// Records one invocation of `f` and returns its stable `in` parameters.
    pub fn observe(&mut self, f: &KernelFunction, args: &MemoryImage) -> BTreeSet<String> {
        let mut stable = BTreeSet::new();
        for p in f.params.iter().filter(|p| p.direction == Direction::In) {
            let key = (f.name.clone(), p.name.clone());
            let value = match args.scalar(&p.name) {
                Some(v) => Constant::Scalar(v),
                None => match args.array(&p.name) {
                    Some(a) if a.byte_size() <= MAX_TRACKED_BYTES => Constant::Array(a.clone()),
                    _ => {
                        self.tracks.remove(&key);
                        continue;
                    }
                },
            };
            debug_assert!(value.byte_size() <= MAX_TRACKED_BYTES);
            let mut h = DefaultHasher::new();
            value.hash(&mut h);
            let hash = h.finish();
            let t = self.tracks.entry(key).or_default();
            if t.count > 0 && t.hash == hash {
                t.count = t.count.saturating_add(1);
            } else {
                *t = Track { hash, count: 1 };
            }
            if t.count >= self.window {
                stable.insert(p.name.clone());
            }
        }
        stable
    }

    pub fn count(&self, function: &str, param: &str) -> u32 {
        self.tracks.get(&(function.to_string(), param.to_string())).map_or(0, |t| t.count)
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum SpecializeError {
    #[error("{function}: no parameter `{param}`")]
    UnknownParam { function: String, param: String },
    #[error("{function}: cannot bind `{param}`, which is not an `in` parameter")]
    NotInput { function: String, param: String },
    #[error("{function}: value bound to `{param}` does not match its declared kind")]
    KindMismatch { function: String, param: String },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpecializedKernel {
    pub base: String,
    pub binding: Binding,
    /// Transformed kernel; bound parameters that are no longer referenced
    /// are removed from its signature.
    pub function: KernelFunction,
    /// Counts of the original body with bound scalars substituted.
    pub before: OpCounts,
    pub after: OpCounts,
    pub id: u64,
}

fn check_binding(f: &KernelFunction, b: &Binding) -> Result<(), SpecializeError> {
    for (name, c) in b {
        let p = f.param(name).ok_or_else(|| SpecializeError::UnknownParam { function: f.name.clone(), param: name.clone() })?;
        if p.direction != Direction::In {
            return Err(SpecializeError::NotInput { function: f.name.clone(), param: name.clone() });
        }
        let ok = match (p.kind, c) {
            (ParamKind::ScalarInt, Constant::Scalar(Value::Int(_))) => true,
            (ParamKind::ScalarFloat, Constant::Scalar(Value::Float(_))) => true,
            (ParamKind::ArrayInt | ParamKind::ArrayFloat, Constant::Array(a)) => a.elem() == p.kind.elem() && a.shape.len() == p.extents.len(),
            _ => false,
        };
        if !ok {
            return Err(SpecializeError::KindMismatch { function: f.name.clone(), param: name.clone() });
        }
    }
    Ok(())
}

fn collect_types(nodes: &[Node], types: &mut HashMap<String, Option<ScalarType>>) {
    let mut put = |name: &str, ty: ScalarType| {
        types
            .entry(name.to_string())
            .and_modify(|t| {
                if *t != Some(ty) {
                    *t = None
                }
            })
            .or_insert(Some(ty));
    };
    let mut nested = Vec::new();
    for n in nodes {
        if let Node::Loop(l) = n {
            put(&l.index, ScalarType::Int);
            for x in &l.locals {
                put(&x.name, x.ty);
            }
            nested.push(&l.body);
        }
    }
    for body in nested {
        collect_types(body, types);
    }
}

fn count_decls(nodes: &[Node], out: &mut HashMap<String, usize>) {
    for n in nodes {
        if let Node::Loop(l) = n {
            for x in &l.locals {
                *out.entry(x.name.clone()).or_insert(0) += 1;
            }
            count_decls(&l.body, out);
        }
    }
}

/// Arrays referenced by any load or store.
fn referenced_arrays(nodes: &[Node], out: &mut HashSet<String>) {
    fn expr(e: &Expr, out: &mut HashSet<String>) {
        e.visit(&mut |x| {
            if let Expr::Load(acc) = x {
                out.insert(acc.array.clone());
            }
        });
    }
    for n in nodes {
        match n {
            Node::Stmt(s) => {
                expr(&s.value, out);
                if let Target::Array(acc) = &s.target {
                    out.insert(acc.array.clone());
                    for i in &acc.indices {
                        if let Index::Indirect(e) = i {
                            expr(e, out);
                        }
                    }
                }
            }
            Node::Loop(l) => referenced_arrays(&l.body, out),
        }
    }
}

/// Substitutes bound scalars everywhere, including the extents of the
/// remaining parameters.
fn substitute_scalars(f: &KernelFunction, b: &Binding) -> KernelFunction {
    let mut ints = HashMap::new();
    let mut floats = HashMap::new();
    for (n, c) in b {
        match c {
            Constant::Scalar(Value::Int(v)) => {
                ints.insert(n.clone(), *v);
            }
            Constant::Scalar(Value::Float(v)) => {
                floats.insert(n.clone(), *v);
            }
            Constant::Array(_) => {}
        }
    }
    let r = Substitute { ints: &ints, floats: &floats };
    let mut g = f.clone();
    for p in &mut g.params {
        p.extents = p.extents.iter().map(|e| transform::Rewriter::affine(&r, e)).collect();
    }
    g.body = rewrite_nodes(&f.body, &r);
    g
}

const MAX_ROUNDS: usize = 64;

/// Clones `f` with `binding` frozen in and simplifies it to a fixpoint.
pub fn specialize(f: &KernelFunction, binding: &Binding) -> Result<SpecializedKernel, SpecializeError> {
    check_binding(f, binding)?;
    let mut g = substitute_scalars(f, binding);
    let before = static_op_counts(&g);

    let arrays: BTreeMap<String, Array> = binding
        .iter()
        .filter_map(|(n, c)| match c {
            Constant::Array(a) => Some((n.clone(), a.clone())),
            Constant::Scalar(_) => None,
        })
        .collect();
    let array_types: HashMap<String, ScalarType> =
        f.params.iter().filter(|p| p.kind.is_array()).map(|p| (p.name.clone(), p.kind.elem())).collect();

    for _ in 0..MAX_ROUNDS {
        let prev = g.clone();
        let mut decls = HashMap::new();
        for x in &g.locals {
            decls.insert(x.name.clone(), 1);
        }
        count_decls(&g.body, &mut decls);
        let mut unroller = Unroller { decls, changed: false };
        g.body = unroller.block(std::mem::take(&mut g.body), &mut g.locals);

        let mut types = HashMap::new();
        for p in f.params.iter().filter(|p| !p.kind.is_array()) {
            types.insert(p.name.clone(), Some(p.kind.elem()));
        }
        for x in &g.locals {
            types.insert(x.name.clone(), Some(x.ty));
        }
        collect_types(&g.body, &mut types);
        let cx = FoldCtx { arrays: &arrays, types: &types, array_types: &array_types };
        g.body = propagate(std::mem::take(&mut g.body), &cx, &mut Facts::default());
        g.body = dead_stores(std::mem::take(&mut g.body), &HashSet::new());
        let used = referenced(&g.body);
        g.locals.retain(|x| used.contains(&x.name));
        prune_locals(&mut g.body, &used);
        if g == prev {
            break;
        }
    }

    let used = referenced(&g.body);
    let mut used_arrays = HashSet::new();
    referenced_arrays(&g.body, &mut used_arrays);
    let in_extents: HashSet<String> = g.params.iter().flat_map(|p| p.extents.iter().flat_map(|e| e.vars().map(str::to_string).collect::<Vec<_>>())).collect();
    g.params.retain(|p| {
        !binding.contains_key(&p.name)
            || if p.kind.is_array() { used_arrays.contains(&p.name) } else { used.contains(&p.name) || in_extents.contains(&p.name) }
    });
    let after = static_op_counts(&g);
    Ok(SpecializedKernel { base: f.name.clone(), id: binding_hash(&f.name, binding), binding: binding.clone(), function: g, before, after })
}

/// Replaces every read of `name` by `value`; exposed for differential tests.
pub fn substitute_var(e: &Expr, name: &str, value: &Expr) -> Expr {
    struct One<'a>(&'a str, &'a Expr);
    impl transform::Rewriter for One<'_> {
        fn var(&self, n: &str) -> Option<Expr> {
            (n == self.0).then(|| self.1.clone())
        }
    }
    rewrite_expr(e, &One(name, value))
}

struct CacheEntry {
    kernel: Arc<SpecializedKernel>,
    stamp: AtomicU64,
}

/// Bounded map from `(function, binding)` to specialized kernels with LRU
/// eviction. Lookups take the read lock; inserts take the write lock.
pub struct SpecializationCache {
    capacity: usize,
    clock: AtomicU64,
    entries: RwLock<HashMap<(String, u64), Vec<CacheEntry>>>,
}

impl Default for SpecializationCache {
    fn default() -> Self {
        Self::new(DEFAULT_CACHE_CAPACITY)
    }
}

impl SpecializationCache {
    pub fn new(capacity: usize) -> Self {
        SpecializationCache { capacity: capacity.max(1), clock: AtomicU64::new(0), entries: RwLock::new(HashMap::new()) }
    }

    fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::Relaxed) + 1
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, function: &str, binding: &Binding) -> Option<Arc<SpecializedKernel>> {
        let key = (function.to_string(), binding_hash(function, binding));
        let map = self.entries.read().unwrap();
        let e = map.get(&key)?.iter().find(|e| e.kernel.binding == *binding)?;
        e.stamp.store(self.tick(), Ordering::Relaxed);
        Some(e.kernel.clone())
    }

    pub fn insert(&self, kernel: SpecializedKernel) -> Arc<SpecializedKernel> {
        let kernel = Arc::new(kernel);
        let key = (kernel.base.clone(), kernel.id);
        let mut map = self.entries.write().unwrap();
        if let Some(e) = map.get(&key).and_then(|v| v.iter().find(|e| e.kernel.binding == kernel.binding)) {
            e.stamp.store(self.tick(), Ordering::Relaxed);
            return e.kernel.clone();
        }
        let total: usize = map.values().map(Vec::len).sum();
        if total >= self.capacity {
            let oldest = map
                .iter()
                .flat_map(|(k, v)| v.iter().enumerate().map(move |(i, e)| (e.stamp.load(Ordering::Relaxed), k.clone(), i)))
                .min();
            if let Some((_, k, i)) = oldest {
                let v = map.get_mut(&k).unwrap();
                v.remove(i);
                if v.is_empty() {
                    map.remove(&k);
                }
            }
        }
        map.entry(key).or_default().push(CacheEntry { kernel: kernel.clone(), stamp: AtomicU64::new(self.tick()) });
        kernel
    }

    /// Returns the cached kernel for `binding`, specializing on a miss.
    pub fn get_or_specialize(&self, f: &KernelFunction, binding: &Binding) -> Result<Arc<SpecializedKernel>, SpecializeError> {
        if let Some(k) = self.get(&f.name, binding) {
            return Ok(k);
        }
        Ok(self.insert(specialize(f, binding)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpu::OpKind;
    use crate::ir::{parse_program, print_program, validate, Program};

    const CONV: &str = "func conv(H: int, W: int, In: in float[H + 2][W + 2], K: in float[3][3], Out: out float[H][W]) {
        for y in [0, H) { for x in [0, W) {
            let s: float;
            s = 0.0;
            for dy in [0, 3) { for dx in [0, 3) { s = s + In[y + dy][x + dx] * K[dy][dx]; } }
            Out[y][x] = s;
        } } }";

    fn conv() -> KernelFunction {
        parse_program(CONV).unwrap().functions.remove(0)
    }

    fn kernel(taps: [f64; 9]) -> Binding {
        Binding::from([("K".to_string(), Constant::Array(Array::float(vec![3, 3], taps.to_vec())))])
    }

    fn valid(f: &KernelFunction) {
        let p = Program { functions: vec![f.clone()], entry: Some(f.name.clone()), io_functions: Default::default() };
        let r = validate(&p);
        assert!(r.is_valid(), "{r}\n{}", print_program(&p));
    }

    #[test]
    fn sharpen_keeps_one_multiply() {
        let s = specialize(&conv(), &kernel([0.0, -1.0, 0.0, -1.0, 5.0, -1.0, 0.0, -1.0, 0.0])).unwrap();
        assert_eq!(s.before.get(OpKind::Mul), 9);
        assert_eq!(s.after.get(OpKind::Mul), 1);
        assert!(s.after.le(&s.before));
        assert!(s.function.param("K").is_none());
        valid(&s.function);
    }

    #[test]
    fn zero_kernel_stores_zero() {
        let s = specialize(&conv(), &kernel([0.0; 9])).unwrap();
        let text = print_program(&Program { functions: vec![s.function.clone()], entry: None, io_functions: Default::default() });
        assert!(text.contains("Out[y][x] = 0.0;"), "{text}");
        assert_eq!(s.after.get(OpKind::Load), 0);
        assert_eq!(s.after.get(OpKind::Mul), 0);
    }

    #[test]
    fn binding_out_param_is_rejected() {
        let b = Binding::from([("Out".to_string(), Constant::Array(Array::float(vec![1, 1], vec![0.0])))]);
        assert!(matches!(specialize(&conv(), &b), Err(SpecializeError::NotInput { .. })));
    }

    #[test]
    fn tracker_window_and_size_cap() {
        let f = conv();
        let mut t = StabilityTracker::default();
        let k = Array::float(vec![3, 3], vec![1.0; 9]);
        let img = MemoryImage::new().with_int("H", 1).with_int("W", 1).with_array("K", k.clone());
        assert!(!t.observe(&f, &img).contains("K"));
        assert!(!t.observe(&f, &img).contains("K"));
        assert!(t.observe(&f, &img).contains("K"));
        let other = img.clone().with_array("K", Array::float(vec![3, 3], vec![2.0; 9]));
        assert!(!t.observe(&f, &other).contains("K"));
        assert_eq!(t.count("conv", "K"), 1);
        let big = img.with_array("In", Array::float(vec![1024, 1024], vec![0.0; 1 << 20]));
        for _ in 0..4 {
            assert!(!t.observe(&f, &big).contains("In"));
        }
        assert_eq!(t.count("conv", "In"), 0);
    }

    #[test]
    fn cache_evicts_least_recently_used() {
        let f = conv();
        let cache = SpecializationCache::new(2);
        let a = kernel([1.0; 9]);
        let b = kernel([2.0; 9]);
        let c = kernel([3.0; 9]);
        cache.get_or_specialize(&f, &a).unwrap();
        cache.get_or_specialize(&f, &b).unwrap();
        assert!(cache.get("conv", &a).is_some());
        cache.get_or_specialize(&f, &c).unwrap();
        assert_eq!(cache.len(), 2);
        assert!(cache.get("conv", &b).is_none());
        assert!(cache.get("conv", &a).is_some());
    }
}
