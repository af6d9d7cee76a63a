//! Pairwise dependence test: per-dimension GCD divisibility, a Banerjee-style
//! range check over the loop domain, and exact distances for uniform pairs.

use std::collections::BTreeMap;

use super::{AnalysisError, DepKind, DependenceEdge, Distance};
use crate::ir::AffineExpr;

/// One loop of the nest enclosing an access.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopDomain {
    /// Dot-separated ordinal path, unique within the function.
    pub path: String,
    pub index: String,
    pub lower: AffineExpr,
    pub upper: AffineExpr,
    pub step: i64,
}

/// An affine array reference and the loops enclosing it, outermost first.
#[derive(Clone, Debug, PartialEq)]
pub struct Access {
    pub stmt: usize,
    pub write: bool,
    pub subscripts: Vec<AffineExpr>,
    pub loops: Vec<LoopDomain>,
}

impl Access {
    /// Program order within one iteration: statement, then reads before the
    /// write of the same statement.
    fn position(&self) -> (usize, bool) {
        (self.stmt, self.write)
    }
}

/// Two references to the same array, at least one of them a write. `first`
/// must not come after `second` in program order.
#[derive(Clone, Debug, PartialEq)]
pub struct AccessPair {
    pub array: String,
    pub first: Access,
    pub second: Access,
}

impl AccessPair {
    pub fn common_depth(&self) -> usize {
        self.first
            .loops
            .iter()
            .zip(&self.second.loops)
            .take_while(|(a, b)| a.path == b.path)
            .count()
    }

    fn is_self_pair(&self) -> bool {
        self.first == self.second
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DependenceResult {
    Independent,
    Dependent(DependenceEdge),
}

/// `c + sum(coefs[k] * index_k)` over the loops of one access.
struct Lin {
    c: i128,
    coefs: Vec<i128>,
}

fn linearize(e: &AffineExpr, loops: &[LoopDomain], sizes: &BTreeMap<String, i64>) -> Result<Lin, AnalysisError> {
    let mut lin = Lin { c: e.constant_part() as i128, coefs: vec![0; loops.len()] };
    for (name, k) in e.terms() {
        if let Some(pos) = loops.iter().rposition(|l| l.index == name) {
            lin.coefs[pos] += k as i128;
        } else if let Some(v) = sizes.get(name) {
            lin.c += k as i128 * *v as i128;
        } else {
            return Err(AnalysisError::UnboundSize(name.to_string()));
        }
    }
    Ok(lin)
}

fn span(lin: &Lin, ranges: &[(i128, i128)]) -> (i128, i128) {
    let (mut lo, mut hi) = (lin.c, lin.c);
    for (k, &a) in lin.coefs.iter().enumerate() {
        let (rlo, rhi) = ranges[k];
        if a >= 0 {
            lo += a * rlo;
            hi += a * rhi;
        } else {
            lo += a * rhi;
            hi += a * rlo;
        }
    }
    (lo, hi)
}

/// Inclusive value range of every loop index, or `None` if some loop of the
/// nest never executes.
fn ranges(loops: &[LoopDomain], sizes: &BTreeMap<String, i64>) -> Result<Option<Vec<(i128, i128)>>, AnalysisError> {
    let mut out: Vec<(i128, i128)> = Vec::new();
    for (k, l) in loops.iter().enumerate() {
        let lo = span(&linearize(&l.lower, &loops[..k], sizes)?, &out);
        let hi = span(&linearize(&l.upper, &loops[..k], sizes)?, &out);
        let r = (lo.0, hi.1 - 1);
        if r.1 < r.0 {
            return Ok(None);
        }
        out.push(r);
    }
    Ok(Some(out))
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn kind(source_write: bool, sink_write: bool) -> DepKind {
    match (source_write, sink_write) {
        (true, true) => DepKind::Output,
        (true, false) => DepKind::Flow,
        _ => DepKind::Anti,
    }
}

/// Tests whether two accesses can touch the same cell. Returns an edge unless
/// independence is proven; distances are exact wherever the subscripts pin
/// them down and `Unknown` elsewhere.
pub fn dependence_test(pair: &AccessPair, sizes: &BTreeMap<String, i64>) -> Result<DependenceResult, AnalysisError> {
    let (a, b) = (&pair.first, &pair.second);
    if !a.write && !b.write {
        return Ok(DependenceResult::Independent);
    }
    let depth = pair.common_depth();
    let (Some(ra), Some(rb)) = (ranges(&a.loops, sizes)?, ranges(&b.loops, sizes)?) else {
        return Ok(DependenceResult::Independent);
    };
    // distance[k] = (iteration of `second`) - (iteration of `first`) at level k.
    let mut known: Vec<Option<i128>> = vec![None; depth];
    let mut multi: Vec<(Vec<i128>, i128)> = Vec::new();
    for (fa, fb) in a.subscripts.iter().zip(&b.subscripts) {
        let u = linearize(fa, &a.loops, sizes)?;
        let v = linearize(fb, &b.loops, sizes)?;
        let rhs = v.c - u.c;
        let g = u.coefs.iter().chain(&v.coefs).fold(0, |g, &c| gcd(g, c));
        if g == 0 {
            if rhs != 0 {
                return Ok(DependenceResult::Independent);
            }
            continue;
        }
        if rhs % g != 0 {
            return Ok(DependenceResult::Independent);
        }
        let (lo_u, hi_u) = span(&Lin { c: 0, coefs: u.coefs.clone() }, &ra);
        let (lo_v, hi_v) = span(&Lin { c: 0, coefs: v.coefs.clone() }, &rb);
        if rhs < lo_u - hi_v || rhs > hi_u - lo_v {
            return Ok(DependenceResult::Independent);
        }
        let uniform = (0..depth).all(|k| u.coefs[k] == v.coefs[k])
            && u.coefs[depth..].iter().all(|&c| c == 0)
            && v.coefs[depth..].iter().all(|&c| c == 0);
        if !uniform {
            continue;
        }
        // u.c + sum a_k i_k = v.c + sum a_k j_k  <=>  sum a_k (j_k - i_k) = u.c - v.c
        let vars: Vec<usize> = (0..depth).filter(|&k| u.coefs[k] != 0).collect();
        if let [k] = vars[..] {
            let num = u.c - v.c;
            if num % u.coefs[k] != 0 {
                return Ok(DependenceResult::Independent);
            }
            let d = num / u.coefs[k];
            match known[k] {
                Some(prev) if prev != d => return Ok(DependenceResult::Independent),
                _ => known[k] = Some(d),
            }
        } else {
            multi.push((u.coefs[..depth].to_vec(), u.c - v.c));
        }
    }
    for (k, d) in known.iter().enumerate() {
        if let Some(d) = *d {
            let l = &a.loops[k];
            let width = ra[k].1 - ra[k].0;
            if d.abs() > width || d % l.step as i128 != 0 {
                return Ok(DependenceResult::Independent);
            }
        }
    }
    for (coefs, rhs) in &multi {
        let all_known: Option<i128> =
            coefs.iter().enumerate().map(|(k, &c)| if c == 0 { Some(0) } else { known[k].map(|d| c * d) }).sum();
        if let Some(sum) = all_known {
            if sum != *rhs {
                return Ok(DependenceResult::Independent);
            }
        }
    }
    if pair.is_self_pair() && known.iter().all(|d| *d == Some(0)) {
        // The only solution is the access with itself in one iteration.
        return Ok(DependenceResult::Independent);
    }

    let mut distance: Vec<Distance> = known
        .iter()
        .map(|d| match d {
            Some(d) => Distance::Known(*d as i64),
            None => Distance::Unknown,
        })
        .collect();
    let leading = distance.iter().find(|d| **d != Distance::Known(0)).copied();
    let forward = match leading {
        Some(Distance::Known(d)) => d > 0,
        // All zero or led by an unknown: fall back to program order.
        _ => a.position() <= b.position(),
    };
    let (src, snk) = if forward { (a, b) } else { (b, a) };
    if !forward {
        for d in &mut distance {
            if let Distance::Known(v) = d {
                *v = -*v;
            }
        }
    }
    Ok(DependenceResult::Dependent(DependenceEdge {
        variable: pair.array.clone(),
        source_stmt: src.stmt,
        sink_stmt: snk.stmt,
        distance,
        kind: kind(src.write, snk.write),
        reduction: false,
    }))
}
