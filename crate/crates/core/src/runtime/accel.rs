//! The accelerator backend: a pool of `W` workers running disjoint chunks of
//! each parallel outermost loop with the cpu backend's per-iteration
//! semantics.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use thiserror::Error;

use crate::cpu::{CompiledKernel, ExecError, Frame, MemoryImage};
use crate::ir::KernelFunction;
use crate::parallelism::{eligibility, ParallelismReport};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum AccelError {
    #[error("{function}: ineligible for offload: {reason}")]
    Ineligible { function: String, reason: String },
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("{function}: accelerator worker panicked")]
    WorkerPanic { function: String },
}

/// Default iterations per task for an outer extent on `workers` workers.
pub fn default_grain(extent: u64, workers: usize) -> u64 {
    (extent / (8 * workers as u64)).max(1)
}

/// Consecutive ordinal chunks of `0..extent`, each `grain` long except
/// possibly the last.
pub fn split_tasks(extent: u64, grain: u64) -> Vec<Range<u64>> {
    let grain = grain.max(1);
    (0..extent.div_ceil(grain)).map(|t| t * grain..((t + 1) * grain).min(extent)).collect()
}

/// Greedy list schedule of task costs, in task order, onto the least loaded
/// of `workers` workers. Returns the largest worker load.
pub fn makespan(costs: &[u64], workers: usize) -> u64 {
    let mut load = vec![0u64; workers.max(1)];
    for &c in costs {
        let w = (0..load.len()).min_by_key(|&w| (load[w], w)).unwrap();
        load[w] += c;
    }
    load.into_iter().max().unwrap_or(0)
}

/// An eligible kernel lowered for the worker pool.
pub struct AcceleratorPlan {
    pub function: String,
    pub kernel: Arc<CompiledKernel>,
    /// Top-level body positions whose loop is split into tasks.
    pub parallel_nodes: Vec<usize>,
    /// Index names of those loops, in the same order.
    pub parallel_dims: Vec<String>,
    pub workers: usize,
    /// Fixed iterations per task; `None` uses [`default_grain`].
    pub grain: Option<u64>,
    /// Id of the specialization the kernel was built from.
    pub specialization: Option<u64>,
}

impl AcceleratorPlan {
    pub fn grain_for(&self, extent: u64) -> u64 {
        self.grain.unwrap_or_else(|| default_grain(extent, self.workers)).max(1)
    }

    /// Task count for each parallel node at a given outer extent.
    pub fn task_count(&self, extent: u64) -> usize {
        extent.div_ceil(self.grain_for(extent)) as usize
    }
}

pub fn compile_plan(f: &KernelFunction, rep: &ParallelismReport, workers: usize) -> Result<AcceleratorPlan, AccelError> {
    let e = eligibility(rep);
    if !e.eligible {
        return Err(AccelError::Ineligible { function: f.name.clone(), reason: e.reason });
    }
    let kernel = Arc::new(CompiledKernel::compile(f)?);
    let parallel_dims = e
        .parallel_top_nodes
        .iter()
        .map(|&i| match &f.body[i] {
            crate::ir::Node::Loop(l) => l.index.clone(),
            crate::ir::Node::Stmt(_) => unreachable!("parallel node is a loop"),
        })
        .collect();
    Ok(AcceleratorPlan {
        function: f.name.clone(),
        kernel,
        parallel_nodes: e.parallel_top_nodes,
        parallel_dims,
        workers: workers.max(1),
        grain: None,
        specialization: None,
    })
}

/// Outcome of one accelerator invocation, before transfer accounting.
#[derive(Clone, Debug, PartialEq)]
pub struct AccelRun {
    pub outputs: MemoryImage,
    /// Total work over all tasks and serial parts.
    pub vcycles: u64,
    /// Serial vcycles plus the makespan of each parallel node.
    pub span_vcycles: u64,
    pub measured_ns: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub tasks: usize,
}

type TaskResult = (usize, u64, Result<(), ExecError>);

/// Executes `plan` on `args`. Tasks of one node run concurrently; nodes run
/// in program order. The first failing task in task order is reported.
pub fn run_on_accelerator(plan: &AcceleratorPlan, args: &MemoryImage) -> Result<AccelRun, AccelError> {
    let start = Instant::now();
    let k = &*plan.kernel;
    let inst = k.bind(args)?;
    let (bytes_in, bytes_out) = k.transfer_bytes(&inst);
    let mut frame = k.frame(&inst);
    let mut span = 0u64;
    let mut tasks_run = 0usize;
    for node in 0..k.top_level_len() {
        let extent = match (plan.parallel_nodes.contains(&node), k.top_level_trip(&inst, node)) {
            (true, Some(extent)) if extent > 0 => extent,
            _ => {
                let before = frame.vcycles();
                k.run_top(&inst, node, None, &mut frame)?;
                span += frame.vcycles() - before;
                continue;
            }
        };
        let ranges = split_tasks(extent, plan.grain_for(extent));
        tasks_run += ranges.len();
        let base = frame.vcycles();
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<TaskResult>> = Mutex::new(Vec::with_capacity(ranges.len()));
        let workers = plan.workers.min(ranges.len());
        let panicked = std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    s.spawn(|| {
                        let mut local = Vec::new();
                        loop {
                            let t = next.fetch_add(1, Ordering::Relaxed);
                            let Some(r) = ranges.get(t) else { break };
                            let mut f: Frame = frame.clone();
                            let res = k.run_top(&inst, node, Some(r.clone()), &mut f);
                            local.push((t, f.vcycles() - base, res));
                        }
                        results.lock().unwrap().extend(local);
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join()).any(|r| r.is_err())
        });
        if panicked {
            return Err(AccelError::WorkerPanic { function: plan.function.clone() });
        }
        let mut results = results.into_inner().unwrap();
        results.sort_by_key(|r| r.0);
        let mut costs = Vec::with_capacity(results.len());
        for (_, cycles, res) in results {
            res?;
            costs.push(cycles);
        }
        span += makespan(&costs, plan.workers);
        // Parallel loops write no frame scalar, so only the cycle count moves.
        frame.add_cycles(costs.iter().sum());
    }
    let vcycles = frame.vcycles();
    let outputs = k.outputs(&inst);
    Ok(AccelRun {
        outputs,
        vcycles,
        span_vcycles: span,
        measured_ns: start.elapsed().as_nanos() as u64,
        bytes_in,
        bytes_out,
        tasks: tasks_run,
    })
}

/// Names and values of the integer scalar arguments.
pub fn size_args(f: &KernelFunction, args: &MemoryImage) -> BTreeMap<String, i64> {
    f.params
        .iter()
        .filter(|p| p.kind == crate::ir::ParamKind::ScalarInt)
        .filter_map(|p| match args.scalar(&p.name) {
            Some(crate::cpu::Value::Int(v)) => Some((p.name.clone(), v)),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpu::{execute, Array};
    use crate::ir::parse_program;
    use crate::parallelism::analyze;

    const MM: &str = "func mm(n: int, A: in float[n][n], B: in float[n][n], C: out float[n][n]) {
        for i in [0, n) { for j in [0, n) { let s: float; s = 0.0;
            for k in [0, n) { s = s + A[i][k] * B[k][j]; } C[i][j] = s; } } }";

    fn mm() -> KernelFunction {
        parse_program(MM).unwrap().functions.remove(0)
    }

    fn plan(f: &KernelFunction, n: i64, workers: usize) -> AcceleratorPlan {
        let rep = analyze(f, &BTreeMap::from([("n".to_string(), n)])).unwrap();
        compile_plan(f, &rep, workers).unwrap()
    }

    fn args(n: usize) -> MemoryImage {
        let a: Vec<f64> = (0..n * n).map(|v| (v % 7) as f64 - 2.5).collect();
        let b: Vec<f64> = (0..n * n).map(|v| (v % 5) as f64 * 0.25).collect();
        MemoryImage::new().with_int("n", n as i64).with_array("A", Array::float(vec![n, n], a)).with_array("B", Array::float(vec![n, n], b))
    }

    #[test]
    fn grain_and_task_count() {
        let p = plan(&mm(), 256, 4);
        assert_eq!(p.grain_for(256), 8);
        assert_eq!(p.task_count(256), 32);
        assert_eq!(p.task_count(1), 1);
        assert_eq!(p.parallel_dims, vec!["i".to_string()]);
    }

    #[test]
    fn tasks_cover_domain_once() {
        for (extent, grain) in [(0, 3), (1, 1), (10, 3), (256, 8), (7, 100)] {
            let r = split_tasks(extent, grain);
            let mut next = 0;
            for t in &r {
                assert_eq!(t.start, next);
                assert!(t.end > t.start);
                next = t.end;
            }
            assert_eq!(next, extent);
        }
    }

    #[test]
    fn matches_cpu_bitwise() {
        let f = mm();
        let a = args(24);
        let cpu = execute(&f, &a).unwrap();
        for w in [1, 3, 4] {
            let r = run_on_accelerator(&plan(&f, 24, w), &a).unwrap();
            assert_eq!(r.outputs, cpu.outputs);
            assert_eq!(r.vcycles, cpu.vcycles);
            if w == 1 {
                assert_eq!(r.span_vcycles, cpu.vcycles);
            } else {
                assert!(r.span_vcycles < cpu.vcycles);
            }
        }
    }

    #[test]
    fn transfer_bytes_three_matrices() {
        let r = run_on_accelerator(&plan(&mm(), 256, 4), &args(256)).unwrap();
        assert_eq!(r.bytes_in + r.bytes_out, 1_572_864);
        assert_eq!(r.tasks, 32);
    }

    #[test]
    fn sequential_function_is_ineligible() {
        let f = parse_program("func p(n: int, A: inout float[n]) { for i in [1, n) { A[i] = A[i] + A[i - 1]; } }")
            .unwrap()
            .functions
            .remove(0);
        let rep = analyze(&f, &BTreeMap::from([("n".to_string(), 8)])).unwrap();
        assert!(matches!(compile_plan(&f, &rep, 4), Err(AccelError::Ineligible { .. })));
    }

    #[test]
    fn makespan_greedy() {
        assert_eq!(makespan(&[5, 5, 5, 5], 2), 10);
        assert_eq!(makespan(&[9, 1, 1, 1], 2), 9);
        assert_eq!(makespan(&[], 4), 0);
    }
}
