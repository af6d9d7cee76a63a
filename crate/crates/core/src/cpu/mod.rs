//! Reference sequential interpreter.
//!
//! Its outputs are the ground truth every other backend is compared against,
//! and its virtual-cycle counts replace hardware counters throughout the
//! runtime. Virtual cycles are a pure function of the kernel and its inputs.

mod compile;
mod memory;

use std::fmt;
use std::time::Instant;

use thiserror::Error;

pub use compile::{CompiledKernel, Frame, Instance};
pub use memory::{Array, ArrayData, MemoryImage, Value};

use crate::ir::KernelFunction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum OpKind {
    Load,
    Store,
    AddSub,
    Mul,
    Div,
    Select,
    Cmp,
    LoopOverhead,
}

impl OpKind {
    pub const ALL: [OpKind; 8] = [
        OpKind::Load,
        OpKind::Store,
        OpKind::AddSub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Select,
        OpKind::Cmp,
        OpKind::LoopOverhead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Load => "load",
            OpKind::Store => "store",
            OpKind::AddSub => "add/sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Select => "select",
            OpKind::Cmp => "cmp",
            OpKind::LoopOverhead => "loop-overhead",
        }
    }
}

/// Virtual cycles charged per operation. Every assignment (array or local)
/// is one store; `min`/`max` are comparisons; negation is an add/sub;
/// affine address arithmetic is free.
pub const fn vcycle_cost(op: OpKind) -> u64 {
    match op {
        OpKind::Load => 2,
        OpKind::Store => 2,
        OpKind::AddSub => 1,
        OpKind::Mul => 3,
        OpKind::Div => 10,
        OpKind::Select => 1,
        OpKind::Cmp => 1,
        OpKind::LoopOverhead => 1,
    }
}

/// Float `min` shared by the interpreter and the constant folder.
pub fn fmin(a: f64, b: f64) -> f64 {
    if b < a {
        b
    } else {
        a
    }
}

/// Float `max` shared by the interpreter and the constant folder.
pub fn fmax(a: f64, b: f64) -> f64 {
    if b > a {
        b
    } else {
        a
    }
}

/// Loop index values at the point of a fault, outermost first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IterationVector(pub Vec<(String, i64)>);

impl fmt::Display for IterationVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, (name, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{name}={v}")?;
        }
        f.write_str("]")
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("{function}: missing argument `{param}`")]
    MissingArgument { function: String, param: String },
    #[error("{function}: argument `{param}`: {message}")]
    BadArgument { function: String, param: String, message: String },
    #[error("{function}: statement {stmt}: index {index} out of bounds for dimension {dim} of `{array}` (extent {extent}) at iteration {iteration}")]
    OutOfBounds {
        function: String,
        /// Statement ordinal in textual order.
        stmt: usize,
        array: String,
        dim: usize,
        index: i64,
        extent: usize,
        iteration: IterationVector,
    },
    #[error("{function}: invalid kernel: {message}")]
    Invalid { function: String, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecResult {
    /// The `out` and `inout` arrays.
    pub outputs: MemoryImage,
    pub vcycles: u64,
    pub wall_ns: u64,
}

/// Runs an already-compiled kernel sequentially.
pub fn execute_compiled(k: &CompiledKernel, mem: &MemoryImage) -> Result<ExecResult, ExecError> {
    let start = Instant::now();
    let inst = k.bind(mem)?;
    let vcycles = k.run(&inst)?;
    let outputs = k.outputs(&inst);
    Ok(ExecResult { outputs, vcycles, wall_ns: start.elapsed().as_nanos() as u64 })
}

/// Compiles and runs `f` on `mem`.
pub fn execute(f: &KernelFunction, mem: &MemoryImage) -> Result<ExecResult, ExecError> {
    execute_compiled(&CompiledKernel::compile(f)?, mem)
}
