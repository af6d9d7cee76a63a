//! Adaptive CPU/accelerator offloading runtime.

pub mod ir;
pub mod cpu;
pub mod parallelism;
pub mod profiler;
pub mod specializer;
pub mod energy;
pub mod runtime;
