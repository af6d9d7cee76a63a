//! Benchmark kernels, reference implementations, the filter demo, the
//! matmul sweep and the `offload` command line.

pub mod cli;
pub mod filters;
pub mod frames;
pub mod harness;
pub mod kernels;
pub mod reference;
