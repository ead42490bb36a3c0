//! Deterministic cycle-approximate simulator of a small SIMT GPU, with its
//! instruction set, assembler, warp-stack divergence handling, multi-SM block
//! scheduling and benchmark kernels.

pub mod benchkit;
pub mod cli;
pub mod container;
pub mod gpu;
pub mod isa;
pub mod kasm;
pub mod memsys;
pub mod metrics;
pub mod smcore;

/// Threads per warp.
pub const WARP_SIZE: usize = 32;
