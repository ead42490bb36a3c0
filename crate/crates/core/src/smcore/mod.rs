//! One streaming multiprocessor: warp scheduling, pipeline timing, ALU
//! semantics, predicates and the warp-stack divergence protocol.

mod alu;
mod sm;
mod warp;

use thiserror::Error;

use crate::isa::Opcode;
use crate::memsys::MemError;

pub use alu::{alu_exec, eval_cond, partition_rows, set_flags, warp_rows};
pub use sm::{BlockShape, ExecCtx, IssueEvent, RetiredBlock, SmConfig, SmState, PIPELINE_STAGES};
pub use warp::{BranchOutcome, EntryType, InvariantLog, Warp, WarpStack, WarpStackEntry, WarpState, FULL_MASK};

/// Hardware limits of one SM.
pub const MAX_WARPS_PER_SM: usize = 24;
pub const MAX_THREADS_PER_SM: u32 = 768;
pub const MAX_BLOCKS_PER_SM: u32 = 8;
pub const REGISTERS_PER_SM: u32 = 8192;
/// Deepest warp stack the hardware provides.
pub const MAX_WARP_STACK_DEPTH: u32 = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("StackOverflow (configured depth {limit})")]
    StackOverflow { limit: usize },
    #[error("EmptyStackSync")]
    EmptyStackSync,
    #[error("NotAnAluOpcode {0}")]
    NotAnAluOpcode(Opcode),
    #[error("UnsupportedInstruction {0}")]
    UnsupportedInstruction(Opcode),
    #[error("ReservedCondCode {0}")]
    ReservedCondCode(u8),
    #[error("InvalidSpCount {0}")]
    InvalidSpCount(u32),
    #[error("InvalidPc {0:#x}")]
    InvalidPc(u32),
    #[error("GuardedControl {0} (SSY, SYNC and BAR cannot be predicated)")]
    GuardedControl(Opcode),
    #[error("OrphanedThreads {0:#010x}")]
    OrphanedThreads(u32),
    #[error("Deadlock")]
    Deadlock,
    #[error("NoFreeBlockSlot")]
    NoFreeBlockSlot,
    #[error("InvariantViolation {0}")]
    InvariantViolation(String),
    #[error("{0}")]
    Mem(#[from] MemError),
}

/// An execution error with the location it occurred at.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} (sm {sm}, block {block}, warp {warp}, pc {pc:#x})")]
pub struct SimError {
    pub kind: ExecError,
    pub sm: usize,
    pub block: u32,
    pub warp: u32,
    pub pc: u32,
}
