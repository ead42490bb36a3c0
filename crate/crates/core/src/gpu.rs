//! Whole device: configuration checks, occupancy, block scheduling across
//! SMs and the launch loop.
//!
//! All SMs advance in global-cycle lockstep. Within a cycle every SM first
//! retires, freed block slots are refilled, and then every SM issues. Cycles
//! in which no SM has work are skipped.

use thiserror::Error;

use crate::isa::Opcode;
use crate::kasm::{Kernel, KernelMetadata};
use crate::memsys::{MemError, MemoryImage, DEFAULT_GLOBAL_BYTES, SHARED_BYTES_PER_SM};
use crate::metrics::{Counters, WarpDepth};
use crate::smcore::{
    BlockShape, ExecCtx, ExecError, IssueEvent, SimError, SmConfig, SmState, MAX_BLOCKS_PER_SM, MAX_WARPS_PER_SM,
    MAX_WARP_STACK_DEPTH, REGISTERS_PER_SM,
};
use crate::WARP_SIZE;

pub const MAX_BLOCK_DIM: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GpuConfig {
    pub num_sms: u32,
    pub sps_per_sm: u32,
    pub warp_stack_depth: u32,
    pub operand_units: u8,
    pub mad_enabled: bool,
    pub global_mem_penalty: u32,
    pub shared_mem_penalty: u32,
    pub global_mem_bytes: u32,
    /// Re-check mask conservation and reconvergence at every stack event.
    pub check_invariants: bool,
    /// Record every issue event per SM.
    pub trace_issue: bool,
}

impl Default for GpuConfig {
    fn default() -> Self {
        GpuConfig {
            num_sms: 1,
            sps_per_sm: 8,
            warp_stack_depth: MAX_WARP_STACK_DEPTH,
            operand_units: 3,
            mad_enabled: true,
            global_mem_penalty: 10,
            shared_mem_penalty: 2,
            global_mem_bytes: DEFAULT_GLOBAL_BYTES,
            check_invariants: false,
            trace_issue: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("num_sms must be at least 1")]
    NoSms,
    #[error("InvalidSpCount {0} (expected 8, 16 or 32)")]
    InvalidSpCount(u32),
    #[error("warp_stack_depth {0} exceeds {MAX_WARP_STACK_DEPTH}")]
    StackTooDeep(u32),
    #[error("operand_units must be 2 or 3, got {0}")]
    OperandUnits(u8),
    #[error("operand_units=2 requires the multiplier to be disabled")]
    MadNeedsThreeOperands,
}

impl GpuConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_sms == 0 {
            return Err(ConfigError::NoSms);
        }
        if !matches!(self.sps_per_sm, 8 | 16 | 32) {
            return Err(ConfigError::InvalidSpCount(self.sps_per_sm));
        }
        if self.warp_stack_depth > MAX_WARP_STACK_DEPTH {
            return Err(ConfigError::StackTooDeep(self.warp_stack_depth));
        }
        match (self.operand_units, self.mad_enabled) {
            (3, _) | (2, false) => Ok(()),
            (2, true) => Err(ConfigError::MadNeedsThreeOperands),
            (n, _) => Err(ConfigError::OperandUnits(n)),
        }
    }

    fn sm_config(&self) -> SmConfig {
        SmConfig {
            num_sp: self.sps_per_sm,
            warp_stack_depth: self.warp_stack_depth,
            global_mem_penalty: self.global_mem_penalty,
            shared_mem_penalty: self.shared_mem_penalty,
            mad_enabled: self.mad_enabled,
            operand_units: self.operand_units,
            check_invariants: self.check_invariants,
            trace_issue: self.trace_issue,
        }
    }

    /// Configuration echo for reports.
    pub fn echo(&self) -> Vec<(String, String)> {
        [
            ("sms", self.num_sms.to_string()),
            ("sps", self.sps_per_sm.to_string()),
            ("stack_depth", self.warp_stack_depth.to_string()),
            ("operands", self.operand_units.to_string()),
            ("mad", self.mad_enabled.to_string()),
            ("global_penalty", self.global_mem_penalty.to_string()),
            ("shared_penalty", self.shared_mem_penalty.to_string()),
            ("global_bytes", self.global_mem_bytes.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LaunchParams {
    pub grid_dim: u32,
    pub block_dim: u32,
    pub params: Vec<u8>,
}

impl LaunchParams {
    pub fn new(grid_dim: u32, block_dim: u32, params: &[u32]) -> LaunchParams {
        LaunchParams {
            grid_dim,
            block_dim,
            params: crate::memsys::param_bytes(params),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LaunchError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("UnsupportedInstruction {0} (multiplier disabled)")]
    UnsupportedInstruction(Opcode),
    #[error("block_dim {0} outside 1..={MAX_BLOCK_DIM}")]
    BadBlockDim(u32),
    #[error("grid_dim must be at least 1")]
    EmptyGrid,
    #[error("Unlaunchable: no block fits on an SM")]
    Unlaunchable,
    #[error("{0}")]
    Mem(#[from] MemError),
    #[error("{0}")]
    Sim(#[from] SimError),
}

impl LaunchError {
    /// The runtime error kind, when the failure happened during execution.
    pub fn exec_kind(&self) -> Option<&ExecError> {
        match self {
            LaunchError::Sim(e) => Some(&e.kind),
            _ => None,
        }
    }
}

/// Non-fatal findings from [`validate_config`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigWarning {
    StaticDepthExceedsStack { static_depth: u32, configured: u32 },
}

impl std::fmt::Display for ConfigWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigWarning::StaticDepthExceedsStack {
                static_depth,
                configured,
            } => write!(
                f,
                "static SSY depth {static_depth} exceeds warp stack depth {configured}; the run may overflow"
            ),
        }
    }
}

/// Checks a kernel against a hardware configuration.
pub fn validate_config(meta: &KernelMetadata, config: &GpuConfig) -> Result<Vec<ConfigWarning>, LaunchError> {
    config.validate()?;
    if !config.mad_enabled {
        let first = meta.opcodes().find(|op| op.needs_multiplier());
        if let Some(op) = meta.uses_mad.then_some(Opcode::Imad).or(first) {
            return Err(LaunchError::UnsupportedInstruction(op));
        }
    }
    let mut warnings = Vec::new();
    if meta.static_ssy_depth > config.warp_stack_depth {
        warnings.push(ConfigWarning::StaticDepthExceedsStack {
            static_depth: meta.static_ssy_depth,
            configured: config.warp_stack_depth,
        });
    }
    Ok(warnings)
}

/// Blocks that can be resident on one SM at once.
pub fn occupancy(block_dim: u32, regs_per_thread: u32, shared_bytes: u32) -> Result<u32, LaunchError> {
    if block_dim == 0 || block_dim > MAX_BLOCK_DIM {
        return Err(LaunchError::BadBlockDim(block_dim));
    }
    let warps = block_dim.div_ceil(WARP_SIZE as u32);
    let by_warps = MAX_WARPS_PER_SM as u32 / warps;
    let by_regs = REGISTERS_PER_SM / (regs_per_thread.max(1) * block_dim);
    let by_shared = SHARED_BYTES_PER_SM
        .checked_div(shared_bytes)
        .unwrap_or(MAX_BLOCKS_PER_SM);
    match MAX_BLOCKS_PER_SM.min(by_warps).min(by_regs).min(by_shared) {
        0 => Err(LaunchError::Unlaunchable),
        n => Ok(n),
    }
}

/// Blocks designated for each SM, in the order they will be assigned.
pub fn schedule_blocks(grid_dim: u32, num_sms: u32) -> Vec<Vec<u32>> {
    let mut per_sm = vec![Vec::new(); num_sms as usize];
    for b in 0..grid_dim {
        per_sm[(b % num_sms) as usize].push(b);
    }
    per_sm
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockEvent {
    pub block: u32,
    pub sm: u32,
    pub assigned_at: u64,
    pub retired_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub memory: MemoryImage,
    pub counters: Counters,
    /// Ordered by block, then warp.
    pub warp_depths: Vec<WarpDepth>,
    /// Ordered by block.
    pub blocks: Vec<BlockEvent>,
    pub issue_trace: Vec<Vec<IssueEvent>>,
    pub invariant_checks: u64,
    pub warnings: Vec<ConfigWarning>,
}

impl RunResult {
    pub fn cycles(&self) -> u64 {
        self.counters.cycles
    }
}

/// Runs one kernel launch to completion over `memory`.
pub fn launch(
    kernel: &Kernel,
    lp: &LaunchParams,
    config: &GpuConfig,
    mut memory: MemoryImage,
) -> Result<RunResult, LaunchError> {
    let warnings = validate_config(&kernel.meta, config)?;
    if lp.grid_dim == 0 {
        return Err(LaunchError::EmptyGrid);
    }
    let image = &kernel.image;
    let occ = occupancy(lp.block_dim, image.regs_per_thread, image.shared_bytes)?;
    memory.init_params(&lp.params)?;

    let shape = BlockShape {
        block_dim: lp.block_dim,
        grid_dim: lp.grid_dim,
        regs_per_thread: image.regs_per_thread,
        shared_bytes: image.shared_bytes,
        entry: image.entry,
    };
    let sm_cfg = config.sm_config();
    let mut sms = (0..config.num_sms as usize)
        .map(|id| SmState::new(id, sm_cfg, shape, occ as usize))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|kind| SimError {
            kind,
            sm: 0,
            block: 0,
            warp: 0,
            pc: 0,
        })?;
    let mut queues: Vec<std::collections::VecDeque<u32>> = schedule_blocks(lp.grid_dim, config.num_sms)
        .into_iter()
        .map(Into::into)
        .collect();
    let mut blocks: Vec<Option<BlockEvent>> = vec![None; lp.grid_dim as usize];
    let mut depths: Vec<Vec<usize>> = vec![Vec::new(); lp.grid_dim as usize];

    let sim_err = |sm: usize, kind: ExecError| SimError {
        kind,
        sm,
        block: 0,
        warp: 0,
        pc: 0,
    };
    let mut t = 0u64;
    let fill = |sms: &mut [SmState],
                queues: &mut [std::collections::VecDeque<u32>],
                blocks: &mut [Option<BlockEvent>],
                t: u64|
     -> Result<(), SimError> {
        for (i, sm) in sms.iter_mut().enumerate() {
            while sm.free_block_slots() > 0 {
                let Some(b) = queues[i].pop_front() else { break };
                sm.assign_block(b).map_err(|k| sim_err(i, k))?;
                blocks[b as usize] = Some(BlockEvent {
                    block: b,
                    sm: i as u32,
                    assigned_at: t,
                    retired_at: 0,
                });
            }
        }
        Ok(())
    };
    fill(&mut sms, &mut queues, &mut blocks, t)?;

    let program = &kernel.program;
    loop {
        {
            let mut ctx = ExecCtx {
                program,
                global: memory.words_mut(),
            };
            for sm in sms.iter_mut() {
                sm.retire_phase(t, &mut ctx)?;
            }
        }
        for sm in sms.iter_mut() {
            for rb in sm.drain_retired() {
                if let Some(ev) = blocks[rb.block_id as usize].as_mut() {
                    ev.retired_at = rb.retired_at;
                }
                depths[rb.block_id as usize] = rb.warp_depths;
            }
        }
        fill(&mut sms, &mut queues, &mut blocks, t)?;
        for sm in sms.iter_mut() {
            sm.issue_phase(t, program)?;
        }
        if sms.iter().all(|s| s.is_idle()) && queues.iter().all(|q| q.is_empty()) {
            break;
        }
        match sms.iter().filter_map(|s| s.next_event(t + 1)).min() {
            Some(next) => t = next,
            None => {
                let stuck = sms.iter().position(|s| !s.is_idle()).unwrap_or(0);
                return Err(sim_err(stuck, ExecError::Deadlock).into());
            }
        }
    }

    let mut counters = Counters::default();
    let mut invariant_checks = 0;
    let mut issue_trace = Vec::new();
    for sm in &mut sms {
        counters = counters.merge(&sm.counters);
        invariant_checks += sm.invariant_checks;
        issue_trace.push(std::mem::take(&mut sm.issue_trace));
    }
    let warp_depths = depths
        .iter()
        .enumerate()
        .flat_map(|(b, ds)| {
            ds.iter().enumerate().map(move |(w, &d)| WarpDepth {
                block: b as u32,
                warp: w as u32,
                depth: d as u32,
            })
        })
        .collect();
    Ok(RunResult {
        memory,
        counters,
        warp_depths,
        blocks: blocks.into_iter().flatten().collect(),
        issue_trace,
        invariant_checks,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occupancy_examples() {
        assert_eq!(occupancy(256, 10, 0), Ok(3));
        assert_eq!(occupancy(32, 4, 4096), Ok(4));
        assert_eq!(occupancy(32, 128, 0), Ok(2));
        assert_eq!(occupancy(300, 4, 0), Err(LaunchError::BadBlockDim(300)));
        assert_eq!(occupancy(256, 128, 0), Err(LaunchError::Unlaunchable));
    }

    #[test]
    fn round_robin_assignment() {
        assert_eq!(schedule_blocks(4, 2), vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(schedule_blocks(1, 2), vec![vec![0], vec![]]);
    }

    #[test]
    fn config_rules() {
        assert!(GpuConfig::default().validate().is_ok());
        let two = GpuConfig {
            operand_units: 2,
            ..GpuConfig::default()
        };
        assert_eq!(two.validate(), Err(ConfigError::MadNeedsThreeOperands));
        assert!(GpuConfig {
            mad_enabled: false,
            ..two
        }
        .validate()
        .is_ok());
        assert_eq!(
            GpuConfig {
                sps_per_sm: 12,
                ..GpuConfig::default()
            }
            .validate(),
            Err(ConfigError::InvalidSpCount(12))
        );
        assert_eq!(
            GpuConfig {
                warp_stack_depth: 33,
                ..GpuConfig::default()
            }
            .validate(),
            Err(ConfigError::StackTooDeep(33))
        );
    }

    fn run(src: &str, grid: u32, block: u32, cfg: GpuConfig) -> Result<RunResult, LaunchError> {
        let k = Kernel::from_source(src).unwrap();
        launch(
            &k,
            &LaunchParams::new(grid, block, &[]),
            &cfg,
            MemoryImage::new(0x10000),
        )
    }

    #[test]
    fn single_iadd_timing() {
        let src = ".kernel t\nIADD R4, R0, R1\nEXIT\n";
        for (sps, retire) in [(8, 8), (16, 6), (32, 5)] {
            let cfg = GpuConfig {
                sps_per_sm: sps,
                trace_issue: true,
                ..GpuConfig::default()
            };
            let r = run(src, 1, 32, cfg).unwrap();
            // EXIT issues in the cycle IADD retires and takes as long.
            assert_eq!(r.cycles(), 2 * retire, "sps {sps}");
            assert_eq!(r.issue_trace[0][0].cycle, 0);
            assert_eq!(r.issue_trace[0][1].cycle, retire);
        }
    }

    #[test]
    fn round_robin_issue_on_consecutive_cycles() {
        let cfg = GpuConfig {
            sps_per_sm: 32,
            trace_issue: true,
            ..GpuConfig::default()
        };
        let r = run(".kernel t\nIADD R4, R0, R1\nEXIT\n", 1, 64, cfg).unwrap();
        let first: Vec<_> = r.issue_trace[0][..2].iter().map(|e| (e.cycle, e.warp_id)).collect();
        assert_eq!(first, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn multiplier_gating() {
        let k = Kernel::from_source(".kernel t\nIMAD R4, R0, R1, R2\nEXIT\n").unwrap();
        let cfg = GpuConfig {
            mad_enabled: false,
            ..GpuConfig::default()
        };
        assert_eq!(
            validate_config(&k.meta, &cfg),
            Err(LaunchError::UnsupportedInstruction(Opcode::Imad))
        );
    }

    #[test]
    fn static_depth_warning() {
        let k = Kernel::from_source(".kernel t\nSSY a\nSSY b\nSSY c\nc: SYNC\nb: SYNC\na: SYNC\nEXIT\n").unwrap();
        let cfg = GpuConfig {
            warp_stack_depth: 2,
            ..GpuConfig::default()
        };
        let w = validate_config(&k.meta, &cfg).unwrap();
        assert_eq!(
            w,
            vec![ConfigWarning::StaticDepthExceedsStack {
                static_depth: 3,
                configured: 2
            }]
        );
    }

    #[test]
    fn refill_waits_for_a_free_slot() {
        // 5 blocks, 2 SMs, occupancy 1: SM0 runs 0, 2, 4 back to back.
        let src = ".kernel t\n.shared 16384\nEXIT\n";
        let r = run(
            src,
            5,
            32,
            GpuConfig {
                num_sms: 2,
                ..GpuConfig::default()
            },
        )
        .unwrap();
        let sm_of: Vec<u32> = r.blocks.iter().map(|b| b.sm).collect();
        assert_eq!(sm_of, vec![0, 1, 0, 1, 0]);
        assert_eq!(r.blocks[2].assigned_at, r.blocks[0].retired_at);
        assert_eq!(r.blocks[4].assigned_at, r.blocks[2].retired_at);
        assert!(r.blocks[2].assigned_at > 0);
    }

    #[test]
    fn registers_initialized_from_ids() {
        // out[gid] = tid + 1000*bid + blockDim*gridDim, with gid = bid*blockDim + tid
        let src = "\
.kernel ids
IMAD R4, R1, R2, R0
SHL R5, R4, 2
IADD R5, R5, 0x1000
R2A A0, R5
IMUL R6, R1, 1000
IADD R6, R6, R0
IMUL R7, R2, R3
IADD R6, R6, R7
STG [A0+0], R6
EXIT
";
        let r = run(src, 3, 40, GpuConfig::default()).unwrap();
        let out = r.memory.read_words(0x1000, 120).unwrap();
        for gid in 0..120u32 {
            let (b, t) = (gid / 40, gid % 40);
            assert_eq!(out[gid as usize], t + 1000 * b + 120);
        }
    }

    #[test]
    fn barrier_releases_when_others_finished() {
        let src = "\
.kernel bar
ISETP p0, R0, 32
@p0.GE EXIT
BAR
EXIT
";
        let r = run(src, 1, 64, GpuConfig::default()).unwrap();
        assert_eq!(r.counters.barriers, 1);
    }

    #[test]
    fn barrier_holds_until_all_arrive() {
        // Warp 1 stores after the barrier what warp 0 wrote before it.
        let src = "\
.kernel bar
.shared 256
SHL R4, R0, 2
R2A A0, R4
IADD R5, R0, 7
STS [A0+0], R5
BAR
XOR R6, R4, 128
R2A A1, R6
LDS R7, [A1+0]
IADD R8, R4, 0x1000
R2A A2, R8
STG [A2+0], R7
EXIT
";
        let r = run(src, 1, 64, GpuConfig::default()).unwrap();
        let out = r.memory.read_words(0x1000, 64).unwrap();
        for t in 0..64u32 {
            assert_eq!(out[t as usize], (t ^ 32) + 7);
        }
    }

    #[test]
    fn stack_overflow_carries_location() {
        let src = ".kernel s\nSSY x\nx: SYNC\nEXIT\n";
        let cfg = GpuConfig {
            warp_stack_depth: 0,
            ..GpuConfig::default()
        };
        let err = run(src, 2, 32, cfg).unwrap_err();
        match err {
            LaunchError::Sim(e) => {
                assert_eq!(e.kind, ExecError::StackOverflow { limit: 0 });
                assert_eq!(e.pc, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_stack_sync_is_reported() {
        let err = run(".kernel s\nSYNC\nEXIT\n", 1, 32, GpuConfig::default()).unwrap_err();
        assert_eq!(err.exec_kind(), Some(&ExecError::EmptyStackSync));
    }

    #[test]
    fn out_of_bounds_store_aborts() {
        let src = ".kernel s\nMVI R4, 0x7FFFFFF0\nR2A A0, R4\nSTG [A0+0], R0\nEXIT\n";
        let err = run(src, 1, 32, GpuConfig::default()).unwrap_err();
        assert!(matches!(
            err.exec_kind(),
            Some(ExecError::Mem(MemError::OutOfBounds { .. }))
        ));
    }
}
