//! SM state machine and timing.
//!
//! Timing contract: the issue stage picks the next Ready warp round-robin
//! by warp id and is then busy for `rows` cycles. A warp instruction issued
//! at cycle `t` retires at `t + PIPELINE_STAGES + (rows - 1) + penalty`,
//! where the penalty applies to global and shared memory accesses only.
//! All architectural effects commit at retire. A warp has at most one
//! instruction in flight.

use super::warp::{BranchOutcome, Warp, WarpState};
use super::{alu_exec, warp_rows, ExecError, SimError, MAX_WARPS_PER_SM};
use crate::isa::{FlagNibble, Guard, Instruction, Opcode, Operand, Shape};
use crate::kasm::Program;
use crate::memsys::{self, SHARED_BYTES_PER_SM};
use crate::metrics::Counters;
use crate::WARP_SIZE;

pub const PIPELINE_STAGES: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmConfig {
    pub num_sp: u32,
    pub warp_stack_depth: u32,
    pub global_mem_penalty: u32,
    pub shared_mem_penalty: u32,
    pub mad_enabled: bool,
    pub operand_units: u8,
    pub check_invariants: bool,
    pub trace_issue: bool,
}

impl Default for SmConfig {
    fn default() -> Self {
        SmConfig {
            num_sp: 8,
            warp_stack_depth: 32,
            global_mem_penalty: 10,
            shared_mem_penalty: 2,
            mad_enabled: true,
            operand_units: 3,
            check_invariants: false,
            trace_issue: false,
        }
    }
}

/// Per-launch block geometry and resource needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub block_dim: u32,
    pub grid_dim: u32,
    pub regs_per_thread: u32,
    pub shared_bytes: u32,
    /// Byte address of the first instruction.
    pub entry: u32,
}

impl BlockShape {
    pub fn warps_per_block(&self) -> usize {
        self.block_dim.div_ceil(WARP_SIZE as u32) as usize
    }
}

/// Borrowed launch context needed to execute instructions.
pub struct ExecCtx<'a> {
    pub program: &'a Program,
    pub global: &'a mut [u32],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IssueEvent {
    pub cycle: u64,
    pub warp_id: u32,
    pub pc: u32,
}

/// A block that completed, with the deepest warp stack seen per warp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetiredBlock {
    pub block_id: u32,
    pub retired_at: u64,
    pub warp_depths: Vec<usize>,
}

struct LaneFile {
    regs: Vec<[u32; WARP_SIZE]>,
    preds: [[FlagNibble; WARP_SIZE]; 4],
    addrs: [[u32; WARP_SIZE]; 4],
}

impl LaneFile {
    fn guard_mask(&self, guard: Guard, active: u32) -> u32 {
        if guard.is_always() {
            return active;
        }
        let preds = &self.preds[guard.reg as usize];
        let mut mask = 0;
        let mut bits = active;
        while bits != 0 {
            let lane = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            if guard.cond.eval(preds[lane]) {
                mask |= 1 << lane;
            }
        }
        mask
    }
}

struct WarpSlot {
    warp: Warp,
    lanes: LaneFile,
    block_slot: usize,
    retire_at: Option<u64>,
}

struct ResidentBlock {
    block_id: u32,
    first_warp: usize,
    num_warps: usize,
    shared_base: usize,
}

pub struct SmState {
    pub id: usize,
    cfg: SmConfig,
    shape: BlockShape,
    rows: u64,
    warps: Vec<Option<WarpSlot>>,
    blocks: Vec<Option<ResidentBlock>>,
    shared: Vec<u32>,
    pub cycle: u64,
    front_free_at: u64,
    rr_next: usize,
    pub counters: Counters,
    retired: Vec<RetiredBlock>,
    pub issue_trace: Vec<IssueEvent>,
    pub invariant_checks: u64,
}

fn lanes_of(mask: u32) -> impl Iterator<Item = usize> {
    let mut bits = mask;
    std::iter::from_fn(move || {
        if bits == 0 {
            None
        } else {
            let lane = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(lane)
        }
    })
}

impl SmState {
    /// An empty SM able to hold `block_slots` blocks of the given shape.
    pub fn new(id: usize, cfg: SmConfig, shape: BlockShape, block_slots: usize) -> Result<SmState, ExecError> {
        let rows = warp_rows(cfg.num_sp)? as u64;
        let fits = block_slots * shape.warps_per_block() <= MAX_WARPS_PER_SM
            && block_slots as u64 * shape.shared_bytes as u64 <= SHARED_BYTES_PER_SM as u64;
        if !fits {
            return Err(ExecError::NoFreeBlockSlot);
        }
        Ok(SmState {
            id,
            cfg,
            shape,
            rows,
            warps: (0..MAX_WARPS_PER_SM).map(|_| None).collect(),
            blocks: (0..block_slots).map(|_| None).collect(),
            shared: vec![0; (SHARED_BYTES_PER_SM / 4) as usize],
            cycle: 0,
            front_free_at: 0,
            rr_next: 0,
            counters: Counters::default(),
            retired: Vec::new(),
            issue_trace: Vec::new(),
            invariant_checks: 0,
        })
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn free_block_slots(&self) -> usize {
        self.blocks.iter().filter(|b| b.is_none()).count()
    }

    pub fn resident_blocks(&self) -> usize {
        self.blocks.len() - self.free_block_slots()
    }

    pub fn resident_warps(&self) -> usize {
        self.warps.iter().filter(|w| w.is_some()).count()
    }

    pub fn is_idle(&self) -> bool {
        self.resident_blocks() == 0
    }

    pub fn warp(&self, warp_id: usize) -> Option<&Warp> {
        self.warps.get(warp_id)?.as_ref().map(|s| &s.warp)
    }

    /// Register `reg` of every lane of a resident warp.
    pub fn warp_register(&self, warp_id: usize, reg: usize) -> Option<[u32; WARP_SIZE]> {
        self.warps.get(warp_id)?.as_ref()?.lanes.regs.get(reg).copied()
    }

    /// Makes block `block_id` resident, initializing R0..R3 of each thread to
    /// thread index, block index, block size and grid size.
    pub fn assign_block(&mut self, block_id: u32) -> Result<(), ExecError> {
        let slot = self
            .blocks
            .iter()
            .position(|b| b.is_none())
            .ok_or(ExecError::NoFreeBlockSlot)?;
        let wpb = self.shape.warps_per_block();
        let first_warp = slot * wpb;
        let shared_words = (self.shape.shared_bytes / 4) as usize;
        let shared_base = slot * shared_words;
        self.shared[shared_base..shared_base + shared_words].fill(0);

        let regs = self.shape.regs_per_thread as usize;
        for w in 0..wpb {
            let base_tid = (w * WARP_SIZE) as u32;
            let live = self.shape.block_dim.saturating_sub(base_tid).min(WARP_SIZE as u32);
            let allocated = if live == 32 { u32::MAX } else { (1u32 << live) - 1 };
            let mut lanes = LaneFile {
                regs: vec![[0; WARP_SIZE]; regs],
                preds: [[FlagNibble::default(); WARP_SIZE]; 4],
                addrs: [[0; WARP_SIZE]; 4],
            };
            let init = [
                std::array::from_fn(|l| base_tid + l as u32),
                [block_id; WARP_SIZE],
                [self.shape.block_dim; WARP_SIZE],
                [self.shape.grid_dim; WARP_SIZE],
            ];
            for (r, values) in init.into_iter().enumerate().take(regs) {
                lanes.regs[r] = values;
            }
            let mut warp = Warp::new(
                (first_warp + w) as u32,
                self.shape.entry,
                allocated,
                self.cfg.warp_stack_depth as usize,
            );
            if self.cfg.check_invariants {
                warp = warp.with_invariant_checks();
            }
            self.warps[first_warp + w] = Some(WarpSlot {
                warp,
                lanes,
                block_slot: slot,
                retire_at: None,
            });
        }
        self.blocks[slot] = Some(ResidentBlock {
            block_id,
            first_warp,
            num_warps: wpb,
            shared_base,
        });
        Ok(())
    }

    /// Blocks completed since the last call.
    pub fn drain_retired(&mut self) -> Vec<RetiredBlock> {
        std::mem::take(&mut self.retired)
    }

    fn has_ready_warp(&self) -> bool {
        self.warps.iter().flatten().any(|s| s.warp.state == WarpState::Ready)
    }

    /// Earliest cycle at or after `now` at which this SM has something to do.
    pub fn next_event(&self, now: u64) -> Option<u64> {
        let retire = self.warps.iter().flatten().filter_map(|s| s.retire_at).min();
        let issue = self.has_ready_warp().then(|| self.front_free_at.max(now));
        match (retire, issue) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Advances one cycle: retire, then issue.
    pub fn step(&mut self, ctx: &mut ExecCtx<'_>) -> Result<(), SimError> {
        if self.is_idle() {
            return Err(self.error(0, ExecError::Deadlock));
        }
        let t = self.cycle;
        self.retire_phase(t, ctx)?;
        self.issue_phase(t, ctx.program)?;
        if !self.is_idle() && self.next_event(t + 1).is_none() {
            return Err(self.error(0, ExecError::Deadlock));
        }
        self.cycle = t + 1;
        Ok(())
    }

    fn error(&self, warp_id: usize, kind: ExecError) -> SimError {
        let (block, pc) = match self.warps.get(warp_id).and_then(|w| w.as_ref()) {
            Some(slot) => (
                self.blocks[slot.block_slot].as_ref().map_or(0, |b| b.block_id),
                slot.warp.pc,
            ),
            None => (0, 0),
        };
        SimError {
            kind,
            sm: self.id,
            block,
            warp: warp_id as u32,
            pc,
        }
    }

    /// Commits every warp instruction due at cycle `t`, in warp-id order.
    pub fn retire_phase(&mut self, t: u64, ctx: &mut ExecCtx<'_>) -> Result<(), SimError> {
        for w in 0..self.warps.len() {
            let due = matches!(&self.warps[w], Some(s) if s.retire_at == Some(t));
            if !due {
                continue;
            }
            self.counters.cycles = self.counters.cycles.max(t);
            self.execute(w, ctx).map_err(|e| self.error(w, e))?;
            let slot = self.warps[w].as_mut().expect("due warp is resident");
            slot.retire_at = None;
            if slot.warp.state == WarpState::InFlight {
                slot.warp.state = WarpState::Ready;
            }
            let block_slot = slot.block_slot;
            if matches!(slot.warp.state, WarpState::AtBarrier | WarpState::Finished) {
                self.check_block(block_slot, t);
            }
        }
        Ok(())
    }

    /// Releases a barrier once every unfinished warp has arrived, and frees
    /// the block when all of its warps are done.
    fn check_block(&mut self, block_slot: usize, t: u64) {
        let Some(block) = &self.blocks[block_slot] else {
            return;
        };
        let range = block.first_warp..block.first_warp + block.num_warps;
        let states = || self.warps[range.clone()].iter().flatten().map(|s| s.warp.state);
        if states().all(|s| s == WarpState::Finished) {
            let warp_depths = self.warps[range.clone()]
                .iter_mut()
                .map(|s| {
                    let s = s.take().expect("block warp is resident");
                    self.counters.stack_pushes += s.warp.stack.pushes;
                    self.counters.stack_pops += s.warp.stack.pops;
                    if let Some(log) = &s.warp.log {
                        self.invariant_checks += log.checks;
                    }
                    s.warp.stack.max_depth
                })
                .collect::<Vec<_>>();
            let max = warp_depths.iter().copied().max().unwrap_or(0);
            self.counters.max_stack_depth = self.counters.max_stack_depth.max(max as u64);
            let block = self.blocks[block_slot].take().expect("checked above");
            self.retired.push(RetiredBlock {
                block_id: block.block_id,
                retired_at: t,
                warp_depths,
            });
            return;
        }
        if states().all(|s| matches!(s, WarpState::Finished | WarpState::AtBarrier)) {
            for slot in self.warps[range].iter_mut().flatten() {
                if slot.warp.state == WarpState::AtBarrier {
                    slot.warp.state = WarpState::Ready;
                }
            }
        }
    }

    /// Issues at most one warp instruction at cycle `t`.
    pub fn issue_phase(&mut self, t: u64, program: &Program) -> Result<(), SimError> {
        if self.front_free_at > t {
            return Ok(());
        }
        let n = self.warps.len();
        let Some(w) = (0..n)
            .map(|k| (self.rr_next + k) % n)
            .find(|&w| matches!(&self.warps[w], Some(s) if s.warp.state == WarpState::Ready))
        else {
            return Ok(());
        };
        let cfg = self.cfg;
        let rows = self.rows;
        let slot = self.warps[w].as_mut().expect("selected warp is resident");
        let pc = slot.warp.pc;
        let penalty = match program.fetch(pc).map(|i| i.opcode) {
            Some(Opcode::Ldg | Opcode::Stg) => cfg.global_mem_penalty as u64,
            Some(Opcode::Lds | Opcode::Sts) => cfg.shared_mem_penalty as u64,
            _ => 0,
        };
        slot.retire_at = Some(t + PIPELINE_STAGES + (rows - 1) + penalty);
        slot.warp.state = WarpState::InFlight;
        self.front_free_at = t + rows;
        self.rr_next = (w + 1) % n;
        if cfg.trace_issue {
            self.issue_trace.push(IssueEvent {
                cycle: t,
                warp_id: w as u32,
                pc,
            });
        }
        Ok(())
    }

    fn execute(&mut self, w: usize, ctx: &mut ExecCtx<'_>) -> Result<(), ExecError> {
        let cfg = self.cfg;
        let slot = self.warps[w].as_mut().expect("executing warp is resident");
        let pc = slot.warp.pc;
        let instr: Instruction = *ctx.program.fetch(pc).ok_or(ExecError::InvalidPc(pc))?;
        let op = instr.opcode;
        let next_pc = pc.wrapping_add(instr.len() as u32);
        let active = slot.warp.active_mask;
        let exec = slot.lanes.guard_mask(instr.guard, active);
        let n_exec = exec.count_ones() as u64;

        let c = &mut self.counters;
        c.warp_instructions_retired += 1;
        c.thread_instructions += active.count_ones() as u64;
        c.predicated_off_lanes += (active & !exec).count_ones() as u64;
        c.histogram[op.index()] += 1;

        let lanes = &mut slot.lanes;
        let reg2_reads = matches!(instr.src2, Operand::Reg(_)) as u64;
        match op.shape() {
            Shape::Binary | Shape::Mad | Shape::Unary | Shape::MoveImm => {
                if op.needs_multiplier() && !cfg.mad_enabled {
                    return Err(ExecError::UnsupportedInstruction(op));
                }
                if op == Opcode::Imad && cfg.operand_units < 3 {
                    return Err(ExecError::UnsupportedInstruction(op));
                }
                let reads = match op.shape() {
                    Shape::Binary => 1 + reg2_reads,
                    Shape::Mad => 3,
                    Shape::Unary => 1,
                    _ => 0,
                };
                c.register_reads += reads * n_exec;
                c.register_writes += n_exec;
                let a = lanes.regs[instr.src1 as usize];
                let b = match instr.src2 {
                    Operand::Reg(r) => lanes.regs[r as usize],
                    Operand::Imm(v) => [v; WARP_SIZE],
                };
                let cc = lanes.regs[instr.src3 as usize];
                let dst = &mut lanes.regs[instr.dst as usize];
                for l in lanes_of(exec) {
                    dst[l] = alu_exec(op, a[l], b[l], cc[l])?;
                }
                slot.warp.pc = next_pc;
            }
            Shape::SetPred => {
                c.register_reads += (1 + reg2_reads) * n_exec;
                let a = lanes.regs[instr.src1 as usize];
                let b = match instr.src2 {
                    Operand::Reg(r) => lanes.regs[r as usize],
                    Operand::Imm(v) => [v; WARP_SIZE],
                };
                let p = &mut lanes.preds[instr.dst as usize];
                for l in lanes_of(exec) {
                    p[l] = FlagNibble::from_sub(a[l], b[l]);
                }
                slot.warp.pc = next_pc;
            }
            Shape::ToAddr => {
                c.register_reads += n_exec;
                let src = lanes.regs[instr.src1 as usize];
                let a = &mut lanes.addrs[instr.dst as usize];
                for l in lanes_of(exec) {
                    a[l] = src[l];
                }
                slot.warp.pc = next_pc;
            }
            Shape::FromAddr => {
                c.register_writes += n_exec;
                let src = lanes.addrs[instr.src1 as usize];
                let dst = &mut lanes.regs[instr.dst as usize];
                for l in lanes_of(exec) {
                    dst[l] = src[l];
                }
                slot.warp.pc = next_pc;
            }
            Shape::Load | Shape::Store => {
                let offset = instr.src2.imm().unwrap_or(0);
                let base = &lanes.addrs[instr.src1 as usize];
                let addrs: [u32; WARP_SIZE] = std::array::from_fn(|l| base[l].wrapping_add(offset));
                let block = self.blocks[slot.block_slot].as_ref().expect("warp's block is resident");
                let shared_words = (self.shape.shared_bytes / 4) as usize;
                let region: &mut [u32] = match op {
                    Opcode::Ldg | Opcode::Stg => ctx.global,
                    _ => &mut self.shared[block.shared_base..block.shared_base + shared_words],
                };
                match op {
                    Opcode::Ldg | Opcode::Lds => {
                        let dst = &mut lanes.regs[instr.dst as usize];
                        memsys::load(region, &addrs, exec, dst)?;
                        c.register_writes += n_exec;
                        if op == Opcode::Ldg {
                            c.global_loads += n_exec;
                        } else {
                            c.shared_loads += n_exec;
                        }
                    }
                    _ => {
                        let values = &lanes.regs[instr.dst as usize];
                        memsys::store(region, &addrs, values, exec)?;
                        c.register_reads += n_exec;
                        if op == Opcode::Stg {
                            c.global_stores += n_exec;
                        } else {
                            c.shared_stores += n_exec;
                        }
                    }
                }
                slot.warp.pc = next_pc;
            }
            Shape::Target if op == Opcode::Bra => {
                let target = instr.target().expect("validated branch target");
                if slot.warp.resolve_branch(exec, target, next_pc)? == BranchOutcome::Diverged {
                    c.divergences += 1;
                }
            }
            Shape::Target => {
                if !instr.guard.is_always() {
                    return Err(ExecError::GuardedControl(op));
                }
                let target = instr.target().expect("validated SSY target");
                slot.warp.push_reconvergence(target)?;
                slot.warp.pc = next_pc;
            }
            Shape::Bare => {
                if op != Opcode::Exit && !instr.guard.is_always() {
                    return Err(ExecError::GuardedControl(op));
                }
                match op {
                    Opcode::Sync => slot.warp.sync_pop()?,
                    Opcode::Bar => {
                        c.barriers += 1;
                        slot.warp.pc = next_pc;
                        slot.warp.state = WarpState::AtBarrier;
                    }
                    _ => slot.warp.exit_lanes(exec, next_pc)?,
                }
            }
        }
        Ok(())
    }
}
