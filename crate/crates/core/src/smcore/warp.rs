//! Warp state and the warp-stack divergence protocol.
//!
//! A divergent branch pushes a DIV entry holding the taken address and the
//! pre-branch mask, and the not-taken lanes run first. At SYNC a DIV entry
//! is popped and the mask is inverted within the saved mask, which switches
//! execution to the taken lanes. SSY pushes a SYNC entry with the
//! reconvergence address; popping it restores the mask saved at SSY.

use super::ExecError;

pub const FULL_MASK: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpState {
    Ready,
    InFlight,
    AtBarrier,
    Finished,
}

/// Two-bit entry type. Codes 2 and 3 are unused.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum EntryType {
    Div = 0,
    Sync = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WarpStackEntry {
    pub addr: u32,
    pub etype: EntryType,
    pub mask: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchOutcome {
    Taken,
    NotTaken,
    Diverged,
}

/// Bounded per-warp stack with push/pop accounting.
#[derive(Debug, Clone)]
pub struct WarpStack {
    entries: Vec<WarpStackEntry>,
    limit: usize,
    pub max_depth: usize,
    pub pushes: u64,
    pub pops: u64,
}

impl WarpStack {
    pub fn new(limit: usize) -> WarpStack {
        WarpStack {
            entries: Vec::with_capacity(limit.min(32)),
            limit,
            max_depth: 0,
            pushes: 0,
            pops: 0,
        }
    }

    pub fn push(&mut self, entry: WarpStackEntry) -> Result<(), ExecError> {
        debug_assert!(entry.mask != 0);
        if self.entries.len() >= self.limit {
            return Err(ExecError::StackOverflow { limit: self.limit });
        }
        self.entries.push(entry);
        self.pushes += 1;
        self.max_depth = self.max_depth.max(self.entries.len());
        Ok(())
    }

    pub fn pop(&mut self) -> Option<WarpStackEntry> {
        let e = self.entries.pop();
        if e.is_some() {
            self.pops += 1;
        }
        e
    }

    pub fn top(&self) -> Option<&WarpStackEntry> {
        self.entries.last()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn limit(&self) -> usize {
        self.limit
    }
}

/// Independent record of SSY masks used to check the protocol while it runs.
#[derive(Debug, Clone, Default)]
pub struct InvariantLog {
    ssy_masks: Vec<u32>,
    pub checks: u64,
}

#[derive(Debug, Clone)]
pub struct Warp {
    pub warp_id: u32,
    pub pc: u32,
    pub active_mask: u32,
    pub finished_mask: u32,
    pub state: WarpState,
    pub stack: WarpStack,
    pub log: Option<InvariantLog>,
}

impl Warp {
    /// A warp whose lanes outside `allocated` count as finished from the start.
    pub fn new(warp_id: u32, entry: u32, allocated: u32, stack_limit: usize) -> Warp {
        Warp {
            warp_id,
            pc: entry,
            active_mask: allocated,
            finished_mask: !allocated,
            state: WarpState::Ready,
            stack: WarpStack::new(stack_limit),
            log: None,
        }
    }

    pub fn with_invariant_checks(mut self) -> Warp {
        self.log = Some(InvariantLog::default());
        self
    }

    pub fn is_finished(&self) -> bool {
        self.finished_mask == FULL_MASK
    }

    fn violation(&self, what: &str) -> ExecError {
        ExecError::InvariantViolation(format!(
            "warp {} pc {:#x}: {what} (active {:#010x}, finished {:#010x})",
            self.warp_id, self.pc, self.active_mask, self.finished_mask
        ))
    }

    /// Applies a conditional branch whose per-lane outcome is `taken_mask`.
    pub fn resolve_branch(
        &mut self,
        taken_mask: u32,
        target: u32,
        fallthrough: u32,
    ) -> Result<BranchOutcome, ExecError> {
        let active = self.active_mask;
        if taken_mask & !active != 0 {
            return Err(self.violation("taken lanes outside active mask"));
        }
        if taken_mask == active {
            self.pc = target;
            return Ok(BranchOutcome::Taken);
        }
        if taken_mask == 0 {
            self.pc = fallthrough;
            return Ok(BranchOutcome::NotTaken);
        }
        self.stack.push(WarpStackEntry {
            addr: target,
            etype: EntryType::Div,
            mask: active,
        })?;
        let not_taken = active & !taken_mask;
        if let Some(log) = &mut self.log {
            log.checks += 1;
            if taken_mask | not_taken != active || taken_mask & not_taken != 0 {
                return Err(self.violation("mask conservation"));
            }
        }
        self.active_mask = not_taken;
        self.pc = fallthrough;
        Ok(BranchOutcome::Diverged)
    }

    /// SSY: records the reconvergence point for the current mask.
    pub fn push_reconvergence(&mut self, addr: u32) -> Result<(), ExecError> {
        self.stack.push(WarpStackEntry {
            addr,
            etype: EntryType::Sync,
            mask: self.active_mask,
        })?;
        if let Some(log) = &mut self.log {
            log.ssy_masks.push(self.active_mask);
        }
        Ok(())
    }

    fn apply_pop(&mut self, entry: WarpStackEntry) -> Result<(), ExecError> {
        match entry.etype {
            EntryType::Div => {
                let before = self.active_mask;
                self.active_mask = entry.mask & !before & !self.finished_mask;
                if let Some(log) = &mut self.log {
                    log.checks += 1;
                    if self.active_mask & before != 0 || self.active_mask & !entry.mask != 0 {
                        return Err(self.violation("divergent path mask not disjoint"));
                    }
                }
            }
            EntryType::Sync => {
                self.active_mask = entry.mask & !self.finished_mask;
                let finished = self.finished_mask;
                if let Some(log) = &mut self.log {
                    log.checks += 1;
                    let restored = log.ssy_masks.pop().map(|m| m & !finished);
                    if restored != Some(self.active_mask) {
                        return Err(self.violation("reconvergence restoration"));
                    }
                }
            }
        }
        self.pc = entry.addr;
        Ok(())
    }

    /// SYNC: pops one entry and switches to its path, then keeps unwinding
    /// while no lane is left active.
    pub fn sync_pop(&mut self) -> Result<(), ExecError> {
        let entry = self.stack.pop().ok_or(ExecError::EmptyStackSync)?;
        self.apply_pop(entry)?;
        self.unwind()
    }

    /// EXIT for the lanes in `mask`.
    pub fn exit_lanes(&mut self, mask: u32, next_pc: u32) -> Result<(), ExecError> {
        self.finished_mask |= mask;
        self.active_mask &= !mask;
        self.pc = next_pc;
        self.unwind()
    }

    /// Pops entries until some lane is active; marks the warp finished when
    /// the stack runs dry with every lane done.
    fn unwind(&mut self) -> Result<(), ExecError> {
        while self.active_mask == 0 {
            match self.stack.pop() {
                Some(entry) => self.apply_pop(entry)?,
                None if self.is_finished() => {
                    self.state = WarpState::Finished;
                    return Ok(());
                }
                None => return Err(ExecError::OrphanedThreads(!self.finished_mask)),
            }
        }
        Ok(())
    }
}
