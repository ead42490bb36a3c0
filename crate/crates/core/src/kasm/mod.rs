//! Assembler and static analysis for kernel images.

mod parser;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::isa::{self, Instruction, IsaError, Opcode};

pub use parser::assemble;

/// Shared memory available to one SM.
pub const MAX_SHARED_BYTES: u32 = 16384;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KasmError {
    #[error("line {line}: UnknownMnemonic {name}")]
    UnknownMnemonic { line: usize, name: String },
    #[error("line {line}: UndefinedLabel {label}")]
    UndefinedLabel { line: usize, label: String },
    #[error("line {line}: DuplicateLabel {label}")]
    DuplicateLabel { line: usize, label: String },
    #[error("line {line}: RegisterOutOfRange R{reg} (limit {limit})")]
    RegisterOutOfRange { line: usize, reg: u32, limit: u32 },
    #[error("SharedMemTooLarge {bytes} bytes (limit 16384)")]
    SharedMemTooLarge { bytes: u64 },
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Encoding { line: usize, source: IsaError },
    #[error("DecodeError {0}")]
    Decode(#[from] IsaError),
    #[error("BadBranchTarget {target:#x} at {pc:#x}")]
    BadBranchTarget { pc: u32, target: u32 },
    #[error("InvalidImage: {0}")]
    InvalidImage(String),
}

/// Assembled code plus the launch-relevant resource declarations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelImage {
    pub name: String,
    pub code: Vec<u8>,
    pub entry: u32,
    pub regs_per_thread: u32,
    pub shared_bytes: u32,
    pub symbols: BTreeMap<String, u32>,
}

/// Result of the static instruction analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelMetadata {
    pub histogram: [u32; Opcode::COUNT],
    pub uses_mad: bool,
    pub static_ssy_depth: u32,
    pub max_reg_used: Option<u8>,
}

impl KernelMetadata {
    pub fn count(&self, op: Opcode) -> u32 {
        self.histogram[op.index()]
    }

    /// Opcodes present in the kernel, in opcode order.
    pub fn opcodes(&self) -> impl Iterator<Item = Opcode> + '_ {
        Opcode::ALL.into_iter().filter(|op| self.histogram[op.index()] > 0)
    }
}

/// Walks every instruction of the image in address order.
pub fn instructions(code: &[u8]) -> impl Iterator<Item = Result<(u32, Instruction), IsaError>> + '_ {
    let mut offset = 0usize;
    let mut failed = false;
    std::iter::from_fn(move || {
        if failed || offset >= code.len() {
            return None;
        }
        match isa::decode(code, offset) {
            Ok((instr, len)) => {
                let pc = offset as u32;
                offset += len;
                Some(Ok((pc, instr)))
            }
            Err(e) => {
                failed = true;
                Some(Err(e))
            }
        }
    })
}

/// Counts instructions and bounds the static SSY nesting.
///
/// The nesting bound is a flow-insensitive linear scan: SSY increments a
/// counter, SYNC decrements it (never below zero), and the maximum is kept.
pub fn analyze(image: &KernelImage) -> Result<KernelMetadata, IsaError> {
    let mut histogram = [0u32; Opcode::COUNT];
    let mut depth = 0u32;
    let mut max_depth = 0u32;
    let mut max_reg: Option<u8> = None;
    for item in instructions(&image.code) {
        let (_, instr) = item?;
        histogram[instr.opcode.index()] += 1;
        match instr.opcode {
            Opcode::Ssy => {
                depth += 1;
                max_depth = max_depth.max(depth);
            }
            Opcode::Sync => depth = depth.saturating_sub(1),
            _ => {}
        }
        if let Some(r) = instr.general_regs().max() {
            max_reg = Some(max_reg.map_or(r, |m| m.max(r)));
        }
    }
    Ok(KernelMetadata {
        uses_mad: histogram[Opcode::Imul.index()] + histogram[Opcode::Imad.index()] > 0,
        histogram,
        static_ssy_depth: max_depth,
        max_reg_used: max_reg,
    })
}

impl KernelImage {
    /// Checks the image invariants: clean decode, in-range registers and
    /// shared memory, and branch targets on instruction boundaries.
    pub fn validate(&self) -> Result<(), KasmError> {
        if self.shared_bytes > MAX_SHARED_BYTES {
            return Err(KasmError::SharedMemTooLarge {
                bytes: self.shared_bytes as u64,
            });
        }
        if !(1..=isa::MAX_REGS as u32).contains(&self.regs_per_thread) {
            return Err(KasmError::InvalidImage(format!(
                "regs_per_thread {} outside 1..=128",
                self.regs_per_thread
            )));
        }
        let program = Program::decode(&self.code)?;
        if self.entry as usize != 0 && program.fetch(self.entry).is_none() {
            return Err(KasmError::InvalidImage(format!(
                "entry {:#x} is not an instruction",
                self.entry
            )));
        }
        for (&pc, instr) in program.pcs.iter().zip(&program.instrs) {
            if let Some(target) = instr.target() {
                if program.fetch(target).is_none() {
                    return Err(KasmError::BadBranchTarget { pc, target });
                }
            }
            if let Some(reg) = instr.general_regs().find(|&r| r as u32 >= self.regs_per_thread) {
                return Err(KasmError::RegisterOutOfRange {
                    line: 0,
                    reg: reg as u32,
                    limit: self.regs_per_thread,
                });
            }
        }
        Ok(())
    }
}

/// Code decoded once up front, indexed by byte address.
#[derive(Debug, Clone)]
pub struct Program {
    instrs: Vec<Instruction>,
    pcs: Vec<u32>,
    /// Instruction index per 4-byte word; `u32::MAX` for the second word of
    /// a long instruction.
    by_word: Vec<u32>,
}

impl Program {
    pub fn decode(code: &[u8]) -> Result<Program, IsaError> {
        let mut instrs = Vec::new();
        let mut pcs = Vec::new();
        let mut by_word = vec![u32::MAX; code.len().div_ceil(4)];
        for item in instructions(code) {
            let (pc, instr) = item?;
            by_word[pc as usize / 4] = instrs.len() as u32;
            instrs.push(instr);
            pcs.push(pc);
        }
        Ok(Program { instrs, pcs, by_word })
    }

    /// The instruction starting at byte address `pc`, if any.
    #[inline]
    pub fn fetch(&self, pc: u32) -> Option<&Instruction> {
        if !pc.is_multiple_of(4) {
            return None;
        }
        match self.by_word.get(pc as usize / 4) {
            Some(&idx) if idx != u32::MAX => Some(&self.instrs[idx as usize]),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &Instruction)> {
        self.pcs.iter().copied().zip(&self.instrs)
    }
}

/// A validated image together with its analysis and decoded program.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub image: KernelImage,
    pub meta: KernelMetadata,
    pub program: Program,
}

impl Kernel {
    pub fn new(image: KernelImage) -> Result<Kernel, KasmError> {
        image.validate()?;
        let meta = analyze(&image)?;
        let program = Program::decode(&image.code)?;
        Ok(Kernel { image, meta, program })
    }

    pub fn from_source(source: &str) -> Result<Kernel, KasmError> {
        let (image, meta) = assemble(source)?;
        let program = Program::decode(&image.code)?;
        Ok(Kernel { image, meta, program })
    }

    /// Canonical source text that reassembles to the same image.
    pub fn disassemble(&self) -> String {
        disassemble_image(&self.image, &self.program)
    }
}

/// Renders an image as re-assemblable source. Branch targets are printed as
/// numeric addresses; symbols are not reproduced.
pub fn disassemble_image(image: &KernelImage, program: &Program) -> String {
    let mut out = String::new();
    out.push_str(&format!(".kernel {}\n", image.name));
    out.push_str(&format!(".regs {}\n", image.regs_per_thread));
    if image.shared_bytes > 0 {
        out.push_str(&format!(".shared {}\n", image.shared_bytes));
    }
    for (pc, instr) in program.iter() {
        out.push_str(&format!("    {:<40} # {:04X}\n", isa::disassemble(instr), pc));
    }
    out
}
