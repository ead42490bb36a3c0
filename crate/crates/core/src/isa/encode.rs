//! Binary encoding.
//!
//! All words are little-endian. Bit 0 of the first word selects the form.
//!
//! Long form, word 0:
//!
//! | bits   | field                    |
//! |--------|--------------------------|
//! | 0      | 1                        |
//! | 6..1   | opcode                   |
//! | 8..7   | guard predicate register |
//! | 13..9  | guard condition          |
//! | 21..14 | dst                      |
//! | 29..22 | src1                     |
//! | 30     | src2 is immediate        |
//! | 31     | reserved, 0              |
//!
//! Long form, word 1: the immediate when bit 30 is set, otherwise
//! src2 in bits 7..0 and src3 in bits 15..8 with bits 31..16 reserved.
//!
//! Short form: bit 0 = 0, opcode in 6..1, dst in 14..7, src1 in 22..15,
//! src2 in 30..23, bit 31 reserved.

use super::{CondCode, Form, Guard, Instruction, IsaError, Opcode, Operand};

const LONG_BIT: u32 = 1;
const IMM_BIT: u32 = 1 << 30;
const RESERVED_BIT: u32 = 1 << 31;

fn word_at(bytes: &[u8], offset: usize) -> Option<u32> {
    let chunk = bytes.get(offset..offset.checked_add(4)?)?;
    Some(u32::from_le_bytes(chunk.try_into().ok()?))
}

/// Decodes the instruction starting at `offset`, returning it and its length.
pub fn decode(bytes: &[u8], offset: usize) -> Result<(Instruction, usize), IsaError> {
    let w0 = word_at(bytes, offset).ok_or(IsaError::TruncatedInstruction { offset })?;
    let reserved = |detail| IsaError::ReservedBitsSet { offset, detail };
    if w0 & RESERVED_BIT != 0 {
        return Err(reserved("bit 31 of word 0"));
    }
    let opcode = Opcode::from_code(((w0 >> 1) & 0x3F) as u8)?;

    let instr = if w0 & LONG_BIT != 0 {
        let w1 = word_at(bytes, offset + 4).ok_or(IsaError::TruncatedInstruction { offset })?;
        let guard = Guard {
            reg: ((w0 >> 7) & 0x3) as u8,
            cond: CondCode::from_code(((w0 >> 9) & 0x1F) as u8)?,
        };
        let (src2, src3) = if w0 & IMM_BIT != 0 {
            (Operand::Imm(w1), 0)
        } else {
            if w1 >> 16 != 0 {
                return Err(reserved("bits 31..16 of word 1"));
            }
            (Operand::Reg((w1 & 0xFF) as u8), ((w1 >> 8) & 0xFF) as u8)
        };
        Instruction {
            opcode,
            form: Form::Long,
            guard,
            dst: ((w0 >> 14) & 0xFF) as u8,
            src1: ((w0 >> 22) & 0xFF) as u8,
            src2,
            src3,
        }
    } else {
        Instruction {
            opcode,
            form: Form::Short,
            guard: Guard::ALWAYS,
            dst: ((w0 >> 7) & 0xFF) as u8,
            src1: ((w0 >> 15) & 0xFF) as u8,
            src2: Operand::Reg(((w0 >> 23) & 0xFF) as u8),
            src3: 0,
        }
    };

    match instr.validate() {
        Ok(()) => Ok((instr, instr.len())),
        Err(IsaError::InvalidOperand(detail)) | Err(IsaError::UnencodableForm(detail)) => Err(reserved(detail)),
        Err(e) => Err(e),
    }
}

/// Appends the encoding of `instr` to `out`.
pub fn encode_into(instr: &Instruction, out: &mut Vec<u8>) -> Result<(), IsaError> {
    instr.validate()?;
    let op = (instr.opcode.code() as u32) << 1;
    match instr.form {
        Form::Short => {
            let Operand::Reg(src2) = instr.src2 else {
                return Err(IsaError::UnencodableForm("short form cannot carry an immediate"));
            };
            let w0 = op | (instr.dst as u32) << 7 | (instr.src1 as u32) << 15 | (src2 as u32) << 23;
            out.extend_from_slice(&w0.to_le_bytes());
        }
        Form::Long => {
            let mut w0 = LONG_BIT
                | op
                | (instr.guard.reg as u32) << 7
                | (instr.guard.cond.code() as u32) << 9
                | (instr.dst as u32) << 14
                | (instr.src1 as u32) << 22;
            let w1 = match instr.src2 {
                Operand::Imm(v) => {
                    w0 |= IMM_BIT;
                    v
                }
                Operand::Reg(r) => r as u32 | (instr.src3 as u32) << 8,
            };
            out.extend_from_slice(&w0.to_le_bytes());
            out.extend_from_slice(&w1.to_le_bytes());
        }
    }
    Ok(())
}

pub fn encode(instr: &Instruction) -> Result<Vec<u8>, IsaError> {
    let mut out = Vec::with_capacity(instr.len());
    encode_into(instr, &mut out)?;
    Ok(out)
}
