use super::ExecError;
use crate::isa::{CondCode, FlagNibble, Opcode};
use crate::WARP_SIZE;

/// Rows a warp is split into when `num_sp` lanes execute per cycle.
pub fn partition_rows(threads_per_warp: u32, num_sp: u32) -> Result<u32, ExecError> {
    match num_sp {
        8 | 16 | 32 => Ok(threads_per_warp.div_ceil(num_sp)),
        other => Err(ExecError::InvalidSpCount(other)),
    }
}

/// Rows for a full warp.
pub fn warp_rows(num_sp: u32) -> Result<u32, ExecError> {
    partition_rows(WARP_SIZE as u32, num_sp)
}

/// Flags of `a - b`.
pub fn set_flags(a: u32, b: u32) -> FlagNibble {
    FlagNibble::from_sub(a, b)
}

/// Evaluates a raw 5-bit condition field against a flag nibble.
pub fn eval_cond(cond: u8, flags: FlagNibble) -> Result<bool, ExecError> {
    let cond = CondCode::from_code(cond).map_err(|_| ExecError::ReservedCondCode(cond))?;
    Ok(cond.eval(flags))
}

/// 32-bit wrapping integer semantics of the arithmetic, logic and move
/// opcodes. For MVI the immediate is passed as `b`.
#[inline]
pub fn alu_exec(op: Opcode, a: u32, b: u32, c: u32) -> Result<u32, ExecError> {
    Ok(match op {
        Opcode::Iadd => a.wrapping_add(b),
        Opcode::Isub => a.wrapping_sub(b),
        Opcode::Imul => a.wrapping_mul(b),
        Opcode::Imad => a.wrapping_mul(b).wrapping_add(c),
        Opcode::Imin => (a as i32).min(b as i32) as u32,
        Opcode::Imax => (a as i32).max(b as i32) as u32,
        Opcode::Ineg => a.wrapping_neg(),
        Opcode::And => a & b,
        Opcode::Or => a | b,
        Opcode::Xor => a ^ b,
        Opcode::Not => !a,
        Opcode::Shl => a.wrapping_shl(b),
        Opcode::Shr => a.wrapping_shr(b),
        Opcode::Mov => a,
        Opcode::Mvi => b,
        other => return Err(ExecError::NotAnAluOpcode(other)),
    })
}
