use std::fmt::Write;

use super::{Form, Instruction, Operand, Shape};

fn imm_text(v: u32) -> String {
    (v as i32).to_string()
}

fn offset_text(src2: Operand) -> String {
    match src2 {
        Operand::Reg(_) => String::new(),
        Operand::Imm(v) => {
            let v = v as i32 as i64;
            if v < 0 {
                format!("-{}", -v)
            } else {
                format!("+{v}")
            }
        }
    }
}

fn src2_text(src2: Operand) -> String {
    match src2 {
        Operand::Reg(r) => format!("R{r}"),
        Operand::Imm(v) => imm_text(v),
    }
}

/// Canonical assembly text for one instruction.
///
/// A `.long` suffix is emitted only when the assembler would otherwise pick
/// the short form, so the text always reassembles to the same bytes.
pub fn disassemble(instr: &Instruction) -> String {
    let mut out = String::new();
    if !instr.guard.is_always() {
        let _ = write!(out, "@p{}.{} ", instr.guard.reg, instr.guard.cond);
    }
    out.push_str(instr.opcode.mnemonic());
    if instr.form == Form::Long && instr.default_form() == Form::Short {
        out.push_str(".long");
    }
    let operands = match instr.opcode.shape() {
        Shape::Binary => format!("R{}, R{}, {}", instr.dst, instr.src1, src2_text(instr.src2)),
        Shape::Mad => format!(
            "R{}, R{}, {}, R{}",
            instr.dst,
            instr.src1,
            src2_text(instr.src2),
            instr.src3
        ),
        Shape::Unary => format!("R{}, R{}", instr.dst, instr.src1),
        Shape::MoveImm => format!("R{}, {}", instr.dst, src2_text(instr.src2)),
        Shape::Load => format!("R{}, [A{}{}]", instr.dst, instr.src1, offset_text(instr.src2)),
        Shape::Store => format!("[A{}{}], R{}", instr.src1, offset_text(instr.src2), instr.dst),
        Shape::ToAddr => format!("A{}, R{}", instr.dst, instr.src1),
        Shape::FromAddr => format!("R{}, A{}", instr.dst, instr.src1),
        Shape::SetPred => format!("p{}, R{}, {}", instr.dst, instr.src1, src2_text(instr.src2)),
        Shape::Target => format!("0x{:04X}", instr.target().unwrap_or(0)),
        Shape::Bare => String::new(),
    };
    if !operands.is_empty() {
        out.push(' ');
        out.push_str(&operands);
    }
    out
}
