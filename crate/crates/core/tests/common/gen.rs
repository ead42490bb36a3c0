//! Random valid instructions built shape by shape.

use rand::Rng;
use softgpu::isa::{CondCode, Form, Guard, Instruction, Opcode, Operand, Shape};

fn gpr(r: &mut impl Rng) -> u8 {
    r.random_range(0..128)
}

fn reg_or_imm(r: &mut impl Rng) -> Operand {
    if r.random_bool(0.5) {
        Operand::Reg(gpr(r))
    } else {
        Operand::Imm(r.random())
    }
}

pub fn instruction(r: &mut impl Rng) -> Instruction {
    let op = Opcode::ALL[r.random_range(0..Opcode::COUNT)];
    let mut i = Instruction::new(op);
    if r.random_bool(0.3) {
        i.guard = Guard {
            reg: r.random_range(0..4),
            cond: CondCode::ALL[r.random_range(0..CondCode::ALL.len())],
        };
    }
    match op.shape() {
        Shape::Binary => {
            i.dst = gpr(r);
            i.src1 = gpr(r);
            i.src2 = reg_or_imm(r);
        }
        Shape::Mad => {
            i.dst = gpr(r);
            i.src1 = gpr(r);
            i.src2 = Operand::Reg(gpr(r));
            i.src3 = gpr(r);
        }
        Shape::Unary => {
            i.dst = gpr(r);
            i.src1 = gpr(r);
        }
        Shape::MoveImm => {
            i.dst = gpr(r);
            i.src2 = Operand::Imm(r.random());
        }
        Shape::Load | Shape::Store => {
            i.dst = gpr(r);
            i.src1 = r.random_range(0..4);
            i.src2 = Operand::Imm(r.random_range(-4096i32..4096) as u32 & !3);
        }
        Shape::ToAddr => {
            i.dst = r.random_range(0..4);
            i.src1 = gpr(r);
        }
        Shape::FromAddr => {
            i.dst = gpr(r);
            i.src1 = r.random_range(0..4);
        }
        Shape::SetPred => {
            i.dst = r.random_range(0..4);
            i.src1 = gpr(r);
            i.src2 = reg_or_imm(r);
        }
        Shape::Target => i.src2 = Operand::Imm(r.random_range(0..1u32 << 20) * 4),
        Shape::Bare => {}
    }
    i.form = match i.default_form() {
        Form::Short if r.random_bool(0.3) => Form::Long,
        f => f,
    };
    debug_assert!(i.validate().is_ok(), "{i:?}");
    i
}
