//! The 27-opcode integer instruction set.
//!
//! Instructions come in two encodings: a 4-byte short form without guard
//! or immediate, and an 8-byte long form carrying a guard predicate and a
//! 32-bit immediate (or a third source register). The layout is documented
//! in [`encode`](self::encode()).

mod disasm;
mod encode;

use std::fmt;

use thiserror::Error;

pub use disasm::disassemble;
pub use encode::{decode, encode, encode_into};

/// General-purpose registers addressable per thread.
pub const MAX_REGS: u8 = 128;
/// Address registers A0..A3.
pub const NUM_ADDR_REGS: u8 = 4;
/// Predicate registers p0..p3.
pub const NUM_PRED_REGS: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsaError {
    #[error("IllegalOpcode {0}")]
    IllegalOpcode(u8),
    #[error("ReservedBitsSet at byte {offset}: {detail}")]
    ReservedBitsSet { offset: usize, detail: &'static str },
    #[error("TruncatedInstruction at byte {offset}")]
    TruncatedInstruction { offset: usize },
    #[error("ReservedCondCode {0}")]
    ReservedCondCode(u8),
    #[error("UnencodableForm: {0}")]
    UnencodableForm(&'static str),
    #[error("InvalidOperand: {0}")]
    InvalidOperand(&'static str),
}

macro_rules! opcodes {
    ($($variant:ident = $code:literal, $mn:literal, $shape:ident;)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u8)]
        pub enum Opcode {
            $($variant = $code,)*
        }

        impl Opcode {
            pub const ALL: [Opcode; 27] = [$(Opcode::$variant,)*];

            pub fn mnemonic(self) -> &'static str {
                match self {
                    $(Opcode::$variant => $mn,)*
                }
            }

            pub fn shape(self) -> Shape {
                match self {
                    $(Opcode::$variant => Shape::$shape,)*
                }
            }

            pub fn from_code(code: u8) -> Result<Opcode, IsaError> {
                match code {
                    $($code => Ok(Opcode::$variant),)*
                    _ => Err(IsaError::IllegalOpcode(code)),
                }
            }

            pub fn from_mnemonic(name: &str) -> Option<Opcode> {
                match name {
                    $($mn => Some(Opcode::$variant),)*
                    _ => None,
                }
            }
        }
    };
}

opcodes! {
    Iadd = 1, "IADD", Binary;
    Isub = 2, "ISUB", Binary;
    Imul = 3, "IMUL", Binary;
    Imad = 4, "IMAD", Mad;
    Imin = 5, "IMIN", Binary;
    Imax = 6, "IMAX", Binary;
    Ineg = 7, "INEG", Unary;
    And = 8, "AND", Binary;
    Or = 9, "OR", Binary;
    Xor = 10, "XOR", Binary;
    Not = 11, "NOT", Unary;
    Shl = 12, "SHL", Binary;
    Shr = 13, "SHR", Binary;
    Mov = 14, "MOV", Unary;
    Mvi = 15, "MVI", MoveImm;
    Ldg = 16, "LDG", Load;
    Stg = 17, "STG", Store;
    Lds = 18, "LDS", Load;
    Sts = 19, "STS", Store;
    R2a = 20, "R2A", ToAddr;
    A2r = 21, "A2R", FromAddr;
    Isetp = 22, "ISETP", SetPred;
    Bra = 23, "BRA", Target;
    Ssy = 24, "SSY", Target;
    Sync = 25, "SYNC", Bare;
    Bar = 26, "BAR", Bare;
    Exit = 27, "EXIT", Bare;
}

impl Opcode {
    pub const COUNT: usize = 27;

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Dense index 0..27, used for histograms.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    /// Arithmetic, logical and move opcodes (IADD through MVI).
    pub fn is_alu(self) -> bool {
        (Opcode::Iadd.code()..=Opcode::Mvi.code()).contains(&self.code())
    }

    /// Opcodes that need the multiplier.
    pub fn needs_multiplier(self) -> bool {
        matches!(self, Opcode::Imul | Opcode::Imad)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// Operand layout of an opcode; determines which instruction fields are live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// `dst, src1, src2|imm`
    Binary,
    /// `dst, src1, src2, src3` (registers only, long form only)
    Mad,
    /// `dst, src1`
    Unary,
    /// `dst, imm`
    MoveImm,
    /// `dst, [A(src1) + imm]`
    Load,
    /// `[A(src1) + imm], dst` where `dst` names the data register
    Store,
    /// `A(dst), src1`
    ToAddr,
    /// `dst, A(src1)`
    FromAddr,
    /// `p(dst), src1, src2|imm`
    SetPred,
    /// branch-style byte address in the immediate slot
    Target,
    /// no operands
    Bare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum CondCode {
    Fl = 0,
    Lt = 1,
    Eq = 2,
    Le = 3,
    Gt = 4,
    Ne = 5,
    Ge = 6,
    Tr = 7,
    Lo = 8,
    Ls = 9,
    Hi = 10,
    Hs = 11,
}

impl CondCode {
    pub const ALL: [CondCode; 12] = [
        CondCode::Fl,
        CondCode::Lt,
        CondCode::Eq,
        CondCode::Le,
        CondCode::Gt,
        CondCode::Ne,
        CondCode::Ge,
        CondCode::Tr,
        CondCode::Lo,
        CondCode::Ls,
        CondCode::Hi,
        CondCode::Hs,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<CondCode, IsaError> {
        CondCode::ALL
            .get(code as usize)
            .copied()
            .ok_or(IsaError::ReservedCondCode(code))
    }

    pub fn name(self) -> &'static str {
        match self {
            CondCode::Fl => "FL",
            CondCode::Lt => "LT",
            CondCode::Eq => "EQ",
            CondCode::Le => "LE",
            CondCode::Gt => "GT",
            CondCode::Ne => "NE",
            CondCode::Ge => "GE",
            CondCode::Tr => "TR",
            CondCode::Lo => "LO",
            CondCode::Ls => "LS",
            CondCode::Hi => "HI",
            CondCode::Hs => "HS",
        }
    }

    pub fn from_name(name: &str) -> Option<CondCode> {
        CondCode::ALL.into_iter().find(|c| c.name() == name)
    }

    /// Looks the condition up against a flag nibble.
    pub fn eval(self, flags: FlagNibble) -> bool {
        let (s, z, c, o) = (flags.sign(), flags.zero(), flags.carry(), flags.overflow());
        let lt = s ^ o;
        match self {
            CondCode::Fl => false,
            CondCode::Lt => lt,
            CondCode::Eq => z,
            CondCode::Le => z || lt,
            CondCode::Gt => !z && !lt,
            CondCode::Ne => !z,
            CondCode::Ge => !lt,
            CondCode::Tr => true,
            CondCode::Lo => !c,
            CondCode::Ls => !c || z,
            CondCode::Hi => c && !z,
            CondCode::Hs => c,
        }
    }
}

impl fmt::Display for CondCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sign, zero, carry and overflow bits of one predicate register.
///
/// Bit layout: S=3, Z=2, C=1, O=0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FlagNibble(u8);

impl FlagNibble {
    const S: u8 = 0b1000;
    const Z: u8 = 0b0100;
    const C: u8 = 0b0010;
    const O: u8 = 0b0001;

    /// Returns `None` for values wider than four bits or with both Z and S set.
    pub fn from_bits(bits: u8) -> Option<FlagNibble> {
        if bits > 0xF || (bits & Self::Z != 0 && bits & Self::S != 0) {
            None
        } else {
            Some(FlagNibble(bits))
        }
    }

    pub fn new(sign: bool, zero: bool, carry: bool, overflow: bool) -> Option<FlagNibble> {
        let bits = (sign as u8) << 3 | (zero as u8) << 2 | (carry as u8) << 1 | overflow as u8;
        FlagNibble::from_bits(bits)
    }

    /// Flags of the 32-bit two's-complement subtraction `a - b`.
    /// Carry is set when the subtraction does not borrow.
    pub fn from_sub(a: u32, b: u32) -> FlagNibble {
        let (diff, borrow) = a.overflowing_sub(b);
        let (_, overflow) = (a as i32).overflowing_sub(b as i32);
        let mut bits = 0;
        if diff as i32 >= 0 {
            if diff == 0 {
                bits |= Self::Z;
            }
        } else {
            bits |= Self::S;
        }
        if !borrow {
            bits |= Self::C;
        }
        if overflow {
            bits |= Self::O;
        }
        FlagNibble(bits)
    }

    pub fn bits(self) -> u8 {
        self.0
    }
    pub fn sign(self) -> bool {
        self.0 & Self::S != 0
    }
    pub fn zero(self) -> bool {
        self.0 & Self::Z != 0
    }
    pub fn carry(self) -> bool {
        self.0 & Self::C != 0
    }
    pub fn overflow(self) -> bool {
        self.0 & Self::O != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Form {
    Short,
    Long,
}

impl Form {
    #[allow(clippy::len_without_is_empty)]
    pub fn len(self) -> usize {
        match self {
            Form::Short => 4,
            Form::Long => 8,
        }
    }
}

/// Guard predicate: the instruction applies to lanes where `cond` holds
/// on predicate register `reg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Guard {
    pub reg: u8,
    pub cond: CondCode,
}

impl Guard {
    pub const ALWAYS: Guard = Guard {
        reg: 0,
        cond: CondCode::Tr,
    };

    pub fn is_always(self) -> bool {
        self == Guard::ALWAYS
    }
}

impl Default for Guard {
    fn default() -> Self {
        Guard::ALWAYS
    }
}

/// Second source operand: a register or a 32-bit immediate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(u8),
    Imm(u32),
}

impl Operand {
    pub fn imm(self) -> Option<u32> {
        match self {
            Operand::Imm(v) => Some(v),
            Operand::Reg(_) => None,
        }
    }
}

/// One decoded instruction. Fields not used by the opcode's [`Shape`] are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub opcode: Opcode,
    pub form: Form,
    pub guard: Guard,
    pub dst: u8,
    pub src1: u8,
    pub src2: Operand,
    pub src3: u8,
}

impl Instruction {
    /// A bare instruction with all operand fields zeroed, in the form the
    /// assembler would choose for it by default.
    pub fn new(opcode: Opcode) -> Instruction {
        let mut instr = Instruction {
            opcode,
            form: Form::Short,
            guard: Guard::ALWAYS,
            dst: 0,
            src1: 0,
            src2: Operand::Reg(0),
            src3: 0,
        };
        if matches!(opcode.shape(), Shape::MoveImm | Shape::Target) {
            instr.src2 = Operand::Imm(0);
        }
        instr.form = instr.default_form();
        instr
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.form.len()
    }

    /// Branch or reconvergence target carried in the immediate slot.
    pub fn target(&self) -> Option<u32> {
        match self.opcode.shape() {
            Shape::Target => self.src2.imm(),
            _ => None,
        }
    }

    /// The form the assembler picks when no `.long`/`.short` suffix is given.
    pub fn default_form(&self) -> Form {
        let needs_long =
            !self.guard.is_always() || matches!(self.src2, Operand::Imm(_)) || self.opcode.shape() == Shape::Mad;
        if needs_long {
            Form::Long
        } else {
            Form::Short
        }
    }

    /// General-purpose registers read or written by this instruction.
    pub fn general_regs(&self) -> impl Iterator<Item = u8> {
        let reg2 = match self.src2 {
            Operand::Reg(r) => Some(r),
            Operand::Imm(_) => None,
        };
        let list: [Option<u8>; 4] = match self.opcode.shape() {
            Shape::Binary => [Some(self.dst), Some(self.src1), reg2, None],
            Shape::Mad => [Some(self.dst), Some(self.src1), reg2, Some(self.src3)],
            Shape::Unary => [Some(self.dst), Some(self.src1), None, None],
            Shape::MoveImm | Shape::Load | Shape::Store | Shape::FromAddr => [Some(self.dst), None, None, None],
            Shape::ToAddr => [Some(self.src1), None, None, None],
            Shape::SetPred => [Some(self.src1), reg2, None, None],
            Shape::Target | Shape::Bare => [None; 4],
        };
        list.into_iter().flatten()
    }

    /// Checks the per-shape field discipline and form constraints.
    pub fn validate(&self) -> Result<(), IsaError> {
        use IsaError::{InvalidOperand, UnencodableForm};

        if self.guard.reg >= NUM_PRED_REGS {
            return Err(InvalidOperand("guard predicate index out of range"));
        }
        let gpr = |r: u8| r < MAX_REGS;
        let small = |r: u8| r < NUM_ADDR_REGS;
        let reg2 = match self.src2 {
            Operand::Reg(r) => Some(r),
            Operand::Imm(_) => None,
        };
        let ok = match self.opcode.shape() {
            Shape::Binary | Shape::SetPred => {
                let d = if self.opcode.shape() == Shape::SetPred {
                    self.dst < NUM_PRED_REGS
                } else {
                    gpr(self.dst)
                };
                d && gpr(self.src1) && reg2.is_none_or(gpr) && self.src3 == 0
            }
            Shape::Mad => {
                if reg2.is_none() {
                    return Err(UnencodableForm("IMAD takes no immediate operand"));
                }
                gpr(self.dst) && gpr(self.src1) && reg2.is_some_and(gpr) && gpr(self.src3)
            }
            Shape::Unary => gpr(self.dst) && gpr(self.src1) && self.src2 == Operand::Reg(0) && self.src3 == 0,
            Shape::MoveImm => gpr(self.dst) && self.src1 == 0 && reg2.is_none() && self.src3 == 0,
            Shape::Load | Shape::Store => {
                gpr(self.dst) && small(self.src1) && reg2.is_none_or(|r| r == 0) && self.src3 == 0
            }
            Shape::ToAddr => small(self.dst) && gpr(self.src1) && self.src2 == Operand::Reg(0) && self.src3 == 0,
            Shape::FromAddr => gpr(self.dst) && small(self.src1) && self.src2 == Operand::Reg(0) && self.src3 == 0,
            Shape::Target => {
                let Operand::Imm(target) = self.src2 else {
                    return Err(InvalidOperand("branch target missing"));
                };
                if target % 4 != 0 {
                    return Err(InvalidOperand("branch target not 4-byte aligned"));
                }
                self.dst == 0 && self.src1 == 0 && self.src3 == 0
            }
            Shape::Bare => self.dst == 0 && self.src1 == 0 && self.src2 == Operand::Reg(0) && self.src3 == 0,
        };
        if !ok {
            return Err(InvalidOperand("operand field out of range for opcode"));
        }
        if self.form == Form::Short {
            if !self.guard.is_always() {
                return Err(UnencodableForm("short form cannot carry a guard"));
            }
            if reg2.is_none() {
                return Err(UnencodableForm("short form cannot carry an immediate"));
            }
            if self.src3 != 0 || self.opcode.shape() == Shape::Mad {
                return Err(UnencodableForm("short form has no third source"));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&disassemble(self))
    }
}
