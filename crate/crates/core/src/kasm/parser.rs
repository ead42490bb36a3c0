//! `.gka` source parsing.
//!
//! One instruction per line, `#` starts a comment, `label:` defines a label.
//! Directives: `.kernel <name>`, `.regs <n>`, `.shared <bytes>`.
//! A mnemonic may carry a `.long` or `.short` suffix; without one, the long
//! form is chosen when a guard or immediate is present.

use std::collections::BTreeMap;

use super::{analyze, KasmError, KernelImage, KernelMetadata, MAX_SHARED_BYTES};
use crate::isa::{self, CondCode, Form, Guard, Instruction, Opcode, Operand, Shape};

struct Pending {
    line: usize,
    instr: Instruction,
    label: Option<String>,
}

fn syntax(line: usize, msg: impl Into<String>) -> KasmError {
    KasmError::Syntax { line, msg: msg.into() }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_imm(line: usize, text: &str) -> Result<u32, KasmError> {
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    let magnitude = match body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => body.parse::<u64>(),
    }
    .map_err(|_| syntax(line, format!("bad immediate `{text}`")))?;
    let value = if neg { -(magnitude as i64) } else { magnitude as i64 };
    if !(i32::MIN as i64..=u32::MAX as i64).contains(&value) {
        return Err(syntax(line, format!("immediate `{text}` does not fit in 32 bits")));
    }
    Ok(value as u32)
}

fn parse_indexed(line: usize, text: &str, prefixes: &[char], limit: u32, what: &str) -> Result<u8, KasmError> {
    let digits = text
        .strip_prefix(prefixes)
        .ok_or_else(|| syntax(line, format!("expected {what}, found `{text}`")))?;
    let n: u32 = digits
        .parse()
        .map_err(|_| syntax(line, format!("expected {what}, found `{text}`")))?;
    if n >= limit {
        if what == "register" {
            return Err(KasmError::RegisterOutOfRange { line, reg: n, limit });
        }
        return Err(syntax(line, format!("{what} index {n} out of range")));
    }
    Ok(n as u8)
}

fn reg(line: usize, text: &str) -> Result<u8, KasmError> {
    parse_indexed(line, text, &['R'], isa::MAX_REGS as u32, "register")
}

fn addr_reg(line: usize, text: &str) -> Result<u8, KasmError> {
    parse_indexed(line, text, &['A'], isa::NUM_ADDR_REGS as u32, "address register")
}

fn pred_reg(line: usize, text: &str) -> Result<u8, KasmError> {
    parse_indexed(line, text, &['p', 'P'], isa::NUM_PRED_REGS as u32, "predicate register")
}

fn reg_or_imm(line: usize, text: &str) -> Result<Operand, KasmError> {
    if text.starts_with('R') {
        Ok(Operand::Reg(reg(line, text)?))
    } else {
        Ok(Operand::Imm(parse_imm(line, text)?))
    }
}

/// `[A1]`, `[A1+8]`, `[A1-0x10]`
fn mem_operand(line: usize, text: &str) -> Result<(u8, Operand), KasmError> {
    let inner = text
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| syntax(line, format!("expected memory operand, found `{text}`")))?
        .trim();
    match inner.find(['+', '-']) {
        None => Ok((addr_reg(line, inner)?, Operand::Reg(0))),
        Some(pos) => {
            let a = addr_reg(line, inner[..pos].trim())?;
            let off = parse_imm(line, &inner[pos..].replace(' ', ""))?;
            Ok((a, Operand::Imm(off)))
        }
    }
}

fn parse_guard(line: usize, text: &str) -> Result<Guard, KasmError> {
    let body = &text[1..];
    let (p, c) = body
        .split_once('.')
        .ok_or_else(|| syntax(line, format!("bad guard `{text}`")))?;
    Ok(Guard {
        reg: pred_reg(line, p)?,
        cond: CondCode::from_name(c).ok_or_else(|| syntax(line, format!("unknown condition `{c}`")))?,
    })
}

fn parse_instruction(line: usize, text: &str) -> Result<Pending, KasmError> {
    let mut rest = text.trim();
    let mut guard = None;
    if rest.starts_with('@') {
        let end = rest
            .find(char::is_whitespace)
            .ok_or_else(|| syntax(line, "guard without instruction"))?;
        guard = Some(parse_guard(line, &rest[..end])?);
        rest = rest[end..].trim_start();
    }
    let (mnemonic, operands) = match rest.find(char::is_whitespace) {
        Some(end) => (&rest[..end], rest[end..].trim()),
        None => (rest, ""),
    };
    let (name, forced) = match mnemonic.split_once('.') {
        Some((name, "long")) => (name, Some(Form::Long)),
        Some((name, "short")) => (name, Some(Form::Short)),
        Some(_) => return Err(syntax(line, format!("bad form suffix in `{mnemonic}`"))),
        None => (mnemonic, None),
    };
    let opcode = Opcode::from_mnemonic(name).ok_or_else(|| KasmError::UnknownMnemonic {
        line,
        name: name.to_string(),
    })?;

    let ops: Vec<&str> = if operands.is_empty() {
        Vec::new()
    } else {
        operands.split(',').map(str::trim).collect()
    };
    let expected = match opcode.shape() {
        Shape::Binary | Shape::SetPred => 3,
        Shape::Mad => 4,
        Shape::Unary | Shape::MoveImm | Shape::Load | Shape::Store | Shape::ToAddr | Shape::FromAddr => 2,
        Shape::Target => 1,
        Shape::Bare => 0,
    };
    if ops.len() != expected {
        return Err(syntax(
            line,
            format!("{name} takes {expected} operand(s), found {}", ops.len()),
        ));
    }

    let mut instr = Instruction::new(opcode);
    let mut label = None;
    match opcode.shape() {
        Shape::Binary => {
            instr.dst = reg(line, ops[0])?;
            instr.src1 = reg(line, ops[1])?;
            instr.src2 = reg_or_imm(line, ops[2])?;
        }
        Shape::Mad => {
            instr.dst = reg(line, ops[0])?;
            instr.src1 = reg(line, ops[1])?;
            instr.src2 = Operand::Reg(reg(line, ops[2])?);
            instr.src3 = reg(line, ops[3])?;
        }
        Shape::Unary => {
            instr.dst = reg(line, ops[0])?;
            instr.src1 = reg(line, ops[1])?;
        }
        Shape::MoveImm => {
            instr.dst = reg(line, ops[0])?;
            instr.src2 = Operand::Imm(parse_imm(line, ops[1])?);
        }
        Shape::Load => {
            instr.dst = reg(line, ops[0])?;
            (instr.src1, instr.src2) = mem_operand(line, ops[1])?;
        }
        Shape::Store => {
            (instr.src1, instr.src2) = mem_operand(line, ops[0])?;
            instr.dst = reg(line, ops[1])?;
        }
        Shape::ToAddr => {
            instr.dst = addr_reg(line, ops[0])?;
            instr.src1 = reg(line, ops[1])?;
        }
        Shape::FromAddr => {
            instr.dst = reg(line, ops[0])?;
            instr.src1 = addr_reg(line, ops[1])?;
        }
        Shape::SetPred => {
            instr.dst = pred_reg(line, ops[0])?;
            instr.src1 = reg(line, ops[1])?;
            instr.src2 = reg_or_imm(line, ops[2])?;
        }
        Shape::Target => {
            if is_ident(ops[0]) {
                label = Some(ops[0].to_string());
            } else {
                instr.src2 = Operand::Imm(parse_imm(line, ops[0])?);
            }
        }
        Shape::Bare => {}
    }
    if let Some(g) = guard {
        instr.guard = g;
    }
    instr.form = forced.unwrap_or_else(|| instr.default_form());
    Ok(Pending { line, instr, label })
}

fn parse_count(line: usize, directive: &str, arg: Option<&str>) -> Result<u64, KasmError> {
    let arg = arg.ok_or_else(|| syntax(line, format!("{directive} needs an argument")))?;
    let v = parse_imm(line, arg)?;
    if arg.starts_with('-') {
        return Err(syntax(line, format!("{directive} must not be negative")));
    }
    Ok(v as u64)
}

/// Assembles `.gka` source into an image and its metadata.
pub fn assemble(source: &str) -> Result<(KernelImage, KernelMetadata), KasmError> {
    let mut name = String::from("kernel");
    let mut regs: Option<u32> = None;
    let mut shared: u32 = 0;
    let mut labels: BTreeMap<String, u32> = BTreeMap::new();
    let mut pending: Vec<Pending> = Vec::new();
    let mut offset = 0u32;

    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let mut text = raw.split('#').next().unwrap_or("").trim();

        while let Some((head, tail)) = text.split_once(':') {
            let head = head.trim();
            if !is_ident(head) {
                break;
            }
            if labels.insert(head.to_string(), offset).is_some() {
                return Err(KasmError::DuplicateLabel {
                    line,
                    label: head.to_string(),
                });
            }
            text = tail.trim();
        }
        if text.is_empty() {
            continue;
        }

        if let Some(directive) = text.strip_prefix('.') {
            let mut parts = directive.split_whitespace();
            let key = parts.next().unwrap_or("");
            let arg = parts.next();
            if parts.next().is_some() {
                return Err(syntax(line, format!("too many arguments to .{key}")));
            }
            match key {
                "kernel" => {
                    let arg = arg.ok_or_else(|| syntax(line, ".kernel needs a name"))?;
                    if !is_ident(arg) {
                        return Err(syntax(line, format!("bad kernel name `{arg}`")));
                    }
                    name = arg.to_string();
                }
                "regs" => {
                    let n = parse_count(line, ".regs", arg)?;
                    if !(1..=isa::MAX_REGS as u64).contains(&n) {
                        return Err(syntax(line, format!(".regs {n} outside 1..=128")));
                    }
                    regs = Some(n as u32);
                }
                "shared" => {
                    let n = parse_count(line, ".shared", arg)?;
                    if n > MAX_SHARED_BYTES as u64 {
                        return Err(KasmError::SharedMemTooLarge { bytes: n });
                    }
                    shared = n as u32;
                }
                other => return Err(syntax(line, format!("unknown directive .{other}"))),
            }
            continue;
        }

        let p = parse_instruction(line, text)?;
        offset += p.instr.len() as u32;
        pending.push(p);
    }

    let max_reg = pending
        .iter()
        .filter_map(|p| p.instr.general_regs().max().map(|r| (p.line, r)))
        .max_by_key(|&(_, r)| r);
    let regs_per_thread = match regs {
        Some(n) => {
            if let Some((line, r)) = pending
                .iter()
                .find_map(|p| p.instr.general_regs().find(|&r| r as u32 >= n).map(|r| (p.line, r)))
            {
                return Err(KasmError::RegisterOutOfRange {
                    line,
                    reg: r as u32,
                    limit: n,
                });
            }
            n
        }
        None => max_reg.map_or(4, |(_, r)| (r as u32 + 1).max(4)),
    };

    let mut code = Vec::with_capacity(offset as usize);
    for mut p in pending {
        if let Some(label) = &p.label {
            let target = *labels.get(label).ok_or_else(|| KasmError::UndefinedLabel {
                line: p.line,
                label: label.clone(),
            })?;
            p.instr.src2 = Operand::Imm(target);
        }
        isa::encode_into(&p.instr, &mut code).map_err(|source| KasmError::Encoding { line: p.line, source })?;
    }

    let image = KernelImage {
        name,
        code,
        entry: 0,
        regs_per_thread,
        shared_bytes: shared,
        symbols: labels,
    };
    image.validate()?;
    let meta = analyze(&image)?;
    Ok((image, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::decode;

    #[test]
    fn minimal_program() {
        let (image, meta) = assemble(".regs 5\nMVI R4, 7\nEXIT").unwrap();
        assert_eq!(image.regs_per_thread, 5);
        assert_eq!(image.code.len(), 8 + 4);
        assert_eq!(meta.histogram.iter().sum::<u32>(), 2);
    }

    #[test]
    fn label_resolves_to_byte_offset() {
        let src = "MVI R4, 3\nloop:\nISUB R4, R4, 1\nISETP p0, R4, 0\n@p0.NE BRA loop\nEXIT";
        let (image, _) = assemble(src).unwrap();
        assert_eq!(image.symbols["loop"], 8);
        let (bra, _) = decode(&image.code, 24).unwrap();
        assert_eq!(bra.opcode, Opcode::Bra);
        assert_eq!(bra.target(), Some(8));
        assert_eq!(
            bra.guard,
            Guard {
                reg: 0,
                cond: CondCode::Ne
            }
        );
    }

    #[test]
    fn register_out_of_range() {
        assert!(matches!(
            assemble("MOV R200, R1"),
            Err(KasmError::RegisterOutOfRange { line: 1, reg: 200, .. })
        ));
        assert!(matches!(
            assemble(".regs 4\nMOV R4, R1"),
            Err(KasmError::RegisterOutOfRange {
                line: 2,
                reg: 4,
                limit: 4
            })
        ));
    }

    #[test]
    fn error_cases() {
        assert!(matches!(
            assemble("FADD R1, R2, R3"),
            Err(KasmError::UnknownMnemonic { .. })
        ));
        assert!(matches!(assemble("BRA nowhere"), Err(KasmError::UndefinedLabel { .. })));
        assert!(matches!(
            assemble("a:\na:\nEXIT"),
            Err(KasmError::DuplicateLabel { line: 2, .. })
        ));
        assert!(matches!(
            assemble(".shared 16388\nEXIT"),
            Err(KasmError::SharedMemTooLarge { bytes: 16388 })
        ));
        assert!(matches!(
            assemble("IADD.short R1, R2, 5"),
            Err(KasmError::Encoding { line: 1, .. })
        ));
        assert!(matches!(assemble("BRA 0x6"), Err(KasmError::Encoding { .. })));
        assert!(matches!(
            assemble("BRA 0x40\nEXIT"),
            Err(KasmError::BadBranchTarget { .. })
        ));
    }

    #[test]
    fn form_selection() {
        let (image, _) =
            assemble("IADD R1, R2, R3\nIADD R1, R2, 3\n@p2.LT IADD R1, R2, R3\nIADD.long R1, R2, R3").unwrap();
        let forms: Vec<_> = crate::kasm::instructions(&image.code)
            .map(|r| r.unwrap().1.form)
            .collect();
        assert_eq!(forms, vec![Form::Short, Form::Long, Form::Long, Form::Long]);
    }

    #[test]
    fn immediates_and_comments() {
        let (image, _) = assemble("MVI R1, -1  # all ones\nMVI R2, 0xFFFFFFFF\n.kernel foo").unwrap();
        assert_eq!(image.name, "foo");
        assert_eq!(image.code[4..8], image.code[12..16]);
        assert!(assemble("MVI R1, 0x1FFFFFFFF").is_err());
    }
}
