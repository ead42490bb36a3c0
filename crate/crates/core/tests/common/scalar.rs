//! Per-thread reference interpreter.
//!
//! Each thread runs alone in program order with its own reconvergence
//! stack: SSY pushes its target and SYNC jumps to the popped address.
//! Threads of a block advance in barrier phases; blocks run one after
//! another. Arithmetic and flags are computed here from scratch and share
//! nothing with the SIMT engine beyond instruction decoding.

use softgpu::gpu::LaunchParams;
use softgpu::isa::{Instruction, Opcode, Operand};
use softgpu::kasm::Kernel;
use softgpu::memsys::MemoryImage;

const STEP_LIMIT: u64 = 50_000_000;

#[derive(Clone)]
struct Thread {
    regs: Vec<u32>,
    preds: [(bool, bool, bool, bool); 4],
    addrs: [u32; 4],
    pc: u32,
    ssy: Vec<u32>,
    done: bool,
}

fn flags(a: u32, b: u32) -> (bool, bool, bool, bool) {
    let exact = a as i32 as i64 - b as i32 as i64;
    let r = a.wrapping_sub(b) as i32;
    (r < 0, r == 0, a >= b, exact != r as i64)
}

fn holds(cond: u8, (s, z, c, o): (bool, bool, bool, bool)) -> bool {
    match cond {
        0 => false,
        1 => s != o,
        2 => z,
        3 => z || s != o,
        4 => !z && s == o,
        5 => !z,
        6 => s == o,
        7 => true,
        8 => !c,
        9 => !c || z,
        10 => c && !z,
        11 => c,
        _ => panic!("reserved condition {cond}"),
    }
}

fn alu(op: Opcode, a: u32, b: u32, c: u32) -> u32 {
    match op {
        Opcode::Iadd => a.wrapping_add(b),
        Opcode::Isub => a.wrapping_sub(b),
        Opcode::Imul => (a as u64 * b as u64) as u32,
        Opcode::Imad => ((a as u64 * b as u64) as u32).wrapping_add(c),
        Opcode::Imin => {
            if (a as i32) < (b as i32) {
                a
            } else {
                b
            }
        }
        Opcode::Imax => {
            if (a as i32) > (b as i32) {
                a
            } else {
                b
            }
        }
        Opcode::Ineg => 0u32.wrapping_sub(a),
        Opcode::And => a & b,
        Opcode::Or => a | b,
        Opcode::Xor => a ^ b,
        Opcode::Not => a ^ u32::MAX,
        Opcode::Shl => a << (b & 31),
        Opcode::Shr => a >> (b & 31),
        Opcode::Mov => a,
        Opcode::Mvi => b,
        other => panic!("{other} is not an ALU opcode"),
    }
}

fn word(mem: &[u32], addr: u32) -> Result<usize, String> {
    if !addr.is_multiple_of(4) || (addr / 4) as usize >= mem.len() {
        return Err(format!("bad address {addr:#x}"));
    }
    Ok((addr / 4) as usize)
}

enum Stop {
    Barrier,
    Exit,
}

fn operand(t: &Thread, op: Operand) -> u32 {
    match op {
        Operand::Reg(r) => t.regs[r as usize],
        Operand::Imm(v) => v,
    }
}

fn run_thread(
    kernel: &Kernel,
    t: &mut Thread,
    global: &mut [u32],
    shared: &mut [u32],
    steps: &mut u64,
) -> Result<Stop, String> {
    loop {
        *steps += 1;
        if *steps > STEP_LIMIT {
            return Err("step limit".into());
        }
        let i: Instruction = *kernel
            .program
            .fetch(t.pc)
            .ok_or_else(|| format!("no instruction at {:#x}", t.pc))?;
        let next = t.pc + i.len() as u32;
        let g = i.guard;
        let on = holds(g.cond.code(), t.preds[g.reg as usize]);
        t.pc = next;
        match i.opcode {
            Opcode::Ssy => t.ssy.push(i.target().unwrap()),
            Opcode::Sync => t.pc = t.ssy.pop().ok_or("SYNC with nothing pending")?,
            Opcode::Bar => return Ok(Stop::Barrier),
            _ if !on => {}
            Opcode::Bra => t.pc = i.target().unwrap(),
            Opcode::Exit => return Ok(Stop::Exit),
            Opcode::Isetp => t.preds[i.dst as usize] = flags(t.regs[i.src1 as usize], operand(t, i.src2)),
            Opcode::R2a => t.addrs[i.dst as usize] = t.regs[i.src1 as usize],
            Opcode::A2r => t.regs[i.dst as usize] = t.addrs[i.src1 as usize],
            Opcode::Ldg | Opcode::Lds | Opcode::Stg | Opcode::Sts => {
                let addr = t.addrs[i.src1 as usize].wrapping_add(operand(t, i.src2));
                let mem: &mut [u32] = if matches!(i.opcode, Opcode::Ldg | Opcode::Stg) {
                    global
                } else {
                    shared
                };
                let w = word(mem, addr)?;
                if matches!(i.opcode, Opcode::Ldg | Opcode::Lds) {
                    t.regs[i.dst as usize] = mem[w];
                } else {
                    mem[w] = t.regs[i.dst as usize];
                }
            }
            op => {
                let c = t.regs[i.src3 as usize];
                t.regs[i.dst as usize] = alu(op, t.regs[i.src1 as usize], operand(t, i.src2), c);
            }
        }
    }
}

/// Executes one launch and returns the final memory.
pub fn launch(kernel: &Kernel, lp: &LaunchParams, mut mem: MemoryImage) -> Result<MemoryImage, String> {
    mem.init_params(&lp.params).map_err(|e| e.to_string())?;
    let regs = kernel.image.regs_per_thread as usize;
    for block in 0..lp.grid_dim {
        let mut steps = 0;
        let mut shared = vec![0u32; kernel.image.shared_bytes as usize / 4];
        let mut threads: Vec<Thread> = (0..lp.block_dim)
            .map(|tid| {
                let mut r = vec![0; regs];
                for (k, v) in [tid, block, lp.block_dim, lp.grid_dim]
                    .into_iter()
                    .enumerate()
                    .take(regs)
                {
                    r[k] = v;
                }
                Thread {
                    regs: r,
                    preds: [(false, false, false, false); 4],
                    addrs: [0; 4],
                    pc: kernel.image.entry,
                    ssy: Vec::new(),
                    done: false,
                }
            })
            .collect();
        while threads.iter().any(|t| !t.done) {
            for t in threads.iter_mut().filter(|t| !t.done) {
                if let Stop::Exit = run_thread(kernel, t, mem.words_mut(), &mut shared, &mut steps)? {
                    t.done = true;
                }
            }
        }
    }
    Ok(mem)
}
