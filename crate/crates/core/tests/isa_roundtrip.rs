mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softgpu::isa::{decode, disassemble, encode, Operand, Shape};
use softgpu::kasm::{assemble, disassemble_image, KernelImage, Program};

fn random_program(seed: u64, len: usize) -> Vec<softgpu::isa::Instruction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instrs: Vec<_> = (0..len).map(|_| common::gen::instruction(&mut rng)).collect();
    let mut pcs = Vec::with_capacity(len);
    let mut pc = 0u32;
    for i in &instrs {
        pcs.push(pc);
        pc += i.len() as u32;
    }
    for (k, i) in instrs.iter_mut().enumerate() {
        if i.opcode.shape() == Shape::Target {
            i.src2 = Operand::Imm(pcs[(k * 7 + 3) % len]);
        }
    }
    instrs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn decode_inverts_encode(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let i = common::gen::instruction(&mut rng);
        let bytes = encode(&i).unwrap();
        prop_assert_eq!(bytes.len(), i.len());
        prop_assert_eq!(decode(&bytes, 0).unwrap(), (i, i.len()));
    }

    #[test]
    fn disassembly_reassembles_byte_identical(seed: u64, len in 1usize..40) {
        let instrs = random_program(seed, len);
        let mut code = Vec::new();
        for i in &instrs {
            code.extend(encode(i).unwrap());
        }
        let image = KernelImage {
            name: "p".into(),
            code: code.clone(),
            entry: 0,
            regs_per_thread: 128,
            shared_bytes: 0,
            symbols: Default::default(),
        };
        let program = Program::decode(&code).unwrap();
        let text = disassemble_image(&image, &program);
        let (back, _) = assemble(&text).unwrap();
        prop_assert_eq!(back.code, code);
    }

    #[test]
    fn single_instruction_text_is_stable(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let i = common::gen::instruction(&mut rng);
        prop_assume!(i.opcode.shape() != Shape::Target);
        let text = disassemble(&i);
        let (img, _) = assemble(&format!(".regs 128\n{text}\n")).unwrap();
        prop_assert_eq!(img.code, encode(&i).unwrap());
    }
}
