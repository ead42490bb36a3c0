#![allow(dead_code)]

pub mod divergent;
pub mod gen;
pub mod scalar;

use softgpu::benchkit::{plan, BenchCase};
use softgpu::kasm::Kernel;
use softgpu::memsys::MemoryImage;

/// Runs a benchmark case through the scalar interpreter and returns the
/// output buffer.
pub fn scalar_case(case: &BenchCase, input: &[u32]) -> Vec<u32> {
    let p = plan(case);
    let kernel = Kernel::from_source(case.bench.source()).unwrap();
    let mut mem = MemoryImage::new(p.memory_bytes);
    mem.write_words(p.input_addr, input).unwrap();
    for lp in &p.launches {
        mem = scalar::launch(&kernel, lp, mem).unwrap();
    }
    mem.read_words(p.output_addr, case.output_words()).unwrap().to_vec()
}
