//! Benchmark kernels, deterministic inputs, host reference oracles and a
//! harness that drives multi-launch benchmarks through [`gpu::launch`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gpu::{self, GpuConfig, LaunchError, LaunchParams, RunResult};
use crate::kasm::{KasmError, Kernel};
use crate::memsys::{MemoryImage, PARAM_REGION_BYTES};
use crate::metrics::{Counters, EnergyWeights, Report, WarpDepth};

pub const AUTOCORR_SRC: &str = include_str!("../kernels/autocorr.gka");
pub const BITONIC_SRC: &str = include_str!("../kernels/bitonic.gka");
pub const MATMUL_SRC: &str = include_str!("../kernels/matmul.gka");
pub const REDUCTION_SRC: &str = include_str!("../kernels/reduction.gka");
pub const TRANSPOSE_SRC: &str = include_str!("../kernels/transpose.gka");
pub const VECADD_SRC: &str = include_str!("../kernels/vecadd.gka");
pub const PEEL32_SRC: &str = include_str!("../kernels/peel32.gka");
pub const TREE32_SRC: &str = include_str!("../kernels/tree32.gka");
pub const DIVLOOP_SRC: &str = include_str!("../kernels/divloop.gka");

/// Every shipped kernel source by name.
pub const KERNEL_SOURCES: [(&str, &str); 9] = [
    ("autocorr", AUTOCORR_SRC),
    ("bitonic", BITONIC_SRC),
    ("matmul", MATMUL_SRC),
    ("reduction", REDUCTION_SRC),
    ("transpose", TRANSPOSE_SRC),
    ("vecadd", VECADD_SRC),
    ("peel32", PEEL32_SRC),
    ("tree32", TREE32_SRC),
    ("divloop", DIVLOOP_SRC),
];

pub const SIZES: [u32; 4] = [32, 64, 128, 256];

/// First byte of benchmark data, just past the parameter region.
pub const DATA_BASE: u32 = PARAM_REGION_BYTES;

/// Threads per block for the first reduction pass.
pub const REDUCTION_BLOCK: u32 = 16;
/// Threads per block for each bitonic step.
pub const BITONIC_BLOCK: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bench {
    Autocorr,
    Bitonic,
    Matmul,
    Reduction,
    Transpose,
}

impl Bench {
    pub const ALL: [Bench; 5] = [
        Bench::Autocorr,
        Bench::Bitonic,
        Bench::Matmul,
        Bench::Reduction,
        Bench::Transpose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Bench::Autocorr => "autocorr",
            Bench::Bitonic => "bitonic",
            Bench::Matmul => "matmul",
            Bench::Reduction => "reduction",
            Bench::Transpose => "transpose",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Bench::Autocorr => AUTOCORR_SRC,
            Bench::Bitonic => BITONIC_SRC,
            Bench::Matmul => MATMUL_SRC,
            Bench::Reduction => REDUCTION_SRC,
            Bench::Transpose => TRANSPOSE_SRC,
        }
    }

    pub fn kernel(self) -> Kernel {
        Kernel::from_source(self.source()).expect("shipped kernel assembles")
    }
}

impl fmt::Display for Bench {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Bench {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Bench, BenchError> {
        Bench::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| BenchError::InvalidCase(format!("unknown benchmark {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BenchError {
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error("{0}")]
    Asm(#[from] KasmError),
    #[error("{0}")]
    Launch(#[from] LaunchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchCase {
    pub bench: Bench,
    /// Element count, or the side of a square matrix.
    pub size: u32,
    pub seed: u64,
}

impl BenchCase {
    pub fn new(bench: Bench, size: u32, seed: u64) -> Result<BenchCase, BenchError> {
        let case = BenchCase { bench, size, seed };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let n = self.size;
        let bad = |why: &str| Err(BenchError::InvalidCase(format!("{} size {n}: {why}", self.bench)));
        if n == 0 {
            return bad("must be positive");
        }
        match self.bench {
            Bench::Bitonic if !n.is_power_of_two() || n < 2 => bad("not a power of two"),
            Bench::Matmul | Bench::Transpose if n > gpu::MAX_BLOCK_DIM => bad("one block per row limits n to 256"),
            _ if n > 1 << 16 => bad("too large"),
            _ => Ok(()),
        }
    }

    pub fn input_words(&self) -> usize {
        let n = self.size as usize;
        match self.bench {
            Bench::Matmul => 2 * n * n,
            Bench::Transpose => n * n,
            _ => n,
        }
    }

    pub fn output_words(&self) -> usize {
        let n = self.size as usize;
        match self.bench {
            Bench::Matmul | Bench::Transpose => n * n,
            Bench::Reduction => 1,
            _ => n,
        }
    }
}

/// Deterministic input buffer for a case. Matmul inputs are A followed by B.
pub fn gen_input(case: &BenchCase) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let n = case.input_words();
    match case.bench {
        Bench::Matmul | Bench::Autocorr => (0..n).map(|_| rng.random_range(-32767i32..=32767) as u32).collect(),
        _ => (0..n).map(|_| rng.random()).collect(),
    }
}

/// Reference result computed on the host.
pub fn oracle(case: &BenchCase, input: &[u32]) -> Vec<u32> {
    let n = case.size as usize;
    match case.bench {
        Bench::Reduction => vec![input.iter().fold(0u32, |a, &x| a.wrapping_add(x))],
        Bench::Bitonic => {
            let mut v: Vec<i32> = input.iter().map(|&x| x as i32).collect();
            v.sort_unstable();
            v.into_iter().map(|x| x as u32).collect()
        }
        Bench::Transpose => {
            let mut out = vec![0; n * n];
            for i in 0..n {
                for j in 0..n {
                    out[j * n + i] = input[i * n + j];
                }
            }
            out
        }
        Bench::Matmul => {
            let (a, b) = input.split_at(n * n);
            let mut c = vec![0u32; n * n];
            for i in 0..n {
                for k in 0..n {
                    let aik = a[i * n + k];
                    for j in 0..n {
                        c[i * n + j] = c[i * n + j].wrapping_add(aik.wrapping_mul(b[k * n + j]));
                    }
                }
            }
            c
        }
        Bench::Autocorr => (0..n)
            .map(|k| (0..n - k).fold(0u32, |acc, i| acc.wrapping_add(input[i].wrapping_mul(input[i + k]))))
            .collect(),
    }
}

/// Memory layout and launch sequence for a case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub input_addr: u32,
    pub output_addr: u32,
    pub launches: Vec<LaunchParams>,
    pub memory_bytes: u32,
}

fn words_bytes(words: usize) -> u32 {
    (words * 4) as u32
}

pub fn plan(case: &BenchCase) -> Plan {
    let n = case.size;
    let input = DATA_BASE;
    let after_input = input + words_bytes(case.input_words());
    let (output, end, launches) = match case.bench {
        Bench::Matmul => {
            let b = input + words_bytes((n * n) as usize);
            (
                after_input,
                after_input + words_bytes((n * n) as usize),
                vec![LaunchParams::new(n, n, &[n, input, b, after_input])],
            )
        }
        Bench::Transpose => (
            after_input,
            after_input + words_bytes((n * n) as usize),
            vec![LaunchParams::new(n, n, &[n, input, after_input])],
        ),
        Bench::Autocorr => (
            after_input,
            after_input + words_bytes(n as usize),
            vec![LaunchParams::new(n, 32, &[n, input, after_input])],
        ),
        Bench::Reduction => {
            let partial_count = n.div_ceil(REDUCTION_BLOCK);
            let partials = after_input;
            let fin = partials + words_bytes(partial_count as usize);
            let second_block = partial_count.next_power_of_two();
            (
                fin,
                fin + 4,
                vec![
                    LaunchParams::new(partial_count, REDUCTION_BLOCK, &[n, input, partials]),
                    LaunchParams::new(1, second_block, &[partial_count, partials, fin]),
                ],
            )
        }
        Bench::Bitonic => {
            let block = BITONIC_BLOCK.min(n);
            let mut launches = Vec::new();
            let mut k = 2;
            while k <= n {
                let mut j = k / 2;
                while j > 0 {
                    launches.push(LaunchParams::new(
                        n / block,
                        block,
                        &[j, k, input, block.trailing_zeros()],
                    ));
                    j /= 2;
                }
                k *= 2;
            }
            (input, after_input, launches)
        }
    };
    Plan {
        input_addr: input,
        output_addr: output,
        launches,
        memory_bytes: end.next_multiple_of(0x1000),
    }
}

/// Result of running every launch of a case.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRun {
    pub output: Vec<u32>,
    /// Cycles and events summed over launches.
    pub counters: Counters,
    /// Deepest stack per (block, warp) over all launches.
    pub warp_depths: Vec<WarpDepth>,
    pub memory: MemoryImage,
    pub launches: usize,
    pub invariant_checks: u64,
}

impl BenchRun {
    pub fn max_stack_depth(&self) -> u32 {
        self.warp_depths.iter().map(|w| w.depth).max().unwrap_or(0)
    }

    pub fn report(&self, config: &GpuConfig, weights: &EnergyWeights) -> Report {
        Report::new("ok", config.echo(), self.counters, weights, &self.warp_depths)
    }
}

/// Deepest stack per (block, warp) across several runs.
pub fn merge_depths<'a>(runs: impl IntoIterator<Item = &'a [WarpDepth]>) -> Vec<WarpDepth> {
    let mut max: BTreeMap<(u32, u32), u32> = BTreeMap::new();
    for run in runs {
        for w in run {
            let d = max.entry((w.block, w.warp)).or_insert(0);
            *d = (*d).max(w.depth);
        }
    }
    max.into_iter()
        .map(|((block, warp), depth)| WarpDepth { block, warp, depth })
        .collect()
}

/// Runs a kernel over a launch sequence, threading memory through.
pub fn run_launches(
    kernel: &Kernel,
    launches: &[LaunchParams],
    config: &GpuConfig,
    mut memory: MemoryImage,
) -> Result<(MemoryImage, Vec<RunResult>), LaunchError> {
    let mut results = Vec::with_capacity(launches.len());
    for lp in launches {
        let mut r = gpu::launch(kernel, lp, config, memory)?;
        memory = std::mem::replace(&mut r.memory, MemoryImage::new(0));
        results.push(r);
    }
    Ok((memory, results))
}

pub fn run_case(case: &BenchCase, input: &[u32], config: &GpuConfig) -> Result<BenchRun, BenchError> {
    case.validate()?;
    let kernel = Kernel::from_source(case.bench.source())?;
    run_case_with(&kernel, case, input, config)
}

/// As [`run_case`] with an already assembled kernel.
pub fn run_case_with(
    kernel: &Kernel,
    case: &BenchCase,
    input: &[u32],
    config: &GpuConfig,
) -> Result<BenchRun, BenchError> {
    if input.len() != case.input_words() {
        return Err(BenchError::InvalidCase(format!(
            "expected {} input words, got {}",
            case.input_words(),
            input.len()
        )));
    }
    let plan = plan(case);
    let mut memory = MemoryImage::new(plan.memory_bytes);
    memory.write_words(plan.input_addr, input).map_err(LaunchError::from)?;
    let (memory, results) = run_launches(kernel, &plan.launches, config, memory)?;
    let mut counters = Counters::default();
    for r in &results {
        counters.accumulate(&r.counters);
    }
    let output = memory
        .read_words(plan.output_addr, case.output_words())
        .map_err(LaunchError::from)?
        .to_vec();
    Ok(BenchRun {
        output,
        counters,
        warp_depths: merge_depths(results.iter().map(|r| r.warp_depths.as_slice())),
        memory,
        launches: results.len(),
        invariant_checks: results.iter().map(|r| r.invariant_checks).sum(),
    })
}

/// Divergence micro-kernels: one 32-thread block writing one word per lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Micro {
    Peel32,
    Tree32,
    DivLoop,
}

impl Micro {
    pub const ALL: [Micro; 3] = [Micro::Peel32, Micro::Tree32, Micro::DivLoop];

    pub fn name(self) -> &'static str {
        match self {
            Micro::Peel32 => "peel32",
            Micro::Tree32 => "tree32",
            Micro::DivLoop => "divloop",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Micro::Peel32 => PEEL32_SRC,
            Micro::Tree32 => TREE32_SRC,
            Micro::DivLoop => DIVLOOP_SRC,
        }
    }

    pub fn expected(self) -> Vec<u32> {
        (0..32u32)
            .map(|t| match self {
                Micro::Peel32 => 1000 + t,
                Micro::Tree32 => 7 * t + 3,
                Micro::DivLoop => (0..(t & 7)).map(|i| i * t + 1).sum(),
            })
            .collect()
    }

    pub fn launch_params(self) -> LaunchParams {
        LaunchParams::new(1, 32, &[DATA_BASE])
    }

    pub fn run(self, config: &GpuConfig) -> Result<RunResult, LaunchError> {
        let kernel = Kernel::from_source(self.source()).expect("shipped kernel assembles");
        gpu::launch(&kernel, &self.launch_params(), config, MemoryImage::new(2 * DATA_BASE))
    }

    pub fn output(run: &RunResult) -> Vec<u32> {
        run.memory.read_words(DATA_BASE, 32).expect("output in range").to_vec()
    }
}
