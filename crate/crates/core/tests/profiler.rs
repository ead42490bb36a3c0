mod common;

use proptest::prelude::*;
use softgpu::benchkit::{gen_input, run_case, Bench, BenchCase};
use softgpu::gpu::{launch, GpuConfig, LaunchError, LaunchParams};
use softgpu::kasm::Kernel;
use softgpu::memsys::MemoryImage;
use softgpu::metrics::{parse_counters, profile, EnergyWeights};
use softgpu::smcore::ExecError;

fn configs() -> impl Iterator<Item = GpuConfig> {
    [1, 2].into_iter().flat_map(|num_sms| {
        [8, 16, 32].into_iter().map(move |sps_per_sm| GpuConfig {
            num_sms,
            sps_per_sm,
            ..GpuConfig::default()
        })
    })
}

#[test]
fn one_divergent_branch_reaches_depth_two() {
    let src = "
.kernel d
        SSY j
        AND R4, R0, 1
        ISETP p0, R4, 0
        @p0.NE BRA e
        MVI R5, 1
        SYNC
e:      MVI R5, 2
        SYNC
j:      EXIT
";
    let k = Kernel::from_source(src).unwrap();
    let r = launch(
        &k,
        &LaunchParams::new(1, 32, &[]),
        &GpuConfig::default(),
        MemoryImage::new(0x1000),
    )
    .unwrap();
    let p = profile(&r.counters, &r.warp_depths);
    assert_eq!(p.max_stack_depth, 2);
    assert_eq!(p.divergences, 1);
    assert_eq!(r.counters.stack_pushes, 2);
    assert_eq!(r.counters.stack_pops, 2);
}

#[test]
fn uniform_branch_does_not_diverge() {
    let src = ".kernel u\nSSY j\nISETP p0, R1, 0\n@p0.NE BRA e\nMVI R5, 1\nSYNC\ne: SYNC\nj: EXIT\n";
    let k = Kernel::from_source(src).unwrap();
    let r = launch(
        &k,
        &LaunchParams::new(2, 32, &[]),
        &GpuConfig::default(),
        MemoryImage::new(0x1000),
    )
    .unwrap();
    assert_eq!(r.counters.divergences, 0);
    assert_eq!(profile(&r.counters, &r.warp_depths).max_stack_depth, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn reported_depth_is_minimal(seed: u64, block in 1u32..70) {
        let k = Kernel::from_source(&common::divergent::kernel(seed)).unwrap();
        let lp = LaunchParams::new(2, block, &[]);
        let mem = MemoryImage::new(0x1000 + 2 * block * 32);
        let full = launch(&k, &lp, &GpuConfig::default(), mem.clone()).unwrap();
        let d = profile(&full.counters, &full.warp_depths).max_stack_depth;
        prop_assume!(d >= 1);
        let at = GpuConfig { warp_stack_depth: d, ..GpuConfig::default() };
        let r = launch(&k, &lp, &at, mem.clone()).unwrap();
        prop_assert!(r.memory == full.memory);
        let below = GpuConfig { warp_stack_depth: d - 1, ..GpuConfig::default() };
        match launch(&k, &lp, &below, mem) {
            Err(LaunchError::Sim(e)) => prop_assert_eq!(e.kind, ExecError::StackOverflow { limit: d as usize - 1 }),
            other => prop_assert!(false, "depth {} gave {:?}", d - 1, other.map(|r| r.cycles())),
        }
    }
}

#[test]
fn work_is_conserved_across_configs() {
    for bench in Bench::ALL {
        let case = BenchCase::new(bench, 64, 11).unwrap();
        let input = gen_input(&case);
        let runs: Vec<_> = configs().map(|cfg| run_case(&case, &input, &cfg).unwrap()).collect();
        let first = &runs[0];
        for r in &runs[1..] {
            assert!(r.memory == first.memory, "{bench}");
            let (a, b) = (&r.counters, &first.counters);
            assert_eq!(a.thread_instructions, b.thread_instructions, "{bench}");
            assert_eq!(a.warp_instructions_retired, b.warp_instructions_retired, "{bench}");
            assert_eq!(a.histogram, b.histogram, "{bench}");
            assert_eq!(
                (a.global_loads, a.global_stores),
                (b.global_loads, b.global_stores),
                "{bench}"
            );
            assert_eq!(
                (a.shared_loads, a.shared_stores),
                (b.shared_loads, b.shared_stores),
                "{bench}"
            );
            assert_eq!(r.warp_depths, first.warp_depths, "{bench}");
        }
        for r in &runs {
            let c = &r.counters;
            assert!(c.thread_instructions <= 32 * c.warp_instructions_retired);
            assert_eq!(c.stack_pushes, c.stack_pops);
            assert_eq!(c.histogram.iter().sum::<u64>(), c.warp_instructions_retired);
        }
    }
}

#[test]
fn runs_and_reports_are_reproducible() {
    let weights = EnergyWeights::default();
    for bench in Bench::ALL {
        let case = BenchCase::new(bench, 32, 3).unwrap();
        let input = gen_input(&case);
        let cfg = GpuConfig {
            num_sms: 2,
            ..GpuConfig::default()
        };
        let a = run_case(&case, &input, &cfg).unwrap();
        let b = run_case(&case, &input, &cfg).unwrap();
        assert_eq!(a, b, "{bench}");
        let text = a.report(&cfg, &weights).to_text();
        assert_eq!(text, b.report(&cfg, &weights).to_text());
        assert_eq!(parse_counters(&text).unwrap(), a.counters, "{bench}");
    }
}

#[test]
fn single_launch_result_is_bit_identical() {
    let k = Bench::Matmul.kernel();
    let lp = LaunchParams::new(8, 8, &[8, 0x1000, 0x1100, 0x1200]);
    let cfg = GpuConfig {
        num_sms: 2,
        trace_issue: true,
        ..GpuConfig::default()
    };
    let mem = MemoryImage::new(0x2000);
    assert_eq!(
        launch(&k, &lp, &cfg, mem.clone()).unwrap(),
        launch(&k, &lp, &cfg, mem).unwrap()
    );
}
