use offload_bench::filters::Filter;
use offload_bench::harness::{run_benchmark, specialized_muls, BenchMode, Benchmark, BenchmarkSpec};
use offload_core::runtime::{Backend, RuntimeConfig};

fn deterministic() -> RuntimeConfig {
    RuntimeConfig { deterministic: true, ..RuntimeConfig::default() }
}

#[test]
fn identical_inputs_reproduce_everything() {
    for b in [Benchmark::Convolution, Benchmark::MatMult, Benchmark::Mandelbrot, Benchmark::PrnMatch] {
        let spec = BenchmarkSpec { n: 48, m: 6, repetitions: 4, seed: 3, ..BenchmarkSpec::new(b) };
        let (x, y) = (run_benchmark(&spec, &deterministic()).unwrap(), run_benchmark(&spec, &deterministic()).unwrap());
        assert_eq!(x.output_digest, y.output_digest, "{b:?}");
        assert_eq!(x.decision_log, y.decision_log, "{b:?}");
        assert_eq!(x.report.to_csv(), y.report.to_csv(), "{b:?}");
        let vc = |o: &offload_bench::harness::BenchOutcome| o.records.iter().map(|r| r.vcycles).collect::<Vec<_>>();
        assert_eq!(vc(&x), vc(&y));
    }
}

#[test]
fn seeds_change_inputs() {
    let spec = |seed| BenchmarkSpec { n: 16, repetitions: 3, seed, mode: BenchMode::CpuOnly, ..BenchmarkSpec::new(Benchmark::MatMult) };
    let a = run_benchmark(&spec(1), &deterministic()).unwrap();
    let b = run_benchmark(&spec(2), &deterministic()).unwrap();
    assert_ne!(a.output_digest, b.output_digest);
}

#[test]
fn large_matmul_offloads_and_stays() {
    let spec = BenchmarkSpec { n: 256, repetitions: 3, ..BenchmarkSpec::new(Benchmark::MatMult) };
    let o = run_benchmark(&spec, &deterministic()).unwrap();
    assert!(o.report.row("matmult", Backend::Cpu).is_some());
    assert!(o.report.row("matmult", Backend::Accel).is_some());
    assert!(o.decision_log[0].contains("event=offload"));
    assert!(!o.decision_log.iter().any(|l| l.contains("event=revert")));
}

#[test]
fn filters_differ_by_their_sparsity() {
    let counts: Vec<u64> = Filter::ALL.iter().map(|&f| specialized_muls(f)).collect();
    assert_eq!(counts, vec![2, 2, 1]);
    assert_ne!(specialized_muls(Filter::Emboss), specialized_muls(Filter::Sharpen));
}
