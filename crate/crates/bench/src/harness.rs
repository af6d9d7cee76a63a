//! Benchmark runs through the full runtime: register, profile, analyze,
//! offload per mode, and report.

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use offload_core::cpu::{execute, Array, MemoryImage, OpKind};
use offload_core::energy::{energy_of, EnergyError, EnergyReport};
use offload_core::ir::KernelFunction;
use offload_core::runtime::{Backend, ExecutionRecord, Mode, Runtime, RuntimeConfig, RuntimeError, SlotInfo};
use offload_core::specializer::{specialize, static_op_counts, Binding, Constant};

use crate::filters::Filter;
use crate::frames::{to_pgm, to_pixels, FrameSource};
use crate::kernels;
use crate::reference::{self, MandelbrotParams};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark spec: {0}")]
    InvalidSpec(String),
    #[error("{benchmark}: {source}")]
    Runtime { benchmark: String, source: RuntimeError },
    #[error("{benchmark}: output differs from the reference: {message}")]
    Validation { benchmark: String, message: String },
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Benchmark {
    Convolution,
    MatMult,
    Mandelbrot,
    PrnMatch,
    FilterDemo,
}

impl Benchmark {
    pub const ALL: [Benchmark; 5] =
        [Benchmark::Convolution, Benchmark::MatMult, Benchmark::Mandelbrot, Benchmark::PrnMatch, Benchmark::FilterDemo];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Convolution => "convolution",
            Benchmark::MatMult => "matmult",
            Benchmark::Mandelbrot => "mandelbrot",
            Benchmark::PrnMatch => "prnmatch",
            Benchmark::FilterDemo => "filterdemo",
        }
    }

    /// Default primary and secondary sizes.
    pub fn default_sizes(self) -> (usize, usize) {
        match self {
            Benchmark::Convolution => (256, 0),
            Benchmark::MatMult => (256, 0),
            Benchmark::Mandelbrot => (512, 256),
            Benchmark::PrnMatch => (1 << 16, 8),
            Benchmark::FilterDemo => (0, 0),
        }
    }
}

impl FromStr for Benchmark {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Benchmark::ALL.into_iter().find(|b| b.name() == s).ok_or_else(|| format!("unknown benchmark `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum BenchMode {
    CpuOnly,
    #[default]
    Hpa,
    HpaNoSpecialize,
}

impl BenchMode {
    pub fn name(self) -> &'static str {
        match self {
            BenchMode::CpuOnly => "cpu-only",
            BenchMode::Hpa => "hpa",
            BenchMode::HpaNoSpecialize => "hpa-no-specialize",
        }
    }

    /// `base` with the runtime mode and specialization switch of this mode.
    pub fn apply(self, base: &RuntimeConfig) -> RuntimeConfig {
        let mut cfg = base.clone();
        match self {
            BenchMode::CpuOnly => cfg.mode = Mode::CpuOnly,
            BenchMode::Hpa => cfg.mode = Mode::Adaptive,
            BenchMode::HpaNoSpecialize => {
                cfg.mode = Mode::Adaptive;
                cfg.specialize = false;
            }
        }
        cfg
    }
}

impl FromStr for BenchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [BenchMode::CpuOnly, BenchMode::Hpa, BenchMode::HpaNoSpecialize]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (cpu-only, hpa, hpa-no-specialize)"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSpec {
    pub benchmark: Benchmark,
    /// Matrix order, image side, sequence length.
    pub n: usize,
    /// Mandelbrot iteration cap or pattern length; unused elsewhere.
    pub m: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub mode: BenchMode,
}

impl BenchmarkSpec {
    pub fn new(benchmark: Benchmark) -> Self {
        let (n, m) = benchmark.default_sizes();
        BenchmarkSpec { benchmark, n, m, repetitions: 10, seed: 0, mode: BenchMode::Hpa }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.repetitions < 3 {
            return Err(BenchError::InvalidSpec(format!("repetitions must be >= 3, got {}", self.repetitions)));
        }
        let sized = !matches!(self.benchmark, Benchmark::FilterDemo);
        if sized && self.n == 0 {
            return Err(BenchError::InvalidSpec("size must be positive".into()));
        }
        if matches!(self.benchmark, Benchmark::Mandelbrot | Benchmark::PrnMatch) && self.m == 0 {
            return Err(BenchError::InvalidSpec("secondary size must be positive".into()));
        }
        Ok(())
    }
}

/// A workload: kernel name plus the argument image of each repetition.
pub struct Workload {
    pub function: &'static str,
    inputs: Box<dyn Fn(usize) -> MemoryImage>,
}

impl Workload {
    pub fn args(&self, rep: usize) -> MemoryImage {
        (self.inputs)(rep)
    }
}

fn uniform(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// The 3x3 binomial blur used by the convolution benchmark.
pub const BLUR: [f64; 9] = [0.0625, 0.125, 0.0625, 0.125, 0.25, 0.125, 0.0625, 0.125, 0.0625];

pub fn conv_args(h: usize, w: usize, padded: Vec<f64>, taps: &[f64; 9]) -> MemoryImage {
    MemoryImage::new()
        .with_int("H", h as i64)
        .with_int("W", w as i64)
        .with_array("In", Array::float(vec![h + 2, w + 2], padded))
        .with_array("K", Array::float(vec![3, 3], taps.to_vec()))
}

pub fn matmult_args(n: usize, seed: u64) -> MemoryImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = uniform(&mut rng, n * n);
    let b = uniform(&mut rng, n * n);
    MemoryImage::new().with_int("n", n as i64).with_array("A", Array::float(vec![n, n], a)).with_array("B", Array::float(vec![n, n], b))
}

pub fn mandelbrot_args(p: &MandelbrotParams) -> MemoryImage {
    MemoryImage::new()
        .with_int("H", p.h as i64)
        .with_int("W", p.w as i64)
        .with_int("MAXITER", p.max_iter)
        .with_float("x0", p.x0)
        .with_float("y0", p.y0)
        .with_float("dx", p.dx)
        .with_float("dy", p.dy)
}

/// Random sequence over a 4-letter alphabet and a random pattern.
pub fn prnmatch_data(n: usize, m: usize, seed: u64) -> (Vec<i64>, Vec<i64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq = (0..n).map(|_| rng.gen_range(0..4)).collect();
    let pat = (0..m).map(|_| rng.gen_range(0..4)).collect();
    (seq, pat)
}

pub fn prnmatch_args(seq: &[i64], pat: &[i64]) -> MemoryImage {
    MemoryImage::new()
        .with_int("N", seq.len() as i64)
        .with_int("M", pat.len() as i64)
        .with_array("Seq", Array::int(vec![seq.len()], seq.to_vec()))
        .with_array("Pat", Array::int(vec![pat.len()], pat.to_vec()))
}

pub fn workload(spec: &BenchmarkSpec) -> Workload {
    let (n, m, seed) = (spec.n, spec.m, spec.seed);
    match spec.benchmark {
        Benchmark::Convolution => {
            let src = FrameSource { width: n, height: n, frames: spec.repetitions, seed };
            Workload { function: "convolution", inputs: Box::new(move |rep| conv_args(n, n, src.padded(rep), &BLUR)) }
        }
        Benchmark::FilterDemo => {
            let src = FrameSource { frames: spec.repetitions, seed, ..FrameSource::default() };
            let (h, w) = (src.height, src.width);
            Workload { function: "convolution", inputs: Box::new(move |rep| conv_args(h, w, src.padded(rep), &Filter::Sharpen.taps())) }
        }
        Benchmark::MatMult => {
            let args = matmult_args(n, seed);
            Workload { function: "matmult", inputs: Box::new(move |_| args.clone()) }
        }
        Benchmark::Mandelbrot => {
            let args = mandelbrot_args(&MandelbrotParams::standard(n, n, m as i64));
            Workload { function: "mandelbrot", inputs: Box::new(move |_| args.clone()) }
        }
        Benchmark::PrnMatch => {
            let (seq, pat) = prnmatch_data(n, m, seed);
            let args = prnmatch_args(&seq, &pat);
            Workload { function: "prnmatch", inputs: Box::new(move |_| args.clone()) }
        }
    }
}

fn mismatch(b: Benchmark, message: String) -> BenchError {
    BenchError::Validation { benchmark: b.name().to_string(), message }
}

fn run_cpu(f: &KernelFunction, args: &MemoryImage) -> Result<MemoryImage, BenchError> {
    execute(f, args).map(|r| r.outputs).map_err(|e| BenchError::Runtime {
        benchmark: f.name.clone(),
        source: RuntimeError::Exec { function: f.name.clone(), backend: Backend::Cpu, source: e },
    })
}

/// Checks the IR kernel of `b` against its reference at a small size.
pub fn self_check(b: Benchmark, seed: u64) -> Result<(), BenchError> {
    match b {
        Benchmark::Convolution | Benchmark::FilterDemo => {
            let f = kernels::function("convolution").unwrap();
            let src = FrameSource { width: 9, height: 7, frames: 1, seed };
            for taps in [BLUR, Filter::Emboss.taps(), Filter::SobelY.taps(), Filter::Sharpen.taps()] {
                let out = run_cpu(&f, &conv_args(7, 9, src.padded(0), &taps))?;
                let want = reference::convolution(7, 9, &src.padded(0), &taps);
                let got = out.array("Out").and_then(|a| a.as_f64()).unwrap_or_default();
                if !bit_equal(got, &want) {
                    return Err(mismatch(b, "convolution".into()));
                }
            }
        }
        Benchmark::MatMult => {
            let f = kernels::function("matmult").unwrap();
            let args = matmult_args(7, seed);
            let out = run_cpu(&f, &args)?;
            let a = args.array("A").unwrap().as_f64().unwrap();
            let bm = args.array("B").unwrap().as_f64().unwrap();
            if !bit_equal(out.array("C").unwrap().as_f64().unwrap(), &reference::matmult(7, a, bm)) {
                return Err(mismatch(b, "matmult".into()));
            }
        }
        Benchmark::Mandelbrot => {
            let f = kernels::function("mandelbrot").unwrap();
            let p = MandelbrotParams::standard(12, 16, 64);
            let out = run_cpu(&f, &mandelbrot_args(&p))?;
            let got = out.array("Iter").unwrap().as_i64().unwrap();
            let want = reference::mandelbrot(&p);
            if got != want.as_slice() {
                return Err(mismatch(b, "iteration counts".into()));
            }
            if reference::mandelbrot_members(got, 64) != reference::mandelbrot_members(&want, 64) {
                return Err(mismatch(b, "membership count".into()));
            }
        }
        Benchmark::PrnMatch => {
            let f = kernels::function("prnmatch").unwrap();
            for (n, m) in [(40, 2), (40, 3), (3, 5)] {
                let (seq, pat) = prnmatch_data(n, m, seed);
                let out = run_cpu(&f, &prnmatch_args(&seq, &pat))?;
                let got = out.array("Count").unwrap().as_i64().unwrap()[0];
                if got != reference::prnmatch(&seq, &pat) {
                    return Err(mismatch(b, format!("match count {got} for n={n} m={m}")));
                }
            }
        }
    }
    Ok(())
}

pub fn bit_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Hash of the bit patterns of every output array.
pub fn digest(outputs: &[MemoryImage]) -> u64 {
    let mut h = DefaultHasher::new();
    for image in outputs {
        for (name, a) in &image.arrays {
            name.hash(&mut h);
            a.hash(&mut h);
        }
    }
    h.finish()
}

pub struct BenchOutcome {
    pub spec: BenchmarkSpec,
    pub report: EnergyReport,
    pub records: Vec<ExecutionRecord>,
    pub decision_log: Vec<String>,
    pub slots: Vec<SlotInfo>,
    pub profile_csv: String,
    pub output_digest: u64,
}

fn runtime_error(b: &str) -> impl Fn(RuntimeError) -> BenchError + '_ {
    move |source| BenchError::Runtime { benchmark: b.to_string(), source }
}

/// Runs `spec.repetitions` invocations through a fresh runtime.
pub fn run_benchmark(spec: &BenchmarkSpec, base: &RuntimeConfig) -> Result<BenchOutcome, BenchError> {
    spec.validate()?;
    self_check(spec.benchmark, spec.seed)?;
    let cfg = spec.mode.apply(base);
    let work = workload(spec);
    let err = runtime_error(spec.benchmark.name());
    let rt = Runtime::new(cfg.clone());
    rt.register_program(&kernels::program(work.function).unwrap()).map_err(&err)?;
    let mut outputs = Vec::with_capacity(spec.repetitions);
    for rep in 0..spec.repetitions {
        outputs.push(rt.invoke(work.function, &work.args(rep)).map_err(&err)?.0);
    }
    let records = rt.records();
    Ok(BenchOutcome {
        spec: spec.clone(),
        report: EnergyReport::build(&records, &cfg.power)?,
        records,
        decision_log: rt.decision_log(),
        slots: rt.slots(),
        profile_csv: rt.profile().to_csv(),
        output_digest: digest(&outputs),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub n: usize,
    pub cpu_wall_ns: f64,
    pub accel_wall_ns: f64,
    pub cpu_energy_j: f64,
    pub accel_energy_j: f64,
    pub fraction: f64,
}

pub const SWEEP_CSV_HEADER: &str = "n,cpu_wall_ms,accel_wall_ms,cpu_energy_mj,accel_energy_mj,energy_fraction";

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = format!("{SWEEP_CSV_HEADER}\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            p.n,
            p.cpu_wall_ns * 1e-6,
            p.accel_wall_ns * 1e-6,
            p.cpu_energy_j * 1e3,
            p.accel_energy_j * 1e3,
            p.fraction
        );
    }
    s
}

fn mean_energy(records: &[ExecutionRecord], cfg: &RuntimeConfig) -> Result<(f64, f64), BenchError> {
    let mut wall = 0.0;
    let mut energy = 0.0;
    for r in records {
        wall += r.wall_ns;
        energy += energy_of(r, cfg.power.model_for(&r.function))?;
    }
    let k = records.len().max(1) as f64;
    Ok((wall / k, energy / k))
}

/// For each size, `reps` forced-cpu and `reps` forced-accelerator matmul
/// invocations and the resulting energy fraction.
pub fn sweep_matmul(sizes: &[usize], reps: usize, seed: u64, base: &RuntimeConfig) -> Result<Vec<SweepPoint>, BenchError> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::InvalidSpec("sweep sizes must be strictly ascending".into()));
    }
    if sizes.first() == Some(&0) || reps == 0 {
        return Err(BenchError::InvalidSpec("sizes and repetitions must be positive".into()));
    }
    let err = runtime_error("matmult");
    let mut points = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let args = matmult_args(n, seed);
        let mut per_mode = Vec::with_capacity(2);
        for mode in [Mode::CpuOnly, Mode::AccelOnly] {
            let cfg = RuntimeConfig { mode, ..base.clone() };
            let rt = Runtime::new(cfg.clone());
            rt.register_program(&kernels::program("matmult").unwrap()).map_err(&err)?;
            for _ in 0..reps {
                rt.invoke("matmult", &args).map_err(&err)?;
            }
            per_mode.push(mean_energy(&rt.records(), &cfg)?);
        }
        let ((cw, ce), (aw, ae)) = (per_mode[0], per_mode[1]);
        points.push(SweepPoint { n, cpu_wall_ns: cw, accel_wall_ns: aw, cpu_energy_j: ce, accel_energy_j: ae, fraction: ae / ce });
    }
    Ok(points)
}

pub struct DemoOutcome {
    pub filter: Filter,
    pub mode: BenchMode,
    pub frames: usize,
    pub total_wall_ns: f64,
    /// `None` when no frame was processed.
    pub fps: Option<f64>,
    pub report: EnergyReport,
    pub records: Vec<ExecutionRecord>,
    /// Static multiplies per output pixel of the kernel this mode runs.
    pub muls_per_output: u64,
    pub decision_log: Vec<String>,
    pub profile_csv: String,
    pub output_digest: u64,
}

pub const DEMO_CSV_HEADER: &str = "filter,mode,frames,fps,mean_power_w,energy_per_frame_mj,muls_per_output";

impl DemoOutcome {
    pub fn row(&self) -> String {
        let energy: f64 = self
            .report
            .rows
            .iter()
            .map(|r| r.aggregate.energy_j.mean * r.aggregate.energy_j.n as f64)
            .sum();
        let (fps, power, per_frame) = match self.fps {
            Some(fps) => (
                format!("{fps:.4}"),
                format!("{:.4}", energy / (self.total_wall_ns * 1e-9)),
                format!("{:.6}", energy * 1e3 / self.frames as f64),
            ),
            None => ("no frames".to_string(), String::new(), String::new()),
        };
        format!("{},{},{},{fps},{power},{per_frame},{}", self.filter, self.mode.name(), self.frames, self.muls_per_output)
    }
}

/// Multiplies left per output after specializing the convolution on `f`.
pub fn specialized_muls(f: Filter) -> u64 {
    let conv = kernels::function("convolution").unwrap();
    let binding = Binding::from([("K".to_string(), Constant::Array(Array::float(vec![3, 3], f.taps().to_vec())))]);
    specialize(&conv, &binding).expect("K is an input of the convolution").after.get(OpKind::Mul)
}

/// Filters every frame of `source` through the runtime. When `dump` is set,
/// each filtered frame is written there as `<filter>_<i>.pgm`.
pub fn filter_demo(
    source: &FrameSource,
    filter: Filter,
    mode: BenchMode,
    base: &RuntimeConfig,
    dump: Option<&std::path::Path>,
) -> Result<DemoOutcome, BenchError> {
    self_check(Benchmark::FilterDemo, source.seed)?;
    let cfg = mode.apply(base);
    let err = runtime_error("filterdemo");
    let rt = Runtime::new(cfg.clone());
    rt.register_program(&kernels::program("convolution").unwrap()).map_err(&err)?;
    let mut outputs = Vec::with_capacity(source.frames);
    for i in 0..source.frames {
        let args = conv_args(source.height, source.width, source.padded(i), &filter.taps());
        let (out, _) = rt.invoke("convolution", &args).map_err(&err)?;
        if let Some(dir) = dump {
            let px = to_pixels(out.array("Out").and_then(|a| a.as_f64()).unwrap_or_default());
            let path = dir.join(format!("{}_{i}.pgm", filter.name()));
            std::fs::write(&path, to_pgm(source.width, source.height, &px))
                .map_err(|source| BenchError::Io { path: path.display().to_string(), source })?;
        }
        outputs.push(out);
    }
    let records = rt.records();
    let total_wall_ns: f64 = records.iter().map(|r| r.wall_ns).sum();
    let muls_per_output = match mode {
        BenchMode::Hpa => specialized_muls(filter),
        _ => static_op_counts(&kernels::function("convolution").unwrap()).get(OpKind::Mul),
    };
    Ok(DemoOutcome {
        filter,
        mode,
        frames: source.frames,
        total_wall_ns,
        fps: (source.frames > 0 && total_wall_ns > 0.0).then(|| source.frames as f64 / (total_wall_ns * 1e-9)),
        report: if records.is_empty() { EnergyReport::default() } else { EnergyReport::build(&records, &cfg.power)? },
        records,
        muls_per_output,
        decision_log: rt.decision_log(),
        profile_csv: rt.profile().to_csv(),
        output_digest: digest(&outputs),
    })
}
