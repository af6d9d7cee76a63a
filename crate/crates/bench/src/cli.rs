//! The `offload` command line.
//!
//! Exit status: 0 on success, 2 on usage or configuration errors, 3 when a
//! benchmark fails.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use offload_core::ir::{parse_program, parse_program_json, KernelFunction, Program};
use offload_core::parallelism::{analyze, eligibility};
use offload_core::runtime::accel::size_args;
use offload_core::runtime::{Policy, RuntimeConfig};

use crate::filters::Filter;
use crate::frames::FrameSource;
use crate::harness::{self, BenchError, BenchMode, Benchmark, BenchmarkSpec, DEMO_CSV_HEADER};
use crate::kernels;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Table,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Speed,
    Energy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum IrFormat {
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "offload", version, about = "Adaptive cpu/accelerator offload benchmarks")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Runtime configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value = "table")]
    pub report: ReportFormat,
    /// Overrides the policy of the configuration file.
    #[arg(long, global = true, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Time is vcycles times `cycle_ns` instead of the wall clock.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Writes the controller's decision log here.
    #[arg(long, global = true)]
    pub decision_log: Option<PathBuf>,
    /// Writes the cumulative profile as CSV here.
    #[arg(long, global = true)]
    pub dump_profile: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Runs one benchmark and prints its energy report.
    Run {
        benchmark: Benchmark,
        /// Matrix order, image side or sequence length.
        #[arg(long)]
        n: Option<usize>,
        /// Mandelbrot iteration cap or pattern length.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value = "hpa")]
        mode: BenchMode,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
    },
    /// Forced-cpu versus forced-accelerator matmul over a size list.
    Sweep {
        #[arg(long, value_delimiter = ',', default_values_t = [16usize, 32, 64, 128, 160, 200, 256, 384, 512])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        /// Writes the `n,energy_fraction` series here.
        #[arg(long)]
        emit_fractions: Option<PathBuf>,
    },
    /// Filters synthetic frames through the runtime.
    Demo {
        #[arg(long, default_value = "sharpen")]
        filter: Filter,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value_t = 1280)]
        width: usize,
        #[arg(long, default_value_t = 720)]
        height: usize,
        #[arg(long, default_value = "hpa")]
        mode: BenchMode,
        /// Turns `hpa` into `hpa-no-specialize`.
        #[arg(long)]
        no_specialize: bool,
        /// Directory receiving every filtered frame as binary PGM.
        #[arg(long)]
        dump_pgm: Option<PathBuf>,
    },
    /// Prints the parallelism report of a built-in kernel or an IR file.
    Analyze {
        /// Built-in kernel name; ignored with `--ir`.
        #[arg(default_value = "matmult")]
        kernel: String,
        /// IR file to analyze instead of a built-in kernel.
        #[arg(long)]
        ir: Option<PathBuf>,
        /// Encoding of the `--ir` file.
        #[arg(long, value_enum, default_value = "text")]
        format: IrFormat,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        /// Size parameter as NAME=VALUE; repeatable.
        #[arg(long = "size", value_parser = parse_size)]
        sizes: Vec<(String, i64)>,
        /// Writes the report lines here instead of stdout.
        #[arg(long)]
        dump_parallelism: Option<PathBuf>,
    },
}

fn parse_size(s: &str) -> Result<(String, i64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let v = v.trim().parse().map_err(|e| format!("{s}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

enum CliError {
    Usage(String),
    Failure(String),
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::InvalidSpec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))
}

fn load_config(g: &GlobalArgs) -> Result<RuntimeConfig, CliError> {
    let mut cfg = match &g.config {
        Some(p) => RuntimeConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => RuntimeConfig::default(),
    };
    if let Some(p) = g.policy {
        cfg.policy = match p {
            PolicyArg::Speed => Policy::Speed,
            PolicyArg::Energy => Policy::Energy,
        };
    }
    cfg.deterministic |= g.deterministic;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Left-aligned columns separated by two spaces.
fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width: Vec<usize> = (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0)).collect();
    let mut s = String::new();
    for r in rows {
        let parts: Vec<String> = r.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(s, "{}", parts.join("  ").trim_end());
    }
    s
}

fn csv_as_table(csv: &str) -> String {
    let rows: Vec<Vec<String>> = csv.lines().map(|l| l.split(',').map(str::to_string).collect()).collect();
    aligned(&rows)
}

fn render(csv: String, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => csv,
        ReportFormat::Table => csv_as_table(&csv),
    }
}

fn join_lines(lines: &[String]) -> String {
    lines.iter().map(|l| format!("{l}\n")).collect()
}

fn side_outputs(g: &GlobalArgs, log: &[String], profile: Option<String>) -> Result<(), CliError> {
    if let Some(p) = &g.decision_log {
        write_file(p, &join_lines(log))?;
    }
    if let (Some(p), Some(csv)) = (&g.dump_profile, profile) {
        write_file(p, &csv)?;
    }
    Ok(())
}

fn load_ir(path: &Path, format: IrFormat) -> Result<Program, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    match format {
        IrFormat::Text => parse_program(&text),
        IrFormat::Json => parse_program_json(&text),
    }
    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Size arguments of a built-in kernel at its default or requested sizes.
fn builtin_sizes(f: &KernelFunction, name: &str, n: Option<usize>, m: Option<usize>, seed: u64) -> BTreeMap<String, i64> {
    match name.parse::<Benchmark>() {
        Ok(b) => {
            let mut spec = BenchmarkSpec { seed, ..BenchmarkSpec::new(b) };
            spec.n = n.unwrap_or(spec.n);
            spec.m = m.unwrap_or(spec.m);
            size_args(f, &harness::workload(&spec).args(0))
        }
        Err(_) => f.size_params().map(|p| (p.to_string(), n.unwrap_or(256) as i64)).collect(),
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let g = &cli.global;
    let cfg = load_config(g)?;
    let text = match cli.command {
        Command::Run { benchmark, n, m, mode, repetitions } => {
            let mut spec = BenchmarkSpec { repetitions, seed: g.seed, mode, ..BenchmarkSpec::new(benchmark) };
            spec.n = n.unwrap_or(spec.n);
            spec.m = m.unwrap_or(spec.m);
            let o = harness::run_benchmark(&spec, &cfg)?;
            side_outputs(g, &o.decision_log, Some(o.profile_csv.clone()))?;
            match g.report {
                ReportFormat::Csv => o.report.to_csv(),
                ReportFormat::Table => o.report.to_table(),
            }
        }
        Command::Sweep { sizes, repetitions, emit_fractions } => {
            let points = harness::sweep_matmul(&sizes, repetitions, g.seed, &cfg)?;
            if let Some(p) = &emit_fractions {
                let mut s = String::from("n,energy_fraction\n");
                for pt in &points {
                    let _ = writeln!(s, "{},{:.6}", pt.n, pt.fraction);
                }
                write_file(p, &s)?;
            }
            render(harness::sweep_csv(&points), g.report)
        }
        Command::Demo { filter, frames, width, height, mode, no_specialize, dump_pgm } => {
            if width == 0 || height == 0 {
                return Err(CliError::Usage("frame width and height must be positive".into()));
            }
            let mode = match (mode, no_specialize) {
                (BenchMode::Hpa, true) => BenchMode::HpaNoSpecialize,
                (m, _) => m,
            };
            let source = FrameSource { width, height, frames, seed: g.seed };
            if let Some(dir) = &dump_pgm {
                std::fs::create_dir_all(dir).map_err(|e| CliError::Failure(format!("{}: {e}", dir.display())))?;
            }
            let d = harness::filter_demo(&source, filter, mode, &cfg, dump_pgm.as_deref())?;
            side_outputs(g, &d.decision_log, Some(d.profile_csv.clone()))?;
            render(format!("{DEMO_CSV_HEADER}\n{}\n", d.row()), g.report)
        }
        Command::Analyze { kernel, ir, format, n, m, sizes, dump_parallelism } => {
            let (program, builtin) = match &ir {
                Some(path) => (load_ir(path, format)?, false),
                None => match kernels::program(&kernel) {
                    Some(p) => (p, true),
                    None => return Err(CliError::Usage(format!("unknown kernel `{kernel}`"))),
                },
            };
            let report = offload_core::ir::validate(&program);
            if !report.is_valid() {
                return Err(CliError::Usage(format!("invalid program: {report}")));
            }
            let mut lines = Vec::new();
            for f in &program.functions {
                let mut env = if builtin { builtin_sizes(f, &kernel, n, m, g.seed) } else { BTreeMap::new() };
                env.extend(sizes.iter().cloned());
                match analyze(f, &env) {
                    Ok(rep) => {
                        lines.extend(rep.dump_lines());
                        let e = eligibility(&rep);
                        lines.push(format!("# {}: eligible={} {}", f.name, e.eligible, e.reason));
                    }
                    Err(e) => lines.push(format!("# {}: not analyzable: {e}", f.name)),
                }
            }
            let text = join_lines(&lines);
            match &dump_parallelism {
                Some(p) => {
                    write_file(p, &text)?;
                    String::new()
                }
                None => text,
            }
        }
    };
    out.write_all(text.as_bytes()).map_err(|e| CliError::Failure(format!("stdout: {e}")))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Failure(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_FAILURE
        }
    }
}
