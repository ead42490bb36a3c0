//! Command-line frontend.
//!
//! Exit codes: 0 success, 1 usage or I/O problem, 2 assembly or validation
//! error, 3 runtime error. Every failure prints one `error: ...` line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::container;
use crate::gpu::{self, GpuConfig, LaunchError, LaunchParams, RunResult};
use crate::kasm::{assemble, Kernel};
use crate::memsys::{MemError, MemoryImage, DEFAULT_GLOBAL_BYTES};
use crate::metrics::{EnergyWeights, Report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "softgpu", version, about = "SIMT GPU assembler and simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Assemble a .gka source into a .gk container
    Asm {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print the source form of a .gk container
    Disasm {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a kernel and write a report
    Run {
        input: PathBuf,
        #[command(flatten)]
        launch: LaunchArgs,
        #[arg(long, default_value_t = 1)]
        sms: u32,
        #[arg(long, default_value_t = 8)]
        sps: u32,
    },
    /// Run a kernel and print its divergence profile
    Profile {
        input: PathBuf,
        #[command(flatten)]
        launch: LaunchArgs,
        #[arg(long, default_value_t = 1)]
        sms: u32,
        #[arg(long, default_value_t = 8)]
        sps: u32,
    },
    /// Run every (sms, sps) combination, one report per point
    Sweep {
        input: PathBuf,
        #[command(flatten)]
        launch: LaunchArgs,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        sms: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "8")]
        sps: Vec<u32>,
        /// Directory for the per-point reports
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
struct LaunchArgs {
    #[arg(long)]
    grid: u32,
    #[arg(long)]
    block: u32,
    #[arg(long, default_value_t = 32)]
    stack_depth: u32,
    #[arg(long, default_value_t = 3)]
    operands: u8,
    #[arg(long)]
    no_mad: bool,
    #[arg(long, default_value_t = 10)]
    global_penalty: u32,
    #[arg(long, default_value_t = 2)]
    shared_penalty: u32,
    #[arg(long, default_value_t = DEFAULT_GLOBAL_BYTES)]
    mem_bytes: u32,
    /// 32-bit parameter word in hex, repeatable; placed from address 0
    #[arg(long = "param", value_parser = parse_hex32)]
    params: Vec<u32>,
    /// Raw little-endian file to place in global memory, as <file>@<addr>
    #[arg(long = "load", value_parser = parse_load)]
    loads: Vec<(PathBuf, u32)>,
    /// Memory range to write out after the run, as <addr>:<len>:<file>
    #[arg(long = "dump", value_parser = parse_dump)]
    dumps: Vec<(u32, u32, PathBuf)>,
    /// key=value report destination (stdout when absent)
    #[arg(long)]
    report: Option<PathBuf>,
    /// JSON report destination
    #[arg(long)]
    json: Option<PathBuf>,
    /// Energy weights as class=weight lines
    #[arg(long)]
    weights: Option<PathBuf>,
}

fn parse_u32(s: &str) -> Result<u32, String> {
    let r = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => u32::from_str_radix(h, 16),
        None => s.parse(),
    };
    r.map_err(|_| format!("bad number `{s}`"))
}

fn parse_hex32(s: &str) -> Result<u32, String> {
    let h = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
    u32::from_str_radix(h, 16).map_err(|_| format!("bad hex word `{s}`"))
}

fn parse_load(s: &str) -> Result<(PathBuf, u32), String> {
    let (file, addr) = s.rsplit_once('@').ok_or("expected <file>@<addr>")?;
    Ok((PathBuf::from(file), parse_u32(addr)?))
}

fn parse_dump(s: &str) -> Result<(u32, u32, PathBuf), String> {
    let mut parts = s.splitn(3, ':');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(l), Some(f)) if !f.is_empty() => Ok((parse_u32(a)?, parse_u32(l)?, PathBuf::from(f))),
        _ => Err("expected <addr>:<len>:<file>".into()),
    }
}

/// A failure with its exit code.
struct Failure {
    code: i32,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_USAGE,
            msg: msg.into(),
        }
    }

    fn invalid(msg: impl ToString) -> Failure {
        Failure {
            code: EXIT_INVALID,
            msg: msg.to_string(),
        }
    }
}

impl From<LaunchError> for Failure {
    fn from(e: LaunchError) -> Failure {
        let code = match e {
            LaunchError::Sim(_) => EXIT_RUNTIME,
            _ => EXIT_INVALID,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, data: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, data).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn load_kernel(path: &Path) -> Result<Kernel, Failure> {
    let bytes = read_file(path)?;
    if path.extension().is_some_and(|e| e == "gka") {
        let src = String::from_utf8(bytes).map_err(|_| Failure::invalid("source is not UTF-8"))?;
        return Kernel::from_source(&src).map_err(Failure::invalid);
    }
    container::read(&bytes).map_err(Failure::invalid)
}

impl LaunchArgs {
    fn config(&self, sms: u32, sps: u32) -> GpuConfig {
        GpuConfig {
            num_sms: sms,
            sps_per_sm: sps,
            warp_stack_depth: self.stack_depth,
            operand_units: self.operands,
            mad_enabled: !self.no_mad,
            global_mem_penalty: self.global_penalty,
            shared_mem_penalty: self.shared_penalty,
            global_mem_bytes: self.mem_bytes,
            ..GpuConfig::default()
        }
    }

    fn weights(&self) -> Result<EnergyWeights, Failure> {
        match &self.weights {
            None => Ok(EnergyWeights::default()),
            Some(p) => {
                let text = String::from_utf8(read_file(p)?).map_err(|_| Failure::usage("weights file is not UTF-8"))?;
                EnergyWeights::parse(&text).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))
            }
        }
    }

    fn memory(&self) -> Result<MemoryImage, Failure> {
        let mut mem = MemoryImage::new(self.mem_bytes);
        for (file, addr) in &self.loads {
            let data = read_file(file)?;
            mem.write_bytes(*addr, &data)
                .map_err(|e| Failure::usage(format!("--load {}: {e}", file.display())))?;
        }
        Ok(mem)
    }

    fn run(&self, kernel: &Kernel, cfg: &GpuConfig, err: &mut dyn Write) -> Result<RunResult, Failure> {
        for w in gpu::validate_config(&kernel.meta, cfg)? {
            let _ = writeln!(err, "warning: {w}");
        }
        let lp = LaunchParams::new(self.grid, self.block, &self.params);
        let mem = self.memory()?;
        gpu::launch(kernel, &lp, cfg, mem).map_err(|e| match e {
            LaunchError::Mem(m @ MemError::ParamsTooLarge { .. }) => Failure::invalid(m),
            other => other.into(),
        })
    }

    fn emit(&self, report: &Report, run: &RunResult, out: &mut dyn Write) -> Result<(), Failure> {
        match &self.report {
            Some(p) => write_file(p, report.to_text().as_bytes())?,
            None => {
                let _ = out.write_all(report.to_text().as_bytes());
            }
        }
        if let Some(p) = &self.json {
            write_file(p, report.to_json().as_bytes())?;
        }
        for (addr, len, file) in &self.dumps {
            let bytes = run
                .memory
                .read_bytes(*addr, *len as usize)
                .map_err(|e| Failure::usage(format!("--dump: {e}")))?;
            write_file(file, &bytes)?;
        }
        Ok(())
    }
}

fn report_for(run: &RunResult, cfg: &GpuConfig, weights: &EnergyWeights) -> Report {
    Report::new("ok", cfg.echo(), run.counters, weights, &run.warp_depths)
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    match cli.cmd {
        Command::Asm { input, output } => {
            let bytes = read_file(&input)?;
            let src = String::from_utf8(bytes).map_err(|_| Failure::invalid("source is not UTF-8"))?;
            let (image, meta) = assemble(&src).map_err(Failure::invalid)?;
            write_file(&output, &container::write(&image, &meta))
        }
        Command::Disasm { input, output } => {
            let kernel = load_kernel(&input)?;
            let text = kernel.disassemble();
            match output {
                Some(p) => write_file(&p, text.as_bytes()),
                None => {
                    let _ = out.write_all(text.as_bytes());
                    Ok(())
                }
            }
        }
        Command::Run {
            input,
            launch,
            sms,
            sps,
        } => {
            let kernel = load_kernel(&input)?;
            let cfg = launch.config(sms, sps);
            let weights = launch.weights()?;
            let run = launch.run(&kernel, &cfg, err)?;
            launch.emit(&report_for(&run, &cfg, &weights), &run, out)
        }
        Command::Profile {
            input,
            launch,
            sms,
            sps,
        } => {
            let kernel = load_kernel(&input)?;
            let cfg = launch.config(sms, sps);
            let weights = launch.weights()?;
            let run = launch.run(&kernel, &cfg, err)?;
            let report = report_for(&run, &cfg, &weights);
            let text = report.to_text();
            let mut sink = Vec::new();
            launch.emit(&report, &run, if launch.report.is_some() { out } else { &mut sink })?;
            for line in text
                .lines()
                .filter(|l| l.starts_with("profile.") || l.starts_with("cycles="))
            {
                let _ = writeln!(out, "{line}");
            }
            Ok(())
        }
        Command::Sweep {
            input,
            launch,
            sms,
            sps,
            out_dir,
        } => {
            let kernel = load_kernel(&input)?;
            let weights = launch.weights()?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Failure::usage(format!("{}: {e}", out_dir.display())))?;
            let stem = input
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("kernel")
                .to_string();
            for &m in &sms {
                for &s in &sps {
                    let cfg = launch.config(m, s);
                    let run = launch.run(&kernel, &cfg, err)?;
                    let path = out_dir.join(format!("{stem}_sms{m}_sps{s}.txt"));
                    write_file(&path, report_for(&run, &cfg, &weights).to_text().as_bytes())?;
                    let _ = writeln!(out, "{} cycles={}", path.display(), run.cycles());
                }
            }
            Ok(())
        }
    }
}

/// Runs the CLI on `args` (including the program name) with explicit streams.
pub fn dispatch_with<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            let first = e.to_string();
            let line = first
                .lines()
                .next()
                .unwrap_or("usage error")
                .trim_start_matches("error: ");
            let _ = writeln!(err, "error: {line}");
            return EXIT_USAGE;
        }
    };
    match execute(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.msg);
            f.code
        }
    }
}

pub fn dispatch<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    dispatch_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
