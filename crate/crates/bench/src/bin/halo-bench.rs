//! `halo-bench run|sweep|stress`

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use halo_bench::report::{write_csv, write_json};
use halo_bench::{bench_context, emit_report, run_bench_in, stress, BenchReport, BenchSpec, Format};
use halo_kernels::Kernel;
use halo_runtime::vagent::Backend;

#[derive(Parser)]
#[command(name = "halo-bench", version, about = "Time kernels dispatched through HALO against direct calls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One kernel, one backend, one working-set size.
    Run {
        #[arg(long)]
        kernel: String,
        #[arg(long, default_value = "cpu_opt")]
        backend: String,
        /// Bytes, or with a KB/MB/GB suffix.
        #[arg(long, default_value = "1MB", value_parser = bytes)]
        wss: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Every combination of the given kernels, backends and sizes.
    Sweep {
        /// Defaults to all eight kernels.
        #[arg(long, value_delimiter = ',')]
        kernels: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "cpu_opt")]
        backends: Vec<String>,
        #[arg(long, value_delimiter = ',', value_parser = bytes, default_value = "1MB,4MB,16MB,64MB,256MB")]
        wss: Vec<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Concurrent threads sharing one context.
    Stress {
        #[arg(long, default_value_t = 8)]
        threads: usize,
        #[arg(long, default_value_t = 100)]
        ops: usize,
        #[arg(long, default_value = "cpu_opt")]
        backend: String,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 2)]
    warmups: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write a JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write a CSV report here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn bytes(s: &str) -> Result<u64, String> {
    halo_bench::parse_bytes(s).ok_or_else(|| format!("not a byte count: {s:?}"))
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Run { kernel, backend, wss, common } => {
            let specs = vec![spec(&common, kernel, backend, wss)];
            finish(execute(&specs)?, &common)
        }
        Command::Sweep { kernels, backends, wss, common } => {
            let kernels = if kernels.is_empty() {
                Kernel::ALL.iter().map(|k| k.name().to_string()).collect()
            } else {
                kernels
            };
            let mut specs = Vec::new();
            for b in &backends {
                for k in &kernels {
                    for &w in &wss {
                        specs.push(spec(&common, k.clone(), b.clone(), w));
                    }
                }
            }
            finish(execute(&specs)?, &common)
        }
        Command::Stress { threads, ops, backend } => {
            let variant = Backend::parse(&backend)?.variant();
            let ctx = bench_context(&backend)?;
            let report = stress(&ctx, threads, ops, variant)?;
            ctx.finalize()?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.passed() {
                bail!("stress run lost, duplicated or corrupted results");
            }
            Ok(())
        }
    }
}

fn spec(c: &Common, kernel: String, backend: String, wss: u64) -> BenchSpec {
    BenchSpec {
        kernel,
        backend,
        wss,
        reps: c.reps,
        warmups: c.warmups,
        seed: c.seed,
    }
}

fn execute(specs: &[BenchSpec]) -> anyhow::Result<Vec<BenchReport>> {
    let mut out = Vec::with_capacity(specs.len());
    for chunk in specs.chunk_by(|a, b| a.backend == b.backend) {
        let ctx = bench_context(&chunk[0].backend)?;
        for s in chunk {
            eprintln!("{} on {} at {} bytes", s.kernel, s.backend, s.wss);
            let r = run_bench_in(&ctx, s).with_context(|| format!("{} on {}", s.kernel, s.backend))?;
            out.push(r);
        }
        ctx.finalize()?;
    }
    Ok(out)
}

fn finish(reports: Vec<BenchReport>, c: &Common) -> anyhow::Result<()> {
    if let Some(p) = &c.json {
        emit_report(&reports, Format::Json, p).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &c.csv {
        emit_report(&reports, Format::Csv, p).with_context(|| format!("writing {}", p.display()))?;
    }
    let stdout = std::io::stdout().lock();
    if c.json.is_none() && c.csv.is_none() {
        write_json(&reports, stdout)?;
    } else {
        write_csv(&reports, stdout)?;
    }
    Ok(())
}
