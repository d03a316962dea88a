//! Virtualization agent process.
//!
//! `halo-vagent --backend cpu_opt --endpoint /tmp/halo-run/agent [--kernels dir]`
//! binds the endpoint, prints one JSON readiness line on stdout and serves
//! until it receives SHUTDOWN. `halo-vagent package` writes the built-in
//! kernels as `.ha` packages.

use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use halo_core::ipc::Address;
use halo_kernels::Kernel;
use halo_runtime::vagent::{AgentHandle, Backend, HaPackage, KernelRepository};

#[derive(Parser)]
#[command(name = "halo-vagent", version, about = "HALO virtualization agent")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    serve: Serve,
}

#[derive(Subcommand)]
enum Command {
    /// Write built-in kernels as .ha packages.
    Package {
        #[arg(long)]
        backend: String,
        #[arg(long)]
        out: PathBuf,
        /// Kernel names; all eight when omitted.
        #[arg(long = "kernel")]
        kernels: Vec<String>,
        /// sw_verid written into the manifests.
        #[arg(long, default_value_t = 1)]
        version: u64,
    },
}

#[derive(Args)]
struct Serve {
    #[arg(long)]
    backend: Option<String>,
    /// inproc://name is meaningless across processes; use a socket path.
    #[arg(long)]
    endpoint: Option<String>,
    /// Directory of extra .ha packages.
    #[arg(long)]
    kernels: Option<PathBuf>,
    /// Skip the built-in kernels.
    #[arg(long)]
    no_builtin: bool,
    #[arg(long, default_value_t = 0)]
    sim_t2_us: u64,
    #[arg(long, default_value_t = 0)]
    sim_t3_us: u64,
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Some(Command::Package {
            backend,
            out,
            kernels,
            version,
        }) => package(&backend, &out, &kernels, version),
        None => serve(cli.serve),
    }
}

fn package(backend: &str, out: &PathBuf, names: &[String], version: u64) -> anyhow::Result<()> {
    let backend = Backend::parse(backend)?;
    let kernels: Vec<Kernel> = if names.is_empty() {
        Kernel::ALL.to_vec()
    } else {
        names
            .iter()
            .map(|n| Kernel::from_name(n).with_context(|| format!("unknown kernel {n:?}")))
            .collect::<anyhow::Result<_>>()?
    };
    for k in kernels {
        let mut pkg = HaPackage::builtin(k, &backend);
        pkg.manifest.attributes.sw_verid = version;
        let path = pkg.write_to_dir(out)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn serve(args: Serve) -> anyhow::Result<()> {
    let Some(backend) = args.backend else {
        bail!("--backend is required (one of {:?})", Backend::IDS);
    };
    let Some(endpoint) = args.endpoint else {
        bail!("--endpoint is required");
    };
    let backend = Backend::parse(&backend)?.with_delays(
        Duration::from_micros(args.sim_t2_us),
        Duration::from_micros(args.sim_t3_us),
    );
    let address = Address::parse(&endpoint)?;
    if matches!(address, Address::Inproc(_)) {
        bail!("a separate agent process needs a socket endpoint, not {address}");
    }
    let mut repo = if args.no_builtin {
        KernelRepository::new(backend.id())
    } else {
        KernelRepository::builtin(&backend)
    };
    if let Some(dir) = &args.kernels {
        repo.load_dir(dir)?;
    }
    let kernels = repo.len();
    let agent = AgentHandle::spawn(backend.clone(), address.clone(), repo)?;
    println!(
        "{}",
        serde_json::json!({
            "ready": true,
            "endpoint": address.to_string(),
            "backend": backend.id(),
            "pid": std::process::id(),
            "kernels": kernels,
        })
    );
    agent.join();
    let m = agent.metrics();
    tracing::info!(requests = m.requests, responses = m.responses, executions = m.executions, "agent stopped");
    Ok(())
}
