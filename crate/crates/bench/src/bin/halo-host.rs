//! A host application written only against the C²MPI interface.
//!
//! `halo-host <config.json> [--wss BYTES] [--seed N]` claims every function
//! alias in the configuration, sends each one a deterministic input and
//! prints the results as a JSON object keyed by alias. Which device serves
//! a function is decided entirely by the configuration file.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::Parser;
use halo_bench::Input;
use halo_kernels::Kernel;
use halo_runtime::{Comm, ComputeObject, MpixType, ParentContext, Payload};

#[derive(Parser)]
#[command(name = "halo-host", version, about = "Run every configured function once and print the results")]
struct Cli {
    config: PathBuf,
    #[arg(long, default_value = "16KB", value_parser = bytes)]
    wss: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn bytes(s: &str) -> Result<u64, String> {
    halo_bench::parse_bytes(s).ok_or_else(|| format!("not a byte count: {s:?}"))
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let ctx = ParentContext::initialize(&cli.config).with_context(|| format!("loading {}", cli.config.display()))?;
    let aliases: Vec<String> = ctx.config().func_list.iter().map(|f| f.func_alias.clone()).collect();
    let mut results = BTreeMap::new();
    for alias in aliases {
        let kernel = Kernel::from_name(&alias).ok_or_else(|| anyhow!("no input generator for {alias}"))?;
        let input = Input::generate(kernel, cli.wss, cli.seed);
        let cr = ctx.claim(&alias, None, None)?;
        ctx.send(
            Payload::Object(ComputeObject::new(input.arguments())),
            1,
            MpixType::ComputeObject,
            cr,
            0,
            Comm::World,
        )?;
        let co = ctx.recv(cr, 0)?;
        results.insert(alias, ctx.read_f64(&co, 0)?);
        ctx.release(&co);
        ctx.free(cr)?;
    }
    ctx.finalize()?;
    println!("{}", serde_json::to_string(&results)?);
    Ok(())
}
