use std::time::{Duration, Instant};

use halo_core::{parse_config, TimingRecord};
use halo_kernels::Kernel;
use halo_runtime::vagent::Backend;
use halo_runtime::{
    ChildRank, Comm, ComputeObject, HaloConfig, HaloError, InitOptions, MpixType, ParentContext, Payload, Result, Transport,
};
use serde::{Deserialize, Serialize};

use crate::metrics::{median, min_max, overhead_ratio, perf_penalty, portability_score};
use crate::workload::Input;

pub const MIN_REPS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchSpec {
    pub kernel: String,
    pub backend: String,
    /// Working-set size in bytes.
    pub wss: u64,
    pub reps: usize,
    pub warmups: usize,
    pub seed: u64,
}

impl BenchSpec {
    pub fn new(kernel: impl Into<String>, backend: impl Into<String>, wss: u64) -> BenchSpec {
        BenchSpec {
            kernel: kernel.into(),
            backend: backend.into(),
            wss,
            reps: 10,
            warmups: 2,
            seed: 1,
        }
    }

    pub fn reps(mut self, reps: usize) -> BenchSpec {
        self.reps = reps;
        self
    }

    pub fn warmups(mut self, warmups: usize) -> BenchSpec {
        self.warmups = warmups;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub kernel: String,
    pub backend: String,
    pub wss: u64,
    pub dims: Vec<u64>,
    pub reps: usize,
    pub warmups: usize,
    /// One per measured repetition, in seconds.
    pub records: Vec<TimingRecord>,
    /// Direct-call kernel time for each repetition, in seconds.
    pub baseline_t3: Vec<f64>,
    pub median: TimingRecord,
    pub min: TimingRecord,
    pub max: TimingRecord,
    pub baseline_t3_median: f64,
    /// Percent by which the dispatched kernel time exceeds the direct call.
    pub perf_penalty: f64,
    pub portability_score: f64,
    /// `t1 / t4` in percent.
    pub overhead_ratio: f64,
}

impl BenchReport {
    fn summarize(spec: &BenchSpec, kernel: Kernel, dims: Vec<u64>, records: Vec<TimingRecord>, baseline_t3: Vec<f64>) -> BenchReport {
        let col = |f: fn(&TimingRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
        let cols = [col(|r| r.t1), col(|r| r.t2), col(|r| r.t3), col(|r| r.t4)];
        let pick = |g: &dyn Fn(&[f64]) -> f64| TimingRecord {
            t1: g(&cols[0]),
            t2: g(&cols[1]),
            t3: g(&cols[2]),
            t4: g(&cols[3]),
        };
        let med = pick(&|c| median(c));
        let b = median(&baseline_t3);
        BenchReport {
            kernel: kernel.name().to_string(),
            backend: spec.backend.clone(),
            wss: spec.wss,
            dims,
            reps: spec.reps,
            warmups: spec.warmups,
            min: pick(&|c| min_max(c).0),
            max: pick(&|c| min_max(c).1),
            median: med,
            baseline_t3_median: b,
            perf_penalty: perf_penalty(med.t3, b),
            portability_score: portability_score(b, med.t3),
            overhead_ratio: overhead_ratio(med.t1, med.t4),
            records,
            baseline_t3,
        }
    }
}

/// A configuration naming every kernel, served by one `backend` agent.
pub fn bench_config(backend: &str) -> Result<HaloConfig> {
    Backend::parse(backend)?;
    let funcs: Vec<_> = Kernel::ALL
        .iter()
        .map(|k| {
            serde_json::json!({
                "func_alias": k.name(),
                "sw_fid": format!("{:X}", k.sw_fid()),
                "platform_id": "rr_scat",
            })
        })
        .collect();
    let cfg = serde_json::json!({
        "host_list": [{"host_name": "localhost", "port": "8000", "mode": "ads_accel", "max_slots": "1"}],
        "func_list": funcs,
        "platform_list": [{"backend": backend}],
    });
    parse_config(cfg.to_string().as_bytes())
}

/// A context with one in-process agent for `backend`. Unless
/// `HALO_RECV_TIMEOUT_MS` says otherwise, receives wait up to an hour.
pub fn bench_context(backend: &str) -> Result<ParentContext> {
    let mut opts = InitOptions {
        transport: Some(Transport::Inproc),
        ..InitOptions::from_env()
    };
    if std::env::var_os("HALO_RECV_TIMEOUT_MS").is_none() {
        opts.recv_timeout = Duration::from_secs(3600);
    }
    ParentContext::initialize_with(bench_config(backend)?, opts)
}

/// Runs `spec` on a fresh context.
pub fn run_bench(spec: &BenchSpec) -> Result<BenchReport> {
    let ctx = bench_context(&spec.backend)?;
    let report = run_bench_in(&ctx, spec);
    ctx.finalize()?;
    report
}

/// Runs `spec` through `ctx`, which must serve `spec.backend`.
///
/// Each repetition times one dispatched invocation, host send to host
/// receive, and one direct call of the same kernel variant on freshly copied
/// inputs; the two alternate in order from one repetition to the next.
/// Inputs live in an `alloc_mem` region so the round trip carries no payload
/// copy.
pub fn run_bench_in(ctx: &ParentContext, spec: &BenchSpec) -> Result<BenchReport> {
    let kernel = Kernel::from_name(&spec.kernel)
        .ok_or_else(|| HaloError::NoResource(format!("no kernel named {:?}", spec.kernel)))?;
    if spec.reps < MIN_REPS {
        return Err(HaloError::BadArgument(format!(
            "at least {MIN_REPS} repetitions are needed, got {}",
            spec.reps
        )));
    }
    let variant = Backend::parse(&spec.backend)?.variant();
    let cr = ctx.claim(kernel.name(), None, None)?;
    let result = measure(ctx, spec, kernel, cr, variant);
    let _ = ctx.free(cr);
    result
}

fn measure(
    ctx: &ParentContext,
    spec: &BenchSpec,
    kernel: Kernel,
    cr: ChildRank,
    variant: halo_kernels::Variant,
) -> Result<BenchReport> {
    let input = Input::generate(kernel, spec.wss, spec.seed);
    let dims = input.dims().unwrap_or_else(|| vec![crate::workload::dimension(kernel, spec.wss) as u64]);
    let mut region = ctx.alloc_mem(input.bulk_bytes())?;
    let args = input.arguments_in(&mut region)?;

    let mut records = Vec::with_capacity(spec.reps);
    let mut baseline = Vec::with_capacity(spec.reps);
    for i in 0..spec.warmups + spec.reps {
        let direct_first = i % 2 == 1;
        let early = if direct_first { Some(input.baseline(variant)?.0) } else { None };
        let co = ComputeObject::new(args.clone());
        let start = Instant::now();
        ctx.send(Payload::Object(co), 1, MpixType::ComputeObject, cr, 0, Comm::World)?;
        let got = ctx.recv_timed(cr, 0, None)?;
        let round_trip = start.elapsed();
        ctx.release(&got.object);
        let b = match early {
            Some(b) => b,
            None => input.baseline(variant)?.0,
        };
        if i >= spec.warmups {
            records.push(TimingRecord::from_round_trip(round_trip, got.t2, got.t3));
            baseline.push(b.as_secs_f64());
        }
    }
    ctx.free_mem(region)?;
    Ok(BenchReport::summarize(spec, kernel, dims, records, baseline))
}
