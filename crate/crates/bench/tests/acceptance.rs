//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails that is not listed in [`KNOWN_FAILURES`];
//! with `HALO_ACCEPTANCE_STRICT=1` every failure is fatal. Pass criterion
//! numbers as arguments to run a subset.

#[path = "../../kernels/tests/common/mod.rs"]
mod oracles;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use halo_bench::{bench_context, overhead_ratio, perf_penalty, portability_score, run_bench_in, stress, BenchSpec};
use halo_core::parse_config;
use halo_kernels::{Kernel, Variant};
use halo_runtime::vagent::Backend;
use halo_runtime::{
    failsafe, Argument, ChildRank, Comm, ComputeObject, HaloError, InitOptions, MpixType, ParentContext, Payload,
    StatusCode,
};
use oracles::{check_close, random_case, Case, Inputs};
use rand::rngs::StdRng;
use rand::SeedableRng;

type Outcome = Result<String, String>;

const REL: f64 = 1e-12;

/// Criteria that fail on the reference machine for reasons analysed in the
/// README. They still run and still print FAIL.
const KNOWN_FAILURES: &[usize] = &[4];

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "kernel correctness", kernel_correctness),
        (2, "unified control flow", unified_control_flow),
        (3, "portability score", portability),
        (4, "overhead invariance", overhead_invariance),
        (5, "overhead ratio", overhead_ratio_mmm),
        (6, "metric arithmetic", metric_arithmetic),
        (7, "fail-safe path", failsafe_path),
        (8, "FIFO and tag semantics", fifo_and_tags),
        (9, "round-robin", round_robin),
        (10, "protocol hygiene", protocol_hygiene),
    ];
    let strict = std::env::var("HALO_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let (mut passed, mut failed, mut fatal) = (0, Vec::new(), 0);
    for (n, name, run) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => {
                passed += 1;
                println!("PASS {n:>2} {name}: {detail} [{secs:.1}s]");
            }
            Err(detail) => {
                let known = KNOWN_FAILURES.contains(&n);
                if strict || !known {
                    fatal += 1;
                }
                failed.push(n);
                let note = if known { " (known failure, see README)" } else { "" };
                println!("FAIL {n:>2} {name}: {detail} [{secs:.1}s]{note}");
            }
        }
    }
    println!("{passed} passed, {} failed {failed:?}", failed.len());
    if fatal > 0 {
        std::process::exit(1);
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn halo<T>(r: halo_runtime::Result<T>) -> Result<T, String> {
    r.map_err(|e| format!("{e} ({:?})", e.status()))
}

fn send(ctx: &ParentContext, cr: ChildRank, tag: i32, args: Vec<Argument>) -> Result<(), String> {
    halo(ctx.send(Payload::Object(ComputeObject::new(args)), 1, MpixType::ComputeObject, cr, tag, Comm::World))
}

fn take(ctx: &ParentContext, cr: ChildRank, tag: i32) -> Result<Vec<f64>, String> {
    let co = halo(ctx.recv(cr, tag))?;
    let v = halo(ctx.read_f64(&co, 0));
    ctx.release(&co);
    v
}

fn u64s(v: &[usize]) -> Argument {
    Argument::from_u64(&v.iter().map(|&x| x as u64).collect::<Vec<_>>())
}

fn case_args(c: &Case) -> Vec<Argument> {
    let f = Argument::from_f64;
    match (&c.inputs, c.kernel) {
        (Inputs::Dense(a, b), Kernel::Mmm) => vec![u64s(&[a.rows(), a.cols(), b.cols()]), f(a.data()), f(b.data())],
        (Inputs::Dense(a, b), _) => vec![u64s(&[a.rows(), a.cols()]), f(a.data()), f(b.data())],
        (Inputs::Sparse(a, b), _) => vec![
            u64s(&[a.rows(), a.cols(), b.cols(), a.nnz()]),
            u64s(a.row_ptr()),
            u64s(a.col_idx()),
            f(a.values()),
            f(b.data()),
        ],
        (Inputs::Vectors(x, y), _) => vec![f(x), f(y)],
        (Inputs::MatVec(a, x), _) => vec![u64s(&[a.rows(), a.cols()]), f(a.data()), f(x)],
        (Inputs::Jacobi(a, b, iters), _) => vec![u64s(&[a.rows(), *iters]), f(&[0.0]), f(a.data()), f(b)],
    }
}

/// Every kernel, both variants, called directly and through an agent of the
/// matching backend, against brute-force references.
fn kernel_correctness() -> Outcome {
    const CASES: usize = 100;
    let start = Instant::now();
    let naive = halo(bench_context("cpu_naive"))?;
    let opt = halo(bench_context("cpu_opt"))?;
    let mut checked = 0;
    for (i, &kernel) in Kernel::ALL.iter().enumerate() {
        let mut rng = StdRng::seed_from_u64(0xACCE_0000 + i as u64);
        let naive_cr = halo(naive.claim(kernel.name(), None, None))?;
        let opt_cr = halo(opt.claim(kernel.name(), None, None))?;
        for n in 0..CASES {
            let case = random_case(kernel, &mut rng, 12);
            let (want, scale) = case.oracle();
            let args = case_args(&case);
            send(&naive, naive_cr, 0, args.clone())?;
            send(&opt, opt_cr, 0, args)?;
            let results = [
                ("naive direct", case.run(Variant::Naive)),
                ("opt direct", case.run(Variant::Opt)),
                ("naive dispatched", take(&naive, naive_cr, 0)?),
                ("opt dispatched", take(&opt, opt_cr, 0)?),
            ];
            for (how, got) in &results {
                check_close(got, &want, &scale, REL).map_err(|e| format!("{} case {n} {how}: {e}", kernel.name()))?;
                checked += 1;
            }
        }
    }
    halo(naive.finalize())?;
    halo(opt.finalize())?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{checked} results from {} instances within {REL:e}", CASES * Kernel::ALL.len()))
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn without_backends(mut v: serde_json::Value) -> (serde_json::Value, Vec<String>) {
    let mut ids = Vec::new();
    if let Some(list) = v["platform_list"].as_array_mut() {
        for p in list {
            if let Some(b) = p.get_mut("backend") {
                ids.push(b.as_str().unwrap_or_default().to_string());
                *b = serde_json::Value::Null;
            }
        }
    }
    (v, ids)
}

/// The same host binary against two configurations that differ only in the
/// backend binding.
fn unified_control_flow() -> Outcome {
    let host = env!("CARGO_BIN_EXE_halo-host");
    let root = repo_root();
    let configs = [root.join("configs/naive.json"), root.join("configs/opt.json")];
    let parsed: Vec<_> = configs
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            serde_json::from_str::<serde_json::Value>(&text).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let (a, ids_a) = without_backends(parsed[0].clone());
    let (b, ids_b) = without_backends(parsed[1].clone());
    ensure(a == b, || "configurations differ beyond the backend binding".into())?;
    ensure(ids_a != ids_b, || "configurations bind the same backend".into())?;

    let mut outputs = Vec::new();
    for cfg in &configs {
        let out = Command::new(host).arg(cfg).output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), || format!("{}: {}", cfg.display(), String::from_utf8_lossy(&out.stderr)))?;
        let results: BTreeMap<String, Vec<f64>> = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
        outputs.push(results);
    }
    ensure(outputs[0].keys().eq(outputs[1].keys()), || "different function sets".into())?;
    ensure(outputs[0].len() == Kernel::ALL.len(), || format!("{} functions ran", outputs[0].len()))?;
    let mut values = 0;
    for (alias, x) in &outputs[0] {
        let y = &outputs[1][alias];
        ensure(x.len() == y.len(), || format!("{alias}: lengths {} and {}", x.len(), y.len()))?;
        for (i, (p, q)) in x.iter().zip(y).enumerate() {
            let bound = REL * p.abs().max(q.abs()).max(1.0);
            ensure((p - q).abs() <= bound, || format!("{alias}[{i}]: {p} vs {q}"))?;
        }
        values += x.len();
    }

    let src_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("src/bin/halo-host.rs");
    let src = std::fs::read_to_string(&src_path).map_err(|e| e.to_string())?.to_lowercase();
    let mut tokens: Vec<&str> = Backend::IDS.to_vec();
    tokens.extend(["naive", "backend", "variant", "cpuopt", "vagent"]);
    for t in tokens {
        ensure(!src.contains(t), || format!("host source names {t:?}"))?;
    }
    Ok(format!("{values} values equal across {ids_a:?} and {ids_b:?}; host source names no backend"))
}

/// Dispatched versus direct kernel time on cpu_opt at 64 MB.
fn portability() -> Outcome {
    let start = Instant::now();
    let ctx = halo(bench_context("cpu_opt"))?;
    let mut scores = Vec::new();
    let mut worst = (String::new(), f64::INFINITY);
    for k in Kernel::ALL {
        let r = halo(run_bench_in(&ctx, &BenchSpec::new(k.name(), "cpu_opt", 64 << 20).reps(41).warmups(1)))?;
        if r.portability_score < worst.1 {
            worst = (r.kernel.clone(), r.portability_score);
        }
        scores.push(format!("{} {:.3}", r.kernel, r.portability_score));
    }
    halo(ctx.finalize())?;
    let elapsed = start.elapsed();
    ensure(worst.1 >= 0.95, || format!("{} scored {:.3}: {}", worst.0, worst.1, scores.join(", ")))?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(scores.join(", "))
}

/// Median t1 of EWMM across working-set sizes.
fn overhead_invariance() -> Outcome {
    let ctx = halo(bench_context("cpu_opt"))?;
    let mut t1 = Vec::new();
    for mb in [1u64, 16, 256] {
        let r = halo(run_bench_in(&ctx, &BenchSpec::new("EWMM", "cpu_opt", mb << 20).reps(15).warmups(2)))?;
        t1.push((mb, r.median.t1));
    }
    halo(ctx.finalize())?;
    let lo = t1.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let hi = t1.iter().map(|x| x.1).fold(0.0, f64::max);
    let shown: Vec<String> = t1.iter().map(|(mb, t)| format!("{mb}MB {:.1}us", t * 1e6)).collect();
    let ratio = hi / lo;
    ensure(ratio < 2.0, || format!("max/min {ratio:.2} >= 2 ({})", shown.join(", ")))?;
    Ok(format!("max/min {ratio:.2} ({})", shown.join(", ")))
}

/// t1/t4 for MMM at dimension 1024 and 2048.
fn overhead_ratio_mmm() -> Outcome {
    let ctx = halo(bench_context("cpu_opt"))?;
    let mut shown = Vec::new();
    for dim in [1024u64, 2048] {
        let wss = 24 * dim * dim;
        let r = halo(run_bench_in(&ctx, &BenchSpec::new("MMM", "cpu_opt", wss).reps(5).warmups(1)))?;
        ensure(r.dims == vec![dim; 3], || format!("dims {:?}", r.dims))?;
        let pct = r.overhead_ratio;
        shown.push(format!("dim {dim} {pct:.4}%"));
        ensure(pct < 0.1, || format!("dim {dim}: t1/t4 = {pct:.4}%"))?;
    }
    halo(ctx.finalize())?;
    Ok(shown.join(", "))
}

/// The metrics against the published table entries, compared as printed.
fn metric_arithmetic() -> Outcome {
    let rows = [
        ("penalty MMM CPU", format!("{:.0}%", perf_penalty(3.04, 1.0)), "204%"),
        ("penalty MMM FPGA", format!("{:.0}%", perf_penalty(2465.79, 1.0)), "246479%"),
        ("score 20x slower", format!("{:.2}", portability_score(1.0, 20.0)), "0.05"),
        ("score equal", format!("{:.2}", portability_score(0.5, 0.5)), "1.00"),
        ("overhead SMMM", format!("{:.4}%", overhead_ratio(0.0019, 43.0)), "0.0044%"),
        ("overhead MMM", format!("{:.4}%", overhead_ratio(0.0019, 362.0)), "0.0005%"),
    ];
    for (what, got, want) in &rows {
        ensure(got == want, || format!("{what}: {got} != {want}"))?;
    }
    Ok(rows.iter().map(|r| r.2).collect::<Vec<_>>().join(", "))
}

/// A claim with no registered kernel runs the host callback.
fn failsafe_path() -> Outcome {
    let ctx = halo(bench_context("cpu_opt"))?;
    let missing = ctx.claim("HOST_ONLY_DOT", None, None);
    ensure(
        matches!(&missing, Err(e) if e.status() == StatusCode::ErrNoResource),
        || format!("claim without callback gave {missing:?}"),
    )?;
    let cr = halo(ctx.claim(
        "HOST_ONLY_DOT",
        Some(failsafe(|co| {
            let x = co.args[0].inline_f64().ok_or_else(|| HaloError::BadArgument("x".into()))?;
            let y = co.args[1].inline_f64().ok_or_else(|| HaloError::BadArgument("y".into()))?;
            let s = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
            Ok(ComputeObject::new(vec![Argument::from_f64(&[s])]))
        })),
        None,
    ))?;
    let mut rng = StdRng::seed_from_u64(7);
    for i in 0..20 {
        let case = random_case(Kernel::Vdp, &mut rng, 64);
        let (want, scale) = case.oracle();
        send(&ctx, cr, i, case_args(&case))?;
        let co = halo(ctx.recv(cr, i))?;
        ensure(co.status == StatusCode::FailsafeExecuted, || format!("status {:?}", co.status))?;
        let got = halo(ctx.read_f64(&co, 0))?;
        ctx.release(&co);
        check_close(&got, &want, &scale, REL)?;
    }
    halo(ctx.free(cr))?;
    halo(ctx.finalize())?;
    Ok("20 host-callback results equal the reference, status FAILSAFE_EXECUTED".into())
}

fn scalar_mmm(a: f64, b: f64) -> Vec<Argument> {
    vec![Argument::from_u64(&[1, 1, 1]), Argument::from_f64(&[a]), Argument::from_f64(&[b])]
}

fn fifo_and_tags() -> Outcome {
    let ctx = halo(bench_context("cpu_opt"))?;
    let cr = halo(ctx.claim("MMM", None, None))?;
    for i in 0..100 {
        send(&ctx, cr, 5, scalar_mmm(i as f64, 1.0))?;
    }
    for i in 0..100 {
        let got = take(&ctx, cr, 5)?;
        ensure(got == [i as f64], || format!("same-tag receive {i} got {got:?}"))?;
    }
    for t in 0..10 {
        send(&ctx, cr, 100 + t, scalar_mmm(t as f64, 3.0))?;
    }
    for t in [7, 2, 9, 0, 5, 1, 8, 3, 6, 4] {
        let got = take(&ctx, cr, 100 + t)?;
        ensure(got == [3.0 * t as f64], || format!("tag {} got {got:?}", 100 + t))?;
    }
    halo(ctx.free(cr))?;

    let report = halo(stress(&ctx, 8, 100, Variant::Opt))?;
    halo(ctx.finalize())?;
    ensure(report.passed(), || format!("{report:?}"))?;
    ensure(report.elapsed_s < 60.0, || format!("threads took {:.1}s", report.elapsed_s))?;
    Ok(format!(
        "100 in order, 10 tags out of order, 8x100 threads: {} completed, 0 lost, 0 duplicated in {:.2}s",
        report.completed, report.elapsed_s
    ))
}

fn test_options() -> InitOptions {
    InitOptions {
        recv_timeout: Duration::from_secs(60),
        ..InitOptions::from_env()
    }
}

fn round_robin() -> Outcome {
    let cfg = parse_config(
        br#"{"host_list":[],
        "func_list":[{"func_alias":"MMM","sw_fid":"12345","func_repl":"3","platform_id":"rr_scat"}],
        "platform_list":[{"backend":"sim_accel","replicas":3}]}"#,
    )
    .map_err(|e| e.to_string())?;
    let ctx = halo(ParentContext::initialize_with(cfg, test_options()))?;
    ensure(ctx.agents().len() == 3, || format!("{} agents", ctx.agents().len()))?;
    let cr = halo(ctx.claim("MMM", None, None))?;
    for i in 0..300 {
        send(&ctx, cr, 0, scalar_mmm(i as f64, 2.0))?;
    }
    for i in 0..300 {
        let got = take(&ctx, cr, 0)?;
        ensure(got == [2.0 * i as f64], || format!("result {i} got {got:?}"))?;
    }
    let served: Vec<u64> = halo(ctx.agent_metrics())?.iter().map(|(_, m)| m.executions).collect();
    halo(ctx.finalize())?;
    ensure(served == [100, 100, 100], || format!("replicas served {served:?}"))?;
    Ok(format!("replicas served {served:?}"))
}

fn protocol_hygiene() -> Outcome {
    const TOTAL: usize = 10_000;
    const WINDOW: usize = 256;
    let ctx = halo(bench_context("cpu_opt"))?;
    let baseline = ctx.store_stats().used_bytes;
    let names = ["MMM", "VDP", "EWMM"];
    let crs = names
        .iter()
        .map(|n| halo(ctx.claim(n, None, None)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut expected: HashMap<(usize, i32), VecDeque<f64>> = HashMap::new();
    let mut in_flight = VecDeque::new();
    let check = |ctx: &ParentContext, w: usize, t: i32, expected: &mut HashMap<(usize, i32), VecDeque<f64>>| {
        let got = take(ctx, crs[w], t)?;
        let want = expected.get_mut(&(w, t)).and_then(VecDeque::pop_front);
        ensure(Some(got[0]) == want, || format!("{} tag {t}: got {got:?}, want {want:?}", names[w]))
    };
    for i in 0..TOTAL {
        let w = i % 3;
        let tag = (i % 17) as i32;
        let v = i as f64;
        let (args, want) = match w {
            0 => (scalar_mmm(v, 2.0), 2.0 * v),
            1 => (vec![Argument::from_f64(&[v, 1.0]), Argument::from_f64(&[1.0, 1.0])], v + 1.0),
            _ => (
                vec![Argument::from_u64(&[1, 2]), Argument::from_f64(&[v, 1.0]), Argument::from_f64(&[3.0, 3.0])],
                3.0 * v,
            ),
        };
        send(&ctx, crs[w], tag, args)?;
        expected.entry((w, tag)).or_default().push_back(want);
        in_flight.push_back((w, tag));
        if in_flight.len() >= WINDOW {
            let (w, t) = in_flight.pop_front().expect("window is full");
            check(&ctx, w, t, &mut expected)?;
        }
    }
    while let Some((w, t)) = in_flight.pop_front() {
        check(&ctx, w, t, &mut expected)?;
    }
    ensure(expected.values().all(VecDeque::is_empty), || "results missing".into())?;
    for cr in crs {
        halo(ctx.free(cr))?;
    }
    let report = halo(ctx.finalize())?;
    let p = report.protocol;
    ensure(p.requests_sent >= TOTAL as u64, || format!("only {} requests", p.requests_sent))?;
    ensure(p.requests_sent == p.responses_received, || format!("{p:?}"))?;
    ensure((p.unmatched, p.pending, p.timed_out) == (0, 0, 0), || format!("{p:?}"))?;
    let after = ctx.store_stats().used_bytes;
    ensure(report.leaked_bytes == 0 && after == baseline, || {
        format!("store bytes {baseline} before, {after} after, {} leaked", report.leaked_bytes)
    })?;
    Ok(format!(
        "{} requests, {} responses, 0 unmatched; store back to {baseline} bytes",
        p.requests_sent, p.responses_received
    ))
}
