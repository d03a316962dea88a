//! Benchmark harness for the HALO runtime.
//!
//! [`run_bench`] times kernel invocations dispatched through a
//! [`ParentContext`](halo_runtime::ParentContext) and splits each round trip
//! into framework overhead (t1), offload (t2) and kernel (t3) time, next to a
//! direct call of the same kernel. [`metrics`] turns the medians into the
//! performance penalty, portability score and overhead ratio.

pub mod harness;
pub mod metrics;
pub mod report;
pub mod stress;
pub mod workload;

pub use harness::{bench_config, bench_context, run_bench, run_bench_in, BenchReport, BenchSpec};
pub use metrics::{overhead_ratio, perf_penalty, portability_score};
pub use report::{emit_report, Format};
pub use stress::{stress, StressReport};
pub use workload::Input;

/// Parses a byte count with an optional `KB`/`MB`/`GB` (or `KiB`/`MiB`/`GiB`)
/// suffix; all suffixes are binary multiples.
pub fn parse_bytes(s: &str) -> Option<u64> {
    let t = s.trim();
    let split = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let n: u64 = num.parse().ok()?;
    let mult = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" | "kib" => 1 << 10,
        "m" | "mb" | "mib" => 1 << 20,
        "g" | "gb" | "gib" => 1 << 30,
        _ => return None,
    };
    n.checked_mul(mult)
}
