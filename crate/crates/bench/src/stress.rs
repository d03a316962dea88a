//! Many threads driving one context at once.

use std::time::{Duration, Instant};

use halo_kernels::{Kernel, Variant};
use halo_runtime::{Comm, ComputeObject, HaloError, MpixType, ParentContext, Payload, Result, ANY_TAG};
use serde::Serialize;

use crate::workload::Input;

const KERNELS: [Kernel; 4] = [Kernel::Mmm, Kernel::Vdp, Kernel::Ewmm, Kernel::Mvm];
const WINDOW: usize = 4;
const TAGS: i32 = 3;

#[derive(Debug, Clone, Serialize)]
pub struct StressReport {
    pub threads: usize,
    pub ops_per_thread: usize,
    pub completed: u64,
    /// Results whose values differ from a direct call.
    pub wrong: u64,
    /// Sends without a result before the receive timeout.
    pub lost: u64,
    /// Results left over after every send was matched.
    pub duplicated: u64,
    pub elapsed_s: f64,
}

impl StressReport {
    pub fn passed(&self) -> bool {
        self.wrong == 0 && self.lost == 0 && self.duplicated == 0
            && self.completed == (self.threads * self.ops_per_thread) as u64
    }
}

#[derive(Default)]
struct Tally {
    completed: u64,
    wrong: u64,
    lost: u64,
    duplicated: u64,
}

/// `threads` threads each claim their own rank and run `ops` small kernel
/// invocations, keeping a few in flight over a handful of tags.
pub fn stress(ctx: &ParentContext, threads: usize, ops: usize, variant: Variant) -> Result<StressReport> {
    let start = Instant::now();
    let tallies = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| s.spawn(move || worker(ctx, t, ops, variant)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(HaloError::KernelFault("stress worker panicked".into()))))
            .collect::<Result<Vec<Tally>>>()
    })?;
    let total = tallies.iter().fold(Tally::default(), |a, b| Tally {
        completed: a.completed + b.completed,
        wrong: a.wrong + b.wrong,
        lost: a.lost + b.lost,
        duplicated: a.duplicated + b.duplicated,
    });
    Ok(StressReport {
        threads,
        ops_per_thread: ops,
        completed: total.completed,
        wrong: total.wrong,
        lost: total.lost,
        duplicated: total.duplicated,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

fn worker(ctx: &ParentContext, thread: usize, ops: usize, variant: Variant) -> Result<Tally> {
    let kernel = KERNELS[thread % KERNELS.len()];
    let cr = ctx.claim(kernel.name(), None, None)?;
    let mut tally = Tally::default();
    let mut in_flight = std::collections::VecDeque::new();
    for op in 0..ops {
        let input = Input::generate(kernel, 2048, (thread * ops + op) as u64);
        let want = input.call(variant)?;
        let tag = (op as i32) % TAGS;
        ctx.send(
            Payload::Object(ComputeObject::new(input.arguments())),
            1,
            MpixType::ComputeObject,
            cr,
            tag,
            Comm::World,
        )?;
        in_flight.push_back((tag, want));
        if in_flight.len() >= WINDOW {
            let (tag, want) = in_flight.pop_front().expect("window is full");
            receive(ctx, cr, tag, &want, &mut tally);
        }
    }
    while let Some((tag, want)) = in_flight.pop_front() {
        receive(ctx, cr, tag, &want, &mut tally);
    }
    while let Ok(extra) = ctx.recv_timed(cr, ANY_TAG, Some(Duration::from_millis(10))) {
        tally.duplicated += 1;
        ctx.release(&extra.object);
    }
    ctx.free(cr)?;
    Ok(tally)
}

fn receive(ctx: &ParentContext, cr: halo_runtime::ChildRank, tag: i32, want: &[f64], tally: &mut Tally) {
    match ctx.recv(cr, tag) {
        Ok(co) => {
            tally.completed += 1;
            if ctx.read_f64(&co, 0).ok().as_deref() != Some(want) {
                tally.wrong += 1;
            }
            ctx.release(&co);
        }
        Err(HaloError::Timeout) => tally.lost += 1,
        Err(e) => {
            tracing::warn!(error = %e, "stress invocation failed");
            tally.wrong += 1;
        }
    }
}
