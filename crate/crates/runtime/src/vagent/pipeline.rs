//! The virtualization agent: three threads connected by SPSC queues.
//!
//! 1. network manager: receives and decodes envelopes, attaches the sender's
//!    content store and opens a transaction chain;
//! 2. system services: answers manifest, metrics and claim queries;
//! 3. device manager: stages arguments, runs kernels, writes results back.

use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use halo_core::ipc::{Address, ContentStore, Endpoint, Envelope, MsgType, Sender};
use halo_core::object::ArgPayload;
use halo_core::spsc::{self, Consumer, Producer, Waiter};
use halo_core::{Argument, ComputeObject, HaloError, KernelAttributes, Result, Scalar, StatusCode};
use serde::{Deserialize, Serialize};

use super::backend::Backend;
use super::library::Staged;
use super::package::KernelManifest;
use super::repository::{KernelRepository, RegisteredKernel};

const STAGE_QUEUE: usize = 1024;
const CHAIN_LOG: usize = 4096;

/// Reply address of parent rank `rank`, next to the agent's own endpoint.
pub fn parent_address(agent: &Address, rank: u32) -> Address {
    agent.sibling(&format!("halo-pr-{rank}"))
}

#[derive(Debug, Default)]
pub struct AgentMetrics {
    requests: AtomicU64,
    responses: AtomicU64,
    executions: AtomicU64,
    faults: AtomicU64,
    errors: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    /// Request envelopes decoded.
    pub requests: u64,
    /// Response envelopes sent.
    pub responses: u64,
    /// Kernel invocations.
    pub executions: u64,
    /// Kernel invocations that trapped.
    pub faults: u64,
    /// Requests answered with an error status, plus undecodable frames.
    pub errors: u64,
}

impl AgentMetrics {
    pub fn snapshot(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            requests: self.requests.load(Ordering::Relaxed),
            responses: self.responses.load(Ordering::Relaxed),
            executions: self.executions.load(Ordering::Relaxed),
            faults: self.faults.load(Ordering::Relaxed),
            errors: self.errors.load(Ordering::Relaxed),
        }
    }
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

/// Stage timestamps of one request, as offsets from its arrival.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionChain {
    pub transaction_id: u64,
    pub app_id: u64,
    pub msg_type: MsgType,
    pub status: StatusCode,
    pub decoded: Duration,
    pub serviced: Option<Duration>,
    pub executed: Option<Duration>,
    pub replied: Option<Duration>,
}

struct ChainClock {
    received: Instant,
    chain: TransactionChain,
}

impl ChainClock {
    fn open(env: &Envelope, received: Instant) -> ChainClock {
        ChainClock {
            received,
            chain: TransactionChain {
                transaction_id: env.transaction_id,
                app_id: env.app_id,
                msg_type: env.msg_type,
                status: StatusCode::Ok,
                decoded: received.elapsed(),
                serviced: None,
                executed: None,
                replied: None,
            },
        }
    }

    fn serviced(&mut self) {
        self.chain.serviced = Some(self.received.elapsed());
    }

    fn executed(&mut self) {
        self.chain.executed = Some(self.received.elapsed());
    }
}

#[derive(Debug, Default)]
pub struct ChainLog {
    log: Mutex<VecDeque<TransactionChain>>,
}

impl ChainLog {
    fn push(&self, c: TransactionChain) {
        let mut l = self.log.lock().unwrap();
        if l.len() == CHAIN_LOG {
            l.pop_front();
        }
        l.push_back(c);
    }

    /// The most recent chains, oldest first.
    pub fn recent(&self) -> Vec<TransactionChain> {
        self.log.lock().unwrap().iter().cloned().collect()
    }
}

struct Work {
    env: Envelope,
    store: Option<Arc<ContentStore>>,
    clock: ChainClock,
}

enum Item {
    Work(Work),
    Stop,
}

struct Shared {
    address: Address,
    backend: Backend,
    repository: KernelRepository,
    metrics: AgentMetrics,
    chains: ChainLog,
}

/// Sends replies to parent ranks, caching one sender per rank.
struct Replier {
    shared: Arc<Shared>,
    senders: HashMap<u32, Sender>,
}

impl Replier {
    fn new(shared: Arc<Shared>) -> Replier {
        Replier {
            shared,
            senders: HashMap::new(),
        }
    }

    fn send(&mut self, env: &Envelope) {
        let addr = parent_address(&self.shared.address, env.dst);
        let sender = match self.senders.get(&env.dst) {
            Some(s) => s.clone(),
            None => match Sender::connect(&addr) {
                Ok(s) => {
                    self.senders.insert(env.dst, s.clone());
                    s
                }
                Err(e) => {
                    tracing::warn!(%addr, error = %e, "dropping reply: parent rank unreachable");
                    return;
                }
            },
        };
        match sender.send(env) {
            Ok(()) => bump(&self.shared.metrics.responses),
            Err(e) => {
                tracing::warn!(%addr, error = %e, "dropping reply");
                self.senders.remove(&env.dst);
            }
        }
    }

    /// Replies and closes the chain.
    fn finish(&mut self, mut clock: ChainClock, env: Envelope) {
        if !env.status.is_success() {
            bump(&self.shared.metrics.errors);
        }
        self.send(&env);
        clock.chain.status = env.status;
        clock.chain.replied = Some(clock.received.elapsed());
        self.shared.chains.push(clock.chain);
    }
}

/// Reads a request body and releases it.
fn take_body<T>(w: &Work, f: impl FnOnce(&[u8]) -> Result<T>) -> Result<T> {
    let store = w
        .store
        .as_ref()
        .ok_or_else(|| HaloError::NoResource(format!("content store of app {:#x} unavailable", w.env.app_id)))?;
    if w.env.body == 0 {
        return Err(HaloError::Serialization(format!("{:?} without a body", w.env.msg_type)));
    }
    let out = {
        let slice = store.get(w.env.body)?;
        if slice.len() != w.env.body_len as usize {
            Err(HaloError::Serialization(format!(
                "body is {} bytes, header says {}",
                slice.len(),
                w.env.body_len
            )))
        } else {
            f(&slice)
        }
    };
    store.release(w.env.body)?;
    out
}

fn put_body(store: &Option<Arc<ContentStore>>, env: Envelope, bytes: &[u8]) -> Envelope {
    match store.as_ref().map(|s| s.put(bytes)) {
        Some(Ok(h)) => env.with_body(h, bytes.len()),
        Some(Err(e)) => Envelope {
            status: e.status(),
            ..env
        },
        None => Envelope {
            status: StatusCode::ErrNoResource,
            ..env
        },
    }
}

fn u64_at(b: &[u8], i: usize) -> Result<u64> {
    b.get(i * 8..i * 8 + 8)
        .map(|s| u64::from_le_bytes(s.try_into().unwrap()))
        .ok_or_else(|| HaloError::Serialization("body too short".into()))
}

/// A running agent. Dropping the handle shuts it down.
pub struct AgentHandle {
    shared: Arc<Shared>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl AgentHandle {
    /// Binds `address` and starts the three stages.
    pub fn spawn(backend: Backend, address: Address, repository: KernelRepository) -> Result<AgentHandle> {
        let endpoint = Endpoint::bind(&address)?;
        let shared = Arc::new(Shared {
            address,
            backend,
            repository,
            metrics: AgentMetrics::default(),
            chains: ChainLog::default(),
        });
        let (to2, from1) = spsc::channel(STAGE_QUEUE, Waiter::new());
        let (to3, from2) = spsc::channel(STAGE_QUEUE, Waiter::new());
        let name = |stage: &str| format!("vagent-{}-{stage}", shared.backend.id());
        let mut threads = Vec::new();
        let s = Arc::clone(&shared);
        threads.push(
            std::thread::Builder::new()
                .name(name("net"))
                .spawn(move || network_manager(s, endpoint, to2))?,
        );
        let s = Arc::clone(&shared);
        threads.push(
            std::thread::Builder::new()
                .name(name("sys"))
                .spawn(move || system_services(s, from1, to3))?,
        );
        let s = Arc::clone(&shared);
        threads.push(
            std::thread::Builder::new()
                .name(name("dev"))
                .spawn(move || DeviceManager::new(s).run(from2))?,
        );
        Ok(AgentHandle {
            shared,
            threads: Mutex::new(threads),
        })
    }

    pub fn address(&self) -> &Address {
        &self.shared.address
    }

    pub fn backend(&self) -> &Backend {
        &self.shared.backend
    }

    pub fn manifests(&self) -> Vec<KernelManifest> {
        self.shared.repository.manifests()
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        self.shared.metrics.snapshot()
    }

    pub fn chains(&self) -> Vec<TransactionChain> {
        self.shared.chains.recent()
    }

    /// Asks the agent to stop; returns once all stages have exited.
    pub fn shutdown(&self) {
        let mut threads = self.threads.lock().unwrap();
        if threads.is_empty() {
            return;
        }
        if let Ok(s) = Sender::connect(&self.shared.address) {
            let _ = s.send(&Envelope::new(MsgType::Shutdown, 0, 0));
        }
        for t in threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Blocks until the agent stops (after a SHUTDOWN request).
    pub fn join(&self) {
        let threads: Vec<_> = self.threads.lock().unwrap().drain(..).collect();
        for t in threads {
            let _ = t.join();
        }
    }
}

impl Drop for AgentHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn network_manager(shared: Arc<Shared>, mut endpoint: Endpoint, out: Producer<Item>) {
    let mut stores: HashMap<u64, Arc<ContentStore>> = HashMap::new();
    let mut errors = Replier::new(Arc::clone(&shared));
    loop {
        let frame = match endpoint.recv_frame(None) {
            Ok(Some(f)) => f,
            Ok(None) => continue,
            Err(e) => {
                tracing::error!(error = %e, "agent endpoint failed");
                break;
            }
        };
        let received = Instant::now();
        let env = match Envelope::decode(&frame) {
            Ok(env) => env,
            Err(e) => {
                bump(&shared.metrics.errors);
                reject_frame(&mut errors, &frame, &e);
                continue;
            }
        };
        if env.msg_type == MsgType::Shutdown {
            break;
        }
        if !env.msg_type.is_request() {
            tracing::debug!(msg = ?env.msg_type, "ignoring non-request envelope");
            continue;
        }
        bump(&shared.metrics.requests);
        let store = if env.app_id == 0 {
            None
        } else {
            match stores.get(&env.app_id) {
                Some(s) => Some(Arc::clone(s)),
                None => match ContentStore::attach(env.app_id) {
                    Ok(s) => {
                        stores.insert(env.app_id, Arc::clone(&s));
                        Some(s)
                    }
                    Err(e) => {
                        tracing::warn!(app = env.app_id, error = %e, "cannot attach content store");
                        None
                    }
                },
            }
        };
        // an application detaching: drop the cached mapping once in flight work holds its own
        if env.msg_type == MsgType::FreeReq {
            if let Some(s) = &store {
                let detaching = s.get(env.body).map(|b| b.len() >= 8 && b[..8] == [0; 8]).unwrap_or(false);
                if detaching {
                    stores.remove(&env.app_id);
                }
            }
        }
        let clock = ChainClock::open(&env, received);
        out.push_blocking(Item::Work(Work { env, store, clock }));
    }
    out.push_blocking(Item::Stop);
}

/// Best-effort ERROR_RSP for a frame that did not decode.
fn reject_frame(replier: &mut Replier, frame: &[u8], err: &HaloError) {
    tracing::warn!(error = %err, len = frame.len(), "malformed frame");
    if frame.len() < 32 {
        return;
    }
    let txid = u64::from_le_bytes(frame[8..16].try_into().unwrap());
    let app_id = u64::from_le_bytes(frame[16..24].try_into().unwrap());
    let src = u32::from_le_bytes(frame[24..28].try_into().unwrap());
    if !parent_address(&replier.shared.address, src).is_live() {
        return;
    }
    let env = Envelope {
        status: StatusCode::ErrSerialization,
        dst: src,
        ..Envelope::new(MsgType::ErrorRsp, txid, app_id)
    };
    replier.send(&env);
}

fn system_services(shared: Arc<Shared>, input: Consumer<Item>, out: Producer<Item>) {
    let mut replier = Replier::new(Arc::clone(&shared));
    while let Some(item) = input.pop_wait(None) {
        let mut w = match item {
            Item::Stop => break,
            Item::Work(w) => w,
        };
        w.clock.serviced();
        let rsp = match w.env.msg_type {
            MsgType::ManifestQuery => {
                let body = serde_json::json!({
                    "backend": shared.backend.id(),
                    "vid": shared.backend.vid(),
                    "pid": shared.backend.pid(),
                    "kernels": shared.repository.manifests(),
                });
                put_body(&w.store, w.env.reply(StatusCode::Ok), body.to_string().as_bytes())
            }
            MsgType::MetricsQuery => {
                let body = serde_json::json!({
                    "backend": shared.backend.id(),
                    "metrics": shared.metrics.snapshot(),
                });
                put_body(&w.store, w.env.reply(StatusCode::Ok), body.to_string().as_bytes())
            }
            MsgType::ClaimReq => match take_body(&w, KernelAttributes::decode) {
                Ok(attrs) => match shared.repository.lookup(&attrs) {
                    Some(k) => {
                        let body = serde_json::json!({
                            "backend": shared.backend.id(),
                            "manifest": k.manifest,
                        });
                        put_body(&w.store, w.env.reply(StatusCode::Ok), body.to_string().as_bytes())
                    }
                    None => w.env.reply(StatusCode::ErrNoResource),
                },
                Err(e) => w.env.reply(e.status()),
            },
            _ => {
                out.push_blocking(Item::Work(w));
                continue;
            }
        };
        replier.finish(w.clock, rsp);
    }
    out.push_blocking(Item::Stop);
}

struct DeviceManager {
    shared: Arc<Shared>,
    replier: Replier,
    /// Internal buffers retained per (application, function child rank).
    buffers: HashMap<(u64, u64), Vec<u64>>,
}

/// Outcome of one kernel execution with its offload and kernel times.
struct Executed {
    result: Result<Vec<Argument>>,
    t2: Duration,
    t3: Duration,
}

impl DeviceManager {
    fn new(shared: Arc<Shared>) -> DeviceManager {
        DeviceManager {
            replier: Replier::new(Arc::clone(&shared)),
            shared,
            buffers: HashMap::new(),
        }
    }

    fn run(mut self, input: Consumer<Item>) {
        while let Some(item) = input.pop_wait(None) {
            let w = match item {
                Item::Stop => break,
                Item::Work(w) => w,
            };
            match w.env.msg_type {
                MsgType::ExecReq => self.exec(w),
                MsgType::BufCreateReq => self.buf_create(w),
                MsgType::FreeReq => self.free(w),
                other => {
                    tracing::warn!(msg = ?other, "unexpected request at device stage");
                    let rsp = w.env.reply(StatusCode::ErrBadArgument);
                    self.replier.finish(w.clock, rsp);
                }
            }
        }
        // release whatever is still retained
        for ((app, _), handles) in self.buffers.drain() {
            if let Ok(store) = ContentStore::attach(app) {
                for h in handles {
                    let _ = store.release(h);
                }
            }
        }
    }

    fn buf_create(&mut self, w: Work) {
        let r = take_body(&w, |b| Ok((u64_at(b, 0)?, u64_at(b, 1)?))).and_then(|(cr, handle)| {
            let store = w.store.as_ref().expect("body was read from it");
            store.retain(handle)?;
            self.buffers.entry((w.env.app_id, cr)).or_default().push(handle);
            Ok(())
        });
        let rsp = w.env.reply(r.map(|_| StatusCode::Ok).unwrap_or_else(|e| e.status()));
        self.replier.finish(w.clock, rsp);
    }

    fn free(&mut self, w: Work) {
        let r = take_body(&w, |b| u64_at(b, 0)).map(|cr| {
            let app = w.env.app_id;
            let keys: Vec<_> = self
                .buffers
                .keys()
                .filter(|(a, c)| *a == app && (cr == 0 || *c == cr))
                .copied()
                .collect();
            let store = w.store.as_ref().expect("body was read from it");
            for k in keys {
                for h in self.buffers.remove(&k).unwrap_or_default() {
                    let _ = store.release(h);
                }
            }
        });
        let rsp = w.env.reply(r.map(|_| StatusCode::Ok).unwrap_or_else(|e| e.status()));
        self.replier.finish(w.clock, rsp);
    }

    fn exec(&mut self, mut w: Work) {
        let decoded = take_body(&w, |b| {
            let cr = u64_at(b, 0)?;
            Ok((cr, ComputeObject::decode(&b[8..])?))
        });
        let (cr, co) = match decoded {
            Ok(v) => v,
            Err(e) => {
                let rsp = w.env.reply(e.status());
                self.replier.finish(w.clock, rsp);
                return;
            }
        };
        let store = w.store.clone().expect("body was read from it");
        let executed = match self.shared.repository.by_fid(co.function_id) {
            Some(k) => self.execute(&k, &store, co.args),
            None => Executed {
                result: Err(HaloError::NoResource(format!(
                    "no kernel with sw_fid {:#x} on {}",
                    co.function_id,
                    self.shared.backend.id()
                ))),
                t2: Duration::ZERO,
                t3: Duration::ZERO,
            },
        };
        w.clock.executed();
        let (status, args) = match executed.result {
            Ok(args) => (StatusCode::Ok, args),
            Err(e) => {
                tracing::debug!(error = %e, "execution failed");
                (e.status(), Vec::new())
            }
        };
        let result = ComputeObject {
            function_id: co.function_id,
            args,
            tag: co.tag,
            status,
            app_id: co.app_id,
        };
        let mut body = Vec::with_capacity(24 + result.encoded_len());
        body.extend_from_slice(&cr.to_le_bytes());
        body.extend_from_slice(&(executed.t2.as_nanos() as u64).to_le_bytes());
        body.extend_from_slice(&(executed.t3.as_nanos() as u64).to_le_bytes());
        result.encode_into(&mut body);
        let rsp = put_body(&w.store, w.env.reply(status), &body);
        self.replier.finish(w.clock, rsp);
    }

    fn execute(&self, kernel: &RegisteredKernel, store: &Arc<ContentStore>, args: Vec<Argument>) -> Executed {
        let backend = &self.shared.backend;
        let t2_start = Instant::now();
        let staged = match plan_and_stage(kernel, store, args) {
            Ok(s) => s,
            Err(e) => {
                return Executed {
                    result: Err(e),
                    t2: t2_start.elapsed(),
                    t3: Duration::ZERO,
                }
            }
        };
        let (staged, out_dest) = staged;
        if !backend.sim_t2.is_zero() {
            std::thread::sleep(backend.sim_t2);
        }
        let staging = t2_start.elapsed();

        let t3_start = Instant::now();
        bump(&self.shared.metrics.executions);
        let outcome = catch_unwind(AssertUnwindSafe(|| (kernel.entry)(&staged)));
        if !backend.sim_t3.is_zero() {
            std::thread::sleep(backend.sim_t3);
        }
        let t3 = t3_start.elapsed();

        let copy_start = Instant::now();
        let result = match outcome {
            Ok(Ok(outputs)) => write_outputs(store, outputs, out_dest),
            Ok(Err(e)) => Err(e),
            Err(panic) => {
                bump(&self.shared.metrics.faults);
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "kernel panicked".into());
                Err(HaloError::KernelFault(msg))
            }
        };
        drop(staged);
        Executed {
            result,
            t2: staging + copy_start.elapsed(),
            t3,
        }
    }
}

/// Checks arguments against the kernel signature and copies them into the
/// backend's working memory. A trailing internal-buffer argument beyond the
/// signature names the output destination.
fn plan_and_stage(
    kernel: &RegisteredKernel,
    store: &Arc<ContentStore>,
    mut args: Vec<Argument>,
) -> Result<(Vec<Staged>, Option<u64>)> {
    let sig = &kernel.signature;
    let mut out_dest = None;
    if args.len() == sig.len() + 1 {
        if let Some(ArgPayload::Internal(h)) = args.last().map(|a| a.payload().clone()) {
            out_dest = Some(h);
            args.pop();
        }
    }
    let packed = args.len() == 1 && sig.len() > 1 && kernel.split_single_input;
    if !packed && args.len() != sig.len() {
        return Err(HaloError::BadArgument(format!(
            "{} takes {} arguments, got {}",
            kernel.manifest.name,
            sig.len(),
            args.len()
        )));
    }
    for (i, (a, want)) in args.iter().zip(sig.iter()).enumerate() {
        if a.scalar() != *want {
            return Err(HaloError::BadArgument(format!(
                "{} argument {i}: expected {}, got {}",
                kernel.manifest.name,
                want.name(),
                a.scalar().name()
            )));
        }
    }
    let mut staged = args.iter().map(|a| stage(store, a)).collect::<Result<Vec<_>>>()?;
    if packed {
        staged = staged.pop().expect("one packed argument").split(sig.len())?;
    }
    Ok((staged, out_dest))
}

fn stage(store: &Arc<ContentStore>, a: &Argument) -> Result<Staged> {
    let scalar = a.scalar();
    match a.payload() {
        ArgPayload::Inline(b) => Ok(Staged::from_bytes(scalar, b)),
        ArgPayload::External {
            region_id,
            offset,
            length,
        } => {
            let s = store.get(*region_id)?;
            let end = offset
                .checked_add(*length)
                .filter(|&e| e <= s.len() as u64)
                .ok_or_else(|| {
                    HaloError::BadArgument(format!(
                        "window {offset}+{length} exceeds region {region_id:#x} of {} bytes",
                        s.len()
                    ))
                })?;
            Ok(Staged::from_bytes(scalar, &s[*offset as usize..end as usize]))
        }
        ArgPayload::Internal(h) => {
            let s = store.get(*h)?;
            let need = a.byte_len() as usize;
            if need > s.len() {
                return Err(HaloError::BadArgument(format!(
                    "internal buffer {h:#x} holds {} bytes, {need} requested",
                    s.len()
                )));
            }
            Ok(Staged::from_bytes(scalar, &s[..need]))
        }
    }
}

fn write_outputs(store: &Arc<ContentStore>, outputs: Vec<Vec<f64>>, out_dest: Option<u64>) -> Result<Vec<Argument>> {
    let mut outputs = outputs.into_iter();
    let mut args = Vec::new();
    if let Some(h) = out_dest {
        let first = outputs
            .next()
            .ok_or_else(|| HaloError::KernelFault("kernel produced no output".into()))?;
        let bytes: &[u8] = bytemuck::cast_slice(&first);
        // SAFETY: internal buffers are written only by the agent serving
        // their child rank, one request at a time.
        let mut dst = unsafe { store.get_mut(h)? };
        if bytes.len() > dst.len() {
            return Err(HaloError::BadArgument(format!(
                "output of {} bytes does not fit internal buffer of {} bytes",
                bytes.len(),
                dst.len()
            )));
        }
        dst[..bytes.len()].copy_from_slice(bytes);
        args.push(Argument::internal(Scalar::F64, h, first.len() as u64)?);
    }
    for o in outputs {
        let bytes: &[u8] = bytemuck::cast_slice(&o);
        let h = store.put(bytes)?;
        args.push(Argument::external(Scalar::F64, h, 0, bytes.len() as u64)?);
    }
    Ok(args)
}
