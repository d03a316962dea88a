//! The application-facing interface: one `ParentContext` per parent rank.

use std::collections::{HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam::channel as oneshot;
use halo_core::ipc::{Address, ContentStore, Endpoint, Envelope, MsgType, Sender, StoreSliceMut, StoreStats};
use halo_core::object::ArgPayload;
use halo_core::spsc::{self, Waiter};
use halo_core::{
    Argument, ChildRank, ComputeObject, HaloConfig, HaloError, KernelAttributes, MpixType, ParentRank, Result,
    Scalar, StatusCode,
};
use serde::Deserialize;

use super::launch::{self, InitOptions, LaunchedAgent, Transport};
use super::mailbox::{Delivery, Mailbox};
use super::proactor::{
    ControlReply, Interface, Proactor, ProtocolCounters, ProtocolStats, Submission, Thread1,
};
use super::rr::RoundRobin;
use crate::vagent::{parent_address, KernelManifest, MetricsSnapshot};

const QUEUE_DEPTH: usize = 4096;

/// Host-side replacement used when no registered kernel matches a claim.
pub type Failsafe = Arc<dyn Fn(&ComputeObject) -> Result<ComputeObject> + Send + Sync>;

/// Wraps a closure as a [`Failsafe`].
pub fn failsafe<F>(f: F) -> Failsafe
where
    F: Fn(&ComputeObject) -> Result<ComputeObject> + Send + Sync + 'static,
{
    Arc::new(f)
}

/// Communicator argument of send/recv. Only the default world communicator
/// is served; legacy MPI communicators belong to a route not provided here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Comm {
    #[default]
    World,
    Mpi(i64),
}

/// What `send` transmits.
pub enum Payload<'a> {
    Object(ComputeObject),
    /// A single raw buffer, copied inline.
    Raw(&'a [u8]),
    /// A single region from [`ParentContext::alloc_mem`], passed by handle.
    Region(&'a MemRegion),
}

/// Content-store memory owned by the application. Arguments built from it
/// travel by handle.
pub struct MemRegion {
    handle: u64,
    app_id: u64,
    view: StoreSliceMut,
}

impl MemRegion {
    pub fn handle(&self) -> u64 {
        self.handle
    }

    pub fn len(&self) -> usize {
        self.view.len()
    }

    pub fn is_empty(&self) -> bool {
        self.view.is_empty()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.view
    }

    pub fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.view
    }

    pub fn as_f64_mut(&mut self) -> Result<&mut [f64]> {
        self.view.as_f64_mut()
    }

    /// Copies `values` to the start of the region.
    pub fn write_f64(&mut self, values: &[f64]) -> Result<()> {
        self.write_at(0, bytemuck::cast_slice(values))
    }

    pub fn write_at(&mut self, offset: usize, bytes: &[u8]) -> Result<()> {
        let end = offset
            .checked_add(bytes.len())
            .filter(|&e| e <= self.len())
            .ok_or_else(|| HaloError::BadArgument(format!("{} bytes at {offset} overflow the region", bytes.len())))?;
        self.view[offset..end].copy_from_slice(bytes);
        Ok(())
    }

    /// The whole region as one argument of `scalar` elements.
    pub fn arg(&self, scalar: Scalar) -> Result<Argument> {
        self.slice_arg(scalar, 0, self.len() as u64)
    }

    pub fn arg_f64(&self) -> Result<Argument> {
        self.arg(Scalar::F64)
    }

    /// A window of the region as one argument.
    pub fn slice_arg(&self, scalar: Scalar, offset: u64, length: u64) -> Result<Argument> {
        if offset.checked_add(length).is_none_or(|e| e > self.len() as u64) {
            return Err(HaloError::BadArgument(format!(
                "window {offset}+{length} exceeds region of {} bytes",
                self.len()
            )));
        }
        Argument::external(scalar, self.handle, offset, length)
    }
}

impl std::fmt::Debug for MemRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MemRegion({:#x}, {} bytes)", self.handle, self.len())
    }
}

/// What a child rank is bound to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Binding {
    /// Served by these agents, in round-robin order.
    Agents(Vec<AgentInfo>),
    /// Served by the host callback.
    Failsafe,
    /// An internal buffer.
    Buffer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentInfo {
    pub index: usize,
    pub backend: String,
    pub address: String,
}

/// A received result with the agent-reported offload and kernel times.
#[derive(Debug, Clone)]
pub struct Received {
    pub object: ComputeObject,
    pub t2: Duration,
    pub t3: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FinalizeReport {
    /// Content-store bytes still allocated after every tracked handle was
    /// released; nonzero means an accounting leak.
    pub leaked_bytes: u64,
    pub protocol: ProtocolStats,
}

#[derive(Debug)]
enum CrKind {
    Function,
    Buffer {
        scalar: Scalar,
        count: u64,
        handle: u64,
        owner: ChildRank,
    },
}

struct CrRecord {
    attrs: KernelAttributes,
    kind: CrKind,
    agents: Vec<usize>,
    failsafe: Option<Failsafe>,
    stateful: AtomicBool,
    rr: RoundRobin,
    buffers: Mutex<Vec<ChildRank>>,
}

struct Agent {
    info: AgentInfo,
    address: Address,
    alive: bool,
    kernels: Vec<KernelManifest>,
}

#[derive(Deserialize)]
struct ManifestBody {
    backend: String,
    kernels: Vec<KernelManifest>,
}

#[derive(Deserialize)]
struct ClaimBody {
    manifest: KernelManifest,
}

#[derive(Deserialize)]
struct MetricsBody {
    metrics: MetricsSnapshot,
}

pub struct ParentContext {
    app_id: u64,
    rank: u32,
    config: HaloConfig,
    opts: InitOptions,
    address: Address,
    store: Arc<ContentStore>,
    agents: Vec<Agent>,
    launched: Mutex<Vec<LaunchedAgent>>,
    interface: Arc<Interface>,
    mailbox: Arc<Mailbox>,
    counters: Arc<ProtocolCounters>,
    results: Arc<Mutex<HashSet<u64>>>,
    crs: RwLock<HashMap<u64, Arc<CrRecord>>>,
    regions: Mutex<HashSet<u64>>,
    next_cr: AtomicU64,
    next_tx: AtomicU64,
    claim_rr: RoundRobin,
    copied: AtomicU64,
    finalized: AtomicBool,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl std::fmt::Debug for ParentContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParentContext")
            .field("app_id", &format_args!("{:#x}", self.app_id))
            .field("rank", &self.rank)
            .finish_non_exhaustive()
    }
}

impl ParentContext {
    /// Reads the configuration at `path` and starts the runtime agent.
    pub fn initialize(path: impl AsRef<Path>) -> Result<ParentContext> {
        ParentContext::initialize_with(HaloConfig::from_path(path)?, InitOptions::from_env())
    }

    /// Uses `HALO_CONFIG` when set, else an empty configuration.
    pub fn from_env() -> Result<ParentContext> {
        match std::env::var("HALO_CONFIG") {
            Ok(p) if !p.trim().is_empty() => ParentContext::initialize(p.trim()),
            _ => ParentContext::initialize_with(HaloConfig::default(), InitOptions::from_env()),
        }
    }

    pub fn initialize_with(config: HaloConfig, opts: InitOptions) -> Result<ParentContext> {
        let transport = opts.transport_for(&config);
        let app_id = loop {
            let id: u64 = rand::random();
            if id != 0 && id != u64::MAX {
                break id;
            }
        };
        let store = match transport {
            Transport::Inproc => ContentStore::create_anonymous(app_id, opts.store)?,
            Transport::Ipc => ContentStore::create_named(app_id, opts.store)?,
        };
        let (rank, address, endpoint) = bind_parent(transport, &opts)?;
        let launched = launch::launch(&config, rank, transport, &opts)?;

        let mut senders = Vec::with_capacity(launched.len());
        for a in &launched {
            senders.push(Sender::connect(&a.address)?);
        }
        let agents = launched
            .iter()
            .enumerate()
            .map(|(index, a)| Agent {
                info: AgentInfo {
                    index,
                    backend: a.backend.clone(),
                    address: a.address.to_string(),
                },
                address: a.address.clone(),
                alive: true,
                kernels: Vec::new(),
            })
            .collect();

        let waiter = Waiter::new();
        let interface = Arc::new(Interface::new(Arc::clone(&waiter)));
        let (to_proactor, submissions) = spsc::channel(QUEUE_DEPTH, Waiter::new());
        let (completions_tx, completions_rx) = spsc::channel(QUEUE_DEPTH, Arc::clone(&waiter));
        let mailbox = Arc::new(Mailbox::new());
        let counters = Arc::new(ProtocolCounters::default());
        let results = Arc::new(Mutex::new(HashSet::new()));
        let idle = Arc::new(AtomicBool::new(false));

        let t1 = Thread1 {
            interface: Arc::clone(&interface),
            to_proactor,
            completions: completions_rx,
            mailbox: Arc::clone(&mailbox),
            proactor_idle: Arc::clone(&idle),
            wake: Sender::connect(&address)?,
        };
        let proactor = Proactor {
            app_id,
            endpoint,
            agents: senders,
            store: Arc::clone(&store),
            submissions,
            completions: completions_tx,
            idle,
            counters: Arc::clone(&counters),
            results: Arc::clone(&results),
        };
        let threads = vec![
            std::thread::Builder::new()
                .name(format!("halo-ra1-{rank}"))
                .spawn(move || t1.run())?,
            std::thread::Builder::new()
                .name(format!("halo-ra2-{rank}"))
                .spawn(move || proactor.run())?,
        ];

        let mut ctx = ParentContext {
            app_id,
            rank,
            config,
            opts,
            address,
            store,
            agents,
            launched: Mutex::new(launched),
            interface,
            mailbox,
            counters,
            results,
            crs: RwLock::new(HashMap::new()),
            regions: Mutex::new(HashSet::new()),
            next_cr: AtomicU64::new(1),
            next_tx: AtomicU64::new(1),
            claim_rr: RoundRobin::new(),
            copied: AtomicU64::new(0),
            finalized: AtomicBool::new(false),
            threads: Mutex::new(threads),
        };

        let all: Vec<usize> = (0..ctx.agents.len()).collect();
        let replies = ctx.fan_out(&all, MsgType::ManifestQuery, None);
        for (i, r) in replies {
            match r.and_then(|rep| parse_json::<ManifestBody>(&rep)) {
                Ok(m) => {
                    ctx.agents[i].info.backend = m.backend;
                    ctx.agents[i].kernels = m.kernels;
                }
                Err(e) => {
                    tracing::warn!(agent = %ctx.agents[i].info.address, error = %e, "agent did not answer; dropping it");
                    ctx.agents[i].alive = false;
                }
            }
        }
        if !ctx.agents.iter().any(|a| a.alive) {
            let _ = ctx.finalize();
            return Err(HaloError::NoResource("no virtualization agent attached".into()));
        }
        tracing::debug!(app = app_id, rank, agents = ctx.agents.len(), "runtime agent up");
        Ok(ctx)
    }

    pub fn app_id(&self) -> u64 {
        self.app_id
    }

    pub fn rank(&self) -> ParentRank {
        ParentRank(self.rank)
    }

    pub fn address(&self) -> &Address {
        &self.address
    }

    pub fn config(&self) -> &HaloConfig {
        &self.config
    }

    fn live(&self) -> Result<()> {
        if self.finalized.load(Ordering::Acquire) {
            Err(HaloError::Finalized)
        } else {
            Ok(())
        }
    }

    fn txid(&self) -> u64 {
        self.next_tx.fetch_add(1, Ordering::Relaxed)
    }

    fn envelope(&self, msg: MsgType, agent: usize) -> Envelope {
        Envelope {
            src: self.rank,
            dst: agent as u32,
            ..Envelope::new(msg, self.txid(), self.app_id)
        }
    }

    fn with_body(&self, env: Envelope, body: Option<&[u8]>) -> Result<Envelope> {
        match body {
            Some(b) => Ok(env.with_body(self.store.put(b)?, b.len())),
            None => Ok(env),
        }
    }

    /// Sends one control request to each agent in `agents` and waits for all.
    fn fan_out(
        &self,
        agents: &[usize],
        msg: MsgType,
        body: Option<&[u8]>,
    ) -> Vec<(usize, Result<ControlReply>)> {
        let deadline = Instant::now() + self.opts.agent_timeout;
        let mut waiting = Vec::new();
        let mut out = Vec::new();
        for &agent in agents {
            let env = match self.with_body(self.envelope(msg, agent), body) {
                Ok(e) => e,
                Err(e) => {
                    out.push((agent, Err(e)));
                    continue;
                }
            };
            let (tx, rx) = oneshot::bounded(1);
            self.interface.submit(Submission::Control {
                agent,
                env,
                reply: tx,
                deadline,
            });
            waiting.push((agent, rx));
        }
        for (agent, rx) in waiting {
            let r = rx.recv().unwrap_or(Err(HaloError::Finalized)).and_then(|rep| {
                match HaloError::from_status(rep.env.status, format!("{:?} from agent {agent}", rep.env.msg_type)) {
                    Some(e) => Err(e),
                    None => Ok(rep),
                }
            });
            out.push((agent, r));
        }
        out
    }

    fn alive_agents(&self) -> Vec<usize> {
        self.agents.iter().filter(|a| a.alive).map(|a| a.info.index).collect()
    }

    fn new_cr(&self, rec: CrRecord) -> ChildRank {
        let n = self.next_cr.fetch_add(1, Ordering::Relaxed);
        let handle = (self.app_id & 0xffff_ffff_0000_0000) | (n & 0xffff_ffff);
        let handle = if handle == 0 { n } else { handle };
        self.crs.write().unwrap().insert(handle, Arc::new(rec));
        ChildRank(handle)
    }

    fn record(&self, cr: ChildRank) -> Result<Arc<CrRecord>> {
        if cr.is_framework() {
            return Err(HaloError::BadHandle(0));
        }
        self.crs
            .read()
            .unwrap()
            .get(&cr.0)
            .cloned()
            .ok_or(HaloError::BadHandle(cr.0))
    }

    /// Claims a virtual accelerator resource for `alias`.
    ///
    /// Every agent is asked for a matching kernel. The child rank is bound to
    /// `func_repl` of the candidates; with none, it runs `failsafe` on the
    /// host, or the claim fails with `ERR_NO_RESOURCE`.
    pub fn claim(
        &self,
        alias: &str,
        failsafe: Option<Failsafe>,
        overrides: Option<&KernelAttributes>,
    ) -> Result<ChildRank> {
        self.live()?;
        let attrs = match self.config.resolve_alias(alias, overrides) {
            Ok(a) => a,
            Err(e) if failsafe.is_some() => {
                tracing::debug!(alias, error = %e, "unresolved alias bound to fail-safe");
                return Ok(self.bind_failsafe(KernelAttributes::WILDCARD, failsafe));
            }
            Err(e) => return Err(e),
        };
        let candidates: Vec<(usize, KernelManifest)> = self
            .fan_out(&self.alive_agents(), MsgType::ClaimReq, Some(&attrs.encode()))
            .into_iter()
            .filter_map(|(i, r)| match r.and_then(|rep| parse_json::<ClaimBody>(&rep)) {
                Ok(c) => Some((i, c.manifest)),
                Err(HaloError::NoResource(_)) => None,
                Err(e) => {
                    tracing::warn!(agent = i, error = %e, "claim query failed");
                    None
                }
            })
            .collect();
        if candidates.is_empty() {
            return match failsafe {
                Some(_) => Ok(self.bind_failsafe(attrs, failsafe)),
                None => Err(HaloError::NoResource(format!("no registered kernel matches {alias:?}"))),
            };
        }
        let repl = self.config.func(alias).map_or(1, |f| f.func_repl.max(1)) as usize;
        let start = self.claim_rr.next_index(candidates.len())?;
        let agents = (0..repl.min(candidates.len()))
            .map(|i| candidates[(start + i) % candidates.len()].0)
            .collect();
        let sw_fid = candidates[start].1.attributes.sw_fid;
        Ok(self.new_cr(CrRecord {
            attrs: KernelAttributes { sw_fid, ..attrs },
            kind: CrKind::Function,
            agents,
            failsafe,
            stateful: AtomicBool::new(false),
            rr: RoundRobin::new(),
            buffers: Mutex::new(Vec::new()),
        }))
    }

    fn bind_failsafe(&self, attrs: KernelAttributes, failsafe: Option<Failsafe>) -> ChildRank {
        self.new_cr(CrRecord {
            attrs,
            kind: CrKind::Function,
            agents: Vec::new(),
            failsafe,
            stateful: AtomicBool::new(false),
            rr: RoundRobin::new(),
            buffers: Mutex::new(Vec::new()),
        })
    }

    /// Allocates framework-managed memory of `type_size × vector_size` bytes.
    /// Associating it with a function child rank makes that rank stateful.
    pub fn create_buffer(
        &self,
        cr: ChildRank,
        is_signed: bool,
        is_float: bool,
        type_size: usize,
        vector_size: usize,
    ) -> Result<ChildRank> {
        self.live()?;
        let scalar = Scalar::from_traits(is_signed, is_float, type_size).ok_or_else(|| {
            HaloError::BadArgument(format!(
                "no element type with signed={is_signed}, float={is_float}, size={type_size}"
            ))
        })?;
        if vector_size == 0 {
            return Err(HaloError::BadArgument("vector_size must be positive".into()));
        }
        let owner = if cr.is_framework() {
            None
        } else {
            let rec = self.record(cr)?;
            if !matches!(rec.kind, CrKind::Function) {
                return Err(HaloError::BadArgument(format!("{cr} is a buffer, not a function")));
            }
            Some(rec)
        };
        let len = (type_size as u64)
            .checked_mul(vector_size as u64)
            .ok_or_else(|| HaloError::BadArgument("buffer size overflows".into()))?;
        let handle = self.store.alloc(len)?;
        // SAFETY: freshly allocated; nobody else knows the handle yet.
        unsafe { self.store.get_mut(handle)? }.fill(0);
        if let Some(rec) = &owner {
            let mut body = cr.0.to_le_bytes().to_vec();
            body.extend_from_slice(&handle.to_le_bytes());
            body.extend_from_slice(&len.to_le_bytes());
            for (_, r) in self.fan_out(&rec.agents, MsgType::BufCreateReq, Some(&body)) {
                if let Err(e) = r {
                    let _ = self.store.release(handle);
                    return Err(e);
                }
            }
            rec.stateful.store(true, Ordering::Release);
        }
        let buf = self.new_cr(CrRecord {
            attrs: KernelAttributes::WILDCARD,
            kind: CrKind::Buffer {
                scalar,
                count: vector_size as u64,
                handle,
                owner: cr,
            },
            agents: Vec::new(),
            failsafe: None,
            stateful: AtomicBool::new(true),
            rr: RoundRobin::new(),
            buffers: Mutex::new(Vec::new()),
        });
        if let Some(rec) = owner {
            rec.buffers.lock().unwrap().push(buf);
        }
        Ok(buf)
    }

    fn buffer_of(&self, buf: ChildRank) -> Result<(Scalar, u64, u64)> {
        match self.record(buf)?.kind {
            CrKind::Buffer {
                scalar, count, handle, ..
            } => Ok((scalar, count, handle)),
            CrKind::Function => Err(HaloError::BadArgument(format!("{buf} is not a buffer"))),
        }
    }

    /// The internal buffer `buf` as a kernel argument. Placed after a
    /// kernel's regular arguments it receives the kernel's first output.
    pub fn buffer_arg(&self, buf: ChildRank) -> Result<Argument> {
        let (scalar, count, handle) = self.buffer_of(buf)?;
        Argument::internal(scalar, handle, count)
    }

    pub fn write_buffer_f64(&self, buf: ChildRank, values: &[f64]) -> Result<()> {
        let (_, _, handle) = self.buffer_of(buf)?;
        // SAFETY: the application serializes its own writes with kernel use.
        let mut view = unsafe { self.store.get_mut(handle)? };
        let bytes: &[u8] = bytemuck::cast_slice(values);
        if bytes.len() > view.len() {
            return Err(HaloError::BadArgument(format!(
                "{} values do not fit a buffer of {} bytes",
                values.len(),
                view.len()
            )));
        }
        view[..bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    pub fn read_buffer_f64(&self, buf: ChildRank) -> Result<Vec<f64>> {
        let (_, _, handle) = self.buffer_of(buf)?;
        let view = self.store.get(handle)?;
        Ok(f64s(&view))
    }

    /// Asynchronously dispatches `payload` to `dst`. The result returns to
    /// this rank's mailbox under `(dst, tag)`.
    pub fn send(
        &self,
        payload: Payload<'_>,
        count: usize,
        datatype: MpixType,
        dst: ChildRank,
        tag: i32,
        comm: Comm,
    ) -> Result<()> {
        self.dispatch(payload, count, datatype, dst, tag, comm, None)
    }

    /// As [`send`](Self::send), delivering the result to parent rank `fwd`.
    #[allow(clippy::too_many_arguments)]
    pub fn send_fwd(
        &self,
        payload: Payload<'_>,
        count: usize,
        datatype: MpixType,
        dst: ChildRank,
        tag: i32,
        comm: Comm,
        fwd: ParentRank,
    ) -> Result<()> {
        let fwd = (fwd.0 != self.rank).then_some(fwd.0);
        self.dispatch(payload, count, datatype, dst, tag, comm, fwd)
    }

    #[allow(clippy::too_many_arguments)]
    fn dispatch(
        &self,
        payload: Payload<'_>,
        count: usize,
        datatype: MpixType,
        dst: ChildRank,
        tag: i32,
        comm: Comm,
        fwd: Option<u32>,
    ) -> Result<()> {
        self.live()?;
        check_comm(comm)?;
        let rec = self.record(dst)?;
        if !matches!(rec.kind, CrKind::Function) {
            return Err(HaloError::BadArgument(format!("{dst} is a buffer, not a function")));
        }
        let mut co = self.build_object(payload, count, datatype)?;
        if co.function_id == 0 {
            co.function_id = rec.attrs.sw_fid;
        }
        co.app_id = self.app_id;
        co.tag = tag;

        if rec.agents.is_empty() {
            if fwd.is_some() {
                return Err(HaloError::BadArgument("fail-safe results cannot be forwarded".into()));
            }
            let f = rec.failsafe.as_ref().expect("unbound function ranks carry a fail-safe");
            let seq = self.mailbox.reserve(dst, tag);
            let d = Delivery {
                seq: Some(seq),
                ..self.run_failsafe(f, dst, co)
            };
            self.mailbox.deliver(d);
            return Ok(());
        }

        let stateful = co.is_stateful();
        let agent = if stateful {
            rec.stateful.store(true, Ordering::Release);
            rec.agents[0]
        } else {
            rec.agents[rec.rr.next_index(rec.agents.len())?]
        };
        if let Some(r) = fwd {
            if !parent_address(&self.agents[agent].address, r).is_live() {
                return Err(HaloError::BadHandle(r as u64));
            }
        }
        let mut body = Vec::with_capacity(8 + co.encoded_len());
        body.extend_from_slice(&dst.0.to_le_bytes());
        co.encode_into(&mut body);
        self.copied.fetch_add(co.inline_bytes(), Ordering::Relaxed);
        let mut env = self.with_body(self.envelope(MsgType::ExecReq, agent), Some(&body))?;
        env.tag = tag;
        if let Some(r) = fwd {
            env.src = r;
        }
        self.interface.submit(Submission::Exec {
            agent,
            env,
            source: dst,
            tag,
            reply_seq: fwd.is_none().then(|| self.mailbox.reserve(dst, tag)),
        });
        Ok(())
    }

    fn build_object(&self, payload: Payload<'_>, count: usize, datatype: MpixType) -> Result<ComputeObject> {
        match payload {
            Payload::Object(co) => {
                if datatype != MpixType::ComputeObject || count != 1 {
                    return Err(HaloError::BadArgument(
                        "a compute object is sent as count 1 of COMPUTE_OBJECT".into(),
                    ));
                }
                for a in &co.args {
                    if let ArgPayload::External { region_id, .. } = a.payload() {
                        if !self.regions.lock().unwrap().contains(region_id)
                            && !self.results.lock().unwrap().contains(region_id)
                        {
                            return Err(HaloError::BadHandle(*region_id));
                        }
                    }
                }
                Ok(co)
            }
            Payload::Raw(bytes) => {
                let scalar = raw_scalar(datatype)?;
                if count.checked_mul(scalar.size()) != Some(bytes.len()) {
                    return Err(HaloError::BadArgument(format!(
                        "{count} {} elements do not match {} bytes",
                        scalar.name(),
                        bytes.len()
                    )));
                }
                Ok(ComputeObject::new(vec![Argument::inline(scalar, bytes.to_vec())?]))
            }
            Payload::Region(region) => {
                let scalar = raw_scalar(datatype)?;
                if region.app_id != self.app_id || !self.regions.lock().unwrap().contains(&region.handle) {
                    return Err(HaloError::BadHandle(region.handle));
                }
                let len = count
                    .checked_mul(scalar.size())
                    .filter(|&l| l <= region.len())
                    .ok_or_else(|| HaloError::BadArgument(format!("{count} elements exceed {region:?}")))?;
                Ok(ComputeObject::new(vec![region.slice_arg(scalar, 0, len as u64)?]))
            }
        }
    }

    fn run_failsafe(&self, f: &Failsafe, cr: ChildRank, co: ComputeObject) -> Delivery {
        let tag = co.tag;
        let staging = Instant::now();
        let input = match self.inline_copy(&co) {
            Ok(i) => i,
            Err(e) => return failed(cr, tag, e.status()),
        };
        let t2 = staging.elapsed();
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(|| f(&input)));
        let t3 = start.elapsed();
        let object = match out {
            Ok(Ok(mut o)) => {
                o.status = StatusCode::FailsafeExecuted;
                o.tag = tag;
                o.app_id = self.app_id;
                o
            }
            Ok(Err(e)) => {
                tracing::warn!(%cr, error = %e, "fail-safe callback failed");
                return failed(cr, tag, StatusCode::ErrKernelFault);
            }
            Err(_) => {
                tracing::warn!(%cr, "fail-safe callback panicked");
                return failed(cr, tag, StatusCode::ErrKernelFault);
            }
        };
        Delivery {
            source: cr,
            tag,
            seq: None,
            object,
            t2,
            t3,
        }
    }

    /// `co` with every argument materialized inline.
    fn inline_copy(&self, co: &ComputeObject) -> Result<ComputeObject> {
        let args = co
            .args
            .iter()
            .map(|a| match a.payload() {
                ArgPayload::Inline(_) => Ok(a.clone()),
                _ => Argument::inline(a.scalar(), self.arg_bytes(a)?),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ComputeObject { args, ..co.clone() })
    }

    fn arg_bytes(&self, a: &Argument) -> Result<Vec<u8>> {
        match a.payload() {
            ArgPayload::Inline(b) => Ok(b.clone()),
            ArgPayload::External {
                region_id,
                offset,
                length,
            } => {
                let s = self.store.get(*region_id)?;
                s.get(*offset as usize..(*offset + *length) as usize)
                    .map(<[u8]>::to_vec)
                    .ok_or_else(|| HaloError::BadArgument(format!("window exceeds region {region_id:#x}")))
            }
            ArgPayload::Internal(h) => {
                let s = self.store.get(*h)?;
                s.get(..a.byte_len() as usize)
                    .map(<[u8]>::to_vec)
                    .ok_or_else(|| HaloError::BadArgument(format!("buffer {h:#x} is too short")))
            }
        }
    }

    /// Blocks the calling thread until a result from `src` with `tag`
    /// arrives. [`ChildRank::ANY`] and [`halo_core::ANY_TAG`] match anything.
    pub fn recv(&self, src: ChildRank, tag: i32) -> Result<ComputeObject> {
        self.recv_timed(src, tag, None).map(|r| r.object)
    }

    /// As [`recv`](Self::recv), with an explicit timeout and the agent's
    /// offload and kernel times.
    pub fn recv_timed(&self, src: ChildRank, tag: i32, timeout: Option<Duration>) -> Result<Received> {
        self.live()?;
        let deadline = Instant::now() + timeout.unwrap_or(self.opts.recv_timeout);
        let d = self.mailbox.take(src, tag, deadline)?;
        if let Some(e) = HaloError::from_status(d.object.status, format!("result of {} tag {}", d.source, d.tag)) {
            self.release(&d.object);
            return Err(e);
        }
        Ok(Received {
            object: d.object,
            t2: d.t2,
            t3: d.t3,
        })
    }

    /// Argument `index` of a received object as `f64` values.
    pub fn read_f64(&self, co: &ComputeObject, index: usize) -> Result<Vec<f64>> {
        let a = co
            .args
            .get(index)
            .ok_or_else(|| HaloError::BadArgument(format!("result has {} arguments", co.args.len())))?;
        if a.scalar() != Scalar::F64 {
            return Err(HaloError::BadArgument(format!("argument {index} is {}", a.scalar().name())));
        }
        Ok(f64s(&self.arg_bytes(a)?))
    }

    /// Runs `f` on the bytes of argument `index` without copying them.
    pub fn view<T>(&self, co: &ComputeObject, index: usize, f: impl FnOnce(&[u8]) -> T) -> Result<T> {
        let a = co
            .args
            .get(index)
            .ok_or_else(|| HaloError::BadArgument(format!("result has {} arguments", co.args.len())))?;
        match a.payload() {
            ArgPayload::Inline(b) => Ok(f(b)),
            ArgPayload::External {
                region_id,
                offset,
                length,
            } => {
                let s = self.store.get(*region_id)?;
                let w = s
                    .get(*offset as usize..(*offset + *length) as usize)
                    .ok_or_else(|| HaloError::BadArgument(format!("window exceeds region {region_id:#x}")))?;
                Ok(f(w))
            }
            ArgPayload::Internal(h) => {
                let s = self.store.get(*h)?;
                Ok(f(&s[..(a.byte_len() as usize).min(s.len())]))
            }
        }
    }

    /// Returns the store memory held by a received result.
    pub fn release(&self, co: &ComputeObject) {
        let mut results = self.results.lock().unwrap();
        for a in &co.args {
            if let ArgPayload::External { region_id, .. } = a.payload() {
                if results.remove(region_id) {
                    let _ = self.store.release(*region_id);
                }
            }
        }
    }

    /// Allocates `size` bytes of store memory for zero-copy arguments.
    pub fn alloc_mem(&self, size: usize) -> Result<MemRegion> {
        self.live()?;
        if size == 0 {
            return Err(HaloError::BadArgument("alloc_mem of 0 bytes".into()));
        }
        let handle = self.store.alloc(size as u64)?;
        // SAFETY: the region is handed to the application alone; agents only
        // read it while a request that names it is in flight.
        let view = unsafe { self.store.get_mut(handle)? };
        self.regions.lock().unwrap().insert(handle);
        Ok(MemRegion {
            handle,
            app_id: self.app_id,
            view,
        })
    }

    pub fn free_mem(&self, region: MemRegion) -> Result<()> {
        if region.app_id != self.app_id || !self.regions.lock().unwrap().remove(&region.handle) {
            return Err(HaloError::BadHandle(region.handle));
        }
        drop(region.view);
        self.store.release(region.handle)
    }

    /// Frees a child rank. The framework rank 0 is not freeable.
    pub fn free(&self, cr: ChildRank) -> Result<()> {
        self.live()?;
        if cr.is_framework() {
            return Err(HaloError::BadHandle(0));
        }
        let rec = self
            .crs
            .write()
            .unwrap()
            .remove(&cr.0)
            .ok_or(HaloError::BadHandle(cr.0))?;
        match rec.kind {
            CrKind::Function => {
                for d in self.mailbox.purge(cr) {
                    self.release(&d.object);
                }
                if !rec.agents.is_empty() {
                    for (agent, r) in self.fan_out(&rec.agents, MsgType::FreeReq, Some(&cr.0.to_le_bytes())) {
                        if let Err(e) = r {
                            tracing::warn!(agent, %cr, error = %e, "agent did not confirm free");
                        }
                    }
                }
            }
            CrKind::Buffer { handle, owner, .. } => {
                let _ = self.store.release(handle);
                if let Ok(o) = self.record(owner) {
                    o.buffers.lock().unwrap().retain(|b| *b != cr);
                }
            }
        }
        Ok(())
    }

    pub fn binding(&self, cr: ChildRank) -> Result<Binding> {
        let rec = self.record(cr)?;
        Ok(match rec.kind {
            CrKind::Buffer { .. } => Binding::Buffer,
            CrKind::Function if rec.agents.is_empty() => Binding::Failsafe,
            CrKind::Function => Binding::Agents(rec.agents.iter().map(|&i| self.agents[i].info.clone()).collect()),
        })
    }

    pub fn is_stateful(&self, cr: ChildRank) -> Result<bool> {
        Ok(self.record(cr)?.stateful.load(Ordering::Acquire))
    }

    pub fn attributes(&self, cr: ChildRank) -> Result<KernelAttributes> {
        Ok(self.record(cr)?.attrs)
    }

    /// Number of live child ranks.
    pub fn live_ranks(&self) -> usize {
        self.crs.read().unwrap().len()
    }

    pub fn agents(&self) -> Vec<AgentInfo> {
        self.agents.iter().filter(|a| a.alive).map(|a| a.info.clone()).collect()
    }

    /// Kernel manifests reported by each attached agent at start-up.
    pub fn manifests(&self) -> Vec<(AgentInfo, Vec<KernelManifest>)> {
        self.agents
            .iter()
            .filter(|a| a.alive)
            .map(|a| (a.info.clone(), a.kernels.clone()))
            .collect()
    }

    /// Queries every agent's counters.
    pub fn agent_metrics(&self) -> Result<Vec<(AgentInfo, MetricsSnapshot)>> {
        self.live()?;
        self.fan_out(&self.alive_agents(), MsgType::MetricsQuery, None)
            .into_iter()
            .map(|(i, r)| Ok((self.agents[i].info.clone(), parse_json::<MetricsBody>(&r?)?.metrics)))
            .collect()
    }

    pub fn protocol_stats(&self) -> ProtocolStats {
        self.counters.snapshot()
    }

    pub fn store_stats(&self) -> StoreStats {
        self.store.stats()
    }

    /// Payload bytes the runtime copied into the store on send. Arguments
    /// passed by region or buffer handle add nothing.
    pub fn payload_bytes_copied(&self) -> u64 {
        self.copied.load(Ordering::Relaxed)
    }

    /// Waits until every dispatched execution has been answered.
    pub fn quiesce(&self, timeout: Duration) -> Result<()> {
        let (tx, rx) = oneshot::bounded(1);
        self.interface.submit(Submission::Drain(tx));
        rx.recv_timeout(timeout).map_err(|_| HaloError::Timeout)
    }

    /// Releases every resource of the context and stops its agents.
    pub fn finalize(&self) -> Result<FinalizeReport> {
        if self.finalized.swap(true, Ordering::AcqRel) {
            return Err(HaloError::Finalized);
        }
        if let Err(e) = self.quiesce(self.opts.recv_timeout) {
            tracing::warn!(error = %e, "finalizing with requests in flight");
        }
        let agents = self.alive_agents();
        for (agent, r) in self.fan_out(&agents, MsgType::FreeReq, Some(&0u64.to_le_bytes())) {
            if let Err(e) = r {
                tracing::warn!(agent, error = %e, "agent did not release this application");
            }
        }
        for (_, rec) in self.crs.write().unwrap().drain() {
            if let CrKind::Buffer { handle, .. } = rec.kind {
                let _ = self.store.release(handle);
            }
        }
        for d in self.mailbox.close() {
            self.release(&d.object);
        }
        for h in self.results.lock().unwrap().drain() {
            let _ = self.store.release(h);
        }
        for h in self.regions.lock().unwrap().drain() {
            let _ = self.store.release(h);
        }

        self.interface.submit(Submission::Stop);
        for t in self.threads.lock().unwrap().drain(..) {
            let _ = t.join();
        }
        let leaked = self.store.stats().used_bytes;
        if leaked > 0 {
            tracing::warn!(bytes = leaked, "content store not empty at finalize; reclaiming");
        }
        self.store.reclaim_all();
        for a in self.launched.lock().unwrap().drain(..) {
            a.stop(Duration::from_secs(5));
        }
        Ok(FinalizeReport {
            leaked_bytes: leaked,
            protocol: self.counters.snapshot(),
        })
    }
}

impl Drop for ParentContext {
    fn drop(&mut self) {
        let _ = self.finalize();
    }
}

fn failed(source: ChildRank, tag: i32, status: StatusCode) -> Delivery {
    Delivery {
        source,
        tag,
        seq: None,
        object: ComputeObject {
            tag,
            status,
            ..ComputeObject::default()
        },
        t2: Duration::ZERO,
        t3: Duration::ZERO,
    }
}

fn f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn check_comm(comm: Comm) -> Result<()> {
    match comm {
        Comm::World => Ok(()),
        Comm::Mpi(h) => Err(HaloError::BadArgument(format!(
            "legacy MPI communicator {h} is unsupported in v1"
        ))),
    }
}

fn raw_scalar(datatype: MpixType) -> Result<Scalar> {
    match datatype {
        MpixType::Scalar(s) | MpixType::ExternalBuffer(s) => Ok(s),
        other => Err(HaloError::BadArgument(format!("cannot send a raw buffer as {other:?}"))),
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(rep: &ControlReply) -> Result<T> {
    serde_json::from_slice(&rep.body)
        .map_err(|e| HaloError::Serialization(format!("{:?} body: {e}", rep.env.msg_type)))
}

/// Picks a random unused parent rank and binds its endpoint.
fn bind_parent(transport: Transport, opts: &InitOptions) -> Result<(u32, Address, Endpoint)> {
    for _ in 0..64 {
        let rank = loop {
            let r: u32 = rand::random();
            if r != 0 {
                break r;
            }
        };
        let name = format!("halo-pr-{rank}");
        let addr = match transport {
            Transport::Inproc => Address::Inproc(name),
            Transport::Ipc => Address::Unix(opts.runtime_dir.join(name)),
        };
        if addr.is_live() {
            continue;
        }
        match Endpoint::bind(&addr) {
            Ok(ep) => return Ok((rank, addr, ep)),
            Err(HaloError::NoResource(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(HaloError::NoResource("no free parent rank".into()))
}
