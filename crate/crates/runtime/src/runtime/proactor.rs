//! The runtime agent's two threads.
//!
//! Thread 1 faces the application: it moves submissions from the
//! application threads into the proactor's queue and completed results into
//! the mailbox. Thread 2, the proactor, owns the IPC endpoint and the
//! senders to every virtualization agent, and pairs responses with requests.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::atomic::{fence, AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crossbeam::channel as oneshot;
use crossbeam::queue::SegQueue;
use halo_core::ipc::{ContentStore, Endpoint, Envelope, MsgType, Sender};
use halo_core::object::ArgPayload;
use halo_core::spsc::{Consumer, Producer, Waiter};
use halo_core::{Argument, ChildRank, ComputeObject, HaloError, Result, StatusCode};
use serde::Serialize;

use super::mailbox::{Delivery, Mailbox};

const IDLE_WAIT: Duration = Duration::from_millis(50);
const BACKLOG_WAIT: Duration = Duration::from_millis(1);
const BURST: usize = 256;

/// Reply to a control request: the response header and a copy of its body.
#[derive(Debug, Clone)]
pub struct ControlReply {
    pub env: Envelope,
    pub body: Vec<u8>,
}

pub enum Submission {
    /// Fire-and-forget execution request. With a reply sequence from
    /// [`Mailbox::reserve`](super::Mailbox::reserve) the response comes back
    /// to this rank under `(source, tag)`; without one it was forwarded.
    Exec {
        agent: usize,
        env: Envelope,
        source: ChildRank,
        tag: i32,
        reply_seq: Option<u64>,
    },
    Control {
        agent: usize,
        env: Envelope,
        reply: oneshot::Sender<Result<ControlReply>>,
        deadline: Instant,
    },
    /// Answered once no execution request is outstanding.
    Drain(oneshot::Sender<()>),
    Stop,
}

enum Pending {
    Exec { source: ChildRank, tag: i32, seq: u64 },
    Control {
        reply: oneshot::Sender<Result<ControlReply>>,
        deadline: Instant,
    },
}

#[derive(Debug, Default)]
pub struct ProtocolCounters {
    pub requests_sent: AtomicU64,
    pub responses_received: AtomicU64,
    pub unmatched: AtomicU64,
    pub forwarded_sent: AtomicU64,
    pub forwarded_received: AtomicU64,
    pub pending: AtomicU64,
    pub timed_out: AtomicU64,
}

/// Request/response accounting of one context.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ProtocolStats {
    /// Requests sent that expect a response at this rank.
    pub requests_sent: u64,
    /// Responses paired with an outstanding request.
    pub responses_received: u64,
    /// Responses whose transaction was unknown or already answered.
    pub unmatched: u64,
    /// Execution requests whose result was forwarded to another rank.
    pub forwarded_sent: u64,
    /// Results received on behalf of another rank's request.
    pub forwarded_received: u64,
    /// Requests still awaiting a response.
    pub pending: u64,
    /// Control requests abandoned after their deadline.
    pub timed_out: u64,
}

impl ProtocolCounters {
    pub fn snapshot(&self) -> ProtocolStats {
        let l = |a: &AtomicU64| a.load(Ordering::Relaxed);
        ProtocolStats {
            requests_sent: l(&self.requests_sent),
            responses_received: l(&self.responses_received),
            unmatched: l(&self.unmatched),
            forwarded_sent: l(&self.forwarded_sent),
            forwarded_received: l(&self.forwarded_received),
            pending: l(&self.pending),
            timed_out: l(&self.timed_out),
        }
    }
}

fn bump(a: &AtomicU64) {
    a.fetch_add(1, Ordering::Relaxed);
}

/// Application-facing side of thread 1.
pub struct Interface {
    queue: SegQueue<Submission>,
    waiter: Arc<Waiter>,
}

impl Interface {
    pub fn new(waiter: Arc<Waiter>) -> Interface {
        Interface {
            queue: SegQueue::new(),
            waiter,
        }
    }

    pub fn submit(&self, s: Submission) {
        self.queue.push(s);
        self.waiter.notify();
    }
}

/// Thread 1: the thin application-side agent.
pub struct Thread1 {
    pub interface: Arc<Interface>,
    pub to_proactor: Producer<Submission>,
    pub completions: Consumer<Delivery>,
    pub mailbox: Arc<Mailbox>,
    pub proactor_idle: Arc<AtomicBool>,
    pub wake: Sender,
}

impl Thread1 {
    pub fn run(self) {
        let mut backlog: VecDeque<Submission> = VecDeque::new();
        let mut stopping = false;
        loop {
            while let Some(s) = self.interface.queue.pop() {
                backlog.push_back(s);
            }
            let mut moved = false;
            while let Some(s) = backlog.pop_front() {
                let stop = matches!(s, Submission::Stop);
                match self.to_proactor.push(s) {
                    Ok(()) => {
                        moved = true;
                        stopping |= stop;
                    }
                    Err(s) => {
                        backlog.push_front(s);
                        break;
                    }
                }
            }
            if moved {
                fence(Ordering::SeqCst);
                if self.proactor_idle.load(Ordering::SeqCst) {
                    let _ = self.wake.try_send(&Envelope::new(MsgType::Wake, 0, 0));
                }
            }
            while let Some(d) = self.completions.pop() {
                self.mailbox.deliver(d);
            }
            if stopping && backlog.is_empty() {
                break;
            }
            let wait = if backlog.is_empty() { None } else { Some(BACKLOG_WAIT) };
            self.interface.waiter.wait(wait);
        }
    }
}

/// Thread 2: the proactor.
pub struct Proactor {
    pub app_id: u64,
    pub endpoint: Endpoint,
    pub agents: Vec<Sender>,
    pub store: Arc<ContentStore>,
    pub submissions: Consumer<Submission>,
    pub completions: Producer<Delivery>,
    pub idle: Arc<AtomicBool>,
    pub counters: Arc<ProtocolCounters>,
    /// Store handles referenced by results handed to the application.
    pub results: Arc<Mutex<HashSet<u64>>>,
}

struct State {
    pending: HashMap<u64, Pending>,
    pending_exec: usize,
    outbox: VecDeque<(usize, Envelope)>,
    undelivered: VecDeque<Delivery>,
    drains: Vec<oneshot::Sender<()>>,
    foreign: HashMap<u64, Arc<ContentStore>>,
    stopping: bool,
}

impl Proactor {
    pub fn run(mut self) {
        let mut st = State {
            pending: HashMap::new(),
            pending_exec: 0,
            outbox: VecDeque::new(),
            undelivered: VecDeque::new(),
            drains: Vec::new(),
            foreign: HashMap::new(),
            stopping: false,
        };
        loop {
            while let Some(s) = self.submissions.pop() {
                self.submit(&mut st, s);
            }
            self.flush_outbox(&mut st);
            self.flush_undelivered(&mut st);
            let next_deadline = self.expire(&mut st);
            if st.pending_exec == 0 {
                for d in st.drains.drain(..) {
                    let _ = d.send(());
                }
            }
            if st.stopping {
                break;
            }

            let mut timeout = if st.outbox.is_empty() && st.undelivered.is_empty() {
                IDLE_WAIT
            } else {
                BACKLOG_WAIT
            };
            if let Some(d) = next_deadline {
                timeout = timeout.min(d.saturating_duration_since(Instant::now()));
            }
            self.idle.store(true, Ordering::SeqCst);
            fence(Ordering::SeqCst);
            if !self.submissions.is_empty() {
                self.idle.store(false, Ordering::SeqCst);
                continue;
            }
            let mut frame = self.endpoint.recv_frame(Some(timeout));
            self.idle.store(false, Ordering::SeqCst);
            let mut n = 0;
            loop {
                match frame {
                    Ok(Some(f)) => self.on_frame(&mut st, &f),
                    Ok(None) => break,
                    Err(e) => {
                        tracing::warn!(error = %e, "runtime endpoint");
                        break;
                    }
                }
                n += 1;
                if n == BURST {
                    break;
                }
                frame = self.endpoint.recv_frame(Some(Duration::ZERO));
            }
        }
        for (_, p) in st.pending.drain() {
            if let Pending::Control { reply, .. } = p {
                let _ = reply.send(Err(HaloError::Finalized));
            }
        }
        self.counters.pending.store(0, Ordering::Relaxed);
    }

    fn submit(&mut self, st: &mut State, s: Submission) {
        match s {
            Submission::Exec {
                agent,
                env,
                source,
                tag,
                reply_seq,
            } => {
                if let Some(seq) = reply_seq {
                    st.pending.insert(env.transaction_id, Pending::Exec { source, tag, seq });
                    st.pending_exec += 1;
                    bump(&self.counters.requests_sent);
                    bump(&self.counters.pending);
                } else {
                    bump(&self.counters.forwarded_sent);
                }
                st.outbox.push_back((agent, env));
            }
            Submission::Control {
                agent,
                env,
                reply,
                deadline,
            } => {
                st.pending.insert(env.transaction_id, Pending::Control { reply, deadline });
                bump(&self.counters.requests_sent);
                bump(&self.counters.pending);
                st.outbox.push_back((agent, env));
            }
            Submission::Drain(tx) => st.drains.push(tx),
            Submission::Stop => st.stopping = true,
        }
    }

    fn flush_outbox(&mut self, st: &mut State) {
        while let Some((agent, env)) = st.outbox.pop_front() {
            match self.agents[agent].try_send(&env) {
                Ok(true) => {}
                Ok(false) => {
                    st.outbox.push_front((agent, env));
                    return;
                }
                Err(e) => {
                    tracing::warn!(agent, error = %e, "agent unreachable");
                    self.fail(st, &env, e);
                }
            }
        }
    }

    fn flush_undelivered(&mut self, st: &mut State) {
        while let Some(d) = st.undelivered.pop_front() {
            if let Err(d) = self.completions.push(d) {
                st.undelivered.push_front(d);
                return;
            }
        }
    }

    fn deliver(&mut self, st: &mut State, d: Delivery) {
        if !st.undelivered.is_empty() {
            st.undelivered.push_back(d);
            return;
        }
        if let Err(d) = self.completions.push(d) {
            st.undelivered.push_back(d);
        }
    }

    /// Completes a request locally with an error.
    fn fail(&mut self, st: &mut State, env: &Envelope, err: HaloError) {
        if env.body != 0 {
            let _ = self.store.release(env.body);
        }
        match st.pending.remove(&env.transaction_id) {
            Some(Pending::Exec { source, tag, seq }) => {
                st.pending_exec -= 1;
                self.counters.pending.fetch_sub(1, Ordering::Relaxed);
                let d = error_delivery(source, tag, Some(seq), err.status());
                self.deliver(st, d);
            }
            Some(Pending::Control { reply, .. }) => {
                self.counters.pending.fetch_sub(1, Ordering::Relaxed);
                let _ = reply.send(Err(err));
            }
            None => {}
        }
    }

    /// Times out overdue control requests; returns the earliest remaining deadline.
    fn expire(&mut self, st: &mut State) -> Option<Instant> {
        let now = Instant::now();
        let overdue: Vec<u64> = st
            .pending
            .iter()
            .filter_map(|(tx, p)| match p {
                Pending::Control { deadline, .. } if *deadline <= now => Some(*tx),
                _ => None,
            })
            .collect();
        for tx in overdue {
            if let Some(Pending::Control { reply, .. }) = st.pending.remove(&tx) {
                bump(&self.counters.timed_out);
                self.counters.pending.fetch_sub(1, Ordering::Relaxed);
                let _ = reply.send(Err(HaloError::Timeout));
            }
        }
        st.pending
            .values()
            .filter_map(|p| match p {
                Pending::Control { deadline, .. } => Some(*deadline),
                _ => None,
            })
            .min()
    }

    fn on_frame(&mut self, st: &mut State, frame: &[u8]) {
        let env = match Envelope::decode(frame) {
            Ok(e) => e,
            Err(e) => {
                tracing::warn!(error = %e, "dropping malformed frame");
                return;
            }
        };
        match env.msg_type {
            MsgType::Wake => {}
            MsgType::ExecRsp => self.on_exec_rsp(st, env),
            t if t.is_request() || t == MsgType::Shutdown => {
                tracing::debug!(msg = ?t, "ignoring request sent to a parent rank");
            }
            _ => self.on_control_rsp(st, env),
        }
    }

    fn store_for(&self, st: &mut State, app_id: u64) -> Option<Arc<ContentStore>> {
        if app_id == self.app_id {
            return Some(Arc::clone(&self.store));
        }
        if let Some(s) = st.foreign.get(&app_id) {
            return Some(Arc::clone(s));
        }
        match ContentStore::attach(app_id) {
            Ok(s) => {
                st.foreign.insert(app_id, Arc::clone(&s));
                Some(s)
            }
            Err(e) => {
                tracing::warn!(app = app_id, error = %e, "cannot attach forwarding rank's store");
                None
            }
        }
    }

    fn on_exec_rsp(&mut self, st: &mut State, env: Envelope) {
        let store = self.store_for(st, env.app_id);
        let parsed = match (&store, env.body) {
            (Some(s), h) if h != 0 => {
                let r = s.get(h).and_then(|b| parse_exec_rsp(&b));
                let _ = s.release(h);
                Some(r)
            }
            _ => None,
        };
        if env.app_id != self.app_id {
            self.on_forwarded(st, env, store, parsed);
            return;
        }
        let (source, tag, seq) = match st.pending.remove(&env.transaction_id) {
            Some(Pending::Exec { source, tag, seq }) => (source, tag, seq),
            other => {
                if let Some(p) = other {
                    st.pending.insert(env.transaction_id, p);
                }
                bump(&self.counters.unmatched);
                if let (Some(s), Some(Ok((_, _, _, co)))) = (&store, parsed) {
                    release_results(s, &co);
                }
                return;
            }
        };
        st.pending_exec -= 1;
        bump(&self.counters.responses_received);
        self.counters.pending.fetch_sub(1, Ordering::Relaxed);
        let d = match parsed {
            Some(Ok((_, t2, t3, co))) => {
                let mut results = self.results.lock().unwrap();
                for a in &co.args {
                    if let ArgPayload::External { region_id, .. } = a.payload() {
                        results.insert(*region_id);
                    }
                }
                drop(results);
                Delivery {
                    source,
                    tag,
                    seq: Some(seq),
                    object: co,
                    t2,
                    t3,
                }
            }
            Some(Err(e)) => error_delivery(source, tag, Some(seq), e.status()),
            None => error_delivery(source, tag, Some(seq), non_ok(env.status)),
        };
        self.deliver(st, d);
    }

    /// A result of another rank's request, routed here by `send_fwd`. Its
    /// data lives in the requester's store and is copied out.
    fn on_forwarded(
        &mut self,
        st: &mut State,
        env: Envelope,
        store: Option<Arc<ContentStore>>,
        parsed: Option<Result<(u64, Duration, Duration, ComputeObject)>>,
    ) {
        bump(&self.counters.forwarded_received);
        let d = match (store, parsed) {
            (Some(s), Some(Ok((cr, t2, t3, co)))) => {
                let object = materialize(&s, co);
                Delivery {
                    source: ChildRank(cr),
                    tag: object.tag,
                    seq: None,
                    object,
                    t2,
                    t3,
                }
            }
            (_, Some(Err(e))) => error_delivery(ChildRank::ANY, env.tag, None, e.status()),
            _ => error_delivery(ChildRank::ANY, env.tag, None, non_ok(env.status)),
        };
        self.deliver(st, d);
    }

    fn on_control_rsp(&mut self, st: &mut State, env: Envelope) {
        let body = if env.body != 0 {
            let b = self.store.get(env.body).map(|s| s.to_vec());
            let _ = self.store.release(env.body);
            b
        } else {
            Ok(Vec::new())
        };
        match st.pending.remove(&env.transaction_id) {
            Some(Pending::Control { reply, .. }) => {
                bump(&self.counters.responses_received);
                self.counters.pending.fetch_sub(1, Ordering::Relaxed);
                let _ = reply.send(body.map(|body| ControlReply { env, body }));
            }
            Some(Pending::Exec { source, tag, seq }) => {
                // ERROR_RSP for an execution request the agent could not decode
                st.pending_exec -= 1;
                bump(&self.counters.responses_received);
                self.counters.pending.fetch_sub(1, Ordering::Relaxed);
                let d = error_delivery(source, tag, Some(seq), non_ok(env.status));
                self.deliver(st, d);
            }
            None => bump(&self.counters.unmatched),
        }
    }
}

fn non_ok(s: StatusCode) -> StatusCode {
    if s.is_success() {
        StatusCode::ErrSerialization
    } else {
        s
    }
}

fn error_delivery(source: ChildRank, tag: i32, seq: Option<u64>, status: StatusCode) -> Delivery {
    Delivery {
        source,
        tag,
        seq,
        object: ComputeObject {
            tag,
            status,
            ..ComputeObject::default()
        },
        t2: Duration::ZERO,
        t3: Duration::ZERO,
    }
}

/// `[cr][t2 ns][t3 ns][compute object]`
pub fn parse_exec_rsp(b: &[u8]) -> Result<(u64, Duration, Duration, ComputeObject)> {
    if b.len() < 24 {
        return Err(HaloError::Serialization(format!("EXEC_RSP body of {} bytes", b.len())));
    }
    let u = |i: usize| u64::from_le_bytes(b[i * 8..i * 8 + 8].try_into().unwrap());
    Ok((
        u(0),
        Duration::from_nanos(u(1)),
        Duration::from_nanos(u(2)),
        ComputeObject::decode(&b[24..])?,
    ))
}

pub fn release_results(store: &ContentStore, co: &ComputeObject) {
    for a in &co.args {
        if let ArgPayload::External { region_id, .. } = a.payload() {
            let _ = store.release(*region_id);
        }
    }
}

/// Replaces external arguments with inline copies and releases the regions.
fn materialize(store: &Arc<ContentStore>, co: ComputeObject) -> ComputeObject {
    let mut out = ComputeObject { args: Vec::with_capacity(co.args.len()), ..co };
    for a in co.args {
        let inline = match a.payload() {
            ArgPayload::External {
                region_id,
                offset,
                length,
            } => {
                let bytes = store
                    .get(*region_id)
                    .ok()
                    .and_then(|s| s.get(*offset as usize..(*offset + *length) as usize).map(<[u8]>::to_vec));
                let _ = store.release(*region_id);
                match bytes.map(|b| Argument::inline(a.scalar(), b)) {
                    Some(Ok(arg)) => arg,
                    _ => {
                        out.status = StatusCode::ErrBadHandle;
                        continue;
                    }
                }
            }
            _ => a,
        };
        out.args.push(inline);
    }
    out
}
