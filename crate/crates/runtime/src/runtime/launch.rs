//! Bringing virtualization agents up and down.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use halo_core::ipc::{Address, Envelope, MsgType, Sender, StoreOptions};
use halo_core::{HaloConfig, HaloError, Launch, PlatformEntry, Result};
use serde::Deserialize;

use crate::vagent::{AgentHandle, Backend, KernelRepository};

pub const DEFAULT_RUNTIME_DIR: &str = "/tmp/halo-run";
pub const DEFAULT_RECV_TIMEOUT: Duration = Duration::from_secs(30);

/// How envelopes travel between the runtime agent and its agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    /// Process-local queues; only thread-launched agents.
    Inproc,
    /// Unix datagram sockets under the runtime directory.
    Ipc,
}

#[derive(Debug, Clone)]
pub struct InitOptions {
    pub runtime_dir: PathBuf,
    /// `None` picks `Ipc` when any agent is a process, else `Inproc`.
    pub transport: Option<Transport>,
    pub recv_timeout: Duration,
    /// Deadline for agent readiness and control replies.
    pub agent_timeout: Duration,
    pub store: StoreOptions,
    /// Agent executable for process launches; see [`vagent_binary`].
    pub vagent_bin: Option<PathBuf>,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            runtime_dir: PathBuf::from(DEFAULT_RUNTIME_DIR),
            transport: None,
            recv_timeout: DEFAULT_RECV_TIMEOUT,
            agent_timeout: Duration::from_secs(10),
            store: StoreOptions::default(),
            vagent_bin: None,
        }
    }
}

impl InitOptions {
    /// Defaults overridden by `HALO_RUNTIME_DIR`, `HALO_TRANSPORT`,
    /// `HALO_RECV_TIMEOUT_MS` and `HALO_SHM_CAPACITY_BYTES`.
    pub fn from_env() -> InitOptions {
        let mut o = InitOptions {
            store: StoreOptions::from_env(),
            ..InitOptions::default()
        };
        if let Ok(d) = std::env::var("HALO_RUNTIME_DIR") {
            if !d.trim().is_empty() {
                o.runtime_dir = PathBuf::from(d.trim());
            }
        }
        match std::env::var("HALO_TRANSPORT").as_deref().map(str::trim) {
            Ok("ipc") => o.transport = Some(Transport::Ipc),
            Ok("inproc") => o.transport = Some(Transport::Inproc),
            Ok(other) if !other.is_empty() => {
                tracing::warn!(value = other, "ignoring unknown HALO_TRANSPORT")
            }
            _ => {}
        }
        if let Some(ms) = std::env::var("HALO_RECV_TIMEOUT_MS")
            .ok()
            .and_then(|v| v.trim().parse::<u64>().ok())
        {
            o.recv_timeout = Duration::from_millis(ms);
        }
        o
    }

    pub fn transport_for(&self, cfg: &HaloConfig) -> Transport {
        self.transport.unwrap_or_else(|| {
            if cfg.platform_list.iter().any(|p| p.launch == Launch::Process) {
                Transport::Ipc
            } else {
                Transport::Inproc
            }
        })
    }
}

/// The platform list, or one optimized-CPU thread agent when it is empty.
pub fn platforms(cfg: &HaloConfig) -> Vec<PlatformEntry> {
    if cfg.platform_list.is_empty() {
        vec![PlatformEntry::new("cpu_opt")]
    } else {
        cfg.platform_list.clone()
    }
}

pub enum AgentRuntime {
    Thread(AgentHandle),
    /// A child process we spawned and must stop.
    Process(Child),
    /// An agent that was already listening; left running at finalize.
    Shared,
}

pub struct LaunchedAgent {
    pub address: Address,
    pub backend: String,
    pub runtime: AgentRuntime,
}

impl LaunchedAgent {
    /// Stops agents this context owns. Shared agents are left alone.
    pub fn stop(self, grace: Duration) {
        match self.runtime {
            AgentRuntime::Thread(h) => h.shutdown(),
            AgentRuntime::Process(mut child) => {
                if let Ok(s) = Sender::connect(&self.address) {
                    let _ = s.send(&Envelope::new(MsgType::Shutdown, 0, 0));
                }
                let deadline = Instant::now() + grace;
                loop {
                    match child.try_wait() {
                        Ok(Some(_)) => break,
                        Ok(None) if Instant::now() < deadline => {
                            std::thread::sleep(Duration::from_millis(5))
                        }
                        _ => {
                            tracing::warn!(addr = %self.address, "agent did not stop; killing it");
                            let _ = child.kill();
                            let _ = child.wait();
                            break;
                        }
                    }
                }
            }
            AgentRuntime::Shared => {}
        }
    }
}

fn backend_of(p: &PlatformEntry) -> Result<Backend> {
    Ok(Backend::parse(&p.backend)?.with_delays(
        Duration::from_micros(p.sim_t2_us),
        Duration::from_micros(p.sim_t3_us),
    ))
}

/// Where a process agent listens. Agents reply next to their own endpoint,
/// so it must sit in the runtime directory.
fn process_endpoint(p: &PlatformEntry, replica: u32, dir: &Path) -> Result<Address> {
    let name = match &p.endpoint {
        None => return Ok(Address::Unix(dir.join(format!("halo-agent-{}-{replica}", p.backend)))),
        Some(e) if p.replicas > 1 => format!("{e}-{replica}"),
        Some(e) => e.clone(),
    };
    let addr = if name.contains("://") || name.starts_with('/') {
        Address::parse(&name)?
    } else {
        Address::Unix(dir.join(name))
    };
    match &addr {
        Address::Unix(path) if path.parent() == Some(dir) => Ok(addr),
        _ => Err(HaloError::BadArgument(format!(
            "agent endpoint {addr} must be a socket in the runtime directory {}",
            dir.display()
        ))),
    }
}

pub fn launch(
    cfg: &HaloConfig,
    rank: u32,
    transport: Transport,
    opts: &InitOptions,
) -> Result<Vec<LaunchedAgent>> {
    let mut out: Vec<LaunchedAgent> = Vec::new();
    let result = (|| {
        for p in platforms(cfg) {
            let backend = backend_of(&p)?;
            let kernels = p.kernels.as_ref().map(PathBuf::from);
            for r in 0..p.replicas.max(1) {
                let i = out.len();
                let agent = match p.launch {
                    Launch::Thread => {
                        let address = match transport {
                            Transport::Inproc => Address::Inproc(format!("halo-agent-{rank}-{i}")),
                            Transport::Ipc => Address::Unix(opts.runtime_dir.join(format!("halo-agent-{rank}-{i}"))),
                        };
                        let mut repo = KernelRepository::builtin(&backend);
                        if let Some(dir) = &kernels {
                            repo.load_dir(dir)?;
                        }
                        LaunchedAgent {
                            runtime: AgentRuntime::Thread(AgentHandle::spawn(backend.clone(), address.clone(), repo)?),
                            address,
                            backend: backend.id().to_string(),
                        }
                    }
                    Launch::Process => {
                        if transport != Transport::Ipc {
                            return Err(HaloError::BadArgument(
                                "process agents need the ipc transport".into(),
                            ));
                        }
                        let address = process_endpoint(&p, r, &opts.runtime_dir)?;
                        let runtime = if address.is_live() {
                            tracing::info!(%address, "attaching to running agent");
                            AgentRuntime::Shared
                        } else {
                            AgentRuntime::Process(spawn_process(&backend, &address, kernels.as_deref(), opts)?)
                        };
                        LaunchedAgent {
                            address,
                            backend: backend.id().to_string(),
                            runtime,
                        }
                    }
                };
                out.push(agent);
            }
        }
        Ok(())
    })();
    match result {
        Ok(()) => Ok(out),
        Err(e) => {
            for a in out {
                a.stop(Duration::from_secs(2));
            }
            Err(e)
        }
    }
}

/// Locates the `halo-vagent` executable: `HALO_VAGENT_BIN`, then next to the
/// current executable or one directory up (test binaries live in `deps/`).
pub fn vagent_binary() -> Option<PathBuf> {
    if let Ok(p) = std::env::var("HALO_VAGENT_BIN") {
        return Some(PathBuf::from(p));
    }
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?;
    [dir.join("halo-vagent"), dir.parent()?.join("halo-vagent")]
        .into_iter()
        .find(|p| p.is_file())
}

#[derive(Debug, Deserialize)]
pub struct Readiness {
    pub ready: bool,
    pub endpoint: String,
    pub backend: String,
    pub pid: u32,
    #[serde(default)]
    pub kernels: usize,
}

fn spawn_process(backend: &Backend, address: &Address, kernels: Option<&Path>, opts: &InitOptions) -> Result<Child> {
    let timeout = opts.agent_timeout;
    let bin = opts.vagent_bin.clone().or_else(vagent_binary).ok_or_else(|| {
        HaloError::NoResource("halo-vagent executable not found (set HALO_VAGENT_BIN)".into())
    })?;
    let mut cmd = Command::new(&bin);
    cmd.arg("--backend")
        .arg(backend.id())
        .arg("--endpoint")
        .arg(address.to_string())
        .arg("--sim-t2-us")
        .arg(backend.sim_t2.as_micros().to_string())
        .arg("--sim-t3-us")
        .arg(backend.sim_t3.as_micros().to_string())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit());
    if let Some(k) = kernels {
        cmd.arg("--kernels").arg(k);
    }
    let mut child = cmd
        .spawn()
        .map_err(|e| HaloError::NoResource(format!("cannot start {}: {e}", bin.display())))?;
    let stdout = child.stdout.take().expect("stdout is piped");
    let (tx, rx) = crossbeam::channel::bounded(1);
    std::thread::spawn(move || {
        let mut line = String::new();
        let mut r = BufReader::new(stdout);
        let _ = tx.send(r.read_line(&mut line).map(|_| line.clone()));
        // keep draining so the agent never blocks on a full pipe
        let mut sink = String::new();
        while matches!(r.read_line(&mut sink), Ok(n) if n > 0) {
            sink.clear();
        }
    });
    let fail = |child: &mut Child, msg: String| {
        let _ = child.kill();
        let _ = child.wait();
        HaloError::NoResource(msg)
    };
    let line = match rx.recv_timeout(timeout) {
        Ok(Ok(l)) => l,
        Ok(Err(e)) => return Err(fail(&mut child, format!("agent at {address}: {e}"))),
        Err(_) => return Err(fail(&mut child, format!("agent at {address} not ready within {timeout:?}"))),
    };
    match serde_json::from_str::<Readiness>(line.trim()) {
        Ok(r) if r.ready => {
            tracing::info!(endpoint = %r.endpoint, pid = r.pid, kernels = r.kernels, "agent ready");
            Ok(child)
        }
        _ => Err(fail(&mut child, format!("agent at {address} reported {:?}", line.trim()))),
    }
}
