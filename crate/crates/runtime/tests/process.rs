//! Agents as separate `halo-vagent` processes over Unix sockets and named
//! shared-memory regions.

mod common;

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use common::*;
use halo_core::ipc::Address;
use halo_runtime::{
    Argument, Comm, ComputeObject, InitOptions, MpixType, ParentContext, ParentRank, Payload, StatusCode, Transport,
};

const VAGENT: &str = env!("CARGO_BIN_EXE_halo-vagent");

fn ipc_options(dir: &Path) -> InitOptions {
    InitOptions {
        runtime_dir: dir.to_path_buf(),
        transport: Some(Transport::Ipc),
        vagent_bin: Some(VAGENT.into()),
        ..options()
    }
}

fn mmm_args(a: f64, b: f64) -> Payload<'static> {
    Payload::Object(ComputeObject::new(vec![
        dims(&[1, 1, 1]),
        Argument::from_f64(&[a]),
        Argument::from_f64(&[b]),
    ]))
}

/// Starts a standalone agent and waits for its readiness line.
fn standalone_agent(endpoint: &Path) -> Child {
    let mut child = Command::new(VAGENT)
        .args(["--backend", "cpu_opt", "--endpoint"])
        .arg(endpoint)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["ready"], true);
    child
}

#[test]
fn spawned_process_agent_serves_and_stops() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = ParentContext::initialize_with(
        config(r#"{"backend":"cpu_naive","launch":"process","replicas":2}"#),
        ipc_options(dir.path()),
    )
    .unwrap();
    let agents = ctx.agents();
    assert_eq!(agents.len(), 2);
    assert!(agents.iter().all(|a| a.backend == "cpu_naive"));

    let cr = ctx.claim("MMM", None, None).unwrap();
    for i in 0..10 {
        ctx.send(mmm_args(i as f64, 3.0), 1, MpixType::ComputeObject, cr, i, Comm::World).unwrap();
    }
    for i in 0..10 {
        let co = ctx.recv(cr, i).unwrap();
        assert_eq!(ctx.read_f64(&co, 0).unwrap(), vec![3.0 * i as f64]);
        ctx.release(&co);
    }
    let served: Vec<u64> = ctx.agent_metrics().unwrap().iter().map(|(_, m)| m.executions).collect();
    assert_eq!(served.iter().sum::<u64>(), 10);

    let endpoints: Vec<Address> = agents.iter().map(|a| Address::parse(&a.address).unwrap()).collect();
    let report = ctx.finalize().unwrap();
    assert_eq!(report.leaked_bytes, 0);
    assert!(endpoints.iter().all(|e| !e.is_live()), "agents outlived finalize");
}

#[test]
fn running_agent_is_shared_and_left_running() {
    let dir = tempfile::tempdir().unwrap();
    let endpoint = dir.path().join("shared-agent");
    let mut agent = standalone_agent(&endpoint);
    let platforms = r#"{"backend":"cpu_opt","launch":"process","endpoint":"shared-agent"}"#;

    let a = ParentContext::initialize_with(config(platforms), ipc_options(dir.path())).unwrap();
    let b = ParentContext::initialize_with(config(platforms), ipc_options(dir.path())).unwrap();
    let ca = a.claim("MMM", None, None).unwrap();
    let cb = b.claim("MMM", None, None).unwrap();
    a.send(mmm_args(2.0, 3.0), 1, MpixType::ComputeObject, ca, 0, Comm::World).unwrap();
    b.send(mmm_args(5.0, 7.0), 1, MpixType::ComputeObject, cb, 0, Comm::World).unwrap();
    let ra = a.recv(ca, 0).unwrap();
    let rb = b.recv(cb, 0).unwrap();
    assert_eq!(a.read_f64(&ra, 0).unwrap(), vec![6.0]);
    assert_eq!(b.read_f64(&rb, 0).unwrap(), vec![35.0]);
    assert_eq!(a.finalize().unwrap().leaked_bytes, 0);
    assert_eq!(b.finalize().unwrap().leaked_bytes, 0);

    assert!(Address::Unix(endpoint.clone()).is_live());
    assert!(agent.try_wait().unwrap().is_none());
    agent.kill().unwrap();
    agent.wait().unwrap();
}

#[test]
fn endpoints_outside_the_runtime_dir_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let err = ParentContext::initialize_with(
        config(r#"{"backend":"cpu_opt","launch":"process","endpoint":"/tmp/elsewhere/agent"}"#),
        ipc_options(dir.path()),
    )
    .unwrap_err();
    assert_eq!(err.status(), StatusCode::ErrBadArgument);
}

const PEER_DIR: &str = "HALO_TEST_PEER_DIR";

/// The forwarding target, run in a child process by
/// `send_fwd_delivers_to_another_process`.
#[test]
#[ignore = "runs as the peer of send_fwd_delivers_to_another_process"]
fn forwarding_peer() {
    let Ok(dir) = std::env::var(PEER_DIR) else {
        return;
    };
    let ctx = ParentContext::initialize_with(
        config(r#"{"backend":"cpu_opt","launch":"process","endpoint":"fwd-agent"}"#),
        ipc_options(Path::new(&dir)),
    )
    .unwrap();
    println!("PEER rank {}", ctx.rank().0);
    let got = ctx
        .recv_timed(halo_runtime::ChildRank::ANY, 9, Some(Duration::from_secs(20)))
        .unwrap();
    println!("PEER result {:?}", ctx.read_f64(&got.object, 0).unwrap());
    ctx.release(&got.object);
    let report = ctx.finalize().unwrap();
    println!(
        "PEER done leaked={} forwarded={}",
        report.leaked_bytes, report.protocol.forwarded_received
    );
}

#[test]
fn send_fwd_delivers_to_another_process() {
    let dir = tempfile::tempdir().unwrap();
    let a = ParentContext::initialize_with(
        config(r#"{"backend":"cpu_opt","launch":"process","endpoint":"fwd-agent"}"#),
        ipc_options(dir.path()),
    )
    .unwrap();

    let mut peer = Command::new(std::env::current_exe().unwrap())
        .args(["forwarding_peer", "--exact", "--ignored", "--nocapture", "--test-threads=1"])
        .env(PEER_DIR, dir.path())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(peer.stdout.take().unwrap()).lines();
    let mut next_peer_line = || loop {
        let l = lines.next().expect("peer output").unwrap();
        // libtest prints the test name on the same line
        if let Some(i) = l.find("PEER ") {
            return l[i + 5..].to_string();
        }
    };
    let rank: u32 = next_peer_line().strip_prefix("rank ").unwrap().parse().unwrap();

    let cr = a.claim("MMM", None, None).unwrap();
    let x = [1.0, 2.0, 3.0, 4.0];
    let y = [0.5, -1.0, 2.0, 8.0];
    a.send_fwd(
        Payload::Object(ComputeObject::new(vec![dims(&[2, 2, 2]), Argument::from_f64(&x), Argument::from_f64(&y)])),
        1,
        MpixType::ComputeObject,
        cr,
        9,
        Comm::World,
        ParentRank(rank),
    )
    .unwrap();

    let want = naive_matmul(&x, &y, 2, 2, 2);
    assert_eq!(next_peer_line(), format!("result {want:?}"));
    assert_eq!(next_peer_line(), "done leaked=0 forwarded=1");
    assert!(peer.wait().unwrap().success());
    assert_eq!(
        a.recv_timed(cr, 9, Some(Duration::from_millis(200))).unwrap_err().status(),
        StatusCode::ErrTimeout
    );
    let report = a.finalize().unwrap();
    assert_eq!(report.leaked_bytes, 0);
    assert_eq!(report.protocol.forwarded_sent, 1);
}
