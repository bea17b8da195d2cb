//! Live service over localhost TCP with a synthetic console.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use bodylink::log::TrialStatus;
use bodylink::session::{body_pose_message, InboundMessage};
use bodylink::trial::EventKind;
use bodylink_teleop::config::LoadedConfig;
use bodylink_teleop::logfiles;
use bodylink_teleop::server::{self, Client, ServeOptions, ServerHandle};
use bodylink_teleop::wire::{read_frame, write_frame, Hello, Outbound};

fn config() -> LoadedConfig {
    LoadedConfig::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json")).unwrap()
}

fn serve(cfg: &LoadedConfig, log_dir: PathBuf, tweak: impl FnOnce(&mut bodylink::session::SessionSetup)) -> ServerHandle {
    let mut setup = cfg.setup().unwrap();
    tweak(&mut setup);
    server::spawn(
        setup,
        &ServeOptions {
            addr: "127.0.0.1:0".parse().unwrap(),
            log_dir,
        },
    )
    .unwrap()
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

#[test]
fn heartbeat_round_trip_is_fast() {
    let cfg = config();
    let dir = tempfile::tempdir().unwrap();
    let server = serve(&cfg, dir.path().to_owned(), |_| {});
    let mut client = Client::connect(server.addr, Some(cfg.hash.clone())).unwrap();
    match &client.welcome {
        Outbound::Welcome { config_hash, tick_rate_control, .. } => {
            assert_eq!(config_hash, &cfg.hash);
            assert_eq!(*tick_rate_control, 100);
        }
        other => panic!("{other:?}"),
    }
    let mut samples = Vec::new();
    for _ in 0..10 {
        let sent = Instant::now();
        client.send(&InboundMessage::Heartbeat {}).unwrap();
        loop {
            if let Some(Outbound::HeartbeatAck { .. }) = client.recv().unwrap() {
                break;
            }
        }
        samples.push(sent.elapsed());
    }
    let worst = *samples.iter().max().unwrap();
    assert!(worst < Duration::from_millis(50), "worst heartbeat round trip {worst:?}");
    server.stop().unwrap();
}

#[test]
fn handshake_refuses_mismatches() {
    let cfg = config();
    let dir = tempfile::tempdir().unwrap();
    let server = serve(&cfg, dir.path().to_owned(), |_| {});
    let err = Client::connect(server.addr, Some("deadbeef".into())).err().unwrap().to_string();
    assert!(err.contains("config hash mismatch"), "{err}");

    let mut raw = std::net::TcpStream::connect(server.addr).unwrap();
    write_frame(&mut raw, &Hello { version: 99, config_hash: None }).unwrap();
    match read_frame::<_, Outbound>(&mut raw).unwrap() {
        Some(Outbound::Error { message }) => assert!(message.contains("v99"), "{message}"),
        other => panic!("{other:?}"),
    }
    // No hash offered: accepted.
    assert!(Client::connect(server.addr, None).is_ok());
    server.stop().unwrap();
}

#[test]
fn joystick_shows_up_in_snapshots_within_a_tick_and_a_telemetry_period() {
    let cfg = config();
    let dir = tempfile::tempdir().unwrap();
    let server = serve(&cfg, dir.path().to_owned(), |s| s.mode.mode = bodylink::link::ControlMode::Joystick);
    let mut client = Client::connect(server.addr, None).unwrap();
    client.send(&InboundMessage::SetMode { mode: bodylink::link::ControlMode::Joystick }).unwrap();
    client.send(&InboundMessage::StartTrial {}).unwrap();
    let latest_desired = |client: &mut Client| loop {
        if let Some(Outbound::Snapshot(s)) = client.recv().unwrap() {
            if s.status == TrialStatus::Running {
                return (s.desired.translation, s.tick);
            }
        }
    };
    let mut samples = Vec::new();
    for k in 0..7 {
        let (before, _) = latest_desired(&mut client);
        // Alternate direction so the effector stays near home.
        let d = if k % 2 == 0 { 1.0 } else { -1.0 };
        let sent = Instant::now();
        client
            .send(&InboundMessage::Joystick { t: k as f64, deflection: [0.0, d, 0.0] })
            .unwrap();
        loop {
            let (now, _) = latest_desired(&mut client);
            if ((now - before).y * d) > 1e-9 {
                break;
            }
        }
        samples.push(sent.elapsed());
        client.send(&InboundMessage::Joystick { t: k as f64 + 0.5, deflection: [0.0; 3] }).unwrap();
        std::thread::sleep(Duration::from_millis(60));
    }
    let m = median(samples.clone());
    assert!(m <= Duration::from_millis(43), "median latency {m:?} over {samples:?}");
    server.stop().unwrap();
}

#[test]
fn scripted_joystick_session_over_the_wire_validates_and_logs() {
    let cfg = config();
    let dir = tempfile::tempdir().unwrap();
    let server = serve(&cfg, dir.path().to_owned(), |s| {
        s.mode.mode = bodylink::link::ControlMode::Joystick;
        s.trial.n_pairs = 1;
    });
    let mut client = Client::connect(server.addr, None).unwrap();
    client.set_timeout(Some(Duration::from_secs(30))).unwrap();
    client.send(&InboundMessage::StartTrial {}).unwrap();
    let mut validated = 0;
    let mut t = 0.0;
    loop {
        match client.recv().unwrap().expect("stream open") {
            Outbound::Snapshot(s) => {
                if let Some(target) = &s.target {
                    // Proportional joystick toward the target, like the scripted operator.
                    let e: Vec<f64> = (0..3).map(|i| target.position[i] - s.desired.translation[i]).collect();
                    let d = e.iter().map(|v| (v * 10.0).clamp(-1.0, 1.0)).collect::<Vec<_>>();
                    t += 1.0;
                    client
                        .send(&InboundMessage::Joystick { t, deflection: [d[0], d[1], d[2]] })
                        .unwrap();
                }
            }
            Outbound::Event(e) if e.event.kind == EventKind::TargetValidated => validated += 1,
            Outbound::TrialFinished { completed, .. } => {
                assert!(completed);
                break;
            }
            _ => {}
        }
    }
    assert_eq!(validated, 2);
    let written = server.stop().unwrap();
    assert_eq!(written.len(), 2);
    let log = logfiles::load_one(&written[0]).unwrap();
    assert_eq!(log.events.iter().filter(|e| e.event.kind == EventKind::TargetValidated).count(), 2);
    assert!(log.telemetry.iter().all(|s| s.config_hash == cfg.hash && s.session_id == "desk"));
}

#[test]
fn closing_the_input_stream_aborts_the_trial() {
    let cfg = config();
    let dir = tempfile::tempdir().unwrap();
    let server = serve(&cfg, dir.path().to_owned(), |_| {});
    {
        let mut client = Client::connect(server.addr, None).unwrap();
        let setup = cfg.setup().unwrap();
        client
            .send(&body_pose_message(&setup.registry, &setup.initial_body, 0.0))
            .unwrap();
        client.send(&InboundMessage::StartTrial {}).unwrap();
        // Wait for the trial to be visibly running.
        loop {
            if let Some(Outbound::Event(e)) = client.recv().unwrap() {
                if e.event.kind == EventKind::TargetShown {
                    break;
                }
            }
        }
    }
    // The loop notices the disconnect on its next tick.
    let deadline = Instant::now() + Duration::from_secs(5);
    let events = loop {
        let found: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.to_string_lossy().ends_with(".events.jsonl"))
            .collect();
        if !found.is_empty() || Instant::now() > deadline {
            break found;
        }
        std::thread::sleep(Duration::from_millis(10));
    };
    assert_eq!(events.len(), 1, "no log written after disconnect");
    let log = logfiles::load_one(&events[0]).unwrap();
    assert_eq!(log.events.last().unwrap().event.kind, EventKind::TrialAborted);
    server.stop().unwrap();
}

#[test]
fn bad_inputs_are_rejected_not_fatal() {
    let cfg = config();
    let dir = tempfile::tempdir().unwrap();
    let server = serve(&cfg, dir.path().to_owned(), |_| {});
    let mut client = Client::connect(server.addr, None).unwrap();
    client.send(&InboundMessage::Joystick { t: 0.0, deflection: [3.0, 0.0, 0.0] }).unwrap();
    let reason = loop {
        if let Some(Outbound::Rejected { reason }) = client.recv().unwrap() {
            break reason;
        }
    };
    assert!(reason.contains("outside"), "{reason}");
    client.send(&InboundMessage::Heartbeat {}).unwrap();
    loop {
        if let Some(Outbound::HeartbeatAck { .. }) = client.recv().unwrap() {
            break;
        }
    }
    server.stop().unwrap();
}
