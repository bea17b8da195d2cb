//! Re-emits a recorded trial as the stream a live console would have seen.

use std::net::SocketAddr;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Result};
use bodylink::log::TrialLog;

use crate::server::{listen, Greeting, Hub};
use crate::wire::{Outbound, PROTOCOL_VERSION};

/// Messages in emission order with their log timestamps. At equal timestamps events come
/// before the snapshot, as in a live session.
pub fn replay_stream(log: &TrialLog) -> Vec<(f64, Outbound)> {
    let mut out = Vec::with_capacity(log.events.len() + log.telemetry.len() + 1);
    let (mut e, mut s) = (0, 0);
    while e < log.events.len() || s < log.telemetry.len() {
        let take_event = match (log.events.get(e), log.telemetry.get(s)) {
            (Some(ev), Some(snap)) => ev.event.t <= snap.t,
            (Some(_), None) => true,
            _ => false,
        };
        if take_event {
            out.push((log.events[e].event.t, Outbound::Event(log.events[e].clone())));
            e += 1;
        } else {
            out.push((log.telemetry[s].t, Outbound::Snapshot(Box::new(log.telemetry[s].clone()))));
            s += 1;
        }
    }
    if let Some(last) = log.events.last() {
        let t = out.last().map_or(last.event.t, |(t, _)| *t);
        let (completed, reason) = match last.event.kind {
            bodylink::trial::EventKind::TrialCompleted => (true, None),
            bodylink::trial::EventKind::TrialAborted => (false, Some("aborted in the recorded session".to_owned())),
            _ => (false, Some("log ends before the trial finished".to_owned())),
        };
        out.push((
            t,
            Outbound::TrialFinished {
                trial_id: log.header.trial_id,
                completed,
                reason,
            },
        ));
    }
    out
}

/// Emits the stream paced at `speed` times real time (`speed = 0` or infinite: no pacing).
pub fn play(stream: &[(f64, Outbound)], speed: f64, mut sink: impl FnMut(&Outbound) -> Result<()>) -> Result<()> {
    if speed.is_nan() || speed < 0.0 {
        bail!("--speed must be positive (got {speed})");
    }
    let paced = speed > 0.0 && speed.is_finite();
    let t0 = stream.first().map_or(0.0, |(t, _)| *t);
    let start = Instant::now();
    for (t, msg) in stream {
        if paced {
            let due = start + Duration::from_secs_f64(((t - t0) / speed).max(0.0));
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        sink(msg)?;
    }
    Ok(())
}

/// Serves the replay to consoles: waits for the first console, then broadcasts the stream.
pub fn serve_replay(log: &TrialLog, addr: SocketAddr, speed: f64, on_listen: impl FnOnce(SocketAddr)) -> Result<()> {
    let stop = Arc::new(AtomicBool::new(false));
    let hub = Arc::new(Hub::default());
    let greeting = Greeting {
        welcome: Outbound::Welcome {
            version: PROTOCOL_VERSION,
            config_hash: log.header.config_hash.clone(),
            session_id: log.header.session_id.clone(),
            tick_rate_control: 0,
            tick_rate_telemetry: 0,
            replay: true,
        },
        config_hash: log.header.config_hash.clone(),
    };
    let (local, accept) = listen(addr, greeting, hub.clone(), stop.clone())?;
    on_listen(local);
    while hub.is_empty() {
        thread::sleep(Duration::from_millis(5));
    }
    let stream = replay_stream(log);
    play(&stream, speed, |msg| {
        hub.broadcast(msg);
        Ok(())
    })?;
    // Let writers flush before the sockets close.
    thread::sleep(Duration::from_millis(50));
    stop.store(true, std::sync::atomic::Ordering::Relaxed);
    let _ = accept.join();
    Ok(())
}
