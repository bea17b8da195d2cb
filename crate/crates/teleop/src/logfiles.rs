//! Trial log files on disk: `<session>_<trial>_<mode>.events.jsonl` next to
//! `<session>_<trial>_<mode>.telemetry.jsonl`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bodylink::log::{parse_events, parse_telemetry, EventRecord, LogHeader, LogKind, Snapshot, TrialLog};

pub fn stem(header: &LogHeader) -> String {
    format!("{}_t{:03}_{}", header.session_id, header.trial_id, header.mode)
}

/// Writes both files and returns their paths.
pub fn write_trial(dir: &Path, log: &TrialLog) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let stem = stem(&log.header);
    let events = dir.join(format!("{stem}.events.jsonl"));
    let telemetry = dir.join(format!("{stem}.telemetry.jsonl"));
    std::fs::write(&events, log.events_jsonl()).with_context(|| format!("writing {}", events.display()))?;
    std::fs::write(&telemetry, log.telemetry_jsonl()).with_context(|| format!("writing {}", telemetry.display()))?;
    Ok((events, telemetry))
}

/// Expands glob patterns (plain paths pass through) into a sorted, de-duplicated file list.
pub fn expand(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for pattern in patterns {
        let mut matched = false;
        for entry in glob::glob(pattern).with_context(|| format!("bad pattern '{pattern}'"))? {
            out.push(entry?);
            matched = true;
        }
        if !matched {
            bail!("no files match '{pattern}'");
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

enum Parsed {
    Events(LogHeader, Vec<EventRecord>),
    Telemetry(LogHeader, Vec<Snapshot>),
}

fn parse_file(path: &Path) -> Result<Parsed> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().next().unwrap_or_default();
    let kind: Option<LogKind> = serde_json::from_str::<serde_json::Value>(first)
        .ok()
        .and_then(|v| v.get("kind").cloned())
        .and_then(|k| serde_json::from_value(k).ok());
    match kind {
        Some(LogKind::Telemetry) => {
            let (h, rows) = parse_telemetry(&text).with_context(|| path.display().to_string())?;
            Ok(Parsed::Telemetry(h, rows))
        }
        _ => {
            let (h, rows) = parse_events(&text).with_context(|| path.display().to_string())?;
            Ok(Parsed::Events(h, rows))
        }
    }
}

type TrialKey = (String, String, u32);

/// Loads and pairs event and telemetry files. A trial needs both.
pub fn load_trials(paths: &[PathBuf]) -> Result<Vec<TrialLog>> {
    let mut events: BTreeMap<TrialKey, (LogHeader, Vec<EventRecord>, PathBuf)> = BTreeMap::new();
    let mut telemetry: BTreeMap<TrialKey, (Vec<Snapshot>, PathBuf)> = BTreeMap::new();
    for path in paths {
        match parse_file(path)? {
            Parsed::Events(h, rows) => {
                let key = (h.session_id.clone(), h.config_hash.clone(), h.trial_id);
                if let Some((_, _, other)) = events.insert(key, (h, rows, path.clone())) {
                    bail!("{} and {} hold the same trial", other.display(), path.display());
                }
            }
            Parsed::Telemetry(h, rows) => {
                let key = (h.session_id.clone(), h.config_hash.clone(), h.trial_id);
                if let Some((_, other)) = telemetry.insert(key, (rows, path.clone())) {
                    bail!("{} and {} hold the same trial", other.display(), path.display());
                }
            }
        }
    }
    let mut out = Vec::new();
    for (key, (header, ev, path)) in events {
        let Some((tel, _)) = telemetry.remove(&key) else {
            bail!("{}: no matching telemetry file", path.display());
        };
        out.push(TrialLog {
            header,
            events: ev,
            telemetry: tel,
        });
    }
    if let Some((_, path)) = telemetry.values().next() {
        bail!("{}: no matching event file", path.display());
    }
    Ok(out)
}

/// Reads one trial given either of its two files.
pub fn load_one(path: &Path) -> Result<TrialLog> {
    let name = path.to_string_lossy();
    let sibling = if let Some(base) = name.strip_suffix(".events.jsonl") {
        PathBuf::from(format!("{base}.telemetry.jsonl"))
    } else if let Some(base) = name.strip_suffix(".telemetry.jsonl") {
        PathBuf::from(format!("{base}.events.jsonl"))
    } else {
        bail!("{}: expected a *.events.jsonl or *.telemetry.jsonl file", path.display());
    };
    let mut trials = load_trials(&[path.to_owned(), sibling])?;
    Ok(trials.remove(0))
}
