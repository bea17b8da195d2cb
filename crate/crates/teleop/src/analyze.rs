//! Offline analysis of trial logs into CSV tables and a JSON report.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bodylink::log::TrialLog;
use bodylink::metrics::{self, AnalysisReport, SummaryStats};
use serde::Serialize;

use crate::logfiles;

/// Default Bonferroni factor for the pairwise mode comparisons.
pub const DEFAULT_BONFERRONI: u32 = 2;

#[derive(Clone, Debug)]
pub struct AnalyzeOptions {
    /// Accept logs produced under different config hashes.
    pub force: bool,
    pub bonferroni_m: u32,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            force: false,
            bonferroni_m: DEFAULT_BONFERRONI,
        }
    }
}

pub fn analyze_logs(mut logs: Vec<TrialLog>, opts: &AnalyzeOptions) -> Result<AnalysisReport> {
    if logs.is_empty() {
        bail!("no trials to analyze");
    }
    let mut hashes: Vec<&str> = logs.iter().map(|l| l.header.config_hash.as_str()).collect();
    hashes.sort_unstable();
    hashes.dedup();
    if hashes.len() > 1 && !opts.force {
        bail!(
            "logs come from {} different configs ({}); pass --force to analyze them together",
            hashes.len(),
            hashes.iter().map(|h| &h[..h.len().min(12)]).collect::<Vec<_>>().join(", ")
        );
    }
    logs.sort_by(|a, b| {
        (a.header.mode.as_str(), &a.header.session_id, a.header.trial_id)
            .cmp(&(b.header.mode.as_str(), &b.header.session_id, b.header.trial_id))
    });
    Ok(metrics::analyze(&logs, opts.bonferroni_m)?)
}

#[derive(Serialize)]
struct TargetRow<'a> {
    session_id: &'a str,
    participant_id: &'a str,
    trial_id: u32,
    mode: &'a str,
    target_index: usize,
    t_shown: f64,
    t_validated: f64,
    completion_time: f64,
}

#[derive(Serialize)]
struct ContributionRow<'a> {
    session_id: &'a str,
    trial_id: u32,
    mode: &'a str,
    target_index: usize,
    axis: &'static str,
    valid: bool,
    delta: f64,
    b: f64,
    j: f64,
}

#[derive(Serialize)]
struct DisplacementRow<'a> {
    session_id: &'a str,
    trial_id: u32,
    mode: &'a str,
    target_index: usize,
    measure: &'static str,
    x: f64,
    y: f64,
    z: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    mode: &'a str,
    metric: String,
    n: usize,
    median: f64,
    q25: f64,
    q75: f64,
    mean: f64,
    std_dev: Option<f64>,
    whisker_low: f64,
    whisker_high: f64,
    single_value: bool,
}

impl<'a> SummaryRow<'a> {
    fn new(mode: &'a str, metric: String, s: &SummaryStats) -> Self {
        Self {
            mode,
            metric,
            n: s.n,
            median: s.median,
            q25: s.q25,
            q75: s.q75,
            mean: s.mean,
            std_dev: s.std_dev,
            whisker_low: s.whisker_low,
            whisker_high: s.whisker_high,
            single_value: s.single_value,
        }
    }
}

#[derive(Serialize)]
struct TestRow<'a> {
    metric: &'a str,
    mode_a: &'a str,
    mode_b: &'a str,
    n_a: usize,
    n_b: usize,
    u: f64,
    p: f64,
    p_bonferroni: f64,
    method: &'static str,
}

#[derive(Serialize)]
struct CurveRow<'a> {
    mode: &'a str,
    axis: &'static str,
    reaches: usize,
    tau: f64,
    b: f64,
    j: f64,
}

const AXES: [&str; 3] = ["x", "y", "z"];

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every table plus `report.json` into `out`; returns the written paths.
pub fn write_report(report: &AnalysisReport, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = |name: &str| out.join(name);
    let mut written = Vec::new();

    let p = path("targets.csv");
    write_csv(
        &p,
        report.reaches.iter().map(|r| {
            let t = &r.result;
            TargetRow {
                session_id: &t.session_id,
                participant_id: &t.participant_id,
                trial_id: t.trial_id,
                mode: t.mode.as_str(),
                target_index: t.target_index,
                t_shown: t.t_shown,
                t_validated: t.t_validated,
                completion_time: t.completion_time,
            }
        }),
    )?;
    written.push(p);

    let p = path("contributions.csv");
    write_csv(
        &p,
        report.reaches.iter().flat_map(|r| {
            (0..3).map(move |a| ContributionRow {
                session_id: &r.result.session_id,
                trial_id: r.result.trial_id,
                mode: r.result.mode.as_str(),
                target_index: r.result.target_index,
                axis: AXES[a],
                valid: r.valid[a],
                delta: r.delta_final[a],
                b: r.b_final[a],
                j: r.j_final[a],
            })
        }),
    )?;
    written.push(p);

    let p = path("body_displacement.csv");
    write_csv(
        &p,
        report.reaches.iter().flat_map(|r| {
            [("endpoint", r.body_displacement), ("path_length", r.body_path_length)]
                .into_iter()
                .map(move |(measure, d)| DisplacementRow {
                    session_id: &r.result.session_id,
                    trial_id: r.result.trial_id,
                    mode: r.result.mode.as_str(),
                    target_index: r.result.target_index,
                    measure,
                    x: d.x,
                    y: d.y,
                    z: d.z,
                    alpha: d.alpha,
                    beta: d.beta,
                    gamma: d.gamma,
                })
        }),
    )?;
    written.push(p);

    let p = path("summary.csv");
    let mut rows = Vec::new();
    for m in &report.modes {
        let mode = m.mode.as_str();
        rows.push(SummaryRow::new(mode, "completion_time".into(), &m.completion_time));
        for (a, s) in m.b_final.iter().enumerate() {
            if let Some(s) = s {
                rows.push(SummaryRow::new(mode, format!("b_final_{}", AXES[a]), s));
            }
        }
    }
    write_csv(&p, rows)?;
    written.push(p);

    let p = path("tests.csv");
    write_csv(
        &p,
        report.tests.iter().map(|t| TestRow {
            metric: &t.metric,
            mode_a: t.mode_a.as_str(),
            mode_b: t.mode_b.as_str(),
            n_a: t.n_a,
            n_b: t.n_b,
            u: t.u,
            p: t.p,
            p_bonferroni: t.p_corrected,
            method: match t.method {
                metrics::PMethod::Exact => "exact",
                metrics::PMethod::Normal => "normal",
            },
        }),
    )?;
    written.push(p);

    let p = path("median_contribution.csv");
    let mut rows = Vec::new();
    for m in &report.modes {
        for c in &m.median_contribution {
            let n = c.b.len();
            for i in 0..n {
                rows.push(CurveRow {
                    mode: m.mode.as_str(),
                    axis: AXES[c.axis],
                    reaches: c.reaches,
                    tau: i as f64 / (n - 1).max(1) as f64,
                    b: c.b[i],
                    j: c.j[i],
                });
            }
        }
    }
    write_csv(&p, rows)?;
    written.push(p);

    let p = path("report.json");
    std::fs::write(&p, serde_json::to_string_pretty(report)? + "\n").with_context(|| format!("writing {}", p.display()))?;
    written.push(p);
    Ok(written)
}

/// `analyze --logs <patterns> --out <dir>`.
pub fn run(patterns: &[String], out: &Path, opts: &AnalyzeOptions) -> Result<(AnalysisReport, Vec<PathBuf>)> {
    let files = logfiles::expand(patterns)?;
    let logs = logfiles::load_trials(&files)?;
    let report = analyze_logs(logs, opts)?;
    let written = write_report(&report, out)?;
    Ok((report, written))
}
