//! Completion times, body displacement, per-axis body/joystick contributions and the rank
//! statistics used to compare modes.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::link::ControlMode;
use crate::log::{LogHeader, Snapshot, TrialLog};
use crate::se3::Transform;
use crate::trial::EventKind;

/// Axes whose total displacement over a reach is below this are excluded from ratios, m.
pub const CONTRIBUTION_MASK: f64 = 0.02;

/// Sample sizes up to this total use the exact permutation distribution.
pub const EXACT_LIMIT: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("line {line}: target {target} validated without being shown")]
    MissingShown { line: usize, target: usize },
    #[error("trial {trial_id}: no telemetry at t = {t} for target {target}")]
    MissingTelemetry { trial_id: u32, target: usize, t: f64 },
    #[error("empty sample")]
    EmptySample,
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("comparison count must be at least 1")]
    Comparisons,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub session_id: String,
    pub participant_id: String,
    pub trial_id: u32,
    pub mode: ControlMode,
    pub target_index: usize,
    pub t_shown: f64,
    pub t_validated: f64,
    pub completion_time: f64,
}

/// One result per validation, timed from the matching `TargetShown`.
pub fn completion_times(log: &TrialLog) -> Result<Vec<TargetResult>, MetricsError> {
    let h = &log.header;
    let mut shown: BTreeMap<usize, f64> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, rec) in log.events.iter().enumerate() {
        let e = &rec.event;
        match e.kind {
            EventKind::TargetShown => {
                shown.insert(e.target_index, e.t);
            }
            EventKind::TargetValidated => {
                let t_shown = *shown.get(&e.target_index).ok_or(MetricsError::MissingShown {
                    // Line 1 is the header.
                    line: i + 2,
                    target: e.target_index,
                })?;
                out.push(TargetResult {
                    session_id: h.session_id.clone(),
                    participant_id: h.participant_id.clone(),
                    trial_id: h.trial_id,
                    mode: h.mode,
                    target_index: e.target_index,
                    t_shown,
                    t_validated: e.t,
                    completion_time: e.t - t_shown,
                });
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Componentwise absolute body displacement between two instants: translation in meters
/// and angle-axis in radians, both expressed in the body frame at the first instant.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyDisplacement {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl BodyDisplacement {
    pub fn as_array(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.alpha, self.beta, self.gamma]
    }

    fn from_relative(rel: &Transform<f64>) -> Self {
        let t = rel.translation.abs();
        let w = rel.rotation.angle_axis().abs();
        Self {
            x: t.x,
            y: t.y,
            z: t.z,
            alpha: w.x,
            beta: w.y,
            gamma: w.z,
        }
    }
}

/// Endpoint displacement of the body between target appearance and validation.
pub fn total_body_displacement(body_t0: &Transform<f64>, body_tf: &Transform<f64>) -> BodyDisplacement {
    BodyDisplacement::from_relative(&(body_t0.inverse() * *body_tf))
}

/// Path-length variant: sums the componentwise displacement of each consecutive pair of
/// poses. Never smaller than the endpoint measure on translation axes.
pub fn body_path_length(poses: &[Transform<f64>]) -> BodyDisplacement {
    let mut acc = BodyDisplacement::default();
    for pair in poses.windows(2) {
        let d = BodyDisplacement::from_relative(&(pair[0].inverse() * pair[1]));
        acc.x += d.x;
        acc.y += d.y;
        acc.z += d.z;
        acc.alpha += d.alpha;
        acc.beta += d.beta;
        acc.gamma += d.gamma;
    }
    acc
}

/// Telemetry fields needed for the contribution split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContributionSample {
    pub t: f64,
    pub body: Transform<f64>,
    pub link_body: Vector3<f64>,
    pub desired: Vector3<f64>,
}

impl From<&Snapshot> for ContributionSample {
    fn from(s: &Snapshot) -> Self {
        Self {
            t: s.t,
            body: s.body,
            link_body: Vector3::from(s.link_body),
            desired: s.desired.translation,
        }
    }
}

/// Per-axis split of the virtual effector displacement over one reach.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionSeries {
    pub t: Vec<f64>,
    /// Total displacement in the body frame at `t0`.
    pub delta: Vec<[f64; 3]>,
    /// Joystick part.
    pub delta_joystick: Vec<[f64; 3]>,
    pub b: Vec<[f64; 3]>,
    pub j: Vec<[f64; 3]>,
    /// Axes whose final displacement reaches [`CONTRIBUTION_MASK`].
    pub valid: [bool; 3],
}

impl ContributionSeries {
    pub fn final_b(&self) -> [f64; 3] {
        self.b.last().copied().unwrap_or([0.0; 3])
    }

    pub fn final_j(&self) -> [f64; 3] {
        self.j.last().copied().unwrap_or([0.0; 3])
    }

    pub fn final_delta(&self) -> [f64; 3] {
        self.delta.last().copied().unwrap_or([0.0; 3])
    }
}

/// Splits the virtual effector displacement into body and joystick parts.
///
/// `delta(t)` is the desired-position change rotated into the body frame at `t0`.
/// In dual mode the joystick part is the change of the body-frame link vector; this mixes
/// frames once the body has rotated, and is exact only for small body rotations. In joystick
/// mode the body does not enter the law, so all of the displacement is joystick-made; in body
/// mode none of it is.
///
/// Ratios are normalized by the final total displacement; masked axes hold zero.
pub fn contribution_series(samples: &[ContributionSample], mode: ControlMode) -> ContributionSeries {
    let Some(first) = samples.first() else {
        return ContributionSeries {
            t: vec![],
            delta: vec![],
            delta_joystick: vec![],
            b: vec![],
            j: vec![],
            valid: [false; 3],
        };
    };
    let r0t = first.body.rotation.transpose();
    let delta: Vec<Vector3<f64>> = samples
        .iter()
        .map(|s| r0t.apply(&(s.desired - first.desired)))
        .collect();
    let delta_j: Vec<Vector3<f64>> = match mode {
        ControlMode::Dual => samples.iter().map(|s| s.link_body - first.link_body).collect(),
        ControlMode::Joystick => delta.clone(),
        ControlMode::Body => vec![Vector3::zeros(); samples.len()],
    };
    let fin = *delta.last().expect("non-empty");
    let valid = [0, 1, 2].map(|a| fin[a].abs() >= CONTRIBUTION_MASK);
    // `+ 0.0` turns a negative zero into a positive one.
    let ratio = |v: &Vector3<f64>| [0, 1, 2].map(|a| if valid[a] { v[a] / fin[a] + 0.0 } else { 0.0 });
    let b = delta.iter().zip(&delta_j).map(|(d, dj)| ratio(&(d - dj))).collect();
    let j = delta_j.iter().map(ratio).collect();
    ContributionSeries {
        t: samples.iter().map(|s| s.t).collect(),
        delta: delta.iter().map(|v| [v.x, v.y, v.z]).collect(),
        delta_joystick: delta_j.iter().map(|v| [v.x, v.y, v.z]).collect(),
        b,
        j,
        valid,
    }
}

/// One target's reach: telemetry from appearance to validation, inclusive.
#[derive(Clone, Debug, PartialEq)]
pub struct Reach {
    pub result: TargetResult,
    pub samples: Vec<ContributionSample>,
}

impl Reach {
    pub fn contributions(&self) -> ContributionSeries {
        contribution_series(&self.samples, self.result.mode)
    }

    pub fn body_displacement(&self) -> BodyDisplacement {
        let first = self.samples.first().expect("reach has samples");
        let last = self.samples.last().expect("reach has samples");
        total_body_displacement(&first.body, &last.body)
    }

    pub fn body_path_length(&self) -> BodyDisplacement {
        let poses: Vec<_> = self.samples.iter().map(|s| s.body).collect();
        body_path_length(&poses)
    }
}

/// Cuts a trial into reaches. Telemetry must contain rows at the event timestamps.
pub fn reaches(log: &TrialLog) -> Result<Vec<Reach>, MetricsError> {
    let trial_id = log.header.trial_id;
    let rows: Vec<&Snapshot> = log
        .telemetry
        .iter()
        .filter(|s| s.trial_id == Some(trial_id))
        .collect();
    completion_times(log)?
        .into_iter()
        .map(|result| {
            let samples: Vec<ContributionSample> = rows
                .iter()
                .filter(|s| s.t >= result.t_shown && s.t <= result.t_validated)
                .map(|s| ContributionSample::from(*s))
                .collect();
            for t in [result.t_shown, result.t_validated] {
                if !samples.iter().any(|s| s.t == t) {
                    return Err(MetricsError::MissingTelemetry {
                        trial_id,
                        target: result.target_index,
                        t,
                    });
                }
            }
            Ok(Reach { result, samples })
        })
        .collect()
}

/// Resamples `values(t)` on `n` evenly spaced points of normalized time `[0, 1]`.
pub fn resample_normalized(t: &[f64], values: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(t.len(), values.len());
    assert!(n >= 2 && !t.is_empty());
    let (t0, tf) = (t[0], t[t.len() - 1]);
    let span = tf - t0;
    let mut k = 0;
    (0..n)
        .map(|i| {
            if span <= 0.0 {
                return values[values.len() - 1];
            }
            let tau = t0 + span * i as f64 / (n - 1) as f64;
            while k + 1 < t.len() && t[k + 1] < tau {
                k += 1;
            }
            if k + 1 == t.len() {
                return values[k];
            }
            let (ta, tb) = (t[k], t[k + 1]);
            let w = if tb > ta { ((tau - ta) / (tb - ta)).clamp(0.0, 1.0) } else { 1.0 };
            values[k] + w * (values[k + 1] - values[k])
        })
        .collect()
}

/// Pointwise median across curves of equal length.
pub fn median_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    let Some(len) = curves.first().map(Vec::len) else {
        return vec![];
    };
    (0..len)
        .map(|i| {
            let column: Vec<f64> = curves.iter().map(|c| c[i]).collect();
            quantile_sorted(&sorted(&column), 0.5)
        })
        .collect()
}

/// Normalized time at which `curve` first reaches half of its final value, or `None` when
/// the final value is zero.
pub fn half_rise_time(curve: &[f64]) -> Option<f64> {
    let fin = *curve.last()?;
    if fin == 0.0 || curve.len() < 2 {
        return None;
    }
    let half = 0.5 * fin;
    let idx = curve
        .iter()
        .position(|&v| if fin > 0.0 { v >= half } else { v <= half })?;
    Some(idx as f64 / (curve.len() - 1) as f64)
}

/// Median b(t) and j(t) curves on normalized time, per axis, over the reaches where that
/// axis is valid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianContribution {
    pub axis: usize,
    pub reaches: usize,
    pub b: Vec<f64>,
    pub j: Vec<f64>,
    pub b_half_rise: Option<f64>,
    pub j_half_rise: Option<f64>,
}

pub fn median_contributions(series: &[ContributionSeries], points: usize) -> Vec<MedianContribution> {
    (0..3)
        .filter_map(|axis| {
            let used: Vec<&ContributionSeries> = series.iter().filter(|s| s.valid[axis]).collect();
            if used.is_empty() {
                return None;
            }
            let curve = |pick: fn(&ContributionSeries) -> &Vec<[f64; 3]>| {
                let curves: Vec<Vec<f64>> = used
                    .iter()
                    .map(|s| {
                        let v: Vec<f64> = pick(s).iter().map(|r| r[axis]).collect();
                        resample_normalized(&s.t, &v, points)
                    })
                    .collect();
                median_curve(&curves)
            };
            let b = curve(|s| &s.b);
            let j = curve(|s| &s.j);
            Some(MedianContribution {
                axis,
                reaches: used.len(),
                b_half_rise: half_rise_time(&b),
                j_half_rise: half_rise_time(&j),
                b,
                j,
            })
        })
        .collect()
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear interpolation between closest ranks: position `(n - 1) p`.
fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub mean: f64,
    /// Sample standard deviation; `None` for a single value.
    pub std_dev: Option<f64>,
    pub whisker_low: f64,
    pub whisker_high: f64,
    /// Set when the whiskers fall back to the value itself.
    pub single_value: bool,
}

/// Median and quartiles (linear interpolation), whiskers `mean +- 1.96 sd`.
pub fn summarize(values: &[f64]) -> Result<SummaryStats, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let v = sorted(values);
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let std_dev = (n > 1).then(|| {
        let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    let half = 1.96 * std_dev.unwrap_or(0.0);
    Ok(SummaryStats {
        n,
        median: quantile_sorted(&v, 0.5),
        q25: quantile_sorted(&v, 0.25),
        q75: quantile_sorted(&v, 0.75),
        mean,
        std_dev,
        whisker_low: mean - half,
        whisker_high: mean + half,
        single_value: n == 1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// Pairs where the `a` value is larger, ties counting one half.
    pub u: f64,
    pub p: f64,
    pub method: PMethod,
}

/// Mid-ranks (1-based) of the pooled sample, doubled so they are integers, plus the tie
/// group sizes.
fn doubled_midranks(pooled: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pooled[order[end]] == pooled[order[start]] {
            end += 1;
        }
        // Ranks start+1 ..= end; doubled mean = start + 1 + end.
        for &k in &order[start..end] {
            ranks[k] = (start + 1 + end) as u64;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

fn check_sample(values: &[f64]) -> Result<(), MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

/// Two-sided Mann-Whitney U test. Exact when `a.len() + b.len() <= EXACT_LIMIT`, otherwise
/// the tie-corrected normal approximation with continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, MetricsError> {
    let method = if a.len() + b.len() <= EXACT_LIMIT {
        PMethod::Exact
    } else {
        PMethod::Normal
    };
    mann_whitney_u_with(a, b, method)
}

pub fn mann_whitney_u_with(a: &[f64], b: &[f64], method: PMethod) -> Result<MannWhitney, MetricsError> {
    check_sample(a)?;
    check_sample(b)?;
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = doubled_midranks(&pooled);
    let s_obs: u64 = ranks[..na].iter().sum();
    // U_a = R_a - na(na+1)/2, with doubled rank sums.
    let u = (s_obs as f64 - (na * (na + 1)) as f64) / 2.0;
    if ties.len() == 1 {
        return Ok(MannWhitney { u, p: 1.0, method });
    }
    let p = match method {
        PMethod::Exact => exact_p(&ranks, na, s_obs),
        PMethod::Normal => {
            let mean = (na * nb) as f64 / 2.0;
            let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1)) as f64;
            let var = (na * nb) as f64 / 12.0 * ((n + 1) as f64 - tie_term);
            let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
            let normal = Normal::standard();
            2.0 * normal.sf(z)
        }
    };
    Ok(MannWhitney {
        u,
        p: p.clamp(0.0, 1.0),
        method,
    })
}

/// Exact two-sided p over all `C(n, na)` assignments of the pooled mid-ranks to `a`.
fn exact_p(ranks: &[u64], na: usize, s_obs: u64) -> f64 {
    let n = ranks.len();
    let max_sum: usize = ranks.iter().sum::<u64>() as usize;
    // counts[k][s]: subsets of size k with doubled rank sum s.
    let mut counts = vec![vec![0f64; max_sum + 1]; na + 1];
    counts[0][0] = 1.0;
    for &r in ranks {
        let r = r as usize;
        for k in (1..=na).rev() {
            for s in (r..=max_sum).rev() {
                let c = counts[k - 1][s - r];
                if c != 0.0 {
                    counts[k][s] += c;
                }
            }
        }
    }
    // Doubled expected rank sum: na(n+1).
    let center = (na * (n + 1)) as i64;
    let dev_obs = (s_obs as i64 - center).abs();
    let (mut extreme, mut total) = (0.0, 0.0);
    for (s, &c) in counts[na].iter().enumerate() {
        total += c;
        if (s as i64 - center).abs() >= dev_obs {
            extreme += c;
        }
    }
    extreme / total
}

/// `min(1, m p)`.
pub fn bonferroni(p: f64, m: u32) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(MetricsError::Probability(p));
    }
    if m == 0 {
        return Err(MetricsError::Comparisons);
    }
    Ok((p * f64::from(m)).min(1.0))
}

/// Per-reach row of the analysis output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachMetrics {
    pub result: TargetResult,
    pub body_displacement: BodyDisplacement,
    pub body_path_length: BodyDisplacement,
    pub delta_final: [f64; 3],
    pub b_final: [f64; 3],
    pub j_final: [f64; 3],
    pub valid: [bool; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: ControlMode,
    pub trials: usize,
    pub completion_time: SummaryStats,
    /// Per axis, over reaches where the axis is valid.
    pub b_final: [Option<SummaryStats>; 3],
    pub median_contribution: Vec<MedianContribution>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub metric: String,
    pub mode_a: ControlMode,
    pub mode_b: ControlMode,
    pub n_a: usize,
    pub n_b: usize,
    pub u: f64,
    pub p: f64,
    pub p_corrected: f64,
    pub method: PMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub config_hashes: Vec<String>,
    pub trials: Vec<LogHeader>,
    pub reaches: Vec<ReachMetrics>,
    pub modes: Vec<ModeSummary>,
    pub tests: Vec<PairwiseTest>,
    pub bonferroni_m: u32,
}

/// Points used for normalized-time median curves.
pub const CURVE_POINTS: usize = 101;

/// Runs every metric over a set of trial logs and compares modes pairwise on completion time.
pub fn analyze(logs: &[TrialLog], bonferroni_m: u32) -> Result<AnalysisReport, MetricsError> {
    let mut reaches_out = Vec::new();
    let mut per_mode: BTreeMap<&'static str, (ControlMode, usize, Vec<f64>, Vec<ContributionSeries>)> =
        BTreeMap::new();
    for log in logs {
        let entry = per_mode
            .entry(log.header.mode.as_str())
            .or_insert_with(|| (log.header.mode, 0, vec![], vec![]));
        entry.1 += 1;
        for reach in reaches(log)? {
            let series = reach.contributions();
            reaches_out.push(ReachMetrics {
                body_displacement: reach.body_displacement(),
                body_path_length: reach.body_path_length(),
                delta_final: series.final_delta(),
                b_final: series.final_b(),
                j_final: series.final_j(),
                valid: series.valid,
                result: reach.result.clone(),
            });
            entry.2.push(reach.result.completion_time);
            entry.3.push(series);
        }
    }
    let mut modes = Vec::new();
    for (mode, trials, times, series) in per_mode.values() {
        if times.is_empty() {
            continue;
        }
        let b_final = [0, 1, 2].map(|axis| {
            let v: Vec<f64> = series.iter().filter(|s| s.valid[axis]).map(|s| s.final_b()[axis]).collect();
            summarize(&v).ok()
        });
        modes.push(ModeSummary {
            mode: *mode,
            trials: *trials,
            completion_time: summarize(times)?,
            b_final,
            median_contribution: median_contributions(series, CURVE_POINTS),
        });
    }
    let mut tests = Vec::new();
    let keys: Vec<_> = per_mode.values().filter(|m| !m.2.is_empty()).collect();
    for i in 0..keys.len() {
        for k in i + 1..keys.len() {
            let (a, b) = (keys[i], keys[k]);
            let mw = mann_whitney_u(&a.2, &b.2)?;
            tests.push(PairwiseTest {
                metric: "completion_time".into(),
                mode_a: a.0,
                mode_b: b.0,
                n_a: a.2.len(),
                n_b: b.2.len(),
                u: mw.u,
                p: mw.p,
                p_corrected: bonferroni(mw.p, bonferroni_m)?,
                method: mw.method,
            });
        }
    }
    let mut hashes: Vec<String> = logs.iter().map(|l| l.header.config_hash.clone()).collect();
    hashes.sort();
    hashes.dedup();
    Ok(AnalysisReport {
        config_hashes: hashes,
        trials: logs.iter().map(|l| l.header.clone()).collect(),
        reaches: reaches_out,
        modes,
        tests,
        bonferroni_m,
    })
}
