//! Scripted-operator runs from a config file.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Result};
use bodylink::log::TrialLog;
use bodylink::operator::{run_trial, OperatorPolicy, PolicyKind, RunError};

use crate::config::LoadedConfig;
use crate::logfiles;

#[derive(Clone, Debug, Default)]
pub struct SimulateOptions {
    /// Overrides the config's operator kind; the session mode follows the policy.
    pub policy: Option<PolicyKind>,
    pub trials: u32,
    /// Base seed; trial `i` uses `seed + i` for target order and tremor.
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct SimulatedTrial {
    pub log: TrialLog,
    /// Watchdog diagnostic when the trial was aborted.
    pub aborted: Option<String>,
}

/// Policy and per-trial seeds resolved from the config and options.
pub fn resolve(cfg: &LoadedConfig, opts: &SimulateOptions) -> Result<(OperatorPolicy, u64)> {
    let kind = opts
        .policy
        .or(cfg.config.operator.as_ref().map(|o| o.kind))
        .ok_or_else(|| anyhow!("no policy: pass --policy or add an \"operator\" section to {}", cfg.path.display()))?;
    let base = opts.seed.or(cfg.config.trial.seed).unwrap_or(0);
    Ok((cfg.policy(kind), base))
}

/// Runs the trials (in parallel, one thread per trial). Output order and content do not
/// depend on scheduling.
pub fn simulate(cfg: &LoadedConfig, opts: &SimulateOptions) -> Result<Vec<SimulatedTrial>> {
    if opts.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let (policy, base) = resolve(cfg, opts)?;
    let mut setup = cfg.setup_with_mode(policy.kind.mode()).map_err(|e| anyhow!(e))?;
    setup.session_id = format!("{}-{}", setup.session_id, policy.kind);
    let results: Vec<Result<SimulatedTrial>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..opts.trials)
            .map(|i| {
                let mut setup = setup.clone();
                let seed = base.wrapping_add(u64::from(i));
                setup.trial.seed = Some(seed);
                let policy = OperatorPolicy {
                    noise_seed: policy.noise_seed.wrapping_add(seed),
                    ..policy.clone()
                };
                scope.spawn(move || match run_trial(&policy, &setup, i) {
                    Ok(log) => Ok(SimulatedTrial { log, aborted: None }),
                    Err(RunError::Aborted { reason, log, .. }) => Ok(SimulatedTrial {
                        log: *log,
                        aborted: Some(reason),
                    }),
                    Err(e) => Err(anyhow!(e)),
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow!("simulation thread panicked"))))
            .collect()
    });
    results.into_iter().collect()
}

/// Runs and writes the logs; returns the written paths (events, telemetry per trial).
pub fn simulate_to_dir(cfg: &LoadedConfig, opts: &SimulateOptions, dir: &Path) -> Result<(Vec<SimulatedTrial>, Vec<PathBuf>)> {
    let trials = simulate(cfg, opts)?;
    let mut paths = Vec::new();
    for t in &trials {
        let (e, tel) = logfiles::write_trial(dir, &t.log)?;
        paths.push(e);
        paths.push(tel);
    }
    Ok((trials, paths))
}
