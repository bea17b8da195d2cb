use std::io::Write;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use bodylink::operator::PolicyKind;
use bodylink_teleop::analyze::{self, AnalyzeOptions};
use bodylink_teleop::config::LoadedConfig;
use bodylink_teleop::server::{self, ServeOptions};
use bodylink_teleop::simulate::{simulate_to_dir, SimulateOptions};
use bodylink_teleop::{logfiles, replay};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bodylink", version, about = "Body-to-robot virtual link teleoperation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scripted-operator trials and write their logs.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// body-only, joystick-only or sequential-dual (default: the config's operator).
        #[arg(long)]
        policy: Option<PolicyKind>,
        #[arg(long, default_value_t = 1)]
        trials: u32,
        #[arg(long)]
        seed: Option<u64>,
        /// Log directory (default: the config's log_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a live session that consoles connect to.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// Log directory (default: the config's log_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute metrics and statistics over trial logs.
    Analyze {
        /// Log files or glob patterns; both event and telemetry files are needed.
        #[arg(long, required = true, num_args = 1..)]
        logs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Analyze logs from different configs together.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = analyze::DEFAULT_BONFERRONI)]
        bonferroni: u32,
    },
    /// Stream a recorded trial to consoles (or to stdout as JSON lines without --port).
    Replay {
        /// Either file of the trial.
        #[arg(long)]
        logs: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long)]
        port: Option<u16>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            policy,
            trials,
            seed,
            out,
        } => {
            let cfg = LoadedConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.config.log_dir.clone());
            let opts = SimulateOptions { policy, trials, seed };
            let (results, paths) = simulate_to_dir(&cfg, &opts, &dir)?;
            for p in &paths {
                println!("{}", p.display());
            }
            let aborted: Vec<_> = results
                .iter()
                .filter_map(|r| r.aborted.as_ref().map(|why| format!("trial {}: {why}", r.log.header.trial_id)))
                .collect();
            if !aborted.is_empty() {
                anyhow::bail!("{} trial(s) aborted by the watchdog:\n  {}", aborted.len(), aborted.join("\n  "));
            }
        }
        Command::Serve { config, port, out } => {
            let cfg = LoadedConfig::load(&config)?;
            let setup = cfg.setup().map_err(anyhow::Error::msg)?;
            let opts = ServeOptions {
                addr: SocketAddr::from((Ipv4Addr::UNSPECIFIED, port)),
                log_dir: out.unwrap_or_else(|| cfg.config.log_dir.clone()),
            };
            let handle = server::spawn(setup, &opts)?;
            eprintln!("serving {cfg} on {}", handle.addr);
            handle.wait()?;
        }
        Command::Analyze {
            logs,
            out,
            force,
            bonferroni,
        } => {
            let opts = AnalyzeOptions {
                force,
                bonferroni_m: bonferroni,
            };
            let (report, written) = analyze::run(&logs, &out, &opts)?;
            for p in &written {
                println!("{}", p.display());
            }
            eprintln!("{} trials, {} reaches", report.trials.len(), report.reaches.len());
        }
        Command::Replay { logs, speed, port } => {
            let log = logfiles::load_one(&logs)?;
            match port {
                Some(port) => replay::serve_replay(&log, SocketAddr::from((Ipv4Addr::UNSPECIFIED, port)), speed, |addr| {
                    eprintln!("replaying {} on {addr}; waiting for a console", logs.display())
                })?,
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    replay::play(&replay::replay_stream(&log), speed, |msg| {
                        serde_json::to_writer(&mut lock, msg)?;
                        writeln!(lock).context("writing to stdout")
                    })?;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
