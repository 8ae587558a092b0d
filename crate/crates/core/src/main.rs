// Copyright 2026 The photonbox Authors
// SPDX-License-Identifier: Apache-2.0

//! `photonbox` command line. Exit codes: 0 success, 1 configuration error,
//! 2 numerical fault.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use photonbox::harness::{
    filter_kernel_condition, lemmas_report, lyapunov_report, mean_csv_path, mean_csv_string, parse_assignments,
    csv_string, run_experiment_with_threads, summary_text, Assignment, ExperimentConfig, Mode,
};
use photonbox::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "photonbox", version, about = "Photon-number feedback stabilization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Uncontrolled QND measurement ensemble.
    Openloop(Flags),
    /// Delayed feedback ensemble driven by the true state.
    Closedloop(Flags),
    /// Feedback driven by a quantum filter started from `--rho-est0`.
    Filter(Flags),
    /// Analytic and empirical Lyapunov exponents (`--steps` per seed, `--trajectories` seeds).
    Lyapunov(Flags),
    /// One-step property oracles (`--trajectories` random states per check).
    Lemmas(Flags),
}

/// Every flag overrides the matching key of `--config`.
#[derive(Args, Debug, Default)]
struct Flags {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nmax: Option<String>,
    #[arg(long)]
    nbar: Option<String>,
    #[arg(long)]
    theta: Option<String>,
    #[arg(long)]
    phi0: Option<String>,
    #[arg(long)]
    delay: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long = "alpha-max")]
    alpha_max: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    trajectories: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// CSV output path; the mean curve goes next to it as `<stem>_mean.csv`.
    #[arg(long)]
    out: Option<String>,
    /// `delayed` or `no_delay`.
    #[arg(long = "law-variant")]
    law_variant: Option<String>,
    /// `fock <n>`, `coherent <re> [<im>]` or `mixed`.
    #[arg(long)]
    rho0: Option<String>,
    #[arg(long = "rho-est0")]
    rho_est0: Option<String>,
    #[arg(long = "record-every")]
    record_every: Option<String>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

impl Flags {
    fn assignments(&self) -> Vec<Assignment> {
        [
            ("n_max", &self.nmax),
            ("n_bar", &self.nbar),
            ("theta", &self.theta),
            ("phi0", &self.phi0),
            ("d", &self.delay),
            ("epsilon", &self.epsilon),
            ("eta", &self.eta),
            ("alpha_max", &self.alpha_max),
            ("steps", &self.steps),
            ("n_traj", &self.trajectories),
            ("seed", &self.seed),
            ("output", &self.out),
            ("law_variant", &self.law_variant),
            ("rho0", &self.rho0),
            ("rho_est0", &self.rho_est0),
            ("record_every", &self.record_every),
        ]
        .into_iter()
        .filter_map(|(key, v)| {
            v.as_ref().map(|value| Assignment {
                key: key.to_string(),
                value: value.clone(),
                line: None,
            })
        })
        .collect()
    }
}

fn build_config(mode: Mode, flags: &Flags) -> Result<ExperimentConfig> {
    let mut items = match &flags.config {
        Some(path) => parse_assignments(&std::fs::read_to_string(path)?)?,
        None => Vec::new(),
    };
    items.retain(|a| a.key != "mode");
    items.push(Assignment {
        key: "mode".into(),
        value: mode.name().into(),
        line: None,
    });
    items.extend(flags.assignments());
    ExperimentConfig::from_assignments(&items)
}

fn run(mode: Mode, flags: &Flags) -> Result<()> {
    let cfg = build_config(mode, flags)?;
    match mode {
        Mode::Lyapunov => print!("{}", lyapunov_report(&cfg)?),
        Mode::Lemmas => print!("{}", lemmas_report(&cfg)?),
        _ => {
            if mode == Mode::Filter && !filter_kernel_condition(&cfg)? {
                eprintln!("warning: ker rho_est0 is not contained in ker rho0; the estimator may fail");
            }
            let summary = run_experiment_with_threads(&cfg, flags.threads)?;
            print!("{}", summary_text(&cfg, &summary));
            if let Some(path) = &cfg.output {
                std::fs::write(path, csv_string(&summary))?;
                let mean = mean_csv_path(path);
                std::fs::write(&mean, mean_csv_string(&summary))?;
                println!("wrote {} and {}", path.display(), mean.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (mode, flags) = match &cli.command {
        Command::Openloop(f) => (Mode::OpenLoop, f),
        Command::Closedloop(f) => (Mode::ClosedLoop, f),
        Command::Filter(f) => (Mode::Filter, f),
        Command::Lyapunov(f) => (Mode::Lyapunov, f),
        Command::Lemmas(f) => (Mode::Lemmas, f),
    };
    match run(mode, flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() || matches!(e, Error::Io(_)) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
