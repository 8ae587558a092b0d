// Copyright 2026 The photonbox Authors
// SPDX-License-Identifier: Apache-2.0

//! Experiment configuration, ensemble dispatch, CSV output and the text reports
//! behind the `lyapunov` and `lemmas` subcommands.
//!
//! Configs are flat `key = value` files; `#` starts a comment. Keys:
//! `n_max phi0 theta n_bar epsilon eta alpha_max d mode law_variant rho0 rho_est0
//! steps n_traj seed output record_every`. When omitted, `phi0` defaults to
//! `pi/4 - n_bar theta` and `epsilon` to `1/(2 n_bar + 1)`.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_4;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::delayed_feedback::{
    lemma1_suite, lemma2_eta_sweep, lemma2_suite, run_closed_ensemble, ControlState, Controller, FeedbackParams,
    LawVariant, Lemma1Summary, Lemma2Summary,
};
use crate::error::{Error, Result};
use crate::filter::{kernel_inclusion, run_filter_ensemble, JointState};
use crate::fock_ops::{random_state, DensityMatrix, FockParams, FockSpace};
use crate::linearized::{
    closed_loop_exponent_lambda0, closed_tangent_norm, contraction_suite, empirical_exponent, filter_tangent_norm,
    open_loop_exponent, tangent_norm, ClosedTangent, ContractionSummary, ExponentTable, FilterTangent,
    LinearClosedLoop, Linearization, ReducedClosedLoopState, TangentState,
};
use crate::openloop::{martingale_check, run_open_ensemble};
use crate::trajectory::{EnsembleSummary, RngStream};

pub const CONFIG_KEYS: [&str; 17] = [
    "n_max",
    "phi0",
    "theta",
    "n_bar",
    "epsilon",
    "eta",
    "alpha_max",
    "d",
    "mode",
    "law_variant",
    "rho0",
    "rho_est0",
    "steps",
    "n_traj",
    "seed",
    "output",
    "record_every",
];

/// Slack tolerance of the sub-martingale oracles.
pub const LEMMA1_TOL: f64 = 1e-10;
/// Slack tolerance of the contraction oracle.
pub const CONTRACTION_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    OpenLoop,
    #[default]
    ClosedLoop,
    Filter,
    Lyapunov,
    Lemmas,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::OpenLoop => "openloop",
            Mode::ClosedLoop => "closedloop",
            Mode::Filter => "filter",
            Mode::Lyapunov => "lyapunov",
            Mode::Lemmas => "lemmas",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Mode::OpenLoop, Mode::ClosedLoop, Mode::Filter, Mode::Lyapunov, Mode::Lemmas]
            .into_iter()
            .find(|m| m.name() == s)
    }

    /// Modes that simulate trajectory ensembles.
    pub fn is_ensemble(self) -> bool {
        matches!(self, Mode::OpenLoop | Mode::ClosedLoop | Mode::Filter)
    }
}

/// Initial-state specification: `fock n`, `coherent re [im]` or `mixed`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RhoSpec {
    Fock(usize),
    Coherent(Complex64),
    Mixed,
}

impl RhoSpec {
    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let num = |t: &str| t.parse::<f64>().map_err(|_| format!("'{t}' is not a number"));
        match parts.as_slice() {
            ["mixed"] => Ok(RhoSpec::Mixed),
            ["fock", n] => n
                .parse()
                .map(RhoSpec::Fock)
                .map_err(|_| format!("'{n}' is not a Fock index")),
            ["coherent", re] => Ok(RhoSpec::Coherent(Complex64::new(num(re)?, 0.0))),
            ["coherent", re, im] => Ok(RhoSpec::Coherent(Complex64::new(num(re)?, num(im)?))),
            _ => Err(format!("'{s}' is not one of: fock <n>, coherent <re> [<im>], mixed")),
        }
    }

    pub fn build(&self, space: &FockSpace) -> Result<DensityMatrix> {
        match *self {
            RhoSpec::Fock(n) => space.fock_state(n),
            RhoSpec::Coherent(alpha) => space.coherent_state(alpha),
            RhoSpec::Mixed => Ok(space.maximally_mixed()),
        }
    }
}

impl fmt::Display for RhoSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RhoSpec::Fock(n) => write!(f, "fock {n}"),
            RhoSpec::Coherent(a) => write!(f, "coherent {:?} {:?}", a.re, a.im),
            RhoSpec::Mixed => write!(f, "mixed"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub fock: FockParams,
    pub feedback: FeedbackParams,
    pub mode: Mode,
    pub rho0: RhoSpec,
    /// Estimator initialization; only meaningful in filter mode (defaults to `mixed`).
    pub rho_est0: Option<RhoSpec>,
    /// Trajectory length; per-seed chain length in lyapunov mode.
    pub steps: usize,
    /// Ensemble size; seed count in lyapunov mode, sample count in lemmas mode.
    pub n_traj: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub record_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            fock: FockParams::default(),
            feedback: FeedbackParams::standard(3, 5),
            mode: Mode::ClosedLoop,
            rho0: RhoSpec::Coherent(Complex64::new(3f64.sqrt(), 0.0)),
            rho_est0: None,
            steps: 400,
            n_traj: 100,
            seed: 0,
            output: None,
            record_every: 1,
        }
    }
}

/// One `key = value` assignment and where it came from (`None` for the command line).
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub key: String,
    pub value: String,
    pub line: Option<usize>,
}

fn located(line: Option<usize>, msg: String) -> Error {
    match line {
        Some(line) => Error::Config { line, msg },
        None => Error::ConfigInvalid(msg),
    }
}

/// Splits config text into assignments, rejecting unknown or repeated keys.
pub fn parse_assignments(text: &str) -> Result<Vec<Assignment>> {
    let mut out: Vec<Assignment> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Config {
                line,
                msg: format!("expected 'key = value', found '{content}'"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::Config {
                line,
                msg: format!("unknown key '{key}'"),
            });
        }
        if let Some(prev) = out.iter().find(|a| a.key == key) {
            return Err(Error::Config {
                line,
                msg: format!("duplicate key '{key}' (first set on line {})", prev.line.unwrap_or(0)),
            });
        }
        out.push(Assignment {
            key: key.to_string(),
            value: value.to_string(),
            line: Some(line),
        });
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_assignments(&parse_assignments(text)?)
    }

    /// Builds a config from assignments; later entries override earlier ones.
    pub fn from_assignments(items: &[Assignment]) -> Result<Self> {
        let mut map: BTreeMap<&str, &Assignment> = BTreeMap::new();
        for a in items {
            if !CONFIG_KEYS.contains(&a.key.as_str()) {
                return Err(located(a.line, format!("unknown key '{}'", a.key)));
            }
            map.insert(a.key.as_str(), a);
        }
        fn get<T: std::str::FromStr>(map: &BTreeMap<&str, &Assignment>, key: &str) -> Result<Option<T>> {
            match map.get(key) {
                None => Ok(None),
                Some(a) => a
                    .value
                    .parse()
                    .map(Some)
                    .map_err(|_| located(a.line, format!("invalid value '{}' for {key}", a.value))),
            }
        }
        fn parse_with<T>(
            map: &BTreeMap<&str, &Assignment>,
            key: &str,
            f: impl Fn(&str) -> std::result::Result<T, String>,
        ) -> Result<Option<T>> {
            match map.get(key) {
                None => Ok(None),
                Some(a) => f(&a.value).map(Some).map_err(|m| located(a.line, format!("{key}: {m}"))),
            }
        }

        let def = ExperimentConfig::default();
        let n_max = get(&map, "n_max")?.unwrap_or(def.fock.n_max);
        let theta = get(&map, "theta")?.unwrap_or(def.fock.theta);
        let n_bar: usize = get(&map, "n_bar")?.unwrap_or(def.feedback.n_bar);
        let phi0 = get(&map, "phi0")?.unwrap_or(FRAC_PI_4 - n_bar as f64 * theta);
        let epsilon = get(&map, "epsilon")?.unwrap_or(1.0 / (2 * n_bar + 1) as f64);

        let mode = parse_with(&map, "mode", |v| Mode::parse(v).ok_or_else(|| format!("unknown mode '{v}'")))?
            .unwrap_or(def.mode);
        let law = parse_with(&map, "law_variant", |v| {
            LawVariant::parse(v).ok_or_else(|| format!("unknown law variant '{v}'"))
        })?
        .unwrap_or(def.feedback.law);
        let rho0 = parse_with(&map, "rho0", RhoSpec::parse)?.unwrap_or(def.rho0);
        let rho_est0 = parse_with(&map, "rho_est0", RhoSpec::parse)?;

        let cfg = ExperimentConfig {
            fock: FockParams { n_max, phi0, theta },
            feedback: FeedbackParams {
                n_bar,
                epsilon,
                eta: get(&map, "eta")?.unwrap_or(def.feedback.eta),
                alpha_max: get(&map, "alpha_max")?.unwrap_or(def.feedback.alpha_max),
                delay: get(&map, "d")?.unwrap_or(def.feedback.delay),
                law,
            },
            mode,
            rho0,
            rho_est0,
            steps: get(&map, "steps")?.unwrap_or(def.steps),
            n_traj: get(&map, "n_traj")?.unwrap_or(def.n_traj),
            seed: get(&map, "seed")?.unwrap_or(def.seed),
            output: map.get("output").map(|a| PathBuf::from(&a.value)),
            record_every: get(&map, "record_every")?.unwrap_or(def.record_every),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field consistency checks.
    pub fn validate(&self) -> Result<()> {
        let invalid = |e: Error| match e {
            Error::InvalidParams(m) => Error::ConfigInvalid(m),
            other => other,
        };
        let space = FockSpace::new(self.fock).map_err(invalid)?;
        self.feedback.validate(&space).map_err(invalid)?;
        self.rho0.build(&space).map_err(invalid)?;
        if let Some(est) = &self.rho_est0 {
            if self.mode != Mode::Filter {
                return Err(Error::ConfigInvalid("rho_est0 is only used in filter mode".into()));
            }
            est.build(&space).map_err(invalid)?;
        }
        if self.n_traj == 0 {
            return Err(Error::ConfigInvalid("n_traj must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::ConfigInvalid("record_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn space(&self) -> Result<FockSpace> {
        FockSpace::new(self.fock)
    }

    /// Serializes every field; floats use the shortest round-trip representation.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("mode", self.mode.name().into());
        kv("n_max", self.fock.n_max.to_string());
        kv("phi0", format!("{:?}", self.fock.phi0));
        kv("theta", format!("{:?}", self.fock.theta));
        kv("n_bar", self.feedback.n_bar.to_string());
        kv("epsilon", format!("{:?}", self.feedback.epsilon));
        kv("eta", format!("{:?}", self.feedback.eta));
        kv("alpha_max", format!("{:?}", self.feedback.alpha_max));
        kv("d", self.feedback.delay.to_string());
        kv("law_variant", self.feedback.law.name().into());
        kv("rho0", self.rho0.to_string());
        if let Some(est) = &self.rho_est0 {
            kv("rho_est0", est.to_string());
        }
        kv("steps", self.steps.to_string());
        kv("n_traj", self.n_traj.to_string());
        kv("seed", self.seed.to_string());
        if let Some(out) = &self.output {
            kv("output", out.display().to_string());
        }
        kv("record_every", self.record_every.to_string());
        s
    }
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::parse(&fs::read_to_string(path)?)
}

pub fn write_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    Ok(fs::write(path, cfg.to_config_string())?)
}

/// Runs the ensemble described by `cfg` on the global rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EnsembleSummary> {
    cfg.validate()?;
    let space = cfg.space()?;
    let rho0 = cfg.rho0.build(&space)?;
    let fp = cfg.feedback;
    match cfg.mode {
        Mode::OpenLoop => run_open_ensemble(&space, &rho0, fp.n_bar, cfg.steps, cfg.n_traj, cfg.seed, cfg.record_every),
        Mode::ClosedLoop => {
            let ctl = Controller::new(space.clone(), fp)?;
            let chi0 = ControlState::at_rest(&space, rho0, fp.delay)?;
            run_closed_ensemble(&ctl, &chi0, cfg.steps, cfg.n_traj, cfg.seed, cfg.record_every)
        }
        Mode::Filter => {
            let ctl = Controller::new(space.clone(), fp)?;
            let est0 = cfg.rho_est0.unwrap_or(RhoSpec::Mixed).build(&space)?;
            let xi0 = JointState::new(rho0, ControlState::at_rest(&space, est0, fp.delay)?)?;
            run_filter_ensemble(&ctl, &xi0, cfg.steps, cfg.n_traj, cfg.seed, cfg.record_every)
        }
        Mode::Lyapunov | Mode::Lemmas => Err(Error::ConfigInvalid(format!(
            "mode '{}' does not simulate an ensemble",
            cfg.mode.name()
        ))),
    }
}

/// Runs on a dedicated pool with `threads` workers (the global pool when `None`).
pub fn run_experiment_with_threads(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<EnsembleSummary> {
    match threads {
        None => run_experiment(cfg),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParams(format!("cannot build thread pool: {e}")))?
            .install(|| run_experiment(cfg)),
    }
}

/// True when the estimator initialization satisfies the kernel condition.
pub fn filter_kernel_condition(cfg: &ExperimentConfig) -> Result<bool> {
    let space = cfg.space()?;
    let est0 = cfg.rho_est0.unwrap_or(RhoSpec::Mixed).build(&space)?;
    Ok(kernel_inclusion(&est0, &cfg.rho0.build(&space)?))
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Per-step rows `k,traj,fidelity,outcome,alpha_re,alpha_im[,frob_dist]`.
pub fn csv_string(summary: &EnsembleSummary) -> String {
    let with_frob = summary.mean_frob_dist.is_some();
    let mut s = String::from("k,traj,fidelity,outcome,alpha_re,alpha_im");
    s.push_str(if with_frob { ",frob_dist\n" } else { "\n" });
    for t in &summary.trajectories {
        for r in &t.steps {
            let outcome = r.outcome.map_or('-', |o| o.symbol());
            let _ = write!(
                s,
                "{},{},{},{},{},{}",
                r.k,
                t.traj,
                num(r.fidelity),
                outcome,
                num(r.alpha.re),
                num(r.alpha.im)
            );
            if with_frob {
                let _ = write!(s, ",{}", num(r.frob_dist.unwrap_or(f64::NAN)));
            }
            s.push('\n');
        }
    }
    s
}

pub fn write_csv(summary: &EnsembleSummary, path: &Path) -> Result<()> {
    Ok(fs::write(path, csv_string(summary))?)
}

/// Ensemble means `k,mean_fidelity[,mean_frob_dist]`.
pub fn mean_csv_string(summary: &EnsembleSummary) -> String {
    let mut s = String::from("k,mean_fidelity");
    s.push_str(if summary.mean_frob_dist.is_some() { ",mean_frob_dist\n" } else { "\n" });
    for (i, k) in summary.k.iter().enumerate() {
        let _ = write!(s, "{k},{}", num(summary.mean_fidelity[i]));
        if let Some(f) = &summary.mean_frob_dist {
            let _ = write!(s, ",{}", num(f[i]));
        }
        s.push('\n');
    }
    s
}

/// Path of the companion mean-curve file: `run.csv` becomes `run_mean.csv`.
pub fn mean_csv_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_mean.csv"))
}

/// Human-readable ensemble summary.
pub fn summary_text(cfg: &ExperimentConfig, summary: &EnsembleSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{}: {} trajectories x {} steps, seed {}",
        cfg.mode.name(),
        summary.n_traj(),
        cfg.steps,
        cfg.seed
    );
    let _ = writeln!(
        s,
        "mean fidelity with |{}>: initial {:.6}, final {:.6}",
        cfg.feedback.n_bar,
        summary.mean_fidelity.first().copied().unwrap_or(f64::NAN),
        summary.mean_final_fidelity()
    );
    if let Some(f) = summary.mean_final_frob_dist() {
        let _ = writeln!(s, "mean final estimation error (Frobenius): {f:.3e}");
    }
    let _ = write!(s, "converged:");
    for (n, &c) in summary.converged_counts.iter().enumerate() {
        if c > 0 {
            let _ = write!(s, " |{n}>:{c}");
        }
    }
    let _ = writeln!(s, " unconverged:{}", summary.unconverged);
    s
}

/// Empirical exponent statistics across seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExponentStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl ExponentStats {
    fn from(values: &[f64]) -> Self {
        ExponentStats {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovReport {
    pub n_bar: usize,
    pub table: ExponentTable,
    pub lambda0: Option<ExponentTable>,
    pub steps: usize,
    pub seeds: usize,
    pub epsilon: f64,
    pub delay: usize,
    pub admissible_gain: f64,
    pub open: ExponentStats,
    pub closed: ExponentStats,
    pub reduced: ExponentStats,
    pub filter: ExponentStats,
}

/// Analytic tables plus empirical exponents of the four linearized chains,
/// each over `n_traj` streams of `steps` steps.
pub fn lyapunov_report(cfg: &ExperimentConfig) -> Result<LyapunovReport> {
    cfg.validate()?;
    if cfg.steps == 0 {
        return Err(Error::ConfigInvalid("lyapunov mode needs steps >= 1".into()));
    }
    let space = cfg.space()?;
    let fp = cfg.feedback;
    let lin = Linearization::new(&space, fp.n_bar)?;
    let lc = LinearClosedLoop::new(lin.clone(), fp.epsilon, fp.delay)?;
    let dim = space.dim();
    let d = fp.delay;
    let mut open = Vec::new();
    let mut closed = Vec::new();
    let mut reduced = Vec::new();
    let mut filter = Vec::new();
    for i in 0..cfg.n_traj as u64 {
        let mut rng = RngStream::new(cfg.seed, i).rng();
        let t0 = TangentState::random(dim, &mut rng);
        open.push(empirical_exponent(&t0, cfg.steps, &mut rng, |t, r| Ok(lin.step_lin_open_sampled(t, r)), tangent_norm)?);
        let c0 = ClosedTangent {
            delta_rho: TangentState::random(dim, &mut rng),
            z: ReducedClosedLoopState::random(d, &mut rng).z,
        };
        closed.push(empirical_exponent(
            &c0,
            cfg.steps,
            &mut rng,
            |t, r| lc.step_closed_tangent(t, lin.sample(r)),
            closed_tangent_norm,
        )?);
        let x0 = ReducedClosedLoopState::random(d, &mut rng);
        reduced.push(empirical_exponent(
            &x0,
            cfg.steps,
            &mut rng,
            |x, r| lc.step_reduced(x, lin.sample(r)),
            |x| x.x.norm().max(x.y.norm()).max(x.z.iter().map(|z| z.norm()).fold(0.0, f64::max)),
        )?);
        let f0 = FilterTangent {
            delta_rho: TangentState::random(dim, &mut rng),
            delta_rho_est: TangentState::random(dim, &mut rng),
            z: ReducedClosedLoopState::random(d, &mut rng).z,
        };
        filter.push(empirical_exponent(
            &f0,
            cfg.steps,
            &mut rng,
            |t, r| lc.step_lin_filter(t, lin.sample(r)),
            filter_tangent_norm,
        )?);
    }
    Ok(LyapunovReport {
        n_bar: fp.n_bar,
        table: open_loop_exponent(&space, fp.n_bar)?,
        lambda0: closed_loop_exponent_lambda0(&space, fp.n_bar)?,
        steps: cfg.steps,
        seeds: cfg.n_traj,
        epsilon: fp.epsilon,
        delay: d,
        admissible_gain: lc.admissible_gain(),
        open: ExponentStats::from(&open),
        closed: ExponentStats::from(&closed),
        reduced: ExponentStats::from(&reduced),
        filter: ExponentStats::from(&filter),
    })
}

impl fmt::Display for LyapunovReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "open-loop exponents around |{}>", self.n_bar)?;
        writeln!(f, "  n    Lambda^n")?;
        for &(n, l) in &self.table.per_n {
            writeln!(f, "  {n:<4} {l:+.6e}")?;
        }
        writeln!(f, "Lambda   = {:+.6e} (n = {})", self.table.lambda, self.table.argmax)?;
        match &self.lambda0 {
            Some(t) => writeln!(f, "Lambda_0 = {:+.6e} (n = {})", t.lambda, t.argmax)?,
            None => writeln!(f, "Lambda_0 = undefined (no level outside n_bar -1..+1)")?,
        }
        writeln!(
            f,
            "empirical exponents, {} seeds x {} steps (mean [min, max]):",
            self.seeds, self.steps
        )?;
        let row = |f: &mut fmt::Formatter<'_>, name: &str, s: &ExponentStats| {
            writeln!(f, "  {name:<14} {:+.6e} [{:+.6e}, {:+.6e}]", s.mean, s.min, s.max)
        };
        row(f, "open loop", &self.open)?;
        let rel = (self.open.mean - self.table.lambda).abs() / self.table.lambda.abs();
        writeln!(f, "  relative deviation from Lambda: {rel:.3e}")?;
        writeln!(f, "closed loop with epsilon = {:.6e}, d = {}:", self.epsilon, self.delay)?;
        row(f, "full", &self.closed)?;
        row(f, "reduced (x,y,z)", &self.reduced)?;
        row(f, "filter", &self.filter)?;
        writeln!(
            f,
            "contraction gain bound (1 - sigma)/(2(n_bar + 1)) = {:.6e} ({})",
            self.admissible_gain,
            if self.epsilon < self.admissible_gain { "epsilon admissible" } else { "epsilon above bound" }
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LemmasReport {
    pub samples: usize,
    pub martingale_worst: f64,
    pub lemma1: Lemma1Summary,
    /// Largest gain `epsilon / 2^j` passing the suite, when the configured gain fails.
    pub lemma1_admissible_epsilon: Option<f64>,
    pub lemma2: Lemma2Summary,
    /// Largest `eta` on a 0.01 grid passing the suite, when the configured `eta` fails.
    pub lemma2_largest_eta: Option<f64>,
    pub contraction: Option<(f64, ContractionSummary)>,
}

impl LemmasReport {
    pub fn all_pass(&self) -> bool {
        self.martingale_worst < 1e-12
            && self.lemma1.holds(LEMMA1_TOL)
            && self.lemma2.holds()
            && self.contraction.is_none_or(|(_, c)| c.worst_excess <= CONTRACTION_TOL)
    }
}

/// Runs the one-step oracles on `n_traj` random states each.
pub fn lemmas_report(cfg: &ExperimentConfig) -> Result<LemmasReport> {
    cfg.validate()?;
    let space = cfg.space()?;
    let fp = cfg.feedback;
    let samples = cfg.n_traj;
    let ctl = Controller::new(space.clone(), fp)?;

    let mut rng = RngStream::new(cfg.seed, 0).rng();
    let mut martingale_worst: f64 = 0.0;
    for _ in 0..samples {
        let rho = random_state(space.dim(), &mut rng);
        for n in 0..space.dim() {
            martingale_worst = martingale_worst.max(martingale_check(&space, &rho, n)?);
        }
    }

    let lemma1 = lemma1_suite(&ctl, samples, &mut RngStream::new(cfg.seed, 1).rng())?;
    let mut lemma1_admissible_epsilon = None;
    if !lemma1.holds(LEMMA1_TOL) {
        let mut eps = fp.epsilon;
        for _ in 0..30 {
            eps *= 0.5;
            let c = Controller::new(space.clone(), FeedbackParams { epsilon: eps, ..fp })?;
            if lemma1_suite(&c, samples, &mut RngStream::new(cfg.seed, 1).rng())?.holds(LEMMA1_TOL) {
                lemma1_admissible_epsilon = Some(eps);
                break;
            }
        }
    }

    let lemma2 = lemma2_suite(&ctl, samples, &mut RngStream::new(cfg.seed, 2).rng())?;
    let lemma2_largest_eta = if lemma2.holds() {
        None
    } else {
        let grid: Vec<f64> = (1..)
            .map(|j| ((fp.eta * 100.0).floor() - j as f64) / 100.0)
            .take_while(|&e| e > 0.0)
            .collect();
        lemma2_eta_sweep(&space, fp, samples, cfg.seed.wrapping_add(2), &grid)?
    };

    let contraction = if fp.delay == 0 {
        None
    } else {
        let probe = LinearClosedLoop::new(Linearization::new(&space, fp.n_bar)?, fp.epsilon, fp.delay)?;
        let eps = if probe.gain_is_admissible() { fp.epsilon } else { 0.9 * probe.admissible_gain() };
        let lc = LinearClosedLoop::new(Linearization::new(&space, fp.n_bar)?, eps, fp.delay)?;
        Some((eps, contraction_suite(&lc, samples, &mut RngStream::new(cfg.seed, 3).rng())?))
    };

    Ok(LemmasReport {
        samples,
        martingale_worst,
        lemma1,
        lemma1_admissible_epsilon,
        lemma2,
        lemma2_largest_eta,
        contraction,
    })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

impl fmt::Display for LemmasReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "one-step oracles on {} random states each", self.samples)?;
        writeln!(
            f,
            "{} martingale     worst |E[<n|rho+|n>] - <n|rho|n>| = {:.3e}",
            verdict(self.martingale_worst < 1e-12),
            self.martingale_worst
        )?;
        writeln!(
            f,
            "{} submartingale  worst gap_fid = {:+.3e}, gap_V = {:+.3e}",
            verdict(self.lemma1.holds(LEMMA1_TOL)),
            self.lemma1.worst_gap_fid,
            self.lemma1.worst_gap_v
        )?;
        if let Some(eps) = self.lemma1_admissible_epsilon {
            writeln!(f, "     largest passing epsilon found: {eps:.6e}")?;
        }
        writeln!(
            f,
            "{} kick           worst post fidelity = {:.6} (need {:.3}), delta = {:.6}",
            verdict(self.lemma2.holds()),
            self.lemma2.worst_post_fidelity,
            2.0 * self.lemma2.eta,
            self.lemma2.delta
        )?;
        if !self.lemma2.holds() {
            match self.lemma2_largest_eta {
                Some(eta) => writeln!(f, "     largest passing eta on the 0.01 grid: {eta:.2}")?,
                None => writeln!(f, "     no eta on the 0.01 grid passes")?,
            }
        }
        match &self.contraction {
            Some((eps, c)) => writeln!(
                f,
                "{} contraction    epsilon = {eps:.6e}, factor = {:.6}, worst excess = {:+.3e}",
                verdict(c.worst_excess <= CONTRACTION_TOL),
                c.factor,
                c.worst_excess
            ),
            None => writeln!(f, "n/a  contraction    (needs d >= 1)"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_config_string();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn derived_defaults() {
        let cfg = ExperimentConfig::parse("n_bar = 2\ntheta = 0.1\n").unwrap();
        assert!((cfg.feedback.epsilon - 0.2).abs() < 1e-15);
        assert!((cfg.fock.phi0 - (FRAC_PI_4 - 0.2)).abs() < 1e-15);
        assert_eq!(ExperimentConfig::parse("").unwrap().fock, FockParams::default());
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = ExperimentConfig::parse("# header\nsteps = 10\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 3, .. }), "{err}");
        let err = ExperimentConfig::parse("steps 10\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
        let err = ExperimentConfig::parse("steps = ten\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
        let err = ExperimentConfig::parse("seed = 1\nseed = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        let err = ExperimentConfig::parse("\n\nrho0 = squeezed 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 3, .. }));
    }

    #[test]
    fn cross_field_validation() {
        assert!(matches!(ExperimentConfig::parse("n_bar = 11\n"), Err(Error::ConfigInvalid(_))));
        assert!(matches!(
            ExperimentConfig::parse("mode = closedloop\nrho_est0 = mixed\n"),
            Err(Error::ConfigInvalid(_))
        ));
        assert!(ExperimentConfig::parse("mode = filter\nrho_est0 = mixed\n").is_ok());
        assert!(matches!(ExperimentConfig::parse("rho0 = fock 12\n"), Err(Error::ConfigInvalid(_))));
        assert!(matches!(ExperimentConfig::parse("n_traj = 0\n"), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn rho_spec_syntax() {
        assert_eq!(RhoSpec::parse("fock 3").unwrap(), RhoSpec::Fock(3));
        assert_eq!(RhoSpec::parse("mixed").unwrap(), RhoSpec::Mixed);
        assert_eq!(RhoSpec::parse("coherent 1.5").unwrap(), RhoSpec::Coherent(Complex64::new(1.5, 0.0)));
        let c = RhoSpec::Coherent(Complex64::new(0.1, -0.7));
        assert_eq!(RhoSpec::parse(&c.to_string()).unwrap(), c);
        assert!(RhoSpec::parse("fock").is_err());
    }

    #[test]
    fn zero_step_run_echoes_initial_fidelity() {
        let cfg = ExperimentConfig {
            steps: 0,
            n_traj: 1,
            ..ExperimentConfig::default()
        };
        let summary = run_experiment(&cfg).unwrap();
        let space = cfg.space().unwrap();
        let p3 = cfg.rho0.build(&space).unwrap().population(3);
        assert_eq!(summary.k, vec![0]);
        assert_eq!(summary.mean_fidelity, vec![p3]);
        let csv = csv_string(&summary);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,0,"));
    }

    #[test]
    fn csv_columns_and_ranges() {
        let cfg = ExperimentConfig {
            mode: Mode::Filter,
            steps: 20,
            n_traj: 3,
            ..ExperimentConfig::default()
        };
        let summary = run_experiment(&cfg).unwrap();
        let csv = csv_string(&summary);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "k,traj,fidelity,outcome,alpha_re,alpha_im,frob_dist");
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 3 * 21);
        for row in rows {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols.len(), 7);
            let fid: f64 = cols[2].parse().unwrap();
            assert!((0.0..=1.0).contains(&fid));
            assert!(["g", "e", "-"].contains(&cols[3]));
        }
        assert_eq!(mean_csv_path(Path::new("/tmp/run.csv")), PathBuf::from("/tmp/run_mean.csv"));
        assert_eq!(mean_csv_string(&summary).lines().count(), 22);
    }

    #[test]
    fn report_modes_have_no_ensemble() {
        let cfg = ExperimentConfig {
            mode: Mode::Lemmas,
            ..ExperimentConfig::default()
        };
        assert!(matches!(run_experiment(&cfg), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn small_reports_render() {
        let cfg = ExperimentConfig {
            mode: Mode::Lyapunov,
            steps: 200,
            n_traj: 2,
            ..ExperimentConfig::default()
        };
        let text = lyapunov_report(&cfg).unwrap().to_string();
        assert!(text.contains("Lambda   ="));
        let cfg = ExperimentConfig {
            mode: Mode::Lemmas,
            n_traj: 3,
            ..ExperimentConfig::default()
        };
        let report = lemmas_report(&cfg).unwrap();
        let text = report.to_string();
        assert!(text.contains("martingale") && text.contains("contraction"));
    }
}
