// Copyright 2026 The photonbox Authors
// SPDX-License-Identifier: Apache-2.0

//! Delayed feedback stabilization of a target Fock state `|n_bar><n_bar|`.
//!
//! The closed-loop state is `chi = (rho, beta_1, ..., beta_d)`, where `beta_l`
//! is the control computed `l` steps ago and not yet applied. The controller
//! compensates the delay with the average predictor
//! `rho_pred = K_{beta_1} o ... o K_{beta_d}(rho)` and uses the two-branch law
//!
//! * `alpha = eps tr{rho_bar [rho_pred, a]}` while `tr{rho_bar rho_pred} >= eta`,
//! * otherwise the maximizer over `|alpha| <= alpha_max` of
//!   `tr{rho_bar D_alpha(rho_pred_g)} tr{rho_bar D_alpha(rho_pred_e)}`.
//!
//! The Lemma oracles evaluate one-step conditional expectations exactly by
//! enumerating both detector outcomes.

use num_complex::Complex64;
use rand::Rng;

use crate::argmax::argmax_displacement;
use crate::error::{Error, Result};
use crate::fock_ops::{commutator, random_state, trace_product, DensityMatrix, FockSpace, Operator, Outcome};
use crate::openloop::{lyapunov_f, sample_outcome};
use crate::trajectory::{run_indexed, EnsembleSummary, Recorder, RngStream, StepRecord, TrajectoryRecord};

/// Objective used by the low-fidelity branch of the feedback law.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LawVariant {
    /// Product `tr{rho_bar D(rho_pred_g)} tr{rho_bar D(rho_pred_e)}` of the outcome branches.
    #[default]
    Delayed,
    /// Single trace `tr{rho_bar D(rho_pred)}`, as in the delay-free law.
    NoDelay,
}

impl LawVariant {
    pub fn name(self) -> &'static str {
        match self {
            LawVariant::Delayed => "delayed",
            LawVariant::NoDelay => "no_delay",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "delayed" => Some(LawVariant::Delayed),
            "no_delay" | "no-delay" | "nodelay" => Some(LawVariant::NoDelay),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeedbackParams {
    pub n_bar: usize,
    /// Gain of the tracking branch.
    pub epsilon: f64,
    /// Fidelity threshold between the two branches.
    pub eta: f64,
    /// Bound on the kick amplitude.
    pub alpha_max: f64,
    /// Number of atoms in flight between cavity and detector.
    pub delay: usize,
    pub law: LawVariant,
}

impl FeedbackParams {
    /// `eps = 1/(2 n_bar + 1)`, `eta = 1/10`, `alpha_max = 1`.
    pub fn standard(n_bar: usize, delay: usize) -> Self {
        FeedbackParams {
            n_bar,
            epsilon: 1.0 / (2 * n_bar + 1) as f64,
            eta: 0.1,
            alpha_max: 1.0,
            delay,
            law: LawVariant::Delayed,
        }
    }

    pub fn validate(&self, space: &FockSpace) -> Result<()> {
        if self.n_bar > space.n_max() {
            return Err(Error::InvalidParams(format!(
                "n_bar = {} exceeds n_max = {}",
                self.n_bar,
                space.n_max()
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParams("epsilon must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidParams("eta must lie in (0, 1)".into()));
        }
        if !(self.alpha_max > 0.0 && self.alpha_max.is_finite()) {
            return Err(Error::InvalidParams("alpha_max must be positive".into()));
        }
        Ok(())
    }
}

/// `chi = (rho, beta_1, ..., beta_d)` with the displacement of every pending
/// control cached alongside it.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlState {
    rho: DensityMatrix,
    betas: Vec<Complex64>,
    displacements: Vec<Operator>,
}

impl ControlState {
    pub fn new(space: &FockSpace, rho: DensityMatrix, betas: Vec<Complex64>) -> Result<Self> {
        if rho.dim() != space.dim() {
            return Err(Error::InvalidParams("state dimension does not match the cavity".into()));
        }
        let displacements = betas
            .iter()
            .map(|&b| space.displacement(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(ControlState {
            rho,
            betas,
            displacements,
        })
    }

    /// Empty delay line: `beta_1 = ... = beta_d = 0`.
    pub fn at_rest(space: &FockSpace, rho: DensityMatrix, delay: usize) -> Result<Self> {
        Self::new(space, rho, vec![Complex64::new(0.0, 0.0); delay])
    }

    pub fn rho(&self) -> &DensityMatrix {
        &self.rho
    }

    /// `betas()[l - 1]` is `beta_l`.
    pub fn betas(&self) -> &[Complex64] {
        &self.betas
    }

    pub fn delay(&self) -> usize {
        self.betas.len()
    }

    pub(crate) fn from_parts(rho: DensityMatrix, betas: Vec<Complex64>, displacements: Vec<Operator>) -> Self {
        ControlState {
            rho,
            betas,
            displacements,
        }
    }

    pub(crate) fn displacements(&self) -> &[Operator] {
        &self.displacements
    }
}

/// Average prediction of the state `d` steps ahead, split by the next outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub rho: Operator,
    /// Unnormalized `g`-branch; its trace is the probability of the next `g`.
    pub branch_g: Operator,
    pub branch_e: Operator,
}

impl Prediction {
    pub fn branch(&self, outcome: Outcome) -> &Operator {
        match outcome {
            Outcome::G => &self.branch_g,
            Outcome::E => &self.branch_e,
        }
    }
}

/// Which branch of the feedback law produced a control.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LawBranch {
    Tracking,
    Kick,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub alpha: Complex64,
    pub branch: LawBranch,
    /// `tr{rho_bar rho_pred}` at decision time.
    pub predicted_fidelity: f64,
}

/// Result of one closed-loop transition.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedStep {
    pub state: ControlState,
    pub outcome: Outcome,
    /// Control computed from `chi_k` (enters the delay line as `beta_1`).
    pub alpha: Complex64,
    /// Control actually displacing the cavity at this step (`beta_d`, or `alpha` when `d = 0`).
    pub applied: Complex64,
    pub branch: LawBranch,
}

/// Slacks of the two sub-martingale inequalities on the tracking region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lemma1Gap {
    /// `E[F(chi+)] - F(chi) - eps |tr{rho_bar [rho_pred, a]}|^2`, `F = tr{rho_bar rho_pred}`.
    pub gap_fid: f64,
    /// `E[V(chi+)] - V(chi) - eps/2 |.|^2 - P_g P_e (F_g - F_e)^2 / 2`.
    pub gap_v: f64,
}

/// One-step outcome of the kick branch from the low-fidelity region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KickReport {
    pub alpha: Complex64,
    /// `min_s tr{rho_bar rho_pred(chi+_s)}`.
    pub post_fidelity: f64,
    /// `tr{rho_bar D_alpha(rho_pred_g)}` and `tr{rho_bar D_alpha(rho_pred_e)}`.
    pub branch_traces: [f64; 2],
}

/// Closed-loop controller for a fixed cavity, target and law.
#[derive(Clone, Debug)]
pub struct Controller {
    space: FockSpace,
    params: FeedbackParams,
    target: DensityMatrix,
    /// `[a, rho_bar]`, so that `tr{rho_bar [X, a]} = tr{X [a, rho_bar]}`.
    comm_a_target: Operator,
}

impl Controller {
    pub fn new(space: FockSpace, params: FeedbackParams) -> Result<Self> {
        params.validate(&space)?;
        let target = space.fock_state(params.n_bar)?;
        let comm_a_target = commutator(&space.operators().annihilation, target.matrix());
        Ok(Controller {
            space,
            params,
            target,
            comm_a_target,
        })
    }

    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    pub fn params(&self) -> &FeedbackParams {
        &self.params
    }

    pub fn target(&self) -> &DensityMatrix {
        &self.target
    }

    /// `chi_bar = (rho_bar, 0, ..., 0)`.
    pub fn equilibrium(&self) -> Result<ControlState> {
        ControlState::at_rest(&self.space, self.target.clone(), self.params.delay)
    }

    fn check_delay(&self, chi: &ControlState) -> Result<()> {
        if chi.delay() != self.params.delay {
            return Err(Error::InvalidParams(format!(
                "delay line has {} entries, controller expects {}",
                chi.delay(),
                self.params.delay
            )));
        }
        Ok(())
    }

    /// `tr{rho_bar X}` for the target Fock state.
    pub fn target_trace(&self, x: &Operator) -> f64 {
        let n = self.params.n_bar;
        x[(n, n)].re
    }

    /// `tr{rho_bar [X, a]}`.
    pub fn tracking_signal(&self, x: &Operator) -> Complex64 {
        trace_product(x, &self.comm_a_target)
    }

    /// Predictor and its outcome branches.
    ///
    /// With `d = 0` the outcome of the next atom is drawn only after the control is
    /// applied, so both branches carry half of the current state.
    pub fn predict(&self, chi: &ControlState) -> Result<Prediction> {
        self.check_delay(chi)?;
        let rho = chi.rho().matrix();
        let ds = chi.displacements();
        let Some((last, rest)) = ds.split_last() else {
            let half = rho.scale(0.5);
            return Ok(Prediction {
                rho: rho.clone(),
                branch_g: half.clone(),
                branch_e: half,
            });
        };
        let displaced = self.space.displace(last, rho);
        let mut branch_g = self.space.measure_branch(Outcome::G, &displaced);
        let mut branch_e = self.space.measure_branch(Outcome::E, &displaced);
        for d in rest.iter().rev() {
            branch_g = self.space.kraus_with(d, &branch_g);
            branch_e = self.space.kraus_with(d, &branch_e);
        }
        Ok(Prediction {
            rho: &branch_g + &branch_e,
            branch_g,
            branch_e,
        })
    }

    pub fn predicted_fidelity(&self, chi: &ControlState) -> Result<f64> {
        Ok(self.target_trace(&self.predict(chi)?.rho))
    }

    /// Kick-branch objective evaluated at `alpha`.
    pub fn kick_objective(&self, pred: &Prediction, alpha: Complex64) -> f64 {
        let Ok(row) = self.space.displacement_row(alpha, self.params.n_bar) else {
            return f64::NEG_INFINITY;
        };
        let form = |x: &Operator| crate::fock_ops::row_quadratic_form(&row, x);
        match self.params.law {
            LawVariant::Delayed => form(&pred.branch_g) * form(&pred.branch_e),
            LawVariant::NoDelay => form(&pred.rho),
        }
    }

    fn decide(&self, pred: &Prediction) -> Decision {
        let fid = self.target_trace(&pred.rho);
        if fid >= self.params.eta {
            Decision {
                alpha: self.tracking_signal(&pred.rho) * self.params.epsilon,
                branch: LawBranch::Tracking,
                predicted_fidelity: fid,
            }
        } else {
            let alpha = argmax_displacement(|a| self.kick_objective(pred, a), self.params.alpha_max);
            Decision {
                alpha,
                branch: LawBranch::Kick,
                predicted_fidelity: fid,
            }
        }
    }

    /// The feedback law, a function of `chi` only.
    pub fn feedback(&self, chi: &ControlState) -> Result<Decision> {
        Ok(self.decide(&self.predict(chi)?))
    }

    pub fn feedback_alpha(&self, chi: &ControlState) -> Result<Complex64> {
        Ok(self.feedback(chi)?.alpha)
    }

    /// `V(chi) = f(tr{rho_bar rho_pred})`.
    pub fn lyapunov_v(&self, chi: &ControlState) -> Result<f64> {
        Ok(lyapunov_f(self.predicted_fidelity(chi)?))
    }

    /// Displacement applied to the cavity this step and the half-step state `D rho D^dag`.
    pub(crate) fn half_step(&self, chi: &ControlState, alpha: Complex64) -> Result<(Complex64, Operator, Operator)> {
        let (applied, d) = match (chi.betas.last(), chi.displacements.last()) {
            (Some(&b), Some(d)) => (b, d.clone()),
            _ => (alpha, self.space.displacement(alpha)?),
        };
        let displaced = self.space.displace(&d, chi.rho().matrix());
        Ok((applied, d, displaced))
    }

    /// Shifts the delay line: `beta_1+ = alpha`, `beta_{l+1}+ = beta_l`.
    pub(crate) fn shifted_line(&self, chi: &ControlState, alpha: Complex64) -> Result<(Vec<Complex64>, Vec<Operator>)> {
        let d = chi.delay();
        if d == 0 {
            return Ok((Vec::new(), Vec::new()));
        }
        let mut betas = Vec::with_capacity(d);
        let mut ds = Vec::with_capacity(d);
        betas.push(alpha);
        ds.push(self.space.displacement(alpha)?);
        betas.extend_from_slice(&chi.betas[..d - 1]);
        ds.extend_from_slice(&chi.displacements[..d - 1]);
        Ok((betas, ds))
    }

    /// Deterministic successor of `chi` for a given outcome and freshly computed
    /// control; returns the successor and the probability of that outcome.
    pub fn successor(
        &self,
        chi: &ControlState,
        alpha: Complex64,
        outcome: Outcome,
    ) -> Result<(ControlState, f64)> {
        self.check_delay(chi)?;
        let (_, _, displaced) = self.half_step(chi, alpha)?;
        let half = crate::fock_ops::repair(&displaced)?;
        let (rho, p) = self.space.jump(outcome, &half)?;
        let (betas, displacements) = self.shifted_line(chi, alpha)?;
        Ok((
            ControlState {
                rho,
                betas,
                displacements,
            },
            p,
        ))
    }

    /// One closed-loop transition with the outcome drawn from the true state.
    pub fn step<R: Rng + ?Sized>(&self, chi: &ControlState, rng: &mut R) -> Result<ClosedStep> {
        let decision = self.feedback(chi)?;
        let (applied, _, displaced) = self.half_step(chi, decision.alpha)?;
        let half = crate::fock_ops::repair(&displaced)?;
        let outcome = sample_outcome(self.space.outcome_probability(Outcome::G, &half), rng);
        let (rho, _) = self.space.jump(outcome, &half)?;
        let (betas, displacements) = self.shifted_line(chi, decision.alpha)?;
        Ok(ClosedStep {
            state: ControlState {
                rho,
                betas,
                displacements,
            },
            outcome,
            alpha: decision.alpha,
            applied,
            branch: decision.branch,
        })
    }

    /// Exact one-step sub-martingale slacks on `{tr{rho_bar rho_pred} >= eta}`.
    pub fn lemma1_gap(&self, chi: &ControlState) -> Result<Lemma1Gap> {
        let pred = self.predict(chi)?;
        let fid = self.target_trace(&pred.rho);
        if fid < self.params.eta {
            return Err(Error::Precondition(format!(
                "predicted fidelity {fid} below eta = {}",
                self.params.eta
            )));
        }
        let decision = self.decide(&pred);
        let signal = self.tracking_signal(&pred.rho).norm_sqr();
        let mut branch_fid = [0.0; 2];
        let mut probs = [0.0; 2];
        for (i, outcome) in Outcome::BOTH.into_iter().enumerate() {
            let (next, p) = self.successor(chi, decision.alpha, outcome)?;
            probs[i] = p;
            branch_fid[i] = self.predicted_fidelity(&next)?;
        }
        let expected_fid = probs[0] * branch_fid[0] + probs[1] * branch_fid[1];
        let expected_v = probs[0] * lyapunov_f(branch_fid[0]) + probs[1] * lyapunov_f(branch_fid[1]);
        let eps = self.params.epsilon;
        Ok(Lemma1Gap {
            gap_fid: expected_fid - fid - eps * signal,
            gap_v: expected_v
                - lyapunov_f(fid)
                - 0.5 * eps * signal
                - 0.5 * probs[0] * probs[1] * (branch_fid[0] - branch_fid[1]).powi(2),
        })
    }

    /// One kick from `{tr{rho_bar rho_pred} < eta}`, evaluated for both outcomes.
    pub fn lemma2_kick(&self, chi: &ControlState) -> Result<KickReport> {
        let pred = self.predict(chi)?;
        let fid = self.target_trace(&pred.rho);
        if fid >= self.params.eta {
            return Err(Error::Precondition(format!(
                "predicted fidelity {fid} not below eta = {}",
                self.params.eta
            )));
        }
        let decision = self.decide(&pred);
        let d = self.space.displacement(decision.alpha)?;
        let n = self.params.n_bar;
        let branch_traces = [
            self.space.displaced_population(&d, &pred.branch_g, n),
            self.space.displaced_population(&d, &pred.branch_e, n),
        ];
        let mut post = f64::INFINITY;
        for outcome in Outcome::BOTH {
            let (next, _) = self.successor(chi, decision.alpha, outcome)?;
            post = post.min(self.predicted_fidelity(&next)?);
        }
        Ok(KickReport {
            alpha: decision.alpha,
            post_fidelity: post,
            branch_traces,
        })
    }
}

/// Simulates one closed-loop trajectory. The logged `alpha` at step `k` is the
/// control computed from `chi_{k-1}`, so the log is enough to replay the law.
pub fn run_closed_trajectory(
    ctl: &Controller,
    chi0: &ControlState,
    steps: usize,
    stream: RngStream,
    record_every: usize,
) -> Result<TrajectoryRecord> {
    let mut rng = stream.rng();
    let mut rec = Recorder::new(record_every);
    let n = ctl.params().n_bar;
    let mut chi = chi0.clone();
    rec.push(
        chi.rho(),
        StepRecord {
            k: 0,
            fidelity: chi.rho().population(n),
            outcome: None,
            alpha: Complex64::new(0.0, 0.0),
            frob_dist: None,
        },
    );
    for k in 1..=steps {
        let step = ctl.step(&chi, &mut rng)?;
        chi = step.state;
        rec.push(
            chi.rho(),
            StepRecord {
                k,
                fidelity: chi.rho().population(n),
                outcome: Some(step.outcome),
                alpha: step.alpha,
                frob_dist: None,
            },
        );
    }
    Ok(rec.finish(stream.stream_id as usize))
}

/// Closed-loop ensemble from a common initial state; trajectory `i` uses stream `i`.
pub fn run_closed_ensemble(
    ctl: &Controller,
    chi0: &ControlState,
    steps: usize,
    n_traj: usize,
    seed: u64,
    record_every: usize,
) -> Result<EnsembleSummary> {
    let records = run_indexed(n_traj, |i| {
        run_closed_trajectory(ctl, chi0, steps, RngStream::new(seed, i as u64), record_every)
    })?;
    Ok(EnsembleSummary::from_records(records, ctl.space().dim()))
}

/// Random delay line with amplitudes uniform on the disk `|beta| <= radius`.
pub fn random_betas<R: Rng + ?Sized>(d: usize, radius: f64, rng: &mut R) -> Vec<Complex64> {
    (0..d)
        .map(|_| {
            let r = radius * rng.random::<f64>().sqrt();
            Complex64::from_polar(r, rng.random::<f64>() * std::f64::consts::TAU)
        })
        .collect()
}

/// Attempts before a rejection sampler gives up.
pub const SAMPLER_ATTEMPTS: usize = 200_000;

fn rejection<R: Rng + ?Sized>(
    what: &str,
    rng: &mut R,
    mut draw: impl FnMut(&mut R) -> Result<ControlState>,
    accept: impl Fn(&ControlState) -> Result<bool>,
) -> Result<ControlState> {
    for _ in 0..SAMPLER_ATTEMPTS {
        let chi = draw(rng)?;
        if accept(&chi)? {
            return Ok(chi);
        }
    }
    Err(Error::Precondition(format!("no {what} state after {SAMPLER_ATTEMPTS} draws")))
}

/// Rejection sampler for `chi` with `tr{rho_bar rho_pred} >= eta`: `rho` mixes the
/// target with a random full-rank state, the delay line is uniform on `|beta| <= alpha_max`.
pub fn sample_tracking_state<R: Rng + ?Sized>(ctl: &Controller, rng: &mut R) -> Result<ControlState> {
    let space = ctl.space();
    let p = ctl.params();
    rejection(
        "tracking",
        rng,
        |rng| {
            let w: f64 = rng.random();
            let r = random_state(space.dim(), rng);
            let rho = DensityMatrix::new(ctl.target().matrix().scale(w) + r.matrix().scale(1.0 - w))?;
            ControlState::new(space, rho, random_betas(p.delay, p.alpha_max, rng))
        },
        |chi| Ok(ctl.predicted_fidelity(chi)? >= p.eta),
    )
}

/// Rejection sampler for `chi` with `tr{rho_bar rho_pred} < eta`: `rho` mixes a
/// random full-rank state with a Fock state `m != n_bar`; the delay line radius
/// is itself uniform on `[0, alpha_max]` so that near-rest lines are common.
pub fn sample_kick_state<R: Rng + ?Sized>(ctl: &Controller, rng: &mut R) -> Result<ControlState> {
    let space = ctl.space();
    let p = ctl.params();
    rejection(
        "kick",
        rng,
        |rng| {
            let mut m = rng.random_range(0..space.dim() - 1);
            if m >= p.n_bar {
                m += 1;
            }
            let w: f64 = rng.random();
            let r = random_state(space.dim(), rng);
            let rho = DensityMatrix::new(space.fock_state(m)?.matrix().scale(w) + r.matrix().scale(1.0 - w))?;
            let radius = p.alpha_max * rng.random::<f64>();
            ControlState::new(space, rho, random_betas(p.delay, radius, rng))
        },
        |chi| Ok(ctl.predicted_fidelity(chi)? < p.eta),
    )
}

/// Worst slacks of [`Controller::lemma1_gap`] over a random sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lemma1Summary {
    pub samples: usize,
    pub worst_gap_fid: f64,
    pub worst_gap_v: f64,
}

impl Lemma1Summary {
    pub fn holds(&self, tol: f64) -> bool {
        self.worst_gap_fid >= -tol && self.worst_gap_v >= -tol
    }
}

pub fn lemma1_suite<R: Rng + ?Sized>(ctl: &Controller, samples: usize, rng: &mut R) -> Result<Lemma1Summary> {
    let mut out = Lemma1Summary {
        samples,
        worst_gap_fid: f64::INFINITY,
        worst_gap_v: f64::INFINITY,
    };
    for _ in 0..samples {
        let gap = ctl.lemma1_gap(&sample_tracking_state(ctl, rng)?)?;
        out.worst_gap_fid = out.worst_gap_fid.min(gap.gap_fid);
        out.worst_gap_v = out.worst_gap_v.min(gap.gap_v);
    }
    Ok(out)
}

/// Worst post-kick fidelity and the empirical `delta` over a random sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lemma2Summary {
    pub samples: usize,
    pub eta: f64,
    /// `min` over the sample of `min_s tr{rho_bar rho_pred(chi+_s)}`.
    pub worst_post_fidelity: f64,
    /// `min` over the sample of both branch traces at the chosen kick.
    pub delta: f64,
}

impl Lemma2Summary {
    pub fn holds(&self) -> bool {
        self.worst_post_fidelity >= 2.0 * self.eta
    }
}

pub fn lemma2_suite<R: Rng + ?Sized>(ctl: &Controller, samples: usize, rng: &mut R) -> Result<Lemma2Summary> {
    let mut out = Lemma2Summary {
        samples,
        eta: ctl.params().eta,
        worst_post_fidelity: f64::INFINITY,
        delta: f64::INFINITY,
    };
    for _ in 0..samples {
        let report = ctl.lemma2_kick(&sample_kick_state(ctl, rng)?)?;
        out.worst_post_fidelity = out.worst_post_fidelity.min(report.post_fidelity);
        out.delta = out.delta.min(report.branch_traces[0].min(report.branch_traces[1]));
    }
    Ok(out)
}

/// Largest `eta` on the grid `eta_max, eta_max - step, ...` for which the kick
/// suite reaches `2 eta` on every sampled state. Each candidate reuses `seed`.
pub fn lemma2_eta_sweep(
    space: &FockSpace,
    params: FeedbackParams,
    samples: usize,
    seed: u64,
    grid: &[f64],
) -> Result<Option<f64>> {
    for &eta in grid {
        let ctl = Controller::new(space.clone(), FeedbackParams { eta, ..params })?;
        let mut rng = RngStream::new(seed, 0).rng();
        if lemma2_suite(&ctl, samples, &mut rng)?.holds() {
            return Ok(Some(eta));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock_ops::{max_abs, FockParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn controller(delay: usize) -> Controller {
        let space = FockSpace::new(FockParams::default()).unwrap();
        Controller::new(space, FeedbackParams::standard(3, delay)).unwrap()
    }

    #[test]
    fn prediction_without_delay_is_the_state() {
        let ctl = controller(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = random_state(11, &mut rng);
        let chi = ControlState::at_rest(ctl.space(), rho.clone(), 0).unwrap();
        let pred = ctl.predict(&chi).unwrap();
        assert_eq!(&pred.rho, rho.matrix());
        assert!(max_abs(&(&pred.branch_g + &pred.branch_e - rho.matrix())) < 1e-15);
    }

    #[test]
    fn prediction_fixes_target_at_rest() {
        let ctl = controller(5);
        let chi = ctl.equilibrium().unwrap();
        let pred = ctl.predict(&chi).unwrap();
        assert!(max_abs(&(&pred.rho - ctl.target().matrix())) < 1e-15);
    }

    #[test]
    fn prediction_matches_dense_oracle() {
        let space = FockSpace::new(FockParams::new(3, 0.4, 0.3).unwrap()).unwrap();
        let mut fp = FeedbackParams::standard(1, 2);
        fp.law = LawVariant::Delayed;
        let ctl = Controller::new(space.clone(), fp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let rho = random_state(4, &mut rng);
            let betas = random_betas(2, 1.0, &mut rng);
            let chi = ControlState::new(&space, rho.clone(), betas.clone()).unwrap();
            let pred = ctl.predict(&chi).unwrap();
            // K_{b1}(K_{b2}(rho)) with explicit Kraus sums
            let ops = space.operators();
            let kraus = |b: Complex64, x: &Operator| {
                let d = space.displacement(b).unwrap();
                let y = &d * x * d.adjoint();
                &ops.m_g * &y * ops.m_g.adjoint() + &ops.m_e * &y * ops.m_e.adjoint()
            };
            let oracle = kraus(betas[0], &kraus(betas[1], rho.matrix()));
            assert!(max_abs(&(&pred.rho - &oracle)) < 1e-12);
            let d2 = space.displacement(betas[1]).unwrap();
            let g = &ops.m_g * (&d2 * rho.matrix() * d2.adjoint()) * ops.m_g.adjoint();
            assert!(max_abs(&(&pred.branch_g - kraus(betas[0], &g))) < 1e-12);
            assert!(max_abs(&(&pred.branch_g + &pred.branch_e - &pred.rho)) < 1e-12);
        }
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        for d in [0, 1, 5] {
            let ctl = controller(d);
            let chi = ctl.equilibrium().unwrap();
            assert_eq!(ctl.feedback_alpha(&chi).unwrap(), c(0.0, 0.0));
            for outcome in Outcome::BOTH {
                let (next, _) = ctl.successor(&chi, c(0.0, 0.0), outcome).unwrap();
                assert_eq!(next, chi);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
            let step = ctl.step(&chi, &mut rng).unwrap();
            assert_eq!(step.state, chi);
        }
    }

    #[test]
    fn no_delay_tracking_law() {
        let ctl = controller(0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let target = ctl.target().matrix().clone();
        let a = &ctl.space().operators().annihilation;
        let mut checked = 0;
        while checked < 5 {
            let rho = random_state(11, &mut rng);
            let mixed = (target.scale(0.5) + rho.matrix().scale(0.5)).clone();
            let rho = DensityMatrix::new(mixed).unwrap();
            let chi = ControlState::at_rest(ctl.space(), rho.clone(), 0).unwrap();
            let expected = trace_product(&target, &commutator(rho.matrix(), a)) / 7.0;
            let got = ctl.feedback(&chi).unwrap();
            assert_eq!(got.branch, LawBranch::Tracking);
            assert!((got.alpha - expected).norm() < 1e-14);
            checked += 1;
        }
    }

    #[test]
    fn zero_delay_step_applies_fresh_control() {
        let ctl = controller(0);
        let space = ctl.space();
        let rho = space.coherent_state(c(3f64.sqrt(), 0.0)).unwrap();
        let chi = ControlState::at_rest(space, rho.clone(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let step = ctl.step(&chi, &mut rng).unwrap();
        assert_eq!(step.applied, step.alpha);
        let d = space.displacement(step.alpha).unwrap();
        let half = space.displace_state(&d, &rho).unwrap();
        let (expected, _) = space.jump(step.outcome, &half).unwrap();
        assert!(max_abs(&(step.state.rho().matrix() - expected.matrix())) < 1e-14);
    }

    #[test]
    fn delay_line_shifts() {
        let ctl = controller(3);
        let space = ctl.space();
        let rho = space.coherent_state(c(1.0, 0.5)).unwrap();
        let betas = vec![c(0.1, 0.0), c(0.0, 0.2), c(-0.3, 0.1)];
        let chi = ControlState::new(space, rho, betas.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let step = ctl.step(&chi, &mut rng).unwrap();
        assert_eq!(step.applied, betas[2]);
        assert_eq!(step.state.betas(), &[step.alpha, betas[0], betas[1]]);
    }

    #[test]
    fn kick_from_vacuum_is_nonzero() {
        let ctl = controller(0);
        let vac = ctl.space().fock_state(0).unwrap();
        let chi = ControlState::at_rest(ctl.space(), vac, 0).unwrap();
        let decision = ctl.feedback(&chi).unwrap();
        assert_eq!(decision.branch, LawBranch::Kick);
        assert!(decision.alpha.norm() > 0.0);
        let report = ctl.lemma2_kick(&chi).unwrap();
        assert!(report.branch_traces.iter().all(|&t| t > 0.0));
        // |<3|D_alpha|0>|^2 is maximal at the boundary of the unit disk
        assert!((decision.alpha.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_function_values() {
        let ctl = controller(2);
        let chi = ctl.equilibrium().unwrap();
        assert!((ctl.lyapunov_v(&chi).unwrap() - 1.0).abs() < 1e-15);
        let vac = ControlState::at_rest(ctl.space(), ctl.space().fock_state(0).unwrap(), 2).unwrap();
        assert_eq!(ctl.lyapunov_v(&vac).unwrap(), 0.0);
        assert_eq!(lyapunov_f(0.5), 0.375);
    }

    #[test]
    fn lemma_preconditions_are_enforced() {
        let ctl = controller(1);
        let vac = ControlState::at_rest(ctl.space(), ctl.space().fock_state(0).unwrap(), 1).unwrap();
        assert!(matches!(ctl.lemma1_gap(&vac), Err(Error::Precondition(_))));
        let eq = ctl.equilibrium().unwrap();
        assert!(matches!(ctl.lemma2_kick(&eq), Err(Error::Precondition(_))));
        let gap = ctl.lemma1_gap(&eq).unwrap();
        assert!(gap.gap_fid.abs() < 1e-15 && gap.gap_v.abs() < 1e-15);
    }

    #[test]
    fn lemma1_without_delay_matches_direct_law() {
        let ctl = controller(0);
        let space = ctl.space();
        let a = &space.operators().annihilation;
        let target = ctl.target().matrix().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let w: f64 = rng.random();
            let r = random_state(11, &mut rng);
            let rho = DensityMatrix::new(target.scale(w) + r.matrix().scale(1.0 - w)).unwrap();
            if rho.population(3) < 0.1 {
                continue;
            }
            let chi = ControlState::at_rest(space, rho.clone(), 0).unwrap();
            let gap = ctl.lemma1_gap(&chi).unwrap();
            // direct evaluation of E[tr{rho_bar rho+}] with alpha = eps tr{rho_bar [rho, a]}
            let c_sig = trace_product(&target, &commutator(rho.matrix(), a));
            let alpha = c_sig / 7.0;
            let d = space.displacement(alpha).unwrap();
            let ops = space.operators();
            let half = &d * rho.matrix() * d.adjoint();
            let mut expected = 0.0;
            for m in [&ops.m_g, &ops.m_e] {
                let b = m * &half * m.adjoint();
                let p = b.trace().re;
                expected += p * (b[(3, 3)].re / p);
            }
            let direct = expected - rho.population(3) - c_sig.norm_sqr() / 7.0;
            assert!((gap.gap_fid - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn logged_controls_replay() {
        let ctl = controller(2);
        let space = ctl.space();
        let chi0 = ControlState::at_rest(space, space.coherent_state(c(3f64.sqrt(), 0.0)).unwrap(), 2).unwrap();
        let t = run_closed_trajectory(&ctl, &chi0, 30, RngStream::new(4, 0), 1).unwrap();
        // rebuild chi_k from the logged outcomes and check the logged controls
        let mut chi = chi0;
        for rec in &t.steps[1..] {
            let alpha = ctl.feedback_alpha(&chi).unwrap();
            assert_eq!(alpha, rec.alpha);
            chi = ctl.successor(&chi, alpha, rec.outcome.unwrap()).unwrap().0;
            assert!((chi.rho().population(3) - rec.fidelity).abs() < 1e-12);
        }
    }

    #[test]
    fn samplers_respect_their_regions() {
        let ctl = controller(2);
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..10 {
            let t = sample_tracking_state(&ctl, &mut rng).unwrap();
            assert!(ctl.predicted_fidelity(&t).unwrap() >= 0.1);
            assert!(t.betas().iter().all(|b| b.norm() <= 1.0));
            let k = sample_kick_state(&ctl, &mut rng).unwrap();
            assert!(ctl.predicted_fidelity(&k).unwrap() < 0.1);
        }
    }

    #[test]
    fn kick_branches_are_positive_on_a_sample() {
        let ctl = controller(5);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let summary = lemma2_suite(&ctl, 10, &mut rng).unwrap();
        assert!(summary.delta > 0.0);
        assert!(summary.worst_post_fidelity > 0.0);
    }
}
