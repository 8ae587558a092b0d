// Copyright 2026 The photonbox Authors
// SPDX-License-Identifier: Apache-2.0

//! Quantum filter and estimator-driven feedback.
//!
//! The controller only sees the estimator `rho_est`, updated with the same
//! detector outcomes and the same applied controls as the cavity. The outcome
//! itself is drawn from the true state.

use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use rand::Rng;

use crate::delayed_feedback::{ControlState, Controller, LawBranch};
use crate::error::{Error, Result};
use crate::fock_ops::{hermitian_part, repair, DensityMatrix, Outcome};
use crate::openloop::sample_outcome;
use crate::trajectory::{run_indexed, EnsembleSummary, Recorder, RngStream, StepRecord, TrajectoryRecord};

/// Eigenvalues below this bound count as kernel directions.
pub const KERNEL_EIGEN_TOL: f64 = 1e-10;
/// `|rho_0 v|` below this bound puts `v` in the kernel of `rho_0`.
pub const KERNEL_IMAGE_TOL: f64 = 1e-8;

/// `Xi = (rho, rho_est, beta_1, ..., beta_d)`. The estimator carries the shared delay line.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub rho: DensityMatrix,
    pub estimator: ControlState,
}

impl JointState {
    pub fn new(rho: DensityMatrix, estimator: ControlState) -> Result<Self> {
        if rho.dim() != estimator.rho().dim() {
            return Err(Error::InvalidParams("true and estimated states differ in dimension".into()));
        }
        Ok(JointState { rho, estimator })
    }

    pub fn rho_est(&self) -> &DensityMatrix {
        self.estimator.rho()
    }

    pub fn betas(&self) -> &[Complex64] {
        self.estimator.betas()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointStep {
    pub state: JointState,
    pub outcome: Outcome,
    /// Control computed from the estimator.
    pub alpha: Complex64,
    pub applied: Complex64,
    pub branch: LawBranch,
}

/// `sqrt(tr{(A - B)^2})` for Hermitian `A`, `B`.
pub fn frobenius_distance(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
    (a.matrix() - b.matrix()).norm()
}

/// True iff every kernel direction of `rho_est0` is annihilated by `rho0`.
pub fn kernel_inclusion(rho_est0: &DensityMatrix, rho0: &DensityMatrix) -> bool {
    let eig = SymmetricEigen::new(hermitian_part(rho_est0.matrix()));
    eig.eigenvalues.iter().enumerate().all(|(k, &l)| {
        l >= KERNEL_EIGEN_TOL || (rho0.matrix() * eig.eigenvectors.column(k)).norm() < KERNEL_IMAGE_TOL
    })
}

/// One step of the joint system-observer chain.
pub fn step_joint<R: Rng + ?Sized>(ctl: &Controller, xi: &JointState, rng: &mut R) -> Result<JointStep> {
    let space = ctl.space();
    let chi = &xi.estimator;
    let decision = ctl.feedback(chi)?;
    let (applied, d, est_displaced) = ctl.half_step(chi, decision.alpha)?;
    let true_half = repair(&space.displace(&d, xi.rho.matrix()))?;
    let est_half = repair(&est_displaced)?;
    let outcome = sample_outcome(space.outcome_probability(Outcome::G, &true_half), rng);
    let (rho, _) = space.jump(outcome, &true_half)?;
    let (rho_est, _) = space.jump(outcome, &est_half)?;
    let (betas, displacements) = ctl.shifted_line(chi, decision.alpha)?;
    Ok(JointStep {
        state: JointState {
            rho,
            estimator: ControlState::from_parts(rho_est, betas, displacements),
        },
        outcome,
        alpha: decision.alpha,
        applied,
        branch: decision.branch,
    })
}

/// Simulates one joint trajectory, logging the true fidelity and the estimation error.
pub fn run_filter_trajectory(
    ctl: &Controller,
    xi0: &JointState,
    steps: usize,
    stream: RngStream,
    record_every: usize,
) -> Result<TrajectoryRecord> {
    let mut rng = stream.rng();
    let mut rec = Recorder::new(record_every);
    let n = ctl.params().n_bar;
    let mut xi = xi0.clone();
    rec.push(
        &xi.rho,
        StepRecord {
            k: 0,
            fidelity: xi.rho.population(n),
            outcome: None,
            alpha: Complex64::new(0.0, 0.0),
            frob_dist: Some(frobenius_distance(&xi.rho, xi.rho_est())),
        },
    );
    for k in 1..=steps {
        let step = step_joint(ctl, &xi, &mut rng)?;
        xi = step.state;
        rec.push(
            &xi.rho,
            StepRecord {
                k,
                fidelity: xi.rho.population(n),
                outcome: Some(step.outcome),
                alpha: step.alpha,
                frob_dist: Some(frobenius_distance(&xi.rho, xi.rho_est())),
            },
        );
    }
    Ok(rec.finish(stream.stream_id as usize))
}

pub fn run_filter_ensemble(
    ctl: &Controller,
    xi0: &JointState,
    steps: usize,
    n_traj: usize,
    seed: u64,
    record_every: usize,
) -> Result<EnsembleSummary> {
    let records = run_indexed(n_traj, |i| {
        run_filter_trajectory(ctl, xi0, steps, RngStream::new(seed, i as u64), record_every)
    })?;
    Ok(EnsembleSummary::from_records(records, ctl.space().dim()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delayed_feedback::{run_closed_trajectory, FeedbackParams};
    use crate::fock_ops::{FockParams, FockSpace, Operator};

    fn controller(delay: usize) -> Controller {
        let space = FockSpace::new(FockParams::default()).unwrap();
        Controller::new(space, FeedbackParams::standard(3, delay)).unwrap()
    }

    fn coherent(ctl: &Controller) -> DensityMatrix {
        ctl.space().coherent_state(Complex64::new(3f64.sqrt(), 0.0)).unwrap()
    }

    #[test]
    fn frobenius_distance_values() {
        let ctl = controller(0);
        let s = ctl.space();
        let f0 = s.fock_state(0).unwrap();
        assert_eq!(frobenius_distance(&f0, &f0), 0.0);
        let f1 = s.fock_state(1).unwrap();
        assert!((frobenius_distance(&f0, &f1) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn kernel_inclusion_cases() {
        let ctl = controller(0);
        let s = ctl.space();
        let mixed = s.maximally_mixed();
        assert!(kernel_inclusion(&mixed, &coherent(&ctl)));
        assert!(kernel_inclusion(&mixed, &s.fock_state(7).unwrap()));
        let f0 = s.fock_state(0).unwrap();
        let f1 = s.fock_state(1).unwrap();
        assert!(!kernel_inclusion(&f0, &f1));
        // span{|0>, |1>} estimator, rho0 = |+><+| inside that span
        let mut est = Operator::zeros(11, 11);
        est[(0, 0)] = Complex64::new(0.5, 0.0);
        est[(1, 1)] = Complex64::new(0.5, 0.0);
        let est = DensityMatrix::new(est).unwrap();
        let mut plus = Operator::zeros(11, 11);
        for i in 0..2 {
            for j in 0..2 {
                plus[(i, j)] = Complex64::new(0.5, 0.0);
            }
        }
        let plus = DensityMatrix::new(plus).unwrap();
        assert!(kernel_inclusion(&est, &plus));
        assert!(!kernel_inclusion(&plus, &est));
    }

    #[test]
    fn target_is_a_joint_fixed_point() {
        let ctl = controller(5);
        let eq = ctl.equilibrium().unwrap();
        let xi = JointState::new(ctl.target().clone(), eq).unwrap();
        let mut rng = RngStream::new(1, 0).rng();
        for _ in 0..5 {
            let step = step_joint(&ctl, &xi, &mut rng).unwrap();
            assert_eq!(step.state, xi);
        }
    }

    #[test]
    fn exact_estimator_reproduces_the_closed_loop() {
        let ctl = controller(5);
        let rho0 = coherent(&ctl);
        let chi0 = ControlState::at_rest(ctl.space(), rho0.clone(), 5).unwrap();
        let xi0 = JointState::new(rho0, chi0.clone()).unwrap();
        let joint = run_filter_trajectory(&ctl, &xi0, 200, RngStream::new(9, 1), 1).unwrap();
        let closed = run_closed_trajectory(&ctl, &chi0, 200, RngStream::new(9, 1), 1).unwrap();
        for (a, b) in joint.steps.iter().zip(&closed.steps) {
            assert!(a.frob_dist.unwrap() < 1e-10);
            assert_eq!(a.outcome, b.outcome);
            assert_eq!(a.alpha, b.alpha);
            assert!((a.fidelity - b.fidelity).abs() < 1e-12);
        }
    }

    #[test]
    fn outcomes_follow_the_true_state() {
        // Same true state and RNG stream, different estimators: the first
        // outcome only depends on the true state when no control is pending.
        let ctl = controller(2);
        let s = ctl.space();
        let rho0 = coherent(&ctl);
        let a = JointState::new(rho0.clone(), ControlState::at_rest(s, s.maximally_mixed(), 2).unwrap()).unwrap();
        let b = JointState::new(rho0, ControlState::at_rest(s, s.fock_state(3).unwrap(), 2).unwrap()).unwrap();
        for seed in 0..20 {
            let sa = step_joint(&ctl, &a, &mut RngStream::new(seed, 0).rng()).unwrap();
            let sb = step_joint(&ctl, &b, &mut RngStream::new(seed, 0).rng()).unwrap();
            assert_eq!(sa.outcome, sb.outcome);
            assert_eq!(sa.state.rho, sb.state.rho);
        }
    }
}
