// Copyright 2026 The photonbox Authors
// SPDX-License-Identifier: Apache-2.0

//! Ensemble-level invariants outside the acceptance suite.

use num_complex::Complex64;

use photonbox::delayed_feedback::{ControlState, Controller, FeedbackParams};
use photonbox::filter::{kernel_inclusion, run_filter_ensemble, JointState};
use photonbox::fock_ops::{FockParams, FockSpace};
use photonbox::openloop::run_open_ensemble;

fn space() -> FockSpace {
    FockSpace::new(FockParams::default()).unwrap()
}

#[test]
fn fock_initial_state_stays_put_in_open_loop() {
    let s = space();
    let summary = run_open_ensemble(&s, &s.fock_state(3).unwrap(), 3, 400, 50, 1, 1).unwrap();
    assert_eq!(summary.converged_fraction(3), 1.0);
    assert!(summary.mean_fidelity.iter().all(|&f| (f - 1.0).abs() < 1e-12));
}

#[test]
fn filter_from_mixed_estimator_converges_to_the_target() {
    let s = space();
    let ctl = Controller::new(s.clone(), FeedbackParams::standard(3, 5)).unwrap();
    let est = ControlState::at_rest(&s, s.maximally_mixed(), 5).unwrap();
    for (seed, rho0) in [
        (31, s.coherent_state(Complex64::new(3f64.sqrt(), 0.0)).unwrap()),
        (32, s.fock_state(0).unwrap()),
    ] {
        assert!(kernel_inclusion(est.rho(), &rho0));
        let xi0 = JointState::new(rho0, est.clone()).unwrap();
        let summary = run_filter_ensemble(&ctl, &xi0, 600, 250, seed, 1).unwrap();
        let frac = summary.converged_fraction(3);
        assert!(frac >= 0.95, "seed {seed}: converged fraction {frac}");
    }
}
