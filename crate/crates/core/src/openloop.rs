// Copyright 2026 The photonbox Authors
// SPDX-License-Identifier: Apache-2.0

//! The uncontrolled chain `rho_{k+1} = M_{s_k}(rho_k)` and its one-step
//! martingale identities.
//!
//! Every population `<n|rho_k|n>` is a martingale of the open loop and
//! `V_n = f(<n|rho|n>)` with `f(x) = (x + x^2)/2` is a sub-martingale. The
//! oracles below evaluate the conditional expectations by explicit enumeration
//! of the two detector outcomes.

use num_complex::Complex64;
use rand::Rng;

use crate::error::Result;
use crate::fock_ops::{DensityMatrix, FockSpace, Outcome};
use crate::trajectory::{run_indexed, EnsembleSummary, Recorder, RngStream, StepRecord, TrajectoryRecord};

/// `f(x) = (x + x^2) / 2`.
pub fn lyapunov_f(x: f64) -> f64 {
    0.5 * (x + x * x)
}

/// `V_n(rho) = f(<n|rho|n>)`.
pub fn v_n(rho: &DensityMatrix, n: usize) -> f64 {
    lyapunov_f(rho.population(n))
}

/// `W_n(rho) = <n|rho|n> (1 - <n|rho|n>)`.
pub fn w_n(rho: &DensityMatrix, n: usize) -> f64 {
    let p = rho.population(n);
    p * (1.0 - p)
}

/// Draws `g` when a uniform sample falls below `p_g`.
pub fn sample_outcome<R: Rng + ?Sized>(p_g: f64, rng: &mut R) -> Outcome {
    let u: f64 = rng.random();
    if u < p_g {
        Outcome::G
    } else {
        Outcome::E
    }
}

/// One open-loop step: sample the detector outcome and apply the jump.
pub fn step_open<R: Rng + ?Sized>(
    space: &FockSpace,
    rho: &DensityMatrix,
    rng: &mut R,
) -> Result<(DensityMatrix, Outcome)> {
    let outcome = sample_outcome(space.outcome_probability(Outcome::G, rho), rng);
    let (next, _) = space.jump(outcome, rho)?;
    Ok((next, outcome))
}

/// `P_g <n|M_g(rho)|n> + P_e <n|M_e(rho)|n>` for both outcomes.
fn expected_population(space: &FockSpace, rho: &DensityMatrix, n: usize) -> Result<Vec<(f64, f64)>> {
    Outcome::BOTH
        .iter()
        .map(|&s| space.jump(s, rho).map(|(post, p)| (p, post.population(n))))
        .collect()
}

/// `|E[<n|rho_{k+1}|n> | rho_k = rho] - <n|rho|n>|` by enumeration.
pub fn martingale_check(space: &FockSpace, rho: &DensityMatrix, n: usize) -> Result<f64> {
    let expected: f64 = expected_population(space, rho, n)?
        .iter()
        .map(|(p, x)| p * x)
        .sum();
    Ok((expected - rho.population(n)).abs())
}

/// The one-step increment of `V_n`, by enumeration and by its closed form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubmartingaleGap {
    /// `E[V_n(rho_{k+1}) | rho] - V_n(rho)` by summing over both outcomes.
    pub enumerated: f64,
    /// `P_g P_e <n|rho|n>^2 (cos^2 phi_n / P_g - sin^2 phi_n / P_e)^2 / 2`.
    pub closed_form: f64,
}

pub fn submartingale_gap_vn(space: &FockSpace, rho: &DensityMatrix, n: usize) -> Result<SubmartingaleGap> {
    let branches = expected_population(space, rho, n)?;
    let expected: f64 = branches.iter().map(|(p, x)| p * lyapunov_f(*x)).sum();
    let enumerated = expected - v_n(rho, n);
    let p_g = space.outcome_probability(Outcome::G, rho);
    let p_e = space.outcome_probability(Outcome::E, rho);
    let pop = rho.population(n);
    let diff = space.cos_phase(n).powi(2) / p_g - space.sin_phase(n).powi(2) / p_e;
    let closed_form = 0.5 * p_g * p_e * pop * pop * diff * diff;
    Ok(SubmartingaleGap {
        enumerated,
        closed_form,
    })
}

/// Simulates one open-loop trajectory, logging `<target|rho_k|target>`.
pub fn run_open_trajectory(
    space: &FockSpace,
    rho0: &DensityMatrix,
    target: usize,
    steps: usize,
    stream: RngStream,
    record_every: usize,
) -> Result<TrajectoryRecord> {
    let mut rng = stream.rng();
    let mut rec = Recorder::new(record_every);
    let zero = Complex64::new(0.0, 0.0);
    let mut rho = rho0.clone();
    rec.push(
        &rho,
        StepRecord {
            k: 0,
            fidelity: rho.population(target),
            outcome: None,
            alpha: zero,
            frob_dist: None,
        },
    );
    for k in 1..=steps {
        let (next, outcome) = step_open(space, &rho, &mut rng)?;
        rho = next;
        rec.push(
            &rho,
            StepRecord {
                k,
                fidelity: rho.population(target),
                outcome: Some(outcome),
                alpha: zero,
                frob_dist: None,
            },
        );
    }
    Ok(rec.finish(stream.stream_id as usize))
}

/// Open-loop ensemble from a common initial state; trajectory `i` uses stream `i`.
pub fn run_open_ensemble(
    space: &FockSpace,
    rho0: &DensityMatrix,
    target: usize,
    steps: usize,
    n_traj: usize,
    seed: u64,
    record_every: usize,
) -> Result<EnsembleSummary> {
    let records = run_indexed(n_traj, |i| {
        run_open_trajectory(space, rho0, target, steps, RngStream::new(seed, i as u64), record_every)
    })?;
    Ok(EnsembleSummary::from_records(records, space.dim()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock_ops::{max_abs, random_state, FockParams, Operator};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space() -> FockSpace {
        FockSpace::new(FockParams::default()).unwrap()
    }

    #[test]
    fn fock_states_are_absorbing() {
        let s = space();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [0, 3, 10] {
            let f = s.fock_state(n).unwrap();
            let mut rho = f.clone();
            for _ in 0..20 {
                rho = step_open(&s, &rho, &mut rng).unwrap().0;
            }
            assert!(max_abs(&(rho.matrix() - f.matrix())) < 1e-12);
        }
    }

    #[test]
    fn martingale_residuals_vanish() {
        let s = space();
        let mixed = s.maximally_mixed();
        assert!(martingale_check(&s, &mixed, 3).unwrap() < 1e-12);
        let coh = s.coherent_state(Complex64::new(3f64.sqrt(), 0.0)).unwrap();
        for n in 0..=10 {
            assert!(martingale_check(&s, &coh, n).unwrap() < 1e-12);
        }
    }

    #[test]
    fn submartingale_gap_edge_cases() {
        let s = space();
        let f = s.fock_state(4).unwrap();
        let gap = submartingale_gap_vn(&s, &f, 4).unwrap();
        assert!(gap.enumerated.abs() < 1e-12 && gap.closed_form.abs() < 1e-12);

        // zero population at n: build a random state with row/column n removed
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = random_state(11, &mut rng);
        let mut m: Operator = r.matrix().clone();
        for j in 0..11 {
            m[(2, j)] = Complex64::new(0.0, 0.0);
            m[(j, 2)] = Complex64::new(0.0, 0.0);
        }
        let tr = m.trace().re;
        let rho = DensityMatrix::new(m.unscale(tr)).unwrap();
        let gap = submartingale_gap_vn(&s, &rho, 2).unwrap();
        assert!(gap.enumerated.abs() < 1e-12 && gap.closed_form.abs() < 1e-12);
    }

    #[test]
    fn submartingale_gap_matches_closed_form() {
        let s = FockSpace::new(FockParams::new(4, 0.3, 0.27).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let rho = random_state(5, &mut rng);
            for n in 0..5 {
                let gap = submartingale_gap_vn(&s, &rho, n).unwrap();
                assert!((gap.enumerated - gap.closed_form).abs() < 1e-12);
                assert!(gap.enumerated >= -1e-12);
            }
        }
    }

    #[test]
    fn trajectory_is_deterministic() {
        let s = space();
        let rho0 = s.coherent_state(Complex64::new(3f64.sqrt(), 0.0)).unwrap();
        let a = run_open_trajectory(&s, &rho0, 3, 100, RngStream::new(11, 2), 1).unwrap();
        let b = run_open_trajectory(&s, &rho0, 3, 100, RngStream::new(11, 2), 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps.len(), 101);
        let c = run_open_trajectory(&s, &rho0, 3, 100, RngStream::new(11, 3), 1).unwrap();
        assert_ne!(a.steps, c.steps);
    }

    #[test]
    fn coherent_trajectory_reaches_a_fock_state() {
        let s = space();
        let rho0 = s.coherent_state(Complex64::new(3f64.sqrt(), 0.0)).unwrap();
        let t = run_open_trajectory(&s, &rho0, 3, 400, RngStream::new(3, 0), 1).unwrap();
        assert!(t.converged_to.is_some());
    }

    #[test]
    fn ensemble_from_fock_state() {
        let s = space();
        let f3 = s.fock_state(3).unwrap();
        let summary = run_open_ensemble(&s, &f3, 3, 60, 20, 5, 1).unwrap();
        assert_eq!(summary.converged_counts[3], 20);
        assert!(summary.mean_fidelity.iter().all(|&f| (f - 1.0).abs() < 1e-12));
    }
}
