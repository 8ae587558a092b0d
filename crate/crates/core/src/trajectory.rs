// Copyright 2026 The photonbox Authors
// SPDX-License-Identifier: Apache-2.0

//! Per-step trajectory logs, convergence classification and ensemble summaries.

use num_complex::Complex64;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::fock_ops::{DensityMatrix, Outcome};

/// A trajectory counts as converged to `|n><n|` when `<n|rho_k|n>` exceeds this
/// threshold over the final [`CONVERGENCE_WINDOW`] states.
pub const CONVERGENCE_THRESHOLD: f64 = 0.999;
pub const CONVERGENCE_WINDOW: usize = 50;

/// Reproducible random stream for one trajectory.
///
/// The generator is ChaCha8 seeded from the master seed, with the trajectory
/// index selecting one of its 2^64 independent streams. Results therefore do not
/// depend on how trajectories are scheduled across threads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// One logged step. `outcome` and `alpha` describe the transition that produced
/// the state at step `k` (absent at `k = 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub fidelity: f64,
    pub outcome: Option<Outcome>,
    pub alpha: Complex64,
    pub frob_dist: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub traj: usize,
    pub steps: Vec<StepRecord>,
    /// Fock state the trajectory converged to under the windowed rule.
    pub converged_to: Option<usize>,
    pub final_fidelity: f64,
    pub final_frob_dist: Option<f64>,
}

/// Tracks how long the dominant population has stayed above threshold.
#[derive(Clone, Debug, Default)]
pub struct ConvergenceTracker {
    current: Option<usize>,
    run: usize,
    seen: usize,
}

impl ConvergenceTracker {
    pub fn observe(&mut self, rho: &DensityMatrix) {
        self.seen += 1;
        let (n, p) = rho.dominant();
        if p > CONVERGENCE_THRESHOLD {
            if self.current == Some(n) {
                self.run += 1;
            } else {
                self.current = Some(n);
                self.run = 1;
            }
        } else {
            self.current = None;
            self.run = 0;
        }
    }

    /// The Fock index whose population stayed above threshold over the final
    /// window (or over every observed state, for runs shorter than the window).
    pub fn classify(&self) -> Option<usize> {
        let needed = CONVERGENCE_WINDOW.min(self.seen).max(1);
        match self.current {
            Some(n) if self.run >= needed => Some(n),
            _ => None,
        }
    }
}

/// Accumulates the step log of a single trajectory with a recording stride.
#[derive(Clone, Debug)]
pub struct Recorder {
    stride: usize,
    steps: Vec<StepRecord>,
    tracker: ConvergenceTracker,
    last: Option<StepRecord>,
}

impl Recorder {
    pub fn new(stride: usize) -> Self {
        Recorder {
            stride: stride.max(1),
            steps: Vec::new(),
            tracker: ConvergenceTracker::default(),
            last: None,
        }
    }

    pub fn push(&mut self, rho: &DensityMatrix, record: StepRecord) {
        self.tracker.observe(rho);
        if record.k % self.stride == 0 {
            self.steps.push(record);
            self.last = None;
        } else {
            self.last = Some(record);
        }
    }

    pub fn finish(mut self, traj: usize) -> TrajectoryRecord {
        // The final state is always logged.
        if let Some(last) = self.last.take() {
            self.steps.push(last);
        }
        let final_step = self.steps.last().expect("at least the initial state is recorded");
        TrajectoryRecord {
            traj,
            final_fidelity: final_step.fidelity,
            final_frob_dist: final_step.frob_dist,
            converged_to: self.tracker.classify(),
            steps: self.steps,
        }
    }
}

/// Ensemble statistics aggregated from exactly the logged records.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSummary {
    pub trajectories: Vec<TrajectoryRecord>,
    /// Recorded step indices shared by all trajectories.
    pub k: Vec<usize>,
    pub mean_fidelity: Vec<f64>,
    pub mean_frob_dist: Option<Vec<f64>>,
    /// `converged_counts[n]` trajectories were classified at `|n><n|`.
    pub converged_counts: Vec<usize>,
    pub unconverged: usize,
}

impl EnsembleSummary {
    pub fn from_records(trajectories: Vec<TrajectoryRecord>, dim: usize) -> Self {
        let k: Vec<usize> = trajectories
            .first()
            .map(|t| t.steps.iter().map(|s| s.k).collect())
            .unwrap_or_default();
        let n = trajectories.len().max(1) as f64;
        let mut mean_fidelity = vec![0.0; k.len()];
        let has_frob = trajectories
            .first()
            .is_some_and(|t| t.steps.iter().all(|s| s.frob_dist.is_some()));
        let mut mean_frob = vec![0.0; k.len()];
        let mut converged_counts = vec![0; dim];
        let mut unconverged = 0;
        for t in &trajectories {
            for (i, s) in t.steps.iter().enumerate() {
                mean_fidelity[i] += s.fidelity / n;
                if let Some(f) = s.frob_dist {
                    mean_frob[i] += f / n;
                }
            }
            match t.converged_to {
                Some(c) if c < dim => converged_counts[c] += 1,
                _ => unconverged += 1,
            }
        }
        EnsembleSummary {
            trajectories,
            k,
            mean_fidelity,
            mean_frob_dist: has_frob.then_some(mean_frob),
            converged_counts,
            unconverged,
        }
    }

    pub fn n_traj(&self) -> usize {
        self.trajectories.len()
    }

    pub fn converged_fraction(&self, n: usize) -> f64 {
        self.converged_counts.get(n).copied().unwrap_or(0) as f64 / self.n_traj().max(1) as f64
    }

    pub fn mean_final_fidelity(&self) -> f64 {
        self.mean_fidelity.last().copied().unwrap_or(f64::NAN)
    }

    pub fn mean_final_frob_dist(&self) -> Option<f64> {
        self.mean_frob_dist.as_ref().and_then(|v| v.last().copied())
    }

    /// Mean fidelity at recorded step `k`.
    pub fn mean_fidelity_at(&self, k: usize) -> Option<f64> {
        self.k.iter().position(|&x| x == k).map(|i| self.mean_fidelity[i])
    }
}

/// Runs `n_traj` independent trajectories on the current rayon pool and returns
/// them in index order.
pub fn run_indexed<F>(n_traj: usize, run: F) -> Result<Vec<TrajectoryRecord>>
where
    F: Fn(usize) -> Result<TrajectoryRecord> + Sync + Send,
{
    (0..n_traj)
        .into_par_iter()
        .map(|i| run(i).map_err(|e| e.in_trajectory(i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock_ops::{FockParams, FockSpace};
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut r = RngStream::new(7, 3).rng();
        let a: Vec<u64> = (0..4).map(|_| r.random::<u64>()).collect();
        let mut r = RngStream::new(7, 3).rng();
        let b: Vec<u64> = (0..4).map(|_| r.random::<u64>()).collect();
        assert_eq!(a, b);
        let mut other = RngStream::new(7, 4).rng();
        assert_ne!(b[0], other.random::<u64>());
    }

    #[test]
    fn tracker_requires_full_window() {
        let space = FockSpace::new(FockParams::default()).unwrap();
        let f3 = space.fock_state(3).unwrap();
        let mixed = space.maximally_mixed();
        let mut t = ConvergenceTracker::default();
        t.observe(&mixed);
        assert_eq!(t.classify(), None);
        for _ in 0..49 {
            t.observe(&f3);
        }
        assert_eq!(t.classify(), None);
        t.observe(&f3);
        assert_eq!(t.classify(), Some(3));
        let mut short = ConvergenceTracker::default();
        short.observe(&f3);
        assert_eq!(short.classify(), Some(3));
    }

    #[test]
    fn recorder_keeps_final_step_with_stride() {
        let space = FockSpace::new(FockParams::default()).unwrap();
        let rho = space.fock_state(3).unwrap();
        let mut rec = Recorder::new(4);
        for k in 0..=6 {
            let step = StepRecord {
                k,
                fidelity: 1.0,
                outcome: None,
                alpha: Complex64::new(0.0, 0.0),
                frob_dist: None,
            };
            rec.push(&rho, step);
        }
        let t = rec.finish(0);
        let ks: Vec<usize> = t.steps.iter().map(|s| s.k).collect();
        assert_eq!(ks, vec![0, 4, 6]);
    }
}
