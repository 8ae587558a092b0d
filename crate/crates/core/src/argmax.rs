// Copyright 2026 The photonbox Authors
// SPDX-License-Identifier: Apache-2.0

//! Maximization of a real objective over the closed disk `|alpha| <= alpha_max`.
//!
//! A coarse polar grid is searched exhaustively, then refined locally around the
//! incumbent. Exact ties resolve to the smallest modulus, then the smallest phase
//! in `[0, 2 pi)`, so the result is a deterministic function of the objective.

use std::cmp::Ordering;
use std::f64::consts::TAU;

use num_complex::Complex64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarGrid {
    /// Number of radii in the coarse grid, `0` and `alpha_max` included.
    pub radii: usize,
    pub angles: usize,
    pub refinements: usize,
    /// Each refinement divides the grid spacing by this factor.
    pub shrink: f64,
}

impl Default for PolarGrid {
    fn default() -> Self {
        PolarGrid {
            radii: 25,
            angles: 64,
            refinements: 3,
            shrink: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    r: f64,
    phase: f64,
    value: f64,
}

impl Candidate {
    fn alpha(&self) -> Complex64 {
        Complex64::from_polar(self.r, self.phase)
    }

    /// Larger objective wins; ties go to smaller `(r, phase)`.
    fn beats(&self, other: &Candidate) -> bool {
        match self.value.partial_cmp(&other.value) {
            Some(Ordering::Greater) => true,
            Some(Ordering::Less) => false,
            _ if other.value.is_nan() && !self.value.is_nan() => true,
            _ => (self.r, self.phase) < (other.r, other.phase),
        }
    }
}

fn normalize_phase(phase: f64, r: f64) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    let p = phase.rem_euclid(TAU);
    if p >= TAU {
        0.0
    } else {
        p
    }
}

/// Returns the maximizer and its objective value.
pub fn argmax_on_disk<F>(mut objective: F, alpha_max: f64, grid: &PolarGrid) -> (Complex64, f64)
where
    F: FnMut(Complex64) -> f64,
{
    let mut eval = |r: f64, phase: f64| {
        let phase = normalize_phase(phase, r);
        let value = objective(Complex64::from_polar(r, phase));
        Candidate { r, phase, value }
    };

    let mut best = eval(0.0, 0.0);
    let dr0 = alpha_max / (grid.radii.max(2) - 1) as f64;
    let dphi0 = TAU / grid.angles.max(1) as f64;
    for i in 1..grid.radii.max(2) {
        let r = if i == grid.radii.max(2) - 1 { alpha_max } else { i as f64 * dr0 };
        for j in 0..grid.angles.max(1) {
            let c = eval(r, j as f64 * dphi0);
            if c.beats(&best) {
                best = c;
            }
        }
    }

    let (mut dr, mut dphi) = (dr0, dphi0);
    let half = grid.shrink.round().max(1.0) as i64;
    for _ in 0..grid.refinements {
        let (fine_r, fine_phi) = (dr / grid.shrink, dphi / grid.shrink);
        let center = best;
        for i in -half..=half {
            let r = center.r + i as f64 * fine_r;
            if r < 0.0 || r > alpha_max * (1.0 + 1e-12) {
                continue;
            }
            let r = r.min(alpha_max);
            for j in -half..=half {
                let c = eval(r, center.phase + j as f64 * fine_phi);
                if c.beats(&best) {
                    best = c;
                }
            }
        }
        dr = fine_r;
        dphi = fine_phi;
    }
    (best.alpha(), best.value)
}

/// Maximizer over `|alpha| <= alpha_max` with the default grid.
pub fn argmax_displacement<F>(objective: F, alpha_max: f64) -> Complex64
where
    F: FnMut(Complex64) -> f64,
{
    argmax_on_disk(objective, alpha_max, &PolarGrid::default()).0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_objective_returns_zero() {
        let a = argmax_displacement(|_| 1.0, 1.0);
        assert_eq!(a, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn radial_peak_is_found() {
        let a = argmax_displacement(|z| -(z.norm() - 0.5).powi(2), 1.0);
        assert!((a.norm() - 0.5).abs() < 1e-3);
        // the whole circle ties; smallest phase wins
        assert_eq!(a.arg(), 0.0);
    }

    #[test]
    fn off_grid_peak_is_refined() {
        let peak = Complex64::from_polar(0.613, 1.234);
        let (a, v) = argmax_on_disk(|z| -(z - peak).norm_sqr(), 1.0, &PolarGrid::default());
        assert!((a - peak).norm() < 2e-3, "{a}");
        assert!(v > -4e-6);
    }

    #[test]
    fn boundary_maximum() {
        let a = argmax_displacement(|z| z.re, 0.7);
        assert!((a - Complex64::new(0.7, 0.0)).norm() < 1e-12);
        let a = argmax_displacement(|z| -z.im, 2.0);
        assert!((a.norm() - 2.0).abs() < 1e-12);
        assert!((a.arg() + std::f64::consts::FRAC_PI_2).abs() < 1e-9);
    }
}
