// Copyright 2026 The photonbox Authors
// SPDX-License-Identifier: Apache-2.0

//! Linearized dynamics around the target `rho_bar = |n_bar><n_bar|`.
//!
//! Every linearized chain is driven by i.i.d. outcomes with `P_g = cos^2 phi_n_bar`
//! and the diagonal matrices `A_g = M_g / cos phi_n_bar`, `A_e = M_e / sin phi_n_bar`,
//! so `A_s X A_s^dag` is an entrywise product with a fixed weight matrix.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fock_ops::{commutator, max_abs, trace_product, FockSpace, Operator, Outcome};
use crate::openloop::sample_outcome;

/// Tolerance on the Hermiticity and trace invariants of tangent matrices,
/// relative to their largest entry.
pub const TANGENT_TOL: f64 = 1e-12;

/// Largest Lyapunov exponent of the linearized open loop and its per-level terms.
#[derive(Clone, Debug, PartialEq)]
pub struct ExponentTable {
    /// `(n, Lambda^n)` for every `n != n_bar`.
    pub per_n: Vec<(usize, f64)>,
    pub lambda: f64,
    /// Level attaining the maximum (lowest index on ties).
    pub argmax: usize,
}

/// Traceless Hermitian perturbation `delta rho`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentState(Operator);

impl TangentState {
    pub fn new(m: Operator) -> Result<Self> {
        let scale = max_abs(&m).max(1.0);
        let skew = max_abs(&(&m - m.adjoint()));
        if skew > TANGENT_TOL * scale {
            return Err(Error::InvalidParams(format!("tangent is not Hermitian (skew {skew:e})")));
        }
        let tr = m.trace().norm();
        if tr > TANGENT_TOL * scale {
            return Err(Error::InvalidParams(format!("tangent trace {tr:e} is not zero")));
        }
        Ok(TangentState(m))
    }

    pub fn zeros(dim: usize) -> Self {
        TangentState(Operator::zeros(dim, dim))
    }

    /// Random Hermitian traceless matrix with entries of order one.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut m = Operator::from_fn(dim, dim, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        m = (&m + m.adjoint()).scale(0.5);
        let shift = m.trace() / dim as f64;
        for i in 0..dim {
            m[(i, i)] -= shift;
            m[(i, i)].im = 0.0;
        }
        TangentState(m)
    }

    pub fn matrix(&self) -> &Operator {
        &self.0
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.0[(i, j)]
    }
}

/// `X = (x, y, z_1, ..., z_d)` with `x = <n_bar|d rho|n_bar-1>`, `y = <n_bar+1|d rho|n_bar>`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedClosedLoopState {
    pub x: Complex64,
    pub y: Complex64,
    pub z: Vec<Complex64>,
}

impl ReducedClosedLoopState {
    pub fn zeros(d: usize) -> Self {
        ReducedClosedLoopState {
            x: Complex64::new(0.0, 0.0),
            y: Complex64::new(0.0, 0.0),
            z: vec![Complex64::new(0.0, 0.0); d],
        }
    }

    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let mut c = || Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        ReducedClosedLoopState {
            x: c(),
            y: c(),
            z: (0..d).map(|_| c()).collect(),
        }
    }
}

/// `(delta rho, delta beta_1, ..., delta beta_d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedTangent {
    pub delta_rho: TangentState,
    pub z: Vec<Complex64>,
}

/// `(delta rho, delta rho_est, delta beta_1, ..., delta beta_d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterTangent {
    pub delta_rho: TangentState,
    pub delta_rho_est: TangentState,
    pub z: Vec<Complex64>,
}

/// Linear state spaces that can be rescaled by a positive factor.
pub trait Tangent: Clone {
    fn scaled(&self, s: f64) -> Self;
}

impl Tangent for TangentState {
    fn scaled(&self, s: f64) -> Self {
        TangentState(self.0.scale(s))
    }
}

impl Tangent for ReducedClosedLoopState {
    fn scaled(&self, s: f64) -> Self {
        ReducedClosedLoopState {
            x: self.x * s,
            y: self.y * s,
            z: self.z.iter().map(|z| z * s).collect(),
        }
    }
}

impl Tangent for ClosedTangent {
    fn scaled(&self, s: f64) -> Self {
        ClosedTangent {
            delta_rho: self.delta_rho.scaled(s),
            z: self.z.iter().map(|z| z * s).collect(),
        }
    }
}

impl Tangent for FilterTangent {
    fn scaled(&self, s: f64) -> Self {
        FilterTangent {
            delta_rho: self.delta_rho.scaled(s),
            delta_rho_est: self.delta_rho_est.scaled(s),
            z: self.z.iter().map(|z| z * s).collect(),
        }
    }
}

fn max_modulus(z: &[Complex64]) -> f64 {
    z.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Max entrywise magnitude of a matrix tangent.
pub fn tangent_norm(t: &TangentState) -> f64 {
    max_abs(t.matrix())
}

pub fn closed_tangent_norm(t: &ClosedTangent) -> f64 {
    tangent_norm(&t.delta_rho).max(max_modulus(&t.z))
}

pub fn filter_tangent_norm(t: &FilterTangent) -> f64 {
    tangent_norm(&t.delta_rho)
        .max(tangent_norm(&t.delta_rho_est))
        .max(max_modulus(&t.z))
}

fn lambda_terms(space: &FockSpace, n_bar: usize) -> Result<Vec<(usize, f64)>> {
    if n_bar > space.n_max() {
        return Err(Error::InvalidParams(format!(
            "n_bar = {n_bar} exceeds n_max = {}",
            space.n_max()
        )));
    }
    let (cb, sb) = (space.cos_phase(n_bar), space.sin_phase(n_bar));
    let (pg, pe) = (cb * cb, sb * sb);
    let mut out = Vec::with_capacity(space.n_max());
    for n in (0..=space.n_max()).filter(|&n| n != n_bar) {
        let term = pg * (space.cos_phase(n).abs() / cb.abs()).ln() + pe * (space.sin_phase(n).abs() / sb.abs()).ln();
        if !(term < 0.0) {
            return Err(Error::InvalidParams(format!(
                "degenerate measurement: Lambda^{n} = {term} is not negative"
            )));
        }
        out.push((n, term));
    }
    Ok(out)
}

fn table_from(per_n: Vec<(usize, f64)>) -> Option<ExponentTable> {
    let (argmax, lambda) = per_n
        .iter()
        .copied()
        .fold(None, |best: Option<(usize, f64)>, (n, l)| match best {
            Some((_, bl)) if bl >= l => best,
            _ => Some((n, l)),
        })?;
    Some(ExponentTable { per_n, lambda, argmax })
}

/// `Lambda = max_{n != n_bar} cos^2 phi_nb ln|cos phi_n / cos phi_nb| + sin^2 phi_nb ln|sin phi_n / sin phi_nb|`.
pub fn open_loop_exponent(space: &FockSpace, n_bar: usize) -> Result<ExponentTable> {
    let per_n = lambda_terms(space, n_bar)?;
    table_from(per_n).ok_or_else(|| Error::InvalidParams("need at least two Fock levels".into()))
}

/// Same maximum restricted to `n` outside `{n_bar - 1, n_bar, n_bar + 1}`; `None`
/// when no level is left.
pub fn closed_loop_exponent_lambda0(space: &FockSpace, n_bar: usize) -> Result<Option<ExponentTable>> {
    let per_n = lambda_terms(space, n_bar)?
        .into_iter()
        .filter(|&(n, _)| n + 1 != n_bar && n != n_bar + 1)
        .collect();
    Ok(table_from(per_n))
}

/// `sigma = |cos theta|` and `mu = (sqrt(n_bar) + sqrt(n_bar + 1)) / sigma^(d-1)`.
pub fn supermartingale_weights(theta: f64, n_bar: usize, delay: usize) -> Result<(f64, f64)> {
    let sigma = theta.cos().abs();
    if !(sigma > 1e-12 && sigma < 1.0 - 1e-12) {
        return Err(Error::InvalidParams(format!("sigma = |cos theta| = {sigma} must lie in (0, 1)")));
    }
    let nb = n_bar as f64;
    let mu = (nb.sqrt() + (nb + 1.0).sqrt()) / sigma.powi(delay as i32 - 1);
    Ok((sigma, mu))
}

/// Linearization data shared by the open-loop, closed-loop and filter chains.
#[derive(Clone, Debug)]
pub struct Linearization {
    n_bar: usize,
    dim: usize,
    p_g: f64,
    weight_g: Operator,
    weight_e: Operator,
    /// `[a^dag, rho_bar]` and `[a, rho_bar]`.
    comm_ad: Operator,
    comm_a: Operator,
    theta: f64,
    cos_theta: f64,
    /// Coefficients `a_g, a_e, b_g, b_e` of the reduced chain.
    a_coef: [f64; 2],
    b_coef: [f64; 2],
}

impl Linearization {
    pub fn new(space: &FockSpace, n_bar: usize) -> Result<Self> {
        if n_bar > space.n_max() {
            return Err(Error::InvalidParams(format!(
                "n_bar = {n_bar} exceeds n_max = {}",
                space.n_max()
            )));
        }
        let dim = space.dim();
        let (cb, sb) = (space.cos_phase(n_bar), space.sin_phase(n_bar));
        let weight = |m: &[f64], norm: f64| {
            Operator::from_fn(dim, dim, |i, j| Complex64::new(m[i] * m[j] / (norm * norm), 0.0))
        };
        let target = space.fock_state(n_bar)?;
        let ops = space.operators();
        let ratio = |n: Option<usize>| -> [f64; 2] {
            match n {
                Some(n) if n < dim => [space.cos_phase(n) / cb, space.sin_phase(n) / sb],
                _ => [0.0, 0.0],
            }
        };
        Ok(Linearization {
            n_bar,
            dim,
            p_g: cb * cb,
            weight_g: weight(space.measurement_diag(Outcome::G), cb),
            weight_e: weight(space.measurement_diag(Outcome::E), sb),
            comm_ad: commutator(&ops.creation, target.matrix()),
            comm_a: commutator(&ops.annihilation, target.matrix()),
            theta: space.params().theta,
            cos_theta: space.params().theta.cos(),
            a_coef: ratio(n_bar.checked_sub(1)),
            b_coef: ratio(Some(n_bar + 1)),
        })
    }

    pub fn n_bar(&self) -> usize {
        self.n_bar
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p_g(&self) -> f64 {
        self.p_g
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Outcome {
        sample_outcome(self.p_g, rng)
    }

    pub fn probability(&self, outcome: Outcome) -> f64 {
        match outcome {
            Outcome::G => self.p_g,
            Outcome::E => 1.0 - self.p_g,
        }
    }

    /// `a_s^{n1,n2}` for the given outcome.
    pub fn coefficient(&self, outcome: Outcome, n1: usize, n2: usize) -> f64 {
        self.weight(outcome)[(n1, n2)].re
    }

    fn weight(&self, outcome: Outcome) -> &Operator {
        match outcome {
            Outcome::G => &self.weight_g,
            Outcome::E => &self.weight_e,
        }
    }

    /// `A_s X A_s^dag - tr{A_s X A_s^dag} rho_bar`.
    fn propagate(&self, outcome: Outcome, x: &Operator) -> Operator {
        let mut out = x.component_mul(self.weight(outcome));
        let tr = out.trace();
        out[(self.n_bar, self.n_bar)] -= tr;
        out
    }

    /// `tr{delta rho [a, rho_bar]}`.
    pub fn tracking_signal(&self, delta_rho: &TangentState) -> Complex64 {
        trace_product(delta_rho.matrix(), &self.comm_a)
    }

    /// `delta rho + b [a^dag, rho_bar] - b^* [a, rho_bar]`.
    fn kicked(&self, delta_rho: &TangentState, b: Complex64) -> Operator {
        if b == Complex64::new(0.0, 0.0) {
            return delta_rho.matrix().clone();
        }
        delta_rho.matrix() + self.comm_ad.map(|v| v * b) - self.comm_a.map(|v| v * b.conj())
    }

    /// Open-loop linearized step for a given outcome.
    pub fn step_lin_open(&self, delta_rho: &TangentState, outcome: Outcome) -> TangentState {
        TangentState(self.propagate(outcome, delta_rho.matrix()))
    }

    pub fn step_lin_open_sampled<R: Rng + ?Sized>(&self, delta_rho: &TangentState, rng: &mut R) -> TangentState {
        self.step_lin_open(delta_rho, self.sample(rng))
    }
}

/// Linearized closed loop for a fixed gain and delay.
#[derive(Clone, Debug)]
pub struct LinearClosedLoop {
    lin: Linearization,
    epsilon: f64,
    delay: usize,
}

impl LinearClosedLoop {
    pub fn new(lin: Linearization, epsilon: f64, delay: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParams("epsilon must be positive".into()));
        }
        Ok(LinearClosedLoop { lin, epsilon, delay })
    }

    pub fn linearization(&self) -> &Linearization {
        &self.lin
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    /// Upper gain bound `(1 - sigma) / (2 (n_bar + 1))` of the contraction estimate.
    pub fn admissible_gain(&self) -> f64 {
        (1.0 - self.lin.cos_theta.abs()) / (2.0 * (self.lin.n_bar as f64 + 1.0))
    }

    pub fn gain_is_admissible(&self) -> bool {
        self.epsilon < self.admissible_gain()
    }

    fn check_line(&self, z: &[Complex64]) -> Result<()> {
        if z.len() != self.delay {
            return Err(Error::InvalidParams(format!(
                "delay line has {} entries, expected {}",
                z.len(),
                self.delay
            )));
        }
        Ok(())
    }

    /// `delta beta_1+ = -eps (2 n_bar + 1) sum_j cos^j theta z_j + eps cos^d theta signal`.
    fn fresh_control(&self, z: &[Complex64], signal: Complex64) -> Complex64 {
        let c = self.lin.cos_theta;
        let mut weighted = Complex64::new(0.0, 0.0);
        let mut cj = 1.0;
        for zj in z {
            cj *= c;
            weighted += zj * cj;
        }
        let nb = self.lin.n_bar as f64;
        (-weighted * (2.0 * nb + 1.0) + signal * c.powi(self.delay as i32)) * self.epsilon
    }

    /// Control displacing the cavity this step and the shifted delay line.
    ///
    /// With `d = 0` the fresh control acts immediately and the line stays empty.
    fn advance(&self, z: &[Complex64], signal: Complex64) -> (Complex64, Vec<Complex64>) {
        let fresh = self.fresh_control(z, signal);
        match z.split_last() {
            None => (fresh, Vec::new()),
            Some((&last, rest)) => {
                let mut next = Vec::with_capacity(z.len());
                next.push(fresh);
                next.extend_from_slice(rest);
                (last, next)
            }
        }
    }

    pub fn step_lin_closed(
        &self,
        delta_rho: &TangentState,
        z: &[Complex64],
        outcome: Outcome,
    ) -> Result<(TangentState, Vec<Complex64>)> {
        self.check_line(z)?;
        let (applied, z_next) = self.advance(z, self.lin.tracking_signal(delta_rho));
        let next = self.lin.propagate(outcome, &self.lin.kicked(delta_rho, applied));
        Ok((TangentState(next), z_next))
    }

    pub fn step_closed_tangent(&self, t: &ClosedTangent, outcome: Outcome) -> Result<ClosedTangent> {
        let (delta_rho, z) = self.step_lin_closed(&t.delta_rho, &t.z, outcome)?;
        Ok(ClosedTangent { delta_rho, z })
    }

    /// Reduced `(x, y, z)` chain.
    pub fn step_reduced(&self, x: &ReducedClosedLoopState, outcome: Outcome) -> Result<ReducedClosedLoopState> {
        self.check_line(&x.z)?;
        let nb = self.lin.n_bar as f64;
        let signal = x.x * nb.sqrt() - x.y * (nb + 1.0).sqrt();
        let (applied, z) = self.advance(&x.z, signal);
        let i = match outcome {
            Outcome::G => 0,
            Outcome::E => 1,
        };
        Ok(ReducedClosedLoopState {
            x: (x.x - applied * nb.sqrt()) * self.lin.a_coef[i],
            y: (x.y + applied * (nb + 1.0).sqrt()) * self.lin.b_coef[i],
            z,
        })
    }

    /// `sigma = |cos theta|` and `mu = (sqrt(n_bar) + sqrt(n_bar + 1)) / sigma^(d-1)`.
    pub fn norm_weights(&self) -> Result<(f64, f64)> {
        supermartingale_weights(self.lin.theta, self.lin.n_bar, self.delay)
    }

    /// `V(X) = |x| + |y| + mu (|z_1| + sigma |z_2| + ... + sigma^(d-1) |z_d|)`.
    pub fn supermartingale_norm(&self, x: &ReducedClosedLoopState) -> Result<f64> {
        let (sigma, mu) = self.norm_weights()?;
        let mut tail = 0.0;
        let mut w = 1.0;
        for z in &x.z {
            tail += w * z.norm();
            w *= sigma;
        }
        Ok(x.x.norm() + x.y.norm() + mu * tail)
    }

    /// `E[V(X+) | X]` by enumeration of both outcomes.
    pub fn expected_norm_next(&self, x: &ReducedClosedLoopState) -> Result<f64> {
        let mut acc = 0.0;
        for outcome in Outcome::BOTH {
            acc += self.lin.probability(outcome) * self.supermartingale_norm(&self.step_reduced(x, outcome)?)?;
        }
        Ok(acc)
    }

    /// The contraction factor `sigma (1 + 2 eps (n_bar + 1))`.
    pub fn contraction_factor(&self) -> Result<f64> {
        let (sigma, _) = self.norm_weights()?;
        Ok(sigma * (1.0 + 2.0 * self.epsilon * (self.lin.n_bar as f64 + 1.0)))
    }

    /// Projection of a full tangent onto the reduced coordinates.
    pub fn reduce(&self, t: &ClosedTangent) -> ReducedClosedLoopState {
        let nb = self.lin.n_bar;
        let zero = Complex64::new(0.0, 0.0);
        ReducedClosedLoopState {
            x: nb.checked_sub(1).map_or(zero, |m| t.delta_rho.entry(nb, m)),
            y: if nb + 1 < self.lin.dim { t.delta_rho.entry(nb + 1, nb) } else { zero },
            z: t.z.clone(),
        }
    }

    /// Linearized system-observer step: the estimator drives the control and
    /// both perturbations see the same outcome and the same applied control.
    pub fn step_lin_filter(&self, t: &FilterTangent, outcome: Outcome) -> Result<FilterTangent> {
        self.check_line(&t.z)?;
        let (applied, z) = self.advance(&t.z, self.lin.tracking_signal(&t.delta_rho_est));
        let delta_rho = TangentState(self.lin.propagate(outcome, &self.lin.kicked(&t.delta_rho, applied)));
        let delta_rho_est = TangentState(self.lin.propagate(outcome, &self.lin.kicked(&t.delta_rho_est, applied)));
        Ok(FilterTangent {
            delta_rho,
            delta_rho_est,
            z,
        })
    }
}

/// `(1/k) sum_j ln(|X_{j+1}| / |X_j|)` with the tangent renormalized to unit norm
/// after every step.
pub fn empirical_exponent<T, R, S, N>(init: &T, n_steps: usize, rng: &mut R, mut step: S, norm: N) -> Result<f64>
where
    T: Tangent,
    R: Rng + ?Sized,
    S: FnMut(&T, &mut R) -> Result<T>,
    N: Fn(&T) -> f64,
{
    if n_steps == 0 {
        return Err(Error::Precondition("need at least one step".into()));
    }
    let n0 = norm(init);
    if !(n0 > 0.0 && n0.is_finite()) {
        return Err(Error::Precondition("initial tangent must have a positive finite norm".into()));
    }
    let mut x = init.scaled(1.0 / n0);
    let mut log_sum = 0.0;
    for k in 0..n_steps {
        let next = step(&x, rng)?;
        let n = norm(&next);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::NumericalFault(format!("tangent norm {n} at step {k}")));
        }
        log_sum += n.ln();
        x = next.scaled(1.0 / n);
    }
    Ok(log_sum / n_steps as f64)
}

/// Largest `E[V(X+) | X] - sigma (1 + 2 eps (n_bar + 1)) V(X)` over random reduced states.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionSummary {
    pub samples: usize,
    pub factor: f64,
    pub worst_excess: f64,
}

pub fn contraction_suite<R: Rng + ?Sized>(lc: &LinearClosedLoop, samples: usize, rng: &mut R) -> Result<ContractionSummary> {
    let factor = lc.contraction_factor()?;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let x = ReducedClosedLoopState::random(lc.delay(), rng);
        let excess = lc.expected_norm_next(&x)? - factor * lc.supermartingale_norm(&x)?;
        worst = worst.max(excess);
    }
    Ok(ContractionSummary {
        samples,
        factor,
        worst_excess: worst,
    })
}
