// Copyright 2026 The photonbox Authors
// SPDX-License-Identifier: Apache-2.0

//! Truncated Fock-space operators and the measurement/displacement maps of the
//! photon box.
//!
//! The cavity is truncated to `n_max` photons, so every operator is a dense
//! `(n_max + 1) x (n_max + 1)` complex matrix in the Fock basis. The QND
//! measurement operators `M_g = cos(phi0 + theta N)` and `M_e = sin(phi0 + theta N)`
//! are diagonal; all measurement maps are therefore implemented as entrywise
//! scalings.

use std::f64::consts::FRAC_PI_4;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Operator = DMatrix<Complex64>;

/// Hermiticity tolerance for members of the state space (max entrywise |rho - rho^dag|).
pub const HERMITIAN_TOL: f64 = 1e-9;
/// Trace tolerance for members of the state space.
pub const TRACE_TOL: f64 = 1e-9;
/// Smallest admissible eigenvalue for members of the state space.
pub const PSD_TOL: f64 = 1e-9;
/// Eigenvalues below `-REPAIR_REFUSE` mean the simulation diverged.
pub const REPAIR_REFUSE: f64 = 1e-6;
/// Eigenvalue floor used by [`repair`].
pub const REPAIR_FLOOR: f64 = 1e-10;
/// Outcome probabilities below this are treated as a numerical fault.
pub const MIN_PROBABILITY: f64 = 1e-14;

const INVERTIBILITY_TOL: f64 = 1e-8;
const DEGENERACY_TOL: f64 = 1e-9;

/// Detector outcome for one atom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    /// Atom detected in `g`.
    G,
    /// Atom detected in `e`.
    E,
}

impl Outcome {
    pub const BOTH: [Outcome; 2] = [Outcome::G, Outcome::E];

    pub fn symbol(self) -> char {
        match self {
            Outcome::G => 'g',
            Outcome::E => 'e',
        }
    }
}

/// Truncation and Ramsey phase parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FockParams {
    /// Photon-number truncation.
    pub n_max: usize,
    /// Ramsey phase offset (radians).
    pub phi0: f64,
    /// Phase shift per photon (radians).
    pub theta: f64,
}

impl Default for FockParams {
    /// `n_max = 10`, `theta = 0.2`, `phi0 = pi/4 - 3 theta`, so that photon number 3
    /// sits at `phi = pi/4`.
    fn default() -> Self {
        let theta = 0.2;
        FockParams {
            n_max: 10,
            phi0: FRAC_PI_4 - 3.0 * theta,
            theta,
        }
    }
}

impl FockParams {
    pub fn new(n_max: usize, phi0: f64, theta: f64) -> Result<Self> {
        let p = FockParams { n_max, phi0, theta };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.n_max + 1
    }

    /// `phi_n = phi0 + n theta`.
    pub fn phase(&self, n: usize) -> f64 {
        self.phi0 + n as f64 * self.theta
    }

    /// Checks that `M_g`, `M_e` are invertible and that `cos^2(phi_n)` is non-degenerate.
    pub fn validate(&self) -> Result<()> {
        if self.n_max < 1 {
            return Err(Error::InvalidParams("n_max must be at least 1".into()));
        }
        if !self.phi0.is_finite() || !self.theta.is_finite() {
            return Err(Error::InvalidParams("phases must be finite".into()));
        }
        let mut cos2 = Vec::with_capacity(self.dim());
        for n in 0..=self.n_max {
            let phi = self.phase(n);
            if phi.cos().abs() < INVERTIBILITY_TOL || phi.sin().abs() < INVERTIBILITY_TOL {
                return Err(Error::InvalidParams(format!(
                    "measurement operators not invertible at n = {n} (phi_n = {phi})"
                )));
            }
            cos2.push(phi.cos().powi(2));
        }
        for i in 0..cos2.len() {
            for j in (i + 1)..cos2.len() {
                if (cos2[i] - cos2[j]).abs() < DEGENERACY_TOL {
                    return Err(Error::InvalidParams(format!(
                        "degenerate measurement spectrum: cos^2 phi_{i} = cos^2 phi_{j}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The operators `N`, `a`, `a^dag`, `M_g`, `M_e` of a truncated cavity.
#[derive(Clone, Debug)]
pub struct Operators {
    pub number: Operator,
    pub annihilation: Operator,
    pub creation: Operator,
    pub m_g: Operator,
    pub m_e: Operator,
}

pub fn build_operators(p: &FockParams) -> Result<Operators> {
    p.validate()?;
    let dim = p.dim();
    let number = Operator::from_fn(dim, dim, |i, j| {
        if i == j {
            Complex64::new(i as f64, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let annihilation = Operator::from_fn(dim, dim, |i, j| {
        if j == i + 1 {
            Complex64::new((j as f64).sqrt(), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let creation = annihilation.adjoint();
    let diag = |f: fn(f64) -> f64| {
        Operator::from_fn(dim, dim, |i, j| {
            if i == j {
                Complex64::new(f(p.phase(i)), 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    };
    Ok(Operators {
        number,
        annihilation,
        creation,
        m_g: diag(f64::cos),
        m_e: diag(f64::sin),
    })
}

/// A member of the state space: Hermitian, unit trace, positive semi-definite.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(Operator);

impl DensityMatrix {
    /// Validates `m` against the state-space tolerances.
    pub fn new(m: Operator) -> Result<Self> {
        check_state(&m)?;
        Ok(DensityMatrix(m))
    }

    pub fn matrix(&self) -> &Operator {
        &self.0
    }

    pub fn into_matrix(self) -> Operator {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// `<n|rho|n>`.
    pub fn population(&self, n: usize) -> f64 {
        self.0[(n, n)].re
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|n| self.population(n)).collect()
    }

    /// Photon number with the largest population and that population.
    pub fn dominant(&self) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for n in 0..self.dim() {
            let p = self.population(n);
            if p > best.1 {
                best = (n, p);
            }
        }
        best
    }
}

/// Checks Hermiticity, trace and positivity of `m`.
pub fn check_state(m: &Operator) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidParams("density matrix must be square".into()));
    }
    let herm = max_abs(&(m - m.adjoint()));
    if !(herm <= HERMITIAN_TOL) {
        return Err(Error::NumericalFault(format!(
            "state not Hermitian (max |rho - rho^dag| = {herm:e})"
        )));
    }
    let tr = m.trace();
    if !((tr.re - 1.0).abs() <= TRACE_TOL && tr.im.abs() <= TRACE_TOL) {
        return Err(Error::NumericalFault(format!("state trace {tr} differs from 1")));
    }
    let min = min_eigenvalue(m);
    if min < -PSD_TOL {
        return Err(Error::NumericalFault(format!(
            "state not positive (min eigenvalue {min:e})"
        )));
    }
    Ok(())
}

/// Smallest eigenvalue of the Hermitian part of `m`.
pub fn min_eigenvalue(m: &Operator) -> f64 {
    let h = hermitian_part(m);
    SymmetricEigen::new(h).eigenvalues.min()
}

pub fn hermitian_part(m: &Operator) -> Operator {
    (m + m.adjoint()).scale(0.5)
}

/// Max entrywise modulus.
pub fn max_abs(m: &Operator) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// `tr{rho_a rho_b}`, clamped to `[0, 1]`.
pub fn fidelity(rho_a: &DensityMatrix, rho_b: &DensityMatrix) -> f64 {
    trace_product(rho_a.matrix(), rho_b.matrix()).re.clamp(0.0, 1.0)
}

/// `tr{A B}` without forming the product.
pub fn trace_product(a: &Operator, b: &Operator) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

fn check_amplitude(alpha: Complex64) -> Result<()> {
    if alpha.re.is_finite() && alpha.im.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("non-finite amplitude {alpha}")))
    }
}

/// `Re(u X u^dag)` for a row vector `u`.
pub fn row_quadratic_form(u: &[Complex64], x: &Operator) -> f64 {
    let dim = u.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..dim {
        if u[i] == Complex64::new(0.0, 0.0) {
            continue;
        }
        let mut row = Complex64::new(0.0, 0.0);
        for j in 0..dim {
            row += x[(i, j)] * u[j].conj();
        }
        acc += u[i] * row;
    }
    acc.re
}

/// `[A, B] = AB - BA`.
pub fn commutator(a: &Operator, b: &Operator) -> Operator {
    a * b - b * a
}

/// Projects a nearly valid state back onto the state space.
///
/// Hermitizes, renormalizes the trace and, when the matrix is not numerically
/// positive, floors the negative eigenvalues at zero and renormalizes again.
/// Matrices with an eigenvalue below `-REPAIR_REFUSE` are rejected.
pub fn repair(m: &Operator) -> Result<DensityMatrix> {
    let mut h = hermitian_part(m);
    let tr = h.trace().re;
    if !(tr.is_finite() && tr > MIN_PROBABILITY) {
        return Err(Error::NumericalFault(format!("cannot renormalize trace {tr}")));
    }
    h.unscale_mut(tr);
    let dim = h.nrows();
    let shifted = &h + Operator::identity(dim, dim).scale(REPAIR_FLOOR);
    if is_positive_definite(&shifted) {
        return Ok(DensityMatrix(h));
    }
    let eig = SymmetricEigen::new(h);
    let min = eig.eigenvalues.min();
    if min < -REPAIR_REFUSE {
        return Err(Error::NumericalFault(format!(
            "state diverged from the state space (min eigenvalue {min:e})"
        )));
    }
    let floored = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let mut rebuilt = Operator::zeros(dim, dim);
    for (k, &l) in floored.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        let col = v.column(k);
        rebuilt += (&col * col.adjoint()).scale(l);
    }
    let mut rebuilt = hermitian_part(&rebuilt);
    let tr = rebuilt.trace().re;
    rebuilt.unscale_mut(tr);
    Ok(DensityMatrix(rebuilt))
}

/// Cholesky factorization attempt on a Hermitian matrix; succeeds iff every
/// pivot is strictly positive.
fn is_positive_definite(h: &Operator) -> bool {
    let n = h.nrows();
    let mut l = Operator::zeros(n, n);
    for j in 0..n {
        let mut pivot = h[(j, j)].re;
        for k in 0..j {
            pivot -= l[(j, k)].norm_sqr();
        }
        if !(pivot > 0.0) {
            return false;
        }
        let root = pivot.sqrt();
        l[(j, j)] = Complex64::new(root, 0.0);
        for i in (j + 1)..n {
            let mut acc = h[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = acc / root;
        }
    }
    true
}

/// Normalized `A A^dag` with `A` standard complex Gaussian: a full-rank random state.
pub fn random_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    let a = Operator::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let mut m = &a * a.adjoint();
    let tr = m.trace().re;
    m.unscale_mut(tr);
    DensityMatrix(hermitian_part(&m))
}

/// Operators of a validated cavity model plus the cached entrywise weights of
/// the measurement maps.
#[derive(Clone, Debug)]
pub struct FockSpace {
    params: FockParams,
    ops: Operators,
    cos: Vec<f64>,
    sin: Vec<f64>,
    weight_g: Operator,
    weight_e: Operator,
    weight_kraus: Operator,
    /// Eigenbasis `V` and eigenvalues `l` of `i (a^dag - a)`, so that
    /// `D_r = V diag(e^{-i r l}) V^dag` for real `r`.
    gen_basis: Operator,
    gen_eigs: Vec<f64>,
}

impl FockSpace {
    pub fn new(params: FockParams) -> Result<Self> {
        let ops = build_operators(&params)?;
        let dim = params.dim();
        let cos: Vec<f64> = (0..dim).map(|n| params.phase(n).cos()).collect();
        let sin: Vec<f64> = (0..dim).map(|n| params.phase(n).sin()).collect();
        let outer = |v: &[f64]| Operator::from_fn(dim, dim, |i, j| Complex64::new(v[i] * v[j], 0.0));
        let weight_g = outer(&cos);
        let weight_e = outer(&sin);
        let weight_kraus = &weight_g + &weight_e;
        let h = (&ops.creation - &ops.annihilation).map(|z| z * Complex64::i());
        let eig = SymmetricEigen::new(hermitian_part(&h));
        let gen_basis = eig.eigenvectors;
        let gen_eigs = eig.eigenvalues.iter().copied().collect();
        Ok(FockSpace {
            params,
            ops,
            cos,
            sin,
            weight_g,
            weight_e,
            weight_kraus,
            gen_basis,
            gen_eigs,
        })
    }

    pub fn params(&self) -> &FockParams {
        &self.params
    }

    pub fn operators(&self) -> &Operators {
        &self.ops
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn n_max(&self) -> usize {
        self.params.n_max
    }

    pub fn cos_phase(&self, n: usize) -> f64 {
        self.cos[n]
    }

    pub fn sin_phase(&self, n: usize) -> f64 {
        self.sin[n]
    }

    /// Diagonal of `M_s`.
    pub fn measurement_diag(&self, outcome: Outcome) -> &[f64] {
        match outcome {
            Outcome::G => &self.cos,
            Outcome::E => &self.sin,
        }
    }

    /// `alpha a^dag - alpha^* a`.
    pub fn displacement_generator(&self, alpha: Complex64) -> Operator {
        self.ops.creation.map(|z| z * alpha) - self.ops.annihilation.map(|z| z * alpha.conj())
    }

    /// `D_alpha = exp(alpha a^dag - alpha^* a)`.
    ///
    /// With `alpha = r e^{i phi}`, `D_alpha = R D_r R^dag` where `R = e^{i phi N}`
    /// and `D_r` comes from the cached diagonalization of `i (a^dag - a)`.
    pub fn displacement(&self, alpha: Complex64) -> Result<Operator> {
        check_amplitude(alpha)?;
        let dim = self.dim();
        if alpha == Complex64::new(0.0, 0.0) {
            return Ok(Operator::identity(dim, dim));
        }
        let (r, phi) = alpha.to_polar();
        let v = &self.gen_basis;
        let mut scaled = v.clone();
        for (k, &l) in self.gen_eigs.iter().enumerate() {
            let phase = Complex64::from_polar(1.0, -r * l);
            for i in 0..dim {
                scaled[(i, k)] *= phase;
            }
        }
        let mut d = scaled * v.adjoint();
        for i in 0..dim {
            for j in 0..dim {
                d[(i, j)] *= Complex64::from_polar(1.0, phi * (i as f64 - j as f64));
            }
        }
        Ok(d)
    }

    /// Row `n` of `D_alpha`, i.e. the bra `<n| D_alpha`.
    pub fn displacement_row(&self, alpha: Complex64, n: usize) -> Result<Vec<Complex64>> {
        check_amplitude(alpha)?;
        let dim = self.dim();
        let (r, phi) = alpha.to_polar();
        let v = &self.gen_basis;
        let weighted: Vec<Complex64> = (0..dim)
            .map(|k| v[(n, k)] * Complex64::from_polar(1.0, -r * self.gen_eigs[k]))
            .collect();
        Ok((0..dim)
            .map(|j| {
                if alpha == Complex64::new(0.0, 0.0) {
                    return if j == n { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
                }
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..dim {
                    acc += weighted[k] * v[(j, k)].conj();
                }
                acc * Complex64::from_polar(1.0, phi * (n as f64 - j as f64))
            })
            .collect())
    }

    /// `<n| D_alpha X D_alpha^dag |n>` from a single row of `D_alpha`.
    pub fn displaced_population_at(&self, alpha: Complex64, x: &Operator, n: usize) -> Result<f64> {
        let row = self.displacement_row(alpha, n)?;
        Ok(row_quadratic_form(&row, x))
    }

    pub fn fock_state(&self, n: usize) -> Result<DensityMatrix> {
        if n > self.n_max() {
            return Err(Error::InvalidParams(format!(
                "Fock index {n} exceeds n_max = {}",
                self.n_max()
            )));
        }
        let dim = self.dim();
        let mut m = Operator::zeros(dim, dim);
        m[(n, n)] = Complex64::new(1.0, 0.0);
        Ok(DensityMatrix(m))
    }

    /// `D_alpha |0><0| D_alpha^dag`.
    pub fn coherent_state(&self, alpha: Complex64) -> Result<DensityMatrix> {
        let d = self.displacement(alpha)?;
        let psi = d.column(0);
        let m = &psi * psi.adjoint();
        repair(&m)
    }

    pub fn maximally_mixed(&self) -> DensityMatrix {
        let dim = self.dim();
        DensityMatrix(Operator::identity(dim, dim).unscale(dim as f64))
    }

    /// `M_s X M_s^dag` (unnormalized).
    pub fn measure_branch(&self, outcome: Outcome, x: &Operator) -> Operator {
        let w = match outcome {
            Outcome::G => &self.weight_g,
            Outcome::E => &self.weight_e,
        };
        x.component_mul(w)
    }

    /// `tr{M_s X M_s^dag}`.
    pub fn branch_weight(&self, outcome: Outcome, x: &Operator) -> f64 {
        let m = self.measurement_diag(outcome);
        (0..self.dim()).map(|n| m[n] * m[n] * x[(n, n)].re).sum()
    }

    /// Outcome probability `P_s = tr{M_s rho M_s^dag}`.
    pub fn outcome_probability(&self, outcome: Outcome, rho: &DensityMatrix) -> f64 {
        self.branch_weight(outcome, rho.matrix())
    }

    /// Post-measurement state `M_s rho M_s^dag / P_s` and the probability `P_s`.
    pub fn jump(&self, outcome: Outcome, rho: &DensityMatrix) -> Result<(DensityMatrix, f64)> {
        let branch = self.measure_branch(outcome, rho.matrix());
        let p = branch.trace().re;
        if !(p >= MIN_PROBABILITY) {
            return Err(Error::NumericalFault(format!(
                "degenerate outcome probability P_{} = {p:e}",
                outcome.symbol()
            )));
        }
        Ok((repair(&branch.unscale(p))?, p))
    }

    /// `D X D^dag`.
    pub fn displace(&self, d: &Operator, x: &Operator) -> Operator {
        d * x * d.adjoint()
    }

    /// Displaced state `D rho D^dag`, repaired.
    pub fn displace_state(&self, d: &Operator, rho: &DensityMatrix) -> Result<DensityMatrix> {
        repair(&self.displace(d, rho.matrix()))
    }

    /// `K_0(X) = M_g X M_g^dag + M_e X M_e^dag`.
    pub fn kraus_undisplaced(&self, x: &Operator) -> Operator {
        x.component_mul(&self.weight_kraus)
    }

    /// `K(X)` for a precomputed displacement `D` (unnormalized, linear in `X`).
    pub fn kraus_with(&self, d: &Operator, x: &Operator) -> Operator {
        self.kraus_undisplaced(&self.displace(d, x))
    }

    /// The Kraus map `K_alpha(rho)`.
    pub fn kraus(&self, alpha: Complex64, rho: &DensityMatrix) -> Result<DensityMatrix> {
        let d = self.displacement(alpha)?;
        repair(&self.kraus_with(&d, rho.matrix()))
    }

    /// `<n| D X D^dag |n>` without forming the full product.
    pub fn displaced_population(&self, d: &Operator, x: &Operator, n: usize) -> f64 {
        let row: Vec<Complex64> = (0..self.dim()).map(|j| d[(n, j)]).collect();
        row_quadratic_form(&row, x)
    }
}
