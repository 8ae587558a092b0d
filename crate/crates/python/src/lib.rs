// Copyright 2026 The photonbox Authors
// SPDX-License-Identifier: Apache-2.0

//! Python bindings. Matrices cross the boundary as nested lists of `complex`.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use photonbox::delayed_feedback::{
    lemma1_suite, lemma2_suite, run_closed_ensemble, ControlState, Controller, FeedbackParams, LawVariant,
};
use photonbox::filter::{run_filter_ensemble, JointState};
use photonbox::fock_ops::{DensityMatrix, FockParams, FockSpace, Operator};
use photonbox::harness::{self, ExperimentConfig};
use photonbox::linearized::{self, Linearization};
use photonbox::openloop::run_open_ensemble;
use photonbox::trajectory::{EnsembleSummary, RngStream};

fn py_err(e: photonbox::Error) -> PyErr {
    if e.is_config() || matches!(e, photonbox::Error::Precondition(_)) {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn rows(m: &Operator) -> Vec<Vec<Complex64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: Vec<Vec<Complex64>>) -> PyResult<Operator> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    Ok(Operator::from_fn(n, n, |i, j| rows[i][j]))
}

#[pyclass(name = "FockSpace", module = "photonbox", from_py_object)]
#[derive(Clone)]
struct PyFockSpace {
    inner: FockSpace,
}

#[pymethods]
impl PyFockSpace {
    /// `phi0` defaults to `pi/4 - 3 theta`.
    #[new]
    #[pyo3(signature = (n_max = 10, theta = 0.2, phi0 = None))]
    fn new(n_max: usize, theta: f64, phi0: Option<f64>) -> PyResult<Self> {
        let phi0 = phi0.unwrap_or(std::f64::consts::FRAC_PI_4 - 3.0 * theta);
        let params = FockParams::new(n_max, phi0, theta).map_err(py_err)?;
        Ok(PyFockSpace {
            inner: FockSpace::new(params).map_err(py_err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn displacement(&self, alpha: Complex64) -> PyResult<Vec<Vec<Complex64>>> {
        Ok(rows(&self.inner.displacement(alpha).map_err(py_err)?))
    }

    fn fock_state(&self, n: usize) -> PyResult<PyDensityMatrix> {
        self.inner.fock_state(n).map(PyDensityMatrix::from).map_err(py_err)
    }

    fn coherent_state(&self, alpha: Complex64) -> PyResult<PyDensityMatrix> {
        self.inner.coherent_state(alpha).map(PyDensityMatrix::from).map_err(py_err)
    }

    fn maximally_mixed(&self) -> PyDensityMatrix {
        self.inner.maximally_mixed().into()
    }

    fn __repr__(&self) -> String {
        let p = self.inner.params();
        format!("FockSpace(n_max={}, theta={}, phi0={})", p.n_max, p.theta, p.phi0)
    }
}

#[pyclass(name = "DensityMatrix", module = "photonbox", from_py_object)]
#[derive(Clone)]
struct PyDensityMatrix {
    inner: DensityMatrix,
}

impl From<DensityMatrix> for PyDensityMatrix {
    fn from(inner: DensityMatrix) -> Self {
        PyDensityMatrix { inner }
    }
}

#[pymethods]
impl PyDensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    #[new]
    fn new(matrix: Vec<Vec<Complex64>>) -> PyResult<Self> {
        DensityMatrix::new(from_rows(matrix)?).map(Self::from).map_err(py_err)
    }

    fn matrix(&self) -> Vec<Vec<Complex64>> {
        rows(self.inner.matrix())
    }

    fn population(&self, n: usize) -> f64 {
        self.inner.population(n)
    }

    fn populations(&self) -> Vec<f64> {
        self.inner.populations()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }
}

#[pyclass(name = "ControlState", module = "photonbox", from_py_object)]
#[derive(Clone)]
struct PyControlState {
    inner: ControlState,
}

#[pymethods]
impl PyControlState {
    #[new]
    #[pyo3(signature = (space, rho, betas = Vec::new()))]
    fn new(space: &PyFockSpace, rho: &PyDensityMatrix, betas: Vec<Complex64>) -> PyResult<Self> {
        ControlState::new(&space.inner, rho.inner.clone(), betas)
            .map(|inner| PyControlState { inner })
            .map_err(py_err)
    }

    #[getter]
    fn rho(&self) -> PyDensityMatrix {
        self.inner.rho().clone().into()
    }

    #[getter]
    fn betas(&self) -> Vec<Complex64> {
        self.inner.betas().to_vec()
    }
}

#[pyclass(name = "Controller", module = "photonbox")]
struct PyController {
    inner: Controller,
}

#[pymethods]
impl PyController {
    /// `epsilon` defaults to `1/(2 n_bar + 1)`; `law` is `"delayed"` or `"no_delay"`.
    #[new]
    #[pyo3(signature = (space, n_bar = 3, delay = 5, epsilon = None, eta = 0.1, alpha_max = 1.0, law = "delayed"))]
    fn new(
        space: &PyFockSpace,
        n_bar: usize,
        delay: usize,
        epsilon: Option<f64>,
        eta: f64,
        alpha_max: f64,
        law: &str,
    ) -> PyResult<Self> {
        let law = LawVariant::parse(law).ok_or_else(|| PyValueError::new_err(format!("unknown law '{law}'")))?;
        let params = FeedbackParams {
            epsilon: epsilon.unwrap_or(1.0 / (2 * n_bar + 1) as f64),
            eta,
            alpha_max,
            law,
            ..FeedbackParams::standard(n_bar, delay)
        };
        Controller::new(space.inner.clone(), params)
            .map(|inner| PyController { inner })
            .map_err(py_err)
    }

    #[getter]
    fn delay(&self) -> usize {
        self.inner.params().delay
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.params().epsilon
    }

    /// Rest state `(rho_bar, 0, ..., 0)`.
    fn equilibrium(&self) -> PyResult<PyControlState> {
        self.inner.equilibrium().map(|inner| PyControlState { inner }).map_err(py_err)
    }

    fn at_rest(&self, rho: &PyDensityMatrix) -> PyResult<PyControlState> {
        ControlState::at_rest(self.inner.space(), rho.inner.clone(), self.inner.params().delay)
            .map(|inner| PyControlState { inner })
            .map_err(py_err)
    }

    fn predicted_fidelity(&self, chi: &PyControlState) -> PyResult<f64> {
        self.inner.predicted_fidelity(&chi.inner).map_err(py_err)
    }

    /// `(alpha, branch)` with branch `"tracking"` or `"kick"`.
    fn feedback(&self, chi: &PyControlState) -> PyResult<(Complex64, String)> {
        let d = self.inner.feedback(&chi.inner).map_err(py_err)?;
        Ok((d.alpha, format!("{:?}", d.branch).to_lowercase()))
    }

    /// `(next_state, outcome, alpha)` with outcome `"g"` or `"e"`.
    fn step(&self, chi: &PyControlState, seed: u64, stream: u64) -> PyResult<(PyControlState, String, Complex64)> {
        let mut rng = RngStream::new(seed, stream).rng();
        let s = self.inner.step(&chi.inner, &mut rng).map_err(py_err)?;
        Ok((PyControlState { inner: s.state }, s.outcome.symbol().to_string(), s.alpha))
    }

    /// `(gap_fid, gap_v)` on a state with predicted fidelity at least `eta`.
    fn lemma1_gap(&self, chi: &PyControlState) -> PyResult<(f64, f64)> {
        let g = self.inner.lemma1_gap(&chi.inner).map_err(py_err)?;
        Ok((g.gap_fid, g.gap_v))
    }

    /// `(worst_gap_fid, worst_gap_v)` over random states.
    fn lemma1_suite(&self, samples: usize, seed: u64) -> PyResult<(f64, f64)> {
        let s = lemma1_suite(&self.inner, samples, &mut RngStream::new(seed, 0).rng()).map_err(py_err)?;
        Ok((s.worst_gap_fid, s.worst_gap_v))
    }

    /// `(worst_post_fidelity, delta)` over random states below `eta`.
    fn lemma2_suite(&self, samples: usize, seed: u64) -> PyResult<(f64, f64)> {
        let s = lemma2_suite(&self.inner, samples, &mut RngStream::new(seed, 0).rng()).map_err(py_err)?;
        Ok((s.worst_post_fidelity, s.delta))
    }

    #[pyo3(signature = (chi0, steps, n_traj, seed = 0, record_every = 1))]
    fn run_closed(
        &self,
        py: Python<'_>,
        chi0: &PyControlState,
        steps: usize,
        n_traj: usize,
        seed: u64,
        record_every: usize,
    ) -> PyResult<PyEnsemble> {
        let chi0 = chi0.inner.clone();
        py.detach(|| run_closed_ensemble(&self.inner, &chi0, steps, n_traj, seed, record_every))
            .map(PyEnsemble::from)
            .map_err(py_err)
    }

    /// Estimator-driven feedback; `rho_est0` seeds the filter.
    #[pyo3(signature = (rho0, rho_est0, steps, n_traj, seed = 0, record_every = 1))]
    #[allow(clippy::too_many_arguments)]
    fn run_filter(
        &self,
        py: Python<'_>,
        rho0: &PyDensityMatrix,
        rho_est0: &PyDensityMatrix,
        steps: usize,
        n_traj: usize,
        seed: u64,
        record_every: usize,
    ) -> PyResult<PyEnsemble> {
        let est = ControlState::at_rest(self.inner.space(), rho_est0.inner.clone(), self.inner.params().delay)
            .map_err(py_err)?;
        let xi0 = JointState::new(rho0.inner.clone(), est).map_err(py_err)?;
        py.detach(|| run_filter_ensemble(&self.inner, &xi0, steps, n_traj, seed, record_every))
            .map(PyEnsemble::from)
            .map_err(py_err)
    }
}

#[pyclass(name = "Ensemble", module = "photonbox")]
struct PyEnsemble {
    inner: EnsembleSummary,
}

impl From<EnsembleSummary> for PyEnsemble {
    fn from(inner: EnsembleSummary) -> Self {
        PyEnsemble { inner }
    }
}

#[pymethods]
impl PyEnsemble {
    #[getter]
    fn n_traj(&self) -> usize {
        self.inner.n_traj()
    }

    #[getter]
    fn k(&self) -> Vec<usize> {
        self.inner.k.clone()
    }

    #[getter]
    fn mean_fidelity(&self) -> Vec<f64> {
        self.inner.mean_fidelity.clone()
    }

    #[getter]
    fn mean_frob_dist(&self) -> Option<Vec<f64>> {
        self.inner.mean_frob_dist.clone()
    }

    #[getter]
    fn converged_counts(&self) -> Vec<usize> {
        self.inner.converged_counts.clone()
    }

    #[getter]
    fn unconverged(&self) -> usize {
        self.inner.unconverged
    }

    fn mean_final_fidelity(&self) -> f64 {
        self.inner.mean_final_fidelity()
    }

    fn converged_fraction(&self, n: usize) -> f64 {
        self.inner.converged_fraction(n)
    }

    /// Fidelity series of one trajectory.
    fn fidelity(&self, traj: usize) -> PyResult<Vec<f64>> {
        let t = self
            .inner
            .trajectories
            .get(traj)
            .ok_or_else(|| PyValueError::new_err(format!("no trajectory {traj}")))?;
        Ok(t.steps.iter().map(|r| r.fidelity).collect())
    }

    fn csv(&self) -> String {
        harness::csv_string(&self.inner)
    }
}

#[pyfunction]
#[pyo3(signature = (space, rho0, steps, n_traj, target = 3, seed = 0, record_every = 1))]
#[allow(clippy::too_many_arguments)]
fn run_open(
    py: Python<'_>,
    space: &PyFockSpace,
    rho0: &PyDensityMatrix,
    steps: usize,
    n_traj: usize,
    target: usize,
    seed: u64,
    record_every: usize,
) -> PyResult<PyEnsemble> {
    py.detach(|| run_open_ensemble(&space.inner, &rho0.inner, target, steps, n_traj, seed, record_every))
        .map(PyEnsemble::from)
        .map_err(py_err)
}

/// `(lambda, argmax, [(n, lambda_n), ...])` of the linearized open loop.
#[pyfunction]
#[pyo3(signature = (space, n_bar = 3))]
fn open_loop_exponent(space: &PyFockSpace, n_bar: usize) -> PyResult<(f64, usize, Vec<(usize, f64)>)> {
    let t = linearized::open_loop_exponent(&space.inner, n_bar).map_err(py_err)?;
    Ok((t.lambda, t.argmax, t.per_n))
}

/// Empirical exponent of the sampled linearized open loop.
#[pyfunction]
#[pyo3(signature = (space, steps, n_bar = 3, seed = 0))]
fn empirical_open_loop_exponent(space: &PyFockSpace, steps: usize, n_bar: usize, seed: u64) -> PyResult<f64> {
    let lin = Linearization::new(&space.inner, n_bar).map_err(py_err)?;
    let mut rng = RngStream::new(seed, 0).rng();
    let init = linearized::TangentState::random(space.inner.dim(), &mut rng);
    linearized::empirical_exponent(
        &init,
        steps,
        &mut rng,
        |t, r| Ok(lin.step_lin_open_sampled(t, r)),
        linearized::tangent_norm,
    )
    .map_err(py_err)
}

#[pyclass(name = "Config", module = "photonbox")]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Parses `key = value` text; empty text gives the defaults.
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        ExperimentConfig::parse(text).map(|inner| PyConfig { inner }).map_err(py_err)
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.name()
    }

    /// Runs an ensemble mode.
    fn run(&self, py: Python<'_>) -> PyResult<PyEnsemble> {
        py.detach(|| harness::run_experiment(&self.inner)).map(PyEnsemble::from).map_err(py_err)
    }

    fn lyapunov_report(&self, py: Python<'_>) -> PyResult<String> {
        py.detach(|| harness::lyapunov_report(&self.inner)).map(|r| r.to_string()).map_err(py_err)
    }

    fn lemmas_report(&self, py: Python<'_>) -> PyResult<String> {
        py.detach(|| harness::lemmas_report(&self.inner)).map(|r| r.to_string()).map_err(py_err)
    }

    fn __str__(&self) -> String {
        self.inner.to_config_string()
    }
}

#[pymodule(name = "photonbox")]
fn photonbox_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFockSpace>()?;
    m.add_class::<PyDensityMatrix>()?;
    m.add_class::<PyControlState>()?;
    m.add_class::<PyController>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(run_open, m)?)?;
    m.add_function(wrap_pyfunction!(open_loop_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_open_loop_exponent, m)?)?;
    Ok(())
}
