//! Python bindings for the six-state QKD post-processing toolkit.
//!
//! Exposes the rate algebra, the adaptive planner, the Pauli-frame
//! simulator, and the two-party session (with byte-exact transcripts) as a
//! `_sixstate` extension module.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use sixstate::maps;
use sixstate::planner;
use sixstate::session;
use sixstate::sim;
use sixstate::{ErrorFrame, PauliRates as CoreRates};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Probability 4-vector (p_i, p_x, p_y, p_z) of an i.i.d. Pauli channel.
#[pyclass(name = "PauliRates", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPauliRates {
    inner: CoreRates,
}

#[pymethods]
impl PyPauliRates {
    #[new]
    fn new(p_i: f64, p_x: f64, p_y: f64, p_z: f64) -> PyResult<Self> {
        Ok(Self { inner: CoreRates::new(p_i, p_x, p_y, p_z).map_err(value_error)? })
    }

    /// Depolarizing channel with the given bit error rate (p_x = p_y = p_z).
    #[staticmethod]
    fn depolarizing(bit_error: f64) -> PyResult<Self> {
        Ok(Self { inner: sixstate::depolarizing(bit_error).map_err(value_error)? })
    }

    #[staticmethod]
    fn noiseless() -> Self {
        Self { inner: CoreRates::noiseless() }
    }

    #[getter]
    fn p_i(&self) -> f64 {
        self.inner.p_i()
    }
    #[getter]
    fn p_x(&self) -> f64 {
        self.inner.p_x()
    }
    #[getter]
    fn p_y(&self) -> f64 {
        self.inner.p_y()
    }
    #[getter]
    fn p_z(&self) -> f64 {
        self.inner.p_z()
    }

    /// Spin-flip error rate p_x + p_y.
    fn bit_error(&self) -> f64 {
        self.inner.bit_error()
    }

    /// Phase-flip error rate p_y + p_z.
    fn phase_error(&self) -> f64 {
        self.inner.phase_error()
    }

    /// Overall channel error rate p_x + p_y + p_z.
    fn channel_error(&self) -> f64 {
        self.inner.channel_error()
    }

    fn as_tuple(&self) -> (f64, f64, f64, f64) {
        let [a, b, c, d] = self.inner.as_array();
        (a, b, c, d)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "PauliRates(p_i={}, p_x={}, p_y={}, p_z={})",
            self.inner.p_i(),
            self.inner.p_x(),
            self.inner.p_y(),
            self.inner.p_z()
        )
    }
}

/// Joint Alice-Bob error record for the surviving positions.
#[pyclass(name = "ErrorFrame", skip_from_py_object)]
#[derive(Clone)]
struct PyErrorFrame {
    inner: ErrorFrame,
}

#[pymethods]
impl PyErrorFrame {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Counts of (I, X, Y, Z) labels.
    fn label_counts(&self) -> (usize, usize, usize, usize) {
        let [i, x, y, z] = self.inner.label_counts();
        (i, x, y, z)
    }

    /// Labels as a string of I/X/Y/Z characters (for small frames).
    fn labels(&self) -> String {
        self.inner.iter().map(|l| l.to_string()).collect()
    }

    fn __repr__(&self) -> String {
        format!("ErrorFrame(len={})", self.inner.len())
    }
}

/// Predicted effect of one [r,1,r] PEC round.
#[pyclass(name = "PecPrediction", frozen)]
struct PyPecPrediction {
    inner: maps::PecPrediction,
}

#[pymethods]
impl PyPecPrediction {
    #[getter]
    fn bit_error_bound(&self) -> f64 {
        self.inner.bit_error_bound
    }
    #[getter]
    fn phase_error_bound(&self) -> f64 {
        self.inner.phase_error_bound
    }
    #[getter]
    fn phase_error_exp_bound(&self) -> f64 {
        self.inner.phase_error_exp_bound
    }
    #[getter]
    fn bit_error_exact(&self) -> f64 {
        self.inner.bit_error_exact
    }
    #[getter]
    fn phase_error_exact(&self) -> f64 {
        self.inner.phase_error_exact
    }
    #[getter]
    fn exact_rates(&self) -> PyPauliRates {
        PyPauliRates { inner: self.inner.exact_rates }
    }
}

/// A chosen distillation schedule.
#[pyclass(name = "SchedulePlan", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySchedulePlan {
    inner: planner::SchedulePlan,
}

#[pymethods]
impl PySchedulePlan {
    #[getter]
    fn feasible(&self) -> bool {
        self.inner.feasible
    }
    #[getter]
    fn k(&self) -> u32 {
        self.inner.k
    }
    #[getter]
    fn r(&self) -> u64 {
        self.inner.r
    }
    #[getter]
    fn levels(&self) -> u32 {
        self.inner.levels
    }
    #[getter]
    fn predicted_final_error(&self) -> f64 {
        self.inner.predicted_final_error
    }
    #[getter]
    fn predicted_yield(&self) -> f64 {
        self.inner.predicted_yield
    }
    #[getter]
    fn predicted_key_length(&self) -> u64 {
        self.inner.predicted_key_length
    }
    #[getter]
    fn stage_rates(&self) -> Vec<PyPauliRates> {
        self.inner
            .stage_rates
            .iter()
            .map(|r| PyPauliRates { inner: *r })
            .collect()
    }
    #[getter]
    fn stage_survivals(&self) -> Vec<f64> {
        self.inner.stage_survivals.clone()
    }

    fn __repr__(&self) -> String {
        if self.inner.feasible {
            format!(
                "SchedulePlan(feasible=True, k={}, r={}, levels={})",
                self.inner.k, self.inner.r, self.inner.levels
            )
        } else {
            "SchedulePlan(feasible=False)".to_string()
        }
    }
}

/// Everything measured in one protocol run.
#[pyclass(name = "SimReport", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySimReport {
    inner: sim::SimReport,
}

#[pymethods]
impl PySimReport {
    #[getter]
    fn sifted_count(&self) -> u64 {
        self.inner.sifted_count
    }
    #[getter]
    fn tested_count(&self) -> u64 {
        self.inner.tested_count
    }
    #[getter]
    fn estimated_rates(&self) -> PyPauliRates {
        PyPauliRates { inner: self.inner.estimated_rates }
    }
    #[getter]
    fn plan(&self) -> PySchedulePlan {
        PySchedulePlan { inner: self.inner.plan.clone() }
    }
    #[getter]
    fn post_ep_counts(&self) -> Vec<u64> {
        self.inner.post_ep_counts.clone()
    }
    #[getter]
    fn post_pec_count(&self) -> u64 {
        self.inner.post_pec_count
    }
    #[getter]
    fn final_key_length(&self) -> u64 {
        self.inner.final_key_length
    }
    #[getter]
    fn key_mismatch_count(&self) -> u64 {
        self.inner.key_mismatch_count
    }
    #[getter]
    fn residual_phase_error_rate(&self) -> f64 {
        self.inner.residual_phase_error_rate
    }
    /// Abort reason ("threshold", "plan_infeasible", "bits_exhausted") or None.
    #[getter]
    fn aborted(&self) -> Option<&'static str> {
        self.inner.aborted.map(|r| r.as_str())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        match self.inner.aborted {
            Some(reason) => format!("SimReport(aborted={:?})", reason.as_str()),
            None => format!(
                "SimReport(key={}, mismatches={})",
                self.inner.final_key_length, self.inner.key_mismatch_count
            ),
        }
    }
}

// ---- analytic maps ----------------------------------------------------------

/// One round of entanglement purification: (output rates, pair survival).
#[pyfunction]
fn ep_map(rates: &PyPauliRates) -> (PyPauliRates, f64) {
    let (out, survival) = maps::ep_map(&rates.inner);
    (PyPauliRates { inner: out }, survival)
}

/// k rounds of entanglement purification in closed form.
#[pyfunction]
fn ep_map_k(rates: &PyPauliRates, k: u32) -> PyPauliRates {
    PyPauliRates { inner: maps::ep_map_k(&rates.inner, k) }
}

/// Predict one [r,1,r] PEC round (r odd, >= 3).
#[pyfunction]
fn pec_predict(rates: &PyPauliRates, r: u64) -> PyResult<PyPecPrediction> {
    Ok(PyPecPrediction { inner: maps::pec_predict(&rates.inner, r).map_err(value_error)? })
}

/// Chernoff-style bound on the lower binomial tail (0 < lam < p < 1).
#[pyfunction]
fn binomial_tail_bound(n: u64, lam: f64, p: f64) -> PyResult<f64> {
    maps::binomial_tail_bound(n, lam, p).map_err(value_error)
}

/// Failure probability of one seven-qubit block at input error lam.
#[pyfunction]
fn steane_level_map(lam: f64) -> f64 {
    maps::steane_level_map(lam)
}

/// Fixed point of the Steane level map (about 5.8%).
#[pyfunction]
fn steane_threshold() -> f64 {
    maps::steane_threshold()
}

// ---- planner ----------------------------------------------------------------

/// Whether repeated EP rounds drive the spin-flip rate to zero.
#[pyfunction]
fn ep_converges(rates: &PyPauliRates) -> bool {
    planner::ep_converges(&rates.inner)
}

/// Closed-form depolarizing threshold: (bit_error, channel_error, p_i_min).
#[pyfunction]
fn depolarizing_threshold() -> (f64, f64, f64) {
    let t = planner::depolarizing_threshold();
    (t.bit_error, t.channel_error, t.p_i_min)
}

/// Smallest odd PEC width meeting the planning bounds, or None.
#[pyfunction]
#[pyo3(signature = (rates, error_target=0.05))]
fn choose_r(rates: &PyPauliRates, error_target: f64) -> Option<u64> {
    planner::choose_r(&rates.inner, error_target)
}

/// Smallest concatenation depth with n_blocks * lambda_L <= epsilon.
#[pyfunction]
fn steane_levels_needed(post_pec_error: f64, epsilon: f64, n_blocks: u64) -> PyResult<u32> {
    planner::steane_levels_needed(post_pec_error, epsilon, n_blocks).map_err(value_error)
}

fn build_planner_config(
    error_target: f64,
    key_fidelity_epsilon: f64,
    n_sifted: u64,
    max_k: u32,
) -> PyResult<planner::PlannerConfig> {
    planner::PlannerConfig::new(error_target, key_fidelity_epsilon, n_sifted, max_k)
        .map_err(value_error)
}

/// Pick (k, r, L) for a channel under a sifted-bit budget.
#[pyfunction]
#[pyo3(signature = (rates, n_sifted, error_target=0.05, key_fidelity_epsilon=1e-3, max_k=30))]
fn plan_schedule(
    rates: &PyPauliRates,
    n_sifted: u64,
    error_target: f64,
    key_fidelity_epsilon: f64,
    max_k: u32,
) -> PyResult<PySchedulePlan> {
    let config = build_planner_config(error_target, key_fidelity_epsilon, n_sifted, max_k)?;
    Ok(PySchedulePlan { inner: planner::plan_schedule(&rates.inner, &config) })
}

/// Bisection on the depolarizing bit error for asymptotic feasibility.
#[pyfunction]
#[pyo3(signature = (lo, hi, tol, error_target=0.05))]
fn threshold_sweep(lo: f64, hi: f64, tol: f64, error_target: f64) -> PyResult<f64> {
    let config = planner::PlannerConfig { error_target, ..Default::default() };
    planner::threshold_sweep(lo, hi, tol, &config).map_err(value_error)
}

// ---- simulator ----------------------------------------------------------------

/// Draw n i.i.d. labels from a channel, deterministically for a fixed seed.
#[pyfunction]
fn sample_frame(rates: &PyPauliRates, n: usize, seed: u64) -> PyErrorFrame {
    PyErrorFrame { inner: sixstate::sample_frame(&rates.inner, n, seed) }
}

/// Transmit n_sent positions and keep the basis-matched third.
#[pyfunction]
fn sift(n_sent: u64, rates: &PyPauliRates, seed: u64) -> PyErrorFrame {
    PyErrorFrame { inner: sim::sift(n_sent, &rates.inner, seed) }
}

/// One EP round: (surviving frame, survivor count).
#[pyfunction]
fn ep_round(frame: &PyErrorFrame, seed: u64) -> (PyErrorFrame, u64) {
    let (out, survivors) = sim::ep_round(&frame.inner, seed);
    (PyErrorFrame { inner: out }, survivors)
}

/// One [r,1,r] PEC round.
#[pyfunction]
fn pec_round(frame: &PyErrorFrame, r: u64, seed: u64) -> PyResult<PyErrorFrame> {
    Ok(PyErrorFrame { inner: sim::pec_round(&frame.inner, r, seed).map_err(value_error)? })
}

/// levels recursive Steane decodings on consecutive 7-blocks.
#[pyfunction]
fn steane_concat_decode(frame: &PyErrorFrame, levels: u32) -> PyErrorFrame {
    PyErrorFrame { inner: sim::steane_concat_decode(&frame.inner, levels) }
}

#[allow(clippy::too_many_arguments)]
fn build_sim_config(
    n_sent: u64,
    rates: &PyPauliRates,
    seed: u64,
    test_bits_per_basis: u64,
    trials: u32,
    error_target: f64,
    key_fidelity_epsilon: f64,
    max_k: u32,
    plan_on_true_rates: bool,
    symmetrize_estimate: bool,
) -> PyResult<sim::SimConfig> {
    Ok(sim::SimConfig {
        n_sent,
        rates: rates.inner,
        test_bits_per_basis,
        planner: build_planner_config(error_target, key_fidelity_epsilon, 0, max_k)?,
        seed,
        trials,
        plan_on_true_rates,
        symmetrize_estimate,
    })
}

/// Execute the full scheme once (referee view).
#[pyfunction]
#[pyo3(signature = (n_sent, rates, seed, test_bits_per_basis=10_000, error_target=0.05,
                    key_fidelity_epsilon=1e-3, max_k=30, plan_on_true_rates=false,
                    symmetrize_estimate=false))]
#[allow(clippy::too_many_arguments)]
fn run_protocol(
    py: Python<'_>,
    n_sent: u64,
    rates: &PyPauliRates,
    seed: u64,
    test_bits_per_basis: u64,
    error_target: f64,
    key_fidelity_epsilon: f64,
    max_k: u32,
    plan_on_true_rates: bool,
    symmetrize_estimate: bool,
) -> PyResult<PySimReport> {
    let config = build_sim_config(
        n_sent,
        rates,
        seed,
        test_bits_per_basis,
        1,
        error_target,
        key_fidelity_epsilon,
        max_k,
        plan_on_true_rates,
        symmetrize_estimate,
    )?;
    Ok(PySimReport { inner: py.detach(move || sim::run_protocol(&config)) })
}

/// Independent repetitions with per-trial derived seeds.
#[pyfunction]
#[pyo3(signature = (n_sent, rates, seed, trials, test_bits_per_basis=10_000, error_target=0.05,
                    key_fidelity_epsilon=1e-3, max_k=30, plan_on_true_rates=false,
                    symmetrize_estimate=false))]
#[allow(clippy::too_many_arguments)]
fn run_trials(
    py: Python<'_>,
    n_sent: u64,
    rates: &PyPauliRates,
    seed: u64,
    trials: u32,
    test_bits_per_basis: u64,
    error_target: f64,
    key_fidelity_epsilon: f64,
    max_k: u32,
    plan_on_true_rates: bool,
    symmetrize_estimate: bool,
) -> PyResult<Vec<PySimReport>> {
    let config = build_sim_config(
        n_sent,
        rates,
        seed,
        test_bits_per_basis,
        trials,
        error_target,
        key_fidelity_epsilon,
        max_k,
        plan_on_true_rates,
        symmetrize_estimate,
    )?;
    Ok(py
        .detach(move || sim::run_trials(&config))
        .into_iter()
        .map(|inner| PySimReport { inner })
        .collect())
}

/// Run the two-party session in-process; returns (report, transcript bytes).
#[pyfunction]
#[pyo3(signature = (n_sent, rates, seed, test_bits_per_basis=10_000, error_target=0.05,
                    key_fidelity_epsilon=1e-3, max_k=30, plan_on_true_rates=false,
                    symmetrize_estimate=false))]
#[allow(clippy::too_many_arguments)]
fn run_session(
    py: Python<'_>,
    n_sent: u64,
    rates: &PyPauliRates,
    seed: u64,
    test_bits_per_basis: u64,
    error_target: f64,
    key_fidelity_epsilon: f64,
    max_k: u32,
    plan_on_true_rates: bool,
    symmetrize_estimate: bool,
) -> PyResult<(PySimReport, Py<PyBytes>)> {
    let config = build_sim_config(
        n_sent,
        rates,
        seed,
        test_bits_per_basis,
        1,
        error_target,
        key_fidelity_epsilon,
        max_k,
        plan_on_true_rates,
        symmetrize_estimate,
    )?;
    let (report, transcript) = py
        .detach(move || session::run_session(&config))
        .map_err(value_error)?;
    let bytes = PyBytes::new(py, &transcript.to_bytes()).unbind();
    Ok((PySimReport { inner: report }, bytes))
}

/// Replay one party ("alice" or "bob") against recorded transcript bytes.
#[pyfunction]
#[pyo3(signature = (transcript, party, n_sent, rates, seed, test_bits_per_basis=10_000,
                    error_target=0.05, key_fidelity_epsilon=1e-3, max_k=30,
                    plan_on_true_rates=false, symmetrize_estimate=false))]
#[allow(clippy::too_many_arguments)]
fn replay(
    py: Python<'_>,
    transcript: &[u8],
    party: &str,
    n_sent: u64,
    rates: &PyPauliRates,
    seed: u64,
    test_bits_per_basis: u64,
    error_target: f64,
    key_fidelity_epsilon: f64,
    max_k: u32,
    plan_on_true_rates: bool,
    symmetrize_estimate: bool,
) -> PyResult<PySimReport> {
    let config = build_sim_config(
        n_sent,
        rates,
        seed,
        test_bits_per_basis,
        1,
        error_target,
        key_fidelity_epsilon,
        max_k,
        plan_on_true_rates,
        symmetrize_estimate,
    )?;
    let party = match party {
        "alice" => session::Party::Alice,
        "bob" => session::Party::Bob,
        other => return Err(value_error(format!("party must be alice or bob, got {other}"))),
    };
    let transcript = session::SessionTranscript::from_bytes(transcript).map_err(value_error)?;
    let report = py
        .detach(move || session::replay(&transcript, party, &config))
        .map_err(value_error)?;
    Ok(PySimReport { inner: report })
}

#[pymodule]
fn _sixstate(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyPauliRates>()?;
    m.add_class::<PyErrorFrame>()?;
    m.add_class::<PyPecPrediction>()?;
    m.add_class::<PySchedulePlan>()?;
    m.add_class::<PySimReport>()?;
    m.add_function(wrap_pyfunction!(ep_map, m)?)?;
    m.add_function(wrap_pyfunction!(ep_map_k, m)?)?;
    m.add_function(wrap_pyfunction!(pec_predict, m)?)?;
    m.add_function(wrap_pyfunction!(binomial_tail_bound, m)?)?;
    m.add_function(wrap_pyfunction!(steane_level_map, m)?)?;
    m.add_function(wrap_pyfunction!(steane_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(ep_converges, m)?)?;
    m.add_function(wrap_pyfunction!(depolarizing_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(choose_r, m)?)?;
    m.add_function(wrap_pyfunction!(steane_levels_needed, m)?)?;
    m.add_function(wrap_pyfunction!(plan_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(sample_frame, m)?)?;
    m.add_function(wrap_pyfunction!(sift, m)?)?;
    m.add_function(wrap_pyfunction!(ep_round, m)?)?;
    m.add_function(wrap_pyfunction!(pec_round, m)?)?;
    m.add_function(wrap_pyfunction!(steane_concat_decode, m)?)?;
    m.add_function(wrap_pyfunction!(run_protocol, m)?)?;
    m.add_function(wrap_pyfunction!(run_trials, m)?)?;
    m.add_function(wrap_pyfunction!(run_session, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    Ok(())
}
