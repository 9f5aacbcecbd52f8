//! Python bindings. Matrices cross the boundary as nested lists of
//! complex numbers; protocol specs and traces as JSON strings.

use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use qfb_core::linalg::CMatrix;
use qfb_core::protocol::{
    random_spec, run_mixture_simulation, run_purified, ProtocolSpec, RandomSpecParams, RunOptions,
};
use qfb_core::verify::{self as checks, FleetConfig, ProtocolFleet};
use qfb_core::{channel, HermitianObservable, SystemLayout};

create_exception!(qfb, QfbError, PyValueError);

fn err(e: qfb_core::QfbError) -> PyErr {
    QfbError::new_err(e.to_string())
}

fn json_err(e: serde_json::Error) -> PyErr {
    QfbError::new_err(e.to_string())
}

type Rows = Vec<Vec<Complex64>>;

fn to_matrix(rows: &Rows) -> PyResult<CMatrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(QfbError::new_err("matrix rows must be non-empty and of equal length"));
    }
    Ok(CMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_rows(m: &CMatrix) -> Rows {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn density(rows: &Rows) -> PyResult<qfb_core::DensityMatrix> {
    let m = to_matrix(rows)?;
    let layout = SystemLayout::single("A", m.nrows()).map_err(err)?;
    qfb_core::DensityMatrix::new(layout, m).map_err(err)
}

/// A channel, or a mixture of channels on the same spaces.
#[pyclass(module = "qfb", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Channel {
    inner: qfb_core::ChannelSpec,
}

#[pymethods]
impl Channel {
    /// Named family: identity, depolarizing, dephasing, amplitude_damping,
    /// pure_loss, or erasure.
    #[staticmethod]
    #[pyo3(signature = (name, d=None, p=None, q=None, gamma=None, eta=None, cutoff=None))]
    fn named(
        name: &str,
        d: Option<f64>,
        p: Option<f64>,
        q: Option<f64>,
        gamma: Option<f64>,
        eta: Option<f64>,
        cutoff: Option<f64>,
    ) -> PyResult<Self> {
        if name == "erasure" {
            let (d, p) = d.zip(p).ok_or_else(|| QfbError::new_err("erasure needs d and p"))?;
            return Self::erasure(d as usize, p);
        }
        let get = |k: &str| match k {
            "d" => d,
            "p" => p,
            "q" => q,
            "gamma" => gamma,
            "eta" => eta,
            "cutoff" => cutoff,
            _ => None,
        };
        let nc = channel::named_from_params(name, get).map_err(err)?;
        Ok(Self { inner: qfb_core::ChannelSpec::Single(qfb_core::make_named(&nc).map_err(err)?) })
    }

    #[staticmethod]
    fn erasure(d: usize, p: f64) -> PyResult<Self> {
        Ok(Self { inner: qfb_core::ChannelSpec::Mixture(qfb_core::make_erasure(d, p).map_err(err)?) })
    }

    #[staticmethod]
    fn from_kraus(kraus: Vec<Rows>) -> PyResult<Self> {
        let ops = kraus.iter().map(to_matrix).collect::<PyResult<Vec<_>>>()?;
        let first = ops.first().ok_or_else(|| QfbError::new_err("no Kraus operators"))?;
        let ch = qfb_core::KrausChannel::new(first.ncols(), first.nrows(), ops.clone()).map_err(err)?;
        Ok(Self { inner: qfb_core::ChannelSpec::Single(ch) })
    }

    #[staticmethod]
    fn random(dim_in: usize, dim_out: usize, dim_env: usize, seed: u64) -> PyResult<Self> {
        let ch = qfb_core::random_channel(dim_in, dim_out, dim_env, seed).map_err(err)?;
        Ok(Self { inner: qfb_core::ChannelSpec::Single(ch) })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: serde_json::from_str(text).map_err(json_err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    #[getter]
    fn dim_in(&self) -> usize {
        self.inner.dim_in()
    }

    #[getter]
    fn dim_out(&self) -> usize {
        self.inner.dim_out()
    }

    #[getter]
    fn is_mixture(&self) -> bool {
        matches!(&self.inner, qfb_core::ChannelSpec::Mixture(m) if m.components().len() > 1)
    }

    /// Output of the averaged channel on a density matrix.
    fn apply(&self, rho: Rows) -> PyResult<Rows> {
        let rho = density(&rho)?;
        if rho.dim() != self.inner.dim_in() {
            return Err(QfbError::new_err("input dimension mismatch"));
        }
        Ok(to_rows(&self.inner.flattened().apply_matrix(rho.matrix())))
    }

    fn __repr__(&self) -> String {
        format!("Channel(dim_in={}, dim_out={}, mixture={})", self.dim_in(), self.dim_out(), self.is_mixture())
    }
}

#[pyclass(module = "qfb", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct EnergyConstraint {
    inner: qfb_core::EnergyConstraint,
}

#[pymethods]
impl EnergyConstraint {
    #[new]
    fn new(hamiltonian: Rows, budget: f64) -> PyResult<Self> {
        let m = to_matrix(&hamiltonian)?;
        let layout = SystemLayout::single("A", m.nrows()).map_err(err)?;
        let h = HermitianObservable::new(layout, m).map_err(err)?;
        Ok(Self { inner: qfb_core::EnergyConstraint::new(h, budget).map_err(err)? })
    }

    #[staticmethod]
    fn photon_number(dim: usize, mean_photons: f64) -> PyResult<Self> {
        Ok(Self { inner: qfb_core::EnergyConstraint::photon_number(dim, mean_photons).map_err(err)? })
    }

    #[staticmethod]
    fn unconstrained(dim: usize) -> Self {
        Self { inner: qfb_core::EnergyConstraint::unconstrained(dim) }
    }

    #[getter]
    fn budget(&self) -> f64 {
        self.inner.budget
    }
}

#[pyclass(module = "qfb", frozen, get_all)]
pub struct BoundReport {
    /// Maximum output entropy in bits.
    value: f64,
    iterations: usize,
    gap: f64,
    optimizer_diag: Vec<f64>,
    constraint_slack: Option<f64>,
    json: String,
}

#[pymethods]
impl BoundReport {
    fn to_json(&self) -> String {
        self.json.clone()
    }

    fn __repr__(&self) -> String {
        format!("BoundReport(value={}, iterations={}, gap={:e})", self.value, self.iterations, self.gap)
    }
}

/// Energy-constrained maximum output entropy; for mixtures the weighted
/// average over components.
#[pyfunction]
#[pyo3(signature = (channel, constraint=None))]
fn max_output_entropy(
    py: Python<'_>,
    channel: &Channel,
    constraint: Option<&EnergyConstraint>,
) -> PyResult<BoundReport> {
    let ec =
        constraint.map_or_else(|| qfb_core::EnergyConstraint::unconstrained(channel.dim_in()), |c| c.inner.clone());
    let spec = channel.inner.clone();
    let mixture = channel.is_mixture();
    let report = py
        .detach(move || {
            if mixture {
                qfb_core::max_avg_output_entropy(&spec.as_mixture(), &ec)
            } else {
                qfb_core::max_output_entropy(&spec.flattened(), &ec)
            }
        })
        .map_err(err)?;
    Ok(BoundReport {
        value: report.value,
        iterations: report.iterations,
        gap: report.duality_gap_estimate,
        optimizer_diag: report.optimizer_diag(),
        constraint_slack: report.constraint_slack,
        json: serde_json::to_string(&report).map_err(json_err)?,
    })
}

#[pyfunction]
fn von_neumann_entropy(rho: Rows) -> PyResult<f64> {
    qfb_core::von_neumann_entropy(&density(&rho)?).map_err(err)
}

#[pyfunction]
fn binary_entropy(eps: f64) -> f64 {
    qfb_core::binary_entropy(eps)
}

#[pyfunction]
fn g_function(x: f64) -> PyResult<f64> {
    qfb_core::g_function(x).map_err(err)
}

#[pyfunction]
fn feedback_rate_bound(n: usize, epsilon: f64, bound_per_use: f64) -> PyResult<f64> {
    qfb_core::feedback_rate_bound(n, epsilon, bound_per_use).map_err(err)
}

#[pyclass(module = "qfb", frozen, get_all)]
pub struct CheckResult {
    name: String,
    trials: usize,
    violations: usize,
    numerical_zeros: usize,
    worst_margin: f64,
    seed: u64,
    passed: bool,
}

#[pymethods]
impl CheckResult {
    fn __repr__(&self) -> String {
        format!(
            "CheckResult(name={:?}, trials={}, violations={}, worst_margin={:e})",
            self.name, self.trials, self.violations, self.worst_margin
        )
    }
}

/// Runs one verification fleet: lemma1, lemma2, lemma3, lemma3z, thm1 or
/// thm2. `trials` counts protocols for the chain fleets.
#[pyfunction]
#[pyo3(signature = (suite, trials=200, seed=0, max_dim=4))]
fn verify(py: Python<'_>, suite: &str, trials: usize, seed: u64, max_dim: usize) -> PyResult<CheckResult> {
    let fleet = FleetConfig { max_dim, ..FleetConfig::new(trials, seed) };
    let protocols = ProtocolFleet::new(trials, seed);
    let suite = suite.to_string();
    let r = py
        .detach(move || match suite.as_str() {
            "lemma1" => checks::check_lemma1(&fleet),
            "lemma2" => checks::check_lemma2(&fleet),
            "lemma3" => checks::check_lemma3(&fleet),
            "lemma3z" => checks::check_lemma3_mixture(&fleet),
            "thm1" => checks::check_single_channel_fleet(&protocols),
            "thm2" => checks::check_mixture_fleet(&protocols),
            other => Err(qfb_core::QfbError::InvalidParameter(format!("unknown suite `{other}`"))),
        })
        .map_err(err)?;
    Ok(CheckResult {
        passed: r.passed(),
        name: r.name,
        trials: r.trials,
        violations: r.violations,
        numerical_zeros: r.numerical_zeros,
        worst_margin: r.worst_margin,
        seed: r.seed,
    })
}

fn run_spec(spec: &ProtocolSpec) -> PyResult<String> {
    let opts = RunOptions::default();
    let trace = match &spec.channel {
        qfb_core::ChannelSpec::Mixture(m) if m.components().len() > 1 => run_mixture_simulation(spec, &opts),
        _ => run_purified(spec, &opts),
    }
    .map_err(err)?;
    serde_json::to_string(&trace).map_err(json_err)
}

/// Random protocol as a JSON spec.
#[pyfunction]
#[pyo3(signature = (n=2, m=2, seed=0, channel=None, energy_budget=1.0))]
fn random_protocol(n: usize, m: usize, seed: u64, channel: Option<&Channel>, energy_budget: f64) -> PyResult<String> {
    let params =
        RandomSpecParams { n, m, channel: channel.map(|c| c.inner.clone()), energy_budget, ..Default::default() };
    serde_json::to_string(&random_spec(&params, seed).map_err(err)?).map_err(json_err)
}

/// Simulates a JSON protocol spec and returns the trace as JSON. Mixture
/// channels run the component-resolved simulation.
#[pyfunction]
fn simulate(py: Python<'_>, spec_json: &str) -> PyResult<String> {
    let spec: ProtocolSpec = serde_json::from_str(spec_json).map_err(json_err)?;
    py.detach(move || run_spec(&spec))
}

#[pymodule]
fn qfb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("QfbError", m.py().get_type::<QfbError>())?;
    m.add_class::<Channel>()?;
    m.add_class::<EnergyConstraint>()?;
    m.add_class::<BoundReport>()?;
    m.add_class::<CheckResult>()?;
    m.add_function(wrap_pyfunction!(max_output_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(von_neumann_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(binary_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(g_function, m)?)?;
    m.add_function(wrap_pyfunction!(feedback_rate_bound, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(random_protocol, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
