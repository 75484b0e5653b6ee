//! Python bindings for `semispin`.

use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use semispin::cli::{self, CliError, RunConfig};
use semispin::reference::{self, HilbertConfig, ReferenceMethod};
use semispin::semiclassical;
use semispin::shooting::{BoundaryData, ShootingOptions};
use semispin::states::{self, Spin};
use semispin::symbols::{OperatorSpec, OperatorTerm, Symbol};
use semispin::Error;

create_exception!(pysemispin, SolverError, PyRuntimeError);

fn solver_err(e: Error) -> PyErr {
    match e {
        Error::InvalidSpin(_)
        | Error::InvalidArgument(_)
        | Error::UncertaintyViolation { .. }
        | Error::PowerLimit { .. } => PyValueError::new_err(e.to_string()),
        _ => SolverError::new_err(e.to_string()),
    }
}

fn cli_err(e: CliError) -> PyErr {
    match e {
        CliError::Config(m) => PyValueError::new_err(m),
        CliError::Solver(e) => solver_err(e),
        CliError::Io(m) => PyRuntimeError::new_err(m),
    }
}

fn spin(j: f64) -> PyResult<Spin> {
    Spin::new(j).map_err(solver_err)
}

/// Normally ordered polynomial in `a`, `a+`, `J+`, `Jz`, `J-`.
#[pyclass(name = "Hamiltonian", from_py_object)]
#[derive(Clone)]
pub struct PyHamiltonian {
    spec: OperatorSpec,
}

#[pymethods]
impl PyHamiltonian {
    /// Terms as `(coeff, m, n, p, q, r)` for `coeff a+^m a^n J+^p Jz^q J-^r`.
    #[new]
    fn new(terms: Vec<(Complex64, u32, u32, u32, u32, u32)>) -> Self {
        PyHamiltonian {
            spec: OperatorSpec::new(
                terms
                    .into_iter()
                    .map(|(c, m, n, p, q, r)| OperatorTerm::new(c, m, n, p, q, r))
                    .collect(),
            ),
        }
    }

    #[staticmethod]
    fn harmonic(hbar: f64, omega: f64) -> Self {
        PyHamiltonian {
            spec: OperatorSpec::harmonic(hbar, omega),
        }
    }

    #[staticmethod]
    fn spin_precession(hbar: f64, omega0: f64) -> Self {
        PyHamiltonian {
            spec: OperatorSpec::spin_precession(hbar, omega0),
        }
    }

    #[staticmethod]
    fn jaynes_cummings(hbar: f64, omega: f64, omega0: f64, g: f64) -> Self {
        PyHamiltonian {
            spec: OperatorSpec::jaynes_cummings(hbar, omega, omega0, g),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyHamiltonian { spec })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.spec).expect("term records serialize")
    }

    #[getter]
    fn terms(&self) -> Vec<(Complex64, u32, u32, u32, u32, u32)> {
        self.spec
            .terms
            .iter()
            .map(|t| (t.coeff, t.m, t.n, t.p, t.q, t.r))
            .collect()
    }

    fn is_separable(&self) -> bool {
        self.spec.is_separable()
    }

    fn __add__(&self, other: &PyHamiltonian) -> Self {
        PyHamiltonian {
            spec: self.spec.clone().extend(&other.spec),
        }
    }

    fn __len__(&self) -> usize {
        self.spec.terms.len()
    }

    fn __repr__(&self) -> String {
        format!("Hamiltonian({} terms)", self.spec.terms.len())
    }
}

/// Semiclassical propagator and diagnostics.
#[pyclass(name = "PropagatorResult", frozen, skip_from_py_object)]
pub struct PyPropagatorResult {
    inner: semiclassical::PropagatorResult,
}

#[pymethods]
impl PyPropagatorResult {
    #[getter]
    fn k(&self) -> Complex64 {
        self.inner.k
    }
    #[getter]
    fn action(&self) -> Complex64 {
        self.inner.action
    }
    #[getter]
    fn sk_phase(&self) -> Complex64 {
        self.inner.sk_phase
    }
    #[getter]
    fn normalization(&self) -> f64 {
        self.inner.lambda
    }
    #[getter]
    fn prefactor(&self) -> Complex64 {
        self.inner.prefactor
    }
    #[getter]
    fn residual(&self) -> f64 {
        self.inner.residual
    }
    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }
    #[getter]
    fn branch(&self) -> usize {
        self.inner.branch
    }
    #[getter]
    fn abs_det_mbb(&self) -> f64 {
        self.inner.det_mbb_abs
    }
    #[getter]
    fn energy_drift(&self) -> f64 {
        self.inner.energy_drift
    }
    #[getter]
    fn contributing(&self) -> bool {
        self.inner.contributing
    }

    fn __repr__(&self) -> String {
        format!(
            "PropagatorResult(k={}, residual={:.1e})",
            self.inner.k, self.inner.residual
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn boundary(
    j: f64,
    hbar: f64,
    z_initial: Complex64,
    s_initial: Complex64,
    z_final: Complex64,
    s_final: Complex64,
    t: f64,
) -> PyResult<BoundaryData> {
    BoundaryData::new(z_initial, s_initial, z_final, s_final, spin(j)?, hbar, t).map_err(solver_err)
}

/// Canonical overlap `<z1|z2>`.
#[pyfunction]
fn overlap_canonical(z1: Complex64, z2: Complex64) -> Complex64 {
    states::overlap_canonical(z1, z2)
}

/// Spin overlap `<s1|s2>` at spin `j`.
#[pyfunction]
fn overlap_spin(s1: Complex64, s2: Complex64, j: f64) -> PyResult<Complex64> {
    Ok(states::overlap_spin(s1, s2, spin(j)?))
}

/// Semiclassical `<z'', s''| exp(-i H t / hbar) |z', s'>`.
#[pyfunction]
#[pyo3(signature = (hamiltonian, j, hbar, z_initial, s_initial, z_final, s_final, t, tol_ode=1e-10, tol_newton=1e-10))]
#[allow(clippy::too_many_arguments)]
fn propagate(
    py: Python<'_>,
    hamiltonian: &PyHamiltonian,
    j: f64,
    hbar: f64,
    z_initial: Complex64,
    s_initial: Complex64,
    z_final: Complex64,
    s_final: Complex64,
    t: f64,
    tol_ode: f64,
    tol_newton: f64,
) -> PyResult<PyPropagatorResult> {
    let bd = boundary(j, hbar, z_initial, s_initial, z_final, s_final, t)?;
    let sym = Symbol::new(&hamiltonian.spec, bd.spin, hbar).map_err(solver_err)?;
    let opts = ShootingOptions {
        tol: tol_newton,
        ode: semispin::ode::OdeOptions::with_tol(tol_ode),
        ..ShootingOptions::default()
    };
    let (inner, _) = py
        .detach(|| semiclassical::propagate(&sym, &bd, None, &opts))
        .map_err(solver_err)?;
    Ok(PyPropagatorResult { inner })
}

/// Exact propagator on a truncated Fock space times the spin space.
#[pyfunction]
#[pyo3(signature = (hamiltonian, j, hbar, z_initial, s_initial, z_final, s_final, t, n_max=None))]
#[allow(clippy::too_many_arguments)]
fn exact_propagator(
    py: Python<'_>,
    hamiltonian: &PyHamiltonian,
    j: f64,
    hbar: f64,
    z_initial: Complex64,
    s_initial: Complex64,
    z_final: Complex64,
    s_final: Complex64,
    t: f64,
    n_max: Option<usize>,
) -> PyResult<Complex64> {
    let bd = boundary(j, hbar, z_initial, s_initial, z_final, s_final, t)?;
    let mut cfg = HilbertConfig::for_boundary(&bd, 10);
    if let Some(n) = n_max {
        cfg.n_max = n;
    }
    py.detach(|| reference::exact_propagator(&hamiltonian.spec, &cfg, &bd, ReferenceMethod::Auto))
        .map_err(solver_err)
}

/// Runs a CLI command (`propagate`, `scan`, `verify`, `oracle`) on a JSON
/// config and returns the rows as dicts.
#[pyfunction]
fn run_command<'py>(py: Python<'py>, command: &str, config_json: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = RunConfig::from_json(config_json).map_err(cli_err)?;
    let run = match command {
        "propagate" => cli::cmd_propagate,
        "scan" => cli::cmd_scan,
        "verify" => cli::cmd_verify,
        "oracle" => cli::cmd_oracle,
        other => return Err(PyValueError::new_err(format!("unknown command {other:?}"))),
    };
    let table = py.detach(|| run(&cfg)).map_err(cli_err)?;
    table
        .rows
        .iter()
        .map(|row| {
            let d = PyDict::new(py);
            for (name, cell) in table.columns.iter().zip(row) {
                match *cell {
                    cli::Cell::Float(x) => d.set_item(name, x)?,
                    cli::Cell::Int(n) => d.set_item(name, n)?,
                    cli::Cell::Bool(b) => d.set_item(name, b)?,
                }
            }
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn pysemispin(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHamiltonian>()?;
    m.add_class::<PyPropagatorResult>()?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    m.add_function(wrap_pyfunction!(overlap_canonical, m)?)?;
    m.add_function(wrap_pyfunction!(overlap_spin, m)?)?;
    m.add_function(wrap_pyfunction!(propagate, m)?)?;
    m.add_function(wrap_pyfunction!(exact_propagator, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    Ok(())
}
