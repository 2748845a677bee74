//! Python bindings: presets, the centralized oracle, seeded runs and the
//! quantizer.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rddgt::engine::{monte_carlo, Algorithm, EngineError, HyperParams, NoisePair, RunSpec};
use rddgt::harness::{self, HarnessError};
use rddgt::metrics::IterationRecord;
use rddgt::noise::{RngStream, StreamId, UpdateSite};
use rddgt::{mixing_diagnostics, CommGraph, EdpInstance, NoiseModel};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn engine_error(e: EngineError) -> PyErr {
    match e {
        EngineError::ShapeMismatch(_) => PyRuntimeError::new_err(e.to_string()),
        other => value_error(other),
    }
}

fn harness_error(e: HarnessError) -> PyErr {
    match e {
        HarnessError::Io(_) | HarnessError::Csv(_) | HarnessError::Json(_) => PyRuntimeError::new_err(e.to_string()),
        HarnessError::Engine(inner) => engine_error(inner),
        other => value_error(other),
    }
}

fn parse_noise(spec: &str) -> PyResult<NoiseModel> {
    spec.parse().map_err(value_error)
}

/// Quadratic generator cost `a w^2 + b w + c` on `[w_lo, w_hi]`.
#[pyclass(name = "AgentCost", frozen, eq, from_py_object)]
#[derive(Clone, PartialEq)]
struct PyAgentCost {
    inner: rddgt::AgentCost,
}

#[pymethods]
impl PyAgentCost {
    #[new]
    #[pyo3(signature = (a, b, w_lo, w_hi, c=0.0))]
    fn new(a: f64, b: f64, w_lo: f64, w_hi: f64, c: f64) -> PyResult<Self> {
        Ok(Self { inner: rddgt::AgentCost::new(a, b, c, w_lo, w_hi).map_err(value_error)? })
    }

    #[getter]
    fn a(&self) -> f64 {
        self.inner.a
    }

    #[getter]
    fn b(&self) -> f64 {
        self.inner.b
    }

    #[getter]
    fn c(&self) -> f64 {
        self.inner.c
    }

    #[getter]
    fn w_lo(&self) -> f64 {
        self.inner.w_lo
    }

    #[getter]
    fn w_hi(&self) -> f64 {
        self.inner.w_hi
    }

    /// Cost-minimising output at price `-x`.
    fn primal_update(&self, x: f64) -> f64 {
        rddgt::model::primal_update(&self.inner, x)
    }

    fn marginal_cost(&self, w: f64) -> f64 {
        self.inner.marginal_cost(w)
    }

    fn __repr__(&self) -> String {
        let a = &self.inner;
        format!("AgentCost(a={}, b={}, w_lo={}, w_hi={}, c={})", a.a, a.b, a.w_lo, a.w_hi, a.c)
    }
}

/// A dispatch instance together with its communication digraph.
#[pyclass(name = "Problem", frozen)]
struct PyProblem {
    inner: rddgt::Problem,
}

#[pymethods]
impl PyProblem {
    /// `edges` are 0-indexed `(from, to)` pairs; by default a ring with
    /// seeded shortcuts is used.
    #[new]
    #[pyo3(signature = (agents, demands, edges=None))]
    fn new(agents: Vec<PyAgentCost>, demands: Vec<f64>, edges: Option<Vec<(usize, usize)>>) -> PyResult<Self> {
        let instance = EdpInstance::new(agents.into_iter().map(|a| a.inner).collect(), demands).map_err(value_error)?;
        let graph = match edges {
            Some(e) => CommGraph::from_edges(instance.n(), e).map_err(value_error)?,
            None => harness::presets::default_topology(instance.n(), harness::presets::TOPOLOGY_SEED),
        };
        Ok(Self { inner: rddgt::Problem::new(instance, graph).map_err(engine_error)? })
    }

    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        let (instance, graph) = harness::preset(name).map_err(harness_error)?;
        Ok(Self { inner: rddgt::Problem::new(instance, graph).map_err(engine_error)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.instance.n()
    }

    #[getter]
    fn agents(&self) -> Vec<PyAgentCost> {
        self.inner.instance.agents().iter().map(|&inner| PyAgentCost { inner }).collect()
    }

    #[getter]
    fn total_demand(&self) -> f64 {
        self.inner.instance.total_demand()[0]
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.graph.edges().collect()
    }

    /// Centralized optimum: `lambda_star`, `w_star` (one value per agent), `f_star`.
    fn solve<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let sol = &self.inner.solution;
        let d = PyDict::new(py);
        d.set_item("lambda_star", sol.lambda_star[0])?;
        d.set_item("w_star", sol.w_star.column(0).iter().copied().collect::<Vec<_>>())?;
        d.set_item("f_star", sol.f_star)?;
        Ok(d)
    }

    /// Perron vectors `(u, v)` of the row- and column-stochastic weights.
    fn perron_vectors(&self) -> (Vec<f64>, Vec<f64>) {
        let p = &self.inner.perron;
        (p.u.iter().copied().collect(), p.v.iter().copied().collect())
    }

    #[pyo3(signature = (eta, gamma, alpha))]
    fn mixing<'py>(&self, py: Python<'py>, eta: f64, gamma: f64, alpha: f64) -> PyResult<Bound<'py, PyDict>> {
        let lipschitz = self.inner.instance.dual_lipschitz();
        let report = mixing_diagnostics(&self.inner.weights, eta, gamma, alpha, lipschitz).map_err(value_error)?;
        let d = PyDict::new(py);
        d.set_item("slem_r_eta", report.slem_r_eta)?;
        d.set_item("slem_c_gamma", report.slem_c_gamma)?;
        d.set_item("rho_surrogate", report.rho_surrogate)?;
        d.set_item("stable", report.stable)?;
        Ok(d)
    }

    /// Runs `trials` seeded replicas and returns the mean metric series (and
    /// their standard errors under `stderr_<name>`).
    #[pyo3(signature = (algorithm, alpha, iterations, seed, eta=0.5, gamma=0.5, beta=0.0, noise="gaussian:1.0", noise_dual=None, noise_aux=None, trials=1))]
    #[allow(clippy::too_many_arguments)]
    fn run<'py>(
        &self,
        py: Python<'py>,
        algorithm: &str,
        alpha: f64,
        iterations: usize,
        seed: u64,
        eta: f64,
        gamma: f64,
        beta: f64,
        noise: &str,
        noise_dual: Option<&str>,
        noise_aux: Option<&str>,
        trials: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let algorithm: Algorithm = algorithm.parse().map_err(engine_error)?;
        let params = HyperParams { alpha, eta, gamma, beta, iterations };
        let both = parse_noise(noise)?;
        let pair = NoisePair {
            dual: noise_dual.map(parse_noise).transpose()?.unwrap_or_else(|| both.clone()),
            aux: noise_aux.map(parse_noise).transpose()?.unwrap_or(both),
        };
        let spec = RunSpec::new(algorithm, params, pair, seed);
        let problem = &self.inner;
        let result = py.detach(|| monte_carlo(problem, &spec, trials)).map_err(engine_error)?;
        trace_dict(py, &result.trace.records, &result.trace.stderr)
    }
}

const SERIES: [&str; IterationRecord::FIELDS] =
    ["consensus_err", "consensus_err_plain", "grad_norm_sq", "mismatch", "err_to_opt", "m_running", "n_metric", "tracking_sq"];

fn trace_dict<'py>(py: Python<'py>, records: &[IterationRecord], stderr: &[IterationRecord]) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("k", records.iter().map(|r| r.k).collect::<Vec<_>>())?;
    for (j, name) in SERIES.iter().enumerate() {
        d.set_item(*name, records.iter().map(|r| r.values()[j]).collect::<Vec<_>>())?;
        d.set_item(format!("stderr_{name}"), stderr.iter().map(|r| r.values()[j]).collect::<Vec<_>>())?;
    }
    Ok(d)
}

/// Runs a JSON configuration document and returns the mean trace.
#[pyfunction]
fn run_config<'py>(py: Python<'py>, document: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = harness::load_config(document).map_err(harness_error)?;
    let problem = cfg.problem().map_err(harness_error)?;
    let spec = cfg.run_spec().map_err(harness_error)?;
    let result = py.detach(|| monte_carlo(&problem, &spec, cfg.trials)).map_err(engine_error)?;
    trace_dict(py, &result.trace.records, &result.trace.stderr)
}

/// Validates a JSON configuration and returns its full snapshot.
#[pyfunction]
fn load_config(document: &str) -> PyResult<String> {
    Ok(harness::load_config(document).map_err(harness_error)?.to_json())
}

/// `count` dithered quantizations of `x` from one seeded stream.
#[pyfunction]
#[pyo3(signature = (x, lower, upper, bits, seed, count=1))]
fn quantize(x: f64, lower: f64, upper: f64, bits: u32, seed: u64, count: usize) -> PyResult<Vec<f64>> {
    NoiseModel::Quantizer { lower, upper, bits }.validate().map_err(value_error)?;
    let mut rng = RngStream::new(seed, StreamId { trial: 0, agent: 0, site: UpdateSite::Aux });
    Ok((0..count).map(|_| rddgt::quantize(x, lower, upper, bits, &mut rng).value).collect())
}

#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    harness::PRESET_NAMES.to_vec()
}

#[pymodule]
fn rddgt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAgentCost>()?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(load_config, m)?)?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add("ALGORITHMS", Algorithm::ALL.map(|a| a.name()).to_vec())?;
    Ok(())
}
