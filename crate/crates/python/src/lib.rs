//! Python bindings: attachment functions, both engines, the exact small-tree
//! oracle and the coupling and explosion diagnostics.
//!
//! Distributions cross the boundary as `dict[tuple[int, ...], float]`.

use std::collections::BTreeMap;

use gpalab::analysis::{
    self, empirical, exact_small_tree_distribution, Distribution, LeaderTimeline, Statistic,
};
use gpalab::attachment;
use gpalab::{cmj, discrete, AttachmentSpec, Error, RngStream};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyTuple};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Internal(msg) => PyRuntimeError::new_err(msg),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn statistic(name: &str) -> PyResult<Statistic> {
    match name {
        "root_degree" => Ok(Statistic::RootDegree),
        "max_degree" => Ok(Statistic::MaxDegree),
        "degree_multiset" => Ok(Statistic::DegreeMultiset),
        _ => Err(PyValueError::new_err(format!(
            "unknown statistic `{name}` (expected root_degree, max_degree or degree_multiset)"
        ))),
    }
}

/// An attachment function, parsed from `constant[:c]`, `linear_shift`,
/// `power:p`, `counterexample`, `gi_lower` or `@path/to/table`.
#[pyclass(frozen, name = "Spec", module = "gpalab_py")]
struct Spec(AttachmentSpec);

#[pymethods]
impl Spec {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        text.parse().map(Spec).map_err(to_py)
    }

    /// `log2 f(j)`; finite even where `f(j)` itself overflows a float.
    fn log2(&self, j: u64) -> PyResult<f64> {
        self.0.eval(j).map(|w| w.log2()).map_err(to_py)
    }

    /// `f(j)` as a float (`inf` past the float range).
    fn value(&self, j: u64) -> PyResult<f64> {
        self.0.eval(j).map(|w| w.value()).map_err(to_py)
    }

    #[getter]
    fn max_index(&self) -> Option<u64> {
        self.0.max_index()
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.0.name()
    }

    #[getter]
    fn classification(&self) -> Option<&'static str> {
        self.0.classification()
    }

    /// First index below `count` where `self < lower`, or `None`.
    fn first_domination_failure(&self, lower: &Spec, count: u64) -> PyResult<Option<u64>> {
        self.0.first_domination_failure(&lower.0, count).map_err(to_py)
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Spec('{}')", self.0)
    }
}

fn leader_dict(t: &LeaderTimeline, d: &Bound<'_, PyDict>) -> PyResult<()> {
    let s = t.summary(&[]);
    d.set_item("leader", s.final_leader)?;
    d.set_item("leader_changes", s.changes)?;
    d.set_item("last_change", s.last_change)?;
    d.set_item("distinct_leaders", s.distinct_leaders)?;
    d.set_item("change_steps", t.change_steps.clone())?;
    Ok(())
}

/// Grows a tree for `horizon` steps.
///
/// Returns a dict with `outdeg`, `parents` (`parents[v - 1]` is the parent
/// of node `v`), `max_degree` and the leader summary.
#[pyfunction]
#[pyo3(signature = (spec, horizon, seed, replica = None))]
fn run_discrete<'py>(
    py: Python<'py>,
    spec: &Spec,
    horizon: u64,
    seed: u64,
    replica: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let (state, timeline) = py
        .detach(|| {
            let mut rng = match replica {
                Some(r) => RngStream::for_replica(seed, r),
                None => RngStream::new(seed),
            };
            let mut timeline = LeaderTimeline::new();
            let s = discrete::run(&spec.0, horizon, &mut rng, &mut [&mut timeline])?;
            Ok((s, timeline))
        })
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("outdeg", state.outdeg().to_vec())?;
    let parents: Vec<u64> = (1..state.node_count()).filter_map(|v| state.parent(v)).collect();
    d.set_item("parents", parents)?;
    d.set_item("max_degree", state.max_degree())?;
    leader_dict(&timeline, &d)?;
    Ok(d)
}

/// Runs the continuous-time embedding to `population` individuals, or
/// until the next birth would come after `max_time`.
///
/// Returns `outdeg`, `tau` (`tau[k - 1]` is the time of the `k`-th birth,
/// root included) and the leader summary of the jump chain.
#[pyfunction]
#[pyo3(signature = (spec, population, seed, max_time = None, replica = None))]
fn run_cmj<'py>(
    py: Python<'py>,
    spec: &Spec,
    population: u64,
    seed: u64,
    max_time: Option<f64>,
    replica: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let (state, timeline) = py
        .detach(|| {
            let mut rng = match replica {
                Some(r) => RngStream::for_replica(seed, r),
                None => RngStream::new(seed),
            };
            let mut timeline = LeaderTimeline::new();
            let s = cmj::run(&spec.0, population, max_time, &mut rng, &mut [&mut timeline])?;
            Ok((s, timeline))
        })
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("outdeg", state.outdeg().to_vec())?;
    d.set_item("tau", state.tau().to_vec())?;
    d.set_item("population", state.population())?;
    leader_dict(&timeline, &d)?;
    Ok(d)
}

fn dist_to_py<'py>(py: Python<'py>, dist: &Distribution<Vec<u64>>) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (k, p) in dist {
        d.set_item(PyTuple::new(py, k)?, p)?;
    }
    Ok(d)
}

/// Exact law of `statistic` on trees with `nodes <= 8` nodes.
#[pyfunction]
#[pyo3(signature = (spec, nodes, statistic = "root_degree"))]
fn exact_distribution<'py>(
    py: Python<'py>,
    spec: &Spec,
    nodes: u64,
    statistic: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let stat = self::statistic(statistic)?;
    let exact = py
        .detach(|| exact_small_tree_distribution(&spec.0, nodes, stat))
        .map_err(to_py)?;
    dist_to_py(py, &exact.to_map())
}

/// Empirical law of `statistic` over `replicas` trees of `nodes` nodes,
/// grown by `engine` (`"discrete"` or `"cmj"`).
#[pyfunction]
#[pyo3(signature = (spec, nodes, replicas, seed, engine = "discrete", statistic = "root_degree"))]
fn empirical_distribution<'py>(
    py: Python<'py>,
    spec: &Spec,
    nodes: u64,
    replicas: u64,
    seed: u64,
    engine: &str,
    statistic: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let stat = self::statistic(statistic)?;
    if nodes < 2 {
        return Err(PyValueError::new_err("nodes must be at least 2"));
    }
    let use_cmj = match engine {
        "discrete" => false,
        "cmj" => true,
        _ => return Err(PyValueError::new_err(format!("unknown engine `{engine}`"))),
    };
    let dist = py
        .detach(|| -> gpalab::Result<_> {
            let mut samples = Vec::with_capacity(replicas as usize);
            for r in 0..replicas {
                let mut rng = RngStream::for_replica(seed, r);
                let outdeg = if use_cmj {
                    cmj::run(&spec.0, nodes, None, &mut rng, &mut [])?.outdeg().to_vec()
                } else {
                    discrete::run(&spec.0, nodes - 1, &mut rng, &mut [])?.outdeg().to_vec()
                };
                samples.push(stat.of(&outdeg));
            }
            Ok(empirical(samples))
        })
        .map_err(to_py)?;
    dist_to_py(py, &dist)
}

/// Total-variation distance between two `dict[tuple, float]` laws.
#[pyfunction]
fn tv_distance(p: BTreeMap<Vec<u64>, f64>, q: BTreeMap<Vec<u64>, f64>) -> PyResult<f64> {
    analysis::tv_distance(&p, &q).map_err(to_py)
}

/// `(S1, S2)`: sums of `1/f(j)` and `1/f(j)^2` over `j <= last`.
#[pyfunction]
fn partial_inverse_sums(spec: &Spec, last: u64) -> PyResult<(f64, f64)> {
    attachment::partial_inverse_sums(&spec.0, last).map_err(to_py)
}

/// Limit of `S2` for the counter-example.
#[pyfunction]
fn counterexample_s2_limit() -> f64 {
    attachment::counterexample_s2_limit()
}

/// Birth-gap pairs `(gap_hi, gap_lo)` driven by shared exponentials.
/// Raises `ValueError` unless `hi >= lo` on `0..count`.
#[pyfunction]
fn coupled_birth_gaps(hi: &Spec, lo: &Spec, count: u64, seed: u64) -> PyResult<Vec<(f64, f64)>> {
    cmj::coupled_birth_gaps(&hi.0, &lo.0, count, &mut RngStream::new(seed)).map_err(to_py)
}

/// `tau_k` and `tau_2k - tau_k` at each checkpoint `k`.
#[pyfunction]
fn tau_profile<'py>(
    py: Python<'py>,
    tau: Vec<f64>,
    checkpoints: Vec<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let p = analysis::tau_profile(&tau, &checkpoints).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("checkpoints", p.checkpoints)?;
    d.set_item("doubling_gaps", p.doubling_gaps)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (gaps, factor = 2.0))]
fn explosive_signature(gaps: Vec<f64>, factor: f64) -> bool {
    analysis::explosive_signature(&gaps, factor)
}

/// Seed of replica `replica` under `master`, as used by the engines.
#[pyfunction]
fn replica_seed(master: u64, replica: u64) -> u64 {
    gpalab::numerics::replica_seed(master, replica)
}

#[pymodule]
pub fn gpalab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Spec>()?;
    m.add_function(wrap_pyfunction!(run_discrete, m)?)?;
    m.add_function(wrap_pyfunction!(run_cmj, m)?)?;
    m.add_function(wrap_pyfunction!(exact_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(tv_distance, m)?)?;
    m.add_function(wrap_pyfunction!(partial_inverse_sums, m)?)?;
    m.add_function(wrap_pyfunction!(counterexample_s2_limit, m)?)?;
    m.add_function(wrap_pyfunction!(coupled_birth_gaps, m)?)?;
    m.add_function(wrap_pyfunction!(tau_profile, m)?)?;
    m.add_function(wrap_pyfunction!(explosive_signature, m)?)?;
    m.add_function(wrap_pyfunction!(replica_seed, m)?)?;
    m.add("MAX_ORACLE_NODES", analysis::MAX_ORACLE_NODES)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
