//! Python bindings for the off-dynamics RCSL lab: the tabular MDP and
//! policy types, dataset collection, the return transforms, tabular
//! policy fitting, and evaluation.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use radt_core::augment;
use radt_core::classifiers;
use radt_core::data;
use radt_core::envs;
use radt_core::error::Error;
use radt_core::eval;
use radt_core::mdp;
use radt_core::rcsl;
use radt_core::shift;

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Finite-horizon tabular MDP.
#[pyclass(name = "Mdp")]
struct PyMdp {
    inner: mdp::TabularMdp,
}

#[pymethods]
impl PyMdp {
    #[staticmethod]
    fn chain_walk(num_states: usize, horizon: usize, success_prob: f64) -> PyResult<Self> {
        Ok(Self {
            inner: envs::chain_walk(num_states, horizon, success_prob).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn chain_walk_uniform_start(
        num_states: usize,
        horizon: usize,
        success_prob: f64,
    ) -> PyResult<Self> {
        Ok(Self {
            inner: envs::chain_walk_uniform_start(num_states, horizon, success_prob)
                .map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn random(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        seed: u64,
        reward_levels: i64,
        reward_grid: f64,
    ) -> PyResult<Self> {
        Ok(Self {
            inner: envs::random_mdp(
                num_states,
                num_actions,
                horizon,
                seed,
                reward_levels,
                reward_grid,
            )
            .map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: mdp::TabularMdp::from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.num_states()
    }

    #[getter]
    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    #[getter]
    fn reward_grid(&self) -> f64 {
        self.inner.reward_grid()
    }

    /// Optimal policy and its exact expected return.
    fn value_iteration(&self) -> (PyPolicy, f64) {
        let (policy, j_star) = mdp::value_iteration(&self.inner);
        (PyPolicy { inner: policy }, j_star)
    }

    fn uniform_policy(&self) -> PyPolicy {
        PyPolicy {
            inner: mdp::StationaryPolicy::uniform(&self.inner),
        }
    }

    fn policy_value(&self, policy: &PyPolicy) -> PyResult<f64> {
        mdp::policy_value(&self.inner, &policy.inner).map_err(py_err)
    }

    /// Exact return-to-go distribution at (t, s, a): (support, mass).
    fn return_distribution(
        &self,
        policy: &PyPolicy,
        t: usize,
        s: usize,
        a: usize,
    ) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let d = mdp::return_to_go_distribution(&self.inner, &policy.inner, t, s, a)
            .map_err(py_err)?;
        Ok((d.support(), d.mass().to_vec()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Mdp(states={}, actions={}, horizon={})",
            self.inner.num_states(),
            self.inner.num_actions(),
            self.inner.horizon()
        )
    }
}

/// Time-indexed stochastic policy over an MDP.
#[pyclass(name = "Policy")]
struct PyPolicy {
    inner: mdp::StationaryPolicy,
}

#[pymethods]
impl PyPolicy {
    fn prob(&self, t: usize, s: usize, a: usize) -> f64 {
        self.inner.prob(t, s, a)
    }

    fn epsilon_greedy(&self, epsilon: f64) -> PyPolicy {
        PyPolicy {
            inner: self.inner.epsilon_greedy(epsilon),
        }
    }
}

/// Offline dataset of fixed-length episodes with returns-to-go.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn max_return(&self) -> f64 {
        self.inner.max_return()
    }

    fn return_quantile(&self, q: f64) -> f64 {
        self.inner.return_quantile(q)
    }

    /// (target, source) trajectory counts.
    fn tag_counts(&self) -> (usize, usize) {
        self.inner.tag_counts()
    }

    /// Trajectory i as a list of (state, action, reward, rtg) tuples.
    fn trajectory(&self, i: usize) -> PyResult<Vec<(usize, usize, f64, f64)>> {
        let traj = self
            .inner
            .trajectories()
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("trajectory index {i} out of range")))?;
        Ok(traj
            .steps
            .iter()
            .zip(&traj.rtg)
            .map(|(&(s, a, r), &g)| (s, a, r, g))
            .collect())
    }

    fn save(&self, path: &str) -> PyResult<()> {
        data::save(&self.inner, std::path::Path::new(path)).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: data::load(std::path::Path::new(path)).map_err(py_err)?.dataset,
        })
    }
}

/// Roll out a behavior policy: domain is "source" or "target".
#[pyfunction]
fn collect(mdp: &PyMdp, policy: &PyPolicy, n: usize, seed: u64, domain: &str) -> PyResult<PyDataset> {
    let tag = match domain {
        "source" => data::DomainTag::Source,
        "target" => data::DomainTag::Target,
        other => return Err(PyValueError::new_err(format!("unknown domain `{other}`"))),
    };
    Ok(PyDataset {
        inner: data::collect_tagged(&mdp.inner, &policy.inner, n, seed, tag, "policy")
            .map_err(py_err)?,
    })
}

/// Concatenate target then source with a seeded shuffle.
#[pyfunction]
fn mix(target_ds: &PyDataset, source_ds: &PyDataset, seed: u64) -> PyResult<PyDataset> {
    Ok(PyDataset {
        inner: data::mix(&target_ds.inner, &source_ds.inner, seed).map_err(py_err)?,
    })
}

/// Apply a dynamics shift: kind is transition_perturb | action_noise |
/// action_restrict | state_merge.
#[pyfunction]
fn apply_shift(target: &PyMdp, kind: &str, magnitude: f64, seed: u64) -> PyResult<PyMdp> {
    let spec = shift::ShiftSpec {
        kind: shift::ShiftKind::parse(kind).map_err(py_err)?,
        magnitude,
        seed,
    };
    Ok(PyMdp {
        inner: shift::apply_shift(&target.inner, &spec).map_err(py_err)?,
    })
}

/// Per-(s,a) total-variation distance and max abs log dynamics ratio.
#[pyfunction]
fn dynamics_gap(source: &PyMdp, target: &PyMdp) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let gap = shift::dynamics_gap(&source.inner, &target.inner).map_err(py_err)?;
    let to_rows = |a: &ndarray::Array2<f64>| {
        (0..a.nrows())
            .map(|i| a.row(i).to_vec())
            .collect::<Vec<Vec<f64>>>()
    };
    Ok((to_rows(&gap.tv), to_rows(&gap.max_log_ratio)))
}

/// Exact CDF-matching return transform using the true dynamics of both
/// domains under a shared behavior policy.
#[pyfunction]
fn augment_exact_cdf(
    ds: &PyDataset,
    source_mdp: &PyMdp,
    target_mdp: &PyMdp,
    behavior: &PyPolicy,
    seed: u64,
) -> PyResult<PyDataset> {
    let src_table = mdp::rtg_table(&source_mdp.inner, &behavior.inner).map_err(py_err)?;
    let tgt_table = mdp::rtg_table(&target_mdp.inner, &behavior.inner).map_err(py_err)?;
    let aug = augment::psi_exact_cdf(&ds.inner, &src_table, &tgt_table, seed).map_err(py_err)?;
    Ok(PyDataset {
        inner: aug.into_dataset(),
    })
}

/// Mean-variance matching with exact dynamic-programming stats.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn augment_mean_variance_exact(
    ds: &PyDataset,
    source_mdp: &PyMdp,
    target_mdp: &PyMdp,
    behavior: &PyPolicy,
    clip_lo: f64,
    clip_hi: f64,
    sigma_floor: f64,
) -> PyResult<PyDataset> {
    let src = augment::exact_dp_stats(&source_mdp.inner, &behavior.inner).map_err(py_err)?;
    let tgt = augment::exact_dp_stats(&target_mdp.inner, &behavior.inner).map_err(py_err)?;
    let clip = augment::ClipConfig {
        theta_lo: clip_lo,
        theta_hi: clip_hi,
        sigma_floor,
    };
    let aug = augment::psi_mean_variance(&ds.inner, &src, &tgt, &clip).map_err(py_err)?;
    Ok(PyDataset {
        inner: aug.into_dataset(),
    })
}

/// Classifier-based reward-correction transform: trains the (sas, sa)
/// pair on the two datasets, then relabels the source returns.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn augment_dara(
    source_ds: &PyDataset,
    target_ds: &PyDataset,
    eta: f64,
    clamp: f64,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> PyResult<PyDataset> {
    let cfg = classifiers::TrainConfig {
        lr,
        epochs,
        seed,
        ..classifiers::TrainConfig::default()
    };
    let (sas, sa) =
        classifiers::train_classifiers(&source_ds.inner, &target_ds.inner, &cfg).map_err(py_err)?;
    let support = classifiers::data_support(
        &source_ds.inner,
        &target_ds.inner,
        sas.num_states,
        sas.num_actions,
    );
    let dr = classifiers::delta_r(&sas, &sa, clamp, Some(&support)).map_err(py_err)?;
    let aug = augment::psi_dara(&source_ds.inner, &dr, eta).map_err(py_err)?;
    Ok(PyDataset {
        inner: aug.into_dataset(),
    })
}

/// Return-conditioned tabular policy.
#[pyclass(name = "RcslPolicy")]
struct PyRcslPolicy {
    inner: rcsl::TabularRcslPolicy,
}

#[pymethods]
impl PyRcslPolicy {
    fn action_probs(&self, s: usize, g: f64) -> Vec<f64> {
        self.inner.probs(s, g)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }
}

#[pyfunction]
fn fit_tabular(ds: &PyDataset, bin_width: f64, alpha: f64) -> PyResult<PyRcslPolicy> {
    let binner = rcsl::ReturnBinner::new(bin_width, 0.0).map_err(py_err)?;
    Ok(PyRcslPolicy {
        inner: rcsl::fit_tabular(&ds.inner, binner, alpha).map_err(py_err)?,
    })
}

/// Evaluate a conditioned policy: returns a dict with j_star and one row
/// per conditioning target.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    policy: &PyRcslPolicy,
    target_mdp: &PyMdp,
    f_grid: Vec<f64>,
    n_rollouts: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let report = eval::evaluate(&policy.inner, &target_mdp.inner, &f_grid, n_rollouts, seed)
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("j_star", report.j_star)?;
    let rows: Vec<Bound<'py, PyDict>> = report
        .rows
        .iter()
        .map(|row| {
            let d = PyDict::new(py);
            d.set_item("f", row.f)?;
            d.set_item("mc_mean", row.mc_mean)?;
            d.set_item("mc_se", row.mc_se)?;
            d.set_item("exact", row.exact)?;
            d.set_item("suboptimality", row.suboptimality)?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    out.set_item("rows", rows)?;
    Ok(out)
}

/// Run the full experiment matrix from a TOML config string; returns the
/// summary as a JSON string.
#[pyfunction]
fn run_experiment_toml(config: &str) -> PyResult<String> {
    let cfg = radt_core::config::ExperimentConfig::from_toml(config).map_err(py_err)?;
    let spec = cfg.matrix_spec(None).map_err(py_err)?;
    let results = eval::run_matrix(&spec);
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(c) => cells.push(c),
            Err(e) => failures.push(e),
        }
    }
    let summary = eval::summarize(&cells);
    serde_json::to_string_pretty(&serde_json::json!({
        "config_hash": cfg.hash(),
        "methods": summary,
        "failures": failures,
    }))
    .map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn radt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMdp>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyRcslPolicy>()?;
    m.add_function(wrap_pyfunction!(collect, m)?)?;
    m.add_function(wrap_pyfunction!(mix, m)?)?;
    m.add_function(wrap_pyfunction!(apply_shift, m)?)?;
    m.add_function(wrap_pyfunction!(dynamics_gap, m)?)?;
    m.add_function(wrap_pyfunction!(augment_exact_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(augment_mean_variance_exact, m)?)?;
    m.add_function(wrap_pyfunction!(augment_dara, m)?)?;
    m.add_function(wrap_pyfunction!(fit_tabular, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment_toml, m)?)?;
    m.add("__version__", radt_core::TOOL_VERSION)?;
    Ok(())
}
