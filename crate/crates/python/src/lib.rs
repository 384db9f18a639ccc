//! Python bindings: maps, models, streaming prediction and the dataset,
//! training and evaluation pipeline.

use std::path::PathBuf;

use openintent_cli::commands::{self, EvalArgs, TrainArgs};
use openintent_cli::{CliError, Log, RunConfig};
use openintent_core::features::extract_frame;
use openintent_core::map::{project_to_lane, IntersectionMap, Pose};
use openintent_core::model::{IntentModel, MapTopology, ModelConfig, ModelState, Prediction, Variant};
use openintent_core::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Divergence(_) | Error::NoTape | Error::NoRunningStats => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn cli_to_py(e: CliError) -> PyErr {
    match e {
        CliError::Core(e) => to_py(e),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_loads<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn run_config(config: Option<&str>, seed: Option<u64>) -> PyResult<RunConfig> {
    let mut cfg = match config {
        Some(text) => RunConfig::from_json(text).map_err(to_py)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn variant(name: &str) -> PyResult<Variant> {
    Variant::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown variant {name:?}")))
}

fn pose(p: (f64, f64, f64, f64)) -> PyResult<Pose> {
    let pose = Pose::new(p.0, p.1, p.2, p.3);
    if !pose.is_finite() {
        return Err(PyValueError::new_err(format!("non-finite pose {p:?}")));
    }
    Ok(pose)
}

fn prediction_dict<'py>(py: Python<'py>, p: &Prediction, map: &IntersectionMap) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("alpha", &p.alpha)?;
    d.set_item("beta", &p.beta)?;
    d.set_item("goal_probs", &p.goal_probs)?;
    d.set_item("lane", p.pred_lane().map(|i| map.lanes[i].id.clone()))?;
    d.set_item("exit", map.exits[p.pred_exit()].id.clone())?;
    Ok(d)
}

/// An intersection: exits and the virtual lanes that reach them.
#[pyclass(name = "Map", frozen)]
struct PyMap {
    inner: IntersectionMap,
}

#[pymethods]
impl PyMap {
    /// Parses and validates a map document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: IntersectionMap::from_json(text).map_err(to_py)?,
        })
    }

    /// Reads a map file. Single-exit maps are accepted for inference.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: openintent_core::dataset::read_map_for_inference(&path).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn lane_ids(&self) -> Vec<String> {
        self.inner.lanes.iter().map(|l| l.id.clone()).collect()
    }

    #[getter]
    fn exit_ids(&self) -> Vec<String> {
        self.inner.exits.iter().map(|e| e.id.clone()).collect()
    }

    /// `(s, d, heading_rel)` of a pose relative to lane `lane`.
    fn project(&self, lane: usize, x: f64, y: f64, heading: f64) -> PyResult<(f64, f64, f64)> {
        let l = self
            .inner
            .lanes
            .get(lane)
            .ok_or_else(|| PyValueError::new_err(format!("lane index {lane} out of range")))?;
        let c = project_to_lane(&pose((x, y, heading, 0.0))?, l).map_err(to_py)?;
        Ok((c.s, c.d, c.heading_rel))
    }

    fn __repr__(&self) -> String {
        format!(
            "Map(id={:?}, exits={}, lanes={})",
            self.inner.id,
            self.inner.exits.len(),
            self.inner.lanes.len()
        )
    }
}

/// The intention network.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: IntentModel,
}

#[pymethods]
impl PyModel {
    /// Fresh weights; `config` is a model-config JSON document.
    #[new]
    #[pyo3(signature = (config=None, seed=0, variant=None))]
    fn new(config: Option<&str>, seed: u64, variant: Option<&str>) -> PyResult<Self> {
        let mut cfg = match config {
            Some(text) => ModelConfig::from_json(text).map_err(to_py)?,
            None => ModelConfig::default(),
        };
        if let Some(v) = variant {
            cfg = cfg.with_variant(self::variant(v)?);
        }
        Ok(Self {
            inner: IntentModel::new(cfg, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: IntentModel::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.config.variant.name()
    }

    #[getter]
    fn config(&self) -> String {
        self.inner.config.to_json()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.params.num_scalars()
    }

    /// Per-frame predictions for a trajectory of `(x, y, heading, t)` poses.
    fn predict<'py>(
        &self,
        py: Python<'py>,
        map: &PyMap,
        poses: Vec<(f64, f64, f64, f64)>,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let poses = poses.into_iter().map(pose).collect::<PyResult<Vec<_>>>()?;
        let frames = openintent_core::features::extract_sequence(&poses, &map.inner).map_err(to_py)?;
        let preds = self.inner.predict_sequence(&map.inner, &frames).map_err(to_py)?;
        preds.iter().map(|p| prediction_dict(py, p, &map.inner)).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(variant={:?}, parameters={})",
            self.inner.config.variant.name(),
            self.inner.params.num_scalars()
        )
    }
}

/// Online prediction for one vehicle at one intersection, one pose at a time.
#[pyclass(name = "Tracker")]
struct PyTracker {
    model: Py<PyModel>,
    map: IntersectionMap,
    topo: MapTopology,
    state: ModelState,
    poses: Vec<Pose>,
}

#[pymethods]
impl PyTracker {
    #[new]
    fn new(model: Bound<'_, PyModel>, map: &PyMap) -> PyResult<Self> {
        let topo = MapTopology::from_map(&map.inner).map_err(to_py)?;
        let state = model.get().inner.init_state(&topo);
        Ok(Self {
            model: model.unbind(),
            map: map.inner.clone(),
            topo,
            state,
            poses: Vec::new(),
        })
    }

    /// Consumes the next pose and returns that frame's prediction.
    fn step<'py>(&mut self, py: Python<'py>, x: f64, y: f64, heading: f64, t: f64) -> PyResult<Bound<'py, PyDict>> {
        let p = pose((x, y, heading, t))?;
        if self.poses.len() == 2 {
            self.poses.remove(0);
        }
        self.poses.push(p);
        let frame = extract_frame(&self.poses, self.poses.len() - 1, &self.map).map_err(to_py)?;
        let model = self.model.get();
        let (pred, next, _) = model.inner.step(&self.topo, &self.state, &frame).map_err(to_py)?;
        self.state = next;
        prediction_dict(py, &pred, &self.map)
    }

    /// Forgets the trajectory so far.
    fn reset(&mut self) {
        self.state = self.model.get().inner.init_state(&self.topo);
        self.poses.clear();
    }
}

/// Writes a synthetic dataset to `out` and returns its summary.
#[pyfunction]
#[pyo3(signature = (out, config=None, seed=None))]
fn generate<'py>(py: Python<'py>, out: PathBuf, config: Option<&str>, seed: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = run_config(config, seed)?;
    let summary = py
        .detach(|| commands::cmd_gen(&cfg, &out, Log::default()))
        .map_err(to_py)?;
    json_loads(py, &summary)
}

/// Trains on a generated dataset, writes the best weights to `out` and
/// returns the per-epoch history.
#[pyfunction]
#[pyo3(signature = (data, out, config=None, variant=None, seed=None))]
fn train<'py>(
    py: Python<'py>,
    data: PathBuf,
    out: PathBuf,
    config: Option<&str>,
    variant: Option<&str>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = run_config(config, seed)?;
    let variant = variant.map(self::variant).transpose()?;
    let args = TrainArgs {
        data: &data,
        out: &out,
        history: None,
        variant,
    };
    let outcome = py.detach(|| commands::cmd_train(&cfg, &args, Log::default())).map_err(to_py)?;
    let history: Vec<String> = outcome
        .history
        .iter()
        .map(|r| serde_json::to_string(r).expect("epoch record serialises"))
        .collect();
    json_loads(py, &format!("[{}]", history.join(",")))
}

/// Evaluates weights, a baseline (`"knn"` or `"mlp"`) or the label oracle
/// (`weights=None, baseline=None`) on a split and returns the report.
#[pyfunction]
#[pyo3(signature = (data, weights=None, split="test", baseline=None, config=None, threads=1))]
fn evaluate<'py>(
    py: Python<'py>,
    data: PathBuf,
    weights: Option<PathBuf>,
    split: &str,
    baseline: Option<&str>,
    config: Option<&str>,
    threads: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = run_config(config, None)?;
    let baseline = match baseline {
        None => None,
        Some("knn") => Some(commands::Baseline::Knn),
        Some("mlp") => Some(commands::Baseline::Mlp),
        Some(other) => return Err(PyValueError::new_err(format!("unknown baseline {other:?}"))),
    };
    let args = EvalArgs {
        data: &data,
        weights: weights.as_deref(),
        check_config: config.is_some(),
        split,
        seen: None,
        oracle: weights.is_none() && baseline.is_none(),
        baseline,
        self_check: true,
        timing: false,
        threads: threads.max(1),
    };
    let report = py
        .detach(|| commands::cmd_eval(&cfg, &args, Log::default()))
        .map_err(cli_to_py)?;
    json_loads(py, &report.to_json())
}

#[pymodule]
fn openintent(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMap>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTracker>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("VARIANTS", Variant::ALL.iter().map(|v| v.name()).collect::<Vec<_>>())?;
    Ok(())
}
