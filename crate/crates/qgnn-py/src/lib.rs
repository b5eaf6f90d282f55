//! Python bindings: arithmetic, formulas, GNNs, LVP instances and the solvers.
//!
//! Values cross the boundary as decimal strings so fixed-point numbers stay
//! exact; graphs and models cross as JSON text.

use std::time::Duration;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use qgnn::arith::{Activation, ArithmeticSpec};
use qgnn::compile::compile_lvp;
use qgnn::formula;
use qgnn::gnn::{gnn_eval, GnnModel, LvpInstance};
use qgnn::graph::PointedGraph;
use qgnn::semantics::{brute_force_sat, check_formula, OracleLimits, Verdict};
use qgnn::tableau::{self, DeltaMode, Limits, LvpVerdict};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn limits(time: Option<f64>, max_nodes: Option<u64>) -> PyResult<Limits> {
    let mut l = Limits::default();
    if let Some(t) = time {
        l.time = Some(Duration::try_from_secs_f64(t).map_err(err)?);
    }
    if let Some(n) = max_nodes {
        l.max_nodes = n;
    }
    Ok(l)
}

fn verdict_dict<'py>(py: Python<'py>, v: &Verdict) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("verdict", v.label())?;
    d.set_item("model", v.model().map(PointedGraph::save_json))?;
    Ok(d)
}

#[pyclass(name = "Arithmetic", frozen)]
struct PyArithmetic {
    spec: ArithmeticSpec,
}

#[pymethods]
impl PyArithmetic {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(PyArithmetic { spec: text.parse().map_err(err)? })
    }

    #[getter]
    fn bit_width(&self) -> u32 {
        self.spec.bit_width()
    }

    #[getter]
    fn cardinality(&self) -> u64 {
        self.spec.cardinality()
    }

    /// Canonical text of a literal in this arithmetic.
    fn normalize(&self, literal: &str) -> PyResult<String> {
        Ok(self.spec.parse_value(literal).map_err(err)?.to_string())
    }

    fn add(&self, a: &str, b: &str) -> PyResult<String> {
        let (a, b) = (self.spec.parse_value(a).map_err(err)?, self.spec.parse_value(b).map_err(err)?);
        Ok(a.add(&b).map_err(err)?.to_string())
    }

    fn mul(&self, a: &str, b: &str) -> PyResult<String> {
        let (a, b) = (self.spec.parse_value(a).map_err(err)?, self.spec.parse_value(b).map_err(err)?);
        Ok(a.mul(&b).map_err(err)?.to_string())
    }

    fn activate(&self, act: &str, v: &str) -> PyResult<String> {
        let act: Activation = act.parse().map_err(err)?;
        Ok(self.spec.parse_value(v).map_err(err)?.activate(act).to_string())
    }

    fn __str__(&self) -> String {
        self.spec.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Arithmetic('{}')", self.spec)
    }
}

#[pyclass(name = "Formula", frozen)]
struct PyFormula {
    inner: formula::Formula,
}

#[pymethods]
impl PyFormula {
    #[new]
    #[pyo3(signature = (text, arith, alpha = "relu"))]
    fn new(text: &str, arith: &str, alpha: &str) -> PyResult<Self> {
        let spec: ArithmeticSpec = arith.parse().map_err(err)?;
        let alpha: Activation = alpha.parse().map_err(err)?;
        Ok(PyFormula { inner: formula::Formula::parse_with(text, spec, alpha).map_err(err)? })
    }

    #[getter]
    fn agg_depth(&self) -> usize {
        self.inner.agg_depth()
    }

    #[getter]
    fn dag_size(&self) -> usize {
        self.inner.dag_size()
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.inner.features_of().into_iter().collect()
    }

    fn rewrite_truncrelu(&self) -> Self {
        PyFormula { inner: self.inner.rewrite_truncrelu() }
    }

    /// Whether the formula holds at the point of a JSON pointed graph.
    fn check(&self, graph_json: &str) -> PyResult<bool> {
        let p = PointedGraph::load_json(graph_json, self.inner.spec()).map_err(err)?;
        check_formula(&self.inner, &p).map_err(err)
    }

    /// Tableau decision; returns `{"verdict": ..., "model": json or None}`.
    #[pyo3(signature = (delta = "unary:2", time = None, max_nodes = None))]
    fn solve<'py>(
        &self,
        py: Python<'py>,
        delta: &str,
        time: Option<f64>,
        max_nodes: Option<u64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let delta: DeltaMode = delta.parse().map_err(err)?;
        let limits = limits(time, max_nodes)?;
        let v = py.detach(|| tableau::solve(&self.inner, delta, &limits));
        verdict_dict(py, &v)
    }

    /// Exhaustive search over trees of out-degree at most `delta`.
    #[pyo3(signature = (delta, max_evaluations = None))]
    fn oracle<'py>(
        &self,
        py: Python<'py>,
        delta: usize,
        max_evaluations: Option<u64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mut l = OracleLimits::default();
        if let Some(n) = max_evaluations {
            l.max_evaluations = n;
        }
        let v = py.detach(|| brute_force_sat(&self.inner, delta, None, l));
        verdict_dict(py, &v)
    }

    fn __str__(&self) -> String {
        self.inner.print()
    }

    fn __repr__(&self) -> String {
        format!("Formula('{}')", self.inner.print())
    }
}

#[pyclass(name = "Gnn", frozen)]
struct PyGnn {
    inner: GnnModel,
}

#[pymethods]
impl PyGnn {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyGnn { inner: GnnModel::load_json(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.save_json()
    }

    #[getter]
    fn arith(&self) -> String {
        self.inner.spec.to_string()
    }

    #[getter]
    fn input_names(&self) -> Vec<String> {
        self.inner.input_names.clone()
    }

    #[getter]
    fn output_names(&self) -> Vec<String> {
        self.inner.output_names()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Outputs at the point of a JSON pointed graph, as decimal strings.
    fn eval(&self, graph_json: &str) -> PyResult<Vec<String>> {
        let p = PointedGraph::load_json(graph_json, self.inner.spec).map_err(err)?;
        let out = gnn_eval(&self.inner, &p).map_err(err)?;
        Ok(out.iter().map(ToString::to_string).collect())
    }
}

#[pyclass(name = "LvpInstance", frozen)]
struct PyLvp {
    inner: LvpInstance,
}

#[pymethods]
impl PyLvp {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyLvp { inner: LvpInstance::load_json(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.save_json()
    }

    #[getter]
    fn gnn(&self) -> PyGnn {
        PyGnn { inner: self.inner.gnn.clone() }
    }

    #[getter]
    fn delta(&self) -> String {
        self.inner.delta.to_string()
    }

    /// The compiled satisfiability formula.
    fn compile(&self) -> PyResult<PyFormula> {
        Ok(PyFormula { inner: compile_lvp(&self.inner).map_err(err)?.formula })
    }

    /// Returns `{"verdict": "valid"|"invalid"|"unknown", ...}`; invalid
    /// results carry the counterexample JSON and its outputs.
    #[pyo3(signature = (time = None, max_nodes = None))]
    fn verify<'py>(&self, py: Python<'py>, time: Option<f64>, max_nodes: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
        let limits = limits(time, max_nodes)?;
        let v = py.detach(|| tableau::verify_lvp(&self.inner, &limits)).map_err(err)?;
        let d = PyDict::new(py);
        match v {
            LvpVerdict::Valid => d.set_item("verdict", "valid")?,
            LvpVerdict::Invalid { counterexample, outputs } => {
                d.set_item("verdict", "invalid")?;
                d.set_item("counterexample", counterexample.save_json())?;
                d.set_item("outputs", outputs.iter().map(ToString::to_string).collect::<Vec<_>>())?;
            }
            LvpVerdict::Unknown(r) => {
                d.set_item("verdict", "unknown")?;
                d.set_item("reason", r.to_string())?;
            }
        }
        Ok(d)
    }
}

#[pymodule]
fn qgnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyArithmetic>()?;
    m.add_class::<PyFormula>()?;
    m.add_class::<PyGnn>()?;
    m.add_class::<PyLvp>()?;
    Ok(())
}
