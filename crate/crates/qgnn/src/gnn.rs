//! Quantized aggregate-combine GNNs, forward evaluation and LVP instances.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arith::{Activation, ArithmeticSpec, Value};
use crate::formula::AggKind;
use crate::graph::{schema_err, GraphError, LabeledGraph, NodeId, NumText, PointedGraph};
use crate::semantics::aggregate;
use crate::tableau::DeltaMode;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GnnError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("graph arithmetic {graph} differs from model arithmetic {model}")]
    SpecMismatch { graph: ArithmeticSpec, model: ArithmeticSpec },
    #[error("graph lacks input feature `{0}`")]
    MissingFeature(String),
    #[error("weighted aggregation has {weights} weights but a node has {degree} successors")]
    MissingWeights { weights: usize, degree: usize },
    #[error("unknown variable `{0}` in linear constraint")]
    UnknownVariable(String),
    #[error(transparent)]
    Schema(#[from] GraphError),
}

/// One dense layer: `act_j(sum_i w[j][i] * x_i + b_j)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FnnLayer {
    pub weights: Vec<Vec<Value>>,
    pub bias: Vec<Value>,
    pub activations: Vec<Activation>,
}

impl FnnLayer {
    pub fn input_dim(&self) -> usize {
        self.weights.first().map_or(0, |r| r.len())
    }

    pub fn output_dim(&self) -> usize {
        self.weights.len()
    }

    fn validate(&self) -> Result<(), GnnError> {
        let (o, i) = (self.output_dim(), self.input_dim());
        if o == 0 || i == 0 {
            return Err(GnnError::Dimension("empty weight matrix".into()));
        }
        if self.weights.iter().any(|r| r.len() != i) {
            return Err(GnnError::Dimension("ragged weight matrix".into()));
        }
        if self.bias.len() != o || self.activations.len() != o {
            return Err(GnnError::Dimension(format!(
                "{o} outputs but {} biases and {} activations",
                self.bias.len(),
                self.activations.len()
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.output_dim() * (self.input_dim() + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fnn {
    pub layers: Vec<FnnLayer>,
}

impl Fnn {
    pub fn new(layers: Vec<FnnLayer>) -> Result<Self, GnnError> {
        let f = Fnn { layers };
        f.validate()?;
        Ok(f)
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input_dim())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output_dim())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    fn validate(&self) -> Result<(), GnnError> {
        if self.layers.is_empty() {
            return Err(GnnError::Dimension("network without layers".into()));
        }
        for l in &self.layers {
            l.validate()?;
        }
        for w in self.layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(GnnError::Dimension(format!(
                    "hidden layer emits {} values but the next expects {}",
                    w[0].output_dim(),
                    w[1].input_dim()
                )));
            }
        }
        Ok(())
    }
}

/// Evaluates the network; products are accumulated in input order, bias last.
pub fn fnn_eval(f: &Fnn, input: &[Value]) -> Result<Vec<Value>, GnnError> {
    if input.len() != f.input_dim() {
        return Err(GnnError::Dimension(format!("network expects {} inputs, got {}", f.input_dim(), input.len())));
    }
    let Some(spec) = input.first().map(|v| v.spec()) else {
        return Err(GnnError::Dimension("empty input".into()));
    };
    let mut x: Vec<i64> = input.iter().map(|v| v.payload()).collect();
    for layer in &f.layers {
        x = fnn_layer_p(spec, layer, &x);
    }
    Ok(x.into_iter().map(|p| spec.value(p).expect("closed")).collect())
}

fn fnn_layer_p(spec: ArithmeticSpec, layer: &FnnLayer, x: &[i64]) -> Vec<i64> {
    layer
        .weights
        .iter()
        .zip(&layer.bias)
        .zip(&layer.activations)
        .map(|((row, b), act)| {
            let mut terms = row.iter().zip(x).map(|(w, xi)| spec.mul_p(w.payload(), *xi));
            let first = terms.next().expect("non-empty row");
            let acc = terms.fold(first, |acc, t| spec.add_p(acc, t));
            spec.act_p(*act, spec.add_p(acc, b.payload()))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GnnLayer {
    pub agg: AggKind,
    pub comb: Fnn,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GnnModel {
    pub spec: ArithmeticSpec,
    pub input_names: Vec<String>,
    pub layers: Vec<GnnLayer>,
    pub out: Fnn,
}

impl GnnModel {
    pub fn new(
        spec: ArithmeticSpec,
        input_names: Vec<String>,
        layers: Vec<GnnLayer>,
        out: Fnn,
    ) -> Result<Self, GnnError> {
        let m = GnnModel { spec, input_names, layers, out };
        m.validate()?;
        Ok(m)
    }

    /// Names `x1..xm`.
    pub fn default_inputs(m: usize) -> Vec<String> {
        (1..=m).map(|i| format!("x{i}")).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.input_names.len()
    }

    pub fn output_dim(&self) -> usize {
        self.out.output_dim()
    }

    /// Names `y1..yn`.
    pub fn output_names(&self) -> Vec<String> {
        (1..=self.output_dim()).map(|i| format!("y{i}")).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.comb.param_count()
                    + match &l.agg {
                        AggKind::Weighted(ws) => ws.len(),
                        _ => 0,
                    }
            })
            .sum::<usize>()
            + self.out.param_count()
    }

    fn validate(&self) -> Result<(), GnnError> {
        let mut dim = self.input_dim();
        if dim == 0 {
            return Err(GnnError::Dimension("model without inputs".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.comb.validate()?;
            if l.comb.input_dim() != 2 * dim {
                return Err(GnnError::Dimension(format!(
                    "layer {} combines {} values but receives state of dimension {dim}",
                    i + 1,
                    l.comb.input_dim()
                )));
            }
            dim = l.comb.output_dim();
        }
        self.out.validate()?;
        if self.out.input_dim() != dim {
            return Err(GnnError::Dimension(format!(
                "output network expects {} values but the final state has {dim}",
                self.out.input_dim()
            )));
        }
        let mut all = self.layers.iter().flat_map(|l| l.comb.layers.iter()).chain(&self.out.layers);
        let foreign = all.any(|l| {
            l.weights.iter().flatten().chain(&l.bias).any(|v| v.spec() != self.spec)
        });
        if foreign {
            return Err(GnnError::Dimension("parameter of a different arithmetic".into()));
        }
        Ok(())
    }

    /// Per-node states after every layer; `states[v]` is the final state.
    pub fn node_states(&self, g: &LabeledGraph) -> Result<Vec<Vec<i64>>, GnnError> {
        if g.spec() != self.spec {
            return Err(GnnError::SpecMismatch { graph: g.spec(), model: self.spec });
        }
        let idx: Vec<usize> = self
            .input_names
            .iter()
            .map(|n| g.feature_index(n).ok_or_else(|| GnnError::MissingFeature(n.clone())))
            .collect::<Result<_, _>>()?;
        let mut states: Vec<Vec<i64>> =
            g.nodes().map(|v| idx.iter().map(|&i| g.label(v)[i].payload()).collect()).collect();
        let mut buf = Vec::new();
        for layer in &self.layers {
            let dim = states.first().map_or(0, |s| s.len());
            let mut next = Vec::with_capacity(states.len());
            for v in g.nodes() {
                let succ = g.successors(v);
                if let AggKind::Weighted(ws) = &layer.agg {
                    if ws.len() < succ.len() {
                        return Err(GnnError::MissingWeights { weights: ws.len(), degree: succ.len() });
                    }
                }
                let mut input = states[v.0].clone();
                #[allow(clippy::needless_range_loop)]
                for j in 0..dim {
                    buf.clear();
                    buf.extend(succ.iter().map(|t| states[t.0][j]));
                    input.push(aggregate(self.spec, &layer.agg, &buf));
                }
                let mut x = input;
                for fl in &layer.comb.layers {
                    x = fnn_layer_p(self.spec, fl, &x);
                }
                next.push(x);
            }
            states = next;
        }
        Ok(states)
    }
}

/// Output of the model at the point of `p`.
pub fn gnn_eval(model: &GnnModel, p: &PointedGraph) -> Result<Vec<Value>, GnnError> {
    gnn_eval_at(model, &p.graph, p.point)
}

pub fn gnn_eval_at(model: &GnnModel, g: &LabeledGraph, v: NodeId) -> Result<Vec<Value>, GnnError> {
    let states = model.node_states(g)?;
    let state: Vec<Value> = states[v.0].iter().map(|p| model.spec.value(*p).expect("closed")).collect();
    fnn_eval(&model.out, &state)
}

/// `sum_i c_i * v_i >= constant`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinIneq {
    pub coeffs: Vec<(String, Value)>,
    pub constant: Value,
}

impl LinIneq {
    /// Left fold of `c_i * v_i` in coefficient order, compared with the constant.
    pub fn holds(&self, lookup: impl Fn(&str) -> Option<Value>) -> Result<bool, GnnError> {
        let spec = self.constant.spec();
        let mut acc: Option<i64> = None;
        for (name, c) in &self.coeffs {
            let v = lookup(name).ok_or_else(|| GnnError::UnknownVariable(name.clone()))?;
            let t = spec.mul_p(c.payload(), v.payload());
            acc = Some(acc.map_or(t, |a| spec.add_p(a, t)));
        }
        Ok(acc.unwrap_or(0) >= self.constant.payload())
    }
}

impl fmt::Display for LinIneq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeffs.is_empty() {
            f.write_str("0")?;
        }
        for (i, (n, c)) in self.coeffs.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            write!(f, "{c}*{n}")?;
        }
        write!(f, " >= {}", self.constant)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LvpInstance {
    pub gnn: GnnModel,
    pub l_in: Vec<LinIneq>,
    pub l_out: Vec<LinIneq>,
    pub delta: DeltaMode,
}

impl LvpInstance {
    pub fn new(gnn: GnnModel, l_in: Vec<LinIneq>, l_out: Vec<LinIneq>, delta: DeltaMode) -> Result<Self, GnnError> {
        let outs = gnn.output_names();
        for c in &l_in {
            if let Some((n, _)) = c.coeffs.iter().find(|(n, _)| !gnn.input_names.contains(n)) {
                return Err(GnnError::UnknownVariable(n.clone()));
            }
        }
        for c in &l_out {
            if let Some((n, _)) = c.coeffs.iter().find(|(n, _)| !outs.contains(n)) {
                return Err(GnnError::UnknownVariable(n.clone()));
            }
        }
        Ok(LvpInstance { gnn, l_in, l_out, delta })
    }

    /// L_in at the point.
    pub fn input_holds(&self, p: &PointedGraph) -> Result<bool, GnnError> {
        let g = &p.graph;
        for c in &self.l_in {
            if !c.holds(|n| g.label_of(p.point, n))? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// L_out on an output vector.
    pub fn output_holds(&self, outputs: &[Value]) -> Result<bool, GnnError> {
        let names = self.gnn.output_names();
        let lookup = |n: &str| names.iter().position(|m| m == n).map(|i| outputs[i]);
        for c in &self.l_out {
            if !c.holds(lookup)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Searches every tree of the given depth and arity for a violation of the
/// instance: L_in holds at the root but L_out fails on the output. Returns
/// `None` when the enumeration would exceed `max_trees`.
pub fn exhaustive_violation(
    inst: &LvpInstance,
    depth: usize,
    max_arity: usize,
    max_trees: u64,
) -> Option<Result<Option<PointedGraph>, GnnError>> {
    let spec = inst.gnn.spec;
    let m = inst.gnn.input_dim();
    let labels = (spec.cardinality() as u128).checked_pow(m as u32)?;
    let mut count = labels;
    for _ in 0..depth {
        let seqs: u128 = (0..=max_arity as u32).map(|k| count.saturating_pow(k)).fold(0u128, |a, b| a.saturating_add(b));
        count = labels.saturating_mul(seqs);
    }
    if count > max_trees as u128 {
        return None;
    }
    let all_labels: Vec<Vec<i64>> = {
        let mut out = vec![vec![]];
        for _ in 0..m {
            out = out
                .into_iter()
                .flat_map(|p: Vec<i64>| {
                    (-spec.max_payload()..=spec.max_payload()).map(move |x| {
                        let mut q = p.clone();
                        q.push(x);
                        q
                    })
                })
                .collect();
        }
        out
    };
    // trees[d] = all trees of height <= d as (label, children indices into trees[d-1])
    let mut levels: Vec<Vec<(usize, Vec<usize>)>> = vec![(0..all_labels.len()).map(|l| (l, vec![])).collect()];
    for d in 1..=depth {
        let below = levels[d - 1].len();
        let mut trees = Vec::new();
        for l in 0..all_labels.len() {
            for k in 0..=max_arity {
                let mut seq = vec![0usize; k];
                loop {
                    trees.push((l, seq.clone()));
                    if k == 0 || !crate::semantics::next_seq(&mut seq, below) {
                        break;
                    }
                }
            }
        }
        levels.push(trees);
    }
    for t in 0..levels[depth].len() {
        let p = materialize(inst, &all_labels, &levels, depth, t);
        let outcome = (|| -> Result<Option<PointedGraph>, GnnError> {
            if !inst.input_holds(&p)? {
                return Ok(None);
            }
            let out = gnn_eval(&inst.gnn, &p)?;
            Ok((!inst.output_holds(&out)?).then_some(p))
        })();
        match outcome {
            Ok(None) => {}
            other => return Some(other),
        }
    }
    Some(Ok(None))
}

fn materialize(
    inst: &LvpInstance,
    labels: &[Vec<i64>],
    levels: &[Vec<(usize, Vec<usize>)>],
    depth: usize,
    tree: usize,
) -> PointedGraph {
    let spec = inst.gnn.spec;
    let mut g = LabeledGraph::new(spec, inst.gnn.input_names.clone());
    #[allow(clippy::too_many_arguments)]
    fn go(
        g: &mut LabeledGraph,
        spec: ArithmeticSpec,
        names: &[String],
        labels: &[Vec<i64>],
        levels: &[Vec<(usize, Vec<usize>)>],
        d: usize,
        t: usize,
        word: String,
    ) -> NodeId {
        let (l, children) = &levels[d][t];
        let v = g.add_node(&word).expect("fresh");
        for (n, x) in names.iter().zip(&labels[*l]) {
            g.set_label(v, n, spec.value(*x).expect("in range")).expect("declared");
        }
        for (i, c) in children.iter().enumerate() {
            let w = if word == "ε" { format!("{}", i + 1) } else { format!("{word}.{}", i + 1) };
            let cv = go(g, spec, names, labels, levels, d - 1, *c, w);
            g.add_edge(v, cv).expect("tree edge");
        }
        v
    }
    let names = inst.gnn.input_names.clone();
    let root = go(&mut g, spec, &names, labels, levels, depth, tree, "ε".into());
    PointedGraph::new(g, root)
}

// --------------------------------------------------------------------- JSON

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ActivationDoc {
    One(String),
    PerOutput(Vec<String>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FnnLayerDoc {
    pub weights: Vec<Vec<NumText>>,
    pub bias: Vec<NumText>,
    pub activation: ActivationDoc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FnnDoc {
    Single(FnnLayerDoc),
    Stack(Vec<FnnLayerDoc>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AggDoc {
    Named(String),
    Weighted { weighted: Vec<NumText> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnnLayerDoc {
    pub agg: AggDoc,
    pub comb: FnnDoc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnnDoc {
    pub arith: String,
    pub input_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_names: Option<Vec<String>>,
    pub layers: Vec<GnnLayerDoc>,
    pub out: FnnDoc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinIneqDoc {
    pub coeffs: serde_json::Map<String, serde_json::Value>,
    #[serde(rename = "const")]
    pub constant: NumText,
    pub rel: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaDoc {
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LvpDoc {
    pub gnn: GnnDoc,
    #[serde(default)]
    pub l_in: Vec<LinIneqDoc>,
    #[serde(default)]
    pub l_out: Vec<LinIneqDoc>,
    pub delta: DeltaDoc,
}

fn fnn_from_doc(doc: &FnnDoc, spec: ArithmeticSpec, path: &str) -> Result<Fnn, GnnError> {
    let docs: Vec<&FnnLayerDoc> = match doc {
        FnnDoc::Single(l) => vec![l],
        FnnDoc::Stack(ls) => ls.iter().collect(),
    };
    let mut layers = Vec::new();
    for (li, l) in docs.iter().enumerate() {
        let lp = if docs.len() == 1 { path.to_string() } else { format!("{path}[{li}]") };
        let weights = l
            .weights
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row.iter()
                    .enumerate()
                    .map(|(c, x)| x.parse(spec, &format!("{lp}.weights[{r}][{c}]")))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let bias = l
            .bias
            .iter()
            .enumerate()
            .map(|(i, x)| x.parse(spec, &format!("{lp}.bias[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let parse_act = |s: &str, p: String| s.parse::<Activation>().map_err(|e| schema_err(p, e.to_string()));
        let activations = match &l.activation {
            ActivationDoc::One(s) => vec![parse_act(s, format!("{lp}.activation"))?; weights.len()],
            ActivationDoc::PerOutput(v) => v
                .iter()
                .enumerate()
                .map(|(i, s)| parse_act(s, format!("{lp}.activation[{i}]")))
                .collect::<Result<Vec<_>, _>>()?,
        };
        let layer = FnnLayer { weights, bias, activations };
        layer.validate().map_err(|e| schema_err(&lp, e.to_string()))?;
        layers.push(layer);
    }
    Fnn::new(layers).map_err(|e| schema_err(path, e.to_string()).into())
}

fn fnn_to_doc(f: &Fnn) -> FnnDoc {
    let docs: Vec<FnnLayerDoc> = f
        .layers
        .iter()
        .map(|l| FnnLayerDoc {
            weights: l.weights.iter().map(|r| r.iter().map(|w| NumText::of(*w)).collect()).collect(),
            bias: l.bias.iter().map(|b| NumText::of(*b)).collect(),
            activation: ActivationDoc::PerOutput(l.activations.iter().map(|a| a.name().to_string()).collect()),
        })
        .collect();
    if docs.len() == 1 {
        FnnDoc::Single(docs.into_iter().next().expect("one layer"))
    } else {
        FnnDoc::Stack(docs)
    }
}

impl GnnModel {
    pub fn from_doc(doc: &GnnDoc) -> Result<Self, GnnError> {
        let spec: ArithmeticSpec = doc.arith.parse().map_err(|e: crate::arith::ArithError| schema_err("arith", e.to_string()))?;
        let input_names = match &doc.input_names {
            Some(n) if n.len() != doc.input_dim => {
                return Err(schema_err("input_names", "length differs from input_dim").into())
            }
            Some(n) => n.clone(),
            None => Self::default_inputs(doc.input_dim),
        };
        let mut layers = Vec::new();
        for (i, l) in doc.layers.iter().enumerate() {
            let agg = match &l.agg {
                AggDoc::Named(s) => match s.as_str() {
                    "sum" => AggKind::Sum,
                    "mean" => AggKind::Mean,
                    "max" => AggKind::Max,
                    other => {
                        return Err(schema_err(format!("layers[{i}].agg"), format!("unknown aggregation `{other}`")).into())
                    }
                },
                AggDoc::Weighted { weighted } => AggKind::Weighted(
                    weighted
                        .iter()
                        .enumerate()
                        .map(|(j, w)| w.parse(spec, &format!("layers[{i}].agg.weighted[{j}]")))
                        .collect::<Result<_, _>>()?,
                ),
            };
            let comb = fnn_from_doc(&l.comb, spec, &format!("layers[{i}].comb"))?;
            layers.push(GnnLayer { agg, comb });
        }
        let out = fnn_from_doc(&doc.out, spec, "out")?;
        GnnModel::new(spec, input_names, layers, out).map_err(|e| match e {
            GnnError::Dimension(msg) => schema_err("layers", msg).into(),
            other => other,
        })
    }

    pub fn to_doc(&self) -> GnnDoc {
        let default = Self::default_inputs(self.input_dim());
        GnnDoc {
            arith: self.spec.to_string(),
            input_dim: self.input_dim(),
            input_names: (self.input_names != default).then(|| self.input_names.clone()),
            layers: self
                .layers
                .iter()
                .map(|l| GnnLayerDoc {
                    agg: match &l.agg {
                        AggKind::Sum => AggDoc::Named("sum".into()),
                        AggKind::Mean => AggDoc::Named("mean".into()),
                        AggKind::Max => AggDoc::Named("max".into()),
                        AggKind::Weighted(ws) => {
                            AggDoc::Weighted { weighted: ws.iter().map(|w| NumText::of(*w)).collect() }
                        }
                    },
                    comb: fnn_to_doc(&l.comb),
                })
                .collect(),
            out: fnn_to_doc(&self.out),
        }
    }

    pub fn load_json(text: &str) -> Result<Self, GnnError> {
        let doc: GnnDoc = serde_json::from_str(text).map_err(|e| schema_err("$", e.to_string()))?;
        Self::from_doc(&doc)
    }

    pub fn save_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("model documents serialize")
    }
}

fn ineq_from_doc(doc: &LinIneqDoc, spec: ArithmeticSpec, path: &str) -> Result<LinIneq, GnnError> {
    if doc.rel != ">=" {
        return Err(schema_err(format!("{path}.rel"), format!("unsupported relation `{}`", doc.rel)).into());
    }
    let mut coeffs = Vec::new();
    for (name, raw) in &doc.coeffs {
        let p = format!("{path}.coeffs.{name}");
        let num: NumText = serde_json::from_value(raw.clone()).map_err(|e| schema_err(&p, e.to_string()))?;
        coeffs.push((name.clone(), num.parse(spec, &p)?));
    }
    Ok(LinIneq { coeffs, constant: doc.constant.parse(spec, &format!("{path}.const"))? })
}

fn ineq_to_doc(c: &LinIneq) -> LinIneqDoc {
    LinIneqDoc {
        coeffs: c.coeffs.iter().map(|(n, v)| (n.clone(), serde_json::Value::String(v.to_string()))).collect(),
        constant: NumText::of(c.constant),
        rel: ">=".into(),
    }
}

impl LvpInstance {
    pub fn from_doc(doc: &LvpDoc) -> Result<Self, GnnError> {
        let gnn = GnnModel::from_doc(&doc.gnn)?;
        let spec = gnn.spec;
        let l_in = doc
            .l_in
            .iter()
            .enumerate()
            .map(|(i, c)| ineq_from_doc(c, spec, &format!("l_in[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let l_out = doc
            .l_out
            .iter()
            .enumerate()
            .map(|(i, c)| ineq_from_doc(c, spec, &format!("l_out[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let delta = DeltaMode::from_parts(&doc.delta.mode, doc.delta.value).map_err(|m| schema_err("delta", m))?;
        LvpInstance::new(gnn, l_in, l_out, delta)
    }

    pub fn to_doc(&self) -> LvpDoc {
        let (mode, value) = self.delta.to_parts();
        LvpDoc {
            gnn: self.gnn.to_doc(),
            l_in: self.l_in.iter().map(ineq_to_doc).collect(),
            l_out: self.l_out.iter().map(ineq_to_doc).collect(),
            delta: DeltaDoc { mode: mode.to_string(), value },
        }
    }

    pub fn load_json(text: &str) -> Result<Self, GnnError> {
        let doc: LvpDoc = serde_json::from_str(text).map_err(|e| schema_err("$", e.to_string()))?;
        Self::from_doc(&doc)
    }

    pub fn save_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("instance documents serialize")
    }
}
