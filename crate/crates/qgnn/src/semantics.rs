//! Direct evaluation on pointed graphs and an exhaustive satisfiability oracle.

use std::fmt;

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::arith::{ArithmeticSpec, Value};
use crate::formula::{reachable, AggKind, Arena, ExprId, ExprNode, FeatureId, Formula, FormulaId, FormulaNode};
use crate::graph::{LabeledGraph, NodeId, PointedGraph};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SemanticsError {
    #[error("feature `{0}` is not declared in the graph")]
    UndeclaredFeature(String),
    #[error("weighted aggregation has {weights} weights but node `{node}` has {degree} successors")]
    MissingWeights { node: String, weights: usize, degree: usize },
    #[error("graph arithmetic {graph} differs from formula arithmetic {formula}")]
    SpecMismatch { graph: ArithmeticSpec, formula: ArithmeticSpec },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnknownReason {
    Timeout,
    NodeLimit,
    DepthLimit,
}

impl fmt::Display for UnknownReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnknownReason::Timeout => "timeout",
            UnknownReason::NodeLimit => "node-limit",
            UnknownReason::DepthLimit => "depth-limit",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Sat(PointedGraph),
    Unsat,
    Unknown(UnknownReason),
}

impl Verdict {
    pub fn is_sat(&self) -> bool {
        matches!(self, Verdict::Sat(_))
    }

    pub fn is_unsat(&self) -> bool {
        matches!(self, Verdict::Unsat)
    }

    pub fn model(&self) -> Option<&PointedGraph> {
        match self {
            Verdict::Sat(m) => Some(m),
            _ => None,
        }
    }

    /// `Some(true)` for Sat, `Some(false)` for Unsat.
    pub fn decided(&self) -> Option<bool> {
        match self {
            Verdict::Sat(_) => Some(true),
            Verdict::Unsat => Some(false),
            Verdict::Unknown(_) => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Verdict::Sat(_) => "sat".into(),
            Verdict::Unsat => "unsat".into(),
            Verdict::Unknown(r) => format!("unknown ({r})"),
        }
    }
}

/// Memoizing evaluator of one arena on one graph.
pub struct Evaluator<'a> {
    arena: &'a Arena,
    graph: &'a LabeledGraph,
    feature_map: Vec<Option<usize>>,
    memo: FxHashMap<(NodeId, ExprId), Value>,
}

impl<'a> Evaluator<'a> {
    pub fn new(arena: &'a Arena, graph: &'a LabeledGraph) -> Result<Self, SemanticsError> {
        if arena.spec() != graph.spec() {
            return Err(SemanticsError::SpecMismatch { graph: graph.spec(), formula: arena.spec() });
        }
        let feature_map = arena.features().iter().map(|f| graph.feature_index(f)).collect();
        Ok(Evaluator { arena, graph, feature_map, memo: FxHashMap::default() })
    }

    pub fn eval(&mut self, u: NodeId, e: ExprId) -> Result<Value, SemanticsError> {
        if let Some(v) = self.memo.get(&(u, e)) {
            return Ok(*v);
        }
        let spec = self.arena.spec();
        let v = match self.arena.expr(e) {
            ExprNode::Const(c) => *c,
            ExprNode::Feature(f) => {
                let i = self.feature_map[f.index()]
                    .ok_or_else(|| SemanticsError::UndeclaredFeature(self.arena.feature_name(*f).to_string()))?;
                self.graph.label(u)[i]
            }
            ExprNode::Act(a, c) => self.eval(u, *c)?.activate(*a),
            ExprNode::Sum(a, b) => {
                let (x, y) = (self.eval(u, *a)?, self.eval(u, *b)?);
                spec.value(spec.add_p(x.payload(), y.payload())).expect("closed")
            }
            ExprNode::Scale(c, a) => {
                let x = self.eval(u, *a)?;
                spec.value(spec.mul_p(c.payload(), x.payload())).expect("closed")
            }
            ExprNode::Agg(kind, c) => {
                let succ = self.graph.successors(u);
                let mut vals = Vec::with_capacity(succ.len());
                for &t in succ {
                    vals.push(self.eval(t, *c)?.payload());
                }
                if let AggKind::Weighted(ws) = kind {
                    if ws.len() < vals.len() {
                        return Err(SemanticsError::MissingWeights {
                            node: self.graph.name(u).to_string(),
                            weights: ws.len(),
                            degree: vals.len(),
                        });
                    }
                }
                spec.value(aggregate(spec, kind, &vals)).expect("closed")
            }
        };
        self.memo.insert((u, e), v);
        Ok(v)
    }

    pub fn check(&mut self, u: NodeId, f: FormulaId) -> Result<bool, SemanticsError> {
        Ok(match *self.arena.formula(f) {
            FormulaNode::Geq(e, k) => self.eval(u, e)?.payload() >= k.payload(),
            FormulaNode::Eq(e, k) => self.eval(u, e)?.payload() == k.payload(),
            FormulaNode::Not(a) => !self.check(u, a)?,
            FormulaNode::And(a, b) => self.check(u, a)? && self.check(u, b)?,
            FormulaNode::Or(a, b) => self.check(u, a)? || self.check(u, b)?,
        })
    }
}

/// Folds successor values in order; empty folds give 0, mean divides by the count.
pub fn aggregate(spec: ArithmeticSpec, kind: &AggKind, vals: &[i64]) -> i64 {
    match kind {
        AggKind::Sum => vals.iter().fold(0, |acc, &v| spec.add_p(acc, v)),
        AggKind::Mean if vals.is_empty() => 0,
        AggKind::Mean => {
            let s = vals.iter().fold(0, |acc, &v| spec.add_p(acc, v));
            spec.div_p(s, vals.len() as u64)
        }
        AggKind::Max => vals.iter().copied().max().unwrap_or(0),
        AggKind::Weighted(ws) => {
            vals.iter().zip(ws).fold(0, |acc, (&v, w)| spec.add_p(acc, spec.mul_p(w.payload(), v)))
        }
    }
}

pub fn eval_expr(arena: &Arena, g: &LabeledGraph, u: NodeId, e: ExprId) -> Result<Value, SemanticsError> {
    Evaluator::new(arena, g)?.eval(u, e)
}

pub fn check(arena: &Arena, g: &LabeledGraph, u: NodeId, f: FormulaId) -> Result<bool, SemanticsError> {
    Evaluator::new(arena, g)?.check(u, f)
}

/// `G, point |= formula`
pub fn check_formula(f: &Formula, p: &PointedGraph) -> Result<bool, SemanticsError> {
    check(&f.arena, &p.graph, p.point, f.root)
}

// ------------------------------------------------------------------- oracle

#[derive(Clone, Copy, Debug)]
pub struct OracleLimits {
    /// Cap on node evaluations, checked before and during enumeration.
    pub max_evaluations: u64,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits { max_evaluations: 20_000_000 }
    }
}

/// Expressions evaluated at one tree depth.
struct Level {
    exprs: Vec<ExprId>,
    features: Vec<FeatureId>,
    /// Aggregation operands read by the level above, in slot order.
    operands: Vec<ExprId>,
}

fn levels(arena: &Arena, root: FormulaId, depth: usize) -> Vec<Level> {
    let closure = |starts: Vec<ExprId>| -> Vec<ExprId> {
        let mut seen = vec![false; arena.expr_count()];
        let mut stack = starts;
        while let Some(e) = stack.pop() {
            if std::mem::replace(&mut seen[e.index()], true) {
                continue;
            }
            if !matches!(arena.expr(e), ExprNode::Agg(..)) {
                stack.extend(arena.expr(e).children());
            }
        }
        (0..seen.len()).filter(|&i| seen[i]).map(|i| ExprId(i as u32)).collect()
    };
    let (fs, _) = reachable(arena, root);
    let atoms: Vec<ExprId> = fs
        .iter()
        .filter_map(|f| match *arena.formula(*f) {
            FormulaNode::Geq(e, _) | FormulaNode::Eq(e, _) => Some(e),
            _ => None,
        })
        .collect();
    let mut out = Vec::new();
    let mut current = closure(atoms);
    for d in 0..=depth {
        let features = current
            .iter()
            .filter_map(|e| match arena.expr(*e) {
                ExprNode::Feature(f) => Some(*f),
                _ => None,
            })
            .collect();
        let mut operands: Vec<ExprId> = Vec::new();
        if d < depth {
            operands.extend(current.iter().filter_map(|e| match arena.expr(*e) {
                ExprNode::Agg(_, c) => Some(*c),
                _ => None,
            }));
            operands.sort();
            operands.dedup();
        }
        let next = closure(operands.clone());
        out.push(Level { exprs: current, features, operands });
        current = next;
    }
    out
}

/// A node with more successors than weights has no defined value, so the
/// weighted aggregations evaluated at a depth bound its out-degree.
fn weight_cap(arena: &Arena, exprs: &[ExprId]) -> usize {
    exprs
        .iter()
        .filter_map(|e| match arena.expr(*e) {
            ExprNode::Agg(AggKind::Weighted(ws), _) => Some(ws.len()),
            _ => None,
        })
        .min()
        .unwrap_or(usize::MAX)
}

/// Out-degree bound per tree depth imposed by weighted aggregations.
pub(crate) fn weight_caps(arena: &Arena, root: FormulaId, depth: usize) -> Vec<usize> {
    levels(arena, root, depth).iter().map(|l| weight_cap(arena, &l.exprs)).collect()
}

struct Witness {
    label: Vec<i64>,
    children: Vec<usize>,
}

struct LevelResult {
    sigs: Vec<Vec<i64>>,
    witnesses: Vec<Witness>,
}

#[allow(clippy::too_many_arguments)]
fn eval_node(
    spec: ArithmeticSpec,
    arena: &Arena,
    level: &Level,
    slots: &mut [i64],
    slot_of: &[usize],
    label: &[i64],
    feature_slot: &[usize],
    child_sigs: &[&[i64]],
    child_operand_slot: &[usize],
) {
    let mut buf: Vec<i64> = Vec::with_capacity(child_sigs.len());
    for &e in &level.exprs {
        let v = match arena.expr(e) {
            ExprNode::Const(c) => c.payload(),
            ExprNode::Feature(f) => label[feature_slot[f.index()]],
            ExprNode::Act(a, c) => spec.act_p(*a, slots[slot_of[c.index()]]),
            ExprNode::Sum(a, b) => spec.add_p(slots[slot_of[a.index()]], slots[slot_of[b.index()]]),
            ExprNode::Scale(c, a) => spec.mul_p(c.payload(), slots[slot_of[a.index()]]),
            ExprNode::Agg(kind, c) => {
                buf.clear();
                let j = child_operand_slot[c.index()];
                buf.extend(child_sigs.iter().map(|s| s[j]));
                aggregate(spec, kind, &buf)
            }
        };
        slots[slot_of[e.index()]] = v;
    }
}

fn truth(arena: &Arena, f: FormulaId, slots: &[i64], slot_of: &[usize]) -> bool {
    match *arena.formula(f) {
        FormulaNode::Geq(e, k) => slots[slot_of[e.index()]] >= k.payload(),
        FormulaNode::Eq(e, k) => slots[slot_of[e.index()]] == k.payload(),
        FormulaNode::Not(a) => !truth(arena, a, slots, slot_of),
        FormulaNode::And(a, b) => truth(arena, a, slots, slot_of) && truth(arena, b, slots, slot_of),
        FormulaNode::Or(a, b) => truth(arena, a, slots, slot_of) || truth(arena, b, slots, slot_of),
    }
}

/// Odometer over child sequences of length `k` drawn from `n` items.
pub(crate) fn next_seq(seq: &mut [usize], n: usize) -> bool {
    for i in (0..seq.len()).rev() {
        seq[i] += 1;
        if seq[i] < n {
            return true;
        }
        seq[i] = 0;
    }
    false
}

/// Exhaustive satisfiability check over trees of bounded depth and arity.
///
/// Trees are enumerated level by level from the leaves up; children are
/// identified by the values of the aggregation operands their parent reads,
/// so equivalent subtrees are enumerated once. Every label over the features
/// used at a level and every child sequence of length `<= delta` is tried.
pub fn brute_force_sat(f: &Formula, delta: usize, depth: Option<usize>, limits: OracleLimits) -> Verdict {
    let arena = &f.arena;
    let spec = arena.spec();
    let depth = depth.unwrap_or_else(|| f.agg_depth());
    let lv = levels(arena, f.root, depth);
    let n_values = spec.cardinality();

    let mut slot_of = vec![usize::MAX; arena.expr_count()];
    let mut feature_slot = vec![usize::MAX; arena.features().len()];
    let mut budget = limits.max_evaluations;
    let mut results: Vec<LevelResult> = Vec::with_capacity(lv.len());

    for d in (0..lv.len()).rev() {
        let level = &lv[d];
        for (i, e) in level.exprs.iter().enumerate() {
            slot_of[e.index()] = i;
        }
        for (i, fe) in level.features.iter().enumerate() {
            feature_slot[fe.index()] = i;
        }
        let (child_sigs, child_operand_slot): (Vec<&[i64]>, Vec<usize>) = match results.last() {
            Some(r) if d + 1 < lv.len() => {
                let mut map = vec![usize::MAX; arena.expr_count()];
                for (j, e) in level.operands.iter().enumerate() {
                    map[e.index()] = j;
                }
                (r.sigs.iter().map(|s| s.as_slice()).collect(), map)
            }
            _ => (Vec::new(), vec![usize::MAX; arena.expr_count()]),
        };
        let n_children = if d + 1 < lv.len() { child_sigs.len() } else { 0 };
        let max_arity = if n_children == 0 { 0 } else { delta.min(weight_cap(arena, &level.exprs)) };

        // Estimated work at this level.
        let labels = (n_values as u128).saturating_pow(level.features.len() as u32);
        let seqs: u128 = (0..=max_arity as u32).map(|k| (n_children as u128).saturating_pow(k)).sum();
        if labels.saturating_mul(seqs) > budget as u128 {
            return Verdict::Unknown(UnknownReason::NodeLimit);
        }
        budget -= (labels * seqs) as u64;

        let mut slots = vec![0i64; level.exprs.len()];
        let mut label = vec![-spec.max_payload(); level.features.len()];
        let mut sig_index: FxHashMap<Vec<i64>, usize> = FxHashMap::default();
        let mut res = LevelResult { sigs: Vec::new(), witnesses: Vec::new() };
        let mut children_buf: Vec<&[i64]> = Vec::with_capacity(max_arity);

        for k in 0..=max_arity {
            let mut seq = vec![0usize; k];
            loop {
                children_buf.clear();
                children_buf.extend(seq.iter().map(|&i| child_sigs[i]));
                label.iter_mut().for_each(|x| *x = -spec.max_payload());
                loop {
                    eval_node(
                        spec,
                        arena,
                        level,
                        &mut slots,
                        &slot_of,
                        &label,
                        &feature_slot,
                        &children_buf,
                        &child_operand_slot,
                    );
                    if d == 0 {
                        if truth(arena, f.root, &slots, &slot_of) {
                            let root = Witness { label: label.clone(), children: seq.clone() };
                            let model = build_tree(f, &lv, &results, root);
                            assert!(check_formula(f, &model).expect("oracle model evaluates"), "oracle model fails check");
                            return Verdict::Sat(model);
                        }
                    } else {
                        let prev_ops = &lv[d - 1].operands;
                        let sig: Vec<i64> = prev_ops.iter().map(|e| slots[slot_of[e.index()]]).collect();
                        if !sig_index.contains_key(&sig) {
                            sig_index.insert(sig.clone(), res.sigs.len());
                            res.sigs.push(sig);
                            res.witnesses.push(Witness { label: label.clone(), children: seq.clone() });
                        }
                    }
                    if !next_label(&mut label, spec.max_payload()) {
                        break;
                    }
                }
                if k == 0 || !next_seq(&mut seq, n_children) {
                    break;
                }
            }
        }
        results.push(res);
    }
    Verdict::Unsat
}

fn next_label(label: &mut [i64], max: i64) -> bool {
    for i in (0..label.len()).rev() {
        if label[i] < max {
            label[i] += 1;
            return true;
        }
        label[i] = -max;
    }
    false
}

/// Reconstructs the witness tree; unused features are labelled 0.
fn build_tree(f: &Formula, lv: &[Level], results: &[LevelResult], root: Witness) -> PointedGraph {
    let features: Vec<String> = f.features_of().into_iter().collect();
    let mut g = LabeledGraph::new(f.arena.spec(), features);
    let point = add_witness(&mut g, &f.arena, lv, results, 0, "ε".to_string(), &root);
    PointedGraph::new(g, point)
}

fn add_witness(
    g: &mut LabeledGraph,
    arena: &Arena,
    lv: &[Level],
    results: &[LevelResult],
    d: usize,
    word: String,
    w: &Witness,
) -> NodeId {
    let spec = arena.spec();
    let v = g.add_node(&word).expect("fresh word");
    for (fe, x) in lv[d].features.iter().zip(&w.label) {
        g.set_label(v, arena.feature_name(*fe), spec.value(*x).expect("in range")).expect("declared");
    }
    // results are stored deepest level first
    let below = lv.len().checked_sub(d + 2).map(|i| &results[i]);
    for (i, &c) in w.children.iter().enumerate() {
        let child_word = if d == 0 { format!("{}", i + 1) } else { format!("{word}.{}", i + 1) };
        let cw = &below.expect("children imply a deeper level").witnesses[c];
        let cv = add_witness(g, arena, lv, results, d + 1, child_word, cw);
        g.add_edge(v, cv).expect("tree edge");
    }
    v
}
