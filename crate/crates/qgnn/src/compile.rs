//! Reduction from GNN verification instances to formulas.

use std::collections::BTreeSet;

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::arith::ArithmeticSpec;
use crate::formula::{Arena, ExprId, ExprNode, Formula, FormulaId, FormulaNode};
use crate::gnn::{Fnn, GnnModel, LinIneq, LvpInstance};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompileError {
    #[error("network expects {expected} inputs, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("output name `{0}` is also an input feature")]
    NameClash(String),
    #[error("variable `{0}` is out of scope")]
    Scope(String),
    #[error("formula arithmetic {formula} differs from model arithmetic {model}")]
    SpecMismatch { formula: ArithmeticSpec, model: ArithmeticSpec },
}

#[derive(Clone, Debug)]
pub struct CompiledInstance {
    /// `pre ∧ φ_N ∧ ¬post`
    pub formula: Formula,
    /// The network part `φ_N`.
    pub gnn_formula: FormulaId,
    pub input_features: Vec<String>,
    pub output_features: Vec<String>,
    /// Final output expressions, one per output feature.
    pub outputs: Vec<ExprId>,
}

/// Unfolds each output as `act(w1*in1 + ... + wn*inn + b)`, summing left to
/// right. Unit weights leave the input bare.
pub fn unfold_fnn(arena: &mut Arena, f: &Fnn, inputs: &[ExprId]) -> Result<Vec<ExprId>, CompileError> {
    if inputs.len() != f.input_dim() {
        return Err(CompileError::Dimension { expected: f.input_dim(), got: inputs.len() });
    }
    let one = arena.spec().one();
    let mut xs = inputs.to_vec();
    for layer in &f.layers {
        xs = layer
            .weights
            .iter()
            .zip(&layer.bias)
            .zip(&layer.activations)
            .map(|((row, b), act)| {
                let terms: Vec<ExprId> = row
                    .iter()
                    .zip(&xs)
                    .map(|(w, x)| if *w == one { *x } else { arena.scale(*w, *x) })
                    .collect();
                let first = terms[0];
                let acc = terms[1..].iter().fold(first, |acc, t| arena.sum(acc, *t));
                let bias = arena.constant(*b);
                let affine = arena.sum(acc, bias);
                arena.act(*act, affine)
            })
            .collect();
    }
    Ok(xs)
}

/// Builds the output expressions of every layer over the input features.
pub fn unfold_gnn(arena: &mut Arena, g: &GnnModel) -> Result<Vec<ExprId>, CompileError> {
    let mut state: Vec<ExprId> = g.input_names.iter().map(|n| arena.feature(n)).collect();
    for layer in &g.layers {
        let aggs: Vec<ExprId> = state.iter().map(|s| arena.agg(layer.agg.clone(), *s)).collect();
        let mut input = state.clone();
        input.extend(aggs);
        state = unfold_fnn(arena, &layer.comb, &input)?;
    }
    unfold_fnn(arena, &g.out, &state)
}

/// `φ_N`: every output expression equals its output feature.
pub fn compile_gnn(arena: &mut Arena, g: &GnnModel) -> Result<(FormulaId, Vec<String>, Vec<ExprId>), CompileError> {
    if arena.spec() != g.spec {
        return Err(CompileError::SpecMismatch { formula: arena.spec(), model: g.spec });
    }
    let names = g.output_names();
    if let Some(n) = names.iter().find(|n| g.input_names.contains(n)) {
        return Err(CompileError::NameClash(n.clone()));
    }
    for n in g.input_names.iter().chain(&names) {
        arena.intern_feature(n);
    }
    let outs = unfold_gnn(arena, g)?;
    let zero = arena.spec().zero();
    let eqs: Vec<FormulaId> = outs
        .iter()
        .zip(&names)
        .map(|(xi, y)| {
            let yv = arena.feature(y);
            let d = arena.sub(*xi, yv);
            arena.eq(d, zero)
        })
        .collect();
    let phi = arena.and_all(eqs);
    Ok((phi, names, outs))
}

/// `sum_i c_i * v_i >= k` as an atom; the empty sum is the constant 0.
pub fn lin_atom(arena: &mut Arena, c: &LinIneq) -> FormulaId {
    let one = arena.spec().one();
    let terms: Vec<ExprId> = c
        .coeffs
        .iter()
        .map(|(n, w)| {
            let v = arena.feature(n);
            if *w == one {
                v
            } else {
                arena.scale(*w, v)
            }
        })
        .collect();
    let e = match terms.split_first() {
        Some((first, rest)) => rest.iter().fold(*first, |acc, t| arena.sum(acc, *t)),
        None => {
            let zero = arena.spec().zero();
            arena.constant(zero)
        }
    };
    arena.geq(e, c.constant)
}

/// `L_in ∧ φ_N ∧ (¬ψ_1 ∨ … ∨ ¬ψ_k)`
pub fn compile_lvp(inst: &LvpInstance) -> Result<CompiledInstance, CompileError> {
    let g = &inst.gnn;
    let outputs = g.output_names();
    for c in &inst.l_in {
        if let Some((n, _)) = c.coeffs.iter().find(|(n, _)| !g.input_names.contains(n)) {
            return Err(CompileError::Scope(n.clone()));
        }
    }
    for c in &inst.l_out {
        if let Some((n, _)) = c.coeffs.iter().find(|(n, _)| !outputs.contains(n)) {
            return Err(CompileError::Scope(n.clone()));
        }
    }
    let mut arena = Arena::new(g.spec);
    for n in g.input_names.iter().chain(&outputs) {
        arena.intern_feature(n);
    }
    let ins: Vec<FormulaId> = inst.l_in.iter().map(|c| lin_atom(&mut arena, c)).collect();
    let pre = arena.and_all(ins);
    let (phi_n, output_features, outs) = compile_gnn(&mut arena, g)?;
    let negs: Vec<FormulaId> = inst
        .l_out
        .iter()
        .map(|c| {
            let a = lin_atom(&mut arena, c);
            arena.not(a)
        })
        .collect();
    let post = arena.or_all(negs);
    let left = arena.and(pre, phi_n);
    let root = arena.and(left, post);
    Ok(CompiledInstance {
        formula: Formula::new(arena, root),
        gnn_formula: phi_n,
        input_features: g.input_names.clone(),
        output_features,
        outputs: outs,
    })
}

/// `pre ∧ φ_N ∧ ¬post` for arbitrary formulas over inputs and outputs.
pub fn compile_generalized(g: &GnnModel, pre: &Formula, post: &Formula) -> Result<CompiledInstance, CompileError> {
    for f in [pre, post] {
        if f.spec() != g.spec {
            return Err(CompileError::SpecMismatch { formula: f.spec(), model: g.spec });
        }
    }
    let outputs = g.output_names();
    let scoped = |f: &Formula, allowed: &[String]| -> Result<(), CompileError> {
        let used: BTreeSet<String> = f.features_of();
        match used.into_iter().find(|n| !allowed.contains(n)) {
            Some(n) => Err(CompileError::Scope(n)),
            None => Ok(()),
        }
    };
    // `true` is spelled with x1, which is harmless on either side.
    let mut pre_scope = g.input_names.clone();
    pre_scope.push("x1".into());
    let mut post_scope = outputs.clone();
    post_scope.push("x1".into());
    scoped(pre, &pre_scope)?;
    scoped(post, &post_scope)?;

    let mut arena = Arena::new(g.spec);
    for n in g.input_names.iter().chain(&outputs) {
        arena.intern_feature(n);
    }
    let p = import(&mut arena, &pre.arena, pre.root);
    let (phi_n, output_features, outs) = compile_gnn(&mut arena, g)?;
    let q = import(&mut arena, &post.arena, post.root);
    let nq = arena.not(q);
    let left = arena.and(p, phi_n);
    let root = arena.and(left, nq);
    Ok(CompiledInstance {
        formula: Formula::new(arena, root),
        gnn_formula: phi_n,
        input_features: g.input_names.clone(),
        output_features,
        outputs: outs,
    })
}

/// Copies a formula from another arena over the same arithmetic.
pub fn import(dst: &mut Arena, src: &Arena, root: FormulaId) -> FormulaId {
    let mut exprs: FxHashMap<ExprId, ExprId> = FxHashMap::default();
    fn expr(dst: &mut Arena, src: &Arena, e: ExprId, memo: &mut FxHashMap<ExprId, ExprId>) -> ExprId {
        if let Some(&m) = memo.get(&e) {
            return m;
        }
        let out = match src.expr(e).clone() {
            ExprNode::Const(c) => dst.constant(c),
            ExprNode::Feature(f) => dst.feature(src.feature_name(f)),
            ExprNode::Act(a, c) => {
                let c = expr(dst, src, c, memo);
                dst.act(a, c)
            }
            ExprNode::Agg(kind, c) => {
                let c = expr(dst, src, c, memo);
                dst.agg(kind, c)
            }
            ExprNode::Sum(a, b) => {
                let a = expr(dst, src, a, memo);
                let b = expr(dst, src, b, memo);
                dst.sum(a, b)
            }
            ExprNode::Scale(k, c) => {
                let c = expr(dst, src, c, memo);
                dst.scale(k, c)
            }
        };
        memo.insert(e, out);
        out
    }
    fn formula(dst: &mut Arena, src: &Arena, f: FormulaId, memo: &mut FxHashMap<ExprId, ExprId>) -> FormulaId {
        match *src.formula(f) {
            FormulaNode::Geq(e, k) => {
                let e = expr(dst, src, e, memo);
                dst.geq(e, k)
            }
            FormulaNode::Eq(e, k) => {
                let e = expr(dst, src, e, memo);
                dst.eq(e, k)
            }
            FormulaNode::Not(a) => {
                let a = formula(dst, src, a, memo);
                dst.not(a)
            }
            FormulaNode::And(a, b) => {
                let a = formula(dst, src, a, memo);
                let b = formula(dst, src, b, memo);
                dst.and(a, b)
            }
            FormulaNode::Or(a, b) => {
                let a = formula(dst, src, a, memo);
                let b = formula(dst, src, b, memo);
                dst.or(a, b)
            }
        }
    }
    formula(dst, src, root, &mut exprs)
}

/// Expression count of the formula DAG reachable from `root`.
pub fn dag_nodes(arena: &Arena, root: FormulaId) -> usize {
    let (fs, es) = crate::formula::reachable(arena, root);
    fs.len() + es.len()
}
