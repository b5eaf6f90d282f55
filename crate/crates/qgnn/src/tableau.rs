//! Tableau search for tree models.
//!
//! A branch tracks, for every tree vertex (word) and every expression active
//! there, an interval of still-possible values. Interval narrowing plays the
//! role of the structural rules: every expression constructor is monotone in
//! each argument, so forward bounds come from evaluating at interval corners
//! and backward bounds from a binary search over the argument. Branching
//! guesses disjuncts, feature values and out-degrees; a branch whose features
//! and degrees are all fixed is fully evaluated and yields the model.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::arith::{ArithmeticSpec, Value};
use crate::compile::{compile_lvp, CompileError};
use crate::formula::{reachable, AggKind, Arena, ExprId, ExprNode, FeatureId, Formula, FormulaId, FormulaNode};
use crate::gnn::{gnn_eval, GnnError, LvpInstance};
use crate::graph::{LabeledGraph, NodeId, PointedGraph};
use crate::semantics::{check_formula, weight_caps, UnknownReason, Verdict};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DeltaMode {
    Unary(u64),
    Binary(u64),
    Infinite,
}

impl DeltaMode {
    pub fn from_parts(mode: &str, value: Option<u64>) -> Result<Self, String> {
        match (mode, value) {
            ("unary", Some(v)) => Ok(DeltaMode::Unary(v)),
            ("binary", Some(v)) => Ok(DeltaMode::Binary(v)),
            ("inf" | "infinite", None) => Ok(DeltaMode::Infinite),
            ("unary" | "binary", None) => Err(format!("mode `{mode}` needs a value")),
            ("inf" | "infinite", Some(_)) => Err("mode `inf` takes no value".into()),
            (other, _) => Err(format!("unknown arity mode `{other}`")),
        }
    }

    pub fn to_parts(&self) -> (&'static str, Option<u64>) {
        match *self {
            DeltaMode::Unary(v) => ("unary", Some(v)),
            DeltaMode::Binary(v) => ("binary", Some(v)),
            DeltaMode::Infinite => ("inf", None),
        }
    }
}

impl fmt::Display for DeltaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_parts() {
            (m, Some(v)) => write!(f, "{m}:{v}"),
            (m, None) => f.write_str(m),
        }
    }
}

impl FromStr for DeltaMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            Some((m, v)) => {
                let v = v.parse::<u64>().map_err(|_| format!("bad arity bound `{v}`"))?;
                DeltaMode::from_parts(m, Some(v))
            }
            None => DeltaMode::from_parts(s, None),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Limits {
    pub time: Option<Duration>,
    /// Branch states explored before giving up.
    pub max_nodes: u64,
    /// Out-degree ceiling for binary and unbounded modes on top of the
    /// theoretical cap.
    pub arity_cap: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { time: None, max_nodes: 5_000_000, arity_cap: 1024 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub nodes: u64,
    pub max_words: usize,
}

/// Narrowing steps per propagation round before only fixing steps count.
const NARROW_BUDGET: u64 = 200_000;

struct Problem<'a> {
    arena: &'a Arena,
    spec: ArithmeticSpec,
    n: usize,
    max: i64,
    root: FormulaId,
    /// Same-word parents of each expression.
    parents: Vec<Vec<ExprId>>,
    /// Aggregations reading each expression at the successors.
    agg_parents: Vec<Vec<ExprId>>,
    /// Bounds at a vertex nothing is known about.
    fresh: Vec<(i64, i64)>,
    weight_caps: Vec<usize>,
    arity_cap: u64,
    cap_truncated: bool,
    binary: bool,
}

impl<'a> Problem<'a> {
    fn new(f: &'a Formula, delta: DeltaMode, limits: &Limits) -> Self {
        let arena = &f.arena;
        let spec = arena.spec();
        let n = arena.expr_count();
        let max = spec.max_payload();
        let (_, exprs) = reachable(arena, f.root);
        let mut parents = vec![Vec::new(); n];
        let mut agg_parents = vec![Vec::new(); n];
        for &e in &exprs {
            match arena.expr(e) {
                ExprNode::Agg(_, c) => agg_parents[c.index()].push(e),
                node => {
                    for c in node.children() {
                        if !parents[c.index()].contains(&e) {
                            parents[c.index()].push(e);
                        }
                    }
                }
            }
        }
        let mut fresh = vec![(-max, max); n];
        for i in 0..n {
            fresh[i] = match arena.expr(ExprId(i as u32)) {
                ExprNode::Const(c) => (c.payload(), c.payload()),
                ExprNode::Feature(_) | ExprNode::Agg(..) => (-max, max),
                ExprNode::Act(a, c) => {
                    let (lo, hi) = fresh[c.index()];
                    (spec.act_p(*a, lo), spec.act_p(*a, hi))
                }
                ExprNode::Scale(k, c) => {
                    let (lo, hi) = fresh[c.index()];
                    let (x, y) = (spec.mul_p(k.payload(), lo), spec.mul_p(k.payload(), hi));
                    (x.min(y), x.max(y))
                }
                ExprNode::Sum(a, b) => {
                    let ((al, ah), (bl, bh)) = (fresh[a.index()], fresh[b.index()]);
                    (spec.add_p(al, bl), spec.add_p(ah, bh))
                }
            };
        }
        let depth = f.agg_depth();
        let theoretical = |d: u64| -> u64 {
            let pow = 1u64.checked_shl(spec.bit_width()).unwrap_or(u64::MAX);
            d.min(pow.saturating_mul(f.dag_size() as u64))
        };
        let (arity_cap, cap_truncated, binary) = match delta {
            DeltaMode::Unary(d) => (d, false, false),
            DeltaMode::Binary(d) => {
                let t = theoretical(d);
                (t.min(limits.arity_cap), t > limits.arity_cap, true)
            }
            DeltaMode::Infinite => {
                let t = theoretical(u64::MAX);
                (t.min(limits.arity_cap), t > limits.arity_cap, true)
            }
        };
        Problem {
            arena,
            spec,
            n,
            max,
            root: f.root,
            parents,
            agg_parents,
            fresh,
            weight_caps: weight_caps(arena, f.root, depth),
            arity_cap,
            cap_truncated,
            binary,
        }
    }
}

/// A finished successor subtree, kept once its working state is dropped.
#[derive(Clone, Debug)]
struct Tree {
    labels: Vec<(FeatureId, i64)>,
    children: Vec<Tree>,
}

#[derive(Clone, Debug)]
struct Word {
    parent: Option<u32>,
    depth: u32,
    arity: Option<u64>,
    /// Successors with working state, in order after `finished`.
    live: Vec<u32>,
    finished: Vec<Tree>,
    /// Successors folded into `acc` (binary mode).
    done: u64,
    /// Running aggregation values over the folded successors.
    acc: Vec<(ExprId, i64)>,
    aggs: Vec<ExprId>,
}

#[derive(Clone, Debug)]
struct State {
    words: Vec<Word>,
    doms: Vec<(i64, i64)>,
    active: Vec<bool>,
    excluded: Vec<(usize, i64)>,
    pending: Vec<(FormulaId, bool)>,
    clauses: Vec<Vec<(FormulaId, bool)>>,
    queue: Vec<usize>,
    queued: Vec<bool>,
    narrowings: u64,
    failed: bool,
}

fn fold_init(kind: &AggKind) -> i64 {
    match kind {
        AggKind::Max => i64::MIN,
        _ => 0,
    }
}

fn fold_step(spec: ArithmeticSpec, kind: &AggKind, acc: i64, idx: u64, v: i64) -> i64 {
    match kind {
        AggKind::Sum | AggKind::Mean => spec.add_p(acc, v),
        AggKind::Max => acc.max(v),
        AggKind::Weighted(ws) => spec.add_p(acc, spec.mul_p(ws[idx as usize].payload(), v)),
    }
}

fn fold_final(spec: ArithmeticSpec, kind: &AggKind, acc: i64, k: u64) -> i64 {
    match kind {
        _ if k == 0 => 0,
        AggKind::Mean => spec.div_p(acc, k),
        _ => acc,
    }
}

fn increasing(kind: &AggKind, idx: u64) -> bool {
    match kind {
        AggKind::Weighted(ws) => ws[idx as usize].payload() >= 0,
        _ => true,
    }
}

/// First `x` in `[lo, hi]` with `pred(x)`, for `pred` switching false to true.
fn first_true(lo: i64, hi: i64, pred: impl Fn(i64) -> bool) -> Option<i64> {
    if lo > hi || !pred(hi) {
        return None;
    }
    let (mut a, mut b) = (lo, hi);
    while a < b {
        let m = a + (b - a) / 2;
        if pred(m) {
            b = m;
        } else {
            a = m + 1;
        }
    }
    Some(a)
}

/// Last `x` in `[lo, hi]` with `pred(x)`, for `pred` switching true to false.
fn last_true(lo: i64, hi: i64, pred: impl Fn(i64) -> bool) -> Option<i64> {
    if lo > hi || !pred(lo) {
        return None;
    }
    let (mut a, mut b) = (lo, hi);
    while a < b {
        let m = b - (b - a) / 2;
        if pred(m) {
            a = m;
        } else {
            b = m - 1;
        }
    }
    Some(a)
}

/// Inputs in `[lo, hi]` that can still reach `[tlo, thi]`, given monotone
/// lower and upper envelopes of the output as a function of the input.
fn preimage(
    (lo, hi): (i64, i64),
    inc: bool,
    fmin: impl Fn(i64) -> i64,
    fmax: impl Fn(i64) -> i64,
    (tlo, thi): (i64, i64),
) -> Option<(i64, i64)> {
    if inc {
        let a = first_true(lo, hi, |x| fmax(x) >= tlo)?;
        let b = last_true(lo, hi, |x| fmin(x) <= thi)?;
        (a <= b).then_some((a, b))
    } else {
        let b = last_true(lo, hi, |x| fmax(x) >= tlo)?;
        let a = first_true(lo, hi, |x| fmin(x) <= thi)?;
        (a <= b).then_some((a, b))
    }
}

/// One input slot of an aggregation fold.
#[derive(Clone, Copy)]
struct Slot {
    idx: u64,
    lo: i64,
    hi: i64,
}

enum Choice {
    /// Alternative `i` asserts disjunct `i` and refutes the earlier ones.
    Clause { index: usize, alts: Vec<(FormulaId, bool)> },
    Pieces { slot: usize, pieces: Vec<(i64, i64)> },
    Arity { word: u32, first: u64, last: u64 },
}

impl Choice {
    fn len(&self) -> u64 {
        match self {
            Choice::Clause { alts, .. } => alts.len() as u64,
            Choice::Pieces { pieces, .. } => pieces.len() as u64,
            Choice::Arity { first, last, .. } => last - first + 1,
        }
    }
}

struct Frame {
    state: State,
    choice: Choice,
    next: u64,
}

enum Step {
    Complete,
    Branch(Choice),
}

impl State {
    fn new(pb: &Problem) -> Self {
        let mut s = State {
            words: Vec::new(),
            doms: Vec::new(),
            active: Vec::new(),
            excluded: Vec::new(),
            pending: vec![(pb.root, true)],
            clauses: Vec::new(),
            queue: Vec::new(),
            queued: Vec::new(),
            narrowings: 0,
            failed: false,
        };
        s.add_word(pb, None);
        s
    }

    fn add_word(&mut self, pb: &Problem, parent: Option<u32>) -> u32 {
        let id = self.words.len() as u32;
        let depth = parent.map_or(0, |p| self.words[p as usize].depth + 1);
        self.words.push(Word {
            parent,
            depth,
            arity: None,
            live: Vec::new(),
            finished: Vec::new(),
            done: 0,
            acc: Vec::new(),
            aggs: Vec::new(),
        });
        self.doms.extend(std::iter::repeat_n((-pb.max, pb.max), pb.n));
        self.active.extend(std::iter::repeat_n(false, pb.n));
        self.queued.extend(std::iter::repeat_n(false, pb.n));
        id
    }

    fn slot(pb: &Problem, w: u32, e: ExprId) -> usize {
        w as usize * pb.n + e.index()
    }

    fn enqueue(&mut self, i: usize) {
        if !self.queued[i] {
            self.queued[i] = true;
            self.queue.push(i);
        }
    }

    fn is_excluded(&self, i: usize, v: i64) -> bool {
        self.excluded.iter().any(|&(j, x)| j == i && x == v)
    }

    /// Intersects a domain; false on emptiness.
    fn narrow(&mut self, pb: &Problem, i: usize, lo: i64, hi: i64) -> bool {
        let (olo, ohi) = self.doms[i];
        let (mut nlo, mut nhi) = (olo.max(lo), ohi.min(hi));
        if !self.excluded.is_empty() {
            while nlo <= nhi && self.is_excluded(i, nlo) {
                nlo += 1;
            }
            while nlo <= nhi && self.is_excluded(i, nhi) {
                nhi -= 1;
            }
        }
        if nlo > nhi {
            self.failed = true;
            return false;
        }
        if (nlo, nhi) == (olo, ohi) {
            return true;
        }
        self.narrowings += 1;
        if self.narrowings > NARROW_BUDGET && nlo != nhi {
            return true;
        }
        self.doms[i] = (nlo, nhi);
        self.changed(pb, i);
        true
    }

    fn changed(&mut self, pb: &Problem, i: usize) {
        let (w, e) = ((i / pb.n) as u32, i % pb.n);
        self.enqueue(i);
        for p in &pb.parents[e] {
            let j = State::slot(pb, w, *p);
            if self.active[j] {
                self.enqueue(j);
            }
        }
        if let Some(pw) = self.words[w as usize].parent {
            for a in &pb.agg_parents[e] {
                let j = State::slot(pb, pw, *a);
                if self.active[j] {
                    self.enqueue(j);
                }
            }
        }
    }

    fn activate(&mut self, pb: &Problem, w: u32, e: ExprId) {
        let i = State::slot(pb, w, e);
        if self.active[i] {
            return;
        }
        self.active[i] = true;
        self.enqueue(i);
        match pb.arena.expr(e) {
            ExprNode::Agg(kind, c) => {
                let word = &mut self.words[w as usize];
                word.aggs.push(e);
                if word.arity.is_some() {
                    // Binary mode fixes the active set before degrees are chosen.
                    assert!(word.done == 0 && word.finished.is_empty(), "aggregation activated after folding");
                    if pb.binary {
                        word.acc.push((e, fold_init(kind)));
                    }
                    for c_w in word.live.clone() {
                        self.activate(pb, c_w, *c);
                    }
                }
            }
            node => {
                for c in node.children().collect::<Vec<_>>() {
                    self.activate(pb, w, c);
                }
            }
        }
    }

    fn set_arity(&mut self, pb: &Problem, w: u32, k: u64) {
        let word = &mut self.words[w as usize];
        word.arity = Some(k);
        let aggs = word.aggs.clone();
        if pb.binary {
            word.acc = aggs
                .iter()
                .map(|a| match pb.arena.expr(*a) {
                    ExprNode::Agg(kind, _) => (*a, fold_init(kind)),
                    _ => unreachable!(),
                })
                .collect();
            if k > 0 {
                self.spawn_child(pb, w);
            }
        } else {
            for _ in 0..k {
                self.spawn_child(pb, w);
            }
        }
        for a in aggs {
            self.enqueue(State::slot(pb, w, a));
        }
    }

    fn spawn_child(&mut self, pb: &Problem, w: u32) {
        let c = self.add_word(pb, Some(w));
        self.words[w as usize].live.push(c);
        for a in self.words[w as usize].aggs.clone() {
            if let ExprNode::Agg(_, op) = pb.arena.expr(a) {
                self.activate(pb, c, *op);
            }
        }
    }

    /// Fold slots of an aggregation: folded prefix, live successors, then
    /// successors not yet created.
    fn agg_slots(&self, pb: &Problem, w: u32, a: ExprId, op: ExprId, k: u64) -> (i64, Vec<Slot>) {
        let word = &self.words[w as usize];
        let start = word.acc.iter().find(|(e, _)| *e == a).map(|p| p.1);
        let kind = match pb.arena.expr(a) {
            ExprNode::Agg(kind, _) => kind,
            _ => unreachable!(),
        };
        let init = start.unwrap_or_else(|| fold_init(kind));
        let mut slots = Vec::with_capacity((k - word.done) as usize);
        let mut idx = word.done;
        for &c in &word.live {
            let (lo, hi) = self.doms[State::slot(pb, c, op)];
            slots.push(Slot { idx, lo, hi });
            idx += 1;
        }
        let (flo, fhi) = pb.fresh[op.index()];
        while idx < k {
            slots.push(Slot { idx, lo: flo, hi: fhi });
            idx += 1;
        }
        (init, slots)
    }

    fn revise(&mut self, pb: &Problem, i: usize) -> bool {
        let spec = pb.spec;
        let (w, e) = ((i / pb.n) as u32, ExprId((i % pb.n) as u32));
        match pb.arena.expr(e) {
            ExprNode::Const(c) => self.narrow(pb, i, c.payload(), c.payload()),
            ExprNode::Feature(_) => true,
            ExprNode::Act(act, c) => {
                let ci = State::slot(pb, w, *c);
                let (lo, hi) = self.doms[ci];
                if !self.narrow(pb, i, spec.act_p(*act, lo), spec.act_p(*act, hi)) {
                    return false;
                }
                let t = self.doms[i];
                let f = |x| spec.act_p(*act, x);
                match preimage((lo, hi), true, f, f, t) {
                    Some((a, b)) => self.narrow(pb, ci, a, b),
                    None => self.fail(),
                }
            }
            ExprNode::Scale(k, c) => {
                let k = k.payload();
                let ci = State::slot(pb, w, *c);
                let (lo, hi) = self.doms[ci];
                let (x, y) = (spec.mul_p(k, lo), spec.mul_p(k, hi));
                if !self.narrow(pb, i, x.min(y), x.max(y)) {
                    return false;
                }
                let t = self.doms[i];
                let f = |x| spec.mul_p(k, x);
                match preimage((lo, hi), k >= 0, f, f, t) {
                    Some((a, b)) => self.narrow(pb, ci, a, b),
                    None => self.fail(),
                }
            }
            ExprNode::Sum(a, b) => {
                let (ai, bi) = (State::slot(pb, w, *a), State::slot(pb, w, *b));
                let ((al, ah), (bl, bh)) = (self.doms[ai], self.doms[bi]);
                if !self.narrow(pb, i, spec.add_p(al, bl), spec.add_p(ah, bh)) {
                    return false;
                }
                let t = self.doms[i];
                if ai == bi {
                    let f = |x| spec.add_p(x, x);
                    return match preimage((al, ah), true, f, f, t) {
                        Some((x, y)) => self.narrow(pb, ai, x, y),
                        None => self.fail(),
                    };
                }
                match preimage((al, ah), true, |x| spec.add_p(x, bl), |x| spec.add_p(x, bh), t) {
                    Some((x, y)) => {
                        if !self.narrow(pb, ai, x, y) {
                            return false;
                        }
                    }
                    None => return self.fail(),
                }
                let (al, ah) = self.doms[ai];
                match preimage((bl, bh), true, |x| spec.add_p(al, x), |x| spec.add_p(ah, x), t) {
                    Some((x, y)) => self.narrow(pb, bi, x, y),
                    None => self.fail(),
                }
            }
            ExprNode::Agg(kind, op) => {
                let Some(k) = self.words[w as usize].arity else { return true };
                let (init, slots) = self.agg_slots(pb, w, e, *op, k);
                let corner = |slots: &[Slot], high: bool| -> i64 {
                    let acc = slots.iter().fold(init, |acc, s| {
                        let v = if increasing(kind, s.idx) == high { s.hi } else { s.lo };
                        fold_step(spec, kind, acc, s.idx, v)
                    });
                    fold_final(spec, kind, acc, k)
                };
                let (flo, fhi) = (corner(&slots, false), corner(&slots, true));
                if !self.narrow(pb, i, flo, fhi) {
                    return false;
                }
                let (tlo, thi) = self.doms[i];
                let live = self.words[w as usize].live.clone();
                for (j, c) in live.iter().enumerate() {
                    let ci = State::slot(pb, *c, *op);
                    let s = Slot { lo: self.doms[ci].0, hi: self.doms[ci].1, ..slots[j] };
                    let with = |x: i64, high: bool| -> i64 {
                        let acc = slots.iter().enumerate().fold(init, |acc, (m, t)| {
                            let v = if m == j {
                                x
                            } else if increasing(kind, t.idx) == high {
                                t.hi
                            } else {
                                t.lo
                            };
                            fold_step(spec, kind, acc, t.idx, v)
                        });
                        fold_final(spec, kind, acc, k)
                    };
                    match preimage(
                        (s.lo, s.hi),
                        increasing(kind, s.idx),
                        |x| with(x, false),
                        |x| with(x, true),
                        (tlo, thi),
                    ) {
                        Some((x, y)) => {
                            if !self.narrow(pb, ci, x, y) {
                                return false;
                            }
                        }
                        None => return self.fail(),
                    }
                }
                true
            }
        }
    }

    fn fail(&mut self) -> bool {
        self.failed = true;
        false
    }

    fn assert_formula(&mut self, pb: &Problem, f: FormulaId, pos: bool) -> bool {
        match *pb.arena.formula(f) {
            FormulaNode::Geq(e, k) => {
                self.activate(pb, 0, e);
                let i = State::slot(pb, 0, e);
                if pos {
                    self.narrow(pb, i, k.payload(), pb.max)
                } else {
                    // e < k
                    self.narrow(pb, i, -pb.max, k.payload() - 1)
                }
            }
            FormulaNode::Eq(e, k) => {
                self.activate(pb, 0, e);
                let i = State::slot(pb, 0, e);
                if pos {
                    self.narrow(pb, i, k.payload(), k.payload())
                } else {
                    if !self.is_excluded(i, k.payload()) {
                        self.excluded.push((i, k.payload()));
                    }
                    let (lo, hi) = self.doms[i];
                    self.narrow(pb, i, lo, hi)
                }
            }
            FormulaNode::Not(a) => self.assert_formula(pb, a, !pos),
            FormulaNode::And(a, b) if pos => {
                self.pending.push((b, true));
                self.pending.push((a, true));
                true
            }
            FormulaNode::Or(a, b) if !pos => {
                self.pending.push((b, false));
                self.pending.push((a, false));
                true
            }
            FormulaNode::And(..) | FormulaNode::Or(..) => {
                let mut alts = Vec::new();
                disjuncts(pb.arena, f, pos, &mut alts);
                self.clauses.push(alts);
                true
            }
        }
    }

    /// Three-valued truth of a signed formula at the root.
    fn truth(&self, pb: &Problem, f: FormulaId, pos: bool) -> Option<bool> {
        let v = match *pb.arena.formula(f) {
            FormulaNode::Geq(e, k) => {
                let (lo, hi) = self.doms[State::slot(pb, 0, e)];
                if lo >= k.payload() {
                    Some(true)
                } else if hi < k.payload() {
                    Some(false)
                } else {
                    None
                }
            }
            FormulaNode::Eq(e, k) => {
                let i = State::slot(pb, 0, e);
                let (lo, hi) = self.doms[i];
                let k = k.payload();
                if lo == k && hi == k {
                    Some(true)
                } else if k < lo || k > hi || self.is_excluded(i, k) {
                    Some(false)
                } else {
                    None
                }
            }
            FormulaNode::Not(a) => self.truth(pb, a, true).map(|b| !b),
            FormulaNode::And(a, b) => match (self.truth(pb, a, true), self.truth(pb, b, true)) {
                (Some(false), _) | (_, Some(false)) => Some(false),
                (Some(true), Some(true)) => Some(true),
                _ => None,
            },
            FormulaNode::Or(a, b) => match (self.truth(pb, a, true), self.truth(pb, b, true)) {
                (Some(true), _) | (_, Some(true)) => Some(true),
                (Some(false), Some(false)) => Some(false),
                _ => None,
            },
        };
        v.map(|b| b == pos)
    }

    /// Drops refuted disjuncts and satisfied clauses; unit clauses are asserted.
    fn simplify_clauses(&mut self, pb: &Problem) -> bool {
        let mut progress = false;
        let mut i = 0;
        while i < self.clauses.len() {
            let before = self.clauses[i].len();
            let mut satisfied = false;
            let clause = std::mem::take(&mut self.clauses[i]);
            let kept: Vec<_> = clause
                .into_iter()
                .filter(|&(f, pos)| match self.truth(pb, f, pos) {
                    Some(true) => {
                        satisfied = true;
                        true
                    }
                    Some(false) => false,
                    None => true,
                })
                .collect();
            if satisfied {
                self.clauses.remove(i);
                progress = true;
                continue;
            }
            match kept.len() {
                0 => {
                    self.failed = true;
                    return false;
                }
                1 => {
                    self.pending.push(kept[0]);
                    self.clauses.remove(i);
                    progress = true;
                    continue;
                }
                n => {
                    progress |= n != before;
                    self.clauses[i] = kept;
                }
            }
            i += 1;
        }
        progress
    }

    fn valued(&self, i: usize) -> bool {
        let (lo, hi) = self.doms[i];
        lo == hi
    }

    fn word_settled(&self, pb: &Problem, w: u32) -> bool {
        let base = w as usize * pb.n;
        (0..pb.n).all(|e| !self.active[base + e] || self.valued(base + e))
    }

    /// Binary mode: fold a finished last successor into its parent.
    fn fold_last(&mut self, pb: &Problem) -> bool {
        let w = (self.words.len() - 1) as u32;
        let word = &self.words[w as usize];
        let Some(p) = word.parent else { return false };
        if !word.aggs.is_empty() && !(word.arity == Some(word.done) && word.live.is_empty()) {
            return false;
        }
        if !self.word_settled(pb, w) {
            return false;
        }
        let tree = self.tree(pb, w);
        let idx = self.words[p as usize].done;
        let mut acc = std::mem::take(&mut self.words[p as usize].acc);
        for (a, v) in acc.iter_mut() {
            if let ExprNode::Agg(kind, op) = pb.arena.expr(*a) {
                let x = self.doms[State::slot(pb, w, *op)].0;
                *v = fold_step(pb.spec, kind, *v, idx, x);
            }
        }
        let pw = &mut self.words[p as usize];
        pw.acc = acc;
        pw.finished.push(tree);
        pw.live.clear();
        pw.done += 1;
        let more = pw.arity.is_some_and(|k| pw.done < k);
        let aggs = pw.aggs.clone();
        let cut = w as usize;
        self.words.truncate(cut);
        self.doms.truncate(cut * pb.n);
        self.active.truncate(cut * pb.n);
        self.queued.truncate(cut * pb.n);
        if more {
            self.spawn_child(pb, p);
        }
        for a in aggs {
            self.enqueue(State::slot(pb, p, a));
        }
        true
    }

    fn propagate(&mut self, pb: &Problem) -> bool {
        self.narrowings = 0;
        loop {
            if self.failed {
                return false;
            }
            if let Some((f, pos)) = self.pending.pop() {
                if !self.assert_formula(pb, f, pos) {
                    return false;
                }
                continue;
            }
            if let Some(i) = self.queue.pop() {
                self.queued[i] = false;
                if !self.revise(pb, i) {
                    return false;
                }
                continue;
            }
            if self.simplify_clauses(pb) {
                continue;
            }
            if self.failed {
                return false;
            }
            if pb.binary && self.fold_last(pb) {
                continue;
            }
            return true;
        }
    }

    fn tree(&self, pb: &Problem, w: u32) -> Tree {
        let base = w as usize * pb.n;
        let labels = (0..pb.n)
            .filter(|&e| self.active[base + e])
            .filter_map(|e| match pb.arena.expr(ExprId(e as u32)) {
                ExprNode::Feature(fid) => Some((*fid, self.doms[base + e].0)),
                _ => None,
            })
            .collect();
        let word = &self.words[w as usize];
        let mut children = word.finished.clone();
        children.extend(word.live.iter().map(|c| self.tree(pb, *c)));
        Tree { labels, children }
    }

    fn needs_arity(&self, pb: &Problem, w: u32) -> bool {
        let word = &self.words[w as usize];
        word.arity.is_none() && !word.aggs.is_empty() && (!pb.binary || w != 0 || self.clauses.is_empty())
    }

    fn arity_bound(&self, pb: &Problem, w: u32) -> u64 {
        let d = self.words[w as usize].depth as usize;
        let weights = pb.weight_caps.get(d).copied().unwrap_or(usize::MAX) as u64;
        pb.arity_cap.min(weights)
    }

    /// Smallest branching point; categories break ties in the order
    /// disjunction, value, degree.
    fn choose(&self, pb: &Problem) -> Step {
        let mut best: Option<(u128, u8, Choice)> = None;
        let mut offer = |count: u128, cat: u8, make: &dyn Fn() -> Choice| {
            if best.as_ref().is_none_or(|(c, k, _)| (count, cat) < (*c, *k)) {
                best = Some((count, cat, make()));
            }
        };
        for (ci, clause) in self.clauses.iter().enumerate() {
            offer(clause.len() as u128, 0, &|| Choice::Clause { index: ci, alts: clause.clone() });
        }
        let mut fallback: Option<usize> = None;
        for w in 0..self.words.len() as u32 {
            let base = w as usize * pb.n;
            for e in 0..pb.n {
                let i = base + e;
                if !self.active[i] || self.valued(i) {
                    continue;
                }
                if !matches!(pb.arena.expr(ExprId(e as u32)), ExprNode::Feature(_)) {
                    fallback.get_or_insert(i);
                    continue;
                }
                let (lo, hi) = self.doms[i];
                let count = (hi - lo) as u128 + 1;
                offer(count, 1, &|| Choice::Pieces { slot: i, pieces: self.pieces(pb, i) });
            }
            if self.needs_arity(pb, w) {
                let last = self.arity_bound(pb, w);
                offer(last as u128 + 1, 2, &|| Choice::Arity { word: w, first: 0, last });
            }
        }
        match best {
            Some((_, _, c)) => Step::Branch(c),
            None => match fallback {
                Some(i) => Step::Branch(Choice::Pieces { slot: i, pieces: self.pieces(pb, i) }),
                None => Step::Complete,
            },
        }
    }

    /// Split order: upward from a raised lower bound, downward from a lowered
    /// upper bound, otherwise zero first.
    fn pieces(&self, pb: &Problem, i: usize) -> Vec<(i64, i64)> {
        let (lo, hi) = self.doms[i];
        if lo > -pb.max {
            vec![(lo, lo), (lo + 1, hi)]
        } else if hi < pb.max {
            vec![(hi, hi), (lo, hi - 1)]
        } else {
            let mut v = vec![(0, 0)];
            if lo < 0 {
                v.push((lo, -1));
            }
            if hi > 0 {
                v.push((1, hi));
            }
            v
        }
    }

    fn apply(&mut self, pb: &Problem, choice: &Choice, alt: u64) {
        match choice {
            Choice::Clause { index, alts } => {
                self.clauses.remove(*index);
                let alt = alt as usize;
                for &(f, pos) in &alts[..alt] {
                    self.pending.push((f, !pos));
                }
                self.pending.push(alts[alt]);
            }
            Choice::Pieces { slot, pieces } => {
                let (lo, hi) = pieces[alt as usize];
                self.narrow(pb, *slot, lo, hi);
            }
            Choice::Arity { word, first, .. } => self.set_arity(pb, *word, first + alt),
        }
    }
}

fn disjuncts(arena: &Arena, f: FormulaId, pos: bool, out: &mut Vec<(FormulaId, bool)>) {
    match (arena.formula(f), pos) {
        (FormulaNode::Or(a, b), true) | (FormulaNode::And(a, b), false) => {
            disjuncts(arena, *a, pos, out);
            disjuncts(arena, *b, pos, out);
        }
        (FormulaNode::Not(a), _) => disjuncts(arena, *a, !pos, out),
        _ => out.push((f, pos)),
    }
}

fn extract(pb: &Problem, f: &Formula, st: &State) -> PointedGraph {
    let tree = st.tree(pb, 0);
    let mut g = LabeledGraph::new(pb.spec, f.arena.features().to_vec());
    fn add(g: &mut LabeledGraph, arena: &Arena, spec: ArithmeticSpec, t: &Tree, name: String) -> NodeId {
        let v = g.add_node(&name).expect("fresh word");
        for (fid, x) in &t.labels {
            g.set_label(v, arena.feature_name(*fid), spec.value(*x).expect("in range")).expect("declared");
        }
        for (i, c) in t.children.iter().enumerate() {
            let child = if name == "ε" { format!("{}", i + 1) } else { format!("{name}.{}", i + 1) };
            let cv = add(g, arena, spec, c, child);
            g.add_edge(v, cv).expect("tree edge");
        }
        v
    }
    let root = add(&mut g, &f.arena, pb.spec, &tree, "ε".into());
    PointedGraph::new(g, root)
}

/// Decides satisfiability of `f` over trees whose out-degrees respect `delta`.
pub fn solve(f: &Formula, delta: DeltaMode, limits: &Limits) -> Verdict {
    solve_with_stats(f, delta, limits).0
}

pub fn solve_with_stats(f: &Formula, delta: DeltaMode, limits: &Limits) -> (Verdict, SolveStats) {
    let pb = Problem::new(f, delta, limits);
    let start = Instant::now();
    let mut stats = SolveStats::default();
    let mut stack: Vec<Frame> = Vec::new();
    let mut current = Some(State::new(&pb));
    let mut truncated_arity = false;
    loop {
        let mut st = match current.take() {
            Some(s) => s,
            None => {
                let Some(frame) = stack.last_mut() else {
                    let v = if truncated_arity { Verdict::Unknown(UnknownReason::DepthLimit) } else { Verdict::Unsat };
                    return (v, stats);
                };
                let alt = frame.next;
                frame.next += 1;
                if frame.next == frame.choice.len() {
                    let fr = stack.pop().expect("frame");
                    let mut s = fr.state;
                    s.apply(&pb, &fr.choice, alt);
                    s
                } else {
                    let mut s = frame.state.clone();
                    s.apply(&pb, &frame.choice, alt);
                    s
                }
            }
        };
        stats.nodes += 1;
        if stats.nodes > limits.max_nodes {
            return (Verdict::Unknown(UnknownReason::NodeLimit), stats);
        }
        if stats.nodes % 256 == 0 && limits.time.is_some_and(|t| start.elapsed() > t) {
            return (Verdict::Unknown(UnknownReason::Timeout), stats);
        }
        stats.max_words = stats.max_words.max(st.words.len());
        if !st.propagate(&pb) {
            continue;
        }
        match st.choose(&pb) {
            Step::Complete => {
                let model = extract(&pb, f, &st);
                assert!(
                    check_formula(f, &model).expect("models declare every feature"),
                    "tableau model fails the formula:\n{}",
                    model.save_json()
                );
                return (Verdict::Sat(model), stats);
            }
            Step::Branch(choice) => {
                if let Choice::Arity { word, last, .. } = choice {
                    if pb.cap_truncated && last == pb.arity_cap && st.arity_bound(&pb, word) == pb.arity_cap {
                        truncated_arity = true;
                    }
                }
                stack.push(Frame { state: st, choice, next: 0 });
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum LvpVerdict {
    Valid,
    Invalid { counterexample: PointedGraph, outputs: Vec<Value> },
    Unknown(UnknownReason),
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error("counterexample does not violate the instance: {0}")]
    Revalidation(String),
}

/// Compiles the instance and searches for a counterexample.
pub fn verify_lvp(inst: &LvpInstance, limits: &Limits) -> Result<LvpVerdict, VerifyError> {
    let compiled = compile_lvp(inst)?;
    match solve(&compiled.formula, inst.delta, limits) {
        Verdict::Unsat => Ok(LvpVerdict::Valid),
        Verdict::Unknown(r) => Ok(LvpVerdict::Unknown(r)),
        Verdict::Sat(model) => {
            let counterexample = project_inputs(&model, &inst.gnn.input_names);
            let outputs = gnn_eval(&inst.gnn, &counterexample)?;
            if !inst.input_holds(&counterexample)? {
                return Err(VerifyError::Revalidation("input constraints fail at the point".into()));
            }
            if inst.output_holds(&outputs)? {
                return Err(VerifyError::Revalidation("output constraints hold".into()));
            }
            Ok(LvpVerdict::Invalid { counterexample, outputs })
        }
    }
}

/// Restricts a model to the given features; missing ones are labelled 0.
pub fn project_inputs(model: &PointedGraph, names: &[String]) -> PointedGraph {
    let src = &model.graph;
    let mut g = LabeledGraph::new(src.spec(), names.to_vec());
    for v in src.nodes() {
        let u = g.add_node(src.name(v)).expect("distinct names");
        for n in names {
            if let Some(x) = src.label_of(v, n) {
                g.set_label(u, n, x).expect("declared");
            }
        }
    }
    for &(s, t) in src.edges() {
        g.add_edge(s, t).expect("same edges");
    }
    PointedGraph::new(g, model.point)
}
