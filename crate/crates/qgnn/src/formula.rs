//! Expressions and formulas as a hash-consed DAG, with a text syntax.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::arith::{Activation, ArithError, ArithmeticSpec, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExprId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FormulaId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureId(pub u32);

impl ExprId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl FormulaId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl FeatureId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum AggKind {
    Sum,
    Mean,
    Max,
    /// Fixed weight per successor position.
    Weighted(Vec<Value>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ExprNode {
    Const(Value),
    Feature(FeatureId),
    Act(Activation, ExprId),
    Agg(AggKind, ExprId),
    Sum(ExprId, ExprId),
    Scale(Value, ExprId),
}

impl ExprNode {
    pub fn children(&self) -> impl Iterator<Item = ExprId> {
        let (a, b) = match *self {
            ExprNode::Const(_) | ExprNode::Feature(_) => (None, None),
            ExprNode::Act(_, c) | ExprNode::Agg(_, c) | ExprNode::Scale(_, c) => (Some(c), None),
            ExprNode::Sum(l, r) => (Some(l), Some(r)),
        };
        a.into_iter().chain(b)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum FormulaNode {
    Geq(ExprId, Value),
    Eq(ExprId, Value),
    Not(FormulaId),
    And(FormulaId, FormulaId),
    Or(FormulaId, FormulaId),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormulaError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("at {line}:{col}: {source}")]
    Literal {
        line: usize,
        col: usize,
        #[source]
        source: ArithError,
    },
    #[error("value of spec {found} used in an arena over {expected}")]
    SpecMismatch { expected: ArithmeticSpec, found: ArithmeticSpec },
}

/// Node storage shared by every formula built over it.
#[derive(Clone, Debug)]
pub struct Arena {
    spec: ArithmeticSpec,
    exprs: Vec<ExprNode>,
    expr_index: FxHashMap<ExprNode, ExprId>,
    formulas: Vec<FormulaNode>,
    formula_index: FxHashMap<FormulaNode, FormulaId>,
    features: Vec<String>,
    feature_index: FxHashMap<String, FeatureId>,
}

impl Arena {
    pub fn new(spec: ArithmeticSpec) -> Self {
        Arena {
            spec,
            exprs: Vec::new(),
            expr_index: FxHashMap::default(),
            formulas: Vec::new(),
            formula_index: FxHashMap::default(),
            features: Vec::new(),
            feature_index: FxHashMap::default(),
        }
    }

    pub fn spec(&self) -> ArithmeticSpec {
        self.spec
    }

    pub fn expr(&self, id: ExprId) -> &ExprNode {
        &self.exprs[id.index()]
    }

    pub fn formula(&self, id: FormulaId) -> &FormulaNode {
        &self.formulas[id.index()]
    }

    pub fn expr_count(&self) -> usize {
        self.exprs.len()
    }

    pub fn formula_count(&self) -> usize {
        self.formulas.len()
    }

    pub fn feature_name(&self, id: FeatureId) -> &str {
        &self.features[id.index()]
    }

    pub fn feature_id(&self, name: &str) -> Option<FeatureId> {
        self.feature_index.get(name).copied()
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn intern_feature(&mut self, name: &str) -> FeatureId {
        if let Some(&id) = self.feature_index.get(name) {
            return id;
        }
        let id = FeatureId(self.features.len() as u32);
        self.features.push(name.to_string());
        self.feature_index.insert(name.to_string(), id);
        id
    }

    fn check_spec(&self, v: Value) {
        assert_eq!(v.spec(), self.spec, "value of a foreign spec inserted into arena");
    }

    fn mk_expr(&mut self, node: ExprNode) -> ExprId {
        if let Some(&id) = self.expr_index.get(&node) {
            return id;
        }
        let id = ExprId(self.exprs.len() as u32);
        self.exprs.push(node.clone());
        self.expr_index.insert(node, id);
        id
    }

    fn mk_formula(&mut self, node: FormulaNode) -> FormulaId {
        if let Some(&id) = self.formula_index.get(&node) {
            return id;
        }
        let id = FormulaId(self.formulas.len() as u32);
        self.formulas.push(node.clone());
        self.formula_index.insert(node, id);
        id
    }

    pub fn constant(&mut self, v: Value) -> ExprId {
        self.check_spec(v);
        self.mk_expr(ExprNode::Const(v))
    }

    pub fn feature(&mut self, name: &str) -> ExprId {
        let f = self.intern_feature(name);
        self.mk_expr(ExprNode::Feature(f))
    }

    pub fn act(&mut self, a: Activation, e: ExprId) -> ExprId {
        self.mk_expr(ExprNode::Act(a, e))
    }

    pub fn agg(&mut self, kind: AggKind, e: ExprId) -> ExprId {
        if let AggKind::Weighted(ws) = &kind {
            ws.iter().for_each(|w| self.check_spec(*w));
        }
        self.mk_expr(ExprNode::Agg(kind, e))
    }

    pub fn sum(&mut self, a: ExprId, b: ExprId) -> ExprId {
        self.mk_expr(ExprNode::Sum(a, b))
    }

    pub fn scale(&mut self, c: Value, e: ExprId) -> ExprId {
        self.check_spec(c);
        self.mk_expr(ExprNode::Scale(c, e))
    }

    /// `a + (-1)*b`
    pub fn sub(&mut self, a: ExprId, b: ExprId) -> ExprId {
        let m = self.scale(self.spec.minus_one(), b);
        self.sum(a, m)
    }

    pub fn geq(&mut self, e: ExprId, k: Value) -> FormulaId {
        self.check_spec(k);
        self.mk_formula(FormulaNode::Geq(e, k))
    }

    pub fn eq(&mut self, e: ExprId, k: Value) -> FormulaId {
        self.check_spec(k);
        self.mk_formula(FormulaNode::Eq(e, k))
    }

    pub fn not(&mut self, f: FormulaId) -> FormulaId {
        self.mk_formula(FormulaNode::Not(f))
    }

    pub fn and(&mut self, a: FormulaId, b: FormulaId) -> FormulaId {
        self.mk_formula(FormulaNode::And(a, b))
    }

    pub fn or(&mut self, a: FormulaId, b: FormulaId) -> FormulaId {
        self.mk_formula(FormulaNode::Or(a, b))
    }

    /// `x1 - x1 >= 0`
    pub fn truth(&mut self) -> FormulaId {
        let x = self.feature("x1");
        let e = self.sub(x, x);
        let zero = self.spec.zero();
        self.geq(e, zero)
    }

    pub fn falsity(&mut self) -> FormulaId {
        let t = self.truth();
        self.not(t)
    }

    /// Left-nested conjunction; the empty conjunction is `true`.
    pub fn and_all(&mut self, parts: impl IntoIterator<Item = FormulaId>) -> FormulaId {
        let mut it = parts.into_iter();
        match it.next() {
            None => self.truth(),
            Some(first) => it.fold(first, |acc, f| self.and(acc, f)),
        }
    }

    /// Left-nested disjunction; the empty disjunction is `not true`.
    pub fn or_all(&mut self, parts: impl IntoIterator<Item = FormulaId>) -> FormulaId {
        let mut it = parts.into_iter();
        match it.next() {
            None => self.falsity(),
            Some(first) => it.fold(first, |acc, f| self.or(acc, f)),
        }
    }

    /// `e1 = k` expanded into `(e1 >= k) and (-1*e1 + k >= 0)`.
    pub fn desugar_eq(&mut self, e: ExprId, k: Value) -> FormulaId {
        let a = self.geq(e, k);
        let neg = self.scale(self.spec.minus_one(), e);
        let kc = self.constant(k);
        let s = self.sum(neg, kc);
        let zero = self.spec.zero();
        let b = self.geq(s, zero);
        self.and(a, b)
    }
}

/// A formula rooted in its own arena.
#[derive(Clone, Debug)]
pub struct Formula {
    pub arena: Arena,
    pub root: FormulaId,
}

impl Formula {
    pub fn new(arena: Arena, root: FormulaId) -> Self {
        Formula { arena, root }
    }

    pub fn spec(&self) -> ArithmeticSpec {
        self.arena.spec
    }

    pub fn parse(text: &str, spec: ArithmeticSpec) -> Result<Formula, FormulaError> {
        Self::parse_with(text, spec, Activation::Relu)
    }

    /// Parses with `alpha` bound to the given activation.
    pub fn parse_with(text: &str, spec: ArithmeticSpec, alpha: Activation) -> Result<Formula, FormulaError> {
        let mut arena = Arena::new(spec);
        let root = parse_into(&mut arena, text, alpha)?;
        Ok(Formula { arena, root })
    }

    pub fn print(&self) -> String {
        print_formula(&self.arena, self.root)
    }

    pub fn agg_depth(&self) -> usize {
        agg_depth(&self.arena, self.root)
    }

    pub fn features_of(&self) -> BTreeSet<String> {
        features_of(&self.arena, self.root)
            .into_iter()
            .map(|f| self.arena.feature_name(f).to_string())
            .collect()
    }

    /// Number of distinct expression and formula nodes reachable from the root.
    pub fn dag_size(&self) -> usize {
        let (fs, es) = reachable(&self.arena, self.root);
        fs.len() + es.len()
    }

    pub fn rewrite_truncrelu(&self) -> Formula {
        let mut arena = self.arena.clone();
        let root = rewrite_truncrelu(&mut arena, self.root);
        Formula { arena, root }
    }
}

/// Reachable formula and expression nodes, each in ascending id order.
pub fn reachable(arena: &Arena, root: FormulaId) -> (Vec<FormulaId>, Vec<ExprId>) {
    let mut seen_f = vec![false; arena.formula_count()];
    let mut seen_e = vec![false; arena.expr_count()];
    let mut stack = vec![root];
    let mut estack = Vec::new();
    while let Some(f) = stack.pop() {
        if std::mem::replace(&mut seen_f[f.index()], true) {
            continue;
        }
        match *arena.formula(f) {
            FormulaNode::Geq(e, _) | FormulaNode::Eq(e, _) => estack.push(e),
            FormulaNode::Not(a) => stack.push(a),
            FormulaNode::And(a, b) | FormulaNode::Or(a, b) => stack.extend([a, b]),
        }
    }
    while let Some(e) = estack.pop() {
        if std::mem::replace(&mut seen_e[e.index()], true) {
            continue;
        }
        estack.extend(arena.expr(e).children());
    }
    let fs = (0..seen_f.len()).filter(|&i| seen_f[i]).map(|i| FormulaId(i as u32)).collect();
    let es = (0..seen_e.len()).filter(|&i| seen_e[i]).map(|i| ExprId(i as u32)).collect();
    (fs, es)
}

pub fn expr_agg_depth(arena: &Arena, e: ExprId, memo: &mut FxHashMap<ExprId, usize>) -> usize {
    if let Some(&d) = memo.get(&e) {
        return d;
    }
    let node = arena.expr(e);
    let below = node.children().map(|c| expr_agg_depth(arena, c, memo)).max().unwrap_or(0);
    let d = if matches!(node, ExprNode::Agg(..)) { below + 1 } else { below };
    memo.insert(e, d);
    d
}

pub fn agg_depth(arena: &Arena, root: FormulaId) -> usize {
    let (_, es) = reachable(arena, root);
    let mut memo = FxHashMap::default();
    es.into_iter().map(|e| expr_agg_depth(arena, e, &mut memo)).max().unwrap_or(0)
}

pub fn features_of(arena: &Arena, root: FormulaId) -> BTreeSet<FeatureId> {
    let (_, es) = reachable(arena, root);
    es.into_iter()
        .filter_map(|e| match arena.expr(e) {
            ExprNode::Feature(f) => Some(*f),
            _ => None,
        })
        .collect()
}

/// Replaces each `truncrelu(E)` by `relu(relu(E) + (-1)*relu(E + (-1)*1))`.
pub fn rewrite_truncrelu(arena: &mut Arena, root: FormulaId) -> FormulaId {
    let mut emap: FxHashMap<ExprId, ExprId> = FxHashMap::default();
    let mut fmap: FxHashMap<FormulaId, FormulaId> = FxHashMap::default();
    rw_formula(arena, root, &mut emap, &mut fmap)
}

fn rw_formula(
    arena: &mut Arena,
    f: FormulaId,
    emap: &mut FxHashMap<ExprId, ExprId>,
    fmap: &mut FxHashMap<FormulaId, FormulaId>,
) -> FormulaId {
    if let Some(&g) = fmap.get(&f) {
        return g;
    }
    let g = match arena.formula(f).clone() {
        FormulaNode::Geq(e, k) => {
            let e = rw_expr(arena, e, emap);
            arena.geq(e, k)
        }
        FormulaNode::Eq(e, k) => {
            let e = rw_expr(arena, e, emap);
            arena.eq(e, k)
        }
        FormulaNode::Not(a) => {
            let a = rw_formula(arena, a, emap, fmap);
            arena.not(a)
        }
        FormulaNode::And(a, b) => {
            let a = rw_formula(arena, a, emap, fmap);
            let b = rw_formula(arena, b, emap, fmap);
            arena.and(a, b)
        }
        FormulaNode::Or(a, b) => {
            let a = rw_formula(arena, a, emap, fmap);
            let b = rw_formula(arena, b, emap, fmap);
            arena.or(a, b)
        }
    };
    fmap.insert(f, g);
    g
}

fn rw_expr(arena: &mut Arena, e: ExprId, emap: &mut FxHashMap<ExprId, ExprId>) -> ExprId {
    if let Some(&r) = emap.get(&e) {
        return r;
    }
    let r = match arena.expr(e).clone() {
        ExprNode::Const(_) | ExprNode::Feature(_) => e,
        ExprNode::Act(Activation::TruncRelu, c) => {
            let c = rw_expr(arena, c, emap);
            let spec = arena.spec();
            let one = arena.constant(spec.one());
            let shifted = arena.sub(c, one);
            let hi = arena.act(Activation::Relu, shifted);
            let lo = arena.act(Activation::Relu, c);
            let diff = arena.sub(lo, hi);
            arena.act(Activation::Relu, diff)
        }
        ExprNode::Act(a, c) => {
            let c = rw_expr(arena, c, emap);
            arena.act(a, c)
        }
        ExprNode::Agg(k, c) => {
            let c = rw_expr(arena, c, emap);
            arena.agg(k, c)
        }
        ExprNode::Sum(a, b) => {
            let a = rw_expr(arena, a, emap);
            let b = rw_expr(arena, b, emap);
            arena.sum(a, b)
        }
        ExprNode::Scale(c, a) => {
            let a = rw_expr(arena, a, emap);
            arena.scale(c, a)
        }
    };
    emap.insert(e, r);
    r
}

// ---------------------------------------------------------------- printing

pub fn print_formula(arena: &Arena, f: FormulaId) -> String {
    let mut out = String::new();
    write_disj(arena, f, &mut out);
    out
}

pub fn print_expr(arena: &Arena, e: ExprId) -> String {
    let mut out = String::new();
    write_expr(arena, e, &mut out);
    out
}

fn write_disj(arena: &Arena, f: FormulaId, out: &mut String) {
    match *arena.formula(f) {
        FormulaNode::Or(a, b) => {
            write_disj(arena, a, out);
            out.push_str(" or ");
            write_conj(arena, b, out);
        }
        _ => write_conj(arena, f, out),
    }
}

fn write_conj(arena: &Arena, f: FormulaId, out: &mut String) {
    match *arena.formula(f) {
        FormulaNode::And(a, b) => {
            write_conj(arena, a, out);
            out.push_str(" and ");
            write_lit(arena, b, out);
        }
        _ => write_lit(arena, f, out),
    }
}

fn write_lit(arena: &Arena, f: FormulaId, out: &mut String) {
    let spec = arena.spec();
    match *arena.formula(f) {
        FormulaNode::Geq(e, k) => {
            write_expr(arena, e, out);
            let _ = write!(out, " >= {}", spec.format_payload(k.payload()));
        }
        FormulaNode::Eq(e, k) => {
            write_expr(arena, e, out);
            let _ = write!(out, " = {}", spec.format_payload(k.payload()));
        }
        FormulaNode::Not(a) => {
            out.push_str("not ");
            write_lit(arena, a, out);
        }
        FormulaNode::And(..) | FormulaNode::Or(..) => {
            out.push('(');
            write_disj(arena, f, out);
            out.push(')');
        }
    }
}

fn write_expr(arena: &Arena, e: ExprId, out: &mut String) {
    match *arena.expr(e) {
        ExprNode::Sum(a, b) => {
            write_expr(arena, a, out);
            out.push_str(" + ");
            write_term(arena, b, out);
        }
        _ => write_term(arena, e, out),
    }
}

fn write_term(arena: &Arena, e: ExprId, out: &mut String) {
    match arena.expr(e) {
        ExprNode::Scale(c, a) => {
            out.push_str(&arena.spec().format_payload(c.payload()));
            out.push('*');
            write_factor(arena, *a, out);
        }
        _ => write_factor(arena, e, out),
    }
}

fn write_factor(arena: &Arena, e: ExprId, out: &mut String) {
    let spec = arena.spec();
    match arena.expr(e) {
        ExprNode::Const(v) => out.push_str(&spec.format_payload(v.payload())),
        ExprNode::Feature(f) => out.push_str(arena.feature_name(*f)),
        ExprNode::Act(a, c) => {
            let _ = write!(out, "{}(", a.name());
            write_expr(arena, *c, out);
            out.push(')');
        }
        ExprNode::Agg(kind, c) => {
            match kind {
                AggKind::Sum => out.push_str("agg("),
                AggKind::Mean => out.push_str("mean("),
                AggKind::Max => out.push_str("maxagg("),
                AggKind::Weighted(ws) => {
                    let ws: Vec<String> = ws.iter().map(|w| spec.format_payload(w.payload())).collect();
                    let _ = write!(out, "wagg[{}](", ws.join(", "));
                }
            }
            write_expr(arena, *c, out);
            out.push(')');
        }
        ExprNode::Sum(..) | ExprNode::Scale(..) => {
            out.push('(');
            write_expr(arena, e, out);
            out.push(')');
        }
    }
}

// ----------------------------------------------------------------- parsing

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(String),
    Ident(String),
    Sym(&'static str),
    End,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, FormulaError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks: Vec<Token> = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let push = |tok, n: usize, toks: &mut Vec<Token>| {
            toks.push(Token { tok, line: l0, col: c0 });
            n
        };
        let operand_before = matches!(
            toks.last().map(|t| &t.tok),
            Some(Tok::Num(_)) | Some(Tok::Sym(")"))
        ) || matches!(toks.last().map(|t| &t.tok), Some(Tok::Ident(w)) if !matches!(w.as_str(), "not" | "and" | "or"));
        let n = if c == '\n' {
            line += 1;
            col = 0;
            1
        } else if c.is_whitespace() {
            1
        } else if c == '#' {
            let mut j = i;
            while j < chars.len() && chars[j] != '\n' {
                j += 1;
            }
            j - i
        } else if c.is_ascii_digit()
            || c == '.'
            || (c == '-' && !operand_before && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit() || *d == '.'))
        {
            let mut j = i + 1;
            while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                j += 1;
            }
            push(Tok::Num(chars[i..j].iter().collect()), j - i, &mut toks)
        } else if c.is_alphabetic() || c == '_' {
            let mut j = i + 1;
            while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_' || chars[j] == '\'') {
                j += 1;
            }
            push(Tok::Ident(chars[i..j].iter().collect()), j - i, &mut toks)
        } else if c == '>' && chars.get(i + 1) == Some(&'=') {
            push(Tok::Sym(">="), 2, &mut toks)
        } else {
            let sym = match c {
                '(' => "(",
                ')' => ")",
                '[' => "[",
                ']' => "]",
                ',' => ",",
                '+' => "+",
                '-' => "-",
                '*' => "*",
                '=' => "=",
                '<' => "<",
                _ => {
                    return Err(FormulaError::Syntax { line, col, msg: format!("unexpected character `{c}`") });
                }
            };
            push(Tok::Sym(sym), 1, &mut toks)
        };
        i += n;
        col += n;
    }
    toks.push(Token { tok: Tok::End, line, col });
    Ok(toks)
}

const KEYWORDS: &[&str] =
    &["and", "or", "not", "true", "alpha", "relu", "truncrelu", "id", "agg", "mean", "maxagg", "wagg"];

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    arena: &'a mut Arena,
    alpha: Activation,
}

type PResult<T> = Result<T, FormulaError>;

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let t = &self.toks[self.pos];
        Err(FormulaError::Syntax { line: t.line, col: t.col, msg: msg.into() })
    }

    fn describe(&self) -> String {
        match self.peek() {
            Tok::Num(n) => format!("number `{n}`"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::End => "end of input".to_string(),
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(t) if *t == s)
    }

    fn is_kw(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(t) if t == s)
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.is_sym(s) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{s}`, found {}", self.describe()))
        }
    }

    fn number(&mut self) -> PResult<Value> {
        let t = self.toks[self.pos].clone();
        match &t.tok {
            Tok::Num(n) => {
                self.pos += 1;
                self.arena.spec().parse_value(n).map_err(|source| FormulaError::Literal {
                    line: t.line,
                    col: t.col,
                    source,
                })
            }
            _ => self.err(format!("expected a number, found {}", self.describe())),
        }
    }

    fn formula(&mut self) -> PResult<FormulaId> {
        let mut acc = self.conj()?;
        while self.is_kw("or") {
            self.pos += 1;
            let rhs = self.conj()?;
            acc = self.arena.or(acc, rhs);
        }
        Ok(acc)
    }

    fn conj(&mut self) -> PResult<FormulaId> {
        let mut acc = self.lit()?;
        while self.is_kw("and") {
            self.pos += 1;
            let rhs = self.lit()?;
            acc = self.arena.and(acc, rhs);
        }
        Ok(acc)
    }

    fn lit(&mut self) -> PResult<FormulaId> {
        if self.is_kw("not") {
            self.pos += 1;
            let inner = self.lit()?;
            return Ok(self.arena.not(inner));
        }
        if self.is_kw("true") {
            self.pos += 1;
            return Ok(self.arena.truth());
        }
        if self.is_sym("(") {
            let save = self.pos;
            if let Ok(f) = self.atom() {
                return Ok(f);
            }
            self.pos = save + 1;
            let f = self.formula()?;
            self.expect_sym(")")?;
            return Ok(f);
        }
        self.atom()
    }

    fn atom(&mut self) -> PResult<FormulaId> {
        let e = self.expr()?;
        if self.is_sym(">=") {
            self.pos += 1;
            let k = self.number()?;
            Ok(self.arena.geq(e, k))
        } else if self.is_sym("=") {
            self.pos += 1;
            let k = self.number()?;
            Ok(self.arena.eq(e, k))
        } else if self.is_sym("<") {
            self.pos += 1;
            let k = self.number()?;
            let g = self.arena.geq(e, k);
            Ok(self.arena.not(g))
        } else {
            self.err(format!("expected `>=`, `=` or `<`, found {}", self.describe()))
        }
    }

    fn expr(&mut self) -> PResult<ExprId> {
        let mut acc = self.term()?;
        loop {
            if self.is_sym("+") {
                self.pos += 1;
                let t = self.term()?;
                acc = self.arena.sum(acc, t);
            } else if self.is_sym("-") {
                self.pos += 1;
                let t = self.term()?;
                acc = self.arena.sub(acc, t);
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> PResult<ExprId> {
        if matches!(self.peek(), Tok::Num(_)) && matches!(self.peek_at(1), Tok::Sym("*")) {
            let c = self.number()?;
            self.pos += 1;
            let f = self.factor()?;
            return Ok(self.arena.scale(c, f));
        }
        self.factor()
    }

    fn factor(&mut self) -> PResult<ExprId> {
        match self.peek().clone() {
            Tok::Num(_) => {
                let v = self.number()?;
                Ok(self.arena.constant(v))
            }
            Tok::Sym("(") => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let act = match name.as_str() {
                    "alpha" => Some(self.alpha),
                    "relu" => Some(Activation::Relu),
                    "truncrelu" => Some(Activation::TruncRelu),
                    "id" => Some(Activation::Id),
                    _ => None,
                };
                let agg = match name.as_str() {
                    "agg" => Some(AggKind::Sum),
                    "mean" => Some(AggKind::Mean),
                    "maxagg" => Some(AggKind::Max),
                    _ => None,
                };
                if let Some(a) = act {
                    self.pos += 1;
                    let e = self.paren_expr()?;
                    Ok(self.arena.act(a, e))
                } else if let Some(k) = agg {
                    self.pos += 1;
                    let e = self.paren_expr()?;
                    Ok(self.arena.agg(k, e))
                } else if name == "wagg" {
                    self.pos += 1;
                    self.expect_sym("[")?;
                    let mut ws = vec![self.number()?];
                    while self.is_sym(",") {
                        self.pos += 1;
                        ws.push(self.number()?);
                    }
                    self.expect_sym("]")?;
                    let e = self.paren_expr()?;
                    Ok(self.arena.agg(AggKind::Weighted(ws), e))
                } else if KEYWORDS.contains(&name.as_str()) {
                    self.err(format!("unexpected keyword `{name}`"))
                } else {
                    self.pos += 1;
                    Ok(self.arena.feature(&name))
                }
            }
            _ => self.err(format!("expected an expression, found {}", self.describe())),
        }
    }

    fn paren_expr(&mut self) -> PResult<ExprId> {
        self.expect_sym("(")?;
        let e = self.expr()?;
        self.expect_sym(")")?;
        Ok(e)
    }
}

/// Parses formula text into an existing arena.
pub fn parse_into(arena: &mut Arena, text: &str, alpha: Activation) -> Result<FormulaId, FormulaError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, arena, alpha };
    let f = p.formula()?;
    if *p.peek() != Tok::End {
        return p.err(format!("unexpected {} after formula", p.describe()));
    }
    Ok(f)
}

/// Parses an expression (no comparison) into an existing arena.
pub fn parse_expr_into(arena: &mut Arena, text: &str, alpha: Activation) -> Result<ExprId, FormulaError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, arena, alpha };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.err(format!("unexpected {} after expression", p.describe()));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sat(a: i64) -> ArithmeticSpec {
        ArithmeticSpec::sat_int(a).unwrap()
    }

    #[test]
    fn negative_literal_after_keyword() {
        let spec = ArithmeticSpec::sat_int(3).unwrap();
        let f = Formula::parse("not -2*x1 >= 0 or -1*x2 >= 1 and -1 * x1 = -3", spec).unwrap();
        assert_eq!(f.print(), "not -2*x1 >= 0 or -1*x2 >= 1 and -1*x1 = -3");
    }

    #[test]
    fn parses_simple_atom() {
        let s = sat(15);
        let f = Formula::parse("agg(x1) >= 1", s).unwrap();
        let mut a = Arena::new(s);
        let x = a.feature("x1");
        let g = a.agg(AggKind::Sum, x);
        let root = a.geq(g, s.one());
        assert_eq!(f.print(), Formula::new(a, root).print());
        assert!(matches!(f.arena.formula(f.root), FormulaNode::Geq(e, k)
            if *k == s.one() && matches!(f.arena.expr(*e), ExprNode::Agg(AggKind::Sum, _))));
    }

    #[test]
    fn shares_repeated_subexpressions() {
        let f = Formula::parse("(xi >= 3) and (-1*xi + 3 >= 0)", sat(7)).unwrap();
        let FormulaNode::And(a, b) = *f.arena.formula(f.root) else { panic!() };
        let FormulaNode::Geq(e1, _) = *f.arena.formula(a) else { panic!() };
        let FormulaNode::Geq(e2, _) = *f.arena.formula(b) else { panic!() };
        let ExprNode::Sum(l, _) = *f.arena.expr(e2) else { panic!() };
        let ExprNode::Scale(_, inner) = *f.arena.expr(l) else { panic!() };
        assert_eq!(inner, e1);
    }

    #[test]
    fn parses_constant_aggregation() {
        let s = sat(15);
        let f = Formula::parse("agg(3) = 10", s).unwrap();
        let FormulaNode::Eq(e, k) = *f.arena.formula(f.root) else { panic!() };
        assert_eq!(k.payload(), 10);
        let ExprNode::Agg(AggKind::Sum, c) = *f.arena.expr(e) else { panic!() };
        assert_eq!(*f.arena.expr(c), ExprNode::Const(s.from_int(3)));
    }

    #[test]
    fn errors_carry_positions() {
        let s = sat(7);
        match Formula::parse("x1 >= 1 and\n  (x2 >", s) {
            Err(FormulaError::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match Formula::parse("x1 >= 9", s) {
            Err(FormulaError::Literal { line: 1, col: 7, source: ArithError::OutOfRange(lit, _) }) => {
                assert_eq!(lit, "9")
            }
            other => panic!("{other:?}"),
        }
        assert!(Formula::parse("x1 >= 1 x2", s).is_err());
        assert!(Formula::parse("and >= 1", s).is_err());
        assert!(Formula::parse("x1 $ 1", s).is_err());
    }

    #[test]
    fn sugar_forms() {
        let s = sat(7);
        let f = Formula::parse("x1 - x2 < 2", s).unwrap();
        assert_eq!(f.print(), "not x1 + -1*x2 >= 2");
        let t = Formula::parse("true", s).unwrap();
        assert_eq!(t.print(), "x1 + -1*x1 >= 0");
        let a = Formula::parse("alpha(x1) >= 0", s).unwrap();
        assert_eq!(a.print(), "relu(x1) >= 0");
        let b = Formula::parse_with("alpha(x1) >= 0", s, Activation::TruncRelu).unwrap();
        assert_eq!(b.print(), "truncrelu(x1) >= 0");
    }

    #[test]
    fn prints_canonical_literals() {
        let s = ArithmeticSpec::fixed_point(32, 4).unwrap();
        let mut a = Arena::new(s);
        let z = a.constant(s.zero());
        let root = a.geq(z, s.zero());
        assert_eq!(print_expr(&a, z), "0.0000");
        assert_eq!(Formula::new(a, root).print(), "0.0000 >= 0.0000");
    }

    #[test]
    fn agg_depths() {
        let s = sat(7);
        let d = |t: &str| Formula::parse(t, s).unwrap().agg_depth();
        assert_eq!(d("x1 >= 0"), 0);
        assert_eq!(d("agg(x1) >= 1"), 1);
        assert_eq!(d("agg(x1 + agg(agg(x2))) >= 1 or maxagg(1) = 0"), 3);
    }

    #[test]
    fn feature_sets() {
        let s = sat(7);
        let names = |t: &str| Formula::parse(t, s).unwrap().features_of().into_iter().collect::<Vec<_>>();
        assert_eq!(names("x1 + alpha(x2) >= 0"), ["x1", "x2"]);
        assert!(names("agg(1) = 4").is_empty());
    }

    #[test]
    fn truncrelu_rewrite_shape() {
        let s = sat(8);
        let f = Formula::parse("truncrelu(x1) >= 1", s).unwrap();
        let r = f.rewrite_truncrelu();
        assert_eq!(r.print(), "relu(relu(x1) + -1*relu(x1 + -1*1)) >= 1");
        let g = Formula::parse("relu(x1) + agg(x2) >= 1", s).unwrap();
        let rg = g.rewrite_truncrelu();
        assert_eq!(rg.root, g.root);
        assert_eq!(rg.arena.expr_count(), g.arena.expr_count());
    }

    #[test]
    fn weighted_syntax_round_trips() {
        let s = sat(3);
        let f = Formula::parse("wagg[1, -2](x1) >= 1", s).unwrap();
        assert_eq!(f.print(), "wagg[1, -2](x1) >= 1");
    }

    #[test]
    fn nested_connectives_round_trip() {
        let s = sat(3);
        for text in [
            "(x1 >= 1 or x2 >= 1) and not (x1 = 0 and x2 = 1)",
            "x1 >= 1 or (x2 >= 1 or x1 = 2)",
            "not not x1 >= 0",
            "(x1 + x2) + (x1 + -1) >= 0",
            "2*(x1 + x2) >= 1 and 3*(2*x1) = 0",
            "(x1 >= -1)",
            "mean(x1) + maxagg(agg(x2)) >= -3",
        ] {
            let f = Formula::parse(text, s).unwrap();
            let p = f.print();
            let g = Formula::parse(&p, s).unwrap();
            assert_eq!(g.print(), p, "{text}");
            assert_eq!(g.dag_size(), f.dag_size(), "{text}");
        }
    }
}
