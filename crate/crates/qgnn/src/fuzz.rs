//! Random formulas and the tableau-versus-oracle differential harness.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arith::{Activation, ArithmeticSpec, Value};
use crate::formula::{AggKind, Arena, ExprId, Formula, FormulaId};
use crate::semantics::{brute_force_sat, OracleLimits, Verdict};
use crate::tableau::{solve, DeltaMode, Limits};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggFlavor {
    Sum,
    Mean,
    Max,
    Weighted,
}

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub spec: ArithmeticSpec,
    pub features: usize,
    pub max_agg_depth: usize,
    /// Nesting of non-aggregation constructors below an atom.
    pub max_expr_depth: usize,
    pub max_atoms: usize,
    pub flavors: Vec<AggFlavor>,
}

impl GenConfig {
    pub fn small(spec: ArithmeticSpec) -> Self {
        GenConfig { spec, features: 2, max_agg_depth: 2, max_expr_depth: 3, max_atoms: 3, flavors: vec![AggFlavor::Sum] }
    }
}

fn value(rng: &mut impl Rng, spec: ArithmeticSpec) -> Value {
    let m = spec.max_payload();
    spec.value(rng.gen_range(-m..=m)).expect("in range")
}

fn expr(rng: &mut impl Rng, cfg: &GenConfig, arena: &mut Arena, depth: usize, aggs: usize) -> ExprId {
    let spec = cfg.spec;
    if depth == 0 || rng.gen_bool(0.3) {
        return if rng.gen_bool(0.75) {
            let i = rng.gen_range(1..=cfg.features);
            arena.feature(&format!("x{i}"))
        } else {
            let v = value(rng, spec);
            arena.constant(v)
        };
    }
    let pick = rng.gen_range(0..if aggs > 0 { 5 } else { 3 });
    match pick {
        0 => {
            let a = *[Activation::Relu, Activation::Id, Activation::TruncRelu].choose(rng).expect("non-empty");
            let c = expr(rng, cfg, arena, depth - 1, aggs);
            arena.act(a, c)
        }
        1 => {
            let a = expr(rng, cfg, arena, depth - 1, aggs);
            let b = expr(rng, cfg, arena, depth - 1, aggs);
            arena.sum(a, b)
        }
        2 => {
            let k = value(rng, spec);
            let c = expr(rng, cfg, arena, depth - 1, aggs);
            arena.scale(k, c)
        }
        _ => {
            let kind = match cfg.flavors.choose(rng).copied().unwrap_or(AggFlavor::Sum) {
                AggFlavor::Sum => AggKind::Sum,
                AggFlavor::Mean => AggKind::Mean,
                AggFlavor::Max => AggKind::Max,
                AggFlavor::Weighted => {
                    let n = rng.gen_range(2..=3);
                    AggKind::Weighted((0..n).map(|_| value(rng, spec)).collect())
                }
            };
            let c = expr(rng, cfg, arena, cfg.max_expr_depth, aggs - 1);
            arena.agg(kind, c)
        }
    }
}

fn formula(rng: &mut impl Rng, cfg: &GenConfig, arena: &mut Arena, atoms: usize) -> FormulaId {
    if atoms <= 1 {
        let e = expr(rng, cfg, arena, cfg.max_expr_depth, cfg.max_agg_depth);
        let k = value(rng, cfg.spec);
        let a = if rng.gen_bool(0.3) { arena.eq(e, k) } else { arena.geq(e, k) };
        return if rng.gen_bool(0.3) { arena.not(a) } else { a };
    }
    let left = rng.gen_range(1..atoms);
    let a = formula(rng, cfg, arena, left);
    let b = formula(rng, cfg, arena, atoms - left);
    let f = if rng.gen_bool(0.5) { arena.and(a, b) } else { arena.or(a, b) };
    if rng.gen_bool(0.2) {
        arena.not(f)
    } else {
        f
    }
}

pub fn random_formula(rng: &mut impl Rng, cfg: &GenConfig) -> Formula {
    let mut arena = Arena::new(cfg.spec);
    let atoms = rng.gen_range(1..=cfg.max_atoms.max(1));
    let root = formula(rng, cfg, &mut arena, atoms);
    Formula::new(arena, root)
}

#[derive(Clone, Debug)]
pub struct Disagreement {
    pub case: usize,
    pub spec: ArithmeticSpec,
    pub delta: u64,
    pub formula: String,
    pub tableau: String,
    pub oracle: String,
    pub binary: String,
}

#[derive(Clone, Debug, Default)]
pub struct FuzzReport {
    pub cases: usize,
    pub sat: usize,
    pub unsat: usize,
    pub disagreements: Vec<Disagreement>,
}

#[derive(Clone, Debug)]
pub struct FuzzConfig {
    pub cases: usize,
    pub seed: u64,
    pub ranges: Vec<i64>,
    pub max_delta: u64,
    pub max_agg_depth: usize,
    pub flavors: Vec<AggFlavor>,
    /// Also compare unary and binary modes.
    pub binary: bool,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            cases: 500,
            seed: 0,
            ranges: vec![2, 3],
            max_delta: 2,
            max_agg_depth: 2,
            flavors: vec![AggFlavor::Sum],
            binary: true,
        }
    }
}

/// Runs the tableau and the oracle on seeded random formulas.
pub fn run_fuzz(cfg: &FuzzConfig) -> FuzzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let limits = Limits::default();
    let mut report = FuzzReport::default();
    for case in 0..cfg.cases {
        let a = *cfg.ranges.choose(&mut rng).expect("at least one range");
        let spec = ArithmeticSpec::sat_int(a).expect("positive range");
        let delta = rng.gen_range(0..=cfg.max_delta);
        let gen = GenConfig { max_agg_depth: cfg.max_agg_depth, flavors: cfg.flavors.clone(), ..GenConfig::small(spec) };
        let f = random_formula(&mut rng, &gen);
        let t = solve(&f, DeltaMode::Unary(delta), &limits);
        let o = brute_force_sat(&f, delta as usize, None, OracleLimits::default());
        let b = if cfg.binary { Some(solve(&f, DeltaMode::Binary(delta), &limits)) } else { None };
        report.cases += 1;
        match t.decided() {
            Some(true) => report.sat += 1,
            Some(false) => report.unsat += 1,
            None => {}
        }
        let agree = t.decided().is_some()
            && t.decided() == o.decided()
            && b.as_ref().is_none_or(|b| b.decided() == t.decided());
        if !agree {
            report.disagreements.push(Disagreement {
                case,
                spec,
                delta,
                formula: f.print(),
                tableau: t.label(),
                oracle: o.label(),
                binary: b.as_ref().map_or_else(|| "-".into(), Verdict::label),
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = GenConfig::small(ArithmeticSpec::sat_int(3).unwrap());
        for _ in 0..200 {
            let f = random_formula(&mut rng, &cfg);
            assert!(f.agg_depth() <= 2);
            assert!(f.features_of().iter().all(|n| n == "x1" || n == "x2"));
            let again = Formula::parse(&f.print(), cfg.spec).unwrap_or_else(|e| panic!("{}: {e}", f.print()));
            assert_eq!(again.print(), f.print());
        }
    }

    #[test]
    fn same_seed_same_report() {
        let cfg = FuzzConfig { cases: 20, seed: 11, ..FuzzConfig::default() };
        let (a, b) = (run_fuzz(&cfg), run_fuzz(&cfg));
        assert_eq!((a.sat, a.unsat, a.disagreements.len()), (b.sat, b.unsat, b.disagreements.len()));
    }
}
