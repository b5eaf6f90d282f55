//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its own PASS/FAIL line regardless of output capture.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qgnn::arith::{Activation, ArithmeticSpec, Value};
use qgnn::compile::{compile_generalized, compile_gnn, compile_lvp, dag_nodes};
use qgnn::formula::{AggKind, Arena, Formula};
use qgnn::fuzz::{random_formula, run_fuzz, AggFlavor, FuzzConfig, GenConfig};
use qgnn::gnn::{gnn_eval, GnnModel, LinIneq, LvpInstance};
use qgnn::graph::PointedGraph;
use qgnn::semantics::{brute_force_sat, check_formula, OracleLimits, Verdict};
use qgnn::tableau::{project_inputs, solve, verify_lvp, DeltaMode, Limits, LvpVerdict};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn data(name: &str) -> String {
    let path = format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn spec(text: &str) -> ArithmeticSpec {
    text.parse().expect("valid arithmetic")
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, budget: Duration) -> Result<(), String> {
    ensure(start.elapsed() < budget, format!("took {:.2?}, budget {budget:?}", start.elapsed()))
}

fn fmt_values(vs: &[Value]) -> String {
    let parts: Vec<String> = vs.iter().map(Value::to_string).collect();
    format!("({})", parts.join(", "))
}

fn ints(s: ArithmeticSpec, ns: &[i64]) -> Vec<Value> {
    ns.iter().map(|&n| s.from_int(n)).collect()
}

fn forward_golden() -> Outcome {
    let start = Instant::now();
    for arith in ["satint:127", "satint:1000"] {
        let s = spec(arith);
        let mut doc: serde_json::Value = serde_json::from_str(&data("small_gnn.json")).expect("json");
        doc["arith"] = arith.into();
        let model = GnnModel::load_json(&doc.to_string()).map_err(|e| e.to_string())?;
        let ge = PointedGraph::load_json(&data("g_e.json"), s).map_err(|e| e.to_string())?;
        let single = PointedGraph::load_json(&data("single_node.json"), s).map_err(|e| e.to_string())?;
        let a = gnn_eval(&model, &ge).map_err(|e| e.to_string())?;
        let b = gnn_eval(&model, &single).map_err(|e| e.to_string())?;
        ensure(a == ints(s, &[5, 0, 1]), format!("{arith}: G_e gave {}", fmt_values(&a)))?;
        ensure(b == ints(s, &[0, 2, 0]), format!("{arith}: single node gave {}", fmt_values(&b)))?;
    }
    within(start, Duration::from_secs(1))?;
    Ok("(5, 0, 1) and (0, 2, 0)".into())
}

fn message_golden() -> Outcome {
    let start = Instant::now();
    let inst = LvpInstance::load_json(&data("message_lvp.json")).map_err(|e| e.to_string())?;
    let s = inst.gnn.spec;
    let g = PointedGraph::load_json(&data("message_witness.json"), s).map_err(|e| e.to_string())?;
    let out = gnn_eval(&inst.gnn, &g).map_err(|e| e.to_string())?;
    let want = vec![s.parse_value("0.8").expect("lit"), s.parse_value("1").expect("lit")];
    ensure(out == want, format!("got {}", fmt_values(&out)))?;
    within(start, Duration::from_secs(1))?;
    Ok(format!("outputs {}", fmt_values(&out)))
}

fn message_sat() -> Outcome {
    let start = Instant::now();
    let inst = LvpInstance::load_json(&data("message_lvp.json")).map_err(|e| e.to_string())?;
    let compiled = compile_lvp(&inst).map_err(|e| e.to_string())?;
    let limits = Limits { time: Some(Duration::from_secs(60)), ..Limits::default() };
    let model = match solve(&compiled.formula, DeltaMode::Unary(5), &limits) {
        Verdict::Sat(m) => m,
        other => return Err(format!("verdict {}", other.label())),
    };
    ensure(check_formula(&compiled.formula, &model).map_err(|e| e.to_string())?, "model fails its formula")?;
    let ce = project_inputs(&model, &inst.gnn.input_names);
    let out = gnn_eval(&inst.gnn, &ce).map_err(|e| e.to_string())?;
    let bound = inst.gnn.spec.parse_value("0.9").expect("lit");
    ensure(out[0].payload() < bound.payload(), format!("y1 = {} is not below 0.9", out[0]))?;
    ensure(inst.input_holds(&ce).map_err(|e| e.to_string())?, "input constraint fails on the witness")?;
    within(start, Duration::from_secs(60))?;
    Ok(format!(
        "sat in {:.2?}, root arity {}, outputs {}",
        start.elapsed(),
        ce.graph.out_degree(ce.point),
        fmt_values(&out)
    ))
}

fn counting_suite() -> Outcome {
    let start = Instant::now();
    let s = spec("satint:15");
    let f = Formula::parse(data("counting.lqg").trim(), s).map_err(|e| e.to_string())?;
    let limits = Limits::default();
    match solve(&f, DeltaMode::Unary(5), &limits) {
        Verdict::Sat(m) => {
            ensure(m.graph.out_degree(m.point) == 4, format!("root arity {}", m.graph.out_degree(m.point)))?;
            ensure(check_formula(&f, &m).map_err(|e| e.to_string())?, "model fails")?;
        }
        other => return Err(format!("delta 5: {}", other.label())),
    }
    let t = solve(&f, DeltaMode::Unary(2), &limits);
    let o = brute_force_sat(&f, 2, None, OracleLimits::default());
    ensure(t.is_unsat() && o.is_unsat(), format!("delta 2: tableau {}, oracle {}", t.label(), o.label()))?;
    let g = Formula::parse("agg(3) = 10", s).map_err(|e| e.to_string())?;
    for mode in [DeltaMode::Unary(5), DeltaMode::Binary(5), DeltaMode::Infinite] {
        let v = solve(&g, mode, &limits);
        ensure(v.is_unsat(), format!("agg(3) = 10 under {mode}: {}", v.label()))?;
    }
    within(start, Duration::from_secs(10))?;
    Ok("agg(1) = 4 sat at arity 4, unsat at 2; agg(3) = 10 unsat in all modes".into())
}

fn scaled_property() -> Result<(LvpInstance, Formula, Formula), String> {
    let doc = serde_json::json!({
        "arith": "fixed:16:1",
        "input_dim": 1,
        "layers": [{
            "agg": "sum",
            "comb": {
                "weights": [["0.1", "0"], ["0", "0.1"]],
                "bias": ["0", "0"],
                "activation": ["relu", "id"]
            }
        }],
        "out": {"weights": [["1", "0"], ["0", "1"]], "bias": ["0", "0"], "activation": "id"}
    });
    let model = GnnModel::load_json(&doc.to_string()).map_err(|e| e.to_string())?;
    let s = model.spec;
    let pre = Formula::parse("agg(x1) >= 10", s).map_err(|e| e.to_string())?;
    let post = Formula::parse("y2 >= 1.0", s).map_err(|e| e.to_string())?;
    let inst = LvpInstance::new(model, vec![], vec![], DeltaMode::Unary(5)).map_err(|e| e.to_string())?;
    Ok((inst, pre, post))
}

fn lvp_suite() -> Outcome {
    let start = Instant::now();
    let inst = LvpInstance::load_json(&data("small_lvp.json")).map_err(|e| e.to_string())?;
    ensure(inst.delta == DeltaMode::Unary(2), format!("fixture delta {}", inst.delta))?;
    let limits = Limits { time: Some(Duration::from_secs(10)), ..Limits::default() };
    match verify_lvp(&inst, &limits).map_err(|e| e.to_string())? {
        LvpVerdict::Invalid { counterexample, outputs } => {
            ensure(inst.input_holds(&counterexample).map_err(|e| e.to_string())?, "L_in fails on witness")?;
            ensure(!inst.output_holds(&outputs).map_err(|e| e.to_string())?, "L_out holds on witness")?;
        }
        LvpVerdict::Valid => return Err("small instance reported valid".into()),
        LvpVerdict::Unknown(r) => return Err(format!("small instance unknown: {r}")),
    }
    let small = start.elapsed();
    within(start, Duration::from_secs(10))?;

    let scaled_start = Instant::now();
    let (scaled, pre, post) = scaled_property()?;
    let compiled = compile_generalized(&scaled.gnn, &pre, &post).map_err(|e| e.to_string())?;
    let limits = Limits { time: Some(Duration::from_secs(120)), ..Limits::default() };
    let t = solve(&compiled.formula, scaled.delta, &limits);
    ensure(t.is_unsat(), format!("scaled instance: tableau {}", t.label()))?;
    let o = brute_force_sat(&compiled.formula, 5, None, OracleLimits::default());
    ensure(
        o.is_unsat(),
        format!("scaled instance: tableau unsat in {:.2?} but oracle says {}", scaled_start.elapsed(), o.label()),
    )?;
    within(scaled_start, Duration::from_secs(120))?;
    Ok(format!("small invalid in {small:.2?}; scaled valid, oracle agrees"))
}

fn differential() -> Outcome {
    let start = Instant::now();
    let cfg = FuzzConfig { cases: 500, seed: 2024, ..FuzzConfig::default() };
    let r = run_fuzz(&cfg);
    if let Some(d) = r.disagreements.first() {
        return Err(format!(
            "{} of {} disagree; first #{} {} delta {}: {} tableau {} oracle {} binary {}",
            r.disagreements.len(),
            r.cases,
            d.case,
            d.spec,
            d.delta,
            d.formula,
            d.tableau,
            d.oracle,
            d.binary
        ));
    }
    within(start, Duration::from_secs(600))?;
    Ok(format!("{} cases ({} sat, {} unsat) in {:.2?}", r.cases, r.sat, r.unsat, start.elapsed()))
}

fn encoded_truncrelu(v: Value) -> Value {
    let one = v.spec().one();
    let r = v.activate(Activation::Relu);
    let shifted = v.add(&one.neg()).expect("same spec").activate(Activation::Relu);
    let diff = r.add(&v.spec().minus_one().mul(&shifted).expect("same spec")).expect("same spec");
    diff.activate(Activation::Relu)
}

fn truncrelu_rewrite() -> Outcome {
    let start = Instant::now();
    for s in [spec("satint:8"), spec("fixed:16:1")] {
        for v in s.values() {
            let (a, b) = (v.activate(Activation::TruncRelu), encoded_truncrelu(v));
            ensure(a == b, format!("{s}: truncrelu({v}) = {a} but encoding gives {b}"))?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut checked = 0;
    while checked < 100 {
        let s = ArithmeticSpec::sat_int(rng.gen_range(2..=3)).expect("range");
        let delta = rng.gen_range(0..=2);
        let f = random_formula(&mut rng, &GenConfig::small(s));
        if !f.print().contains("truncrelu") {
            continue;
        }
        let g = f.rewrite_truncrelu();
        ensure(!g.print().contains("truncrelu"), "rewrite left a truncrelu")?;
        let (a, b) = (
            brute_force_sat(&f, delta, None, OracleLimits::default()),
            brute_force_sat(&g, delta, None, OracleLimits::default()),
        );
        ensure(
            a.decided().is_some() && a.decided() == b.decided(),
            format!("{}: original {} rewritten {}", f.print(), a.label(), b.label()),
        )?;
        checked += 1;
    }
    within(start, Duration::from_secs(120))?;
    Ok(format!("pointwise over satint:8 and fixed:16:1, {checked} formulas agree"))
}

fn random_model(rng: &mut impl Rng, layers: usize) -> GnnModel {
    let mut dim = rng.gen_range(1..=3);
    let weight = |rng: &mut ChaCha8Rng| rng.gen_range(-50..=50).to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let mut docs = Vec::new();
    let input_dim = dim;
    for _ in 0..layers {
        let out = rng.gen_range(1..=3);
        let w: Vec<Vec<String>> = (0..out).map(|_| (0..2 * dim).map(|_| weight(&mut rng)).collect()).collect();
        let b: Vec<String> = (0..out).map(|_| weight(&mut rng)).collect();
        docs.push(serde_json::json!({"agg": "sum", "comb": {"weights": w, "bias": b, "activation": "relu"}}));
        dim = out;
    }
    let w: Vec<Vec<String>> = vec![(0..dim).map(|_| weight(&mut rng)).collect()];
    let doc = serde_json::json!({
        "arith": "satint:1000",
        "input_dim": input_dim,
        "layers": docs,
        "out": {"weights": w, "bias": ["0"], "activation": "id"}
    });
    GnnModel::load_json(&doc.to_string()).expect("well-formed model")
}

fn compile_shape() -> Outcome {
    let start = Instant::now();
    let model = GnnModel::load_json(&data("two_layer_gnn.json")).map_err(|e| e.to_string())?;
    let s = model.spec;
    let mut arena = Arena::new(s);
    let (phi_n, names, outs) = compile_gnn(&mut arena, &model).map_err(|e| e.to_string())?;
    ensure(names == ["y1"], format!("outputs {names:?}"))?;

    // Rebuild the two-layer recurrence by hand in the same arena; hash
    // consing makes structural equality an id comparison.
    let (mut xi, mut xi2) = (arena.feature("x1"), arena.feature("x2"));
    let k = |n: i64| s.from_int(n);
    for _ in 0..2 {
        let (a, a2) = (arena.agg(AggKind::Sum, xi), arena.agg(AggKind::Sum, xi2));
        let row = |arena: &mut Arena, w: [i64; 4], b: i64| {
            let terms = [xi, xi2, a, a2];
            let scaled: Vec<_> =
                terms.iter().zip(w).map(|(&t, c)| if c == 1 { t } else { arena.scale(k(c), t) }).collect();
            let mut acc = scaled[0];
            for &t in &scaled[1..] {
                acc = arena.sum(acc, t);
            }
            let bias = arena.constant(k(b));
            let acc = arena.sum(acc, bias);
            arena.act(Activation::Relu, acc)
        };
        let n1 = row(&mut arena, [1, 2, -3, 4], 5);
        let n2 = row(&mut arena, [6, 7, 8, -9], 10);
        (xi, xi2) = (n1, n2);
    }
    let sum = arena.sum(xi, xi2);
    let bias = arena.constant(k(-2));
    let sum = arena.sum(sum, bias);
    let out = arena.act(Activation::Relu, sum);
    ensure(outs == [out], "output expression differs from the recurrence")?;
    let y = arena.feature("y1");
    let neg_y = arena.scale(s.minus_one(), y);
    let diff = arena.sum(out, neg_y);
    let link = arena.eq(diff, s.zero());
    let expected = arena.and_all([link]);
    ensure(expected == phi_n, "network formula differs from the recurrence")?;

    // Size against parameter count over random models.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pts = Vec::new();
    for layers in 1..=4 {
        for _ in 0..10 {
            let m = random_model(&mut rng, layers);
            let y = LinIneq { coeffs: vec![("y1".into(), s.one())], constant: s.zero() };
            let inst = LvpInstance::new(m, vec![], vec![y], DeltaMode::Unary(1)).map_err(|e| e.to_string())?;
            let c = compile_lvp(&inst).map_err(|e| e.to_string())?;
            pts.push((inst.gnn.param_count() as f64, dag_nodes(&c.formula.arena, c.formula.root) as f64));
        }
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = sxy * sxy / (sxx * syy);
    let worst = pts.iter().map(|p| p.1 / p.0).fold(0.0, f64::max);
    ensure(r2 > 0.95, format!("size is not linear in parameters: r2 = {r2:.3}, slope {slope:.2}"))?;
    ensure(worst < 8.0, format!("size reaches {worst:.2} nodes per parameter"))?;
    within(start, Duration::from_secs(60))?;
    Ok(format!("recurrence matches; slope {slope:.2} nodes/param, r2 {r2:.3}, max ratio {worst:.2}"))
}

fn inverse_completeness() -> Outcome {
    let start = Instant::now();
    let s = spec("satint:3");
    let all: Vec<Value> = s.values().collect();
    let mut streams = 0;
    for &k in &all {
        let got: Vec<(Value, Value)> = k.add_inverses().collect();
        let want: Vec<(Value, Value)> = all
            .iter()
            .flat_map(|&a| all.iter().map(move |&b| (a, b)))
            .filter(|(a, b)| a.add(b).expect("spec") == k)
            .collect();
        ensure(got == want, format!("add inverses of {k}"))?;
        for &c in &all {
            let got: Vec<Value> = k.mul_inverses(&c).expect("spec").collect();
            let want: Vec<Value> = all.iter().copied().filter(|v| c.mul(v).expect("spec") == k).collect();
            ensure(got == want, format!("mul inverses of {k} by {c}: {got:?} vs {want:?}"))?;
            streams += 1;
        }
        for act in [Activation::Relu, Activation::TruncRelu, Activation::Id] {
            let got: Vec<Value> = k.act_inverses(act).collect();
            let want: Vec<Value> = all.iter().copied().filter(|v| v.activate(act) == k).collect();
            ensure(got == want, format!("{act} inverses of {k}"))?;
            streams += 1;
        }
        let geq: BTreeSet<i64> = k.values_geq().map(|v| v.payload()).collect();
        let lt: BTreeSet<i64> = k.values_lt().map(|v| v.payload()).collect();
        ensure(geq == all.iter().map(Value::payload).filter(|&p| p >= k.payload()).collect(), "values_geq")?;
        ensure(lt == all.iter().map(Value::payload).filter(|&p| p < k.payload()).collect(), "values_lt")?;
        streams += 3;
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!("{streams} streams match brute force"))
}

fn aggregation_variants() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    for (flavor, seed) in [(AggFlavor::Mean, 31), (AggFlavor::Max, 32), (AggFlavor::Weighted, 33)] {
        let cfg = FuzzConfig {
            cases: 100,
            seed,
            ranges: vec![2],
            max_delta: 2,
            max_agg_depth: 1,
            flavors: vec![flavor],
            binary: true,
        };
        let r = run_fuzz(&cfg);
        if let Some(d) = r.disagreements.first() {
            return Err(format!(
                "{flavor:?}: {} disagree; first delta {}: {} tableau {} oracle {} binary {}",
                r.disagreements.len(),
                d.delta,
                d.formula,
                d.tableau,
                d.oracle,
                d.binary
            ));
        }
        parts.push(format!("{flavor:?} {}/{}", r.sat, r.unsat));
    }
    within(start, Duration::from_secs(300))?;
    Ok(format!("all agree (sat/unsat: {})", parts.join(", ")))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("forward evaluation golden", forward_golden),
        ("message-passing golden", message_golden),
        ("message-passing counterexample", message_sat),
        ("counting suite", counting_suite),
        ("linear validity", lvp_suite),
        ("differential tableau vs oracle", differential),
        ("truncated relu rewrite", truncrelu_rewrite),
        ("compile shape", compile_shape),
        ("inverse enumerators", inverse_completeness),
        ("aggregation variants", aggregation_variants),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name} [{took:.2?}]: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} [{took:.2?}]: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
