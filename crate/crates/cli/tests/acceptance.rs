//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use fanout_core::consistency::{self, Verdict};
use fanout_core::engine::{self, JoinMode};
use fanout_core::relation::{Attribute, Schema, ValueType};
use fanout_core::semiring::Rational;
use fanout_core::testkit::{random_instance, random_weights, InstanceParams};
use fanout_core::weighing::{self, Pick, WeighingStrategy, WeightMap};
use fanout_core::{
    annotate_for_metric, resolve, Annotation, Catalog, QualifiedAttr, Relation, SemiringKind, Value, Weight,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Relative tolerance for real-valued results.
const TOL: f64 = 1e-9;
const RANDOM_INSTANCES: u64 = 500;
const RANDOM_BUDGET: Duration = Duration::from_secs(60);
const LAW_ELEMENTS: usize = 1000;
const STRATEGY_RELATIONS: usize = 300;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn fixture_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn fixture(name: &str) -> Result<Catalog, String> {
    Catalog::load(fixture_dir(name), "graph.json", "semantic.json").map_err(err)
}

fn close(a: Option<f64>, b: f64) -> bool {
    a.is_some_and(|a| fanout_core::semiring::close(a, b, TOL))
}

fn text(s: &str) -> Vec<Value> {
    vec![Value::Text(s.into())]
}

fn ad_cost() -> Outcome {
    let c = fixture("retail")?;
    let base = c.plan(&c.query("total_ad_cost").map_err(err)?).map_err(err)?;
    let report = c.check(&base, &WeightMap::new(), TOL).map_err(err)?;
    ensure(report.base_total == Some(1100.0), || format!("base {:?}", report.base_total))?;

    let mut denorm = c.query("total_ad_cost").map_err(err)?;
    denorm.base.relations = vec!["V".into(), "U".into(), "A".into()];
    let plan = c.plan(&denorm).map_err(err)?;
    let adb = c.annotate(&plan).map_err(err)?;
    let naive = engine::evaluate(&plan, &adb, &WeightMap::new()).map_err(err)?.total().map_err(err)?;
    ensure(naive.finalize() == Some(1600.0), || format!("denormalized {naive}"))?;

    let plan = c.plan(&c.query("total_ad_cost").map_err(err)?.join("V").join("U")).map_err(err)?;
    let report = c.check(&plan, &WeightMap::new(), TOL).map_err(err)?;
    ensure(report.query_total == Some(1600.0), || format!("query {:?}", report.query_total))?;
    ensure(report.verdict == Verdict::Inconsistent, || "verdict not Inconsistent".into())?;
    let cites_v = report.per_relation_fanout.iter().any(|f| f.relation == "V" && f.join_key == ["aid"]);
    ensure(cites_v, || "fanout diagnosis does not cite V(aid)".into())?;
    Ok("base 1100, denormalized 1600, Inconsistent citing V(aid)".into())
}

fn revenue_base() -> Outcome {
    let c = fixture("retail")?;
    let plan = c.plan(&c.query("total_revenue").map_err(err)?).map_err(err)?;
    let adb = c.annotate(&plan).map_err(err)?;
    let total = engine::evaluate(&plan, &adb, &WeightMap::new()).map_err(err)?.total().map_err(err)?;
    ensure(total == Annotation::SumReal(70.0), || format!("base {total}"))?;

    let plan = c.plan(&c.query("purchase_count").map_err(err)?.join("I")).map_err(err)?;
    let adb = c.annotate(&plan).map_err(err)?;
    let (h, i) = (adb.get("H").map_err(err)?, adb.get("I").map_err(err)?);
    let on = [(QualifiedAttr::new("H", "iid"), QualifiedAttr::new("I", "iid"))];
    let outer = engine::join(h, i, &on, JoinMode::LeftOuter).map_err(err)?;
    let inner = engine::join(h, i, &on, JoinMode::Inner).map_err(err)?;
    let (o, n) = (outer.total().map_err(err)?, inner.total().map_err(err)?);
    ensure(o == Annotation::count(4) && n == Annotation::count(3), || format!("outer {o}, inner {n}"))?;
    let kept = outer.rows.iter().any(|r| r.values.get(1) == Some(&Value::Int(4)));
    ensure(kept, || "iid=4 purchase missing from outer join".into())?;
    Ok("base 70, outer 4 rows vs inner 3".into())
}

fn revenue_by_source() -> Outcome {
    let c = fixture("retail")?;
    let plan = c.plan(&c.query("total_revenue").map_err(err)?.group_by("A.source").map_err(err)?).map_err(err)?;
    let run = |s: Option<WeighingStrategy>| {
        let strategies: Vec<(String, WeighingStrategy)> = s.into_iter().map(|s| ("V".to_string(), s)).collect();
        let w = c.weights(&plan, &strategies).map_err(err)?;
        c.check(&plan, &w, TOL).map_err(err)
    };
    let expect = |r: &fanout_core::ConsistencyReport, g: f64, f: f64, total: f64, verdict: Verdict| {
        let (gv, fv) = (r.result.get(&text("Google")).finalize(), r.result.get(&text("Facebook")).finalize());
        ensure(close(gv, g) && close(fv, f) && close(r.query_total, total) && r.verdict == verdict, || {
            format!("Google {gv:?}, Facebook {fv:?}, total {:?}, {}", r.query_total, r.verdict)
        })
    };
    let equal = run(Some(WeighingStrategy::Equal))?;
    expect(&equal, 60.0, 10.0, 70.0, Verdict::Consistent)?;
    ensure(close(equal.base_total, 70.0), || "base is not 70".into())?;
    let last = run(Some(WeighingStrategy::OrderBased { attr: "aid".into(), pick: Pick::Last }))?;
    expect(&last, 50.0, 20.0, 70.0, Verdict::Consistent)?;
    let none = run(None)?;
    ensure(none.verdict == Verdict::Inconsistent && close(none.query_total, 90.0), || {
        format!("unweighed {:?} {}", none.query_total, none.verdict)
    })?;
    Ok("equal 60/10, last 50/20, unweighed 90 Inconsistent".into())
}

fn pushdown_partials() -> Outcome {
    let c = fixture("retail")?;
    let q = c.query("purchase_count").map_err(err)?.join("V").group_by("U.uid").map_err(err)?;
    let plan = c.plan(&q).map_err(err)?;
    let adb = c.annotate(&plan).map_err(err)?;
    let k = |v: i64| vec![Value::Int(v)];
    let partial = |r: &str| {
        let g = engine::aggregate(adb.get(r).map_err(err)?, &[QualifiedAttr::new(r, "uid")]).map_err(err)?;
        Ok::<_, String>((g.get(&k(1)), g.get(&k(2))))
    };
    let (h, v) = (partial("H")?, partial("V")?);
    ensure(h == (Annotation::count(1), Annotation::count(3)), || format!("H partials {h:?}"))?;
    ensure(v == (Annotation::count(2), Annotation::count(1)), || format!("V partials {v:?}"))?;
    let ones = consistency::unweighed(&plan, &adb).map_err(err)?;
    let pushed = engine::pushdown_aggregate(&plan, &adb, &ones).map_err(err)?;
    let full = engine::evaluate(&plan, &adb, &ones).map_err(err)?;
    ensure(pushed == full, || "pushdown differs from materialized".into())?;
    let joined = (full.get(&k(1)), full.get(&k(2)));
    ensure(joined == (Annotation::count(2), Annotation::count(3)), || format!("joined {joined:?}"))?;
    ensure(full.total().map_err(err)? == Annotation::count(5), || "total is not 5".into())?;
    Ok("H {1:1,2:3}, V {1:2,2:1}, joined {1:2,2:3}, total 5, pushdown == materialized".into())
}

fn gender_bias() -> Outcome {
    let c = fixture("bias")?;
    let q = c.query("user_count").map_err(err)?.join("V").join("H").group_by("U.gender").map_err(err)?;
    let plan = c.plan(&q).map_err(err)?;
    let raw = c.check(&plan, &WeightMap::new(), TOL).map_err(err)?.result;
    let (m, f) = (raw.get(&text("male")), raw.get(&text("female")));
    ensure(m == Annotation::count(1) && f == Annotation::count(6), || format!("unweighed male {m}, female {f}"))?;
    let w = c
        .weights(&plan, &[("V".into(), WeighingStrategy::Equal), ("H".into(), WeighingStrategy::Equal)])
        .map_err(err)?;
    let weighed = c.check(&plan, &w, TOL).map_err(err)?.result;
    let (m, f) = (weighed.get(&text("male")), weighed.get(&text("female")));
    ensure(m == Annotation::count(1) && f == Annotation::count(1), || format!("weighed male {m}, female {f}"))?;
    Ok("unweighed {male 1, female 6}, equal on V and H {1, 1} exact".into())
}

fn random_suite() -> Outcome {
    let start = Instant::now();
    let mut selections = 0;
    for seed in 0..RANDOM_INSTANCES {
        let fail = |m: String| format!("seed {seed}: {m}");
        let mut rng = StdRng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, InstanceParams::default(), None).map_err(|e| fail(e.to_string()))?;
        let plan = resolve(&inst.query, &inst.graph, &inst.db).map_err(|e| fail(e.to_string()))?;
        let weights = random_weights(&mut rng, &plan, &inst.db).map_err(|e| fail(e.to_string()))?;
        for (name, wt) in &weights {
            let rel = inst.db.get(name).map_err(|e| fail(e.to_string()))?;
            let v = weighing::validate(wt, rel).map_err(|e| fail(e.to_string()))?;
            ensure(v.ok, || fail(format!("weights on {name} failed validation")))?;
        }
        let adb = annotate_for_metric(&inst.db, &plan.metric).map_err(|e| fail(e.to_string()))?;
        let base = engine::evaluate(&plan.base_plan(), &adb, &WeightMap::new())
            .and_then(|g| g.overall())
            .map_err(|e| fail(e.to_string()))?;
        let q = engine::evaluate(&plan, &adb, &weights).map_err(|e| fail(e.to_string()))?;
        let total = q.total().map_err(|e| fail(e.to_string()))?;
        let got = match &q.not_selected {
            Some(n) => {
                selections += 1;
                total.add(n).map_err(|e| fail(e.to_string()))?
            }
            None => total,
        };
        ensure(got.approx_eq(&base, TOL), || fail(format!("{} query {got} vs base {base}", plan.metric)))?;
        let flagged = consistency::diagnose(&plan, &adb, &weights).map_err(|e| fail(e.to_string()))?;
        ensure(flagged.is_empty(), || fail(format!("diagnose flagged {}", flagged.len())))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < RANDOM_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{RANDOM_INSTANCES} instances ({selections} with selection) in {:.2}s", elapsed.as_secs_f64()))
}

fn random_annotation(rng: &mut StdRng, kind: SemiringKind) -> Annotation {
    let real = |rng: &mut StdRng| rng.gen_range(-1.0e3..1.0e3);
    match kind {
        SemiringKind::Count => {
            let r = Rational::new(rng.gen_range(0i64..1000).into(), rng.gen_range(1i64..50).into());
            Annotation::Count(r)
        }
        SemiringKind::SumReal => Annotation::SumReal(real(rng)),
        SemiringKind::Avg => Annotation::Avg { count: rng.gen_range(0.0..50.0), sum: real(rng) },
        SemiringKind::MaxTropical if rng.gen_bool(0.1) => Annotation::zero(kind),
        SemiringKind::MaxTropical => Annotation::MaxTropical(real(rng)),
        SemiringKind::MinTropical if rng.gen_bool(0.1) => Annotation::zero(kind),
        SemiringKind::MinTropical => Annotation::MinTropical(real(rng)),
    }
}

fn laws(a: &Annotation, b: &Annotation, c: &Annotation) -> Result<(), String> {
    let k = a.kind();
    let (zero, one) = (Annotation::zero(k), Annotation::one(k));
    let same = |x: Annotation, y: &Annotation| x.approx_eq(y, TOL);
    let checks = [
        ("add associative", same(a.add(b).and_then(|x| x.add(c)).map_err(err)?, &a.add(&b.add(c).map_err(err)?).map_err(err)?)),
        ("add commutative", same(a.add(b).map_err(err)?, &b.add(a).map_err(err)?)),
        ("add identity", same(a.add(&zero).map_err(err)?, a)),
        ("mul associative", same(a.mul(b).and_then(|x| x.mul(c)).map_err(err)?, &a.mul(&b.mul(c).map_err(err)?).map_err(err)?)),
        ("mul commutative", same(a.mul(b).map_err(err)?, &b.mul(a).map_err(err)?)),
        ("mul identity", same(a.mul(&one).map_err(err)?, a)),
        ("distributive", same(a.mul(&b.add(c).map_err(err)?).map_err(err)?, &a.mul(b).and_then(|x| x.add(&a.mul(c)?)).map_err(err)?)),
        ("annihilation", same(a.mul(&zero).map_err(err)?, &zero)),
    ];
    for (name, ok) in checks {
        ensure(ok, || format!("{name} fails on {a}, {b}, {c}"))?;
    }
    Ok(())
}

fn semiring_laws() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    for kind in SemiringKind::ALL {
        let xs: Vec<Annotation> = (0..LAW_ELEMENTS).map(|_| random_annotation(&mut rng, kind)).collect();
        for (i, a) in xs.iter().enumerate() {
            let b = &xs[(i + 1) % xs.len()];
            let c = &xs[rng.gen_range(0..xs.len())];
            laws(a, b, c).map_err(|m| format!("{kind:?}: {m}"))?;
        }
    }
    Ok(format!("{} kinds x {LAW_ELEMENTS} elements", SemiringKind::ALL.len()))
}

fn random_relation(rng: &mut StdRng) -> Relation {
    let attrs = [Attribute::new("k", ValueType::Int), Attribute::new("t", ValueType::Int), Attribute::new("p", ValueType::Real)];
    let mut r = Relation::new(Schema::new("R", &attrs).expect("schema"));
    for _ in 0..rng.gen_range(0..30) {
        let k = if rng.gen_bool(0.1) { Value::Null } else { Value::Int(rng.gen_range(0..6)) };
        let t = if rng.gen_bool(0.1) { Value::Null } else { Value::Int(rng.gen_range(0..10)) };
        r.push(vec![k, t, Value::Real(rng.gen_range(0.5..100.0))]).expect("row");
    }
    r
}

fn exact_sum(wt: &weighing::WeightTable) -> Rational {
    wt.entries.values().map(|w| w.as_rational().clone()).sum()
}

fn strategy_validity() -> Outcome {
    let mut rng = StdRng::seed_from_u64(11);
    let key = ["k".to_string()];
    let mut tables = 0;
    for _ in 0..STRATEGY_RELATIONS {
        let rel = random_relation(&mut rng);
        let first = rng.gen_range(0..=10);
        let last = rng.gen_range(0..=10 - first);
        let tenth = |n: i64| Weight::new(Rational::new(n.into(), 10.into())).expect("weight");
        let strategies = [
            WeighingStrategy::Equal,
            WeighingStrategy::OrderBased { attr: "t".into(), pick: Pick::First },
            WeighingStrategy::OrderBased { attr: "t".into(), pick: Pick::Last },
            WeighingStrategy::PositionBased { attr: "t".into(), first_w: tenth(first), last_w: tenth(last) },
            WeighingStrategy::Proportional { attr: "p".into() },
        ];
        for s in &strategies {
            let wt = weighing::build(s, &rel, &key).map_err(err)?;
            let v = weighing::validate(&wt, &rel).map_err(err)?;
            ensure(v.ok, || format!("{s} failed validation: {:?}", v.violations))?;
            tables += 1;
        }
    }
    for n in 1..=2 {
        for first in 0..=10 {
            for last in 0..=10 - first {
                let mut rel = Relation::new(
                    Schema::new("R", &[Attribute::new("k", ValueType::Int), Attribute::new("t", ValueType::Int)])
                        .map_err(err)?,
                );
                for t in 0..n {
                    rel.push(vec![Value::Int(0), Value::Int(t)]).map_err(err)?;
                }
                let tenth = |n: i64| Weight::new(Rational::new(n.into(), 10.into())).expect("weight");
                let s = WeighingStrategy::PositionBased { attr: "t".into(), first_w: tenth(first), last_w: tenth(last) };
                let sum = exact_sum(&weighing::build(&s, &rel, &key).map_err(err)?);
                ensure(sum == Rational::from_integer(1.into()), || format!("n={n} {s} sums to {sum}"))?;
            }
        }
    }
    Ok(format!("{tables} tables valid; position n in {{1, 2}} sums exactly 1"))
}

fn cli(data: &Path, args: &[&str]) -> Result<i32, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_fanout-guard"))
        .arg("--data-dir")
        .arg(data)
        .args(args)
        .output()
        .map_err(err)?
        .status;
    status.code().ok_or_else(|| "terminated by signal".to_string())
}

fn cli_exit_codes() -> Outcome {
    let data = fixture_dir("retail");
    let by_source = ["run", "--metric", "total_revenue", "--group-by", "A.source"];
    let with = |extra: &[&'static str]| by_source.iter().copied().chain(extra.iter().copied()).collect::<Vec<_>>();
    let cases = [
        ("equal", with(&["--weigh", "V=equal"]), 0),
        ("unweighed", with(&[]), 2),
        ("bad spec", with(&["--weigh", "V=order:missing:last"]), 1),
    ];
    let mut seen = Vec::new();
    for (name, args, want) in cases {
        let got = cli(&data, &args)?;
        ensure(got == want, || format!("{name}: exit {got}, expected {want}"))?;
        seen.push(format!("{name}={got}"));
    }
    Ok(seen.join(", "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("ad cost double counting", ad_cost),
        ("left-outer revenue base", revenue_base),
        ("revenue by ad source", revenue_by_source),
        ("pushdown partials", pushdown_partials),
        ("gender bias correction", gender_bias),
        ("consistency on random instances", random_suite),
        ("semiring laws", semiring_laws),
        ("strategy validity", strategy_validity),
        ("CLI exit codes", cli_exit_codes),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
