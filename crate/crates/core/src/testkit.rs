//! Random acyclic instances for property tests and benchmarks.
//!
//! Relations are `R0..Rn`. Every tree edge `Rp - Ri` joins on an int
//! attribute `k{i}` present on both sides. Each relation also carries a
//! real `v` (payload and selection target) and an int `g` (group-by target).

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::join_graph::{JoinEdge, JoinGraph};
use crate::relation::{Attribute, Database, Relation, Schema, Value, ValueType};
use crate::semantic_model::{Aggregate, BaseQuery, ExploratoryQuery, Metric, QueryPlan};
use crate::semiring::Weight;
use crate::weighing::{self, Pick, WeighingStrategy, WeightMap};

#[derive(Debug, Clone, Copy)]
pub struct InstanceParams {
    pub max_relations: usize,
    pub max_rows: usize,
    pub null_rate: f64,
    pub key_domain: i64,
}

impl Default for InstanceParams {
    fn default() -> Self {
        InstanceParams { max_relations: 5, max_rows: 30, null_rate: 0.1, key_domain: 4 }
    }
}

#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub graph: JoinGraph,
    pub db: Database,
    pub query: ExploratoryQuery,
}

const AGGREGATES: [Aggregate; 5] = [Aggregate::Sum, Aggregate::Count, Aggregate::Avg, Aggregate::Max, Aggregate::Min];

fn maybe_null<R: Rng>(rng: &mut R, rate: f64, v: Value) -> Value {
    if rng.gen_bool(rate) {
        Value::Null
    } else {
        v
    }
}

/// Builds a random tree-shaped instance with prepared cardinalities and an
/// exploratory query over it. `agg` fixes the aggregate when given.
pub fn random_instance<R: Rng>(rng: &mut R, params: InstanceParams, agg: Option<Aggregate>) -> Result<RandomInstance> {
    let n = rng.gen_range(1..=params.max_relations.max(1));
    let names: Vec<String> = (0..n).map(|i| format!("R{i}")).collect();
    let parents: Vec<usize> = (1..n).map(|i| rng.gen_range(0..i)).collect();

    let mut key_attrs: Vec<Vec<String>> = vec![Vec::new(); n];
    let mut edges = Vec::new();
    for (i, &p) in (1..n).zip(&parents) {
        let k = format!("k{i}");
        key_attrs[p].push(k.clone());
        key_attrs[i].push(k.clone());
        edges.push(JoinEdge::new(&names[p], &names[i], &[(&k, &k)]));
    }

    let mut db = Database::new();
    for (i, name) in names.iter().enumerate() {
        let mut attrs: Vec<Attribute> = key_attrs[i].iter().map(|k| Attribute::new(k.as_str(), ValueType::Int)).collect();
        attrs.push(Attribute::new("v", ValueType::Real));
        attrs.push(Attribute::new("g", ValueType::Int));
        let mut rel = Relation::new(Schema::new(name.as_str(), &attrs)?);
        let rows = rng.gen_range(0..=params.max_rows);
        // Some key columns are unique so that one-to-many edges show up.
        let unique: Vec<bool> = key_attrs[i].iter().map(|_| rng.gen_bool(0.35)).collect();
        for r in 0..rows {
            let mut values = Vec::with_capacity(attrs.len());
            for &u in &unique {
                let k = if u { r as i64 } else { rng.gen_range(0..params.key_domain) };
                values.push(maybe_null(rng, params.null_rate, Value::Int(k)));
            }
            let v = f64::from(rng.gen_range(1..=40)) / 4.0;
            values.push(maybe_null(rng, params.null_rate, Value::Real(v)));
            let g = rng.gen_range(0..3);
            values.push(maybe_null(rng, params.null_rate, Value::Int(g)));
            rel.push(values)?;
        }
        db.insert(rel)?;
    }
    let graph = JoinGraph::new(names.clone(), edges).prepare(&db)?;

    // Base: R0 and some of its neighbours.
    let mut base = vec![names[0].clone()];
    for (i, &p) in (1..n).zip(&parents) {
        if p == 0 && rng.gen_bool(0.4) {
            base.push(names[i].clone());
        }
    }
    let agg = agg.unwrap_or_else(|| *AGGREGATES.choose(rng).expect("non-empty"));
    let payload = if agg == Aggregate::Count && rng.gen_bool(0.5) {
        "*".to_string()
    } else {
        format!("{}.v", base.choose(rng).expect("non-empty"))
    };
    let metric = Metric::parse("m", &agg.to_string(), &payload)?;
    let mut query = ExploratoryQuery::base_only(BaseQuery { metric, relations: base });

    for _ in 0..rng.gen_range(0..=2) {
        let rel = names.choose(rng).expect("non-empty");
        let attr = format!("{rel}.g");
        if !query.group_by.iter().any(|a| a.to_string() == attr) {
            query = query.group_by(&attr)?;
        }
    }
    if rng.gen_bool(0.5) {
        let rel = names.choose(rng).expect("non-empty");
        let op = [">", "<=", "=", "!="].choose(rng).expect("non-empty");
        let lit = f64::from(rng.gen_range(1..=40)) / 4.0;
        query = query.select(&format!("{rel}.v {op} {lit}"))?;
    }
    for name in names.iter().skip(1) {
        if rng.gen_bool(0.4) {
            query = query.join(name);
        }
    }
    Ok(RandomInstance { graph, db, query })
}

/// A random built-in strategy per target. Proportional weighing is used only
/// when the ordering column is positive everywhere.
pub fn random_weights<R: Rng>(rng: &mut R, plan: &QueryPlan, db: &Database) -> Result<WeightMap> {
    let mut out = WeightMap::new();
    for t in &plan.targets {
        let rel = db.get(&t.relation)?;
        let (vi, _) = rel.schema.attribute("v")?;
        let positive = rel.rows.iter().all(|r| r.values[vi].as_f64().is_some_and(|x| x > 0.0));
        let choice = rng.gen_range(0..if positive { 4 } else { 3 });
        let strategy = match choice {
            0 => WeighingStrategy::Equal,
            1 => WeighingStrategy::OrderBased {
                attr: "v".into(),
                pick: if rng.gen_bool(0.5) { Pick::First } else { Pick::Last },
            },
            2 => {
                let f = rng.gen_range(0..=5);
                let l = rng.gen_range(0..=(10 - f));
                WeighingStrategy::PositionBased {
                    attr: "v".into(),
                    first_w: Weight::from_f64(f64::from(f) / 10.0)?,
                    last_w: Weight::from_f64(f64::from(l) / 10.0)?,
                }
            }
            _ => WeighingStrategy::Proportional { attr: "v".into() },
        };
        out.insert(t.relation.clone(), weighing::build(&strategy, rel, &t.join_key)?);
    }
    Ok(out)
}
