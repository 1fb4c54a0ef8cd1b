//! Brute-force reference evaluation: enumerate the left-outer join chain as
//! row-index tuples, then aggregate each output tuple directly from the raw
//! values and the weight tables, without annotated relations.

use std::collections::{BTreeMap, HashMap};

use fanout_core::relation::Relation;
use fanout_core::semantic_model::{Aggregate, Payload};
use fanout_core::semiring::Rational;
use fanout_core::{Annotation, Database, QueryPlan, Value, WeightMap};
use num_traits::{One, ToPrimitive};

pub struct OracleResult {
    pub groups: BTreeMap<Vec<Value>, Annotation>,
    pub not_selected: Option<Annotation>,
}

fn num_key(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::Int(i) => Some(format!("n{}", *i as f64)),
        Value::Real(r) => Some(format!("n{r}")),
        Value::Text(s) => Some(format!("t{s}")),
    }
}

fn col(rel: &Relation, attr: &str) -> usize {
    rel.schema.attribute_names().iter().position(|a| a == attr).expect("attribute")
}

#[derive(Default)]
struct Acc {
    count: Rational,
    weight_f: f64,
    sum: f64,
    ext: Option<f64>,
}

pub fn evaluate(plan: &QueryPlan, db: &Database, weights: &WeightMap) -> OracleResult {
    let names = plan.relations();
    let pos: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let rels: Vec<&Relation> = names.iter().map(|n| db.get(n).expect("relation")).collect();

    let mut tuples: Vec<Vec<Option<usize>>> = (0..rels[0].rows.len())
        .map(|i| {
            let mut t = vec![None; names.len()];
            t[0] = Some(i);
            t
        })
        .collect();
    for edge in &plan.edges {
        let (p, c) = (pos[edge.parent.as_str()], pos[edge.child.as_str()]);
        let pcols: Vec<usize> = edge.on.iter().map(|(a, _)| col(rels[p], a)).collect();
        let ccols: Vec<usize> = edge.on.iter().map(|(_, b)| col(rels[c], b)).collect();
        let mut next = Vec::new();
        for t in tuples {
            let matches: Vec<usize> = match t[p] {
                None => Vec::new(),
                Some(pr) => {
                    let pk: Vec<Option<String>> = pcols.iter().map(|&i| num_key(&rels[p].rows[pr].values[i])).collect();
                    if pk.iter().any(Option::is_none) {
                        Vec::new()
                    } else {
                        (0..rels[c].rows.len())
                            .filter(|&cr| {
                                ccols.iter().zip(&pk).all(|(&i, k)| num_key(&rels[c].rows[cr].values[i]) == *k)
                            })
                            .collect()
                    }
                }
            };
            if matches.is_empty() {
                next.push(t);
            } else {
                for m in matches {
                    let mut u = t.clone();
                    u[c] = Some(m);
                    next.push(u);
                }
            }
        }
        tuples = next;
    }

    let value = |t: &[Option<usize>], rel: &str, attr: &str| -> Value {
        let i = pos[rel];
        match t[i] {
            Some(r) => rels[i].rows[r].values[col(rels[i], attr)].clone(),
            None => Value::Null,
        }
    };
    let weight = |t: &[Option<usize>]| -> Rational {
        let mut w = Rational::one();
        for target in &plan.targets {
            let i = pos[target.relation.as_str()];
            if let Some(r) = t[i] {
                let id = rels[i].rows[r].row_id;
                w *= weights[&target.relation].entries[&id].as_rational().clone();
            }
        }
        w
    };

    let agg = plan.metric.agg;
    let max = agg == Aggregate::Max;
    let mut groups: BTreeMap<Vec<Value>, Acc> = BTreeMap::new();
    let mut rest: Acc = Acc::default();
    if plan.group_by.is_empty() {
        groups.insert(Vec::new(), Acc::default());
    }
    for t in &tuples {
        let w = weight(t);
        let payload = match &plan.metric.payload {
            Payload::Star => Some(None),
            Payload::Attr(a) => {
                let v = value(t, &a.relation, &a.attribute);
                if v.is_null() {
                    None
                } else {
                    Some(Some(v.as_f64().unwrap_or(0.0)))
                }
            }
        };
        let selected = match &plan.selection {
            None => true,
            Some(p) => p.atoms.iter().all(|a| a.eval(&value(t, &a.attr.relation, &a.attr.attribute))),
        };
        let acc = if selected {
            let key: Vec<Value> = plan.group_by.iter().map(|g| value(t, &g.relation, &g.attribute)).collect();
            groups.entry(key).or_default()
        } else {
            &mut rest
        };
        if let Some(v) = payload {
            let wf = w.to_f64().unwrap();
            acc.count += w;
            acc.weight_f += wf;
            let x = v.unwrap_or(0.0);
            acc.sum += wf * x;
            acc.ext = Some(match acc.ext {
                None => x,
                Some(e) if max => e.max(x),
                Some(e) => e.min(x),
            });
        }
    }

    let finish = |a: &Acc| -> Annotation {
        match agg {
            Aggregate::Count => Annotation::Count(a.count.clone()),
            Aggregate::Sum => Annotation::SumReal(a.sum),
            Aggregate::Avg => Annotation::Avg { count: a.weight_f, sum: a.sum },
            Aggregate::Max => Annotation::MaxTropical(a.ext.unwrap_or(f64::NEG_INFINITY)),
            Aggregate::Min => Annotation::MinTropical(a.ext.unwrap_or(f64::INFINITY)),
        }
    };
    OracleResult {
        groups: groups.iter().map(|(k, a)| (k.clone(), finish(a))).collect(),
        not_selected: plan.selection.as_ref().map(|_| finish(&rest)),
    }
}
