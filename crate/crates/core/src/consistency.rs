//! The consistency check between an exploratory query and its base query,
//! and the per-relation fanout diagnosis.

use std::fmt;

use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::engine::{self, GroupedResult};
use crate::error::Result;
use crate::relation::{AnnotatedDatabase, Value};
use crate::semantic_model::QueryPlan;
use crate::semiring::{Annotation, SemiringKind};
use crate::weighing::{self, WeightMap, WeightTable};

/// Worst offending groups listed per relation.
pub const FANOUT_SAMPLE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Consistent,
    Inconsistent,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Consistent => "Consistent",
            Verdict::Inconsistent => "Inconsistent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanoutGroup {
    pub key: Vec<Value>,
    pub partial: f64,
    /// Exact rational partial, e.g. `"2"` or `"7/5"`.
    pub exact: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationFanout {
    pub relation: String,
    pub join_key: Vec<String>,
    pub weighed: bool,
    /// Number of offending groups; `sample` holds the worst of them.
    pub offending_groups: usize,
    pub sample: Vec<FanoutGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub metric: String,
    pub kind: SemiringKind,
    pub base_total: Option<f64>,
    /// Selected plus not-selected total of the exploratory query.
    pub query_total: Option<f64>,
    pub selected_total: Option<f64>,
    pub not_selected_total: Option<f64>,
    pub base_annotation: Annotation,
    pub query_annotation: Annotation,
    pub verdict: Verdict,
    pub tolerance: f64,
    pub per_relation_fanout: Vec<RelationFanout>,
    /// Targets that were evaluated with all-ones weights.
    pub unweighed_targets: Vec<String>,
    pub null_payload_count: usize,
    pub result: GroupedResult,
}

impl ConsistencyReport {
    pub fn is_consistent(&self) -> bool {
        self.verdict == Verdict::Consistent
    }
}

/// All-ones tables for every target: the plain, unweighed join.
pub fn unweighed(plan: &QueryPlan, adb: &AnnotatedDatabase) -> Result<WeightMap> {
    let mut out = WeightMap::new();
    for t in &plan.targets {
        out.insert(t.relation.clone(), WeightTable::ones(&adb.get(&t.relation)?.to_relation(), &t.join_key));
    }
    Ok(out)
}

/// Compares the exploratory query's overall total with the base query's.
/// Every target needs a weight table; pass [`unweighed`] to check the plain join.
pub fn check(plan: &QueryPlan, adb: &AnnotatedDatabase, weights: &WeightMap, tol: f64) -> Result<ConsistencyReport> {
    let base = engine::evaluate(&plan.base_plan(), adb, &WeightMap::new())?.overall()?;
    let result = engine::evaluate(plan, adb, weights)?;
    let selected = result.total()?;
    let query = result.overall()?;
    let verdict = if base.approx_eq(&query, tol) { Verdict::Consistent } else { Verdict::Inconsistent };
    let unweighed_targets = plan
        .targets
        .iter()
        .filter(|t| weights.get(&t.relation).is_none_or(|wt| wt.entries.values().all(|w| w.as_rational().is_one())))
        .map(|t| t.relation.clone())
        .collect();
    Ok(ConsistencyReport {
        metric: plan.metric.to_string(),
        kind: plan.kind(),
        base_total: base.finalize(),
        query_total: query.finalize(),
        selected_total: selected.finalize(),
        not_selected_total: result.not_selected.as_ref().and_then(Annotation::finalize),
        base_annotation: base,
        query_annotation: query,
        verdict,
        tolerance: tol,
        per_relation_fanout: diagnose(plan, adb, weights)?,
        unweighed_targets,
        null_payload_count: adb.null_payload_count,
        result,
    })
}

/// For each target, the non-Null join-key groups whose weighted row count
/// differs from one. Targets without a table count as unweighed. An empty
/// list means the sufficient condition for consistency holds.
pub fn diagnose(plan: &QueryPlan, adb: &AnnotatedDatabase, weights: &WeightMap) -> Result<Vec<RelationFanout>> {
    let mut out = Vec::new();
    for t in &plan.targets {
        let rel = adb.get(&t.relation)?.to_relation();
        let table = match weights.get(&t.relation) {
            Some(wt) => wt.clone(),
            None => WeightTable::ones(&rel, &t.join_key),
        };
        let counted = weighing::apply(&table, &rel.annotate_uniform(Annotation::count(1)))?;
        let keys: Vec<_> = t.join_key.iter().map(|a| rel.schema.qualify(a)).collect();
        let partials = engine::aggregate(&counted, &keys)?;
        let mut offenders: Vec<FanoutGroup> = partials
            .groups
            .iter()
            .filter(|(k, a)| !k.iter().any(Value::is_null) && !a.is_one())
            .map(|(k, a)| {
                let (partial, exact) = match a {
                    Annotation::Count(r) => (r.to_f64().unwrap_or(f64::NAN), r.to_string()),
                    other => (other.finalize().unwrap_or(f64::NAN), other.to_string()),
                };
                FanoutGroup { key: k.clone(), partial, exact }
            })
            .collect();
        if offenders.is_empty() {
            continue;
        }
        offenders.sort_by(|a, b| (b.partial - 1.0).abs().total_cmp(&(a.partial - 1.0).abs()).then(a.key.cmp(&b.key)));
        let offending_groups = offenders.len();
        offenders.truncate(FANOUT_SAMPLE);
        out.push(RelationFanout {
            relation: t.relation.clone(),
            join_key: t.join_key.clone(),
            weighed: weights.contains_key(&t.relation),
            offending_groups,
            sample: offenders,
        });
    }
    Ok(out)
}

fn fmt_value(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "null".to_string(),
    }
}

impl fmt::Display for ConsistencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "metric        {}", self.metric)?;
        writeln!(f, "base total    {}", fmt_value(self.base_total))?;
        if self.not_selected_total.is_some() {
            writeln!(f, "selected      {}", fmt_value(self.selected_total))?;
            writeln!(f, "not selected  {}", fmt_value(self.not_selected_total))?;
        }
        writeln!(f, "query total   {}", fmt_value(self.query_total))?;
        writeln!(f, "verdict       {}", self.verdict)?;
        if self.null_payload_count > 0 {
            writeln!(f, "null payloads {}", self.null_payload_count)?;
        }
        if !self.result.keys.is_empty() {
            let header: Vec<String> = self.result.keys.iter().map(ToString::to_string).collect();
            writeln!(f)?;
            writeln!(f, "{}  value", header.join("  "))?;
            for (k, a) in &self.result.groups {
                let key: Vec<String> = k.iter().map(ToString::to_string).collect();
                writeln!(f, "{}  {}", key.join("  "), fmt_value(a.finalize()))?;
            }
        }
        for r in &self.per_relation_fanout {
            writeln!(f)?;
            writeln!(
                f,
                "fanout in {}({}): {} group(s) with partial != 1{}",
                r.relation,
                r.join_key.join(","),
                r.offending_groups,
                if r.weighed { "" } else { " (unweighed)" }
            )?;
            for g in &r.sample {
                let key: Vec<String> = g.key.iter().map(ToString::to_string).collect();
                writeln!(f, "  {}={}  partial {}", r.join_key.join(","), key.join(","), g.exact)?;
            }
        }
        Ok(())
    }
}
