//! Evaluation of annotated relational algebra: grouping, joins, full plans,
//! partial-aggregate pushdown and the nested view used while weighing.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relation::{AnnotatedDatabase, AnnotatedRelation, AnnotatedRow, QualifiedAttr, Schema, Value, ValueType};
use crate::semantic_model::QueryPlan;
use crate::semiring::{Annotation, SemiringKind, Weight};
use crate::weighing::{self, WeightMap, WeightTable};

/// Output of a group-by: one annotation per distinct key tuple. Absent
/// groups are implicitly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedResult {
    pub keys: Vec<QualifiedAttr>,
    pub kind: SemiringKind,
    pub groups: BTreeMap<Vec<Value>, Annotation>,
    /// Total of rows failing the selection; `None` when there was none.
    pub not_selected: Option<Annotation>,
}

impl GroupedResult {
    pub fn get(&self, key: &[Value]) -> Annotation {
        self.groups.get(key).cloned().unwrap_or_else(|| Annotation::zero(self.kind))
    }

    /// Sum over the (selected) groups.
    pub fn total(&self) -> Result<Annotation> {
        Annotation::sum(self.kind, self.groups.values())
    }

    /// Selected total plus the not-selected total.
    pub fn overall(&self) -> Result<Annotation> {
        let t = self.total()?;
        match &self.not_selected {
            Some(n) => t.add(n),
            None => Ok(t),
        }
    }

    /// Finalized value per group, keyed by the first key column's text.
    /// Handy for single-key results.
    pub fn values_by_label(&self) -> BTreeMap<String, Option<f64>> {
        self.groups
            .iter()
            .map(|(k, a)| {
                let label = k.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
                (label, a.finalize())
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct GroupRow {
    key: Vec<Value>,
    value: Option<f64>,
    annotation: Annotation,
}

#[derive(Serialize, Deserialize)]
struct GroupedRepr {
    keys: Vec<QualifiedAttr>,
    kind: SemiringKind,
    rows: Vec<GroupRow>,
    not_selected_total: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    not_selected_annotation: Option<Annotation>,
}

impl Serialize for GroupedResult {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        GroupedRepr {
            keys: self.keys.clone(),
            kind: self.kind,
            rows: self
                .groups
                .iter()
                .map(|(k, a)| GroupRow { key: k.clone(), value: a.finalize(), annotation: a.clone() })
                .collect(),
            not_selected_total: self.not_selected.as_ref().and_then(Annotation::finalize),
            not_selected_annotation: self.not_selected.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GroupedResult {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let r = GroupedRepr::deserialize(deserializer)?;
        Ok(GroupedResult {
            keys: r.keys,
            kind: r.kind,
            groups: r.rows.into_iter().map(|g| (g.key, g.annotation)).collect(),
            not_selected: r.not_selected_annotation,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinMode {
    Inner,
    LeftOuter,
}

fn indices(schema: &Schema, keys: &[QualifiedAttr]) -> Result<Vec<usize>> {
    keys.iter().map(|k| schema.index_of(k)).collect()
}

/// `γ_keys(rel)`: Null key values form their own group. With no keys there
/// is exactly one (global) group, zero over an empty input.
pub fn aggregate(rel: &AnnotatedRelation, keys: &[QualifiedAttr]) -> Result<GroupedResult> {
    let idx = indices(&rel.schema, keys)?;
    let mut groups: BTreeMap<Vec<Value>, Annotation> = BTreeMap::new();
    if keys.is_empty() {
        groups.insert(Vec::new(), Annotation::zero(rel.kind));
    }
    for row in &rel.rows {
        let key: Vec<Value> = idx.iter().map(|&i| row.values[i].clone()).collect();
        accumulate(&mut groups, key, &row.ann, rel.kind)?;
    }
    Ok(GroupedResult { keys: keys.to_vec(), kind: rel.kind, groups, not_selected: None })
}

fn accumulate(
    groups: &mut BTreeMap<Vec<Value>, Annotation>,
    key: Vec<Value>,
    ann: &Annotation,
    kind: SemiringKind,
) -> Result<()> {
    let slot = groups.entry(key).or_insert_with(|| Annotation::zero(kind));
    *slot = slot.add(ann)?;
    Ok(())
}

/// Aggregates onto `keys` and keeps the result as a relation with just
/// those columns, preserving the null-padding annotation.
fn aggregate_relation(rel: &AnnotatedRelation, keys: &[QualifiedAttr]) -> Result<AnnotatedRelation> {
    let idx = indices(&rel.schema, keys)?;
    let mut groups: BTreeMap<Vec<Value>, Annotation> = BTreeMap::new();
    for row in &rel.rows {
        let key: Vec<Value> = idx.iter().map(|&i| row.values[i].clone()).collect();
        accumulate(&mut groups, key, &row.ann, rel.kind)?;
    }
    let schema = Schema {
        relation: rel.schema.relation.clone(),
        columns: idx.iter().map(|&i| rel.schema.columns[i].clone()).collect(),
    };
    Ok(AnnotatedRelation {
        schema,
        kind: rel.kind,
        null_annotation: rel.null_annotation.clone(),
        rows: groups
            .into_iter()
            .enumerate()
            .map(|(i, (values, ann))| AnnotatedRow { row_id: i as u64, values, ann })
            .collect(),
    })
}

// Join keys compare numerically across int and real columns.
fn key_value(v: &Value) -> Value {
    match v {
        Value::Real(r) if r.fract() == 0.0 && r.abs() < 9.0e15 => Value::Int(*r as i64),
        other => other.clone(),
    }
}

fn compatible(a: ValueType, b: ValueType) -> bool {
    a == b || (a.is_numeric() && b.is_numeric())
}

/// Hash join. Matching pairs multiply annotations; Null keys never match.
/// In left-outer mode an unmatched left row is kept with Null right columns
/// and its annotation multiplied by the right side's null-padding annotation.
pub fn join(
    left: &AnnotatedRelation,
    right: &AnnotatedRelation,
    on: &[(QualifiedAttr, QualifiedAttr)],
    mode: JoinMode,
) -> Result<AnnotatedRelation> {
    if left.kind != right.kind {
        return Err(Error::KindMismatch { left: left.kind, right: right.kind });
    }
    if on.is_empty() {
        return Err(Error::BadJoinAttr("join needs at least one attribute pair".into()));
    }
    let mut li = Vec::with_capacity(on.len());
    let mut ri = Vec::with_capacity(on.len());
    for (l, r) in on {
        let a = left.schema.index_of(l).map_err(|_| Error::BadJoinAttr(format!("`{l}` not in left input")))?;
        let b = right.schema.index_of(r).map_err(|_| Error::BadJoinAttr(format!("`{r}` not in right input")))?;
        let (ta, tb) = (left.schema.columns[a].1, right.schema.columns[b].1);
        if !compatible(ta, tb) {
            return Err(Error::BadJoinAttr(format!("`{l}` ({ta}) and `{r}` ({tb}) are not comparable")));
        }
        li.push(a);
        ri.push(b);
    }
    if let Some((q, _)) = right.schema.columns.iter().find(|(q, _)| left.schema.position(q).is_some()) {
        return Err(Error::InvalidQuery(format!("column `{q}` appears on both sides of a join")));
    }

    let mut index: HashMap<Vec<Value>, Vec<usize>> = HashMap::new();
    for (pos, row) in right.rows.iter().enumerate() {
        let key: Vec<Value> = ri.iter().map(|&i| key_value(&row.values[i])).collect();
        if key.iter().any(Value::is_null) {
            continue;
        }
        index.entry(key).or_default().push(pos);
    }

    let mut schema = left.schema.clone();
    schema.columns.extend(right.schema.columns.iter().cloned());
    let mut out = AnnotatedRelation {
        schema,
        kind: left.kind,
        null_annotation: left.null_annotation.mul(&right.null_annotation)?,
        rows: Vec::new(),
    };
    let padding = vec![Value::Null; right.schema.arity()];
    for row in &left.rows {
        let key: Vec<Value> = li.iter().map(|&i| key_value(&row.values[i])).collect();
        let matches = if key.iter().any(Value::is_null) { None } else { index.get(&key) };
        match matches {
            Some(ms) => {
                for &m in ms {
                    let r = &right.rows[m];
                    let mut values = row.values.clone();
                    values.extend(r.values.iter().cloned());
                    let row_id = out.rows.len() as u64;
                    out.rows.push(AnnotatedRow { row_id, values, ann: row.ann.mul(&r.ann)? });
                }
            }
            None if mode == JoinMode::LeftOuter => {
                let mut values = row.values.clone();
                values.extend(padding.iter().cloned());
                let row_id = out.rows.len() as u64;
                out.rows.push(AnnotatedRow { row_id, values, ann: row.ann.mul(&right.null_annotation)? });
            }
            None => {}
        }
    }
    Ok(out)
}

fn qualified(relation: &str, attrs: &[String]) -> Vec<QualifiedAttr> {
    attrs.iter().map(|a| QualifiedAttr::new(relation, a.as_str())).collect()
}

fn edge_on(edge: &crate::join_graph::PlanEdge) -> Vec<(QualifiedAttr, QualifiedAttr)> {
    edge.on
        .iter()
        .map(|(p, c)| (QualifiedAttr::new(&edge.parent, p.as_str()), QualifiedAttr::new(&edge.child, c.as_str())))
        .collect()
}

fn check_weights(plan: &QueryPlan, weights: &WeightMap) -> Result<()> {
    let missing: Vec<String> =
        plan.targets.iter().filter(|t| !weights.contains_key(&t.relation)).map(ToString::to_string).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingWeights(missing))
    }
}

/// The relation as it enters the plan: weighed if it is a target with a table.
fn input(plan: &QueryPlan, adb: &AnnotatedDatabase, weights: &WeightMap, name: &str) -> Result<AnnotatedRelation> {
    let rel = adb.get(name)?;
    if rel.kind != plan.kind() {
        return Err(Error::KindMismatch { left: plan.kind(), right: rel.kind });
    }
    match (plan.target(name), weights.get(name)) {
        (Some(_), Some(wt)) => weighing::apply(wt, rel),
        _ => Ok(rel.clone()),
    }
}

/// Left-outer joins along the first `n_edges` plan edges, starting at the root.
fn materialize(plan: &QueryPlan, adb: &AnnotatedDatabase, weights: &WeightMap, n_edges: usize) -> Result<AnnotatedRelation> {
    let mut acc = input(plan, adb, weights, &plan.root)?;
    for edge in &plan.edges[..n_edges] {
        let child = input(plan, adb, weights, &edge.child)?;
        acc = join(&acc, &child, &edge_on(edge), JoinMode::LeftOuter)?;
    }
    Ok(acc)
}

/// Applies the selection partition and the group-by.
fn finish(plan: &QueryPlan, rel: &AnnotatedRelation) -> Result<GroupedResult> {
    let gi = indices(&rel.schema, &plan.group_by)?;
    let si = match &plan.selection {
        Some(p) => Some((p, indices(&rel.schema, &p.atoms.iter().map(|a| a.attr.clone()).collect::<Vec<_>>())?)),
        None => None,
    };
    let kind = rel.kind;
    let mut groups: BTreeMap<Vec<Value>, Annotation> = BTreeMap::new();
    if plan.group_by.is_empty() {
        groups.insert(Vec::new(), Annotation::zero(kind));
    }
    let mut not_selected = si.as_ref().map(|_| Annotation::zero(kind));
    for row in &rel.rows {
        let selected = match &si {
            Some((p, idx)) => p.eval(&idx.iter().map(|&i| &row.values[i]).collect::<Vec<_>>()),
            None => true,
        };
        if selected {
            accumulate(&mut groups, gi.iter().map(|&i| row.values[i].clone()).collect(), &row.ann, kind)?;
        } else if let Some(n) = &mut not_selected {
            *n = n.add(&row.ann)?;
        }
    }
    Ok(GroupedResult { keys: plan.group_by.clone(), kind, groups, not_selected })
}

/// Evaluates the plan by materializing the full left-outer join chain.
pub fn evaluate(plan: &QueryPlan, adb: &AnnotatedDatabase, weights: &WeightMap) -> Result<GroupedResult> {
    check_weights(plan, weights)?;
    let rel = materialize(plan, adb, weights, plan.edges.len())?;
    finish(plan, &rel)
}

/// Same result as [`evaluate`], computed bottom-up: every relation is first
/// aggregated onto its join keys and the attributes the query reads, so
/// many-to-many joins become joins between partial aggregates.
pub fn pushdown_aggregate(plan: &QueryPlan, adb: &AnnotatedDatabase, weights: &WeightMap) -> Result<GroupedResult> {
    check_weights(plan, weights)?;
    let referenced = plan.referenced_attrs();
    let mut children: BTreeMap<&str, Vec<&crate::join_graph::PlanEdge>> = BTreeMap::new();
    for e in &plan.edges {
        children.entry(e.parent.as_str()).or_default().push(e);
    }
    let ctx = Pushdown { plan, adb, weights, referenced: &referenced, children: &children };
    let root = ctx.partial(&plan.root, &[])?;
    finish(plan, &root)
}

struct Pushdown<'a> {
    plan: &'a QueryPlan,
    adb: &'a AnnotatedDatabase,
    weights: &'a WeightMap,
    referenced: &'a [QualifiedAttr],
    children: &'a BTreeMap<&'a str, Vec<&'a crate::join_graph::PlanEdge>>,
}

impl Pushdown<'_> {
    fn subtree(&self, node: &str, out: &mut BTreeSet<String>) {
        out.insert(node.to_string());
        for e in self.children.get(node).into_iter().flatten() {
            self.subtree(&e.child, out);
        }
    }

    /// `node`'s subtree aggregated onto `up_key` (its side of the edge to its
    /// parent) plus every referenced attribute inside the subtree.
    fn partial(&self, node: &str, up_key: &[String]) -> Result<AnnotatedRelation> {
        let rel = input(self.plan, self.adb, self.weights, node)?;
        let kids = self.children.get(node).cloned().unwrap_or_default();

        let mut own: Vec<QualifiedAttr> = qualified(node, up_key);
        for e in &kids {
            own.extend(qualified(node, &e.parent_key()));
        }
        own.extend(self.referenced.iter().filter(|a| a.relation == node).cloned());
        dedup(&mut own);
        let mut acc = aggregate_relation(&rel, &own)?;

        for e in kids {
            let sub = self.partial(&e.child, &e.child_key())?;
            acc = join(&acc, &sub, &edge_on(e), JoinMode::LeftOuter)?;
        }

        let mut members = BTreeSet::new();
        self.subtree(node, &mut members);
        let mut keep: Vec<QualifiedAttr> = qualified(node, up_key);
        keep.extend(self.referenced.iter().filter(|a| members.contains(&a.relation)).cloned());
        dedup(&mut keep);
        aggregate_relation(&acc, &keep)
    }
}

fn dedup(attrs: &mut Vec<QualifiedAttr>) {
    let mut seen = BTreeSet::new();
    attrs.retain(|a| seen.insert(a.clone()));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRow {
    pub row_id: u64,
    pub values: Vec<Value>,
    pub weight: Weight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewGroup {
    pub key: Vec<Value>,
    /// Finalized parent-side aggregate for this key.
    pub parent_value: Option<f64>,
    pub parent_annotation: Annotation,
    pub members: Vec<MemberRow>,
    pub weight_sum: f64,
}

/// The parent side summarized by join key next to the frontier's rows, as a
/// one-to-many nested table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedView {
    pub frontier: String,
    pub parent: String,
    pub join_key: Vec<String>,
    pub columns: Vec<String>,
    /// False when the frontier has no weight table yet (weights shown as 1).
    pub weighed: bool,
    pub total_groups: usize,
    pub offset: usize,
    pub limit: usize,
    pub end_of_data: bool,
    pub groups: Vec<ViewGroup>,
}

/// Builds one page of the nested view for `frontier`. Groups are the
/// frontier's non-Null join keys in ascending order. Earlier targets use
/// their weight tables when present.
pub fn partial_view(
    plan: &QueryPlan,
    adb: &AnnotatedDatabase,
    weights: &WeightMap,
    frontier: &str,
    offset: usize,
    limit: usize,
) -> Result<NestedView> {
    let (idx, edge) = plan.edge_into(frontier).ok_or_else(|| Error::UnknownRelation(frontier.to_string()))?;
    let prefix = materialize(plan, adb, weights, idx)?;
    let parent_partials = aggregate(&prefix, &qualified(&edge.parent, &edge.parent_key()))?;

    let rel = adb.get(frontier)?;
    let table: WeightTable = match weights.get(frontier) {
        Some(t) => t.clone(),
        None => WeightTable::ones(&rel.to_relation(), &edge.child_key()),
    };
    let key_idx: Vec<usize> =
        edge.child_key().iter().map(|a| rel.schema.attribute(a).map(|(i, _)| i)).collect::<Result<_>>()?;
    let mut groups: BTreeMap<Vec<Value>, Vec<MemberRow>> = BTreeMap::new();
    for row in &rel.rows {
        let key: Vec<Value> = key_idx.iter().map(|&i| row.values[i].clone()).collect();
        if key.iter().any(Value::is_null) {
            continue;
        }
        let weight = table.get(row.row_id).cloned().unwrap_or_else(Weight::zero);
        groups.entry(key).or_default().push(MemberRow { row_id: row.row_id, values: row.values.clone(), weight });
    }

    let total_groups = groups.len();
    let page: Vec<ViewGroup> = groups
        .into_iter()
        .skip(offset)
        .take(limit)
        .map(|(key, members)| {
            let lookup: Vec<Value> = key.iter().map(key_value).collect();
            let parent = parent_partials
                .groups
                .iter()
                .find(|(k, _)| k.iter().map(key_value).eq(lookup.iter().cloned()))
                .map(|(_, a)| a.clone())
                .unwrap_or_else(|| Annotation::zero(plan.kind()));
            let weight_sum = members.iter().map(|m| m.weight.to_f64()).sum();
            ViewGroup { key, parent_value: parent.finalize(), parent_annotation: parent, members, weight_sum }
        })
        .collect();
    Ok(NestedView {
        frontier: frontier.to_string(),
        parent: edge.parent.clone(),
        join_key: edge.child_key(),
        columns: rel.schema.attribute_names(),
        weighed: weights.contains_key(frontier),
        total_groups,
        offset,
        limit,
        end_of_data: offset.saturating_add(limit) >= total_groups,
        groups: page,
    })
}
