//! Metrics, base queries, exploratory queries, and their resolution into
//! join plans.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::join_graph::{weighing_targets, JoinGraph, PlanEdge, WeighingTarget};
use crate::relation::{Database, QualifiedAttr, Value, ValueType};
use crate::semiring::SemiringKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Aggregate {
    Sum,
    Count,
    Avg,
    Max,
    Min,
}

impl Aggregate {
    pub fn kind(self) -> SemiringKind {
        match self {
            Aggregate::Sum => SemiringKind::SumReal,
            Aggregate::Count => SemiringKind::Count,
            Aggregate::Avg => SemiringKind::Avg,
            Aggregate::Max => SemiringKind::MaxTropical,
            Aggregate::Min => SemiringKind::MinTropical,
        }
    }
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregate::Sum => "SUM",
            Aggregate::Count => "COUNT",
            Aggregate::Avg => "AVG",
            Aggregate::Max => "MAX",
            Aggregate::Min => "MIN",
        })
    }
}

impl FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "SUM" => Aggregate::Sum,
            "COUNT" => Aggregate::Count,
            "AVG" => Aggregate::Avg,
            "MAX" => Aggregate::Max,
            "MIN" => Aggregate::Min,
            _ => return Err(Error::InvalidQuery(format!("unknown aggregate `{s}`"))),
        })
    }
}

/// What a metric aggregates: a single attribute, or `*` for `COUNT(*)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    Star,
    Attr(QualifiedAttr),
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Star => f.write_str("*"),
            Payload::Attr(a) => write!(f, "{a}"),
        }
    }
}

impl FromStr for Payload {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "*" {
            Ok(Payload::Star)
        } else {
            Ok(Payload::Attr(s.parse()?))
        }
    }
}

impl Serialize for Payload {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Payload {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub agg: Aggregate,
    pub payload: Payload,
}

impl Metric {
    pub fn parse(name: &str, agg: &str, payload: &str) -> Result<Self> {
        let metric = Metric { name: name.to_string(), agg: agg.parse()?, payload: payload.parse()? };
        if metric.payload == Payload::Star && metric.agg != Aggregate::Count {
            return Err(Error::InvalidQuery(format!("`*` payload requires COUNT in metric `{name}`")));
        }
        Ok(metric)
    }

    pub fn kind(&self) -> SemiringKind {
        self.agg.kind()
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.agg, self.payload)
    }
}

/// The engineer-declared metric together with its intended duplication level.
/// The first relation is the driving relation of every left-outer join chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseQuery {
    pub metric: Metric,
    pub relations: Vec<String>,
}

impl BaseQuery {
    pub fn relation_set(&self) -> BTreeSet<String> {
        self.relations.iter().cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CmpOp {
    fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub attr: QualifiedAttr,
    pub op: CmpOp,
    pub literal: Value,
}

impl Atom {
    /// Null never satisfies an atom.
    pub fn eval(&self, v: &Value) -> bool {
        v.sql_cmp(&self.literal).is_some_and(|ord| self.op.holds(ord))
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lit = match &self.literal {
            Value::Text(s) => format!("'{}'", s.replace('\'', "''")),
            Value::Real(r) if r.fract() == 0.0 && r.is_finite() => format!("{r:.1}"),
            other => other.to_string(),
        };
        write!(f, "{} {} {}", self.attr, self.op.symbol(), lit)
    }
}

/// A conjunction of comparison atoms.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Predicate {
    pub atoms: Vec<Atom>,
}

impl Predicate {
    pub fn attributes(&self) -> impl Iterator<Item = &QualifiedAttr> {
        self.atoms.iter().map(|a| &a.attr)
    }

    /// `values[i]` is the value of `self.atoms[i].attr`.
    pub fn eval(&self, values: &[&Value]) -> bool {
        self.atoms.iter().zip(values).all(|(a, v)| a.eval(v))
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.atoms.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(" AND "))
    }
}

impl FromStr for Predicate {
    type Err = Error;

    /// Parses `R.a <op> literal [AND ...]`. Literals are numbers, quoted
    /// strings, `NULL`, or bare words (taken as text).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidPredicate(s.to_string());
        let mut atoms = Vec::new();
        for part in split_conjuncts(s) {
            let part = part.trim();
            if part.is_empty() {
                return Err(bad());
            }
            let (pos, op, len) = find_operator(part).ok_or_else(bad)?;
            let attr: QualifiedAttr = part[..pos].trim().parse().map_err(|_| bad())?;
            let literal = parse_literal(part[pos + len..].trim()).ok_or_else(bad)?;
            atoms.push(Atom { attr, op, literal });
        }
        Ok(Predicate { atoms })
    }
}

impl Serialize for Predicate {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Predicate {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

fn split_conjuncts(s: &str) -> Vec<String> {
    // Split on AND outside quotes.
    let mut parts = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if let Some(q) = quote {
            cur.push(c);
            if c == q {
                quote = None;
            }
            i += 1;
            continue;
        }
        if c == '\'' || c == '"' {
            quote = Some(c);
            cur.push(c);
            i += 1;
            continue;
        }
        let boundary_before = i == 0 || chars[i - 1].is_whitespace();
        let is_and = i + 3 < chars.len()
            && chars[i..i + 3].iter().collect::<String>().eq_ignore_ascii_case("and")
            && chars[i + 3].is_whitespace();
        if boundary_before && is_and {
            parts.push(std::mem::take(&mut cur));
            i += 3;
            continue;
        }
        if c == '&' && chars.get(i + 1) == Some(&'&') {
            parts.push(std::mem::take(&mut cur));
            i += 2;
            continue;
        }
        cur.push(c);
        i += 1;
    }
    parts.push(cur);
    parts
}

fn find_operator(s: &str) -> Option<(usize, CmpOp, usize)> {
    const OPS: [(&str, CmpOp); 10] = [
        ("<=", CmpOp::Le),
        (">=", CmpOp::Ge),
        ("!=", CmpOp::Ne),
        ("<>", CmpOp::Ne),
        ("==", CmpOp::Eq),
        ("≤", CmpOp::Le),
        ("≥", CmpOp::Ge),
        ("≠", CmpOp::Ne),
        ("<", CmpOp::Lt),
        (">", CmpOp::Gt),
    ];
    let quote_start = s.find(['\'', '"']).unwrap_or(s.len());
    let head = &s[..quote_start];
    for (sym, op) in OPS {
        if let Some(pos) = head.find(sym) {
            return Some((pos, op, sym.len()));
        }
    }
    head.find('=').map(|pos| (pos, CmpOp::Eq, 1))
}

fn parse_literal(s: &str) -> Option<Value> {
    if s.is_empty() {
        return None;
    }
    for q in ['\'', '"'] {
        if let Some(inner) = s.strip_prefix(q).and_then(|r| r.strip_suffix(q)) {
            let doubled: String = [q, q].iter().collect();
            return Some(Value::Text(inner.replace(&doubled, &q.to_string())));
        }
    }
    if s.eq_ignore_ascii_case("null") {
        return Some(Value::Null);
    }
    if let Ok(i) = s.parse::<i64>() {
        return Some(Value::Int(i));
    }
    if let Ok(r) = s.parse::<f64>() {
        return Some(Value::Real(r));
    }
    Some(Value::Text(s.to_string()))
}

/// An analyst query reusing a base query's metric with extra group-bys,
/// a selection, and possibly extra joined relations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploratoryQuery {
    pub base: BaseQuery,
    #[serde(default)]
    pub group_by: Vec<QualifiedAttr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<Predicate>,
    /// Relations joined without referencing any of their attributes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_relations: Vec<String>,
}

impl ExploratoryQuery {
    pub fn base_only(base: BaseQuery) -> Self {
        ExploratoryQuery { base, group_by: Vec::new(), selection: None, extra_relations: Vec::new() }
    }

    pub fn group_by(mut self, attr: &str) -> Result<Self> {
        self.group_by.push(attr.parse()?);
        Ok(self)
    }

    pub fn select(mut self, predicate: &str) -> Result<Self> {
        let p: Predicate = predicate.parse()?;
        match &mut self.selection {
            Some(existing) => existing.atoms.extend(p.atoms),
            None => self.selection = Some(p),
        }
        Ok(self)
    }

    pub fn join(mut self, relation: &str) -> Self {
        self.extra_relations.push(relation.to_string());
        self
    }

    /// Every attribute the query reads beyond the metric payload.
    pub fn referenced_attrs(&self) -> Vec<QualifiedAttr> {
        let mut out: Vec<QualifiedAttr> = self.group_by.clone();
        if let Some(p) = &self.selection {
            out.extend(p.attributes().cloned());
        }
        out
    }
}

/// A resolved, deterministic evaluation plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub metric: Metric,
    pub base_relations: Vec<String>,
    pub root: String,
    /// Depth-first, base-internal edges first.
    pub edges: Vec<PlanEdge>,
    pub targets: Vec<WeighingTarget>,
    pub payload_relation: Option<String>,
    pub group_by: Vec<QualifiedAttr>,
    pub selection: Option<Predicate>,
}

impl QueryPlan {
    pub fn kind(&self) -> SemiringKind {
        self.metric.kind()
    }

    /// The base query's plan: base-internal edges only, no grouping or selection.
    pub fn base_plan(&self) -> QueryPlan {
        let base: BTreeSet<&str> = self.base_relations.iter().map(String::as_str).collect();
        QueryPlan {
            metric: self.metric.clone(),
            base_relations: self.base_relations.clone(),
            root: self.root.clone(),
            edges: self
                .edges
                .iter()
                .filter(|e| base.contains(e.parent.as_str()) && base.contains(e.child.as_str()))
                .cloned()
                .collect(),
            targets: Vec::new(),
            payload_relation: self.payload_relation.clone(),
            group_by: Vec::new(),
            selection: None,
        }
    }

    pub fn relations(&self) -> Vec<String> {
        std::iter::once(self.root.clone()).chain(self.edges.iter().map(|e| e.child.clone())).collect()
    }

    pub fn referenced_attrs(&self) -> Vec<QualifiedAttr> {
        let mut out = self.group_by.clone();
        if let Some(p) = &self.selection {
            out.extend(p.attributes().cloned());
        }
        out
    }

    pub fn target(&self, relation: &str) -> Option<&WeighingTarget> {
        self.targets.iter().find(|t| t.relation == relation)
    }

    pub fn edge_into(&self, relation: &str) -> Option<(usize, &PlanEdge)> {
        self.edges.iter().enumerate().find(|(_, e)| e.child == relation)
    }
}

/// Resolves `q` against a graph whose cardinalities have been prepared.
pub fn resolve(q: &ExploratoryQuery, graph: &JoinGraph, db: &Database) -> Result<QueryPlan> {
    let base = &q.base;
    if base.relations.is_empty() {
        return Err(Error::InvalidQuery(format!("base query for `{}` has no relations", base.metric.name)));
    }
    for r in &base.relations {
        if !graph.nodes.contains(r) {
            return Err(Error::UnknownRelation(r.clone()));
        }
    }
    let base_set = base.relation_set();
    let payload_relation = match &base.metric.payload {
        Payload::Star => None,
        Payload::Attr(a) => {
            db.attr_type(a)?;
            if !base_set.contains(&a.relation) {
                return Err(Error::InvalidQuery(format!(
                    "payload relation `{}` is not part of the base query",
                    a.relation
                )));
            }
            Some(a.relation.clone())
        }
    };
    let base_edges = graph.steiner_subtree(&base_set, &base.relations)?;
    if base_edges.iter().any(|e| !base_set.contains(&e.child)) {
        return Err(Error::InvalidQuery(format!(
            "base relations {:?} are not connected in the join graph",
            base.relations
        )));
    }

    let mut required = base_set.clone();
    for attr in q.referenced_attrs() {
        if !graph.nodes.contains(&attr.relation) {
            return Err(Error::UnknownAttribute(attr.to_string()));
        }
        db.attr_type(&attr)?;
        required.insert(attr.relation.clone());
    }
    if let Some(p) = &q.selection {
        for atom in &p.atoms {
            check_literal(atom, db.attr_type(&atom.attr)?)?;
        }
    }
    for r in &q.extra_relations {
        if !graph.nodes.contains(r) {
            return Err(Error::UnknownRelation(r.clone()));
        }
        required.insert(r.clone());
    }

    let edges = graph.steiner_subtree(&required, &base.relations)?;
    // Max and min are idempotent under fanout, so nothing needs weighing.
    let targets = if base.metric.kind().is_scalable() { weighing_targets(&base_set, &edges) } else { Vec::new() };
    Ok(QueryPlan {
        metric: base.metric.clone(),
        base_relations: base.relations.clone(),
        root: base.relations[0].clone(),
        edges,
        targets,
        payload_relation,
        group_by: q.group_by.clone(),
        selection: q.selection.clone(),
    })
}

fn check_literal(atom: &Atom, ty: ValueType) -> Result<()> {
    let ok = match (&atom.literal, ty) {
        (Value::Null, _) => true,
        (Value::Int(_) | Value::Real(_), t) => t.is_numeric(),
        (Value::Text(_), t) => t == ValueType::Text,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidPredicate(format!("{atom}: literal does not match {ty} attribute")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseQueryDecl {
    pub metric: String,
    pub relations: Vec<String>,
}

/// The semantic-layer document: metrics and their base queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticLayer {
    pub metrics: Vec<Metric>,
    pub base_queries: Vec<BaseQueryDecl>,
}

impl SemanticLayer {
    pub fn from_json(text: &str) -> Result<Self> {
        let layer: SemanticLayer = serde_json::from_str(text)?;
        for m in &layer.metrics {
            if m.payload == Payload::Star && m.agg != Aggregate::Count {
                return Err(Error::InvalidQuery(format!("`*` payload requires COUNT in metric `{}`", m.name)));
            }
        }
        Ok(layer)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn metric(&self, name: &str) -> Result<&Metric> {
        self.metrics.iter().find(|m| m.name == name).ok_or_else(|| Error::UnknownMetric(name.to_string()))
    }

    pub fn base_query(&self, metric: &str) -> Result<BaseQuery> {
        let m = self.metric(metric)?;
        let decl = self
            .base_queries
            .iter()
            .find(|b| b.metric == metric)
            .ok_or_else(|| Error::UnknownMetric(format!("{metric} (no base query)")))?;
        Ok(BaseQuery { metric: m.clone(), relations: decl.relations.clone() })
    }
}
