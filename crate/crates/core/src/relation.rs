//! Tabular data model: values, schemas, plain and annotated relations.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semantic_model::{Aggregate, Metric, Payload};
use crate::semiring::{Annotation, SemiringKind};

/// A cell value. `Null` never matches in a join but forms its own group.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Int(_) | Value::Real(_) => 1,
            Value::Text(_) => 2,
        }
    }

    /// SQL-style comparison: `None` when either side is Null or the types
    /// are incomparable.
    pub fn sql_cmp(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Null, _) | (_, Value::Null) => None,
            (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
            (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
            (a, b) => a.as_f64()?.partial_cmp(&b.as_f64()?),
        }
    }
}

// Total order used for grouping and deterministic output:
// Null < numbers < text; Int and Real interleave by numeric value.
impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Real(a), Value::Real(b)) => a.total_cmp(b),
            (Value::Int(a), Value::Real(b)) => (*a as f64).total_cmp(b).then(Ordering::Less),
            (Value::Real(a), Value::Int(b)) => a.total_cmp(&(*b as f64)).then(Ordering::Greater),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Value::Null => 0u8.hash(state),
            Value::Int(i) => {
                1u8.hash(state);
                i.hash(state);
            }
            Value::Real(r) => {
                2u8.hash(state);
                r.to_bits().hash(state);
            }
            Value::Text(s) => {
                3u8.hash(state);
                s.hash(state);
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Int,
    Real,
    Text,
}

impl ValueType {
    pub fn is_numeric(self) -> bool {
        matches!(self, ValueType::Int | ValueType::Real)
    }

    pub fn parse_cell(self, cell: &str) -> Option<Value> {
        match self {
            ValueType::Int => cell.trim().parse().ok().map(Value::Int),
            ValueType::Real => cell.trim().parse().ok().map(Value::Real),
            ValueType::Text => Some(Value::Text(cell.to_string())),
        }
    }

    pub fn admits(self, value: &Value) -> bool {
        matches!(
            (self, value),
            (_, Value::Null)
                | (ValueType::Int, Value::Int(_))
                | (ValueType::Real, Value::Real(_))
                | (ValueType::Text, Value::Text(_))
        )
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueType::Int => "int",
            ValueType::Real => "real",
            ValueType::Text => "text",
        })
    }
}

/// `relation.attribute`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QualifiedAttr {
    pub relation: String,
    pub attribute: String,
}

impl QualifiedAttr {
    pub fn new(relation: impl Into<String>, attribute: impl Into<String>) -> Self {
        QualifiedAttr { relation: relation.into(), attribute: attribute.into() }
    }
}

impl fmt::Display for QualifiedAttr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.relation, self.attribute)
    }
}

impl FromStr for QualifiedAttr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().split_once('.') {
            Some((r, a)) if !r.is_empty() && !a.is_empty() => Ok(QualifiedAttr::new(r, a)),
            _ => Err(Error::UnknownAttribute(s.to_string())),
        }
    }
}

impl Serialize for QualifiedAttr {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QualifiedAttr {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ValueType,
}

impl Attribute {
    pub fn new(name: impl Into<String>, ty: ValueType) -> Self {
        Attribute { name: name.into(), ty }
    }
}

/// Ordered columns of a relation. Columns of a join result keep the name of
/// the relation they came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub relation: String,
    pub columns: Vec<(QualifiedAttr, ValueType)>,
}

impl Schema {
    pub fn new(relation: impl Into<String>, attributes: &[Attribute]) -> Result<Self> {
        let relation = relation.into();
        let mut columns: Vec<(QualifiedAttr, ValueType)> = Vec::with_capacity(attributes.len());
        for attr in attributes {
            if columns.iter().any(|(q, _)| q.attribute == attr.name) {
                return Err(Error::InvalidQuery(format!(
                    "duplicate attribute `{}` in relation `{relation}`",
                    attr.name
                )));
            }
            columns.push((QualifiedAttr::new(relation.clone(), attr.name.clone()), attr.ty));
        }
        Ok(Schema { relation, columns })
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn position(&self, attr: &QualifiedAttr) -> Option<usize> {
        self.columns.iter().position(|(q, _)| q == attr)
    }

    pub fn index_of(&self, attr: &QualifiedAttr) -> Result<usize> {
        self.position(attr).ok_or_else(|| Error::UnknownAttribute(attr.to_string()))
    }

    /// Looks up an unqualified attribute name among this relation's own columns.
    pub fn attribute(&self, name: &str) -> Result<(usize, ValueType)> {
        self.columns
            .iter()
            .position(|(q, _)| q.relation == self.relation && q.attribute == name)
            .map(|i| (i, self.columns[i].1))
            .ok_or_else(|| Error::MissingAttribute { relation: self.relation.clone(), attribute: name.to_string() })
    }

    pub fn qualify(&self, name: &str) -> QualifiedAttr {
        QualifiedAttr::new(self.relation.clone(), name)
    }

    pub fn attribute_names(&self) -> Vec<String> {
        self.columns.iter().map(|(q, _)| q.attribute.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tuple {
    pub row_id: u64,
    pub values: Vec<Value>,
}

/// An unannotated base relation, as loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    pub schema: Schema,
    pub rows: Vec<Tuple>,
}

impl Relation {
    pub fn new(schema: Schema) -> Self {
        Relation { schema, rows: Vec::new() }
    }

    pub fn name(&self) -> &str {
        &self.schema.relation
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends a row with the next row id.
    pub fn push(&mut self, values: Vec<Value>) -> Result<u64> {
        if values.len() != self.schema.arity() {
            return Err(Error::InvalidQuery(format!(
                "row arity {} does not match relation `{}` arity {}",
                values.len(),
                self.name(),
                self.schema.arity()
            )));
        }
        for (v, (q, ty)) in values.iter().zip(&self.schema.columns) {
            if !ty.admits(v) {
                return Err(Error::Type {
                    row: self.rows.len(),
                    column: q.attribute.clone(),
                    expected: ty.to_string(),
                    found: v.to_string(),
                });
            }
        }
        let row_id = self.rows.last().map_or(0, |t| t.row_id + 1);
        self.rows.push(Tuple { row_id, values });
        Ok(row_id)
    }

    /// Annotates every row with `ann`; the null-padding annotation is one.
    pub fn annotate_uniform(&self, ann: Annotation) -> AnnotatedRelation {
        let kind = ann.kind();
        AnnotatedRelation {
            schema: self.schema.clone(),
            kind,
            null_annotation: Annotation::one(kind),
            rows: self
                .rows
                .iter()
                .map(|t| AnnotatedRow { row_id: t.row_id, values: t.values.clone(), ann: ann.clone() })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedRow {
    pub row_id: u64,
    pub values: Vec<Value>,
    pub ann: Annotation,
}

/// A relation whose tuples carry semiring annotations of a single kind.
///
/// `null_annotation` is the annotation of the all-Null tuple that pads a
/// left-outer join when this relation has no match: one for ordinary
/// relations, zero for the relation holding the metric payload (a missing
/// payload contributes nothing, like a Null under SQL aggregation).
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedRelation {
    pub schema: Schema,
    pub kind: SemiringKind,
    pub null_annotation: Annotation,
    pub rows: Vec<AnnotatedRow>,
}

impl AnnotatedRelation {
    pub fn empty(schema: Schema, kind: SemiringKind) -> Self {
        AnnotatedRelation { schema, kind, null_annotation: Annotation::one(kind), rows: Vec::new() }
    }

    pub fn name(&self) -> &str {
        &self.schema.relation
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sum of all annotations.
    pub fn total(&self) -> Result<Annotation> {
        Annotation::sum(self.kind, self.rows.iter().map(|r| &r.ann))
    }

    /// Drops annotations.
    pub fn to_relation(&self) -> Relation {
        Relation {
            schema: self.schema.clone(),
            rows: self.rows.iter().map(|r| Tuple { row_id: r.row_id, values: r.values.clone() }).collect(),
        }
    }
}

/// Named base relations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Database {
    relations: BTreeMap<String, Relation>,
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, relation: Relation) -> Result<()> {
        let name = relation.name().to_string();
        if self.relations.contains_key(&name) {
            return Err(Error::DuplicateRelation(name));
        }
        self.relations.insert(name, relation);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Relation> {
        self.relations.get(name).ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.relations.contains_key(name)
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.relations.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.relations.keys().map(String::as_str)
    }

    /// Type of a qualified attribute.
    pub fn attr_type(&self, attr: &QualifiedAttr) -> Result<ValueType> {
        let rel = self.get(&attr.relation).map_err(|_| Error::UnknownAttribute(attr.to_string()))?;
        rel.schema
            .attribute(&attr.attribute)
            .map(|(_, ty)| ty)
            .map_err(|_| Error::UnknownAttribute(attr.to_string()))
    }
}

/// Every relation annotated for one metric.
#[derive(Debug, Clone)]
pub struct AnnotatedDatabase {
    pub kind: SemiringKind,
    pub relations: BTreeMap<String, AnnotatedRelation>,
    /// Relation whose tuples carry the payload; `None` for `COUNT(*)`.
    pub payload_relation: Option<String>,
    /// Payload rows whose attribute was Null and were annotated zero.
    pub null_payload_count: usize,
}

impl AnnotatedDatabase {
    pub fn get(&self, name: &str) -> Result<&AnnotatedRelation> {
        self.relations.get(name).ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }
}

/// Annotates `db` for `metric`: payload tuples carry the payload value, all
/// other tuples carry one. Null payloads become zero and are counted.
pub fn annotate_for_metric(db: &Database, metric: &Metric) -> Result<AnnotatedDatabase> {
    let kind = metric.agg.kind();
    let payload = match &metric.payload {
        Payload::Star => None,
        Payload::Attr(attr) => {
            let rel = db.get(&attr.relation).map_err(|_| Error::MissingAttribute {
                relation: attr.relation.clone(),
                attribute: attr.attribute.clone(),
            })?;
            let (idx, ty) = rel.schema.attribute(&attr.attribute)?;
            if metric.agg != Aggregate::Count && !ty.is_numeric() {
                return Err(Error::NonNumericPayload(attr.to_string()));
            }
            Some((attr.relation.clone(), idx))
        }
    };

    let one = Annotation::one(kind);
    let zero = Annotation::zero(kind);
    let mut null_payload_count = 0;
    let mut relations = BTreeMap::new();
    for rel in db.relations() {
        let annotated = match &payload {
            Some((name, idx)) if name == rel.name() => {
                let mut out = AnnotatedRelation::empty(rel.schema.clone(), kind);
                out.null_annotation = zero.clone();
                for t in &rel.rows {
                    let v = &t.values[*idx];
                    let ann = if v.is_null() {
                        null_payload_count += 1;
                        zero.clone()
                    } else {
                        payload_annotation(metric.agg, v)
                    };
                    out.rows.push(AnnotatedRow { row_id: t.row_id, values: t.values.clone(), ann });
                }
                out
            }
            _ => rel.annotate_uniform(one.clone()),
        };
        relations.insert(rel.name().to_string(), annotated);
    }
    Ok(AnnotatedDatabase {
        kind,
        relations,
        payload_relation: payload.map(|(name, _)| name),
        null_payload_count,
    })
}

fn payload_annotation(agg: Aggregate, v: &Value) -> Annotation {
    let x = v.as_f64().unwrap_or(0.0);
    match agg {
        Aggregate::Count => Annotation::count(1),
        Aggregate::Sum => Annotation::SumReal(x),
        Aggregate::Avg => Annotation::avg_payload(x),
        Aggregate::Max => Annotation::MaxTropical(x),
        Aggregate::Min => Annotation::MinTropical(x),
    }
}

/// Reads an RFC-4180 CSV with a header row. Columns are matched to the
/// schema by name; row ids follow file order from 0.
pub fn load_csv(path: impl AsRef<Path>, relation: &str, attributes: &[Attribute], null_token: &str) -> Result<Relation> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, relation, attributes, null_token)
}

pub fn read_csv(reader: impl Read, relation: &str, attributes: &[Attribute], null_token: &str) -> Result<Relation> {
    let schema = Schema::new(relation, attributes)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { row: 0, column: String::new(), message: e.to_string() })?
        .clone();
    let header: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    let mut order = Vec::with_capacity(attributes.len());
    for attr in attributes {
        let pos = header.iter().position(|h| *h == attr.name).ok_or_else(|| Error::Parse {
            row: 0,
            column: attr.name.clone(),
            message: "column missing from header".into(),
        })?;
        order.push(pos);
    }
    if header.len() != attributes.len() {
        let extra = header.iter().find(|h| !attributes.iter().any(|a| &a.name == *h)).cloned().unwrap_or_default();
        return Err(Error::Parse { row: 0, column: extra, message: "header column not in schema".into() });
    }

    let mut out = Relation::new(schema);
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse { row, column: String::new(), message: e.to_string() })?;
        let mut values = Vec::with_capacity(attributes.len());
        for (attr, &pos) in attributes.iter().zip(&order) {
            let cell = record.get(pos).ok_or_else(|| Error::Parse {
                row,
                column: attr.name.clone(),
                message: "missing cell".into(),
            })?;
            if cell == null_token {
                values.push(Value::Null);
                continue;
            }
            let v = attr.ty.parse_cell(cell).ok_or_else(|| Error::Type {
                row,
                column: attr.name.clone(),
                expected: attr.ty.to_string(),
                found: cell.to_string(),
            })?;
            values.push(v);
        }
        out.rows.push(Tuple { row_id: row as u64, values });
    }
    Ok(out)
}

/// Writes `rel` as CSV such that [`read_csv`] with the same token reproduces it.
pub fn write_csv(rel: &Relation, writer: impl Write, null_token: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::io(rel.name(), e);
    w.write_record(rel.schema.attribute_names()).map_err(io_err)?;
    for (row, t) in rel.rows.iter().enumerate() {
        let mut cells = Vec::with_capacity(t.values.len());
        for (v, (q, _)) in t.values.iter().zip(&rel.schema.columns) {
            let cell = match v {
                Value::Null => null_token.to_string(),
                Value::Text(s) if s == null_token => {
                    return Err(Error::Parse {
                        row,
                        column: q.attribute.clone(),
                        message: format!("text equals the null token `{null_token}`"),
                    })
                }
                other => other.to_string(),
            };
            cells.push(cell);
        }
        w.write_record(&cells).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(rel.name(), e))?;
    Ok(())
}
