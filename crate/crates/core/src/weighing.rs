//! Weighing strategies and weight tables.
//!
//! A weight table assigns every row of a relation a non-negative weight such
//! that each join-key group sums to one. Joining a weighed relation then
//! leaves the per-key partial aggregate at the semiring one, so the totals of
//! the base query survive the extra join.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relation::{AnnotatedRelation, Relation, Value};
use crate::semiring::{Rational, Weight, DEFAULT_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pick {
    First,
    Last,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomWeight {
    pub row_id: u64,
    pub weight: Weight,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WeighingStrategy {
    /// `1/n` for every row in a group of `n`.
    Equal,
    /// The first (or last) row by `attr` gets 1, the rest 0.
    OrderBased { attr: String, pick: Pick },
    /// First and last rows by `attr` get fixed shares; the middle splits the rest.
    PositionBased { attr: String, first_w: Weight, last_w: Weight },
    /// Rows share the group in proportion to a positive numeric attribute.
    Proportional { attr: String },
    /// Explicit `(row_id, weight)` entries.
    Custom { weights: Vec<CustomWeight> },
}

impl WeighingStrategy {
    pub fn label(&self) -> String {
        match self {
            WeighingStrategy::Equal => "equal".into(),
            WeighingStrategy::OrderBased { attr, pick } => {
                format!("order:{attr}:{}", if *pick == Pick::First { "first" } else { "last" })
            }
            WeighingStrategy::PositionBased { attr, first_w, last_w } => {
                format!("position:{attr}:{}:{}", first_w.to_f64(), last_w.to_f64())
            }
            WeighingStrategy::Proportional { attr } => format!("prop:{attr}"),
            WeighingStrategy::Custom { weights } => format!("custom({} rows)", weights.len()),
        }
    }

    /// Parses the flag syntax `equal | order:attr:first|last |
    /// position:attr:f:l | prop:attr | custom:file`. Custom files are read
    /// relative to `base_dir`.
    pub fn parse_spec(spec: &str, base_dir: Option<&Path>) -> Result<Self> {
        let bad = |why: &str| Error::InvalidStrategy(format!("`{spec}`: {why}"));
        let parts: Vec<&str> = spec.split(':').collect();
        match parts.as_slice() {
            ["equal"] => Ok(WeighingStrategy::Equal),
            ["order", attr, pick] => {
                let pick = match *pick {
                    "first" => Pick::First,
                    "last" => Pick::Last,
                    _ => return Err(bad("pick must be first or last")),
                };
                Ok(WeighingStrategy::OrderBased { attr: attr.to_string(), pick })
            }
            ["position", attr, f, l] => Ok(WeighingStrategy::PositionBased {
                attr: attr.to_string(),
                first_w: f.parse()?,
                last_w: l.parse()?,
            }),
            ["prop" | "proportional", attr] => Ok(WeighingStrategy::Proportional { attr: attr.to_string() }),
            ["custom", ..] if parts.len() >= 2 => {
                let file = spec.split_once(':').map_or("", |x| x.1);
                let path = match base_dir {
                    Some(dir) if Path::new(file).is_relative() => dir.join(file),
                    _ => Path::new(file).to_path_buf(),
                };
                Ok(WeighingStrategy::Custom { weights: load_custom_weights(&path)? })
            }
            _ => Err(bad("unrecognized strategy")),
        }
    }
}

impl fmt::Display for WeighingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for WeighingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse_spec(s, None)
    }
}

/// Reads `(row_id, weight)` entries from a CSV with those two columns, or a
/// JSON array of `{row_id, weight}` objects when the file ends in `.json`.
pub fn load_custom_weights(path: &Path) -> Result<Vec<CustomWeight>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(serde_json::from_str(&text)?);
    }
    parse_custom_weights_csv(&text)
}

pub fn parse_custom_weights_csv(text: &str) -> Result<Vec<CustomWeight>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { row: 0, column: String::new(), message: e.to_string() })?
        .clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 0,
            column: name.to_string(),
            message: "column missing from header".into(),
        })
    };
    let (id_col, w_col) = (col("row_id")?, col("weight")?);
    let mut out = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse { row, column: String::new(), message: e.to_string() })?;
        let cell = |i: usize, name: &str| {
            record.get(i).ok_or_else(|| Error::Parse { row, column: name.into(), message: "missing cell".into() })
        };
        let row_id = cell(id_col, "row_id")?.parse().map_err(|_| Error::Type {
            row,
            column: "row_id".into(),
            expected: "int".into(),
            found: cell(id_col, "row_id").unwrap_or_default().to_string(),
        })?;
        let weight = cell(w_col, "weight")?.parse()?;
        out.push(CustomWeight { row_id, weight });
    }
    Ok(out)
}

/// Weight tables by relation name.
pub type WeightMap = BTreeMap<String, WeightTable>;

/// Per-row weights for one relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightTable {
    pub relation: String,
    pub join_key: Vec<String>,
    pub entries: BTreeMap<u64, Weight>,
}

impl WeightTable {
    /// Weight 1 on every row: the unweighed relation.
    pub fn ones(rel: &Relation, join_key: &[String]) -> Self {
        WeightTable {
            relation: rel.name().to_string(),
            join_key: join_key.to_vec(),
            entries: rel.rows.iter().map(|t| (t.row_id, Weight::one())).collect(),
        }
    }

    pub fn get(&self, row_id: u64) -> Option<&Weight> {
        self.entries.get(&row_id)
    }
}

/// Rows grouped by join key, each group in row order.
fn key_groups(rel: &Relation, join_key: &[String]) -> Result<BTreeMap<Vec<Value>, Vec<usize>>> {
    let idx: Vec<usize> =
        join_key.iter().map(|a| rel.schema.attribute(a).map(|(i, _)| i)).collect::<Result<_>>()?;
    let mut groups: BTreeMap<Vec<Value>, Vec<usize>> = BTreeMap::new();
    for (pos, t) in rel.rows.iter().enumerate() {
        groups.entry(idx.iter().map(|&i| t.values[i].clone()).collect()).or_default().push(pos);
    }
    Ok(groups)
}

// Rows ordered by `attr` ascending with Nulls after every value; ties by row id.
fn order_by_attr(rel: &Relation, members: &[usize], attr_idx: usize) -> Vec<usize> {
    let mut sorted = members.to_vec();
    sorted.sort_by(|&a, &b| {
        let (va, vb) = (&rel.rows[a].values[attr_idx], &rel.rows[b].values[attr_idx]);
        let by_value = match (va.is_null(), vb.is_null()) {
            (true, true) => Ordering::Equal,
            (true, false) => Ordering::Greater,
            (false, true) => Ordering::Less,
            _ => va.cmp(vb),
        };
        by_value.then(rel.rows[a].row_id.cmp(&rel.rows[b].row_id))
    });
    sorted
}

fn order_attr(rel: &Relation, attr: &str) -> Result<usize> {
    rel.schema
        .attribute(attr)
        .map(|(i, _)| i)
        .map_err(|_| Error::MissingOrderAttr { relation: rel.name().to_string(), attribute: attr.to_string() })
}

/// Builds the weight table for `strategy` over `rel` grouped by `join_key`.
pub fn build(strategy: &WeighingStrategy, rel: &Relation, join_key: &[String]) -> Result<WeightTable> {
    let groups = key_groups(rel, join_key)?;
    let mut entries: BTreeMap<u64, Weight> = BTreeMap::new();
    let row_id = |pos: usize| rel.rows[pos].row_id;

    match strategy {
        WeighingStrategy::Equal => {
            for members in groups.values() {
                let w = Weight::reciprocal(members.len());
                entries.extend(members.iter().map(|&p| (row_id(p), w.clone())));
            }
        }
        WeighingStrategy::OrderBased { attr, pick } => {
            let ai = order_attr(rel, attr)?;
            for members in groups.values() {
                let sorted = order_by_attr(rel, members, ai);
                let chosen = match pick {
                    Pick::First => sorted[0],
                    Pick::Last => {
                        // Last non-Null value; among ties the lowest row id.
                        let non_null: Vec<usize> =
                            sorted.iter().copied().filter(|&p| !rel.rows[p].values[ai].is_null()).collect();
                        match non_null.last() {
                            Some(&last) => {
                                let top = &rel.rows[last].values[ai];
                                non_null.into_iter().find(|&p| rel.rows[p].values[ai] == *top).unwrap_or(last)
                            }
                            None => sorted[0],
                        }
                    }
                };
                for &p in members {
                    entries.insert(row_id(p), if p == chosen { Weight::one() } else { Weight::zero() });
                }
            }
        }
        WeighingStrategy::PositionBased { attr, first_w, last_w } => {
            let ai = order_attr(rel, attr)?;
            let (f, l) = (first_w.as_rational().clone(), last_w.as_rational().clone());
            let middle = Rational::one() - &f - &l;
            if middle.is_negative() {
                return Err(Error::InvalidStrategy(format!(
                    "position weights {first_w} + {last_w} exceed 1"
                )));
            }
            for members in groups.values() {
                let sorted = order_by_attr(rel, members, ai);
                let n = sorted.len();
                let ws: Vec<Rational> = match n {
                    1 => vec![Rational::one()],
                    2 => {
                        let half = &middle / Rational::from_integer(BigInt::from(2));
                        vec![&f + &half, &l + &half]
                    }
                    _ => {
                        let share = &middle / Rational::from_integer(BigInt::from(n - 2));
                        let mut v = vec![f.clone()];
                        v.extend(std::iter::repeat_n(share, n - 2));
                        v.push(l.clone());
                        v
                    }
                };
                for (p, w) in sorted.into_iter().zip(ws) {
                    entries.insert(row_id(p), Weight::new(w)?);
                }
            }
        }
        WeighingStrategy::Proportional { attr } => {
            let (ai, ty) = rel.schema.attribute(attr).map_err(|_| Error::MissingOrderAttr {
                relation: rel.name().to_string(),
                attribute: attr.clone(),
            })?;
            if !ty.is_numeric() {
                return Err(Error::InvalidStrategy(format!("proportional attribute `{attr}` is not numeric")));
            }
            for members in groups.values() {
                let mut values = Vec::with_capacity(members.len());
                for &p in members {
                    let v = &rel.rows[p].values[ai];
                    let r = match v {
                        Value::Int(i) => Some(Rational::from_integer(BigInt::from(*i))),
                        Value::Real(x) => Rational::from_float(*x),
                        _ => None,
                    };
                    match r {
                        Some(r) if r.is_positive() => values.push(r),
                        _ => {
                            return Err(Error::NonPositiveProportionalValue {
                                relation: rel.name().to_string(),
                                row_id: row_id(p),
                                value: v.to_string(),
                            })
                        }
                    }
                }
                let total: Rational = values.iter().sum();
                for (&p, v) in members.iter().zip(values) {
                    entries.insert(row_id(p), Weight::new(v / &total)?);
                }
            }
        }
        WeighingStrategy::Custom { weights } => {
            let given: BTreeMap<u64, &Weight> = weights.iter().map(|c| (c.row_id, &c.weight)).collect();
            for t in &rel.rows {
                let w = given.get(&t.row_id).ok_or_else(|| Error::MissingRowId {
                    relation: rel.name().to_string(),
                    row_id: t.row_id,
                })?;
                entries.insert(t.row_id, (*w).clone());
            }
            if let Some(extra) = given.keys().find(|id| !entries.contains_key(id)) {
                return Err(Error::UnknownRowId { relation: rel.name().to_string(), row_id: *extra });
            }
        }
    }
    Ok(WeightTable { relation: rel.name().to_string(), join_key: join_key.to_vec(), entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSum {
    pub key: Vec<Value>,
    pub sum: f64,
    pub exact: String,
    pub rows: usize,
}

/// Result of checking a weight table against its relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightValidation {
    pub ok: bool,
    /// Non-Null key groups whose weights do not sum to one.
    pub violations: Vec<GroupSum>,
    pub missing_rows: Vec<u64>,
    pub unknown_rows: Vec<u64>,
    /// Groups with a Null join key; they never join, so they are exempt.
    pub null_key_groups: Vec<GroupSum>,
    /// Rows weighted above 1 (allowed, but flagged).
    pub rows_above_one: Vec<u64>,
}

pub fn validate(wt: &WeightTable, rel: &Relation) -> Result<WeightValidation> {
    validate_with_tolerance(wt, rel, DEFAULT_TOLERANCE)
}

pub fn validate_with_tolerance(wt: &WeightTable, rel: &Relation, tol: f64) -> Result<WeightValidation> {
    let groups = key_groups(rel, &wt.join_key)?;
    let mut report = WeightValidation {
        ok: true,
        violations: Vec::new(),
        missing_rows: Vec::new(),
        unknown_rows: Vec::new(),
        null_key_groups: Vec::new(),
        rows_above_one: Vec::new(),
    };
    for (key, members) in groups {
        let mut sum = Rational::zero();
        for &p in &members {
            let id = rel.rows[p].row_id;
            match wt.get(id) {
                Some(w) => {
                    if w.as_rational() > &Rational::one() {
                        report.rows_above_one.push(id);
                    }
                    sum += w.as_rational();
                }
                None => report.missing_rows.push(id),
            }
        }
        let entry = GroupSum {
            sum: sum.to_f64().unwrap_or(f64::NAN),
            exact: sum.to_string(),
            rows: members.len(),
            key: key.clone(),
        };
        if key.iter().any(Value::is_null) {
            report.null_key_groups.push(entry);
            continue;
        }
        let off = (&sum - Rational::one()).abs().to_f64().unwrap_or(f64::INFINITY);
        if off > tol {
            report.violations.push(entry);
        }
    }
    let known: std::collections::HashSet<u64> = rel.rows.iter().map(|t| t.row_id).collect();
    report.unknown_rows = wt.entries.keys().filter(|id| !known.contains(id)).copied().collect();
    report.ok = report.violations.is_empty() && report.missing_rows.is_empty() && report.unknown_rows.is_empty();
    Ok(report)
}

/// Scales each row's annotation by its weight; tuples are unchanged.
pub fn apply(wt: &WeightTable, rel: &AnnotatedRelation) -> Result<AnnotatedRelation> {
    let mut out = rel.clone();
    for row in &mut out.rows {
        let w = wt
            .get(row.row_id)
            .ok_or_else(|| Error::MissingRowId { relation: rel.name().to_string(), row_id: row.row_id })?;
        row.ann = row.ann.scale(w)?;
    }
    Ok(out)
}
