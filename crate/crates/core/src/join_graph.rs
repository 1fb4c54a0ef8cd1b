//! Declared join graphs and the planning utilities built on them.
//!
//! A join graph is a tree of relations connected by equi-join edges. Queries
//! join the minimal subtree covering the base query and every referenced
//! relation, walked depth-first from the base relations.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relation::{load_csv, read_csv, Attribute, Database, Relation, Value};

/// Edge cardinality, oriented left → right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cardinality {
    OneToOne,
    OneToMany,
    ManyToOne,
    ManyToMany,
}

impl Cardinality {
    pub fn from_sides(left_many: bool, right_many: bool) -> Self {
        match (left_many, right_many) {
            (false, false) => Cardinality::OneToOne,
            (false, true) => Cardinality::OneToMany,
            (true, false) => Cardinality::ManyToOne,
            (true, true) => Cardinality::ManyToMany,
        }
    }

    pub fn left_many(self) -> bool {
        matches!(self, Cardinality::ManyToOne | Cardinality::ManyToMany)
    }

    pub fn right_many(self) -> bool {
        matches!(self, Cardinality::OneToMany | Cardinality::ManyToMany)
    }

    pub fn reversed(self) -> Self {
        Cardinality::from_sides(self.right_many(), self.left_many())
    }
}

impl fmt::Display for Cardinality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cardinality::OneToOne => "one_to_one",
            Cardinality::OneToMany => "one_to_many",
            Cardinality::ManyToOne => "many_to_one",
            Cardinality::ManyToMany => "many_to_many",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinEdge {
    pub left: String,
    pub right: String,
    /// `(left_attr, right_attr)` pairs.
    pub on: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<Cardinality>,
}

impl JoinEdge {
    pub fn new(left: &str, right: &str, on: &[(&str, &str)]) -> Self {
        JoinEdge {
            left: left.to_string(),
            right: right.to_string(),
            on: on.iter().map(|(l, r)| (l.to_string(), r.to_string())).collect(),
            cardinality: None,
        }
    }

    pub fn with_cardinality(mut self, c: Cardinality) -> Self {
        self.cardinality = Some(c);
        self
    }

    pub fn touches(&self, node: &str) -> bool {
        self.left == node || self.right == node
    }

    pub fn other(&self, node: &str) -> &str {
        if self.left == node {
            &self.right
        } else {
            &self.left
        }
    }

    fn label(&self) -> String {
        format!("{}-{}", self.left, self.right)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct JoinGraph {
    pub nodes: BTreeSet<String>,
    pub edges: Vec<JoinEdge>,
    pub fact_tables: BTreeSet<String>,
}

/// One step of a depth-first join plan: `child` is left-outer-joined onto
/// the accumulated result through `parent`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEdge {
    pub parent: String,
    pub child: String,
    /// `(parent_attr, child_attr)` pairs.
    pub on: Vec<(String, String)>,
    /// Oriented parent → child.
    pub cardinality: Cardinality,
}

impl PlanEdge {
    pub fn child_many(&self) -> bool {
        self.cardinality.right_many()
    }

    pub fn parent_key(&self) -> Vec<String> {
        self.on.iter().map(|(p, _)| p.clone()).collect()
    }

    pub fn child_key(&self) -> Vec<String> {
        self.on.iter().map(|(_, c)| c.clone()).collect()
    }
}

/// A relation whose rows must be weighed, with the attributes it is joined on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WeighingTarget {
    pub relation: String,
    pub join_key: Vec<String>,
    pub parent: String,
}

impl fmt::Display for WeighingTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.relation, self.join_key.join(","))
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        let p = self.0[x];
        if p == x {
            return x;
        }
        let root = self.find(p);
        self.0[x] = root;
        root
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

impl JoinGraph {
    pub fn new(nodes: impl IntoIterator<Item = impl Into<String>>, edges: Vec<JoinEdge>) -> Self {
        JoinGraph {
            nodes: nodes.into_iter().map(Into::into).collect(),
            edges,
            fact_tables: BTreeSet::new(),
        }
    }

    fn neighbors<'a>(&'a self, node: &'a str) -> impl Iterator<Item = (usize, &'a JoinEdge)> + 'a {
        self.edges.iter().enumerate().filter(move |(_, e)| e.touches(node))
    }

    /// Connected, acyclic, join attributes resolve with matching types.
    pub fn validate(&self, db: &Database) -> Result<()> {
        for node in &self.nodes {
            db.get(node)?;
        }
        for edge in &self.edges {
            for end in [&edge.left, &edge.right] {
                if !self.nodes.contains(end) {
                    return Err(Error::UnknownRelation(end.clone()));
                }
            }
            if edge.on.is_empty() {
                return Err(Error::BadJoinAttr(format!("edge {} has no join attributes", edge.label())));
            }
            let (l, r) = (db.get(&edge.left)?, db.get(&edge.right)?);
            for (la, ra) in &edge.on {
                let (_, lt) = l.schema.attribute(la).map_err(|e| Error::BadJoinAttr(e.to_string()))?;
                let (_, rt) = r.schema.attribute(ra).map_err(|e| Error::BadJoinAttr(e.to_string()))?;
                if lt != rt {
                    return Err(Error::BadJoinAttr(format!(
                        "{}.{la} ({lt}) and {}.{ra} ({rt}) have different types",
                        edge.left, edge.right
                    )));
                }
            }
        }
        self.check_tree()
    }

    fn check_tree(&self) -> Result<()> {
        let names: Vec<&String> = self.nodes.iter().collect();
        let idx: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut uf = UnionFind::new(names.len());
        let mut accepted: Vec<&JoinEdge> = Vec::new();
        for edge in &self.edges {
            let (a, b) = (idx[edge.left.as_str()], idx[edge.right.as_str()]);
            if !uf.union(a, b) {
                let mut cycle = path_between(&accepted, &edge.left, &edge.right);
                if cycle.is_empty() {
                    cycle = vec![edge.left.clone()];
                }
                return Err(Error::CycleDetected(cycle));
            }
            accepted.push(edge);
        }
        let mut components: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (i, n) in names.iter().enumerate() {
            components.entry(uf.find(i)).or_default().push((*n).clone());
        }
        if components.len() > 1 {
            let mut comps: Vec<Vec<String>> = components.into_values().collect();
            comps.sort();
            return Err(Error::Disconnected(comps));
        }
        Ok(())
    }

    /// Observed cardinality of `edge`. A side is "one" iff its non-Null join
    /// key projection is duplicate-free. Errors when a declared "one" side
    /// has duplicates.
    pub fn infer_cardinality(edge: &JoinEdge, db: &Database) -> Result<Cardinality> {
        let left_keys: Vec<&str> = edge.on.iter().map(|(l, _)| l.as_str()).collect();
        let right_keys: Vec<&str> = edge.on.iter().map(|(_, r)| r.as_str()).collect();
        let left_many = has_duplicate_keys(db.get(&edge.left)?, &left_keys)?;
        let right_many = has_duplicate_keys(db.get(&edge.right)?, &right_keys)?;
        let observed = Cardinality::from_sides(left_many, right_many);
        if let Some(declared) = edge.cardinality {
            if (left_many && !declared.left_many()) || (right_many && !declared.right_many()) {
                return Err(Error::CardinalityMismatch {
                    edge: edge.label(),
                    declared: declared.to_string(),
                    observed: observed.to_string(),
                });
            }
        }
        Ok(observed)
    }

    /// Validates the graph and fills every undeclared cardinality from data.
    /// Declared labels are kept once checked against the data.
    pub fn prepare(mut self, db: &Database) -> Result<Self> {
        self.validate(db)?;
        for edge in &mut self.edges {
            let observed = Self::infer_cardinality(edge, db)?;
            edge.cardinality.get_or_insert(observed);
        }
        Ok(self)
    }

    /// The minimal connected subtree containing `required`, as depth-first
    /// ordered plan edges. Traversal roots at the first of `roots` (or the
    /// smallest required node when `roots` is empty); edges internal to
    /// `roots` come first, children are visited in name order.
    pub fn steiner_subtree(&self, required: &BTreeSet<String>, roots: &[String]) -> Result<Vec<PlanEdge>> {
        for r in required.iter().chain(roots) {
            if !self.nodes.contains(r) {
                return Err(Error::UnknownRelation(r.clone()));
            }
        }
        let mut required = required.clone();
        required.extend(roots.iter().cloned());
        let Some(root) = roots.first().or_else(|| required.iter().next()).cloned() else {
            return Ok(Vec::new());
        };

        let alive = self.prune_to(&required);
        let base: BTreeSet<&str> = roots.iter().map(String::as_str).collect();
        let mut visited: HashSet<String> = HashSet::from([root.clone()]);
        let mut order = Vec::new();

        // Base-internal edges first.
        let mut base_order = vec![root.clone()];
        self.dfs(&root, &alive, &mut visited, &mut order, &mut base_order, &|n| base.contains(n));
        for node in base_order {
            let mut sink = Vec::new();
            self.dfs(&node, &alive, &mut visited, &mut order, &mut sink, &|_| true);
        }
        Ok(order)
    }

    fn dfs(
        &self,
        node: &str,
        alive: &BTreeSet<String>,
        visited: &mut HashSet<String>,
        order: &mut Vec<PlanEdge>,
        seen_nodes: &mut Vec<String>,
        admit: &dyn Fn(&str) -> bool,
    ) {
        let mut next: Vec<(&str, usize)> = self
            .neighbors(node)
            .map(|(i, e)| (e.other(node), i))
            .filter(|(n, _)| alive.contains(*n) && !visited.contains(*n) && admit(n))
            .collect();
        next.sort();
        for (child, i) in next {
            if !visited.insert(child.to_string()) {
                continue;
            }
            order.push(self.orient(i, node));
            seen_nodes.push(child.to_string());
            self.dfs(child, alive, visited, order, seen_nodes, admit);
        }
    }

    fn orient(&self, edge_idx: usize, parent: &str) -> PlanEdge {
        let e = &self.edges[edge_idx];
        // Undeclared and uninferred edges are treated as many-to-many.
        let card = e.cardinality.unwrap_or(Cardinality::ManyToMany);
        if e.left == parent {
            PlanEdge { parent: e.left.clone(), child: e.right.clone(), on: e.on.clone(), cardinality: card }
        } else {
            PlanEdge {
                parent: e.right.clone(),
                child: e.left.clone(),
                on: e.on.iter().map(|(l, r)| (r.clone(), l.clone())).collect(),
                cardinality: card.reversed(),
            }
        }
    }

    /// Repeatedly strips leaves outside `required`.
    fn prune_to(&self, required: &BTreeSet<String>) -> BTreeSet<String> {
        let mut alive = self.nodes.clone();
        loop {
            let leaf = alive.iter().find(|n| {
                !required.contains(*n) && self.neighbors(n).filter(|(_, e)| alive.contains(e.other(n))).count() <= 1
            });
            match leaf.cloned() {
                Some(n) => {
                    alive.remove(&n);
                }
                None => return alive,
            }
        }
    }

    pub fn edge_between(&self, a: &str, b: &str) -> Option<&JoinEdge> {
        self.edges.iter().find(|e| (e.left == a && e.right == b) || (e.left == b && e.right == a))
    }
}

/// Relations on the plan that are entered through their "many" side and are
/// not part of the base query, in plan order.
pub fn weighing_targets(base: &BTreeSet<String>, subtree: &[PlanEdge]) -> Vec<WeighingTarget> {
    subtree
        .iter()
        .filter(|e| !base.contains(&e.child) && e.child_many())
        .map(|e| WeighingTarget { relation: e.child.clone(), join_key: e.child_key(), parent: e.parent.clone() })
        .collect()
}

fn has_duplicate_keys(rel: &Relation, attrs: &[&str]) -> Result<bool> {
    let idx: Vec<usize> = attrs
        .iter()
        .map(|a| rel.schema.attribute(a).map(|(i, _)| i).map_err(|e| Error::BadJoinAttr(e.to_string())))
        .collect::<Result<_>>()?;
    let mut seen: HashSet<Vec<&Value>> = HashSet::new();
    for t in &rel.rows {
        let key: Vec<&Value> = idx.iter().map(|&i| &t.values[i]).collect();
        if key.iter().any(|v| v.is_null()) {
            continue;
        }
        if !seen.insert(key) {
            return Ok(true);
        }
    }
    Ok(false)
}

fn path_between(edges: &[&JoinEdge], from: &str, to: &str) -> Vec<String> {
    fn walk(edges: &[&JoinEdge], at: &str, to: &str, path: &mut Vec<String>) -> bool {
        path.push(at.to_string());
        if at == to {
            return true;
        }
        for e in edges.iter().filter(|e| e.touches(at)) {
            let next = e.other(at);
            if path.iter().any(|p| p == next) {
                continue;
            }
            if walk(edges, next, to, path) {
                return true;
            }
        }
        path.pop();
        false
    }
    let mut path = Vec::new();
    walk(edges, from, to, &mut path);
    path
}

/// A relation declared in a join-graph document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationDecl {
    pub name: String,
    pub attributes: Vec<Attribute>,
    /// CSV path relative to the data directory; defaults to `<name>.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_token: Option<String>,
}

impl RelationDecl {
    pub fn null_token(&self) -> &str {
        self.null_token.as_deref().unwrap_or("")
    }
}

/// The JSON join-graph document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub relations: Vec<RelationDecl>,
    pub edges: Vec<JoinEdge>,
    #[serde(default)]
    pub fact_tables: Vec<String>,
}

impl GraphDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn graph(&self) -> JoinGraph {
        JoinGraph {
            nodes: self.relations.iter().map(|r| r.name.clone()).collect(),
            edges: self.edges.clone(),
            fact_tables: self.fact_tables.iter().cloned().collect(),
        }
    }

    /// Loads every declared relation from CSV files under `data_dir`.
    pub fn load_database(&self, data_dir: impl AsRef<Path>) -> Result<Database> {
        let mut db = Database::new();
        for decl in &self.relations {
            let file = decl.file.clone().unwrap_or_else(|| format!("{}.csv", decl.name));
            db.insert(load_csv(data_dir.as_ref().join(file), &decl.name, &decl.attributes, decl.null_token())?)?;
        }
        Ok(db)
    }

    /// Builds the database from in-memory CSV text keyed by relation name.
    pub fn database_from_csv(&self, tables: &BTreeMap<String, String>) -> Result<Database> {
        let mut db = Database::new();
        for decl in &self.relations {
            let text = tables.get(&decl.name).ok_or_else(|| Error::UnknownRelation(decl.name.clone()))?;
            db.insert(read_csv(text.as_bytes(), &decl.name, &decl.attributes, decl.null_token())?)?;
        }
        Ok(db)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relation::{Schema, ValueType};

    fn rel(name: &str, attrs: &[&str], rows: &[&[i64]]) -> Relation {
        let attrs: Vec<Attribute> = attrs.iter().map(|a| Attribute::new(*a, ValueType::Int)).collect();
        let mut r = Relation::new(Schema::new(name, &attrs).unwrap());
        for row in rows {
            r.push(row.iter().map(|v| Value::Int(*v)).collect()).unwrap();
        }
        r
    }

    fn retail_db() -> Database {
        let mut db = Database::new();
        db.insert(rel("U", &["uid"], &[&[1], &[2]])).unwrap();
        db.insert(rel("H", &["uid", "iid", "pid"], &[&[1, 1, 1], &[2, 1, 1], &[2, 2, 0], &[2, 4, 2]])).unwrap();
        db.insert(rel("I", &["iid", "price"], &[&[1, 20], &[2, 30], &[3, 35]])).unwrap();
        db.insert(rel("P", &["pid"], &[&[1], &[2]])).unwrap();
        db.insert(rel("A", &["aid", "cost"], &[&[1, 500], &[2, 600]])).unwrap();
        db.insert(rel("V", &["uid", "aid"], &[&[1, 1], &[1, 2], &[2, 1]])).unwrap();
        db
    }

    fn retail_graph() -> JoinGraph {
        JoinGraph::new(
            ["U", "H", "I", "P", "A", "V"],
            vec![
                JoinEdge::new("V", "U", &[("uid", "uid")]),
                JoinEdge::new("V", "A", &[("aid", "aid")]),
                JoinEdge::new("H", "U", &[("uid", "uid")]),
                JoinEdge::new("H", "I", &[("iid", "iid")]),
                JoinEdge::new("H", "P", &[("pid", "pid")]),
            ],
        )
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn pairs(edges: &[PlanEdge]) -> Vec<(String, String)> {
        edges.iter().map(|e| (e.parent.clone(), e.child.clone())).collect()
    }

    #[test]
    fn retail_graph_is_valid() {
        retail_graph().validate(&retail_db()).unwrap();
    }

    #[test]
    fn extra_edge_creates_cycle() {
        let mut g = retail_graph();
        g.edges.push(JoinEdge::new("U", "A", &[("uid", "aid")]));
        match g.validate(&retail_db()).unwrap_err() {
            Error::CycleDetected(nodes) => assert_eq!(set(&nodes.iter().map(String::as_str).collect::<Vec<_>>()), set(&["U", "V", "A"])),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn isolated_node_is_disconnected() {
        let mut g = retail_graph();
        g.edges.retain(|e| e.right != "P");
        match g.validate(&retail_db()).unwrap_err() {
            Error::Disconnected(comps) => {
                assert_eq!(comps.len(), 2);
                assert!(comps.contains(&vec!["P".to_string()]));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_join_attribute() {
        let mut g = retail_graph();
        g.edges[0].on[0].1 = "nope".into();
        assert!(matches!(g.validate(&retail_db()), Err(Error::BadJoinAttr(_))));
    }

    #[test]
    fn cardinality_inference() {
        let db = retail_db();
        let hi = JoinEdge::new("H", "I", &[("iid", "iid")]);
        assert_eq!(JoinGraph::infer_cardinality(&hi, &db).unwrap(), Cardinality::ManyToOne);
        let vh = JoinEdge::new("V", "H", &[("uid", "uid")]);
        assert_eq!(JoinGraph::infer_cardinality(&vh, &db).unwrap(), Cardinality::ManyToMany);
        let mut db2 = db.clone();
        let mut copy = db.get("A").unwrap().clone();
        copy.schema.relation = "A2".into();
        for c in &mut copy.schema.columns {
            c.0.relation = "A2".into();
        }
        db2.insert(copy).unwrap();
        let aa = JoinEdge::new("A", "A2", &[("aid", "aid")]);
        assert_eq!(JoinGraph::infer_cardinality(&aa, &db2).unwrap(), Cardinality::OneToOne);
    }

    #[test]
    fn declared_one_side_with_duplicates_is_mismatch() {
        let db = retail_db();
        let e = JoinEdge::new("H", "I", &[("iid", "iid")]).with_cardinality(Cardinality::OneToOne);
        assert!(matches!(JoinGraph::infer_cardinality(&e, &db), Err(Error::CardinalityMismatch { .. })));
        // A declared "many" side may happen to be unique in the data.
        let e = JoinEdge::new("H", "I", &[("iid", "iid")]).with_cardinality(Cardinality::ManyToMany);
        assert_eq!(JoinGraph::infer_cardinality(&e, &db).unwrap(), Cardinality::ManyToOne);
    }

    #[test]
    fn null_keys_do_not_count_as_duplicates() {
        let mut db = Database::new();
        let mut r = Relation::new(Schema::new("R", &[Attribute::new("k", ValueType::Int)]).unwrap());
        r.push(vec![Value::Null]).unwrap();
        r.push(vec![Value::Null]).unwrap();
        r.push(vec![Value::Int(1)]).unwrap();
        db.insert(r).unwrap();
        db.insert(rel("S", &["k"], &[&[1]])).unwrap();
        let e = JoinEdge::new("R", "S", &[("k", "k")]);
        assert_eq!(JoinGraph::infer_cardinality(&e, &db).unwrap(), Cardinality::OneToOne);
    }

    #[test]
    fn subtree_for_q3() {
        let g = retail_graph().prepare(&retail_db()).unwrap();
        let sub = g.steiner_subtree(&set(&["H", "I", "A"]), &["H".into(), "I".into()]).unwrap();
        let expect: Vec<(String, String)> =
            [("H", "I"), ("H", "U"), ("U", "V"), ("V", "A")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        assert_eq!(pairs(&sub), expect);
        let targets = weighing_targets(&set(&["H", "I"]), &sub);
        assert_eq!(targets.len(), 1);
        assert_eq!(targets[0].relation, "V");
        assert_eq!(targets[0].join_key, vec!["uid".to_string()]);
    }

    #[test]
    fn subtree_base_only() {
        let g = retail_graph().prepare(&retail_db()).unwrap();
        let sub = g.steiner_subtree(&set(&["I"]), &["H".into(), "I".into()]).unwrap();
        assert_eq!(pairs(&sub), vec![("H".to_string(), "I".to_string())]);
        assert!(weighing_targets(&set(&["H", "I"]), &sub).is_empty());
    }

    #[test]
    fn subtree_single_node_without_base() {
        let g = retail_graph();
        let sub = g.steiner_subtree(&set(&["A"]), &[]).unwrap();
        assert!(sub.is_empty());
    }

    #[test]
    fn subtree_unknown_relation() {
        let g = retail_graph();
        assert!(matches!(g.steiner_subtree(&set(&["Z"]), &[]), Err(Error::UnknownRelation(_))));
    }

    #[test]
    fn parsing_graph_document() {
        let doc = GraphDocument::from_json(
            r#"{"relations":[{"name":"R","attributes":[{"name":"k","type":"int"}]}],
                "edges":[{"left":"R","right":"S","on":[["k","k"]],"cardinality":"one_to_many"}],
                "fact_tables":["R"]}"#,
        )
        .unwrap();
        assert_eq!(doc.edges[0].cardinality, Some(Cardinality::OneToMany));
        assert_eq!(doc.graph().fact_tables, set(&["R"]));
    }
}
