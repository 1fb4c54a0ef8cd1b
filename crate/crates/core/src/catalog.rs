//! A loaded dataset: join graph, semantic layer and base relations.

use std::collections::BTreeMap;
use std::path::Path;

use crate::consistency::{self, ConsistencyReport};
use crate::error::{Error, Result};
use crate::join_graph::{GraphDocument, JoinGraph};
use crate::relation::{annotate_for_metric, AnnotatedDatabase, Database};
use crate::semantic_model::{resolve, ExploratoryQuery, QueryPlan, SemanticLayer};
use crate::weighing::{self, WeighingStrategy, WeightMap};

#[derive(Debug, Clone)]
pub struct Catalog {
    pub document: GraphDocument,
    /// Validated, with cardinalities inferred where undeclared.
    pub graph: JoinGraph,
    pub layer: SemanticLayer,
    pub db: Database,
}

impl Catalog {
    pub fn new(document: GraphDocument, layer: SemanticLayer, db: Database) -> Result<Self> {
        let graph = document.graph().prepare(&db)?;
        for b in &layer.base_queries {
            layer.metric(&b.metric)?;
            for r in &b.relations {
                if !graph.nodes.contains(r) {
                    return Err(Error::UnknownRelation(r.clone()));
                }
            }
        }
        Ok(Catalog { document, graph, layer, db })
    }

    /// Reads `graph.json`-style and `semantic.json`-style documents and the
    /// CSV files they name, relative to `data_dir`.
    pub fn load(data_dir: impl AsRef<Path>, graph_file: impl AsRef<Path>, semantic_file: impl AsRef<Path>) -> Result<Self> {
        let dir = data_dir.as_ref();
        let resolve_path = |p: &Path| if p.is_relative() { dir.join(p) } else { p.to_path_buf() };
        let document = GraphDocument::load(resolve_path(graph_file.as_ref()))?;
        let layer = SemanticLayer::load(resolve_path(semantic_file.as_ref()))?;
        let db = document.load_database(dir)?;
        Self::new(document, layer, db)
    }

    /// Builds from in-memory JSON and CSV text keyed by relation name.
    pub fn from_texts(graph_json: &str, semantic_json: &str, tables: &BTreeMap<String, String>) -> Result<Self> {
        let document = GraphDocument::from_json(graph_json)?;
        let layer = SemanticLayer::from_json(semantic_json)?;
        let db = document.database_from_csv(tables)?;
        Self::new(document, layer, db)
    }

    /// Starts an exploratory query from the metric's base query.
    pub fn query(&self, metric: &str) -> Result<ExploratoryQuery> {
        Ok(ExploratoryQuery::base_only(self.layer.base_query(metric)?))
    }

    pub fn plan(&self, q: &ExploratoryQuery) -> Result<QueryPlan> {
        resolve(q, &self.graph, &self.db)
    }

    pub fn annotate(&self, plan: &QueryPlan) -> Result<AnnotatedDatabase> {
        annotate_for_metric(&self.db, &plan.metric)
    }

    /// Builds weight tables for the given `(relation, strategy)` pairs. Each
    /// relation must be a weighing target of `plan`.
    pub fn weights(&self, plan: &QueryPlan, strategies: &[(String, WeighingStrategy)]) -> Result<WeightMap> {
        let mut out = WeightMap::new();
        for (rel, s) in strategies {
            let target = plan.target(rel).ok_or_else(|| {
                Error::InvalidStrategy(format!("`{rel}` is not a weighing target of this query"))
            })?;
            out.insert(rel.clone(), weighing::build(s, self.db.get(rel)?, &target.join_key)?);
        }
        Ok(out)
    }

    /// Runs the consistency check; targets without a strategy stay unweighed.
    pub fn check(&self, plan: &QueryPlan, weights: &WeightMap, tol: f64) -> Result<ConsistencyReport> {
        let adb = self.annotate(plan)?;
        let mut all = consistency::unweighed(plan, &adb)?;
        all.extend(weights.iter().map(|(k, v)| (k.clone(), v.clone())));
        consistency::check(plan, &adb, &all, tol)
    }
}
