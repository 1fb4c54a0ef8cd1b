//! Join-graph data for drawing: nodes with roles, edges with cardinalities.

use std::collections::BTreeSet;

use fanout_core::relation::Attribute;
use fanout_core::{Cardinality, Catalog, QueryPlan};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    /// Part of the metric's base query.
    Base,
    /// The target currently being weighed.
    Frontier,
    /// A weighing target other than the frontier.
    Target,
    /// Joined by the query without needing weights.
    Joined,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRender {
    pub name: String,
    pub role: NodeRole,
    pub fact_table: bool,
    pub rows: usize,
    pub attributes: Vec<Attribute>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRender {
    pub left: String,
    pub right: String,
    pub on: Vec<(String, String)>,
    pub cardinality: Option<Cardinality>,
    /// False when the cardinality was inferred from the data.
    pub declared: bool,
    pub in_plan: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRender {
    pub graph_id: String,
    pub nodes: Vec<NodeRender>,
    pub edges: Vec<EdgeRender>,
}

/// The graph alone, every node with role `other`.
pub fn graph_render(catalog: &Catalog, graph_id: &str) -> GraphRender {
    build(catalog, graph_id, None, None)
}

/// The graph with roles relative to a session's plan.
pub fn session_render(catalog: &Catalog, graph_id: &str, plan: &QueryPlan, frontier: Option<&str>) -> GraphRender {
    build(catalog, graph_id, Some(plan), frontier)
}

fn build(catalog: &Catalog, graph_id: &str, plan: Option<&QueryPlan>, frontier: Option<&str>) -> GraphRender {
    let base: BTreeSet<&str> = plan.map(|p| p.base_relations.iter().map(String::as_str).collect()).unwrap_or_default();
    let on_plan: BTreeSet<String> = plan.map(|p| p.relations().into_iter().collect()).unwrap_or_default();
    let role = |name: &str| match plan {
        None => NodeRole::Other,
        Some(_) if base.contains(name) => NodeRole::Base,
        Some(_) if frontier == Some(name) => NodeRole::Frontier,
        Some(p) if p.target(name).is_some() => NodeRole::Target,
        Some(_) if on_plan.contains(name) => NodeRole::Joined,
        Some(_) => NodeRole::Other,
    };
    let nodes = catalog
        .document
        .relations
        .iter()
        .map(|r| NodeRender {
            name: r.name.clone(),
            role: role(&r.name),
            fact_table: catalog.graph.fact_tables.contains(&r.name),
            rows: catalog.db.get(&r.name).map_or(0, |rel| rel.len()),
            attributes: r.attributes.clone(),
        })
        .collect();
    let edges = catalog
        .graph
        .edges
        .iter()
        .zip(&catalog.document.edges)
        .map(|(e, declared)| EdgeRender {
            left: e.left.clone(),
            right: e.right.clone(),
            on: e.on.clone(),
            cardinality: e.cardinality,
            declared: declared.cardinality.is_some(),
            in_plan: plan.is_some_and(|p| {
                p.edges.iter().any(|pe| {
                    (pe.parent == e.left && pe.child == e.right) || (pe.parent == e.right && pe.child == e.left)
                })
            }),
        })
        .collect();
    GraphRender { graph_id: graph_id.to_string(), nodes, edges }
}
