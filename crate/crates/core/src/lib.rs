//! Semiring-annotated relational engine with weighing, so that metric
//! totals stay consistent when exploratory queries join through fanout.

pub mod catalog;
pub mod consistency;
pub mod engine;
pub mod error;
pub mod join_graph;
pub mod relation;
pub mod semantic_model;
pub mod semiring;
pub mod testkit;
pub mod weighing;

pub use catalog::Catalog;
pub use consistency::{check, diagnose, ConsistencyReport, Verdict};
pub use engine::{evaluate, partial_view, pushdown_aggregate, GroupedResult, NestedView};
pub use error::{Error, Result};
pub use join_graph::{Cardinality, GraphDocument, JoinEdge, JoinGraph, PlanEdge, WeighingTarget};
pub use relation::{annotate_for_metric, AnnotatedDatabase, AnnotatedRelation, Database, QualifiedAttr, Relation, Value};
pub use semantic_model::{resolve, BaseQuery, ExploratoryQuery, Metric, Predicate, QueryPlan, SemanticLayer};
pub use semiring::{Annotation, SemiringKind, Weight, DEFAULT_TOLERANCE};
pub use weighing::{WeighingStrategy, WeightMap, WeightTable};
