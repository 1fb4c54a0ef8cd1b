//! Weighing sessions: an exploratory query plus the weights decided so far,
//! one target at a time in plan order.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use fanout_core::consistency::{self, ConsistencyReport};
use fanout_core::engine::{self, GroupedResult, NestedView};
use fanout_core::weighing::{self, WeighingStrategy, WeightMap, WeightTable, WeightValidation};
use fanout_core::{Catalog, ExploratoryQuery, QueryPlan, WeighingTarget};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::{ServiceError, ServiceResult};
use crate::render::{self, GraphRender};

pub type SessionId = Uuid;

/// What a client sends to open a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRequest {
    pub graph_id: String,
    pub metric: String,
    #[serde(default)]
    pub group_by: Vec<String>,
    #[serde(default, rename = "where", skip_serializing_if = "Option::is_none")]
    pub selection: Option<String>,
    #[serde(default)]
    pub join: Vec<String>,
}

impl SessionRequest {
    pub fn query(&self, catalog: &Catalog) -> fanout_core::Result<ExploratoryQuery> {
        let mut q = catalog.query(&self.metric)?;
        for g in &self.group_by {
            q = q.group_by(g)?;
        }
        if let Some(w) = self.selection.as_deref().filter(|w| !w.trim().is_empty()) {
            q = q.select(w)?;
        }
        for r in &self.join {
            q = q.join(r);
        }
        Ok(q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub strategy: WeighingStrategy,
    pub table: WeightTable,
    pub validation: WeightValidation,
    pub overridden: bool,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: Uuid,
    pub request: SessionRequest,
    pub plan: QueryPlan,
    pub decided: BTreeMap<String, Decision>,
    pub revision: u64,
    pub report: Option<ConsistencyReport>,
    /// Responses of completed commits by request token.
    pub(crate) replies: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStatus {
    pub relation: String,
    pub join_key: Vec<String>,
    pub parent: String,
    pub decided: bool,
    pub strategy: Option<WeighingStrategy>,
    pub overridden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    InProgress,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: Uuid,
    pub request: SessionRequest,
    pub state: SessionState,
    pub targets: Vec<TargetStatus>,
    /// Index of the first undecided target.
    pub cursor: Option<usize>,
    pub frontier: Option<String>,
    pub base_total: Option<f64>,
    pub base_result: GroupedResult,
    pub join_graph: GraphRender,
    pub revision: u64,
    pub state_hash: String,
    pub report: Option<ConsistencyReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preview {
    pub target: String,
    pub strategy: WeighingStrategy,
    pub validation: WeightValidation,
    pub partial_view: NestedView,
    pub q_result: GroupedResult,
    pub q_base_result: GroupedResult,
    pub consistency: ConsistencyReport,
}

/// Minimal persisted form; weight tables are rebuilt from the data on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub id: Uuid,
    pub request: SessionRequest,
    pub decided: BTreeMap<String, SnapshotDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDecision {
    pub strategy: WeighingStrategy,
    #[serde(default)]
    pub overridden: bool,
}

impl Session {
    pub fn new(id: Uuid, request: SessionRequest, catalog: &Catalog, tol: f64) -> ServiceResult<Self> {
        let plan = catalog.plan(&request.query(catalog)?)?;
        let mut s = Session {
            id,
            request,
            plan,
            decided: BTreeMap::new(),
            revision: 0,
            report: None,
            replies: BTreeMap::new(),
        };
        s.refresh_report(catalog, tol)?;
        Ok(s)
    }

    pub fn targets(&self) -> &[WeighingTarget] {
        &self.plan.targets
    }

    pub fn cursor(&self) -> Option<usize> {
        self.plan.targets.iter().position(|t| !self.decided.contains_key(&t.relation))
    }

    pub fn frontier(&self) -> Option<&str> {
        self.cursor().map(|i| self.plan.targets[i].relation.as_str())
    }

    pub fn is_complete(&self) -> bool {
        self.cursor().is_none()
    }

    fn target(&self, relation: &str) -> ServiceResult<&WeighingTarget> {
        self.plan.target(relation).ok_or_else(|| ServiceError::UnknownTarget(relation.to_string()))
    }

    /// Decided tables, equal weighing for the rest, then `extra` on top.
    pub fn weights(&self, catalog: &Catalog, extra: Option<(&str, &WeightTable)>) -> ServiceResult<WeightMap> {
        let mut out = WeightMap::new();
        for t in &self.plan.targets {
            let table = match self.decided.get(&t.relation) {
                Some(d) => d.table.clone(),
                None => weighing::build(&WeighingStrategy::Equal, catalog.db.get(&t.relation)?, &t.join_key)?,
            };
            out.insert(t.relation.clone(), table);
        }
        if let Some((rel, table)) = extra {
            out.insert(rel.to_string(), table.clone());
        }
        Ok(out)
    }

    fn build(&self, catalog: &Catalog, target: &str, strategy: &WeighingStrategy) -> ServiceResult<(WeightTable, WeightValidation)> {
        let t = self.target(target)?;
        let rel = catalog.db.get(&t.relation)?;
        let table = weighing::build(strategy, rel, &t.join_key)?;
        let validation = weighing::validate(&table, rel)?;
        Ok((table, validation))
    }

    pub fn preview(
        &self,
        catalog: &Catalog,
        target: &str,
        strategy: &WeighingStrategy,
        sample_n: usize,
        tol: f64,
    ) -> ServiceResult<Preview> {
        if sample_n == 0 {
            return Err(ServiceError::Range("sample_n must be at least 1".into()));
        }
        let (table, validation) = self.build(catalog, target, strategy)?;
        let weights = self.weights(catalog, Some((target, &table)))?;
        let adb = catalog.annotate(&self.plan)?;
        let report = consistency::check(&self.plan, &adb, &weights, tol)?;
        let base = engine::evaluate(&self.plan.base_plan(), &adb, &WeightMap::new())?;
        Ok(Preview {
            target: target.to_string(),
            strategy: strategy.clone(),
            validation,
            partial_view: engine::partial_view(&self.plan, &adb, &weights, target, 0, sample_n)?,
            q_result: report.result.clone(),
            q_base_result: base,
            consistency: report,
        })
    }

    /// Records the decision for `target`. Invalid tables are refused unless
    /// `overridden` is set.
    pub fn commit(
        &mut self,
        catalog: &Catalog,
        target: &str,
        strategy: &WeighingStrategy,
        overridden: bool,
        tol: f64,
    ) -> ServiceResult<()> {
        let (table, validation) = self.build(catalog, target, strategy)?;
        if !validation.ok && !overridden {
            return Err(ServiceError::ValidationFailed { target: target.to_string(), validation: Box::new(validation) });
        }
        self.decided
            .insert(target.to_string(), Decision { strategy: strategy.clone(), table, validation, overridden });
        self.revision += 1;
        self.refresh_report(catalog, tol)
    }

    fn refresh_report(&mut self, catalog: &Catalog, tol: f64) -> ServiceResult<()> {
        self.report = if self.is_complete() {
            let adb = catalog.annotate(&self.plan)?;
            Some(consistency::check(&self.plan, &adb, &self.weights(catalog, None)?, tol)?)
        } else {
            None
        };
        Ok(())
    }

    pub fn view(&self, catalog: &Catalog, target: &str, offset: usize, limit: usize) -> ServiceResult<NestedView> {
        if limit == 0 {
            return Err(ServiceError::Range("limit must be at least 1".into()));
        }
        self.target(target)?;
        let adb = catalog.annotate(&self.plan)?;
        Ok(engine::partial_view(&self.plan, &adb, &self.weights(catalog, None)?, target, offset, limit)?)
    }

    /// Hash over everything a commit can change.
    pub fn state_hash(&self) -> String {
        let decided: Vec<(&String, &WeighingStrategy, bool)> =
            self.decided.iter().map(|(k, d)| (k, &d.strategy, d.overridden)).collect();
        let text = serde_json::to_string(&(&self.request, decided, self.revision, &self.report)).unwrap_or_default();
        let mut h = DefaultHasher::new();
        text.hash(&mut h);
        format!("{:016x}", h.finish())
    }

    pub fn summary(&self, catalog: &Catalog) -> ServiceResult<SessionSummary> {
        let adb = catalog.annotate(&self.plan)?;
        let base = engine::evaluate(&self.plan.base_plan(), &adb, &WeightMap::new())?;
        let targets = self
            .plan
            .targets
            .iter()
            .map(|t| {
                let d = self.decided.get(&t.relation);
                TargetStatus {
                    relation: t.relation.clone(),
                    join_key: t.join_key.clone(),
                    parent: t.parent.clone(),
                    decided: d.is_some(),
                    strategy: d.map(|d| d.strategy.clone()),
                    overridden: d.is_some_and(|d| d.overridden),
                }
            })
            .collect();
        Ok(SessionSummary {
            id: self.id,
            request: self.request.clone(),
            state: if self.is_complete() { SessionState::Complete } else { SessionState::InProgress },
            targets,
            cursor: self.cursor(),
            frontier: self.frontier().map(str::to_string),
            base_total: base.overall()?.finalize(),
            base_result: base,
            join_graph: render::session_render(catalog, &self.request.graph_id, &self.plan, self.frontier()),
            revision: self.revision,
            state_hash: self.state_hash(),
            report: self.report.clone(),
        })
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            id: self.id,
            request: self.request.clone(),
            decided: self
                .decided
                .iter()
                .map(|(k, d)| (k.clone(), SnapshotDecision { strategy: d.strategy.clone(), overridden: d.overridden }))
                .collect(),
        }
    }

    /// Replays a snapshot against `catalog`, decisions in plan order.
    pub fn restore(snapshot: &SessionSnapshot, catalog: &Catalog, tol: f64) -> ServiceResult<Self> {
        let mut s = Session::new(snapshot.id, snapshot.request.clone(), catalog, tol)?;
        for (target, d) in &snapshot.decided {
            s.commit(catalog, target, &d.strategy, d.overridden, tol)?;
        }
        s.revision = 0;
        Ok(s)
    }
}
