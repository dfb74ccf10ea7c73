//! Repair sessions: a tree of system states with a cursor.
//!
//! Nodes keep only the action that produced them plus the resulting hash;
//! states are recomputed by replaying the path from the root. Branches are
//! never deleted, so abandoned explorations stay visible in the exported log.

use std::collections::BTreeMap;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::conformance::{check, ConformanceError, ViolationSet};
use crate::diagnosis::{diagnose, CauseCandidate, DiagnosisConfig};
use crate::knowledge::{EventKind, KbSnapshot, KnowledgeEvent, Outcome, UNSCOPED_CLASS};
use crate::model::{ArchitectureModel, ImplementationModel, ModelError, StateHash, SystemState};
use crate::planner::{
    plan_beam, plan_exhaustive, plan_greedy, rank_plans, score_violations, BeamBias, PlanError,
    PlanScope, RepairPlan, SearchConfig, Strategy,
};
use crate::repair::{apply_action, RepairAction, RepairError, Verb};

pub type NodeId = u32;

pub const ROOT: NodeId = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Conformance(#[from] ConformanceError),
    #[error(transparent)]
    Repair(#[from] RepairError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown cause candidate {0}")]
    UnknownCandidate(u32),
    #[error("session is closed")]
    Closed,
    #[error("cannot finish as consolidated: {violations} violation(s) remain at the cursor")]
    NotConsolidated { violations: usize },
    #[error("node {node}: replayed hash {replayed} differs from stored {stored}")]
    ReplayMismatch {
        node: NodeId,
        stored: StateHash,
        replayed: StateHash,
    },
    #[error("invalid session log: {0}")]
    InvalidLog(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionNode {
    pub node_id: NodeId,
    pub parent: Option<NodeId>,
    pub action: Option<RepairAction>,
    pub state_hash: StateHash,
    pub violation_count: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionOutcome {
    Open,
    Consolidated,
    Abandoned,
}

impl From<Outcome> for SessionOutcome {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Consolidated => SessionOutcome::Consolidated,
            Outcome::Abandoned => SessionOutcome::Abandoned,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    CauseSelected,
    StepApplied,
    Backtracked,
    CauseRevised,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub timestamp: String,
    pub kind: DecisionKind,
    pub payload: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub search: SearchConfig,
    pub diagnosis: DiagnosisConfig,
}

/// A cause that was offered to the engineer, keyed by signature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfferedCause {
    pub signature: String,
    pub class_key: String,
}

/// The full session; serializes to the session log document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTree {
    pub session_id: String,
    pub system_id: String,
    pub architecture: ArchitectureModel,
    pub implementation: ImplementationModel,
    pub config: SessionConfig,
    pub nodes: Vec<SessionNode>,
    pub cursor: NodeId,
    pub selected_cause: Option<CauseCandidate>,
    pub outcome: SessionOutcome,
    pub decisions: Vec<DecisionRecord>,
    pub offered: Vec<OfferedCause>,
    pub events: Vec<KnowledgeEvent>,
    /// Set when the root already conforms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notice: Option<String>,
}

pub fn timestamp_now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn payload(value: Value) -> BTreeMap<String, Value> {
    match value {
        Value::Object(map) => map.into_iter().collect(),
        _ => BTreeMap::new(),
    }
}

impl SessionTree {
    pub fn create(
        architecture: ArchitectureModel,
        implementation: ImplementationModel,
        system_id: &str,
        config: SessionConfig,
    ) -> Result<Self, SessionError> {
        Self::create_with_id(
            uuid::Uuid::new_v4().to_string(),
            architecture,
            implementation,
            system_id,
            config,
        )
    }

    pub fn create_with_id(
        session_id: String,
        architecture: ArchitectureModel,
        implementation: ImplementationModel,
        system_id: &str,
        config: SessionConfig,
    ) -> Result<Self, SessionError> {
        config.search.validate()?;
        let root = SystemState::new(architecture, implementation)?;
        let vs = check(&root.architecture, &root.implementation)?;
        let node = SessionNode {
            node_id: ROOT,
            parent: None,
            action: None,
            state_hash: root.hash(),
            violation_count: vs.len(),
            score: score_violations(&vs, &config.search),
        };
        Ok(Self {
            session_id,
            system_id: system_id.to_string(),
            architecture: root.architecture,
            implementation: root.implementation,
            config,
            nodes: vec![node],
            cursor: ROOT,
            selected_cause: None,
            outcome: SessionOutcome::Open,
            decisions: Vec::new(),
            offered: Vec::new(),
            events: Vec::new(),
            notice: vs.is_empty().then(|| "already consolidated".to_string()),
        })
    }

    pub fn is_closed(&self) -> bool {
        self.outcome != SessionOutcome::Open
    }

    pub fn node(&self, id: NodeId) -> Result<&SessionNode, SessionError> {
        id.checked_sub(1)
            .and_then(|i| self.nodes.get(i as usize))
            .ok_or(SessionError::UnknownNode(id))
    }

    pub fn cursor_node(&self) -> &SessionNode {
        self.node(self.cursor).expect("cursor names an existing node")
    }

    pub fn root_state(&self) -> SystemState {
        SystemState {
            architecture: self.architecture.clone(),
            implementation: self.implementation.clone(),
            accumulated_cost: 0.0,
        }
    }

    /// Node ids from the root down to `id`.
    pub fn path_to(&self, id: NodeId) -> Result<Vec<NodeId>, SessionError> {
        let mut path = vec![id];
        let mut current = self.node(id)?;
        while let Some(parent) = current.parent {
            path.push(parent);
            current = self.node(parent)?;
        }
        path.reverse();
        Ok(path)
    }

    pub fn actions_to(&self, id: NodeId) -> Result<Vec<RepairAction>, SessionError> {
        Ok(self
            .path_to(id)?
            .into_iter()
            .filter_map(|n| self.nodes[n as usize - 1].action.clone())
            .collect())
    }

    pub fn state_at(&self, id: NodeId) -> Result<SystemState, SessionError> {
        let mut st = self.root_state();
        for act in self.actions_to(id)? {
            st = apply_action(&st, &act, &self.config.search.costs)?;
        }
        Ok(st)
    }

    pub fn violations_at(&self, id: NodeId) -> Result<ViolationSet, SessionError> {
        let st = self.state_at(id)?;
        Ok(check(&st.architecture, &st.implementation)?)
    }

    pub fn candidates_at(&self, id: NodeId, kb: &KbSnapshot) -> Result<Vec<CauseCandidate>, SessionError> {
        let st = self.state_at(id)?;
        let vs = check(&st.architecture, &st.implementation)?;
        Ok(diagnose(
            &vs,
            &st.architecture,
            &st.implementation,
            &self.config.diagnosis,
            kb,
            &self.system_id,
        ))
    }

    fn is_ancestor(&self, ancestor: NodeId, of: NodeId) -> Result<bool, SessionError> {
        Ok(self.path_to(of)?.contains(&ancestor))
    }

    fn record(&mut self, kind: DecisionKind, value: Value) {
        let mut ts = timestamp_now();
        if let Some(last) = self.decisions.last() {
            if last.timestamp > ts {
                ts = last.timestamp.clone();
            }
        }
        self.decisions.push(DecisionRecord {
            timestamp: ts,
            kind,
            payload: payload(value),
        });
    }

    fn ensure_open(&self) -> Result<(), SessionError> {
        if self.is_closed() {
            Err(SessionError::Closed)
        } else {
            Ok(())
        }
    }

    /// Picks a candidate from the cursor's diagnosis. Choosing again records
    /// a revision.
    pub fn select_cause(&mut self, candidate_id: u32, kb: &KbSnapshot) -> Result<&CauseCandidate, SessionError> {
        self.ensure_open()?;
        let candidates = self.candidates_at(self.cursor, kb)?;
        let chosen = candidates
            .iter()
            .find(|c| c.id == candidate_id)
            .cloned()
            .ok_or(SessionError::UnknownCandidate(candidate_id))?;
        for c in &candidates {
            if !self.offered.iter().any(|o| o.signature == c.pattern.signature) {
                self.offered.push(OfferedCause {
                    signature: c.pattern.signature.clone(),
                    class_key: c.class_key.clone(),
                });
            }
        }
        let kind = match &self.selected_cause {
            None => DecisionKind::CauseSelected,
            Some(_) => DecisionKind::CauseRevised,
        };
        let previous = self.selected_cause.as_ref().map(|c| c.pattern.signature.clone());
        self.record(
            kind,
            json!({
                "node": self.cursor,
                "candidate_id": candidate_id,
                "signature": chosen.pattern.signature,
                "previous": previous,
            }),
        );
        Ok(self.selected_cause.insert(chosen))
    }

    /// Applies `action` at the cursor. Re-applying an action that already
    /// has a child under the cursor moves to that child.
    pub fn apply_step(&mut self, action: &RepairAction) -> Result<NodeId, SessionError> {
        self.ensure_open()?;
        let parent = self.cursor;
        let next = apply_action(&self.state_at(parent)?, action, &self.config.search.costs)?;
        let existing = self
            .nodes
            .iter()
            .find(|n| n.parent == Some(parent) && n.action.as_ref() == Some(action))
            .map(|n| n.node_id);
        let (id, reused) = match existing {
            Some(id) => (id, true),
            None => {
                let vs = check(&next.architecture, &next.implementation)?;
                let id = self.nodes.len() as NodeId + 1;
                self.nodes.push(SessionNode {
                    node_id: id,
                    parent: Some(parent),
                    action: Some(action.clone()),
                    state_hash: next.hash(),
                    violation_count: vs.len(),
                    score: score_violations(&vs, &self.config.search) + next.accumulated_cost,
                });
                (id, false)
            }
        };
        self.cursor = id;
        self.record(
            DecisionKind::StepApplied,
            json!({
                "parent": parent,
                "node": id,
                "action": action.id(),
                "reused": reused,
            }),
        );
        Ok(id)
    }

    /// Moves the cursor. Moving anywhere except down the current path is
    /// recorded as a backtrack.
    pub fn goto(&mut self, id: NodeId) -> Result<(), SessionError> {
        self.ensure_open()?;
        self.node(id)?;
        if id == self.cursor {
            return Ok(());
        }
        let from = self.cursor;
        let descendant = self.is_ancestor(from, id)?;
        self.cursor = id;
        if !descendant {
            self.record(DecisionKind::Backtracked, json!({ "from": from, "to": id }));
        }
        Ok(())
    }

    /// Ranked repair plans from the cursor, scoped to the selected cause.
    pub fn recommend(
        &self,
        node: NodeId,
        strategy: Strategy,
        search: &SearchConfig,
        kb: &KbSnapshot,
    ) -> Result<Vec<RepairPlan>, SessionError> {
        let st = self.state_at(node)?;
        let pattern = self.selected_cause.as_ref().map(|c| &c.pattern);
        let scope = pattern.map_or(PlanScope::All, PlanScope::Cause);
        let class = self.selected_cause.as_ref().map(|c| c.class_key.as_str());
        let plans = match strategy {
            Strategy::Beam | Strategy::Template => {
                let bias = BeamBias {
                    kb,
                    class_key: class.unwrap_or(UNSCOPED_CLASS),
                    system_id: &self.system_id,
                };
                plan_beam(&st, scope, search, Some(bias))?
            }
            Strategy::Greedy => vec![plan_greedy(&st, scope, search)?],
            Strategy::Exhaustive => vec![plan_exhaustive(&st, scope, search)?],
        };
        Ok(rank_plans(plans, class, kb, &self.system_id))
    }

    pub fn verb_sequence(&self, id: NodeId) -> Result<Vec<Verb>, SessionError> {
        Ok(self.actions_to(id)?.iter().map(RepairAction::verb).collect())
    }

    /// Closes the session and returns the knowledge events it produced:
    /// every offered cause, the confirmation (consolidated sessions with a
    /// selected cause only), then the plan outcome.
    pub fn finish(&mut self, outcome: Outcome) -> Result<Vec<KnowledgeEvent>, SessionError> {
        self.ensure_open()?;
        let at = self.cursor_node().clone();
        if outcome == Outcome::Consolidated && at.violation_count > 0 {
            return Err(SessionError::NotConsolidated {
                violations: at.violation_count,
            });
        }
        let verbs = self.verb_sequence(at.node_id)?;
        self.record(
            DecisionKind::Finished,
            json!({ "node": at.node_id, "outcome": outcome }),
        );
        let ts = self.decisions.last().expect("just recorded").timestamp.clone();
        let mut events: Vec<KnowledgeEvent> = self
            .offered
            .iter()
            .map(|o| KnowledgeEvent::cause(EventKind::CauseOffered, &ts, &self.system_id, &o.class_key))
            .collect();
        let class = match &self.selected_cause {
            Some(c) => {
                if outcome == Outcome::Consolidated {
                    events.push(KnowledgeEvent::cause(
                        EventKind::CauseConfirmed,
                        &ts,
                        &self.system_id,
                        &c.class_key,
                    ));
                }
                c.class_key.clone()
            }
            None => UNSCOPED_CLASS.to_string(),
        };
        events.push(KnowledgeEvent::plan_outcome(&ts, &self.system_id, &class, verbs, outcome));
        self.outcome = outcome.into();
        self.events = events.clone();
        Ok(events)
    }

    pub fn export_log(&self) -> String {
        serde_json::to_string(self).expect("session serializes")
    }

    /// Parses a session log and checks that every node replays to its
    /// stored hash.
    pub fn from_log(text: &str) -> Result<Self, SessionError> {
        let tree: SessionTree =
            serde_json::from_str(text).map_err(|e| SessionError::InvalidLog(e.to_string()))?;
        tree.check_structure()?;
        tree.verify_replay()?;
        Ok(tree)
    }

    fn check_structure(&self) -> Result<(), SessionError> {
        let bad = |m: String| Err(SessionError::InvalidLog(m));
        for (i, n) in self.nodes.iter().enumerate() {
            let expected = i as NodeId + 1;
            if n.node_id != expected {
                return bad(format!("node at position {expected} has id {}", n.node_id));
            }
            match (n.parent, &n.action) {
                (None, None) if expected == ROOT => {}
                (Some(p), Some(_)) if p >= 1 && p < expected => {}
                _ => return bad(format!("node {expected} has an inconsistent parent or action")),
            }
        }
        if self.nodes.is_empty() {
            return bad("no root node".into());
        }
        self.node(self.cursor)?;
        Ok(())
    }

    pub fn verify_replay(&self) -> Result<(), SessionError> {
        let mut states: Vec<SystemState> = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let st = match (n.parent, &n.action) {
                (Some(p), Some(act)) => apply_action(&states[p as usize - 1], act, &self.config.search.costs)?,
                _ => SystemState::new(self.architecture.clone(), self.implementation.clone())?,
            };
            let replayed = st.hash();
            if replayed != n.state_hash {
                return Err(SessionError::ReplayMismatch {
                    node: n.node_id,
                    stored: n.state_hash.clone(),
                    replayed,
                });
            }
            states.push(st);
        }
        Ok(())
    }
}
