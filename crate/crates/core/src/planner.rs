//! Repair planning over the space of (architecture, implementation) states.
//!
//! Every strategy scores a state as
//! `violation_factor * sum(weight(kind)) + accumulated_cost`
//! and explores the candidates produced by [`applicable_actions`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformance::{check, ConformanceError, Violation, ViolationKind, ViolationSet};
use crate::diagnosis::FailurePattern;
use crate::knowledge::{KbSnapshot, UNSCOPED_CLASS};
use crate::model::{StateHash, SystemState};
use crate::repair::{
    action_cost, applicable_actions, apply_action, may_affect, template_actions, CostConfig,
    RepairAction, RepairError, Scope, Verb,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("search budget exhausted: {expansions} expansions exceed the limit of {limit}")]
    Resource { expansions: u64, limit: u64 },
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Conformance(#[from] ConformanceError),
    #[error(transparent)]
    Repair(#[from] RepairError),
}

fn default_weights() -> BTreeMap<ViolationKind, f64> {
    ViolationKind::ALL
        .iter()
        .map(|&k| {
            let w = match k {
                ViolationKind::ForbiddenDependency | ViolationKind::ModuleCycle => 2.0,
                _ => 1.0,
            };
            (k, w)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub beam_width: usize,
    pub max_depth: usize,
    pub max_expansions: u64,
    pub costs: CostConfig,
    pub weights: BTreeMap<ViolationKind, f64>,
    pub violation_factor: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            beam_width: 8,
            max_depth: 4,
            max_expansions: 20_000,
            costs: CostConfig::default(),
            weights: default_weights(),
            violation_factor: 10.0,
        }
    }
}

impl SearchConfig {
    pub fn with_limits(beam_width: usize, max_depth: usize) -> Self {
        Self {
            beam_width,
            max_depth,
            ..Self::default()
        }
    }

    pub fn weight(&self, kind: ViolationKind) -> f64 {
        self.weights.get(&kind).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.beam_width == 0 || self.max_depth == 0 || self.max_expansions == 0 {
            return Err(PlanError::Config(
                "beam_width, max_depth and max_expansions must be at least 1".into(),
            ));
        }
        if !(self.violation_factor > 0.0) || self.weights.values().any(|w| !(*w > 0.0)) {
            return Err(PlanError::Config("weights and violation_factor must be positive".into()));
        }
        self.costs.validate().map_err(PlanError::Config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Beam,
    Exhaustive,
    Template,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Beam => "beam",
            Strategy::Exhaustive => "exhaustive",
            Strategy::Template => "template",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Strategy::Greedy, Strategy::Beam, Strategy::Exhaustive, Strategy::Template]
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairPlan {
    pub actions: Vec<RepairAction>,
    pub final_score: f64,
    pub final_violations: usize,
    pub consolidating: bool,
    pub provenance: Strategy,
    /// Score of the root followed by the score after each action.
    pub step_scores: Vec<f64>,
}

impl RepairPlan {
    pub fn action_ids(&self) -> Vec<String> {
        self.actions.iter().map(RepairAction::id).collect()
    }

    pub fn verbs(&self) -> Vec<Verb> {
        self.actions.iter().map(RepairAction::verb).collect()
    }
}

pub fn plans_to_json(plans: &[RepairPlan]) -> String {
    serde_json::to_string(plans).expect("plans serialize")
}

pub fn score_violations(vs: &ViolationSet, cfg: &SearchConfig) -> f64 {
    cfg.violation_factor * vs.iter().map(|v| cfg.weight(v.kind)).sum::<f64>()
}

pub fn score_state(st: &SystemState, cfg: &SearchConfig) -> Result<f64, ConformanceError> {
    let vs = check(&st.architecture, &st.implementation)?;
    Ok(score_violations(&vs, cfg) + st.accumulated_cost)
}

/// Which violations candidate generation may address.
#[derive(Debug, Clone, Copy)]
pub enum PlanScope<'a> {
    /// Every current violation.
    All,
    /// The cause's template actions, then its covered violations at the
    /// root and every current violation below it.
    Cause(&'a FailurePattern),
}

#[derive(Debug, Clone)]
struct Node {
    state: SystemState,
    violations: ViolationSet,
    score: f64,
    hash: StateHash,
    actions: Vec<RepairAction>,
    ids: Vec<String>,
    step_scores: Vec<f64>,
    path: Vec<StateHash>,
}

impl Node {
    fn root(state: &SystemState, cfg: &SearchConfig) -> Result<Self, PlanError> {
        let violations = check(&state.architecture, &state.implementation)?;
        let score = score_violations(&violations, cfg) + state.accumulated_cost;
        let hash = state.hash();
        Ok(Self {
            state: state.clone(),
            violations,
            score,
            path: vec![hash.clone()],
            hash,
            actions: Vec::new(),
            ids: Vec::new(),
            step_scores: vec![score],
        })
    }

    fn child(&self, act: &RepairAction, cfg: &SearchConfig) -> Result<Self, PlanError> {
        self.derive(act, cfg, true)
    }

    /// Leaves are never expanded or compared by state, so their hash can
    /// be left empty.
    fn derive(&self, act: &RepairAction, cfg: &SearchConfig, hashed: bool) -> Result<Self, PlanError> {
        let state = apply_action(&self.state, act, &cfg.costs)?;
        let violations = check(&state.architecture, &state.implementation)?;
        let score = score_violations(&violations, cfg) + state.accumulated_cost;
        let hash = if hashed { state.hash() } else { StateHash::default() };
        let mut actions = self.actions.clone();
        actions.push(act.clone());
        let mut ids = self.ids.clone();
        ids.push(act.id());
        let mut step_scores = self.step_scores.clone();
        step_scores.push(score);
        let mut path = self.path.clone();
        path.push(hash.clone());
        Ok(Self {
            state,
            violations,
            score,
            hash,
            actions,
            ids,
            step_scores,
            path,
        })
    }

    fn consolidating(&self) -> bool {
        self.violations.is_empty()
    }

    fn depth(&self) -> usize {
        self.actions.len()
    }

    fn candidates(&self, scope: PlanScope<'_>, cfg: &SearchConfig) -> Vec<RepairAction> {
        let all: Vec<Violation> = self.violations.iter().cloned().collect();
        match scope {
            PlanScope::All => applicable_actions(&self.state, Scope::Violations(&all), &cfg.costs),
            PlanScope::Cause(pattern) => {
                let violations: Vec<Violation> = if self.depth() == 0 {
                    all.into_iter()
                        .filter(|v| pattern.covered.binary_search(&v.id).is_ok())
                        .collect()
                } else {
                    all
                };
                applicable_actions(
                    &self.state,
                    Scope::Cause {
                        pattern,
                        violations: &violations,
                    },
                    &cfg.costs,
                )
            }
        }
    }

    fn into_plan(self, provenance: Strategy) -> RepairPlan {
        RepairPlan {
            consolidating: self.violations.is_empty(),
            final_violations: self.violations.len(),
            final_score: self.score,
            actions: self.actions,
            provenance,
            step_scores: self.step_scores,
        }
    }
}

/// (score, length, action ids) ascending.
fn better(x: &Node, y: &Node) -> Ordering {
    x.score
        .total_cmp(&y.score)
        .then(x.ids.len().cmp(&y.ids.len()))
        .then_with(|| x.ids.cmp(&y.ids))
}

struct Budget {
    used: u64,
    limit: u64,
}

impl Budget {
    fn spend(&mut self) -> Result<(), PlanError> {
        self.used += 1;
        if self.used > self.limit {
            return Err(PlanError::Resource {
                expansions: self.used,
                limit: self.limit,
            });
        }
        Ok(())
    }
}

/// Depth-first enumeration of every action sequence up to `max_depth`,
/// returning the minimum-score plan. A branch is cut only when a lower
/// bound on every score inside it already exceeds the best score found:
/// its accumulated cost plus one cheapest step, or for the node itself the
/// violations its action cannot touch. Neither cut can change the result.
pub fn plan_exhaustive(
    root: &SystemState,
    scope: PlanScope<'_>,
    cfg: &SearchConfig,
) -> Result<RepairPlan, PlanError> {
    cfg.validate()?;
    let start = Node::root(root, cfg)?;
    let branching = start.candidates(scope, cfg).len() as u64;
    let estimate = branching.saturating_pow(cfg.max_depth.min(u32::MAX as usize) as u32);
    if estimate > cfg.max_expansions {
        return Err(PlanError::Resource {
            expansions: estimate,
            limit: cfg.max_expansions,
        });
    }
    let mut best = start.clone();
    let mut budget = Budget {
        used: 0,
        limit: cfg.max_expansions,
    };
    descend(&start, scope, cfg, &mut best, &mut budget)?;
    Ok(best.into_plan(Strategy::Exhaustive))
}

fn descend(
    node: &Node,
    scope: PlanScope<'_>,
    cfg: &SearchConfig,
    best: &mut Node,
    budget: &mut Budget,
) -> Result<(), PlanError> {
    if node.depth() >= cfg.max_depth || node.consolidating() {
        return Ok(());
    }
    let leaf = node.depth() + 1 == cfg.max_depth;
    let step = cfg.costs.min_cost();
    for act in node.candidates(scope, cfg) {
        let cost = node.state.accumulated_cost + action_cost(&act, &cfg.costs);
        // violations the action cannot touch survive into the child
        let kept: f64 = node
            .violations
            .iter()
            .filter(|v| !may_affect(&act, v))
            .map(|v| cfg.weight(v.kind))
            .sum();
        let own_bound = cfg.violation_factor * kept + cost;
        let subtree_bound = if leaf { own_bound } else { own_bound.min(cost + step) };
        if subtree_bound > best.score {
            continue;
        }
        budget.spend()?;
        let child = node.derive(&act, cfg, !leaf)?;
        if !leaf && node.path.contains(&child.hash) {
            continue;
        }
        if better(&child, best) == Ordering::Less {
            *best = child.clone();
        }
        if leaf || child.state.accumulated_cost + step > best.score {
            continue;
        }
        descend(&child, scope, cfg, best, budget)?;
    }
    Ok(())
}

/// Ordering hint from the knowledge base: within a level, states reached
/// by a verb sequence whose success score exceeds 1/2 are preferred.
#[derive(Debug, Clone, Copy)]
pub struct BeamBias<'a> {
    pub kb: &'a KbSnapshot,
    pub class_key: &'a str,
    pub system_id: &'a str,
}

impl BeamBias<'_> {
    fn favors(&self, node: &Node) -> bool {
        let verbs: Vec<Verb> = node.actions.iter().map(RepairAction::verb).collect();
        self.kb.plan_score(self.class_key, &verbs, self.system_id) > 0.5
    }
}

/// Keeps the cheaper of two plans reaching the same state.
fn keep_cheaper(pool: &mut Vec<Node>, index: &mut HashMap<StateHash, usize>, node: Node) {
    match index.get(&node.hash) {
        Some(&i) => {
            if better(&node, &pool[i]) == Ordering::Less {
                pool[i] = node;
            }
        }
        None => {
            index.insert(node.hash.clone(), pool.len());
            pool.push(node);
        }
    }
}

fn result_order(x: &Node, y: &Node) -> Ordering {
    y.consolidating()
        .cmp(&x.consolidating())
        .then(x.score.total_cmp(&y.score))
        .then_with(|| x.ids.cmp(&y.ids))
}

/// Level-synchronous beam search. Each level keeps the `beam_width`
/// lowest-score states regardless of whether they improved on their parent;
/// consolidating states stay in the beam without being expanded. Returns up
/// to `beam_width` distinct end states, best first.
pub fn plan_beam(
    root: &SystemState,
    scope: PlanScope<'_>,
    cfg: &SearchConfig,
    bias: Option<BeamBias<'_>>,
) -> Result<Vec<RepairPlan>, PlanError> {
    cfg.validate()?;
    let start = Node::root(root, cfg)?;
    let mut budget = Budget {
        used: 0,
        limit: cfg.max_expansions,
    };
    let mut seen: Vec<Node> = Vec::new();
    let mut seen_index = HashMap::new();
    keep_cheaper(&mut seen, &mut seen_index, start.clone());

    let mut beam = vec![start];
    for _ in 0..cfg.max_depth {
        if beam.iter().all(Node::consolidating) {
            break;
        }
        let mut level: Vec<Node> = Vec::new();
        let mut level_index = HashMap::new();
        for node in &beam {
            if node.consolidating() {
                keep_cheaper(&mut level, &mut level_index, node.clone());
                continue;
            }
            for act in node.candidates(scope, cfg) {
                budget.spend()?;
                let child = node.child(&act, cfg)?;
                if node.path.contains(&child.hash) {
                    continue;
                }
                keep_cheaper(&mut seen, &mut seen_index, child.clone());
                keep_cheaper(&mut level, &mut level_index, child);
            }
        }
        if level.is_empty() {
            break;
        }
        let mut keyed: Vec<(bool, Node)> = level
            .into_iter()
            .map(|n| (bias.is_some_and(|b| b.favors(&n)), n))
            .collect();
        keyed.sort_by(|(fx, x), (fy, y)| {
            x.score
                .total_cmp(&y.score)
                .then(fy.cmp(fx))
                .then_with(|| x.ids.cmp(&y.ids))
        });
        keyed.truncate(cfg.beam_width);
        beam = keyed.into_iter().map(|(_, n)| n).collect();
    }

    seen.sort_by(result_order);
    seen.truncate(cfg.beam_width);
    Ok(seen.into_iter().map(|n| n.into_plan(Strategy::Beam)).collect())
}

/// Applies the best-scoring candidate while it strictly improves the score.
pub fn plan_greedy(
    root: &SystemState,
    scope: PlanScope<'_>,
    cfg: &SearchConfig,
) -> Result<RepairPlan, PlanError> {
    cfg.validate()?;
    let mut node = Node::root(root, cfg)?;
    let mut budget = Budget {
        used: 0,
        limit: cfg.max_expansions,
    };
    while !node.consolidating() {
        let mut best: Option<Node> = None;
        for act in node.candidates(scope, cfg) {
            budget.spend()?;
            let child = node.child(&act, cfg)?;
            if best.as_ref().map_or(true, |b| better(&child, b) == Ordering::Less) {
                best = Some(child);
            }
        }
        match best {
            Some(child) if child.score < node.score => node = child,
            _ => break,
        }
    }
    Ok(node.into_plan(Strategy::Greedy))
}

/// The cause's own template actions applied in order; `None` when the
/// cause suggests nothing applicable.
pub fn plan_template(
    root: &SystemState,
    pattern: &FailurePattern,
    cfg: &SearchConfig,
) -> Result<Option<RepairPlan>, PlanError> {
    let mut node = Node::root(root, cfg)?;
    for act in template_actions(pattern) {
        if let Ok(child) = node.child(&act, cfg) {
            node = child;
        }
    }
    if node.actions.is_empty() {
        return Ok(None);
    }
    Ok(Some(node.into_plan(Strategy::Template)))
}

/// Stable re-sort by (consolidating desc, knowledge-base template score
/// desc, final score asc).
pub fn rank_plans(
    mut plans: Vec<RepairPlan>,
    cause_class: Option<&str>,
    kb: &KbSnapshot,
    system_id: &str,
) -> Vec<RepairPlan> {
    let class = cause_class.unwrap_or(UNSCOPED_CLASS);
    let mut keyed: Vec<(f64, RepairPlan)> = plans
        .drain(..)
        .map(|p| (kb.plan_score(class, &p.verbs(), system_id), p))
        .collect();
    keyed.sort_by(|(sx, x), (sy, y)| {
        y.consolidating
            .cmp(&x.consolidating)
            .then(sy.total_cmp(sx))
            .then(x.final_score.total_cmp(&y.final_score))
    });
    keyed.into_iter().map(|(_, p)| p).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub state: SystemState,
    pub violations: ViolationSet,
    pub score: f64,
    pub step_scores: Vec<f64>,
}

/// Re-applies `actions` from `root`.
pub fn replay_plan(
    root: &SystemState,
    actions: &[RepairAction],
    cfg: &SearchConfig,
) -> Result<Replay, PlanError> {
    let mut node = Node::root(root, cfg)?;
    for act in actions {
        node = node.child(act, cfg)?;
    }
    Ok(Replay {
        state: node.state,
        violations: node.violations,
        score: node.score,
        step_scores: node.step_scores,
    })
}
