//! Repair actions: atomic, precondition-checked edits to the implementation
//! (move, delete, publish, facade) or to the architecture (rules, layers,
//! modules). Applying an action yields a new [`SystemState`]; the input is
//! never touched.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformance::{Violation, ViolationKind};
use crate::diagnosis::{CauseKind, FailurePattern};
use crate::model::{
    is_identifier, Dependency, Entity, ModelError, ModuleDecl, RuleDecl, RuleKind, RulePattern,
    SystemState,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RepairError {
    #[error("precondition failed for {action}: {reason}")]
    Precondition { action: String, reason: String },
    #[error("{action} touches locked rule pattern {pattern}")]
    LockViolation { action: String, pattern: String },
    #[error("unknown verb {0:?}")]
    UnknownVerb(String),
    #[error("invalid action document: {0}")]
    InvalidAction(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Implementation,
    Architecture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    MoveEntity,
    DeleteDependency,
    SetPublic,
    IntroduceInterface,
    AddAllow,
    RemoveRule,
    ChangeLayer,
    AddModule,
    MergeModules,
}

impl Verb {
    pub const ALL: [Verb; 9] = [
        Verb::MoveEntity,
        Verb::DeleteDependency,
        Verb::SetPublic,
        Verb::IntroduceInterface,
        Verb::AddAllow,
        Verb::RemoveRule,
        Verb::ChangeLayer,
        Verb::AddModule,
        Verb::MergeModules,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::MoveEntity => "move_entity",
            Verb::DeleteDependency => "delete_dependency",
            Verb::SetPublic => "set_public",
            Verb::IntroduceInterface => "introduce_interface",
            Verb::AddAllow => "add_allow",
            Verb::RemoveRule => "remove_rule",
            Verb::ChangeLayer => "change_layer",
            Verb::AddModule => "add_module",
            Verb::MergeModules => "merge_modules",
        }
    }

    pub fn level(self) -> Level {
        match self {
            Verb::MoveEntity | Verb::DeleteDependency | Verb::SetPublic | Verb::IntroduceInterface => {
                Level::Implementation
            }
            _ => Level::Architecture,
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verb {
    type Err = RepairError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Verb::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| RepairError::UnknownVerb(s.to_string()))
    }
}

/// Per-verb costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub move_entity: f64,
    pub delete_dependency: f64,
    pub set_public: f64,
    pub introduce_interface: f64,
    pub add_allow: f64,
    pub remove_rule: f64,
    pub change_layer: f64,
    pub add_module: f64,
    pub merge_modules: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            move_entity: 3.0,
            delete_dependency: 6.0,
            set_public: 1.0,
            introduce_interface: 4.0,
            add_allow: 2.0,
            remove_rule: 2.0,
            change_layer: 6.0,
            add_module: 4.0,
            merge_modules: 8.0,
        }
    }
}

impl CostConfig {
    pub fn cost(&self, verb: Verb) -> f64 {
        match verb {
            Verb::MoveEntity => self.move_entity,
            Verb::DeleteDependency => self.delete_dependency,
            Verb::SetPublic => self.set_public,
            Verb::IntroduceInterface => self.introduce_interface,
            Verb::AddAllow => self.add_allow,
            Verb::RemoveRule => self.remove_rule,
            Verb::ChangeLayer => self.change_layer,
            Verb::AddModule => self.add_module,
            Verb::MergeModules => self.merge_modules,
        }
    }

    pub fn cost_of(&self, verb: &str) -> Result<f64, RepairError> {
        Ok(self.cost(verb.parse()?))
    }

    pub fn min_cost(&self) -> f64 {
        Verb::ALL.iter().map(|v| self.cost(*v)).fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<(), String> {
        for verb in Verb::ALL {
            let c = self.cost(verb);
            if !(c.is_finite() && c > 0.0) {
                return Err(format!("cost of {verb} must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// One atomic edit. Serialized as the action document `{verb, args}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ActionDoc", into = "ActionDoc")]
pub enum RepairAction {
    MoveEntity { entity: String, module: String },
    DeleteDependency { from: String, to: String },
    SetPublic { entity: String },
    IntroduceInterface { entity: String },
    AddAllow { from: String, to: String },
    RemoveRule { rule: String },
    /// `layer: None` removes the module from layering.
    ChangeLayer { module: String, layer: Option<String> },
    AddModule { name: String, layer: Option<String> },
    /// Folds `from` into `into`.
    MergeModules { into: String, from: String },
}

impl RepairAction {
    pub fn move_entity(entity: impl Into<String>, module: impl Into<String>) -> Self {
        RepairAction::MoveEntity {
            entity: entity.into(),
            module: module.into(),
        }
    }

    pub fn delete_dependency(from: impl Into<String>, to: impl Into<String>) -> Self {
        RepairAction::DeleteDependency {
            from: from.into(),
            to: to.into(),
        }
    }

    pub fn add_allow(from: impl Into<String>, to: impl Into<String>) -> Self {
        RepairAction::AddAllow {
            from: from.into(),
            to: to.into(),
        }
    }

    pub fn verb(&self) -> Verb {
        match self {
            RepairAction::MoveEntity { .. } => Verb::MoveEntity,
            RepairAction::DeleteDependency { .. } => Verb::DeleteDependency,
            RepairAction::SetPublic { .. } => Verb::SetPublic,
            RepairAction::IntroduceInterface { .. } => Verb::IntroduceInterface,
            RepairAction::AddAllow { .. } => Verb::AddAllow,
            RepairAction::RemoveRule { .. } => Verb::RemoveRule,
            RepairAction::ChangeLayer { .. } => Verb::ChangeLayer,
            RepairAction::AddModule { .. } => Verb::AddModule,
            RepairAction::MergeModules { .. } => Verb::MergeModules,
        }
    }

    pub fn level(&self) -> Level {
        self.verb().level()
    }

    /// Canonical `<verb>(<args>)` key.
    pub fn id(&self) -> String {
        self.to_string()
    }

    pub fn args(&self) -> BTreeMap<String, String> {
        let pairs: Vec<(&str, &str)> = match self {
            RepairAction::MoveEntity { entity, module } => vec![("entity", entity), ("module", module)],
            RepairAction::DeleteDependency { from, to } | RepairAction::AddAllow { from, to } => {
                vec![("from", from), ("to", to)]
            }
            RepairAction::SetPublic { entity } | RepairAction::IntroduceInterface { entity } => {
                vec![("entity", entity)]
            }
            RepairAction::RemoveRule { rule } => vec![("rule", rule)],
            RepairAction::ChangeLayer { module, layer } => {
                let mut v = vec![("module", module.as_str())];
                if let Some(l) = layer {
                    v.push(("layer", l));
                }
                v
            }
            RepairAction::AddModule { name, layer } => {
                let mut v = vec![("name", name.as_str())];
                if let Some(l) = layer {
                    v.push(("layer", l));
                }
                v
            }
            RepairAction::MergeModules { into, from } => vec![("from", from), ("into", into)],
        };
        pairs
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }
}

impl fmt::Display for RepairAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verb = self.verb();
        match self {
            RepairAction::MoveEntity { entity, module } => write!(f, "{verb}({entity},{module})"),
            RepairAction::DeleteDependency { from, to } | RepairAction::AddAllow { from, to } => {
                write!(f, "{verb}({from}->{to})")
            }
            RepairAction::SetPublic { entity } | RepairAction::IntroduceInterface { entity } => {
                write!(f, "{verb}({entity})")
            }
            RepairAction::RemoveRule { rule } => write!(f, "{verb}({rule})"),
            RepairAction::ChangeLayer { module, layer } => {
                write!(f, "{verb}({module},{})", layer.as_deref().unwrap_or(""))
            }
            RepairAction::AddModule { name, layer: None } => write!(f, "{verb}({name})"),
            RepairAction::AddModule { name, layer: Some(l) } => write!(f, "{verb}({name},{l})"),
            RepairAction::MergeModules { into, from } => write!(f, "{verb}({into},{from})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionDoc {
    #[serde(default)]
    pub args: BTreeMap<String, String>,
    pub verb: String,
}

impl From<RepairAction> for ActionDoc {
    fn from(a: RepairAction) -> Self {
        ActionDoc {
            verb: a.verb().as_str().to_string(),
            args: a.args(),
        }
    }
}

impl TryFrom<ActionDoc> for RepairAction {
    type Error = RepairError;

    fn try_from(doc: ActionDoc) -> Result<Self, Self::Error> {
        let verb: Verb = doc.verb.parse()?;
        let mut args = doc.args;
        let mut take = |key: &str| {
            args.remove(key).ok_or_else(|| {
                RepairError::InvalidAction(format!("{verb} requires argument {key:?}"))
            })
        };
        let action = match verb {
            Verb::MoveEntity => RepairAction::MoveEntity {
                entity: take("entity")?,
                module: take("module")?,
            },
            Verb::DeleteDependency => RepairAction::DeleteDependency {
                from: take("from")?,
                to: take("to")?,
            },
            Verb::SetPublic => RepairAction::SetPublic { entity: take("entity")? },
            Verb::IntroduceInterface => RepairAction::IntroduceInterface { entity: take("entity")? },
            Verb::AddAllow => RepairAction::AddAllow {
                from: take("from")?,
                to: take("to")?,
            },
            Verb::RemoveRule => RepairAction::RemoveRule { rule: take("rule")? },
            Verb::ChangeLayer => RepairAction::ChangeLayer {
                module: take("module")?,
                layer: take("layer").ok().filter(|l| !l.is_empty()),
            },
            Verb::AddModule => RepairAction::AddModule {
                name: take("name")?,
                layer: take("layer").ok().filter(|l| !l.is_empty()),
            },
            Verb::MergeModules => RepairAction::MergeModules {
                into: take("into")?,
                from: take("from")?,
            },
        };
        if let Some(extra) = args.keys().next() {
            return Err(RepairError::InvalidAction(format!(
                "{verb} does not take argument {extra:?}"
            )));
        }
        Ok(action)
    }
}

pub fn action_cost(act: &RepairAction, costs: &CostConfig) -> f64 {
    costs.cost(act.verb())
}

fn precondition(act: &RepairAction, reason: impl Into<String>) -> RepairError {
    RepairError::Precondition {
        action: act.id(),
        reason: reason.into(),
    }
}

fn lock_violation(act: &RepairAction, pattern: &RulePattern) -> RepairError {
    RepairError::LockViolation {
        action: act.id(),
        pattern: pattern.to_string(),
    }
}

/// Checks an action's preconditions against a state without applying it.
pub fn validate_action(st: &SystemState, act: &RepairAction) -> Result<(), RepairError> {
    let a = &st.architecture;
    let s = &st.implementation;
    let entity = |id: &str| s.entity(id).ok_or_else(|| precondition(act, format!("unknown entity {id:?}")));
    let module = |name: &str| {
        a.module(name)
            .ok_or_else(|| precondition(act, format!("unknown module {name:?}")))
    };
    let layer = |name: &Option<String>| match name {
        Some(l) if a.layer(l).is_none() => Err(precondition(act, format!("unknown layer {l:?}"))),
        _ => Ok(()),
    };
    match act {
        RepairAction::MoveEntity { entity: e, module: m } => {
            module(m)?;
            if entity(e)?.module == *m {
                return Err(precondition(act, format!("{e} is already in {m}")));
            }
        }
        RepairAction::DeleteDependency { from, to } => {
            if !s.has_dependency(from, to) {
                return Err(precondition(act, format!("no dependency {from}->{to}")));
            }
        }
        RepairAction::SetPublic { entity: e } => {
            if entity(e)?.public {
                return Err(precondition(act, format!("{e} is already public")));
            }
        }
        RepairAction::IntroduceInterface { entity: e } => {
            if !entity(e)?.is_mapped() {
                return Err(precondition(act, format!("{e} is not mapped to a module")));
            }
        }
        RepairAction::AddAllow { from, to } => {
            module(from)?;
            module(to)?;
            if from == to {
                return Err(precondition(act, "rule endpoints must differ"));
            }
            let pattern = RulePattern::allow(from.clone(), to.clone());
            if a.is_locked(&pattern) {
                return Err(lock_violation(act, &pattern));
            }
            if a.has_rule(RuleKind::Allow, from, to) {
                return Err(precondition(act, format!("allow {from}->{to} already present")));
            }
        }
        RepairAction::RemoveRule { rule } => {
            let decl = a
                .rules
                .iter()
                .find(|r| r.id == *rule)
                .ok_or_else(|| precondition(act, format!("unknown rule {rule:?}")))?;
            if a.is_locked(&decl.pattern()) {
                return Err(lock_violation(act, &decl.pattern()));
            }
        }
        RepairAction::ChangeLayer { module: m, layer: l } => {
            layer(l)?;
            if module(m)?.layer == *l {
                return Err(precondition(act, "module already has that layer"));
            }
        }
        RepairAction::AddModule { name, layer: l } => {
            if !is_identifier(name) {
                return Err(precondition(act, format!("{name:?} is not a valid identifier")));
            }
            if a.has_module(name) {
                return Err(precondition(act, format!("module {name:?} already exists")));
            }
            layer(l)?;
        }
        RepairAction::MergeModules { into, from } => {
            module(into)?;
            module(from)?;
            if into == from {
                return Err(precondition(act, "cannot merge a module into itself"));
            }
            for rule in a.rules.iter().filter(|r| r.from == *from || r.to == *from) {
                if a.is_locked(&rule.pattern()) {
                    return Err(lock_violation(act, &rule.pattern()));
                }
            }
        }
    }
    Ok(())
}

fn unique_entity_id(s: &crate::model::ImplementationModel, base: &str) -> String {
    if s.entity(base).is_none() {
        return base.to_string();
    }
    (2..)
        .map(|n| format!("{base}{n}"))
        .find(|id| s.entity(id).is_none())
        .expect("unbounded suffixes")
}

fn unique_rule_id(rules: &[RuleDecl], base: &str) -> String {
    let taken = |id: &str| rules.iter().any(|r| r.id == id);
    if !taken(base) {
        return base.to_string();
    }
    (2..)
        .map(|n| format!("{base}-{n}"))
        .find(|id| !taken(id))
        .expect("unbounded suffixes")
}

/// Returns the successor state; `st` is left untouched.
pub fn apply_action(
    st: &SystemState,
    act: &RepairAction,
    costs: &CostConfig,
) -> Result<SystemState, RepairError> {
    validate_action(st, act)?;
    let mut next = st.clone();
    let a = &mut next.architecture;
    let s = &mut next.implementation;
    match act {
        RepairAction::MoveEntity { entity, module } => {
            s.entity_mut(entity).expect("validated").module = module.clone();
        }
        RepairAction::DeleteDependency { from, to } => {
            s.dependencies.retain(|d| !(d.from == *from && d.to == *to));
        }
        RepairAction::SetPublic { entity } => {
            s.entity_mut(entity).expect("validated").public = true;
        }
        RepairAction::IntroduceInterface { entity } => {
            let module = s.entity(entity).expect("validated").module.clone();
            let leaf = entity.rsplit('.').next().unwrap_or(entity);
            let facade = unique_entity_id(s, &format!("{module}.{leaf}Facade"));
            let modules: HashMap<String, String> = s
                .entities
                .iter()
                .map(|e| (e.id.clone(), e.module.clone()))
                .collect();
            for dep in s.dependencies.iter_mut().filter(|d| d.to == *entity) {
                let source = &modules[&dep.from];
                if !source.is_empty() && *source != module {
                    dep.to = facade.clone();
                }
            }
            s.entities.push(Entity {
                id: facade.clone(),
                module,
                public: true,
            });
            s.dependencies.push(Dependency::new(facade, entity.clone()));
        }
        RepairAction::AddAllow { from, to } => {
            let id = unique_rule_id(&a.rules, &format!("auto.allow.{from}.{to}"));
            a.rules.push(RuleDecl {
                id,
                kind: RuleKind::Allow,
                from: from.clone(),
                to: to.clone(),
            });
        }
        RepairAction::RemoveRule { rule } => {
            a.rules.retain(|r| r.id != *rule);
        }
        RepairAction::ChangeLayer { module, layer } => {
            a.modules
                .iter_mut()
                .find(|m| m.name == *module)
                .expect("validated")
                .layer = layer.clone();
        }
        RepairAction::AddModule { name, layer } => {
            a.modules.push(ModuleDecl {
                name: name.clone(),
                layer: layer.clone(),
                interface_only: false,
            });
        }
        RepairAction::MergeModules { into, from } => {
            for e in s.entities.iter_mut().filter(|e| e.module == *from) {
                e.module = into.clone();
            }
            a.modules.retain(|m| m.name != *from);
            let mut rules = std::mem::take(&mut a.rules);
            for r in &mut rules {
                if r.from == *from {
                    r.from = into.clone();
                }
                if r.to == *from {
                    r.to = into.clone();
                }
            }
            rules.retain(|r| r.from != r.to);
            rules.sort_by(|x, y| x.id.cmp(&y.id));
            let mut seen = HashSet::new();
            rules.retain(|r| seen.insert((r.kind, r.from.clone(), r.to.clone())));
            a.rules = rules;
        }
    }
    next.accumulated_cost += action_cost(act, costs);
    Ok(next)
}

/// Actions a failure pattern directly suggests, before any search.
pub fn template_actions(pattern: &FailurePattern) -> Vec<RepairAction> {
    let param = |k: &str| pattern.parameters.get(k).cloned().unwrap_or_default();
    match pattern.cause_kind {
        CauseKind::MisplacedEntity => vec![RepairAction::move_entity(param("entity"), param("target"))],
        CauseKind::MissingAllowRule => vec![RepairAction::add_allow(param("from"), param("to"))],
        CauseKind::MissingFacade => {
            let targets: BTreeSet<String> = pattern
                .covered
                .iter()
                .filter_map(|id| parse_edge_key(id).map(|(_, to)| to.to_string()))
                .collect();
            targets
                .into_iter()
                .map(|entity| RepairAction::IntroduceInterface { entity })
                .collect()
        }
        CauseKind::CyclicModuleDependency | CauseKind::IsolatedViolation => Vec::new(),
    }
}

/// Splits `<kind>:<from>-><to>` into its entity ids.
pub fn parse_edge_key(violation_id: &str) -> Option<(&str, &str)> {
    let (_, key) = violation_id.split_once(':')?;
    key.split_once("->")
}

/// Conservative footprint test: `false` means `v` is still reported, with
/// the same id and kind, after `act` is applied.
pub fn may_affect(act: &RepairAction, v: &Violation) -> bool {
    let pair = v.module_pair.as_ref();
    let on_pair = |m: &str| pair.is_some_and(|p| p.from == m || p.to == m);
    if let Some((x, y)) = v.edge_endpoints() {
        return match act {
            RepairAction::MoveEntity { entity, .. } => entity == x || entity == y,
            RepairAction::DeleteDependency { from, to } => from == x && to == y,
            RepairAction::SetPublic { entity } => v.kind == ViolationKind::NonInterfaceAccess && entity == y,
            RepairAction::IntroduceInterface { entity } => entity == y,
            RepairAction::AddAllow { from, to } => {
                v.kind.is_permission() && pair.is_some_and(|p| p.from == *from && p.to == *to)
            }
            RepairAction::RemoveRule { .. } => v.kind.is_permission(),
            RepairAction::ChangeLayer { module, .. } => v.kind.is_permission() && on_pair(module),
            RepairAction::AddModule { .. } => false,
            RepairAction::MergeModules { into, from } => on_pair(into) || on_pair(from),
        };
    }
    if let Some(entity) = v.unmapped_entity() {
        return matches!(act, RepairAction::MoveEntity { entity: e, .. } if e == entity);
    }
    matches!(
        act,
        RepairAction::MoveEntity { .. }
            | RepairAction::DeleteDependency { .. }
            | RepairAction::IntroduceInterface { .. }
            | RepairAction::MergeModules { .. }
    )
}

/// What candidate generation may touch.
#[derive(Debug, Clone, Copy)]
pub enum Scope<'a> {
    Violations(&'a [Violation]),
    /// Template actions of the cause come first, then actions for `violations`.
    Cause {
        pattern: &'a FailurePattern,
        violations: &'a [Violation],
    },
}

/// Up to three modules the source of an offending edge could move to.
fn move_candidates(st: &SystemState, source_module: &str, target_module: &str) -> Vec<String> {
    let a = &st.architecture;
    let mut out: Vec<String> = vec![target_module.to_string()];
    let mut allowers: Vec<&str> = a
        .rules
        .iter()
        .filter(|r| r.kind == RuleKind::Allow && r.to == target_module)
        .map(|r| r.from.as_str())
        .collect();
    allowers.sort_unstable();
    out.extend(allowers.into_iter().map(str::to_string));
    // nearest layer above the target: an edge from there points strictly downward
    if let Some(target_rank) = a.module_rank(target_module) {
        let above = a
            .modules
            .iter()
            .filter_map(|m| Some((a.module_rank(&m.name)?, m.name.as_str())))
            .filter(|(r, _)| *r > target_rank)
            .map(|(r, _)| r)
            .min();
        if let Some(rank) = above {
            let mut names: Vec<&str> = a
                .modules
                .iter()
                .filter(|m| a.module_rank(&m.name) == Some(rank))
                .map(|m| m.name.as_str())
                .collect();
            names.sort_unstable();
            out.extend(names.into_iter().map(str::to_string));
        }
    }
    let mut seen = HashSet::new();
    out.retain(|m| m != source_module && seen.insert(m.clone()));
    out.truncate(3);
    out
}

fn actions_for(st: &SystemState, v: &Violation, out: &mut Vec<RepairAction>) {
    let a = &st.architecture;
    let s = &st.implementation;
    if let Some((from, to)) = v.edge_endpoints() {
        out.push(RepairAction::delete_dependency(from, to));
        if let Some(pair) = &v.module_pair {
            let pattern = RulePattern::allow(pair.from.clone(), pair.to.clone());
            if !a.is_locked(&pattern) && !a.has_rule(RuleKind::Allow, &pair.from, &pair.to) {
                out.push(RepairAction::add_allow(&pair.from, &pair.to));
            }
            for m in move_candidates(st, &pair.from, &pair.to) {
                out.push(RepairAction::move_entity(from, m));
            }
        }
        if v.kind == ViolationKind::NonInterfaceAccess {
            out.push(RepairAction::SetPublic { entity: to.to_string() });
            out.push(RepairAction::IntroduceInterface { entity: to.to_string() });
        }
    } else if let Some(entity) = v.unmapped_entity() {
        let index = s.module_index();
        let mut neighbours: HashMap<&str, usize> = a.modules.iter().map(|m| (m.name.as_str(), 0)).collect();
        for d in &s.dependencies {
            let other = if d.from == entity {
                &d.to
            } else if d.to == entity {
                &d.from
            } else {
                continue;
            };
            if let Some(m) = index.get(other.as_str()) {
                *neighbours.entry(m).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = neighbours.into_iter().collect();
        ranked.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(y.0)));
        for (m, _) in ranked.into_iter().take(5) {
            out.push(RepairAction::move_entity(entity, m));
        }
    } else if let Some(cycle) = v.cycle_modules() {
        for subject in &v.subjects {
            if let crate::conformance::Subject::Edge { from, to } = subject {
                out.push(RepairAction::delete_dependency(from, to));
            }
        }
        let n = cycle.len();
        for i in 0..n {
            let (x, y) = (cycle[i], cycle[(i + 1) % n]);
            let (into, from) = if x < y { (x, y) } else { (y, x) };
            out.push(RepairAction::MergeModules {
                into: into.to_string(),
                from: from.to_string(),
            });
            for rule in a.rules_between(RuleKind::Allow, x, y) {
                if !a.is_locked(&rule.pattern()) {
                    out.push(RepairAction::RemoveRule { rule: rule.id.clone() });
                }
            }
        }
    }
}

/// Candidate actions touching the scope's subjects, in deterministic order:
/// cause templates first, then by (level, cost, id).
pub fn applicable_actions(st: &SystemState, scope: Scope<'_>, costs: &CostConfig) -> Vec<RepairAction> {
    let (templates, violations) = match scope {
        Scope::Violations(vs) => (Vec::new(), vs),
        Scope::Cause { pattern, violations } => (template_actions(pattern), violations),
    };
    let mut seen = HashSet::new();
    let mut first: Vec<RepairAction> = Vec::new();
    for act in templates {
        if validate_action(st, &act).is_ok() && seen.insert(act.clone()) {
            first.push(act);
        }
    }
    let mut raw = Vec::new();
    for v in violations {
        actions_for(st, v, &mut raw);
    }
    let mut rest: Vec<RepairAction> = raw
        .into_iter()
        .filter(|act| seen.insert(act.clone()))
        .filter(|act| validate_action(st, act).is_ok())
        .collect();
    rest.sort_by_cached_key(|act| (act.level(), OrderedCost(action_cost(act, costs)), act.id()));
    first.extend(rest);
    first
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrderedCost(f64);

impl Eq for OrderedCost {}

impl PartialOrd for OrderedCost {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedCost {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformance::check;
    use crate::fixtures;

    fn violations(st: &SystemState) -> Vec<Violation> {
        check(&st.architecture, &st.implementation).unwrap().violations
    }

    fn ids(actions: &[RepairAction]) -> Vec<String> {
        actions.iter().map(RepairAction::id).collect()
    }

    #[test]
    fn default_costs() {
        let c = CostConfig::default();
        assert_eq!(action_cost(&RepairAction::move_entity("x", "y"), &c), 3.0);
        assert_eq!(action_cost(&RepairAction::delete_dependency("x", "y"), &c), 6.0);
        let custom: CostConfig = serde_json::from_str(r#"{"add_allow": 9}"#).unwrap();
        assert_eq!(action_cost(&RepairAction::add_allow("x", "y"), &custom), 9.0);
        assert_eq!(custom.move_entity, 3.0);
        assert!(matches!(c.cost_of("rename_module"), Err(RepairError::UnknownVerb(_))));
        assert_eq!(c.min_cost(), 1.0);
    }

    #[test]
    fn action_ids_and_documents() {
        let act = RepairAction::move_entity("data.Cache", "app");
        assert_eq!(act.id(), "move_entity(data.Cache,app)");
        let doc = serde_json::to_string(&act).unwrap();
        assert_eq!(doc, r#"{"args":{"entity":"data.Cache","module":"app"},"verb":"move_entity"}"#);
        let back: RepairAction = serde_json::from_str(&doc).unwrap();
        assert_eq!(back, act);
        assert_eq!(RepairAction::add_allow("a", "b").id(), "add_allow(a->b)");
        assert_eq!(
            RepairAction::MergeModules { into: "a".into(), from: "b".into() }.id(),
            "merge_modules(a,b)"
        );
        assert!(serde_json::from_str::<RepairAction>(r#"{"verb":"add_allow","args":{"from":"a"}}"#).is_err());
        assert!(serde_json::from_str::<RepairAction>(r#"{"verb":"teleport","args":{}}"#).is_err());
    }

    #[test]
    fn levels() {
        assert_eq!(Verb::IntroduceInterface.level(), Level::Implementation);
        assert_eq!(Verb::AddAllow.level(), Level::Architecture);
        assert!(Level::Implementation < Level::Architecture);
    }

    #[test]
    fn f2_candidates() {
        let st = fixtures::f2();
        let vs = violations(&st);
        let acts = ids(&applicable_actions(&st, Scope::Violations(&vs), &CostConfig::default()));
        assert_eq!(
            acts,
            [
                "move_entity(data.Store,ui)",
                "delete_dependency(data.Store->ui.Login)",
                "add_allow(data->ui)",
            ]
        );
    }

    #[test]
    fn f5_lock_filters_add_allow() {
        let st = fixtures::f5();
        let vs = violations(&st);
        let acts = ids(&applicable_actions(&st, Scope::Violations(&vs), &CostConfig::default()));
        assert!(!acts.contains(&"add_allow(a->b)".to_string()));
        assert_eq!(acts, ["move_entity(a.x,b)", "delete_dependency(a.x->b.v)"]);
    }

    #[test]
    fn conformant_scope_is_empty() {
        let st = fixtures::f1();
        assert!(applicable_actions(&st, Scope::Violations(&[]), &CostConfig::default()).is_empty());
    }

    #[test]
    fn f3_move_fixes_everything() {
        let st = fixtures::f3();
        let next = apply_action(&st, &RepairAction::move_entity("data.Cache", "app"), &CostConfig::default()).unwrap();
        assert!(violations(&next).is_empty());
        assert_eq!(next.accumulated_cost, 3.0);
        assert_eq!(st, fixtures::f3());
    }

    #[test]
    fn f4_allow_fixes_everything() {
        let st = fixtures::f4();
        let next = apply_action(&st, &RepairAction::add_allow("a", "b"), &CostConfig::default()).unwrap();
        assert!(violations(&next).is_empty());
        assert_eq!(next.accumulated_cost, 2.0);
    }

    #[test]
    fn f5_two_step_repair() {
        let costs = CostConfig::default();
        let st = fixtures::f5();
        let moved = apply_action(&st, &RepairAction::move_entity("a.x", "b"), &costs).unwrap();
        let vs = violations(&moved);
        assert_eq!(vs.len(), 1);
        assert_eq!(vs[0].id, "unsanctioned_dependency:d.w->a.x");
        let mp = vs[0].module_pair.as_ref().unwrap();
        assert_eq!((mp.from.as_str(), mp.to.as_str()), ("d", "b"));
        let done = apply_action(&moved, &RepairAction::add_allow("d", "b"), &costs).unwrap();
        assert!(violations(&done).is_empty());
        assert_eq!(done.accumulated_cost, 5.0);
    }

    #[test]
    fn locks_and_preconditions() {
        let costs = CostConfig::default();
        let st = fixtures::f5();
        assert!(matches!(
            apply_action(&st, &RepairAction::add_allow("a", "b"), &costs),
            Err(RepairError::LockViolation { .. })
        ));
        assert!(matches!(
            apply_action(&st, &RepairAction::move_entity("a.x", "a"), &costs),
            Err(RepairError::Precondition { .. })
        ));
        assert!(matches!(
            apply_action(&st, &RepairAction::add_allow("d", "a"), &costs),
            Err(RepairError::Precondition { .. })
        ));
        assert!(apply_action(&st, &RepairAction::delete_dependency("b.v", "a.x"), &costs).is_err());
        assert!(apply_action(&st, &RepairAction::MergeModules { into: "a".into(), from: "a".into() }, &costs).is_err());
        let mut locked = st.clone();
        locked.architecture.rule_locks.insert(RulePattern::allow("d", "a"));
        assert!(matches!(
            apply_action(&locked, &RepairAction::RemoveRule { rule: "d_uses_a".into() }, &costs),
            Err(RepairError::LockViolation { .. })
        ));
        assert!(matches!(
            apply_action(&locked, &RepairAction::MergeModules { into: "b".into(), from: "a".into() }, &costs),
            Err(RepairError::LockViolation { .. })
        ));
    }

    #[test]
    fn introduce_interface_redirects_inbound_edges() {
        let costs = CostConfig::default();
        let mut st = fixtures::f4();
        st.architecture.modules[1].interface_only = true;
        st.implementation.entities[3].public = false;
        st.architecture.rules.push(RuleDecl {
            id: "ab".into(),
            kind: RuleKind::Allow,
            from: "a".into(),
            to: "b".into(),
        });
        assert_eq!(violations(&st).len(), 3);
        let next = apply_action(&st, &RepairAction::IntroduceInterface { entity: "b.f".into() }, &costs).unwrap();
        assert!(violations(&next).is_empty(), "{:?}", violations(&next));
        assert!(next.implementation.entity("b.fFacade").unwrap().public);
        assert!(next.implementation.has_dependency("b.fFacade", "b.f"));
        assert!(next.implementation.has_dependency("a.e1", "b.fFacade"));
        assert_eq!(next.accumulated_cost, 4.0);
        // a second facade gets a numeric suffix
        let again = apply_action(&next, &RepairAction::IntroduceInterface { entity: "b.f".into() }, &costs).unwrap();
        assert!(again.implementation.entity("b.fFacade2").is_some());
    }

    #[test]
    fn merge_rewrites_and_dedups_rules() {
        let costs = CostConfig::default();
        let mut st = fixtures::f5();
        st.architecture.rules.push(RuleDecl {
            id: "d_uses_b".into(),
            kind: RuleKind::Allow,
            from: "d".into(),
            to: "b".into(),
        });
        let next = apply_action(&st, &RepairAction::MergeModules { into: "a".into(), from: "b".into() }, &costs).unwrap();
        assert!(!next.architecture.has_module("b"));
        assert_eq!(next.implementation.entity("b.v").unwrap().module, "a");
        assert_eq!(next.architecture.rules.len(), 1);
        assert_eq!(next.architecture.rules[0].id, "d_uses_a");
        assert!(violations(&next).is_empty());
        assert_eq!(next.accumulated_cost, 8.0);
        next.architecture.validate().unwrap();
    }

    #[test]
    fn architecture_verbs() {
        let costs = CostConfig::default();
        let st = fixtures::f2();
        let added = apply_action(
            &st,
            &RepairAction::AddModule { name: "infra".into(), layer: Some("persistence".into()) },
            &costs,
        )
        .unwrap();
        assert_eq!(added.architecture.module_rank("infra"), Some(1));
        let relayered = apply_action(
            &st,
            &RepairAction::ChangeLayer { module: "data".into(), layer: Some("presentation".into()) },
            &costs,
        )
        .unwrap();
        // data (now rank 3) -> ui (rank 3) is still not strictly downward
        assert_eq!(violations(&relayered).len(), 2);
        assert_eq!(relayered.accumulated_cost, 6.0);
        assert!(apply_action(&st, &RepairAction::AddModule { name: "ui".into(), layer: None }, &costs).is_err());
    }

    #[test]
    fn add_allow_then_remove_rule_restores_hash() {
        let costs = CostConfig::default();
        let st = fixtures::f4();
        let added = apply_action(&st, &RepairAction::add_allow("a", "b"), &costs).unwrap();
        let id = added.architecture.rules[0].id.clone();
        assert_eq!(id, "auto.allow.a.b");
        let removed = apply_action(&added, &RepairAction::RemoveRule { rule: id }, &costs).unwrap();
        assert_eq!(removed.hash(), st.hash());
    }

    #[test]
    fn cycle_candidates() {
        let mut st = fixtures::f5();
        st.implementation.dependencies.push(Dependency::new("b.v", "d.w"));
        st.architecture.rules.push(RuleDecl {
            id: "b_uses_d".into(),
            kind: RuleKind::Allow,
            from: "b".into(),
            to: "d".into(),
        });
        let vs = violations(&st);
        let cycle: Vec<Violation> = vs.into_iter().filter(|v| v.kind == ViolationKind::ModuleCycle).collect();
        assert_eq!(cycle.len(), 1);
        let acts = ids(&applicable_actions(&st, Scope::Violations(&cycle), &CostConfig::default()));
        for expected in [
            "delete_dependency(a.x->b.v)",
            "delete_dependency(b.v->d.w)",
            "delete_dependency(d.w->a.x)",
            "merge_modules(a,b)",
            "merge_modules(a,d)",
            "merge_modules(b,d)",
            "remove_rule(b_uses_d)",
            "remove_rule(d_uses_a)",
        ] {
            assert!(acts.contains(&expected.to_string()), "{expected} missing from {acts:?}");
        }
    }

    #[test]
    fn unmapped_candidates_rank_by_neighbours() {
        let mut st = fixtures::f1();
        st.implementation.entities.push(Entity::new("loose", ""));
        st.implementation.dependencies.push(Dependency::new("loose", "app.Auth"));
        let vs = violations(&st);
        let acts = ids(&applicable_actions(&st, Scope::Violations(&vs), &CostConfig::default()));
        assert_eq!(acts, ["move_entity(loose,app)", "move_entity(loose,data)", "move_entity(loose,ui)"]);
    }
}
