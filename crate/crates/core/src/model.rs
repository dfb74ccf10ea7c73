//! The (architecture, implementation) tuple.
//!
//! An [`ArchitectureModel`] is the set of structural predicates an
//! implementation must satisfy: declared modules, ranked layers, explicit
//! allow/forbid rules and a closed-world policy. An [`ImplementationModel`]
//! carries the facts extracted from code: entities mapped to modules and the
//! dependency edges between them. Both are plain values; repairs produce new
//! values instead of mutating existing ones.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid {element}: {message}")]
    Invalid { element: String, message: String },
}

impl ModelError {
    fn invalid(element: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Invalid {
            element: element.into(),
            message: message.into(),
        }
    }
}

/// `[A-Za-z_][A-Za-z0-9_.-]*`
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleDecl {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<String>,
    /// Cross-module inbound edges must target public entities.
    #[serde(default)]
    pub interface_only: bool,
}

impl ModuleDecl {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            layer: None,
            interface_only: false,
        }
    }

    pub fn layered(name: impl Into<String>, layer: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            layer: Some(layer.into()),
            interface_only: false,
        }
    }
}

/// A layer; higher rank sits closer to the user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDecl {
    pub name: String,
    pub rank: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Allow,
    Forbid,
}

impl RuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::Allow => "allow",
            RuleKind::Forbid => "forbid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleDecl {
    pub id: String,
    pub kind: RuleKind,
    pub from: String,
    pub to: String,
}

impl RuleDecl {
    pub fn pattern(&self) -> RulePattern {
        RulePattern {
            kind: self.kind,
            from: self.from.clone(),
            to: self.to.clone(),
        }
    }
}

/// `allow:<from>-><to>` or `forbid:<from>-><to>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RulePattern {
    pub kind: RuleKind,
    pub from: String,
    pub to: String,
}

impl RulePattern {
    pub fn allow(from: impl Into<String>, to: impl Into<String>) -> Self {
        Self {
            kind: RuleKind::Allow,
            from: from.into(),
            to: to.into(),
        }
    }
}

impl fmt::Display for RulePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}->{}", self.kind.as_str(), self.from, self.to)
    }
}

impl FromStr for RulePattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("malformed rule pattern {s:?}, expected \"allow:<from>-><to>\" or \"forbid:<from>-><to>\"");
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let kind = match kind {
            "allow" => RuleKind::Allow,
            "forbid" => RuleKind::Forbid,
            _ => return Err(bad()),
        };
        let (from, to) = rest.split_once("->").ok_or_else(bad)?;
        if !is_identifier(from) || !is_identifier(to) {
            return Err(bad());
        }
        Ok(Self {
            kind,
            from: from.to_string(),
            to: to.to_string(),
        })
    }
}

impl TryFrom<String> for RulePattern {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<RulePattern> for String {
    fn from(p: RulePattern) -> Self {
        p.to_string()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterModuleDefault {
    #[default]
    Deny,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSemantics {
    /// Layered-to-layered dependencies are permitted iff rank(from) > rank(to).
    #[default]
    StrictDownward,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default)]
    pub default_inter_module: InterModuleDefault,
    #[serde(default)]
    pub layer_semantics: LayerSemantics,
    #[serde(default = "default_true")]
    pub cycle_check: bool,
}

fn default_true() -> bool {
    true
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            default_inter_module: InterModuleDefault::Deny,
            layer_semantics: LayerSemantics::StrictDownward,
            cycle_check: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureModel {
    pub modules: Vec<ModuleDecl>,
    #[serde(default)]
    pub layers: Vec<LayerDecl>,
    #[serde(default)]
    pub rules: Vec<RuleDecl>,
    #[serde(default)]
    pub policy: PolicyConfig,
    /// Rule patterns repairs may neither add nor remove.
    #[serde(default)]
    pub rule_locks: BTreeSet<RulePattern>,
}

impl ArchitectureModel {
    pub fn module(&self, name: &str) -> Option<&ModuleDecl> {
        self.modules.iter().find(|m| m.name == name)
    }

    pub fn has_module(&self, name: &str) -> bool {
        self.module(name).is_some()
    }

    pub fn layer(&self, name: &str) -> Option<&LayerDecl> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Rank of the layer a module belongs to, if the module is layered.
    pub fn module_rank(&self, module: &str) -> Option<i64> {
        let layer = self.module(module)?.layer.as_deref()?;
        self.layer(layer).map(|l| l.rank)
    }

    pub fn rules_between<'a>(
        &'a self,
        kind: RuleKind,
        from: &'a str,
        to: &'a str,
    ) -> impl Iterator<Item = &'a RuleDecl> + 'a {
        self.rules
            .iter()
            .filter(move |r| r.kind == kind && r.from == from && r.to == to)
    }

    pub fn has_rule(&self, kind: RuleKind, from: &str, to: &str) -> bool {
        self.rules_between(kind, from, to).next().is_some()
    }

    pub fn is_locked(&self, pattern: &RulePattern) -> bool {
        self.rule_locks.contains(pattern)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut layer_names = HashSet::new();
        for layer in &self.layers {
            if !is_identifier(&layer.name) {
                return Err(ModelError::invalid(
                    format!("layer {:?}", layer.name),
                    "name is not a valid identifier",
                ));
            }
            if !layer_names.insert(layer.name.as_str()) {
                return Err(ModelError::invalid(
                    format!("layer {:?}", layer.name),
                    "duplicate layer name",
                ));
            }
        }
        let mut module_names = HashSet::new();
        for module in &self.modules {
            if !is_identifier(&module.name) {
                return Err(ModelError::invalid(
                    format!("module {:?}", module.name),
                    "name is not a valid identifier",
                ));
            }
            if !module_names.insert(module.name.as_str()) {
                return Err(ModelError::invalid(
                    format!("module {:?}", module.name),
                    "duplicate module name",
                ));
            }
            if let Some(layer) = &module.layer {
                if !layer_names.contains(layer.as_str()) {
                    return Err(ModelError::invalid(
                        format!("module {:?}", module.name),
                        format!("unknown layer {layer:?}"),
                    ));
                }
            }
        }
        let mut rule_ids = HashSet::new();
        for rule in &self.rules {
            let element = format!("rule {:?}", rule.id);
            if !is_identifier(&rule.id) {
                return Err(ModelError::invalid(element, "id is not a valid identifier"));
            }
            if !rule_ids.insert(rule.id.as_str()) {
                return Err(ModelError::invalid(element, "duplicate rule id"));
            }
            for end in [&rule.from, &rule.to] {
                if !module_names.contains(end.as_str()) {
                    return Err(ModelError::invalid(element, format!("unknown module {end:?}")));
                }
            }
            if rule.from == rule.to {
                return Err(ModelError::invalid(element, "rule endpoints must differ"));
            }
        }
        Ok(())
    }

    /// Canonical JSON form: sorted keys, lists sorted by primary key, no whitespace.
    pub fn canonical_value(&self) -> serde_json::Value {
        let mut sorted = self.clone();
        sorted.modules.sort_by(|a, b| a.name.cmp(&b.name));
        sorted.layers.sort_by(|a, b| a.name.cmp(&b.name));
        sorted.rules.sort_by(|a, b| a.id.cmp(&b.id));
        serde_json::to_value(&sorted).expect("architecture serializes")
    }

    pub fn to_canonical_json(&self) -> String {
        self.canonical_value().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entity {
    pub id: String,
    /// Empty means unmapped.
    #[serde(default)]
    pub module: String,
    #[serde(default)]
    pub public: bool,
}

impl Entity {
    pub fn new(id: impl Into<String>, module: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            module: module.into(),
            public: true,
        }
    }

    pub fn is_mapped(&self) -> bool {
        !self.module.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dependency {
    pub from: String,
    pub to: String,
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default = "default_weight")]
    pub weight: u32,
}

fn default_kind() -> String {
    "ref".to_string()
}

fn default_weight() -> u32 {
    1
}

impl Dependency {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            kind: default_kind(),
            weight: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImplementationModel {
    pub entities: Vec<Entity>,
    #[serde(default)]
    pub dependencies: Vec<Dependency>,
}

impl ImplementationModel {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn entity_mut(&mut self, id: &str) -> Option<&mut Entity> {
        self.entities.iter_mut().find(|e| e.id == id)
    }

    pub fn has_dependency(&self, from: &str, to: &str) -> bool {
        self.dependencies.iter().any(|d| d.from == from && d.to == to)
    }

    /// entity id -> module name, for mapped entities only.
    pub fn module_index(&self) -> HashMap<&str, &str> {
        self.entities
            .iter()
            .filter(|e| e.is_mapped())
            .map(|e| (e.id.as_str(), e.module.as_str()))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut ids = HashSet::new();
        for entity in &self.entities {
            let element = format!("entity {:?}", entity.id);
            if !is_identifier(&entity.id) {
                return Err(ModelError::invalid(element, "id is not a valid identifier"));
            }
            if !ids.insert(entity.id.as_str()) {
                return Err(ModelError::invalid(element, "duplicate entity id"));
            }
            if entity.is_mapped() && !is_identifier(&entity.module) {
                return Err(ModelError::invalid(element, "module is not a valid identifier"));
            }
        }
        let mut edges = HashSet::new();
        for dep in &self.dependencies {
            let element = format!("dependency {}->{}", dep.from, dep.to);
            for end in [&dep.from, &dep.to] {
                if !ids.contains(end.as_str()) {
                    return Err(ModelError::invalid(
                        element,
                        format!("unknown entity {end:?}"),
                    ));
                }
            }
            if dep.from == dep.to {
                return Err(ModelError::invalid(element, "self-dependency"));
            }
            if dep.weight == 0 {
                return Err(ModelError::invalid(element, "weight must be at least 1"));
            }
            if !edges.insert((dep.from.as_str(), dep.to.as_str())) {
                return Err(ModelError::invalid(element, "duplicate dependency"));
            }
        }
        Ok(())
    }

    pub fn canonical_value(&self) -> serde_json::Value {
        let mut sorted = self.clone();
        sorted.entities.sort_by(|a, b| a.id.cmp(&b.id));
        sorted
            .dependencies
            .sort_by(|a, b| (&a.from, &a.to).cmp(&(&b.from, &b.to)));
        serde_json::to_value(&sorted).expect("implementation serializes")
    }

    pub fn to_canonical_json(&self) -> String {
        self.canonical_value().to_string()
    }
}

pub fn load_architecture(text: &str) -> Result<ArchitectureModel, ModelError> {
    let model: ArchitectureModel =
        serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    model.validate()?;
    Ok(model)
}

pub fn load_implementation(text: &str) -> Result<ImplementationModel, ModelError> {
    let model: ImplementationModel =
        serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    model.validate()?;
    Ok(model)
}

/// A mapping problem between two individually valid models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingIssue {
    pub entity: String,
    pub module: String,
    pub message: String,
}

impl fmt::Display for PairingIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Every mapped entity must name a declared module. Unmapped entities are
/// not pairing issues; conformance reports them.
pub fn validate_pairing(a: &ArchitectureModel, s: &ImplementationModel) -> Vec<PairingIssue> {
    let declared: HashSet<&str> = a.modules.iter().map(|m| m.name.as_str()).collect();
    s.entities
        .iter()
        .filter(|e| e.is_mapped() && !declared.contains(e.module.as_str()))
        .map(|e| PairingIssue {
            entity: e.id.clone(),
            module: e.module.clone(),
            message: format!(
                "entity {:?} is mapped to undeclared module {:?}",
                e.id, e.module
            ),
        })
        .collect()
}

/// SHA-256 over the canonical form, lowercase hex.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateHash(String);

impl StateHash {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StateHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One (A, S) tuple plus the cost spent reaching it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub architecture: ArchitectureModel,
    pub implementation: ImplementationModel,
    #[serde(default)]
    pub accumulated_cost: f64,
}

impl SystemState {
    /// Validates both models and their pairing.
    pub fn new(
        architecture: ArchitectureModel,
        implementation: ImplementationModel,
    ) -> Result<Self, ModelError> {
        architecture.validate()?;
        implementation.validate()?;
        if let Some(issue) = validate_pairing(&architecture, &implementation).into_iter().next() {
            return Err(ModelError::invalid(
                format!("entity {:?}", issue.entity),
                issue.message,
            ));
        }
        Ok(Self {
            architecture,
            implementation,
            accumulated_cost: 0.0,
        })
    }

    /// Canonical serialization of the tuple; the accumulated cost is not part of it.
    pub fn canonical_json(&self) -> String {
        serde_json::json!({
            "architecture": self.architecture.canonical_value(),
            "implementation": self.implementation.canonical_value(),
        })
        .to_string()
    }

    pub fn hash(&self) -> StateHash {
        state_hash(self)
    }
}

pub fn state_hash(st: &SystemState) -> StateHash {
    let digest = Sha256::digest(st.canonical_json().as_bytes());
    StateHash(hex::encode(digest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn minimal_architecture_gets_deny_defaults() {
        let a = load_architecture(r#"{"modules":[{"name":"a"}],"layers":[],"rules":[]}"#).unwrap();
        assert_eq!(a.modules.len(), 1);
        assert_eq!(a.policy, PolicyConfig::default());
        assert!(a.policy.cycle_check);
    }

    #[test]
    fn f1_architecture_has_three_layers() {
        let a = fixtures::f1().architecture;
        assert_eq!(a.modules.len(), 3);
        assert_eq!(a.layers.len(), 3);
        assert_eq!(a.module_rank("ui"), Some(3));
        assert_eq!(a.module_rank("data"), Some(1));
    }

    #[test]
    fn self_rule_is_rejected_by_id() {
        let err = load_architecture(
            r#"{"modules":[{"name":"a"}],"rules":[{"id":"r1","kind":"allow","from":"a","to":"a"}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("r1"), "{err}");
    }

    #[test]
    fn duplicate_and_unknown_names_are_rejected() {
        let dup = load_architecture(r#"{"modules":[{"name":"a"},{"name":"a"}]}"#).unwrap_err();
        assert!(dup.to_string().contains("duplicate module"));
        let layer = load_architecture(r#"{"modules":[{"name":"a","layer":"top"}]}"#).unwrap_err();
        assert!(layer.to_string().contains("top"));
        let bad_name = load_architecture(r#"{"modules":[{"name":"9lives"}]}"#).unwrap_err();
        assert!(bad_name.to_string().contains("9lives"));
    }

    #[test]
    fn policy_and_locks_only_accept_fixed_syntax() {
        assert!(matches!(
            load_architecture(r#"{"modules":[],"policy":{"default_inter_module":"allow"}}"#),
            Err(ModelError::Parse(_))
        ));
        let err = load_architecture(r#"{"modules":[],"rule_locks":["permit:a->b"]}"#).unwrap_err();
        assert!(err.to_string().contains("permit:a->b"), "{err}");
        let ok = load_architecture(r#"{"modules":[],"rule_locks":["forbid:a->b"]}"#).unwrap();
        assert!(ok.is_locked(&RulePattern {
            kind: RuleKind::Forbid,
            from: "a".into(),
            to: "b".into()
        }));
    }

    #[test]
    fn implementation_loading() {
        let s = load_implementation(r#"{"entities":[{"id":"a.x","module":"a"}],"dependencies":[]}"#)
            .unwrap();
        assert_eq!(s.entities.len(), 1);
        assert!(s.dependencies.is_empty());

        let err = load_implementation(
            r#"{"entities":[{"id":"a.x","module":"a"}],"dependencies":[{"from":"a.x","to":"ghost"}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");

        let dup = load_implementation(r#"{"entities":[{"id":"x"},{"id":"x"}]}"#).unwrap_err();
        assert!(dup.to_string().contains("duplicate entity"));

        let f1 = fixtures::f1().implementation;
        assert_eq!((f1.entities.len(), f1.dependencies.len()), (3, 2));
        assert_eq!(f1.dependencies[0].kind, "ref");
        assert_eq!(f1.dependencies[0].weight, 1);
    }

    #[test]
    fn self_and_duplicate_dependencies_are_rejected() {
        let selfdep =
            load_implementation(r#"{"entities":[{"id":"x"}],"dependencies":[{"from":"x","to":"x"}]}"#);
        assert!(selfdep.is_err());
        let dup = load_implementation(
            r#"{"entities":[{"id":"x"},{"id":"y"}],"dependencies":[{"from":"x","to":"y"},{"from":"x","to":"y","kind":"call"}]}"#,
        );
        assert!(dup.is_err());
        let zero = load_implementation(
            r#"{"entities":[{"id":"x"},{"id":"y"}],"dependencies":[{"from":"x","to":"y","weight":0}]}"#,
        );
        assert!(zero.is_err());
    }

    #[test]
    fn pairing() {
        let f1 = fixtures::f1();
        assert!(validate_pairing(&f1.architecture, &f1.implementation).is_empty());

        let mut s = f1.implementation.clone();
        s.entities.push(Entity::new("legacy.Old", "legacy"));
        let issues = validate_pairing(&f1.architecture, &s);
        assert_eq!(issues.len(), 1);
        assert!(issues[0].message.contains("legacy.Old") && issues[0].message.contains("\"legacy\""));

        let mut s = f1.implementation.clone();
        s.entities.push(Entity::new("loose", ""));
        assert!(validate_pairing(&f1.architecture, &s).is_empty());
    }

    #[test]
    fn hash_is_hex_and_order_invariant() {
        let f1 = fixtures::f1();
        let h = f1.hash();
        assert_eq!(h.as_str().len(), 64);
        assert!(h.as_str().chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
        assert_eq!(h, f1.hash());

        let mut permuted = f1.clone();
        permuted.implementation.dependencies.reverse();
        permuted.architecture.modules.reverse();
        permuted.accumulated_cost = 42.0;
        assert_eq!(permuted.hash(), h);

        assert_ne!(fixtures::f2().hash(), h);
    }

    #[test]
    fn canonical_form_is_compact_and_sorted() {
        let json = fixtures::f1().architecture.to_canonical_json();
        assert!(!json.contains(' ') && !json.contains('\n'));
        assert!(json.starts_with(r#"{"layers":[{"name":"application","rank":2}"#), "{json}");
    }
}
