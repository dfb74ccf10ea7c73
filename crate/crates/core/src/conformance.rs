//! Conformance checking: evaluates the architecture's predicates against the
//! implementation and reports every breach.
//!
//! Each cross-module dependency `e1@m1 -> e2@m2` is classified with the
//! precedence forbid > allow > strict downward layering > default deny.
//! Interface-only access, unmapped entities and module cycles are checked
//! independently of the edge permission.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_pairing, ArchitectureModel, Dependency, ImplementationModel, RuleDecl, RuleKind,
};

/// Elementary-cycle enumeration gives up beyond this many cycles.
pub const MAX_CYCLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConformanceError {
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("module graph has more than {limit} elementary cycles")]
    TooManyCycles { limit: usize },
    #[error("unknown violation {0:?}")]
    UnknownViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    UnsanctionedDependency,
    ForbiddenDependency,
    LayerViolation,
    ModuleCycle,
    UnmappedEntity,
    NonInterfaceAccess,
}

impl ViolationKind {
    pub const ALL: [ViolationKind; 6] = [
        ViolationKind::UnsanctionedDependency,
        ViolationKind::ForbiddenDependency,
        ViolationKind::LayerViolation,
        ViolationKind::ModuleCycle,
        ViolationKind::UnmappedEntity,
        ViolationKind::NonInterfaceAccess,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::UnsanctionedDependency => "unsanctioned_dependency",
            ViolationKind::ForbiddenDependency => "forbidden_dependency",
            ViolationKind::LayerViolation => "layer_violation",
            ViolationKind::ModuleCycle => "module_cycle",
            ViolationKind::UnmappedEntity => "unmapped_entity",
            ViolationKind::NonInterfaceAccess => "non_interface_access",
        }
    }

    /// Kinds attached to a single dependency edge.
    pub fn is_edge(self) -> bool {
        matches!(
            self,
            ViolationKind::UnsanctionedDependency
                | ViolationKind::ForbiddenDependency
                | ViolationKind::LayerViolation
                | ViolationKind::NonInterfaceAccess
        )
    }

    /// Kinds an allow rule could legalize.
    pub fn is_permission(self) -> bool {
        matches!(
            self,
            ViolationKind::UnsanctionedDependency
                | ViolationKind::ForbiddenDependency
                | ViolationKind::LayerViolation
        )
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Subject {
    Edge { from: String, to: String },
    Entity { entity: String },
}

impl Subject {
    pub fn edge(from: impl Into<String>, to: impl Into<String>) -> Self {
        Subject::Edge {
            from: from.into(),
            to: to.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModulePair {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// `<kind>:<subject-key>`
    pub id: String,
    pub kind: ViolationKind,
    pub subjects: Vec<Subject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub module_pair: Option<ModulePair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_id: Option<String>,
}

impl Violation {
    fn edge(kind: ViolationKind, from: &str, to: &str, m1: &str, m2: &str, rule_id: Option<String>) -> Self {
        Self {
            id: format!("{}:{from}->{to}", kind.as_str()),
            kind,
            subjects: vec![Subject::edge(from, to)],
            module_pair: Some(ModulePair {
                from: m1.to_string(),
                to: m2.to_string(),
            }),
            rule_id,
        }
    }

    /// The (from, to) entity pair for edge kinds.
    pub fn edge_endpoints(&self) -> Option<(&str, &str)> {
        if !self.kind.is_edge() {
            return None;
        }
        match self.subjects.first() {
            Some(Subject::Edge { from, to }) => Some((from, to)),
            _ => None,
        }
    }

    pub fn unmapped_entity(&self) -> Option<&str> {
        match (self.kind, self.subjects.first()) {
            (ViolationKind::UnmappedEntity, Some(Subject::Entity { entity })) => Some(entity),
            _ => None,
        }
    }

    /// Module sequence of a module_cycle violation, without the closing repeat.
    pub fn cycle_modules(&self) -> Option<Vec<&str>> {
        if self.kind != ViolationKind::ModuleCycle {
            return None;
        }
        let key = self.id.strip_prefix("module_cycle:")?;
        let mut parts: Vec<&str> = key.split("->").collect();
        parts.pop();
        Some(parts)
    }
}

/// The outcome of one conformance check, sorted by violation id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationSet {
    pub conformant: bool,
    pub counts: BTreeMap<ViolationKind, usize>,
    pub violations: Vec<Violation>,
}

impl ViolationSet {
    pub fn new(mut violations: Vec<Violation>) -> Self {
        violations.sort_by(|a, b| a.id.cmp(&b.id));
        violations.dedup_by(|a, b| a.id == b.id);
        let mut counts: BTreeMap<ViolationKind, usize> =
            ViolationKind::ALL.iter().map(|k| (*k, 0)).collect();
        for v in &violations {
            *counts.entry(v.kind).or_default() += 1;
        }
        Self {
            conformant: violations.is_empty(),
            counts,
            violations,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn get(&self, id: &str) -> Option<&Violation> {
        self.violations
            .binary_search_by(|v| v.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.violations[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.violations.iter().map(|v| v.id.as_str())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Violation> {
        self.violations.iter()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("violation set serializes")
    }
}

/// Directed module graph; edge weight is the number of crossing dependencies.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleGraph {
    pub edges: BTreeMap<String, BTreeMap<String, usize>>,
}

impl ModuleGraph {
    pub fn add_edge(&mut self, from: &str, to: &str, multiplicity: usize) {
        *self
            .edges
            .entry(from.to_string())
            .or_default()
            .entry(to.to_string())
            .or_default() += multiplicity;
    }

    pub fn multiplicity(&self, from: &str, to: &str) -> usize {
        self.edges
            .get(from)
            .and_then(|t| t.get(to))
            .copied()
            .unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(BTreeMap::len).sum()
    }

    pub fn nodes(&self) -> BTreeSet<&str> {
        let mut nodes = BTreeSet::new();
        for (from, targets) in &self.edges {
            nodes.insert(from.as_str());
            nodes.extend(targets.keys().map(String::as_str));
        }
        nodes
    }
}

pub fn module_dependency_graph(_a: &ArchitectureModel, s: &ImplementationModel) -> ModuleGraph {
    let index = s.module_index();
    let mut graph = ModuleGraph::default();
    for dep in &s.dependencies {
        if let (Some(m1), Some(m2)) = (index.get(dep.from.as_str()), index.get(dep.to.as_str())) {
            if m1 != m2 {
                graph.add_edge(m1, m2, 1);
            }
        }
    }
    graph
}

/// An elementary cycle, rotated to start at its smallest module.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cycle(pub Vec<String>);

impl Cycle {
    /// Consecutive (from, to) module pairs, including the closing edge.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        let n = self.0.len();
        (0..n).map(move |i| (self.0[i].as_str(), self.0[(i + 1) % n].as_str()))
    }
}

impl fmt::Display for Cycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.0 {
            write!(f, "{m}->")?;
        }
        f.write_str(self.0.first().map(String::as_str).unwrap_or(""))
    }
}

/// All elementary cycles in canonical rotation, sorted by their text form.
pub fn find_module_cycles(g: &ModuleGraph) -> Result<Vec<Cycle>, ConformanceError> {
    let nodes: Vec<&str> = g.nodes().into_iter().collect();
    let pos: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let adj: Vec<Vec<usize>> = nodes
        .iter()
        .map(|n| {
            g.edges
                .get(*n)
                .map(|t| t.keys().map(|k| pos[k.as_str()]).collect())
                .unwrap_or_default()
        })
        .collect();

    let mut found = Vec::new();
    let mut path = Vec::new();
    let mut on_path = vec![false; nodes.len()];
    // Each cycle is discovered exactly once, from its smallest node; every
    // other node on it must be larger.
    for start in 0..nodes.len() {
        path.push(start);
        on_path[start] = true;
        extend_cycles(start, start, &adj, &mut path, &mut on_path, &mut found)?;
        on_path[start] = false;
        path.pop();
    }

    let mut cycles: Vec<Cycle> = found
        .into_iter()
        .map(|p| Cycle(p.into_iter().map(|i| nodes[i].to_string()).collect()))
        .collect();
    cycles.sort_by_cached_key(|c| c.to_string());
    Ok(cycles)
}

fn extend_cycles(
    start: usize,
    at: usize,
    adj: &[Vec<usize>],
    path: &mut Vec<usize>,
    on_path: &mut [bool],
    found: &mut Vec<Vec<usize>>,
) -> Result<(), ConformanceError> {
    for &next in &adj[at] {
        if next == start {
            if found.len() >= MAX_CYCLES {
                return Err(ConformanceError::TooManyCycles { limit: MAX_CYCLES });
            }
            found.push(path.clone());
        } else if next > start && !on_path[next] {
            path.push(next);
            on_path[next] = true;
            extend_cycles(start, next, adj, path, on_path, found)?;
            on_path[next] = false;
            path.pop();
        }
    }
    Ok(())
}

/// Decides whether the implementation satisfies the architecture and lists
/// every violation.
pub fn check(a: &ArchitectureModel, s: &ImplementationModel) -> Result<ViolationSet, ConformanceError> {
    let issues = validate_pairing(a, s);
    if let Some(issue) = issues.first() {
        return Err(ConformanceError::Pairing(issue.message.clone()));
    }

    let index = s.module_index();
    let modules: HashMap<&str, _> = a.modules.iter().map(|m| (m.name.as_str(), m)).collect();
    let public: HashMap<&str, bool> = s.entities.iter().map(|e| (e.id.as_str(), e.public)).collect();
    let mut rules: HashMap<(&str, &str), Vec<&RuleDecl>> = HashMap::new();
    for rule in &a.rules {
        rules.entry((rule.from.as_str(), rule.to.as_str())).or_default().push(rule);
    }

    let mut violations = Vec::new();
    for entity in s.entities.iter().filter(|e| !e.is_mapped()) {
        violations.push(Violation {
            id: format!("{}:{}", ViolationKind::UnmappedEntity.as_str(), entity.id),
            kind: ViolationKind::UnmappedEntity,
            subjects: vec![Subject::Entity {
                entity: entity.id.clone(),
            }],
            module_pair: None,
            rule_id: None,
        });
    }

    for dep in &s.dependencies {
        let (Some(&m1), Some(&m2)) = (index.get(dep.from.as_str()), index.get(dep.to.as_str())) else {
            continue;
        };
        if m1 == m2 {
            continue;
        }
        let pair_rules = rules.get(&(m1, m2)).map(Vec::as_slice).unwrap_or(&[]);
        let forbid = pair_rules
            .iter()
            .filter(|r| r.kind == RuleKind::Forbid)
            .map(|r| r.id.as_str())
            .min();
        let permission = if let Some(rule_id) = forbid {
            Some((ViolationKind::ForbiddenDependency, Some(rule_id.to_string())))
        } else if pair_rules.iter().any(|r| r.kind == RuleKind::Allow) {
            None
        } else {
            match (a.module_rank(m1), a.module_rank(m2)) {
                (Some(r1), Some(r2)) if r1 > r2 => None,
                (Some(_), Some(_)) => Some((ViolationKind::LayerViolation, None)),
                _ => Some((ViolationKind::UnsanctionedDependency, None)),
            }
        };
        if let Some((kind, rule_id)) = permission {
            violations.push(Violation::edge(kind, &dep.from, &dep.to, m1, m2, rule_id));
        }
        let target_interface_only = modules.get(m2).is_some_and(|m| m.interface_only);
        if target_interface_only && !public.get(dep.to.as_str()).copied().unwrap_or(false) {
            violations.push(Violation::edge(
                ViolationKind::NonInterfaceAccess,
                &dep.from,
                &dep.to,
                m1,
                m2,
                None,
            ));
        }
    }

    if a.policy.cycle_check {
        let graph = module_dependency_graph(a, s);
        let mut by_pair: HashMap<(&str, &str), Vec<&Dependency>> = HashMap::new();
        for d in &s.dependencies {
            if let (Some(&m1), Some(&m2)) = (index.get(d.from.as_str()), index.get(d.to.as_str())) {
                by_pair.entry((m1, m2)).or_default().push(d);
            }
        }
        for cycle in find_module_cycles(&graph)? {
            let crossing: BTreeSet<(&str, &str)> = cycle.edges().collect();
            let mut subjects: Vec<Subject> = crossing
                .iter()
                .flat_map(|pair| by_pair.get(pair).into_iter().flatten())
                .map(|d| Subject::edge(&d.from, &d.to))
                .collect();
            subjects.sort();
            violations.push(Violation {
                id: format!("{}:{}", ViolationKind::ModuleCycle.as_str(), cycle),
                kind: ViolationKind::ModuleCycle,
                subjects,
                module_pair: None,
                rule_id: None,
            });
        }
    }

    Ok(ViolationSet::new(violations))
}

/// One-sentence explanation of a violation that `check(a, s)` still reports.
pub fn explain(
    v: &Violation,
    a: &ArchitectureModel,
    s: &ImplementationModel,
) -> Result<String, ConformanceError> {
    let current = check(a, s)?;
    let v = current
        .get(&v.id)
        .ok_or_else(|| ConformanceError::UnknownViolation(v.id.clone()))?;
    Ok(describe(v, a))
}

fn layer_label(a: &ArchitectureModel, module: &str) -> String {
    match a.module(module).and_then(|m| m.layer.as_deref()) {
        Some(layer) => format!(
            "module {module} (layer {layer}, rank {})",
            a.layer(layer).map(|l| l.rank).unwrap_or_default()
        ),
        None => format!("module {module} (unlayered)"),
    }
}

/// Template text for a violation, without re-checking it.
pub fn describe(v: &Violation, a: &ArchitectureModel) -> String {
    let pair = v.module_pair.as_ref();
    let (from, to) = v.edge_endpoints().unwrap_or(("", ""));
    match v.kind {
        ViolationKind::LayerViolation => {
            let p = pair.expect("edge violation has a module pair");
            format!(
                "Dependency {from} -> {to} runs from {} to {}, but layered modules may only depend on strictly lower ranks.",
                layer_label(a, &p.from),
                layer_label(a, &p.to)
            )
        }
        ViolationKind::UnsanctionedDependency => {
            let p = pair.expect("edge violation has a module pair");
            format!(
                "Dependency {from} -> {to} from module {} to module {} is not sanctioned: there is no allow rule {}->{}, layering does not apply, and the default inter-module policy is deny.",
                p.from, p.to, p.from, p.to
            )
        }
        ViolationKind::ForbiddenDependency => {
            let p = pair.expect("edge violation has a module pair");
            format!(
                "Dependency {from} -> {to} from module {} to module {} breaks forbid rule {}.",
                p.from,
                p.to,
                v.rule_id.as_deref().unwrap_or("?")
            )
        }
        ViolationKind::NonInterfaceAccess => {
            let p = pair.expect("edge violation has a module pair");
            format!(
                "Dependency {from} -> {to} from module {} reaches non-public entity {to} of interface-only module {}.",
                p.from, p.to
            )
        }
        ViolationKind::UnmappedEntity => format!(
            "Entity {} is not mapped to any module.",
            v.unmapped_entity().unwrap_or("?")
        ),
        ViolationKind::ModuleCycle => {
            let modules = v.cycle_modules().unwrap_or_default();
            format!(
                "Modules {} form the dependency cycle {} through {} dependencies.",
                modules.join(", "),
                v.id.trim_start_matches("module_cycle:"),
                v.subjects.len()
            )
        }
    }
}

/// Plain-text table for terminals.
pub fn render_table(vs: &ViolationSet) -> String {
    if vs.is_empty() {
        return "conformant: no violations\n".to_string();
    }
    let width = vs
        .iter()
        .map(|v| v.kind.as_str().len())
        .max()
        .unwrap_or(4)
        .max(4);
    let mut out = format!("{:<width$}  SUBJECT\n", "KIND");
    for v in vs.iter() {
        let subject = v.id.split_once(':').map(|(_, s)| s).unwrap_or(&v.id);
        out.push_str(&format!("{:<width$}  {subject}\n", v.kind.as_str()));
    }
    out.push_str(&format!("{} violation(s)\n", vs.len()));
    out
}
