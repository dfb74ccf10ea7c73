//! Failure-pattern detection and cause ranking.
//!
//! Individual violations are aggregated into [`FailurePattern`]s by a small
//! set of matchers. Patterns may overlap; the engineer picks one. Any
//! violation no matcher explains becomes its own `isolated_violation`
//! pattern, so the union of covered ids is always the full violation set.
//!
//! The matcher set is open: add a [`CauseKind`] variant, a matcher in
//! [`detect_patterns`], a prior in `data/priors.json` and (optionally)
//! template actions in `repair::template_actions`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conformance::{ViolationKind, ViolationSet};
use crate::knowledge::KbSnapshot;
use crate::model::{ArchitectureModel, ImplementationModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CauseKind {
    MisplacedEntity,
    MissingAllowRule,
    CyclicModuleDependency,
    MissingFacade,
    IsolatedViolation,
}

impl CauseKind {
    pub const ALL: [CauseKind; 5] = [
        CauseKind::MisplacedEntity,
        CauseKind::MissingAllowRule,
        CauseKind::CyclicModuleDependency,
        CauseKind::MissingFacade,
        CauseKind::IsolatedViolation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CauseKind::MisplacedEntity => "misplaced_entity",
            CauseKind::MissingAllowRule => "missing_allow_rule",
            CauseKind::CyclicModuleDependency => "cyclic_module_dependency",
            CauseKind::MissingFacade => "missing_facade",
            CauseKind::IsolatedViolation => "isolated_violation",
        }
    }
}

impl fmt::Display for CauseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CauseKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CauseKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown cause kind {s:?}"))
    }
}

/// The cause kind encoded in a class key or signature prefix.
pub fn cause_kind_of(key: &str) -> Option<CauseKind> {
    let end = key.find(['/', '(']).unwrap_or(key.len());
    key[..end].parse().ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailurePattern {
    pub signature: String,
    pub cause_kind: CauseKind,
    pub covered: Vec<String>,
    pub parameters: BTreeMap<String, String>,
}

impl FailurePattern {
    pub fn new(
        cause_kind: CauseKind,
        parameters: impl IntoIterator<Item = (&'static str, String)>,
        covered: impl IntoIterator<Item = String>,
    ) -> Self {
        let parameters: BTreeMap<String, String> =
            parameters.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let covered: BTreeSet<String> = covered.into_iter().collect();
        let mut pattern = Self {
            signature: String::new(),
            cause_kind,
            covered: covered.into_iter().collect(),
            parameters,
        };
        pattern.signature = signature(&pattern);
        pattern
    }

    /// Instance-free knowledge-base key: `<cause_kind>/<parameter names>`.
    pub fn class_key(&self) -> String {
        class_key(self.cause_kind, self.parameters.keys().map(String::as_str))
    }
}

pub fn class_key<'a>(kind: CauseKind, names: impl IntoIterator<Item = &'a str>) -> String {
    let names: BTreeSet<&str> = names.into_iter().collect();
    format!("{}/{}", kind.as_str(), names.into_iter().collect::<Vec<_>>().join(","))
}

/// `<cause_kind>(<k=v sorted by k>)`
pub fn signature(pattern: &FailurePattern) -> String {
    let args: Vec<String> = pattern
        .parameters
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    format!("{}({})", pattern.cause_kind.as_str(), args.join(","))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosisConfig {
    /// Minimum violations, and distinct sources, sharing one module pair.
    pub allow_rule_threshold: usize,
    /// Minimum non-interface accesses into one module.
    pub facade_threshold: usize,
    /// Minimum violating edges on a misplaced entity; they must also be a
    /// strict majority of its cross-module edges.
    pub misplaced_min_edges: usize,
}

impl Default for DiagnosisConfig {
    fn default() -> Self {
        Self {
            allow_rule_threshold: 3,
            facade_threshold: 2,
            misplaced_min_edges: 2,
        }
    }
}

pub fn detect_patterns(
    vs: &ViolationSet,
    _a: &ArchitectureModel,
    s: &ImplementationModel,
    cfg: &DiagnosisConfig,
) -> Vec<FailurePattern> {
    let index = s.module_index();
    let mut by_edge: HashMap<(&str, &str), Vec<&str>> = HashMap::new();
    for v in vs.iter() {
        if let Some(edge) = v.edge_endpoints() {
            by_edge.entry(edge).or_default().push(&v.id);
        }
    }

    let mut patterns = Vec::new();

    // misplaced entity: most of its cross-module edges violate, all towards one module
    struct Tally<'a> {
        cross: usize,
        far: BTreeSet<&'a str>,
        violating: usize,
        covered: Vec<&'a str>,
    }
    let mut tallies: BTreeMap<&str, Tally> = BTreeMap::new();
    for dep in &s.dependencies {
        let (Some(&m1), Some(&m2)) = (index.get(dep.from.as_str()), index.get(dep.to.as_str())) else {
            continue;
        };
        if m1 == m2 {
            continue;
        }
        let ids = by_edge.get(&(dep.from.as_str(), dep.to.as_str()));
        for (entity, far) in [(dep.from.as_str(), m2), (dep.to.as_str(), m1)] {
            let t = tallies.entry(entity).or_insert_with(|| Tally {
                cross: 0,
                far: BTreeSet::new(),
                violating: 0,
                covered: Vec::new(),
            });
            t.cross += 1;
            if let Some(ids) = ids {
                t.violating += 1;
                t.far.insert(far);
                t.covered.extend(ids.iter().copied());
            }
        }
    }
    for (entity, t) in &tallies {
        if t.violating >= cfg.misplaced_min_edges && t.far.len() == 1 && 2 * t.violating > t.cross {
            let target = t.far.iter().next().expect("one far module").to_string();
            patterns.push(FailurePattern::new(
                CauseKind::MisplacedEntity,
                [("entity", entity.to_string()), ("target", target)],
                t.covered.iter().map(|s| s.to_string()),
            ));
        }
    }

    // missing allow rule: many sources crossing the same unpermitted module pair
    let mut by_pair: BTreeMap<(&str, &str), (Vec<&str>, BTreeSet<&str>)> = BTreeMap::new();
    for v in vs.iter().filter(|v| {
        matches!(v.kind, ViolationKind::LayerViolation | ViolationKind::UnsanctionedDependency)
    }) {
        let (Some(pair), Some((from, _))) = (&v.module_pair, v.edge_endpoints()) else {
            continue;
        };
        let slot = by_pair.entry((pair.from.as_str(), pair.to.as_str())).or_default();
        slot.0.push(&v.id);
        slot.1.insert(from);
    }
    for ((from, to), (ids, sources)) in by_pair {
        if ids.len() >= cfg.allow_rule_threshold && sources.len() >= cfg.allow_rule_threshold {
            patterns.push(FailurePattern::new(
                CauseKind::MissingAllowRule,
                [("from", from.to_string()), ("to", to.to_string())],
                ids.into_iter().map(str::to_string),
            ));
        }
    }

    for v in vs.iter().filter(|v| v.kind == ViolationKind::ModuleCycle) {
        let cycle = v.id.trim_start_matches("module_cycle:").to_string();
        patterns.push(FailurePattern::new(
            CauseKind::CyclicModuleDependency,
            [("cycle", cycle)],
            [v.id.clone()],
        ));
    }

    let mut facade: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for v in vs.iter().filter(|v| v.kind == ViolationKind::NonInterfaceAccess) {
        if let Some(pair) = &v.module_pair {
            facade.entry(pair.to.as_str()).or_default().push(&v.id);
        }
    }
    for (module, ids) in facade {
        if ids.len() >= cfg.facade_threshold {
            patterns.push(FailurePattern::new(
                CauseKind::MissingFacade,
                [("module", module.to_string())],
                ids.into_iter().map(str::to_string),
            ));
        }
    }

    let covered: BTreeSet<&str> = patterns
        .iter()
        .flat_map(|p| p.covered.iter().map(String::as_str))
        .collect();
    let isolated: Vec<FailurePattern> = vs
        .ids()
        .filter(|id| !covered.contains(id))
        .map(|id| {
            FailurePattern::new(
                CauseKind::IsolatedViolation,
                [("violation", id.to_string())],
                [id.to_string()],
            )
        })
        .collect();
    patterns.extend(isolated);
    patterns.sort_by(|x, y| x.signature.cmp(&y.signature));
    patterns
}

/// One (violations, cause) hypothesis offered to the engineer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseCandidate {
    /// 1-based position in the ranked list.
    pub id: u32,
    pub pattern: FailurePattern,
    pub class_key: String,
    pub confidence: f64,
    pub explanation: String,
}

fn explanation(p: &FailurePattern) -> String {
    let param = |k: &str| p.parameters.get(k).map(String::as_str).unwrap_or("?");
    let n = p.covered.len();
    match p.cause_kind {
        CauseKind::MisplacedEntity => format!(
            "Entity {} has {n} violation(s) on dependencies that all lead to module {}; it probably belongs there.",
            param("entity"),
            param("target")
        ),
        CauseKind::MissingAllowRule => format!(
            "{n} dependencies from {} to {} are rejected; the architecture may be missing an allow rule {}->{}.",
            param("from"),
            param("to"),
            param("from"),
            param("to")
        ),
        CauseKind::CyclicModuleDependency => {
            format!("Modules depend on each other in the cycle {}.", param("cycle"))
        }
        CauseKind::MissingFacade => format!(
            "{n} dependencies reach non-public entities of interface-only module {}; it may need a facade.",
            param("module")
        ),
        CauseKind::IsolatedViolation => {
            format!("Violation {} matches no broader pattern.", param("violation"))
        }
    }
}

/// Scores each pattern against the knowledge base and sorts by
/// (confidence desc, signature asc).
pub fn rank_causes(patterns: &[FailurePattern], kb: &KbSnapshot, system_id: &str) -> Vec<CauseCandidate> {
    let mut candidates: Vec<CauseCandidate> = patterns
        .iter()
        .map(|p| {
            let class_key = p.class_key();
            CauseCandidate {
                id: 0,
                confidence: kb.cause_score(&class_key, p.cause_kind, system_id),
                class_key,
                explanation: explanation(p),
                pattern: p.clone(),
            }
        })
        .collect();
    candidates.sort_by(|x, y| {
        y.confidence
            .total_cmp(&x.confidence)
            .then_with(|| x.pattern.signature.cmp(&y.pattern.signature))
    });
    for (i, c) in candidates.iter_mut().enumerate() {
        c.id = i as u32 + 1;
    }
    candidates
}

/// Detection plus ranking in one call.
pub fn diagnose(
    vs: &ViolationSet,
    a: &ArchitectureModel,
    s: &ImplementationModel,
    cfg: &DiagnosisConfig,
    kb: &KbSnapshot,
    system_id: &str,
) -> Vec<CauseCandidate> {
    rank_causes(&detect_patterns(vs, a, s, cfg), kb, system_id)
}
