//! Synthetic erosion cases with known repairs.
//!
//! A clean system is sampled so that every dependency is permitted, then
//! `k_mutations` erosion steps are applied. Each step is the exact inverse
//! of a catalog repair action, so undoing the steps in reverse order is a
//! consolidating plan that lies inside the planner's candidate space.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformance::{check, ViolationKind};
use crate::model::{
    ArchitectureModel, Dependency, Entity, ImplementationModel, LayerDecl, ModuleDecl, PolicyConfig,
    RuleDecl, RuleKind, SystemState,
};
use crate::repair::RepairAction;
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator configuration: {0}")]
    Config(String),
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    MisplaceEntity,
    AddIllegalEdge,
    DropAllowRule,
}

impl MutationKind {
    pub const ALL: [MutationKind; 3] = [
        MutationKind::MisplaceEntity,
        MutationKind::AddIllegalEdge,
        MutationKind::DropAllowRule,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MutationWeights {
    pub misplace_entity: f64,
    pub add_illegal_edge: f64,
    pub drop_allow_rule: f64,
}

impl Default for MutationWeights {
    fn default() -> Self {
        Self {
            misplace_entity: 1.0,
            add_illegal_edge: 1.0,
            drop_allow_rule: 1.0,
        }
    }
}

impl MutationWeights {
    fn get(&self, kind: MutationKind) -> f64 {
        match kind {
            MutationKind::MisplaceEntity => self.misplace_entity,
            MutationKind::AddIllegalEdge => self.add_illegal_edge,
            MutationKind::DropAllowRule => self.drop_allow_rule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub n_modules: usize,
    pub n_layers: usize,
    pub n_entities: usize,
    /// Expected number of permitted dependencies per entity.
    pub edge_density: f64,
    pub k_mutations: usize,
    pub mutation_weights: MutationWeights,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_modules: 8,
            n_layers: 3,
            n_entities: 40,
            edge_density: 1.5,
            k_mutations: 2,
            mutation_weights: MutationWeights::default(),
        }
    }
}

impl GenConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let fail = |m: &str| Err(GenError::Config(m.to_string()));
        if self.n_modules < 2 {
            return fail("n_modules must be at least 2");
        }
        if self.n_layers == 0 || self.n_layers > self.n_modules {
            return fail("n_layers must be between 1 and n_modules");
        }
        if self.n_entities < self.n_modules {
            return fail("n_entities must be at least n_modules");
        }
        if !(self.edge_density > 0.0) {
            return fail("edge_density must be positive");
        }
        if self.k_mutations == 0 {
            return fail("k_mutations must be at least 1");
        }
        let w = &self.mutation_weights;
        let weights = [w.misplace_entity, w.add_illegal_edge, w.drop_allow_rule];
        if weights.iter().any(|x| !(*x >= 0.0)) || weights.iter().all(|x| *x == 0.0) {
            return fail("mutation weights must be non-negative and not all zero");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mutation {
    pub kind: MutationKind,
    pub description: String,
    /// The repair action that undoes this step.
    pub inverse: RepairAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErosionCase {
    pub seed: u64,
    /// The architecture the clean implementation conforms to.
    pub intended_architecture: ArchitectureModel,
    /// The architecture paired with `eroded`; differs from the intended one
    /// only when an allow rule was dropped.
    pub architecture: ArchitectureModel,
    pub clean: ImplementationModel,
    pub eroded: ImplementationModel,
    pub mutations: Vec<Mutation>,
    /// Inverses of the mutations, last mutation first.
    pub ground_truth: Vec<RepairAction>,
}

impl ErosionCase {
    pub fn eroded_state(&self) -> SystemState {
        SystemState {
            architecture: self.architecture.clone(),
            implementation: self.eroded.clone(),
            accumulated_cost: 0.0,
        }
    }

    pub fn clean_state(&self) -> SystemState {
        SystemState {
            architecture: self.intended_architecture.clone(),
            implementation: self.clean.clone(),
            accumulated_cost: 0.0,
        }
    }
}

/// Edge permission between two distinct modules, as the checker decides it.
pub fn permitted(a: &ArchitectureModel, from: &str, to: &str) -> bool {
    if a.has_rule(RuleKind::Forbid, from, to) {
        return false;
    }
    if a.has_rule(RuleKind::Allow, from, to) {
        return true;
    }
    matches!((a.module_rank(from), a.module_rank(to)), (Some(r1), Some(r2)) if r1 > r2)
}

fn allow_rule_id(from: &str, to: &str) -> String {
    format!("auto.allow.{from}.{to}")
}

fn clean_architecture(cfg: &GenConfig, rng: &mut SplitMix64) -> ArchitectureModel {
    let layers: Vec<LayerDecl> = (1..=cfg.n_layers)
        .map(|rank| LayerDecl {
            name: format!("layer{rank}"),
            rank: rank as i64,
        })
        .collect();
    let modules: Vec<ModuleDecl> = (0..cfg.n_modules)
        .map(|i| {
            let layer = if i < cfg.n_layers { i } else { rng.index(cfg.n_layers) };
            ModuleDecl {
                name: format!("m{i}"),
                layer: Some(layers[layer].name.clone()),
                interface_only: rng.chance(0.25),
            }
        })
        .collect();
    let mut a = ArchitectureModel {
        modules,
        layers,
        rules: Vec::new(),
        policy: PolicyConfig::default(),
        rule_locks: BTreeSet::new(),
    };

    // same-layer allowances only point from lower to higher index, keeping the clean graph acyclic
    for i in 0..cfg.n_modules {
        for j in (i + 1)..cfg.n_modules {
            let (mi, mj) = (&a.modules[i], &a.modules[j]);
            if mi.layer == mj.layer && rng.chance(0.5) {
                let (from, to) = (mi.name.clone(), mj.name.clone());
                a.rules.push(RuleDecl {
                    id: allow_rule_id(&from, &to),
                    kind: RuleKind::Allow,
                    from,
                    to,
                });
            }
        }
    }

    let mut closed: Vec<(String, String)> = Vec::new();
    for x in &a.modules {
        for y in &a.modules {
            if x.name != y.name && !permitted(&a, &x.name, &y.name) {
                closed.push((x.name.clone(), y.name.clone()));
            }
        }
    }
    rng.shuffle(&mut closed);
    for (from, to) in closed.into_iter().take(cfg.n_modules / 4) {
        a.rules.push(RuleDecl {
            id: format!("forbid.{from}.{to}"),
            kind: RuleKind::Forbid,
            from,
            to,
        });
    }
    a
}

fn clean_implementation(
    a: &ArchitectureModel,
    cfg: &GenConfig,
    rng: &mut SplitMix64,
) -> Result<ImplementationModel, GenError> {
    let mut homes: Vec<usize> = (0..cfg.n_modules).collect();
    homes.extend((cfg.n_modules..cfg.n_entities).map(|_| rng.index(cfg.n_modules)));
    let entities: Vec<Entity> = homes
        .into_iter()
        .enumerate()
        .map(|(k, m)| {
            let module = &a.modules[m];
            let p_public = if module.interface_only { 0.5 } else { 0.7 };
            Entity {
                id: format!("{}.c{k}", module.name),
                module: module.name.clone(),
                public: rng.chance(p_public),
            }
        })
        .collect();

    let target = ((cfg.edge_density * cfg.n_entities as f64).round() as usize).max(1);
    let mut seen = BTreeSet::new();
    let mut dependencies = Vec::new();
    for _ in 0..target.saturating_mul(20) {
        if dependencies.len() == target {
            break;
        }
        let u = &entities[rng.index(entities.len())];
        let v = &entities[rng.index(entities.len())];
        if u.id == v.id || seen.contains(&(u.id.clone(), v.id.clone())) {
            continue;
        }
        if u.module != v.module {
            if !permitted(a, &u.module, &v.module) {
                continue;
            }
            let into_interface = a.module(&v.module).is_some_and(|m| m.interface_only);
            if into_interface && !v.public {
                continue;
            }
        }
        seen.insert((u.id.clone(), v.id.clone()));
        dependencies.push(Dependency::new(&u.id, &v.id));
    }
    if dependencies.is_empty() {
        return Err(GenError::Infeasible("no permitted dependency could be sampled".into()));
    }
    Ok(ImplementationModel { entities, dependencies })
}

fn module_of<'a>(s: &'a ImplementationModel, id: &str) -> &'a str {
    s.entity(id).map(|e| e.module.as_str()).unwrap_or("")
}

fn misplace_entity(
    a: &ArchitectureModel,
    s: &mut ImplementationModel,
    pinned: &mut BTreeSet<String>,
    rng: &mut SplitMix64,
) -> Option<Mutation> {
    // an unpinned entity with an intra-module dependency, and a module from
    // which that dependency would be rejected
    let mut options: Vec<(String, String, String)> = Vec::new();
    let sources: BTreeSet<&str> = s
        .dependencies
        .iter()
        .filter(|d| module_of(s, &d.from) == module_of(s, &d.to))
        .map(|d| d.from.as_str())
        .filter(|e| !pinned.contains(*e))
        .collect();
    for e in sources {
        let home = module_of(s, e);
        for m in &a.modules {
            if m.name != home && !permitted(a, &m.name, home) {
                options.push((e.to_string(), home.to_string(), m.name.clone()));
            }
        }
    }
    let (entity, home, away) = rng.choose(&options)?.clone();
    s.entity_mut(&entity).expect("sampled from the model").module = away.clone();
    pinned.insert(entity.clone());
    Some(Mutation {
        kind: MutationKind::MisplaceEntity,
        description: format!("moved {entity} from {home} to {away}"),
        inverse: RepairAction::move_entity(entity, home),
    })
}

fn add_illegal_edge(
    a: &ArchitectureModel,
    s: &mut ImplementationModel,
    pinned: &mut BTreeSet<String>,
    rng: &mut SplitMix64,
) -> Option<Mutation> {
    let mut options: Vec<(&str, &str)> = Vec::new();
    for u in &s.entities {
        for v in &s.entities {
            if u.module != v.module && !permitted(a, &u.module, &v.module) && !s.has_dependency(&u.id, &v.id) {
                options.push((&u.id, &v.id));
            }
        }
    }
    let (from, to) = rng.choose(&options).map(|(f, t)| (f.to_string(), t.to_string()))?;
    s.dependencies.push(Dependency::new(&from, &to));
    pinned.insert(from.clone());
    pinned.insert(to.clone());
    Some(Mutation {
        kind: MutationKind::AddIllegalEdge,
        description: format!("added dependency {from}->{to}"),
        inverse: RepairAction::delete_dependency(from, to),
    })
}

fn drop_allow_rule(
    a: &mut ArchitectureModel,
    s: &ImplementationModel,
    rng: &mut SplitMix64,
) -> Option<Mutation> {
    let index = s.module_index();
    let witnessed: BTreeSet<(&str, &str)> = s
        .dependencies
        .iter()
        .filter_map(|d| Some((*index.get(d.from.as_str())?, *index.get(d.to.as_str())?)))
        .collect();
    let options: Vec<usize> = a
        .rules
        .iter()
        .enumerate()
        .filter(|(_, r)| r.kind == RuleKind::Allow && witnessed.contains(&(r.from.as_str(), r.to.as_str())))
        .map(|(i, _)| i)
        .collect();
    let i = *rng.choose(&options)?;
    let rule = a.rules.remove(i);
    Some(Mutation {
        kind: MutationKind::DropAllowRule,
        description: format!("dropped rule {} ({}->{})", rule.id, rule.from, rule.to),
        inverse: RepairAction::add_allow(rule.from, rule.to),
    })
}

pub fn generate(cfg: &GenConfig) -> Result<ErosionCase, GenError> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(cfg.seed);
    let intended = clean_architecture(cfg, &mut rng);
    let clean = clean_implementation(&intended, cfg, &mut rng)?;

    let mut architecture = intended.clone();
    let mut eroded = clean.clone();
    let mut pinned = BTreeSet::new();
    let mut mutations = Vec::new();
    for step in 0..cfg.k_mutations {
        let mut weights: Vec<f64> = MutationKind::ALL
            .iter()
            .map(|k| cfg.mutation_weights.get(*k))
            .collect();
        let mutation = loop {
            let Some(pick) = rng.weighted(&weights) else {
                return Err(GenError::Infeasible(format!(
                    "no mutation is applicable at step {}",
                    step + 1
                )));
            };
            let applied = match MutationKind::ALL[pick] {
                MutationKind::MisplaceEntity => misplace_entity(&architecture, &mut eroded, &mut pinned, &mut rng),
                MutationKind::AddIllegalEdge => add_illegal_edge(&architecture, &mut eroded, &mut pinned, &mut rng),
                MutationKind::DropAllowRule => drop_allow_rule(&mut architecture, &eroded, &mut rng),
            };
            match applied {
                Some(m) => break m,
                None => weights[pick] = 0.0,
            }
        };
        mutations.push(mutation);
    }
    let ground_truth = mutations.iter().rev().map(|m| m.inverse.clone()).collect();
    Ok(ErosionCase {
        seed: cfg.seed,
        intended_architecture: intended,
        architecture,
        clean,
        eroded,
        mutations,
        ground_truth,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub seed: u64,
    pub modules: usize,
    pub entities: usize,
    pub clean_dependencies: usize,
    pub eroded_dependencies: usize,
    pub violations: usize,
    pub violations_by_kind: BTreeMap<ViolationKind, usize>,
    pub mutations: Vec<MutationKind>,
    pub ground_truth: Vec<String>,
}

pub fn case_summary(case: &ErosionCase) -> CaseSummary {
    let vs = check(&case.architecture, &case.eroded).expect("generated cases are paired");
    CaseSummary {
        seed: case.seed,
        modules: case.architecture.modules.len(),
        entities: case.eroded.entities.len(),
        clean_dependencies: case.clean.dependencies.len(),
        eroded_dependencies: case.eroded.dependencies.len(),
        violations: vs.len(),
        violations_by_kind: vs.counts.clone(),
        mutations: case.mutations.iter().map(|m| m.kind).collect(),
        ground_truth: case.ground_truth.iter().map(RepairAction::id).collect(),
    }
}

/// Writes `architecture.json`, `intended_architecture.json`, `clean.json`,
/// `eroded.json`, `ground_truth.json` and `summary.json` into `dir`.
pub fn write_bundle(case: &ErosionCase, dir: &Path) -> Result<(), GenError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| GenError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let files = [
        ("architecture.json", case.architecture.to_canonical_json()),
        ("intended_architecture.json", case.intended_architecture.to_canonical_json()),
        ("clean.json", case.clean.to_canonical_json()),
        ("eroded.json", case.eroded.to_canonical_json()),
        (
            "ground_truth.json",
            serde_json::to_string(&case.ground_truth).expect("actions serialize"),
        ),
        (
            "summary.json",
            serde_json::to_string(&case_summary(case)).expect("summary serializes"),
        ),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body + "\n").map_err(io(&path))?;
    }
    Ok(())
}

/// Size bounds for [`random_system`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SystemShape {
    pub max_modules: usize,
    pub max_entities: usize,
    pub max_dependencies: usize,
}

impl Default for SystemShape {
    fn default() -> Self {
        Self {
            max_modules: 6,
            max_entities: 30,
            max_dependencies: 60,
        }
    }
}

/// An arbitrary valid (architecture, implementation) pair, with no
/// conformance guarantees: mixed layering with shared ranks, overlapping
/// allow and forbid rules, interface-only modules, private and unmapped
/// entities.
pub fn random_system(seed: u64, shape: SystemShape) -> SystemState {
    let mut rng = SplitMix64::new(seed);
    let n_modules = rng.range_inclusive(1, shape.max_modules.max(1) as u64) as usize;
    let n_layers = rng.below(4) as usize;
    let layers: Vec<LayerDecl> = (0..n_layers)
        .map(|i| LayerDecl {
            name: format!("l{i}"),
            rank: rng.range_inclusive(1, 3) as i64,
        })
        .collect();
    let modules: Vec<ModuleDecl> = (0..n_modules)
        .map(|i| ModuleDecl {
            name: format!("m{i}"),
            layer: if n_layers > 0 && rng.chance(0.6) {
                Some(layers[rng.index(n_layers)].name.clone())
            } else {
                None
            },
            interface_only: rng.chance(0.3),
        })
        .collect();
    let mut rules = Vec::new();
    if n_modules >= 2 {
        for i in 0..rng.below(2 * n_modules as u64 + 1) {
            let from = rng.index(n_modules);
            let mut to = rng.index(n_modules - 1);
            if to >= from {
                to += 1;
            }
            rules.push(RuleDecl {
                id: format!("r{i}"),
                kind: if rng.chance(0.6) { RuleKind::Allow } else { RuleKind::Forbid },
                from: modules[from].name.clone(),
                to: modules[to].name.clone(),
            });
        }
    }
    let architecture = ArchitectureModel {
        modules,
        layers,
        rules,
        policy: PolicyConfig {
            cycle_check: rng.chance(0.7),
            ..PolicyConfig::default()
        },
        rule_locks: BTreeSet::new(),
    };

    let n_entities = rng.range_inclusive(1, shape.max_entities.max(1) as u64) as usize;
    let entities: Vec<Entity> = (0..n_entities)
        .map(|i| Entity {
            id: format!("e{i}"),
            module: if rng.chance(0.1) {
                String::new()
            } else {
                architecture.modules[rng.index(n_modules)].name.clone()
            },
            public: rng.chance(0.6),
        })
        .collect();
    let mut dependencies = Vec::new();
    let mut seen = BTreeSet::new();
    if n_entities >= 2 {
        for _ in 0..rng.below(shape.max_dependencies as u64 + 1) {
            let u = rng.index(n_entities);
            let v = rng.index(n_entities);
            if u != v && seen.insert((u, v)) {
                dependencies.push(Dependency::new(&entities[u].id, &entities[v].id));
            }
        }
    }
    SystemState {
        architecture,
        implementation: ImplementationModel { entities, dependencies },
        accumulated_cost: 0.0,
    }
}
