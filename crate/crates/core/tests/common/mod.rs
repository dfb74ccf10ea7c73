//! Brute-force reference evaluator, written without reusing the checker.

#![allow(dead_code)]

use std::collections::BTreeSet;

use archmend_core::model::SystemState;

fn module_of(st: &SystemState, entity: &str) -> Option<String> {
    st.implementation
        .entities
        .iter()
        .find(|e| e.id == entity && !e.module.is_empty())
        .map(|e| e.module.clone())
}

fn rank(st: &SystemState, module: &str) -> Option<i64> {
    let decl = st.architecture.modules.iter().find(|m| m.name == module)?;
    let layer = decl.layer.as_ref()?;
    st.architecture.layers.iter().find(|l| &l.name == layer).map(|l| l.rank)
}

fn rule_exists(st: &SystemState, kind: &str, from: &str, to: &str) -> bool {
    st.architecture
        .rules
        .iter()
        .any(|r| r.kind.as_str() == kind && r.from == from && r.to == to)
}

/// Violation ids by exhaustive evaluation of every predicate.
pub fn reference_violation_ids(st: &SystemState) -> BTreeSet<String> {
    let mut ids = BTreeSet::new();
    for e in &st.implementation.entities {
        if e.module.is_empty() {
            ids.insert(format!("unmapped_entity:{}", e.id));
        }
    }

    let mut module_edges: BTreeSet<(String, String)> = BTreeSet::new();
    for d in &st.implementation.dependencies {
        let (Some(m1), Some(m2)) = (module_of(st, &d.from), module_of(st, &d.to)) else {
            continue;
        };
        if m1 == m2 {
            continue;
        }
        module_edges.insert((m1.clone(), m2.clone()));
        let edge = format!("{}->{}", d.from, d.to);
        if rule_exists(st, "forbid", &m1, &m2) {
            ids.insert(format!("forbidden_dependency:{edge}"));
        } else if rule_exists(st, "allow", &m1, &m2) {
        } else {
            match (rank(st, &m1), rank(st, &m2)) {
                (Some(r1), Some(r2)) if r1 > r2 => {}
                (Some(_), Some(_)) => {
                    ids.insert(format!("layer_violation:{edge}"));
                }
                _ => {
                    ids.insert(format!("unsanctioned_dependency:{edge}"));
                }
            }
        }
        let target_iface = st.architecture.modules.iter().any(|m| m.name == m2 && m.interface_only);
        let target_public = st.implementation.entities.iter().any(|e| e.id == d.to && e.public);
        if target_iface && !target_public {
            ids.insert(format!("non_interface_access:{edge}"));
        }
    }

    if st.architecture.policy.cycle_check {
        // every sequence of distinct modules that starts at its smallest member
        let mut modules: Vec<String> = st.architecture.modules.iter().map(|m| m.name.clone()).collect();
        modules.sort();
        let mut seq = Vec::new();
        all_cycles(&modules, &module_edges, &mut seq, &mut ids);
    }
    ids
}

fn all_cycles(
    modules: &[String],
    edges: &BTreeSet<(String, String)>,
    seq: &mut Vec<String>,
    out: &mut BTreeSet<String>,
) {
    if seq.len() >= 2 {
        let closes = edges.contains(&(seq[seq.len() - 1].clone(), seq[0].clone()));
        let chained = seq.windows(2).all(|w| edges.contains(&(w[0].clone(), w[1].clone())));
        if closes && chained {
            out.insert(format!("module_cycle:{}->{}", seq.join("->"), seq[0]));
        }
    }
    for m in modules {
        if seq.contains(m) || seq.first().is_some_and(|first| m < first) {
            continue;
        }
        seq.push(m.clone());
        all_cycles(modules, edges, seq, out);
        seq.pop();
    }
}
