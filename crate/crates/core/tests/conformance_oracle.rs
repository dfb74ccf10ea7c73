mod common;

use std::collections::BTreeSet;

use archmend_core::conformance::check;
use archmend_core::erosion::{random_system, SystemShape};
use archmend_core::fixtures;
use proptest::prelude::*;

fn ids(st: &archmend_core::SystemState) -> BTreeSet<String> {
    check(&st.architecture, &st.implementation)
        .unwrap()
        .ids()
        .map(str::to_string)
        .collect()
}

#[test]
fn fixtures_agree_with_reference() {
    for name in ["f1", "f2", "f3", "f4", "f5"] {
        let st = fixtures::by_name(name).unwrap();
        assert_eq!(ids(&st), common::reference_violation_ids(&st), "{name}");
    }
    assert_eq!(ids(&fixtures::f1()).len(), 0);
    assert_eq!(ids(&fixtures::f2()).len(), 1);
    assert_eq!(ids(&fixtures::f4()).len(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn checker_matches_reference(seed in any::<u64>()) {
        let st = random_system(seed, SystemShape::default());
        prop_assert_eq!(ids(&st), common::reference_violation_ids(&st));
    }

    #[test]
    fn removing_a_dependency_never_adds_violations(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let st = random_system(seed, SystemShape::default());
        prop_assume!(!st.implementation.dependencies.is_empty());
        let before = ids(&st);
        let mut smaller = st.clone();
        let removed = smaller.implementation.dependencies.remove(pick.index(st.implementation.dependencies.len()));
        let after = ids(&smaller);
        prop_assert!(after.is_subset(&before));
        let edge = format!(":{}->{}", removed.from, removed.to);
        prop_assert!(after.iter().all(|id| !id.ends_with(&edge)));
    }

    #[test]
    fn checking_is_deterministic(seed in any::<u64>()) {
        let st = random_system(seed, SystemShape::default());
        let once = check(&st.architecture, &st.implementation).unwrap().to_json();
        let twice = check(&st.architecture, &st.implementation).unwrap().to_json();
        prop_assert_eq!(once, twice);
    }
}
