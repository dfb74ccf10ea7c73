use archmend_core::fixtures;
use archmend_core::model::{load_architecture, load_implementation, validate_pairing, SystemState};
use archmend_core::rng::SplitMix64;
use archmend_core::erosion::{random_system, SystemShape};
use proptest::prelude::*;

// SHA-256 over the canonical documents, computed outside this crate with
// Python's json (sort_keys, compact separators) and hashlib.
const GOLDEN: [(&str, &str); 5] = [
    ("f1", "a82dc3987d1bf7c75312c39a895c3c23076c8e3c632075d2b8438f64ef64d1b1"),
    ("f2", "cfb250c8a52fe73961e3846ee4a7aaf03337ceb2949b8169e44335d12dad50b7"),
    ("f3", "61088d6c1723d315ff582952ae1f568b80cac6b7be680ea904df4d5e1b2e467b"),
    ("f4", "cdef11f0298dfb2c0f6d6345c2734874e7ebae830db12e8a9a97af5f0a61cf99"),
    ("f5", "95e889a02ed660b651cb410d2e5ec95583067de6289a706ef0f0a9426a75b79d"),
];

#[test]
fn fixture_hashes_match_independent_computation() {
    for (name, expected) in GOLDEN {
        let st = fixtures::by_name(name).unwrap();
        assert_eq!(st.hash().as_str(), expected, "{name}");
    }
}

#[test]
fn f1_pairs_cleanly() {
    let st = fixtures::f1();
    assert!(validate_pairing(&st.architecture, &st.implementation).is_empty());
}

#[test]
fn canonical_form_is_compact_and_sorted() {
    let text = fixtures::f1().canonical_json();
    assert!(!text.contains(' ') && !text.contains('\n'));
    assert!(text.starts_with(r#"{"architecture":{"layers":[{"name":"application","rank":2}"#));
}

fn shuffled(st: &SystemState, seed: u64) -> SystemState {
    let mut rng = SplitMix64::new(seed);
    let mut out = st.clone();
    rng.shuffle(&mut out.architecture.modules);
    rng.shuffle(&mut out.architecture.layers);
    rng.shuffle(&mut out.architecture.rules);
    rng.shuffle(&mut out.implementation.entities);
    rng.shuffle(&mut out.implementation.dependencies);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn hash_ignores_list_order(system_seed in any::<u64>(), shuffle_seed in any::<u64>()) {
        let st = random_system(system_seed, SystemShape::default());
        prop_assert_eq!(st.hash(), shuffled(&st, shuffle_seed).hash());
    }

    #[test]
    fn serialization_round_trips(system_seed in any::<u64>()) {
        let st = random_system(system_seed, SystemShape::default());
        let a_text = serde_json::to_string_pretty(&st.architecture).unwrap();
        let s_text = serde_json::to_string_pretty(&st.implementation).unwrap();
        let a = load_architecture(&a_text).unwrap();
        let s = load_implementation(&s_text).unwrap();
        prop_assert_eq!(a.to_canonical_json(), st.architecture.to_canonical_json());
        prop_assert_eq!(s.to_canonical_json(), st.implementation.to_canonical_json());

        let again = load_architecture(&a.to_canonical_json()).unwrap();
        prop_assert_eq!(again.to_canonical_json(), a.to_canonical_json());
    }
}
