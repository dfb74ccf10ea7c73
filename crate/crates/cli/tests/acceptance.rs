//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use archmend_core::conformance::{check, ViolationKind};
use archmend_core::diagnosis::{detect_patterns, CauseKind, DiagnosisConfig, FailurePattern};
use archmend_core::erosion::{generate, random_system, write_bundle, GenConfig, SystemShape};
use archmend_core::fixtures;
use archmend_core::knowledge::{EventKind, KbSnapshot, KnowledgeEvent, Outcome, Priors};
use archmend_core::model::SystemState;
use archmend_core::planner::{
    plan_beam, plan_exhaustive, plan_greedy, replay_plan, PlanScope, SearchConfig,
};
use archmend_core::repair::{applicable_actions, CostConfig, RepairAction, Scope, Verb};
use archmend_core::rng::SplitMix64;
use archmend_core::session::{SessionConfig, SessionTree, ROOT};

/// Scores are sums of small integers and must match exactly.
const SCORE_TOLERANCE: f64 = 0.0;
const ORACLE_SEEDS: u64 = 500;
const ORACLE_BUDGET: Duration = Duration::from_secs(5);
const BEAM_ORACLE_INSTANCES: usize = 100;
const BEAM_ORACLE_MAX_BRANCHING: usize = 20;
const RECOVERY_CASES: u64 = 100;
const RECOVERY_BEAM_TARGET: f64 = 0.90;
const RECOVERY_BUDGET: Duration = Duration::from_secs(60);
const WALKS: u64 = 1000;
const WALK_STEPS: usize = 12;
const SYSTEM: &str = "sigma";

type Outcome8 = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn same_score(a: f64, b: f64) -> bool {
    (a - b).abs() <= SCORE_TOLERANCE
}

fn checker_matches_oracle() -> Outcome8 {
    let started = Instant::now();
    let shape = SystemShape::default();
    let mut total = 0;
    for seed in 0..ORACLE_SEEDS {
        let st = random_system(seed, shape);
        let deps = st.implementation.dependencies.len();
        ensure!(
            st.architecture.modules.len() <= 6 && st.implementation.entities.len() <= 30 && deps <= 60,
            "seed {seed} exceeds the instance bounds"
        );
        let got: BTreeSet<String> = check(&st.architecture, &st.implementation)
            .map_err(|e| format!("seed {seed}: {e}"))?
            .ids()
            .map(str::to_string)
            .collect();
        let want = common::reference_violation_ids(&st);
        ensure!(got == want, "seed {seed}: checker {got:?} vs oracle {want:?}");
        total += got.len();
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < ORACLE_BUDGET, "took {elapsed:?}");
    Ok(format!("{ORACLE_SEEDS} instances, {total} violations, {elapsed:.2?}"))
}

fn pattern_of(st: &SystemState, kind: CauseKind) -> Option<FailurePattern> {
    let vs = check(&st.architecture, &st.implementation).ok()?;
    detect_patterns(&vs, &st.architecture, &st.implementation, &DiagnosisConfig::default())
        .into_iter()
        .find(|p| p.cause_kind == kind)
}

/// Consolidating plans score exactly the sum of their action costs.
fn cost_of(actions: &[RepairAction]) -> f64 {
    let costs = CostConfig::default();
    actions.iter().map(|a| costs.cost(a.verb())).sum()
}

fn fixtures_are_exact() -> Outcome8 {
    let cfg = SearchConfig::default();

    let f1 = fixtures::f1();
    ensure!(check(&f1.architecture, &f1.implementation).unwrap().is_empty(), "F1 not conformant");

    let f2 = fixtures::f2();
    let vs = check(&f2.architecture, &f2.implementation).unwrap();
    ensure!(
        vs.len() == 1 && vs.count(ViolationKind::LayerViolation) == 1,
        "F2 violations: {:?}",
        vs.ids().collect::<Vec<_>>()
    );

    for (name, st, kind, covered, action) in [
        ("F3", fixtures::f3(), CauseKind::MisplacedEntity, 2, RepairAction::move_entity("data.Cache", "app")),
        ("F4", fixtures::f4(), CauseKind::MissingAllowRule, 3, RepairAction::add_allow("a", "b")),
    ] {
        let pattern = pattern_of(&st, kind).ok_or(format!("{name}: no {} pattern", kind.as_str()))?;
        ensure!(pattern.covered.len() == covered, "{name}: pattern covers {:?}", pattern.covered);
        let expected = cost_of(std::slice::from_ref(&action));
        let replay = replay_plan(&st, std::slice::from_ref(&action), &cfg).map_err(|e| e.to_string())?;
        ensure!(replay.violations.is_empty(), "{name}: {} leaves violations", action.id());
        ensure!(same_score(replay.score, expected), "{name}: replay score {}", replay.score);
        let plans = plan_beam(&st, PlanScope::Cause(&pattern), &cfg, None).map_err(|e| e.to_string())?;
        let top = &plans[0];
        ensure!(top.action_ids() == [action.id()], "{name}: planner chose {:?}", top.action_ids());
        ensure!(top.consolidating && same_score(top.final_score, expected), "{name}: top {}", top.final_score);
    }
    Ok("F1 0, F2 1 layer_violation, F3 score 3, F4 score 2".into())
}

fn degradation_path() -> Outcome8 {
    let f5 = fixtures::f5();
    let wide = SearchConfig::with_limits(2, 2);
    let greedy = plan_greedy(&f5, PlanScope::All, &SearchConfig::default()).map_err(|e| e.to_string())?;
    ensure!(
        greedy.actions.len() == 1 && greedy.actions[0].verb() == Verb::DeleteDependency,
        "greedy chose {:?}",
        greedy.action_ids()
    );
    ensure!(same_score(greedy.final_score, 6.0), "greedy score {}", greedy.final_score);

    let beam = plan_beam(&f5, PlanScope::All, &wide, None).map_err(|e| e.to_string())?;
    let exhaustive = plan_exhaustive(&f5, PlanScope::All, &wide).map_err(|e| e.to_string())?;
    for (name, plan) in [("beam", &beam[0]), ("exhaustive", &exhaustive)] {
        ensure!(plan.consolidating && same_score(plan.final_score, 5.0), "{name} score {}", plan.final_score);
        ensure!(plan.step_scores == [10.0, 13.0, 5.0], "{name} steps {:?}", plan.step_scores);
        let replay = replay_plan(&f5, &plan.actions, &wide).map_err(|e| e.to_string())?;
        ensure!(replay.step_scores == plan.step_scores, "{name} replay {:?}", replay.step_scores);
    }
    ensure!(beam[0].action_ids() == exhaustive.action_ids(), "beam and exhaustive disagree");
    Ok(format!("greedy 6, beam 5, exhaustive 5 via {:?}", exhaustive.action_ids()))
}

fn root_branching(st: &SystemState) -> usize {
    let vs = check(&st.architecture, &st.implementation).unwrap();
    let violations: Vec<_> = vs.iter().cloned().collect();
    applicable_actions(st, Scope::Violations(&violations), &CostConfig::default()).len()
}

fn beam_matches_exhaustive() -> Outcome8 {
    let cfg = SearchConfig {
        max_expansions: 10_000_000,
        ..SearchConfig::with_limits(20, 2)
    };
    let mut instances = 0;
    let mut seed = 0u64;
    while instances < BEAM_ORACLE_INSTANCES {
        let st = random_system(seed, SystemShape::default());
        let b = root_branching(&st);
        if (1..=BEAM_ORACLE_MAX_BRANCHING).contains(&b) {
            let best = plan_exhaustive(&st, PlanScope::All, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
            let beam = plan_beam(&st, PlanScope::All, &cfg, None).map_err(|e| format!("seed {seed}: {e}"))?;
            ensure!(
                same_score(beam[0].final_score, best.final_score),
                "seed {seed}: beam {} vs exhaustive {}",
                beam[0].final_score,
                best.final_score
            );
            instances += 1;
        }
        seed += 1;
    }
    Ok(format!("{instances}/{instances} equal (seeds 0..{seed})"))
}

fn ground_truth_recovery() -> Outcome8 {
    let started = Instant::now();
    let mut beam_hits = 0;
    for seed in 0..RECOVERY_CASES {
        let k = 1 + (seed % 3) as usize;
        let case = generate(&GenConfig {
            k_mutations: k,
            ..GenConfig::with_seed(seed)
        })
        .map_err(|e| format!("seed {seed}: {e}"))?;
        let eroded = case.eroded_state();
        let witness = replay_plan(&eroded, &case.ground_truth, &SearchConfig::default()).map_err(|e| e.to_string())?;
        ensure!(witness.violations.is_empty(), "seed {seed}: ground truth does not consolidate");

        let exhaustive_cfg = SearchConfig {
            max_expansions: u64::MAX,
            ..SearchConfig::with_limits(8, k)
        };
        let best = plan_exhaustive(&eroded, PlanScope::All, &exhaustive_cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure!(best.consolidating, "seed {seed}: exhaustive depth {k} found no consolidating plan");
        ensure!(best.final_score <= witness.score, "seed {seed}: exhaustive worse than ground truth");

        let beam = plan_beam(&eroded, PlanScope::All, &SearchConfig::with_limits(8, k + 1), None)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        if beam[0].consolidating {
            beam_hits += 1;
        }
    }
    let elapsed = started.elapsed();
    let rate = beam_hits as f64 / RECOVERY_CASES as f64;
    ensure!(elapsed < RECOVERY_BUDGET, "took {elapsed:?}");
    ensure!(rate >= RECOVERY_BEAM_TARGET, "beam recovery {:.0}% below target", rate * 100.0);
    Ok(format!(
        "exhaustive {RECOVERY_CASES}/{RECOVERY_CASES}, beam {beam_hits}/{RECOVERY_CASES} ({:.0}%), {elapsed:.2?}",
        rate * 100.0
    ))
}

fn session_walks() -> Outcome8 {
    let costs = CostConfig::default();
    let mut nodes_checked = 0;
    for walk in 0..WALKS {
        let case = generate(&GenConfig {
            k_mutations: 1 + (walk % 3) as usize,
            n_entities: 20,
            ..GenConfig::with_seed(walk % 50)
        })
        .map_err(|e| format!("walk {walk}: {e}"))?;
        let mut tree = SessionTree::create(case.architecture, case.eroded, SYSTEM, SessionConfig::default())
            .map_err(|e| e.to_string())?;
        let root_hash = tree.nodes[0].state_hash.clone();
        let mut rng = SplitMix64::new(walk);
        for _ in 0..WALK_STEPS {
            if tree.nodes.len() > 1 && rng.chance(0.3) {
                let target = tree.nodes[rng.index(tree.nodes.len())].node_id;
                tree.goto(target).map_err(|e| e.to_string())?;
                continue;
            }
            let st = tree.state_at(tree.cursor).map_err(|e| e.to_string())?;
            let vs = tree.violations_at(tree.cursor).map_err(|e| e.to_string())?;
            let violations: Vec<_> = vs.iter().cloned().collect();
            let actions = applicable_actions(&st, Scope::Violations(&violations), &costs);
            if actions.is_empty() {
                tree.goto(ROOT).map_err(|e| e.to_string())?;
                continue;
            }
            let act = &actions[rng.index(actions.len())];
            tree.apply_step(act).map_err(|e| format!("walk {walk}: {} {e}", act.id()))?;
        }
        for node in &tree.nodes {
            let replayed = tree.state_at(node.node_id).map_err(|e| e.to_string())?.hash();
            ensure!(replayed == node.state_hash, "walk {walk}: node {} hash drifted", node.node_id);
            nodes_checked += 1;
        }
        tree.verify_replay().map_err(|e| format!("walk {walk}: {e}"))?;
        tree.goto(ROOT).map_err(|e| e.to_string())?;
        let restored = tree.state_at(tree.cursor).map_err(|e| e.to_string())?.hash();
        ensure!(tree.cursor == ROOT && restored == root_hash, "walk {walk}: root not restored");
    }
    Ok(format!("{WALKS} walks, {nodes_checked} node replays"))
}

/// Smallest confirmation count c at which a cause with prior `p_low`,
/// offered and confirmed c times, outscores a rival with prior `p_high`.
/// With d = 0.3·(p_high - p_low) the blended scores give
/// 0.7·(c+1)/(c+2) > 0.35 + d when the rival is never offered, and
/// 0.7·(c+1)/(c+2) > 0.7/(c+2) + d when it is offered and refuted each time.
fn crossing_point(p_low: f64, p_high: f64, rival_offered: bool) -> u64 {
    let d = 0.3 * (p_high - p_low);
    let bound = if rival_offered { 2.0 * d / (0.7 - d) } else { 2.0 * d / (0.35 - d) };
    bound.floor() as u64 + 1
}

fn f4_class(kind: CauseKind) -> String {
    pattern_of(&fixtures::f4(), kind).expect("F4 pattern").class_key()
}

fn kb_crossing() -> Outcome8 {
    let priors = Priors::default();
    let (low, high) = (CauseKind::MissingAllowRule, CauseKind::MisplacedEntity);
    ensure!(priors.get(low) == 0.5 && priors.get(high) == 0.6, "unexpected prior table");
    let low_key = f4_class(low);
    let high_key = f4_class(high);
    let ts = "2026-01-01T00:00:00.000Z";

    // Only the low-prior cause receives events.
    let expected = crossing_point(0.5, 0.6, false);
    let mut events = Vec::new();
    let mut prev = KbSnapshot::with_priors(priors.clone()).cause_score(&low_key, low, SYSTEM);
    let mut crossed = None;
    for c in 1..=expected + 3 {
        events.push(KnowledgeEvent::cause(EventKind::CauseOffered, ts, SYSTEM, &low_key));
        events.push(KnowledgeEvent::cause(EventKind::CauseConfirmed, ts, SYSTEM, &low_key));
        let kb = KbSnapshot::from_events(priors.clone(), &events);
        let score = kb.cause_score(&low_key, low, SYSTEM);
        ensure!(score > prev, "pure: score did not increase at confirmation {c}");
        prev = score;
        if crossed.is_none() && score > kb.cause_score(&high_key, high, SYSTEM) {
            crossed = Some(c);
        }
    }
    ensure!(crossed == Some(expected), "pure: crossed at {crossed:?}, computed {expected}");

    // Full F4 sessions: both causes offered, the low-prior one confirmed.
    let expected_session = crossing_point(0.5, 0.6, true);
    let mut log: Vec<KnowledgeEvent> = Vec::new();
    let mut prev = 0.0;
    let mut crossed_session = None;
    for c in 0..=expected_session + 3 {
        let kb = KbSnapshot::from_events(priors.clone(), &log);
        let st = fixtures::f4();
        let mut tree = SessionTree::create(st.architecture, st.implementation, SYSTEM, SessionConfig::default())
            .map_err(|e| e.to_string())?;
        let candidates = tree.candidates_at(ROOT, &kb).map_err(|e| e.to_string())?;
        let pick = candidates.iter().find(|x| x.pattern.cause_kind == low).ok_or("no missing_allow_rule cause")?;
        ensure!(c == 0 || pick.confidence > prev, "session: confidence did not increase after {c} confirmations");
        prev = pick.confidence;
        let first = candidates[0].pattern.cause_kind;
        if crossed_session.is_none() && first == low {
            crossed_session = Some(c);
        }
        if c < expected_session {
            ensure!(first == high, "session: ranking flipped early at {c}");
        }
        tree.select_cause(pick.id, &kb).map_err(|e| e.to_string())?;
        tree.apply_step(&RepairAction::add_allow("a", "b")).map_err(|e| e.to_string())?;
        log.extend(tree.finish(Outcome::Consolidated).map_err(|e| e.to_string())?);
    }
    ensure!(
        crossed_session == Some(expected_session),
        "session: crossed at {crossed_session:?}, computed {expected_session}"
    );
    Ok(format!("crossing after {expected} (pure) and {expected_session} (F4 sessions) confirmations"))
}

fn fixture_args(name: &str) -> Vec<String> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name);
    vec![
        "-a".into(),
        dir.join("architecture.json").display().to_string(),
        "-s".into(),
        dir.join("implementation.json").display().to_string(),
    ]
}

fn run_cli(args: &[String], kb: &Path) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_archmend"))
        .args(args)
        .env("ARCHMEND_KB_DIR", kb)
        .output()
        .expect("run archmend");
    let mut bytes = out.status.code().unwrap_or(-1).to_string().into_bytes();
    bytes.extend(out.stdout);
    bytes
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn outputs_are_deterministic() -> Outcome8 {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let kb = tmp.path().join("kb");
    let mut invocations: Vec<Vec<String>> = Vec::new();
    for f in ["f1", "f2", "f3", "f4", "f5"] {
        let models = fixture_args(f);
        let with = |head: &[&str], tail: &[&str]| -> Vec<String> {
            head.iter()
                .map(|s| s.to_string())
                .chain(models.iter().cloned())
                .chain(tail.iter().map(|s| s.to_string()))
                .collect()
        };
        invocations.push(with(&["check"], &["--format", "json"]));
        invocations.push(with(&["diagnose"], &[]));
        for strategy in ["beam", "greedy", "exhaustive"] {
            invocations.push(with(&["plan"], &["--strategy", strategy, "--depth", "2"]));
        }
    }
    invocations.push(vec!["kb".into(), "stats".into()]);
    for args in &invocations {
        ensure!(run_cli(args, &kb) == run_cli(args, &kb), "differs: archmend {}", args.join(" "));
    }

    let mut bundles = 0;
    for seed in 0..20u64 {
        let mut dirs = Vec::new();
        for run in 0..2 {
            let dir = tmp.path().join(format!("gen-{seed}-{run}"));
            let args: Vec<String> = ["gen", "--seed", &seed.to_string(), "--out", &dir.display().to_string()]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let stdout = run_cli(&args, &kb);
            dirs.push((stdout, read_dir_bytes(&dir)));
        }
        ensure!(dirs[0] == dirs[1], "gen --seed {seed} differs");

        let cfg = GenConfig::with_seed(seed);
        let a = serde_json::to_vec(&generate(&cfg).map_err(|e| e.to_string())?).unwrap();
        let b = serde_json::to_vec(&generate(&cfg).map_err(|e| e.to_string())?).unwrap();
        ensure!(a == b, "generate({seed}) differs");
        let lib_dir = tmp.path().join(format!("lib-{seed}"));
        write_bundle(&generate(&cfg).unwrap(), &lib_dir).map_err(|e| e.to_string())?;
        ensure!(read_dir_bytes(&lib_dir) == dirs[0].1, "library and CLI bundles differ for seed {seed}");
        bundles += 1;
    }
    Ok(format!("{} CLI invocations, {bundles} generated cases", invocations.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome8); 8] = [
        ("checker matches brute-force oracle", checker_matches_oracle),
        ("fixture exactness", fixtures_are_exact),
        ("degradation path on F5", degradation_path),
        ("beam equals exhaustive at D=2", beam_matches_exhaustive),
        ("ground-truth recovery", ground_truth_recovery),
        ("session replay and backtracking", session_walks),
        ("knowledge base crossing point", kb_crossing),
        ("deterministic outputs", outputs_are_deterministic),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({secs:.2}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail} ({secs:.2}s)", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
