//! Architecture conformance checking, erosion diagnosis and joint repair
//! planning over (architecture, implementation) pairs.
//!
//! The pipeline runs [`check`] to list violations, [`diagnose`] to group them
//! into ranked cause hypotheses, a planner ([`plan_beam`], [`plan_greedy`],
//! [`plan_exhaustive`]) to search for repair sequences, and a
//! [`SessionTree`] to apply, undo and record them. Recorded outcomes feed the
//! [`KnowledgeBase`], whose scores bias later rankings.

pub mod conformance;
pub mod diagnosis;
pub mod erosion;
pub mod fixtures;
pub mod knowledge;
pub mod model;
pub mod planner;
pub mod repair;
pub mod rng;
pub mod session;

pub use conformance::{check, ConformanceError, Violation, ViolationKind, ViolationSet};
pub use diagnosis::{diagnose, CauseCandidate, CauseKind, DiagnosisConfig, FailurePattern};
pub use erosion::{case_summary, generate, ErosionCase, GenConfig, GenError};
pub use knowledge::{KbError, KbSnapshot, KnowledgeBase, KnowledgeEvent, Outcome};
pub use model::{
    load_architecture, load_implementation, ArchitectureModel, ImplementationModel, ModelError,
    StateHash, SystemState,
};
pub use planner::{
    plan_beam, plan_exhaustive, plan_greedy, rank_plans, replay_plan, score_state, PlanError,
    PlanScope, RepairPlan, SearchConfig, Strategy,
};
pub use repair::{apply_action, applicable_actions, CostConfig, RepairAction, RepairError, Verb};
pub use session::{SessionError, SessionTree};
