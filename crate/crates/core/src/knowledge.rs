//! Knowledge base: an append-only log of engineer decisions and the
//! smoothed statistics derived from it.
//!
//! Every score is a Laplace-smoothed rate `(successes + 1) / (trials + 2)`
//! blended as `0.7 * system + 0.3 * generic`. The system layer only sees
//! events of the system being asked about. The generic layer differs by
//! table:
//!
//! - cause scores pool the events of all *other* systems and fall back to
//!   the prior table when there are none, so a system's own evidence is not
//!   counted twice;
//! - plan-template scores pool every system and fall back to 1/2.
//!
//! Scores are a pure function of the event log and the prior table.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnosis::{cause_kind_of, CauseKind};
use crate::repair::Verb;

pub const SYSTEM_WEIGHT: f64 = 0.7;
pub const GENERIC_WEIGHT: f64 = 0.3;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const PRIORS_FILE: &str = "priors.json";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

/// Class key recorded for plan outcomes of sessions without a selected cause.
pub const UNSCOPED_CLASS: &str = "unscoped";

const BUILTIN_PRIORS: &str = include_str!("../data/priors.json");

#[derive(Debug, Error)]
pub enum KbError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("invalid prior table: {0}")]
    InvalidPriors(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KbError + '_ {
    move |source| KbError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn laplace(successes: u64, trials: u64) -> f64 {
    let trials = trials.max(successes);
    (successes as f64 + 1.0) / (trials as f64 + 2.0)
}

pub fn blend(system: f64, generic: f64) -> f64 {
    SYSTEM_WEIGHT * system + GENERIC_WEIGHT * generic
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    CauseOffered,
    CauseConfirmed,
    PlanOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Consolidated,
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeEvent {
    pub timestamp: String,
    pub system_id: String,
    pub kind: EventKind,
    pub class_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verb_sequence: Option<Vec<Verb>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
}

impl KnowledgeEvent {
    pub fn cause(kind: EventKind, timestamp: &str, system_id: &str, class_key: &str) -> Self {
        Self {
            timestamp: timestamp.to_string(),
            system_id: system_id.to_string(),
            kind,
            class_key: class_key.to_string(),
            verb_sequence: None,
            outcome: None,
        }
    }

    pub fn plan_outcome(
        timestamp: &str,
        system_id: &str,
        class_key: &str,
        verbs: Vec<Verb>,
        outcome: Outcome,
    ) -> Self {
        Self {
            timestamp: timestamp.to_string(),
            system_id: system_id.to_string(),
            kind: EventKind::PlanOutcome,
            class_key: class_key.to_string(),
            verb_sequence: Some(verbs),
            outcome: Some(outcome),
        }
    }

    pub fn validate(&self) -> Result<(), KbError> {
        if self.system_id.is_empty() || self.class_key.is_empty() {
            return Err(KbError::InvalidEvent("system_id and class_key must be non-empty".into()));
        }
        match self.kind {
            EventKind::PlanOutcome => {
                if self.verb_sequence.is_none() || self.outcome.is_none() {
                    return Err(KbError::InvalidEvent(
                        "plan_outcome requires verb_sequence and outcome".into(),
                    ));
                }
            }
            EventKind::CauseOffered | EventKind::CauseConfirmed => {
                if self.verb_sequence.is_some() || self.outcome.is_some() {
                    return Err(KbError::InvalidEvent(format!(
                        "{:?} carries neither verb_sequence nor outcome",
                        self.kind
                    )));
                }
                if cause_kind_of(&self.class_key).is_none() {
                    return Err(KbError::InvalidEvent(format!(
                        "class key {:?} names no cause kind",
                        self.class_key
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Prior confirmation rate per cause kind; unknown kinds default to 1/2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Priors(pub BTreeMap<CauseKind, f64>);

impl Default for Priors {
    fn default() -> Self {
        Priors::parse(BUILTIN_PRIORS).expect("built-in prior table is valid")
    }
}

impl Priors {
    pub fn parse(text: &str) -> Result<Self, KbError> {
        let priors: Priors =
            serde_json::from_str(text).map_err(|e| KbError::InvalidPriors(e.to_string()))?;
        for (kind, p) in &priors.0 {
            if !(*p > 0.0 && *p < 1.0) {
                return Err(KbError::InvalidPriors(format!("{kind}: {p} is outside (0,1)")));
            }
        }
        Ok(priors)
    }

    pub fn get(&self, kind: CauseKind) -> f64 {
        self.0.get(&kind).copied().unwrap_or(0.5)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CauseCounts {
    pub offered: u64,
    pub confirmed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanCounts {
    pub attempts: u64,
    pub successes: u64,
}

type CauseKey = (String, String);
type PlanKey = (String, String, Vec<Verb>);

/// An immutable read view of the knowledge base.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KbSnapshot {
    priors: Priors,
    causes: BTreeMap<CauseKey, CauseCounts>,
    plans: BTreeMap<PlanKey, PlanCounts>,
    events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotDoc {
    priors: Priors,
    events: usize,
    causes: Vec<CauseRow>,
    plans: Vec<PlanRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CauseRow {
    system_id: String,
    class_key: String,
    #[serde(flatten)]
    counts: CauseCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanRow {
    system_id: String,
    class_key: String,
    verb_sequence: Vec<Verb>,
    #[serde(flatten)]
    counts: PlanCounts,
}

impl KbSnapshot {
    pub fn with_priors(priors: Priors) -> Self {
        Self {
            priors,
            ..Self::default()
        }
    }

    pub fn from_events<'a>(priors: Priors, events: impl IntoIterator<Item = &'a KnowledgeEvent>) -> Self {
        let mut snap = Self::with_priors(priors);
        for e in events {
            snap.absorb(e);
        }
        snap
    }

    fn absorb(&mut self, e: &KnowledgeEvent) {
        self.events += 1;
        match e.kind {
            EventKind::CauseOffered | EventKind::CauseConfirmed => {
                let c = self
                    .causes
                    .entry((e.system_id.clone(), e.class_key.clone()))
                    .or_default();
                if e.kind == EventKind::CauseOffered {
                    c.offered += 1;
                } else {
                    c.confirmed += 1;
                }
            }
            EventKind::PlanOutcome => {
                let verbs = e.verb_sequence.clone().unwrap_or_default();
                let p = self
                    .plans
                    .entry((e.system_id.clone(), e.class_key.clone(), verbs))
                    .or_default();
                p.attempts += 1;
                if e.outcome == Some(Outcome::Consolidated) {
                    p.successes += 1;
                }
            }
        }
    }

    pub fn priors(&self) -> &Priors {
        &self.priors
    }

    pub fn event_count(&self) -> usize {
        self.events
    }

    pub fn cause_counts(&self, class_key: &str, system_id: &str) -> CauseCounts {
        self.causes
            .get(&(system_id.to_string(), class_key.to_string()))
            .copied()
            .unwrap_or_default()
    }

    fn other_cause_counts(&self, class_key: &str, system_id: &str) -> CauseCounts {
        self.causes
            .iter()
            .filter(|((sys, class), _)| sys != system_id && class == class_key)
            .fold(CauseCounts::default(), |acc, (_, c)| CauseCounts {
                offered: acc.offered + c.offered,
                confirmed: acc.confirmed + c.confirmed,
            })
    }

    pub fn cause_system_score(&self, class_key: &str, system_id: &str) -> f64 {
        let c = self.cause_counts(class_key, system_id);
        laplace(c.confirmed, c.offered)
    }

    pub fn cause_generic_score(&self, class_key: &str, cause_kind: CauseKind, system_id: &str) -> f64 {
        let c = self.other_cause_counts(class_key, system_id);
        if c.offered == 0 && c.confirmed == 0 {
            self.priors.get(cause_kind)
        } else {
            laplace(c.confirmed, c.offered)
        }
    }

    pub fn cause_score(&self, class_key: &str, cause_kind: CauseKind, system_id: &str) -> f64 {
        blend(
            self.cause_system_score(class_key, system_id),
            self.cause_generic_score(class_key, cause_kind, system_id),
        )
    }

    pub fn plan_counts(&self, class_key: &str, verbs: &[Verb], system_id: &str) -> PlanCounts {
        self.plans
            .get(&(system_id.to_string(), class_key.to_string(), verbs.to_vec()))
            .copied()
            .unwrap_or_default()
    }

    pub fn plan_system_score(&self, class_key: &str, verbs: &[Verb], system_id: &str) -> f64 {
        let p = self.plan_counts(class_key, verbs, system_id);
        laplace(p.successes, p.attempts)
    }

    pub fn plan_generic_score(&self, class_key: &str, verbs: &[Verb]) -> f64 {
        let pooled = self
            .plans
            .iter()
            .filter(|((_, class, v), _)| class == class_key && v.as_slice() == verbs)
            .fold(PlanCounts::default(), |acc, (_, p)| PlanCounts {
                attempts: acc.attempts + p.attempts,
                successes: acc.successes + p.successes,
            });
        if pooled.attempts == 0 {
            0.5
        } else {
            laplace(pooled.successes, pooled.attempts)
        }
    }

    pub fn plan_score(&self, class_key: &str, verbs: &[Verb], system_id: &str) -> f64 {
        blend(
            self.plan_system_score(class_key, verbs, system_id),
            self.plan_generic_score(class_key, verbs),
        )
    }

    pub fn to_json(&self) -> String {
        let doc = SnapshotDoc {
            priors: self.priors.clone(),
            events: self.events,
            causes: self
                .causes
                .iter()
                .map(|((system_id, class_key), counts)| CauseRow {
                    system_id: system_id.clone(),
                    class_key: class_key.clone(),
                    counts: *counts,
                })
                .collect(),
            plans: self
                .plans
                .iter()
                .map(|((system_id, class_key, verbs), counts)| PlanRow {
                    system_id: system_id.clone(),
                    class_key: class_key.clone(),
                    verb_sequence: verbs.clone(),
                    counts: *counts,
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("snapshot serializes")
    }

    pub fn load(text: &str) -> Result<Self, KbError> {
        let doc: SnapshotDoc =
            serde_json::from_str(text).map_err(|e| KbError::CorruptSnapshot(e.to_string()))?;
        Ok(Self {
            priors: doc.priors,
            events: doc.events,
            causes: doc
                .causes
                .into_iter()
                .map(|r| ((r.system_id, r.class_key), r.counts))
                .collect(),
            plans: doc
                .plans
                .into_iter()
                .map(|r| ((r.system_id, r.class_key, r.verb_sequence), r.counts))
                .collect(),
        })
    }

    /// Score tables for reporting.
    pub fn stats(&self) -> KbStats {
        let causes = self
            .causes
            .iter()
            .map(|((system_id, class_key), c)| {
                let kind = cause_kind_of(class_key).unwrap_or(CauseKind::IsolatedViolation);
                CauseStat {
                    system_id: system_id.clone(),
                    class_key: class_key.clone(),
                    cause_kind: kind,
                    offered: c.offered,
                    confirmed: c.confirmed,
                    system_score: self.cause_system_score(class_key, system_id),
                    generic_score: self.cause_generic_score(class_key, kind, system_id),
                    score: self.cause_score(class_key, kind, system_id),
                }
            })
            .collect();
        let plans = self
            .plans
            .iter()
            .map(|((system_id, class_key, verbs), p)| PlanStat {
                system_id: system_id.clone(),
                class_key: class_key.clone(),
                verb_sequence: verbs.clone(),
                attempts: p.attempts,
                successes: p.successes,
                system_score: self.plan_system_score(class_key, verbs, system_id),
                generic_score: self.plan_generic_score(class_key, verbs),
                score: self.plan_score(class_key, verbs, system_id),
            })
            .collect();
        KbStats {
            events: self.events,
            priors: self.priors.clone(),
            causes,
            plans,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseStat {
    pub system_id: String,
    pub class_key: String,
    pub cause_kind: CauseKind,
    pub offered: u64,
    pub confirmed: u64,
    pub system_score: f64,
    pub generic_score: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStat {
    pub system_id: String,
    pub class_key: String,
    pub verb_sequence: Vec<Verb>,
    pub attempts: u64,
    pub successes: u64,
    pub system_score: f64,
    pub generic_score: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbStats {
    pub events: usize,
    pub priors: Priors,
    pub causes: Vec<CauseStat>,
    pub plans: Vec<PlanStat>,
}

/// The store. Backed by a directory (`events.jsonl`, optional `priors.json`,
/// derived `snapshot.json`) or held purely in memory.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    dir: Option<PathBuf>,
    events: Vec<KnowledgeEvent>,
    current: KbSnapshot,
}

impl Default for KnowledgeBase {
    fn default() -> Self {
        Self::in_memory(Priors::default())
    }
}

impl KnowledgeBase {
    pub fn in_memory(priors: Priors) -> Self {
        Self {
            dir: None,
            events: Vec::new(),
            current: KbSnapshot::with_priors(priors),
        }
    }

    /// Opens (creating if needed) a store directory and replays its log.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, KbError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let priors_path = dir.join(PRIORS_FILE);
        let priors = if priors_path.exists() {
            Priors::parse(&fs::read_to_string(&priors_path).map_err(io_err(&priors_path))?)?
        } else {
            Priors::default()
        };
        let log_path = dir.join(EVENTS_FILE);
        let events = if log_path.exists() {
            read_log(&log_path)?
        } else {
            Vec::new()
        };
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            current: KbSnapshot::from_events(priors, &events),
            events,
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn events(&self) -> &[KnowledgeEvent] {
        &self.events
    }

    /// Appends events; on disk they are written and synced before the
    /// in-memory view changes.
    pub fn record(&mut self, events: &[KnowledgeEvent]) -> Result<(), KbError> {
        for e in events {
            e.validate()?;
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(EVENTS_FILE);
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(io_err(&path))?;
            let mut buf = String::new();
            for e in events {
                buf.push_str(&serde_json::to_string(e).expect("event serializes"));
                buf.push('\n');
            }
            file.write_all(buf.as_bytes()).map_err(io_err(&path))?;
            file.sync_data().map_err(io_err(&path))?;
        }
        for e in events {
            self.current.absorb(e);
            self.events.push(e.clone());
        }
        Ok(())
    }

    pub fn snapshot(&self) -> KbSnapshot {
        self.current.clone()
    }

    /// Writes the derived snapshot next to the log.
    pub fn write_snapshot(&self) -> Result<Option<PathBuf>, KbError> {
        let Some(dir) = &self.dir else {
            return Ok(None);
        };
        let path = dir.join(SNAPSHOT_FILE);
        fs::write(&path, self.current.to_json()).map_err(io_err(&path))?;
        Ok(Some(path))
    }
}

fn read_log(path: &Path) -> Result<Vec<KnowledgeEvent>, KbError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| KbError::CorruptLog {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let event: KnowledgeEvent = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        event.validate().map_err(|e| corrupt(e.to_string()))?;
        events.push(event);
    }
    Ok(events)
}
