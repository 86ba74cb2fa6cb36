//! Attack engines. Every engine talks to the model only through a
//! [`VictimHandle`] and records one trace event per query.

mod baselines;
mod beam;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{CandidateError, CandidateSource};
use crate::corpus::{AttackTarget, TaskKind};
use crate::metrics::{bleu4, bleu4_smoothed};
use crate::syntax::{CodeSnippet, ReplacementMap, StatementKind};
use crate::transforms::TransformError;
use crate::victim::{fnv1a, is_success, VictimError, VictimHandle, VictimResponse};

pub use baselines::{
    attack_accent, attack_alert, attack_mhm, attack_styletransfer, attack_wir_random, mhm_accept_probability,
    AccentConfig, AlertConfig, MhmConfig, StyleTransferConfig, WirConfig,
};
pub use beam::{attack_beam, BeamConfig};

/// Candidates considered per identifier, per step.
pub const DEFAULT_K_CAND: usize = 30;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Victim(#[from] VictimError),
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    Mhm,
    Accent,
    WirRandom,
    Alert,
    StyleTransfer,
    Beam,
}

impl Engine {
    pub const ALL: [Engine; 6] = [
        Engine::Mhm,
        Engine::Accent,
        Engine::WirRandom,
        Engine::Alert,
        Engine::StyleTransfer,
        Engine::Beam,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Mhm => "mhm",
            Engine::Accent => "accent",
            Engine::WirRandom => "wir-random",
            Engine::Alert => "alert",
            Engine::StyleTransfer => "style-transfer",
            Engine::Beam => "beam",
        }
    }

    /// Whether outcomes are pure identifier renamings.
    pub fn renames(self) -> bool {
        self != Engine::StyleTransfer
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase().replace('_', "-");
        match lower.as_str() {
            "mhm" => Ok(Engine::Mhm),
            "accent" => Ok(Engine::Accent),
            "wir-random" | "wir" => Ok(Engine::WirRandom),
            "alert" => Ok(Engine::Alert),
            "style-transfer" | "styletransfer" | "style" => Ok(Engine::StyleTransfer),
            "beam" | "beam-attack" | "beamattack" => Ok(Engine::Beam),
            _ => Err(format!("unknown engine `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub iteration: usize,
    /// Original name of the identifier being perturbed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identifier: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
    pub objective: f64,
    pub success: bool,
    pub accepted: bool,
}

/// One event per victim query, in query order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackTrace {
    pub events: Vec<TraceEvent>,
}

impl AttackTrace {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// `(identifier, candidate)` of every event, the order candidates were
    /// visited in.
    pub fn visits(&self) -> Vec<(Option<&str>, Option<&str>)> {
        self.events
            .iter()
            .map(|e| (e.identifier.as_deref(), e.candidate.as_deref()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub success: bool,
    /// The adversarial example on success, otherwise the best code found.
    pub adversarial_code: String,
    pub replacements: ReplacementMap,
    pub queries: u64,
    pub wall_time: Duration,
    pub victim_time: Duration,
    pub iterations: usize,
    /// Objective of `adversarial_code`; the clean objective when nothing
    /// was scored.
    pub objective: Option<f64>,
    pub trace: AttackTrace,
}

/// Value the attacks minimise. Classification: probability of the true
/// label. Summarization: smoothed BLEU-4 against the reference, pinned to 0
/// exactly when the unsmoothed score is 0.
pub fn objective(target: &AttackTarget, response: &VictimResponse) -> f64 {
    match (response, target.truth.label(), target.truth.summary()) {
        (VictimResponse::Classification { probs, .. }, Some(label), _) => probs[label as usize],
        (VictimResponse::Summary(summary), _, Some(reference)) => {
            if bleu4(summary, reference) == 0.0 {
                0.0
            } else {
                bleu4_smoothed(summary, reference)
            }
        }
        _ => f64::NAN,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub success: bool,
    /// Index of the trace event this query produced.
    pub event: usize,
}

/// Bookkeeping for one attack run: scoring, tracing, timing.
pub struct AttackRun<'a> {
    target: &'a AttackTarget,
    victim: &'a VictimHandle,
    trace: AttackTrace,
    iteration: usize,
    start: Instant,
    queries_before: u64,
    victim_time_before: Duration,
}

impl<'a> AttackRun<'a> {
    pub fn new(target: &'a AttackTarget, victim: &'a VictimHandle) -> Self {
        AttackRun {
            target,
            victim,
            trace: AttackTrace::default(),
            iteration: 0,
            start: Instant::now(),
            queries_before: victim.query_count(),
            victim_time_before: victim.time_spent(),
        }
    }

    pub fn target(&self) -> &'a AttackTarget {
        self.target
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn next_iteration(&mut self) {
        self.iteration += 1;
    }

    pub fn trace(&self) -> &AttackTrace {
        &self.trace
    }

    /// Scores `code` with one query.
    pub fn evaluate(
        &mut self,
        code: &str,
        identifier: Option<&str>,
        candidate: Option<&str>,
    ) -> Result<Evaluation, AttackError> {
        let response = self.victim.score(code, self.target.paired_code.as_deref())?;
        let success = is_success(self.target, &response);
        let objective = objective(self.target, &response);
        self.trace.events.push(TraceEvent {
            iteration: self.iteration,
            identifier: identifier.map(str::to_owned),
            candidate: candidate.map(str::to_owned),
            objective,
            success,
            accepted: false,
        });
        Ok(Evaluation {
            objective,
            success,
            event: self.trace.events.len() - 1,
        })
    }

    pub fn accept(&mut self, event: usize) {
        self.trace.events[event].accepted = true;
    }

    pub fn finish(
        self,
        success: bool,
        code: &str,
        replacements: ReplacementMap,
        objective: Option<f64>,
    ) -> AttackOutcome {
        let queries = self.victim.query_count() - self.queries_before;
        debug_assert_eq!(queries, self.trace.len() as u64);
        AttackOutcome {
            success,
            adversarial_code: code.to_owned(),
            replacements,
            queries,
            wall_time: self.start.elapsed(),
            victim_time: self.victim.time_spent().saturating_sub(self.victim_time_before),
            iterations: self.iteration,
            objective,
            trace: self.trace,
        }
    }
}

/// A snippet together with the renames that produced it from the original.
#[derive(Debug, Clone, PartialEq)]
pub struct Renamed {
    pub snippet: CodeSnippet,
    pub map: ReplacementMap,
}

impl Renamed {
    pub fn original(snippet: &CodeSnippet) -> Self {
        Renamed {
            snippet: snippet.clone(),
            map: ReplacementMap::new(),
        }
    }

    /// Current name of an original identifier.
    pub fn current<'s>(&'s self, original: &'s str) -> &'s str {
        self.map.current(original)
    }

    pub fn rename(&self, original: &str, new: &str) -> Option<Renamed> {
        let snippet = self.snippet.rename(self.map.current(original), new).ok()?;
        let mut map = self.map.clone();
        map.record(original, new);
        Some(Renamed { snippet, map })
    }
}

/// Best single substitution for one identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub state: Renamed,
    pub identifier: String,
    pub candidate: String,
    pub evaluation: Evaluation,
}

/// Scores every candidate for `identifier` (an original name) in `state`,
/// one query each, and returns the one with the lowest objective. Stops at
/// the first candidate that flips the decision. `None` when no candidate
/// is available; no query is spent then.
pub fn perturb_step(
    run: &mut AttackRun<'_>,
    state: &Renamed,
    identifier: &str,
    provider: &CandidateSource<'_>,
    k: usize,
    seed: u64,
) -> Result<Option<Perturbation>, AttackError> {
    let current = state.current(identifier);
    if !state.snippet.contains_identifier(current) {
        return Ok(None);
    }
    let list = provider.candidates(&state.snippet, current, k, seed)?;
    let mut best: Option<Perturbation> = None;
    for candidate in list.candidates {
        let Some(next) = state.rename(identifier, &candidate) else {
            continue;
        };
        let evaluation = run.evaluate(next.snippet.source(), Some(identifier), Some(&candidate))?;
        let better = best
            .as_ref()
            .is_none_or(|b| evaluation.objective < b.evaluation.objective);
        if better || evaluation.success {
            best = Some(Perturbation {
                state: next,
                identifier: identifier.to_owned(),
                candidate,
                evaluation,
            });
        }
        if evaluation.success {
            break;
        }
    }
    Ok(best)
}

/// Deterministic per-step seed.
pub(crate) fn derive_seed(seed: u64, step: usize, name: &str) -> u64 {
    let mut bytes = seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(&(step as u64).to_le_bytes());
    bytes.extend_from_slice(name.as_bytes());
    fnv1a(&bytes)
}

// ---------------------------------------------------------------------------
// Statement priorities

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PriorityEntry>", into = "Vec<PriorityEntry>")]
pub struct PriorityTable {
    entries: Vec<(StatementKind, f64)>,
}

/// Serialized form of one priority table row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorityEntry {
    pub kind: StatementKind,
    pub weight: f64,
}

impl TryFrom<Vec<PriorityEntry>> for PriorityTable {
    type Error = AttackError;

    fn try_from(rows: Vec<PriorityEntry>) -> Result<Self, AttackError> {
        PriorityTable::new(rows.into_iter().map(|r| (r.kind, r.weight)).collect())
    }
}

impl From<PriorityTable> for Vec<PriorityEntry> {
    fn from(table: PriorityTable) -> Self {
        table
            .entries
            .into_iter()
            .map(|(kind, weight)| PriorityEntry { kind, weight })
            .collect()
    }
}

/// Single-identifier-budget success rates of random substitution restricted
/// to each statement kind, per task, in [`StatementKind::ALL`] order without
/// `Others`.
const CONTEXT_ASR: [(TaskKind, [f64; 6]); 3] = [
    (TaskKind::CloneDetection, [17.90, 11.26, 23.37, 13.39, 23.89, 26.05]),
    (TaskKind::VulnerabilityDetection, [19.81, 10.60, 21.07, 7.37, 15.24, 18.40]),
    (TaskKind::CodeSummarization, [88.81, 29.77, 32.40, 27.12, 30.77, 35.14]),
];

const CLONE_ORDER: [StatementKind; 7] = [
    StatementKind::For,
    StatementKind::If,
    StatementKind::Try,
    StatementKind::Method,
    StatementKind::Throw,
    StatementKind::Return,
    StatementKind::Others,
];

impl PriorityTable {
    pub fn new(entries: Vec<(StatementKind, f64)>) -> Result<Self, AttackError> {
        if entries.is_empty() {
            return Err(AttackError::Config("priority table is empty".into()));
        }
        for (i, (kind, weight)) in entries.iter().enumerate() {
            if !(*weight > 0.0 && *weight <= 1.0) {
                return Err(AttackError::Config(format!("weight of {kind} must be in (0, 1], got {weight}")));
            }
            if entries[..i].iter().any(|(k, _)| k == kind) {
                return Err(AttackError::Config(format!("{kind} listed twice")));
            }
        }
        if entries[0].1 != 1.0 {
            return Err(AttackError::Config("the first statement kind must have weight 1".into()));
        }
        Ok(PriorityTable { entries })
    }

    /// Order by descending context success rate (clone detection uses its
    /// fixed published order), weights proportional to that rate, `Others`
    /// last with the smallest weight.
    pub fn default_for(task: TaskKind) -> Self {
        let asr = CONTEXT_ASR.iter().find(|(t, _)| *t == task).expect("every task tabulated").1;
        let rate = |kind: StatementKind| asr[kind as usize];
        let max = asr.iter().copied().fold(f64::MIN, f64::max);
        let min = asr.iter().copied().fold(f64::MAX, f64::min);
        let order: Vec<StatementKind> = if task == TaskKind::CloneDetection {
            CLONE_ORDER.to_vec()
        } else {
            let mut kinds: Vec<StatementKind> = StatementKind::ALL
                .into_iter()
                .filter(|k| *k != StatementKind::Others)
                .collect();
            kinds.sort_by(|a, b| rate(*b).total_cmp(&rate(*a)));
            kinds.push(StatementKind::Others);
            kinds
        };
        let entries = order
            .into_iter()
            .map(|k| {
                let w = if k == StatementKind::Others { min / max } else { rate(k) / max };
                (k, w)
            })
            .collect();
        PriorityTable { entries }
    }

    /// Only `kind`, weight 1.
    pub fn single(kind: StatementKind) -> Self {
        PriorityTable {
            entries: vec![(kind, 1.0)],
        }
    }

    pub fn entries(&self) -> &[(StatementKind, f64)] {
        &self.entries
    }

    pub fn order(&self) -> Vec<StatementKind> {
        self.entries.iter().map(|(k, _)| *k).collect()
    }

    pub fn weight(&self, kind: StatementKind) -> Option<f64> {
        self.entries.iter().find(|(k, _)| *k == kind).map(|(_, w)| *w)
    }
}

/// Identifiers ranked by how much renaming each to a placeholder lowers the
/// objective (one query each), largest drop first.
pub(crate) fn importance_ranking(
    run: &mut AttackRun<'_>,
    original: &CodeSnippet,
    base: f64,
) -> Result<Vec<String>, AttackError> {
    let mut scored = Vec::new();
    for (position, id) in original.identifiers().iter().enumerate() {
        let placeholder = (0..)
            .map(|i| if i == 0 { "UNK".to_owned() } else { format!("UNK{i}") })
            .find(|n| original.is_fresh_name(n))
            .expect("unbounded suffixes");
        let masked = original.rename(&id.name, &placeholder).expect("fresh placeholder");
        let eval = run.evaluate(masked.source(), Some(&id.name), Some(&placeholder))?;
        scored.push((base - eval.objective, position, id.name.clone()));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().map(|(_, _, name)| name).collect())
}
