//! Attack datasets: line-delimited JSON records turned into validated
//! attack targets.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::syntax::CodeSnippet;
use crate::victim::{VictimError, VictimHandle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    CloneDetection,
    VulnerabilityDetection,
    CodeSummarization,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [
        TaskKind::CloneDetection,
        TaskKind::VulnerabilityDetection,
        TaskKind::CodeSummarization,
    ];

    /// Classification tasks judged by label flips.
    pub fn is_understanding(self) -> bool {
        !matches!(self, TaskKind::CodeSummarization)
    }

    pub fn is_pairwise(self) -> bool {
        matches!(self, TaskKind::CloneDetection)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::CloneDetection => "clone-detection",
            TaskKind::VulnerabilityDetection => "vulnerability-detection",
            TaskKind::CodeSummarization => "code-summarization",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "clone" | "clone-detection" | "cd" => Ok(TaskKind::CloneDetection),
            "vulnerability" | "vulnerability-detection" | "vd" => {
                Ok(TaskKind::VulnerabilityDetection)
            }
            "summarization" | "code-summarization" | "cs" => Ok(TaskKind::CodeSummarization),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    Label(u8),
    Summary(Vec<String>),
}

impl Truth {
    pub fn label(&self) -> Option<u8> {
        match self {
            Truth::Label(l) => Some(*l),
            Truth::Summary(_) => None,
        }
    }

    pub fn summary(&self) -> Option<&[String]> {
        match self {
            Truth::Summary(s) => Some(s),
            Truth::Label(_) => None,
        }
    }
}

/// One attack instance. Only `code` is ever perturbed; `paired_code` is the
/// clone partner and stays fixed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackTarget {
    pub id: String,
    pub task: TaskKind,
    pub code: String,
    pub paired_code: Option<String>,
    pub truth: Truth,
    snippet: CodeSnippet,
}

impl AttackTarget {
    pub fn new(
        id: impl Into<String>,
        task: TaskKind,
        code: impl Into<String>,
        paired_code: Option<String>,
        truth: Truth,
    ) -> Result<Self, RecordError> {
        let id = id.into();
        let code = code.into();
        match (task.is_pairwise(), &paired_code) {
            (true, None) => return Err(RecordError::MissingField("code2")),
            (false, Some(_)) => return Err(RecordError::UnexpectedField("code2")),
            _ => {}
        }
        match (&truth, task.is_understanding()) {
            (Truth::Label(l), true) if *l <= 1 => {}
            (Truth::Label(l), true) => return Err(RecordError::BadLabel(i64::from(*l))),
            (Truth::Summary(_), false) => {}
            (Truth::Label(_), false) => return Err(RecordError::MissingField("summary")),
            (Truth::Summary(_), true) => return Err(RecordError::MissingField("label")),
        }
        let snippet = CodeSnippet::parse(&code).map_err(|e| RecordError::Parse(e.to_string()))?;
        Ok(AttackTarget {
            id,
            task,
            code,
            paired_code,
            truth,
            snippet,
        })
    }

    pub fn snippet(&self) -> &CodeSnippet {
        &self.snippet
    }

    /// Same instance with a different ground truth.
    pub fn with_truth(&self, truth: Truth) -> Result<Self, RecordError> {
        AttackTarget::new(
            self.id.clone(),
            self.task,
            self.code.clone(),
            self.paired_code.clone(),
            truth,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` not allowed for this task")]
    UnexpectedField(&'static str),
    #[error("field `{0}` has the wrong type")]
    WrongType(&'static str),
    #[error("records must carry exactly one of `label` and `summary`")]
    AmbiguousTruth,
    #[error("label {0} is not 0 or 1")]
    BadLabel(i64),
    #[error("code does not parse: {0}")]
    Parse(String),
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedRecord {
    /// 1-based line number.
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

impl fmt::Display for SkippedRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} (id {id}): {}", self.line, self.reason),
            None => write!(f, "line {}: {}", self.line, self.reason),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub targets: Vec<AttackTarget>,
    pub skipped: Vec<SkippedRecord>,
}

impl Dataset {
    pub fn line_count(&self) -> usize {
        self.targets.len() + self.skipped.len()
    }

    /// Every renameable identifier across the corpus, first-seen order.
    pub fn vocabulary(&self) -> Vec<String> {
        harvest_vocabulary(&self.targets)
    }
}

pub fn harvest_vocabulary(targets: &[AttackTarget]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut vocab = Vec::new();
    for target in targets {
        for name in target.snippet().identifier_names() {
            if seen.insert(name.to_owned()) {
                vocab.push(name.to_owned());
            }
        }
        // the clone partner's names are part of the corpus vocabulary too
        if let Some(paired) = &target.paired_code {
            if let Ok(snippet) = CodeSnippet::parse(paired) {
                for name in snippet.identifier_names() {
                    if seen.insert(name.to_owned()) {
                        vocab.push(name.to_owned());
                    }
                }
            }
        }
    }
    vocab
}

pub fn load_dataset(path: impl AsRef<Path>, task: TaskKind) -> Result<Dataset, LoadError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_dataset(&text, task))
}

/// Parses dataset text. Blank lines count as skipped records so that
/// `targets + skipped` always equals the line count.
pub fn parse_dataset(text: &str, task: TaskKind) -> Dataset {
    let mut targets = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in text.lines().enumerate() {
        match parse_record(line, task) {
            Ok(target) => targets.push(target),
            Err((id, err)) => skipped.push(SkippedRecord {
                line: i + 1,
                id,
                reason: err.to_string(),
            }),
        }
    }
    Dataset { targets, skipped }
}

fn parse_record(line: &str, task: TaskKind) -> Result<AttackTarget, (Option<String>, RecordError)> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| (None, RecordError::Json(e.to_string())))?;
    let obj = value
        .as_object()
        .ok_or((None, RecordError::Json("record is not an object".into())))?;
    let id = match obj.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(_) => return Err((None, RecordError::WrongType("id"))),
        None => return Err((None, RecordError::MissingField("id"))),
    };
    let fail = |err| (Some(id.clone()), err);
    let code = match obj.get("code") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(fail(RecordError::WrongType("code"))),
        None => return Err(fail(RecordError::MissingField("code"))),
    };
    let paired = match obj.get("code2") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Null) | None => None,
        Some(_) => return Err(fail(RecordError::WrongType("code2"))),
    };
    let truth = match (obj.get("label"), obj.get("summary")) {
        (Some(label), None) => {
            let l = label
                .as_i64()
                .ok_or_else(|| fail(RecordError::WrongType("label")))?;
            if !(0..=1).contains(&l) {
                return Err(fail(RecordError::BadLabel(l)));
            }
            Truth::Label(l as u8)
        }
        (None, Some(summary)) => {
            let s = summary
                .as_str()
                .ok_or_else(|| fail(RecordError::WrongType("summary")))?;
            Truth::Summary(s.split_whitespace().map(str::to_owned).collect())
        }
        (Some(_), Some(_)) => return Err(fail(RecordError::AmbiguousTruth)),
        (None, None) => {
            let field = if task.is_understanding() { "label" } else { "summary" };
            return Err(fail(RecordError::MissingField(field)));
        }
    };
    AttackTarget::new(id.clone(), task, code, paired, truth).map_err(fail)
}

/// Keeps targets worth attacking: at least one renameable identifier and,
/// for classification tasks, a correct clean prediction. The queries spent
/// here land on `victim`, which callers keep separate from attack handles.
pub fn filter_attackable(
    targets: &[AttackTarget],
    victim: &VictimHandle,
) -> Result<Vec<AttackTarget>, VictimError> {
    let mut kept = Vec::new();
    for target in targets {
        if target.snippet().identifiers().is_empty() {
            continue;
        }
        if target.task.is_understanding() {
            let response = victim.score(&target.code, target.paired_code.as_deref())?;
            if crate::victim::is_success(target, &response) {
                continue;
            }
        }
        kept.push(target.clone());
    }
    Ok(kept)
}

/// Seeded sample of at most `limit` targets, kept in file order.
pub fn sample_targets(targets: &[AttackTarget], limit: usize, seed: u64) -> Vec<AttackTarget> {
    if limit >= targets.len() {
        return targets.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = (0..targets.len()).collect();
    picked.shuffle(&mut rng);
    picked.truncate(limit);
    picked.sort_unstable();
    picked.into_iter().map(|i| targets[i].clone()).collect()
}
