//! The model under attack, seen only through a query-counted scoring
//! interface.
//!
//! Two backends exist: a deterministic in-process surrogate per task and an
//! HTTP client for an external model server. Every call to
//! [`VictimHandle::score`] counts as one query, failed remote calls
//! included.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AttackTarget, TaskKind, Truth};
use crate::metrics::bleu4;
use crate::syntax::{self, CodeSnippet, TokenKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VictimResponse {
    Classification { label: u8, probs: [f64; 2] },
    Summary(Vec<String>),
}

impl VictimResponse {
    pub fn label(&self) -> Option<u8> {
        match self {
            VictimResponse::Classification { label, .. } => Some(*label),
            VictimResponse::Summary(_) => None,
        }
    }

    pub fn probability(&self, label: u8) -> Option<f64> {
        match self {
            VictimResponse::Classification { probs, .. } => probs.get(label as usize).copied(),
            VictimResponse::Summary(_) => None,
        }
    }

    pub fn summary(&self) -> Option<&[String]> {
        match self {
            VictimResponse::Summary(s) => Some(s),
            VictimResponse::Classification { .. } => None,
        }
    }

    fn classification(p1: f64, threshold: f64) -> Self {
        let p1 = p1.clamp(0.0, 1.0);
        VictimResponse::Classification {
            label: u8::from(p1 >= threshold),
            probs: [1.0 - p1, p1],
        }
    }
}

#[derive(Debug, Error)]
pub enum VictimError {
    #[error("model service request failed: {message}")]
    Remote { message: String, retryable: bool },
    #[error("model service returned a malformed response: {0}")]
    Protocol(String),
    #[error("response does not match task {0}")]
    WrongShape(TaskKind),
}

impl VictimError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, VictimError::Remote { retryable: true, .. })
    }
}

/// A scoring backend. Implementations need not count queries; the handle
/// does that.
pub trait Model: Send + Sync {
    fn predict(
        &self,
        task: TaskKind,
        code: &str,
        paired_code: Option<&str>,
    ) -> Result<VictimResponse, VictimError>;

    fn backend(&self) -> Backend;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    LocalSurrogate,
    RemoteService,
}

/// Query-counted access to a model for one task.
///
/// Counters are atomic so one handle can be shared; attack runs normally
/// take a [`scoped`](VictimHandle::scoped) handle so their counts stay
/// isolated.
pub struct VictimHandle {
    task: TaskKind,
    model: Arc<dyn Model>,
    queries: AtomicU64,
    nanos: AtomicU64,
}

impl VictimHandle {
    pub fn new(task: TaskKind, model: Arc<dyn Model>) -> Self {
        VictimHandle {
            task,
            model,
            queries: AtomicU64::new(0),
            nanos: AtomicU64::new(0),
        }
    }

    pub fn surrogate(task: TaskKind) -> Self {
        VictimHandle::new(task, Arc::new(LocalSurrogate::default()))
    }

    pub fn remote(task: TaskKind, client: Arc<RemoteClient>) -> Self {
        VictimHandle::new(task, client)
    }

    /// Handle on the same model with fresh counters.
    pub fn scoped(&self) -> VictimHandle {
        VictimHandle::new(self.task, Arc::clone(&self.model))
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn backend(&self) -> Backend {
        self.model.backend()
    }

    pub fn score(
        &self,
        code: &str,
        paired_code: Option<&str>,
    ) -> Result<VictimResponse, VictimError> {
        self.queries.fetch_add(1, Ordering::SeqCst);
        let start = Instant::now();
        let result = self.model.predict(self.task, code, paired_code);
        let elapsed = start.elapsed().as_nanos().min(u128::from(u64::MAX)) as u64;
        self.nanos.fetch_add(elapsed, Ordering::SeqCst);
        let response = result?;
        match (&response, self.task.is_understanding()) {
            (VictimResponse::Classification { .. }, true) | (VictimResponse::Summary(_), false) => {
                Ok(response)
            }
            _ => Err(VictimError::WrongShape(self.task)),
        }
    }

    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::SeqCst)
    }

    pub fn time_spent(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::SeqCst))
    }

    /// Only meant for use between campaign instances.
    pub fn reset(&self) {
        self.queries.store(0, Ordering::SeqCst);
        self.nanos.store(0, Ordering::SeqCst);
    }
}

/// Classification: the label differs from the truth. Summarization: BLEU-4
/// against the reference summary is exactly zero.
pub fn is_success(target: &AttackTarget, response: &VictimResponse) -> bool {
    match (&target.truth, response) {
        (Truth::Label(truth), VictimResponse::Classification { label, .. }) => label != truth,
        (Truth::Summary(reference), VictimResponse::Summary(summary)) => {
            bleu4(summary, reference) == 0.0
        }
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// Local surrogate

/// Deterministic stand-in models.
///
/// * clone detection: cosine similarity of the identifier and literal lexeme
///   multisets, label 1 at similarity >= 0.5. Keywords and punctuation are
///   left out, so the score follows naming rather than boilerplate.
/// * vulnerability detection: logistic model over hashed unigram and bigram
///   features. Weights come from [`SURROGATE_WEIGHT_SEED`].
/// * summarization: the method name split into words, the word `using`,
///   then the three most frequent other identifiers.
#[derive(Debug, Clone)]
pub struct LocalSurrogate {
    weights: Arc<Vec<f64>>,
}

pub const SURROGATE_WEIGHT_SEED: u64 = 0x5EED_C0DE;
pub const SURROGATE_FEATURE_BUCKETS: usize = 4096;
pub const CLONE_THRESHOLD: f64 = 0.5;
const VULN_SCALE: f64 = 3.0;

impl Default for LocalSurrogate {
    fn default() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(SURROGATE_WEIGHT_SEED);
        let weights = (0..SURROGATE_FEATURE_BUCKETS)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        LocalSurrogate {
            weights: Arc::new(weights),
        }
    }
}

impl Model for LocalSurrogate {
    fn predict(
        &self,
        task: TaskKind,
        code: &str,
        paired_code: Option<&str>,
    ) -> Result<VictimResponse, VictimError> {
        Ok(match task {
            TaskKind::CloneDetection => {
                let sim = token_cosine(code, paired_code.unwrap_or(""));
                VictimResponse::classification(sim, CLONE_THRESHOLD)
            }
            TaskKind::VulnerabilityDetection => {
                VictimResponse::classification(self.vulnerability_probability(code), 0.5)
            }
            TaskKind::CodeSummarization => VictimResponse::Summary(template_summary(code)),
        })
    }

    fn backend(&self) -> Backend {
        Backend::LocalSurrogate
    }
}

impl LocalSurrogate {
    fn vulnerability_probability(&self, code: &str) -> f64 {
        let lexemes = lexemes(code);
        if lexemes.is_empty() {
            return 0.5;
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, lexeme) in lexemes.iter().enumerate() {
            total += self.weights[bucket(&[lexeme])];
            count += 1;
            if let Some(next) = lexemes.get(i + 1) {
                total += self.weights[bucket(&[lexeme, next])];
                count += 1;
            }
        }
        let z = VULN_SCALE * total / (count as f64).sqrt();
        1.0 / (1.0 + (-z).exp())
    }
}

fn lexemes(code: &str) -> Vec<&str> {
    lexemes_where(code, |k| !k.is_trivia())
}

fn lexemes_where(code: &str, keep: impl Fn(TokenKind) -> bool) -> Vec<&str> {
    match syntax::tokenize(code) {
        Ok(tokens) => tokens
            .into_iter()
            .filter(|t| keep(t.kind))
            .map(|t| &code[t.span])
            .collect(),
        Err(_) => code.split_whitespace().collect(),
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn bucket(parts: &[&str]) -> usize {
    let joined = parts.join("\u{1f}");
    (fnv1a(joined.as_bytes()) % SURROGATE_FEATURE_BUCKETS as u64) as usize
}

fn token_cosine(a: &str, b: &str) -> f64 {
    use std::collections::HashMap;
    let count = |code| {
        let mut m: HashMap<&str, f64> = HashMap::new();
        for l in lexemes_where(code, |k| matches!(k, TokenKind::Identifier | TokenKind::Literal)) {
            *m.entry(l).or_default() += 1.0;
        }
        m
    };
    let (ca, cb) = (count(a), count(b));
    let dot: f64 = ca
        .iter()
        .map(|(k, v)| v * cb.get(k).copied().unwrap_or(0.0))
        .sum();
    let na: f64 = ca.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = cb.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

/// Lowercased words of a camelCase / snake_case name.
pub fn split_name(name: &str) -> Vec<String> {
    let chars: Vec<char> = name.chars().collect();
    let mut words = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c == '_' || c == '$' {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            continue;
        }
        let boundary = i > 0 && !current.is_empty() && {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            (c.is_uppercase() && (prev.is_lowercase() || prev.is_ascii_digit()))
                || (c.is_uppercase() && prev.is_uppercase() && next_lower)
                || (c.is_ascii_digit() != prev.is_ascii_digit())
        };
        if boundary {
            words.push(std::mem::take(&mut current));
        }
        current.extend(c.to_lowercase());
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

fn template_summary(code: &str) -> Vec<String> {
    let Ok(snippet) = CodeSnippet::parse(code) else {
        return lexemes(code)
            .into_iter()
            .take(4)
            .map(str::to_lowercase)
            .collect();
    };
    let method = snippet.method_name().map(str::to_owned);
    let mut summary = method.as_deref().map(split_name).unwrap_or_default();
    summary.push("using".into());
    let mut ranked: Vec<(usize, usize, &str)> = snippet
        .identifiers()
        .iter()
        .filter(|id| Some(id.name.as_str()) != method.as_deref())
        .map(|id| (id.occurrences.len(), id.occurrences[0], id.name.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    summary.extend(ranked.iter().take(3).map(|(_, _, n)| n.to_lowercase()));
    summary
}

// ---------------------------------------------------------------------------
// Remote service

#[derive(Debug, Serialize)]
struct PredictRequest<'a> {
    task: &'a str,
    code: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    code2: Option<&'a str>,
}

#[derive(Debug, Deserialize)]
struct PredictResponse {
    label: Option<u8>,
    probs: Option<Vec<f64>>,
    summary: Option<SummaryField>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SummaryField {
    Text(String),
    Tokens(Vec<String>),
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    #[serde(alias = "vectors")]
    embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct FillMaskRequest<'a> {
    code: &'a str,
    mask_identifier: &'a str,
    identifier: &'a str,
}

/// Raw fill-mask suggestions, in service order.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct FillMaskResponse {
    pub candidates: Vec<String>,
    #[serde(default)]
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "http://127.0.0.1:8080".into(),
            timeout: Duration::from_secs(30),
            max_in_flight: 4,
        }
    }
}

/// Blocking client for the model server's `/predict`, `/embed`, and
/// `/fillmask` endpoints. Concurrent requests are capped at
/// `max_in_flight`.
pub struct RemoteClient {
    config: RemoteConfig,
    agent: ureq::Agent,
    slots: Mutex<usize>,
    freed: Condvar,
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let slots = config.max_in_flight.max(1);
        RemoteClient {
            config,
            agent,
            slots: Mutex::new(slots),
            freed: Condvar::new(),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.config.endpoint
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, VictimError> {
        {
            let mut free = self.slots.lock().expect("slot lock poisoned");
            while *free == 0 {
                free = self.freed.wait(free).expect("slot lock poisoned");
            }
            *free -= 1;
        }
        let result = self.post_unbounded(path, body);
        *self.slots.lock().expect("slot lock poisoned") += 1;
        self.freed.notify_one();
        result
    }

    fn post_unbounded<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, VictimError> {
        let url = format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path);
        let mut response = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| VictimError::Remote {
                message: e.to_string(),
                retryable: true,
            })?;
        let status = response.status().as_u16();
        if status >= 400 {
            let text = response.body_mut().read_to_string().unwrap_or_default();
            return Err(VictimError::Remote {
                message: format!("HTTP {status}: {text}"),
                retryable: status >= 500 || status == 429,
            });
        }
        response
            .body_mut()
            .read_json()
            .map_err(|e| VictimError::Protocol(e.to_string()))
    }

    pub fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, VictimError> {
        let response: EmbedResponse = self.post("embed", &EmbedRequest { texts })?;
        if response.embeddings.len() != texts.len() {
            return Err(VictimError::Protocol(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                response.embeddings.len()
            )));
        }
        Ok(response.embeddings)
    }

    pub fn fill_mask(&self, code: &str, identifier: &str) -> Result<FillMaskResponse, VictimError> {
        let response: FillMaskResponse = self.post(
            "fillmask",
            &FillMaskRequest {
                code,
                mask_identifier: identifier,
                identifier,
            },
        )?;
        if !response.scores.is_empty() && response.scores.len() != response.candidates.len() {
            return Err(VictimError::Protocol(
                "fill-mask scores and candidates differ in length".into(),
            ));
        }
        Ok(response)
    }
}

impl Model for RemoteClient {
    fn predict(
        &self,
        task: TaskKind,
        code: &str,
        paired_code: Option<&str>,
    ) -> Result<VictimResponse, VictimError> {
        let response: PredictResponse = self.post(
            "predict",
            &PredictRequest {
                task: task.as_str(),
                code,
                code2: paired_code,
            },
        )?;
        if task.is_understanding() {
            let probs = response
                .probs
                .ok_or_else(|| VictimError::Protocol("missing `probs`".into()))?;
            if probs.len() != 2
                || probs.iter().any(|p| !(0.0..=1.0).contains(p))
                || (probs[0] + probs[1] - 1.0).abs() > 1e-6
            {
                return Err(VictimError::Protocol(format!("invalid probabilities {probs:?}")));
            }
            let label = response
                .label
                .unwrap_or(u8::from(probs[1] > probs[0]));
            Ok(VictimResponse::Classification {
                label,
                probs: [probs[0], probs[1]],
            })
        } else {
            match response.summary {
                Some(SummaryField::Text(t)) => Ok(VictimResponse::Summary(
                    t.split_whitespace().map(str::to_owned).collect(),
                )),
                Some(SummaryField::Tokens(t)) => Ok(VictimResponse::Summary(t)),
                None => Err(VictimError::Protocol("missing `summary`".into())),
            }
        }
    }

    fn backend(&self) -> Backend {
        Backend::RemoteService
    }
}
