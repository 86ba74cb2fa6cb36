//! Attack effectiveness, efficiency, and adversarial-code quality.
//!
//! Effectiveness is ASR; efficiency is AMQ and ART; quality is ICR, TCR,
//! ACS, and AED. Quality metrics only exist for successful attacks.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::syntax::{tokenize, CodeSnippet, ReplacementMap};
use crate::victim::{fnv1a, RemoteClient, VictimError};

// ---------------------------------------------------------------------------
// BLEU

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            let key: Vec<&str> = window.iter().map(AsRef::as_ref).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and candidate n-gram total for order `n`.
fn modified_precision<T: AsRef<str>>(candidate: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let matches = cand
        .iter()
        .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
        .sum();
    (matches, candidate.len().saturating_sub(n - 1))
}

fn brevity_penalty(candidate_len: usize, reference_len: usize) -> f64 {
    if candidate_len == 0 {
        0.0
    } else if candidate_len > reference_len {
        1.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    }
}

/// Sentence BLEU-4: uniform weights over 1..=4-gram precisions, brevity
/// penalty, no smoothing. Any order without a match gives exactly 0.
pub fn bleu4<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> f64 {
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (matches, total) = modified_precision(candidate, reference, n);
        if matches == 0 || total == 0 {
            return 0.0;
        }
        log_sum += (matches as f64 / total as f64).ln() / 4.0;
    }
    brevity_penalty(candidate.len(), reference.len()) * log_sum.exp()
}

/// BLEU-4 with add-one smoothing on orders 2..=4. Informational only; the
/// success criterion always uses [`bleu4`].
pub fn bleu4_smoothed<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (matches, total) = modified_precision(candidate, reference, n);
        let p = if n == 1 {
            if matches == 0 {
                return 0.0;
            }
            matches as f64 / total as f64
        } else {
            (matches as f64 + 1.0) / (total as f64 + 1.0)
        };
        log_sum += p.ln() / 4.0;
    }
    brevity_penalty(candidate.len(), reference.len()) * log_sum.exp()
}

// ---------------------------------------------------------------------------
// ICR / TCR

/// Raw counts behind ICR and TCR for one adversarial example.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeCounts {
    /// Distinct identifiers renamed.
    pub renamed: usize,
    /// Distinct renameable identifiers in the original.
    pub renameable: usize,
    pub changed_tokens: usize,
    pub total_tokens: usize,
}

impl ChangeCounts {
    pub fn icr(&self) -> f64 {
        ratio(self.renamed, self.renameable)
    }

    pub fn tcr(&self) -> f64 {
        ratio(self.changed_tokens, self.total_tokens)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn code_lexemes(code: &str) -> Vec<&str> {
    match tokenize(code) {
        Ok(tokens) => tokens
            .into_iter()
            .filter(|t| !t.kind.is_trivia())
            .map(|t| &code[t.span])
            .collect(),
        Err(_) => code.split_whitespace().collect(),
    }
}

/// Identifier and token change counts between an original snippet and its
/// adversarial version.
///
/// Equal-length token streams are compared position by position. Otherwise
/// (style rewrites) the tokens are aligned by a minimum edit script and
/// substitutions plus insertions count as changed.
pub fn icr_tcr(original: &CodeSnippet, adversarial: &str, replacements: &ReplacementMap) -> ChangeCounts {
    let before: Vec<&str> = original.code_tokens().map(|(_, l)| l).collect();
    let after = code_lexemes(adversarial);
    let changed_tokens = if before.len() == after.len() {
        before.iter().zip(&after).filter(|(a, b)| a != b).count()
    } else {
        edit_script_changes(&before, &after)
    };
    ChangeCounts {
        renamed: replacements.len(),
        renameable: original.identifiers().len(),
        changed_tokens,
        total_tokens: before.len(),
    }
}

/// Substitutions + insertions of a minimum-cost unit edit script turning
/// `from` into `to`. Among equal-cost scripts, the one with the fewest
/// changed target tokens is used.
pub fn edit_script_changes<T: PartialEq>(from: &[T], to: &[T]) -> usize {
    // (cost, changed) compared lexicographically
    let cols = to.len() + 1;
    let mut prev: Vec<(usize, usize)> = (0..cols).map(|j| (j, j)).collect();
    let mut cur = vec![(0, 0); cols];
    for i in 1..=from.len() {
        cur[0] = (i, 0);
        for j in 1..cols {
            let (dc, dch) = prev[j - 1];
            let diag = if from[i - 1] == to[j - 1] {
                (dc, dch)
            } else {
                (dc + 1, dch + 1)
            };
            let del = (prev[j].0 + 1, prev[j].1);
            let ins = (cur[j - 1].0 + 1, cur[j - 1].1 + 1);
            cur[j] = diag.min(del).min(ins);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[to.len()].1
}

// ---------------------------------------------------------------------------
// AED

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance between two programs: tokens are aligned so that the sum
/// of per-token character edit distances is minimal, where an inserted or
/// deleted token costs its full length.
pub fn aed(original: &str, adversarial: &str) -> usize {
    let a = code_lexemes(original);
    let b = code_lexemes(adversarial);
    token_edit_distance(&a, &b)
}

pub fn token_edit_distance(a: &[&str], b: &[&str]) -> usize {
    let len = |s: &str| s.chars().count();
    let mut prev = vec![0usize; b.len() + 1];
    for j in 1..=b.len() {
        prev[j] = prev[j - 1] + len(b[j - 1]);
    }
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = prev[0] + len(a[i - 1]);
        for j in 1..=b.len() {
            let sub = prev[j - 1]
                + if a[i - 1] == b[j - 1] {
                    0
                } else {
                    levenshtein(a[i - 1], b[j - 1])
                };
            cur[j] = sub
                .min(prev[j] + len(a[i - 1]))
                .min(cur[j - 1] + len(b[j - 1]));
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

// ---------------------------------------------------------------------------
// ACS

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding has zero norm")]
    ZeroVector,
    #[error("embeddings differ in dimension ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Remote(#[from] VictimError),
    #[error("sample is empty")]
    EmptySample,
}

pub const FALLBACK_EMBEDDING_DIM: usize = 256;

/// Hashed character-trigram count vector. Used as the offline stand-in for
/// model embeddings.
pub fn trigram_vector(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let padded: Vec<char> = std::iter::once('\u{2}')
        .chain(text.chars())
        .chain(std::iter::once('\u{3}'))
        .collect();
    for w in padded.windows(3) {
        let s: String = w.iter().collect();
        v[(fnv1a(s.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Source of code embeddings for ACS.
pub enum EmbeddingProvider<'a> {
    RemoteService(&'a RemoteClient),
    /// Hashed trigram vectors over whitespace-normalized code.
    LocalFallback,
}

impl EmbeddingProvider<'_> {
    pub fn dimension(&self) -> Option<usize> {
        match self {
            EmbeddingProvider::LocalFallback => Some(FALLBACK_EMBEDDING_DIM),
            EmbeddingProvider::RemoteService(_) => None,
        }
    }

    pub fn embed_pair(&self, a: &str, b: &str) -> Result<(Vec<f64>, Vec<f64>), MetricError> {
        if a.trim().is_empty() || b.trim().is_empty() {
            return Err(MetricError::EmptyText);
        }
        match self {
            EmbeddingProvider::LocalFallback => {
                let norm = |t: &str| t.split_whitespace().collect::<Vec<_>>().join(" ");
                Ok((
                    trigram_vector(&norm(a), FALLBACK_EMBEDDING_DIM),
                    trigram_vector(&norm(b), FALLBACK_EMBEDDING_DIM),
                ))
            }
            EmbeddingProvider::RemoteService(client) => {
                let mut v = client.embed(&[a, b])?;
                let second = v.pop().expect("two embeddings checked by client");
                let first = v.pop().expect("two embeddings checked by client");
                Ok((first, second))
            }
        }
    }
}

/// Cosine similarity between the embeddings of two programs.
pub fn acs(provider: &EmbeddingProvider<'_>, original: &str, adversarial: &str) -> Result<f64, MetricError> {
    let (a, b) = provider.embed_pair(original, adversarial)?;
    cosine(&a, &b)
}

// ---------------------------------------------------------------------------
// Aggregation

/// Metrics for one attempted target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub id: String,
    pub success: bool,
    pub queries: u64,
    pub iterations: u64,
    /// Attacker wall time, seconds.
    #[serde(default)]
    pub time_secs: f64,
    /// Part of `time_secs` spent inside the victim, seconds.
    #[serde(default)]
    pub victim_time_secs: f64,
    /// Present for successful attacks only.
    pub changes: Option<ChangeCounts>,
    pub acs: Option<f64>,
    pub aed: Option<usize>,
}

impl InstanceRow {
    pub fn icr(&self) -> Option<f64> {
        self.changes.map(|c| c.icr())
    }

    pub fn tcr(&self) -> Option<f64> {
        self.changes.map(|c| c.tcr())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub attackable: usize,
    pub successes: usize,
    /// Percent of attackable targets.
    pub asr: f64,
    /// Mean queries over all attempted targets.
    pub amq: f64,
    /// Mean queries over successful targets.
    pub amq_successful: Option<f64>,
    /// Mean attacker wall time, minutes.
    pub art_minutes: f64,
    /// Mean victim-side time, minutes.
    pub art_victim_minutes: f64,
    /// Pooled percent: sum of renamed over sum of renameable.
    pub icr: Option<f64>,
    /// Pooled percent: sum of changed over sum of total tokens.
    pub tcr: Option<f64>,
    pub acs: Option<f64>,
    pub aed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<InstanceRow>,
    /// `None` when nothing was attackable.
    pub aggregates: Option<Aggregates>,
}

impl MetricsReport {
    pub fn is_empty(&self) -> bool {
        self.aggregates.is_none()
    }

    /// Line-delimited rows followed by one aggregate record. With
    /// `include_timing` off, all wall-clock fields are omitted so the output
    /// is reproducible byte for byte.
    pub fn to_jsonl(&self, include_timing: bool) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let mut value = serde_json::to_value(row).expect("rows serialize");
            if !include_timing {
                strip(&mut value, &["time_secs", "victim_time_secs"]);
            }
            value["record"] = "instance".into();
            out.push_str(&value.to_string());
            out.push('\n');
        }
        let mut agg = match &self.aggregates {
            Some(a) => serde_json::to_value(a).expect("aggregates serialize"),
            None => serde_json::json!({ "empty": true }),
        };
        if !include_timing {
            strip(&mut agg, &["art_minutes", "art_victim_minutes"]);
        }
        agg["record"] = "aggregate".into();
        out.push_str(&agg.to_string());
        out.push('\n');
        out
    }

    /// One-line table in the ASR / AMQ / ART / ICR / TCR / ACS / AED layout.
    pub fn table_row(&self, label: &str) -> String {
        match &self.aggregates {
            None => format!("{label:<16} (no attackable targets)"),
            Some(a) => format!(
                "{label:<16} {:>8.2} {:>10.2} {:>8.2} {:>8} {:>8} {:>8} {:>9}",
                a.asr,
                a.amq,
                a.art_minutes,
                opt(a.icr, 2),
                opt(a.tcr, 2),
                opt(a.acs, 4),
                opt(a.aed, 2)
            ),
        }
    }

    pub fn to_table(&self, label: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", table_header());
        let _ = writeln!(out, "{}", self.table_row(label));
        out
    }
}

pub fn table_header() -> String {
    format!(
        "{:<16} {:>8} {:>10} {:>8} {:>8} {:>8} {:>8} {:>9}",
        "Approach", "ASR", "AMQ", "ART", "ICR", "TCR", "ACS", "AED"
    )
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

fn strip(value: &mut serde_json::Value, keys: &[&str]) {
    if let Some(obj) = value.as_object_mut() {
        for k in keys {
            obj.remove(*k);
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn aggregate(rows: Vec<InstanceRow>) -> MetricsReport {
    if rows.is_empty() {
        return MetricsReport {
            rows,
            aggregates: None,
        };
    }
    let attackable = rows.len();
    let wins: Vec<&InstanceRow> = rows.iter().filter(|r| r.success).collect();
    let successes = wins.len();
    let pooled = |num: fn(&ChangeCounts) -> usize, den: fn(&ChangeCounts) -> usize| {
        let changes: Vec<ChangeCounts> = wins.iter().filter_map(|r| r.changes).collect();
        let d: usize = changes.iter().map(den).sum();
        (!changes.is_empty() && d > 0)
            .then(|| 100.0 * changes.iter().map(num).sum::<usize>() as f64 / d as f64)
    };
    let aggregates = Aggregates {
        attackable,
        successes,
        asr: 100.0 * successes as f64 / attackable as f64,
        amq: mean(rows.iter().map(|r| r.queries as f64)).unwrap_or(0.0),
        amq_successful: mean(wins.iter().map(|r| r.queries as f64)),
        art_minutes: mean(rows.iter().map(|r| r.time_secs / 60.0)).unwrap_or(0.0),
        art_victim_minutes: mean(rows.iter().map(|r| r.victim_time_secs / 60.0)).unwrap_or(0.0),
        icr: pooled(|c| c.renamed, |c| c.renameable),
        tcr: pooled(|c| c.changed_tokens, |c| c.total_tokens),
        acs: mean(wins.iter().filter_map(|r| r.acs)),
        aed: mean(wins.iter().filter_map(|r| r.aed.map(|d| d as f64))),
    };
    MetricsReport {
        rows,
        aggregates: Some(aggregates),
    }
}

// ---------------------------------------------------------------------------
// Mann-Whitney U

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    /// `a` tends to be smaller than `b`.
    Less,
    /// `a` tends to be larger than `b`.
    Greater,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of sample `a`.
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Largest per-sample size handled by exact enumeration.
pub const EXACT_LIMIT: usize = 20;

/// Mann-Whitney U test of `a` against `b`.
///
/// Samples of at most [`EXACT_LIMIT`] each use the exact permutation
/// distribution of the (mid)rank sum, ties included. Larger samples use the
/// normal approximation with tie and continuity corrections.
pub fn mann_whitney_u(a: &[f64], b: &[f64], alternative: Alternative) -> Result<MannWhitney, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptySample);
    }
    let (na, nb) = (a.len(), b.len());
    let doubled = doubled_midranks(a, b);
    let rank_sum2: u64 = doubled[..na].iter().sum();
    let u = rank_sum2 as f64 / 2.0 - (na * (na + 1)) as f64 / 2.0;

    if na <= EXACT_LIMIT && nb <= EXACT_LIMIT {
        let dist = rank_sum_distribution(&doubled, na);
        let total: u128 = dist.values().sum();
        let ge: u128 = dist.iter().filter(|(s, _)| **s >= rank_sum2).map(|(_, c)| c).sum();
        let le: u128 = dist.iter().filter(|(s, _)| **s <= rank_sum2).map(|(_, c)| c).sum();
        let p_greater = ge as f64 / total as f64;
        let p_less = le as f64 / total as f64;
        let p_value = match alternative {
            Alternative::Greater => p_greater,
            Alternative::Less => p_less,
            Alternative::TwoSided => (2.0 * p_greater.min(p_less)).min(1.0),
        };
        return Ok(MannWhitney { u, p_value, exact: true });
    }

    let n = (na + nb) as f64;
    let mut tie_groups: HashMap<u64, usize> = HashMap::new();
    for r in &doubled {
        *tie_groups.entry(*r).or_default() += 1;
    }
    let tie_term: f64 = tie_groups
        .values()
        .map(|&t| (t * t * t - t) as f64)
        .sum::<f64>()
        / (n * (n - 1.0));
    let mean = (na * nb) as f64 / 2.0;
    let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - tie_term);
    if var <= 0.0 {
        return Ok(MannWhitney { u, p_value: 1.0, exact: false });
    }
    let sd = var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p_greater = 1.0 - normal.cdf((u - mean - 0.5) / sd);
    let p_less = normal.cdf((u - mean + 0.5) / sd);
    let p_value = match alternative {
        Alternative::Greater => p_greater,
        Alternative::Less => p_less,
        Alternative::TwoSided => (2.0 * p_greater.min(p_less)).min(1.0),
    };
    Ok(MannWhitney {
        u,
        p_value: p_value.clamp(0.0, 1.0),
        exact: false,
    })
}

/// Twice the average rank of every pooled observation (`a` first, then
/// `b`), so tied ranks stay integral.
fn doubled_midranks(a: &[f64], b: &[f64]) -> Vec<u64> {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, doubled
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Number of `k`-subsets of `ranks` per subset sum.
fn rank_sum_distribution(ranks: &[u64], k: usize) -> HashMap<u64, u128> {
    let max_sum: u64 = ranks.iter().sum();
    let width = max_sum as usize + 1;
    // table[j][s]: subsets of size j with sum s
    let mut table = vec![vec![0u128; width]; k + 1];
    table[0][0] = 1;
    for &r in ranks {
        let r = r as usize;
        for j in (1..=k).rev() {
            let (lower, upper) = table.split_at_mut(j);
            let from = &lower[j - 1];
            let to = &mut upper[0];
            for s in (r..width).rev() {
                to[s] += from[s - r];
            }
        }
    }
    table[k]
        .iter()
        .enumerate()
        .filter(|(_, c)| **c > 0)
        .map(|(s, c)| (s as u64, *c))
        .collect()
}
