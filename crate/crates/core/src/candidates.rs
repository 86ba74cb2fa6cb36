//! Substitute names for an identifier: random vocabulary draws, nearest
//! neighbours in an embedding table, or masked-prediction suggestions from
//! the model server.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::trigram_vector;
use crate::syntax::CodeSnippet;
use crate::victim::{fnv1a, RemoteClient, VictimError};

/// Candidate lists never exceed this length.
pub const MAX_CANDIDATES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Random,
    Cosine,
    ContextAware,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub identifier: String,
    pub candidates: Vec<String>,
    pub strategy: Strategy,
    /// The requested strategy could not serve this identifier and
    /// `strategy` is what actually produced the list.
    pub fallback: bool,
    /// Fewer valid names than requested were available.
    pub exhausted: bool,
}

impl CandidateList {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum CandidateError {
    #[error("`{0}` is not an identifier of the snippet")]
    UnknownIdentifier(String),
    #[error(transparent)]
    Remote(#[from] VictimError),
    #[error("embedding table: {0}")]
    Table(String),
}

/// Filters `names` down to at most `k` valid fresh names for `snippet`,
/// keeping order and dropping duplicates and the identifier itself.
fn admit<'a>(
    snippet: &CodeSnippet,
    identifier: &str,
    names: impl IntoIterator<Item = &'a str>,
    k: usize,
) -> Vec<String> {
    let mut seen = HashSet::new();
    names
        .into_iter()
        .filter(|n| *n != identifier && snippet.is_fresh_name(n) && seen.insert(*n))
        .take(k)
        .map(str::to_owned)
        .collect()
}

fn require(snippet: &CodeSnippet, identifier: &str) -> Result<(), CandidateError> {
    if snippet.contains_identifier(identifier) {
        Ok(())
    } else {
        Err(CandidateError::UnknownIdentifier(identifier.to_owned()))
    }
}

/// Up to `k` names drawn without replacement from `vocabulary`, skipping
/// any that fail the rename preconditions.
pub fn random_candidates(
    vocabulary: &[String],
    snippet: &CodeSnippet,
    identifier: &str,
    k: usize,
    seed: u64,
) -> Result<CandidateList, CandidateError> {
    require(snippet, identifier)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<&str> = vocabulary.iter().map(String::as_str).collect();
    order.shuffle(&mut rng);
    let candidates = admit(snippet, identifier, order, k);
    Ok(CandidateList {
        identifier: identifier.to_owned(),
        exhausted: candidates.len() < k,
        candidates,
        strategy: Strategy::Random,
        fallback: false,
    })
}

/// Fixed-dimension vectors keyed by identifier name.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new(entries: Vec<(String, Vec<f64>)>) -> Result<Self, CandidateError> {
        let dim = entries.first().map_or(0, |(_, v)| v.len());
        let mut index = HashMap::new();
        let mut vocab = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len());
        for (name, vector) in entries {
            if vector.len() != dim {
                return Err(CandidateError::Table(format!(
                    "`{name}` has dimension {} instead of {dim}",
                    vector.len()
                )));
            }
            if index.insert(name.clone(), vocab.len()).is_some() {
                return Err(CandidateError::Table(format!("duplicate entry `{name}`")));
            }
            vocab.push(name);
            vectors.push(vector);
        }
        Ok(EmbeddingTable { vocab, vectors, index, dim })
    }

    /// Offline table: hashed character-trigram vectors of each name.
    pub fn trigram_fallback(vocabulary: &[String], dim: usize) -> Self {
        let mut seen = HashSet::new();
        let entries = vocabulary
            .iter()
            .filter(|n| seen.insert(n.as_str()))
            .map(|n| (n.clone(), trigram_vector(n, dim)))
            .collect();
        EmbeddingTable::new(entries).expect("unique names and fixed dimension")
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&i| self.vectors[i].as_slice())
    }

    /// Reads the text format: a `<count> <dim>` header line, then one
    /// `<name> <v1> ... <vdim>` line per entry.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CandidateError> {
        let file = fs::File::open(path.as_ref())
            .map_err(|e| CandidateError::Table(format!("{}: {e}", path.as_ref().display())))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| CandidateError::Table("missing header".into()))?
            .map_err(|e| CandidateError::Table(e.to_string()))?;
        let mut parts = header.split_whitespace().map(str::parse::<usize>);
        let (Some(Ok(count)), Some(Ok(dim)), None) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(CandidateError::Table(format!("bad header `{header}`")));
        };
        let mut entries = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| CandidateError::Table(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let name = fields.next().expect("non-empty line").to_owned();
            let vector = fields
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CandidateError::Table(format!("line {}: {e}", i + 2)))?;
            if vector.len() != dim {
                return Err(CandidateError::Table(format!(
                    "line {}: expected {dim} values, found {}",
                    i + 2,
                    vector.len()
                )));
            }
            entries.push((name, vector));
        }
        if entries.len() != count {
            return Err(CandidateError::Table(format!(
                "header promises {count} entries, found {}",
                entries.len()
            )));
        }
        EmbeddingTable::new(entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = format!("{} {}\n", self.vocab.len(), self.dim);
        for (name, v) in self.vocab.iter().zip(&self.vectors) {
            out.push_str(name);
            for x in v {
                out.push(' ');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        fs::write(path, out)
    }
}

fn cosine_or_zero(a: &[f64], b: &[f64]) -> f64 {
    crate::metrics::cosine(a, b).unwrap_or(0.0)
}

/// The `k` valid names most cosine-similar to `identifier`, descending,
/// ties broken by name. Identifiers missing from the table get a seeded
/// random draw from the table's vocabulary instead, flagged as a fallback.
pub fn cosine_candidates(
    table: &EmbeddingTable,
    snippet: &CodeSnippet,
    identifier: &str,
    k: usize,
) -> Result<CandidateList, CandidateError> {
    require(snippet, identifier)?;
    let Some(query) = table.vector(identifier) else {
        let mut list = random_candidates(
            table.vocab(),
            snippet,
            identifier,
            k,
            fnv1a(identifier.as_bytes()),
        )?;
        list.fallback = true;
        return Ok(list);
    };
    let mut scored: Vec<(f64, &str)> = table
        .vocab
        .iter()
        .zip(&table.vectors)
        .filter(|(name, _)| name.as_str() != identifier)
        .map(|(name, v)| (cosine_or_zero(query, v), name.as_str()))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let candidates = admit(snippet, identifier, scored.into_iter().map(|(_, n)| n), k);
    Ok(CandidateList {
        identifier: identifier.to_owned(),
        exhausted: candidates.len() < k,
        candidates,
        strategy: Strategy::Cosine,
        fallback: false,
    })
}

/// Masked-prediction suggestions for `identifier` in the snippet's current
/// state. Always a fresh service call; suggestions change as the snippet
/// changes.
pub fn contextaware_candidates(
    remote: &RemoteClient,
    snippet: &CodeSnippet,
    identifier: &str,
    k: usize,
) -> Result<CandidateList, CandidateError> {
    require(snippet, identifier)?;
    let response = remote.fill_mask(snippet.source(), identifier)?;
    let mut ranked: Vec<(usize, &str)> = response
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (i, c.as_str()))
        .collect();
    if !response.scores.is_empty() {
        // stable on service order for equal scores
        ranked.sort_by(|a, b| response.scores[b.0].total_cmp(&response.scores[a.0]).then(a.0.cmp(&b.0)));
    }
    let candidates = admit(snippet, identifier, ranked.into_iter().map(|(_, c)| c), k);
    Ok(CandidateList {
        identifier: identifier.to_owned(),
        exhausted: candidates.len() < k,
        candidates,
        strategy: Strategy::ContextAware,
        fallback: false,
    })
}

/// A configured candidate strategy. Attacks ask it for lists without caring
/// where they come from.
pub enum CandidateSource<'a> {
    Random { vocabulary: &'a [String] },
    Cosine { table: &'a EmbeddingTable },
    ContextAware {
        remote: &'a RemoteClient,
        /// Used when the service fails.
        fallback: Option<&'a EmbeddingTable>,
    },
}

impl CandidateSource<'_> {
    pub fn candidates(
        &self,
        snippet: &CodeSnippet,
        identifier: &str,
        k: usize,
        seed: u64,
    ) -> Result<CandidateList, CandidateError> {
        match self {
            CandidateSource::Random { vocabulary } => {
                random_candidates(vocabulary, snippet, identifier, k, seed)
            }
            CandidateSource::Cosine { table } => cosine_candidates(table, snippet, identifier, k),
            CandidateSource::ContextAware { remote, fallback } => {
                match contextaware_candidates(remote, snippet, identifier, k) {
                    Ok(list) => Ok(list),
                    Err(CandidateError::Remote(_)) if fallback.is_some() => {
                        let mut list =
                            cosine_candidates(fallback.expect("checked"), snippet, identifier, k)?;
                        list.fallback = true;
                        Ok(list)
                    }
                    Err(e) => Err(e),
                }
            }
        }
    }

    pub fn strategy(&self) -> Strategy {
        match self {
            CandidateSource::Random { .. } => Strategy::Random,
            CandidateSource::Cosine { .. } => Strategy::Cosine,
            CandidateSource::ContextAware { .. } => Strategy::ContextAware,
        }
    }
}
