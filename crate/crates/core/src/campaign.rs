//! Running an attack engine over a dataset and writing its reports.
//!
//! A campaign directory holds:
//!
//! * `report.jsonl`: one row per attackable target plus an aggregate
//!   record. Wall-clock fields are left out so reruns are byte-identical.
//! * `traces.jsonl`: per-target outcome and every scored query, with timing.
//! * `timing.jsonl`: per-target wall and victim time.
//! * `table.txt`: the ASR / AMQ / ART / ICR / TCR / ACS / AED table.
//! * `skipped.jsonl`: dataset rows rejected at load.
//! * `PARTIAL`: only present when the campaign aborted.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{
    attack_accent, attack_alert, attack_beam, attack_mhm, attack_styletransfer, attack_wir_random, AccentConfig,
    AlertConfig, AttackError, AttackOutcome, BeamConfig, Engine, MhmConfig, PriorityTable, StyleTransferConfig,
    TraceEvent, WirConfig, DEFAULT_K_CAND,
};
use crate::candidates::{CandidateError, CandidateSource, EmbeddingTable, Strategy, MAX_CANDIDATES};
use crate::corpus::{self, AttackTarget, LoadError, SkippedRecord, TaskKind};
use crate::metrics::{
    acs, aed, aggregate, icr_tcr, mann_whitney_u, table_header, Alternative, EmbeddingProvider, InstanceRow,
    MetricError, MetricsReport, FALLBACK_EMBEDDING_DIM,
};
use crate::syntax::{CodeSnippet, ReplacementMap};
use crate::victim::{fnv1a, Backend, RemoteClient, RemoteConfig, VictimError, VictimHandle};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Victim(#[from] VictimError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

fn file_error(path: &Path, e: impl std::fmt::Display) -> CampaignError {
    CampaignError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct VictimSettings {
    pub backend: Backend,
    pub endpoint: String,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for VictimSettings {
    fn default() -> Self {
        let remote = RemoteConfig::default();
        VictimSettings {
            backend: Backend::LocalSurrogate,
            endpoint: remote.endpoint,
            timeout_secs: remote.timeout.as_secs(),
            max_in_flight: remote.max_in_flight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct CandidateSettings {
    /// Engine default when unset.
    pub strategy: Option<Strategy>,
    /// Embedding table for cosine candidates; hashed trigram vectors over
    /// the corpus vocabulary when unset.
    pub embeddings: Option<PathBuf>,
    /// Use cosine candidates when the fill-mask service fails.
    pub fallback_on_error: bool,
}

impl Default for CandidateSettings {
    fn default() -> Self {
        CandidateSettings {
            strategy: None,
            embeddings: None,
            fallback_on_error: true,
        }
    }
}

/// Engine hyperparameters. Unset values take the engine's default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EngineParams {
    pub max_iter: Option<usize>,
    pub k_cand: Option<usize>,
    pub n: Option<usize>,
    pub max_depth: Option<usize>,
    pub beam: Option<usize>,
    pub population: Option<usize>,
    pub crossover_rate: Option<f64>,
    pub priorities: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct CampaignConfig {
    pub task: TaskKind,
    pub engine: Engine,
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub seed: u64,
    pub workers: usize,
    /// Attack at most this many loaded targets, sampled with `sample-seed`.
    pub limit: Option<usize>,
    pub sample_seed: u64,
    pub victim: VictimSettings,
    pub candidates: CandidateSettings,
    pub params: EngineParams,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            task: TaskKind::CloneDetection,
            engine: Engine::Beam,
            dataset: PathBuf::from("dataset.jsonl"),
            output: PathBuf::from("campaign-out"),
            seed: 0,
            workers: 1,
            limit: None,
            sample_seed: 0,
            victim: VictimSettings::default(),
            candidates: CandidateSettings::default(),
            params: EngineParams::default(),
        }
    }
}

/// Fully resolved engine settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "kebab-case")]
pub enum EngineSettings {
    Mhm(MhmConfig),
    Accent(AccentConfig),
    WirRandom(WirConfig),
    Alert(AlertConfig),
    StyleTransfer(StyleTransferConfig),
    Beam(BeamConfig),
}

impl EngineSettings {
    pub fn defaults(engine: Engine, task: TaskKind) -> Self {
        match engine {
            Engine::Mhm => EngineSettings::Mhm(MhmConfig::default()),
            Engine::Accent => EngineSettings::Accent(AccentConfig::default()),
            Engine::WirRandom => EngineSettings::WirRandom(WirConfig::default()),
            Engine::Alert => EngineSettings::Alert(AlertConfig::default()),
            Engine::StyleTransfer => EngineSettings::StyleTransfer(StyleTransferConfig::default()),
            Engine::Beam => EngineSettings::Beam(BeamConfig::for_task(task)),
        }
    }

    pub fn engine(&self) -> Engine {
        match self {
            EngineSettings::Mhm(_) => Engine::Mhm,
            EngineSettings::Accent(_) => Engine::Accent,
            EngineSettings::WirRandom(_) => Engine::WirRandom,
            EngineSettings::Alert(_) => Engine::Alert,
            EngineSettings::StyleTransfer(_) => Engine::StyleTransfer,
            EngineSettings::Beam(_) => Engine::Beam,
        }
    }

    /// Same settings with the seed replaced.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            EngineSettings::Mhm(c) => c.seed = seed,
            EngineSettings::Accent(_) => {}
            EngineSettings::WirRandom(c) => c.seed = seed,
            EngineSettings::Alert(c) => c.seed = seed,
            EngineSettings::StyleTransfer(c) => c.seed = seed,
            EngineSettings::Beam(c) => c.seed = seed,
        }
        out
    }
}

impl CampaignConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CampaignError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| file_error(path, e))?;
        let config: CampaignConfig = toml::from_str(&text).map_err(|e| file_error(path, e))?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: String| Err(CampaignError::Config(m));
        let p = &self.params;
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if let Some(k) = p.k_cand {
            if k == 0 || k > MAX_CANDIDATES {
                return bad(format!("k-cand must be in 1..={MAX_CANDIDATES}, got {k}"));
            }
        }
        if p.n == Some(0) {
            return bad("n must be at least 1".into());
        }
        if p.beam == Some(0) {
            return bad("beam must be at least 1".into());
        }
        if p.max_depth == Some(0) {
            return bad("max-depth must be at least 1".into());
        }
        if p.population == Some(0) {
            return bad("population must be at least 1".into());
        }
        if let Some(r) = p.crossover_rate {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("crossover-rate must be in [0, 1], got {r}"));
            }
        }
        if self.victim.max_in_flight == 0 {
            return bad("victim.max-in-flight must be at least 1".into());
        }
        let strategy = self.candidate_strategy();
        if strategy == Some(Strategy::ContextAware) && self.victim.backend != Backend::RemoteService {
            return bad("context-aware candidates need the remote model service".into());
        }
        Ok(())
    }

    /// Candidate strategy the engine will use, `None` for StyleTransfer.
    pub fn candidate_strategy(&self) -> Option<Strategy> {
        if self.engine == Engine::StyleTransfer {
            return None;
        }
        Some(self.candidates.strategy.unwrap_or(match self.engine {
            Engine::Mhm | Engine::WirRandom => Strategy::Random,
            Engine::Accent => Strategy::Cosine,
            _ if self.victim.backend == Backend::RemoteService => Strategy::ContextAware,
            _ => Strategy::Cosine,
        }))
    }

    pub fn engine_settings(&self) -> Result<EngineSettings, CampaignError> {
        self.validate()?;
        let p = &self.params;
        let k_cand = p.k_cand.unwrap_or(DEFAULT_K_CAND);
        let mut settings = EngineSettings::defaults(self.engine, self.task).with_seed(self.seed);
        match &mut settings {
            EngineSettings::Mhm(c) => {
                c.k_cand = k_cand;
                c.max_iter = p.max_iter.unwrap_or(c.max_iter);
            }
            EngineSettings::Accent(c) => c.k_cand = k_cand,
            EngineSettings::WirRandom(c) => c.k_cand = k_cand,
            EngineSettings::Alert(c) => {
                c.k_cand = k_cand;
                c.population = p.population.unwrap_or(c.population);
                c.crossover_rate = p.crossover_rate.unwrap_or(c.crossover_rate);
            }
            EngineSettings::StyleTransfer(c) => {
                c.n = p.n.unwrap_or(c.n);
                c.max_depth = p.max_depth.unwrap_or(c.max_depth);
            }
            EngineSettings::Beam(c) => {
                c.k_cand = k_cand;
                c.beam = p.beam.unwrap_or(c.beam);
                if let Some(path) = &p.priorities {
                    if let Some(table) = load_priorities(path)?.remove(&self.task) {
                        c.priorities = table;
                    }
                }
            }
        }
        Ok(settings)
    }
}

/// Reads a priority override file: for each task an ordered array of
/// `{ kind, weight }` tables.
///
/// ```toml
/// [[clone-detection]]
/// kind = "For"
/// weight = 1.0
///
/// [[clone-detection]]
/// kind = "If"
/// weight = 0.9
/// ```
pub fn load_priorities(path: impl AsRef<Path>) -> Result<HashMap<TaskKind, PriorityTable>, CampaignError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| file_error(path, e))?;
    parse_priorities(&text).map_err(|e| file_error(path, e))
}

pub fn parse_priorities(text: &str) -> Result<HashMap<TaskKind, PriorityTable>, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

pub fn priorities_to_toml(tables: &[(TaskKind, PriorityTable)]) -> String {
    let map: std::collections::BTreeMap<String, &PriorityTable> =
        tables.iter().map(|(task, table)| (task.to_string(), table)).collect();
    toml::to_string_pretty(&map).expect("priority tables serialize")
}

// ---------------------------------------------------------------------------
// Running

/// Outcome of one target, as stored in `traces.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub id: String,
    pub engine: Engine,
    pub success: bool,
    pub original_code: String,
    pub adversarial_code: String,
    pub replacements: Vec<(String, String)>,
    pub queries: u64,
    pub iterations: usize,
    pub objective: Option<f64>,
    pub time_secs: f64,
    pub victim_time_secs: f64,
    pub events: Vec<TraceEvent>,
}

impl TargetRecord {
    fn new(target: &AttackTarget, engine: Engine, outcome: AttackOutcome) -> Self {
        TargetRecord {
            id: target.id.clone(),
            engine,
            success: outcome.success,
            original_code: target.code.clone(),
            adversarial_code: outcome.adversarial_code,
            replacements: outcome.replacements.entries().to_vec(),
            queries: outcome.queries,
            iterations: outcome.iterations,
            objective: outcome.objective,
            time_secs: secs(outcome.wall_time),
            victim_time_secs: secs(outcome.victim_time),
            events: outcome.trace.events,
        }
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Report row for one record. Quality metrics only for successes.
pub fn row_from_record(record: &TargetRecord, provider: &EmbeddingProvider<'_>) -> Result<InstanceRow, CampaignError> {
    let mut row = InstanceRow {
        id: record.id.clone(),
        success: record.success,
        queries: record.queries,
        iterations: record.iterations as u64,
        time_secs: record.time_secs,
        victim_time_secs: record.victim_time_secs,
        changes: None,
        acs: None,
        aed: None,
    };
    if record.success {
        let original = CodeSnippet::parse(&record.original_code)
            .map_err(|e| CampaignError::Config(format!("record {}: {e}", record.id)))?;
        let mut map = ReplacementMap::new();
        for (old, new) in &record.replacements {
            map.record(old, new);
        }
        row.changes = Some(icr_tcr(&original, &record.adversarial_code, &map));
        row.aed = Some(aed(&record.original_code, &record.adversarial_code));
        row.acs = match acs(provider, &record.original_code, &record.adversarial_code) {
            Ok(v) => Some(v),
            Err(MetricError::EmptyText | MetricError::ZeroVector) => None,
            Err(e) => return Err(e.into()),
        };
    }
    Ok(row)
}

/// Loaded, filtered targets plus the shared resources attacks need.
pub struct Prepared {
    pub task: TaskKind,
    pub targets: Vec<AttackTarget>,
    pub skipped: Vec<SkippedRecord>,
    pub loaded: usize,
    pub vocabulary: Vec<String>,
    pub victim: VictimHandle,
    pub remote: Option<Arc<RemoteClient>>,
    /// Queries spent deciding attackability; never charged to an attack.
    pub filter_queries: u64,
}

pub fn prepare(config: &CampaignConfig) -> Result<Prepared, CampaignError> {
    config.validate()?;
    let dataset = corpus::load_dataset(&config.dataset, config.task)?;
    let loaded = dataset.targets.len();
    let vocabulary = dataset.vocabulary();
    let sampled = match config.limit {
        Some(limit) => corpus::sample_targets(&dataset.targets, limit, config.sample_seed),
        None => dataset.targets.clone(),
    };
    let remote = (config.victim.backend == Backend::RemoteService).then(|| {
        Arc::new(RemoteClient::new(RemoteConfig {
            endpoint: config.victim.endpoint.clone(),
            timeout: Duration::from_secs(config.victim.timeout_secs),
            max_in_flight: config.victim.max_in_flight,
        }))
    });
    let victim = match &remote {
        Some(client) => VictimHandle::remote(config.task, Arc::clone(client)),
        None => VictimHandle::surrogate(config.task),
    };
    let filter = victim.scoped();
    let targets = corpus::filter_attackable(&sampled, &filter)?;
    Ok(Prepared {
        task: config.task,
        targets,
        skipped: dataset.skipped,
        loaded,
        vocabulary,
        victim,
        remote,
        filter_queries: filter.query_count(),
    })
}

#[derive(Debug)]
pub struct CampaignResult {
    pub settings: EngineSettings,
    pub records: Vec<TargetRecord>,
    pub report: MetricsReport,
    pub loaded: usize,
    pub skipped: Vec<SkippedRecord>,
    pub filter_queries: u64,
}

fn target_seed(seed: u64, id: &str) -> u64 {
    let mut bytes = seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(id.as_bytes());
    fnv1a(&bytes)
}

/// Runs `settings` on every prepared target, each with its own query
/// counter. Records come back in target order whatever the worker count.
pub fn attack_all(
    prepared: &Prepared,
    settings: &EngineSettings,
    candidates: &CandidateSettings,
    strategy: Option<Strategy>,
    workers: usize,
) -> Result<Vec<TargetRecord>, (Vec<TargetRecord>, CampaignError)> {
    let table = match strategy {
        Some(Strategy::Cosine | Strategy::ContextAware) => match &candidates.embeddings {
            Some(path) => Some(EmbeddingTable::load(path).map_err(|e| (Vec::new(), e.into()))?),
            None => Some(EmbeddingTable::trigram_fallback(&prepared.vocabulary, FALLBACK_EMBEDDING_DIM)),
        },
        _ => None,
    };
    let source = match strategy {
        None | Some(Strategy::Random) => CandidateSource::Random {
            vocabulary: &prepared.vocabulary,
        },
        Some(Strategy::Cosine) => CandidateSource::Cosine {
            table: table.as_ref().expect("table built for cosine"),
        },
        Some(Strategy::ContextAware) => match &prepared.remote {
            Some(remote) => CandidateSource::ContextAware {
                remote,
                fallback: table.as_ref().filter(|_| candidates.fallback_on_error),
            },
            None => {
                return Err((
                    Vec::new(),
                    CampaignError::Config("context-aware candidates need the remote model service".into()),
                ))
            }
        },
    };

    let n = prepared.targets.len();
    let results: Mutex<Vec<Option<Result<TargetRecord, CampaignError>>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let failed = std::sync::atomic::AtomicBool::new(false);
    let work = || loop {
        if failed.load(Ordering::SeqCst) {
            break;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= n {
            break;
        }
        let target = &prepared.targets[i];
        let victim = prepared.victim.scoped();
        let seeded = settings.with_seed(target_seed(seed_of(settings), &target.id));
        let result = run_engine(target, &victim, &source, &seeded)
            .map(|outcome| TargetRecord::new(target, settings.engine(), outcome))
            .map_err(CampaignError::from);
        if result.is_err() {
            failed.store(true, Ordering::SeqCst);
        }
        results.lock().expect("no poisoned workers")[i] = Some(result);
    };
    std::thread::scope(|scope| {
        for _ in 1..workers.max(1).min(n.max(1)) {
            scope.spawn(work);
        }
        work();
    });

    let mut records = Vec::with_capacity(n);
    let mut error = None;
    for slot in results.into_inner().expect("no poisoned workers") {
        match slot {
            Some(Ok(record)) => records.push(record),
            Some(Err(e)) => {
                error.get_or_insert(e);
            }
            None => {}
        }
    }
    match error {
        Some(e) => Err((records, e)),
        None => Ok(records),
    }
}

fn seed_of(settings: &EngineSettings) -> u64 {
    match settings {
        EngineSettings::Mhm(c) => c.seed,
        EngineSettings::Accent(_) => 0,
        EngineSettings::WirRandom(c) => c.seed,
        EngineSettings::Alert(c) => c.seed,
        EngineSettings::StyleTransfer(c) => c.seed,
        EngineSettings::Beam(c) => c.seed,
    }
}

pub fn run_engine(
    target: &AttackTarget,
    victim: &VictimHandle,
    source: &CandidateSource<'_>,
    settings: &EngineSettings,
) -> Result<AttackOutcome, AttackError> {
    match settings {
        EngineSettings::Mhm(c) => attack_mhm(target, victim, source, c),
        EngineSettings::Accent(c) => attack_accent(target, victim, source, c),
        EngineSettings::WirRandom(c) => attack_wir_random(target, victim, source, c),
        EngineSettings::Alert(c) => attack_alert(target, victim, source, c),
        EngineSettings::StyleTransfer(c) => attack_styletransfer(target, victim, c),
        EngineSettings::Beam(c) => attack_beam(target, victim, source, c),
    }
}

fn embedding_provider(remote: Option<&RemoteClient>) -> EmbeddingProvider<'_> {
    match remote {
        Some(client) => EmbeddingProvider::RemoteService(client),
        None => EmbeddingProvider::LocalFallback,
    }
}

pub fn report_from_records(records: &[TargetRecord], provider: &EmbeddingProvider<'_>) -> Result<MetricsReport, CampaignError> {
    let rows = records
        .iter()
        .map(|r| row_from_record(r, provider))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate(rows))
}

/// Loads, filters, attacks, and writes every output file. On a fatal error
/// the finished targets are still written, next to a `PARTIAL` marker.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignResult, CampaignError> {
    let settings = config.engine_settings()?;
    let prepared = prepare(config)?;
    run_prepared(config, &prepared, &settings, &config.output)
}

fn run_prepared(
    config: &CampaignConfig,
    prepared: &Prepared,
    settings: &EngineSettings,
    output: &Path,
) -> Result<CampaignResult, CampaignError> {
    fs::create_dir_all(output).map_err(|e| file_error(output, e))?;
    let _ = fs::remove_file(output.join("PARTIAL"));
    let provider = embedding_provider(prepared.remote.as_deref());
    let (records, failure) =
        match attack_all(prepared, settings, &config.candidates, config.candidate_strategy(), config.workers) {
            Ok(records) => (records, None),
            Err((records, e)) => (records, Some(e)),
        };
    let report = report_from_records(&records, &provider)?;
    let result = CampaignResult {
        settings: settings.clone(),
        records,
        report,
        loaded: prepared.loaded,
        skipped: prepared.skipped.clone(),
        filter_queries: prepared.filter_queries,
    };
    write_outputs(output, config, &result)?;
    if let Some(e) = failure {
        let marker = output.join("PARTIAL");
        fs::write(&marker, format!("{e}\n")).map_err(|err| file_error(&marker, err))?;
        return Err(e);
    }
    Ok(result)
}

fn write(path: &Path, text: &str) -> Result<(), CampaignError> {
    fs::write(path, text).map_err(|e| file_error(path, e))
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("serializable") + "\n")
        .collect()
}

pub fn write_outputs(dir: &Path, config: &CampaignConfig, result: &CampaignResult) -> Result<(), CampaignError> {
    write(&dir.join("report.jsonl"), &result.report.to_jsonl(false))?;
    write(&dir.join("traces.jsonl"), &jsonl(&result.records))?;
    let timing: Vec<_> = result
        .records
        .iter()
        .map(|r| serde_json::json!({ "id": r.id, "time_secs": r.time_secs, "victim_time_secs": r.victim_time_secs }))
        .collect();
    write(&dir.join("timing.jsonl"), &jsonl(&timing))?;
    write(&dir.join("skipped.jsonl"), &jsonl(&result.skipped))?;
    write(&dir.join("table.txt"), &result.report.to_table(config.engine.as_str()))?;
    let mut resolved = config.to_toml();
    resolved.push_str("\n# resolved engine settings\n");
    resolved.push_str(&toml::to_string_pretty(&result.settings).expect("settings serialize"));
    write(&dir.join("config.toml"), &resolved)?;
    Ok(())
}

/// Reads `traces.jsonl` back.
pub fn read_traces(path: impl AsRef<Path>) -> Result<Vec<TargetRecord>, CampaignError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| file_error(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| file_error(path, format!("line {}: {e}", i + 1))))
        .collect()
}

/// Recomputes a report from stored traces.
pub fn metrics_from_traces(path: impl AsRef<Path>, remote: Option<&RemoteClient>) -> Result<MetricsReport, CampaignError> {
    let records = read_traces(path)?;
    report_from_records(&records, &embedding_provider(remote))
}

// ---------------------------------------------------------------------------
// Comparison

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Better {
    Higher,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTest {
    pub metric: String,
    pub better: Better,
    /// One-sided p-value for "the first engine is better"; `None` when a
    /// sample is empty.
    pub p_value: Option<f64>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label_a: String,
    pub label_b: String,
    pub report_a: MetricsReport,
    pub report_b: MetricsReport,
    pub tests: Vec<MetricTest>,
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", table_header());
        let _ = writeln!(out, "{}", self.report_a.table_row(&self.label_a));
        let _ = writeln!(out, "{}", self.report_b.table_row(&self.label_b));
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "one-sided Mann-Whitney U, H1: {} better than {} (* p < {SIGNIFICANCE_LEVEL})",
            self.label_a, self.label_b
        );
        for t in &self.tests {
            let p = t.p_value.map_or_else(|| "-".to_owned(), |p| format!("{p:.4}"));
            let better = match t.better {
                Better::Higher => "higher",
                Better::Lower => "lower",
            };
            let flag = if t.significant { "*" } else { "" };
            let _ = writeln!(out, "{:<4} ({better:<6} is better)  p = {p}{flag}", t.metric);
        }
        out
    }
}

fn per_instance(report: &MetricsReport, metric: &str) -> Vec<f64> {
    let wins = || report.rows.iter().filter(|r| r.success);
    match metric {
        "ASR" => report.rows.iter().map(|r| f64::from(u8::from(r.success))).collect(),
        "AMQ" => report.rows.iter().map(|r| r.queries as f64).collect(),
        "ART" => report.rows.iter().map(|r| r.time_secs / 60.0).collect(),
        "ICR" => wins().filter_map(|r| r.icr()).collect(),
        "TCR" => wins().filter_map(|r| r.tcr()).collect(),
        "ACS" => wins().filter_map(|r| r.acs).collect(),
        "AED" => wins().filter_map(|r| r.aed.map(|d| d as f64)).collect(),
        _ => Vec::new(),
    }
}

pub const COMPARED_METRICS: [(&str, Better); 7] = [
    ("ASR", Better::Higher),
    ("AMQ", Better::Lower),
    ("ART", Better::Lower),
    ("ICR", Better::Lower),
    ("TCR", Better::Lower),
    ("ACS", Better::Higher),
    ("AED", Better::Lower),
];

pub fn compare_reports(label_a: &str, a: &MetricsReport, label_b: &str, b: &MetricsReport) -> Comparison {
    let tests = COMPARED_METRICS
        .iter()
        .map(|&(metric, better)| {
            let alternative = match better {
                Better::Higher => Alternative::Greater,
                Better::Lower => Alternative::Less,
            };
            let p_value = mann_whitney_u(&per_instance(a, metric), &per_instance(b, metric), alternative)
                .ok()
                .map(|t| t.p_value);
            MetricTest {
                metric: metric.to_owned(),
                better,
                p_value,
                significant: p_value.is_some_and(|p| p < SIGNIFICANCE_LEVEL),
            }
        })
        .collect();
    Comparison {
        label_a: label_a.to_owned(),
        label_b: label_b.to_owned(),
        report_a: a.clone(),
        report_b: b.clone(),
        tests,
    }
}

/// Runs both campaigns on one shared, filtered target list and writes each
/// into `output/<a|b>/` plus `comparison.txt` and `comparison.json`.
pub fn compare_engines(a: &CampaignConfig, b: &CampaignConfig, output: &Path) -> Result<Comparison, CampaignError> {
    if a.task != b.task || a.dataset != b.dataset || a.limit != b.limit || a.sample_seed != b.sample_seed {
        return Err(CampaignError::Config(
            "compared campaigns must share task, dataset, limit, and sample-seed".into(),
        ));
    }
    if a.victim != b.victim {
        return Err(CampaignError::Config("compared campaigns must attack the same victim".into()));
    }
    let settings_a = a.engine_settings()?;
    let settings_b = b.engine_settings()?;
    let prepared = prepare(a)?;
    let label = |c: &CampaignConfig, other: &CampaignConfig| {
        if c.engine == other.engine {
            format!("{}-{}", c.engine, if std::ptr::eq(c, a) { "a" } else { "b" })
        } else {
            c.engine.to_string()
        }
    };
    let (label_a, label_b) = (label(a, b), label(b, a));
    let result_a = run_prepared(a, &prepared, &settings_a, &output.join("a"))?;
    let result_b = run_prepared(b, &prepared, &settings_b, &output.join("b"))?;
    let comparison = compare_reports(&label_a, &result_a.report, &label_b, &result_b.report);
    write(&output.join("comparison.txt"), &comparison.to_table())?;
    write(
        &output.join("comparison.json"),
        &(serde_json::to_string_pretty(&comparison).expect("serializable") + "\n"),
    )?;
    Ok(comparison)
}
