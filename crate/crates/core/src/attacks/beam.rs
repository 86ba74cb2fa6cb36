use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{derive_seed, perturb_step, AttackError, AttackOutcome, AttackRun, PriorityTable, Renamed, DEFAULT_K_CAND};
use crate::candidates::CandidateSource;
use crate::corpus::{AttackTarget, TaskKind};
use crate::syntax::ReplacementMap;
use crate::victim::VictimHandle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam: usize,
    pub priorities: PriorityTable,
    pub k_cand: usize,
    pub seed: u64,
}

impl BeamConfig {
    pub fn default_beam(task: TaskKind) -> usize {
        match task {
            TaskKind::CloneDetection => 2,
            TaskKind::VulnerabilityDetection => 3,
            TaskKind::CodeSummarization => 5,
        }
    }

    pub fn for_task(task: TaskKind) -> Self {
        BeamConfig {
            beam: Self::default_beam(task),
            priorities: PriorityTable::default_for(task),
            k_cand: DEFAULT_K_CAND,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    state: Renamed,
    objective: f64,
    event: Option<usize>,
}

enum Search {
    Done(Vec<Entry>),
    Success(Entry),
}

struct Beam<'s, 'c> {
    source: &'s CandidateSource<'c>,
    width: usize,
    k_cand: usize,
    seed: u64,
    steps: usize,
}

impl Beam<'_, '_> {
    /// Expands every entry on every identifier of `seq`, keeps the best
    /// `width` of old and new, and stops early once a round changes
    /// nothing.
    fn search(
        &mut self,
        run: &mut AttackRun<'_>,
        mut population: Vec<Entry>,
        seq: &[String],
        max_iter: usize,
    ) -> Result<Search, AttackError> {
        for _ in 0..max_iter {
            run.next_iteration();
            let mut offspring = Vec::new();
            for entry in &population {
                for identifier in seq {
                    let seed = derive_seed(self.seed, self.steps, identifier);
                    self.steps += 1;
                    let Some(p) = perturb_step(run, &entry.state, identifier, self.source, self.k_cand, seed)? else {
                        continue;
                    };
                    let next = Entry {
                        state: p.state,
                        objective: p.evaluation.objective,
                        event: Some(p.evaluation.event),
                    };
                    if p.evaluation.success {
                        return Ok(Search::Success(next));
                    }
                    offspring.push(next);
                }
            }
            let before: Vec<String> = population.iter().map(|e| e.state.snippet.source().to_owned()).collect();
            let selected = select(population.into_iter().chain(offspring).collect(), self.width);
            let after: Vec<&str> = selected.iter().map(|e| e.state.snippet.source()).collect();
            for entry in &selected {
                if !before.iter().any(|b| b == entry.state.snippet.source()) {
                    if let Some(event) = entry.event {
                        run.accept(event);
                    }
                }
            }
            let unchanged = before.iter().map(String::as_str).eq(after.iter().copied());
            population = selected;
            if unchanged {
                break;
            }
        }
        Ok(Search::Done(population))
    }
}

/// The `width` lowest-objective distinct programs; earlier entries win ties.
fn select(mut pool: Vec<Entry>, width: usize) -> Vec<Entry> {
    pool.sort_by(|a, b| a.objective.total_cmp(&b.objective));
    let mut seen = HashSet::new();
    pool.retain(|e| seen.insert(e.state.snippet.source().to_owned()));
    pool.truncate(width);
    pool
}

/// Beam search over identifier groups in statement-priority order, then a
/// final pass over every identifier replaced along the way.
pub fn attack_beam(
    target: &AttackTarget,
    victim: &VictimHandle,
    source: &CandidateSource<'_>,
    config: &BeamConfig,
) -> Result<AttackOutcome, AttackError> {
    if config.beam == 0 {
        return Err(AttackError::Config("beam size must be positive".into()));
    }
    let original = target.snippet();
    let mut run = AttackRun::new(target, victim);
    if original.identifiers().is_empty() {
        return Ok(run.finish(false, &target.code, ReplacementMap::new(), None));
    }
    let base = run.evaluate(&target.code, None, None)?;
    run.accept(base.event);
    if base.success {
        return Ok(run.finish(true, &target.code, ReplacementMap::new(), Some(base.objective)));
    }

    let groups = original.statement_groups();
    let mut beam = Beam {
        source,
        width: config.beam,
        k_cand: config.k_cand,
        seed: config.seed,
        steps: 0,
    };
    let mut population = vec![Entry {
        state: Renamed::original(original),
        objective: base.objective,
        event: Some(base.event),
    }];
    let mut replaced: Vec<String> = Vec::new();
    for &(kind, weight) in config.priorities.entries() {
        let seq = groups.get(kind);
        if seq.is_empty() {
            continue;
        }
        let max_iter = (seq.len() as f64 * weight).ceil() as usize;
        population = match beam.search(&mut run, population, seq, max_iter)? {
            Search::Success(entry) => return Ok(finish_success(run, entry)),
            Search::Done(p) => p,
        };
        for entry in &population {
            for name in entry.state.map.originals() {
                if !replaced.iter().any(|r| r == name) {
                    replaced.push(name.to_owned());
                }
            }
        }
    }
    population = match beam.search(&mut run, population, &replaced, replaced.len())? {
        Search::Success(entry) => return Ok(finish_success(run, entry)),
        Search::Done(p) => p,
    };
    let best = population.into_iter().next().expect("population never empties");
    Ok(run.finish(false, best.state.snippet.source(), best.state.map, Some(best.objective)))
}

fn finish_success(mut run: AttackRun<'_>, entry: Entry) -> AttackOutcome {
    if let Some(event) = entry.event {
        run.accept(event);
    }
    run.finish(true, entry.state.snippet.source(), entry.state.map, Some(entry.objective))
}
