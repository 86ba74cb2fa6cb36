use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    derive_seed, importance_ranking, perturb_step, AttackError, AttackOutcome, AttackRun, Evaluation,
    Renamed, DEFAULT_K_CAND,
};
use crate::candidates::CandidateSource;
use crate::corpus::AttackTarget;
use crate::syntax::ReplacementMap;
use crate::transforms::{sample_variants_with_depth, DEFAULT_MAX_DEPTH};
use crate::victim::VictimHandle;

const MARGIN_FLOOR: f64 = 1e-6;

/// Probability of moving from a state with objective `current` to one with
/// objective `proposed`. Improvements are always taken; otherwise the
/// ratio of margins `1 - objective`, each clamped to `[1e-6, 1]`.
pub fn mhm_accept_probability(current: f64, proposed: f64) -> f64 {
    if proposed < current {
        return 1.0;
    }
    let margin = |o: f64| (1.0 - o).clamp(MARGIN_FLOOR, 1.0);
    (margin(proposed) / margin(current)).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MhmConfig {
    pub max_iter: usize,
    pub k_cand: usize,
    pub seed: u64,
}

impl Default for MhmConfig {
    fn default() -> Self {
        MhmConfig {
            max_iter: 100,
            k_cand: DEFAULT_K_CAND,
            seed: 0,
        }
    }
}

/// Metropolis-Hastings identifier substitution: each iteration proposes
/// the best of `k_cand` random names for one random identifier.
pub fn attack_mhm(
    target: &AttackTarget,
    victim: &VictimHandle,
    source: &CandidateSource<'_>,
    config: &MhmConfig,
) -> Result<AttackOutcome, AttackError> {
    let original = target.snippet();
    let mut run = AttackRun::new(target, victim);
    if config.max_iter == 0 || original.identifiers().is_empty() {
        return Ok(run.finish(false, &target.code, ReplacementMap::new(), None));
    }
    let names: Vec<String> = original.identifier_names().map(str::to_owned).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = Renamed::original(original);
    let base = run.evaluate(&target.code, None, None)?;
    run.accept(base.event);
    let mut current = base;
    if current.success {
        return Ok(run.finish(true, &target.code, ReplacementMap::new(), Some(current.objective)));
    }
    for step in 0..config.max_iter {
        run.next_iteration();
        let identifier = names.choose(&mut rng).expect("non-empty");
        let draw: f64 = rng.gen();
        let seed = derive_seed(config.seed, step, identifier);
        let Some(proposal) = perturb_step(&mut run, &state, identifier, source, config.k_cand, seed)? else {
            continue;
        };
        let eval = proposal.evaluation;
        if eval.success || draw < mhm_accept_probability(current.objective, eval.objective) {
            run.accept(eval.event);
            state = proposal.state;
            current = eval;
            if eval.success {
                break;
            }
        }
    }
    Ok(run.finish(current.success, state.snippet.source(), state.map, Some(current.objective)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccentConfig {
    pub k_cand: usize,
}

impl Default for AccentConfig {
    fn default() -> Self {
        AccentConfig { k_cand: DEFAULT_K_CAND }
    }
}

type Ranked = (f64, usize, String, Vec<(f64, String)>);

/// Scores every candidate of every identifier against the clean code, then
/// commits identifiers in order of their best drop, each at most once.
pub fn attack_accent(
    target: &AttackTarget,
    victim: &VictimHandle,
    source: &CandidateSource<'_>,
    config: &AccentConfig,
) -> Result<AttackOutcome, AttackError> {
    let original = target.snippet();
    let mut run = AttackRun::new(target, victim);
    if original.identifiers().is_empty() {
        return Ok(run.finish(false, &target.code, ReplacementMap::new(), None));
    }
    let clean = Renamed::original(original);
    let base = run.evaluate(&target.code, None, None)?;
    run.accept(base.event);
    if base.success {
        return Ok(run.finish(true, &target.code, ReplacementMap::new(), Some(base.objective)));
    }

    // (best objective, position, identifier, scored candidates)
    let mut ranked: Vec<Ranked> = Vec::new();
    for (position, id) in original.identifiers().iter().enumerate() {
        let list = source.candidates(original, &id.name, config.k_cand, derive_seed(0, position, &id.name))?;
        let mut scored = Vec::new();
        for candidate in list.candidates {
            let Some(next) = clean.rename(&id.name, &candidate) else {
                continue;
            };
            let eval = run.evaluate(next.snippet.source(), Some(&id.name), Some(&candidate))?;
            if eval.success {
                run.accept(eval.event);
                return Ok(run.finish(true, next.snippet.source(), next.map, Some(eval.objective)));
            }
            scored.push((eval.objective, candidate));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let drop = scored.first().map_or(f64::NEG_INFINITY, |(o, _)| base.objective - o);
        ranked.push((drop, position, id.name.clone(), scored));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut state = clean;
    let mut current = base;
    for (_, _, name, scored) in ranked {
        run.next_iteration();
        let Some((next, candidate)) = scored
            .iter()
            .find_map(|(_, c)| state.rename(&name, c).map(|n| (n, c)))
        else {
            continue;
        };
        let eval = run.evaluate(next.snippet.source(), Some(&name), Some(candidate))?;
        if eval.success || eval.objective < current.objective {
            run.accept(eval.event);
            state = next;
            current = eval;
            if eval.success {
                break;
            }
        }
    }
    Ok(run.finish(current.success, state.snippet.source(), state.map, Some(current.objective)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WirConfig {
    pub k_cand: usize,
    pub seed: u64,
}

impl Default for WirConfig {
    fn default() -> Self {
        WirConfig {
            k_cand: DEFAULT_K_CAND,
            seed: 0,
        }
    }
}

/// One pass over identifiers in importance order, each replaced by the best
/// of `k_cand` random names when that lowers the objective.
pub fn attack_wir_random(
    target: &AttackTarget,
    victim: &VictimHandle,
    source: &CandidateSource<'_>,
    config: &WirConfig,
) -> Result<AttackOutcome, AttackError> {
    greedy(target, victim, source, config.k_cand, config.seed)
}

fn greedy(
    target: &AttackTarget,
    victim: &VictimHandle,
    source: &CandidateSource<'_>,
    k_cand: usize,
    seed: u64,
) -> Result<AttackOutcome, AttackError> {
    let mut run = AttackRun::new(target, victim);
    Ok(match greedy_pass(&mut run, source, k_cand, seed)? {
        Some((state, current)) => {
            run.finish(current.success, state.snippet.source(), state.map, Some(current.objective))
        }
        None => run.finish(false, &target.code, ReplacementMap::new(), None),
    })
}

/// Shared by WIR-Random and the first ALERT phase. `None`, with no query
/// spent, when there is nothing to rename.
fn greedy_pass(
    run: &mut AttackRun<'_>,
    source: &CandidateSource<'_>,
    k_cand: usize,
    seed: u64,
) -> Result<Option<(Renamed, Evaluation)>, AttackError> {
    let target = run.target();
    let original = target.snippet();
    if original.identifiers().is_empty() {
        return Ok(None);
    }
    let base = run.evaluate(&target.code, None, None)?;
    run.accept(base.event);
    let mut state = Renamed::original(original);
    let mut current = base;
    if base.success {
        return Ok(Some((state, current)));
    }
    let order = importance_ranking(run, original, base.objective)?;
    for (step, name) in order.iter().enumerate() {
        run.next_iteration();
        let step_seed = derive_seed(seed, step, name);
        let Some(p) = perturb_step(run, &state, name, source, k_cand, step_seed)? else {
            continue;
        };
        if p.evaluation.success || p.evaluation.objective < current.objective {
            run.accept(p.evaluation.event);
            state = p.state;
            current = p.evaluation;
            if current.success {
                break;
            }
        }
    }
    Ok(Some((state, current)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlertConfig {
    pub k_cand: usize,
    pub population: usize,
    pub crossover_rate: f64,
    pub seed: u64,
}

impl Default for AlertConfig {
    fn default() -> Self {
        AlertConfig {
            k_cand: DEFAULT_K_CAND,
            population: 30,
            crossover_rate: 0.7,
            seed: 0,
        }
    }
}

/// Greedy substitution in importance order; if that fails, a genetic
/// search over per-identifier substitutes seeded from the greedy result.
pub fn attack_alert(
    target: &AttackTarget,
    victim: &VictimHandle,
    source: &CandidateSource<'_>,
    config: &AlertConfig,
) -> Result<AttackOutcome, AttackError> {
    if config.population == 0 || !(0.0..=1.0).contains(&config.crossover_rate) {
        return Err(AttackError::Config("population must be positive and crossover rate in [0, 1]".into()));
    }
    let mut run = AttackRun::new(target, victim);
    let Some((state, greedy_best)) = greedy_pass(&mut run, source, config.k_cand, config.seed)? else {
        return Ok(run.finish(false, &target.code, ReplacementMap::new(), None));
    };
    if greedy_best.success {
        return Ok(run.finish(true, state.snippet.source(), state.map, Some(greedy_best.objective)));
    }
    genetic(run, source, config, state, greedy_best.objective)
}

type Chromosome = Vec<String>;

struct Genetic<'p> {
    names: Vec<String>,
    pools: Vec<Vec<String>>,
    original: &'p crate::syntax::CodeSnippet,
}

impl Genetic<'_> {
    fn realise(&self, genes: &Chromosome) -> Option<Renamed> {
        let mut state = Renamed::original(self.original);
        for (name, gene) in self.names.iter().zip(genes) {
            if gene != name {
                state = state.rename(name, gene)?;
            }
        }
        Some(state)
    }

    fn mutate(&self, genes: &mut Chromosome, rng: &mut ChaCha8Rng) {
        let slots: Vec<usize> = (0..genes.len()).filter(|&i| !self.pools[i].is_empty()).collect();
        if let Some(&i) = slots.choose(rng) {
            genes[i] = self.pools[i].choose(rng).expect("non-empty pool").clone();
        }
    }
}

fn genetic(
    mut run: AttackRun<'_>,
    source: &CandidateSource<'_>,
    config: &AlertConfig,
    greedy_state: Renamed,
    greedy_objective: f64,
) -> Result<AttackOutcome, AttackError> {
    let target = run.target();
    let original = target.snippet();
    let names: Vec<String> = original.identifier_names().map(str::to_owned).collect();
    let mut pools = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let list = source.candidates(original, name, config.k_cand, derive_seed(config.seed, i, name))?;
        pools.push(list.candidates);
    }
    let ga = Genetic {
        names: names.clone(),
        pools,
        original,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xA1E7);
    let mut cache: HashMap<String, f64> = HashMap::new();
    let seed_genes: Chromosome = names.iter().map(|n| greedy_state.current(n).to_owned()).collect();
    cache.insert(greedy_state.snippet.source().to_owned(), greedy_objective);

    let mut best = (greedy_objective, greedy_state);
    let mut population: Vec<(f64, Chromosome)> = vec![(greedy_objective, seed_genes.clone())];

    let score = |run: &mut AttackRun<'_>,
                     genes: &Chromosome,
                     cache: &mut HashMap<String, f64>|
     -> Result<Option<(f64, bool, Renamed)>, AttackError> {
        let Some(state) = ga.realise(genes) else {
            return Ok(None);
        };
        if let Some(&o) = cache.get(state.snippet.source()) {
            return Ok(Some((o, false, state)));
        }
        let eval = run.evaluate(state.snippet.source(), None, None)?;
        cache.insert(state.snippet.source().to_owned(), eval.objective);
        if eval.success {
            run.accept(eval.event);
        }
        Ok(Some((eval.objective, eval.success, state)))
    };

    while population.len() < config.population {
        let mut genes = seed_genes.clone();
        ga.mutate(&mut genes, &mut rng);
        if let Some((o, success, state)) = score(&mut run, &genes, &mut cache)? {
            if success {
                return Ok(run.finish(true, state.snippet.source(), state.map, Some(o)));
            }
            if o < best.0 {
                best = (o, state);
            }
            population.push((o, genes));
        } else {
            population.push((f64::INFINITY, genes));
        }
    }

    let generations = (5 * names.len()).max(10);
    for _ in 0..generations {
        run.next_iteration();
        let mut children = Vec::with_capacity(config.population);
        for _ in 0..config.population {
            let mut child = if rng.gen::<f64>() < config.crossover_rate && names.len() > 1 {
                let a = &population[rng.gen_range(0..population.len())].1;
                let b = &population[rng.gen_range(0..population.len())].1;
                let point = rng.gen_range(1..names.len());
                a[..point].iter().chain(&b[point..]).cloned().collect()
            } else {
                population[rng.gen_range(0..population.len())].1.clone()
            };
            ga.mutate(&mut child, &mut rng);
            let Some((o, success, state)) = score(&mut run, &child, &mut cache)? else {
                continue;
            };
            if success {
                return Ok(run.finish(true, state.snippet.source(), state.map, Some(o)));
            }
            if o < best.0 {
                best = (o, state);
            }
            children.push((o, child));
        }
        population.extend(children);
        population.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut seen = HashSet::new();
        population.retain(|(_, genes)| seen.insert(genes.clone()));
        population.truncate(config.population);
    }
    let (objective, state) = best;
    Ok(run.finish(false, state.snippet.source(), state.map, Some(objective)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleTransferConfig {
    pub n: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for StyleTransferConfig {
    fn default() -> Self {
        StyleTransferConfig {
            n: 500,
            max_depth: DEFAULT_MAX_DEPTH,
            seed: 0,
        }
    }
}

/// Scores up to `n` style-transferred variants in order, stopping at the
/// first that succeeds. The clean code is never queried.
pub fn attack_styletransfer(
    target: &AttackTarget,
    victim: &VictimHandle,
    config: &StyleTransferConfig,
) -> Result<AttackOutcome, AttackError> {
    let mut run = AttackRun::new(target, victim);
    let variants = sample_variants_with_depth(target.snippet(), config.n, config.seed, config.max_depth)?;
    let mut best: Option<(f64, String)> = None;
    for variant in variants {
        run.next_iteration();
        let label = variant.applied.iter().map(|k| k.name()).collect::<Vec<_>>().join("+");
        let eval = run.evaluate(&variant.code, None, Some(&label))?;
        if eval.success {
            run.accept(eval.event);
            return Ok(run.finish(true, &variant.code, ReplacementMap::new(), Some(eval.objective)));
        }
        if best.as_ref().is_none_or(|(o, _)| eval.objective < *o) {
            best = Some((eval.objective, variant.code));
        }
    }
    Ok(match best {
        Some((o, code)) => run.finish(false, &code, ReplacementMap::new(), Some(o)),
        None => run.finish(false, &target.code, ReplacementMap::new(), None),
    })
}
