//! One function per acceptance criterion. Each returns a verdict with a
//! short measurement summary; failures list the first offending cases.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use codeattack::attacks::{
    attack_accent, attack_alert, attack_beam, attack_mhm, attack_styletransfer, attack_wir_random, objective,
    perturb_step, AccentConfig, AlertConfig, AttackOutcome, AttackRun, BeamConfig, Engine, MhmConfig,
    PriorityTable, Renamed, StyleTransferConfig, WirConfig,
};
use codeattack::campaign::{run_campaign, CampaignConfig};
use codeattack::candidates::{cosine_candidates, CandidateSource, EmbeddingTable};
use codeattack::corpus::{AttackTarget, TaskKind, Truth};
use codeattack::metrics::{aed, bleu4, edit_script_changes, icr_tcr, mann_whitney_u, token_edit_distance, Alternative};
use codeattack::syntax::{tokenize, CodeSnippet, StatementKind, TokenKind};
use codeattack::transforms::{apply, site_count, TransformKind};
use codeattack::victim::{is_success, VictimHandle, VictimResponse};

use super::oracles;
use super::{group_cases, snippets, surrogate_targets, trigram_table};

pub const ROUND_TRIP_LIMIT: Duration = Duration::from_secs(10);
pub const TRANSFORM_LIMIT: Duration = Duration::from_secs(60);
pub const BUDGET_LIMIT: Duration = Duration::from_secs(300);
pub const VARIANTS_PER_KIND: usize = 1000;
pub const BOOL_FLIP_PAIRS: usize = 100;
pub const ORACLE_CASES: usize = 60;
pub const REAL_TOLERANCE: f64 = 1e-9;
pub const PERTURB_LIMIT: u64 = 30;
pub const STYLE_N: usize = 500;

pub struct Verdict {
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn new(failures: &[String], summary: String) -> Self {
        let detail = if failures.is_empty() {
            summary
        } else {
            let shown: Vec<&str> = failures.iter().take(5).map(String::as_str).collect();
            format!("{summary}; {} failure(s): {}", failures.len(), shown.join(" | "))
        };
        Verdict {
            passed: failures.is_empty(),
            detail,
        }
    }
}

const TASKS: [TaskKind; 3] = [
    TaskKind::CloneDetection,
    TaskKind::VulnerabilityDetection,
    TaskKind::CodeSummarization,
];

/// Any Java identifier, `$` included; names the generator rule rejects are
/// for testing that they get filtered.
fn random_java_name(rng: &mut ChaCha8Rng) -> String {
    const FIRST: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_$";
    const REST: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_$";
    let len = rng.gen_range(0..9);
    let mut s = String::new();
    s.push(*FIRST.choose(rng).unwrap() as char);
    for _ in 0..len {
        s.push(*REST.choose(rng).unwrap() as char);
    }
    s
}

fn random_name(rng: &mut ChaCha8Rng) -> String {
    loop {
        let s = random_java_name(rng);
        if oracles::is_generator_name(&s) {
            return s;
        }
    }
}

fn is_obviously_fresh(code: &str, name: &str) -> bool {
    name != "_" && !oracles::JAVA_RESERVED.contains(&name) && !oracles::words(code).contains(&name)
}

// ---------------------------------------------------------------------------

pub fn syntax_round_trip() -> Verdict {
    let start = Instant::now();
    let corpus = snippets();
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut renames = 0;
    for s in &corpus {
        let snippet = match CodeSnippet::parse(&s.code) {
            Ok(x) => x,
            Err(e) => {
                failures.push(format!("{}: parse {e}", s.id));
                continue;
            }
        };
        if snippet.render() != s.code {
            failures.push(format!("{}: render differs", s.id));
        }
        let ids: Vec<String> = snippet.identifier_names().map(str::to_owned).collect();
        for _ in 0..5 {
            let Some(old) = ids.choose(&mut rng) else { break };
            let new = loop {
                let n = random_name(&mut rng);
                if is_obviously_fresh(&s.code, &n) {
                    break n;
                }
            };
            renames += 1;
            match snippet.rename(old, &new) {
                Ok(r) => match CodeSnippet::parse(r.source()) {
                    Ok(re) if re.identifiers().len() == ids.len() && re.contains_identifier(&new) => {}
                    Ok(_) => failures.push(format!("{}: {old}->{new} changed the identifier set", s.id)),
                    Err(e) => failures.push(format!("{}: {old}->{new} reparse {e}", s.id)),
                },
                Err(e) => failures.push(format!("{}: {old}->{new} rejected: {e}", s.id)),
            }
        }
    }
    let elapsed = start.elapsed();
    if corpus.len() < 200 {
        failures.push(format!("only {} snippets", corpus.len()));
    }
    if elapsed > ROUND_TRIP_LIMIT {
        failures.push(format!("took {elapsed:?}"));
    }
    Verdict::new(
        &failures,
        format!("{} snippets, {renames} renames, {:.2}s", corpus.len(), elapsed.as_secs_f64()),
    )
}

pub fn statement_grouping() -> Verdict {
    let cases = group_cases();
    let mut failures = Vec::new();
    for case in &cases {
        let snippet = match CodeSnippet::parse(&case.code) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("{}: {e}", case.name));
                continue;
            }
        };
        let groups = snippet.statement_groups();
        for kind in StatementKind::ALL {
            let got = groups.get(kind);
            let want = case.expected(kind);
            if got != want.as_slice() {
                failures.push(format!("{} {kind}: got {got:?}, want {want:?}", case.name));
            }
        }
    }
    let contest = cases.iter().find(|c| c.name == "contest-solution-for-loop").expect("contest case");
    let for_group = CodeSnippet::parse(&contest.code)
        .map(|s| s.statement_groups().get(StatementKind::For).to_vec())
        .unwrap_or_default();
    if for_group != ["fw", "r", "c", "t", "T", "w", "scanner"] {
        failures.push(format!("contest For group {for_group:?}"));
    }
    let cookie = cases.iter().find(|c| c.name == "cookie-path-traversal").expect("cookie case");
    let if_has_bar = CodeSnippet::parse(&cookie.code)
        .map(|s| s.statement_groups().get(StatementKind::If).iter().any(|n| n == "bar"))
        .unwrap_or(false);
    if !if_has_bar {
        failures.push("cookie If group lacks bar".into());
    }
    if cases.len() < 25 {
        failures.push(format!("only {} annotated cases", cases.len()));
    }
    Verdict::new(
        &failures,
        format!("{} annotated snippets, For group {:?}", cases.len(), for_group),
    )
}

/// Checks a flipped pair token by token: the initializer is negated and
/// every other occurrence of the variable gains a leading `!`.
pub fn bool_flip_structure(original: &str, flipped: &str) -> Result<(), String> {
    let lex = |code: &str| -> Vec<(TokenKind, String)> {
        tokenize(code)
            .expect("lexes")
            .into_iter()
            .filter(|t| !t.kind.is_trivia())
            .map(|t| (t.kind, code[t.span].to_owned()))
            .collect()
    };
    let a = lex(original);
    let b = lex(flipped);
    let decl = a
        .windows(3)
        .position(|w| w[0].1 == "boolean" && w[1].0 == TokenKind::Identifier && w[2].1 == "=")
        .ok_or("no boolean declaration")?;
    let var = a[decl + 1].1.clone();
    let init_start = decl + 3;
    let init_end = init_start + a[init_start..].iter().position(|t| t.1 == ";").ok_or("unterminated")?;
    let init: Vec<&str> = a[init_start..init_end].iter().map(|t| t.1.as_str()).collect();

    if b[..init_start] != a[..init_start] {
        return Err("prefix changed".into());
    }
    let expected_init: Vec<String> = match init.as_slice() {
        ["true"] => vec!["false".into()],
        ["false"] => vec!["true".into()],
        ["!", rest @ ..] if rest.len() == 1 => vec![rest[0].to_owned()],
        ["!", "(", rest @ .., ")"] if balanced(rest) => {
            // the parentheses may stay
            let bare: Vec<String> = rest.iter().map(|s| s.to_string()).collect();
            if b.get(init_start).map(|t| t.1.as_str()) == Some("(") {
                ["(".to_owned()].into_iter().chain(bare).chain([")".to_owned()]).collect()
            } else {
                bare
            }
        }
        other => ["!", "("]
            .iter()
            .map(|s| s.to_string())
            .chain(other.iter().map(|s| s.to_string()))
            .chain([")".to_owned()])
            .collect(),
    };
    let got_init: Vec<String> = b[init_start..init_start + expected_init.len()]
        .iter()
        .map(|t| t.1.clone())
        .collect();
    if got_init != expected_init {
        return Err(format!("initializer {got_init:?}, want {expected_init:?}"));
    }
    let mut j = init_start + expected_init.len();
    let mut reads = 0;
    for tok in &a[init_end..] {
        if tok.0 == TokenKind::Identifier && tok.1 == var {
            if b.get(j).map(|t| t.1.as_str()) != Some("!") {
                return Err(format!("read {reads} of {var} not negated"));
            }
            j += 1;
            reads += 1;
        }
        if b.get(j) != Some(tok) {
            return Err(format!("token {j} differs"));
        }
        j += 1;
    }
    if j != b.len() {
        return Err("trailing tokens".into());
    }
    if reads == 0 {
        return Err("no reads".into());
    }
    Ok(())
}

fn balanced(tokens: &[&str]) -> bool {
    let mut depth = 0i32;
    for t in tokens {
        match *t {
            "(" => depth += 1,
            ")" => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            _ => {}
        }
    }
    depth == 0
}

pub fn bool_flip_snippet(rng: &mut ChaCha8Rng) -> String {
    let names = ["ready", "done", "valid", "found", "empty", "big", "odd", "flag"];
    let v = names.choose(rng).unwrap();
    let init = match rng.gen_range(0..6) {
        0 => "true".to_owned(),
        1 => "false".to_owned(),
        2 => "!seen".to_owned(),
        3 => format!("a > {}", rng.gen_range(0..9)),
        4 => "!(a == b)".to_owned(),
        _ => "a % 2 == 0 && b != 0".to_owned(),
    };
    let mut uses = vec![
        format!("if ({v}) {{ a++; }}"),
        format!("while ({v} && a < b) {{ a += 2; }}"),
        format!("b = {v} ? a : b;"),
        format!("g({v}, a);"),
        format!("int copy = !{v} || seen ? 1 : 0;"),
    ];
    uses.shuffle(rng);
    uses.truncate(rng.gen_range(1..=4));
    format!(
        "int f(int a, int b, boolean seen) {{ boolean {v} = {init}; {} return {v} ? a : b; }}",
        uses.join(" ")
    )
}

pub fn transform_safety() -> Verdict {
    let start = Instant::now();
    let corpus: Vec<CodeSnippet> = snippets()
        .iter()
        .filter_map(|s| CodeSnippet::parse(&s.code).ok())
        .collect();
    let mut failures = Vec::new();
    let mut counts = Vec::new();
    for kind in TransformKind::ALL {
        let sites: Vec<&CodeSnippet> = corpus.iter().filter(|s| site_count(kind, s) > 0).collect();
        if sites.is_empty() {
            failures.push(format!("{kind}: no applicable snippet"));
            continue;
        }
        let mut ok = 0;
        for i in 0..VARIANTS_PER_KIND {
            let snippet = sites[i % sites.len()];
            match apply(kind, snippet, i as u64) {
                Ok(v) => match CodeSnippet::parse(&v.code) {
                    Ok(_) if v.code != snippet.source() => ok += 1,
                    Ok(_) => failures.push(format!("{kind}: variant {i} unchanged")),
                    Err(e) => failures.push(format!("{kind}: variant {i} {e}")),
                },
                Err(e) => failures.push(format!("{kind}: variant {i} {e}")),
            }
        }
        counts.push(format!("{kind}={ok}/{}", sites.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut flips = 0;
    for i in 0..BOOL_FLIP_PAIRS {
        let code = bool_flip_snippet(&mut rng);
        let snippet = CodeSnippet::parse(&code).expect("generated snippet parses");
        match apply(TransformKind::BoolFlipPropagate, &snippet, i as u64) {
            Ok(v) => match bool_flip_structure(&code, &v.code) {
                Ok(()) => flips += 1,
                Err(e) => failures.push(format!("bool pair {i}: {e}: {} => {}", code, v.code)),
            },
            Err(e) => failures.push(format!("bool pair {i}: {e}: {code}")),
        }
    }
    let elapsed = start.elapsed();
    if elapsed > TRANSFORM_LIMIT {
        failures.push(format!("took {elapsed:?}"));
    }
    Verdict::new(
        &failures,
        format!(
            "variants per kind (ok/applicable snippets) {}; bool-flip pairs {flips}/{BOOL_FLIP_PAIRS}; {:.1}s",
            counts.join(" "),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------

fn random_tokens<'a>(rng: &mut ChaCha8Rng, alphabet: &[&'a str], max: usize) -> Vec<&'a str> {
    let len = rng.gen_range(0..=max);
    (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect()
}

fn random_word(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(1..5);
    (0..len).map(|_| *b"abcxy".choose(rng).unwrap() as char).collect()
}

pub fn bleu_oracle(cases: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut failures = Vec::new();
    let alphabet = ["a", "b", "c", "d"];
    for i in 0..cases {
        let cand = random_tokens(&mut rng, &alphabet, 12);
        let mut reference = random_tokens(&mut rng, &alphabet, 12);
        if i % 3 == 0 && cand.len() >= 4 {
            let at = rng.gen_range(0..=cand.len() - 4);
            reference.extend_from_slice(&cand[at..at + 4]);
        }
        let want = oracles::bleu4(&cand, &reference);
        let got = bleu4(&cand, &reference);
        if (got - want).abs() > REAL_TOLERANCE {
            failures.push(format!("bleu4 {cand:?} vs {reference:?}: {got} != {want}"));
        }
    }
    failures
}

pub fn aed_oracle(cases: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut failures = Vec::new();
    for _ in 0..cases {
        let a: Vec<String> = (0..rng.gen_range(0..7)).map(|_| random_word(&mut rng)).collect();
        let b: Vec<String> = (0..rng.gen_range(0..7)).map(|_| random_word(&mut rng)).collect();
        let ar: Vec<&str> = a.iter().map(String::as_str).collect();
        let br: Vec<&str> = b.iter().map(String::as_str).collect();
        let want = oracles::token_alignment_cost(&ar, &br);
        let direct = token_edit_distance(&ar, &br);
        let via_code = aed(&a.join(" "), &b.join("  "));
        if direct != want || via_code != want {
            failures.push(format!("aed {a:?} vs {b:?}: {direct}/{via_code} != {want}"));
        }
    }
    failures
}

pub fn icr_tcr_oracle(cases: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut failures = Vec::new();
    let corpus = snippets();
    for _ in 0..cases {
        // renames: token streams stay aligned
        let s = &corpus[rng.gen_range(0..corpus.len())];
        let snippet = CodeSnippet::parse(&s.code).unwrap();
        let names: Vec<String> = snippet.identifier_names().map(str::to_owned).collect();
        let amount = rng.gen_range(1..=names.len().min(3));
        let picked: Vec<&String> = names.choose_multiple(&mut rng, amount).collect();
        let mut state = Renamed::original(&snippet);
        for (i, old) in picked.iter().enumerate() {
            state = state.rename(old, &format!("zq{i}")).expect("fresh");
        }
        let lexemes = |code: &str| -> Vec<String> {
            tokenize(code)
                .unwrap()
                .into_iter()
                .filter(|t| !t.kind.is_trivia())
                .map(|t| code[t.span].to_owned())
                .collect()
        };
        let before = lexemes(&s.code);
        let after = lexemes(state.snippet.source());
        let changed = before.iter().zip(&after).filter(|(a, b)| a != b).count();
        let want_tokens: usize = picked
            .iter()
            .map(|n| before.iter().filter(|t| t == n).count())
            .sum();
        let got = icr_tcr(&snippet, state.snippet.source(), &state.map);
        if got.renamed != picked.len()
            || got.renameable != names.len()
            || got.changed_tokens != changed
            || changed != want_tokens
            || got.total_tokens != before.len()
        {
            failures.push(format!("icr_tcr {}: {got:?}, want {} / {} / {changed}", s.id, picked.len(), names.len()));
        }

        // unaligned streams: minimum edit scripts
        let alphabet = ["a", "b", "c", "(", ")"];
        let from = random_tokens(&mut rng, &alphabet, 7);
        let to = random_tokens(&mut rng, &alphabet, 7);
        let (_, want) = oracles::edit_script(&from, &to);
        let got = edit_script_changes(&from, &to);
        if got != want {
            failures.push(format!("edit script {from:?} -> {to:?}: {got} != {want}"));
        }
    }
    failures
}

pub fn cosine_oracle(cases: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut failures = Vec::new();
    for case in 0..cases {
        let dim = rng.gen_range(2..6);
        let mut names: Vec<String> = Vec::new();
        while names.len() < rng.gen_range(8..40) {
            let n = if names.len() < 3 { random_name(&mut rng) } else { random_java_name(&mut rng) };
            if !names.contains(&n) && !oracles::JAVA_RESERVED.contains(&n.as_str()) {
                names.push(n);
            }
        }
        names.extend(["int", "return"].map(str::to_owned));
        let mut entries: Vec<(String, Vec<f64>)> = Vec::new();
        for (i, n) in names.iter().enumerate() {
            let v: Vec<f64> = if i > 0 && rng.gen_bool(0.2) {
                entries[rng.gen_range(0..i)].1.clone()
            } else {
                (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
            };
            entries.push((n.clone(), v));
        }
        let (m, a, b) = (&names[0], &names[1], &names[2]);
        let code = format!("int {m}(int {a}, int {b}) {{ return {a} + {b}; }}");
        let snippet = CodeSnippet::parse(&code).unwrap();
        let table = EmbeddingTable::new(entries.clone()).unwrap();
        let k = rng.gen_range(1..=30);
        let target = [m, a, b][case % 3];
        let want = oracles::cosine_ranking(&entries, &code, target, k);
        let got = cosine_candidates(&table, &snippet, target, k).unwrap();
        if got.candidates != want {
            failures.push(format!("cosine case {case}: {:?} != {want:?}", got.candidates));
        }
    }
    failures
}

pub fn mann_whitney_oracle(cases: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let mut failures = Vec::new();
    for _ in 0..cases {
        let na = rng.gen_range(1..=8);
        let nb = rng.gen_range(1..=8);
        let levels = rng.gen_range(2..10);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| f64::from(rng.gen_range(0..levels)) / 2.0).collect() };
        let a = draw(na);
        let b = draw(nb);
        for alt in [Alternative::Less, Alternative::Greater, Alternative::TwoSided] {
            let (u, p) = oracles::mann_whitney(&a, &b, alt);
            let got = mann_whitney_u(&a, &b, alt).unwrap();
            if (got.u - u).abs() > REAL_TOLERANCE || (got.p_value - p).abs() > REAL_TOLERANCE {
                failures.push(format!("mwu {a:?} {b:?} {alt:?}: ({}, {}) != ({u}, {p})", got.u, got.p_value));
            }
        }
    }
    failures
}

pub fn metric_oracles() -> Verdict {
    let parts = [
        ("bleu4", bleu_oracle(ORACLE_CASES)),
        ("aed", aed_oracle(ORACLE_CASES)),
        ("icr_tcr", icr_tcr_oracle(ORACLE_CASES)),
        ("cosine_candidates", cosine_oracle(ORACLE_CASES)),
        ("mann_whitney_u", mann_whitney_oracle(ORACLE_CASES)),
    ];
    let failures: Vec<String> = parts.iter().flat_map(|(_, f)| f.clone()).collect();
    let summary = parts
        .iter()
        .map(|(n, f)| format!("{n} {}/{ORACLE_CASES}", ORACLE_CASES - f.len().min(ORACLE_CASES)))
        .collect::<Vec<_>>()
        .join(", ");
    Verdict::new(&failures, format!("{summary}; reals within {REAL_TOLERANCE:e}"))
}

// ---------------------------------------------------------------------------

fn classification(label: u8, p1: f64) -> VictimResponse {
    VictimResponse::Classification {
        label,
        probs: [1.0 - p1, p1],
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

/// `(target, response, expected)` rows: flips for classification, BLEU-4
/// of exactly 0 for summaries.
pub fn success_table() -> Vec<(AttackTarget, VictimResponse, bool)> {
    let code = "int add(int a, int b) { return a + b; }";
    let mut rows = Vec::new();
    for (task, paired) in [
        (TaskKind::CloneDetection, Some(code.to_owned())),
        (TaskKind::VulnerabilityDetection, None),
    ] {
        for (truth, label, p1) in [
            (1, 1, 0.9),
            (1, 0, 0.2),
            (0, 0, 0.1),
            (0, 1, 0.7),
            (1, 1, 0.51),
            (1, 0, 0.49),
            (0, 0, 0.49),
            (0, 1, 0.51),
            (1, 0, 0.0),
            (0, 1, 1.0),
        ] {
            let target = AttackTarget::new("t", task, code, paired.clone(), Truth::Label(truth)).unwrap();
            rows.push((target, classification(label, p1), label != truth));
        }
    }
    let reference = "returns the sum of two integers";
    for (summary, zero) in [
        ("returns the sum of two integers", false),
        ("returns the sum of values", false),
        ("the sum of two", false),
        ("computes sum of two numbers quickly", true),
        ("returns the sum", true),
        ("", true),
        ("integers two of sum the returns", true),
        ("add a b", true),
        ("it returns the sum of two integers", false),
        ("returns sum the of two integers", true),
    ] {
        let target = AttackTarget::new(
            "t",
            TaskKind::CodeSummarization,
            code,
            None,
            Truth::Summary(words(reference)),
        )
        .unwrap();
        rows.push((target, VictimResponse::Summary(words(summary)), zero));
    }
    rows
}

pub fn success_criterion() -> Verdict {
    let table = success_table();
    let mut failures = Vec::new();
    for (i, (target, response, expected)) in table.iter().enumerate() {
        if is_success(target, response) != *expected {
            failures.push(format!("row {i}: expected {expected}"));
        }
    }
    let passed = table.len() - failures.len();
    Verdict::new(&failures, format!("{passed}/{} rows", table.len()))
}

// ---------------------------------------------------------------------------

pub struct EngineRun {
    pub outcome: AttackOutcome,
    pub delta: u64,
}

/// Runs `engine` with default settings on one target with a fresh counter.
pub fn run_engine(
    engine: Engine,
    target: &AttackTarget,
    vocabulary: &[String],
    table: &EmbeddingTable,
    seed: u64,
) -> EngineRun {
    let victim = VictimHandle::surrogate(target.task);
    let random = CandidateSource::Random { vocabulary };
    let cosine = CandidateSource::Cosine { table };
    let before = victim.query_count();
    let outcome = match engine {
        Engine::Mhm => attack_mhm(target, &victim, &random, &MhmConfig { seed, ..MhmConfig::default() }),
        Engine::WirRandom => {
            attack_wir_random(target, &victim, &random, &WirConfig { seed, ..WirConfig::default() })
        }
        Engine::Accent => attack_accent(target, &victim, &cosine, &AccentConfig::default()),
        Engine::Alert => attack_alert(target, &victim, &cosine, &AlertConfig { seed, ..AlertConfig::default() }),
        Engine::StyleTransfer => attack_styletransfer(
            target,
            &victim,
            &StyleTransferConfig {
                seed,
                ..StyleTransferConfig::default()
            },
        ),
        Engine::Beam => attack_beam(
            target,
            &victim,
            &cosine,
            &BeamConfig {
                seed,
                ..BeamConfig::for_task(target.task)
            },
        ),
    }
    .expect("surrogate attacks do not fail");
    EngineRun {
        delta: victim.query_count() - before,
        outcome,
    }
}

/// Largest number of queries `engine` may spend on `target` with default
/// settings, from its loop structure and at most `PERTURB_LIMIT` queries
/// per substitution step.
pub fn query_bound(engine: Engine, target: &AttackTarget) -> u64 {
    let snippet = target.snippet();
    let n = snippet.identifiers().len() as u64;
    let k = PERTURB_LIMIT;
    match engine {
        Engine::Mhm => 1 + MhmConfig::default().max_iter as u64 * k,
        Engine::WirRandom => 1 + n + n * k,
        Engine::Accent => 1 + n * k + n,
        Engine::Alert => {
            let p = AlertConfig::default().population as u64;
            let generations = (5 * n).max(10);
            1 + n + n * k + p + generations * p
        }
        Engine::StyleTransfer => STYLE_N as u64,
        Engine::Beam => {
            let config = BeamConfig::for_task(target.task);
            let beam = config.beam as u64;
            let groups = snippet.statement_groups();
            let mut total = 1;
            for &(kind, weight) in config.priorities.entries() {
                let len = groups.get(kind).len() as u64;
                let iters = (len as f64 * weight).ceil() as u64;
                total += iters * beam * len * k;
            }
            total + n * beam * n * k
        }
    }
}

pub fn query_accounting() -> Verdict {
    let mut failures = Vec::new();
    let mut runs = 0;
    let mut per_engine: Vec<String> = Vec::new();
    for task in TASKS {
        let (targets, vocabulary) = surrogate_targets(task);
        let table = trigram_table(&vocabulary);
        for engine in Engine::ALL {
            let mut total = 0;
            for target in &targets {
                let run = run_engine(engine, target, &vocabulary, &table, 1);
                runs += 1;
                total += run.outcome.queries;
                if run.outcome.queries != run.delta {
                    failures.push(format!("{task} {engine} {}: {} != delta {}", target.id, run.outcome.queries, run.delta));
                }
                if run.outcome.trace.len() as u64 != run.delta {
                    failures.push(format!("{task} {engine} {}: trace {} != delta {}", target.id, run.outcome.trace.len(), run.delta));
                }
                let bound = query_bound(engine, target);
                if run.outcome.queries > bound {
                    failures.push(format!("{task} {engine} {}: {} > bound {bound}", target.id, run.outcome.queries));
                }
            }
            per_engine.push(format!("{}:{}:{:.1}", task.as_str().split('-').next().unwrap(), engine, total as f64 / targets.len() as f64));
        }
        // one substitution step never exceeds the candidate budget
        let cosine = CandidateSource::Cosine { table: &table };
        for target in &targets {
            let victim = VictimHandle::surrogate(task);
            let state = Renamed::original(target.snippet());
            for (i, name) in target.snippet().identifier_names().enumerate() {
                let mut run = AttackRun::new(target, &victim);
                let before = victim.query_count();
                perturb_step(&mut run, &state, name, &cosine, PERTURB_LIMIT as usize, i as u64).unwrap();
                let spent = victim.query_count() - before;
                if spent > PERTURB_LIMIT {
                    failures.push(format!("{task} {} perturb {name}: {spent} queries", target.id));
                }
            }
        }
    }
    Verdict::new(&failures, format!("{runs} runs, AMQ {}", per_engine.join(" ")))
}

// ---------------------------------------------------------------------------

type Visit = (Option<String>, Option<String>);

struct State {
    snippet: CodeSnippet,
    map: Vec<(String, String)>,
    objective: f64,
}

impl State {
    fn current<'s>(&'s self, original: &'s str) -> &'s str {
        self.map.iter().find(|(o, _)| o == original).map_or(original, |(_, n)| n.as_str())
    }
}

/// Steepest-descent greedy: each round perturbs every identifier of `seq`
/// from the incumbent, keeps the best child if it beats the incumbent, and
/// stops when nothing improves. Runs one round limit per group and a final
/// pass over everything replaced.
pub fn greedy_reference(
    target: &AttackTarget,
    table: &EmbeddingTable,
    kind: StatementKind,
    k_cand: usize,
) -> (Vec<Visit>, String, bool) {
    let victim = VictimHandle::surrogate(target.task);
    let mut visits: Vec<Visit> = Vec::new();
    let mut score = |code: &str, visit: Visit| {
        let response = victim.score(code, target.paired_code.as_deref()).unwrap();
        visits.push(visit);
        (objective(target, &response), is_success(target, &response))
    };
    let original = target.snippet();
    let (base, success) = score(&target.code, (None, None));
    if success {
        return (visits, target.code.clone(), true);
    }
    let mut best = State {
        snippet: original.clone(),
        map: Vec::new(),
        objective: base,
    };

    let mut search = |best: &mut State, seq: &[String], rounds: usize| -> Option<String> {
        for _ in 0..rounds {
            let mut children: Vec<State> = Vec::new();
            for id in seq {
                let name = best.current(id).to_owned();
                if !best.snippet.contains_identifier(&name) {
                    continue;
                }
                let list = cosine_candidates(table, &best.snippet, &name, k_cand).unwrap();
                let mut child: Option<State> = None;
                for c in list.candidates {
                    let Ok(next) = best.snippet.rename(&name, &c) else { continue };
                    let (o, s) = score(next.source(), (Some(id.clone()), Some(c.clone())));
                    if s {
                        return Some(next.source().to_owned());
                    }
                    if child.as_ref().is_none_or(|ch| o < ch.objective) {
                        let mut map = best.map.clone();
                        match map.iter_mut().find(|(orig, _)| orig == id) {
                            Some(entry) => entry.1 = c.clone(),
                            None => map.push((id.clone(), c.clone())),
                        }
                        child = Some(State {
                            snippet: next,
                            map,
                            objective: o,
                        });
                    }
                }
                children.extend(child);
            }
            let mut winner: Option<State> = None;
            for ch in children {
                let incumbent = winner.as_ref().map_or(best.objective, |w| w.objective);
                if ch.objective < incumbent && ch.snippet.source() != best.snippet.source() {
                    winner = Some(ch);
                }
            }
            match winner {
                Some(w) => *best = w,
                None => break,
            }
        }
        None
    };

    let seq = original.statement_groups().get(kind).to_vec();
    if let Some(code) = search(&mut best, &seq, seq.len()) {
        return (visits, code, true);
    }
    let replaced: Vec<String> = best.map.iter().map(|(o, _)| o.clone()).collect();
    if let Some(code) = search(&mut best, &replaced, replaced.len()) {
        return (visits, code, true);
    }
    (visits, best.snippet.source().to_owned(), false)
}

fn beam_with(target: &AttackTarget, table: &EmbeddingTable, beam: usize, priorities: PriorityTable) -> AttackOutcome {
    let victim = VictimHandle::surrogate(target.task);
    let source = CandidateSource::Cosine { table };
    let config = BeamConfig {
        beam,
        priorities,
        ..BeamConfig::for_task(target.task)
    };
    attack_beam(target, &victim, &source, &config).unwrap()
}

/// k=2 is no worse than k=1: its final objective is no higher, and it
/// succeeds whenever k=1 does.
pub fn not_worse(wide: &AttackOutcome, narrow: &AttackOutcome) -> bool {
    let objective = |o: &AttackOutcome| o.objective.unwrap_or(f64::INFINITY);
    objective(wide) <= objective(narrow) && (wide.success || !narrow.success)
}

pub fn beam_faithfulness() -> Verdict {
    let mut failures = Vec::new();
    let mut traces = 0;
    let mut compared = 0;
    let mut strictly_better = 0;
    for task in TASKS {
        let (targets, vocabulary) = surrogate_targets(task);
        let table = trigram_table(&vocabulary);
        for target in &targets {
            for (kind, _) in target.snippet().statement_groups().non_empty() {
                let outcome = beam_with(target, &table, 1, PriorityTable::single(kind));
                let (visits, code, success) = greedy_reference(target, &table, kind, PERTURB_LIMIT as usize);
                let got: Vec<Visit> = outcome
                    .trace
                    .visits()
                    .into_iter()
                    .map(|(i, c)| (i.map(str::to_owned), c.map(str::to_owned)))
                    .collect();
                traces += 1;
                if got != visits || outcome.adversarial_code != code || outcome.success != success {
                    let at = got.iter().zip(&visits).position(|(a, b)| a != b).unwrap_or(got.len().min(visits.len()));
                    failures.push(format!(
                        "{task} {} {kind}: traces diverge at {at} ({} vs {} visits)",
                        target.id,
                        got.len(),
                        visits.len()
                    ));
                }
            }
            let defaults = PriorityTable::default_for(task);
            let narrow = beam_with(target, &table, 1, defaults.clone());
            let wide = beam_with(target, &table, 2, defaults);
            compared += 1;
            if !not_worse(&wide, &narrow) {
                failures.push(format!(
                    "{task} {}: k=2 (success {}, objective {:?}) worse than k=1 (success {}, objective {:?})",
                    target.id, wide.success, wide.objective, narrow.success, narrow.objective
                ));
            } else if (wide.success && !narrow.success) || wide.objective < narrow.objective {
                strictly_better += 1;
            }
        }
    }
    Verdict::new(
        &failures,
        format!(
            "{traces} single-group traces equal to the greedy reference; k=2 vs k=1 on {compared} targets ({strictly_better} strictly better)"
        ),
    )
}

// ---------------------------------------------------------------------------

fn asr(outcomes: &[bool]) -> f64 {
    100.0 * outcomes.iter().filter(|&&s| s).count() as f64 / outcomes.len() as f64
}

pub fn budget_monotonicity() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut lines = Vec::new();
    for task in TASKS {
        let (targets, vocabulary) = surrogate_targets(task);
        let random = CandidateSource::Random {
            vocabulary: &vocabulary,
        };
        let mut mhm = Vec::new();
        for max_iter in [1, 10, 100] {
            let wins: Vec<bool> = targets
                .iter()
                .map(|t| {
                    let victim = VictimHandle::surrogate(task);
                    let config = MhmConfig {
                        max_iter,
                        seed: 3,
                        ..MhmConfig::default()
                    };
                    attack_mhm(t, &victim, &random, &config).unwrap().success
                })
                .collect();
            mhm.push(asr(&wins));
        }
        let mut style = Vec::new();
        for n in [10, 100, 500] {
            let wins: Vec<bool> = targets
                .iter()
                .map(|t| {
                    let victim = VictimHandle::surrogate(task);
                    let config = StyleTransferConfig {
                        n,
                        seed: 3,
                        ..StyleTransferConfig::default()
                    };
                    attack_styletransfer(t, &victim, &config).unwrap().success
                })
                .collect();
            style.push(asr(&wins));
        }
        for (name, series) in [("mhm", &mhm), ("style-transfer", &style)] {
            if series.windows(2).any(|w| w[1] < w[0]) {
                failures.push(format!("{task} {name} ASR {series:?}"));
            }
        }
        lines.push(format!("{task}: mhm {mhm:?} style {style:?}"));
    }
    let elapsed = start.elapsed();
    if elapsed > BUDGET_LIMIT {
        failures.push(format!("took {elapsed:?}"));
    }
    Verdict::new(&failures, format!("{}; {:.1}s", lines.join("; "), elapsed.as_secs_f64()))
}

pub fn determinism() -> Verdict {
    let mut failures = Vec::new();
    let mut runs = 0;
    let dir = tempfile::tempdir().expect("temp dir");
    let mut configs = Vec::new();
    for engine in Engine::ALL {
        configs.push((TaskKind::CloneDetection, engine));
    }
    configs.push((TaskKind::VulnerabilityDetection, Engine::Beam));
    configs.push((TaskKind::CodeSummarization, Engine::Beam));
    configs.push((TaskKind::VulnerabilityDetection, Engine::Mhm));
    for (task, engine) in configs {
        let mut reports = Vec::new();
        for attempt in 0..2 {
            let output = dir.path().join(format!("{task}-{engine}-{attempt}"));
            let config = CampaignConfig {
                task,
                engine,
                dataset: super::dataset_file(task),
                output: output.clone(),
                seed: 5,
                workers: 1,
                limit: Some(12),
                ..CampaignConfig::default()
            };
            run_campaign(&config).expect("campaign completes");
            reports.push(std::fs::read(output.join("report.jsonl")).expect("report written"));
        }
        runs += 1;
        if reports[0] != reports[1] {
            failures.push(format!("{task} {engine}: reports differ"));
        }
        if reports[0].is_empty() {
            failures.push(format!("{task} {engine}: empty report"));
        }
    }
    Verdict::new(&failures, format!("{runs} campaigns run twice, reports byte-identical"))
}
