//! Semantic-preserving statement-level rewrites, and a sampler that composes
//! them into style-transferred variants of a snippet.
//!
//! Each rewrite only fires at sites where a conservative syntactic check
//! shows that behaviour cannot change. Output is always reparsed; a rewrite
//! that breaks the grammar is reported as [`TransformError::Broken`].

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tree_sitter::Node;

use crate::syntax::tree::walk;
use crate::syntax::{CodeSnippet, SyntaxTree};

pub const DEFAULT_MAX_DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    AddLog,
    LoopExchange,
    SwapIndependentStatements,
    ReorderBinaryCondition,
    SwitchToIf,
    AddTryCatch,
    AddDeadCode,
    BoolFlipPropagate,
}

impl TransformKind {
    pub const ALL: [TransformKind; 8] = [
        TransformKind::AddLog,
        TransformKind::LoopExchange,
        TransformKind::SwapIndependentStatements,
        TransformKind::ReorderBinaryCondition,
        TransformKind::SwitchToIf,
        TransformKind::AddTryCatch,
        TransformKind::AddDeadCode,
        TransformKind::BoolFlipPropagate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::AddLog => "add-log",
            TransformKind::LoopExchange => "loop-exchange",
            TransformKind::SwapIndependentStatements => "swap-independent-statements",
            TransformKind::ReorderBinaryCondition => "reorder-binary-condition",
            TransformKind::SwitchToIf => "switch-to-if",
            TransformKind::AddTryCatch => "add-try-catch",
            TransformKind::AddDeadCode => "add-dead-code",
            TransformKind::BoolFlipPropagate => "bool-flip-propagate",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown transform `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformedVariant {
    pub code: String,
    pub applied: Vec<TransformKind>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransformError {
    #[error("{0} has no site in this snippet")]
    NotApplicable(TransformKind),
    #[error("{kind} produced unparseable code: {message}")]
    Broken { kind: TransformKind, message: String },
}

#[derive(Debug, Clone)]
struct Edit {
    range: Range<usize>,
    text: String,
}

type Rewrite = Vec<Edit>;

fn apply_edits(source: &str, mut edits: Rewrite) -> String {
    edits.sort_by_key(|e| std::cmp::Reverse(e.range.start));
    let mut out = source.to_owned();
    for edit in edits {
        out.replace_range(edit.range, &edit.text);
    }
    out
}

/// Number of places `kind` could rewrite in `snippet`.
pub fn site_count(kind: TransformKind, snippet: &CodeSnippet) -> usize {
    let Ok(tree) = SyntaxTree::parse(snippet.source()) else {
        return 0;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Sites::new(&tree, snippet, &mut rng).collect(kind).len()
}

/// Kinds with at least one site.
pub fn applicable_kinds(snippet: &CodeSnippet) -> Vec<TransformKind> {
    TransformKind::ALL
        .into_iter()
        .filter(|&k| site_count(k, snippet) > 0)
        .collect()
}

/// Applies `kind` at one site chosen by `seed`.
pub fn apply(
    kind: TransformKind,
    snippet: &CodeSnippet,
    seed: u64,
) -> Result<TransformedVariant, TransformError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let code = apply_with(kind, snippet, &mut rng)?.ok_or(TransformError::NotApplicable(kind))?;
    Ok(TransformedVariant {
        code: code.source().to_owned(),
        applied: vec![kind],
        seed,
    })
}

fn apply_with(
    kind: TransformKind,
    snippet: &CodeSnippet,
    rng: &mut ChaCha8Rng,
) -> Result<Option<CodeSnippet>, TransformError> {
    let tree = SyntaxTree::parse(snippet.source()).map_err(|e| TransformError::Broken {
        kind,
        message: e.to_string(),
    })?;
    let sites = Sites::new(&tree, snippet, rng).collect(kind);
    let Some(rewrite) = sites.choose(rng).cloned() else {
        return Ok(None);
    };
    let code = apply_edits(snippet.source(), rewrite);
    CodeSnippet::parse(&code)
        .map(Some)
        .map_err(|e| TransformError::Broken {
            kind,
            message: format!("{e}\n{code}"),
        })
}

/// Up to `n` distinct variants, each built from 1 to [`DEFAULT_MAX_DEPTH`]
/// rewrites.
pub fn sample_variants(
    snippet: &CodeSnippet,
    n: usize,
    seed: u64,
) -> Result<Vec<TransformedVariant>, TransformError> {
    sample_variants_with_depth(snippet, n, seed, DEFAULT_MAX_DEPTH)
}

pub fn sample_variants_with_depth(
    snippet: &CodeSnippet,
    n: usize,
    seed: u64,
    max_depth: usize,
) -> Result<Vec<TransformedVariant>, TransformError> {
    let max_depth = max_depth.max(1);
    let mut out = Vec::new();
    if n == 0 || applicable_kinds(snippet).is_empty() {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<String> = HashSet::from([snippet.source().to_owned()]);
    let attempts = n.saturating_mul(4).saturating_add(16);
    for _ in 0..attempts {
        if out.len() == n {
            break;
        }
        let variant_seed: u64 = rng.gen();
        let mut vrng = ChaCha8Rng::seed_from_u64(variant_seed);
        let depth = vrng.gen_range(1..=max_depth);
        let mut current = snippet.clone();
        let mut applied = Vec::new();
        for _ in 0..depth {
            let kinds = applicable_kinds(&current);
            let Some(&kind) = kinds.choose(&mut vrng) else {
                break;
            };
            if let Some(next) = apply_with(kind, &current, &mut vrng)? {
                current = next;
                applied.push(kind);
            }
        }
        if !applied.is_empty() && seen.insert(current.source().to_owned()) {
            out.push(TransformedVariant {
                code: current.source().to_owned(),
                applied,
                seed: variant_seed,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Site discovery

const LOG_MESSAGES: &[&str] = &["start", "checkpoint", "processing", "step", "done", "trace"];
const DEAD_NAMES: &[&str] = &["unused", "temp", "dummy", "spare"];
const CATCH_NAMES: &[&str] = &["ex", "e", "err"];

const COMPARISONS: &[(&str, &str)] = &[
    ("<", ">"),
    (">", "<"),
    ("<=", ">="),
    (">=", "<="),
    ("==", "=="),
    ("!=", "!="),
];

struct Sites<'t, 'r> {
    tree: &'t SyntaxTree,
    snippet: &'t CodeSnippet,
    source: &'t str,
    rng: &'r mut ChaCha8Rng,
    nodes: Vec<Node<'t>>,
}

fn is_comment(node: Node<'_>) -> bool {
    matches!(node.kind(), "line_comment" | "block_comment")
}

fn statements(node: Node<'_>) -> Vec<Node<'_>> {
    let mut cursor = node.walk();
    node.named_children(&mut cursor)
        .filter(|n| !is_comment(*n))
        .collect()
}

fn contains_kind(node: Node<'_>, kinds: &[&str]) -> bool {
    let mut found = false;
    walk(node, &mut |n| found |= kinds.contains(&n.kind()));
    found
}

fn is_statement_container(node: Node<'_>) -> bool {
    matches!(node.kind(), "block" | "constructor_body")
}

impl<'t, 'r> Sites<'t, 'r> {
    fn new(tree: &'t SyntaxTree, snippet: &'t CodeSnippet, rng: &'r mut ChaCha8Rng) -> Self {
        let mut nodes = Vec::new();
        walk(tree.root(), &mut |n| {
            if tree.in_source(n) {
                nodes.push(n);
            }
        });
        Sites {
            tree,
            snippet,
            source: snippet.source(),
            rng,
            nodes,
        }
    }

    fn collect(&mut self, kind: TransformKind) -> Vec<Rewrite> {
        match kind {
            TransformKind::AddLog => self.add_log(),
            TransformKind::LoopExchange => self.loop_exchange(),
            TransformKind::SwapIndependentStatements => self.swap_statements(),
            TransformKind::ReorderBinaryCondition => self.reorder_condition(),
            TransformKind::SwitchToIf => self.switch_to_if(),
            TransformKind::AddTryCatch => self.add_try_catch(),
            TransformKind::AddDeadCode => self.add_dead_code(),
            TransformKind::BoolFlipPropagate => self.bool_flip(),
        }
    }

    fn span(&self, node: Node<'_>) -> Range<usize> {
        self.tree.span(node)
    }

    fn text(&self, node: Node<'_>) -> &'t str {
        &self.source[self.tree.span(node)]
    }

    /// Leading whitespace of the line `offset` sits on, if nothing else
    /// precedes it there.
    fn indent_at(&self, offset: usize) -> &'t str {
        let line_start = self.source[..offset].rfind('\n').map_or(0, |i| i + 1);
        let prefix = &self.source[line_start..offset];
        if prefix.chars().all(|c| c == ' ' || c == '\t') {
            prefix
        } else {
            ""
        }
    }

    fn separator_at(&self, offset: usize) -> String {
        let line_start = self.source[..offset].rfind('\n').map_or(0, |i| i + 1);
        if self.source[line_start..offset].trim().is_empty() && offset > 0 {
            format!("\n{}", self.indent_at(offset))
        } else {
            " ".to_owned()
        }
    }

    fn fresh(&self, bases: &[&str], rng_pick: usize) -> String {
        let base = bases[rng_pick % bases.len()];
        (0..)
            .map(|i| if i == 0 { base.to_owned() } else { format!("{base}{i}") })
            .find(|n| self.snippet.is_fresh_name(n))
            .expect("unbounded suffixes")
    }

    /// Statements that may have code inserted directly before them.
    fn insertion_points(&self) -> Vec<Node<'t>> {
        self.nodes
            .iter()
            .copied()
            .filter(|n| {
                n.is_named()
                    && !is_comment(*n)
                    && n.kind() != "explicit_constructor_invocation"
                    && n.parent().is_some_and(is_statement_container)
            })
            .collect()
    }

    fn insert_before(&mut self, payloads: impl Fn(&mut Self) -> String) -> Vec<Rewrite> {
        let points = self.insertion_points();
        points
            .into_iter()
            .map(|stmt| {
                let start = self.span(stmt).start;
                let text = format!("{}{}", payloads(self), self.separator_at(start));
                vec![Edit {
                    range: start..start,
                    text,
                }]
            })
            .collect()
    }

    fn add_log(&mut self) -> Vec<Rewrite> {
        if self.snippet.contains_identifier("System") {
            return Vec::new();
        }
        self.insert_before(|s| {
            let msg = LOG_MESSAGES[s.rng.gen_range(0..LOG_MESSAGES.len())];
            format!("System.out.println(\"{msg}\");")
        })
    }

    fn add_dead_code(&mut self) -> Vec<Rewrite> {
        self.insert_before(|s| {
            let pick = s.rng.gen_range(0..DEAD_NAMES.len());
            let name = s.fresh(DEAD_NAMES, pick);
            let value = s.rng.gen_range(0..10);
            format!("if (false) {{ int {name} = {value}; {name}++; }}")
        })
    }

    fn add_try_catch(&mut self) -> Vec<Rewrite> {
        const WRAPPABLE: &[&str] = &[
            "expression_statement",
            "return_statement",
            "throw_statement",
            "if_statement",
            "for_statement",
            "enhanced_for_statement",
            "while_statement",
        ];
        let points: Vec<_> = self
            .insertion_points()
            .into_iter()
            .filter(|n| WRAPPABLE.contains(&n.kind()))
            .collect();
        points
            .into_iter()
            .map(|stmt| {
                let pick = self.rng.gen_range(0..CATCH_NAMES.len());
                let name = self.fresh(CATCH_NAMES, pick);
                let range = self.span(stmt);
                let nl = self.separator_at(range.start);
                let text = format!(
                    "try {{{nl}    {}{nl}}} catch (RuntimeException {name}) {{{nl}    throw {name};{nl}}}",
                    self.text(stmt).replace('\n', "\n    ")
                );
                vec![Edit { range, text }]
            })
            .collect()
    }

    fn loop_exchange(&mut self) -> Vec<Rewrite> {
        let mut out = Vec::new();
        for node in self.nodes.clone() {
            match node.kind() {
                "for_statement" => {
                    if let Some(rewrite) = self.for_to_while(node) {
                        out.push(rewrite);
                    }
                }
                "while_statement" => {
                    let (Some(cond), Some(body)) = (
                        node.child_by_field_name("condition"),
                        node.child_by_field_name("body"),
                    ) else {
                        continue;
                    };
                    let cond = self.text(cond);
                    let inner = &cond[1..cond.len() - 1];
                    let text = format!("for (; {}; ) {}", inner.trim(), self.text(body));
                    out.push(vec![Edit {
                        range: self.span(node),
                        text,
                    }]);
                }
                _ => {}
            }
        }
        out
    }

    fn for_to_while(&self, node: Node<'t>) -> Option<Rewrite> {
        let mut cursor = node.walk();
        let inits: Vec<_> = node.children_by_field_name("init", &mut cursor).collect();
        let mut cursor = node.walk();
        let updates: Vec<_> = node.children_by_field_name("update", &mut cursor).collect();
        let body = node.child_by_field_name("body")?;
        if !updates.is_empty() && contains_kind(body, &["continue_statement"]) {
            return None;
        }
        let condition = node
            .child_by_field_name("condition")
            .map_or("true", |c| self.text(c));
        let range = self.span(node);
        let indent = self.indent_at(range.start);
        let nl = format!("\n{indent}");

        let mut init_text = String::new();
        let mut declares = false;
        for init in &inits {
            if init.kind() == "local_variable_declaration" {
                declares = true;
                init_text.push_str(self.text(*init));
            } else {
                init_text.push_str(self.text(*init));
                init_text.push(';');
            }
            init_text.push_str(&nl);
        }
        let body_text = if body.kind() == "block" {
            let t = self.text(body);
            t[1..t.len() - 1].trim().to_owned()
        } else {
            self.text(body).trim().to_owned()
        };
        let mut loop_text = format!("while ({condition}) {{");
        if !body_text.is_empty() {
            loop_text.push_str(&format!("{nl}    {body_text}"));
        }
        for update in &updates {
            loop_text.push_str(&format!("{nl}    {};", self.text(*update)));
        }
        loop_text.push_str(&format!("{nl}}}"));

        let in_block = node.parent().is_some_and(is_statement_container);
        let text = if declares || !in_block {
            format!("{{{nl}{init_text}{loop_text}{nl}}}").replacen(&format!("{{{nl}"), &format!("{{{nl}    "), 1)
        } else {
            format!("{init_text}{loop_text}")
        };
        Some(vec![Edit { range, text }])
    }

    fn reorder_condition(&mut self) -> Vec<Rewrite> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if node.kind() != "binary_expression" {
                continue;
            }
            let (Some(left), Some(op), Some(right)) = (
                node.child_by_field_name("left"),
                node.child_by_field_name("operator"),
                node.child_by_field_name("right"),
            ) else {
                continue;
            };
            let Some(&(_, mirrored)) = COMPARISONS.iter().find(|(o, _)| *o == op.kind()) else {
                continue;
            };
            if !is_pure(left) || !is_pure(right) {
                continue;
            }
            let before = &self.source[self.span(left).end..self.span(op).start];
            let after = &self.source[self.span(op).end..self.span(right).start];
            let text = format!("{}{before}{mirrored}{after}{}", self.text(right), self.text(left));
            out.push(vec![Edit {
                range: self.span(*node),
                text,
            }]);
        }
        out
    }

    fn swap_statements(&mut self) -> Vec<Rewrite> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if !is_statement_container(*node) {
                continue;
            }
            let stmts = statements(*node);
            for pair in stmts.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                let (Some(ea), Some(eb)) = (self.effects(a), self.effects(b)) else {
                    continue;
                };
                let independent = ea.writes.is_disjoint(&eb.reads)
                    && ea.writes.is_disjoint(&eb.writes)
                    && eb.writes.is_disjoint(&ea.reads);
                if independent && self.text(a) != self.text(b) {
                    out.push(vec![
                        Edit {
                            range: self.span(a),
                            text: self.text(b).to_owned(),
                        },
                        Edit {
                            range: self.span(b),
                            text: self.text(a).to_owned(),
                        },
                    ]);
                }
            }
        }
        out
    }

    /// Read and write sets of a simple statement, or `None` when it may
    /// call out, throw, or otherwise resist reordering.
    fn effects(&self, stmt: Node<'t>) -> Option<Effects> {
        if !matches!(stmt.kind(), "expression_statement" | "local_variable_declaration") {
            return None;
        }
        if contains_kind(stmt, IMPURE) {
            return None;
        }
        let mut ok = true;
        let mut reads = HashSet::new();
        let mut writes = HashSet::new();
        walk(stmt, &mut |n| match n.kind() {
            "binary_expression" => {
                if n.child_by_field_name("operator")
                    .is_some_and(|o| matches!(o.kind(), "/" | "%"))
                {
                    ok = false;
                }
            }
            "assignment_expression" => {
                if n.child_by_field_name("operator")
                    .is_some_and(|o| matches!(o.kind(), "/=" | "%="))
                {
                    ok = false;
                }
                if let Some(left) = n.child_by_field_name("left") {
                    collect_identifiers(left, self, &mut writes);
                }
            }
            "update_expression" => collect_identifiers(n, self, &mut writes),
            "variable_declarator" => {
                if let Some(name) = n.child_by_field_name("name") {
                    writes.insert(self.text(name).to_owned());
                }
            }
            "field_access" => {
                if n.child_by_field_name("object").is_none_or(|o| o.kind() != "this") {
                    ok = false;
                }
            }
            "identifier" => {
                reads.insert(self.text(n).to_owned());
            }
            _ => {}
        });
        ok.then_some(Effects { reads, writes })
    }

    fn switch_to_if(&mut self) -> Vec<Rewrite> {
        let mut out = Vec::new();
        for node in self.nodes.clone() {
            if node.kind() == "switch_expression" && node.parent().is_some_and(is_statement_container) {
                if let Some(rewrite) = self.switch_site(node) {
                    out.push(rewrite);
                }
            }
        }
        out
    }

    fn switch_site(&self, node: Node<'t>) -> Option<Rewrite> {
        let condition = node.child_by_field_name("condition")?;
        let selector = statements(condition).into_iter().next()?;
        let is_simple = selector.kind() == "identifier"
            || (selector.kind() == "field_access"
                && selector.child_by_field_name("object")?.kind() == "this");
        if !is_simple {
            return None;
        }
        let selector = self.text(selector);
        let groups = statements(node.child_by_field_name("body")?);
        if groups.is_empty() || groups.iter().any(|g| g.kind() != "switch_block_statement_group") {
            return None;
        }

        struct Group {
            tests: Vec<String>,
            is_default: bool,
            body: String,
            declared: HashSet<String>,
            mentioned: HashSet<String>,
        }
        let mut parsed = Vec::new();
        let mut tests = Vec::new();
        let mut is_default = false;
        for (gi, group) in groups.iter().enumerate() {
            let children = statements(*group);
            let (labels, stmts): (Vec<_>, Vec<_>) =
                children.into_iter().partition(|c| c.kind() == "switch_label");
            for label in &labels {
                let values = statements(*label);
                if values.is_empty() {
                    is_default = true;
                }
                for value in values {
                    let test = match value.kind() {
                        "decimal_integer_literal" | "hex_integer_literal" | "octal_integer_literal"
                        | "binary_integer_literal" | "character_literal" => {
                            format!("{selector} == {}", self.text(value))
                        }
                        "string_literal" => format!("{selector}.equals({})", self.text(value)),
                        _ => return None,
                    };
                    tests.push(test);
                }
            }
            let last_group = gi + 1 == groups.len();
            if stmts.is_empty() && !last_group {
                continue;
            }
            let ends_in_jump = stmts.last().is_some_and(|s| {
                matches!(
                    s.kind(),
                    "break_statement" | "return_statement" | "throw_statement" | "continue_statement"
                )
            });
            if !last_group && !ends_in_jump {
                return None;
            }
            let mut kept = stmts.clone();
            if kept.last().is_some_and(|s| s.kind() == "break_statement" && statements(*s).is_empty()) {
                kept.pop();
            }
            if kept.iter().any(|s| breaks_out_of_switch(*s)) {
                return None;
            }
            let body = match (kept.first(), kept.last()) {
                (Some(first), Some(last)) => {
                    self.source[self.span(*first).start..self.span(*last).end].to_owned()
                }
                _ => String::new(),
            };
            let mut declared = HashSet::new();
            let mut mentioned = HashSet::new();
            for s in &kept {
                walk(*s, &mut |n| {
                    if n.kind() == "identifier" {
                        mentioned.insert(self.text(n).to_owned());
                        if n.parent().is_some_and(|p| p.kind() == "variable_declarator")
                            && crate::syntax::tree::is_field_of(n, "name")
                        {
                            declared.insert(self.text(n).to_owned());
                        }
                    }
                });
            }
            parsed.push(Group {
                tests: std::mem::take(&mut tests),
                is_default: std::mem::take(&mut is_default),
                body,
                declared,
                mentioned,
            });
        }
        for (i, g) in parsed.iter().enumerate() {
            for (j, h) in parsed.iter().enumerate() {
                if i != j && !g.declared.is_disjoint(&h.mentioned) {
                    return None;
                }
            }
        }
        if parsed.iter().filter(|g| g.is_default).count() > 1
            || parsed.iter().all(|g| g.is_default)
        {
            return None;
        }

        let range = self.span(node);
        let nl = format!("\n{}", self.indent_at(range.start));
        let block = |body: &str| {
            if body.is_empty() {
                "{}".to_owned()
            } else {
                format!("{{{nl}    {}{nl}}}", body.trim().replace('\n', "\n    "))
            }
        };
        let mut text = String::new();
        for g in parsed.iter().filter(|g| !g.is_default) {
            if !text.is_empty() {
                text.push_str(" else ");
            }
            text.push_str(&format!("if ({}) {}", g.tests.join(" || "), block(&g.body)));
        }
        if let Some(d) = parsed.iter().find(|g| g.is_default) {
            if !d.body.is_empty() {
                text.push_str(&format!(" else {}", block(&d.body)));
            }
        }
        Some(vec![Edit { range, text }])
    }

    fn bool_flip(&mut self) -> Vec<Rewrite> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if node.kind() != "local_variable_declaration" {
                continue;
            }
            if let Some(rewrite) = self.bool_flip_site(*node) {
                out.push(rewrite);
            }
        }
        out
    }

    fn bool_flip_site(&self, decl: Node<'t>) -> Option<Rewrite> {
        if decl.child_by_field_name("type")?.kind() != "boolean_type" {
            return None;
        }
        let mut cursor = decl.walk();
        let declarators: Vec<_> = decl.children_by_field_name("declarator", &mut cursor).collect();
        let [declarator] = declarators.as_slice() else {
            return None;
        };
        if declarator.child_by_field_name("dimensions").is_some() {
            return None;
        }
        let name_node = declarator.child_by_field_name("name")?;
        let value = declarator.child_by_field_name("value")?;
        let name = self.text(name_node);
        let identifier = self.snippet.identifier(name)?;

        let sites: Vec<Node<'t>> = self
            .nodes
            .iter()
            .copied()
            .filter(|n| n.kind() == "identifier" && self.text(*n) == name)
            .collect();
        if sites.len() != identifier.occurrences.len() {
            return None;
        }
        let mut edits = Vec::new();
        for site in sites {
            if site == name_node {
                continue;
            }
            if !is_read_site(site) {
                return None;
            }
            let start = self.span(site).start;
            edits.push(Edit {
                range: start..start,
                text: "!".into(),
            });
        }
        let flipped = match value.kind() {
            "true" => "false".to_owned(),
            "false" => "true".to_owned(),
            "unary_expression"
                if value.child_by_field_name("operator").is_some_and(|o| o.kind() == "!") =>
            {
                self.text(value.child_by_field_name("operand")?).to_owned()
            }
            _ => format!("!({})", self.text(value)),
        };
        edits.push(Edit {
            range: self.span(value),
            text: flipped,
        });
        Some(edits)
    }
}

struct Effects {
    reads: HashSet<String>,
    writes: HashSet<String>,
}

const IMPURE: &[&str] = &[
    "method_invocation",
    "object_creation_expression",
    "array_creation_expression",
    "array_access",
    "cast_expression",
    "lambda_expression",
    "method_reference",
    "switch_expression",
    "instanceof_expression",
    "array_initializer",
];

fn collect_identifiers(node: Node<'_>, sites: &Sites<'_, '_>, into: &mut HashSet<String>) {
    walk(node, &mut |n| {
        if n.kind() == "identifier" {
            into.insert(sites.text(n).to_owned());
        }
    });
}

/// Operands that can be evaluated in either order.
fn is_pure(node: Node<'_>) -> bool {
    let mut pure = true;
    walk(node, &mut |n| {
        if !n.is_named() {
            return;
        }
        pure &= match n.kind() {
            "identifier" | "this" | "parenthesized_expression" | "unary_expression" | "field_access"
            | "decimal_integer_literal" | "hex_integer_literal" | "octal_integer_literal"
            | "binary_integer_literal" | "decimal_floating_point_literal"
            | "hex_floating_point_literal" | "character_literal" | "string_literal"
            | "string_fragment" | "escape_sequence" | "true" | "false" | "null_literal" => true,
            "binary_expression" => n
                .child_by_field_name("operator")
                .is_some_and(|o| !matches!(o.kind(), "/" | "%")),
            _ => false,
        };
    });
    pure
}

/// An unlabeled `break` not nested in a loop or switch of its own.
fn breaks_out_of_switch(node: Node<'_>) -> bool {
    if node.kind() == "break_statement" {
        return statements(node).is_empty();
    }
    if matches!(
        node.kind(),
        "for_statement" | "enhanced_for_statement" | "while_statement" | "do_statement"
            | "switch_expression" | "lambda_expression" | "class_body"
    ) {
        return false;
    }
    if node.kind() == "yield_statement" {
        return true;
    }
    let mut cursor = node.walk();
    let children: Vec<_> = node.children(&mut cursor).collect();
    children.into_iter().any(breaks_out_of_switch)
}

fn is_read_site(node: Node<'_>) -> bool {
    let Some(parent) = node.parent() else {
        return false;
    };
    match parent.kind() {
        "binary_expression" | "unary_expression" | "parenthesized_expression" | "argument_list"
        | "return_statement" | "ternary_expression" | "array_initializer" | "assert_statement"
        | "yield_statement" => true,
        "variable_declarator" => crate::syntax::tree::is_field_of(node, "value"),
        "assignment_expression" => crate::syntax::tree::is_field_of(node, "right"),
        "lambda_expression" => crate::syntax::tree::is_field_of(node, "body"),
        _ => false,
    }
}
