//! Java snippets: lossless tokens, renameable identifiers, and the statement
//! context of every identifier occurrence.

mod lexer;
pub(crate) mod tree;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tree_sitter::Node;

pub use lexer::{is_keyword, is_reserved, tokenize, LexError, Token, TokenKind, KEYWORDS};
pub use tree::SyntaxTree;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenameError {
    #[error("`{0}` is not a renameable identifier of this snippet")]
    UnknownIdentifier(String),
    #[error("`{0}` is not a valid identifier name")]
    InvalidName(String),
    #[error("`{0}` is a reserved word")]
    Reserved(String),
    #[error("`{0}` already names something in this snippet")]
    Collision(String),
}

/// Innermost tracked construct around an identifier occurrence.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum StatementKind {
    Method,
    Return,
    If,
    Throw,
    Try,
    For,
    Others,
}

impl StatementKind {
    pub const ALL: [StatementKind; 7] = [
        StatementKind::Method,
        StatementKind::Return,
        StatementKind::If,
        StatementKind::Throw,
        StatementKind::Try,
        StatementKind::For,
        StatementKind::Others,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StatementKind::Method => "Method",
            StatementKind::Return => "Return",
            StatementKind::If => "If",
            StatementKind::Throw => "Throw",
            StatementKind::Try => "Try",
            StatementKind::For => "For",
            StatementKind::Others => "Others",
        }
    }
}

impl fmt::Display for StatementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StatementKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StatementKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown statement kind `{s}`"))
    }
}

/// One renameable name and everywhere it occurs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Identifier {
    pub name: String,
    /// Token indices, ascending.
    pub occurrences: Vec<usize>,
    /// Statement kind of each occurrence, parallel to `occurrences`.
    pub occurrence_kinds: Vec<StatementKind>,
    /// Declared as a method in this snippet.
    pub is_method: bool,
}

impl Identifier {
    pub fn contexts(&self) -> BTreeSet<StatementKind> {
        self.occurrence_kinds.iter().copied().collect()
    }
}

/// A parsed source unit. Immutable; edits produce new snippets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSnippet {
    source: String,
    tokens: Vec<Token>,
    identifiers: Vec<Identifier>,
    index: HashMap<String, usize>,
}

pub fn parse(source: &str) -> Result<CodeSnippet, ParseError> {
    CodeSnippet::parse(source)
}

impl CodeSnippet {
    pub fn parse(source: &str) -> Result<Self, ParseError> {
        let tokens = tokenize(source).map_err(|e| lex_error(source, &e))?;
        if tokens.iter().all(|t| t.kind.is_trivia()) {
            return Err(ParseError {
                line: 1,
                column: 1,
                message: "empty source".into(),
            });
        }
        let tree = SyntaxTree::parse(source)?;
        let identifiers = collect_identifiers(&tree, &tokens, source);
        let index = identifiers
            .iter()
            .enumerate()
            .map(|(i, id)| (id.name.clone(), i))
            .collect();
        Ok(CodeSnippet {
            source: source.to_owned(),
            tokens,
            identifiers,
            index,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn lexeme(&self, token: usize) -> &str {
        &self.source[self.tokens[token].span.clone()]
    }

    /// Non-trivia tokens as `(kind, lexeme)` pairs.
    pub fn code_tokens(&self) -> impl Iterator<Item = (TokenKind, &str)> {
        self.tokens
            .iter()
            .filter(|t| !t.kind.is_trivia())
            .map(|t| (t.kind, &self.source[t.span.clone()]))
    }

    /// Concatenation of all token lexemes; always equal to `source()`.
    pub fn render(&self) -> String {
        self.tokens
            .iter()
            .map(|t| &self.source[t.span.clone()])
            .collect()
    }

    /// Renameable identifiers in first-occurrence order.
    pub fn identifiers(&self) -> &[Identifier] {
        &self.identifiers
    }

    pub fn identifier_names(&self) -> impl Iterator<Item = &str> {
        self.identifiers.iter().map(|id| id.name.as_str())
    }

    pub fn identifier(&self, name: &str) -> Option<&Identifier> {
        self.index.get(name).map(|&i| &self.identifiers[i])
    }

    pub fn contains_identifier(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn occurrences(&self, name: &str) -> Vec<Range<usize>> {
        self.identifier(name)
            .map(|id| {
                id.occurrences
                    .iter()
                    .map(|&t| self.tokens[t].span.clone())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn context_of(&self, name: &str) -> BTreeSet<StatementKind> {
        self.identifier(name)
            .map(Identifier::contexts)
            .unwrap_or_default()
    }

    /// First method declared in the snippet.
    pub fn method_name(&self) -> Option<&str> {
        self.identifiers
            .iter()
            .filter(|id| id.is_method)
            .min_by_key(|id| id.occurrences[0])
            .map(|id| id.name.as_str())
    }

    /// Every identifier-token lexeme, renameable or not (type names, member
    /// names, library classes).
    pub fn all_identifier_lexemes(&self) -> HashSet<&str> {
        self.tokens
            .iter()
            .filter(|t| t.kind == TokenKind::Identifier)
            .map(|t| &self.source[t.span.clone()])
            .collect()
    }

    /// Checks that `name` can be introduced by a rename.
    pub fn check_fresh_name(&self, name: &str) -> Result<(), RenameError> {
        if !is_valid_new_name(name) {
            return Err(RenameError::InvalidName(name.to_owned()));
        }
        if is_reserved(name) {
            return Err(RenameError::Reserved(name.to_owned()));
        }
        let clash = self
            .tokens
            .iter()
            .any(|t| t.kind == TokenKind::Identifier && &self.source[t.span.clone()] == name);
        if clash {
            return Err(RenameError::Collision(name.to_owned()));
        }
        Ok(())
    }

    pub fn is_fresh_name(&self, name: &str) -> bool {
        self.check_fresh_name(name).is_ok()
    }

    /// Rewrites every occurrence of `old` to `new`. Token boundaries and
    /// statement contexts are unchanged, so no reparse is needed.
    pub fn rename(&self, old: &str, new: &str) -> Result<CodeSnippet, RenameError> {
        let slot = *self
            .index
            .get(old)
            .ok_or_else(|| RenameError::UnknownIdentifier(old.to_owned()))?;
        self.check_fresh_name(new)?;

        let targets: HashSet<usize> = self.identifiers[slot].occurrences.iter().copied().collect();
        let mut source = String::with_capacity(self.source.len() + targets.len() * new.len());
        let mut tokens = Vec::with_capacity(self.tokens.len());
        for (i, token) in self.tokens.iter().enumerate() {
            let start = source.len();
            if targets.contains(&i) {
                source.push_str(new);
            } else {
                source.push_str(&self.source[token.span.clone()]);
            }
            tokens.push(Token {
                kind: token.kind,
                span: start..source.len(),
            });
        }

        let mut identifiers = self.identifiers.clone();
        identifiers[slot].name = new.to_owned();
        let mut index = self.index.clone();
        index.remove(old);
        index.insert(new.to_owned(), slot);
        Ok(CodeSnippet {
            source,
            tokens,
            identifiers,
            index,
        })
    }

    /// Identifiers grouped by the statement kinds they occur in.
    pub fn statement_groups(&self) -> StatementGroups {
        let mut groups: Vec<(StatementKind, Vec<String>)> =
            StatementKind::ALL.iter().map(|&k| (k, Vec::new())).collect();
        for id in &self.identifiers {
            for kind in id.contexts() {
                groups[kind as usize].1.push(id.name.clone());
            }
        }
        StatementGroups { groups }
    }
}

/// Identifier names per statement kind. Within a group, names keep
/// first-occurrence order; a name sits in every group it occurs in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementGroups {
    groups: Vec<(StatementKind, Vec<String>)>,
}

impl StatementGroups {
    pub fn get(&self, kind: StatementKind) -> &[String] {
        &self.groups[kind as usize].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (StatementKind, &[String])> {
        self.groups.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    /// Groups that contain at least one name.
    pub fn non_empty(&self) -> impl Iterator<Item = (StatementKind, &[String])> {
        self.iter().filter(|(_, v)| !v.is_empty())
    }
}

pub fn statement_groups(snippet: &CodeSnippet) -> StatementGroups {
    snippet.statement_groups()
}

/// Original-to-current name pairs produced by an attack, in the order the
/// identifiers were first replaced.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementMap {
    entries: Vec<(String, String)>,
}

impl ReplacementMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Current name of an original identifier.
    pub fn current<'a>(&'a self, original: &'a str) -> &'a str {
        self.entries
            .iter()
            .find(|(o, _)| o == original)
            .map_or(original, |(_, n)| n.as_str())
    }

    pub fn is_replaced(&self, original: &str) -> bool {
        self.entries.iter().any(|(o, _)| o == original)
    }

    /// Records that `original` is now called `new`. Renaming back to the
    /// original name drops the entry.
    pub fn record(&mut self, original: &str, new: &str) {
        match self.entries.iter().position(|(o, _)| o == original) {
            Some(i) if new == original => {
                self.entries.remove(i);
            }
            Some(i) => self.entries[i].1 = new.to_owned(),
            None if new != original => self.entries.push((original.to_owned(), new.to_owned())),
            None => {}
        }
    }

    pub fn originals(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(o, _)| o.as_str())
    }

    /// Applies every entry to `snippet`, which must still carry the original
    /// names.
    pub fn apply(&self, snippet: &CodeSnippet) -> Result<CodeSnippet, RenameError> {
        let mut current = snippet.clone();
        for (old, new) in &self.entries {
            current = current.rename(old, new)?;
        }
        Ok(current)
    }
}

/// Generator-side rule for new names: an ASCII letter or underscore, then
/// letters, digits, or underscores.
pub fn is_valid_new_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    name != "_" && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn lex_error(source: &str, err: &LexError) -> ParseError {
    let before = &source[..err.offset];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    ParseError {
        line,
        column,
        message: err.message.to_owned(),
    }
}

fn collect_identifiers(tree: &SyntaxTree, tokens: &[Token], source: &str) -> Vec<Identifier> {
    let mut declared: HashSet<&str> = HashSet::new();
    let mut methods: HashSet<&str> = HashSet::new();
    let mut member_names: HashSet<&str> = HashSet::new();
    let mut uses: Vec<Node<'_>> = Vec::new();

    tree::walk(tree.root(), &mut |node| {
        if node.kind() != "identifier" || !tree.in_source(node) {
            return;
        }
        let name = &source[tree.span(node)];
        if let Some(role) = declaration_role(node) {
            declared.insert(name);
            if role == DeclRole::Method {
                methods.insert(name);
            }
        }
        match reference_role(node) {
            RefRole::Plain => uses.push(node),
            RefRole::Member => {
                member_names.insert(name);
            }
            RefRole::Ignored => {}
        }
    });

    let by_start: HashMap<usize, usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.kind == TokenKind::Identifier)
        .map(|(i, t)| (t.span.start, i))
        .collect();

    let mut found: HashMap<&str, Vec<(usize, StatementKind)>> = HashMap::new();
    for node in uses {
        let name = &source[tree.span(node)];
        if !declared.contains(name) || member_names.contains(name) {
            continue;
        }
        let Some(&token) = by_start.get(&tree.span(node).start) else {
            continue;
        };
        found
            .entry(name)
            .or_default()
            .push((token, classify(node)));
    }

    let mut identifiers: Vec<Identifier> = found
        .into_iter()
        .map(|(name, mut occ)| {
            occ.sort_by_key(|(t, _)| *t);
            occ.dedup_by_key(|(t, _)| *t);
            Identifier {
                name: name.to_owned(),
                occurrences: occ.iter().map(|(t, _)| *t).collect(),
                occurrence_kinds: occ.iter().map(|(_, k)| *k).collect(),
                is_method: methods.contains(name),
            }
        })
        .collect();
    identifiers.sort_by_key(|id| id.occurrences[0]);
    identifiers
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DeclRole {
    Method,
    Variable,
}

fn declaration_role(node: Node<'_>) -> Option<DeclRole> {
    let parent = node.parent()?;
    match parent.kind() {
        "method_declaration" if tree::is_field_of(node, "name") => Some(DeclRole::Method),
        "formal_parameter" | "catch_formal_parameter" | "enhanced_for_statement" | "resource"
        | "variable_declarator" | "instanceof_expression"
            if tree::is_field_of(node, "name") =>
        {
            Some(DeclRole::Variable)
        }
        "type_pattern" => Some(DeclRole::Variable),
        "lambda_expression" if tree::is_field_of(node, "parameters") => Some(DeclRole::Variable),
        "inferred_parameters" => Some(DeclRole::Variable),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RefRole {
    /// Ordinary name use; renamed along with its declaration.
    Plain,
    /// Accessed through another object (`obj.name`, `obj.name()`).
    Member,
    /// Labels, annotation names, package paths, type declarations.
    Ignored,
}

fn reference_role(node: Node<'_>) -> RefRole {
    let Some(parent) = node.parent() else {
        return RefRole::Plain;
    };
    let through_other = |object_field: &str| {
        parent
            .child_by_field_name(object_field)
            .is_some_and(|o| o.kind() != "this")
    };
    match parent.kind() {
        "field_access" if tree::is_field_of(node, "field") => {
            if through_other("object") {
                RefRole::Member
            } else {
                RefRole::Plain
            }
        }
        "method_invocation" if tree::is_field_of(node, "name") => {
            if through_other("object") {
                RefRole::Member
            } else {
                RefRole::Plain
            }
        }
        "method_reference" => RefRole::Member,
        "scoped_identifier" | "scoped_type_identifier" | "import_declaration"
        | "package_declaration" | "marker_annotation" | "annotation" | "labeled_statement"
        | "break_statement" | "continue_statement" | "element_value_pair"
        | "class_declaration" | "interface_declaration" | "enum_declaration"
        | "record_declaration" | "annotation_type_declaration" | "constructor_declaration"
        | "enum_constant" | "explicit_constructor_invocation" => RefRole::Ignored,
        _ => RefRole::Plain,
    }
}

fn classify(node: Node<'_>) -> StatementKind {
    if let Some(parent) = node.parent() {
        if matches!(parent.kind(), "method_declaration" | "constructor_declaration")
            && tree::is_field_of(node, "name")
        {
            return StatementKind::Method;
        }
    }
    let mut current = node.parent();
    while let Some(n) = current {
        match n.kind() {
            "formal_parameters" | "receiver_parameter"
                if n.parent().is_some_and(|p| {
                    matches!(p.kind(), "method_declaration" | "constructor_declaration")
                }) =>
            {
                return StatementKind::Method;
            }
            "return_statement" => return StatementKind::Return,
            "if_statement" => return StatementKind::If,
            "throw_statement" => return StatementKind::Throw,
            "try_statement" | "try_with_resources_statement" => return StatementKind::Try,
            "for_statement" | "enhanced_for_statement" => return StatementKind::For,
            "method_declaration" | "constructor_declaration" | "class_body" | "program" => {
                return StatementKind::Others;
            }
            _ => {}
        }
        current = n.parent();
    }
    StatementKind::Others
}
