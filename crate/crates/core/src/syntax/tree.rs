//! Thin wrapper over the tree-sitter Java grammar.
//!
//! Snippets are parsed as-is first. Member-level fragments the grammar does
//! not accept at top level (constructors, field groups) are retried inside a
//! synthetic class; node spans are reported relative to the caller's text
//! either way.

use std::cell::RefCell;
use std::ops::Range;

use tree_sitter::{Node, Parser, Tree};

use super::ParseError;

const WRAP_PREFIX: &str = "class __Snippet__ {\n";
const WRAP_SUFFIX: &str = "\n}";

thread_local! {
    static PARSER: RefCell<Parser> = RefCell::new({
        let mut parser = Parser::new();
        parser
            .set_language(&tree_sitter_java::LANGUAGE.into())
            .expect("bundled Java grammar is compatible");
        parser
    });
}

pub struct SyntaxTree {
    tree: Tree,
    text: String,
    offset: usize,
    len: usize,
}

impl SyntaxTree {
    pub fn parse(source: &str) -> Result<Self, ParseError> {
        let direct = parse_raw(source);
        if !direct.root_node().has_error() {
            return Ok(SyntaxTree {
                tree: direct,
                text: source.to_owned(),
                offset: 0,
                len: source.len(),
            });
        }
        let wrapped_text = format!("{WRAP_PREFIX}{source}{WRAP_SUFFIX}");
        let wrapped = parse_raw(&wrapped_text);
        if !wrapped.root_node().has_error() {
            return Ok(SyntaxTree {
                tree: wrapped,
                text: wrapped_text,
                offset: WRAP_PREFIX.len(),
                len: source.len(),
            });
        }
        Err(first_error(&direct, source))
    }

    pub fn root(&self) -> Node<'_> {
        self.tree.root_node()
    }

    /// Span of `node` in the caller's source, clamped to it.
    pub fn span(&self, node: Node<'_>) -> Range<usize> {
        let start = node.start_byte().saturating_sub(self.offset).min(self.len);
        let end = node.end_byte().saturating_sub(self.offset).min(self.len);
        start..end
    }

    /// Whether the node lies inside the caller's source (not the synthetic
    /// wrapper).
    pub fn in_source(&self, node: Node<'_>) -> bool {
        node.start_byte() >= self.offset && node.end_byte() <= self.offset + self.len
    }

    pub fn text(&self, node: Node<'_>) -> &str {
        &self.text[node.byte_range()]
    }
}

fn parse_raw(text: &str) -> Tree {
    PARSER.with(|parser| {
        parser
            .borrow_mut()
            .parse(text, None)
            .expect("parser has a language and no cancellation")
    })
}

fn first_error(tree: &Tree, source: &str) -> ParseError {
    fn find(node: Node<'_>) -> Option<Node<'_>> {
        if node.is_error() || node.is_missing() {
            return Some(node);
        }
        if !node.has_error() {
            return None;
        }
        let mut cursor = node.walk();
        let children: Vec<_> = node.children(&mut cursor).collect();
        children.into_iter().find_map(find)
    }
    let root = tree.root_node();
    let node = find(root).unwrap_or(root);
    let message = if node.is_missing() {
        format!("missing {}", node.kind())
    } else {
        let end = node.end_byte().min(source.len());
        let start = node.start_byte().min(end);
        format!("unexpected `{}`", source[start..end].trim())
    };
    let point = node.start_position();
    ParseError {
        line: point.row + 1,
        column: point.column + 1,
        message,
    }
}

/// Pre-order traversal of every named and anonymous node.
pub fn walk<'t>(node: Node<'t>, visit: &mut impl FnMut(Node<'t>)) {
    visit(node);
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        walk(child, visit);
    }
}

/// True when `node` is the child stored under `field` in its parent.
pub fn is_field_of(node: Node<'_>, field: &str) -> bool {
    node.parent()
        .and_then(|p| p.child_by_field_name(field))
        .is_some_and(|c| c == node)
}
