//! Lossless Java lexer.
//!
//! Every byte of the input ends up in exactly one token, whitespace and
//! comments included, so concatenating the token lexemes reproduces the
//! source.

use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Identifier,
    Keyword,
    Literal,
    Operator,
    Separator,
    Comment,
    Whitespace,
}

impl TokenKind {
    /// Whitespace and comments.
    pub fn is_trivia(self) -> bool {
        matches!(self, TokenKind::Comment | TokenKind::Whitespace)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexError {
    pub offset: usize,
    pub message: &'static str,
}

pub const KEYWORDS: &[&str] = &[
    "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char", "class", "const",
    "continue", "default", "do", "double", "else", "enum", "extends", "final", "finally", "float",
    "for", "goto", "if", "implements", "import", "instanceof", "int", "interface", "long", "native",
    "new", "package", "private", "protected", "public", "return", "short", "static", "strictfp",
    "super", "switch", "synchronized", "this", "throw", "throws", "transient", "try", "void",
    "volatile", "while", "_",
];

/// Reserved literal words; lexed as literals, never usable as names.
pub const LITERAL_WORDS: &[&str] = &["true", "false", "null"];

/// Words that are identifiers lexically but have special meaning in some
/// positions. Generated names avoid them.
pub const CONTEXTUAL_KEYWORDS: &[&str] = &[
    "var", "yield", "record", "sealed", "permits", "non-sealed", "module", "open", "exports",
    "requires", "to", "with", "transitive", "uses", "provides", "opens", "when",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

pub fn is_reserved(word: &str) -> bool {
    is_keyword(word) || LITERAL_WORDS.contains(&word) || CONTEXTUAL_KEYWORDS.contains(&word)
}

const OPERATORS: &[&str] = &[
    ">>>=", "<<=", ">>=", ">>>", "...", "->", "::", "++", "--", "&&", "||", "==", "!=", "<=", ">=",
    "+=", "-=", "*=", "/=", "&=", "|=", "^=", "%=", "<<", ">>", "=", ">", "<", "!", "~", "?", ":",
    "+", "-", "*", "/", "&", "|", "^", "%",
];

const SEPARATORS: &[u8] = b"(){}[];,.@";

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == '$'
}

fn is_ident_part(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

pub fn tokenize(source: &str) -> Result<Vec<Token>, LexError> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let start = pos;
        let rest = &source[pos..];
        let c = rest.chars().next().expect("non-empty remainder");
        let kind = if c.is_whitespace() {
            pos += rest
                .char_indices()
                .find(|(_, ch)| !ch.is_whitespace())
                .map_or(rest.len(), |(i, _)| i);
            TokenKind::Whitespace
        } else if rest.starts_with("//") {
            pos += rest.find('\n').unwrap_or(rest.len());
            TokenKind::Comment
        } else if let Some(body) = rest.strip_prefix("/*") {
            let end = body.find("*/").ok_or(LexError {
                offset: start,
                message: "unterminated block comment",
            })?;
            pos += end + 4;
            TokenKind::Comment
        } else if rest.starts_with("\"\"\"") {
            pos += lex_text_block(rest).ok_or(LexError {
                offset: start,
                message: "unterminated text block",
            })?;
            TokenKind::Literal
        } else if c == '"' || c == '\'' {
            pos += lex_quoted(rest, c as u8).ok_or(LexError {
                offset: start,
                message: "unterminated string or character literal",
            })?;
            TokenKind::Literal
        } else if c.is_ascii_digit()
            || (c == '.' && bytes.get(pos + 1).is_some_and(|b| b.is_ascii_digit()))
        {
            pos += lex_number(rest);
            TokenKind::Literal
        } else if is_ident_start(c) {
            let len = rest
                .char_indices()
                .find(|(_, ch)| !is_ident_part(*ch))
                .map_or(rest.len(), |(i, _)| i);
            pos += len;
            let word = &rest[..len];
            if LITERAL_WORDS.contains(&word) {
                TokenKind::Literal
            } else if is_keyword(word) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            }
        } else if let Some(op) = OPERATORS.iter().find(|op| rest.starts_with(**op)) {
            // "..." is a separator in the grammar; keep it with the operators
            // for longest-match purposes.
            pos += op.len();
            if *op == "..." {
                TokenKind::Separator
            } else {
                TokenKind::Operator
            }
        } else if c.is_ascii() && SEPARATORS.contains(&(c as u8)) {
            pos += 1;
            TokenKind::Separator
        } else {
            return Err(LexError {
                offset: start,
                message: "unexpected character",
            });
        };
        tokens.push(Token {
            kind,
            span: start..pos,
        });
    }
    Ok(tokens)
}

fn lex_quoted(rest: &str, quote: u8) -> Option<usize> {
    let bytes = rest.as_bytes();
    let mut i = 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'\n' => return None,
            b if b == quote => return Some(i + 1),
            _ => i += 1,
        }
    }
    None
}

fn lex_text_block(rest: &str) -> Option<usize> {
    let bytes = rest.as_bytes();
    let mut i = 3;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            i += 2;
            continue;
        }
        if rest[i..].starts_with("\"\"\"") {
            return Some(i + 3);
        }
        i += 1;
    }
    None
}

fn lex_number(rest: &str) -> usize {
    let bytes = rest.as_bytes();
    let hex = rest.starts_with("0x") || rest.starts_with("0X");
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let exponent = if hex {
            matches!(b, b'p' | b'P')
        } else {
            matches!(b, b'e' | b'E')
        };
        if exponent && matches!(bytes.get(i + 1), Some(b'+') | Some(b'-')) {
            i += 2;
        } else if b.is_ascii_alphanumeric()
            || b == b'_'
            || (b == b'.'
                && !rest[i..].starts_with("..")
                && bytes
                    .get(i + 1)
                    .is_none_or(|n| n.is_ascii_digit() || !n.is_ascii_alphabetic()))
        {
            i += 1;
        } else {
            break;
        }
    }
    i
}
