//! Token-level value-flow over raw code text.
//!
//! Several stages need a cheap answer to "which names feed this expression"
//! without re-parsing snippets that may come from outside the mini-language.
//! This module approximates dataflow by closing over assignment statements at
//! the token level: if `x = ...y...` and `x` is relevant, then `y` is too.

use std::collections::BTreeSet;

const KEYWORDS: &[&str] = &[
    "if", "else", "return", "throw", "new", "this", "true", "false", "while", "for",
];

/// Replaces string-literal bodies with spaces so quoted text never aliases an
/// identifier. Quote characters themselves are preserved.
pub fn strip_string_literals(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    for ch in text.chars() {
        if in_string {
            if escaped {
                escaped = false;
                out.push(' ');
            } else if ch == '\\' {
                escaped = true;
                out.push(' ');
            } else if ch == '"' {
                in_string = false;
                out.push('"');
            } else {
                out.push(' ');
            }
        } else if ch == '"' {
            in_string = true;
            out.push('"');
        } else {
            out.push(ch);
        }
    }
    out
}

/// Identifier tokens of the text, minus keywords and string-literal content.
pub fn identifier_tokens(text: &str) -> BTreeSet<String> {
    let stripped = strip_string_literals(text);
    let mut tokens = BTreeSet::new();
    let mut current = String::new();
    for ch in stripped.chars() {
        if ch.is_ascii_alphanumeric() || ch == '_' {
            current.push(ch);
        } else if !current.is_empty() {
            push_token(&mut tokens, std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        push_token(&mut tokens, current);
    }
    tokens
}

fn push_token(tokens: &mut BTreeSet<String>, token: String) {
    if token.chars().next().is_some_and(|c| c.is_ascii_digit()) {
        return;
    }
    if KEYWORDS.contains(&token.as_str()) {
        return;
    }
    tokens.insert(token);
}

/// One `lhs = rhs` statement found in the text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// Variable written: the last identifier before `=`.
    pub lhs: String,
    /// Identifier tokens of the right-hand side.
    pub rhs_tokens: BTreeSet<String>,
    /// Verbatim statement text, trimmed.
    pub text: String,
}

/// Extracts assignment statements, splitting on `;`, braces, and newlines.
/// Comparison operators never count as assignments.
pub fn assignments(code: &str) -> Vec<Assignment> {
    let stripped = strip_string_literals(code);
    let mut result = Vec::new();
    for (raw, clean) in split_statements(code, &stripped) {
        let Some(eq) = find_assignment_operator(&clean) else {
            continue;
        };
        let lhs_text = &clean[..eq];
        let Some(lhs) = identifier_tokens_ordered(lhs_text).pop() else {
            continue;
        };
        let rhs_tokens = identifier_tokens(&raw[eq + 1..]);
        result.push(Assignment {
            lhs,
            rhs_tokens,
            text: raw.trim().to_string(),
        });
    }
    result
}

/// Statement fragments of `code` paired with their literal-stripped twins.
fn split_statements<'a>(code: &'a str, stripped: &'a str) -> Vec<(&'a str, &'a str)> {
    let mut pieces = Vec::new();
    let mut start = 0;
    for (i, ch) in stripped.char_indices() {
        if matches!(ch, ';' | '{' | '}' | '\n') {
            if start < i {
                pieces.push((&code[start..i], &stripped[start..i]));
            }
            start = i + ch.len_utf8();
        }
    }
    if start < code.len() {
        pieces.push((&code[start..], &stripped[start..]));
    }
    pieces
}

/// Byte offset of a bare `=`, skipping `==`, `!=`, `<=`, `>=`.
fn find_assignment_operator(clean: &str) -> Option<usize> {
    let bytes = clean.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b != b'=' {
            continue;
        }
        let prev = i.checked_sub(1).map(|p| bytes[p]);
        let next = bytes.get(i + 1);
        if matches!(prev, Some(b'=') | Some(b'!') | Some(b'<') | Some(b'>')) {
            continue;
        }
        if next == Some(&b'=') {
            continue;
        }
        return Some(i);
    }
    None
}

fn identifier_tokens_ordered(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_ascii_alphanumeric() || ch == '_' {
            current.push(ch);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens.retain(|t| {
        !KEYWORDS.contains(&t.as_str()) && !t.chars().next().is_some_and(|c| c.is_ascii_digit())
    });
    tokens
}

/// Backward closure of `seeds` over the code's assignments: whenever a
/// relevant variable is assigned, everything on the right becomes relevant.
pub fn backward_closure(code: &str, seeds: &BTreeSet<String>) -> BTreeSet<String> {
    let assigns = assignments(code);
    let mut relevant = seeds.clone();
    loop {
        let before = relevant.len();
        for assign in &assigns {
            if relevant.contains(&assign.lhs) {
                relevant.extend(assign.rhs_tokens.iter().cloned());
            }
        }
        if relevant.len() == before {
            return relevant;
        }
    }
}

/// True when data named `token` can reach the seed expressions through
/// assignments in `code`, or is itself a seed token.
pub fn flows_into(code: &str, token: &str, seed_text: &str) -> bool {
    let seeds = identifier_tokens(seed_text);
    backward_closure(code, &seeds).contains(token)
}
