//! Tokenizer for the mini-language. Tracks byte offsets plus line/column for
//! parse diagnostics; skips `//` and `/* */` comments.

use std::fmt;

use super::parser::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Ident(String),
    StringLit(String),
    IntLit(i64),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Semi,
    Comma,
    Dot,
    Assign,
    Plus,
    Bang,
    EqEq,
    NotEq,
    AndAnd,
    OrOr,
    Eof,
}

impl TokenKind {
    /// Human-readable token description for expected-token error sets.
    pub fn describe(&self) -> String {
        match self {
            TokenKind::Ident(name) => format!("`{name}`"),
            TokenKind::StringLit(_) => "string literal".to_string(),
            TokenKind::IntLit(_) => "integer literal".to_string(),
            TokenKind::LParen => "`(`".to_string(),
            TokenKind::RParen => "`)`".to_string(),
            TokenKind::LBrace => "`{`".to_string(),
            TokenKind::RBrace => "`}`".to_string(),
            TokenKind::Semi => "`;`".to_string(),
            TokenKind::Comma => "`,`".to_string(),
            TokenKind::Dot => "`.`".to_string(),
            TokenKind::Assign => "`=`".to_string(),
            TokenKind::Plus => "`+`".to_string(),
            TokenKind::Bang => "`!`".to_string(),
            TokenKind::EqEq => "`==`".to_string(),
            TokenKind::NotEq => "`!=`".to_string(),
            TokenKind::AndAnd => "`&&`".to_string(),
            TokenKind::OrOr => "`||`".to_string(),
            TokenKind::Eof => "end of input".to_string(),
        }
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.describe())
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub kind: TokenKind,
    pub start: usize,
    pub end: usize,
    pub line: usize,
    pub col: usize,
}

pub fn tokenize(source: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0usize;
    let mut line = 1usize;
    let mut col = 1usize;

    macro_rules! push {
        ($kind:expr, $start:expr, $end:expr, $line:expr, $col:expr) => {
            tokens.push(Token {
                kind: $kind,
                start: $start,
                end: $end,
                line: $line,
                col: $col,
            })
        };
    }

    while i < bytes.len() {
        let c = bytes[i] as char;
        let (tok_line, tok_col) = (line, col);
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            ' ' | '\t' | '\r' => {
                i += 1;
                col += 1;
            }
            '/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            '/' if bytes.get(i + 1) == Some(&b'*') => {
                i += 2;
                col += 2;
                loop {
                    if i + 1 >= bytes.len() {
                        return Err(ParseError {
                            line,
                            col,
                            expected: vec!["`*/`".to_string()],
                            found: "end of input".to_string(),
                        });
                    }
                    if bytes[i] == b'*' && bytes[i + 1] == b'/' {
                        i += 2;
                        col += 2;
                        break;
                    }
                    if bytes[i] == b'\n' {
                        line += 1;
                        col = 1;
                    } else {
                        col += 1;
                    }
                    i += 1;
                }
            }
            '"' => {
                let start = i;
                i += 1;
                col += 1;
                let mut value = String::new();
                loop {
                    if i >= bytes.len() || bytes[i] == b'\n' {
                        return Err(ParseError {
                            line,
                            col,
                            expected: vec!["closing `\"`".to_string()],
                            found: "end of line".to_string(),
                        });
                    }
                    match bytes[i] {
                        b'"' => {
                            i += 1;
                            col += 1;
                            break;
                        }
                        b'\\' => {
                            let escaped = bytes.get(i + 1).copied().ok_or(ParseError {
                                line,
                                col,
                                expected: vec!["escape character".to_string()],
                                found: "end of input".to_string(),
                            })?;
                            value.push(match escaped {
                                b'n' => '\n',
                                b't' => '\t',
                                b'"' => '"',
                                b'\\' => '\\',
                                other => other as char,
                            });
                            i += 2;
                            col += 2;
                        }
                        other => {
                            value.push(other as char);
                            i += 1;
                            col += 1;
                        }
                    }
                }
                push!(TokenKind::StringLit(value), start, i, tok_line, tok_col);
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                    col += 1;
                }
                let text = &source[start..i];
                let value = text.parse::<i64>().map_err(|_| ParseError {
                    line: tok_line,
                    col: tok_col,
                    expected: vec!["integer literal".to_string()],
                    found: format!("`{text}`"),
                })?;
                push!(TokenKind::IntLit(value), start, i, tok_line, tok_col);
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                    col += 1;
                }
                push!(
                    TokenKind::Ident(source[start..i].to_string()),
                    start,
                    i,
                    tok_line,
                    tok_col
                );
            }
            _ => {
                let two = if i + 1 < bytes.len() {
                    &source[i..i + 2]
                } else {
                    ""
                };
                let (kind, width) = match two {
                    "==" => (TokenKind::EqEq, 2),
                    "!=" => (TokenKind::NotEq, 2),
                    "&&" => (TokenKind::AndAnd, 2),
                    "||" => (TokenKind::OrOr, 2),
                    _ => match c {
                        '(' => (TokenKind::LParen, 1),
                        ')' => (TokenKind::RParen, 1),
                        '{' => (TokenKind::LBrace, 1),
                        '}' => (TokenKind::RBrace, 1),
                        ';' => (TokenKind::Semi, 1),
                        ',' => (TokenKind::Comma, 1),
                        '.' => (TokenKind::Dot, 1),
                        '=' => (TokenKind::Assign, 1),
                        '+' => (TokenKind::Plus, 1),
                        '!' => (TokenKind::Bang, 1),
                        other => {
                            return Err(ParseError {
                                line,
                                col,
                                expected: vec!["a token".to_string()],
                                found: format!("`{other}`"),
                            })
                        }
                    },
                };
                push!(kind, i, i + width, tok_line, tok_col);
                i += width;
                col += width;
            }
        }
    }
    push!(TokenKind::Eof, i, i, line, col);
    Ok(tokens)
}
