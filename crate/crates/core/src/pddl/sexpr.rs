//! Minimal s-expression reader with source positions.

use std::fmt;

use super::PddlError;

/// 1-based line/column of a token in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SExpr {
    Atom { text: String, pos: Pos },
    List { items: Vec<SExpr>, pos: Pos },
}

impl SExpr {
    pub fn pos(&self) -> Pos {
        match self {
            SExpr::Atom { pos, .. } | SExpr::List { pos, .. } => *pos,
        }
    }

    pub fn as_atom(&self) -> Option<&str> {
        match self {
            SExpr::Atom { text, .. } => Some(text),
            SExpr::List { .. } => None,
        }
    }

    pub fn as_list(&self) -> Option<&[SExpr]> {
        match self {
            SExpr::List { items, .. } => Some(items),
            SExpr::Atom { .. } => None,
        }
    }

    /// Head symbol of a list, if it starts with an atom.
    pub fn head(&self) -> Option<&str> {
        self.as_list().and_then(|items| items.first()).and_then(SExpr::as_atom)
    }
}

enum Token {
    Open(Pos),
    Close(Pos),
    Symbol(String, Pos),
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut line = 1;
    let mut col = 0;
    let mut current: Option<(String, Pos)> = None;
    let mut in_comment = false;

    for ch in text.chars() {
        if ch == '\n' {
            line += 1;
            col = 0;
            in_comment = false;
            if let Some((s, p)) = current.take() {
                tokens.push(Token::Symbol(s, p));
            }
            continue;
        }
        col += 1;
        if in_comment {
            continue;
        }
        let pos = Pos { line, col };
        match ch {
            ';' => {
                in_comment = true;
                if let Some((s, p)) = current.take() {
                    tokens.push(Token::Symbol(s, p));
                }
            }
            '(' | ')' => {
                if let Some((s, p)) = current.take() {
                    tokens.push(Token::Symbol(s, p));
                }
                tokens.push(if ch == '(' { Token::Open(pos) } else { Token::Close(pos) });
            }
            c if c.is_whitespace() => {
                if let Some((s, p)) = current.take() {
                    tokens.push(Token::Symbol(s, p));
                }
            }
            c => match current.as_mut() {
                Some((s, _)) => s.extend(c.to_lowercase()),
                None => current = Some((c.to_lowercase().collect(), pos)),
            },
        }
    }
    if let Some((s, p)) = current.take() {
        tokens.push(Token::Symbol(s, p));
    }
    tokens
}

/// Reads exactly one top-level expression; trailing tokens are an error.
pub fn read(text: &str) -> Result<SExpr, PddlError> {
    let tokens = tokenize(text);
    let mut stack: Vec<(Vec<SExpr>, Pos)> = Vec::new();
    let mut result: Option<SExpr> = None;

    for token in tokens {
        if result.is_some() {
            let pos = match token {
                Token::Open(p) | Token::Close(p) | Token::Symbol(_, p) => p,
            };
            return Err(PddlError::Syntax {
                pos,
                msg: "unexpected content after the top-level expression".into(),
            });
        }
        match token {
            Token::Open(pos) => stack.push((Vec::new(), pos)),
            Token::Close(pos) => {
                let (items, open_pos) = stack.pop().ok_or(PddlError::Syntax {
                    pos,
                    msg: "unbalanced `)`".into(),
                })?;
                let list = SExpr::List { items, pos: open_pos };
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(list),
                    None => result = Some(list),
                }
            }
            Token::Symbol(text, pos) => match stack.last_mut() {
                Some((parent, _)) => parent.push(SExpr::Atom { text, pos }),
                None => {
                    return Err(PddlError::Syntax {
                        pos,
                        msg: format!("expected `(`, found `{text}`"),
                    })
                }
            },
        }
    }

    if let Some((_, pos)) = stack.last() {
        return Err(PddlError::Syntax { pos: *pos, msg: "unclosed `(`".into() });
    }
    result.ok_or(PddlError::Syntax { pos: Pos { line: 1, col: 1 }, msg: "empty input".into() })
}
