//! Boolean retrieval queries and the `<think>`/`<answer>` response format.
//!
//! Boolean grammar, lowest precedence first:
//!
//! ```text
//! or      := and ("OR" and)*
//! and     := primary ("AND" primary)*
//! primary := "(" or ")" | operand
//! operand := (quoted-string | word)+
//! ```
//!
//! Keywords are case-insensitive. Chains of one operator become a single
//! n-ary node; a parenthesized group always stays its own node, which is
//! what makes `render_bool_query` round-trip.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoolExpr {
    /// Normalized (lowercase, single-space joined tokens) phrase.
    Term(String),
    And(Vec<BoolExpr>),
    Or(Vec<BoolExpr>),
}

impl BoolExpr {
    /// Builds a term from raw text; `None` if nothing survives tokenization.
    pub fn term(raw: &str) -> Option<Self> {
        let tokens = tokenize(raw);
        (!tokens.is_empty()).then(|| BoolExpr::Term(tokens.join(" ")))
    }

    /// Every token of every term, in left-to-right order (a multiset).
    pub fn term_tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_tokens(&mut out);
        out
    }

    fn collect_tokens(&self, out: &mut Vec<String>) {
        match self {
            BoolExpr::Term(t) => out.extend(t.split(' ').map(str::to_owned)),
            BoolExpr::And(cs) | BoolExpr::Or(cs) => cs.iter().for_each(|c| c.collect_tokens(out)),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        match self {
            BoolExpr::Term(t) => !t.is_empty() && tokenize(t).join(" ") == *t,
            BoolExpr::And(cs) | BoolExpr::Or(cs) => {
                cs.len() >= 2 && cs.iter().all(BoolExpr::is_well_formed)
            }
        }
    }
}

impl fmt::Display for BoolExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_bool_query(self))
    }
}

/// Which output grammar the `<answer>` payload follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskGrammar {
    BooleanSearch,
    FreeText,
    Sql,
}

/// Whether a `<think>` section is mandatory or forbidden.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinkMode {
    /// Exactly one `<think>` section (its body may be empty) before the answer.
    #[default]
    Required,
    /// Reasoning disabled task-wide: only an `<answer>` section.
    AnswerOnly,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Boolean(BoolExpr),
    Text(String),
    Sql(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuredResponse {
    pub think: String,
    pub answer_raw: String,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FormatErrorKind {
    MissingThink,
    MissingAnswer,
    WrongOrder,
    DuplicateSection,
    BadJson,
    BadQuerySyntax,
    /// Non-whitespace text outside the tagged sections.
    StrayText,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatError {
    pub kind: FormatErrorKind,
    pub detail: String,
}

impl FormatError {
    fn new(kind: FormatErrorKind, detail: impl Into<String>) -> Self {
        Self { kind, detail: detail.into() }
    }
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}

impl std::error::Error for FormatError {}

// ---------------------------------------------------------------------------
// Boolean queries
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Lexeme {
    LParen,
    RParen,
    And,
    Or,
    Atom(String),
}

fn syntax(detail: impl Into<String>) -> FormatError {
    FormatError::new(FormatErrorKind::BadQuerySyntax, detail)
}

fn lex(src: &str) -> Result<Vec<Lexeme>, FormatError> {
    let mut out = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                chars.next();
                out.push(Lexeme::LParen);
            }
            ')' => {
                chars.next();
                out.push(Lexeme::RParen);
            }
            '"' => {
                chars.next();
                let mut body = String::new();
                let mut closed = false;
                for (_, c) in chars.by_ref() {
                    if c == '"' {
                        closed = true;
                        break;
                    }
                    body.push(c);
                }
                if !closed {
                    return Err(syntax(format!("unterminated quote at byte {start}")));
                }
                out.push(Lexeme::Atom(body));
            }
            _ => {
                let mut word = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_whitespace() || matches!(c, '(' | ')' | '"') {
                        break;
                    }
                    word.push(c);
                    chars.next();
                }
                out.push(if word.eq_ignore_ascii_case("and") {
                    Lexeme::And
                } else if word.eq_ignore_ascii_case("or") {
                    Lexeme::Or
                } else {
                    Lexeme::Atom(word)
                });
            }
        }
    }
    Ok(out)
}

struct BoolParser {
    lexemes: Vec<Lexeme>,
    pos: usize,
}

impl BoolParser {
    fn peek(&self) -> Option<&Lexeme> {
        self.lexemes.get(self.pos)
    }

    fn or_expr(&mut self) -> Result<BoolExpr, FormatError> {
        let mut children = vec![self.and_expr()?];
        while self.peek() == Some(&Lexeme::Or) {
            self.pos += 1;
            children.push(self.and_expr()?);
        }
        Ok(if children.len() == 1 { children.pop().unwrap() } else { BoolExpr::Or(children) })
    }

    fn and_expr(&mut self) -> Result<BoolExpr, FormatError> {
        let mut children = vec![self.primary()?];
        while self.peek() == Some(&Lexeme::And) {
            self.pos += 1;
            children.push(self.primary()?);
        }
        Ok(if children.len() == 1 { children.pop().unwrap() } else { BoolExpr::And(children) })
    }

    fn primary(&mut self) -> Result<BoolExpr, FormatError> {
        match self.peek() {
            Some(Lexeme::LParen) => {
                self.pos += 1;
                let inner = self.or_expr()?;
                if self.peek() != Some(&Lexeme::RParen) {
                    return Err(syntax("unbalanced parentheses: missing `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Lexeme::Atom(_)) => {
                let mut raw = Vec::new();
                while let Some(Lexeme::Atom(a)) = self.peek() {
                    raw.push(a.clone());
                    self.pos += 1;
                }
                BoolExpr::term(&raw.join(" ")).ok_or_else(|| syntax("empty operand"))
            }
            Some(Lexeme::RParen) => Err(syntax("empty operand before `)`")),
            Some(Lexeme::And | Lexeme::Or) => Err(syntax("dangling operator")),
            None => Err(syntax("expected operand, found end of query")),
        }
    }
}

pub fn parse_bool_query(src: &str) -> Result<BoolExpr, FormatError> {
    let lexemes = lex(src)?;
    if lexemes.is_empty() {
        return Err(syntax("empty query"));
    }
    let mut parser = BoolParser { lexemes, pos: 0 };
    let expr = parser.or_expr()?;
    match parser.peek() {
        None => Ok(expr),
        Some(Lexeme::RParen) => Err(syntax("unbalanced parentheses: unexpected `)`")),
        Some(other) => Err(syntax(format!("unexpected {other:?} after complete query"))),
    }
}

/// Fully parenthesized canonical text; terms are always quoted.
pub fn render_bool_query(expr: &BoolExpr) -> String {
    match expr {
        BoolExpr::Term(t) => format!("\"{t}\""),
        BoolExpr::And(cs) => join_rendered(cs, " AND "),
        BoolExpr::Or(cs) => join_rendered(cs, " OR "),
    }
}

fn join_rendered(children: &[BoolExpr], sep: &str) -> String {
    let parts: Vec<String> = children.iter().map(render_bool_query).collect();
    format!("({})", parts.join(sep))
}

// ---------------------------------------------------------------------------
// Structured responses
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    ThinkOpen,
    ThinkClose,
    AnswerOpen,
    AnswerClose,
}

const TAGS: [(&str, Tag); 4] = [
    ("<think>", Tag::ThinkOpen),
    ("</think>", Tag::ThinkClose),
    ("<answer>", Tag::AnswerOpen),
    ("</answer>", Tag::AnswerClose),
];

enum Piece<'a> {
    Text(&'a str),
    Tag(Tag),
}

fn split_tags(text: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let mut text_start = 0;
    let mut search = 0;
    while let Some(rel) = text[search..].find('<') {
        let off = search + rel;
        if let Some((name, tag)) = TAGS.iter().find(|(name, _)| text[off..].starts_with(name)) {
            if off > text_start {
                pieces.push(Piece::Text(&text[text_start..off]));
            }
            pieces.push(Piece::Tag(*tag));
            text_start = off + name.len();
            search = text_start;
        } else {
            search = off + 1;
        }
    }
    if text_start < text.len() {
        pieces.push(Piece::Text(&text[text_start..]));
    }
    pieces
}

pub fn parse_structured_response(
    text: &str,
    grammar: TaskGrammar,
) -> Result<StructuredResponse, FormatError> {
    parse_structured_response_with(text, grammar, ThinkMode::Required)
}

/// Validates the section layout, then the payload under `grammar`.
///
/// The layout is scanned left to right and the first violation is reported.
pub fn parse_structured_response_with(
    text: &str,
    grammar: TaskGrammar,
    mode: ThinkMode,
) -> Result<StructuredResponse, FormatError> {
    use FormatErrorKind::*;

    #[derive(PartialEq)]
    enum State {
        Start,
        InThink,
        AfterThink,
        InAnswer,
        AfterAnswer,
    }

    let pieces = split_tags(text);
    let mut state = State::Start;
    let mut think = String::new();
    let mut answer = String::new();

    for (i, piece) in pieces.iter().enumerate() {
        let tag = match piece {
            Piece::Text(t) => {
                match state {
                    State::InThink => think.push_str(t),
                    State::InAnswer => answer.push_str(t),
                    _ if t.trim().is_empty() => {}
                    _ => return Err(FormatError::new(StrayText, "text outside tagged sections")),
                }
                continue;
            }
            Piece::Tag(tag) => *tag,
        };
        state = match (&state, tag) {
            (_, Tag::ThinkOpen | Tag::ThinkClose) if mode == ThinkMode::AnswerOnly => {
                return Err(FormatError::new(StrayText, "think section in answer-only mode"));
            }
            (State::Start, Tag::ThinkOpen) => State::InThink,
            (State::Start, Tag::ThinkClose) => {
                return Err(FormatError::new(MissingThink, "`</think>` without `<think>`"));
            }
            (State::Start, Tag::AnswerOpen) if mode == ThinkMode::AnswerOnly => State::InAnswer,
            (State::Start, Tag::AnswerOpen) => {
                let later_think = pieces[i..]
                    .iter()
                    .any(|p| matches!(p, Piece::Tag(Tag::ThinkOpen)));
                return Err(if later_think {
                    FormatError::new(WrongOrder, "answer section precedes think section")
                } else {
                    FormatError::new(MissingThink, "no think section")
                });
            }
            (State::Start, Tag::AnswerClose) | (State::AfterThink, Tag::AnswerClose) => {
                return Err(FormatError::new(MissingAnswer, "`</answer>` without `<answer>`"));
            }
            (State::InThink, Tag::ThinkClose) => State::AfterThink,
            (State::InThink, Tag::ThinkOpen) => {
                return Err(FormatError::new(DuplicateSection, "nested `<think>`"));
            }
            (State::InThink, _) => {
                return Err(FormatError::new(MissingThink, "think section not closed"));
            }
            (State::AfterThink, Tag::AnswerOpen) => State::InAnswer,
            (State::AfterThink, _) => {
                return Err(FormatError::new(DuplicateSection, "second think section"));
            }
            (State::InAnswer, Tag::AnswerClose) => State::AfterAnswer,
            (State::InAnswer, Tag::AnswerOpen) => {
                return Err(FormatError::new(DuplicateSection, "nested `<answer>`"));
            }
            (State::InAnswer, _) => {
                return Err(FormatError::new(MissingAnswer, "answer section not closed"));
            }
            (State::AfterAnswer, Tag::AnswerOpen | Tag::AnswerClose) => {
                return Err(FormatError::new(DuplicateSection, "second answer section"));
            }
            (State::AfterAnswer, Tag::ThinkOpen | Tag::ThinkClose) => {
                return Err(FormatError::new(WrongOrder, "think section after answer"));
            }
        };
    }

    match state {
        State::AfterAnswer => {}
        State::Start if mode == ThinkMode::Required => {
            return Err(FormatError::new(MissingThink, "no think section"));
        }
        State::InThink => return Err(FormatError::new(MissingThink, "think section not closed")),
        State::InAnswer => return Err(FormatError::new(MissingAnswer, "answer section not closed")),
        _ => return Err(FormatError::new(MissingAnswer, "no answer section")),
    }

    let payload = parse_payload(&answer, grammar)?;
    Ok(StructuredResponse { think, answer_raw: answer, payload })
}

fn parse_payload(answer: &str, grammar: TaskGrammar) -> Result<Payload, FormatError> {
    let body = answer.trim();
    match grammar {
        TaskGrammar::BooleanSearch => {
            let value: serde_json::Value = serde_json::from_str(body)
                .map_err(|e| FormatError::new(FormatErrorKind::BadJson, e.to_string()))?;
            let query = value
                .as_object()
                .and_then(|o| o.get("query"))
                .and_then(serde_json::Value::as_str)
                .ok_or_else(|| {
                    FormatError::new(
                        FormatErrorKind::BadJson,
                        "answer must be a JSON object with a string field \"query\"",
                    )
                })?;
            Ok(Payload::Boolean(parse_bool_query(query)?))
        }
        TaskGrammar::FreeText => {
            if body.is_empty() {
                return Err(FormatError::new(FormatErrorKind::MissingAnswer, "empty answer"));
            }
            Ok(Payload::Text(body.to_owned()))
        }
        TaskGrammar::Sql => {
            let starts_with_select = body
                .get(..6)
                .is_some_and(|head| head.eq_ignore_ascii_case("select"));
            if !starts_with_select {
                return Err(FormatError::new(
                    FormatErrorKind::BadQuerySyntax,
                    "SQL answer must begin with SELECT",
                ));
            }
            Ok(Payload::Sql(body.to_owned()))
        }
    }
}
