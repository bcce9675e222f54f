//! The textual command language: `verb ( head , tail , relation )`.
//!
//! ```text
//! cmd  := verb "(" arg "," arg "," arg ")"
//! verb := "add" | "delete"
//! arg  := word+
//! ```
//!
//! A sequence of commands is rendered as the command tokens joined by `<sep>`
//! and terminated by `<eos>`.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Entity, EntityKind, GraphError, RelationRegistry, Triple, UpdateOp, UpdateSequence, Verb};

pub const PAD: &str = "<pad>";
pub const SOS: &str = "<sos>";
pub const EOS: &str = "<eos>";
pub const SEP: &str = "<sep>";
pub const UNK: &str = "<unk>";

pub const PAD_ID: usize = 0;
pub const SOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const UNK_ID: usize = 4;

const RESERVED: [&str; 5] = [PAD, SOS, EOS, SEP, UNK];
const PUNCTUATION: [char; 8] = ['(', ')', ',', '.', ';', ':', '!', '?'];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DslError {
    #[error("malformed command: {0}")]
    MalformedCommand(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub text: String,
    pub source_index: Option<usize>,
}

impl Token {
    pub fn new(text: impl Into<String>) -> Self {
        Token {
            text: text.into(),
            source_index: None,
        }
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.text
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Lowercases, splits on whitespace and splits punctuation off into its own
/// tokens. Each token records its position in the output.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        let mut word = String::new();
        for c in lower.chars() {
            if PUNCTUATION.contains(&c) {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            } else {
                word.push(c);
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(i, text)| Token {
            text,
            source_index: Some(i),
        })
        .collect()
}

pub fn is_reserved(token: &str) -> bool {
    RESERVED.contains(&token)
}

fn is_word(token: &str) -> bool {
    !token.is_empty()
        && !is_reserved(token)
        && !token.chars().any(|c| PUNCTUATION.contains(&c) || c.is_whitespace())
}

pub fn parse_op<T: AsRef<str>>(tokens: &[T], relations: &RelationRegistry) -> Result<UpdateOp, DslError> {
    let toks: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let malformed = |why: &str| DslError::MalformedCommand(format!("{why}: `{}`", toks.join(" ")));
    let verb = match toks.first() {
        Some(&"add") => Verb::Add,
        Some(&"delete") => Verb::Delete,
        Some(_) => return Err(malformed("unknown verb")),
        None => return Err(malformed("empty command")),
    };
    if toks.get(1) != Some(&"(") || toks.last() != Some(&")") || toks.len() < 3 {
        return Err(malformed("missing parentheses"));
    }
    let inner = &toks[2..toks.len() - 1];
    let slots: Vec<&[&str]> = inner.split(|t| *t == ",").collect();
    if slots.len() != 3 {
        return Err(malformed(&format!("expected 3 arguments, found {}", slots.len())));
    }
    if slots.iter().any(|s| s.is_empty() || !s.iter().all(|w| is_word(w))) {
        return Err(malformed("bad argument"));
    }
    let join = |s: &[&str]| s.join(" ");
    let relation_label = join(slots[2]);
    let relation = relations.get(&relation_label).map_err(|e| match e {
        GraphError::UnknownRelation(r) => DslError::UnknownRelation(r),
        other => DslError::MalformedCommand(other.to_string()),
    })?;
    let entity = |s: &[&str]| {
        Entity::new(&join(s), EntityKind::Object).map_err(|e| DslError::MalformedCommand(e.to_string()))
    };
    Ok(UpdateOp {
        verb,
        triple: Triple::new(entity(slots[0])?, entity(slots[1])?, relation),
    })
}

pub fn render_op(op: &UpdateOp) -> String {
    format!(
        "{} ( {} , {} , {} )",
        op.verb.as_str(),
        op.triple.head.label(),
        op.triple.tail.label(),
        op.triple.relation.label()
    )
}

fn op_tokens(op: &UpdateOp) -> impl Iterator<Item = Token> + '_ {
    render_op(op)
        .split(' ')
        .map(Token::new)
        .collect::<Vec<_>>()
        .into_iter()
}

/// Command tokens joined by `<sep>` and terminated by `<eos>`.
pub fn render_sequence(ops: &UpdateSequence) -> Vec<Token> {
    let mut out = Vec::new();
    for (i, op) in ops.iter().enumerate() {
        if i > 0 {
            out.push(Token::new(SEP));
        }
        out.extend(op_tokens(op));
    }
    out.push(Token::new(EOS));
    out
}

/// Splits on `<sep>` and stops at `<eos>` (or the end of input). Segments that
/// fail to parse are dropped and counted.
pub fn parse_sequence<T: AsRef<str>>(tokens: &[T], relations: &RelationRegistry) -> (UpdateSequence, usize) {
    let end = tokens
        .iter()
        .position(|t| t.as_ref() == EOS)
        .unwrap_or(tokens.len());
    let body = &tokens[..end];
    let mut ops = UpdateSequence::new();
    let mut malformed = 0;
    if body.is_empty() {
        return (ops, 0);
    }
    for segment in body.split(|t| t.as_ref() == SEP) {
        match parse_op(segment, relations) {
            Ok(op) => ops.push(op),
            Err(_) => malformed += 1,
        }
    }
    (ops, malformed)
}

/// Token/id mapping with reserved ids `<pad>`=0, `<sos>`=1, `<eos>`=2,
/// `<sep>`=3, `<unk>`=4.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::from_tokens(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    /// Reserved tokens followed by the given tokens, sorted and deduplicated.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut rest: Vec<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t| !t.is_empty() && !is_reserved(t))
            .collect();
        rest.sort();
        rest.dedup();
        let all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).chain(rest).collect();
        Vocabulary::from(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}
