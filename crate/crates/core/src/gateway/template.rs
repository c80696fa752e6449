//! Prompt templates with `{name}` placeholders.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("missing binding for `{0}`")]
    MissingBinding(String),
    #[error("placeholder `{0}` is not a declared binding")]
    UnknownPlaceholder(String),
    #[error("unknown built-in template `{0}`")]
    UnknownTemplate(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub body: String,
    pub required_bindings: BTreeSet<String>,
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

/// Splits a body into literal text and `{identifier}` slots. Braces that do
/// not enclose an identifier are literal.
fn pieces(body: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let name_len = after
            .char_indices()
            .take_while(|(i, c)| c.is_ascii_alphabetic() || *c == '_' || (*i > 0 && c.is_ascii_digit()))
            .count();
        if name_len > 0 && after[name_len..].starts_with('}') {
            out.push(Piece::Text(&rest[..open]));
            out.push(Piece::Slot(&after[..name_len]));
            rest = &after[name_len + 1..];
        } else {
            out.push(Piece::Text(&rest[..=open]));
            rest = after;
        }
    }
    out.push(Piece::Text(rest));
    out
}

impl PromptTemplate {
    /// Template whose required bindings are exactly its placeholders.
    pub fn new(template_id: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let required_bindings = placeholders(&body);
        Self { template_id: template_id.into(), body, required_bindings }
    }

    /// Template with an explicit binding list; every placeholder must be declared.
    pub fn with_required<I, S>(template_id: impl Into<String>, body: impl Into<String>, required: I) -> Result<Self, TemplateError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let body = body.into();
        let required_bindings: BTreeSet<String> = required.into_iter().map(Into::into).collect();
        if let Some(stray) = placeholders(&body).into_iter().find(|p| !required_bindings.contains(p)) {
            return Err(TemplateError::UnknownPlaceholder(stray));
        }
        Ok(Self { template_id: template_id.into(), body, required_bindings })
    }

    /// Single-pass substitution: bound values are never re-scanned.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        if let Some(missing) = self.required_bindings.iter().find(|name| !bindings.contains_key(*name)) {
            return Err(TemplateError::MissingBinding(missing.clone()));
        }
        let mut out = String::with_capacity(self.body.len());
        for piece in pieces(&self.body) {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => match bindings.get(name) {
                    Some(value) if self.required_bindings.contains(name) => out.push_str(value),
                    _ => return Err(TemplateError::UnknownPlaceholder(name.to_string())),
                },
            }
        }
        Ok(out)
    }
}

pub fn placeholders(body: &str) -> BTreeSet<String> {
    pieces(body)
        .into_iter()
        .filter_map(|p| match p {
            Piece::Slot(name) => Some(name.to_string()),
            Piece::Text(_) => None,
        })
        .collect()
}

pub const PILLARS_V1: &str = "pillars.v1";
pub const PERSONA_V1: &str = "persona.v1";
pub const CHALLENGE_V1: &str = "challenge.v1";
pub const RANKING_V1: &str = "ranking.v1";
pub const CHARACTER_V1: &str = "character.v1";
pub const STORY_V1: &str = "story.v1";

const BUILTIN: &[(&str, &str)] = &[
    (PILLARS_V1, include_str!("../../templates/pillars.v1")),
    (PERSONA_V1, include_str!("../../templates/persona.v1")),
    (CHALLENGE_V1, include_str!("../../templates/challenge.v1")),
    (RANKING_V1, include_str!("../../templates/ranking.v1")),
    (CHARACTER_V1, include_str!("../../templates/character.v1")),
    (STORY_V1, include_str!("../../templates/story.v1")),
];

/// Versioned templates shipped with the crate.
pub fn builtin(template_id: &str) -> Result<PromptTemplate, TemplateError> {
    BUILTIN
        .iter()
        .find(|(id, _)| *id == template_id)
        .map(|(id, body)| PromptTemplate::new(*id, *body))
        .ok_or_else(|| TemplateError::UnknownTemplate(template_id.to_string()))
}

pub fn builtin_ids() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(id, _)| *id)
}
