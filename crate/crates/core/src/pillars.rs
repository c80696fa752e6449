//! Content-pillar extraction: one LLM call per creative, parsed from a
//! labelled-line response into [`ContentPillars`].

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{json_digest, short_id};
use crate::domain::{AdCreative, ContentPillars, PillarField};
use crate::gateway::{CompletionRequest, Gateway, GatewayError, PromptTemplate, TemplateError};

pub const DEFAULT_FAILURE_CEILING: f64 = 0.2;

const SYSTEM_PROMPT: &str =
    "You are a senior marketing analyst. Follow the requested output format exactly.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PillarError {
    #[error("response lacks pillar field(s): {}", join_fields(.0))]
    ExtractionIncomplete(Vec<PillarField>),
    #[error("ad `{0}` has neither text nor image reference")]
    NoContent(String),
    #[error("{failures} of {total} extractions failed, above the {ceiling} ceiling")]
    BatchFailureRateExceeded { failures: usize, total: usize, ceiling: f64 },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

fn join_fields(fields: &[PillarField]) -> String {
    fields.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PillarTable {
    pub dataset_id: String,
    pub run_id: String,
    pub rows: BTreeMap<String, ContentPillars>,
    pub failures: BTreeMap<String, String>,
}

/// Strips list markers and emphasis around a field label.
fn normalize_label(raw: &str) -> String {
    raw.trim()
        .trim_start_matches(|c: char| c == '-' || c == '*' || c == '#' || c == '•' || c.is_whitespace())
        .trim_matches(|c: char| c == '*' || c == '_' || c.is_whitespace())
        .to_ascii_lowercase()
}

/// Extracts `Label: value` lines, keyed by lowercased label. The first
/// non-empty occurrence of a label wins; other lines are ignored.
pub fn labelled_lines(text: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let Some((label, value)) = line.split_once(':') else { continue };
        let value = value.trim().trim_matches(|c: char| c == '*' || c == '_').trim();
        if value.is_empty() {
            continue;
        }
        out.entry(normalize_label(label)).or_insert_with(|| value.to_string());
    }
    out
}

/// Parses the six-line pillar format. Field names are case-insensitive,
/// order is free and surrounding prose is ignored.
pub fn parse_pillar_response(text: &str) -> Result<ContentPillars, PillarError> {
    let fields = labelled_lines(text);
    let missing: Vec<PillarField> =
        PillarField::ALL.into_iter().filter(|f| !fields.contains_key(f.as_str())).collect();
    if !missing.is_empty() {
        return Err(PillarError::ExtractionIncomplete(missing));
    }
    let get = |f: PillarField| fields[f.as_str()].clone();
    Ok(ContentPillars {
        audience: get(PillarField::Audience),
        need: get(PillarField::Need),
        insight: get(PillarField::Insight),
        product: get(PillarField::Product),
        archetype: get(PillarField::Archetype),
        tone: get(PillarField::Tone),
        raw_response: text.to_string(),
    })
}

/// Canonical six-line rendering, the inverse of [`parse_pillar_response`].
pub fn format_pillars(p: &ContentPillars) -> String {
    PillarField::ALL
        .iter()
        .map(|f| format!("{}: {}", f.label(), p.field(*f)))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn pillar_bindings(ad: &AdCreative) -> BTreeMap<String, String> {
    let image_note = match &ad.image_ref {
        Some(r) => format!("The ad also carries an image ({r}); only its text is provided."),
        None => "The ad is text only.".to_string(),
    };
    [
        ("ad_text".to_string(), ad.text.clone()),
        ("brand".to_string(), ad.brand.clone()),
        ("image_note".to_string(), image_note),
    ]
    .into()
}

pub fn extract_pillars(
    gateway: &Gateway,
    ad: &AdCreative,
    template: &PromptTemplate,
    backend_id: &str,
) -> Result<ContentPillars, PillarError> {
    if ad.text.trim().is_empty() && ad.image_ref.is_none() {
        return Err(PillarError::NoContent(ad.id.clone()));
    }
    let request = CompletionRequest::from_template(backend_id, SYSTEM_PROMPT, template, pillar_bindings(ad))?
        .with_temperature(gateway.config().temperature);
    let result = gateway.complete(&request)?;
    parse_pillar_response(&result.text)
}

/// Deterministic run id for a batch, so repeated runs overwrite one artifact.
pub fn batch_run_id(dataset_id: &str, template: &PromptTemplate, backend_id: &str) -> String {
    short_id("pillars", &json_digest(&(dataset_id, &template.template_id, &template.body, backend_id)))
}

/// Extracts pillars for every ad. Individual failures are recorded; the batch
/// fails only when the failure fraction exceeds `failure_ceiling`.
pub fn batch_extract(
    gateway: &Gateway,
    dataset_id: &str,
    ads: &[AdCreative],
    template: &PromptTemplate,
    backend_id: &str,
    failure_ceiling: f64,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<PillarTable, PillarError> {
    let done = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<(String, Result<ContentPillars, PillarError>)> = ads
        .par_iter()
        .map(|ad| {
            let result = extract_pillars(gateway, ad, template, backend_id);
            let n = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
            progress(n, ads.len());
            (ad.id.clone(), result)
        })
        .collect();

    let mut rows = BTreeMap::new();
    let mut failures = BTreeMap::new();
    for (id, result) in results {
        match result {
            Ok(p) => {
                rows.insert(id, p);
            }
            Err(e) => {
                failures.insert(id, e.to_string());
            }
        }
    }
    let total = ads.len();
    if total > 0 && failures.len() as f64 / total as f64 > failure_ceiling {
        return Err(PillarError::BatchFailureRateExceeded { failures: failures.len(), total, ceiling: failure_ceiling });
    }
    Ok(PillarTable {
        dataset_id: dataset_id.to_string(),
        run_id: batch_run_id(dataset_id, template, backend_id),
        rows,
        failures,
    })
}
