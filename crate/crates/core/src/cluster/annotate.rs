use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ClusterError;
use crate::domain::{brand_shares, BrandShare, ContentPillars, PillarField};
use crate::gateway::{CompletionRequest, Gateway, PromptTemplate};
use crate::pillars::labelled_lines;

pub const DEFAULT_MAX_EXEMPLARS: usize = 20;

const SYSTEM_PROMPT: &str = "You are a brand strategist summarizing groups of advertisements. Follow the requested output format exactly.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterKind {
    Persona,
    Challenge,
}

impl ClusterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Persona => "persona",
            Self::Challenge => "challenge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMember {
    pub ad_id: String,
    pub brand: String,
    pub pillars: ContentPillars,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCard {
    pub cluster_id: usize,
    pub kind: ClusterKind,
    pub name: String,
    pub description: String,
    pub member_count: usize,
    pub per_brand: BTreeMap<String, BrandShare>,
    pub exemplar_ids: Vec<String>,
    pub request_digest: String,
}

/// Reads the `Name:` and `Description:` lines of an annotation response.
pub fn parse_annotation(text: &str) -> Result<(String, String), ClusterError> {
    let mut fields = labelled_lines(text);
    let name = fields.remove("name").ok_or_else(|| ClusterError::AnnotationParse("Name".into()))?;
    let description = fields.remove("description").ok_or_else(|| ClusterError::AnnotationParse("Description".into()))?;
    Ok((name, description))
}

fn exemplar_line(member: &ClusterMember) -> String {
    PillarField::ALL
        .iter()
        .map(|f| format!("{}: {}", f.label(), member.pillars.field(*f)))
        .collect::<Vec<_>>()
        .join(" | ")
}

/// Names and describes one cluster. Exemplars are the first `max_exemplars`
/// members by ad id; brand counts come from all members.
pub fn annotate_cluster(
    gateway: &Gateway,
    cluster_id: usize,
    kind: ClusterKind,
    members: &[ClusterMember],
    template: &PromptTemplate,
    backend_id: &str,
    max_exemplars: usize,
) -> Result<ClusterCard, ClusterError> {
    if members.is_empty() {
        return Err(ClusterError::EmptyCluster);
    }
    let mut ordered: Vec<&ClusterMember> = members.iter().collect();
    ordered.sort_by(|a, b| a.ad_id.cmp(&b.ad_id));
    ordered.truncate(max_exemplars.max(1));

    let exemplars = ordered.iter().map(|m| format!("- {}", exemplar_line(m))).collect::<Vec<_>>().join("\n");
    let bindings: BTreeMap<String, String> =
        [("member_count".to_string(), members.len().to_string()), ("exemplars".to_string(), exemplars)].into();
    let request = CompletionRequest::from_template(backend_id, SYSTEM_PROMPT, template, bindings)?
        .with_temperature(gateway.config().temperature);
    let result = gateway.complete(&request)?;
    let (name, description) = parse_annotation(&result.text)?;

    Ok(ClusterCard {
        cluster_id,
        kind,
        name,
        description,
        member_count: members.len(),
        per_brand: brand_shares(members.iter().map(|m| m.brand.as_str())),
        exemplar_ids: ordered.iter().map(|m| m.ad_id.clone()).collect(),
        request_digest: result.request_digest,
    })
}
