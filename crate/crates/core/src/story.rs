//! Opportunity finding over persona and challenge cards, and the
//! character → story → brief chain.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::ClusterCard;
use crate::digest::{json_digest, short_id};
use crate::gateway::{CompletionRequest, Gateway, GatewayError, PromptTemplate, TemplateError};
use crate::pillars::labelled_lines;

const SYSTEM_PROMPT: &str = "You are a creative strategist writing briefs for an advertising agency. Follow the requested output format exactly.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoryError {
    #[error("brand `{0}` appears in none of the cards")]
    UnknownBrand(String),
    #[error("no persona × challenge cells to choose from")]
    EmptyMatrix,
    #[error("response is missing a non-empty `{0}` field")]
    AnnotationParse(String),
    #[error("the narrative never mentions `{0}`")]
    BrandMissingFromNarrative(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpportunityCell {
    pub persona_id: usize,
    pub challenge_id: usize,
    /// Mean of the own brand's persona and challenge shares.
    pub own_share: f64,
    pub competitor_share: f64,
    /// `competitor_share - own_share`, the mean of the persona and challenge gaps.
    pub gap: f64,
    pub persona_gap: f64,
    pub challenge_gap: f64,
    /// Persona member count plus challenge member count.
    pub volume: usize,
}

fn share(card: &ClusterCard, brand: &str) -> f64 {
    card.per_brand.get(brand).map_or(0.0, |s| s.share)
}

/// One cell per persona × challenge pair, persona-major.
pub fn opportunity_matrix(
    personas: &[ClusterCard],
    challenges: &[ClusterCard],
    own_brand: &str,
    competitor_brand: &str,
) -> Result<Vec<OpportunityCell>, StoryError> {
    for brand in [own_brand, competitor_brand] {
        if !personas.iter().chain(challenges).any(|c| c.per_brand.contains_key(brand)) {
            return Err(StoryError::UnknownBrand(brand.to_string()));
        }
    }
    let mut cells = Vec::with_capacity(personas.len() * challenges.len());
    for p in personas {
        for c in challenges {
            let (own_p, own_c) = (share(p, own_brand), share(c, own_brand));
            let (comp_p, comp_c) = (share(p, competitor_brand), share(c, competitor_brand));
            let persona_gap = comp_p - own_p;
            let challenge_gap = comp_c - own_c;
            cells.push(OpportunityCell {
                persona_id: p.cluster_id,
                challenge_id: c.cluster_id,
                own_share: (own_p + own_c) / 2.0,
                competitor_share: (comp_p + comp_c) / 2.0,
                gap: (persona_gap + challenge_gap) / 2.0,
                persona_gap,
                challenge_gap,
                volume: p.member_count + c.member_count,
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    #[default]
    MaxGap,
    MaxGapVolumeWeighted,
}

impl std::str::FromStr for SelectionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "max_gap" => Ok(Self::MaxGap),
            "max_gap_volume_weighted" => Ok(Self::MaxGapVolumeWeighted),
            other => Err(format!("unknown selection policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub cell: OpportunityCell,
    /// The best cell's gap is not positive: the competitor does not lead here.
    pub not_underexploited: bool,
}

/// Best cell under `policy`; ties go to the larger volume, then the smaller
/// (persona_id, challenge_id).
pub fn select_opportunity(matrix: &[OpportunityCell], policy: SelectionPolicy) -> Result<Selection, StoryError> {
    let objective = |c: &OpportunityCell| match policy {
        SelectionPolicy::MaxGap => c.gap,
        SelectionPolicy::MaxGapVolumeWeighted => c.gap * (1.0 + c.volume as f64).ln(),
    };
    let best = matrix
        .iter()
        .min_by(|a, b| {
            objective(b)
                .total_cmp(&objective(a))
                .then_with(|| b.volume.cmp(&a.volume))
                .then_with(|| (a.persona_id, a.challenge_id).cmp(&(b.persona_id, b.challenge_id)))
        })
        .ok_or(StoryError::EmptyMatrix)?;
    Ok(Selection { cell: best.clone(), not_underexploited: best.gap <= 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Character {
    pub name: String,
    pub role: String,
    pub background: String,
    pub traits: Vec<String>,
    pub persona_id: usize,
    pub persona_name: String,
    pub request_digest: String,
}

fn required(fields: &BTreeMap<String, String>, key: &str, label: &str) -> Result<String, StoryError> {
    fields.get(key).filter(|v| !v.trim().is_empty()).cloned().ok_or_else(|| StoryError::AnnotationParse(label.to_string()))
}

pub fn parse_character(text: &str) -> Result<(String, String, String, Vec<String>), StoryError> {
    let fields = labelled_lines(text);
    let name = required(&fields, "name", "Name")?;
    let role = required(&fields, "role", "Role")?;
    let background = required(&fields, "background", "Background")?;
    let traits = required(&fields, "traits", "Traits")?
        .split(',')
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect();
    Ok((name, role, background, traits))
}

pub fn generate_character(
    gateway: &Gateway,
    persona: &ClusterCard,
    template: &PromptTemplate,
    backend_id: &str,
) -> Result<Character, StoryError> {
    let bindings: BTreeMap<String, String> = [
        ("persona_name".to_string(), persona.name.clone()),
        ("persona_description".to_string(), persona.description.clone()),
    ]
    .into();
    let request = CompletionRequest::from_template(backend_id, SYSTEM_PROMPT, template, bindings)?
        .with_temperature(gateway.config().temperature);
    let result = gateway.complete(&request)?;
    let (name, role, background, traits) = parse_character(&result.text)?;
    Ok(Character {
        name,
        role,
        background,
        traits,
        persona_id: persona.cluster_id,
        persona_name: persona.name.clone(),
        request_digest: result.request_digest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Story {
    pub character: Character,
    pub challenge_id: usize,
    pub challenge_name: String,
    pub brand: String,
    pub narrative: String,
    pub concluding_insight: String,
    pub run_id: String,
    pub dataset_id: String,
    /// Upstream run ids (clusters, ranking) the story draws on.
    pub source_runs: Vec<String>,
    pub request_digests: Vec<String>,
}

fn field_start<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let trimmed = line.trim_start().trim_start_matches(|c: char| c == '*' || c == '#' || c.is_whitespace());
    let (head, rest) = trimmed.split_once(':')?;
    let head = head.trim().trim_matches('*').trim();
    head.eq_ignore_ascii_case(label).then(|| rest.trim_start_matches('*'))
}

/// Splits a `Story:` / `Insight:` response. The story runs until the
/// `Insight:` line and keeps its paragraph breaks.
pub fn parse_story(text: &str) -> Result<(String, String), StoryError> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines.iter().position(|l| field_start(l, "story").is_some()).ok_or_else(|| StoryError::AnnotationParse("Story".into()))?;
    let end = lines[start + 1..]
        .iter()
        .position(|l| field_start(l, "insight").is_some())
        .map(|i| i + start + 1)
        .ok_or_else(|| StoryError::AnnotationParse("Insight".into()))?;

    let mut body = vec![field_start(lines[start], "story").unwrap_or_default().trim()];
    body.extend(lines[start + 1..end].iter().map(|l| l.trim_end()));
    let narrative = body.join("\n").trim().to_string();
    let mut insight = vec![field_start(lines[end], "insight").unwrap_or_default().trim()];
    insight.extend(lines[end + 1..].iter().map(|l| l.trim()));
    let insight = insight.join(" ").trim().to_string();

    if narrative.is_empty() {
        return Err(StoryError::AnnotationParse("Story".into()));
    }
    if insight.is_empty() {
        return Err(StoryError::AnnotationParse("Insight".into()));
    }
    Ok((narrative, insight))
}

#[allow(clippy::too_many_arguments)]
pub fn generate_story(
    gateway: &Gateway,
    dataset_id: &str,
    character: &Character,
    challenge: &ClusterCard,
    brand: &str,
    template: &PromptTemplate,
    backend_id: &str,
    source_runs: &[String],
) -> Result<Story, StoryError> {
    let bindings: BTreeMap<String, String> = [
        ("brand".to_string(), brand.to_string()),
        ("character_name".to_string(), character.name.clone()),
        ("character_role".to_string(), character.role.clone()),
        ("character_background".to_string(), character.background.clone()),
        ("character_traits".to_string(), character.traits.join(", ")),
        ("challenge_name".to_string(), challenge.name.clone()),
        ("challenge_description".to_string(), challenge.description.clone()),
    ]
    .into();
    let request = CompletionRequest::from_template(backend_id, SYSTEM_PROMPT, template, bindings)?
        .with_temperature(gateway.config().temperature);
    let result = gateway.complete(&request)?;
    let (narrative, concluding_insight) = parse_story(&result.text)?;
    if !narrative.to_lowercase().contains(&brand.to_lowercase()) {
        return Err(StoryError::BrandMissingFromNarrative(brand.to_string()));
    }
    let request_digests = vec![character.request_digest.clone(), result.request_digest];
    let run_id = short_id("story", &json_digest(&(dataset_id, brand, character.persona_id, challenge.cluster_id, &request_digests)));
    Ok(Story {
        character: character.clone(),
        challenge_id: challenge.cluster_id,
        challenge_name: challenge.name.clone(),
        brand: brand.to_string(),
        narrative,
        concluding_insight,
        run_id,
        dataset_id: dataset_id.to_string(),
        source_runs: source_runs.to_vec(),
        request_digests,
    })
}

/// Markdown brief: header, character sketch, narrative, concluding insight
/// and provenance, always in that order.
pub fn export_brief(story: &Story) -> String {
    let c = &story.character;
    let mut out = String::new();
    let _ = writeln!(out, "# Content brief: {}\n", story.brand);
    let _ = writeln!(out, "- Brand: {}", story.brand);
    let _ = writeln!(out, "- Persona: {} (persona {})", c.persona_name, c.persona_id);
    let _ = writeln!(out, "- Challenge: {} (challenge {})\n", story.challenge_name, story.challenge_id);
    let _ = writeln!(out, "## Character\n");
    let _ = writeln!(out, "**{}**, {}\n", c.name, c.role);
    let _ = writeln!(out, "{}\n", c.background);
    if !c.traits.is_empty() {
        let _ = writeln!(out, "Traits: {}\n", c.traits.join(", "));
    }
    let _ = writeln!(out, "## Story\n");
    let _ = writeln!(out, "{}\n", story.narrative);
    let _ = writeln!(out, "## Concluding insight\n");
    let _ = writeln!(out, "> **{}**\n", story.concluding_insight);
    let _ = writeln!(out, "## Provenance\n");
    let _ = writeln!(out, "- Dataset: {}", story.dataset_id);
    let _ = writeln!(out, "- Story run: {}", story.run_id);
    for run in &story.source_runs {
        let _ = writeln!(out, "- Source run: {run}");
    }
    for digest in &story.request_digests {
        let _ = writeln!(out, "- Request: {digest}");
    }
    out
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::cluster::ClusterKind;
    use crate::domain::BrandShare;
    use crate::gateway::offline::{ScriptedBackend, SCRIPTED_BACKEND_ID};
    use crate::gateway::template::{builtin, CHARACTER_V1, STORY_V1};
    use crate::gateway::GatewayConfig;

    fn card(id: usize, kind: ClusterKind, name: &str, shares: &[(&str, usize)]) -> ClusterCard {
        let total: usize = shares.iter().map(|(_, n)| n).sum();
        ClusterCard {
            cluster_id: id,
            kind,
            name: name.into(),
            description: format!("{name} description"),
            member_count: total,
            per_brand: shares
                .iter()
                .map(|(b, n)| (b.to_string(), BrandShare { count: *n, share: *n as f64 / total as f64 }))
                .collect(),
            exemplar_ids: vec![],
            request_digest: String::new(),
        }
    }

    fn cell(p: usize, c: usize, gap: f64, volume: usize) -> OpportunityCell {
        OpportunityCell {
            persona_id: p,
            challenge_id: c,
            own_share: 0.0,
            competitor_share: 0.0,
            gap,
            persona_gap: gap,
            challenge_gap: gap,
            volume,
        }
    }

    #[test]
    fn gap_is_mean_of_component_gaps() {
        let persona = card(0, ClusterKind::Persona, "P", &[("own", 3), ("comp", 7)]);
        let challenge = card(0, ClusterKind::Challenge, "C", &[("own", 4), ("comp", 6)]);
        let m = opportunity_matrix(&[persona.clone()], &[challenge.clone()], "own", "comp").unwrap();
        assert!((m[0].persona_gap - 0.4).abs() < 1e-12);
        assert!((m[0].challenge_gap - 0.2).abs() < 1e-12);
        assert!((m[0].gap - 0.3).abs() < 1e-12);
        assert_eq!(m[0].volume, 20);
        let swapped = opportunity_matrix(&[persona], &[challenge], "comp", "own").unwrap();
        assert!((swapped[0].gap + m[0].gap).abs() < 1e-12);
    }

    #[test]
    fn balanced_cards_give_zero_gaps() {
        let personas = vec![card(0, ClusterKind::Persona, "P", &[("a", 5), ("b", 5)])];
        let challenges = vec![card(0, ClusterKind::Challenge, "C", &[("a", 2), ("b", 2)])];
        assert!(opportunity_matrix(&personas, &challenges, "a", "b").unwrap().iter().all(|c| c.gap == 0.0));
        assert_eq!(opportunity_matrix(&personas, &challenges, "a", "zz"), Err(StoryError::UnknownBrand("zz".into())));
    }

    #[test]
    fn competitor_heavy_pair_has_the_max_gap() {
        let personas = vec![
            card(0, ClusterKind::Persona, "Efficiency Enthusiasts", &[("Gojek", 60), ("Grab", 146)]),
            card(1, ClusterKind::Persona, "Budget Seekers", &[("Gojek", 100), ("Grab", 44)]),
            card(2, ClusterKind::Persona, "Everyday Commuters", &[("Gojek", 500), ("Grab", 207)]),
        ];
        let challenges = vec![
            card(0, ClusterKind::Challenge, "Affordable Daily Travel", &[("Gojek", 500), ("Grab", 172)]),
            card(1, ClusterKind::Challenge, "Food On Demand", &[("Gojek", 60), ("Grab", 34)]),
            card(2, ClusterKind::Challenge, "Streamlining Work Transport Processes", &[("Gojek", 100), ("Grab", 236)]),
        ];
        let m = opportunity_matrix(&personas, &challenges, "Gojek", "Grab").unwrap();
        let pick = select_opportunity(&m, SelectionPolicy::MaxGap).unwrap();
        assert_eq!((pick.cell.persona_id, pick.cell.challenge_id), (0, 2));
        assert!(!pick.not_underexploited);
    }

    #[test]
    fn selection_tie_chain() {
        let m = vec![cell(0, 0, 0.3, 100), cell(0, 1, 0.1, 50), cell(1, 0, 0.3, 200)];
        assert_eq!(select_opportunity(&m, SelectionPolicy::MaxGap).unwrap().cell, m[2]);
        let same = vec![cell(1, 0, 0.3, 100), cell(0, 2, 0.3, 100)];
        assert_eq!(select_opportunity(&same, SelectionPolicy::MaxGap).unwrap().cell, same[1]);
        assert_eq!(select_opportunity(&m[..1], SelectionPolicy::MaxGap).unwrap().cell, m[0]);
        let negative = vec![cell(0, 0, -0.3, 1), cell(0, 1, -0.1, 1)];
        let pick = select_opportunity(&negative, SelectionPolicy::MaxGap).unwrap();
        assert_eq!(pick.cell, negative[1]);
        assert!(pick.not_underexploited);
        assert_eq!(select_opportunity(&[], SelectionPolicy::MaxGap), Err(StoryError::EmptyMatrix));
    }

    #[test]
    fn volume_weighting_can_change_the_pick() {
        let m = vec![cell(0, 0, 0.30, 10), cell(0, 1, 0.25, 1000)];
        assert_eq!(select_opportunity(&m, SelectionPolicy::MaxGap).unwrap().cell, m[0]);
        assert_eq!(select_opportunity(&m, SelectionPolicy::MaxGapVolumeWeighted).unwrap().cell, m[1]);
    }

    const SAMUEL: &str = "Name: Samuel Tan\nRole: a business owner in Singapore\nBackground: Samuel runs a logistics firm with forty staff.\nTraits: pragmatic, caring, busy";
    const STORY: &str = "Story: Samuel Tan starts every week juggling staff rides.\n\nWith Grab for Business, bookings and invoices land in one place.\nInsight: Streamlined work transport lets employers enhance their efficiency and improve overall job satisfaction.";

    fn gateway(character: &'static str, story: &'static str) -> Gateway {
        let backend = ScriptedBackend::new()
            .with_responder(CHARACTER_V1, move |_| Some(character.to_string()))
            .with_responder(STORY_V1, move |_| Some(story.to_string()));
        let mut g = Gateway::new(GatewayConfig::default());
        g.register_completion(SCRIPTED_BACKEND_ID, Arc::new(backend));
        g
    }

    fn persona() -> ClusterCard {
        card(0, ClusterKind::Persona, "Efficiency Enthusiasts", &[("Grab", 146), ("Gojek", 60)])
    }

    fn challenge() -> ClusterCard {
        card(2, ClusterKind::Challenge, "Streamlining Work Transport Processes", &[("Grab", 236), ("Gojek", 100)])
    }

    #[test]
    fn character_and_story_chain() {
        let g = gateway(SAMUEL, STORY);
        let ch = generate_character(&g, &persona(), &builtin(CHARACTER_V1).unwrap(), SCRIPTED_BACKEND_ID).unwrap();
        assert_eq!(ch.name, "Samuel Tan");
        assert_eq!(ch.role, "a business owner in Singapore");
        assert_eq!(ch.traits, vec!["pragmatic", "caring", "busy"]);
        let again = generate_character(&g, &persona(), &builtin(CHARACTER_V1).unwrap(), SCRIPTED_BACKEND_ID).unwrap();
        assert_eq!(ch, again);

        let story = generate_story(&g, "ds-1", &ch, &challenge(), "Grab", &builtin(STORY_V1).unwrap(), SCRIPTED_BACKEND_ID, &[]).unwrap();
        assert!(story.concluding_insight.contains("efficiency"));
        assert!(story.concluding_insight.contains("job satisfaction"));
        assert!(story.narrative.contains("\n\nWith Grab"));
        assert_eq!(story.request_digests.len(), 2);
    }

    #[test]
    fn character_without_background_fails() {
        let g = gateway("Name: Samuel Tan\nRole: owner\nTraits: calm", STORY);
        let err = generate_character(&g, &persona(), &builtin(CHARACTER_V1).unwrap(), SCRIPTED_BACKEND_ID).unwrap_err();
        assert_eq!(err, StoryError::AnnotationParse("Background".into()));
    }

    #[test]
    fn story_checks() {
        let g = gateway(SAMUEL, "Story: Samuel takes a taxi.\nInsight: Plan ahead.");
        let ch = generate_character(&g, &persona(), &builtin(CHARACTER_V1).unwrap(), SCRIPTED_BACKEND_ID).unwrap();
        let err = generate_story(&g, "ds", &ch, &challenge(), "Grab", &builtin(STORY_V1).unwrap(), SCRIPTED_BACKEND_ID, &[]).unwrap_err();
        assert_eq!(err, StoryError::BrandMissingFromNarrative("Grab".into()));

        let g = gateway(SAMUEL, "Story: Samuel books Grab.\nInsight:   ");
        let err = generate_story(&g, "ds", &ch, &challenge(), "Grab", &builtin(STORY_V1).unwrap(), SCRIPTED_BACKEND_ID, &[]).unwrap_err();
        assert_eq!(err, StoryError::AnnotationParse("Insight".into()));
    }

    #[test]
    fn brief_sections_in_order_and_stable() {
        let g = gateway(SAMUEL, STORY);
        let ch = generate_character(&g, &persona(), &builtin(CHARACTER_V1).unwrap(), SCRIPTED_BACKEND_ID).unwrap();
        let story = generate_story(&g, "ds-1", &ch, &challenge(), "Grab", &builtin(STORY_V1).unwrap(), SCRIPTED_BACKEND_ID, &["clusters-1".into()])
            .unwrap();
        let brief = export_brief(&story);
        let positions: Vec<usize> = ["# Content brief: Grab", "## Character", "## Story", "## Concluding insight", "## Provenance"]
            .iter()
            .map(|h| brief.find(h).unwrap_or_else(|| panic!("missing {h}")))
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(brief.contains(&story.narrative));
        assert!(brief.contains("clusters-1"));
        assert_eq!(brief, export_brief(&story));
    }
}
