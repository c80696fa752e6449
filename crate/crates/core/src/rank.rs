//! Ranking of creatives: classifier probabilities through the score layer,
//! and LLM rank elicitation with an optional grounding block and a rank-sum
//! ensemble.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{json_digest, short_id};
use crate::domain::{tercile_label, tercile_thresholds, AdCreative, CtrDistribution, CtrLabel, DomainError, ScoreLayer};
use crate::gateway::offline::HashingEmbedder;
use crate::gateway::{CompletionRequest, Gateway, GatewayError, PromptTemplate, TemplateError};

pub const ORACLE_CLASSIFIER: &str = "oracle";
pub const LEXICAL_CLASSIFIER: &str = "lexical-baseline";
pub const CANDIDATE_EXCERPT_CHARS: usize = 500;

const SYSTEM_PROMPT: &str =
    "You are an experienced performance marketer. Rank advertisements strictly in the requested format.";
const LEXICAL_WEIGHTS: &str = include_str!("../weights/lexical_baseline.v1.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankError {
    #[error("unknown classifier `{0}`")]
    UnknownClassifier(String),
    #[error("ad `{0}` has no usable performance counters")]
    MissingPerformance(String),
    #[error("no candidates to rank")]
    NoCandidates,
    #[error("duplicate candidate id `{0}`")]
    DuplicateCandidate(String),
    #[error("grounding pool has {0} ads, at least 3 are required")]
    PoolTooSmall(usize),
    #[error("grounding pool mixes brands `{0}` and `{1}`")]
    MixedGroundingBrands(String, String),
    #[error("grounding ad `{0}` is also a candidate")]
    GroundingOverlap(String),
    #[error("ranking response recognized {recognized} of {expected} candidate ids")]
    UnparsableRanking { recognized: usize, expected: usize },
    #[error("all {0} ensemble runs failed; last error: {1}")]
    AllRunsFailed(usize, Box<RankError>),
    #[error("invalid ranker configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Predicts a CTR label distribution for a creative.
pub trait CtrClassifier: Send + Sync {
    fn id(&self) -> &str;
    fn classify(&self, ad: &AdCreative) -> Result<CtrDistribution, RankError>;
}

/// Reads the true CTR and puts 0.8 on its tercile label, 0.1 on each other.
/// Thresholds come from the reference ads it was built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleClassifier {
    pub thresholds: (f64, f64),
}

impl OracleClassifier {
    pub fn new(thresholds: (f64, f64)) -> Self {
        Self { thresholds }
    }

    /// Thresholds from every reference ad with impressions.
    pub fn from_ads(ads: &[AdCreative]) -> Result<Self, RankError> {
        let ctrs: Vec<f64> = ads.iter().filter_map(|a| a.ctr().ok()).map(|c| c.value).collect();
        tercile_thresholds(&ctrs).map(Self::new).ok_or(RankError::NoCandidates)
    }
}

impl CtrClassifier for OracleClassifier {
    fn id(&self) -> &str {
        ORACLE_CLASSIFIER
    }

    fn classify(&self, ad: &AdCreative) -> Result<CtrDistribution, RankError> {
        let ctr = ad.ctr().map_err(|_| RankError::MissingPerformance(ad.id.clone()))?;
        let dist = match tercile_label(ctr.value, self.thresholds)? {
            CtrLabel::High => CtrDistribution::new(0.8, 0.1, 0.1),
            CtrLabel::Average => CtrDistribution::new(0.1, 0.8, 0.1),
            CtrLabel::Low => CtrDistribution::new(0.1, 0.1, 0.8),
        };
        Ok(dist?)
    }
}

#[derive(Debug, Clone, Deserialize)]
struct LexicalWeightsFile {
    id: String,
    dim: usize,
    seed: u64,
    bias: f64,
    scale: f64,
    tokens: BTreeMap<String, f64>,
}

/// Text-only baseline: hashed unigram/bigram features dotted with shipped
/// weights give a logit `z`; the distribution is the softmax of `(z, 0, -z)`
/// over (High, Average, Low).
#[derive(Debug, Clone)]
pub struct LexicalBaseline {
    id: String,
    embedder: HashingEmbedder,
    bias: f64,
    scale: f64,
    weights: Vec<f64>,
}

impl LexicalBaseline {
    pub fn shipped() -> Self {
        let file: LexicalWeightsFile = serde_json::from_str(LEXICAL_WEIGHTS).expect("shipped lexical weights parse");
        let embedder = HashingEmbedder { dim: file.dim, seed: file.seed };
        let mut weights = vec![0.0; file.dim];
        for (token, w) in &file.tokens {
            // a phrase entry weights only its bigram feature, not its words
            let mut row = embedder.embed_one(token);
            if token.split_whitespace().count() > 1 {
                for word in token.split_whitespace() {
                    row.iter_mut().zip(embedder.embed_one(word)).for_each(|(r, x)| *r -= x);
                }
            }
            weights.iter_mut().zip(row).for_each(|(s, x)| *s += w * x);
        }
        Self { id: file.id, embedder, bias: file.bias, scale: file.scale, weights }
    }

    pub fn logit(&self, text: &str) -> f64 {
        let row = self.embedder.embed_one(text);
        self.bias + self.scale * row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>()
    }

    pub fn version(&self) -> &str {
        &self.id
    }
}

impl CtrClassifier for LexicalBaseline {
    fn id(&self) -> &str {
        LEXICAL_CLASSIFIER
    }

    fn classify(&self, ad: &AdCreative) -> Result<CtrDistribution, RankError> {
        let z = self.logit(&ad.text).clamp(-30.0, 30.0);
        Ok(CtrDistribution::from_weights(z.exp(), 1.0, (-z).exp())?)
    }
}

/// Built-in classifier by id. The oracle takes its thresholds from `reference`.
pub fn classifier(id: &str, reference: &[AdCreative]) -> Result<Box<dyn CtrClassifier>, RankError> {
    match id {
        ORACLE_CLASSIFIER => Ok(Box::new(OracleClassifier::from_ads(reference)?)),
        LEXICAL_CLASSIFIER => Ok(Box::new(LexicalBaseline::shipped())),
        other => Err(RankError::UnknownClassifier(other.to_string())),
    }
}

/// `alpha * p_high + beta * (1 - p_high)`, evaluated as
/// `beta + (alpha - beta) * p_high` so the result is monotone in `p_high`
/// under floating point.
pub fn score(dist: &CtrDistribution, layer: &ScoreLayer) -> f64 {
    layer.beta + (layer.alpha - layer.beta) * dist.p_high
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranker {
    ScoreLayer,
    LlmSingle,
    LlmEnsemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub dataset_id: String,
    pub candidate_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    pub ranker: Ranker,
    pub grounded: bool,
    pub run_ids: Vec<String>,
    /// Per-run orderings behind an ensemble, in run order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub run_orderings: Vec<Vec<String>>,
    /// More than half of the ensemble runs failed; the order comes from the survivors.
    #[serde(default)]
    pub degraded: bool,
}

fn check_candidates(candidates: &[AdCreative]) -> Result<(), RankError> {
    if candidates.is_empty() {
        return Err(RankError::NoCandidates);
    }
    let mut seen = HashSet::new();
    for ad in candidates {
        if !seen.insert(ad.id.as_str()) {
            return Err(RankError::DuplicateCandidate(ad.id.clone()));
        }
    }
    Ok(())
}

/// Sorts by score descending; equal scores by ascending id.
pub fn rank_by_score(
    dataset_id: &str,
    candidates: &[AdCreative],
    layer: &ScoreLayer,
    classifier: &dyn CtrClassifier,
) -> Result<RankedList, RankError> {
    check_candidates(candidates)?;
    let mut scored = candidates
        .iter()
        .map(|ad| Ok((ad.id.clone(), score(&classifier.classify(ad)?, layer))))
        .collect::<Result<Vec<_>, RankError>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let run_id = short_id("score", &json_digest(&(dataset_id, classifier.id(), layer, &scored)));
    Ok(RankedList {
        dataset_id: dataset_id.to_string(),
        candidate_ids: scored.iter().map(|(id, _)| id.clone()).collect(),
        scores: Some(scored.iter().map(|(_, s)| *s).collect()),
        ranker: Ranker::ScoreLayer,
        grounded: false,
        run_ids: vec![run_id],
        run_orderings: Vec::new(),
        degraded: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankerConfig {
    pub temperature: f64,
    pub ensemble_runs: usize,
    pub grounding_exemplars: usize,
    pub backend_id: String,
    pub seed_base: u64,
}

impl Default for RankerConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            ensemble_runs: 5,
            grounding_exemplars: 3,
            backend_id: crate::gateway::offline::SCRIPTED_BACKEND_ID.to_string(),
            seed_base: 0,
        }
    }
}

impl RankerConfig {
    pub fn validate(&self) -> Result<(), RankError> {
        if self.ensemble_runs == 0 {
            return Err(RankError::InvalidConfig("ensemble_runs must be at least 1".into()));
        }
        if self.grounding_exemplars != 0 && self.grounding_exemplars != 3 {
            return Err(RankError::InvalidConfig(format!(
                "grounding_exemplars must be 0 or 3, got {}",
                self.grounding_exemplars
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingExemplar {
    pub ad_id: String,
    pub excerpt: String,
    pub ctr: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingBlock {
    pub best: GroundingExemplar,
    pub average: GroundingExemplar,
    pub worst: GroundingExemplar,
    pub source_brand: String,
}

impl GroundingBlock {
    pub fn ad_ids(&self) -> [&str; 3] {
        [&self.best.ad_id, &self.average.ad_id, &self.worst.ad_id]
    }

    pub fn render(&self) -> String {
        let line = |e: &GroundingExemplar| format!("- {} (CTR {:.4}): {}", e.label, e.ctr, e.excerpt);
        format!(
            "\nFor reference, three earlier advertisements from {} with known performance:\n{}\n{}\n{}\n",
            self.source_brand,
            line(&self.best),
            line(&self.average),
            line(&self.worst)
        )
    }
}

pub fn excerpt(text: &str, max_chars: usize) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    match flat.char_indices().nth(max_chars) {
        Some((cut, _)) => format!("{}...", &flat[..cut]),
        None => flat,
    }
}

/// Best, median (lower median for even sizes) and worst CTR ads of a
/// single-brand pool. CTR ties are broken by ascending id.
pub fn build_grounding_block(pool: &[AdCreative], excerpt_chars: usize) -> Result<GroundingBlock, RankError> {
    if pool.len() < 3 {
        return Err(RankError::PoolTooSmall(pool.len()));
    }
    let brand = &pool[0].brand;
    if let Some(other) = pool.iter().find(|a| &a.brand != brand) {
        return Err(RankError::MixedGroundingBrands(brand.clone(), other.brand.clone()));
    }
    let mut rated = pool
        .iter()
        .map(|ad| ad.ctr().map(|c| (c.value, ad)).map_err(|_| RankError::MissingPerformance(ad.id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    rated.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    let n = rated.len();
    let exemplar = |(ctr, ad): (f64, &AdCreative), label: &str| GroundingExemplar {
        ad_id: ad.id.clone(),
        excerpt: excerpt(&ad.text, excerpt_chars),
        ctr,
        label: label.to_string(),
    };
    Ok(GroundingBlock {
        best: exemplar(rated[n - 1], "best performing"),
        average: exemplar(rated[(n - 1) / 2], "average performing"),
        worst: exemplar(rated[0], "worst performing"),
        source_brand: brand.clone(),
    })
}

/// Parses a comma/newline separated id list into a full permutation:
/// unknown tokens are skipped, repeats keep their first position, and missing
/// ids are appended in input order.
pub fn parse_ranking(text: &str, candidate_ids: &[String]) -> Result<Vec<String>, RankError> {
    let known: HashSet<&str> = candidate_ids.iter().map(String::as_str).collect();
    let mut seen = HashSet::new();
    let mut order = Vec::with_capacity(candidate_ids.len());
    for token in text.split(|c: char| c == ',' || c == '\n' || c == ';' || c == '>') {
        let token = token
            .trim()
            .trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == ')' || c == '-' || c == '#')
            .trim()
            .trim_matches(|c: char| matches!(c, '[' | ']' | '"' | '\'' | '`' | '*' | '.'))
            .trim();
        if known.contains(token) && seen.insert(token.to_string()) {
            order.push(token.to_string());
        }
    }
    let recognized = order.len();
    if recognized * 2 < candidate_ids.len() {
        return Err(RankError::UnparsableRanking { recognized, expected: candidate_ids.len() });
    }
    order.extend(candidate_ids.iter().filter(|id| !seen.contains(id.as_str())).cloned());
    Ok(order)
}

fn ranking_bindings(candidates: &[AdCreative], grounding: Option<&GroundingBlock>) -> BTreeMap<String, String> {
    let lines = candidates
        .iter()
        .map(|ad| format!("{} | {}", ad.id, excerpt(&ad.text, CANDIDATE_EXCERPT_CHARS)))
        .collect::<Vec<_>>()
        .join("\n");
    [
        ("count".to_string(), candidates.len().to_string()),
        ("grounding".to_string(), grounding.map(GroundingBlock::render).unwrap_or_default()),
        ("candidates".to_string(), lines),
    ]
    .into()
}

fn check_grounding(candidates: &[AdCreative], grounding: Option<&GroundingBlock>) -> Result<(), RankError> {
    if let Some(block) = grounding {
        let ids: HashSet<&str> = candidates.iter().map(|a| a.id.as_str()).collect();
        if let Some(id) = block.ad_ids().into_iter().find(|id| ids.contains(id)) {
            return Err(RankError::GroundingOverlap(id.to_string()));
        }
    }
    Ok(())
}

/// One LLM ranking call with seed `seed_base + run_index`.
pub fn llm_rank_once(
    gateway: &Gateway,
    dataset_id: &str,
    candidates: &[AdCreative],
    config: &RankerConfig,
    template: &PromptTemplate,
    grounding: Option<&GroundingBlock>,
    run_index: u64,
) -> Result<RankedList, RankError> {
    config.validate()?;
    check_candidates(candidates)?;
    check_grounding(candidates, grounding)?;
    let request = CompletionRequest::from_template(
        config.backend_id.clone(),
        SYSTEM_PROMPT,
        template,
        ranking_bindings(candidates, grounding),
    )?
    .with_temperature(config.temperature)
    .with_seed(config.seed_base.wrapping_add(run_index));
    let result = gateway.complete(&request)?;
    let ids: Vec<String> = candidates.iter().map(|a| a.id.clone()).collect();
    let order = parse_ranking(&result.text, &ids)?;
    Ok(RankedList {
        dataset_id: dataset_id.to_string(),
        candidate_ids: order.clone(),
        scores: None,
        ranker: Ranker::LlmSingle,
        grounded: grounding.is_some(),
        run_ids: vec![short_id("llm", &result.request_digest)],
        run_orderings: vec![order],
        degraded: false,
    })
}

/// Sums 1-based positions across orderings and sorts ascending by total,
/// ties by ascending id. Every ordering must be a permutation of the same set.
pub fn rank_sum(orderings: &[Vec<String>]) -> Vec<(String, usize)> {
    let mut totals: HashMap<&str, usize> = HashMap::new();
    for ordering in orderings {
        for (pos, id) in ordering.iter().enumerate() {
            *totals.entry(id.as_str()).or_default() += pos + 1;
        }
    }
    let mut out: Vec<(String, usize)> = totals.into_iter().map(|(id, t)| (id.to_string(), t)).collect();
    out.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Runs `ensemble_runs` rankings and aggregates them by rank sum. When more
/// than half the runs fail the surviving runs are used and the result is
/// flagged `degraded`; when all fail the last error is returned.
pub fn ensemble_rank(
    gateway: &Gateway,
    dataset_id: &str,
    candidates: &[AdCreative],
    config: &RankerConfig,
    template: &PromptTemplate,
    grounding: Option<&GroundingBlock>,
) -> Result<RankedList, RankError> {
    config.validate()?;
    check_candidates(candidates)?;
    check_grounding(candidates, grounding)?;
    let runs: Vec<Result<RankedList, RankError>> = (0..config.ensemble_runs as u64)
        .into_par_iter()
        .map(|i| llm_rank_once(gateway, dataset_id, candidates, config, template, grounding, i))
        .collect();

    let total = runs.len();
    let mut survivors = Vec::new();
    let mut last_error = None;
    for run in runs {
        match run {
            Ok(list) => survivors.push(list),
            Err(e) => last_error = Some(e),
        }
    }
    if survivors.is_empty() {
        return Err(RankError::AllRunsFailed(total, Box::new(last_error.expect("at least one run"))));
    }
    let failures = total - survivors.len();
    let orderings: Vec<Vec<String>> = survivors.iter().map(|l| l.candidate_ids.clone()).collect();
    Ok(RankedList {
        dataset_id: dataset_id.to_string(),
        candidate_ids: rank_sum(&orderings).into_iter().map(|(id, _)| id).collect(),
        scores: None,
        ranker: Ranker::LlmEnsemble,
        grounded: grounding.is_some(),
        run_ids: survivors.iter().flat_map(|l| l.run_ids.clone()).collect(),
        run_orderings: orderings,
        degraded: failures * 2 > total,
    })
}
