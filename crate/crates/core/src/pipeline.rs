//! Stage orchestration over the store and gateway. Every stage reads its
//! inputs from the store, writes one artifact, and is keyed by a digest of
//! its inputs so reruns on unchanged data hit the cache.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{
    annotate_cluster, bic, filter_outliers, xmeans, ClusterCard, ClusterConfig, ClusterError, ClusterKind,
    ClusterMember, ClusterPillar, DEFAULT_MAX_EXEMPLARS,
};
use crate::config::Config;
use crate::digest::{json_digest, short_id};
use crate::domain::{AdCreative, AdKind};
use crate::eval::{evaluate, render_report, EvalError, GroupKey, MetricRow};
use crate::gateway::offline::{HashingEmbedder, HASHING_BACKEND_ID, SCRIPTED_BACKEND_ID};
use crate::gateway::remote::{ChatBackend, RemoteConfig, RemoteEmbedder};
use crate::gateway::template::{builtin, CHALLENGE_V1, CHARACTER_V1, PERSONA_V1, PILLARS_V1, RANKING_V1, STORY_V1};
use crate::gateway::{BackendError, Gateway, GatewayConfig, GatewayError, NormPolicy, TemplateError};
use crate::pillars::{batch_extract, batch_run_id, PillarError, PillarTable, DEFAULT_FAILURE_CEILING};
use crate::rank::{
    build_grounding_block, classifier, ensemble_rank, rank_by_score, RankError, RankedList, Ranker,
    CANDIDATE_EXCERPT_CHARS, ORACLE_CLASSIFIER,
};
use crate::store::{ArtifactKey, ArtifactKind, DatasetHandle, Store, StoreError};
use crate::story::{
    export_brief, generate_character, generate_story, opportunity_matrix, select_opportunity, OpportunityCell,
    Selection, SelectionPolicy, Story, StoryError,
};
use crate::synth::{demo_backend, DEMO_COMPETITOR, DEMO_CORPUS_JSONL, DEMO_OWN_BRAND};

pub type Progress<'a> = &'a (dyn Fn(f64) + Sync);

pub fn no_progress(_: f64) {}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    NotFound(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Pillars(#[from] PillarError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Story(#[from] StoryError),
}

/// Coarse classification used for exit codes and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Invalid,
    NotFound,
    Backend,
}

fn gateway_class(e: &GatewayError) -> ErrorClass {
    match e {
        GatewayError::UnknownBackend(_) | GatewayError::EmptyInput | GatewayError::InvalidRequest(_) | GatewayError::Template(_) => {
            ErrorClass::Invalid
        }
        _ => ErrorClass::Backend,
    }
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            Self::NotFound(_) => ErrorClass::NotFound,
            Self::Store(StoreError::UnknownDataset(_) | StoreError::NotFound(_)) => ErrorClass::NotFound,
            Self::Store(StoreError::Io(_) | StoreError::Corrupt { .. }) => ErrorClass::Backend,
            Self::Gateway(e)
            | Self::Pillars(PillarError::Gateway(e))
            | Self::Cluster(ClusterError::Gateway(e))
            | Self::Rank(RankError::Gateway(e))
            | Self::Story(StoryError::Gateway(e)) => gateway_class(e),
            Self::Backend(_) | Self::Pillars(PillarError::BatchFailureRateExceeded { .. }) => ErrorClass::Backend,
            Self::Rank(RankError::AllRunsFailed(_, inner)) => match inner.as_ref() {
                RankError::Gateway(e) => gateway_class(e),
                _ => ErrorClass::Backend,
            },
            Self::Rank(RankError::UnparsableRanking { .. })
            | Self::Cluster(ClusterError::AnnotationParse(_))
            | Self::Story(StoryError::AnnotationParse(_) | StoryError::BrandMissingFromNarrative(_)) => ErrorClass::Backend,
            _ => ErrorClass::Invalid,
        }
    }
}

/// Registers the offline backends plus any remote ones named in the config.
/// Remote credentials come from the environment only.
pub fn build_gateway(config: &GatewayConfig) -> Result<Gateway, PipelineError> {
    let mut gateway = Gateway::new(config.clone());
    gateway.register_completion(SCRIPTED_BACKEND_ID, Arc::new(demo_backend()));
    gateway.register_embedding(HASHING_BACKEND_ID, Arc::new(HashingEmbedder::default()));
    if config.backend != SCRIPTED_BACKEND_ID {
        let backend = ChatBackend::new(RemoteConfig::from_env(&config.backend)?)?;
        gateway.register_completion(&config.backend, Arc::new(backend));
    }
    if config.embedding_backend != HASHING_BACKEND_ID {
        let backend = RemoteEmbedder::new(RemoteConfig::from_env(&config.embedding_backend)?)?;
        gateway.register_embedding(&config.embedding_backend, Arc::new(backend));
    }
    Ok(gateway)
}

/// Persisted result of one clustering stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRun {
    pub run_id: String,
    pub dataset_id: String,
    pub pillar: ClusterPillar,
    pub pillar_run_id: String,
    pub embedding_backend: String,
    pub config: ClusterConfig,
    pub k: usize,
    pub bic: f64,
    /// Cluster per ad id, outliers excluded.
    pub assignments: BTreeMap<String, usize>,
    pub excluded: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
    pub cards: Vec<ClusterCard>,
}

/// A ranker as named on the command line or in API requests:
/// `score`, `score:<classifier>`, `llm` or `llm-gd` (grounded).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RankerSpec {
    Score { classifier: Option<String> },
    Llm { grounded: bool },
}

impl std::str::FromStr for RankerSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "score" => Ok(Self::Score { classifier: None }),
            "llm" => Ok(Self::Llm { grounded: false }),
            "llm-gd" => Ok(Self::Llm { grounded: true }),
            other => match other.strip_prefix("score:") {
                Some(c) if !c.is_empty() => Ok(Self::Score { classifier: Some(c.to_string()) }),
                _ => Err(format!("unknown ranker `{other}` (expected score, score:<classifier>, llm or llm-gd)")),
            },
        }
    }
}

impl fmt::Display for RankerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Score { classifier: None } => f.write_str("score"),
            Self::Score { classifier: Some(c) } => write!(f, "score:{c}"),
            Self::Llm { grounded: false } => f.write_str("llm"),
            Self::Llm { grounded: true } => f.write_str("llm-gd"),
        }
    }
}

impl TryFrom<String> for RankerSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<RankerSpec> for String {
    fn from(spec: RankerSpec) -> Self {
        spec.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRun {
    pub run_id: String,
    pub dataset_id: String,
    pub label: String,
    pub list: RankedList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub run_id: String,
    pub dataset_id: String,
    /// Ranker label to the ranking run it was computed from.
    pub rankings: BTreeMap<String, String>,
    pub rows: Vec<MetricRow>,
    pub table: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpportunityReport {
    pub dataset_id: String,
    pub persona_run: String,
    pub challenge_run: String,
    pub own_brand: String,
    pub competitor_brand: String,
    pub policy: SelectionPolicy,
    pub cells: Vec<OpportunityCell>,
    pub selection: Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryOutcome {
    pub story: Story,
    pub brief_path: PathBuf,
}

/// Holdout split shared by every ranker so their candidate sets agree.
/// Within each (brand, objective) group of paid ads, the earliest quarter by
/// publication date is the grounding pool and the rest are the candidates.
/// Groups too small to spare three pool ads have no pool.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingSplit {
    pub pools: BTreeMap<GroupKey, Vec<AdCreative>>,
    pub candidates: BTreeMap<GroupKey, Vec<AdCreative>>,
}

impl RankingSplit {
    pub fn of(ads: &[AdCreative]) -> Self {
        let mut groups: BTreeMap<GroupKey, Vec<AdCreative>> = BTreeMap::new();
        for ad in ads.iter().filter(|a| a.kind == AdKind::Ad && a.impressions > 0) {
            groups.entry(GroupKey { brand: ad.brand.clone(), objective: ad.objective }).or_default().push(ad.clone());
        }
        let mut pools = BTreeMap::new();
        let mut candidates = BTreeMap::new();
        for (key, mut group) in groups {
            group.sort_by(|a, b| a.published_at.cmp(&b.published_at).then_with(|| a.id.cmp(&b.id)));
            let pool_size = group.len() / 4;
            if pool_size >= 3 && group.len() - pool_size >= 2 {
                let rest = group.split_off(pool_size);
                pools.insert(key.clone(), group);
                candidates.insert(key, rest);
            } else {
                candidates.insert(key, group);
            }
        }
        Self { pools, candidates }
    }

    pub fn all_candidates(&self) -> Vec<AdCreative> {
        self.candidates.values().flatten().cloned().collect()
    }
}

pub struct Pipeline {
    pub store: Arc<Store>,
    pub gateway: Arc<Gateway>,
    pub config: Config,
}

impl Pipeline {
    /// Opens the store named in the config and builds the gateway, with
    /// request audit records written to the same store.
    pub fn open(config: Config) -> Result<Self, PipelineError> {
        let store = Arc::new(Store::open(&config.store.root)?);
        let gateway = Arc::new(build_gateway(&config.gateway)?.with_audit(store.clone()));
        Ok(Self { store, gateway, config })
    }

    pub fn with_parts(store: Arc<Store>, gateway: Arc<Gateway>, config: Config) -> Self {
        Self { store, gateway, config }
    }

    fn backend(&self) -> &str {
        &self.config.gateway.backend
    }

    pub fn pillar_run_id(&self, dataset_id: &str) -> Result<String, PipelineError> {
        Ok(batch_run_id(dataset_id, &builtin(PILLARS_V1)?, self.backend()))
    }

    /// Extracts pillars for every record, or returns the stored table when the
    /// same dataset, template and backend were already processed.
    pub fn pillars(&self, dataset_id: &str, progress: Progress) -> Result<PillarTable, PipelineError> {
        let records = self.store.records(dataset_id)?;
        let template = builtin(PILLARS_V1)?;
        let key = ArtifactKey::new(ArtifactKind::Pillars, dataset_id, batch_run_id(dataset_id, &template, self.backend()));
        if self.store.has_artifact(&key) {
            progress(1.0);
            return Ok(self.store.get_artifact(&key)?);
        }
        let total = records.len().max(1) as f64;
        let table = batch_extract(
            &self.gateway,
            dataset_id,
            &records,
            &template,
            self.backend(),
            DEFAULT_FAILURE_CEILING,
            &|done, _| progress(done as f64 / total),
        )?;
        self.store.put_artifact(&key, &table)?;
        Ok(table)
    }

    fn latest_pillars(&self, dataset_id: &str) -> Result<PillarTable, PipelineError> {
        let run = self
            .store
            .latest_run(ArtifactKind::Pillars, dataset_id)
            .map_err(|_| PipelineError::NotFound(format!("no pillar run for dataset `{dataset_id}`; run pillars first")))?;
        Ok(self.store.get_artifact(&ArtifactKey::new(ArtifactKind::Pillars, dataset_id, run))?)
    }

    pub fn cluster_run_id(&self, dataset_id: &str, pillar_run_id: &str, config: &ClusterConfig) -> Result<String, PipelineError> {
        let template = builtin(annotation_template(config.pillar.kind()))?;
        Ok(short_id(
            "clusters",
            &json_digest(&(
                dataset_id,
                pillar_run_id,
                config,
                &self.config.gateway.embedding_backend,
                &template.body,
                self.backend(),
            )),
        ))
    }

    /// Embeds the chosen pillar, runs X-Means, drops distance outliers and
    /// names each surviving cluster.
    pub fn clusters(&self, dataset_id: &str, config: &ClusterConfig, progress: Progress) -> Result<ClusterRun, PipelineError> {
        config.validate()?;
        let table = self.latest_pillars(dataset_id)?;
        let kind = artifact_kind(config.pillar);
        let run_id = self.cluster_run_id(dataset_id, &table.run_id, config)?;
        let key = ArtifactKey::new(kind, dataset_id, &run_id);
        if self.store.has_artifact(&key) {
            progress(1.0);
            return Ok(self.store.get_artifact(&key)?);
        }

        let brands: BTreeMap<String, String> =
            self.store.records(dataset_id)?.into_iter().map(|r| (r.id, r.brand)).collect();
        let ids: Vec<&String> = table.rows.keys().collect();
        let texts: Vec<String> = table.rows.values().map(|p| p.field(config.pillar.field()).to_string()).collect();
        if texts.is_empty() {
            return Err(PipelineError::Invalid(format!("pillar table for `{dataset_id}` has no rows")));
        }
        let matrix = self.gateway.embed(&texts, &self.config.gateway.embedding_backend, NormPolicy::L2Normalized)?;
        progress(0.2);
        let partition = xmeans(&matrix.vectors, config)?;
        let score = bic(&partition, &matrix.vectors).value;
        let (kept, excluded) = filter_outliers(&partition, &matrix.vectors, config.outlier_percentile);
        progress(0.5);

        let template = builtin(annotation_template(config.pillar.kind()))?;
        let clusters: Vec<usize> = (0..kept.k()).filter(|&c| !kept.members(c).is_empty()).collect();
        let cards = clusters
            .par_iter()
            .map(|&c| {
                let members: Vec<ClusterMember> = kept
                    .members(c)
                    .into_iter()
                    .map(|row| ClusterMember {
                        ad_id: ids[row].clone(),
                        brand: brands.get(ids[row]).cloned().unwrap_or_default(),
                        pillars: table.rows[ids[row]].clone(),
                    })
                    .collect();
                annotate_cluster(&self.gateway, c, config.pillar.kind(), &members, &template, self.backend(), DEFAULT_MAX_EXEMPLARS)
            })
            .collect::<Result<Vec<_>, _>>()?;
        progress(0.9);

        let run = ClusterRun {
            run_id,
            dataset_id: dataset_id.to_string(),
            pillar: config.pillar,
            pillar_run_id: table.run_id.clone(),
            embedding_backend: self.config.gateway.embedding_backend.clone(),
            config: config.clone(),
            k: kept.k(),
            bic: score,
            assignments: kept.items.iter().zip(&kept.labels).map(|(&row, &l)| (ids[row].clone(), l)).collect(),
            excluded: excluded.iter().map(|&row| ids[row].clone()).collect(),
            centroids: kept.centroids.clone(),
            cards,
        };
        self.store.put_artifact(&key, &run)?;
        progress(1.0);
        Ok(run)
    }

    /// The most recent cluster run for a pillar.
    pub fn latest_clusters(&self, dataset_id: &str, pillar: ClusterPillar) -> Result<ClusterRun, PipelineError> {
        let kind = artifact_kind(pillar);
        let run = self.store.latest_run(kind, dataset_id).map_err(|_| {
            PipelineError::NotFound(format!("no {} run for dataset `{dataset_id}`; run clusters first", kind.as_str()))
        })?;
        Ok(self.store.get_artifact(&ArtifactKey::new(kind, dataset_id, run))?)
    }

    fn resolve(&self, spec: &RankerSpec) -> RankerSpec {
        match spec {
            RankerSpec::Score { classifier: None } => {
                RankerSpec::Score { classifier: Some(self.config.rank.classifier.clone()) }
            }
            other => other.clone(),
        }
    }

    /// Ranks the holdout candidates of every (brand, objective) group. Score
    /// rankings sort the whole set at once; LLM rankings run per group, with
    /// the group's pool as grounding, and are concatenated in group order.
    pub fn rank(&self, dataset_id: &str, spec: &RankerSpec, progress: Progress) -> Result<RankingRun, PipelineError> {
        let records = self.store.records(dataset_id)?;
        let split = RankingSplit::of(&records);
        if split.candidates.is_empty() {
            return Err(PipelineError::Invalid(format!("dataset `{dataset_id}` has no paid ads with impressions")));
        }
        let resolved = self.resolve(spec);
        let layer = self.config.rank.layer();
        let ranker_config = self.config.rank.ranker_config(self.backend());
        let template = builtin(RANKING_V1)?;
        let run_id = match &resolved {
            RankerSpec::Score { classifier } => {
                short_id("rank", &json_digest(&(dataset_id, classifier, &layer, self.config.rank.alpha, self.config.rank.beta)))
            }
            RankerSpec::Llm { grounded } => {
                short_id("rank", &json_digest(&(dataset_id, grounded, &ranker_config, &template.body)))
            }
        };
        let key = ArtifactKey::new(ArtifactKind::Ranking, dataset_id, &run_id);
        if self.store.has_artifact(&key) {
            progress(1.0);
            return Ok(self.store.get_artifact(&key)?);
        }

        let list = match &resolved {
            RankerSpec::Score { classifier: id } => {
                let id = id.as_deref().unwrap_or(ORACLE_CLASSIFIER);
                let model = classifier(id, &records)?;
                rank_by_score(dataset_id, &split.all_candidates(), &layer, model.as_ref())?
            }
            RankerSpec::Llm { grounded } => {
                let groups: Vec<(&GroupKey, &Vec<AdCreative>)> = split.candidates.iter().collect();
                let mut lists = Vec::with_capacity(groups.len());
                for (i, (key, candidates)) in groups.iter().enumerate() {
                    let grounding = if *grounded {
                        let pool = split.pools.get(*key).map(Vec::as_slice).unwrap_or_default();
                        Some(build_grounding_block(pool, CANDIDATE_EXCERPT_CHARS)?)
                    } else {
                        None
                    };
                    lists.push(ensemble_rank(&self.gateway, dataset_id, candidates, &ranker_config, &template, grounding.as_ref())?);
                    progress((i + 1) as f64 / groups.len() as f64);
                }
                concatenate(dataset_id, lists, *grounded)
            }
        };
        let run = RankingRun { run_id, dataset_id: dataset_id.to_string(), label: spec.to_string(), list };
        self.store.put_artifact(&key, &run)?;
        progress(1.0);
        Ok(run)
    }

    /// Ranks with every listed ranker (reusing stored rankings) and scores
    /// each against the true top-R by CTR per (brand, objective) group.
    pub fn evaluate(&self, dataset_id: &str, rankers: &[RankerSpec], progress: Progress) -> Result<EvaluationReport, PipelineError> {
        if rankers.is_empty() {
            return Err(PipelineError::Invalid("at least one ranker is required".into()));
        }
        self.config.eval.validate()?;
        let mut lists = BTreeMap::new();
        let mut runs = BTreeMap::new();
        for (i, spec) in rankers.iter().enumerate() {
            let run = self.rank(dataset_id, spec, &|p| progress((i as f64 + p) / rankers.len() as f64 * 0.9))?;
            runs.insert(run.label.clone(), run.run_id);
            lists.insert(run.label, run.list);
        }
        let candidates = RankingSplit::of(&self.store.records(dataset_id)?).all_candidates();
        let rows = evaluate(&lists, &candidates, &self.config.eval)?;
        let run_id = short_id("report", &json_digest(&(dataset_id, &runs, &self.config.eval)));
        let report = EvaluationReport {
            run_id: run_id.clone(),
            dataset_id: dataset_id.to_string(),
            rankings: runs,
            table: render_report(&rows),
            rows,
        };
        self.store.put_artifact(&ArtifactKey::new(ArtifactKind::Report, dataset_id, run_id), &report)?;
        progress(1.0);
        Ok(report)
    }

    pub fn opportunities(&self, dataset_id: &str, own: &str, competitor: &str) -> Result<OpportunityReport, PipelineError> {
        let personas = self.latest_clusters(dataset_id, ClusterPillar::Audience)?;
        let challenges = self.latest_clusters(dataset_id, ClusterPillar::Insight)?;
        let cells = opportunity_matrix(&personas.cards, &challenges.cards, own, competitor)?;
        let selection = select_opportunity(&cells, self.config.story.policy)?;
        Ok(OpportunityReport {
            dataset_id: dataset_id.to_string(),
            persona_run: personas.run_id,
            challenge_run: challenges.run_id,
            own_brand: own.to_string(),
            competitor_brand: competitor.to_string(),
            policy: self.config.story.policy,
            cells,
            selection,
        })
    }

    /// Writes a character and a story for one persona × challenge cell and
    /// exports the brief to `briefs/<run_id>.md`.
    pub fn story(&self, dataset_id: &str, persona_id: usize, challenge_id: usize, brand: &str) -> Result<StoryOutcome, PipelineError> {
        let personas = self.latest_clusters(dataset_id, ClusterPillar::Audience)?;
        let challenges = self.latest_clusters(dataset_id, ClusterPillar::Insight)?;
        let persona = personas
            .cards
            .iter()
            .find(|c| c.cluster_id == persona_id)
            .ok_or_else(|| PipelineError::NotFound(format!("persona {persona_id} not in run {}", personas.run_id)))?;
        let challenge = challenges
            .cards
            .iter()
            .find(|c| c.cluster_id == challenge_id)
            .ok_or_else(|| PipelineError::NotFound(format!("challenge {challenge_id} not in run {}", challenges.run_id)))?;
        if brand.trim().is_empty() {
            return Err(PipelineError::Invalid("brand must not be empty".into()));
        }
        let character = generate_character(&self.gateway, persona, &builtin(CHARACTER_V1)?, self.backend())?;
        let story = generate_story(
            &self.gateway,
            dataset_id,
            &character,
            challenge,
            brand,
            &builtin(STORY_V1)?,
            self.backend(),
            &[personas.run_id.clone(), challenges.run_id.clone()],
        )?;
        self.store.put_artifact(&ArtifactKey::new(ArtifactKind::Story, dataset_id, &story.run_id), &story)?;
        let brief_path = self.store.put_brief(&story.run_id, &export_brief(&story))?;
        Ok(StoryOutcome { story, brief_path })
    }
}

fn annotation_template(kind: ClusterKind) -> &'static str {
    match kind {
        ClusterKind::Persona => PERSONA_V1,
        ClusterKind::Challenge => CHALLENGE_V1,
    }
}

pub fn artifact_kind(pillar: ClusterPillar) -> ArtifactKind {
    match pillar {
        ClusterPillar::Audience => ArtifactKind::Personas,
        ClusterPillar::Insight => ArtifactKind::Challenges,
    }
}

fn concatenate(dataset_id: &str, lists: Vec<RankedList>, grounded: bool) -> RankedList {
    let runs = lists.iter().map(|l| l.run_orderings.len()).max().unwrap_or(0);
    let run_orderings = (0..runs)
        .map(|i| lists.iter().flat_map(|l| l.run_orderings.get(i).cloned().unwrap_or_default()).collect())
        .collect();
    RankedList {
        dataset_id: dataset_id.to_string(),
        candidate_ids: lists.iter().flat_map(|l| l.candidate_ids.clone()).collect(),
        scores: None,
        ranker: Ranker::LlmEnsemble,
        grounded,
        run_ids: lists.iter().flat_map(|l| l.run_ids.clone()).collect(),
        run_orderings,
        degraded: lists.iter().any(|l| l.degraded),
    }
}

/// Paths and headline results of a demo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub dataset: DatasetHandle,
    pub pillar_run: String,
    pub personas: ClusterRun,
    pub challenges: ClusterRun,
    pub ranking: RankingRun,
    pub report: EvaluationReport,
    pub opportunities: OpportunityReport,
    pub story: StoryOutcome,
}

pub const DEMO_RANKERS: [&str; 3] = ["score", "llm", "llm-gd"];

/// Runs every stage on the bundled synthetic corpus with the offline
/// backends, writing into a store at `root`.
pub fn run_demo(root: &Path, progress: &(dyn Fn(&str, f64) + Sync)) -> Result<DemoSummary, PipelineError> {
    let mut config = Config::default();
    config.store.root = root.to_path_buf();
    config.gateway = GatewayConfig::default();
    let pipeline = Pipeline::open(config)?;

    let dataset = pipeline.store.load_jsonl_bytes(DEMO_CORPUS_JSONL.as_bytes(), "bundled:demo_corpus.jsonl")?;
    let id = dataset.dataset_id.clone();
    progress("ingest", 1.0);
    let pillars = pipeline.pillars(&id, &|p| progress("pillars", p))?;

    let mut cluster_config = pipeline.config.cluster.clone();
    cluster_config.pillar = ClusterPillar::Audience;
    let personas = pipeline.clusters(&id, &cluster_config, &|p| progress("personas", p))?;
    cluster_config.pillar = ClusterPillar::Insight;
    let challenges = pipeline.clusters(&id, &cluster_config, &|p| progress("challenges", p))?;

    let rankers: Vec<RankerSpec> = DEMO_RANKERS.iter().map(|r| r.parse().expect("demo ranker names parse")).collect();
    let report = pipeline.evaluate(&id, &rankers, &|p| progress("evaluate", p))?;
    let ranking = pipeline.rank(&id, &rankers[2], &no_progress)?;

    let opportunities = pipeline.opportunities(&id, DEMO_OWN_BRAND, DEMO_COMPETITOR)?;
    let cell = &opportunities.selection.cell;
    let story = pipeline.story(&id, cell.persona_id, cell.challenge_id, DEMO_OWN_BRAND)?;
    progress("story", 1.0);

    Ok(DemoSummary {
        dataset,
        pillar_run: pillars.run_id,
        personas,
        challenges,
        ranking,
        report,
        opportunities,
        story,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranker_specs_round_trip() {
        for s in ["score", "score:lexical-baseline", "llm", "llm-gd"] {
            let spec: RankerSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert!("score:".parse::<RankerSpec>().is_err());
        assert!("gd".parse::<RankerSpec>().is_err());
        let json = serde_json::to_string(&RankerSpec::Llm { grounded: true }).unwrap();
        assert_eq!(json, "\"llm-gd\"");
    }

    #[test]
    fn split_keeps_pools_earlier_and_disjoint() {
        let ads: Vec<AdCreative> = crate::synth::DEMO_CORPUS_JSONL
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        let split = RankingSplit::of(&ads);
        assert!(!split.pools.is_empty());
        for (key, pool) in &split.pools {
            let candidates = &split.candidates[key];
            assert!(pool.len() >= 3);
            let last_pool = pool.iter().map(|a| a.published_at).max().unwrap();
            assert!(candidates.iter().all(|c| c.published_at >= last_pool));
            assert!(pool.iter().all(|p| p.brand == key.brand && candidates.iter().all(|c| c.id != p.id)));
        }
        let total: usize = split.pools.values().chain(split.candidates.values()).map(Vec::len).sum();
        assert_eq!(total, ads.iter().filter(|a| a.kind == AdKind::Ad && a.impressions > 0).count());
    }

    #[test]
    fn demo_runs_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let summary = run_demo(dir.path(), &|_, _| {}).unwrap();
        assert!(summary.personas.cards.len() >= 2, "{:?}", summary.personas.cards.len());
        assert!(summary.challenges.cards.len() >= 2);
        assert!(summary.report.table.contains("llm-gd"));
        assert!(!summary.story.story.concluding_insight.is_empty());
        assert!(summary.story.brief_path.is_file());
    }

    #[test]
    fn missing_stages_are_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = Config::default();
        config.store.root = dir.path().to_path_buf();
        let pipeline = Pipeline::open(config).unwrap();
        let ds = pipeline.store.load_jsonl_bytes(DEMO_CORPUS_JSONL.as_bytes(), "demo").unwrap();
        let err = pipeline.clusters(&ds.dataset_id, &ClusterConfig::default(), &no_progress).unwrap_err();
        assert_eq!(err.class(), ErrorClass::NotFound);
        let err = pipeline.story(&ds.dataset_id, 0, 0, "Lumo").unwrap_err();
        assert_eq!(err.class(), ErrorClass::NotFound);
        let err = pipeline.pillars("ds-0000000000000000", &no_progress).unwrap_err();
        assert_eq!(err.class(), ErrorClass::NotFound);
    }
}
