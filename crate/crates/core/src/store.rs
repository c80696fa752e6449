//! Dataset ingestion and the on-disk artifact store.
//!
//! Layout under the store root:
//!
//! ```text
//! datasets/<dataset_id>/records.jsonl   canonical records, one per line
//! datasets/<dataset_id>/meta.json       handle, provenance and filter audit
//! artifacts/<kind>/<dataset_id>/<run_id>.json
//! artifacts/<kind>/<dataset_id>/LATEST  run id of the most recent write
//! briefs/<run_id>.md
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place, so a
//! reader sees either the previous complete file or the new one.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::domain::{brand_shares, AdCreative, AdKind, BrandShare, Objective};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{} invalid record(s): {}", issues.len(), format_issues(issues))]
    Validation { issues: Vec<RecordIssue> },
    #[error("duplicate id `{id}` on line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("artifact not found: {0}")]
    NotFound(String),
    #[error("malformed artifact key: {0}")]
    BadKey(String),
    #[error("artifact {key} has schema_version {found}, expected {SCHEMA_VERSION}")]
    SchemaMismatch { key: String, found: u32 },
    #[error("corrupt store file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordIssue {
    pub line: usize,
    pub id: String,
    pub reason: String,
}

fn format_issues(issues: &[RecordIssue]) -> String {
    issues
        .iter()
        .take(5)
        .map(|i| format!("line {} ({}): {}", i.line, i.id, i.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Jsonl,
    Csv,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" | "ndjson" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown dataset format `{other}` (expected jsonl or csv)")),
        }
    }
}

impl DatasetFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Jsonl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHandle {
    pub dataset_id: String,
    pub item_count: usize,
    pub source_path: String,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub dataset_id: String,
    pub total: usize,
    pub ads: usize,
    pub organic: usize,
    pub per_brand: BTreeMap<String, BrandShare>,
}

/// Half-open publication window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl DateRange {
    pub fn contains(&self, t: &DateTime<Utc>) -> bool {
        self.start <= *t && *t < self.end
    }
}

/// Record selection. Every `None` criterion matches everything, so the
/// default filter is the identity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubsetFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brands: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinds: Option<BTreeSet<AdKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objectives: Option<BTreeSet<Objective>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_range: Option<DateRange>,
}

impl SubsetFilter {
    pub fn brand(mut self, brand: impl Into<String>) -> Self {
        self.brands.get_or_insert_with(BTreeSet::new).insert(brand.into());
        self
    }

    pub fn kind(mut self, kind: AdKind) -> Self {
        self.kinds = Some([kind].into());
        self
    }

    pub fn objective(mut self, objective: Objective) -> Self {
        self.objectives = Some([objective].into());
        self
    }

    pub fn published(mut self, start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        self.date_range = Some(DateRange { start, end });
        self
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    pub fn matches(&self, ad: &AdCreative) -> bool {
        self.brands.as_ref().is_none_or(|b| b.contains(&ad.brand))
            && self.kinds.as_ref().is_none_or(|k| k.contains(&ad.kind))
            && self.objectives.as_ref().is_none_or(|o| o.contains(&ad.objective))
            && self.date_range.as_ref().is_none_or(|r| r.contains(&ad.published_at))
    }

    /// Conjunction of two filters.
    pub fn and(&self, other: &SubsetFilter) -> SubsetFilter {
        fn both<T: Ord + Clone>(a: &Option<BTreeSet<T>>, b: &Option<BTreeSet<T>>) -> Option<BTreeSet<T>> {
            match (a, b) {
                (Some(a), Some(b)) => Some(a.intersection(b).cloned().collect()),
                (Some(s), None) | (None, Some(s)) => Some(s.clone()),
                (None, None) => None,
            }
        }
        let date_range = match (self.date_range, other.date_range) {
            (Some(a), Some(b)) => {
                let start = a.start.max(b.start);
                Some(DateRange { start, end: a.end.min(b.end).max(start) })
            }
            (a, b) => a.or(b),
        };
        SubsetFilter {
            brands: both(&self.brands, &other.brands),
            kinds: both(&self.kinds, &other.kinds),
            objectives: both(&self.objectives, &other.objectives),
            date_range,
        }
    }

    /// Human-readable predicate, recorded with the derived dataset.
    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if let Some(b) = &self.brands {
            parts.push(format!("brand in {{{}}}", b.iter().cloned().collect::<Vec<_>>().join(", ")));
        }
        if let Some(k) = &self.kinds {
            parts.push(format!("kind in {{{}}}", k.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", ")));
        }
        if let Some(o) = &self.objectives {
            parts.push(format!(
                "objective in {{{}}}",
                o.iter().map(|o| o.as_str()).collect::<Vec<_>>().join(", ")
            ));
        }
        if let Some(r) = &self.date_range {
            parts.push(format!("published in [{}, {})", r.start.to_rfc3339(), r.end.to_rfc3339()));
        }
        if parts.is_empty() {
            "all records".to_string()
        } else {
            parts.join(" and ")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Pillars,
    /// Clusters over the audience pillar.
    Personas,
    /// Clusters over the insight pillar.
    Challenges,
    Ranking,
    Report,
    Story,
    Audit,
}

impl ArtifactKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pillars => "pillars",
            Self::Personas => "personas",
            Self::Challenges => "challenges",
            Self::Ranking => "ranking",
            Self::Report => "report",
            Self::Story => "story",
            Self::Audit => "audit",
        }
    }
}

/// Address of one stored artifact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArtifactKey {
    pub kind: ArtifactKind,
    pub dataset_id: String,
    pub run_id: String,
}

impl ArtifactKey {
    pub fn new(kind: ArtifactKind, dataset_id: impl Into<String>, run_id: impl Into<String>) -> Self {
        Self { kind, dataset_id: dataset_id.into(), run_id: run_id.into() }
    }

    fn validate(&self) -> Result<(), StoreError> {
        for part in [&self.dataset_id, &self.run_id] {
            if !is_path_safe(part) {
                return Err(StoreError::BadKey(self.to_string()));
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for ArtifactKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.kind.as_str(), self.dataset_id, self.run_id)
    }
}

fn is_path_safe(part: &str) -> bool {
    !part.is_empty()
        && part.len() <= 128
        && part != "."
        && part != ".."
        && part.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub key: ArtifactKey,
    pub path: PathBuf,
    pub checksum: String,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    kind: ArtifactKind,
    dataset_id: String,
    run_id: String,
    payload: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetMeta {
    schema_version: u32,
    handle: DatasetHandle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    filter: Option<String>,
}

pub struct Store {
    root: PathBuf,
    write_locks: Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("datasets"))?;
        fs::create_dir_all(root.join("artifacts"))?;
        Ok(Self { root, write_locks: Mutex::new(HashMap::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Parses, validates and persists a dataset file. Identical content maps
    /// to the same dataset id.
    pub fn load_dataset(&self, path: &Path, format: DatasetFormat) -> Result<DatasetHandle, StoreError> {
        let records = match format {
            DatasetFormat::Jsonl => parse_jsonl(BufReader::new(fs::File::open(path)?))?,
            DatasetFormat::Csv => parse_csv(fs::File::open(path)?)?,
        };
        self.ingest(records, &path.display().to_string(), None)
    }

    /// Same as [`Store::load_dataset`] for in-memory JSONL content.
    pub fn load_jsonl_bytes(&self, bytes: &[u8], source: &str) -> Result<DatasetHandle, StoreError> {
        let records = parse_jsonl(BufReader::new(bytes))?;
        self.ingest(records, source, None)
    }

    /// Validates and persists records that are already in memory.
    pub fn ingest_records(&self, records: Vec<AdCreative>, source: &str) -> Result<DatasetHandle, StoreError> {
        let numbered = records.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect();
        self.ingest(numbered, source, None)
    }

    fn ingest(
        &self,
        records: Vec<(usize, AdCreative)>,
        source: &str,
        lineage: Option<(String, String)>,
    ) -> Result<DatasetHandle, StoreError> {
        let mut issues = Vec::new();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (line, ad) in &records {
            if let Some(_first) = seen.insert(ad.id.as_str(), *line) {
                return Err(StoreError::DuplicateId { id: ad.id.clone(), line: *line });
            }
            if let Err(e) = ad.validate() {
                let reason = match e {
                    crate::domain::DomainError::InvalidAd { reason, .. } => reason,
                    other => other.to_string(),
                };
                issues.push(RecordIssue { line: *line, id: ad.id.clone(), reason });
            }
        }
        if !issues.is_empty() {
            return Err(StoreError::Validation { issues });
        }

        let mut canonical = Vec::new();
        for (_, ad) in &records {
            serde_json::to_writer(&mut canonical, ad).map_err(|e| StoreError::Corrupt {
                path: PathBuf::from(source),
                message: e.to_string(),
            })?;
            canonical.push(b'\n');
        }
        let checksum = sha256_hex(&canonical);
        let dataset_id = format!("ds-{}", &checksum[..16]);
        let dir = self.root.join("datasets").join(&dataset_id);

        if let Ok(existing) = self.read_meta(&dataset_id) {
            if existing.handle.checksum == checksum {
                return Ok(existing.handle);
            }
        }

        let handle = DatasetHandle {
            dataset_id: dataset_id.clone(),
            item_count: records.len(),
            source_path: source.to_string(),
            checksum,
        };
        let (parent, filter) = match lineage {
            Some((p, f)) => (Some(p), Some(f)),
            None => (None, None),
        };
        let meta = DatasetMeta { schema_version: SCHEMA_VERSION, handle: handle.clone(), parent, filter };
        let _guard = self.lock_for(&dir);
        fs::create_dir_all(&dir)?;
        atomic_write(&dir.join("records.jsonl"), &canonical)?;
        atomic_write(&dir.join("meta.json"), &to_pretty(&meta))?;
        Ok(handle)
    }

    fn read_meta(&self, dataset_id: &str) -> Result<DatasetMeta, StoreError> {
        if !is_path_safe(dataset_id) {
            return Err(StoreError::UnknownDataset(dataset_id.to_string()));
        }
        let path = self.root.join("datasets").join(dataset_id).join("meta.json");
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => StoreError::UnknownDataset(dataset_id.to_string()),
            _ => StoreError::Io(e),
        })?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt { path, message: e.to_string() })
    }

    pub fn handle(&self, dataset_id: &str) -> Result<DatasetHandle, StoreError> {
        Ok(self.read_meta(dataset_id)?.handle)
    }

    pub fn records(&self, dataset_id: &str) -> Result<Vec<AdCreative>, StoreError> {
        let meta = self.read_meta(dataset_id)?;
        let path = self.root.join("datasets").join(dataset_id).join("records.jsonl");
        let records: Vec<AdCreative> = parse_jsonl(BufReader::new(fs::File::open(&path)?))?
            .into_iter()
            .map(|(_, r)| r)
            .collect();
        if records.len() != meta.handle.item_count {
            return Err(StoreError::Corrupt {
                path,
                message: format!("expected {} records, found {}", meta.handle.item_count, records.len()),
            });
        }
        Ok(records)
    }

    pub fn list_datasets(&self) -> Result<Vec<DatasetHandle>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("datasets"))? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Ok(meta) = self.read_meta(&name) {
                out.push(meta.handle);
            }
        }
        out.sort_by(|a, b| a.dataset_id.cmp(&b.dataset_id));
        Ok(out)
    }

    pub fn dataset_stats(&self, dataset_id: &str) -> Result<DatasetStats, StoreError> {
        Ok(stats_of(dataset_id, &self.records(dataset_id)?))
    }

    /// Persists the matching records as a new dataset; the source is untouched.
    pub fn filter_subset(&self, dataset_id: &str, filter: &SubsetFilter) -> Result<DatasetHandle, StoreError> {
        let parent = self.read_meta(dataset_id)?;
        let records: Vec<(usize, AdCreative)> = self
            .records(dataset_id)?
            .into_iter()
            .filter(|ad| filter.matches(ad))
            .enumerate()
            .map(|(i, r)| (i + 1, r))
            .collect();
        let description = filter.describe();
        let source = format!("{} | {}", parent.handle.source_path, description);
        self.ingest(records, &source, Some((dataset_id.to_string(), description)))
    }

    fn lock_for(&self, path: &Path) -> LockGuard {
        let lock = self.write_locks.lock().entry(path.to_path_buf()).or_default().clone();
        lock.lock_arc()
    }

    fn artifact_dir(&self, kind: ArtifactKind, dataset_id: &str) -> PathBuf {
        self.root.join("artifacts").join(kind.as_str()).join(dataset_id)
    }

    fn artifact_path(&self, key: &ArtifactKey) -> PathBuf {
        self.artifact_dir(key.kind, &key.dataset_id).join(format!("{}.json", key.run_id))
    }

    /// Writes an artifact and marks it as the latest run for its kind and dataset.
    /// Writers to the same key are serialized; the last one wins.
    pub fn put_artifact<T: Serialize>(&self, key: &ArtifactKey, value: &T) -> Result<Receipt, StoreError> {
        key.validate()?;
        let envelope = Envelope {
            schema_version: SCHEMA_VERSION,
            kind: key.kind,
            dataset_id: key.dataset_id.clone(),
            run_id: key.run_id.clone(),
            payload: value,
        };
        let bytes = to_pretty(&envelope);
        let path = self.artifact_path(key);
        let _guard = self.lock_for(&path);
        fs::create_dir_all(path.parent().expect("artifact path has a parent"))?;
        atomic_write(&path, &bytes)?;
        if key.kind != ArtifactKind::Audit {
            let latest = self.artifact_dir(key.kind, &key.dataset_id).join("LATEST");
            atomic_write(&latest, key.run_id.as_bytes())?;
        }
        Ok(Receipt { key: key.clone(), path, checksum: sha256_hex(&bytes) })
    }

    pub fn get_artifact<T: DeserializeOwned>(&self, key: &ArtifactKey) -> Result<T, StoreError> {
        key.validate()?;
        let path = self.artifact_path(key);
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => StoreError::NotFound(key.to_string()),
            _ => StoreError::Io(e),
        })?;
        let envelope: Envelope<T> =
            serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt { path, message: e.to_string() })?;
        if envelope.schema_version != SCHEMA_VERSION {
            return Err(StoreError::SchemaMismatch { key: key.to_string(), found: envelope.schema_version });
        }
        Ok(envelope.payload)
    }

    pub fn has_artifact(&self, key: &ArtifactKey) -> bool {
        key.validate().is_ok() && self.artifact_path(key).is_file()
    }

    /// Run id of the most recent artifact written for `kind` on a dataset.
    pub fn latest_run(&self, kind: ArtifactKind, dataset_id: &str) -> Result<String, StoreError> {
        let probe = ArtifactKey::new(kind, dataset_id, "LATEST");
        probe.validate()?;
        let path = self.artifact_dir(kind, dataset_id).join("LATEST");
        fs::read_to_string(&path)
            .map(|s| s.trim().to_string())
            .map_err(|_| StoreError::NotFound(format!("{}/{}/<latest>", kind.as_str(), dataset_id)))
    }

    pub fn list_runs(&self, kind: ArtifactKind, dataset_id: &str) -> Result<Vec<String>, StoreError> {
        let dir = self.artifact_dir(kind, dataset_id);
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut runs: Vec<String> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str()?.strip_suffix(".json").map(str::to_string))
            .collect();
        runs.sort();
        Ok(runs)
    }

    /// Writes a generated brief to `briefs/<run_id>.md`.
    pub fn put_brief(&self, run_id: &str, markdown: &str) -> Result<PathBuf, StoreError> {
        if !is_path_safe(run_id) {
            return Err(StoreError::BadKey(run_id.to_string()));
        }
        let dir = self.root.join("briefs");
        fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{run_id}.md"));
        let _guard = self.lock_for(&path);
        atomic_write(&path, markdown.as_bytes())?;
        Ok(path)
    }
}

type LockGuard = parking_lot::ArcMutexGuard<parking_lot::RawMutex, ()>;

pub fn stats_of(dataset_id: &str, records: &[AdCreative]) -> DatasetStats {
    let ads = records.iter().filter(|r| r.kind == AdKind::Ad).count();
    DatasetStats {
        dataset_id: dataset_id.to_string(),
        total: records.len(),
        ads,
        organic: records.len() - ads,
        per_brand: brand_shares(records.iter().map(|r| r.brand.as_str())),
    }
}

fn to_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes to JSON");
    bytes.push(b'\n');
    bytes
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().expect("store paths have a parent");
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_data()?;
    tmp.persist(path).map_err(|e| StoreError::Io(e.error))?;
    Ok(())
}

/// Reads JSON-lines records, skipping blank lines. Line numbers are 1-based.
pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<(usize, AdCreative)>, StoreError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| StoreError::Parse { line: idx + 1, message: e.to_string() })?;
        out.push((idx + 1, record));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct CsvRow {
    id: String,
    brand: String,
    objective: String,
    kind: String,
    #[serde(default)]
    text: String,
    #[serde(default)]
    image_ref: Option<String>,
    impressions: u64,
    clicks: u64,
    published_at: String,
}

/// Header aliases accepted for CSV input, mapped onto record field names.
pub const CSV_HEADER_ALIASES: &[(&str, &str)] = &[
    ("ad_id", "id"),
    ("brand_name", "brand"),
    ("ad_objective", "objective"),
    ("type", "kind"),
    ("body", "text"),
    ("image", "image_ref"),
    ("image_url", "image_ref"),
    ("published", "published_at"),
    ("date", "published_at"),
];

/// Reads CSV with a header row. Line numbers count the header as line 1.
pub fn parse_csv<R: std::io::Read>(reader: R) -> Result<Vec<(usize, AdCreative)>, StoreError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::Headers).from_reader(reader);
    let headers = rdr.headers().map_err(|e| StoreError::Parse { line: 1, message: e.to_string() })?;
    let mapped: csv::StringRecord = headers
        .iter()
        .map(|h| {
            let h = h.to_ascii_lowercase();
            CSV_HEADER_ALIASES
                .iter()
                .find(|(alias, _)| *alias == h)
                .map(|(_, field)| field.to_string())
                .unwrap_or(h)
        })
        .collect();
    rdr.set_headers(mapped.clone());

    let mut out = Vec::new();
    for result in rdr.records() {
        let raw = result.map_err(|e| StoreError::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = raw.position().map(|p| p.line() as usize).unwrap_or(0);
        let parse_err = |message: String| StoreError::Parse { line, message };
        let row: CsvRow = raw.deserialize(Some(&mapped)).map_err(|e| parse_err(e.to_string()))?;
        let published_at = DateTime::parse_from_rfc3339(row.published_at.trim())
            .map_err(|e| parse_err(format!("published_at: {e}")))?
            .with_timezone(&Utc);
        out.push((
            line,
            AdCreative {
                id: row.id,
                brand: row.brand,
                objective: row.objective.parse().map_err(|e: crate::domain::DomainError| parse_err(e.to_string()))?,
                kind: row.kind.parse().map_err(|e: crate::domain::DomainError| parse_err(e.to_string()))?,
                text: row.text,
                image_ref: row.image_ref.filter(|s| !s.trim().is_empty()),
                impressions: row.impressions,
                clicks: row.clicks,
                published_at,
            },
        ));
    }
    Ok(out)
}
