//! Ranking evaluation against observed CTR: relevance sets, nDCG@k and
//! Recall@k per (brand, objective) group, and the comparison table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AdCreative, Objective};
use crate::rank::RankedList;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("relevance size {r} exceeds the {n} available ads")]
    RTooLarge { r: usize, n: usize },
    #[error("ad `{0}` has no usable CTR")]
    MissingPerformance(String),
    #[error("rankings disagree on the candidate set: {0}")]
    CandidateMismatch(String),
    #[error("invalid evaluation configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub relevance_size: usize,
    pub cutoffs: Vec<usize>,
    pub gain: Gain,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { relevance_size: 5, cutoffs: vec![3, 5, 10], gain: Gain::Binary }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.relevance_size == 0 {
            return Err(EvalError::InvalidConfig("relevance_size must be at least 1".into()));
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) || !self.cutoffs.windows(2).all(|w| w[0] < w[1]) {
            return Err(EvalError::InvalidConfig(format!("cutoffs must be positive and increasing, got {:?}", self.cutoffs)));
        }
        Ok(())
    }
}

/// The `r` ads with the highest CTR; equal CTRs are taken by ascending id.
pub fn relevance_set(ads: &[AdCreative], r: usize) -> Result<BTreeSet<String>, EvalError> {
    if r > ads.len() {
        return Err(EvalError::RTooLarge { r, n: ads.len() });
    }
    let mut rated = ads
        .iter()
        .map(|ad| ad.ctr().map(|c| (c.value, ad.id.as_str())).map_err(|_| EvalError::MissingPerformance(ad.id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    rated.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(rated.into_iter().take(r).map(|(_, id)| id.to_string()).collect())
}

/// `|top-k ∩ relevant| / |relevant|`; 0 for an empty relevant set.
pub fn recall_at_k(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranking.iter().take(k).filter(|id| relevant.contains(*id)).count();
    hits as f64 / relevant.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ndcg {
    pub value: f64,
    /// No relevant items, so the ideal DCG is zero; `value` is reported as 0.
    pub undefined_ideal: bool,
}

/// Binary-gain nDCG with a `log2(i + 1)` discount over 1-based positions.
pub fn ndcg_at_k(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> Ndcg {
    if relevant.is_empty() {
        return Ndcg { value: 0.0, undefined_ideal: true };
    }
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranking.iter().take(k).enumerate().filter(|(_, id)| relevant.contains(*id)).map(|(i, _)| discount(i)).sum();
    let idcg: f64 = (0..relevant.len().min(k)).map(discount).sum();
    Ndcg { value: dcg / idcg, undefined_ideal: false }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub brand: String,
    pub objective: Objective,
}

impl std::fmt::Display for GroupKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} / {}", self.brand, self.objective.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub ranker: String,
    pub group: GroupKey,
    pub ndcg_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
    /// Relevance size actually used: the configured R, capped at the group size.
    pub relevance_size: usize,
    pub candidates: usize,
}

/// Evaluates every ranking on every (brand, objective) group of its
/// candidates. Each ranking is restricted to a group's ads in its own order;
/// relevance is computed once per group. Rows come out grouped, then in
/// ranker-label order.
pub fn evaluate(
    rankings: &BTreeMap<String, RankedList>,
    ads: &[AdCreative],
    config: &EvalConfig,
) -> Result<Vec<MetricRow>, EvalError> {
    config.validate()?;
    let Some((first_label, first)) = rankings.iter().next() else {
        return Ok(Vec::new());
    };
    let expected: BTreeSet<&str> = first.candidate_ids.iter().map(String::as_str).collect();
    for (label, list) in rankings {
        let ids: BTreeSet<&str> = list.candidate_ids.iter().map(String::as_str).collect();
        if ids != expected || ids.len() != list.candidate_ids.len() {
            return Err(EvalError::CandidateMismatch(format!("`{label}` and `{first_label}` rank different ads")));
        }
    }
    let by_id: BTreeMap<&str, &AdCreative> = ads.iter().map(|a| (a.id.as_str(), a)).collect();
    let mut groups: BTreeMap<GroupKey, Vec<AdCreative>> = BTreeMap::new();
    for id in &expected {
        let ad = by_id.get(id).ok_or_else(|| EvalError::CandidateMismatch(format!("candidate `{id}` is not in the dataset")))?;
        groups.entry(GroupKey { brand: ad.brand.clone(), objective: ad.objective }).or_default().push((*ad).clone());
    }

    let mut rows = Vec::new();
    for (group, members) in groups {
        let r = config.relevance_size.min(members.len());
        let relevant = relevance_set(&members, r)?;
        let member_ids: BTreeSet<&str> = members.iter().map(|a| a.id.as_str()).collect();
        for (label, list) in rankings {
            let ranking: Vec<String> =
                list.candidate_ids.iter().filter(|id| member_ids.contains(id.as_str())).cloned().collect();
            rows.push(MetricRow {
                ranker: label.clone(),
                group: group.clone(),
                ndcg_at: config.cutoffs.iter().map(|&k| (k, ndcg_at_k(&ranking, &relevant, k).value)).collect(),
                recall_at: config.cutoffs.iter().map(|&k| (k, recall_at_k(&ranking, &relevant, k))).collect(),
                relevance_size: r,
                candidates: members.len(),
            });
        }
    }
    Ok(rows)
}

/// Three decimals with trailing zeros dropped: 0.6, 0.588, 0.
pub fn format_metric(value: f64) -> String {
    let s = format!("{value:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

pub const REPORT_COLUMNS: [(&str, Column); 4] =
    [("nDCG@5", Column::Ndcg(5)), ("nDCG@10", Column::Ndcg(10)), ("Recall@3", Column::Recall(3)), ("Recall@5", Column::Recall(5))];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Ndcg(usize),
    Recall(usize),
}

fn cell(row: &MetricRow, column: Column) -> String {
    let value = match column {
        Column::Ndcg(k) => row.ndcg_at.get(&k),
        Column::Recall(k) => row.recall_at.get(&k),
    };
    value.map_or_else(|| "-".to_string(), |v| format_metric(*v))
}

/// Aligned plain-text table, one block per group:
/// ranker, nDCG@5, nDCG@10, Recall@3, Recall@5.
pub fn render_report(rows: &[MetricRow]) -> String {
    let mut by_group: BTreeMap<&GroupKey, Vec<&MetricRow>> = BTreeMap::new();
    for row in rows {
        by_group.entry(&row.group).or_default().push(row);
    }
    let mut out = String::new();
    for (group, rows) in by_group {
        let width = rows.iter().map(|r| r.ranker.chars().count()).max().unwrap_or(0).max(6);
        let _ = writeln!(out, "{group} ({} ads, R={})", rows[0].candidates, rows[0].relevance_size);
        let _ = write!(out, "{:<width$}", "");
        for (title, _) in REPORT_COLUMNS {
            let _ = write!(out, "  {title:>8}");
        }
        out.push('\n');
        for row in rows {
            let _ = write!(out, "{:<width$}", row.ranker);
            for (_, column) in REPORT_COLUMNS {
                let _ = write!(out, "  {:>8}", cell(row, column));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
