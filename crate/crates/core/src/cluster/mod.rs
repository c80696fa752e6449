//! Persona and challenge clustering over pillar embeddings.
//!
//! X-Means with BIC model selection picks the number of clusters, outliers
//! are trimmed per cluster, and each cluster is annotated by the gateway.
//! Points are rows of equal length; a [`Partition`] refers to them by row
//! index so subsets (local splits, outlier-filtered results) share the same
//! point matrix.

mod annotate;
mod bic;
mod kmeans;
mod outliers;
mod xmeans;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{brand_shares as shares_of, BrandShare, PillarField};
use crate::gateway::{GatewayError, TemplateError};

pub use annotate::{annotate_cluster, parse_annotation, ClusterCard, ClusterKind, ClusterMember, DEFAULT_MAX_EXEMPLARS};
pub use bic::{bic, bic_of, BicScore};
pub use kmeans::{kmeans, kmeans_traced, lloyd_from, KMeansTrace};
pub use outliers::filter_outliers;
pub use xmeans::xmeans;

/// BIC differences at or below this are treated as ties; ties keep the simpler model.
pub const BIC_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("cannot form {k} clusters from {n} points")]
    TooFewPoints { n: usize, k: usize },
    #[error("invalid cluster configuration: {0}")]
    InvalidConfig(String),
    #[error("points must be finite and of equal dimension")]
    InvalidPoints,
    #[error("cluster has no members")]
    EmptyCluster,
    #[error("annotation response is missing: {0}")]
    AnnotationParse(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterPillar {
    Audience,
    Insight,
}

impl ClusterPillar {
    pub fn field(self) -> PillarField {
        match self {
            Self::Audience => PillarField::Audience,
            Self::Insight => PillarField::Insight,
        }
    }

    pub fn kind(self) -> ClusterKind {
        match self {
            Self::Audience => ClusterKind::Persona,
            Self::Insight => ClusterKind::Challenge,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Audience => "audience",
            Self::Insight => "insight",
        }
    }
}

impl std::str::FromStr for ClusterPillar {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "audience" | "persona" | "personas" => Ok(Self::Audience),
            "insight" | "insights" | "challenge" | "challenges" => Ok(Self::Insight),
            other => Err(format!("unknown pillar `{other}` (expected audience or insight)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub k0: usize,
    pub k_max: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub outlier_percentile: f64,
    pub pillar: ClusterPillar,
    /// After splitting stops, merge cluster pairs whose union scores at
    /// least as well as a single cluster.
    pub merge: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k0: 3,
            k_max: 50,
            max_iterations: 100,
            seed: 7,
            outlier_percentile: 95.0,
            pillar: ClusterPillar::Audience,
            merge: true,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.k0 < 1 || self.k0 > self.k_max {
            return Err(ClusterError::InvalidConfig(format!("need 1 <= k0 <= k_max, got k0={} k_max={}", self.k0, self.k_max)));
        }
        if self.max_iterations == 0 {
            return Err(ClusterError::InvalidConfig("max_iterations must be positive".into()));
        }
        if !(self.outlier_percentile > 0.0 && self.outlier_percentile <= 100.0) {
            return Err(ClusterError::InvalidConfig(format!(
                "outlier_percentile {} outside (0, 100]",
                self.outlier_percentile
            )));
        }
        Ok(())
    }
}

/// Assignment of a set of point rows to clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Row indices into the point matrix covered by this partition.
    pub items: Vec<usize>,
    /// Cluster index per entry of `items`.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances from each item to its centroid.
    pub inertia: f64,
}

impl Partition {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Point rows belonging to cluster `c`, in item order.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.items.iter().zip(&self.labels).filter(|(_, &l)| l == c).map(|(&i, _)| i).collect()
    }

    /// Cluster of a point row, if the row is covered.
    pub fn label_of(&self, row: usize) -> Option<usize> {
        self.items.iter().position(|&i| i == row).map(|p| self.labels[p])
    }

    /// Renumbers clusters by their smallest member row.
    pub(crate) fn canonicalize(&mut self) {
        let k = self.k();
        let mut first = vec![usize::MAX; k];
        for (&item, &label) in self.items.iter().zip(&self.labels) {
            first[label] = first[label].min(item);
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&c| (first[c], c));
        let mut remap = vec![0; k];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        self.labels.iter_mut().for_each(|l| *l = remap[*l]);
        self.centroids = order.iter().map(|&c| self.centroids[c].clone()).collect();
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn validate_points(points: &[Vec<f64>]) -> Result<usize, ClusterError> {
    let d = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != d || p.iter().any(|x| !x.is_finite())) {
        return Err(ClusterError::InvalidPoints);
    }
    Ok(d)
}

/// Per-cluster brand counts and shares. `brands[row]` is the brand of point row `row`.
pub fn brand_shares(partition: &Partition, brands: &[String]) -> BTreeMap<usize, BTreeMap<String, BrandShare>> {
    (0..partition.k())
        .map(|c| (c, shares_of(partition.members(c).into_iter().map(|row| brands[row].as_str()))))
        .collect()
}
