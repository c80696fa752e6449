//! Core record types shared by every pipeline stage.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("impressions is zero; CTR is undefined")]
    ZeroImpressions,
    #[error("clicks ({clicks}) exceed impressions ({impressions})")]
    ClicksExceedImpressions { clicks: u64, impressions: u64 },
    #[error("invalid tercile thresholds: low {lo} > high {hi}")]
    InvalidThresholds { lo: f64, hi: f64 },
    #[error("CTR value {0} outside [0, 1]")]
    CtrOutOfRange(f64),
    #[error("distribution is not a probability simplex: {0:?}")]
    InvalidDistribution([f64; 3]),
    #[error("ad {id}: {reason}")]
    InvalidAd { id: String, reason: String },
    #[error("unknown {what} `{value}`")]
    UnknownVariant { what: &'static str, value: String },
}

/// Campaign objective chosen on the ad platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Sales,
    Conversion,
    Traffic,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdKind {
    Ad,
    Organic,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Self::Sales, Self::Conversion, Self::Traffic, Self::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sales => "sales",
            Self::Conversion => "conversion",
            Self::Traffic => "traffic",
            Self::Other => "other",
        }
    }
}

impl AdKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ad => "ad",
            Self::Organic => "organic",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for AdKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sales" => Ok(Self::Sales),
            "conversion" => Ok(Self::Conversion),
            "traffic" => Ok(Self::Traffic),
            "other" => Ok(Self::Other),
            _ => Err(DomainError::UnknownVariant { what: "objective", value: s.to_string() }),
        }
    }
}

impl FromStr for AdKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ad" => Ok(Self::Ad),
            "organic" => Ok(Self::Organic),
            _ => Err(DomainError::UnknownVariant { what: "kind", value: s.to_string() }),
        }
    }
}

/// One ad or organic post with its performance counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdCreative {
    pub id: String,
    pub brand: String,
    pub objective: Objective,
    pub kind: AdKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub impressions: u64,
    pub clicks: u64,
    pub published_at: DateTime<Utc>,
}

impl AdCreative {
    /// Checks the record-level invariants. Id uniqueness is a dataset concern.
    pub fn validate(&self) -> Result<(), DomainError> {
        let invalid = |reason: &str| DomainError::InvalidAd { id: self.id.clone(), reason: reason.to_string() };
        if self.id.trim().is_empty() {
            return Err(invalid("empty id"));
        }
        if self.brand.trim().is_empty() {
            return Err(invalid("empty brand"));
        }
        if self.clicks > self.impressions {
            return Err(invalid(&format!(
                "clicks ({}) exceed impressions ({})",
                self.clicks, self.impressions
            )));
        }
        if self.text.is_empty() && self.image_ref.is_none() {
            return Err(invalid("empty text requires an image_ref"));
        }
        Ok(())
    }

    pub fn ctr(&self) -> Result<CtrObservation, DomainError> {
        ctr(self.clicks, self.impressions)
    }
}

/// A click-through rate, either derived from counters or supplied directly.
///
/// Derived observations keep the exact counters so labels can be recomputed
/// without accumulating rounding drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtrObservation {
    pub value: f64,
    pub derived: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clicks: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impressions: Option<u64>,
}

impl CtrObservation {
    pub fn supplied(value: f64) -> Result<Self, DomainError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(DomainError::CtrOutOfRange(value));
        }
        Ok(Self { value, derived: false, clicks: None, impressions: None })
    }
}

pub fn ctr(clicks: u64, impressions: u64) -> Result<CtrObservation, DomainError> {
    if impressions == 0 {
        return Err(DomainError::ZeroImpressions);
    }
    if clicks > impressions {
        return Err(DomainError::ClicksExceedImpressions { clicks, impressions });
    }
    Ok(CtrObservation {
        value: clicks as f64 / impressions as f64,
        derived: true,
        clicks: Some(clicks),
        impressions: Some(impressions),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CtrLabel {
    Low,
    Average,
    High,
}

/// Bins a CTR value: `[0, lo)` is Low, `[lo, hi)` is Average, `[hi, 1]` is High.
pub fn tercile_label(ctr: f64, thresholds: (f64, f64)) -> Result<CtrLabel, DomainError> {
    let (lo, hi) = thresholds;
    if lo > hi || lo.is_nan() || hi.is_nan() {
        return Err(DomainError::InvalidThresholds { lo, hi });
    }
    Ok(if ctr < lo {
        CtrLabel::Low
    } else if ctr < hi {
        CtrLabel::Average
    } else {
        CtrLabel::High
    })
}

/// Tercile thresholds from an observed CTR sample.
///
/// With the sample sorted ascending, `lo = s[n/3]` and `hi = s[2n/3]`, so the
/// bottom third labels Low and the top third High.
pub fn tercile_thresholds(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some((sorted[n / 3], sorted[(2 * n) / 3]))
}

/// The six text fields extracted from a creative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentPillars {
    pub audience: String,
    pub need: String,
    pub insight: String,
    pub product: String,
    pub archetype: String,
    pub tone: String,
    pub raw_response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PillarField {
    Audience,
    Need,
    Insight,
    Product,
    Archetype,
    Tone,
}

impl PillarField {
    pub const ALL: [PillarField; 6] =
        [Self::Audience, Self::Need, Self::Insight, Self::Product, Self::Archetype, Self::Tone];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Audience => "audience",
            Self::Need => "need",
            Self::Insight => "insight",
            Self::Product => "product",
            Self::Archetype => "archetype",
            Self::Tone => "tone",
        }
    }

    /// Label used in the line-oriented response format.
    pub fn label(self) -> &'static str {
        match self {
            Self::Audience => "Audience",
            Self::Need => "Need",
            Self::Insight => "Insight",
            Self::Product => "Product",
            Self::Archetype => "Archetype",
            Self::Tone => "Tone",
        }
    }
}

impl fmt::Display for PillarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl ContentPillars {
    pub fn field(&self, field: PillarField) -> &str {
        match field {
            PillarField::Audience => &self.audience,
            PillarField::Need => &self.need,
            PillarField::Insight => &self.insight,
            PillarField::Product => &self.product,
            PillarField::Archetype => &self.archetype,
            PillarField::Tone => &self.tone,
        }
    }
}

/// Predicted distribution over the three CTR labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtrDistribution {
    pub p_high: f64,
    pub p_avg: f64,
    pub p_low: f64,
}

impl CtrDistribution {
    pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

    pub fn new(p_high: f64, p_avg: f64, p_low: f64) -> Result<Self, DomainError> {
        let probs = [p_high, p_avg, p_low];
        let in_range = probs.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p));
        if !in_range || (probs.iter().sum::<f64>() - 1.0).abs() > Self::SIMPLEX_TOLERANCE {
            return Err(DomainError::InvalidDistribution(probs));
        }
        Ok(Self { p_high, p_avg, p_low })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(high: f64, avg: f64, low: f64) -> Result<Self, DomainError> {
        let total = high + avg + low;
        if !(total.is_finite() && total > 0.0) || high < 0.0 || avg < 0.0 || low < 0.0 {
            return Err(DomainError::InvalidDistribution([high, avg, low]));
        }
        let p_high = high / total;
        let p_avg = avg / total;
        Self::new(p_high, p_avg, (1.0 - p_high - p_avg).max(0.0))
    }
}

/// Affine map from `p(High)` to a ranking score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreLayer {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ScoreLayer {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.0 }
    }
}

impl ScoreLayer {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, DomainError> {
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(DomainError::InvalidDistribution([alpha, beta, f64::NAN]));
        }
        Ok(Self { alpha, beta })
    }

    /// `alpha == beta` scores every distribution identically.
    pub fn is_degenerate(&self) -> bool {
        self.alpha == self.beta
    }
}

/// Count of one brand's items in a group, and its fraction of the group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrandShare {
    pub count: usize,
    pub share: f64,
}

/// Per-brand counts and shares over a sequence of brand names.
pub fn brand_shares<'a>(brands: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, BrandShare> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    for brand in brands {
        *counts.entry(brand.to_string()).or_default() += 1;
        total += 1;
    }
    counts
        .into_iter()
        .map(|(brand, count)| (brand, BrandShare { count, share: count as f64 / total as f64 }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ad(id: &str) -> AdCreative {
        AdCreative {
            id: id.into(),
            brand: "Acme".into(),
            objective: Objective::Traffic,
            kind: AdKind::Ad,
            text: "Ride to work".into(),
            image_ref: None,
            impressions: 1000,
            clicks: 40,
            published_at: "2023-10-01T00:00:00Z".parse().unwrap(),
        }
    }

    #[test]
    fn ctr_examples() {
        assert_eq!(ctr(40, 1000).unwrap().value, 0.04);
        assert_eq!(ctr(0, 1000).unwrap().value, 0.0);
        assert!(ctr(0, 1000).unwrap().derived);
        assert_eq!(ctr(5, 0), Err(DomainError::ZeroImpressions));
        assert_eq!(ctr(6, 5), Err(DomainError::ClicksExceedImpressions { clicks: 6, impressions: 5 }));
    }

    #[test]
    fn tercile_examples() {
        let t = (0.01, 0.03);
        assert_eq!(tercile_label(0.05, t).unwrap(), CtrLabel::High);
        assert_eq!(tercile_label(0.02, t).unwrap(), CtrLabel::Average);
        assert_eq!(tercile_label(0.01, t).unwrap(), CtrLabel::Average);
        assert_eq!(tercile_label(0.03, t).unwrap(), CtrLabel::High);
        assert_eq!(tercile_label(0.0, t).unwrap(), CtrLabel::Low);
        assert!(matches!(tercile_label(0.02, (0.03, 0.01)), Err(DomainError::InvalidThresholds { .. })));
    }

    #[test]
    fn thresholds_split_sample_in_thirds() {
        let (lo, hi) = tercile_thresholds(&[0.06, 0.01, 0.04, 0.02, 0.05, 0.03]).unwrap();
        let labels: Vec<_> = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06]
            .iter()
            .map(|&c| tercile_label(c, (lo, hi)).unwrap())
            .collect();
        use CtrLabel::*;
        assert_eq!(labels, vec![Low, Low, Average, Average, High, High]);
        assert_eq!(tercile_thresholds(&[]), None);
    }

    #[test]
    fn ad_validation() {
        assert!(ad("a").validate().is_ok());
        let mut bad = ad("a");
        bad.clicks = 2000;
        assert!(bad.validate().is_err());
        let mut imageless = ad("b");
        imageless.text.clear();
        assert!(imageless.validate().is_err());
        imageless.image_ref = Some("img://1".into());
        assert!(imageless.validate().is_ok());
    }

    #[test]
    fn distribution_simplex() {
        assert!(CtrDistribution::new(0.8, 0.1, 0.1).is_ok());
        assert!(CtrDistribution::new(0.8, 0.2, 0.1).is_err());
        let d = CtrDistribution::from_weights(2.0, 1.0, 1.0).unwrap();
        assert!((d.p_high + d.p_avg + d.p_low - 1.0).abs() < 1e-12);
    }

    #[test]
    fn record_field_names() {
        let json = serde_json::to_value(ad("a")).unwrap();
        let mut keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["brand", "clicks", "id", "impressions", "kind", "objective", "published_at", "text"]
        );
        assert_eq!(json["objective"], "traffic");
        assert_eq!(json["kind"], "ad");
    }

    #[test]
    fn shares_of_a_group() {
        let brands = ["A"; 7].into_iter().chain(["B"; 3]);
        let shares = brand_shares(brands);
        assert_eq!(shares["A"].count, 7);
        assert!((shares["A"].share - 0.7).abs() < 1e-12);
        assert!((shares["B"].share - 0.3).abs() < 1e-12);
        assert_eq!(brand_shares(["solo"])["solo"].share, 1.0);
    }

    proptest! {
        #[test]
        fn ctr_monotone(clicks in 0u64..1000, extra in 1u64..1000, imps in 1000u64..5000) {
            let base = ctr(clicks, imps).unwrap().value;
            prop_assert!(ctr(clicks + 1, imps).unwrap().value >= base);
            prop_assert!(ctr(clicks, imps + extra).unwrap().value <= base);
        }

        #[test]
        fn tercile_partitions_unit_interval(a in 0.0f64..1.0, b in 0.0f64..1.0, x in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let label = tercile_label(x, (lo, hi)).unwrap();
            let expected = [(x < lo, CtrLabel::Low), (lo <= x && x < hi, CtrLabel::Average), (x >= hi, CtrLabel::High)];
            prop_assert_eq!(expected.iter().filter(|(hit, _)| *hit).count(), 1);
            prop_assert_eq!(expected.iter().find(|(hit, _)| *hit).unwrap().1, label);
        }

        #[test]
        fn ad_record_round_trips(
            id in "[a-z0-9-]{1,12}",
            text in "\\PC{0,40}",
            imps in 0u64..1_000_000,
            secs in 0i64..2_000_000_000,
            with_image in any::<bool>(),
        ) {
            let record = AdCreative {
                id,
                brand: "Brand".into(),
                objective: Objective::Sales,
                kind: AdKind::Organic,
                text,
                image_ref: with_image.then(|| "img".to_string()),
                impressions: imps,
                clicks: imps / 2,
                published_at: DateTime::from_timestamp(secs, 0).unwrap(),
            };
            let line = serde_json::to_string(&record).unwrap();
            let back: AdCreative = serde_json::from_str(&line).unwrap();
            prop_assert_eq!(&back, &record);
            prop_assert_eq!(serde_json::to_string(&back).unwrap(), line);
        }
    }
}
