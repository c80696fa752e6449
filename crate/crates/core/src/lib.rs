//! Explainable analytics over ad creatives: content pillars, persona and
//! challenge clustering, CTR-based ranking, ranking evaluation and
//! generated story briefs.

pub mod digest;
pub mod domain;
pub mod eval;
pub mod gateway;
pub mod cluster;
pub mod config;
pub mod pillars;
pub mod pipeline;
pub mod rank;
pub mod store;
pub mod story;
pub mod synth;
