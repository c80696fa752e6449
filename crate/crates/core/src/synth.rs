//! Seeded synthetic corpora and the rule-based scripted backend that stands
//! in for an LLM during offline runs.
//!
//! Every generated ad combines one persona hook and one challenge hook, an
//! optional offer and a call to action. The scripted backend reads those
//! hooks back, so pillars, cluster names, rankings and stories are all
//! deterministic functions of the corpus.

use std::collections::BTreeMap;
use std::hash::Hasher;

use chrono::{DateTime, Duration, TimeZone, Utc};
use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, WeightedIndex};

use crate::domain::{AdCreative, AdKind, Objective};
use crate::gateway::offline::ScriptedBackend;
use crate::gateway::template::{CHALLENGE_V1, CHARACTER_V1, PERSONA_V1, PILLARS_V1, RANKING_V1, STORY_V1};
use crate::gateway::CompletionRequest;
use crate::rank::LexicalBaseline;

pub struct PersonaSpec {
    pub name: &'static str,
    pub description: &'static str,
    pub hooks: [&'static str; 3],
    pub keywords: &'static [&'static str],
    /// Core audience phrase; scripted pillar responses add per-ad qualifiers.
    pub audience: &'static str,
    pub archetype: &'static str,
    /// Character used for stories about this persona: name, role, background, traits.
    pub character: [&'static str; 4],
}

pub struct ChallengeSpec {
    pub name: &'static str,
    pub description: &'static str,
    pub hooks: [&'static str; 3],
    pub keywords: &'static [&'static str],
    pub need: &'static str,
    pub insight: &'static str,
    pub story_turn: &'static str,
    pub story_insight: &'static str,
}

pub const PERSONAS: [PersonaSpec; 4] = [
    PersonaSpec {
        name: "Efficiency Enthusiasts",
        description: "Busy working professionals who plan their days to the minute and reward services that save them time and hassle.",
        hooks: [
            "Busy professionals know every minute counts.",
            "For people who run on tight schedules and packed calendars.",
            "Skip the wait and keep your busy schedule on track.",
        ],
        keywords: &["busy", "minute", "schedule", "schedules", "calendars", "professionals", "wait"],
        audience: "busy working professionals on tight schedules",
        archetype: "The Ruler",
        character: [
            "Samuel Tan",
            "a business owner in Singapore",
            "Samuel runs a growing logistics company with forty employees. His days are split between client meetings across the city and making sure his team gets where it needs to be on time.",
            "pragmatic, organised, caring towards his staff",
        ],
    },
    PersonaSpec {
        name: "Budget Seekers",
        description: "Students and young families who compare prices carefully and respond to clear savings and value.",
        hooks: [
            "Students and families watching every dollar.",
            "Stretch your budget further with better value.",
            "Great value for careful spenders on a budget.",
        ],
        keywords: &["students", "families", "dollar", "budget", "value", "spenders", "careful"],
        audience: "students and young families on a tight budget",
        archetype: "The Everyman",
        character: [
            "Mei Lin Ong",
            "a university student in Kuala Lumpur",
            "Mei Lin balances lectures with a part-time job and shares a flat with two friends. She tracks every ringgit in a spreadsheet.",
            "resourceful, sociable, careful with money",
        ],
    },
    PersonaSpec {
        name: "Everyday Commuters",
        description: "Office and shift workers who make the same trips across town every day and value reliability.",
        hooks: [
            "Daily commuters heading to work across town.",
            "Your everyday ride to the office and back home.",
            "Made for commuters who travel the same route every day.",
        ],
        keywords: &["commuters", "daily", "everyday", "office", "route", "town"],
        audience: "daily commuters travelling to the office",
        archetype: "The Caregiver",
        character: [
            "Arif Rahman",
            "an office administrator in Jakarta",
            "Arif commutes ninety minutes each way and supports his parents on weekends. Reliability matters more to him than anything else.",
            "dependable, patient, family-oriented",
        ],
    },
    PersonaSpec {
        name: "Late-Night Foodies",
        description: "Young urban adults who order food and rides late in the evening and enjoy discovering new places.",
        hooks: [
            "Food lovers craving late-night bites.",
            "Hungry after midnight? Your favourite food is a tap away.",
            "For night owls who love discovering new food spots.",
        ],
        keywords: &["food", "craving", "bites", "hungry", "midnight", "owls", "spots", "favourite"],
        audience: "young urban food lovers ordering late at night",
        archetype: "The Explorer",
        character: [
            "Dana Cruz",
            "a graphic designer in Manila",
            "Dana works late on client projects and treats herself to a new restaurant every week. She shares her finds with a large online following.",
            "curious, spontaneous, social",
        ],
    },
];

pub const CHALLENGES: [ChallengeSpec; 3] = [
    ChallengeSpec {
        name: "Streamlining Work Transport Processes",
        description: "Businesses struggle to organise, track and pay for employee travel; one account for staff rides and invoices removes the overhead.",
        hooks: [
            "Manage staff rides and business travel in one corporate account.",
            "One business account for every employee trip, with monthly invoices.",
            "Stop chasing receipts: corporate rides with automatic invoices.",
        ],
        keywords: &["staff", "business", "corporate", "account", "invoices", "employee", "receipts"],
        need: "simpler business travel management",
        insight: "organising employee travel wastes management time",
        story_turn: "sets up a business account so every staff ride is booked, tracked and invoiced in one place",
        story_insight: "Streamlined work transport lets a business enhance their efficiency and improve overall job satisfaction for every employee.",
    },
    ChallengeSpec {
        name: "Affordable Daily Travel",
        description: "Rising fares make everyday trips expensive; riders look for predictable, lower prices on routine journeys.",
        hooks: [
            "Beat rising fares on your daily trips.",
            "Affordable fares for the trips you take most.",
            "Lower fares on every trip, no surprises at checkout.",
        ],
        keywords: &["fares", "affordable", "trips", "rising", "lower", "prices", "checkout"],
        need: "predictable low prices for routine trips",
        insight: "rising fares make routine trips feel expensive",
        story_turn: "switches to a fixed-price plan that keeps routine trips affordable",
        story_insight: "Predictable, affordable fares turn a daily worry into a routine that simply works.",
    },
    ChallengeSpec {
        name: "Getting Home Safely at Night",
        description: "Late journeys feel risky; verified drivers, live trip sharing and support give riders peace of mind.",
        hooks: [
            "Get home safely with verified drivers.",
            "Share your live trip so loved ones know you are safe.",
            "Round-the-clock support and verified drivers on every journey.",
        ],
        keywords: &["safely", "safe", "verified", "drivers", "share", "support"],
        need: "feeling safe on late journeys",
        insight: "late journeys home feel unsafe without verified drivers",
        story_turn: "shares a live trip from a verified driver so the family can follow along",
        story_insight: "Feeling safe on the way home is what makes late nights worth enjoying.",
    },
];

const OFFERS: [&str; 4] = [
    "Use code SAVE20 for 20% off today.",
    "Free delivery on your first order.",
    "Cashback on every trip this week, limited time only.",
    "New users get a free ride voucher now.",
];

/// Free-text modifiers a model might attach to any audience or insight.
const QUALIFIERS: [&str; 64] = [
    "downtown", "mobile-first", "weekday", "social", "younger", "suburban", "app-savvy", "loyal",
    "impatient", "review-driven", "planners", "impulsive", "returning", "new", "talkative", "notified",
    "crowded", "cautious", "brand-trusting", "curious", "regular", "occasional", "urban", "local",
    "northside", "riverside", "seasonal", "thrifty", "tech-curious", "outgoing", "quiet", "visual",
    "hurried", "relaxed", "coastal", "hillside", "bilingual", "pet-owning", "sporty", "musical",
    "frugal", "generous", "skeptical", "optimistic", "practical", "spontaneous", "punctual", "flexible",
    "early-rising", "nocturnal", "festival-going", "gym-going", "shopping-mad", "reading", "gaming", "cycling",
    "coffee-loving", "tea-drinking", "travelling", "homebound", "connected", "minimalist", "collecting", "hosting",
];

const CALLS_TO_ACTION: [&str; 4] =
    ["Download the app.", "Book in seconds.", "Learn more on our website.", "Tap to get started."];

/// Parameters of a generated corpus.
#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub seed: u64,
    pub id_prefix: String,
    /// Brand name, number of paid ads, number of organic posts.
    pub brands: Vec<(String, usize, usize)>,
    /// Persona mixing weights per brand, in `PERSONAS` order.
    pub persona_weights: BTreeMap<String, [f64; 4]>,
    /// Challenge mixing weights per brand, in `CHALLENGES` order.
    pub challenge_weights: BTreeMap<String, [f64; 3]>,
    pub start: DateTime<Utc>,
    pub days: i64,
}

pub const DEMO_SEED: u64 = 20231001;
pub const DEMO_OWN_BRAND: &str = "Lumo";
pub const DEMO_COMPETITOR: &str = "Trava";

impl CorpusSpec {
    fn uniform(seed: u64, id_prefix: &str, brands: Vec<(String, usize, usize)>) -> Self {
        Self {
            seed,
            id_prefix: id_prefix.to_string(),
            persona_weights: brands.iter().map(|(b, _, _)| (b.clone(), [1.0; 4])).collect(),
            challenge_weights: brands.iter().map(|(b, _, _)| (b.clone(), [1.0; 3])).collect(),
            brands,
            start: Utc.with_ymd_and_hms(2023, 7, 1, 0, 0, 0).unwrap(),
            days: 184,
        }
    }

    /// 200 paid ads for two brands over the second half of 2023. The
    /// competitor leans on time-saving professionals and work transport.
    pub fn demo() -> Self {
        let mut spec = Self::uniform(
            DEMO_SEED,
            "ad",
            vec![(DEMO_OWN_BRAND.to_string(), 110, 0), (DEMO_COMPETITOR.to_string(), 90, 0)],
        );
        spec.persona_weights.insert(DEMO_OWN_BRAND.into(), [0.12, 0.38, 0.35, 0.15]);
        spec.persona_weights.insert(DEMO_COMPETITOR.into(), [0.45, 0.15, 0.2, 0.2]);
        spec.challenge_weights.insert(DEMO_OWN_BRAND.into(), [0.12, 0.5, 0.38]);
        spec.challenge_weights.insert(DEMO_COMPETITOR.into(), [0.55, 0.25, 0.2]);
        spec
    }

    /// 1120 business ads, 849 from "Brand A" and 271 from "Brand B".
    pub fn business_ads() -> Self {
        Self::uniform(1120, "biz", vec![("Brand A".into(), 849, 0), ("Brand B".into(), 271, 0)])
    }

    /// 5967 content pieces: 3703 paid ads and 2264 organic posts.
    pub fn content_corpus() -> Self {
        Self::uniform(5967, "post", vec![("Brand A".into(), 2510, 1230), ("Brand B".into(), 1193, 1034)])
    }
}

fn objective_base_ctr(objective: Objective) -> f64 {
    match objective {
        Objective::Traffic => 0.018,
        Objective::Conversion => 0.011,
        Objective::Sales => 0.009,
        Objective::Other => 0.006,
    }
}

/// Generates the corpus. Ads are numbered in generation order, brand by brand.
pub fn generate(spec: &CorpusSpec) -> Vec<AdCreative> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, 0.35).expect("valid sigma");
    let objectives = [Objective::Sales, Objective::Conversion, Objective::Traffic];
    let mut out = Vec::new();
    let mut n = 0usize;
    for (brand, paid, organic) in &spec.brands {
        let personas = WeightedIndex::new(spec.persona_weights[brand]).expect("persona weights");
        let challenges = WeightedIndex::new(spec.challenge_weights[brand]).expect("challenge weights");
        let kinds = std::iter::repeat_n(AdKind::Ad, *paid).chain(std::iter::repeat_n(AdKind::Organic, *organic));
        for kind in kinds {
            n += 1;
            let p = personas.sample(&mut rng);
            let c = challenges.sample(&mut rng);
            let persona_hook = PERSONAS[p].hooks.choose(&mut rng).expect("hooks");
            let challenge_hook = CHALLENGES[c].hooks.choose(&mut rng).expect("hooks");
            let offer = (rng.gen_bool(0.4)).then(|| *OFFERS.choose(&mut rng).expect("offers"));
            let cta = CALLS_TO_ACTION.choose(&mut rng).expect("ctas");
            let text = match offer {
                Some(o) => format!("{persona_hook} {challenge_hook} {o} {cta}"),
                None => format!("{persona_hook} {challenge_hook} {cta}"),
            };
            let objective = *objectives.choose(&mut rng).expect("objectives");
            let lift = if offer.is_some() { 0.45 } else { 0.0 } + 0.1 * p as f64 - 0.05 * c as f64;
            let ctr = (objective_base_ctr(objective) * (lift + noise.sample(&mut rng)).exp()).min(0.5);
            let impressions: u64 = rng.gen_range(1_500..40_000);
            let clicks = ((impressions as f64) * ctr).round() as u64;
            let published_at = spec.start + Duration::minutes(rng.gen_range(0..spec.days * 24 * 60));
            out.push(AdCreative {
                id: format!("{}-{n:04}", spec.id_prefix),
                brand: brand.clone(),
                objective,
                kind,
                text,
                image_ref: rng.gen_bool(0.5).then(|| format!("img-{n:04}.jpg")),
                impressions,
                clicks: clicks.min(impressions),
                published_at,
            });
        }
    }
    out
}

/// One JSON object per line, the store's canonical form.
pub fn to_jsonl(records: &[AdCreative]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
}

/// The bundled demo corpus, identical to `generate(&CorpusSpec::demo())`.
pub const DEMO_CORPUS_JSONL: &str = include_str!("../data/demo_corpus.jsonl");

fn stable_hash(parts: &[&str]) -> u64 {
    let mut h = FnvHasher::default();
    for p in parts {
        h.write(p.as_bytes());
        h.write_u8(0);
    }
    h.finish()
}

fn best_match(text: &str, keyword_sets: &[&[&str]]) -> usize {
    let words: Vec<String> = crate::gateway::offline::tokenize(text);
    let mut best = (0usize, 0usize);
    for (i, keywords) in keyword_sets.iter().enumerate() {
        let hits = words.iter().filter(|w| keywords.contains(&w.as_str())).count();
        if hits > best.1 {
            best = (i, hits);
        }
    }
    best.0
}

pub fn persona_of(text: &str) -> usize {
    best_match(text, &PERSONAS.map(|p| p.keywords))
}

pub fn challenge_of(text: &str) -> usize {
    best_match(text, &CHALLENGES.map(|c| c.keywords))
}

fn pillars_response(request: &CompletionRequest) -> Option<String> {
    let text = request.bindings.get("ad_text")?;
    let p = &PERSONAS[persona_of(text)];
    let c = &CHALLENGES[challenge_of(text)];
    let h = stable_hash(&[text]);
    let q = |i: u64| QUALIFIERS[((h >> (16 * i)) % QUALIFIERS.len() as u64) as usize];
    let promo = OFFERS.iter().any(|o| text.contains(o));
    Some(format!(
        "Audience: {}, {} and {}\nNeed: {}\nInsight: {}, {} and {}\nProduct: {}\nArchetype: {}\nTone: {}",
        p.audience,
        q(0),
        q(1),
        c.need,
        c.insight,
        q(2),
        q(3),
        if promo { "ride and delivery app with a promotion" } else { "ride and delivery app" },
        p.archetype,
        if promo { "urgent and upbeat" } else { "warm and practical" },
    ))
}

fn majority<const N: usize>(exemplars: &str, phrase: impl Fn(usize) -> &'static str) -> usize {
    let mut counts = [0usize; N];
    for (i, count) in counts.iter_mut().enumerate() {
        *count = exemplars.matches(phrase(i)).count();
    }
    (0..N).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap_or(0)
}

fn persona_response(request: &CompletionRequest) -> Option<String> {
    let exemplars = request.bindings.get("exemplars")?;
    let p = &PERSONAS[majority::<4>(exemplars, |i| PERSONAS[i].audience)];
    Some(format!("Name: {}\nDescription: {}", p.name, p.description))
}

fn challenge_response(request: &CompletionRequest) -> Option<String> {
    let exemplars = request.bindings.get("exemplars")?;
    let c = &CHALLENGES[majority::<3>(exemplars, |i| CHALLENGES[i].insight)];
    Some(format!("Name: {}\nDescription: {}", c.name, c.description))
}

/// Orders candidates by the lexical baseline plus seeded noise; a grounding
/// block narrows the noise.
fn ranking_response(model: &LexicalBaseline, request: &CompletionRequest) -> Option<String> {
    let candidates = request.bindings.get("candidates")?;
    let grounded = request.bindings.get("grounding").is_some_and(|g| !g.trim().is_empty());
    let amplitude = if grounded { 0.6 } else { 1.8 };
    let seed = request.seed.unwrap_or(0).to_string();
    let mut scored: Vec<(f64, &str)> = candidates
        .lines()
        .filter_map(|line| line.split_once(" | "))
        .map(|(id, text)| {
            let u = (stable_hash(&[&seed, id]) % 10_000) as f64 / 10_000.0 * 2.0 - 1.0;
            (model.logit(text) + amplitude * u, id.trim())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Some(scored.iter().map(|(_, id)| *id).collect::<Vec<_>>().join(", "))
}

fn character_response(request: &CompletionRequest) -> Option<String> {
    let persona = request.bindings.get("persona_name")?;
    let [name, role, background, traits] = PERSONAS
        .iter()
        .find(|p| p.name == persona)
        .map(|p| p.character)
        .unwrap_or(["Alex Morgan", "a customer", "Alex is a typical member of this audience.", "practical"]);
    Some(format!("Name: {name}\nRole: {role}\nBackground: {background}\nTraits: {traits}"))
}

fn story_response(request: &CompletionRequest) -> Option<String> {
    let b = &request.bindings;
    let (brand, name, role) = (b.get("brand")?, b.get("character_name")?, b.get("character_role")?);
    let challenge = b.get("challenge_name")?;
    let first = name.split_whitespace().next().unwrap_or(name);
    let (turn, insight) = CHALLENGES
        .iter()
        .find(|c| &c.name == challenge)
        .map(|c| (c.story_turn, c.story_insight))
        .unwrap_or(("finds a better way to handle it", "The right service removes friction people had accepted as normal."));
    Some(format!(
        "Story: {name}, {role}, has been wrestling with one problem for months: {}.\n\n\
         One evening {first} tries {brand} and {turn}. Within a week the problem that used to take up hours has almost disappeared, and the people around {first} notice the difference.\n\
         Insight: {insight}",
        challenge.to_lowercase()
    ))
}

/// Scripted backend answering every built-in template with the rules above.
pub fn demo_backend() -> ScriptedBackend {
    let model = LexicalBaseline::shipped();
    ScriptedBackend::new()
        .with_responder(PILLARS_V1, pillars_response)
        .with_responder(PERSONA_V1, persona_response)
        .with_responder(CHALLENGE_V1, challenge_response)
        .with_responder(RANKING_V1, move |r| ranking_response(&model, r))
        .with_responder(CHARACTER_V1, character_response)
        .with_responder(STORY_V1, story_response)
}
