//! Implicit-feedback features and weak satisfaction labels.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dialogue::{Catalog, Utterance};
use crate::embedding::{cosine, embed_tokens, EmbeddingTable};
use crate::error::{Error, Result};
use crate::user_sim::FeedbackEvent;

pub const LEXICON_V1: &str = include_str!("../data/lexicon.v1.txt");

/// Engagement, relevance and sentiment shift for one agent turn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub engagement: f64,
    pub relevance: f64,
    pub sentiment_shift: f64,
}

impl FeatureVector {
    pub fn new(engagement: f64, relevance: f64, sentiment_shift: f64) -> Self {
        Self {
            engagement,
            relevance,
            sentiment_shift,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.engagement, self.relevance, self.sentiment_shift]
    }

    pub fn is_bounded(&self) -> bool {
        (0.0..=1.0).contains(&self.engagement)
            && (-1.0..=1.0).contains(&self.relevance)
            && (-1.0..=1.0).contains(&self.sentiment_shift)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakLabel {
    pub satisfaction: f64,
}

pub fn engagement_score(event: &FeedbackEvent, dwell_max: f64) -> f64 {
    (event.dwell_time / dwell_max).clamp(0.0, 1.0)
}

pub fn sentiment_shift(event: &FeedbackEvent) -> f64 {
    ((event.sentiment_post - event.sentiment_pre) / 2.0).clamp(-1.0, 1.0)
}

/// Cosine between the query embedding and the item embedding. Degenerate
/// queries (empty, zero-norm) score 0.
pub fn relevance_score<S: AsRef<str>>(
    query_tokens: &[S],
    item_id: usize,
    catalog: &Catalog,
    table: &EmbeddingTable,
) -> Result<f64> {
    let item = catalog.get(item_id)?;
    if query_tokens.is_empty() {
        return Ok(0.0);
    }
    let query = embed_tokens(query_tokens, table)?;
    match cosine(&query, table.item_vector(item.embedding_id)?) {
        Ok(c) => Ok(c),
        Err(Error::UndefinedSimilarity) => Ok(0.0),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    positive: HashSet<String>,
    negative: HashSet<String>,
}

impl Lexicon {
    /// Parses the sectioned text format (`[positive]` / `[negative]`, one token per line).
    pub fn parse(text: &str) -> Result<Self> {
        let mut positive = HashSet::new();
        let mut negative = HashSet::new();
        let mut section: Option<bool> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[positive]" => section = Some(true),
                "[negative]" => section = Some(false),
                tok if tok.contains(char::is_whitespace) => {
                    return Err(Error::Schema {
                        line: n + 1,
                        message: format!("expected one token per line, got `{tok}`"),
                    })
                }
                tok => match section {
                    Some(true) => {
                        positive.insert(tok.to_string());
                    }
                    Some(false) => {
                        negative.insert(tok.to_string());
                    }
                    None => {
                        return Err(Error::Schema {
                            line: n + 1,
                            message: "token before any section header".into(),
                        })
                    }
                },
            }
        }
        Ok(Self { positive, negative })
    }

    pub fn standard() -> Self {
        Self::parse(LEXICON_V1).expect("bundled lexicon parses")
    }

    pub fn is_positive(&self, tok: &str) -> bool {
        self.positive.contains(tok)
    }

    pub fn is_negative(&self, tok: &str) -> bool {
        self.negative.contains(tok)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.positive.iter().chain(self.negative.iter()).map(String::as_str)
    }
}

/// (positive count − negative count) / token count.
pub fn lexicon_sentiment(utterance: &Utterance, lexicon: &Lexicon) -> f64 {
    let total = utterance.tokens.len();
    if total == 0 {
        return 0.0;
    }
    let mut score = 0i64;
    for tok in &utterance.tokens {
        if lexicon.is_positive(tok) {
            score += 1;
        } else if lexicon.is_negative(tok) {
            score -= 1;
        }
    }
    (score as f64 / total as f64).clamp(-1.0, 1.0)
}

pub const WEAK_LABEL_WEIGHTS: [f64; 4] = [0.4, 0.3, 0.2, 0.1];

pub fn weak_label(feature: &FeatureVector, accepted: bool) -> WeakLabel {
    let [we, ws, wr, wa] = WEAK_LABEL_WEIGHTS;
    let s = we * feature.engagement
        + ws * (feature.sentiment_shift + 1.0) / 2.0
        + wr * (feature.relevance + 1.0) / 2.0
        + wa * if accepted { 1.0 } else { 0.0 };
    WeakLabel {
        satisfaction: s.clamp(0.0, 1.0),
    }
}

/// All three features for the turn that recommended `item_id` from `query_tokens`.
pub fn extract_features<S: AsRef<str>>(
    query_tokens: &[S],
    item_id: usize,
    event: &FeedbackEvent,
    catalog: &Catalog,
    table: &EmbeddingTable,
    dwell_max: f64,
) -> Result<FeatureVector> {
    Ok(FeatureVector {
        engagement: engagement_score(event, dwell_max),
        relevance: relevance_score(query_tokens, item_id, catalog, table)?,
        sentiment_shift: sentiment_shift(event),
    })
}
