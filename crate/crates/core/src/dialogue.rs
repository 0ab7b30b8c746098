//! Dialogue domain types and the state-transition rule.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::signals::FeatureVector;
use crate::user_sim::FeedbackEvent;

pub const ITEM_PLACEHOLDER: &str = "<ITEM>";
pub const DEFAULT_K_WINDOW: usize = 4;

/// Fixed genre vocabulary. Each genre owns a pool of title words.
pub const TAG_VOCAB: [(&str, [&str; 6]); 8] = [
    ("scifi", ["solar", "orbit", "nebula", "quantum", "android", "comet"]),
    ("drama", ["silent", "harbor", "letters", "winter", "widow", "orchard"]),
    ("comedy", ["crazy", "wedding", "goofy", "pickle", "roomies", "prank"]),
    ("horror", ["haunted", "cellar", "crimson", "ghoul", "hollow", "shriek"]),
    ("romance", ["paris", "sunset", "kisses", "promise", "velvet", "rose"]),
    ("thriller", ["cipher", "vault", "alibi", "hunted", "proxy", "verdict"]),
    ("western", ["canyon", "outlaw", "dusty", "saddle", "frontier", "sheriff"]),
    ("animation", ["pixel", "bunny", "dragon", "toybox", "meadow", "bubble"]),
];

const TITLE_SUFFIXES: [&str; 16] = [
    "drift", "rising", "protocol", "nights", "code", "legacy", "road", "story",
    "fever", "echo", "run", "house", "garden", "signal", "tide", "games",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Agent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub speaker: Speaker,
    pub tokens: Vec<String>,
    pub turn_index: u32,
}

impl Utterance {
    pub fn new(speaker: Speaker, tokens: Vec<String>, turn_index: u32) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("utterance tokens"));
        }
        Ok(Self {
            speaker,
            tokens,
            turn_index,
        })
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: usize,
    pub title_tokens: Vec<String>,
    pub tags: Vec<String>,
    pub embedding_id: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    items: Vec<Item>,
}

impl Catalog {
    /// Validates dense ids, non-empty titles and known tags.
    pub fn new(items: Vec<Item>) -> Result<Self> {
        let known: HashSet<&str> = TAG_VOCAB.iter().map(|(t, _)| *t).collect();
        for (i, item) in items.iter().enumerate() {
            if item.id != i {
                return Err(Error::invalid(format!("item ids must be dense: slot {i} holds id {}", item.id)));
            }
            if item.title_tokens.is_empty() {
                return Err(Error::invalid(format!("item {i} has an empty title")));
            }
            if let Some(bad) = item.tags.iter().find(|t| !known.contains(t.as_str())) {
                return Err(Error::invalid(format!("item {i} has unknown tag `{bad}`")));
            }
        }
        Ok(Self { items })
    }

    /// Catalog of `size` distinct two-word titles: a genre word plus a shared suffix.
    pub fn synthetic(size: usize, seed: u64) -> Result<Self> {
        let mut combos: Vec<(usize, usize, usize)> = Vec::new();
        for (g, (_, words)) in TAG_VOCAB.iter().enumerate() {
            for w in 0..words.len() {
                for s in 0..TITLE_SUFFIXES.len() {
                    combos.push((g, w, s));
                }
            }
        }
        if size == 0 || size > combos.len() {
            return Err(Error::invalid(format!(
                "catalog size must be in 1..={}",
                combos.len()
            )));
        }
        let mut rng = rng::stream(seed, rng::purpose::WORLD, 0);
        combos.shuffle(&mut rng);
        let items = combos
            .into_iter()
            .take(size)
            .enumerate()
            .map(|(id, (g, w, s))| Item {
                id,
                title_tokens: vec![TAG_VOCAB[g].1[w].to_string(), TITLE_SUFFIXES[s].to_string()],
                tags: vec![TAG_VOCAB[g].0.to_string()],
                embedding_id: id,
            })
            .collect();
        Self::new(items)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn get(&self, id: usize) -> Result<&Item> {
        self.items.get(id).ok_or(Error::OutOfRange {
            what: "item id",
            index: id,
            limit: self.items.len(),
        })
    }

    /// Every distinct word used in item titles, in catalog order.
    pub fn title_vocabulary(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for item in &self.items {
            for tok in &item.title_tokens {
                if seen.insert(tok.clone()) {
                    out.push(tok.clone());
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseTemplate {
    pub tokens: Vec<String>,
    /// Reference phrasings define the BLEU-4 target set.
    pub reference: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    templates: Vec<ResponseTemplate>,
}

impl TemplateSet {
    pub fn new(templates: Vec<ResponseTemplate>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::EmptyInput("template set"));
        }
        Ok(Self { templates })
    }

    pub fn standard() -> Self {
        let t = |s: &str, reference| ResponseTemplate {
            tokens: tokenize(s),
            reference,
        };
        Self {
            templates: vec![
                t("have you seen <ITEM>", true),
                t("you might enjoy <ITEM>", true),
                t("i think you would love <ITEM>", true),
                t("try <ITEM>", false),
                t("<ITEM> maybe", false),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&ResponseTemplate> {
        self.templates.get(id).ok_or(Error::OutOfRange {
            what: "template id",
            index: id,
            limit: self.templates.len(),
        })
    }

    pub fn templates(&self) -> &[ResponseTemplate] {
        &self.templates
    }

    pub fn reference_ids(&self) -> Vec<usize> {
        (0..self.templates.len())
            .filter(|&i| self.templates[i].reference)
            .collect()
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.templates
            .iter()
            .flat_map(|t| t.tokens.iter())
            .map(String::as_str)
            .filter(|t| *t != ITEM_PLACEHOLDER)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub item_id: usize,
    pub template_id: usize,
}

impl Action {
    pub fn new(item_id: usize, template_id: usize) -> Self {
        Self {
            item_id,
            template_id,
        }
    }

    pub fn validate(&self, catalog_size: usize, template_count: usize) -> Result<()> {
        if self.item_id >= catalog_size {
            return Err(Error::OutOfRange {
                what: "item id",
                index: self.item_id,
                limit: catalog_size,
            });
        }
        if self.template_id >= template_count {
            return Err(Error::OutOfRange {
                what: "template id",
                index: self.template_id,
                limit: template_count,
            });
        }
        Ok(())
    }
}

/// Surface realization of an action: the template with the item title spliced in.
pub fn render_utterance(
    action: Action,
    catalog: &Catalog,
    templates: &TemplateSet,
    turn_index: u32,
) -> Result<Utterance> {
    let item = catalog.get(action.item_id)?;
    let template = templates.get(action.template_id)?;
    if !template.tokens.iter().any(|t| t == ITEM_PLACEHOLDER) {
        return Err(Error::MalformedTemplate(action.template_id));
    }
    let mut tokens = Vec::with_capacity(template.tokens.len() + item.title_tokens.len());
    for tok in &template.tokens {
        if tok == ITEM_PLACEHOLDER {
            tokens.extend(item.title_tokens.iter().cloned());
        } else {
            tokens.push(tok.clone());
        }
    }
    Utterance::new(Speaker::Agent, tokens, turn_index)
}

/// Dialogue context: the most recent `k_window` utterances.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    pub window: Vec<Utterance>,
    pub turn_index: u32,
    pub active_query_tokens: Vec<String>,
    pub k_window: usize,
}

impl DialogueState {
    pub fn empty(k_window: usize) -> Self {
        Self {
            window: Vec::new(),
            turn_index: 0,
            active_query_tokens: Vec::new(),
            k_window: k_window.max(1),
        }
    }

    /// State after the user's opening request at turn 0.
    pub fn opening(k_window: usize, request: Utterance) -> Result<Self> {
        if request.speaker != Speaker::User || request.turn_index != 0 {
            return Err(Error::InvalidTransition(
                "opening utterance must be the user's, at turn 0".into(),
            ));
        }
        Ok(Self {
            active_query_tokens: request.tokens.clone(),
            window: vec![request],
            turn_index: 0,
            k_window: k_window.max(1),
        })
    }

    /// Number of window slots in use, as a fraction of capacity.
    pub fn fill_fraction(&self) -> f64 {
        self.window.len() as f64 / self.k_window as f64
    }
}

/// `s_t -> a_t -> s_{t+1}`: appends the agent turn and the user's reply, then trims.
pub fn advance_state(
    state: &DialogueState,
    agent_utterance: &Utterance,
    user_reply: &Utterance,
) -> Result<DialogueState> {
    if agent_utterance.speaker != Speaker::Agent || user_reply.speaker != Speaker::User {
        return Err(Error::InvalidTransition(
            "expected an agent utterance followed by a user reply".into(),
        ));
    }
    let expect_agent = state.turn_index + 1;
    let expect_user = state.turn_index + 2;
    if agent_utterance.turn_index != expect_agent || user_reply.turn_index != expect_user {
        return Err(Error::InvalidTransition(format!(
            "turn indices ({}, {}) do not follow state turn {}",
            agent_utterance.turn_index, user_reply.turn_index, state.turn_index
        )));
    }
    let mut window = state.window.clone();
    window.push(agent_utterance.clone());
    window.push(user_reply.clone());
    if window.len() > state.k_window {
        window.drain(..window.len() - state.k_window);
    }
    Ok(DialogueState {
        window,
        turn_index: expect_user,
        active_query_tokens: user_reply.tokens.clone(),
        k_window: state.k_window,
    })
}

/// One transition with everything the trainer needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: DialogueState,
    pub action: Action,
    pub feedback: FeedbackEvent,
    pub features: FeatureVector,
    pub raw_reward: f64,
    pub normalized_reward: f64,
    pub log_prob: f64,
    pub value: f64,
    pub advantage: f64,
    #[serde(rename = "return")]
    pub ret: f64,
    /// Encoded policy input for `state`, cached at collection time.
    #[serde(skip)]
    pub encoded: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub user_profile_id: u64,
    pub done: bool,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::EmptyInput("trajectory"));
        }
        for pair in self.steps.windows(2) {
            if pair[0].state.turn_index >= pair[1].state.turn_index {
                return Err(Error::InvalidTransition(format!(
                    "trajectory turn {} not before {}",
                    pair[0].state.turn_index, pair[1].state.turn_index
                )));
            }
        }
        for s in &self.steps {
            if s.log_prob > 0.0 || !s.value.is_finite() || !s.advantage.is_finite() {
                return Err(Error::invalid("step record out of bounds"));
            }
        }
        Ok(())
    }
}
