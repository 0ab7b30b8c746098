//! Logged dialogues: generation with a behavior policy, the JSONL format, and
//! replay into supervised examples and weak reward labels.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dialogue::{advance_state, Action, Catalog, DialogueState, Item, Speaker, Utterance};
use crate::error::{Error, Result};
use crate::parallel;
use crate::policy::{encode_state, PretrainExample};
use crate::recommender::{simulate_dialogue, ActionSource, Recommender};
use crate::rng;
use crate::signals::{extract_features, weak_label, FeatureVector, WeakLabel};
use crate::user_sim::FeedbackEvent;
use crate::world::World;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoggedAction {
    pub turn_index: u32,
    pub item_id: usize,
    pub template_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<ActionSource>,
}

impl LoggedAction {
    pub fn action(&self) -> Action {
        Action::new(self.item_id, self.template_id)
    }
}

/// One dialogue per JSONL line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueLog {
    pub schema_version: u32,
    pub dialogue_id: u64,
    pub user_profile_id: u64,
    pub turns: Vec<Utterance>,
    pub actions: Vec<LoggedAction>,
    pub feedback: Vec<FeedbackEvent>,
}

impl DialogueLog {
    /// Structural checks: version, turn layout, one action and one event per agent turn.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.turns.is_empty() {
            return Err(Error::invalid("turns is empty"));
        }
        for (i, t) in self.turns.iter().enumerate() {
            if t.tokens.is_empty() {
                return Err(Error::invalid(format!("turn {i} has no tokens")));
            }
            if t.turn_index as usize != i {
                return Err(Error::invalid(format!("turn {i} has turn_index {}", t.turn_index)));
            }
            let want = if i % 2 == 0 { Speaker::User } else { Speaker::Agent };
            if t.speaker != want {
                return Err(Error::invalid(format!("turn {i} should be spoken by the {want:?}").to_lowercase()));
            }
        }
        if self.turns.len() % 2 == 0 {
            return Err(Error::invalid("the last agent turn has no user reply"));
        }
        let agent_turns = self.turns.len() / 2;
        if self.actions.len() != agent_turns {
            return Err(Error::invalid(format!(
                "{} actions for {agent_turns} agent turns",
                self.actions.len()
            )));
        }
        if self.feedback.len() != agent_turns {
            return Err(Error::invalid(format!(
                "{} feedback events for {agent_turns} agent turns",
                self.feedback.len()
            )));
        }
        for (j, a) in self.actions.iter().enumerate() {
            if a.turn_index as usize != 2 * j + 1 {
                return Err(Error::invalid(format!(
                    "action {j} refers to turn {} rather than agent turn {}",
                    a.turn_index,
                    2 * j + 1
                )));
            }
        }
        Ok(())
    }

    /// `(state before the agent turn, action, feedback)` for every exchange.
    pub fn replay(&self, k_window: usize) -> Result<Vec<(DialogueState, Action, FeedbackEvent)>> {
        let mut state = DialogueState::opening(k_window, self.turns[0].clone())?;
        let mut out = Vec::with_capacity(self.actions.len());
        for (j, (a, fb)) in self.actions.iter().zip(&self.feedback).enumerate() {
            let next = advance_state(&state, &self.turns[2 * j + 1], &self.turns[2 * j + 2])?;
            out.push((state, a.action(), *fb));
            state = next;
        }
        Ok(out)
    }
}

/// Rolls `n_dialogues` with `behavior`; dialogue `i` uses its own RNG stream.
pub fn generate_corpus(
    world: &World,
    n_dialogues: usize,
    seed: u64,
    behavior: &dyn Recommender,
    max_turns: u32,
) -> Result<Vec<DialogueLog>> {
    if n_dialogues == 0 {
        return Err(Error::EmptyInput("corpus needs at least one dialogue"));
    }
    parallel::map_indexed(n_dialogues, |i| {
        let mut r = rng::stream(seed, rng::purpose::CORPUS, i as u64);
        let run = simulate_dialogue(world, behavior, i as u64, max_turns, &mut r)?;
        let mut turns = vec![run.opening];
        let mut actions = Vec::new();
        let mut feedback = Vec::new();
        for ex in run.exchanges {
            let a = ex.recommendation.action;
            actions.push(LoggedAction {
                turn_index: ex.agent.turn_index,
                item_id: a.item_id,
                template_id: a.template_id,
                item_title: Some(world.catalog.get(a.item_id)?.title_tokens.join(" ")),
                source: Some(ex.recommendation.source),
            });
            turns.push(ex.agent);
            turns.push(ex.reply);
            feedback.push(ex.feedback);
        }
        Ok(DialogueLog {
            schema_version: SCHEMA_VERSION,
            dialogue_id: i as u64,
            user_profile_id: run.user.profile.id,
            turns,
            actions,
            feedback,
        })
    })
}

pub fn write_corpus(path: &Path, logs: &[DialogueLog]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for log in logs {
        serde_json::to_writer(&mut w, log)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestedCorpus {
    pub dialogues: Vec<DialogueLog>,
    /// The given catalog extended by any titles it did not contain.
    pub catalog: Catalog,
    pub added_items: usize,
}

/// Reads and validates a JSONL dialogue log. Actions carrying `item_title` are
/// mapped by title: titles found in `catalog` keep their id, others get new
/// ids after the catalog in order of first appearance. Without a catalog every
/// action must carry a title.
pub fn ingest_external_corpus(path: &Path, catalog: Option<&Catalog>) -> Result<IngestedCorpus> {
    let reader = BufReader::new(File::open(path)?);
    let mut items: Vec<Item> = catalog.map(|c| c.items().to_vec()).unwrap_or_default();
    let base = items.len();
    let mut by_title: HashMap<String, usize> = items
        .iter()
        .map(|it| (it.title_tokens.join(" "), it.id))
        .collect();
    let mut dialogues = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| Error::Schema { line: line_no, message };
        let mut log: DialogueLog = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        log.validate().map_err(|e| schema(e.to_string()))?;
        for a in &mut log.actions {
            match &a.item_title {
                Some(title) => {
                    let tokens = crate::dialogue::tokenize(title);
                    if tokens.is_empty() {
                        return Err(schema("empty item_title".into()));
                    }
                    let key = tokens.join(" ");
                    let id = match by_title.get(&key) {
                        Some(id) => *id,
                        None => {
                            let id = items.len();
                            items.push(Item {
                                id,
                                title_tokens: tokens,
                                tags: Vec::new(),
                                embedding_id: id,
                            });
                            by_title.insert(key, id);
                            id
                        }
                    };
                    a.item_id = id;
                }
                None if catalog.is_some() && a.item_id < base => {}
                None => {
                    return Err(schema(format!(
                        "action at turn {} has no item_title and item_id {} is not in the catalog",
                        a.turn_index, a.item_id
                    )))
                }
            }
        }
        dialogues.push(log);
    }
    if dialogues.is_empty() {
        return Err(Error::EmptyInput("corpus file holds no dialogues"));
    }
    let added_items = items.len() - base;
    Ok(IngestedCorpus {
        dialogues,
        catalog: Catalog::new(items)?,
        added_items,
    })
}

/// Supervised next-action examples for every agent turn.
pub fn pretrain_examples(logs: &[DialogueLog], world: &World, max_turns: u32) -> Result<Vec<PretrainExample>> {
    let mut out = Vec::new();
    for log in logs {
        for (state, action, _) in log.replay(world.sim.k_window)? {
            action.validate(world.catalog.len(), world.templates.len())?;
            out.push(PretrainExample {
                encoded: encode_state(&state, &world.table, max_turns)?,
                action,
            });
        }
    }
    Ok(out)
}

/// Features and weak satisfaction labels for every logged exchange.
pub fn reward_dataset(logs: &[DialogueLog], world: &World) -> Result<Vec<(FeatureVector, WeakLabel)>> {
    let mut out = Vec::new();
    for log in logs {
        for (state, action, fb) in log.replay(world.sim.k_window)? {
            let f = extract_features(
                &state.active_query_tokens,
                action.item_id,
                &fb,
                &world.catalog,
                &world.table,
                world.sim.dwell_max,
            )?;
            out.push((f, weak_label(&f, fb.accepted)));
        }
    }
    Ok(out)
}

/// Acceptance counts `(accepted, total)` per action source.
pub fn acceptance_by_source(logs: &[DialogueLog]) -> HashMap<ActionSource, (usize, usize)> {
    let mut out: HashMap<ActionSource, (usize, usize)> = HashMap::new();
    for log in logs {
        for (a, fb) in log.actions.iter().zip(&log.feedback) {
            if let Some(src) = a.source {
                let e = out.entry(src).or_default();
                e.0 += fb.accepted as usize;
                e.1 += 1;
            }
        }
    }
    out
}
