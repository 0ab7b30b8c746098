//! Agents that pick the next (item, template) and the shared dialogue rollout.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::{advance_state, render_utterance, Action, DialogueState, Utterance};
use crate::error::{Error, Result};
use crate::policy::{self, encode_state, forward, PolicyParams};
use crate::registry::Registry;
use crate::rng::StreamRng;
use crate::signals::relevance_score;
use crate::user_sim::{alignment, FeedbackEvent, SimulatedUser};
use crate::world::World;

pub const DEFAULT_MAX_TURNS: u32 = 20;

/// What a recommender may look at when choosing its move.
pub struct TurnView<'a> {
    pub world: &'a World,
    pub state: &'a DialogueState,
    pub user: &'a SimulatedUser,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionSource {
    Greedy,
    Random,
    Policy,
    Oracle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recommendation {
    pub action: Action,
    /// Full catalog ordering, best first.
    pub ranking: Vec<usize>,
    pub source: ActionSource,
    /// Log-probability under the acting policy; 0 for scripted agents.
    pub log_prob: f64,
    pub value: f64,
    /// Policy input for the state, when a policy acted.
    pub encoded: Vec<f64>,
}

pub trait Recommender: Send + Sync {
    fn name(&self) -> &'static str;
    fn recommend(&self, view: &TurnView<'_>, rng: &mut StreamRng) -> Result<Recommendation>;
}

pub struct PolicyRecommender {
    pub params: PolicyParams,
    pub greedy: bool,
    pub max_turns: u32,
}

impl Recommender for PolicyRecommender {
    fn name(&self) -> &'static str {
        if self.greedy {
            "policy-greedy"
        } else {
            "policy-sample"
        }
    }

    fn recommend(&self, view: &TurnView<'_>, rng: &mut StreamRng) -> Result<Recommendation> {
        let encoded = encode_state(view.state, &view.world.table, self.max_turns)?;
        let (out, _) = forward(&self.params, &encoded)?;
        let (action, log_prob) = if self.greedy {
            let a = out.greedy_action();
            (a, policy::log_prob(&out, a))
        } else {
            policy::sample_action(&out, rng)
        };
        Ok(Recommendation {
            action,
            ranking: out.ranking(),
            source: ActionSource::Policy,
            log_prob,
            value: out.value,
            encoded,
        })
    }
}

/// Scripted behavior policy: with probability `greedy_prob` the item closest to
/// the latest user request with a reference template, otherwise uniform.
pub struct RelevanceGreedy {
    pub greedy_prob: f64,
}

impl Recommender for RelevanceGreedy {
    fn name(&self) -> &'static str {
        "relevance-greedy"
    }

    fn recommend(&self, view: &TurnView<'_>, rng: &mut StreamRng) -> Result<Recommendation> {
        let w = view.world;
        let mut scores = Vec::with_capacity(w.catalog.len());
        for id in 0..w.catalog.len() {
            scores.push(relevance_score(&view.state.active_query_tokens, id, &w.catalog, &w.table)?);
        }
        let ranking = policy::ranking(&scores);
        let u: f64 = rng.random();
        let (action, source) = if u < self.greedy_prob {
            let refs = w.templates.reference_ids();
            let t = *refs.choose(rng).unwrap_or(&0);
            (Action::new(ranking[0], t), ActionSource::Greedy)
        } else {
            let item = rng.random_range(0..w.catalog.len());
            let t = rng.random_range(0..w.templates.len());
            (Action::new(item, t), ActionSource::Random)
        };
        Ok(Recommendation {
            action,
            ranking,
            source,
            log_prob: 0.0,
            value: 0.0,
            encoded: Vec::new(),
        })
    }
}

/// Uniformly random item, template and ranking.
pub struct UniformRecommender;

impl Recommender for UniformRecommender {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn recommend(&self, view: &TurnView<'_>, rng: &mut StreamRng) -> Result<Recommendation> {
        use rand::seq::SliceRandom;
        let n = view.world.catalog.len();
        let mut ranking: Vec<usize> = (0..n).collect();
        ranking.shuffle(rng);
        let t = rng.random_range(0..view.world.templates.len());
        Ok(Recommendation {
            action: Action::new(ranking[0], t),
            ranking,
            source: ActionSource::Random,
            log_prob: -((n * view.world.templates.len()) as f64).ln(),
            value: 0.0,
            encoded: Vec::new(),
        })
    }
}

/// Reads the user's latent taste: an upper bound for every metric.
pub struct OracleRecommender;

impl Recommender for OracleRecommender {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn recommend(&self, view: &TurnView<'_>, _rng: &mut StreamRng) -> Result<Recommendation> {
        let w = view.world;
        let mut scores = Vec::with_capacity(w.catalog.len());
        for id in 0..w.catalog.len() {
            scores.push(alignment(&view.user.profile, id, w)?);
        }
        let ranking = policy::ranking(&scores);
        let t = w.templates.reference_ids().first().copied().unwrap_or(0);
        Ok(Recommendation {
            action: Action::new(ranking[0], t),
            ranking,
            source: ActionSource::Oracle,
            log_prob: 0.0,
            value: 0.0,
            encoded: Vec::new(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct RecommenderArgs {
    pub params: Option<PolicyParams>,
    pub greedy_prob: f64,
    pub max_turns: u32,
}

impl Default for RecommenderArgs {
    fn default() -> Self {
        Self {
            params: None,
            greedy_prob: 0.7,
            max_turns: DEFAULT_MAX_TURNS,
        }
    }
}

fn policy_from(args: &RecommenderArgs, greedy: bool) -> Result<Box<dyn Recommender>> {
    let params = args
        .params
        .clone()
        .ok_or_else(|| Error::invalid("policy recommender needs parameters"))?;
    Ok(Box::new(PolicyRecommender {
        params,
        greedy,
        max_turns: args.max_turns,
    }))
}

pub fn registry() -> Registry<RecommenderArgs, dyn Recommender> {
    let mut r: Registry<RecommenderArgs, dyn Recommender> = Registry::new("recommender");
    r.register("policy-greedy", |a| policy_from(a, true))
        .register("policy-sample", |a| policy_from(a, false))
        .register("relevance-greedy", |a| {
            if !(0.0..=1.0).contains(&a.greedy_prob) {
                return Err(Error::Config("corpus.greedy_prob must lie in [0, 1]".into()));
            }
            Ok(Box::new(RelevanceGreedy {
                greedy_prob: a.greedy_prob,
            }))
        })
        .register("uniform", |_| Ok(Box::new(UniformRecommender)))
        .register("oracle", |_| Ok(Box::new(OracleRecommender)));
    r
}

pub fn build(name: &str, args: &RecommenderArgs) -> Result<Box<dyn Recommender>> {
    registry().build(name, args)
}

/// One agent move and the user's response to it.
#[derive(Clone, Debug)]
pub struct Exchange {
    pub state: DialogueState,
    pub recommendation: Recommendation,
    pub agent: Utterance,
    pub reply: Utterance,
    pub feedback: FeedbackEvent,
}

#[derive(Clone, Debug)]
pub struct DialogueRun {
    pub user: SimulatedUser,
    pub opening: Utterance,
    pub exchanges: Vec<Exchange>,
}

/// Samples a user from `rng`, then alternates recommendations and reactions
/// until the user's patience or `max_turns` runs out.
pub fn simulate_dialogue(
    world: &World,
    agent: &dyn Recommender,
    user_id: u64,
    max_turns: u32,
    rng: &mut StreamRng,
) -> Result<DialogueRun> {
    let mut user = SimulatedUser::sample(rng, world, user_id);
    let opening = user.opening(rng)?;
    let mut state = DialogueState::opening(world.sim.k_window, opening.clone())?;
    let mut exchanges = Vec::new();
    while !user.exhausted() && state.turn_index + 2 <= max_turns {
        let rec = agent.recommend(
            &TurnView {
                world,
                state: &state,
                user: &user,
            },
            rng,
        )?;
        let agent_utt = render_utterance(rec.action, &world.catalog, &world.templates, state.turn_index + 1)?;
        let (reply, feedback) = user.react(rec.action, &state, world, rng)?;
        let next = advance_state(&state, &agent_utt, &reply)?;
        exchanges.push(Exchange {
            state,
            recommendation: rec,
            agent: agent_utt,
            reply,
            feedback,
        });
        state = next;
    }
    Ok(DialogueRun {
        user,
        opening,
        exchanges,
    })
}
