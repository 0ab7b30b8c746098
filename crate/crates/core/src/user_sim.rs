//! Simulated users and their implicit feedback.
//!
//! A user holds a latent unit preference vector. Their reaction to a
//! recommended item is driven by `align = cos(preference, item)`: dwell time
//! follows a logistic curve in `align`, affect drifts by `drift * align`, and
//! the item is accepted when `align` clears the user's threshold.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dialogue::{Action, DialogueState, Speaker, Utterance};
use crate::embedding::{cosine, dot};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::world::World;

pub const OPENERS: &[&str] = &[
    "can you recommend something",
    "i want to watch something",
    "looking for a movie with",
    "any suggestions for tonight",
];

pub const POSITIVE_REPLIES: &[&str] = &[
    "yes i love it",
    "great pick thanks",
    "perfect that sounds wonderful",
    "awesome i enjoyed that one",
];

pub const NEGATIVE_REPLIES: &[&str] = &[
    "no i hated that",
    "boring not for me",
    "nope sounds awful",
    "meh that is dull",
];

/// Every behavioral constant of the simulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dwell_max: f64,
    pub dwell_slope: f64,
    pub sentiment_drift: f64,
    pub affect_baseline_max: f64,
    pub accept_threshold_min: f64,
    pub accept_threshold_max: f64,
    pub noise_scale: f64,
    pub patience_min: u32,
    pub patience_max: u32,
    /// Preference words in the opening request.
    pub hint_tokens: usize,
    /// Whether replies repeat one preference word after the polarity phrase.
    pub reply_hint: bool,
    pub k_window: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dwell_max: 30.0,
            dwell_slope: 3.0,
            sentiment_drift: 0.5,
            affect_baseline_max: 0.3,
            accept_threshold_min: 0.2,
            accept_threshold_max: 0.6,
            noise_scale: 0.1,
            patience_min: 4,
            patience_max: 10,
            hint_tokens: 2,
            reply_hint: true,
            k_window: crate::dialogue::DEFAULT_K_WINDOW,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str| Err(Error::Config(format!("simulator.{k} out of range")));
        if !(self.dwell_max > 0.0 && self.dwell_max.is_finite()) {
            return bad("dwell_max");
        }
        if !(self.dwell_slope > 0.0) {
            return bad("dwell_slope");
        }
        if !(self.sentiment_drift >= 0.0) {
            return bad("sentiment_drift");
        }
        if !(0.0..=1.0).contains(&self.affect_baseline_max) {
            return bad("affect_baseline_max");
        }
        if !(self.accept_threshold_min > 0.0
            && self.accept_threshold_min <= self.accept_threshold_max
            && self.accept_threshold_max < 1.0)
        {
            return bad("accept_threshold_min");
        }
        if !(self.noise_scale >= 0.0) {
            return bad("noise_scale");
        }
        if self.patience_min == 0 || self.patience_min > self.patience_max {
            return bad("patience_min");
        }
        if self.hint_tokens == 0 {
            return bad("hint_tokens");
        }
        if self.k_window == 0 {
            return bad("k_window");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: u64,
    pub preference_vector: Vec<f64>,
    pub affect_baseline: f64,
    pub accept_threshold: f64,
    pub noise_scale: f64,
    pub patience: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackEvent {
    pub dwell_time: f64,
    pub sentiment_pre: f64,
    pub sentiment_post: f64,
    pub accepted: bool,
}

impl FeedbackEvent {
    pub fn is_valid(&self, dwell_max: f64) -> bool {
        (0.0..=dwell_max).contains(&self.dwell_time)
            && (-1.0..=1.0).contains(&self.sentiment_pre)
            && (-1.0..=1.0).contains(&self.sentiment_post)
    }
}

pub fn sample_user(rng: &mut StreamRng, dim: usize, id: u64, cfg: &SimConfig) -> UserProfile {
    let mut pref: Vec<f64> = loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        if dot(&v, &v) > 1e-12 {
            break v;
        }
    };
    let n = dot(&pref, &pref).sqrt();
    pref.iter_mut().for_each(|x| *x /= n);
    let b = cfg.affect_baseline_max;
    UserProfile {
        id,
        preference_vector: pref,
        affect_baseline: if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 },
        accept_threshold: rng.random_range(cfg.accept_threshold_min..=cfg.accept_threshold_max),
        noise_scale: cfg.noise_scale,
        patience: rng.random_range(cfg.patience_min..=cfg.patience_max),
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Alignment between a user's taste and an item; zero-norm items count as 0.
pub fn alignment(profile: &UserProfile, item_id: usize, world: &World) -> Result<f64> {
    match cosine(&profile.preference_vector, world.item_vector(item_id)?) {
        Ok(a) => Ok(a),
        Err(Error::UndefinedSimilarity) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Items the user would accept; the ground truth for ranking metrics.
pub fn relevant_items(profile: &UserProfile, world: &World) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for id in 0..world.catalog.len() {
        if alignment(profile, id, world)? > profile.accept_threshold {
            out.push(id);
        }
    }
    Ok(out)
}

/// A profile plus the mutable state of one conversation.
#[derive(Clone, Debug)]
pub struct SimulatedUser {
    pub profile: UserProfile,
    pub affect: f64,
    pub keywords: Vec<String>,
    reactions: u32,
}

impl SimulatedUser {
    pub fn new(profile: UserProfile, world: &World) -> Self {
        let mut scored: Vec<(f64, &String)> = world
            .hint_vocab
            .iter()
            .map(|w| (dot(&profile.preference_vector, &world.table.token_vector(w)), w))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let keywords = scored
            .into_iter()
            .take(world.sim.hint_tokens)
            .map(|(_, w)| w.clone())
            .collect();
        Self {
            affect: profile.affect_baseline,
            profile,
            keywords,
            reactions: 0,
        }
    }

    pub fn sample(rng: &mut StreamRng, world: &World, id: u64) -> Self {
        let profile = sample_user(rng, world.dim(), id, &world.sim);
        Self::new(profile, world)
    }

    /// The request that opens the dialogue at turn 0.
    pub fn opening(&self, rng: &mut StreamRng) -> Result<Utterance> {
        let opener = OPENERS.choose(rng).expect("openers non-empty");
        let mut tokens: Vec<String> = opener.split_whitespace().map(str::to_string).collect();
        tokens.extend(self.keywords.iter().cloned());
        Utterance::new(Speaker::User, tokens, 0)
    }

    pub fn exhausted(&self) -> bool {
        self.reactions >= self.profile.patience
    }

    pub fn react(
        &mut self,
        action: Action,
        state: &DialogueState,
        world: &World,
        rng: &mut StreamRng,
    ) -> Result<(Utterance, FeedbackEvent)> {
        if self.exhausted() {
            return Err(Error::InvalidTransition("user is out of patience".into()));
        }
        action.validate(world.catalog.len(), world.templates.len())?;
        let sim = &world.sim;
        let noise = self.profile.noise_scale;
        let align = alignment(&self.profile, action.item_id, world)?.clamp(-1.0, 1.0);

        let z_dwell: f64 = rng.sample(StandardNormal);
        let z_sent: f64 = rng.sample(StandardNormal);
        let dwell = (sim.dwell_max * logistic(sim.dwell_slope * align)
            + z_dwell * noise * sim.dwell_max)
            .clamp(0.0, sim.dwell_max);
        let pre = self.affect.clamp(-1.0, 1.0);
        let post = (pre + sim.sentiment_drift * align + z_sent * noise).clamp(-1.0, 1.0);
        let accepted = align > self.profile.accept_threshold;

        let pool = if accepted { POSITIVE_REPLIES } else { NEGATIVE_REPLIES };
        let phrase = pool.choose(rng).expect("reply pool non-empty");
        let mut tokens: Vec<String> = phrase.split_whitespace().map(str::to_string).collect();
        if sim.reply_hint && !self.keywords.is_empty() {
            let k = self.reactions as usize % self.keywords.len();
            tokens.push(self.keywords[k].clone());
        }
        let reply = Utterance::new(Speaker::User, tokens, state.turn_index + 2)?;

        self.affect = post;
        self.reactions += 1;
        Ok((
            reply,
            FeedbackEvent {
                dwell_time: dwell,
                sentiment_pre: pre,
                sentiment_post: post,
                accepted,
            },
        ))
    }
}

/// Free-function form of [`SimulatedUser::react`].
pub fn user_react(
    user: &mut SimulatedUser,
    action: Action,
    state: &DialogueState,
    world: &World,
    rng: &mut StreamRng,
) -> Result<(Utterance, FeedbackEvent)> {
    user.react(action, state, world, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::DialogueState;
    use crate::embedding::norm;
    use crate::rng;
    use crate::signals::lexicon_sentiment;
    use crate::world::WorldConfig;
    use approx::assert_abs_diff_eq;

    fn world_with(sim: SimConfig) -> World {
        World::build(&WorldConfig::default(), &sim).unwrap()
    }

    fn noiseless() -> SimConfig {
        SimConfig {
            noise_scale: 0.0,
            ..SimConfig::default()
        }
    }

    /// Profile whose cosine with `item_id` is exactly `align`.
    fn aligned_profile(world: &World, item_id: usize, align: f64, threshold: f64) -> UserProfile {
        let item = world.item_vector(item_id).unwrap();
        let n = norm(item);
        let unit: Vec<f64> = item.iter().map(|x| x / n).collect();
        // any direction orthogonal to the item
        let mut orth: Vec<f64> = (0..unit.len()).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
        let p = dot(&orth, &unit);
        orth.iter_mut().zip(&unit).for_each(|(o, u)| *o -= p * u);
        let on = norm(&orth);
        orth.iter_mut().for_each(|o| *o /= on);
        let s = (1.0 - align * align).sqrt();
        UserProfile {
            id: 0,
            preference_vector: unit.iter().zip(&orth).map(|(u, o)| align * u + s * o).collect(),
            affect_baseline: 0.1,
            accept_threshold: threshold,
            noise_scale: 0.0,
            patience: 10,
        }
    }

    fn react_once(world: &World, profile: UserProfile, item: usize) -> (Utterance, FeedbackEvent) {
        let mut user = SimulatedUser::new(profile, world);
        let mut r = rng::seeded(1);
        let state = DialogueState::opening(4, user.opening(&mut r).unwrap()).unwrap();
        user.react(Action::new(item, 0), &state, world, &mut r).unwrap()
    }

    #[test]
    fn sample_user_stream_advances_and_is_deterministic() {
        let cfg = SimConfig::default();
        let mut r = rng::seeded(9);
        let a = sample_user(&mut r, 32, 0, &cfg);
        let b = sample_user(&mut r, 32, 0, &cfg);
        assert_ne!(a, b);
        let again = sample_user(&mut rng::seeded(9), 32, 0, &cfg);
        assert_eq!(a, again);
        assert_abs_diff_eq!(norm(&a.preference_vector), 1.0, epsilon = 1e-9);
        assert!((4..=10).contains(&a.patience));
        assert!((0.2..=0.6).contains(&a.accept_threshold));
        assert!((-0.3..=0.3).contains(&a.affect_baseline));
        assert_eq!(a.noise_scale, 0.1);
    }

    #[test]
    fn preference_vectors_are_near_uniform_on_sphere() {
        let cfg = SimConfig::default();
        let mut r = rng::seeded(42);
        let mut mean = vec![0.0; 32];
        let n = 10_000;
        for i in 0..n {
            let p = sample_user(&mut r, 32, i, &cfg);
            mean.iter_mut().zip(&p.preference_vector).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        assert!(norm(&mean) < 0.05, "mean norm {}", norm(&mean));
    }

    #[test]
    fn noise_free_reaction_formula() {
        let world = world_with(noiseless());
        let threshold = 0.3;
        let align = threshold + 0.1;
        let (reply, ev) = react_once(&world, aligned_profile(&world, 7, align, threshold), 7);
        assert!(ev.accepted);
        assert_abs_diff_eq!(ev.sentiment_pre, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(ev.sentiment_post - ev.sentiment_pre, 0.5 * align, epsilon = 1e-9);
        let expect_dwell = 30.0 / (1.0 + (-3.0 * align).exp());
        assert_abs_diff_eq!(ev.dwell_time, expect_dwell, epsilon = 1e-9);
        assert!(lexicon_sentiment(&reply, &world.lexicon) > 0.0);
    }

    #[test]
    fn dwell_strictly_increasing_in_alignment() {
        let world = world_with(noiseless());
        let mut last = -1.0;
        for i in 0..=40 {
            let a = -0.95 + i as f64 * 0.0475;
            let (_, ev) = react_once(&world, aligned_profile(&world, 3, a, 0.5), 3);
            assert!(ev.dwell_time > last, "align {a}");
            last = ev.dwell_time;
        }
    }

    #[test]
    fn acceptance_matches_threshold_on_grid() {
        let world = world_with(noiseless());
        for ti in 1..=8 {
            let threshold = ti as f64 * 0.1;
            for ai in 0..=20 {
                let a = -1.0 + ai as f64 * 0.1;
                if (a - threshold).abs() < 1e-6 {
                    continue;
                }
                let (reply, ev) = react_once(&world, aligned_profile(&world, 11, a, threshold), 11);
                assert_eq!(ev.accepted, a > threshold, "align {a} threshold {threshold}");
                let polarity = lexicon_sentiment(&reply, &world.lexicon);
                assert_eq!(polarity > 0.0, ev.accepted);
            }
        }
    }

    #[test]
    fn feedback_bounded_under_fuzz() {
        let world = world_with(SimConfig {
            noise_scale: 0.5,
            ..SimConfig::default()
        });
        let mut r = rng::seeded(3);
        let mut count = 0;
        while count < 10_000 {
            let mut user = SimulatedUser::sample(&mut r, &world, count as u64);
            let mut state = DialogueState::opening(4, user.opening(&mut r).unwrap()).unwrap();
            while !user.exhausted() && count < 10_000 {
                let action = Action::new(r.random_range(0..100), r.random_range(0..5));
                let agent = crate::dialogue::render_utterance(
                    action,
                    &world.catalog,
                    &world.templates,
                    state.turn_index + 1,
                )
                .unwrap();
                let (reply, ev) = user.react(action, &state, &world, &mut r).unwrap();
                assert!(ev.is_valid(30.0), "{ev:?}");
                state = crate::dialogue::advance_state(&state, &agent, &reply).unwrap();
                count += 1;
            }
        }
    }

    #[test]
    fn reaction_is_reproducible_with_seed_42() {
        let world = world_with(SimConfig::default());
        let run = || {
            let mut r = rng::seeded(42);
            let mut user = SimulatedUser::sample(&mut r, &world, 0);
            let state = DialogueState::opening(4, user.opening(&mut r).unwrap()).unwrap();
            user.react(Action::new(17, 2), &state, &world, &mut r).unwrap()
        };
        let (u1, e1) = run();
        let (u2, e2) = run();
        assert_eq!(u1, u2);
        assert_eq!(e1.dwell_time.to_bits(), e2.dwell_time.to_bits());
        assert_eq!(e1.sentiment_post.to_bits(), e2.sentiment_post.to_bits());
    }

    #[test]
    fn patience_is_enforced() {
        let world = world_with(SimConfig::default());
        let mut p = aligned_profile(&world, 0, 0.2, 0.5);
        p.patience = 1;
        let mut user = SimulatedUser::new(p, &world);
        let mut r = rng::seeded(0);
        let state = DialogueState::opening(4, user.opening(&mut r).unwrap()).unwrap();
        user.react(Action::new(0, 0), &state, &world, &mut r).unwrap();
        assert!(user.exhausted());
        assert!(user.react(Action::new(0, 0), &state, &world, &mut r).is_err());
    }

    #[test]
    fn keywords_are_most_aligned_title_words() {
        let world = world_with(SimConfig::default());
        let user = SimulatedUser::sample(&mut rng::seeded(5), &world, 0);
        assert_eq!(user.keywords.len(), 2);
        let best = world
            .hint_vocab
            .iter()
            .map(|w| dot(&user.profile.preference_vector, &world.table.token_vector(w)))
            .fold(f64::NEG_INFINITY, f64::max);
        let kw0 = dot(&user.profile.preference_vector, &world.table.token_vector(&user.keywords[0]));
        assert_eq!(kw0, best);
    }
}
