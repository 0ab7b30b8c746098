//! Clipped-surrogate policy optimization against an episodic environment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::{Action, DialogueState, StepRecord, Trajectory};
use crate::error::{Error, Result};
use crate::optim::{self, OptimArgs};
use crate::parallel;
use crate::policy::{
    self, backward, entropy_logit_grad, forward, OutputGrads, PolicyParams, PolicyShape,
};
use crate::recommender::{simulate_dialogue, PolicyRecommender};
use crate::reward::{normalize_rewards, NormScope, RewardStrategy};
use crate::rng::{self, StreamRng};
use crate::signals::{extract_features, FeatureVector};
use crate::user_sim::FeedbackEvent;
use crate::world::World;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PPOConfig {
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub discount_gamma: f64,
    pub gae_lambda: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub trajectories_per_batch: usize,
    pub ppo_epochs_per_batch: usize,
    pub outer_epochs: usize,
    pub minibatch_size: usize,
    pub seed: u64,
    pub optimizer: String,
    pub momentum: f64,
    pub normalize_advantages: bool,
    pub reward_normalization: NormScope,
}

impl Default for PPOConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            learning_rate: 3e-3,
            discount_gamma: 0.99,
            gae_lambda: 0.0,
            value_coef: 0.5,
            entropy_coef: 0.01,
            trajectories_per_batch: 128,
            ppo_epochs_per_batch: 8,
            outer_epochs: 5,
            minibatch_size: 256,
            seed: 0,
            optimizer: "adam".into(),
            momentum: 0.9,
            normalize_advantages: true,
            reward_normalization: NormScope::Batch,
        }
    }
}

pub const PAPER_LEARNING_RATE: f64 = 5e-6;

impl PPOConfig {
    pub fn paper() -> Self {
        Self {
            learning_rate: PAPER_LEARNING_RATE,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, why: &str| Err(Error::Config(format!("ppo.{k} {why}")));
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon", "must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if !(self.discount_gamma > 0.0 && self.discount_gamma <= 1.0) {
            return bad("discount_gamma", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda", "must lie in [0, 1]");
        }
        if !(self.value_coef >= 0.0) {
            return bad("value_coef", "must be non-negative");
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("entropy_coef", "must be non-negative");
        }
        if self.trajectories_per_batch == 0 {
            return bad("trajectories_per_batch", "must be positive");
        }
        if self.ppo_epochs_per_batch == 0 {
            return bad("ppo_epochs_per_batch", "must be positive");
        }
        if self.minibatch_size == 0 {
            return bad("minibatch_size", "must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !optim::registry().contains(&self.optimizer) {
            return bad("optimizer", "is not a known optimizer");
        }
        Ok(())
    }
}

/// Produces complete episodes under a policy snapshot.
pub trait Environment: Sync {
    fn shape(&self) -> PolicyShape;
    /// One episode with actions sampled from `params`. Fills everything except
    /// the normalized reward, advantage and return.
    fn rollout(&self, params: &PolicyParams, episode: u64, rng: &mut StreamRng) -> Result<Trajectory>;
}

/// Dialogues with simulated users, rewarded by a reward strategy.
pub struct ConversationEnv<'a> {
    pub world: &'a World,
    pub reward: &'a dyn RewardStrategy,
    pub hidden_dim: usize,
    pub max_turns: u32,
}

impl Environment for ConversationEnv<'_> {
    fn shape(&self) -> PolicyShape {
        PolicyShape::new(
            self.world.dim(),
            self.hidden_dim,
            self.world.catalog.len(),
            self.world.templates.len(),
        )
    }

    fn rollout(&self, params: &PolicyParams, episode: u64, rng: &mut StreamRng) -> Result<Trajectory> {
        let agent = PolicyRecommender {
            params: params.clone(),
            greedy: false,
            max_turns: self.max_turns,
        };
        let run = simulate_dialogue(self.world, &agent, episode, self.max_turns, rng)?;
        let mut steps = Vec::with_capacity(run.exchanges.len());
        for ex in run.exchanges {
            let rec = ex.recommendation;
            let features = extract_features(
                &ex.state.active_query_tokens,
                rec.action.item_id,
                &ex.feedback,
                &self.world.catalog,
                &self.world.table,
                self.world.sim.dwell_max,
            )?;
            let raw_reward = self.reward.reward(&features)?;
            steps.push(StepRecord {
                state: ex.state,
                action: rec.action,
                feedback: ex.feedback,
                features,
                raw_reward,
                normalized_reward: raw_reward,
                log_prob: rec.log_prob,
                value: rec.value,
                advantage: 0.0,
                ret: 0.0,
                encoded: rec.encoded,
            });
        }
        if steps.is_empty() {
            return Err(Error::Run("dialogue ended before the first recommendation".into()));
        }
        Ok(Trajectory {
            steps,
            user_profile_id: run.user.profile.id,
            done: true,
        })
    }
}

/// Two states, two actions, one step per episode, reward 1 for the matching
/// action (`state 0 -> action 1`, `state 1 -> action 0`) and 0 otherwise.
pub struct ToyEnv {
    pub hidden_dim: usize,
}

impl ToyEnv {
    pub const OPTIMAL: [usize; 2] = [1, 0];

    pub fn encode(state: usize) -> Vec<f64> {
        let mut x = vec![0.0; 2];
        x[state] = 1.0;
        x
    }

    pub fn reward(state: usize, action: usize) -> f64 {
        if Self::OPTIMAL[state] == action {
            1.0
        } else {
            0.0
        }
    }
}

impl Environment for ToyEnv {
    fn shape(&self) -> PolicyShape {
        PolicyShape {
            input_dim: 2,
            hidden_dim: self.hidden_dim,
            n_items: 2,
            n_templates: 1,
        }
    }

    fn rollout(&self, params: &PolicyParams, episode: u64, rng: &mut StreamRng) -> Result<Trajectory> {
        let s = rng.random_range(0..2usize);
        let encoded = Self::encode(s);
        let (out, _) = forward(params, &encoded)?;
        let (action, log_prob) = policy::sample_action(&out, rng);
        let r = Self::reward(s, action.item_id);
        Ok(Trajectory {
            steps: vec![StepRecord {
                state: DialogueState::empty(1),
                action,
                feedback: FeedbackEvent {
                    dwell_time: 0.0,
                    sentiment_pre: 0.0,
                    sentiment_post: 0.0,
                    accepted: r > 0.0,
                },
                features: FeatureVector::default(),
                raw_reward: r,
                normalized_reward: r,
                log_prob,
                value: out.value,
                advantage: 0.0,
                ret: 0.0,
                encoded,
            }],
            user_profile_id: episode,
            done: true,
        })
    }
}

/// Generalized advantage estimation. The bootstrap after the last step is 0
/// when `done`, otherwise the last value estimate.
pub fn compute_gae(rewards: &[f64], values: &[f64], done: bool, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: rewards.len(),
            got: values.len(),
        });
    }
    if rewards.is_empty() {
        return Err(Error::EmptyInput("advantage estimation needs at least one step"));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = if done { 0.0 } else { values[n - 1] };
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Fills `advantage` and `ret` from normalized rewards.
pub fn fill_advantages(batch: &mut [Trajectory], cfg: &PPOConfig) -> Result<()> {
    for t in batch.iter_mut() {
        let r: Vec<f64> = t.steps.iter().map(|s| s.normalized_reward).collect();
        let v: Vec<f64> = t.steps.iter().map(|s| s.value).collect();
        let (adv, ret) = compute_gae(&r, &v, t.done, cfg.discount_gamma, cfg.gae_lambda)?;
        for ((s, a), g) in t.steps.iter_mut().zip(adv).zip(ret) {
            s.advantage = a;
            s.ret = g;
        }
    }
    Ok(())
}

/// `cfg.trajectories_per_batch` episodes under `params` with normalized rewards.
pub fn collect_batch(env: &dyn Environment, params: &PolicyParams, cfg: &PPOConfig, outer_epoch: usize) -> Result<Vec<Trajectory>> {
    let n = cfg.trajectories_per_batch;
    let base = (outer_epoch * n) as u64;
    let mut batch = parallel::map_indexed(n, |i| {
        let episode = base + i as u64;
        let mut r = rng::stream(cfg.seed, rng::purpose::PPO_COLLECT, episode);
        env.rollout(params, episode, &mut r)
    })?;
    normalize_rewards(&mut batch, cfg.reward_normalization)?;
    Ok(batch)
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)` and its derivative with respect to `ln r`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub loss: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

fn normalized_advantages(steps: &[&StepRecord], enabled: bool) -> Vec<f64> {
    let a: Vec<f64> = steps.iter().map(|s| s.advantage).collect();
    if !enabled || a.len() < 2 {
        return a;
    }
    let n = a.len() as f64;
    let mu = a.iter().sum::<f64>() / n;
    let sd = (a.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt();
    a.iter().map(|x| (x - mu) / (sd + 1e-8)).collect()
}

/// Loss `-surrogate + c_v * mean (V - return)^2 - c_e * mean entropy` over a
/// minibatch, its gradient, and diagnostics.
pub fn ppo_loss(steps: &[&StepRecord], params: &PolicyParams, cfg: &PPOConfig) -> Result<(f64, PolicyParams, Diagnostics)> {
    if steps.is_empty() {
        return Err(Error::EmptyInput("ppo minibatch"));
    }
    let n = steps.len() as f64;
    let adv = normalized_advantages(steps, cfg.normalize_advantages);
    let mut grad = PolicyParams::zeros(params.shape());
    let mut d = Diagnostics::default();
    let mut clipped = 0usize;
    for (step, a) in steps.iter().zip(&adv) {
        let (out, cache) = forward(params, &step.encoded)?;
        let Action { item_id, template_id } = step.action;
        let new_lp = policy::log_prob(&out, step.action);
        let log_ratio = new_lp - step.log_prob;
        let ratio = log_ratio.exp();
        let (s, ds_dlp) = clipped_surrogate(ratio, *a, cfg.clip_epsilon);
        let v_err = out.value - step.ret;
        let h = out.entropy();
        d.surrogate += s / n;
        d.value_loss += v_err * v_err / n;
        d.entropy += h / n;
        d.approx_kl += (ratio - 1.0 - log_ratio) / n;
        if (ratio - 1.0).abs() > cfg.clip_epsilon {
            clipped += 1;
        }

        // d(-s/n)/dz = -(ds/dlp / n) (onehot - p); entropy term -c_e/n dH/dz
        let ps = -ds_dlp / n;
        let ent = -cfg.entropy_coef / n;
        let mut g = OutputGrads {
            item_logits: out.item_probs.iter().map(|p| -ps * p).collect(),
            template_logits: out.template_probs.iter().map(|p| -ps * p).collect(),
            value: cfg.value_coef * 2.0 * v_err / n,
        };
        g.item_logits[item_id] += ps;
        g.template_logits[template_id] += ps;
        for (gi, e) in g.item_logits.iter_mut().zip(entropy_logit_grad(&out.item_probs)) {
            *gi += ent * e;
        }
        for (gt, e) in g.template_logits.iter_mut().zip(entropy_logit_grad(&out.template_probs)) {
            *gt += ent * e;
        }
        backward(params, &cache, &g, &mut grad)?;
    }
    d.clip_fraction = clipped as f64 / n;
    d.loss = -d.surrogate + cfg.value_coef * d.value_loss - cfg.entropy_coef * d.entropy;
    if !d.loss.is_finite() || !grad.is_finite() {
        return Err(Error::AbortUpdate(format!("loss {}", d.loss)));
    }
    Ok((d.loss, grad, d))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub outer_epoch: usize,
    pub ppo_epoch: usize,
    pub minibatch: usize,
    #[serde(flatten)]
    pub diagnostics: Diagnostics,
    pub mean_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub outer_epoch: usize,
    pub trajectories: usize,
    pub steps: usize,
    pub mean_reward: f64,
    pub mean_episode_reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<BTreeMap<String, f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub updates: Vec<UpdateRecord>,
    pub epochs: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl TrainReport {
    /// One JSON object per update.
    pub fn updates_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for u in &self.updates {
            s.push_str(&serde_json::to_string(u)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn summary(&self) -> serde_json::Value {
        let max_kl = self.updates.iter().map(|u| u.diagnostics.approx_kl).fold(0.0, f64::max);
        serde_json::json!({
            "updates": self.updates.len(),
            "epochs": self.epochs,
            "max_approx_kl": max_kl,
            "final_entropy": self.updates.last().map(|u| u.diagnostics.entropy),
            "aborted": self.aborted,
        })
    }
}

pub const KL_WARN: f64 = 0.2;

pub type EvalHook<'a> = dyn FnMut(usize, &PolicyParams) -> Result<Option<BTreeMap<String, f64>>> + 'a;

pub struct TrainOutcome {
    pub params: PolicyParams,
    pub report: TrainReport,
}

/// Outer loop: collect under the current snapshot (which becomes `theta_old`),
/// run `ppo_epochs_per_batch` shuffled passes, then call `hook`. A non-finite
/// loss stops training and is recorded in `report.aborted`.
pub fn train(initial: &PolicyParams, env: &dyn Environment, cfg: &PPOConfig, hook: &mut EvalHook<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if initial.shape() != env.shape() {
        return Err(Error::invalid("policy shape does not match the environment"));
    }
    let mut params = initial.clone();
    let mut report = TrainReport::default();
    let mut opt = optim::build(
        &cfg.optimizer,
        &OptimArgs {
            lr: cfg.learning_rate,
            momentum: cfg.momentum,
            n_params: params.shape().param_count(),
        },
    )?;
    for outer in 0..cfg.outer_epochs {
        let mut batch = collect_batch(env, &params, cfg, outer)?;
        fill_advantages(&mut batch, cfg)?;
        let steps: Vec<&StepRecord> = batch.iter().flat_map(|t| t.steps.iter()).collect();
        let mean_reward = steps.iter().map(|s| s.raw_reward).sum::<f64>() / steps.len() as f64;
        let mean_episode_reward =
            batch.iter().map(|t| t.steps.iter().map(|s| s.raw_reward).sum::<f64>()).sum::<f64>() / batch.len() as f64;
        let mut shuffle = rng::stream(cfg.seed, rng::purpose::PPO_SHUFFLE, outer as u64);
        let mut order: Vec<usize> = (0..steps.len()).collect();
        'passes: for pass in 0..cfg.ppo_epochs_per_batch {
            order.shuffle(&mut shuffle);
            for (mb, chunk) in order.chunks(cfg.minibatch_size).enumerate() {
                let mini: Vec<&StepRecord> = chunk.iter().map(|&i| steps[i]).collect();
                match ppo_loss(&mini, &params, cfg) {
                    Ok((_, grad, diagnostics)) => {
                        if diagnostics.approx_kl > KL_WARN {
                            log::warn!("approximate KL {:.4} above {KL_WARN} (epoch {outer}, pass {pass})", diagnostics.approx_kl);
                        }
                        opt.step(params.as_mut_slice(), grad.as_slice());
                        report.updates.push(UpdateRecord {
                            outer_epoch: outer,
                            ppo_epoch: pass,
                            minibatch: mb,
                            diagnostics,
                            mean_reward,
                        });
                    }
                    Err(e @ Error::AbortUpdate(_)) | Err(e @ Error::NonFiniteForward) => {
                        report.aborted = Some(e.to_string());
                        break 'passes;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        if report.aborted.is_some() {
            break;
        }
        let eval = hook(outer, &params)?;
        report.epochs.push(EpochRecord {
            outer_epoch: outer,
            trajectories: batch.len(),
            steps: steps.len(),
            mean_reward,
            mean_episode_reward,
            eval,
        });
    }
    Ok(TrainOutcome { params, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn no_hook() -> impl FnMut(usize, &PolicyParams) -> Result<Option<BTreeMap<String, f64>>> {
        |_, _| Ok(None)
    }

    #[test]
    fn gae_examples() {
        let (a, r) = compute_gae(&[1.0], &[0.0], true, 0.99, 0.95).unwrap();
        assert_eq!((a[0], r[0]), (1.0, 1.0));
        let (a, _) = compute_gae(&[1.0, 2.0, 3.0], &[0.0; 3], true, 1.0, 1.0).unwrap();
        assert_eq!(a, vec![6.0, 5.0, 3.0]);
        let (a, r) = compute_gae(&[1.0, 1.0], &[0.5, 0.5], true, 0.99, 0.95).unwrap();
        assert_abs_diff_eq!(a[0], 0.995 + 0.9405 * 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(a[0], 1.46525, epsilon = 1e-12);
        assert_abs_diff_eq!(a[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], 1.0, epsilon = 1e-12);
        assert!(compute_gae(&[1.0], &[0.0, 0.0], true, 0.99, 0.95).is_err());
        // not done: bootstrap from the last value
        let (a, _) = compute_gae(&[0.0], &[2.0], false, 0.5, 1.0).unwrap();
        assert_abs_diff_eq!(a[0], 0.5 * 2.0 - 2.0, epsilon = 1e-15);
    }

    #[test]
    fn clip_formula() {
        assert_abs_diff_eq!(clipped_surrogate(1.3, 2.0, 0.2).0, 2.4, epsilon = 1e-12);
        assert_eq!(clipped_surrogate(1.3, 2.0, 0.2).1, 0.0);
        assert_abs_diff_eq!(clipped_surrogate(0.7, -1.0, 0.2).0, -0.8, epsilon = 1e-12);
        let (v, g) = clipped_surrogate(1.1, 2.0, 0.2);
        assert_abs_diff_eq!(v, 2.2, epsilon = 1e-12);
        assert_abs_diff_eq!(g, 2.2, epsilon = 1e-12);
    }

    #[test]
    fn dead_zone_gradient_is_zero_numerically() {
        for (r, a) in [(0.7, -1.0), (1.35, 2.0), (0.5, -0.3), (1.5, 0.7)] {
            let (_, g) = clipped_surrogate(r, a, 0.2);
            let h = 1e-6;
            let lr = f64::ln(r);
            let fd = (clipped_surrogate((lr + h).exp(), a, 0.2).0 - clipped_surrogate((lr - h).exp(), a, 0.2).0) / (2.0 * h);
            assert_eq!(g, 0.0);
            assert!(fd.abs() < 1e-9);
        }
    }

    #[test]
    fn zero_outer_epochs_is_identity() {
        let env = ToyEnv { hidden_dim: 4 };
        let p = PolicyParams::init(env.shape(), 1);
        let cfg = PPOConfig {
            outer_epochs: 0,
            ..PPOConfig::default()
        };
        let out = train(&p, &env, &cfg, &mut no_hook()).unwrap();
        assert_eq!(out.params, p);
        assert!(out.report.updates.is_empty() && out.report.epochs.is_empty());
    }

    fn toy_cfg(seed: u64) -> PPOConfig {
        PPOConfig {
            learning_rate: 0.05,
            trajectories_per_batch: 64,
            ppo_epochs_per_batch: 4,
            outer_epochs: 25,
            minibatch_size: 32,
            reward_normalization: NormScope::Off,
            optimizer: "sgd-momentum".into(),
            seed,
            ..PPOConfig::default()
        }
    }

    #[test]
    fn single_trajectory_batch_is_populated() {
        let env = ToyEnv { hidden_dim: 4 };
        let p = PolicyParams::init(env.shape(), 1);
        let cfg = PPOConfig {
            trajectories_per_batch: 1,
            reward_normalization: NormScope::Off,
            ..PPOConfig::default()
        };
        let mut b = collect_batch(&env, &p, &cfg, 0).unwrap();
        fill_advantages(&mut b, &cfg).unwrap();
        assert_eq!(b.len(), 1);
        let s = &b[0].steps[0];
        assert!(s.log_prob <= 0.0 && s.value.is_finite() && s.advantage.is_finite() && s.ret.is_finite());
        assert_eq!(s.encoded.len(), 2);
    }

    #[test]
    fn toy_mdp_learns_optimal_action() {
        let env = ToyEnv { hidden_dim: 8 };
        let cfg = toy_cfg(3);
        let out = train(&PolicyParams::init(env.shape(), 2), &env, &cfg, &mut no_hook()).unwrap();
        assert!(out.report.updates.len() <= 200);
        for s in 0..2 {
            let (o, _) = forward(&out.params, &ToyEnv::encode(s)).unwrap();
            assert_eq!(o.greedy_action().item_id, ToyEnv::OPTIMAL[s]);
            // one-step episodes: the optimal value is the best immediate reward
            let dp = (0..2).map(|a| ToyEnv::reward(s, a)).fold(f64::MIN, f64::max);
            assert!((o.value - dp).abs() <= 0.05 * dp, "state {s}: value {} vs {dp}", o.value);
        }
    }

    #[test]
    fn ratio_is_one_right_after_refresh() {
        let env = ToyEnv { hidden_dim: 4 };
        let p = PolicyParams::init(env.shape(), 5);
        let cfg = toy_cfg(1);
        let mut b = collect_batch(&env, &p, &cfg, 0).unwrap();
        fill_advantages(&mut b, &cfg).unwrap();
        let steps: Vec<&StepRecord> = b.iter().flat_map(|t| t.steps.iter()).collect();
        let (_, _, d) = ppo_loss(&steps, &p, &cfg).unwrap();
        assert!(d.clip_fraction == 0.0 && d.approx_kl.abs() < 1e-12);
        let plain = PPOConfig {
            normalize_advantages: false,
            ..cfg
        };
        let (_, _, d) = ppo_loss(&steps, &p, &plain).unwrap();
        let mean_adv = steps.iter().map(|s| s.advantage).sum::<f64>() / steps.len() as f64;
        assert_abs_diff_eq!(d.surrogate, mean_adv, epsilon = 1e-9);
    }

    #[test]
    fn train_is_deterministic() {
        let env = ToyEnv { hidden_dim: 4 };
        let p = PolicyParams::init(env.shape(), 5);
        let cfg = PPOConfig {
            outer_epochs: 3,
            ..toy_cfg(9)
        };
        let a = train(&p, &env, &cfg, &mut no_hook()).unwrap();
        let b = train(&p, &env, &cfg, &mut no_hook()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.report.updates_jsonl().unwrap(), b.report.updates_jsonl().unwrap());
    }

    #[test]
    fn invalid_config_names_key() {
        let cfg = PPOConfig {
            clip_epsilon: -0.1,
            ..PPOConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("clip_epsilon"));
        assert_eq!(PPOConfig::paper().learning_rate, 5e-6);
    }

    proptest! {
        #[test]
        fn gae_unit_params_are_suffix_sums(r in prop::collection::vec(-3.0f64..3.0, 1..12)) {
            let (a, ret) = compute_gae(&r, &vec![0.0; r.len()], true, 1.0, 1.0).unwrap();
            for t in 0..r.len() {
                let suffix: f64 = r[t..].iter().sum();
                prop_assert!((a[t] - suffix).abs() < 1e-12);
                prop_assert_eq!(a[t], ret[t]);
            }
        }

        #[test]
        fn minibatch_advantages_standardized(a in prop::collection::vec(-10.0f64..10.0, 2..50)) {
            let steps: Vec<StepRecord> = a.iter().map(|x| {
                let mut s = ToyEnv { hidden_dim: 1 }
                    .rollout(&PolicyParams::zeros(ToyEnv { hidden_dim: 1 }.shape()), 0, &mut rng::seeded(0))
                    .unwrap()
                    .steps
                    .remove(0);
                s.advantage = *x;
                s
            }).collect();
            let refs: Vec<&StepRecord> = steps.iter().collect();
            let z = normalized_advantages(&refs, true);
            let n = z.len() as f64;
            let mu = z.iter().sum::<f64>() / n;
            let sd = (z.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
            let mu0 = a.iter().sum::<f64>() / n;
            let sd0 = (a.iter().map(|v| (v - mu0).powi(2)).sum::<f64>() / n).sqrt();
            prop_assume!(sd0 > 1e-3);
            prop_assert!(mu.abs() < 1e-3);
            prop_assert!((sd - 1.0).abs() < 1e-3);
        }
    }
}
