//! Reward functions: the fixed linear mix of the three feedback channels, a
//! small learned regressor of weak satisfaction labels, and batch normalization.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::Trajectory;
use crate::error::{Error, Result};
use crate::optim::{self, OptimArgs};
use crate::registry::Registry;
use crate::rng;
use crate::signals::{FeatureVector, WeakLabel};

/// Mixing weights for engagement, relevance and sentiment shift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            gamma: 1.0 / 3.0,
        }
    }
}

impl RewardConfig {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let cfg = Self { alpha, beta, gamma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config("reward.weights alpha, beta, gamma must be non-negative".into()));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("reward.weights alpha + beta + gamma must be positive".into()));
        }
        Ok(())
    }

    /// Zeroes the channels whose weight is zero; the learned reward sees only active channels.
    pub fn mask(&self, f: &FeatureVector) -> FeatureVector {
        let keep = |w: f64, v: f64| if w > 0.0 { v } else { 0.0 };
        FeatureVector {
            engagement: keep(self.alpha, f.engagement),
            relevance: keep(self.beta, f.relevance),
            sentiment_shift: keep(self.gamma, f.sentiment_shift),
        }
    }
}

pub fn linear_reward(f: &FeatureVector, cfg: &RewardConfig) -> f64 {
    cfg.alpha * f.engagement + cfg.beta * f.relevance + cfg.gamma * f.sentiment_shift
}

pub const REWARD_INPUT_DIM: usize = 3;

/// `3 -> hidden (tanh) -> 1` regressor with flat parameters
/// `[w1 (hidden x 3), b1, w2, b2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardModel {
    hidden_dim: usize,
    params: Vec<f64>,
}

fn reward_param_count(hidden: usize) -> usize {
    hidden * REWARD_INPUT_DIM + hidden + hidden + 1
}

impl RewardModel {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            hidden_dim,
            params: vec![0.0; reward_param_count(hidden_dim)],
        }
    }

    pub fn init(hidden_dim: usize, seed: u64) -> Self {
        let mut m = Self::zeros(hidden_dim);
        let mut r = rng::stream(seed, rng::purpose::REWARD, 1);
        let a1 = (3.0 / REWARD_INPUT_DIM as f64).sqrt();
        let a2 = (3.0 / hidden_dim.max(1) as f64).sqrt();
        let h3 = hidden_dim * REWARD_INPUT_DIM;
        for (i, w) in m.params.iter_mut().enumerate() {
            if i < h3 {
                *w = r.random_range(-a1..a1);
            } else if (h3 + hidden_dim..h3 + 2 * hidden_dim).contains(&i) {
                *w = r.random_range(-a2..a2);
            }
        }
        m
    }

    pub fn from_flat(hidden_dim: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != reward_param_count(hidden_dim) {
            return Err(Error::DimensionMismatch {
                expected: reward_param_count(hidden_dim),
                got: params.len(),
            });
        }
        Ok(Self { hidden_dim, params })
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], f64) {
        let h = self.hidden_dim;
        let p = &self.params;
        let (w1, rest) = p.split_at(h * REWARD_INPUT_DIM);
        let (b1, rest) = rest.split_at(h);
        let (w2, rest) = rest.split_at(h);
        (w1, b1, w2, rest[0])
    }

    fn hidden(&self, x: &[f64; 3]) -> Vec<f64> {
        let (w1, b1, _, _) = self.split();
        (0..self.hidden_dim)
            .map(|j| {
                let row = &w1[j * 3..j * 3 + 3];
                (b1[j] + row[0] * x[0] + row[1] * x[1] + row[2] * x[2]).tanh()
            })
            .collect()
    }

    fn forward(&self, x: &[f64; 3]) -> (Vec<f64>, f64) {
        let h = self.hidden(x);
        let (_, _, w2, b2) = self.split();
        let y = b2 + w2.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
        (h, y)
    }

    pub fn predict(&self, f: &FeatureVector) -> Result<f64> {
        if let Some(i) = self.params.iter().position(|w| !w.is_finite()) {
            return Err(Error::CorruptModel(format!("reward weight {i} is not finite")));
        }
        let (_, y) = self.forward(&f.as_array());
        if !y.is_finite() {
            return Err(Error::NonFiniteForward);
        }
        Ok(y)
    }

    /// Upper bound on |output| over the feature box: |b2| + sum |w2|.
    pub fn output_bound(&self) -> f64 {
        let (_, _, w2, b2) = self.split();
        b2.abs() + w2.iter().map(|w| w.abs()).sum::<f64>()
    }
}

/// Mean squared error over `batch` and its gradient with respect to every weight.
pub fn mse_loss_grad(model: &RewardModel, batch: &[(FeatureVector, f64)]) -> (f64, Vec<f64>) {
    let h = model.hidden_dim;
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = 0.0;
    let n = batch.len() as f64;
    let (_, _, w2, _) = model.split();
    for (f, target) in batch {
        let x = f.as_array();
        let (hid, y) = model.forward(&x);
        let err = y - target;
        loss += err * err;
        let dy = 2.0 * err / n;
        let (gw1, rest) = grad.split_at_mut(h * 3);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(h);
        gb2[0] += dy;
        for j in 0..h {
            gw2[j] += dy * hid[j];
            let dpre = dy * w2[j] * (1.0 - hid[j] * hid[j]);
            gb1[j] += dpre;
            for k in 0..3 {
                gw1[j * 3 + k] += dpre * x[k];
            }
        }
    }
    (loss / n, grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: String,
}

impl Default for RewardTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.01,
            batch_size: 32,
            optimizer: "adam".into(),
        }
    }
}

/// Mini-batch regression of weak labels. Returns the model and per-epoch mean loss.
pub fn train_reward(
    model: &RewardModel,
    dataset: &[(FeatureVector, WeakLabel)],
    cfg: &RewardTrainConfig,
    seed: u64,
) -> Result<(RewardModel, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("reward dataset"));
    }
    let mut model = model.clone();
    let mut opt = optim::build(
        &cfg.optimizer,
        &OptimArgs {
            lr: cfg.learning_rate,
            momentum: 0.9,
            n_params: model.params.len(),
        },
    )?;
    let data: Vec<(FeatureVector, f64)> = dataset.iter().map(|(f, l)| (*f, l.satisfaction)).collect();
    let mut r = rng::stream(seed, rng::purpose::REWARD, 0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i]));
            let (loss, grad) = mse_loss_grad(&model, &batch);
            if !loss.is_finite() {
                return Err(Error::AbortUpdate("reward regression loss".into()));
            }
            total += loss * batch.len() as f64;
            opt.step(&mut model.params, &grad);
        }
        curve.push(total / data.len() as f64);
    }
    Ok((model, curve))
}

pub fn dataset_mse(model: &RewardModel, dataset: &[(FeatureVector, WeakLabel)]) -> f64 {
    let data: Vec<(FeatureVector, f64)> = dataset.iter().map(|(f, l)| (*f, l.satisfaction)).collect();
    mse_loss_grad(model, &data).0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    Linear,
    Learned,
    Blended,
}

impl RewardMode {
    pub fn name(&self) -> &'static str {
        match self {
            RewardMode::Linear => "linear",
            RewardMode::Learned => "learned",
            RewardMode::Blended => "blended",
        }
    }
}

/// Maps a turn's features to the scalar reward written into `raw_reward`.
pub trait RewardStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn reward(&self, features: &FeatureVector) -> Result<f64>;
}

#[derive(Clone, Debug)]
pub struct RewardArgs {
    pub cfg: RewardConfig,
    pub model: RewardModel,
}

struct LinearReward(RewardConfig);

impl RewardStrategy for LinearReward {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn reward(&self, f: &FeatureVector) -> Result<f64> {
        Ok(linear_reward(f, &self.0))
    }
}

struct LearnedReward(RewardArgs);

impl RewardStrategy for LearnedReward {
    fn name(&self) -> &'static str {
        "learned"
    }
    fn reward(&self, f: &FeatureVector) -> Result<f64> {
        self.0.model.predict(&self.0.cfg.mask(f))
    }
}

struct BlendedReward(RewardArgs);

impl RewardStrategy for BlendedReward {
    fn name(&self) -> &'static str {
        "blended"
    }
    fn reward(&self, f: &FeatureVector) -> Result<f64> {
        let learned = self.0.model.predict(&self.0.cfg.mask(f))?;
        Ok(0.5 * (linear_reward(f, &self.0.cfg) + learned))
    }
}

pub fn registry() -> Registry<RewardArgs, dyn RewardStrategy> {
    let mut r: Registry<RewardArgs, dyn RewardStrategy> = Registry::new("reward mode");
    r.register("linear", |a| Ok(Box::new(LinearReward(a.cfg))))
        .register("learned", |a| Ok(Box::new(LearnedReward(a.clone()))))
        .register("blended", |a| Ok(Box::new(BlendedReward(a.clone()))));
    r
}

pub fn build_strategy(mode: RewardMode, cfg: RewardConfig, model: RewardModel) -> Result<Box<dyn RewardStrategy>> {
    registry().build(mode.name(), &RewardArgs { cfg, model })
}

pub fn reward_for_step(
    features: &FeatureVector,
    model: &RewardModel,
    cfg: &RewardConfig,
    mode: RewardMode,
) -> Result<f64> {
    build_strategy(mode, *cfg, model.clone())?.reward(features)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormScope {
    /// Pool all steps of the collected batch.
    Batch,
    /// Separate statistics per trajectory.
    Conversation,
    /// Copy raw rewards unchanged.
    Off,
}

pub const NORM_EPS: f64 = 1e-8;

fn zscore(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
    values.iter().map(|v| (v - mu) / (sd + NORM_EPS)).collect()
}

/// Fills `normalized_reward` for every step.
pub fn normalize_rewards(batch: &mut [Trajectory], scope: NormScope) -> Result<()> {
    let total: usize = batch.iter().map(|t| t.steps.len()).sum();
    match scope {
        NormScope::Off => {
            for s in batch.iter_mut().flat_map(|t| t.steps.iter_mut()) {
                s.normalized_reward = s.raw_reward;
            }
        }
        NormScope::Batch => {
            if total < 2 {
                return Err(Error::EmptyInput("reward normalization needs at least two steps"));
            }
            let raw: Vec<f64> = batch.iter().flat_map(|t| t.steps.iter().map(|s| s.raw_reward)).collect();
            let z = zscore(&raw);
            for (s, v) in batch.iter_mut().flat_map(|t| t.steps.iter_mut()).zip(z) {
                s.normalized_reward = v;
            }
        }
        NormScope::Conversation => {
            if total < 2 {
                return Err(Error::EmptyInput("reward normalization needs at least two steps"));
            }
            for t in batch.iter_mut() {
                let raw: Vec<f64> = t.steps.iter().map(|s| s.raw_reward).collect();
                for (s, v) in t.steps.iter_mut().zip(zscore(&raw)) {
                    s.normalized_reward = v;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{Action, DialogueState, StepRecord};
    use crate::user_sim::FeedbackEvent;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn fv(e: f64, r: f64, s: f64) -> FeatureVector {
        FeatureVector::new(e, r, s)
    }

    #[test]
    fn linear_reward_examples() {
        let only_e = RewardConfig::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(linear_reward(&fv(0.7, 0.3, -0.9), &only_e), 0.7);
        assert!(RewardConfig::new(0.0, 0.0, 0.0).is_err());
        assert!(RewardConfig::new(-1.0, 1.0, 1.0).is_err());
        let mix = RewardConfig::new(0.5, 0.3, 0.2).unwrap();
        assert_abs_diff_eq!(linear_reward(&fv(0.8, 0.5, -0.2), &mix), 0.51, epsilon = 1e-12);
    }

    #[test]
    fn zero_model_outputs_bias() {
        let mut m = RewardModel::zeros(16);
        *m.params_mut().last_mut().unwrap() = 0.37;
        assert_eq!(m.predict(&fv(0.9, -0.4, 0.2)).unwrap(), 0.37);
        let a = m.predict(&fv(0.1, 0.2, 0.3)).unwrap();
        assert_eq!(a, m.predict(&fv(0.1, 0.2, 0.3)).unwrap());
    }

    #[test]
    fn corrupt_weights_rejected() {
        let mut m = RewardModel::init(4, 1);
        m.params_mut()[2] = f64::INFINITY;
        assert!(matches!(m.predict(&fv(0.0, 0.0, 0.0)), Err(Error::CorruptModel(_))));
    }

    fn synthetic(n: usize, seed: u64, label: impl Fn(&FeatureVector) -> f64) -> Vec<(FeatureVector, WeakLabel)> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let f = fv(r.random_range(0.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
                let s = label(&f);
                (f, WeakLabel { satisfaction: s })
            })
            .collect()
    }

    #[test]
    fn learns_engagement_identity() {
        let data = synthetic(200, 5, |f| f.engagement);
        let (m, curve) = train_reward(&RewardModel::init(16, 3), &data, &RewardTrainConfig::default(), 9).unwrap();
        assert_eq!(curve.len(), 200);
        assert!(curve[199] < curve[0]);
        assert!(dataset_mse(&m, &data) < 0.01, "mse {}", dataset_mse(&m, &data));
    }

    #[test]
    fn learns_constant_label() {
        let data = synthetic(200, 6, |_| 0.5);
        let (m, _) = train_reward(&RewardModel::init(16, 3), &data, &RewardTrainConfig::default(), 9).unwrap();
        assert!(dataset_mse(&m, &data) < 1e-4);
    }

    #[test]
    fn training_is_deterministic_and_rejects_empty() {
        let data = synthetic(50, 7, |f| 0.5 * f.engagement + 0.1);
        let cfg = RewardTrainConfig {
            epochs: 10,
            ..RewardTrainConfig::default()
        };
        let a = train_reward(&RewardModel::init(8, 1), &data, &cfg, 2).unwrap();
        let b = train_reward(&RewardModel::init(8, 1), &data, &cfg, 2).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
        assert!(matches!(train_reward(&RewardModel::init(8, 1), &[], &cfg, 2), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        for inst in 0..20u64 {
            let m = RewardModel::init(6, 50 + inst);
            let data: Vec<(FeatureVector, f64)> = synthetic(8, 70 + inst, |f| f.relevance * f.engagement)
                .into_iter()
                .map(|(f, l)| (f, l.satisfaction))
                .collect();
            let (_, g) = mse_loss_grad(&m, &data);
            let h = 1e-5;
            for k in 0..m.params().len() {
                let mut p = m.clone();
                p.params_mut()[k] += h;
                let mut q = m.clone();
                q.params_mut()[k] -= h;
                let fd = (mse_loss_grad(&p, &data).0 - mse_loss_grad(&q, &data).0) / (2.0 * h);
                let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6);
                assert!(rel < 1e-4, "instance {inst} weight {k}: fd {fd} analytic {}", g[k]);
            }
        }
    }

    #[test]
    fn dispatch_by_mode() {
        let cfg = RewardConfig::default();
        let model = RewardModel::init(16, 4);
        let f = fv(0.6, 0.2, -0.1);
        assert_eq!(reward_for_step(&f, &model, &cfg, RewardMode::Linear).unwrap(), linear_reward(&f, &cfg));
        assert_eq!(reward_for_step(&f, &model, &cfg, RewardMode::Learned).unwrap(), model.predict(&f).unwrap());
        // a bias-only model equal to the linear value makes the blend an identity
        let v = linear_reward(&f, &cfg);
        let mut flat = RewardModel::zeros(16);
        *flat.params_mut().last_mut().unwrap() = v;
        assert_abs_diff_eq!(reward_for_step(&f, &flat, &cfg, RewardMode::Blended).unwrap(), v, epsilon = 1e-15);
        assert!(registry().build("preference", &RewardArgs { cfg, model }).is_err());
    }

    #[test]
    fn mask_zeroes_inactive_channels() {
        let only_s = RewardConfig::new(0.0, 0.0, 1.0).unwrap();
        assert_eq!(only_s.mask(&fv(0.5, 0.4, -0.3)), fv(0.0, 0.0, -0.3));
        assert_eq!(RewardConfig::default().mask(&fv(0.5, 0.4, -0.3)), fv(0.5, 0.4, -0.3));
    }

    fn step(raw: f64) -> StepRecord {
        StepRecord {
            state: DialogueState::empty(4),
            action: Action::new(0, 0),
            feedback: FeedbackEvent {
                dwell_time: 0.0,
                sentiment_pre: 0.0,
                sentiment_post: 0.0,
                accepted: false,
            },
            features: FeatureVector::default(),
            raw_reward: raw,
            normalized_reward: 0.0,
            log_prob: 0.0,
            value: 0.0,
            advantage: 0.0,
            ret: 0.0,
            encoded: Vec::new(),
        }
    }

    fn traj(raws: &[f64]) -> Trajectory {
        Trajectory {
            steps: raws.iter().map(|r| step(*r)).collect(),
            user_profile_id: 0,
            done: true,
        }
    }

    fn normalized(batch: &[Trajectory]) -> Vec<f64> {
        batch.iter().flat_map(|t| t.steps.iter().map(|s| s.normalized_reward)).collect()
    }

    #[test]
    fn normalization_examples() {
        let mut b = vec![traj(&[1.0, 1.0, 1.0])];
        normalize_rewards(&mut b, NormScope::Batch).unwrap();
        assert!(normalized(&b).iter().all(|v| v.abs() < 1e-12));

        let mut b = vec![traj(&[0.0]), traj(&[2.0])];
        normalize_rewards(&mut b, NormScope::Batch).unwrap();
        let z = normalized(&b);
        assert_abs_diff_eq!(z[0], -1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(z[1], 1.0, epsilon = 1e-7);

        let mut b = vec![traj(&[0.3])];
        assert!(normalize_rewards(&mut b, NormScope::Batch).is_err());

        let mut b = vec![traj(&[0.0, 2.0]), traj(&[10.0, 14.0])];
        normalize_rewards(&mut b, NormScope::Conversation).unwrap();
        let z = normalized(&b);
        for (a, e) in z.iter().zip([-1.0, 1.0, -1.0, 1.0]) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-7);
        }
        normalize_rewards(&mut b, NormScope::Off).unwrap();
        assert_eq!(normalized(&b), vec![0.0, 2.0, 10.0, 14.0]);
    }

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mu = v.iter().sum::<f64>() / n;
        (mu, (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt())
    }

    proptest! {
        #[test]
        fn linear_reward_is_linear(a in prop::array::uniform6(-3.0f64..3.0), w in prop::array::uniform3(0.01f64..2.0)) {
            let cfg = RewardConfig::new(w[0], w[1], w[2]).unwrap();
            let f1 = FeatureVector { engagement: a[0], relevance: a[1], sentiment_shift: a[2] };
            let f2 = FeatureVector { engagement: a[3], relevance: a[4], sentiment_shift: a[5] };
            let sum = FeatureVector { engagement: a[0] + a[3], relevance: a[1] + a[4], sentiment_shift: a[2] + a[5] };
            prop_assert!((linear_reward(&sum, &cfg) - linear_reward(&f1, &cfg) - linear_reward(&f2, &cfg)).abs() < 1e-9);
        }

        #[test]
        fn batch_zscore_and_idempotence(raws in prop::collection::vec(-5.0f64..5.0, 100)) {
            let mut b: Vec<Trajectory> = raws.chunks(7).map(traj).collect();
            normalize_rewards(&mut b, NormScope::Batch).unwrap();
            let z = normalized(&b);
            let (_, sd0) = moments(&raws);
            prop_assume!(sd0 > 1e-6);
            let (mu, sd) = moments(&z);
            prop_assert!(mu.abs() < 1e-6);
            prop_assert!((sd - 1.0).abs() < 1e-3);
            for (t, s) in b.iter_mut().flat_map(|t| t.steps.iter_mut()).zip(&z) {
                t.raw_reward = *s;
            }
            normalize_rewards(&mut b, NormScope::Batch).unwrap();
            for (a, c) in normalized(&b).iter().zip(&z) {
                prop_assert!((a - c).abs() < 1e-3);
            }
        }

        #[test]
        fn predict_within_weight_bound(seed in any::<u64>(), e in 0.0f64..1.0, r in -1.0f64..1.0, s in -1.0f64..1.0) {
            let m = RewardModel::init(16, seed);
            let y = m.predict(&fv(e, r, s)).unwrap();
            prop_assert!(y.abs() <= m.output_bound() + 1e-12);
        }
    }
}
