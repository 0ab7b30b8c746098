//! The run configuration: defaults, presets, JSON file overlay and overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::optim;
use crate::policy::PretrainConfig;
use crate::ppo::PPOConfig;
use crate::recommender::{self, DEFAULT_MAX_TURNS};
use crate::reward::{RewardConfig, RewardMode, RewardTrainConfig};
use crate::user_sim::SimConfig;
use crate::world::WorldConfig;

pub const PRESETS: [&str; 2] = ["desk", "paper"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub run_id: String,
    pub output_dir: String,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            run_id: "desk".into(),
            output_dir: "runs".into(),
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub n_dialogues: usize,
    /// Recommender that produces the logged actions.
    pub behavior: String,
    pub greedy_prob: f64,
    /// JSONL dialogue logs used instead of simulation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external: Option<String>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            n_dialogues: 500,
            behavior: "relevance-greedy".into(),
            greedy_prob: 0.7,
            external: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub hidden_dim: usize,
    pub max_turns: u32,
    pub pretrain: PretrainConfig,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            max_turns: DEFAULT_MAX_TURNS,
            pretrain: PretrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub weights: RewardConfig,
    pub mode: RewardMode,
    pub hidden_dim: usize,
    pub train: RewardTrainConfig,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self {
            weights: RewardConfig::default(),
            mode: RewardMode::Learned,
            hidden_dim: 16,
            train: RewardTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub world: WorldConfig,
    pub simulator: SimConfig,
    pub corpus: CorpusSection,
    pub policy: PolicySection,
    pub reward: RewardSection,
    pub ppo: PPOConfig,
    pub eval: EvalConfig,
}

fn positive(v: usize, key: &str) -> Result<()> {
    if v == 0 {
        return Err(Error::Config(format!("{key} must be positive")));
    }
    Ok(())
}

fn positive_f(v: f64, key: &str) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("{key} must be positive")));
    }
    Ok(())
}

fn known_optimizer(name: &str, key: &str) -> Result<()> {
    if !optim::registry().contains(name) {
        return Err(Error::Config(format!("{key} is not a known optimizer: {name}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::default()),
            "paper" => Ok(Self {
                ppo: PPOConfig::paper(),
                ..Self::default()
            }),
            other => Err(Error::Config(format!(
                "unknown preset {other}; expected one of {}",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.run_id.is_empty() || self.run.run_id.contains(['/', '\\']) || self.run.run_id.starts_with('.') {
            return Err(Error::Config("run.run_id must be a plain directory name".into()));
        }
        self.world.validate()?;
        self.simulator.validate()?;
        positive(self.corpus.n_dialogues, "corpus.n_dialogues")?;
        if !recommender::registry().contains(&self.corpus.behavior) || self.corpus.behavior.starts_with("policy") {
            return Err(Error::Config(format!(
                "corpus.behavior must be a scripted recommender, got {}",
                self.corpus.behavior
            )));
        }
        if !(0.0..=1.0).contains(&self.corpus.greedy_prob) {
            return Err(Error::Config("corpus.greedy_prob must lie in [0, 1]".into()));
        }
        positive(self.policy.hidden_dim, "policy.hidden_dim")?;
        if self.policy.max_turns < 2 {
            return Err(Error::Config("policy.max_turns must be at least 2".into()));
        }
        let p = &self.policy.pretrain;
        positive(p.epochs, "policy.pretrain.epochs")?;
        positive(p.batch_size, "policy.pretrain.batch_size")?;
        positive_f(p.learning_rate, "policy.pretrain.learning_rate")?;
        if !(0.0..1.0).contains(&p.momentum) {
            return Err(Error::Config("policy.pretrain.momentum must lie in [0, 1)".into()));
        }
        known_optimizer(&p.optimizer, "policy.pretrain.optimizer")?;
        self.reward.weights.validate()?;
        positive(self.reward.hidden_dim, "reward.hidden_dim")?;
        let t = &self.reward.train;
        positive(t.epochs, "reward.train.epochs")?;
        positive(t.batch_size, "reward.train.batch_size")?;
        positive_f(t.learning_rate, "reward.train.learning_rate")?;
        known_optimizer(&t.optimizer, "reward.train.optimizer")?;
        self.ppo.validate()?;
        self.eval.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Recursively overlays `patch` onto `base`; objects merge key by key,
/// everything else replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `key.path=value` into a one-key JSON patch. Values that parse as
/// JSON are taken literally, anything else as a string.
pub fn override_patch(arg: &str) -> Result<Value> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {arg} must look like key.path=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override key {key} is malformed")));
    }
    let mut v: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    for part in key.rsplit('.') {
        let mut m = serde_json::Map::new();
        m.insert(part.to_string(), v);
        v = Value::Object(m);
    }
    Ok(v)
}

fn from_value(v: Value) -> Result<RunConfig> {
    serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
}

/// defaults, then the preset, then the file, then each override in order.
pub fn resolve(preset: Option<&str>, file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let base = RunConfig::preset(preset.unwrap_or("desk"))?;
    let mut v = serde_json::to_value(&base)?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let patch: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        if !patch.is_object() {
            return Err(Error::Config(format!("config {} must hold a JSON object", path.display())));
        }
        merge(&mut v, patch);
    }
    for o in overrides {
        merge(&mut v, override_patch(o)?);
    }
    let cfg = from_value(v)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_validate_and_round_trip() {
        for p in PRESETS {
            let c = RunConfig::preset(p).unwrap();
            c.validate().unwrap();
            let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn paper_preset_constants() {
        let c = RunConfig::preset("paper").unwrap();
        assert_eq!(c.ppo.learning_rate, 5e-6);
        assert_eq!(c.ppo.clip_epsilon, 0.2);
        assert_eq!(c.ppo.trajectories_per_batch, 128);
        assert_eq!(c.ppo.outer_epochs, 5);
        assert!(RunConfig::preset("huge").is_err());
    }

    #[test]
    fn file_overlays_preset_and_overrides_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"ppo": {"outer_epochs": 2}, "run": {"seed": 11}}"#).unwrap();
        let c = resolve(Some("paper"), Some(&path), &["run.seed=12".into(), "run.run_id=abc".into()]).unwrap();
        assert_eq!(c.ppo.outer_epochs, 2);
        assert_eq!(c.ppo.learning_rate, 5e-6);
        assert_eq!(c.ppo.clip_epsilon, 0.2);
        assert_eq!(c.run.seed, 12);
        assert_eq!(c.run.run_id, "abc");
    }

    #[test]
    fn unknown_keys_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"ppo": {"clip_eps": 0.1}}"#).unwrap();
        let msg = resolve(None, Some(&path), &[]).unwrap_err().to_string();
        assert!(msg.contains("clip_eps"), "{msg}");
        let msg = resolve(None, None, &["ppo.clip_epsilon=-1".into()]).unwrap_err().to_string();
        assert!(msg.contains("ppo.clip_epsilon"), "{msg}");
        let msg = resolve(None, None, &["eval.w_eng=0.9".into()]).unwrap_err().to_string();
        assert!(msg.contains("eval.w_eng"), "{msg}");
    }

    #[test]
    fn merge_replaces_leaves_and_keeps_siblings() {
        let mut a = json!({"x": {"y": 1, "z": 2}, "w": [1]});
        merge(&mut a, json!({"x": {"y": 5}, "w": [2, 3]}));
        assert_eq!(a, json!({"x": {"y": 5, "z": 2}, "w": [2, 3]}));
        assert_eq!(override_patch("a.b=c").unwrap(), json!({"a": {"b": "c"}}));
        assert_eq!(override_patch("a=[1,2]").unwrap(), json!({"a": [1, 2]}));
        assert!(override_patch("a.=1").is_err());
        assert!(override_patch("novalue").is_err());
    }

    #[test]
    fn rejects_bad_sections() {
        let mut c = RunConfig::default();
        c.corpus.behavior = "policy-greedy".into();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.run.run_id = "../x".into();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.reward.train.optimizer = "lbfgs".into();
        assert!(c.validate().unwrap_err().to_string().contains("reward.train.optimizer"));
    }
}
