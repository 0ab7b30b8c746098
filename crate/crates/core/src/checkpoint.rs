//! JSON weight files for the policy and the reward model.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyParams, PolicyShape};
use crate::reward::{RewardModel, REWARD_INPUT_DIM};

pub const SCHEMA_VERSION: u32 = 1;
pub const POLICY_KIND: &str = "policy";
pub const REWARD_KIND: &str = "reward";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightFile {
    pub schema_version: u32,
    pub kind: String,
    /// policy: `[input, hidden, items, templates]`; reward: `[3, hidden, 1]`.
    pub dims: Vec<usize>,
    pub seed: u64,
    pub weights: Vec<f64>,
}

impl WeightFile {
    pub fn policy(params: &PolicyParams, seed: u64) -> Self {
        let s = params.shape();
        Self {
            schema_version: SCHEMA_VERSION,
            kind: POLICY_KIND.into(),
            dims: vec![s.input_dim, s.hidden_dim, s.n_items, s.n_templates],
            seed,
            weights: params.as_slice().to_vec(),
        }
    }

    pub fn reward(model: &RewardModel, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: REWARD_KIND.into(),
            dims: vec![REWARD_INPUT_DIM, model.hidden_dim(), 1],
            seed,
            weights: model.params().to_vec(),
        }
    }

    fn check(&self, kind: &str, n_dims: usize) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::CorruptModel(format!("unsupported weight schema {}", self.schema_version)));
        }
        if self.kind != kind {
            return Err(Error::CorruptModel(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        if self.dims.len() != n_dims {
            return Err(Error::CorruptModel(format!("{kind} checkpoint needs {n_dims} dims")));
        }
        if let Some(i) = self.weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::CorruptModel(format!("weight {i} is not finite")));
        }
        Ok(())
    }

    pub fn into_policy(self) -> Result<PolicyParams> {
        self.check(POLICY_KIND, 4)?;
        let d = &self.dims;
        if d[0] < 3 {
            return Err(Error::CorruptModel("policy input dim below 3".into()));
        }
        let shape = PolicyShape::new(d[0] - 2, d[1], d[2], d[3]);
        PolicyParams::from_flat(shape, self.weights)
    }

    pub fn into_reward(self) -> Result<RewardModel> {
        self.check(REWARD_KIND, 3)?;
        if self.dims[0] != REWARD_INPUT_DIM || self.dims[2] != 1 {
            return Err(Error::CorruptModel("reward checkpoint must map 3 features to 1 output".into()));
        }
        RewardModel::from_flat(self.dims[1], self.weights)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("weights serialize");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::CorruptModel(format!("{}: {e}", path.display())))
    }
}

pub fn load_policy(path: &Path) -> Result<PolicyParams> {
    WeightFile::load(path)?.into_policy()
}

pub fn load_reward(path: &Path) -> Result<RewardModel> {
    WeightFile::load(path)?.into_reward()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_round_trip_is_exact() {
        let p = PolicyParams::init(PolicyShape::new(6, 4, 7, 3), 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        WeightFile::policy(&p, 9).save(&path).unwrap();
        assert_eq!(load_policy(&path).unwrap(), p);
        assert!(load_reward(&path).is_err());
    }

    #[test]
    fn reward_round_trip_is_exact() {
        let m = RewardModel::init(5, 3);
        let back = serde_json::from_str::<WeightFile>(&WeightFile::reward(&m, 3).to_json())
            .unwrap()
            .into_reward()
            .unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_wrong_length_and_nan() {
        let mut w = WeightFile::reward(&RewardModel::init(5, 3), 3);
        w.weights.pop();
        assert!(w.clone().into_reward().is_err());
        w.weights.push(f64::NAN);
        assert!(matches!(w.into_reward(), Err(Error::CorruptModel(_))));
    }
}
