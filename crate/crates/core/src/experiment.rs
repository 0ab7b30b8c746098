//! In-memory pipeline stages and the multi-seed benchmark and ablation built on them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{self, DialogueLog};
use crate::error::{Error, Result};
use crate::eval::{self, AblationReport, AblationRow, Comparison, EvalReport, Metrics, SeedEval};
use crate::policy::{self, PolicyParams, PolicyShape};
use crate::ppo::{self, ConversationEnv, TrainOutcome};
use crate::recommender::{self, PolicyRecommender, RecommenderArgs};
use crate::reward::{self, RewardConfig, RewardModel};
use crate::rng;
use crate::world::World;

pub fn build_world(cfg: &RunConfig) -> Result<World> {
    World::build(&cfg.world, &cfg.simulator)
}

/// Simulated logs from the configured behavior recommender.
pub fn simulate_corpus(cfg: &RunConfig, world: &World, seed: u64) -> Result<Vec<DialogueLog>> {
    let behavior = recommender::build(
        &cfg.corpus.behavior,
        &RecommenderArgs {
            params: None,
            greedy_prob: cfg.corpus.greedy_prob,
            max_turns: cfg.policy.max_turns,
        },
    )?;
    corpus::generate_corpus(world, cfg.corpus.n_dialogues, seed, behavior.as_ref(), cfg.policy.max_turns)
}

/// The configured external corpus, or a simulated one. External logs must
/// stay inside the world catalog since simulated users only know those items.
pub fn load_corpus(cfg: &RunConfig, world: &World, seed: u64, base_dir: Option<&Path>) -> Result<Vec<DialogueLog>> {
    match &cfg.corpus.external {
        None => simulate_corpus(cfg, world, seed),
        Some(p) => {
            let path = match base_dir {
                Some(dir) => dir.join(p),
                None => Path::new(p).to_path_buf(),
            };
            let ingested = corpus::ingest_external_corpus(&path, Some(&world.catalog))?;
            if ingested.added_items > 0 {
                return Err(Error::Config(format!(
                    "corpus.external mentions {} titles outside the catalog",
                    ingested.added_items
                )));
            }
            Ok(ingested.dialogues)
        }
    }
}

pub fn policy_shape(cfg: &RunConfig, world: &World) -> PolicyShape {
    PolicyShape::new(world.dim(), cfg.policy.hidden_dim, world.catalog.len(), world.templates.len())
}

/// Fresh initialization followed by imitation of the logged actions.
pub fn pretrain_policy(cfg: &RunConfig, world: &World, logs: &[DialogueLog], seed: u64) -> Result<(PolicyParams, Vec<f64>)> {
    let examples = corpus::pretrain_examples(logs, world, cfg.policy.max_turns)?;
    let init = PolicyParams::init(policy_shape(cfg, world), seed);
    policy::pretrain(&init, &examples, &cfg.policy.pretrain, seed)
}

/// Regresses weak labels on the features the reward will see under `weights`.
pub fn fit_reward(
    cfg: &RunConfig,
    world: &World,
    logs: &[DialogueLog],
    weights: &RewardConfig,
    seed: u64,
) -> Result<(RewardModel, Vec<f64>)> {
    let data: Vec<_> = corpus::reward_dataset(logs, world)?
        .into_iter()
        .map(|(f, l)| (weights.mask(&f), l))
        .collect();
    reward::train_reward(&RewardModel::init(cfg.reward.hidden_dim, seed), &data, &cfg.reward.train, seed)
}

/// Greedy-policy evaluation on the configured user populations.
pub fn evaluate_params(cfg: &RunConfig, world: &World, params: &PolicyParams) -> Result<EvalReport> {
    let agent = PolicyRecommender {
        params: params.clone(),
        greedy: true,
        max_turns: cfg.policy.max_turns,
    };
    eval::evaluate_recommender(world, &agent, &cfg.eval, cfg.policy.max_turns)
}

pub struct Tuned {
    pub params: PolicyParams,
    pub report: ppo::TrainReport,
    /// Parameters after each completed outer epoch.
    pub snapshots: Vec<PolicyParams>,
}

/// PPO from `init` against the reward defined by `weights` and `model`. With
/// `track`, every outer epoch is evaluated on the first evaluation seed.
pub fn tune_policy(
    cfg: &RunConfig,
    world: &World,
    init: &PolicyParams,
    model: &RewardModel,
    weights: &RewardConfig,
    seed: u64,
    track: bool,
) -> Result<Tuned> {
    let strategy = reward::build_strategy(cfg.reward.mode, *weights, model.clone())?;
    let env = ConversationEnv {
        world,
        reward: strategy.as_ref(),
        hidden_dim: cfg.policy.hidden_dim,
        max_turns: cfg.policy.max_turns,
    };
    let mut ppo_cfg = cfg.ppo.clone();
    ppo_cfg.seed = rng::derive_seed(seed, rng::purpose::PPO_INIT, cfg.ppo.seed);
    let mut probe = cfg.clone();
    probe.eval.seeds.truncate(1);
    let mut snapshots = Vec::new();
    let mut hook = |_: usize, p: &PolicyParams| -> Result<Option<BTreeMap<String, f64>>> {
        snapshots.push(p.clone());
        if !track {
            return Ok(None);
        }
        let r = evaluate_params(&probe, world, p)?;
        Ok(Some(BTreeMap::from([
            ("hr_at_k".to_string(), r.mean.hr_at_k),
            ("ndcg_at_k".to_string(), r.mean.ndcg_at_k),
            ("bleu_4".to_string(), r.mean.bleu_4),
            ("satisfaction".to_string(), r.mean.satisfaction),
        ])))
    };
    let TrainOutcome { params, report } = ppo::train(init, &env, &ppo_cfg, &mut hook)?;
    Ok(Tuned {
        params,
        report,
        snapshots,
    })
}

/// Everything one pipeline seed produces.
pub struct SeedRun {
    pub seed: u64,
    pub pretrained: PolicyParams,
    pub reward_model: RewardModel,
    pub tuned: Tuned,
    pub comparison: Comparison,
}

pub fn run_seed(cfg: &RunConfig, world: &World, seed: u64) -> Result<SeedRun> {
    let logs = load_corpus(cfg, world, seed, None)?;
    let (pretrained, _) = pretrain_policy(cfg, world, &logs, seed)?;
    let (reward_model, _) = fit_reward(cfg, world, &logs, &cfg.reward.weights, seed)?;
    let tuned = tune_policy(cfg, world, &pretrained, &reward_model, &cfg.reward.weights, seed, false)?;
    let comparison = Comparison::new(
        evaluate_params(cfg, world, &pretrained)?,
        evaluate_params(cfg, world, &tuned.params)?,
    )?;
    Ok(SeedRun {
        seed,
        pretrained,
        reward_model,
        tuned,
        comparison,
    })
}

/// Collapses an evaluation over user populations into one per-seed entry.
fn pooled(seed: u64, r: &EvalReport) -> SeedEval {
    SeedEval {
        seed,
        metrics: r.mean.clone(),
        acceptance_rate: eval::mean(&r.per_seed.iter().map(|s| s.acceptance_rate).collect::<Vec<_>>()),
        turns: r.per_seed.iter().map(|s| s.turns).sum(),
        scored_turns: r.per_seed.iter().map(|s| s.scored_turns).sum(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub schema_version: u32,
    /// Across pipeline seeds: one entry per seed in both reports.
    pub comparison: Comparison,
    pub per_seed: Vec<Comparison>,
    pub wall_seconds: f64,
}

impl Benchmark {
    pub fn hr_improvement_points(&self) -> f64 {
        100.0 * (self.comparison.tuned.mean.hr_at_k - self.comparison.baseline.mean.hr_at_k)
    }

    pub fn tuned_hr_std_points(&self) -> f64 {
        100.0 * self.comparison.tuned.std.hr_at_k
    }
}

/// The full pipeline once per `eval.benchmark_seeds` entry.
pub fn benchmark(cfg: &RunConfig) -> Result<Benchmark> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let world = build_world(cfg)?;
    let mut base = Vec::new();
    let mut tuned = Vec::new();
    let mut per_seed = Vec::new();
    for &seed in &cfg.eval.benchmark_seeds {
        let run = run_seed(cfg, &world, seed)?;
        log::info!(
            "seed {seed}: HR@{} {:.3} -> {:.3}",
            cfg.eval.k,
            run.comparison.baseline.mean.hr_at_k,
            run.comparison.tuned.mean.hr_at_k
        );
        base.push(pooled(seed, &run.comparison.baseline));
        tuned.push(pooled(seed, &run.comparison.tuned));
        per_seed.push(run.comparison);
    }
    Ok(Benchmark {
        schema_version: 1,
        comparison: Comparison::new(
            eval::summarize("policy-greedy", cfg.eval.k, base),
            eval::summarize("policy-greedy", cfg.eval.k, tuned),
        )?,
        per_seed,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// `(label, mode, weights)` in table order: full, then engagement, sentiment
/// and coherence alone.
pub fn ablation_variants(full: RewardConfig) -> Vec<(&'static str, &'static str, RewardConfig)> {
    vec![
        ("Full Model (Engage + Sentiment + Coherence)", "full", full),
        ("Only Engagement", "engagement", RewardConfig { alpha: 1.0, beta: 0.0, gamma: 0.0 }),
        ("Only Sentiment", "sentiment", RewardConfig { alpha: 0.0, beta: 0.0, gamma: 1.0 }),
        ("Only Semantic Coherence", "coherence", RewardConfig { alpha: 0.0, beta: 1.0, gamma: 0.0 }),
    ]
}

/// One tuned policy per reward variant and pipeline seed. Corpus and
/// pretraining are shared across variants of a seed.
pub fn run_ablation(cfg: &RunConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let world = build_world(cfg)?;
    let variants = ablation_variants(cfg.reward.weights);
    let mut by_variant: Vec<Vec<(Metrics, f64)>> = vec![Vec::new(); variants.len()];
    for &seed in &cfg.eval.benchmark_seeds {
        let logs = load_corpus(cfg, &world, seed, None)?;
        let (pretrained, _) = pretrain_policy(cfg, &world, &logs, seed)?;
        let baseline = evaluate_params(cfg, &world, &pretrained)?;
        let rows = crate::parallel::map_indexed(variants.len(), |v| {
            let w = &variants[v].2;
            let (model, _) = fit_reward(cfg, &world, &logs, w, seed)?;
            let tuned = tune_policy(cfg, &world, &pretrained, &model, w, seed, false)?;
            let c = Comparison::new(baseline.clone(), evaluate_params(cfg, &world, &tuned.params)?)?;
            Ok((c.tuned.mean.clone(), c.satisfaction_gain_pct))
        })?;
        for (v, r) in rows.into_iter().enumerate() {
            by_variant[v].push(r);
        }
    }
    let rows = variants
        .iter()
        .zip(by_variant)
        .map(|((label, mode, w), runs)| {
            let col = |f: fn(&(Metrics, f64)) -> f64| eval::mean(&runs.iter().map(f).collect::<Vec<_>>());
            AblationRow {
                label: label.to_string(),
                mode: mode.to_string(),
                alpha: w.alpha,
                beta: w.beta,
                gamma: w.gamma,
                hr_at_k: col(|r| r.0.hr_at_k),
                ndcg_at_k: col(|r| r.0.ndcg_at_k),
                bleu_4: col(|r| r.0.bleu_4),
                satisfaction_gain_pct: col(|r| r.1),
                hr_per_seed: runs.iter().map(|r| r.0.hr_at_k).collect(),
                seeds: cfg.eval.benchmark_seeds.clone(),
            }
        })
        .collect();
    Ok(AblationReport {
        schema_version: 1,
        k: cfg.eval.k,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.corpus.n_dialogues = 40;
        c.policy.hidden_dim = 8;
        c.policy.pretrain.epochs = 2;
        c.reward.train.epochs = 5;
        c.ppo.trajectories_per_batch = 8;
        c.ppo.outer_epochs = 1;
        c.eval.n_dialogues = 10;
        c.eval.seeds = vec![1];
        c.eval.benchmark_seeds = vec![1];
        c
    }

    #[test]
    fn ablation_rows_in_table_order() {
        let v = ablation_variants(RewardConfig::default());
        let modes: Vec<_> = v.iter().map(|x| x.1).collect();
        assert_eq!(modes, vec!["full", "engagement", "sentiment", "coherence"]);
        assert_eq!(v[1].2, RewardConfig { alpha: 1.0, beta: 0.0, gamma: 0.0 });
    }

    #[test]
    fn tiny_pipeline_is_deterministic() {
        let c = tiny();
        let a = benchmark(&c).unwrap();
        let b = benchmark(&c).unwrap();
        assert_eq!(a.comparison.tuned, b.comparison.tuned);
        assert_eq!(a.comparison.baseline, b.comparison.baseline);
        let t = run_ablation(&c).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.rows[0].mode, "full");
    }

    #[test]
    fn external_titles_outside_catalog_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ext.jsonl");
        let mut c = tiny();
        let world = build_world(&c).unwrap();
        let mut logs = simulate_corpus(&c, &world, 1).unwrap();
        corpus::write_corpus(&path, &logs).unwrap();
        c.corpus.external = Some(path.to_string_lossy().into_owned());
        assert_eq!(load_corpus(&c, &world, 1, None).unwrap().len(), logs.len());
        logs[0].actions[0].item_title = Some("no such film".into());
        corpus::write_corpus(&path, &logs).unwrap();
        assert!(load_corpus(&c, &world, 1, None).is_err());
    }
}
