//! The on-disk run store and the pipeline subcommands that fill it.
//!
//! Layout: `output_dir/run_id/{config.json, manifest.json, corpus.jsonl,
//! checkpoints/, reports/}`. Artifacts are never replaced: writing a file
//! that exists succeeds only when the bytes are identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{self, WeightFile};
use crate::config::RunConfig;
use crate::corpus::{self, DialogueLog};
use crate::error::{Error, Result};
use crate::eval::{self, AblationReport, Comparison};
use crate::experiment;
use crate::world::World;

pub const MANIFEST_VERSION: u32 = 1;

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const PRETRAINED: &str = "checkpoints/policy_pretrained.json";
pub const REWARD: &str = "checkpoints/reward.json";
pub const TUNED: &str = "checkpoints/policy_tuned.json";
pub const EVAL_REPORT: &str = "reports/eval.json";
pub const ABLATION_REPORT: &str = "reports/ablation.json";
pub const BENCHMARK_REPORT: &str = "reports/benchmark.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    GenCorpus,
    Pretrain,
    TrainReward,
    TrainPpo,
    Evaluate,
    Ablate,
    Report,
    Benchmark,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::GenCorpus,
        Stage::Pretrain,
        Stage::TrainReward,
        Stage::TrainPpo,
        Stage::Evaluate,
        Stage::Ablate,
        Stage::Report,
        Stage::Benchmark,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenCorpus => "gen-corpus",
            Stage::Pretrain => "pretrain",
            Stage::TrainReward => "train-reward",
            Stage::TrainPpo => "train-ppo",
            Stage::Evaluate => "evaluate",
            Stage::Ablate => "ablate",
            Stage::Report => "report",
            Stage::Benchmark => "benchmark",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageEntry {
    pub stage: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub run_id: String,
    pub seed: u64,
    pub config_sha256: String,
    pub stages: Vec<StageEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct RunDir {
    pub root: PathBuf,
    pub config: RunConfig,
}

fn to_json_line<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

impl RunDir {
    pub fn path_for(cfg: &RunConfig) -> PathBuf {
        Path::new(&cfg.run.output_dir).join(&cfg.run.run_id)
    }

    /// Opens the run for `cfg`, creating it only when `create` is set. An
    /// existing run must have been made with the same effective config.
    pub fn open(cfg: &RunConfig, create: bool) -> Result<Self> {
        let root = Self::path_for(cfg);
        let config_path = root.join(CONFIG_FILE);
        let echo = cfg.to_json() + "\n";
        if config_path.exists() {
            let stored = fs::read_to_string(&config_path)?;
            if stored != echo {
                return Err(Error::Run(format!(
                    "run {} was created with a different config; pick a new run_id",
                    root.display()
                )));
            }
        } else if create {
            fs::create_dir_all(root.join("checkpoints"))?;
            fs::create_dir_all(root.join("reports"))?;
            fs::write(&config_path, &echo)?;
            let m = Manifest {
                schema_version: MANIFEST_VERSION,
                run_id: cfg.run.run_id.clone(),
                seed: cfg.run.seed,
                config_sha256: sha256_hex(echo.as_bytes()),
                stages: Vec::new(),
            };
            fs::write(root.join(MANIFEST_FILE), to_json_line(&m)?)?;
        } else {
            return Err(Error::Run(format!("no run at {}", root.display())));
        }
        Ok(Self {
            root,
            config: cfg.clone(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn require(&self, rel: &str, stage: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if !p.exists() {
            return Err(Error::Run(format!("{} is missing; run `{stage}` first", p.display())));
        }
        Ok(p)
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let text = fs::read_to_string(self.path(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(|e| Error::Run(format!("manifest: {e}")))
    }

    fn checksum(&self, rel: &str) -> Result<String> {
        Ok(sha256_hex(&fs::read(self.path(rel))?))
    }

    /// Writes a new artifact; an existing file must already hold `bytes`.
    pub fn write_artifact(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(rel);
        if p.exists() {
            if fs::read(&p)? == bytes {
                return Ok(());
            }
            return Err(Error::Run(format!("refusing to overwrite {}", p.display())));
        }
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = p.with_extension("partial");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &p)?;
        Ok(())
    }

    /// Appends a stage entry with checksums; a rerun that reproduced the same
    /// files leaves the manifest unchanged.
    pub fn record(&self, stage: Stage, inputs: &[&str], outputs: &[String]) -> Result<()> {
        let mut entry = StageEntry {
            stage: stage.name().into(),
            seed: self.config.run.seed,
            ..StageEntry::default()
        };
        for rel in inputs {
            entry.inputs.insert(rel.to_string(), self.checksum(rel)?);
        }
        for rel in outputs {
            entry.outputs.insert(rel.clone(), self.checksum(rel)?);
        }
        let mut m = self.manifest()?;
        if m.stages.contains(&entry) {
            return Ok(());
        }
        m.stages.push(entry);
        fs::write(self.path(MANIFEST_FILE), to_json_line(&m)?)?;
        Ok(())
    }

    fn world(&self) -> Result<World> {
        experiment::build_world(&self.config)
    }

    fn read_corpus(&self, world: &World) -> Result<Vec<DialogueLog>> {
        let p = self.require(CORPUS_FILE, "gen-corpus")?;
        let ingested = corpus::ingest_external_corpus(&p, Some(&world.catalog))?;
        if ingested.added_items > 0 {
            return Err(Error::Run("run corpus mentions items outside the catalog".into()));
        }
        Ok(ingested.dialogues)
    }
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    Ok(to_json_line(v)?.into_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(p: &Path) -> Result<T> {
    let text = fs::read_to_string(p)?;
    serde_json::from_str(&text).map_err(|e| Error::Run(format!("{}: {e}", p.display())))
}

#[derive(Serialize)]
struct CorpusStats {
    dialogues: usize,
    agent_turns: usize,
    acceptance_by_source: BTreeMap<String, (usize, usize)>,
}

#[derive(Serialize)]
struct Curve<'a> {
    seed: u64,
    loss: &'a [f64],
}

/// Runs one subcommand and returns the paths it produced, relative to the run.
pub fn run_stage(stage: Stage, cfg: &RunConfig) -> Result<Vec<String>> {
    cfg.validate()?;
    let create = matches!(stage, Stage::GenCorpus | Stage::Ablate | Stage::Benchmark);
    let run = RunDir::open(cfg, create)?;
    let seed = cfg.run.seed;
    let mut outputs: Vec<String> = Vec::new();
    let mut inputs: Vec<&str> = Vec::new();
    let put = |rel: &str, bytes: Vec<u8>, outputs: &mut Vec<String>| -> Result<()> {
        run.write_artifact(rel, &bytes)?;
        outputs.push(rel.to_string());
        Ok(())
    };
    match stage {
        Stage::GenCorpus => {
            let world = run.world()?;
            let logs = experiment::load_corpus(cfg, &world, seed, None)?;
            let mut text = String::new();
            for log in &logs {
                text.push_str(&serde_json::to_string(log)?);
                text.push('\n');
            }
            put(CORPUS_FILE, text.into_bytes(), &mut outputs)?;
            let stats = CorpusStats {
                dialogues: logs.len(),
                agent_turns: logs.iter().map(|l| l.actions.len()).sum(),
                acceptance_by_source: corpus::acceptance_by_source(&logs)
                    .into_iter()
                    .map(|(k, v)| (serde_json::to_value(k).unwrap().as_str().unwrap_or("").to_string(), v))
                    .collect(),
            };
            put("reports/corpus_stats.json", json_bytes(&stats)?, &mut outputs)?;
        }
        Stage::Pretrain => {
            let world = run.world()?;
            let logs = run.read_corpus(&world)?;
            inputs.push(CORPUS_FILE);
            let (params, curve) = experiment::pretrain_policy(cfg, &world, &logs, seed)?;
            put(PRETRAINED, WeightFile::policy(&params, seed).to_json().into_bytes(), &mut outputs)?;
            put("reports/pretrain_curve.json", json_bytes(&Curve { seed, loss: &curve })?, &mut outputs)?;
        }
        Stage::TrainReward => {
            let world = run.world()?;
            let logs = run.read_corpus(&world)?;
            inputs.push(CORPUS_FILE);
            let (model, curve) = experiment::fit_reward(cfg, &world, &logs, &cfg.reward.weights, seed)?;
            put(REWARD, WeightFile::reward(&model, seed).to_json().into_bytes(), &mut outputs)?;
            put("reports/reward_curve.json", json_bytes(&Curve { seed, loss: &curve })?, &mut outputs)?;
        }
        Stage::TrainPpo => {
            let world = run.world()?;
            let init = checkpoint::load_policy(&run.require(PRETRAINED, "pretrain")?)?;
            let model = checkpoint::load_reward(&run.require(REWARD, "train-reward")?)?;
            inputs.extend([PRETRAINED, REWARD]);
            let out = experiment::tune_policy(
                cfg,
                &world,
                &init,
                &model,
                &cfg.reward.weights,
                seed,
                cfg.eval.track_training,
            )?;
            if let Some(why) = &out.report.aborted {
                log::warn!("PPO stopped early: {why}");
            }
            for (k, snap) in out.snapshots.iter().enumerate() {
                let rel = format!("checkpoints/policy_ppo_epoch{k}.json");
                put(&rel, WeightFile::policy(snap, seed).to_json().into_bytes(), &mut outputs)?;
            }
            put(TUNED, WeightFile::policy(&out.params, seed).to_json().into_bytes(), &mut outputs)?;
            put("reports/ppo_updates.jsonl", out.report.updates_jsonl()?.into_bytes(), &mut outputs)?;
            put("reports/ppo_summary.json", json_bytes(&out.report.summary())?, &mut outputs)?;
        }
        Stage::Evaluate => {
            let world = run.world()?;
            let base = checkpoint::load_policy(&run.require(PRETRAINED, "pretrain")?)?;
            let tuned = checkpoint::load_policy(&run.require(TUNED, "train-ppo")?)?;
            inputs.extend([PRETRAINED, TUNED]);
            let c = Comparison::new(
                experiment::evaluate_params(cfg, &world, &base)?,
                experiment::evaluate_params(cfg, &world, &tuned)?,
            )?;
            put(EVAL_REPORT, json_bytes(&c)?, &mut outputs)?;
            put("reports/table1.txt", eval::render_table1(&c).into_bytes(), &mut outputs)?;
        }
        Stage::Ablate => {
            let a = experiment::run_ablation(cfg)?;
            put(ABLATION_REPORT, json_bytes(&a)?, &mut outputs)?;
            put("reports/table2.txt", eval::render_table2(&a).into_bytes(), &mut outputs)?;
        }
        Stage::Benchmark => {
            let mut b = experiment::benchmark(cfg)?;
            // wall time would make the report irreproducible
            let secs = b.wall_seconds;
            b.wall_seconds = 0.0;
            log::info!("benchmark took {secs:.1}s");
            put(BENCHMARK_REPORT, json_bytes(&b)?, &mut outputs)?;
            put("reports/benchmark_table1.txt", eval::render_table1(&b.comparison).into_bytes(), &mut outputs)?;
        }
        Stage::Report => {
            // read everything first so a failure leaves no partial output
            let c: Option<Comparison> = match run.path(EVAL_REPORT) {
                p if p.exists() => Some(read_json(&p)?),
                _ => None,
            };
            let a: Option<AblationReport> = match run.path(ABLATION_REPORT) {
                p if p.exists() => Some(read_json(&p)?),
                _ => None,
            };
            if c.is_none() && a.is_none() {
                return Err(Error::Run(format!(
                    "{} has no evaluation or ablation report; run `evaluate` or `ablate` first",
                    run.root.display()
                )));
            }
            if c.is_some() {
                inputs.push(EVAL_REPORT);
            }
            if a.is_some() {
                inputs.push(ABLATION_REPORT);
            }
            let mut files = vec![("reports/figures.csv".to_string(), eval::figure_csv(c.as_ref(), a.as_ref()))];
            if let Some(c) = &c {
                files.push(("reports/table1.txt".into(), eval::render_table1(c)));
            }
            if let Some(a) = &a {
                files.push(("reports/table2.txt".into(), eval::render_table2(a)));
            }
            for (rel, text) in &files {
                let p = run.path(rel);
                if p.exists() && fs::read_to_string(&p)? != *text {
                    return Err(Error::Run(format!("refusing to overwrite {}", p.display())));
                }
            }
            for (rel, text) in files {
                put(&rel, text.into_bytes(), &mut outputs)?;
            }
        }
    }
    run.record(stage, &inputs, &outputs)?;
    Ok(outputs)
}
