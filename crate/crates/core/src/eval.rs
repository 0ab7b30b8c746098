//! Ranking, fluency and satisfaction metrics, policy evaluation against
//! simulated users, and the comparison and ablation tables.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dialogue::render_utterance;
use crate::error::{Error, Result};
use crate::parallel;
use crate::recommender::{simulate_dialogue, Recommender};
use crate::rng;
use crate::signals::{extract_features, FeatureVector};
use crate::user_sim::relevant_items;
use crate::world::World;

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::invalid("k must be positive"))
    } else {
        Ok(())
    }
}

/// 1 when any relevant item is among the first `k` of `ranked`.
pub fn hr_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Result<f64> {
    check_k(k)?;
    if relevant.is_empty() {
        return Err(Error::EmptyInput("relevant set"));
    }
    let rel: HashSet<usize> = relevant.iter().copied().collect();
    Ok(if ranked.iter().take(k).any(|i| rel.contains(i)) { 1.0 } else { 0.0 })
}

/// Binary-relevance NDCG truncated at `k`.
pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Result<f64> {
    check_k(k)?;
    if relevant.is_empty() {
        return Err(Error::EmptyInput("relevant set"));
    }
    let rel: HashSet<usize> = relevant.iter().copied().collect();
    let disc = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, item)| rel.contains(item))
        .map(|(i, _)| disc(i))
        .sum();
    let idcg: f64 = (0..k.min(rel.len())).map(disc).sum();
    Ok(dcg / idcg)
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(|t| t.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU-4 with uniform weights. Zero match counts for n >= 2 are
/// smoothed to (0 + 1) / (total + 1); non-zero counts are left raw.
pub fn bleu4<S: AsRef<str>>(candidate: &[S], references: &[Vec<S>]) -> Result<f64> {
    if candidate.is_empty() {
        return Err(Error::EmptyInput("bleu candidate"));
    }
    if references.is_empty() {
        return Err(Error::EmptyInput("bleu references"));
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = ngram_counts(candidate, n);
        let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
        for r in references {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let total: usize = cand.values().sum();
        let matched: usize = cand.iter().map(|(g, c)| (*c).min(*max_ref.get(g).unwrap_or(&0))).sum();
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n >= 2 {
            1.0 / (total as f64 + 1.0)
        } else {
            return Ok(0.0);
        };
        log_sum += p.ln() / 4.0;
    }
    let c = candidate.len() as f64;
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|len| ((*len as i64 - candidate.len() as i64).abs(), *len))
        .unwrap() as f64;
    let bp = (1.0 - r / c).min(0.0).exp();
    Ok(bp * log_sum.exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionWeights {
    pub w_eng: f64,
    pub w_sent: f64,
}

impl Default for SatisfactionWeights {
    fn default() -> Self {
        Self { w_eng: 0.5, w_sent: 0.5 }
    }
}

impl SatisfactionWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_eng < 0.0 || self.w_sent < 0.0 || (self.w_eng + self.w_sent - 1.0).abs() > 1e-9 {
            return Err(Error::Config("eval.w_eng and eval.w_sent must be non-negative and sum to 1".into()));
        }
        Ok(())
    }
}

/// `w_eng * mean engagement + w_sent * mean (shift + 1) / 2`.
pub fn satisfaction_score(steps: &[FeatureVector], w: SatisfactionWeights) -> Result<f64> {
    w.validate()?;
    if steps.is_empty() {
        return Err(Error::EmptyInput("satisfaction needs at least one step"));
    }
    let n = steps.len() as f64;
    let eng = steps.iter().map(|f| f.engagement).sum::<f64>() / n;
    let sent = steps.iter().map(|f| (f.sentiment_shift + 1.0) / 2.0).sum::<f64>() / n;
    Ok(w.w_eng * eng + w.w_sent * sent)
}

pub fn gain_pct(baseline: f64, candidate: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::UndefinedGain);
    }
    Ok(100.0 * (candidate - baseline) / baseline)
}

/// Percentage change of the satisfaction score relative to the baseline sessions.
pub fn satisfaction_gain(baseline: &[FeatureVector], candidate: &[FeatureVector], w: SatisfactionWeights) -> Result<f64> {
    gain_pct(satisfaction_score(baseline, w)?, satisfaction_score(candidate, w)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_dialogues: usize,
    /// Seeds of the evaluation user populations.
    pub seeds: Vec<u64>,
    pub k: usize,
    pub w_eng: f64,
    pub w_sent: f64,
    /// Whole-pipeline seeds for the benchmark and ablation runs.
    pub benchmark_seeds: Vec<u64>,
    /// Evaluate the policy after every outer PPO epoch.
    pub track_training: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_dialogues: 200,
            seeds: vec![101, 102, 103],
            k: 5,
            w_eng: 0.5,
            w_sent: 0.5,
            benchmark_seeds: vec![1, 2, 3],
            track_training: true,
        }
    }
}

impl EvalConfig {
    pub fn weights(&self) -> SatisfactionWeights {
        SatisfactionWeights {
            w_eng: self.w_eng,
            w_sent: self.w_sent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_dialogues == 0 {
            return Err(Error::Config("eval.n_dialogues must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("eval.seeds must not be empty".into()));
        }
        if self.benchmark_seeds.is_empty() {
            return Err(Error::Config("eval.benchmark_seeds must not be empty".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("eval.k must be positive".into()));
        }
        self.weights().validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hr_at_k: f64,
    pub ndcg_at_k: f64,
    pub bleu_4: f64,
    pub satisfaction: f64,
}

impl Metrics {
    fn map(items: &[&Metrics], f: impl Fn(&[f64]) -> f64) -> Metrics {
        let col = |g: fn(&Metrics) -> f64| f(&items.iter().map(|m| g(m)).collect::<Vec<_>>());
        Metrics {
            hr_at_k: col(|m| m.hr_at_k),
            ndcg_at_k: col(|m| m.ndcg_at_k),
            bleu_4: col(|m| m.bleu_4),
            satisfaction: col(|m| m.satisfaction),
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEval {
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub acceptance_rate: f64,
    pub turns: usize,
    /// Turns whose user had a non-empty relevant set.
    pub scored_turns: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub recommender: String,
    pub k: usize,
    pub per_seed: Vec<SeedEval>,
    pub mean: Metrics,
    pub std: Metrics,
}

impl EvalReport {
    pub fn seed_count(&self) -> usize {
        self.per_seed.len()
    }

    pub fn hr_values(&self) -> Vec<f64> {
        self.per_seed.iter().map(|s| s.metrics.hr_at_k).collect()
    }
}

struct DialogueScore {
    hits: Vec<(f64, f64)>,
    bleu: Vec<f64>,
    features: Vec<FeatureVector>,
    accepted: usize,
}

/// Rolls `cfg.n_dialogues` fresh users per seed with `agent` and scores every
/// agent turn. Turns of users with no relevant item are excluded from HR and NDCG.
pub fn evaluate_recommender(world: &World, agent: &dyn Recommender, cfg: &EvalConfig, max_turns: u32) -> Result<EvalReport> {
    cfg.validate()?;
    let refs_ids = world.templates.reference_ids();
    if refs_ids.is_empty() {
        return Err(Error::invalid("template set has no reference templates"));
    }
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let scores = parallel::map_indexed(cfg.n_dialogues, |i| {
            let mut r = rng::stream(seed, rng::purpose::EVAL, i as u64);
            let run = simulate_dialogue(world, agent, i as u64, max_turns, &mut r)?;
            let relevant = relevant_items(&run.user.profile, world)?;
            let mut s = DialogueScore {
                hits: Vec::new(),
                bleu: Vec::new(),
                features: Vec::new(),
                accepted: 0,
            };
            for ex in &run.exchanges {
                let rec = &ex.recommendation;
                if !relevant.is_empty() {
                    s.hits.push((hr_at_k(&rec.ranking, &relevant, cfg.k)?, ndcg_at_k(&rec.ranking, &relevant, cfg.k)?));
                }
                let mut references = Vec::with_capacity(refs_ids.len());
                for &t in &refs_ids {
                    let mut a = rec.action;
                    a.template_id = t;
                    references.push(render_utterance(a, &world.catalog, &world.templates, ex.agent.turn_index)?.tokens);
                }
                s.bleu.push(bleu4(&ex.agent.tokens, &references)?);
                s.features.push(extract_features(
                    &ex.state.active_query_tokens,
                    rec.action.item_id,
                    &ex.feedback,
                    &world.catalog,
                    &world.table,
                    world.sim.dwell_max,
                )?);
                s.accepted += ex.feedback.accepted as usize;
            }
            Ok(s)
        })?;
        let hits: Vec<(f64, f64)> = scores.iter().flat_map(|s| s.hits.iter().copied()).collect();
        let bleu: Vec<f64> = scores.iter().flat_map(|s| s.bleu.iter().copied()).collect();
        let features: Vec<FeatureVector> = scores.iter().flat_map(|s| s.features.iter().copied()).collect();
        let accepted: usize = scores.iter().map(|s| s.accepted).sum();
        let (hr, nd) = if hits.is_empty() {
            (0.0, 0.0)
        } else {
            (
                mean(&hits.iter().map(|h| h.0).collect::<Vec<_>>()),
                mean(&hits.iter().map(|h| h.1).collect::<Vec<_>>()),
            )
        };
        per_seed.push(SeedEval {
            seed,
            metrics: Metrics {
                hr_at_k: hr,
                ndcg_at_k: nd,
                bleu_4: mean(&bleu),
                satisfaction: satisfaction_score(&features, cfg.weights())?,
            },
            acceptance_rate: accepted as f64 / bleu.len() as f64,
            turns: bleu.len(),
            scored_turns: hits.len(),
        });
    }
    Ok(summarize(agent.name(), cfg.k, per_seed))
}

pub fn summarize(recommender: &str, k: usize, per_seed: Vec<SeedEval>) -> EvalReport {
    let ms: Vec<&Metrics> = per_seed.iter().map(|s| &s.metrics).collect();
    EvalReport {
        schema_version: 1,
        recommender: recommender.to_string(),
        k,
        mean: Metrics::map(&ms, mean),
        std: Metrics::map(&ms, std_dev),
        per_seed,
    }
}

/// A tuned policy against its supervised baseline on the same users.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: EvalReport,
    pub tuned: EvalReport,
    pub gain_per_seed: Vec<f64>,
    pub satisfaction_gain_pct: f64,
}

impl Comparison {
    pub fn new(baseline: EvalReport, tuned: EvalReport) -> Result<Self> {
        if baseline.per_seed.len() != tuned.per_seed.len() {
            return Err(Error::invalid("baseline and tuned reports cover different seeds"));
        }
        let mut gains = Vec::with_capacity(baseline.per_seed.len());
        for (b, t) in baseline.per_seed.iter().zip(&tuned.per_seed) {
            gains.push(gain_pct(b.metrics.satisfaction, t.metrics.satisfaction)?);
        }
        Ok(Self {
            satisfaction_gain_pct: mean(&gains),
            gain_per_seed: gains,
            baseline,
            tuned,
        })
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// Model | HR@K | NDCG@K | BLEU-4 | satisfaction gain, scaled by 100.
pub fn render_table1(c: &Comparison) -> String {
    let k = c.baseline.k;
    let rows = [
        ("Supervised (pretrained)", &c.baseline, "0%".to_string()),
        ("RLHF (PPO)", &c.tuned, format!("{:+.1}%", c.satisfaction_gain_pct)),
    ];
    let mut s = String::new();
    let _ = writeln!(s, "{:<26} {:>7} {:>8} {:>7} {:>18}", "Model", format!("HR@{k}"), format!("NDCG@{k}"), "BLEU-4", "Satisfaction Gain");
    for (name, r, g) in rows {
        let _ = writeln!(
            s,
            "{:<26} {:>7} {:>8} {:>7} {:>18}",
            name,
            pct(r.mean.hr_at_k),
            pct(r.mean.ndcg_at_k),
            pct(r.mean.bleu_4),
            g
        );
    }
    let _ = writeln!(
        s,
        "seeds: {}  HR@{k} std (x100): supervised {:.2}, RLHF {:.2}",
        c.tuned.seed_count(),
        100.0 * c.baseline.std.hr_at_k,
        100.0 * c.tuned.std.hr_at_k
    );
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub mode: String,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub hr_at_k: f64,
    pub ndcg_at_k: f64,
    pub bleu_4: f64,
    pub satisfaction_gain_pct: f64,
    pub hr_per_seed: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema_version: u32,
    pub k: usize,
    pub rows: Vec<AblationRow>,
}

pub fn render_table2(a: &AblationReport) -> String {
    let k = a.k;
    let mut s = String::new();
    let _ = writeln!(s, "{:<46} {:>7} {:>8} {:>7} {:>20}", "Reward Configuration", format!("HR@{k}"), format!("NDCG@{k}"), "BLEU-4", "Satisfaction Gain %");
    for r in &a.rows {
        let _ = writeln!(
            s,
            "{:<46} {:>7} {:>8} {:>7} {:>20}",
            r.label,
            pct(r.hr_at_k),
            pct(r.ndcg_at_k),
            pct(r.bleu_4),
            format!("{:+.1}", r.satisfaction_gain_pct)
        );
    }
    s
}

/// `series,x,y,seed` rows for the hit-rate, BLEU and ablation figures.
pub fn figure_csv(comparison: Option<&Comparison>, ablation: Option<&AblationReport>) -> String {
    let mut s = String::from("series,x,y,seed\n");
    if let Some(c) = comparison {
        for (label, r) in [("supervised", &c.baseline), ("rlhf", &c.tuned)] {
            for p in &r.per_seed {
                let _ = writeln!(s, "fig1_hit_rate_at_{},{label},{},{}", r.k, 100.0 * p.metrics.hr_at_k, p.seed);
            }
        }
        for (label, r) in [("supervised", &c.baseline), ("rlhf", &c.tuned)] {
            for p in &r.per_seed {
                let _ = writeln!(s, "fig2_bleu_4,{label},{},{}", 100.0 * p.metrics.bleu_4, p.seed);
            }
        }
    }
    if let Some(a) = ablation {
        for row in &a.rows {
            for (hr, seed) in row.hr_per_seed.iter().zip(&row.seeds) {
                let _ = writeln!(s, "fig3_ablation_hit_rate_at_{},{},{},{seed}", a.k, row.mode, 100.0 * hr);
            }
        }
    }
    s
}
