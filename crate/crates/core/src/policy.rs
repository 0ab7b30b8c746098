//! Recommendation policy and value function with hand-written backpropagation.
//!
//! ```text
//! x = [mean window embedding, turn / max_turns, window fill]
//! h = tanh(W_enc x + b_enc)
//! item logits     = W_item h + b_item      -> softmax
//! template logits = W_tmpl h + b_tmpl      -> softmax
//! value           = w_val . h + b_val
//! ```
//!
//! `pi(a | s) = pi_item(item | s) * pi_template(template | s)`.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::{Action, DialogueState};
use crate::embedding::{embed_tokens, EmbeddingTable};
use crate::error::{Error, Result};
use crate::optim::{self, OptimArgs};
use crate::rng::{self, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_items: usize,
    pub n_templates: usize,
}

impl PolicyShape {
    pub fn new(embedding_dim: usize, hidden_dim: usize, n_items: usize, n_templates: usize) -> Self {
        Self {
            input_dim: embedding_dim + 2,
            hidden_dim,
            n_items,
            n_templates,
        }
    }

    fn sizes(&self) -> [usize; 8] {
        let (i, h, n, t) = (self.input_dim, self.hidden_dim, self.n_items, self.n_templates);
        [h * i, h, n * h, n, t * h, t, h, 1]
    }

    fn range(&self, idx: usize) -> Range<usize> {
        let sizes = self.sizes();
        let start: usize = sizes[..idx].iter().sum();
        start..start + sizes[idx]
    }

    pub fn param_count(&self) -> usize {
        self.sizes().iter().sum()
    }
}

const ENC_W: usize = 0;
const ENC_B: usize = 1;
const ITEM_W: usize = 2;
const ITEM_B: usize = 3;
const TMPL_W: usize = 4;
const TMPL_B: usize = 5;
const VAL_W: usize = 6;
const VAL_B: usize = 7;

/// All learnable weights in one flat buffer. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    shape: PolicyShape,
    data: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.param_count()],
        }
    }

    /// Uniform fan-in scaled init for the encoder, small heads, zero biases.
    pub fn init(shape: PolicyShape, seed: u64) -> Self {
        let mut p = Self::zeros(shape);
        let mut r = rng::stream(seed, rng::purpose::POLICY_INIT, 0);
        let enc = (1.0 / shape.input_dim as f64).sqrt() * 3f64.sqrt();
        for w in p.slice_mut(ENC_W) {
            *w = r.random_range(-enc..enc);
        }
        let head = 0.1 / (shape.hidden_dim as f64).sqrt();
        for idx in [ITEM_W, TMPL_W, VAL_W] {
            for w in p.slice_mut(idx) {
                *w = r.random_range(-head..head);
            }
        }
        p
    }

    pub fn from_flat(shape: PolicyShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.param_count() {
            return Err(Error::DimensionMismatch {
                expected: shape.param_count(),
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> PolicyShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn slice(&self, idx: usize) -> &[f64] {
        &self.data[self.shape.range(idx)]
    }

    fn slice_mut(&mut self, idx: usize) -> &mut [f64] {
        let r = self.shape.range(idx);
        &mut self.data[r]
    }

    pub fn item_bias_mut(&mut self) -> &mut [f64] {
        self.slice_mut(ITEM_B)
    }

    pub fn template_bias_mut(&mut self) -> &mut [f64] {
        self.slice_mut(TMPL_B)
    }

    pub fn value_bias_mut(&mut self) -> &mut f64 {
        &mut self.slice_mut(VAL_B)[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub item_probs: Vec<f64>,
    pub template_probs: Vec<f64>,
    pub value: f64,
}

impl PolicyOutput {
    /// Items by descending probability; ties keep catalog order.
    pub fn ranking(&self) -> Vec<usize> {
        ranking(&self.item_probs)
    }

    pub fn greedy_action(&self) -> Action {
        Action::new(argmax(&self.item_probs), argmax(&self.template_probs))
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.item_probs) + entropy(&self.template_probs)
    }
}

/// Activations saved by [`forward`] for [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
}

/// Upstream gradients of a scalar loss with respect to the network outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputGrads {
    pub item_logits: Vec<f64>,
    pub template_logits: Vec<f64>,
    pub value: f64,
}

impl OutputGrads {
    pub fn zeros(shape: PolicyShape) -> Self {
        Self {
            item_logits: vec![0.0; shape.n_items],
            template_logits: vec![0.0; shape.n_templates],
            value: 0.0,
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// d entropy / d logits for a softmax distribution.
pub fn entropy_logit_grad(probs: &[f64]) -> Vec<f64> {
    let h = entropy(probs);
    probs
        .iter()
        .map(|&p| if p > 0.0 { -p * (p.ln() + h) } else { 0.0 })
        .collect()
}

/// d(-ln p_target) / d logits = probs - onehot(target).
pub fn cross_entropy_logit_grad(probs: &[f64], target: usize) -> Vec<f64> {
    let mut g = probs.to_vec();
    g[target] -= 1.0;
    g
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Pooled window embedding plus turn-position features.
pub fn encode_state(state: &DialogueState, table: &EmbeddingTable, max_turns: u32) -> Result<Vec<f64>> {
    let dim = table.dim();
    let mut x = vec![0.0; dim + 2];
    if !state.window.is_empty() {
        for utt in &state.window {
            let e = embed_tokens(&utt.tokens, table)?;
            x[..dim].iter_mut().zip(&e).for_each(|(a, v)| *a += v);
        }
        let n = state.window.len() as f64;
        x[..dim].iter_mut().for_each(|a| *a /= n);
    }
    x[dim] = state.turn_index as f64 / max_turns.max(1) as f64;
    x[dim + 1] = state.fill_fraction();
    Ok(x)
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, bias)| bias + w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

pub fn forward(params: &PolicyParams, state_vec: &[f64]) -> Result<(PolicyOutput, ForwardCache)> {
    let shape = params.shape;
    if state_vec.len() != shape.input_dim {
        return Err(Error::DimensionMismatch {
            expected: shape.input_dim,
            got: state_vec.len(),
        });
    }
    let hidden: Vec<f64> = affine(params.slice(ENC_W), params.slice(ENC_B), state_vec)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let item_logits = affine(params.slice(ITEM_W), params.slice(ITEM_B), &hidden);
    let template_logits = affine(params.slice(TMPL_W), params.slice(TMPL_B), &hidden);
    let value = affine(params.slice(VAL_W), params.slice(VAL_B), &hidden)[0];
    let out = PolicyOutput {
        item_probs: softmax(&item_logits),
        template_probs: softmax(&template_logits),
        value,
    };
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !(finite(&hidden) && finite(&out.item_probs) && finite(&out.template_probs) && value.is_finite()) {
        return Err(Error::NonFiniteForward);
    }
    Ok((
        out,
        ForwardCache {
            input: state_vec.to_vec(),
            hidden,
        },
    ))
}

/// Accumulates parameter gradients into `acc` given output gradients.
pub fn backward(params: &PolicyParams, cache: &ForwardCache, grads: &OutputGrads, acc: &mut PolicyParams) -> Result<()> {
    let shape = params.shape;
    if acc.shape != shape {
        return Err(Error::invalid("gradient buffer shape differs from parameters"));
    }
    let check = |expected: usize, got: usize| {
        if expected != got {
            Err(Error::DimensionMismatch { expected, got })
        } else {
            Ok(())
        }
    };
    check(shape.input_dim, cache.input.len())?;
    check(shape.hidden_dim, cache.hidden.len())?;
    check(shape.n_items, grads.item_logits.len())?;
    check(shape.n_templates, grads.template_logits.len())?;

    let h = &cache.hidden;
    let hd = shape.hidden_dim;
    let mut dh = vec![0.0; hd];

    let mut head = |w_idx: usize, b_idx: usize, g: &[f64], acc: &mut PolicyParams| {
        let w = params.slice(w_idx);
        {
            let gw = acc.slice_mut(w_idx);
            for (r, gr) in g.iter().enumerate() {
                if *gr == 0.0 {
                    continue;
                }
                let row = &mut gw[r * hd..(r + 1) * hd];
                row.iter_mut().zip(h).for_each(|(a, hv)| *a += gr * hv);
            }
        }
        acc.slice_mut(b_idx).iter_mut().zip(g).for_each(|(a, gr)| *a += gr);
        for (r, gr) in g.iter().enumerate() {
            if *gr == 0.0 {
                continue;
            }
            let row = &w[r * hd..(r + 1) * hd];
            dh.iter_mut().zip(row).for_each(|(d, wv)| *d += gr * wv);
        }
    };
    head(ITEM_W, ITEM_B, &grads.item_logits, acc);
    head(TMPL_W, TMPL_B, &grads.template_logits, acc);
    head(VAL_W, VAL_B, std::slice::from_ref(&grads.value), acc);

    let x = &cache.input;
    let cols = x.len();
    let dpre: Vec<f64> = dh.iter().zip(h).map(|(d, hv)| d * (1.0 - hv * hv)).collect();
    {
        let gw = acc.slice_mut(ENC_W);
        for (r, dp) in dpre.iter().enumerate() {
            if *dp == 0.0 {
                continue;
            }
            gw[r * cols..(r + 1) * cols].iter_mut().zip(x).for_each(|(a, xv)| *a += dp * xv);
        }
    }
    acc.slice_mut(ENC_B).iter_mut().zip(&dpre).for_each(|(a, d)| *a += d);
    Ok(())
}

pub fn log_prob(output: &PolicyOutput, action: Action) -> f64 {
    output.item_probs[action.item_id].ln() + output.template_probs[action.template_id].ln()
}

fn sample_index(probs: &[f64], rng: &mut StreamRng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    // rounding left u above the total mass: take the last index with mass
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// Independent inverse-CDF draws for item and template.
pub fn sample_action(output: &PolicyOutput, rng: &mut StreamRng) -> (Action, f64) {
    let item = sample_index(&output.item_probs, rng);
    let template = sample_index(&output.template_probs, rng);
    let action = Action::new(item, template);
    (action, log_prob(output, action))
}

/// One supervised example: encoded state and the logged action.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainExample {
    pub encoded: Vec<f64>,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub optimizer: String,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            learning_rate: 3e-3,
            momentum: 0.9,
            batch_size: 32,
            optimizer: "adam".into(),
        }
    }
}

/// Mean negative log-likelihood of the logged actions and its gradient.
pub fn imitation_loss(params: &PolicyParams, batch: &[&PretrainExample]) -> Result<(f64, PolicyParams)> {
    let mut grad = PolicyParams::zeros(params.shape);
    let mut loss = 0.0;
    let n = batch.len() as f64;
    for ex in batch {
        let (out, cache) = forward(params, &ex.encoded)?;
        loss -= log_prob(&out, ex.action);
        let mut g = OutputGrads {
            item_logits: cross_entropy_logit_grad(&out.item_probs, ex.action.item_id),
            template_logits: cross_entropy_logit_grad(&out.template_probs, ex.action.template_id),
            value: 0.0,
        };
        g.item_logits.iter_mut().for_each(|v| *v /= n);
        g.template_logits.iter_mut().for_each(|v| *v /= n);
        backward(params, &cache, &g, &mut grad)?;
    }
    Ok((loss / n, grad))
}

/// Next-action imitation on logged dialogues. Returns the per-epoch mean loss.
pub fn pretrain(
    params: &PolicyParams,
    examples: &[PretrainExample],
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<(PolicyParams, Vec<f64>)> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("corpus has no agent turns"));
    }
    for ex in examples {
        ex.action.validate(params.shape.n_items, params.shape.n_templates)?;
    }
    let mut params = params.clone();
    let mut opt = optim::build(
        &cfg.optimizer,
        &OptimArgs {
            lr: cfg.learning_rate,
            momentum: cfg.momentum,
            n_params: params.shape.param_count(),
        },
    )?;
    let mut r = rng::stream(seed, rng::purpose::PRETRAIN, 0);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&PretrainExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grad) = imitation_loss(&params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::AbortUpdate("pretraining loss".into()));
            }
            total += loss * batch.len() as f64;
            opt.step(params.as_mut_slice(), grad.as_slice());
        }
        curve.push(total / examples.len() as f64);
    }
    Ok((params, curve))
}
