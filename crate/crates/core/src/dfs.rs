//! Prompt tuning on the queried set: minimizes
//! `L_C = mean CE(e_y, p_V(x)) + (1/C) sum_k ||w_k - w_k^0||^2`
//! over the context vectors only.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::FeatureVector;
use crate::diffcore::ProbVector;
use crate::error::{Error, Result};
use crate::optim::{warmup_cosine_lr, Sgd};
use crate::rng;
use crate::vilsurrogate::{self, FrozenEncoder, PromptBank, TextForward};

/// Queried sets up to this size are tuned full-batch.
pub const FULL_BATCH_LIMIT: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfsConfig {
    pub base_lr: f64,
    pub warmup_lr: f64,
    pub epochs: usize,
    /// Mini-batch size once the queried set exceeds [`FULL_BATCH_LIMIT`].
    pub batch_size: usize,
    pub momentum: f64,
    /// Drop the anchor term; only used to measure what the term buys.
    #[serde(default = "default_true")]
    pub anchor_regularizer: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl Default for DfsConfig {
    fn default() -> Self {
        Self {
            base_lr: 2e-3,
            warmup_lr: 1e-5,
            epochs: 50,
            batch_size: 64,
            momentum: 0.9,
            anchor_regularizer: true,
            seed: 0,
        }
    }
}

impl DfsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.warmup_lr > 0.0) {
            return Err(Error::InvalidParameter("prompt learning rates must be positive".into()));
        }
        if self.warmup_lr > self.base_lr {
            return Err(Error::InvalidParameter("warmup learning rate exceeds the base rate".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("epochs and batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        warmup_cosine_lr(self.base_lr, self.warmup_lr, epoch, self.epochs)
    }
}

/// The two terms of `L_C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossC {
    pub ce: f64,
    pub kg: f64,
    pub total: f64,
}

/// `L_C` and its gradient w.r.t. the flat context, from encoded features.
pub fn loss_c_with_grad(bank: &PromptBank, features: &[&[f64]], labels: &[usize], anchor_term: bool) -> (LossC, Vec<f64>) {
    let fwd = bank.text_forward();
    let (ce, mut dw) = cross_entropy_part(bank, &fwd, features, labels);
    let kg = bank.kg_loss(&fwd);
    if anchor_term {
        for (row, g) in dw.iter_mut().zip(bank.kg_embedding_grad(&fwd)) {
            row.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
    let total = if anchor_term { ce + kg } else { ce };
    (LossC { ce, kg, total }, bank.context_gradient(&fwd, &dw))
}

fn cross_entropy_part(bank: &PromptBank, fwd: &TextForward, features: &[&[f64]], labels: &[usize]) -> (f64, Vec<Vec<f64>>) {
    let c = bank.classes();
    let targets: Vec<ProbVector> = labels.iter().map(|&y| ProbVector::one_hot(c, y)).collect();
    let target_refs: Vec<&[f64]> = targets.iter().map(|t| &**t).collect();
    let weights = alloc::vec![1.0; features.len()];
    vilsurrogate::weighted_distillation(fwd, bank.tau(), features, &target_refs, &weights, features.len() as f64)
}

/// `L_C` on raw queried samples `(x, y)`.
pub fn loss_c(bank: &PromptBank, enc: &FrozenEncoder, queried: &[(FeatureVector, usize)]) -> Result<LossC> {
    if queried.is_empty() {
        return Err(Error::InvalidInput("queried set is empty".into()));
    }
    if let Some((_, y)) = queried.iter().find(|(_, y)| *y >= bank.classes()) {
        return Err(Error::Index { index: *y, len: bank.classes() });
    }
    let feats = queried.iter().map(|(x, _)| enc.encode_image(x)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
    let labels: Vec<usize> = queried.iter().map(|(_, y)| *y).collect();
    Ok(loss_c_with_grad(bank, &refs, &labels, true).0)
}

/// One logged epoch of prompt tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfsEpoch {
    pub epoch: usize,
    pub lr: f64,
    pub ce: f64,
    pub kg: f64,
}

#[derive(Debug, Clone)]
pub struct DfsOutcome {
    pub bank: PromptBank,
    pub history: Vec<DfsEpoch>,
}

/// Momentum SGD on the context vectors under the warm-up + cosine schedule.
pub fn tune_prompts(
    bank: PromptBank,
    enc: &FrozenEncoder,
    queried: &[(FeatureVector, usize)],
    cfg: &DfsConfig,
) -> Result<DfsOutcome> {
    cfg.validate()?;
    loss_c(&bank, enc, queried)?;
    let feats = queried.iter().map(|(x, _)| enc.encode_image(x)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = queried.iter().map(|(_, y)| *y).collect();
    tune_prompts_on_features(bank, &feats, &labels, cfg)
}

/// [`tune_prompts`] on pre-encoded features.
pub fn tune_prompts_on_features(
    mut bank: PromptBank,
    features: &[FeatureVector],
    labels: &[usize],
    cfg: &DfsConfig,
) -> Result<DfsOutcome> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::InvalidInput("queried set is empty".into()));
    }
    let batch = if features.len() <= FULL_BATCH_LIMIT { features.len() } else { cfg.batch_size };
    let mut opt = Sgd::new(bank.trainable_params(), cfg.momentum, 0.0);
    let mut rng = rng::seeded(cfg.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        if batch < features.len() {
            order.shuffle(&mut rng);
        }
        let (mut ce_sum, mut kg_sum, mut steps) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(batch) {
            let refs: Vec<&[f64]> = chunk.iter().map(|&i| features[i].as_slice()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grad) = loss_c_with_grad(&bank, &refs, &ys, cfg.anchor_regularizer);
            if !loss.total.is_finite() {
                return Err(Error::Numeric(format!("prompt tuning loss is not finite in epoch {epoch}")));
            }
            ce_sum += loss.ce;
            kg_sum += loss.kg;
            steps += 1;
            opt.step(bank.context_mut(), &grad, lr);
        }
        history.push(DfsEpoch { epoch, lr, ce: ce_sum / steps as f64, kg: kg_sum / steps as f64 });
    }
    Ok(DfsOutcome { bank, history })
}
