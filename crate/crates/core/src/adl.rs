//! Alternating distillation between the target model `T` and the prompted
//! surrogate `V`.
//!
//! Both directions share one teacher rule: a queried sample is taught by its
//! oracle label with weight `beta_q`, anything else by the other model's
//! temperature-scaled prediction with weight `beta`. `T` learns from the
//! surrogate's hard pseudo-labels (temperature `tau_hard`, effectively zero)
//! plus entropy and diversity terms; `V` learns from `T`'s soft predictions on
//! its most confident samples per class plus the anchor term.
//!
//! Distillation losses are weighted cross-entropies `W * H(teacher, student)`
//! averaged over the samples in play, so every objective is bounded below.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::FeatureVector;
use crate::diffcore::{self, neg_entropy_raw, ProbVector};
use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::models::ClassifierModel;
use crate::optim::{cosine_lr, Sgd};
use crate::rng;
use crate::vilsurrogate::{self, FrozenEncoder, PromptBank};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdlConfig {
    pub beta_q: f64,
    pub beta: f64,
    pub top_n: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub target_lr: f64,
    pub target_momentum: f64,
    pub target_weight_decay: f64,
    pub prompt_lr: f64,
    pub prompt_momentum: f64,
    pub tau_hard: f64,
    pub seed: u64,
}

impl Default for AdlConfig {
    fn default() -> Self {
        Self {
            beta_q: 3.0,
            beta: 0.3,
            top_n: 16,
            epochs: 30,
            batch_size: 64,
            target_lr: 1e-2,
            target_momentum: 0.9,
            target_weight_decay: 1e-3,
            prompt_lr: 2e-3,
            prompt_momentum: 0.9,
            tau_hard: 1e-8,
            seed: 0,
        }
    }
}

impl AdlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta_q >= self.beta) {
            return Err(Error::InvalidParameter(format!(
                "need beta_q >= beta > 0, got beta_q = {}, beta = {}",
                self.beta_q, self.beta
            )));
        }
        if self.top_n == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("top_n, epochs and batch size must be at least 1".into()));
        }
        if !(self.target_lr > 0.0 && self.prompt_lr > 0.0) {
            return Err(Error::InvalidParameter("learning rates must be positive".into()));
        }
        if !(self.tau_hard > 0.0 && self.tau_hard <= 1e-6) {
            return Err(Error::InvalidParameter(format!("tau_hard must lie in (0, 1e-6], got {}", self.tau_hard)));
        }
        if !(0.0..1.0).contains(&self.target_momentum) || !(0.0..1.0).contains(&self.prompt_momentum) {
            return Err(Error::InvalidParameter("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Teacher distribution and sample weight for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSignal {
    pub distribution: ProbVector,
    pub weight: f64,
}

/// The model acting as teacher `B`.
#[derive(Debug, Clone, Copy)]
pub enum TeacherModel<'a> {
    Target(&'a ClassifierModel),
    Surrogate { encoder: &'a FrozenEncoder, bank: &'a PromptBank },
}

impl TeacherModel<'_> {
    /// `B(x)`: classifier logits, or similarities over the surrogate temperature.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            TeacherModel::Target(m) => m.logits(x),
            TeacherModel::Surrogate { encoder, bank } => {
                let z = encoder.encode_image(x)?;
                Ok(vilsurrogate::similarity_logits(&bank.text_embeddings(), &z, bank.tau()))
            }
        }
    }
}

fn teacher_from_logits(logits: &[f64], label: Option<usize>, tau_b: f64, cfg: &AdlConfig) -> TeacherSignal {
    match label {
        Some(y) => TeacherSignal { distribution: ProbVector::one_hot(logits.len(), y), weight: cfg.beta_q },
        None => {
            let mut p = vec![0.0; logits.len()];
            diffcore::softmax_into(logits, tau_b, &mut p);
            TeacherSignal { distribution: ProbVector::from_normalized(p), weight: cfg.beta }
        }
    }
}

/// `(e_y, beta_q)` for a queried sample, `(softmax(B(x) / tau_b), beta)` otherwise.
pub fn teacher_signal(
    x: &[f64],
    is_queried: bool,
    oracle_label: Option<usize>,
    teacher: &TeacherModel<'_>,
    tau_b: f64,
    cfg: &AdlConfig,
) -> Result<TeacherSignal> {
    if !(tau_b > 0.0) {
        return Err(Error::InvalidParameter("teacher temperature must be positive".into()));
    }
    let logits = teacher.logits(x)?;
    match (is_queried, oracle_label) {
        (true, None) => Err(Error::Contract("queried sample has no oracle label".into())),
        (true, Some(y)) if y >= logits.len() => Err(Error::Index { index: y, len: logits.len() }),
        (true, Some(y)) => Ok(teacher_from_logits(&logits, Some(y), tau_b, cfg)),
        (false, _) => Ok(teacher_from_logits(&logits, None, tau_b, cfg)),
    }
}

/// Top-`n` most confident samples per predicted class, ascending index order.
pub fn select_top_from_probs(probs: &[Vec<f64>], top_n: usize) -> Vec<usize> {
    let mut by_class: BTreeMap<usize, Vec<(f64, usize)>> = BTreeMap::new();
    for (i, p) in probs.iter().enumerate() {
        let k = math::argmax(p);
        by_class.entry(k).or_default().push((p[k], i));
    }
    let mut chosen = Vec::new();
    for members in by_class.values_mut() {
        members.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        chosen.extend(members.iter().take(top_n).map(|(_, i)| *i));
    }
    chosen.sort_unstable();
    chosen
}

/// `X_top` under the target model's temperature-1 predictions.
pub fn select_top_confident(target: &ClassifierModel, pool: &[FeatureVector], top_n: usize) -> Result<Vec<usize>> {
    let probs = pool.iter().map(|x| target.predict(x, 1.0).map(ProbVector::into_inner)).collect::<Result<Vec<_>>>()?;
    Ok(select_top_from_probs(&probs, top_n))
}

/// Terms of `L_T` on one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetLoss {
    pub dist: f64,
    pub ent: f64,
    pub div: f64,
    pub total: f64,
}

/// Terms of `L_V` on one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SurrogateLoss {
    pub dist: f64,
    pub kg: f64,
    pub total: f64,
}

/// `L_T = mean W * H(teacher, p_T) + mean H(p_T) + sum_k pbar_k log pbar_k` on
/// logits, with `dL/dlogits`. Samples without a teacher add nothing to the
/// distillation sum but still count in its mean.
pub fn target_objective_on_logits(logits: &[Vec<f64>], teachers: &[Option<&TeacherSignal>]) -> (TargetLoss, Vec<Vec<f64>>) {
    let n = logits.len();
    let nf = n as f64;
    let c = logits.first().map_or(0, |z| z.len());
    let probs: Vec<Vec<f64>> = logits
        .iter()
        .map(|z| {
            let mut p = vec![0.0; c];
            diffcore::softmax_into(z, 1.0, &mut p);
            p
        })
        .collect();
    let mut mean_p = vec![0.0; c];
    for p in &probs {
        mean_p.iter_mut().zip(p).for_each(|(m, v)| *m += v / nf);
    }
    let log_mean: Vec<f64> = mean_p.iter().map(|v| diffcore::clamped_ln(*v)).collect();

    let mut loss = TargetLoss::default();
    let mut grads = Vec::with_capacity(n);
    for (p, teacher) in probs.iter().zip(teachers) {
        let mut g = vec![0.0; c];
        if let Some(t) = teacher {
            loss.dist += t.weight * diffcore::cross_entropy_raw(&t.distribution, p);
            for k in 0..c {
                g[k] += t.weight * (p[k] - t.distribution[k]) / nf;
            }
        }
        let h = -neg_entropy_raw(p);
        loss.ent += h;
        // dH/dz_j = -p_j (log p_j + H); dL_div/dz_j = p_j (log pbar_j - sum_k p_k log pbar_k) / n
        let mixed: f64 = p.iter().zip(&log_mean).map(|(a, b)| a * b).sum();
        for k in 0..c {
            g[k] += -p[k] * (diffcore::clamped_ln(p[k]) + h) / nf;
            g[k] += p[k] * (log_mean[k] - mixed) / nf;
        }
        grads.push(g);
    }
    loss.dist /= nf;
    loss.ent /= nf;
    loss.div = neg_entropy_raw(&mean_p);
    loss.total = loss.dist + loss.ent + loss.div;
    (loss, grads)
}

/// `L_T` and its gradient w.r.t. the target parameters.
pub fn loss_t_with_grad(target: &ClassifierModel, xs: &[&[f64]], teachers: &[Option<&TeacherSignal>]) -> (TargetLoss, Vec<f64>) {
    let mut terms = TargetLoss::default();
    let (_, grad) = target.batch_objective(xs, |logits| {
        let (l, g) = target_objective_on_logits(logits, teachers);
        terms = l;
        (l.total, g)
    });
    (terms, grad)
}

/// `L_V = mean W * H(teacher, p_V) + L_kg` on encoded features, with the
/// gradient w.r.t. the flat context.
pub fn loss_v_with_grad(bank: &PromptBank, features: &[&[f64]], teachers: &[&TeacherSignal]) -> (SurrogateLoss, Vec<f64>) {
    let fwd = bank.text_forward();
    let targets: Vec<&[f64]> = teachers.iter().map(|t| &*t.distribution).collect();
    let weights: Vec<f64> = teachers.iter().map(|t| t.weight).collect();
    let (dist, mut dw) =
        vilsurrogate::weighted_distillation(&fwd, bank.tau(), features, &targets, &weights, features.len() as f64);
    let kg = bank.kg_loss(&fwd);
    for (row, g) in dw.iter_mut().zip(bank.kg_embedding_grad(&fwd)) {
        row.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    (SurrogateLoss { dist, kg, total: dist + kg }, bank.context_gradient(&fwd, &dw))
}

fn queried_map(queried: &[(usize, usize)], n: usize, classes: usize) -> Result<BTreeMap<usize, usize>> {
    let mut map = BTreeMap::new();
    for &(i, y) in queried {
        if i >= n {
            return Err(Error::Index { index: i, len: n });
        }
        if y >= classes {
            return Err(Error::Index { index: y, len: classes });
        }
        if map.insert(i, y).is_some() {
            return Err(Error::DuplicateQuery(i));
        }
    }
    Ok(map)
}

/// `L_dist^{V<-T}` over `X_top` union `T_q`, teachers from `T` at temperature 1.
pub fn loss_dist_v_from_t(
    bank: &PromptBank,
    enc: &FrozenEncoder,
    target: &ClassifierModel,
    pool: &[FeatureVector],
    x_top: &[usize],
    queried: &[(usize, usize)],
    cfg: &AdlConfig,
) -> Result<f64> {
    let labels = queried_map(queried, pool.len(), bank.classes())?;
    let mut members: Vec<usize> = x_top.iter().copied().chain(labels.keys().copied()).collect();
    members.sort_unstable();
    members.dedup();
    if members.is_empty() {
        return Err(Error::InvalidInput("X_top and the queried set are both empty".into()));
    }
    let teacher = TeacherModel::Target(target);
    let mut feats = Vec::with_capacity(members.len());
    let mut teachers = Vec::with_capacity(members.len());
    for &i in &members {
        let x = pool.get(i).ok_or(Error::Index { index: i, len: pool.len() })?;
        let label = labels.get(&i).copied();
        teachers.push(teacher_signal(x, label.is_some(), label, &teacher, 1.0, cfg)?);
        feats.push(enc.encode_image(x)?);
    }
    let refs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
    let trefs: Vec<&TeacherSignal> = teachers.iter().collect();
    Ok(loss_v_with_grad(bank, &refs, &trefs).0.dist)
}

fn surrogate_teachers(
    bank: &PromptBank,
    enc: &FrozenEncoder,
    pool: &[FeatureVector],
    labels: &BTreeMap<usize, usize>,
    cfg: &AdlConfig,
) -> Result<Vec<TeacherSignal>> {
    let teacher = TeacherModel::Surrogate { encoder: enc, bank };
    pool.iter()
        .enumerate()
        .map(|(i, x)| {
            let label = labels.get(&i).copied();
            teacher_signal(x, label.is_some(), label, &teacher, cfg.tau_hard, cfg)
        })
        .collect()
}

/// `L_dist^{T<-V}` over the whole pool, surrogate teachers in the hard limit.
pub fn loss_dist_t_from_v(
    target: &ClassifierModel,
    bank: &PromptBank,
    enc: &FrozenEncoder,
    pool: &[FeatureVector],
    queried: &[(usize, usize)],
    cfg: &AdlConfig,
) -> Result<f64> {
    Ok(loss_t(target, bank, enc, pool, queried, cfg)?.dist)
}

fn pool_probs(target: &ClassifierModel, pool: &[FeatureVector]) -> Result<Vec<Vec<f64>>> {
    pool.iter().map(|x| target.predict(x, 1.0).map(ProbVector::into_inner)).collect()
}

/// Mean per-sample entropy of `T` over `batch`.
pub fn loss_ent(target: &ClassifierModel, batch: &[FeatureVector]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let probs = pool_probs(target, batch)?;
    Ok(probs.iter().map(|p| -neg_entropy_raw(p)).sum::<f64>() / batch.len() as f64)
}

/// `sum_k pbar_k log pbar_k` with `pbar` the batch-mean prediction of `T`.
pub fn loss_div(target: &ClassifierModel, batch: &[FeatureVector]) -> Result<f64> {
    Ok(neg_entropy_raw(&mean_prediction(target, batch)?))
}

/// Batch-mean prediction `pbar` of `T`.
pub fn mean_prediction(target: &ClassifierModel, batch: &[FeatureVector]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let probs = pool_probs(target, batch)?;
    let mut mean = vec![0.0; target.classes()];
    for p in &probs {
        mean.iter_mut().zip(p).for_each(|(m, v)| *m += v / batch.len() as f64);
    }
    Ok(mean)
}

/// `L_T` with the whole pool as one batch.
pub fn loss_t(
    target: &ClassifierModel,
    bank: &PromptBank,
    enc: &FrozenEncoder,
    pool: &[FeatureVector],
    queried: &[(usize, usize)],
    cfg: &AdlConfig,
) -> Result<TargetLoss> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::InvalidInput("empty pool".into()));
    }
    check_dim(target.classes(), bank.classes())?;
    let labels = queried_map(queried, pool.len(), bank.classes())?;
    let teachers = surrogate_teachers(bank, enc, pool, &labels, cfg)?;
    let refs: Vec<&[f64]> = pool.iter().map(|x| x.as_slice()).collect();
    let trefs: Vec<Option<&TeacherSignal>> = teachers.iter().map(Some).collect();
    for x in &refs {
        check_dim(target.architecture().input_dim, x.len())?;
    }
    Ok(loss_t_with_grad(target, &refs, &trefs).0)
}

/// `L_V` with `X_top` recomputed from `T` on the pool.
pub fn loss_v(
    bank: &PromptBank,
    enc: &FrozenEncoder,
    target: &ClassifierModel,
    pool: &[FeatureVector],
    queried: &[(usize, usize)],
    cfg: &AdlConfig,
) -> Result<SurrogateLoss> {
    let x_top = select_top_confident(target, pool, cfg.top_n)?;
    let dist = loss_dist_v_from_t(bank, enc, target, pool, &x_top, queried, cfg)?;
    let kg = bank.kg_loss(&bank.text_forward());
    Ok(SurrogateLoss { dist, kg, total: dist + kg })
}

/// Which updates run inside each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdlMode {
    /// Target phase then prompt phase.
    Alternating,
    /// Target phase only; prompts stay as given.
    TargetOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Teacher `V`, student `T`.
    SurrogateToTarget,
    /// Teacher `T`, student `V`.
    TargetToSurrogate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Target,
    Prompt,
}

/// Observation hooks for [`adapt`]. The loop itself never sees ground truth;
/// accuracies come from whoever implements [`AdaptProbe::evaluate`].
pub trait AdaptProbe {
    fn teacher(&mut self, _epoch: usize, _direction: Direction, _index: usize, _signal: &TeacherSignal) {}

    fn phase(&mut self, _epoch: usize, _phase: Phase, _starting: bool, _target: &ClassifierModel, _bank: Option<&PromptBank>) {}

    /// Returns `(target accuracy, surrogate accuracy)` after an epoch.
    fn evaluate(&mut self, _target: &ClassifierModel, _bank: Option<&PromptBank>) -> (Option<f64>, Option<f64>) {
        (None, None)
    }
}

/// Probe that records nothing.
pub struct NoProbe;

impl AdaptProbe for NoProbe {}

/// Metrics logged once per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub target_lr: f64,
    pub loss_t: TargetLoss,
    pub loss_v: Option<SurrogateLoss>,
    pub x_top_size: usize,
    pub pseudo_label_agreement: Option<f64>,
    pub target_accuracy: Option<f64>,
    pub surrogate_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    /// The inference artifact.
    pub target: ClassifierModel,
    /// Kept for analysis only.
    pub bank: Option<PromptBank>,
    pub metrics: Vec<EpochMetrics>,
}

struct TargetPhase {
    opt: Sgd,
    order: Vec<usize>,
}

impl TargetPhase {
    fn new(target: &ClassifierModel, n: usize, cfg: &AdlConfig) -> Self {
        Self { opt: Sgd::new(target.param_count(), cfg.target_momentum, cfg.target_weight_decay), order: (0..n).collect() }
    }

    #[allow(clippy::too_many_arguments)]
    fn run(
        &mut self,
        target: &mut ClassifierModel,
        pool: &[FeatureVector],
        teachers: &[Option<TeacherSignal>],
        lr: f64,
        batch_size: usize,
        rng: &mut rng::Rng,
        epoch: usize,
    ) -> Result<TargetLoss> {
        self.order.shuffle(rng);
        let mut acc = TargetLoss::default();
        let mut steps = 0.0;
        for chunk in self.order.chunks(batch_size) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| pool[i].as_slice()).collect();
            let ts: Vec<Option<&TeacherSignal>> = chunk.iter().map(|&i| teachers[i].as_ref()).collect();
            let (loss, grad) = loss_t_with_grad(target, &xs, &ts);
            if !loss.total.is_finite() {
                return Err(Error::Numeric(format!("target loss is not finite in epoch {epoch}, target phase")));
            }
            acc.dist += loss.dist;
            acc.ent += loss.ent;
            acc.div += loss.div;
            acc.total += loss.total;
            steps += 1.0;
            self.opt.step(target.params_mut(), &grad, lr);
        }
        acc.dist /= steps;
        acc.ent /= steps;
        acc.div /= steps;
        acc.total /= steps;
        Ok(acc)
    }
}

fn check_pool(target: &ClassifierModel, pool: &[FeatureVector]) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::InvalidInput("target pool is empty".into()));
    }
    pool.iter().try_for_each(|x| check_dim(target.architecture().input_dim, x.len()))
}

/// The alternating adaptation loop.
///
/// Each epoch first refreshes `X_top`, the surrogate's hard pseudo-labels and
/// `T`'s soft labels on `X_top`, then runs one pass of mini-batch updates on
/// `T` with the bank frozen, then (in [`AdlMode::Alternating`]) one pass on
/// the prompts over `X_top` union `T_q` with `T` frozen.
#[allow(clippy::too_many_arguments)]
pub fn adapt(
    mut target: ClassifierModel,
    mut bank: PromptBank,
    enc: &FrozenEncoder,
    pool: &[FeatureVector],
    queried: &[(usize, usize)],
    cfg: &AdlConfig,
    mode: AdlMode,
    probe: &mut dyn AdaptProbe,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    check_pool(&target, pool)?;
    check_dim(target.classes(), bank.classes())?;
    check_dim(enc.feature_dim(), bank.feature_dim())?;
    let labels = queried_map(queried, pool.len(), bank.classes())?;
    let features = enc.encode_all(pool)?;
    let n = pool.len();

    let mut rng = rng::seeded(cfg.seed);
    let mut target_phase = TargetPhase::new(&target, n, cfg);
    let mut prompt_opt = Sgd::new(bank.trainable_params(), cfg.prompt_momentum, 0.0);
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        // (1) refresh teachers
        let probs: Vec<Vec<f64>> = pool.iter().map(|x| target.predict_unchecked(x)).collect();
        let x_top = select_top_from_probs(&probs, cfg.top_n);
        let emb = bank.text_embeddings();
        let mut agree = 0usize;
        let mut unlabeled = 0usize;
        let t_teachers: Vec<Option<TeacherSignal>> = features
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let logits = vilsurrogate::similarity_logits(&emb, z, bank.tau());
                let label = labels.get(&i).copied();
                let t = teacher_from_logits(&logits, label, cfg.tau_hard, cfg);
                if label.is_none() {
                    unlabeled += 1;
                    if math::argmax(&probs[i]) == t.distribution.argmax() {
                        agree += 1;
                    }
                }
                probe.teacher(epoch, Direction::SurrogateToTarget, i, &t);
                Some(t)
            })
            .collect();
        let mut v_members: Vec<usize> = x_top.iter().copied().chain(labels.keys().copied()).collect();
        v_members.sort_unstable();
        v_members.dedup();
        let v_teachers: Vec<TeacherSignal> = v_members
            .iter()
            .map(|&i| {
                let label = labels.get(&i).copied();
                let t = match label {
                    Some(y) => TeacherSignal { distribution: ProbVector::one_hot(bank.classes(), y), weight: cfg.beta_q },
                    None => TeacherSignal { distribution: ProbVector::from_normalized(probs[i].clone()), weight: cfg.beta },
                };
                if mode == AdlMode::Alternating {
                    probe.teacher(epoch, Direction::TargetToSurrogate, i, &t);
                }
                t
            })
            .collect();

        // (2) target phase, bank frozen
        let target_lr = cosine_lr(cfg.target_lr, epoch - 1, cfg.epochs);
        probe.phase(epoch, Phase::Target, true, &target, Some(&bank));
        let loss_t = target_phase.run(&mut target, pool, &t_teachers, target_lr, cfg.batch_size, &mut rng, epoch)?;
        probe.phase(epoch, Phase::Target, false, &target, Some(&bank));

        // (3) prompt phase, target frozen
        let loss_v = if mode == AdlMode::Alternating {
            probe.phase(epoch, Phase::Prompt, true, &target, Some(&bank));
            let mut order: Vec<usize> = (0..v_members.len()).collect();
            order.shuffle(&mut rng);
            let mut acc = SurrogateLoss::default();
            let mut steps = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let feats: Vec<&[f64]> = chunk.iter().map(|&j| features[v_members[j]].as_slice()).collect();
                let ts: Vec<&TeacherSignal> = chunk.iter().map(|&j| &v_teachers[j]).collect();
                let (loss, grad) = loss_v_with_grad(&bank, &feats, &ts);
                if !loss.total.is_finite() {
                    return Err(Error::Numeric(format!("surrogate loss is not finite in epoch {epoch}, prompt phase")));
                }
                acc.dist += loss.dist;
                acc.kg += loss.kg;
                acc.total += loss.total;
                steps += 1.0;
                prompt_opt.step(bank.context_mut(), &grad, cfg.prompt_lr);
            }
            probe.phase(epoch, Phase::Prompt, false, &target, Some(&bank));
            Some(SurrogateLoss { dist: acc.dist / steps, kg: acc.kg / steps, total: acc.total / steps })
        } else {
            None
        };

        let (target_accuracy, surrogate_accuracy) = probe.evaluate(&target, Some(&bank));
        metrics.push(EpochMetrics {
            epoch,
            target_lr,
            loss_t,
            loss_v,
            x_top_size: x_top.len(),
            pseudo_label_agreement: (unlabeled > 0).then(|| agree as f64 / unlabeled as f64),
            target_accuracy,
            surrogate_accuracy,
        });
    }
    Ok(AdaptOutcome { target, bank: Some(bank), metrics })
}

/// Adaptation without a surrogate: cross-entropy on the queried samples plus
/// entropy and diversity over the pool, same optimizer and schedule as
/// [`adapt`]'s target phase.
pub fn adapt_active_only(
    mut target: ClassifierModel,
    pool: &[FeatureVector],
    queried: &[(usize, usize)],
    cfg: &AdlConfig,
    probe: &mut dyn AdaptProbe,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    check_pool(&target, pool)?;
    let classes = target.classes();
    let labels = queried_map(queried, pool.len(), classes)?;
    let teachers: Vec<Option<TeacherSignal>> = (0..pool.len())
        .map(|i| labels.get(&i).map(|&y| TeacherSignal { distribution: ProbVector::one_hot(classes, y), weight: cfg.beta_q }))
        .collect();
    let mut rng = rng::seeded(cfg.seed);
    let mut target_phase = TargetPhase::new(&target, pool.len(), cfg);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        for (i, t) in teachers.iter().enumerate() {
            if let Some(t) = t {
                probe.teacher(epoch, Direction::SurrogateToTarget, i, t);
            }
        }
        let target_lr = cosine_lr(cfg.target_lr, epoch - 1, cfg.epochs);
        probe.phase(epoch, Phase::Target, true, &target, None);
        let loss_t = target_phase.run(&mut target, pool, &teachers, target_lr, cfg.batch_size, &mut rng, epoch)?;
        probe.phase(epoch, Phase::Target, false, &target, None);
        let (target_accuracy, _) = probe.evaluate(&target, None);
        metrics.push(EpochMetrics {
            epoch,
            target_lr,
            loss_t,
            loss_v: None,
            x_top_size: 0,
            pseudo_label_agreement: None,
            target_accuracy,
            surrogate_accuracy: None,
        });
    }
    Ok(AdaptOutcome { target, bank: None, metrics })
}
