//! Frozen vision-and-language surrogate.
//!
//! The "image encoder" is a random-Fourier-feature map `normalize(cos(Wx + b))`
//! fitted once to the foundation corpus. Class "text" embeddings are
//! `w_k = normalize(c_k + P * mean(v))`: `c_k` is a frozen class token, `P` a
//! frozen random orthogonal mixing map and `v_1..v_m` the only learnable
//! state, shared by all classes. Predictions are a softmax over cosine
//! similarities divided by a frozen temperature.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::datagen::{DomainDataset, FeatureVector};
use crate::diffcore::{self, normalize_in_place, ProbVector};
use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::rng;

pub const FEATURE_DIM: usize = 64;
pub const CONTEXT_LEN: usize = 16;
pub const TEMPERATURE: f64 = 0.05;

/// Random-Fourier-feature image encoder. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEncoder {
    input_dim: usize,
    feature_dim: usize,
    projection: Vec<f64>,
    phase: Vec<f64>,
}

/// Median Euclidean distance over all unordered pairs of `samples`.
pub fn median_pairwise_distance(samples: &[FeatureVector]) -> f64 {
    let n = samples.len();
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(math::sq_dist(&samples[i], &samples[j]));
        }
    }
    if dists.is_empty() {
        return 0.0;
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    math::sqrt(*m)
}

impl FrozenEncoder {
    /// Draws `W ~ N(0, 1/l^2)` and `b ~ U[0, 2pi)` where `l` is the median
    /// pairwise distance of the foundation corpus.
    pub fn from_foundation(foundation: &DomainDataset, feature_dim: usize, seed: u64) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidParameter("feature dimension must be positive".into()));
        }
        let length_scale = median_pairwise_distance(foundation.samples());
        if !(length_scale > 0.0) {
            return Err(Error::InvalidData("foundation corpus has zero spread".into()));
        }
        let d = foundation.dim();
        let mut rng = rng::seeded(seed);
        let projection = (0..feature_dim * d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z / length_scale
            })
            .collect();
        let phase = (0..feature_dim).map(|_| rng.random_range(0.0..core::f64::consts::TAU)).collect();
        Ok(Self { input_dim: d, feature_dim, projection, phase })
    }

    pub fn from_parts(input_dim: usize, feature_dim: usize, projection: Vec<f64>, phase: Vec<f64>) -> Result<Self> {
        check_dim(input_dim * feature_dim, projection.len())?;
        check_dim(feature_dim, phase.len())?;
        if projection.iter().chain(&phase).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite encoder parameter".into()));
        }
        Ok(Self { input_dim, feature_dim, projection, phase })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    /// `normalize(cos(W x + b))`.
    pub fn encode_image(&self, x: &[f64]) -> Result<FeatureVector> {
        check_dim(self.input_dim, x.len())?;
        Ok(self.encode_unchecked(x))
    }

    fn encode_unchecked(&self, x: &[f64]) -> FeatureVector {
        let d = self.input_dim;
        let mut z: Vec<f64> = (0..self.feature_dim)
            .map(|r| math::cos(math::dot(&self.projection[r * d..(r + 1) * d], x) + self.phase[r]))
            .collect();
        normalize_in_place(&mut z);
        z
    }

    pub fn encode_all(&self, xs: &[FeatureVector]) -> Result<Vec<FeatureVector>> {
        xs.iter().map(|x| self.encode_image(x)).collect()
    }
}

/// Learnable context vectors plus the frozen text side of the surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    classes: usize,
    feature_dim: usize,
    context_len: usize,
    context: Vec<f64>,
    class_tokens: Vec<f64>,
    mixing: Vec<f64>,
    tau: f64,
    anchors: Vec<f64>,
}

/// Intermediate values of the text map, reused by the backward pass.
#[derive(Debug, Clone)]
pub struct TextForward {
    pub embeddings: Vec<FeatureVector>,
    norms: Vec<f64>,
}

/// Random orthogonal `n x n` matrix (row-major) via modified Gram-Schmidt on a
/// Gaussian matrix.
fn random_orthogonal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::seeded(seed);
    loop {
        let mut rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let proj = math::dot(&rows[i], &rows[j]);
                let (head, tail) = rows.split_at_mut(i);
                for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                    *a -= proj * b;
                }
            }
            if normalize_in_place(&mut rows[i]) < 1e-8 {
                ok = false;
                break;
            }
        }
        if ok {
            return rows.concat();
        }
    }
}

impl PromptBank {
    /// Zero context, zero class tokens and a seeded orthogonal mixing map.
    /// Call [`init_anchors`] before use.
    pub fn new(classes: usize, feature_dim: usize, context_len: usize, tau: f64, seed: u64) -> Result<Self> {
        if classes < 2 || feature_dim == 0 || context_len == 0 {
            return Err(Error::InvalidParameter(format!(
                "prompt bank needs C >= 2, D >= 1, m >= 1 (got {classes}, {feature_dim}, {context_len})"
            )));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidParameter("temperature must be positive".into()));
        }
        Ok(Self {
            classes,
            feature_dim,
            context_len,
            context: vec![0.0; context_len * feature_dim],
            class_tokens: vec![0.0; classes * feature_dim],
            mixing: random_orthogonal(feature_dim, seed),
            tau,
            anchors: vec![0.0; classes * feature_dim],
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        classes: usize,
        feature_dim: usize,
        context_len: usize,
        tau: f64,
        context: Vec<f64>,
        class_tokens: Vec<f64>,
        mixing: Vec<f64>,
        anchors: Vec<f64>,
    ) -> Result<Self> {
        check_dim(context_len * feature_dim, context.len())?;
        check_dim(classes * feature_dim, class_tokens.len())?;
        check_dim(feature_dim * feature_dim, mixing.len())?;
        check_dim(classes * feature_dim, anchors.len())?;
        if !(tau > 0.0) {
            return Err(Error::InvalidParameter("temperature must be positive".into()));
        }
        Ok(Self { classes, feature_dim, context_len, context, class_tokens, mixing, tau, anchors })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Flat `m x D` context vectors.
    pub fn context(&self) -> &[f64] {
        &self.context
    }

    /// The learnable state; nothing else in the bank has a mutable accessor.
    pub fn context_mut(&mut self) -> &mut [f64] {
        &mut self.context
    }

    pub fn class_tokens(&self) -> &[f64] {
        &self.class_tokens
    }

    pub fn mixing(&self) -> &[f64] {
        &self.mixing
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    pub fn anchor(&self, k: usize) -> &[f64] {
        &self.anchors[k * self.feature_dim..(k + 1) * self.feature_dim]
    }

    /// Number of trainable scalars, `m * D`.
    pub fn trainable_params(&self) -> usize {
        self.context.len()
    }

    /// `P * mean(v)`.
    fn context_offset(&self) -> Vec<f64> {
        let dim = self.feature_dim;
        let mut mean = vec![0.0; dim];
        for v in self.context.chunks_exact(dim) {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        let m = self.context_len as f64;
        mean.iter_mut().for_each(|x| *x /= m);
        (0..dim).map(|r| math::dot(&self.mixing[r * dim..(r + 1) * dim], &mean)).collect()
    }

    pub fn text_forward(&self) -> TextForward {
        let dim = self.feature_dim;
        let offset = self.context_offset();
        let mut embeddings = Vec::with_capacity(self.classes);
        let mut norms = Vec::with_capacity(self.classes);
        for token in self.class_tokens.chunks_exact(dim) {
            let mut w: Vec<f64> = token.iter().zip(&offset).map(|(c, u)| c + u).collect();
            norms.push(normalize_in_place(&mut w));
            embeddings.push(w);
        }
        TextForward { embeddings, norms }
    }

    /// All class embeddings `w_1..w_C`.
    pub fn text_embeddings(&self) -> Vec<FeatureVector> {
        self.text_forward().embeddings
    }

    /// `w_k = normalize(c_k + P * mean(v))`.
    pub fn text_embed(&self, k: usize) -> Result<FeatureVector> {
        if k >= self.classes {
            return Err(Error::Index { index: k, len: self.classes });
        }
        Ok(self.text_forward().embeddings.swap_remove(k))
    }

    /// Backpropagates `dL/dw_k` (one row per class) to `dL/dv`, flat `m x D`.
    pub fn context_gradient(&self, fwd: &TextForward, dw: &[Vec<f64>]) -> Vec<f64> {
        let dim = self.feature_dim;
        let mut du = vec![0.0; dim];
        for ((w, &norm), g) in fwd.embeddings.iter().zip(&fwd.norms).zip(dw) {
            let wg = math::dot(w, g);
            for ((acc, wi), gi) in du.iter_mut().zip(w).zip(g) {
                *acc += (gi - wi * wg) / norm;
            }
        }
        let m = self.context_len as f64;
        // P^T du, shared by every context vector
        let mut dmean = vec![0.0; dim];
        for (r, dur) in du.iter().enumerate() {
            for (acc, p) in dmean.iter_mut().zip(&self.mixing[r * dim..(r + 1) * dim]) {
                *acc += p * dur;
            }
        }
        let per_vector: Vec<f64> = dmean.iter().map(|g| g / m).collect();
        per_vector.iter().copied().cycle().take(self.context.len()).collect()
    }

    /// `(1/C) sum_k ||w_k - w_k^0||^2`.
    pub fn kg_loss(&self, fwd: &TextForward) -> f64 {
        fwd.embeddings
            .iter()
            .enumerate()
            .map(|(k, w)| math::sq_dist(w, self.anchor(k)))
            .sum::<f64>()
            / self.classes as f64
    }

    /// `dL_kg/dw_k = (2/C)(w_k - w_k^0)`.
    pub fn kg_embedding_grad(&self, fwd: &TextForward) -> Vec<Vec<f64>> {
        let scale = 2.0 / self.classes as f64;
        fwd.embeddings
            .iter()
            .enumerate()
            .map(|(k, w)| w.iter().zip(self.anchor(k)).map(|(a, b)| scale * (a - b)).collect())
            .collect()
    }

    /// All parameters except the context, for bitwise frozen-state checks.
    pub fn frozen_fingerprint(&self) -> Vec<u64> {
        self.class_tokens
            .iter()
            .chain(&self.mixing)
            .chain(&self.anchors)
            .chain(core::iter::once(&self.tau))
            .map(|v| v.to_bits())
            .collect()
    }
}

/// Sets class tokens to the normalized mean foundation embedding of each
/// class, anchors to the matching template embedding, and zeroes the context.
pub fn init_anchors(mut bank: PromptBank, foundation: &DomainDataset, enc: &FrozenEncoder) -> Result<PromptBank> {
    check_dim(bank.classes, foundation.classes())?;
    check_dim(bank.feature_dim, enc.feature_dim())?;
    let dim = bank.feature_dim;
    let mut sums = vec![0.0; bank.classes * dim];
    let mut counts = vec![0usize; bank.classes];
    for (x, &y) in foundation.samples().iter().zip(foundation.labels()) {
        let z = enc.encode_image(x)?;
        for (s, v) in sums[y * dim..(y + 1) * dim].iter_mut().zip(&z) {
            *s += v;
        }
        counts[y] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidData(format!("foundation corpus has no samples of class {k}")));
    }
    for token in sums.chunks_exact_mut(dim) {
        normalize_in_place(token);
    }
    bank.class_tokens = sums;
    bank.context.iter_mut().for_each(|v| *v = 0.0);
    // Anchors go through the same text map as every later embedding, so a
    // zero context reproduces them bitwise.
    bank.anchors = bank.text_forward().embeddings.concat();
    Ok(bank)
}

/// `sim(z, w_k) / tau` for every class.
pub fn similarity_logits(embeddings: &[FeatureVector], z: &[f64], tau: f64) -> Vec<f64> {
    embeddings.iter().map(|w| math::dot(z, w) / tau).collect()
}

/// Surrogate prediction from an already-encoded image.
pub fn predict_features(embeddings: &[FeatureVector], z: &[f64], tau: f64) -> ProbVector {
    let logits = similarity_logits(embeddings, z, tau);
    let mut p = vec![0.0; logits.len()];
    diffcore::softmax_into(&logits, 1.0, &mut p);
    ProbVector::from_normalized(p)
}

/// `p_V(x)` with the current prompts.
pub fn vil_predict(enc: &FrozenEncoder, bank: &PromptBank, x: &[f64]) -> Result<ProbVector> {
    check_dim(enc.feature_dim(), bank.feature_dim)?;
    let z = enc.encode_image(x)?;
    Ok(predict_features(&bank.text_embeddings(), &z, bank.tau))
}

/// Prediction with the template anchors, ignoring the context entirely.
pub fn zero_shot_predict(enc: &FrozenEncoder, bank: &PromptBank, x: &[f64]) -> Result<ProbVector> {
    check_dim(enc.feature_dim(), bank.feature_dim)?;
    let z = enc.encode_image(x)?;
    let anchors: Vec<FeatureVector> = bank.anchors.chunks_exact(bank.feature_dim).map(|a| a.to_vec()).collect();
    Ok(predict_features(&anchors, &z, bank.tau))
}

/// `sum_i weight_i * H(target_i, p_V(z_i)) / denom` together with `dL/dw_k`.
///
/// `features` are encoded images, `targets` teacher distributions.
pub fn weighted_distillation(
    fwd: &TextForward,
    tau: f64,
    features: &[&[f64]],
    targets: &[&[f64]],
    weights: &[f64],
    denom: f64,
) -> (f64, Vec<Vec<f64>>) {
    let classes = fwd.embeddings.len();
    let dim = fwd.embeddings.first().map_or(0, |w| w.len());
    let mut dw = vec![vec![0.0; dim]; classes];
    let mut total = 0.0;
    for ((z, t), &weight) in features.iter().zip(targets).zip(weights) {
        let p = predict_features(&fwd.embeddings, z, tau);
        total += weight * diffcore::cross_entropy_raw(t, &p);
        for (k, row) in dw.iter_mut().enumerate() {
            let ds = weight * (p[k] - t[k]) / (tau * denom);
            if ds == 0.0 {
                continue;
            }
            for (g, zi) in row.iter_mut().zip(z.iter()) {
                *g += ds * zi;
            }
        }
    }
    (total / denom, dw)
}

/// Fraction of `features` whose surrogate argmax matches `labels`.
pub fn accuracy_on_features(bank: &PromptBank, features: &[FeatureVector], labels: &[usize]) -> f64 {
    let emb = bank.text_embeddings();
    let correct = features
        .iter()
        .zip(labels)
        .filter(|(z, y)| math::argmax(&similarity_logits(&emb, z, bank.tau)) == **y)
        .count();
    correct as f64 / features.len().max(1) as f64
}
