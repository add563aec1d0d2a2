//! The source/target classifier: a one-hidden-layer tanh network with an
//! inspectable penultimate layer.
//!
//! Parameters live in one flat buffer laid out as `[W1 (h x d), b1 (h),
//! W2 (C x h), b2 (C)]`, row-major, which is also the order of the on-disk
//! parameter file.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::DomainDataset;
use crate::diffcore::{self, ProbVector};
use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::optim::Sgd;
use crate::rng;

/// Width of the hidden layer used for every classifier in the lab.
pub const HIDDEN_DIM: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => math::tanh(x),
        }
    }

    /// Derivative expressed through the activation value.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_dim: usize, classes: usize) -> Self {
        Self { input_dim, hidden_dim, classes }
    }

    pub fn param_count(&self) -> usize {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.classes);
        d * h + h + h * c + c
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.classes);
        let b1 = d * h;
        let w2 = b1 + h;
        let b2 = w2 + h * c;
        (b1, w2, b2)
    }
}

/// Parameters of `S` or `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    arch: Architecture,
    activation: Activation,
    params: Vec<f64>,
    seed: u64,
}

impl ClassifierModel {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization.
    pub fn random(arch: Architecture, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut params = Vec::with_capacity(arch.param_count());
        let bound1 = 1.0 / math::sqrt(arch.input_dim as f64);
        let bound2 = 1.0 / math::sqrt(arch.hidden_dim as f64);
        for _ in 0..arch.input_dim * arch.hidden_dim + arch.hidden_dim {
            params.push(rng.random_range(-bound1..=bound1));
        }
        for _ in 0..arch.hidden_dim * arch.classes + arch.classes {
            params.push(rng.random_range(-bound2..=bound2));
        }
        Self { arch, activation: Activation::Tanh, params, seed }
    }

    pub fn zeros(arch: Architecture) -> Self {
        Self { arch, activation: Activation::Tanh, params: vec![0.0; arch.param_count()], seed: 0 }
    }

    pub fn from_params(arch: Architecture, activation: Activation, params: Vec<f64>, seed: u64) -> Result<Self> {
        check_dim(arch.param_count(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidData("non-finite classifier parameter".into()));
        }
        Ok(Self { arch, activation, params, seed })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        check_dim(self.arch.input_dim, x.len())
    }

    fn hidden_into(&self, x: &[f64], hidden: &mut [f64]) {
        let (d, h) = (self.arch.input_dim, self.arch.hidden_dim);
        let (b1, _, _) = self.arch.offsets();
        for (j, out) in hidden.iter_mut().enumerate().take(h) {
            let row = &self.params[j * d..(j + 1) * d];
            *out = self.activation.apply(math::dot(row, x) + self.params[b1 + j]);
        }
    }

    fn logits_from_hidden(&self, hidden: &[f64], logits: &mut [f64]) {
        let (h, c) = (self.arch.hidden_dim, self.arch.classes);
        let (_, w2, b2) = self.arch.offsets();
        for (k, out) in logits.iter_mut().enumerate().take(c) {
            let row = &self.params[w2 + k * h..w2 + (k + 1) * h];
            *out = math::dot(row, hidden) + self.params[b2 + k];
        }
    }

    pub(crate) fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut hidden = vec![0.0; self.arch.hidden_dim];
        let mut logits = vec![0.0; self.arch.classes];
        self.hidden_into(x, &mut hidden);
        self.logits_from_hidden(&hidden, &mut logits);
        logits
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.logits_unchecked(x))
    }

    /// `softmax(logits(x) / tau)`.
    pub fn predict(&self, x: &[f64], tau: f64) -> Result<ProbVector> {
        diffcore::softmax(&self.logits(x)?, tau)
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let logits = self.logits_unchecked(x);
        let mut p = vec![0.0; logits.len()];
        diffcore::softmax_into(&logits, 1.0, &mut p);
        p
    }

    /// Argmax class of the temperature-1 prediction.
    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        Ok(math::argmax(&self.logits(x)?))
    }

    /// Hidden-layer activations.
    pub fn penultimate_features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut hidden = vec![0.0; self.arch.hidden_dim];
        self.hidden_into(x, &mut hidden);
        Ok(hidden)
    }

    /// Evaluates a loss defined on the logits of a batch and returns it with
    /// its gradient w.r.t. every parameter.
    ///
    /// `loss_on_logits` receives one logit row per input and returns the loss
    /// value together with `dL/dlogits` in the same layout.
    pub fn batch_objective<F>(&self, xs: &[&[f64]], loss_on_logits: F) -> (f64, Vec<f64>)
    where
        F: FnOnce(&[Vec<f64>]) -> (f64, Vec<Vec<f64>>),
    {
        let (d, h, c) = (self.arch.input_dim, self.arch.hidden_dim, self.arch.classes);
        let (b1, w2, b2) = self.arch.offsets();
        let mut hidden = Vec::with_capacity(xs.len());
        let mut logits = Vec::with_capacity(xs.len());
        for x in xs {
            let mut hv = vec![0.0; h];
            let mut lv = vec![0.0; c];
            self.hidden_into(x, &mut hv);
            self.logits_from_hidden(&hv, &mut lv);
            hidden.push(hv);
            logits.push(lv);
        }
        let (value, dlogits) = loss_on_logits(&logits);
        let mut grad = vec![0.0; self.params.len()];
        let mut dhidden = vec![0.0; h];
        for ((x, hv), dl) in xs.iter().zip(&hidden).zip(&dlogits) {
            dhidden.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..c {
                let g = dl[k];
                if g == 0.0 {
                    continue;
                }
                grad[b2 + k] += g;
                let row = w2 + k * h;
                for j in 0..h {
                    grad[row + j] += g * hv[j];
                    dhidden[j] += g * self.params[row + j];
                }
            }
            for j in 0..h {
                let dz = dhidden[j] * self.activation.derivative_from_output(hv[j]);
                if dz == 0.0 {
                    continue;
                }
                grad[b1 + j] += dz;
                let row = j * d;
                for (i, xi) in x.iter().enumerate() {
                    grad[row + i] += dz * xi;
                }
            }
        }
        (value, grad)
    }

    /// Mean cross-entropy against hard labels, with its parameter gradient.
    pub fn cross_entropy_objective(&self, xs: &[&[f64]], labels: &[usize]) -> (f64, Vec<f64>) {
        self.batch_objective(xs, |logits| mean_hard_cross_entropy(logits, labels))
    }

    /// Fraction of samples whose argmax matches `labels`.
    pub fn accuracy(&self, samples: &[Vec<f64>], labels: &[usize]) -> f64 {
        let correct = samples
            .iter()
            .zip(labels)
            .filter(|(x, y)| math::argmax(&self.logits_unchecked(x)) == **y)
            .count();
        correct as f64 / samples.len().max(1) as f64
    }
}

/// `mean_i CE(e_{y_i}, softmax(z_i))` and its logit gradient.
pub fn mean_hard_cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> (f64, Vec<Vec<f64>>) {
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, &y) in logits.iter().zip(labels) {
        let mut p = vec![0.0; z.len()];
        diffcore::softmax_into(z, 1.0, &mut p);
        total -= diffcore::clamped_ln(p[y]);
        p[y] -= 1.0;
        p.iter_mut().for_each(|g| *g /= n);
        grads.push(p);
    }
    (total / n, grads)
}

/// Independent copy of a model; identical to `Clone`, named for the `T = S`
/// initialization step.
pub fn clone_model(model: &ClassifierModel) -> ClassifierModel {
    model.clone()
}

/// Mini-batch SGD settings for supervised training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-2, momentum: 0.9, weight_decay: 1e-3, epochs: 50, batch_size: 64, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter("momentum must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidParameter("weight decay must be non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// A trained source model and its per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTraining {
    pub model: ClassifierModel,
    pub epoch_losses: Vec<f64>,
}

impl SourceTraining {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().expect("at least one epoch")
    }
}

/// Pretrains `S` on a labeled source dataset with mean cross-entropy.
pub fn train_source(ds: &DomainDataset, cfg: &TrainConfig) -> Result<SourceTraining> {
    cfg.validate()?;
    if ds.classes() < 2 {
        return Err(Error::InvalidParameter("source dataset needs at least two classes".into()));
    }
    let arch = Architecture::new(ds.dim(), HIDDEN_DIM, ds.classes());
    let mut model = ClassifierModel::random(arch, rng::derive_seed(cfg.seed, 0x1111));
    let mut opt = Sgd::new(model.param_count(), cfg.momentum, cfg.weight_decay);
    let mut rng = rng::seeded(rng::derive_seed(cfg.seed, 0x2222));
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| ds.samples()[i].as_slice()).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| ds.labels()[i]).collect();
            let (loss, grad) = model.cross_entropy_objective(&xs, &ys);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("source training loss is not finite in epoch {epoch}")));
            }
            weighted += loss * batch.len() as f64;
            opt.step(&mut model.params, &grad, cfg.learning_rate);
        }
        epoch_losses.push(weighted / ds.len() as f64);
    }
    Ok(SourceTraining { model, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::check_gradient;

    fn tiny() -> ClassifierModel {
        // d = 2, h = 2, C = 2 with hand-set weights
        let params = vec![
            0.5, -1.0, 0.25, 0.75, // W1
            0.1, -0.2, // b1
            1.0, -0.5, -1.5, 2.0, // W2
            0.3, -0.1, // b2
        ];
        ClassifierModel::from_params(Architecture::new(2, 2, 2), Activation::Tanh, params, 0).unwrap()
    }

    #[test]
    fn hand_set_forward_pass() {
        let m = tiny();
        let x = [1.0, 2.0];
        let h0 = libm::tanh(0.5 - 2.0 + 0.1);
        let h1 = libm::tanh(0.25 + 1.5 - 0.2);
        assert_eq!(m.penultimate_features(&x).unwrap(), vec![h0, h1]);
        let z0 = h0 - 0.5 * h1 + 0.3;
        let z1 = -1.5 * h0 + 2.0 * h1 - 0.1;
        let e0 = libm::exp(z0);
        let e1 = libm::exp(z1);
        let p = m.predict(&x, 1.0).unwrap();
        assert!((p[0] - e0 / (e0 + e1)).abs() < 1e-15);
        assert!((p[1] - e1 / (e0 + e1)).abs() < 1e-15);
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = ClassifierModel::zeros(Architecture::new(3, 4, 5));
        let p = m.predict(&[1.0, -2.0, 3.0], 1.0).unwrap();
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn low_temperature_is_one_hot() {
        let m = tiny();
        let x = [0.4, -0.9];
        let p = m.predict(&x, 1e-8).unwrap();
        let k = m.classify(&x).unwrap();
        assert!((p[k] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_first_layer_at_origin() {
        let arch = Architecture::new(2, 2, 2);
        let mut params = vec![0.0; arch.param_count()];
        params[0] = 1.0;
        params[3] = 1.0;
        let m = ClassifierModel::from_params(arch, Activation::Tanh, params, 0).unwrap();
        assert_eq!(m.penultimate_features(&[0.0, 0.0]).unwrap(), vec![libm::tanh(0.0); 2]);
    }

    #[test]
    fn shape_errors() {
        let m = tiny();
        assert_eq!(m.predict(&[1.0], 1.0).unwrap_err(), Error::Shape { expected: 2, got: 1 });
        assert!(m.penultimate_features(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn clone_is_independent() {
        let m = ClassifierModel::random(Architecture::new(4, 8, 3), 9);
        let mut c = clone_model(&m);
        assert_eq!(c, m);
        let x = [0.1, 0.2, -0.3, 0.4];
        assert_eq!(c.predict(&x, 1.0).unwrap(), m.predict(&x, 1.0).unwrap());
        let before: Vec<u64> = m.params().iter().map(|p| p.to_bits()).collect();
        c.params_mut()[0] += 1.0;
        let after: Vec<u64> = m.params().iter().map(|p| p.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn parameter_count() {
        assert_eq!(Architecture::new(16, 32, 5).param_count(), 709);
    }

    #[test]
    fn cross_entropy_gradient_checks() {
        use rand::Rng as _;
        let arch = Architecture::new(3, 5, 4);
        let mut rng = rng::seeded(3);
        let xs: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let ys: Vec<usize> = (0..10).map(|i| i % 4).collect();
        let base = ClassifierModel::random(arch, 4);
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let eval = |p: &[f64]| {
            let m = ClassifierModel::from_params(arch, Activation::Tanh, p.to_vec(), 0).unwrap();
            m.cross_entropy_objective(&refs, &ys)
        };
        let r = check_gradient(|p| eval(p).0, |p| eval(p).1, base.params(), 1e-5).unwrap();
        assert!(r.max_rel_err < 1e-4, "{}", r.max_rel_err);
    }

    #[test]
    fn rejects_invalid_config() {
        let ds = DomainDataset::new(2, vec![vec![0.0], vec![1.0]], vec![0, 1], "s", 0).unwrap();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(train_source(&ds, &cfg), Err(Error::InvalidParameter(_))));
        let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(train_source(&ds, &cfg).is_err());
    }
}
