//! Seeded synthetic domains: a labeled source mixture, a shifted target copy,
//! and a broad "foundation" corpus for the surrogate, plus the label oracle.
//!
//! Class-conditional distributions are isotropic Gaussians around fixed class
//! means, so the Bayes-optimal classifier of every domain is known in closed
//! form.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, Rng};

pub type FeatureVector = Vec<f64>;

/// Covariate and label shift applied when deriving the target domain.
///
/// A target point is `scale * R(rotation_angle) * x + translation` where `R`
/// rotates every coordinate pair `(2i, 2i + 1)` by the same angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub rotation_angle: f64,
    /// Empty means no translation; otherwise one entry per feature.
    #[serde(default)]
    pub translation: Vec<f64>,
    pub scale: f64,
    /// Probability of flipping a source label to a different class.
    #[serde(default)]
    pub label_noise: f64,
    /// Target class priors are proportional to `exp(-skew * k / (C - 1))`.
    #[serde(default)]
    pub class_prior_skew: f64,
}

impl ShiftSpec {
    pub fn identity() -> Self {
        Self { rotation_angle: 0.0, translation: Vec::new(), scale: 1.0, label_noise: 0.0, class_prior_skew: 0.0 }
    }

    pub fn rotation(angle: f64) -> Self {
        Self { rotation_angle: angle, ..Self::identity() }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("shift scale must be positive, got {}", self.scale)));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::InvalidParameter(format!("label noise {} outside [0, 0.5)", self.label_noise)));
        }
        if !(self.class_prior_skew >= 0.0) {
            return Err(Error::InvalidParameter("class prior skew must be non-negative".into()));
        }
        if !self.translation.is_empty() && self.translation.len() != dim {
            return Err(Error::Shape { expected: dim, got: self.translation.len() });
        }
        if !self.rotation_angle.is_finite() || self.translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("non-finite shift".into()));
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> FeatureVector {
        let (s, c) = (math::sin(self.rotation_angle), math::cos(self.rotation_angle));
        let mut out = x.to_vec();
        for pair in out.chunks_exact_mut(2) {
            let (a, b) = (pair[0], pair[1]);
            pair[0] = c * a - s * b;
            pair[1] = s * a + c * b;
        }
        for (i, v) in out.iter_mut().enumerate() {
            *v = *v * self.scale + self.translation.get(i).copied().unwrap_or(0.0);
        }
        out
    }

    /// Maps a target point back into source coordinates.
    pub fn invert(&self, y: &[f64]) -> FeatureVector {
        let (s, c) = (math::sin(self.rotation_angle), math::cos(self.rotation_angle));
        let mut out: Vec<f64> = y
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.translation.get(i).copied().unwrap_or(0.0)) / self.scale)
            .collect();
        for pair in out.chunks_exact_mut(2) {
            let (a, b) = (pair[0], pair[1]);
            pair[0] = c * a + s * b;
            pair[1] = -s * a + c * b;
        }
        out
    }

    /// Class priors of the target domain.
    pub fn target_priors(&self, classes: usize) -> Vec<f64> {
        let denom = (classes.max(2) - 1) as f64;
        let raw: Vec<f64> =
            (0..classes).map(|k| math::exp(-self.class_prior_skew * k as f64 / denom)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

/// Everything needed to generate a source/target/foundation triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainPairSpec {
    pub classes: usize,
    pub dim: usize,
    pub n_source: usize,
    pub n_target: usize,
    /// Size of the foundation corpus; zero means `n_source`.
    #[serde(default)]
    pub n_foundation: usize,
    /// Distance of every class mean from the origin.
    pub mean_radius: f64,
    /// Variance multiplier of the foundation corpus relative to the source.
    pub foundation_variance: f64,
    pub shift: ShiftSpec,
}

impl DomainPairSpec {
    pub fn new(classes: usize, dim: usize, n_source: usize, n_target: usize, shift: ShiftSpec) -> Self {
        Self {
            classes,
            dim,
            n_source,
            n_target,
            n_foundation: 0,
            mean_radius: 3.0,
            foundation_variance: 3.0,
            shift,
        }
    }

    pub fn foundation_size(&self) -> usize {
        if self.n_foundation == 0 {
            self.n_source
        } else {
            self.n_foundation
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidParameter("need at least two classes".into()));
        }
        if self.dim < 2 {
            return Err(Error::InvalidParameter("need at least two features".into()));
        }
        let min = 10 * self.classes;
        for (name, n) in [("n_source", self.n_source), ("n_target", self.n_target), ("n_foundation", self.foundation_size())] {
            if n < min {
                return Err(Error::InvalidParameter(format!("{name} = {n} is below 10 * classes = {min}")));
            }
        }
        if !(self.mean_radius > 0.0 && self.foundation_variance > 0.0) {
            return Err(Error::InvalidParameter("mean radius and foundation variance must be positive".into()));
        }
        self.shift.validate(self.dim)
    }

    /// Class means: scaled basis vectors when `C <= d`, otherwise points on a
    /// circle in the first two coordinates.
    pub fn class_means(&self) -> Vec<FeatureVector> {
        (0..self.classes)
            .map(|k| {
                let mut mu = vec![0.0; self.dim];
                if self.classes <= self.dim {
                    mu[k] = self.mean_radius;
                } else {
                    let angle = 2.0 * core::f64::consts::PI * k as f64 / self.classes as f64;
                    mu[0] = self.mean_radius * math::cos(angle);
                    mu[1] = self.mean_radius * math::sin(angle);
                }
                mu
            })
            .collect()
    }

    /// Bayes-optimal label for a point of the source domain.
    pub fn bayes_source(&self, x: &[f64]) -> usize {
        let means = self.class_means();
        let scores: Vec<f64> = means.iter().map(|mu| -math::sq_dist(x, mu)).collect();
        math::argmax(&scores)
    }

    /// Bayes-optimal label for a point of the target domain.
    pub fn bayes_target(&self, y: &[f64]) -> usize {
        let x = self.shift.invert(y);
        let priors = self.shift.target_priors(self.classes);
        let scores: Vec<f64> = self
            .class_means()
            .iter()
            .zip(&priors)
            .map(|(mu, p)| math::ln(*p) - 0.5 * math::sq_dist(&x, mu))
            .collect();
        math::argmax(&scores)
    }
}

/// Feature vectors with ground-truth labels for one domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainDataset {
    classes: usize,
    samples: Vec<FeatureVector>,
    labels: Vec<usize>,
    domain_tag: String,
    seed: u64,
}

impl DomainDataset {
    pub fn new(
        classes: usize,
        samples: Vec<FeatureVector>,
        labels: Vec<usize>,
        domain_tag: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::Shape { expected: samples.len(), got: labels.len() });
        }
        if samples.is_empty() {
            return Err(Error::InvalidData("dataset has no samples".into()));
        }
        let dim = samples[0].len();
        if dim == 0 {
            return Err(Error::InvalidData("zero-dimensional samples".into()));
        }
        if let Some(i) = samples.iter().position(|s| s.len() != dim) {
            return Err(Error::InvalidData(format!("sample {i} has dimension {}, expected {dim}", samples[i].len())));
        }
        if let Some(i) = samples.iter().position(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidData(format!("sample {i} has a non-finite feature")));
        }
        if let Some(i) = labels.iter().position(|&y| y >= classes) {
            return Err(Error::InvalidData(format!("row {i}: label {} >= {classes} classes", labels[i])));
        }
        let mut seen = vec![false; classes];
        labels.iter().for_each(|&y| seen[y] = true);
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidData(format!("class {k} has no samples")));
        }
        Ok(Self { classes, samples, labels, domain_tag: domain_tag.into(), seed })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[FeatureVector] {
        &self.samples
    }

    /// Ground truth. Adaptation code never receives this; it only sees
    /// `samples()` and an [`Oracle`].
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn domain_tag(&self) -> &str {
        &self.domain_tag
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        self.labels.iter().for_each(|&y| counts[y] += 1);
        counts
    }

    /// Hands the labels to an oracle that reveals at most `budget` of them.
    pub fn oracle(&self, budget: usize) -> Oracle {
        Oracle { hidden_labels: self.labels.clone(), query_log: Vec::new(), queried: BTreeSet::new(), budget }
    }
}

/// The labeling authority for the target domain.
#[derive(Debug, Clone)]
pub struct Oracle {
    hidden_labels: Vec<usize>,
    query_log: Vec<usize>,
    queried: BTreeSet<usize>,
    budget: usize,
}

impl Oracle {
    /// Reveals the label of `index`, consuming one unit of budget.
    pub fn label(&mut self, index: usize) -> Result<usize> {
        if index >= self.hidden_labels.len() {
            return Err(Error::Index { index, len: self.hidden_labels.len() });
        }
        if self.queried.contains(&index) {
            return Err(Error::DuplicateQuery(index));
        }
        if self.query_log.len() >= self.budget {
            return Err(Error::BudgetExhausted { budget: self.budget });
        }
        self.queried.insert(index);
        self.query_log.push(index);
        Ok(self.hidden_labels[index])
    }

    pub fn query_log(&self) -> &[usize] {
        &self.query_log
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.query_log.len()
    }
}

/// Largest-remainder apportionment of `n` samples with at least one per class.
fn class_counts(n: usize, priors: &[f64]) -> Vec<usize> {
    let c = priors.len();
    let mut counts = vec![1usize; c];
    let rest = n - c;
    let quotas: Vec<f64> = priors.iter().map(|p| p * rest as f64).collect();
    let mut assigned = 0;
    for (count, q) in counts.iter_mut().zip(&quotas) {
        let whole = *q as usize;
        *count += whole;
        assigned += whole;
    }
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - (quotas[a] as usize) as f64;
        let rb = quotas[b] - (quotas[b] as usize) as f64;
        rb.partial_cmp(&ra).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &k in order.iter().take(rest - assigned) {
        counts[k] += 1;
    }
    counts
}

fn sample_mixture(
    means: &[FeatureVector],
    counts: &[usize],
    std_dev: f64,
    rng: &mut Rng,
) -> (Vec<FeatureVector>, Vec<usize>) {
    let mut rows: Vec<(FeatureVector, usize)> = Vec::with_capacity(counts.iter().sum());
    for (k, (mu, &count)) in means.iter().zip(counts).enumerate() {
        for _ in 0..count {
            let x: FeatureVector = mu
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + std_dev * z
                })
                .collect();
            rows.push((x, k));
        }
    }
    rows.shuffle(rng);
    rows.into_iter().unzip()
}

/// Source, target and foundation datasets for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainTriple {
    pub source: DomainDataset,
    pub target: DomainDataset,
    pub foundation: DomainDataset,
}

/// Draws the three domains. Identical `(spec, seed)` gives identical data.
pub fn generate_domain_pair(spec: &DomainPairSpec, seed: u64) -> Result<DomainTriple> {
    spec.validate()?;
    let c = spec.classes;
    let means = spec.class_means();
    let uniform = vec![1.0 / c as f64; c];

    let mut rng_source = rng::seeded(rng::derive_seed(seed, 1));
    let (xs, mut ys) = sample_mixture(&means, &class_counts(spec.n_source, &uniform), 1.0, &mut rng_source);
    if spec.shift.label_noise > 0.0 {
        for y in ys.iter_mut() {
            if rng_source.random::<f64>() < spec.shift.label_noise {
                let other = rng_source.random_range(0..c - 1);
                *y = if other >= *y { other + 1 } else { other };
            }
        }
    }

    let mut rng_target = rng::seeded(rng::derive_seed(seed, 2));
    let priors = spec.shift.target_priors(c);
    let (xt, yt) = sample_mixture(&means, &class_counts(spec.n_target, &priors), 1.0, &mut rng_target);
    let xt: Vec<FeatureVector> = xt.iter().map(|x| spec.shift.apply(x)).collect();

    let mut rng_found = rng::seeded(rng::derive_seed(seed, 3));
    let (xf, yf) = sample_mixture(
        &means,
        &class_counts(spec.foundation_size(), &uniform),
        math::sqrt(spec.foundation_variance),
        &mut rng_found,
    );

    Ok(DomainTriple {
        source: DomainDataset::new(c, xs, ys, "source", seed)?,
        target: DomainDataset::new(c, xt, yt, "target", seed)?,
        foundation: DomainDataset::new(c, xf, yf, "foundation", seed)?,
    })
}

impl core::fmt::Display for DomainDataset {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{} (C={}, d={}, n={}, seed={})", self.domain_tag, self.classes, self.dim(), self.len(), self.seed)
    }
}

impl DomainDataset {
    /// Renames the domain tag, used when a dataset is re-derived or loaded.
    pub fn with_tag(mut self, tag: &str) -> Self {
        self.domain_tag = tag.to_string();
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(shift: ShiftSpec) -> DomainPairSpec {
        DomainPairSpec::new(3, 4, 60, 60, shift)
    }

    #[test]
    fn counts_are_stratified() {
        let spec = DomainPairSpec::new(5, 16, 100, 1000, ShiftSpec::identity());
        let t = generate_domain_pair(&spec, 3).unwrap();
        assert_eq!(t.target.class_counts(), vec![200; 5]);
        assert!(t.target.class_counts().iter().all(|&c| c >= 100));
        assert_eq!(t.foundation.len(), 100);
    }

    #[test]
    fn skewed_priors_keep_every_class() {
        let mut shift = ShiftSpec::identity();
        shift.class_prior_skew = 3.0;
        let spec = DomainPairSpec::new(4, 4, 40, 40, shift);
        let t = generate_domain_pair(&spec, 0).unwrap();
        let counts = t.target.class_counts();
        assert_eq!(counts.iter().sum::<usize>(), 40);
        assert!(counts.iter().all(|&c| c >= 1));
        assert!(counts[0] > counts[3]);
    }

    #[test]
    fn same_seed_same_data() {
        let spec = small(ShiftSpec::rotation(0.4));
        assert_eq!(generate_domain_pair(&spec, 11).unwrap(), generate_domain_pair(&spec, 11).unwrap());
        assert_ne!(generate_domain_pair(&spec, 11).unwrap().target, generate_domain_pair(&spec, 12).unwrap().target);
    }

    #[test]
    fn rejects_bad_sizes_and_shift() {
        assert!(generate_domain_pair(&DomainPairSpec::new(3, 4, 29, 60, ShiftSpec::identity()), 0).is_err());
        assert!(generate_domain_pair(&DomainPairSpec::new(1, 4, 60, 60, ShiftSpec::identity()), 0).is_err());
        let mut bad = ShiftSpec::identity();
        bad.scale = 0.0;
        assert!(matches!(generate_domain_pair(&small(bad), 0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn shift_inverts() {
        let mut shift = ShiftSpec::rotation(0.7);
        shift.scale = 1.3;
        shift.translation = vec![0.5, -1.0, 2.0];
        let x = [0.3, -2.0, 1.1];
        let back = shift.invert(&shift.apply(&x));
        for (a, b) in back.iter().zip(x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn label_noise_touches_source_only() {
        let mut shift = ShiftSpec::identity();
        shift.label_noise = 0.3;
        let spec = small(shift);
        let noisy = generate_domain_pair(&spec, 5).unwrap();
        let clean = generate_domain_pair(&small(ShiftSpec::identity()), 5).unwrap();
        assert_eq!(noisy.source.samples(), clean.source.samples());
        assert_ne!(noisy.source.labels(), clean.source.labels());
        assert_eq!(noisy.target, clean.target);
    }

    #[test]
    fn oracle_contract() {
        let ds = DomainDataset::new(2, vec![vec![0.0]; 6], vec![0, 1, 1, 0, 1, 0], "t", 0).unwrap();
        let mut oracle = ds.oracle(2);
        assert_eq!(oracle.label(3).unwrap(), 0);
        assert_eq!(oracle.query_log(), &[3]);
        assert_eq!(oracle.label(3), Err(Error::DuplicateQuery(3)));
        assert_eq!(oracle.label(1).unwrap(), 1);
        assert_eq!(oracle.label(2), Err(Error::BudgetExhausted { budget: 2 }));
        assert_eq!(oracle.label(9), Err(Error::Index { index: 9, len: 6 }));
        assert_eq!(oracle.remaining(), 0);
    }

    #[test]
    fn dataset_validation() {
        assert!(DomainDataset::new(2, vec![vec![0.0], vec![1.0]], vec![0, 2], "x", 0).is_err());
        assert!(DomainDataset::new(3, vec![vec![0.0], vec![1.0]], vec![0, 1], "x", 0).is_err());
        assert!(DomainDataset::new(2, vec![vec![0.0], vec![1.0, 2.0]], vec![0, 1], "x", 0).is_err());
    }
}
