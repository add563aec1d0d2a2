//! Dense probability numerics: softmax, cross-entropy, entropy, KL, cosine
//! similarity, and a central-difference gradient checker.
//!
//! Logarithms clamp their argument at [`LOG_EPS`] and `0 * log(0)` is taken as
//! zero, so hard labels and near-zero temperatures never produce NaN.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math;

/// Lower clamp applied to probabilities before taking a logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Tolerance on `|sum - 1|` accepted by [`ProbVector::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A non-empty vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealVector(Vec<f64>);

impl RealVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("entry {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for RealVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty probability vector".into()));
        }
        if let Some(i) = probs.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidInput(format!("entry {i} is not a probability")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidInput(format!("entries sum to {total}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(alloc::vec![1.0 / classes as f64; classes])
    }

    pub fn one_hot(classes: usize, k: usize) -> Self {
        let mut v = alloc::vec![0.0; classes];
        v[k] = 1.0;
        Self(v)
    }

    /// Wraps a vector the caller already knows to be on the simplex.
    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn argmax(&self) -> usize {
        math::argmax(&self.0)
    }

    /// Largest probability.
    pub fn confidence(&self) -> f64 {
        self.0[self.argmax()]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ProbVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Temperature-scaled softmax with max subtraction.
pub fn softmax(logits: &[f64], tau: f64) -> Result<ProbVector> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("temperature must be positive, got {tau}")));
    }
    if logits.is_empty() {
        return Err(Error::InvalidInput("empty logits".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite logit".into()));
    }
    let mut out = alloc::vec![0.0; logits.len()];
    softmax_into(logits, tau, &mut out);
    Ok(ProbVector(out))
}

/// Unchecked softmax used on hot paths; `tau` must be positive.
pub(crate) fn softmax_into(logits: &[f64], tau: f64, out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = math::exp((z - max) / tau);
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `log(max(p, LOG_EPS))`.
#[inline]
pub(crate) fn clamped_ln(p: f64) -> f64 {
    math::ln(p.max(LOG_EPS))
}

/// `-sum_k t_k log(max(q_k, eps))` with `0 * log(.) = 0`, on raw slices.
pub fn cross_entropy_raw(target: &[f64], pred: &[f64]) -> f64 {
    target
        .iter()
        .zip(pred)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, q)| -t * clamped_ln(*q))
        .sum()
}

/// `H(target, pred) = -sum_k target_k log(pred_k)`.
pub fn cross_entropy(target: &ProbVector, pred: &ProbVector) -> Result<f64> {
    check_dim(target.len(), pred.len())?;
    Ok(cross_entropy_raw(target, pred))
}

/// Shannon entropy in nats, equal to `cross_entropy(p, p)`.
pub fn entropy(p: &ProbVector) -> f64 {
    cross_entropy_raw(p, p)
}

/// `sum_k p_k log p_k`, the negative entropy.
pub fn neg_entropy_raw(p: &[f64]) -> f64 {
    -cross_entropy_raw(p, p)
}

/// `sum_k p_k log(p_k / q_k)`, with `q` clamped below at [`LOG_EPS`].
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    check_dim(p.len(), q.len())?;
    Ok(p.iter()
        .zip(q.iter())
        .filter(|(a, _)| **a != 0.0)
        .map(|(a, b)| a * (clamped_ln(*a) - clamped_ln(*b)))
        .sum())
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    let (na, nb) = (math::norm(a), math::norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidInput("cosine similarity of a zero vector".into()));
    }
    Ok((math::dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Scales `v` to unit Euclidean norm in place. Zero vectors are left alone.
pub fn normalize_in_place(v: &mut [f64]) -> f64 {
    let n = math::norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// Analytic versus central-difference gradient at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub analytic: RealVector,
    pub numeric: RealVector,
    pub max_rel_err: f64,
}

/// Compares `gradient(point)` against central differences of `loss`.
///
/// The error per coordinate is `|g_a - g_n| / max(1e-8, |g_a| + |g_n|)`.
pub fn check_gradient<L, G>(loss: L, gradient: G, point: &[f64], step: f64) -> Result<GradientReport>
where
    L: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::InvalidParameter(format!("step {step} outside [1e-7, 1e-3]")));
    }
    let analytic = gradient(point);
    check_dim(point.len(), analytic.len())?;
    let mut probe = point.to_vec();
    let mut numeric = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = loss(&probe);
        probe[i] = orig - step;
        let down = loss(&probe);
        probe[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::Numeric(format!("non-finite loss near coordinate {i}")));
        }
        numeric.push((up - down) / (2.0 * step));
    }
    let max_rel_err = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-8))
        .fold(0.0, f64::max);
    Ok(GradientReport {
        analytic: RealVector::new(analytic)?,
        numeric: RealVector::new(numeric)?,
        max_rel_err,
    })
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax(&[0.0, 0.0, 0.0], 1.0).unwrap();
        for v in p.iter() {
            assert!(close(*v, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn softmax_hard_limit() {
        let p = softmax(&[1.0, 0.0], 1e-8).unwrap();
        assert!(close(p[0], 1.0, 1e-12) && close(p[1], 0.0, 1e-12));
    }

    #[test]
    fn softmax_matches_high_precision() {
        // mpmath, 40 digits
        let expected = [0.090030573170380457998, 0.24472847105479765247, 0.66524095577482188953];
        let p = softmax(&[1.0, 2.0, 3.0], 1.0).unwrap();
        for (a, b) in p.iter().zip(expected) {
            assert!(close(*a, b, 1e-15), "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert!(matches!(softmax(&[1.0], 0.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(softmax(&[1.0], -2.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn softmax_extreme_ratio_does_not_overflow() {
        let p = softmax(&[1e4, -1e4, 0.0], 1.0).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(close(p[0], 1.0, 1e-12));
    }

    #[test]
    fn cross_entropy_cases() {
        let e1 = ProbVector::one_hot(3, 0);
        assert_eq!(cross_entropy(&e1, &e1).unwrap(), 0.0);
        let u = ProbVector::uniform(4);
        let ey = ProbVector::one_hot(4, 2);
        assert!(close(cross_entropy(&ey, &u).unwrap(), math::ln(4.0), 1e-15));
        let t = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let q = ProbVector::new(vec![0.9, 0.1]).unwrap();
        assert!(close(cross_entropy(&t, &q).unwrap(), 1.2039728043259359926, 1e-14));
    }

    #[test]
    fn cross_entropy_shape_error() {
        let a = ProbVector::uniform(2);
        let b = ProbVector::uniform(3);
        assert_eq!(cross_entropy(&a, &b), Err(Error::Shape { expected: 2, got: 3 }));
        assert!(kl_divergence(&a, &b).is_err());
    }

    #[test]
    fn entropy_cases() {
        assert!(close(entropy(&ProbVector::uniform(5)), math::ln(5.0), 1e-15));
        assert_eq!(entropy(&ProbVector::one_hot(5, 1)), 0.0);
        let p = ProbVector::new(vec![0.7, 0.2, 0.1]).unwrap();
        assert!(close(entropy(&p), 0.80181855254333730856, 1e-15));
    }

    #[test]
    fn cosine_cases() {
        let v = [0.3, -1.2, 4.0];
        assert!(close(cosine_sim(&v, &v).unwrap(), 1.0, 1e-15));
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(close(cosine_sim(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 0.98386991009990746642, 1e-15));
        assert!(matches!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn kl_cases() {
        let p = ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let e = ProbVector::one_hot(6, 0);
        assert!(close(kl_divergence(&e, &ProbVector::uniform(6)).unwrap(), math::ln(6.0), 1e-15));
        let a = ProbVector::new(vec![0.6, 0.4]).unwrap();
        let b = ProbVector::uniform(2);
        assert!(close(kl_divergence(&a, &b).unwrap(), 0.020135513550688873421, 1e-15));
    }

    #[test]
    fn gradcheck_quadratic() {
        let r = check_gradient(
            |x| x.iter().map(|v| v * v).sum(),
            |x| x.iter().map(|v| 2.0 * v).collect(),
            &[1.0, 2.0],
            1e-5,
        )
        .unwrap();
        assert_eq!(&*r.analytic, &[2.0, 4.0]);
        assert!(r.max_rel_err < 1e-6);
    }

    #[test]
    fn gradcheck_constant() {
        let r = check_gradient(|_| 3.5, |x| vec![0.0; x.len()], &[0.4, -1.0, 2.0], 1e-5).unwrap();
        assert_eq!(r.max_rel_err, 0.0);
        assert!(r.analytic.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradcheck_softmax_cross_entropy() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(7);
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let target = ProbVector::one_hot(4, 0);
            let loss = |z: &[f64]| cross_entropy_raw(&target, &softmax(z, 1.0).unwrap());
            // d/dz CE(e, softmax(z)) = softmax(z) - e
            let grad = |z: &[f64]| {
                let p = softmax(z, 1.0).unwrap();
                p.iter().zip(target.iter()).map(|(a, b)| a - b).collect()
            };
            let r = check_gradient(loss, grad, &x, 1e-5).unwrap();
            assert!(r.max_rel_err < 1e-4, "{}", r.max_rel_err);
        }
    }

    #[test]
    fn gradcheck_rejects_bad_step_and_nan() {
        assert!(check_gradient(|_| 0.0, |_| vec![0.0], &[1.0], 1e-2).is_err());
        let r = check_gradient(|x| math::ln(x[0]), |x| vec![1.0 / x[0]], &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    fn simplex(c: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, c).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in prop::collection::vec(-50.0f64..50.0, 1..12), log_tau in -8.0f64..3.0) {
            let tau = libm::pow(10.0, log_tau);
            let p = softmax(&logits, tau).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert_eq!(p.argmax(), math::argmax(&logits));
        }

        #[test]
        fn softmax_shift_invariant(logits in prop::collection::vec(-20.0f64..20.0, 2..8), c in -100.0f64..100.0, tau in 0.05f64..10.0) {
            let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
            let a = softmax(&logits, tau).unwrap();
            let b = softmax(&shifted, tau).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn gibbs_inequality((p, q) in (2usize..8).prop_flat_map(|c| (simplex(c), simplex(c)))) {
            let p = ProbVector::new(p).unwrap();
            let q = ProbVector::new(q).unwrap();
            prop_assert!(cross_entropy(&p, &q).unwrap() >= entropy(&p) - 1e-12);
            prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-12);
        }

        #[test]
        fn kl_to_uniform_identity(p in (2usize..10).prop_flat_map(simplex)) {
            let c = p.len();
            let p = ProbVector::new(p).unwrap();
            let lhs = kl_divergence(&p, &ProbVector::uniform(c)).unwrap() - math::ln(c as f64);
            prop_assert!((lhs - neg_entropy_raw(&p)).abs() < 1e-10);
        }
    }
}
