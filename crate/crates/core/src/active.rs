//! One-shot query strategies run against the raw source model.
//!
//! Every strategy sees only the source model and the unlabeled target
//! features. Ties are broken toward the smallest index.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::FeatureVector;
use crate::diffcore::neg_entropy_raw;
use crate::error::{Error, Result};
use crate::math;
use crate::models::ClassifierModel;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Entropy,
    Margin,
    KCenter,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Random, Strategy::Entropy, Strategy::Margin, Strategy::KCenter];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::Margin => "margin",
            Strategy::KCenter => "kcenter",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown query strategy `{s}`")))
    }
}

/// The queried index set `T_q`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryResult {
    pub indices: Vec<usize>,
    pub strategy_name: String,
    pub budget_used: usize,
}

/// `floor(rho * n)`, raised to one when that rounds to zero.
pub fn budget_for(rho: f64, n: usize) -> Result<usize> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("query ratio {rho} outside (0, 1)")));
    }
    // the small epsilon keeps e.g. 0.05 * 1000 from landing on 49.999..
    let raw = libm::floor(rho * n as f64 + 1e-9) as usize;
    Ok(raw.clamp(1, n.max(1)))
}

/// Indices of the `budget` largest scores, ties toward the smaller index.
fn top_scores(scores: &[f64], budget: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(budget);
    order
}

/// Highest-entropy samples under the given predictions.
pub fn select_by_entropy(probs: &[Vec<f64>], budget: usize) -> Vec<usize> {
    let scores: Vec<f64> = probs.iter().map(|p| -neg_entropy_raw(p)).collect();
    top_scores(&scores, budget)
}

/// Samples with the smallest gap between the top two probabilities.
pub fn select_by_margin(probs: &[Vec<f64>], budget: usize) -> Vec<usize> {
    let scores: Vec<f64> = probs
        .iter()
        .map(|p| {
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &v in p {
                if v > first {
                    second = first;
                    first = v;
                } else if v > second {
                    second = v;
                }
            }
            -(first - second)
        })
        .collect();
    top_scores(&scores, budget)
}

/// Greedy k-center (farthest-first) selection.
///
/// The first center is the point farthest from the centroid; each later one is
/// the point with the largest distance to its nearest chosen center.
pub fn kcenter_greedy(features: &[FeatureVector], budget: usize) -> Result<Vec<usize>> {
    let n = features.len();
    if n == 0 {
        return Err(Error::InvalidInput("k-center pool is empty".into()));
    }
    if budget > n {
        return Err(Error::InvalidParameter(format!("budget {budget} exceeds pool size {n}")));
    }
    if budget == 0 {
        return Ok(Vec::new());
    }
    let dim = features[0].len();
    let mut centroid = alloc::vec![0.0; dim];
    for f in features {
        for (c, v) in centroid.iter_mut().zip(f) {
            *c += v;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= n as f64);

    let first_scores: Vec<f64> = features.iter().map(|f| math::sq_dist(f, &centroid)).collect();
    let first = top_scores(&first_scores, 1)[0];
    let mut chosen = alloc::vec![first];
    let mut taken = alloc::vec![false; n];
    taken[first] = true;
    let mut nearest: Vec<f64> = features.iter().map(|f| math::sq_dist(f, &features[first])).collect();
    while chosen.len() < budget {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        let next = best.expect("budget <= n leaves a candidate");
        taken[next] = true;
        chosen.push(next);
        for (d, f) in nearest.iter_mut().zip(features) {
            *d = d.min(math::sq_dist(f, &features[next]));
        }
    }
    Ok(chosen)
}

/// Spends the whole budget `floor(rho * n)` at once using the raw source model.
pub fn query(strategy: Strategy, source: &ClassifierModel, pool: &[FeatureVector], rho: f64, seed: u64) -> Result<QueryResult> {
    let budget = budget_for(rho, pool.len())?;
    if pool.is_empty() {
        return Err(Error::InvalidInput("query pool is empty".into()));
    }
    if let Some(x) = pool.iter().find(|x| x.len() != source.architecture().input_dim) {
        return Err(Error::Shape { expected: source.architecture().input_dim, got: x.len() });
    }
    let indices = match strategy {
        Strategy::Random => {
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.shuffle(&mut rng::seeded(seed));
            order.truncate(budget);
            order
        }
        Strategy::Entropy | Strategy::Margin => {
            let probs: Vec<Vec<f64>> = pool.iter().map(|x| source.predict_unchecked(x)).collect();
            if strategy == Strategy::Entropy {
                select_by_entropy(&probs, budget)
            } else {
                select_by_margin(&probs, budget)
            }
        }
        Strategy::KCenter => {
            let feats = pool.iter().map(|x| source.penultimate_features(x)).collect::<Result<Vec<_>>>()?;
            kcenter_greedy(&feats, budget)?
        }
    };
    Ok(QueryResult { indices, strategy_name: String::from(strategy.name()), budget_used: budget })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn budget_rounding() {
        assert_eq!(budget_for(0.05, 1000).unwrap(), 50);
        assert_eq!(budget_for(0.05, 10).unwrap(), 1);
        assert_eq!(budget_for(0.1, 1000).unwrap(), 100);
        assert_eq!(budget_for(0.03, 1000).unwrap(), 30);
        assert!(budget_for(0.0, 10).is_err());
        assert!(budget_for(1.0, 10).is_err());
    }

    #[test]
    fn entropy_picks_most_uncertain() {
        let probs = vec![vec![0.9, 0.1], vec![0.5, 0.5], vec![0.7, 0.3]];
        assert_eq!(select_by_entropy(&probs, 1), vec![1]);
        assert_eq!(select_by_entropy(&probs, 2), vec![1, 2]);
    }

    #[test]
    fn margin_ties_break_by_index() {
        let probs = vec![vec![0.6, 0.4], vec![0.5, 0.5], vec![0.4, 0.6], vec![0.5, 0.5]];
        assert_eq!(select_by_margin(&probs, 3), vec![1, 3, 0]);
    }

    #[test]
    fn kcenter_square_picks_opposite_corners() {
        let square = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]];
        let chosen = kcenter_greedy(&square, 2).unwrap();
        // all corners tie on distance to the centroid; index 0 wins, then its
        // opposite corner is the unique farthest point
        assert_eq!(chosen, vec![0, 2]);
    }

    #[test]
    fn kcenter_identical_points_in_index_order() {
        let pool = vec![vec![1.0, 1.0]; 5];
        assert_eq!(kcenter_greedy(&pool, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn kcenter_full_budget_covers_pool() {
        let pool: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let mut chosen = kcenter_greedy(&pool, 7).unwrap();
        chosen.sort();
        assert_eq!(chosen, (0..7).collect::<Vec<_>>());
        assert!(kcenter_greedy(&[], 1).is_err());
    }

    #[test]
    fn unknown_strategy_name() {
        assert!("mhpl".parse::<super::Strategy>().is_err());
        assert_eq!("kcenter".parse::<super::Strategy>().unwrap(), super::Strategy::KCenter);
    }

    proptest! {
        #[test]
        fn margin_matches_full_sort(raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 1..40), b in 1usize..10) {
            let probs: Vec<Vec<f64>> = raw.iter().map(|v| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect() }).collect();
            let b = b.min(probs.len());
            let gap = |p: &Vec<f64>| { let mut s = p.clone(); s.sort_by(|a, b| b.total_cmp(a)); s[0] - s[1] };
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|&a, &c| gap(&probs[a]).total_cmp(&gap(&probs[c])).then(a.cmp(&c)));
            let picked = select_by_margin(&probs, b);
            let mut picked_sorted = picked.clone();
            picked_sorted.sort();
            let mut expected: Vec<usize> = order[..b].to_vec();
            expected.sort();
            prop_assert_eq!(picked_sorted, expected);
        }
    }
}
