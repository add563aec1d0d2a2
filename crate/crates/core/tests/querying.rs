use dam_core::active::{budget_for, kcenter_greedy, query, Strategy as QueryStrategy};
use dam_core::adl::{adapt_active_only, AdlConfig, NoProbe};
use dam_core::datagen::{generate_domain_pair, DomainPairSpec, ShiftSpec};
use dam_core::models::{clone_model, train_source, TrainConfig};
use proptest::prelude::*;

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn farthest_first_by_enumeration(pool: &[Vec<f64>], budget: usize) -> Vec<usize> {
    let n = pool.len();
    let dim = pool[0].len();
    let mut centroid = vec![0.0; dim];
    for p in pool {
        centroid.iter_mut().zip(p).for_each(|(c, v)| *c += v);
    }
    centroid.iter_mut().for_each(|c| *c /= n as f64);
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < budget {
        let score = |i: usize| {
            if chosen.is_empty() {
                sq(&pool[i], &centroid)
            } else {
                chosen.iter().map(|&j| sq(&pool[i], &pool[j])).fold(f64::INFINITY, f64::min)
            }
        };
        let best = (0..n).filter(|i| !chosen.contains(i)).fold(None, |best: Option<usize>, i| match best {
            Some(b) if score(b) >= score(i) => Some(b),
            _ => Some(i),
        });
        chosen.push(best.unwrap());
    }
    chosen
}

fn pool_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
    (1usize..=4, 1usize..=64).prop_flat_map(|(dim, n)| {
        let points = prop::collection::vec(prop::collection::vec(prop_oneof![-5.0f64..5.0, (0i32..3).prop_map(f64::from)], dim), n);
        (points, 1..=n.min(8))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kcenter_matches_enumeration((pool, budget) in pool_strategy()) {
        prop_assert_eq!(kcenter_greedy(&pool, budget).unwrap(), farthest_first_by_enumeration(&pool, budget));
    }
}

#[test]
fn every_strategy_spends_the_budget_once_and_without_repeats() {
    let spec = DomainPairSpec::new(4, 6, 300, 250, ShiftSpec::rotation(0.4));
    let data = generate_domain_pair(&spec, 2).unwrap();
    let source = train_source(&data.source, &TrainConfig { epochs: 5, ..TrainConfig::default() }).unwrap().model;
    for strategy in QueryStrategy::ALL {
        for rho in [0.001, 0.01, 0.05, 0.3] {
            let q = query(strategy, &source, data.target.samples(), rho, 5).unwrap();
            let expected = budget_for(rho, 250).unwrap();
            assert_eq!(q.budget_used, expected);
            assert_eq!(q.indices.len(), expected);
            let mut sorted = q.indices.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), expected, "{strategy} repeated an index");
        }
    }
    assert_eq!(budget_for(0.001, 250).unwrap(), 1);
}

#[test]
fn queries_do_not_depend_on_adaptation() {
    let spec = DomainPairSpec::new(4, 6, 300, 250, ShiftSpec::rotation(0.6));
    let data = generate_domain_pair(&spec, 8).unwrap();
    let source = train_source(&data.source, &TrainConfig { epochs: 5, ..TrainConfig::default() }).unwrap().model;
    for strategy in QueryStrategy::ALL {
        let before = query(strategy, &source, data.target.samples(), 0.05, 1).unwrap();
        let mut oracle = data.target.oracle(before.budget_used);
        let queried: Vec<(usize, usize)> = before.indices.iter().map(|&i| (i, oracle.label(i).unwrap())).collect();
        let cfg = AdlConfig { epochs: 3, ..AdlConfig::default() };
        let adapted = adapt_active_only(clone_model(&source), data.target.samples(), &queried, &cfg, &mut NoProbe).unwrap();
        assert_ne!(adapted.target.params(), source.params());
        let after = query(strategy, &source, data.target.samples(), 0.05, 1).unwrap();
        assert_eq!(before, after);
    }
}
