use dam_core::datagen::{generate_domain_pair, DomainPairSpec, ShiftSpec};
use dam_core::models::{train_source, TrainConfig};

const SEEDS: u64 = 20;

fn source_gap(shift: ShiftSpec) -> (f64, f64, f64) {
    let (mut src, mut tgt, mut bayes) = (0.0, 0.0, 0.0);
    for seed in 0..SEEDS {
        let spec = DomainPairSpec::new(5, 16, 2000, 1000, shift.clone());
        let data = generate_domain_pair(&spec, seed).unwrap();
        let model = train_source(&data.source, &TrainConfig { seed, ..TrainConfig::default() }).unwrap().model;
        src += model.accuracy(data.source.samples(), data.source.labels());
        tgt += model.accuracy(data.target.samples(), data.target.labels());
        let hits = data.target.samples().iter().zip(data.target.labels()).filter(|(x, y)| spec.bayes_target(x) == **y).count();
        bayes += hits as f64 / data.target.len() as f64;
    }
    let n = SEEDS as f64;
    (src / n, tgt / n, bayes / n)
}

#[test]
fn no_shift_keeps_source_accuracy() {
    let (src, tgt, _) = source_gap(ShiftSpec::identity());
    assert!((src - tgt).abs() < 0.02, "source {src:.4} vs target {tgt:.4}");
}

#[test]
fn rotation_opens_a_gap_below_the_bayes_rate() {
    let (src, tgt, bayes) = source_gap(ShiftSpec::rotation(std::f64::consts::PI / 6.0));
    assert!(src - tgt > 0.05, "source {src:.4} vs target {tgt:.4}");
    assert!(tgt < bayes, "source model {tgt:.4} beats the Bayes rule {bayes:.4}");
}

#[test]
fn uniform_priors_fill_every_class() {
    let spec = DomainPairSpec::new(5, 16, 2000, 1000, ShiftSpec::rotation(0.4));
    for seed in 0..5 {
        let data = generate_domain_pair(&spec, seed).unwrap();
        assert!(data.target.class_counts().iter().all(|&c| c >= 100));
    }
}

#[test]
fn generation_is_bytewise_deterministic() {
    let mut shift = ShiftSpec::rotation(0.7);
    shift.label_noise = 0.1;
    shift.class_prior_skew = 2.0;
    let spec = DomainPairSpec::new(4, 6, 80, 80, shift);
    let a = generate_domain_pair(&spec, 42).unwrap();
    let b = generate_domain_pair(&spec, 42).unwrap();
    for (x, y) in [(&a.source, &b.source), (&a.target, &b.target), (&a.foundation, &b.foundation)] {
        let bits = |d: &dam_core::datagen::DomainDataset| d.samples().iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(x), bits(y));
        assert_eq!(x.labels(), y.labels());
    }
}
