use dam_core::active::{query, Strategy};
use dam_core::adl::{adapt, AdaptProbe, AdlConfig, AdlMode, Direction, NoProbe, Phase, TeacherSignal};
use dam_core::datagen::{generate_domain_pair, DomainPairSpec, DomainTriple, ShiftSpec};
use dam_core::dfs::{tune_prompts_on_features, DfsConfig};
use dam_core::models::{clone_model, train_source, ClassifierModel, TrainConfig};
use dam_core::vilsurrogate::{init_anchors, FrozenEncoder, PromptBank, CONTEXT_LEN, FEATURE_DIM, TEMPERATURE};

struct Setup {
    data: DomainTriple,
    source: ClassifierModel,
    enc: FrozenEncoder,
    bank: PromptBank,
    queried: Vec<(usize, usize)>,
}

fn setup(spec: &DomainPairSpec, seed: u64, rho: f64, strategy: Strategy) -> Setup {
    let data = generate_domain_pair(spec, seed).unwrap();
    let source = train_source(&data.source, &TrainConfig { seed, ..TrainConfig::default() }).unwrap().model;
    let enc = FrozenEncoder::from_foundation(&data.foundation, FEATURE_DIM, seed ^ 0xE).unwrap();
    let bank = PromptBank::new(spec.classes, FEATURE_DIM, CONTEXT_LEN, TEMPERATURE, seed ^ 0xB).unwrap();
    let bank = init_anchors(bank, &data.foundation, &enc).unwrap();
    let q = query(strategy, &source, data.target.samples(), rho, seed).unwrap();
    let mut oracle = data.target.oracle(q.budget_used);
    let queried = q.indices.iter().map(|&i| (i, oracle.label(i).unwrap())).collect();
    Setup { data, source, enc, bank, queried }
}

fn tuned_bank(s: &Setup, seed: u64) -> PromptBank {
    let z: Vec<Vec<f64>> = s.queried.iter().map(|&(i, _)| s.enc.encode_image(&s.data.target.samples()[i]).unwrap()).collect();
    let y: Vec<usize> = s.queried.iter().map(|&(_, y)| y).collect();
    tune_prompts_on_features(s.bank.clone(), &z, &y, &DfsConfig { seed, ..DfsConfig::default() }).unwrap().bank
}

fn target_accuracy(m: &ClassifierModel, s: &Setup) -> f64 {
    m.accuracy(s.data.target.samples(), s.data.target.labels())
}

fn benchmark() -> DomainPairSpec {
    let mut shift = ShiftSpec::rotation(std::f64::consts::PI / 5.0);
    shift.scale = 1.3;
    shift.class_prior_skew = 4.5;
    let mut spec = DomainPairSpec::new(5, 16, 2000, 1000, shift);
    spec.mean_radius = 2.75;
    spec
}

#[test]
fn agreeing_models_stay_put() {
    let mut spec = DomainPairSpec::new(3, 8, 300, 300, ShiftSpec::identity());
    spec.mean_radius = 8.0;
    let (mut before, mut after) = (0.0, 0.0);
    for seed in 0..20 {
        let s = setup(&spec, seed, 0.05, Strategy::Entropy);
        before += target_accuracy(&s.source, &s);
        let cfg = AdlConfig { seed, ..AdlConfig::default() };
        let out = adapt(clone_model(&s.source), s.bank.clone(), &s.enc, s.data.target.samples(), &s.queried, &cfg, AdlMode::Alternating, &mut NoProbe).unwrap();
        after += target_accuracy(&out.target, &s);
    }
    assert!(after / 20.0 >= before / 20.0 - 0.01, "before {before}, after {after}");
}

#[test]
fn shifted_benchmark_gains_over_source_only() {
    let spec = benchmark();
    let (mut source, mut adapted) = (0.0, 0.0);
    for seed in 0..20 {
        let s = setup(&spec, seed, 0.05, Strategy::Margin);
        source += target_accuracy(&s.source, &s);
        let cfg = AdlConfig { seed, ..AdlConfig::default() };
        let out = adapt(clone_model(&s.source), tuned_bank(&s, seed), &s.enc, s.data.target.samples(), &s.queried, &cfg, AdlMode::Alternating, &mut NoProbe).unwrap();
        adapted += target_accuracy(&out.target, &s);
    }
    let (source, adapted) = (source / 20.0, adapted / 20.0);
    assert!(adapted > source + 0.05, "source-only {source:.4}, adapted {adapted:.4}");
}

#[derive(Default)]
struct Auditor {
    labels: Vec<Option<usize>>,
    bank_bits: Option<Vec<u64>>,
    target_bits: Option<Vec<u64>>,
    phases_seen: usize,
    failures: Vec<String>,
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn bank_bits(bank: &PromptBank) -> Vec<u64> {
    let mut b = bank.frozen_fingerprint();
    b.extend(bits(bank.context()));
    b
}

impl AdaptProbe for Auditor {
    fn teacher(&mut self, epoch: usize, direction: Direction, index: usize, signal: &TeacherSignal) {
        if let Some(y) = self.labels[index] {
            let one_hot = signal.distribution.iter().enumerate().all(|(k, &p)| p == if k == y { 1.0 } else { 0.0 });
            if !one_hot || signal.weight != 3.0 {
                self.failures.push(format!("epoch {epoch} {direction:?}: queried {index} not taught by its label"));
            }
        } else if signal.weight != 0.3 {
            self.failures.push(format!("epoch {epoch}: unlabeled {index} has weight {}", signal.weight));
        }
    }

    fn phase(&mut self, epoch: usize, phase: Phase, starting: bool, target: &ClassifierModel, bank: Option<&PromptBank>) {
        let bank = bank.expect("alternating run has a bank");
        self.phases_seen += 1;
        match (phase, starting) {
            (Phase::Target, true) => self.bank_bits = Some(bank_bits(bank)),
            (Phase::Target, false) => {
                if self.bank_bits.take() != Some(bank_bits(bank)) {
                    self.failures.push(format!("epoch {epoch}: bank changed during the target phase"));
                }
            }
            (Phase::Prompt, true) => self.target_bits = Some(bits(target.params())),
            (Phase::Prompt, false) => {
                if self.target_bits.take() != Some(bits(target.params())) {
                    self.failures.push(format!("epoch {epoch}: target changed during the prompt phase"));
                }
            }
        }
    }
}

#[test]
fn phases_are_isolated_and_queried_samples_keep_their_labels() {
    let spec = benchmark();
    let s = setup(&spec, 7, 0.05, Strategy::Margin);
    let mut auditor = Auditor { labels: vec![None; s.data.target.len()], ..Auditor::default() };
    for &(i, y) in &s.queried {
        auditor.labels[i] = Some(y);
    }
    let cfg = AdlConfig { epochs: 6, seed: 7, ..AdlConfig::default() };
    let bank = tuned_bank(&s, 7);
    let frozen = bank.frozen_fingerprint();
    let out = adapt(clone_model(&s.source), bank, &s.enc, s.data.target.samples(), &s.queried, &cfg, AdlMode::Alternating, &mut auditor).unwrap();
    assert!(auditor.failures.is_empty(), "{:?}", &auditor.failures[..auditor.failures.len().min(5)]);
    assert_eq!(auditor.phases_seen, 4 * 6);
    assert_eq!(out.bank.unwrap().frozen_fingerprint(), frozen);
}

#[test]
fn same_seed_same_run_and_the_bank_can_be_discarded() {
    let spec = benchmark();
    let s = setup(&spec, 11, 0.03, Strategy::Entropy);
    let cfg = AdlConfig { epochs: 5, seed: 11, ..AdlConfig::default() };
    let run = || adapt(clone_model(&s.source), s.bank.clone(), &s.enc, s.data.target.samples(), &s.queried, &cfg, AdlMode::Alternating, &mut NoProbe).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(bits(a.target.params()), bits(b.target.params()));

    let predict_all = |m: &ClassifierModel| -> Vec<usize> { s.data.target.samples().iter().map(|x| m.classify(x).unwrap()).collect() };
    let with_bank = predict_all(&a.target);
    let target = a.target;
    drop(a.bank);
    assert_eq!(predict_all(&target), with_bank);
}
