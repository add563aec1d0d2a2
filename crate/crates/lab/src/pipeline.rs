//! generate, train source, query, tune prompts, adapt, evaluate.

use std::time::Instant;

use dam_core::active::{self, QueryResult};
use dam_core::adl::{self, AdaptOutcome, AdaptProbe, AdlMode, Direction, TeacherSignal};
use dam_core::datagen::{generate_domain_pair, DomainDataset, DomainTriple, FeatureVector};
use dam_core::dfs::{self, DfsEpoch};
use dam_core::models::{self, ClassifierModel};
use dam_core::vilsurrogate::{self, FrozenEncoder, PromptBank};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Variant};
use crate::error::Result;
use crate::record::{version_stamp, ParamCounts, RunRecord, StageSeeds, WeightAudit, RECORD_FORMAT};

/// Everything about one seed that does not depend on the budget or variant.
pub struct SeedBase {
    pub seeds: StageSeeds,
    pub data: DomainTriple,
    pub source: ClassifierModel,
    pub encoder: FrozenEncoder,
    /// Prompt bank with zero context, i.e. at its anchors.
    pub template_bank: PromptBank,
    pub target_features: Vec<FeatureVector>,
    pub source_accuracy_on_source: f64,
    pub source_accuracy_on_target: f64,
    pub zero_shot_accuracy: f64,
    pub seconds: f64,
}

pub fn prepare_base(cfg: &ExperimentConfig, run_seed: u64) -> Result<SeedBase> {
    let start = Instant::now();
    let seeds = StageSeeds::derive(run_seed);
    let data = generate_domain_pair(&cfg.dataset, seeds.data)?;
    let train_cfg = models::TrainConfig { seed: seeds.source_training, ..cfg.source_training.clone() };
    let source = models::train_source(&data.source, &train_cfg)?.model;
    let encoder = FrozenEncoder::from_foundation(&data.foundation, cfg.surrogate.feature_dim, seeds.encoder)?;
    let bank = PromptBank::new(
        cfg.dataset.classes,
        cfg.surrogate.feature_dim,
        cfg.surrogate.context_len,
        cfg.surrogate.tau,
        seeds.prompts,
    )?;
    let template_bank = vilsurrogate::init_anchors(bank, &data.foundation, &encoder)?;
    let target_features = encoder.encode_all(data.target.samples())?;
    let source_accuracy_on_source = source.accuracy(data.source.samples(), data.source.labels());
    let source_accuracy_on_target = evaluate_target(&source, &data.target);
    let zero_shot_accuracy = vilsurrogate::accuracy_on_features(&template_bank, &target_features, data.target.labels());
    Ok(SeedBase {
        seeds,
        data,
        source,
        encoder,
        template_bank,
        target_features,
        source_accuracy_on_source,
        source_accuracy_on_target,
        zero_shot_accuracy,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// The one-shot query and the oracle's answers, as `(pool index, label)`.
pub struct QueryContext {
    pub query: QueryResult,
    pub queried: Vec<(usize, usize)>,
}

pub fn prepare_query(base: &SeedBase, cfg: &ExperimentConfig, rho: f64) -> Result<QueryContext> {
    let target = &base.data.target;
    let query = active::query(cfg.strategy, &base.source, target.samples(), rho, base.seeds.query)?;
    let mut oracle = target.oracle(query.budget_used);
    let queried = query.indices.iter().map(|&i| oracle.label(i).map(|y| (i, y))).collect::<dam_core::Result<Vec<_>>>()?;
    Ok(QueryContext { query, queried })
}

/// Scores a classifier on the target domain. Only the classifier is passed
/// in, so no surrogate can take part in the final number.
pub fn evaluate_target(model: &ClassifierModel, target: &DomainDataset) -> f64 {
    model.accuracy(target.samples(), target.labels())
}

/// Per-epoch accuracies and the teacher-weight audit.
pub struct EvalProbe<'a> {
    target: &'a DomainDataset,
    features: &'a [FeatureVector],
    queried: Vec<bool>,
    beta_q: f64,
    beta: f64,
    pub audit: WeightAudit,
    pub surrogate_calls: u64,
}

impl<'a> EvalProbe<'a> {
    pub fn new(base: &'a SeedBase, queried: &[(usize, usize)], beta_q: f64, beta: f64) -> Self {
        let mut mask = vec![false; base.data.target.len()];
        for &(i, _) in queried {
            mask[i] = true;
        }
        Self {
            target: &base.data.target,
            features: &base.target_features,
            queried: mask,
            beta_q,
            beta,
            audit: WeightAudit::default(),
            surrogate_calls: 0,
        }
    }

    pub fn surrogate_accuracy(&mut self, bank: &PromptBank) -> f64 {
        self.surrogate_calls += self.features.len() as u64;
        vilsurrogate::accuracy_on_features(bank, self.features, self.target.labels())
    }
}

impl AdaptProbe for EvalProbe<'_> {
    fn teacher(&mut self, _epoch: usize, _direction: Direction, index: usize, signal: &TeacherSignal) {
        let queried = self.queried[index];
        let expected = if queried { self.beta_q } else { self.beta };
        if queried {
            self.audit.queried_signals += 1;
        } else {
            self.audit.unlabeled_signals += 1;
        }
        if signal.weight != expected {
            self.audit.violations += 1;
        }
    }

    fn evaluate(&mut self, target: &ClassifierModel, bank: Option<&PromptBank>) -> (Option<f64>, Option<f64>) {
        let t = evaluate_target(target, self.target);
        (Some(t), bank.map(|b| self.surrogate_accuracy(b)))
    }
}

/// What one variant produced for one seed and budget.
pub struct VariantOutcome {
    pub dfs_history: Vec<DfsEpoch>,
    pub epochs: Vec<adl::EpochMetrics>,
    pub final_target: Option<ClassifierModel>,
    pub final_target_accuracy: Option<f64>,
    pub final_surrogate_accuracy: Option<f64>,
    pub audit: WeightAudit,
    pub surrogate_calls_during_evaluation: u64,
}

pub fn count_trainable_params(cfg: &ExperimentConfig, variant: Variant) -> ParamCounts {
    let arch = models::Architecture::new(cfg.dataset.dim, models::HIDDEN_DIM, cfg.dataset.classes);
    let tunes = matches!(variant, Variant::Full | Variant::NoLc | Variant::NoLv);
    ParamCounts {
        target_params: if variant == Variant::ZeroShotSurrogate { 0 } else { arch.param_count() },
        prompt_params: if tunes { cfg.surrogate.context_len * cfg.surrogate.feature_dim } else { 0 },
    }
}

pub fn run_variant(base: &SeedBase, q: &QueryContext, cfg: &ExperimentConfig, variant: Variant) -> Result<VariantOutcome> {
    let adl_cfg = adl::AdlConfig { seed: base.seeds.adl, ..cfg.adl.clone() };
    let mut probe = EvalProbe::new(base, &q.queried, adl_cfg.beta_q, adl_cfg.beta);
    let mut dfs_history = Vec::new();
    let outcome: Option<AdaptOutcome> = match variant {
        Variant::SourceOnly | Variant::ZeroShotSurrogate => None,
        Variant::ActiveOnlyNoVil => {
            let target = models::clone_model(&base.source);
            Some(adl::adapt_active_only(target, base.data.target.samples(), &q.queried, &adl_cfg, &mut probe)?)
        }
        _ => {
            let bank = if variant.tunes_prompts_first() {
                let feats: Vec<FeatureVector> = q.queried.iter().map(|&(i, _)| base.target_features[i].clone()).collect();
                let labels: Vec<usize> = q.queried.iter().map(|&(_, y)| y).collect();
                let dfs_cfg = dfs::DfsConfig { seed: base.seeds.dfs, ..cfg.dfs.clone() };
                let out = dfs::tune_prompts_on_features(base.template_bank.clone(), &feats, &labels, &dfs_cfg)?;
                dfs_history = out.history;
                out.bank
            } else {
                base.template_bank.clone()
            };
            let mode = if matches!(variant, Variant::Full | Variant::NoLc) { AdlMode::Alternating } else { AdlMode::TargetOnly };
            let target = models::clone_model(&base.source);
            Some(adl::adapt(target, bank, &base.encoder, base.data.target.samples(), &q.queried, &adl_cfg, mode, &mut probe)?)
        }
    };

    let (epochs, final_target, final_bank) = match outcome {
        Some(AdaptOutcome { target, bank, metrics }) => (metrics, Some(target), bank),
        None if variant == Variant::SourceOnly => (Vec::new(), Some(models::clone_model(&base.source)), None),
        None => (Vec::new(), None, Some(base.template_bank.clone())),
    };
    let final_surrogate_accuracy = final_bank.as_ref().map(|b| probe.surrogate_accuracy(b));
    drop(final_bank);

    let calls_before = probe.surrogate_calls;
    let final_target_accuracy = final_target.as_ref().map(|m| evaluate_target(m, &base.data.target));
    let surrogate_calls_during_evaluation = probe.surrogate_calls - calls_before;
    Ok(VariantOutcome {
        dfs_history,
        epochs,
        final_target,
        final_target_accuracy,
        final_surrogate_accuracy,
        audit: probe.audit,
        surrogate_calls_during_evaluation,
    })
}

fn failed_record(cfg: &ExperimentConfig, seed: u64, err: String, seconds: f64) -> RunRecord {
    RunRecord {
        format: RECORD_FORMAT,
        version: version_stamp(),
        params: count_trainable_params(cfg, cfg.variant),
        config: cfg.clone(),
        seed,
        stage_seeds: StageSeeds::derive(seed),
        complete: false,
        error: Some(err),
        query: None,
        source_accuracy_on_source: None,
        source_accuracy_on_target: None,
        zero_shot_accuracy: None,
        dfs_history: Vec::new(),
        epochs: Vec::new(),
        final_target_accuracy: None,
        final_surrogate_accuracy: None,
        weight_audit: WeightAudit::default(),
        surrogate_calls_during_evaluation: 0,
        wall_clock_seconds: seconds,
    }
}

/// One record per (rho, variant) for a single seed, sharing data, source
/// model and surrogate across the grid. Failures become incomplete records.
pub fn run_seed_grid(cfg: &ExperimentConfig, seed: u64, rhos: &[f64], variants: &[Variant]) -> Vec<RunRecord> {
    let resolved = |rho: f64, variant: Variant| ExperimentConfig { rho, variant, seeds: vec![seed], ..cfg.clone() };
    let base = match prepare_base(cfg, seed) {
        Ok(b) => b,
        Err(e) => {
            return rhos
                .iter()
                .flat_map(|&r| variants.iter().map(move |&v| (r, v)))
                .map(|(r, v)| failed_record(&resolved(r, v), seed, e.to_string(), 0.0))
                .collect()
        }
    };
    let mut out = Vec::with_capacity(rhos.len() * variants.len());
    for &rho in rhos {
        let start = Instant::now();
        let q = prepare_query(&base, cfg, rho);
        let query_seconds = start.elapsed().as_secs_f64();
        for &variant in variants {
            let run_cfg = resolved(rho, variant);
            let start = Instant::now();
            let result = q.as_ref().map_err(|e| e.to_string()).and_then(|q| {
                run_variant(&base, q, &run_cfg, variant).map(|o| (q, o)).map_err(|e| e.to_string())
            });
            let seconds = base.seconds + query_seconds + start.elapsed().as_secs_f64();
            out.push(match result {
                Err(e) => failed_record(&run_cfg, seed, e, seconds),
                Ok((q, o)) => RunRecord {
                    format: RECORD_FORMAT,
                    version: version_stamp(),
                    params: count_trainable_params(&run_cfg, variant),
                    config: run_cfg,
                    seed,
                    stage_seeds: base.seeds,
                    complete: true,
                    error: None,
                    query: Some(q.query.clone()),
                    source_accuracy_on_source: Some(base.source_accuracy_on_source),
                    source_accuracy_on_target: Some(base.source_accuracy_on_target),
                    zero_shot_accuracy: Some(base.zero_shot_accuracy),
                    dfs_history: o.dfs_history,
                    epochs: o.epochs,
                    final_target_accuracy: o.final_target_accuracy,
                    final_surrogate_accuracy: o.final_surrogate_accuracy,
                    weight_audit: o.audit,
                    surrogate_calls_during_evaluation: o.surrogate_calls_during_evaluation,
                    wall_clock_seconds: seconds,
                },
            });
        }
    }
    out
}

/// Records for every seed in `cfg.seeds`, seeds in parallel, output ordered
/// by seed, then rho, then variant.
pub fn run_grid(cfg: &ExperimentConfig, rhos: &[f64], variants: &[Variant]) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let per_seed: Vec<Vec<RunRecord>> = cfg.seeds.par_iter().map(|&s| run_seed_grid(cfg, s, rhos, variants)).collect();
    Ok(per_seed.into_iter().flatten().collect())
}

/// One record per seed for `cfg.variant` at `cfg.rho`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    run_grid(cfg, &[cfg.rho], &[cfg.variant])
}

/// Several variants on shared per-seed data.
pub fn run_variants(cfg: &ExperimentConfig, variants: &[Variant]) -> Result<Vec<RunRecord>> {
    run_grid(cfg, &[cfg.rho], variants)
}

/// Re-runs a record from its embedded config and seed.
pub fn replay(record: &RunRecord) -> Result<RunRecord> {
    let cfg = ExperimentConfig { seeds: vec![record.seed], ..record.config.clone() };
    let mut out = run_grid(&cfg, &[cfg.rho], &[cfg.variant])?;
    Ok(out.remove(0))
}
