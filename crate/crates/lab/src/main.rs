use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dam_core::active::{self, QueryResult};
use dam_core::adl::{self, AdlMode, NoProbe};
use dam_core::datagen::generate_domain_pair;
use dam_core::dfs;
use dam_core::models::{self, clone_model};
use dam_core::vilsurrogate::{self, FrozenEncoder, PromptBank};
use dam_lab::config::{parse_seeds, ExperimentConfig, Variant};
use dam_lab::record::{RunRecord, StageSeeds};
use dam_lab::{io, pipeline, report};

#[derive(Parser)]
#[command(name = "dam", version, about = "Source-free active domain adaptation with a prompted surrogate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML experiment config; missing fields take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override any field, e.g. `--set adl.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    /// `0..20` or `1,4,9`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut sets = Vec::new();
        for s in &self.sets {
            let (k, v) = s.split_once('=').with_context(|| format!("`--set {s}` is not KEY=VALUE"))?;
            sets.push((k.trim().to_string(), v.trim().to_string()));
        }
        let quoted = |v: &str| format!("\"{v}\"");
        if let Some(v) = &self.variant {
            sets.push(("variant".into(), quoted(v)));
        }
        if let Some(v) = &self.strategy {
            sets.push(("strategy".into(), quoted(v)));
        }
        if let Some(v) = self.rho {
            sets.push(("rho".into(), v.to_string()));
        }
        if let Some(v) = &self.seeds {
            sets.push(("seeds".into(), format!("{:?}", parse_seeds(v)?)));
        }
        if let Some(v) = &self.output_dir {
            sets.push(("output_dir".into(), quoted(&v.display().to_string())));
        }
        Ok(ExperimentConfig::resolve(self.config.as_deref(), &sets)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate source, target and foundation datasets for one seed.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the source classifier on a dataset file.
    TrainSource {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-shot query of the target pool with the raw source model.
    Query {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prompt tuning and distillation from saved artifacts.
    Adapt {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Query file written by `dam query`.
        #[arg(long)]
        query: PathBuf,
        /// Foundation corpus used to build the surrogate, unless `--surrogate` is given.
        #[arg(long)]
        foundation: Option<PathBuf>,
        #[arg(long)]
        surrogate: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline for the configured variant over all seeds.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Several variants on shared per-seed data.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated; defaults to every variant.
        #[arg(long)]
        variants: Option<String>,
    },
    /// Budget sweep.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "0.01,0.03,0.05,0.1")]
        rhos: String,
        #[arg(long, default_value = "full,active_only_no_vil")]
        variants: String,
    },
    /// Rebuild tables and summary from saved records.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_variants(text: &str) -> anyhow::Result<Vec<Variant>> {
    Ok(text.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?)
}

fn parse_rhos(text: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',').map(|s| s.trim().parse::<f64>().with_context(|| format!("bad budget `{s}`"))).collect()
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes the report and maps completeness to the exit code.
fn finish(records: &[RunRecord], dir: &Path) -> anyhow::Result<ExitCode> {
    let files = report::write_report(records, dir)?;
    print!("{}", std::fs::read_to_string(&files.summary)?);
    println!("wrote {} records, {} and {}", files.records.len(), files.table.display(), files.summary.display());
    let failed: Vec<&RunRecord> = records.iter().filter(|r| !r.complete).collect();
    for r in &failed {
        eprintln!("incomplete: {} ({})", r.file_name(), r.error.as_deref().unwrap_or("unknown error"));
    }
    Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::GenData { cfg, seed, out } => {
            let cfg = cfg.resolve()?;
            create_dir(&out)?;
            let triple = generate_domain_pair(&cfg.dataset, StageSeeds::derive(seed).data)?;
            for ds in [&triple.source, &triple.target, &triple.foundation] {
                let path = out.join(format!("{}.csv", ds.domain_tag()));
                io::save_dataset(ds, &path)?;
                println!("{}: {} samples, class counts {:?}", path.display(), ds.len(), ds.class_counts());
            }
        }
        Command::TrainSource { cfg, data, seed, out } => {
            let cfg = cfg.resolve()?;
            let ds = io::load_dataset(&data)?;
            let train = models::TrainConfig { seed: StageSeeds::derive(seed).source_training, ..cfg.source_training };
            let trained = models::train_source(&ds, &train)?;
            io::save_model(&trained.model, &out)?;
            println!(
                "final loss {:.6}, training accuracy {:.4}, saved {}",
                trained.final_loss(),
                trained.model.accuracy(ds.samples(), ds.labels()),
                out.display()
            );
        }
        Command::Query { cfg, model, target, seed, out } => {
            let cfg = cfg.resolve()?;
            let source = io::load_model(&model)?;
            let pool = io::load_dataset(&target)?;
            let q = active::query(cfg.strategy, &source, pool.samples(), cfg.rho, StageSeeds::derive(seed).query)?;
            write_json(&q, &out)?;
            println!("{} queried {} of {} samples, saved {}", q.strategy_name, q.budget_used, pool.len(), out.display());
        }
        Command::Adapt { cfg, model, target, query, foundation, surrogate, seed, out } => {
            let cfg = cfg.resolve()?;
            let seeds = StageSeeds::derive(seed);
            let source = io::load_model(&model)?;
            let pool = io::load_dataset(&target)?;
            let q: QueryResult = serde_json::from_str(&std::fs::read_to_string(&query)?)?;
            let mut oracle = pool.oracle(q.budget_used);
            let queried = q.indices.iter().map(|&i| oracle.label(i).map(|y| (i, y))).collect::<Result<Vec<_>, _>>()?;
            let (enc, template) = match (surrogate, foundation) {
                (Some(p), _) => io::load_surrogate(&p)?,
                (None, Some(p)) => {
                    let f = io::load_dataset(&p)?;
                    let enc = FrozenEncoder::from_foundation(&f, cfg.surrogate.feature_dim, seeds.encoder)?;
                    let bank = PromptBank::new(f.classes(), cfg.surrogate.feature_dim, cfg.surrogate.context_len, cfg.surrogate.tau, seeds.prompts)?;
                    let bank = vilsurrogate::init_anchors(bank, &f, &enc)?;
                    (enc, bank)
                }
                (None, None) => bail!("adapt needs --foundation or --surrogate"),
            };
            create_dir(&out)?;
            let adl_cfg = adl::AdlConfig { seed: seeds.adl, ..cfg.adl.clone() };
            let variant = cfg.variant;
            let outcome = match variant {
                Variant::SourceOnly | Variant::ZeroShotSurrogate => bail!("variant {variant} does not adapt; use `dam run`"),
                Variant::ActiveOnlyNoVil => adl::adapt_active_only(clone_model(&source), pool.samples(), &queried, &adl_cfg, &mut NoProbe)?,
                _ => {
                    let bank = if variant.tunes_prompts_first() {
                        let feats = queried.iter().map(|&(i, _)| enc.encode_image(&pool.samples()[i])).collect::<Result<Vec<_>, _>>()?;
                        let labels: Vec<usize> = queried.iter().map(|&(_, y)| y).collect();
                        let dfs_cfg = dfs::DfsConfig { seed: seeds.dfs, ..cfg.dfs.clone() };
                        let tuned = dfs::tune_prompts_on_features(template, &feats, &labels, &dfs_cfg)?;
                        write_json(&tuned.history, &out.join("dfs_history.json"))?;
                        tuned.bank
                    } else {
                        template
                    };
                    let mode = if matches!(variant, Variant::Full | Variant::NoLc) { AdlMode::Alternating } else { AdlMode::TargetOnly };
                    adl::adapt(clone_model(&source), bank, &enc, pool.samples(), &queried, &adl_cfg, mode, &mut NoProbe)?
                }
            };
            io::save_model(&outcome.target, &out.join("target_model.txt"))?;
            if let Some(bank) = &outcome.bank {
                io::save_surrogate(&enc, bank, &out.join("surrogate.txt"))?;
            }
            write_json(&outcome.metrics, &out.join("epochs.json"))?;
            let acc = pipeline::evaluate_target(&outcome.target, &pool);
            println!("{variant}: target accuracy {:.4}, artifacts in {}", acc, out.display());
        }
        Command::Run { cfg } => {
            let cfg = cfg.resolve()?;
            let records = pipeline::run_experiment(&cfg)?;
            return finish(&records, &cfg.output_dir);
        }
        Command::Ablate { cfg, variants } => {
            let cfg = cfg.resolve()?;
            let variants = match variants {
                Some(v) => parse_variants(&v)?,
                None => Variant::ALL.to_vec(),
            };
            let records = pipeline::run_variants(&cfg, &variants)?;
            return finish(&records, &cfg.output_dir);
        }
        Command::Sweep { cfg, rhos, variants } => {
            let cfg = cfg.resolve()?;
            let (records, _) = report::sweep_budget(&cfg, &parse_rhos(&rhos)?, &parse_variants(&variants)?)?;
            return finish(&records, &cfg.output_dir);
        }
        Command::Report { input, out } => {
            let records = report::load_records(&input)?;
            return finish(&records, out.as_deref().unwrap_or(&input));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
