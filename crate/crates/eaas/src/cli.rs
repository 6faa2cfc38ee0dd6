//! The `embmark` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or runtime error, 3 when
//! `verify --fail-on-infringe` finds an infringing space.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use embmark_core::attack::{
    dimension_shift, extract_surrogate, run_scenario, surrogate_service, write_mse_csv, AttackKind,
    AttackScenario, StealerEncoder, SurrogateConfig, SurrogateModel,
};
use embmark_core::corpus::{gen_catalog, sample_benign_pairs, ClassCatalog, CorpusSpec, Encoder};
use embmark_core::io::{read_embf, write_embf};
use embmark_core::pipeline::{build_setup, train_on_triggers, SetupConfig};
use embmark_core::rng::mix;
use embmark_core::transform::{apply_transform, TrainConfig};
use embmark_core::trigger::{build_trigger_set, select_trigger_classes, FrequencyBand, TriggerSet};
use embmark_core::verify::{
    identify_user, pair_stats, verify, write_pair_csv, write_score_csv, DistributionCheck,
    PairStatList, StatSource, StatSubset, Thresholds, Verdict, VerificationReport,
};
use serde::{Deserialize, Serialize};

use crate::client::{steal, Client, StealOptions, QUERIES_SUFFIX};
use crate::error::{EaasError, Result};
use crate::files::{
    load_transform, read_pairs, save_transform, sidecar, write_atomic, write_pairs,
};
use crate::service::{load_registry, register_user, start, ServiceConfig, ADMIN_KEY_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INFRINGING: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "embmark",
    version,
    about = "Watermarked embedding services: train, serve, attack, verify"
)]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic class catalog.
    GenCorpus(GenCorpusArgs),
    /// Sample trigger classes and build the shuffled trigger pairs.
    BuildTriggers(BuildTriggersArgs),
    /// Sample matched query pairs (benign verification set or duplicate set).
    BuildQueryset(BuildQuerysetArgs),
    /// Train a watermark transform on a trigger set.
    TrainWatermark(TrainWatermarkArgs),
    /// Train a transform for a new user and add it to a registry directory.
    AddUser(AddUserArgs),
    /// Build a complete provider setup from one config.
    Setup(SetupArgs),
    /// Embed query pairs with the original encoder.
    Embed(EmbedArgs),
    /// Apply a watermark transform to an embedding file.
    Inject(InjectArgs),
    /// Run the embedding service.
    Serve(ServeArgs),
    /// Bulk-query a running service.
    Steal(StealArgs),
    /// Fit a surrogate model to stolen embeddings.
    Extract(ExtractArgs),
    /// Embed query pairs with a trained surrogate.
    SurrogateEmbed(SurrogateEmbedArgs),
    /// Run one attack end to end against a setup config.
    Simulate(SimulateArgs),
    /// Check a suspect embedding space for the watermark.
    Verify(VerifyArgs),
    /// Find which registered user's transform a suspect space carries.
    Identify(IdentifyArgs),
    /// Write the per-pair statistics of a verification report as CSV.
    ExportCsv(ExportCsvArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Corpus spec JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Class draws used to tally frequencies.
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Catalog JSON to write; prototypes go to the matching `.embf`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildTriggersArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long, default_value_t = 26)]
    pub classes: usize,
    #[arg(long, value_enum, default_value_t = BandArg::High)]
    pub band: BandArg,
    #[arg(long, default_value_t = 128)]
    pub pairs: usize,
    #[arg(long, default_value_t = 3)]
    pub max_classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BandArg {
    High,
    Moderate,
    All,
}

impl From<BandArg> for FrequencyBand {
    fn from(b: BandArg) -> Self {
        match b {
            BandArg::High => FrequencyBand::High,
            BandArg::Moderate => FrequencyBand::Moderate,
            BandArg::All => FrequencyBand::All,
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildQuerysetArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub pairs: usize,
    #[arg(long, default_value_t = 3)]
    pub max_classes: usize,
    /// Pair ids are `<prefix>-NNNN`.
    #[arg(long, default_value = "benign")]
    pub prefix: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Training config JSON; replaces the preset.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// 0 returns the seeded initialization.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_retraction: bool,
}

impl TrainArgs {
    pub fn config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.train_config {
            Some(p) => serde_json::from_slice(&fs::read(p)?)?,
            None => match self.preset {
                Preset::Desk => TrainConfig::desk(),
                Preset::Full => TrainConfig::full(),
            },
        };
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.learning_rate = lr;
        }
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.no_retraction {
            cfg.retraction_enabled = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainWatermarkArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub triggers: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
    /// WMT1 file to write; metadata goes to `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AddUserArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub triggers: PathBuf,
    #[arg(long)]
    pub user_id: String,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct SetupArgs {
    #[command(flatten)]
    pub source: SetupSource,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Only write `setup.json`.
    #[arg(long)]
    pub config_only: bool,
}

#[derive(Debug, Args)]
pub struct SetupSource {
    /// Setup config JSON (see `configs/`); replaces the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Seed for the preset.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SetupSource {
    pub fn config(&self) -> Result<SetupConfig> {
        Ok(match &self.config {
            Some(p) => serde_json::from_slice(&fs::read(p)?)?,
            None => match self.preset {
                Preset::Desk => SetupConfig::desk(self.seed),
                Preset::Full => SetupConfig::full(self.seed),
            },
        })
    }
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    /// Query or trigger files; repeat to concatenate.
    #[arg(long, required = true)]
    pub pairs: Vec<PathBuf>,
    /// Serve through this transform instead of the raw encoder.
    #[arg(long)]
    pub transform: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub transform: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured bind address.
    #[arg(long)]
    pub bind: Option<String>,
}

#[derive(Debug, Args)]
pub struct StealArgs {
    #[arg(long)]
    pub endpoint: String,
    #[arg(long, env = "EMBMARK_API_KEY", hide_env_values = true)]
    pub api_key: String,
    #[arg(long, required = true)]
    pub pairs: Vec<PathBuf>,
    /// EMBF file to write; the query list goes to `<out>.queries.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub batch_pairs: usize,
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    #[arg(long, default_value_t = 5)]
    pub attempts: u32,
    /// First retry delay in milliseconds.
    #[arg(long, default_value_t = 200)]
    pub backoff_ms: u64,
    /// Stop after this many batches; rerun to resume.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    /// Stolen embeddings (EMBF).
    #[arg(long)]
    pub provided: PathBuf,
    /// Queries behind the stolen embeddings; defaults to `<provided>.queries.json`.
    #[arg(long)]
    pub pairs: Vec<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long)]
    pub input_dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model JSON; the MSE curve goes to `<out>.mse.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SurrogateEmbedArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long, required = true)]
    pub pairs: Vec<PathBuf>,
    /// Cyclically shift every output vector by one coordinate.
    #[arg(long)]
    pub shift: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    DirectCopy,
    Extraction,
    ExtractionThenShift,
    Identity,
}

impl From<KindArg> for AttackKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::DirectCopy => AttackKind::DirectCopy,
            KindArg::Extraction => AttackKind::Extraction,
            KindArg::ExtractionThenShift => AttackKind::ExtractionThenShift,
            KindArg::Identity => AttackKind::Identity,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: SetupSource,
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 4096)]
    pub duplicate_set_size: usize,
    #[arg(long)]
    pub surrogate_epochs: Option<usize>,
    /// Scenario report JSON; the MSE curve goes to `<out>.mse.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub stealer: PathBuf,
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub triggers: PathBuf,
    /// Enables the distribution check.
    #[arg(long, requires = "benign")]
    pub transform: Option<PathBuf>,
    /// Benign query file for the distribution check.
    #[arg(long, requires = "transform")]
    pub benign: Option<PathBuf>,
    #[arg(long)]
    pub p_threshold: Option<f64>,
    #[arg(long)]
    pub delta_cos_threshold: Option<f64>,
    #[arg(long)]
    pub c_avg_threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exit with code 3 on an infringing verdict.
    #[arg(long)]
    pub fail_on_infringe: bool,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub stealer: PathBuf,
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub benign: PathBuf,
    /// Score CSV (one row, one column per user).
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportCsvArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// A verification report with the per-pair trigger statistics behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(flatten)]
    pub report: VerificationReport,
    pub stealer_stats: PairStatList,
    pub original_stats: PairStatList,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?)
}

fn read_triggers(path: &Path) -> Result<TriggerSet> {
    Ok(TriggerSet::from_json(&fs::read_to_string(path)?)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(value)?)
}

pub fn run(command: Command) -> Result<i32> {
    match command {
        Command::GenCorpus(a) => {
            let mut spec: CorpusSpec = match &a.config {
                Some(p) => serde_json::from_slice(&fs::read(p)?)?,
                None => CorpusSpec::default(),
            };
            if let Some(v) = a.classes {
                spec.num_classes = v;
            }
            if let Some(v) = a.dim {
                spec.dim = v;
            }
            if let Some(v) = a.noise_sigma {
                spec.noise_sigma = v;
            }
            if let Some(v) = a.draws {
                spec.num_pairs = v;
            }
            if let Some(v) = a.seed {
                spec.seed = v;
            }
            let catalog = gen_catalog(&spec)?;
            catalog.save(&a.out)?;
            println!(
                "wrote {} classes of dimension {} to {}",
                catalog.len(),
                catalog.dim(),
                a.out.display()
            );
        }
        Command::BuildTriggers(a) => {
            let catalog = ClassCatalog::load(&a.catalog)?;
            let classes =
                select_trigger_classes(&catalog, a.classes, a.band.into(), mix(a.seed, 0))?;
            let set = build_trigger_set(&classes, a.pairs, a.max_classes, mix(a.seed, 1))?;
            write_atomic(&a.out, set.to_json()?.as_bytes())?;
            println!(
                "wrote {} trigger pairs over {} classes to {}",
                set.len(),
                classes.len(),
                a.out.display()
            );
        }
        Command::BuildQueryset(a) => {
            let catalog = ClassCatalog::load(&a.catalog)?;
            let pairs = sample_benign_pairs(&catalog, a.pairs, a.max_classes, &a.prefix, a.seed)?;
            write_pairs(&a.out, &pairs)?;
            println!("wrote {} pairs to {}", pairs.len(), a.out.display());
        }
        Command::TrainWatermark(a) => {
            let catalog = ClassCatalog::load(&a.catalog)?;
            let triggers = read_triggers(&a.triggers)?;
            let cfg = a.train.config()?;
            let w = train_on_triggers(&catalog, &triggers, &cfg)?;
            save_transform(&a.out, &w)?;
            let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6e}"));
            println!(
                "epochs {} loss {} -> {} residual {:.6e}",
                w.trained_epochs,
                fmt(w.initial_loss),
                fmt(w.final_loss),
                w.orthogonality_residual
            );
        }
        Command::AddUser(a) => {
            let catalog = ClassCatalog::load(&a.catalog)?;
            let triggers = read_triggers(&a.triggers)?;
            let cfg = a.train.config()?;
            let (key, _) = register_user(&a.registry, &catalog, &triggers, &cfg, &a.user_id)?;
            println!("{key}");
        }
        Command::Setup(a) => {
            let cfg = a.source.config()?;
            if a.config_only {
                write_json(&a.out.join("setup.json"), &cfg)?;
                return Ok(EXIT_OK);
            }
            let setup = build_setup(&cfg)?;
            fs::create_dir_all(&a.out)?;
            setup.catalog.save(a.out.join("catalog.json"))?;
            write_atomic(
                &a.out.join("triggers.json"),
                setup.triggers.to_json()?.as_bytes(),
            )?;
            write_pairs(&a.out.join("benign.json"), &setup.benign)?;
            save_transform(&a.out.join("watermark.wmt"), &setup.transform)?;
            write_embf(a.out.join("original.embf"), &setup.original_space()?)?;
            write_json(&a.out.join("setup.json"), &cfg)?;
            println!(
                "setup in {}: {} triggers, {} benign pairs, residual {:.3e}",
                a.out.display(),
                setup.triggers.len(),
                setup.benign.len(),
                setup.transform.orthogonality_residual
            );
        }
        Command::Embed(a) => {
            let catalog = ClassCatalog::load(&a.catalog)?;
            let pairs = read_pairs(&a.pairs)?;
            let mut space = Encoder::for_catalog(&catalog).embed_pairs(&pairs)?;
            if let Some(t) = &a.transform {
                space = apply_transform(&load_transform(t)?, &space)?;
            }
            write_embf(&a.out, &space)?;
            println!("wrote {} pairs to {}", space.len(), a.out.display());
        }
        Command::Inject(a) => {
            let space = apply_transform(&load_transform(&a.transform)?, &read_embf(&a.input)?)?;
            write_embf(&a.out, &space)?;
            println!("wrote {} pairs to {}", space.len(), a.out.display());
        }
        Command::Serve(a) => {
            let mut cfg = ServiceConfig::load(&a.config)?;
            if let Some(b) = a.bind {
                cfg.bind = b;
            }
            let admin = std::env::var(ADMIN_KEY_ENV).ok().filter(|k| !k.is_empty());
            if admin.is_none() {
                log::warn!("{ADMIN_KEY_ENV} is not set; user registration is disabled");
            }
            runtime()?.block_on(async {
                let mut svc = start(cfg, admin, None).await?;
                println!("listening on {}", svc.url());
                svc.ready().await?;
                tokio::select! {
                    r = &mut svc.server => r.map_err(|e| EaasError::Config(e.to_string()))??,
                    _ = tokio::signal::ctrl_c() => log::info!("shutting down"),
                }
                Ok::<_, EaasError>(())
            })?;
        }
        Command::Steal(a) => {
            let pairs = read_pairs(&a.pairs)?;
            let opts = StealOptions {
                batch_pairs: a.batch_pairs,
                max_in_flight: a.concurrency,
                max_attempts: a.attempts.max(1),
                backoff: Duration::from_millis(a.backoff_ms),
                stop_after: a.stop_after,
            };
            let client = Client::new(&a.endpoint, &a.api_key)?;
            let outcome = runtime()?.block_on(steal(&client, &pairs, &a.out, &opts))?;
            if outcome.space.is_some() {
                println!("wrote {} pairs to {}", pairs.len(), outcome.embf.display());
            } else {
                println!(
                    "stopped after {}/{} batches; rerun to resume",
                    outcome.completed_batches, outcome.total_batches
                );
            }
        }
        Command::Extract(a) => {
            let catalog = ClassCatalog::load(&a.catalog)?;
            let provided = read_embf(&a.provided)?;
            let paths = if a.pairs.is_empty() {
                vec![sidecar(&a.provided, QUERIES_SUFFIX)]
            } else {
                a.pairs.clone()
            };
            let pairs = read_pairs(&paths)?;
            let ids: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
            let targets = provided.subset(&ids)?;
            let d = catalog.dim();
            let cfg = SurrogateConfig {
                epochs: a.epochs,
                learning_rate: a.lr,
                input_dim: a.input_dim,
                seed: mix(a.seed, 3),
                ..SurrogateConfig::default()
            };
            let stealer = StealerEncoder::new(d, cfg.input_dim_for(d), mix(a.seed, 2))?;
            let feats = stealer.features(&Encoder::for_catalog(&catalog), &pairs)?;
            let model = extract_surrogate(&feats, &targets, stealer, &cfg)?;
            write_atomic(&a.out, model.to_json()?.as_bytes())?;
            let mut csv = Vec::new();
            write_mse_csv(&mut csv, &model.training_log)?;
            write_atomic(&sidecar(&a.out, ".mse.csv"), &csv)?;
            println!(
                "trained on {} pairs, final mse {:.6e}",
                pairs.len(),
                model.final_mse()
            );
        }
        Command::SurrogateEmbed(a) => {
            let catalog = ClassCatalog::load(&a.catalog)?;
            let model = SurrogateModel::from_json(&fs::read_to_string(&a.model)?)?;
            let pairs = read_pairs(&a.pairs)?;
            let mut space = surrogate_service(&model, &Encoder::for_catalog(&catalog), &pairs)?;
            if a.shift {
                space = dimension_shift(&space)?;
            }
            write_embf(&a.out, &space)?;
            println!("wrote {} pairs to {}", space.len(), a.out.display());
        }
        Command::Simulate(a) => {
            let cfg = a.source.config()?;
            let setup = build_setup(&cfg)?;
            let mut scenario = AttackScenario::new(a.kind.into(), cfg.seed);
            scenario.duplicate_set_size = a.duplicate_set_size;
            if let Some(e) = a.surrogate_epochs {
                scenario.surrogate.epochs = e;
            }
            let report = run_scenario(&scenario, &setup.victim(), None)?;
            write_json(&a.out, &report)?;
            if !report.mse_curve.is_empty() {
                let mut csv = Vec::new();
                write_mse_csv(&mut csv, &report.mse_curve)?;
                write_atomic(&sidecar(&a.out, ".mse.csv"), &csv)?;
            }
            print_report(&report.report);
            for n in &report.notes {
                println!("note: {n}");
            }
        }
        Command::Verify(a) => {
            let stealer = read_embf(&a.stealer)?;
            let original = read_embf(&a.original)?;
            let triggers = read_triggers(&a.triggers)?;
            let trigger_ids = triggers.ids();
            let mut th = Thresholds::default();
            if let Some(v) = a.p_threshold {
                th.p_value = v;
            }
            if let Some(v) = a.delta_cos_threshold {
                th.delta_cos = v;
            }
            if let Some(v) = a.c_avg_threshold {
                th.c_avg = v;
            }
            let (transform, benign_ids) = match (&a.transform, &a.benign) {
                (Some(t), Some(b)) => {
                    let ids: Vec<String> = read_pairs(std::slice::from_ref(b))?
                        .into_iter()
                        .map(|p| p.id)
                        .collect();
                    (Some(load_transform(t)?), ids)
                }
                _ => (None, Vec::new()),
            };
            let check = transform.as_ref().map(|t| DistributionCheck {
                transform: t,
                benign_ids: &benign_ids,
            });
            let report = verify(&stealer, &original, &trigger_ids, check, &th)?;
            print_report(&report);
            if let Some(out) = &a.out {
                let file = ReportFile {
                    stealer_stats: pair_stats(
                        &stealer,
                        &trigger_ids,
                        StatSource::Stealer,
                        StatSubset::Trigger,
                    )?,
                    original_stats: pair_stats(
                        &original,
                        &trigger_ids,
                        StatSource::Original,
                        StatSubset::Trigger,
                    )?,
                    report: report.clone(),
                };
                write_json(out, &file)?;
            }
            if a.fail_on_infringe && report.verdict == Verdict::Infringing {
                return Ok(EXIT_INFRINGING);
            }
        }
        Command::Identify(a) => {
            let stealer = read_embf(&a.stealer)?;
            let original = read_embf(&a.original)?;
            let registry = load_registry(&a.registry)?;
            let benign: Vec<String> = read_pairs(std::slice::from_ref(&a.benign))?
                .into_iter()
                .map(|p| p.id)
                .collect();
            let found = identify_user(&stealer, &original, &registry, &benign)?;
            if let Some(path) = &a.scores {
                let mut csv = Vec::new();
                let label = a.stealer.display().to_string();
                write_score_csv(
                    &mut csv,
                    &[label],
                    &registry.user_ids(),
                    std::slice::from_ref(&found.scores),
                )?;
                write_atomic(path, &csv)?;
            }
            println!("{}", found.user_id);
        }
        Command::ExportCsv(a) => {
            let file: ReportFile = serde_json::from_slice(&fs::read(&a.report)?)?;
            let mut csv = Vec::new();
            write_pair_csv(&mut csv, &file.stealer_stats, &file.original_stats)?;
            write_atomic(&a.out, &csv)?;
            println!(
                "wrote {} rows to {}",
                file.stealer_stats.len(),
                a.out.display()
            );
        }
    }
    Ok(EXIT_OK)
}

fn print_report(r: &VerificationReport) {
    println!("verdict: {}", r.verdict);
    println!("delta_cos: {:.6}", r.delta_cos);
    println!("delta_l2: {:.6}", r.delta_l2);
    println!("ks_statistic: {:.6}", r.ks_statistic);
    println!("p_value: {:.6e}", r.p_value);
    match r.c_avg {
        Some(c) => println!("c_avg: {c:.6}"),
        None => println!("c_avg: -"),
    }
}
