//! The `peekaboom` command line.
//!
//! Exit status: 0 on success, 1 on a domain error, 2 on a usage error.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use peekaboom_core::autoeval::{run_job, AutoEvalJob, ScoreModel};
use peekaboom_core::classifier::{train, SmoothGradParams, TrainConfig};
use peekaboom_core::crowdgame::{CampaignConfig, SharedCampaign};
use peekaboom_core::dataset::Split;
use peekaboom_core::masking::{ExposureSchedule, FillStrategy};
use peekaboom_core::metrics::{
    kendall, read_curves_csv, spearman, write_curves_csv, write_scores_csv, AccuracyCurve, ScoreTable, SchemeTag,
    TrialResult,
};
use peekaboom_core::pipeline::{builtin_saliency, DEFAULT_METHODS};
use peekaboom_core::remote::{PluginClient, RemoteClassifier};
use peekaboom_core::saliency::rank_pixels;
use peekaboom_core::simcrowd::{
    generate_synthetic_dataset, run_concurrent_campaign, run_simulated_campaign, uniform_population, LocalBackend,
    SimKnowledge, SimSummary, SyntheticDatasetConfig,
};
use peekaboom_core::storage::{read_log, replay, Clock, Durability, LogicalClock, SystemClock};

use crate::api::{self, AppState, BIND_ENV, DEFAULT_SESSION_TTL};
use crate::client::HttpBackend;
use crate::crowd_report;
use crate::store::{Store, STORE_ENV};

#[derive(Debug, Parser)]
#[command(name = "peekaboom", version, about = "Crowd and automated evaluation of saliency methods")]
pub struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = STORE_ENV, default_value = "peekaboom-store")]
    pub store: PathBuf,
    /// TOML file with [dataset], [train], [smoothgrad], [campaign], [simulate] and [autoeval] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides every seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Timestamp events with a counter instead of the wall clock.
    #[arg(long, global = true)]
    pub logical_clock: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with object masks.
    GenSynth {
        #[arg(long, default_value = "synth")]
        dataset: String,
    },
    /// Train the built-in classifier on a dataset's train split.
    Train(ModelArgs),
    /// Compute saliency maps for every image of a dataset.
    Saliency {
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Plugin endpoint; maps are requested for the ground-truth class.
        #[arg(long)]
        plugin: Option<String>,
    },
    /// Create a campaign over a dataset's images and saliency maps.
    CampaignCreate {
        #[arg(long)]
        campaign: String,
        #[arg(long, default_value = "synth")]
        dataset: String,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Serve the game API for every campaign in the store.
    Serve {
        #[arg(long, env = BIND_ENV, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long, default_value_t = DEFAULT_SESSION_TTL.as_secs())]
        session_ttl_secs: u64,
    },
    /// Play a campaign to completion with simulated workers.
    Simulate {
        #[arg(long)]
        campaign: String,
        /// Play against a running server instead of in-process.
        #[arg(long)]
        url: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run ROAR, KAR, ROAE and KAE and write curve and score files.
    Autoeval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long, value_enum)]
        fill: Option<FillArg>,
        /// Output directory (default <store>/results/<dataset>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Plugin endpoint used as the fixed classifier of ROAE and KAE.
        #[arg(long)]
        plugin: Option<String>,
        #[arg(long, default_value = "default")]
        plugin_model: String,
    },
    /// Crowd scores of a campaign, optionally correlated with automated curves.
    Metrics {
        #[arg(long)]
        campaign: String,
        /// curves.csv written by autoeval.
        #[arg(long)]
        automated: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a campaign's log, replayed state, trials and crowd metrics.
    Export {
        #[arg(long)]
        campaign: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "synth")]
    pub dataset: String,
    #[arg(long, default_value = "model")]
    pub model: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillArg {
    /// Per-channel mean of the train split.
    Mean,
    Black,
    Gray,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub dataset: SyntheticDatasetConfig,
    pub train: TrainConfig,
    pub smoothgrad: SmoothGradParams,
    pub saliency: SaliencySection,
    pub campaign: CampaignSection,
    pub simulate: SimulateSection,
    pub autoeval: AutoevalSection,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaliencySection {
    pub methods: Vec<String>,
    pub seed: u64,
}

impl Default for SaliencySection {
    fn default() -> Self {
        Self {
            methods: DEFAULT_METHODS.iter().map(|s| s.to_string()).collect(),
            seed: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub methods: Option<Vec<String>>,
    pub schedule: ExposureSchedule,
    pub quota: u32,
    pub pairs_per_worker: usize,
    pub n_wrong: usize,
    pub ui_fill: FillStrategy,
    pub seed: u64,
}

impl Default for CampaignSection {
    fn default() -> Self {
        let d = CampaignConfig::new("", "", Vec::new());
        Self {
            methods: None,
            schedule: d.schedule,
            quota: d.quota,
            pairs_per_worker: d.pairs_per_worker,
            n_wrong: d.n_wrong,
            ui_fill: d.ui_fill,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub workers: usize,
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub guess: f64,
    pub threads: usize,
    pub seed: u64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            workers: 100,
            theta_lo: 0.1,
            theta_hi: 0.9,
            guess: 0.1,
            threads: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoevalSection {
    pub schemes: Vec<String>,
    pub methods: Option<Vec<String>>,
    pub schedule: ExposureSchedule,
    pub fill: FillArg,
    pub gray: f64,
}

impl Default for AutoevalSection {
    fn default() -> Self {
        Self {
            schemes: SchemeTag::AUTOMATED.iter().map(|s| s.as_str().to_string()).collect(),
            methods: None,
            schedule: ExposureSchedule::default(),
            fill: FillArg::Mean,
            gray: 0.5,
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg: FileConfig = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => FileConfig::default(),
        };
        if let Some(s) = seed.or(cfg.seed) {
            cfg.dataset.seed = s;
            cfg.train.seed = s;
            cfg.smoothgrad.seed = s;
            cfg.saliency.seed = s;
            cfg.campaign.seed = s;
            cfg.simulate.seed = s;
        }
        Ok(cfg)
    }
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref(), cli.seed)?;
    let store = Store::new(&cli.store);
    let clock = |start: u64| -> Box<dyn Clock> {
        if cli.logical_clock {
            Box::new(LogicalClock::starting_at(start))
        } else {
            Box::new(SystemClock)
        }
    };
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::GenSynth { dataset } => {
            let data = generate_synthetic_dataset(&cfg.dataset)?;
            store.save_dataset(&dataset, &data)?;
            writeln!(
                out,
                "dataset {dataset}: {} classes, {} train, {} test images",
                data.class_names().len(),
                data.train.len(),
                data.test.len()
            )?;
        }
        Command::Train(m) => {
            let (_, data) = store.load_dataset(&m.dataset)?;
            let (model, report) = train(&data.train.items, data.train.n_classes(), &cfg.train)?;
            let test_acc = model.accuracy(&data.test.items)?;
            store.save_model(&m.model, &model)?;
            writeln!(
                out,
                "model {}: loss {:.4}, train accuracy {:.4}, test accuracy {:.4}",
                m.model, report.final_loss, report.train_accuracy, test_acc
            )?;
        }
        Command::Saliency { model, methods, plugin } => {
            let (_, data) = store.load_dataset(&model.dataset)?;
            let methods = methods.unwrap_or(cfg.saliency.methods.clone());
            let mut n = 0;
            match plugin {
                Some(url) => {
                    let client = PluginClient::new(&url, Duration::from_secs(60))?;
                    for method in &methods {
                        for item in data.items() {
                            let mut map = client.saliency(&item.image, method, item.label)?;
                            map.method_id = method.clone();
                            map.image_id = item.id.clone();
                            store.save_saliency(&model.dataset, &map)?;
                            n += 1;
                        }
                    }
                }
                None => {
                    let clf = if methods.iter().any(|m| m == "vanilla" || m == "smoothgrad") {
                        Some(store.load_model(&model.model)?)
                    } else {
                        None
                    };
                    for method in &methods {
                        for item in data.items() {
                            let map = builtin_saliency(
                                method,
                                clf.as_ref(),
                                item,
                                data.mask(&item.id),
                                &cfg.smoothgrad,
                                cfg.saliency.seed,
                            )?;
                            store.save_saliency(&model.dataset, &map)?;
                            n += 1;
                        }
                    }
                }
            }
            writeln!(out, "wrote {n} saliency maps for methods {}", methods.join(","))?;
        }
        Command::CampaignCreate {
            campaign,
            dataset,
            methods,
            split,
        } => {
            let c = &cfg.campaign;
            let methods = methods
                .or(c.methods.clone())
                .unwrap_or(cfg.saliency.methods.clone());
            let config = CampaignConfig {
                schedule: c.schedule.clone(),
                quota: c.quota,
                pairs_per_worker: c.pairs_per_worker,
                n_wrong: c.n_wrong,
                seed: c.seed,
                ui_fill: c.ui_fill.clone(),
                ..CampaignConfig::new(&campaign, &dataset, methods)
            };
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            if store.campaign_log(&campaign).exists() {
                bail!("campaign {campaign} already exists");
            }
            let created = store.create_campaign(config, split, clock(0), Durability::Sync)?;
            writeln!(out, "campaign {campaign}: {} pairs", created.state().n_pairs())?;
        }
        Command::Serve { bind, session_ttl_secs } => {
            let state = AppState::open(store, Duration::from_secs(session_ttl_secs))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&bind)
                    .await
                    .with_context(|| format!("binding {bind}"))?;
                tracing::info!(addr = %listener.local_addr()?, "serving");
                api::serve(listener, state).await?;
                anyhow::Ok(())
            })?;
        }
        Command::Simulate {
            campaign,
            url,
            workers,
            threads,
        } => {
            let s = &cfg.simulate;
            let population = uniform_population(workers.unwrap_or(s.workers), s.theta_lo, s.theta_hi, s.guess, s.seed)?;
            let (config, assets) = store.campaign_assets(&campaign)?;
            let knowledge = SimKnowledge::new(&assets, &config.schedule)?;
            let summary: SimSummary = match url {
                Some(url) => {
                    let mut backend = HttpBackend::new(&url, &campaign).map_err(|e| anyhow!("{e}"))?;
                    run_simulated_campaign(&mut backend, &knowledge, &population)?
                }
                None => {
                    let last_ts = read_log(&store.campaign_log(&campaign))?.last().map_or(0, |e| e.ts_ms);
                    let c = store.open_campaign(&campaign, clock(last_ts + 1), Durability::Flush)?;
                    let shared = SharedCampaign::new(c);
                    match threads.unwrap_or(s.threads) {
                        0 | 1 => run_simulated_campaign(&mut LocalBackend(shared), &knowledge, &population)?,
                        t => run_concurrent_campaign(&shared, &knowledge, &population, t)?,
                    }
                }
            };
            writeln!(
                out,
                "campaign {campaign}: {} workers, {} trials, {} answers",
                summary.workers, summary.trials, summary.answers
            )?;
        }
        Command::Autoeval {
            model,
            schemes,
            methods,
            fill,
            out: out_dir,
            plugin,
            plugin_model,
        } => {
            let a = &cfg.autoeval;
            let (_, data) = store.load_dataset(&model.dataset)?;
            let schemes: Vec<SchemeTag> = schemes
                .unwrap_or(a.schemes.clone())
                .iter()
                .map(|s| s.parse::<SchemeTag>().map_err(|e| anyhow!(e)))
                .collect::<Result<_>>()?;
            if let Some(s) = schemes.iter().find(|s| !SchemeTag::AUTOMATED.contains(s)) {
                bail!("{s} is not an automated scheme");
            }
            let methods = methods
                .or(a.methods.clone())
                .unwrap_or(cfg.saliency.methods.clone());
            let fill = match fill.unwrap_or(a.fill) {
                FillArg::Mean => FillStrategy::dataset_mean(data.train.items.iter().map(|it| &it.image))
                    .ok_or_else(|| anyhow!("train split is empty"))?,
                FillArg::Black => FillStrategy::ConstantBlack,
                FillArg::Gray => FillStrategy::ConstantGray { value: a.gray },
            };
            let fixed: Box<dyn ScoreModel> = match plugin {
                Some(url) => Box::new(RemoteClassifier {
                    client: PluginClient::new(&url, Duration::from_secs(60))?,
                    model: plugin_model,
                    n_classes: data.class_names().len(),
                    batch_size: 64,
                }),
                None => Box::new(store.load_model(&model.model)?),
            };
            let mut curves: Vec<AccuracyCurve> = Vec::new();
            for &scheme in &schemes {
                for method in &methods {
                    let mut rankings = BTreeMap::new();
                    for item in data.items() {
                        let map = store.load_saliency(&model.dataset, method, &item.id)?;
                        rankings.insert(item.id.clone(), rank_pixels(&map));
                    }
                    let job = AutoEvalJob {
                        scheme,
                        method_id: method.clone(),
                        schedule: a.schedule.clone(),
                        fill: fill.clone(),
                        train: cfg.train.clone(),
                    };
                    let curve = run_job(
                        &job,
                        fixed.as_ref(),
                        &data.train.items,
                        &data.test.items,
                        data.class_names().len(),
                        &rankings,
                    )?;
                    writeln!(out, "{scheme} {method}: auc {:.4}", curve.auc())?;
                    curves.push(curve);
                }
            }
            let dir = out_dir.unwrap_or_else(|| store.root().join("results").join(&model.dataset));
            write_tables(&dir, "", &curves, &ScoreTable::from_curves(&curves)?)?;
            writeln!(out, "wrote {}", dir.display())?;
        }
        Command::Metrics {
            campaign,
            automated,
            out: out_dir,
        } => {
            let state = store.campaign_state(&campaign)?;
            let (table, curves) = crowd_report(&state)?;
            print_table(&mut out, &table)?;
            if let Some(path) = automated {
                let auto = read_curves_csv(fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?)?;
                let auto_table = ScoreTable::from_curves(&auto)?;
                print_correlations(&mut out, &table, &auto_table)?;
            }
            if let Some(dir) = out_dir {
                write_tables(&dir, "crowd_", &curves, &table)?;
            }
        }
        Command::Export { campaign, out: dir } => {
            let events = read_log(&store.campaign_log(&campaign))?;
            let state = replay(&events)?;
            fs::create_dir_all(&dir)?;
            let mut log = String::new();
            for e in &events {
                log.push_str(&e.to_line());
                log.push('\n');
            }
            fs::write(dir.join("events.jsonl"), log)?;
            fs::write(dir.join("state.json"), serde_json::to_string_pretty(&state)? + "\n")?;
            let mut w = csv_writer(&dir.join("trials.csv"))?;
            w.write_record(["trial_id", "worker_id", "image_id", "method", "result", "rate"])?;
            for t in state.completed_trials() {
                let (result, rate) = match t.result {
                    TrialResult::Correct { rate } => ("correct", rate.to_string()),
                    TrialResult::Exhausted => ("exhausted", String::new()),
                };
                w.write_record([&t.trial_id.to_string(), &t.worker_id, &t.image_id, &t.method_id, result, &rate])?;
            }
            w.flush()?;
            match crowd_report(&state) {
                Ok((table, curves)) => write_tables(&dir, "crowd_", &curves, &table)?,
                Err(e) => writeln!(out, "no crowd metrics: {e}")?,
            }
            writeln!(out, "exported {} events to {}", events.len(), dir.display())?;
        }
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?)
}

fn write_tables(dir: &Path, prefix: &str, curves: &[AccuracyCurve], table: &ScoreTable) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_curves_csv(curves, fs::File::create(dir.join(format!("{prefix}curves.csv")))?)?;
    write_scores_csv(table, fs::File::create(dir.join(format!("{prefix}scores.csv")))?)?;
    Ok(())
}

fn print_table(out: &mut impl Write, table: &ScoreTable) -> Result<()> {
    writeln!(out, "{:<6} {:<12} {:>8} {:>4}", "scheme", "method", "auc", "rank")?;
    for r in &table.rows {
        writeln!(out, "{:<6} {:<12} {:>8.4} {:>4}", r.scheme.as_str(), r.method_id, r.auc, r.rank)?;
    }
    Ok(())
}

/// Rank agreement between the crowd and each automated scheme over the
/// methods both cover.
fn print_correlations(out: &mut impl Write, crowd: &ScoreTable, auto: &ScoreTable) -> Result<()> {
    let mut schemes: Vec<SchemeTag> = auto.rows.iter().map(|r| r.scheme).collect();
    schemes.dedup();
    for scheme in schemes {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for row in &crowd.rows {
            if let Some(other) = auto.rows.iter().find(|r| r.scheme == scheme && r.method_id == row.method_id) {
                a.push(row.rank as f64);
                b.push(other.rank as f64);
            }
        }
        match (spearman(&a, &b), kendall(&a, &b)) {
            (Ok(rho), Ok(tau)) => {
                let show = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
                writeln!(out, "crowd vs {scheme}: spearman {}, kendall {}", show(rho), show(tau))?;
            }
            (Err(e), _) | (_, Err(e)) => writeln!(out, "crowd vs {scheme}: {e}")?,
        }
    }
    Ok(())
}
