//! `spirit`: synthetic data, training, evaluation and experiment sweeps for
//! solar irradiance nowcasting and forecasting from sky-image embeddings.

mod config;
mod images;
mod report;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use spirit_core::dataset::{self, TargetKind, WeekSelection};
use spirit_core::embeddings::{self, EmbeddingStore, StubEncoderConfig};
use spirit_core::features::{self, FeatureConfig};
use spirit_core::forecaster::{self, ForecasterModel};
use spirit_core::gbdt::{self, GbdtModel};
use spirit_core::harness::{
    self, compare_variants, AblationKind, BaselineKind, ComparisonScope, ExperimentKind, ExperimentOutput, InputMask, Nowcaster,
    PipelineConfig, Regressor, RunSink, SiteData, SpiritArm, SweepSpec, Task, Tasks,
};
use spirit_core::metrics::MetricsReport;
use spirit_core::solar::GeoLocation;
use spirit_core::synthetic::{self, SitePreset};
use spirit_core::{Error, ErrorKind};

use config::{Effective, Layers, Profile};

const SYNTH_CONFIG_FILE: &str = "synth.json";

#[derive(Parser)]
#[command(name = "spirit", version, about = "Solar irradiance nowcasting and forecasting from sky-image embeddings")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON config with optional `profile`, `pipeline` and `synth` sections
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Hyperparameter profile the config file is layered on [default: benchmark]
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// Global seed; falls back to SPIRIT_SEED, then 0
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Record wall-clock seconds in each run's timing.json
    #[arg(long, global = true)]
    timing: bool,
    /// Log progress to stderr (repeat for more detail)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic site: manifest, metadata, embedding store and optionally sky images
    Synth(SynthArgs),
    /// Embed a site's sky images with the deterministic stub encoder
    EmbedStub(EmbedStubArgs),
    /// Write the assembled per-sample feature rows of a site as CSV
    Features(FeaturesArgs),
    /// Train a nowcaster on a site's training split
    TrainNowcast(TrainNowcastArgs),
    /// Train a forecaster on a site's training split
    TrainForecast(TrainForecastArgs),
    /// Evaluate a saved checkpoint on a site
    Eval(EvalArgs),
    /// Train on a source site and evaluate on it and on a target site without adaptation
    ZeroShot(ZeroShotArgs),
    /// Fine-tune source models on increasing numbers of target weeks
    FinetuneSweep(SweepArgs),
    /// Run matched ablation pairs
    Ablate(AblateArgs),
    /// Fit a statistical baseline (arima or var) and score it on the holdout windows
    Baseline(BaselineArgs),
    /// Paired t-test between two variants of persisted runs
    Ttest(TtestArgs),
    /// Aggregate persisted runs into curves, tables and SVG charts
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "source", value_parser = ["source", "target"])]
    preset: String,
    #[arg(long, default_value_t = 60)]
    days: usize,
    #[arg(long)]
    site_id: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, value_parser = ["ghi", "pv"])]
    target_kind: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    lat: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lon: Option<f64>,
    /// First local date, YYYY-MM-DD
    #[arg(long)]
    start: Option<chrono::NaiveDate>,
    #[arg(long)]
    long_run_mean: Option<f64>,
    /// Render square sky images of this side length into images/
    #[arg(long)]
    render: Option<usize>,
}

#[derive(Args)]
struct EmbedStubArgs {
    #[arg(long)]
    site: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    grid: usize,
    #[arg(long)]
    normalize: bool,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    site: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Use this embedding store instead of the site's own
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Full,
    Memorizing,
    NoCovariates,
}

impl From<MaskArg> for InputMask {
    fn from(m: MaskArg) -> Self {
        match m {
            MaskArg::Full => InputMask::Full,
            MaskArg::Memorizing => InputMask::Memorizing,
            MaskArg::NoCovariates => InputMask::NoFutureCovariates,
        }
    }
}

#[derive(Args)]
struct TrainNowcastArgs {
    #[arg(long)]
    site: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = ["gbdt", "knn"])]
    regressor: Option<String>,
    #[arg(long, value_enum, default_value = "full")]
    mask: MaskArg,
}

#[derive(Args)]
struct TrainForecastArgs {
    #[arg(long)]
    site: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    mask: MaskArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Holdout,
}

#[derive(Args)]
struct EvalArgs {
    /// A nowcaster (.spgb) or forecaster (.spfc) checkpoint
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    site: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
    #[arg(long, value_enum, default_value = "full")]
    mask: MaskArg,
    /// Write the metrics JSON here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SeedList {
    /// Comma-separated training seeds [default: the global seed]
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct ZeroShotArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    runs: PathBuf,
    #[command(flatten)]
    seeds: SeedList,
    #[arg(long, default_value = "both", value_parser = ["nowcast", "forecast", "both"])]
    tasks: String,
    /// Skip the memorizing control
    #[arg(long)]
    no_control: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    runs: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    weeks: Vec<usize>,
    #[command(flatten)]
    seeds: SeedList,
    #[arg(long, default_value = "forecast", value_parser = ["nowcast", "forecast", "both"])]
    tasks: String,
    #[arg(long, default_value = "uniform", value_parser = ["uniform", "contiguous"])]
    selection: String,
}

#[derive(Args)]
struct AblateArgs {
    /// no_future_covariates, regressor_variant or stub_vs_file_embeddings
    #[arg(long)]
    kind: String,
    #[arg(long)]
    site: PathBuf,
    /// Stub embedding store for stub_vs_file_embeddings
    #[arg(long)]
    stub_store: Option<PathBuf>,
    #[arg(long)]
    runs: PathBuf,
    #[command(flatten)]
    seeds: SeedList,
}

#[derive(Args)]
struct BaselineArgs {
    /// arima or var
    which: String,
    #[arg(long)]
    site: PathBuf,
    #[arg(long)]
    runs: PathBuf,
    /// Also train and score a SPIRIT forecaster on the same windows
    #[arg(long, conflicts_with = "spirit_model")]
    with_spirit: bool,
    /// Score this forecaster checkpoint on the same windows
    #[arg(long)]
    spirit_model: Option<PathBuf>,
}

#[derive(Args)]
struct TtestArgs {
    #[arg(long)]
    runs: PathBuf,
    /// zero_shot, finetune, ablation or baseline
    #[arg(long)]
    kind: String,
    /// nowcast or forecast
    #[arg(long)]
    task: String,
    #[arg(long)]
    baseline: String,
    #[arg(long)]
    candidate: String,
    /// Evaluation set; inferred when the runs use only one
    #[arg(long)]
    evaluated_on: Option<String>,
    #[arg(long)]
    weeks: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(e) => match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => e.to_string().replace('\n', " "),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as K;
            let _ = e.print();
            return match e.kind() {
                K::DisplayHelp | K::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("spirit: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

/// Shared state resolved from global flags.
struct Ctx {
    layers: Layers,
    profile: Profile,
    seed: u64,
    timing: bool,
}

impl Ctx {
    fn new(g: &Global) -> std::result::Result<Self, Failure> {
        let layers = Layers::load(g.config.as_deref())?;
        let seed = match g.seed {
            Some(s) => s,
            None => match std::env::var("SPIRIT_SEED") {
                Ok(v) => v.trim().parse().map_err(|_| Failure::Usage(format!("SPIRIT_SEED '{v}' is not an unsigned integer")))?,
                Err(_) => 0,
            },
        };
        let profile = layers.profile(g.profile);
        // reject a bad config before any command writes output
        layers.pipeline(profile)?;
        layers.synth(SitePreset::Source, seed, 1)?;
        Ok(Self {
            profile,
            layers,
            seed,
            timing: g.timing,
        })
    }

    fn pipeline(&self) -> std::result::Result<PipelineConfig, Failure> {
        Ok(self.layers.pipeline(self.profile)?)
    }

    fn seeds(&self, list: &SeedList) -> Vec<u64> {
        if list.seeds.is_empty() {
            vec![self.seed]
        } else {
            list.seeds.clone()
        }
    }

    fn sink(&self, runs: &Path) -> RunSink {
        RunSink::new(runs).with_timing(self.timing)
    }

    fn effective<'a>(&self, pipeline: Option<&'a PipelineConfig>, synth: Option<&'a synthetic::SynthSiteConfig>) -> Effective<'a> {
        Effective {
            profile: self.profile,
            seed: self.seed,
            pipeline,
            synth,
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let ctx = Ctx::new(&cli.global)?;
    match cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::EmbedStub(a) => embed_stub(a),
        Command::Features(a) => features_cmd(&ctx, a),
        Command::TrainNowcast(a) => train_nowcast(&ctx, a),
        Command::TrainForecast(a) => train_forecast(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::ZeroShot(a) => zero_shot(&ctx, a),
        Command::FinetuneSweep(a) => finetune_sweep(&ctx, a),
        Command::Ablate(a) => ablate(&ctx, a),
        Command::Baseline(a) => baseline(&ctx, a),
        Command::Ttest(a) => ttest(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn create_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Core(Error::Io { path: dir.to_path_buf(), source: e }))
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Core(Error::Io { path: path.to_path_buf(), source: e }))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    Ok(harness::write_json(path, value)?)
}

fn read_bytes(path: &Path) -> std::result::Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::Core(Error::Io { path: path.to_path_buf(), source: e }))
}

fn load_site(dir: &Path) -> std::result::Result<SiteData, Failure> {
    Ok(SiteData::load(dir)?)
}

/// Seed the site was generated with, when it came from `synth`.
fn data_seed(dir: &Path) -> Option<u64> {
    let cfg: synthetic::SynthSiteConfig = harness::read_json(&dir.join(SYNTH_CONFIG_FILE)).ok()?;
    Some(cfg.seed)
}

fn synth(ctx: &Ctx, a: SynthArgs) -> CmdResult {
    let preset = SitePreset::parse(&a.preset)?;
    let mut cfg = ctx.layers.synth(preset, ctx.seed, a.days)?;
    cfg.days = a.days;
    if let Some(id) = a.site_id {
        cfg.meta.site_id = id;
    }
    if let Some(d) = a.dim {
        cfg.embedding.dim = d;
    }
    if let Some(k) = a.target_kind {
        cfg.meta.target_kind = TargetKind::parse(&k)?;
    }
    if a.lat.is_some() || a.lon.is_some() {
        let lat = a.lat.unwrap_or(cfg.meta.location.latitude());
        let lon = a.lon.unwrap_or(cfg.meta.location.longitude());
        cfg.meta.location = GeoLocation::new(lat, lon)?;
    }
    if let Some(s) = a.start {
        cfg.start_date = s;
    }
    if let Some(m) = a.long_run_mean {
        cfg.cloud.long_run_mean = m;
    }
    if a.render.is_some() {
        cfg.render_size = a.render;
    }
    let out = synthetic::generate_site(&cfg)?;
    let site = SiteData::new(out.dataset, out.store);
    site.save(&a.out)?;
    if let Some(images) = &out.images {
        create_dir(&a.out.join("images"))?;
        for (sample, raster) in site.dataset.samples.iter().zip(images) {
            if let Some(rel) = &sample.image_path {
                images::write_png(&a.out.join(rel), raster)?;
            }
        }
    }
    write_json(&a.out.join(SYNTH_CONFIG_FILE), &cfg)?;
    println!(
        "site {}: {} samples, {} days, embedding dim {}, written to {}",
        site.id(),
        site.dataset.len(),
        cfg.days,
        site.store.dim(),
        a.out.display()
    );
    Ok(())
}

fn embed_stub(a: EmbedStubArgs) -> CmdResult {
    let cfg = StubEncoderConfig {
        grid: a.grid,
        normalize: a.normalize,
    };
    let ds = dataset::load_manifest(&a.site.join(harness::MANIFEST_FILE), &a.site.join(harness::META_FILE))?;
    let mut records = Vec::new();
    for s in &ds.samples {
        let (Some(rel), Some(key)) = (&s.image_path, s.embedding_key) else {
            continue;
        };
        let raster = images::read_png(&a.site.join(rel))?;
        records.push((key, embeddings::stub_encode(&raster, &cfg)?));
    }
    if records.is_empty() {
        return Err(Error::InvalidInput(format!("{}: manifest lists no images", a.site.display())).into());
    }
    let n = records.len();
    let store = EmbeddingStore::from_records(cfg.output_dim(), records)?;
    embeddings::write_store(&a.out, &store)?;
    println!("embedded {n} images into {} (dim {})", a.out.display(), store.dim());
    Ok(())
}

fn feature_names(fc: &FeatureConfig) -> Vec<String> {
    let mut names: Vec<String> = (0..fc.d).map(|i| format!("z{i}")).collect();
    names.extend(["zenith_deg", "azimuth_deg"].map(String::from));
    names.extend(["clearsky_ghi", "clearsky_dni", "clearsky_dhi", "cos_incidence", "poa"].map(String::from));
    if fc.phase_encodings {
        names.extend(["doy_sin", "doy_cos", "tod_sin", "tod_cos"].map(String::from));
    }
    names
}

fn features_cmd(ctx: &Ctx, a: FeaturesArgs) -> CmdResult {
    let cfg = ctx.pipeline()?;
    let mut site = load_site(&a.site)?;
    if let Some(p) = &a.store {
        site.store = embeddings::read_store(p)?;
    }
    let assembled = features::assemble_dataset(&site.dataset, &site.store, &cfg.features);
    let names = feature_names(&assembled.config);
    if names.len() != assembled.config.input_dim() {
        return Err(Error::DimMismatch {
            expected: assembled.config.input_dim(),
            got: names.len(),
        }
        .into());
    }
    let mut text = format!("timestamp_utc,target,{}\n", names.join(","));
    let mut rows = 0;
    for (s, row) in site.dataset.samples.iter().zip(&assembled.rows) {
        if let Some(row) = row {
            let vals: Vec<String> = row.iter().map(f64::to_string).collect();
            text += &format!("{},{},{}\n", dataset::format_timestamp(s.timestamp), s.target, vals.join(","));
            rows += 1;
        }
    }
    write_text(&a.out, &text)?;
    println!("{rows} feature rows of width {} written to {} ({} dropped)", names.len(), a.out.display(), assembled.dropped);
    Ok(())
}

fn print_report(label: &str, r: &MetricsReport) {
    let per: Vec<String> = r.per_horizon.iter().map(|h| format!("{}min {:.3}", h.horizon_minutes, h.metrics.nmap)).collect();
    if per.is_empty() {
        println!("{label}: nMAP {:.3}% MAE {:.3} RMSE {:.3} R2 {:.4} (n={})", r.overall.nmap, r.overall.mae, r.overall.rmse, r.overall.r2, r.overall.n);
    } else {
        println!("{label}: nMAP {:.3}% [{}] (n={})", r.overall.nmap, per.join(", "), r.overall.n);
    }
}

fn train_nowcast(ctx: &Ctx, a: TrainNowcastArgs) -> CmdResult {
    let mut cfg = ctx.pipeline()?;
    if let Some(r) = &a.regressor {
        cfg.regressor = if r == "knn" { Regressor::Knn } else { Regressor::Gbdt };
    }
    let site = load_site(&a.site)?;
    let (train, holdout) = harness::source_split(&site, &cfg);
    let mask = InputMask::from(a.mask);
    let model = harness::train_nowcaster(&train, &cfg, mask, ctx.seed)?;
    let report = harness::evaluate_nowcaster(&model, &holdout, &cfg, mask, model.target_stats())?;
    create_dir(&a.out)?;
    write_json(&a.out.join("config.json"), &ctx.effective(Some(&cfg), None))?;
    write_json(&a.out.join("metrics.json"), &report)?;
    match &model {
        Nowcaster::Gbdt(m) => {
            let path = a.out.join(harness::NOWCASTER_CHECKPOINT);
            std::fs::write(&path, m.to_bytes()?).map_err(|e| Failure::Core(Error::Io { path: path.clone(), source: e }))?;
            println!("nowcaster with {} trees written to {}", m.trees.len(), path.display());
        }
        Nowcaster::Knn { .. } => println!("knn nowcaster has no checkpoint; metrics written to {}", a.out.display()),
    }
    print_report("holdout", &report);
    Ok(())
}

fn train_forecast(ctx: &Ctx, a: TrainForecastArgs) -> CmdResult {
    let cfg = ctx.pipeline()?;
    let site = load_site(&a.site)?;
    let (train, holdout) = harness::source_split(&site, &cfg);
    let mask = InputMask::from(a.mask);
    let (model, train_report) = harness::train_forecaster(&train, &cfg, mask, ctx.seed)?;
    let report = harness::evaluate_forecaster(&model, &holdout, &cfg, mask, model.target_stats)?;
    create_dir(&a.out)?;
    write_json(&a.out.join("config.json"), &ctx.effective(Some(&cfg), None))?;
    write_json(&a.out.join("metrics.json"), &report)?;
    write_json(&a.out.join("train_report.json"), &train_report)?;
    let path = a.out.join(harness::FORECASTER_CHECKPOINT);
    std::fs::write(&path, model.to_bytes()?).map_err(|e| Failure::Core(Error::Io { path: path.clone(), source: e }))?;
    println!("forecaster with {} parameters written to {}", model.params().len(), path.display());
    print_report("holdout", &report);
    Ok(())
}

enum Checkpoint {
    Nowcaster(GbdtModel),
    Forecaster(ForecasterModel),
}

fn load_checkpoint(path: &Path) -> std::result::Result<Checkpoint, Failure> {
    let bytes = read_bytes(path)?;
    match bytes.get(..4) {
        Some(m) if m == gbdt::CHECKPOINT_MAGIC => Ok(Checkpoint::Nowcaster(GbdtModel::from_bytes(&bytes)?)),
        Some(m) if m == forecaster::CHECKPOINT_MAGIC => Ok(Checkpoint::Forecaster(ForecasterModel::from_bytes(&bytes)?)),
        _ => Err(Error::Format(format!("{}: not a nowcaster or forecaster checkpoint", path.display())).into()),
    }
}

fn eval(ctx: &Ctx, a: EvalArgs) -> CmdResult {
    let cfg = ctx.pipeline()?;
    let site = load_site(&a.site)?;
    let site = match a.split {
        SplitArg::All => site,
        SplitArg::Train => harness::source_split(&site, &cfg).0,
        SplitArg::Holdout => harness::source_split(&site, &cfg).1,
    };
    let mask = InputMask::from(a.mask);
    let report = match load_checkpoint(&a.model)? {
        Checkpoint::Nowcaster(m) => {
            let stats = m.target_stats;
            harness::evaluate_nowcaster(&Nowcaster::Gbdt(m), &site, &cfg, mask, stats)?
        }
        Checkpoint::Forecaster(m) => harness::evaluate_forecaster(&m, &site, &cfg, mask, m.target_stats)?,
    };
    match &a.out {
        Some(p) => {
            write_json(p, &report)?;
            print_report(site.id(), &report);
        }
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?),
    }
    Ok(())
}

fn print_output(out: &ExperimentOutput) {
    for r in &out.records {
        let label = format!(
            "{} {} {} on {}{} seed {}",
            r.kind.name(),
            r.task.name(),
            r.variant,
            r.evaluated_on,
            r.weeks.map(|w| format!(" weeks {w}")).unwrap_or_default(),
            r.seeds.train
        );
        print_report(&label, &r.report);
    }
    for c in &out.comparisons {
        let scope = format!(
            "{} {} on {}{}",
            c.kind.name(),
            c.task.name(),
            c.evaluated_on,
            c.weeks.map(|w| format!(" weeks {w}")).unwrap_or_default()
        );
        match &c.test {
            Some(t) => println!(
                "t-test {scope}: {} vs {}: mean diff {:.4}, t {:.3}, p {:.3e} over {} pairs",
                c.baseline, c.candidate, t.mean_difference, t.t, t.p_two_sided, c.pairs
            ),
            None => println!("t-test {scope}: {} vs {}: {}", c.baseline, c.candidate, c.note.as_deref().unwrap_or("not computed")),
        }
    }
}

fn write_comparisons(runs: &Path, name: &str, out: &ExperimentOutput) -> CmdResult {
    write_json(&runs.join(format!("{name}.comparisons.json")), &out.comparisons)
}

fn zero_shot(ctx: &Ctx, a: ZeroShotArgs) -> CmdResult {
    let cfg = ctx.pipeline()?;
    let (source, target) = (load_site(&a.source)?, load_site(&a.target)?);
    let tasks = Tasks::parse(&a.tasks)?;
    let seeds = ctx.seeds(&a.seeds);
    let (out, _) = harness::run_zero_shot_seeds(&source, &target, &cfg, tasks, &seeds, !a.no_control, data_seed(&a.source), &ctx.sink(&a.runs))?;
    write_comparisons(&a.runs, "zero_shot", &out)?;
    print_output(&out);
    Ok(())
}

fn finetune_sweep(ctx: &Ctx, a: SweepArgs) -> CmdResult {
    let cfg = ctx.pipeline()?;
    let (source, target) = (load_site(&a.source)?, load_site(&a.target)?);
    let spec = SweepSpec {
        weeks: a.weeks,
        seeds: ctx.seeds(&a.seeds),
        tasks: Tasks::parse(&a.tasks)?,
        selection: if a.selection == "contiguous" { WeekSelection::Contiguous } else { WeekSelection::Uniform },
    };
    let out = harness::run_finetune_sweep(&source, &target, &spec, &cfg, &[], data_seed(&a.source), &ctx.sink(&a.runs))?;
    write_comparisons(&a.runs, "finetune", &out)?;
    print_output(&out);
    Ok(())
}

fn ablate(ctx: &Ctx, a: AblateArgs) -> CmdResult {
    let kind = AblationKind::parse(&a.kind)?;
    let cfg = ctx.pipeline()?;
    let site = load_site(&a.site)?;
    let stub = match &a.stub_store {
        Some(p) => Some(embeddings::read_store(p)?),
        None => None,
    };
    let (out, _) = harness::run_ablation(kind, &site, stub.as_ref(), &cfg, &ctx.seeds(&a.seeds), data_seed(&a.site), &ctx.sink(&a.runs))?;
    write_comparisons(&a.runs, &format!("ablation_{}", a.kind), &out)?;
    print_output(&out);
    Ok(())
}

fn baseline(ctx: &Ctx, a: BaselineArgs) -> CmdResult {
    let kind = BaselineKind::parse(&a.which)?;
    let cfg = ctx.pipeline()?;
    let site = load_site(&a.site)?;
    let model = match &a.spirit_model {
        Some(p) => match load_checkpoint(p)? {
            Checkpoint::Forecaster(m) => Some(m),
            Checkpoint::Nowcaster(_) => return Err(Failure::Usage(format!("{}: expected a forecaster checkpoint", p.display()))),
        },
        None => None,
    };
    let arm = match (&model, a.with_spirit) {
        (Some(m), _) => SpiritArm::Model(m),
        (None, true) => SpiritArm::Train,
        (None, false) => SpiritArm::Skip,
    };
    let (out, _) = harness::run_baselines(&site, &cfg, ctx.seed, &[kind], arm, data_seed(&a.site), &ctx.sink(&a.runs))?;
    write_comparisons(&a.runs, &format!("baseline_{}", kind.name()), &out)?;
    print_output(&out);
    Ok(())
}

fn ttest(a: TtestArgs) -> CmdResult {
    let kind = ExperimentKind::parse(&a.kind)?;
    let task = Task::parse(&a.task)?;
    let records = harness::load_records(&a.runs)?;
    let evaluated_on = match a.evaluated_on {
        Some(e) => e,
        None => {
            let sets: BTreeSet<&str> = records
                .iter()
                .filter(|r| r.kind == kind && r.task == task && r.weeks == a.weeks && (r.variant == a.baseline || r.variant == a.candidate))
                .map(|r| r.evaluated_on.as_str())
                .collect();
            match sets.len() {
                1 => sets.into_iter().next().unwrap().to_string(),
                0 => return Err(Error::InvalidInput(format!("no runs of {} / {} in {}", a.baseline, a.candidate, a.runs.display())).into()),
                _ => {
                    return Err(Failure::Usage(format!(
                        "runs span several evaluation sets ({}); pass --evaluated-on",
                        sets.into_iter().collect::<Vec<_>>().join(", ")
                    )))
                }
            }
        }
    };
    let scope = ComparisonScope {
        kind,
        task,
        evaluated_on: &evaluated_on,
        weeks: a.weeks,
    };
    let cmp = compare_variants(&records, scope, &a.baseline, &a.candidate);
    if let Some(p) = &a.out {
        write_json(p, &cmp)?;
    }
    match &cmp.test {
        Some(t) => println!(
            "{} vs {} on {evaluated_on}: {} pairs, mean diff {:.6}, t {:.4}, dof {}, p {:.6e}, significant at 0.001: {}",
            cmp.baseline, cmp.candidate, cmp.pairs, t.mean_difference, t.t, t.dof, t.p_two_sided, t.significant_at_0001
        ),
        None => {
            return Err(Error::InvalidInput(format!(
                "no paired test for {} vs {}: {}",
                cmp.baseline,
                cmp.candidate,
                cmp.note.unwrap_or_default()
            ))
            .into())
        }
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> CmdResult {
    let records = harness::load_records(&a.runs)?;
    let comparisons = harness::standard_comparisons(&records);
    let summary = harness::summarize(&records, comparisons)?;
    harness::write_summary(&a.out, &records, &summary)?;
    let charts = report::charts(&summary.curves);
    for (name, svg) in &charts {
        write_text(&a.out.join("plots").join(name), svg)?;
    }
    println!(
        "{} runs, {} curve points, {} comparisons, {} charts written to {}",
        summary.runs,
        summary.curves.len(),
        summary.comparisons.len(),
        charts.len(),
        a.out.display()
    );
    Ok(())
}
