//! Command-line interface: one subcommand per pipeline stage.

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use topo_core::dataset::{generate_dataset, hex, read_dataset, write_dataset, Dataset, FieldKind};
use topo_core::problems::{Family, FamilyConfig};
use topo_nn::Variant;
use topo_surrogate::{
    run_architecture_study, run_dataset_size_study, train_fields, BoundsMode, PipelineConfig, SurrogateSet,
};

use crate::api::{self, PredictRequest};
use crate::server;

#[derive(Debug, Parser)]
#[command(name = "topo", version, about = "Optimal-design datasets and neural surrogates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize Latin-hypercube samples of a family and write a dataset.
    Generate(GenerateArgs),
    /// Train autoencoder and regressor per field kind.
    Train(TrainArgs),
    /// Metrics of trained models on a test dataset.
    Evaluate(EvaluateArgs),
    /// Predict fields for one parameter vector.
    Predict(PredictArgs),
    /// Architecture-variant or dataset-size study.
    Study(StudyArgs),
    /// Serve predictions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct FamilyArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: Option<Family>,
    /// Element counts per axis, e.g. 60,20 (MBB) or 30,10,2 (reduced bridge).
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    /// Family config file; overrides --family and --grid.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Dataset file; the family config is written next to it with a
    /// `.toml` extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Reduced-depth autoencoder for single-core runs.
    Desk,
    /// Full-size architectures and schedule.
    Reference,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Autoencoder epoch limit (also caps patience).
    #[arg(long)]
    pub ae_epochs: Option<usize>,
    /// Regressor epoch limit (also caps patience).
    #[arg(long)]
    pub fc_epochs: Option<usize>,
}

impl PipelineArgs {
    pub fn config(&self) -> PipelineConfig {
        let mut cfg = match self.preset {
            Preset::Desk => PipelineConfig::desk(self.seed),
            Preset::Reference => PipelineConfig::reference(self.seed),
        };
        if let Some(n) = self.ae_epochs {
            cfg.ae_train.max_epochs = n;
            cfg.ae_train.patience = cfg.ae_train.patience.min(n);
        }
        if let Some(n) = self.fc_epochs {
            cfg.fc_train.max_epochs = n;
            cfg.fc_train.patience = cfg.fc_train.patience.min(n);
        }
        cfg
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Family config; defaults to the `.toml` next to the dataset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Field kinds: density, vm, tc or all.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub field: Vec<String>,
    /// Model directory. Models of other kinds already in it are kept.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Field kinds trained at the same time.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Lines,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub testset: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub params: Vec<f64>,
    /// Fields to predict (density, vm, tc, combined_vm, combined_tc).
    #[arg(long, value_delimiter = ',', default_value = "density")]
    pub fields: Vec<String>,
    /// Bridge only: mirror to the full bridge.
    #[arg(long)]
    pub mirror: bool,
    /// Accept parameters outside the family box with a warning.
    #[arg(long)]
    pub explore: bool,
    /// Output file, in the JSON layout of the HTTP response.
    #[arg(long, default_value = "prediction.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyKind {
    Arch,
    Datasize,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long, value_enum)]
    pub kind: StudyKind,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fixed test set; without it the last --holdout records are held out.
    #[arg(long)]
    pub testset: Option<PathBuf>,
    #[arg(long)]
    pub holdout: Option<usize>,
    #[arg(long, default_value = "density")]
    pub field: String,
    /// Training-set sizes of the dataset-size study.
    #[arg(long, value_delimiter = ',', default_value = "500,1000,1500,2000,2500")]
    pub sizes: Vec<usize>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, env = server::PORT_ENV, default_value_t = server::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    s.parse().map_err(|e: topo_core::Error| e.to_string())
}

fn parse_kinds(names: &[String]) -> Result<Vec<FieldKind>> {
    let mut kinds = Vec::new();
    for n in names {
        if n == "all" {
            kinds.extend(FieldKind::ALL);
            continue;
        }
        match FieldKind::parse(n) {
            Some(k) => kinds.push(k),
            None => bail!("unknown field kind '{n}' (expected density, vm, tc or all)"),
        }
    }
    kinds.sort();
    kinds.dedup();
    if kinds.is_empty() {
        bail!("no field kind given");
    }
    Ok(kinds)
}

/// Family config from a file, or a preset for `family` and `grid`.
pub fn family_config(args: &FamilyArgs) -> Result<FamilyConfig> {
    if let Some(path) = &args.config {
        return FamilyConfig::load(path).with_context(|| format!("reading {}", path.display()));
    }
    let family = args.family.context("--family or --config is required")?;
    let grid = args.grid.as_deref();
    match (family, grid) {
        (Family::Mbb, None) => Ok(FamilyConfig::mbb()),
        (Family::Mbb, Some(&[nx, ny])) if nx > 0 && ny > 0 => Ok(FamilyConfig::mbb_with_grid(nx, ny)),
        (Family::Bridge, None | Some(&[60, 20, 4])) => Ok(FamilyConfig::bridge()),
        (Family::Bridge, Some(&[30, 10, 2])) => Ok(FamilyConfig::bridge_reduced()),
        (f, Some(g)) => bail!("no {f} preset for grid {g:?}; pass a config file with --config"),
    }
}

/// Config path paired with a dataset file.
pub fn sibling_config(dataset: &Path) -> PathBuf {
    dataset.with_extension("toml")
}

fn load_dataset_with_config(dataset: &Path, config: Option<&Path>) -> Result<(Dataset, FamilyConfig)> {
    let cfg_path = config.map(Path::to_path_buf).unwrap_or_else(|| sibling_config(dataset));
    let cfg = FamilyConfig::load(&cfg_path)
        .with_context(|| format!("reading family config {} (set --config)", cfg_path.display()))?;
    let ds = read_dataset(dataset).with_context(|| format!("reading {}", dataset.display()))?;
    if ds.header.geometry_hash != cfg.geometry_hash() {
        bail!(
            "dataset {} was generated for geometry {}, but {} describes geometry {}; refusing to mix them",
            dataset.display(),
            hex(&ds.header.geometry_hash),
            cfg_path.display(),
            hex(&cfg.geometry_hash())
        );
    }
    Ok((ds, cfg))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(&a, out),
        Command::Train(a) => train(&a, out),
        Command::Evaluate(a) => evaluate(&a, out),
        Command::Predict(a) => predict(&a, out),
        Command::Study(a) => study(&a, out),
        Command::Serve(a) => serve(&a),
    }
}

fn generate(a: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    if a.count == 0 {
        bail!("--count must be at least 1");
    }
    let cfg = family_config(&a.family)?;
    let t = Instant::now();
    let ds = generate_dataset(&cfg, a.count, a.seed, a.workers.max(1))?;
    write_dataset(&a.out, &ds).with_context(|| format!("writing {}", a.out.display()))?;
    let cfg_path = sibling_config(&a.out);
    cfg.save(&cfg_path)?;
    writeln!(
        out,
        "wrote {} {} samples to {} ({} config {}) in {:.1} s",
        ds.len(),
        cfg.family,
        a.out.display(),
        cfg_path.display(),
        &hex(&cfg.geometry_hash())[..16],
        t.elapsed().as_secs_f64()
    )?;
    Ok(())
}

fn train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let (ds, cfg) = load_dataset_with_config(&a.dataset, a.config.as_deref())?;
    let kinds = parse_kinds(&a.field)?;
    let pcfg = a.pipeline.config();
    let mut fields = Vec::new();
    if a.out.join(topo_surrogate::set::CONFIG_FILE).is_file() {
        let existing = SurrogateSet::load(&a.out)?;
        if existing.config() != &cfg {
            bail!("{} holds models for a different family config", a.out.display());
        }
        for k in existing.kinds() {
            if !kinds.contains(&k) {
                fields.push((k, existing.field(k).expect("listed kind").clone()));
            }
        }
    }
    let t = Instant::now();
    let trained = train_fields(&ds, &kinds, &pcfg, a.workers)?;
    for (k, fm) in &trained {
        writeln!(
            out,
            "{}: autoencoder {} epochs (train BA {:.2}%), regressor {} epochs",
            k.name(),
            fm.autoencoder.meta.epochs_run,
            fm.autoencoder.meta.metrics.get("train_ba").copied().unwrap_or(f64::NAN),
            fm.regressor.meta.epochs_run
        )?;
    }
    fields.extend(trained);
    let set = SurrogateSet::new(cfg, fields)?;
    set.save(&a.out)?;
    writeln!(
        out,
        "saved models {} to {} in {:.1} s",
        set.fingerprint(),
        a.out.display(),
        t.elapsed().as_secs_f64()
    )?;
    Ok(())
}

fn evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let set = SurrogateSet::load(&a.models)?;
    let test = read_dataset(&a.testset).with_context(|| format!("reading {}", a.testset.display()))?;
    let report = set.evaluate(&test, a.workers)?;
    match a.format {
        Format::Table => write!(out, "{}", report.table())?,
        Format::Lines => write!(out, "{}", report.lines())?,
    }
    Ok(())
}

fn predict(a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let set = SurrogateSet::load(&a.models)?;
    let req = PredictRequest {
        family: set.family().name().to_string(),
        params: a.params.clone(),
        fields: a.fields.clone(),
        mirror: a.mirror,
    };
    let mode = if a.explore {
        BoundsMode::Explore
    } else {
        BoundsMode::Strict
    };
    let resp = api::predict(&set, &req, mode).map_err(|e| anyhow::anyhow!(e.message))?;
    std::fs::write(&a.out, serde_json::to_vec(&resp)?).with_context(|| format!("writing {}", a.out.display()))?;
    for w in &resp.warnings {
        writeln!(out, "warning: {w}")?;
    }
    for f in &resp.fields {
        writeln!(out, "{} {:?} latency {:.3} ms", f.field, f.dims, f.latency_ms)?;
    }
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

fn study(a: &StudyArgs, out: &mut dyn Write) -> Result<()> {
    let (ds, cfg) = load_dataset_with_config(&a.dataset, a.config.as_deref())?;
    let (train, test) = match &a.testset {
        Some(p) => (ds, read_dataset(p).with_context(|| format!("reading {}", p.display()))?),
        None => {
            let n = a.holdout.unwrap_or((ds.len() / 10).max(1));
            if n >= ds.len() {
                bail!("holdout {n} leaves no training records out of {}", ds.len());
            }
            let cut = ds.len() - n;
            (ds.take(cut), ds.subset(&(cut..ds.len()).collect::<Vec<_>>()))
        }
    };
    let kinds = parse_kinds(std::slice::from_ref(&a.field))?;
    let pcfg = a.pipeline.config();
    match a.kind {
        StudyKind::Arch => {
            for k in kinds {
                let s = run_architecture_study(&cfg, &train, &test, k, &pcfg, &Variant::ALL)?;
                write!(out, "{}", s.table())?;
            }
        }
        StudyKind::Datasize => {
            let s = run_dataset_size_study(&cfg, &train, &test, &kinds, &pcfg, &a.sizes)?;
            write!(out, "{}{}", s.table(), s.lines())?;
        }
    }
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<()> {
    let set = Arc::new(SurrogateSet::load(&a.models)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(server::serve(SocketAddr::new(a.host, a.port), set))?;
    Ok(())
}
