//! `clnet` subcommands.
//!
//! Settings come from an optional JSON config, then `CLNET_SEED`, then
//! flags. Failures print one line `error[<kind>]: <message>` to stderr and
//! exit with 2 (usage), 3 (invalid input) or 4 (numeric failure).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use clnet_core::retrieval::rank_references;
use clnet_core::synth::{PairMode, Split};
use clnet_core::{AblationPreset, ViewId};

use crate::checkpoint::Checkpoint;
use crate::config::{DataConfig, RunConfig};
use crate::dataset::{manifest_relevance, PairDataset};
use crate::error::{Error, Result};
use crate::evaluate::{embed_corpus, evaluate_dataset, MetricsReport};
use crate::{embfile, trainer, viz};

#[derive(Debug, Parser)]
#[command(
    name = "clnet",
    version,
    about = "Cross-view correspondence learning for ground-to-satellite retrieval"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic pair dataset to PNG files and a manifest
    Synth(SynthArgs),
    /// Train a model and write a checkpoint and loss history
    Train(TrainArgs),
    /// Embed the ground or satellite images of a manifest
    Embed(EmbedArgs),
    /// Score retrieval between two embedding files
    Eval(EvalArgs),
    /// Render neural maps of a checkpoint as heatmaps
    Viz(VizArgs),
    /// Train and evaluate several presets over several seeds
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ViewArg {
    Ground,
    Satellite,
}

impl From<ViewArg> for ViewId {
    fn from(v: ViewArg) -> Self {
        match v {
            ViewArg::Ground => ViewId::Ground,
            ViewArg::Satellite => ViewId::Satellite,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VizView {
    Ground,
    Satellite,
    Both,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of pairs
    #[arg(long, default_value_t = 512)]
    pub pairs: usize,
    /// Dataset seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Split to render
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    /// Offset mode: one positive and three semi-positive crops per query [default: off]
    #[arg(long, default_value_t = false)]
    pub vigor: bool,
    /// Write into a non-empty output directory [default: off]
    #[arg(long, default_value_t = false)]
    pub force: bool,
    /// JSON config supplying image sizes and scene parameters [default: built-in]
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunOverrides {
    /// JSON run config [default: built-in defaults]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model/shuffle seed [default: config value]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epochs [default: config value]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Batch size [default: config value]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate [default: config value]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Worker threads, 0 for all cores [default: config value]
    #[arg(long)]
    pub threads: Option<usize>,
    /// Disable rotation/flip augmentation [default: config value]
    #[arg(long, default_value_t = false)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunOverrides,
    /// Ablation preset: 1..6 or full [default: config value]
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<AblationPreset>,
    /// Checkpoint directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Checkpoint directory
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset manifest (paths are relative to its directory)
    #[arg(long)]
    pub manifest: PathBuf,
    /// View to embed; satellite includes semi-positive images
    #[arg(long, value_enum)]
    pub view: ViewArg,
    /// Output embedding file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Query embedding file
    #[arg(long)]
    pub queries: PathBuf,
    /// Reference embedding file
    #[arg(long)]
    pub references: PathBuf,
    /// Manifest giving each query's positive and semi-positives
    #[arg(long)]
    pub manifest: PathBuf,
    /// Also report hit rate, which needs semi-positive ids [default: off]
    #[arg(long, default_value_t = false)]
    pub hit_rate: bool,
    /// Checkpoint whose config hash goes into the report [default: none]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Report file [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    /// Checkpoint directory
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Encoder level
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub level: u8,
    /// Which map to render
    #[arg(long, value_enum, default_value_t = VizView::Both)]
    pub view: VizView,
    /// Pixels per map cell
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    /// Output directory; files are named level<L>-<view>.png
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunOverrides,
    /// Comma-separated presets
    #[arg(long, value_delimiter = ',', value_parser = parse_preset, default_value = "1,3,5")]
    pub presets: Vec<AblationPreset>,
    /// Comma-separated model seeds
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Output directory for ablation.csv
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_preset(s: &str) -> std::result::Result<AblationPreset, String> {
    s.parse().map_err(|e: clnet_core::Error| e.to_string())
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            let kind = if code == 4 { "numeric" } else { "validation" };
            eprintln!("error[{kind}]: {}", e.to_string().replace('\n', " "));
            code
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Embed(a) => embed(a),
        Command::Eval(a) => eval(a),
        Command::Viz(a) => visualize(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => {
            let mut cfg = RunConfig::default();
            cfg.apply_env()?;
            Ok(cfg)
        }
    }
}

impl RunOverrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        let t = &mut cfg.train;
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.lr {
            t.base_lr = v;
        }
        if let Some(v) = self.threads {
            t.threads = v;
        }
        if self.no_augment {
            t.augment = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Training split (and evaluation split, when configured) of a run.
pub fn load_data(cfg: &RunConfig) -> Result<(PairDataset, Option<PairDataset>)> {
    match &cfg.data {
        DataConfig::Synthetic {
            seed,
            train_pairs,
            eval_pairs,
            mode,
            scene,
        } => {
            let sizes = cfg.render_sizes();
            let train = PairDataset::synthetic(*seed, Split::Train, *mode, *train_pairs, sizes, scene.clone())?;
            let eval = PairDataset::synthetic(*seed, Split::Eval, *mode, *eval_pairs, sizes, scene.clone())?;
            Ok((train, Some(eval)))
        }
        DataConfig::Directory {
            train_manifest,
            eval_manifest,
        } => {
            let train = load_manifest(train_manifest)?;
            let eval = eval_manifest.as_deref().map(load_manifest).transpose()?;
            Ok((train, eval))
        }
    }
}

fn load_manifest(path: &Path) -> Result<PairDataset> {
    let root = path.parent().unwrap_or(Path::new("."));
    let file = path
        .file_name()
        .ok_or_else(|| Error::Validation(format!("{} is not a file", path.display())))?;
    PairDataset::load_directory(root, Path::new(file))
}

fn ensure_empty_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if non_empty && !force {
            return Err(Error::Validation(format!(
                "{} exists and is not empty (use --force)",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let scene = match &cfg.data {
        DataConfig::Synthetic { scene, .. } => scene.clone(),
        DataConfig::Directory { .. } => Default::default(),
    };
    if a.pairs == 0 {
        return Err(Error::Validation("--pairs must be at least 1".into()));
    }
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Eval => Split::Eval,
    };
    let mode = if a.vigor {
        PairMode::Offset
    } else {
        PairMode::CenterAligned
    };
    ensure_empty_dir(&a.out, a.force)?;
    let ds = PairDataset::synthetic(a.seed, split, mode, a.pairs, cfg.render_sizes(), scene)?;
    let manifest = ds.write_directory(&a.out)?;
    eprintln!("wrote {} pairs to {}", ds.len(), manifest.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.run.resolve()?;
    if let Some(p) = a.preset {
        cfg.train.preset = p;
    }
    let (train_data, eval_data) = load_data(&cfg)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    eprintln!(
        "training preset {} seed {} on {} pairs, config {}",
        cfg.train.preset,
        cfg.seed,
        train_data.len(),
        &cfg.hash()[..12]
    );
    let outcome = trainer::train(&cfg, &train_data, |s, _| {
        eprintln!("epoch {:>3} step {:>6} loss {:.4}", s.epoch + 1, s.step, s.mean_loss);
        Ok(())
    })?;
    outcome.checkpoint.save(&a.out)?;
    trainer::write_loss_csv(&a.out.join("loss.csv"), &outcome.history)?;
    if let Some(eval) = eval_data {
        let report = evaluate_dataset(&outcome.model()?, &eval, Some(cfg.hash()))?;
        report.write(&a.out.join("metrics.json"))?;
        eprintln!("eval R@1 {:.4} R@5 {:.4}", report.recall_at_1, report.recall_at_5);
    }
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let model = Checkpoint::load(&a.checkpoint)?.model()?;
    let data = load_manifest(&a.manifest)?;
    let view = ViewId::from(a.view);
    let images = match view {
        ViewId::Ground => data.queries(),
        ViewId::Satellite => data.references(),
    };
    let m = embed_corpus(&model, &images, view)?;
    embfile::write(&a.out, &m)
}

fn eval(a: EvalArgs) -> Result<()> {
    let queries = embfile::read(&a.queries)?;
    let references = embfile::read(&a.references)?;
    let (truth, relevant, any_semi) = manifest_relevance(&a.manifest)?;
    if a.hit_rate && !any_semi {
        return Err(Error::Validation(format!(
            "--hit-rate needs semi-positive ids, but {} lists none",
            a.manifest.display()
        )));
    }
    let config_hash = a
        .checkpoint
        .as_deref()
        .map(Checkpoint::load)
        .transpose()?
        .map(|c| c.config.hash());
    let result = rank_references(&queries, &references)?;
    let mut report = MetricsReport::compute(&result, &truth, Some(&relevant), config_hash)?;
    if !a.hit_rate {
        report.hit_rate = None;
    }
    match &a.out {
        Some(p) => report.write(p),
        None => {
            println!("{}", report.to_json());
            Ok(())
        }
    }
}

fn visualize(a: VizArgs) -> Result<()> {
    let model = Checkpoint::load(&a.checkpoint)?.model()?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let views: &[ViewId] = match a.view {
        VizView::Ground => &[ViewId::Ground],
        VizView::Satellite => &[ViewId::Satellite],
        VizView::Both => &[ViewId::Ground, ViewId::Satellite],
    };
    let level = a.level as usize;
    for &view in views {
        let path = a.out.join(format!("level{level}-{view}.png"));
        viz::write_heatmap(&model, view, level, a.scale, &path)?;
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let base = a.run.resolve()?;
    let (train_data, eval_data) = load_data(&base)?;
    let eval_data =
        eval_data.ok_or_else(|| Error::Validation("ablation needs an evaluation split (data.eval_manifest)".into()))?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut csv = String::from("preset,seed,recall_at_1,recall_at_5,recall_at_10,final_loss\n");
    for &preset in &a.presets {
        let mut r1 = Vec::new();
        for &seed in &a.seeds {
            let mut cfg = base.clone();
            cfg.train.preset = preset;
            cfg.seed = seed;
            let outcome = trainer::train(&cfg, &train_data, |_, _| Ok(()))?;
            let report = evaluate_dataset(&outcome.model()?, &eval_data, Some(cfg.hash()))?;
            let last = outcome.epochs.last().map_or(f64::NAN, |e| e.mean_loss);
            writeln!(
                csv,
                "{preset},{seed},{},{},{},{last}",
                report.recall_at_1, report.recall_at_5, report.recall_at_10
            )
            .unwrap();
            eprintln!("preset {preset} seed {seed}: R@1 {:.4}", report.recall_at_1);
            r1.push(report.recall_at_1);
        }
        eprintln!(
            "preset {preset}: mean R@1 {:.4}",
            r1.iter().sum::<f64>() / r1.len().max(1) as f64
        );
    }
    let path = a.out.join("ablation.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}
