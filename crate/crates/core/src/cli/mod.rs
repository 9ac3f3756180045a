//! The `seqsplat` command line: argument parsing and one handler per
//! subcommand. The binary is a thin wrapper around [`run`].

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{RunConfig, RESOLVED_CONFIG_FILE};

use crate::datagen::{emit_dataset, Dataset, Split};
use crate::lift::{lift_pipeline, render_views, ProceduralFeatureizer};
use crate::metrics::{evaluate_with, planner_stats, sequential_metrics, EvalSetting, SequenceScores};
use crate::model::load_model;
use crate::raster::{write_ppm, write_weight_dump};
use crate::scene::{load_annotations, load_scene, AnnotationFile};
use crate::train::{run_ablation, run_pretrain, run_train, semantic_banks, EncoderInit, TrainOptions};
use crate::util::write_atomic;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "SEQSPLAT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "seqsplat", version, about = "Sequential affordance reasoning over 3D Gaussian scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (scenes, annotations, manifest).
    GenData(GenDataArgs),
    /// Conditional reconstruction pre-training of the perception modules.
    Pretrain(PretrainArgs),
    /// End-to-end training of planner, encoder and decoder.
    Train(TrainArgs),
    /// Score a trained model in one evaluation setting.
    Eval(EvalArgs),
    /// Run the pretrain × features ablation grid.
    Ablate(AblateArgs),
    /// Render a scene from the default view ring.
    Render(RenderArgs),
    /// Lift procedural 2D features onto a scene's Gaussians.
    Lift(LiftArgs),
    /// Score a prediction dump against ground-truth annotations.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration (sections: data, model, train, eval, lift).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for every random stream; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of scenes; overrides `data.scenes`.
    #[arg(long)]
    pub scenes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides `train.pretrain_epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides `train.lr`.
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Pre-trained encoder checkpoint (`pretrain.ssck`).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Semantic feature injection; overrides `train.features`.
    #[arg(long, value_enum)]
    pub features: Option<Toggle>,
    /// Overrides `train.epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides `train.lr`.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Overrides `train.lr_end`.
    #[arg(long)]
    pub lr_end: Option<f64>,
    /// Feature-bank cache directory [default: <out>/cache].
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SettingArg {
    Single,
    #[value(name = "seq_gt", alias = "seq-gt")]
    SeqGt,
    Seq,
}

impl From<SettingArg> for EvalSetting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::Single => EvalSetting::Single,
            SettingArg::SeqGt => EvalSetting::SeqGt,
            SettingArg::Seq => EvalSetting::Seq,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Model directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub setting: SettingArg,
    #[arg(long, value_enum, default_value = "val")]
    pub split: SplitArg,
    /// Feature-bank cache directory [default: <out>/cache].
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Seeds to average the epoch-1 loss over.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Feature-bank cache directory [default: <out>/cache].
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scene PLY.
    #[arg(long)]
    pub scene: PathBuf,
    /// Also write the per-pixel weight records of every view.
    #[arg(long)]
    pub weights: bool,
}

#[derive(Debug, Args)]
pub struct LiftArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scene PLY.
    #[arg(long)]
    pub scene: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Prediction dump in the annotation format.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth annotation file.
    #[arg(long)]
    pub gt: PathBuf,
    /// Directory for `metrics.tsv`; the table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Applies [`THREADS_ENV`] to the global worker pool, if set.
pub fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("{THREADS_ENV} must be a positive integer, got '{v}'"))?;
        // A second call in the same process (tests) finds the pool built.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn resolve(common: &Common) -> anyhow::Result<RunConfig> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.set_seed(seed);
    }
    Ok(config)
}

fn finish(config: &RunConfig, out: &Path) -> anyhow::Result<()> {
    config.validate()?;
    config.echo(out)?;
    Ok(())
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Render(a) => render(a),
        Command::Lift(a) => lift(a),
        Command::Metrics(a) => metrics(a),
    }
}

fn gen_data(a: GenDataArgs) -> anyhow::Result<()> {
    let mut config = resolve(&a.common)?;
    if let Some(n) = a.scenes {
        config.data.scenes = n;
    }
    finish(&config, &a.common.out)?;
    let manifest = emit_dataset(&config.data, &a.common.out)?;
    let c = &manifest.counts;
    println!(
        "{} scenes ({} train, {} val), {} sequences, {} steps",
        c.scenes, c.train, c.val, c.sequences, c.steps
    );
    Ok(())
}

fn pretrain(a: PretrainArgs) -> anyhow::Result<()> {
    let mut config = resolve(&a.common)?;
    if let Some(e) = a.epochs {
        config.train.pretrain_epochs = e;
    }
    if let Some(lr) = a.lr {
        config.train.lr = lr;
    }
    finish(&config, &a.common.out)?;
    let dataset = Dataset::load(&a.data)?;
    let out = run_pretrain(&dataset, &config.model, &config.train, Some(&a.common.out))?;
    write(
        &a.common.out.join("pretrain_report.tsv"),
        &format!("split\tmasks_mIoU\ntrain\t{:.6}\n", out.train_miou),
    )?;
    println!("reconstruction mIoU on training masks: {:.4}", out.train_miou);
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut config = resolve(&a.common)?;
    if let Some(f) = a.features {
        config.train.features = f == Toggle::On;
    }
    if let Some(e) = a.epochs {
        config.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        config.train.lr = lr;
    }
    if let Some(lr) = a.lr_end {
        config.train.lr_end = lr;
    }
    finish(&config, &a.common.out)?;
    let dataset = Dataset::load(&a.data)?;
    let options = TrainOptions {
        lift: config.lift.clone(),
        cache_dir: Some(a.cache.unwrap_or_else(|| a.common.out.join("cache"))),
        out_dir: Some(a.common.out.clone()),
        banks: None,
    };
    let init = match &a.init {
        Some(p) => EncoderInit::Checkpoint(p),
        None => EncoderInit::Scratch,
    };
    let out = run_train(&dataset, &config.model, &config.train, init, &options)?;
    if let Some(last) = out.log.last() {
        println!(
            "epoch {}: L_lang {:.4}, sum L_mask {:.4}, L_total {:.4}",
            last.epoch, last.lang, last.mask, last.total
        );
    }
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let config = resolve(&a.common)?;
    finish(&config, &a.common.out)?;
    let dataset = Dataset::load(&a.data)?;
    let (net, vocab, meta) = load_model(&a.checkpoint)
        .with_context(|| format!("loading model from {}", a.checkpoint.display()))?;
    let cache = a.cache.unwrap_or_else(|| a.common.out.join("cache"));
    let banks = match &meta.features {
        Some(lift) => Some(semantic_banks(&dataset, lift, Some(&cache))?),
        None => None,
    };
    let setting = EvalSetting::from(a.setting);
    let split = split_of(a.split);
    let report = evaluate_with(&net, &vocab, &dataset, split, setting, banks.as_deref(), &config.eval)?;
    write(&a.common.out.join(format!("eval_{setting}.tsv")), &report.to_tsv())?;
    write(&a.common.out.join(format!("eval_{setting}_details.tsv")), &report.details_tsv())?;
    if setting == EvalSetting::Seq {
        let p = planner_stats(&net, &vocab, &dataset, split, &config.eval)?;
        write(
            &a.common.out.join("planner.tsv"),
            &format!(
                "instructions\ttoken_accuracy\tseg_count_match\texact_match\n{}\t{:.6}\t{:.6}\t{:.6}\n",
                p.instructions, p.token_accuracy, p.seg_count_match, p.exact_match
            ),
        )?;
    }
    print!("{}", report.to_tsv());
    Ok(())
}

fn ablate(a: AblateArgs) -> anyhow::Result<()> {
    let config = resolve(&a.common)?;
    finish(&config, &a.common.out)?;
    let dataset = Dataset::load(&a.data)?;
    let options = TrainOptions {
        lift: config.lift.clone(),
        cache_dir: Some(a.cache.unwrap_or_else(|| a.common.out.join("cache"))),
        out_dir: Some(a.common.out.clone()),
        banks: None,
    };
    let report = run_ablation(&dataset, &config.model, &config.train, &options, &a.seeds)?;
    print!("{}", report.to_tsv());
    Ok(())
}

fn render(a: RenderArgs) -> anyhow::Result<()> {
    let config = resolve(&a.common)?;
    finish(&config, &a.common.out)?;
    let scene = load_scene(&a.scene)?;
    let views = render_views(&scene, &config.lift, &ProceduralFeatureizer)?;
    for (v, (_, weights)) in views.iter().enumerate() {
        let image = crate::raster::rgb_from_weights(&scene, weights, config.lift.background);
        let mut bytes = Vec::new();
        write_ppm(&image, &mut bytes)?;
        write_atomic(&a.common.out.join(format!("view_{v:02}.ppm")), &bytes)?;
        if a.weights {
            let mut dump = Vec::new();
            write_weight_dump(&weights.records, &mut dump)?;
            write_atomic(&a.common.out.join(format!("view_{v:02}.weights")), &dump)?;
        }
    }
    println!("{} views written to {}", views.len(), a.common.out.display());
    Ok(())
}

fn lift(a: LiftArgs) -> anyhow::Result<()> {
    let config = resolve(&a.common)?;
    finish(&config, &a.common.out)?;
    let scene = load_scene(&a.scene)?;
    let bank = lift_pipeline(&scene, &config.lift, &ProceduralFeatureizer, None)?;
    let stem = a.scene.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scene".into());
    let path = a.common.out.join(format!("{stem}.ssfb"));
    bank.save(&path)?;
    let covered = bank.coverage().iter().filter(|&&c| c > 0.0).count();
    println!("{} × {} bank ({covered} primitives covered) written to {}", bank.n(), bank.dim(), path.display());
    Ok(())
}

/// Per-sample sequential scores of a prediction dump against ground truth.
/// Samples pair up by position and must carry the same instruction.
pub fn score_dump(pred: &Path, gt: &Path) -> anyhow::Result<Vec<(String, SequenceScores)>> {
    let truth = load_annotations(gt)?;
    let n = truth.first().map(|s| s.steps[0].mask.len()).unwrap_or(0);
    let doc = AnnotationFile::read(pred)?;
    let predicted = doc
        .decode(n)
        .with_context(|| format!("decoding {} against {n} primitives", pred.display()))?;
    if predicted.len() != truth.len() {
        bail!("prediction has {} samples, ground truth {}", predicted.len(), truth.len());
    }
    predicted
        .iter()
        .zip(&truth)
        .enumerate()
        .map(|(i, (p, t))| {
            if p.instruction != t.instruction {
                bail!("sample {i}: instruction '{}' does not match '{}'", p.instruction, t.instruction);
            }
            let pm: Vec<Vec<f64>> = p.steps.iter().map(|s| s.mask.scores.clone()).collect();
            let tm: Vec<Vec<f64>> = t.steps.iter().map(|s| s.mask.scores.clone()).collect();
            Ok((t.instruction.clone(), sequential_metrics(&pm, &tm)?))
        })
        .collect()
}

fn metrics(a: MetricsArgs) -> anyhow::Result<()> {
    let scores = score_dump(&a.pred, &a.gt)?;
    let mut text = String::from("instruction\tsIoU\tsAUC\tsSIM\tsMAE\taligned_length\n");
    let mut mean = [0.0; 4];
    for (instr, s) in &scores {
        text.push_str(&format!(
            "{instr}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
            s.siou, s.sauc, s.ssim, s.smae, s.aligned_length
        ));
        for (m, v) in mean.iter_mut().zip([s.siou, s.sauc, s.ssim, s.smae]) {
            *m += v;
        }
    }
    let k = scores.len().max(1) as f64;
    text.push_str(&format!(
        "mean\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
        mean[0] / k,
        mean[1] / k,
        mean[2] / k,
        mean[3] / k,
        scores.len()
    ));
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write(&dir.join("metrics.tsv"), &text)?;
    }
    print!("{text}");
    Ok(())
}
