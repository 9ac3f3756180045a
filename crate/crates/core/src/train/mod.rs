//! Conditional reconstruction pre-training, end-to-end sequential training
//! and the pretrain × features ablation grid.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{cosine_lr, load_checkpoint, Adam, Graph, Tensor, Var};
use crate::datagen::{Dataset, Split};
use crate::error::{Error, Result};
use crate::lift::{lift_pipeline, FeatureBank, LiftConfig, ProceduralFeatureizer};
use crate::metrics::{evaluate, iou, EvalReport, EvalSetting};
use crate::model::{
    geometry_input, planner_input, planner_targets, save_model, ModelConfig, ModelMeta, SeqSplatNet,
    Vocabulary, PAD,
};
use crate::util::{rng_stream, write_atomic};


/// File names written under a training output directory.
pub const LOG_FILE: &str = "train_log.tsv";
pub const PRETRAIN_FILE: &str = "pretrain.ssck";
pub const ABLATION_FILE: &str = "ablation.tsv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    /// Constant rate for pre-training; start of the cosine schedule otherwise.
    pub lr: f64,
    pub lr_end: f64,
    pub lambda_mask: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Inject lifted semantic features into the decoder.
    pub features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            pretrain_epochs: 10,
            epochs: 50,
            lr: 1e-4,
            lr_end: 1e-5,
            lambda_mask: 1.0,
            batch_size: 4,
            weight_decay: 0.01,
            features: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.pretrain_epochs == 0 || self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.lr > 0.0 && self.lr_end > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.lambda_mask >= 0.0 && self.lambda_mask.is_finite()) {
            return bad("lambda_mask must be a finite value ≥ 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be ≥ 0");
        }
        Ok(())
    }
}

/// `BCE(logits, gt) + Dice(sigmoid(logits), gt)`.
pub fn mask_loss<'g>(logits: Var<'g>, gt: &[f64]) -> Result<Var<'g>> {
    let bce = logits.bce_with_logits(gt)?;
    let dice = logits.sigmoid().dice_loss(gt)?;
    bce.add(dice)
}

/// Token cross-entropy (ignoring `PAD`) plus `λ · Σ_t mask_loss_t`.
pub fn total_loss<'g>(
    token_logits: Var<'g>,
    targets: &[usize],
    mask_logits: &[Var<'g>],
    gt_masks: &[&[f64]],
    lambda_mask: f64,
) -> Result<Var<'g>> {
    if mask_logits.len() != gt_masks.len() {
        return Err(Error::Invalid(format!(
            "{} mask predictions for {} ground-truth masks",
            mask_logits.len(),
            gt_masks.len()
        )));
    }
    let lang = token_logits.cross_entropy(targets, PAD)?;
    let mut sum: Option<Var<'g>> = None;
    for (l, gt) in mask_logits.iter().zip(gt_masks) {
        let m = mask_loss(*l, gt)?;
        sum = Some(match sum {
            Some(s) => s.add(m)?,
            None => m,
        });
    }
    match sum {
        Some(s) => lang.add(s.scale(lambda_mask)),
        None => Ok(lang),
    }
}

/// One training-log row; losses are means over the epoch's samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lang: f64,
    pub mask: f64,
    pub total: f64,
    pub seconds: f64,
}

pub fn log_tsv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch\tL_lang\tsum_L_mask\tL_total\tseconds\n");
    for r in log {
        let _ = writeln!(s, "{}\t{:.6}\t{:.6}\t{:.6}\t{:.3}", r.epoch, r.lang, r.mask, r.total, r.seconds);
    }
    s
}

fn timed_row(epoch: usize, lang: f64, mask: f64, total: f64, count: usize, start: Instant) -> EpochLog {
    let c = count.max(1) as f64;
    EpochLog {
        epoch,
        lang: lang / c,
        mask: mask / c,
        total: total / c,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Batches of at most `size` items that never mix scenes, in shuffled order.
fn scene_batches<T: Copy>(
    groups: &[(usize, Vec<T>)],
    size: usize,
    rng: &mut impl rand::Rng,
) -> Vec<(usize, Vec<T>)> {
    let mut out = Vec::new();
    for (scene, items) in groups {
        let mut items = items.clone();
        items.shuffle(rng);
        for chunk in items.chunks(size) {
            out.push((*scene, chunk.to_vec()));
        }
    }
    out.shuffle(rng);
    out
}

fn train_scene_ids(dataset: &Dataset) -> Result<Vec<usize>> {
    let ids: Vec<usize> = (0..dataset.scenes.len())
        .filter(|&i| dataset.scenes[i].split == Split::Train)
        .collect();
    if ids.is_empty() {
        return Err(Error::Invalid("dataset has no training scenes".into()));
    }
    Ok(ids)
}

fn geometry_inputs(dataset: &Dataset) -> Result<Vec<Tensor>> {
    dataset.scenes.par_iter().map(|s| geometry_input(&s.scene)).collect()
}

// ---- pre-training ----

pub struct PretrainOutcome {
    pub net: SeqSplatNet,
    pub log: Vec<EpochLog>,
    /// Mean reconstruction IoU over the training masks after the last epoch.
    pub train_miou: f64,
}

/// Every mask of every training sequence, grouped by scene: `(scene, (seq, step))`.
fn pretrain_items(dataset: &Dataset) -> Result<Vec<(usize, Vec<(usize, usize)>)>> {
    let mut groups = Vec::new();
    for i in train_scene_ids(dataset)? {
        let items: Vec<(usize, usize)> = dataset.scenes[i]
            .sequences
            .iter()
            .enumerate()
            .flat_map(|(q, s)| (0..s.steps.len()).map(move |t| (q, t)))
            .filter(|&(q, t)| dataset.scenes[i].sequences[q].steps[t].mask.count_nonzero() > 0)
            .collect();
        if !items.is_empty() {
            groups.push((i, items));
        }
    }
    if groups.is_empty() {
        return Err(Error::Invalid("no masks to pre-train on".into()));
    }
    Ok(groups)
}

/// Trains the scene encoder, mask encoder and reconstruction head to recover
/// each training mask from its pooled embedding. The rate is held constant.
pub fn run_pretrain(
    dataset: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<PretrainOutcome> {
    config.validate()?;
    let groups = pretrain_items(dataset)?;
    let geo = geometry_inputs(dataset)?;
    // Pre-training never touches the planner, so a minimal vocabulary suffices.
    let mut net = SeqSplatNet::new(model.clone(), crate::model::SEG + 1, 1, config.seed)?;
    let mut adam = Adam::new(config.weight_decay);
    let mut rng = rng_stream(config.seed, "pretrain-batches");
    let mut log = Vec::with_capacity(config.pretrain_epochs);
    for epoch in 1..=config.pretrain_epochs {
        let start = Instant::now();
        let (mut sum, mut count) = (0.0, 0);
        for (scene, batch) in scene_batches(&groups, config.batch_size, &mut rng) {
            let seqs = &dataset.scenes[scene].sequences;
            let g = Graph::new();
            let f_geo = net.encode_scene_var(&g, &geo[scene])?;
            let mut loss: Option<Var> = None;
            for &(q, t) in &batch {
                let gt = &seqs[q].steps[t].mask.scores;
                let e = net.encode_mask_var(&g, f_geo, gt)?;
                let l = mask_loss(net.reconstruct_var(&g, e, f_geo)?, gt)?;
                sum += l.item();
                loss = Some(match loss {
                    Some(s) => s.add(l)?,
                    None => l,
                });
            }
            count += batch.len();
            let loss = loss.expect("batches are non-empty").scale(1.0 / batch.len() as f64);
            g.backward(loss, &mut net.params)?;
            adam.step(&mut net.params, config.lr);
        }
        log.push(timed_row(epoch, 0.0, sum, sum, count, start));
    }
    let train_miou = reconstruction_miou(&net, dataset, &groups, &geo)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bytes = net.params.to_checkpoint_bytes_where(is_pretrained_param);
        write_atomic(&dir.join(PRETRAIN_FILE), &bytes)?;
        write_atomic(&dir.join(LOG_FILE), log_tsv(&log).as_bytes())?;
    }
    Ok(PretrainOutcome { net, log, train_miou })
}

fn reconstruction_miou(
    net: &SeqSplatNet,
    dataset: &Dataset,
    groups: &[(usize, Vec<(usize, usize)>)],
    geo: &[Tensor],
) -> Result<f64> {
    let per_scene: Vec<Vec<f64>> = groups
        .par_iter()
        .map(|(scene, items)| {
            let g = Graph::new();
            let f_geo = net.encode_scene_var(&g, &geo[*scene])?;
            items
                .iter()
                .map(|&(q, t)| {
                    let gt = &dataset.scenes[*scene].sequences[q].steps[t].mask.scores;
                    let e = net.encode_mask_var(&g, f_geo, gt)?;
                    let logits = net.reconstruct_var(&g, e, f_geo)?.value();
                    iou(&crate::metrics::sigmoid(logits.data()), gt)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let all: Vec<f64> = per_scene.into_iter().flatten().collect();
    Ok(all.iter().sum::<f64>() / all.len() as f64)
}

/// Parameters trained by [`run_pretrain`]: scene encoder and the two heads.
pub fn is_pretrained_param(name: &str) -> bool {
    ["enc.", "mask_enc.", "recon."].iter().any(|p| name.starts_with(p))
}


// ---- end-to-end training ----

/// A training example: token ids plus the `(sequence, step)` masks it grounds.
#[derive(Clone, Debug)]
struct Example {
    instruction: Vec<usize>,
    output: Vec<usize>,
    masks: Vec<(usize, usize)>,
}

/// Full sequences plus one single-step example per distinct step text of a
/// scene, so the planner also sees explicit one-action instructions.
fn build_examples(dataset: &Dataset, vocab: &Vocabulary, scenes: &[usize], context: usize) -> Result<Vec<(usize, Vec<Example>)>> {
    let mut groups = Vec::new();
    for &i in scenes {
        let mut ex = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for (q, s) in dataset.scenes[i].sequences.iter().enumerate() {
            let steps: Vec<&str> = s.steps.iter().map(|t| t.text.as_str()).collect();
            ex.push(Example {
                instruction: vocab.encode(&s.instruction),
                output: vocab.gold_output(&steps),
                masks: (0..steps.len()).map(|t| (q, t)).collect(),
            });
            for (t, step) in s.steps.iter().enumerate() {
                if seen.insert(step.text.clone()) {
                    ex.push(Example {
                        instruction: vocab.encode(&step.text),
                        output: vocab.gold_output(&[&step.text]),
                        masks: vec![(q, t)],
                    });
                }
            }
        }
        for e in &ex {
            let len = e.instruction.len() + e.output.len();
            if len > context {
                return Err(Error::Invalid(format!(
                    "training example of {len} tokens exceeds the planner context of {context}"
                )));
            }
        }
        groups.push((i, ex));
    }
    Ok(groups)
}

/// Semantic banks for every scene of `dataset`, lifted from procedural
/// features and cached under `cache_dir` when given.
pub fn semantic_banks(dataset: &Dataset, lift: &LiftConfig, cache_dir: Option<&Path>) -> Result<Vec<FeatureBank>> {
    dataset
        .scenes
        .par_iter()
        .map(|s| lift_pipeline(&s.scene, lift, &ProceduralFeatureizer, cache_dir))
        .collect()
}

/// Where the pre-trained encoder comes from, if anywhere.
#[derive(Clone, Copy)]
pub enum EncoderInit<'a> {
    Scratch,
    Checkpoint(&'a Path),
    Net(&'a SeqSplatNet),
}

pub struct TrainOutcome {
    pub net: SeqSplatNet,
    pub vocab: Vocabulary,
    pub meta: ModelMeta,
    pub log: Vec<EpochLog>,
}

/// Options besides the hyper-parameters.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub lift: LiftConfig,
    /// Feature-bank cache directory.
    pub cache_dir: Option<PathBuf>,
    /// Where to save the checkpoint, vocabulary and log.
    pub out_dir: Option<PathBuf>,
    /// Banks already lifted for every dataset scene; skips lifting.
    pub banks: Option<Arc<Vec<FeatureBank>>>,
}

/// Teacher-forced training of planner, encoder and decoder on the training
/// split, with a cosine rate from `lr` to `lr_end`.
pub fn run_train(
    dataset: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
    init: EncoderInit<'_>,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    let scenes = train_scene_ids(dataset)?;
    let vocab = Vocabulary::from_sequences(scenes.iter().flat_map(|&i| dataset.scenes[i].sequences.iter()));
    let groups = build_examples(dataset, &vocab, &scenes, model.planner.context)?;
    let geo = geometry_inputs(dataset)?;
    let sem: Option<Vec<Tensor>> = if config.features {
        let banks = match &options.banks {
            Some(b) if b.len() == dataset.scenes.len() => Arc::clone(b),
            Some(b) => {
                return Err(Error::Invalid(format!(
                    "{} precomputed banks for {} scenes",
                    b.len(),
                    dataset.scenes.len()
                )))
            }
            None => Arc::new(semantic_banks(dataset, &options.lift, options.cache_dir.as_deref())?),
        };
        Some(banks.iter().map(FeatureBank::to_tensor).collect())
    } else {
        None
    };
    let sem_dim = if config.features { crate::lift::PROCEDURAL_DIM } else { 1 };

    let mut net = SeqSplatNet::new(model.clone(), vocab.len(), sem_dim, config.seed)?;
    match init {
        EncoderInit::Scratch => {}
        EncoderInit::Checkpoint(p) => {
            net.load_encoder(&load_checkpoint(p)?)?;
        }
        EncoderInit::Net(pre) => {
            let named: Vec<(String, Tensor)> = pre
                .params
                .ids()
                .map(|id| (pre.params.name(id).to_string(), pre.params.value(id).clone()))
                .collect();
            net.load_encoder(&named)?;
        }
    }

    let mut adam = Adam::new(config.weight_decay);
    let mut rng = rng_stream(config.seed, "train-batches");
    let idx: Vec<(usize, Vec<usize>)> = groups.iter().map(|(s, e)| (*s, (0..e.len()).collect())).collect();
    let per_epoch: usize = idx.iter().map(|(_, v)| v.len().div_ceil(config.batch_size)).sum();
    let total_steps = per_epoch * config.epochs;
    let lookup: std::collections::HashMap<usize, &Vec<Example>> = groups.iter().map(|(s, e)| (*s, e)).collect();
    let mut step = 0;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let (mut lang_sum, mut mask_sum, mut total_sum, mut count) = (0.0, 0.0, 0.0, 0);
        for (scene, batch) in scene_batches(&idx, config.batch_size, &mut rng) {
            let examples = lookup[&scene];
            let seqs = &dataset.scenes[scene].sequences;
            let g = Graph::new();
            // With λ = 0 the decoder path is skipped so its parameters get no
            // gradient at all and Adam leaves them untouched.
            let memory = if config.lambda_mask > 0.0 {
                let f_geo = net.encode_scene_var(&g, &geo[scene])?;
                Some(net.decoder_memory(&g, f_geo, sem.as_ref().map(|s| &s[scene]))?)
            } else {
                None
            };
            let mut loss: Option<Var> = None;
            for &k in &batch {
                let ex = &examples[k];
                let full = planner_input(&ex.instruction, &ex.output);
                let ids = &full[..full.len() - 1];
                let plan = net.plan_var(&g, ids)?;
                let targets = planner_targets(ex.instruction.len(), &ex.output);
                let gts: Vec<&[f64]> = ex.masks.iter().map(|&(q, t)| seqs[q].steps[t].mask.scores.as_slice()).collect();
                let (masks, gt_used): (Vec<Var>, Vec<&[f64]>) = match &memory {
                    Some(mem) => {
                        let positions = seg_positions(ids, ex.instruction.len());
                        let logits = positions
                            .iter()
                            .map(|&p| net.decode_var(&g, plan.hidden.slice(0, p, p + 1)?, mem))
                            .collect::<Result<Vec<_>>>()?;
                        (logits, gts)
                    }
                    None => (Vec::new(), Vec::new()),
                };
                let l = total_loss(plan.logits, &targets, &masks, &gt_used, config.lambda_mask)?;
                lang_sum += plan.logits.cross_entropy(&targets, PAD)?.item();
                for (m, gt) in masks.iter().zip(&gt_used) {
                    mask_sum += mask_loss(*m, gt)?.item();
                }
                total_sum += l.item();
                loss = Some(match loss {
                    Some(s) => s.add(l)?,
                    None => l,
                });
            }
            count += batch.len();
            let loss = loss.expect("batches are non-empty").scale(1.0 / batch.len() as f64);
            g.backward(loss, &mut net.params)?;
            adam.step(&mut net.params, cosine_lr(config.lr, config.lr_end, step, total_steps));
            step += 1;
        }
        log.push(timed_row(epoch, lang_sum, mask_sum, total_sum, count, start));
    }
    let meta = ModelMeta {
        seed: config.seed,
        vocab_size: vocab.len(),
        sem_dim,
        features: config.features.then(|| options.lift.clone()),
        model: model.clone(),
    };
    if let Some(dir) = &options.out_dir {
        save_model(dir, &net, &vocab, &meta)?;
        write_atomic(&dir.join(LOG_FILE), log_tsv(&log).as_bytes())?;
    }
    Ok(TrainOutcome { net, vocab, meta, log })
}

/// `<SEG>` positions of a planner input that lie after `<BOS>`.
pub(crate) fn seg_positions(ids: &[usize], instruction_len: usize) -> Vec<usize> {
    (0..ids.len())
        .filter(|&p| ids[p] == crate::model::SEG && p > instruction_len)
        .collect()
}

// ---- ablation ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub pretrain: bool,
    pub features: bool,
    /// Epoch-1 mean `Σ L_mask`, averaged over seeds.
    pub epoch1_mask_loss: f64,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// One row per configuration with the four sequential metric columns.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("pretrain\tfeatures\tsIoU\tsAUC\tsSIM\tsMAE\tepoch1_mask_loss\n");
        for r in &self.rows {
            let m = &r.report.means;
            let _ = writeln!(
                s,
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.6}",
                mark(r.pretrain),
                mark(r.features),
                m.iou,
                m.auc,
                m.sim,
                m.mae,
                r.epoch1_mask_loss
            );
        }
        s
    }
}

fn mark(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Runs {pretrain off, on} × {features off, on} for every seed in `seeds`.
///
/// Each row's epoch-1 mask loss is averaged over all seeds; the metric
/// columns come from the first seed, evaluated in the sequential setting on
/// the validation split (the training split when there is none).
pub fn run_ablation(
    dataset: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
    options: &TrainOptions,
    seeds: &[u64],
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let split = if dataset.count(Split::Val) > 0 { Split::Val } else { Split::Train };
    let banks = match &options.banks {
        Some(b) => Arc::clone(b),
        None => Arc::new(semantic_banks(dataset, &options.lift, options.cache_dir.as_deref())?),
    };
    let pretrained: Vec<SeqSplatNet> = seeds
        .par_iter()
        .map(|&seed| {
            let c = TrainConfig { seed, ..config.clone() };
            Ok(run_pretrain(dataset, model, &c, None)?.net)
        })
        .collect::<Result<_>>()?;
    let grid = [(false, false), (false, true), (true, false), (true, true)];
    let runs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..seeds.len()).map(move |k| (g, k))).collect();
    // Each run is independent and seeded, so running them concurrently
    // leaves every result unchanged.
    let results: Vec<(f64, Option<EvalReport>)> = runs
        .par_iter()
        .map(|&(g, k)| {
            let (pretrain, features) = grid[g];
            let c = TrainConfig { seed: seeds[k], features, ..config.clone() };
            let init = if pretrain { EncoderInit::Net(&pretrained[k]) } else { EncoderInit::Scratch };
            let opts = TrainOptions {
                out_dir: None,
                banks: Some(Arc::clone(&banks)),
                ..options.clone()
            };
            let out = run_train(dataset, model, &c, init, &opts)?;
            let report = if k == 0 {
                let sem = features.then(|| banks.as_slice());
                Some(evaluate(&out.net, &out.vocab, dataset, split, EvalSetting::Seq, sem)?)
            } else {
                None
            };
            Ok((out.log[0].mask, report))
        })
        .collect::<Result<_>>()?;
    let rows = grid
        .iter()
        .enumerate()
        .map(|(g, &(pretrain, features))| {
            let mine = &results[g * seeds.len()..(g + 1) * seeds.len()];
            AblationRow {
                pretrain,
                features,
                epoch1_mask_loss: mine.iter().map(|r| r.0).sum::<f64>() / seeds.len() as f64,
                report: mine[0].1.clone().expect("first seed is evaluated"),
            }
        })
        .collect();
    let report = AblationReport { seeds: seeds.to_vec(), rows };
    if let Some(dir) = &options.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join(ABLATION_FILE), report.to_tsv().as_bytes())?;
    }
    Ok(report)
}
