use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sequential_metrics, step_scores, StepScores};
use crate::autograd::{Graph, Tensor};
use crate::datagen::{Dataset, Split};
use crate::error::{Error, Result};
use crate::lift::FeatureBank;
use crate::model::{argmax, geometry_input, planner_targets, SeqSplatNet, Vocabulary, EOS, PAD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSetting {
    /// Every `(step text, mask)` pair on its own, teacher-forced.
    Single,
    /// Gold step texts drive the planner; masks scored as a sequence.
    SeqGt,
    /// Greedy planning from the instruction alone.
    Seq,
}

impl EvalSetting {
    pub const ALL: [EvalSetting; 3] = [EvalSetting::Single, EvalSetting::SeqGt, EvalSetting::Seq];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalSetting::Single => "single",
            EvalSetting::SeqGt => "seq_gt",
            EvalSetting::Seq => "seq",
        }
    }

    fn is_sequential(self) -> bool {
        self != EvalSetting::Single
    }
}

impl fmt::Display for EvalSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EvalSetting::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown setting '{s}' (expected single, seq_gt or seq)")))
    }
}

/// Greedy decoding limits for the `seq` setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub max_steps: usize,
    pub max_tokens: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            max_steps: 8,
            max_tokens: 96,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDetail {
    pub scene: String,
    pub instruction: String,
    /// Planner output text (the gold text under teacher forcing).
    pub plan: String,
    pub pred_steps: usize,
    pub gt_steps: usize,
    pub scores: StepScores,
}

/// Means over the samples of one split. In the sequential settings the
/// four fields hold sIoU, sAUC, sSIM and sMAE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: EvalSetting,
    pub split: Split,
    pub n_samples: usize,
    pub means: StepScores,
    pub details: Vec<SampleDetail>,
}

impl EvalReport {
    pub fn header(setting: EvalSetting) -> &'static str {
        if setting.is_sequential() {
            "setting\tsplit\tN_samples\tsIoU\tsAUC\tsSIM\tsMAE"
        } else {
            "setting\tsplit\tN_samples\tmIoU\tAUC\tSIM\tMAE"
        }
    }

    pub fn to_tsv(&self) -> String {
        let m = &self.means;
        format!(
            "{}\n{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            Self::header(self.setting),
            self.setting,
            split_name(self.split),
            self.n_samples,
            m.iou,
            m.auc,
            m.sim,
            m.mae
        )
    }

    pub fn details_tsv(&self) -> String {
        let mut s = String::from("scene\tinstruction\tplan\tpred_steps\tgt_steps\tiou\tauc\tsim\tmae\n");
        for d in &self.details {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                d.scene,
                d.instruction,
                d.plan,
                d.pred_steps,
                d.gt_steps,
                d.scores.iou,
                d.scores.auc,
                d.scores.sim,
                d.scores.mae
            );
        }
        s
    }
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Val => "val",
    }
}

pub(crate) fn sigmoid(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect()
}

fn check_banks(dataset: &Dataset, net: &SeqSplatNet, sem: Option<&[FeatureBank]>) -> Result<()> {
    if let Some(banks) = sem {
        if banks.len() != dataset.scenes.len() {
            return Err(Error::Invalid(format!(
                "{} semantic banks for {} scenes",
                banks.len(),
                dataset.scenes.len()
            )));
        }
        if let Some(b) = banks.iter().find(|b| b.dim() != net.sem_dim) {
            return Err(Error::Invalid(format!(
                "semantic bank has {} channels, model expects {}",
                b.dim(),
                net.sem_dim
            )));
        }
    }
    Ok(())
}

/// Scores `net` on `split` of `dataset`. `sem` holds one bank per dataset
/// scene when the model was trained with features.
pub fn evaluate(
    net: &SeqSplatNet,
    vocab: &Vocabulary,
    dataset: &Dataset,
    split: Split,
    setting: EvalSetting,
    sem: Option<&[FeatureBank]>,
) -> Result<EvalReport> {
    evaluate_with(net, vocab, dataset, split, setting, sem, &EvalConfig::default())
}

pub fn evaluate_with(
    net: &SeqSplatNet,
    vocab: &Vocabulary,
    dataset: &Dataset,
    split: Split,
    setting: EvalSetting,
    sem: Option<&[FeatureBank]>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    check_banks(dataset, net, sem)?;
    if vocab.len() != net.vocab_size {
        return Err(Error::Invalid(format!(
            "vocabulary of {} tokens for a model trained on {}",
            vocab.len(),
            net.vocab_size
        )));
    }
    let scenes: Vec<usize> = (0..dataset.scenes.len())
        .filter(|&i| dataset.scenes[i].split == split && !dataset.scenes[i].sequences.is_empty())
        .collect();
    if scenes.is_empty() {
        return Err(Error::Invalid(format!("no {} samples to evaluate", split_name(split))));
    }
    let per_scene: Vec<Vec<SampleDetail>> = scenes
        .par_iter()
        .map(|&i| evaluate_scene(net, vocab, dataset, i, setting, sem.map(|b| &b[i]), config))
        .collect::<Result<_>>()?;
    let details: Vec<SampleDetail> = per_scene.into_iter().flatten().collect();
    let n = details.len() as f64;
    let mut means = StepScores::default();
    for d in &details {
        means.iou += d.scores.iou;
        means.auc += d.scores.auc;
        means.sim += d.scores.sim;
        means.mae += d.scores.mae;
    }
    means.iou /= n;
    means.auc /= n;
    means.sim /= n;
    means.mae /= n;
    Ok(EvalReport {
        setting,
        split,
        n_samples: details.len(),
        means,
        details,
    })
}

fn evaluate_scene(
    net: &SeqSplatNet,
    vocab: &Vocabulary,
    dataset: &Dataset,
    index: usize,
    setting: EvalSetting,
    sem: Option<&FeatureBank>,
    config: &EvalConfig,
) -> Result<Vec<SampleDetail>> {
    let ds = &dataset.scenes[index];
    let g = Graph::new();
    let f_geo = net.encode_scene_var(&g, &geometry_input(&ds.scene)?)?;
    let sem = sem.map(FeatureBank::to_tensor);
    let memory = net.decoder_memory(&g, f_geo, sem.as_ref())?;
    let decode = |h: &[f64]| -> Result<Vec<f64>> {
        let hv = g.constant(Tensor::matrix(1, h.len(), h.to_vec())?);
        Ok(sigmoid(net.decode_var(&g, hv, &memory)?.value().data()))
    };
    let mut out = Vec::new();
    for seq in &ds.sequences {
        match setting {
            EvalSetting::Single => {
                for step in &seq.steps {
                    let gold = vocab.gold_output(&[&step.text]);
                    let plan = net.plan_teacher_forced(&vocab.encode(&step.text), &gold)?;
                    let preds = plan.seg_states.iter().map(|h| decode(h)).collect::<Result<Vec<_>>>()?;
                    let pred = preds.into_iter().next().unwrap_or_else(|| vec![0.0; ds.scene.len()]);
                    out.push(SampleDetail {
                        scene: ds.id.clone(),
                        instruction: step.text.clone(),
                        plan: vocab.decode(&gold),
                        pred_steps: plan.seg_states.len(),
                        gt_steps: 1,
                        scores: step_scores(&pred, &step.mask.scores)?,
                    });
                }
            }
            EvalSetting::SeqGt | EvalSetting::Seq => {
                let instruction = vocab.encode(&seq.instruction);
                let plan = if setting == EvalSetting::SeqGt {
                    let texts: Vec<&str> = seq.steps.iter().map(|s| s.text.as_str()).collect();
                    net.plan_teacher_forced(&instruction, &vocab.gold_output(&texts))?
                } else {
                    net.plan_greedy(&instruction, config.max_steps, config.max_tokens)?
                };
                let preds = plan.seg_states.iter().map(|h| decode(h)).collect::<Result<Vec<_>>>()?;
                let gts: Vec<Vec<f64>> = seq.steps.iter().map(|s| s.mask.scores.clone()).collect();
                let s = sequential_metrics(&preds, &gts)?;
                out.push(SampleDetail {
                    scene: ds.id.clone(),
                    instruction: seq.instruction.clone(),
                    plan: vocab.decode(&plan.output),
                    pred_steps: preds.len(),
                    gt_steps: gts.len(),
                    scores: StepScores {
                        iou: s.siou,
                        auc: s.sauc,
                        sim: s.ssim,
                        mae: s.smae,
                    },
                });
            }
        }
    }
    Ok(out)
}

/// Planner-only statistics over the instructions of one split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlannerStats {
    /// Teacher-forced argmax accuracy over every gold output token.
    pub token_accuracy: f64,
    /// Fraction of instructions whose greedy plan emits exactly as many
    /// `<SEG>`s as the gold sequence has steps.
    pub seg_count_match: f64,
    /// Fraction of greedy plans equal to the gold output.
    pub exact_match: f64,
    pub instructions: usize,
}

pub fn planner_stats(
    net: &SeqSplatNet,
    vocab: &Vocabulary,
    dataset: &Dataset,
    split: Split,
    config: &EvalConfig,
) -> Result<PlannerStats> {
    let samples = dataset.samples(split);
    if samples.is_empty() {
        return Err(Error::Invalid(format!("no {} samples to evaluate", split_name(split))));
    }
    let rows: Vec<(usize, usize, bool, bool)> = samples
        .par_iter()
        .map(|(_, seq)| {
            let instruction = vocab.encode(&seq.instruction);
            let texts: Vec<&str> = seq.steps.iter().map(|s| s.text.as_str()).collect();
            let gold = vocab.gold_output(&texts);
            let tf = net.plan_teacher_forced(&instruction, &gold)?;
            let targets = planner_targets(instruction.len(), &gold);
            let (mut hit, mut total) = (0, 0);
            for (r, &t) in targets.iter().enumerate() {
                if t == PAD {
                    continue;
                }
                total += 1;
                if argmax(tf.token_logits.row(r)) == t {
                    hit += 1;
                }
            }
            let greedy = net.plan_greedy(&instruction, config.max_steps, config.max_tokens)?;
            let seg_ok = greedy.seg_states.len() == seq.steps.len();
            let exact = greedy.output == gold && greedy.output.last() == Some(&EOS);
            Ok((hit, total, seg_ok, exact))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let (hit, total) = rows.iter().fold((0, 0), |a, r| (a.0 + r.0, a.1 + r.1));
    Ok(PlannerStats {
        token_accuracy: hit as f64 / total.max(1) as f64,
        seg_count_match: rows.iter().filter(|r| r.2).count() as f64 / n,
        exact_match: rows.iter().filter(|r| r.3).count() as f64 / n,
        instructions: rows.len(),
    })
}
