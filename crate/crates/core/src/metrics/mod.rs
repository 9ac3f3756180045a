//! Single-step mask metrics (IoU, AUC, SIM, MAE) and their sequential
//! counterparts over sequences padded with empty frames.
//!
//! Conventions for degenerate inputs:
//! - IoU: both masks empty → 1, exactly one empty → 0.
//! - AUC: when the ground truth is constant there are no (pos, neg) pairs;
//!   the score is 1 if the binarised prediction equals the ground truth, else 0.
//! - SIM: both maps zero → 1, exactly one zero → 0.

mod evaluate;
pub(crate) use evaluate::sigmoid;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use evaluate::{
    evaluate, evaluate_with, planner_stats, EvalConfig, EvalReport, EvalSetting, PlannerStats, SampleDetail,
};

pub const THRESHOLD: f64 = 0.5;

fn check_len(op: &str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "{op}: prediction has {} entries, ground truth {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn binarize(v: f64) -> bool {
    v >= THRESHOLD
}

pub fn iou(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_len("iou", pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (binarize(p), binarize(g));
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// ROC-AUC as the normalised Mann–Whitney statistic, ties counted ½.
pub fn auc(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_len("auc", pred, gt)?;
    let pos = gt.iter().filter(|&&g| binarize(g)).count();
    let neg = gt.len() - pos;
    if pos == 0 || neg == 0 {
        let exact = pred.iter().zip(gt).all(|(&p, &g)| binarize(p) == binarize(g));
        return Ok(if exact { 1.0 } else { 0.0 });
    }
    let mut idx: Vec<usize> = (0..pred.len()).collect();
    idx.sort_by(|&a, &b| pred[a].total_cmp(&pred[b]));
    // Midranks (1-based) over tie groups; U = Σ ranks of positives − pos(pos+1)/2.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && pred[idx[j + 1]] == pred[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let group_pos = idx[i..=j].iter().filter(|&&k| binarize(gt[k])).count();
        rank_sum_pos += mid * group_pos as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Histogram intersection of the two maps after normalising each to sum 1.
pub fn sim(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_len("sim", pred, gt)?;
    if pred.iter().chain(gt).any(|&v| v < 0.0) {
        return Err(Error::Invalid("sim: negative entry".into()));
    }
    let sp: f64 = pred.iter().sum();
    let sg: f64 = gt.iter().sum();
    Ok(match (sp > 0.0, sg > 0.0) {
        (false, false) => 1.0,
        (true, true) => pred
            .iter()
            .zip(gt)
            .map(|(p, g)| (p / sp).min(g / sg))
            .sum::<f64>()
            .min(1.0),
        _ => 0.0,
    })
}

pub fn mae(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_len("mae", pred, gt)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepScores {
    pub iou: f64,
    pub auc: f64,
    pub sim: f64,
    pub mae: f64,
}

pub fn step_scores(pred: &[f64], gt: &[f64]) -> Result<StepScores> {
    Ok(StepScores {
        iou: iou(pred, gt)?,
        auc: auc(pred, gt)?,
        sim: sim(pred, gt)?,
        mae: mae(pred, gt)?,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceScores {
    pub siou: f64,
    pub sauc: f64,
    pub ssim: f64,
    pub smae: f64,
    pub aligned_length: usize,
}

/// Pads the shorter sequence with all-zero frames; pairing is positional.
pub fn align_sequences(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let n = gt.first().or(pred.first()).map(Vec::len).unwrap_or(0);
    if let Some(m) = pred.iter().chain(gt).find(|m| m.len() != n) {
        return Err(Error::Shape(format!(
            "sequence masks disagree on N: {} vs {n}",
            m.len()
        )));
    }
    let len = pred.len().max(gt.len());
    let pad = |s: &[Vec<f64>]| {
        let mut out = s.to_vec();
        out.resize(len, vec![0.0; n]);
        out
    };
    Ok((pad(pred), pad(gt)))
}

pub fn sequential_metrics(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> Result<SequenceScores> {
    let (p, g) = align_sequences(pred, gt)?;
    if p.is_empty() {
        return Err(Error::Invalid("sequential metrics of two empty sequences".into()));
    }
    let mut out = SequenceScores {
        aligned_length: p.len(),
        ..Default::default()
    };
    for (a, b) in p.iter().zip(&g) {
        let s = step_scores(a, b)?;
        out.siou += s.iou;
        out.sauc += s.auc;
        out.ssim += s.sim;
        out.smae += s.mae;
    }
    let t = p.len() as f64;
    out.siou /= t;
    out.sauc /= t;
    out.ssim /= t;
    out.smae /= t;
    Ok(out)
}
