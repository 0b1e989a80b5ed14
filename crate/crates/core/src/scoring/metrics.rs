//! Rank AUC, thresholded accuracy/F1 and the normalised class-mean gap.

use crate::imaging::Label;
use crate::{Error, Result};

fn class_counts(labels: &[Label]) -> (usize, usize) {
    let pos = labels.iter().filter(|l| l.is_abnormal()).count();
    (labels.len() - pos, pos)
}

/// Area under the ROC curve via the Mann-Whitney rank statistic; tied scores
/// share their average rank, so each tied normal/abnormal pair counts ½.
/// Abnormal is the positive class.
pub fn compute_auc(scores: &[(f64, Label)]) -> Result<f64> {
    let (n_neg, n_pos) = class_counts(&scores.iter().map(|s| s.1).collect::<Vec<_>>());
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::arg("AUC needs both normal and abnormal samples"));
    }
    if scores.iter().any(|s| s.0.is_nan()) {
        return Err(Error::arg("AUC scores contain NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));
    // Twice the rank sum of positives keeps tied average ranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].0 == scores[order[i]].0 {
            j += 1;
        }
        // Ranks i+1..=j+1; twice their average is i+j+2.
        let twice_avg = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| scores[k].1.is_abnormal()).count() as u128;
        twice_rank_sum += twice_avg * pos_in_group;
        i = j + 1;
    }
    let np = n_pos as u128;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Scores mapped affinely onto [0, 1]; all-equal scores map to 0.
pub fn min_max_normalize(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|&s| (s - lo) / span).collect()
}

/// Accuracy and F1 of binary predictions, abnormal positive. F1 is 0 when
/// precision + recall is 0.
pub fn confusion_metrics(predicted_abnormal: &[bool], labels: &[Label]) -> Result<(f64, f64)> {
    if predicted_abnormal.len() != labels.len() || labels.is_empty() {
        return Err(Error::arg("predictions and labels must be non-empty and equal in length"));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, l) in predicted_abnormal.iter().zip(labels) {
        match (p, l.is_abnormal()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let acc = (tp + tn) as f64 / labels.len() as f64;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((acc, f1))
}

/// Accuracy and F1 with `normalized score >= threshold` predicting abnormal.
pub fn compute_acc_f1(scores: &[f64], labels: &[Label], threshold: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::arg("threshold must lie in [0, 1]"));
    }
    if scores.len() != labels.len() {
        return Err(Error::arg("scores and labels differ in length"));
    }
    let predicted: Vec<bool> = min_max_normalize(scores).iter().map(|&s| s >= threshold).collect();
    confusion_metrics(&predicted, labels)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreGap {
    pub mean_normal: f64,
    pub mean_abnormal: f64,
    /// `mean_abnormal - mean_normal`.
    pub gap: f64,
}

/// Class means of min-max normalised scores and their difference.
pub fn compute_gap(scores: &[f64], labels: &[Label]) -> Result<ScoreGap> {
    if scores.len() != labels.len() {
        return Err(Error::arg("scores and labels differ in length"));
    }
    let (n_neg, n_pos) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::arg("gap needs both normal and abnormal samples"));
    }
    let norm = min_max_normalize(scores);
    if norm.iter().all(|&v| v == 0.0) && scores.iter().all(|&s| s == scores[0]) {
        log::warn!("all anomaly scores are equal; gap is 0");
        return Ok(ScoreGap {
            mean_normal: 0.0,
            mean_abnormal: 0.0,
            gap: 0.0,
        });
    }
    let mean_of = |abnormal: bool| {
        let (s, c) = norm
            .iter()
            .zip(labels)
            .filter(|(_, l)| l.is_abnormal() == abnormal)
            .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
        s / c as f64
    };
    let (mean_normal, mean_abnormal) = (mean_of(false), mean_of(true));
    Ok(ScoreGap {
        mean_normal,
        mean_abnormal,
        gap: mean_abnormal - mean_normal,
    })
}

/// Image-level metrics of one score column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub auc: f64,
    pub acc: f64,
    pub f1: f64,
    pub gap: ScoreGap,
    pub threshold: f64,
    pub n_normal: usize,
    pub n_abnormal: usize,
}

pub fn evaluate(scores: &[f64], labels: &[Label], threshold: f64) -> Result<MetricsReport> {
    let pairs: Vec<(f64, Label)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    let auc = compute_auc(&pairs)?;
    let (acc, f1) = compute_acc_f1(scores, labels, threshold)?;
    let gap = compute_gap(scores, labels)?;
    let (n_normal, n_abnormal) = class_counts(labels);
    Ok(MetricsReport {
        auc,
        acc,
        f1,
        gap,
        threshold,
        n_normal,
        n_abnormal,
    })
}

/// Pixel-level localisation metrics from anomaly maps and lesion masks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelMetrics {
    /// AUC over all pixels pooled across images.
    pub pooled_auc: f64,
    /// Mean AUC over images whose mask holds both classes.
    pub mean_image_auc: Option<f64>,
    pub acc: f64,
    pub f1: f64,
}

/// `maps[i]` is paired with `masks[i]`; images without a lesion pass an
/// all-false mask.
pub fn pixel_metrics(maps: &[&[f32]], masks: &[&[bool]], threshold: f64) -> Result<PixelMetrics> {
    if maps.len() != masks.len() {
        return Err(Error::arg("maps and masks differ in count"));
    }
    let mut pooled = Vec::new();
    let mut per_image = Vec::new();
    for (map, mask) in maps.iter().zip(masks) {
        if map.len() != mask.len() {
            return Err(Error::arg("anomaly map and mask differ in size"));
        }
        let pairs: Vec<(f64, Label)> = map
            .iter()
            .zip(mask.iter())
            .map(|(&v, &m)| (v as f64, if m { Label::Abnormal } else { Label::Normal }))
            .collect();
        if mask.iter().any(|&m| m) && mask.iter().any(|&m| !m) {
            per_image.push(compute_auc(&pairs)?);
        }
        pooled.extend(pairs);
    }
    let pooled_auc = compute_auc(&pooled)?;
    let scores: Vec<f64> = pooled.iter().map(|p| p.0).collect();
    let labels: Vec<Label> = pooled.iter().map(|p| p.1).collect();
    let (acc, f1) = compute_acc_f1(&scores, &labels, threshold)?;
    let mean_image_auc = (!per_image.is_empty()).then(|| per_image.iter().sum::<f64>() / per_image.len() as f64);
    Ok(PixelMetrics {
        pooled_auc,
        mean_image_auc,
        acc,
        f1,
    })
}
