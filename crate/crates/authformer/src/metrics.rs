//! Closed-set classification metrics and open-set verification rates.

use crate::error::{Error, Result};

/// Per-class confusion counts and derived rates.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub class: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub support: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// True when the class never appears in `y_true`; its recall is
    /// counted as zero in the macro averages.
    pub absent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassStats>,
}

pub fn classification_metrics(
    y_true: &[usize],
    y_pred: &[usize],
    num_classes: usize,
) -> Result<ClassificationMetrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::invalid(format!(
            "label vectors disagree in length: {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::invalid("no samples to score"));
    }
    if num_classes == 0 {
        return Err(Error::invalid("num_classes must be positive"));
    }
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&l| l >= num_classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    let mut correct = 0usize;
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t == p {
            tp[t] += 1;
            correct += 1;
        } else {
            fn_[t] += 1;
            fp[p] += 1;
        }
    }
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let support = tp[c] + fn_[c];
        let recall = if support > 0 { tp[c] as f64 / support as f64 } else { 0.0 };
        let predicted = tp[c] + fp[c];
        let precision = if predicted > 0 { tp[c] as f64 / predicted as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassStats {
            class: c,
            tp: tp[c],
            fp: fp[c],
            fn_: fn_[c],
            support,
            recall,
            precision,
            f1,
            absent: support == 0,
        });
    }
    let n = num_classes as f64;
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / y_true.len() as f64,
        macro_recall: per_class.iter().map(|s| s.recall).sum::<f64>() / n,
        macro_f1: per_class.iter().map(|s| s.f1).sum::<f64>() / n,
        per_class,
    })
}

/// False rejection rate at threshold `t`: fraction of genuine scores
/// strictly below `t`.
pub fn frr_at(genuine: &[f64], t: f64) -> f64 {
    genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64
}

/// False acceptance rate at threshold `t`: fraction of impostor scores
/// at or above `t`.
pub fn far_at(impostor: &[f64], t: f64) -> f64 {
    impostor.iter().filter(|&&s| s >= t).count() as f64 / impostor.len() as f64
}

/// True acceptance rate at threshold `t`.
pub fn tar_at(genuine: &[f64], t: f64) -> f64 {
    1.0 - frr_at(genuine, t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Equal error rate by exhaustive threshold sweep.
///
/// Candidate thresholds are 0, 1, and the midpoints between adjacent
/// distinct scores from both lists pooled. The result is the mean of
/// FAR and FRR at the candidate minimizing their absolute gap; ties go
/// to the lowest threshold.
pub fn compute_eer(genuine: &[f64], impostor: &[f64]) -> Result<EerResult> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::invalid("both genuine and impostor score lists must be non-empty"));
    }
    let all = genuine.iter().chain(impostor);
    if all.clone().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let mut pooled: Vec<f64> = all.copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pooled.dedup();
    let mut candidates = vec![0.0, 1.0];
    for w in pooled.windows(2) {
        candidates.push(0.5 * (w[0] + w[1]));
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut best: Option<EerResult> = None;
    for t in candidates {
        let far = far_at(impostor, t);
        let frr = frr_at(genuine, t);
        let gap = (far - frr).abs();
        let better = match best {
            None => true,
            Some(b) => gap < (b.far - b.frr).abs(),
        };
        if better {
            best = Some(EerResult { eer: 0.5 * (far + frr), threshold: t, far, frr });
        }
    }
    Ok(best.expect("candidate list is never empty"))
}
