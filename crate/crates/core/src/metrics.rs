//! Substitution-aware evaluation metrics.
//!
//! Ingredient-level coverage and IOU count a predicted ingredient as correct
//! when it shares a substitution group with an unmatched ground-truth
//! ingredient. Group-level metrics collapse both vectors onto groups first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{Partition, SubstitutionModel};
use crate::recipe::{AmountVector, DetectionVector};
use crate::transport::emd_metric;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecipeMetrics {
    pub cvg: f64,
    pub iou: f64,
    pub emd: f64,
    pub cvg_group: f64,
    pub iou_group: f64,
    pub emd_group: f64,
}

fn check_len(y: &DetectionVector, y_hat: &DetectionVector, partition: &Partition) -> Result<()> {
    for len in [y.len(), y_hat.len()] {
        if len != partition.num_items() {
            return Err(Error::DimensionMismatch {
                expected: partition.num_items(),
                got: len,
            });
        }
    }
    Ok(())
}

/// Number of common ingredients: per group, the smaller of the two positive
/// counts, summed over groups.
pub fn common_count(y: &DetectionVector, y_hat: &DetectionVector, partition: &Partition) -> Result<usize> {
    check_len(y, y_hat, partition)?;
    let mut truth = vec![0usize; partition.num_groups()];
    let mut pred = vec![0usize; partition.num_groups()];
    for i in y.indices() {
        truth[partition.group_of(i)] += 1;
    }
    for i in y_hat.indices() {
        pred[partition.group_of(i)] += 1;
    }
    Ok(truth.iter().zip(&pred).map(|(a, b)| *a.min(b)).sum())
}

/// Common count found by explicitly matching positives one to one within
/// each group (augmenting paths over the bipartite "same group" graph).
/// Slow; used to cross-check [`common_count`].
pub fn brute_force_common_count(
    y: &DetectionVector,
    y_hat: &DetectionVector,
    partition: &Partition,
) -> Result<usize> {
    check_len(y, y_hat, partition)?;
    let left: Vec<usize> = y.indices().collect();
    let right: Vec<usize> = y_hat.indices().collect();
    let mut owner: Vec<Option<usize>> = vec![None; right.len()];

    fn augment(
        l: usize,
        left: &[usize],
        right: &[usize],
        partition: &Partition,
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for r in 0..right.len() {
            if seen[r] || partition.group_of(left[l]) != partition.group_of(right[r]) {
                continue;
            }
            seen[r] = true;
            let free = match owner[r] {
                None => true,
                Some(other) => augment(other, left, right, partition, seen, owner),
            };
            if free {
                owner[r] = Some(l);
                return true;
            }
        }
        false
    }

    let mut matched = 0;
    for l in 0..left.len() {
        let mut seen = vec![false; right.len()];
        if augment(l, &left, &right, partition, &mut seen, &mut owner) {
            matched += 1;
        }
    }
    Ok(matched)
}

fn ratio_metrics(c: usize, truth: usize, pred: usize) -> Result<(f64, f64)> {
    if truth == 0 {
        return Err(Error::UndefinedMetric("ground truth has no ingredients"));
    }
    let union = truth + pred - c;
    Ok((c as f64 / truth as f64, c as f64 / union as f64))
}

/// `c / sum(y)`.
pub fn cvg(y: &DetectionVector, y_hat: &DetectionVector, partition: &Partition) -> Result<f64> {
    let c = common_count(y, y_hat, partition)?;
    Ok(ratio_metrics(c, y.count(), y_hat.count())?.0)
}

/// `c / (sum(y) + sum(y_hat) - c)`.
pub fn iou(y: &DetectionVector, y_hat: &DetectionVector, partition: &Partition) -> Result<f64> {
    let c = common_count(y, y_hat, partition)?;
    if y.count() + y_hat.count() == 0 {
        return Err(Error::UndefinedMetric("both detections are empty"));
    }
    Ok(ratio_metrics(c, y.count(), y_hat.count())
        .map(|r| r.1)
        .unwrap_or(0.0))
}

/// Coverage, IOU and EMD after collapsing onto substitution groups.
pub fn group_metrics(
    y: &DetectionVector,
    y_hat: &DetectionVector,
    v: &AmountVector,
    v_hat: &AmountVector,
    model: &SubstitutionModel,
) -> Result<(f64, f64, f64)> {
    check_len(y, y_hat, model.partition())?;
    let y1 = model.collapse_detection(y);
    let y1_hat = model.collapse_detection(y_hat);
    let c = y1.flags().iter().zip(y1_hat.flags()).filter(|(a, b)| **a && **b).count();
    let (cvg, iou) = ratio_metrics(c, y1.count(), y1_hat.count())?;
    let emd = emd_metric(
        &model.collapse_amounts(v_hat),
        &model.collapse_amounts(v),
        model.group_distances(),
    )?;
    Ok((cvg, iou, emd))
}

/// All six metrics for one recipe. Detections are taken from the supports of
/// the amount vectors.
pub fn recipe_metrics(
    truth: &AmountVector,
    predicted: &AmountVector,
    model: &SubstitutionModel,
) -> Result<RecipeMetrics> {
    let y = crate::recipe::detection_from_amounts(truth);
    let y_hat = crate::recipe::detection_from_amounts(predicted);
    let partition = model.partition();
    let c = common_count(&y, &y_hat, partition)?;
    let (cvg, iou) = ratio_metrics(c, y.count(), y_hat.count())?;
    let emd = emd_metric(predicted, truth, model.distances())?;
    let (cvg_group, iou_group, emd_group) = group_metrics(&y, &y_hat, truth, predicted, model)?;
    Ok(RecipeMetrics {
        cvg,
        iou,
        emd,
        cvg_group,
        iou_group,
        emd_group,
    })
}

/// Unweighted mean of per-recipe metrics; `None` when the slice is empty.
pub fn mean_metrics(items: &[RecipeMetrics]) -> Option<RecipeMetrics> {
    if items.is_empty() {
        return None;
    }
    let n = items.len() as f64;
    let sum = |f: fn(&RecipeMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
    Some(RecipeMetrics {
        cvg: sum(|m| m.cvg),
        iou: sum(|m| m.iou),
        emd: sum(|m| m.emd),
        cvg_group: sum(|m| m.cvg_group),
        iou_group: sum(|m| m.iou_group),
        emd_group: sum(|m| m.emd_group),
    })
}
