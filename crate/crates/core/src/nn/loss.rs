use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::recipe::DetectionVector;
use crate::transport::{sinkhorn_dense, SinkhornConfig, TransportResult};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the logs.
pub const BCE_CLAMP: f64 = 1e-7;
/// Default upper clamp `t` for positive sample weights.
pub const DEFAULT_WEIGHT_CLAMP: f64 = 4.0;
/// Added to predicted amounts inside the cross-entropy log.
pub const DEFAULT_CE_EPS: f64 = 1e-6;
/// Default triplet margin.
pub const DEFAULT_MARGIN: f64 = 0.3;

/// Positive-sample weighted binary cross entropy summed over ingredients.
/// Returns the loss and `dL/dp`.
pub fn weighted_bce_loss(p: &[f64], y: &[bool], w: &[f64]) -> Result<(f64, Vec<f64>)> {
    if y.len() != p.len() || w.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: if y.len() != p.len() { y.len() } else { w.len() },
        });
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.len()];
    for i in 0..p.len() {
        let raw = p[i];
        let pc = raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let inside = raw == pc;
        if y[i] {
            loss -= w[i] * pc.ln();
            if inside {
                grad[i] = -w[i] / pc;
            }
        } else {
            loss -= (1.0 - pc).ln();
            if inside {
                grad[i] = 1.0 / (1.0 - pc);
            }
        }
    }
    Ok((loss, grad))
}

/// `min(t, negatives / positives)`; `t` when the ingredient never occurs and
/// `1` when it occurs in every recipe.
pub fn positive_weight(pos_count: usize, total_count: usize, t: f64) -> f64 {
    if pos_count == 0 {
        return t;
    }
    let neg = total_count.saturating_sub(pos_count);
    if neg == 0 {
        return 1.0f64.min(t);
    }
    t.min(neg as f64 / pos_count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositiveWeights {
    pub weights: Vec<f64>,
    pub clamp: f64,
}

/// Per-ingredient positive weights computed from training detections.
pub fn positive_weights(detections: &[DetectionVector], size: usize, t: f64) -> PositiveWeights {
    let mut pos = vec![0usize; size];
    for y in detections {
        for i in y.indices() {
            pos[i] += 1;
        }
    }
    PositiveWeights {
        weights: pos.iter().map(|&c| positive_weight(c, detections.len(), t)).collect(),
        clamp: t,
    }
}

/// Cross entropy between target amounts and predicted amounts,
/// `-sum v_i log(v_hat_i + eps)` with `v` normalized to unit mass.
/// Returns the loss and `dL/dv_hat`.
pub fn amount_ce_loss(v_hat: &[f64], v: &[f64], eps: f64) -> Result<(f64, Vec<f64>)> {
    if v.len() != v_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: v_hat.len(),
            got: v.len(),
        });
    }
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyDistribution);
    }
    let mut loss = 0.0;
    let grad = v_hat
        .iter()
        .zip(v)
        .map(|(&q, &t)| {
            let t = t / total;
            loss -= t * (q + eps).ln();
            -t / (q + eps)
        })
        .collect();
    Ok((loss, grad))
}

/// Entropic Wasserstein loss between predicted and target amount
/// distributions under ground cost `cost`. The target is normalized to unit
/// mass. Returns the transport result; its `dual_value` is the loss and its
/// `gradient` is `dL/dv_hat` projected to zero mean.
pub fn wasserstein_loss(
    v_hat: &[f64],
    v: &[f64],
    cost: &Array2<f64>,
    config: &SinkhornConfig,
) -> Result<TransportResult> {
    let n = v_hat.len();
    if v.len() != n || cost.dim() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: v.len(),
        });
    }
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyDistribution);
    }
    let cols: Vec<usize> = (0..n).filter(|&j| v[j] > 0.0).collect();
    let b: Vec<f64> = cols.iter().map(|&j| v[j] / total).collect();
    let sub = cost.select(Axis(1), &cols);
    sinkhorn_dense(v_hat, &b, sub.view(), config)
}

#[derive(Debug, Clone)]
pub struct TripletLoss {
    pub loss: f64,
    pub grad_text: Array2<f64>,
    pub grad_image: Array2<f64>,
    /// Hardest negative per anchor: `(row, is_image)`.
    pub hardest: Vec<(usize, bool)>,
}

fn cosine_parts(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> (f64, f64, f64) {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    (a.dot(&b) / (na * nb), na, nb)
}

/// Batch-hard triplet loss anchored on text features:
/// `mean_i max(0, m - cos(t_i, v_i) + max_u cos(t_i, u))` where `u` ranges
/// over text and image features of other rows. Ties between candidate
/// negatives go to the lowest row, image before text.
pub fn triplet_retrieval_loss(
    text: ArrayView2<f64>,
    image: ArrayView2<f64>,
    margin: f64,
) -> Result<TripletLoss> {
    let n = text.nrows();
    if image.dim() != text.dim() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: image.nrows(),
        });
    }
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    for row in text.rows().into_iter().chain(image.rows()) {
        if row.dot(&row) == 0.0 {
            return Err(Error::InvalidInput("zero feature vector in triplet batch".into()));
        }
    }
    let mut grad_text = Array2::zeros(text.raw_dim());
    let mut grad_image = Array2::zeros(image.raw_dim());
    let mut hardest = Vec::with_capacity(n);
    let mut loss = 0.0;
    let scale = 1.0 / n as f64;
    for i in 0..n {
        let anchor = text.row(i);
        let mut best = f64::NEG_INFINITY;
        let mut best_at = (0, true);
        for j in (0..n).filter(|&j| j != i) {
            for (is_image, cand) in [(true, image.row(j)), (false, text.row(j))] {
                let (c, _, _) = cosine_parts(anchor, cand);
                if c > best {
                    best = c;
                    best_at = (j, is_image);
                }
            }
        }
        hardest.push(best_at);
        let (pos, na, np) = cosine_parts(anchor, image.row(i));
        let hinge = margin - pos + best;
        if hinge <= 0.0 {
            continue;
        }
        loss += scale * hinge;
        let neg_vec = if best_at.1 { image.row(best_at.0) } else { text.row(best_at.0) };
        let nn = neg_vec.dot(&neg_vec).sqrt();
        // d cos(a, b) / da = b / (|a||b|) - cos(a, b) a / |a|^2
        let d_anchor = (&image.row(i) / (na * np) - &anchor * (pos / (na * na))) * (-scale)
            + (&neg_vec / (na * nn) - &anchor * (best / (na * na))) * scale;
        let d_pos = (&anchor / (na * np) - &image.row(i) * (pos / (np * np))) * (-scale);
        let d_neg = (&anchor / (na * nn) - &neg_vec * (best / (nn * nn))) * scale;
        {
            let mut row = grad_text.row_mut(i);
            row += &d_anchor;
        }
        {
            let mut row = grad_image.row_mut(i);
            row += &d_pos;
        }
        let mut row = if best_at.1 {
            grad_image.row_mut(best_at.0)
        } else {
            grad_text.row_mut(best_at.0)
        };
        row += &d_neg;
    }
    Ok(TripletLoss {
        loss,
        grad_text,
        grad_image,
        hardest,
    })
}
