//! Detection followed by masked amount prediction.
//!
//! Training runs in sequential stages: the optional retrieval projection,
//! the ingredient detector (ID) and the amount predictor (AP). Each stage
//! freezes everything trained before it.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::SubstitutionModel;
use crate::metrics::{mean_metrics, recipe_metrics, RecipeMetrics};
use crate::nn::{
    amount_ce_loss, positive_weights, wasserstein_loss, weighted_bce_loss, Activation, AdamConfig, AdamState,
    Gradients, MlpModel, DEFAULT_CE_EPS, DEFAULT_WEIGHT_CLAMP,
};
use crate::recipe::{AmountVector, Dataset, DetectionVector, DEFAULT_TOTAL_GRAMS};
use crate::retrieval::ProjectionModel;
use crate::rng::{stage_rng, Stage};
use crate::transport::{ground_cost, SinkhornConfig};

/// Number of ingredients kept when there is no detector.
pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Detector output masks the amount predictor and is part of its input.
    Full,
    /// Amount predictor alone, masked by its own top-k at inference.
    NoId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmountLoss {
    Wasserstein,
    CrossEntropy,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "no_id" => Ok(Mode::NoId),
            _ => Err(Error::InvalidConfig(format!("unknown mode {s:?}, expected full or no_id"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::NoId => "no_id",
        })
    }
}

impl FromStr for AmountLoss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wasserstein" => Ok(AmountLoss::Wasserstein),
            "cross_entropy" => Ok(AmountLoss::CrossEntropy),
            _ => Err(Error::InvalidConfig(format!(
                "unknown loss {s:?}, expected wasserstein or cross_entropy"
            ))),
        }
    }
}

impl fmt::Display for AmountLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AmountLoss::Wasserstein => "wasserstein",
            AmountLoss::CrossEntropy => "cross_entropy",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub loss: AmountLoss,
    pub detection_threshold: f64,
    /// Mask size in `NoId` mode; defaults to [`DEFAULT_TOP_K`].
    pub top_k: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Hidden layer widths shared by the detector and the amount predictor.
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
    pub total_grams: f64,
    /// Upper clamp on positive BCE weights.
    pub weight_clamp: f64,
    pub ce_eps: f64,
    pub sinkhorn: SinkhornConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            loss: AmountLoss::Wasserstein,
            detection_threshold: 0.5,
            top_k: None,
            batch_size: 64,
            epochs: 20,
            seed: 0,
            hidden: vec![1024, 1024],
            adam: AdamConfig::default(),
            total_grams: DEFAULT_TOTAL_GRAMS,
            weight_clamp: DEFAULT_WEIGHT_CLAMP,
            ce_eps: DEFAULT_CE_EPS,
            sinkhorn: SinkhornConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.detection_threshold > 0.0 && self.detection_threshold < 1.0) {
            return bad("detection_threshold must lie in (0, 1)");
        }
        if self.top_k == Some(0) {
            return bad("top_k must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if !(self.total_grams > 0.0 && self.total_grams.is_finite()) {
            return bad("total_grams must be positive");
        }
        if !(self.weight_clamp > 0.0 && self.weight_clamp.is_finite()) {
            return bad("weight_clamp must be positive");
        }
        if !(self.ce_eps > 0.0 && self.ce_eps.is_finite()) {
            return bad("ce_eps must be positive");
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        self.sinkhorn.validate()
    }

    pub fn effective_top_k(&self) -> usize {
        self.top_k.unwrap_or(DEFAULT_TOP_K)
    }
}

/// One line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
}

/// Model inputs for every record: the recipe embedding, projected when a
/// projection is given.
pub fn recipe_inputs(dataset: &Dataset, projection: Option<&ProjectionModel>) -> Result<Array2<f64>> {
    let raw = dataset.embedding_matrix();
    match projection {
        Some(p) => p.project(raw.view()),
        None => Ok(raw),
    }
}

/// Sigmoid probabilities and the hard detection `p > threshold`.
pub fn detect(id_model: &MlpModel, q: &[f64], threshold: f64) -> Result<(Vec<f64>, DetectionVector)> {
    let p = id_model.predict_one(q)?;
    let y = DetectionVector::new(p.iter().map(|&x| x > threshold).collect());
    Ok((p, y))
}

/// `k` ones at the largest scores; ties go to the lower index.
pub fn top_k_threshold(scores: &[f64], k: usize) -> Result<DetectionVector> {
    if k > scores.len() {
        return Err(Error::InvalidK { k, size: scores.len() });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    Ok(DetectionVector::from_indices(scores.len(), order.into_iter().take(k)))
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Hard detection with the empty-mask fallback: when nothing clears the
/// threshold, the single most probable ingredient is kept.
pub fn detection_mask(p: &[f64], threshold: f64) -> DetectionVector {
    let y = DetectionVector::new(p.iter().map(|&x| x > threshold).collect());
    if y.count() == 0 && !p.is_empty() {
        DetectionVector::from_indices(p.len(), [argmax(p)])
    } else {
        y
    }
}

/// Restricts `raw` to `mask`, renormalizes to unit mass and scales by
/// `total`. Falls back to uniform over the mask if `raw` has no mass there.
pub fn apply_mask(raw: &[f64], mask: &DetectionVector, total: f64) -> Result<AmountVector> {
    if raw.len() != mask.len() {
        return Err(Error::DimensionMismatch {
            expected: mask.len(),
            got: raw.len(),
        });
    }
    if mask.count() == 0 {
        return Err(Error::EmptyDistribution);
    }
    let s: f64 = raw.iter().zip(mask.flags()).filter(|(_, &m)| m).map(|(r, _)| r).sum();
    let values = if s > 0.0 && s.is_finite() {
        raw.iter()
            .zip(mask.flags())
            .map(|(&r, &m)| if m { total * r / s } else { 0.0 })
            .collect()
    } else {
        return uniform_over(mask, total);
    };
    AmountVector::new(values)
}

/// Equal amounts on every detected ingredient.
pub fn uniform_over(mask: &DetectionVector, total: f64) -> Result<AmountVector> {
    let k = mask.count();
    if k == 0 {
        return Err(Error::EmptyDistribution);
    }
    AmountVector::new(mask.flags().iter().map(|&m| if m { total / k as f64 } else { 0.0 }).collect())
}

fn check_nonempty(ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        Err(Error::EmptyDataset)
    } else {
        Ok(())
    }
}

fn shuffled_batches<R: rand::Rng>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(|c| c.to_vec()).collect()
}

/// Weighted BCE summed over ingredients and averaged over the rows of a
/// batch, with the gradient with respect to every parameter.
pub fn detection_loss_and_grad(
    model: &MlpModel,
    x: ArrayView2<f64>,
    targets: &[&DetectionVector],
    weights: &[f64],
) -> Result<(f64, Gradients)> {
    let cache = model.forward(x)?;
    let p = cache.output();
    let scale = 1.0 / x.nrows() as f64;
    let mut grad = Array2::zeros(p.raw_dim());
    let mut total = 0.0;
    for (r, y) in targets.iter().enumerate() {
        let row = p.row(r).to_vec();
        let (loss, g) = weighted_bce_loss(&row, y.flags(), weights)?;
        total += loss * scale;
        for (dst, gi) in grad.row_mut(r).iter_mut().zip(g) {
            *dst = gi * scale;
        }
    }
    let (grads, _) = model.backward(&cache, grad);
    Ok((total, grads))
}

fn detection_loss(model: &MlpModel, x: &Array2<f64>, targets: &[DetectionVector], weights: &[f64]) -> Result<f64> {
    let p = model.predict(x.view())?;
    let mut total = 0.0;
    for (r, y) in targets.iter().enumerate() {
        total += weighted_bce_loss(&p.row(r).to_vec(), y.flags(), weights)?.0;
    }
    Ok(total / targets.len() as f64)
}

/// Trains the ingredient detector with positive-weighted BCE. Positive
/// weights come from `train` only.
pub fn train_id(
    train: &Dataset,
    val: Option<&Dataset>,
    projection: Option<&ProjectionModel>,
    config: &PipelineConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<MlpModel> {
    config.validate()?;
    check_nonempty(train)?;
    let x = recipe_inputs(train, projection)?;
    let ys = train.detections();
    let size = train.num_ingredients();
    let weights = positive_weights(&ys, size, config.weight_clamp).weights;
    let val_data = match val.filter(|v| !v.is_empty()) {
        Some(v) => Some((recipe_inputs(v, projection)?, v.detections())),
        None => None,
    };

    let mut rng = stage_rng(config.seed, Stage::Detection);
    let mut dims = vec![x.ncols()];
    dims.extend(&config.hidden);
    dims.push(size);
    let mut model = MlpModel::new(&dims, Activation::Sigmoid, &mut rng)?;
    let mut adam = AdamState::new(&model, config.adam);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for batch in shuffled_batches(x.nrows(), config.batch_size, &mut rng) {
            let xb = x.select(Axis(0), &batch);
            let targets: Vec<&DetectionVector> = batch.iter().map(|&i| &ys[i]).collect();
            let (loss, grads) = detection_loss_and_grad(&model, xb.view(), &targets, &weights)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NumericalBlowup(format!("detection loss diverged in epoch {epoch}")));
            }
            adam.step(&mut model, &grads);
            total += loss * batch.len() as f64;
        }
        let val_loss = match &val_data {
            Some((vx, vy)) => Some(detection_loss(&model, vx, vy, &weights)?),
            None => None,
        };
        on_epoch(&EpochLog {
            stage: "id".into(),
            epoch,
            loss: total / x.nrows() as f64,
            val_loss,
        });
    }
    Ok(model)
}

/// Amount-predictor inputs and training masks for every record of `ds`.
fn ap_inputs(
    ds: &Dataset,
    projection: Option<&ProjectionModel>,
    id_model: Option<&MlpModel>,
    config: &PipelineConfig,
) -> Result<(Array2<f64>, Vec<DetectionVector>)> {
    let q = recipe_inputs(ds, projection)?;
    let size = ds.num_ingredients();
    match config.mode {
        Mode::Full => {
            let id = id_model.ok_or_else(|| {
                Error::InvalidInput("full mode needs a trained detector".into())
            })?;
            let p = id.predict(q.view())?;
            let masks: Vec<DetectionVector> =
                p.rows().into_iter().map(|r| detection_mask(&r.to_vec(), config.detection_threshold)).collect();
            let mut y = Array2::zeros((q.nrows(), size));
            for (r, m) in masks.iter().enumerate() {
                for i in m.indices() {
                    y[[r, i]] = 1.0;
                }
            }
            let x = concatenate(Axis(1), &[q.view(), y.view()]).expect("row counts agree");
            Ok((x, masks))
        }
        // no detector: train against the unmasked softmax
        Mode::NoId => Ok((q, vec![DetectionVector::new(vec![true; size]); ds.len()])),
    }
}

/// Loss of one masked prediction and its gradient with respect to the raw
/// softmax output.
pub fn amount_loss_and_grad(
    raw: &[f64],
    mask: &DetectionVector,
    target: &[f64],
    cost: &Array2<f64>,
    config: &PipelineConfig,
) -> Result<(f64, Vec<f64>)> {
    let n = raw.len();
    let s: f64 = raw.iter().zip(mask.flags()).filter(|(_, &m)| m).map(|(r, _)| r).sum();
    if !(s > 0.0) {
        // softmax underflowed on the whole mask; nothing to learn from here
        let v_hat = uniform_over(mask, 1.0)?;
        let loss = match config.loss {
            AmountLoss::Wasserstein => wasserstein_loss(v_hat.values(), target, cost, &config.sinkhorn)?.dual_value,
            AmountLoss::CrossEntropy => amount_ce_loss(v_hat.values(), target, config.ce_eps)?.0,
        };
        return Ok((loss, vec![0.0; n]));
    }
    let v_hat: Vec<f64> = raw
        .iter()
        .zip(mask.flags())
        .map(|(&r, &m)| if m { r / s } else { 0.0 })
        .collect();
    let (loss, g) = match config.loss {
        AmountLoss::Wasserstein => {
            let r = wasserstein_loss(&v_hat, target, cost, &config.sinkhorn)?;
            (r.dual_value, r.gradient)
        }
        AmountLoss::CrossEntropy => amount_ce_loss(&v_hat, target, config.ce_eps)?,
    };
    // v_hat_i = m_i raw_i / s, so dL/draw_i = m_i (g_i - <v_hat, g>) / s
    let inner: f64 = v_hat.iter().zip(&g).map(|(v, gi)| v * gi).sum();
    let grad = (0..n)
        .map(|i| if mask.get(i) { (g[i] - inner) / s } else { 0.0 })
        .collect();
    Ok((loss, grad))
}

/// Batch-mean amount loss and parameter gradients of the amount predictor.
pub fn ap_loss_and_grad(
    model: &MlpModel,
    x: ArrayView2<f64>,
    masks: &[&DetectionVector],
    targets: &[&[f64]],
    cost: &Array2<f64>,
    config: &PipelineConfig,
) -> Result<(f64, Gradients)> {
    let cache = model.forward(x)?;
    let out = cache.output();
    let scale = 1.0 / x.nrows() as f64;
    let mut grad = Array2::zeros(out.raw_dim());
    let mut total = 0.0;
    for r in 0..x.nrows() {
        let raw = out.row(r).to_vec();
        let (loss, g) = amount_loss_and_grad(&raw, masks[r], targets[r], cost, config)?;
        if !loss.is_finite() {
            return Err(Error::NumericalBlowup(format!("amount loss is {loss} on batch row {r}")));
        }
        total += loss * scale;
        for (dst, gi) in grad.row_mut(r).iter_mut().zip(g) {
            *dst = gi * scale;
        }
    }
    let (grads, _) = model.backward(&cache, grad);
    Ok((total, grads))
}

/// Trains the amount predictor with the detector frozen.
pub fn train_ap(
    train: &Dataset,
    val: Option<&Dataset>,
    projection: Option<&ProjectionModel>,
    id_model: Option<&MlpModel>,
    substitution: &SubstitutionModel,
    config: &PipelineConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<MlpModel> {
    config.validate()?;
    check_nonempty(train)?;
    let size = train.num_ingredients();
    if substitution.num_ingredients() != size {
        return Err(Error::DimensionMismatch {
            expected: size,
            got: substitution.num_ingredients(),
        });
    }
    let cost = ground_cost(substitution.distances(), config.sinkhorn.p);
    let (x, masks) = ap_inputs(train, projection, id_model, config)?;
    let targets = unit_targets(train)?;
    let val_data = match val.filter(|v| !v.is_empty()) {
        Some(v) => {
            let (vx, vm) = ap_inputs(v, projection, id_model, config)?;
            Some((vx, vm, unit_targets(v)?))
        }
        None => None,
    };

    let mut rng = stage_rng(config.seed, Stage::Amount);
    let mut dims = vec![x.ncols()];
    dims.extend(&config.hidden);
    dims.push(size);
    let mut model = MlpModel::new(&dims, Activation::Softmax, &mut rng)?;
    let mut adam = AdamState::new(&model, config.adam);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for batch in shuffled_batches(x.nrows(), config.batch_size, &mut rng) {
            let xb = x.select(Axis(0), &batch);
            let bm: Vec<&DetectionVector> = batch.iter().map(|&i| &masks[i]).collect();
            let bt: Vec<&[f64]> = batch.iter().map(|&i| targets[i].as_slice()).collect();
            let (loss, grads) = ap_loss_and_grad(&model, xb.view(), &bm, &bt, &cost, config)?;
            if !grads.is_finite() {
                return Err(Error::NumericalBlowup(format!("amount gradients diverged in epoch {epoch}")));
            }
            adam.step(&mut model, &grads);
            total += loss * batch.len() as f64;
        }
        let val_loss = match &val_data {
            Some((vx, vm, vt)) => {
                let out = model.predict(vx.view())?;
                let mut sum = 0.0;
                for r in 0..vx.nrows() {
                    sum += amount_loss_and_grad(&out.row(r).to_vec(), &vm[r], &vt[r], &cost, config)?.0;
                }
                Some(sum / vx.nrows() as f64)
            }
            None => None,
        };
        on_epoch(&EpochLog {
            stage: "ap".into(),
            epoch,
            loss: total / x.nrows() as f64,
            val_loss,
        });
    }
    Ok(model)
}

fn unit_targets(ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    ds.amounts(1.0)?.into_iter().map(|a| a.normalized()).collect()
}

/// A prediction together with the mask that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub amounts: AmountVector,
    pub mask: DetectionVector,
}

/// Frozen models of a complete pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPipeline {
    pub config: PipelineConfig,
    pub projection: Option<ProjectionModel>,
    pub id_model: Option<MlpModel>,
    pub ap_model: MlpModel,
}

impl TrainedPipeline {
    pub fn new(
        config: PipelineConfig,
        projection: Option<ProjectionModel>,
        id_model: Option<MlpModel>,
        ap_model: MlpModel,
    ) -> Result<Self> {
        config.validate()?;
        let size = ap_model.output_dim();
        let q_dim = match &projection {
            Some(p) => p.output_dim(),
            None => match &id_model {
                Some(id) => id.input_dim(),
                None => ap_model.input_dim(),
            },
        };
        let expected_ap = match config.mode {
            Mode::Full => {
                let id = id_model
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput("full mode needs a trained detector".into()))?;
                for (expected, got) in [(q_dim, id.input_dim()), (size, id.output_dim())] {
                    if expected != got {
                        return Err(Error::DimensionMismatch { expected, got });
                    }
                }
                q_dim + size
            }
            Mode::NoId => {
                let k = config.effective_top_k();
                if k > size {
                    return Err(Error::InvalidK { k, size });
                }
                q_dim
            }
        };
        if ap_model.input_dim() != expected_ap {
            return Err(Error::DimensionMismatch {
                expected: expected_ap,
                got: ap_model.input_dim(),
            });
        }
        Ok(Self {
            config,
            projection,
            id_model,
            ap_model,
        })
    }

    pub fn num_ingredients(&self) -> usize {
        self.ap_model.output_dim()
    }

    /// Dimension of the raw embeddings the pipeline consumes.
    pub fn input_dim(&self) -> usize {
        match (&self.projection, &self.id_model) {
            (Some(p), _) => p.input_dim(),
            (None, Some(id)) if self.config.mode == Mode::Full => id.input_dim(),
            _ => self.ap_model.input_dim(),
        }
    }

    /// Predictions for every row of raw embeddings `z`.
    pub fn predict_batch(&self, z: ArrayView2<f64>) -> Result<Vec<Prediction>> {
        let q = match &self.projection {
            Some(p) => p.project(z)?,
            None => z.to_owned(),
        };
        let total = self.config.total_grams;
        match self.config.mode {
            Mode::Full => {
                let id = self.id_model.as_ref().expect("checked at construction");
                let p = id.predict(q.view())?;
                let masks: Vec<DetectionVector> = p
                    .rows()
                    .into_iter()
                    .map(|r| detection_mask(&r.to_vec(), self.config.detection_threshold))
                    .collect();
                let mut y = Array2::zeros((q.nrows(), self.num_ingredients()));
                for (r, m) in masks.iter().enumerate() {
                    for i in m.indices() {
                        y[[r, i]] = 1.0;
                    }
                }
                let x = concatenate(Axis(1), &[q.view(), y.view()]).expect("row counts agree");
                let raw = self.ap_model.predict(x.view())?;
                masks
                    .into_iter()
                    .zip(raw.rows())
                    .map(|(mask, r)| {
                        Ok(Prediction {
                            amounts: apply_mask(&r.to_vec(), &mask, total)?,
                            mask,
                        })
                    })
                    .collect()
            }
            Mode::NoId => {
                let raw = self.ap_model.predict(q.view())?;
                let k = self.config.effective_top_k();
                raw.rows()
                    .into_iter()
                    .map(|r| {
                        let r = r.to_vec();
                        let mask = top_k_threshold(&r, k)?;
                        Ok(Prediction {
                            amounts: apply_mask(&r, &mask, total)?,
                            mask,
                        })
                    })
                    .collect()
            }
        }
    }

    pub fn predict(&self, z: &[f64]) -> Result<AmountVector> {
        let view = ArrayView2::from_shape((1, z.len()), z).expect("contiguous slice");
        Ok(self.predict_batch(view)?.remove(0).amounts)
    }

    /// Predictions for every record of `ds`, in record order.
    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<Prediction>> {
        self.predict_batch(ds.embedding_matrix().view())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeReport {
    pub id: String,
    #[serde(flatten)]
    pub metrics: RecipeMetrics,
}

/// Split-level means plus the per-recipe breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub cvg: f64,
    pub iou: f64,
    pub emd: f64,
    pub cvg_group: f64,
    pub iou_group: f64,
    pub emd_group: f64,
    pub per_recipe: Vec<RecipeReport>,
}

impl MetricsReport {
    pub fn means(&self) -> RecipeMetrics {
        RecipeMetrics {
            cvg: self.cvg,
            iou: self.iou,
            emd: self.emd,
            cvg_group: self.cvg_group,
            iou_group: self.iou_group,
            emd_group: self.emd_group,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Scores `predictions` (one per record, in order) against the ground truth
/// of `ds`. Recipes whose metrics are undefined are skipped with a warning.
/// With `jobs > 1` recipes are scored on that many threads; the result does
/// not depend on `jobs`.
pub fn evaluate_amounts(
    ds: &Dataset,
    predictions: &[AmountVector],
    substitution: &SubstitutionModel,
    total: f64,
    jobs: usize,
) -> Result<MetricsReport> {
    check_nonempty(ds)?;
    if predictions.len() != ds.len() {
        return Err(Error::DimensionMismatch {
            expected: ds.len(),
            got: predictions.len(),
        });
    }
    if substitution.num_ingredients() != ds.num_ingredients() {
        return Err(Error::DimensionMismatch {
            expected: ds.num_ingredients(),
            got: substitution.num_ingredients(),
        });
    }
    let truths = ds.amounts(total)?;
    let score = |range: std::ops::Range<usize>| -> Vec<Result<RecipeMetrics>> {
        range.map(|i| recipe_metrics(&truths[i], &predictions[i], substitution)).collect()
    };
    let n = ds.len();
    let scored: Vec<Result<RecipeMetrics>> = if jobs <= 1 || n < 2 {
        score(0..n)
    } else {
        let chunk = n.div_ceil(jobs);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|start| {
                    let score = &score;
                    s.spawn(move || score(start..(start + chunk).min(n)))
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        })
    };
    let mut per_recipe = Vec::with_capacity(n);
    for (rec, m) in ds.records.iter().zip(scored) {
        match m {
            Ok(metrics) => per_recipe.push(RecipeReport {
                id: rec.id.clone(),
                metrics,
            }),
            Err(Error::UndefinedMetric(why)) => log::warn!("skipping recipe {}: {why}", rec.id),
            Err(e) => return Err(e),
        }
    }
    let means: Vec<RecipeMetrics> = per_recipe.iter().map(|r| r.metrics).collect();
    let mean = mean_metrics(&means).ok_or(Error::EmptyDataset)?;
    Ok(MetricsReport {
        n: per_recipe.len(),
        cvg: mean.cvg,
        iou: mean.iou,
        emd: mean.emd,
        cvg_group: mean.cvg_group,
        iou_group: mean.iou_group,
        emd_group: mean.emd_group,
        per_recipe,
    })
}

/// Predicts every record of `ds` and scores the result.
pub fn evaluate(
    pipeline: &TrainedPipeline,
    ds: &Dataset,
    substitution: &SubstitutionModel,
    jobs: usize,
) -> Result<MetricsReport> {
    check_nonempty(ds)?;
    let preds: Vec<AmountVector> = pipeline.predict_dataset(ds)?.into_iter().map(|p| p.amounts).collect();
    evaluate_amounts(ds, &preds, substitution, pipeline.config.total_grams, jobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(bits: &[u8]) -> DetectionVector {
        DetectionVector::new(bits.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn threshold_is_strict() {
        let y = DetectionVector::new([0.9, 0.5, 0.51].iter().map(|&p| p > 0.5).collect());
        assert_eq!(y, det(&[1, 0, 1]));
        assert_eq!(detection_mask(&[0.1, 0.2, 0.4], 0.5), det(&[0, 0, 1]));
        assert_eq!(detection_mask(&[0.5, 0.5], 0.5), det(&[1, 0]));
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_threshold(&[0.1, 0.9, 0.4], 2).unwrap(), det(&[0, 1, 1]));
        assert_eq!(top_k_threshold(&[0.1, 0.9, 0.4], 3).unwrap(), det(&[1, 1, 1]));
        assert_eq!(top_k_threshold(&[0.5, 0.5, 0.1], 1).unwrap(), det(&[1, 0, 0]));
        assert!(matches!(top_k_threshold(&[0.5], 2), Err(Error::InvalidK { k: 2, size: 1 })));
    }

    #[test]
    fn mask_renormalizes() {
        let v = apply_mask(&[0.2, 0.5, 0.3], &det(&[1, 0, 1]), 1000.0).unwrap();
        assert!((v.values()[0] - 400.0).abs() < 1e-9);
        assert_eq!(v.values()[1], 0.0);
        assert!((v.values()[2] - 600.0).abs() < 1e-9);
        let v = apply_mask(&[0.2, 0.5, 0.3], &det(&[1, 1, 1]), 1000.0).unwrap();
        for (x, r) in v.values().iter().zip([200.0, 500.0, 300.0]) {
            assert!((x - r).abs() < 1e-9);
        }
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        for bad in [
            PipelineConfig { detection_threshold: 1.0, ..Default::default() },
            PipelineConfig { top_k: Some(0), ..Default::default() },
            PipelineConfig { batch_size: 0, ..Default::default() },
            PipelineConfig { hidden: vec![4, 0], ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!("no_id".parse::<Mode>().unwrap(), Mode::NoId);
        assert_eq!(AmountLoss::CrossEntropy.to_string(), "cross_entropy");
        assert!("other".parse::<AmountLoss>().is_err());
    }
}
