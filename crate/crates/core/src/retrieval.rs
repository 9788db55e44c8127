//! Shared linear projection aligning text and image features.
//!
//! One fully connected layer maps both modalities into a common space and is
//! trained with the batch-hard triplet loss anchored on text.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::{triplet_retrieval_loss, Activation, AdamConfig, AdamState, Dense, MlpModel, DEFAULT_MARGIN};
use crate::rng::{stage_rng, Stage};

/// Row-aligned text and image features of the same recipes.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedFeatures {
    text: Array2<f64>,
    image: Array2<f64>,
}

impl PairedFeatures {
    pub fn new(text: Array2<f64>, image: Array2<f64>) -> Result<Self> {
        if text.dim() != image.dim() {
            return Err(Error::DimensionMismatch {
                expected: text.nrows(),
                got: image.nrows(),
            });
        }
        if text.iter().chain(image.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        Ok(Self { text, image })
    }

    pub fn len(&self) -> usize {
        self.text.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.text.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.text.ncols()
    }

    pub fn text(&self) -> &Array2<f64> {
        &self.text
    }

    pub fn image(&self) -> &Array2<f64> {
        &self.image
    }
}

/// A single identity-activation layer shared by both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    model: MlpModel,
}

impl ProjectionModel {
    pub fn new<R: rand::Rng>(input_dim: usize, output_dim: usize, rng: &mut R) -> Result<Self> {
        Self::from_model(MlpModel::new(&[input_dim, output_dim], Activation::Identity, rng)?)
    }

    pub fn from_layer(layer: Dense) -> Result<Self> {
        Self::from_model(MlpModel::from_layers(vec![layer])?)
    }

    /// Accepts a one-layer identity model, e.g. a loaded checkpoint.
    pub fn from_model(model: MlpModel) -> Result<Self> {
        if model.layers.len() != 1 || model.layers[0].activation != Activation::Identity {
            return Err(Error::Format(
                "projection checkpoint must hold exactly one identity layer".into(),
            ));
        }
        Ok(Self { model })
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn layer(&self) -> &Dense {
        &self.model.layers[0]
    }

    pub fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.model.output_dim()
    }

    /// `q = W z + b` for each row of `z`.
    pub fn project(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.model.predict(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    pub margin: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Output dimension; `None` keeps the input dimension.
    pub output_dim: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            epochs: 10,
            batch_size: 64,
            output_dim: None,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Mean batch loss per epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

/// Triplet loss of `model` on one batch together with parameter gradients.
pub fn projection_loss_and_grad(
    model: &ProjectionModel,
    text: ArrayView2<f64>,
    image: ArrayView2<f64>,
    margin: f64,
) -> Result<(f64, crate::nn::Gradients)> {
    let ct = model.model.forward(text)?;
    let ci = model.model.forward(image)?;
    let t = triplet_retrieval_loss(ct.output().view(), ci.output().view(), margin)?;
    // both modalities pass through the same parameters, so gradients add
    let (mut grads, _) = model.model.backward(&ct, t.grad_text);
    let (gi, _) = model.model.backward(&ci, t.grad_image);
    grads.add_assign(&gi);
    Ok((t.loss, grads))
}

/// Trains a fresh projection on shuffled mini-batches. Batches smaller than
/// two rows are skipped since they have no negatives.
pub fn train_projection(
    features: &PairedFeatures,
    config: &RetrievalConfig,
    mut on_epoch: impl FnMut(EpochLoss),
) -> Result<ProjectionModel> {
    if features.len() < 2 {
        return Err(Error::BatchTooSmall(features.len()));
    }
    if config.batch_size < 2 || config.margin < 0.0 || !config.margin.is_finite() {
        return Err(Error::InvalidConfig(
            "retrieval needs batch_size >= 2 and a finite nonnegative margin".into(),
        ));
    }
    let mut rng = stage_rng(config.seed, Stage::Retrieval);
    let out = config.output_dim.unwrap_or(features.dim());
    let mut model = ProjectionModel::new(features.dim(), out, &mut rng)?;
    let mut adam = AdamState::new(&model.model, config.adam);
    let mut order: Vec<usize> = (0..features.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let text = features.text.select(Axis(0), chunk);
            let image = features.image.select(Axis(0), chunk);
            let (loss, grads) = projection_loss_and_grad(&model, text.view(), image.view(), config.margin)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NumericalBlowup(format!("triplet loss diverged in epoch {epoch}")));
            }
            adam.step(&mut model.model, &grads);
            total += loss;
            batches += 1;
        }
        on_epoch(EpochLoss {
            epoch,
            loss: total / batches.max(1) as f64,
        });
    }
    Ok(model)
}
