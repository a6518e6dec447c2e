//! The built-in differentiable classifier.
//!
//! A single hidden layer of sigmoid units followed by a linear output layer,
//! trained with plain mini-batch gradient descent on softmax cross-entropy.
//! Input gradients are computed by exact backpropagation; SmoothGrad averages
//! them over Gaussian-perturbed copies of the input.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabeledImage;
use crate::saliency::{reduce_to_spatial, ImageTensor, SaliencyMap};

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("input has {got} values, classifier expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class index {index} out of range for {n_classes} classes")]
    ClassOutOfRange { index: usize, n_classes: usize },
    #[error("invalid training config: {0}")]
    Config(&'static str),
    #[error("invalid smoothgrad parameters: {0}")]
    SmoothGrad(&'static str),
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("malformed parameters: {0}")]
    Params(String),
    #[error("saliency reduction failed: {0}")]
    Saliency(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.2,
            epochs: 200,
            batch_size: 16,
            hidden: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ClassifierError::Config("learning rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(ClassifierError::Config("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(ClassifierError::Config("batch size must be positive"));
        }
        if self.hidden == 0 {
            return Err(ClassifierError::Config("hidden width must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub final_loss: f64,
    pub train_accuracy: f64,
}

/// One-hidden-layer sigmoid network, `D -> H -> C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Classifier {
    /// Builds a classifier from explicit parameters. `w1` is `H x D` and
    /// `w2` is `C x H`, both row-major.
    pub fn from_parts(
        input_dim: usize,
        hidden: usize,
        n_classes: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<Self, ClassifierError> {
        let bad = |what: &str| ClassifierError::Params(what.to_string());
        let w1 = Array2::from_shape_vec((hidden, input_dim), w1).map_err(|_| bad("w1 shape"))?;
        let w2 = Array2::from_shape_vec((n_classes, hidden), w2).map_err(|_| bad("w2 shape"))?;
        if b1.len() != hidden {
            return Err(bad("b1 length"));
        }
        if b2.len() != n_classes {
            return Err(bad("b2 length"));
        }
        let c = Self {
            w1,
            b1: Array1::from(b1),
            w2,
            b2: Array1::from(b2),
        };
        if !c.params().all(|v| v.is_finite()) {
            return Err(bad("non-finite parameter"));
        }
        Ok(c)
    }

    pub fn zeros(input_dim: usize, hidden: usize, n_classes: usize) -> Self {
        Self {
            w1: Array2::zeros((hidden, input_dim)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((n_classes, hidden)),
            b2: Array1::zeros(n_classes),
        }
    }

    fn init(input_dim: usize, hidden: usize, n_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
        };
        let w1 = glorot(hidden, input_dim);
        let w2 = glorot(n_classes, hidden);
        Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(n_classes),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.w2.nrows()
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2)
    }

    /// Multiplies the hidden-to-output weights by `factor`.
    pub fn scale_output_weights(&mut self, factor: f64) {
        self.w2 *= factor;
    }

    fn check_dim(&self, got: usize) -> Result<(), ClassifierError> {
        if got != self.input_dim() {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    fn check_class(&self, index: usize) -> Result<(), ClassifierError> {
        if index >= self.n_classes() {
            return Err(ClassifierError::ClassOutOfRange {
                index,
                n_classes: self.n_classes(),
            });
        }
        Ok(())
    }

    fn hidden_activations(&self, x: ArrayView1<f64>) -> Array1<f64> {
        (self.w1.dot(&x) + &self.b1).mapv(sigmoid)
    }

    /// Class logits for a raw input vector.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        self.check_dim(x.len())?;
        let h = self.hidden_activations(ArrayView1::from(x));
        Ok((self.w2.dot(&h) + &self.b2).to_vec())
    }

    /// Class scores (logits) for an image; argmax is the predicted class.
    pub fn predict(&self, image: &ImageTensor) -> Result<Vec<f64>, ClassifierError> {
        self.logits(image.values())
    }

    pub fn predict_class(&self, image: &ImageTensor) -> Result<usize, ClassifierError> {
        Ok(argmax(&self.predict(image)?))
    }

    /// Gradient of one class logit with respect to every input value.
    pub fn gradient_at(&self, x: &[f64], class_index: usize) -> Result<Vec<f64>, ClassifierError> {
        self.check_dim(x.len())?;
        self.check_class(class_index)?;
        let h = self.hidden_activations(ArrayView1::from(x));
        let delta = &self.w2.row(class_index) * &h.mapv(|a| a * (1.0 - a));
        Ok(self.w1.t().dot(&delta).to_vec())
    }

    pub fn input_gradient(&self, image: &ImageTensor, class_index: usize) -> Result<Vec<f64>, ClassifierError> {
        self.gradient_at(image.values(), class_index)
    }

    /// Mean input gradient over the perturbed copies of `image` given by
    /// [`SmoothGradParams::perturbations`].
    pub fn smoothgrad(
        &self,
        image: &ImageTensor,
        class_index: usize,
        params: &SmoothGradParams,
    ) -> Result<Vec<f64>, ClassifierError> {
        self.check_dim(image.dim())?;
        self.check_class(class_index)?;
        let inputs = params.perturbations(image)?;
        let mut acc = vec![0.0; image.dim()];
        for x in &inputs {
            for (a, g) in acc.iter_mut().zip(self.gradient_at(x, class_index)?) {
                *a += g;
            }
        }
        let n = inputs.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    pub fn accuracy(&self, items: &[LabeledImage]) -> Result<f64, ClassifierError> {
        if items.is_empty() {
            return Err(ClassifierError::EmptyDataset);
        }
        let mut correct = 0usize;
        for it in items {
            if self.predict_class(&it.image)? == it.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / items.len() as f64)
    }

    pub fn to_params(&self) -> ClassifierParams {
        ClassifierParams {
            input_dim: self.input_dim(),
            hidden: self.hidden(),
            n_classes: self.n_classes(),
            w1: self.w1.iter().copied().collect(),
            b1: self.b1.to_vec(),
            w2: self.w2.iter().copied().collect(),
            b2: self.b2.to_vec(),
        }
    }

    pub fn from_params(p: ClassifierParams) -> Result<Self, ClassifierError> {
        Self::from_parts(p.input_dim, p.hidden, p.n_classes, p.w1, p.b1, p.w2, p.b2)
    }
}

/// Serializable flat form of a [`Classifier`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub n_classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub fn argmax(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &s)| if s > best.1 { (i, s) } else { best })
        .0
}

/// Fits a fresh classifier. Deterministic given `config.seed` and the order
/// of `items`.
pub fn train(
    items: &[LabeledImage],
    n_classes: usize,
    config: &TrainConfig,
) -> Result<(Classifier, TrainReport), ClassifierError> {
    config.validate()?;
    let first = items.first().ok_or(ClassifierError::EmptyDataset)?;
    let dim = first.image.dim();
    for it in items {
        if it.label >= n_classes {
            return Err(ClassifierError::LabelOutOfRange {
                label: it.label,
                n_classes,
            });
        }
        if it.image.dim() != dim {
            return Err(ClassifierError::DimensionMismatch {
                expected: dim,
                got: it.image.dim(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Classifier::init(dim, config.hidden, n_classes, &mut rng);

    let n = items.len();
    let mut x = Array2::<f64>::zeros((n, dim));
    for (mut row, it) in x.axis_iter_mut(Axis(0)).zip(items) {
        row.assign(&ArrayView1::from(it.image.values()));
    }
    let labels: Vec<usize> = items.iter().map(|it| it.label).collect();

    let mut order: Vec<usize> = (0..n).collect();
    let mut final_loss = f64::NAN;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let bsz = batch.len() as f64;
            // forward
            let h = (xb.dot(&model.w1.t()) + &model.b1).mapv(sigmoid);
            let logits = h.dot(&model.w2.t()) + &model.b2;
            // softmax cross-entropy; dlogits = (p - onehot) / B
            let mut dlogits = logits.clone();
            for (mut row, &y) in dlogits.axis_iter_mut(Axis(0)).zip(batch.iter().map(|&i| &labels[i])) {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let log_sum = row.fold(0.0, |acc, &v| acc + (v - max).exp()).ln() + max;
                epoch_loss += log_sum - row[y];
                row.mapv_inplace(|v| (v - log_sum).exp());
                row[y] -= 1.0;
            }
            dlogits /= bsz;
            // backward
            let grad_w2 = dlogits.t().dot(&h);
            let grad_b2 = dlogits.sum_axis(Axis(0));
            let dh = dlogits.dot(&model.w2) * h.mapv(|a| a * (1.0 - a));
            let grad_w1 = dh.t().dot(&xb);
            let grad_b1 = dh.sum_axis(Axis(0));
            model.w2.scaled_add(-config.learning_rate, &grad_w2);
            model.b2.scaled_add(-config.learning_rate, &grad_b2);
            model.w1.scaled_add(-config.learning_rate, &grad_w1);
            model.b1.scaled_add(-config.learning_rate, &grad_b1);
        }
        final_loss = epoch_loss / n as f64;
        if !final_loss.is_finite() || !model.params().all(|v| v.is_finite()) {
            return Err(ClassifierError::Diverged { epoch });
        }
    }

    let logits = (x.dot(&model.w1.t()) + &model.b1).mapv(sigmoid).dot(&model.w2.t()) + &model.b2;
    let correct = logits
        .axis_iter(Axis(0))
        .zip(&labels)
        .filter(|(row, &y)| argmax(&row.to_vec()) == y)
        .count();
    Ok((
        model,
        TrainReport {
            final_loss,
            train_accuracy: correct as f64 / n as f64,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothGradParams {
    pub samples: usize,
    /// Noise standard deviation as a fraction of the input's value range.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SmoothGradParams {
    fn default() -> Self {
        Self {
            samples: 25,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SmoothGradParams {
    /// The perturbed inputs SmoothGrad averages over, in draw order.
    pub fn perturbations(&self, image: &ImageTensor) -> Result<Vec<Vec<f64>>, ClassifierError> {
        if self.samples == 0 {
            return Err(ClassifierError::SmoothGrad("sample count must be at least 1"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(ClassifierError::SmoothGrad("noise scale must be nonnegative"));
        }
        let values = image.values();
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let sd = self.noise * (hi - lo);
        if sd == 0.0 {
            return Ok(vec![values.to_vec(); self.samples]);
        }
        let normal = Normal::new(0.0, sd).map_err(|_| ClassifierError::SmoothGrad("bad noise scale"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok((0..self.samples)
            .map(|_| values.iter().map(|v| v + normal.sample(&mut rng)).collect())
            .collect())
    }
}

/// Gradient saliency methods computed by the built-in classifier.
#[derive(Debug, Clone, PartialEq)]
pub enum GradientMethod {
    Vanilla,
    SmoothGrad(SmoothGradParams),
}

impl GradientMethod {
    pub fn id(&self) -> &'static str {
        match self {
            GradientMethod::Vanilla => "vanilla",
            GradientMethod::SmoothGrad(_) => "smoothgrad",
        }
    }
}

/// Spatial saliency map for `class_index` (channel-reduced gradient).
pub fn gradient_saliency(
    model: &Classifier,
    image: &ImageTensor,
    image_id: &str,
    method: &GradientMethod,
    class_index: usize,
) -> Result<SaliencyMap, ClassifierError> {
    let raw = match method {
        GradientMethod::Vanilla => model.input_gradient(image, class_index)?,
        GradientMethod::SmoothGrad(p) => model.smoothgrad(image, class_index, p)?,
    };
    reduce_to_spatial(image.width(), image.height(), image.channels(), &raw, method.id(), image_id)
        .map_err(|e| ClassifierError::Saliency(e.to_string()))
}
