//! Automated evaluation schemes.
//!
//! All four share one exposure axis: at rate `r` the keep schemes (KAR, KAE)
//! retain the top `r` of the ranking and fill the rest, while the remove
//! schemes (ROAR, ROAE) fill the top `r` and keep the rest. ROAE and KAE
//! modify the test set for a fixed model; ROAR and KAR modify the training
//! set, retrain, and evaluate on the unmodified test set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{train, Classifier, ClassifierError, TrainConfig};
use crate::dataset::LabeledImage;
use crate::masking::{apply_mask, remove_pixels, reveal_set, ExposureSchedule, FillStrategy, MaskError};
use crate::metrics::{AccuracyCurve, CurvePoint, MetricsError, SchemeTag};
use crate::saliency::{ImageTensor, PixelRanking};

#[derive(Debug, Error)]
pub enum AutoEvalError {
    #[error("no saliency map for image {0}")]
    MissingSaliency(String),
    #[error("scheme {0} is not a {1} scheme")]
    WrongScheme(SchemeTag, &'static str),
    #[error("evaluation set is empty")]
    Empty,
    #[error("retraining diverged at rate {rate}")]
    Diverged { rate: f64 },
    #[error("classifier returned {got} predictions for {expected} images")]
    PredictionCount { expected: usize, got: usize },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("remote classifier: {0}")]
    Remote(String),
}

/// A fixed model that labels a batch of images.
pub trait ScoreModel: Sync {
    fn classify(&self, images: &[ImageTensor]) -> Result<Vec<usize>, AutoEvalError>;
}

impl ScoreModel for Classifier {
    fn classify(&self, images: &[ImageTensor]) -> Result<Vec<usize>, AutoEvalError> {
        images
            .iter()
            .map(|im| self.predict_class(im).map_err(AutoEvalError::from))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoEvalJob {
    pub scheme: SchemeTag,
    pub method_id: String,
    #[serde(default)]
    pub schedule: ExposureSchedule,
    pub fill: FillStrategy,
    /// Used by ROAR and KAR; its seed is the retrain seed.
    #[serde(default)]
    pub train: TrainConfig,
}

fn keeps_top(scheme: SchemeTag) -> bool {
    matches!(scheme, SchemeTag::Kar | SchemeTag::Kae)
}

/// Masks one image for `scheme` at `rate`.
pub fn modify(
    scheme: SchemeTag,
    image: &ImageTensor,
    ranking: &PixelRanking,
    rate: f64,
    fill: &FillStrategy,
) -> Result<ImageTensor, MaskError> {
    let top = reveal_set(ranking, rate, image.n_pixels())?;
    if keeps_top(scheme) {
        apply_mask(image, &top, fill)
    } else {
        remove_pixels(image, &top, fill)
    }
}

fn rankings_for<'a>(
    items: &[LabeledImage],
    rankings: &'a BTreeMap<String, PixelRanking>,
) -> Result<Vec<&'a PixelRanking>, AutoEvalError> {
    items
        .iter()
        .map(|it| rankings.get(&it.id).ok_or_else(|| AutoEvalError::MissingSaliency(it.id.clone())))
        .collect()
}

fn accuracy(model: &dyn ScoreModel, images: &[ImageTensor], labels: &[usize]) -> Result<f64, AutoEvalError> {
    let preds = model.classify(images)?;
    if preds.len() != labels.len() {
        return Err(AutoEvalError::PredictionCount {
            expected: labels.len(),
            got: preds.len(),
        });
    }
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// ROAE or KAE: a fixed model evaluated on masked test images at `0` and
/// every schedule rate.
pub fn masked_eval_curve(
    job: &AutoEvalJob,
    model: &dyn ScoreModel,
    test: &[LabeledImage],
    rankings: &BTreeMap<String, PixelRanking>,
) -> Result<AccuracyCurve, AutoEvalError> {
    if !matches!(job.scheme, SchemeTag::Roae | SchemeTag::Kae) {
        return Err(AutoEvalError::WrongScheme(job.scheme, "test-set"));
    }
    if test.is_empty() {
        return Err(AutoEvalError::Empty);
    }
    let ranks = rankings_for(test, rankings)?;
    let labels: Vec<usize> = test.iter().map(|it| it.label).collect();
    let mut points = Vec::new();
    for rate in job.schedule.metric_axis() {
        let images = test
            .iter()
            .zip(&ranks)
            .map(|(it, r)| modify(job.scheme, &it.image, r, rate, &job.fill))
            .collect::<Result<Vec<_>, _>>()?;
        points.push(CurvePoint {
            rate,
            accuracy: accuracy(model, &images, &labels)?,
        });
    }
    Ok(AccuracyCurve::new(job.method_id.clone(), job.scheme, points)?)
}

/// ROAR or KAR: one retrain per rate on the masked training set, each
/// evaluated on the clean test set. Rates run on separate threads.
pub fn retrain_curve(
    job: &AutoEvalJob,
    train_items: &[LabeledImage],
    test: &[LabeledImage],
    n_classes: usize,
    rankings: &BTreeMap<String, PixelRanking>,
) -> Result<AccuracyCurve, AutoEvalError> {
    if !matches!(job.scheme, SchemeTag::Roar | SchemeTag::Kar) {
        return Err(AutoEvalError::WrongScheme(job.scheme, "retrain"));
    }
    if test.is_empty() || train_items.is_empty() {
        return Err(AutoEvalError::Empty);
    }
    let ranks = rankings_for(train_items, rankings)?;
    let axis = job.schedule.metric_axis();
    let results: Vec<Result<f64, AutoEvalError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = axis
            .iter()
            .map(|&rate| {
                let ranks = &ranks;
                scope.spawn(move || -> Result<f64, AutoEvalError> {
                    let modified = train_items
                        .iter()
                        .zip(ranks)
                        .map(|(it, r)| {
                            Ok(LabeledImage {
                                id: it.id.clone(),
                                label: it.label,
                                image: modify(job.scheme, &it.image, r, rate, &job.fill)?,
                            })
                        })
                        .collect::<Result<Vec<_>, MaskError>>()?;
                    let (model, _) = train(&modified, n_classes, &job.train).map_err(|e| match e {
                        ClassifierError::Diverged { .. } => AutoEvalError::Diverged { rate },
                        other => other.into(),
                    })?;
                    Ok(model.accuracy(test)?)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("retrain thread panicked")).collect()
    });
    let mut points = Vec::with_capacity(axis.len());
    for (rate, acc) in axis.into_iter().zip(results) {
        points.push(CurvePoint { rate, accuracy: acc? });
    }
    Ok(AccuracyCurve::new(job.method_id.clone(), job.scheme, points)?)
}

/// Dispatches on the job's scheme. `model` is the fixed classifier used by
/// ROAE and KAE.
pub fn run_job(
    job: &AutoEvalJob,
    model: &dyn ScoreModel,
    train_items: &[LabeledImage],
    test: &[LabeledImage],
    n_classes: usize,
    rankings: &BTreeMap<String, PixelRanking>,
) -> Result<AccuracyCurve, AutoEvalError> {
    match job.scheme {
        SchemeTag::Roae | SchemeTag::Kae => masked_eval_curve(job, model, test, rankings),
        SchemeTag::Roar | SchemeTag::Kar => retrain_curve(job, train_items, test, n_classes, rankings),
        SchemeTag::Crowd => Err(AutoEvalError::WrongScheme(job.scheme, "automated")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saliency::{generate_random_saliency, rank_pixels};

    fn blobs() -> (Vec<LabeledImage>, Vec<LabeledImage>) {
        // Class = which half of a 4x1 strip is bright.
        let make = |i: usize| {
            let label = i % 2;
            let jitter = (i % 5) as f64 * 0.02;
            let values = if label == 0 {
                vec![0.9 - jitter, 0.8, 0.1, 0.1 + jitter]
            } else {
                vec![0.1 + jitter, 0.1, 0.8, 0.9 - jitter]
            };
            LabeledImage {
                id: format!("b{i}"),
                label,
                image: ImageTensor::new(4, 1, 1, values).unwrap(),
            }
        };
        ((0..40).map(make).collect(), (40..60).map(make).collect())
    }

    fn random_rankings(items: &[&LabeledImage]) -> BTreeMap<String, PixelRanking> {
        items
            .iter()
            .enumerate()
            .map(|(k, it)| (it.id.clone(), rank_pixels(&generate_random_saliency(4, 1, k as u64, &it.id).unwrap())))
            .collect()
    }

    fn job(scheme: SchemeTag) -> AutoEvalJob {
        AutoEvalJob {
            scheme,
            method_id: "random".into(),
            schedule: ExposureSchedule::default(),
            fill: FillStrategy::ConstantGray { value: 0.5 },
            train: TrainConfig {
                epochs: 30,
                hidden: 4,
                ..Default::default()
            },
        }
    }

    #[test]
    fn kae_and_roae_anchor_on_clean_accuracy() {
        let (train_set, test_set) = blobs();
        let (model, _) = train(&train_set, 2, &job(SchemeTag::Kae).train).unwrap();
        let clean = model.accuracy(&test_set).unwrap();
        let ranks = random_rankings(&test_set.iter().collect::<Vec<_>>());
        let kae = masked_eval_curve(&job(SchemeTag::Kae), &model, &test_set, &ranks).unwrap();
        let roae = masked_eval_curve(&job(SchemeTag::Roae), &model, &test_set, &ranks).unwrap();
        assert_eq!(kae.points().len(), 9);
        assert_eq!(kae.accuracy_at(1.0), Some(clean));
        assert_eq!(roae.accuracy_at(0.0), Some(clean));
    }

    #[test]
    fn keep_and_remove_partition_pixels() {
        let (_, test_set) = blobs();
        let img = &test_set[0].image;
        let ranking = PixelRanking::from_order(vec![2, 0, 3, 1]).unwrap();
        let fill = FillStrategy::ConstantBlack;
        for rate in ExposureSchedule::default().metric_axis() {
            let kept = modify(SchemeTag::Kae, img, &ranking, rate, &fill).unwrap();
            let removed = modify(SchemeTag::Roae, img, &ranking, rate, &fill).unwrap();
            for i in 0..4 {
                let in_kept = kept.values()[i] == img.values()[i];
                let in_removed = removed.values()[i] == 0.0;
                assert_eq!(in_kept, in_removed, "rate {rate} pixel {i}");
            }
        }
    }

    #[test]
    fn missing_saliency_and_wrong_scheme() {
        let (train_set, test_set) = blobs();
        let (model, _) = train(&train_set, 2, &job(SchemeTag::Kae).train).unwrap();
        let empty = BTreeMap::new();
        assert!(matches!(
            masked_eval_curve(&job(SchemeTag::Kae), &model, &test_set, &empty),
            Err(AutoEvalError::MissingSaliency(_))
        ));
        assert!(matches!(
            masked_eval_curve(&job(SchemeTag::Roar), &model, &test_set, &empty),
            Err(AutoEvalError::WrongScheme(..))
        ));
    }

    #[test]
    fn roar_and_kar_anchor_on_baseline() {
        let (train_set, test_set) = blobs();
        let cfg = job(SchemeTag::Roar).train;
        let (baseline, _) = train(&train_set, 2, &cfg).unwrap();
        let base = baseline.accuracy(&test_set).unwrap();
        let ranks = random_rankings(&train_set.iter().collect::<Vec<_>>());
        let roar = retrain_curve(&job(SchemeTag::Roar), &train_set, &test_set, 2, &ranks).unwrap();
        let kar = retrain_curve(&job(SchemeTag::Kar), &train_set, &test_set, 2, &ranks).unwrap();
        assert_eq!(roar.accuracy_at(0.0), Some(base));
        assert_eq!(kar.accuracy_at(1.0), Some(base));
        assert_eq!(roar, retrain_curve(&job(SchemeTag::Roar), &train_set, &test_set, 2, &ranks).unwrap());
    }

    #[test]
    fn divergence_is_reported_with_rate() {
        let (train_set, test_set) = blobs();
        let ranks = random_rankings(&train_set.iter().collect::<Vec<_>>());
        let mut j = job(SchemeTag::Roar);
        j.train.learning_rate = f64::MAX;
        j.train.epochs = 50;
        assert!(matches!(
            retrain_curve(&j, &train_set, &test_set, 2, &ranks),
            Err(AutoEvalError::Diverged { .. })
        ));
    }
}
