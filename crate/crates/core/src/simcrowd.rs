//! Synthetic data and simulated workers.
//!
//! Images are colored shapes on a noisy gray background, so every image has
//! a known object mask. A simulated worker recognizes the object once a
//! personal fraction of its pixels is visible, which lets the whole crowd
//! path run without people.

use std::collections::BTreeMap;
use std::error::Error as StdError;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crowdgame::{CampaignAssets, Choice, GameError, PairId, SharedCampaign, TaskView, TrialOutcome};
use crate::dataset::{Dataset, LabeledImage, SplitDataset};
use crate::masking::{reveal_set, ExposureSchedule};
use crate::saliency::{ImageTensor, SaliencyMap};
use crate::seeds;

pub const ORACLE_METHOD_ID: &str = "oracle";

/// Smallest and largest object size as a fraction of the image.
pub const OBJECT_FRACTION: (f64, f64) = (0.05, 0.40);

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("need at least 2 classes and at most {max}, got {got}")]
    ClassCount { got: usize, max: usize },
    #[error("images per class must be positive")]
    NoImages,
    #[error("test fraction {0} leaves an empty split")]
    TestFraction(f64),
    #[error("noise scale must be finite and nonnegative")]
    Noise,
    #[error("a {width}x{height} image cannot hold an object covering 5-40% of its pixels")]
    ObjectSize { width: usize, height: usize },
    #[error("center jitter {0} must be in [0, 0.25]")]
    Jitter(f64),
    #[error("object mask is empty")]
    EmptyMask,
    #[error("image {0} has no object mask")]
    NoMask(String),
    #[error("worker profile out of range: {0}")]
    Profile(&'static str),
    #[error("worker population is empty")]
    EmptyPopulation,
    #[error("game backend: {0}")]
    Backend(String),
    #[error("simulated worker could not finish trial {0}")]
    Stuck(u64),
}

const SHAPES: [&str; 4] = ["square", "disk", "triangle", "cross"];
const COLORS: [(&str, [f64; 3]); 4] = [
    ("red", [0.9, 0.15, 0.15]),
    ("green", [0.15, 0.8, 0.2]),
    ("blue", [0.2, 0.3, 0.9]),
    ("yellow", [0.9, 0.85, 0.1]),
];

/// Shape and color of class `c`. Consecutive classes differ in both.
fn class_parts(c: usize) -> (usize, usize) {
    (c % SHAPES.len(), (c + c / SHAPES.len()) % COLORS.len())
}

pub fn class_name(c: usize) -> String {
    let (s, k) = class_parts(c);
    format!("{}-{}", COLORS[k].0, SHAPES[s])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDatasetConfig {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub images_per_class: usize,
    /// Standard deviation of per-value Gaussian noise.
    pub noise: f64,
    /// Largest offset of the object center from the image center, as a
    /// fraction of the shorter side.
    pub jitter: f64,
    /// Share of each class held out for testing.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticDatasetConfig {
    fn default() -> Self {
        Self {
            width: 16,
            height: 16,
            classes: 8,
            images_per_class: 40,
            noise: 0.1,
            jitter: 0.06,
            test_fraction: 0.25,
            seed: 0,
        }
    }
}

/// A generated dataset: stratified train/test split plus object masks.
pub type SyntheticDataset = SplitDataset;

fn inside(shape: usize, dx: f64, dy: f64, s: f64) -> bool {
    match SHAPES[shape] {
        "square" => dx.abs() <= s && dy.abs() <= s,
        "disk" => dx * dx + dy * dy <= s * s,
        "triangle" => dy.abs() <= s && dx.abs() <= (dy + s) / 2.0,
        _ => (dx.abs() <= s / 3.0 && dy.abs() <= s) || (dy.abs() <= s / 3.0 && dx.abs() <= s),
    }
}

fn draw_mask(shape: usize, width: usize, height: usize, jitter: f64, rng: &mut ChaCha8Rng) -> Option<Vec<bool>> {
    let n = (width * height) as f64;
    let short = width.min(height) as f64;
    for _ in 0..200 {
        let s = rng.random_range(0.2 * short..0.4 * short);
        let j = jitter * short;
        let cx = width as f64 / 2.0 + rng.random_range(-j..=j);
        let cy = height as f64 / 2.0 + rng.random_range(-j..=j);
        let mask: Vec<bool> = (0..width * height)
            .map(|i| inside(shape, (i % width) as f64 + 0.5 - cx, (i / width) as f64 + 0.5 - cy, s))
            .collect();
        let frac = mask.iter().filter(|&&m| m).count() as f64 / n;
        if (OBJECT_FRACTION.0..=OBJECT_FRACTION.1).contains(&frac) {
            return Some(mask);
        }
    }
    None
}

pub fn generate_synthetic_dataset(config: &SyntheticDatasetConfig) -> Result<SyntheticDataset, SimError> {
    let max = SHAPES.len() * COLORS.len();
    if config.classes < 2 || config.classes > max {
        return Err(SimError::ClassCount {
            got: config.classes,
            max,
        });
    }
    if config.images_per_class == 0 {
        return Err(SimError::NoImages);
    }
    let n_test = (config.test_fraction * config.images_per_class as f64).round() as usize;
    if !(0.0..1.0).contains(&config.test_fraction) || n_test == 0 || n_test >= config.images_per_class {
        return Err(SimError::TestFraction(config.test_fraction));
    }
    if !(config.noise >= 0.0 && config.noise.is_finite()) {
        return Err(SimError::Noise);
    }
    if !(0.0..=0.25).contains(&config.jitter) {
        return Err(SimError::Jitter(config.jitter));
    }
    let (w, h) = (config.width, config.height);
    if w < 4 || h < 4 {
        return Err(SimError::ObjectSize { width: w, height: h });
    }

    let class_names: Vec<String> = (0..config.classes).map(class_name).collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut masks = BTreeMap::new();
    let noise = Normal::new(0.0, config.noise).expect("validated noise scale");
    for c in 0..config.classes {
        let (shape, color) = class_parts(c);
        let rgb = COLORS[color].1;
        for k in 0..config.images_per_class {
            let mut rng = seeds::rng(config.seed, seeds::DATASET, (c * config.images_per_class + k) as u64);
            let mask = draw_mask(shape, w, h, config.jitter, &mut rng).ok_or(SimError::ObjectSize { width: w, height: h })?;
            let background: f64 = rng.random_range(0.35..0.65);
            let mut values = Vec::with_capacity(w * h * 3);
            for &m in &mask {
                for ch in rgb {
                    let base = if m { ch } else { background };
                    values.push((base + noise.sample(&mut rng)).clamp(0.0, 1.0));
                }
            }
            let id = format!("{}-{k:03}", class_names[c]);
            let item = LabeledImage {
                id: id.clone(),
                label: c,
                image: ImageTensor::new(w, h, 3, values).expect("values are clamped to [0, 1]"),
            };
            masks.insert(id, mask);
            if k < n_test {
                test.push(item);
            } else {
                train.push(item);
            }
        }
    }
    Ok(SyntheticDataset {
        train: Dataset {
            class_names: class_names.clone(),
            items: train,
        },
        test: Dataset {
            class_names,
            items: test,
        },
        masks,
    })
}

/// Upper-bound explanation: object pixels first (in row-major order, via a
/// tiny decreasing ramp), background last.
pub fn oracle_saliency(mask: &[bool], width: usize, height: usize, image_id: &str) -> Result<SaliencyMap, SimError> {
    if !mask.iter().any(|&m| m) {
        return Err(SimError::EmptyMask);
    }
    let scores = mask
        .iter()
        .enumerate()
        .map(|(i, &m)| if m { (1.0 - 1e-6 * i as f64) as f32 } else { 0.0 })
        .collect();
    SaliencyMap::new(width, height, scores, ORACLE_METHOD_ID, image_id).map_err(|_| SimError::EmptyMask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerProfile {
    /// Object coverage needed to recognize the class.
    pub theta: f64,
    /// Chance of a random guess instead of "I don't know" below threshold.
    pub guess: f64,
    pub seed: u64,
}

impl WorkerProfile {
    pub fn new(theta: f64, guess: f64, seed: u64) -> Result<Self, SimError> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(SimError::Profile("theta must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&guess) {
            return Err(SimError::Profile("guess probability must be in [0, 1)"));
        }
        Ok(Self { theta, guess, seed })
    }
}

/// `n` workers with θ uniform on `[lo, hi]` and a shared guess probability.
pub fn uniform_population(n: usize, lo: f64, hi: f64, guess: f64, seed: u64) -> Result<Vec<WorkerProfile>, SimError> {
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(SimError::Profile("theta range must lie in [0, 1]"));
    }
    let mut rng = seeds::rng(seed, seeds::POPULATION, 0);
    (0..n)
        .map(|k| {
            let theta = if lo == hi { lo } else { rng.random_range(lo..=hi) };
            WorkerProfile::new(theta, guess, seeds::derive(seed, seeds::POPULATION, k as u64 + 1))
        })
        .collect()
}

/// The simulated answer at one step.
pub fn simulate_worker_answer(
    profile: &WorkerProfile,
    revealed_object_fraction: f64,
    options: &[usize],
    correct_label: usize,
    step_seed: u64,
) -> Choice {
    if revealed_object_fraction >= profile.theta {
        return Choice::Label(correct_label);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
    if profile.guess > 0.0 && !options.is_empty() && rng.random::<f64>() < profile.guess {
        Choice::Label(options[rng.random_range(0..options.len())])
    } else {
        Choice::Idk
    }
}

/// What the simulator knows about each pair: the true label and the share
/// of the object visible at every schedule step.
#[derive(Debug, Clone)]
pub struct SimKnowledge {
    labels: Vec<usize>,
    fractions: Vec<Vec<f64>>,
}

impl SimKnowledge {
    pub fn new(assets: &CampaignAssets, schedule: &ExposureSchedule) -> Result<Self, SimError> {
        let m = assets.methods.len();
        let mut labels = Vec::with_capacity(assets.rankings.len());
        let mut fractions = Vec::with_capacity(assets.rankings.len());
        for (pair, ranking) in assets.rankings.iter().enumerate() {
            let img = &assets.images[pair / m];
            let mask = img.object_mask.as_ref().ok_or_else(|| SimError::NoMask(img.image_id.clone()))?;
            let total = mask.iter().filter(|&&b| b).count();
            if total == 0 {
                return Err(SimError::EmptyMask);
            }
            let per_step = schedule
                .rates()
                .iter()
                .map(|&r| {
                    let shown = reveal_set(ranking, r, mask.len()).expect("schedule rates are valid");
                    shown.indices().iter().filter(|&&i| mask[i]).count() as f64 / total as f64
                })
                .collect();
            labels.push(img.label);
            fractions.push(per_step);
        }
        Ok(Self { labels, fractions })
    }

    pub fn label(&self, pair: PairId) -> usize {
        self.labels[pair]
    }

    pub fn revealed_fraction(&self, pair: PairId, step: usize) -> f64 {
        self.fractions[pair][step]
    }
}

/// One step as seen by a client of the game.
#[derive(Debug, Clone, PartialEq)]
pub struct StepView {
    pub trial_id: u64,
    pub pair: PairId,
    pub step: usize,
    pub options: Vec<usize>,
}

impl From<&TaskView> for StepView {
    fn from(v: &TaskView) -> Self {
        Self {
            trial_id: v.trial_id,
            pair: v.pair,
            step: v.step,
            options: v.choices.options.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepResult {
    Advance(StepView),
    Done,
}

pub type BackendError = Box<dyn StdError + Send + Sync>;

/// The game operations a simulated worker drives, in-process or remotely.
pub trait GameBackend {
    /// Registers a worker and returns the handle used for later calls.
    fn register(&mut self) -> Result<String, BackendError>;
    /// Requests pairs; `None` once the campaign is closed.
    fn assign(&mut self, worker: &str) -> Result<Option<Vec<PairId>>, BackendError>;
    /// The next step to play, or `None` when the worker's pairs are done.
    fn next(&mut self, worker: &str) -> Result<Option<StepView>, BackendError>;
    fn answer(&mut self, worker: &str, trial_id: u64, step: usize, choice: Choice) -> Result<StepResult, BackendError>;
}

/// Drives a [`SharedCampaign`] directly. Worker handles are worker ids.
#[derive(Clone)]
pub struct LocalBackend(pub SharedCampaign);

impl GameBackend for LocalBackend {
    fn register(&mut self) -> Result<String, BackendError> {
        Ok(self.0.lock().register_worker()?)
    }

    fn assign(&mut self, worker: &str) -> Result<Option<Vec<PairId>>, BackendError> {
        match self.0.lock().assign_tasks(worker) {
            Ok(p) => Ok(Some(p)),
            Err(GameError::Closed) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn next(&mut self, worker: &str) -> Result<Option<StepView>, BackendError> {
        Ok(self.0.lock().next_trial(worker)?.as_ref().map(StepView::from))
    }

    fn answer(&mut self, worker: &str, trial_id: u64, step: usize, choice: Choice) -> Result<StepResult, BackendError> {
        Ok(match self.0.lock().submit_answer(worker, trial_id, step, choice)? {
            TrialOutcome::Advance(v) => StepResult::Advance(StepView::from(&v)),
            _ => StepResult::Done,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimSummary {
    pub workers: usize,
    pub trials: usize,
    pub answers: usize,
}

/// Plays every assigned pair of one worker to completion.
pub fn play_worker<B: GameBackend>(
    backend: &mut B,
    worker: &str,
    profile: &WorkerProfile,
    knowledge: &SimKnowledge,
    summary: &mut SimSummary,
) -> Result<(), SimError> {
    let be = |e: BackendError| SimError::Backend(e.to_string());
    while let Some(mut view) = backend.next(worker).map_err(be)? {
        summary.trials += 1;
        let trial = view.trial_id;
        loop {
            let step_seed = seeds::derive(profile.seed, seeds::WORKER_STEP, trial << 8 | view.step as u64);
            let choice = simulate_worker_answer(
                profile,
                knowledge.revealed_fraction(view.pair, view.step),
                &view.options,
                knowledge.label(view.pair),
                step_seed,
            );
            summary.answers += 1;
            match backend.answer(worker, trial, view.step, choice).map_err(be)? {
                StepResult::Advance(next) if next.step > view.step => view = next,
                StepResult::Advance(_) => return Err(SimError::Stuck(trial)),
                StepResult::Done => break,
            }
        }
    }
    Ok(())
}

/// Runs workers one after another until every pair's quota is used. Worker
/// `k` plays with `population[k % population.len()]`.
pub fn run_simulated_campaign<B: GameBackend>(
    backend: &mut B,
    knowledge: &SimKnowledge,
    population: &[WorkerProfile],
) -> Result<SimSummary, SimError> {
    if population.is_empty() {
        return Err(SimError::EmptyPopulation);
    }
    let be = |e: BackendError| SimError::Backend(e.to_string());
    let mut summary = SimSummary::default();
    loop {
        let profile = &population[summary.workers % population.len()];
        let worker = backend.register().map_err(be)?;
        summary.workers += 1;
        if backend.assign(&worker).map_err(be)?.is_none() {
            return Ok(summary);
        }
        play_worker(backend, &worker, profile, knowledge, &mut summary)?;
    }
}

/// Runs `threads` workers at a time against one shared campaign until it
/// closes. Event order depends on scheduling, so only the totals are
/// deterministic.
pub fn run_concurrent_campaign(
    campaign: &SharedCampaign,
    knowledge: &SimKnowledge,
    population: &[WorkerProfile],
    threads: usize,
) -> Result<SimSummary, SimError> {
    if population.is_empty() {
        return Err(SimError::EmptyPopulation);
    }
    let results: Vec<Result<SimSummary, SimError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let mut backend = LocalBackend(campaign.clone());
                scope.spawn(move || {
                    let be = |e: BackendError| SimError::Backend(e.to_string());
                    let mut summary = SimSummary::default();
                    loop {
                        let profile = &population[(t + summary.workers * threads) % population.len()];
                        let worker = backend.register().map_err(be)?;
                        summary.workers += 1;
                        if backend.assign(&worker).map_err(be)?.is_none() {
                            return Ok(summary);
                        }
                        play_worker(&mut backend, &worker, profile, knowledge, &mut summary)?;
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
    });
    let mut total = SimSummary::default();
    for r in results {
        let s = r?;
        total.workers += s.workers;
        total.trials += s.trials;
        total.answers += s.answers;
    }
    Ok(total)
}
