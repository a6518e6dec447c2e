//! The progressive-exposure guessing game.
//!
//! A campaign pairs every image with every saliency method. Workers are
//! assigned pairs, and for each pair they see the image at the first
//! exposure rate together with a fixed multiple-choice list. A wrong answer
//! or "I don't know" reveals the next rate; a correct answer ends the trial
//! and records the rate. A trial that reaches full exposure without a
//! correct answer is exhausted.
//!
//! Every state change is an [`Event`]; [`CampaignState::apply`] is the only
//! code that mutates state, so a replayed log reproduces live state exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::masking::{apply_mask, reveal_set, ExposureSchedule, FillStrategy, MaskError};
use crate::metrics::{TrialRecord, TrialResult};
use crate::saliency::{rank_pixels, ImageTensor, PixelRanking, SaliencyMap};
use crate::seeds;
use crate::storage::{Clock, Completion, Event, EventBody, EventLog, StorageError};

/// Index of an (image, method) pair: `image_index * n_methods + method_index`.
pub type PairId = usize;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("invalid campaign config: {0}")]
    Config(String),
    #[error("no saliency map for image {image} under method {method}")]
    MissingSaliency { image: String, method: String },
    #[error("saliency map for image {image} is {got_w}x{got_h}, image is {want_w}x{want_h}")]
    SaliencySize {
        image: String,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("campaign is closed")]
    Closed,
    #[error("campaign has not been created")]
    NotCreated,
    #[error("unknown worker {0}")]
    UnknownWorker(String),
    #[error("pair {pair} is not assigned to worker {worker}")]
    Unassigned { worker: String, pair: PairId },
    #[error("pair {pair} already started by worker {worker}")]
    DuplicateStart { worker: String, pair: PairId },
    #[error("unknown trial {0}")]
    UnknownTrial(u64),
    #[error("trial {trial} belongs to another worker")]
    NotOwner { trial: u64 },
    #[error("trial {0} is already finished")]
    TrialFinished(u64),
    #[error("trial {trial} is at step {current}, not {got}")]
    StaleStep { trial: u64, current: usize, got: usize },
    #[error("step {step} of trial {trial} was already answered differently")]
    ConflictingRetry { trial: u64, step: usize },
    #[error("choice {0} is not offered")]
    UnknownChoice(usize),
    #[error("cannot draw {n_wrong} wrong labels from {available} other classes")]
    TooManyWrong { n_wrong: usize, available: usize },
    #[error("correct label {0} is not in the class list")]
    CorrectNotListed(usize),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("internal state rejected event: {0}")]
    Apply(String),
}

fn default_quota() -> u32 {
    10
}
fn default_pairs_per_worker() -> usize {
    20
}
fn default_n_wrong() -> usize {
    4
}
fn default_fill() -> FillStrategy {
    FillStrategy::ConstantBlack
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub campaign_id: String,
    pub dataset_id: String,
    pub methods: Vec<String>,
    #[serde(default)]
    pub schedule: ExposureSchedule,
    #[serde(default = "default_quota")]
    pub quota: u32,
    #[serde(default = "default_pairs_per_worker")]
    pub pairs_per_worker: usize,
    #[serde(default = "default_n_wrong")]
    pub n_wrong: usize,
    #[serde(default)]
    pub seed: u64,
    /// Paint for hidden pixels in worker-facing views.
    #[serde(default = "default_fill")]
    pub ui_fill: FillStrategy,
}

impl CampaignConfig {
    pub fn new(campaign_id: impl Into<String>, dataset_id: impl Into<String>, methods: Vec<String>) -> Self {
        Self {
            campaign_id: campaign_id.into(),
            dataset_id: dataset_id.into(),
            methods,
            schedule: ExposureSchedule::default(),
            quota: default_quota(),
            pairs_per_worker: default_pairs_per_worker(),
            n_wrong: default_n_wrong(),
            seed: 0,
            ui_fill: default_fill(),
        }
    }

    pub fn validate(&self, n_classes: usize) -> Result<(), GameError> {
        let bad = |m: &str| Err(GameError::Config(m.to_string()));
        if self.campaign_id.is_empty() || self.campaign_id.contains(['/', '\\']) {
            return bad("campaign id must be a nonempty file-safe name");
        }
        if self.methods.is_empty() {
            return bad("at least one method is required");
        }
        if self.methods.iter().collect::<BTreeSet<_>>().len() != self.methods.len() {
            return bad("method ids must be distinct");
        }
        if self.quota < 1 {
            return bad("quota must be at least 1");
        }
        if self.pairs_per_worker < 1 {
            return bad("pairs per worker must be at least 1");
        }
        if self.n_wrong < 1 || self.n_wrong >= n_classes {
            return Err(GameError::Config(format!(
                "wrong-choice count {} must be in [1, {})",
                self.n_wrong, n_classes
            )));
        }
        if self.schedule.rates()[0] <= 0.0 {
            return bad("game schedule must start above zero");
        }
        Ok(())
    }
}

/// The identity of one campaign image as recorded in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: String,
    pub label: usize,
}

/// A worker's answer: a class index or "I don't know".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Label(usize),
    Idk,
}

/// Labels offered for a trial: the correct one plus distinct wrong ones, in
/// a seeded display order. "I don't know" is always available as well.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceSet {
    pub options: Vec<usize>,
}

impl ChoiceSet {
    pub fn offers(&self, choice: Choice) -> bool {
        match choice {
            Choice::Idk => true,
            Choice::Label(l) => self.options.contains(&l),
        }
    }
}

/// Draws `n_wrong` distinct wrong labels from `class_list` and shuffles them
/// together with the correct label.
pub fn build_choices(correct: usize, class_list: &[usize], n_wrong: usize, seed: u64) -> Result<ChoiceSet, GameError> {
    if !class_list.contains(&correct) {
        return Err(GameError::CorrectNotListed(correct));
    }
    let others: Vec<usize> = class_list.iter().copied().filter(|&c| c != correct).collect();
    if n_wrong > others.len() {
        return Err(GameError::TooManyWrong {
            n_wrong,
            available: others.len(),
        });
    }
    let mut rng = seeds::rng(seed, seeds::CHOICES, 0);
    let mut options: Vec<usize> = index::sample(&mut rng, others.len(), n_wrong)
        .into_iter()
        .map(|i| others[i])
        .collect();
    options.push(correct);
    options.shuffle(&mut rng);
    Ok(ChoiceSet { options })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialStatus {
    InProgress,
    Correct { rate: f64 },
    Exhausted,
    Abandoned,
}

impl TrialStatus {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, TrialStatus::InProgress)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub step: usize,
    pub choice: Choice,
    pub correct: bool,
    pub ts_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: u64,
    pub worker_id: String,
    pub pair: PairId,
    /// Index into the schedule of the exposure currently shown.
    pub position: usize,
    pub status: TrialStatus,
    pub choices: ChoiceSet,
    pub history: Vec<AnswerRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerState {
    /// Pairs in assignment order.
    pub assigned: Vec<PairId>,
    pub started: BTreeSet<PairId>,
    /// Trials of this worker still in progress.
    pub open_trials: BTreeSet<u64>,
}

/// Everything recoverable from the event log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub config: Option<CampaignConfig>,
    pub class_names: Vec<String>,
    pub images: Vec<ImageRef>,
    /// Remaining assignment quota per pair.
    pub remaining: Vec<u32>,
    pub workers: BTreeMap<String, WorkerState>,
    pub trials: BTreeMap<u64, Trial>,
    pub last_seq: u64,
}

impl CampaignState {
    pub fn config(&self) -> Result<&CampaignConfig, GameError> {
        self.config.as_ref().ok_or(GameError::NotCreated)
    }

    pub fn n_pairs(&self) -> usize {
        self.remaining.len()
    }

    pub fn pair_parts(&self, pair: PairId) -> Option<(usize, usize)> {
        let m = self.config.as_ref()?.methods.len();
        (pair < self.remaining.len()).then(|| (pair / m, pair % m))
    }

    pub fn is_closed(&self) -> bool {
        self.config.is_some() && self.remaining.iter().all(|&q| q == 0)
    }

    /// Applies one event. Errors describe a schema or protocol violation;
    /// state is unchanged when an error is returned.
    pub fn apply(&mut self, event: &Event) -> Result<(), String> {
        if event.seq != self.last_seq + 1 {
            return Err(format!("expected sequence {}, found {}", self.last_seq + 1, event.seq));
        }
        match &event.body {
            EventBody::CampaignCreated {
                config,
                class_names,
                images,
            } => {
                if self.config.is_some() {
                    return Err("campaign already created".into());
                }
                if images.iter().any(|im| im.label >= class_names.len()) {
                    return Err("image label outside class list".into());
                }
                let n = images.len() * config.methods.len();
                self.remaining = vec![config.quota; n];
                self.config = Some(config.clone());
                self.class_names = class_names.clone();
                self.images = images.clone();
            }
            EventBody::WorkerRegistered { worker_id } => {
                self.config.as_ref().ok_or("no campaign")?;
                if self.workers.contains_key(worker_id) {
                    return Err(format!("worker {worker_id} registered twice"));
                }
                self.workers.insert(worker_id.clone(), WorkerState::default());
            }
            EventBody::PairsAssigned { worker_id, pairs } => {
                let w = self.workers.get(worker_id).ok_or_else(|| format!("unknown worker {worker_id}"))?;
                let mut seen = BTreeSet::new();
                for &p in pairs {
                    if p >= self.remaining.len() || self.remaining[p] == 0 {
                        return Err(format!("pair {p} has no remaining quota"));
                    }
                    if w.assigned.contains(&p) || !seen.insert(p) {
                        return Err(format!("pair {p} assigned twice to {worker_id}"));
                    }
                }
                for &p in pairs {
                    self.remaining[p] -= 1;
                }
                self.workers.get_mut(worker_id).unwrap().assigned.extend(pairs);
            }
            EventBody::TrialStarted {
                trial_id,
                worker_id,
                pair,
                choices,
            } => {
                if *trial_id != self.trials.len() as u64 {
                    return Err(format!("trial id {trial_id} out of order"));
                }
                let w = self.workers.get(worker_id).ok_or_else(|| format!("unknown worker {worker_id}"))?;
                if !w.assigned.contains(pair) || w.started.contains(pair) {
                    return Err(format!("pair {pair} not startable by {worker_id}"));
                }
                let (image, _) = self.pair_parts(*pair).ok_or("pair out of range")?;
                if choices.iter().filter(|&&c| c == self.images[image].label).count() != 1 {
                    return Err("choice set must contain the correct label once".into());
                }
                let w = self.workers.get_mut(worker_id).unwrap();
                w.started.insert(*pair);
                w.open_trials.insert(*trial_id);
                self.trials.insert(
                    *trial_id,
                    Trial {
                        trial_id: *trial_id,
                        worker_id: worker_id.clone(),
                        pair: *pair,
                        position: 0,
                        status: TrialStatus::InProgress,
                        choices: ChoiceSet {
                            options: choices.clone(),
                        },
                        history: Vec::new(),
                    },
                );
            }
            EventBody::AnswerSubmitted {
                trial_id,
                step,
                choice,
                correct,
            } => {
                let n_steps = self.config.as_ref().ok_or("no campaign")?.schedule.len();
                let label = {
                    let t = self.trials.get(trial_id).ok_or_else(|| format!("unknown trial {trial_id}"))?;
                    self.images[self.pair_parts(t.pair).ok_or("pair out of range")?.0].label
                };
                let t = self.trials.get_mut(trial_id).unwrap();
                if t.status.is_terminal() {
                    return Err(format!("answer to finished trial {trial_id}"));
                }
                if *step != t.position || t.history.len() != t.position {
                    return Err(format!("answer for step {step} at position {}", t.position));
                }
                if !t.choices.offers(*choice) {
                    return Err("choice not offered".into());
                }
                if *correct != (*choice == Choice::Label(label)) {
                    return Err("correctness flag disagrees with label".into());
                }
                t.history.push(AnswerRecord {
                    step: *step,
                    choice: *choice,
                    correct: *correct,
                    ts_ms: event.ts_ms,
                });
                if !*correct && t.position + 1 < n_steps {
                    t.position += 1;
                }
            }
            EventBody::TrialCompleted { trial_id, outcome } => {
                let schedule = self.config.as_ref().ok_or("no campaign")?.schedule.clone();
                let t = self.trials.get_mut(trial_id).ok_or_else(|| format!("unknown trial {trial_id}"))?;
                if t.status.is_terminal() {
                    return Err(format!("trial {trial_id} completed twice"));
                }
                let last = t.history.last();
                t.status = match *outcome {
                    Completion::Correct { rate } => {
                        if !matches!(last, Some(a) if a.correct) || schedule.rates()[t.position] != rate {
                            return Err("correct completion without a correct answer at that rate".into());
                        }
                        TrialStatus::Correct { rate }
                    }
                    Completion::Exhausted => {
                        if t.position + 1 != schedule.len() || !matches!(last, Some(a) if !a.correct && a.step == t.position) {
                            return Err("exhausted before full exposure".into());
                        }
                        TrialStatus::Exhausted
                    }
                    Completion::Abandoned => TrialStatus::Abandoned,
                };
                let owner = t.worker_id.clone();
                if let Some(w) = self.workers.get_mut(&owner) {
                    w.open_trials.remove(trial_id);
                }
            }
        }
        self.last_seq = event.seq;
        Ok(())
    }

    /// Finished (correct or exhausted) trials; abandoned ones are excluded.
    pub fn completed_trials(&self) -> Vec<TrialRecord> {
        let Some(cfg) = &self.config else {
            return Vec::new();
        };
        self.trials
            .values()
            .filter_map(|t| {
                let result = match t.status {
                    TrialStatus::Correct { rate } => TrialResult::Correct { rate },
                    TrialStatus::Exhausted => TrialResult::Exhausted,
                    _ => return None,
                };
                let (image, method) = self.pair_parts(t.pair)?;
                Some(TrialRecord {
                    trial_id: t.trial_id,
                    worker_id: t.worker_id.clone(),
                    image_id: self.images[image].image_id.clone(),
                    method_id: cfg.methods[method].clone(),
                    result,
                })
            })
            .collect()
    }

    /// Assignments per pair so far.
    pub fn assignment_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.remaining.len()];
        for w in self.workers.values() {
            for &p in &w.assigned {
                counts[p] += 1;
            }
        }
        counts
    }
}

/// Images and per-pair rankings a campaign renders views from. Not part of
/// the log; rebuilt from the dataset and saliency files on restart.
#[derive(Debug, Clone)]
pub struct CampaignAssets {
    pub class_names: Vec<String>,
    pub images: Vec<AssetImage>,
    pub methods: Vec<String>,
    /// Indexed by [`PairId`].
    pub rankings: Vec<PixelRanking>,
}

#[derive(Debug, Clone)]
pub struct AssetImage {
    pub image_id: String,
    pub label: usize,
    pub image: ImageTensor,
    /// Ground-truth object pixels, when known.
    pub object_mask: Option<Vec<bool>>,
}

impl CampaignAssets {
    /// Collects one saliency map per (image, method) through `lookup`.
    pub fn build(
        dataset: &Dataset,
        masks: Option<&BTreeMap<String, Vec<bool>>>,
        methods: &[String],
        mut lookup: impl FnMut(&str, &str) -> Option<SaliencyMap>,
    ) -> Result<Self, GameError> {
        let mut rankings = Vec::with_capacity(dataset.len() * methods.len());
        for item in &dataset.items {
            for m in methods {
                let map = lookup(&item.id, m).ok_or_else(|| GameError::MissingSaliency {
                    image: item.id.clone(),
                    method: m.clone(),
                })?;
                if map.width() != item.image.width() || map.height() != item.image.height() {
                    return Err(GameError::SaliencySize {
                        image: item.id.clone(),
                        got_w: map.width(),
                        got_h: map.height(),
                        want_w: item.image.width(),
                        want_h: item.image.height(),
                    });
                }
                rankings.push(rank_pixels(&map));
            }
        }
        Ok(Self {
            class_names: dataset.class_names.clone(),
            images: dataset
                .items
                .iter()
                .map(|it| AssetImage {
                    image_id: it.id.clone(),
                    label: it.label,
                    image: it.image.clone(),
                    object_mask: masks.and_then(|m| m.get(&it.id).cloned()),
                })
                .collect(),
            methods: methods.to_vec(),
            rankings,
        })
    }

    pub fn image_refs(&self) -> Vec<ImageRef> {
        self.images
            .iter()
            .map(|im| ImageRef {
                image_id: im.image_id.clone(),
                label: im.label,
            })
            .collect()
    }
}

/// What a worker sees at one step of a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskView {
    pub trial_id: u64,
    pub pair: PairId,
    pub step: usize,
    pub rate: f64,
    pub image: ImageTensor,
    pub choices: ChoiceSet,
    pub idk_allowed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialOutcome {
    Advance(TaskView),
    Correct { rate: f64 },
    Exhausted,
}

/// A live campaign: state, its log, and the assets to render views.
pub struct Campaign {
    state: CampaignState,
    log: EventLog,
    assets: Arc<CampaignAssets>,
    clock: Box<dyn Clock>,
}

impl Campaign {
    /// Materializes the pair pool and records `campaign_created`.
    pub fn create(
        config: CampaignConfig,
        assets: Arc<CampaignAssets>,
        log: EventLog,
        clock: Box<dyn Clock>,
    ) -> Result<Self, GameError> {
        config.validate(assets.class_names.len())?;
        if assets.methods != config.methods {
            return Err(GameError::Config("assets were built for different methods".into()));
        }
        if !log.is_empty() {
            return Err(GameError::Config("event log is not empty".into()));
        }
        let mut c = Self {
            state: CampaignState::default(),
            log,
            assets: assets.clone(),
            clock,
        };
        c.commit(EventBody::CampaignCreated {
            config,
            class_names: assets.class_names.clone(),
            images: assets.image_refs(),
        })?;
        Ok(c)
    }

    /// Rebuilds a campaign from an existing log and continues appending to it.
    pub fn resume(log: EventLog, assets: Arc<CampaignAssets>, clock: Box<dyn Clock>) -> Result<Self, GameError> {
        let state = crate::storage::replay(log.events()).map_err(|e| GameError::Apply(e.to_string()))?;
        let cfg = state.config()?;
        if assets.methods != cfg.methods || assets.image_refs() != state.images {
            return Err(GameError::Config("assets do not match the logged campaign".into()));
        }
        Ok(Self {
            state,
            log,
            assets,
            clock,
        })
    }

    pub fn state(&self) -> &CampaignState {
        &self.state
    }

    pub fn events(&self) -> &[Event] {
        self.log.events()
    }

    pub fn assets(&self) -> &Arc<CampaignAssets> {
        &self.assets
    }

    pub fn config(&self) -> &CampaignConfig {
        self.state.config.as_ref().expect("created campaigns have a config")
    }

    fn commit(&mut self, body: EventBody) -> Result<u64, GameError> {
        let event = Event {
            seq: self.log.next_seq(),
            ts_ms: self.clock.now_ms(),
            body,
        };
        // apply leaves the state untouched when it rejects an event, so a
        // rejected event never reaches the log.
        self.state.apply(&event).map_err(GameError::Apply)?;
        match self.log.append(event) {
            Ok(seq) => Ok(seq),
            Err(e) => {
                self.state = crate::storage::replay(self.log.events()).map_err(|r| GameError::Apply(r.to_string()))?;
                Err(e.into())
            }
        }
    }

    pub fn register_worker(&mut self) -> Result<String, GameError> {
        let worker_id = format!("w{}", self.state.workers.len());
        self.commit(EventBody::WorkerRegistered {
            worker_id: worker_id.clone(),
        })?;
        Ok(worker_id)
    }

    /// Samples up to `pairs_per_worker` pairs the worker has not seen from
    /// those with remaining quota, consuming one unit of quota each.
    pub fn assign_tasks(&mut self, worker_id: &str) -> Result<Vec<PairId>, GameError> {
        if self.state.is_closed() {
            return Err(GameError::Closed);
        }
        let worker = self
            .state
            .workers
            .get(worker_id)
            .ok_or_else(|| GameError::UnknownWorker(worker_id.to_string()))?;
        let seen: BTreeSet<PairId> = worker.assigned.iter().copied().collect();
        let eligible: Vec<PairId> = (0..self.state.n_pairs())
            .filter(|p| self.state.remaining[*p] > 0 && !seen.contains(p))
            .collect();
        if eligible.is_empty() {
            return Ok(Vec::new());
        }
        let k = self.config().pairs_per_worker.min(eligible.len());
        let mut rng = seeds::rng(self.config().seed, seeds::ASSIGN, self.log.next_seq());
        let pairs: Vec<PairId> = index::sample(&mut rng, eligible.len(), k)
            .into_iter()
            .map(|i| eligible[i])
            .collect();
        self.commit(EventBody::PairsAssigned {
            worker_id: worker_id.to_string(),
            pairs: pairs.clone(),
        })?;
        Ok(pairs)
    }

    /// The worker's assigned pairs that have not been started, in order.
    pub fn pending_pairs(&self, worker_id: &str) -> Result<Vec<PairId>, GameError> {
        let w = self
            .state
            .workers
            .get(worker_id)
            .ok_or_else(|| GameError::UnknownWorker(worker_id.to_string()))?;
        Ok(w.assigned.iter().copied().filter(|p| !w.started.contains(p)).collect())
    }

    /// The worker's trial that is still in progress, if any.
    pub fn active_trial(&self, worker_id: &str) -> Option<u64> {
        self.state.workers.get(worker_id)?.open_trials.first().copied()
    }

    /// The view the worker should act on next: its in-progress trial if
    /// there is one, else a new trial on its first pending pair. `None` when
    /// the worker has nothing left to play.
    pub fn next_trial(&mut self, worker_id: &str) -> Result<Option<TaskView>, GameError> {
        if let Some(t) = self.active_trial(worker_id) {
            return self.view(t).map(Some);
        }
        match self.pending_pairs(worker_id)?.first() {
            Some(&pair) => self.start_trial(worker_id, pair).map(Some),
            None => Ok(None),
        }
    }

    pub fn start_trial(&mut self, worker_id: &str, pair: PairId) -> Result<TaskView, GameError> {
        let w = self
            .state
            .workers
            .get(worker_id)
            .ok_or_else(|| GameError::UnknownWorker(worker_id.to_string()))?;
        if !w.assigned.contains(&pair) {
            return Err(GameError::Unassigned {
                worker: worker_id.to_string(),
                pair,
            });
        }
        if w.started.contains(&pair) {
            return Err(GameError::DuplicateStart {
                worker: worker_id.to_string(),
                pair,
            });
        }
        let trial_id = self.state.trials.len() as u64;
        let (image, _) = self.state.pair_parts(pair).expect("assigned pairs are in range");
        let classes: Vec<usize> = (0..self.state.class_names.len()).collect();
        let choices = build_choices(
            self.state.images[image].label,
            &classes,
            self.config().n_wrong,
            seeds::derive(self.config().seed, seeds::CHOICES, trial_id),
        )?;
        self.commit(EventBody::TrialStarted {
            trial_id,
            worker_id: worker_id.to_string(),
            pair,
            choices: choices.options,
        })?;
        self.view(trial_id)
    }

    /// Renders the trial at its current position.
    pub fn view(&self, trial_id: u64) -> Result<TaskView, GameError> {
        let t = self.state.trials.get(&trial_id).ok_or(GameError::UnknownTrial(trial_id))?;
        self.view_at(t, t.position)
    }

    fn view_at(&self, t: &Trial, step: usize) -> Result<TaskView, GameError> {
        let cfg = self.config();
        let rate = cfg.schedule.rates()[step];
        let (image, _) = self.state.pair_parts(t.pair).expect("trial pairs are in range");
        let src = &self.assets.images[image].image;
        let reveal = reveal_set(&self.assets.rankings[t.pair], rate, src.n_pixels())?;
        Ok(TaskView {
            trial_id: t.trial_id,
            pair: t.pair,
            step,
            rate,
            image: apply_mask(src, &reveal, &cfg.ui_fill)?,
            choices: t.choices.clone(),
            idk_allowed: true,
        })
    }

    /// Records an answer for `step` of the trial and returns what happens
    /// next. Re-submitting an identical answer for an already answered step
    /// returns the original outcome without logging anything.
    pub fn submit_answer(
        &mut self,
        worker_id: &str,
        trial_id: u64,
        step: usize,
        choice: Choice,
    ) -> Result<TrialOutcome, GameError> {
        let t = self.state.trials.get(&trial_id).ok_or(GameError::UnknownTrial(trial_id))?;
        if t.worker_id != worker_id {
            return Err(GameError::NotOwner { trial: trial_id });
        }
        if let Some(prev) = t.history.get(step) {
            if prev.choice != choice {
                return Err(GameError::ConflictingRetry { trial: trial_id, step });
            }
            return self.outcome_after(trial_id, step);
        }
        if t.status.is_terminal() {
            return Err(GameError::TrialFinished(trial_id));
        }
        if step != t.position {
            return Err(GameError::StaleStep {
                trial: trial_id,
                current: t.position,
                got: step,
            });
        }
        if let Choice::Label(l) = choice {
            if !t.choices.offers(choice) {
                return Err(GameError::UnknownChoice(l));
            }
        }
        let (image, _) = self.state.pair_parts(t.pair).expect("trial pairs are in range");
        let correct = choice == Choice::Label(self.state.images[image].label);
        let last_step = step + 1 == self.config().schedule.len();
        let rate = self.config().schedule.rates()[step];

        self.commit(EventBody::AnswerSubmitted {
            trial_id,
            step,
            choice,
            correct,
        })?;
        if correct {
            self.commit(EventBody::TrialCompleted {
                trial_id,
                outcome: Completion::Correct { rate },
            })?;
        } else if last_step {
            self.commit(EventBody::TrialCompleted {
                trial_id,
                outcome: Completion::Exhausted,
            })?;
        }
        self.outcome_after(trial_id, step)
    }

    fn outcome_after(&self, trial_id: u64, step: usize) -> Result<TrialOutcome, GameError> {
        let t = &self.state.trials[&trial_id];
        let answered_last = step + 1 == t.history.len();
        match (&t.status, answered_last) {
            (TrialStatus::Correct { rate }, true) => Ok(TrialOutcome::Correct { rate: *rate }),
            (TrialStatus::Exhausted, true) => Ok(TrialOutcome::Exhausted),
            _ => Ok(TrialOutcome::Advance(self.view_at(t, step + 1)?)),
        }
    }

    /// Marks an in-progress trial as abandoned; its quota stays consumed.
    pub fn abandon_trial(&mut self, worker_id: &str, trial_id: u64) -> Result<(), GameError> {
        let t = self.state.trials.get(&trial_id).ok_or(GameError::UnknownTrial(trial_id))?;
        if t.worker_id != worker_id {
            return Err(GameError::NotOwner { trial: trial_id });
        }
        if t.status.is_terminal() {
            return Err(GameError::TrialFinished(trial_id));
        }
        self.commit(EventBody::TrialCompleted {
            trial_id,
            outcome: Completion::Abandoned,
        })?;
        Ok(())
    }
}

/// A campaign shared between threads. Every operation holds the campaign
/// lock for its whole duration, so assignments and appends are totally
/// ordered.
#[derive(Clone)]
pub struct SharedCampaign(Arc<Mutex<Campaign>>);

impl SharedCampaign {
    pub fn new(c: Campaign) -> Self {
        Self(Arc::new(Mutex::new(c)))
    }

    pub fn lock(&self) -> parking_lot::MutexGuard<'_, Campaign> {
        self.0.lock()
    }

    /// A consistent copy of the current state.
    pub fn snapshot(&self) -> CampaignState {
        self.0.lock().state().clone()
    }

    pub fn events(&self) -> Vec<Event> {
        self.0.lock().events().to_vec()
    }
}
