//! Accuracy-exposure curves, AUC, method ranking and rank correlations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("curve needs at least two points")]
    TooFewPoints,
    #[error("curve must start at rate 0 and end at rate 1")]
    Endpoints,
    #[error("curve rates must be strictly ascending (at point {0})")]
    NotAscending(usize),
    #[error("accuracy {0} outside [0, 1]")]
    AccuracyOutOfRange(f64),
    #[error("crowd curve decreases at point {0}")]
    NotMonotone(usize),
    #[error("no completed trials for method {0}")]
    NoCompletedTrials(String),
    #[error("no completed trials")]
    NoTrials,
    #[error("nothing to rank")]
    EmptyScores,
    #[error("non-finite score at position {0}")]
    NonFinite(usize),
    #[error("rankings differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two items to correlate")]
    TooShort,
    #[error("{scheme} curve for method {method} has no point at rate {rate}")]
    MissingRate { scheme: SchemeTag, method: String, rate: f64 },
    #[error("no {scheme} curve for method {method}")]
    MissingCurve { scheme: SchemeTag, method: String },
    #[error("level {level} needs {needed} trials per pair but pair ({image}, {method}) has {available}")]
    LevelExceedsData {
        level: f64,
        needed: usize,
        available: usize,
        image: String,
        method: String,
    },
    #[error("invalid level {0}")]
    BadLevel(f64),
    #[error("bin width must be in (0, 1]")]
    BinWidth,
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeTag {
    #[serde(rename = "crowd")]
    Crowd,
    #[serde(rename = "ROAR")]
    Roar,
    #[serde(rename = "KAR")]
    Kar,
    #[serde(rename = "ROAE")]
    Roae,
    #[serde(rename = "KAE")]
    Kae,
}

impl SchemeTag {
    pub const AUTOMATED: [SchemeTag; 4] = [SchemeTag::Roar, SchemeTag::Kar, SchemeTag::Roae, SchemeTag::Kae];

    /// Keep-style schemes and the crowd reward early accuracy; remove-style
    /// schemes reward early loss of accuracy.
    pub fn direction(self) -> Direction {
        match self {
            SchemeTag::Crowd | SchemeTag::Kar | SchemeTag::Kae => Direction::HigherBetter,
            SchemeTag::Roar | SchemeTag::Roae => Direction::LowerBetter,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeTag::Crowd => "crowd",
            SchemeTag::Roar => "ROAR",
            SchemeTag::Kar => "KAR",
            SchemeTag::Roae => "ROAE",
            SchemeTag::Kae => "KAE",
        }
    }
}

impl fmt::Display for SchemeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SchemeTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "crowd" => Ok(SchemeTag::Crowd),
            "roar" => Ok(SchemeTag::Roar),
            "kar" => Ok(SchemeTag::Kar),
            "roae" => Ok(SchemeTag::Roae),
            "kae" => Ok(SchemeTag::Kae),
            _ => Err(format!("unknown scheme {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rate: f64,
    pub accuracy: f64,
}

/// Accuracy as a function of exposure rate, from rate 0 to rate 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub method_id: String,
    pub scheme: SchemeTag,
    points: Vec<CurvePoint>,
}

impl AccuracyCurve {
    pub fn new(method_id: impl Into<String>, scheme: SchemeTag, points: Vec<CurvePoint>) -> Result<Self, MetricsError> {
        check_grid(&points)?;
        if let Some(p) = points.iter().find(|p| !(0.0..=1.0).contains(&p.accuracy)) {
            return Err(MetricsError::AccuracyOutOfRange(p.accuracy));
        }
        if scheme == SchemeTag::Crowd {
            if let Some(i) = (1..points.len()).find(|&i| points[i].accuracy < points[i - 1].accuracy) {
                return Err(MetricsError::NotMonotone(i));
            }
        }
        Ok(Self {
            method_id: method_id.into(),
            scheme,
            points,
        })
    }

    pub fn from_pairs(method_id: impl Into<String>, scheme: SchemeTag, pairs: &[(f64, f64)]) -> Result<Self, MetricsError> {
        Self::new(
            method_id,
            scheme,
            pairs.iter().map(|&(rate, accuracy)| CurvePoint { rate, accuracy }).collect(),
        )
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn accuracy_at(&self, rate: f64) -> Option<f64> {
        self.points.iter().find(|p| p.rate == rate).map(|p| p.accuracy)
    }

    pub fn auc(&self) -> f64 {
        trapezoid(&self.points)
    }
}

fn check_grid(points: &[CurvePoint]) -> Result<(), MetricsError> {
    if points.len() < 2 {
        return Err(MetricsError::TooFewPoints);
    }
    if points[0].rate != 0.0 || points[points.len() - 1].rate != 1.0 {
        return Err(MetricsError::Endpoints);
    }
    if let Some(i) = (1..points.len()).find(|&i| !(points[i].rate > points[i - 1].rate)) {
        return Err(MetricsError::NotAscending(i));
    }
    Ok(())
}

fn trapezoid(points: &[CurvePoint]) -> f64 {
    points
        .windows(2)
        .map(|w| 0.5 * (w[1].rate - w[0].rate) * (w[1].accuracy + w[0].accuracy))
        .sum()
}

/// Trapezoidal area under `(rate, accuracy)` points spanning `[0, 1]`.
pub fn auc(points: &[CurvePoint]) -> Result<f64, MetricsError> {
    check_grid(points)?;
    Ok(trapezoid(points))
}

/// How one crowd trial ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrialResult {
    Correct { rate: f64 },
    Exhausted,
}

impl TrialResult {
    /// First-correct exposure, with exhausted trials counted at full exposure.
    pub fn difficulty(self) -> f64 {
        match self {
            TrialResult::Correct { rate } => rate,
            TrialResult::Exhausted => 1.0,
        }
    }
}

/// A finished crowd trial, as read back from the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub worker_id: String,
    pub image_id: String,
    pub method_id: String,
    pub result: TrialResult,
}

/// Cumulative crowd accuracy: the fraction of the method's completed trials
/// answered correctly at or below each rate, with `(0, 0)` prepended.
pub fn crowd_accuracy_curve<'a>(
    trials: impl IntoIterator<Item = &'a TrialRecord>,
    method_id: &str,
    rates: &[f64],
) -> Result<AccuracyCurve, MetricsError> {
    let results: Vec<TrialResult> = trials
        .into_iter()
        .filter(|t| t.method_id == method_id)
        .map(|t| t.result)
        .collect();
    if results.is_empty() {
        return Err(MetricsError::NoCompletedTrials(method_id.to_string()));
    }
    let total = results.len() as f64;
    let mut points = vec![CurvePoint { rate: 0.0, accuracy: 0.0 }];
    for &r in rates.iter().filter(|&&r| r > 0.0) {
        let hits = results
            .iter()
            .filter(|res| matches!(res, TrialResult::Correct { rate } if *rate <= r))
            .count();
        points.push(CurvePoint {
            rate: r,
            accuracy: hits as f64 / total,
        });
    }
    AccuracyCurve::new(method_id, SchemeTag::Crowd, points)
}

/// Competition ranking: rank 1 is best; tied scores share the smaller rank
/// and the following rank is skipped.
pub fn rank_methods(scores: &[f64], direction: Direction) -> Result<Vec<usize>, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyScores);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    let better = |a: f64, b: f64| match direction {
        Direction::HigherBetter => a > b,
        Direction::LowerBetter => a < b,
    };
    Ok(scores
        .iter()
        .map(|&s| 1 + scores.iter().filter(|&&o| better(o, s)).count())
        .collect())
}

/// Average ranks (1-based) of `values`, ties receiving the mean of the ranks
/// they span.
fn mean_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(MetricsError::TooShort);
    }
    if let Some(i) = a.iter().chain(b).position(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite(i % a.len()));
    }
    Ok(())
}

/// Spearman's rho: Pearson correlation of the mean-rank transforms. Returns
/// `None` when either side is constant.
pub fn spearman(rank_a: &[f64], rank_b: &[f64]) -> Result<Option<f64>, MetricsError> {
    check_pair(rank_a, rank_b)?;
    let a = mean_ranks(rank_a);
    let b = mean_ranks(rank_b);
    let n = a.len() as f64;
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|x| x * x).sum();
    let sab: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    // Raw-sum form keeps integer ranks exact.
    let cov = n * sab - sa * sb;
    let var_a = n * saa - sa * sa;
    let var_b = n * sbb - sb * sb;
    if var_a == 0.0 || var_b == 0.0 {
        return Ok(None);
    }
    let denom = if var_a == var_b { var_a } else { (var_a * var_b).sqrt() };
    Ok(Some((cov / denom).clamp(-1.0, 1.0)))
}

/// Kendall's tau-b. Returns `None` when either side is constant.
pub fn kendall(rank_a: &[f64], rank_b: &[f64]) -> Result<Option<f64>, MetricsError> {
    check_pair(rank_a, rank_b)?;
    let n = rank_a.len();
    let (mut net, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = rank_a[i].total_cmp(&rank_a[j]) as i64;
            let db = rank_b[i].total_cmp(&rank_b[j]) as i64;
            net += da * db;
            ties_a += (da == 0) as i64;
            ties_b += (db == 0) as i64;
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let (pa, pb) = (n0 - ties_a, n0 - ties_b);
    if pa == 0 || pb == 0 {
        return Ok(None);
    }
    let denom = if pa == pb { pa as f64 } else { ((pa as f64) * (pb as f64)).sqrt() };
    Ok(Some(net as f64 / denom))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub scheme: SchemeTag,
    pub rate: f64,
    pub spearman: Option<f64>,
    pub kendall: Option<f64>,
}

/// At each rate, ranks methods by crowd accuracy and by each automated
/// scheme's accuracy (respecting the scheme's direction) and correlates the
/// two rankings. Methods are taken in the order of `crowd`.
pub fn correlation_vs_exposure(
    crowd: &[AccuracyCurve],
    automated: &[AccuracyCurve],
    rates: &[f64],
) -> Result<Vec<CorrelationPoint>, MetricsError> {
    let schemes: BTreeSet<SchemeTag> = automated.iter().map(|c| c.scheme).collect();
    let lookup = |curve: &AccuracyCurve, rate: f64| {
        curve.accuracy_at(rate).ok_or_else(|| MetricsError::MissingRate {
            scheme: curve.scheme,
            method: curve.method_id.clone(),
            rate,
        })
    };
    let mut out = Vec::new();
    for scheme in schemes {
        let mut matched = Vec::with_capacity(crowd.len());
        for c in crowd {
            let auto = automated
                .iter()
                .find(|a| a.scheme == scheme && a.method_id == c.method_id)
                .ok_or_else(|| MetricsError::MissingCurve {
                    scheme,
                    method: c.method_id.clone(),
                })?;
            matched.push((c, auto));
        }
        for &rate in rates {
            let crowd_acc = matched.iter().map(|(c, _)| lookup(c, rate)).collect::<Result<Vec<_>, _>>()?;
            let auto_acc = matched.iter().map(|(_, a)| lookup(a, rate)).collect::<Result<Vec<_>, _>>()?;
            let crowd_rank = as_f64(rank_methods(&crowd_acc, Direction::HigherBetter)?);
            let auto_rank = as_f64(rank_methods(&auto_acc, scheme.direction())?);
            out.push(CorrelationPoint {
                scheme,
                rate,
                spearman: spearman(&crowd_rank, &auto_rank)?,
                kendall: kendall(&crowd_rank, &auto_rank)?,
            });
        }
    }
    Ok(out)
}

fn as_f64(ranks: Vec<usize>) -> Vec<f64> {
    ranks.into_iter().map(|r| r as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    fn build(bin_width: f64, values: impl Iterator<Item = f64>) -> Self {
        let n_bins = snap_ceil(1.0 / bin_width).max(1);
        let mut counts = vec![0; n_bins];
        for v in values {
            let bin = ((v / bin_width) + 1e-9).floor().max(0.0) as usize;
            counts[bin.min(n_bins - 1)] += 1;
        }
        Self { bin_width, counts }
    }
}

fn snap_ceil(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Mean first-correct exposure per image and per worker, and their histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyReport {
    pub image_means: BTreeMap<String, f64>,
    pub worker_means: BTreeMap<String, f64>,
    pub image_histogram: Histogram,
    pub worker_histogram: Histogram,
}

pub fn difficulty_histograms(trials: &[TrialRecord], bin_width: f64) -> Result<DifficultyReport, MetricsError> {
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(MetricsError::BinWidth);
    }
    let mean_by = |key: &dyn Fn(&TrialRecord) -> &str| {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for t in trials {
            let e = acc.entry(key(t).to_string()).or_default();
            e.0 += t.result.difficulty();
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(k, (sum, n))| (k, sum / n as f64))
            .collect::<BTreeMap<_, _>>()
    };
    let image_means = mean_by(&|t| &t.image_id);
    let worker_means = mean_by(&|t| &t.worker_id);
    Ok(DifficultyReport {
        image_histogram: Histogram::build(bin_width, image_means.values().copied()),
        worker_histogram: Histogram::build(bin_width, worker_means.values().copied()),
        image_means,
        worker_means,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method_id: String,
    pub auc: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleLevel {
    pub level: f64,
    /// Trial ids kept at this level, ascending.
    pub selected: Vec<u64>,
    pub scores: Vec<MethodScore>,
}

/// Recomputes crowd AUCs and ranks with fewer workers per (image, method)
/// pair.
///
/// A level `k + f` (integer `k`, fraction `f`) keeps `k` trials of every pair
/// plus one more trial for `round(f * pairs)` randomly chosen pairs, so that
/// the mean count per pair is the level. Levels below one therefore keep a
/// single trial for that fraction of pairs.
pub fn subsample_analysis(
    trials: &[TrialRecord],
    methods: &[String],
    rates: &[f64],
    levels: &[f64],
    seed: u64,
) -> Result<Vec<SubsampleLevel>, MetricsError> {
    if trials.is_empty() {
        return Err(MetricsError::NoTrials);
    }
    let mut pairs: BTreeMap<(&str, &str), Vec<&TrialRecord>> = BTreeMap::new();
    for t in trials {
        pairs.entry((&t.image_id, &t.method_id)).or_default().push(t);
    }
    for group in pairs.values_mut() {
        group.sort_by_key(|t| t.trial_id);
    }
    let groups: Vec<(&(&str, &str), &Vec<&TrialRecord>)> = pairs.iter().collect();

    let mut out = Vec::with_capacity(levels.len());
    for (li, &level) in levels.iter().enumerate() {
        if !(level > 0.0 && level.is_finite()) {
            return Err(MetricsError::BadLevel(level));
        }
        let mut whole = level.floor();
        if level - whole > 1.0 - 1e-9 {
            whole += 1.0;
        }
        let frac = if (level - whole).abs() < 1e-9 { 0.0 } else { level - whole };
        let whole = whole as usize;
        let needed = whole + usize::from(frac > 0.0);
        for ((image, method), group) in &groups {
            // With a fractional part only the chosen pairs need one extra trial,
            // but every pair must be able to supply it.
            if group.len() < needed {
                return Err(MetricsError::LevelExceedsData {
                    level,
                    needed,
                    available: group.len(),
                    image: image.to_string(),
                    method: method.to_string(),
                });
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (li as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let extra_count = (frac * groups.len() as f64).round() as usize;
        let extra: BTreeSet<usize> = index::sample(&mut rng, groups.len(), extra_count).into_iter().collect();
        let mut selected: Vec<&TrialRecord> = Vec::new();
        for (gi, (_, group)) in groups.iter().enumerate() {
            let take = whole + usize::from(extra.contains(&gi));
            for k in index::sample(&mut rng, group.len(), take) {
                selected.push(group[k]);
            }
        }
        selected.sort_by_key(|t| t.trial_id);

        let mut aucs = Vec::with_capacity(methods.len());
        for m in methods {
            aucs.push(crowd_accuracy_curve(selected.iter().copied(), m, rates)?.auc());
        }
        let ranks = rank_methods(&aucs, Direction::HigherBetter)?;
        out.push(SubsampleLevel {
            level,
            selected: selected.iter().map(|t| t.trial_id).collect(),
            scores: methods
                .iter()
                .zip(aucs)
                .zip(ranks)
                .map(|((m, auc), rank)| MethodScore {
                    method_id: m.clone(),
                    auc,
                    rank,
                })
                .collect(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub scheme: SchemeTag,
    pub method_id: String,
    pub auc: f64,
    pub rank: usize,
}

/// AUC and within-scheme rank for every curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    /// Rows keep the order of `curves`; ranks are computed per scheme.
    pub fn from_curves(curves: &[AccuracyCurve]) -> Result<Self, MetricsError> {
        let mut rows: Vec<ScoreRow> = curves
            .iter()
            .map(|c| ScoreRow {
                scheme: c.scheme,
                method_id: c.method_id.clone(),
                auc: c.auc(),
                rank: 0,
            })
            .collect();
        let schemes: BTreeSet<SchemeTag> = curves.iter().map(|c| c.scheme).collect();
        for scheme in schemes {
            let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].scheme == scheme).collect();
            let aucs: Vec<f64> = idx.iter().map(|&i| rows[i].auc).collect();
            for (&i, r) in idx.iter().zip(rank_methods(&aucs, scheme.direction())?) {
                rows[i].rank = r;
            }
        }
        Ok(Self { rows })
    }
}

/// Writes `scheme,method,rate,accuracy` rows.
pub fn write_curves_csv<W: io::Write>(curves: &[AccuracyCurve], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| MetricsError::Csv(e.to_string());
    w.write_record(["scheme", "method", "rate", "accuracy"]).map_err(err)?;
    for c in curves {
        for p in c.points() {
            w.write_record([
                c.scheme.as_str(),
                &c.method_id,
                &p.rate.to_string(),
                &p.accuracy.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| MetricsError::Csv(e.to_string()))
}

/// Writes `scheme,method,auc,rank` rows.
pub fn write_scores_csv<W: io::Write>(table: &ScoreTable, out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| MetricsError::Csv(e.to_string());
    w.write_record(["scheme", "method", "auc", "rank"]).map_err(err)?;
    for r in &table.rows {
        w.write_record([r.scheme.as_str(), &r.method_id, &r.auc.to_string(), &r.rank.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| MetricsError::Csv(e.to_string()))
}

/// Reads curves written by [`write_curves_csv`].
pub fn read_curves_csv<R: io::Read>(input: R) -> Result<Vec<AccuracyCurve>, MetricsError> {
    let mut r = csv::Reader::from_reader(input);
    let err = |e: csv::Error| MetricsError::Csv(e.to_string());
    let mut grouped: Vec<(SchemeTag, String, Vec<CurvePoint>)> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(err)?;
        let field = |i: usize| rec.get(i).ok_or_else(|| MetricsError::Csv(format!("missing column {i}")));
        let scheme: SchemeTag = field(0)?.parse().map_err(MetricsError::Csv)?;
        let method = field(1)?.to_string();
        let parse = |s: &str| s.parse::<f64>().map_err(|e| MetricsError::Csv(e.to_string()));
        let point = CurvePoint {
            rate: parse(field(2)?)?,
            accuracy: parse(field(3)?)?,
        };
        match grouped.last_mut() {
            Some((s, m, pts)) if *s == scheme && *m == method => pts.push(point),
            _ => grouped.push((scheme, method, vec![point])),
        }
    }
    grouped
        .into_iter()
        .map(|(s, m, pts)| AccuracyCurve::new(m, s, pts))
        .collect()
}
