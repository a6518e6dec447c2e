//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Run with `cargo test -p peekaboom-core --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use peekaboom_core::autoeval::{run_job, AutoEvalJob};
use peekaboom_core::classifier::{Classifier, SmoothGradParams};
use peekaboom_core::crowdgame::{Campaign, CampaignConfig, SharedCampaign};
use peekaboom_core::masking::{apply_mask, remove_pixels, reveal_set, ExposureSchedule, FillStrategy};
use peekaboom_core::metrics::{
    auc, crowd_accuracy_curve, kendall, rank_methods, spearman, subsample_analysis, CurvePoint, SchemeTag, TrialRecord,
};
use peekaboom_core::pipeline::{Study, StudyConfig};
use peekaboom_core::saliency::{generate_random_saliency, rank_pixels, ImageTensor};
use peekaboom_core::simcrowd::{run_concurrent_campaign, run_simulated_campaign, uniform_population, LocalBackend, SimKnowledge};
use peekaboom_core::storage::{replay, Event, EventBody, EventLog, LogicalClock};

type Outcome = Result<String, String>;

struct Report {
    failures: usize,
}

impl Report {
    fn check(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let outcome = f();
        self.record(name, outcome, t.elapsed());
    }

    fn record(&mut self, name: &str, outcome: Outcome, elapsed: Duration) {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                self.failures += 1;
                ("FAIL", d)
            }
        };
        println!("{tag}  {name:<28} {detail}  [{:.2}s]", elapsed.as_secs_f64());
    }
}

fn require(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn auc_matches_riemann() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let mut grid: BTreeSet<u32> = (0..rng.random_range(0..10)).map(|_| rng.random_range(1..10_000)).collect();
        grid.insert(0);
        grid.insert(10_000);
        let points: Vec<CurvePoint> = grid
            .iter()
            .map(|&r| CurvePoint {
                rate: r as f64 / 10_000.0,
                accuracy: rng.random_range(0..=1000) as f64 / 1000.0,
            })
            .collect();
        let at = |x: f64| {
            let j = points.windows(2).position(|w| w[1].rate >= x).unwrap();
            let (p, q) = (points[j], points[j + 1]);
            p.accuracy + (q.accuracy - p.accuracy) * (x - p.rate) / (q.rate - p.rate)
        };
        let riemann = (0..10_000).map(|i| at((i as f64 + 0.5) / 10_000.0)).sum::<f64>() / 10_000.0;
        worst = worst.max((auc(&points).map_err(|e| e.to_string())? - riemann).abs());
    }
    let mut constant_exact = true;
    for c in [0.0, 0.125, 1.0 / 3.0, 0.7, 1.0] {
        let rates = [0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0];
        let points: Vec<CurvePoint> = rates.iter().map(|&rate| CurvePoint { rate, accuracy: c }).collect();
        constant_exact &= auc(&points).map_err(|e| e.to_string())? == c;
    }
    require(
        worst < 1e-9 && constant_exact,
        format!("max |auc - riemann| = {worst:.2e} (tol 1e-9), constant curves exact: {constant_exact}"),
    )
}

fn reference_ranks() -> Outcome {
    // Columns: GradCAM, Guided-bp, SmoothGrad, Vanilla, Random.
    let rows: [(&str, SchemeTag, [f64; 5], [usize; 5]); 10] = [
        ("Food101", SchemeTag::Crowd, [0.639, 0.469, 0.425, 0.396, 0.334], [1, 2, 3, 4, 5]),
        ("Food101", SchemeTag::Kar, [0.667, 0.494, 0.478, 0.570, 0.340], [1, 3, 4, 2, 5]),
        ("Food101", SchemeTag::Kae, [0.669, 0.340, 0.265, 0.316, 0.136], [1, 2, 4, 3, 5]),
        ("Food101", SchemeTag::Roar, [0.211, 0.140, 0.258, 0.346, 0.366], [2, 1, 3, 4, 5]),
        ("Food101", SchemeTag::Roae, [0.159, 0.060, 0.072, 0.087, 0.140], [5, 1, 2, 3, 4]),
        ("Animal95", SchemeTag::Crowd, [0.752, 0.696, 0.592, 0.608, 0.354], [1, 2, 4, 3, 5]),
        ("Animal95", SchemeTag::Kar, [0.627, 0.456, 0.445, 0.515, 0.365], [1, 3, 4, 2, 5]),
        ("Animal95", SchemeTag::Kae, [0.619, 0.311, 0.294, 0.354, 0.137], [1, 3, 4, 2, 5]),
        ("Animal95", SchemeTag::Roar, [0.142, 0.088, 0.194, 0.200, 0.385], [2, 1, 3, 4, 5]),
        ("Animal95", SchemeTag::Roae, [0.115, 0.048, 0.054, 0.059, 0.137], [4, 1, 2, 3, 5]),
    ];
    let mut wrong = Vec::new();
    for (ds, scheme, aucs, want) in rows {
        let got = rank_methods(&aucs, scheme.direction()).map_err(|e| e.to_string())?;
        if got != want {
            wrong.push(format!("{ds}/{scheme}: {got:?} != {want:?}"));
        }
    }
    require(wrong.is_empty(), format!("10 rows, mismatches: {wrong:?}"))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n);
            out.push(q);
        }
    }
    out
}

fn correlations_exact() -> Outcome {
    let base = [1.0, 2.0, 3.0, 4.0, 5.0];
    let perms = permutations(5);
    let mut worst = 0.0f64;
    for p in &perms {
        let b: Vec<f64> = p.iter().map(|&v| v as f64).collect();
        let d2: f64 = base.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
        let rho = 1.0 - 6.0 * d2 / (5.0 * 24.0);
        let mut s = 0.0;
        for i in 0..5 {
            for j in i + 1..5 {
                s += ((base[i] - base[j]) * (b[i] - b[j])).signum();
            }
        }
        let tau = s / 10.0;
        let got_rho = spearman(&base, &b).map_err(|e| e.to_string())?.ok_or("spearman undefined")?;
        let got_tau = kendall(&base, &b).map_err(|e| e.to_string())?.ok_or("kendall undefined")?;
        worst = worst.max((got_rho - rho).abs()).max((got_tau - tau).abs());
    }
    let other = [1.0, 3.0, 4.0, 2.0, 5.0];
    let rho = spearman(&base, &other).map_err(|e| e.to_string())?.unwrap_or(f64::NAN);
    let tau = kendall(&base, &other).map_err(|e| e.to_string())?.unwrap_or(f64::NAN);
    require(
        perms.len() == 120 && worst < 1e-12 && (rho - 0.7).abs() < 1e-12 && (tau - 0.6).abs() < 1e-12,
        format!(
            "{} permutations, max err {worst:.1e} (tol 1e-12); rho={rho:.12} tau={tau:.12} (want 0.7, 0.6)",
            perms.len()
        ),
    )
}

fn masking_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let start = Instant::now();
    for t in 0..1000u64 {
        let (w, h) = (rng.random_range(1..24), rng.random_range(1..24));
        let channels = if rng.random_bool(0.5) { 1 } else { 3 };
        let n = w * h;
        let values: Vec<f64> = (0..n * channels).map(|_| rng.random_range(0.05..0.95)).collect();
        let image = ImageTensor::new(w, h, channels, values).map_err(|e| e.to_string())?;
        let map = generate_random_saliency(w, h, t, "probe").map_err(|e| e.to_string())?;
        let ranking = rank_pixels(&map);
        let (a, b) = (rng.random_range(0.0..=1.0f64), rng.random_range(0.0..=1.0f64));
        let (lo, hi) = (a.min(b), a.max(b));
        let small = reveal_set(&ranking, lo, n).map_err(|e| e.to_string())?;
        let large = reveal_set(&ranking, hi, n).map_err(|e| e.to_string())?;
        if large.len() != (hi * n as f64 - 1e-9).ceil().max(0.0) as usize {
            return Err(format!("triple {t}: |reveal({hi})| = {} for n = {n}", large.len()));
        }
        let in_large = large.membership(n);
        if !small.indices().iter().all(|&i| in_large[i]) || large.indices() != &ranking.order()[..large.len()] {
            return Err(format!("triple {t}: reveal sets not nested prefixes"));
        }
        let fill = FillStrategy::ConstantBlack;
        let kept = apply_mask(&image, &large, &fill).map_err(|e| e.to_string())?;
        let removed = remove_pixels(&image, &large, &fill).map_err(|e| e.to_string())?;
        for i in 0..n {
            let (k, r, o) = (kept.pixel(i), removed.pixel(i), image.pixel(i));
            let ok = if in_large[i] {
                k == o && r.iter().all(|&v| v == 0.0)
            } else {
                r == o && k.iter().all(|&v| v == 0.0)
            };
            if !ok {
                return Err(format!("triple {t}: pixel {i} not partitioned"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    require(secs < 5.0, format!("1000 triples: counts, nesting, keep/remove partition; {secs:.2}s (limit 5s)"))
}

fn gradients_match_differences(model: &Classifier, images: &[&ImageTensor]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let image = images[rng.random_range(0..images.len())];
        let class = rng.random_range(0..model.n_classes());
        let x = image.values().to_vec();
        let grad = model.gradient_at(&x, class).map_err(|e| e.to_string())?;
        let i = rng.random_range(0..x.len());
        let logit = |delta: f64| {
            let mut y = x.clone();
            y[i] += delta;
            model.logits(&y).map(|l| l[class])
        };
        let fd = (logit(h).map_err(|e| e.to_string())? - logit(-h).map_err(|e| e.to_string())?) / (2.0 * h);
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    let mut sg_gap = 0.0f64;
    for (k, image) in images.iter().take(20).enumerate() {
        let class = model.predict_class(image).map_err(|e| e.to_string())?;
        let vanilla = model.input_gradient(image, class).map_err(|e| e.to_string())?;
        let params = SmoothGradParams {
            samples: 8,
            noise: 0.0,
            seed: k as u64,
        };
        let sg = model.smoothgrad(image, class, &params).map_err(|e| e.to_string())?;
        sg_gap = vanilla.iter().zip(&sg).fold(sg_gap, |m, (a, b)| m.max((a - b).abs()));
    }
    require(
        worst < 1e-4 && sg_gap <= 1e-12,
        format!("100 probes, max rel err {worst:.2e} (tol 1e-4); smoothgrad sigma=0 vs vanilla {sg_gap:.1e} (tol 1e-12)"),
    )
}

/// Completed count per pair, plus distinct and total (worker, pair) starts.
fn audit(events: &[Event]) -> (BTreeMap<usize, u32>, usize, usize) {
    let mut pair_of = BTreeMap::new();
    let mut per_pair = BTreeMap::new();
    let mut starts = BTreeSet::new();
    let mut n = 0;
    for e in events {
        match &e.body {
            EventBody::TrialStarted {
                trial_id,
                worker_id,
                pair,
                ..
            } => {
                pair_of.insert(*trial_id, *pair);
                starts.insert((worker_id.clone(), *pair));
                n += 1;
            }
            EventBody::TrialCompleted { trial_id, .. } => *per_pair.entry(pair_of[trial_id]).or_insert(0) += 1,
            _ => {}
        }
    }
    (per_pair, starts.len(), n)
}

fn protocol_holds(live: &SharedCampaign, stress: &SharedCampaign, quota: u32) -> Outcome {
    let mut notes = Vec::new();
    for (name, c) in [("sequential", live), ("50 threads", stress)] {
        let state = c.snapshot();
        let events = c.events();
        let (per_pair, distinct, starts) = audit(&events);
        let exact = per_pair.len() == state.n_pairs() && per_pair.values().all(|&n| n == quota);
        let dense = events.iter().enumerate().all(|(i, e)| e.seq == i as u64 + 1);
        let replayed = replay(&events).map_err(|e| e.to_string())? == state;
        if !(exact && distinct == starts && dense && replayed && state.is_closed()) {
            return Err(format!(
                "{name}: exact quota {exact}, no repeats {}, dense seq {dense}, replay==live {replayed}",
                distinct == starts
            ));
        }
        notes.push(format!("{name}: {} pairs x {quota}", state.n_pairs()));
    }
    Ok(format!("{}; no repeats, dense seq, replay==live", notes.join(", ")))
}

fn crowd_aucs(trials: &[TrialRecord], methods: &[String], rates: &[f64]) -> Result<BTreeMap<String, f64>, String> {
    methods
        .iter()
        .map(|m| Ok((m.clone(), crowd_accuracy_curve(trials, m, rates).map_err(|e| e.to_string())?.auc())))
        .collect()
}

fn new_campaign(id: &str, study: &Study) -> Result<(SharedCampaign, SimKnowledge, CampaignConfig), String> {
    let assets = study.campaign_assets().map_err(|e| e.to_string())?;
    let cfg = CampaignConfig::new(id, "synth", study.config.methods.clone());
    let knowledge = SimKnowledge::new(&assets, &cfg.schedule).map_err(|e| e.to_string())?;
    let c = Campaign::create(cfg.clone(), assets, EventLog::in_memory(), Box::new(LogicalClock::starting_at(0)))
        .map_err(|e| e.to_string())?;
    Ok((SharedCampaign::new(c), knowledge, cfg))
}

fn main() -> ExitCode {
    let mut report = Report { failures: 0 };
    report.check("auc-vs-riemann", auc_matches_riemann);
    report.check("reference-table-ranks", reference_ranks);
    report.check("rank-correlations", correlations_exact);
    report.check("masking-properties", masking_properties);

    // Seeded end-to-end study: synthetic data, trained model, saliency maps,
    // a simulated crowd campaign and the KAE curves.
    let t = Instant::now();
    let study = match Study::build(StudyConfig::default()) {
        Ok(s) => s,
        Err(e) => {
            report.record("study-build", Err(e.to_string()), t.elapsed());
            return ExitCode::FAILURE;
        }
    };
    let built = t.elapsed();

    let images: Vec<&ImageTensor> = study.data.test.items.iter().map(|it| &it.image).collect();
    report.check("gradient-vs-differences", || gradients_match_differences(&study.model, &images));

    let t = Instant::now();
    let sim = (|| -> Result<_, String> {
        let (live, knowledge, cfg) = new_campaign("acceptance", &study)?;
        let population = uniform_population(100, 0.1, 0.9, 0.1, 1).map_err(|e| e.to_string())?;
        run_simulated_campaign(&mut LocalBackend(live.clone()), &knowledge, &population).map_err(|e| e.to_string())?;
        Ok((live, knowledge, cfg, population))
    })();
    let campaign_time = t.elapsed();
    let (live, knowledge, cfg, population) = match sim {
        Ok(v) => v,
        Err(e) => {
            report.record("crowd-campaign", Err(e), campaign_time);
            return ExitCode::FAILURE;
        }
    };
    let methods = study.config.methods.clone();
    let rates = cfg.schedule.rates().to_vec();
    let trials = live.snapshot().completed_trials();

    report.check("protocol-conformance", || {
        let (stress, _, _) = new_campaign("stress", &study)?;
        run_concurrent_campaign(&stress, &knowledge, &population, 50).map_err(|e| e.to_string())?;
        protocol_holds(&live, &stress, cfg.quota)
    });

    let t = Instant::now();
    let margins = (|| -> Outcome {
        let crowd = crowd_aucs(&trials, &methods, &rates)?;
        let fill = FillStrategy::dataset_mean(study.data.train.items.iter().map(|i| &i.image)).ok_or("no images")?;
        let mut kae = BTreeMap::new();
        for m in ["oracle", "random"] {
            let job = AutoEvalJob {
                scheme: SchemeTag::Kae,
                method_id: m.to_string(),
                schedule: ExposureSchedule::default(),
                fill: fill.clone(),
                train: study.config.train.clone(),
            };
            let rankings = study.rankings(m).map_err(|e| e.to_string())?;
            let n_classes = study.data.train.n_classes();
            let curve = run_job(&job, &study.model, &study.data.train.items, &study.data.test.items, n_classes, &rankings)
                .map_err(|e| e.to_string())?;
            kae.insert(m, curve.auc());
        }
        let crowd_margin = crowd["oracle"] - crowd["random"];
        let kae_margin = kae["oracle"] - kae["random"];
        let secs = (built + campaign_time + t.elapsed()).as_secs_f64();
        require(
            crowd_margin >= 0.15 && kae_margin >= 0.1 && secs < 120.0,
            format!(
                "crowd oracle-random {crowd_margin:.3} (min 0.15), KAE {kae_margin:.3} (min 0.10); end to end {secs:.1}s (limit 120s)"
            ),
        )
    })();
    report.record("oracle-beats-random", margins, t.elapsed());

    let t = Instant::now();
    let subsample = (|| -> Outcome {
        let full = crowd_aucs(&trials, &methods, &rates)?;
        let full_scores: Vec<f64> = methods.iter().map(|m| full[m]).collect();
        let want = rank_methods(&full_scores, SchemeTag::Crowd.direction()).map_err(|e| e.to_string())?;
        let levels = subsample_analysis(&trials, &methods, &rates, &[1.0, 3.0, 5.0, 10.0], 3).map_err(|e| e.to_string())?;
        let mut all_same = true;
        let mut seen = Vec::new();
        for level in &levels {
            let ranks: Vec<usize> = level.scores.iter().map(|s| s.rank).collect();
            all_same &= ranks == want;
            seen.push(format!("{}:{ranks:?}", level.level));
        }
        let secs = (campaign_time + t.elapsed()).as_secs_f64();
        require(
            all_same && secs < 180.0,
            format!("full ranks {want:?}; levels {}; {secs:.1}s (limit 180s)", seen.join(" ")),
        )
    })();
    report.record("subsample-rank-stability", subsample, t.elapsed());

    report.check("retrain-anchors", || {
        let rankings = study.rankings("oracle").map_err(|e| e.to_string())?;
        let fill = FillStrategy::dataset_mean(study.data.train.items.iter().map(|i| &i.image)).ok_or("no images")?;
        let n_classes = study.data.train.n_classes();
        let schedule = ExposureSchedule::new(vec![1.0]).map_err(|e| e.to_string())?;
        let curve = |scheme| {
            let job = AutoEvalJob {
                scheme,
                method_id: "oracle".into(),
                schedule: schedule.clone(),
                fill: fill.clone(),
                train: study.config.train.clone(),
            };
            run_job(&job, &study.model, &study.data.train.items, &study.data.test.items, n_classes, &rankings)
                .map_err(|e| e.to_string())
        };
        let (roar, kar) = (curve(SchemeTag::Roar)?, curve(SchemeTag::Kar)?);
        let base = study.test_accuracy;
        let roar0 = roar.accuracy_at(0.0).ok_or("no ROAR r=0 point")?;
        let kar1 = kar.accuracy_at(1.0).ok_or("no KAR r=1 point")?;
        let roar1 = roar.accuracy_at(1.0).ok_or("no ROAR r=1 point")?;
        let prior = 1.0 / n_classes as f64;
        require(
            roar0 == base && kar1 == base && roar1 <= prior + 0.05,
            format!("baseline {base:.4}; ROAR r=0 {roar0:.4}, KAR r=1 {kar1:.4} (exact); ROAR r=1 {roar1:.4} (max prior {prior:.3} + 0.05)"),
        )
    });

    if report.failures == 0 {
        println!("all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{} criteria failed", report.failures);
        ExitCode::FAILURE
    }
}
