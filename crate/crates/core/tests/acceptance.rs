//! Acceptance suite. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line under `cargo test`; any hard failure exits non-zero.
//!
//! Set `FAME_BGL_PATH` to a loghub-format BGL log to add the full-size
//! label-count check to criterion 10.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use fame_core::backbone::focal::{
    focal_loss, focal_loss_from_logit, focal_loss_gradient, sigmoid, softmax_focal_gradient, softmax_focal_loss,
};
use fame_core::backbone::{FeatureVector, FocalLossConfig, LinearClassifier};
use fame_core::calibration::{calibrate_threshold, fuse_universal, CalibrationResult, DEFAULT_FUSION_GRID};
use fame_core::corpus::{ingest, InputFormat, Label, LogRecord};
use fame_core::drain::{parse_records, DrainConfig, DrainParser, EventId};
use fame_core::eval::metrics::{auroc, pct};
use fame_core::eval::{domain_agreement, evaluate};
use fame_core::inference::{classify_stream, decide, Decision, RoutePath, Verdict};
use fame_core::kshot::{self, labeling_cost_report};
use fame_core::par::ExecMode;
use fame_core::partition::DomainKind;
use fame_core::pipeline::{prepare, setup, PipelineConfig, Prepared};
use fame_core::router::class_weights;
use fame_core::seed::rng;
use fame_core::synthetic::{generate, SyntheticConfig, SyntheticCorpus};

struct Outcome {
    pass: bool,
    /// A miss that is reported but does not fail the run.
    soft: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            soft: false,
            detail: detail.into(),
        }
    }
}

/// Collects individual checks of one criterion.
#[derive(Default)]
struct Checks {
    failures: Vec<String>,
    count: usize,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.count += 1;
        if !ok && self.failures.len() < 5 {
            self.failures.push(what());
        } else if !ok {
            self.failures.push(String::new());
        }
    }

    fn outcome(self, summary: String) -> Outcome {
        if self.failures.is_empty() {
            Outcome::new(true, format!("{} checks; {summary}", self.count))
        } else {
            let shown: Vec<&str> = self.failures.iter().map(String::as_str).filter(|s| !s.is_empty()).collect();
            Outcome::new(false, format!("{} of {} checks failed: {}", self.failures.len(), self.count, shown.join("; ")))
        }
    }
}

fn within(elapsed: Duration, limit: Duration, c: &mut Checks) {
    c.check(elapsed <= limit, || format!("runtime {elapsed:.2?} exceeds {limit:?}"));
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// 1 ---------------------------------------------------------------------

fn formulas() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::default();

    // class weights: N / ((C-1) * count_c) with counts 10, 30, 60
    let w = class_weights(&[10, 30, 60]).unwrap();
    for (got, want) in w.iter().zip([100.0 / 30.0, 100.0 / 90.0, 100.0 / 180.0]) {
        c.check(close(*got, want, 1e-12), || format!("class weight {got} != {want}"));
    }
    let even = class_weights(&[25, 25]).unwrap();
    c.check(even == vec![1.0, 1.0], || format!("balanced weights {even:?}"));

    // focal loss, alpha 0.75, gamma 2, by hand
    let cfg = FocalLossConfig { gamma: 2.0, alpha: 0.75 };
    let ln2 = std::f64::consts::LN_2;
    let cases = [
        (0.5, true, 0.75 * 0.25 * ln2),        // 0.129965...
        (0.5, false, 0.25 * 0.25 * ln2),       // 0.043322...
        (0.9, true, 0.75 * 0.01 * -(0.9f64).ln()),
        (0.9, false, 0.25 * 0.81 * -(0.1f64).ln()),
    ];
    for (p, y, want) in cases {
        let got = focal_loss(p, y, &cfg);
        c.check(close(got, want, 1e-6), || format!("focal({p}, {y}) = {got}, want {want}"));
    }
    let first = focal_loss(0.5, true, &cfg);
    c.check(close(first, 0.12997, 1e-5) && format!("{first:.5}") == "0.12997", || format!("focal(0.5, 1) = {first}"));
    c.check(close(focal_loss_from_logit(0.0, true, &cfg), first, 1e-12), || "logit form at z=0".into());
    let ce = FocalLossConfig { gamma: 0.0, alpha: 0.5 };
    c.check(close(focal_loss(0.3, true, &ce), -0.5 * (0.3f64).ln(), 1e-12), || "gamma 0 is weighted cross-entropy".into());

    // logistic score range
    for z in [-1000.0, -40.0, -1.0, 0.0, 1.0, 40.0, 1000.0] {
        let s = sigmoid(z);
        c.check((0.0..=1.0).contains(&s) && s.is_finite(), || format!("sigmoid({z}) = {s}"));
    }
    c.check(sigmoid(0.0) == 0.5, || "sigmoid(0) != 0.5".into());
    let model = LinearClassifier::from_flat(1, 4, &[50.0, -50.0, 3.0, 0.0, 0.25]).unwrap();
    for (idx, val) in [(0u32, 1.0f32), (1, 1.0), (2, 0.5), (3, 1.0)] {
        let x = FeatureVector {
            dim: 4,
            indices: vec![idx],
            values: vec![val],
        };
        let s = model.probability(&x).unwrap();
        c.check((0.0..=1.0).contains(&s), || format!("expert score {s} outside [0, 1]"));
    }

    // fusion identities
    for s in [0.01, 0.2, 0.5, 0.77, 0.99] {
        for g in [0.05, 0.5, 0.95] {
            let f = fuse_universal(s, g, 0.0);
            c.check(close(f, s, 1e-12), || format!("w=0: fuse({s}, {g}) = {f}"));
        }
    }
    for w in DEFAULT_FUSION_GRID {
        let f = fuse_universal(0.5, 0.5, w);
        c.check(close(f, 0.5, 1e-15), || format!("fuse(0.5, 0.5, {w}) = {f}"));
    }
    // w = 1, s = g = 0.8: odds multiply, 16 / 17
    let f = fuse_universal(0.8, 0.8, 1.0);
    c.check(close(f, 16.0 / 17.0, 1e-12), || format!("fuse(0.8, 0.8, 1) = {f}"));

    // three-path table
    let kinds = [DomainKind::Universal, DomainKind::PureAnomaly, DomainKind::Mixed];
    let cal = CalibrationResult {
        tau: BTreeMap::from([(2, 0.6)]),
        fusion_weight: 0.0,
        tau_universal: 0.4,
    };
    let table: [(f64, [f64; 2], [f64; 3], Decision, RoutePath, Option<usize>); 6] = [
        (0.2, [0.9, 0.1], [0.5, 0.0, 0.0], Decision::Anomaly, RoutePath::Universal, None),
        (0.2, [0.9, 0.1], [0.3, 0.0, 0.9], Decision::Normal, RoutePath::Universal, None),
        (0.8, [0.9, 0.1], [0.0, 0.0, 0.0], Decision::Anomaly, RoutePath::Pure, Some(1)),
        (0.8, [0.1, 0.9], [0.9, 0.0, 0.6], Decision::Anomaly, RoutePath::Mixed, Some(2)),
        (0.8, [0.1, 0.9], [0.9, 0.0, 0.59], Decision::Normal, RoutePath::Mixed, Some(2)),
        (0.5, [0.1, 0.9], [0.0, 0.0, 0.7], Decision::Anomaly, RoutePath::Mixed, Some(2)),
    ];
    for (g, dist, scores, decision, path, domain) in table {
        let v = decide(g, Some(&dist), &kinds, &cal, &mut |d| scores[d]);
        c.check(v.decision == decision && v.path == path && v.domain == domain, || format!("g={g} dist={dist:?}: {v:?}"));
    }

    within(start.elapsed(), Duration::from_secs(1), &mut c);
    c.outcome(format!("focal(0.5, 1) = {first:.6}"))
}

// 2 ---------------------------------------------------------------------

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::default();
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1_000 {
        let z: f64 = r.gen_range(-8.0..8.0);
        let y: bool = r.gen();
        let cfg = FocalLossConfig {
            gamma: r.gen_range(0.0..5.0),
            alpha: r.gen_range(0.05..0.95),
        };
        let h = 1e-5;
        let numeric = (focal_loss_from_logit(z + h, y, &cfg) - focal_loss_from_logit(z - h, y, &cfg)) / (2.0 * h);
        let analytic = focal_loss_gradient(z, y, &cfg);
        let e = rel_err(analytic, numeric);
        worst = worst.max(e);
        c.check(e < 1e-4, || format!("binary z={z:.4} y={y} {cfg:?}: {analytic} vs {numeric}"));
    }
    for _ in 0..1_000 {
        let k = r.gen_range(2..6);
        let logits: Vec<f64> = (0..k).map(|_| r.gen_range(-4.0..4.0)).collect();
        let y = r.gen_range(0..k);
        let gamma = r.gen_range(0.0..5.0);
        let weight = r.gen_range(0.1..3.0);
        let mut grad = vec![0.0; k];
        softmax_focal_gradient(&logits, y, gamma, weight, &mut grad);
        for j in 0..k {
            let h = 1e-5;
            let mut up = logits.clone();
            let mut down = logits.clone();
            up[j] += h;
            down[j] -= h;
            let numeric = (softmax_focal_loss(&up, y, gamma, weight) - softmax_focal_loss(&down, y, gamma, weight)) / (2.0 * h);
            let e = rel_err(grad[j], numeric);
            worst = worst.max(e);
            c.check(e < 1e-4, || format!("softmax {logits:?} y={y} j={j}: {} vs {numeric}", grad[j]));
        }
    }
    within(start.elapsed(), Duration::from_secs(5), &mut c);
    c.outcome(format!("1000 binary + 1000 multiclass configurations, worst relative error {worst:.2e}"))
}

// 3 ---------------------------------------------------------------------

/// Exhaustive search over every unique score with the selection rule
/// written out directly.
fn calibration_oracle(scores: &[f64], labels: &[bool], floor: f64) -> (f64, f64, f64) {
    let mut unique = scores.to_vec();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut best: Option<(f64, f64, f64, bool)> = None;
    for &tau in &unique {
        let mut tp = 0.0;
        let mut predicted = 0.0;
        for (&s, &l) in scores.iter().zip(labels) {
            if s >= tau {
                predicted += 1.0;
                if l {
                    tp += 1.0;
                }
            }
        }
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = tp / positives;
        let f1 = if tp > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        let meets = recall >= floor;
        let replace = match best {
            None => true,
            Some((_, bf1, brec, bmeets)) => {
                if meets != bmeets {
                    meets
                } else if meets {
                    f1 > bf1
                } else {
                    recall > brec || (recall == brec && f1 > bf1)
                }
            }
        };
        if replace {
            best = Some((tau, f1, recall, meets));
        }
    }
    let (tau, f1, recall, _) = best.unwrap();
    (tau, f1, recall)
}

fn calibration() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::default();
    let mut r = rng(3);
    let mut fallbacks = 0;
    for set in 0..500 {
        let n = r.gen_range(1..1_500);
        let levels = r.gen_range(1..=1_000u32);
        let pos_rate: f64 = r.gen_range(0.0..0.6);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(r.gen_range(0..levels)) / f64::from(levels)).collect();
        let labels: Vec<bool> = scores
            .iter()
            .map(|&s| r.gen_bool((pos_rate + 0.4 * s).min(1.0)))
            .collect();
        let fit = calibrate_threshold(&scores, &labels, 0.9, 1_000);
        if !labels.iter().any(|&l| l) {
            fallbacks += 1;
            c.check(fit.fallback && fit.tau == 0.5, || format!("set {set}: no positives but {fit:?}"));
            continue;
        }
        let (tau, f1, recall) = calibration_oracle(&scores, &labels, 0.9);
        c.check(fit.tau == tau && fit.f1 == f1 && fit.recall == recall, || {
            format!("set {set}: got ({}, {}, {}), oracle ({tau}, {f1}, {recall})", fit.tau, fit.f1, fit.recall)
        });
    }
    within(start.elapsed(), Duration::from_secs(30), &mut c);
    c.outcome(format!("500 score sets ({fallbacks} without anomalies)"))
}

// 4 ---------------------------------------------------------------------

/// The three-path rule, written straight from its definition.
fn route_oracle(
    g: f64,
    dist: Option<&[f64]>,
    kinds: &[DomainKind],
    scores: &[f64],
    cal: &CalibrationResult,
) -> (Decision, RoutePath, Option<usize>, Option<f64>) {
    let flag = |b: bool| if b { Decision::Anomaly } else { Decision::Normal };
    let universal = || {
        let s = fuse_universal(scores[0], g, cal.fusion_weight);
        (flag(s >= cal.tau_universal), RoutePath::Universal, None, Some(s))
    };
    if g < 0.5 {
        return universal();
    }
    let Some(dist) = dist else { return universal() };
    let mut chosen = 0;
    for j in 1..dist.len() {
        if dist[j] > dist[chosen] {
            chosen = j;
        }
    }
    let c = chosen + 1;
    if kinds[c] == DomainKind::PureAnomaly {
        return (Decision::Anomaly, RoutePath::Pure, Some(c), None);
    }
    (flag(scores[c] >= cal.tau[&c]), RoutePath::Mixed, Some(c), Some(scores[c]))
}

fn same(v: &Verdict, o: &(Decision, RoutePath, Option<usize>, Option<f64>)) -> bool {
    v.decision == o.0 && v.path == o.1 && v.domain == o.2 && v.score == o.3
}

fn routing() -> Outcome {
    let mut c = Checks::default();
    let mut r = rng(4);
    let mut paths: BTreeMap<&str, usize> = BTreeMap::new();
    let boundary = [0.5f64.next_down(), 0.5, 0.5f64.next_up()];
    let mut run = |r: &mut rand_chacha::ChaCha8Rng, g: Option<f64>, c: &mut Checks| {
        let experts = r.gen_range(1..6);
        let mut kinds = vec![DomainKind::Universal];
        kinds.extend((0..experts).map(|_| if r.gen_bool(0.4) { DomainKind::PureAnomaly } else { DomainKind::Mixed }));
        let tau: BTreeMap<usize, f64> = (1..=experts)
            .filter(|&d| kinds[d] == DomainKind::Mixed)
            .map(|d| (d, r.gen_range(0.01..0.99)))
            .collect();
        let cal = CalibrationResult {
            tau,
            fusion_weight: DEFAULT_FUSION_GRID[r.gen_range(0..DEFAULT_FUSION_GRID.len())],
            tau_universal: r.gen_range(0.01..0.99),
        };
        let g = g.unwrap_or_else(|| r.gen_range(0.0..1.0));
        let mut scores: Vec<f64> = (0..=experts).map(|_| r.gen_range(0.0..1.0)).collect();
        // exact threshold hits
        if r.gen_bool(0.1) {
            for (&d, &t) in &cal.tau {
                scores[d] = t;
            }
        }
        let dist: Option<Vec<f64>> = (!r.gen_bool(0.1)).then(|| {
            let mut v: Vec<f64> = (0..experts).map(|_| f64::from(r.gen_range(1..5u32))).collect();
            let sum: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= sum);
            v
        });
        let got = decide(g, dist.as_deref(), &kinds, &cal, &mut |d| scores[d]);
        let want = route_oracle(g, dist.as_deref(), &kinds, &scores, &cal);
        c.check(same(&got, &want), || format!("g={g} dist={dist:?} kinds={kinds:?}: {got:?} vs {want:?}"));
        *paths.entry(got.path.as_str()).or_default() += 1;
    };
    for _ in 0..10_000 {
        run(&mut r, None, &mut c);
    }
    for &g in &boundary {
        for _ in 0..200 {
            run(&mut r, Some(g), &mut c);
        }
    }
    // exhaustive boundary table: gate side x selector presence x kind x score side
    let kinds_of = [DomainKind::PureAnomaly, DomainKind::Mixed];
    for &g in &boundary {
        for with_selector in [false, true] {
            for kind in kinds_of {
                for delta in [-1e-9, 0.0, 1e-9] {
                    let kinds = [DomainKind::Universal, kind];
                    let cal = CalibrationResult {
                        tau: BTreeMap::from([(1, 0.5)]),
                        fusion_weight: 0.0,
                        tau_universal: 0.5,
                    };
                    let scores = [0.5 + delta, 0.5 + delta];
                    let dist = [1.0];
                    let sel = with_selector.then_some(&dist[..]);
                    let got = decide(g, sel, &kinds, &cal, &mut |d| scores[d]);
                    let want = route_oracle(g, sel, &kinds, &scores, &cal);
                    c.check(same(&got, &want), || format!("boundary g={g} sel={with_selector} {kind:?} d={delta}: {got:?}"));
                    let expected_path = if g < 0.5 || !with_selector {
                        RoutePath::Universal
                    } else if kind == DomainKind::PureAnomaly {
                        RoutePath::Pure
                    } else {
                        RoutePath::Mixed
                    };
                    c.check(got.path == expected_path, || format!("boundary g={g}: path {:?}", got.path));
                }
            }
        }
    }
    c.outcome(format!("10,000 random tuples + boundary cases, paths {paths:?}"))
}

// 5 ---------------------------------------------------------------------

fn auroc_oracle() -> Outcome {
    let mut c = Checks::default();
    let mut r = rng(5);
    for set in 0..200 {
        let n = r.gen_range(2..=500);
        let levels = r.gen_range(2..200u32);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(r.gen_range(0..levels))).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| r.gen_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        let got = auroc(&scores, &labels).unwrap();
        c.check(close(got, wins / pairs, 1e-9), || format!("set {set}: {got} vs {}", wins / pairs));
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        let flipped = auroc(&negated, &labels).unwrap();
        c.check(close(flipped, 1.0 - got, 1e-9), || format!("set {set}: symmetry {flipped} vs {}", 1.0 - got));
    }
    let example = auroc(&[0.9, 0.1, 0.9], &[true, false, false]).unwrap();
    c.check(pct(Some(example)) == "75.00", || format!("worked example {example}"));
    c.outcome("200 score sets, n <= 500".into())
}

// 6 ---------------------------------------------------------------------

fn asymmetric_confidence() -> Outcome {
    let mut c = Checks::default();
    let mut r = rng(6);
    let trials = 100_000;
    let mut notes = Vec::new();
    for (p, k) in [(0.5, 3usize), (0.2, 5), (0.1, 4)] {
        let mut hits = 0u32;
        let mut records: Vec<LogRecord> = (0..k as u64)
            .map(|o| {
                let mut rec = LogRecord::new(o, Label::Normal, "");
                rec.event_id = Some(EventId(1));
                rec
            })
            .collect();
        for _ in 0..trials {
            for rec in records.iter_mut() {
                rec.label = if r.gen_bool(p) { Label::Anomaly } else { Label::Normal };
            }
            let sample = kshot::sample(&records, k).unwrap();
            let s = &sample.per_event[&EventId(1)];
            if s.has_anomaly && !s.has_normal {
                hits += 1;
            }
        }
        let expected = p.powi(k as i32);
        let freq = f64::from(hits) / f64::from(trials);
        let se = (expected * (1.0 - expected) / f64::from(trials)).sqrt();
        let z = (freq - expected) / se;
        c.check(z.abs() <= 3.0, || format!("p={p} K={k}: {freq} vs {expected} ({z:.2} SE)"));
        notes.push(format!("p={p},K={k}: {freq:.5} vs {expected:.5} ({z:+.2} SE)"));
    }
    c.outcome(notes.join(", "))
}

// 7 ---------------------------------------------------------------------

struct Trace {
    lines: &'static [&'static str],
    config: DrainConfig,
    /// Templates in creation order, with line counts.
    templates: &'static [(&'static str, u64)],
}

fn traces() -> Vec<Trace> {
    let d = DrainConfig::default();
    let t = |lines, templates| Trace {
        lines,
        config: d.clone(),
        templates,
    };
    vec![
        // 2 tokens, 1 prefix token; 1 of 2 equal = 0.5 >= 0.5
        t(&["mount failed", "mount succeeded"], &[("mount <*>", 2)]),
        // 1 of 3 = 0.33
        t(&["disk ok now", "disk bad later"], &[("disk ok now", 1), ("disk bad later", 1)]),
        // 2 of 4 = 0.5
        t(&["a b c d", "a b x y"], &[("a b <*> <*>", 2)]),
        // 1 of 4
        t(&["a b c d", "a x y z"], &[("a b c d", 1), ("a x y z", 1)]),
        // digits masked before matching
        t(&["job 17 done", "job 18 done"], &[("job <*> done", 2)]),
        // third line matches through the wildcard: 3 of 3
        t(&["fan speed low", "fan speed high", "fan speed ok"], &[("fan speed <*>", 3)]),
        // lengths differ: separate subtrees
        t(&["link up", "link up now"], &[("link up", 1), ("link up now", 1)]),
        // first token differs: separate leaves despite 2 of 3 equal
        t(&["alpha x y", "beta x y"], &[("alpha x y", 1), ("beta x y", 1)]),
        // 2 of 4 merge, then k, <*>, <*> match: 3 of 4
        t(&["k a b c", "k x y c", "k p q r"], &[("k <*> <*> <*>", 3)]),
        // 3rd line: 2 of 4 against the first, 3 of 4 against the second
        t(&["s a b c", "s x y z", "s x y c"], &[("s a b c", 1), ("s x y <*>", 2)]),
        // equal ratios 3 of 6: the older template wins
        t(&["v a b c d e", "v f g h i j", "v a b h i k"], &[("v a b <*> <*> <*>", 2), ("v f g h i j", 1)]),
        // single tokens: no prefix, 0 of 1
        t(&["ping", "pong"], &[("ping", 1), ("pong", 1)]),
        t(&["ping", "ping"], &[("ping", 2)]),
        // digit-bearing first tokens share the wildcard branch
        t(&["node1 up ok", "node2 up ok"], &[("<*> up ok", 2)]),
        t(&["addr 0x1f ok", "addr 0xff ok"], &[("addr <*> ok", 2)]),
        // 2 of 3, then the exact line again
        t(&["q a b", "q a c", "q a b"], &[("q a <*>", 3)]),
        t(&["r a b c", "r d e f", "r a e c"], &[("r a <*> c", 2), ("r d e f", 1)]),
        // threshold 0.6: 0.5 no longer merges
        Trace {
            lines: &["mount failed", "mount succeeded"],
            config: DrainConfig {
                similarity_threshold: 0.6,
                ..d.clone()
            },
            templates: &[("mount failed", 1), ("mount succeeded", 1)],
        },
        // depth 5: two prefix tokens, so `a b` and `a x` never meet
        Trace {
            lines: &["a b c d", "a x c d"],
            config: DrainConfig { tree_depth: 5, ..d.clone() },
            templates: &[("a b c d", 1), ("a x c d", 1)],
        },
        // two children per node: `b` and `c` overflow into the wildcard child
        Trace {
            lines: &["a x", "b x", "c x"],
            config: DrainConfig { max_children: 2, ..d },
            templates: &[("a x", 1), ("<*> x", 2)],
        },
    ]
}

fn parser() -> Outcome {
    let mut c = Checks::default();
    let traces = traces();
    for (i, tr) in traces.iter().enumerate() {
        let mut p = DrainParser::new(tr.config.clone()).unwrap();
        let last = tr.lines.iter().map(|l| p.parse_line(l)).last().unwrap();
        let table = p.freeze();
        let got: Vec<(String, u64)> = table.entries().iter().map(|e| (e.template.join(" "), e.count)).collect();
        let want: Vec<(String, u64)> = tr.templates.iter().map(|(t, n)| (t.to_string(), *n)).collect();
        c.check(got == want, || format!("trace {}: {got:?} vs {want:?}", i + 1));
        c.check(table.contains(last), || format!("trace {}: last EventID not in table", i + 1));
    }

    let corpus = generate(&SyntheticConfig {
        lines: 20_000,
        novel_templates: 2,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let mut a = corpus.records();
    let mut b = corpus.records();
    let ta = parse_records(&mut a, &DrainConfig::default()).unwrap();
    let tb = parse_records(&mut b, &DrainConfig::default()).unwrap();
    c.check(ta.to_json().unwrap() == tb.to_json().unwrap(), || "template tables differ between runs".into());
    c.check(a.iter().zip(&b).all(|(x, y)| x.event_id == y.event_id), || "EventIDs differ between runs".into());
    let uncovered = a.iter().filter(|r| ta.match_only(&r.raw) != r.event_id).count();
    c.check(uncovered == 0, || format!("{uncovered} parsed lines do not match their own EventID"));
    let unstable = ta
        .entries()
        .iter()
        .filter(|e| ta.match_tokens(&e.template) != Some(e.event_id))
        .count();
    c.check(unstable == 0, || format!("{unstable} templates do not map to themselves"));
    c.outcome(format!("{} hand traces, {} templates on 20,000 lines", traces.len(), ta.len()))
}

// 8, 9 ------------------------------------------------------------------

fn corpus(cfg: &SyntheticConfig) -> (SyntheticCorpus, Prepared, PipelineConfig) {
    let corpus = generate(cfg).unwrap();
    let pc = PipelineConfig::default();
    let prep = prepare(corpus.records(), &pc).unwrap();
    (corpus, prep, pc)
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::default();
    let (synthetic, prep, cfg) = corpus(&SyntheticConfig::default());
    let built = setup(&prep, &cfg, ExecMode::Parallel).unwrap();
    let (report, verdicts) = evaluate(&prep, &built.bundle, &cfg, true, ExecMode::Parallel).unwrap();
    let routed = report.pipeline.f1.unwrap_or(0.0) * 100.0;
    let global = report
        .baselines
        .iter()
        .find(|b| b.name == "global-linear")
        .and_then(|b| b.metrics.f1)
        .unwrap_or(0.0)
        * 100.0;
    c.check(routed - global >= 10.0, || format!("routed F1 {routed:.2} vs global {global:.2}"));

    let pure = report.pipeline.per_path.get("pure").copied().unwrap_or_default();
    c.check(pure.tp > 0 && pure.fn_ == 0 && pure.recall() == Some(1.0), || format!("pure path {pure:?}"));

    let planted: Vec<Option<String>> = synthetic.truth().into_iter().map(|t| t.domain).collect();
    let agreement = domain_agreement(
        &built.bundle,
        prep.offline(),
        &planted[prep.split.offline.clone()],
        &verdicts,
        &planted[prep.split.test.clone()],
        RoutePath::Mixed,
    );
    let rate = agreement.rate.unwrap_or(0.0);
    c.check(agreement.detections > 0 && rate >= 0.95, || format!("domain agreement {agreement:?}"));
    within(start.elapsed(), Duration::from_secs(600), &mut c);
    c.outcome(format!(
        "routed F1 {routed:.2} vs global-linear {global:.2}; pure recall {} on {} lines; mixed labels {}/{} correct",
        pct(pure.recall()),
        pure.total(),
        agreement.agreeing,
        agreement.detections
    ))
}

fn closed_world() -> Outcome {
    let mut c = Checks::default();
    let (_, prep, cfg) = corpus(&SyntheticConfig::default().closed_world());
    let built = setup(&prep, &cfg, ExecMode::Parallel).unwrap();
    let (report, _) = evaluate(&prep, &built.bundle, &cfg, true, ExecMode::Parallel).unwrap();
    let vote = report.baselines.iter().find(|b| b.name == "eventid-vote").map(|b| b.metrics.f1).unwrap_or(None);
    c.check(report.pipeline.f1 == Some(1.0), || format!("pipeline F1 {}", pct(report.pipeline.f1)));
    c.check(vote == Some(1.0), || format!("eventid-vote F1 {}", pct(vote)));
    c.outcome(format!("pipeline F1 {}, eventid-vote F1 {}", pct(report.pipeline.f1), pct(vote)))
}

// 10 --------------------------------------------------------------------

fn labeling_cost() -> Outcome {
    let mut c = Checks::default();
    let (_, prep, _) = corpus(&SyntheticConfig::default());
    let offline = prep.offline();
    let mut per_event: BTreeMap<EventId, usize> = BTreeMap::new();
    for r in offline {
        if r.label.is_labeled() {
            *per_event.entry(r.event_id.unwrap()).or_default() += 1;
        }
    }
    let ks = [1, 5, 10, 25, 50, 100, 1_000];
    let costs = labeling_cost_report(offline, &ks).unwrap();
    let mut previous = 0;
    for cost in &costs {
        let labels: usize = per_event.values().map(|&n| n.min(cost.k)).sum();
        c.check(cost.labels == labels, || format!("K={}: {} labels, expected {labels}", cost.k, cost.labels));
        c.check(cost.offline_lines == offline.len(), || format!("K={}: offline size {}", cost.k, cost.offline_lines));
        let reduction = offline.len() as f64 / labels as f64;
        c.check(cost.reduction == reduction, || format!("K={}: reduction {} vs {reduction}", cost.k, cost.reduction));
        c.check(cost.reduction_rounded == reduction.round() as u64, || format!("K={}: rounding", cost.k));
        c.check(cost.labels >= previous, || format!("K={}: labels decreased", cost.k));
        previous = cost.labels;
    }
    let k100 = costs.iter().find(|x| x.k == 100).unwrap();
    let mut summary = format!("K=100: {} labels, {}x reduction", k100.labels, k100.reduction_rounded);
    match std::env::var_os("FAME_BGL_PATH") {
        Some(path) => {
            let corpus = ingest(&path, InputFormat::LoghubLabeled).unwrap();
            let bgl = prepare(corpus.records, &PipelineConfig::default()).unwrap();
            let labels = bgl.sample.label_count();
            c.check(labels == 53_287, || format!("BGL K=100 labels {labels}, expected 53,287"));
            summary.push_str(&format!("; BGL K=100 labels {labels}"));
        }
        None => summary.push_str("; BGL check not run (FAME_BGL_PATH unset)"),
    }
    c.outcome(summary)
}

// 11 --------------------------------------------------------------------

fn determinism() -> Outcome {
    let mut c = Checks::default();
    let (_, prep, cfg) = corpus(&SyntheticConfig {
        lines: 20_000,
        ..SyntheticConfig::default()
    });
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let modes = [ExecMode::Parallel, ExecMode::Parallel, ExecMode::Sequential];
    let mut reports = Vec::new();
    for (dir, mode) in dirs.iter().zip(modes) {
        let built = setup(&prep, &cfg, mode).unwrap();
        built.bundle.save(dir.path()).unwrap();
        let (report, _) = evaluate(&prep, &built.bundle, &cfg, true, mode).unwrap();
        reports.push(serde_json::to_string(&report).unwrap());
    }
    let mut files: Vec<String> = std::fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    for other in &dirs[1..] {
        for f in &files {
            let a = std::fs::read(dirs[0].path().join(f)).unwrap();
            let b = std::fs::read(other.path().join(f)).unwrap();
            c.check(a == b, || format!("{f} differs between runs"));
        }
    }
    c.check(reports.iter().all(|r| *r == reports[0]), || "eval reports differ".into());

    let reseeded = PipelineConfig { seed: cfg.seed + 1, ..cfg.clone() };
    let other = setup(&prep, &reseeded, ExecMode::Parallel).unwrap();
    let dir = tempfile::tempdir().unwrap();
    other.bundle.save(dir.path()).unwrap();
    let changed = files
        .iter()
        .any(|f| std::fs::read(dirs[0].path().join(f)).unwrap() != std::fs::read(dir.path().join(f)).unwrap());
    c.check(changed, || "a different root seed left the bundle unchanged".into());
    c.outcome(format!("{} bundle files identical across 2 parallel + 1 sequential runs", files.len()))
}

// 12 --------------------------------------------------------------------

fn throughput() -> Outcome {
    let (synthetic, prep, cfg) = corpus(&SyntheticConfig::default());
    let built = setup(&prep, &cfg, ExecMode::Parallel).unwrap();
    let stream: String = synthetic.lines.iter().map(|l| l.message.as_str()).collect::<Vec<_>>().join("\n") + "\n";
    let mut sink = Vec::with_capacity(stream.len() * 2);
    let summary = classify_stream(&built.bundle, Cursor::new(stream.as_bytes()), InputFormat::Raw, &mut sink, ExecMode::Sequential).unwrap();
    let ok = summary.lines as usize == synthetic.len() && summary.lines_per_sec >= 10_000.0;
    Outcome {
        pass: ok,
        soft: true,
        detail: format!("{} lines single-threaded at {:.0} lines/s (floor 10,000)", summary.lines, summary.lines_per_sec),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("formula suite", formulas),
        ("focal gradient check", gradient_check),
        ("calibration oracle", calibration),
        ("routing oracle", routing),
        ("AUROC oracle", auroc_oracle),
        ("asymmetric K-shot confidence", asymmetric_confidence),
        ("parser properties", parser),
        ("end-to-end synthetic", end_to_end),
        ("closed-world control", closed_world),
        ("labeling cost", labeling_cost),
        ("determinism", determinism),
        ("throughput", throughput),
    ];
    let mut hard_failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let status = match (outcome.pass, outcome.soft) {
            (true, _) => "PASS",
            (false, true) => "FAIL (soft)",
            (false, false) => {
                hard_failures += 1;
                "FAIL"
            }
        };
        println!("criterion {:>2} {name:<30} {status}  {} [{:.2?}]", i + 1, outcome.detail, start.elapsed());
    }
    if hard_failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{hard_failures} criteria failed");
        ExitCode::FAILURE
    }
}
