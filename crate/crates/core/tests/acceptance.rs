//! One line per headline criterion: PASS, FAIL, or BLOCKED with the measured
//! values. Criteria that need the released annotation set read its path from
//! `IH_GOLD_DATASET` and report BLOCKED when it is not available.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use humbench::boosters::{auto_optimize, select_exemplars, self_refine, Evaluation, ExampleOutcome, OptimizeParams, Scorer};
use humbench::classical::{cross_validate, loss_and_gradient, FeatureMode, SparseRow, TrainParams};
use humbench::codebook::{Coarse, CoarseClass};
use humbench::corpus::AnnotationTarget;
use humbench::gateway::{Gateway, GatewayConfig, Mode, ResponseCache};
use humbench::metrics::{average_kappa, cohen_kappa, distribution_baseline, macro_f1};
use humbench::prompts::{PromptConfig, PromptFactory};
use humbench::runner::{
    coarse_labels, coarse_upper_bound, emit_report, feature_texts, label_upper_bounds, load_gold, report_csv,
    run_experiment, score_run, ExperimentConfig, GoldRecord, ReportFormat,
};
use humbench::Codebook;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use common::oracles::{kappa_oracle, macro_f1_oracle};
use common::{fixtures, squash, DigestTransport, StubTransport, STUB_MODEL};

enum Outcome {
    Pass(String),
    Fail(String),
    Blocked(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol + 1e-12
}

/// Per-label reference κ with (agreed, union) positive counts over 350 targets.
const KAPPA_TABLE: [(&str, f64, usize, usize); 13] = [
    ("APB", 0.65, 33, 62),
    ("RDP", 0.49, 15, 42),
    ("EM", 0.66, 4, 8),
    ("RL", 0.70, 10, 18),
    ("RB", 0.80, 4, 6),
    ("SO", 0.71, 18, 31),
    ("MF", 0.64, 17, 34),
    ("DAL", 0.73, 7, 12),
    ("CDP", 0.66, 7, 14),
    ("CA", 0.73, 18, 30),
    ("AH", 0.87, 7, 9),
    ("DP", 0.66, 2, 4),
    ("UC", 0.45, 3, 10),
];

fn released_dataset() -> Option<PathBuf> {
    std::env::var_os("IH_GOLD_DATASET").map(PathBuf::from).filter(|p| p.is_file())
}

fn load_released(cb: &Codebook) -> Option<Vec<GoldRecord>> {
    released_dataset().map(|p| load_gold(&p, cb).unwrap_or_else(|e| panic!("{}: {e}", p.display())))
}

const BLOCKED_NO_DATA: &str = "IH_GOLD_DATASET is not set to the released annotation CSV";

fn baseline_reproduction() -> Outcome {
    let counts = BTreeMap::from([("IH", 134u64), ("IA", 60), ("NE", 156)]);
    let start = Instant::now();
    let est = distribution_baseline(&counts, 100_000, 0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    check(
        within(est.mean, 0.33, 0.02) && secs < 5.0,
        format!("mean {:.4} (se {:.5}) over 100000 trials in {secs:.2}s; target 0.33 +/- 0.02, < 5s", est.mean, est.std_error),
    )
}

/// Label vectors for one label with the given agreed and union counts; the
/// disagreements are split as evenly as possible between the annotators.
fn reconstructed(n: usize, agreed: usize, union: usize) -> (Vec<bool>, Vec<bool>) {
    let only = union - agreed;
    let a_only = only.div_ceil(2);
    let a: Vec<bool> = (0..n).map(|i| i < agreed + a_only).collect();
    let b: Vec<bool> = (0..n).map(|i| i < agreed || (i >= agreed + a_only && i < union)).collect();
    (a, b)
}

fn kappa_reproduction(cb: &Codebook) -> Outcome {
    let (from_counts, _) = kappa_table_check(|label| {
        let (_, _, agreed, union) = KAPPA_TABLE.iter().find(|r| r.0 == label).unwrap();
        reconstructed(350, *agreed, *union)
    });
    let Some(gold) = load_released(cb) else {
        return Outcome::Blocked(format!("{BLOCKED_NO_DATA}; reconstruction from published counts: {from_counts}"));
    };
    let start = Instant::now();
    let (detail, ok) = kappa_table_check(|label| {
        (
            gold.iter().map(|r| r.labels_a.contains(label)).collect(),
            gold.iter().map(|r| r.labels_b.contains(label)).collect(),
        )
    });
    let secs = start.elapsed().as_secs_f64();
    check(ok && secs < 1.0, format!("{detail} in {secs:.3}s"))
}

/// Compares per-label κ against the reference table; returns a summary and
/// whether every tolerance holds.
fn kappa_table_check(columns: impl Fn(&str) -> (Vec<bool>, Vec<bool>)) -> (String, bool) {
    let mut per_label = BTreeMap::new();
    let mut worst = ("", 0.0f64);
    for (label, target, _, _) in KAPPA_TABLE {
        let (a, b) = columns(label);
        let k = cohen_kappa(&a, &b).unwrap();
        if (k - target).abs() > worst.1 {
            worst = (label, (k - target).abs());
        }
        per_label.insert(label, k);
    }
    let avg = average_kappa(&per_label).unwrap();
    let spot: Vec<String> = ["AH", "RB", "UC"].iter().map(|l| format!("{l} {:.3}", per_label[l])).collect();
    let ok = worst.1 <= 0.02 + 1e-12 && within(avg, 0.67, 0.01);
    (
        format!("average {avg:.4} (target 0.67 +/- 0.01), worst label {} off by {:.4} (tol 0.02), {}", worst.0, worst.1, spot.join(", ")),
        ok,
    )
}

fn upper_bound_reproduction(cb: &Codebook) -> Outcome {
    let Some(gold) = load_released(cb) else {
        return Outcome::Blocked(BLOCKED_NO_DATA.into());
    };
    let refs: Vec<&GoldRecord> = gold.iter().collect();
    let coarse = coarse_upper_bound(&refs, cb).unwrap();
    let labels = label_upper_bounds(&refs, cb).unwrap();
    let mean = labels.iter().map(|(_, v)| v).sum::<f64>() / labels.len() as f64;
    check(
        within(coarse, 0.83, 0.02) && within(mean, 0.85, 0.02),
        format!("coarse {coarse:.4} (target 0.83 +/- 0.02), per-label mean {mean:.4} (target 0.85 +/- 0.02)"),
    )
}

fn classical_band(cb: &Codebook) -> Outcome {
    let Some(gold) = load_released(cb) else {
        return Outcome::Blocked(BLOCKED_NO_DATA.into());
    };
    let texts = feature_texts(&gold, false);
    let labels = coarse_labels(&gold);
    let start = Instant::now();
    let tfidf = cross_validate(&texts, &labels, FeatureMode::TfIdf, 5, 0, TrainParams::default()).unwrap();
    let bow = cross_validate(&texts, &labels, FeatureMode::Bow, 5, 0, TrainParams::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    check(
        (0.30..=0.45).contains(&tfidf.mean) && (0.30..=0.48).contains(&bow.mean) && secs < 60.0,
        format!("TF-IDF {:.4} in [0.30, 0.45], BoW {:.4} in [0.30, 0.48], {secs:.1}s (< 60s)", tfidf.mean, bow.mean),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let instances = 150;
    for _ in 0..instances {
        let n = rng.gen_range(1..40);
        let p = rng.gen::<f64>();
        let a: Vec<bool> = (0..n).map(|_| rng.gen_bool(p)).collect();
        let b: Vec<bool> = (0..n).map(|_| rng.gen_bool(p)).collect();
        worst = worst.max((cohen_kappa(&a, &b).unwrap() - kappa_oracle(&a, &b)).abs());
        let k = rng.gen_range(2..5usize);
        let g: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let q: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let classes: Vec<usize> = (0..k).collect();
        worst = worst.max((macro_f1(&g, &q, &classes).unwrap() - macro_f1_oracle(&g, &q, k)).abs());
    }
    let mut worst_grad = 0.0f64;
    let seeds = 20u64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, dim, k) = (rng.gen_range(3..10), rng.gen_range(2..6), rng.gen_range(2..4));
        let mut x: Vec<SparseRow> = vec![Vec::new(); n];
        for row in x.iter_mut() {
            for j in 0..dim {
                if rng.gen_bool(0.6) {
                    row.push((j, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let w: Vec<Vec<f64>> = (0..k).map(|_| (0..=dim).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect();
        let lambda = rng.gen_range(0.0..2.0);
        let (_, grad) = loss_and_gradient(&x, &y, &w, lambda);
        let h = 1e-6;
        for c in 0..k {
            for j in 0..=dim {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[c][j] += h;
                wm[c][j] -= h;
                let fd = (loss_and_gradient(&x, &y, &wp, lambda).0 - loss_and_gradient(&x, &y, &wm, lambda).0) / (2.0 * h);
                worst_grad = worst_grad.max((fd - grad[c][j]).abs());
            }
        }
    }
    check(
        worst <= 1e-12 && worst_grad <= 1e-5,
        format!("{instances} kappa + {instances} macro-F1 instances, max diff {worst:.1e} (tol 1e-12); gradient on {seeds} seeds, max diff {worst_grad:.1e} (tol 1e-5)"),
    )
}

fn prompt_goldens(cb: &Codebook) -> Outcome {
    let factory = PromptFactory::new(cb);
    let target = AnnotationTarget::new(
        "golden-1",
        "p",
        "Is doubt a sin?",
        "I have been struggling with whether questioning scripture is wrong.",
        None,
        "I might be wrong, but I think doubt is part of faith. That's just my view.",
    );
    let names = ["C-MS", "D-MS", "C&D-MS", "C-BQ", "D-BQ", "C&D-BQ", "C-coarse", "D-coarse", "C&D-coarse"];
    let mut mismatched = Vec::new();
    for name in names {
        let config: PromptConfig = name.parse().unwrap();
        let conv = factory.build_prompt(&target, &config, name.ends_with("-BQ").then_some("APB")).unwrap();
        let golden = |part: &str| {
            std::fs::read_to_string(fixtures().join("golden").join(format!("{}.{part}.txt", name.replace('&', "and")))).unwrap()
        };
        if squash(conv.system()) != squash(&golden("system")) || squash(&conv.last_user().unwrap().content) != squash(&golden("user")) {
            mismatched.push(name);
        }
    }
    let coarse = factory.build_prompt(&target, &"C&D-coarse".parse().unwrap(), None).unwrap();
    let bq = factory.build_prompt(&target, &"C-BQ".parse().unwrap(), Some("APB")).unwrap();
    let anchors = coarse.system().starts_with("You are a classifier for predicting")
        && bq.system().contains("If it does not fit this description, answer `No`");
    check(
        mismatched.is_empty() && anchors,
        format!("{} configurations rendered, mismatches {:?}, anchors present: {anchors}", names.len(), mismatched),
    )
}

fn replay_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    let mut detail = Vec::new();
    for _ in 0..2 {
        let mut cfg = ExperimentConfig::load(fixtures().join("replay_cd_bq.toml")).unwrap();
        cfg.output_dir = dir.path().to_path_buf();
        let cb = cfg.load_codebook().unwrap();
        let gold = load_gold(&cfg.dataset, &cb).unwrap();
        let gateway = cfg.build_gateway().unwrap();
        let run = run_experiment(&cfg, &cb, &gold, &gateway).unwrap();
        let report = score_run(&run, &gold, &cb).unwrap();
        let paths = emit_report(&report, dir.path(), &ReportFormat::ALL).unwrap();
        let bytes: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
        let stats = gateway.stats();
        detail.push((gateway.mode(), run.gateway_calls, stats.network_attempts, gold.len()));
        outputs.push(bytes);
    }
    let ok = outputs[0] == outputs[1]
        && detail.iter().all(|(mode, calls, net, targets)| *mode == Mode::Replay && *calls == 260 && *net == 0 && *targets == 20);
    check(
        ok,
        format!(
            "two replays of {} targets: identical reports {}, calls {:?}, network attempts {:?}",
            detail[0].3,
            outputs[0] == outputs[1],
            detail.iter().map(|d| d.1).collect::<Vec<_>>(),
            detail.iter().map(|d| d.2).collect::<Vec<_>>()
        ),
    )
}

#[derive(Default)]
struct DigestScorer {
    calls: AtomicUsize,
    seen: Mutex<Vec<(String, f64)>>,
}

impl Scorer for DigestScorer {
    fn evaluate(&self, prompt: &str) -> humbench::Result<Evaluation> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let d = Sha256::digest(prompt.as_bytes());
        let score = u16::from_be_bytes([d[0], d[1]]) as f64 / 65535.0;
        self.seen.lock().unwrap().push((prompt.to_string(), score));
        let examples = (0..6)
            .map(|i| ExampleOutcome { input: format!("input {i}"), output: "No".into(), label: "Yes".into() })
            .collect();
        Ok(Evaluation { score, examples })
    }
}

fn exemplar_pool(n: usize, positives: usize, label: &str) -> Vec<GoldRecord> {
    (0..n)
        .map(|i| {
            let labels: BTreeSet<String> = if i < positives { [label.to_string()].into() } else { BTreeSet::new() };
            GoldRecord {
                target: AnnotationTarget::new(format!("s{i:02}"), "p", "t", "s", None, format!("comment {i}")),
                labels_a: labels.clone(),
                labels_b: labels.clone(),
                agreed: labels,
                coarse: CoarseClass::plain(if i < positives { Coarse::IH } else { Coarse::Neutral }),
                codebook_version: 1,
            }
        })
        .collect()
}

fn booster_contracts(cb: &Codebook) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let gateway = Gateway::live(GatewayConfig::default(), Arc::new(DigestTransport::default()));
    let rounds = 5;
    let scorer = DigestScorer::default();
    let params = OptimizeParams { rounds, per_round: 3, seed: 9 };
    let (best, history) = auto_optimize("APB", "seed system", "seed prompt", &gateway, &scorer, params).unwrap();
    let inc = history.incumbent_scores();
    let seen = scorer.seen.lock().unwrap();
    let argmax = seen.iter().fold(&seen[0], |acc, s| if s.1 > acc.1 { s } else { acc });
    let monotone = inc.windows(2).all(|w| w[0] <= w[1]);
    ok &= history.candidate_evaluations() == rounds * 3 && monotone && best == argmax.0;
    notes.push(format!(
        "optimize: {} evaluations for {rounds} rounds, incumbents non-decreasing {monotone}, argmax returned {}",
        history.candidate_evaluations(),
        best == argmax.0
    ));

    let gold = load_gold(fixtures().join("gold_20.csv"), cb).unwrap();
    let factory = PromptFactory::new(cb);
    let live = Gateway::live(GatewayConfig::default(), Arc::new(StubTransport::default()));
    let bq: PromptConfig = "C&D-BQ".parse().unwrap();
    let t = self_refine(&factory, &bq, &gold[0].target, Some("APB"), &live, 2).unwrap();
    ok &= t.cycles.len() == 2 && t.calls == 6;
    notes.push(format!("refine: {} cycles / {} calls", t.cycles.len(), t.calls));

    let rich = select_exemplars(&exemplar_pool(20, 8, "RDP"), "RDP", 3, 3, 1, &BTreeSet::new()).unwrap();
    let scarce = select_exemplars(&gold, "DP", 3, 3, 1, &BTreeSet::new()).unwrap();
    let warned = scarce.warnings.iter().any(|w| w.contains("DP"));
    ok &= rich.positives.len() == 3 && rich.negatives.len() == 3 && rich.warnings.is_empty() && warned;
    notes.push(format!(
        "exemplars: {}+{} when available, DP {}+{} with warning {warned}",
        rich.positives.len(),
        rich.negatives.len(),
        scarce.positives.len(),
        scarce.negatives.len()
    ));
    check(ok, notes.join("; "))
}

fn table_layout_regenerable() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(fixtures().join("replay_cd_bq.toml")).unwrap();
    cfg.output_dir = dir.path().to_path_buf();
    let cache_path = dir.path().join("fresh.jsonl");
    let cb = cfg.load_codebook().unwrap();
    let gold = load_gold(&cfg.dataset, &cb).unwrap();
    let transport = Arc::new(StubTransport::default());
    let gw_cfg = GatewayConfig { model_id: STUB_MODEL.into(), ..GatewayConfig::default() };
    let gateway = Gateway::record(gw_cfg.clone(), transport.clone(), Arc::new(ResponseCache::open(&cache_path).unwrap()));
    let run = run_experiment(&cfg, &cb, &gold, &gateway).unwrap();
    let report = score_run(&run, &gold, &cb).unwrap();
    let csv = report_csv(&report).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    let labels: Vec<&str> = cb.abbrevs().collect();
    let layout = header[0] == "Setting"
        && header[1..=labels.len()] == labels[..]
        && header[labels.len() + 1..] == ["IH Mean", "IA Mean", "All", "IH/IA/NE"]
        && rows.iter().any(|r| r.starts_with(STUB_MODEL))
        && rows.contains(&"Baseline Distribution")
        && rows.contains(&"Upper bound Mutual");

    let replayed = Gateway::replay(gw_cfg, Arc::new(ResponseCache::open(&cache_path).unwrap()));
    let again = score_run(&run_experiment(&cfg, &cb, &gold, &replayed).unwrap(), &gold, &cb).unwrap();
    let stable = report_csv(&again).unwrap() == csv;
    check(
        layout && stable && transport.sent.load(Ordering::SeqCst) == 260,
        format!(
            "record run of {} calls regenerates the {}-column table with {} rows; model cells are as measured ({} All = {}), not compared to published values; replay of the fresh cache identical {stable}",
            run.gateway_calls,
            header.len(),
            rows.len(),
            STUB_MODEL,
            report.all_mean.map_or("n/a".into(), |v| format!("{v:.3}")),
        ),
    )
}

fn main() {
    let cb = Codebook::default_codebook();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("distribution baseline reproduction", Box::new(baseline_reproduction)),
        ("kappa reproduction", Box::new(|| kappa_reproduction(&cb))),
        ("upper-bound reproduction", Box::new(|| upper_bound_reproduction(&cb))),
        ("classical baseline band", Box::new(|| classical_band(&cb))),
        ("metric oracle suite", Box::new(metric_oracles)),
        ("prompt golden suite", Box::new(|| prompt_goldens(&cb))),
        ("replay determinism", Box::new(replay_determinism)),
        ("booster contracts", Box::new(|| booster_contracts(&cb))),
        ("model-score cells are not reproduction targets", Box::new(table_layout_regenerable)),
    ];
    let mut failed = Vec::new();
    for (name, f) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Outcome::Fail(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Outcome::Pass(d) => println!("PASS    {name}: {d}"),
            Outcome::Blocked(d) => println!("BLOCKED {name}: {d}"),
            Outcome::Fail(d) => {
                println!("FAIL    {name}: {d}");
                failed.push(*name);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
