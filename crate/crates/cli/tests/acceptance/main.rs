//! Release acceptance suite. Prints one verdict line per criterion and exits
//! nonzero when any criterion fails, except the single failure recorded in
//! `KNOWN_FAILURES`, which is reported but does not block.

#[path = "../../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;

use common::decode::{flip_argmax_error, instance};
use common::exact::{
    enumerate_boundaries, random_sequence, random_set_videos, static_lengths, summaries,
};
use common::gradients::{ce_error, network_error, pair_error, random_dims};
use common::{random_cache, random_hmm, random_set, rng};
use setseg_core::data::{
    load_dataset, oracle_exhaustive_map, read_features, save_dataset, write_features, Dataset,
    Video,
};
use setseg_core::eval::{iod, midpoint_hit, mof, Aggregation};
use setseg_core::hmm::{estimate_static, poisson_log_pmf, VideoSummary};
use setseg_core::infer::{
    align_lengths, mc_segment, sample_legal_sequence, GrammarPool, InferenceOptions,
};
use setseg_core::nnet::Regularizer;
use setseg_core::predictions::{format_predictions, parse_predictions};
use setseg_core::scv::{log_posterior, scv_decode_traced, viterbi_map};
use setseg_core::{ActionSet, FeatureMode, Segmentation, Vocabulary};

/// Criteria allowed to fail without failing the run; see the README.
const KNOWN_FAILURES: &[usize] = &[6];

const SEEDS: u64 = 5;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn viterbi_exactness() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..200 {
        let inst = instance(seed, 12, 1);
        let seg = viterbi_map(&inst.cache, &inst.hmm, &inst.set, false).unwrap();
        let got = log_posterior(&seg, &inst.cache, &inst.hmm).unwrap();
        let (_, want) = oracle_exhaustive_map(&inst.cache, &inst.hmm, &inst.set, false).unwrap();
        worst = worst.max((got - want).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-9 && secs < 60.0,
        format!("200 instances, max |diff| {worst:.2e}, {secs:.1} s"),
    )
}

fn scv_constraints() -> Verdict {
    let mut covered = 0;
    let mut flips = 0;
    let mut argmax_err: f64 = 0.0;
    let mut gaps = Vec::new();
    for seed in 0..200 {
        let inst = instance(seed, 12, 1);
        let trace = scv_decode_traced(&inst.cache, &inst.hmm, &inst.set, false).unwrap();
        if trace.segmentation.covers(&inst.set) {
            covered += 1;
        }
        flips += trace.flips.len();
        argmax_err = argmax_err.max(flip_argmax_error(&trace, &inst));
        let (_, oracle) = oracle_exhaustive_map(&inst.cache, &inst.hmm, &inst.set, true).unwrap();
        gaps.push((oracle - trace.log_posterior) / oracle.abs());
    }
    let gap = median(gaps);
    verdict(
        covered == 200 && argmax_err < 1e-9 && gap <= 0.15,
        format!(
            "coverage {covered}/200, {flips} flips, argmax err {argmax_err:.2e}, median relative gap {gap:.4}"
        ),
    )
}

fn gradients() -> Verdict {
    let mut worst: [f64; 6] = [0.0; 6];
    for seed in 0..50 {
        let errs = [
            ce_error(seed),
            pair_error(seed, FeatureMode::Hard, Regularizer::Base).max(pair_error(
                seed,
                FeatureMode::Soft,
                Regularizer::Base,
            )),
            pair_error(seed, FeatureMode::Hard, Regularizer::Npair),
            pair_error(seed, FeatureMode::Soft, Regularizer::Npair),
            network_error(seed, random_dims(seed), FeatureMode::Hard),
            network_error(seed, random_dims(seed), FeatureMode::Soft),
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    let names = [
        "ce",
        "base",
        "npair-hard",
        "npair-soft",
        "backprop-hard",
        "backprop-soft",
    ];
    let detail: Vec<String> = names
        .iter()
        .zip(&worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect();
    verdict(
        worst.iter().all(|&w| w < 1e-4),
        format!("50 instances each: {}", detail.join(", ")),
    )
}

fn estimators() -> Verdict {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..400 {
        let (videos, classes, floor) = random_set_videos(seed);
        let Some(want) = static_lengths(&videos, classes, floor) else {
            continue;
        };
        let got = estimate_static(&summaries(&videos), classes, floor).unwrap();
        for c in 0..classes {
            worst = worst.max((got.lengths[c] - want[c]).abs() / want[c].abs());
        }
        checked += 1;
    }
    let symmetric = [(2, 100), (3, 100), (5, 77), (6, 1000)]
        .into_iter()
        .all(|(k, t)| {
            let set = ActionSet::new(0..k);
            let hmm = estimate_static(
                &[VideoSummary {
                    set: &set,
                    num_frames: t,
                }],
                k,
                1,
            )
            .unwrap();
            hmm.lengths.iter().all(|&l| l == t as f64 / k as f64)
        });
    let mass_err = [0.3, 1.0, 4.0, 10.0, 25.0, 60.0, 137.5, 500.0]
        .into_iter()
        .map(|lambda: f64| {
            let upper = (lambda + 40.0 * lambda.sqrt()).ceil() as usize;
            let sum: f64 = (-lambda).exp()
                + (1..=upper)
                    .map(|l| poisson_log_pmf(l, lambda).unwrap().exp())
                    .sum::<f64>();
            (sum - 1.0).abs()
        })
        .fold(0.0, f64::max);
    verdict(
        worst < 1e-8 && checked >= 200 && symmetric && mass_err < 1e-9,
        format!(
            "{checked} exact solves, max rel err {worst:.1e}; symmetric exact: {symmetric}; pmf mass err {mass_err:.1e}"
        ),
    )
}

fn inference_legality() -> Verdict {
    let mut r = rng(5);
    let (mut sampled, mut legal) = (0, 0);
    while sampled < 10_000 {
        let classes = r.random_range(1..=6);
        let size = r.random_range(1..=classes);
        let set = random_set(&mut r, classes, size);
        let frames = r.random_range(1..200);
        let hmm = random_hmm(&mut r, classes, 40.0);
        for _ in 0..50 {
            let Some(cand) = sample_legal_sequence(&set, frames, &hmm, &mut r) else {
                continue;
            };
            sampled += 1;
            let ok = set.iter().all(|c| cand.classes.contains(&c))
                && hmm.total_mean_length(cand.classes.iter().copied()) <= frames as f64
                && cand.classes.windows(2).all(|w| w[0] != w[1]);
            legal += usize::from(ok);
        }
    }

    let mut align_err: f64 = 0.0;
    for seed in 0..200 {
        let mut r = rng(seed);
        let classes = r.random_range(2..=4);
        let len = r.random_range(1..=3);
        let frames = r.random_range(len..=12);
        let cache = random_cache(&mut r, classes, frames, 0, 2.0);
        let hmm = random_hmm(&mut r, classes, frames as f64);
        let seq = random_sequence(&mut r, classes, len);
        let (_, score) = align_lengths(&seq, &cache, &hmm).unwrap();
        align_err = align_err.max((score - enumerate_boundaries(&seq, &cache, &hmm)).abs());
    }

    let mut inversions = 0;
    for seed in 0..50 {
        let mut r = rng(seed);
        let classes = 4;
        let frames = r.random_range(20..60);
        let cache = random_cache(&mut r, classes, frames, 0, 2.0);
        let mut hmm = random_hmm(&mut r, classes, 8.0);
        hmm.lengths
            .iter_mut()
            .for_each(|l| *l = l.min(frames as f64 / 4.0));
        let sets = [
            random_set(&mut r, classes, 2),
            random_set(&mut r, classes, 3),
        ];
        let pool = GrammarPool::new(sets.iter()).unwrap();
        let mut last = f64::NEG_INFINITY;
        for k in [1, 2, 5, 20, 80] {
            let opts = InferenceOptions {
                candidates: k,
                ..Default::default()
            };
            let out = mc_segment(&cache, &hmm, &pool, &opts, &mut rng(seed ^ 77)).unwrap();
            inversions += usize::from(out.log_posterior < last);
            last = out.log_posterior;
        }
    }
    verdict(
        legal == sampled && align_err < 1e-9 && inversions == 0,
        format!(
            "{legal}/{sampled} candidates legal, align max |diff| {align_err:.1e}, {inversions} K-inversions over 50 instances"
        ),
    )
}

struct Run {
    segment_mof: f64,
    align_iod: Option<f64>,
    secs: f64,
}

fn setseg(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_setseg"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn aggregate(report: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix("aggregate="))
        .unwrap()
        .parse()
        .unwrap()
}

/// synth, train, segment and optionally align on one benchmark seed.
fn pipeline(root: &Path, seed: u64, variant: &[&str], with_align: bool) -> Run {
    let start = Instant::now();
    let p = |name: &str| root.join(name).to_str().unwrap().to_string();
    let seed_arg = seed.to_string();
    setseg(&[
        "synth",
        "--out",
        &p("data"),
        "--train",
        "60",
        "--test",
        "20",
        "--seed",
        &seed_arg,
    ]);
    let mut train = vec![
        "train",
        "--data",
        &p("data/train"),
        "--out",
        &p("m.ckpt"),
        "--iterations",
        "2000",
        "--seed",
        &seed_arg,
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    train.extend(variant.iter().map(|s| s.to_string()));
    setseg(&train.iter().map(String::as_str).collect::<Vec<_>>());
    let infer = |cmd: &str, out: &str| {
        let mut args = vec![cmd, "--checkpoint", &p("m.ckpt")]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        if cmd == "segment" {
            args.extend(["--train-data".into(), p("data/train")]);
        }
        args.extend([
            "--data".into(),
            p("data/test"),
            "--out".into(),
            p(out),
            "--seed".into(),
            seed_arg.clone(),
        ]);
        setseg(&args.iter().map(String::as_str).collect::<Vec<_>>());
    };
    let eval = |preds: &str, metric: &str| {
        aggregate(&setseg(&[
            "eval",
            "--predictions",
            &p(preds),
            "--data",
            &p("data/test"),
            "--metric",
            metric,
        ]))
    };
    infer("segment", "seg.tsv");
    let segment_mof = eval("seg.tsv", "mof");
    let align_iod = with_align.then(|| {
        infer("align", "align.tsv");
        eval("align.tsv", "iod")
    });
    Run {
        segment_mof,
        align_iod,
        secs: start.elapsed().as_secs_f64(),
    }
}

struct Ablation {
    scv: Vec<Run>,
    noreg: Vec<f64>,
    stat: Vec<f64>,
}

fn run_ablation() -> Ablation {
    let dir = tempfile::tempdir().unwrap();
    let mut out = Ablation {
        scv: Vec::new(),
        noreg: Vec::new(),
        stat: Vec::new(),
    };
    for seed in 0..SEEDS {
        let root = |tag: &str| {
            let r = dir.path().join(format!("{tag}{seed}"));
            std::fs::create_dir_all(&r).unwrap();
            r
        };
        out.scv.push(pipeline(&root("scv"), seed, &[], true));
        out.noreg
            .push(pipeline(&root("noreg"), seed, &["--reg", "none"], false).segment_mof);
        out.stat
            .push(pipeline(&root("static"), seed, &["--hmm", "static"], false).segment_mof);
    }
    out
}

fn end_to_end(ab: &Ablation) -> Verdict {
    let main = &ab.scv[0];
    let iod = main.align_iod.unwrap();
    let spread: Vec<String> = ab
        .scv
        .iter()
        .map(|r| format!("{:.3}", r.align_iod.unwrap()))
        .collect();
    verdict(
        main.segment_mof >= 0.80 && iod >= 0.85 && main.secs < 600.0,
        format!(
            "seed 0: segment MoF {:.4} (>= 0.80), align IoD {iod:.4} (>= 0.85), {:.1} s; IoD over seeds 0-4: {}",
            main.segment_mof,
            main.secs,
            spread.join(" ")
        ),
    )
}

fn ablation_direction(ab: &Ablation) -> Verdict {
    let scv = median(ab.scv.iter().map(|r| r.segment_mof).collect());
    let noreg = median(ab.noreg.clone());
    let stat = median(ab.stat.clone());
    verdict(
        scv >= noreg - 0.02 && scv >= stat - 0.02,
        format!("median MoF over {SEEDS} seeds: scv {scv:.4}, noreg {noreg:.4}, static {stat:.4}"),
    )
}

fn seg(pairs: &[(usize, usize)]) -> Segmentation {
    Segmentation::merged(pairs.iter().copied())
}

fn metrics_and_formats() -> Verdict {
    // truth  0 0 0 1 1 1 2 2
    // pred   0 0 1 1 1 2 2 0
    let truth = seg(&[(0, 3), (1, 3), (2, 2)]);
    let pred = seg(&[(0, 2), (1, 3), (2, 2), (0, 1)]);
    let (p, t) = (pred.to_labels(), truth.to_labels());
    let m = mof([("v", &p[..], &t[..])], Aggregation::Pooled)
        .unwrap()
        .aggregate;
    let i = iod([("v", &pred, &truth)], Aggregation::Pooled)
        .unwrap()
        .aggregate;
    let h = midpoint_hit([("v", &pred, &truth)], Aggregation::Pooled)
        .unwrap()
        .aggregate;
    // MoF: frames 0, 1, 3, 4, 6 agree.
    // IoD: class 0 best detection [0,2) gives 2/2, class 1 [2,5) gives 2/3,
    // class 2 [5,7) gives 1/2.
    // Midpoints 0, 3, 5, 7: hits on class 0 and class 1 only.
    let counts_ok = m == 5.0 / 8.0 && i == (1.0 + 2.0 / 3.0 + 0.5) / 3.0 && h == 2.0 / 4.0;

    let mut r = rng(11);
    let vocab = Vocabulary::new(["bg", "pour_milk", "take-cup"]).unwrap();
    let entries: Vec<(String, Segmentation)> = (0..5)
        .map(|k| {
            let labels: Vec<usize> = (0..r.random_range(1..40))
                .map(|_| r.random_range(0..3))
                .collect();
            (format!("clip{k}"), Segmentation::from_labels(&labels))
        })
        .collect();
    let text = format_predictions(&entries, &vocab).unwrap();
    let preds_ok = parse_predictions(Path::new("p.tsv"), &text, &vocab).unwrap() == entries;

    let x = Array2::from_shape_simple_fn((7, 13), || r.random_range(-1e3f32..1e3) as f64);
    let mut buf = Vec::new();
    write_features(&mut buf, &x).unwrap();
    let back = read_features(Path::new("x.fvec"), &buf[..]).unwrap();
    let features_ok = back.iter().zip(&x).all(|(a, b)| a.to_bits() == b.to_bits());

    let videos = entries
        .iter()
        .map(|(id, s)| Video {
            id: id.clone(),
            features: Array2::from_shape_simple_fn((4, s.total_len()), || {
                r.random_range(-4.0f32..4.0) as f64
            }),
            set: s.classes(),
            labels: Some(s.to_labels()),
        })
        .collect();
    let ds = Dataset {
        vocabulary: vocab,
        background: Some(0),
        videos,
    };
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let dataset_ok = load_dataset(dir.path()).unwrap() == ds;

    verdict(
        counts_ok && preds_ok && features_ok && dataset_ok,
        format!(
            "hand counts MoF {m:.4} IoD {i:.4} hit {h:.4} exact: {counts_ok}; round trips predictions {preds_ok}, features {features_ok}, dataset {dataset_ok}"
        ),
    )
}

fn complexity() -> Verdict {
    let training = common::scaling::training_growth();
    let inference = common::scaling::inference_growth();
    verdict(
        training <= 4.2 && inference <= 4.2,
        format!("cell updates at 2T: training {training:.3}x, inference {inference:.3}x"),
    )
}

fn main() -> ExitCode {
    // libtest-style probes such as `--list` expect no work.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut unexpected = 0;
    let mut report = |id: usize, name: &str, v: Verdict| {
        let status = match (v.pass, KNOWN_FAILURES.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known, see README)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("[{id}] {name}: {status}: {}", v.detail);
    };
    report(1, "viterbi exactness", viterbi_exactness());
    report(2, "scv constraint satisfaction", scv_constraints());
    report(3, "gradient correctness", gradients());
    report(4, "parameter estimators", estimators());
    report(5, "inference legality", inference_legality());
    let ablation = run_ablation();
    report(6, "synthetic end-to-end", end_to_end(&ablation));
    report(7, "ablation direction", ablation_direction(&ablation));
    report(8, "metrics and formats", metrics_and_formats());
    report(9, "complexity scaling", complexity());
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} unexpected failure(s)");
        ExitCode::FAILURE
    }
}
