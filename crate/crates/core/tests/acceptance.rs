//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use voxmargin::audio::{repeat_extend_crop, time_reverse};
use voxmargin::eval::{eer, min_dcf};
use voxmargin::features::{frame_count, Stft};
use voxmargin::losses::softmax_ce;
use voxmargin::nn::{shape_propagate, Checkpoint, EncoderConfig, LrSchedule};
use voxmargin::pipeline::gradcheck::{gradcheck_table, max_error};
use voxmargin::pipeline::sweep::{evaluate_checkpoint, run_sweep, sweep_csv, CellMetrics, SweepData};
use voxmargin::pipeline::*;
use voxmargin::{rng, ClassificationHead, DcfParams, FrameSpec, LossConfig, ScoreSet, Tensor, Waveform};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- 1

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for (loss, bound) in [
        (LossConfig::Softmax, 1e-6),
        (LossConfig::a_softmax(), 1e-4),
        (LossConfig::am_softmax(), 1e-4),
        (LossConfig::logistic_margin(), 1e-4),
    ] {
        let rows = gradcheck_table(&loss, 20, 20_240_601).map_err(|e| e.to_string())?;
        let err = max_error(&rows);
        ok &= rows.len() == 20 && err <= bound;
        parts.push(format!("{} {err:.2e} (<= {bound:.0e})", loss.name()));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(60);
    check(ok, format!("{}; {:.2}s", parts.join(", "), elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- 2

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

/// Gradient with respect to `v` of a function of `v/‖v‖`, given the gradient
/// `g` with respect to the normalized vector.
fn through_normalization(g: &[f64], v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    let u = unit(v);
    let gu: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
    g.iter().zip(&u).map(|(gi, ui)| (gi - gu * ui) / n).collect()
}

fn rows_of(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
}

fn normalize_rows(t: &Tensor<f64>) -> Tensor<f64> {
    let flat: Vec<f64> = rows_of(t).iter().flat_map(|r| unit(r)).collect();
    Tensor::from_f64(t.shape().to_vec(), &flat).unwrap()
}

fn chain_rows(g: &Tensor<f64>, v: &Tensor<f64>) -> Vec<f64> {
    rows_of(g)
        .iter()
        .zip(rows_of(v))
        .flat_map(|(gr, vr)| through_normalization(gr, &vr))
        .collect()
}

fn degenerate_equivalences() -> Outcome {
    const TOL: f64 = 1e-12;
    let mut worst = [0.0f64; 3];
    for trial in 0..50u64 {
        let mut r = rng::stream(77, &[trial]);
        let (b, c, d) = (r.random_range(1..=6), r.random_range(2..=10), r.random_range(2..=16));
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| r.random_range(-2.0..2.0)).collect() };
        let x = Tensor::from_f64(vec![b, d], &draw(b * d)).unwrap();
        let w = Tensor::from_f64(vec![c, d], &draw(c * d)).unwrap();
        let bias = Tensor::from_f64(vec![c], &draw(c)).unwrap();
        let labels: Vec<usize> = (0..b).map(|i| (i * 7 + trial as usize) % c).collect();
        let xhat = normalize_rows(&x);
        let what = normalize_rows(&w);
        let zero_bias = Tensor::<f64>::zeros(vec![c]);

        // additive margin with m = 0, s = 1: softmax over cosines
        let am = LossConfig::AMSoftmax { s: 1.0, m: 0.0 }
            .compute(&x, &labels, &ClassificationHead::new(w.clone(), None).unwrap(), 0)
            .unwrap();
        let reference =
            softmax_ce(&xhat, &labels, &ClassificationHead::new(what.clone(), Some(zero_bias.clone())).unwrap()).unwrap();
        let e0 = [
            max_rel_diff(&[am.loss], &[reference.loss]),
            max_rel_diff(&am.prob_true, &reference.prob_true),
            max_rel_diff(am.grad_embedding.data(), &chain_rows(&reference.grad_embedding, &x)),
            max_rel_diff(am.grad_weight.data(), &chain_rows(&reference.grad_weight, &w)),
        ];

        // logistic margin with alpha = 0: softmax over normalized embeddings
        let lm = LossConfig::LogisticMargin { alpha: 0.0 }
            .compute(&x, &labels, &ClassificationHead::new(w.clone(), Some(bias.clone())).unwrap(), 0)
            .unwrap();
        let reference =
            softmax_ce(&xhat, &labels, &ClassificationHead::new(w.clone(), Some(bias.clone())).unwrap()).unwrap();
        let e1 = [
            max_rel_diff(&[lm.loss], &[reference.loss]),
            max_rel_diff(&lm.prob_true, &reference.prob_true),
            max_rel_diff(lm.grad_embedding.data(), &chain_rows(&reference.grad_embedding, &x)),
            max_rel_diff(lm.grad_weight.data(), reference.grad_weight.data()),
            max_rel_diff(lm.grad_bias.as_ref().unwrap().data(), reference.grad_bias.as_ref().unwrap().data()),
        ];

        // angular margin with m = 1: softmax over ‖x‖cos θ, at several λ
        let a1 = LossConfig::ASoftmax {
            m: 1,
            lambda_base: 1000.0,
            lambda_min: 5.0,
            gamma: 0.015,
        };
        let reference =
            softmax_ce(&x, &labels, &ClassificationHead::new(what.clone(), Some(zero_bias.clone())).unwrap()).unwrap();
        let mut e2: Vec<f64> = Vec::new();
        for iter in [0, 100, 5000] {
            let out = a1.compute(&x, &labels, &ClassificationHead::new(w.clone(), None).unwrap(), iter).unwrap();
            e2.extend([
                max_rel_diff(&[out.loss], &[reference.loss]),
                max_rel_diff(&out.prob_true, &reference.prob_true),
                max_rel_diff(out.grad_embedding.data(), reference.grad_embedding.data()),
                max_rel_diff(out.grad_weight.data(), &chain_rows(&reference.grad_weight, &w)),
            ]);
        }
        for (slot, errs) in worst.iter_mut().zip([&e0[..], &e1[..], &e2[..]]) {
            *slot = errs.iter().copied().fold(*slot, f64::max);
        }
    }
    check(
        worst.iter().all(|&e| e <= TOL),
        format!(
            "am(m=0,s=1) {:.1e}, lm(alpha=0) {:.1e}, a-softmax(m=1) {:.1e} (<= 1e-12, loss/prob/grads, 50 instances)",
            worst[0], worst[1], worst[2]
        ),
    )
}

// ---------------------------------------------------------------- 3

fn feature_shape() -> Outcome {
    let spec = FrameSpec::default();
    let mut r = rng::stream(3, &[]);
    let samples: Vec<f32> = (0..48240).map(|_| r.random_range(-1.0f32..1.0)).collect();
    let s = Stft::new(spec).unwrap().amplitude(&samples).map_err(|e| e.to_string())?;
    let shape_ok = s.frames() == 300 && s.bins() == 257 && frame_count(48240, &spec).unwrap() == 300;

    // naive DFT of the Hamming-windowed, zero-padded frame
    let n_win = spec.win_len;
    let window: Vec<f64> = (0..n_win)
        .map(|k| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * k as f64 / (n_win - 1) as f64).cos())
        .collect();
    let mut worst: f64 = 0.0;
    for t in [0usize, 1, 57, 150, 299] {
        let frame: Vec<f64> = (0..n_win).map(|k| samples[t * spec.hop + k] as f64 * window[k]).collect();
        let oracle: Vec<f64> = (0..257)
            .map(|f| {
                let (mut re, mut im) = (0.0, 0.0);
                for (k, v) in frame.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (f * k) as f64 / spec.fft_size as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect();
        let row_max = oracle.iter().copied().fold(0.0, f64::max);
        for (a, b) in s.row(t).iter().zip(&oracle) {
            worst = worst.max((a - b).abs() / b.abs().max(1e-9 * row_max));
        }
    }
    check(
        shape_ok && worst <= 1e-6,
        format!("{}x{} from 48240 samples; naive DFT max rel err {worst:.1e} (<= 1e-6)", s.frames(), s.bins()),
    )
}

// ---------------------------------------------------------------- 4

fn table_shapes() -> Outcome {
    let cfg = EncoderConfig::resnet20(512, (300, 257)).map_err(|e| e.to_string())?;
    let shapes = shape_propagate(&cfg).map_err(|e| e.to_string())?;
    let mut seen: Vec<String> = Vec::new();
    for s in &shapes[1..] {
        let label = if s.is_vector() {
            s.numel().to_string()
        } else {
            format!("{}x{}", s.height, s.width)
        };
        if seen.last() != Some(&label) {
            seen.push(label);
        }
    }
    let expected = ["150x129", "75x65", "38x33", "19x17", "1x17", "512"];
    check(seen == expected, format!("stages {}", seen.join(" / ")))
}

// ---------------------------------------------------------------- 5

/// Exhaustive sweep: every threshold between adjacent distinct scores plus
/// both infinities, rates counted from scratch at each one.
fn brute_force(target: &[f64], nontarget: &[f64], p: &DcfParams) -> (f64, f64) {
    let mut all: Vec<f64> = target.iter().chain(nontarget).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(all.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    thresholds.push(f64::INFINITY);
    let rates: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&th| {
            let miss = target.iter().filter(|&&s| s < th).count() as f64 / target.len() as f64;
            let fa = nontarget.iter().filter(|&&s| s >= th).count() as f64 / nontarget.len() as f64;
            (miss, fa)
        })
        .collect();
    let dcf = rates.iter().map(|&(m, f)| p.cost(m, f)).fold(f64::INFINITY, f64::min);
    let k = rates.iter().position(|&(m, f)| m - f >= 0.0).unwrap();
    let (hm, hf) = rates[k];
    let eer = if hm - hf == 0.0 || k == 0 {
        hm
    } else {
        let (lm, lf) = rates[k - 1];
        let a = -(lm - lf) / ((hm - hf) - (lm - lf));
        lm + a * (hm - lm)
    };
    (eer, dcf)
}

fn metric_oracles() -> Outcome {
    let params = DcfParams::default();
    let (mut worst_eer, mut worst_dcf): (f64, f64) = (0.0, 0.0);
    for trial in 0..20u64 {
        let mut r = rng::stream(5, &[trial]);
        let n_target = r.random_range(50..=300);
        let shift: f64 = r.random_range(0.0..2.0);
        // coarse rounding on half the sets forces ties
        let q = if trial % 2 == 0 { 100.0 } else { 1e9 };
        let mut draw = |mu: f64| ((mu + r.random_range(-1.0..1.0) + r.random_range(-1.0..1.0)) * q).round() / q;
        let target: Vec<f64> = (0..n_target).map(|_| draw(shift)).collect();
        let nontarget: Vec<f64> = (n_target..1000).map(|_| draw(0.0)).collect();
        let set = ScoreSet::new(target.clone(), nontarget.clone());
        let (e, _) = eer(&set).map_err(|e| e.to_string())?;
        let (c, _) = min_dcf(&set, &params).map_err(|e| e.to_string())?;
        let (be, bc) = brute_force(&target, &nontarget, &params);
        worst_eer = worst_eer.max((e - be).abs());
        worst_dcf = worst_dcf.max((c - bc).abs());
    }
    let p1 = params.cost(1.0, 0.0);
    let p2 = params.cost(0.0, 1.0);
    check(
        worst_eer == 0.0 && worst_dcf <= 1e-9 && p1 == 0.01 && p2 == 0.99,
        format!(
            "20 sets of 1000 trials: eer diff {worst_eer:.1e} (exact), min dcf diff {worst_dcf:.1e} (<= 1e-9); C(1,0)={p1}, C(0,1)={p2}"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn augmentation_oracles() -> Outcome {
    let mut r = rng::stream(6, &[]);
    let mut failures = 0usize;
    for _ in 0..10_000 {
        let n = r.random_range(1..=400);
        let samples: Vec<f32> = (0..n).map(|_| r.random_range(-1.0f32..1.0)).collect();
        let w = Waveform::new(samples.clone(), 16000).unwrap();
        let offset = r.random_range(0..n);
        let length = r.random_range(1..=4 * n + 10);
        let crop = repeat_extend_crop(&w, offset, length).map_err(|e| e.to_string())?;
        let extend_ok =
            crop.len() == length && (0..length).all(|i| crop.samples()[i] == samples[(offset + i) % n]);
        let rev = time_reverse(&crop);
        let reverse_ok = (0..length).all(|i| rev.samples()[i] == crop.samples()[length - 1 - i])
            && time_reverse(&rev) == crop;
        if !(extend_ok && reverse_ok) {
            failures += 1;
        }
    }
    check(failures == 0, format!("{failures} failures in 10000 (offset, length) cases"))
}

// ---------------------------------------------------------------- 7

const TREND_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct SeedResult {
    none_top1: f64,
    both_top1: f64,
    softmax_eer: f64,
    am_eer: f64,
    lm_eer: f64,
}

fn trend_corpus(dir: &std::path::Path) -> voxmargin::Result<SynthCorpus> {
    let spec = SyntheticSpec {
        n_speakers: 20,
        heldout_speakers: 10,
        utts_per_speaker: 20,
        min_secs: 2.0,
        max_secs: 4.0,
        formant_jitter: 0.03,
        ..Default::default()
    };
    synth_data(&spec, dir, 2024)
}

fn eer_of(m: &CellMetrics) -> f64 {
    m.verification.map_or(f64::NAN, |v| v.eer)
}

fn toy_trends() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = trend_corpus(dir.path()).map_err(|e| e.to_string())?;
    let m = &corpus.manifest;
    let load = |s| Utterances::load(m, s, 16000).map_err(|e| e.to_string());
    let (train_set, val, test) = (load(Split::Train)?, load(Split::Val)?, load(Split::Test)?);
    let classes = m.classes().len();
    let data = SweepData {
        train: &train_set,
        val: &val,
        test: Some(&test),
        trials: &corpus.trials,
        classes,
    };
    let err = |e: voxmargin::Error| e.to_string();

    let mut results = Vec::new();
    let mut first_run = None;
    for &seed in &TREND_SEEDS {
        let mut both = RunConfig::desk().map_err(err)?;
        both.seed = seed;
        let none = sweep::AugmentStage::None.apply(&both);

        let start = Instant::now();
        let base = train(&both, &train_set, Some(&val), classes, &TrainOptions::default()).map_err(err)?;
        let elapsed = start.elapsed();
        let both_metrics = evaluate_checkpoint(&both, &base.checkpoint, &data, None).map_err(err)?;
        if first_run.is_none() {
            let on_train = SweepData { val: &train_set, test: None, ..data };
            let train_top1 = evaluate_checkpoint(&both, &base.checkpoint, &on_train, None).map_err(err)?.ident.top1;
            first_run = Some((train_top1, elapsed));
        }

        let plain = train(&none, &train_set, Some(&val), classes, &TrainOptions::default()).map_err(err)?;
        let none_metrics = evaluate_checkpoint(&none, &plain.checkpoint, &data, None).map_err(err)?;

        let mut margin_eer = Vec::new();
        for loss in [LossConfig::am_softmax(), LossConfig::logistic_margin()] {
            let mut cfg = both.clone();
            cfg.loss = loss;
            let opts = TrainOptions {
                warm_start: Some(base.checkpoint.clone()),
                ..Default::default()
            };
            let tuned = train(&cfg, &train_set, Some(&val), classes, &opts).map_err(err)?;
            margin_eer.push(eer_of(&evaluate_checkpoint(&cfg, &tuned.checkpoint, &data, None).map_err(err)?));
        }
        let res = SeedResult {
            none_top1: none_metrics.ident.top1,
            both_top1: both_metrics.ident.top1,
            softmax_eer: eer_of(&both_metrics),
            am_eer: margin_eer[0],
            lm_eer: margin_eer[1],
        };
        println!(
            "  seed {seed}: top1 none {:.4} both {:.4}; eer softmax {:.4} am {:.4} lm {:.4}",
            res.none_top1, res.both_top1, res.softmax_eer, res.am_eer, res.lm_eer
        );
        results.push(res);
    }

    let (train_top1, elapsed) = first_run.unwrap();
    let a = train_top1 >= 0.95 && elapsed < Duration::from_secs(300);
    let b_wins = results.iter().filter(|r| r.both_top1 >= r.none_top1).count();
    let c_wins = results
        .iter()
        .filter(|r| r.am_eer <= r.softmax_eer && r.lm_eer <= r.softmax_eer)
        .count();
    check(
        a && b_wins >= 4 && c_wins >= 4,
        format!(
            "(a) train top1 {:.4} in {:.1}s; (b) both >= none in {b_wins}/5; (c) am and lm eer <= softmax in {c_wins}/5",
            train_top1,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 8

fn determinism() -> Outcome {
    let err = |e: voxmargin::Error| e.to_string();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SyntheticSpec {
        n_speakers: 4,
        heldout_speakers: 2,
        utts_per_speaker: 4,
        min_secs: 0.5,
        max_secs: 1.0,
        ..Default::default()
    };
    let corpus = synth_data(&spec, dir.path(), 8).map_err(err)?;
    let m = &corpus.manifest;
    let load = |s| Utterances::load(m, s, 16000).map_err(|e| e.to_string());
    let (train_set, val, test) = (load(Split::Train)?, load(Split::Val)?, load(Split::Test)?);
    let mut cfg = RunConfig::desk().map_err(err)?.with_dropout(0.2).map_err(err)?;
    cfg.seed = 99;
    cfg.batch_size = 4;
    cfg.eval.n_crops = 3;
    cfg.schedule = LrSchedule::new(0.01, 0.5, 2, 5).map_err(err)?;
    let data = SweepData {
        train: &train_set,
        val: &val,
        test: Some(&test),
        trials: &corpus.trials,
        classes: m.classes().len(),
    };

    let run = |tag: &str| -> Result<(Vec<u8>, Vec<u8>, String), String> {
        let ckpt: Checkpoint = train(&cfg, &train_set, Some(&val), data.classes, &TrainOptions::default())
            .map_err(err)?
            .checkpoint;
        let encoder = ckpt.encoder().map_err(err)?;
        let stft = Stft::new(cfg.features).map_err(err)?;
        let store = embed_utterances(&encoder, &ckpt.params, &stft, &test, 3, &cfg.test_policy(), cfg.seed)
            .map_err(err)?;
        let path = dir.path().join(format!("store_{tag}.bin"));
        store.save(&path).map_err(err)?;
        let mut store_bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        store_bytes.extend(std::fs::read(EmbeddingStore::ids_path(&path)).map_err(|e| e.to_string())?);
        let axis = SweepAxis::Dim(vec![8, 16]);
        let rows = run_sweep(&cfg, &axis, &data, &SweepOptions::default()).map_err(err)?;
        Ok((ckpt.to_bytes().map_err(err)?, store_bytes, sweep_csv(&axis, &rows)))
    };
    let first = run("a")?;
    let second = run("b")?;
    check(
        first.0 == second.0 && first.1 == second.1 && first.2 == second.2,
        format!(
            "checkpoint {} bytes equal: {}; embedding store equal: {}; sweep csv equal: {}",
            first.0.len(),
            first.0 == second.0,
            first.1 == second.1,
            first.2 == second.2
        ),
    )
}

fn main() -> ExitCode {
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("loss gradients vs central differences", gradient_suite),
        ("degenerate loss equivalences", degenerate_equivalences),
        ("feature shape and DFT oracle", feature_shape),
        ("resnet-20 shape propagation", table_shapes),
        ("EER / min DCF oracles", metric_oracles),
        ("augmentation oracles", augmentation_oracles),
        ("toy end-to-end trends", toy_trends),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|n| n != i + 1) {
            continue;
        }
        let outcome = f();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {} {tag}: {name}: {detail}", i + 1);
        failed += outcome.is_err() as usize;
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
