use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use voxmargin::nn::LrSchedule;
use voxmargin::pipeline::RunConfig;

fn voxmargin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxmargin"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = voxmargin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default().to_string();
    assert!(line.starts_with("error kind="), "not machine readable: {stderr}");
    line
}

fn value<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from {stdout}"))
}

fn tiny_config(path: &Path) {
    let mut cfg = RunConfig::desk().unwrap();
    cfg.batch_size = 4;
    cfg.eval.n_crops = 2;
    cfg.schedule = LrSchedule::new(0.01, 0.5, 2, 4).unwrap();
    cfg.warm_start.finetune = Some(LrSchedule::new(0.005, 0.5, 1, 4).unwrap());
    cfg.save(path).unwrap();
}

fn corpus(dir: &Path) -> String {
    let data = dir.join("data");
    ok(&[
        "synth-data",
        "--out",
        data.to_str().unwrap(),
        "--seed",
        "3",
        "--speakers",
        "4",
        "--heldout",
        "2",
        "--utts",
        "4",
        "--min-secs",
        "0.6",
        "--max-secs",
        "1.0",
    ]);
    data.to_str().unwrap().to_string()
}

#[test]
fn synth_train_embed_score_ident() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path());
    let manifest = format!("{data}/manifest.csv");
    let config = dir.path().join("tiny.toml");
    tiny_config(&config);
    let config = config.to_str().unwrap();
    let run = dir.path().join("run");
    let run = run.to_str().unwrap();

    let log = ok(&["train", "--config", config, "--manifest", &manifest, "--out", run, "--seed", "5"]);
    assert!(log.contains("iteration 8"), "{log}");
    let ckpt = format!("{run}/checkpoint.ckpt");
    let train_log = fs::read_to_string(format!("{run}/train_log.csv")).unwrap();
    assert_eq!(train_log.lines().count(), 3);
    let saved = RunConfig::load(format!("{run}/config.toml")).unwrap();
    assert_eq!(saved.seed, 5);

    let store = format!("{run}/test.emb");
    ok(&["embed", "--checkpoint", &ckpt, "--manifest", &manifest, "--out", &store]);
    assert!(Path::new(&format!("{store}.ids")).exists());

    let scores = format!("{run}/scores.txt");
    let report = ok(&["score-trials", "--store", &store, "--trials", &format!("{data}/trials.txt"), "--out", &scores]);
    let eer: f64 = value(&report, "eer").parse().unwrap();
    assert!((0.0..=1.0).contains(&eer));
    // 2 held-out speakers x 4 utterances: 28 pairs, 12 of them same-speaker
    assert_eq!(value(&report, "trials_target"), "12");
    assert_eq!(value(&report, "trials_nontarget"), "16");
    assert_eq!(fs::read_to_string(&scores).unwrap().lines().count(), 28);

    let ident = ok(&["evaluate-ident", "--checkpoint", &ckpt, "--manifest", &manifest]);
    assert_eq!(value(&ident, "utterances"), "4");
    let top1: f64 = value(&ident, "top1").parse().unwrap();
    assert!((0.0..=1.0).contains(&top1));
    assert!(!ident.contains("top5"), "top-5 needs at least five classes");

    // warm-started additive margin run from the softmax checkpoint
    let am_cfg = dir.path().join("am.toml");
    let mut cfg = RunConfig::load(config).unwrap();
    cfg.loss = voxmargin::LossConfig::am_softmax();
    cfg.save(&am_cfg).unwrap();
    let am_run = dir.path().join("am");
    let log = ok(&[
        "train",
        "--config",
        am_cfg.to_str().unwrap(),
        "--manifest",
        &manifest,
        "--out",
        am_run.to_str().unwrap(),
        "--warm-start",
        &ckpt,
    ]);
    assert!(log.contains("iteration 4"), "{log}");
}

#[test]
fn resume_matches_unbroken_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path());
    let manifest = format!("{data}/manifest.csv");
    let config = dir.path().join("tiny.toml");
    tiny_config(&config);
    let config = config.to_str().unwrap();
    let full = dir.path().join("full");
    let part = dir.path().join("part");
    ok(&["train", "--config", config, "--manifest", &manifest, "--out", full.to_str().unwrap()]);
    ok(&["train", "--config", config, "--manifest", &manifest, "--out", part.to_str().unwrap(), "--stop-at", "3"]);
    let partial = part.join("checkpoint.ckpt");
    ok(&[
        "train",
        "--config",
        config,
        "--manifest",
        &manifest,
        "--out",
        part.to_str().unwrap(),
        "--resume",
        partial.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read(full.join("checkpoint.ckpt")).unwrap(),
        fs::read(part.join("checkpoint.ckpt")).unwrap()
    );
}

#[test]
fn features_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path());
    let manifest = format!("{data}/manifest.csv");
    let feats = dir.path().join("feats");
    let out = ok(&["extract-features", "--manifest", &manifest, "--out", feats.to_str().unwrap()]);
    assert!(out.contains("wrote 24 feature files"), "{out}");
    let (rows, cols, _) =
        voxmargin::features::read_matrix(feats.join("wav/spk00/utt00.wav.feat")).unwrap();
    assert_eq!(cols, 257);
    assert!(rows >= 58);

    let config = dir.path().join("tiny.toml");
    tiny_config(&config);
    let sweep = dir.path().join("sweep");
    let table = ok(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--manifest",
        &manifest,
        "--trials",
        &format!("{data}/trials.txt"),
        "--axis",
        "augment",
        "--out",
        sweep.to_str().unwrap(),
    ]);
    for row in ["None", "Testing", "Training", "Both"] {
        assert!(table.contains(row), "{table}");
    }
    let csv = fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "axis,value,top1,top5,eer,min_dcf,error");
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn gradcheck_reports_table() {
    let out = ok(&["gradcheck", "--loss", "am-softmax", "--trials", "5", "--seed", "1"]);
    assert!(out.contains("am-softmax: max"), "{out}");
    assert_eq!(out.lines().count(), 7);
}

#[test]
fn failures_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = voxmargin(&["train", "--manifest", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(error_line(&out).starts_with("error kind=missing-file message="));

    let out = voxmargin(&["gradcheck", "--loss", "hinge"]);
    assert!(error_line(&out).starts_with("error kind=config"), "{}", error_line(&out));

    let out = voxmargin(&["embed", "--bogus"]);
    assert!(error_line(&out).starts_with("error kind=usage"));

    // margin loss without a warm start is refused unless explicitly allowed
    let data = corpus(dir.path());
    let cfg_path = dir.path().join("lm.toml");
    tiny_config(&cfg_path);
    let mut cfg = RunConfig::load(&cfg_path).unwrap();
    cfg.loss = voxmargin::LossConfig::logistic_margin();
    cfg.save(&cfg_path).unwrap();
    let out = voxmargin(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--manifest",
        &format!("{data}/manifest.csv"),
        "--out",
        dir.path().join("lm").to_str().unwrap(),
    ]);
    assert!(error_line(&out).starts_with("error kind=config"));
}
