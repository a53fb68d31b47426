//! Verification trials: list parsing, cosine scoring and the EER / minimum
//! detection cost report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::eval::{cosine_score, eer, min_dcf, DcfParams, ScoreSet, TrialLabel, TrialPair};

/// Parses `<1|0> <enroll> <test>` lines; blank lines are skipped.
pub fn parse_trials(text: &str) -> Result<Vec<TrialPair>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [label, enroll, test] = fields[..] else {
            return Err(Error::Parse(format!(
                "trial line {}: expected 3 fields, got {}",
                n + 1,
                fields.len()
            )));
        };
        let label = match label {
            "1" => TrialLabel::Target,
            "0" => TrialLabel::Nontarget,
            other => {
                return Err(Error::Parse(format!(
                    "trial line {}: label must be 1 or 0, got {other:?}",
                    n + 1
                )))
            }
        };
        out.push(TrialPair {
            label,
            enroll_id: enroll.to_string(),
            test_id: test.to_string(),
        });
    }
    Ok(out)
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<TrialPair>> {
    let path = path.as_ref();
    parse_trials(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_trials(path: impl AsRef<Path>, trials: &[TrialPair]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for t in trials {
        let label = if t.label == TrialLabel::Target { 1 } else { 0 };
        writeln!(text, "{label} {} {}", t.enroll_id, t.test_id).unwrap();
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub n_target: usize,
    pub n_nontarget: usize,
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub dcf_threshold: f64,
}

impl VerificationReport {
    pub fn from_scores(scores: &ScoreSet, dcf: &DcfParams) -> Result<Self> {
        let (e, et) = eer(scores)?;
        let (c, ct) = min_dcf(scores, dcf)?;
        Ok(Self {
            n_target: scores.target.len(),
            n_nontarget: scores.nontarget.len(),
            eer: e,
            eer_threshold: et,
            min_dcf: c,
            dcf_threshold: ct,
        })
    }
}

/// Cosine score per trial, in trial order.
pub fn score_trials(store: &EmbeddingStore, trials: &[TrialPair]) -> Result<Vec<f64>> {
    trials
        .iter()
        .map(|t| cosine_score(store.get(&t.enroll_id)?, store.get(&t.test_id)?))
        .collect()
}

pub fn score_set(trials: &[TrialPair], scores: &[f64]) -> ScoreSet {
    let labeled: Vec<(f64, TrialLabel)> = scores.iter().zip(trials).map(|(&s, t)| (s, t.label)).collect();
    ScoreSet::from_labeled(&labeled)
}

/// Scores every trial and summarizes EER and minimum detection cost.
pub fn verify(store: &EmbeddingStore, trials: &[TrialPair], dcf: &DcfParams) -> Result<(Vec<f64>, VerificationReport)> {
    let scores = score_trials(store, trials)?;
    let report = VerificationReport::from_scores(&score_set(trials, &scores), dcf)?;
    Ok((scores, report))
}

/// `<enroll> <test> <score>` per line.
pub fn write_scores(path: impl AsRef<Path>, trials: &[TrialPair], scores: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for (t, s) in trials.iter().zip(scores) {
        writeln!(text, "{} {} {s:.9}", t.enroll_id, t.test_id).unwrap();
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::seq::SliceRandom;
    use rand::Rng;

    #[test]
    fn parse_round_trip() {
        let text = "1 a.wav b.wav\n\n0 a.wav c.wav\n";
        let trials = parse_trials(text).unwrap();
        assert_eq!(trials.len(), 2);
        assert_eq!(trials[1].label, TrialLabel::Nontarget);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        write_trials(&p, &trials).unwrap();
        assert_eq!(read_trials(&p).unwrap(), trials);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_trials("1 a"), Err(Error::Parse(_))));
        assert!(matches!(parse_trials("2 a b"), Err(Error::Parse(_))));
    }

    fn random_store(n: usize, seed: u64) -> EmbeddingStore {
        let mut r = rng::stream(seed, &[]);
        let ids = (0..n).map(|i| format!("u{i}")).collect();
        let values = (0..n * 8).map(|_| r.random_range(-1.0..1.0)).collect();
        EmbeddingStore::new(ids, 8, values).unwrap()
    }

    #[test]
    fn self_trials_give_zero_eer() {
        let store = random_store(40, 1);
        let mut trials = Vec::new();
        for i in 0..40 {
            trials.push(TrialPair {
                label: TrialLabel::Target,
                enroll_id: format!("u{i}"),
                test_id: format!("u{i}"),
            });
            trials.push(TrialPair {
                label: TrialLabel::Nontarget,
                enroll_id: format!("u{i}"),
                test_id: format!("u{}", (i + 1) % 40),
            });
        }
        let (_, report) = verify(&store, &trials, &DcfParams::default()).unwrap();
        assert_eq!(report.eer, 0.0);
        assert_eq!(report.min_dcf, 0.0);
    }

    #[test]
    fn shuffled_labels_give_chance_eer() {
        let store = random_store(60, 2);
        let mut r = rng::stream(3, &[]);
        let mut trials = Vec::new();
        for i in 0..60 {
            for j in i + 1..60 {
                trials.push(TrialPair {
                    label: TrialLabel::Nontarget,
                    enroll_id: format!("u{i}"),
                    test_id: format!("u{j}"),
                });
            }
        }
        let mut labels: Vec<bool> = (0..trials.len()).map(|k| k % 2 == 0).collect();
        labels.shuffle(&mut r);
        for (t, &l) in trials.iter_mut().zip(&labels) {
            if l {
                t.label = TrialLabel::Target;
            }
        }
        assert!(trials.len() >= 500);
        let (_, report) = verify(&store, &trials, &DcfParams::default()).unwrap();
        assert!((report.eer - 0.5).abs() <= 0.05, "eer {}", report.eer);
    }

    #[test]
    fn report_matches_direct_metric_calls() {
        let store = random_store(20, 4);
        let trials: Vec<TrialPair> = (0..19)
            .map(|i| TrialPair {
                label: if i % 3 == 0 { TrialLabel::Target } else { TrialLabel::Nontarget },
                enroll_id: format!("u{i}"),
                test_id: format!("u{}", i + 1),
            })
            .collect();
        let (scores, report) = verify(&store, &trials, &DcfParams::default()).unwrap();
        let set = score_set(&trials, &scores);
        assert_eq!((report.eer, report.eer_threshold), eer(&set).unwrap());
        assert_eq!((report.min_dcf, report.dcf_threshold), min_dcf(&set, &DcfParams::default()).unwrap());
    }

    #[test]
    fn unknown_id_is_reported() {
        let store = random_store(2, 5);
        let trials = parse_trials("1 u0 missing").unwrap();
        assert!(matches!(score_trials(&store, &trials), Err(Error::UnknownId(_))));
    }
}
