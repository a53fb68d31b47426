//! Synthetic speakers: each speaker owns three "formant" frequencies and
//! every utterance is a sum of those sinusoids with random phases and
//! time-varying random amplitudes plus white noise.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestRecord, Split};
use super::score::write_trials;
use crate::audio::{write_wav, Waveform};
use crate::error::{Error, Result};
use crate::eval::{TrialLabel, TrialPair};
use crate::rng::{self, domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Speakers split between train and val.
    pub n_speakers: usize,
    /// Additional unseen speakers forming the test split.
    pub heldout_speakers: usize,
    pub utts_per_speaker: usize,
    pub min_secs: f64,
    pub max_secs: f64,
    /// Formants are drawn uniformly from this band (Hz).
    pub formant_band: (f64, f64),
    /// Standard deviation of the additive white noise.
    pub noise: f64,
    /// Relative standard deviation of a per-utterance shift of each formant.
    #[serde(default)]
    pub formant_jitter: f64,
    /// Fraction of each training speaker's utterances held out for validation.
    pub val_fraction: f64,
    pub sample_rate: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_speakers: 20,
            heldout_speakers: 0,
            utts_per_speaker: 20,
            min_secs: 4.0,
            max_secs: 4.0,
            formant_band: (150.0, 3800.0),
            noise: 0.05,
            formant_jitter: 0.0,
            val_fraction: 0.2,
            sample_rate: 16000,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as f64 / 2.0;
        let (lo, hi) = self.formant_band;
        if self.n_speakers < 2 {
            return Err(Error::Config("n_speakers must be >= 2".into()));
        }
        if self.utts_per_speaker == 0 {
            return Err(Error::Config("utts_per_speaker must be positive".into()));
        }
        if !(lo > 0.0 && lo < hi && hi < nyquist) {
            return Err(Error::Config(format!(
                "formant band ({lo}, {hi}) must lie inside (0, {nyquist})"
            )));
        }
        if !(self.min_secs > 0.0 && self.min_secs <= self.max_secs) {
            return Err(Error::Config("need 0 < min_secs <= max_secs".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("noise must be >= 0".into()));
        }
        if !(0.0..0.5).contains(&self.formant_jitter) {
            return Err(Error::Config("formant_jitter must lie in [0, 0.5)".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn n_val(&self) -> usize {
        (self.utts_per_speaker as f64 * self.val_fraction).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub manifest: Manifest,
    /// Formant tuple per speaker, training speakers first.
    pub formants: Vec<[f64; 3]>,
    pub trials: Vec<TrialPair>,
}

pub fn speaker_formants(spec: &SyntheticSpec, seed: u64, speaker: usize) -> [f64; 3] {
    let mut r = rng::stream(seed, &[domain::SYNTH, 0, speaker as u64]);
    let (lo, hi) = spec.formant_band;
    let mut f = [0.0; 3];
    for v in &mut f {
        *v = r.random_range(lo..hi);
    }
    f
}

fn jittered(spec: &SyntheticSpec, formants: &[f64; 3], seed: u64, speaker: usize, utt: usize) -> Result<[f64; 3]> {
    if spec.formant_jitter == 0.0 {
        return Ok(*formants);
    }
    let mut r = rng::stream(seed, &[domain::SYNTH, 2, speaker as u64, utt as u64]);
    let shift = Normal::new(0.0, spec.formant_jitter).map_err(|e| Error::Config(e.to_string()))?;
    let nyquist = spec.sample_rate as f64 / 2.0;
    Ok(formants.map(|f| (f * (1.0 + shift.sample(&mut r))).clamp(20.0, nyquist - 20.0)))
}

/// One utterance of a speaker with the given formants.
///
/// Each formant's amplitude is held for "syllables" of 80 to 250 ms and redrawn
/// per syllable (zero with probability 0.3, otherwise uniform in [0.3, 1]),
/// with a 5 ms linear glide between syllables. Per-bin normalization removes
/// anything stationary, so identity has to live in this temporal structure.
pub fn synth_utterance(spec: &SyntheticSpec, formants: &[f64; 3], seed: u64, speaker: usize, utt: usize) -> Result<Waveform> {
    let mut r = rng::stream(seed, &[domain::SYNTH, 1, speaker as u64, utt as u64]);
    let formants = jittered(spec, formants, seed, speaker, utt)?;
    let secs = if spec.max_secs > spec.min_secs {
        r.random_range(spec.min_secs..=spec.max_secs)
    } else {
        spec.min_secs
    };
    let rate = spec.sample_rate as f64;
    let n = ((secs * rate).round() as usize).max(1);
    let phases: Vec<f64> = formants.iter().map(|_| r.random_range(0.0..TAU)).collect();
    let glide = ((0.005 * rate) as usize).max(1);
    let mut env = vec![[0.0f64; 3]; n];
    let mut prev = [0.0f64; 3];
    let mut start = 0;
    while start < n {
        let len = ((r.random_range(0.08..0.25) * rate) as usize).max(1);
        let mut amp = [0.0; 3];
        for a in &mut amp {
            *a = if r.random_bool(0.3) { 0.0 } else { r.random_range(0.3..1.0) };
        }
        for (k, e) in env[start..(start + len).min(n)].iter_mut().enumerate() {
            let t = (k as f64 / glide as f64).min(1.0);
            for j in 0..3 {
                e[j] = prev[j] + t * (amp[j] - prev[j]);
            }
        }
        prev = amp;
        start += len;
    }
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let tone: f64 = (0..3)
                .map(|j| env[i][j] * (TAU * formants[j] * t + phases[j]).sin())
                .sum();
            (0.25 * tone + noise.sample(&mut r)) as f32
        })
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

/// Writes `wav/spkNN/uttNN.wav`, `manifest.csv` and, when there are held-out
/// speakers, `trials.txt` pairing every two test utterances.
pub fn synth_data(spec: &SyntheticSpec, out_dir: impl AsRef<Path>, seed: u64) -> Result<SynthCorpus> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let total = spec.n_speakers + spec.heldout_speakers;
    let mut records = Vec::with_capacity(total * spec.utts_per_speaker);
    let mut formants = Vec::with_capacity(total);
    let n_val = spec.n_val();
    for s in 0..total {
        let f = speaker_formants(spec, seed, s);
        formants.push(f);
        let speaker = format!("spk{s:02}");
        let dir = out_dir.join("wav").join(&speaker);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for u in 0..spec.utts_per_speaker {
            let w = synth_utterance(spec, &f, seed, s, u)?;
            let name = format!("utt{u:02}.wav");
            write_wav(dir.join(&name), &w)?;
            let split = if s >= spec.n_speakers {
                Split::Test
            } else if u >= spec.utts_per_speaker - n_val {
                Split::Val
            } else {
                Split::Train
            };
            records.push(ManifestRecord {
                path: format!("wav/{speaker}/{name}"),
                speaker: speaker.clone(),
                split,
            });
        }
    }
    let manifest = Manifest::new(records, out_dir)?;
    manifest.write(out_dir.join("manifest.csv"))?;
    let trials = all_pairs(&manifest, Split::Test);
    if !trials.is_empty() {
        write_trials(out_dir.join("trials.txt"), &trials)?;
    }
    Ok(SynthCorpus {
        manifest,
        formants,
        trials,
    })
}

/// Every unordered pair of utterances in `split`.
pub fn all_pairs(manifest: &Manifest, split: Split) -> Vec<TrialPair> {
    let recs: Vec<&ManifestRecord> = manifest.split(split).collect();
    let mut out = Vec::new();
    for (i, a) in recs.iter().enumerate() {
        for b in &recs[i + 1..] {
            out.push(TrialPair {
                label: if a.speaker == b.speaker {
                    TrialLabel::Target
                } else {
                    TrialLabel::Nontarget
                },
                enroll_id: a.path.clone(),
                test_id: b.path.clone(),
            });
        }
    }
    out
}
