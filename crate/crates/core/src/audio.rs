//! Waveforms, 16-bit PCM WAV I/O and crop augmentation.
//!
//! Training crops extend the utterance by repeating it, so a crop can start
//! anywhere, and are time-reversed at random.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;
const PCM_SCALE: f32 = 32768.0;

/// Mono signal with amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyAudio);
        }
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Crop length and augmentation switches for one stage (training or testing).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentPolicy {
    pub crop_len: usize,
    pub reverse_prob: f64,
    pub enabled: bool,
}

impl AugmentPolicy {
    pub fn new(crop_len: usize, reverse_prob: f64, enabled: bool) -> Result<Self> {
        let policy = Self {
            crop_len,
            reverse_prob,
            enabled,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_len == 0 {
            return Err(Error::InvalidArgument("crop_len must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.reverse_prob) {
            return Err(Error::InvalidArgument(format!(
                "reverse_prob {} outside [0, 1]",
                self.reverse_prob
            )));
        }
        Ok(())
    }

    pub fn with_enabled(mut self, enabled: bool) -> Self {
        self.enabled = enabled;
        self
    }
}

/// Reads a 16-bit PCM RIFF/WAVE file. Multi-channel audio is averaged to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes)
}

/// Like [`load_wav`], but rejects files whose rate differs from `expected_rate`.
pub fn load_wav_at(path: impl AsRef<Path>, expected_rate: u32) -> Result<Waveform> {
    let w = load_wav(path)?;
    if w.sample_rate != expected_rate {
        return Err(Error::SampleRateMismatch {
            expected: expected_rate,
            actual: w.sample_rate,
        });
    }
    Ok(w)
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 {
        return Err(Error::InvalidWav("file too small".into()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(Error::InvalidWav("missing RIFF header".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::InvalidWav("missing WAVE marker".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.saturating_add(size).min(bytes.len());
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::InvalidWav("fmt chunk truncated".into()));
                }
                let mut format = u16_at(body, 0);
                let channels = u16_at(body, 2);
                let rate = u32_at(body, 4);
                let bits = u16_at(body, 14);
                if format == WAVE_FORMAT_EXTENSIBLE && body.len() >= 26 {
                    // first two bytes of the sub-format GUID carry the real format code
                    format = u16_at(body, 24);
                }
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => {
                data = Some(body);
                break;
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_start + size + (size & 1);
    }

    let (format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| Error::InvalidWav("no fmt chunk".into()))?;
    if format != WAVE_FORMAT_PCM || bits != 16 {
        return Err(Error::NonPcm { format, bits });
    }
    if channels == 0 {
        return Err(Error::InvalidWav("zero channels".into()));
    }
    if sample_rate == 0 {
        return Err(Error::InvalidWav("zero sample rate".into()));
    }
    let data = data.ok_or_else(|| Error::InvalidWav("no data chunk".into()))?;

    let channels = channels as usize;
    let frame_bytes = 2 * channels;
    let n_frames = data.len() / frame_bytes;
    if n_frames == 0 {
        return Err(Error::EmptyAudio);
    }
    let samples = data[..n_frames * frame_bytes]
        .chunks_exact(frame_bytes)
        .map(|frame| {
            let sum: f32 = frame
                .chunks_exact(2)
                .map(|s| i16::from_le_bytes([s[0], s[1]]) as f32 / PCM_SCALE)
                .sum();
            sum / channels as f32
        })
        .collect();
    Waveform::new(samples, sample_rate)
}

/// Encodes interleaved 16-bit PCM; samples outside [-1, 1) are clipped.
pub fn encode_wav(samples: &[f32], sample_rate: u32, channels: u16) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    let block_align = channels as u32 * 2;
    out.extend_from_slice(&(sample_rate * block_align).to_le_bytes());
    out.extend_from_slice(&(block_align as u16).to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        out.extend_from_slice(&to_pcm16(s).to_le_bytes());
    }
    out
}

pub fn to_pcm16(s: f32) -> i16 {
    (s * PCM_SCALE).round().clamp(i16::MIN as f32, i16::MAX as f32) as i16
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(&w.samples, w.sample_rate, 1)).map_err(|e| Error::io(path, e))
}

/// `out[i] = w[(offset + i) mod len(w)]` for `i < length`.
pub fn repeat_extend_crop(w: &Waveform, offset: usize, length: usize) -> Result<Waveform> {
    let n = w.len();
    if offset >= n {
        return Err(Error::InvalidArgument(format!(
            "crop offset {offset} out of range for {n} samples"
        )));
    }
    if length == 0 {
        return Err(Error::InvalidArgument("crop length must be >= 1".into()));
    }
    let samples = w.samples[offset..]
        .iter()
        .chain(w.samples.iter().cycle())
        .take(length)
        .copied()
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: w.sample_rate,
    })
}

pub fn time_reverse(w: &Waveform) -> Waveform {
    Waveform {
        samples: w.samples.iter().rev().copied().collect(),
        sample_rate: w.sample_rate,
    }
}

/// Plain crop starting at `offset`, zero-padded at the end when the signal
/// runs out.
pub fn plain_crop(w: &Waveform, offset: usize, length: usize) -> Waveform {
    let mut samples: Vec<f32> = w.samples.iter().skip(offset).take(length).copied().collect();
    samples.resize(length, 0.0);
    Waveform {
        samples,
        sample_rate: w.sample_rate,
    }
}

/// Draws one fixed-length crop.
///
/// Augmented: uniform start over the whole utterance, repeat-extended, then
/// reversed with probability `reverse_prob`. Plain: uniform start among the
/// offsets that fit the crop (0 for short signals, which get zero padding).
pub fn sample_training_crop<R: Rng + ?Sized>(
    w: &Waveform,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<Waveform> {
    policy.validate()?;
    let n = w.len();
    if policy.enabled {
        let offset = rng.random_range(0..n);
        let crop = repeat_extend_crop(w, offset, policy.crop_len)?;
        if rng.random_bool(policy.reverse_prob) {
            Ok(time_reverse(&crop))
        } else {
            Ok(crop)
        }
    } else {
        let last = n.saturating_sub(policy.crop_len);
        let offset = rng.random_range(0..=last);
        Ok(plain_crop(w, offset, policy.crop_len))
    }
}
