//! Amplitude spectrograms: Hamming-windowed frames, zero-padded FFT,
//! magnitudes of bins 0..=fft_size/2, then per-bin standardization.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Variance guard for per-bin normalization.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FrameSpec {
    pub win_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub sample_rate: u32,
}

impl Default for FrameSpec {
    /// 25 ms window, 10 ms hop, 512-point FFT at 16 kHz.
    fn default() -> Self {
        Self {
            win_len: 400,
            hop: 160,
            fft_size: 512,
            sample_rate: 16000,
        }
    }
}

impl FrameSpec {
    pub fn from_millis(win_ms: f64, hop_ms: f64, fft_size: usize, sample_rate: u32) -> Result<Self> {
        let to_samples = |ms: f64| (ms * sample_rate as f64 / 1000.0).round() as usize;
        let spec = Self {
            win_len: to_samples(win_ms),
            hop: to_samples(hop_ms),
            fft_size,
            sample_rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.win_len == 0 || self.hop == 0 {
            return Err(Error::InvalidArgument("window and hop must be >= 1 sample".into()));
        }
        if self.win_len > self.fft_size {
            return Err(Error::InvalidArgument(format!(
                "window {} longer than fft size {}",
                self.win_len, self.fft_size
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Smallest signal length producing `frames` frames.
    pub fn samples_for_frames(&self, frames: usize) -> usize {
        (frames.max(1) - 1) * self.hop + self.win_len
    }
}

/// Classic symmetric Hamming window, `0.54 - 0.46 cos(2πk/(n-1))`.
pub fn hamming_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("hamming window needs n >= 2, got {n}")));
    }
    let denom = (n - 1) as f64;
    Ok((0..n)
        .map(|k| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * k as f64 / denom).cos())
        .collect())
}

pub fn frame_count(signal_len: usize, spec: &FrameSpec) -> Result<usize> {
    spec.validate()?;
    if signal_len < spec.win_len {
        return Err(Error::InvalidArgument(format!(
            "signal of {signal_len} samples shorter than one {}-sample window",
            spec.win_len
        )));
    }
    Ok((signal_len - spec.win_len) / spec.hop + 1)
}

/// Row-major `frames × bins` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    values: Vec<f64>,
    frames: usize,
    bins: usize,
}

impl Spectrogram {
    pub fn from_values(values: Vec<f64>, frames: usize, bins: usize) -> Result<Self> {
        if values.len() != frames * bins {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {frames}x{bins} spectrogram",
                values.len()
            )));
        }
        Ok(Self {
            values,
            frames,
            bins,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.bins..(t + 1) * self.bins]
    }

    pub fn at(&self, t: usize, f: usize) -> f64 {
        self.values[t * self.bins + f]
    }
}

/// Spectrogram with zero-mean, unit-variance frequency columns.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSpectrogram(Spectrogram);

impl NormalizedSpectrogram {
    pub fn frames(&self) -> usize {
        self.0.frames
    }

    pub fn bins(&self) -> usize {
        self.0.bins
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0.values
    }

    pub fn as_spectrogram(&self) -> &Spectrogram {
        &self.0
    }
}

/// Reusable STFT plan for one [`FrameSpec`].
pub struct Stft {
    spec: FrameSpec,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(spec: FrameSpec) -> Result<Self> {
        spec.validate()?;
        let window = hamming_window(spec.win_len)?;
        let fft = FftPlanner::new().plan_fft_forward(spec.fft_size);
        Ok(Self { spec, window, fft })
    }

    pub fn spec(&self) -> &FrameSpec {
        &self.spec
    }

    pub fn amplitude(&self, samples: &[f32]) -> Result<Spectrogram> {
        let spec = &self.spec;
        let frames = frame_count(samples.len(), spec)?;
        let bins = spec.n_bins();
        let mut values = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex::new(0.0, 0.0); spec.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let frame = &samples[t * spec.hop..t * spec.hop + spec.win_len];
            for (slot, (&s, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *slot = Complex::new(s as f64 * w, 0.0);
            }
            buf[spec.win_len..].fill(Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            values.extend(buf[..bins].iter().map(|c| c.norm()));
        }
        Spectrogram::from_values(values, frames, bins)
    }

    pub fn normalized(&self, w: &Waveform) -> Result<NormalizedSpectrogram> {
        normalize_per_bin(&self.amplitude(w.samples())?)
    }
}

pub fn stft_amplitude(w: &Waveform, spec: &FrameSpec) -> Result<Spectrogram> {
    Stft::new(*spec)?.amplitude(w.samples())
}

/// Standardizes each frequency column over the crop's own frames.
pub fn normalize_per_bin(s: &Spectrogram) -> Result<NormalizedSpectrogram> {
    let (frames, bins) = (s.frames, s.bins);
    if frames < 2 {
        return Err(Error::InvalidArgument(format!(
            "per-bin normalization needs >= 2 frames, got {frames}"
        )));
    }
    let n = frames as f64;
    let mut mean = vec![0.0; bins];
    for t in 0..frames {
        for (m, &v) in mean.iter_mut().zip(s.row(t)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; bins];
    for t in 0..frames {
        for ((acc, &v), &m) in var.iter_mut().zip(s.row(t)).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / n + NORM_EPS).sqrt()).collect();
    let mut values = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        values.extend(
            s.row(t)
                .iter()
                .zip(&mean)
                .zip(&inv_std)
                .map(|((&v, &m), &k)| (v - m) * k),
        );
    }
    Ok(NormalizedSpectrogram(Spectrogram {
        values,
        frames,
        bins,
    }))
}

/// Writes a row-major matrix as `u32 rows, u32 cols` followed by
/// little-endian `f32` values.
pub fn write_matrix(path: impl AsRef<Path>, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_matrix(rows, cols, values)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_matrix(rows: usize, cols: usize, values: &[f64]) -> Result<Vec<u8>> {
    if rows * cols != values.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} values for a {rows}x{cols} matrix",
            values.len()
        )));
    }
    let mut out = Vec::with_capacity(8 + 4 * values.len());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 8 {
        return Err(Error::Parse("matrix file shorter than its header".into()));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != rows * cols * 4 {
        return Err(Error::Parse(format!(
            "matrix header says {rows}x{cols} but body holds {} bytes",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, values))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>)> {
    let path = path.as_ref();
    decode_matrix(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
