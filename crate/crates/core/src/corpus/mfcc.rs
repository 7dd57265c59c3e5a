//! 39-dimensional MFCC frontend: 13 cepstra (C0 replaced by log frame
//! energy) plus first and second order regression deltas.
//!
//! The chain is pre-emphasis, 25 ms Hamming-windowed frames every 10 ms,
//! 512-point power spectrum, 26 triangular mel filters, log, DCT-II.

use std::f64::consts::PI;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::FeatureSequence;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub window: usize,
    pub shift: usize,
    pub fft_size: usize,
    pub num_filters: usize,
    pub num_cepstra: usize,
    pub pre_emphasis: f64,
    /// Regression window half-width for deltas.
    pub delta_window: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            window: 400,
            shift: 160,
            fft_size: 512,
            num_filters: 26,
            num_cepstra: 13,
            pre_emphasis: 0.97,
            delta_window: 2,
        }
    }
}

impl MfccConfig {
    pub fn feature_dim(&self) -> usize {
        self.num_cepstra * 3
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        if num_samples < self.window {
            0
        } else {
            (num_samples - self.window) / self.shift + 1
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over `fft_size / 2 + 1` power bins, 0 Hz to Nyquist.
fn mel_filterbank(cfg: &MfccConfig, sample_rate: f64) -> Vec<Vec<f64>> {
    let bins = cfg.fft_size / 2 + 1;
    let lo = hz_to_mel(0.0);
    let hi = hz_to_mel(sample_rate / 2.0);
    let points: Vec<usize> = (0..cfg.num_filters + 2)
        .map(|i| {
            let mel = lo + (hi - lo) * i as f64 / (cfg.num_filters + 1) as f64;
            ((cfg.fft_size + 1) as f64 * mel_to_hz(mel) / sample_rate).floor() as usize
        })
        .collect();
    (0..cfg.num_filters)
        .map(|j| {
            let (l, c, r) = (points[j], points[j + 1], points[j + 2]);
            let mut filt = vec![0.0; bins];
            for (k, w) in filt.iter_mut().enumerate().take(r.min(bins - 1) + 1).skip(l) {
                *w = if k < c {
                    if c > l { (k - l) as f64 / (c - l) as f64 } else { 0.0 }
                } else if r > c {
                    (r - k) as f64 / (r - c) as f64
                } else {
                    1.0
                };
            }
            filt
        })
        .collect()
}

/// Regression deltas over ±`half` frames with edge frames replicated.
fn deltas(rows: &[Vec<f64>], half: usize) -> Vec<Vec<f64>> {
    let t_len = rows.len() as isize;
    let dim = rows.first().map_or(0, Vec::len);
    let denom: f64 = 2.0 * (1..=half).map(|k| (k * k) as f64).sum::<f64>();
    (0..t_len)
        .map(|t| {
            let mut d = vec![0.0; dim];
            for k in 1..=half as isize {
                let next = &rows[(t + k).min(t_len - 1) as usize];
                let prev = &rows[(t - k).max(0) as usize];
                for (i, v) in d.iter_mut().enumerate() {
                    *v += k as f64 * (next[i] - prev[i]);
                }
            }
            d.iter_mut().for_each(|v| *v /= denom);
            d
        })
        .collect()
}

/// Compute 39-dimensional MFCC features from 16 kHz mono samples in [-1, 1].
pub fn extract_mfcc(
    utterance_id: &str,
    samples: &[f64],
    sample_rate: u32,
    cfg: &MfccConfig,
) -> Result<FeatureSequence> {
    if sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedRate(sample_rate));
    }
    let num_frames = cfg.num_frames(samples.len());
    if num_frames == 0 {
        return Err(Error::Input(format!(
            "{} samples is shorter than one {}-sample analysis window",
            samples.len(),
            cfg.window
        )));
    }
    let emphasized: Vec<f64> = samples
        .iter()
        .enumerate()
        .map(|(i, &x)| if i == 0 { x } else { x - cfg.pre_emphasis * samples[i - 1] })
        .collect();
    let hamming: Vec<f64> = (0..cfg.window)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (cfg.window - 1) as f64).cos())
        .collect();
    let filters = mel_filterbank(cfg, sample_rate as f64);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    let nf = cfg.num_filters as f64;

    let mut statics = Vec::with_capacity(num_frames);
    for t in 0..num_frames {
        let frame = &emphasized[t * cfg.shift..t * cfg.shift + cfg.window];
        let energy: f64 = frame.iter().map(|x| x * x).sum();
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, (&x, &w)) in frame.iter().zip(&hamming).enumerate().take(cfg.fft_size) {
            buf[i].re = x * w;
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..cfg.fft_size / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr())
            .collect();
        let log_mel: Vec<f64> = filters
            .iter()
            .map(|f| {
                let e: f64 = f.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect();
        let mut ceps: Vec<f64> = (0..cfg.num_cepstra)
            .map(|k| {
                let s: f64 = log_mel
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| v * (PI * k as f64 * (j as f64 + 0.5) / nf).cos())
                    .sum();
                (2.0 / nf).sqrt() * s
            })
            .collect();
        ceps[0] = energy.max(LOG_FLOOR).ln();
        statics.push(ceps);
    }
    let d1 = deltas(&statics, cfg.delta_window);
    let d2 = deltas(&d1, cfg.delta_window);
    let data: Vec<f64> = statics
        .iter()
        .zip(&d1)
        .zip(&d2)
        .flat_map(|((s, a), b)| s.iter().chain(a).chain(b).copied())
        .collect();
    FeatureSequence::new(utterance_id, data, cfg.feature_dim())
}

/// Read a PCM16 mono WAV file. Returns samples scaled to [-1, 1] and the rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::Format(format!(
            "{}: expected PCM16 mono, got {} channel(s) {}-bit {:?}",
            path.display(),
            spec.channels,
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedRate(spec.sample_rate));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok((samples, spec.sample_rate))
}
