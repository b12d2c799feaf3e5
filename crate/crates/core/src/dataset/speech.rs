use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_wav;
use crate::rng::seeded;

/// One source signal with its identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub samples: Vec<f64>,
}

/// Reads a mono 16 kHz PCM WAV (16-bit integer or 32-bit float).
///
/// No resampling or downmixing: anything else is a format error.
pub fn ingest_speech(path: &Path, sample_rate: u32) -> Result<Utterance> {
    let spec = hound::WavReader::open(path)?.spec();
    let bad = |detail: String| Error::AudioFormat {
        path: path.to_path_buf(),
        detail,
    };
    if spec.channels != 1 {
        return Err(bad(format!("expected mono, found {} channels", spec.channels)));
    }
    if spec.sample_rate != sample_rate {
        return Err(bad(format!(
            "expected {sample_rate} Hz, found {} Hz; resample the file first",
            spec.sample_rate
        )));
    }
    match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) | (hound::SampleFormat::Float, 32) => {}
        (fmt, bits) => return Err(bad(format!("expected 16-bit PCM or 32-bit float, found {bits}-bit {fmt:?}"))),
    }
    let wav = read_wav(path)?;
    Ok(Utterance {
        id: path.to_string_lossy().into_owned(),
        samples: wav.channels.into_iter().next().unwrap_or_default(),
    })
}

/// Zeroes all FFT bins outside `[lo, hi]` Hz.
pub fn bandpass(signal: &[f64], sample_rate: f64, lo: f64, hi: f64) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k) as f64 * sample_rate / n as f64;
        if bin < lo || bin > hi {
            *b = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Amplitude-modulated harmonic-plus-noise signal with a wandering pitch,
/// scaled to unit RMS. With `band`, harmonics and noise stay inside it.
pub fn generate_speechlike(seed: u64, len: usize, sample_rate: f64, band: Option<(f64, f64)>) -> Vec<f64> {
    let mut rng = seeded(seed);
    let (lo, hi) = band.unwrap_or((0.0, 0.45 * sample_rate));
    let hi = hi.min(0.45 * sample_rate);
    let f0 = rng.random_range(90.0..250.0);
    let vib_rate = rng.random_range(2.0..6.0);
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let syl_rate = rng.random_range(3.0..5.0);
    let syl_phase = rng.random_range(0.0..2.0 * PI);

    let max_k = (hi / (f0 * 1.05)).floor().max(1.0) as usize;
    let harmonics: Vec<(usize, f64, f64)> = (1..=max_k)
        .filter(|&k| k as f64 * f0 * 0.95 >= lo)
        .map(|k| {
            let weight = rng.random_range(0.3..1.0) / k as f64;
            (k, weight, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    // Falls back to a single in-band tone if no harmonic of f0 fits.
    let (harmonics, f0) = if harmonics.is_empty() {
        (vec![(1, 1.0, 0.0)], 0.5 * (lo + hi))
    } else {
        (harmonics, f0)
    };

    // w sin(k phase + p) = (w cos p) sin(k phase) + (w sin p) cos(k phase);
    // the k-th powers of e^{i phase} come from repeated rotation.
    let terms: Vec<(usize, f64, f64)> = harmonics
        .iter()
        .map(|&(k, w, p)| (k, w * p.cos(), w * p.sin()))
        .collect();
    let mut phase = 0.0;
    let mut voiced = Vec::with_capacity(len);
    for n in 0..len {
        let t = n as f64 / sample_rate;
        let inst = f0 * (1.0 + 0.05 * (2.0 * PI * vib_rate * t + vib_phase).sin());
        phase += 2.0 * PI * inst / sample_rate;
        let env = 0.3 + 0.7 * (PI * syl_rate * t + syl_phase).sin().abs();
        let (s1, c1) = phase.sin_cos();
        let (mut sk, mut ck, mut at) = (0.0, 1.0, 0);
        let mut v = 0.0;
        for &(k, a, b) in &terms {
            while at < k {
                (sk, ck) = (sk * c1 + ck * s1, ck * c1 - sk * s1);
                at += 1;
            }
            v += a * sk + b * ck;
        }
        voiced.push(env * v);
    }
    let noise: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let noise = match band {
        Some(_) => bandpass(&noise, sample_rate, lo, hi),
        None => noise,
    };
    let v_rms = rms(&voiced).max(1e-12);
    let n_rms = rms(&noise).max(1e-12);
    let mut out: Vec<f64> = voiced
        .iter()
        .zip(&noise)
        .map(|(v, e)| v / v_rms + 0.1 * e / n_rms)
        .collect();
    let r = rms(&out).max(1e-12);
    out.iter_mut().for_each(|v| *v /= r);
    out
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Wiener entropy of the frame-averaged power spectrum: near 0 for a pure
/// tone, near 1 for white noise.
pub fn spectral_flatness(signal: &[f64], frame: usize) -> f64 {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(frame);
    let window: Vec<f64> = (0..frame)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / frame as f64).cos())
        .collect();
    let mut power = vec![0.0; frame / 2 + 1];
    let mut frames = 0;
    for chunk in signal.windows(frame).step_by(frame / 2) {
        let mut buf: Vec<Complex<f64>> = chunk.iter().zip(&window).map(|(x, w)| Complex::new(x * w, 0.0)).collect();
        fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p += b.norm_sqr();
        }
        frames += 1;
    }
    if frames == 0 {
        return 0.0;
    }
    // Skip DC and Nyquist.
    let bins = &power[1..power.len() - 1];
    let floor = 1e-300;
    let log_mean = bins.iter().map(|p| (p + floor).ln()).sum::<f64>() / bins.len() as f64;
    let mean = bins.iter().sum::<f64>() / bins.len() as f64;
    log_mean.exp() / mean
}

/// Where source signals come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpeechConfig {
    /// Generated signals; `bands[r]` optionally confines region `r`'s talker
    /// to a frequency band in Hz.
    Synthetic {
        #[serde(default)]
        bands: Vec<Option<[f64; 2]>>,
    },
    /// WAV files under `path` (searched recursively, sorted by path). Each
    /// file may be used at most `max_uses` times within a split.
    WavDir {
        path: PathBuf,
        #[serde(default = "one")]
        max_uses: usize,
    },
}

fn one() -> usize {
    1
}

impl Default for SpeechConfig {
    fn default() -> Self {
        SpeechConfig::Synthetic { bands: Vec::new() }
    }
}

/// Sorted list of `.wav` files below `dir`.
pub fn scan_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Identifier of a generated utterance; the seed is all that is needed to
/// rebuild it.
pub fn synthetic_id(seed: u64) -> String {
    format!("syn-{seed:016x}")
}

pub fn parse_synthetic_id(id: &str) -> Option<u64> {
    u64::from_str_radix(id.strip_prefix("syn-")?, 16).ok()
}
