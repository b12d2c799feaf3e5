use std::cell::RefCell;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Test-set condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Fully concurrent talkers.
    #[serde(rename = "FC")]
    Fc,
    /// Concurrent talkers plus independent white noise at each microphone.
    #[serde(rename = "WN")]
    Wn,
    /// Talkers start one after another at a fixed spacing.
    #[serde(rename = "PO")]
    Po,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Fc, Variant::Wn, Variant::Po];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Fc => "FC",
            Variant::Wn => "WN",
            Variant::Po => "PO",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FC" => Ok(Variant::Fc),
            "WN" => Ok(Variant::Wn),
            "PO" => Ok(Variant::Po),
            _ => Err(Error::Config(format!("unknown variant {s:?}; expected FC, WN or PO"))),
        }
    }
}

/// Linear convolution via zero-padded FFT; output length `x + h − 1`.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    fft_convolve_many(x, &[h]).pop().unwrap_or_default()
}

/// Smallest `2^a 3^b` not below `n`; rustfft is fast at these sizes and they
/// pad far less than the next power of two.
fn smooth_len(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut three = 1;
    while three < best {
        let mut m = three;
        while m < n {
            m *= 2;
        }
        best = best.min(m);
        three *= 3;
    }
    best
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Convolves `x` with each filter, transforming `x` once. Output `i` has
/// length `x + hs[i] − 1`.
pub fn fft_convolve_many(x: &[f64], hs: &[&[f64]]) -> Vec<Vec<f64>> {
    let longest = hs.iter().map(|h| h.len()).max().unwrap_or(0);
    if x.is_empty() || longest == 0 {
        return hs.iter().map(|_| Vec::new()).collect();
    }
    let n = smooth_len(x.len() + longest - 1);
    let (fwd, inv) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    });
    let pad = |s: &[f64]| {
        let mut b: Vec<Complex<f64>> = s.iter().map(|&v| Complex::new(v, 0.0)).collect();
        b.resize(n, Complex::new(0.0, 0.0));
        b
    };
    let mut spectrum = pad(x);
    fwd.process(&mut spectrum);
    hs.iter()
        .map(|h| {
            if h.is_empty() {
                return Vec::new();
            }
            let mut b = pad(h);
            fwd.process(&mut b);
            for (v, u) in b.iter_mut().zip(&spectrum) {
                *v *= u;
            }
            inv.process(&mut b);
            b.truncate(x.len() + h.len() - 1);
            b.iter().map(|c| c.re / n as f64).collect()
        })
        .collect()
}

/// Scales `x` to the given RMS level in dB relative to full scale.
pub fn normalize_dbfs(x: &[f64], level_dbfs: f64) -> Result<Vec<f64>> {
    let r = super::speech::rms(x);
    if r == 0.0 {
        return Err(Error::Config("cannot level-normalize a silent signal".into()));
    }
    let g = 10f64.powf(level_dbfs / 20.0) / r;
    Ok(x.iter().map(|v| v * g).collect())
}

/// Independent Gaussian noise per channel, scaled so that the energy ratio of
/// `clean` (all channels jointly) to the noise is exactly `snr_db`.
pub fn white_noise_at_snr(clean: &[Vec<f64>], snr_db: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut noise: Vec<Vec<f64>> = clean
        .iter()
        .map(|c| (0..c.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let signal: f64 = clean.iter().flatten().map(|v| v * v).sum();
    let current: f64 = noise.iter().flatten().map(|v| v * v).sum();
    let g = (signal / current / 10f64.powf(snr_db / 10.0)).sqrt();
    noise.iter_mut().flatten().for_each(|v| *v *= g);
    noise
}

/// `10 log10(‖clean‖² / ‖noise‖²)` over all channels.
pub fn measured_snr(clean: &[Vec<f64>], noise: &[Vec<f64>]) -> f64 {
    let s: f64 = clean.iter().flatten().map(|v| v * v).sum();
    let n: f64 = noise.iter().flatten().map(|v| v * v).sum();
    10.0 * (s / n).log10()
}

/// One rendered item.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExample {
    /// `[M][T]` microphone signals.
    pub mics: Vec<Vec<f64>>,
    /// `[R][T]` region images at the reference microphone, canonical region order.
    pub targets: Vec<Vec<f64>>,
    /// `[R][M][T]` image of each region at each microphone.
    pub images: Vec<Vec<Vec<f64>>>,
    /// `[M][T]` additive noise, for the noisy variant.
    pub noise: Option<Vec<Vec<f64>>>,
}

impl MixtureExample {
    pub fn len(&self) -> usize {
        self.mics.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Noise-free sum of all region images.
    pub fn clean(&self) -> Vec<Vec<f64>> {
        let (m, t) = (self.mics.len(), self.len());
        let mut out = vec![vec![0.0; t]; m];
        for region in &self.images {
            for (acc, ch) in out.iter_mut().zip(region) {
                for (a, v) in acc.iter_mut().zip(ch) {
                    *a += v;
                }
            }
        }
        out
    }

    /// Largest deviation of the mixture from the sum of region images and noise.
    pub fn mixing_residual(&self) -> f64 {
        let clean = self.clean();
        let mut worst = 0.0f64;
        for (mi, (mic, c)) in self.mics.iter().zip(&clean).enumerate() {
            for (ti, (y, x)) in mic.iter().zip(c).enumerate() {
                let n = self.noise.as_ref().map_or(0.0, |n| n[mi][ti]);
                worst = worst.max((y - x - n).abs());
            }
        }
        worst
    }
}
