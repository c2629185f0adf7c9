//! Frame conditioning ahead of the fit: dominant-frequency detection, a
//! zero-phase spectral band-pass, power-law gain compensation and the Hilbert
//! envelope.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{MemgError, Result};
use crate::model::Frame;

/// Fraction of the half band over which the band-pass mask tapers to zero.
pub const BAND_ROLLOFF: f64 = 0.5;

/// Amplitude decay `a / x^b` over the time axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainFit {
    pub a: f64,
    pub b: f64,
}

impl GainFit {
    pub const IDENTITY: GainFit = GainFit { a: 1.0, b: 0.0 };

    pub fn decay_at(&self, x: f64) -> f64 {
        self.a / x.powf(self.b)
    }
}

fn fft(samples: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

fn ifft_real(mut spec: Vec<Complex<f64>>) -> Vec<f64> {
    let n = spec.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    spec.iter().map(|c| c.re / n as f64).collect()
}

/// Frequency in kHz of FFT bin `k` for a length-`n` transform, folded to the
/// non-negative side.
pub fn bin_frequency(k: usize, n: usize, dt: f64) -> f64 {
    let k = if k <= n / 2 { k } else { n - k };
    k as f64 / (n as f64 * dt)
}

/// Largest positive-frequency component of a Hann-windowed spectrum, refined
/// by a parabola through the log-magnitudes of the peak bin and its
/// neighbours.
pub fn dominant_frequency(frame: &Frame) -> Result<f64> {
    let n = frame.len();
    if n < 4 {
        return Err(MemgError::InvalidInput(format!(
            "need at least 4 samples for a spectrum, got {n}"
        )));
    }
    let windowed: Vec<f64> = frame
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| s * (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()))
        .collect();
    let mags: Vec<f64> = fft(&windowed).iter().take(n / 2 + 1).map(|c| c.norm()).collect();

    let (peak, &peak_mag) = mags
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("n >= 4");
    if !(peak_mag > 0.0) {
        return Err(MemgError::NoDominantFrequency);
    }

    let mut offset = 0.0;
    if peak + 1 < mags.len() && mags[peak - 1] > 0.0 && mags[peak + 1] > 0.0 {
        let (l, c, r) = (mags[peak - 1].ln(), peak_mag.ln(), mags[peak + 1].ln());
        let denom = l - 2.0 * c + r;
        if denom < 0.0 {
            offset = (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
        }
    }
    Ok((peak as f64 + offset) / (n as f64 * frame.dt))
}

/// Raised-cosine pass band at `center` kHz with full width
/// `rel_bandwidth * center`, flat over the inner `1 - BAND_ROLLOFF` part.
pub fn band_mask(freq: f64, center: f64, rel_bandwidth: f64) -> f64 {
    let half = 0.5 * rel_bandwidth * center;
    let flat = (1.0 - BAND_ROLLOFF) * half;
    let d = (freq.abs() - center).abs();
    if d <= flat {
        1.0
    } else if d < half {
        0.5 * (1.0 + (PI * (d - flat) / (half - flat)).cos())
    } else {
        0.0
    }
}

fn check_band(frame: &Frame, center: f64, rel_bandwidth: f64) -> Result<()> {
    let nyquist = 0.5 * frame.fs_khz();
    if !(center > 0.0 && center < nyquist) {
        return Err(MemgError::InvalidBand(format!(
            "center {center} kHz outside (0, {nyquist}) kHz"
        )));
    }
    if !(rel_bandwidth > 0.0 && rel_bandwidth <= 1.0) {
        return Err(MemgError::InvalidBand(format!(
            "relative bandwidth {rel_bandwidth} outside (0, 1]"
        )));
    }
    Ok(())
}

/// Zero-phase band-pass by spectral masking. Output length equals input.
pub fn bandpass(frame: &Frame, center: f64, rel_bandwidth: f64) -> Result<Frame> {
    check_band(frame, center, rel_bandwidth)?;
    let n = frame.len();
    let mut spec = fft(&frame.samples);
    for (k, c) in spec.iter_mut().enumerate() {
        *c *= band_mask(bin_frequency(k, n, frame.dt), center, rel_bandwidth);
    }
    Ok(frame.with_samples(ifft_real(spec)))
}

/// Strict local maxima (`e[i-1] < e[i] >= e[i+1]`) that are positive, sit at
/// `x > 0` and lie past the blind zone.
pub fn envelope_peaks(envelope: &[f64], x: &[f64], blind_zone: usize) -> Vec<usize> {
    let n = envelope.len().min(x.len());
    (1.max(blind_zone)..n.saturating_sub(1))
        .filter(|&i| {
            envelope[i] > 0.0
                && x[i] > 0.0
                && envelope[i] > envelope[i - 1]
                && envelope[i] >= envelope[i + 1]
        })
        .collect()
}

/// Fits `a / x^b` through the envelope's local maxima by log-log regression.
pub fn fit_gain(envelope: &[f64], x: &[f64], blind_zone: usize) -> Result<GainFit> {
    if envelope.len() != x.len() {
        return Err(MemgError::Shape {
            expected: envelope.len(),
            actual: x.len(),
        });
    }
    let peaks = envelope_peaks(envelope, x, blind_zone);
    if peaks.len() < 2 {
        return Err(MemgError::InsufficientPeaks(peaks.len()));
    }
    let pts: Vec<(f64, f64)> = peaks.iter().map(|&i| (x[i].ln(), envelope[i].ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(MemgError::InsufficientPeaks(1));
    }
    let slope = sxy / sxx;
    Ok(GainFit {
        a: (my - slope * mx).exp(),
        b: -slope,
    })
}

/// Multiplies each sample by `x^b / a`. Samples inside the blind zone and the
/// `x = 0` sample are left untouched.
pub fn apply_gain(frame: &Frame, gain: GainFit, blind_zone: usize) -> Frame {
    let samples = frame
        .samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let x = i as f64 * frame.dt;
            if i < blind_zone || x <= 0.0 {
                s
            } else {
                s * x.powf(gain.b) / gain.a
            }
        })
        .collect();
    frame.with_samples(samples)
}

/// Analytic signal built in the transform domain: DC (and Nyquist for even
/// lengths) kept, positive frequencies doubled, negative ones zeroed.
pub fn analytic_signal(samples: &[f64]) -> Vec<Complex<f64>> {
    let n = samples.len();
    if n == 0 {
        return Vec::new();
    }
    let mut spec = fft(samples);
    for (k, c) in spec.iter_mut().enumerate() {
        let keep = k == 0 || (n % 2 == 0 && k == n / 2);
        if keep {
            continue;
        }
        if k < n.div_ceil(2) {
            *c *= 2.0;
        } else {
            *c = Complex::new(0.0, 0.0);
        }
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    spec.iter().map(|c| c / n as f64).collect()
}

/// Magnitude of [`analytic_signal`].
pub fn analytic_envelope(samples: &[f64]) -> Vec<f64> {
    analytic_signal(samples).iter().map(|c| c.norm()).collect()
}

pub fn hilbert_envelope(frame: &Frame) -> Vec<f64> {
    analytic_envelope(&frame.samples)
}

/// How frames are conditioned before fitting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Relative pass-band width around the dominant frequency; `None` skips
    /// the band-pass.
    pub rel_bandwidth: Option<f64>,
    /// Pass-band center in kHz; `None` uses the frame's dominant frequency.
    pub center_khz: Option<f64>,
    pub gain: GainMode,
    /// Leading samples excluded from gain fitting and echo detection.
    pub blind_zone: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    Off,
    Fixed(GainFit),
    /// Fit `a / x^b` to the band-passed envelope of each frame.
    Fit,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            rel_bandwidth: Some(1.0),
            center_khz: None,
            gain: GainMode::Off,
            blind_zone: 0,
        }
    }
}

/// Conditioned frame plus what was learned about it along the way.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    pub frame: Frame,
    /// Center of the pass band, if one was applied.
    pub center_khz: Option<f64>,
    pub gain: Option<GainFit>,
}

pub fn preprocess(frame: &Frame, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    let mut out = frame.clone();
    let mut center = None;
    if let Some(bw) = cfg.rel_bandwidth {
        let c = match cfg.center_khz {
            Some(c) => c,
            None => dominant_frequency(frame)?,
        };
        out = bandpass(&out, c, bw)?;
        center = Some(c);
    }
    let gain = match cfg.gain {
        GainMode::Off => None,
        GainMode::Fixed(g) => Some(g),
        GainMode::Fit => Some(fit_gain(
            &hilbert_envelope(&out),
            &out.time_axis(),
            cfg.blind_zone,
        )?),
    };
    if let Some(g) = gain {
        out = apply_gain(&out, g, cfg.blind_zone);
    }
    Ok(Preprocessed {
        frame: out,
        center_khz: center,
        gain,
    })
}
