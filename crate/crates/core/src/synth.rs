//! Synthetic echo frames, 8-bit quantization and PSNR scoring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{MemgError, Result};
use crate::features::FeatureRecord;
use crate::lm::LmConfig;
use crate::model::{self, EchoParams, Frame, ParamSet};
use crate::preprocess::{self, PreprocessConfig};
use crate::staged::{self, FitResult, InitConfig, StagePlan};

/// Peak value in the PSNR numerator, `2^8 - 1`.
pub const PSNR_PEAK: f64 = 255.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub components: Vec<EchoParams>,
    pub fs_khz: f64,
    pub n_samples: usize,
    /// Standard deviation of the additive noise, in quantized units.
    pub noise_sigma: f64,
    /// Round to signed 8-bit, scaling amplitudes down if the peak exceeds 127.
    pub quantize: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// Four skewed echoes near a 50 kHz carrier, 200 ms at 300 kHz.
    fn default() -> Self {
        SynthSpec {
            components: vec![
                EchoParams::new(75.0, 40.0, 0.04, 1.5, 50.0, 0.3),
                EchoParams::new(65.0, 80.0, 0.05, -1.0, 47.0, -1.2),
                EchoParams::new(80.0, 120.0, 0.03, 2.0, 53.0, 2.0),
                EchoParams::new(55.0, 160.0, 0.06, -2.0, 55.0, 0.0),
            ],
            fs_khz: 300.0,
            n_samples: 60_000,
            noise_sigma: 10.0,
            quantize: true,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn dt(&self) -> f64 {
        1.0 / self.fs_khz
    }

    /// Carrier the spec is built around, used as the operating frequency.
    pub fn carrier_khz(&self) -> f64 {
        if self.components.is_empty() {
            return 0.0;
        }
        self.components.iter().map(|c| c.freq).sum::<f64>() / self.components.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs_khz > 0.0) || !self.fs_khz.is_finite() {
            return Err(MemgError::InvalidInput(format!("fs must be > 0, got {}", self.fs_khz)));
        }
        if self.n_samples == 0 {
            return Err(MemgError::InvalidInput("frame needs at least one sample".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(MemgError::InvalidInput(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        for c in &self.components {
            if !c.is_finite() {
                return Err(MemgError::InvalidInput("non-finite component".into()));
            }
            if c.freq.abs() >= self.fs_khz / 2.0 {
                return Err(MemgError::Aliasing {
                    freq: c.freq,
                    fs: self.fs_khz,
                });
            }
        }
        Ok(())
    }
}

/// Output of [`generate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    /// Ground truth after quantization (if enabled).
    pub gt: Frame,
    pub noisy: Frame,
    /// Ground truth before quantization.
    pub clean: Vec<f64>,
    /// Generating parameters, after any amplitude scaling.
    pub params: ParamSet,
}

/// Round half away from zero and clamp to `[-128, 127]`.
pub fn quantize_i8(v: f64) -> f64 {
    v.round().clamp(-128.0, 127.0)
}

pub fn generate(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let dt = spec.dt();
    let mut params = ParamSet::new(spec.components.clone(), 0);
    let mut clean = if params.is_empty() {
        vec![0.0; spec.n_samples]
    } else {
        model::eval_model_uniform(&params, dt, spec.n_samples, true)?
    };
    if spec.quantize {
        let peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 127.0 {
            let s = 127.0 / peak;
            for c in &mut params.components {
                c.alpha *= s;
            }
            clean = model::eval_model_uniform(&params, dt, spec.n_samples, true)?;
        }
    }
    let gt: Vec<f64> = if spec.quantize {
        clean.iter().map(|v| quantize_i8(*v)).collect()
    } else {
        clean.clone()
    };
    let mut noisy = gt.clone();
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| MemgError::InvalidInput(e.to_string()))?;
        for v in &mut noisy {
            *v += normal.sample(&mut rng);
            if spec.quantize {
                *v = quantize_i8(*v);
            }
        }
    }
    Ok(Synthetic {
        gt: Frame::new(gt, dt, 0),
        noisy: Frame::new(noisy, dt, 0),
        clean,
        params,
    })
}

/// `20 log10(255 / ||reference - signal||_2)`; infinite for identical inputs.
pub fn psnr(reference: &[f64], signal: &[f64]) -> Result<f64> {
    if reference.len() != signal.len() {
        return Err(MemgError::Shape {
            expected: reference.len(),
            actual: signal.len(),
        });
    }
    let err = reference
        .iter()
        .zip(signal)
        .map(|(g, s)| (g - s) * (g - s))
        .sum::<f64>()
        .sqrt();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (PSNR_PEAK / err).log10())
}

/// Serializes infinite decibel values as the strings `"inf"` and `"-inf"`.
pub mod db_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Db {
            Num(f64),
            Text(String),
        }
        match Db::deserialize(d)? {
            Db::Num(v) => Ok(v),
            Db::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Db::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Db::Text(t) => Err(serde::de::Error::custom(format!("bad decibel value '{t}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseReport {
    #[serde(with = "db_serde")]
    pub psnr_raw_db: f64,
    #[serde(with = "db_serde")]
    pub psnr_fit_db: f64,
    #[serde(with = "db_serde")]
    pub gain_db: f64,
    pub spec: SynthSpec,
    pub fit_params: ParamSet,
    pub degraded: bool,
}

/// Gain in decibels; `inf - inf` is reported as 0.
pub fn gain_db(psnr_fit: f64, psnr_raw: f64) -> f64 {
    if psnr_fit == psnr_raw {
        0.0
    } else {
        psnr_fit - psnr_raw
    }
}

/// Conditions a frame and fits it. An echo-free frame gives an empty fit.
pub fn fit_noisy(
    noisy: &Frame,
    pre: &PreprocessConfig,
    init: &InitConfig,
    plan: &StagePlan,
    lm: &LmConfig,
) -> Result<FitResult> {
    let conditioned = match preprocess::preprocess(noisy, pre) {
        Ok(p) => p.frame,
        Err(MemgError::NoDominantFrequency) => return Ok(FitResult::empty(noisy.frame_index)),
        Err(e) => return Err(e),
    };
    match staged::fit_frame(&conditioned, init, plan, lm) {
        Err(MemgError::NoComponents(_)) => Ok(FitResult::empty(noisy.frame_index)),
        r => r,
    }
}

/// Generate, condition, fit, reconstruct and score against the ground truth.
pub fn denoise_experiment(
    spec: &SynthSpec,
    pre: &PreprocessConfig,
    init: &InitConfig,
    plan: &StagePlan,
    lm: &LmConfig,
) -> Result<(DenoiseReport, Synthetic, Vec<f64>)> {
    let syn = generate(spec)?;
    let fit = fit_noisy(&syn.noisy, pre, init, plan, lm)?;
    let recon = staged::reconstruct(&fit, &syn.gt.time_axis())?;
    let psnr_raw_db = psnr(&syn.gt.samples, &syn.noisy.samples)?;
    let psnr_fit_db = psnr(&syn.gt.samples, &recon)?;
    let report = DenoiseReport {
        psnr_raw_db,
        psnr_fit_db,
        gain_db: gain_db(psnr_fit_db, psnr_raw_db),
        spec: spec.clone(),
        fit_params: fit.params.clone(),
        degraded: fit.degraded,
    };
    Ok((report, syn, recon))
}

/// Draws a frame of `k` echoes with well separated positions and the given
/// range of skew magnitudes, unquantized and noiseless unless changed.
pub fn random_spec(seed: u64, k: usize, eta_abs: (f64, f64)) -> SynthSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = 300.0;
    let n = 600 * k.max(1) + 300;
    let dt = 1.0 / fs;
    let components = (0..k)
        .map(|i| {
            let sigma = rng.random_range(0.03..0.06);
            let mu = (300.0 + 600.0 * i as f64) * dt + rng.random_range(-0.2..0.2);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            EchoParams::new(
                rng.random_range(40.0..110.0),
                mu,
                sigma,
                sign * rng.random_range(eta_abs.0..=eta_abs.1),
                rng.random_range(45.0..55.0),
                rng.random_range(-3.0..3.0),
            )
        })
        .collect();
    SynthSpec {
        components,
        fs_khz: fs,
        n_samples: n,
        noise_sigma: 0.0,
        quantize: false,
        seed,
    }
}

/// Frames of one to three echoes with `|eta|` in `[1, 3]` and light noise.
pub fn skewed_corpus(seed: u64, n_frames: usize) -> Vec<SynthSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_frames)
        .map(|i| SynthSpec {
            noise_sigma: 2.0,
            ..random_spec(rng.random(), 1 + i % 3, (1.0, 3.0))
        })
        .collect()
}

/// Component features of a labelled corpus with one target echo per frame
/// and two to four clutter components. Target echoes are wide and strongly
/// skewed with high confidence; clutter is narrow, near-symmetric or
/// negatively skewed, and poorly fitted. Arrival times of both overlap.
pub fn feature_corpus(seed: u64, n_frames: usize) -> Vec<FeatureRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for frame in 0..n_frames {
        let n_clutter = rng.random_range(2..=4);
        let target_at = rng.random_range(0..=n_clutter);
        for k in 0..=n_clutter {
            let p = if k == target_at {
                EchoParams::new(
                    rng.random_range(300.0..900.0),
                    rng.random_range(0.1..0.7),
                    rng.random_range(0.025..0.04),
                    rng.random_range(1.5..3.0),
                    rng.random_range(170.0..180.0),
                    rng.random_range(-3.0..3.0),
                )
            } else {
                EchoParams::new(
                    rng.random_range(100.0..900.0),
                    rng.random_range(0.0..0.72),
                    rng.random_range(0.004..0.015),
                    rng.random_range(-1.5..0.5),
                    rng.random_range(150.0..200.0),
                    rng.random_range(-3.0..3.0),
                )
            };
            let conf = if k == target_at {
                rng.random_range(0.05..0.1)
            } else {
                rng.random_range(0.005..0.02)
            };
            out.push(FeatureRecord::new(frame, k, &p, conf, (k == target_at) as usize));
        }
    }
    out
}
