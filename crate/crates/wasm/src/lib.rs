//! wasm-bindgen bindings behind the static demo page in `www/`.

use memg_core::lm::LmConfig;
use memg_core::model::{eval_component, time_axis};
use memg_core::preprocess::PreprocessConfig;
use memg_core::staged::{reconstruct, InitConfig, StagePlan};
use memg_core::synth::{self, SynthSpec};
use memg_core::{EchoParams, Frame};
use wasm_bindgen::prelude::*;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// A generated frame pair.
#[wasm_bindgen]
pub struct Synthetic {
    spec: SynthSpec,
    gt: Vec<f64>,
    noisy: Vec<f64>,
}

#[wasm_bindgen]
impl Synthetic {
    /// The first `k` default echoes over `duration_ms` at 300 kHz, with
    /// Gaussian noise of standard deviation `noise`, quantized to 8 bits.
    #[wasm_bindgen(constructor)]
    pub fn new(k: usize, noise: f64, duration_ms: f64, seed: u64) -> Result<Synthetic, JsError> {
        let base = SynthSpec::default();
        if k == 0 || k > base.components.len() {
            return Err(js(format!("k must be 1..={}", base.components.len())));
        }
        let spec = SynthSpec {
            components: base.components[..k].to_vec(),
            n_samples: (duration_ms * base.fs_khz).round().max(1.0) as usize,
            noise_sigma: noise,
            seed,
            ..base
        };
        let syn = synth::generate(&spec).map_err(js)?;
        Ok(Synthetic {
            spec,
            gt: syn.gt.samples,
            noisy: syn.noisy.samples,
        })
    }

    pub fn gt(&self) -> Vec<f64> {
        self.gt.clone()
    }

    pub fn noisy(&self) -> Vec<f64> {
        self.noisy.clone()
    }

    /// Sampling period in ms.
    pub fn dt(&self) -> f64 {
        self.spec.dt()
    }

    #[wasm_bindgen(js_name = psnrRaw)]
    pub fn psnr_raw(&self) -> f64 {
        synth::psnr(&self.gt, &self.noisy).unwrap_or(f64::NAN)
    }

    /// Fits the noisy frame and reconstructs it.
    pub fn denoise(&self, plan: &str) -> Result<Denoised, JsError> {
        let plan = match plan {
            "memg" => StagePlan::memg(),
            "gaussian" => StagePlan::memg().freezing(memg_core::Param::Eta),
            other => return Err(js(format!("unknown plan '{other}'"))),
        };
        let frame = Frame::new(self.noisy.clone(), self.spec.dt(), 0);
        let pre = PreprocessConfig {
            center_khz: Some(self.spec.carrier_khz()),
            ..PreprocessConfig::default()
        };
        let init = InitConfig::simulation(self.spec.carrier_khz());
        let fit = synth::fit_noisy(&frame, &pre, &init, &plan, &LmConfig::default()).map_err(js)?;
        let recon = reconstruct(&fit, &frame.time_axis()).map_err(js)?;
        let psnr_fit = synth::psnr(&self.gt, &recon).map_err(js)?;
        let params: Vec<[f64; 6]> = fit.params.components.iter().map(EchoParams::to_array).collect();
        Ok(Denoised {
            psnr_fit,
            gain: synth::gain_db(psnr_fit, self.psnr_raw()),
            confidence: fit.frame_confidence.unwrap_or(f64::NAN),
            params: serde_json::to_string(&params).map_err(js)?,
            recon,
        })
    }
}

#[wasm_bindgen]
pub struct Denoised {
    recon: Vec<f64>,
    psnr_fit: f64,
    gain: f64,
    confidence: f64,
    params: String,
}

#[wasm_bindgen]
impl Denoised {
    pub fn reconstruction(&self) -> Vec<f64> {
        self.recon.clone()
    }

    #[wasm_bindgen(js_name = psnrFit)]
    pub fn psnr_fit(&self) -> f64 {
        self.psnr_fit
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    /// Fitted components as a JSON array of `[alpha, mu, sigma, eta, freq, phase]`.
    pub fn params(&self) -> String {
        self.params.clone()
    }
}

/// One echo centred in a 1 ms window sampled at 1 MHz. Returns the envelope
/// and the oscillating pulse back to back.
#[wasm_bindgen(js_name = echoShape)]
pub fn echo_shape(sigma: f64, eta: f64, freq: f64, phase: f64) -> Result<Vec<f64>, JsError> {
    let x = time_axis(1000, 1e-3);
    let p = EchoParams::new(1.0, 0.5, sigma, eta, freq, phase);
    let mut out = eval_component(&p, &x, false).map_err(js)?;
    out.extend(eval_component(&p, &x, true).map_err(js)?);
    Ok(out)
}
