//! Echo detection and the staged regression schedule.
//!
//! Components are seeded where the strided gradient of the Hilbert envelope
//! exceeds a threshold. The default plan then fits (a) the envelope-only model
//! to the envelope, (b) carrier frequency and phase to the signal, and (c) all
//! parameters jointly to the signal.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{MemgError, Result};
use crate::features::{component_confidence_of, frame_confidence_of};
use crate::lm::{self, LmConfig, LmTrace};
use crate::model::{self, EchoParams, Frame, Param, ParamMask, ParamSet};
use crate::preprocess::{analytic_signal, hilbert_envelope};

/// Default cap on detections per frame.
pub const DEFAULT_MAX_COMPONENTS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    /// Threshold on the central envelope difference over one stride, in the
    /// units selected by `scale`.
    pub tau: f64,
    /// Stride of the envelope difference, in samples.
    pub grad_separation: usize,
    /// Detections closer than this many samples are merged. `None` means
    /// `2 * grad_separation`.
    pub min_peak_distance: Option<usize>,
    /// Operating frequency in kHz, the initial carrier of every component.
    pub f_e: f64,
    /// Leading samples ignored by detection.
    pub blind_zone: usize,
    pub scale: GradientScale,
    /// Initial spread in ms; `None` seeds one carrier period `1 / f_e`, or
    /// one sample period when `f_e` is not positive.
    #[serde(default)]
    pub sigma_init: Option<f64>,
    /// Keeps only the strongest detections, bounding the solve size on frames
    /// where noise crosses the threshold.
    #[serde(default)]
    pub max_components: Option<usize>,
}

/// Units the threshold `tau` is expressed in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientScale {
    /// Envelope divided by its maximum, so `tau` is a fraction of the peak.
    #[default]
    Peak,
    /// Envelope in signal units.
    Raw,
}

impl InitConfig {
    /// Simulation settings: stride 20, `tau = 0.1` on the unit-peak envelope.
    pub fn simulation(f_e: f64) -> Self {
        InitConfig {
            tau: 0.1,
            grad_separation: 20,
            min_peak_distance: None,
            f_e,
            blind_zone: 0,
            scale: GradientScale::Peak,
            sigma_init: None,
            max_components: Some(DEFAULT_MAX_COMPONENTS),
        }
    }

    /// Settings used on raw transducer data: stride 1, `tau = 100` in signal
    /// units, 175 kHz.
    pub fn transducer() -> Self {
        InitConfig {
            tau: 100.0,
            grad_separation: 1,
            min_peak_distance: None,
            f_e: 175.0,
            blind_zone: 0,
            scale: GradientScale::Raw,
            sigma_init: None,
            max_components: Some(DEFAULT_MAX_COMPONENTS),
        }
    }

    pub fn initial_sigma(&self, dt: f64) -> f64 {
        match self.sigma_init {
            Some(s) => s,
            None if self.f_e > 0.0 => 1.0 / self.f_e,
            None => dt,
        }
    }

    pub fn min_distance(&self) -> usize {
        self.min_peak_distance.unwrap_or(2 * self.grad_separation)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(MemgError::InvalidInput(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.grad_separation == 0 {
            return Err(MemgError::InvalidInput("grad_separation must be >= 1".into()));
        }
        if let Some(s) = self.sigma_init {
            if !(s > 0.0) || !s.is_finite() {
                return Err(MemgError::InvalidInput(format!("initial sigma must be > 0, got {s}")));
            }
        }
        if self.max_components == Some(0) {
            return Err(MemgError::InvalidInput("max_components must be >= 1".into()));
        }
        if !self.f_e.is_finite() {
            return Err(MemgError::InvalidInput("f_e must be finite".into()));
        }
        Ok(())
    }
}

/// Which signal a stage fits against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTarget {
    /// Hilbert envelope of the conditioned frame.
    Envelope,
    /// The conditioned frame itself.
    Signal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub mask: ParamMask,
    pub oscillating: bool,
    pub target: StageTarget,
    /// Reset each phase to the analytic-signal phase at the component's
    /// position before the stage runs.
    #[serde(default)]
    pub seed_phase: bool,
}

/// Baseline removed from the envelope before it is used as a fit target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeFloor {
    None,
    /// Subtract the median, the noise floor on frames that are mostly
    /// echo-free.
    #[default]
    Median,
}

impl EnvelopeFloor {
    pub fn apply(self, envelope: &[f64]) -> Vec<f64> {
        match self {
            EnvelopeFloor::None => envelope.to_vec(),
            EnvelopeFloor::Median => {
                let m = median(envelope);
                envelope.iter().map(|v| v - m).collect()
            }
        }
    }
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
    pub envelope_floor: EnvelopeFloor,
}

impl StagePlan {
    /// Envelope regression, then carrier, then everything.
    pub fn memg() -> Self {
        StagePlan {
            stages: vec![
                Stage {
                    name: "envelope".into(),
                    mask: ParamMask::ENVELOPE,
                    oscillating: false,
                    target: StageTarget::Envelope,
                    seed_phase: false,
                },
                Stage {
                    name: "oscillation".into(),
                    mask: ParamMask::OSCILLATION,
                    oscillating: true,
                    target: StageTarget::Signal,
                    seed_phase: true,
                },
                Stage {
                    name: "joint".into(),
                    mask: ParamMask::ALL,
                    oscillating: true,
                    target: StageTarget::Signal,
                    seed_phase: false,
                },
            ],
            envelope_floor: EnvelopeFloor::Median,
        }
    }

    /// Only the envelope stage; frequency and phase are left at their seeds.
    pub fn envelope_only() -> Self {
        let mut plan = StagePlan::memg();
        plan.stages.truncate(1);
        plan
    }

    /// The same plan with `param` frozen at its seed in every stage. Freezing
    /// the skew gives the symmetric multimodal Gaussian baseline.
    pub fn freezing(mut self, param: Param) -> Self {
        for s in &mut self.stages {
            s.mask = s.mask.without(param);
        }
        self.stages.retain(|s| s.mask.count() > 0);
        self
    }

    pub fn final_stage(&self) -> Option<&Stage> {
        self.stages.last()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    /// `None` when the stage could not run at all.
    pub trace: Option<LmTrace>,
    pub degraded: bool,
}

impl StageReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.trace.as_ref().map(|t| t.best_loss())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ParamSet,
    pub initial: ParamSet,
    pub stages: Vec<StageReport>,
    /// Whether the final model carries the carrier term.
    pub oscillating: bool,
    pub frame_confidence: Option<f64>,
    /// One entry per component, `None` when its window misses the frame.
    pub component_confidences: Vec<Option<f64>>,
    pub degraded: bool,
}

impl FitResult {
    /// A fit with no components, reconstructing to silence.
    pub fn empty(frame_index: usize) -> Self {
        FitResult {
            params: ParamSet::new(vec![], frame_index),
            initial: ParamSet::new(vec![], frame_index),
            stages: vec![],
            oscillating: true,
            frame_confidence: None,
            component_confidences: vec![],
            degraded: false,
        }
    }

    pub fn stage_losses(&self) -> Vec<Option<f64>> {
        self.stages.iter().map(|s| s.final_loss()).collect()
    }
}

/// Central difference with stride `s`, `(e[i + s] - e[i - s]) / 2`, in
/// envelope units per stride. Entry `j` belongs to sample `j + s`.
pub fn envelope_gradient(envelope: &[f64], separation: usize) -> Vec<f64> {
    let s = separation.max(1);
    if envelope.len() <= 2 * s {
        return Vec::new();
    }
    (s..envelope.len() - s)
        .map(|i| 0.5 * (envelope[i + s] - envelope[i - s]))
        .collect()
}

/// Seeds one component per contiguous run of gradient samples above `tau`,
/// placed at the envelope maximum within the run's difference window.
pub fn detect_components(envelope: &Frame, cfg: &InitConfig) -> Result<Vec<EchoParams>> {
    cfg.validate()?;
    let env = &envelope.samples;
    let s = cfg.grad_separation;
    let peak = env.iter().skip(cfg.blind_zone).copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(MemgError::NoComponents(cfg.tau));
    }
    let scale = match cfg.scale {
        GradientScale::Peak => 1.0 / peak,
        GradientScale::Raw => 1.0,
    };
    let grad = envelope_gradient(env, s);
    let above = |j: usize| j >= cfg.blind_zone && grad[j] * scale > cfg.tau;

    let mut peaks: Vec<usize> = Vec::new();
    let mut j = 0;
    while j < grad.len() {
        if above(j) {
            let start = j;
            while j < grad.len() && above(j) {
                j += 1;
            }
            // run covers samples start + s ..= j - 1 + s, each looking s either way
            let lo = start.max(cfg.blind_zone);
            let hi = (j - 1 + 2 * s).min(env.len() - 1);
            let at = (lo..=hi)
                .max_by(|a, b| env[*a].total_cmp(&env[*b]).then(b.cmp(a)))
                .expect("non-empty run");
            peaks.push(at);
        } else {
            j += 1;
        }
    }
    if peaks.is_empty() {
        return Err(MemgError::NoComponents(cfg.tau));
    }

    // merge close detections, keeping the stronger
    let min_dist = cfg.min_distance();
    let mut merged: Vec<usize> = Vec::with_capacity(peaks.len());
    for p in peaks {
        match merged.last_mut() {
            Some(last) if p - *last < min_dist => {
                if env[p] > env[*last] {
                    *last = p;
                }
            }
            _ => merged.push(p),
        }
    }

    if let Some(cap) = cfg.max_components {
        if merged.len() > cap {
            let mut by_height = merged.clone();
            by_height.sort_by(|a, b| env[*b].total_cmp(&env[*a]).then(a.cmp(b)));
            by_height.truncate(cap);
            by_height.sort_unstable();
            merged = by_height;
        }
    }

    let sigma = cfg.initial_sigma(envelope.dt);
    Ok(merged
        .into_iter()
        .map(|i| EchoParams::new(env[i], i as f64 * envelope.dt, sigma, 0.0, cfg.f_e, 0.0))
        .collect())
}

/// Detects components on `frame` and runs every stage of `plan`. The frame is
/// expected to be conditioned already.
pub fn fit_frame(
    frame: &Frame,
    init: &InitConfig,
    plan: &StagePlan,
    lm_cfg: &LmConfig,
) -> Result<FitResult> {
    let envelope = hilbert_envelope(frame);
    let seeds = detect_components(&frame.with_samples(envelope.clone()), init)?;
    let initial = ParamSet::new(seeds, frame.frame_index);
    let target = frame.with_samples(plan.envelope_floor.apply(&envelope));
    fit_from(frame, &target, initial, plan, lm_cfg)
}

/// Runs `plan` from explicit starting parameters. `envelope` is the target of
/// envelope stages, floor already removed.
pub fn fit_from(
    frame: &Frame,
    envelope: &Frame,
    initial: ParamSet,
    plan: &StagePlan,
    lm_cfg: &LmConfig,
) -> Result<FitResult> {
    let mut params = initial.clone();
    let mut stages = Vec::with_capacity(plan.stages.len());
    let mut analytic = None;
    for stage in &plan.stages {
        if stage.seed_phase {
            let z = analytic.get_or_insert_with(|| analytic_signal(&frame.samples));
            seed_phases(&mut params, z, frame.dt);
        }
        let target = match stage.target {
            StageTarget::Envelope => envelope,
            StageTarget::Signal => frame,
        };
        match lm::minimize(&params, target, lm_cfg, stage.mask, stage.oscillating) {
            Ok((best, trace)) => {
                let degraded = trace.accepted_steps() == 0 && !trace.termination.converged();
                params = best;
                stages.push(StageReport {
                    name: stage.name.clone(),
                    trace: Some(trace),
                    degraded,
                });
            }
            Err(_) => stages.push(StageReport {
                name: stage.name.clone(),
                trace: None,
                degraded: true,
            }),
        }
    }

    let last = plan.final_stage();
    let oscillating = last.is_none_or(|s| s.oscillating);
    let target = match last.map(|s| s.target) {
        Some(StageTarget::Envelope) => envelope,
        _ => frame,
    };
    let model = model::eval_model_uniform(&params, target.dt, target.len(), oscillating)?;
    let frame_confidence = frame_confidence_of(&model, &target.samples).ok();
    let x = target.time_axis();
    let component_confidences = params
        .components
        .iter()
        .map(|p| component_confidence_of(&model, &target.samples, &x, p).ok())
        .collect();
    let degraded = stages.iter().any(|s| s.degraded);
    Ok(FitResult {
        params,
        initial,
        stages,
        oscillating,
        frame_confidence,
        component_confidences,
        degraded,
    })
}

/// Sets each phase so the carrier matches the analytic signal's phase at the
/// sample nearest the component's position.
pub fn seed_phases(ps: &mut ParamSet, analytic: &[Complex<f64>], dt: f64) {
    if analytic.is_empty() {
        return;
    }
    for p in &mut ps.components {
        let i = (p.mu / dt).round().clamp(0.0, (analytic.len() - 1) as f64) as usize;
        let z = analytic[i];
        if z.norm() > 0.0 {
            let phase = z.arg() - 2.0 * PI * p.freq * (i as f64 * dt - p.mu);
            p.phase = model::wrap_phase(phase);
        }
    }
}

/// The fitted model on `x`, carrier included when the fit has one.
pub fn reconstruct(fit: &FitResult, x: &[f64]) -> Result<Vec<f64>> {
    if fit.params.is_empty() {
        return Ok(vec![0.0; x.len()]);
    }
    model::eval_model(&fit.params, x, fit.oscillating)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::time_axis;

    fn gaussian_env(n: usize, dt: f64, peaks: &[(f64, f64, f64)]) -> Frame {
        let samples = (0..n)
            .map(|i| {
                let x = i as f64 * dt;
                peaks
                    .iter()
                    .map(|(a, m, s)| a * (-(x - m) * (x - m) / (2.0 * s * s)).exp())
                    .sum()
            })
            .collect();
        Frame::new(samples, dt, 0)
    }

    #[test]
    fn single_pulse_gives_one_component_near_peak() {
        let dt = 1.0 / 300.0;
        let env = gaussian_env(900, dt, &[(50.0, 1.5, 0.05)]);
        let cfg = InitConfig::simulation(50.0);
        let comps = detect_components(&env, &cfg).unwrap();
        assert_eq!(comps.len(), 1);
        let c = comps[0];
        assert!((c.mu - 1.5).abs() <= 2.0 * dt);
        assert_eq!(c.alpha, env.samples[(c.mu / dt).round() as usize]);
        assert_eq!((c.sigma, c.eta, c.freq, c.phase), (0.02, 0.0, 50.0, 0.0));
    }

    #[test]
    fn detections_beyond_the_cap_keep_the_strongest() {
        let dt = 1.0 / 300.0;
        let env = gaussian_env(
            3000,
            dt,
            &[(30.0, 1.0, 0.04), (80.0, 3.0, 0.04), (50.0, 5.0, 0.04), (90.0, 7.0, 0.04)],
        );
        let mut cfg = InitConfig::simulation(50.0);
        assert_eq!(detect_components(&env, &cfg).unwrap().len(), 4);
        cfg.max_components = Some(2);
        let kept = detect_components(&env, &cfg).unwrap();
        assert_eq!(kept.len(), 2);
        assert!((kept[0].mu - 3.0).abs() < 0.01 && (kept[1].mu - 7.0).abs() < 0.01);
    }

    #[test]
    fn flat_envelope_has_no_components() {
        let env = Frame::new(vec![0.0; 500], 0.01, 0);
        assert!(matches!(
            detect_components(&env, &InitConfig::simulation(50.0)),
            Err(MemgError::NoComponents(_))
        ));
    }

    #[test]
    fn two_separated_pulses_are_ordered() {
        let dt = 1.0 / 300.0;
        let env = gaussian_env(1200, dt, &[(30.0, 3.0, 0.05), (60.0, 1.0, 0.04)]);
        let comps = detect_components(&env, &InitConfig::simulation(50.0)).unwrap();
        assert_eq!(comps.len(), 2);
        assert!(comps[0].mu < comps[1].mu);
        assert!((comps[0].mu - 1.0).abs() < 3.0 * dt && (comps[1].mu - 3.0).abs() < 3.0 * dt);
    }

    #[test]
    fn detection_is_translation_covariant() {
        let dt = 1.0 / 300.0;
        let base = gaussian_env(1500, dt, &[(30.0, 1.0, 0.05), (60.0, 2.0, 0.04)]);
        let cfg = InitConfig::simulation(50.0);
        let a = detect_components(&base, &cfg).unwrap();
        for shift in [1usize, 17, 60] {
            let mut samples = vec![0.0; shift];
            samples.extend_from_slice(&base.samples[..base.len() - shift]);
            let b = detect_components(&base.with_samples(samples), &cfg).unwrap();
            assert_eq!(a.len(), b.len());
            for (ca, cb) in a.iter().zip(&b) {
                assert!((cb.mu - ca.mu - shift as f64 * dt).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sigma_seed_defaults_to_one_carrier_period() {
        let mut cfg = InitConfig::simulation(50.0);
        assert_eq!(cfg.initial_sigma(0.004), 0.02);
        cfg.f_e = 0.0;
        assert_eq!(cfg.initial_sigma(0.004), 0.004);
        cfg.sigma_init = Some(1.0);
        assert_eq!(cfg.initial_sigma(0.004), 1.0);
        cfg.sigma_init = Some(0.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn freezing_skew_removes_it_from_every_stage() {
        let plan = StagePlan::memg().freezing(Param::Eta);
        assert_eq!(plan.stages.len(), 3);
        assert!(plan.stages.iter().all(|s| !s.mask.is_active(Param::Eta)));
        assert_eq!(StagePlan::envelope_only().stages.len(), 1);
    }

    #[test]
    fn empty_fit_reconstructs_silence() {
        let fit = FitResult::empty(0);
        assert_eq!(reconstruct(&fit, &time_axis(5, 0.1)).unwrap(), vec![0.0; 5]);
    }
}
