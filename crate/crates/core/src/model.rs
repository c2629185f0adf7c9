//! Oscillating exponentially modified Gaussian (EMG) echo model.
//!
//! A single component is
//!
//! ```text
//! m(p; x) = alpha * exp(-(x - mu)^2 / (2 sigma^2))
//!                 * (1 + erf(eta (x - mu) / (sigma sqrt 2)))
//!                 * cos(2 pi f (x - mu) + phi)
//! ```
//!
//! with time in milliseconds and frequency in kilohertz. The multimodal model
//! is the sum of `K` such components. The Gaussian carries no normalising
//! constant; `alpha` absorbs the scale.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MemgError, Result};

/// Number of parameters per component.
pub const DIM: usize = 6;

/// Components whose spread falls below this are rejected at evaluation time.
pub const SIGMA_FLOOR: f64 = 1e-9;

/// Beyond `|x - mu| / |sigma|` of this size the Gaussian factor underflows to
/// exactly zero in f64 (`exp(-800) == 0`), so every term vanishes.
pub(crate) const SUPPORT_RADIUS: f64 = 40.0;

const TWO_OVER_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Parameters of one echo component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EchoParams {
    /// Amplitude in signal units.
    pub alpha: f64,
    /// Centre in milliseconds.
    pub mu: f64,
    /// Spread in milliseconds.
    pub sigma: f64,
    /// Dimensionless skew.
    pub eta: f64,
    /// Carrier frequency in kilohertz.
    pub freq: f64,
    /// Carrier phase in radians.
    pub phase: f64,
}

impl EchoParams {
    pub fn new(alpha: f64, mu: f64, sigma: f64, eta: f64, freq: f64, phase: f64) -> Self {
        EchoParams {
            alpha,
            mu,
            sigma,
            eta,
            freq,
            phase,
        }
    }

    pub fn to_array(&self) -> [f64; DIM] {
        [
            self.alpha, self.mu, self.sigma, self.eta, self.freq, self.phase,
        ]
    }

    pub fn from_array(a: [f64; DIM]) -> Self {
        EchoParams::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn get(&self, param: Param) -> f64 {
        self.to_array()[param as usize]
    }

    pub fn set(&mut self, param: Param, value: f64) {
        let mut a = self.to_array();
        a[param as usize] = value;
        *self = EchoParams::from_array(a);
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Parameter identity within a component, in flattened order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Alpha = 0,
    Mu = 1,
    Sigma = 2,
    Eta = 3,
    Freq = 4,
    Phase = 5,
}

impl Param {
    pub const ALL: [Param; DIM] = [
        Param::Alpha,
        Param::Mu,
        Param::Sigma,
        Param::Eta,
        Param::Freq,
        Param::Phase,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::Alpha => "alpha",
            Param::Mu => "mu",
            Param::Sigma => "sigma",
            Param::Eta => "eta",
            Param::Freq => "freq",
            Param::Phase => "phase",
        }
    }
}

/// Which parameter types are free. The same mask applies to every component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamMask(pub [bool; DIM]);

impl ParamMask {
    pub const ALL: ParamMask = ParamMask([true; DIM]);
    /// alpha, mu, sigma, eta
    pub const ENVELOPE: ParamMask = ParamMask([true, true, true, true, false, false]);
    /// freq, phase
    pub const OSCILLATION: ParamMask = ParamMask([false, false, false, false, true, true]);

    pub fn from_params(params: &[Param]) -> Self {
        let mut bits = [false; DIM];
        for p in params {
            bits[*p as usize] = true;
        }
        ParamMask(bits)
    }

    pub fn without(mut self, param: Param) -> Self {
        self.0[param as usize] = false;
        self
    }

    pub fn is_active(&self, param: Param) -> bool {
        self.0[param as usize]
    }

    pub fn active(&self) -> impl Iterator<Item = Param> + '_ {
        Param::ALL.into_iter().filter(|p| self.is_active(*p))
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }
}

/// The concatenated parameters of all components fitted to one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub components: Vec<EchoParams>,
    pub frame_index: usize,
}

impl ParamSet {
    pub fn new(components: Vec<EchoParams>, frame_index: usize) -> Self {
        ParamSet {
            components,
            frame_index,
        }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Flattened `[p_1, ..., p_K]`, length `DIM * K`.
    pub fn flatten(&self) -> Vec<f64> {
        self.components.iter().flat_map(|c| c.to_array()).collect()
    }

    pub fn from_flat(flat: &[f64], frame_index: usize) -> Result<Self> {
        if flat.len() % DIM != 0 {
            return Err(MemgError::Shape {
                expected: (flat.len() / DIM + 1) * DIM,
                actual: flat.len(),
            });
        }
        let components = flat
            .chunks_exact(DIM)
            .map(|c| EchoParams::from_array([c[0], c[1], c[2], c[3], c[4], c[5]]))
            .collect();
        Ok(ParamSet::new(components, frame_index))
    }

    /// Active parameters in flattened order restricted to `mask`.
    pub fn active_values(&self, mask: ParamMask) -> Vec<f64> {
        self.components
            .iter()
            .flat_map(|c| mask.active().map(move |p| c.get(p)))
            .collect()
    }

    /// Inverse of [`ParamSet::active_values`].
    pub fn set_active_values(&mut self, mask: ParamMask, values: &[f64]) {
        let mut it = values.iter();
        for c in &mut self.components {
            for p in mask.active() {
                if let Some(v) = it.next() {
                    c.set(p, *v);
                }
            }
        }
    }

    /// Valid per the outlier rule: every `sigma > 0` and `mu >= 0`.
    pub fn is_valid(&self) -> bool {
        self.components.iter().all(|c| c.sigma > 0.0 && c.mu >= 0.0)
    }
}

/// One A-scan sampled on a uniform axis `x_i = i * dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub samples: Vec<f64>,
    /// Sample period in milliseconds.
    pub dt: f64,
    pub frame_index: usize,
}

impl Frame {
    pub fn new(samples: Vec<f64>, dt: f64, frame_index: usize) -> Self {
        Frame {
            samples,
            dt,
            frame_index,
        }
    }

    pub fn from_rate(samples: Vec<f64>, fs_khz: f64, frame_index: usize) -> Self {
        Frame::new(samples, 1.0 / fs_khz, frame_index)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn fs_khz(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    pub fn time_axis(&self) -> Vec<f64> {
        time_axis(self.samples.len(), self.dt)
    }

    pub fn with_samples(&self, samples: Vec<f64>) -> Frame {
        Frame::new(samples, self.dt, self.frame_index)
    }
}

pub fn time_axis(len: usize, dt: f64) -> Vec<f64> {
    (0..len).map(|i| i as f64 * dt).collect()
}

/// Wraps a phase into `(-pi, pi]`.
pub fn normalize_phase(phi: f64) -> Result<f64> {
    if !phi.is_finite() {
        return Err(MemgError::InvalidInput(format!("phase {phi} is not finite")));
    }
    Ok(wrap_phase(phi))
}

pub(crate) fn wrap_phase(phi: f64) -> f64 {
    if phi > -PI && phi <= PI {
        return phi;
    }
    let mut r = phi.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

fn check_component(p: &EchoParams) -> Result<()> {
    if !p.is_finite() {
        return Err(MemgError::InvalidInput(format!(
            "non-finite component parameters {p:?}"
        )));
    }
    if p.sigma.abs() < SIGMA_FLOOR {
        return Err(MemgError::DegenerateSpread(p.sigma.abs()));
    }
    Ok(())
}

fn check_axis(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(MemgError::InvalidInput(format!(
            "time axis sample {i} is not finite"
        ))),
        None => Ok(()),
    }
}

#[inline]
fn component_value(p: &EchoParams, x: f64, oscillating: bool) -> f64 {
    let d = x - p.mu;
    let u = d / p.sigma;
    if u.abs() > SUPPORT_RADIUS {
        return 0.0;
    }
    let gauss = (-0.5 * u * u).exp();
    let skew = 1.0 + libm::erf(p.eta * u / SQRT_2);
    let carrier = if oscillating {
        (2.0 * PI * p.freq * d + p.phase).cos()
    } else {
        1.0
    };
    p.alpha * gauss * skew * carrier
}

/// Value and all six analytic partials of one component at `x`.
#[inline]
pub(crate) fn component_partials(p: &EchoParams, x: f64, oscillating: bool) -> (f64, [f64; DIM]) {
    let d = x - p.mu;
    let u = d / p.sigma;
    if u.abs() > SUPPORT_RADIUS {
        return (0.0, [0.0; DIM]);
    }
    let gauss = (-0.5 * u * u).exp();
    let s = p.eta * u / SQRT_2;
    let skew = 1.0 + libm::erf(s);
    // exact derivative of erf, not of any approximation
    let dskew_ds = TWO_OVER_SQRT_PI * (-s * s).exp();
    let (carrier, dcarrier_dtheta) = if oscillating {
        let theta = 2.0 * PI * p.freq * d + p.phase;
        (theta.cos(), -theta.sin())
    } else {
        (1.0, 0.0)
    };

    let env = gauss * skew;
    let value = p.alpha * env * carrier;

    let d_alpha = env * carrier;
    // d/dmu: gauss' = gauss*u/sigma, skew' = dskew_ds * (-eta/(sigma*sqrt2)), theta' = -2 pi f
    let denv_dmu = gauss * (u / p.sigma) * skew - gauss * dskew_ds * p.eta / (p.sigma * SQRT_2);
    let d_mu = p.alpha * (denv_dmu * carrier + env * dcarrier_dtheta * (-2.0 * PI * p.freq));
    let denv_dsigma =
        gauss * (u * u / p.sigma) * skew - gauss * dskew_ds * p.eta * u / (p.sigma * SQRT_2);
    let d_sigma = p.alpha * denv_dsigma * carrier;
    let d_eta = p.alpha * gauss * dskew_ds * (u / SQRT_2) * carrier;
    let d_freq = p.alpha * env * dcarrier_dtheta * 2.0 * PI * d;
    let d_phase = p.alpha * env * dcarrier_dtheta;

    (value, [d_alpha, d_mu, d_sigma, d_eta, d_freq, d_phase])
}

/// Evaluates one component on `x`. With `oscillating = false` the carrier is
/// omitted, giving the envelope-only model.
pub fn eval_component(p: &EchoParams, x: &[f64], oscillating: bool) -> Result<Vec<f64>> {
    check_component(p)?;
    check_axis(x)?;
    Ok(x.iter()
        .map(|&xi| component_value(p, xi, oscillating))
        .collect())
}

/// Sum of all components, accumulated in component order.
pub fn eval_model(ps: &ParamSet, x: &[f64], oscillating: bool) -> Result<Vec<f64>> {
    if ps.is_empty() {
        return Err(MemgError::EmptyModel);
    }
    check_axis(x)?;
    let mut acc = vec![0.0; x.len()];
    for p in &ps.components {
        check_component(p)?;
        for (a, &xi) in acc.iter_mut().zip(x) {
            *a += component_value(p, xi, oscillating);
        }
    }
    Ok(acc)
}

/// Model Jacobian, `X x (K * active)`, columns in flattened order restricted
/// to the parameters selected by `mask`.
pub fn jacobian(
    ps: &ParamSet,
    x: &[f64],
    mask: ParamMask,
    oscillating: bool,
) -> Result<DMatrix<f64>> {
    let n_active = mask.count();
    if n_active == 0 {
        return Err(MemgError::NoFreeParameters);
    }
    if ps.is_empty() {
        return Err(MemgError::EmptyModel);
    }
    check_axis(x)?;
    let mut jac = DMatrix::zeros(x.len(), n_active * ps.len());
    for (k, p) in ps.components.iter().enumerate() {
        check_component(p)?;
        for (i, &xi) in x.iter().enumerate() {
            let (_, grad) = component_partials(p, xi, oscillating);
            for (c, param) in mask.active().enumerate() {
                jac[(i, k * n_active + c)] = grad[param as usize];
            }
        }
    }
    Ok(jac)
}

/// Index range of a uniform axis `i * dt` outside of which the component is
/// exactly zero.
pub(crate) fn support(p: &EchoParams, dt: f64, len: usize) -> std::ops::Range<usize> {
    let half = SUPPORT_RADIUS * p.sigma.abs();
    let lo = ((p.mu - half) / dt).floor();
    let hi = ((p.mu + half) / dt).ceil() + 1.0;
    let clamp = |v: f64| -> usize {
        if v.is_nan() || v <= 0.0 {
            0
        } else if v >= len as f64 {
            len
        } else {
            v as usize
        }
    };
    let (lo, hi) = (clamp(lo), clamp(hi));
    lo..hi.max(lo)
}

/// [`eval_model`] on a uniform axis, touching only each component's support.
/// Bit-identical to the dense evaluation.
pub(crate) fn eval_model_uniform(
    ps: &ParamSet,
    dt: f64,
    len: usize,
    oscillating: bool,
) -> Result<Vec<f64>> {
    if ps.is_empty() {
        return Err(MemgError::EmptyModel);
    }
    let mut acc = vec![0.0; len];
    for p in &ps.components {
        check_component(p)?;
        for i in support(p, dt, len) {
            acc[i] += component_value(p, i as f64 * dt, oscillating);
        }
    }
    Ok(acc)
}
