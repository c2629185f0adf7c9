//! Fit confidences, outlier rejection and feature standardization.

use serde::{Deserialize, Serialize};

use crate::error::{MemgError, Result};
use crate::model::{self, EchoParams, Frame, ParamSet};
use crate::staged::FitResult;

/// Lower bound on residual norms; confidences are capped at its inverse.
pub const CONFIDENCE_EPS: f64 = 1e-12;

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn inverse_norm(n: f64) -> f64 {
    1.0 / n.max(CONFIDENCE_EPS)
}

/// Inverse distance between the max-normalized model and data. A model with
/// no positive sample is compared unscaled.
pub fn frame_confidence_of(model: &[f64], data: &[f64]) -> Result<f64> {
    if model.len() != data.len() {
        return Err(MemgError::Shape {
            expected: data.len(),
            actual: model.len(),
        });
    }
    let ymax = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(ymax > 0.0) {
        return Err(MemgError::UndefinedConfidence(
            "frame has no positive sample".into(),
        ));
    }
    let mmax = model.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mscale = if mmax > 0.0 { 1.0 / mmax } else { 1.0 };
    Ok(inverse_norm(norm(
        model.iter().zip(data).map(|(m, y)| m * mscale - y / ymax),
    )))
}

/// Sample indices of `x` inside `[mu - 5|sigma|, mu + 5|sigma|]`.
pub fn confidence_window(x: &[f64], p: &EchoParams) -> std::ops::Range<usize> {
    let half = 5.0 * p.sigma.abs();
    let lo = x.partition_point(|t| *t < p.mu - half);
    let hi = x.partition_point(|t| *t <= p.mu + half);
    lo..hi.max(lo)
}

/// Inverse residual norm of the full model over one component's window.
pub fn component_confidence_of(
    model: &[f64],
    data: &[f64],
    x: &[f64],
    p: &EchoParams,
) -> Result<f64> {
    let w = confidence_window(x, p);
    if w.is_empty() {
        return Err(MemgError::EmptyWindow(0));
    }
    Ok(inverse_norm(norm(w.map(|i| model[i] - data[i]))))
}

fn fit_model(fit: &FitResult, frame: &Frame) -> Result<Vec<f64>> {
    if fit.params.is_empty() {
        return Ok(vec![0.0; frame.len()]);
    }
    model::eval_model_uniform(&fit.params, frame.dt, frame.len(), fit.oscillating)
}

pub fn frame_confidence(fit: &FitResult, frame: &Frame) -> Result<f64> {
    frame_confidence_of(&fit_model(fit, frame)?, &frame.samples)
}

pub fn component_confidence(fit: &FitResult, frame: &Frame, k: usize) -> Result<f64> {
    let p = fit.params.components.get(k).ok_or_else(|| {
        MemgError::InvalidInput(format!(
            "component {k} out of range for {} components",
            fit.params.len()
        ))
    })?;
    component_confidence_of(&fit_model(fit, frame)?, &frame.samples, &frame.time_axis(), p)
        .map_err(|e| match e {
            MemgError::EmptyWindow(_) => MemgError::EmptyWindow(k),
            e => e,
        })
}

/// Drops components with negative position or spread, or a position past
/// `frame_end` (ms). Returns the survivors in order and the dropped indices.
pub fn reject_outliers(ps: &ParamSet, frame_end: Option<f64>) -> (ParamSet, Vec<usize>) {
    let mut kept = Vec::with_capacity(ps.len());
    let mut rejected = Vec::new();
    for (k, p) in ps.components.iter().enumerate() {
        let beyond = frame_end.is_some_and(|end| p.mu > end);
        if p.mu < 0.0 || p.sigma < 0.0 || beyond || !p.is_finite() {
            rejected.push(k);
        } else {
            kept.push(*p);
        }
    }
    (ParamSet::new(kept, ps.frame_index), rejected)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Alpha,
    Mu,
    Sigma,
    Eta,
    Freq,
    Phase,
    Conf,
}

impl Feature {
    pub const ALL: [Feature; 7] = [
        Feature::Alpha,
        Feature::Mu,
        Feature::Sigma,
        Feature::Eta,
        Feature::Freq,
        Feature::Phase,
        Feature::Conf,
    ];

    /// Skew, spread and component confidence.
    pub const HEADLINE: [Feature; 3] = [Feature::Sigma, Feature::Eta, Feature::Conf];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Alpha => "alpha",
            Feature::Mu => "mu",
            Feature::Sigma => "sigma",
            Feature::Eta => "eta",
            Feature::Freq => "freq",
            Feature::Phase => "phase",
            Feature::Conf => "conf",
        }
    }

    pub fn parse(s: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// One retained component, as stored in feature CSV files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub frame: usize,
    pub k: usize,
    pub alpha: f64,
    pub mu: f64,
    pub sigma: f64,
    pub eta: f64,
    pub freq: f64,
    pub phase: f64,
    pub conf: f64,
    /// 1 for the target reflector, 0 for clutter.
    pub label: usize,
}

impl FeatureRecord {
    pub fn new(frame: usize, k: usize, p: &EchoParams, conf: f64, label: usize) -> Self {
        FeatureRecord {
            frame,
            k,
            alpha: p.alpha,
            mu: p.mu,
            sigma: p.sigma,
            eta: p.eta,
            freq: p.freq,
            phase: p.phase,
            conf,
            label,
        }
    }

    pub fn get(&self, f: Feature) -> f64 {
        match f {
            Feature::Alpha => self.alpha,
            Feature::Mu => self.mu,
            Feature::Sigma => self.sigma,
            Feature::Eta => self.eta,
            Feature::Freq => self.freq,
            Feature::Phase => self.phase,
            Feature::Conf => self.conf,
        }
    }
}

/// Feature records from a fit after outlier rejection. Components without a
/// defined confidence are dropped; `label` assigns classes from parameters.
pub fn records_from_fit(
    fit: &FitResult,
    frame_end: Option<f64>,
    label: impl Fn(&EchoParams) -> usize,
) -> Vec<FeatureRecord> {
    fit.params
        .components
        .iter()
        .zip(&fit.component_confidences)
        .enumerate()
        .filter_map(|(k, (p, c))| {
            let (kept, _) = reject_outliers(&ParamSet::new(vec![*p], 0), frame_end);
            match (kept.is_empty(), c) {
                (false, Some(c)) => Some(FeatureRecord::new(
                    fit.params.frame_index,
                    k,
                    p,
                    *c,
                    label(p),
                )),
                _ => None,
            }
        })
        .collect()
}

/// Column means and sample standard deviations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Selected feature columns of a set of records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub columns: Vec<Feature>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub frames: Vec<usize>,
    /// Statistics the rows were standardized with, if any.
    pub scaling: Option<Scaling>,
}

impl FeatureMatrix {
    pub fn from_records(records: &[FeatureRecord], columns: &[Feature]) -> Self {
        FeatureMatrix {
            columns: columns.to_vec(),
            rows: records
                .iter()
                .map(|r| columns.iter().map(|c| r.get(*c)).collect())
                .collect(),
            labels: records.iter().map(|r| r.label).collect(),
            frames: records.iter().map(|r| r.frame).collect(),
            scaling: None,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        FeatureMatrix {
            columns: self.columns.clone(),
            rows: idx.iter().map(|i| self.rows[*i].clone()).collect(),
            labels: idx.iter().map(|i| self.labels[*i]).collect(),
            frames: idx.iter().map(|i| self.frames[*i]).collect(),
            scaling: self.scaling.clone(),
        }
    }

    /// Column statistics with an `n - 1` denominator.
    pub fn statistics(&self) -> Result<Scaling> {
        let n = self.len();
        if n < 2 {
            return Err(MemgError::InvalidInput(format!(
                "standardization needs at least 2 rows, got {n}"
            )));
        }
        let mut mean = Vec::with_capacity(self.n_features());
        let mut sd = Vec::with_capacity(self.n_features());
        for (j, c) in self.columns.iter().enumerate() {
            let col = self.column(j);
            let m = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
            let s = v.sqrt();
            if !(s > 0.0) || !s.is_finite() {
                return Err(MemgError::DegenerateFeature(c.name().into()));
            }
            mean.push(m);
            sd.push(s);
        }
        Ok(Scaling { mean, sd })
    }

    /// Applies `(x - mean) / sd` columnwise with the given statistics.
    pub fn scaled_with(&self, scaling: &Scaling) -> Result<Self> {
        if scaling.mean.len() != self.n_features() || scaling.sd.len() != self.n_features() {
            return Err(MemgError::Shape {
                expected: self.n_features(),
                actual: scaling.mean.len(),
            });
        }
        let rows = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .zip(scaling.mean.iter().zip(&scaling.sd))
                    .map(|(x, (m, s))| (x - m) / s)
                    .collect()
            })
            .collect();
        Ok(FeatureMatrix {
            rows,
            scaling: Some(scaling.clone()),
            ..self.clone()
        })
    }
}

/// Standardizes every column with the matrix's own statistics, which are kept
/// for scaling held-out rows.
pub fn standardize(features: &FeatureMatrix) -> Result<FeatureMatrix> {
    features.scaled_with(&features.statistics()?)
}
