//! Damped least-squares (Levenberg-Marquardt) minimiser.
//!
//! Each iteration solves `(J^T J + delta D^T D) step = J^T f` where `J` is the
//! Jacobian of the residual vector `f` and `D = diag(J^T J)`, then proposes
//! `p - step`. Improving proposals are accepted and the damping is divided by
//! the damping factor; others are rejected and the damping is multiplied. The
//! returned iterate is the best accepted one, not merely the last.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MemgError, Result};
use crate::model::{
    self, component_partials, support, wrap_phase, Frame, Param, ParamMask, ParamSet,
};

/// How the damping term scales with the curvature diagonal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingScale {
    /// `D = diag(J^T J)`, so the damping adds `delta * diag(J^T J)^2`.
    SquaredDiagonal,
    /// Classic Marquardt scaling, adds `delta * diag(J^T J)`.
    Diagonal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub damping_init: f64,
    pub damping_factor: f64,
    /// Relative loss change below which an accepted step counts as stalled.
    pub loss_tol: f64,
    /// Number of consecutive stalled accepted steps that ends the run.
    pub stall_steps: usize,
    /// Infinity-norm of `J^T f` below which the run ends.
    pub grad_tol: f64,
    /// The run gives up once the damping exceeds this.
    pub damping_max: f64,
    pub damping_scale: DampingScale,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            max_iterations: 200,
            damping_init: 1e-2,
            damping_factor: 10.0,
            loss_tol: 1e-10,
            stall_steps: 3,
            grad_tol: 1e-10,
            damping_max: 1e12,
            damping_scale: DampingScale::SquaredDiagonal,
        }
    }
}

impl LmConfig {
    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(MemgError::InvalidInput("max_iterations must be >= 1".into()));
        }
        if !(self.damping_factor > 1.0) {
            return Err(MemgError::InvalidInput("damping_factor must be > 1".into()));
        }
        if !(self.damping_init > 0.0) {
            return Err(MemgError::InvalidInput("damping_init must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmRecord {
    pub iteration: usize,
    /// Loss of the proposal (or of the start point for iteration 0).
    pub loss: f64,
    /// Damping used to produce the proposal.
    pub damping: f64,
    pub accepted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIterations,
    LossTolerance,
    GradientTolerance,
    DampingOverflow,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::LossTolerance | Termination::GradientTolerance)
    }
}

/// Per-iteration history. Record 0 is the start point and counts as accepted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmTrace {
    pub records: Vec<LmRecord>,
    pub best_iteration: usize,
    pub termination: Termination,
}

impl LmTrace {
    pub fn initial_loss(&self) -> f64 {
        self.records[0].loss
    }

    pub fn best_loss(&self) -> f64 {
        self.records[self.best_iteration].loss
    }

    pub fn accepted_steps(&self) -> usize {
        self.records.iter().skip(1).filter(|r| r.accepted).count()
    }

    /// Describes the first breach of the descent contract: accepted losses
    /// strictly decrease and the best iterate attains their minimum.
    pub fn contract_violation(&self) -> Option<String> {
        let accepted: Vec<_> = self.records.iter().filter(|r| r.accepted).collect();
        if let Some(w) = accepted.windows(2).find(|w| !(w[1].loss < w[0].loss)) {
            return Some(format!(
                "accepted loss rose from {} to {} at iteration {}",
                w[0].loss, w[1].loss, w[1].iteration
            ));
        }
        let min = accepted.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
        (self.best_loss() != min)
            .then(|| format!("best loss {} differs from trace minimum {min}", self.best_loss()))
    }
}

/// A residual vector and its Jacobian.
pub trait LeastSquaresProblem {
    fn residuals(&self, params: &[f64]) -> Option<Vec<f64>>;

    /// Jacobian of [`LeastSquaresProblem::residuals`].
    fn jacobian(&self, params: &[f64]) -> Option<DMatrix<f64>>;

    /// `(J^T J, J^T f)`.
    fn normal_equations(
        &self,
        params: &[f64],
        residuals: &[f64],
    ) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let jac = self.jacobian(params)?;
        let f = DVector::from_column_slice(residuals);
        Some((jac.tr_mul(&jac), jac.tr_mul(&f)))
    }

    /// Maps a proposal back into the feasible parametrisation.
    fn project(&self, _params: &mut [f64]) {}
}

pub(crate) fn sum_squares(v: &[f64]) -> f64 {
    v.iter().map(|r| r * r).sum()
}

/// Solves the damped normal equations for the step subtracted from `p`.
pub fn damped_step(
    jtj: &DMatrix<f64>,
    jtf: &DVector<f64>,
    damping: f64,
    scale: DampingScale,
) -> Result<DVector<f64>> {
    let mut a = jtj.clone();
    for i in 0..a.nrows() {
        let d = jtj[(i, i)];
        a[(i, i)] += match scale {
            DampingScale::SquaredDiagonal => damping * d * d,
            DampingScale::Diagonal => damping * d,
        };
    }
    if !a.iter().all(|v: &f64| v.is_finite()) {
        return Err(MemgError::SingularSystem);
    }
    if let Some(chol) = a.clone().cholesky() {
        let step = chol.solve(jtf);
        if step.iter().all(|v: &f64| v.is_finite()) {
            return Ok(step);
        }
    }
    // rank-revealing fallback: truncated pseudo-inverse
    let n = a.nrows();
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) || !smax.is_finite() {
        return Err(MemgError::SingularSystem);
    }
    let step = svd
        .solve(jtf, smax * f64::EPSILON * n as f64)
        .map_err(|_| MemgError::SingularSystem)?;
    if step.iter().all(|v: &f64| v.is_finite()) {
        Ok(step)
    } else {
        Err(MemgError::SingularSystem)
    }
}

/// Runs the damped iteration on an arbitrary problem.
pub fn minimize_problem<P: LeastSquaresProblem>(
    problem: &P,
    start: &[f64],
    cfg: &LmConfig,
) -> Result<(Vec<f64>, LmTrace)> {
    cfg.validate()?;
    let mut params = start.to_vec();
    let mut resid = problem.residuals(&params).ok_or(MemgError::InvalidStart)?;
    let mut loss = sum_squares(&resid);
    if !loss.is_finite() {
        return Err(MemgError::InvalidStart);
    }
    let mut damping = cfg.damping_init;
    let mut records = vec![LmRecord {
        iteration: 0,
        loss,
        damping,
        accepted: true,
    }];
    let mut accepted_params: Vec<(usize, Vec<f64>)> = vec![(0, params.clone())];
    let mut stalled = 0;
    let mut termination = Termination::MaxIterations;
    let mut normal: Option<(DMatrix<f64>, DVector<f64>)> = None;

    for iteration in 1..=cfg.max_iterations {
        if normal.is_none() {
            normal = problem.normal_equations(&params, &resid);
        }
        let Some((jtj, jtf)) = normal.as_ref() else {
            termination = Termination::DampingOverflow;
            break;
        };
        if loss == 0.0 || jtf.amax() < cfg.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }

        let proposal = damped_step(jtj, jtf, damping, cfg.damping_scale).ok().and_then(|step| {
            let mut cand: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p - s).collect();
            problem.project(&mut cand);
            let r = problem.residuals(&cand)?;
            let l = sum_squares(&r);
            l.is_finite().then_some((cand, r, l))
        });

        match proposal {
            Some((cand, r, l)) if l < loss => {
                records.push(LmRecord {
                    iteration,
                    loss: l,
                    damping,
                    accepted: true,
                });
                let rel = (loss - l) / loss;
                params = cand;
                resid = r;
                loss = l;
                normal = None;
                accepted_params.push((records.len() - 1, params.clone()));
                damping /= cfg.damping_factor;
                stalled = if rel < cfg.loss_tol { stalled + 1 } else { 0 };
                if stalled >= cfg.stall_steps {
                    termination = Termination::LossTolerance;
                    break;
                }
            }
            other => {
                records.push(LmRecord {
                    iteration,
                    loss: other.map_or(f64::INFINITY, |(_, _, l)| l),
                    damping,
                    accepted: false,
                });
                damping *= cfg.damping_factor;
                if damping > cfg.damping_max {
                    termination = Termination::DampingOverflow;
                    break;
                }
            }
        }
    }

    let (best_iteration, best) = accepted_params
        .into_iter()
        .min_by(|a, b| records[a.0].loss.total_cmp(&records[b.0].loss).then(a.0.cmp(&b.0)))
        .expect("start point is always recorded");
    Ok((
        best,
        LmTrace {
            records,
            best_iteration,
            termination,
        },
    ))
}

/// Least-squares fit of the echo model to one target frame, with the
/// parameters outside `mask` held fixed.
pub struct EchoProblem<'a> {
    target: &'a Frame,
    template: ParamSet,
    mask: ParamMask,
    oscillating: bool,
    n_active: usize,
}

impl<'a> EchoProblem<'a> {
    pub fn new(
        target: &'a Frame,
        template: &ParamSet,
        mask: ParamMask,
        oscillating: bool,
    ) -> Result<Self> {
        let n_active = mask.count();
        if n_active == 0 {
            return Err(MemgError::NoFreeParameters);
        }
        if template.is_empty() {
            return Err(MemgError::EmptyModel);
        }
        if target.is_empty() {
            return Err(MemgError::InvalidInput("empty frame".into()));
        }
        Ok(EchoProblem {
            target,
            template: template.clone(),
            mask,
            oscillating,
            n_active,
        })
    }

    pub fn start(&self) -> Vec<f64> {
        self.template.active_values(self.mask)
    }

    pub fn param_set(&self, active: &[f64]) -> ParamSet {
        let mut ps = self.template.clone();
        ps.set_active_values(self.mask, active);
        ps
    }

    fn slot(&self, param: Param) -> Option<usize> {
        self.mask.active().position(|p| p == param)
    }
}

impl LeastSquaresProblem for EchoProblem<'_> {
    fn residuals(&self, params: &[f64]) -> Option<Vec<f64>> {
        let ps = self.param_set(params);
        let model =
            model::eval_model_uniform(&ps, self.target.dt, self.target.len(), self.oscillating)
                .ok()?;
        Some(
            self.target
                .samples
                .iter()
                .zip(&model)
                .map(|(y, m)| y - m)
                .collect(),
        )
    }

    fn jacobian(&self, params: &[f64]) -> Option<DMatrix<f64>> {
        let ps = self.param_set(params);
        let jac = model::jacobian(&ps, &self.target.time_axis(), self.mask, self.oscillating).ok()?;
        Some(-jac)
    }

    fn normal_equations(
        &self,
        params: &[f64],
        residuals: &[f64],
    ) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let ps = self.param_set(params);
        let dt = self.target.dt;
        let len = self.target.len();
        let na = self.n_active;
        let active: Vec<Param> = self.mask.active().collect();

        // per-component Jacobian blocks over their exact support
        let blocks: Vec<(std::ops::Range<usize>, Vec<f64>)> = ps
            .components
            .iter()
            .map(|p| {
                let range = support(p, dt, len);
                let mut block = Vec::with_capacity(range.len() * na);
                for i in range.clone() {
                    let (_, grad) = component_partials(p, i as f64 * dt, self.oscillating);
                    block.extend(active.iter().map(|a| grad[*a as usize]));
                }
                (range, block)
            })
            .collect();

        let n = na * ps.len();
        let mut jtj = DMatrix::zeros(n, n);
        let mut jtf = DVector::zeros(n);
        for (k, (rk, bk)) in blocks.iter().enumerate() {
            for (row, i) in rk.clone().enumerate() {
                let gk = &bk[row * na..(row + 1) * na];
                // residual Jacobian is the negated model Jacobian
                for a in 0..na {
                    jtf[k * na + a] -= gk[a] * residuals[i];
                }
            }
            for (l, (rl, bl)) in blocks.iter().enumerate().skip(k) {
                let lo = rk.start.max(rl.start);
                let hi = rk.end.min(rl.end);
                for i in lo..hi.max(lo) {
                    let gk = &bk[(i - rk.start) * na..(i - rk.start + 1) * na];
                    let gl = &bl[(i - rl.start) * na..(i - rl.start + 1) * na];
                    for a in 0..na {
                        for b in 0..na {
                            jtj[(k * na + a, l * na + b)] += gk[a] * gl[b];
                        }
                    }
                }
                if l != k {
                    for a in 0..na {
                        for b in 0..na {
                            jtj[(l * na + b, k * na + a)] = jtj[(k * na + a, l * na + b)];
                        }
                    }
                }
            }
        }
        if jtj.iter().chain(jtf.iter()).all(|v: &f64| v.is_finite()) {
            Some((jtj, jtf))
        } else {
            None
        }
    }

    fn project(&self, params: &mut [f64]) {
        let na = self.n_active;
        let sigma = self.slot(Param::Sigma);
        let eta = self.slot(Param::Eta);
        let phase = self.slot(Param::Phase);
        for chunk in params.chunks_exact_mut(na) {
            if let Some(s) = sigma {
                if chunk[s] < 0.0 {
                    // (sigma, eta) -> (-sigma, -eta) leaves the model unchanged
                    chunk[s] = -chunk[s];
                    if let Some(e) = eta {
                        chunk[e] = -chunk[e];
                    }
                }
            }
            if let Some(ph) = phase {
                if chunk[ph].is_finite() {
                    chunk[ph] = wrap_phase(chunk[ph]);
                }
            }
        }
    }
}

/// `y - M(ps; x)` for one frame.
pub fn residual(ps: &ParamSet, frame: &Frame, oscillating: bool) -> Result<Vec<f64>> {
    if frame.is_empty() {
        return Err(MemgError::InvalidInput("empty frame".into()));
    }
    let model = model::eval_model_uniform(ps, frame.dt, frame.len(), oscillating)?;
    Ok(frame.samples.iter().zip(&model).map(|(y, m)| y - m).collect())
}

/// Residual against an explicit time axis, which must match the frame length.
pub fn residual_on_axis(
    ps: &ParamSet,
    frame: &Frame,
    x: &[f64],
    oscillating: bool,
) -> Result<Vec<f64>> {
    if x.len() != frame.len() {
        return Err(MemgError::Shape {
            expected: frame.len(),
            actual: x.len(),
        });
    }
    let model = model::eval_model(ps, x, oscillating)?;
    Ok(frame.samples.iter().zip(&model).map(|(y, m)| y - m).collect())
}

/// Squared l2 norm of the residual.
pub fn loss(ps: &ParamSet, frame: &Frame, oscillating: bool) -> Result<f64> {
    Ok(sum_squares(&residual(ps, frame, oscillating)?))
}

/// One undamped-acceptance step: returns the proposal and the step vector
/// (over the active parameters) that was subtracted.
pub fn lm_step(
    ps: &ParamSet,
    frame: &Frame,
    damping: f64,
    mask: ParamMask,
    oscillating: bool,
    scale: DampingScale,
) -> Result<(ParamSet, Vec<f64>)> {
    if !(damping >= 0.0) {
        return Err(MemgError::InvalidInput("damping must be non-negative".into()));
    }
    let problem = EchoProblem::new(frame, ps, mask, oscillating)?;
    let start = problem.start();
    let resid = problem.residuals(&start).ok_or(MemgError::InvalidStart)?;
    let (jtj, jtf) = problem
        .normal_equations(&start, &resid)
        .ok_or(MemgError::SingularSystem)?;
    let step = damped_step(&jtj, &jtf, damping, scale)?;
    let mut cand: Vec<f64> = start.iter().zip(step.iter()).map(|(p, s)| p - s).collect();
    problem.project(&mut cand);
    Ok((problem.param_set(&cand), step.iter().copied().collect()))
}

/// Fits the parameters selected by `mask`, returning the best iterate.
pub fn minimize(
    ps0: &ParamSet,
    frame: &Frame,
    cfg: &LmConfig,
    mask: ParamMask,
    oscillating: bool,
) -> Result<(ParamSet, LmTrace)> {
    let problem = EchoProblem::new(frame, ps0, mask, oscillating)?;
    let (best, trace) = minimize_problem(&problem, &problem.start(), cfg)?;
    Ok((problem.param_set(&best), trace))
}
