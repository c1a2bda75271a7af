//! Riemannian conjugate gradient on the unit sphere and on the (masked) oblique
//! manifold of unit-norm columns.
//!
//! Points and tangent vectors are stored as real matrices; a sphere point is a
//! single column. Search directions follow Polak–Ribière with a non-negative
//! clamp, transport is the tangent projection, and steps come from Armijo
//! backtracking along the normalization retraction.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, io_err, Error, Result};
use crate::linalg::{RMat, RVec};

/// `(I − xxᵀ)v`.
pub fn sphere_tangent_project(x: &RVec, v: &RVec) -> RVec {
    v - x * x.dot(v)
}

/// `(x + γd)/‖x + γd‖`.
pub fn sphere_retract(x: &RVec, d: &RVec, gamma: f64) -> Result<RVec> {
    let y = x + d * gamma;
    let n = y.norm();
    if !(n > 0.0) || !n.is_finite() {
        return domain("retraction reached the zero vector");
    }
    Ok(y / n)
}

/// `V − Λ·ddiag(ΛᵀV)`, then zeroed outside `mask`.
pub fn oblique_tangent_project(p: &RMat, v: &RMat, mask: Option<&RMat>) -> RMat {
    let mut out = v.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let pj = p.column(j);
        let radial = pj.dot(&v.column(j));
        col.axpy(-radial, &pj, 1.0);
    }
    if let Some(m) = mask {
        out.component_mul_assign(m);
    }
    out
}

/// Column-wise normalization of `P + γD`, mask re-applied.
pub fn oblique_retract(p: &RMat, d: &RMat, gamma: f64, mask: Option<&RMat>) -> Result<RMat> {
    let mut y = p + d * gamma;
    if let Some(m) = mask {
        y.component_mul_assign(m);
    }
    for mut col in y.column_iter_mut() {
        let n = col.norm();
        if !(n > 0.0) || !n.is_finite() {
            return domain("retraction produced a zero column");
        }
        col /= n;
    }
    Ok(y)
}

/// Block-diagonal 0/1 mask of an `(K·M) × M` matrix with all-ones `K`-blocks.
pub fn block_mask(k: usize, m: usize) -> RMat {
    RMat::from_fn(k * m, m, |r, c| if r / k == c { 1.0 } else { 0.0 })
}

/// `β = g_newᵀ(g_new − g_old)/‖g_old‖²`, clamped at zero; zero when `‖g_old‖² < 1e−300`.
pub fn polak_ribiere(g_new: &RMat, g_old_transported: &RMat) -> f64 {
    let denom = g_old_transported.norm_squared();
    if denom < 1e-300 {
        return 0.0;
    }
    let beta = g_new.dot(&(g_new - g_old_transported)) / denom;
    if beta.is_finite() {
        beta.max(0.0)
    } else {
        0.0
    }
}

/// Feasible set of the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub enum Manifold {
    /// Unit sphere in `R^K`; points are `K × 1`.
    Sphere,
    /// Matrices with unit-norm columns, optionally restricted to a 0/1 mask.
    Oblique { mask: Option<RMat> },
}

impl Manifold {
    pub fn project(&self, x: &RMat, v: &RMat) -> RMat {
        match self {
            Manifold::Sphere => v - x * x.dot(v),
            Manifold::Oblique { mask } => oblique_tangent_project(x, v, mask.as_ref()),
        }
    }

    pub fn retract(&self, x: &RMat, d: &RMat, gamma: f64) -> Result<RMat> {
        match self {
            Manifold::Sphere => {
                let y = x + d * gamma;
                let n = y.norm();
                if !(n > 0.0) || !n.is_finite() {
                    return domain("retraction reached the zero vector");
                }
                Ok(y / n)
            }
            Manifold::Oblique { mask } => oblique_retract(x, d, gamma, mask.as_ref()),
        }
    }

    /// Whether `x` lies on the manifold within `tol`.
    pub fn contains(&self, x: &RMat, tol: f64) -> bool {
        let masked_ok = match self {
            Manifold::Oblique { mask: Some(m) } => x.iter().zip(m.iter()).all(|(v, m)| *m != 0.0 || *v == 0.0),
            _ => true,
        };
        let norms_ok = match self {
            Manifold::Sphere => (x.norm() - 1.0).abs() <= tol,
            Manifold::Oblique { .. } => x.column_iter().all(|c| (c.norm() - 1.0).abs() <= tol),
        };
        masked_ok && norms_ok
    }

    /// A random tangent vector at `x` with unit Frobenius norm.
    pub fn random_tangent(&self, x: &RMat, rng: &mut impl Rng) -> RMat {
        let v = RMat::from_fn(x.nrows(), x.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let t = self.project(x, &v);
        let n = t.norm();
        if n > 0.0 {
            t / n
        } else {
            t
        }
    }
}

/// Armijo backtracking constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchParams {
    pub initial_step: f64,
    pub contraction: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        Self { initial_step: 1.0, contraction: 0.5, sufficient_decrease: 1e-4, max_backtracks: 20 }
    }
}

impl LineSearchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_step > 0.0) {
            return domain("initial step must be positive");
        }
        if !(self.contraction > 0.0 && self.contraction < 1.0) {
            return domain("contraction must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.sufficient_decrease) {
            return domain("sufficient-decrease constant must lie in [0, 1)");
        }
        if self.max_backtracks == 0 {
            return domain("need at least one backtrack");
        }
        Ok(())
    }
}

/// Result of one backtracking search.
#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    /// Accepted step, 0 on stagnation.
    pub step: f64,
    pub point: RMat,
    pub value: f64,
    /// The supplied direction was not a descent direction and was replaced by `−grad`.
    pub reset: bool,
    /// No decrease was found.
    pub stagnated: bool,
}

/// Armijo backtracking along `retract(x, γd)`.
///
/// The first trial step is `initial_step / max(1, ‖d‖)` so that a single trial
/// never moves further than the retraction can meaningfully represent. If no
/// step satisfies the sufficient-decrease test within `max_backtracks`, the best
/// strictly decreasing trial is taken instead; failing that, the step is 0.
pub fn armijo_search(
    objective: &dyn Fn(&RMat) -> f64,
    manifold: &Manifold,
    x: &RMat,
    fx: f64,
    grad: &RMat,
    direction: &RMat,
    params: &LineSearchParams,
) -> Result<LineSearchOutcome> {
    let mut d = direction.clone();
    let mut slope = grad.dot(&d);
    let mut reset = false;
    if !(slope < 0.0) {
        d = -grad;
        slope = -grad.norm_squared();
        reset = true;
    }
    let stuck = |reset| LineSearchOutcome { step: 0.0, point: x.clone(), value: fx, reset, stagnated: true };
    if !(slope < 0.0) {
        return Ok(stuck(reset));
    }
    let mut gamma = params.initial_step / d.norm().max(1.0);
    let mut best: Option<(f64, RMat, f64)> = None;
    for _ in 0..params.max_backtracks {
        if let Ok(y) = manifold.retract(x, &d, gamma) {
            let fy = objective(&y);
            if fy.is_nan() {
                return Err(Error::Numerical("objective returned NaN during line search".into()));
            }
            if fy <= fx + params.sufficient_decrease * gamma * slope {
                return Ok(LineSearchOutcome { step: gamma, point: y, value: fy, reset, stagnated: false });
            }
            if fy < fx && best.as_ref().is_none_or(|b| fy < b.2) {
                best = Some((gamma, y, fy));
            }
        }
        gamma *= params.contraction;
    }
    Ok(match best {
        Some((step, point, value)) => LineSearchOutcome { step, point, value, reset, stagnated: false },
        None => stuck(reset),
    })
}

/// Options of [`rcg_minimize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcgOptions {
    /// Relative-change threshold `|Δf / f|`.
    pub eta_th: f64,
    pub iota_max: usize,
    /// Stop when the Riemannian gradient norm falls below this.
    pub grad_tol: f64,
    pub line_search: LineSearchParams,
}

impl Default for RcgOptions {
    fn default() -> Self {
        Self { eta_th: 1e-4, iota_max: 200, grad_tol: 1e-12, line_search: LineSearchParams::default() }
    }
}

/// One row of the optimization trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub step: f64,
    pub grad_norm: f64,
}

/// What a single [`RcgState::step`] did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub before: f64,
    pub after: f64,
    pub step: f64,
    pub grad_norm: f64,
    pub stagnated: bool,
}

/// Mutable CG state: current point, last direction and last Riemannian gradient.
///
/// The objective is passed to every step, so callers that alternate with
/// another block (the digital precoder) can change it between steps.
#[derive(Debug, Clone)]
pub struct RcgState {
    pub manifold: Manifold,
    pub point: RMat,
    direction: Option<RMat>,
    prev_grad: Option<RMat>,
    pub iteration: usize,
    pub trace: Vec<TraceEntry>,
}

impl RcgState {
    pub fn new(manifold: Manifold, init: RMat) -> Result<Self> {
        if !manifold.contains(&init, 1e-10) {
            return domain("initial point is not on the manifold");
        }
        Ok(Self { manifold, point: init, direction: None, prev_grad: None, iteration: 0, trace: Vec::new() })
    }

    /// Forget the conjugate history (next step is steepest descent).
    pub fn restart(&mut self) {
        self.direction = None;
        self.prev_grad = None;
    }

    /// Moves the point without touching the history; used to roll back a rejected step.
    pub fn set_point(&mut self, point: RMat) {
        self.point = point;
    }

    /// One CG iteration. `f` returns the objective and its Euclidean gradient.
    pub fn step(
        &mut self,
        f: &dyn Fn(&RMat) -> (f64, RMat),
        value_only: &dyn Fn(&RMat) -> f64,
        params: &LineSearchParams,
    ) -> Result<StepInfo> {
        let (fx, egrad) = f(&self.point);
        if !fx.is_finite() || egrad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("non-finite objective or gradient at iteration {}", self.iteration)));
        }
        let grad = self.manifold.project(&self.point, &egrad);
        let grad_norm = grad.norm();
        let direction = match (&self.direction, &self.prev_grad) {
            (Some(d_old), Some(g_old)) => {
                let g_old_t = self.manifold.project(&self.point, g_old);
                let beta = polak_ribiere(&grad, &g_old_t);
                -&grad + self.manifold.project(&self.point, d_old) * beta
            }
            _ => -&grad,
        };
        let ls = armijo_search(value_only, &self.manifold, &self.point, fx, &grad, &direction, params)?;
        let used = if ls.reset { -&grad } else { direction };
        self.iteration += 1;
        self.trace.push(TraceEntry { iteration: self.iteration, objective: ls.value, step: ls.step, grad_norm });
        if ls.stagnated {
            self.restart();
        } else {
            self.direction = Some(used);
            self.prev_grad = Some(grad);
            self.point = ls.point;
        }
        Ok(StepInfo { before: fx, after: ls.value, step: ls.step, grad_norm, stagnated: ls.stagnated })
    }
}

/// Outcome of [`rcg_minimize`].
#[derive(Debug, Clone)]
pub struct RcgResult {
    pub point: RMat,
    pub value: f64,
    /// Entry 0 is the initial point.
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub converged: bool,
    pub stagnated: bool,
}

/// Minimizes `f` over `manifold` from `init`.
///
/// Stops when `|f_ι − f_{ι−1}| ≤ η_th·|f_ι|`, when the Riemannian gradient norm
/// drops below `grad_tol`, when the line search stagnates, or after `iota_max`
/// iterations.
pub fn rcg_minimize(
    f: &dyn Fn(&RMat) -> (f64, RMat),
    manifold: Manifold,
    init: RMat,
    options: &RcgOptions,
) -> Result<RcgResult> {
    options.line_search.validate()?;
    let value_only = |x: &RMat| f(x).0;
    let (f0, g0) = f(&init);
    if !f0.is_finite() {
        return Err(Error::Numerical("objective is not finite at the initial point".into()));
    }
    let mut state = RcgState::new(manifold, init)?;
    let mut trace =
        vec![TraceEntry { iteration: 0, objective: f0, step: 0.0, grad_norm: state.manifold.project(&state.point, &g0).norm() }];
    let mut converged = false;
    let mut stagnated = false;
    let mut value = f0;
    while state.iteration < options.iota_max {
        let info = state.step(f, &value_only, &options.line_search)?;
        trace.push(*state.trace.last().expect("step pushes a trace entry"));
        if info.grad_norm <= options.grad_tol {
            converged = true;
            break;
        }
        if info.stagnated {
            stagnated = true;
            break;
        }
        value = info.after;
        let scale = info.after.abs().max(f64::MIN_POSITIVE);
        if (info.after - info.before).abs() <= options.eta_th * scale {
            converged = true;
            break;
        }
    }
    if let Some(last) = trace.last() {
        value = last.objective.min(value);
    }
    Ok(RcgResult { point: state.point, value, iterations: state.iteration, trace, converged, stagnated })
}

/// Largest relative error between the Riemannian directional derivative
/// `⟨grad f, ξ⟩` and the central difference `(f(R(x, hξ)) − f(R(x, −hξ)))/2h`
/// over `directions` random unit tangent vectors.
pub fn check_gradient(
    f: &dyn Fn(&RMat) -> (f64, RMat),
    manifold: &Manifold,
    x: &RMat,
    directions: usize,
    h: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let (_, egrad) = f(x);
    let grad = manifold.project(x, &egrad);
    let scale = grad.norm().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let xi = manifold.random_tangent(x, rng);
        let analytic = grad.dot(&xi);
        let plus = f(&manifold.retract(x, &xi, h)?).0;
        let minus = f(&manifold.retract(x, &xi, -h)?).0;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    Ok(worst)
}

/// Writes `iteration,objective,step,grad_norm` rows.
pub fn write_trace_csv(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    if trace.is_empty() {
        w.write_record(["iteration", "objective", "step", "grad_norm"]).map_err(|e| Error::Parse(e.to_string()))?;
    }
    for t in trace {
        w.serialize(t).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}
