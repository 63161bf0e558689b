//! Generic MM driver.
//!
//! A problem supplies its objective and the minimizer of its surrogate at a
//! given anchor. [`run_mm`] iterates, optionally with restarted Nesterov
//! extrapolation, and stops on the relative change
//! `|f_m - f_{m-1}| / (|f_{m-1}| + 1) < tol`.

use std::path::PathBuf;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::decompose::FactorTally;
use crate::error::{MmError, Result};

/// Slack used when testing `f_new <= f_old`.
pub const DESCENT_SLACK: f64 = 1e-12;

/// True when `f_new` does not exceed `f_old` beyond rounding.
pub fn is_descent(f_old: f64, f_new: f64) -> bool {
    f_new <= f_old + DESCENT_SLACK * (1.0 + f_old.abs())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MMOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub accelerate: bool,
    /// Accumulate gradient norms when the problem can supply gradients.
    pub trace_gradients: bool,
    /// Write a per-iteration CSV trace here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<PathBuf>,
}

impl Default for MMOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 10_000, accelerate: false, trace_gradients: false, trace_path: None }
    }
}

impl MMOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(MmError::domain(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn accelerated(mut self, on: bool) -> Self {
        self.accelerate = on;
        self
    }
}

/// Objective plus surrogate minimizer.
pub trait MmProblem {
    fn objective(&mut self, beta: &DVector<f64>) -> f64;

    /// Minimizer of the surrogate anchored at `anchor`.
    fn surrogate_argmin(&mut self, anchor: &DVector<f64>) -> Result<DVector<f64>>;

    /// Gradient of the objective, when the problem is smooth.
    fn gradient(&mut self, _beta: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }

    /// Uniform Lipschitz constant of the surrogate gradients.
    fn lipschitz(&self) -> Option<f64> {
        None
    }

    /// Strong convexity constant of the objective.
    fn strong_convexity(&self) -> Option<f64> {
        None
    }

    /// Value of the surrogate at `beta` anchored at `anchor`, up to nothing:
    /// implementors include the constant so that it touches the objective.
    fn surrogate_value(&mut self, _beta: &DVector<f64>, _anchor: &DVector<f64>) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MMState {
    pub beta: DVector<f64>,
    pub beta_prev: DVector<f64>,
    pub iter: usize,
    pub objective_history: Vec<f64>,
    pub nesterov_counter: usize,
    pub restarts: usize,
}

impl MMState {
    pub fn new(init: DVector<f64>, f0: f64) -> Self {
        Self {
            beta_prev: init.clone(),
            beta: init,
            iter: 0,
            objective_history: vec![f0],
            nesterov_counter: 1,
            restarts: 0,
        }
    }

    pub fn last_objective(&self) -> f64 {
        *self.objective_history.last().expect("history is never empty")
    }

    fn accept(&mut self, beta: DVector<f64>, f: f64) {
        self.beta_prev = std::mem::replace(&mut self.beta, beta);
        self.objective_history.push(f);
        self.iter += 1;
        self.nesterov_counter += 1;
    }
}

/// `beta_m + (m - 1) / (m + 2) (beta_m - beta_{m-1})` with `m` the Nesterov counter.
pub fn nesterov_anchor(state: &MMState) -> DVector<f64> {
    let m = state.nesterov_counter.max(1) as f64;
    let c = (m - 1.0) / (m + 2.0);
    if c == 0.0 {
        return state.beta.clone();
    }
    &state.beta + (&state.beta - &state.beta_prev) * c
}

/// Resets momentum when `f_new` exceeds the last accepted objective.
/// Ties count as descent.
pub fn maybe_restart(state: &mut MMState, f_new: f64) -> bool {
    let last = state.last_objective();
    if f_new > last || f_new.is_nan() {
        state.nesterov_counter = 1;
        state.restarts += 1;
        true
    } else {
        false
    }
}

/// Heiser-Kiers shifted responses `w y + (1 - w) mu`.
pub fn deweight(y: &DVector<f64>, mu_current: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() != mu_current.len() || y.len() != w.len() {
        return Err(MmError::domain("deweight needs equal-length vectors"));
    }
    if let Some(bad) = w.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
        return Err(MmError::domain(format!("weight {bad} outside [0, 1]; rescale by the maximum weight first")));
    }
    Ok(y.zip_zip_map(mu_current, w, |yi, mi, wi| wi * yi + (1.0 - wi) * mi))
}

/// Divides by the largest weight.
pub fn rescale_weights(w: &DVector<f64>) -> Result<DVector<f64>> {
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(MmError::domain("weights must be finite and nonnegative"));
    }
    let wmax = w.max();
    if !(wmax > 0.0) {
        return Err(MmError::domain("all weights are zero"));
    }
    Ok(w / wmax)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConvergenceDiagnostics {
    pub grad_norm_sq_sum: f64,
    pub lipschitz_l: Option<f64>,
    pub strong_mu: Option<f64>,
    pub rate_bound_violations: usize,
    /// Accepted steps whose objective rose beyond rounding slack.
    pub descent_violations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the initial point followed by every accepted iterate.
    pub history: Vec<f64>,
    /// Indices into `history` where a new annealing stage begins.
    pub stage_breaks: Vec<usize>,
    pub restarts: usize,
    pub factorizations: FactorTally,
    pub diagnostics: ConvergenceDiagnostics,
    pub warnings: Vec<String>,
}

impl FitResult {
    /// Each annealing stage's slice of the history.
    pub fn stages(&self) -> Vec<&[f64]> {
        let mut cuts = vec![0];
        cuts.extend(self.stage_breaks.iter().copied().filter(|&b| b > 0 && b < self.history.len()));
        cuts.push(self.history.len());
        cuts.windows(2).map(|w| &self.history[w[0]..w[1]]).filter(|s| !s.is_empty()).collect()
    }

    /// Number of within-stage steps that increase the objective.
    pub fn count_descent_violations(&self) -> usize {
        self.stages().iter().map(|s| s.windows(2).filter(|w| !is_descent(w[0], w[1])).count()).sum()
    }

    /// Appends a later stage's history, recording the boundary.
    pub(crate) fn absorb_stage(&mut self, next: FitResult) {
        if !self.history.is_empty() {
            self.stage_breaks.push(self.history.len());
        }
        let offset = self.history.len();
        self.history.extend(next.history);
        self.stage_breaks.extend(next.stage_breaks.into_iter().map(|b| b + offset));
        self.beta = next.beta;
        self.objective = next.objective;
        self.iterations += next.iterations;
        self.converged = next.converged;
        self.restarts += next.restarts;
        self.diagnostics.descent_violations += next.diagnostics.descent_violations;
        self.diagnostics.grad_norm_sq_sum += next.diagnostics.grad_norm_sq_sum;
        self.warnings.extend(next.warnings);
    }

    pub(crate) fn empty(beta: DVector<f64>) -> Self {
        Self {
            beta,
            objective: f64::NAN,
            iterations: 0,
            converged: false,
            history: Vec::new(),
            stage_breaks: Vec::new(),
            restarts: 0,
            factorizations: FactorTally::default(),
            diagnostics: ConvergenceDiagnostics::default(),
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub(crate) struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: Option<f64>,
    pub restarted: u8,
}

fn numerical(iter: usize, beta: &DVector<f64>, f: f64) -> MmError {
    MmError::Numerical { iter, message: format!("objective is {f}"), snapshot: beta.iter().copied().collect() }
}

/// Runs the MM iteration from `init`.
pub fn run_mm<P: MmProblem + ?Sized>(problem: &mut P, init: DVector<f64>, opts: &MMOptions) -> Result<FitResult> {
    opts.validate()?;
    let f0 = problem.objective(&init);
    if !f0.is_finite() {
        return Err(numerical(0, &init, f0));
    }
    let want_grad = opts.trace_gradients || opts.trace_path.is_some();
    let mut grad_sum = 0.0;
    let grad_norm = |p: &mut P, b: &DVector<f64>, sum: &mut f64| -> Option<f64> {
        if !want_grad {
            return None;
        }
        p.gradient(b).map(|g| {
            let s = g.norm_squared();
            *sum += s;
            s.sqrt()
        })
    };
    let mut trace = Vec::new();
    let g0 = grad_norm(problem, &init, &mut grad_sum);
    trace.push(TraceRow { iter: 0, objective: f0, grad_norm: g0, restarted: 0 });

    let mut state = MMState::new(init, f0);
    let mut converged = false;
    let mut descent_violations = 0;
    for m in 1..=opts.max_iter {
        let momentum = opts.accelerate && state.nesterov_counter > 1;
        let anchor = if momentum { nesterov_anchor(&state) } else { state.beta.clone() };
        let mut cand = problem.surrogate_argmin(&anchor)?;
        let mut f_new = problem.objective(&cand);
        let mut restarted = false;
        if momentum && (!f_new.is_finite() || f_new > state.last_objective()) {
            maybe_restart(&mut state, if f_new.is_finite() { f_new } else { f64::INFINITY });
            restarted = true;
            cand = problem.surrogate_argmin(&state.beta)?;
            f_new = problem.objective(&cand);
        }
        if !f_new.is_finite() {
            return Err(numerical(m, &cand, f_new));
        }
        let f_old = state.last_objective();
        if !is_descent(f_old, f_new) {
            descent_violations += 1;
        }
        state.accept(cand, f_new);
        let g = grad_norm(problem, &state.beta, &mut grad_sum);
        trace.push(TraceRow { iter: m, objective: f_new, grad_norm: g, restarted: u8::from(restarted) });
        if (f_old - f_new).abs() / (f_old.abs() + 1.0) < opts.tol {
            converged = true;
            break;
        }
    }

    if let Some(path) = &opts.trace_path {
        write_trace(path, &trace)?;
    }

    let diagnostics = ConvergenceDiagnostics {
        grad_norm_sq_sum: grad_sum,
        lipschitz_l: problem.lipschitz(),
        strong_mu: problem.strong_convexity(),
        rate_bound_violations: 0,
        descent_violations,
    };
    let objective = state.last_objective();
    Ok(FitResult {
        beta: state.beta,
        objective,
        iterations: state.iter,
        converged,
        history: state.objective_history,
        stage_breaks: Vec::new(),
        restarts: state.restarts,
        factorizations: FactorTally::default(),
        diagnostics,
        warnings: Vec::new(),
    })
}

pub(crate) fn write_trace(path: &std::path::Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// How well a surrogate majorizes its objective at one anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateGaps {
    /// `|g(a | a) - f(a)|`.
    pub touch: f64,
    /// Largest `f(b) - g(b | a)` over the probes; nonpositive for a majorizer.
    pub excess: f64,
}

/// Audits the surrogate anchored at `anchor` against the objective at each
/// probe. `None` when the problem does not expose surrogate values.
pub fn surrogate_gaps<P: MmProblem + ?Sized>(
    problem: &mut P,
    anchor: &DVector<f64>,
    probes: &[DVector<f64>],
) -> Option<SurrogateGaps> {
    let touch = (problem.surrogate_value(anchor, anchor)? - problem.objective(anchor)).abs();
    let mut excess = f64::NEG_INFINITY;
    for b in probes {
        excess = excess.max(problem.objective(b) - problem.surrogate_value(b, anchor)?);
    }
    Some(SurrogateGaps { touch, excess })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateBoundReport {
    /// `1 - (mu / 2L)^2`.
    pub factor: f64,
    pub geometric_violations: usize,
    pub grad_sum: f64,
    /// `2 L (f_0 - f_star)`.
    pub grad_sum_bound: f64,
    pub grad_sum_ok: bool,
}

/// Audits a history against the linear rate `f_m - f* <= factor^m (f_0 - f*)`
/// and the summed-gradient bound `sum |grad f|^2 <= 2 L (f_0 - f*)`.
pub fn check_rate_bound(diag: &ConvergenceDiagnostics, history: &[f64], f_star: f64) -> Result<RateBoundReport> {
    let l = diag.lipschitz_l.ok_or_else(|| MmError::domain("lipschitz constant not set"))?;
    let mu = diag.strong_mu.ok_or_else(|| MmError::domain("strong convexity constant not set"))?;
    if !(l > 0.0 && mu > 0.0 && mu <= l) {
        return Err(MmError::domain(format!("need 0 < mu <= L, got mu = {mu}, L = {l}")));
    }
    let f0 = *history.first().ok_or_else(|| MmError::domain("empty history"))?;
    let gap0 = f0 - f_star;
    let factor = 1.0 - (mu / (2.0 * l)).powi(2);
    let slack = 1e-12 * (1.0 + f0.abs());
    let mut bound = gap0;
    let mut geometric_violations = 0;
    for &f in &history[1..] {
        bound *= factor;
        if f - f_star > bound + slack {
            geometric_violations += 1;
        }
    }
    let grad_sum_bound = 2.0 * l * gap0;
    Ok(RateBoundReport {
        factor,
        geometric_violations,
        grad_sum: diag.grad_norm_sq_sum,
        grad_sum_bound,
        grad_sum_ok: diag.grad_norm_sq_sum <= grad_sum_bound * (1.0 + 1e-9) + slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `(beta - 3)^2` with exact surrogate.
    struct Parabola;

    impl MmProblem for Parabola {
        fn objective(&mut self, b: &DVector<f64>) -> f64 {
            (b[0] - 3.0).powi(2)
        }
        fn surrogate_argmin(&mut self, _a: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_element(1, 3.0))
        }
    }

    /// `c / 2 (beta - t)^2` majorized with curvature `l >= c`.
    struct Quadratic {
        c: f64,
        l: f64,
        t: f64,
    }

    impl MmProblem for Quadratic {
        fn objective(&mut self, b: &DVector<f64>) -> f64 {
            0.5 * self.c * (b[0] - self.t).powi(2)
        }
        fn surrogate_argmin(&mut self, a: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_element(1, a[0] - self.c * (a[0] - self.t) / self.l))
        }
        fn gradient(&mut self, b: &DVector<f64>) -> Option<DVector<f64>> {
            Some(DVector::from_element(1, self.c * (b[0] - self.t)))
        }
        fn lipschitz(&self) -> Option<f64> {
            Some(self.l)
        }
        fn strong_convexity(&self) -> Option<f64> {
            Some(self.c)
        }
    }

    #[test]
    fn exact_surrogate_one_step() {
        let r = run_mm(&mut Parabola, DVector::from_element(1, 0.0), &MMOptions::default()).unwrap();
        assert_eq!(r.beta[0], 3.0);
        assert!(r.converged);
        assert_eq!(r.history, vec![9.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_budget_returns_init() {
        let opts = MMOptions::default().with_max_iter(0);
        let r = run_mm(&mut Parabola, DVector::from_element(1, 1.5), &opts).unwrap();
        assert_eq!(r.beta[0], 1.5);
        assert!(!r.converged);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn anchor_examples() {
        let mut s = MMState::new(DVector::from_element(1, 2.0), 1.0);
        s.beta_prev = DVector::from_element(1, 0.0);
        assert_eq!(nesterov_anchor(&s)[0], 2.0);
        s.nesterov_counter = 2;
        assert_eq!(nesterov_anchor(&s)[0], 2.5);
        assert!(maybe_restart(&mut s, 2.0));
        assert_eq!(s.nesterov_counter, 1);
        assert_eq!(s.restarts, 1);
        assert_eq!(nesterov_anchor(&s)[0], 2.0);
        assert!(!maybe_restart(&mut s, 1.0));
        assert!(!maybe_restart(&mut s, 0.5));
        assert_eq!(s.restarts, 1);
    }

    #[test]
    fn deweight_examples() {
        let y = DVector::from_vec(vec![2.0, -1.0]);
        let mu = DVector::from_vec(vec![0.0, 4.0]);
        assert_eq!(deweight(&y, &mu, &DVector::from_element(2, 1.0)).unwrap(), y);
        assert_eq!(deweight(&y, &mu, &DVector::from_element(2, 0.0)).unwrap(), mu);
        let one =
            deweight(&DVector::from_element(1, 2.0), &DVector::from_element(1, 0.0), &DVector::from_element(1, 0.5))
                .unwrap();
        assert_eq!(one[0], 1.0);
        assert!(deweight(&y, &mu, &DVector::from_vec(vec![0.5, 1.5])).is_err());
    }

    #[test]
    fn rescale_examples() {
        let r = rescale_weights(&DVector::from_vec(vec![2.0, 4.0])).unwrap();
        assert_eq!(r.as_slice(), &[0.5, 1.0]);
        let u = DVector::from_vec(vec![0.3, 1.0, 0.0]);
        assert_eq!(rescale_weights(&u).unwrap(), u);
        assert_eq!(rescale_weights(&DVector::from_element(1, 7.0)).unwrap()[0], 1.0);
        assert!(rescale_weights(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn quadratic_rate_bound() {
        let mut p = Quadratic { c: 1.0, l: 1.0, t: 2.0 };
        let opts = MMOptions { trace_gradients: true, ..MMOptions::default() };
        let r = run_mm(&mut p, DVector::from_element(1, -5.0), &opts).unwrap();
        let rep = check_rate_bound(&r.diagnostics, &r.history, 0.0).unwrap();
        assert_eq!(rep.factor, 0.75);
        assert_eq!(rep.geometric_violations, 0);
        assert!(rep.grad_sum_ok);

        let mut slow = Quadratic { c: 1.0, l: 3.0, t: 2.0 };
        let r = run_mm(&mut slow, DVector::from_element(1, -5.0), &opts).unwrap();
        let rep = check_rate_bound(&r.diagnostics, &r.history, 0.0).unwrap();
        assert_eq!(rep.geometric_violations, 0);
        assert!(rep.grad_sum_ok);

        let flat = ConvergenceDiagnostics { lipschitz_l: Some(1.0), strong_mu: Some(1.0), ..Default::default() };
        let rep = check_rate_bound(&flat, &[0.0; 5], 0.0).unwrap();
        assert_eq!(rep.geometric_violations, 0);
    }

    #[test]
    fn acceleration_restarts_and_agrees() {
        let mut p = Quadratic { c: 1.0, l: 50.0, t: 2.0 };
        let plain = run_mm(&mut p, DVector::from_element(1, -5.0), &MMOptions::default().with_tol(1e-14)).unwrap();
        let fast =
            run_mm(&mut p, DVector::from_element(1, -5.0), &MMOptions::default().with_tol(1e-14).accelerated(true))
                .unwrap();
        assert!(fast.iterations < plain.iterations);
        assert!((fast.objective - plain.objective).abs() < 1e-10);
        assert_eq!(fast.count_descent_violations(), 0);
    }

    #[test]
    fn trace_file_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let opts = MMOptions { trace_path: Some(path.clone()), ..MMOptions::default() };
        run_mm(&mut Quadratic { c: 1.0, l: 2.0, t: 0.0 }, DVector::from_element(1, 1.0), &opts).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iter,objective,grad_norm,restarted"));
        assert_eq!(lines.next(), Some("0,0.5,1.0,0"));
    }

    #[test]
    fn nan_objective_is_numerical() {
        struct Bad;
        impl MmProblem for Bad {
            fn objective(&mut self, b: &DVector<f64>) -> f64 {
                if b[0] > 0.5 {
                    f64::NAN
                } else {
                    1.0
                }
            }
            fn surrogate_argmin(&mut self, _a: &DVector<f64>) -> Result<DVector<f64>> {
                Ok(DVector::from_element(1, 1.0))
            }
        }
        let e = run_mm(&mut Bad, DVector::from_element(1, 0.0), &MMOptions::default()).unwrap_err();
        match e {
            MmError::Numerical { iter, snapshot, .. } => {
                assert_eq!(iter, 1);
                assert_eq!(snapshot, vec![1.0]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
