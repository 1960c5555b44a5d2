//! Normalized σ₂ flow on the round sphere and its solve loops.
//!
//! The flow is
//!
//! ```text
//! 2 u_t = h(a) − h(b) − s_ε,   a = σ₂(W)^{1/2},   b = r_ε^{1/2} e^{(ε−2)u},
//! ```
//!
//! with `r_ε = F₂ / V_ε` and `s_ε` the `e^{(2ε−n)u} dvol(g₀)`-weighted mean of
//! `h(a) − h(b)`. The choice of `s_ε` makes `dV_ε/dt` vanish identically, and the
//! discrete version inherits this because the same quadrature defines both.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{normalized, BackgroundGeometry, BackgroundKind, ConformalField};

/// Smallest admissible time step before the run is declared stiff.
pub const MIN_DT: f64 = 1e-12;

/// Gauge function `h(s) = 2 log s` for `s ≤ 1`, `s − 1 + log s` for `s > 1`.
///
/// C¹ at 1, strictly concave, `h' ≥ 1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GaugeFunction;

impl GaugeFunction {
    pub fn value(self, s: f64) -> Result<f64> {
        h_eval(s)
    }

    pub fn derivative(self, s: f64) -> Result<f64> {
        h_prime(s)
    }
}

fn check_positive(s: f64) -> Result<()> {
    if !(s > 0.0) {
        return Err(Error::domain(format!("gauge argument {s} must be positive")));
    }
    Ok(())
}

pub fn h_eval(s: f64) -> Result<f64> {
    check_positive(s)?;
    Ok(h_from_log(s, s.ln()))
}

pub fn h_prime(s: f64) -> Result<f64> {
    check_positive(s)?;
    Ok(hp(s))
}

#[inline]
fn h_from_log(s: f64, log_s: f64) -> f64 {
    if s <= 1.0 {
        2.0 * log_s
    } else {
        s - 1.0 + log_s
    }
}

/// `h'(s)` from `1/s`.
#[inline]
fn hp_inv(inv_s: f64) -> f64 {
    if inv_s >= 1.0 {
        2.0 * inv_s
    } else {
        1.0 + inv_s
    }
}

#[inline]
fn hp(s: f64) -> f64 {
    if s <= 1.0 {
        2.0 / s
    } else {
        1.0 + 1.0 / s
    }
}

/// Run controls.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowConfig {
    /// Fraction of the explicit stability limit used as time step.
    pub dt_safety: f64,
    /// Stop once `max |2u_t|` falls below this.
    pub tol_converge: f64,
    pub t_max: f64,
    /// Record every k-th step in the trace (the first and last states are always kept).
    pub trace_every: usize,
    /// Continuation stops when `min u` drops below this.
    pub blowup_floor: f64,
    /// Trailing window (flow time) for plateau detection; 0 disables it.
    pub plateau_window: f64,
    /// Relative F₂ change over the window below which a plateau is declared.
    pub plateau_rel_change: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            dt_safety: 0.8,
            tol_converge: 1e-8,
            t_max: 50.0,
            trace_every: 1,
            blowup_floor: -30.0,
            plateau_window: 0.0,
            plateau_rel_change: 1e-14,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_safety > 0.0 && self.dt_safety <= 1.0) {
            return Err(Error::domain(format!("dt_safety {} outside (0, 1]", self.dt_safety)));
        }
        if !(self.tol_converge >= 0.0) {
            return Err(Error::domain("tol_converge must be >= 0"));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::domain("t_max must be positive"));
        }
        if self.trace_every == 0 {
            return Err(Error::domain("trace_every must be >= 1"));
        }
        if !(self.plateau_window >= 0.0) {
            return Err(Error::domain("plateau_window must be >= 0"));
        }
        Ok(())
    }
}

/// Scalars monitored along a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonitorRecord {
    pub t: f64,
    pub f2: f64,
    pub v_eps: f64,
    pub r_eps: f64,
    pub s_eps: f64,
    /// `min σ₂(g)` over nodes.
    pub min_sigma2: f64,
    /// `max (|∇u|² + |∇²u|)` over nodes.
    pub sup_grad_bound: f64,
    /// `1 + e^{(2−ε)(−min u)}`.
    pub envelope: f64,
    /// `(F₂(t) − F₂(t − dt)) / dt`; NaN for the initial record.
    pub df2dt_measured: f64,
    /// Evolution formula for `dF₂/dt`, averaged over the last step (instantaneous for
    /// the initial record).
    pub df2dt_formula: f64,
    /// `max |2u_t|`.
    pub max_velocity: f64,
}

/// Everything computed from one field evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowEval {
    /// `2u_t` per node.
    pub velocity: Vec<f64>,
    pub f2: f64,
    pub v_eps: f64,
    pub r_eps: f64,
    pub s_eps: f64,
    pub min_sigma2: f64,
    /// Instantaneous `dF₂/dt` from the evolution formula.
    pub df2dt_formula: f64,
    /// Smallest node value of `(h(a) − h(b))·(σ₂(g) − r_ε e^{2εu})`.
    pub min_sign_integrand: f64,
    /// Largest linearized diffusion coefficient `h'(a)·tr ∂a/∂W`.
    pub max_lin: f64,
    pub sup_grad_bound: f64,
    /// `max |a − b|`, the residual of `σ₂(W)^{1/2} = r_ε^{1/2} e^{(ε−2)u}`.
    pub equation_residual: f64,
    /// `∫ e^{2εu}(2u_t) dvol(g)`.
    pub velocity_moment: f64,
}

struct Scratch {
    du: Vec<f64>,
    d2u: Vec<f64>,
    q: Vec<f64>,
    a: Vec<f64>,
    log_s: Vec<f64>,
    ef: Vec<f64>,
    pb: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        let z = || vec![0.0; n];
        Self { du: z(), d2u: z(), q: z(), a: z(), log_s: z(), ef: z(), pb: z() }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..=2.0).contains(&eps) {
        return Err(Error::domain(format!("epsilon {eps} outside [0, 2]")));
    }
    Ok(())
}

/// Running Neumaier-compensated sum.
#[derive(Clone, Copy, Default)]
struct Acc {
    sum: f64,
    comp: f64,
}

impl Acc {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

fn evaluate_with(bg: &BackgroundGeometry, field: &ConformalField, eps: f64, sc: &mut Scratch) -> Result<FlowEval> {
    evaluate_impl::<true>(bg, field, eps, sc)
}

/// With `FULL = false` only the velocity, F₂, V_ε, r_ε and s_ε are computed; the
/// monitor fields are NaN. The velocity is bitwise the same either way.
fn evaluate_impl<const FULL: bool>(
    bg: &BackgroundGeometry,
    field: &ConformalField,
    eps: f64,
    sc: &mut Scratch,
) -> Result<FlowEval> {
    let grid = field.grid();
    let u = field.values();
    let nn = u.len();
    grid.first_derivative_operator().apply_into(u, &mut sc.du);
    grid.second_derivative_operator().apply_into(u, &mut sc.d2u);
    grid.tangential_quotient_into(&sc.du, &sc.d2u, &mut sc.q);
    let dim = bg.dim();
    let n = dim as f64;
    let w = grid.weights();
    let nodes = grid.nodes();

    // Per node: a = σ₂(W)^{1/2}, log σ₂(W), e^{(4−n)u}, e^{(ε−2)u}.
    let Scratch { a: a_v, log_s, ef, pb, .. } = sc;
    let mut f2 = Acc::default();
    let mut vol = Acc::default();
    // Largest h'(a)·σ₁/a; the factor (n−1)/2 is applied once after the loop.
    let mut max_lin = 0.0f64;
    let mut sup_grad = 0.0f64;
    // Smallest log(e^{4u}σ₂(W)).
    let mut min_log_sigma2 = f64::INFINITY;
    for i in 0..nn {
        let ws = bg.pointwise_schouten(nodes[i], sc.du[i], sc.d2u[i], sc.q[i]);
        let s1 = ws.sigma1();
        let s2 = ws.sigma2();
        if !(s1 > 0.0 && s2 > 0.0) {
            return Err(Error::cone(
                format!("node {i} (x = {})", nodes[i]),
                format!("sigma_1(W) = {s1}, sigma_2(W) = {s2}"),
            ));
        }
        let e_f = ((4.0 - n) * u[i]).exp();
        let p = if eps == 2.0 { 1.0 } else { ((eps - 2.0) * u[i]).exp() };
        let a = s2.sqrt();
        let ln_s2 = s2.ln();
        a_v[i] = a;
        log_s[i] = ln_s2;
        ef[i] = e_f;
        pb[i] = p;
        f2.add(w[i] * e_f * s2);
        vol.add(w[i] * e_f * p * p);
        if FULL {
            let inv_a = 1.0 / a;
            max_lin = max_lin.max(hp_inv(inv_a) * s1 * inv_a);
            let hess = (sc.d2u[i] * sc.d2u[i] + (n - 1.0) * sc.q[i] * sc.q[i]).sqrt();
            sup_grad = sup_grad.max(sc.du[i] * sc.du[i] + hess);
            min_log_sigma2 = min_log_sigma2.min(4.0 * u[i] + ln_s2);
        }
    }
    let max_lin = max_lin * (n - 1.0) / 2.0;
    let min_sigma2 = min_log_sigma2.exp();
    let f2 = f2.value();
    let v_eps = vol.value();
    if !(f2.is_finite() && v_eps.is_finite() && v_eps > 0.0) {
        return Err(Error::Numeric(format!("functionals not finite: F2 = {f2}, V = {v_eps}")));
    }
    let r_eps = f2 / v_eps;
    let half_log_r = 0.5 * r_eps.ln();
    let sqrt_r = r_eps.sqrt();

    // Reuse `log_s` for h(a) − h(b) and `a_v` for (a − b)(a + b).
    let mut mean = Acc::default();
    let mut residual = 0.0f64;
    for i in 0..nn {
        let a = a_v[i];
        let b = sqrt_r * pb[i];
        let ha = h_from_log(a, 0.5 * log_s[i]);
        let hb = h_from_log(b, half_log_r + (eps - 2.0) * u[i]);
        let d = ha - hb;
        log_s[i] = d;
        if FULL {
            a_v[i] = (a - b) * (a + b);
            residual = residual.max((a - b).abs());
        }
        mean.add(w[i] * ef[i] * pb[i] * pb[i] * d);
    }
    let s_eps = mean.value() / v_eps;
    let mut moment = Acc::default();
    let mut df2dt = Acc::default();
    let mut min_sign = f64::INFINITY;
    let velocity: Vec<f64> = log_s.iter().map(|d| d - s_eps).collect();
    if !FULL {
        return Ok(FlowEval {
            velocity,
            f2,
            v_eps,
            r_eps,
            s_eps,
            min_sigma2: f64::NAN,
            df2dt_formula: f64::NAN,
            min_sign_integrand: f64::NAN,
            max_lin: f64::NAN,
            sup_grad_bound: f64::NAN,
            equation_residual: f64::NAN,
            velocity_moment: f64::NAN,
        });
    }
    for i in 0..nn {
        moment.add(w[i] * ef[i] * pb[i] * pb[i] * velocity[i]);
        let sign = log_s[i] * a_v[i];
        df2dt.add(w[i] * ef[i] * sign);
        min_sign = min_sign.min(sign);
    }

    Ok(FlowEval {
        velocity,
        f2,
        v_eps,
        r_eps,
        s_eps,
        min_sigma2,
        df2dt_formula: -(n - 4.0) / 2.0 * df2dt.value(),
        min_sign_integrand: min_sign,
        max_lin,
        sup_grad_bound: sup_grad,
        equation_residual: residual,
        velocity_moment: moment.value(),
    })
}

/// Evaluates velocity, normalizers and monitors for `field`.
pub fn evaluate(bg: &BackgroundGeometry, field: &ConformalField, eps: f64) -> Result<FlowEval> {
    check_eps(eps)?;
    bg.check_grid(field.grid())?;
    evaluate_with(bg, field, eps, &mut Scratch::new(field.values().len()))
}

/// `(r_ε, s_ε)`.
pub fn normalizers(bg: &BackgroundGeometry, field: &ConformalField, eps: f64) -> Result<(f64, f64)> {
    let e = evaluate(bg, field, eps)?;
    Ok((e.r_eps, e.s_eps))
}

/// `2u_t` per node.
pub fn velocity(bg: &BackgroundGeometry, field: &ConformalField, eps: f64) -> Result<Vec<f64>> {
    Ok(evaluate(bg, field, eps)?.velocity)
}

/// State of a run between steps.
#[derive(Clone)]
pub struct FlowState {
    bg: BackgroundGeometry,
    field: ConformalField,
    t: f64,
    eps: f64,
    dt_safety: f64,
    dt: f64,
    steps: usize,
    monitors: MonitorRecord,
    eval: Arc<FlowEval>,
}

impl std::fmt::Debug for FlowState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowState")
            .field("t", &self.t)
            .field("eps", &self.eps)
            .field("dt", &self.dt)
            .field("steps", &self.steps)
            .field("monitors", &self.monitors)
            .finish()
    }
}

fn monitors_from(eval: &FlowEval, t: f64, eps: f64, field: &ConformalField) -> MonitorRecord {
    let min_u = field.values().iter().copied().fold(f64::INFINITY, f64::min);
    MonitorRecord {
        t,
        f2: eval.f2,
        v_eps: eval.v_eps,
        r_eps: eval.r_eps,
        s_eps: eval.s_eps,
        min_sigma2: eval.min_sigma2,
        sup_grad_bound: eval.sup_grad_bound,
        envelope: 1.0 + ((2.0 - eps) * (-min_u)).exp(),
        df2dt_measured: f64::NAN,
        df2dt_formula: eval.df2dt_formula,
        max_velocity: eval.velocity.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    }
}

impl FlowState {
    /// Initial state at t = 0. Only the round sphere is supported (the flow needs a
    /// closed background for its conservation structure).
    pub fn new(bg: &BackgroundGeometry, field: ConformalField, eps: f64, dt_safety: f64) -> Result<Self> {
        if bg.kind() != BackgroundKind::RoundSphere {
            return Err(Error::domain("flow runs need the round-sphere background"));
        }
        check_eps(eps)?;
        if !(dt_safety > 0.0 && dt_safety <= 1.0) {
            return Err(Error::domain(format!("dt_safety {dt_safety} outside (0, 1]")));
        }
        bg.check_grid(field.grid())?;
        let eval = evaluate_with(bg, &field, eps, &mut Scratch::new(field.values().len()))?;
        let monitors = monitors_from(&eval, 0.0, eps, &field);
        let dt = stable_dt(&field, &eval, dt_safety);
        Ok(Self { bg: *bg, field, t: 0.0, eps, dt_safety, dt, steps: 0, monitors, eval: Arc::new(eval) })
    }

    pub fn field(&self) -> &ConformalField {
        &self.field
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Step size the next call to [`step`] will use.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn monitors(&self) -> &MonitorRecord {
        &self.monitors
    }

    pub fn eval(&self) -> &FlowEval {
        &self.eval
    }

    pub fn background(&self) -> &BackgroundGeometry {
        &self.bg
    }

    /// Normalized functional `F̃_{2,ε}` at the current field.
    pub fn f2_tilde_eps(&self) -> f64 {
        normalized(self.eval.f2, self.eval.v_eps, self.bg.dim(), self.eps)
    }
}

fn stable_dt(field: &ConformalField, eval: &FlowEval, safety: f64) -> f64 {
    let h = field.grid().spacing();
    safety * h * h / eval.max_lin
}

/// One explicit midpoint (RK2) step.
pub fn step(state: &FlowState) -> Result<FlowState> {
    let mut sc = Scratch::new(state.field.values().len());
    step_with(state, &mut sc)
}

fn step_with(state: &FlowState, sc: &mut Scratch) -> Result<FlowState> {
    let dt = state.dt;
    if !(dt >= MIN_DT) {
        return Err(Error::Stiffness { dt });
    }
    let u = state.field.values();
    let k1 = &state.eval.velocity;
    let mid: Vec<f64> = u.iter().zip(k1).map(|(u, k)| u + 0.25 * dt * k).collect();
    let mid = state.field.with_values(mid)?;
    let e_mid = evaluate_impl::<false>(&state.bg, &mid, state.eps, sc).map_err(|e| match e {
        Error::ConeViolation { location, detail } => {
            Error::ConeViolation { location: format!("{location} at midpoint stage"), detail }
        }
        other => other,
    })?;
    let new_u: Vec<f64> = u.iter().zip(&e_mid.velocity).map(|(u, k)| u + 0.5 * dt * k).collect();
    let field = state.field.with_values(new_u)?;
    let eval = evaluate_with(&state.bg, &field, state.eps, sc)?;
    let t = state.t + dt;
    let mut monitors = monitors_from(&eval, t, state.eps, &field);
    monitors.df2dt_measured = (eval.f2 - state.eval.f2) / dt;
    monitors.df2dt_formula = 0.5 * (eval.df2dt_formula + state.eval.df2dt_formula);
    let next_dt = stable_dt(&field, &eval, state.dt_safety);
    Ok(FlowState {
        bg: state.bg,
        field,
        t,
        eps: state.eps,
        dt_safety: state.dt_safety,
        dt: next_dt,
        steps: state.steps + 1,
        monitors,
        eval: Arc::new(eval),
    })
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    Timeout,
    ConeExit,
    Stiffness,
    BlowupSuspected,
    Plateau,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::Timeout => "timeout",
            RunStatus::ConeExit => "cone_exit",
            RunStatus::Stiffness => "stiffness",
            RunStatus::BlowupSuspected => "blowup_suspected",
            RunStatus::Plateau => "plateau",
        }
    }

    pub fn is_success(self) -> bool {
        matches!(self, RunStatus::Converged | RunStatus::Plateau)
    }
}

/// Aggregates over every step of a run (not only recorded rows).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunStats {
    pub steps: usize,
    pub v_initial: f64,
    pub v_final: f64,
    /// Largest single-step `(F₂(t+dt) − F₂(t)) / |F₂(t)|`.
    pub max_f2_increase: f64,
    pub min_sign_integrand: f64,
    pub min_sigma2: f64,
    pub max_r_eps: f64,
    pub min_r_eps: f64,
    pub max_sup_grad: f64,
    /// Largest `|∫ e^{2εu}(2u_t) dvol(g)| / ∫ e^{2εu} dvol(g)` seen.
    pub max_velocity_moment: f64,
}

impl RunStats {
    pub fn relative_volume_drift(&self) -> f64 {
        (self.v_final - self.v_initial).abs() / self.v_initial
    }
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    /// Last admissible state.
    pub state: FlowState,
    pub trace: Vec<MonitorRecord>,
    pub stats: RunStats,
    /// Max pointwise residual of the limiting equation at the final state.
    pub equation_residual: f64,
    /// Set when the run stopped on an error (cone exit, stiffness).
    pub message: Option<String>,
    /// ε = 0 runs are outside the regime where the flow is known to converge.
    pub experimental: bool,
}

/// Runs the flow from `init` until convergence, timeout or failure.
pub fn run(bg: &BackgroundGeometry, init: ConformalField, eps: f64, config: &FlowConfig) -> Result<RunOutcome> {
    config.validate()?;
    let state = FlowState::new(bg, init, eps, config.dt_safety)?;
    run_from(state, config)
}

/// Continues a run from an existing state.
pub fn run_from(mut state: FlowState, config: &FlowConfig) -> Result<RunOutcome> {
    config.validate()?;
    let mut sc = Scratch::new(state.field.values().len());
    let mut trace = vec![state.monitors];
    let mut stats = RunStats {
        steps: 0,
        v_initial: state.eval.v_eps,
        v_final: state.eval.v_eps,
        max_f2_increase: f64::NEG_INFINITY,
        min_sign_integrand: state.eval.min_sign_integrand,
        min_sigma2: state.eval.min_sigma2,
        max_r_eps: state.eval.r_eps,
        min_r_eps: state.eval.r_eps,
        max_sup_grad: state.eval.sup_grad_bound,
        max_velocity_moment: (state.eval.velocity_moment / state.eval.v_eps).abs(),
    };
    // (t, F₂) history for plateau detection.
    let mut window: std::collections::VecDeque<(f64, f64)> = std::collections::VecDeque::new();
    let mut message = None;
    let status = loop {
        if state.monitors.max_velocity < config.tol_converge {
            break RunStatus::Converged;
        }
        if state.t >= config.t_max {
            break RunStatus::Timeout;
        }
        let min_u = state.field.values().iter().copied().fold(f64::INFINITY, f64::min);
        if min_u < config.blowup_floor {
            message = Some(format!("min u = {min_u} below floor {}", config.blowup_floor));
            break RunStatus::BlowupSuspected;
        }
        if config.plateau_window > 0.0 {
            window.push_back((state.t, state.eval.f2));
            while window.len() > 2 && state.t - window[1].0 >= config.plateau_window {
                window.pop_front();
            }
            let (t0, f0) = window[0];
            if state.t - t0 >= config.plateau_window
                && (state.eval.f2 - f0).abs() <= config.plateau_rel_change * state.eval.f2.abs()
            {
                break RunStatus::Plateau;
            }
        }
        let next = match step_with(&state, &mut sc) {
            Ok(s) => s,
            Err(e @ Error::ConeViolation { .. }) => {
                message = Some(e.to_string());
                break RunStatus::ConeExit;
            }
            Err(e @ Error::Stiffness { .. }) => {
                message = Some(e.to_string());
                break RunStatus::Stiffness;
            }
            Err(e) => return Err(e),
        };
        let inc = (next.eval.f2 - state.eval.f2) / state.eval.f2.abs();
        stats.steps += 1;
        stats.max_f2_increase = stats.max_f2_increase.max(inc);
        stats.min_sign_integrand = stats.min_sign_integrand.min(next.eval.min_sign_integrand);
        stats.min_sigma2 = stats.min_sigma2.min(next.eval.min_sigma2);
        stats.max_r_eps = stats.max_r_eps.max(next.eval.r_eps);
        stats.min_r_eps = stats.min_r_eps.min(next.eval.r_eps);
        stats.max_sup_grad = stats.max_sup_grad.max(next.eval.sup_grad_bound);
        stats.max_velocity_moment = stats.max_velocity_moment.max((next.eval.velocity_moment / next.eval.v_eps).abs());
        stats.v_final = next.eval.v_eps;
        state = next;
        if state.steps % config.trace_every == 0 {
            trace.push(state.monitors);
        }
    };
    if trace.last().map(|m| m.t) != Some(state.t) {
        trace.push(state.monitors);
    }
    Ok(RunOutcome {
        status,
        equation_residual: state.eval.equation_residual,
        experimental: state.eps == 0.0,
        state,
        trace,
        stats,
        message,
    })
}

/// Result of [`eigen_solve`].
#[derive(Debug, Clone)]
pub struct EigenResult {
    /// `λ₁ = r₂` at convergence.
    pub lambda1: f64,
    pub field: ConformalField,
    /// `max |σ₂(W)/λ₁ − 1|` over nodes.
    pub max_relative_deviation: f64,
    pub outcome: RunOutcome,
}

/// Solves `σ₂(W) = λ₁` by running the ε = 2 flow to convergence.
pub fn eigen_solve(bg: &BackgroundGeometry, init: ConformalField, config: &FlowConfig) -> Result<EigenResult> {
    let outcome = run(bg, init, 2.0, config)?;
    if !outcome.status.is_success() {
        return Err(Error::Numeric(format!(
            "eigenvalue flow ended with status {}{}",
            outcome.status.as_str(),
            outcome.message.as_deref().map(|m| format!(": {m}")).unwrap_or_default()
        )));
    }
    let lambda1 = outcome.state.eval.r_eps;
    let w = crate::geometry::schouten_conformal(bg, outcome.state.field())?;
    let max_relative_deviation = w.nodes.iter().map(|w| (w.sigma2() / lambda1 - 1.0).abs()).fold(0.0, f64::max);
    Ok(EigenResult { lambda1, field: outcome.state.field().clone(), max_relative_deviation, outcome })
}

/// One rung of a continuation ladder.
#[derive(Debug, Clone)]
pub struct Rung {
    pub eps: f64,
    /// `F̃_{2,ε}` at the rung's solution.
    pub y_eps: f64,
    /// `F̃₂` (the ε = 0 normalization) at the rung's solution.
    pub yamabe_quotient: f64,
    pub field: ConformalField,
    pub status: RunStatus,
    pub steps: usize,
    pub t_final: f64,
    pub equation_residual: f64,
}

/// Result of [`continuation`].
#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub rungs: Vec<Rung>,
    /// Status of the last rung attempted.
    pub status: RunStatus,
    pub message: Option<String>,
}

/// Solves the subcritical equation along a strictly decreasing ε ladder, warm-starting
/// each rung from the previous solution.
pub fn continuation(
    bg: &BackgroundGeometry,
    init: ConformalField,
    ladder: &[f64],
    config: &FlowConfig,
) -> Result<ContinuationResult> {
    if ladder.is_empty() {
        return Err(Error::domain("empty epsilon ladder"));
    }
    for (i, &e) in ladder.iter().enumerate() {
        if !(e > 0.0 && e <= 2.0) {
            return Err(Error::domain(format!("ladder entry {e} outside (0, 2]")));
        }
        if i > 0 && !(e < ladder[i - 1]) {
            return Err(Error::domain("ladder must be strictly decreasing"));
        }
    }
    let mut field = init;
    let mut rungs = Vec::with_capacity(ladder.len());
    let mut status = RunStatus::Converged;
    let mut message = None;
    for &eps in ladder {
        let outcome = run(bg, field.clone(), eps, config)?;
        status = outcome.status;
        message = outcome.message.clone();
        let st = &outcome.state;
        let y_eps = st.f2_tilde_eps();
        let vol = crate::geometry::functional_v_eps(bg, st.field(), 0.0)?;
        let yamabe_quotient = normalized(st.eval.f2, vol, bg.dim(), 0.0);
        field = st.field().clone();
        rungs.push(Rung {
            eps,
            y_eps,
            yamabe_quotient,
            field: field.clone(),
            status,
            steps: st.steps(),
            t_final: st.t(),
            equation_residual: outcome.equation_residual,
        });
        if !status.is_success() {
            break;
        }
    }
    Ok(ContinuationResult { rungs, status, message })
}

/// `(max (|∇u|² + |∇²u|), 1 + e^{(2−ε)(−min u)})`.
pub fn local_estimate_monitor(state: &FlowState) -> (f64, f64) {
    (state.monitors.sup_grad_bound, state.monitors.envelope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::RadialGrid;

    fn sphere(n: usize, nodes: usize, f: impl Fn(f64) -> f64) -> (BackgroundGeometry, ConformalField) {
        let bg = BackgroundGeometry::round_sphere(n).unwrap();
        let grid = Arc::new(RadialGrid::sphere(n, nodes).unwrap());
        (bg, ConformalField::from_fn(grid, f).unwrap())
    }

    #[test]
    fn gauge_examples() {
        assert_eq!(h_eval(1.0).unwrap(), 0.0);
        assert!((h_eval(0.5).unwrap() - 2.0 * 0.5f64.ln()).abs() < 1e-15);
        assert!((h_eval(2.0).unwrap() - (1.0 + 2f64.ln())).abs() < 1e-15);
        assert!(h_eval(0.0).is_err() && h_eval(-1.0).is_err() && h_prime(0.0).is_err());
    }

    #[test]
    fn gauge_derivative_matches_differences() {
        for &s in &[0.01, 0.3, 0.9, 0.999, 1.001, 1.5, 4.0, 100.0] {
            let d = 1e-6 * s;
            let fd = (h_eval(s + d).unwrap() - h_eval(s - d).unwrap()) / (2.0 * d);
            assert!((fd - h_prime(s).unwrap()).abs() < 1e-8 * h_prime(s).unwrap().max(1.0), "s = {s}");
        }
    }

    proptest::proptest! {
        #[test]
        fn gauge_is_concave_with_slope_at_least_one(s in 1e-3f64..50.0, t in 1e-3f64..50.0) {
            proptest::prop_assert!(h_prime(s).unwrap() >= 1.0);
            let (lo, hi) = if s < t { (s, t) } else { (t, s) };
            // Decreasing derivative is concavity for a C¹ function.
            proptest::prop_assert!(h_prime(hi).unwrap() <= h_prime(lo).unwrap());
            let m = 0.5 * (s + t);
            let chord = 0.5 * (h_eval(s).unwrap() + h_eval(t).unwrap());
            proptest::prop_assert!(h_eval(m).unwrap() >= chord - 1e-12 * chord.abs().max(1.0));
        }
    }

    #[test]
    fn normalizers_at_round_metric() {
        let (bg, f) = sphere(5, 64, |_| 0.0);
        let (r, s) = normalizers(&bg, &f, 2.0).unwrap();
        assert!((r - 2.5).abs() < 1e-12);
        assert!(s.abs() < 1e-14);
    }

    #[test]
    fn constants_are_equilibria() {
        for eps in [0.0, 0.25, 1.0, 2.0] {
            let (bg, f) = sphere(5, 64, |_| 0.7);
            let v = velocity(&bg, &f, eps).unwrap();
            assert!(v.iter().all(|x| x.abs() < 1e-13), "eps = {eps}: {:?}", &v[..3]);
        }
    }

    #[test]
    fn velocity_moment_vanishes() {
        let (bg, f) = sphere(5, 256, |t| 0.1 * t.cos());
        let e = evaluate(&bg, &f, 2.0).unwrap();
        assert!(e.velocity_moment.abs() <= 1e-12 * e.v_eps);
        // σ₂(W) above its target where the velocity is positive.
        let (du, d2u, q) = f.derivatives();
        for (i, &v) in e.velocity.iter().enumerate() {
            let w = bg.pointwise_schouten(f.grid().nodes()[i], du[i], d2u[i], q[i]);
            let a = w.sigma2().sqrt();
            let b = e.r_eps.sqrt() * ((2.0 - 2.0) * f.values()[i]).exp();
            if v > 1e-12 {
                assert!(h_eval(a).unwrap() - h_eval(b).unwrap() > e.s_eps);
            }
        }
    }

    #[test]
    fn flat_zero_field_is_not_admissible() {
        let bg = BackgroundGeometry::flat_ball(5, 1.0).unwrap();
        let f = ConformalField::from_fn(Arc::new(bg.grid(32).unwrap()), |_| 0.0).unwrap();
        assert!(matches!(velocity(&bg, &f, 1.0), Err(Error::ConeViolation { .. })));
    }

    #[test]
    fn step_at_equilibrium_is_identity() {
        let (bg, f) = sphere(5, 64, |_| 0.7);
        let s0 = FlowState::new(&bg, f.clone(), 1.0, 0.5).unwrap();
        let s1 = step(&s0).unwrap();
        for (a, b) in s1.field().values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn single_step_conserves_and_decreases() {
        let (bg, f) = sphere(5, 256, |t| 0.1 * t.cos());
        let s0 = FlowState::new(&bg, f, 2.0, 0.5).unwrap();
        let s1 = step(&s0).unwrap();
        let v0 = s0.monitors().v_eps;
        assert!(((s1.monitors().v_eps - v0) / v0).abs() <= 1e-10);
        assert!(s1.monitors().f2 <= s0.monitors().f2 + 1e-12 * s0.monitors().f2.abs());
        assert!(s1.monitors().df2dt_measured < 0.0);
    }

    #[test]
    fn immediate_convergence_from_constant() {
        let (bg, f) = sphere(5, 64, |_| 0.7);
        let out = run(&bg, f, 0.5, &FlowConfig::default()).unwrap();
        assert_eq!(out.status, RunStatus::Converged);
        assert_eq!(out.stats.steps, 0);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn local_monitor_of_constant() {
        let (bg, f) = sphere(5, 64, |_| 0.2);
        let s = FlowState::new(&bg, f, 1.0, 0.5).unwrap();
        let (sup, env) = local_estimate_monitor(&s);
        assert_eq!(sup, 0.0);
        assert!(env >= 1.0);
    }

    #[test]
    fn run_requires_sphere() {
        let bg = BackgroundGeometry::flat_ball(5, 1.0).unwrap();
        let f = ConformalField::from_fn(Arc::new(bg.grid(32).unwrap()), |r| -(1.0 + r * r).ln()).unwrap();
        assert!(run(&bg, f, 1.0, &FlowConfig::default()).is_err());
    }

    #[test]
    fn ladder_validation() {
        let (bg, f) = sphere(5, 32, |_| 0.0);
        let cfg = FlowConfig::default();
        assert!(continuation(&bg, f.clone(), &[], &cfg).is_err());
        assert!(continuation(&bg, f.clone(), &[1.0, 1.5], &cfg).is_err());
        assert!(continuation(&bg, f.clone(), &[2.5], &cfg).is_err());
        assert!(continuation(&bg, f, &[2.0, 0.0], &cfg).is_err());
    }

    #[test]
    fn cone_exit_reports_last_valid_state() {
        // A steep profile whose midpoint stage leaves Γ₂⁺ with an oversized step.
        let (bg, f) = sphere(5, 64, |t| 0.45 * (2.0 * t).cos());
        let cfg = FlowConfig { dt_safety: 1.0, t_max: 5.0, ..FlowConfig::default() };
        match run(&bg, f, 2.0, &cfg) {
            Ok(out) => {
                if out.status == RunStatus::ConeExit {
                    assert!(out.message.is_some());
                    assert!(out.state.monitors().min_sigma2 > 0.0);
                }
            }
            Err(Error::ConeViolation { .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
