//! Adaptive time integration of `dA/dt = -D_A^* F_A`.
//!
//! With the exact discrete gradient the energy satisfies
//! `dE/dt = -2 ||D_A^* F_A||^2_{L^2}`; [`FlowState::dissipation`] accumulates
//! the right-hand side with the trapezoid rule over accepted steps.

use serde::{Deserialize, Serialize};

use crate::calculus::CalculusWorkspace;
use crate::error::{Error, Result};
use crate::lattice::{ConnectionField, LatticeField, LatticeGeometry, TwoFormField};

/// `a^n sum_x sum_{mu<nu} |F_{mu nu}(x)|^2`, summed in site order.
pub fn energy(f: &TwoFormField) -> f64 {
    f.density().iter().sum::<f64>() * f.torus().geometry().cell_volume()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    #[default]
    Heun,
    Rk4,
}

impl Scheme {
    /// Length of the stability interval on the negative real axis.
    pub fn stability_interval(self) -> f64 {
        match self {
            Self::Euler | Self::Heun => 2.0,
            Self::Rk4 => 2.785,
        }
    }
}

/// Largest step that is stable for the flow linearised at a flat
/// connection, whose spectrum lies in `[0, 4n / a^2]`; with 10% margin.
/// Error control alone does not enforce this once amplitudes are tiny.
pub fn linear_stability_limit(geometry: &LatticeGeometry, scheme: Scheme) -> f64 {
    let a = geometry.spacing();
    0.9 * scheme.stability_interval() * a * a / (4.0 * geometry.dim() as f64)
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Self::Euler),
            "heun" => Ok(Self::Heun),
            "rk4" => Ok(Self::Rk4),
            _ => Err(Error::Config(format!("unknown scheme {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Damping of the error-based step growth, in `(0, 1]`.
    pub safety: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    /// Local error target for `a |dA|` (a per-link phase); also scales the
    /// energy-increase allowance.
    pub tolerance: f64,
    /// Convergence threshold on `max |D_A^* F_A|`.
    pub gtol: f64,
    pub max_steps: u64,
    /// Accepted steps between observer calls.
    pub cadence: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            dt_init: 1e-4,
            dt_min: 1e-14,
            dt_max: 1.0,
            safety: 0.9,
            t_end: 1.0,
            scheme: Scheme::Heun,
            tolerance: 1e-6,
            gtol: 1e-10,
            max_steps: 1_000_000,
            cadence: 10,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.dt_min) && pos(self.dt_init) && pos(self.dt_max)) {
            return Err(Error::Config("time steps must be positive".into()));
        }
        if !(self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return Err(Error::Config("need dt_min <= dt_init <= dt_max".into()));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::Config("safety must lie in (0, 1]".into()));
        }
        if !(self.t_end >= 0.0 && pos(self.tolerance) && self.gtol >= 0.0) {
            return Err(Error::Config("t_end, tolerance and gtol must be non-negative".into()));
        }
        if self.cadence == 0 {
            return Err(Error::Config("cadence must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
}

/// Connection at flow time `t` together with cached derived quantities.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub a: ConnectionField,
    pub energy: f64,
    /// Step size to try next.
    pub dt: f64,
    pub stats: StepStats,
    /// `D_A^* F_A` at `a`.
    pub gradient: ConnectionField,
    /// `int_0^t 2 ||D_A^* F_A||^2 dt` over accepted steps.
    pub dissipation: f64,
}

impl FlowState {
    pub fn new(a: ConnectionField, dt: f64) -> Self {
        let mut ws = CalculusWorkspace::new(a.torus());
        let (gradient, energy) = ws.gradient_and_energy(&a);
        Self {
            t: 0.0,
            a,
            energy,
            dt,
            stats: StepStats::default(),
            gradient,
            dissipation: 0.0,
        }
    }

    pub fn grad_inf_norm(&self) -> f64 {
        self.gradient.sup_norm()
    }

    pub fn grad_l2_sq(&self) -> f64 {
        self.gradient.l2_inner(&self.gradient)
    }
}

/// Result of one successful call to [`Integrator::step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub dt_taken: f64,
    pub energy_before: f64,
    pub energy_after: f64,
    pub error_estimate: f64,
    pub rejections: u64,
}

/// Reusable integrator; holds the calculus scratch buffers.
pub struct Integrator {
    ws: CalculusWorkspace,
}

impl Integrator {
    pub fn new(state: &FlowState) -> Self {
        Self {
            ws: CalculusWorkspace::new(state.a.torus()),
        }
    }

    pub fn workspace(&self) -> &CalculusWorkspace {
        &self.ws
    }

    /// Candidate update, its gradient and energy, and an error estimate.
    fn attempt(&mut self, state: &FlowState, dt: f64, scheme: Scheme) -> (ConnectionField, f64, ConnectionField, f64) {
        let k1 = &state.gradient;
        let (next, err) = match scheme {
            Scheme::Euler => (state.a.add_scaled(-dt, k1), 0.0),
            Scheme::Heun => {
                let euler = state.a.add_scaled(-dt, k1);
                let k2 = self.ws.ym_gradient(&euler);
                let mut next = euler;
                // A - dt k1 + dt/2 (k1 - k2) = A - dt/2 (k1 + k2)
                let diff = k1.add_scaled(-1.0, &k2);
                next = next.add_scaled(0.5 * dt, &diff);
                (next, 0.5 * dt * diff.sup_norm())
            }
            Scheme::Rk4 => {
                let k2 = self.ws.ym_gradient(&state.a.add_scaled(-0.5 * dt, k1));
                let k3 = self.ws.ym_gradient(&state.a.add_scaled(-0.5 * dt, &k2));
                let k4 = self.ws.ym_gradient(&state.a.add_scaled(-dt, &k3));
                let next = state
                    .a
                    .add_scaled(-dt / 6.0, k1)
                    .add_scaled(-dt / 3.0, &k2)
                    .add_scaled(-dt / 3.0, &k3)
                    .add_scaled(-dt / 6.0, &k4);
                // compare with the trapezoid built from the end stages
                let trap = state.a.add_scaled(-0.5 * dt, k1).add_scaled(-0.5 * dt, &k4);
                let err = next.max_diff(&trap);
                (next, err)
            }
        };
        let (gradient, energy) = self.ws.gradient_and_energy(&next);
        // in lattice units, so the tolerance does not depend on the box size
        (next, energy, gradient, err * state.a.torus().geometry().spacing())
    }

    /// Takes one accepted step, halving `dt` on rejection.
    pub fn step(&mut self, state: &mut FlowState, config: &FlowConfig) -> Result<StepReport> {
        let dt_max = config
            .dt_max
            .min(linear_stability_limit(state.a.torus().geometry(), config.scheme))
            .max(config.dt_min);
        let mut dt = state.dt.clamp(config.dt_min, dt_max);
        if config.t_end > state.t {
            dt = dt.min(config.t_end - state.t);
        }
        let mut rejections = 0;
        loop {
            let (next, energy, gradient, err) = self.attempt(state, dt, config.scheme);
            let allowance = config.tolerance * (1.0 + state.energy);
            let ok = energy.is_finite() && energy <= state.energy + allowance && err <= config.tolerance;
            if ok {
                let before = state.energy;
                let g0 = state.grad_l2_sq();
                let g1 = gradient.l2_inner(&gradient);
                state.dissipation += dt * (g0 + g1);
                state.t += dt;
                state.a = next;
                state.energy = energy;
                state.gradient = gradient;
                state.stats.accepted += 1;
                let grow = if err > 0.0 {
                    (config.safety * (config.tolerance / err).sqrt()).clamp(1.0, 2.0)
                } else {
                    2.0
                };
                // a step shortened to hit t_end keeps the earlier proposal
                let base = if rejections == 0 { dt.max(state.dt) } else { dt };
                state.dt = (base * grow).min(dt_max);
                return Ok(StepReport {
                    dt_taken: dt,
                    energy_before: before,
                    energy_after: energy,
                    error_estimate: err,
                    rejections,
                });
            }
            state.stats.rejected += 1;
            rejections += 1;
            if dt <= config.dt_min {
                state.dt = dt;
                return Err(Error::Stiff { t: state.t, dt });
            }
            dt = (dt * 0.5).max(config.dt_min);
        }
    }
}

/// One accepted step of the configured scheme.
pub fn flow_step(state: &FlowState, config: &FlowConfig) -> Result<FlowState> {
    let mut next = state.clone();
    Integrator::new(state).step(&mut next, config)?;
    Ok(next)
}

#[derive(Clone, Debug, PartialEq)]
pub enum FlowOutcome {
    /// `max |D_A^* F_A| < gtol`.
    Converged,
    /// `t_end` reached.
    Finished,
    /// A step was rejected at `dt_min`.
    StiffStop { t: f64, dt: f64 },
    /// An observer asked to stop.
    Stopped(String),
    MaxSteps,
}

impl FlowOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::Finished => "finished",
            Self::StiffStop { .. } => "stiff-stop",
            Self::Stopped(_) => "stopped",
            Self::MaxSteps => "max-steps",
        }
    }
}

/// Returned by observers after each cadence point.
#[derive(Clone, Debug, PartialEq)]
pub enum Control {
    Continue,
    Stop(String),
}

/// Read-only hook called at the initial state, every `cadence` accepted
/// steps and at the final state.
pub trait FlowObserver {
    fn observe(&mut self, state: &FlowState, workspace: &CalculusWorkspace) -> Result<Control>;
}

impl<F: FnMut(&FlowState, &CalculusWorkspace) -> Result<Control>> FlowObserver for F {
    fn observe(&mut self, state: &FlowState, workspace: &CalculusWorkspace) -> Result<Control> {
        self(state, workspace)
    }
}

/// Observer that ignores everything.
pub struct NoObserver;

impl FlowObserver for NoObserver {
    fn observe(&mut self, _: &FlowState, _: &CalculusWorkspace) -> Result<Control> {
        Ok(Control::Continue)
    }
}

#[derive(Clone, Debug)]
pub struct FlowSummary {
    pub outcome: FlowOutcome,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub t: f64,
    pub stats: StepStats,
    /// Largest energy increase seen over an accepted step (0 if monotone).
    pub max_energy_increase: f64,
}

/// Integrates until `t_end`, convergence, stiffness or an observer stop.
pub fn run_flow(state: &mut FlowState, config: &FlowConfig, observer: &mut dyn FlowObserver) -> Result<FlowSummary> {
    config.validate()?;
    let mut integrator = Integrator::new(state);
    let initial_energy = state.energy;
    let mut max_increase = 0.0f64;
    let mut since = 0;

    let mut outcome = None;
    if let Control::Stop(r) = observer.observe(state, integrator.workspace())? {
        outcome = Some(FlowOutcome::Stopped(r));
    }
    while outcome.is_none() {
        if state.grad_inf_norm() < config.gtol {
            outcome = Some(FlowOutcome::Converged);
            break;
        }
        if state.t >= config.t_end {
            outcome = Some(FlowOutcome::Finished);
            break;
        }
        if state.stats.accepted >= config.max_steps {
            outcome = Some(FlowOutcome::MaxSteps);
            break;
        }
        match integrator.step(state, config) {
            Ok(report) => {
                max_increase = max_increase.max(report.energy_after - report.energy_before);
                since += 1;
                if since >= config.cadence {
                    since = 0;
                    if let Control::Stop(r) = observer.observe(state, integrator.workspace())? {
                        outcome = Some(FlowOutcome::Stopped(r));
                    }
                }
            }
            Err(Error::Stiff { t, dt }) => {
                outcome = Some(FlowOutcome::StiffStop { t, dt });
            }
            Err(e) => return Err(e),
        }
    }
    let outcome = outcome.unwrap();
    if since > 0 || matches!(outcome, FlowOutcome::StiffStop { .. }) {
        // final record; a stop request here changes nothing
        observer.observe(state, integrator.workspace())?;
    }
    Ok(FlowSummary {
        outcome,
        initial_energy,
        final_energy: state.energy,
        t: state.t,
        stats: state.stats,
        max_energy_increase: max_increase,
    })
}
