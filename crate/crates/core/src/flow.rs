//! Normalized Kähler-Ricci flow as a potential flow, `d phi/dt = f - H`,
//! with entropy monitoring.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::entropy::{entropy_h, grad_dh};
use crate::error::{LabError, Result};
use crate::fd::stencil_derivative;
use crate::field::ScalarField;
use crate::geometry::{make_state, KahlerState};
use crate::io::write_table_csv;
use crate::operators::delta_f;

/// Largest allowed per-step decrease of H.
pub const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stepper {
    /// Classical fourth-order Runge-Kutta.
    ExplicitRk,
    /// Backward Euler on the base Laplacian, forward Euler on the rest.
    SemiImplicitSpectral,
}

impl Stepper {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "explicit-rk" | "rk4" => Some(Stepper::ExplicitRk),
            "semi-implicit-spectral" | "semi-implicit" => Some(Stepper::SemiImplicitSpectral),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stepper::ExplicitRk => "explicit-rk",
            Stepper::SemiImplicitSpectral => "semi-implicit-spectral",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dt_initial: f64,
    pub t_end: f64,
    pub stepper: Stepper,
    /// Record every `monitor_stride` accepted steps (the last step is always recorded).
    pub monitor_stride: usize,
    /// Fraction of the explicit stability limit used as the largest step.
    pub safety: f64,
    /// Steps are never grown beyond this.
    pub dt_max: f64,
    /// Halving below this aborts the run.
    pub dt_min: f64,
    /// Stop early once the weighted norm of DH drops below this (0 disables).
    pub dh_target: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt_initial: 1e-4,
            t_end: 1.0,
            stepper: Stepper::ExplicitRk,
            monitor_stride: 1,
            safety: 0.5,
            dt_max: 1e-4,
            dt_min: 1e-12,
            dh_target: 0.0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(LabError::InvalidArgument(format!("flow config: {what}")));
        if !(self.dt_initial > 0.0) {
            return bad("dt_initial must be positive");
        }
        if !(self.t_end > 0.0) {
            return bad("t_end must be positive");
        }
        if self.monitor_stride == 0 {
            return bad("monitor_stride must be at least 1");
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return bad("safety must lie in (0, 1]");
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_initial) {
            return bad("dt_min must be positive and at most dt_initial");
        }
        if !(self.dt_max >= self.dt_initial) {
            return bad("dt_max must be at least dt_initial");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowTrace {
    pub times: Vec<f64>,
    #[serde(rename = "H")]
    pub h_values: Vec<f64>,
    pub dh_norms: Vec<f64>,
    pub f_min: Vec<f64>,
    pub f_max: Vec<f64>,
    /// Step that led to each sample (0 for the initial sample).
    pub step_sizes: Vec<f64>,
    /// `-((f - H), (Delta_f + lambda)(f - H))_f` at each sample.
    pub quadratic_forms: Vec<f64>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Set when DH stopped decreasing over the last tenth of the run.
    pub stagnated: bool,
    #[serde(skip)]
    pub terminal: Option<KahlerState>,
}

impl FlowTrace {
    fn new() -> Self {
        FlowTrace {
            times: Vec::new(),
            h_values: Vec::new(),
            dh_norms: Vec::new(),
            f_min: Vec::new(),
            f_max: Vec::new(),
            step_sizes: Vec::new(),
            quadratic_forms: Vec::new(),
            accepted_steps: 0,
            rejected_steps: 0,
            stagnated: false,
            terminal: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn record(&mut self, t: f64, dt: f64, state: &KahlerState) {
        let f = state.ricci_potential();
        let dh = grad_dh(state);
        self.times.push(t);
        self.h_values.push(entropy_h(state));
        self.dh_norms.push(state.weighted_norm(&dh));
        self.f_min.push(f.min_re().0);
        self.f_max.push(f.max_re());
        self.step_sizes.push(dt);
        self.quadratic_forms.push(entropy_rate(state));
    }

    pub fn terminal_state(&self) -> Option<&KahlerState> {
        self.terminal.as_ref()
    }

    /// Writes `t, H, dh_norm, f_min, f_max, dt`.
    pub fn write_csv(&self, path: &Path, comments: &[String]) -> Result<()> {
        let rows: Vec<Vec<f64>> = (0..self.len())
            .map(|i| {
                vec![
                    self.times[i],
                    self.h_values[i],
                    self.dh_norms[i],
                    self.f_min[i],
                    self.f_max[i],
                    self.step_sizes[i],
                ]
            })
            .collect();
        write_table_csv(path, comments, &["t", "H", "dh_norm", "f_min", "f_max", "dt"], &rows)
    }
}

/// Right-hand side `f - H` of the potential flow.
pub fn flow_rhs(state: &KahlerState) -> ScalarField {
    state.ricci_potential().add_scalar(-entropy_h(state))
}

/// `-((f - H), (Delta_f + lambda)(f - H))_f`, the rate of change of H along
/// the flow.
pub fn entropy_rate(state: &KahlerState) -> f64 {
    let u = flow_rhs(state);
    let applied = &delta_f(&u, state) + &u.scale(state.lambda());
    -state.inner(&u, &applied).re
}

/// Explicit stability estimate: the spectral radius of the linearization is
/// about `laplacian_radius / min(rho)`.
pub fn stable_step(state: &KahlerState, stepper: Stepper) -> f64 {
    let geometry = state.geometry();
    let rho_min = state.density_ratio().min_re().0;
    let radius = geometry.laplacian_radius() / rho_min + geometry.lambda().abs();
    match stepper {
        // Real-axis extent of the RK4 stability region.
        Stepper::ExplicitRk => 2.78 / radius,
        // Only the nonlinear remainder is explicit; it is small near rho = 1.
        Stepper::SemiImplicitSpectral => {
            let stiff = geometry.laplacian_radius() * (1.0 / rho_min - 1.0).abs() + geometry.lambda().abs();
            if stiff > 0.0 {
                2.0 / stiff
            } else {
                f64::INFINITY
            }
        }
    }
}

fn advance(state: &KahlerState, dt: f64, stepper: Stepper) -> Result<KahlerState> {
    let geometry = state.geometry();
    let phi = state.potential();
    match stepper {
        Stepper::ExplicitRk => {
            let k1 = flow_rhs(state);
            let s2 = make_state(geometry, &(phi + &k1.scale(0.5 * dt)))?;
            let k2 = flow_rhs(&s2);
            let s3 = make_state(geometry, &(phi + &k2.scale(0.5 * dt)))?;
            let k3 = flow_rhs(&s3);
            let s4 = make_state(geometry, &(phi + &k3.scale(dt)))?;
            let k4 = flow_rhs(&s4);
            let incr = &(&k1 + &k4) + &(&k2 + &k3).scale(2.0);
            make_state(geometry, &(phi + &incr.scale(dt / 6.0)))
        }
        Stepper::SemiImplicitSpectral => {
            let explicit = &flow_rhs(state) - &geometry.base_laplacian(phi);
            let rhs = phi + &explicit.scale(dt);
            make_state(geometry, &geometry.solve_implicit(&rhs, dt).real_part())
        }
    }
}

/// Integrates the flow from `state0` up to `config.t_end`.
///
/// A step is rejected and retried at half the size when the new potential is
/// not Kähler or when H drops by more than [`MONOTONE_SLACK`].
pub fn flow_run(state0: &KahlerState, config: &FlowConfig) -> Result<FlowTrace> {
    config.validate()?;
    let mut trace = FlowTrace::new();
    let mut state = state0.clone();
    let mut t = 0.0;
    let mut dt = config.dt_initial;
    let mut h = entropy_h(&state);
    trace.record(t, 0.0, &state);
    let mut since_record = 0;

    while config.t_end - t > config.dt_min {
        let limit = (config.safety * stable_step(&state, config.stepper)).min(config.dt_max);
        let step = dt.min(limit).min(config.t_end - t);
        let mut trial = step;
        let mut lost_positivity = false;
        let next = loop {
            if trial < config.dt_min {
                return Err(if lost_positivity {
                    LabError::PositivityLoss { t }
                } else {
                    LabError::StepCollapse { dt: trial, t }
                });
            }
            match advance(&state, trial, config.stepper) {
                Ok(candidate) => {
                    let h_new = entropy_h(&candidate);
                    if h_new - h >= -MONOTONE_SLACK {
                        break (candidate, h_new);
                    }
                }
                Err(LabError::NonKahler { .. }) => lost_positivity = true,
                Err(e) => return Err(e),
            }
            trace.rejected_steps += 1;
            trial *= 0.5;
        };
        let (candidate, h_new) = next;
        state = candidate;
        h = h_new;
        t += trial;
        trace.accepted_steps += 1;
        since_record += 1;
        // Grow back toward the requested step after a rejection.
        dt = (trial * 2.0).min(config.dt_max).max(trial);
        let done = config.t_end - t <= config.dt_min;
        if since_record >= config.monitor_stride || done {
            trace.record(t, trial, &state);
            since_record = 0;
            if config.dh_target > 0.0 && *trace.dh_norms.last().unwrap() < config.dh_target {
                break;
            }
        }
    }
    if since_record > 0 {
        trace.record(t, dt, &state);
    }
    trace.stagnated = detect_stagnation(&trace.dh_norms);
    trace.terminal = Some(state);
    Ok(trace)
}

fn detect_stagnation(dh: &[f64]) -> bool {
    if dh.len() < 20 {
        return false;
    }
    let window = dh.len() / 10;
    let tail = &dh[dh.len() - window..];
    let first = tail[0];
    let last = tail[tail.len() - 1];
    first > 0.0 && last > 1e-12 && last > 0.99 * first
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    /// Smallest per-interval change of H.
    pub min_delta_h: f64,
    /// Smallest sampled value of the quadratic form.
    pub min_quadratic_form: f64,
    /// Largest relative mismatch between the finite-difference dH/dt from the
    /// trace and the quadratic form, over samples where the form exceeds
    /// `rate_floor`.
    pub max_rate_mismatch: f64,
    pub rate_floor: f64,
    pub compared_samples: usize,
    pub monotone: bool,
}

/// Audits a trace: per-interval monotonicity, sign of the quadratic form,
/// and agreement of `dH/dt` from a five-point stencil on the recorded
/// times with the quadratic form.
pub fn monotonicity_audit(trace: &FlowTrace) -> Result<MonotonicityReport> {
    if trace.is_empty() {
        return Err(LabError::InvalidArgument("empty flow trace".into()));
    }
    let n = trace.len();
    let min_delta_h = trace
        .h_values
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let min_quadratic_form = trace.quadratic_forms.iter().copied().fold(f64::INFINITY, f64::min);
    let peak = trace.quadratic_forms.iter().fold(0.0f64, |m, q| m.max(q.abs()));
    let rate_floor = 1e-3 * peak;
    let mut max_rate_mismatch = 0.0f64;
    let mut compared = 0;
    for i in 2..n.saturating_sub(2) {
        let q = trace.quadratic_forms[i];
        if q.abs() < rate_floor || q.abs() == 0.0 {
            continue;
        }
        let ts = &trace.times[i - 2..=i + 2];
        let hs = &trace.h_values[i - 2..=i + 2];
        let fd = stencil_derivative(trace.times[i], ts, hs, 1);
        max_rate_mismatch = max_rate_mismatch.max((fd - q).abs() / q.abs());
        compared += 1;
    }
    Ok(MonotonicityReport {
        min_delta_h: if n > 1 { min_delta_h } else { 0.0 },
        min_quadratic_form,
        max_rate_mismatch,
        rate_floor,
        compared_samples: compared,
        monotone: min_delta_h >= -MONOTONE_SLACK || n < 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sphere_base, torus_base};

    #[test]
    fn rhs_is_weighted_mean_free() {
        let geom = torus_base(32).unwrap();
        let state = make_state(&geom, &geom.random_potential_band(2, 2, 0.5)).unwrap();
        let rhs = flow_rhs(&state);
        assert!(state.weighted_mean(&rhs).norm() < 1e-12);
        // lambda = 0: rhs = log(rho) + const.
        let log_rho = state.density_ratio().map_real(f64::ln);
        let diff = &rhs - &log_rho;
        let spread = diff.max_re() - diff.min_re().0;
        assert!(spread < 1e-12);
    }

    #[test]
    fn critical_data_is_stationary() {
        for geom in [torus_base(16).unwrap(), sphere_base(16).unwrap()] {
            let state = make_state(&geom, &ScalarField::zeros(geom.tag())).unwrap();
            let cfg = FlowConfig {
                dt_initial: 1e-3,
                dt_max: 1e-3,
                t_end: 0.01,
                ..FlowConfig::default()
            };
            let trace = flow_run(&state, &cfg).unwrap();
            let terminal = trace.terminal_state().unwrap();
            assert!(terminal.potential().sup_norm() < 1e-13);
            assert!(trace.h_values.iter().all(|h| h.abs() < 1e-15));
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let geom = torus_base(16).unwrap();
        let state = make_state(&geom, &ScalarField::zeros(geom.tag())).unwrap();
        let cfg = FlowConfig {
            t_end: -1.0,
            ..FlowConfig::default()
        };
        assert!(matches!(flow_run(&state, &cfg), Err(LabError::InvalidArgument(_))));
    }

    #[test]
    fn short_torus_run_is_monotone() {
        let geom = torus_base(16).unwrap();
        let state = make_state(&geom, &geom.random_potential_band(4, 2, 0.7)).unwrap();
        let cfg = FlowConfig {
            t_end: 0.02,
            ..FlowConfig::default()
        };
        let trace = flow_run(&state, &cfg).unwrap();
        let audit = monotonicity_audit(&trace).unwrap();
        assert!(audit.monotone);
        assert!(audit.min_quadratic_form > 0.0);
        assert!(audit.max_rate_mismatch < 1e-5, "{audit:?}");
        assert!(trace.h_values.last().unwrap() > &trace.h_values[0]);
    }

    #[test]
    fn semi_implicit_allows_large_steps() {
        let geom = torus_base(32).unwrap();
        let state = make_state(&geom, &geom.random_potential_band(9, 2, 0.8)).unwrap();
        let cfg = FlowConfig {
            dt_initial: 2e-3,
            dt_max: 2e-3,
            t_end: 0.2,
            stepper: Stepper::SemiImplicitSpectral,
            ..FlowConfig::default()
        };
        let explicit_limit = stable_step(&state, Stepper::ExplicitRk);
        assert!(cfg.dt_initial > explicit_limit);
        let trace = flow_run(&state, &cfg).unwrap();
        assert!(monotonicity_audit(&trace).unwrap().monotone);
        assert!(trace.dh_norms.last().unwrap() < &trace.dh_norms[0]);
    }

    #[test]
    fn csv_columns() {
        let geom = sphere_base(16).unwrap();
        let state = make_state(&geom, &geom.random_potential(1, 0.8)).unwrap();
        let cfg = FlowConfig {
            dt_initial: 1e-3,
            dt_max: 1e-3,
            t_end: 5e-3,
            ..FlowConfig::default()
        };
        let trace = flow_run(&state, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        trace.write_csv(&path, &["seed = 1".into()]).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.lines().nth(1).unwrap() == "t,H,dh_norm,f_min,f_max,dt");
        assert_eq!(text.lines().count(), 2 + trace.len());
    }
}
