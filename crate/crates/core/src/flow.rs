//! Kähler–Ricci flow in potential form.
//!
//! With `ω(t) = ω₀ + i∂∂̄φ(t)` and the flat representative `α` of the class of
//! `ω₀`, the flow `∂ₜω = −Ric(ω)` becomes
//!
//! ```text
//! φ̇ = log(ω(t)ⁿ / αⁿ) = log det(H₀ + ∂∂̄(ψ₀ + φ)) − log det H_α,   φ(0) = 0,
//! ```
//!
//! where `ω₀ = i(H₀ + ∂∂̄ψ₀)`. The stiff part of the right-hand side linearizes
//! to `tr_g ∂∂̄`, which is bounded above by `c·tr_{H₀}∂∂̄` with
//! `c = max λ(g⁻¹H₀)`. The stabilized schemes treat `c·tr_{H₀}∂∂̄` in Fourier
//! space, where it is diagonal, and the remainder explicitly:
//!
//! - [`Scheme::SemiImplicit`]: one backward-Euler diagonal solve per step;
//! - [`Scheme::Exponential`]: the same splitting with the diagonal part
//!   integrated exactly (exponential Euler);
//! - [`Scheme::Explicit`]: forward Euler with `Δt = σh²/λ_max(g⁻¹)`.
//!
//! All three reduce to `φ̂ ← φ̂ + Δt·M(k)·F̂` with a per-mode multiplier `M`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    complex_hessian, derivative_symbol, integrate, ScalarField, SpectralCoeffs, TorusGeometry,
};
use crate::geometry::{harmonic_projection, FlatMetric, HermitianField, KahlerMetric, EPS_POS};
use crate::herm::HermMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Explicit,
    SemiImplicit,
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub scheme: Scheme,
    /// Safety factor σ.
    pub safety: f64,
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
    pub eps_pos: f64,
    pub dealias: bool,
    /// Consecutive rejected attempts allowed for one step.
    pub max_rejections: usize,
    /// Step-size clamp for the stabilized schemes (`Δt = clamp(σt, dt_min, dt_max)`).
    pub dt_min: f64,
    pub dt_max: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            scheme: Scheme::Exponential,
            safety: 0.2,
            t_end: 1.0,
            snapshot_times: vec![0.01, 0.05, 0.1, 0.25, 0.5, 1.0],
            eps_pos: EPS_POS,
            dealias: true,
            max_rejections: 20,
            dt_min: 1e-5,
            dt_max: 1e-3,
        }
    }
}

impl FlowConfig {
    /// Default configuration ending at `t_end`, keeping the default snapshots that fit.
    pub fn until(t_end: f64) -> Self {
        let mut cfg = FlowConfig {
            t_end,
            ..Default::default()
        };
        cfg.snapshot_times.retain(|&t| t < t_end);
        cfg.snapshot_times.push(t_end);
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.t_end > 0.0 && self.t_end <= 2.0) {
            return bad(format!("t_end = {} must lie in (0, 2]", self.t_end));
        }
        if !(self.safety > 0.0 && self.safety.is_finite()) {
            return bad(format!("safety factor {} must be positive", self.safety));
        }
        if !(self.eps_pos > 0.0) {
            return bad("eps_pos must be positive".into());
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_max) {
            return bad(format!(
                "need 0 < dt_min ({}) <= dt_max ({})",
                self.dt_min, self.dt_max
            ));
        }
        let mut prev = 0.0;
        for &t in &self.snapshot_times {
            if !(t > prev && t <= self.t_end) {
                return bad(format!(
                    "snapshot times must be strictly increasing in (0, t_end]; got {t}"
                ));
            }
            prev = t;
        }
        Ok(())
    }

    /// Times at which the integrator must land exactly.
    fn stops(&self) -> Vec<f64> {
        let mut stops = self.snapshot_times.clone();
        if stops.last().map_or(true, |&t| t < self.t_end) {
            stops.push(self.t_end);
        }
        stops
    }
}

/// One state of the flow. `phi` is the flow potential including its mean.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub phi: ScalarField,
    /// `φ̇ = log det g − log det H_α` at this state (pointwise, not truncated).
    pub dot_phi: ScalarField,
    /// Metric coefficients `g(t)`.
    pub coefficients: HermitianField,
    pub min_eig: f64,
    /// Last accepted step size (0 for the initial state).
    pub dt: f64,
    /// Rejected attempts accumulated over the run.
    pub rejections: usize,
    stab: f64,
    inv_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub dt: f64,
    pub min_r: f64,
    pub min_dot_phi: f64,
    pub max_dot_phi: f64,
    pub min_eig: f64,
    pub volume: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub phi: ScalarField,
}

#[derive(Clone, Debug)]
pub struct FlowTrace {
    pub config: FlowConfig,
    pub initial: KahlerMetric,
    pub alpha: FlatMetric,
    /// `u` with `α = ω₀ + i∂∂̄u`, `max u = 0`.
    pub projection_u: ScalarField,
    pub snapshots: Vec<Snapshot>,
    /// One record for `t = 0` and one per accepted step.
    pub diagnostics: Vec<StepDiagnostics>,
}

impl FlowTrace {
    pub fn geometry(&self) -> TorusGeometry {
        self.initial.geometry()
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots
            .iter()
            .find(|s| (s.t - t).abs() <= 1e-9 * t.abs().max(1.0))
    }

    pub fn require_snapshot(&self, t: f64) -> Result<&Snapshot> {
        self.snapshot_at(t).ok_or(Error::MissingSnapshot(t))
    }

    /// `ω(t)` as a metric (background `H₀`, potential `ψ₀ + φ(t)`).
    pub fn metric_at(&self, snap: &Snapshot) -> Result<KahlerMetric> {
        self.initial.with_added_potential(&snap.phi)
    }

    pub fn coefficients_at(&self, snap: &Snapshot) -> Result<HermitianField> {
        Ok(self.metric_at(snap)?.assemble())
    }

    pub fn dot_phi_at(&self, snap: &Snapshot) -> Result<ScalarField> {
        let g = self.coefficients_at(snap)?;
        Ok(dot_phi_of(&g, &self.alpha))
    }

    pub fn final_snapshot(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }
}

fn dot_phi_of(g: &HermitianField, alpha: &FlatMetric) -> ScalarField {
    let shift = alpha.matrix().log_det();
    g.map_scalar(|m| m.log_det() - shift)
}

/// `φ̇ = log(det g / det H_α)` for the state's metric.
pub fn dot_phi(initial: &KahlerMetric, phi: &ScalarField, alpha: &FlatMetric) -> Result<ScalarField> {
    let g = initial.with_added_potential(phi)?.assemble();
    g.require_positive(EPS_POS)?;
    Ok(dot_phi_of(&g, alpha))
}

/// `φ₁(z) = (eᶻ − 1)/z`.
fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        z.exp_m1() / z
    }
}

/// Integrator bound to one initial metric and its flat representative.
pub struct Flow {
    config: FlowConfig,
    initial: KahlerMetric,
    alpha: FlatMetric,
    geom: TorusGeometry,
    initial_spec: SpectralCoeffs,
    /// `(j, k, symbol of ∂ⱼ∂̄ₖ)` for `j ≤ k`.
    hessian_symbols: Vec<(usize, usize, Vec<Complex64>)>,
    /// Symbol of `tr_{H₀}∂∂̄`, non-positive.
    background_symbol: Vec<f64>,
    dealias_mask: Vec<bool>,
}

impl Flow {
    pub fn new(initial: KahlerMetric, alpha: FlatMetric, config: FlowConfig) -> Result<Self> {
        config.validate()?;
        let geom = initial.geometry();
        let n = geom.n();
        let len = geom.len();
        let mut hessian_symbols = Vec::new();
        for j in 0..n {
            for k in j..n {
                let mut sym = vec![Complex64::new(0.0, 0.0); len];
                geom.for_each_mode(|idx, m| sym[idx] = derivative_symbol(&geom, m, &[j], &[k]));
                hessian_symbols.push((j, k, sym));
            }
        }
        let hinv = initial.background().inverse();
        let mut background_symbol = vec![0.0; len];
        let mut dealias_mask = vec![true; len];
        geom.for_each_mode(|idx, m| {
            let mut s = Complex64::new(0.0, 0.0);
            for j in 0..n {
                for k in 0..n {
                    s += hinv.get(k, j) * derivative_symbol(&geom, m, &[j], &[k]);
                }
            }
            background_symbol[idx] = s.re.min(0.0);
            dealias_mask[idx] = geom.is_dealiased_mode(m);
        });
        let initial_spec = initial.potential().spectrum();
        Ok(Flow {
            config,
            initial,
            alpha,
            geom,
            initial_spec,
            hessian_symbols,
            background_symbol,
            dealias_mask,
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    fn coefficients(&self, phi_spec: &SpectralCoeffs) -> HermitianField {
        let n = self.geom.n();
        let total: Vec<Complex64> = self
            .initial_spec
            .coeffs()
            .iter()
            .zip(phi_spec.coeffs())
            .map(|(a, b)| a + b)
            .collect();
        let mut comps = Vec::with_capacity(self.hessian_symbols.len());
        for (_, _, sym) in &self.hessian_symbols {
            let data: Vec<Complex64> = total.iter().zip(sym).map(|(c, s)| c * s).collect();
            comps.push(
                SpectralCoeffs::new(self.geom, data)
                    .expect("length matches")
                    .to_complex(),
            );
        }
        let h = *self.initial.background();
        let points = (0..self.geom.len())
            .map(|idx| {
                let d = match n {
                    1 => HermMatrix::diagonal(&[comps[0].values()[idx].re]),
                    _ => HermMatrix::two(
                        comps[0].values()[idx].re,
                        comps[2].values()[idx].re,
                        comps[1].values()[idx],
                    ),
                };
                h.add(&d)
            })
            .collect();
        HermitianField::from_points(self.geom, points)
            .unwrap_or_else(|_| HermitianField::constant(self.geom, HermMatrix::scalar(n, f64::NAN)))
    }

    fn evaluate(&self, t: f64, phi: ScalarField, dt: f64, rejections: usize) -> Option<FlowState> {
        if !phi.is_finite() {
            return None;
        }
        let g = self.coefficients(&phi.spectrum());
        let min_eig = g.min_eigenvalue();
        if !(min_eig >= self.config.eps_pos) {
            return None;
        }
        let h = self.initial.background();
        let mut stab: f64 = 0.0;
        let mut inv_max: f64 = 0.0;
        for m in g.points() {
            stab = stab.max(1.0 / h.relative_eigenvalues(m).0);
            inv_max = inv_max.max(1.0 / m.min_eigenvalue());
        }
        let dot_phi = dot_phi_of(&g, &self.alpha);
        if !dot_phi.is_finite() {
            return None;
        }
        Some(FlowState {
            t,
            phi,
            dot_phi,
            coefficients: g,
            min_eig,
            dt,
            rejections,
            stab,
            inv_max,
        })
    }

    pub fn initial_state(&self) -> Result<FlowState> {
        let phi = ScalarField::zeros(self.geom);
        self.evaluate(0.0, phi, 0.0, 0).ok_or(Error::NotPositive {
            min_eig: self.initial.assemble().min_eigenvalue(),
            floor: self.config.eps_pos,
        })
    }

    fn proposed_dt(&self, state: &FlowState) -> f64 {
        let cfg = &self.config;
        match cfg.scheme {
            Scheme::Explicit => {
                let h = self.geom.spacing();
                cfg.safety * h * h / state.inv_max
            }
            Scheme::SemiImplicit | Scheme::Exponential => {
                (cfg.safety * state.t).clamp(cfg.dt_min, cfg.dt_max)
            }
        }
    }

    /// Advances by one accepted step, never past `stop`.
    pub fn step_until(&self, state: &FlowState, stop: f64) -> Result<FlowState> {
        let mut dt = self.proposed_dt(state);
        self.advance(state, stop, &mut dt)
    }

    /// Advances by one accepted step starting from the trial size `dt`.
    pub fn step_with(&self, state: &FlowState, stop: f64, dt: f64) -> Result<FlowState> {
        let mut dt = dt;
        self.advance(state, stop, &mut dt)
    }

    /// Advances by one accepted step, with no landing constraint beyond `t_end`.
    pub fn step(&self, state: &FlowState) -> Result<FlowState> {
        self.step_until(state, self.config.t_end)
    }

    fn advance(&self, state: &FlowState, stop: f64, dt: &mut f64) -> Result<FlowState> {
        let remaining = stop - state.t;
        if remaining <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "cannot step from t = {} to {stop}",
                state.t
            )));
        }
        let mut forcing = state.dot_phi.spectrum();
        if self.config.dealias {
            for (c, &keep) in forcing.coeffs_mut().iter_mut().zip(&self.dealias_mask) {
                if !keep {
                    *c = Complex64::new(0.0, 0.0);
                }
            }
        }
        let phi_spec = state.phi.spectrum();
        let mut rejections = 0;
        loop {
            let (step, t_new) = if *dt >= remaining * (1.0 - 1e-12) {
                (remaining, stop)
            } else {
                (*dt, state.t + *dt)
            };
            let c = state.stab;
            let data: Vec<Complex64> = phi_spec
                .coeffs()
                .iter()
                .zip(forcing.coeffs())
                .zip(&self.background_symbol)
                .map(|((p, f), &sym)| {
                    let z = c * sym * step;
                    let mult = match self.config.scheme {
                        Scheme::Explicit => 1.0,
                        Scheme::SemiImplicit => 1.0 / (1.0 - z),
                        Scheme::Exponential => phi1(z),
                    };
                    p + f * (step * mult)
                })
                .collect();
            let phi_new = SpectralCoeffs::new(self.geom, data)?.to_real();
            if let Some(next) =
                self.evaluate(t_new, phi_new, step, state.rejections + rejections)
            {
                return Ok(next);
            }
            rejections += 1;
            if rejections > self.config.max_rejections {
                return Err(Error::FlowFailure {
                    t: state.t,
                    reason: format!(
                        "{rejections} consecutive rejected steps (last Δt = {step:.3e})"
                    ),
                    last_good: Box::new(state.clone()),
                });
            }
            *dt = step / 2.0;
        }
    }

    /// Per-step diagnostics of a state.
    pub fn diagnostics(&self, state: &FlowState) -> Result<StepDiagnostics> {
        // Ric = −∂∂̄ log det g = −∂∂̄ φ̇
        let ric = complex_hessian(&state.dot_phi)?.scale(-1.0);
        let g = &state.coefficients;
        let min_r = g
            .points()
            .iter()
            .zip(ric.points())
            .map(|(a, b)| a.trace_of(b))
            .fold(f64::INFINITY, f64::min);
        Ok(StepDiagnostics {
            t: state.t,
            dt: state.dt,
            min_r,
            min_dot_phi: state.dot_phi.min(),
            max_dot_phi: state.dot_phi.max(),
            min_eig: state.min_eig,
            volume: self.geom.volume_factor() * integrate(&g.det()),
        })
    }
}

/// Integrates the flow from `metric0` to `config.t_end`.
pub fn run_flow(metric0: &KahlerMetric, config: &FlowConfig) -> Result<FlowTrace> {
    config.validate()?;
    metric0.assemble().require_positive(config.eps_pos)?;
    let projection = harmonic_projection(metric0)?;
    let flow = Flow::new(metric0.clone(), projection.flat, config.clone())?;
    let mut state = flow.initial_state()?;
    let mut diagnostics = vec![flow.diagnostics(&state)?];
    let mut snapshots = Vec::with_capacity(config.snapshot_times.len());
    for stop in config.stops() {
        while state.t < stop {
            state = flow.step_until(&state, stop)?;
            diagnostics.push(flow.diagnostics(&state)?);
        }
        if config.snapshot_times.contains(&stop) {
            snapshots.push(Snapshot {
                t: stop,
                phi: state.phi.clone(),
            });
        }
    }
    Ok(FlowTrace {
        config: config.clone(),
        initial: metric0.clone(),
        alpha: projection.flat,
        projection_u: projection.u,
        snapshots,
        diagnostics,
    })
}

/// Linearized decay rate of the mode `cos(2π k·x)` under the flow at the flat background `I`.
pub fn linear_decay_rate(k: &[i64]) -> f64 {
    PI * PI * k.iter().map(|v| (v * v) as f64).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{lp_norm_unweighted, ScalarField};
    use approx::assert_relative_eq;

    fn cosine_metric(a: f64, size: usize) -> KahlerMetric {
        let geom = TorusGeometry::new(1, size).unwrap();
        let phi = ScalarField::from_fn(geom, |p| a * (2.0 * PI * p[0]).cos());
        KahlerMetric::new(HermMatrix::identity(1), phi).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(FlowConfig::default().validate().is_ok());
        let mut c = FlowConfig::default();
        c.t_end = 3.0;
        assert!(c.validate().is_err());
        let mut c = FlowConfig::default();
        c.snapshot_times = vec![0.5, 0.1];
        assert!(c.validate().is_err());
        assert!(FlowConfig::until(0.1).validate().is_ok());
    }

    #[test]
    fn dot_phi_single_mode() {
        let m = cosine_metric(0.05, 32);
        let d = dot_phi(&m, &ScalarField::zeros(m.geometry()), &FlatMetric::identity(1)).unwrap();
        let geom = m.geometry();
        for idx in 0..geom.len() {
            let x = geom.point(idx)[0];
            let expected = (1.0 - 0.05 * PI * PI * (2.0 * PI * x).cos()).ln();
            assert_relative_eq!(d.values()[idx], expected, epsilon = 1e-12);
        }
        // mass identity ∫ e^{φ̇} det H_α = ∫ det g
        let lhs = integrate(&d.map(f64::exp));
        assert_relative_eq!(lhs, integrate(&m.assemble().det()), epsilon = 1e-14);
    }

    #[test]
    fn flat_data_is_stationary() {
        let geom = TorusGeometry::new(1, 16).unwrap();
        let m = KahlerMetric::flat(geom, HermMatrix::identity(1)).unwrap();
        let trace = run_flow(&m, &FlowConfig::until(0.05)).unwrap();
        for s in &trace.snapshots {
            assert!(s.phi.sup_norm() <= 1e-12);
        }
        for d in &trace.diagnostics {
            assert!(d.min_r.abs() < 1e-12);
        }
    }

    #[test]
    fn each_scheme_decays_a_linear_mode() {
        let a = 1e-4;
        let m = cosine_metric(a, 16);
        for scheme in [Scheme::Explicit, Scheme::SemiImplicit, Scheme::Exponential] {
            let cfg = FlowConfig {
                scheme,
                dt_max: 1e-4,
                ..FlowConfig::until(0.02)
            };
            let trace = run_flow(&m, &cfg).unwrap();
            let snap = trace.final_snapshot().unwrap();
            let total = m.potential().add(&snap.phi);
            let total = total.shift(-integrate(&total));
            let amp = lp_norm_unweighted(&total, 2.0).unwrap() * 2f64.sqrt();
            let ratio = amp / a;
            let expected = (-linear_decay_rate(&[1]) * 0.02).exp();
            assert!(
                (ratio - expected).abs() / expected < 5e-3,
                "{scheme:?}: {ratio} vs {expected}"
            );
        }
    }

    #[test]
    fn near_degenerate_metric_triggers_rejection() {
        let b = 1.0 - 1e-7;
        let m = cosine_metric(b / (PI * PI), 32);
        assert!(m.assemble().min_eigenvalue() < 2e-7);
        let alpha = FlatMetric::identity(1);
        let cfg = FlowConfig {
            scheme: Scheme::Explicit,
            ..FlowConfig::default()
        };
        let flow = Flow::new(m, alpha, cfg).unwrap();
        let s0 = flow.initial_state().unwrap();
        let s1 = flow.step_with(&s0, 1.0, 0.1).unwrap();
        assert!(s1.rejections >= 1);
        let halvings = (0.1 / s1.dt).log2();
        assert_relative_eq!(halvings, halvings.round(), epsilon = 1e-9);
        assert!(s1.min_eig >= EPS_POS);
    }

    #[test]
    fn too_many_rejections_is_a_flow_failure() {
        let b = 1.0 - 1e-7;
        let m = cosine_metric(b / (PI * PI), 32);
        let cfg = FlowConfig {
            scheme: Scheme::Explicit,
            max_rejections: 0,
            ..FlowConfig::default()
        };
        let flow = Flow::new(m, FlatMetric::identity(1), cfg).unwrap();
        let s0 = flow.initial_state().unwrap();
        match flow.step_with(&s0, 1.0, 0.1) {
            Err(Error::FlowFailure { last_good, .. }) => assert_eq!(last_good.t, 0.0),
            other => panic!("expected failure, got {other:?}"),
        }
    }
}
