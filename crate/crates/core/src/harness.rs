//! Measured constants, signed slacks and rate fits over completed flow traces.
//!
//! Measurement and judgement are split: each `*Fragment` records raw quantities
//! from one scenario, [`fit_family_constants`] takes the maximum of the per-scenario
//! candidates, and [`scenario_report`] / [`family_report`] turn the fragments into
//! checks. A check passes iff `slack ≥ −tolerance`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::distance::DistanceFragment;
use crate::error::{Error, Result};
use crate::field::{integrate, random_band_limited, ScalarField, TorusGeometry};
use crate::flow::FlowTrace;
use crate::geometry::{harmonic_projection, pair_test_form, volume_density, KahlerMetric, TestForm};
use crate::herm::HermMatrix;
use num_complex::Complex64;

/// Tolerance of integration-by-parts identities.
pub const IDENTITY_TOL: f64 = 1e-8;
/// Tolerance for comparisons against constants fitted from the same data.
pub const FIT_TOL: f64 = 1e-12;
pub const DOT_PHI_DRIFT_TOL: f64 = 1e-4;
pub const VOLUME_DRIFT_TOL: f64 = 1e-7;
pub const PREDICTED_RATE: f64 = -0.5;
pub const RATE_TOL: f64 = 0.15;
pub const PAIRING_RATE_TOL: f64 = 0.1;
/// Fraction of non-trivial test forms whose pairing rate must pass.
pub const PAIRING_RATE_QUORUM: f64 = 0.8;
/// Largest fitted growth exponent of a "uniform" constant.
pub const UNIFORMITY_TOL: f64 = 0.1;
pub const DISTANCE_LIMSUP_TOL: f64 = 0.03;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub constants: BTreeMap<String, f64>,
    pub slack: f64,
    pub pass: bool,
    pub tolerance: f64,
}

impl CheckOutcome {
    /// Non-finite slacks are clamped to the finite range; NaN counts as failing.
    pub fn new(slack: f64, tolerance: f64) -> Self {
        let slack = if slack.is_nan() {
            f64::MIN
        } else {
            slack.clamp(f64::MIN, f64::MAX)
        };
        CheckOutcome {
            constants: BTreeMap::new(),
            slack,
            pass: slack >= -tolerance,
            tolerance,
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.constants.insert(name.to_string(), value);
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EstimateReport {
    pub checks: BTreeMap<String, CheckOutcome>,
    pub measurements: BTreeMap<String, f64>,
}

impl EstimateReport {
    pub fn check(&mut self, name: impl Into<String>, outcome: CheckOutcome) {
        self.checks.insert(name.into(), outcome);
    }

    pub fn measure(&mut self, name: impl Into<String>, value: f64) {
        self.measurements.insert(name.into(), value);
    }

    pub fn all_pass(&self) -> bool {
        self.checks.values().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|(_, c)| !c.pass)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Column names of [`EstimateReport::csv_row`].
    pub fn csv_header(&self) -> String {
        let mut cols = Vec::new();
        for name in self.checks.keys() {
            cols.push(format!("{name}.slack"));
            cols.push(format!("{name}.pass"));
        }
        cols.extend(self.measurements.keys().cloned());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = Vec::new();
        for c in self.checks.values() {
            cols.push(format!("{:e}", c.slack));
            cols.push(c.pass.to_string());
        }
        cols.extend(self.measurements.values().map(|v| format!("{v:e}")));
        cols.join(",")
    }
}

fn sqrt_i(i: u32) -> f64 {
    (i as f64).sqrt()
}

/// Largest drop `x_k − x_l` over `k < l`.
pub fn max_drawdown(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for v in values {
        peak = peak.max(v);
        worst = worst.max(peak - v);
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatRepresentativeFragment {
    /// `sup|u|` in the gauge `max u = 0`.
    pub sup_abs_u: f64,
    /// `tr_{ω_h} α` with `ω_h = I`.
    pub trace_h_alpha: f64,
    /// `tr_α ω_h`.
    pub trace_alpha_h: f64,
    /// `min_x log(det g / det H_α)`.
    pub floor: f64,
    pub residual: f64,
}

pub fn check_flat_representative(metric: &KahlerMetric) -> Result<FlatRepresentativeFragment> {
    let proj = harmonic_projection(metric)?;
    let alpha = proj.flat.matrix();
    let id = HermMatrix::identity(alpha.n());
    let shift = alpha.log_det();
    let floor = metric.assemble().log_det().map(|v| v - shift).min();
    Ok(FlatRepresentativeFragment {
        sup_abs_u: proj.u.sup_norm(),
        trace_h_alpha: id.trace_of(alpha),
        trace_alpha_h: alpha.trace_of(&id),
        floor,
        residual: proj.residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotBounds {
    pub t: f64,
    pub sup_abs_phi: f64,
    /// `sup_x t^{n−1} e^{−φ̇} tr_α ω(t)`.
    pub trace_ratio: f64,
    /// Smallest `C` with `e^{−C/t} I ≤ ω(t) ≤ e^{C/t} I`.
    pub equivalence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowBoundsFragment {
    pub n: usize,
    pub snapshots: Vec<SnapshotBounds>,
    pub sup_abs_phi: f64,
    pub inf_dot_phi: f64,
    /// `sup_{t>0} t·(max_x φ̇ − n)`.
    pub sup_scaled_upper: f64,
    pub sup_trace_ratio: f64,
    pub sup_equivalence: f64,
    pub dot_phi_drawdown: f64,
    /// `max_t |V(t) − V(0)| / V(0)`.
    pub volume_deviation: f64,
}

pub fn check_flow_bounds(trace: &FlowTrace) -> Result<FlowBoundsFragment> {
    let n = trace.geometry().n();
    if trace.snapshots.is_empty() {
        return Err(Error::MissingSnapshot(trace.config.t_end));
    }
    let mut snapshots = Vec::with_capacity(trace.snapshots.len());
    for snap in &trace.snapshots {
        let g = trace.coefficients_at(snap)?;
        let dot = trace.dot_phi_at(snap)?;
        let alpha = trace.alpha.matrix();
        let tpow = snap.t.powi(n as i32 - 1);
        let trace_ratio = g
            .points()
            .iter()
            .zip(dot.values())
            .map(|(m, &d)| tpow * (-d).exp() * alpha.trace_of(m))
            .fold(f64::NEG_INFINITY, f64::max);
        let equivalence = g
            .points()
            .iter()
            .map(|m| {
                let (lo, hi) = m.eigenvalues();
                snap.t * hi.ln().max(-lo.ln())
            })
            .fold(f64::NEG_INFINITY, f64::max);
        snapshots.push(SnapshotBounds {
            t: snap.t,
            sup_abs_phi: snap.phi.sup_norm(),
            trace_ratio,
            equivalence,
        });
    }
    let diags = &trace.diagnostics;
    let v0 = diags[0].volume;
    Ok(FlowBoundsFragment {
        n,
        sup_abs_phi: snapshots.iter().map(|s| s.sup_abs_phi).fold(0.0, f64::max),
        inf_dot_phi: diags.iter().map(|d| d.min_dot_phi).fold(f64::INFINITY, f64::min),
        sup_scaled_upper: diags
            .iter()
            .filter(|d| d.t > 0.0)
            .map(|d| d.t * (d.max_dot_phi - n as f64))
            .fold(f64::NEG_INFINITY, f64::max),
        sup_trace_ratio: snapshots.iter().map(|s| s.trace_ratio).fold(f64::NEG_INFINITY, f64::max),
        sup_equivalence: snapshots.iter().map(|s| s.equivalence).fold(f64::NEG_INFINITY, f64::max),
        dot_phi_drawdown: max_drawdown(diags.iter().map(|d| d.min_dot_phi)),
        volume_deviation: diags
            .iter()
            .map(|d| (d.volume - v0).abs() / v0)
            .fold(0.0, f64::max),
        snapshots,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarFloorFragment {
    pub initial_min_r: f64,
    /// Minimum over all steps of `min_x R`.
    pub min_r: f64,
    pub drawdown: f64,
}

pub fn check_scalar_floor(trace: &FlowTrace) -> ScalarFloorFragment {
    let diags = &trace.diagnostics;
    ScalarFloorFragment {
        initial_min_r: diags[0].min_r,
        min_r: diags.iter().map(|d| d.min_r).fold(f64::INFINITY, f64::min),
        drawdown: max_drawdown(diags.iter().map(|d| d.min_r)),
    }
}

impl ScalarFloorFragment {
    pub fn floor_tolerance(i: u32) -> f64 {
        1e-3 * (1.0 + 1.0 / i as f64)
    }

    pub fn drift_tolerance(&self) -> f64 {
        1e-3 * (1.0 + self.initial_min_r.abs())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTestForm {
    pub name: String,
    pub form: TestForm,
}

impl NamedTestForm {
    /// `f ≡ 1`, for which the pairing never changes.
    pub fn is_trivial(&self) -> bool {
        let v = self.form.f.values();
        v.iter().all(|&x| x == v[0])
    }
}

/// Real basis of constant Hermitian matrices.
pub fn hermitian_basis(n: usize) -> Vec<(String, HermMatrix)> {
    match n {
        1 => vec![("b0".into(), HermMatrix::identity(1))],
        _ => vec![
            ("b11".into(), HermMatrix::diagonal(&[1.0, 0.0])),
            ("b22".into(), HermMatrix::diagonal(&[0.0, 1.0])),
            ("b12re".into(), HermMatrix::two(0.0, 0.0, Complex64::new(1.0, 0.0))),
            ("b12im".into(), HermMatrix::two(0.0, 0.0, Complex64::new(0.0, 1.0))),
        ],
    }
}

/// `{f ≡ 1} ∪ {random f, max_mode 3} × {constant β basis}`.
pub fn test_form_battery(geom: TorusGeometry, count: usize, seed: u64) -> Result<Vec<NamedTestForm>> {
    let n = geom.n();
    let mut out = vec![NamedTestForm {
        name: "one".into(),
        form: TestForm::scalar(ScalarField::constant(geom, 1.0)),
    }];
    let basis = hermitian_basis(n);
    for s in 0..count {
        let f = random_band_limited(seed.wrapping_add(s as u64), 3.min(geom.dealias_cutoff()), geom)?;
        for (bname, beta) in &basis {
            let name = if n == 1 { format!("f{s}") } else { format!("f{s}.{bname}") };
            out.push(NamedTestForm {
                name,
                form: TestForm::new(f.clone(), *beta)?,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormPairing {
    pub name: String,
    pub trivial: bool,
    pub pairing0: f64,
    pub pairing1: f64,
    /// `E = ∫ φ(1)·ρ_η`.
    pub e: f64,
    /// `|pairing1 − pairing0 − E|`.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakConvergenceFragment {
    pub forms: Vec<FormPairing>,
}

pub fn check_weak_convergence(trace: &FlowTrace, forms: &[NamedTestForm]) -> Result<WeakConvergenceFragment> {
    let snap = trace.require_snapshot(1.0)?;
    let g0 = trace.initial.assemble();
    let g1 = trace.coefficients_at(snap)?;
    let forms = forms
        .iter()
        .map(|nf| {
            let pairing0 = pair_test_form(&g0, &nf.form);
            let pairing1 = pair_test_form(&g1, &nf.form);
            let e = integrate(&snap.phi.mul(&nf.form.ddbar_density()));
            FormPairing {
                name: nf.name.clone(),
                trivial: nf.is_trivial(),
                pairing0,
                pairing1,
                e,
                residual: (pairing1 - pairing0 - e).abs(),
            }
        })
        .collect();
    Ok(WeakConvergenceFragment { forms })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqNorm {
    pub q: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeDensityFragment {
    /// `min_x [v(1 + 1e−6) − e^{−1/i} f]`.
    pub pointwise_slack: f64,
    /// `‖v − f‖_{L¹(ω_∞)}`.
    pub l1_gap: f64,
    /// `2(1 − e^{−1/i}) ∫ f ω_∞ⁿ`.
    pub l1_bound: f64,
    pub v_minus_one_l1: f64,
    pub v_minus_one_lq: Vec<LqNorm>,
}

/// `v = ω₀ⁿ/αⁿ`, `f = ω(1)ⁿ/αⁿ`, integrals against `αⁿ`.
pub fn check_volume_density(trace: &FlowTrace, i: u32, qs: &[f64]) -> Result<VolumeDensityFragment> {
    let n = trace.geometry().n() as f64;
    let snap = trace.require_snapshot(1.0)?;
    let v = volume_density(&trace.initial.assemble(), &trace.alpha)?;
    let f = volume_density(&trace.coefficients_at(snap)?, &trace.alpha)?;
    let w = trace.alpha.volume();
    let decay = (-1.0 / i as f64).exp();
    let pointwise_slack = v
        .zip_map(&f, |a, b| a * (1.0 + 1e-6) - decay * b)
        .min();
    let l1_gap = w * integrate(&v.zip_map(&f, |a, b| (a - b).abs()));
    let l1_bound = 2.0 * (1.0 - decay) * w * integrate(&f);
    let dev = v.map(|a| (a - 1.0).abs());
    let v_minus_one_lq = qs
        .iter()
        .map(|&q| {
            let e = q / n;
            LqNorm {
                q,
                value: (w * integrate(&dev.map(|d| d.powf(e)))).powf(1.0 / e),
            }
        })
        .collect();
    Ok(VolumeDensityFragment {
        pointwise_slack,
        l1_gap,
        l1_bound,
        v_minus_one_l1: w * integrate(&dev),
        v_minus_one_lq,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    pub points: usize,
}

/// Least-squares slope of `log y` against `log i`.
pub fn fit_rate(values: &[(f64, f64)]) -> Result<RateFit> {
    if values.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 3 points, got {}",
            values.len()
        )));
    }
    if values.iter().any(|&(i, y)| !(i > 0.0) || !(y > 0.0) || !y.is_finite()) {
        return Err(Error::InvalidArgument("rate fit needs positive finite values".into()));
    }
    let pts: Vec<(f64, f64)> = values.iter().map(|&(i, y)| (i.ln(), y.ln())).collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("rate fit needs distinct indices".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(RateFit {
        slope,
        intercept,
        residual: (rss / m).sqrt(),
        points: pts.len(),
    })
}

/// Everything measured on one member of a family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeasurements {
    pub i: u32,
    pub amplitude: f64,
    pub flat_representative: FlatRepresentativeFragment,
    pub flow_bounds: FlowBoundsFragment,
    pub scalar_floor: ScalarFloorFragment,
    pub weak: WeakConvergenceFragment,
    pub volume: VolumeDensityFragment,
    pub distance: Option<DistanceFragment>,
}

/// Runs every measurement on a completed trace.
pub fn measure_scenario(
    trace: &FlowTrace,
    i: u32,
    amplitude: f64,
    forms: &[NamedTestForm],
    qs: &[f64],
    distance: Option<DistanceFragment>,
) -> Result<ScenarioMeasurements> {
    if i == 0 {
        return Err(Error::InvalidArgument("scenario index must be at least 1".into()));
    }
    Ok(ScenarioMeasurements {
        i,
        amplitude,
        flat_representative: check_flat_representative(&trace.initial)?,
        flow_bounds: check_flow_bounds(trace)?,
        scalar_floor: check_scalar_floor(trace),
        weak: check_weak_convergence(trace, forms)?,
        volume: check_volume_density(trace, i, qs)?,
        distance,
    })
}

/// Per-scenario candidates for the uniform constants.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilyConstants {
    pub l1_potential: f64,
    pub l1_equivalence: f64,
    pub l1_floor: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub c4: f64,
    pub pairing: BTreeMap<String, f64>,
    pub distance: f64,
}

impl FamilyConstants {
    pub fn candidates(m: &ScenarioMeasurements) -> Self {
        let fr = &m.flat_representative;
        let fb = &m.flow_bounds;
        let si = sqrt_i(m.i);
        FamilyConstants {
            l1_potential: fr.sup_abs_u,
            l1_equivalence: fr.trace_h_alpha.max(fr.trace_alpha_h),
            l1_floor: (-fr.floor).max(0.0) * si,
            l2: fb.sup_abs_phi,
            l3: ((-fb.inf_dot_phi).max(0.0) * si).max(fb.sup_scaled_upper).max(0.0),
            l4: fb.sup_trace_ratio,
            c4: fb.sup_equivalence.max(0.0),
            pairing: m
                .weak
                .forms
                .iter()
                .map(|f| (f.name.clone(), f.e.abs() * si))
                .collect(),
            distance: m.distance.as_ref().map_or(0.0, |d| d.c),
        }
    }

    fn merge(&mut self, other: &FamilyConstants) {
        self.l1_potential = self.l1_potential.max(other.l1_potential);
        self.l1_equivalence = self.l1_equivalence.max(other.l1_equivalence);
        self.l1_floor = self.l1_floor.max(other.l1_floor);
        self.l2 = self.l2.max(other.l2);
        self.l3 = self.l3.max(other.l3);
        self.l4 = self.l4.max(other.l4);
        self.c4 = self.c4.max(other.c4);
        self.distance = self.distance.max(other.distance);
        for (k, v) in &other.pairing {
            let e = self.pairing.entry(k.clone()).or_insert(0.0);
            *e = e.max(*v);
        }
    }

    fn named(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("l1_potential", self.l1_potential),
            ("l1_equivalence", self.l1_equivalence),
            ("l1_floor", self.l1_floor),
            ("l2", self.l2),
            ("l3", self.l3),
            ("l4", self.l4),
            ("c4", self.c4),
        ]
    }
}

/// Maxima of the per-scenario candidates.
pub fn fit_family_constants(family: &[ScenarioMeasurements]) -> FamilyConstants {
    let mut out = FamilyConstants::default();
    for m in family {
        out.merge(&FamilyConstants::candidates(m));
    }
    out
}

/// All per-scenario checks against the family constants.
pub fn scenario_report(m: &ScenarioMeasurements, k: &FamilyConstants) -> EstimateReport {
    let mut r = EstimateReport::default();
    let i = m.i;
    let inv_sqrt = 1.0 / sqrt_i(i);
    let n = m.flow_bounds.n as f64;

    let fr = &m.flat_representative;
    r.check(
        "flat_representative.floor",
        CheckOutcome::new(fr.floor + k.l1_floor * inv_sqrt, FIT_TOL).with("l1_floor", k.l1_floor),
    );
    r.check(
        "flat_representative.potential",
        CheckOutcome::new(k.l1_potential - fr.sup_abs_u, FIT_TOL).with("l1_potential", k.l1_potential),
    );
    r.check(
        "flat_representative.equivalence",
        CheckOutcome::new(k.l1_equivalence - fr.trace_h_alpha.max(fr.trace_alpha_h), FIT_TOL)
            .with("l1_equivalence", k.l1_equivalence),
    );
    r.measure("flat_representative.sup_abs_u", fr.sup_abs_u);
    r.measure("flat_representative.trace_h_alpha", fr.trace_h_alpha);
    r.measure("flat_representative.trace_alpha_h", fr.trace_alpha_h);
    r.measure("flat_representative.floor", fr.floor);
    r.measure("flat_representative.residual", fr.residual);

    let fb = &m.flow_bounds;
    r.check(
        "flow.potential_bound",
        CheckOutcome::new(k.l2 - fb.sup_abs_phi, FIT_TOL).with("l2", k.l2),
    );
    r.check(
        "flow.dot_phi_lower",
        CheckOutcome::new(fb.inf_dot_phi + k.l3 * inv_sqrt, FIT_TOL).with("l3", k.l3),
    );
    r.check(
        "flow.dot_phi_upper",
        CheckOutcome::new(k.l3 - fb.sup_scaled_upper, FIT_TOL).with("l3", k.l3).with("n", n),
    );
    r.check(
        "flow.trace_bound",
        CheckOutcome::new(k.l4 - fb.sup_trace_ratio, FIT_TOL).with("l4", k.l4),
    );
    r.check(
        "flow.metric_equivalence",
        CheckOutcome::new(k.c4 - fb.sup_equivalence, FIT_TOL).with("c4", k.c4),
    );
    r.check(
        "flow.dot_phi_min_principle",
        CheckOutcome::new(-fb.dot_phi_drawdown, DOT_PHI_DRIFT_TOL),
    );
    r.check(
        "flow.volume_conservation",
        CheckOutcome::new(-fb.volume_deviation, VOLUME_DRIFT_TOL),
    );
    r.measure("flow.sup_abs_phi", fb.sup_abs_phi);
    r.measure("flow.inf_dot_phi", fb.inf_dot_phi);
    r.measure("flow.sup_scaled_upper", fb.sup_scaled_upper);
    r.measure("flow.sup_trace_ratio", fb.sup_trace_ratio);
    r.measure("flow.sup_equivalence", fb.sup_equivalence);
    for s in &fb.snapshots {
        r.measure(format!("flow.trace_ratio@{}", s.t), s.trace_ratio);
        r.measure(format!("flow.equivalence@{}", s.t), s.equivalence);
    }

    let sf = &m.scalar_floor;
    r.check(
        "scalar_floor.margin",
        CheckOutcome::new(sf.min_r + 1.0 / i as f64, ScalarFloorFragment::floor_tolerance(i))
            .with("floor", -1.0 / i as f64),
    );
    r.check(
        "scalar_floor.min_principle",
        CheckOutcome::new(-sf.drawdown, sf.drift_tolerance()),
    );
    r.measure("scalar_floor.initial_min_r", sf.initial_min_r);
    r.measure("scalar_floor.min_r", sf.min_r);

    for f in &m.weak.forms {
        r.check(
            format!("weak.identity.{}", f.name),
            CheckOutcome::new(-f.residual, IDENTITY_TOL),
        );
        let c = k.pairing.get(&f.name).copied().unwrap_or(0.0);
        r.check(
            format!("weak.e_bound.{}", f.name),
            CheckOutcome::new(c * inv_sqrt - f.e.abs(), FIT_TOL).with("c_e", c),
        );
        r.measure(format!("weak.e.{}", f.name), f.e);
    }

    let vd = &m.volume;
    r.check("volume.pointwise", CheckOutcome::new(vd.pointwise_slack, 0.0));
    r.check(
        "volume.l1",
        CheckOutcome::new(vd.l1_bound * (1.0 + 1e-6) - vd.l1_gap, 0.0),
    );
    r.measure("volume.v_minus_one_l1", vd.v_minus_one_l1);
    for lq in &vd.v_minus_one_lq {
        r.measure(format!("volume.v_minus_one_q{}", lq.q), lq.value);
    }

    if let Some(d) = &m.distance {
        r.check(
            "distance.estimate",
            CheckOutcome::new(d.min_slack(k.distance), FIT_TOL).with("c", k.distance).with("l", d.l),
        );
        r.measure("distance.l", d.l);
        r.measure("distance.c", d.c);
        r.measure("distance.max_flat_deviation", d.max_flat_deviation());
    }
    r.measure("amplitude", m.amplitude);
    r
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FamilyReport {
    pub constants: FamilyConstants,
    pub rates: BTreeMap<String, RateFit>,
    pub family: EstimateReport,
    pub scenarios: BTreeMap<u32, EstimateReport>,
}

impl FamilyReport {
    pub fn all_pass(&self) -> bool {
        self.family.all_pass() && self.scenarios.values().all(EstimateReport::all_pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn rate_of(family: &[ScenarioMeasurements], y: impl Fn(&ScenarioMeasurements) -> f64) -> Option<RateFit> {
    let pts: Vec<(f64, f64)> = family.iter().map(|m| (m.i as f64, y(m))).collect();
    fit_rate(&pts).ok()
}

/// Family constants, rate fits, uniformity flags and every scenario report.
///
/// Rate and uniformity checks need at least three indices with positive values;
/// with fewer they are omitted.
pub fn family_report(family: &[ScenarioMeasurements]) -> FamilyReport {
    let constants = fit_family_constants(family);
    let mut rates = BTreeMap::new();
    let mut report = EstimateReport::default();

    for (name, fit) in [
        ("dot_phi_lower", rate_of(family, |m| -m.flow_bounds.inf_dot_phi)),
        ("volume_floor", rate_of(family, |m| -m.flat_representative.floor)),
    ] {
        if let Some(fit) = fit {
            report.check(
                format!("rate.{name}"),
                CheckOutcome::new(PREDICTED_RATE - fit.slope, RATE_TOL).with("slope", fit.slope),
            );
            rates.insert(name.to_string(), fit);
        }
    }

    let names: Vec<String> = family
        .first()
        .map(|m| m.weak.forms.iter().filter(|f| !f.trivial).map(|f| f.name.clone()).collect())
        .unwrap_or_default();
    let mut fitted = 0usize;
    let mut passing = 0usize;
    for name in &names {
        let fit = rate_of(family, |m| {
            m.weak.forms.iter().find(|f| &f.name == name).map_or(f64::NAN, |f| f.e.abs())
        });
        if let Some(fit) = fit {
            fitted += 1;
            if PREDICTED_RATE - fit.slope >= -PAIRING_RATE_TOL {
                passing += 1;
            }
            rates.insert(format!("pairing.{name}"), fit);
        }
    }
    if fitted > 0 {
        let required = (PAIRING_RATE_QUORUM * names.len() as f64).ceil();
        report.check(
            "rate.pairings",
            CheckOutcome::new(passing as f64 - required, 0.0)
                .with("passing", passing as f64)
                .with("required", required),
        );
    }

    if family.len() >= 2 {
        let l1: Vec<f64> = family.iter().map(|m| m.volume.v_minus_one_l1).collect();
        let decrease = l1.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
        report.check("volume.v_minus_one_decreasing", CheckOutcome::new(decrease, 0.0));
    }

    let candidates: Vec<FamilyConstants> = family.iter().map(FamilyConstants::candidates).collect();
    for (idx, (name, _)) in constants.named().into_iter().enumerate() {
        let pts: Vec<(f64, f64)> = family
            .iter()
            .zip(&candidates)
            .map(|(m, c)| (m.i as f64, c.named()[idx].1))
            .collect();
        if let Ok(fit) = fit_rate(&pts) {
            report.check(
                format!("uniformity.{name}"),
                CheckOutcome::new(-fit.slope, UNIFORMITY_TOL).with("slope", fit.slope),
            );
            rates.insert(format!("uniformity.{name}"), fit);
        }
    }

    if let Some(last) = family.iter().filter(|m| m.distance.is_some()).max_by_key(|m| m.i) {
        let d = last.distance.as_ref().expect("distance fragment");
        report.check(
            "distance.limsup",
            CheckOutcome::new(-d.max_flat_deviation(), DISTANCE_LIMSUP_TOL).with("i", last.i as f64),
        );
    }

    for (name, value) in constants.named() {
        report.measure(format!("constant.{name}"), value);
    }
    for (name, value) in &constants.pairing {
        report.measure(format!("constant.pairing.{name}"), *value);
    }
    report.measure("constant.distance", constants.distance);

    let scenarios = family
        .iter()
        .map(|m| (m.i, scenario_report(m, &constants)))
        .collect();
    FamilyReport {
        constants,
        rates,
        family: report,
        scenarios,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn slack_sign_decides_pass() {
        assert!(CheckOutcome::new(-0.5e-8, 1e-8).pass);
        assert!(!CheckOutcome::new(-2e-8, 1e-8).pass);
        let nan = CheckOutcome::new(f64::NAN, 1.0);
        assert!(!nan.pass && nan.slack.is_finite());
        assert!(CheckOutcome::new(f64::INFINITY, 0.0).slack.is_finite());
    }

    #[test]
    fn rate_fit_examples() {
        let exact: Vec<(f64, f64)> = [1.0, 4.0, 16.0, 64.0].iter().map(|&i: &f64| (i, i.powf(-0.5))).collect();
        let fit = fit_rate(&exact).unwrap();
        assert_relative_eq!(fit.slope, -0.5, epsilon = 1e-12);
        assert!(fit.residual < 1e-12);
        let flat = fit_rate(&[(1.0, 2.0), (2.0, 2.0), (5.0, 2.0)]).unwrap();
        assert!(flat.slope.abs() < 1e-14);
        assert!(fit_rate(&[(1.0, 1.0), (2.0, 0.5)]).is_err());
        assert!(fit_rate(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn noisy_rate_fit_recovers_slope() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]
            .iter()
            .map(|&i: &f64| (i, 3.0 * i.powf(-0.5) * (1.0 + 0.01 * rng.gen_range(-1.0..1.0))))
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope + 0.5).abs() < 0.05);
    }

    #[test]
    fn drawdown() {
        assert_eq!(max_drawdown([1.0, 2.0, 3.0]), 0.0);
        assert_relative_eq!(max_drawdown([1.0, 3.0, 2.5, 2.0, 4.0]), 1.0);
    }

    #[test]
    fn report_json_and_csv() {
        let mut r = EstimateReport::default();
        r.check("b", CheckOutcome::new(1.0, 0.0).with("c", 2.0));
        r.check("a", CheckOutcome::new(-1.0, 0.5));
        r.measure("m", 3.0);
        assert!(!r.all_pass());
        assert_eq!(r.failures(), vec!["a"]);
        assert_eq!(r.csv_header(), "a.slack,a.pass,b.slack,b.pass,m");
        assert_eq!(r.csv_row(), "-1e0,false,1e0,true,3e0");
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["checks"]["b"]["constants"]["c"], 2.0);
        assert_eq!(json["checks"]["a"]["pass"], false);
    }

    #[test]
    fn battery_shape() {
        let g1 = TorusGeometry::new(1, 16).unwrap();
        let b = test_form_battery(g1, 5, 9).unwrap();
        assert_eq!(b.len(), 6);
        assert!(b[0].is_trivial() && !b[1].is_trivial());
        let g2 = TorusGeometry::new(2, 16).unwrap();
        assert_eq!(test_form_battery(g2, 5, 9).unwrap().len(), 21);
    }
}
