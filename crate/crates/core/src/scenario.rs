//! Calibrated families `ω_{i,0} = H₀ + a_i ∂∂̄ψ` with `min R ∈ [−1/i, −0.5/i]`.
//!
//! One shape `ψ` is shared across the family; only the amplitude changes with
//! `i`. Every emitted metric is re-checked against positivity, the curvature
//! band and the two Λ-gates after calibration.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::field::{integrate, lp_norm, random_band_limited, ScalarField, TorusGeometry};
use crate::geometry::{KahlerMetric, EPS_POS};
use crate::herm::HermMatrix;

/// Upper end of the acceptance band as a fraction of the target floor.
pub const BAND_UPPER: f64 = 0.5;
/// The calibrator aims for `min R ∈ [target, SATURATION·target]` inside the band.
pub const SATURATION: f64 = 0.98;
pub const MAX_EVALUATIONS: usize = 60;
const START_AMPLITUDE: f64 = 1e-4;

/// Exponent of the trace gate; `∞` selects the uniform-equivalence regime.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinite,
}

impl Exponent {
    pub fn value(self) -> f64 {
        match self {
            Exponent::Finite(p) => p,
            Exponent::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Exponent::Infinite)
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(p) => write!(f, "{p}"),
            Exponent::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Exponent::Finite(p) => s.serialize_f64(*p),
            Exponent::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct Visitor;
        impl de::Visitor<'_> for Visitor {
            type Value = Exponent;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number ≥ 1 or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Exponent, E> {
                if v.is_infinite() && v > 0.0 {
                    Ok(Exponent::Infinite)
                } else if v >= 1.0 {
                    Ok(Exponent::Finite(v))
                } else {
                    Err(E::custom(format!("exponent {v} must be at least 1")))
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Exponent, E> {
                self.visit_f64(v as f64)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Exponent, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Exponent, E> {
                match v {
                    "inf" | "infinity" | "+inf" => Ok(Exponent::Infinite),
                    _ => Err(E::custom(format!("unknown exponent {v:?}, expected a number or \"inf\""))),
                }
            }
        }
        d.deserialize_any(Visitor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum Shape {
    /// Gaussian coefficients on `|k|_∞ ≤ max_mode`.
    Random,
    /// Sum of negative Fejér bumps at random centres.
    Wells { count: usize },
    /// `ψ ≡ 0`; every member is the flat metric `H₀` and is not calibrated.
    Flat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub max_mode: usize,
    pub shape: Shape,
    pub background: HermMatrix,
    pub indices: Vec<u32>,
    pub lambda: f64,
    pub p: Exponent,
}

impl ScenarioSpec {
    /// Random shape, `H₀ = I`, `Λ = 10`, `p = 2n`.
    pub fn new(n: usize, seed: u64, max_mode: usize, indices: Vec<u32>) -> Self {
        ScenarioSpec {
            seed,
            max_mode,
            shape: Shape::Random,
            background: HermMatrix::identity(n),
            indices,
            lambda: 10.0,
            p: Exponent::Finite(2.0 * n as f64),
        }
    }

    pub fn validate(&self, geom: TorusGeometry) -> Result<()> {
        if self.background.n() != geom.n() {
            return Err(Error::GeometryMismatch);
        }
        let min_eig = self.background.min_eigenvalue();
        if !(min_eig > 0.0) {
            return Err(Error::NotPositive { min_eig, floor: 0.0 });
        }
        if self.indices.is_empty() {
            return Err(Error::InvalidArgument("index list is empty".into()));
        }
        if self.indices[0] == 0 || self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "indices must be strictly increasing positive integers".into(),
            ));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("Λ = {} must be positive", self.lambda)));
        }
        if let Exponent::Finite(p) = self.p {
            if !(p >= 1.0) || !p.is_finite() {
                return Err(Error::InvalidArgument(format!("exponent p = {p} must be at least 1")));
            }
        }
        if !matches!(self.shape, Shape::Flat) {
            if self.max_mode == 0 || self.max_mode > geom.dealias_cutoff() {
                return Err(Error::InvalidArgument(format!(
                    "max_mode = {} must lie in 1..=N/3 = {} (dealiasing headroom)",
                    self.max_mode,
                    geom.dealias_cutoff()
                )));
            }
        }
        if let Shape::Wells { count } = self.shape {
            if count == 0 {
                return Err(Error::InvalidArgument("wells shape needs at least one well".into()));
            }
        }
        Ok(())
    }

    pub fn shape_field(&self, geom: TorusGeometry) -> Result<ScalarField> {
        match self.shape {
            Shape::Random => random_band_limited(self.seed, self.max_mode, geom),
            Shape::Wells { count } => wells_shape(self.seed, count, self.max_mode, geom),
            Shape::Flat => Ok(ScalarField::zeros(geom)),
        }
    }
}

/// `−Σ_b Π_a F_m(x_a − c_{b,a})` with the Fejér kernel `F_m`, normalized to zero mean
/// and unit L² norm.
pub fn wells_shape(seed: u64, count: usize, max_mode: usize, geom: TorusGeometry) -> Result<ScalarField> {
    if max_mode == 0 || max_mode > geom.dealias_cutoff() {
        return Err(Error::InvalidArgument(format!(
            "max_mode = {max_mode} must lie in 1..=N/3 = {}",
            geom.dealias_cutoff()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = geom.dim();
    let centres: Vec<Vec<f64>> = (0..count)
        .map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect())
        .collect();
    let m = max_mode as i64;
    let fejer = |s: f64| -> f64 {
        (-m..=m)
            .map(|k| (1.0 - k.abs() as f64 / (m + 1) as f64) * (2.0 * std::f64::consts::PI * k as f64 * s).cos())
            .sum()
    };
    let field = ScalarField::from_fn(geom, |x| {
        -centres
            .iter()
            .map(|c| (0..dim).map(|a| fejer(x[a] - c[a])).product::<f64>())
            .sum::<f64>()
    });
    let field = field.shift(-integrate(&field));
    let norm = integrate(&field.map(|v| v * v)).sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroShape);
    }
    Ok(field.scale(1.0 / norm))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub amplitude: f64,
    pub min_r: f64,
    pub evaluations: usize,
}

enum Probe {
    Positive(f64),
    Degenerate,
}

fn probe(psi: &ScalarField, h0: &HermMatrix, a: f64) -> Result<Probe> {
    let metric = KahlerMetric::new(*h0, psi.scale(a))?;
    let g = metric.assemble();
    if !(g.min_eigenvalue() >= EPS_POS) {
        return Ok(Probe::Degenerate);
    }
    let r = g.scalar_curvature()?;
    Ok(Probe::Positive(r.min()))
}

/// Finds `a > 0` with `min R(H₀ + a∂∂̄ψ) ∈ [target, 0.5·target]`.
///
/// Doubles from `a = 1e-4` until the floor is crossed, then bisects, accepting the
/// first value in `[target, 0.98·target]`; a value anywhere in the band is accepted
/// once the evaluation budget runs out.
pub fn calibrate_amplitude(psi: &ScalarField, h0: &HermMatrix, floor_target: f64) -> Result<Calibration> {
    if !(floor_target < 0.0) || !floor_target.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "floor target {floor_target} must be negative"
        )));
    }
    if psi.max() - psi.min() <= 1e-14 * psi.sup_norm().max(1.0) {
        return Err(Error::ZeroShape);
    }
    let in_band = |r: f64| r >= floor_target && r <= BAND_UPPER * floor_target;
    let saturated = |r: f64| r >= floor_target && r <= SATURATION * floor_target;
    let mut evaluations = 0;
    let mut best: Option<Calibration> = None;
    let consider = |a: f64, r: f64, evaluations: usize, best: &mut Option<Calibration>| {
        if in_band(r) && best.map_or(true, |b| r < b.min_r) {
            *best = Some(Calibration { amplitude: a, min_r: r, evaluations });
        }
    };

    let mut lo = 0.0;
    let mut a = START_AMPLITUDE;
    let hi = loop {
        if evaluations >= MAX_EVALUATIONS {
            return Err(Error::BracketFailure { amplitude: a, target: floor_target });
        }
        evaluations += 1;
        match probe(psi, h0, a)? {
            Probe::Degenerate => return Err(Error::BracketFailure { amplitude: a, target: floor_target }),
            Probe::Positive(r) if !r.is_finite() => {
                return Err(Error::BracketFailure { amplitude: a, target: floor_target })
            }
            Probe::Positive(r) => {
                consider(a, r, evaluations, &mut best);
                if saturated(r) {
                    return Ok(Calibration { amplitude: a, min_r: r, evaluations });
                }
                if r < floor_target {
                    break a;
                }
                lo = a;
                a *= 2.0;
            }
        }
    };

    let mut hi = hi;
    while evaluations < MAX_EVALUATIONS {
        let mid = 0.5 * (lo + hi);
        evaluations += 1;
        match probe(psi, h0, mid)? {
            Probe::Degenerate => hi = mid,
            Probe::Positive(r) => {
                consider(mid, r, evaluations, &mut best);
                if saturated(r) {
                    return Ok(Calibration { amplitude: mid, min_r: r, evaluations });
                }
                if r < floor_target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
        }
    }
    best.map(|b| Calibration { evaluations, ..b })
        .ok_or(Error::BracketFailure { amplitude: hi, target: floor_target })
}

/// One calibrated member of a family, with every gate value measured independently.
#[derive(Clone, Debug)]
pub struct ScenarioMember {
    pub i: u32,
    pub amplitude: f64,
    pub evaluations: usize,
    pub metric: KahlerMetric,
    pub min_r: f64,
    pub min_eig: f64,
    /// `∫ωⁿ`.
    pub volume: f64,
    /// `‖tr_{ω_h} ω‖_{L^p(ω_h)}` with `ω_h = I`.
    pub trace_norm: f64,
    /// `∫ max(R,0) ωⁿ / ∫ωⁿ`, at most `1/i` because `∫R ωⁿ = 0`.
    pub positive_part_budget: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateValues {
    pub min_r: f64,
    pub min_eig: f64,
    pub volume: f64,
    pub trace_norm: f64,
    pub positive_part_budget: f64,
}

/// Measures positivity, curvature floor, volume, trace norm and positive-part budget.
pub fn measure_gates(metric: &KahlerMetric, p: Exponent) -> Result<GateValues> {
    let geom = metric.geometry();
    let g = metric.assemble();
    let min_eig = g.min_eigenvalue();
    g.require_positive(EPS_POS)?;
    let r = g.scalar_curvature()?;
    let det = g.det();
    let det_mass = integrate(&det);
    let positive = integrate(&r.map(|v| v.max(0.0)).mul(&det));
    let weight = ScalarField::constant(geom, geom.volume_factor());
    let trace_norm = lp_norm(&g.trace(), p.value(), &weight)?;
    Ok(GateValues {
        min_r: r.min(),
        min_eig,
        volume: geom.volume_factor() * det_mass,
        trace_norm,
        positive_part_budget: positive / det_mass,
    })
}

fn check_member(spec: &ScenarioSpec, i: u32, gates: &GateValues, calibrated: bool) -> Result<()> {
    if gates.volume < 1.0 / spec.lambda {
        return Err(Error::GateViolation {
            gate: "volume",
            measured: gates.volume,
            bound: 1.0 / spec.lambda,
        });
    }
    if gates.trace_norm > spec.lambda {
        return Err(Error::GateViolation {
            gate: "trace L^p norm",
            measured: gates.trace_norm,
            bound: spec.lambda,
        });
    }
    let target = -1.0 / i as f64;
    if calibrated && !(gates.min_r >= target && gates.min_r <= BAND_UPPER * target) {
        return Err(Error::GateViolation {
            gate: "scalar curvature floor",
            measured: gates.min_r,
            bound: target,
        });
    }
    let budget_bound = 1.0 / i as f64 * (1.0 + 1e-9) + 1e-12;
    if gates.positive_part_budget > budget_bound {
        return Err(Error::GateViolation {
            gate: "positive-part budget",
            measured: gates.positive_part_budget,
            bound: 1.0 / i as f64,
        });
    }
    Ok(())
}

/// Calibrates one metric per index (concurrently) and re-checks every gate.
pub fn make_sequence(spec: &ScenarioSpec, geom: TorusGeometry) -> Result<Vec<ScenarioMember>> {
    spec.validate(geom)?;
    let psi = spec.shape_field(geom)?;
    let calibrated = !matches!(spec.shape, Shape::Flat);
    spec.indices
        .par_iter()
        .map(|&i| {
            let cal = if calibrated {
                calibrate_amplitude(&psi, &spec.background, -1.0 / i as f64)?
            } else {
                Calibration { amplitude: 0.0, min_r: 0.0, evaluations: 0 }
            };
            let metric = KahlerMetric::new(spec.background, psi.scale(cal.amplitude))?;
            let gates = measure_gates(&metric, spec.p)?;
            check_member(spec, i, &gates, calibrated)?;
            Ok(ScenarioMember {
                i,
                amplitude: cal.amplitude,
                evaluations: cal.evaluations,
                metric,
                min_r: gates.min_r,
                min_eig: gates.min_eig,
                volume: gates.volume,
                trace_norm: gates.trace_norm,
                positive_part_budget: gates.positive_part_budget,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn geom1(size: usize) -> TorusGeometry {
        TorusGeometry::new(1, size).unwrap()
    }

    #[test]
    fn single_mode_calibration_matches_closed_form() {
        let geom = geom1(64);
        let psi = ScalarField::from_fn(geom, |x| (2.0 * PI * x[0]).cos());
        let cal = calibrate_amplitude(&psi, &HermMatrix::identity(1), -1.0).unwrap();
        let b = cal.amplitude * PI * PI;
        let closed = -PI * PI * b / ((1.0 - b) * (1.0 - b));
        assert_relative_eq!(cal.min_r, closed, max_relative = 1e-9);
        assert!((-1.0..=-0.5).contains(&closed));
        assert!(cal.evaluations <= MAX_EVALUATIONS);
    }

    #[test]
    fn constant_shape_is_rejected() {
        let psi = ScalarField::constant(geom1(16), 2.0);
        assert!(matches!(
            calibrate_amplitude(&psi, &HermMatrix::identity(1), -1.0),
            Err(Error::ZeroShape)
        ));
    }

    #[test]
    fn rough_shape_fails_to_bracket() {
        // a high mode loses positivity long before the floor −1e8 is reached
        let psi = ScalarField::from_fn(geom1(64), |x| 1e-3 * (2.0 * PI * 20.0 * x[0]).cos());
        assert!(matches!(
            calibrate_amplitude(&psi, &HermMatrix::identity(1), -1e8),
            Err(Error::BracketFailure { .. })
        ));
    }

    #[test]
    fn amplitudes_decrease_along_the_family() {
        let spec = ScenarioSpec::new(1, 7, 3, vec![1, 4, 16, 100]);
        let members = make_sequence(&spec, geom1(64)).unwrap();
        for w in members.windows(2) {
            assert!(w[1].amplitude < w[0].amplitude);
        }
        for m in &members {
            let target = -1.0 / m.i as f64;
            assert!(m.min_r >= target && m.min_r <= 0.5 * target);
            assert!(m.min_eig >= 0.1);
            assert!(m.volume >= 0.1);
            assert!(m.trace_norm <= 10.0);
            assert!(m.positive_part_budget <= 1.0 / m.i as f64);
        }
    }

    #[test]
    fn sequences_are_deterministic() {
        let spec = ScenarioSpec::new(1, 11, 3, vec![1, 8]);
        let a = make_sequence(&spec, geom1(32)).unwrap();
        let b = make_sequence(&spec, geom1(32)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.amplitude.to_bits(), y.amplitude.to_bits());
            assert_eq!(x.metric, y.metric);
        }
    }

    #[test]
    fn wells_shape_is_band_limited_and_normalized() {
        let geom = geom1(32);
        let psi = wells_shape(3, 4, 3, geom).unwrap();
        assert!(integrate(&psi).abs() < 1e-12);
        assert_relative_eq!(integrate(&psi.map(|v| v * v)), 1.0, epsilon = 1e-12);
        let spec = psi.spectrum();
        geom.for_each_mode(|idx, k| {
            if k.iter().any(|v| v.abs() > 3) {
                assert!(spec.coeffs()[idx].norm() < 1e-10);
            }
        });
        let mut s = ScenarioSpec::new(1, 3, 3, vec![1, 2]);
        s.shape = Shape::Wells { count: 4 };
        make_sequence(&s, geom).unwrap();
    }

    #[test]
    fn gate_violation_carries_measured_value() {
        let mut spec = ScenarioSpec::new(1, 7, 3, vec![1]);
        spec.lambda = 1.5;
        // volume 2·0.2 = 0.4 is below 1/Λ
        spec.background = HermMatrix::scalar(1, 0.2);
        match make_sequence(&spec, geom1(32)) {
            Err(Error::GateViolation { gate, measured, bound }) => {
                assert_eq!(gate, "volume");
                assert!(measured < bound);
            }
            other => panic!("expected gate violation, got {other:?}"),
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let geom = geom1(32);
        let mut spec = ScenarioSpec::new(1, 1, 11, vec![1]);
        assert!(spec.validate(geom).is_err());
        spec.max_mode = 3;
        spec.indices = vec![4, 4];
        assert!(spec.validate(geom).is_err());
        spec.indices = vec![0, 1];
        assert!(spec.validate(geom).is_err());
    }

    #[test]
    fn exponent_serde() {
        let e: Exponent = serde_json::from_str("\"inf\"").unwrap();
        assert_eq!(e, Exponent::Infinite);
        let e: Exponent = serde_json::from_str("4").unwrap();
        assert_eq!(e, Exponent::Finite(4.0));
        assert!(serde_json::from_str::<Exponent>("0.5").is_err());
        assert_eq!(serde_json::to_string(&Exponent::Infinite).unwrap(), "\"inf\"");
    }
}
