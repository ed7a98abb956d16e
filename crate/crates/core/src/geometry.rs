//! Kähler-geometric quantities on the torus.
//!
//! Conventions used throughout:
//! - `ω = i g_{j k̄} dzʲ ∧ dz̄ᵏ` and `ωⁿ = 2ⁿ n! det(g) dLeb`.
//! - `Ric = −∂∂̄ log det g` and `R = g^{j k̄} R_{j k̄}` (half the Riemannian scalar curvature).
//! - `tr_a b = a^{j k̄} b_{j k̄} = tr(a⁻¹ b)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    complex_hessian, derivative, flat_laplacian, integrate, lp_norm_unweighted, ComplexField,
    ScalarField, TorusGeometry,
};
use crate::herm::{invert_lower, HermMatrix};

/// Positivity floor below which curvature computations refuse to run.
pub const EPS_POS: f64 = 1e-8;

/// Per-point Hermitian coefficient field `g_{j k̄}(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianField {
    geom: TorusGeometry,
    points: Vec<HermMatrix>,
}

impl HermitianField {
    pub fn from_points(geom: TorusGeometry, points: Vec<HermMatrix>) -> Result<Self> {
        if points.len() != geom.len() {
            return Err(Error::InvalidArgument("hermitian field length mismatch".into()));
        }
        if points.iter().any(|m| m.n() != geom.n()) {
            return Err(Error::InvalidArgument("matrix size differs from n".into()));
        }
        if points.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("hermitian field"));
        }
        Ok(HermitianField { geom, points })
    }

    /// Diagonal entries plus (for `n = 2`) the `1 2̄` entry.
    pub(crate) fn from_parts(
        geom: TorusGeometry,
        diag: Vec<ScalarField>,
        upper: Vec<ComplexField>,
    ) -> Self {
        let n = geom.n();
        let points = (0..geom.len())
            .map(|idx| match n {
                1 => HermMatrix::diagonal(&[diag[0].values()[idx]]),
                _ => HermMatrix::two(
                    diag[0].values()[idx],
                    diag[1].values()[idx],
                    upper[0].values()[idx],
                ),
            })
            .collect();
        HermitianField { geom, points }
    }

    pub fn constant(geom: TorusGeometry, h: HermMatrix) -> Self {
        assert_eq!(h.n(), geom.n());
        HermitianField {
            geom,
            points: vec![h; geom.len()],
        }
    }

    #[inline]
    pub fn geometry(&self) -> TorusGeometry {
        self.geom
    }

    #[inline]
    pub fn at(&self, idx: usize) -> HermMatrix {
        self.points[idx]
    }

    pub fn points(&self) -> &[HermMatrix] {
        &self.points
    }

    /// Component field `g_{j k̄}`.
    pub fn component(&self, j: usize, k: usize) -> ComplexField {
        ComplexField::from_vec_unchecked(
            self.geom,
            self.points.iter().map(|m| m.get(j, k)).collect(),
        )
    }

    pub fn map_scalar(&self, f: impl Fn(&HermMatrix) -> f64) -> ScalarField {
        ScalarField::from_vec_unchecked(self.geom, self.points.iter().map(f).collect())
    }

    pub fn add(&self, other: &HermitianField) -> HermitianField {
        assert_eq!(self.geom, other.geom);
        HermitianField {
            geom: self.geom,
            points: self
                .points
                .iter()
                .zip(&other.points)
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn add_constant(&self, h: &HermMatrix) -> HermitianField {
        HermitianField {
            geom: self.geom,
            points: self.points.iter().map(|a| a.add(h)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> HermitianField {
        HermitianField {
            geom: self.geom,
            points: self.points.iter().map(|a| a.scale(s)).collect(),
        }
    }

    /// Largest entrywise deviation from another field.
    pub fn max_abs_diff(&self, other: &HermitianField) -> f64 {
        let n = self.geom.n();
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| {
                let mut m: f64 = 0.0;
                for j in 0..n {
                    for k in 0..n {
                        m = m.max((a.get(j, k) - b.get(j, k)).norm());
                    }
                }
                m
            })
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.max_abs_diff(&HermitianField::constant(self.geom, HermMatrix::zeros(self.geom.n())))
    }

    /// Entrywise grid average.
    pub fn average(&self) -> HermMatrix {
        let n = self.geom.n();
        let mut out = HermMatrix::zeros(n);
        for j in 0..n {
            for k in j..n {
                let c = self.component(j, k);
                let re = integrate(&c.re());
                let im = integrate(&c.im());
                out.set(j, k, Complex64::new(re, im));
            }
        }
        out
    }

    pub fn det(&self) -> ScalarField {
        self.map_scalar(|m| m.det())
    }

    pub fn log_det(&self) -> ScalarField {
        self.map_scalar(|m| m.log_det())
    }

    pub fn trace(&self) -> ScalarField {
        self.map_scalar(|m| m.trace())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.points
            .iter()
            .map(|m| m.min_eigenvalue())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn require_positive(&self, floor: f64) -> Result<()> {
        let min_eig = self.min_eigenvalue();
        if min_eig.is_nan() || min_eig < floor {
            return Err(Error::NotPositive { min_eig, floor });
        }
        Ok(())
    }

    /// `R_{j k̄} = −∂ⱼ∂̄ₖ log det g`.
    pub fn ricci(&self) -> Result<HermitianField> {
        self.require_positive(EPS_POS)?;
        Ok(complex_hessian(&self.log_det())?.scale(-1.0))
    }

    /// `R = tr_g Ric`.
    pub fn scalar_curvature(&self) -> Result<ScalarField> {
        let ric = self.ricci()?;
        trace_wrt(self, &ric)
    }

    /// Pointwise norm of the Kähler curvature tensor
    /// `R_{j k̄ l m̄} = −∂ⱼ∂̄ₖ g_{l m̄} + g^{p q̄} ∂ⱼ g_{l q̄} ∂̄ₖ g_{p m̄}`, fully contracted with `g⁻¹`.
    pub fn riemann_norm(&self) -> Result<ScalarField> {
        self.require_positive(EPS_POS)?;
        let n = self.geom.n();
        let len = self.geom.len();
        let mut spectra = Vec::with_capacity(n * n);
        for l in 0..n {
            for m in 0..n {
                spectra.push(self.component(l, m).spectrum());
            }
        }
        let comp = |l: usize, m: usize| l * n + m;
        // d1[j][l*n+m] = ∂ⱼ g_{l m̄}
        let d1: Vec<Vec<ComplexField>> = (0..n)
            .map(|j| (0..n * n).map(|c| derivative(&spectra[c], &[j], &[])).collect())
            .collect();
        // dd[j*n+k][l*n+m] = ∂ⱼ∂̄ₖ g_{l m̄}
        let dd: Vec<Vec<ComplexField>> = (0..n * n)
            .map(|jk| {
                let (j, k) = (jk / n, jk % n);
                (0..n * n)
                    .map(|c| derivative(&spectra[c], &[j], &[k]))
                    .collect()
            })
            .collect();

        let mut out = Vec::with_capacity(len);
        let zero = Complex64::new(0.0, 0.0);
        for idx in 0..len {
            let g = self.points[idx];
            let ginv = g.inverse();
            let mut r = [[[[zero; 2]; 2]; 2]; 2];
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        for m in 0..n {
                            let mut v = -dd[j * n + k][comp(l, m)].values()[idx];
                            for p in 0..n {
                                for q in 0..n {
                                    // g^{p q̄} = (g⁻¹)[q][p]
                                    v += ginv.get(q, p)
                                        * d1[j][comp(l, q)].values()[idx]
                                        * d1[k][comp(m, p)].values()[idx].conj();
                                }
                            }
                            r[j][k][l][m] = v;
                        }
                    }
                }
            }
            let chol = g.cholesky().ok_or(Error::NotPositive {
                min_eig: g.min_eigenvalue(),
                floor: EPS_POS,
            })?;
            let t = invert_lower(n, &chol);
            let mut norm2 = 0.0;
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        for d in 0..n {
                            let mut v = zero;
                            for j in 0..n {
                                for k in 0..n {
                                    for l in 0..n {
                                        for m in 0..n {
                                            v += t[a][j]
                                                * t[b][k].conj()
                                                * t[c][l]
                                                * t[d][m].conj()
                                                * r[j][k][l][m];
                                        }
                                    }
                                }
                            }
                            norm2 += v.norm_sqr();
                        }
                    }
                }
            }
            out.push(norm2.sqrt());
        }
        Ok(ScalarField::from_vec_unchecked(self.geom, out))
    }
}

/// Constant positive-definite metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatMetric {
    h: HermMatrix,
}

impl FlatMetric {
    pub fn new(h: HermMatrix) -> Result<Self> {
        let min_eig = h.min_eigenvalue();
        if !h.is_finite() || min_eig.is_nan() || min_eig <= 0.0 {
            return Err(Error::NotPositive {
                min_eig,
                floor: 0.0,
            });
        }
        Ok(FlatMetric { h })
    }

    pub fn identity(n: usize) -> Self {
        FlatMetric {
            h: HermMatrix::identity(n),
        }
    }

    #[inline]
    pub fn matrix(&self) -> &HermMatrix {
        &self.h
    }

    pub fn n(&self) -> usize {
        self.h.n()
    }

    pub fn volume(&self) -> f64 {
        match self.h.n() {
            1 => 2.0 * self.h.det(),
            _ => 8.0 * self.h.det(),
        }
    }

    pub fn as_field(&self, geom: TorusGeometry) -> HermitianField {
        HermitianField::constant(geom, self.h)
    }
}

/// `ω = i(H + ∂∂̄φ)` with a constant background `H` and a mean-zero potential `φ`.
#[derive(Clone, Debug, PartialEq)]
pub struct KahlerMetric {
    h: HermMatrix,
    potential: ScalarField,
}

impl KahlerMetric {
    /// The potential is shifted to mean zero.
    pub fn new(h: HermMatrix, potential: ScalarField) -> Result<Self> {
        if h.n() != potential.geometry().n() {
            return Err(Error::GeometryMismatch);
        }
        FlatMetric::new(h)?;
        if !potential.is_finite() {
            return Err(Error::NonFinite("Kähler potential"));
        }
        let mean = integrate(&potential);
        Ok(KahlerMetric {
            h,
            potential: potential.shift(-mean),
        })
    }

    /// Keeps the potential bit-for-bit; it must already have mean zero up to rounding.
    pub(crate) fn from_normalized(h: HermMatrix, potential: ScalarField) -> Result<Self> {
        let mean = integrate(&potential);
        if mean.abs() > 1e-12 * potential.sup_norm().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "stored potential has mean {mean:e}, expected zero"
            )));
        }
        let mut out = Self::new(h, potential.clone())?;
        out.potential = potential;
        Ok(out)
    }

    pub fn flat(geom: TorusGeometry, h: HermMatrix) -> Result<Self> {
        Self::new(h, ScalarField::zeros(geom))
    }

    #[inline]
    pub fn background(&self) -> &HermMatrix {
        &self.h
    }

    #[inline]
    pub fn potential(&self) -> &ScalarField {
        &self.potential
    }

    #[inline]
    pub fn geometry(&self) -> TorusGeometry {
        self.potential.geometry()
    }

    /// `(λH, λφ)`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        Self::new(self.h.scale(lambda), self.potential.scale(lambda))
    }

    /// Adds `∂∂̄ψ` to the form (same class).
    pub fn with_added_potential(&self, psi: &ScalarField) -> Result<Self> {
        Self::new(self.h, self.potential.add(psi))
    }

    pub fn assemble(&self) -> HermitianField {
        assemble(self)
    }
}

/// `g = H + ∂∂̄φ`.
pub fn assemble(metric: &KahlerMetric) -> HermitianField {
    complex_hessian(&metric.potential)
        .expect("potential is finite by construction")
        .add_constant(&metric.h)
}

pub fn min_eigenvalue(g: &HermitianField) -> f64 {
    g.min_eigenvalue()
}

/// `∫ωⁿ = 2ⁿ n! ∫det g dLeb`.
pub fn volume(metric: &KahlerMetric) -> Result<f64> {
    let g = assemble(metric);
    volume_of(&g)
}

pub fn volume_of(g: &HermitianField) -> Result<f64> {
    let min_eig = g.min_eigenvalue();
    if min_eig.is_nan() || min_eig <= 0.0 {
        return Err(Error::NotPositive {
            min_eig,
            floor: 0.0,
        });
    }
    Ok(g.geometry().volume_factor() * integrate(&g.det()))
}

pub fn ricci(metric: &KahlerMetric) -> Result<HermitianField> {
    assemble(metric).ricci()
}

pub fn scalar_curvature(metric: &KahlerMetric) -> Result<ScalarField> {
    assemble(metric).scalar_curvature()
}

pub fn riemann_norm(metric: &KahlerMetric) -> Result<ScalarField> {
    assemble(metric).riemann_norm()
}

/// `tr_a b` pointwise.
pub fn trace_wrt(a: &HermitianField, b: &HermitianField) -> Result<ScalarField> {
    if a.geometry() != b.geometry() {
        return Err(Error::GeometryMismatch);
    }
    a.require_positive(0.0)?;
    Ok(ScalarField::from_vec_unchecked(
        a.geometry(),
        a.points()
            .iter()
            .zip(b.points())
            .map(|(x, y)| x.trace_of(y))
            .collect(),
    ))
}

pub fn trace_wrt_flat(a: &FlatMetric, b: &HermitianField) -> ScalarField {
    let inv = a.matrix().inverse();
    b.map_scalar(|m| inv.trace_product(m))
}

/// Result of projecting a class onto its constant-coefficient representative.
#[derive(Clone, Debug)]
pub struct HarmonicProjection {
    pub flat: FlatMetric,
    /// `α = g + ∂∂̄u`, normalized so that `max u = 0`.
    pub u: ScalarField,
    /// Largest entrywise residual of `∂∂̄u = H_flat − g`.
    pub residual: f64,
}

pub fn harmonic_projection(metric: &KahlerMetric) -> Result<HarmonicProjection> {
    harmonic_projection_of(&assemble(metric))
}

/// Averages the coefficients, then solves the trace Poisson equation and checks the
/// full Hessian identity.
pub fn harmonic_projection_of(g: &HermitianField) -> Result<HarmonicProjection> {
    g.require_positive(0.0)?;
    let h_flat = g.average();
    let flat = FlatMetric::new(h_flat)?;
    let rhs = g.map_scalar(|m| h_flat.trace() - m.trace());
    let u = solve_flat_poisson(&rhs);
    let target = g.scale(-1.0).add_constant(&h_flat);
    let residual = complex_hessian(&u)?.max_abs_diff(&target);
    let scale = g.max_abs().max(1.0);
    if residual > 1e-6 * scale {
        return Err(Error::NotClosed(residual));
    }
    let u = u.shift(-u.max());
    Ok(HarmonicProjection { flat, u, residual })
}

/// Zero-mean solution of `flat_laplacian(u) = rhs` (the mean of `rhs` is ignored).
pub fn solve_flat_poisson(rhs: &ScalarField) -> ScalarField {
    let geom = rhs.geometry();
    rhs.spectrum()
        .apply(|m| {
            let k2: i64 = m.iter().map(|v| v * v).sum();
            if k2 == 0 || geom.touches_nyquist(m) {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(-1.0 / (PI * PI * k2 as f64), 0.0)
            }
        })
        .to_real()
}

/// `(n−1, n−1)` test form `η = f·β` with constant `β`; for `n = 1`, `β = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TestForm {
    pub f: ScalarField,
    pub beta: HermMatrix,
}

impl TestForm {
    pub fn new(f: ScalarField, beta: HermMatrix) -> Result<Self> {
        if beta.n() != f.geometry().n() {
            return Err(Error::GeometryMismatch);
        }
        Ok(TestForm { f, beta })
    }

    pub fn scalar(f: ScalarField) -> Self {
        let n = f.geometry().n();
        TestForm {
            f,
            beta: HermMatrix::identity(n),
        }
    }

    /// `η ∧ ω = c_n · f · tr(adj(β) g) dLeb` with `c_n = 2ⁿ (n−1)!`.
    fn pairing_factor(n: usize) -> f64 {
        match n {
            1 => 2.0,
            _ => 4.0,
        }
    }

    /// Density `ρ` with `∫ η ∧ i∂∂̄φ = ∫ φ ρ dLeb`.
    pub fn ddbar_density(&self) -> ScalarField {
        let n = self.f.geometry().n();
        let adj = self.beta.adjugate();
        let hess = complex_hessian(&self.f).expect("test function is finite");
        hess.map_scalar(|m| Self::pairing_factor(n) * adj.trace_product(m))
    }
}

/// `∫ η ∧ ω` for any Hermitian coefficient field.
pub fn pair_test_form(g: &HermitianField, tf: &TestForm) -> f64 {
    let n = g.geometry().n();
    let adj = tf.beta.adjugate();
    let density = g.map_scalar(|m| adj.trace_product(m)).mul(&tf.f);
    TestForm::pairing_factor(n) * integrate(&density)
}

/// `v = det g / det H_ref`.
pub fn volume_density(g: &HermitianField, reference: &FlatMetric) -> Result<ScalarField> {
    let det_ref = reference.matrix().det();
    if det_ref <= 0.0 {
        return Err(Error::NotPositive {
            min_eig: reference.matrix().min_eigenvalue(),
            floor: 0.0,
        });
    }
    Ok(g.det().scale(1.0 / det_ref))
}

/// `‖u − max u‖_∞ / ‖flat_laplacian u‖_{L^p}`.
pub fn linfty_vs_lp_laplacian(u: &ScalarField, p: f64) -> Result<f64> {
    let n = u.geometry().n() as f64;
    if !(p > n) {
        return Err(Error::InvalidArgument(format!("exponent p = {p} must exceed n = {n}")));
    }
    let oscillation = u.max() - u.min();
    let lap = lp_norm_unweighted(&flat_laplacian(u), p)?;
    if oscillation <= 1e-14 * u.sup_norm().max(1e-300) || lap == 0.0 {
        return Err(Error::InvalidArgument("constant input: ratio undefined".into()));
    }
    Ok(oscillation / lap)
}
