//! Periodic grid fields on the real torus `[0,1)^{2n}` and their spectral calculus.
//!
//! Axes are ordered `(x¹, y¹, …, xⁿ, yⁿ)` with complex coordinates
//! `zʲ = xʲ + i yʲ`. Values are stored row-major with the last axis fastest.
//! Fourier coefficients use the FFT ordering on each axis: index `i` carries
//! the integer mode `i` for `i < N/2` and `i − N` otherwise. The forward
//! transform is unnormalized and the inverse divides by `N^{2n}`.
//!
//! Derivative symbols: `∂ⱼ = ½(∂ₓ − i∂ᵧ)` acts on `e^{2πi k·x}` as
//! `πi·conj(wⱼ)` and `∂̄ₖ` as `πi·wₖ`, where `wⱼ = k_{xʲ} + i k_{yʲ}`.
//! Modes that touch the Nyquist index on any axis are dropped by every
//! derivative operator so that odd symbols stay real-consistent.

use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::HermitianField;

pub const MAX_AXES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGeometry {
    n: usize,
    size: usize,
}

impl TorusGeometry {
    /// `n` complex dimensions (1 or 2), `size` grid points per real axis
    /// (a power of two, at least 4).
    pub fn new(n: usize, size: usize) -> Result<Self> {
        if n != 1 && n != 2 {
            return Err(Error::Geometry(format!(
                "complex dimension n = {n} unsupported (expected 1 or 2)"
            )));
        }
        if size < 4 || !size.is_power_of_two() {
            return Err(Error::Geometry(format!(
                "grid size N = {size} must be a power of two and at least 4"
            )));
        }
        Ok(TorusGeometry { n, size })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    /// Number of real axes, `2n`.
    #[inline]
    pub fn dim(&self) -> usize {
        2 * self.n
    }

    /// Total number of grid points, `N^{2n}`.
    #[inline]
    pub fn len(&self) -> usize {
        self.size.pow(self.dim() as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / self.size as f64
    }

    /// Largest mode kept by the 2/3 rule.
    pub fn dealias_cutoff(&self) -> usize {
        self.size / 3
    }

    /// `2ⁿ n!`: factor between `ωⁿ` and `det g dLeb`.
    pub fn volume_factor(&self) -> f64 {
        match self.n {
            1 => 2.0,
            _ => 8.0,
        }
    }

    pub fn multi_index(&self, mut idx: usize) -> [usize; MAX_AXES] {
        let mut out = [0; MAX_AXES];
        for a in (0..self.dim()).rev() {
            out[a] = idx % self.size;
            idx /= self.size;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi[..self.dim()]
            .iter()
            .fold(0, |acc, &i| acc * self.size + (i % self.size))
    }

    /// Coordinates of grid point `idx` in `[0,1)^{2n}`.
    pub fn point(&self, idx: usize) -> [f64; MAX_AXES] {
        let m = self.multi_index(idx);
        let mut out = [0.0; MAX_AXES];
        for a in 0..self.dim() {
            out[a] = m[a] as f64 * self.spacing();
        }
        out
    }

    #[inline]
    pub fn mode_of(&self, i: usize) -> i64 {
        if i < self.size / 2 {
            i as i64
        } else {
            i as i64 - self.size as i64
        }
    }

    pub fn modes(&self, idx: usize) -> [i64; MAX_AXES] {
        let m = self.multi_index(idx);
        let mut out = [0; MAX_AXES];
        for a in 0..self.dim() {
            out[a] = self.mode_of(m[a]);
        }
        out
    }

    /// Visits every grid index with its integer mode vector, in storage order.
    pub fn for_each_mode(&self, mut f: impl FnMut(usize, &[i64])) {
        let dim = self.dim();
        let mut multi = [0usize; MAX_AXES];
        let mut modes = [0i64; MAX_AXES];
        for idx in 0..self.len() {
            for a in 0..dim {
                modes[a] = self.mode_of(multi[a]);
            }
            f(idx, &modes[..dim]);
            for a in (0..dim).rev() {
                multi[a] += 1;
                if multi[a] < self.size {
                    break;
                }
                multi[a] = 0;
            }
        }
    }

    pub fn touches_nyquist(&self, modes: &[i64]) -> bool {
        let nyq = -(self.size as i64) / 2;
        modes.iter().any(|&m| m == nyq)
    }

    pub fn is_dealiased_mode(&self, modes: &[i64]) -> bool {
        let cut = self.dealias_cutoff() as i64;
        modes.iter().all(|&m| m.abs() <= cut)
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place multi-dimensional FFT over all `2n` axes. The inverse includes the `1/N^{2n}` factor.
pub(crate) fn fft_nd(geom: &TorusGeometry, data: &mut [Complex64], inverse: bool) {
    let size = geom.size();
    let dim = geom.dim();
    let len = geom.len();
    debug_assert_eq!(data.len(), len);
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(size)
        } else {
            p.plan_fft_forward(size)
        }
    });
    let mut lines = vec![Complex64::new(0.0, 0.0); len];
    for axis in 0..dim {
        let stride = size.pow((dim - 1 - axis) as u32);
        let outer = len / (size * stride);
        if stride == 1 {
            fft.process(data);
            continue;
        }
        let mut pos = 0;
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * size * stride + inner;
                for k in 0..size {
                    lines[pos + k] = data[base + k * stride];
                }
                pos += size;
            }
        }
        fft.process(&mut lines);
        pos = 0;
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * size * stride + inner;
                for k in 0..size {
                    data[base + k * stride] = lines[pos + k];
                }
                pos += size;
            }
        }
    }
    if inverse {
        let scale = 1.0 / len as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Real field sampled on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    geom: TorusGeometry,
    values: Vec<f64>,
}

/// Complex field sampled on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    geom: TorusGeometry,
    values: Vec<Complex64>,
}

/// Fourier coefficients in FFT ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralCoeffs {
    geom: TorusGeometry,
    coeffs: Vec<Complex64>,
}

impl ScalarField {
    pub fn new(geom: TorusGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geom.len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, geometry needs {}",
                values.len(),
                geom.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scalar field"));
        }
        Ok(ScalarField { geom, values })
    }

    pub(crate) fn from_vec_unchecked(geom: TorusGeometry, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), geom.len());
        ScalarField { geom, values }
    }

    pub fn zeros(geom: TorusGeometry) -> Self {
        Self::constant(geom, 0.0)
    }

    pub fn constant(geom: TorusGeometry, c: f64) -> Self {
        ScalarField {
            geom,
            values: vec![c; geom.len()],
        }
    }

    /// Samples `f` at every grid point (coordinates in axis order).
    pub fn from_fn(geom: TorusGeometry, f: impl Fn(&[f64]) -> f64) -> Self {
        let dim = geom.dim();
        let values = (0..geom.len())
            .map(|idx| f(&geom.point(idx)[..dim]))
            .collect();
        ScalarField { geom, values }
    }

    #[inline]
    pub fn geometry(&self) -> TorusGeometry {
        self.geom
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            geom: self.geom,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.geom, other.geom, "geometry mismatch");
        ScalarField {
            geom: self.geom,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &ScalarField) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ScalarField) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    pub fn shift(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Rectangle-rule integral over the unit-volume torus (the grid mean).
    pub fn integrate(&self) -> f64 {
        integrate(self)
    }

    pub fn spectrum(&self) -> SpectralCoeffs {
        let mut data: Vec<Complex64> = self
            .values
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        fft_nd(&self.geom, &mut data, false);
        SpectralCoeffs {
            geom: self.geom,
            coeffs: data,
        }
    }

    /// 2/3-rule truncation.
    pub fn dealiased(&self) -> Self {
        let mut spec = self.spectrum();
        spec.dealias();
        spec.to_real()
    }

    /// Band-limited interpolation onto a grid with `new_size` points per axis.
    pub fn resample(&self, new_size: usize) -> Result<Self> {
        let target = TorusGeometry::new(self.geom.n(), new_size)?;
        Ok(self.spectrum().resample(target).to_real())
    }
}

impl ComplexField {
    pub fn new(geom: TorusGeometry, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != geom.len() {
            return Err(Error::InvalidArgument("complex field length mismatch".into()));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("complex field"));
        }
        Ok(ComplexField { geom, values })
    }

    pub(crate) fn from_vec_unchecked(geom: TorusGeometry, values: Vec<Complex64>) -> Self {
        ComplexField { geom, values }
    }

    pub fn zeros(geom: TorusGeometry) -> Self {
        ComplexField {
            geom,
            values: vec![Complex64::new(0.0, 0.0); geom.len()],
        }
    }

    pub fn constant(geom: TorusGeometry, c: Complex64) -> Self {
        ComplexField {
            geom,
            values: vec![c; geom.len()],
        }
    }

    #[inline]
    pub fn geometry(&self) -> TorusGeometry {
        self.geom
    }

    #[inline]
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn re(&self) -> ScalarField {
        ScalarField::from_vec_unchecked(self.geom, self.values.iter().map(|v| v.re).collect())
    }

    pub fn im(&self) -> ScalarField {
        ScalarField::from_vec_unchecked(self.geom, self.values.iter().map(|v| v.im).collect())
    }

    pub fn conj(&self) -> Self {
        ComplexField {
            geom: self.geom,
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }

    pub fn spectrum(&self) -> SpectralCoeffs {
        let mut data = self.values.clone();
        fft_nd(&self.geom, &mut data, false);
        SpectralCoeffs {
            geom: self.geom,
            coeffs: data,
        }
    }
}

impl SpectralCoeffs {
    pub fn new(geom: TorusGeometry, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != geom.len() {
            return Err(Error::InvalidArgument("coefficient count mismatch".into()));
        }
        Ok(SpectralCoeffs { geom, coeffs })
    }

    #[inline]
    pub fn geometry(&self) -> TorusGeometry {
        self.geom
    }

    #[inline]
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Inverse transform; the result is complex in general.
    pub fn to_complex(&self) -> ComplexField {
        let mut data = self.coeffs.clone();
        fft_nd(&self.geom, &mut data, true);
        ComplexField::from_vec_unchecked(self.geom, data)
    }

    /// Inverse transform keeping the real part.
    pub fn to_real(&self) -> ScalarField {
        self.to_complex().re()
    }

    pub fn dealias(&mut self) {
        let geom = self.geom;
        let coeffs = &mut self.coeffs;
        geom.for_each_mode(|idx, modes| {
            if !geom.is_dealiased_mode(modes) {
                coeffs[idx] = Complex64::new(0.0, 0.0);
            }
        });
    }

    /// Multiplies every coefficient by `symbol(modes)`.
    pub fn apply(&self, symbol: impl Fn(&[i64]) -> Complex64) -> SpectralCoeffs {
        let mut out = vec![Complex64::new(0.0, 0.0); self.coeffs.len()];
        self.geom.for_each_mode(|idx, modes| {
            out[idx] = self.coeffs[idx] * symbol(modes);
        });
        SpectralCoeffs {
            geom: self.geom,
            coeffs: out,
        }
    }

    /// Zero-pads or truncates to another grid size; Nyquist modes are dropped.
    pub fn resample(&self, target: TorusGeometry) -> SpectralCoeffs {
        assert_eq!(target.n(), self.geom.n());
        let scale = target.len() as f64 / self.geom.len() as f64;
        let mut out = vec![Complex64::new(0.0, 0.0); target.len()];
        let half = (self.geom.size().min(target.size()) / 2) as i64;
        let dim = self.geom.dim();
        self.geom.for_each_mode(|idx, modes| {
            if modes.iter().any(|&m| m.abs() >= half) {
                return;
            }
            let mut multi = [0usize; MAX_AXES];
            for a in 0..dim {
                multi[a] = modes[a].rem_euclid(target.size() as i64) as usize;
            }
            out[target.flat_index(&multi)] = self.coeffs[idx] * scale;
        });
        SpectralCoeffs {
            geom: target,
            coeffs: out,
        }
    }
}

/// `πi·conj(wⱼ)` for `∂ⱼ`.
#[inline]
pub fn holo_symbol(modes: &[i64], j: usize) -> Complex64 {
    Complex64::new(0.0, PI) * Complex64::new(modes[2 * j] as f64, -(modes[2 * j + 1] as f64))
}

/// `πi·wₖ` for `∂̄ₖ`.
#[inline]
pub fn anti_symbol(modes: &[i64], k: usize) -> Complex64 {
    Complex64::new(0.0, PI) * Complex64::new(modes[2 * k] as f64, modes[2 * k + 1] as f64)
}

/// Symbol of `∂_{j₁}⋯∂_{jₐ} ∂̄_{k₁}⋯∂̄_{k_b}`, zero on Nyquist-touching modes.
pub fn derivative_symbol(
    geom: &TorusGeometry,
    modes: &[i64],
    holo: &[usize],
    anti: &[usize],
) -> Complex64 {
    if geom.touches_nyquist(modes) {
        return Complex64::new(0.0, 0.0);
    }
    let mut s = Complex64::new(1.0, 0.0);
    for &j in holo {
        s *= holo_symbol(modes, j);
    }
    for &k in anti {
        s *= anti_symbol(modes, k);
    }
    s
}

/// Mixed complex derivative of a field given by its spectrum.
pub fn derivative(spec: &SpectralCoeffs, holo: &[usize], anti: &[usize]) -> ComplexField {
    let geom = spec.geometry();
    spec.apply(|m| derivative_symbol(&geom, m, holo, anti))
        .to_complex()
}

/// `∂ⱼ∂̄ₖ φ` assembled into an `n×n` Hermitian field.
pub fn complex_hessian(phi: &ScalarField) -> Result<HermitianField> {
    if !phi.is_finite() {
        return Err(Error::NonFinite("complex_hessian input"));
    }
    Ok(complex_hessian_of_spectrum(&phi.spectrum()))
}

pub(crate) fn complex_hessian_of_spectrum(spec: &SpectralCoeffs) -> HermitianField {
    let geom = spec.geometry();
    let n = geom.n();
    let diag: Vec<ScalarField> = (0..n).map(|j| derivative(spec, &[j], &[j]).re()).collect();
    let upper: Vec<ComplexField> = if n == 2 {
        vec![derivative(spec, &[0], &[1])]
    } else {
        Vec::new()
    };
    HermitianField::from_parts(geom, diag, upper)
}

/// `tr_I ∂∂̄ f`, i.e. a quarter of the Euclidean Laplacian. Fourier symbol `−π²|k|²`.
pub fn flat_laplacian(f: &ScalarField) -> ScalarField {
    let geom = f.geometry();
    f.spectrum()
        .apply(|m| {
            if geom.touches_nyquist(m) {
                Complex64::new(0.0, 0.0)
            } else {
                let k2: i64 = m.iter().map(|v| v * v).sum();
                Complex64::new(-PI * PI * k2 as f64, 0.0)
            }
        })
        .to_real()
}

/// Grid mean; the torus has unit Lebesgue volume.
pub fn integrate(f: &ScalarField) -> f64 {
    // pairwise summation keeps the zero-mean identities at the 1e-16 level
    pairwise_sum(f.values()) / f.values().len() as f64
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 64 {
        v.iter().sum()
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

/// `(∫|f|ᵖ·weight)^{1/p}`; `p = ∞` gives `max |f|` over the support of the weight.
pub fn lp_norm(f: &ScalarField, p: f64, weight: &ScalarField) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidArgument(format!("L^p exponent p = {p} < 1")));
    }
    if f.geometry() != weight.geometry() {
        return Err(Error::GeometryMismatch);
    }
    if weight.values().iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidArgument("negative L^p weight".into()));
    }
    if p.is_infinite() {
        return Ok(f
            .values()
            .iter()
            .zip(weight.values())
            .filter(|(_, &w)| w > 0.0)
            .fold(0.0, |m, (v, _)| m.max(v.abs())));
    }
    let integrand = f.zip_map(weight, |v, w| v.abs().powf(p) * w);
    Ok(integrate(&integrand).powf(1.0 / p))
}

pub fn lp_norm_unweighted(f: &ScalarField, p: f64) -> Result<f64> {
    lp_norm(f, p, &ScalarField::constant(f.geometry(), 1.0))
}

/// Random real field with Fourier support in `|k|_∞ ≤ max_mode`, zero mean and unit L² norm.
///
/// Coefficients are drawn in a fixed mode order independent of `N`, so one seed
/// describes the same trigonometric polynomial at every resolution.
pub fn random_band_limited(seed: u64, max_mode: usize, geom: TorusGeometry) -> Result<ScalarField> {
    if max_mode == 0 {
        return Err(Error::InvalidArgument("max_mode must be at least 1".into()));
    }
    if max_mode > geom.dealias_cutoff() {
        return Err(Error::InvalidArgument(format!(
            "max_mode = {max_mode} exceeds N/3 = {} (dealiasing headroom)",
            geom.dealias_cutoff()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = geom.dim();
    let m = max_mode as i64;
    let width = (2 * m + 1) as usize;
    let mut coeffs = vec![Complex64::new(0.0, 0.0); geom.len()];
    for flat in 0..width.pow(dim as u32) {
        let mut rem = flat;
        let mut multi = [0usize; MAX_AXES];
        let mut zero = true;
        for a in (0..dim).rev() {
            let k = (rem % width) as i64 - m;
            rem /= width;
            if k != 0 {
                zero = false;
            }
            multi[a] = k.rem_euclid(geom.size() as i64) as usize;
        }
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        if !zero {
            coeffs[geom.flat_index(&multi)] = Complex64::new(re, im);
        }
    }
    let field = SpectralCoeffs { geom, coeffs }.to_real();
    let field = field.shift(-integrate(&field));
    let norm = lp_norm_unweighted(&field, 2.0)?;
    if norm == 0.0 {
        return Err(Error::ZeroShape);
    }
    Ok(field.scale(1.0 / norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn g1(n: usize) -> TorusGeometry {
        TorusGeometry::new(1, n).unwrap()
    }

    #[test]
    fn geometry_validation() {
        assert!(TorusGeometry::new(1, 63).is_err());
        assert!(TorusGeometry::new(1, 2).is_err());
        assert!(TorusGeometry::new(3, 8).is_err());
        let g = TorusGeometry::new(2, 8).unwrap();
        assert_eq!(g.len(), 4096);
        let idx = g.flat_index(&[1, 2, 3, 4]);
        assert_eq!(g.multi_index(idx)[..4], [1, 2, 3, 4]);
    }

    #[test]
    fn round_trip_is_identity() {
        let geom = TorusGeometry::new(2, 8).unwrap();
        let f = ScalarField::from_fn(geom, |p| (p[0] * 3.0).sin() + p[3] * p[1] - 0.3);
        let back = f.spectrum().to_real();
        let scale = f.sup_norm();
        for (a, b) in f.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn hessian_of_cosine() {
        let geom = g1(32);
        let f = ScalarField::from_fn(geom, |p| (2.0 * PI * p[0]).cos());
        let h = complex_hessian(&f).unwrap();
        for idx in 0..geom.len() {
            let x = geom.point(idx)[0];
            let expected = -PI * PI * (2.0 * PI * x).cos();
            assert!((h.at(idx).get(0, 0).re - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn constants_are_annihilated() {
        let geom = TorusGeometry::new(2, 8).unwrap();
        let f = ScalarField::constant(geom, 4.2);
        let h = complex_hessian(&f).unwrap();
        for idx in 0..geom.len() {
            let m = h.at(idx);
            for j in 0..2 {
                for k in 0..2 {
                    assert!(m.get(j, k).norm() < 1e-12);
                }
            }
        }
        assert!(flat_laplacian(&f).sup_norm() < 1e-12);
    }

    #[test]
    fn laplacian_symbol_on_single_mode() {
        let geom = TorusGeometry::new(2, 8).unwrap();
        let k = [1.0, -2.0, 0.0, 3.0];
        let f = ScalarField::from_fn(geom, |p| {
            (2.0 * PI * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + k[3] * p[3])).cos()
        });
        let lap = flat_laplacian(&f);
        let mult = -PI * PI * 14.0;
        for (a, b) in lap.values().iter().zip(f.values()) {
            assert!((a - mult * b).abs() < 1e-9);
        }
    }

    #[test]
    fn quadrature_examples() {
        let geom = g1(16);
        assert_relative_eq!(integrate(&ScalarField::constant(geom, 3.0)), 3.0);
        let c = ScalarField::from_fn(geom, |p| (2.0 * PI * p[0]).cos());
        assert!(integrate(&c).abs() < 1e-15);
        assert_relative_eq!(integrate(&c.mul(&c)), 0.5, epsilon = 1e-14);
        assert_relative_eq!(
            lp_norm_unweighted(&c, 2.0).unwrap(),
            0.5f64.sqrt(),
            epsilon = 1e-14
        );
        let three = ScalarField::constant(geom, 3.0);
        for p in [1.0, 2.5, 7.0, f64::INFINITY] {
            assert_relative_eq!(lp_norm_unweighted(&three, p).unwrap(), 3.0, epsilon = 1e-13);
        }
        assert_eq!(lp_norm_unweighted(&ScalarField::zeros(geom), 2.0).unwrap(), 0.0);
        assert!(lp_norm_unweighted(&c, 0.5).is_err());
    }

    #[test]
    fn random_fields_are_normalized_and_deterministic() {
        let geom = TorusGeometry::new(1, 32).unwrap();
        let a = random_band_limited(11, 4, geom).unwrap();
        let b = random_band_limited(11, 4, geom).unwrap();
        assert_eq!(a, b);
        assert!(integrate(&a).abs() < 1e-14);
        assert_relative_eq!(lp_norm_unweighted(&a, 2.0).unwrap(), 1.0, epsilon = 1e-10);
        assert!(random_band_limited(11, 11, geom).is_err());
        // support check
        let spec = a.spectrum();
        geom.for_each_mode(|idx, m| {
            if m.iter().any(|v| v.abs() > 4) {
                assert!(spec.coeffs()[idx].norm() < 1e-9);
            }
        });
    }

    #[test]
    fn random_field_is_resolution_independent() {
        let coarse = random_band_limited(5, 3, TorusGeometry::new(1, 16).unwrap()).unwrap();
        let fine = random_band_limited(5, 3, TorusGeometry::new(1, 32).unwrap()).unwrap();
        let up = coarse.resample(32).unwrap();
        for (a, b) in up.values().iter().zip(fine.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
