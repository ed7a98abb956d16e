use kahlerlab::distance::{DistanceGraph, StencilConfig};
use kahlerlab::field::{complex_hessian, derivative, flat_laplacian, integrate, random_band_limited};
use kahlerlab::geometry::{pair_test_form, scalar_curvature};
use kahlerlab::io::{decode_metric, decode_scalar, encode_metric, encode_scalar};
use kahlerlab::{HermMatrix, KahlerMetric, ScalarField, TestForm, TorusGeometry};
use num_complex::Complex64;
use proptest::prelude::*;

fn grid(n: usize) -> TorusGeometry {
    match n {
        1 => TorusGeometry::new(1, 16).unwrap(),
        _ => TorusGeometry::new(2, 8).unwrap(),
    }
}

fn field(n: usize, seed: u64, max_mode: usize) -> ScalarField {
    random_band_limited(seed, max_mode, grid(n)).unwrap()
}

/// Positive Hermitian `L L* + εI` from unconstrained entries.
fn positive(n: usize, e: [f64; 5]) -> HermMatrix {
    match n {
        1 => HermMatrix::diagonal(&[e[0] * e[0] + 0.1]),
        _ => {
            let l = [[e[0], 0.0], [e[1], e[2]]];
            let c = Complex64::new(e[3], e[4]);
            let a = l[0][0] * l[0][0] + 0.1;
            let b = l[1][0] * l[1][0] + l[1][1] * l[1][1] + c.norm_sqr() + 0.1;
            HermMatrix::two(a, b, c * l[0][0])
        }
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hessian_is_hermitian(n in 1usize..=2, seed in any::<u64>(), max_mode in 1usize..=2) {
        let f = field(n, seed, max_mode);
        let spec = f.spectrum();
        for j in 0..n {
            let diag = derivative(&spec, &[j], &[j]);
            prop_assert!(diag.im().sup_norm() <= 1e-10 * (1.0 + diag.re().sup_norm()));
            for k in 0..n {
                let a = derivative(&spec, &[j], &[k]);
                let b = derivative(&spec, &[k], &[j]).conj();
                for (x, y) in a.values().iter().zip(b.values()) {
                    prop_assert!((x - y).norm() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn laplacian_integrates_to_zero(n in 1usize..=2, seed in any::<u64>(), max_mode in 1usize..=2) {
        let f = field(n, seed, max_mode);
        let lap = flat_laplacian(&f);
        prop_assert!(integrate(&lap).abs() <= 1e-12 * (1.0 + lap.sup_norm()));
    }

    #[test]
    fn hessian_trace_is_laplacian(n in 1usize..=2, seed in any::<u64>(), max_mode in 1usize..=2) {
        let f = field(n, seed, max_mode);
        let tr = complex_hessian(&f).unwrap().trace();
        let lap = flat_laplacian(&f);
        prop_assert!(tr.sub(&lap).sup_norm() <= 1e-10 * (1.0 + lap.sup_norm()));
    }

    #[test]
    fn hessian_is_linear(
        n in 1usize..=2,
        s1 in any::<u64>(),
        s2 in any::<u64>(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let f = field(n, s1, 2);
        let g = field(n, s2, 2);
        let lhs = complex_hessian(&f.scale(a).add(&g.scale(b))).unwrap();
        let rhs = complex_hessian(&f).unwrap().scale(a).add(&complex_hessian(&g).unwrap().scale(b));
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-10 * (1.0 + lhs.max_abs()));
    }

    #[test]
    fn am_gm_trace_inequality(
        n in 1usize..=2,
        ea in prop::array::uniform5(-2.0f64..2.0),
        eb in prop::array::uniform5(-2.0f64..2.0),
    ) {
        let a = positive(n, ea);
        let b = positive(n, eb);
        let nf = n as f64;
        let lhs = nf * (b.det() / a.det()).powf(1.0 / nf);
        prop_assert!(lhs <= a.trace_of(&b) * (1.0 + 1e-12));
    }

    #[test]
    fn potential_pairing_moves_by_ddbar_density(
        n in 1usize..=2,
        s_psi in any::<u64>(),
        s_phi in any::<u64>(),
        s_f in any::<u64>(),
    ) {
        let geom = grid(n);
        let psi = field(n, s_psi, 1).scale(0.002);
        let phi = field(n, s_phi, 1).scale(0.002);
        let base = KahlerMetric::new(HermMatrix::identity(n), psi.clone()).unwrap();
        let moved = KahlerMetric::new(HermMatrix::identity(n), psi.add(&phi)).unwrap();
        let beta = if n == 1 { HermMatrix::identity(1) } else { HermMatrix::two(1.0, 2.0, Complex64::new(0.3, -0.2)) };
        let form = TestForm::new(random_band_limited(s_f, 2, geom).unwrap(), beta).unwrap();
        let delta = pair_test_form(&moved.assemble(), &form) - pair_test_form(&base.assemble(), &form);
        let predicted = integrate(&phi.mul(&form.ddbar_density()));
        prop_assert!(close(delta, predicted, 1e-10));
    }

    #[test]
    fn total_curvature_vanishes_in_one_dimension(seed in any::<u64>()) {
        let metric = KahlerMetric::new(HermMatrix::identity(1), field(1, seed, 3).scale(0.002)).unwrap();
        let r = scalar_curvature(&metric).unwrap();
        let weighted = r.mul(&metric.assemble().det());
        prop_assert!(integrate(&weighted).abs() <= 1e-12 * (1.0 + weighted.sup_norm()));
    }

    #[test]
    fn band_limited_fields_survive_resampling(n in 1usize..=2, seed in any::<u64>()) {
        let f = field(n, seed, 2);
        let back = f.resample(2 * f.geometry().size()).unwrap().resample(f.geometry().size()).unwrap();
        prop_assert!(back.sub(&f).sup_norm() <= 1e-12 * (1.0 + f.sup_norm()));
    }

    #[test]
    fn binary_encoding_is_exact(n in 1usize..=2, seed in any::<u64>(), a in 1e-6f64..1.0) {
        let f = field(n, seed, 2).scale(a);
        prop_assert_eq!(&decode_scalar(&encode_scalar(&f)).unwrap(), &f);
        let metric = KahlerMetric::new(HermMatrix::identity(n), f.scale(0.001)).unwrap();
        prop_assert_eq!(decode_metric(&encode_metric(&metric)).unwrap(), metric);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn graph_distance_is_a_metric(seed in any::<u64>(), x in 0usize..256, y in 0usize..256, z in 0usize..256) {
        let geom = grid(1);
        let metric = KahlerMetric::new(HermMatrix::identity(1), field(1, seed, 2).scale(0.001)).unwrap();
        let graph = DistanceGraph::build(&metric, StencilConfig { radius: 2 }).unwrap();
        let dxy = graph.distance(x, y);
        prop_assert!(close(dxy, graph.distance(y, x), 1e-12));
        prop_assert!(dxy <= graph.distance(x, z) + graph.distance(z, y) + 1e-12);
        prop_assert_eq!(graph.distance(x, x), 0.0);
        prop_assert_eq!(geom.len(), 256);
    }
}
