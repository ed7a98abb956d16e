//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero if
//! any criterion fails.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use kahlerlab::distance::{flat_distance_exact, random_queries, DistanceGraph, StencilConfig};
use kahlerlab::field::{complex_hessian, derivative, flat_laplacian, integrate};
use kahlerlab::flow::run_flow;
use kahlerlab::geometry::{harmonic_projection, ricci, volume};
use kahlerlab::harness::{fit_rate, ScalarFloorFragment, ScenarioMeasurements};
use kahlerlab::{FlatMetric, FlowConfig, HermMatrix, KahlerMetric, ScalarField, TorusGeometry};
use kahlerlab_cli::run::{load_measurements, run_experiment, RunManifest};
use kahlerlab_cli::{parse_config_str, ExperimentConfig};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FAMILY_CONFIG: &str = r#"
seed = 42

[geometry]
n = 1
size = 64

[scenario]
indices = [1, 4, 16, 64]
p = "inf"
"#;

const SMOKE_CONFIG: &str = r#"
seed = 42

[geometry]
n = 2
size = 16

[scenario]
indices = [1, 16]
"#;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

struct Family {
    manifest: RunManifest,
    members: Vec<ScenarioMeasurements>,
    elapsed: Duration,
}

impl Family {
    fn member(&self, i: u32) -> &ScenarioMeasurements {
        self.members.iter().find(|m| m.i == i).expect("member")
    }
}

fn run_family(name: &str, config: &str, jobs: usize) -> Family {
    let cfg: ExperimentConfig = parse_config_str(config).expect("config");
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&out);
    let start = Instant::now();
    let manifest = run_experiment(&cfg, &out, jobs).expect("pipeline");
    let elapsed = start.elapsed();
    let members = load_measurements(&manifest, &out).expect("measurements");
    assert_eq!(
        members.len(),
        cfg.scenario.indices.len(),
        "scenario errors: {:?}",
        manifest.scenarios.iter().map(|s| &s.status).collect::<Vec<_>>()
    );
    Family {
        manifest,
        members,
        elapsed,
    }
}

fn relative_error(num: &[Complex64], sym: &[Complex64]) -> f64 {
    let scale = sym.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let err = num.iter().zip(sym).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    err / scale
}

/// Random cosine modes with `|k|∞ ≤ N/3`, together with their symbolic derivatives.
fn spectral_calculus_error(n: usize, size: usize, seed: u64) -> f64 {
    let geom = TorusGeometry::new(n, size).unwrap();
    let dim = 2 * n;
    let cutoff = (size / 3) as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<(Vec<i64>, f64, f64)> = (0..6)
        .map(|_| {
            let k: Vec<i64> = (0..dim).map(|_| rng.gen_range(-cutoff..=cutoff)).collect();
            (k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let phase = |k: &[i64], th: f64, x: &[f64]| th + 2.0 * PI * k.iter().zip(x).map(|(a, b)| *a as f64 * b).sum::<f64>();
    let f = ScalarField::from_fn(geom, |x| terms.iter().map(|(k, c, th)| c * phase(k, *th, x).cos()).sum());
    // ∂ⱼ cos θ = −π(k_{xⱼ} − i k_{yⱼ}) sin θ, ∂ⱼ∂̄ₗ cos θ = −π²(k_{xⱼ} − i k_{yⱼ})(k_{xₗ} + i k_{yₗ}) cos θ
    let w = |k: &[i64], j: usize| Complex64::new(k[2 * j] as f64, k[2 * j + 1] as f64);
    let sample = |g: &dyn Fn(&[f64]) -> Complex64| -> Vec<Complex64> {
        (0..geom.len()).map(|idx| g(&geom.point(idx)[..dim])).collect()
    };
    let spec = f.spectrum();
    let hess = complex_hessian(&f).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        let sym = sample(&|x| {
            terms
                .iter()
                .map(|(k, c, th)| -PI * c * w(k, j).conj() * phase(k, *th, x).sin())
                .sum()
        });
        worst = worst.max(relative_error(derivative(&spec, &[j], &[]).values(), &sym));
        for l in 0..n {
            let sym = sample(&|x| {
                terms
                    .iter()
                    .map(|(k, c, th)| -PI * PI * c * w(k, j).conj() * w(k, l) * phase(k, *th, x).cos())
                    .sum()
            });
            let num: Vec<Complex64> = (0..geom.len()).map(|idx| hess.at(idx).get(j, l)).collect();
            worst = worst.max(relative_error(&num, &sym));
        }
    }
    let sym = sample(&|x| {
        terms
            .iter()
            .map(|(k, c, th)| {
                let k2: i64 = k.iter().map(|v| v * v).sum();
                Complex64::new(-PI * PI * k2 as f64 * c * phase(k, *th, x).cos(), 0.0)
            })
            .sum()
    });
    let lap: Vec<Complex64> = flat_laplacian(&f).values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    worst.max(relative_error(&lap, &sym))
}

fn spectral_calculus() -> Verdict {
    let start = Instant::now();
    let e1 = spectral_calculus_error(1, 64, 1);
    let e2 = spectral_calculus_error(2, 16, 2);
    let elapsed = start.elapsed();
    Verdict::new(
        e1 <= 1e-10 && e2 <= 1e-10 && elapsed < Duration::from_secs(1),
        format!("relative error n=1 {e1:.2e}, n=2 {e2:.2e}; {:.3} s", elapsed.as_secs_f64()),
    )
}

fn flat_stationarity() -> Verdict {
    let geom = TorusGeometry::new(1, 64).unwrap();
    let start = Instant::now();
    let trace = run_flow(&KahlerMetric::flat(geom, HermMatrix::identity(1)).unwrap(), &FlowConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let sup_phi = trace.snapshots.iter().map(|s| s.phi.sup_norm()).fold(0.0, f64::max);
    let sup_r = trace.diagnostics.iter().map(|d| d.min_r.abs()).fold(0.0, f64::max);
    let reached = trace.final_snapshot().is_some_and(|s| s.t == 1.0);
    Verdict::new(
        reached && sup_phi <= 1e-10 && sup_r <= 1e-10 && elapsed < Duration::from_secs(5),
        format!(
            "sup|φ| {sup_phi:.2e}, sup|min R| {sup_r:.2e}; {:.3} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn harmonic_projection_recovery() -> Verdict {
    let geom = TorusGeometry::new(1, 64).unwrap();
    let bump = |x: &[f64]| (2.0 * PI * x[0]).cos();
    let metric = KahlerMetric::new(HermMatrix::identity(1), ScalarField::from_fn(geom, |x| 0.05 * bump(x))).unwrap();
    let proj = harmonic_projection(&metric).unwrap();
    let h_err = (proj.flat.matrix().get(0, 0).re - 1.0).abs();
    let expected = ScalarField::from_fn(geom, |x| -0.05 * bump(x) - 0.05);
    let u_err = proj.u.sub(&expected).sup_norm();
    let flat = KahlerMetric::flat(geom, proj.flat.matrix().clone()).unwrap();
    let ric = ricci(&flat).unwrap().max_abs();
    let vol_err = (volume(&metric).unwrap() - proj.flat.volume()).abs() / proj.flat.volume();
    Verdict::new(
        h_err <= 1e-10 && u_err <= 1e-8 && ric <= 1e-8 && vol_err <= 1e-10,
        format!("|H − 1| {h_err:.2e}, sup|u − u*| {u_err:.2e}, |Ric| {ric:.2e}, volume {vol_err:.2e}"),
    )
}

fn linear_regime() -> Verdict {
    let geom = TorusGeometry::new(1, 64).unwrap();
    let mode = ScalarField::from_fn(geom, |x| (2.0 * PI * x[0]).cos());
    let a = 1e-4;
    let metric = KahlerMetric::new(HermMatrix::identity(1), mode.scale(a)).unwrap();
    let trace = run_flow(&metric, &FlowConfig::until(0.1)).unwrap();
    let snap = trace.require_snapshot(0.1).unwrap();
    let total = metric.potential().add(&snap.phi);
    let amplitude = |f: &ScalarField| 2.0 * integrate(&f.mul(&mode));
    let ratio = amplitude(&total) / amplitude(metric.potential());
    let oracle = (-PI * PI * 0.1).exp();
    let rel = (ratio / oracle - 1.0).abs();
    Verdict::new(rel <= 1e-3, format!("ratio {ratio:.8}, oracle {oracle:.8}, relative error {rel:.2e}"))
}

/// Minimum principles and volume conservation on one member.
fn max_principle_ok(m: &ScalarFloorFragment, dot_phi_drawdown: f64, volume_deviation: f64) -> (bool, String) {
    let r_tol = 1e-3 * (1.0 + m.initial_min_r.abs());
    let pass = m.drawdown <= r_tol && dot_phi_drawdown <= 1e-4 && volume_deviation <= 1e-7;
    (
        pass,
        format!(
            "min R drift {:.2e} (≤ {r_tol:.2e}), min φ̇ drift {dot_phi_drawdown:.2e}, volume {volume_deviation:.2e}",
            m.drawdown
        ),
    )
}

fn max_principle_suite(family: &Family) -> Verdict {
    let m = family.member(1);
    let (pass, detail) = max_principle_ok(
        &m.scalar_floor,
        m.flow_bounds.dot_phi_drawdown,
        m.flow_bounds.volume_deviation,
    );
    let ms = family.manifest.timings.scenarios_ms.get(&1).copied().unwrap_or(u128::MAX);
    Verdict::new(
        pass && ms < 60_000,
        format!("i=1: {detail}; scenario {:.2} s", ms as f64 / 1000.0),
    )
}

fn scalar_floor_ok(family: &Family) -> (bool, Vec<String>) {
    let mut pass = true;
    let mut parts = Vec::new();
    for m in &family.members {
        let bound = -1.0 / m.i as f64 - ScalarFloorFragment::floor_tolerance(m.i);
        pass &= m.scalar_floor.min_r >= bound;
        parts.push(format!("i={} min R {:.4e} ≥ {bound:.4e}", m.i, m.scalar_floor.min_r));
    }
    (pass, parts)
}

fn scalar_floor(family: &Family) -> Verdict {
    let (pass, parts) = scalar_floor_ok(family);
    Verdict::new(pass, parts.join(", "))
}

fn slope(family: &Family, y: impl Fn(&ScenarioMeasurements) -> f64) -> f64 {
    let points: Vec<(f64, f64)> = family.members.iter().map(|m| (m.i as f64, y(m))).collect();
    fit_rate(&points).map_or(f64::NAN, |f| f.slope)
}

fn rate_fits(family: &Family) -> Verdict {
    let dot_phi = slope(family, |m| -m.flow_bounds.inf_dot_phi);
    let floor = slope(family, |m| -m.flat_representative.floor);
    let names: Vec<String> = family.members[0]
        .weak
        .forms
        .iter()
        .filter(|f| !f.trivial)
        .map(|f| f.name.clone())
        .collect();
    let pairing: Vec<f64> = names
        .iter()
        .map(|name| {
            slope(family, |m| {
                m.weak.forms.iter().find(|f| &f.name == name).map_or(f64::NAN, |f| f.e.abs())
            })
        })
        .collect();
    let passing = pairing.iter().filter(|&&s| s <= -0.4).count();
    Verdict::new(
        dot_phi <= -0.35 && floor <= -0.35 && names.len() == 5 && passing >= 4,
        format!(
            "inf φ̇ slope {dot_phi:.3}, floor slope {floor:.3}, pairing slopes [{}] ({passing}/{} ≤ −0.4)",
            pairing.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join(", "),
            names.len()
        ),
    )
}

fn volume_density_ok(family: &Family) -> (bool, String) {
    let mut pass = true;
    let mut worst_pointwise = f64::INFINITY;
    let mut worst_l1 = f64::INFINITY;
    for m in &family.members {
        let v = &m.volume;
        let l1_slack = v.l1_bound * (1.0 + 1e-6) - v.l1_gap;
        pass &= v.pointwise_slack >= 0.0 && l1_slack >= 0.0;
        worst_pointwise = worst_pointwise.min(v.pointwise_slack);
        worst_l1 = worst_l1.min(l1_slack);
    }
    let norms: Vec<f64> = family.members.iter().map(|m| m.volume.v_minus_one_l1).collect();
    let decreasing = norms.windows(2).all(|w| w[1] < w[0]);
    (
        pass && decreasing,
        format!(
            "min pointwise slack {worst_pointwise:.2e}, min L¹ slack {worst_l1:.2e}, ‖v − 1‖_L¹ [{}]",
            norms.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn volume_density(family: &Family) -> Verdict {
    let (pass, detail) = volume_density_ok(family);
    Verdict::new(pass, detail)
}

fn distance_suite(family: &Family) -> Verdict {
    let geom = TorusGeometry::new(1, 64).unwrap();
    let identity = FlatMetric::identity(1);
    let graph = DistanceGraph::flat(geom, &identity, StencilConfig { radius: 3 }).unwrap();
    let queries = random_queries(geom, 100, 7);
    let flat_dev = queries
        .iter()
        .zip(graph.distances(&queries))
        .map(|(&(x, y), d)| {
            let exact = flat_distance_exact(&identity, &geom.point(x), &geom.point(y));
            (d - exact).abs() / exact
        })
        .fold(0.0, f64::max);

    let d4 = family.member(4).distance.as_ref().expect("distance fragment at i=4");
    let mut times: Vec<f64> = d4.rows.iter().map(|r| r.t).collect();
    times.dedup();
    let queries4 = d4.rows.iter().map(|r| r.query).max().map_or(0, |q| q + 1);
    let estimate = d4.c.is_finite()
        && d4.l.is_finite()
        && d4.l > 0.0
        && times == [0.05, 0.25, 1.0]
        && queries4 == 10
        && d4.min_slack(d4.c) >= -1e-12;

    let d64 = family.member(64).distance.as_ref().expect("distance fragment at i=64");
    let near_flat = d64.max_flat_deviation();
    Verdict::new(
        flat_dev <= 0.02 && estimate && near_flat <= 0.03,
        format!(
            "flat max deviation {:.3}%, i=4 C {:.3e} with L {:.3e} over {} rows, i=64 deviation {:.3}%",
            100.0 * flat_dev,
            d4.c,
            d4.l,
            d4.rows.len(),
            100.0 * near_flat
        ),
    )
}

fn smoke(family: &Family) -> Verdict {
    let mut pass = family.elapsed < Duration::from_secs(600);
    let mut parts = Vec::new();
    for m in &family.members {
        let (ok, detail) = max_principle_ok(
            &m.scalar_floor,
            m.flow_bounds.dot_phi_drawdown,
            m.flow_bounds.volume_deviation,
        );
        pass &= ok;
        parts.push(format!("i={}: {detail}", m.i));
    }
    let (floor_ok, floors) = scalar_floor_ok(family);
    let (volume_ok, volume) = volume_density_ok(family);
    pass &= floor_ok && volume_ok;
    parts.extend(floors);
    parts.push(volume);
    parts.push(format!("{:.1} s", family.elapsed.as_secs_f64()));
    Verdict::new(pass, parts.join("; "))
}

fn main() {
    // The slow two-dimensional smoke run overlaps with everything else.
    let smoke_run = std::thread::spawn(|| run_family("acceptance-n2", SMOKE_CONFIG, 2));

    let mut failures = 0;
    let mut report = |id: u32, name: &str, v: Verdict| {
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {status} {name}: {}", v.detail);
        if !v.pass {
            failures += 1;
        }
    };

    report(1, "spectral calculus", spectral_calculus());
    report(2, "flat stationarity", flat_stationarity());
    report(3, "harmonic projection", harmonic_projection_recovery());
    report(4, "linear-regime accuracy", linear_regime());
    let family = run_family("acceptance-n1", FAMILY_CONFIG, 4);
    report(5, "maximum principles", max_principle_suite(&family));
    report(6, "scalar floor", scalar_floor(&family));
    report(7, "rate fits", rate_fits(&family));
    report(8, "volume density", volume_density(&family));
    report(9, "distances", distance_suite(&family));
    let smoke_family = smoke_run.join().expect("smoke run");
    report(10, "two-dimensional smoke run", smoke(&smoke_family));

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
