//! Reports, CSV tables and plot data derived from persisted measurements.
//!
//! Everything here is recomputed from files on disk, so re-emitting over an
//! existing output directory reproduces the same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use kahlerlab::harness::{family_report, FamilyConstants, FamilyReport, ScenarioMeasurements};
use kahlerlab::io::{atomic_write, parse_diagnostics_csv, read_trace_meta};

use crate::run::{load_measurements, scenario_dir, RunManifest, ScenarioEntry};

#[derive(Clone, Debug, Default)]
pub struct ScenarioFiles {
    pub report: String,
    pub summary_csv: String,
    pub distances_csv: Option<String>,
    pub failed_checks: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct EmittedOutputs {
    pub scenarios: BTreeMap<u32, ScenarioFiles>,
    pub family_report: Option<String>,
    pub family_csv: Option<String>,
    pub plots: Vec<String>,
    pub rates: BTreeMap<String, f64>,
    pub family_failed_checks: Vec<String>,
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn write(out: &Path, rel: &str, text: &str) -> Result<()> {
    atomic_write(&out.join(rel), text.as_bytes()).with_context(|| format!("writing {rel}"))
}

/// Two-column plot data sorted by abscissa.
fn plot(out: &Path, rel: &str, header: (&str, &str), mut points: Vec<(f64, f64)>) -> Result<()> {
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut text = format!("{},{}\n", header.0, header.1);
    for (x, y) in points {
        let _ = writeln!(text, "{},{}", num(x), num(y));
    }
    write(out, rel, &text)
}

fn distances_csv(m: &ScenarioMeasurements, c: f64) -> Option<String> {
    let d = m.distance.as_ref()?;
    let mut text = String::from("query,t,d,method,slack\n");
    for row in &d.flat {
        let _ = writeln!(text, "{},0e0,{},graph,", row.query, num(row.d0));
        let _ = writeln!(
            text,
            "{},0e0,{},flat_exact,{}",
            row.query,
            num(row.d_flat),
            num(-row.relative_deviation())
        );
    }
    for row in &d.rows {
        let _ = writeln!(
            text,
            "{},{},{},graph,{}",
            row.query,
            num(row.t),
            num(row.dt),
            num(row.slack(c))
        );
    }
    Some(text)
}

fn family_csv(
    family: &[ScenarioMeasurements],
    entries: &[ScenarioEntry],
    report: &FamilyReport,
) -> String {
    let forms: Vec<&str> = family
        .first()
        .map(|m| m.weak.forms.iter().map(|f| f.name.as_str()).collect())
        .unwrap_or_default();
    let qs: Vec<f64> = family
        .first()
        .map(|m| m.volume.v_minus_one_lq.iter().map(|l| l.q).collect())
        .unwrap_or_default();
    let with_distance = family.iter().any(|m| m.distance.is_some());

    let mut cols: Vec<String> = [
        "i",
        "amplitude",
        "min_r0",
        "volume_floor",
        "l1_potential",
        "l1_equivalence",
        "l1_floor",
        "l2",
        "l3",
        "l4",
        "c4",
        "inf_dot_phi",
        "min_r",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend(forms.iter().map(|f| format!("abs_e.{f}")));
    cols.push("v_minus_one_l1".into());
    cols.extend(qs.iter().map(|q| format!("v_minus_one_q{q}")));
    if with_distance {
        cols.push("distance_min_slack".into());
        cols.push("distance_max_flat_deviation".into());
    }
    cols.push("all_pass".into());
    let mut text = cols.join(",") + "\n";

    for m in family {
        let entry = entries.iter().find(|e| e.i == m.i);
        let cand = FamilyConstants::candidates(m);
        let mut row = vec![
            m.i.to_string(),
            num(m.amplitude),
            entry.and_then(|e| e.gates.as_ref()).map_or(String::new(), |g| num(g.min_r)),
            num(m.flat_representative.floor),
            num(cand.l1_potential),
            num(cand.l1_equivalence),
            num(cand.l1_floor),
            num(cand.l2),
            num(cand.l3),
            num(cand.l4),
            num(cand.c4),
            num(m.flow_bounds.inf_dot_phi),
            num(m.scalar_floor.min_r),
        ];
        for f in &forms {
            let e = m.weak.forms.iter().find(|x| x.name == *f).map_or(f64::NAN, |x| x.e.abs());
            row.push(num(e));
        }
        row.push(num(m.volume.v_minus_one_l1));
        row.extend(m.volume.v_minus_one_lq.iter().map(|l| num(l.value)));
        if with_distance {
            match &m.distance {
                Some(d) => {
                    row.push(num(d.min_slack(report.constants.distance)));
                    row.push(num(d.max_flat_deviation()));
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        let pass = report.scenarios.get(&m.i).is_some_and(|r| r.all_pass());
        row.push(pass.to_string());
        text += &(row.join(",") + "\n");
    }
    text
}

/// Writes per-scenario reports and CSVs, the family report and CSV, and plot data.
pub fn emit_outputs(manifest: &RunManifest, out: &Path) -> Result<EmittedOutputs> {
    let family = load_measurements(manifest, out)?;
    let mut emitted = EmittedOutputs::default();
    if family.is_empty() {
        return Ok(emitted);
    }
    let report = family_report(&family);

    for m in &family {
        let dir = scenario_dir(m.i);
        let sr = &report.scenarios[&m.i];
        let report_rel = format!("{dir}/report.json");
        write(out, &report_rel, &sr.to_json())?;
        let summary_rel = format!("{dir}/summary.csv");
        write(
            out,
            &summary_rel,
            &format!("i,{}\n{},{}\n", sr.csv_header(), m.i, sr.csv_row()),
        )?;
        let distances_rel = match distances_csv(m, report.constants.distance) {
            Some(text) => {
                let rel = format!("{dir}/distances.csv");
                write(out, &rel, &text)?;
                Some(rel)
            }
            None => None,
        };
        emitted.scenarios.insert(
            m.i,
            ScenarioFiles {
                report: report_rel,
                summary_csv: summary_rel,
                distances_csv: distances_rel,
                failed_checks: sr.failures().into_iter().map(String::from).collect(),
            },
        );
    }

    write(out, "report.json", &report.to_json())?;
    emitted.family_report = Some("report.json".into());
    write(out, "family.csv", &family_csv(&family, &manifest.scenarios, &report))?;
    emitted.family_csv = Some("family.csv".into());

    let mut plots = Vec::new();
    for entry in &manifest.scenarios {
        let Some(trace_rel) = &entry.trace else { continue };
        if entry.measurements.is_none() {
            continue;
        }
        let trace_dir = out.join(trace_rel);
        let meta = read_trace_meta(&trace_dir)?;
        let diags = parse_diagnostics_csv(&std::fs::read_to_string(trace_dir.join(&meta.diagnostics))?)?;
        let rel = format!("plots/min_r_vs_t_i{}.csv", entry.i);
        plot(out, &rel, ("t", "min_r"), diags.iter().map(|d| (d.t, d.min_r)).collect())?;
        plots.push(rel);
    }
    let by_i = |y: &dyn Fn(&ScenarioMeasurements) -> f64| -> Vec<(f64, f64)> {
        family.iter().map(|m| (m.i as f64, y(m))).collect()
    };
    plot(out, "plots/inf_dot_phi_vs_i.csv", ("i", "inf_dot_phi"), by_i(&|m| m.flow_bounds.inf_dot_phi))?;
    plots.push("plots/inf_dot_phi_vs_i.csv".into());
    plot(
        out,
        "plots/v_minus_one_l1_vs_i.csv",
        ("i", "v_minus_one_l1"),
        by_i(&|m| m.volume.v_minus_one_l1),
    )?;
    plots.push("plots/v_minus_one_l1_vs_i.csv".into());
    for f in family[0].weak.forms.iter().filter(|f| !f.trivial) {
        let rel = format!("plots/abs_e_vs_i_{}.csv", f.name);
        let name = f.name.clone();
        plot(
            out,
            &rel,
            ("i", "abs_e"),
            by_i(&|m| m.weak.forms.iter().find(|x| x.name == name).map_or(f64::NAN, |x| x.e.abs())),
        )?;
        plots.push(rel);
    }
    emitted.plots = plots;
    emitted.rates = report.rates.iter().map(|(k, r)| (k.clone(), r.slope)).collect();
    emitted.family_failed_checks = report.family.failures().into_iter().map(String::from).collect();
    Ok(emitted)
}
