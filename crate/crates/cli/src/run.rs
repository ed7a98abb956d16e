//! The scenario → flow → harness → distance pipeline with resumable traces.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use kahlerlab::distance::{check_distance_estimate, random_queries};
use kahlerlab::flow::run_flow;
use kahlerlab::harness::{measure_scenario, test_form_battery, NamedTestForm, ScenarioMeasurements};
use kahlerlab::io::{atomic_write, load_trace, read_trace_meta, save_trace};
use kahlerlab::scenario::{make_sequence, ScenarioMember};
use kahlerlab::FlowTrace;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::output::{emit_outputs, EmittedOutputs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILURE: i32 = 1;
pub const EXIT_SCENARIO_ERROR: i32 = 2;
pub const EXIT_CONFIG_ERROR: i32 = 3;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "state")]
pub enum ScenarioStatus {
    Ok,
    Error { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub min_r: f64,
    pub min_eig: f64,
    pub volume: f64,
    pub trace_norm: f64,
    pub positive_part_budget: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub i: u32,
    pub status: ScenarioStatus,
    pub amplitude: Option<f64>,
    pub calibration_evaluations: Option<usize>,
    pub gates: Option<GateRecord>,
    /// Paths relative to the output directory.
    pub trace: Option<String>,
    pub measurements: Option<String>,
    pub report: Option<String>,
    pub summary_csv: Option<String>,
    pub distances_csv: Option<String>,
    pub failed_checks: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: u128,
    pub scenarios_ms: BTreeMap<u32, u128>,
    /// Indices whose trace was loaded from disk instead of recomputed.
    pub resumed: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub scenarios: Vec<ScenarioEntry>,
    pub family_report: Option<String>,
    pub family_csv: Option<String>,
    pub plots: Vec<String>,
    /// Fitted log-log slopes by name.
    pub rates: BTreeMap<String, f64>,
    pub family_failed_checks: Vec<String>,
    pub all_pass: bool,
    pub exit_code: i32,
    /// Excluded from the determinism contract.
    pub timings: Timings,
}

impl RunManifest {
    pub fn read(out: &Path) -> Result<Self> {
        let bytes = std::fs::read(out.join(MANIFEST)).with_context(|| format!("reading {}", out.join(MANIFEST).display()))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

pub fn scenario_dir(i: u32) -> String {
    format!("scenario-i{i}")
}

struct ScenarioRun {
    entry: ScenarioEntry,
    elapsed_ms: u128,
    resumed: bool,
}

fn calibrate(config: &ExperimentConfig, i: u32) -> Result<ScenarioMember> {
    let mut spec = config.scenario_spec();
    spec.indices = vec![i];
    let mut members = make_sequence(&spec, config.torus())?;
    Ok(members.remove(0))
}

/// Loads the persisted trace when its tag matches, otherwise integrates and saves it.
fn trace_for(config: &ExperimentConfig, hash: &str, member: &ScenarioMember, dir: &Path) -> Result<(FlowTrace, bool)> {
    if let Ok(meta) = read_trace_meta(dir) {
        if meta.tag == hash {
            if let Ok(trace) = load_trace(dir) {
                if trace.initial == member.metric {
                    return Ok((trace, true));
                }
            }
        }
    }
    let trace = run_flow(&member.metric, &config.flow)?;
    save_trace(&trace, dir, hash)?;
    Ok((trace, false))
}

fn run_scenario(
    config: &ExperimentConfig,
    hash: &str,
    out: &Path,
    forms: &[NamedTestForm],
    i: u32,
) -> ScenarioRun {
    let start = Instant::now();
    let mut entry = ScenarioEntry {
        i,
        status: ScenarioStatus::Ok,
        amplitude: None,
        calibration_evaluations: None,
        gates: None,
        trace: None,
        measurements: None,
        report: None,
        summary_csv: None,
        distances_csv: None,
        failed_checks: Vec::new(),
    };
    let mut resumed = false;
    let result = (|| -> Result<()> {
        let member = calibrate(config, i)?;
        entry.amplitude = Some(member.amplitude);
        entry.calibration_evaluations = Some(member.evaluations);
        entry.gates = Some(GateRecord {
            min_r: member.min_r,
            min_eig: member.min_eig,
            volume: member.volume,
            trace_norm: member.trace_norm,
            positive_part_budget: member.positive_part_budget,
        });
        let rel = scenario_dir(i);
        let trace_rel = format!("{rel}/trace");
        let (trace, loaded) = trace_for(config, hash, &member, &out.join(&trace_rel))?;
        resumed = loaded;
        entry.trace = Some(trace_rel);
        let distance = if config.distance_enabled() {
            let queries = random_queries(config.torus(), config.distance.queries, config.query_seed());
            Some(check_distance_estimate(
                &trace,
                &queries,
                &config.distance.times,
                config.stencil(),
            )?)
        } else {
            None
        };
        let m = measure_scenario(&trace, i, member.amplitude, forms, &config.harness.q, distance)?;
        let m_rel = format!("{rel}/measurements.json");
        atomic_write(&out.join(&m_rel), serde_json::to_string_pretty(&m)?.as_bytes())?;
        entry.measurements = Some(m_rel);
        Ok(())
    })();
    if let Err(e) = result {
        entry.status = ScenarioStatus::Error {
            message: format!("{e:#}"),
        };
    }
    ScenarioRun {
        entry,
        elapsed_ms: start.elapsed().as_millis(),
        resumed,
    }
}

/// Runs every scenario on a pool of `jobs` workers, then emits outputs and writes the
/// manifest last.
pub fn run_experiment(config: &ExperimentConfig, out: &Path, jobs: usize) -> Result<RunManifest> {
    let start = Instant::now();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let hash = config.hash();
    let forms = test_form_battery(config.torus(), config.harness.test_forms, config.test_form_seed())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")?;
    let runs: Vec<ScenarioRun> = pool.install(|| {
        config
            .scenario
            .indices
            .par_iter()
            .map(|&i| run_scenario(config, &hash, out, &forms, i))
            .collect()
    });

    let mut timings = Timings::default();
    let mut scenarios = Vec::with_capacity(runs.len());
    for run in runs {
        timings.scenarios_ms.insert(run.entry.i, run.elapsed_ms);
        if run.resumed {
            timings.resumed.push(run.entry.i);
        }
        scenarios.push(run.entry);
    }
    let mut manifest = RunManifest {
        config_hash: hash,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        scenarios,
        family_report: None,
        family_csv: None,
        plots: Vec::new(),
        rates: BTreeMap::new(),
        family_failed_checks: Vec::new(),
        all_pass: false,
        exit_code: EXIT_OK,
        timings,
    };
    let emitted: EmittedOutputs = emit_outputs(&manifest, out)?;
    manifest.apply(emitted);
    manifest.timings.total_ms = start.elapsed().as_millis();
    atomic_write(&out.join(MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

impl RunManifest {
    fn apply(&mut self, e: EmittedOutputs) {
        for s in &mut self.scenarios {
            if let Some(files) = e.scenarios.get(&s.i) {
                s.report = Some(files.report.clone());
                s.summary_csv = Some(files.summary_csv.clone());
                s.distances_csv = files.distances_csv.clone();
                s.failed_checks = files.failed_checks.clone();
            }
        }
        self.family_report = e.family_report;
        self.family_csv = e.family_csv;
        self.plots = e.plots;
        self.rates = e.rates;
        self.family_failed_checks = e.family_failed_checks;
        let errored = self
            .scenarios
            .iter()
            .any(|s| !matches!(s.status, ScenarioStatus::Ok));
        let failed = !self.family_failed_checks.is_empty()
            || self.scenarios.iter().any(|s| !s.failed_checks.is_empty());
        self.all_pass = !errored && !failed;
        self.exit_code = if errored {
            EXIT_SCENARIO_ERROR
        } else if failed {
            EXIT_CHECK_FAILURE
        } else {
            EXIT_OK
        };
    }
}

/// Measurements of every successful scenario, sorted by index.
pub fn load_measurements(manifest: &RunManifest, out: &Path) -> Result<Vec<ScenarioMeasurements>> {
    let mut all = Vec::new();
    for s in &manifest.scenarios {
        if let (ScenarioStatus::Ok, Some(path)) = (&s.status, &s.measurements) {
            let bytes = std::fs::read(out.join(path)).with_context(|| format!("reading {path}"))?;
            all.push(serde_json::from_slice::<ScenarioMeasurements>(&bytes)?);
        }
    }
    all.sort_by_key(|m| m.i);
    Ok(all)
}

pub fn default_out(config: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("kahlerlab-out"))
}
