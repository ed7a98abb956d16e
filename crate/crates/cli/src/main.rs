use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use kahlerlab::distance::{random_queries, DistanceGraph, StencilConfig};
use kahlerlab::flow::run_flow;
use kahlerlab::geometry::harmonic_projection;
use kahlerlab::harness::{family_report, measure_scenario, test_form_battery};
use kahlerlab::io::{atomic_write, load_trace, read_metric, save_trace, write_scalar};
use kahlerlab::scenario::make_sequence;
use kahlerlab::{FlowConfig, KahlerMetric};
use kahlerlab_cli::config::{parse_config, ConfigError, ExperimentConfig};
use kahlerlab_cli::run::{default_out, run_experiment, EXIT_CHECK_FAILURE, EXIT_CONFIG_ERROR, EXIT_OK, EXIT_SCENARIO_ERROR};

#[derive(Parser)]
#[command(name = "kahlerlab", version, about = "Kähler–Ricci flow estimate experiments on complex tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: calibrate every index, run the flows, check all estimates.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run the flow from a single metric and save its trace.
    Flow {
        #[command(flatten)]
        source: MetricSource,
        #[arg(long)]
        out: PathBuf,
    },
    /// Flat representative of a metric's class.
    Project {
        #[command(flatten)]
        source: MetricSource,
        #[arg(long)]
        out: PathBuf,
    },
    /// Graph distances between random point pairs on a saved trace.
    Distance {
        #[arg(long)]
        trace: PathBuf,
        /// Snapshot time; the initial metric when omitted.
        #[arg(long)]
        t: Option<f64>,
        #[arg(long, default_value_t = 10)]
        queries: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        radius: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the estimate report of a saved trace.
    Check {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        index: u32,
        /// Supplies the test-form battery and `q` list; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct MetricSource {
    /// Metric file in the binary field format.
    #[arg(long, conflicts_with_all = ["config", "index"])]
    metric: Option<PathBuf>,
    /// Experiment config; the metric is the calibrated member `--index`.
    #[arg(long, requires = "index")]
    config: Option<PathBuf>,
    #[arg(long)]
    index: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Config(ConfigError),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> std::result::Result<ExperimentConfig, Failure> {
    let mut cfg = parse_config(path).map_err(Failure::Config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn source_metric(src: &MetricSource) -> std::result::Result<(KahlerMetric, FlowConfig), Failure> {
    match (&src.metric, &src.config, src.index) {
        (Some(path), _, _) => Ok((read_metric(path).context("reading metric")?, FlowConfig::default())),
        (None, Some(cfg_path), Some(i)) => {
            let cfg = load_config(cfg_path, src.seed)?;
            let mut spec = cfg.scenario_spec();
            spec.indices = vec![i];
            let member = make_sequence(&spec, cfg.torus())
                .context("calibrating scenario")?
                .remove(0);
            Ok((member.metric, cfg.flow))
        }
        _ => Err(Failure::Other(anyhow::anyhow!("give either --metric or --config with --index"))),
    }
}

fn execute(cmd: Command) -> std::result::Result<i32, Failure> {
    match cmd {
        Command::Run { config, out, seed, jobs } => {
            let cfg = load_config(&config, seed)?;
            let out = default_out(&cfg, out);
            let manifest = run_experiment(&cfg, &out, jobs)?;
            for s in &manifest.scenarios {
                match &s.status {
                    kahlerlab_cli::ScenarioStatus::Ok if s.failed_checks.is_empty() => {
                        println!("i = {:>4}: pass", s.i)
                    }
                    kahlerlab_cli::ScenarioStatus::Ok => {
                        println!("i = {:>4}: FAIL {}", s.i, s.failed_checks.join(", "))
                    }
                    kahlerlab_cli::ScenarioStatus::Error { message } => {
                        println!("i = {:>4}: ERROR {message}", s.i)
                    }
                }
            }
            for (name, slope) in &manifest.rates {
                println!("slope {name}: {slope:.4}");
            }
            if !manifest.family_failed_checks.is_empty() {
                println!("family checks failed: {}", manifest.family_failed_checks.join(", "));
            }
            println!("manifest: {}", out.join(kahlerlab_cli::run::MANIFEST).display());
            Ok(manifest.exit_code)
        }
        Command::Flow { source, out } => {
            let (metric, flow) = source_metric(&source)?;
            let trace = run_flow(&metric, &flow).context("running flow")?;
            save_trace(&trace, &out, "").context("saving trace")?;
            let last = trace.diagnostics.last().expect("diagnostics");
            println!(
                "t = {}: min R = {:e}, min φ̇ = {:e}, steps = {}",
                last.t,
                last.min_r,
                last.min_dot_phi,
                trace.diagnostics.len() - 1
            );
            Ok(EXIT_OK)
        }
        Command::Project { source, out } => {
            let (metric, _) = source_metric(&source)?;
            let proj = harmonic_projection(&metric).context("projecting")?;
            std::fs::create_dir_all(&out).context("creating output directory")?;
            write_scalar(&out.join("u.tkrf"), &proj.u).context("writing u")?;
            let summary = serde_json::json!({
                "flat": proj.flat.matrix(),
                "sup_abs_u": proj.u.sup_norm(),
                "residual": proj.residual,
            });
            atomic_write(&out.join("projection.json"), serde_json::to_string_pretty(&summary).unwrap().as_bytes())
                .context("writing projection")?;
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            Ok(EXIT_OK)
        }
        Command::Distance { trace, t, queries, seed, radius, out } => {
            let tr = load_trace(&trace).context("loading trace")?;
            let metric = match t {
                None => tr.initial.clone(),
                Some(t) => tr
                    .metric_at(tr.require_snapshot(t).context("selecting snapshot")?)
                    .context("assembling snapshot metric")?,
            };
            let graph = DistanceGraph::build(&metric, StencilConfig { radius }).context("building graph")?;
            let pairs = random_queries(metric.geometry(), queries, seed);
            let mut text = String::from("query,x,y,d\n");
            for (q, (&(x, y), d)) in pairs.iter().zip(graph.distances(&pairs)).enumerate() {
                text += &format!("{q},{x},{y},{d:e}\n");
            }
            match out {
                Some(path) => atomic_write(&path, text.as_bytes()).context("writing distances")?,
                None => print!("{text}"),
            }
            Ok(EXIT_OK)
        }
        Command::Check { trace, index, config, out } => {
            let tr = load_trace(&trace).context("loading trace")?;
            let (count, seed, qs) = match &config {
                Some(path) => {
                    let cfg = load_config(path, None)?;
                    (cfg.harness.test_forms, cfg.test_form_seed(), cfg.harness.q.clone())
                }
                None => (5, 1000, vec![1.0, 2.0]),
            };
            let forms = test_form_battery(tr.geometry(), count, seed).context("building test forms")?;
            let m = measure_scenario(&tr, index, f64::NAN, &forms, &qs, None).context("measuring")?;
            let report = family_report(std::slice::from_ref(&m));
            let json = report.to_json();
            match out {
                Some(path) => atomic_write(&path, json.as_bytes()).context("writing report")?,
                None => println!("{json}"),
            }
            Ok(if report.all_pass() { EXIT_OK } else { EXIT_CHECK_FAILURE })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match execute(cli.command) {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG_ERROR
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            EXIT_SCENARIO_ERROR
        }
    };
    ExitCode::from(code as u8)
}
