//! Commands behind the `intersim` binary.

pub mod plot;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use intersim_core::config::{load_scenario, LoadError};
use intersim_core::metrics::{self, find_dips, MetricsReport, SpeedCurve};
use intersim_core::sim::{run, RunOutput, ScenarioConfig, ScenarioMode, TraceRecord};
use serde::Serialize;
use thiserror::Error;

use plot::{Chart, Series};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATIONS: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

/// Position bin width for speed-ratio curves, meters.
pub const BIN_WIDTH: f64 = 1.0;
/// Minimum prominence for a reported dip.
pub const DIP_PROMINENCE: f64 = 0.02;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_path: String,
    pub seeds: Vec<u64>,
    pub rates: Vec<f64>,
    pub out_dir: String,
    pub violations: usize,
    pub wall_clock_seconds: f64,
    /// Relative to `out_dir`, in write order.
    pub files: Vec<String>,
}

/// Writes files under one root and remembers what was written.
struct Outputs {
    root: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|source| CliError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn open(&mut self, rel: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
        let path = self.root.join(rel);
        let io_err = |source| CliError::Io {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
        let f = File::create(&path).map_err(io_err)?;
        self.files.push(rel.to_string());
        Ok((path, BufWriter::new(f)))
    }

    fn csv(
        &mut self,
        rel: &str,
        write: impl FnOnce(&mut BufWriter<File>) -> csv::Result<()>,
    ) -> Result<(), CliError> {
        let (path, mut w) = self.open(rel)?;
        write(&mut w).map_err(|source| CliError::Csv {
            path: path.clone(),
            source,
        })?;
        w.flush().map_err(|source| CliError::Io { path, source })
    }

    fn text(&mut self, rel: &str, body: &str) -> Result<(), CliError> {
        let (path, mut w) = self.open(rel)?;
        w.write_all(body.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|source| CliError::Io { path, source })
    }

    fn manifest(mut self, mut manifest: RunManifest) -> Result<RunManifest, CliError> {
        manifest.files = self.files.clone();
        manifest.files.push("manifest.toml".into());
        let body = toml::to_string(&manifest).expect("manifest serializes");
        self.text("manifest.toml", &body)?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, Serialize)]
struct RunSummary<'a> {
    name: &'a str,
    seed: u64,
    spawn_probability: f64,
    steps: u64,
    density: f64,
    mean_nu: Option<f64>,
    min_conflict_distance: Option<f64>,
    violations: usize,
    fallbacks: u64,
    clamps: u64,
    spawned: usize,
    remaining: usize,
}

fn summary<'a>(cfg: &'a ScenarioConfig, out: &RunOutput, rep: &MetricsReport) -> RunSummary<'a> {
    RunSummary {
        name: &cfg.name,
        seed: cfg.rng_seed,
        spawn_probability: match cfg.mode {
            ScenarioMode::Generated => cfg.spawn.probability,
            ScenarioMode::Scripted => 0.0,
        },
        steps: out.steps,
        density: rep.density,
        mean_nu: rep.mean_speed_ratio,
        min_conflict_distance: rep.min_conflict_distance,
        violations: rep.violations,
        fallbacks: rep.fallbacks,
        clamps: rep.clamps,
        spawned: out.summaries.len(),
        remaining: out.remaining,
    }
}

fn simulate(cfg: &ScenarioConfig) -> Result<(RunOutput, MetricsReport), CliError> {
    let world = cfg
        .validate()
        .map_err(|e| CliError::Usage(format!("invalid scenario: {e}")))?;
    let out = run(cfg).map_err(|e| CliError::Usage(format!("invalid scenario: {e}")))?;
    let rep = metrics::report(&out, BIN_WIDTH, world.max_path_length())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((out, rep))
}

fn write_run_tables(
    o: &mut Outputs,
    prefix: &str,
    cfg: &ScenarioConfig,
    out: &RunOutput,
    rep: &MetricsReport,
) -> Result<(), CliError> {
    o.csv(&format!("{prefix}traces.csv"), |w| {
        metrics::write_traces_csv(w, &out.traces, &rep.speed_ratios)
    })?;
    o.csv(&format!("{prefix}metrics.csv"), |w| {
        metrics::write_curves_csv(w, &rep.curves)
    })?;
    o.csv(&format!("{prefix}events.csv"), |w| {
        metrics::write_events_csv(w, &out.events)
    })?;
    o.csv(&format!("{prefix}violations.csv"), |w| {
        metrics::write_violations_csv(w, &out.violations)
    })?;
    o.csv(&format!("{prefix}summary.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.serialize(summary(cfg, out, rep))?;
        c.flush()?;
        Ok(())
    })
}

fn per_vehicle(traces: &[TraceRecord], f: impl Fn(&TraceRecord) -> Option<f64>) -> Vec<Series> {
    let mut by: BTreeMap<u32, (String, Vec<(f64, f64)>)> = BTreeMap::new();
    for r in traces {
        if let Some(y) = f(r) {
            by.entry(r.id)
                .or_insert_with(|| (r.name.clone(), Vec::new()))
                .1
                .push((r.time, y));
        }
    }
    by.into_values().map(|(n, pts)| Series::line(n, pts)).collect()
}

fn run_charts(out: &RunOutput, cfg: &ScenarioConfig, point: u8) -> Vec<(&'static str, Chart)> {
    let world = cfg.validate().expect("validated before the run");
    let coord_of = |label: &str| {
        world
            .paths()
            .iter()
            .find(|p| p.label() == label)
            .and_then(|p| p.crossing_of(point))
            .map(|c| c.coord)
    };
    let mut coords: BTreeMap<String, Option<f64>> = BTreeMap::new();
    for r in &out.traces {
        coords.entry(r.path.clone()).or_insert_with(|| coord_of(&r.path));
    }
    vec![
        (
            "speed.svg",
            Chart {
                title: "Speed".into(),
                x_label: "time [s]".into(),
                y_label: "v [m/s]".into(),
                series: per_vehicle(&out.traces, |r| Some(r.v)),
            },
        ),
        (
            "acceleration.svg",
            Chart {
                title: "Applied acceleration".into(),
                x_label: "time [s]".into(),
                y_label: "u [m/s²]".into(),
                series: per_vehicle(&out.traces, |r| Some(r.u)),
            },
        ),
        (
            "distance.svg",
            Chart {
                title: format!("Along-path distance to collision point {point}"),
                x_label: "time [s]".into(),
                y_label: "distance [m]".into(),
                series: per_vehicle(&out.traces, |r| coords[&r.path].map(|c| c - r.p)),
            },
        ),
    ]
}

#[derive(Debug, Clone)]
pub struct ScenarioArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    /// Collision point used by the distance plot.
    pub point: u8,
}

/// Runs one scenario and writes its outputs. Returns the manifest.
pub fn run_scenario(args: &ScenarioArgs) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    if !(1..=4).contains(&args.point) {
        return Err(CliError::Usage(format!("collision point {} not in 1..=4", args.point)));
    }
    let mut cfg = load_scenario(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.rng_seed = seed;
    }
    let (out, rep) = simulate(&cfg)?;
    let mut o = Outputs::new(&args.out)?;
    write_run_tables(&mut o, "", &cfg, &out, &rep)?;
    for (name, chart) in run_charts(&out, &cfg, args.point) {
        o.text(name, &chart.to_svg())?;
    }
    o.manifest(RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: "run-scenario".into(),
        config_path: args.config.display().to_string(),
        seeds: vec![cfg.rng_seed],
        rates: Vec::new(),
        out_dir: args.out.display().to_string(),
        violations: rep.violations,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        files: Vec::new(),
    })
}

#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub config: PathBuf,
    pub rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct AggregateRow {
    rate: f64,
    seed: u64,
    density: f64,
    mean_nu: Option<f64>,
    min_conflict_distance: Option<f64>,
    violations: usize,
    fallbacks: u64,
    clamps: u64,
}

/// Directory name of one sweep run.
pub fn sweep_run_dir(rate: f64, seed: u64) -> String {
    format!("rate-{rate}_seed-{seed}")
}

/// Runs every (rate, seed) pair of a generated scenario.
pub fn sweep_density(args: &SweepArgs) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    if args.rates.is_empty() || args.seeds.is_empty() {
        return Err(CliError::Usage("need at least one rate and one seed".into()));
    }
    let base = load_scenario(&args.config)?;
    if base.mode != ScenarioMode::Generated {
        return Err(CliError::Usage(format!(
            "{}: sweep-density needs mode = \"generated\"",
            args.config.display()
        )));
    }
    let extent = base
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?
        .max_path_length();
    let mut o = Outputs::new(&args.out)?;
    let mut rows = Vec::new();
    let mut pooled: Vec<(f64, Vec<SpeedCurve>)> = Vec::new();
    for &rate in &args.rates {
        let mut traces = Vec::new();
        for &seed in &args.seeds {
            let mut cfg = base.clone();
            cfg.spawn.probability = rate;
            cfg.rng_seed = seed;
            let (out, rep) = simulate(&cfg)?;
            write_run_tables(&mut o, &format!("{}/", sweep_run_dir(rate, seed)), &cfg, &out, &rep)?;
            rows.push(AggregateRow {
                rate,
                seed,
                density: rep.density,
                mean_nu: rep.mean_speed_ratio,
                min_conflict_distance: rep.min_conflict_distance,
                violations: rep.violations,
                fallbacks: rep.fallbacks,
                clamps: rep.clamps,
            });
            traces.extend(out.traces);
        }
        let curves = metrics::traffic_speed_ratio(&traces, BIN_WIDTH, extent)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        pooled.push((rate, curves));
    }

    o.csv("aggregate.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        for r in &rows {
            c.serialize(r)?;
        }
        c.flush()?;
        Ok(())
    })?;
    o.csv("curves.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["rate", "class", "bin_start", "bin_end", "nu_bar", "samples"])?;
        for (rate, curves) in &pooled {
            for cv in curves {
                for (i, (m, n)) in cv.mean.iter().zip(&cv.samples).enumerate() {
                    c.write_record([
                        rate.to_string(),
                        cv.class.clone(),
                        cv.bin_start(i).to_string(),
                        cv.bin_start(i + 1).to_string(),
                        m.map(|v| v.to_string()).unwrap_or_default(),
                        n.to_string(),
                    ])?;
                }
            }
        }
        c.flush()?;
        Ok(())
    })?;
    o.csv("dips.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["rate", "class", "bin_start", "nu_bar", "prominence"])?;
        for (rate, curves) in &pooled {
            for cv in curves {
                for d in find_dips(cv, DIP_PROMINENCE) {
                    c.write_record([
                        rate.to_string(),
                        cv.class.clone(),
                        cv.bin_start(d.bin).to_string(),
                        d.value.to_string(),
                        d.prominence.to_string(),
                    ])?;
                }
            }
        }
        c.flush()?;
        Ok(())
    })?;

    let sweep_chart = Chart {
        title: "Mean traffic speed ratio against realized density".into(),
        x_label: "density [vehicles]".into(),
        y_label: "mean speed ratio".into(),
        series: vec![Series::scatter(
            "runs",
            rows.iter()
                .filter_map(|r| r.mean_nu.map(|m| (r.density, m)))
                .collect(),
        )],
    };
    o.text("sweep.svg", &sweep_chart.to_svg())?;
    let curves_chart = Chart {
        title: "Traffic speed ratio by position".into(),
        x_label: "path coordinate [m]".into(),
        y_label: "speed ratio".into(),
        series: pooled
            .iter()
            .flat_map(|(rate, curves)| {
                curves.iter().map(move |cv| {
                    let pts = cv
                        .mean
                        .iter()
                        .enumerate()
                        .filter_map(|(i, m)| m.map(|v| (cv.bin_start(i) + 0.5 * cv.bin_width, v)))
                        .collect();
                    Series::line(format!("{} @ {rate}", cv.class), pts)
                })
            })
            .collect(),
    };
    o.text("curves.svg", &curves_chart.to_svg())?;

    o.manifest(RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: "sweep-density".into(),
        config_path: args.config.display().to_string(),
        seeds: args.seeds.clone(),
        rates: args.rates.clone(),
        out_dir: args.out.display().to_string(),
        violations: rows.iter().map(|r| r.violations).sum(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        files: Vec::new(),
    })
}

/// Exit code for a finished command.
pub fn exit_code(result: &Result<RunManifest, CliError>) -> i32 {
    match result {
        Ok(m) if m.violations == 0 => EXIT_OK,
        Ok(_) => EXIT_VIOLATIONS,
        Err(_) => EXIT_ERROR,
    }
}
