//! Command-line driver: generate scenarios, predict, evaluate, sweep,
//! export layers and serve a run.
//!
//! Exit codes: 0 success, 1 other failure, 2 unparseable input, 3 prediction
//! for an outage missing from the truth file, 4 unknown outage id.

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use faultloc::eval::{evaluate, export_layers, parse_predictions, report_to_csv, write_predictions, EvalError};
use faultloc::geo::GeoPoint;
use faultloc::ingest::{write_assets, write_outages, write_pings, ContextConfig, IngestError, OutageContext};
use faultloc::optimize::{min_pts_sensitivity, OptimizerConfig, ScoreWeights};
use faultloc::run::{
    build_contexts, load_inputs, predict_all, replay, RunConfig, RunError, LAYERS_DIR, PREDICTIONS_FILE, RUN_FILE,
};
use faultloc::synth::{generate_suite, parse_truth, write_truth, Dataset, ScenarioSpec};
use thiserror::Error;

pub const OUTAGES_FILE: &str = "outages.csv";
pub const PINGS_FILE: &str = "pings.csv";
pub const ASSETS_FILE: &str = "assets.geojson";
pub const TRUTH_FILE: &str = "truth.csv";
pub const REPORT_FILE: &str = "report.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    UnknownEvalOutage(String),
    #[error("{0}")]
    Lookup(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Parse(_) => 2,
            CliError::UnknownEvalOutage(_) => 3,
            CliError::Lookup(_) => 4,
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::MalformedRows { file, rows } => CliError::Parse(
                rows.iter()
                    .map(|r| format!("{}:{r}", file.display()))
                    .collect::<Vec<_>>()
                    .join("\n"),
            ),
            RunError::Ingest(..) | RunError::Config(_) => CliError::Parse(e.to_string()),
            RunError::Io(..) => CliError::Other(e.to_string()),
        }
    }
}

fn other(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "faultloc", version, about = "Locate outage faults from crew-vehicle telemetry")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic suite with ground truth.
    Synth(SynthArgs),
    /// Predict a fault location for every outage.
    Predict(PredictArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Cluster formation across min_pts values at a fixed eps.
    Sweep(SweepArgs),
    /// Write one outage's GeoJSON layers from a run directory.
    Export(ExportArgs),
    /// Serve a run directory over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of scenarios.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub n_crew: usize,
    #[arg(long, default_value_t = 5)]
    pub n_noise: usize,
    #[arg(long, default_value_t = 10.0)]
    pub gps_sigma: f64,
    #[arg(long, default_value_t = 0.6)]
    pub dwell_fraction: f64,
    /// Outage duration, seconds.
    #[arg(long, default_value_t = 7200.0)]
    pub duration: f64,
    /// Seconds between pings.
    #[arg(long, default_value_t = 30.0)]
    pub ping_interval: f64,
    #[arg(long, default_value_t = 6000.0)]
    pub feeder_length: f64,
    #[arg(long, default_value_t = 25.0)]
    pub fault_offset: f64,
    #[arg(long, default_value_t = 39.29, allow_negative_numbers = true)]
    pub center_lat: f64,
    #[arg(long, default_value_t = -76.61, allow_negative_numbers = true)]
    pub center_lon: f64,
}

/// Input files, either named one by one or found in a dataset directory.
#[derive(Debug, Args, Clone)]
pub struct InputArgs {
    /// Directory holding outages.csv, pings.csv and assets.geojson.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub outages: Option<PathBuf>,
    #[arg(long)]
    pub pings: Option<PathBuf>,
    #[arg(long)]
    pub assets: Option<PathBuf>,
}

impl InputArgs {
    fn resolve(&self) -> Result<(PathBuf, PathBuf, PathBuf), CliError> {
        let pick = |explicit: &Option<PathBuf>, name: &str| {
            explicit
                .clone()
                .or_else(|| self.data.as_ref().map(|d| d.join(name)))
                .ok_or_else(|| CliError::Other(format!("pass --data or --{}", name.split('.').next().unwrap_or(name))))
        };
        Ok((
            pick(&self.outages, OUTAGES_FILE)?,
            pick(&self.pings, PINGS_FILE)?,
            pick(&self.assets, ASSETS_FILE)?,
        ))
    }
}

#[derive(Debug, Args, Clone)]
pub struct TuningArgs {
    #[arg(long, default_value_t = 5)]
    pub rounds: usize,
    #[arg(long, default_value_t = 24)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.25)]
    pub keep_fraction: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_dwell: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_vehicles: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_temporal: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_compact: f64,
    /// Seconds added before the outage start.
    #[arg(long, default_value_t = 0.0)]
    pub pad_before: f64,
    /// Seconds added after the outage end.
    #[arg(long, default_value_t = 1800.0)]
    pub pad_after: f64,
    /// Metres added around the feeder envelope.
    #[arg(long, default_value_t = 500.0)]
    pub buffer: f64,
}

impl TuningArgs {
    fn optimizer(&self) -> Result<OptimizerConfig, CliError> {
        let cfg = OptimizerConfig {
            rounds: self.rounds,
            samples_per_round: self.samples,
            keep_fraction: self.keep_fraction,
            seed: self.seed,
            weights: ScoreWeights::new(self.w_dwell, self.w_vehicles, self.w_temporal, self.w_compact).map_err(other)?,
            ..OptimizerConfig::default()
        };
        cfg.validate().map_err(other)?;
        Ok(cfg)
    }

    fn context(&self) -> ContextConfig {
        ContextConfig {
            pad_before_s: self.pad_before,
            pad_after_s: self.pad_after,
            bbox_buffer_m: self.buffer,
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Ground truth, recorded in run.json for later evaluation.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[arg(long, default_value_t = 100.0)]
    pub hit_radius: f64,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Skip writing per-outage layer files.
    #[arg(long)]
    pub no_layers: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    pub hit_radius: f64,
    /// Report CSV path; defaults to report.csv next to the predictions.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Run directory whose inputs and configuration to use.
    #[arg(long, conflicts_with_all = ["data", "outages", "pings", "assets"])]
    pub run_dir: Option<PathBuf>,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub outage: String,
    #[arg(long)]
    pub eps: f64,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub min_pts: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
    #[arg(long)]
    pub outage: String,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
}

/// Writes `path` through a temporary file in the same directory and renames
/// it into place.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("{}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::Other(format!("{}: {e}", dir.display())))?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush().map_err(other)?;
    }
    tmp.persist(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn ingest_err(e: IngestError) -> CliError {
    CliError::Other(e.to_string())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Predict(a) => cmd_predict(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::Export(a) => cmd_export(&a, out),
        Command::Serve(a) => cmd_serve(&a),
    }
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.n == 0 {
        return Err(CliError::Other("--n must be at least 1".into()));
    }
    let spec = ScenarioSpec {
        n_crew: a.n_crew,
        n_noise_vehicles: a.n_noise,
        outage_duration_s: a.duration,
        dwell_fraction: a.dwell_fraction,
        gps_sigma_m: a.gps_sigma,
        ping_interval_s: a.ping_interval,
        feeder_length_m: a.feeder_length,
        fault_offset_m: a.fault_offset,
        region_center: GeoPoint::new(a.center_lat, a.center_lon).map_err(other)?,
        ..ScenarioSpec::default()
    };
    spec.validate().map_err(CliError::Other)?;
    let d = Dataset::from_scenarios(&generate_suite(a.n, &spec, a.seed));
    write_atomic(&a.out.join(OUTAGES_FILE), |w| write_outages(w, &d.outages).map_err(ingest_err))?;
    write_atomic(&a.out.join(PINGS_FILE), |w| write_pings(w, &d.pings).map_err(ingest_err))?;
    write_atomic(&a.out.join(ASSETS_FILE), |w| write_assets(w, &d.assets).map_err(ingest_err))?;
    write_atomic(&a.out.join(TRUTH_FILE), |w| write_truth(w, &d.truths).map_err(ingest_err))?;
    writeln!(
        out,
        "wrote {} outages, {} pings, {} assets to {}",
        d.outages.len(),
        d.pings.len(),
        d.assets.len(),
        a.out.display()
    )
    .map_err(other)
}

fn canonical(path: &Path) -> Result<PathBuf, CliError> {
    fs::canonicalize(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

fn contexts_for(cfg: &RunConfig) -> Result<Vec<OutageContext>, CliError> {
    let inputs = load_inputs(cfg)?;
    build_contexts(&inputs, &cfg.context).map_err(|e| CliError::Parse(e.to_string()))
}

fn layer_path(run_dir: &Path, outage_id: &str) -> PathBuf {
    run_dir.join(LAYERS_DIR).join(format!("{outage_id}.geojson"))
}

pub fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (outages, pings, assets) = a.input.resolve()?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::Other(format!("{}: {e}", a.out.display())))?;
    let mut cfg = RunConfig::new(canonical(&outages)?, canonical(&pings)?, canonical(&assets)?, canonical(&a.out)?);
    cfg.truth = a.truth.as_deref().map(canonical).transpose()?;
    cfg.optimizer = a.tuning.optimizer()?;
    cfg.context = a.tuning.context();
    cfg.hit_radius_m = a.hit_radius;

    let contexts = contexts_for(&cfg)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs).build().map_err(other)?;
    let results = pool.install(|| predict_all(&contexts, &cfg.optimizer));

    let rows: Vec<_> = results.iter().map(|r| r.record(cfg.optimizer.seed)).collect();
    if !a.no_layers {
        for (ctx, r) in contexts.iter().zip(&results) {
            let layers = export_layers(ctx, r.result.as_ref().ok(), &r.assignment);
            write_atomic(&layer_path(&a.out, &r.outage_id), |w| {
                serde_json::to_writer(w, &layers).map_err(other)
            })?;
        }
    }
    write_atomic(&a.out.join(PREDICTIONS_FILE), |w| write_predictions(w, &rows).map_err(ingest_err))?;
    write_atomic(&a.out.join(RUN_FILE), |w| serde_json::to_writer_pretty(w, &cfg).map_err(other))?;

    let ok = results.iter().filter(|r| r.result.is_ok()).count();
    writeln!(
        out,
        "predicted {ok} of {} outages; wrote {}",
        results.len(),
        a.out.join(PREDICTIONS_FILE).display()
    )
    .map_err(other)
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

fn rows_or_parse_error<T>(path: &Path, parsed: faultloc::ingest::Parsed<T>) -> Result<Vec<T>, CliError> {
    if parsed.errors.is_empty() {
        return Ok(parsed.records);
    }
    Err(CliError::Parse(
        parsed
            .errors
            .iter()
            .map(|r| format!("{}:{r}", path.display()))
            .collect::<Vec<_>>()
            .join("\n"),
    ))
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let parse = |path: &Path, e: IngestError| CliError::Parse(format!("{}: {e}", path.display()));
    let preds = parse_predictions(open(&a.predictions)?).map_err(|e| parse(&a.predictions, e))?;
    let preds = rows_or_parse_error(&a.predictions, preds)?;
    let truths = parse_truth(open(&a.truth)?).map_err(|e| parse(&a.truth, e))?;
    let truths = rows_or_parse_error(&a.truth, truths)?;
    let report = evaluate(&preds, &truths, a.hit_radius).map_err(|e| match e {
        EvalError::UnknownOutage(_) => CliError::UnknownEvalOutage(e.to_string()),
        _ => CliError::Other(e.to_string()),
    })?;
    let report_path = a.report.clone().unwrap_or_else(|| {
        a.predictions
            .parent()
            .unwrap_or(Path::new("."))
            .join(REPORT_FILE)
    });
    write_atomic(&report_path, |w| report_to_csv(&report, w).map_err(ingest_err))?;
    writeln!(out, "{}", report.summary_line()).map_err(other)
}

/// Formats rows as a left-aligned text table.
pub fn format_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut s = line(header.to_vec());
    s.push('\n');
    for r in rows {
        s.push_str(&line(r.iter().map(String::as_str).collect()));
        s.push('\n');
    }
    s
}

pub fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = match &a.run_dir {
        Some(dir) => RunConfig::load(dir)?,
        None => {
            let (o, p, s) = a.input.resolve()?;
            RunConfig::new(o, p, s, PathBuf::from("."))
        }
    };
    let contexts = contexts_for(&cfg)?;
    let ctx = contexts
        .iter()
        .find(|c| c.outage.outage_id == a.outage)
        .ok_or_else(|| CliError::Lookup(format!("unknown outage `{}`", a.outage)))?;
    let rows = min_pts_sensitivity(ctx, a.eps, &a.min_pts, &cfg.optimizer.weights, &cfg.optimizer.stay).map_err(other)?;
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.min_pts.to_string(),
                r.cluster_count.to_string(),
                r.clustered_points.to_string(),
                r.noise_points.to_string(),
                format!("{:.4}", r.best_confidence),
            ]
        })
        .collect();
    let table = format_table(&["min_pts", "clusters", "clustered", "noise", "best_confidence"], &cells);
    write!(out, "{table}").map_err(other)
}

pub fn cmd_export(a: &ExportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = RunConfig::load(&a.run_dir)?;
    let contexts = contexts_for(&cfg)?;
    let ctx = contexts
        .iter()
        .find(|c| c.outage.outage_id == a.outage)
        .ok_or_else(|| CliError::Lookup(format!("unknown outage `{}`", a.outage)))?;
    let path = a.run_dir.join(PREDICTIONS_FILE);
    let preds = parse_predictions(open(&path)?).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let preds = rows_or_parse_error(&path, preds)?;
    let record = preds
        .iter()
        .find(|r| r.outage_id == a.outage)
        .ok_or_else(|| CliError::Lookup(format!("no prediction row for `{}`", a.outage)))?;
    let r = replay(ctx, record, &cfg.optimizer);
    let layers = export_layers(ctx, r.result.as_ref().ok(), &r.assignment);
    match &a.out {
        Some(path) => write_atomic(path, |w| serde_json::to_writer(w, &layers).map_err(other)),
        None => {
            serde_json::to_writer(&mut *out, &layers).map_err(other)?;
            writeln!(out).map_err(other)
        }
    }
}

pub fn cmd_serve(a: &ServeArgs) -> Result<(), CliError> {
    let runtime = tokio::runtime::Runtime::new().map_err(other)?;
    runtime
        .block_on(faultloc_service::serve(&a.run_dir, SocketAddr::new(a.host, a.port)))
        .map_err(other)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Other(String::new()).exit_code(), 1);
        assert_eq!(CliError::Parse(String::new()).exit_code(), 2);
        assert_eq!(CliError::UnknownEvalOutage(String::new()).exit_code(), 3);
        assert_eq!(CliError::Lookup(String::new()).exit_code(), 4);
    }

    #[test]
    fn table_alignment() {
        let t = format_table(&["a", "bbb"], &[vec!["1000".into(), "2".into()], vec!["3".into(), "4".into()]]);
        assert_eq!(t, "a     bbb\n1000  2\n3     4\n");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x").join("f.txt");
        write_atomic(&path, |w| w.write_all(b"one").map_err(other)).unwrap();
        write_atomic(&path, |w| w.write_all(b"two").map_err(other)).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
        let failed = write_atomic(&path, |_| Err(CliError::Other("boom".into())));
        assert!(failed.is_err());
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from(["faultloc", "sweep", "--data", "d", "--outage", "X", "--eps", "40", "--min-pts", "4,8,16"]).unwrap();
        let Command::Sweep(s) = cli.command else { panic!() };
        assert_eq!(s.min_pts, vec![4, 8, 16]);
    }
}
