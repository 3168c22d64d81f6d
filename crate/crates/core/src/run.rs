//! A prediction run: input files, configuration, per-outage contexts and
//! the batch prediction step shared by the command line and the HTTP
//! service.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{dbscan, ClusterAssignment, DbscanParams, Label};
use crate::eval::{PredictionRecord, DEFAULT_HIT_RADIUS_M};
use crate::ingest::{
    assemble_context, parse_assets, parse_outages, parse_pings, AssetFeature, ContextConfig, IngestError,
    MalformedRow, OutageContext, OutageEvent, VehiclePing,
};
use crate::optimize::{optimize, predict_with_params, OptimizeError, OptimizerConfig, Prediction};

pub const RUN_FILE: &str = "run.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const LAYERS_DIR: &str = "layers";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub outages: PathBuf,
    pub pings: PathBuf,
    pub assets: PathBuf,
    pub truth: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub optimizer: OptimizerConfig,
    pub context: ContextConfig,
    pub hit_radius_m: f64,
}

impl RunConfig {
    pub fn new(outages: PathBuf, pings: PathBuf, assets: PathBuf, out_dir: PathBuf) -> Self {
        Self {
            outages,
            pings,
            assets,
            truth: None,
            out_dir,
            optimizer: OptimizerConfig::default(),
            context: ContextConfig::default(),
            hit_radius_m: DEFAULT_HIT_RADIUS_M,
        }
    }

    pub fn load(run_dir: &Path) -> Result<Self, RunError> {
        let path = run_dir.join(RUN_FILE);
        let file = File::open(&path).map_err(|e| RunError::Io(path.clone(), e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{}: {}", .0.display(), .1)]
    Io(PathBuf, std::io::Error),
    #[error("{}: {}", .0.display(), .1)]
    Ingest(PathBuf, IngestError),
    #[error("{}: {} malformed row(s)", .file.display(), .rows.len())]
    MalformedRows { file: PathBuf, rows: Vec<MalformedRow> },
    #[error("invalid run configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Default)]
pub struct RunInputs {
    pub outages: Vec<OutageEvent>,
    pub pings: Vec<VehiclePing>,
    pub assets: Vec<AssetFeature>,
}

fn ingest(path: &Path) -> impl Fn(IngestError) -> RunError + '_ {
    move |e| RunError::Ingest(path.to_path_buf(), e)
}

fn open(path: &Path) -> Result<BufReader<File>, RunError> {
    File::open(path).map(BufReader::new).map_err(|e| RunError::Io(path.to_path_buf(), e))
}

/// Parses the three input files. Any malformed row fails the load.
pub fn load_inputs(cfg: &RunConfig) -> Result<RunInputs, RunError> {
    let rows = |path: &Path, rows: Vec<MalformedRow>| {
        if rows.is_empty() {
            Ok(())
        } else {
            Err(RunError::MalformedRows {
                file: path.to_path_buf(),
                rows,
            })
        }
    };
    let outages = parse_outages(open(&cfg.outages)?).map_err(ingest(&cfg.outages))?;
    rows(&cfg.outages, outages.errors)?;
    let pings = parse_pings(open(&cfg.pings)?).map_err(ingest(&cfg.pings))?;
    rows(&cfg.pings, pings.errors)?;
    let assets = parse_assets(open(&cfg.assets)?).map_err(ingest(&cfg.assets))?;
    Ok(RunInputs {
        outages: outages.records,
        pings: pings.records,
        assets,
    })
}

/// One context per outage, sorted by outage id.
pub fn build_contexts(inputs: &RunInputs, cfg: &ContextConfig) -> Result<Vec<OutageContext>, IngestError> {
    let mut outages: Vec<&OutageEvent> = inputs.outages.iter().collect();
    outages.sort_by(|a, b| a.outage_id.cmp(&b.outage_id));
    outages
        .into_par_iter()
        .map(|o| assemble_context(o, &inputs.pings, &inputs.assets, cfg))
        .collect()
}

/// Outcome of predicting one outage, with the clustering behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct OutageResult {
    pub outage_id: String,
    pub result: Result<Prediction, OptimizeError>,
    /// Labels for the context pings: the winning clustering, or all noise.
    pub assignment: ClusterAssignment,
}

impl OutageResult {
    pub fn record(&self, seed: u64) -> PredictionRecord {
        PredictionRecord::from_result(&self.outage_id, seed, &self.result)
    }
}

/// Every ping labelled noise; used when there is no clustering to show.
pub fn unclustered(n: usize, params: DbscanParams) -> ClusterAssignment {
    ClusterAssignment {
        labels: vec![Label::Noise; n],
        core: vec![false; n],
        params,
        n_clusters: 0,
    }
}

fn fallback_params(cfg: &OptimizerConfig) -> DbscanParams {
    DbscanParams {
        eps_m: cfg.search.eps_floor_m,
        min_pts: cfg.search.min_pts_floor.max(1),
    }
}

/// Runs the parameter search on one outage.
pub fn predict_auto(context: &OutageContext, cfg: &OptimizerConfig) -> OutageResult {
    let outage_id = context.outage.outage_id.clone();
    match optimize(context, cfg) {
        Ok(o) => OutageResult {
            outage_id,
            result: Ok(o.prediction),
            assignment: o.assignment,
        },
        Err(e) => OutageResult {
            outage_id,
            result: Err(e),
            assignment: unclustered(context.pings.len(), fallback_params(cfg)),
        },
    }
}

/// Clusters one outage with fixed parameters.
pub fn predict_manual(context: &OutageContext, params: DbscanParams, cfg: &OptimizerConfig) -> OutageResult {
    let outage_id = context.outage.outage_id.clone();
    match predict_with_params(context, params, &cfg.weights, &cfg.stay) {
        Ok(o) => OutageResult {
            outage_id,
            result: Ok(o.prediction),
            assignment: o.assignment,
        },
        Err(e) => {
            let points: Vec<_> = context.pings.iter().map(|p| p.position).collect();
            OutageResult {
                outage_id,
                result: Err(e),
                assignment: dbscan(&points, params),
            }
        }
    }
}

/// Rebuilds a stored outcome. Successful predictions are re-clustered with
/// their recorded parameters; the search itself is not repeated.
pub fn replay(context: &OutageContext, record: &PredictionRecord, cfg: &OptimizerConfig) -> OutageResult {
    match &record.outcome {
        Ok(fields) => {
            let params = DbscanParams {
                eps_m: fields.eps_m,
                min_pts: fields.min_pts,
            };
            let mut out = predict_manual(context, params, cfg);
            if let Ok(p) = &mut out.result {
                p.rounds_run = fields.rounds_run;
                p.seed = record.seed;
            }
            out
        }
        Err(reason) => OutageResult {
            outage_id: record.outage_id.clone(),
            result: Err(match reason.as_str() {
                "too_few_pings" => OptimizeError::TooFewPings {
                    count: context.pings.len(),
                    floor: cfg.search.min_pings,
                },
                "no_cluster" => OptimizeError::NoCluster,
                other => OptimizeError::InvalidConfig(other.to_string()),
            }),
            assignment: unclustered(context.pings.len(), fallback_params(cfg)),
        },
    }
}

/// Predicts every context in order. Parallel over outages on the current
/// rayon pool.
pub fn predict_all(contexts: &[OutageContext], cfg: &OptimizerConfig) -> Vec<OutageResult> {
    contexts.par_iter().map(|c| predict_auto(c, cfg)).collect()
}
