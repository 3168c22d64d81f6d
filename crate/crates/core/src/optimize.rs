//! Parameter search for the clustering step.
//!
//! Each round draws `(eps, min_pts)` candidates from the current search
//! space, clusters the outage's pings, scores every cluster, and then shrinks
//! the space around the best-scoring candidates. The winning cluster's
//! centroid is the predicted fault location.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{
    dbscan_with, detect_elbow, k_distance_curve, summarize_clusters_with, ClusterAssignment, ClusterSummary,
    DbscanParams, NeighborCache, Neighborhoods, StayConfig,
};
use crate::geo::{GeoPoint, SpatialIndex};
use crate::ingest::{motion_features, OutageContext, OutageEvent};

/// Upper bound on cached neighbour pairs per context (about 64 MiB).
const NEIGHBOR_CACHE_LIMIT: usize = 4_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("too few pings to cluster ({count} < {floor})")]
    TooFewPings { count: usize, floor: usize },
    #[error("no candidate produced a cluster")]
    NoCluster,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl OptimizeError {
    /// Short machine-readable tag, used in output files.
    pub fn reason(&self) -> &'static str {
        match self {
            OptimizeError::TooFewPings { .. } => "too_few_pings",
            OptimizeError::NoCluster => "no_cluster",
            OptimizeError::InvalidConfig(_) => "invalid_config",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub eps_range_m: (f64, f64),
    pub min_pts_range: (usize, usize),
}

impl SearchSpace {
    pub fn new(eps_range_m: (f64, f64), min_pts_range: (usize, usize)) -> Result<Self, OptimizeError> {
        let (e0, e1) = eps_range_m;
        let (m0, m1) = min_pts_range;
        if !(e0.is_finite() && e1.is_finite() && 0.0 < e0 && e0 <= e1 && 0 < m0 && m0 <= m1) {
            return Err(OptimizeError::InvalidConfig(format!(
                "search space eps {eps_range_m:?}, min_pts {min_pts_range:?}"
            )));
        }
        Ok(Self {
            eps_range_m,
            min_pts_range,
        })
    }

    pub fn contains(&self, other: &SearchSpace) -> bool {
        self.eps_range_m.0 <= other.eps_range_m.0
            && other.eps_range_m.1 <= self.eps_range_m.1
            && self.min_pts_range.0 <= other.min_pts_range.0
            && other.min_pts_range.1 <= self.min_pts_range.1
    }
}

/// Relative weights of the four confidence components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub w_dwell: f64,
    pub w_vehicles: f64,
    pub w_temporal: f64,
    pub w_compact: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            w_dwell: 1.0,
            w_vehicles: 1.0,
            w_temporal: 1.0,
            w_compact: 1.0,
        }
    }
}

impl ScoreWeights {
    pub fn new(w_dwell: f64, w_vehicles: f64, w_temporal: f64, w_compact: f64) -> Result<Self, OptimizeError> {
        let w = Self {
            w_dwell,
            w_vehicles,
            w_temporal,
            w_compact,
        };
        let all = [w_dwell, w_vehicles, w_temporal, w_compact];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) && all.iter().sum::<f64>() > 0.0 {
            Ok(w)
        } else {
            Err(OptimizeError::InvalidConfig(format!("score weights {all:?}")))
        }
    }

    fn sum(&self) -> f64 {
        self.w_dwell + self.w_vehicles + self.w_temporal + self.w_compact
    }
}

/// Confidence components, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponents {
    pub dwell: f64,
    pub vehicles: f64,
    pub temporal: f64,
    pub compact: f64,
}

/// Unique vehicle count at which the vehicle component saturates.
pub const VEHICLE_SATURATION: f64 = 3.0;

pub fn score_components(summary: &ClusterSummary, outage: &OutageEvent, eps_m: f64) -> ScoreComponents {
    let duration = outage.duration_s();
    let dwell = if duration > 0.0 {
        (summary.total_dwell_s() / duration).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ScoreComponents {
        dwell,
        vehicles: (summary.unique_vehicles as f64 / VEHICLE_SATURATION).min(1.0),
        temporal: summary.in_window_fraction.clamp(0.0, 1.0),
        compact: (1.0 - summary.rms_radius_m / eps_m).max(0.0),
    }
}

pub fn combine(components: &ScoreComponents, weights: &ScoreWeights) -> f64 {
    let sum = weights.w_dwell * components.dwell
        + weights.w_vehicles * components.vehicles
        + weights.w_temporal * components.temporal
        + weights.w_compact * components.compact;
    (sum / weights.sum()).clamp(0.0, 1.0)
}

/// Weighted, normalised confidence of one cluster found with radius `eps_m`.
pub fn confidence_score(summary: &ClusterSummary, outage: &OutageEvent, eps_m: f64, weights: &ScoreWeights) -> f64 {
    combine(&score_components(summary, outage, eps_m), weights)
}

/// How the round-0 search space is derived from a context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Contexts with fewer pings are not predicted.
    pub min_pings: usize,
    pub eps_floor_m: f64,
    pub eps_ceiling_m: f64,
    /// Neighbour rank for the k-distance curve.
    pub elbow_k: usize,
    pub min_pts_floor: usize,
    pub min_pts_cap: usize,
    /// Upper min_pts bound as a fraction of the ping count.
    pub min_pts_fraction: f64,
    /// Quantile of consecutive-ping step distances used as the eps floor.
    pub step_quantile: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            min_pings: 8,
            eps_floor_m: 10.0,
            eps_ceiling_m: 1000.0,
            elbow_k: 4,
            min_pts_floor: 4,
            min_pts_cap: 100,
            min_pts_fraction: 0.05,
            step_quantile: 0.10,
        }
    }
}

/// Nearest-rank quantile of an unsorted sample.
pub fn nearest_rank(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

/// Search-space arithmetic from the step quantile, the elbow estimate and
/// the ping count. If the step floor exceeds the elbow ceiling the eps range
/// collapses onto the floor.
pub fn search_space_bounds(
    step_quantile_m: Option<f64>,
    elbow_m: f64,
    ping_count: usize,
    cfg: &SearchConfig,
) -> SearchSpace {
    let lo = step_quantile_m.unwrap_or(cfg.eps_floor_m).max(cfg.eps_floor_m).min(cfg.eps_ceiling_m);
    let hi = (2.0 * elbow_m).min(cfg.eps_ceiling_m).max(lo);
    let mp_hi = ((cfg.min_pts_fraction * ping_count as f64).floor() as usize)
        .max(cfg.min_pts_floor)
        .clamp(cfg.min_pts_floor, cfg.min_pts_cap);
    SearchSpace {
        eps_range_m: (lo, hi),
        min_pts_range: (cfg.min_pts_floor, mp_hi),
    }
}

pub fn initial_search_space(context: &OutageContext, cfg: &SearchConfig) -> Result<SearchSpace, OptimizeError> {
    let n = context.pings.len();
    if n < cfg.min_pings {
        return Err(OptimizeError::TooFewPings {
            count: n,
            floor: cfg.min_pings,
        });
    }
    let steps: Vec<f64> = motion_features(&context.pings).iter().map(|f| f.step_m).collect();
    let positions: Vec<GeoPoint> = context.pings.iter().map(|p| p.position).collect();
    let k = cfg.elbow_k.min(n - 1).max(1);
    let elbow = k_distance_curve(&positions, k)
        .ok()
        .and_then(|c| detect_elbow(&c).ok())
        .unwrap_or(cfg.eps_floor_m);
    Ok(search_space_bounds(nearest_rank(&steps, cfg.step_quantile), elbow, n, cfg))
}

/// `n` candidates: eps log-uniform, min_pts uniform over the inclusive range.
pub fn sample_candidates(space: &SearchSpace, n: usize, seed: u64) -> Vec<DbscanParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (e0, e1) = space.eps_range_m;
    let (m0, m1) = space.min_pts_range;
    (0..n)
        .map(|_| {
            let eps_m = if e0 == e1 {
                e0
            } else {
                rng.random_range(e0.ln()..=e1.ln()).exp().clamp(e0, e1)
            };
            let min_pts = rng.random_range(m0..=m1);
            DbscanParams { eps_m, min_pts }
        })
        .collect()
}

/// One evaluated parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub params: DbscanParams,
    pub best_summary: Option<ClusterSummary>,
    /// Highest cluster confidence, 0 when nothing clustered.
    pub confidence: f64,
}

/// Shrinks `space` to the parameter ranges of the top `keep_fraction` of
/// candidates, widened by 10% at each end and clipped to `original`.
pub fn refine_search_space(
    space: &SearchSpace,
    original: &SearchSpace,
    scored: &[Candidate],
    keep_fraction: f64,
) -> SearchSpace {
    if scored.is_empty() || scored.iter().all(|c| c.confidence <= 0.0) {
        return *space;
    }
    let keep = ((keep_fraction.clamp(f64::MIN_POSITIVE, 1.0) * scored.len() as f64).ceil() as usize).clamp(1, scored.len());
    let mut ranked: Vec<&Candidate> = scored.iter().collect();
    ranked.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let top = &ranked[..keep];

    let eps_lo = top.iter().map(|c| c.params.eps_m).fold(f64::INFINITY, f64::min);
    let eps_hi = top.iter().map(|c| c.params.eps_m).fold(f64::NEG_INFINITY, f64::max);
    let mp_lo = top.iter().map(|c| c.params.min_pts).min().unwrap_or(original.min_pts_range.0);
    let mp_hi = top.iter().map(|c| c.params.min_pts).max().unwrap_or(original.min_pts_range.1);

    let clip_f = |v: f64| v.clamp(original.eps_range_m.0, original.eps_range_m.1);
    let clip_u = |v: usize| v.clamp(original.min_pts_range.0, original.min_pts_range.1);
    SearchSpace {
        eps_range_m: (clip_f(eps_lo * 0.9), clip_f(eps_hi * 1.1)),
        min_pts_range: (
            clip_u((mp_lo as f64 * 0.9).floor() as usize),
            clip_u((mp_hi as f64 * 1.1).ceil() as usize),
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub rounds: usize,
    pub samples_per_round: usize,
    pub keep_fraction: f64,
    pub weights: ScoreWeights,
    pub seed: u64,
    pub search: SearchConfig,
    pub stay: StayConfig,
    /// Stop once a round improves the best confidence by less than this.
    pub min_improvement: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            samples_per_round: 24,
            keep_fraction: 0.25,
            weights: ScoreWeights::default(),
            seed: 0,
            search: SearchConfig::default(),
            stay: StayConfig::default(),
            min_improvement: 1e-3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        if self.rounds == 0 || self.samples_per_round == 0 {
            return Err(OptimizeError::InvalidConfig("rounds and samples_per_round must be >= 1".into()));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(OptimizeError::InvalidConfig(format!("keep_fraction {} not in (0, 1]", self.keep_fraction)));
        }
        ScoreWeights::new(self.weights.w_dwell, self.weights.w_vehicles, self.weights.w_temporal, self.weights.w_compact)?;
        Ok(())
    }
}

/// Predicted fault location for one outage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub outage_id: String,
    /// Equals `cluster.centroid`.
    pub location: GeoPoint,
    pub confidence: f64,
    pub params: DbscanParams,
    pub cluster: ClusterSummary,
    pub noise_count: usize,
    pub clustered_count: usize,
    pub rounds_run: usize,
    pub seed: u64,
}

/// Per-round optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTrace {
    pub round: usize,
    pub space: SearchSpace,
    pub round_best: f64,
    /// Best confidence seen so far, this round included.
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub prediction: Prediction,
    pub assignment: ClusterAssignment,
    pub initial_space: SearchSpace,
    pub trace: Vec<RoundTrace>,
}

struct Evaluated {
    candidate: Candidate,
    assignment: ClusterAssignment,
}

/// Ordering used to pick winners: higher score, more points, tighter
/// radius, smaller eps, smaller min_pts.
fn better(a: &Evaluated, b: &Evaluated) -> bool {
    let key = |e: &Evaluated| {
        let s = e.candidate.best_summary.as_ref();
        (
            e.candidate.confidence,
            s.map(|s| s.point_count).unwrap_or(0),
            s.map(|s| s.rms_radius_m).unwrap_or(f64::INFINITY),
            e.candidate.params.eps_m,
            e.candidate.params.min_pts,
        )
    };
    let (ka, kb) = (key(a), key(b));
    ka.0.total_cmp(&kb.0)
        .then(ka.1.cmp(&kb.1))
        .then(kb.2.total_cmp(&ka.2))
        .then(kb.3.total_cmp(&ka.3))
        .then(kb.4.cmp(&ka.4))
        .is_gt()
}

fn evaluate<N: Neighborhoods + ?Sized>(
    hood: &N,
    context: &OutageContext,
    params: DbscanParams,
    weights: &ScoreWeights,
    stay: &StayConfig,
) -> Evaluated {
    let assignment = dbscan_with(hood, params);
    let window = (context.outage.start_time, context.outage.end_time);
    let mut best: Option<(f64, ClusterSummary)> = None;
    for summary in summarize_clusters_with(&assignment, &context.pings, window, stay) {
        let score = confidence_score(&summary, &context.outage, params.eps_m, weights);
        let wins = match &best {
            None => true,
            Some((bs, b)) => score
                .total_cmp(bs)
                .then(summary.point_count.cmp(&b.point_count))
                .then(b.rms_radius_m.total_cmp(&summary.rms_radius_m))
                .is_gt(),
        };
        if wins {
            best = Some((score, summary));
        }
    }
    let (confidence, best_summary) = match best {
        Some((s, summary)) => (s, Some(summary)),
        None => (0.0, None),
    };
    Evaluated {
        candidate: Candidate {
            params,
            best_summary,
            confidence,
        },
        assignment,
    }
}

fn neighborhoods(context: &OutageContext, radius_m: f64) -> Box<dyn Neighborhoods + Sync> {
    let positions: Vec<GeoPoint> = context.pings.iter().map(|p| p.position).collect();
    let index = SpatialIndex::with_cell_size(positions, radius_m);
    match NeighborCache::build(index, radius_m, NEIGHBOR_CACHE_LIMIT) {
        Ok(cache) => Box::new(cache),
        Err(index) => Box::new(index),
    }
}

fn into_prediction(context: &OutageContext, best: Evaluated, rounds_run: usize, seed: u64) -> Optimized {
    let Evaluated { candidate, assignment } = best;
    let cluster = candidate.best_summary.expect("winner has a cluster");
    let prediction = Prediction {
        outage_id: context.outage.outage_id.clone(),
        location: cluster.centroid,
        confidence: candidate.confidence,
        params: candidate.params,
        noise_count: assignment.noise_count(),
        clustered_count: assignment.clustered_count(),
        cluster,
        rounds_run,
        seed,
    };
    Optimized {
        prediction,
        assignment,
        initial_space: SearchSpace {
            eps_range_m: (candidate.params.eps_m, candidate.params.eps_m),
            min_pts_range: (candidate.params.min_pts, candidate.params.min_pts),
        },
        trace: Vec::new(),
    }
}

fn round_seed(seed: u64, round: usize) -> u64 {
    seed ^ (round as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs the search loop and returns the best cluster found across rounds.
pub fn optimize(context: &OutageContext, cfg: &OptimizerConfig) -> Result<Optimized, OptimizeError> {
    cfg.validate()?;
    let original = initial_search_space(context, &cfg.search)?;
    let hood = neighborhoods(context, original.eps_range_m.1);
    let mut space = original;
    let mut best: Option<Evaluated> = None;
    let mut trace = Vec::new();

    for round in 0..cfg.rounds {
        let before = best.as_ref().map(|b| b.candidate.confidence).unwrap_or(0.0);
        let evaluated: Vec<Evaluated> = sample_candidates(&space, cfg.samples_per_round, round_seed(cfg.seed, round))
            .into_par_iter()
            .map(|params| evaluate(hood.as_ref(), context, params, &cfg.weights, &cfg.stay))
            .collect();

        let mut round_best = 0.0f64;
        let mut scored = Vec::with_capacity(evaluated.len());
        for e in evaluated {
            round_best = round_best.max(e.candidate.confidence);
            scored.push(e.candidate.clone());
            if e.candidate.best_summary.is_some() && best.as_ref().is_none_or(|b| better(&e, b)) {
                best = Some(e);
            }
        }
        let after = best.as_ref().map(|b| b.candidate.confidence).unwrap_or(0.0);
        trace.push(RoundTrace {
            round,
            space,
            round_best,
            best_so_far: after,
        });
        if round > 0 && after - before < cfg.min_improvement {
            break;
        }
        space = refine_search_space(&space, &original, &scored, cfg.keep_fraction);
    }

    let rounds_run = trace.len();
    let best = best.ok_or(OptimizeError::NoCluster)?;
    let mut out = into_prediction(context, best, rounds_run, cfg.seed);
    out.initial_space = original;
    out.trace = trace;
    Ok(out)
}

/// Clusters with fixed parameters and scores the result like one optimizer
/// candidate.
pub fn predict_with_params(
    context: &OutageContext,
    params: DbscanParams,
    weights: &ScoreWeights,
    stay: &StayConfig,
) -> Result<Optimized, OptimizeError> {
    let positions: Vec<GeoPoint> = context.pings.iter().map(|p| p.position).collect();
    let index = SpatialIndex::with_cell_size(positions, params.eps_m);
    let e = evaluate(&index, context, params, weights, stay);
    if e.candidate.best_summary.is_none() {
        return Err(OptimizeError::NoCluster);
    }
    Ok(into_prediction(context, e, 0, 0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub min_pts: usize,
    pub cluster_count: usize,
    pub clustered_points: usize,
    pub noise_points: usize,
    pub best_confidence: f64,
}

/// Cluster formation at a fixed eps for each `min_pts` value.
pub fn min_pts_sensitivity(
    context: &OutageContext,
    eps_m: f64,
    min_pts_values: &[usize],
    weights: &ScoreWeights,
    stay: &StayConfig,
) -> Result<Vec<SensitivityRow>, OptimizeError> {
    let positions: Vec<GeoPoint> = context.pings.iter().map(|p| p.position).collect();
    let index = SpatialIndex::with_cell_size(positions, eps_m);
    min_pts_values
        .iter()
        .map(|&min_pts| {
            let params = DbscanParams::new(eps_m, min_pts).map_err(|e| OptimizeError::InvalidConfig(e.to_string()))?;
            let e = evaluate(&index, context, params, weights, stay);
            Ok(SensitivityRow {
                min_pts,
                cluster_count: e.assignment.n_clusters,
                clustered_points: e.assignment.clustered_count(),
                noise_points: e.assignment.noise_count(),
                best_confidence: e.candidate.confidence,
            })
        })
        .collect()
}
