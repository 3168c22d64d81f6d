//! DBSCAN over geographic points, k-distance curves with elbow detection,
//! and per-cluster attribute summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_m, spherical_centroid, GeoPoint, SpatialIndex, EARTH_RADIUS_M};
use crate::ingest::{seconds_between, track_stay_points, tracks_by_vehicle, Timestamp, VehiclePing};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("invalid parameters: eps_m={eps_m}, min_pts={min_pts}")]
    InvalidParams { eps_m: f64, min_pts: usize },
    #[error("need more than {needed} points, have {have}")]
    InsufficientPoints { needed: usize, have: usize },
}

/// Neighbourhood radius and core-point threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps_m: f64,
    pub min_pts: usize,
}

impl DbscanParams {
    pub fn new(eps_m: f64, min_pts: usize) -> Result<Self, ClusterError> {
        if eps_m.is_finite() && eps_m > 0.0 && min_pts >= 1 {
            Ok(Self { eps_m, min_pts })
        } else {
            Err(ClusterError::InvalidParams { eps_m, min_pts })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Noise,
    Cluster(u32),
}

impl Label {
    pub fn cluster(&self) -> Option<u32> {
        match self {
            Label::Noise => None,
            Label::Cluster(c) => Some(*c),
        }
    }

    pub fn is_noise(&self) -> bool {
        matches!(self, Label::Noise)
    }
}

/// Per-point labels from one DBSCAN run. Cluster ordinals are contiguous
/// from zero and numbered in order of each cluster's lowest core ordinal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<Label>,
    pub core: Vec<bool>,
    pub params: DbscanParams,
    pub n_clusters: usize,
}

impl ClusterAssignment {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_noise()).count()
    }

    pub fn clustered_count(&self) -> usize {
        self.labels.len() - self.noise_count()
    }

    /// Member ordinals of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (i, l) in self.labels.iter().enumerate() {
            if let Label::Cluster(c) = l {
                out[*c as usize].push(i);
            }
        }
        out
    }
}

/// Source of eps-neighbourhoods for DBSCAN.
pub trait Neighborhoods {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the ordinals within `eps_m` of point `i` (itself included).
    fn neighbors(&self, i: usize, eps_m: f64, out: &mut Vec<usize>);
}

impl Neighborhoods for SpatialIndex {
    fn len(&self) -> usize {
        SpatialIndex::len(self)
    }

    fn neighbors(&self, i: usize, eps_m: f64, out: &mut Vec<usize>) {
        self.neighbors_of(i, eps_m, out)
    }
}

/// Distance-sorted neighbour lists up to a fixed radius, so repeated DBSCAN
/// runs at smaller radii skip the trigonometry. Queries beyond the cached
/// radius fall through to the index.
#[derive(Debug, Clone)]
pub struct NeighborCache {
    index: SpatialIndex,
    radius_m: f64,
    offsets: Vec<usize>,
    entries: Vec<(f64, u32)>,
}

impl NeighborCache {
    /// Returns `None` when the lists would exceed `max_entries` in total.
    pub fn build(index: SpatialIndex, radius_m: f64, max_entries: usize) -> Result<Self, SpatialIndex> {
        let mut offsets = Vec::with_capacity(index.len() + 1);
        let mut entries: Vec<(f64, u32)> = Vec::new();
        offsets.push(0);
        for i in 0..index.len() {
            let start = entries.len();
            let center = index.points()[i];
            index.for_each_within(&center, radius_m, |j, d| entries.push((d, j as u32)));
            if entries.len() > max_entries {
                return Err(index);
            }
            entries[start..].sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            offsets.push(entries.len());
        }
        Ok(Self {
            index,
            radius_m,
            offsets,
            entries,
        })
    }

    pub fn index(&self) -> &SpatialIndex {
        &self.index
    }
}

impl Neighborhoods for NeighborCache {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn neighbors(&self, i: usize, eps_m: f64, out: &mut Vec<usize>) {
        if eps_m > self.radius_m {
            return self.index.neighbors_of(i, eps_m, out);
        }
        out.clear();
        let list = &self.entries[self.offsets[i]..self.offsets[i + 1]];
        let end = list.partition_point(|e| e.0 <= eps_m);
        out.extend(list[..end].iter().map(|e| e.1 as usize));
    }
}

/// DBSCAN with the haversine metric and inclusive `<= eps` neighbourhoods.
///
/// A point is core when its neighbourhood, itself included, holds at least
/// `min_pts` points. Points are scanned in ascending ordinal order, so a
/// border point reachable from several clusters joins the one created first.
pub fn dbscan(points: &[GeoPoint], params: DbscanParams) -> ClusterAssignment {
    let index = SpatialIndex::with_cell_size(points.to_vec(), params.eps_m);
    dbscan_with(&index, params)
}

pub fn dbscan_with<N: Neighborhoods + ?Sized>(hood: &N, params: DbscanParams) -> ClusterAssignment {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Unvisited,
        Noise,
        In(u32),
    }
    let n = hood.len();
    let mut state = vec![State::Unvisited; n];
    let mut core = vec![false; n];
    let mut next = 0u32;
    let mut buf = Vec::new();
    let mut stack = Vec::new();

    for seed in 0..n {
        if state[seed] != State::Unvisited {
            continue;
        }
        hood.neighbors(seed, params.eps_m, &mut buf);
        if buf.len() < params.min_pts {
            state[seed] = State::Noise;
            continue;
        }
        let c = next;
        next += 1;
        state[seed] = State::In(c);
        core[seed] = true;
        stack.clear();
        stack.extend(buf.iter().copied().filter(|&q| q != seed));
        while let Some(q) = stack.pop() {
            match state[q] {
                State::In(_) => continue,
                // visited earlier and found non-core: border point
                State::Noise => {
                    state[q] = State::In(c);
                    continue;
                }
                State::Unvisited => {}
            }
            state[q] = State::In(c);
            hood.neighbors(q, params.eps_m, &mut buf);
            if buf.len() >= params.min_pts {
                core[q] = true;
                stack.extend(
                    buf.iter()
                        .copied()
                        .filter(|&r| matches!(state[r], State::Unvisited | State::Noise)),
                );
            }
        }
    }

    let labels = state
        .into_iter()
        .map(|s| match s {
            State::In(c) => Label::Cluster(c),
            _ => Label::Noise,
        })
        .collect();
    ClusterAssignment {
        labels,
        core,
        params,
        n_clusters: next as usize,
    }
}

/// Sorted distances from each point to its k-th nearest other point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KDistanceCurve {
    pub k: usize,
    pub sorted_dists_m: Vec<f64>,
}

pub fn k_distance_curve(points: &[GeoPoint], k: usize) -> Result<KDistanceCurve, ClusterError> {
    if k == 0 || k >= points.len() {
        return Err(ClusterError::InsufficientPoints {
            needed: k.max(1),
            have: points.len(),
        });
    }
    const START_RADIUS_M: f64 = 50.0;
    let index = SpatialIndex::with_cell_size(points.to_vec(), START_RADIUS_M);
    let max_radius = std::f64::consts::PI * EARTH_RADIUS_M;
    let mut dists = Vec::new();
    let mut out = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let mut radius = START_RADIUS_M;
        loop {
            dists.clear();
            index.for_each_within(p, radius, |j, d| {
                if j != i {
                    dists.push(d)
                }
            });
            if dists.len() >= k || radius >= max_radius {
                break;
            }
            radius = (radius * 4.0).min(max_radius);
        }
        let (_, kth, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
        out.push(*kth);
    }
    out.sort_by(f64::total_cmp);
    Ok(KDistanceCurve { k, sorted_dists_m: out })
}

/// Index of the knee: the point farthest from the chord joining the first
/// and last samples, with both axes min-max normalised. `None` for flat
/// curves.
pub fn elbow_index(curve: &KDistanceCurve) -> Result<Option<usize>, ClusterError> {
    let v = &curve.sorted_dists_m;
    if v.len() < 3 {
        return Err(ClusterError::InsufficientPoints { needed: 2, have: v.len() });
    }
    let (lo, hi) = (v[0], v[v.len() - 1]);
    let range = hi - lo;
    if range < 1e-9 {
        return Ok(None);
    }
    let last = (v.len() - 1) as f64;
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, &d) in v.iter().enumerate() {
        // Chord is y = x on the unit square; distance is |x - y| / sqrt(2).
        let gap = (i as f64 / last - (d - lo) / range).abs();
        if gap > best.1 {
            best = (i, gap);
        }
    }
    Ok(Some(best.0))
}

/// Curve value at the knee. Near-linear curves still return a value, but the
/// knee is weakly defined there.
pub fn detect_elbow(curve: &KDistanceCurve) -> Result<f64, ClusterError> {
    Ok(match elbow_index(curve)? {
        Some(i) => curve.sorted_dists_m[i],
        None => curve.sorted_dists_m[0],
    })
}

/// Stay-point settings used when computing per-vehicle dwell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StayConfig {
    pub max_roam_m: f64,
    pub min_dwell_s: f64,
}

impl Default for StayConfig {
    fn default() -> Self {
        Self {
            max_roam_m: 50.0,
            min_dwell_s: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_ordinal: u32,
    pub centroid: GeoPoint,
    pub point_count: usize,
    pub unique_vehicles: usize,
    pub dwell_by_vehicle: BTreeMap<String, f64>,
    pub arrival_order: Vec<String>,
    pub departure_order: Vec<String>,
    pub rms_radius_m: f64,
    pub in_window_fraction: f64,
}

impl ClusterSummary {
    pub fn total_dwell_s(&self) -> f64 {
        self.dwell_by_vehicle.values().sum()
    }
}

pub fn summarize_clusters(
    assignment: &ClusterAssignment,
    pings: &[VehiclePing],
    window: (Timestamp, Timestamp),
) -> Vec<ClusterSummary> {
    summarize_clusters_with(assignment, pings, window, &StayConfig::default())
}

pub fn summarize_clusters_with(
    assignment: &ClusterAssignment,
    pings: &[VehiclePing],
    window: (Timestamp, Timestamp),
    stay: &StayConfig,
) -> Vec<ClusterSummary> {
    assert_eq!(assignment.labels.len(), pings.len(), "labels and pings must be index-aligned");
    assignment
        .members()
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(c, members)| summarize_one(c as u32, &members, pings, window, stay))
        .collect()
}

fn summarize_one(
    ordinal: u32,
    members: &[usize],
    pings: &[VehiclePing],
    window: (Timestamp, Timestamp),
    stay: &StayConfig,
) -> ClusterSummary {
    let positions: Vec<GeoPoint> = members.iter().map(|&i| pings[i].position).collect();
    let centroid = spherical_centroid(&positions).unwrap_or(positions[0]);
    let rms_radius_m =
        (positions.iter().map(|p| haversine_m(p, &centroid).powi(2)).sum::<f64>() / positions.len() as f64).sqrt();
    let in_window = members
        .iter()
        .filter(|&&i| pings[i].time >= window.0 && pings[i].time <= window.1)
        .count();

    let mut dwell_by_vehicle = BTreeMap::new();
    let mut spans = Vec::new();
    for (vehicle, track) in tracks_by_vehicle(members.iter().map(|&i| &pings[i])) {
        let (first, last) = (track[0].time, track[track.len() - 1].time);
        let stays = track_stay_points(vehicle, &track, stay.max_roam_m, stay.min_dwell_s);
        let dwell = if stays.is_empty() {
            seconds_between(first, last)
        } else {
            stays.iter().map(|s| s.dwell_s).sum()
        };
        dwell_by_vehicle.insert(vehicle.to_string(), dwell);
        spans.push((vehicle, first, last));
    }
    spans.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let arrival_order = spans.iter().map(|s| s.0.to_string()).collect();
    spans.sort_by(|a, b| a.2.cmp(&b.2).then_with(|| a.0.cmp(b.0)));
    let departure_order = spans.iter().map(|s| s.0.to_string()).collect();

    ClusterSummary {
        cluster_ordinal: ordinal,
        centroid,
        point_count: members.len(),
        unique_vehicles: dwell_by_vehicle.len(),
        dwell_by_vehicle,
        arrival_order,
        departure_order,
        rms_radius_m,
        in_window_fraction: in_window as f64 / members.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn origin() -> GeoPoint {
        GeoPoint::new(39.3, -76.6).unwrap()
    }

    fn t(s: i64) -> Timestamp {
        Utc.timestamp_opt(1_700_000_000 + s, 0).unwrap()
    }

    fn params(eps: f64, min_pts: usize) -> DbscanParams {
        DbscanParams::new(eps, min_pts).unwrap()
    }

    /// Textbook DBSCAN from a full distance matrix: core flags, connected
    /// components of the core graph ordered by lowest member, border points
    /// to the lowest-numbered adjacent component.
    fn oracle(points: &[GeoPoint], p: DbscanParams) -> (Vec<Option<usize>>, Vec<bool>) {
        let n = points.len();
        let adj: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..n).map(|j| haversine_m(&points[i], &points[j]) <= p.eps_m).collect())
            .collect();
        let core: Vec<bool> = (0..n).map(|i| adj[i].iter().filter(|&&b| b).count() >= p.min_pts).collect();
        let mut comp = vec![None; n];
        let mut next = 0;
        for s in 0..n {
            if !core[s] || comp[s].is_some() {
                continue;
            }
            comp[s] = Some(next);
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for v in 0..n {
                    if adj[u][v] && core[v] && comp[v].is_none() {
                        comp[v] = Some(next);
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        let labels = (0..n)
            .map(|i| {
                if core[i] {
                    comp[i]
                } else {
                    (0..n).filter(|&j| core[j] && adj[i][j]).filter_map(|j| comp[j]).min()
                }
            })
            .collect();
        (labels, core)
    }

    fn random_blobs(rng: &mut ChaCha8Rng, n: usize) -> Vec<GeoPoint> {
        let centers: Vec<GeoPoint> = (0..rng.random_range(1..6))
            .map(|_| origin().offset_m(rng.random_range(-3000.0..3000.0), rng.random_range(-3000.0..3000.0)))
            .collect();
        (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    origin().offset_m(rng.random_range(-4000.0..4000.0), rng.random_range(-4000.0..4000.0))
                } else {
                    let c = centers[rng.random_range(0..centers.len())];
                    let s = rng.random_range(5.0..300.0);
                    c.offset_m(rng.random_range(-s..s), rng.random_range(-s..s))
                }
            })
            .collect()
    }

    fn to_options(a: &ClusterAssignment) -> Vec<Option<usize>> {
        a.labels.iter().map(|l| l.cluster().map(|c| c as usize)).collect()
    }

    #[test]
    fn empty_input() {
        let a = dbscan(&[], params(10.0, 3));
        assert!(a.labels.is_empty());
        assert_eq!(a.n_clusters, 0);
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let pts = vec![origin(); 5];
        let a = dbscan(&pts, params(1.0, 3));
        assert_eq!(a.n_clusters, 1);
        assert!(a.labels.iter().all(|l| *l == Label::Cluster(0)));
    }

    #[test]
    fn far_point_is_noise() {
        let mut pts: Vec<GeoPoint> = (0..10).map(|i| origin().offset_m(2.0 * i as f64, 1.0 * i as f64)).collect();
        pts.push(origin().offset_m(10_000.0, 0.0));
        let a = dbscan(&pts, params(100.0, 4));
        assert_eq!(a.n_clusters, 1);
        assert!(a.labels[..10].iter().all(|l| *l == Label::Cluster(0)));
        assert_eq!(a.labels[10], Label::Noise);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(DbscanParams::new(0.0, 3).is_err());
        assert!(DbscanParams::new(f64::NAN, 3).is_err());
        assert!(DbscanParams::new(5.0, 0).is_err());
    }

    #[test]
    fn matches_oracle_over_seeds() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(0..=300);
            let pts = random_blobs(&mut rng, n);
            let p = params((rng.random_range(10f64.ln()..1000f64.ln())).exp(), rng.random_range(2..=20));
            let got = dbscan(&pts, p);
            let (labels, core) = oracle(&pts, p);
            assert_eq!(got.core, core, "seed {seed}");
            assert_eq!(to_options(&got), labels, "seed {seed}");
        }
    }

    #[test]
    fn neighbor_cache_matches_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pts = random_blobs(&mut rng, 600);
        let index = SpatialIndex::with_cell_size(pts.clone(), 100.0);
        let cache = NeighborCache::build(index.clone(), 300.0, usize::MAX).unwrap();
        for eps in [5.0, 40.0, 150.0, 300.0, 900.0] {
            let p = params(eps, 5);
            assert_eq!(dbscan_with(&cache, p), dbscan_with(&index, p));
        }
        assert!(NeighborCache::build(index, 300.0, 10).is_err());
    }

    #[test]
    fn k_distance_cases() {
        let chain: Vec<GeoPoint> = (0..10).map(|i| GeoPoint::new(0.0, i as f64 * 0.001).unwrap()).collect();
        let s = haversine_m(&chain[0], &chain[1]);
        let curve = k_distance_curve(&chain, 1).unwrap();
        assert!(curve.sorted_dists_m.iter().all(|d| (d - s).abs() < 1e-6));

        let pair = [origin(), origin().offset_m(30.0, 0.0)];
        let curve = k_distance_curve(&pair, 1).unwrap();
        let d = haversine_m(&pair[0], &pair[1]);
        assert_eq!(curve.sorted_dists_m, vec![d, d]);

        assert!(matches!(k_distance_curve(&pair, 2), Err(ClusterError::InsufficientPoints { .. })));
        assert!(k_distance_curve(&pair, 0).is_err());
    }

    #[test]
    fn k_distance_matches_all_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in [1, 4, 9] {
            let pts = random_blobs(&mut rng, 200);
            let mut expected: Vec<f64> = (0..pts.len())
                .map(|i| {
                    let mut d: Vec<f64> = (0..pts.len()).filter(|&j| j != i).map(|j| haversine_m(&pts[i], &pts[j])).collect();
                    d.sort_by(f64::total_cmp);
                    d[k - 1]
                })
                .collect();
            expected.sort_by(f64::total_cmp);
            assert_eq!(k_distance_curve(&pts, k).unwrap().sorted_dists_m, expected);
        }
    }

    fn curve(v: Vec<f64>) -> KDistanceCurve {
        KDistanceCurve { k: 4, sorted_dists_m: v }
    }

    #[test]
    fn elbow_cases() {
        assert_eq!(detect_elbow(&curve(vec![5.0; 4])).unwrap(), 5.0);
        assert!(detect_elbow(&curve(vec![1.0, 2.0])).is_err());

        let mut v = vec![10.0; 50];
        v.extend((0..50).map(|j| 10.0 + 490.0 * j as f64 / 49.0));
        let i = elbow_index(&curve(v)).unwrap().unwrap();
        assert!((i as i64 - 49).abs() <= 2, "elbow at {i}");

        let linear: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let e = detect_elbow(&curve(linear)).unwrap();
        assert!((0.0..=19.0).contains(&e));
    }

    fn ping_at(v: &str, s: i64, p: GeoPoint) -> VehiclePing {
        VehiclePing {
            vehicle_id: v.into(),
            time: t(s),
            position: p,
        }
    }

    #[test]
    fn summary_single_vehicle_dwell() {
        let pings: Vec<_> = (0..=10).map(|i| ping_at("a", i * 60, origin())).collect();
        let a = dbscan(&pings.iter().map(|p| p.position).collect::<Vec<_>>(), params(10.0, 3));
        let s = summarize_clusters(&a, &pings, (t(0), t(600)));
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].dwell_by_vehicle["a"], 600.0);
        assert!(s[0].rms_radius_m < 1e-6);
        assert_eq!(s[0].in_window_fraction, 1.0);
    }

    #[test]
    fn summary_arrival_order_and_fallback_dwell() {
        let mut pings = vec![ping_at("late", 100, origin()), ping_at("late", 160, origin())];
        pings.push(ping_at("early", 0, origin()));
        pings.push(ping_at("early", 400, origin()));
        let a = dbscan(&pings.iter().map(|p| p.position).collect::<Vec<_>>(), params(10.0, 2));
        let s = summarize_clusters(&a, &pings, (t(0), t(150)));
        assert_eq!(s[0].arrival_order, vec!["early", "late"]);
        assert_eq!(s[0].departure_order, vec!["late", "early"]);
        // "late" never dwells 300 s: last minus first
        assert_eq!(s[0].dwell_by_vehicle["late"], 60.0);
        assert_eq!(s[0].dwell_by_vehicle["early"], 400.0);
        assert_eq!(s[0].unique_vehicles, 2);
        assert_eq!(s[0].in_window_fraction, 0.5);
    }

    #[test]
    fn summary_matches_per_label_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let site_b = origin().offset_m(2000.0, 500.0);
        let mut pings = Vec::new();
        for i in 0..40 {
            let site = if i % 2 == 0 { origin() } else { site_b };
            let p = site.offset_m(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            pings.push(ping_at(&format!("v{}", i % 4), i * 30, p));
        }
        pings.push(ping_at("x", 5, origin().offset_m(900.0, 900.0)));
        let pts: Vec<_> = pings.iter().map(|p| p.position).collect();
        let a = dbscan(&pts, params(40.0, 4));
        assert_eq!(a.n_clusters, 2);
        let s = summarize_clusters(&a, &pings, (t(0), t(10_000)));
        for sum in &s {
            let members: Vec<usize> = (0..pings.len())
                .filter(|&i| a.labels[i] == Label::Cluster(sum.cluster_ordinal))
                .collect();
            assert_eq!(sum.point_count, members.len());
            let c = spherical_centroid(&members.iter().map(|&i| pts[i]).collect::<Vec<_>>()).unwrap();
            assert!(haversine_m(&c, &sum.centroid) < 1e-9);
            let vehicles: std::collections::BTreeSet<_> = members.iter().map(|&i| pings[i].vehicle_id.clone()).collect();
            assert_eq!(sum.unique_vehicles, vehicles.len());
            assert_eq!(sum.arrival_order.len(), vehicles.len());
        }
        let noise_only = ClusterAssignment {
            labels: vec![Label::Noise; pings.len()],
            core: vec![false; pings.len()],
            params: params(1.0, 100),
            n_clusters: 0,
        };
        assert!(summarize_clusters(&noise_only, &pings, (t(0), t(1))).is_empty());
    }

    /// Reachability by explicit search over the core graph.
    fn assert_density_connected(points: &[GeoPoint], a: &ClusterAssignment) {
        let eps = a.params.eps_m;
        for members in a.members() {
            let cores: Vec<usize> = members.iter().copied().filter(|&i| a.core[i]).collect();
            assert!(!cores.is_empty());
            let mut seen = vec![false; points.len()];
            let mut stack = vec![cores[0]];
            seen[cores[0]] = true;
            while let Some(u) = stack.pop() {
                if !a.core[u] {
                    continue;
                }
                for v in 0..points.len() {
                    if !seen[v] && haversine_m(&points[u], &points[v]) <= eps {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            for &m in &members {
                assert!(seen[m], "member {m} not density-reachable");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn core_partition_is_order_invariant(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_blobs(&mut rng, 150);
            let p = params(rng.random_range(20.0..400.0), rng.random_range(2..10));
            let a = dbscan(&pts, p);
            let mut perm: Vec<usize> = (0..pts.len()).collect();
            perm.shuffle(&mut rng);
            let shuffled: Vec<GeoPoint> = perm.iter().map(|&i| pts[i]).collect();
            let b = dbscan(&shuffled, p);
            // same core flags and same grouping of core points
            let mut map = std::collections::HashMap::new();
            for (new_i, &old_i) in perm.iter().enumerate() {
                prop_assert_eq!(a.core[old_i], b.core[new_i]);
                prop_assert_eq!(a.labels[old_i].is_noise(), b.labels[new_i].is_noise());
                if a.core[old_i] {
                    let prev = map.insert(a.labels[old_i], b.labels[new_i]);
                    prop_assert!(prev.is_none() || prev == Some(b.labels[new_i]));
                }
            }
        }

        #[test]
        fn clusters_are_density_connected(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_blobs(&mut rng, 80);
            let a = dbscan(&pts, params(rng.random_range(20.0..400.0), rng.random_range(2..8)));
            assert_density_connected(&pts, &a);
        }

        #[test]
        fn growing_eps_keeps_core_points(seed in 0u64..10_000, e1 in 5.0..500.0f64, e2 in 5.0..500.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_blobs(&mut rng, 120);
            let min_pts = rng.random_range(2..10);
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let a = dbscan(&pts, params(lo, min_pts));
            let b = dbscan(&pts, params(hi, min_pts));
            for i in 0..pts.len() {
                prop_assert!(!a.core[i] || b.core[i]);
                prop_assert!(a.labels[i].is_noise() || !b.labels[i].is_noise());
            }
        }

        #[test]
        fn k_distance_non_decreasing_in_k(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_blobs(&mut rng, 60);
            let c1 = k_distance_curve(&pts, 2).unwrap();
            let c2 = k_distance_curve(&pts, 5).unwrap();
            for (a, b) in c1.sorted_dists_m.iter().zip(&c2.sorted_dists_m) {
                prop_assert!(a <= b);
            }
        }
    }
}
