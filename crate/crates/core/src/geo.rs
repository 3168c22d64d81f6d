//! Geodesic primitives on a spherical Earth.
//!
//! All coordinates are WGS84 latitude/longitude in degrees. Distances are
//! great-circle distances on a sphere of radius [`EARTH_RADIUS_M`].

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius, metres.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Length of one degree of arc on the sphere, metres.
pub const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

/// Point count under which [`SpatialIndex`] skips the grid and scans linearly.
const LINEAR_SCAN_BELOW: usize = 256;

/// Slack added to grid query envelopes, degrees. Keeps boundary points that
/// sit exactly at the query radius inside the candidate set.
const ENVELOPE_SLACK_DEG: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate lat={lat} lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("empty input")]
    EmptyInput,
    #[error("centroid undefined: mean unit vector norm {norm:e} below threshold")]
    DegenerateCentroid { norm: f64 },
    #[error("latitude {lat_deg} too close to a pole for a degree-based buffer")]
    PoleProximity { lat_deg: f64 },
    #[error("negative or non-finite buffer {0} m")]
    InvalidBuffer(f64),
}

/// A validated WGS84 position.
///
/// Latitude lies in `[-90, 90]`, longitude in `[-180, 180)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct GeoPoint {
    lat_deg: f64,
    lon_deg: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = GeoError;

    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawPoint {
    fn from(p: GeoPoint) -> Self {
        RawPoint {
            lat: p.lat_deg,
            lon: p.lon_deg,
        }
    }
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, GeoError> {
        let valid = lat_deg.is_finite()
            && lon_deg.is_finite()
            && (-90.0..=90.0).contains(&lat_deg)
            && (-180.0..180.0).contains(&lon_deg);
        if valid {
            Ok(Self { lat_deg, lon_deg })
        } else {
            Err(GeoError::InvalidCoordinate {
                lat: lat_deg,
                lon: lon_deg,
            })
        }
    }

    /// Builds a point, wrapping longitude into `[-180, 180)` and clamping
    /// latitude. Only for values produced by trusted arithmetic.
    pub(crate) fn wrapped(lat_deg: f64, lon_deg: f64) -> Self {
        let mut lon = (lon_deg + 180.0).rem_euclid(360.0) - 180.0;
        if lon >= 180.0 {
            lon = -180.0;
        }
        Self {
            lat_deg: lat_deg.clamp(-90.0, 90.0),
            lon_deg: lon,
        }
    }

    #[inline]
    pub fn lat_deg(&self) -> f64 {
        self.lat_deg
    }

    #[inline]
    pub fn lon_deg(&self) -> f64 {
        self.lon_deg
    }

    fn unit_vector(&self) -> [f64; 3] {
        let (lat, lon) = (self.lat_deg.to_radians(), self.lon_deg.to_radians());
        [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
    }

    /// Point reached by moving `east_m`/`north_m` on the local tangent plane.
    /// Accurate to well under a metre for offsets of a few kilometres.
    pub fn offset_m(&self, east_m: f64, north_m: f64) -> GeoPoint {
        let lat = self.lat_deg + north_m / METERS_PER_DEGREE;
        let lon = self.lon_deg + east_m / (METERS_PER_DEGREE * self.lat_deg.to_radians().cos());
        GeoPoint::wrapped(lat, lon)
    }

    /// Great-circle destination after travelling `distance_m` on the initial
    /// bearing `bearing_deg` (clockwise from north).
    pub fn destination(&self, bearing_deg: f64, distance_m: f64) -> GeoPoint {
        let delta = distance_m / EARTH_RADIUS_M;
        let theta = bearing_deg.to_radians();
        let (lat1, lon1) = (self.lat_deg.to_radians(), self.lon_deg.to_radians());
        let lat2 = (lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * theta.cos()).asin();
        let lon2 = lon1
            + (theta.sin() * delta.sin() * lat1.cos()).atan2(delta.cos() - lat1.sin() * lat2.sin());
        GeoPoint::wrapped(lat2.to_degrees(), lon2.to_degrees())
    }

    /// Initial great-circle bearing towards `other`, degrees in `[0, 360)`.
    pub fn bearing_deg(&self, other: &GeoPoint) -> f64 {
        let (lat1, lat2) = (self.lat_deg.to_radians(), other.lat_deg.to_radians());
        let dlon = (other.lon_deg - self.lon_deg).to_radians();
        let y = dlon.sin() * lat2.cos();
        let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
        y.atan2(x).to_degrees().rem_euclid(360.0)
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6})", self.lat_deg, self.lon_deg)
    }
}

/// Trigonometric terms cached per point so index scans and direct calls run
/// the exact same floating-point sequence.
#[derive(Debug, Clone, Copy)]
struct Trig {
    lat_rad: f64,
    lon_rad: f64,
    cos_lat: f64,
}

impl Trig {
    #[inline]
    fn of(p: &GeoPoint) -> Self {
        let lat_rad = p.lat_deg.to_radians();
        Self {
            lat_rad,
            lon_rad: p.lon_deg.to_radians(),
            cos_lat: lat_rad.cos(),
        }
    }
}

#[inline]
fn haversine_trig(a: &Trig, b: &Trig) -> f64 {
    let half_dlat = ((b.lat_rad - a.lat_rad) * 0.5).sin();
    let half_dlon = ((b.lon_rad - a.lon_rad) * 0.5).sin();
    let h = (half_dlat * half_dlat + a.cos_lat * b.cos_lat * half_dlon * half_dlon).clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_M * h.sqrt().atan2((1.0 - h).sqrt())
}

/// Great-circle distance in metres.
#[inline]
pub fn haversine_m(a: &GeoPoint, b: &GeoPoint) -> f64 {
    haversine_trig(&Trig::of(a), &Trig::of(b))
}

/// Centroid on the sphere: mean of unit vectors, renormalised.
pub fn spherical_centroid(points: &[GeoPoint]) -> Result<GeoPoint, GeoError> {
    match points {
        [] => Err(GeoError::EmptyInput),
        [only] => Ok(*only),
        _ => {
            let mut sum = [0.0f64; 3];
            for p in points {
                let v = p.unit_vector();
                sum[0] += v[0];
                sum[1] += v[1];
                sum[2] += v[2];
            }
            let n = points.len() as f64;
            let mean = [sum[0] / n, sum[1] / n, sum[2] / n];
            let norm = (mean[0] * mean[0] + mean[1] * mean[1] + mean[2] * mean[2]).sqrt();
            if norm < 1e-9 {
                return Err(GeoError::DegenerateCentroid { norm });
            }
            let lat = mean[2].atan2((mean[0] * mean[0] + mean[1] * mean[1]).sqrt());
            let lon = mean[1].atan2(mean[0]);
            Ok(GeoPoint::wrapped(lat.to_degrees(), lon.to_degrees()))
        }
    }
}

/// Running sum of unit vectors; yields the same centroid as
/// [`spherical_centroid`] without revisiting earlier points.
#[derive(Debug, Clone, Copy, Default)]
pub struct CentroidAccumulator {
    sum: [f64; 3],
    count: usize,
}

impl CentroidAccumulator {
    pub fn push(&mut self, p: &GeoPoint) {
        let v = p.unit_vector();
        self.sum[0] += v[0];
        self.sum[1] += v[1];
        self.sum[2] += v[2];
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn centroid(&self) -> Option<GeoPoint> {
        if self.count == 0 {
            return None;
        }
        let n = self.count as f64;
        let [x, y, z] = [self.sum[0] / n, self.sum[1] / n, self.sum[2] / n];
        if (x * x + y * y + z * z).sqrt() < 1e-9 {
            return None;
        }
        let lat = z.atan2((x * x + y * y).sqrt());
        Some(GeoPoint::wrapped(lat.to_degrees(), y.atan2(x).to_degrees()))
    }
}

/// Axis-aligned latitude/longitude box, inclusive on all edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat_deg: f64,
    pub max_lat_deg: f64,
    pub min_lon_deg: f64,
    pub max_lon_deg: f64,
}

impl BoundingBox {
    /// Envelope of the given points.
    pub fn envelope(points: &[GeoPoint]) -> Result<Self, GeoError> {
        let first = points.first().ok_or(GeoError::EmptyInput)?;
        let mut bbox = BoundingBox {
            min_lat_deg: first.lat_deg,
            max_lat_deg: first.lat_deg,
            min_lon_deg: first.lon_deg,
            max_lon_deg: first.lon_deg,
        };
        for p in &points[1..] {
            bbox.min_lat_deg = bbox.min_lat_deg.min(p.lat_deg);
            bbox.max_lat_deg = bbox.max_lat_deg.max(p.lat_deg);
            bbox.min_lon_deg = bbox.min_lon_deg.min(p.lon_deg);
            bbox.max_lon_deg = bbox.max_lon_deg.max(p.lon_deg);
        }
        Ok(bbox)
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        (self.min_lat_deg..=self.max_lat_deg).contains(&p.lat_deg)
            && (self.min_lon_deg..=self.max_lon_deg).contains(&p.lon_deg)
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint::wrapped(
            0.5 * (self.min_lat_deg + self.max_lat_deg),
            0.5 * (self.min_lon_deg + self.max_lon_deg),
        )
    }

    /// Corner-to-corner great-circle length, metres.
    pub fn diagonal_m(&self) -> f64 {
        haversine_m(
            &GeoPoint::wrapped(self.min_lat_deg, self.min_lon_deg),
            &GeoPoint::wrapped(self.max_lat_deg, self.max_lon_deg),
        )
    }
}

/// Envelope of `geometry`, grown by `buffer_m` on every side.
///
/// The longitude growth uses the cosine of the most poleward latitude of the
/// grown box, so every point within `buffer_m` of a vertex stays inside.
pub fn buffered_bbox(geometry: &[GeoPoint], buffer_m: f64) -> Result<BoundingBox, GeoError> {
    if !(buffer_m.is_finite() && buffer_m >= 0.0) {
        return Err(GeoError::InvalidBuffer(buffer_m));
    }
    let env = BoundingBox::envelope(geometry)?;
    for lat in [env.min_lat_deg, env.max_lat_deg] {
        if lat.abs() > 85.0 {
            return Err(GeoError::PoleProximity { lat_deg: lat });
        }
    }
    let dlat = buffer_m / METERS_PER_DEGREE;
    let min_lat = env.min_lat_deg - dlat;
    let max_lat = env.max_lat_deg + dlat;
    let poleward = min_lat.abs().max(max_lat.abs());
    if poleward > 85.0 {
        return Err(GeoError::PoleProximity { lat_deg: poleward });
    }
    let dlon = dlat / poleward.to_radians().cos();
    Ok(BoundingBox {
        min_lat_deg: min_lat,
        max_lat_deg: max_lat,
        min_lon_deg: env.min_lon_deg - dlon,
        max_lon_deg: env.max_lon_deg + dlon,
    })
}

/// Radius-query index over an immutable point list.
///
/// Points are bucketed into a uniform latitude/longitude grid. Small inputs,
/// queries near the poles or across the antimeridian, and queries whose
/// envelope spans more cells than are occupied fall back to a linear scan, so
/// results always equal a scan with [`haversine_m`].
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<GeoPoint>,
    trig: Vec<Trig>,
    grid: Option<Grid>,
}

#[derive(Debug, Clone)]
struct Grid {
    lat_step: f64,
    lon_step: f64,
    cells: HashMap<(i64, i64), Vec<u32>>,
}

impl Grid {
    #[inline]
    fn key(&self, lat: f64, lon: f64) -> (i64, i64) {
        (
            (lat / self.lat_step).floor() as i64,
            (lon / self.lon_step).floor() as i64,
        )
    }
}

impl SpatialIndex {
    /// Default grid cell edge, metres.
    pub const DEFAULT_CELL_M: f64 = 100.0;

    pub fn new(points: Vec<GeoPoint>) -> Self {
        Self::with_cell_size(points, Self::DEFAULT_CELL_M)
    }

    /// Builds an index whose cell edge is roughly `cell_m` metres; pass the
    /// typical query radius.
    pub fn with_cell_size(points: Vec<GeoPoint>, cell_m: f64) -> Self {
        let trig: Vec<Trig> = points.iter().map(Trig::of).collect();
        let grid = if points.len() < LINEAR_SCAN_BELOW || !(cell_m.is_finite() && cell_m > 0.0) {
            None
        } else {
            let max_abs_lat = points
                .iter()
                .map(|p| p.lat_deg.abs())
                .fold(0.0f64, f64::max)
                .min(85.0);
            let lat_step = cell_m / METERS_PER_DEGREE;
            let lon_step = (lat_step / max_abs_lat.to_radians().cos()).min(360.0);
            let mut grid = Grid {
                lat_step,
                lon_step,
                cells: HashMap::new(),
            };
            for (i, p) in points.iter().enumerate() {
                let key = grid.key(p.lat_deg, p.lon_deg);
                grid.cells.entry(key).or_default().push(i as u32);
            }
            Some(grid)
        };
        Self { points, trig, grid }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    /// Ordinals within `radius_m` (inclusive) of `center`, in unspecified order.
    pub fn range_query(&self, center: &GeoPoint, radius_m: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(center, radius_m, |i, _| out.push(i));
        out
    }

    /// Like [`range_query`](Self::range_query) but centred on an indexed point.
    pub fn neighbors_of(&self, ordinal: usize, radius_m: f64, out: &mut Vec<usize>) {
        out.clear();
        let center = self.points[ordinal];
        self.for_each_within(&center, radius_m, |i, _| out.push(i));
    }

    /// Calls `visit(ordinal, distance_m)` for every point within `radius_m`.
    pub fn for_each_within<F: FnMut(usize, f64)>(&self, center: &GeoPoint, radius_m: f64, mut visit: F) {
        if !(radius_m >= 0.0) {
            return;
        }
        let c = Trig::of(center);
        let mut check = |i: usize| {
            let d = haversine_trig(&c, &self.trig[i]);
            if d <= radius_m {
                visit(i, d);
            }
        };
        match self.grid.as_ref().and_then(|g| self.cell_span(g, center, radius_m)) {
            Some((grid, (lat_lo, lat_hi), (lon_lo, lon_hi))) => {
                for lat_key in lat_lo..=lat_hi {
                    for lon_key in lon_lo..=lon_hi {
                        if let Some(bucket) = grid.cells.get(&(lat_key, lon_key)) {
                            for &i in bucket {
                                check(i as usize);
                            }
                        }
                    }
                }
            }
            None => (0..self.points.len()).for_each(check),
        }
    }

    /// Grid cells covering the query cap, or `None` when a scan is required.
    #[allow(clippy::type_complexity)]
    fn cell_span<'a>(
        &self,
        grid: &'a Grid,
        center: &GeoPoint,
        radius_m: f64,
    ) -> Option<(&'a Grid, (i64, i64), (i64, i64))> {
        let theta = radius_m / EARTH_RADIUS_M;
        let dlat = theta.to_degrees() + ENVELOPE_SLACK_DEG;
        if center.lat_deg.abs() + dlat >= 89.0 {
            return None;
        }
        let cos_lat = center.lat_deg.to_radians().cos();
        let ratio = theta.sin() / cos_lat;
        if theta >= std::f64::consts::FRAC_PI_2 || ratio >= 1.0 {
            return None;
        }
        let dlon = ratio.asin().to_degrees() + ENVELOPE_SLACK_DEG;
        let (lon_min, lon_max) = (center.lon_deg - dlon, center.lon_deg + dlon);
        if lon_min < -180.0 || lon_max >= 180.0 {
            return None;
        }
        let lo = grid.key(center.lat_deg - dlat, lon_min);
        let hi = grid.key(center.lat_deg + dlat, lon_max);
        let span = (hi.0 - lo.0 + 1) as u128 * (hi.1 - lo.1 + 1) as u128;
        if span > grid.cells.len() as u128 * 2 {
            return None;
        }
        Some((grid, (lo.0, hi.0), (lo.1, hi.1)))
    }
}

/// Builds a [`SpatialIndex`] with the default cell size.
pub fn build_index(points: Vec<GeoPoint>) -> SpatialIndex {
    SpatialIndex::new(points)
}

/// Ordinals of indexed points within `radius_m` of `center`.
pub fn range_query(index: &SpatialIndex, center: &GeoPoint, radius_m: f64) -> Vec<usize> {
    index.range_query(center, radius_m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    /// Spherical law of cosines; independent of the haversine formulation.
    fn law_of_cosines_m(a: &GeoPoint, b: &GeoPoint) -> f64 {
        let (p1, p2) = (a.lat_deg().to_radians(), b.lat_deg().to_radians());
        let dl = (b.lon_deg() - a.lon_deg()).to_radians();
        let c = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).clamp(-1.0, 1.0);
        EARTH_RADIUS_M * c.acos()
    }

    fn random_point(rng: &mut ChaCha8Rng, center: GeoPoint, spread_deg: f64) -> GeoPoint {
        pt(
            center.lat_deg() + rng.random_range(-spread_deg..spread_deg),
            center.lon_deg() + rng.random_range(-spread_deg..spread_deg),
        )
    }

    #[test]
    fn rejects_out_of_range_coordinates() {
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, 180.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(GeoPoint::new(-90.0, -180.0).is_ok());
    }

    #[test]
    fn haversine_identity_and_degree() {
        let a = pt(39.3, -76.6);
        assert_eq!(haversine_m(&a, &a), 0.0);
        let d = haversine_m(&pt(0.0, 0.0), &pt(0.0, 1.0));
        let oracle = law_of_cosines_m(&pt(0.0, 0.0), &pt(0.0, 1.0));
        assert!((oracle - 111_194.93).abs() < 0.01, "oracle {oracle}");
        assert!((d - 111_194.93).abs() < 0.01, "haversine {d}");
    }

    #[test]
    fn haversine_symmetric_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let a = random_point(&mut rng, pt(0.0, 0.0), 80.0);
            let b = random_point(&mut rng, pt(0.0, 0.0), 80.0);
            assert_eq!(haversine_m(&a, &b), haversine_m(&b, &a));
        }
    }

    #[test]
    fn centroid_cases() {
        let p = pt(12.5, -3.25);
        assert_eq!(spherical_centroid(&[p]).unwrap(), p);
        let c = spherical_centroid(&[pt(0.0, -0.01), pt(0.0, 0.01)]).unwrap();
        assert!(c.lat_deg().abs() < 1e-9 && c.lon_deg().abs() < 1e-9);
        assert_eq!(spherical_centroid(&[]), Err(GeoError::EmptyInput));
        assert!(matches!(
            spherical_centroid(&[pt(0.0, 0.0), pt(0.0, -180.0)]),
            Err(GeoError::DegenerateCentroid { .. })
        ));
    }

    #[test]
    fn centroid_of_square_corners() {
        let origin = pt(39.3, -76.6);
        let corners: Vec<GeoPoint> = [(0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0)]
            .iter()
            .map(|&(e, n)| origin.offset_m(e, n))
            .collect();
        // brute-force vector mean
        let mut s = [0.0; 3];
        for c in &corners {
            let (la, lo) = (c.lat_deg().to_radians(), c.lon_deg().to_radians());
            s[0] += la.cos() * lo.cos();
            s[1] += la.cos() * lo.sin();
            s[2] += la.sin();
        }
        let expected = pt(
            s[2].atan2((s[0] * s[0] + s[1] * s[1]).sqrt()).to_degrees(),
            s[1].atan2(s[0]).to_degrees(),
        );
        let got = spherical_centroid(&corners).unwrap();
        assert!(haversine_m(&got, &expected) < 1e-6);
        assert!(haversine_m(&got, &origin.offset_m(50.0, 50.0)) < 0.5);
    }

    #[test]
    fn bbox_cases() {
        let p = pt(10.0, 20.0);
        let b = buffered_bbox(&[p], 0.0).unwrap();
        assert_eq!((b.min_lat_deg, b.max_lat_deg, b.min_lon_deg, b.max_lon_deg), (10.0, 10.0, 20.0, 20.0));

        let b = buffered_bbox(&[pt(0.0, 0.0)], 1000.0).unwrap();
        assert!((b.max_lat_deg - 1000.0 / 111_194.9).abs() < 1e-6);
        assert!((b.max_lat_deg - 0.008_993_2).abs() < 1e-6);

        let line = [pt(1.0, 2.0), pt(-0.5, 3.0), pt(0.25, 1.5)];
        let b = buffered_bbox(&line, 0.0).unwrap();
        let brute = (
            line.iter().map(|p| p.lat_deg()).fold(f64::INFINITY, f64::min),
            line.iter().map(|p| p.lat_deg()).fold(f64::NEG_INFINITY, f64::max),
            line.iter().map(|p| p.lon_deg()).fold(f64::INFINITY, f64::min),
            line.iter().map(|p| p.lon_deg()).fold(f64::NEG_INFINITY, f64::max),
        );
        assert_eq!((b.min_lat_deg, b.max_lat_deg, b.min_lon_deg, b.max_lon_deg), brute);

        assert_eq!(buffered_bbox(&[], 10.0), Err(GeoError::EmptyInput));
        assert!(matches!(buffered_bbox(&[pt(86.0, 0.0)], 10.0), Err(GeoError::PoleProximity { .. })));
        assert!(matches!(buffered_bbox(&[p], -1.0), Err(GeoError::InvalidBuffer(_))));
    }

    #[test]
    fn empty_index_returns_nothing() {
        let idx = build_index(vec![]);
        assert!(range_query(&idx, &pt(0.0, 0.0), 1e7).is_empty());
    }

    fn linear_scan(points: &[GeoPoint], center: &GeoPoint, r: f64) -> Vec<usize> {
        (0..points.len()).filter(|&i| haversine_m(&points[i], center) <= r).collect()
    }

    fn sorted(mut v: Vec<usize>) -> Vec<usize> {
        v.sort_unstable();
        v
    }

    #[test]
    fn index_matches_linear_scan_on_1000_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let center = pt(39.3, -76.6);
        let pts: Vec<GeoPoint> = (0..1000).map(|_| random_point(&mut rng, center, 0.05)).collect();
        let idx = SpatialIndex::with_cell_size(pts.clone(), 150.0);
        for _ in 0..50 {
            let q = random_point(&mut rng, center, 0.06);
            let r = rng.random_range(0.0..3000.0);
            assert_eq!(sorted(idx.range_query(&q, r)), linear_scan(&pts, &q, r));
        }
    }

    #[test]
    fn index_matches_linear_scan_over_seeds() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let center = pt(rng.random_range(-70.0..70.0), rng.random_range(-179.0..179.0));
            let n = rng.random_range(0..800);
            let spread = rng.random_range(0.001..0.5);
            let pts: Vec<GeoPoint> = (0..n).map(|_| random_point(&mut rng, center, spread)).collect();
            let idx = SpatialIndex::with_cell_size(pts.clone(), rng.random_range(5.0..2000.0));
            for _ in 0..5 {
                let q = random_point(&mut rng, center, spread);
                let r = rng.random_range(0.0..spread * 60_000.0);
                assert_eq!(sorted(idx.range_query(&q, r)), linear_scan(&pts, &q, r), "seed {seed}");
            }
        }
    }

    #[test]
    fn index_radius_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let center = pt(39.3, -76.6);
        let mut pts: Vec<GeoPoint> = (0..400).map(|_| random_point(&mut rng, center, 0.01)).collect();
        pts.push(pts[7]);
        pts.push(pts[7]);
        let idx = SpatialIndex::with_cell_size(pts.clone(), 50.0);

        let hits = sorted(idx.range_query(&pts[7], 0.0));
        assert_eq!(hits, vec![7, 400, 401]);

        let mut max_d: f64 = 0.0;
        for a in &pts {
            for b in &pts {
                max_d = max_d.max(haversine_m(a, b));
            }
        }
        assert_eq!(idx.range_query(&pts[0], 2.0 * max_d).len(), pts.len());

        // exact-boundary inclusion
        let r = haversine_m(&pts[3], &pts[9]);
        assert!(idx.range_query(&pts[3], r).contains(&9));
    }

    #[test]
    fn index_handles_antimeridian_and_poles() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut pts = Vec::new();
        for _ in 0..600 {
            pts.push(pt(rng.random_range(-10.0..10.0), rng.random_range(179.0..179.999)));
            pts.push(pt(rng.random_range(-10.0..10.0), rng.random_range(-180.0..-179.0)));
            pts.push(pt(rng.random_range(84.0..90.0), rng.random_range(-180.0..179.0)));
        }
        let idx = SpatialIndex::with_cell_size(pts.clone(), 1000.0);
        for q in [pt(0.0, 179.99), pt(0.0, -179.99), pt(89.5, 10.0)] {
            for r in [1_000.0, 50_000.0, 500_000.0] {
                assert_eq!(sorted(idx.range_query(&q, r)), linear_scan(&pts, &q, r));
            }
        }
    }

    #[test]
    fn destination_and_bearing_round_trip() {
        let a = pt(39.3, -76.6);
        for bearing in [0.0, 45.0, 90.0, 200.0, 359.0] {
            let b = a.destination(bearing, 1234.5);
            assert!((haversine_m(&a, &b) - 1234.5).abs() < 1e-6);
            let back = a.bearing_deg(&b);
            let diff = (back - bearing + 540.0).rem_euclid(360.0) - 180.0;
            assert!(diff.abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn triangle_inequality(a in (-89.0..89.0f64, -179.0..179.0f64),
                               b in (-89.0..89.0f64, -179.0..179.0f64),
                               c in (-89.0..89.0f64, -179.0..179.0f64)) {
            let (a, b, c) = (pt(a.0, a.1), pt(b.0, b.1), pt(c.0, c.1));
            prop_assert!(haversine_m(&a, &c) <= haversine_m(&a, &b) + haversine_m(&b, &c) + 1e-6);
        }

        #[test]
        fn range_query_monotone_in_radius(seed in 0u64..1000, r1 in 0.0..5000.0f64, r2 in 0.0..5000.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let center = pt(45.0, 7.0);
            let pts: Vec<GeoPoint> = (0..300).map(|_| random_point(&mut rng, center, 0.03)).collect();
            let idx = SpatialIndex::with_cell_size(pts, 200.0);
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let small = sorted(idx.range_query(&center, lo));
            let big = idx.range_query(&center, hi);
            prop_assert!(small.iter().all(|i| big.contains(i)));
        }

        #[test]
        fn buffered_bbox_contains_buffer(seed in 0u64..1000, buffer in 0.0..5000.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let center = pt(rng.random_range(-70.0..70.0), rng.random_range(-170.0..170.0));
            let verts: Vec<GeoPoint> = (0..rng.random_range(1..6)).map(|_| random_point(&mut rng, center, 0.1)).collect();
            let bbox = buffered_bbox(&verts, buffer).unwrap();
            for v in &verts {
                prop_assert!(bbox.contains(v));
                for _ in 0..20 {
                    let q = v.destination(rng.random_range(0.0..360.0), rng.random_range(0.0..buffer.max(f64::MIN_POSITIVE)));
                    prop_assert!(bbox.contains(&q), "{q} outside {bbox:?}");
                }
            }
        }

        #[test]
        fn centroid_permutation_invariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pts: Vec<GeoPoint> = (0..rng.random_range(2..30)).map(|_| random_point(&mut rng, pt(30.0, 30.0), 1.0)).collect();
            let a = spherical_centroid(&pts).unwrap();
            pts.reverse();
            pts.rotate_left(1);
            let b = spherical_centroid(&pts).unwrap();
            prop_assert!(haversine_m(&a, &b) < 1e-6);
        }
    }
}
