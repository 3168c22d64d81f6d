//! Source datasets (outages, vehicle pings, GIS assets), per-outage
//! spatiotemporal filtering, and the motion features that seed the
//! parameter search.
//!
//! File formats:
//!
//! * `outages.csv`: `outage_id,feeder_id,lat,lon,start_time_utc,end_time_utc,cause,customers_affected,crew_comment`
//! * `pings.csv`: `vehicle_id,time_utc,lat,lon`
//! * `assets.geojson`: FeatureCollection of Point/LineString features with
//!   properties `asset_id`, `kind` and optionally `voltage_class`, `feeder_id`.
//!
//! Timestamps are RFC 3339 / ISO-8601 in UTC with a `Z` suffix.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geo::{buffered_bbox, haversine_m, BoundingBox, CentroidAccumulator, GeoError, GeoPoint};

pub type Timestamp = DateTime<Utc>;

pub const OUTAGE_COLUMNS: [&str; 9] = [
    "outage_id",
    "feeder_id",
    "lat",
    "lon",
    "start_time_utc",
    "end_time_utc",
    "cause",
    "customers_affected",
    "crew_comment",
];
pub const PING_COLUMNS: [&str; 4] = ["vehicle_id", "time_utc", "lat", "lon"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid header: expected `{expected}`, found `{found}`")]
    InvalidHeader { expected: String, found: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("geojson: {0}")]
    Json(#[from] serde_json::Error),
    #[error("geojson: {0}")]
    NotFeatureCollection(String),
    #[error("feature {index}: unsupported geometry `{kind}`")]
    UnsupportedGeometry { index: usize, kind: String },
    #[error("feature {index}: missing asset_id")]
    MissingId { index: usize },
    #[error("feature {index}: {reason}")]
    BadFeature { index: usize, reason: String },
    #[error("invalid context config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// A rejected CSV row. `line` is 1-based and counts the header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedRow {
    pub line: u64,
    pub reason: String,
}

impl fmt::Display for MalformedRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

/// Records that parsed, plus every row that did not.
#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub errors: Vec<MalformedRow>,
}

impl<T> Parsed<T> {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageEvent {
    pub outage_id: String,
    pub feeder_id: String,
    pub reported_location: GeoPoint,
    pub start_time: Timestamp,
    pub end_time: Timestamp,
    pub cause: Option<String>,
    pub customers_affected: Option<u64>,
    pub crew_comment: Option<String>,
}

impl OutageEvent {
    pub fn duration_s(&self) -> f64 {
        seconds_between(self.start_time, self.end_time)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehiclePing {
    pub vehicle_id: String,
    pub time: Timestamp,
    pub position: GeoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetKind {
    FeederLine,
    Switch,
    Cutout,
    Substation,
    Other,
}

impl AssetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AssetKind::FeederLine => "feeder_line",
            AssetKind::Switch => "switch",
            AssetKind::Cutout => "cutout",
            AssetKind::Substation => "substation",
            AssetKind::Other => "other",
        }
    }

    /// Unknown kinds map to [`AssetKind::Other`].
    pub fn parse_lossy(s: &str) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "feeder_line" => AssetKind::FeederLine,
            "switch" => AssetKind::Switch,
            "cutout" => AssetKind::Cutout,
            "substation" => AssetKind::Substation,
            _ => AssetKind::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetFeature {
    pub asset_id: String,
    pub kind: AssetKind,
    pub voltage_class: Option<String>,
    pub feeder_id: Option<String>,
    /// One vertex for devices, two or more for lines.
    pub geometry: Vec<GeoPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextConfig {
    pub pad_before_s: f64,
    pub pad_after_s: f64,
    pub bbox_buffer_m: f64,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            pad_before_s: 0.0,
            pad_after_s: 1800.0,
            bbox_buffer_m: 500.0,
        }
    }
}

/// Working set for one outage: pings inside its time window and bounding
/// box, and the assets inside the box.
#[derive(Debug, Clone, PartialEq)]
pub struct OutageContext {
    pub outage: OutageEvent,
    pub pings: Vec<VehiclePing>,
    pub assets: Vec<AssetFeature>,
    pub bbox: BoundingBox,
    pub window: (Timestamp, Timestamp),
    /// Set when no feeder assets were found and the box was built around the
    /// reported location alone.
    pub feeder_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotionFeature {
    pub vehicle_id: String,
    pub from_time: Timestamp,
    pub to_time: Timestamp,
    pub gap_s: f64,
    pub step_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StayPoint {
    pub vehicle_id: String,
    pub centroid: GeoPoint,
    pub arrive: Timestamp,
    pub depart: Timestamp,
    pub dwell_s: f64,
}

pub fn seconds_between(from: Timestamp, to: Timestamp) -> f64 {
    (to - from).num_milliseconds() as f64 / 1000.0
}

pub fn format_timestamp(t: &Timestamp) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn parse_timestamp(s: &str) -> Result<Timestamp, String> {
    let s = s.trim();
    if !s.ends_with('Z') {
        return Err(format!("timestamp `{s}` must be UTC with a Z suffix"));
    }
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("timestamp `{s}`: {e}"))
}

pub(crate) fn add_seconds(t: Timestamp, s: f64) -> Timestamp {
    t + chrono::Duration::milliseconds((s * 1000.0).round() as i64)
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<(), IngestError> {
    let found = reader.headers()?;
    let ok = found.len() == expected.len() && found.iter().zip(expected).all(|(a, b)| a.trim() == *b);
    if ok {
        Ok(())
    } else {
        Err(IngestError::InvalidHeader {
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        })
    }
}

fn csv_reader(input: impl Read) -> csv::Reader<impl Read> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input)
}

fn optional(field: &str) -> Option<String> {
    let t = field.trim();
    (!t.is_empty()).then(|| field.to_string())
}

fn parse_f64(field: &str, name: &str) -> Result<f64, String> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| format!("{name} `{field}` is not a number"))
}

pub(crate) fn parse_point(lat: &str, lon: &str) -> Result<GeoPoint, String> {
    let (lat, lon) = (parse_f64(lat, "lat")?, parse_f64(lon, "lon")?);
    GeoPoint::new(lat, lon).map_err(|e| e.to_string())
}

/// Header-checked CSV parse with per-row error collection.
pub(crate) fn parse_csv_rows<T>(
    input: impl Read,
    columns: &[&str],
    mut row_fn: impl FnMut(&csv::StringRecord) -> Result<T, String>,
) -> Result<Parsed<T>, IngestError> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, columns)?;
    let mut parsed = Parsed {
        records: Vec::new(),
        errors: Vec::new(),
    };
    for result in reader.records() {
        let outcome = result.map_err(|e| (e.position().map(|p| p.line()).unwrap_or(0), e.to_string())).and_then(|row| {
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            if row.len() != columns.len() {
                return Err((line, format!("expected {} fields, found {}", columns.len(), row.len())));
            }
            row_fn(&row).map_err(|reason| (line, reason))
        });
        match outcome {
            Ok(v) => parsed.records.push(v),
            Err((line, reason)) => parsed.errors.push(MalformedRow { line, reason }),
        }
    }
    Ok(parsed)
}

/// Parses `outages.csv`. Only a bad header fails the whole file.
pub fn parse_outages(input: impl Read) -> Result<Parsed<OutageEvent>, IngestError> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, &OUTAGE_COLUMNS)?;
    let mut parsed = Parsed {
        records: Vec::new(),
        errors: Vec::new(),
    };
    let mut seen = HashSet::new();
    for result in reader.records() {
        let row = match result {
            Ok(row) => row,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                parsed.errors.push(MalformedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let outcome = (|| -> Result<OutageEvent, String> {
            if row.len() != OUTAGE_COLUMNS.len() {
                return Err(format!("expected {} fields, found {}", OUTAGE_COLUMNS.len(), row.len()));
            }
            let outage_id = row[0].trim().to_string();
            if outage_id.is_empty() {
                return Err("empty outage_id".into());
            }
            let start_time = parse_timestamp(&row[4])?;
            let end_time = parse_timestamp(&row[5])?;
            if end_time <= start_time {
                return Err("end_time_utc must be after start_time_utc".into());
            }
            let customers_affected = match row[7].trim() {
                "" => None,
                v => Some(v.parse::<u64>().map_err(|_| format!("customers_affected `{v}` is not a non-negative integer"))?),
            };
            Ok(OutageEvent {
                outage_id,
                feeder_id: row[1].trim().to_string(),
                reported_location: parse_point(&row[2], &row[3])?,
                start_time,
                end_time,
                cause: optional(&row[6]),
                customers_affected,
                crew_comment: optional(&row[8]),
            })
        })();
        match outcome {
            Ok(ev) if !seen.insert(ev.outage_id.clone()) => parsed.errors.push(MalformedRow {
                line,
                reason: format!("duplicate outage_id `{}`", ev.outage_id),
            }),
            Ok(ev) => parsed.records.push(ev),
            Err(reason) => parsed.errors.push(MalformedRow { line, reason }),
        }
    }
    Ok(parsed)
}

/// Parses `pings.csv`. Rows may be in any order.
pub fn parse_pings(input: impl Read) -> Result<Parsed<VehiclePing>, IngestError> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, &PING_COLUMNS)?;
    let mut parsed = Parsed {
        records: Vec::new(),
        errors: Vec::new(),
    };
    for result in reader.records() {
        let row = match result {
            Ok(row) => row,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                parsed.errors.push(MalformedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let outcome = (|| -> Result<VehiclePing, String> {
            if row.len() != PING_COLUMNS.len() {
                return Err(format!("expected {} fields, found {}", PING_COLUMNS.len(), row.len()));
            }
            let vehicle_id = row[0].trim().to_string();
            if vehicle_id.is_empty() {
                return Err("empty vehicle_id".into());
            }
            Ok(VehiclePing {
                vehicle_id,
                time: parse_timestamp(&row[1])?,
                position: parse_point(&row[2], &row[3])?,
            })
        })();
        match outcome {
            Ok(p) => parsed.records.push(p),
            Err(reason) => parsed.errors.push(MalformedRow { line, reason }),
        }
    }
    Ok(parsed)
}

pub fn write_outages(out: impl Write, outages: &[OutageEvent]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(OUTAGE_COLUMNS)?;
    for o in outages {
        w.write_record([
            o.outage_id.clone(),
            o.feeder_id.clone(),
            o.reported_location.lat_deg().to_string(),
            o.reported_location.lon_deg().to_string(),
            format_timestamp(&o.start_time),
            format_timestamp(&o.end_time),
            o.cause.clone().unwrap_or_default(),
            o.customers_affected.map(|c| c.to_string()).unwrap_or_default(),
            o.crew_comment.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pings(out: impl Write, pings: &[VehiclePing]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PING_COLUMNS)?;
    for p in pings {
        w.write_record([
            p.vehicle_id.as_str(),
            &format_timestamp(&p.time),
            &p.position.lat_deg().to_string(),
            &p.position.lon_deg().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn coord_pair(v: &Value) -> Option<GeoPoint> {
    let arr = v.as_array()?;
    let (lon, lat) = (arr.first()?.as_f64()?, arr.get(1)?.as_f64()?);
    GeoPoint::new(lat, lon).ok()
}

/// Parses an asset FeatureCollection.
pub fn parse_assets(input: impl Read) -> Result<Vec<AssetFeature>, IngestError> {
    let doc: Value = serde_json::from_reader(input)?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(IngestError::NotFeatureCollection("top-level type must be FeatureCollection".into()));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| IngestError::NotFeatureCollection("missing features array".into()))?;
    let mut assets = Vec::with_capacity(features.len());
    for (index, f) in features.iter().enumerate() {
        let bad = |reason: &str| IngestError::BadFeature {
            index,
            reason: reason.to_string(),
        };
        let props = f.get("properties").and_then(Value::as_object);
        let prop_str = |key: &str| -> Option<String> {
            props
                .and_then(|p| p.get(key))
                .and_then(|v| match v {
                    Value::String(s) => Some(s.clone()),
                    Value::Number(n) => Some(n.to_string()),
                    _ => None,
                })
                .filter(|s| !s.trim().is_empty())
        };
        let asset_id = prop_str("asset_id").ok_or(IngestError::MissingId { index })?;
        let geometry = f.get("geometry").ok_or_else(|| bad("missing geometry"))?;
        let gtype = geometry.get("type").and_then(Value::as_str).unwrap_or("");
        let coords = geometry.get("coordinates").ok_or_else(|| bad("missing coordinates"))?;
        let vertices = match gtype {
            "Point" => vec![coord_pair(coords).ok_or_else(|| bad("invalid Point coordinates"))?],
            "LineString" => {
                let verts = coords
                    .as_array()
                    .ok_or_else(|| bad("invalid LineString coordinates"))?
                    .iter()
                    .map(coord_pair)
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| bad("invalid LineString vertex"))?;
                if verts.len() < 2 {
                    return Err(bad("LineString needs at least two vertices"));
                }
                verts
            }
            other => {
                return Err(IngestError::UnsupportedGeometry {
                    index,
                    kind: other.to_string(),
                })
            }
        };
        assets.push(AssetFeature {
            asset_id,
            kind: AssetKind::parse_lossy(&prop_str("kind").unwrap_or_default()),
            voltage_class: prop_str("voltage_class"),
            feeder_id: prop_str("feeder_id"),
            geometry: vertices,
        });
    }
    Ok(assets)
}

pub(crate) fn lon_lat(p: &GeoPoint) -> Value {
    json!([p.lon_deg(), p.lat_deg()])
}

/// GeoJSON geometry for a vertex list: Point for one vertex, LineString otherwise.
pub(crate) fn geometry_json(vertices: &[GeoPoint]) -> Value {
    match vertices {
        [p] => json!({"type": "Point", "coordinates": lon_lat(p)}),
        _ => json!({"type": "LineString", "coordinates": vertices.iter().map(lon_lat).collect::<Vec<_>>()}),
    }
}

pub fn assets_to_geojson(assets: &[AssetFeature]) -> Value {
    let features: Vec<Value> = assets
        .iter()
        .map(|a| {
            let mut props = serde_json::Map::new();
            props.insert("asset_id".into(), json!(a.asset_id));
            props.insert("kind".into(), json!(a.kind.as_str()));
            if let Some(v) = &a.voltage_class {
                props.insert("voltage_class".into(), json!(v));
            }
            if let Some(f) = &a.feeder_id {
                props.insert("feeder_id".into(), json!(f));
            }
            json!({"type": "Feature", "geometry": geometry_json(&a.geometry), "properties": props})
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

pub fn write_assets(out: impl Write, assets: &[AssetFeature]) -> Result<(), IngestError> {
    serde_json::to_writer_pretty(out, &assets_to_geojson(assets))?;
    Ok(())
}

/// Joins one outage with the pings and assets relevant to it.
///
/// The time window is `[start - pad_before, end + pad_after]`. The box is the
/// envelope of the outage's feeder assets plus its reported location, grown
/// by `bbox_buffer_m`; without feeder assets it surrounds the reported
/// location alone.
pub fn assemble_context(
    outage: &OutageEvent,
    pings: &[VehiclePing],
    assets: &[AssetFeature],
    cfg: &ContextConfig,
) -> Result<OutageContext, IngestError> {
    for (name, v) in [
        ("pad_before_s", cfg.pad_before_s),
        ("pad_after_s", cfg.pad_after_s),
        ("bbox_buffer_m", cfg.bbox_buffer_m),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(IngestError::InvalidConfig(format!("{name} must be a non-negative number, got {v}")));
        }
    }
    let window = (
        add_seconds(outage.start_time, -cfg.pad_before_s),
        add_seconds(outage.end_time, cfg.pad_after_s),
    );
    let mut geometry: Vec<GeoPoint> = assets
        .iter()
        .filter(|a| a.feeder_id.as_deref() == Some(outage.feeder_id.as_str()))
        .flat_map(|a| a.geometry.iter().copied())
        .collect();
    let feeder_fallback = geometry.is_empty();
    if feeder_fallback {
        log::warn!(
            "outage {}: no assets for feeder `{}`; box built around reported location",
            outage.outage_id,
            outage.feeder_id
        );
    }
    geometry.push(outage.reported_location);
    let bbox = buffered_bbox(&geometry, cfg.bbox_buffer_m)?;

    let pings = pings
        .iter()
        .filter(|p| p.time >= window.0 && p.time <= window.1)
        .filter(|p| bbox.contains(&p.position))
        .cloned()
        .collect();
    let assets = assets
        .iter()
        .filter(|a| a.geometry.iter().any(|v| bbox.contains(v)))
        .cloned()
        .collect();
    Ok(OutageContext {
        outage: outage.clone(),
        pings,
        assets,
        bbox,
        window,
        feeder_fallback,
    })
}

/// Pings grouped per vehicle, time-ordered, with repeated timestamps
/// removed (first occurrence kept).
pub(crate) fn tracks_by_vehicle<'a>(
    pings: impl IntoIterator<Item = &'a VehiclePing>,
) -> BTreeMap<&'a str, Vec<&'a VehiclePing>> {
    let mut tracks: BTreeMap<&str, Vec<&VehiclePing>> = BTreeMap::new();
    for p in pings {
        tracks.entry(p.vehicle_id.as_str()).or_default().push(p);
    }
    for (vehicle, track) in tracks.iter_mut() {
        track.sort_by_key(|p| p.time);
        let before = track.len();
        track.dedup_by_key(|p| p.time);
        if track.len() < before {
            log::warn!("vehicle {vehicle}: dropped {} duplicate-timestamp pings", before - track.len());
        }
    }
    tracks
}

/// Time gap and distance between consecutive pings of each vehicle.
pub fn motion_features(pings: &[VehiclePing]) -> Vec<MotionFeature> {
    let mut out = Vec::new();
    for (vehicle, track) in tracks_by_vehicle(pings) {
        for pair in track.windows(2) {
            let gap_s = seconds_between(pair[0].time, pair[1].time);
            if gap_s <= 0.0 {
                continue;
            }
            out.push(MotionFeature {
                vehicle_id: vehicle.to_string(),
                from_time: pair[0].time,
                to_time: pair[1].time,
                gap_s,
                step_m: haversine_m(&pair[0].position, &pair[1].position),
            });
        }
    }
    out
}

/// Stay points of one time-ordered track.
pub(crate) fn track_stay_points(vehicle: &str, track: &[&VehiclePing], max_roam_m: f64, min_dwell_s: f64) -> Vec<StayPoint> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut acc = CentroidAccumulator::default();
    let emit = |from: usize, to: usize, acc: &CentroidAccumulator, out: &mut Vec<StayPoint>| {
        let (arrive, depart) = (track[from].time, track[to].time);
        let dwell_s = seconds_between(arrive, depart);
        if dwell_s >= min_dwell_s && dwell_s > 0.0 {
            if let Some(centroid) = acc.centroid() {
                out.push(StayPoint {
                    vehicle_id: vehicle.to_string(),
                    centroid,
                    arrive,
                    depart,
                    dwell_s,
                });
            }
        }
    };
    for (i, p) in track.iter().enumerate() {
        let inside = acc
            .centroid()
            .map(|c| haversine_m(&c, &p.position) <= max_roam_m)
            .unwrap_or(true);
        if !inside {
            emit(start, i - 1, &acc, &mut out);
            start = i;
            acc = CentroidAccumulator::default();
        }
        acc.push(&p.position);
    }
    if !track.is_empty() {
        emit(start, track.len() - 1, &acc, &mut out);
    }
    out
}

/// Runs where a vehicle stays within `max_roam_m` of the run's running
/// centroid for at least `min_dwell_s`. Ordered by vehicle, then time.
pub fn stay_points(pings: &[VehiclePing], max_roam_m: f64, min_dwell_s: f64) -> Vec<StayPoint> {
    tracks_by_vehicle(pings)
        .into_iter()
        .flat_map(|(vehicle, track)| track_stay_points(vehicle, &track, max_roam_m, min_dwell_s))
        .collect()
}

/// Step-distance histogram. Steps beyond `max_m` land in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceHistogram {
    pub bin_m: f64,
    pub max_m: f64,
    pub counts: Vec<u64>,
}

impl DistanceHistogram {
    /// Lower edge of bin `i`, metres.
    pub fn bin_start(&self, i: usize) -> f64 {
        i as f64 * self.bin_m
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn distance_histogram(features: &[MotionFeature], bin_m: f64, max_m: f64) -> DistanceHistogram {
    assert!(bin_m > 0.0 && bin_m.is_finite(), "bin_m must be positive");
    let bins = ((max_m / bin_m).ceil() as usize).max(1);
    let mut counts = vec![0u64; bins];
    for f in features {
        let idx = ((f.step_m.min(max_m) / bin_m).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    DistanceHistogram { bin_m, max_m, counts }
}

/// Ping count per outage, largest first; ties by outage id.
pub fn ping_count_report(contexts: &[OutageContext]) -> Vec<(String, usize)> {
    let mut rows: Vec<(String, usize)> = contexts
        .iter()
        .map(|c| (c.outage.outage_id.clone(), c.pings.len()))
        .collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    rows
}
