//! Scoring predictions against ground truth, the predictions/report CSV
//! formats, and per-outage GeoJSON layer bundles.
//!
//! `predictions.csv`:
//! `outage_id,lat,lon,confidence,eps_m,min_pts,cluster_points,unique_vehicles,clustered_count,noise_count,rounds_run,seed,failure_reason`.
//! Rows for failed outages leave every field but `outage_id`, `seed` and
//! `failure_reason` empty.
//!
//! Report CSV: `outage_id,hit,error_m,confidence,failure_reason`, one row per
//! outage, then a footer
//! `#summary,n_outages,n_predicted,n_hits,hit_rate,mean_error_m,median_error_m,p90_error_m`.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde_json::{json, Value};
use thiserror::Error;

use crate::cluster::{ClusterAssignment, Label};
use crate::geo::{haversine_m, GeoPoint};
use crate::ingest::{
    format_timestamp, geometry_json, lon_lat, parse_csv_rows, parse_point, IngestError, OutageContext, Parsed,
};
use crate::optimize::{OptimizeError, Prediction};
use crate::synth::GroundTruth;

pub const DEFAULT_HIT_RADIUS_M: f64 = 100.0;
/// Failure reason for outages that have no prediction row at all.
pub const NO_PREDICTION: &str = "no_prediction";

pub const PREDICTION_COLUMNS: [&str; 13] = [
    "outage_id",
    "lat",
    "lon",
    "confidence",
    "eps_m",
    "min_pts",
    "cluster_points",
    "unique_vehicles",
    "clustered_count",
    "noise_count",
    "rounds_run",
    "seed",
    "failure_reason",
];
pub const REPORT_COLUMNS: [&str; 5] = ["outage_id", "hit", "error_m", "confidence", "failure_reason"];
const SUMMARY_TAG: &str = "#summary";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("prediction for unknown outage `{0}`")]
    UnknownOutage(String),
    #[error("more than one prediction for outage `{0}`")]
    DuplicatePrediction(String),
    #[error("hit radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
}

/// Successful fields of a prediction row.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedFields {
    pub location: GeoPoint,
    pub confidence: f64,
    pub eps_m: f64,
    pub min_pts: usize,
    pub cluster_points: usize,
    pub unique_vehicles: usize,
    pub clustered_count: usize,
    pub noise_count: usize,
    pub rounds_run: usize,
}

/// One line of `predictions.csv`: a prediction or the reason there is none.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub outage_id: String,
    pub seed: u64,
    pub outcome: Result<PredictedFields, String>,
}

impl PredictionRecord {
    pub fn from_result(outage_id: &str, seed: u64, result: &Result<Prediction, OptimizeError>) -> Self {
        let outcome = match result {
            Ok(p) => Ok(PredictedFields {
                location: p.location,
                confidence: p.confidence,
                eps_m: p.params.eps_m,
                min_pts: p.params.min_pts,
                cluster_points: p.cluster.point_count,
                unique_vehicles: p.cluster.unique_vehicles,
                clustered_count: p.clustered_count,
                noise_count: p.noise_count,
                rounds_run: p.rounds_run,
            }),
            Err(e) => Err(e.reason().to_string()),
        };
        Self {
            outage_id: outage_id.to_string(),
            seed,
            outcome,
        }
    }

    pub fn location(&self) -> Option<GeoPoint> {
        self.outcome.as_ref().ok().map(|f| f.location)
    }
}

impl From<&Prediction> for PredictionRecord {
    fn from(p: &Prediction) -> Self {
        Self::from_result(&p.outage_id, p.seed, &Ok(p.clone()))
    }
}

pub fn write_predictions(out: impl Write, rows: &[PredictionRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PREDICTION_COLUMNS)?;
    for r in rows {
        let seed = r.seed.to_string();
        match &r.outcome {
            Ok(f) => w.write_record([
                r.outage_id.clone(),
                f.location.lat_deg().to_string(),
                f.location.lon_deg().to_string(),
                f.confidence.to_string(),
                f.eps_m.to_string(),
                f.min_pts.to_string(),
                f.cluster_points.to_string(),
                f.unique_vehicles.to_string(),
                f.clustered_count.to_string(),
                f.noise_count.to_string(),
                f.rounds_run.to_string(),
                seed,
                String::new(),
            ])?,
            Err(reason) => {
                let mut rec = vec![r.outage_id.clone()];
                rec.extend(std::iter::repeat_n(String::new(), 10));
                rec.push(seed);
                rec.push(reason.clone());
                w.write_record(rec)?
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn num<T: std::str::FromStr>(field: &str, name: &str) -> Result<T, String> {
    field.trim().parse().map_err(|_| format!("{name} `{field}` is not valid"))
}

pub fn parse_predictions(input: impl Read) -> Result<Parsed<PredictionRecord>, IngestError> {
    parse_csv_rows(input, &PREDICTION_COLUMNS, |row| {
        let outage_id = row[0].trim();
        if outage_id.is_empty() {
            return Err("empty outage_id".into());
        }
        let seed = num(&row[11], "seed")?;
        let reason = row[12].trim();
        let outcome = if reason.is_empty() {
            Ok(PredictedFields {
                location: parse_point(&row[1], &row[2])?,
                confidence: num(&row[3], "confidence")?,
                eps_m: num(&row[4], "eps_m")?,
                min_pts: num(&row[5], "min_pts")?,
                cluster_points: num(&row[6], "cluster_points")?,
                unique_vehicles: num(&row[7], "unique_vehicles")?,
                clustered_count: num(&row[8], "clustered_count")?,
                noise_count: num(&row[9], "noise_count")?,
                rounds_run: num(&row[10], "rounds_run")?,
            })
        } else {
            Err(reason.to_string())
        };
        Ok(PredictionRecord {
            outage_id: outage_id.to_string(),
            seed,
            outcome,
        })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub outage_id: String,
    pub error_m: Option<f64>,
    pub hit: bool,
    pub confidence: Option<f64>,
    pub failure_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_outages: usize,
    pub n_predicted: usize,
    pub n_hits: usize,
    pub hit_rate: f64,
    pub mean_error_m: Option<f64>,
    pub median_error_m: Option<f64>,
    pub p90_error_m: Option<f64>,
    /// Sorted by outage id.
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn from_rows(mut rows: Vec<EvalRow>) -> Self {
        rows.sort_by(|a, b| a.outage_id.cmp(&b.outage_id));
        let mut errors: Vec<f64> = rows.iter().filter_map(|r| r.error_m).collect();
        errors.sort_by(f64::total_cmp);
        let n_hits = rows.iter().filter(|r| r.hit).count();
        let n_outages = rows.len();
        Self {
            n_outages,
            n_predicted: errors.len(),
            n_hits,
            hit_rate: if n_outages == 0 { 0.0 } else { n_hits as f64 / n_outages as f64 },
            mean_error_m: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
            median_error_m: quantile_sorted(&errors, 0.5),
            p90_error_m: quantile_sorted(&errors, 0.9),
            rows,
        }
    }

    pub fn summary_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.2}"));
        format!(
            "hit_rate={:.4} n_outages={} n_predicted={} n_hits={} mean_error_m={} median_error_m={} p90_error_m={}",
            self.hit_rate,
            self.n_outages,
            self.n_predicted,
            self.n_hits,
            opt(self.mean_error_m),
            opt(self.median_error_m),
            opt(self.p90_error_m)
        )
    }
}

/// Linear-interpolation quantile of ascending values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Scores every truth record. Outages without a successful prediction are misses.
pub fn evaluate(
    predictions: &[PredictionRecord],
    truths: &[GroundTruth],
    hit_radius_m: f64,
) -> Result<EvalReport, EvalError> {
    if !(hit_radius_m.is_finite() && hit_radius_m > 0.0) {
        return Err(EvalError::InvalidRadius(hit_radius_m));
    }
    let truth_ids: HashSet<&str> = truths.iter().map(|t| t.outage_id.as_str()).collect();
    let mut by_id: BTreeMap<&str, &PredictionRecord> = BTreeMap::new();
    for p in predictions {
        if !truth_ids.contains(p.outage_id.as_str()) {
            return Err(EvalError::UnknownOutage(p.outage_id.clone()));
        }
        if by_id.insert(&p.outage_id, p).is_some() {
            return Err(EvalError::DuplicatePrediction(p.outage_id.clone()));
        }
    }
    let rows = truths
        .iter()
        .map(|t| match by_id.get(t.outage_id.as_str()).map(|p| &p.outcome) {
            Some(Ok(f)) => {
                let error = haversine_m(&f.location, &t.true_location);
                EvalRow {
                    outage_id: t.outage_id.clone(),
                    error_m: Some(error),
                    hit: error <= hit_radius_m,
                    confidence: Some(f.confidence),
                    failure_reason: None,
                }
            }
            other => EvalRow {
                outage_id: t.outage_id.clone(),
                error_m: None,
                hit: false,
                confidence: None,
                failure_reason: Some(match other {
                    Some(Err(reason)) => reason.clone(),
                    _ => NO_PREDICTION.to_string(),
                }),
            },
        })
        .collect();
    Ok(EvalReport::from_rows(rows))
}

pub fn report_to_csv(report: &EvalReport, out: impl Write) -> Result<(), IngestError> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in &report.rows {
        w.write_record([
            r.outage_id.clone(),
            r.hit.to_string(),
            opt(r.error_m),
            opt(r.confidence),
            r.failure_reason.clone().unwrap_or_default(),
        ])?;
    }
    w.write_record([
        SUMMARY_TAG.to_string(),
        report.n_outages.to_string(),
        report.n_predicted.to_string(),
        report.n_hits.to_string(),
        format!("{:.4}", report.hit_rate),
        opt(report.mean_error_m),
        opt(report.median_error_m),
        opt(report.p90_error_m),
    ])?;
    w.flush()?;
    Ok(())
}

/// Parses a report written by [`report_to_csv`]; summary fields are recomputed from the rows.
pub fn parse_report_csv(input: impl Read) -> Result<EvalReport, IngestError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().ne(REPORT_COLUMNS) {
        return Err(IngestError::InvalidHeader {
            expected: REPORT_COLUMNS.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.get(0) == Some(SUMMARY_TAG) {
            continue;
        }
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| IngestError::BadFeature {
            index: line as usize,
            reason,
        };
        if rec.len() != REPORT_COLUMNS.len() {
            return Err(bad(format!("expected {} fields, found {}", REPORT_COLUMNS.len(), rec.len())));
        }
        let opt = |i: usize| -> Result<Option<f64>, IngestError> {
            match rec[i].trim() {
                "" => Ok(None),
                v => v.parse().map(Some).map_err(|_| bad(format!("`{v}` is not a number"))),
            }
        };
        rows.push(EvalRow {
            outage_id: rec[0].to_string(),
            hit: rec[1].parse().map_err(|_| bad(format!("hit `{}` is not a bool", &rec[1])))?,
            error_m: opt(2)?,
            confidence: opt(3)?,
            failure_reason: Some(rec[4].to_string()).filter(|s| !s.is_empty()),
        });
    }
    Ok(EvalReport::from_rows(rows))
}

/// GeoJSON FeatureCollection of one outage's review layers.
///
/// Each feature has a `layer` property: `reported_outage`, `ping_cluster`,
/// `ping_noise`, `predicted_centroid` or `asset`.
pub fn export_layers(context: &OutageContext, prediction: Option<&Prediction>, assignment: &ClusterAssignment) -> Value {
    assert_eq!(
        assignment.labels.len(),
        context.pings.len(),
        "assignment must be aligned with the context pings"
    );
    let outage = &context.outage;
    let point = |p: &GeoPoint| json!({"type": "Point", "coordinates": lon_lat(p)});
    let mut features = vec![json!({
        "type": "Feature",
        "geometry": point(&outage.reported_location),
        "properties": {
            "layer": "reported_outage",
            "outage_id": outage.outage_id,
            "feeder_id": outage.feeder_id,
            "start_time": format_timestamp(&outage.start_time),
            "end_time": format_timestamp(&outage.end_time),
        },
    })];
    if let Some(p) = prediction {
        features.push(json!({
            "type": "Feature",
            "geometry": point(&p.location),
            "properties": {
                "layer": "predicted_centroid",
                "outage_id": p.outage_id,
                "confidence": p.confidence,
                "eps_m": p.params.eps_m,
                "min_pts": p.params.min_pts,
                "cluster": p.cluster.cluster_ordinal,
                "point_count": p.cluster.point_count,
                "unique_vehicles": p.cluster.unique_vehicles,
            },
        }));
    }
    for (ping, label) in context.pings.iter().zip(&assignment.labels) {
        let (layer, cluster) = match label {
            Label::Cluster(c) => ("ping_cluster", json!(c)),
            Label::Noise => ("ping_noise", Value::Null),
        };
        features.push(json!({
            "type": "Feature",
            "geometry": point(&ping.position),
            "properties": {
                "layer": layer,
                "vehicle_id": ping.vehicle_id,
                "time": format_timestamp(&ping.time),
                "cluster": cluster,
            },
        }));
    }
    for a in &context.assets {
        features.push(json!({
            "type": "Feature",
            "geometry": geometry_json(&a.geometry),
            "properties": {
                "layer": "asset",
                "asset_id": a.asset_id,
                "kind": a.kind.as_str(),
                "voltage_class": a.voltage_class,
            },
        }));
    }
    json!({"type": "FeatureCollection", "features": features})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{dbscan, DbscanParams};
    use crate::ingest::{assemble_context, AssetFeature, AssetKind, ContextConfig, OutageEvent, VehiclePing};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn truth(id: &str, p: GeoPoint) -> GroundTruth {
        GroundTruth {
            outage_id: id.into(),
            true_location: p,
        }
    }

    fn predicted(id: &str, p: GeoPoint, confidence: f64) -> PredictionRecord {
        PredictionRecord {
            outage_id: id.into(),
            seed: 0,
            outcome: Ok(PredictedFields {
                location: p,
                confidence,
                eps_m: 40.0,
                min_pts: 5,
                cluster_points: 100,
                unique_vehicles: 2,
                clustered_count: 100,
                noise_count: 7,
                rounds_run: 3,
            }),
        }
    }

    #[test]
    fn exact_hit() {
        let p = pt(39.0, -76.0);
        let r = evaluate(&[predicted("A", p, 0.9)], &[truth("A", p)], 100.0).unwrap();
        assert_eq!(r.n_hits, 1);
        assert_eq!(r.rows[0].error_m, Some(0.0));
        assert!(r.rows[0].hit);
        assert_eq!(r.hit_rate, 1.0);
    }

    #[test]
    fn counts_180_of_232() {
        let origin = pt(39.0, -76.0);
        let mut truths = Vec::new();
        let mut preds = Vec::new();
        for i in 0..232 {
            let id = format!("O{i:03}");
            truths.push(truth(&id, origin));
            let off = if i < 180 { 50.0 } else { 500.0 };
            preds.push(predicted(&id, origin.offset_m(off, 0.0), 0.5));
        }
        let r = evaluate(&preds, &truths, 100.0).unwrap();
        assert_eq!(r.n_hits, 180);
        assert!((r.hit_rate - 0.7759).abs() < 1e-4);
        assert!(r.summary_line().starts_with("hit_rate=0.7759"));
    }

    #[test]
    fn empty_predictions_are_misses() {
        let truths: Vec<_> = (0..5).map(|i| truth(&format!("T{i}"), pt(10.0, 10.0))).collect();
        let r = evaluate(&[], &truths, 100.0).unwrap();
        assert_eq!(r.hit_rate, 0.0);
        assert_eq!(r.rows.len(), 5);
        assert!(r.rows.iter().all(|row| row.failure_reason.as_deref() == Some(NO_PREDICTION)));
        assert_eq!(r.mean_error_m, None);
    }

    #[test]
    fn failed_prediction_keeps_reason() {
        let rec = PredictionRecord::from_result("A", 0, &Err(OptimizeError::NoCluster));
        let r = evaluate(&[rec], &[truth("A", pt(0.0, 0.0))], 100.0).unwrap();
        assert_eq!(r.rows[0].failure_reason.as_deref(), Some("no_cluster"));
        assert!(!r.rows[0].hit);
        assert_eq!(r.n_predicted, 0);
    }

    #[test]
    fn unknown_and_duplicate_predictions() {
        let t = [truth("A", pt(0.0, 0.0))];
        assert_eq!(
            evaluate(&[predicted("B", pt(0.0, 0.0), 1.0)], &t, 100.0),
            Err(EvalError::UnknownOutage("B".into()))
        );
        let p = predicted("A", pt(0.0, 0.0), 1.0);
        assert_eq!(
            evaluate(&[p.clone(), p], &t, 100.0),
            Err(EvalError::DuplicatePrediction("A".into()))
        );
        assert!(matches!(evaluate(&[], &t, 0.0), Err(EvalError::InvalidRadius(_))));
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile_sorted(&[], 0.5), None);
        assert_eq!(quantile_sorted(&[3.0], 0.9), Some(3.0));
        assert_eq!(quantile_sorted(&[1.0, 2.0, 3.0, 4.0], 0.5), Some(2.5));
        // numpy.percentile([0..=10], 90) == 9.0
        let v: Vec<f64> = (0..=10).map(f64::from).collect();
        assert!((quantile_sorted(&v, 0.9).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn report_csv_empty_and_round_trip() {
        let empty = EvalReport::from_rows(vec![]);
        let mut buf = Vec::new();
        report_to_csv(&empty, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines, ["outage_id,hit,error_m,confidence,failure_reason", "#summary,0,0,0,0.0000,,,"]);

        let origin = pt(39.0, -76.0);
        let truths: Vec<_> = (0..7).map(|i| truth(&format!("O{i}"), origin)).collect();
        let preds: Vec<_> = (0..5)
            .map(|i| predicted(&format!("O{i}"), origin.offset_m(37.3 * i as f64, 11.1), 0.1 * i as f64))
            .collect();
        let r = evaluate(&preds, &truths, 100.0).unwrap();
        let mut buf = Vec::new();
        report_to_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().last().unwrap().contains(&format!(",{:.4},", r.hit_rate)));
        assert_eq!(parse_report_csv(buf.as_slice()).unwrap(), r);
    }

    #[test]
    fn predictions_csv_round_trip() {
        let rows = vec![
            predicted("A", pt(39.123456789, -76.987654321), 0.123456789),
            PredictionRecord::from_result("B", 3, &Err(OptimizeError::TooFewPings { count: 2, floor: 8 })),
        ];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &rows).unwrap();
        let parsed = parse_predictions(buf.as_slice()).unwrap();
        assert!(parsed.is_clean());
        assert_eq!(parsed.records, rows);
    }

    fn fixture_context(n_cluster: usize, n_noise: usize) -> OutageContext {
        let t0 = Utc.with_ymd_and_hms(2024, 5, 1, 10, 0, 0).unwrap();
        let center = pt(39.3, -76.6);
        let outage = OutageEvent {
            outage_id: "OUT-1".into(),
            feeder_id: "F1".into(),
            reported_location: center,
            start_time: t0,
            end_time: t0 + chrono::Duration::hours(2),
            cause: None,
            customers_affected: None,
            crew_comment: None,
        };
        let mut pings = Vec::new();
        for i in 0..n_cluster {
            pings.push(VehiclePing {
                vehicle_id: "V1".into(),
                time: t0 + chrono::Duration::seconds(60 * i as i64),
                position: center.offset_m(i as f64, 0.0),
            });
        }
        for i in 0..n_noise {
            pings.push(VehiclePing {
                vehicle_id: "V2".into(),
                time: t0 + chrono::Duration::seconds(60 * i as i64),
                position: center.offset_m(-200.0 - 150.0 * i as f64, 100.0),
            });
        }
        let assets = vec![
            AssetFeature {
                asset_id: "L1".into(),
                kind: AssetKind::FeederLine,
                voltage_class: Some("13.8 kV".into()),
                feeder_id: Some("F1".into()),
                geometry: vec![center.offset_m(-300.0, 0.0), center.offset_m(300.0, 0.0)],
            },
            AssetFeature {
                asset_id: "S1".into(),
                kind: AssetKind::Switch,
                voltage_class: None,
                feeder_id: Some("F1".into()),
                geometry: vec![center.offset_m(100.0, 0.0)],
            },
        ];
        assemble_context(&outage, &pings, &assets, &ContextConfig::default()).unwrap()
    }

    fn layer_counts(fc: &Value) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for f in fc["features"].as_array().unwrap() {
            *out.entry(f["properties"]["layer"].as_str().unwrap().to_string()).or_default() += 1;
        }
        out
    }

    #[test]
    fn layers_without_pings() {
        let ctx = fixture_context(0, 0);
        let assignment = dbscan(&ctx.pings.iter().map(|p| p.position).collect::<Vec<_>>(), DbscanParams::new(10.0, 2).unwrap());
        let fc = export_layers(&ctx, None, &assignment);
        let counts = layer_counts(&fc);
        assert_eq!(counts.get("reported_outage"), Some(&1));
        assert_eq!(counts.get("asset"), Some(&2));
        assert_eq!(counts.values().sum::<usize>(), 3);
    }

    #[test]
    fn layers_with_cluster_noise_and_prediction() {
        let ctx = fixture_context(3, 2);
        let points: Vec<_> = ctx.pings.iter().map(|p| p.position).collect();
        let assignment = dbscan(&points, DbscanParams::new(5.0, 3).unwrap());
        assert_eq!(assignment.clustered_count(), 3);
        let summary = crate::cluster::summarize_clusters(&assignment, &ctx.pings, ctx.window).remove(0);
        let prediction = Prediction {
            outage_id: ctx.outage.outage_id.clone(),
            location: summary.centroid,
            confidence: 0.5,
            params: assignment.params,
            cluster: summary,
            noise_count: 2,
            clustered_count: 3,
            rounds_run: 1,
            seed: 0,
        };
        let fc = export_layers(&ctx, Some(&prediction), &assignment);
        let counts = layer_counts(&fc);
        assert_eq!(counts["ping_cluster"], 3);
        assert_eq!(counts["ping_noise"], 2);
        assert_eq!(counts["reported_outage"], 1);
        assert_eq!(counts["predicted_centroid"], 1);
        assert_eq!(counts["asset"], 2);
        assert_eq!(fc["features"].as_array().unwrap().len(), ctx.pings.len() + ctx.assets.len() + 2);

        let parsed: geojson::GeoJson = fc.to_string().parse().expect("valid GeoJSON");
        let geojson::GeoJson::FeatureCollection(parsed) = parsed else {
            panic!("not a feature collection");
        };
        let reported = &parsed.features[0];
        let geojson::GeometryValue::Point { coordinates: c } = &reported.geometry.as_ref().unwrap().value else {
            panic!("reported outage is not a point");
        };
        assert_eq!((c[0], c[1]), (ctx.outage.reported_location.lon_deg(), ctx.outage.reported_location.lat_deg()));
    }

    proptest! {
        #[test]
        fn evaluate_permutation_invariant(offsets in proptest::collection::vec(0.0f64..400.0, 1..30), predicted_mask in any::<u32>(), rot in 0usize..30) {
            let origin = pt(45.0, 7.0);
            let truths: Vec<_> = (0..offsets.len()).map(|i| truth(&format!("O{i:02}"), origin)).collect();
            let preds: Vec<_> = offsets.iter().enumerate()
                .filter(|(i, _)| predicted_mask >> (i % 32) & 1 == 1)
                .map(|(i, d)| predicted(&format!("O{i:02}"), origin.offset_m(*d, 0.0), 0.5))
                .collect();
            let base = evaluate(&preds, &truths, 100.0).unwrap();
            let mut t2 = truths.clone();
            t2.rotate_left(rot % truths.len());
            t2.reverse();
            let mut p2 = preds.clone();
            p2.reverse();
            prop_assert_eq!(&evaluate(&p2, &t2, 100.0).unwrap(), &base);
            if let (Some(m), Some(p)) = (base.median_error_m, base.p90_error_m) {
                prop_assert!(m <= p);
            }
            prop_assert_eq!(base.rows.len(), base.n_outages);
            prop_assert!((base.hit_rate - base.n_hits as f64 / base.n_outages as f64).abs() < 1e-15);
        }
    }
}
