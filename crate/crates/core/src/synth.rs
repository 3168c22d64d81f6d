//! Synthetic outage scenarios with planted ground truth.
//!
//! A scenario is a feeder polyline through the region centre, a fault at a
//! random point along it (offset sideways), a reported device upstream of the
//! fault, crew vehicles that drive to the fault and work there, and transit
//! vehicles that cross the area without stopping. Every position gets
//! isotropic Gaussian GPS noise. Output is a pure function of the
//! `ScenarioSpec` and seed.

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geo::{buffered_bbox, haversine_m, BoundingBox, GeoPoint};
use crate::ingest::{
    add_seconds, parse_csv_rows, parse_point, AssetFeature, AssetKind, IngestError, OutageEvent, Parsed, Timestamp,
    VehiclePing,
};

/// Crew roam radius around the work site, metres.
pub const DWELL_ROAM_M: f64 = 20.0;
/// Spacing between scenario start times inside a suite, seconds.
pub const SUITE_SPACING_S: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_crew: usize,
    pub n_noise_vehicles: usize,
    pub outage_duration_s: f64,
    /// Fraction of the outage each crew vehicle spends at the fault.
    pub dwell_fraction: f64,
    pub gps_sigma_m: f64,
    pub ping_interval_s: f64,
    pub feeder_length_m: f64,
    pub region_center: GeoPoint,
    /// Perpendicular distance of the damage from the feeder line.
    pub fault_offset_m: f64,
    /// Along-feeder distance from the fault back to the reported device.
    pub reported_upstream_m: (f64, f64),
    pub crew_speed_mps: (f64, f64),
    pub noise_speed_mps: (f64, f64),
    /// Box buffer used for noise-vehicle routing; matches the ingest default.
    pub bbox_buffer_m: f64,
    pub start_time: Timestamp,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n_crew: 2,
            n_noise_vehicles: 5,
            outage_duration_s: 7200.0,
            dwell_fraction: 0.6,
            gps_sigma_m: 10.0,
            ping_interval_s: 30.0,
            feeder_length_m: 6000.0,
            region_center: GeoPoint::new(39.29, -76.61).expect("valid constant"),
            fault_offset_m: 25.0,
            reported_upstream_m: (200.0, 3000.0),
            crew_speed_mps: (8.0, 15.0),
            noise_speed_mps: (5.0, 20.0),
            bbox_buffer_m: 500.0,
            start_time: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).single().expect("valid constant"),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            (self.n_crew >= 1, "n_crew must be >= 1"),
            (self.outage_duration_s > 0.0, "outage_duration_s must be > 0"),
            (
                self.dwell_fraction > 0.0 && self.dwell_fraction <= 1.0,
                "dwell_fraction must be in (0, 1]",
            ),
            (self.gps_sigma_m >= 0.0, "gps_sigma_m must be >= 0"),
            (self.ping_interval_s > 0.0, "ping_interval_s must be > 0"),
            (self.feeder_length_m > 0.0, "feeder_length_m must be > 0"),
            (self.fault_offset_m >= 0.0, "fault_offset_m must be >= 0"),
            (
                0.0 <= self.reported_upstream_m.0 && self.reported_upstream_m.0 <= self.reported_upstream_m.1,
                "reported_upstream_m must be an ordered non-negative range",
            ),
            (
                0.0 < self.crew_speed_mps.0 && self.crew_speed_mps.0 <= self.crew_speed_mps.1,
                "crew_speed_mps must be an ordered positive range",
            ),
            (
                0.0 < self.noise_speed_mps.0 && self.noise_speed_mps.0 <= self.noise_speed_mps.1,
                "noise_speed_mps must be an ordered positive range",
            ),
            (self.bbox_buffer_m >= 0.0, "bbox_buffer_m must be >= 0"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(msg.to_string()),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub outage_id: String,
    pub true_location: GeoPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub outage: OutageEvent,
    pub pings: Vec<VehiclePing>,
    pub assets: Vec<AssetFeature>,
    pub truth: GroundTruth,
    pub bbox: BoundingBox,
    /// Envelope of the feeder and reported location, before buffering.
    pub feeder_box: BoundingBox,
}

/// Polyline with cumulative arc length.
struct Polyline {
    vertices: Vec<GeoPoint>,
    cumulative: Vec<f64>,
}

impl Polyline {
    fn new(vertices: Vec<GeoPoint>) -> Self {
        let mut cumulative = vec![0.0];
        for w in vertices.windows(2) {
            let last = *cumulative.last().expect("nonempty");
            cumulative.push(last + haversine_m(&w[0], &w[1]));
        }
        Self { vertices, cumulative }
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().expect("nonempty")
    }

    /// Position and local bearing at arc length `s`.
    fn at(&self, s: f64) -> (GeoPoint, f64) {
        let s = s.clamp(0.0, self.length());
        let seg = self
            .cumulative
            .windows(2)
            .position(|w| s <= w[1])
            .unwrap_or(self.vertices.len() - 2);
        let (a, b) = (self.vertices[seg], self.vertices[seg + 1]);
        let bearing = a.bearing_deg(&b);
        (a.destination(bearing, s - self.cumulative[seg]), bearing)
    }
}

struct Jitter {
    normal: Option<Normal<f64>>,
}

impl Jitter {
    fn new(sigma: f64) -> Self {
        Self {
            normal: (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma")),
        }
    }

    fn apply(&self, rng: &mut ChaCha8Rng, p: GeoPoint) -> GeoPoint {
        match &self.normal {
            Some(n) => p.offset_m(n.sample(rng), n.sample(rng)),
            None => p,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

/// Ping times `first, first + dt, ...` strictly below `end`, whole seconds.
fn ping_times(first: f64, end: f64, dt: f64) -> impl Iterator<Item = f64> {
    (0..)
        .map(move |i| (first + i as f64 * dt).round())
        .take_while(move |&t| t < end)
}

/// Scenario outage id derived from the seed.
pub fn outage_id_for_seed(seed: u64) -> String {
    format!("OUT-{seed:016x}")
}

pub fn generate_scenario(spec: &ScenarioSpec, seed: u64) -> Scenario {
    spec.validate().expect("invalid scenario spec");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Jitter::new(spec.gps_sigma_m);
    let outage_id = outage_id_for_seed(seed);
    let feeder_id = format!("FDR-{seed:016x}");

    // Feeder: four segments with mild bends, centred on the region centre.
    let heading: f64 = rng.random_range(0.0..360.0);
    let seg_len = spec.feeder_length_m / 4.0;
    let start = spec.region_center.destination(heading + 180.0, spec.feeder_length_m / 2.0);
    let mut vertices = vec![start];
    for _ in 0..4 {
        let bend: f64 = rng.random_range(-20.0..20.0);
        let last = *vertices.last().expect("nonempty");
        vertices.push(last.destination(heading + bend, seg_len));
    }
    let feeder = Polyline::new(vertices);

    let fault_s = rng.random_range(0.0..feeder.length());
    let (on_line, bearing) = feeder.at(fault_s);
    let side = if rng.random_bool(0.5) { 90.0 } else { -90.0 };
    let true_location = on_line.destination(bearing + side, spec.fault_offset_m);
    let reported_s = (fault_s - uniform(&mut rng, spec.reported_upstream_m)).max(0.0);
    let reported_location = feeder.at(reported_s).0;

    let voltage = if rng.random_bool(0.7) { "13.8 kV" } else { "34.5 kV" };
    let mut assets = vec![
        AssetFeature {
            asset_id: format!("{feeder_id}-LINE"),
            kind: AssetKind::FeederLine,
            voltage_class: Some(voltage.into()),
            feeder_id: Some(feeder_id.clone()),
            geometry: feeder.vertices.clone(),
        },
        AssetFeature {
            asset_id: format!("{feeder_id}-SUB"),
            kind: AssetKind::Substation,
            voltage_class: None,
            feeder_id: Some(feeder_id.clone()),
            geometry: vec![feeder.vertices[0]],
        },
        AssetFeature {
            asset_id: format!("{feeder_id}-SW-REPORTED"),
            kind: AssetKind::Switch,
            voltage_class: Some(voltage.into()),
            feeder_id: Some(feeder_id.clone()),
            geometry: vec![reported_location],
        },
    ];
    let n_devices = (spec.feeder_length_m / 1000.0).ceil() as usize;
    for i in 0..n_devices {
        let kind = if i % 2 == 0 { AssetKind::Cutout } else { AssetKind::Switch };
        let s = rng.random_range(0.0..feeder.length());
        assets.push(AssetFeature {
            asset_id: format!("{feeder_id}-DEV{i}"),
            kind,
            voltage_class: Some(voltage.into()),
            feeder_id: Some(feeder_id.clone()),
            geometry: vec![feeder.at(s).0],
        });
    }

    let mut box_geometry = feeder.vertices.clone();
    box_geometry.push(reported_location);
    let bbox = buffered_bbox(&box_geometry, spec.bbox_buffer_m).expect("feeder away from poles");

    let t0 = spec.start_time;
    let duration = spec.outage_duration_s;
    let end_time = add_seconds(t0, duration);
    let dt = spec.ping_interval_s;
    let mut pings = Vec::new();
    let mut emit = |rng: &mut ChaCha8Rng, vehicle: &str, t: f64, p: GeoPoint| {
        pings.push(VehiclePing {
            vehicle_id: vehicle.to_string(),
            time: add_seconds(t0, t),
            position: jitter.apply(rng, p),
        });
    };

    let dwell = spec.dwell_fraction * duration;
    for c in 0..spec.n_crew {
        let vehicle = format!("{outage_id}-CREW{c}");
        let arrive = rng.random_range(0.0..=(duration - dwell));
        let depart = arrive + dwell;
        let speed = uniform(&mut rng, spec.crew_speed_mps);
        let depot_in = true_location.destination(rng.random_range(0.0..360.0), rng.random_range(3000.0..6000.0));
        let depot_out = true_location.destination(rng.random_range(0.0..360.0), rng.random_range(3000.0..6000.0));
        let travel_in = haversine_m(&depot_in, &true_location) / speed;
        let travel_out = haversine_m(&true_location, &depot_out) / speed;
        let bearing_in = depot_in.bearing_deg(&true_location);
        let bearing_out = true_location.bearing_deg(&depot_out);
        let first = arrive - travel_in + rng.random_range(0.0..dt);
        for t in ping_times(first, depart + travel_out, dt) {
            let p = if t < arrive {
                depot_in.destination(bearing_in, speed * (t - (arrive - travel_in)))
            } else if t <= depart {
                let r = DWELL_ROAM_M * rng.random::<f64>().sqrt();
                true_location.destination(rng.random_range(0.0..360.0), r)
            } else {
                true_location.destination(bearing_out, speed * (t - depart))
            };
            emit(&mut rng, &vehicle, t, p);
        }
    }

    let feeder_box = feeder.vertices.iter().fold(BoundingBox::envelope(&[reported_location]).expect("one point"), |b, v| {
        BoundingBox {
            min_lat_deg: b.min_lat_deg.min(v.lat_deg()),
            max_lat_deg: b.max_lat_deg.max(v.lat_deg()),
            min_lon_deg: b.min_lon_deg.min(v.lon_deg()),
            max_lon_deg: b.max_lon_deg.max(v.lon_deg()),
        }
    });
    let area = TransitArea {
        feeder_box,
        bbox,
        start: t0,
    };
    pings.extend(transit_tracks(&mut rng, spec, &jitter, &area, &format!("{outage_id}-TRANSIT"), spec.n_noise_vehicles));

    let outage = OutageEvent {
        outage_id: outage_id.clone(),
        feeder_id,
        reported_location,
        start_time: t0,
        end_time,
        cause: Some("synthetic".into()),
        customers_affected: Some(rng.random_range(1..2000)),
        crew_comment: None,
    };
    Scenario {
        outage,
        pings,
        assets,
        truth: GroundTruth {
            outage_id,
            true_location,
        },
        bbox,
        feeder_box,
    }
}

/// Where and when transit traffic runs for one scenario.
struct TransitArea {
    /// Crossing points are drawn from this box.
    feeder_box: BoundingBox,
    /// Tracks start and end outside this box.
    bbox: BoundingBox,
    start: Timestamp,
}

/// Straight constant-speed tracks, each crossing the area at a random time
/// during the outage and starting and ending well outside the box.
fn transit_tracks(
    rng: &mut ChaCha8Rng,
    spec: &ScenarioSpec,
    jitter: &Jitter,
    area: &TransitArea,
    prefix: &str,
    n: usize,
) -> Vec<VehiclePing> {
    let inner = &area.feeder_box;
    let half_length = area.bbox.diagonal_m() + 1000.0;
    let dt = spec.ping_interval_s;
    let mut pings = Vec::new();
    for k in 0..n {
        let vehicle = format!("{prefix}{k}");
        let crossing = GeoPoint::wrapped(
            rng.random_range(inner.min_lat_deg..=inner.max_lat_deg),
            rng.random_range(inner.min_lon_deg..=inner.max_lon_deg),
        );
        let heading: f64 = rng.random_range(0.0..360.0);
        let speed = uniform(rng, spec.noise_speed_mps);
        let entry = crossing.destination(heading + 180.0, half_length);
        let t_cross = rng.random_range(0.0..spec.outage_duration_s);
        let t_start = t_cross - half_length / speed;
        let t_end = t_cross + half_length / speed;
        for t in ping_times(t_start + rng.random_range(0.0..dt), t_end, dt) {
            let p = entry.destination(heading, speed * (t - t_start));
            pings.push(VehiclePing {
                vehicle_id: vehicle.clone(),
                time: add_seconds(area.start, t),
                position: jitter.apply(rng, p),
            });
        }
    }
    pings
}

/// `n` additional transit vehicles for an existing scenario, named
/// `<outage_id>-EXTRA<k>`. Used to test robustness to unrelated traffic.
pub fn extra_transits(scenario: &Scenario, spec: &ScenarioSpec, n: usize, seed: u64) -> Vec<VehiclePing> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let area = TransitArea {
        feeder_box: scenario.feeder_box,
        bbox: scenario.bbox,
        start: scenario.outage.start_time,
    };
    let prefix = format!("{}-EXTRA", scenario.outage.outage_id);
    transit_tracks(&mut rng, spec, &Jitter::new(spec.gps_sigma_m), &area, &prefix, n)
}

/// Seed of the `index`-th scenario of a suite (SplitMix64 output stream).
pub fn derive_seed(master_seed: u64, index: usize) -> u64 {
    let mut z = master_seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` scenarios, one day apart, each with its own derived seed.
pub fn generate_suite(n: usize, spec: &ScenarioSpec, master_seed: u64) -> Vec<Scenario> {
    (0..n)
        .map(|i| {
            let mut s = spec.clone();
            s.start_time = add_seconds(spec.start_time, i as f64 * SUITE_SPACING_S);
            generate_scenario(&s, derive_seed(master_seed, i))
        })
        .collect()
}

/// Concatenated dataset for a suite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub outages: Vec<OutageEvent>,
    pub pings: Vec<VehiclePing>,
    pub assets: Vec<AssetFeature>,
    pub truths: Vec<GroundTruth>,
}

impl Dataset {
    pub fn from_scenarios(scenarios: &[Scenario]) -> Self {
        let mut d = Dataset::default();
        for s in scenarios {
            d.outages.push(s.outage.clone());
            d.pings.extend(s.pings.iter().cloned());
            d.assets.extend(s.assets.iter().cloned());
            d.truths.push(s.truth.clone());
        }
        d
    }
}

pub const TRUTH_COLUMNS: [&str; 3] = ["outage_id", "lat", "lon"];

pub fn write_truth(out: impl std::io::Write, truths: &[GroundTruth]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRUTH_COLUMNS)?;
    for t in truths {
        w.write_record([
            t.outage_id.as_str(),
            &t.true_location.lat_deg().to_string(),
            &t.true_location.lon_deg().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses `truth.csv`: `outage_id,lat,lon`.
pub fn parse_truth(input: impl std::io::Read) -> Result<Parsed<GroundTruth>, IngestError> {
    parse_csv_rows(input, &TRUTH_COLUMNS, |row| {
        let outage_id = row[0].trim();
        if outage_id.is_empty() {
            return Err("empty outage_id".into());
        }
        Ok(GroundTruth {
            outage_id: outage_id.to_string(),
            true_location: parse_point(&row[1], &row[2])?,
        })
    })
}
