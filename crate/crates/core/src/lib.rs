//! Fault localisation for distribution-grid outages from crew-vehicle
//! telemetry.
//!
//! The pipeline joins an outage with the vehicle pings and grid assets near
//! it ([`ingest`]), clusters the pings with DBSCAN ([`cluster`]), searches the
//! clustering parameters for the most confident cluster ([`optimize`]) and
//! reports that cluster's centroid as the predicted fault location.
//! [`synth`] generates scenarios with known answers and [`eval`] scores
//! predictions against them.

pub mod cluster;
pub mod eval;
pub mod geo;
pub mod ingest;
pub mod optimize;
pub mod run;
pub mod synth;

pub use cluster::{dbscan, ClusterAssignment, ClusterSummary, DbscanParams, Label};
pub use geo::{haversine_m, spherical_centroid, BoundingBox, GeoPoint, SpatialIndex};
pub use ingest::{assemble_context, AssetFeature, ContextConfig, OutageContext, OutageEvent, VehiclePing};
pub use optimize::{optimize, OptimizeError, OptimizerConfig, Prediction};
