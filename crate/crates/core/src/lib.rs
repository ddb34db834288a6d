//! Time series anomaly analysis with large multimodal models.
//!
//! A series is normalized and cut into overlapping windows; each window is
//! rendered as a line plot and shown to a chat model together with a
//! description of normal behavior learned from reference plots. The
//! model's detections are parsed, optionally re-checked on zoomed plots,
//! and merged into pointwise confidence and class sequences that are then
//! scored with point-adjusted metrics.

pub mod aggregate;
pub mod error;
pub mod gateway;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod plotrender;
pub mod preprocess;
pub mod respparse;
pub mod synthgen;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    interval_length, interval_overlap, labels_to_intervals, AnomalyInterval, AnomalyType, Confidence, Detection,
    LabelSeries, TimeSeries,
};
