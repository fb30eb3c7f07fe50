//! Marker processing, error metrics and dense field export.

mod fields;
mod markers;
mod metrics;

use std::fs::File;
use std::io;
use std::path::Path;

use thiserror::Error;

pub use fields::{
    export_fields, grid_points, write_fields, write_fields_csv, FieldSample, FieldSource, NetField, FIELD_CSV_HEADER,
};
pub use markers::{
    fit_pixel_to_world, read_correspondences, read_correspondences_csv, read_displacements, read_displacements_csv,
    read_markers, read_markers_csv, smooth_and_difference, split_phases, write_displacements, write_displacements_csv,
    write_markers, Calibration, Correspondence, MarkerDisplacement, MarkerObservation, Phase, PixelToWorld,
    CORRESPONDENCES_CSV_HEADER, DISPLACEMENTS_CSV_HEADER, MARKERS_CSV_HEADER,
};
pub use metrics::{absolute_error, comparison_table, mean_absolute_error, Component, MetricsReport};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot open {path}: {source}")]
    Open { path: String, source: io::Error },
    #[error("{0}")]
    Format(String),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("markers: {0}")]
    Markers(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("field export: {0}")]
    Field(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn open(path: &Path) -> Result<File, EvalError> {
    File::open(path).map_err(|source| EvalError::Open { path: path.display().to_string(), source })
}
