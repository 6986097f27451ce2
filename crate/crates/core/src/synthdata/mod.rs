//! Seeded synthetic multi-subject data and the voxel ↔ grid projection.

pub mod file;
mod generate;
mod projection;

pub use generate::{
    decode_signature, draw_labels, generate, subject_probe_accuracy, voxel_response, Dataset,
    DatasetMeta, GeneratorConfig, Sample, Split, Stimulus, SubjectProfile,
};
pub use projection::{
    consecutive_distances, contiguity_report, roi_cell_order, run_spread, ContiguityReport,
    HistogramBin, ProjectionMap, RunSpread, DISTANCE_BINS,
};
