//! Core EEG trial/dataset types, z-scoring, spectra and dataset partitioning.

mod spectrum;
mod split;
mod types;

pub use spectrum::{
    compute_spectrum, dominant_frequency, one_sided_magnitude, peak_to_median, trial_spectrum,
    SpectrumReport, Window,
};
pub use split::{mix_datasets, split_dataset, stratified_folds, SplitPolicy};
pub use types::{
    normalize_trial, Dataset, EegTrial, Provenance, SsvepClassTable, SubjectId, SYNTHETIC_SUBJECT,
};
