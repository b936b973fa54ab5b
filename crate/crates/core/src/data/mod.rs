//! Datasets and the experimental substrate: synthetic mixtures, label-noise
//! injection, stratified splits, CSV I/O and feature scaling.

mod csv_io;
mod dataset;
mod noise;
mod scale;
mod split;
mod synth;

pub use csv_io::{
    load_csv, load_csv_with_map, read_csv, save_csv, write_csv, CsvOptions, CsvTable, LabelColumn, LabelMap,
    TRUE_LABEL_HEADER,
};
pub use dataset::Dataset;
pub use noise::{empirical_flip_matrix, inject_noise, NoiseKind, NoiseSpec};
pub use scale::{standardize, Scaler};
pub use split::{kfold, kfold_indices, split, split_indices};
pub use synth::{generate, generate_with_truth, SynthSpec, SynthTruth};
