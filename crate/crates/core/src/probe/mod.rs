//! Frozen-feature evaluation: linear and decoder probes, geometric-shortcut
//! diagnostics, PCA and similarity exports, and kNN classification.

mod knn;
mod pca;
mod ply;
mod shortcut;
mod train;

pub use knn::{knn_classify, knn_predict};
pub use pca::{pca_colors, pca_export};
pub use ply::{heat_color, read_ply, write_ply, PlyCloud};
pub use shortcut::{
    shortcut_diagnostic, shortcut_diagnostic_with, write_heatmaps, ShortcutReport, RIDGE_LAMBDA,
};
pub use train::{
    decoder_probe, fit_probe, linear_probe, segmentation_scores, ProbeConfig, ProbeData, ProbeMode,
    ProbeReport,
};
