//! Quantitative-CT calibration toolkit.
//!
//! The crate segments the five regions of an intensity calibration phantom
//! (a urethane base holding four hydroxyapatite rods of 50, 100, 150 and
//! 200 mg/cm³), fits the per-scan linear map from radiodensity (HU) to
//! equivalent bone density, and scores segmentations and calibrations.
//!
//! Modules:
//!
//! * [`volume`]: voxel grids, label maps and MetaImage (`.mhd`/`.raw`) I/O.
//! * [`synth`]: synthetic phantom CT generator with ground truth.
//! * [`segmentation`]: classical phantom detector, mask import, per-slice
//!   disk erosion.
//! * [`calibration`]: region statistics, regression, manual-ROI emulation,
//!   cross-site model comparison.
//! * [`metrics`]: Dice, average symmetric surface distance, HU differences,
//!   cross-validation splits.
//! * [`stats`]: Shapiro-Wilk, Mann-Whitney U, Wilcoxon signed-rank,
//!   Benjamini-Hochberg, summary formatting.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod metrics;
pub mod segmentation;
pub mod stats;
pub mod synth;
pub mod volume;

pub use calibration::{CalibrationModel, RegionStats, Statistic};
pub use metrics::MetricsReport;
pub use volume::{DensityVolume, HuField, HuVolume, ImageGrid, LabelMap, Region, Volume, BACKGROUND};
