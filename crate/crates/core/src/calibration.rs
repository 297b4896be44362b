//! HU to density calibration: region statistics, the five-point regression,
//! the manual three-slice ROI method, and cross-site model comparison.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::stats::{bh_adjust, mann_whitney_u, median, quartiles, StatsError};
use crate::volume::{DensityVolume, HuVolume, LabelMap, Region, Volume, VolumeError, Voxel};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("region vanished: no voxels for label(s) {0:?}")]
    RegionVanished(Vec<u8>),
    #[error("degenerate fit: HU values have zero variance")]
    DegenerateFit,
    #[error("ROI circle for {region} on slice {slice} contains no voxels")]
    EmptyRoi { region: Region, slice: usize },
    #[error("slice {slice} out of range (volume has {slices} slices)")]
    SliceOutOfRange { slice: usize, slices: usize },
    #[error("invalid ROI: {0}")]
    InvalidRoi(String),
    #[error("no models for site {0}")]
    EmptySite(char),
    #[error("HU range {lo}:{hi} is empty")]
    InvalidRange { lo: i32, hi: i32 },
    #[error("malformed model record: {0}")]
    Record(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Which per-region statistic feeds the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Statistic {
    #[default]
    Mean,
    Median,
}

impl FromStr for Statistic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Statistic::Mean),
            "median" => Ok(Statistic::Median),
            other => Err(format!("unknown statistic '{other}' (expected mean or median)")),
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Statistic::Mean => "mean",
            Statistic::Median => "median",
        })
    }
}

/// Integer-HU histogram; bin `i` counts samples rounding to `min + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub min: i64,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn from_values(values: &[f64]) -> Self {
        let bins: Vec<i64> = values.iter().map(|v| v.round() as i64).collect();
        let min = *bins.iter().min().expect("non-empty region");
        let max = *bins.iter().max().unwrap();
        let mut counts = vec![0u64; (max - min + 1) as usize];
        for b in bins {
            counts[(b - min) as usize] += 1;
        }
        Self { min, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub histogram: Histogram,
}

impl RegionSummary {
    fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            count: values.len(),
            mean,
            median: median(values),
            sd,
            histogram: Histogram::from_values(values),
        }
    }

    pub fn value(&self, statistic: Statistic) -> f64 {
        match statistic {
            Statistic::Mean => self.mean,
            Statistic::Median => self.median,
        }
    }
}

/// HU statistics of the five phantom regions, indexed by [`Region::slot`].
#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    pub regions: [RegionSummary; 5],
}

impl RegionStats {
    pub fn get(&self, region: Region) -> &RegionSummary {
        &self.regions[region.slot()]
    }

    /// The five reduced HU values in label order.
    pub fn values(&self, statistic: Statistic) -> [f64; 5] {
        std::array::from_fn(|k| self.regions[k].value(statistic))
    }
}

/// Collects HU samples of every phantom region of `m` from `v`.
pub fn region_statistics<T: Voxel>(v: &Volume<T>, m: &LabelMap) -> Result<RegionStats, CalibrationError> {
    v.grid().ensure_compatible(m.grid())?;
    let mut samples: [Vec<f64>; 5] = Default::default();
    for (s, &c) in v.data().iter().zip(m.data()) {
        if let Some(region) = Region::from_code(c) {
            samples[region.slot()].push(s.to_f64());
        }
    }
    let missing: Vec<u8> = Region::ALL
        .iter()
        .filter(|r| samples[r.slot()].is_empty())
        .map(|r| r.code())
        .collect();
    if !missing.is_empty() {
        return Err(CalibrationError::RegionVanished(missing));
    }
    Ok(RegionStats {
        regions: std::array::from_fn(|k| RegionSummary::from_values(&samples[k])),
    })
}

/// Linear map `density = slope * HU + intercept` fitted on five points.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationModel {
    pub case_id: String,
    /// mg/cm³ per HU.
    pub slope: f64,
    /// mg/cm³.
    pub intercept: f64,
    /// Pearson correlation of the five (HU, density) points.
    pub r: f64,
    /// `(hu, density)` in label order.
    pub points: [(f64, f64); 5],
    /// `density - predicted` per point.
    pub residuals: [f64; 5],
}

impl CalibrationModel {
    pub fn predict(&self, hu: f64) -> f64 {
        self.slope * hu + self.intercept
    }

    pub fn with_case_id(mut self, id: impl Into<String>) -> Self {
        self.case_id = id.into();
        self
    }

    /// Plain-text `key = value` record. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "case_id = {}", self.case_id);
        let _ = writeln!(s, "slope = {}", self.slope);
        let _ = writeln!(s, "intercept = {}", self.intercept);
        let _ = writeln!(s, "r = {}", self.r);
        let pts: Vec<String> = self.points.iter().map(|(h, d)| format!("{h}:{d}")).collect();
        let _ = writeln!(s, "points = {}", pts.join(" "));
        let res: Vec<String> = self.residuals.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(s, "residuals = {}", res.join(" "));
        s
    }

    pub fn from_record(text: &str) -> Result<Self, CalibrationError> {
        let bad = |m: String| CalibrationError::Record(m);
        let mut case_id = None;
        let (mut slope, mut intercept, mut r) = (None, None, None);
        let mut points = None;
        let mut residuals = None;
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad number '{v}'")));
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = value, got '{line}'")))?;
            let value = value.trim();
            match key.trim() {
                "case_id" => case_id = Some(value.to_string()),
                "slope" => slope = Some(num(value)?),
                "intercept" => intercept = Some(num(value)?),
                "r" => r = Some(num(value)?),
                "points" => {
                    let pts = value
                        .split_whitespace()
                        .map(|p| {
                            let (h, d) = p.split_once(':').ok_or_else(|| bad(format!("bad point '{p}'")))?;
                            Ok((num(h)?, num(d)?))
                        })
                        .collect::<Result<Vec<_>, CalibrationError>>()?;
                    points = Some(<[(f64, f64); 5]>::try_from(pts).map_err(|_| bad("expected 5 points".into()))?);
                }
                "residuals" => {
                    let rs = value.split_whitespace().map(num).collect::<Result<Vec<_>, _>>()?;
                    residuals = Some(<[f64; 5]>::try_from(rs).map_err(|_| bad("expected 5 residuals".into()))?);
                }
                _ => {}
            }
        }
        let need = |name: &str| bad(format!("missing key '{name}'"));
        Ok(Self {
            case_id: case_id.unwrap_or_default(),
            slope: slope.ok_or_else(|| need("slope"))?,
            intercept: intercept.ok_or_else(|| need("intercept"))?,
            r: r.ok_or_else(|| need("r"))?,
            points: points.ok_or_else(|| need("points"))?,
            residuals: residuals.ok_or_else(|| need("residuals"))?,
        })
    }
}

/// Ordinary least squares of density on HU over five points.
pub fn fit_points(hu: [f64; 5], density: [f64; 5]) -> Result<CalibrationModel, CalibrationError> {
    if hu.iter().chain(&density).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite.into());
    }
    let n = 5.0;
    let mx = hu.iter().sum::<f64>() / n;
    let my = density.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in hu.iter().zip(&density) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= f64::EPSILON * f64::EPSILON * mx.abs().max(1.0).powi(2) {
        return Err(CalibrationError::DegenerateFit);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r = if syy > 0.0 {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    Ok(CalibrationModel {
        case_id: String::new(),
        slope,
        intercept,
        r,
        points: std::array::from_fn(|k| (hu[k], density[k])),
        residuals: std::array::from_fn(|k| density[k] - (slope * hu[k] + intercept)),
    })
}

/// Fits the calibration line from region statistics and the five nominal
/// densities (label order).
pub fn fit_calibration(
    stats: &RegionStats,
    densities: [f64; 5],
    statistic: Statistic,
) -> Result<CalibrationModel, CalibrationError> {
    fit_points(stats.values(statistic), densities)
}

/// A circular region of interest in an axial plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiCircle {
    /// World (x, y), mm.
    pub center: [f64; 2],
    pub radius: f64,
}

/// Manually placed circles on a few axial slices, one per rod.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSpec {
    pub slices: Vec<usize>,
    /// Rod circles, lowest density first.
    pub rods: [RoiCircle; 4],
}

impl RoiSpec {
    /// Any non-empty slice list; repeated slices are allowed.
    pub fn new(slices: Vec<usize>, rods: [RoiCircle; 4]) -> Result<Self, CalibrationError> {
        if slices.is_empty() {
            return Err(CalibrationError::InvalidRoi("no slices".into()));
        }
        if let Some(c) = rods.iter().find(|c| !(c.radius > 0.0)) {
            return Err(CalibrationError::InvalidRoi(format!("radius {} must be > 0", c.radius)));
        }
        Ok(Self { slices, rods })
    }

    /// The conventional protocol: three distinct slices.
    pub fn three_slice(slices: [usize; 3], rods: [RoiCircle; 4]) -> Result<Self, CalibrationError> {
        if slices[0] == slices[1] || slices[1] == slices[2] || slices[0] == slices[2] {
            return Err(CalibrationError::InvalidRoi(format!(
                "slices {slices:?} are not distinct"
            )));
        }
        Self::new(slices.to_vec(), rods)
    }

    /// Circles of `radius` centred on the rod centroids of `m` on each of
    /// `slices`; the rod axis is taken from the labelled voxels of the
    /// whole volume.
    pub fn centered_on(m: &LabelMap, slices: [usize; 3], radius: f64) -> Result<Self, CalibrationError> {
        let c = crate::segmentation::rod_centroids(m);
        let missing: Vec<u8> = Region::RODS
            .iter()
            .filter(|r| c[r.slot()].is_none())
            .map(|r| r.code())
            .collect();
        if !missing.is_empty() {
            return Err(CalibrationError::RegionVanished(missing));
        }
        let rods = std::array::from_fn(|k| {
            let p = c[k + 1].unwrap();
            RoiCircle {
                center: [p[0], p[1]],
                radius,
            }
        });
        Self::three_slice(slices, rods)
    }

    /// Circle sampling the base material: midway between the first two rods.
    pub fn base_circle(&self) -> RoiCircle {
        let (a, b) = (self.rods[0], self.rods[1]);
        RoiCircle {
            center: [(a.center[0] + b.center[0]) / 2.0, (a.center[1] + b.center[1]) / 2.0],
            radius: a.radius.min(b.radius),
        }
    }
}

fn circle_mean<T: Voxel>(v: &Volume<T>, z: usize, c: RoiCircle) -> Option<f64> {
    let g = v.grid();
    let [nx, ny, _] = g.dims();
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..ny {
        for x in 0..nx {
            let w = g.world(x, y, z);
            if (w[0] - c.center[0]).hypot(w[1] - c.center[1]) <= c.radius {
                sum += v.get(x, y, z).to_f64();
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Calibration from circular ROIs: per region, the unweighted mean of the
/// per-slice circle means, then the five-point fit.
pub fn manual_roi_calibration<T: Voxel>(
    v: &Volume<T>,
    roi: &RoiSpec,
    densities: [f64; 5],
) -> Result<CalibrationModel, CalibrationError> {
    let slices = v.grid().dims()[2];
    if let Some(&z) = roi.slices.iter().find(|&&z| z >= slices) {
        return Err(CalibrationError::SliceOutOfRange { slice: z, slices });
    }
    let circles: [RoiCircle; 5] = std::array::from_fn(|k| if k == 0 { roi.base_circle() } else { roi.rods[k - 1] });
    let mut hu = [0.0; 5];
    for (k, circle) in circles.iter().enumerate() {
        let mut means = Vec::with_capacity(roi.slices.len());
        for &z in &roi.slices {
            means.push(circle_mean(v, z, *circle).ok_or(CalibrationError::EmptyRoi {
                region: Region::ALL[k],
                slice: z,
            })?);
        }
        hu[k] = means.iter().sum::<f64>() / means.len() as f64;
    }
    fit_points(hu, densities)
}

/// Converts every voxel to density with `model`; no clamping.
pub fn apply_calibration(v: &HuVolume, model: &CalibrationModel) -> Result<DensityVolume, VolumeError> {
    v.map(|h| model.predict(h as f64) as f32)
}

/// One HU value of a cross-site comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub hu: i32,
    pub median_a: f64,
    pub iqr_a: (f64, f64),
    pub median_b: f64,
    pub iqr_b: (f64, f64),
    /// `median_a - median_b`.
    pub diff: f64,
    pub p: f64,
    pub p_adj: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelComparison {
    pub rows: Vec<ComparisonRow>,
    pub alpha: f64,
}

/// HU values of the summary table.
pub const SUMMARY_HU: [i32; 4] = [0, 200, 400, 600];

impl ModelComparison {
    pub fn row(&self, hu: i32) -> Option<&ComparisonRow> {
        let first = self.rows.first()?.hu;
        self.rows.get(usize::try_from(hu - first).ok()?)
    }

    /// Rows at [`SUMMARY_HU`] that fall inside the grid.
    pub fn summary(&self) -> Vec<&ComparisonRow> {
        SUMMARY_HU.iter().filter_map(|&h| self.row(h)).collect()
    }

    /// Maximal runs of consecutive significant HU values, inclusive.
    pub fn significant_ranges(&self) -> Vec<(i32, i32)> {
        let mut out: Vec<(i32, i32)> = Vec::new();
        for row in self.rows.iter().filter(|r| r.significant) {
            match out.last_mut() {
                Some((_, end)) if *end + 1 == row.hu => *end = row.hu,
                _ => out.push((row.hu, row.hu)),
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("hu,median_a,iqr_a_lo,iqr_a_hi,median_b,iqr_b_lo,iqr_b_hi,diff,p,p_adj,significant\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.hu,
                r.median_a,
                r.iqr_a.0,
                r.iqr_a.1,
                r.median_b,
                r.iqr_b.0,
                r.iqr_b.1,
                r.diff,
                r.p,
                r.p_adj,
                r.significant
            );
        }
        s
    }
}

/// Evaluates every model of both sites at each integer HU in `lo..=hi` and
/// tests the two per-case samples with Mann-Whitney U, BH-adjusted jointly
/// over the grid.
pub fn compare_models(
    site_a: &[CalibrationModel],
    site_b: &[CalibrationModel],
    lo: i32,
    hi: i32,
    alpha: f64,
) -> Result<ModelComparison, CalibrationError> {
    if site_a.is_empty() {
        return Err(CalibrationError::EmptySite('A'));
    }
    if site_b.is_empty() {
        return Err(CalibrationError::EmptySite('B'));
    }
    if lo > hi {
        return Err(CalibrationError::InvalidRange { lo, hi });
    }
    let mut rows = Vec::with_capacity((hi - lo + 1) as usize);
    let mut ps = Vec::with_capacity(rows.capacity());
    for hu in lo..=hi {
        let h = hu as f64;
        let a: Vec<f64> = site_a.iter().map(|m| m.predict(h)).collect();
        let b: Vec<f64> = site_b.iter().map(|m| m.predict(h)).collect();
        let (a25, a50, a75) = quartiles(&a);
        let (b25, b50, b75) = quartiles(&b);
        let p = mann_whitney_u(&a, &b)?.p_value;
        ps.push(p);
        rows.push(ComparisonRow {
            hu,
            median_a: a50,
            iqr_a: (a25, a75),
            median_b: b50,
            iqr_b: (b25, b75),
            diff: a50 - b50,
            p,
            p_adj: 1.0,
            significant: false,
        });
    }
    for (row, adj) in rows.iter_mut().zip(bh_adjust(&ps)?) {
        row.p_adj = adj;
        row.significant = adj < alpha;
    }
    Ok(ModelComparison { rows, alpha })
}
