//! Phantom segmentation: a slice-wise classical detector, import of masks
//! produced elsewhere, and per-slice disk erosion.

use std::collections::VecDeque;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::synth::{PhantomGeometry, AIR_HU};
use crate::volume::{read_labels, ImageGrid, LabelMap, Region, Volume, VolumeError, Voxel, BACKGROUND};

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("invalid detector parameters: {0}")]
    Params(String),
    #[error("phantom not found: no slice shows all four rods")]
    PhantomNotFound,
    #[error("ambiguous rod assignment: rod positions are not ordered left to right")]
    AmbiguousRods,
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Tuning of the classical detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub geometry: PhantomGeometry,
    /// HU window of urethane candidate voxels.
    pub base_hu_window: [f64; 2],
    /// Minimum rod contrast over the slab median, HU.
    pub rod_hu_margin: f64,
    /// Fraction of the image height, counted from the bottom, searched for
    /// the phantom.
    pub search_region: f64,
    pub min_component_voxels: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            geometry: PhantomGeometry::default(),
            base_hu_window: [-100.0, 30.0],
            rod_hu_margin: 25.0,
            search_region: 0.5,
            min_component_voxels: 2000,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        let [lo, hi] = self.base_hu_window;
        if !(lo < hi) {
            return Err(SegmentationError::Params(format!("base window [{lo}, {hi}] is empty")));
        }
        if !(self.rod_hu_margin > 0.0) {
            return Err(SegmentationError::Params("rod margin must be > 0".into()));
        }
        if !(self.search_region > 0.0 && self.search_region <= 1.0) {
            return Err(SegmentationError::Params("search region must lie in (0, 1]".into()));
        }
        if !(self.geometry.rod_radius > 0.0) {
            return Err(SegmentationError::Params("rod radius must be > 0".into()));
        }
        Ok(())
    }
}

const NEIGHBORS8: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// 8-connected components of `mask` on an `nx` x `ny` slice, each as a list
/// of pixel indices in discovery order.
fn components(mask: &[bool], nx: usize, ny: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (x, y) = ((i % nx) as isize, (i / nx) as isize);
            for (dx, dy) in NEIGHBORS8 {
                let (qx, qy) = (x + dx, y + dy);
                if qx < 0 || qy < 0 || qx >= nx as isize || qy >= ny as isize {
                    continue;
                }
                let j = qx as usize + nx * qy as usize;
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        out.push(comp);
    }
    out
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Pixels of `region` plus every enclosed hole (4-connected background not
/// reachable from the bounding-box border).
fn fill_holes(region: &[usize], nx: usize, ny: usize) -> Vec<bool> {
    let mut inside = vec![false; nx * ny];
    for &i in region {
        inside[i] = true;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
    for &i in region {
        x0 = x0.min(i % nx);
        x1 = x1.max(i % nx);
        y0 = y0.min(i / nx);
        y1 = y1.max(i / nx);
    }
    let (x0, y0) = (x0.saturating_sub(1), y0.saturating_sub(1));
    let (x1, y1) = ((x1 + 1).min(nx - 1), (y1 + 1).min(ny - 1));
    let mut outside = vec![false; nx * ny];
    let mut queue = VecDeque::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let border = x == x0 || x == x1 || y == y0 || y == y1;
            let i = x + nx * y;
            if border && !inside[i] {
                outside[i] = true;
                queue.push_back(i);
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % nx, i / nx);
        let mut visit = |qx: usize, qy: usize| {
            if (x0..=x1).contains(&qx) && (y0..=y1).contains(&qy) {
                let j = qx + nx * qy;
                if !inside[j] && !outside[j] {
                    outside[j] = true;
                    queue.push_back(j);
                }
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        visit(x + 1, y);
        if y > 0 {
            visit(x, y - 1);
        }
        visit(x, y + 1);
    }
    let mut filled = inside;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let i = x + nx * y;
            if !outside[i] {
                filled[i] = true;
            }
        }
    }
    filled
}

#[derive(Debug, Clone)]
struct RodCandidate {
    /// Centroid in pixel units.
    cx: f64,
    cy: f64,
    pixels: Vec<usize>,
}

#[derive(Debug, Clone)]
struct SliceDetection {
    slab: Vec<bool>,
    rods: Vec<RodCandidate>,
}

fn centroid(pixels: &[usize], nx: usize) -> (f64, f64) {
    let n = pixels.len() as f64;
    let sx: f64 = pixels.iter().map(|&i| (i % nx) as f64).sum();
    let sy: f64 = pixels.iter().map(|&i| (i / nx) as f64).sum();
    (sx / n, sy / n)
}

fn detect_slice(hu: &[f64], nx: usize, ny: usize, spacing: [f64; 3], p: &DetectorParams) -> Option<SliceDetection> {
    let [lo, hi] = p.base_hu_window;
    let y_start = ((ny as f64) * (1.0 - p.search_region)).floor() as usize;
    let in_search = |i: usize| i / nx >= y_start;
    let candidate: Vec<bool> = (0..nx * ny)
        .map(|i| in_search(i) && hu[i] >= lo && hu[i] <= hi)
        .collect();
    let core = components(&candidate, nx, ny).into_iter().max_by_key(|c| c.len())?;
    if core.len() < p.min_component_voxels.max(1) {
        return None;
    }
    let mut base_values: Vec<f64> = core.iter().map(|&i| hu[i]).collect();
    let base_median = median_of(&mut base_values);
    let mut slab = fill_holes(&core, nx, ny);

    // Recover the blurred rim of the slab: neighbors brighter than the
    // midpoint between air and urethane that are not themselves rod or body.
    let rim = (AIR_HU + base_median) / 2.0;
    for _ in 0..2 {
        let add: Vec<usize> = (0..nx * ny)
            .filter(|&i| !slab[i] && in_search(i) && hu[i] > rim && hu[i] <= hi)
            .filter(|&i| {
                let (x, y) = ((i % nx) as isize, (i / nx) as isize);
                NEIGHBORS8.iter().any(|(dx, dy)| {
                    let (qx, qy) = (x + dx, y + dy);
                    qx >= 0 && qy >= 0 && qx < nx as isize && qy < ny as isize && slab[qx as usize + nx * qy as usize]
                })
            })
            .collect();
        if add.is_empty() {
            break;
        }
        for i in add {
            slab[i] = true;
        }
    }

    let g = &p.geometry;
    let (sx, sy) = (spacing[0], spacing[1]);
    let disk_area = std::f64::consts::PI * g.rod_radius * g.rod_radius / (sx * sy);
    let bright: Vec<bool> = (0..nx * ny)
        .map(|i| slab[i] && hu[i] > base_median + p.rod_hu_margin)
        .collect();
    let mut rods: Vec<RodCandidate> = components(&bright, nx, ny)
        .into_iter()
        .filter(|c| {
            let a = c.len() as f64;
            a >= 0.4 * disk_area && a <= 1.6 * disk_area
        })
        .filter_map(|pixels| {
            let (cx, cy) = centroid(&pixels, nx);
            let reach = pixels
                .iter()
                .map(|&i| (((i % nx) as f64 - cx) * sx).hypot(((i / nx) as f64 - cy) * sy))
                .fold(0.0, f64::max);
            (reach <= 1.6 * g.rod_radius).then_some(RodCandidate { cx, cy, pixels })
        })
        .collect();
    if rods.len() > 4 {
        rods.sort_by(|a, b| {
            let da = (a.pixels.len() as f64 - disk_area).abs();
            let db = (b.pixels.len() as f64 - disk_area).abs();
            da.partial_cmp(&db).unwrap()
        });
        rods.truncate(4);
    }
    for rod in rods.iter_mut() {
        refine_rod(rod, hu, &slab, nx, ny, spacing, base_median, g.rod_radius);
    }
    rods.sort_by(|a, b| a.cx.partial_cmp(&b.cx).unwrap());
    Some(SliceDetection { slab, rods })
}

/// Re-grows a rod from its centroid with a half-contrast threshold so the
/// boundary sits where the blurred edge crosses halfway between base and
/// rod material.
#[allow(clippy::too_many_arguments)]
fn refine_rod(
    rod: &mut RodCandidate,
    hu: &[f64],
    slab: &[bool],
    nx: usize,
    ny: usize,
    spacing: [f64; 3],
    base_median: f64,
    radius: f64,
) {
    let (sx, sy) = (spacing[0], spacing[1]);
    let dist = |i: usize| (((i % nx) as f64 - rod.cx) * sx).hypot(((i / nx) as f64 - rod.cy) * sy);
    let mut core: Vec<f64> = rod
        .pixels
        .iter()
        .filter(|&&i| dist(i) <= radius / 2.0)
        .map(|&i| hu[i])
        .collect();
    if core.is_empty() {
        return;
    }
    let level = median_of(&mut core);
    let threshold = (base_median + level) / 2.0;
    let seed = rod.cx.round() as usize + nx * rod.cy.round() as usize;
    if seed >= hu.len() || hu[seed] <= threshold {
        return;
    }
    let mut seen = vec![false; nx * ny];
    let mut queue = VecDeque::from([seed]);
    seen[seed] = true;
    let mut pixels = Vec::new();
    while let Some(i) = queue.pop_front() {
        pixels.push(i);
        let (x, y) = ((i % nx) as isize, (i / nx) as isize);
        for (dx, dy) in NEIGHBORS8 {
            let (qx, qy) = (x + dx, y + dy);
            if qx < 0 || qy < 0 || qx >= nx as isize || qy >= ny as isize {
                continue;
            }
            let j = qx as usize + nx * qy as usize;
            if !seen[j] && slab[j] && hu[j] > threshold && dist(j) <= 1.5 * radius {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    pixels.sort_unstable();
    let (cx, cy) = centroid(&pixels, nx);
    *rod = RodCandidate { cx, cy, pixels };
}

/// Classical slice-wise phantom detector.
///
/// Each axial slice is searched for the urethane slab (largest connected
/// component inside the base HU window) and for four rod disks inside it.
/// Rod lines are then fixed by the per-rod median centroid over slices that
/// show all four rods; slices whose rods stray more than two radii from
/// those lines are dropped.
pub fn segment_classical<T: Voxel>(v: &Volume<T>, p: &DetectorParams) -> Result<LabelMap, SegmentationError> {
    p.validate()?;
    let grid = v.grid();
    let [nx, ny, nz] = grid.dims();
    let spacing = grid.spacing();
    let detections: Vec<Option<SliceDetection>> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let hu: Vec<f64> = v.slice(z).iter().map(|s| s.to_f64()).collect();
            detect_slice(&hu, nx, ny, spacing, p)
        })
        .collect();

    let full: Vec<&SliceDetection> = detections.iter().flatten().filter(|d| d.rods.len() == 4).collect();
    if full.is_empty() {
        return Err(SegmentationError::PhantomNotFound);
    }
    let mut lines = [(0.0, 0.0); 4];
    for (k, line) in lines.iter_mut().enumerate() {
        let mut xs: Vec<f64> = full.iter().map(|d| d.rods[k].cx).collect();
        let mut ys: Vec<f64> = full.iter().map(|d| d.rods[k].cy).collect();
        *line = (median_of(&mut xs), median_of(&mut ys));
    }
    if lines.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(SegmentationError::AmbiguousRods);
    }

    let r = p.geometry.rod_radius;
    let tolerance = 2.0 * r;
    let dist_mm = |cx: f64, cy: f64, line: (f64, f64)| ((cx - line.0) * spacing[0]).hypot((cy - line.1) * spacing[1]);

    let mut labels = vec![BACKGROUND; grid.len()];
    let slice_len = grid.slice_len();
    let mut kept = 0;
    for (z, det) in detections.iter().enumerate() {
        let Some(det) = det else { continue };
        if det.rods.is_empty() {
            continue;
        }
        // Match each rod to the nearest rod line.
        let mut slots: [Option<&RodCandidate>; 4] = [None; 4];
        let mut consistent = true;
        for rod in &det.rods {
            let (k, d) = lines
                .iter()
                .enumerate()
                .map(|(k, &l)| (k, dist_mm(rod.cx, rod.cy, l)))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            if d > tolerance || slots[k].is_some() {
                consistent = false;
                break;
            }
            slots[k] = Some(rod);
        }
        if !consistent {
            continue;
        }
        kept += 1;
        let out = &mut labels[z * slice_len..(z + 1) * slice_len];
        for (i, &inside) in det.slab.iter().enumerate() {
            if inside {
                out[i] = Region::Base.code();
            }
        }
        // Where a rod was not found, keep its neighborhood out of the base
        // region rather than mislabel rod material as urethane.
        for (k, slot) in slots.iter().enumerate() {
            if slot.is_some() {
                continue;
            }
            let (lx, ly) = lines[k];
            for (i, o) in out.iter_mut().enumerate() {
                if dist_mm((i % nx) as f64, (i / nx) as f64, (lx, ly)) <= 1.5 * r {
                    *o = BACKGROUND;
                }
            }
        }
        for (k, slot) in slots.iter().enumerate() {
            if let Some(rod) = slot {
                for &i in &rod.pixels {
                    out[i] = Region::RODS[k].code();
                }
            }
        }
    }
    if kept == 0 {
        return Err(SegmentationError::PhantomNotFound);
    }
    Ok(LabelMap::new(grid.clone(), labels)?)
}

/// Reads a label map produced elsewhere and checks it lies on `target`.
pub fn import_mask(path: &Path, target: &ImageGrid) -> Result<LabelMap, SegmentationError> {
    let mask = read_labels(path)?;
    mask.grid().ensure_compatible(target)?;
    Ok(mask)
}

/// Offsets `(dx, dy)` of the disk `dx² + dy² <= r²`, as horizontal runs
/// `(dy, half_width)`.
fn disk_runs(radius: usize) -> Vec<(isize, usize)> {
    let r = radius as isize;
    (-r..=r)
        .map(|dy| {
            let w = ((r * r - dy * dy) as f64).sqrt().floor() as usize;
            (dy, w)
        })
        .collect()
}

/// Per-label, per-slice erosion by a disk of `radius_px` pixels.
///
/// A voxel keeps its label iff every disk offset lands inside the slice on
/// the same label; everything else becomes background.
pub fn erode_labels(m: &LabelMap, radius_px: usize) -> LabelMap {
    if radius_px == 0 {
        return m.clone();
    }
    let grid = m.grid();
    let [nx, ny, _] = grid.dims();
    let runs = disk_runs(radius_px);
    let slice_len = grid.slice_len();
    let mut out = vec![BACKGROUND; m.data().len()];
    out.par_chunks_mut(slice_len).enumerate().for_each(|(z, dst)| {
        let src = m.slice(z);
        // same_run[i] = length of the run of equal labels starting at i and
        // extending right; left likewise.
        let mut right = vec![0usize; slice_len];
        let mut left = vec![0usize; slice_len];
        for y in 0..ny {
            let row = &src[y * nx..(y + 1) * nx];
            for x in (0..nx).rev() {
                right[y * nx + x] = if x + 1 < nx && row[x + 1] == row[x] {
                    right[y * nx + x + 1] + 1
                } else {
                    0
                };
            }
            for x in 0..nx {
                left[y * nx + x] = if x > 0 && row[x - 1] == row[x] {
                    left[y * nx + x - 1] + 1
                } else {
                    0
                };
            }
        }
        for y in 0..ny {
            for x in 0..nx {
                let i = y * nx + x;
                let c = src[i];
                if c == BACKGROUND {
                    continue;
                }
                let keep = runs.iter().all(|&(dy, w)| {
                    let qy = y as isize + dy;
                    if qy < 0 || qy >= ny as isize {
                        return false;
                    }
                    let j = qy as usize * nx + x;
                    src[j] == c && left[j] >= w && right[j] >= w
                });
                if keep {
                    dst[i] = c;
                }
            }
        }
    });
    LabelMap::new(grid.clone(), out).expect("erosion preserves label codes")
}

/// Mean world position (mm) of each label 1-5; `None` for absent labels.
pub fn rod_centroids(m: &LabelMap) -> [Option<[f64; 3]>; 5] {
    let grid = m.grid();
    let mut sums = [[0.0f64; 3]; 5];
    let mut counts = [0usize; 5];
    for (i, &c) in m.data().iter().enumerate() {
        if let Some(region) = Region::from_code(c) {
            let [x, y, z] = grid.coords(i);
            let w = grid.world(x, y, z);
            let s = &mut sums[region.slot()];
            for a in 0..3 {
                s[a] += w[a];
            }
            counts[region.slot()] += 1;
        }
    }
    std::array::from_fn(|k| (counts[k] > 0).then(|| sums[k].map(|s| s / counts[k] as f64)))
}
