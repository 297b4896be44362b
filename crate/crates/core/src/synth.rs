//! Synthetic phantom CT cases with ground truth.
//!
//! A case is a deformable calibration phantom (urethane slab holding four
//! rods) lying beneath an elliptical body cross-section. The ground-truth
//! label map is rasterized from the phantom solid; the CT image is rendered
//! by pushing material densities through a linear scanner law
//! `HU = alpha * density + beta`, then blurring, adding Gaussian noise and
//! optional artifacts.
//!
//! Coordinates: x runs left to right across the slab width, y runs from the
//! top of the image (anterior) to the bottom (posterior, where the phantom
//! lies), z is cranio-caudal.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::volume::{write_volume, HuField, HuVolume, ImageGrid, LabelMap, Region, Volume, VolumeError, BACKGROUND};

/// HU of air outside the body and phantom.
pub const AIR_HU: f64 = -1000.0;
/// Representable CT range after quantization.
pub const HU_MIN: f64 = -1024.0;
pub const HU_MAX: f64 = 3071.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid phantom geometry: {0}")]
    Geometry(String),
    #[error("invalid deformation: {0}")]
    Deformation(String),
    #[error("invalid scanner model: {0}")]
    Scanner(String),
    #[error("invalid artifact spec: {0}")]
    Artifact(String),
    #[error("invalid dataset request: {0}")]
    Dataset(String),
    #[error("phantom slab lies entirely outside the grid")]
    SlabOutsideGrid,
    #[error("manifest {}: line {line}: {msg}", path.display())]
    Manifest { path: PathBuf, line: usize, msg: String },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Physical layout of the calibration phantom (mm, mg/cm³).
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomGeometry {
    pub slab_width: f64,
    pub slab_height: f64,
    pub slab_length: f64,
    pub rod_radius: f64,
    pub rod_pitch: f64,
    pub rod_densities: [f64; 4],
    pub base_density: f64,
}

impl Default for PhantomGeometry {
    fn default() -> Self {
        Self {
            slab_width: 240.0,
            slab_height: 40.0,
            slab_length: 300.0,
            rod_radius: 6.0,
            rod_pitch: 40.0,
            rod_densities: [50.0, 100.0, 150.0, 200.0],
            base_density: 0.0,
        }
    }
}

impl PhantomGeometry {
    pub fn validate(&self) -> Result<(), SynthError> {
        let g = |m: String| Err(SynthError::Geometry(m));
        if [
            self.slab_width,
            self.slab_height,
            self.slab_length,
            self.rod_radius,
            self.rod_pitch,
        ]
        .iter()
        .any(|v| !(*v > 0.0) || !v.is_finite())
        {
            return g("dimensions must be positive".into());
        }
        if 4.0 * self.rod_pitch + 2.0 * self.rod_radius >= self.slab_width {
            return g(format!(
                "rods do not fit: 4*pitch + 2*radius = {} >= width {}",
                4.0 * self.rod_pitch + 2.0 * self.rod_radius,
                self.slab_width
            ));
        }
        if 2.0 * self.rod_radius >= self.slab_height {
            return g("rod diameter must be below slab height".into());
        }
        if self.rod_radius * 2.0 >= self.rod_pitch {
            return g("rods overlap".into());
        }
        let mut prev = self.base_density;
        for d in self.rod_densities {
            if d <= prev {
                return g("rod densities must increase and exceed the base density".into());
            }
            prev = d;
        }
        Ok(())
    }

    /// Material density for a region code.
    pub fn density(&self, region: Region) -> f64 {
        match region {
            Region::Base => self.base_density,
            rod => self.rod_densities[rod.slot() - 1],
        }
    }

    /// Slab-local x of rod `i` (0-based, left to right).
    pub fn rod_offset(&self, i: usize) -> f64 {
        (i as f64 - 1.5) * self.rod_pitch
    }
}

/// Bending and rotation of the phantom under the patient's weight.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeformationSpec {
    /// Downward (+y) bow of the slab midline at mid-width, mm.
    pub sagitta: f64,
    /// Rotation about the z axis, degrees.
    pub axial_tilt: f64,
}

impl DeformationSpec {
    pub fn validate(&self, geometry: &PhantomGeometry) -> Result<(), SynthError> {
        if self.sagitta.abs() > geometry.slab_height {
            return Err(SynthError::Deformation(format!(
                "|sagitta| {} exceeds slab height {}",
                self.sagitta, geometry.slab_height
            )));
        }
        if self.axial_tilt.abs() > 15.0 {
            return Err(SynthError::Deformation(format!(
                "|tilt| {} exceeds 15 degrees",
                self.axial_tilt
            )));
        }
        Ok(())
    }
}

/// Linear rendering law plus acquisition noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ScannerModel {
    /// HU per mg/cm³.
    pub alpha: f64,
    /// HU of 0 mg/cm³ material.
    pub beta: f64,
    pub noise_sd: f64,
    /// Isotropic Gaussian blur, mm.
    pub kernel_blur_sd: f64,
    pub seed: u64,
}

impl ScannerModel {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(SynthError::Scanner(format!("alpha {} must be > 0", self.alpha)));
        }
        if !self.beta.is_finite() {
            return Err(SynthError::Scanner("beta must be finite".into()));
        }
        if !(self.noise_sd >= 0.0) || !(self.kernel_blur_sd >= 0.0) {
            return Err(SynthError::Scanner("noise and blur must be >= 0".into()));
        }
        Ok(())
    }

    pub fn hu(&self, density: f64) -> f64 {
        self.alpha * density + self.beta
    }

    /// Calibration slope that inverts this law (mg/cm³ per HU).
    pub fn true_slope(&self) -> f64 {
        1.0 / self.alpha
    }

    pub fn true_intercept(&self) -> f64 {
        -self.beta / self.alpha
    }
}

/// Bright streaks radiating from a metal implant.
#[derive(Debug, Clone, PartialEq)]
pub struct MetalStreaks {
    pub count: usize,
    pub amplitude: f64,
    /// Streak width, mm.
    pub width: f64,
    /// Affected axial slices, `start..end`.
    pub slices: (usize, usize),
}

/// Phantom shifted so that a fraction of its width falls left of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialFov {
    pub crop_fraction: f64,
}

/// Bright smooth blotches near the phantom's upper surface.
#[derive(Debug, Clone, PartialEq)]
pub struct HalationPatches {
    pub count: usize,
    pub amplitude: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArtifactSpec {
    pub metal_streaks: Option<MetalStreaks>,
    pub partial_fov: Option<PartialFov>,
    pub halation: Option<HalationPatches>,
}

impl ArtifactSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Artifact(m.into()));
        if let Some(s) = &self.metal_streaks {
            if !(s.amplitude >= 0.0) || !(s.width > 0.0) || s.slices.0 > s.slices.1 {
                return bad("metal streaks need amplitude >= 0, width > 0 and an ordered slice range");
            }
        }
        if let Some(f) = &self.partial_fov {
            if !(0.0..0.5).contains(&f.crop_fraction) {
                return bad("crop fraction must lie in [0, 0.5)");
            }
        }
        if let Some(h) = &self.halation {
            if !(h.amplitude >= 0.0) || !(h.radius > 0.0) {
                return bad("halation needs amplitude >= 0 and radius > 0");
            }
        }
        Ok(())
    }
}

/// Patient cross-section: a soft-tissue elliptic cylinder with one
/// ellipsoidal bone insert. Tissue values are density equivalents, i.e.
/// their HU under an identity scanner.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    /// In-plane semi-axes (x, y), mm.
    pub semi_axes: [f64; 2],
    /// Air gap between the body and the slab's upper surface, mm.
    pub gap: f64,
    pub soft_tissue: f64,
    pub bone: f64,
    pub bone_semi_axes: [f64; 3],
}

impl Default for BodyModel {
    fn default() -> Self {
        Self {
            semi_axes: [125.0, 45.0],
            gap: 6.0,
            soft_tissue: 40.0,
            bone: 700.0,
            bone_semi_axes: [30.0, 18.0, 1000.0],
        }
    }
}

/// Everything needed to synthesize one case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSpec {
    pub grid: ImageGrid,
    pub geometry: PhantomGeometry,
    pub deformation: DeformationSpec,
    pub scanner: ScannerModel,
    pub artifacts: ArtifactSpec,
    pub body: BodyModel,
    /// Distance from the slab's lower surface to the bottom grid edge, mm.
    pub table_gap: f64,
    /// Extra in-plane displacement of the phantom, mm.
    pub shift: [f64; 2],
}

impl CaseSpec {
    /// Default desk-scale case: 360 x 200 x 10 voxels at 0.8 x 0.8 x 1 mm.
    pub fn with_scanner(scanner: ScannerModel) -> Self {
        Self {
            grid: ImageGrid::new([360, 200, 10], [0.8, 0.8, 1.0], [0.0; 3]).expect("static grid"),
            geometry: PhantomGeometry::default(),
            deformation: DeformationSpec {
                sagitta: 4.0,
                axial_tilt: 0.0,
            },
            scanner,
            artifacts: ArtifactSpec::default(),
            body: BodyModel::default(),
            table_gap: 10.0,
            shift: [0.0; 2],
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.geometry.validate()?;
        self.deformation.validate(&self.geometry)?;
        self.scanner.validate()?;
        self.artifacts.validate()?;
        Ok(())
    }

    /// World extent of the grid along `axis`: (first edge, last edge).
    fn extent(&self, axis: usize) -> (f64, f64) {
        let o = self.grid.origin()[axis];
        let s = self.grid.spacing()[axis];
        let n = self.grid.dims()[axis] as f64;
        (o - s / 2.0, o + (n - 0.5) * s)
    }

    /// World position of the undeformed slab center.
    pub fn phantom_center(&self) -> [f64; 3] {
        let (x0, x1) = self.extent(0);
        let (_, y1) = self.extent(1);
        let (z0, z1) = self.extent(2);
        let cx = match &self.artifacts.partial_fov {
            Some(f) if f.crop_fraction > 0.0 => {
                x0 - f.crop_fraction * self.geometry.slab_width + self.geometry.slab_width / 2.0
            }
            _ => (x0 + x1) / 2.0,
        };
        let cy = y1 - self.table_gap - self.geometry.slab_height / 2.0;
        [cx + self.shift[0], cy + self.shift[1], (z0 + z1) / 2.0]
    }

    pub fn phantom(&self) -> PhantomSolid {
        PhantomSolid::new(self.geometry.clone(), self.deformation.clone(), self.phantom_center())
    }

    /// Center of the body ellipse (and of the bone insert / metal source).
    pub fn body_center(&self) -> [f64; 3] {
        let (x0, x1) = self.extent(0);
        let (z0, z1) = self.extent(2);
        let slab_top = self.phantom_center()[1] - self.shift[1] - self.geometry.slab_height / 2.0;
        [
            (x0 + x1) / 2.0,
            slab_top - self.body.gap - self.body.semi_axes[1],
            (z0 + z1) / 2.0,
        ]
    }

    /// Plain-text `key = value` record of every parameter.
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        let t = |v: [f64; 3]| format!("{} {} {}", v[0], v[1], v[2]);
        let _ = writeln!(s, "dims = {} {} {}", g.dims()[0], g.dims()[1], g.dims()[2]);
        let _ = writeln!(s, "spacing = {}", t(g.spacing()));
        let _ = writeln!(s, "origin = {}", t(g.origin()));
        let p = &self.geometry;
        let _ = writeln!(s, "slab_width = {}", p.slab_width);
        let _ = writeln!(s, "slab_height = {}", p.slab_height);
        let _ = writeln!(s, "slab_length = {}", p.slab_length);
        let _ = writeln!(s, "rod_radius = {}", p.rod_radius);
        let _ = writeln!(s, "rod_pitch = {}", p.rod_pitch);
        let d = p.rod_densities;
        let _ = writeln!(s, "rod_densities = {} {} {} {}", d[0], d[1], d[2], d[3]);
        let _ = writeln!(s, "base_density = {}", p.base_density);
        let _ = writeln!(s, "sagitta = {}", self.deformation.sagitta);
        let _ = writeln!(s, "axial_tilt = {}", self.deformation.axial_tilt);
        let sc = &self.scanner;
        let _ = writeln!(s, "alpha = {}", sc.alpha);
        let _ = writeln!(s, "beta = {}", sc.beta);
        let _ = writeln!(s, "noise_sd = {}", sc.noise_sd);
        let _ = writeln!(s, "kernel_blur_sd = {}", sc.kernel_blur_sd);
        let _ = writeln!(s, "seed = {}", sc.seed);
        let _ = writeln!(s, "true_slope = {}", sc.true_slope());
        let _ = writeln!(s, "true_intercept = {}", sc.true_intercept());
        let _ = writeln!(s, "table_gap = {}", self.table_gap);
        let _ = writeln!(s, "shift = {} {}", self.shift[0], self.shift[1]);
        let b = &self.body;
        let _ = writeln!(s, "body_semi_axes = {} {}", b.semi_axes[0], b.semi_axes[1]);
        let _ = writeln!(s, "body_gap = {}", b.gap);
        let _ = writeln!(s, "soft_tissue = {}", b.soft_tissue);
        let _ = writeln!(s, "bone = {}", b.bone);
        if let Some(m) = &self.artifacts.metal_streaks {
            let _ = writeln!(
                s,
                "metal_streaks = {} {} {} {} {}",
                m.count, m.amplitude, m.width, m.slices.0, m.slices.1
            );
        }
        if let Some(f) = &self.artifacts.partial_fov {
            let _ = writeln!(s, "crop_fraction = {}", f.crop_fraction);
        }
        if let Some(h) = &self.artifacts.halation {
            let _ = writeln!(s, "halation = {} {} {}", h.count, h.amplitude, h.radius);
        }
        s
    }
}

/// Default scanner presets for the two synthetic sites.
///
/// Site A calibrates to slope 0.841 mg/cm³/HU with intercept +0.6 mg/cm³,
/// site B to slope 0.744 with intercept 0.
pub fn site_scanner(site: &str) -> Option<ScannerModel> {
    match site {
        "A" => Some(ScannerModel {
            alpha: 1.0 / 0.841,
            beta: -0.6 / 0.841,
            noise_sd: 5.0,
            kernel_blur_sd: 0.6,
            seed: 0,
        }),
        "B" => Some(ScannerModel {
            alpha: 1.0 / 0.744,
            beta: 0.0,
            noise_sd: 5.0,
            kernel_blur_sd: 0.5,
            seed: 0,
        }),
        _ => None,
    }
}

/// The deformed phantom as a point classifier.
#[derive(Debug, Clone)]
pub struct PhantomSolid {
    geometry: PhantomGeometry,
    deformation: DeformationSpec,
    center: [f64; 3],
    cos_t: f64,
    sin_t: f64,
}

impl PhantomSolid {
    pub fn new(geometry: PhantomGeometry, deformation: DeformationSpec, center: [f64; 3]) -> Self {
        let t = deformation.axial_tilt.to_radians();
        Self {
            geometry,
            deformation,
            center,
            cos_t: t.cos(),
            sin_t: t.sin(),
        }
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    /// Vertical bow at normalized width position `u` in [0, 1].
    fn bow(&self, u: f64) -> f64 {
        let s = 2.0 * u - 1.0;
        self.deformation.sagitta * (1.0 - s * s)
    }

    /// Maps a world point into undeformed slab coordinates (x across the
    /// width, y across the height, both centered), or `None` when outside
    /// the slab's width or length.
    fn to_local(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        let g = &self.geometry;
        if (p[2] - self.center[2]).abs() > g.slab_length / 2.0 {
            return None;
        }
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let qx = self.cos_t * dx + self.sin_t * dy;
        let qy = -self.sin_t * dx + self.cos_t * dy;
        let u = (qx + g.slab_width / 2.0) / g.slab_width;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        Some((qx, qy - self.bow(u)))
    }

    /// Region code of the material containing world point `p`.
    pub fn classify(&self, p: [f64; 3]) -> u8 {
        let g = &self.geometry;
        let Some((lx, ly)) = self.to_local(p) else {
            return BACKGROUND;
        };
        if ly.abs() > g.slab_height / 2.0 {
            return BACKGROUND;
        }
        let r2 = g.rod_radius * g.rod_radius;
        for (i, rod) in Region::RODS.iter().enumerate() {
            let ox = lx - g.rod_offset(i);
            if ox * ox + ly * ly <= r2 {
                return rod.code();
            }
        }
        Region::Base.code()
    }

    /// World (x, y) of the deformed rod axis `i` in an axial plane.
    pub fn rod_center(&self, i: usize) -> [f64; 2] {
        let g = &self.geometry;
        let lx = g.rod_offset(i);
        let u = (lx + g.slab_width / 2.0) / g.slab_width;
        let ly = self.bow(u);
        [
            self.center[0] + self.cos_t * lx - self.sin_t * ly,
            self.center[1] + self.sin_t * lx + self.cos_t * ly,
        ]
    }
}

/// Ground-truth label map of the deformed phantom placed on `grid`.
pub fn rasterize_phantom(
    geometry: &PhantomGeometry,
    deformation: &DeformationSpec,
    grid: &ImageGrid,
    center: [f64; 3],
) -> Result<LabelMap, SynthError> {
    geometry.validate()?;
    deformation.validate(geometry)?;
    let solid = PhantomSolid::new(geometry.clone(), deformation.clone(), center);
    let [nx, ny, nz] = grid.dims();
    let slice_len = grid.slice_len();
    let mut labels = vec![BACKGROUND; grid.len()];
    labels.par_chunks_mut(slice_len).enumerate().for_each(|(z, slice)| {
        for y in 0..ny {
            for x in 0..nx {
                slice[x + nx * y] = solid.classify(grid.world(x, y, z));
            }
        }
    });
    debug_assert_eq!(labels.len(), nx * ny * nz);
    if labels.iter().all(|&c| c == BACKGROUND) {
        return Err(SynthError::SlabOutsideGrid);
    }
    Ok(LabelMap::new(grid.clone(), labels)?)
}

/// Ground truth for a case spec.
pub fn ground_truth(spec: &CaseSpec) -> Result<LabelMap, SynthError> {
    rasterize_phantom(&spec.geometry, &spec.deformation, &spec.grid, spec.phantom_center())
}

fn inside_ellipse(dx: f64, dy: f64, a: f64, b: f64) -> bool {
    (dx / a).powi(2) + (dy / b).powi(2) <= 1.0
}

/// Separable Gaussian blur with edge clamping; `sigma` per axis in voxels.
fn gaussian_blur(data: &mut [f64], dims: [usize; 3], sigma: [f64; 3]) {
    for axis in 0..3 {
        if sigma[axis] <= 0.0 || dims[axis] == 1 {
            continue;
        }
        let radius = (4.0 * sigma[axis]).ceil() as isize;
        let mut kernel: Vec<f64> = (-radius..=radius)
            .map(|k| (-(k * k) as f64 / (2.0 * sigma[axis] * sigma[axis])).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|w| *w /= norm);

        let n = dims[axis];
        let stride = match axis {
            0 => 1,
            1 => dims[0],
            _ => dims[0] * dims[1],
        };
        let lines: Vec<usize> = (0..data.len()).filter(|i| (i / stride) % n == 0).collect();
        let src = data.to_vec();
        let mut line = vec![0.0; n];
        for start in lines {
            for (i, out) in line.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let j = (i as isize + k as isize - radius).clamp(0, n as isize - 1) as usize;
                    acc += w * src[start + j * stride];
                }
                *out = acc;
            }
            for (i, v) in line.iter().enumerate() {
                data[start + i * stride] = *v;
            }
        }
    }
}

/// Continuous HU field for a case (before 16-bit quantization).
///
/// Order of operations: scanner law on material densities (air fixed at
/// -1000 HU), Gaussian blur, additive noise, artifacts, clamp to the CT
/// range.
pub fn render_field(gt: &LabelMap, spec: &CaseSpec) -> Result<HuField, SynthError> {
    spec.validate()?;
    gt.grid().ensure_compatible(&spec.grid)?;
    let grid = gt.grid();
    let [nx, ny, nz] = grid.dims();
    let scanner = &spec.scanner;
    let body = &spec.body;
    let bc = spec.body_center();

    let mut field = vec![0.0; grid.len()];
    for (i, (out, &code)) in field.iter_mut().zip(gt.data()).enumerate() {
        *out = if let Some(region) = Region::from_code(code) {
            scanner.hu(spec.geometry.density(region))
        } else {
            let [x, y, z] = grid.coords(i);
            let p = grid.world(x, y, z);
            let (dx, dy, dz) = (p[0] - bc[0], p[1] - bc[1], p[2] - bc[2]);
            let bs = body.bone_semi_axes;
            if (dx / bs[0]).powi(2) + (dy / bs[1]).powi(2) + (dz / bs[2]).powi(2) <= 1.0 {
                scanner.hu(body.bone)
            } else if inside_ellipse(dx, dy, body.semi_axes[0], body.semi_axes[1]) {
                scanner.hu(body.soft_tissue)
            } else {
                AIR_HU
            }
        };
    }

    if scanner.kernel_blur_sd > 0.0 {
        let sigma = grid.spacing().map(|s| scanner.kernel_blur_sd / s);
        gaussian_blur(&mut field, [nx, ny, nz], sigma);
    }

    if scanner.noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scanner.seed);
        let noise = Normal::new(0.0, scanner.noise_sd).map_err(|e| SynthError::Scanner(e.to_string()))?;
        for v in field.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }

    if let Some(streaks) = &spec.artifacts.metal_streaks {
        add_metal_streaks(&mut field, grid, streaks, [bc[0], bc[1]]);
    }
    if let Some(halation) = &spec.artifacts.halation {
        add_halation(&mut field, grid, halation, spec);
    }

    field.iter_mut().for_each(|v| *v = v.clamp(HU_MIN, HU_MAX));
    Ok(Volume::new(grid.clone(), field)?)
}

fn add_metal_streaks(field: &mut [f64], grid: &ImageGrid, s: &MetalStreaks, source: [f64; 2]) {
    if s.count == 0 {
        return;
    }
    let [nx, ny, nz] = grid.dims();
    let dirs: Vec<(f64, f64)> = (0..s.count)
        .map(|k| {
            let theta = std::f64::consts::PI * (k as f64 + 0.5) / s.count as f64;
            (theta.cos(), theta.sin())
        })
        .collect();
    for z in s.slices.0..s.slices.1.min(nz) {
        for y in 0..ny {
            for x in 0..nx {
                let p = grid.world(x, y, z);
                let (dx, dy) = (p[0] - source[0], p[1] - source[1]);
                // Perpendicular distance to each line through the source.
                if dirs.iter().any(|(c, sn)| (dx * sn - dy * c).abs() <= s.width / 2.0) {
                    field[grid.index(x, y, z)] += s.amplitude;
                }
            }
        }
    }
}

/// Voxels covered by the streak pattern of `spec` (used by tests and
/// diagnostics).
pub fn metal_streak_mask(spec: &CaseSpec) -> Option<Vec<bool>> {
    let s = spec.artifacts.metal_streaks.as_ref()?;
    let mut field = vec![0.0; spec.grid.len()];
    let bc = spec.body_center();
    let marker = MetalStreaks {
        amplitude: 1.0,
        ..s.clone()
    };
    add_metal_streaks(&mut field, &spec.grid, &marker, [bc[0], bc[1]]);
    Some(field.into_iter().map(|v| v > 0.0).collect())
}

fn add_halation(field: &mut [f64], grid: &ImageGrid, h: &HalationPatches, spec: &CaseSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.scanner.seed ^ 0x6a09_e667_f3bc_c908);
    let c = spec.phantom_center();
    let g = &spec.geometry;
    let [nx, ny, nz] = grid.dims();
    let (z0, z1) = (grid.origin()[2], grid.origin()[2] + (nz - 1) as f64 * grid.spacing()[2]);
    for _ in 0..h.count {
        let px = c[0] + rng.random_range(-0.5..0.5) * g.slab_width;
        let py = c[1] - g.slab_height / 2.0 + rng.random_range(-0.25..0.5) * g.slab_height;
        let pz = if z1 > z0 { rng.random_range(z0..=z1) } else { z0 };
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = grid.world(x, y, z);
                    let d2 = ((p[0] - px).powi(2) + (p[1] - py).powi(2) + (p[2] - pz).powi(2)) / (h.radius * h.radius);
                    if d2 < 1.0 {
                        field[grid.index(x, y, z)] += h.amplitude * (1.0 - d2).powi(2);
                    }
                }
            }
        }
    }
}

/// Rounds a continuous field to the stored 16-bit CT image.
pub fn quantize(field: &HuField) -> Result<HuVolume, VolumeError> {
    field.map(|v| v.clamp(HU_MIN, HU_MAX).round() as i16)
}

/// Rendered CT image for ground truth `gt` under `spec`.
pub fn render_ct(gt: &LabelMap, spec: &CaseSpec) -> Result<HuVolume, SynthError> {
    Ok(quantize(&render_field(gt, spec)?)?)
}

/// Per-case variation applied on top of a site template.
#[derive(Debug, Clone, PartialEq)]
pub struct Jitter {
    /// Relative half-range on alpha.
    pub alpha_rel: f64,
    /// Half-range on beta, HU.
    pub beta_hu: f64,
    /// Relative half-range on sagitta.
    pub sagitta_rel: f64,
    /// Half-range on tilt, degrees.
    pub tilt_deg: f64,
    /// Half-range on the in-plane phantom shift, mm.
    pub shift_mm: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            alpha_rel: 0.005,
            beta_hu: 0.5,
            sagitta_rel: 0.5,
            tilt_deg: 2.0,
            shift_mm: 2.0,
        }
    }
}

impl Jitter {
    pub fn none() -> Self {
        Self {
            alpha_rel: 0.0,
            beta_hu: 0.0,
            sagitta_rel: 0.0,
            tilt_deg: 0.0,
            shift_mm: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SiteSpec {
    pub tag: String,
    pub template: CaseSpec,
    pub count: usize,
    pub jitter: Jitter,
}

/// Deterministic per-case seed: FNV-1a over the master seed and case id,
/// finished with a SplitMix64 mix.
pub fn case_seed(master_seed: u64, case_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in master_seed.to_le_bytes().iter().chain(case_id.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn sym(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

/// Case spec for `case_id`, jittered from the site template.
pub fn jittered_case(site: &SiteSpec, case_id: &str, master_seed: u64) -> CaseSpec {
    let seed = case_seed(master_seed, case_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = &site.jitter;
    let mut spec = site.template.clone();
    spec.scanner.alpha *= 1.0 + sym(&mut rng, j.alpha_rel);
    spec.scanner.beta += sym(&mut rng, j.beta_hu);
    spec.scanner.seed = seed;
    spec.deformation.sagitta *= 1.0 + sym(&mut rng, j.sagitta_rel);
    spec.deformation.sagitta = spec
        .deformation
        .sagitta
        .clamp(-spec.geometry.slab_height, spec.geometry.slab_height);
    spec.deformation.axial_tilt = (spec.deformation.axial_tilt + sym(&mut rng, j.tilt_deg)).clamp(-15.0, 15.0);
    spec.shift[0] += sym(&mut rng, j.shift_mm);
    spec.shift[1] += sym(&mut rng, j.shift_mm);
    spec
}

/// One generated case as listed in the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub case_id: String,
    pub site: String,
    pub volume_path: PathBuf,
    pub label_path: PathBuf,
    pub alpha: f64,
    pub beta: f64,
    pub noise_sd: f64,
    pub sagitta: f64,
}

impl ManifestRecord {
    pub fn true_slope(&self) -> f64 {
        1.0 / self.alpha
    }

    pub fn true_intercept(&self) -> f64 {
        -self.beta / self.alpha
    }
}

/// Tab-separated case list. Paths are stored relative to the manifest's
/// directory and resolved against it on read.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.case_id,
                r.site,
                r.volume_path.display(),
                r.label_path.display(),
                r.alpha,
                r.beta,
                r.noise_sd,
                r.sagitta
            );
        }
        s
    }

    /// Reads a manifest; relative paths are joined onto its directory.
    pub fn read(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path).map_err(|source| VolumeError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let err = |line: usize, msg: String| SynthError::Manifest {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 8 {
                return Err(err(i + 1, format!("expected 8 columns, found {}", cols.len())));
            }
            let num = |k: usize| {
                cols[k]
                    .parse::<f64>()
                    .map_err(|_| err(i + 1, format!("bad number '{}'", cols[k])))
            };
            records.push(ManifestRecord {
                case_id: cols[0].to_string(),
                site: cols[1].to_string(),
                volume_path: base.join(cols[2]),
                label_path: base.join(cols[3]),
                alpha: num(4)?,
                beta: num(5)?,
                noise_sd: num(6)?,
                sagitta: num(7)?,
            });
        }
        let mut ids: Vec<&str> = records.iter().map(|r| r.case_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(err(0, "duplicate case ids".into()));
        }
        Ok(Self { records })
    }
}

/// Manifest file name inside a dataset directory.
pub const MANIFEST_NAME: &str = "manifest.tsv";

/// Generates every case of every site into `out_dir` and writes
/// `manifest.tsv`. Case ids are `<site><index:03>`.
pub fn generate_dataset(sites: &[SiteSpec], out_dir: &Path, master_seed: u64) -> Result<DatasetManifest, SynthError> {
    let mut tags: Vec<&str> = sites.iter().map(|s| s.tag.as_str()).collect();
    tags.sort_unstable();
    if tags.windows(2).any(|w| w[0] == w[1]) {
        return Err(SynthError::Dataset("duplicate site tags".into()));
    }
    if let Some(s) = sites
        .iter()
        .find(|s| s.tag.is_empty() || s.tag.contains(char::is_whitespace))
    {
        return Err(SynthError::Dataset(format!("invalid site tag '{}'", s.tag)));
    }
    for s in sites {
        s.template.validate()?;
    }
    fs::create_dir_all(out_dir).map_err(|source| VolumeError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let jobs: Vec<(&SiteSpec, String)> = sites
        .iter()
        .flat_map(|s| (0..s.count).map(move |i| (s, format!("{}{:03}", s.tag, i))))
        .collect();

    let records = jobs
        .par_iter()
        .map(|(site, id)| -> Result<ManifestRecord, SynthError> {
            let spec = jittered_case(site, id, master_seed);
            let gt = ground_truth(&spec)?;
            let ct = render_ct(&gt, &spec)?;
            let volume_name = format!("{id}.mhd");
            let label_name = format!("{id}_label.mhd");
            write_volume(&ct, &out_dir.join(&volume_name))?;
            write_volume(&gt, &out_dir.join(&label_name))?;
            let params = out_dir.join(format!("{id}.params"));
            fs::write(
                &params,
                format!("case_id = {id}\nsite = {}\n{}", site.tag, spec.to_record()),
            )
            .map_err(|source| VolumeError::Io { path: params, source })?;
            Ok(ManifestRecord {
                case_id: id.clone(),
                site: site.tag.clone(),
                volume_path: PathBuf::from(volume_name),
                label_path: PathBuf::from(label_name),
                alpha: spec.scanner.alpha,
                beta: spec.scanner.beta,
                noise_sd: spec.scanner.noise_sd,
                sagitta: spec.deformation.sagitta,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let manifest = DatasetManifest { records };
    let path = out_dir.join(MANIFEST_NAME);
    fs::write(&path, manifest.to_tsv()).map_err(|source| VolumeError::Io { path, source })?;
    Ok(manifest)
}
