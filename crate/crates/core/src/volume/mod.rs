//! Voxel grid data model shared by every stage of the pipeline.
//!
//! All volumes store samples densely in x-fastest, z-slowest order:
//! `index(x, y, z) = x + nx * (y + ny * z)`.

mod metaimage;

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub use metaimage::{
    read_density, read_hu, read_labels, read_volume, write_volume, AnyVolume, ElementType, MetaElement,
};

/// Label code of voxels outside the phantom.
pub const BACKGROUND: u8 = 0;

/// Componentwise tolerance (mm) when comparing voxel spacings.
pub const SPACING_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("voxel count {actual} does not match grid ({expected} voxels)")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("label code {code} at voxel {index} is outside 0-5")]
    InvalidLabel { code: u8, index: usize },
    #[error("invalid region code {0}: expected 1-5")]
    InvalidRegionCode(u8),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Header { path: PathBuf, msg: String },
    #[error("{}: data file holds {actual} bytes, expected {expected}", path.display())]
    DataSize {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{}: unsupported element type {element_type}", path.display())]
    UnsupportedElementType { path: PathBuf, element_type: String },
    #[error("{}: expected a {expected} volume, found {found}", path.display())]
    WrongKind {
        path: PathBuf,
        expected: &'static str,
        found: &'static str,
    },
}

/// Voxel lattice geometry: extent, physical spacing and world position.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
}

impl ImageGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self, VolumeError> {
        if dims.contains(&0) {
            return Err(VolumeError::InvalidGrid(format!("dims {dims:?} must all be >= 1")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(VolumeError::InvalidGrid(format!("spacing {spacing:?} must all be > 0")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(VolumeError::InvalidGrid(format!("origin {origin:?} must be finite")));
        }
        if dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).is_none() {
            return Err(VolumeError::InvalidGrid(format!("dims {dims:?} overflow")));
        }
        Ok(Self { dims, spacing, origin })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    /// Total voxel count.
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Voxels per axial (constant-z) slice.
    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// World position (mm) of the center of voxel `(x, y, z)`.
    #[inline]
    pub fn world(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            self.origin[0] + x as f64 * self.spacing[0],
            self.origin[1] + y as f64 * self.spacing[1],
            self.origin[2] + z as f64 * self.spacing[2],
        ]
    }

    /// Equal dims and spacings within [`SPACING_TOLERANCE`].
    pub fn is_compatible(&self, other: &ImageGrid) -> bool {
        self.dims == other.dims
            && self
                .spacing
                .iter()
                .zip(other.spacing.iter())
                .all(|(a, b)| (a - b).abs() <= SPACING_TOLERANCE)
    }

    pub fn ensure_compatible(&self, other: &ImageGrid) -> Result<(), VolumeError> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(VolumeError::GridMismatch(format!(
                "dims {:?} spacing {:?} vs dims {:?} spacing {:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }

    /// Same grid with every spacing multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, VolumeError> {
        Self::new(self.dims, self.spacing.map(|s| s * factor), self.origin)
    }
}

/// A sample type that can live in a [`Volume`].
pub trait Voxel: Copy + PartialEq + Send + Sync + fmt::Debug + 'static {
    fn to_f64(self) -> f64;

    /// Whether the value is admissible for this voxel type.
    fn is_valid(self) -> bool {
        true
    }
}

impl Voxel for i16 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Voxel for u8 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn is_valid(self) -> bool {
        self <= Region::MAX_CODE
    }
}

impl Voxel for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Voxel for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense 3D sample grid. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    grid: ImageGrid,
    data: Vec<T>,
}

/// CT image in signed 16-bit HU.
pub type HuVolume = Volume<i16>;
/// Continuous (unquantized) HU field, used by the synthetic renderer.
pub type HuField = Volume<f64>;
/// Phantom region codes: 0 background, 1 base, 2-5 rods.
pub type LabelMap = Volume<u8>;
/// Calibrated equivalent density in mg/cm³.
pub type DensityVolume = Volume<f32>;

impl<T: Voxel> Volume<T> {
    pub fn new(grid: ImageGrid, data: Vec<T>) -> Result<Self, VolumeError> {
        if data.len() != grid.len() {
            return Err(VolumeError::LengthMismatch {
                expected: grid.len(),
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_valid()) {
            return Err(VolumeError::InvalidLabel {
                code: data[index].to_f64() as u8,
                index,
            });
        }
        Ok(Self { grid, data })
    }

    /// Volume with every voxel set to `value`.
    ///
    /// Panics if `value` is not admissible for `T`.
    pub fn filled(grid: ImageGrid, value: T) -> Self {
        assert!(value.is_valid(), "inadmissible fill value {value:?}");
        let data = vec![value; grid.len()];
        Self { grid, data }
    }

    /// Builds a volume by evaluating `f(x, y, z)` in storage order.
    pub fn from_fn(grid: ImageGrid, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self, VolumeError> {
        let [nx, ny, nz] = grid.dims();
        let mut data = Vec::with_capacity(grid.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(grid, data)
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.grid.index(x, y, z)]
    }

    /// Samples of axial slice `z`, x-fastest.
    pub fn slice(&self, z: usize) -> &[T] {
        let n = self.grid.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn map<U: Voxel>(&self, f: impl Fn(T) -> U) -> Result<Volume<U>, VolumeError> {
        Volume::new(self.grid.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Same samples on a different grid with equal dims.
    pub fn with_grid(self, grid: ImageGrid) -> Result<Self, VolumeError> {
        Self::new(grid, self.data)
    }
}

impl LabelMap {
    /// Number of voxels carrying `code`.
    pub fn count(&self, code: u8) -> usize {
        self.data.iter().filter(|&&c| c == code).count()
    }
}

/// Binary mask (1 where `m == code`, else 0) for a phantom region code.
pub fn binary_mask(m: &LabelMap, code: u8) -> Result<LabelMap, VolumeError> {
    Region::from_code(code).ok_or(VolumeError::InvalidRegionCode(code))?;
    Ok(Volume {
        grid: m.grid.clone(),
        data: m.data.iter().map(|&c| u8::from(c == code)).collect(),
    })
}

/// The five materials of the calibration phantom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Region {
    /// Urethane foam, 0 mg/cm³.
    Base = 1,
    Rod50 = 2,
    Rod100 = 3,
    Rod150 = 4,
    Rod200 = 5,
}

impl Region {
    pub const ALL: [Region; 5] = [
        Region::Base,
        Region::Rod50,
        Region::Rod100,
        Region::Rod150,
        Region::Rod200,
    ];
    pub const RODS: [Region; 4] = [Region::Rod50, Region::Rod100, Region::Rod150, Region::Rod200];
    pub const MAX_CODE: u8 = 5;

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Region> {
        match code {
            1 => Some(Region::Base),
            2 => Some(Region::Rod50),
            3 => Some(Region::Rod100),
            4 => Some(Region::Rod150),
            5 => Some(Region::Rod200),
            _ => None,
        }
    }

    /// Nominal hydroxyapatite-equivalent density in mg/cm³.
    pub fn density(self) -> f64 {
        match self {
            Region::Base => 0.0,
            Region::Rod50 => 50.0,
            Region::Rod100 => 100.0,
            Region::Rod150 => 150.0,
            Region::Rod200 => 200.0,
        }
    }

    /// Zero-based slot in [`Region::ALL`].
    pub fn slot(self) -> usize {
        self as usize - 1
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Base => f.write_str("base"),
            rod => write!(f, "rod{}", rod.density()),
        }
    }
}

/// The five nominal densities in label order.
pub fn phantom_densities() -> [f64; 5] {
    Region::ALL.map(Region::density)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(dims: [usize; 3]) -> ImageGrid {
        ImageGrid::new(dims, [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn grid_rejects_degenerate_geometry() {
        assert!(ImageGrid::new([0, 1, 1], [1.0; 3], [0.0; 3]).is_err());
        assert!(ImageGrid::new([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
        assert!(ImageGrid::new([1, 1, 1], [1.0, -1.0, 1.0], [0.0; 3]).is_err());
    }

    #[test]
    fn compatibility_tolerates_tiny_spacing_drift() {
        let a = ImageGrid::new([4, 4, 4], [0.8, 0.8, 1.0], [0.0; 3]).unwrap();
        let b = ImageGrid::new([4, 4, 4], [0.8 + 5e-7, 0.8, 1.0], [3.0; 3]).unwrap();
        let c = ImageGrid::new([4, 4, 4], [0.8 + 5e-6, 0.8, 1.0], [0.0; 3]).unwrap();
        let d = ImageGrid::new([4, 4, 5], [0.8, 0.8, 1.0], [0.0; 3]).unwrap();
        assert!(a.is_compatible(&b));
        assert!(!a.is_compatible(&c));
        assert!(!a.is_compatible(&d));
    }

    #[test]
    fn label_maps_reject_codes_above_five() {
        let err = LabelMap::new(grid([2, 1, 1]), vec![0, 6]).unwrap_err();
        assert!(matches!(err, VolumeError::InvalidLabel { code: 6, index: 1 }));
    }

    #[test]
    fn binary_mask_examples() {
        let g = grid([3, 3, 1]);
        let empty = LabelMap::filled(g.clone(), 0);
        assert_eq!(binary_mask(&empty, 2).unwrap().count(1), 0);

        let full = LabelMap::filled(g.clone(), 3);
        assert_eq!(binary_mask(&full, 3).unwrap().count(1), 9);

        let mixed = LabelMap::new(g, vec![0, 1, 2, 2, 3, 2, 5, 4, 2]).unwrap();
        assert_eq!(binary_mask(&mixed, 2).unwrap().count(1), 4);
        assert!(matches!(binary_mask(&mixed, 0), Err(VolumeError::InvalidRegionCode(0))));
        assert!(matches!(binary_mask(&mixed, 6), Err(VolumeError::InvalidRegionCode(6))));
    }

    proptest! {
        #[test]
        fn linear_index_follows_x_fastest_iteration(nx in 1usize..6, ny in 1usize..6, nz in 1usize..6) {
            let g = grid([nx, ny, nz]);
            let mut expected = 0;
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        prop_assert_eq!(g.index(x, y, z), expected);
                        prop_assert_eq!(g.coords(expected), [x, y, z]);
                        expected += 1;
                    }
                }
            }
        }

        #[test]
        fn region_masks_partition_foreground(labels in proptest::collection::vec(0u8..=5, 27)) {
            let m = LabelMap::new(grid([3, 3, 3]), labels.clone()).unwrap();
            let total: usize = (1..=5).map(|c| binary_mask(&m, c).unwrap().count(1)).sum();
            prop_assert_eq!(total, labels.iter().filter(|&&c| c != 0).count());
        }
    }
}
