//! MetaImage (`.mhd` header + `.raw` data) reader and writer.
//!
//! Writers emit exactly these keys, in this order:
//!
//! ```text
//! ObjectType = Image
//! NDims = 3
//! BinaryData = True
//! BinaryDataByteOrderMSB = False
//! DimSize = nx ny nz
//! ElementSpacing = sx sy sz
//! Offset = ox oy oz
//! ElementType = MET_SHORT | MET_UCHAR | MET_FLOAT
//! ElementDataFile = <name>.raw
//! ```
//!
//! Reals are printed as the shortest decimal that parses back to the same
//! `f64`. Readers ignore unknown keys.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{DensityVolume, HuVolume, ImageGrid, LabelMap, Volume, VolumeError, Voxel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    Short,
    UChar,
    Float,
}

impl ElementType {
    pub fn name(self) -> &'static str {
        match self {
            ElementType::Short => "MET_SHORT",
            ElementType::UChar => "MET_UCHAR",
            ElementType::Float => "MET_FLOAT",
        }
    }

    pub fn size(self) -> usize {
        match self {
            ElementType::Short => 2,
            ElementType::UChar => 1,
            ElementType::Float => 4,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "MET_SHORT" => Some(ElementType::Short),
            "MET_UCHAR" => Some(ElementType::UChar),
            "MET_FLOAT" => Some(ElementType::Float),
            _ => None,
        }
    }
}

/// Voxel types with a MetaImage on-disk representation.
pub trait MetaElement: Voxel {
    const ELEMENT_TYPE: ElementType;

    fn put_le(self, out: &mut Vec<u8>);

    /// Decodes one element from exactly `ELEMENT_TYPE.size()` bytes.
    fn from_bytes(bytes: &[u8], big_endian: bool) -> Self;
}

impl MetaElement for i16 {
    const ELEMENT_TYPE: ElementType = ElementType::Short;

    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_bytes(bytes: &[u8], big_endian: bool) -> Self {
        let b = [bytes[0], bytes[1]];
        if big_endian {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }
}

impl MetaElement for u8 {
    const ELEMENT_TYPE: ElementType = ElementType::UChar;

    fn put_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }

    fn from_bytes(bytes: &[u8], _big_endian: bool) -> Self {
        bytes[0]
    }
}

impl MetaElement for f32 {
    const ELEMENT_TYPE: ElementType = ElementType::Float;

    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_bytes(bytes: &[u8], big_endian: bool) -> Self {
        let b = [bytes[0], bytes[1], bytes[2], bytes[3]];
        if big_endian {
            f32::from_be_bytes(b)
        } else {
            f32::from_le_bytes(b)
        }
    }
}

/// A volume decoded from disk, tagged by element type.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    Hu(HuVolume),
    Labels(LabelMap),
    Density(DensityVolume),
}

impl AnyVolume {
    pub fn grid(&self) -> &ImageGrid {
        match self {
            AnyVolume::Hu(v) => v.grid(),
            AnyVolume::Labels(v) => v.grid(),
            AnyVolume::Density(v) => v.grid(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            AnyVolume::Hu(_) => "MET_SHORT",
            AnyVolume::Labels(_) => "MET_UCHAR",
            AnyVolume::Density(_) => "MET_FLOAT",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VolumeError + '_ {
    move |source| VolumeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn header_err(path: &Path, msg: impl Into<String>) -> VolumeError {
    VolumeError::Header {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn fmt_triple<T: std::fmt::Display>(v: [T; 3]) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

/// Path of the raw data file that accompanies header `path`.
fn raw_path(path: &Path) -> PathBuf {
    path.with_extension("raw")
}

/// Writes `v` as `path` (header) plus a sibling `.raw` file.
pub fn write_volume<T: MetaElement>(v: &Volume<T>, path: &Path) -> Result<(), VolumeError> {
    let raw = raw_path(path);
    let raw_name = raw
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| header_err(path, "header path has no usable file name"))?;
    let g = v.grid();
    let header = format!(
        "ObjectType = Image\n\
         NDims = 3\n\
         BinaryData = True\n\
         BinaryDataByteOrderMSB = False\n\
         DimSize = {}\n\
         ElementSpacing = {}\n\
         Offset = {}\n\
         ElementType = {}\n\
         ElementDataFile = {}\n",
        fmt_triple(g.dims()),
        fmt_triple(g.spacing()),
        fmt_triple(g.origin()),
        T::ELEMENT_TYPE.name(),
        raw_name,
    );
    let mut bytes = Vec::with_capacity(v.data().len() * T::ELEMENT_TYPE.size());
    for &sample in v.data() {
        sample.put_le(&mut bytes);
    }
    fs::write(&raw, bytes).map_err(io_err(&raw))?;
    fs::write(path, header).map_err(io_err(path))?;
    Ok(())
}

struct Header {
    grid: ImageGrid,
    element_type: ElementType,
    big_endian: bool,
    data_file: PathBuf,
}

fn parse_triple<T: std::str::FromStr>(path: &Path, key: &str, value: &str) -> Result<[T; 3], VolumeError> {
    let parts: Vec<T> = value
        .split_whitespace()
        .map(|s| s.parse::<T>())
        .collect::<Result<_, _>>()
        .map_err(|_| header_err(path, format!("{key}: cannot parse '{value}'")))?;
    <[T; 3]>::try_from(parts).map_err(|_| header_err(path, format!("{key}: expected 3 values, got '{value}'")))
}

fn parse_bool(path: &Path, key: &str, value: &str) -> Result<bool, VolumeError> {
    match value.to_ascii_lowercase().as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(header_err(
            path,
            format!("{key}: expected True or False, got '{value}'"),
        )),
    }
}

fn parse_header(path: &Path) -> Result<Header, VolumeError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut fields: HashMap<&str, &str> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| header_err(path, format!("line {}: expected 'Key = Value'", lineno + 1)))?;
        fields.insert(key.trim(), value.trim());
    }
    let require = |key: &str| {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| header_err(path, format!("missing {key}")))
    };

    let ndims: usize = require("NDims")?
        .parse()
        .map_err(|_| header_err(path, "NDims: not an integer"))?;
    if ndims != 3 {
        return Err(header_err(path, format!("NDims = {ndims}, only 3 is supported")));
    }
    if let Some(v) = fields.get("BinaryData") {
        if !parse_bool(path, "BinaryData", v)? {
            return Err(header_err(path, "ASCII data is not supported"));
        }
    }
    if let Some(v) = fields.get("CompressedData") {
        if parse_bool(path, "CompressedData", v)? {
            return Err(header_err(path, "compressed data is not supported"));
        }
    }
    if let Some(v) = fields.get("ElementNumberOfChannels") {
        if v.trim() != "1" {
            return Err(header_err(path, "multi-channel data is not supported"));
        }
    }
    let big_endian = match fields
        .get("BinaryDataByteOrderMSB")
        .or(fields.get("ElementByteOrderMSB"))
    {
        Some(v) => parse_bool(path, "BinaryDataByteOrderMSB", v)?,
        None => false,
    };
    let dims: [usize; 3] = parse_triple(path, "DimSize", require("DimSize")?)?;
    let spacing: [f64; 3] = match fields.get("ElementSpacing") {
        Some(v) => parse_triple(path, "ElementSpacing", v)?,
        None => [1.0; 3],
    };
    let origin: [f64; 3] = match fields.get("Offset").or(fields.get("Origin")).or(fields.get("Position")) {
        Some(v) => parse_triple(path, "Offset", v)?,
        None => [0.0; 3],
    };
    let grid = ImageGrid::new(dims, spacing, origin).map_err(|e| header_err(path, e.to_string()))?;

    let type_name = require("ElementType")?;
    let element_type = ElementType::parse(type_name).ok_or_else(|| VolumeError::UnsupportedElementType {
        path: path.to_path_buf(),
        element_type: type_name.to_string(),
    })?;

    let data_name = require("ElementDataFile")?;
    if data_name.eq_ignore_ascii_case("LOCAL") || data_name.contains(' ') {
        return Err(header_err(
            path,
            format!("ElementDataFile = {data_name} is not supported"),
        ));
    }
    let data_file = path.parent().unwrap_or(Path::new("")).join(data_name);

    Ok(Header {
        grid,
        element_type,
        big_endian,
        data_file,
    })
}

fn decode<T: MetaElement>(header: &Header, bytes: &[u8]) -> Result<Volume<T>, VolumeError> {
    let size = T::ELEMENT_TYPE.size();
    let data = bytes
        .chunks_exact(size)
        .map(|c| T::from_bytes(c, header.big_endian))
        .collect();
    Volume::new(header.grid.clone(), data)
}

/// Reads a MetaImage header and its data file.
///
/// `MET_SHORT` decodes to HU, `MET_UCHAR` to a label map (codes must be 0-5),
/// `MET_FLOAT` to a density volume.
pub fn read_volume(path: &Path) -> Result<AnyVolume, VolumeError> {
    let header = parse_header(path)?;
    let bytes = fs::read(&header.data_file).map_err(io_err(&header.data_file))?;
    let expected = header.grid.len() * header.element_type.size();
    if bytes.len() != expected {
        return Err(VolumeError::DataSize {
            path: header.data_file.clone(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(match header.element_type {
        ElementType::Short => AnyVolume::Hu(decode(&header, &bytes)?),
        ElementType::UChar => AnyVolume::Labels(decode(&header, &bytes)?),
        ElementType::Float => AnyVolume::Density(decode(&header, &bytes)?),
    })
}

fn wrong_kind(path: &Path, expected: &'static str, found: &AnyVolume) -> VolumeError {
    VolumeError::WrongKind {
        path: path.to_path_buf(),
        expected,
        found: found.kind(),
    }
}

pub fn read_hu(path: &Path) -> Result<HuVolume, VolumeError> {
    match read_volume(path)? {
        AnyVolume::Hu(v) => Ok(v),
        other => Err(wrong_kind(path, "MET_SHORT", &other)),
    }
}

pub fn read_labels(path: &Path) -> Result<LabelMap, VolumeError> {
    match read_volume(path)? {
        AnyVolume::Labels(v) => Ok(v),
        other => Err(wrong_kind(path, "MET_UCHAR", &other)),
    }
}

pub fn read_density(path: &Path) -> Result<DensityVolume, VolumeError> {
    match read_volume(path)? {
        AnyVolume::Density(v) => Ok(v),
        other => Err(wrong_kind(path, "MET_FLOAT", &other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_short_file() {
        let dir = tempfile::tempdir().unwrap();
        let mhd = dir.path().join("one.mhd");
        fs::write(
            &mhd,
            "ObjectType = Image\nNDims = 3\nDimSize = 1 1 1\nElementType = MET_SHORT\nElementDataFile = one.raw\n",
        )
        .unwrap();
        fs::write(dir.path().join("one.raw"), (-1024i16).to_le_bytes()).unwrap();
        let v = read_hu(&mhd).unwrap();
        assert_eq!(v.data(), &[-1024]);
        assert_eq!(v.grid().spacing(), [1.0; 3]);
    }

    #[test]
    fn header_uses_shortest_decimals() {
        let dir = tempfile::tempdir().unwrap();
        let grid = ImageGrid::new([2, 1, 1], [0.8, 0.8, 1.0], [-0.4, 0.0, 12.5]).unwrap();
        let v = HuVolume::new(grid, vec![1, -2]).unwrap();
        let mhd = dir.path().join("ct.mhd");
        write_volume(&v, &mhd).unwrap();
        let text = fs::read_to_string(&mhd).unwrap();
        assert_eq!(
            text,
            "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\n\
             DimSize = 2 1 1\nElementSpacing = 0.8 0.8 1\nOffset = -0.4 0 12.5\n\
             ElementType = MET_SHORT\nElementDataFile = ct.raw\n"
        );
        assert_eq!(fs::read(dir.path().join("ct.raw")).unwrap(), vec![1, 0, 0xfe, 0xff]);
    }

    #[test]
    fn data_length_is_checked_against_dims() {
        let dir = tempfile::tempdir().unwrap();
        let mhd = dir.path().join("m.mhd");
        fs::write(
            &mhd,
            "NDims = 3\nDimSize = 4 4 4\nElementType = MET_UCHAR\nElementDataFile = m.raw\n",
        )
        .unwrap();
        fs::write(dir.path().join("m.raw"), [0u8; 100]).unwrap();
        match read_volume(&mhd) {
            Err(VolumeError::DataSize {
                expected: 64,
                actual: 100,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn garbled_and_unsupported_headers_fail() {
        let dir = tempfile::tempdir().unwrap();
        let mhd = dir.path().join("bad.mhd");
        fs::write(dir.path().join("bad.raw"), [0u8; 8]).unwrap();

        fs::write(
            &mhd,
            "NDims = 3\nDimSize = 2 2\nElementType = MET_UCHAR\nElementDataFile = bad.raw\n",
        )
        .unwrap();
        assert!(matches!(read_volume(&mhd), Err(VolumeError::Header { .. })));

        fs::write(
            &mhd,
            "NDims = 3\nDimSize = 2 2 2\nElementType = MET_DOUBLE\nElementDataFile = bad.raw\n",
        )
        .unwrap();
        assert!(matches!(
            read_volume(&mhd),
            Err(VolumeError::UnsupportedElementType { .. })
        ));

        fs::write(&mhd, "NDims = 3\nDimSize = 2 2 2\nElementDataFile = bad.raw\n").unwrap();
        assert!(matches!(read_volume(&mhd), Err(VolumeError::Header { .. })));

        fs::write(&mhd, "NDims = 3\nthis line is junk\n").unwrap();
        assert!(matches!(read_volume(&mhd), Err(VolumeError::Header { .. })));
    }

    #[test]
    fn label_files_with_invalid_codes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mhd = dir.path().join("m.mhd");
        fs::write(
            &mhd,
            "NDims = 3\nDimSize = 2 1 1\nElementType = MET_UCHAR\nElementDataFile = m.raw\nSomeExtraKey = hello\n",
        )
        .unwrap();
        fs::write(dir.path().join("m.raw"), [1u8, 7]).unwrap();
        assert!(matches!(
            read_volume(&mhd),
            Err(VolumeError::InvalidLabel { code: 7, .. })
        ));
    }

    #[test]
    fn big_endian_data_is_honored() {
        let dir = tempfile::tempdir().unwrap();
        let mhd = dir.path().join("be.mhd");
        fs::write(
            &mhd,
            "NDims = 3\nBinaryDataByteOrderMSB = True\nDimSize = 1 1 1\nElementType = MET_SHORT\nElementDataFile = be.raw\n",
        )
        .unwrap();
        fs::write(dir.path().join("be.raw"), 300i16.to_be_bytes()).unwrap();
        assert_eq!(read_hu(&mhd).unwrap().data(), &[300]);
    }

    #[test]
    fn identical_inputs_write_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let grid = ImageGrid::new([3, 2, 2], [0.8, 0.8, 1.0], [0.0; 3]).unwrap();
        let m = LabelMap::new(grid, (0..12).map(|i| (i % 6) as u8).collect()).unwrap();
        let a = dir.path().join("a.mhd");
        let b = dir.path().join("b.mhd");
        write_volume(&m, &a).unwrap();
        write_volume(&m, &b).unwrap();
        assert_eq!(
            fs::read(dir.path().join("a.raw")).unwrap(),
            fs::read(dir.path().join("b.raw")).unwrap()
        );
        let strip = |p: &Path| {
            fs::read_to_string(p)
                .unwrap()
                .replace("a.raw", "X")
                .replace("b.raw", "X")
        };
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn density_volumes_are_float() {
        let dir = tempfile::tempdir().unwrap();
        let grid = ImageGrid::new([1, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let d = DensityVolume::new(grid, vec![504.6]).unwrap();
        let p = dir.path().join("d.mhd");
        write_volume(&d, &p).unwrap();
        assert!(fs::read_to_string(&p).unwrap().contains("ElementType = MET_FLOAT\n"));
        assert_eq!(read_density(&p).unwrap(), d);
        assert!(matches!(read_hu(&p), Err(VolumeError::WrongKind { .. })));
    }
}
