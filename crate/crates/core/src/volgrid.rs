//! Volumetric grid types and their file I/O.
//!
//! Every module indexes volumes through the one linearization helper
//! [`Dims3::idx`]: x varies fastest, then y, then z. Files are a minimal
//! MetaImage-style text header plus a raw little-endian payload, which makes
//! round trips bit-exact without third-party format dependencies.
//!
//! Axis conventions used throughout: x = left-right, y = anteroposterior
//! (the DRR projection axis), z = inferior-superior.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{from_f64, Scalar};

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_LIVER: u8 = 1;
pub const LABEL_STOMACH: u8 = 2;
/// The declared label set; a [`LabelVolume`] never contains anything else.
pub const LABEL_SET: [u8; 3] = [LABEL_BACKGROUND, LABEL_LIVER, LABEL_STOMACH];

/// Voxel counts of a 3D grid.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Dims3 {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims3 {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    pub fn count(self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// The shared linearization: x fastest, then y, then z.
    #[inline(always)]
    pub fn idx(self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        (z * self.ny + y) * self.nx + x
    }

    pub fn extent(self, axis: usize) -> usize {
        match axis {
            0 => self.nx,
            1 => self.ny,
            2 => self.nz,
            _ => unreachable!("axis {axis}"),
        }
    }

    pub fn validate(self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::InvalidDims(format!(
                "{}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Regular 3D scalar grid of CT values (HU) with voxel spacing in mm.
///
/// Immutable after construction in normal use; construction validates that
/// the value count matches the dims, spacing is strictly positive and every
/// value is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeGrid<T> {
    dims: Dims3,
    spacing: [f32; 3],
    values: Vec<T>,
}

impl<T: Scalar> VolumeGrid<T> {
    pub fn new(dims: Dims3, spacing: [f32; 3], values: Vec<T>) -> Result<Self> {
        dims.validate()?;
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::Validation(format!("non-positive spacing {spacing:?}")));
        }
        if values.len() != dims.count() {
            return Err(Error::SizeMismatch {
                expected: dims.count(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        Ok(Self {
            dims,
            spacing,
            values,
        })
    }

    pub fn constant(dims: Dims3, spacing: [f32; 3], v: T) -> Result<Self> {
        Self::new(dims, spacing, vec![v; dims.count()])
    }

    /// Build from a per-voxel function, filled in parallel over z-slabs.
    pub fn from_fn(
        dims: Dims3,
        spacing: [f32; 3],
        f: impl Fn(usize, usize, usize) -> T + Sync,
    ) -> Result<Self> {
        dims.validate()?;
        let slab = dims.nx * dims.ny;
        let mut values = vec![T::zero(); dims.count()];
        values
            .par_chunks_mut(slab)
            .enumerate()
            .for_each(|(z, chunk)| {
                for y in 0..dims.ny {
                    for x in 0..dims.nx {
                        chunk[y * dims.nx + x] = f(x, y, z);
                    }
                }
            });
        Self::new(dims, spacing, values)
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Mutable access for gradient buffers and tests; callers keep the
    /// finiteness invariant.
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline(always)]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.values[self.dims.idx(x, y, z)]
    }

    pub fn min_max(&self) -> (T, T) {
        let mut lo = self.values[0];
        let mut hi = self.values[0];
        for &v in &self.values {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        (lo, hi)
    }

    pub fn cast<U: Scalar>(&self) -> VolumeGrid<U> {
        VolumeGrid {
            dims: self.dims,
            spacing: self.spacing,
            values: self
                .values
                .iter()
                .map(|&v| from_f64(crate::scalar::to_f64(v)))
                .collect(),
        }
    }

    pub fn same_dims(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimsMismatch(format!(
                "{} vs {}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}

/// Affine CT window [-1000, 1000] HU -> [0, 1], clamped.
///
/// Optimization-time similarity losses run on this normalized intensity so
/// the smoothness weight keeps its conventional scale; MAE reporting stays
/// in HU.
pub fn normalize_hu<T: Scalar>(v: &VolumeGrid<T>) -> VolumeGrid<T> {
    let lo = from_f64::<T>(-1000.0);
    let span = from_f64::<T>(2000.0);
    let one = T::one();
    let values = v
        .values()
        .iter()
        .map(|&h| ((h - lo) / span).max(T::zero()).min(one))
        .collect();
    VolumeGrid {
        dims: v.dims,
        spacing: v.spacing,
        values,
    }
}

/// Per-voxel organ labels paired with a [`VolumeGrid`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVolume {
    dims: Dims3,
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: Dims3, labels: Vec<u8>) -> Result<Self> {
        dims.validate()?;
        if labels.len() != dims.count() {
            return Err(Error::SizeMismatch {
                expected: dims.count(),
                found: labels.len(),
            });
        }
        if let Some(i) = labels.iter().position(|l| !LABEL_SET.contains(l)) {
            return Err(Error::Validation(format!(
                "label {} at index {i} outside declared set",
                labels[i]
            )));
        }
        Ok(Self { dims, labels })
    }

    pub fn from_fn(dims: Dims3, f: impl Fn(usize, usize, usize) -> u8 + Sync) -> Result<Self> {
        dims.validate()?;
        let slab = dims.nx * dims.ny;
        let mut labels = vec![0u8; dims.count()];
        labels
            .par_chunks_mut(slab)
            .enumerate()
            .for_each(|(z, chunk)| {
                for y in 0..dims.ny {
                    for x in 0..dims.nx {
                        chunk[y * dims.nx + x] = f(x, y, z);
                    }
                }
            });
        Self::new(dims, labels)
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline(always)]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.dims.idx(x, y, z)]
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// 2D image with values in [0, 1]; row-major, column fastest.
///
/// Houses DRRs and extracted slices. Rows run along z for projections and
/// coronal/sagittal slices, along y for axial slices.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D<T> {
    h: usize,
    w: usize,
    values: Vec<T>,
}

impl<T: Scalar> Image2D<T> {
    pub fn new(h: usize, w: usize, values: Vec<T>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::InvalidDims(format!("{h}x{w}")));
        }
        if values.len() != h * w {
            return Err(Error::SizeMismatch {
                expected: h * w,
                found: values.len(),
            });
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            if *v < T::zero() || *v > T::one() {
                return Err(Error::Validation(format!(
                    "image value {v} at index {i} outside [0, 1]"
                )));
            }
        }
        Ok(Self { h, w, values })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            values: vec![T::zero(); h * w],
        }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline(always)]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.w + col]
    }

    pub fn cast<U: Scalar>(&self) -> Image2D<U> {
        Image2D {
            h: self.h,
            w: self.w,
            values: self
                .values
                .iter()
                .map(|&v| from_f64(crate::scalar::to_f64(v)))
                .collect(),
        }
    }
}

/// Anatomical slice orientations.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SliceAxis {
    /// Fixed z; image rows run along y, columns along x.
    Axial,
    /// Fixed y; image rows run along z, columns along x.
    Coronal,
    /// Fixed x; image rows run along z, columns along y.
    Sagittal,
}

impl std::str::FromStr for SliceAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "axial" => Ok(SliceAxis::Axial),
            "coronal" => Ok(SliceAxis::Coronal),
            "sagittal" => Ok(SliceAxis::Sagittal),
            other => Err(Error::Validation(format!("unknown slice axis {other:?}"))),
        }
    }
}

/// Pull one plane out of a volume, min-max normalized to [0, 1].
///
/// Constant planes map to all zeros (the documented guard), so the result
/// always satisfies the [`Image2D`] invariants.
pub fn extract_slice<T: Scalar>(
    v: &VolumeGrid<T>,
    axis: SliceAxis,
    index: usize,
) -> Result<Image2D<T>> {
    let d = v.dims();
    let (h, w, extent) = match axis {
        SliceAxis::Axial => (d.ny, d.nx, d.nz),
        SliceAxis::Coronal => (d.nz, d.nx, d.ny),
        SliceAxis::Sagittal => (d.nz, d.ny, d.nx),
    };
    if index >= extent {
        return Err(Error::IndexOutOfRange { index, extent });
    }
    let mut raw = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let val = match axis {
                SliceAxis::Axial => v.get(col, row, index),
                SliceAxis::Coronal => v.get(col, index, row),
                SliceAxis::Sagittal => v.get(index, col, row),
            };
            raw.push(val);
        }
    }
    let lo = raw.iter().copied().fold(raw[0], T::min);
    let hi = raw.iter().copied().fold(raw[0], T::max);
    let values = if hi > lo {
        let span = hi - lo;
        raw.iter().map(|&v| (v - lo) / span).collect()
    } else {
        vec![T::zero(); h * w]
    };
    Image2D::new(h, w, values)
}

/// Clamp-to-edge trilinear sampling at a fractional coordinate.
///
/// The shared sampler behind the warp, rigid resampling and
/// [`resample_trilinear`]. Integer coordinates read the grid exactly.
#[inline]
pub fn sample_clamped<T: Scalar>(values: &[T], dims: Dims3, x: T, y: T, z: T) -> T {
    let (ix0, ix1, fx) = clamp_axis(x, dims.nx);
    let (iy0, iy1, fy) = clamp_axis(y, dims.ny);
    let (iz0, iz1, fz) = clamp_axis(z, dims.nz);
    let one = T::one();
    let gx = one - fx;
    let gy = one - fy;
    let gz = one - fz;

    let at = |x: usize, y: usize, z: usize| values[dims.idx(x, y, z)];
    let c00 = at(ix0, iy0, iz0) * gx + at(ix1, iy0, iz0) * fx;
    let c10 = at(ix0, iy1, iz0) * gx + at(ix1, iy1, iz0) * fx;
    let c01 = at(ix0, iy0, iz1) * gx + at(ix1, iy0, iz1) * fx;
    let c11 = at(ix0, iy1, iz1) * gx + at(ix1, iy1, iz1) * fx;
    (c00 * gy + c10 * fy) * gz + (c01 * gy + c11 * fy) * fz
}

/// Clamp a coordinate to [0, n-1] and split into lower cell + fraction.
#[inline]
pub(crate) fn clamp_axis<T: Scalar>(c: T, n: usize) -> (usize, usize, T) {
    let max = from_f64::<T>((n - 1) as f64);
    let c = c.max(T::zero()).min(max);
    let i0 = c.floor();
    let frac = c - i0;
    let i0 = crate::scalar::to_f64(i0) as usize;
    let i1 = if i0 + 1 < n { i0 + 1 } else { i0 };
    (i0, i1, frac)
}

/// Trilinear resample mapping the corner-aligned extent of `v` onto
/// `new_dims`; spacing is rescaled so the physical extent is preserved.
pub fn resample_trilinear<T: Scalar>(v: &VolumeGrid<T>, new_dims: Dims3) -> Result<VolumeGrid<T>> {
    new_dims.validate()?;
    let src = v.dims();
    let scale = |n_new: usize, n_src: usize| -> f64 {
        if n_new > 1 {
            (n_src - 1) as f64 / (n_new - 1) as f64
        } else {
            0.0
        }
    };
    let (sx, sy, sz) = (
        scale(new_dims.nx, src.nx),
        scale(new_dims.ny, src.ny),
        scale(new_dims.nz, src.nz),
    );
    let spacing_scale = |n_new: usize, n_src: usize, s: f32| -> f32 {
        if n_new > 1 {
            s * (n_src - 1) as f32 / (n_new - 1) as f32
        } else {
            s * n_src as f32
        }
    };
    let spacing = [
        spacing_scale(new_dims.nx, src.nx, v.spacing[0]),
        spacing_scale(new_dims.ny, src.ny, v.spacing[1]),
        spacing_scale(new_dims.nz, src.nz, v.spacing[2]),
    ];
    VolumeGrid::from_fn(new_dims, spacing, |x, y, z| {
        sample_clamped(
            v.values(),
            src,
            from_f64::<T>(x as f64 * sx),
            from_f64::<T>(y as f64 * sy),
            from_f64::<T>(z as f64 * sz),
        )
    })
}

// ---------------------------------------------------------------------------
// File I/O: text header + raw little-endian payload.
//
// Header keys: NDims, DimSize, ElementSpacing, ElementType, ByteOrder,
// DataFile. Payloads are IEEE-754 binary32 (MET_FLOAT) or bytes (MET_UCHAR),
// x-fastest, written next to the header.
// ---------------------------------------------------------------------------

pub(crate) const ELEMENT_FLOAT: &str = "MET_FLOAT";
pub(crate) const ELEMENT_UCHAR: &str = "MET_UCHAR";

pub(crate) struct RawHeader {
    pub ndims: usize,
    pub dim_size: Vec<usize>,
    pub spacing: Vec<f32>,
    pub element_type: String,
    pub data_files: Vec<String>,
}

pub(crate) fn write_header(path: &Path, h: &RawHeader) -> Result<()> {
    let mut text = String::new();
    text.push_str(&format!("NDims = {}\n", h.ndims));
    let dims: Vec<String> = h.dim_size.iter().map(|d| d.to_string()).collect();
    text.push_str(&format!("DimSize = {}\n", dims.join(" ")));
    let sp: Vec<String> = h.spacing.iter().map(|s| format!("{s}")).collect();
    text.push_str(&format!("ElementSpacing = {}\n", sp.join(" ")));
    text.push_str(&format!("ElementType = {}\n", h.element_type));
    text.push_str("ByteOrder = LittleEndian\n");
    text.push_str(&format!("DataFile = {}\n", h.data_files.join(" ")));
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_header(path: &Path) -> Result<RawHeader> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Header {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut ndims = None;
    let mut dim_size = None;
    let mut spacing = None;
    let mut element_type = None;
    let mut data_files = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(&format!("line without '=': {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "NDims" => {
                ndims = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| bad("unparseable NDims"))?,
                )
            }
            "DimSize" => {
                let dims: std::result::Result<Vec<usize>, _> =
                    value.split_whitespace().map(|t| t.parse()).collect();
                dim_size = Some(dims.map_err(|_| bad("unparseable DimSize"))?);
            }
            "ElementSpacing" => {
                let sp: std::result::Result<Vec<f32>, _> =
                    value.split_whitespace().map(|t| t.parse()).collect();
                spacing = Some(sp.map_err(|_| bad("unparseable ElementSpacing"))?);
            }
            "ElementType" => element_type = Some(value.to_string()),
            "ByteOrder" => {
                if value != "LittleEndian" {
                    return Err(bad(&format!("unsupported byte order {value:?}")));
                }
            }
            "DataFile" => {
                data_files = Some(value.split_whitespace().map(str::to_string).collect())
            }
            other => return Err(bad(&format!("unknown key {other:?}"))),
        }
    }
    let h = RawHeader {
        ndims: ndims.ok_or_else(|| bad("missing NDims"))?,
        dim_size: dim_size.ok_or_else(|| bad("missing DimSize"))?,
        spacing: spacing.ok_or_else(|| bad("missing ElementSpacing"))?,
        element_type: element_type.ok_or_else(|| bad("missing ElementType"))?,
        data_files: data_files.ok_or_else(|| bad("missing DataFile"))?,
    };
    if h.dim_size.len() != h.ndims || h.spacing.len() != h.ndims {
        return Err(bad("DimSize/ElementSpacing arity does not match NDims"));
    }
    Ok(h)
}

pub(crate) fn payload_path(header: &Path, name: &str) -> PathBuf {
    match header.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir.join(name),
        _ => PathBuf::from(name),
    }
}

pub(crate) fn write_payload_f32(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_payload_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::SizeMismatch {
            expected: expected * 4,
            found: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn default_payload_name(header: &Path) -> String {
    let stem = header
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".to_string());
    format!("{stem}.raw")
}

/// Write a volume as a header/payload pair; the payload lands next to the
/// header with the same stem and a `.raw` extension.
pub fn save_volume(v: &VolumeGrid<f32>, path: &Path) -> Result<()> {
    let name = default_payload_name(path);
    write_header(
        path,
        &RawHeader {
            ndims: 3,
            dim_size: vec![v.dims.nx, v.dims.ny, v.dims.nz],
            spacing: v.spacing.to_vec(),
            element_type: ELEMENT_FLOAT.to_string(),
            data_files: vec![name.clone()],
        },
    )?;
    write_payload_f32(&payload_path(path, &name), &v.values)
}

pub fn load_volume(path: &Path) -> Result<VolumeGrid<f32>> {
    let h = read_header(path)?;
    if h.ndims != 3 {
        return Err(Error::Header {
            path: path.to_path_buf(),
            reason: format!("expected NDims 3, found {}", h.ndims),
        });
    }
    if h.element_type != ELEMENT_FLOAT {
        return Err(Error::Header {
            path: path.to_path_buf(),
            reason: format!("expected {ELEMENT_FLOAT}, found {}", h.element_type),
        });
    }
    let dims = Dims3::new(h.dim_size[0], h.dim_size[1], h.dim_size[2]);
    dims.validate()?;
    if h.data_files.len() != 1 {
        return Err(Error::Header {
            path: path.to_path_buf(),
            reason: format!("expected one DataFile, found {}", h.data_files.len()),
        });
    }
    let values = read_payload_f32(&payload_path(path, &h.data_files[0]), dims.count())?;
    VolumeGrid::new(dims, [h.spacing[0], h.spacing[1], h.spacing[2]], values)
}

pub fn save_labels(l: &LabelVolume, spacing: [f32; 3], path: &Path) -> Result<()> {
    let name = default_payload_name(path);
    write_header(
        path,
        &RawHeader {
            ndims: 3,
            dim_size: vec![l.dims.nx, l.dims.ny, l.dims.nz],
            spacing: spacing.to_vec(),
            element_type: ELEMENT_UCHAR.to_string(),
            data_files: vec![name.clone()],
        },
    )?;
    let p = payload_path(path, &name);
    fs::write(&p, &l.labels).map_err(|e| Error::io(&p, e))
}

pub fn load_labels(path: &Path) -> Result<LabelVolume> {
    let h = read_header(path)?;
    if h.ndims != 3 || h.element_type != ELEMENT_UCHAR {
        return Err(Error::Header {
            path: path.to_path_buf(),
            reason: "expected a 3D MET_UCHAR label header".to_string(),
        });
    }
    let dims = Dims3::new(h.dim_size[0], h.dim_size[1], h.dim_size[2]);
    dims.validate()?;
    let p = payload_path(path, &h.data_files[0]);
    let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    if bytes.len() != dims.count() {
        return Err(Error::SizeMismatch {
            expected: dims.count(),
            found: bytes.len(),
        });
    }
    LabelVolume::new(dims, bytes)
}

/// Write a 2D image as an NDims = 2 header/payload pair (lossless, unlike
/// the 8-bit PGM export).
pub fn save_image(img: &Image2D<f32>, path: &Path) -> Result<()> {
    let name = default_payload_name(path);
    write_header(
        path,
        &RawHeader {
            ndims: 2,
            dim_size: vec![img.w, img.h],
            spacing: vec![1.0, 1.0],
            element_type: ELEMENT_FLOAT.to_string(),
            data_files: vec![name.clone()],
        },
    )?;
    write_payload_f32(&payload_path(path, &name), &img.values)
}

pub fn load_image(path: &Path) -> Result<Image2D<f32>> {
    let h = read_header(path)?;
    if h.ndims != 2 || h.element_type != ELEMENT_FLOAT {
        return Err(Error::Header {
            path: path.to_path_buf(),
            reason: "expected a 2D MET_FLOAT image header".to_string(),
        });
    }
    let (w, hh) = (h.dim_size[0], h.dim_size[1]);
    let values = read_payload_f32(&payload_path(path, &h.data_files[0]), w * hh)?;
    Image2D::new(hh, w, values)
}

/// Export as binary PGM (P5), 8 bits per pixel.
pub fn write_pgm(img: &Image2D<f32>, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(img.values.len() + 32);
    out.extend_from_slice(format!("P5\n{} {}\n255\n", img.w, img.h).as_bytes());
    for &v in &img.values {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Minimal binary-PGM reader (round-trip testing of the export).
pub fn read_pgm(path: &Path) -> Result<Image2D<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Header {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    // Header: "P5\n<w> <h>\n<maxval>\n" followed by raw bytes.
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace after maxval
    if fields.len() != 4 || fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("not a binary 8-bit PGM"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    if bytes.len() < pos + w * h {
        return Err(Error::SizeMismatch {
            expected: pos + w * h,
            found: bytes.len(),
        });
    }
    let values = bytes[pos..pos + w * h]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    Image2D::new(h, w, values)
}
