//! CT volumes and the preprocessing chain: isotropic resampling, centre
//! crop/pad, Hounsfield clipping and fixed-window normalization to [-1, 1].

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Grid3;

/// Lower clip bound in HU (air).
pub const HU_MIN: f32 = -1000.0;
/// Upper clip bound in HU.
pub const HU_MAX: f32 = 4096.0;
/// Loose sanity bound for raw HU volumes.
pub const HU_SANITY: (f32, f32) = (-1024.0, 10000.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ValueSpace {
    Hu,
    Normalized,
}

impl ValueSpace {
    pub fn name(self) -> &'static str {
        match self {
            ValueSpace::Hu => "HU",
            ValueSpace::Normalized => "NORMALIZED",
        }
    }

    fn bounds(self) -> (f32, f32) {
        match self {
            ValueSpace::Hu => HU_SANITY,
            ValueSpace::Normalized => (-1.0, 1.0),
        }
    }

    /// Background value used outside the imaged field (air).
    pub fn air(self) -> f32 {
        match self {
            ValueSpace::Hu => HU_MIN,
            ValueSpace::Normalized => -1.0,
        }
    }
}

/// A CT volume: a grid with voxel spacing (mm) and a value space.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    grid: Grid3<f32>,
    spacing: [f64; 3],
    value_space: ValueSpace,
}

impl Volume {
    pub fn new(grid: Grid3<f32>, spacing: [f64; 3], value_space: ValueSpace) -> Result<Self> {
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        let (lo, hi) = value_space.bounds();
        for &v in grid.as_slice() {
            if !v.is_finite() {
                return Err(Error::NonFinite { context: "volume data".into() });
            }
            if v < lo || v > hi {
                return Err(Error::OutOfRange { value: v as f64, lo: lo as f64, hi: hi as f64 });
            }
        }
        Ok(Self { grid, spacing, value_space })
    }

    #[inline]
    pub fn grid(&self) -> &Grid3<f32> {
        &self.grid
    }
    pub fn into_grid(self) -> Grid3<f32> {
        self.grid
    }
    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims()
    }
    #[inline]
    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }
    #[inline]
    pub fn value_space(&self) -> ValueSpace {
        self.value_space
    }

    fn require(&self, space: ValueSpace) -> Result<()> {
        if self.value_space == space {
            Ok(())
        } else {
            Err(Error::ValueSpace { expected: space.name(), found: self.value_space.name() })
        }
    }

    pub(crate) fn require_hu(&self) -> Result<()> {
        self.require(ValueSpace::Hu)
    }

    pub(crate) fn require_normalized(&self) -> Result<()> {
        self.require(ValueSpace::Normalized)
    }
}

/// Trilinear resampling onto an isotropic grid of spacing `target` mm.
///
/// Output voxel `j` along axis `i` samples the source at continuous index
/// `j * target / s_i`; samples outside the source grid take the air value.
pub fn resample_isotropic(v: &Volume, target: f64) -> Result<Volume> {
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::InvalidArgument(format!("target spacing must be positive, got {target}")));
    }
    let src = v.dims();
    let sp = v.spacing();
    let mut out_dims = [0usize; 3];
    for i in 0..3 {
        let n = libm::round(src[i] as f64 * sp[i] / target);
        out_dims[i] = if n < 1.0 { 1 } else { n as usize };
    }
    let fill = v.value_space().air();

    // Per-axis (lower index, weight) or None when the sample falls outside.
    let axis_samples = |i: usize| -> Vec<Option<(usize, f64)>> {
        let scale = target / sp[i];
        let last = (src[i] - 1) as f64;
        (0..out_dims[i])
            .map(|j| {
                let pos = j as f64 * scale;
                if pos > last + 1e-9 {
                    return None;
                }
                let pos = pos.min(last);
                let lo = libm::floor(pos) as usize;
                let w = pos - lo as f64;
                if lo + 1 >= src[i] {
                    Some((lo.min(src[i] - 1), 0.0))
                } else {
                    Some((lo, w))
                }
            })
            .collect()
    };
    let sx = axis_samples(0);
    let sy = axis_samples(1);
    let sz = axis_samples(2);

    let g = v.grid();
    let at = |ix: usize, iy: usize, iz: usize| g.get(ix, iy, iz) as f64;
    let out = Grid3::from_fn(out_dims, |ox, oy, oz| {
        let (Some((x0, wx)), Some((y0, wy)), Some((z0, wz))) = (sx[ox], sy[oy], sz[oz]) else {
            return fill;
        };
        let x1 = (x0 + 1).min(src[0] - 1);
        let y1 = (y0 + 1).min(src[1] - 1);
        let z1 = (z0 + 1).min(src[2] - 1);
        let c00 = at(x0, y0, z0) * (1.0 - wz) + at(x0, y0, z1) * wz;
        let c01 = at(x0, y1, z0) * (1.0 - wz) + at(x0, y1, z1) * wz;
        let c10 = at(x1, y0, z0) * (1.0 - wz) + at(x1, y0, z1) * wz;
        let c11 = at(x1, y1, z0) * (1.0 - wz) + at(x1, y1, z1) * wz;
        let c0 = c00 * (1.0 - wy) + c01 * wy;
        let c1 = c10 * (1.0 - wy) + c11 * wy;
        (c0 * (1.0 - wx) + c1 * wx) as f32
    });
    Volume::new(out, [target; 3], v.value_space())
}

/// Centre crop and/or pad to exactly `dims`. The source is placed at offset
/// `floor((N - D) / 2)` per axis; negative offsets pad with `fill`
/// (air for the volume's value space when `None`).
pub fn center_crop_pad(v: &Volume, dims: [usize; 3], fill: Option<f32>) -> Result<Volume> {
    if dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("crop dimensions must be >= 1, got {dims:?}")));
    }
    let fill = fill.unwrap_or_else(|| v.value_space().air());
    let src = v.dims();
    let offset: [i64; 3] =
        core::array::from_fn(|i| (src[i] as i64 - dims[i] as i64).div_euclid(2));
    let g = v.grid();
    let out = Grid3::from_fn(dims, |ox, oy, oz| {
        let sx = ox as i64 + offset[0];
        let sy = oy as i64 + offset[1];
        let sz = oz as i64 + offset[2];
        let inside = |s: i64, n: usize| s >= 0 && (s as usize) < n;
        if inside(sx, src[0]) && inside(sy, src[1]) && inside(sz, src[2]) {
            g.get(sx as usize, sy as usize, sz as usize)
        } else {
            fill
        }
    });
    Volume::new(out, v.spacing(), v.value_space())
}

/// Clamp HU values to `[HU_MIN, HU_MAX]`.
pub fn clip_hu(v: &Volume) -> Result<Volume> {
    v.require_hu()?;
    let out = v.grid().map(|x| x.clamp(HU_MIN, HU_MAX));
    Volume::new(out, v.spacing(), ValueSpace::Hu)
}

const HU_RANGE: f64 = (HU_MAX - HU_MIN) as f64;

#[inline]
pub fn normalize_value(hu: f32) -> f32 {
    (2.0 * (hu as f64 - HU_MIN as f64) / HU_RANGE - 1.0) as f32
}

#[inline]
pub fn denormalize_value(x: f32) -> f32 {
    ((x as f64 + 1.0) * 0.5 * HU_RANGE + HU_MIN as f64) as f32
}

/// Fixed-window min-max mapping of clipped HU onto [-1, 1].
pub fn normalize_to_unit(v: &Volume) -> Result<Volume> {
    v.require_hu()?;
    for &x in v.grid().as_slice() {
        if !(HU_MIN..=HU_MAX).contains(&x) {
            return Err(Error::OutOfRange { value: x as f64, lo: HU_MIN as f64, hi: HU_MAX as f64 });
        }
    }
    let out = v.grid().map(|x| normalize_value(x).clamp(-1.0, 1.0));
    Volume::new(out, v.spacing(), ValueSpace::Normalized)
}

/// Inverse of [`normalize_to_unit`].
pub fn denormalize(v: &Volume) -> Result<Volume> {
    v.require_normalized()?;
    let out = v.grid().map(|x| denormalize_value(x).clamp(HU_MIN, HU_MAX));
    Volume::new(out, v.spacing(), ValueSpace::Hu)
}

/// Full preprocessing chain for an HU volume: resample, crop/pad, clip,
/// normalize.
pub fn preprocess(v: &Volume, target_spacing: f64, dims: [usize; 3]) -> Result<Volume> {
    let resampled = resample_isotropic(v, target_spacing)?;
    let cropped = center_crop_pad(&resampled, dims, None)?;
    normalize_to_unit(&clip_hu(&cropped)?)
}
