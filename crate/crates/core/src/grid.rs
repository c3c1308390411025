//! Dense 3D and 2D scalar grids.
//!
//! Axis convention used everywhere: axis 0 = x, axis 1 = y, axis 2 = z, with
//! z varying fastest in storage, `index = (ix * ny + iy) * nz + iz`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::real::Real;

/// A dense 3D array in canonical `[x, y, z]` storage order without physical
/// metadata. Used for noise fields, condition volumes and network channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Copy> Grid3<T> {
    pub fn from_vec(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "grid dimensions must be >= 1, got {dims:?}"
            )));
        }
        let len = dims[0] * dims[1] * dims[2];
        if data.len() != len {
            return Err(shape_err(len, data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: [usize; 3], value: T) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "grid dimensions must be >= 1");
        Self { dims, data: vec![value; dims[0] * dims[1] * dims[2]] }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "grid dimensions must be >= 1");
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for ix in 0..dims[0] {
            for iy in 0..dims[1] {
                for iz in 0..dims[2] {
                    data.push(f(ix, iy, iz));
                }
            }
        }
        Self { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.dims[1] + iy) * self.dims[2] + iz
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> T {
        self.data[self.index(ix, iy, iz)]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, iz: usize, value: T) {
        let i = self.index(ix, iy, iz);
        self.data[i] = value;
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Grid3<U> {
        Grid3 { dims: self.dims, data: self.data.iter().copied().map(f).collect() }
    }

    pub fn zip_map<U: Copy, V: Copy>(
        &self,
        other: &Grid3<U>,
        mut f: impl FnMut(T, U) -> V,
    ) -> Result<Grid3<V>> {
        self.check_same_dims(other.dims)?;
        Ok(Grid3 {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn check_same_dims(&self, other: [usize; 3]) -> Result<()> {
        if self.dims == other {
            Ok(())
        } else {
            Err(shape_err(self.dims, other))
        }
    }
}

impl<R: Real> Grid3<R> {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self::filled(dims, R::ZERO)
    }

    pub fn cast<S: Real>(&self) -> Grid3<S> {
        self.map(|v| S::from_f64(v.to_f64()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Which volume axis a 2D image was collapsed along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AxisTag {
    AlongX,
    AlongY,
    AlongZ,
}

impl AxisTag {
    /// Index of the collapsed volume axis.
    pub fn collapsed_axis(self) -> usize {
        match self {
            AxisTag::AlongX => 0,
            AxisTag::AlongY => 1,
            AxisTag::AlongZ => 2,
        }
    }

    /// Volume axes spanned by the image, in image (a, b) order.
    pub fn image_axes(self) -> [usize; 2] {
        match self {
            AxisTag::AlongX => [1, 2],
            AxisTag::AlongY => [0, 2],
            AxisTag::AlongZ => [0, 1],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AxisTag::AlongX => "ALONG_X",
            AxisTag::AlongY => "ALONG_Y",
            AxisTag::AlongZ => "ALONG_Z",
        }
    }
}

/// A 2D projection image, row-major with the b axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    dims: [usize; 2],
    axis: AxisTag,
    pixel_spacing: [f64; 2],
    data: Vec<f32>,
}

impl Image2D {
    pub fn new(dims: [usize; 2], axis: AxisTag, pixel_spacing: [f64; 2], data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "image dimensions must be >= 1, got {dims:?}"
            )));
        }
        if pixel_spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(alloc::format!(
                "pixel spacing must be positive and finite, got {pixel_spacing:?}"
            )));
        }
        if data.len() != dims[0] * dims[1] {
            return Err(shape_err(dims[0] * dims[1], data.len()));
        }
        Ok(Self { dims, axis, pixel_spacing, data })
    }

    pub fn from_fn(
        dims: [usize; 2],
        axis: AxisTag,
        pixel_spacing: [f64; 2],
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims[0] * dims[1]);
        for a in 0..dims[0] {
            for b in 0..dims[1] {
                data.push(f(a, b));
            }
        }
        Self::new(dims, axis, pixel_spacing, data)
    }

    #[inline]
    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }
    #[inline]
    pub fn axis(&self) -> AxisTag {
        self.axis
    }
    #[inline]
    pub fn pixel_spacing(&self) -> [f64; 2] {
        self.pixel_spacing
    }
    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f32 {
        self.data[a * self.dims[1] + b]
    }
    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Swap the two image axes.
    pub fn transposed(&self) -> Self {
        let [na, nb] = self.dims;
        let mut data = Vec::with_capacity(na * nb);
        for b in 0..nb {
            for a in 0..na {
                data.push(self.get(a, b));
            }
        }
        Self {
            dims: [nb, na],
            axis: self.axis,
            pixel_spacing: [self.pixel_spacing[1], self.pixel_spacing[0]],
            data,
        }
    }
}
