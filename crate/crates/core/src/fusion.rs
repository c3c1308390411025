//! Condition path: each radiograph is replicated along its projection
//! direction, permuted into canonical `[x, y, z]` order and summed; the sum
//! becomes the second input channel next to the noisy volume.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::grid::{AxisTag, Grid3, Image2D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Logical axis carried by each storage dimension of an array, slowest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AxisOrder(pub [Axis; 3]);

impl AxisOrder {
    pub const XYZ: AxisOrder = AxisOrder([Axis::X, Axis::Y, Axis::Z]);
    /// Native layout of an image expanded along x.
    pub const YZX: AxisOrder = AxisOrder([Axis::Y, Axis::Z, Axis::X]);
    /// Native layout of an image expanded along y.
    pub const XZY: AxisOrder = AxisOrder([Axis::X, Axis::Z, Axis::Y]);

    fn validate(self) -> Result<()> {
        let mut seen = [false; 3];
        for a in self.0 {
            seen[a.index()] = true;
        }
        if seen.iter().all(|&s| s) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("{:?} is not a permutation of x, y, z", self.0)))
        }
    }

    /// Storage dimension holding logical axis `axis`.
    fn position(self, axis: Axis) -> usize {
        self.0.iter().position(|&a| a == axis).expect("validated order")
    }
}

/// The summed, canonical-order condition volume.
pub type ConditionVolume = Grid3<f32>;

/// Replicate every pixel `n` times along the image's projection axis.
///
/// The result is in the image's native order: `[y, z, x]` for a lateral
/// (`ALONG_X`) image and `[x, z, y]` for a frontal (`ALONG_Y`) image, with the
/// repeated axis last.
pub fn expand_along_axis(img: &Image2D, n: usize) -> Result<Grid3<f32>> {
    if img.axis() == AxisTag::AlongZ {
        return Err(Error::InvalidArgument("axial images have no expansion in this pipeline".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("expansion count must be >= 1".into()));
    }
    let [na, nb] = img.dims();
    let mut data = Vec::with_capacity(na * nb * n);
    for &v in img.as_slice() {
        data.extend(core::iter::repeat_n(v, n));
    }
    Grid3::from_vec([na, nb, n], data)
}

/// Native storage order of [`expand_along_axis`] output for `tag`.
pub fn expanded_order(tag: AxisTag) -> Result<AxisOrder> {
    match tag {
        AxisTag::AlongX => Ok(AxisOrder::YZX),
        AxisTag::AlongY => Ok(AxisOrder::XZY),
        AxisTag::AlongZ => Err(Error::InvalidArgument("no expansion order for ALONG_Z".into())),
    }
}

/// Reorder storage from `from` to `to` keeping every value at its logical
/// coordinate.
pub fn permute_axes<T: Copy>(arr: &Grid3<T>, from: AxisOrder, to: AxisOrder) -> Result<Grid3<T>> {
    from.validate()?;
    to.validate()?;
    let src_dims = arr.dims();
    // Output storage dim k carries logical axis to[k], found at source dim src_of[k].
    let src_of: [usize; 3] = core::array::from_fn(|k| from.position(to.0[k]));
    let out_dims: [usize; 3] = core::array::from_fn(|k| src_dims[src_of[k]]);
    let src_strides = [src_dims[1] * src_dims[2], src_dims[2], 1];
    let strides: [usize; 3] = core::array::from_fn(|k| src_strides[src_of[k]]);
    let data = arr.as_slice();
    let mut out = Vec::with_capacity(arr.len());
    for i in 0..out_dims[0] {
        for j in 0..out_dims[1] {
            let base = i * strides[0] + j * strides[1];
            for k in 0..out_dims[2] {
                out.push(data[base + k * strides[2]]);
            }
        }
    }
    Grid3::from_vec(out_dims, out)
}

pub fn permute_to_canonical<T: Copy>(arr: &Grid3<T>, source_order: AxisOrder) -> Result<Grid3<T>> {
    permute_axes(arr, source_order, AxisOrder::XYZ)
}

/// Sum of the lateral and frontal radiographs expanded to `dims = [nx, ny, nz]`.
pub fn fuse_biplanar(lateral: &Image2D, frontal: &Image2D, dims: [usize; 3]) -> Result<ConditionVolume> {
    let [nx, ny, nz] = dims;
    if lateral.axis() != AxisTag::AlongX {
        return Err(Error::InvalidArgument(format!(
            "lateral image must be ALONG_X, got {}",
            lateral.axis().name()
        )));
    }
    if frontal.axis() != AxisTag::AlongY {
        return Err(Error::InvalidArgument(format!(
            "frontal image must be ALONG_Y, got {}",
            frontal.axis().name()
        )));
    }
    if lateral.dims() != [ny, nz] {
        return Err(shape_err([ny, nz], lateral.dims()));
    }
    if frontal.dims() != [nx, nz] {
        return Err(shape_err([nx, nz], frontal.dims()));
    }
    let a = permute_to_canonical(&expand_along_axis(lateral, nx)?, AxisOrder::YZX)?;
    let b = permute_to_canonical(&expand_along_axis(frontal, ny)?, AxisOrder::XZY)?;
    a.zip_map(&b, |p, q| p + q)
}

/// Two-channel network input: channel 0 is the noisy volume, channel 1 the
/// condition.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserInput {
    dims: [usize; 3],
    data: Vec<f32>,
}

impl DenoiserInput {
    pub const CHANNELS: usize = 2;

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Channel-major `[2, nx, ny, nz]` storage.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.dims.iter().product::<usize>();
        &self.data[c * n..(c + 1) * n]
    }
}

pub fn assemble_denoiser_input(x_t: &Grid3<f32>, cond: &ConditionVolume) -> Result<DenoiserInput> {
    x_t.check_same_dims(cond.dims())?;
    let mut data = Vec::with_capacity(2 * x_t.len());
    data.extend_from_slice(x_t.as_slice());
    data.extend_from_slice(cond.as_slice());
    Ok(DenoiserInput { dims: x_t.dims(), data })
}
