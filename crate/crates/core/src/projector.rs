//! Orthogonal mean projections onto the axial, coronal and sagittal planes
//! and parallel-beam digitally reconstructed radiographs.

use alloc::vec::Vec;

use crate::error::Result;
use crate::grid::{AxisTag, Grid3, Image2D};
use crate::real::Real;
use crate::volume::Volume;

/// Linear attenuation coefficient of water in mm^-1.
pub const MU_WATER: f64 = 0.02;
const DRR_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProjectionPlane {
    /// Collapses z.
    Axial,
    /// Collapses y.
    Coronal,
    /// Collapses x.
    Sagittal,
}

impl ProjectionPlane {
    pub const ALL: [ProjectionPlane; 3] =
        [ProjectionPlane::Axial, ProjectionPlane::Coronal, ProjectionPlane::Sagittal];

    pub fn axis_tag(self) -> AxisTag {
        match self {
            ProjectionPlane::Axial => AxisTag::AlongZ,
            ProjectionPlane::Coronal => AxisTag::AlongY,
            ProjectionPlane::Sagittal => AxisTag::AlongX,
        }
    }

    pub fn from_axis_tag(tag: AxisTag) -> Self {
        match tag {
            AxisTag::AlongZ => ProjectionPlane::Axial,
            AxisTag::AlongY => ProjectionPlane::Coronal,
            AxisTag::AlongX => ProjectionPlane::Sagittal,
        }
    }

    pub fn collapsed_axis(self) -> usize {
        self.axis_tag().collapsed_axis()
    }
}

impl core::str::FromStr for ProjectionPlane {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "axial" => Ok(ProjectionPlane::Axial),
            "coronal" => Ok(ProjectionPlane::Coronal),
            "sagittal" => Ok(ProjectionPlane::Sagittal),
            other => Err(crate::error::Error::InvalidArgument(alloc::format!(
                "unknown projection plane `{other}`"
            ))),
        }
    }
}

/// Image dimensions produced by collapsing `plane` out of a grid of `dims`.
pub fn projected_dims(dims: [usize; 3], plane: ProjectionPlane) -> [usize; 2] {
    let [a, b] = plane.axis_tag().image_axes();
    [dims[a], dims[b]]
}

/// Reduce along the collapse axis of `plane` with `f(sum, count)`, summing in
/// 64-bit. Output is in image order (a major, b minor).
fn reduce_along<R: Real>(grid: &Grid3<R>, plane: ProjectionPlane, mut f: impl FnMut(f64, usize) -> R) -> Vec<R> {
    let [nx, ny, nz] = grid.dims();
    let data = grid.as_slice();
    match plane {
        ProjectionPlane::Sagittal => {
            let mut acc = alloc::vec![0.0f64; ny * nz];
            for ix in 0..nx {
                let plane = &data[ix * ny * nz..(ix + 1) * ny * nz];
                for (a, &v) in acc.iter_mut().zip(plane) {
                    *a += v.to_f64();
                }
            }
            acc.into_iter().map(|s| f(s, nx)).collect()
        }
        ProjectionPlane::Coronal => {
            let mut acc = alloc::vec![0.0f64; nx * nz];
            for ix in 0..nx {
                for iy in 0..ny {
                    let row = &data[(ix * ny + iy) * nz..(ix * ny + iy + 1) * nz];
                    for (a, &v) in acc[ix * nz..(ix + 1) * nz].iter_mut().zip(row) {
                        *a += v.to_f64();
                    }
                }
            }
            acc.into_iter().map(|s| f(s, ny)).collect()
        }
        ProjectionPlane::Axial => data
            .chunks_exact(nz)
            .map(|row| f(row.iter().map(|v| v.to_f64()).sum(), nz))
            .collect(),
    }
}

/// Mean along the collapse axis, in image order, for any precision.
pub fn mean_project<R: Real>(grid: &Grid3<R>, plane: ProjectionPlane) -> Vec<R> {
    reduce_along(grid, plane, |s, n| R::from_f64(s / n as f64))
}

/// Mean projection of a volume onto `plane`, tagged and with the in-plane
/// spacing of the volume.
pub fn orthogonal_project(v: &Volume, plane: ProjectionPlane) -> Image2D {
    project_grid(v.grid(), v.spacing(), plane)
}

/// [`orthogonal_project`] for an untyped grid.
pub fn project_grid(grid: &Grid3<f32>, spacing: [f64; 3], plane: ProjectionPlane) -> Image2D {
    let [a, b] = plane.axis_tag().image_axes();
    Image2D::new(
        projected_dims(grid.dims(), plane),
        plane.axis_tag(),
        [spacing[a], spacing[b]],
        mean_project(grid, plane),
    )
    .expect("projection of a valid grid is a valid image")
}

/// `mu = max(0, mu_water * (1 + HU / 1000))` per voxel.
pub fn hu_to_attenuation(v: &Volume) -> Result<Grid3<f32>> {
    v.require_hu()?;
    Ok(v.grid().map(|h| libm::fmax(0.0, MU_WATER * (1.0 + h as f64 / 1000.0)) as f32))
}

/// Unnormalized line integrals `sum(mu * ds)` along the collapse axis.
pub fn drr_line_integrals(v: &Volume, plane: ProjectionPlane) -> Result<Vec<f64>> {
    let mu = hu_to_attenuation(v)?;
    let ds = v.spacing()[plane.collapsed_axis()];
    Ok(reduce_along(&mu.cast::<f64>(), plane, |s, _| s * ds))
}

/// Parallel-beam DRR along `plane`, normalized by its maximum so every
/// pixel lies in [0, 1].
pub fn drr_render(v: &Volume, plane: ProjectionPlane) -> Result<Image2D> {
    let integrals = drr_line_integrals(v, plane)?;
    let max = integrals.iter().copied().fold(0.0f64, f64::max);
    let data = integrals.iter().map(|&a| (a / (max + DRR_EPS)) as f32).collect();
    let [a, b] = plane.axis_tag().image_axes();
    let sp = v.spacing();
    Image2D::new(projected_dims(v.dims(), plane), plane.axis_tag(), [sp[a], sp[b]], data)
}

/// Lateral (along x) and frontal (along y) radiographs of an HU volume.
#[derive(Debug, Clone, PartialEq)]
pub struct BiplanarPair {
    pub lateral: Image2D,
    pub frontal: Image2D,
}

pub fn synthesize_biplanar(v: &Volume) -> Result<BiplanarPair> {
    Ok(BiplanarPair {
        lateral: drr_render(v, ProjectionPlane::Sagittal)?,
        frontal: drr_render(v, ProjectionPlane::Coronal)?,
    })
}
