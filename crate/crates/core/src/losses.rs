//! Noise-prediction objective with optional projection-consistency terms.
//!
//! All squared norms are means over elements, so the voxel term and each
//! projected term stay on the same scale at any resolution.

use alloc::vec::Vec;

use crate::error::Result;
use crate::grid::Grid3;
use crate::projector::{mean_project, ProjectionPlane};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub voxel_term: f64,
    pub proj_axial: f64,
    pub proj_coronal: f64,
    pub proj_sagittal: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn projection_mean(&self) -> f64 {
        (self.proj_axial + self.proj_coronal + self.proj_sagittal) / 3.0
    }
}

fn mean_square<R: Real>(values: impl Iterator<Item = R>, n: usize) -> f64 {
    values.map(|v| v.to_f64() * v.to_f64()).sum::<f64>() / n as f64
}

fn difference<R: Real>(eps_true: &Grid3<R>, eps_pred: &Grid3<R>) -> Result<Grid3<R>> {
    eps_pred.zip_map(eps_true, |p, t| p - t)
}

/// Mean squared error over voxels.
pub fn noise_mse<R: Real>(eps_true: &Grid3<R>, eps_pred: &Grid3<R>) -> Result<f64> {
    let d = difference(eps_true, eps_pred)?;
    Ok(mean_square(d.as_slice().iter().copied(), d.len()))
}

/// Per-plane MSE between mean projections, ordered (axial, coronal, sagittal).
pub fn projection_consistency_loss<R: Real>(eps_true: &Grid3<R>, eps_pred: &Grid3<R>) -> Result<(f64, f64, f64)> {
    let d = difference(eps_true, eps_pred)?;
    // Projection is linear, so projecting the difference equals differencing projections.
    let term = |plane| {
        let p: Vec<R> = mean_project(&d, plane);
        let n = p.len();
        mean_square(p.into_iter(), n)
    };
    Ok((term(ProjectionPlane::Axial), term(ProjectionPlane::Coronal), term(ProjectionPlane::Sagittal)))
}

pub fn total_reconstruction_loss<R: Real>(eps_true: &Grid3<R>, eps_pred: &Grid3<R>) -> Result<LossBreakdown> {
    let voxel_term = noise_mse(eps_true, eps_pred)?;
    let (a, c, s) = projection_consistency_loss(eps_true, eps_pred)?;
    Ok(LossBreakdown {
        voxel_term,
        proj_axial: a,
        proj_coronal: c,
        proj_sagittal: s,
        total: voxel_term + (a + c + s) / 3.0,
    })
}

/// Which objective drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LossMode {
    NoiseOnly,
    WithProjection,
}

/// Loss value and its gradient with respect to `eps_pred`.
///
/// For `NOISE_ONLY` the projection fields are still reported but do not
/// contribute to `total` or the gradient.
pub fn loss_and_grad<R: Real>(eps_true: &Grid3<R>, eps_pred: &Grid3<R>, mode: LossMode) -> Result<(LossBreakdown, Grid3<R>)> {
    let d = difference(eps_true, eps_pred)?;
    let n = d.len();
    let mut breakdown = total_reconstruction_loss(eps_true, eps_pred)?;
    let mut grad = d.map(|v| R::from_f64(2.0 / n as f64) * v);
    match mode {
        LossMode::NoiseOnly => breakdown.total = breakdown.voxel_term,
        LossMode::WithProjection => {
            let [nx, ny, nz] = d.dims();
            // d/dd of mean_p (P d)_p^2 / 3 = 2 (P d)_{p(v)} / (3 * n_pixels * n_line)
            let axial = mean_project(&d, ProjectionPlane::Axial);
            let coronal = mean_project(&d, ProjectionPlane::Coronal);
            let sagittal = mean_project(&d, ProjectionPlane::Sagittal);
            let scale = R::from_f64(2.0 / (3.0 * n as f64));
            let g = grad.as_mut_slice();
            for ix in 0..nx {
                for iy in 0..ny {
                    for iz in 0..nz {
                        let i = (ix * ny + iy) * nz + iz;
                        g[i] += scale * (axial[ix * ny + iy] + coronal[ix * nz + iz] + sagittal[iy * nz + iz]);
                    }
                }
            }
        }
    }
    Ok((breakdown, grad))
}
