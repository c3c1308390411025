//! Reconstruction from a checkpoint and a biplanar X-ray pair.

use std::path::{Path, PathBuf};

use diff2ct_core::baseline::regressor_forward;
use diff2ct_core::denoiser::Denoiser;
use diff2ct_core::fusion::fuse_biplanar;
use diff2ct_core::schedule::sample;
use diff2ct_core::training::ModelKind;
use diff2ct_core::{AxisTag, Error as CoreError, Image2D, ValueSpace, Volume};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::format::write_volume;
use crate::manifest::{base_dir, load_case, Manifest, Split};
use crate::parallel::map_ordered;

/// Volume dims `[nx, ny, nz]` and spacing implied by a lateral `(y, z)` and a
/// frontal `(x, z)` image.
pub fn volume_geometry(lateral: &Image2D, frontal: &Image2D) -> Result<([usize; 3], [f64; 3])> {
    let [ly, lz] = lateral.dims();
    let [fx, fz] = frontal.dims();
    if lateral.axis() != AxisTag::AlongX || frontal.axis() != AxisTag::AlongY || lz != fz {
        return Err(Error::Core {
            context: "X-ray pair".into(),
            source: CoreError::ShapeMismatch {
                expected: "lateral ALONG_X (ny, nz) and frontal ALONG_Y (nx, nz) sharing nz".into(),
                found: format!(
                    "lateral {} {:?}, frontal {} {:?}",
                    lateral.axis().name(),
                    lateral.dims(),
                    frontal.axis().name(),
                    frontal.dims()
                ),
            },
        });
    }
    let (ls, fs) = (lateral.pixel_spacing(), frontal.pixel_spacing());
    Ok(([fx, ly, lz], [fs[0], ls[0], ls[1]]))
}

/// Seeded diffusion sample, or the regressor's prediction for baseline checkpoints.
pub fn reconstruct(ckpt: &Checkpoint, lateral: &Image2D, frontal: &Image2D, seed: u64) -> Result<Volume> {
    let (dims, spacing) = volume_geometry(lateral, frontal)?;
    let cond = fuse_biplanar(lateral, frontal, dims).map_err(Error::core("condition"))?;
    let grid = match ckpt.kind {
        ModelKind::Diffusion => {
            let cfg = &ckpt.config;
            cfg.denoiser.check_dims(dims).map_err(Error::core("volume size"))?;
            let model = Denoiser::new(cfg.denoiser, ckpt.state.params.clone()).map_err(Error::core("checkpoint"))?;
            let schedule = cfg.schedule().map_err(Error::core("schedule"))?;
            sample(&model, &schedule, &cond, seed).map_err(Error::core("sampling"))?
        }
        ModelKind::Regressor => {
            regressor_forward::<f32>(&ckpt.config.regressor, &ckpt.state.params, &cond).map_err(Error::core("regressor"))?.map(|v| v.clamp(-1.0, 1.0))
        }
    };
    Volume::new(grid, spacing, ValueSpace::Normalized).map_err(Error::core("reconstruction"))
}

/// Reconstructs every case of `split` into `out_dir/<case_id>.dvol`; case `i`
/// uses seed `seed + i`.
pub fn reconstruct_split(
    ckpt: &Checkpoint,
    manifest_path: &Path,
    split: Split,
    out_dir: &Path,
    seed: u64,
    threads: usize,
) -> Result<Vec<PathBuf>> {
    let manifest = Manifest::load(manifest_path)?;
    let base = base_dir(manifest_path);
    let records: Vec<_> = manifest.split(split).cloned().enumerate().collect();
    map_ordered(&records, threads, |(i, rec)| {
        let case = load_case(&base, rec)?;
        let v = reconstruct(ckpt, &case.lateral, &case.frontal, seed.wrapping_add(*i as u64))?;
        let path = prediction_path(out_dir, &rec.case_id);
        write_volume(&v, &path)?;
        Ok(path)
    })
    .into_iter()
    .collect()
}

pub fn prediction_path(dir: &Path, case_id: &str) -> PathBuf {
    dir.join(format!("{case_id}.dvol"))
}
