//! Synthetic dataset construction: phantom, biplanar DRRs, preprocessing,
//! files and manifest.

use std::path::Path;

use diff2ct_core::phantom::{generate_phantom, PhantomSpec};
use diff2ct_core::projector::synthesize_biplanar;
use diff2ct_core::rng::seeded;
use diff2ct_core::volume::{center_crop_pad, clip_hu, normalize_to_unit, resample_isotropic};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::format::{write_image, write_volume};
use crate::manifest::{CaseRecord, Manifest, Split, MANIFEST_FILE, MANIFEST_VERSION};
use crate::parallel::map_ordered;

/// Fraction of cases held out for testing.
pub const TEST_FRACTION: f64 = 0.21;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetOptions {
    pub count: usize,
    pub seed: u64,
    /// Target geometry; `spec.spacing` must be isotropic.
    pub spec: PhantomSpec,
    /// Acquire phantoms at this spacing and resample to the target.
    pub raw_spacing: Option<[f64; 3]>,
    pub threads: usize,
}

/// Number of test cases for `n` cases: nearest to 21%, at least one, and
/// leaving at least one training case.
pub fn test_count(n: usize) -> usize {
    if n < 2 {
        return 0;
    }
    ((TEST_FRACTION * n as f64).round() as usize).clamp(1, n - 1)
}

/// Split per case index, from a seeded shuffle.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded(seed);
    rng.set_stream(1);
    order.shuffle(&mut rng);
    let mut splits = vec![Split::Train; n];
    for &i in &order[..test_count(n)] {
        splits[i] = Split::Test;
    }
    splits
}

pub fn case_id(i: usize) -> String {
    format!("case_{i:04}")
}

fn build_case(i: usize, opts: &DatasetOptions, split: Split, out_dir: &Path) -> Result<CaseRecord> {
    let id = case_id(i);
    let ctx = |what: &str| format!("case `{id}`: {what}");
    let target = opts.spec.spacing;
    if target.iter().any(|&s| s != target[0]) {
        return Err(Error::Usage("phantom target spacing must be isotropic".into()));
    }
    let seed = opts.seed.wrapping_add(i as u64);
    let (hu, original_spacing) = match opts.raw_spacing {
        None => (generate_phantom(seed, &opts.spec).map_err(Error::core(ctx("phantom")))?, target),
        Some(raw) => {
            // Same physical extent, sampled on the raw grid.
            let dims = [0, 1, 2].map(|a| ((opts.spec.volume_size[a] as f64 * target[a] / raw[a]).round() as usize).max(4));
            let spec = PhantomSpec { volume_size: dims, spacing: raw, ..opts.spec.clone() };
            (generate_phantom(seed, &spec).map_err(Error::core(ctx("phantom")))?, raw)
        }
    };
    let hu = resample_isotropic(&hu, target[0]).map_err(Error::core(ctx("resample")))?;
    let hu = center_crop_pad(&hu, opts.spec.volume_size, None).map_err(Error::core(ctx("crop")))?;
    let xr = synthesize_biplanar(&hu).map_err(Error::core(ctx("DRR")))?;
    let ct = clip_hu(&hu).and_then(|v| normalize_to_unit(&v)).map_err(Error::core(ctx("normalize")))?;
    let record = CaseRecord {
        case_id: id.clone(),
        ct: format!("ct/{id}.dvol"),
        xray_lateral: format!("xray/{id}_lateral.dimg"),
        xray_frontal: format!("xray/{id}_frontal.dimg"),
        original_spacing,
        split,
    };
    write_volume(&ct, out_dir.join(&record.ct))?;
    write_image(&xr.lateral, out_dir.join(&record.xray_lateral))?;
    write_image(&xr.frontal, out_dir.join(&record.xray_frontal))?;
    Ok(record)
}

/// Writes `count` cases and `manifest.json` under `out_dir`.
pub fn build_dataset(opts: &DatasetOptions, out_dir: &Path) -> Result<Manifest> {
    if opts.count == 0 {
        return Err(Error::Usage("--count must be >= 1".into()));
    }
    opts.spec.validate().map_err(Error::core("phantom spec"))?;
    let splits = assign_splits(opts.count, opts.seed);
    let jobs: Vec<(usize, Split)> = splits.into_iter().enumerate().collect();
    let cases = map_ordered(&jobs, opts.threads, |&(i, split)| build_case(i, opts, split, out_dir)).into_iter().collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { version: MANIFEST_VERSION, cases };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
