//! Voxel metrics, windowed 3D SSIM, and the Fréchet distance between feature
//! sets.
//!
//! Metric inputs are volumes in the normalized `[-1, 1]` space, so the
//! dynamic range `L` is fixed at 2.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor};
use crate::grid::Grid3;
use crate::params::{ParamId, ParameterSet};
use crate::rng::seeded;
use crate::volume::Volume;

pub const DYNAMIC_RANGE: f64 = 2.0;
pub const SSIM_WINDOW: usize = 7;
pub const SSIM_C1: f64 = (0.01 * DYNAMIC_RANGE) * (0.01 * DYNAMIC_RANGE);
pub const SSIM_C2: f64 = (0.03 * DYNAMIC_RANGE) * (0.03 * DYNAMIC_RANGE);
/// Ridge added to a feature covariance that is not numerically positive definite.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

fn pair<'a>(a: &'a Volume, b: &'a Volume) -> Result<(&'a Grid3<f32>, &'a Grid3<f32>)> {
    a.require_normalized()?;
    b.require_normalized()?;
    b.grid().check_same_dims(a.dims())?;
    Ok((a.grid(), b.grid()))
}

pub fn mae(a: &Volume, b: &Volume) -> Result<f64> {
    let (a, b) = pair(a, b)?;
    Ok(mae_grid(a, b))
}

pub fn psnr(a: &Volume, b: &Volume) -> Result<f64> {
    let (a, b) = pair(a, b)?;
    Ok(psnr_grid(a, b))
}

pub fn ssim3d(a: &Volume, b: &Volume) -> Result<f64> {
    let (a, b) = pair(a, b)?;
    ssim_grid(a, b)
}

pub(crate) fn mae_grid(a: &Grid3<f32>, b: &Grid3<f32>) -> f64 {
    let s: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum();
    s / a.len() as f64
}

/// `+inf` when the volumes are identical.
pub(crate) fn psnr_grid(a: &Grid3<f32>, b: &Grid3<f32>) -> f64 {
    let mse: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * libm::log10(DYNAMIC_RANGE * DYNAMIC_RANGE / mse)
    }
}

/// Summed-volume table with a zero border: `s[i+1][j+1][k+1] = sum over [0..=i, 0..=j, 0..=k]`.
struct Integral {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Integral {
    fn new(dims: [usize; 3], f: impl Fn(usize) -> f64) -> Self {
        let d = [dims[0] + 1, dims[1] + 1, dims[2] + 1];
        let mut data = vec![0.0; d[0] * d[1] * d[2]];
        let at = |x: usize, y: usize, z: usize| (x * d[1] + y) * d[2] + z;
        for x in 1..d[0] {
            for y in 1..d[1] {
                for z in 1..d[2] {
                    let v = f(((x - 1) * dims[1] + (y - 1)) * dims[2] + (z - 1));
                    data[at(x, y, z)] = v + data[at(x - 1, y, z)] + data[at(x, y - 1, z)] + data[at(x, y, z - 1)]
                        - data[at(x - 1, y - 1, z)]
                        - data[at(x - 1, y, z - 1)]
                        - data[at(x, y - 1, z - 1)]
                        + data[at(x - 1, y - 1, z - 1)];
                }
            }
        }
        Self { dims: d, data }
    }

    /// Sum over the cube `[x, x+w) x [y, y+w) x [z, z+w)`.
    fn window(&self, x: usize, y: usize, z: usize, w: usize) -> f64 {
        let d = self.dims;
        let at = |x: usize, y: usize, z: usize| self.data[(x * d[1] + y) * d[2] + z];
        let (x1, y1, z1) = (x + w, y + w, z + w);
        at(x1, y1, z1) - at(x, y1, z1) - at(x1, y, z1) - at(x1, y1, z) + at(x, y, z1) + at(x, y1, z) + at(x1, y, z)
            - at(x, y, z)
    }
}

/// Mean of per-window SSIM over all fully contained 7^3 windows.
pub(crate) fn ssim_grid(a: &Grid3<f32>, b: &Grid3<f32>) -> Result<f64> {
    b.check_same_dims(a.dims())?;
    let dims = a.dims();
    let w = SSIM_WINDOW;
    if dims.iter().any(|&d| d < w) {
        return Err(Error::InvalidArgument(format!("SSIM needs every dimension >= {w}, got {dims:?}")));
    }
    let (sa, sb) = (a.as_slice(), b.as_slice());
    let va = |i: usize| sa[i] as f64;
    let vb = |i: usize| sb[i] as f64;
    let ia = Integral::new(dims, va);
    let ib = Integral::new(dims, vb);
    let iaa = Integral::new(dims, |i| va(i) * va(i));
    let ibb = Integral::new(dims, |i| vb(i) * vb(i));
    let iab = Integral::new(dims, |i| va(i) * vb(i));
    let n = (w * w * w) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for x in 0..=dims[0] - w {
        for y in 0..=dims[1] - w {
            for z in 0..=dims[2] - w {
                let (s_a, s_b) = (ia.window(x, y, z, w), ib.window(x, y, z, w));
                let (mu_a, mu_b) = (s_a / n, s_b / n);
                let var_a = (iaa.window(x, y, z, w) - s_a * mu_a) / (n - 1.0);
                let var_b = (ibb.window(x, y, z, w) - s_b * mu_b) / (n - 1.0);
                let cov = (iab.window(x, y, z, w) - s_a * mu_b) / (n - 1.0);
                total += ssim_window(mu_a, mu_b, var_a, var_b, cov);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

pub(crate) fn ssim_window(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2))
}

/// Grid-level metrics for callers holding raw model outputs in `[-1, 1]`.
pub mod grid {
    use super::*;

    pub fn mae(a: &Grid3<f32>, b: &Grid3<f32>) -> Result<f64> {
        b.check_same_dims(a.dims())?;
        Ok(mae_grid(a, b))
    }

    pub fn psnr(a: &Grid3<f32>, b: &Grid3<f32>) -> Result<f64> {
        b.check_same_dims(a.dims())?;
        Ok(psnr_grid(a, b))
    }

    pub fn ssim3d(a: &Grid3<f32>, b: &Grid3<f32>) -> Result<f64> {
        ssim_grid(a, b)
    }
}

/// Maps a normalized volume to a fixed-length feature vector.
pub trait FeatureExtractor {
    fn feature_dim(&self) -> usize;
    fn extract(&self, v: &Grid3<f32>) -> Result<Vec<f64>>;
}

/// Untrained strided conv stack (8, 16, 32 channels, SiLU) with global
/// average pooling. Weights are drawn once from the seed.
#[derive(Debug, Clone)]
pub struct RandomConvExtractor {
    params: ParameterSet<f32>,
    layers: Vec<(ParamId, ParamId)>,
}

impl RandomConvExtractor {
    pub const CHANNELS: [usize; 3] = [8, 16, 32];

    pub fn new(seed: u64) -> Self {
        let mut rng = seeded(seed);
        let mut params = ParameterSet::new();
        let mut layers = Vec::new();
        let mut c_in = 1;
        for (i, &c_out) in Self::CHANNELS.iter().enumerate() {
            let fan = c_in * 27;
            let bound = libm::sqrtf(6.0 / fan as f32);
            let w = (0..c_out * fan).map(|_| rng.random_range(-bound..bound)).collect();
            let b = (0..c_out).map(|_| rng.random_range(-0.1..0.1)).collect();
            let wid = params.insert(&format!("feat{i}.weight"), vec![c_out, c_in, 3, 3, 3], w).expect("unique");
            let bid = params.insert(&format!("feat{i}.bias"), vec![c_out], b).expect("unique");
            layers.push((wid, bid));
            c_in = c_out;
        }
        Self { params, layers }
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn feature_dim(&self) -> usize {
        Self::CHANNELS[2]
    }

    fn extract(&self, v: &Grid3<f32>) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let mut x = g.input(Tensor::new(1, v.dims(), v.as_slice().to_vec())?);
        for &(w, b) in &self.layers {
            let c = g.conv3d(x, w, b, 2)?;
            x = g.silu(c);
        }
        let out = g.value(x);
        let n = out.spatial();
        let feat: Vec<f64> = out.data.chunks_exact(n).map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / n as f64).collect();
        if feat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "feature extraction".into() });
        }
        Ok(feat)
    }
}

pub fn extract_features(v: &Volume, seed: u64) -> Result<Vec<f64>> {
    v.require_normalized()?;
    RandomConvExtractor::new(seed).extract(v.grid())
}

fn gaussian_fit(set: &[Vec<f64>], which: &str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if set.len() < 2 {
        return Err(Error::InvalidArgument(format!("Fréchet distance needs >= 2 samples in {which}, got {}", set.len())));
    }
    let d = set[0].len();
    if d == 0 || set.iter().any(|f| f.len() != d) {
        return Err(Error::ShapeMismatch { expected: format!("{d}-dim features"), found: format!("ragged {which}") });
    }
    if set.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: format!("features in {which}") });
    }
    let n = set.len() as f64;
    let mut mu = DVector::zeros(d);
    for f in set {
        mu += DVector::from_column_slice(f);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(d, d);
    for f in set {
        let c = DVector::from_column_slice(f) - &mu;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
    if min_eig < COVARIANCE_RIDGE {
        for i in 0..d {
            cov[(i, i)] += COVARIANCE_RIDGE;
        }
    }
    Ok((mu, cov))
}

fn sqrt_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let m = (&m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(m);
    let roots = e.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
    &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose()
}

/// Squared Fréchet distance between Gaussian fits of two feature sets.
///
/// Covariances are sample covariances; a covariance that is not comfortably
/// positive definite gets `COVARIANCE_RIDGE * I` added before the square roots.
pub fn frechet_distance(set_a: &[Vec<f64>], set_b: &[Vec<f64>]) -> Result<f64> {
    let (mu1, s1) = gaussian_fit(set_a, "set_a")?;
    let (mu2, s2) = gaussian_fit(set_b, "set_b")?;
    if mu1.len() != mu2.len() {
        return Err(Error::ShapeMismatch { expected: format!("{}-dim features", mu1.len()), found: format!("{}", mu2.len()) });
    }
    let r1 = sqrt_psd(s1.clone());
    let cross = sqrt_psd(&r1 * &s2 * &r1);
    let d2 = (&mu1 - &mu2).norm_squared() + s1.trace() + s2.trace() - 2.0 * cross.trace();
    Ok(d2.max(0.0))
}

/// Mean and standard deviation of one metric column.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Population standard deviation; an empty column gives NaN.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.iter().all(|v| *v == mean) {
            0.0
        } else {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
        };
        Self { mean, std: libm::sqrt(var) }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub original_spacing: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub rows: Vec<CaseMetrics>,
    pub mae: Summary,
    pub psnr: Summary,
    pub ssim: Summary,
    /// `None` when fewer than two cases were evaluated.
    pub frechet: Option<f64>,
}

impl EvalReport {
    /// Sorts rows by case id and recomputes the aggregates from them.
    pub fn from_rows(mut rows: Vec<CaseMetrics>, frechet: Option<f64>) -> Self {
        rows.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        let col = |f: fn(&CaseMetrics) -> f64| Summary::of(&rows.iter().map(f).collect::<Vec<_>>());
        Self { mae: col(|r| r.mae), psnr: col(|r| r.psnr), ssim: col(|r| r.ssim), rows, frechet }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::ValueSpace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vol(g: Grid3<f32>) -> Volume {
        Volume::new(g, [1.0; 3], ValueSpace::Normalized).unwrap()
    }

    fn random(dims: [usize; 3], seed: u64) -> Grid3<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid3::from_fn(dims, |_, _, _| rng.random_range(-0.8..0.8))
    }

    fn brute_ssim(a: &Grid3<f32>, b: &Grid3<f32>) -> f64 {
        let [nx, ny, nz] = a.dims();
        let w = 7;
        let mut acc = Vec::new();
        for x in 0..=nx - w {
            for y in 0..=ny - w {
                for z in 0..=nz - w {
                    let mut pa = Vec::new();
                    let mut pb = Vec::new();
                    for i in 0..w {
                        for j in 0..w {
                            for k in 0..w {
                                pa.push(a.get(x + i, y + j, z + k) as f64);
                                pb.push(b.get(x + i, y + j, z + k) as f64);
                            }
                        }
                    }
                    let n = pa.len() as f64;
                    let ma = pa.iter().sum::<f64>() / n;
                    let mb = pb.iter().sum::<f64>() / n;
                    let va = pa.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / (n - 1.0);
                    let vb = pb.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / (n - 1.0);
                    let cv = pa.iter().zip(&pb).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / (n - 1.0);
                    let c1 = 0.02f64.powi(2);
                    let c2 = 0.06f64.powi(2);
                    acc.push(((2.0 * ma * mb + c1) * (2.0 * cv + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)));
                }
            }
        }
        acc.iter().sum::<f64>() / acc.len() as f64
    }

    #[test]
    fn offset_closed_forms() {
        let a = random([8, 8, 8], 1);
        let b = a.map(|v| v + 0.1);
        let c = a.map(|v| v + 0.2);
        assert!((mae(&vol(a.clone()), &vol(b.clone())).unwrap() - 0.1).abs() < 1e-6);
        let p1 = psnr(&vol(a.clone()), &vol(b)).unwrap();
        let p2 = psnr(&vol(a.clone()), &vol(c)).unwrap();
        assert!((p1 - 26.0206).abs() < 1e-3, "{p1}");
        assert!((p1 - p2 - 20.0 * 2f64.log10()).abs() < 1e-4);
        assert_eq!(psnr(&vol(a.clone()), &vol(a.clone())).unwrap(), f64::INFINITY);
        assert_eq!(mae(&vol(a.clone()), &vol(a)).unwrap(), 0.0);
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = random([9, 8, 7], 2);
        assert_eq!(ssim3d(&vol(a.clone()), &vol(a)).unwrap(), 1.0);
    }

    #[test]
    fn ssim_constants_closed_form() {
        let a = Grid3::filled([8, 8, 8], 0.0f32);
        let b = Grid3::filled([8, 8, 8], 0.5f32);
        let s = ssim3d(&vol(a), &vol(b)).unwrap();
        assert!((s - 4e-4 / 0.2504).abs() < 1e-12, "{s}");
    }

    #[test]
    fn ssim_matches_brute_force() {
        for seed in 0..3 {
            let a = random([8, 9, 10], seed);
            let b = random([8, 9, 10], seed + 10).zip_map(&a, |x, y| 0.5 * x + 0.5 * y).unwrap();
            let fast = ssim_grid(&a, &b).unwrap();
            let slow = brute_ssim(&a, &b);
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        }
    }

    #[test]
    fn ssim_small_volume_errors() {
        let a = random([6, 8, 8], 0);
        assert!(ssim_grid(&a, &a).is_err());
    }

    #[test]
    fn metrics_are_symmetric() {
        let (a, b) = (vol(random([8, 8, 8], 3)), vol(random([8, 8, 8], 4)));
        assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!((ssim3d(&a, &b).unwrap() - ssim3d(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn hu_volumes_rejected() {
        let a = vol(random([8, 8, 8], 0));
        let h = Volume::new(Grid3::filled([8, 8, 8], 0.0), [1.0; 3], ValueSpace::Hu).unwrap();
        assert!(matches!(mae(&a, &h), Err(Error::ValueSpace { .. })));
    }

    fn scalar_set(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn frechet_scalar_cases() {
        // Sample variance 1 around means 0 and 1.
        let s = libm::sqrt(0.5);
        let d = frechet_distance(&scalar_set(&[-s, s]), &scalar_set(&[1.0 - s, 1.0 + s])).unwrap();
        assert!((d - 1.0).abs() < 1e-9, "{d}");
        let t = libm::sqrt(2.0);
        let d = frechet_distance(&scalar_set(&[-t, t]), &scalar_set(&[-s, s])).unwrap();
        assert!((d - 1.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn frechet_identical_and_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<Vec<f64>> = (0..20).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let b: Vec<Vec<f64>> = (0..20).map(|_| (0..4).map(|_| rng.random_range(-0.5..1.5)).collect()).collect();
        assert!(frechet_distance(&a, &a).unwrap() < 1e-3);
        let d = frechet_distance(&a, &b).unwrap();
        assert!(d > 0.0);
        let q = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let rot = |s: &[Vec<f64>]| -> Vec<Vec<f64>> {
            s.iter().map(|f| (&q * DVector::from_column_slice(f)).iter().copied().collect()).collect()
        };
        let dr = frechet_distance(&rot(&a), &rot(&b)).unwrap();
        assert!((d - dr).abs() < 1e-4, "{d} vs {dr}");
    }

    #[test]
    fn frechet_errors() {
        assert!(frechet_distance(&scalar_set(&[1.0]), &scalar_set(&[1.0, 2.0])).is_err());
        assert!(matches!(
            frechet_distance(&scalar_set(&[1.0, f64::NAN]), &scalar_set(&[1.0, 2.0])),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn rank_deficient_covariance_is_regularized() {
        // Fewer samples than dimensions: singular covariance, still finite.
        let a: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64, 0.0, 1.0, 2.0 * i as f64]).collect();
        let d = frechet_distance(&a, &a).unwrap();
        assert!(d.is_finite() && d < 1e-3);
    }

    #[test]
    fn features_have_fixed_dim_and_are_deterministic() {
        let e = RandomConvExtractor::new(9);
        for dims in [[8, 8, 8], [16, 12, 10]] {
            let v = random(dims, 1);
            let f = e.extract(&v).unwrap();
            assert_eq!(f.len(), 32);
            assert_eq!(f, RandomConvExtractor::new(9).extract(&v).unwrap());
        }
        let v = random([8, 8, 8], 2);
        assert_ne!(e.extract(&v).unwrap(), RandomConvExtractor::new(10).extract(&v).unwrap());
    }

    #[test]
    fn report_aggregates() {
        let row = |id: &str, m: f64| CaseMetrics { case_id: id.into(), mae: m, psnr: 20.0 + m, ssim: 0.5, original_spacing: [1.0; 3] };
        let r = EvalReport::from_rows(vec![row("b", 0.3), row("a", 0.1)], None);
        assert_eq!(r.rows[0].case_id, "a");
        assert!((r.mae.mean - 0.2).abs() < 1e-12);
        assert!((r.mae.std - 0.1).abs() < 1e-12);
        assert_eq!(r.ssim.std, 0.0);
    }
}
