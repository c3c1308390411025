//! Procedural vertebra phantoms with pedicle-screw-like implants.
//!
//! Geometry is laid out in millimetres around the volume centre, so the same
//! seed gives the same anatomy at any spacing. Axes: x left-right, y
//! posterior-anterior, z inferior-superior.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::grid::Grid3;
use crate::rng::{seeded, Rng};
use crate::volume::{ValueSpace, Volume, HU_MAX, HU_MIN};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub volume_size: [usize; 3],
    pub spacing: [f64; 3],
    pub soft_tissue_hu: [f32; 2],
    pub bone_hu: [f32; 2],
    pub implant_hu: f32,
    pub n_screws: usize,
    /// Centre offset as a fraction of the in-plane radius.
    pub center_jitter: f64,
    /// Rotation about z, radians.
    pub rotation_jitter: f64,
    /// Relative radius perturbation.
    pub radius_jitter: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            volume_size: [32; 3],
            spacing: [1.0; 3],
            soft_tissue_hu: [0.0, 100.0],
            bone_hu: [400.0, 1200.0],
            implant_hu: 3000.0,
            n_screws: 2,
            center_jitter: 0.08,
            rotation_jitter: 0.25,
            radius_jitter: 0.15,
        }
    }
}

impl PhantomSpec {
    pub fn cubic(size: usize) -> Self {
        Self { volume_size: [size; 3], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.volume_size.iter().any(|&n| n < 4) {
            return bad("phantom dimensions must be >= 4");
        }
        if self.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("phantom spacing must be positive");
        }
        for r in [self.soft_tissue_hu, self.bone_hu] {
            if !(r[0] <= r[1] && r[0] >= HU_MIN && r[1] <= HU_MAX) {
                return bad("HU ranges must be ordered and inside [-1000, 4096]");
            }
        }
        if !(self.implant_hu > self.bone_hu[1] && self.implant_hu <= HU_MAX) {
            return bad("implant_hu must exceed bone and be <= 4096");
        }
        if [self.center_jitter, self.rotation_jitter, self.radius_jitter].iter().any(|j| !(j.is_finite() && *j >= 0.0 && *j < 0.5)) {
            return bad("jitter values must be in [0, 0.5)");
        }
        Ok(())
    }

    /// In-plane reference radius in mm.
    fn radius(&self) -> f64 {
        (0.5 * self.volume_size[0] as f64 * self.spacing[0]).min(0.5 * self.volume_size[1] as f64 * self.spacing[1])
    }

    fn half_height(&self) -> f64 {
        0.5 * self.volume_size[2] as f64 * self.spacing[2]
    }
}

/// A finite cylinder (flat caps) from `start` along unit `dir`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Screw {
    pub start: [f64; 3],
    pub dir: [f64; 3],
    pub length: f64,
    pub radius: f64,
}

impl Screw {
    pub fn volume(&self) -> f64 {
        PI * self.radius * self.radius * self.length
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d = [p[0] - self.start[0], p[1] - self.start[1], p[2] - self.start[2]];
        let along = d[0] * self.dir[0] + d[1] * self.dir[1] + d[2] * self.dir[2];
        if !(0.0..=self.length).contains(&along) {
            return false;
        }
        let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2] - along * along;
        r2 <= self.radius * self.radius
    }
}

/// Drawn geometry of one phantom, in mm relative to the volume centre.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomGeometry {
    pub center: [f64; 2],
    pub rotation: f64,
    pub tissue_axes: [f64; 3],
    pub tissue_hu: f32,
    pub body_center_y: f64,
    pub body_radius: f64,
    pub body_half_height: f64,
    pub cancellous_hu: f32,
    pub cortical_hu: f32,
    pub canal_center_y: f64,
    pub canal_radius: f64,
    pub arch_radius: f64,
    pub screws: Vec<Screw>,
}

fn jitter(rng: &mut Rng, amount: f64) -> f64 {
    if amount == 0.0 {
        0.0
    } else {
        rng.random_range(-amount..amount)
    }
}

fn uniform(rng: &mut Rng, range: [f32; 2]) -> f32 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

/// Draws the phantom geometry from `rng` in a fixed order.
pub fn draw_geometry(rng: &mut Rng, spec: &PhantomSpec) -> PhantomGeometry {
    let r = spec.radius();
    let hz = spec.half_height();
    let scale = |rng: &mut Rng| 1.0 + jitter(rng, spec.radius_jitter);
    let center = [jitter(rng, spec.center_jitter) * r, jitter(rng, spec.center_jitter) * r];
    let rotation = jitter(rng, spec.rotation_jitter);
    let tissue_axes = [0.9 * r * scale(rng), 0.78 * r * scale(rng), 0.97 * hz];
    let tissue_hu = uniform(rng, spec.soft_tissue_hu);
    let body_radius = 0.36 * r * scale(rng);
    let body_center_y = 0.14 * r;
    let body_half_height = 0.62 * hz * scale(rng);
    let mid = 0.5 * (spec.bone_hu[0] + spec.bone_hu[1]);
    let cancellous_hu = uniform(rng, [spec.bone_hu[0], mid]);
    let cortical_hu = uniform(rng, [mid, spec.bone_hu[1]]);
    let canal_radius = 0.12 * r * scale(rng);
    let canal_center_y = -0.38 * r;
    let arch_radius = canal_radius + 0.12 * r;

    let screw_radius = 0.11 * r;
    let screw_length = 0.62 * r;
    let screws = (0..spec.n_screws)
        .map(|i| {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            // Later pairs sit at other heights inside the body.
            let level = (i / 2) as f64;
            let z = (jitter(rng, 0.35) + 0.3 * level * if level as usize % 2 == 1 { 1.0 } else { -1.0 }) * body_half_height;
            let z = z.clamp(-0.6 * body_half_height, 0.6 * body_half_height);
            let medial = rng.random_range(0.17..0.35);
            let tilt = jitter(rng, 0.1);
            let start = [side * 0.27 * r, -0.26 * r, z];
            let d = [-side * libm::sin(medial), libm::cos(medial), tilt];
            let n = libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
            Screw { start, dir: [d[0] / n, d[1] / n, d[2] / n], length: screw_length, radius: screw_radius }
        })
        .collect();

    PhantomGeometry {
        center,
        rotation,
        tissue_axes,
        tissue_hu,
        body_center_y,
        body_radius,
        body_half_height,
        cancellous_hu,
        cortical_hu,
        canal_center_y,
        canal_radius,
        arch_radius,
        screws,
    }
}

impl PhantomGeometry {
    /// World (volume-centred) mm to the vertebra frame.
    fn local(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = (libm::sin(self.rotation), libm::cos(self.rotation));
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        [c * dx + s * dy, -s * dx + c * dy, p[2]]
    }

    fn in_any_screw(&self, q: [f64; 3]) -> bool {
        self.screws.iter().any(|s| s.contains(q))
    }

    /// HU of the anatomy at a local-frame point, ignoring implants.
    fn anatomy(&self, q: [f64; 3]) -> f32 {
        let [x, y, z] = q;
        let [a, b, c] = self.tissue_axes;
        if (x / a).powi(2) + (y / b).powi(2) + (z / c).powi(2) > 1.0 {
            return HU_MIN;
        }
        let canal_r = libm::sqrt(x * x + (y - self.canal_center_y).powi(2));
        if canal_r <= self.canal_radius {
            return 15.0;
        }
        if z.abs() <= self.body_half_height {
            let body_r = libm::sqrt(x * x + (y - self.body_center_y).powi(2));
            if body_r <= self.body_radius {
                return if body_r >= 0.8 * self.body_radius || z.abs() >= 0.9 * self.body_half_height {
                    self.cortical_hu
                } else {
                    self.cancellous_hu
                };
            }
            // Pedicles join the arch to the body; screws run through them.
            let pedicle = y > self.canal_center_y && y < self.body_center_y && x.abs() <= 0.5 * self.body_radius + 0.15 * self.arch_radius;
            if canal_r <= self.arch_radius || pedicle && x.abs() >= 0.6 * self.canal_radius {
                return self.cortical_hu;
            }
        }
        self.tissue_hu
    }
}

/// Sub-samples per axis used to decide implant occupancy of a voxel.
const IMPLANT_SUBSAMPLES: usize = 4;

/// Renders a drawn geometry. Implants are assigned where at least half of a
/// voxel is covered, other tissue by the voxel centre.
pub fn render_phantom(geometry: &PhantomGeometry, spec: &PhantomSpec) -> Result<Volume> {
    spec.validate()?;
    let [nx, ny, nz] = spec.volume_size;
    let s = spec.spacing;
    let world = |i: usize, n: usize, s: f64, frac: f64| (i as f64 + frac) * s - 0.5 * n as f64 * s;
    let k = IMPLANT_SUBSAMPLES;
    let grid = Grid3::from_fn(spec.volume_size, |ix, iy, iz| {
        let centre = geometry.local([world(ix, nx, s[0], 0.5), world(iy, ny, s[1], 0.5), world(iz, nz, s[2], 0.5)]);
        let mut hu = geometry.anatomy(centre);
        let reach = geometry.screws.iter().map(|sc| sc.radius + sc.length).fold(0.0, f64::max);
        let near = geometry.screws.iter().any(|sc| {
            let d = [centre[0] - sc.start[0], centre[1] - sc.start[1], centre[2] - sc.start[2]];
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= (reach + s[0] + s[1] + s[2]).powi(2)
        });
        if near {
            let mut inside = 0;
            for a in 0..k {
                for b in 0..k {
                    for c in 0..k {
                        let f = |j: usize| (j as f64 + 0.5) / k as f64;
                        let q = geometry.local([world(ix, nx, s[0], f(a)), world(iy, ny, s[1], f(b)), world(iz, nz, s[2], f(c))]);
                        inside += geometry.in_any_screw(q) as usize;
                    }
                }
            }
            if 2 * inside >= k * k * k {
                hu = spec.implant_hu;
            }
        }
        hu.clamp(HU_MIN, HU_MAX)
    });
    Volume::new(grid, spec.spacing, ValueSpace::Hu)
}

/// Deterministic phantom for `seed`.
pub fn generate_phantom(seed: u64, spec: &PhantomSpec) -> Result<Volume> {
    spec.validate()?;
    let mut rng = seeded(seed);
    let geometry = draw_geometry(&mut rng, spec);
    render_phantom(&geometry, spec)
}
