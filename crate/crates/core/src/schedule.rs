//! Forward noising and ancestral reverse sampling for a linear beta schedule.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Grid3;
use crate::real::Real;
use crate::rng;

/// Linear beta schedule with derived tables, stored in 64-bit and indexed
/// by step `t` in `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_vars: Vec<f64>,
}

impl NoiseSchedule {
    pub const DEFAULT_STEPS: usize = 1000;
    pub const DEFAULT_BETA_START: f64 = 1e-6;
    pub const DEFAULT_BETA_END: f64 = 1e-2;

    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidArgument(format!("schedule needs T >= 2, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let span = beta_end - beta_start;
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if i == steps - 1 {
                    beta_end
                } else {
                    beta_start + i as f64 / (steps - 1) as f64 * span
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let posterior_vars = (0..steps)
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                betas[i] * (1.0 - prev) / (1.0 - alpha_bars[i])
            })
            .collect();
        Ok(Self { betas, alphas, alpha_bars, posterior_vars })
    }

    pub fn paper_default() -> Self {
        Self::linear(Self::DEFAULT_STEPS, Self::DEFAULT_BETA_START, Self::DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }
    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_vars[t - 1]
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if (1..=self.steps()).contains(&t) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("step {t} outside 1..={}", self.steps())))
        }
    }

    /// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
    pub fn q_sample<R: Real>(&self, x0: &Grid3<R>, t: usize, eps: &Grid3<R>) -> Result<Grid3<R>> {
        self.check_step(t)?;
        let ab = self.alpha_bar(t);
        let (c0, c1) = (R::from_f64(libm::sqrt(ab)), R::from_f64(libm::sqrt(1.0 - ab)));
        x0.zip_map(eps, |x, e| c0 * x + c1 * e)
    }

    /// One ancestral step `x_t -> x_{t-1}`; `z` must be all zero at `t = 1`.
    pub fn ddpm_step<R: Real>(
        &self,
        x_t: &Grid3<R>,
        t: usize,
        eps_pred: &Grid3<R>,
        z: &Grid3<R>,
    ) -> Result<Grid3<R>> {
        self.check_step(t)?;
        x_t.check_same_dims(eps_pred.dims())?;
        x_t.check_same_dims(z.dims())?;
        if t == 1 && z.as_slice().iter().any(|&v| v != R::ZERO) {
            return Err(Error::InvalidArgument("noise must be zero at t = 1".into()));
        }
        let inv_sqrt_alpha = R::from_f64(1.0 / libm::sqrt(self.alpha(t)));
        let eps_coef = R::from_f64(self.beta(t) / libm::sqrt(1.0 - self.alpha_bar(t)));
        let sigma = R::from_f64(libm::sqrt(self.posterior_var(t)));
        let data = x_t
            .as_slice()
            .iter()
            .zip(eps_pred.as_slice())
            .zip(z.as_slice())
            .map(|((&x, &e), &n)| inv_sqrt_alpha * (x - eps_coef * e) + sigma * n)
            .collect();
        Grid3::from_vec(x_t.dims(), data)
    }
}

/// Anything that predicts the noise in `x_t` given a condition volume.
pub trait NoisePredictor {
    fn predict_noise(&self, x_t: &Grid3<f32>, cond: &Grid3<f32>, t: usize) -> Result<Grid3<f32>>;
}

impl<F> NoisePredictor for F
where
    F: Fn(&Grid3<f32>, &Grid3<f32>, usize) -> Result<Grid3<f32>>,
{
    fn predict_noise(&self, x_t: &Grid3<f32>, cond: &Grid3<f32>, t: usize) -> Result<Grid3<f32>> {
        self(x_t, cond, t)
    }
}

/// Ancestral sampling from `x_T ~ N(0, I)` down to `x_0`, clamped to [-1, 1].
///
/// The generator draws `x_T` first, then one noise field per step for
/// `t = T..2`; no noise is drawn at `t = 1`.
pub fn sample<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &NoiseSchedule,
    cond: &Grid3<f32>,
    seed: u64,
) -> Result<Grid3<f32>> {
    let dims = cond.dims();
    let mut rng = rng::seeded(seed);
    let mut x = rng::normal_grid(&mut rng, dims);
    for t in (1..=schedule.steps()).rev() {
        let eps = predictor.predict_noise(&x, cond, t)?;
        let z = if t > 1 { rng::normal_grid(&mut rng, dims) } else { Grid3::zeros(dims) };
        x = schedule.ddpm_step(&x, t, &eps, &z)?;
        if !x.all_finite() {
            return Err(Error::NonFinite { context: format!("sampling step t = {t}") });
        }
    }
    Ok(x.map(|v| v.clamp(-1.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn default_endpoints() {
        let s = NoiseSchedule::paper_default();
        assert_eq!(s.steps(), 1000);
        assert_eq!(s.beta(1), 1e-6);
        assert_eq!(s.beta(1000), 1e-2);
        assert_eq!(s.posterior_var(1), 0.0);
    }

    #[test]
    fn two_step_schedule_is_exact() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        assert_eq!((s.beta(1), s.beta(2)), (0.1, 0.2));
    }

    #[test]
    fn final_alpha_bar_matches_product_oracle() {
        let s = NoiseSchedule::paper_default();
        let mut prod = 1.0f64;
        for i in 0..1000 {
            prod *= 1.0 - (1e-6 + i as f64 / 999.0 * (1e-2 - 1e-6));
        }
        assert!((s.alpha_bar(1000) - prod).abs() < 1e-15);
        assert!(prod < 0.01);
    }

    #[test]
    fn tables_are_monotone_and_finite() {
        let s = NoiseSchedule::paper_default();
        for t in 2..=1000 {
            assert!(s.beta(t) > s.beta(t - 1));
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.alpha_bar(t) > 0.0 && s.posterior_var(t).is_finite());
        }
    }

    #[test]
    fn invalid_ranges() {
        assert!(NoiseSchedule::linear(1, 1e-4, 1e-2).is_err());
        assert!(NoiseSchedule::linear(10, 1e-2, 1e-4).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 1e-2).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn q_sample_coefficients() {
        let s = NoiseSchedule::paper_default();
        let x0 = Grid3::filled([1, 1, 1], 1.0f64);
        let zero = Grid3::filled([1, 1, 1], 0.0f64);
        let one = Grid3::filled([1, 1, 1], 1.0f64);
        let a = s.q_sample(&x0, 1, &zero).unwrap().get(0, 0, 0);
        let b = s.q_sample(&zero, 1, &one).unwrap().get(0, 0, 0);
        assert!((a - 0.9999995).abs() < 1e-9);
        assert!((b - 0.001).abs() < 1e-12);
        assert!(s.q_sample(&x0, 0, &zero).is_err());
        assert!(s.q_sample(&x0, 1, &Grid3::filled([2, 1, 1], 0.0)).is_err());
    }

    #[test]
    fn q_sample_without_noise_scales() {
        let s = NoiseSchedule::paper_default();
        let x0 = Grid3::from_fn([2, 2, 2], |x, y, z| (x + y + z) as f32);
        let out = s.q_sample(&x0, 500, &Grid3::zeros([2, 2, 2])).unwrap();
        let c = libm::sqrt(s.alpha_bar(500)) as f32;
        for (o, x) in out.as_slice().iter().zip(x0.as_slice()) {
            assert_eq!(*o, c * x);
        }
    }

    #[test]
    fn ddpm_step_formula_oracle() {
        let s = NoiseSchedule::linear(50, 1e-4, 2e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dims = [2, 3, 2];
        let mut draw = || Grid3::from_fn(dims, |_, _, _| StandardNormal.sample(&mut rng));
        let (x, e, z): (Grid3<f64>, Grid3<f64>, Grid3<f64>) = (draw(), draw(), draw());
        for t in [2, 17, 50] {
            let out = s.ddpm_step(&x, t, &e, &z).unwrap();
            let beta = 1e-4 + (t - 1) as f64 / 49.0 * (2e-2 - 1e-4);
            let abar: f64 = (1..=t).map(|k| 1.0 - (1e-4 + (k - 1) as f64 / 49.0 * (2e-2 - 1e-4))).product();
            let abar_prev = abar / (1.0 - beta);
            let var = beta * (1.0 - abar_prev) / (1.0 - abar);
            for i in 0..x.len() {
                let (xv, ev, zv) = (x.as_slice()[i], e.as_slice()[i], z.as_slice()[i]);
                let expect = (xv - beta / (1.0 - abar).sqrt() * ev) / (1.0 - beta).sqrt() + var.sqrt() * zv;
                assert!((out.as_slice()[i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ddpm_step_trivial_cases() {
        let s = NoiseSchedule::paper_default();
        let x = Grid3::from_fn([2, 2, 2], |x, y, z| (x * 4 + y * 2 + z) as f64 - 3.0);
        let zero = Grid3::zeros([2, 2, 2]);
        let out = s.ddpm_step(&x, 700, &zero, &zero).unwrap();
        for (o, v) in out.as_slice().iter().zip(x.as_slice()) {
            assert!((o - v / s.alpha(700).sqrt()).abs() < 1e-12);
        }
        let ones = Grid3::filled([2, 2, 2], 1.0);
        assert!(s.ddpm_step(&x, 1, &zero, &ones).is_err());
        assert!(s.ddpm_step(&x, 1001, &zero, &zero).is_err());
        // At t = 1 the posterior variance vanishes so the step is deterministic.
        let a = s.ddpm_step(&x, 1, &ones, &zero).unwrap();
        assert!(a.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn single_step_inversion_recovers_x0() {
        let s = NoiseSchedule::paper_default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x0 = Grid3::from_fn([4, 4, 4], |_, _, _| rng.random_range(-1.0..1.0f64));
        let eps = Grid3::from_fn([4, 4, 4], |_, _, _| StandardNormal.sample(&mut rng));
        let xt = s.q_sample(&x0, 1, &eps).unwrap();
        let back = s.ddpm_step(&xt, 1, &eps, &Grid3::zeros([4, 4, 4])).unwrap();
        for (a, b) in back.as_slice().iter().zip(x0.as_slice()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn two_step_sampling_unrolls() {
        let s = NoiseSchedule::linear(2, 0.1, 0.3).unwrap();
        let cond = Grid3::filled([2, 2, 2], 0.0f32);
        let zero = |x: &Grid3<f32>, _: &Grid3<f32>, _: usize| Ok(Grid3::zeros(x.dims()));
        let out = sample(&zero, &s, &cond, 77).unwrap();

        let mut rng = rng::seeded(77);
        let x2 = rng::normal_grid(&mut rng, [2, 2, 2]);
        let z = rng::normal_grid(&mut rng, [2, 2, 2]);
        let sigma2 = libm::sqrt(s.posterior_var(2));
        for i in 0..8 {
            let x1 = x2.as_slice()[i] as f64 / s.alpha(2).sqrt() + sigma2 * z.as_slice()[i] as f64;
            let x0 = x1 / s.alpha(1).sqrt();
            assert!((out.as_slice()[i] as f64 - x0.clamp(-1.0, 1.0)).abs() < 1e-5);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_clamped() {
        let s = NoiseSchedule::linear(20, 1e-4, 0.05).unwrap();
        let cond = Grid3::filled([3, 3, 3], 0.5f32);
        let pred = |x: &Grid3<f32>, c: &Grid3<f32>, t: usize| {
            x.zip_map(c, |a, b| 0.3 * a - b * t as f32 * 0.01)
        };
        let a = sample(&pred, &s, &cond, 5).unwrap();
        let b = sample(&pred, &s, &cond, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_ne!(a, sample(&pred, &s, &cond, 6).unwrap());
    }

    #[test]
    fn sampling_aborts_on_non_finite() {
        let s = NoiseSchedule::linear(5, 1e-4, 0.05).unwrap();
        let cond = Grid3::filled([2, 2, 2], 0.0f32);
        let bad = |x: &Grid3<f32>, _: &Grid3<f32>, t: usize| {
            Ok(Grid3::filled(x.dims(), if t == 3 { f32::NAN } else { 0.0 }))
        };
        match sample(&bad, &s, &cond, 1) {
            Err(Error::NonFinite { context }) => assert!(context.contains("t = 3")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
