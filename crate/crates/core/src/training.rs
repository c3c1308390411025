//! Single-threaded optimisation loop shared by the diffusion model and the
//! regression baseline.
//!
//! One generator drives everything: parameter initialisation first, then for
//! each sample in each step the case index, the diffusion step `t` and the
//! noise field (the regressor draws only the case index).

use alloc::format;
use alloc::string::String;

use rand::Rng as _;
use rand::SeedableRng;

use crate::baseline::{init_regressor_from, regressor_pass, RegressorConfig};
use crate::denoiser::{denoiser_pass, init_parameters_from, DenoiserConfig};
use crate::error::{Error, Result};
use crate::fusion::{assemble_denoiser_input, fuse_biplanar, ConditionVolume};
use crate::grid::{Grid3, Image2D};
use crate::losses::{loss_and_grad, LossBreakdown, LossMode};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::ParameterSet;
use crate::rng::{normal_grid, seeded, Rng};
use crate::schedule::NoiseSchedule;
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// One epoch is as many steps as there are training cases.
    pub epochs: u64,
    /// Overrides `epochs` when set.
    pub steps: Option<u64>,
    pub batch_size: usize,
    #[serde(rename = "T")]
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub seed: u64,
    pub volume_size: usize,
    pub loss_mode: LossMode,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub denoiser: DenoiserConfig,
    pub regressor: RegressorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 1000,
            steps: None,
            batch_size: 1,
            timesteps: NoiseSchedule::DEFAULT_STEPS,
            beta_start: NoiseSchedule::DEFAULT_BETA_START,
            beta_end: NoiseSchedule::DEFAULT_BETA_END,
            seed: 0,
            volume_size: 32,
            loss_mode: LossMode::WithProjection,
            checkpoint_every: 0,
            denoiser: DenoiserConfig::default(),
            regressor: RegressorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("Adam betas must be in [0, 1) and eps > 0".into());
        }
        if self.volume_size == 0 {
            return bad("volume_size must be >= 1".into());
        }
        self.schedule()?;
        self.denoiser.validate()?;
        self.regressor.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.volume_size; 3]
    }

    pub fn total_steps(&self, n_cases: usize) -> u64 {
        self.steps.unwrap_or(self.epochs * n_cases as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Diffusion,
    Regressor,
}

/// A normalized target volume with its fused condition.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCase {
    pub case_id: String,
    pub target: Grid3<f32>,
    pub condition: ConditionVolume,
}

impl TrainingCase {
    pub fn new(case_id: impl Into<String>, ct: &Volume, lateral: &Image2D, frontal: &Image2D) -> Result<Self> {
        ct.require_normalized()?;
        let condition = fuse_biplanar(lateral, frontal, ct.dims())?;
        Ok(Self { case_id: case_id.into(), target: ct.grid().clone(), condition })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepRecord {
    /// 1-based index of the completed step.
    pub step: u64,
    /// Diffusion step of the first sample in the batch; 0 for the regressor.
    pub t: usize,
    pub loss: LossBreakdown,
}

/// Everything needed to continue a run bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParameterSet<f32>,
    pub adam: AdamState,
    pub step: u64,
    pub rng_word_pos: u128,
}

pub struct Trainer<'c> {
    cfg: TrainConfig,
    kind: ModelKind,
    cases: &'c [TrainingCase],
    schedule: NoiseSchedule,
    state: TrainState,
    rng: Rng,
}

impl<'c> Trainer<'c> {
    pub fn new(cfg: TrainConfig, kind: ModelKind, cases: &'c [TrainingCase]) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded(cfg.seed);
        let params = match kind {
            ModelKind::Diffusion => init_parameters_from(&cfg.denoiser, &mut rng)?,
            ModelKind::Regressor => init_regressor_from(&cfg.regressor, &mut rng)?,
        };
        let adam = AdamState::new(&params);
        let state = TrainState { params, adam, step: 0, rng_word_pos: rng.get_word_pos() };
        Self::resume(cfg, kind, cases, state)
    }

    pub fn resume(cfg: TrainConfig, kind: ModelKind, cases: &'c [TrainingCase], state: TrainState) -> Result<Self> {
        cfg.validate()?;
        if cases.is_empty() {
            return Err(Error::InvalidArgument("training needs at least one case".into()));
        }
        let dims = cfg.dims();
        match kind {
            ModelKind::Diffusion => cfg.denoiser.check_dims(dims)?,
            ModelKind::Regressor => cfg.regressor.check_dims(dims)?,
        }
        for c in cases {
            if c.target.dims() != dims || c.condition.dims() != dims {
                return Err(Error::ShapeMismatch {
                    expected: format!("{dims:?} (volume_size)"),
                    found: format!("case `{}` with {:?}", c.case_id, c.target.dims()),
                });
            }
        }
        let mut rng = Rng::seed_from_u64(cfg.seed);
        rng.set_word_pos(state.rng_word_pos);
        let schedule = cfg.schedule()?;
        Ok(Self { cfg, kind, cases, schedule, state, rng })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn params(&self) -> &ParameterSet<f32> {
        &self.state.params
    }

    pub fn steps_done(&self) -> u64 {
        self.state.step
    }

    pub fn total_steps(&self) -> u64 {
        self.cfg.total_steps(self.cases.len())
    }

    pub fn is_finished(&self) -> bool {
        self.state.step >= self.total_steps()
    }

    /// Snapshot with the generator position at the current step boundary.
    pub fn state(&self) -> TrainState {
        TrainState { rng_word_pos: self.rng.get_word_pos(), ..self.state.clone() }
    }

    pub fn into_state(self) -> TrainState {
        let rng_word_pos = self.rng.get_word_pos();
        TrainState { rng_word_pos, ..self.state }
    }

    fn sample_gradient(&mut self) -> Result<(usize, LossBreakdown, ParameterSet<f32>)> {
        let case = &self.cases[self.rng.random_range(0..self.cases.len())];
        let dims = case.target.dims();
        match self.kind {
            ModelKind::Diffusion => {
                let t = self.rng.random_range(1..=self.schedule.steps());
                let eps = normal_grid(&mut self.rng, dims);
                let x_t = self.schedule.q_sample(&case.target, t, &eps)?;
                let input = assemble_denoiser_input(&x_t, &case.condition)?;
                let pass = denoiser_pass(&self.cfg.denoiser, &self.state.params, input.as_slice().to_vec(), dims, t)?;
                let pred = pass.output();
                let (loss, grad) = loss_and_grad(&eps, &pred, self.cfg.loss_mode)?;
                Ok((t, loss, pass.backward(&grad)?))
            }
            ModelKind::Regressor => {
                let pass = regressor_pass(&self.cfg.regressor, &self.state.params, case.condition.as_slice().to_vec(), dims)?;
                let (loss, grad) = loss_and_grad(&case.target, &pass.output(), LossMode::NoiseOnly)?;
                Ok((0, loss, pass.backward(&grad)?))
            }
        }
    }

    /// One optimiser step over `batch_size` drawn samples.
    ///
    /// A non-finite loss, gradient or parameter aborts with the step index and
    /// the offending loss breakdown; parameters are left at the previous step.
    pub fn step(&mut self) -> Result<StepRecord> {
        let k = self.state.step + 1;
        let b = self.cfg.batch_size;
        let mut grads = self.state.params.zeros_like();
        let mut loss = LossBreakdown::default();
        let mut first_t = 0;
        for i in 0..b {
            let (t, l, g) = self.sample_gradient().map_err(|e| match e {
                Error::NonFinite { context } => Error::NonFinite { context: format!("step {k}: {context}") },
                other => other,
            })?;
            if i == 0 {
                first_t = t;
            }
            if !l.total.is_finite() {
                return Err(Error::NonFinite { context: format!("step {k}: loss {l:?}") });
            }
            let w = 1.0 / b as f64;
            loss.voxel_term += w * l.voxel_term;
            loss.proj_axial += w * l.proj_axial;
            loss.proj_coronal += w * l.proj_coronal;
            loss.proj_sagittal += w * l.proj_sagittal;
            loss.total += w * l.total;
            grads.add_scaled(&g, w as f32)?;
        }
        let mut params = self.state.params.clone();
        let mut adam = self.state.adam.clone();
        adam_step(&mut params, &grads, &mut adam, &self.cfg.adam()).map_err(|e| match e {
            Error::NonFinite { context } => Error::NonFinite { context: format!("step {k}: {context}, loss {loss:?}") },
            other => other,
        })?;
        if !params.all_finite() {
            return Err(Error::NonFinite { context: format!("step {k}: parameters after update, loss {loss:?}") });
        }
        self.state.params = params;
        self.state.adam = adam;
        self.state.step = k;
        Ok(StepRecord { step: k, t: first_t, loss })
    }
}

/// Means of the first and last `window` values.
pub fn running_loss(totals: &[f64], window: usize) -> (f64, f64) {
    let w = window.clamp(1, totals.len().max(1));
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&totals[..w.min(totals.len())]), mean(&totals[totals.len().saturating_sub(w)..]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomSpec};
    use crate::projector::synthesize_biplanar;
    use crate::volume::{clip_hu, normalize_to_unit};

    fn case(seed: u64, size: usize) -> TrainingCase {
        let hu = generate_phantom(seed, &PhantomSpec::cubic(size)).unwrap();
        let xr = synthesize_biplanar(&hu).unwrap();
        let ct = normalize_to_unit(&clip_hu(&hu).unwrap()).unwrap();
        TrainingCase::new(format!("case{seed}"), &ct, &xr.lateral, &xr.frontal).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            steps: Some(3),
            volume_size: 8,
            denoiser: DenoiserConfig { base_channels: 4, levels: 2, time_embed_dim: 8, group_norm_groups: 2, ..Default::default() },
            regressor: RegressorConfig { base_channels: 4, levels: 2, group_norm_groups: 2, ..Default::default() },
            ..Default::default()
        }
    }

    fn run(cfg: &TrainConfig, kind: ModelKind, cases: &[TrainingCase]) -> (Vec<StepRecord>, TrainState) {
        let mut tr = Trainer::new(cfg.clone(), kind, cases).unwrap();
        let mut log = Vec::new();
        while !tr.is_finished() {
            log.push(tr.step().unwrap());
        }
        (log, tr.into_state())
    }

    #[test]
    fn identical_seeds_identical_runs() {
        let cases = [case(0, 8), case(1, 8)];
        for kind in [ModelKind::Diffusion, ModelKind::Regressor] {
            let a = run(&small_cfg(), kind, &cases);
            let b = run(&small_cfg(), kind, &cases);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let cases = [case(0, 8), case(1, 8)];
        let cfg = TrainConfig { steps: Some(6), batch_size: 2, ..small_cfg() };
        let (full_log, full) = run(&cfg, ModelKind::Diffusion, &cases);
        let mut tr = Trainer::new(cfg.clone(), ModelKind::Diffusion, &cases).unwrap();
        let mut log: Vec<_> = (0..2).map(|_| tr.step().unwrap()).collect();
        let mid = tr.state();
        drop(tr);
        let mut tr = Trainer::resume(cfg, ModelKind::Diffusion, &cases, mid).unwrap();
        while !tr.is_finished() {
            log.push(tr.step().unwrap());
        }
        assert_eq!(log, full_log);
        assert_eq!(tr.into_state(), full);
    }

    #[test]
    fn loss_modes_share_first_voxel_term() {
        let cases = [case(2, 8)];
        let noise_only = TrainConfig { loss_mode: LossMode::NoiseOnly, ..small_cfg() };
        let mut a = Trainer::new(noise_only, ModelKind::Diffusion, &cases).unwrap();
        let mut b = Trainer::new(small_cfg(), ModelKind::Diffusion, &cases).unwrap();
        let (ra, rb) = (a.step().unwrap(), b.step().unwrap());
        assert_eq!(ra.loss.voxel_term, rb.loss.voxel_term);
        assert_ne!(ra.loss.total, rb.loss.total);
    }

    #[test]
    fn mismatched_case_dims_rejected() {
        let cases = [case(0, 16)];
        assert!(matches!(Trainer::new(small_cfg(), ModelKind::Diffusion, &cases), Err(Error::ShapeMismatch { .. })));
        assert!(Trainer::new(small_cfg(), ModelKind::Diffusion, &[]).is_err());
    }

    #[test]
    fn config_json_names() {
        let cfg = TrainConfig::default();
        let s = serde_json::to_value(&cfg).unwrap();
        for k in ["lr", "adam_beta1", "adam_beta2", "adam_eps", "epochs", "batch_size", "T", "beta_start", "beta_end", "seed", "volume_size", "loss_mode"] {
            assert!(s.get(k).is_some(), "{k}");
        }
        assert_eq!(s["loss_mode"], "WITH_PROJECTION");
        assert!(TrainConfig { lr: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn running_loss_windows() {
        let v = [4.0, 2.0, 1.0, 1.0];
        assert_eq!(running_loss(&v, 2), (3.0, 1.0));
        assert_eq!(running_loss(&v, 10), (2.0, 2.0));
    }
}
