//! Encoder-decoder regressor mapping the fused condition volume straight to
//! a CT estimate, used as a non-generative reference.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::denoiser::ForwardPass;
use crate::graph::{Graph, Tensor};
use crate::grid::Grid3;
use crate::params::ParameterSet;
use crate::real::Real;
use crate::rng::{self, Rng};
use crate::unet::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RegressorConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub blocks_per_level: usize,
    pub group_norm_groups: usize,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self { in_channels: 1, out_channels: 1, base_channels: 16, levels: 3, blocks_per_level: 1, group_norm_groups: 8 }
    }
}

impl RegressorConfig {
    pub(crate) fn layout(&self) -> Layout {
        Layout {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            base_channels: self.base_channels,
            levels: self.levels,
            blocks_per_level: self.blocks_per_level,
            groups: self.group_norm_groups,
            time_dim: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 1 || self.out_channels != 1 {
            return Err(Error::InvalidArgument("regressor maps 1 channel to 1".into()));
        }
        self.layout().validate()
    }

    pub fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        self.layout().check_dims(dims)
    }
}

pub fn init_regressor(cfg: &RegressorConfig, seed: u64) -> Result<ParameterSet<f32>> {
    init_regressor_from(cfg, &mut rng::seeded(seed))
}

pub fn init_regressor_from(cfg: &RegressorConfig, rng: &mut Rng) -> Result<ParameterSet<f32>> {
    cfg.validate()?;
    Ok(cfg.layout().init(rng))
}

/// Record `tanh(unet(condition))`.
pub fn regressor_pass<'p, R: Real>(
    cfg: &RegressorConfig,
    params: &'p ParameterSet<R>,
    cond: Vec<R>,
    dims: [usize; 3],
) -> Result<ForwardPass<'p, R>> {
    cfg.validate()?;
    let layout = cfg.layout();
    layout.check_dims(dims)?;
    layout.check_params(params)?;
    let mut g = Graph::new(params);
    let x = g.input(Tensor::new(1, dims, cond)?);
    let out = layout.build(&mut g, x, None)?;
    let out = g.tanh(out);
    ForwardPass::new(g, out, dims)
}

pub fn regressor_forward<R: Real>(cfg: &RegressorConfig, params: &ParameterSet<R>, cond: &Grid3<f32>) -> Result<Grid3<R>> {
    let data = cond.as_slice().iter().map(|&v| R::from_f64(v as f64)).collect();
    Ok(regressor_pass(cfg, params, data, cond.dims())?.output())
}
