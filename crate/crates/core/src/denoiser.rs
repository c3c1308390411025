//! Time-conditional 3D U-Net noise predictor.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fusion::{assemble_denoiser_input, DenoiserInput};
use crate::graph::{Graph, NodeId, Tensor};
use crate::grid::Grid3;
use crate::params::ParameterSet;
use crate::real::Real;
use crate::rng::{self, Rng};
use crate::schedule::NoisePredictor;
use crate::unet::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub blocks_per_level: usize,
    pub time_embed_dim: usize,
    pub group_norm_groups: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            in_channels: 2,
            out_channels: 1,
            base_channels: 16,
            levels: 3,
            blocks_per_level: 1,
            time_embed_dim: 64,
            group_norm_groups: 8,
        }
    }
}

impl DenoiserConfig {
    pub(crate) fn layout(&self) -> Layout {
        Layout {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            base_channels: self.base_channels,
            levels: self.levels,
            blocks_per_level: self.blocks_per_level,
            groups: self.group_norm_groups,
            time_dim: Some(self.time_embed_dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != DenoiserInput::CHANNELS || self.out_channels != 1 {
            return Err(Error::InvalidArgument(format!(
                "denoiser maps 2 channels to 1, got {} -> {}",
                self.in_channels, self.out_channels
            )));
        }
        self.layout().validate()
    }

    /// Checks that `dims` can pass through every downsampling level.
    pub fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        self.layout().check_dims(dims)
    }
}

/// Sinusoidal step embedding: `e[2i] = sin(t / 10000^(2i/dim))`,
/// `e[2i+1] = cos(...)`.
pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("embedding dim must be positive and even, got {dim}")));
    }
    let mut e = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let arg = t as f64 / libm::pow(10000.0, 2.0 * i as f64 / dim as f64);
        e.push(libm::sin(arg));
        e.push(libm::cos(arg));
    }
    Ok(e)
}

/// Fresh parameters from `seed`; the output head is zero so an untrained
/// network predicts zero noise.
pub fn init_parameters(cfg: &DenoiserConfig, seed: u64) -> Result<ParameterSet<f32>> {
    init_parameters_from(cfg, &mut rng::seeded(seed))
}

pub fn init_parameters_from(cfg: &DenoiserConfig, rng: &mut Rng) -> Result<ParameterSet<f32>> {
    cfg.validate()?;
    Ok(cfg.layout().init(rng))
}

/// A recorded forward pass, kept for back-propagation.
pub struct ForwardPass<'p, R: Real> {
    graph: Graph<'p, R>,
    output: NodeId,
    dims: [usize; 3],
}

impl<'p, R: Real> ForwardPass<'p, R> {
    pub fn output(&self) -> Grid3<R> {
        Grid3::from_vec(self.dims, self.graph.value(self.output).data.clone()).expect("output matches input grid")
    }

    pub fn output_slice(&self) -> &[R] {
        &self.graph.value(self.output).data
    }

    /// Parameter gradients of a scalar loss with `d loss / d output = grad`.
    pub fn backward(&self, grad: &Grid3<R>) -> Result<ParameterSet<R>> {
        Ok(self.graph.backward(self.output, grad.as_slice().to_vec())?.0)
    }

    pub(crate) fn new(graph: Graph<'p, R>, output: NodeId, dims: [usize; 3]) -> Result<Self> {
        if let Some(layer) = graph.first_non_finite() {
            return Err(Error::NonFinite { context: format!("layer `{layer}`") });
        }
        Ok(Self { graph, output, dims })
    }
}

/// Record `eps_theta(x_t, t, condition)` for a channel-major `[2, nx, ny, nz]`
/// input.
pub fn denoiser_pass<'p, R: Real>(
    cfg: &DenoiserConfig,
    params: &'p ParameterSet<R>,
    input: Vec<R>,
    dims: [usize; 3],
    t: usize,
) -> Result<ForwardPass<'p, R>> {
    cfg.validate()?;
    if t == 0 {
        return Err(Error::InvalidArgument("diffusion steps start at 1".into()));
    }
    let layout = cfg.layout();
    layout.check_dims(dims)?;
    layout.check_params(params)?;
    let mut g = Graph::new(params);
    let x = g.input(Tensor::new(DenoiserInput::CHANNELS, dims, input)?);
    let emb = time_embedding(t, cfg.time_embed_dim)?;
    let e = g.input(Tensor::vector(emb.into_iter().map(R::from_f64).collect()));
    let out = layout.build(&mut g, x, Some(e))?;
    ForwardPass::new(g, out, dims)
}

pub fn denoiser_forward<R: Real>(
    cfg: &DenoiserConfig,
    params: &ParameterSet<R>,
    input: &DenoiserInput,
    t: usize,
) -> Result<Grid3<R>> {
    let data = input.as_slice().iter().map(|&v| R::from_f64(v as f64)).collect();
    Ok(denoiser_pass(cfg, params, data, input.dims(), t)?.output())
}

/// A configured network with 32-bit parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: ParameterSet<f32>,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, params: ParameterSet<f32>) -> Result<Self> {
        config.validate()?;
        config.layout().check_params(&params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet<f32> {
        &self.params
    }

    pub fn forward(&self, input: &DenoiserInput, t: usize) -> Result<Grid3<f32>> {
        denoiser_forward(&self.config, &self.params, input, t)
    }
}

impl NoisePredictor for Denoiser {
    fn predict_noise(&self, x_t: &Grid3<f32>, cond: &Grid3<f32>, t: usize) -> Result<Grid3<f32>> {
        self.forward(&assemble_denoiser_input(x_t, cond)?, t)
    }
}
