//! Shared 3D U-Net layout used by the time-conditioned denoiser and the
//! regression baseline.
//!
//! ```text
//! in_conv -> [enc{l}.block{b}]* -> enc{l}.down (stride 2) -> ... -> mid
//!         -> dec{l}.up (nearest x2 + conv) ++ skip{l} -> [dec{l}.block{b}]*
//!         -> out.norm -> SiLU -> out.conv (+ out.mix)
//! ```
//! Each residual block is `GN -> SiLU -> conv -> (+ time bias) -> GN -> SiLU
//! -> conv` plus a 1x1x1 projection on the skip path when channels change.
//!
//! With time conditioning, `out.mix` maps the step embedding to one weight
//! per input channel and a bias, and adds that per-voxel affine mix of the raw
//! input to the output. Group norm removes the global mean of every feature
//! map, so without this path the network cannot follow the mean of `x_t`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::ParameterSet;
use crate::real::Real;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    Zero,
    One,
}

pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub blocks_per_level: usize,
    pub groups: usize,
    pub time_dim: Option<usize>,
}

impl Layout {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be >= 1".into());
        }
        if self.levels == 0 || self.blocks_per_level == 0 {
            return bad(format!("levels ({}) and blocks_per_level ({}) must be >= 1", self.levels, self.blocks_per_level));
        }
        if self.groups == 0 || self.base_channels == 0 || !self.base_channels.is_multiple_of(self.groups) {
            return bad(format!(
                "base_channels ({}) must be a positive multiple of group_norm_groups ({})",
                self.base_channels, self.groups
            ));
        }
        if let Some(d) = self.time_dim {
            if d == 0 || d % 2 != 0 {
                return bad(format!("time_embed_dim must be positive and even, got {d}"));
            }
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        let factor = 1usize << (self.levels - 1);
        if dims.iter().any(|&d| d == 0 || d % factor != 0) {
            return Err(Error::InvalidArgument(format!(
                "volume dims {dims:?} must be divisible by {factor} for {} levels",
                self.levels
            )));
        }
        Ok(())
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s = Vec::new();
        let conv = |s: &mut Vec<ParamSpec>, name: &str, c_in: usize, c_out: usize, k: usize, zero: bool| {
            let init = if zero { Init::Zero } else { Init::FanIn(c_in * k * k * k) };
            s.push(ParamSpec { name: format!("{name}.weight"), shape: vec![c_out, c_in, k, k, k], init });
            s.push(ParamSpec { name: format!("{name}.bias"), shape: vec![c_out], init: Init::Zero });
        };
        let norm = |s: &mut Vec<ParamSpec>, name: &str, c: usize| {
            s.push(ParamSpec { name: format!("{name}.gamma"), shape: vec![c], init: Init::One });
            s.push(ParamSpec { name: format!("{name}.beta"), shape: vec![c], init: Init::Zero });
        };
        let linear = |s: &mut Vec<ParamSpec>, name: &str, n_in: usize, n_out: usize| {
            s.push(ParamSpec { name: format!("{name}.weight"), shape: vec![n_out, n_in], init: Init::FanIn(n_in) });
            s.push(ParamSpec { name: format!("{name}.bias"), shape: vec![n_out], init: Init::Zero });
        };
        let block = |s: &mut Vec<ParamSpec>, name: &str, c_in: usize, c_out: usize| {
            norm(s, &format!("{name}.norm1"), c_in);
            conv(s, &format!("{name}.conv1"), c_in, c_out, 3, false);
            if let Some(d) = self.time_dim {
                linear(s, &format!("{name}.time"), d, c_out);
            }
            norm(s, &format!("{name}.norm2"), c_out);
            conv(s, &format!("{name}.conv2"), c_out, c_out, 3, false);
            if c_in != c_out {
                conv(s, &format!("{name}.skip"), c_in, c_out, 1, false);
            }
        };

        if let Some(d) = self.time_dim {
            linear(&mut s, "time_mlp.0", d, d);
            linear(&mut s, "time_mlp.1", d, d);
        }
        conv(&mut s, "in_conv", self.in_channels, self.base_channels, 3, false);
        let mut c = self.base_channels;
        for l in 0..self.levels {
            let cl = self.channels(l);
            for b in 0..self.blocks_per_level {
                block(&mut s, &format!("enc{l}.block{b}"), c, cl);
                c = cl;
            }
            if l + 1 < self.levels {
                conv(&mut s, &format!("enc{l}.down"), cl, cl, 3, false);
            }
        }
        block(&mut s, "mid.block", c, c);
        for l in (0..self.levels.saturating_sub(1)).rev() {
            let cl = self.channels(l);
            conv(&mut s, &format!("dec{l}.up"), self.channels(l + 1), cl, 3, false);
            for b in 0..self.blocks_per_level {
                let c_in = if b == 0 { 2 * cl } else { cl };
                block(&mut s, &format!("dec{l}.block{b}"), c_in, cl);
            }
        }
        norm(&mut s, "out.norm", self.base_channels);
        conv(&mut s, "out.conv", self.base_channels, self.out_channels, 3, true);
        if let Some(d) = self.time_dim {
            let n = self.in_channels + 1;
            s.push(ParamSpec { name: "out.mix.weight".into(), shape: vec![n, d], init: Init::Zero });
            s.push(ParamSpec { name: "out.mix.bias".into(), shape: vec![n], init: Init::Zero });
        }
        s
    }

    /// Draw parameters in spec order from `rng`.
    pub fn init(&self, rng: &mut Rng) -> ParameterSet<f32> {
        let mut ps = ParameterSet::new();
        for spec in self.specs() {
            let n: usize = spec.shape.iter().product();
            let values = match spec.init {
                Init::Zero => vec![0.0; n],
                Init::One => vec![1.0; n],
                Init::FanIn(fan) => {
                    let bound = 1.0 / libm::sqrtf(fan as f32);
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
            };
            ps.insert(&spec.name, spec.shape, values).expect("layout names are unique");
        }
        ps
    }

    pub fn check_params<R: Real>(&self, params: &ParameterSet<R>) -> Result<()> {
        let specs = self.specs();
        if specs.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "parameter set has {} arrays, layout expects {}",
                params.len(),
                specs.len()
            )));
        }
        for (spec, (name, shape, _)) in specs.iter().zip(params.iter()) {
            if spec.name != name || spec.shape != shape {
                return Err(crate::error::shape_err((&spec.name, &spec.shape), (name, shape)));
            }
        }
        Ok(())
    }

    fn conv<R: Real>(&self, g: &mut Graph<'_, R>, x: NodeId, name: &str, stride: usize) -> Result<NodeId> {
        let w = g.params().id(&format!("{name}.weight"))?;
        let b = g.params().id(&format!("{name}.bias"))?;
        g.conv3d(x, w, b, stride)
    }

    fn norm_act<R: Real>(&self, g: &mut Graph<'_, R>, x: NodeId, name: &str) -> Result<NodeId> {
        let gamma = g.params().id(&format!("{name}.gamma"))?;
        let beta = g.params().id(&format!("{name}.beta"))?;
        let h = g.group_norm(x, gamma, beta, self.groups)?;
        Ok(g.silu(h))
    }

    fn block<R: Real>(&self, g: &mut Graph<'_, R>, x: NodeId, name: &str, temb: Option<NodeId>) -> Result<NodeId> {
        let c_in = g.value(x).channels;
        let h = self.norm_act(g, x, &format!("{name}.norm1"))?;
        let mut h = self.conv(g, h, &format!("{name}.conv1"), 1)?;
        if let Some(te) = temb {
            let w = g.params().id(&format!("{name}.time.weight"))?;
            let b = g.params().id(&format!("{name}.time.bias"))?;
            let bias = g.linear(te, w, b)?;
            h = g.channel_bias(h, bias)?;
        }
        let h = self.norm_act(g, h, &format!("{name}.norm2"))?;
        let h = self.conv(g, h, &format!("{name}.conv2"), 1)?;
        let skip = if c_in != g.value(h).channels { self.conv(g, x, &format!("{name}.skip"), 1)? } else { x };
        g.add(h, skip)
    }

    /// Record the network on `g`. `time` is the sinusoidal embedding node,
    /// required exactly when the layout is time-conditioned.
    pub fn build<R: Real>(&self, g: &mut Graph<'_, R>, x: NodeId, time: Option<NodeId>) -> Result<NodeId> {
        let temb = match (self.time_dim, time) {
            (Some(_), Some(e)) => {
                let h = self.linear(g, e, "time_mlp.0")?;
                let h = g.silu(h);
                let h = self.linear(g, h, "time_mlp.1")?;
                Some(g.silu(h))
            }
            (None, None) => None,
            _ => return Err(Error::InvalidArgument("time embedding presence does not match layout".into())),
        };
        let mut h = self.conv(g, x, "in_conv", 1)?;
        let mut skips = Vec::with_capacity(self.levels);
        for l in 0..self.levels {
            for b in 0..self.blocks_per_level {
                h = self.block(g, h, &format!("enc{l}.block{b}"), temb)?;
            }
            if l + 1 < self.levels {
                skips.push(h);
                h = self.conv(g, h, &format!("enc{l}.down"), 2)?;
            }
        }
        h = self.block(g, h, "mid.block", temb)?;
        for l in (0..self.levels.saturating_sub(1)).rev() {
            let up = g.upsample2(h);
            let up = self.conv(g, up, &format!("dec{l}.up"), 1)?;
            h = g.concat(up, skips[l])?;
            for b in 0..self.blocks_per_level {
                h = self.block(g, h, &format!("dec{l}.block{b}"), temb)?;
            }
        }
        let h = self.norm_act(g, h, "out.norm")?;
        let out = self.conv(g, h, "out.conv", 1)?;
        match temb {
            Some(te) => {
                let m = self.linear(g, te, "out.mix")?;
                let mix = g.channel_mix(x, m)?;
                g.add(out, mix)
            }
            None => Ok(out),
        }
    }

    fn linear<R: Real>(&self, g: &mut Graph<'_, R>, x: NodeId, name: &str) -> Result<NodeId> {
        let w = g.params().id(&format!("{name}.weight"))?;
        let b = g.params().id(&format!("{name}.bias"))?;
        g.linear(x, w, b)
    }
}
