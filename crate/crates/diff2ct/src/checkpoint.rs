//! `DCKP1` checkpoints: magic line, JSON index line, then the concatenated
//! little-endian `f32` arrays the index points at (byte offsets and lengths).
//!
//! Parameters are stored under their own names; Adam moments follow as
//! `adam.m.<name>` and `adam.v.<name>`. The generator position is kept so a
//! resumed run continues exactly where the saved one stopped.

use std::path::Path;

use diff2ct_core::baseline::init_regressor;
use diff2ct_core::denoiser::init_parameters;
use diff2ct_core::optim::AdamState;
use diff2ct_core::training::{ModelKind, TrainConfig, TrainState};
use diff2ct_core::ParameterSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::format::{check_dtype, decode_f32, encode_f32, parse_header, read_bytes, split_container, write_bytes, DTYPE};

pub const CHECKPOINT_MAGIC: &str = "DCKP1\n";
const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub kind: ModelKind,
    pub state: TrainState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    length: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    config: TrainConfig,
    kind: ModelKind,
    step: u64,
    adam_step: u64,
    /// Generator word position as a decimal string (it exceeds `u64`).
    rng_word_pos: String,
    dtype: String,
    names: Vec<Entry>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let p = &self.state.params;
        let mut arrays: Vec<(String, &[usize], &[f32])> = p.iter().map(|(n, s, v)| (n.to_string(), s, v)).collect();
        for (prefix, moments) in [(M_PREFIX, &self.state.adam.m), (V_PREFIX, &self.state.adam.v)] {
            for ((n, s, _), m) in p.iter().zip(moments) {
                arrays.push((format!("{prefix}{n}"), s, m.as_slice()));
            }
        }
        let mut offset = 0;
        let names = arrays
            .iter()
            .map(|(name, shape, values)| {
                let e = Entry { name: name.clone(), shape: shape.to_vec(), offset, length: values.len() * 4 };
                offset += e.length;
                e
            })
            .collect();
        let index = Index {
            config: self.config.clone(),
            kind: self.kind,
            step: self.state.step,
            adam_step: self.state.adam.step,
            rng_word_pos: self.state.rng_word_pos.to_string(),
            dtype: DTYPE.into(),
            names,
        };
        let mut out = Vec::with_capacity(offset + 4096);
        out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
        out.extend_from_slice(serde_json::to_string(&index).expect("index serializes").as_bytes());
        out.push(b'\n');
        for (_, _, values) in &arrays {
            encode_f32(&mut out, values);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, FormatError> {
        let (line, payload) = split_container(bytes, CHECKPOINT_MAGIC)?;
        let index: Index = parse_header(line)?;
        check_dtype(&index.dtype)?;
        let mut expected_offset = 0;
        for e in &index.names {
            if e.offset != expected_offset {
                return Err(FormatError::OffsetMismatch { name: e.name.clone(), expected: expected_offset, found: e.offset });
            }
            let need = e.shape.iter().product::<usize>() * 4;
            if e.length != need {
                return Err(FormatError::ShapeMismatch { name: e.name.clone(), shape: e.shape.clone(), expected: need, found: e.length });
            }
            expected_offset += e.length;
        }
        if payload.len() != expected_offset {
            return Err(FormatError::PayloadMismatch { expected: expected_offset, found: payload.len() });
        }
        let mut params = ParameterSet::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for e in &index.names {
            let values = decode_f32(&payload[e.offset..e.offset + e.length], e.length / 4)?;
            if let Some(n) = e.name.strip_prefix(M_PREFIX) {
                m.push((n.to_string(), values));
            } else if let Some(n) = e.name.strip_prefix(V_PREFIX) {
                v.push((n.to_string(), values));
            } else {
                params.insert(&e.name, e.shape.clone(), values)?;
            }
        }
        let reference = match index.kind {
            ModelKind::Diffusion => init_parameters(&index.config.denoiser, 0)?,
            ModelKind::Regressor => init_regressor(&index.config.regressor, 0)?,
        };
        params.check_layout(&reference)?;
        let order_ok = |moments: &[(String, Vec<f32>)]| {
            moments.len() == params.len() && moments.iter().zip(params.iter()).all(|((a, _), (b, _, _))| a == b)
        };
        if !order_ok(&m) || !order_ok(&v) {
            return Err(FormatError::BadHeader("Adam moments do not mirror the parameter list".into()));
        }
        let adam = AdamState {
            m: m.into_iter().map(|(_, x)| x).collect(),
            v: v.into_iter().map(|(_, x)| x).collect(),
            step: index.adam_step,
        };
        let rng_word_pos = index.rng_word_pos.parse().map_err(|_| FormatError::BadHeader("rng_word_pos is not an integer".into()))?;
        Ok(Self { config: index.config, kind: index.kind, state: TrainState { params, adam, step: index.step, rng_word_pos } })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &ckpt.encode())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    Checkpoint::decode(&read_bytes(path)?).map_err(Error::format(path))
}
