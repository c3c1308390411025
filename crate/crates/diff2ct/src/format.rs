//! Self-describing little-endian containers: an ASCII magic line, one JSON
//! header line, then raw `f32` payload.
//!
//! * `DVOL1`: volume, header `{dims, spacing, value_space, dtype}`, z fastest.
//! * `DIMG1`: image, header `{dims, axis_tag, pixel_spacing, dtype}`, b fastest.

use std::fs;
use std::path::Path;

use diff2ct_core::{AxisTag, Grid3, Image2D, ValueSpace, Volume};
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};

pub const VOLUME_MAGIC: &str = "DVOL1\n";
pub const IMAGE_MAGIC: &str = "DIMG1\n";
pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeHeader {
    dims: [usize; 3],
    spacing: [f64; 3],
    value_space: ValueSpace,
    dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageHeader {
    dims: [usize; 2],
    axis_tag: AxisTag,
    pixel_spacing: [f64; 2],
    dtype: String,
}

/// Splits `bytes` into the header line and the payload after checking the magic.
pub(crate) fn split_container<'a>(bytes: &'a [u8], magic: &'static str) -> std::result::Result<(&'a str, &'a [u8]), FormatError> {
    let m = magic.as_bytes();
    if !bytes.starts_with(m) {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(m.len())]).into_owned();
        return Err(FormatError::BadMagic { expected: magic, found });
    }
    let rest = &bytes[m.len()..];
    let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| FormatError::BadHeader("header line is not terminated".into()))?;
    let header = std::str::from_utf8(&rest[..end]).map_err(|e| FormatError::BadHeader(e.to_string()))?;
    Ok((header, &rest[end + 1..]))
}

pub(crate) fn parse_header<T: for<'de> Deserialize<'de>>(line: &str) -> std::result::Result<T, FormatError> {
    serde_json::from_str(line).map_err(|e| FormatError::BadHeader(e.to_string()))
}

pub(crate) fn check_dtype(dtype: &str) -> std::result::Result<(), FormatError> {
    if dtype == DTYPE {
        Ok(())
    } else {
        Err(FormatError::BadDtype(dtype.to_string()))
    }
}

pub(crate) fn decode_f32(payload: &[u8], count: usize) -> std::result::Result<Vec<f32>, FormatError> {
    let expected = count.checked_mul(4).ok_or_else(|| FormatError::BadHeader("element count overflows".into()))?;
    if payload.len() != expected {
        return Err(FormatError::PayloadMismatch { expected, found: payload.len() });
    }
    let values: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite { index });
    }
    Ok(values)
}

pub(crate) fn encode_f32(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn container(magic: &str, header: &impl Serialize, payload: &[f32]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic.as_bytes());
    out.extend_from_slice(serde_json::to_string(header).expect("headers serialize").as_bytes());
    out.push(b'\n');
    encode_f32(&mut out, payload);
    out
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let header = VolumeHeader { dims: v.dims(), spacing: v.spacing(), value_space: v.value_space(), dtype: DTYPE.into() };
    container(VOLUME_MAGIC, &header, v.grid().as_slice())
}

pub fn decode_volume(bytes: &[u8]) -> std::result::Result<Volume, FormatError> {
    let (line, payload) = split_container(bytes, VOLUME_MAGIC)?;
    let h: VolumeHeader = parse_header(line)?;
    check_dtype(&h.dtype)?;
    let n = h.dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| FormatError::BadHeader("dims overflow".into()))?;
    let data = decode_f32(payload, n)?;
    Ok(Volume::new(Grid3::from_vec(h.dims, data)?, h.spacing, h.value_space)?)
}

pub fn encode_image(img: &Image2D) -> Vec<u8> {
    let header = ImageHeader { dims: img.dims(), axis_tag: img.axis(), pixel_spacing: img.pixel_spacing(), dtype: DTYPE.into() };
    container(IMAGE_MAGIC, &header, img.as_slice())
}

pub fn decode_image(bytes: &[u8]) -> std::result::Result<Image2D, FormatError> {
    let (line, payload) = split_container(bytes, IMAGE_MAGIC)?;
    let h: ImageHeader = parse_header(line)?;
    check_dtype(&h.dtype)?;
    let n = h.dims[0].checked_mul(h.dims[1]).ok_or_else(|| FormatError::BadHeader("dims overflow".into()))?;
    let data = decode_f32(payload, n)?;
    Ok(Image2D::new(h.dims, h.axis_tag, h.pixel_spacing, data)?)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, bytes).map_err(Error::io(path))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(Error::io(path))
}

pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_volume(v))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    decode_volume(&read_bytes(path)?).map_err(Error::format(path))
}

pub fn write_image(img: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_image(img))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    decode_image(&read_bytes(path)?).map_err(Error::format(path))
}
