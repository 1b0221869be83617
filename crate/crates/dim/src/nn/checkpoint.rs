//! Checkpoint wire format.
//!
//! Layout (all integers little-endian):
//!   magic "DIMC" | u32 version = 1 | u32 layer count
//!   per layer: u32 tag | u32 ndims | ndims * u32
//!   u64 weight count | weight count * f32
//!
//! Weights are stored in layer order, weights before bias. Round trips are
//! bit-exact.

use super::{LayerParams, LayerSpec, Network};
use crate::error::{DimError, Result};
use crate::tensor::Tensor;
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DIMC";
pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_DENSE: u32 = 0;
const TAG_CONV2D: u32 = 1;
const TAG_MAXPOOL2D: u32 = 2;
const TAG_RELU: u32 = 3;
const TAG_TANH: u32 = 4;
const TAG_SIGMOID: u32 = 5;
const TAG_FLATTEN: u32 = 6;

fn spec_tag_dims(spec: &LayerSpec) -> (u32, Vec<u32>) {
    match spec {
        LayerSpec::Dense { input, output } => (TAG_DENSE, vec![*input as u32, *output as u32]),
        LayerSpec::Conv2d { in_channels, out_channels, kernel, stride } => (
            TAG_CONV2D,
            vec![*in_channels as u32, *out_channels as u32, *kernel as u32, *stride as u32],
        ),
        LayerSpec::MaxPool2d { kernel, stride } => {
            (TAG_MAXPOOL2D, vec![*kernel as u32, *stride as u32])
        }
        LayerSpec::Relu => (TAG_RELU, vec![]),
        LayerSpec::Tanh => (TAG_TANH, vec![]),
        LayerSpec::Sigmoid { alpha } => (TAG_SIGMOID, vec![alpha.to_bits()]),
        LayerSpec::Flatten => (TAG_FLATTEN, vec![]),
    }
}

fn spec_from_tag(tag: u32, dims: &[u32]) -> Result<LayerSpec> {
    let need = |n: usize| -> Result<()> {
        if dims.len() != n {
            return Err(DimError::Checkpoint(format!(
                "layer tag {tag} expects {n} dims, found {}",
                dims.len()
            )));
        }
        Ok(())
    };
    Ok(match tag {
        TAG_DENSE => {
            need(2)?;
            LayerSpec::Dense { input: dims[0] as usize, output: dims[1] as usize }
        }
        TAG_CONV2D => {
            need(4)?;
            LayerSpec::Conv2d {
                in_channels: dims[0] as usize,
                out_channels: dims[1] as usize,
                kernel: dims[2] as usize,
                stride: dims[3] as usize,
            }
        }
        TAG_MAXPOOL2D => {
            need(2)?;
            LayerSpec::MaxPool2d { kernel: dims[0] as usize, stride: dims[1] as usize }
        }
        TAG_RELU => {
            need(0)?;
            LayerSpec::Relu
        }
        TAG_TANH => {
            need(0)?;
            LayerSpec::Tanh
        }
        TAG_SIGMOID => {
            need(1)?;
            LayerSpec::Sigmoid { alpha: f32::from_bits(dims[0]) }
        }
        TAG_FLATTEN => {
            need(0)?;
            LayerSpec::Flatten
        }
        other => return Err(DimError::Checkpoint(format!("unknown layer tag {other}"))),
    })
}

pub fn save_checkpoint(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.specs().len() as u32).to_le_bytes());
    for spec in net.specs() {
        let (tag, dims) = spec_tag_dims(spec);
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
    let flat = net.flat_params();
    out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for w in flat {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(DimError::Checkpoint(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}, have {}",
                self.at,
                self.bytes.len() - self.at
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, at: 0 };
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(DimError::Checkpoint(format!("bad magic {magic:02x?}")));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(DimError::Checkpoint(format!("unsupported version {version}")));
    }
    let layer_count = r.u32()? as usize;
    let mut specs = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let tag = r.u32()?;
        let ndims = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(r.u32()?);
        }
        specs.push(spec_from_tag(tag, &dims)?);
    }
    let declared = r.u64()? as usize;
    let mut flat = Vec::with_capacity(declared);
    for _ in 0..declared {
        flat.push(r.f32()?);
    }
    if r.at != bytes.len() {
        return Err(DimError::Checkpoint(format!(
            "{} trailing bytes after weights",
            bytes.len() - r.at
        )));
    }

    // Rebuild params from the flat vector; any arch/weight length mismatch
    // is a hard error.
    let mut params: Vec<Option<LayerParams>> = Vec::with_capacity(specs.len());
    let mut off = 0usize;
    for spec in &specs {
        params.push(match spec {
            LayerSpec::Dense { input, output } => {
                let (wn, bn) = (input * output, *output);
                let p = take_params(&flat, &mut off, wn, bn, vec![*input, *output])?;
                Some(p)
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                let fan_in = in_channels * kernel * kernel;
                let (wn, bn) = (out_channels * fan_in, *out_channels);
                let p = take_params(&flat, &mut off, wn, bn, vec![*out_channels, fan_in])?;
                Some(p)
            }
            _ => None,
        });
    }
    if off != flat.len() {
        return Err(DimError::Checkpoint(format!(
            "weight count mismatch: architecture needs {off}, file holds {}",
            flat.len()
        )));
    }
    Network::from_parts(specs, params)
}

fn take_params(
    flat: &[f32],
    off: &mut usize,
    wn: usize,
    bn: usize,
    wshape: Vec<usize>,
) -> Result<LayerParams> {
    if *off + wn + bn > flat.len() {
        return Err(DimError::Checkpoint(format!(
            "weight count mismatch: architecture needs at least {}, file holds {}",
            *off + wn + bn,
            flat.len()
        )));
    }
    let weights = Tensor::new(wshape, flat[*off..*off + wn].to_vec())?;
    *off += wn;
    let bias = Tensor::from_vec(flat[*off..*off + bn].to_vec());
    *off += bn;
    Ok(LayerParams { weights, bias })
}

pub fn save_checkpoint_file(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, save_checkpoint(net)).map_err(|e| DimError::io(path.display().to_string(), e))
}

pub fn load_checkpoint_file(path: &Path) -> Result<Network> {
    let bytes = std::fs::read(path).map_err(|e| DimError::io(path.display().to_string(), e))?;
    load_checkpoint(&bytes)
}
