//! Binary checkpoint format for [`NetworkParams`].
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "BCPNETCK"
//! version    u32      1
//! layers     u32
//! flags      u32      bit 0: output layer gated
//! seed       u64
//! per layer: in, out, kh, kw, stride, activation (0 relu, 1 sigmoid), upsample   (u32 each)
//! per layer: weights then bias, f64
//! ```

use std::fs;
use std::path::Path;

use bcpnet_core::net::{Activation, ConvLayer, ConvLayerSpec, NetworkParams, ARCHITECTURE, KERNEL};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"BCPNETCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint has {0} trailing bytes")]
    Trailing(usize),
    #[error("checkpoint layer {index} does not match the network architecture")]
    Architecture { index: usize },
    #[error("checkpoint contains non-finite parameters")]
    NonFinite,
}

pub fn encode(params: &NetworkParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + params.parameter_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((params.layers.len() as u32).to_le_bytes());
    out.extend(u32::from(params.gate_output).to_le_bytes());
    out.extend(params.seed.to_le_bytes());
    for layer in &params.layers {
        let s = layer.spec;
        let activation = match s.activation {
            Activation::Relu => 0u32,
            Activation::Sigmoid => 1,
        };
        for v in [
            s.in_channels as u32,
            s.out_channels as u32,
            KERNEL as u32,
            KERNEL as u32,
            s.stride as u32,
            activation,
            u32::from(s.upsample_before),
        ] {
            out.extend(v.to_le_bytes());
        }
    }
    for layer in &params.layers {
        for v in layer.weights.iter().chain(&layer.bias) {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        if self.bytes.len() < N {
            return Err(CheckpointError::Truncated);
        }
        let (head, rest) = self.bytes.split_at(N);
        self.bytes = rest;
        Ok(head.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        self.take().map(u32::from_le_bytes)
    }
}

pub fn decode(bytes: &[u8]) -> Result<NetworkParams, CheckpointError> {
    let mut r = Reader { bytes };
    if &r.take::<8>()? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = r.u32()? as usize;
    let flags = r.u32()?;
    let seed = u64::from_le_bytes(r.take()?);
    if count != ARCHITECTURE.len() {
        return Err(CheckpointError::Architecture { index: count.min(ARCHITECTURE.len()) });
    }
    for (index, expected) in ARCHITECTURE.iter().enumerate() {
        let fields: Vec<u32> = (0..7).map(|_| r.u32()).collect::<Result<_, _>>()?;
        let activation = match fields[5] {
            0 => Activation::Relu,
            1 => Activation::Sigmoid,
            _ => return Err(CheckpointError::Architecture { index }),
        };
        let spec = ConvLayerSpec {
            in_channels: fields[0] as usize,
            out_channels: fields[1] as usize,
            stride: fields[4] as usize,
            activation,
            upsample_before: fields[6] == 1,
        };
        if spec != *expected || fields[2] != KERNEL as u32 || fields[3] != KERNEL as u32 || fields[6] > 1 {
            return Err(CheckpointError::Architecture { index });
        }
    }
    let mut layers = Vec::with_capacity(count);
    for spec in ARCHITECTURE {
        let mut read = |n: usize| -> Result<Vec<f64>, CheckpointError> {
            (0..n).map(|_| r.take().map(f64::from_le_bytes)).collect()
        };
        let weights = read(spec.out_channels * spec.in_channels * KERNEL * KERNEL)?;
        let bias = read(spec.out_channels)?;
        layers.push(ConvLayer { spec, weights, bias });
    }
    if !r.bytes.is_empty() {
        return Err(CheckpointError::Trailing(r.bytes.len()));
    }
    let params = NetworkParams {
        layers,
        seed,
        gate_output: flags & 1 == 1,
    };
    params.validate().map_err(|_| CheckpointError::NonFinite)?;
    Ok(params)
}

pub fn save(params: &NetworkParams, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, encode(params)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<NetworkParams, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}
