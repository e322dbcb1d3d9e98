//! Model checkpoints in the `FPMDL01` binary format.
//!
//! Layout: the 7-byte magic `FPMDL01`, one kind-tag byte, a
//! little-endian `u32` dimension count followed by the dimension chain,
//! then every weight tensor's values in layer order as little-endian
//! `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{CoreError, Result};

use super::{GcnPolicy, MlpPolicy, Policy};

const MODEL_MAGIC: &[u8; 7] = b"FPMDL01";

/// What a checkpoint file contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gcn,
    Mlp,
    /// The FL classifier (weights and biases in layer order).
    Classifier,
}

impl ModelKind {
    fn tag(self) -> u8 {
        match self {
            ModelKind::Gcn => 0,
            ModelKind::Mlp => 1,
            ModelKind::Classifier => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ModelKind::Gcn),
            1 => Ok(ModelKind::Mlp),
            2 => Ok(ModelKind::Classifier),
            other => Err(CoreError::Config(format!(
                "unknown checkpoint kind tag {other}"
            ))),
        }
    }
}

/// Writes a checkpoint from dimension chain and weight slices.
pub fn save_model(
    path: impl AsRef<Path>,
    kind: ModelKind,
    dims: &[usize],
    weights: &[&[f64]],
) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e| CoreError::io(path.display().to_string(), e);
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(MODEL_MAGIC).map_err(io_err)?;
    w.write_u8(kind.tag()).map_err(io_err)?;
    w.write_u32::<LittleEndian>(dims.len() as u32).map_err(io_err)?;
    for d in dims {
        w.write_u32::<LittleEndian>(*d as u32).map_err(io_err)?;
    }
    for layer in weights {
        for v in *layer {
            w.write_f64::<LittleEndian>(*v).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Reads a checkpoint back as (kind, dimension chain, flat weights).
pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelKind, Vec<usize>, Vec<f64>)> {
    let path = path.as_ref();
    let pd = path.display().to_string();
    let io_err = |e| CoreError::io(pd.clone(), e);
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MODEL_MAGIC {
        return Err(CoreError::BadMagic {
            path: pd,
            expected: u32::from_be_bytes(MODEL_MAGIC[0..4].try_into().unwrap()),
            observed: u32::from_be_bytes(magic[0..4].try_into().unwrap()),
        });
    }
    let kind = ModelKind::from_tag(r.read_u8().map_err(io_err)?)?;
    let ndims = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        dims.push(r.read_u32::<LittleEndian>().map_err(io_err)? as usize);
    }
    let mut flat = Vec::new();
    loop {
        match r.read_f64::<LittleEndian>() {
            Ok(v) => flat.push(v),
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(CoreError::io(pd, e)),
        }
    }
    Ok((kind, dims, flat))
}

/// Saves a learned policy; the model-based baselines have no weights to
/// persist and are rejected.
pub fn save_policy(path: impl AsRef<Path>, policy: &Policy) -> Result<()> {
    match policy {
        Policy::Gcn(g) => {
            let slices: Vec<&[f64]> = g.weights().iter().map(|t| t.values()).collect();
            save_model(path, ModelKind::Gcn, g.dims(), &slices)
        }
        Policy::Mlp(m) => {
            let slices: Vec<&[f64]> = m.weights().iter().map(|t| t.values()).collect();
            save_model(path, ModelKind::Mlp, &m.dims(), &slices)
        }
        other => Err(CoreError::UnsupportedPolicy(format!(
            "{} policies have no checkpoint representation",
            other.kind()
        ))),
    }
}

/// Loads a learned policy for inference.
pub fn load_policy(path: impl AsRef<Path>) -> Result<Policy> {
    let (kind, dims, flat) = load_model(&path)?;
    match kind {
        ModelKind::Gcn => Ok(Policy::Gcn(GcnPolicy::from_flat_weights(&dims, &flat)?)),
        ModelKind::Mlp => Ok(Policy::Mlp(MlpPolicy::from_flat_weights(&dims, &flat)?)),
        ModelKind::Classifier => Err(CoreError::UnsupportedPolicy(
            "checkpoint holds a classifier, not a power policy".into(),
        )),
    }
}
