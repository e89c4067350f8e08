//! Model bundle file: `"TOPN"`, u32 version, architecture as length-prefixed
//! layer descriptors, little-endian f32 weights in layer order, batch-norm
//! running statistics, training metadata as JSON, SHA-256 trailer.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};
use crate::model::Model;
use crate::spec::{ArchitectureSpec, LayerSpec};
use crate::train::TrainingMeta;

pub const BUNDLE_MAGIC: &[u8; 4] = b"TOPN";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub model: Model<f32>,
    pub meta: TrainingMeta,
}

impl ModelBundle {
    pub fn new(model: Model<f32>) -> Self {
        ModelBundle {
            model,
            meta: TrainingMeta::default(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let spec = self.model.spec();
        let mut w = Vec::new();
        w.write_all(BUNDLE_MAGIC)?;
        w.write_u32::<LE>(BUNDLE_VERSION)?;
        w.write_u32::<LE>(spec.spatial_rank as u32)?;
        w.write_u32::<LE>(spec.input.len() as u32)?;
        for &d in &spec.input {
            w.write_u64::<LE>(d as u64)?;
        }
        w.write_i64::<LE>(spec.latent_layer.map_or(-1, |l| l as i64))?;
        w.write_u32::<LE>(spec.layers.len() as u32)?;
        for layer in &spec.layers {
            write_blob(&mut w, &serde_json::to_vec(layer).map_err(json_err)?)?;
        }
        for values in [self.model.flat_params(), self.model.flat_stats()] {
            w.write_u64::<LE>(values.len() as u64)?;
            for v in values {
                w.write_f32::<LE>(v)?;
            }
        }
        write_blob(&mut w, &serde_json::to_vec(&self.meta).map_err(json_err)?)?;
        let digest = Sha256::digest(&w);
        w.extend_from_slice(&digest);
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 40 {
            return Err(format_err(0, "file too short for a model bundle"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if &bytes[..4] != BUNDLE_MAGIC {
            return Err(format_err(0, "bad magic, not a model bundle"));
        }
        let mut r = Cursor::new(body);
        r.set_position(4);
        let version = r.read_u32::<LE>()?;
        if version != BUNDLE_VERSION {
            return Err(format_err(4, &format!("unsupported bundle version {version}")));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(format_err(body.len() as u64, "checksum mismatch, bundle is corrupt"));
        }
        let parsed = parse_body(&mut r);
        let at = r.position();
        let (spec, params, stats, meta) = parsed.map_err(|e| match e {
            NnError::Io(io) => format_err(at, &format!("truncated bundle: {io}")),
            other => other,
        })?;
        if r.position() != body.len() as u64 {
            return Err(format_err(r.position(), "trailing bytes after metadata"));
        }
        let mut model = Model::build(spec)?;
        model
            .set_flat_params(&params)
            .map_err(|e| format_err(at, &e.to_string()))?;
        model
            .set_flat_stats(&stats)
            .map_err(|e| format_err(at, &e.to_string()))?;
        Ok(ModelBundle { model, meta })
    }
}

type Parsed = (ArchitectureSpec, Vec<f32>, Vec<f32>, TrainingMeta);

fn parse_body(r: &mut Cursor<&[u8]>) -> Result<Parsed> {
    let spatial_rank = r.read_u32::<LE>()? as usize;
    let n_in = r.read_u32::<LE>()? as usize;
    if n_in > 5 {
        return Err(format_err(r.position(), "input rank above 5"));
    }
    let input = (0..n_in)
        .map(|_| r.read_u64::<LE>().map(|d| d as usize))
        .collect::<std::io::Result<Vec<_>>>()?;
    let latent = r.read_i64::<LE>()?;
    let n_layers = r.read_u32::<LE>()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let at = r.position();
        let blob = read_blob(r)?;
        let layer: LayerSpec =
            serde_json::from_slice(&blob).map_err(|e| format_err(at, &format!("bad layer descriptor: {e}")))?;
        layers.push(layer);
    }
    let spec = ArchitectureSpec {
        spatial_rank,
        input,
        layers,
        latent_layer: usize::try_from(latent).ok(),
    };
    let params = read_f32s(r)?;
    let stats = read_f32s(r)?;
    let at = r.position();
    let meta = serde_json::from_slice(&read_blob(r)?).map_err(|e| format_err(at, &format!("bad metadata: {e}")))?;
    Ok((spec, params, stats, meta))
}

fn read_f32s(r: &mut Cursor<&[u8]>) -> Result<Vec<f32>> {
    let n = r.read_u64::<LE>()? as usize;
    let left = r.get_ref().len() as u64 - r.position();
    if (n as u64).saturating_mul(4) > left {
        return Err(format_err(
            r.position(),
            &format!("{n} weights announced, {left} bytes left"),
        ));
    }
    let mut v = vec![0f32; n];
    r.read_f32_into::<LE>(&mut v)?;
    Ok(v)
}

fn write_blob(w: &mut Vec<u8>, bytes: &[u8]) -> Result<()> {
    w.write_u32::<LE>(bytes.len() as u32)?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_blob(r: &mut Cursor<&[u8]>) -> Result<Vec<u8>> {
    let n = r.read_u32::<LE>()? as usize;
    let left = r.get_ref().len() as u64 - r.position();
    if n as u64 > left {
        return Err(format_err(r.position(), &format!("blob of {n} bytes, {left} left")));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn format_err(offset: u64, message: &str) -> NnError {
    NnError::Format {
        offset,
        message: message.to_string(),
    }
}

fn json_err(e: serde_json::Error) -> NnError {
    NnError::invalid(format!("metadata serialization failed: {e}"))
}

pub fn save_bundle(path: impl AsRef<Path>, bundle: &ModelBundle) -> Result<()> {
    fs::write(path, bundle.to_bytes()?)?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    ModelBundle::from_bytes(&fs::read(path)?)
}
