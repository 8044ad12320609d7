//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (network config, step, tensor table, section flags, free-form
//! metadata), then little-endian payload: weights (f32), EMA weights (f32),
//! optional Adam first/second moments (f32) and the loss history (f64).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::unet::{UNet, UNetConfig};
use super::DenoiserParams;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DIFFADCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DenoiserParams,
    /// Adam (first, second) moments, present in training checkpoints.
    pub moments: Option<(ParamStore<f32>, ParamStore<f32>)>,
    pub loss_history: Vec<f64>,
    /// Free-form echo of the run configuration.
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    unet: UNetConfig,
    step: u64,
    tensors: Vec<(String, Vec<usize>)>,
    has_moments: bool,
    loss_len: usize,
    meta: serde_json::Value,
}

fn write_f32s(w: &mut impl Write, store: &ParamStore<f32>) -> std::io::Result<()> {
    for v in store.values.iter().flatten() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f32s(r: &mut impl Read, template: &ParamStore<f32>) -> std::io::Result<ParamStore<f32>> {
    let mut out = template.zeros_like();
    let mut buf = [0u8; 4];
    for v in out.values.iter_mut().flatten() {
        r.read_exact(&mut buf)?;
        *v = f32::from_le_bytes(buf);
    }
    Ok(out)
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let p = &ckpt.params;
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        unet: p.config.clone(),
        step: p.step,
        tensors: p
            .weights
            .names
            .iter()
            .cloned()
            .zip(p.weights.shapes.iter().cloned())
            .collect(),
        has_moments: ckpt.moments.is_some(),
        loss_len: ckpt.loss_history.len(),
        meta: ckpt.meta.clone(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        write_f32s(&mut w, &p.weights)?;
        write_f32s(&mut w, &p.ema)?;
        if let Some((m, v)) = &ckpt.moments {
            write_f32s(&mut w, m)?;
            write_f32s(&mut w, v)?;
        }
        for l in &ckpt.loss_history {
            w.write_all(&l.to_le_bytes())?;
        }
        w.flush()
    })()
    .map_err(io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(io)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(io)?;
    let mut header = vec![0u8; u64::from_le_bytes(b8) as usize];
    r.read_exact(&mut header).map_err(io)?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let net = UNet::new(&header.unet)?;
    let template = ParamStore::<f32>::zeros(net.param_specs());
    let table: Vec<(String, Vec<usize>)> = template
        .names
        .iter()
        .cloned()
        .zip(template.shapes.iter().cloned())
        .collect();
    if table != header.tensors {
        return Err(Error::Checkpoint(
            "tensor table does not match the network config".into(),
        ));
    }
    let weights = read_f32s(&mut r, &template).map_err(io)?;
    let ema = read_f32s(&mut r, &template).map_err(io)?;
    let moments = if header.has_moments {
        let m = read_f32s(&mut r, &template).map_err(io)?;
        let v = read_f32s(&mut r, &template).map_err(io)?;
        Some((m, v))
    } else {
        None
    };
    let mut loss_history = Vec::with_capacity(header.loss_len);
    for _ in 0..header.loss_len {
        r.read_exact(&mut b8).map_err(io)?;
        loss_history.push(f64::from_le_bytes(b8));
    }
    if r.read(&mut b4).map_err(io)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok(Checkpoint {
        params: DenoiserParams {
            config: header.unet,
            weights,
            ema,
            step: header.step,
        },
        moments,
        loss_history,
        meta: header.meta,
    })
}
