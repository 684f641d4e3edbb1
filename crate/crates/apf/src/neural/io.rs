//! Weight files (`DAPW`: config block then per-layer shapes and data) and
//! latent stores (`DAPL`).

use super::tensor::Tensor;
use super::{LatentRecord, NetConfig, NetworkBundle};
use crate::error::{ApfError, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"DAPW";
pub const WEIGHTS_VERSION: u32 = 1;
pub const LATENT_MAGIC: &[u8; 4] = b"DAPL";
pub const LATENT_VERSION: u32 = 1;

pub fn save_weights(bundle: &NetworkBundle, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| ApfError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| ApfError::io(path.display().to_string(), e);
    w.write_all(WEIGHTS_MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(WEIGHTS_VERSION).map_err(io_err)?;
    let config_json = serde_json::to_string(&bundle.config).expect("config serializes");
    w.write_u32::<LittleEndian>(config_json.len() as u32).map_err(io_err)?;
    w.write_all(config_json.as_bytes()).map_err(io_err)?;
    let mut tensors: Vec<(Vec<usize>, Vec<f32>)> = Vec::new();
    let mut bundle_mut = bundle.clone();
    bundle_mut.for_each_tensor(&mut |t: &mut Tensor| tensors.push((t.shape.clone(), t.data.clone())));
    w.write_u32::<LittleEndian>(tensors.len() as u32).map_err(io_err)?;
    for (shape, data) in tensors {
        w.write_u32::<LittleEndian>(shape.len() as u32).map_err(io_err)?;
        for d in &shape {
            w.write_u32::<LittleEndian>(*d as u32).map_err(io_err)?;
        }
        for v in data {
            w.write_f32::<LittleEndian>(v).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_weights(path: &Path) -> Result<NetworkBundle> {
    let file = std::fs::File::open(path).map_err(|e| ApfError::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| ApfError::io(path.display().to_string(), e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(ApfError::Parse(format!("{}: not a weights file", path.display())));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != WEIGHTS_VERSION {
        return Err(ApfError::Validation(format!("unsupported weights version {version}")));
    }
    let json_len = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json).map_err(io_err)?;
    let config: NetConfig = serde_json::from_slice(&json)
        .map_err(|e| ApfError::Parse(format!("{}: bad config block: {e}", path.display())))?;
    let mut bundle = NetworkBundle::new(&config, 0);
    let tensor_count = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let mut loaded: Vec<(Vec<usize>, Vec<f32>)> = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let ndim = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u32::<LittleEndian>().map_err(io_err)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = vec![0f32; n];
        for v in &mut data {
            *v = r.read_f32::<LittleEndian>().map_err(io_err)?;
        }
        loaded.push((shape, data));
    }
    let mut index = 0usize;
    let mut mismatch = None;
    bundle.for_each_tensor(&mut |t: &mut Tensor| {
        if index >= loaded.len() {
            mismatch = Some(format!("weights file has too few tensors ({index})"));
            index += 1;
            return;
        }
        let (shape, data) = &loaded[index];
        if *shape != t.shape {
            mismatch = Some(format!("tensor {index} shape {shape:?} != expected {:?}", t.shape));
        } else {
            t.data.copy_from_slice(data);
        }
        index += 1;
    });
    if index != loaded.len() {
        mismatch.get_or_insert(format!("weights file tensor count {} != expected {index}", loaded.len()));
    }
    match mismatch {
        Some(msg) => Err(ApfError::Validation(format!("{}: {msg}", path.display()))),
        None => Ok(bundle),
    }
}

pub fn save_latents(records: &[LatentRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| ApfError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| ApfError::io(path.display().to_string(), e);
    w.write_all(LATENT_MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(LATENT_VERSION).map_err(io_err)?;
    w.write_u64::<LittleEndian>(records.len() as u64).map_err(io_err)?;
    let latent_len = records.first().map(|r| r.latent.len()).unwrap_or(0);
    w.write_u32::<LittleEndian>(latent_len as u32).map_err(io_err)?;
    for rec in records {
        if rec.latent.len() != latent_len {
            return Err(ApfError::Validation("latent records have mixed lengths".into()));
        }
        w.write_u64::<LittleEndian>(rec.voxel_id).map_err(io_err)?;
        for s in rec.sphere {
            w.write_f32::<LittleEndian>(s).map_err(io_err)?;
        }
        for &v in &rec.latent {
            w.write_f32::<LittleEndian>(v).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_latents(path: &Path) -> Result<Vec<LatentRecord>> {
    let file = std::fs::File::open(path).map_err(|e| ApfError::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| ApfError::io(path.display().to_string(), e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != LATENT_MAGIC {
        return Err(ApfError::Parse(format!("{}: not a latent store", path.display())));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != LATENT_VERSION {
        return Err(ApfError::Validation(format!("unsupported latent version {version}")));
    }
    let count = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
    let latent_len = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let voxel_id = r.read_u64::<LittleEndian>().map_err(io_err)?;
        let mut sphere = [0f32; 4];
        for s in &mut sphere {
            *s = r.read_f32::<LittleEndian>().map_err(io_err)?;
        }
        let mut latent = vec![0f32; latent_len];
        for v in &mut latent {
            *v = r.read_f32::<LittleEndian>().map_err(io_err)?;
        }
        records.push(LatentRecord {
            voxel_id,
            sphere,
            latent,
        });
    }
    Ok(records)
}
