//! Versioned binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"MTDM"
//! version u16 (currently 1)
//! arch_id u16 length + UTF-8 bytes
//! input_dim u32, num_classes u32, n_layers u16
//! per layer: activation u8, out_dim u32, in_dim u32,
//!            weights out*in f32, biases out f32
//! ```
//!
//! `f32` values are written as raw IEEE-754 bits, so a save/load round trip
//! is bit-exact.

use super::{Activation, Layer, Model};
use crate::error::{Error, Result};
use crate::linalg::Mat;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MTDM";
const VERSION: u16 = 1;

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let id = model.arch_id().as_bytes();
    if id.len() > u16::MAX as usize {
        return Err(Error::Validation("arch_id too long".into()));
    }
    w.write_all(&(id.len() as u16).to_le_bytes())?;
    w.write_all(id)?;
    w.write_all(&(model.input_dim() as u32).to_le_bytes())?;
    w.write_all(&(model.num_classes() as u32).to_le_bytes())?;
    w.write_all(&(model.layers().len() as u16).to_le_bytes())?;
    for layer in model.layers() {
        w.write_all(&[layer.activation.tag()])?;
        w.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
        w.write_all(&(layer.in_dim() as u32).to_le_bytes())?;
        for v in layer.weights.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &layer.biases {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad model magic".into()));
    }
    let version = read_u16(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let id_len = read_u16(&mut r)? as usize;
    let mut id = vec![0u8; id_len];
    read_exact(&mut r, &mut id)?;
    let arch_id = String::from_utf8(id).map_err(|_| Error::Format("arch_id not UTF-8".into()))?;
    let input_dim = read_u32(&mut r)? as usize;
    let num_classes = read_u32(&mut r)? as usize;
    let n_layers = read_u16(&mut r)? as usize;

    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let mut tag = [0u8; 1];
        read_exact(&mut r, &mut tag)?;
        let activation = Activation::from_tag(tag[0])?;
        let out_dim = read_u32(&mut r)? as usize;
        let in_dim = read_u32(&mut r)? as usize;
        let mut weights = vec![0f32; out_dim * in_dim];
        for v in &mut weights {
            *v = read_f32(&mut r)?;
        }
        let mut biases = vec![0f32; out_dim];
        for v in &mut biases {
            *v = read_f32(&mut r)?;
        }
        layers.push(Layer {
            weights: Mat::from_vec(out_dim, in_dim, weights)?,
            biases,
            activation,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after model data".into()));
    }
    let model = Model::from_layers(layers, arch_id)?;
    if model.input_dim() != input_dim || model.num_classes() != num_classes {
        return Err(Error::Format(
            "header dimensions do not match layer shapes".into(),
        ));
    }
    Ok(model)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("truncated model file".into()))
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(f32::from_le_bytes(b))
}
