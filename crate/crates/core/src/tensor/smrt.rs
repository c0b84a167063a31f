//! SMRT flat tensor container: magic "SMRT", version u32, rank u32,
//! extents u32[], element-size u8, little-endian payload.

use super::{Element, Tensor};
use crate::error::{Error, Result};
use std::io::{Read, Write};

pub const MAGIC: &[u8; 4] = b"SMRT";
pub const VERSION: u32 = 1;

pub fn write_tensor<T: Element, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    w.write_all(&encode_tensor(t))
        .map_err(|e| Error::io("<smrt stream>", e))
}

/// Serializes one tensor into the SMRT wire format.
pub fn encode_tensor<T: Element>(t: &Tensor<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let shape = t.shape();
    buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &e in &shape {
        buf.extend_from_slice(&(e as u32).to_le_bytes());
    }
    buf.push(T::BYTES);
    for v in t.data() {
        v.write_le(&mut buf);
    }
    buf
}

/// Reads one SMRT tensor from the stream. The stored element size must match
/// `T`; checkpoints do not transcode precision silently.
pub fn decode_tensor<T: Element, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let mut head = [0u8; 4];
    r.read_exact(&mut head)
        .map_err(|e| Error::io("<smrt stream>", e))?;
    if &head != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {:?}", head)));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", version)));
    }
    let rank = read_u32(r)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let mut esize = [0u8; 1];
    r.read_exact(&mut esize)
        .map_err(|e| Error::io("<smrt stream>", e))?;
    if esize[0] != T::BYTES {
        return Err(Error::Checkpoint(format!(
            "element size {} does not match requested {}",
            esize[0],
            T::BYTES
        )));
    }
    let numel: usize = shape.iter().product();
    let mut payload = vec![0u8; numel * T::BYTES as usize];
    r.read_exact(&mut payload)
        .map_err(|e| Error::io("<smrt stream>", e))?;
    let data: Vec<T> = payload
        .chunks_exact(T::BYTES as usize)
        .map(T::read_le)
        .collect();
    Tensor::from_vec(shape, data)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::io("<smrt stream>", e))?;
    Ok(u32::from_le_bytes(b))
}
