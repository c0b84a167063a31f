//! Checkpoint container: named tensors in one binary file plus a text
//! manifest of the hyperparameters needed to rebuild the architecture.
//!
//! Layout: magic "SMCK", format version, manifest byte length + UTF-8
//! `key=value` lines, entry count, then per entry a length-prefixed name and
//! a length-prefixed tensor blob in the same encoding `smrt` uses.

use crate::error::{Error, Result};
use crate::tensor::smrt;
use crate::tensor::{Element, Tensor};
use std::fs;
use std::io::Cursor;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SMCK";
pub const VERSION: u32 = 1;

pub fn save_checkpoint<T: Element>(
    path: &Path,
    tensors: &[(String, Tensor<T>)],
    manifest: &[(String, String)],
) -> Result<()> {
    let mut names = std::collections::HashSet::new();
    for (name, _) in tensors {
        if !names.insert(name.as_str()) {
            return Err(Error::Checkpoint(format!("duplicate tensor name '{name}'")));
        }
    }
    let mut manifest_text = String::new();
    for (k, v) in manifest {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(Error::Checkpoint(format!("manifest key/value '{k}' contains '=' or newline")));
        }
        manifest_text.push_str(&format!("{k}={v}\n"));
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest_text.len() as u32).to_le_bytes());
    out.extend_from_slice(manifest_text.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let blob = smrt::encode_tensor(t);
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(&blob);
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint<T: Element>(
    path: &Path,
) -> Result<(Vec<(String, Tensor<T>)>, Vec<(String, String)>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{}: truncated at byte {}",
                path.display(),
                *pos
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let read_u32 = |pos: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
    };

    if take(&mut pos, 4)? != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let version = read_u32(&mut pos)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let mlen = read_u32(&mut pos)? as usize;
    let manifest_text = String::from_utf8(take(&mut pos, mlen)?.to_vec())
        .map_err(|_| Error::Checkpoint(format!("{}: manifest is not UTF-8", path.display())))?;
    let mut manifest = Vec::new();
    for line in manifest_text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Checkpoint(format!("{}: manifest line '{line}' lacks '='", path.display()))
        })?;
        manifest.push((k.to_string(), v.to_string()));
    }

    let count = read_u32(&mut pos)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = read_u32(&mut pos)? as usize;
        let name = String::from_utf8(take(&mut pos, nlen)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{}: tensor name is not UTF-8", path.display())))?;
        let blen = read_u32(&mut pos)? as usize;
        let blob = take(&mut pos, blen)?;
        let t = smrt::decode_tensor(&mut Cursor::new(blob))?;
        tensors.push((name, t));
    }
    Ok((tensors, manifest))
}

/// Convenience lookup that names the missing key in the error.
pub fn take_tensor<T: Element>(
    tensors: &[(String, Tensor<T>)],
    name: &str,
) -> Result<Tensor<T>> {
    tensors
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t.clone())
        .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks tensor '{name}'")))
}

pub fn manifest_value(manifest: &[(String, String)], key: &str) -> Result<String> {
    manifest
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Error::Checkpoint(format!("checkpoint manifest lacks key '{key}'")))
}
