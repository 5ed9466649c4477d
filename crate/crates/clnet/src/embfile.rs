//! Embedding file: magic `EMB1`, `u32` count `N`, `u32` dim `D`, `N·D`
//! little-endian `f32` row-major, then `N` newline-terminated ids.

use std::path::Path;

use clnet_core::retrieval::EmbeddingMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";

pub fn encode(m: &EmbeddingMatrix<f32>) -> Result<Vec<u8>> {
    let n = u32::try_from(m.len()).map_err(|_| Error::Embeddings("too many rows".into()))?;
    let d = u32::try_from(m.dim()).map_err(|_| Error::Embeddings("dimension too large".into()))?;
    let mut out = Vec::with_capacity(12 + 4 * m.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for id in m.ids() {
        if id.contains('\n') {
            return Err(Error::Embeddings(format!("id {id:?} contains a newline")));
        }
        out.extend_from_slice(id.as_bytes());
        out.push(b'\n');
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingMatrix<f32>> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Embeddings("bad magic, expected EMB1".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (n, d) = (u32_at(4), u32_at(8));
    let data_end = n
        .checked_mul(d)
        .and_then(|x| x.checked_mul(4))
        .and_then(|x| x.checked_add(12))
        .ok_or_else(|| Error::Embeddings("header overflows".into()))?;
    if bytes.len() < data_end {
        return Err(Error::Embeddings(format!(
            "{n}x{d} matrix needs {data_end} bytes, file has {}",
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes[12..data_end]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let tail = std::str::from_utf8(&bytes[data_end..]).map_err(|_| Error::Embeddings("ids are not UTF-8".into()))?;
    let ids: Vec<String> = tail.split_terminator('\n').map(String::from).collect();
    if ids.len() != n || !tail.is_empty() && !tail.ends_with('\n') {
        return Err(Error::Embeddings(format!(
            "expected {n} newline-terminated ids, found {}",
            ids.len()
        )));
    }
    EmbeddingMatrix::new(ids, d, data).map_err(|e| Error::Embeddings(e.to_string()))
}

pub fn write(path: &Path, m: &EmbeddingMatrix<f32>) -> Result<()> {
    std::fs::write(path, encode(m)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<EmbeddingMatrix<f32>> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
