//! `PHT1` tensor blobs: magic, dtype code, rank, little-endian u64 dims,
//! then little-endian values.

use std::io::{Read, Write};
use std::path::Path;

use super::{Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PHT1";

/// A decoded blob of either width.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn into_real<T: Real>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn write_blob_to<T: Real>(out: &mut Vec<u8>, t: &Tensor<T>) {
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE);
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.reserve(t.numel() * T::BYTES);
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Decodes one blob from the front of `bytes`, returning it and the bytes consumed.
pub fn read_blob_from(bytes: &[u8]) -> std::result::Result<(AnyTensor, usize), String> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err("missing PHT1 magic".into());
    }
    let dtype = bytes[4];
    let ndim = bytes[5] as usize;
    let mut pos = 6;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let raw = bytes
            .get(pos..pos + 8)
            .ok_or_else(|| "truncated dims".to_string())?;
        shape.push(u64::from_le_bytes(raw.try_into().unwrap()) as usize);
        pos += 8;
    }
    let numel: usize = shape.iter().product();
    fn decode<T: Real>(bytes: &[u8], pos: usize, numel: usize, shape: Vec<usize>) -> std::result::Result<(Tensor<T>, usize), String> {
        let end = pos + numel * T::BYTES;
        let raw = bytes.get(pos..end).ok_or_else(|| "truncated data".to_string())?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        Ok((Tensor { shape, data }, end))
    }
    match dtype {
        0 => decode::<f32>(bytes, pos, numel, shape).map(|(t, e)| (AnyTensor::F32(t), e)),
        1 => decode::<f64>(bytes, pos, numel, shape).map(|(t, e)| (AnyTensor::F64(t), e)),
        other => Err(format!("unknown dtype code {other}")),
    }
}

pub fn write_blob<T: Real>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::new();
    write_blob_to(&mut buf, t);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_blob(path: &Path) -> Result<AnyTensor> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let (t, used) = read_blob_from(&buf).map_err(|m| Error::format(path, m))?;
    if used != buf.len() {
        return Err(Error::format(path, "trailing bytes after blob"));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::<f32>::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_blob_to(&mut buf, &t);
        assert_eq!(&buf[..4], b"PHT1");
        assert_eq!(buf[4], 0);
        assert_eq!(buf[5], 2);
        assert_eq!(&buf[6..14], &2u64.to_le_bytes());
        assert_eq!(&buf[14..22], &1u64.to_le_bytes());
        assert_eq!(&buf[22..26], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 30);
        let (back, used) = read_blob_from(&buf).unwrap();
        assert_eq!(used, 30);
        assert_eq!(back, AnyTensor::F32(t));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_blob_from(b"PHT2\x00\x00").is_err());
        let t = Tensor::<f64>::from_vec(vec![1.0, 2.0]);
        let mut buf = Vec::new();
        write_blob_to(&mut buf, &t);
        assert!(read_blob_from(&buf[..buf.len() - 1]).is_err());
    }
}
