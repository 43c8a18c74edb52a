//! Minimal binary tensor file format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "ATF1"
//! elem    1 byte   0 = f32, 1 = f64
//! rank    u32
//! dims    rank x u32
//! payload product(dims) x elem_size, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub const BLOB_MAGIC: &[u8; 4] = b"ATF1";

/// Element types a blob can carry.
pub trait BlobElem: Scalar {
    const CODE: u8;
    const SIZE: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl BlobElem for f32 {
    const CODE: u8 = 0;
    const SIZE: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl BlobElem for f64 {
    const CODE: u8 = 1;
    const SIZE: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

/// Serialize a tensor blob into bytes.
pub fn encode_blob<T: BlobElem>(dims: &[usize], data: &[T]) -> Result<Vec<u8>> {
    if dims.iter().product::<usize>() != data.len() {
        return Err(Error::shape(format!(
            "blob payload {} elements for dims {:?}",
            data.len(),
            dims
        )));
    }
    let mut out = Vec::with_capacity(9 + dims.len() * 4 + data.len() * T::SIZE);
    out.extend_from_slice(BLOB_MAGIC);
    out.push(T::CODE);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        v.write_le(&mut out);
    }
    Ok(out)
}

/// Parse a tensor blob; `origin` names the source in errors.
pub fn decode_blob<T: BlobElem>(bytes: &[u8], origin: &str) -> Result<(Vec<usize>, Vec<T>)> {
    let fail = |reason: String| Error::format(origin, reason);
    if bytes.len() < 9 {
        return Err(fail("truncated header".into()));
    }
    if &bytes[0..4] != BLOB_MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[0..4])));
    }
    if bytes[4] != T::CODE {
        return Err(fail(format!(
            "element type code {} does not match requested type (code {})",
            bytes[4],
            T::CODE
        )));
    }
    let rank = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let dims_end = 9 + rank * 4;
    if bytes.len() < dims_end {
        return Err(fail("truncated dims".into()));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u32::from_le_bytes(bytes[9 + i * 4..13 + i * 4].try_into().unwrap()) as usize)
        .collect();
    let n: usize = dims.iter().product();
    let expect = dims_end + n * T::SIZE;
    if bytes.len() != expect {
        return Err(fail(format!("payload length {} (expected {})", bytes.len() - dims_end, n * T::SIZE)));
    }
    let data = bytes[dims_end..].chunks_exact(T::SIZE).map(T::read_le).collect();
    Ok((dims, data))
}

/// Write bytes via a temp file then rename; no file is mutated in place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let display = path.display().to_string();
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&display, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&display, e))?;
    f.sync_all().map_err(|e| Error::io(&display, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(&display, e))?;
    Ok(())
}

pub fn write_blob<T: BlobElem>(path: &Path, dims: &[usize], data: &[T]) -> Result<()> {
    write_atomic(path, &encode_blob(dims, data)?)
}

pub fn read_blob<T: BlobElem>(path: &Path) -> Result<(Vec<usize>, Vec<T>)> {
    let display = path.display().to_string();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(&display, e))?;
    decode_blob(&bytes, &display)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_f32_and_f64() {
        let dims = [2usize, 3];
        let data: Vec<f64> = vec![1.0, -2.5, 3.25, 0.0, 1e-9, 7.0];
        let bytes = encode_blob(&dims, &data).unwrap();
        let (d2, v2): (Vec<usize>, Vec<f64>) = decode_blob(&bytes, "mem").unwrap();
        assert_eq!(d2, dims);
        assert_eq!(v2, data);

        let f: Vec<f32> = data.iter().map(|&v| v as f32).collect();
        let bytes = encode_blob(&dims, &f).unwrap();
        let (_, v3): (Vec<usize>, Vec<f32>) = decode_blob(&bytes, "mem").unwrap();
        assert_eq!(v3, f);
    }

    #[test]
    fn golden_bytes_f64() {
        let bytes = encode_blob(&[2, 2], &[1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let mut expect: Vec<u8> = Vec::new();
        expect.extend_from_slice(b"ATF1");
        expect.push(1);
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        for v in [1.0f64, 2.0, 3.0, 4.0] {
            expect.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes, expect);
    }

    #[test]
    fn rejects_bad_magic_wrong_code_and_truncation() {
        let bytes = encode_blob(&[3], &[1.0f32, 2.0, 3.0]).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_blob::<f32>(&bad, "t").is_err());
        assert!(decode_blob::<f64>(&bytes, "t").is_err());
        assert!(decode_blob::<f32>(&bytes[..bytes.len() - 1], "t").is_err());
    }
}
