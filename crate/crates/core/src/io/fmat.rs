//! `FMAT` feature-matrix files: magic `FMAT`, then little-endian `u32`
//! version (1), rows and cols, then `rows × cols` row-major `f32` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"FMAT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

pub fn encode(t: &Tensor<f32>) -> Vec<u8> {
    let (rows, cols) = (t.rows(), t.cols());
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Reads just the `(rows, cols)` header.
pub fn decode_header(bytes: &[u8], name: &str) -> Result<(usize, usize)> {
    let bad = |msg: String| Error::Format { file: name.to_string(), msg };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("missing FMAT header".into()));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    Ok((u32_at(bytes, 8) as usize, u32_at(bytes, 12) as usize))
}

pub fn decode(bytes: &[u8], name: &str) -> Result<Tensor<f32>> {
    let (rows, cols) = decode_header(bytes, name)?;
    let expected = HEADER_LEN + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Format {
            file: name.to_string(),
            msg: format!("size {} bytes, header implies {expected}", bytes.len()),
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::matrix(rows, cols, data)
}

pub fn write(path: &Path, t: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode(t))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Tensor<f32>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode(&fs::read(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn size_is_header_plus_payload() {
        let t = Tensor::matrix(3, 5, vec![0.5f32; 15]).unwrap();
        assert_eq!(encode(&t).len(), 16 + 4 * 15);
    }

    #[test]
    fn truncated_and_bad_magic_rejected() {
        let t = Tensor::matrix(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = encode(&t);
        assert!(decode(&bytes[..bytes.len() - 1], "x").is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes, "x").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(rows in 0usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let data: Vec<f32> = (0..rows * cols)
                .map(|k| f32::from_bits((seed as u32).wrapping_mul(2654435761).wrapping_add(k as u32 * 97) & 0x7f7f_ffff))
                .collect();
            let t = Tensor::matrix(rows, cols, data).unwrap();
            let back = decode(&encode(&t), "p").unwrap();
            prop_assert_eq!(
                back.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
            prop_assert_eq!(back.shape(), t.shape());
        }
    }
}
