//! `MLETMAT1` binary matrix format: 8 magic bytes, rows and cols as
//! little-endian `u64`, then row-major little-endian `f64` values.

use std::io::{Read, Write};

use super::Matrix;
use crate::error::{MletError, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"MLETMAT1";

pub fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<Matrix> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(MletError::Format(format!("bad matrix magic {magic:?}")));
    }
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let len = rows
        .checked_mul(cols)
        .filter(|&l| l <= (1 << 32))
        .ok_or_else(|| MletError::Format(format!("implausible matrix shape {rows}x{cols}")))?;
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::new(rows, cols, data)
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Serialized size of a `rows x cols` matrix.
pub fn matrix_byte_len(rows: usize, cols: usize) -> usize {
    8 + 16 + 8 * rows * cols
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_fixed() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert_eq!(&buf[..8], b"MLETMAT1");
        assert_eq!(&buf[8..16], &1u64.to_le_bytes());
        assert_eq!(&buf[16..24], &2u64.to_le_bytes());
        assert_eq!(&buf[24..32], &1.0f64.to_le_bytes());
        assert_eq!(buf.len(), matrix_byte_len(1, 2));
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = b"MLETMAT2\x01\0\0\0\0\0\0\0\x01\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0";
        assert!(read_matrix(&mut &buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let m = Matrix::from_fn(rows, cols, |i, j| {
                ((seed ^ (i * 31 + j) as u64) as f64).sin() * 1e3
            });
            let mut buf = Vec::new();
            write_matrix(&mut buf, &m).unwrap();
            let back = read_matrix(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
