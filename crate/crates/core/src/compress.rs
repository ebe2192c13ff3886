//! Post-training table compression: truncated SVD, int8 quantization and
//! modulo hashing.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{MletError, Result};
use crate::linalg::{read_u64, svd_thin, Matrix};
use crate::synthdata::SyntheticCtrDataset;

/// Rank-`r` factorization `left * right` of a table.
#[derive(Clone, Debug)]
pub struct LowRank {
    /// `d x r`, singular values folded in.
    pub left: Matrix,
    /// `r x n`.
    pub right: Matrix,
    pub reconstructed: Matrix,
    /// `sqrt(sum_{i > r} sigma_i^2)`.
    pub tail_norm: f64,
}

impl LowRank {
    pub fn rank(&self) -> usize {
        self.left.cols()
    }

    /// Stored floats, `r * (d + n)`.
    pub fn storage(&self) -> usize {
        self.rank() * (self.left.rows() + self.right.cols())
    }
}

pub fn low_rank_approx(w: &Matrix, r: usize) -> Result<LowRank> {
    let (d, n) = w.shape();
    if r == 0 || r > d.min(n) {
        return Err(MletError::InvalidArgument(format!(
            "rank {r} outside [1, {}]",
            d.min(n)
        )));
    }
    let svd = svd_thin(w)?;
    let left = Matrix::from_fn(d, r, |i, l| svd.u[(i, l)] * svd.sigma[l]);
    let right = svd.vt.slice(0..r, 0..n);
    let reconstructed = left.matmul(&right)?;
    let tail_norm = svd.sigma[r..].iter().map(|s| s * s).sum::<f64>().sqrt();
    Ok(LowRank {
        left,
        right,
        reconstructed,
        tail_norm,
    })
}

pub const QUANT_MAGIC: &[u8; 6] = b"MLETQ8";
pub const QUANT_GRID_POINTS: usize = 256;

/// Symmetric per-table int8 quantization: `value = code * scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTable {
    rows: usize,
    cols: usize,
    codes: Vec<i8>,
    scale: f64,
}

/// `max|w| / 127`.
pub fn naive_scale(w: &Matrix) -> f64 {
    w.max_abs() / 127.0
}

fn code(x: f64, scale: f64) -> i8 {
    (x / scale).round().clamp(-127.0, 127.0) as i8
}

/// Squared L2 error of quantizing `w` at `scale`.
pub fn quantization_error_sq(w: &Matrix, scale: f64) -> f64 {
    w.as_slice()
        .iter()
        .map(|&x| {
            let e = x - code(x, scale) as f64 * scale;
            e * e
        })
        .sum()
}

/// Quantizes with a fixed scale.
pub fn quantize_with_scale(w: &Matrix, scale: f64) -> Result<QuantizedTable> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(MletError::InvalidArgument(format!(
            "scale must be positive, got {scale}"
        )));
    }
    Ok(QuantizedTable {
        rows: w.rows(),
        cols: w.cols(),
        codes: w.as_slice().iter().map(|&x| code(x, scale)).collect(),
        scale,
    })
}

/// Picks the scale minimizing the L2 error among the naive scale `s0` and
/// 256 evenly spaced points over `[0.5 * s0, 1.5 * s0]`. Earlier candidates
/// win ties. An all-zero table gets scale 1.
pub fn quantize_int8(w: &Matrix) -> Result<QuantizedTable> {
    if !w.is_finite() {
        return Err(MletError::NonFinite("quantize_int8 input"));
    }
    let s0 = naive_scale(w);
    if s0 == 0.0 {
        return quantize_with_scale(w, 1.0);
    }
    let mut best = (s0, quantization_error_sq(w, s0));
    let last = (QUANT_GRID_POINTS - 1) as f64;
    for g in 0..QUANT_GRID_POINTS {
        let s = s0 * (0.5 + g as f64 / last);
        let e = quantization_error_sq(w, s);
        if e < best.1 {
            best = (s, e);
        }
    }
    quantize_with_scale(w, best.0)
}

impl QuantizedTable {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Row-major codes.
    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn dequantize(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| {
            self.codes[i * self.cols + j] as f64 * self.scale
        })
    }

    /// Magic, rows and cols as `u64`, scale as `f64`, then the codes; all
    /// little-endian.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(QUANT_MAGIC)?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        w.write_all(&self.scale.to_le_bytes())?;
        let bytes: Vec<u8> = self.codes.iter().map(|&c| c as u8).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != QUANT_MAGIC {
            return Err(MletError::Format("missing MLETQ8 header".into()));
        }
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        if rows == 0 || cols == 0 || rows.checked_mul(cols).is_none_or(|n| n > 1 << 32) {
            return Err(MletError::Format(format!(
                "implausible shape {rows}x{cols}"
            )));
        }
        let mut sb = [0u8; 8];
        r.read_exact(&mut sb)?;
        let scale = f64::from_le_bytes(sb);
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(MletError::Format(format!("bad scale {scale}")));
        }
        let mut bytes = vec![0u8; rows * cols];
        r.read_exact(&mut bytes)?;
        let codes: Vec<i8> = bytes.into_iter().map(|b| b as i8).collect();
        if codes.contains(&i8::MIN) {
            return Err(MletError::Format(
                "code -128 is outside the symmetric range".into(),
            ));
        }
        Ok(Self {
            rows,
            cols,
            codes,
            scale,
        })
    }

    pub fn byte_len(&self) -> usize {
        quantized_byte_len(self.rows, self.cols)
    }
}

pub fn quantized_byte_len(rows: usize, cols: usize) -> usize {
    QUANT_MAGIC.len() + 24 + rows * cols
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedTableSpec {
    pub field: usize,
    pub original_n: usize,
    pub buckets: usize,
}

impl HashedTableSpec {
    pub fn map(&self, index: usize) -> usize {
        index % self.buckets
    }
}

/// Remaps every index of `field` to `index % m`. The returned dataset's
/// field cardinality and training counts reflect the hashed ids.
pub fn apply_hash(
    ds: &SyntheticCtrDataset,
    field: usize,
    m: usize,
) -> Result<(SyntheticCtrDataset, HashedTableSpec)> {
    if m == 0 {
        return Err(MletError::InvalidArgument(
            "bucket count must be positive".into(),
        ));
    }
    let original_n = *ds
        .cardinalities()
        .get(field)
        .ok_or_else(|| MletError::InvalidArgument(format!("no field {field}")))?;
    let mut out = ds.clone();
    out.remap_field_modulo(field, m)?;
    Ok((
        out,
        HashedTableSpec {
            field,
            original_n,
            buckets: m,
        },
    ))
}

/// `ceil(n / 2)`.
pub fn half_buckets(n: usize) -> usize {
    n.div_ceil(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, FieldSpec, SyntheticSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn exact_at_full_rank_and_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = gaussian(4, 9, &mut rng);
        let lr = low_rank_approx(&w, 4).unwrap();
        let err = crate::linalg::scale_add(&w, &lr.reconstructed, -1.0)
            .unwrap()
            .frobenius_norm();
        assert!(err <= 1e-10 * w.frobenius_norm());
        assert_eq!(lr.storage(), 4 * 13);

        let a = gaussian(5, 1, &mut rng);
        let b = gaussian(1, 7, &mut rng);
        let w = a.matmul(&b).unwrap();
        let lr = low_rank_approx(&w, 1).unwrap();
        let err = crate::linalg::scale_add(&w, &lr.reconstructed, -1.0)
            .unwrap()
            .frobenius_norm();
        assert!(err <= 1e-10 * w.frobenius_norm());
        assert!(low_rank_approx(&w, 0).is_err());
        assert!(low_rank_approx(&w, 6).is_err());
    }

    #[test]
    fn quantization_exact_on_grid_values() {
        let s = 0.013;
        let w = Matrix::from_fn(3, 5, |i, j| {
            ((i * 5 + j) as f64 * 9.0 - 63.0).clamp(-127.0, 127.0) * s
        });
        let mut w = w;
        w[(0, 0)] = 127.0 * s;
        let q = quantize_with_scale(&w, s).unwrap();
        let back = q.dequantize();
        assert!(crate::linalg::scale_add(&w, &back, -1.0).unwrap().max_abs() < 1e-15);
        let q = quantize_int8(&w).unwrap();
        assert!(quantization_error_sq(&w, q.scale()) < 1e-28);
    }

    #[test]
    fn zero_table() {
        let q = quantize_int8(&Matrix::zeros(2, 3)).unwrap();
        assert_eq!(q.scale(), 1.0);
        assert!(q.codes().iter().all(|&c| c == 0));
    }

    #[test]
    fn grid_never_worse_than_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let w = gaussian(rng.random_range(1..9), rng.random_range(1..40), &mut rng);
            let q = quantize_int8(&w).unwrap();
            assert!(
                quantization_error_sq(&w, q.scale()) <= quantization_error_sq(&w, naive_scale(&w))
            );
            let lo = naive_scale(&w) * 0.5;
            assert!(q.scale() >= lo && q.scale() <= 3.0 * lo);
        }
    }

    #[test]
    fn quantized_serialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = gaussian(8, 100, &mut rng);
        let q = quantize_int8(&w).unwrap();
        let mut buf = Vec::new();
        q.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), q.byte_len());
        assert_eq!(&buf[..6], b"MLETQ8");
        assert_eq!(QuantizedTable::read_from(&mut buf.as_slice()).unwrap(), q);
        buf[0] = b'X';
        assert!(QuantizedTable::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn hashing() {
        let spec = SyntheticSpec {
            fields: vec![
                FieldSpec { n: 101, zipf: 1.0 },
                FieldSpec { n: 40, zipf: 0.5 },
            ],
            n_train: 2000,
            n_val: 100,
            n_test: 300,
            ..Default::default()
        };
        let ds = generate(&spec, 1).unwrap();
        let (same, _) = apply_hash(&ds, 0, 101).unwrap();
        assert_eq!(same, ds);
        let m = half_buckets(101);
        assert_eq!(m, 51);
        let (hashed, h) = apply_hash(&ds, 0, m).unwrap();
        assert_eq!(hashed.cardinalities(), &[51, 40]);
        assert_eq!(h.map(3), h.map(3 + m));
        let total: u64 = hashed.train_freq()[0].iter().sum();
        assert_eq!(total as usize, ds.train_range().len());
        assert!(apply_hash(&ds, 0, 0).is_err());
        assert!(apply_hash(&ds, 2, 5).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_within_half_scale(
            vals in proptest::collection::vec(-50.0f64..50.0, 1..60)
        ) {
            let n = vals.len();
            let w = Matrix::new(1, n, vals).unwrap();
            let q = quantize_int8(&w).unwrap();
            let back = q.dequantize();
            for j in 0..n {
                let c = q.codes()[j];
                prop_assert!(c.unsigned_abs() <= 127);
                if c.unsigned_abs() < 127 {
                    prop_assert!((w[(0, j)] - back[(0, j)]).abs() <= q.scale() / 2.0 + 1e-12);
                }
            }
        }

        #[test]
        fn hash_is_surjective(n in 2usize..500, m_frac in 0.01f64..1.0) {
            let m = ((n as f64 * m_frac).ceil() as usize).clamp(1, n);
            let h = HashedTableSpec { field: 0, original_n: n, buckets: m };
            let mut hit = vec![false; m];
            for i in 0..n {
                hit[h.map(i)] = true;
            }
            prop_assert!(hit.iter().all(|&b| b));
        }
    }
}
