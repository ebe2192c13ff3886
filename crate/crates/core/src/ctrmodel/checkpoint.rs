//! Checkpoint layout, little-endian:
//!
//! ```text
//! "MLETCKP1" | u64 json_len | json metadata | u64 field_count
//! per field: u8 tag (0 float bundle, 1 int8 table) + payload
//! u8 has_dense [+ dense matrix] | top weights as a 1 x T matrix
//! ```

use std::io::{Read, Write};

use super::CtrModel;
use crate::compress::QuantizedTable;
use crate::embedding::EmbeddingBundle;
use crate::error::{MletError, Result};
use crate::linalg::{read_matrix, read_u64, write_matrix, Matrix};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MLETCKP1";

const TAG_FLOAT: u8 = 0;
const TAG_INT8: u8 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    /// Int8 tables come back dequantized.
    pub model: CtrModel,
    pub meta: serde_json::Value,
    pub quantized: Option<Vec<QuantizedTable>>,
}

struct Counter<W> {
    inner: W,
    written: usize,
}

impl<W: Write> Write for Counter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.written += n;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// Writes `model`, replacing its tables by `quantized` when given (the model
/// must then be single-layer). Returns the number of bytes written.
pub fn write_checkpoint<W: Write>(
    w: W,
    model: &CtrModel,
    meta: &serde_json::Value,
    quantized: Option<&[QuantizedTable]>,
) -> Result<usize> {
    if let Some(q) = quantized {
        if q.len() != model.num_fields() {
            return Err(MletError::InvalidArgument(
                "one quantized table per field required".into(),
            ));
        }
        for (t, b) in q.iter().zip(model.bundles()) {
            if b.is_mlet() || t.shape() != (b.d(), b.n()) {
                return Err(MletError::InvalidArgument(
                    "quantized tables must match collapsed single-layer bundles".into(),
                ));
            }
        }
    }
    let mut w = Counter {
        inner: w,
        written: 0,
    };
    let json = serde_json::to_vec(meta)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(model.num_fields() as u64).to_le_bytes())?;
    for (f, b) in model.bundles().iter().enumerate() {
        match quantized {
            Some(q) => {
                w.write_all(&[TAG_INT8])?;
                q[f].write_to(&mut w)?;
            }
            None => {
                w.write_all(&[TAG_FLOAT])?;
                b.write_to(&mut w)?;
            }
        }
    }
    match model.dense_weights() {
        Some(dw) => {
            w.write_all(&[1])?;
            write_matrix(&mut w, dw)?;
        }
        None => w.write_all(&[0])?,
    }
    let top = Matrix::new(1, model.top_weights().len(), model.top_weights().to_vec())?;
    write_matrix(&mut w, &top)?;
    w.flush()?;
    Ok(w.written)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(MletError::Format("not a checkpoint".into()));
    }
    let json_len = read_u64(&mut r)? as usize;
    if json_len > 1 << 26 {
        return Err(MletError::Format("metadata too large".into()));
    }
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let meta: serde_json::Value = serde_json::from_slice(&json)?;
    let fields = read_u64(&mut r)? as usize;
    if fields == 0 || fields > 1 << 16 {
        return Err(MletError::Format(format!(
            "implausible field count {fields}"
        )));
    }
    let mut bundles = Vec::with_capacity(fields);
    let mut quantized = Vec::new();
    for _ in 0..fields {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        match tag[0] {
            TAG_FLOAT => bundles.push(EmbeddingBundle::read_from(&mut r)?),
            TAG_INT8 => {
                let q = QuantizedTable::read_from(&mut r)?;
                bundles.push(EmbeddingBundle::SingleLayer { w: q.dequantize() });
                quantized.push(q);
            }
            t => return Err(MletError::Format(format!("unknown table tag {t}"))),
        }
    }
    if !quantized.is_empty() && quantized.len() != fields {
        return Err(MletError::Format("mixed float and int8 tables".into()));
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let dense = match flag[0] {
        0 => None,
        1 => Some(read_matrix(&mut r)?),
        t => return Err(MletError::Format(format!("bad dense flag {t}"))),
    };
    let top = read_matrix(&mut r)?;
    if top.rows() != 1 {
        return Err(MletError::Format("top weights must be a row vector".into()));
    }
    let model = CtrModel::from_parts(bundles, dense, top.into_vec())?;
    Ok(Checkpoint {
        model,
        meta,
        quantized: (!quantized.is_empty()).then_some(quantized),
    })
}
