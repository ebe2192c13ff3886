//! Synthetic click-through data with Zipf-skewed categorical fields.
//!
//! Each sparse field draws its category from a Zipf law over `[0, n_f)`
//! (index 0 is the most frequent category). Clicks come from a hidden
//! dot-product model: every category owns a latent vector, dense features
//! are projected into the same space, and the click logit is the scaled sum
//! of all pairwise dot products plus Gaussian noise.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::mix_seed;
use crate::error::{MletError, Result};

pub const DATASET_FORMAT: &str = "mlet-dataset-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    /// Number of categories.
    pub n: usize,
    /// Zipf exponent; 0 is uniform.
    pub zipf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub fields: Vec<FieldSpec>,
    pub dense_dim: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Dimension of the hidden category vectors.
    pub latent_dim: usize,
    /// Multiplier on the sum of pairwise dot products.
    pub signal_scale: f64,
    pub intercept: f64,
    pub noise_std: f64,
    /// Shift of every latent vector along one shared axis, proportional to
    /// how frequent its category is. Positive values make frequent
    /// categories click more.
    pub popularity_shift: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            fields: vec![FieldSpec { n: 1000, zipf: 1.2 }; 2],
            dense_dim: 4,
            n_train: 200_000,
            n_val: 20_000,
            n_test: 20_000,
            latent_dim: 8,
            signal_scale: 1.5,
            intercept: -1.5,
            noise_std: 0.5,
            popularity_shift: 0.0,
        }
    }
}

impl SyntheticSpec {
    pub fn total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    fn validate(&self) -> Result<()> {
        if self.fields.is_empty() {
            return Err(MletError::InvalidArgument(
                "at least one sparse field is required".into(),
            ));
        }
        for (f, spec) in self.fields.iter().enumerate() {
            if spec.n < 2 {
                return Err(MletError::InvalidArgument(format!(
                    "field {f} needs at least 2 categories, got {}",
                    spec.n
                )));
            }
            if spec.n > u32::MAX as usize {
                return Err(MletError::InvalidArgument(format!(
                    "field {f} is too large"
                )));
            }
            if !(spec.zipf >= 0.0 && spec.zipf.is_finite()) {
                return Err(MletError::InvalidArgument(format!(
                    "field {f} has invalid Zipf exponent {}",
                    spec.zipf
                )));
            }
        }
        if self.total() == 0 {
            return Err(MletError::InvalidArgument("dataset has no samples".into()));
        }
        if self.latent_dim == 0 || self.noise_std < 0.0 {
            return Err(MletError::InvalidArgument(
                "latent_dim must be positive and noise_std non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Inverse-CDF sampler over `[0, n)` with weights `1 / (i + 1)^alpha`.
#[derive(Clone, Debug)]
pub struct ZipfSampler {
    cdf: Vec<f64>,
}

impl ZipfSampler {
    pub fn new(n: usize, alpha: f64) -> Self {
        let mut acc = 0.0;
        let cdf = (0..n)
            .map(|i| {
                acc += ((i + 1) as f64).powf(-alpha);
                acc
            })
            .collect();
        Self { cdf }
    }

    pub fn probability(&self, i: usize) -> f64 {
        let total = *self.cdf.last().unwrap();
        let prev = if i == 0 { 0.0 } else { self.cdf[i - 1] };
        (self.cdf[i] - prev) / total
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cdf.last().unwrap();
        let u = rng.random::<f64>() * total;
        self.cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1)
    }
}

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic { spec: SyntheticSpec, seed: u64 },
    Csv { path: String, buckets: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub source: DatasetSource,
    pub cardinalities: Vec<usize>,
    pub dense_dim: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub record_bytes: usize,
}

/// Hidden parameters of the synthetic click model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Per field, per category latent vector.
    pub latents: Vec<Vec<Vec<f64>>>,
    /// `latent_dim x dense_dim`, row-major.
    pub dense_projection: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCtrDataset {
    source: DatasetSource,
    cardinalities: Vec<usize>,
    dense_dim: usize,
    sparse: Vec<u32>,
    dense: Vec<f32>,
    labels: Vec<u8>,
    train: Range<usize>,
    val: Range<usize>,
    test: Range<usize>,
    train_freq: Vec<Vec<u64>>,
}

/// Borrowed view of one sample.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub sparse: &'a [u32],
    pub dense: &'a [f32],
    pub label: u8,
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCtrDataset> {
    generate_with_truth(spec, seed).map(|(ds, _)| ds)
}

/// Like [`generate`], also returning the hidden click model.
pub fn generate_with_truth(
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<(SyntheticCtrDataset, GroundTruth)> {
    spec.validate()?;
    let f_count = spec.fields.len();
    let ld = spec.latent_dim;

    let mut truth_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1));
    let latents: Vec<Vec<Vec<f64>>> = spec
        .fields
        .iter()
        .map(|field| {
            let log_n = (field.n as f64).ln();
            (0..field.n)
                .map(|c| {
                    let mut z: Vec<f64> =
                        (0..ld).map(|_| truth_rng.sample(StandardNormal)).collect();
                    let popularity = 1.0 - ((1 + c) as f64).ln() / log_n;
                    z[0] += spec.popularity_shift * popularity;
                    z
                })
                .collect()
        })
        .collect();
    let proj_std = if spec.dense_dim > 0 {
        (1.0 / spec.dense_dim as f64).sqrt()
    } else {
        0.0
    };
    let dense_projection: Vec<f64> = (0..ld * spec.dense_dim)
        .map(|_| proj_std * truth_rng.sample::<f64, _>(StandardNormal))
        .collect();

    let samplers: Vec<ZipfSampler> = spec
        .fields
        .iter()
        .map(|f| ZipfSampler::new(f.n, f.zipf))
        .collect();
    let noise = Normal::new(0.0, spec.noise_std).expect("non-negative std");
    let scale = spec.signal_scale / (ld as f64).sqrt();

    let total = spec.total();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 2));
    let mut sparse = Vec::with_capacity(total * f_count);
    let mut dense = Vec::with_capacity(total * spec.dense_dim);
    let mut labels = Vec::with_capacity(total);
    let mut vectors: Vec<Vec<f64>> = vec![vec![0.0; ld]; f_count + 1];
    for _ in 0..total {
        for (f, sampler) in samplers.iter().enumerate() {
            let c = sampler.sample(&mut rng);
            sparse.push(c as u32);
            vectors[f].copy_from_slice(&latents[f][c]);
        }
        let x: Vec<f32> = (0..spec.dense_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
            .collect();
        let mut count = f_count;
        if spec.dense_dim > 0 {
            for (r, p) in vectors[f_count].iter_mut().enumerate() {
                *p = (0..spec.dense_dim)
                    .map(|j| dense_projection[r * spec.dense_dim + j] * x[j] as f64)
                    .sum();
            }
            count += 1;
        }
        dense.extend_from_slice(&x);
        let mut interaction = 0.0;
        for a in 0..count {
            for b in a + 1..count {
                interaction += dot(&vectors[a], &vectors[b]);
            }
        }
        let logit = scale * interaction + spec.intercept + noise.sample(&mut rng);
        let p = 1.0 / (1.0 + (-logit).exp());
        labels.push(u8::from(rng.random::<f64>() < p));
    }

    let ds = SyntheticCtrDataset::from_parts(
        DatasetSource::Synthetic {
            spec: spec.clone(),
            seed,
        },
        spec.fields.iter().map(|f| f.n).collect(),
        spec.dense_dim,
        sparse,
        dense,
        labels,
        (spec.n_train, spec.n_val, spec.n_test),
    )?;
    Ok((
        ds,
        GroundTruth {
            latents,
            dense_projection,
        },
    ))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SyntheticCtrDataset {
    /// Assembles a dataset from flat storage. Samples are ordered train,
    /// validation, test.
    pub fn from_parts(
        source: DatasetSource,
        cardinalities: Vec<usize>,
        dense_dim: usize,
        sparse: Vec<u32>,
        dense: Vec<f32>,
        labels: Vec<u8>,
        (n_train, n_val, n_test): (usize, usize, usize),
    ) -> Result<Self> {
        let total = n_train + n_val + n_test;
        let f = cardinalities.len();
        if labels.len() != total || sparse.len() != total * f || dense.len() != total * dense_dim {
            return Err(MletError::Format(
                "sample storage does not match split sizes".into(),
            ));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(MletError::Format("labels must be 0 or 1".into()));
        }
        for (i, &c) in sparse.iter().enumerate() {
            let n = cardinalities[i % f];
            if c as usize >= n {
                return Err(MletError::IndexOutOfRange {
                    index: c as usize,
                    n,
                });
            }
        }
        if dense.iter().any(|v| !v.is_finite()) {
            return Err(MletError::Format("non-finite dense feature".into()));
        }
        let mut ds = Self {
            source,
            cardinalities,
            dense_dim,
            sparse,
            dense,
            labels,
            train: 0..n_train,
            val: n_train..n_train + n_val,
            test: n_train + n_val..total,
            train_freq: Vec::new(),
        };
        ds.recount();
        Ok(ds)
    }

    fn recount(&mut self) {
        let f = self.cardinalities.len();
        let mut freq: Vec<Vec<u64>> = self.cardinalities.iter().map(|&n| vec![0; n]).collect();
        for i in self.train.clone() {
            for (field, &c) in self.sparse[i * f..(i + 1) * f].iter().enumerate() {
                freq[field][c as usize] += 1;
            }
        }
        self.train_freq = freq;
    }

    pub fn source(&self) -> &DatasetSource {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_fields(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn dense_dim(&self) -> usize {
        self.dense_dim
    }

    pub fn train_range(&self) -> Range<usize> {
        self.train.clone()
    }

    pub fn val_range(&self) -> Range<usize> {
        self.val.clone()
    }

    pub fn test_range(&self) -> Range<usize> {
        self.test.clone()
    }

    /// Per field, per category occurrence counts over the training split.
    pub fn train_freq(&self) -> &[Vec<u64>] {
        &self.train_freq
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        let f = self.num_fields();
        Sample {
            sparse: &self.sparse[i * f..(i + 1) * f],
            dense: &self.dense[i * self.dense_dim..(i + 1) * self.dense_dim],
            label: self.labels[i],
        }
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn positive_rate(&self, range: Range<usize>) -> f64 {
        let n = range.len().max(1);
        self.labels[range].iter().map(|&y| y as f64).sum::<f64>() / n as f64
    }

    /// Replaces every index of `field` with `index % buckets` and shrinks the
    /// field's cardinality to `buckets`.
    pub fn remap_field_modulo(&mut self, field: usize, buckets: usize) -> Result<()> {
        if field >= self.num_fields() {
            return Err(MletError::InvalidArgument(format!("no field {field}")));
        }
        if buckets == 0 || buckets > self.cardinalities[field] {
            return Err(MletError::InvalidArgument(format!(
                "bucket count {buckets} must be in [1, {}]",
                self.cardinalities[field]
            )));
        }
        let f = self.num_fields();
        for i in 0..self.len() {
            let c = &mut self.sparse[i * f + field];
            *c %= buckets as u32;
        }
        self.cardinalities[field] = buckets;
        self.recount();
        Ok(())
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            format: DATASET_FORMAT.to_string(),
            source: self.source.clone(),
            cardinalities: self.cardinalities.clone(),
            dense_dim: self.dense_dim,
            n_train: self.train.len(),
            n_val: self.val.len(),
            n_test: self.test.len(),
            record_bytes: 4 * self.num_fields() + 4 * self.dense_dim + 1,
        }
    }

    /// One JSON header line, then per sample: `u32` index per field, `f32`
    /// per dense feature, `u8` label, all little-endian.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        serde_json::to_writer(&mut *w, &self.header())?;
        w.write_all(b"\n")?;
        let f = self.num_fields();
        for i in 0..self.len() {
            for c in &self.sparse[i * f..(i + 1) * f] {
                w.write_all(&c.to_le_bytes())?;
            }
            for x in &self.dense[i * self.dense_dim..(i + 1) * self.dense_dim] {
                w.write_all(&x.to_le_bytes())?;
            }
            w.write_all(&[self.labels[i]])?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: DatasetHeader = serde_json::from_str(line.trim_end())?;
        if header.format != DATASET_FORMAT {
            return Err(MletError::Format(format!(
                "unknown dataset format {}",
                header.format
            )));
        }
        let f = header.cardinalities.len();
        if header.record_bytes != 4 * f + 4 * header.dense_dim + 1 {
            return Err(MletError::Format(
                "record size disagrees with header".into(),
            ));
        }
        let total = header.n_train + header.n_val + header.n_test;
        let mut sparse = Vec::with_capacity(total * f);
        let mut dense = Vec::with_capacity(total * header.dense_dim);
        let mut labels = Vec::with_capacity(total);
        let mut rec = vec![0u8; header.record_bytes];
        for _ in 0..total {
            r.read_exact(&mut rec)?;
            let mut chunks = rec.chunks_exact(4);
            for _ in 0..f {
                sparse.push(u32::from_le_bytes(
                    chunks.next().unwrap().try_into().unwrap(),
                ));
            }
            for _ in 0..header.dense_dim {
                dense.push(f32::from_le_bytes(
                    chunks.next().unwrap().try_into().unwrap(),
                ));
            }
            labels.push(rec[header.record_bytes - 1]);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(MletError::Format("trailing bytes after last record".into()));
        }
        Self::from_parts(
            header.source,
            header.cardinalities,
            header.dense_dim,
            sparse,
            dense,
            labels,
            (header.n_train, header.n_val, header.n_test),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// 64-bit FNV-1a, stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Imports a Criteo-style file: label, `dense_dim` numeric columns, then
/// categorical columns. Tab-separated if the first line has a tab, comma
/// otherwise. Missing numbers read as 0 and numbers are mapped through
/// `sign(x) * ln(1 + |x|)`; categorical strings are hashed into `buckets`
/// ids per field. Rows are split 80/10/10 in file order.
pub fn import_csv(path: &Path, dense_dim: usize, buckets: usize) -> Result<SyntheticCtrDataset> {
    if buckets < 2 {
        return Err(MletError::InvalidArgument(
            "need at least 2 hash buckets".into(),
        ));
    }
    let reader = BufReader::new(File::open(path)?);
    let mut sep = None;
    let mut fields = None;
    let (mut sparse, mut dense, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sep = *sep.get_or_insert(if line.contains('\t') { '\t' } else { ',' });
        let cols: Vec<&str> = line.split(sep).collect();
        if cols.len() < 1 + dense_dim + 1 {
            return Err(MletError::Format(format!(
                "line {}: too few columns",
                lineno + 1
            )));
        }
        let nf = *fields.get_or_insert(cols.len() - 1 - dense_dim);
        if cols.len() - 1 - dense_dim != nf {
            return Err(MletError::Format(format!(
                "line {}: column count changed",
                lineno + 1
            )));
        }
        let label = match cols[0].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(MletError::Format(format!(
                    "line {}: bad label {other:?}",
                    lineno + 1
                )))
            }
        };
        labels.push(label);
        for raw in &cols[1..1 + dense_dim] {
            let x: f64 = if raw.trim().is_empty() {
                0.0
            } else {
                raw.trim().parse().map_err(|_| {
                    MletError::Format(format!("line {}: bad number {raw:?}", lineno + 1))
                })?
            };
            dense.push((x.signum() * x.abs().ln_1p()) as f32);
        }
        for raw in &cols[1 + dense_dim..] {
            sparse.push((fnv1a(raw.trim().as_bytes()) % buckets as u64) as u32);
        }
    }
    let total = labels.len();
    if total < 3 {
        return Err(MletError::Format("need at least 3 rows".into()));
    }
    let n_train = total * 8 / 10;
    let n_val = (total - n_train) / 2;
    let n_test = total - n_train - n_val;
    let nf = fields.unwrap_or(0);
    SyntheticCtrDataset::from_parts(
        DatasetSource::Csv {
            path: path.display().to_string(),
            buckets,
        },
        vec![buckets; nf],
        dense_dim,
        sparse,
        dense,
        labels,
        (n_train, n_val, n_test),
    )
}

/// Frequency score of every test sample: the product over fields of the
/// add-one smoothed training count of the queried category.
pub fn frequency_scores(ds: &SyntheticCtrDataset) -> Result<Vec<f64>> {
    if ds.train_range().is_empty() {
        return Err(MletError::InvalidArgument("training split is empty".into()));
    }
    Ok(ds
        .test_range()
        .map(|i| {
            ds.sample(i)
                .sparse
                .iter()
                .enumerate()
                .map(|(f, &c)| (ds.train_freq[f][c as usize] + 1) as f64)
                .product()
        })
        .collect())
}

/// Test samples with the highest and lowest frequency scores.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Strata {
    /// Absolute sample indices, most frequent first.
    pub most_frequent: Vec<usize>,
    /// Absolute sample indices, least frequent first.
    pub least_frequent: Vec<usize>,
}

/// Takes `floor(fraction * |test|)` samples from each end of the frequency
/// ordering. Equal scores are ordered by sample index.
pub fn stratify(ds: &SyntheticCtrDataset, fraction: f64) -> Result<Strata> {
    if ds.test_range().is_empty() {
        return Err(MletError::InvalidArgument("test split is empty".into()));
    }
    if !(0.0..=0.5).contains(&fraction) {
        return Err(MletError::InvalidArgument(format!(
            "stratum fraction must be in [0, 0.5], got {fraction}"
        )));
    }
    let scores = frequency_scores(ds)?;
    let base = ds.test_range().start;
    let m = (fraction * scores.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let most_frequent = order[..m].iter().map(|&i| base + i).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let least_frequent = order[..m].iter().map(|&i| base + i).collect();
    Ok(Strata {
        most_frequent,
        least_frequent,
    })
}
