//! Labelled datasets: synthetic generation, label noise, splitting, and the
//! `LFMD` byte container.
//!
//! `LFMD` layout (all integers little-endian `u32`):
//!
//! ```text
//! offset  field
//! 0       magic "LFMD"
//! 4       version (1)
//! 8       N, example count
//! 12      C, class count
//! 16      rank of one example
//! 20      dims, `rank` values
//! ..      labels, N values
//! ..      example values, N * prod(dims) little-endian f64
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::models::InputShape;
use crate::rng::{derive_seed, seeded};
use crate::tensor::Array;

pub const DATASET_MAGIC: &[u8; 4] = b"LFMD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Synthetic,
    File,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `(N, ...)`
    pub examples: Array,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Labels before noise was applied, when known.
    pub clean_labels: Option<Vec<usize>>,
    pub provenance: Provenance,
}

/// A batch cut from a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Array,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Dataset {
    pub fn new(examples: Array, labels: Vec<usize>, classes: usize, provenance: Provenance) -> Result<Self> {
        let ds = Dataset { examples, labels, classes, clean_labels: None, provenance };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.examples.shape()[0];
        if self.labels.is_empty() || n != self.labels.len() || self.examples.rank() < 2 {
            return Err(Error::InvalidConfig(format!(
                "dataset has {} labels for examples of shape {:?}",
                self.labels.len(),
                self.examples.shape()
            )));
        }
        if self.classes == 0 {
            return Err(Error::InvalidConfig("dataset needs at least one class".into()));
        }
        if let Some((index, &label)) = self.labels.iter().enumerate().find(|(_, &l)| l >= self.classes) {
            return Err(Error::LabelOutOfRange { index, label, classes: self.classes });
        }
        if !self.examples.is_finite() {
            return Err(Error::InvalidConfig("dataset contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn example_shape(&self) -> &[usize] {
        &self.examples.shape()[1..]
    }

    pub fn input_shape(&self) -> Result<InputShape> {
        InputShape::from_dims(self.example_shape())
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        Ok(Batch {
            x: self.examples.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            examples: self.examples.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            clean_labels: self.clean_labels.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
            provenance: self.provenance,
        })
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.classes != other.classes {
            return Err(Error::InvalidConfig("cannot join datasets with different class counts".into()));
        }
        let clean = match (&self.clean_labels, &other.clean_labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(Dataset {
            examples: Array::concat_rows(&[&self.examples, &other.examples])?,
            labels: self.labels.iter().chain(&other.labels).copied().collect(),
            classes: self.classes,
            clean_labels: clean,
            provenance: self.provenance,
        })
    }

    /// Number of labels that differ from the clean record.
    pub fn flipped_count(&self) -> Option<usize> {
        self.clean_labels
            .as_ref()
            .map(|c| c.iter().zip(&self.labels).filter(|(a, b)| a != b).count())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.example_shape();
        let mut out = Vec::with_capacity(20 + 4 * dims.len() + 4 * self.len() + 8 * self.examples.numel());
        out.extend_from_slice(DATASET_MAGIC);
        for v in [DATASET_VERSION, self.len() as u32, self.classes as u32, dims.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        for v in self.examples.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
        let mut r = ByteReader::new(bytes);
        r.magic(DATASET_MAGIC)?;
        let version = r.u32("version")?;
        if version != DATASET_VERSION {
            return Err(Error::Parse { position: 4, detail: format!("unsupported version {version}") });
        }
        let n = r.u32("example count")? as usize;
        let classes = r.u32("class count")? as usize;
        let rank_pos = r.position();
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 3 {
            return Err(Error::Parse { position: rank_pos, detail: format!("unsupported example rank {rank}") });
        }
        let mut shape = vec![n];
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        if n == 0 || shape.contains(&0) {
            return Err(Error::Parse { position: rank_pos, detail: format!("empty dimension in {shape:?}") });
        }
        let mut labels = Vec::with_capacity(n.min(r.remaining() / 4));
        for _ in 0..n {
            labels.push(r.u32("label")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Parse { position: rank_pos, detail: format!("shape {shape:?} overflows") })?;
        let mut values = Vec::with_capacity(count.min(r.remaining() / 8));
        for _ in 0..count {
            values.push(r.f64("value")?);
        }
        r.finish()?;
        let examples = Array::new(&shape, values)?;
        Dataset::new(examples, labels, classes, Provenance::File)
    }
}

/// Little-endian cursor that reports the offset of any failure.
pub struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                position: self.pos,
                detail: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let pos = self.pos;
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::Parse {
                position: pos,
                detail: format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(expected)),
            });
        }
        Ok(())
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(f64::from_le_bytes(a))
    }

    /// Fails if bytes remain.
    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Parse {
                position: self.pos,
                detail: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// Each corrupted label moves to a uniformly chosen different class.
    #[default]
    UniformFlip,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub rate: f64,
    pub mode: NoiseMode,
}

impl NoiseSpec {
    pub const CLEAN: NoiseSpec = NoiseSpec { rate: 0.0, mode: NoiseMode::UniformFlip };

    pub fn uniform(rate: f64) -> Self {
        NoiseSpec { rate, mode: NoiseMode::UniformFlip }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::InvalidConfig(format!("noise rate {} outside [0, 1]", self.rate)));
        }
        Ok(())
    }
}

/// Flips exactly `round(rate * N)` labels, chosen without replacement.
/// The labels before flipping are kept in `clean_labels`.
pub fn apply_label_noise(ds: &mut Dataset, noise: &NoiseSpec, seed: u64) -> Result<()> {
    noise.validate()?;
    let n = ds.len();
    let flips = libm::round(noise.rate * n as f64) as usize;
    if flips > 0 && ds.classes < 2 {
        return Err(Error::InvalidConfig("label noise needs at least two classes".into()));
    }
    if ds.clean_labels.is_none() {
        ds.clean_labels = Some(ds.labels.clone());
    }
    let mut rng = seeded(derive_seed(seed, 0x6e6f_6973));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for &i in &order[..flips] {
        let shift = rng.random_range(1..ds.classes);
        ds.labels[i] = (ds.labels[i] + shift) % ds.classes;
    }
    Ok(())
}

/// Parameters of the Gaussian-blob image generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    /// `Image` renders blobs; `Features` draws class-mean Gaussian vectors.
    pub shape: InputShape,
    /// Distance of class centres from the image centre, in pixels.
    pub radius: f64,
    pub blob_width: f64,
    /// Per-example standard deviation of the blob position.
    pub jitter: f64,
    pub pixel_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            shape: InputShape::Image { channels: 1, height: 8, width: 8 },
            radius: 2.0,
            blob_width: 1.2,
            jitter: 1.0,
            pixel_noise: 0.35,
        }
    }
}

/// Class-conditional Gaussian blobs. Clean labels cycle through the classes
/// before shuffling, so class counts differ by at most one; `noise` is then
/// applied to the whole set.
pub fn make_synthetic(n: usize, classes: usize, noise: &NoiseSpec, seed: u64, spec: &SyntheticSpec) -> Result<Dataset> {
    noise.validate()?;
    if classes == 0 || n < classes {
        return Err(Error::InvalidConfig(format!("need n >= classes >= 1 (n {n}, classes {classes})")));
    }
    let mut rng = seeded(derive_seed(seed, 0x6461_7461));
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let len = spec.shape.example_len();
    let mut values = Vec::with_capacity(n * len);
    match spec.shape {
        InputShape::Image { channels, height, width } => {
            let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
            for &y in &labels {
                let theta = 2.0 * core::f64::consts::PI * y as f64 / classes as f64;
                let py = cy + spec.radius * libm::sin(theta) + spec.jitter * unit.sample(&mut rng);
                let px = cx + spec.radius * libm::cos(theta) + spec.jitter * unit.sample(&mut rng);
                let w2 = 2.0 * spec.blob_width * spec.blob_width;
                for _ in 0..channels {
                    for h in 0..height {
                        for w in 0..width {
                            let d2 = (h as f64 - py) * (h as f64 - py) + (w as f64 - px) * (w as f64 - px);
                            values.push(libm::exp(-d2 / w2) + spec.pixel_noise * unit.sample(&mut rng));
                        }
                    }
                }
            }
        }
        InputShape::Features(f) => {
            let means: Vec<f64> = (0..classes * f).map(|_| spec.radius * unit.sample(&mut rng)).collect();
            for &y in &labels {
                for d in 0..f {
                    values.push(means[y * f + d] + spec.jitter * unit.sample(&mut rng));
                }
            }
        }
    }
    let examples = Array::new(&spec.shape.batch_shape(n), values)?;
    let mut ds = Dataset::new(examples, labels, classes, Provenance::Synthetic)?;
    ds.clean_labels = Some(ds.labels.clone());
    apply_label_noise(&mut ds, noise, seed)?;
    Ok(ds)
}

/// Default train/val/test fractions.
pub const DEFAULT_FRACTIONS: [f64; 3] = [5.0 / 12.0, 5.0 / 12.0, 2.0 / 12.0];

/// Shuffled three-way split. Sizes are `round(f * N)`; when the fractions
/// sum to one the last split takes the remainder so every index is used.
pub fn split_dataset(ds: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !f.is_finite() || *f <= 0.0) {
        return Err(Error::InvalidConfig(format!("split fractions must be positive, got {fractions:?}")));
    }
    if total > 1.0 + 1e-9 {
        return Err(Error::InvalidConfig(format!("split fractions sum to {total} > 1")));
    }
    let n = ds.len();
    let mut sizes = fractions.map(|f| libm::round(f * n as f64) as usize);
    if libm::fabs(total - 1.0) <= 1e-9 {
        let head = sizes[0] + sizes[1];
        if head > n {
            return Err(Error::InvalidConfig(format!("cannot split {n} examples as {fractions:?}")));
        }
        sizes[2] = n - head;
    }
    if sizes.iter().sum::<usize>() > n {
        return Err(Error::InvalidConfig(format!("cannot split {n} examples as {fractions:?}")));
    }
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidConfig(format!("split {i} would be empty ({n} examples, {fractions:?})")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(derive_seed(seed, 0x7370_6c74)));
    let (a, rest) = order.split_at(sizes[0]);
    let (b, rest) = rest.split_at(sizes[1]);
    let c = &rest[..sizes[2]];
    Ok((ds.subset(a)?, ds.subset(b)?, ds.subset(c)?))
}

/// Split indices only, for audits.
pub fn split_indices(n: usize, fractions: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    let ids = Array::new(&[n, 1], (0..n).map(|i| i as f64).collect())?;
    let ds = Dataset::new(ids, vec![0; n], 1, Provenance::Synthetic)?;
    let (a, b, c) = split_dataset(&ds, fractions, seed)?;
    let idx = |d: Dataset| d.examples.data().iter().map(|&v| v as usize).collect();
    Ok([idx(a), idx(b), idx(c)])
}
