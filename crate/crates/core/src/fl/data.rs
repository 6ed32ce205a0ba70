use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset would be empty")]
    Empty,
    #[error("{what}: expected magic {expected:#010x}, found {found:#010x}")]
    BadMagic {
        what: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{0} file is truncated")]
    Truncated(&'static str),
    #[error("label {label} outside [0, {n_classes})")]
    Label { label: usize, n_classes: usize },
    #[error("invalid dataset shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major feature matrix with labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub d_in: usize,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

impl Samples {
    pub fn empty(d_in: usize) -> Self {
        Self {
            d_in,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d_in..(i + 1) * self.d_in]
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Samples {
        Samples {
            d_in: self.d_in,
            x: self.x[range.start * self.d_in..range.end * self.d_in].to_vec(),
            y: self.y[range].to_vec(),
        }
    }

    /// `n` contiguous, equally sized parts; the remainder is dropped.
    pub fn shards(&self, n: usize) -> Vec<Samples> {
        let size = self.len().checked_div(n).unwrap_or(0);
        (0..n).map(|i| self.slice(i * size..(i + 1) * size)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    IdxFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub n_classes: usize,
    pub train: Samples,
    pub test: Samples,
    pub source: DataSource,
}

impl Dataset {
    pub fn new(n_classes: usize, train: Samples, test: Samples, source: DataSource) -> Result<Self, DataError> {
        if train.is_empty() {
            return Err(DataError::Empty);
        }
        if train.d_in != test.d_in {
            return Err(DataError::Shape(format!(
                "train d_in {} vs test d_in {}",
                train.d_in, test.d_in
            )));
        }
        for &label in train.y.iter().chain(&test.y) {
            if label >= n_classes {
                return Err(DataError::Label { label, n_classes });
            }
        }
        Ok(Self {
            n_classes,
            train,
            test,
            source,
        })
    }

    pub fn d_in(&self) -> usize {
        self.train.d_in
    }
}

/// Mean of class `c`: 6 times the `c`-th basis vector.
const CLASS_SEPARATION: f64 = 6.0;

/// Unit-covariance Gaussian blobs. Train holds `n_per_class` samples per
/// class, test half as many; train is shuffled.
pub fn generate_synthetic(seed: u64, n_classes: usize, d_in: usize, n_per_class: usize) -> Result<Dataset, DataError> {
    if n_per_class == 0 || n_classes == 0 {
        return Err(DataError::Empty);
    }
    if d_in < n_classes {
        return Err(DataError::Shape(format!("d_in {d_in} < n_classes {n_classes}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut blob = |per_class: usize| {
        let mut s = Samples::empty(d_in);
        for c in 0..n_classes {
            for _ in 0..per_class {
                for j in 0..d_in {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    s.x.push(noise + if j == c { CLASS_SEPARATION } else { 0.0 });
                }
                s.y.push(c);
            }
        }
        s
    };
    let train = blob(n_per_class);
    let test = blob((n_per_class / 2).max(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let mut shuffled = Samples::empty(d_in);
    for i in order {
        shuffled.x.extend_from_slice(train.row(i));
        shuffled.y.push(train.y[i]);
    }
    Dataset::new(n_classes, shuffled, test, DataSource::Synthetic)
}

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(DataError::Truncated(what))
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

/// Reads an IDX image/label pair, scaling pixels to `[0, 1]` and keeping at
/// most `limit` samples.
pub fn load_idx(images: &Path, labels: &Path, limit: usize) -> Result<Samples, DataError> {
    let img = read_file(images)?;
    let lab = read_file(labels)?;
    let magic = read_u32(&img, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            what: "images",
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let magic = read_u32(&lab, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(DataError::BadMagic {
            what: "labels",
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let n_img = read_u32(&img, 4, "images")? as usize;
    let rows = read_u32(&img, 8, "images")? as usize;
    let cols = read_u32(&img, 12, "images")? as usize;
    let n_lab = read_u32(&lab, 4, "labels")? as usize;
    if n_img != n_lab {
        return Err(DataError::CountMismatch {
            images: n_img,
            labels: n_lab,
        });
    }
    let d_in = rows * cols;
    let n = n_img.min(limit);
    let pixels = img.get(16..16 + n_img * d_in).ok_or(DataError::Truncated("images"))?;
    let ys = lab.get(8..8 + n_lab).ok_or(DataError::Truncated("labels"))?;
    Ok(Samples {
        d_in,
        x: pixels[..n * d_in].iter().map(|&p| p as f64 / 255.0).collect(),
        y: ys[..n].iter().map(|&l| l as usize).collect(),
    })
}
