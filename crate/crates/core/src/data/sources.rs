use std::env;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_idx_pair, parse_idx_images, parse_idx_labels, synthetic_digits, ImageBatch};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};

/// Environment variable naming a directory with the four MNIST IDX files.
pub const MNIST_DIR_ENV: &str = "CATRELAX_MNIST_DIR";

pub const FIXTURE_SEED: u64 = 20_161_103;
pub const FIXTURE_SIZE: usize = 200;

const FIXTURE_IMAGES: &[u8] = include_bytes!("../../fixtures/digits-images.idx");
const FIXTURE_LABELS: &[u8] = include_bytes!("../../fixtures/digits-labels.idx");

/// The bundled 200-image fixture: synthetic 28×28 digits, labelled.
pub fn fixture() -> Result<ImageBatch> {
    parse_idx_images(FIXTURE_IMAGES)?.with_labels(parse_idx_labels(FIXTURE_LABELS)?)
}

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataSource {
    /// Freshly generated digits; the seed is the run's master seed.
    SyntheticDigits { train: usize, valid: usize, test: usize },
    /// The bundled fixture, split 120 / 40 / 40.
    Fixture,
    /// Real MNIST. Without `dir`, the directory comes from `CATRELAX_MNIST_DIR`.
    Mnist {
        #[serde(default)]
        dir: Option<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::SyntheticDigits {
            train: 2000,
            valid: 500,
            test: 500,
        }
    }
}

/// Train, validation and test images with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: ImageBatch,
    pub valid: ImageBatch,
    pub test: ImageBatch,
}

impl Splits {
    pub fn map(&self, f: impl Fn(&ImageBatch) -> Result<ImageBatch>) -> Result<Splits> {
        Ok(Splits {
            train: f(&self.train)?,
            valid: f(&self.valid)?,
            test: f(&self.test)?,
        })
    }
}

/// Standard MNIST file names; the last 10 000 training images become the
/// validation split.
pub fn load_mnist(dir: &Path) -> Result<Splits> {
    let file = |name: &str| {
        let p = dir.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingDataset(format!("{} not found", p.display())))
        }
    };
    let train = load_idx_pair(file("train-images-idx3-ubyte")?, file("train-labels-idx1-ubyte")?)?;
    let test = load_idx_pair(file("t10k-images-idx3-ubyte")?, file("t10k-labels-idx1-ubyte")?)?;
    let n = train.len();
    let cut = n.saturating_sub(10_000);
    Ok(Splits {
        train: train.range(0, cut),
        valid: train.range(cut, n),
        test,
    })
}

pub fn load_splits(source: &DataSource, seed: u64) -> Result<Splits> {
    match source {
        DataSource::SyntheticDigits { train, valid, test } => {
            let mut rng = stream_rng(seed, 0, streams::DATA);
            let all = synthetic_digits(train + valid + test, 28, &mut rng)?;
            Ok(Splits {
                train: all.range(0, *train),
                valid: all.range(*train, train + valid),
                test: all.range(train + valid, train + valid + test),
            })
        }
        DataSource::Fixture => {
            let all = fixture()?;
            Ok(Splits {
                train: all.range(0, 120),
                valid: all.range(120, 160),
                test: all.range(160, 200),
            })
        }
        DataSource::Mnist { dir } => {
            let dir = match dir {
                Some(d) => d.clone(),
                None => env::var_os(MNIST_DIR_ENV)
                    .map(PathBuf::from)
                    .ok_or_else(|| Error::MissingDataset(format!("set {MNIST_DIR_ENV} or give a directory")))?,
            };
            load_mnist(&dir)
        }
    }
}
