//! Datasets, splits and mini-batch iteration.

mod amat;
mod batch;
mod moons;

pub use amat::{load_amat, load_amat_limited, parse_amat, write_amat};
pub use batch::{batch_iter, epoch_permutation};
pub use moons::two_moons;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageGeometry {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Labeled examples stored as an `n x d` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
    geometry: Option<ImageGeometry>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::shape(format!(
                "features must be an n x d matrix, got {:?}",
                features.shape()
            )));
        }
        if features.rows() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            classes,
            geometry: None,
        })
    }

    pub fn with_geometry(mut self, geometry: ImageGeometry) -> Result<Self> {
        if geometry.len() != self.dim() {
            return Err(Error::shape(format!(
                "geometry {geometry:?} does not cover {} features",
                self.dim()
            )));
        }
        self.geometry = Some(geometry);
        Ok(self)
    }

    /// Raises the declared class count, e.g. when a subset misses the top label.
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        if let Some(&max) = self.labels.iter().max() {
            if max >= classes {
                return Err(Error::InvalidInput(format!(
                    "label {max} does not fit {classes} classes"
                )));
            }
        }
        self.classes = classes;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.row_len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn geometry(&self) -> Option<ImageGeometry> {
        self.geometry
    }

    /// Features and labels of the given rows, features shaped `[b, example_shape..]`.
    pub fn gather(&self, indices: &[usize], example_shape: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.features.select_rows(indices)?;
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(example_shape);
        let x = x.reshape(&shape).map_err(|_| {
            Error::shape(format!(
                "examples with {} features cannot be viewed as {example_shape:?}",
                self.dim()
            ))
        })?;
        Ok((x, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            geometry: self.geometry,
        })
    }

    /// The first `count` rows (or all of them).
    pub fn head(&self, count: usize) -> Result<Self> {
        let count = count.min(self.len());
        self.subset(&(0..count).collect::<Vec<_>>())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// How one pool of examples is divided into train / validation / test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

/// Disjoint index sets that together cover `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (field, f) in [
            ("validation_fraction", self.validation_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if self.validation_fraction + self.test_fraction >= 1.0 {
            return Err(Error::config(
                "validation_fraction",
                "validation and test fractions must leave training examples",
            ));
        }
        Ok(())
    }

    /// Seeded shuffle of `0..n`, then test, validation and train in that order.
    /// Each carved part gets `round(fraction * n)` rows, at least one when the
    /// fraction is positive. Index lists are sorted ascending.
    pub fn partition(&self, n: usize) -> Result<SplitIndices> {
        self.validate()?;
        let count = |f: f64| {
            if f > 0.0 {
                ((f * n as f64).round() as usize).max(1)
            } else {
                0
            }
        };
        let (n_test, n_val) = (count(self.test_fraction), count(self.validation_fraction));
        if n_test + n_val >= n {
            return Err(Error::InvalidInput(format!(
                "{n} examples cannot hold {n_test} test and {n_val} validation rows plus training data"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        let mut test = order[..n_test].to_vec();
        let mut validation = order[n_test..n_test + n_val].to_vec();
        let mut train = order[n_test + n_val..].to_vec();
        test.sort_unstable();
        validation.sort_unstable();
        train.sort_unstable();
        Ok(SplitIndices {
            train,
            validation,
            test,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn new(train: Dataset, validation: Dataset, test: Dataset) -> Result<Self> {
        for (name, d) in [("validation", &validation), ("test", &test)] {
            if d.dim() != train.dim() || d.classes() != train.classes() {
                return Err(Error::InvalidInput(format!(
                    "{name} split has {} features / {} classes, train has {} / {}",
                    d.dim(),
                    d.classes(),
                    train.dim(),
                    train.classes()
                )));
            }
        }
        Ok(Self {
            train,
            validation,
            test,
        })
    }

    /// Partitions a single dataset. Both fractions must be positive.
    pub fn from_pool(pool: &Dataset, spec: &SplitSpec) -> Result<Self> {
        if spec.validation_fraction <= 0.0 || spec.test_fraction <= 0.0 {
            return Err(Error::config(
                "validation_fraction",
                "splitting one pool needs positive validation and test fractions",
            ));
        }
        let idx = spec.partition(pool.len())?;
        Self::new(
            pool.subset(&idx.train)?,
            pool.subset(&idx.validation)?,
            pool.subset(&idx.test)?,
        )
    }

    /// Carves a validation split out of `train` when no separate file exists.
    pub fn carve_validation(train: &Dataset, test: Dataset, fraction: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            validation_fraction: fraction,
            test_fraction: 0.0,
            seed,
        };
        if fraction <= 0.0 {
            return Err(Error::config("validation_fraction", "must be positive"));
        }
        let idx = spec.partition(train.len())?;
        Self::new(train.subset(&idx.train)?, train.subset(&idx.validation)?, test)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(n: usize) -> Dataset {
        let x = Tensor::new(vec![n, 2], (0..2 * n).map(|v| v as f64).collect()).unwrap();
        Dataset::new(x, (0..n).map(|i| i % 3).collect(), 3).unwrap()
    }

    #[test]
    fn dataset_invariants() {
        let x = Tensor::zeros(&[2, 4]);
        assert!(Dataset::new(x.clone(), vec![0], 2).is_err());
        assert!(Dataset::new(x.clone(), vec![0, 2], 2).is_err());
        let d = Dataset::new(x, vec![0, 1], 2).unwrap();
        assert!(d
            .clone()
            .with_geometry(ImageGeometry {
                channels: 1,
                height: 2,
                width: 3
            })
            .is_err());
        assert!(d
            .with_geometry(ImageGeometry {
                channels: 1,
                height: 2,
                width: 2
            })
            .is_ok());
    }

    #[test]
    fn gather_reshapes_to_example_shape() {
        let d = toy(4);
        let (x, y) = d.gather(&[3, 1], &[1, 1, 2]).unwrap();
        assert_eq!(x.shape(), &[2, 1, 1, 2]);
        assert_eq!(x.data(), &[6.0, 7.0, 2.0, 3.0]);
        assert_eq!(y, vec![0, 1]);
        assert!(d.gather(&[0], &[3]).is_err());
    }

    #[test]
    fn from_pool_sizes() {
        let spec = SplitSpec {
            validation_fraction: 0.1,
            test_fraction: 0.2,
            seed: 4,
        };
        let s = Splits::from_pool(&toy(100), &spec).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (70, 10, 20));
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_and_covering(
            n in 3usize..300, v in 0.0f64..0.4, t in 0.0f64..0.4, seed in any::<u64>()
        ) {
            let spec = SplitSpec { validation_fraction: v, test_fraction: t, seed };
            if let Ok(idx) = spec.partition(n) {
                let mut all: Vec<usize> = idx.train.iter().chain(&idx.validation).chain(&idx.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                prop_assert!(!idx.train.is_empty());
            }
        }
    }
}
