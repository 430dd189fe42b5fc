use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::graph::Mat;
use crate::seeding::derive_seed;

/// Name-indexed collection of parameter matrices, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Mat>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn insert(&mut self, name: &str, value: Mat) -> usize {
        assert!(!self.index.contains_key(name), "duplicate parameter `{name}`");
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn value(&self, id: usize) -> &Mat {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Mat {
        &mut self.values[id]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Sets every parameter whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, v) in self.names.iter().zip(self.values.iter_mut()) {
            if name.starts_with(prefix) {
                v.fill(0.0);
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with the given std, resampled outside two standard deviations.
    TruncNormal(f64),
}

/// Registers parameters with per-name seeded initialization, so adding a parameter never
/// perturbs the initial value of another.
pub struct ParamBuilder {
    seed: u64,
    set: ParamSet,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        ParamBuilder {
            seed,
            set: ParamSet::default(),
        }
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> usize {
        let value = match init {
            Init::Zeros => Array2::zeros((rows, cols)),
            Init::Ones => Array2::ones((rows, cols)),
            Init::TruncNormal(std) => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, name));
                let normal = Normal::new(0.0, 1.0).expect("valid normal");
                Array2::from_shape_fn((rows, cols), |_| loop {
                    let z: f64 = normal.sample(&mut rng);
                    if z.abs() <= 2.0 {
                        // Parameters are kept on the f32 grid so checkpoints store them exactly.
                        break f64::from((z * std) as f32);
                    }
                })
            }
        };
        self.set.insert(name, value)
    }

    pub fn finish(self) -> ParamSet {
        self.set
    }
}
