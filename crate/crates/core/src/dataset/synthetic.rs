use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ColumnMeta, Labels, TabularDataset, Task};
use crate::error::{Error, Result};

/// Parameters of the synthetic EHR-like generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    pub n_informative: usize,
    pub n_noise: usize,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
    /// Euclidean distance between class means in the informative subspace.
    pub class_sep: f64,
    /// Majority rows per minority row.
    #[serde(default = "default_ir")]
    pub imbalance_ratio: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_classes() -> usize {
    2
}

fn default_ir() -> f64 {
    1.0
}

/// Rows given to each minority class: `round(n / (C - 1 + IR))`, at least 1.
/// For two classes this is `round(n / (1 + IR))`.
pub fn minority_count(n_rows: usize, n_classes: usize, imbalance_ratio: f64) -> (usize, bool) {
    let raw = (n_rows as f64 / (n_classes as f64 - 1.0 + imbalance_ratio)).round() as usize;
    if raw == 0 {
        (1, true)
    } else {
        (raw, false)
    }
}

/// Generates a labeled Gaussian dataset.
///
/// Informative columns carry per-class means: for two classes the means sit at
/// `±class_sep/2` along the all-ones direction of the informative subspace;
/// for more classes each mean is a random sign vector of norm
/// `class_sep/√2`. Noise columns are standard Gaussian and independent of the
/// label. Class 0 is the majority class.
///
/// Draw order from one seeded stream: informative column positions, class
/// means, label shuffle, then features row by row.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<TabularDataset> {
    if spec.n_informative < 1 {
        return Err(Error::invalid("n_informative must be at least 1"));
    }
    if spec.n_classes < 2 {
        return Err(Error::invalid("n_classes must be at least 2"));
    }
    if !(spec.class_sep >= 0.0) || !(spec.imbalance_ratio >= 1.0) {
        return Err(Error::invalid("class_sep must be >= 0 and imbalance_ratio >= 1"));
    }
    let d = spec.n_informative + spec.n_noise;
    let c = spec.n_classes;
    let (n_minor, clamped) = minority_count(spec.n_rows, c, spec.imbalance_ratio);
    let n_major = spec
        .n_rows
        .checked_sub(n_minor * (c - 1))
        .filter(|&m| m >= 1)
        .ok_or_else(|| Error::invalid("n_rows too small for the requested classes"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut cols: Vec<usize> = (0..d).collect();
    cols.shuffle(&mut rng);
    let mut informative: Vec<usize> = cols[..spec.n_informative].to_vec();
    informative.sort_unstable();

    let k = spec.n_informative as f64;
    let means: Vec<Vec<f64>> = if c == 2 {
        let a = spec.class_sep / (2.0 * k.sqrt());
        vec![vec![-a; spec.n_informative], vec![a; spec.n_informative]]
    } else {
        let a = spec.class_sep / (2.0f64.sqrt() * k.sqrt());
        (0..c).map(|_| (0..spec.n_informative).map(|_| if rng.random::<bool>() { a } else { -a }).collect()).collect()
    };

    let mut labels: Vec<usize> = Vec::with_capacity(spec.n_rows);
    labels.extend(std::iter::repeat_n(0, n_major));
    for class in 1..c {
        labels.extend(std::iter::repeat_n(class, n_minor));
    }
    labels.shuffle(&mut rng);

    let mut slot = vec![usize::MAX; d];
    for (s, &col) in informative.iter().enumerate() {
        slot[col] = s;
    }
    let mut features = Array2::zeros((spec.n_rows, d));
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            features[[i, j]] = if slot[j] == usize::MAX { z } else { means[y][slot[j]] + z };
        }
    }

    let meta = (0..d).map(|j| ColumnMeta::numerical(format!("f{j}"))).collect();
    let task = if c == 2 { Task::Binary } else { Task::Multiclass(c) };
    let mut ds = TabularDataset::new(features, Labels::Class(labels), meta, task)?.with_informative(informative);
    if clamped {
        ds.push_warning("minority class count rounded to 0; clamped to 1");
    }
    Ok(ds)
}
