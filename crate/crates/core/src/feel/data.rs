//! Desk-scale synthetic classification data and federated partitioning.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("{samples} samples of class {class} cannot be dealt evenly to {holders} devices")]
    Indivisible { class: usize, samples: usize, holders: usize },
    #[error("device count {eds} is not divisible by {areas} areas")]
    AreaMismatch { eds: usize, areas: usize },
    #[error("dataset is empty")]
    Empty,
}

/// Labeled feature vectors.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// How local data sets are formed across devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    /// Every device holds an equal share of every class.
    Homogeneous,
    /// Five areas; devices in area `u` hold only a contiguous band of labels,
    /// so no device sees every class.
    Heterogeneous,
}

const AREAS: usize = 5;

/// Gaussian class clusters with unit-norm random centers; deterministic in
/// the seed.
pub fn synthetic_blobs(
    num_classes: usize,
    dim: usize,
    per_class_train: usize,
    per_class_test: usize,
    noise_std: f64,
    rng: &mut impl Rng,
) -> (Dataset, Dataset) {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let centers: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            let raw: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            raw.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let noise = Normal::new(0.0, noise_std).unwrap();
    let mut make = |per_class: usize| {
        let mut features = Vec::with_capacity(num_classes * per_class);
        let mut labels = Vec::with_capacity(num_classes * per_class);
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per_class {
                features.push(center.iter().map(|&m| m + noise.sample(rng)).collect());
                labels.push(c);
            }
        }
        Dataset { features, labels, num_classes, dim }
    };
    let train = make(per_class_train);
    let test = make(per_class_test);
    (train, test)
}

/// Label band held by area `u` (1-based): `{u-1, u, ..., u + ceil(C/2) - 1} mod C`,
/// which reproduces the six-label-per-area pattern at ten classes.
fn area_labels(u: usize, num_classes: usize) -> Vec<usize> {
    let span = num_classes / 2 + 1;
    (0..span).map(|j| (u - 1 + j) % num_classes).collect()
}

/// Splits a dataset into `num_eds` local index sets.
pub fn partition(
    dataset: &Dataset,
    mode: PartitionMode,
    num_eds: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>, PartitionError> {
    if dataset.is_empty() || num_eds == 0 {
        return Err(PartitionError::Empty);
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &c) in dataset.labels.iter().enumerate() {
        by_class[c].push(i);
    }
    for idxs in &mut by_class {
        idxs.shuffle(rng);
    }

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); num_eds];
    match mode {
        PartitionMode::Homogeneous => {
            for (c, idxs) in by_class.iter().enumerate() {
                if idxs.len() % num_eds != 0 {
                    return Err(PartitionError::Indivisible {
                        class: c,
                        samples: idxs.len(),
                        holders: num_eds,
                    });
                }
                for (j, &i) in idxs.iter().enumerate() {
                    shards[j % num_eds].push(i);
                }
            }
        }
        PartitionMode::Heterogeneous => {
            if num_eds % AREAS != 0 {
                return Err(PartitionError::AreaMismatch { eds: num_eds, areas: AREAS });
            }
            let per_area = num_eds / AREAS;
            // device -> holder list per class
            let mut holders: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
            for k in 0..num_eds {
                let u = k / per_area + 1;
                for c in area_labels(u, dataset.num_classes) {
                    holders[c].push(k);
                }
            }
            // holder counts differ per class (edge labels live in fewer
            // areas), so samples are dealt round-robin
            for (c, idxs) in by_class.iter().enumerate() {
                let h = &holders[c];
                if h.is_empty() {
                    return Err(PartitionError::Indivisible {
                        class: c,
                        samples: idxs.len(),
                        holders: 0,
                    });
                }
                for (j, &i) in idxs.iter().enumerate() {
                    shards[h[j % h.len()]].push(i);
                }
            }
        }
    }
    Ok(shards)
}
