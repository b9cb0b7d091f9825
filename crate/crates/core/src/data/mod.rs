//! Datasets: loading, resizing, splitting, augmentation, batching and a
//! synthetic scene generator.

mod augment;
mod batch;
mod io;
mod resize;
mod synth;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, data_err};
use crate::tensor::Tensor;
use crate::Result;

pub use augment::{augment_d4, augment_dataset, d4_apply, D4};
pub use batch::{batch_order, batches, stack_batch, Batch, BatchMode};
pub use io::{load_dataset, load_dataset_dirs, load_images, load_mask_png, read_saliency_png, write_dataset, write_saliency_png};
pub use resize::{resize, resize_bilinear, resize_nearest};
pub use synth::{render_scene, synth_generate, synth_generate_with, synth_scene, SynthManifest, SynthObject, SynthOptions, SynthScene, SynthShape};

/// One image with its binary ground-truth mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `(1, H, W, 3)` with values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `(1, H, W, 1)` with values in `{0, 1}`.
    pub mask: Tensor<f32>,
    /// `(height, width)` as originally loaded.
    pub source_dims: (usize, usize),
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, mask: Tensor<f32>) -> Result<Self> {
        let id = id.into();
        let [n, h, w, c] = image.dims4()?;
        let [mn, mh, mw, mc] = mask.dims4()?;
        if n != 1 || c != 3 || mn != 1 || mc != 1 || (h, w) != (mh, mw) {
            return Err(data_err!(
                "sample {id}: image {:?} and mask {:?} do not pair up",
                image.shape(),
                mask.shape()
            ));
        }
        if let Some(v) = mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(data_err!("sample {id}: mask value {v} is not binary"));
        }
        Ok(Self {
            id,
            image,
            mask,
            source_dims: (h, w),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        let s = self.image.shape();
        (s[1], s[2])
    }

    /// True if the mask has no foreground pixel.
    pub fn is_empty_gt(&self) -> bool {
        self.mask.data().iter().all(|&v| v == 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Directory(String),
    Synthetic { seed: u64, n: usize, size: usize, empty_fraction: f64 },
    Derived(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub split: Split,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, split: Split, provenance: Provenance) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(data_err!("duplicate sample id {}", s.id));
            }
        }
        Ok(Self {
            samples,
            split,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }

    /// Resizes every sample.
    pub fn resized(&self, size: (usize, usize)) -> Dataset {
        Dataset {
            samples: self.samples.iter().map(|s| resize(s, size)).collect(),
            split: self.split,
            provenance: self.provenance.clone(),
        }
    }
}

/// Seeded shuffle, then the first `n_train` samples train and the rest test.
pub fn split(dataset: &Dataset, n_train: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_train > dataset.len() {
        return Err(config_err!(
            "n_train {n_train} exceeds dataset size {}",
            dataset.len()
        ));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize], split| Dataset {
        samples: idx.iter().map(|&i| dataset.samples[i].clone()).collect(),
        split,
        provenance: Provenance::Derived(format!("split seed {seed}")),
    };
    Ok((pick(&order[..n_train], Split::Train), pick(&order[n_train..], Split::Test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                Sample::new(
                    format!("s{i:03}"),
                    Tensor::full(vec![1, 2, 2, 3], i as f32 / n as f32),
                    Tensor::zeros(vec![1, 2, 2, 1]),
                )
                .unwrap()
            })
            .collect();
        Dataset::new(samples, Split::All, Provenance::Derived("toy".into())).unwrap()
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_seeded() {
        let d = toy(800);
        let (tr, te) = split(&d, 600, 42).unwrap();
        assert_eq!((tr.len(), te.len()), (600, 200));
        let mut all: Vec<_> = tr.ids().into_iter().chain(te.ids()).collect();
        all.sort();
        assert_eq!(all, d.ids());
        let (tr2, _) = split(&d, 600, 42).unwrap();
        assert_eq!(tr.ids(), tr2.ids());
        let (tr3, _) = split(&d, 600, 43).unwrap();
        assert_ne!(tr.ids(), tr3.ids());
        assert!(matches!(split(&d, 801, 1), Err(crate::Error::Config(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut d = toy(2);
        d.samples[1].id = d.samples[0].id.clone();
        assert!(Dataset::new(d.samples, Split::All, Provenance::Derived("x".into())).is_err());
    }

    #[test]
    fn non_binary_mask_rejected() {
        let r = Sample::new("x", Tensor::zeros(vec![1, 2, 2, 3]), Tensor::full(vec![1, 2, 2, 1], 0.5));
        assert!(matches!(r, Err(crate::Error::Data(_))));
    }
}
