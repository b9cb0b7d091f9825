use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Sample};
use crate::error::data_err;
use crate::tensor::Tensor;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchMode {
    /// Seeded shuffle per epoch; the trailing partial batch is dropped.
    Train,
    /// Dataset order; the trailing partial batch is kept.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `(B, H, W, 3)`
    pub images: Tensor<f32>,
    /// `(B, H, W, 1)`
    pub masks: Tensor<f32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Sample indices grouped into batches for one epoch.
pub fn batch_order(len: usize, batch_size: usize, seed: u64, epoch: u64, mode: BatchMode) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..len).collect();
    if mode == BatchMode::Train {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ epoch));
    }
    order
        .chunks(batch_size)
        .filter(|c| mode == BatchMode::Eval || c.len() == batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

pub fn stack_batch(samples: &[&Sample]) -> Result<Batch> {
    if samples.is_empty() {
        return Err(data_err!("cannot stack an empty batch"));
    }
    let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
    let masks: Vec<_> = samples.iter().map(|s| s.mask.clone()).collect();
    Ok(Batch {
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        images: Tensor::stack(&images).map_err(|e| data_err!("samples differ in size: {e}"))?,
        masks: Tensor::stack(&masks).map_err(|e| data_err!("samples differ in size: {e}"))?,
    })
}

/// Lazily stacked batches for one epoch.
pub fn batches(
    dataset: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    mode: BatchMode,
) -> impl Iterator<Item = Result<Batch>> + '_ {
    batch_order(dataset.len(), batch_size, seed, epoch, mode)
        .into_iter()
        .map(move |idx| stack_batch(&idx.iter().map(|&i| &dataset.samples[i]).collect::<Vec<_>>()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_drops_partial_eval_keeps_it() {
        assert_eq!(batch_order(4800, 16, 0, 0, BatchMode::Train).len(), 300);
        let eval = batch_order(200, 16, 0, 0, BatchMode::Eval);
        assert_eq!(eval.len(), 13);
        assert_eq!(eval[12].len(), 8);
        assert_eq!(batch_order(20, 16, 0, 0, BatchMode::Train).len(), 1);
    }

    #[test]
    fn order_is_seeded_per_epoch() {
        let a = batch_order(100, 10, 7, 0, BatchMode::Train);
        assert_eq!(a, batch_order(100, 10, 7, 0, BatchMode::Train));
        assert_ne!(a, batch_order(100, 10, 7, 1, BatchMode::Train));
        let mut flat: Vec<_> = a.concat();
        flat.sort_unstable();
        assert_eq!(flat, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn stacking_shapes() {
        let s = Sample::new("a", Tensor::zeros(vec![1, 4, 4, 3]), Tensor::zeros(vec![1, 4, 4, 1])).unwrap();
        let b = stack_batch(&[&s, &s, &s]).unwrap();
        assert_eq!(b.images.shape(), &[3, 4, 4, 3]);
        assert_eq!(b.masks.shape(), &[3, 4, 4, 1]);
    }
}
