use super::{Dataset, Provenance, Sample};
use crate::error::config_err;
use crate::tensor::Tensor;
use crate::Result;

/// Elements of the dihedral group of the square. Rotations are clockwise;
/// the `Flip*` elements mirror left-right first, then rotate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum D4 {
    Id,
    Rot90,
    Rot180,
    Rot270,
    Flip,
    FlipRot90,
    FlipRot180,
    FlipRot270,
}

impl D4 {
    pub const ALL: [D4; 8] = [
        D4::Id,
        D4::Rot90,
        D4::Rot180,
        D4::Rot270,
        D4::Flip,
        D4::FlipRot90,
        D4::FlipRot180,
        D4::FlipRot270,
    ];

    pub fn name(self) -> &'static str {
        match self {
            D4::Id => "id",
            D4::Rot90 => "rot90",
            D4::Rot180 => "rot180",
            D4::Rot270 => "rot270",
            D4::Flip => "flip",
            D4::FlipRot90 => "flip_rot90",
            D4::FlipRot180 => "flip_rot180",
            D4::FlipRot270 => "flip_rot270",
        }
    }

    fn parts(self) -> (bool, usize) {
        match self {
            D4::Id => (false, 0),
            D4::Rot90 => (false, 1),
            D4::Rot180 => (false, 2),
            D4::Rot270 => (false, 3),
            D4::Flip => (true, 0),
            D4::FlipRot90 => (true, 1),
            D4::FlipRot180 => (true, 2),
            D4::FlipRot270 => (true, 3),
        }
    }

    /// Source coordinate for output `(y, x)` on an `s x s` grid.
    fn source(self, y: usize, x: usize, s: usize) -> (usize, usize) {
        let (flip, quarter_turns) = self.parts();
        let (mut y, mut x) = (y, x);
        // Undo the clockwise rotations one quarter turn at a time.
        for _ in 0..quarter_turns {
            (y, x) = (s - 1 - x, y);
        }
        if flip {
            x = s - 1 - x;
        }
        (y, x)
    }
}

/// Applies `op` to every image in a square NHWC tensor.
pub fn d4_apply(t: &Tensor<f32>, op: D4) -> Result<Tensor<f32>> {
    let [n, h, w, c] = t.dims4()?;
    if h != w {
        return Err(config_err!("D4 transforms need square inputs, got {h}x{w}"));
    }
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = op.source(y, x, h);
                let off = ((b * h + sy) * w + sx) * c;
                out.extend_from_slice(&src[off..off + c]);
            }
        }
    }
    Tensor::new(vec![n, h, w, c], out)
}

/// The 8-element orbit of a square sample; ids are suffixed `_<transform>`.
pub fn augment_d4(sample: &Sample) -> Result<Vec<Sample>> {
    let (h, w) = sample.dims();
    if h != w {
        return Err(config_err!(
            "sample {} is {h}x{w}; augment after resizing to a square",
            sample.id
        ));
    }
    D4::ALL
        .iter()
        .map(|&op| {
            Ok(Sample {
                id: format!("{}_{}", sample.id, op.name()),
                image: d4_apply(&sample.image, op)?,
                mask: d4_apply(&sample.mask, op)?,
                source_dims: sample.source_dims,
            })
        })
        .collect()
}

pub fn augment_dataset(dataset: &Dataset) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(dataset.len() * 8);
    for s in &dataset.samples {
        samples.extend(augment_d4(s)?);
    }
    Dataset::new(samples, dataset.split, Provenance::Derived("d4 augmentation".into()))
}
