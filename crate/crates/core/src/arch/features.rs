use super::{forward, Model, UnitId};
use crate::error::config_err;
use crate::tensor::{Tape, Tensor};
use crate::Result;

/// Activations of one unit for the first image of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMaps {
    pub unit: UnitId,
    pub height: usize,
    pub width: usize,
    /// One row-major `height x width` map per channel.
    pub channels: Vec<Vec<f32>>,
}

/// Runs `image` through `model` and extracts the named units' outputs.
pub fn dump_features(model: &Model<f32>, image: &Tensor<f32>, units: &[UnitId]) -> Result<Vec<FeatureMaps>> {
    for &u in units {
        if !model.topology().contains(u) {
            return Err(config_err!("unit {u} does not exist in this model"));
        }
    }
    let mut tape = Tape::new();
    let x = tape.constant(image.clone());
    let pass = forward(model, &mut tape, x)?;
    units
        .iter()
        .map(|&u| {
            let t = tape.value(pass.features[&u]);
            let [_, h, w, c] = t.dims4()?;
            let first = &t.data()[..h * w * c];
            let channels = (0..c)
                .map(|ch| first.iter().skip(ch).step_by(c).copied().collect())
                .collect();
            Ok(FeatureMaps {
                unit: u,
                height: h,
                width: w,
                channels,
            })
        })
        .collect()
}

/// Min-max normalises a map to `[0, 1]`; a constant map becomes all zeros.
pub fn normalize_minmax(map: &[f32]) -> Vec<f32> {
    let (lo, hi) = map
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return vec![0.0; map.len()];
    }
    map.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchConfig;

    #[test]
    fn normalization_range() {
        let n = normalize_minmax(&[2.0, 4.0, 3.0]);
        assert_eq!(n, vec![0.0, 1.0, 0.5]);
        assert_eq!(normalize_minmax(&[5.0; 4]), vec![0.0; 4]);
    }

    #[test]
    fn zero_model_zero_image_gives_constant_maps() {
        let model = Model::<f32>::zeros(ArchConfig::tiny()).unwrap();
        let img = Tensor::zeros(vec![1, 32, 32, 3]);
        let maps = dump_features(&model, &img, &[UnitId::Cu(0, 1), UnitId::Mcu(1)]).unwrap();
        assert_eq!(maps[0].channels.len(), 8);
        assert_eq!((maps[1].height, maps[1].width), (16, 16));
        for m in &maps {
            for ch in &m.channels {
                assert!(ch.iter().all(|&v| v == ch[0]));
            }
        }
    }

    #[test]
    fn unknown_unit_is_config_error() {
        let model = Model::<f32>::zeros(ArchConfig::tiny()).unwrap();
        let img = Tensor::zeros(vec![1, 32, 32, 3]);
        assert!(matches!(
            dump_features(&model, &img, &[UnitId::Cu(0, 4)]),
            Err(crate::Error::Config(_))
        ));
    }
}
