use std::collections::BTreeMap;

use super::{Activation, ArchConfig, Operand, Topology, UnitId};
use crate::error::config_err;
use crate::tensor::{ParamId, ParamStore, Scalar, Tensor};
use crate::Result;

/// Weight/bias pairs of a unit's convolutions, in application order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitParams {
    pub convs: Vec<(ParamId, ParamId)>,
}

/// A built network: configuration, topology and named parameters.
///
/// Parameter names are `<unit>/conv<n>/{weight,bias}` for units and
/// `up_<i>_<j>/{weight,bias}` for the transposed convolution that
/// up-samples `CU_(i,j)`.
#[derive(Clone, Debug)]
pub struct Model<T = f32> {
    config: ArchConfig,
    topology: Topology,
    params: ParamStore<T>,
    units: BTreeMap<UnitId, UnitParams>,
    upsamplers: BTreeMap<UnitId, (ParamId, ParamId)>,
}

impl<T: Scalar> Model<T> {
    /// Builds the model, asking `init(name, shape)` for every parameter
    /// in registration order.
    pub fn with_init(config: ArchConfig, mut init: impl FnMut(&str, &[usize]) -> Tensor<T>) -> Result<Self> {
        let topology = Topology::build(&config)?;
        let mut params = ParamStore::new();
        let mut units = BTreeMap::new();
        let mut upsamplers = BTreeMap::new();

        for unit in &topology.units {
            let mut cin = unit
                .operands
                .iter()
                .map(|&op| topology.operand_channels(op))
                .sum::<Result<usize>>()?;
            let mut convs = Vec::with_capacity(unit.kernels.len());
            for (n, &k) in unit.kernels.iter().enumerate() {
                let prefix = format!("{}/conv{}", unit.id.key(), n + 1);
                let wshape = [k, k, cin, unit.out_channels];
                let bshape = [unit.out_channels];
                let w = params.insert(format!("{prefix}/weight"), init(&format!("{prefix}/weight"), &wshape))?;
                let b = params.insert(format!("{prefix}/bias"), init(&format!("{prefix}/bias"), &bshape))?;
                convs.push((w, b));
                cin = unit.out_channels;
            }
            units.insert(unit.id, UnitParams { convs });
        }
        for &(src, c) in &topology.upsamplers {
            let UnitId::Cu(i, j) = src else {
                return Err(config_err!("only CU outputs can be up-sampled, got {src}"));
            };
            let prefix = format!("up_{i}_{j}");
            let w = params.insert(format!("{prefix}/weight"), init(&format!("{prefix}/weight"), &[3, 3, c, c]))?;
            let b = params.insert(format!("{prefix}/bias"), init(&format!("{prefix}/bias"), &[c]))?;
            upsamplers.insert(src, (w, b));
        }
        Ok(Self {
            config,
            topology,
            params,
            units,
            upsamplers,
        })
    }

    /// All parameters zero.
    pub fn zeros(config: ArchConfig) -> Result<Self> {
        Self::with_init(config, |_, shape| Tensor::zeros(shape.to_vec()))
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn unit_params(&self, id: UnitId) -> Result<&UnitParams> {
        self.units
            .get(&id)
            .ok_or_else(|| config_err!("unit {id} does not exist in this model"))
    }

    pub fn upsampler_params(&self, src: UnitId) -> Result<(ParamId, ParamId)> {
        self.upsamplers
            .get(&src)
            .copied()
            .ok_or_else(|| config_err!("no up-sampler for {src}"))
    }

    /// Unit names in execution order.
    pub fn unit_ids(&self) -> Vec<UnitId> {
        self.topology.units.iter().map(|u| u.id).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    /// True if exactly the output unit ends in a sigmoid.
    pub fn has_single_sigmoid_output(&self) -> bool {
        self.topology
            .units
            .iter()
            .all(|u| (u.final_activation == Activation::Sigmoid) == (u.id == self.topology.output))
    }

    pub fn operands(&self, id: UnitId) -> Result<&[Operand]> {
        Ok(&self.topology.unit(id)?.operands)
    }

    /// Same model with every parameter converted to another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            topology: self.topology.clone(),
            params: self.params.cast(),
            units: self.units.clone(),
            upsamplers: self.upsamplers.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::shape_plan;

    #[test]
    fn parameter_shapes_follow_plan() {
        for cfg in [ArchConfig::default(), ArchConfig::tiny()] {
            let m = Model::<f32>::zeros(cfg.clone()).unwrap();
            let plan = shape_plan(&cfg, 1).unwrap();
            assert_eq!(m.num_params(), plan.total_params);
            for id in m.unit_ids() {
                let row = plan.unit(id).unwrap();
                let up = m.unit_params(id).unwrap();
                let count: usize = up
                    .convs
                    .iter()
                    .map(|&(w, b)| m.params().get(w).value.len() + m.params().get(b).value.len())
                    .sum();
                assert_eq!(count, row.params, "{id}");
                let (w0, _) = up.convs[0];
                assert_eq!(m.params().get(w0).value.shape()[2], row.input[3], "{id}");
            }
        }
    }

    #[test]
    fn single_sigmoid_output() {
        let m = Model::<f32>::zeros(ArchConfig::default()).unwrap();
        assert!(m.has_single_sigmoid_output());
        assert!(m.params().id("cu_0_0/conv1/weight").is_some());
        assert!(m.params().id("up_4_0/weight").is_some());
    }
}
