//! Unit naming and connectivity, derived from an [`ArchConfig`].
//!
//! The topology is the single source of truth for both the symbolic shape
//! plan and the forward pass.

use std::fmt;
use std::str::FromStr;

use super::{ArchConfig, ConnectionMode};
use crate::error::config_err;
use crate::{Error, Result};

/// A convolution unit: `M-CU_k` on pyramid level `k`, or `CU_(i,j)` at
/// encoder depth `i` and skip-pathway column `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnitId {
    Mcu(usize),
    Cu(usize, usize),
}

impl UnitId {
    /// Resolution level: 0 is full resolution, each level halves H and W.
    pub fn level(self) -> usize {
        match self {
            UnitId::Mcu(k) => k,
            UnitId::Cu(i, _) => i,
        }
    }

    /// Parameter-path prefix, e.g. `cu_0_3` or `mcu_2`.
    pub fn key(self) -> String {
        match self {
            UnitId::Mcu(k) => format!("mcu_{k}"),
            UnitId::Cu(i, j) => format!("cu_{i}_{j}"),
        }
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitId::Mcu(k) => write!(f, "M-CU_{k}"),
            UnitId::Cu(i, j) => write!(f, "CU_({i},{j})"),
        }
    }
}

impl FromStr for UnitId {
    type Err = Error;

    /// Accepts both display (`CU_(0,3)`, `M-CU_1`) and key (`cu_0_3`, `mcu_1`) forms.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || config_err!("unrecognised unit name {s:?}");
        let t = s.trim();
        let lower = t.to_ascii_lowercase();
        if let Some(k) = lower.strip_prefix("m-cu_").or_else(|| lower.strip_prefix("mcu_")) {
            return k.parse().map(UnitId::Mcu).map_err(|_| bad());
        }
        if let Some(rest) = lower.strip_prefix("cu_") {
            let inner = rest.trim_start_matches('(').trim_end_matches(')');
            let mut parts = inner.split([',', '_']);
            let i = parts.next().and_then(|p| p.trim().parse().ok()).ok_or_else(bad)?;
            let j = parts.next().and_then(|p| p.trim().parse().ok()).ok_or_else(bad)?;
            if parts.next().is_some() {
                return Err(bad());
            }
            return Ok(UnitId::Cu(i, j));
        }
        Err(bad())
    }
}

/// One input block of a unit's channel concatenation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Operand {
    /// The full-resolution input image.
    Image,
    /// Input pyramid level `k` (the image max-pooled `k` times).
    Pyramid(usize),
    /// A unit's output at its own resolution.
    Unit(UnitId),
    /// A unit's output after 2x max pooling.
    Down(UnitId),
    /// A unit's output after the learnable 2x transposed convolution.
    Up(UnitId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitSpec {
    pub id: UnitId,
    /// Concatenated in this order.
    pub operands: Vec<Operand>,
    pub kernels: Vec<usize>,
    /// Every conv layer in the unit has this many output channels.
    pub out_channels: usize,
    /// Activation after the last conv; earlier convs always use ReLU.
    pub final_activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    /// Units in execution order (a valid topological order).
    pub units: Vec<UnitSpec>,
    /// Sources of up-sampled operands with their channel count, in first-use order.
    pub upsamplers: Vec<(UnitId, usize)>,
    pub output: UnitId,
}

/// Units on the outer diagonal from column 3 on also take the earlier
/// same-depth columns `F_(i,1) .. F_(i,j-2)`. Truncated networks (fewer
/// than five scales) keep only the two-operand rule.
fn dense_tip(cfg: &ArchConfig, i: usize, j: usize) -> bool {
    cfg.scales >= 5 && j >= 3 && i + j == cfg.scales - 1
}

impl Topology {
    pub fn build(cfg: &ArchConfig) -> Result<Self> {
        cfg.validate()?;
        let s = cfg.scales;
        let output = UnitId::Cu(0, s - 1);
        let mut units = Vec::new();

        if cfg.feature_pyramid_enabled {
            for k in 1..s {
                units.push(UnitSpec {
                    id: UnitId::Mcu(k),
                    operands: vec![Operand::Pyramid(k)],
                    kernels: cfg.mcu_kernels.clone(),
                    out_channels: cfg.mcu_channels(k),
                    final_activation: Activation::Relu,
                });
            }
        }

        let cu = |id: UnitId, operands: Vec<Operand>| {
            let UnitId::Cu(i, _) = id else { unreachable!() };
            let head = id == output;
            UnitSpec {
                id,
                operands,
                kernels: cfg.cu_kernels.clone(),
                out_channels: if head { 1 } else { cfg.cu_channels(i) },
                final_activation: if head { Activation::Sigmoid } else { Activation::Relu },
            }
        };

        units.push(cu(UnitId::Cu(0, 0), vec![Operand::Image]));
        for p in 1..s {
            let mut ops = Vec::with_capacity(3);
            if cfg.feature_pyramid_enabled {
                ops.push(Operand::Unit(UnitId::Mcu(p)));
            }
            if cfg.input_pyramid_enabled {
                ops.push(Operand::Pyramid(p));
            }
            ops.push(Operand::Down(UnitId::Cu(p - 1, 0)));
            units.push(cu(UnitId::Cu(p, 0), ops));
        }

        match cfg.connection_mode {
            ConnectionMode::Nested => {
                for j in 1..s {
                    for i in 0..s - j {
                        let mut ops = vec![
                            Operand::Unit(UnitId::Cu(i, j - 1)),
                            Operand::Up(UnitId::Cu(i + 1, j - 1)),
                        ];
                        if dense_tip(cfg, i, j) {
                            ops.extend((1..=j - 2).map(|m| Operand::Unit(UnitId::Cu(i, m))));
                        }
                        units.push(cu(UnitId::Cu(i, j), ops));
                    }
                }
            }
            ConnectionMode::PlainEncoderDecoder | ConnectionMode::Skip => {
                for i in (0..s - 1).rev() {
                    let j = s - 1 - i;
                    let deeper = UnitId::Cu(i + 1, j - 1);
                    let ops = if cfg.connection_mode == ConnectionMode::Skip {
                        vec![Operand::Unit(UnitId::Cu(i, 0)), Operand::Up(deeper)]
                    } else {
                        vec![Operand::Up(deeper)]
                    };
                    units.push(cu(UnitId::Cu(i, j), ops));
                }
            }
        }

        let mut topo = Topology {
            units,
            upsamplers: Vec::new(),
            output,
        };
        for u in &topo.units {
            for op in &u.operands {
                if let Operand::Up(src) = *op {
                    if !topo.upsamplers.iter().any(|(s, _)| *s == src) {
                        let c = topo.out_channels_of(src)?;
                        topo.upsamplers.push((src, c));
                    }
                }
            }
        }
        Ok(topo)
    }

    pub fn unit(&self, id: UnitId) -> Result<&UnitSpec> {
        self.units
            .iter()
            .find(|u| u.id == id)
            .ok_or_else(|| config_err!("unit {id} does not exist in this network"))
    }

    pub fn contains(&self, id: UnitId) -> bool {
        self.units.iter().any(|u| u.id == id)
    }

    fn out_channels_of(&self, id: UnitId) -> Result<usize> {
        Ok(self.unit(id)?.out_channels)
    }

    /// Channel count of an operand.
    pub fn operand_channels(&self, op: Operand) -> Result<usize> {
        match op {
            Operand::Image | Operand::Pyramid(_) => Ok(3),
            Operand::Unit(u) | Operand::Down(u) | Operand::Up(u) => self.out_channels_of(u),
        }
    }

    /// Resolution level of an operand.
    pub fn operand_level(&self, op: Operand) -> usize {
        match op {
            Operand::Image => 0,
            Operand::Pyramid(k) => k,
            Operand::Unit(u) => u.level(),
            Operand::Down(u) => u.level() + 1,
            Operand::Up(u) => u.level().saturating_sub(1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_unit_names() {
        assert_eq!("CU_(0,3)".parse::<UnitId>().unwrap(), UnitId::Cu(0, 3));
        assert_eq!("cu_2_1".parse::<UnitId>().unwrap(), UnitId::Cu(2, 1));
        assert_eq!("M-CU_4".parse::<UnitId>().unwrap(), UnitId::Mcu(4));
        assert_eq!("mcu_1".parse::<UnitId>().unwrap(), UnitId::Mcu(1));
        assert!("conv".parse::<UnitId>().is_err());
        assert!("cu_1".parse::<UnitId>().is_err());
        for id in [UnitId::Cu(3, 1), UnitId::Mcu(2)] {
            assert_eq!(id.to_string().parse::<UnitId>().unwrap(), id);
            assert_eq!(id.key().parse::<UnitId>().unwrap(), id);
        }
    }

    #[test]
    fn default_triangle() {
        let t = Topology::build(&ArchConfig::default()).unwrap();
        let cus: Vec<_> = t.units.iter().filter(|u| matches!(u.id, UnitId::Cu(..))).collect();
        assert_eq!(cus.len(), 15);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(t.contains(UnitId::Cu(i, j)), i + j <= 4, "({i},{j})");
            }
        }
        assert_eq!(t.units.iter().filter(|u| matches!(u.id, UnitId::Mcu(_))).count(), 4);
        assert_eq!(
            t.unit(UnitId::Cu(1, 3)).unwrap().operands,
            vec![
                Operand::Unit(UnitId::Cu(1, 2)),
                Operand::Up(UnitId::Cu(2, 2)),
                Operand::Unit(UnitId::Cu(1, 1)),
            ]
        );
        assert_eq!(
            t.unit(UnitId::Cu(0, 4)).unwrap().operands,
            vec![
                Operand::Unit(UnitId::Cu(0, 3)),
                Operand::Up(UnitId::Cu(1, 3)),
                Operand::Unit(UnitId::Cu(0, 1)),
                Operand::Unit(UnitId::Cu(0, 2)),
            ]
        );
        assert_eq!(
            t.unit(UnitId::Cu(0, 3)).unwrap().operands,
            vec![Operand::Unit(UnitId::Cu(0, 2)), Operand::Up(UnitId::Cu(1, 2))]
        );
        assert!(t.unit(UnitId::Cu(3, 2)).is_err());
    }

    #[test]
    fn execution_order_is_topological() {
        for mode in [ConnectionMode::Nested, ConnectionMode::PlainEncoderDecoder, ConnectionMode::Skip] {
            let cfg = ArchConfig {
                connection_mode: mode,
                ..ArchConfig::default()
            };
            let t = Topology::build(&cfg).unwrap();
            for (pos, u) in t.units.iter().enumerate() {
                for op in &u.operands {
                    if let Operand::Unit(d) | Operand::Down(d) | Operand::Up(d) = *op {
                        let dpos = t.units.iter().position(|x| x.id == d).unwrap();
                        assert!(dpos < pos, "{} uses {} before it exists", u.id, d);
                    }
                }
            }
        }
    }
}
