use std::fmt;
use std::str::FromStr;

use super::{ArchConfig, ConnectionMode};
use crate::error::config_err;
use crate::{Error, Result};

/// The named ablation and parameter variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    WoInputPyramid,
    WoFeaturePyramid,
    WoL,
    WoNest,
    WoNestPlus,
    VNet,
    VNetD,
    C8_16,
    C16_32,
    Scales3,
    Scales4,
    SCu,
}

impl Variant {
    pub const ALL: [Variant; 12] = [
        Variant::WoInputPyramid,
        Variant::WoFeaturePyramid,
        Variant::WoL,
        Variant::WoNest,
        Variant::WoNestPlus,
        Variant::VNet,
        Variant::VNetD,
        Variant::C8_16,
        Variant::C16_32,
        Variant::Scales3,
        Variant::Scales4,
        Variant::SCu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::WoInputPyramid => "wo_input_pyramid",
            Variant::WoFeaturePyramid => "wo_feature_pyramid",
            Variant::WoL => "wo_L",
            Variant::WoNest => "wo_nest",
            Variant::WoNestPlus => "wo_nest_plus",
            Variant::VNet => "v_net",
            Variant::VNetD => "v_net_d",
            Variant::C8_16 => "c8_16",
            Variant::C16_32 => "c16_32",
            Variant::Scales3 => "scales3",
            Variant::Scales4 => "scales4",
            Variant::SCu => "s_cu",
        }
    }

    pub fn apply(self, cfg: &ArchConfig) -> ArchConfig {
        let mut c = cfg.clone();
        match self {
            Variant::WoInputPyramid => c.input_pyramid_enabled = false,
            Variant::WoFeaturePyramid => c.feature_pyramid_enabled = false,
            Variant::WoL => {
                c.input_pyramid_enabled = false;
                c.feature_pyramid_enabled = false;
            }
            Variant::WoNest => c.connection_mode = ConnectionMode::PlainEncoderDecoder,
            Variant::WoNestPlus => c.connection_mode = ConnectionMode::Skip,
            Variant::VNet => {
                c = Variant::WoNestPlus.apply(&Variant::WoL.apply(cfg));
            }
            Variant::VNetD => {
                c = Variant::VNet.apply(cfg);
                c.mcu_base *= 2;
                c.cu_base *= 2;
            }
            Variant::C8_16 => {
                c.mcu_base = 8;
                c.cu_base = 16;
            }
            Variant::C16_32 => {
                c.mcu_base = 16;
                c.cu_base = 32;
            }
            Variant::Scales3 => c.scales = 3,
            Variant::Scales4 => c.scales = 4,
            Variant::SCu => c.mcu_kernels = vec![3, 3, 3],
        }
        c
    }

    pub fn valid_names() -> String {
        Variant::ALL.iter().map(|v| v.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| config_err!("unknown variant {s:?}; valid names: {}", Variant::valid_names()))
    }
}

/// Returns `cfg` modified by the named variant; `"none"` returns it unchanged.
pub fn apply_variant(cfg: &ArchConfig, name: &str) -> Result<ArchConfig> {
    if name == "none" || name.is_empty() {
        return Ok(cfg.clone());
    }
    let c = name.parse::<Variant>()?.apply(cfg);
    c.validate()?;
    Ok(c)
}
