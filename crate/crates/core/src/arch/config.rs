use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::Result;

/// How the encoder column is joined to the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionMode {
    /// Full triangle of intermediate units `CU_(i,j)`.
    Nested,
    /// Encoder followed by a single decoder chain, no skips.
    PlainEncoderDecoder,
    /// Decoder chain with U-Net style encoder skips at each level.
    Skip,
}

/// Declarative network description.
///
/// `scales` counts resolution levels including full resolution, so the
/// pyramid has `scales - 1` down-sampled levels. M-CU level `k` outputs
/// `mcu_base * 2^k` channels and `CU_(i,j)` outputs `cu_base * 2^i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub scales: usize,
    pub mcu_base: usize,
    pub cu_base: usize,
    pub mcu_kernels: Vec<usize>,
    pub cu_kernels: Vec<usize>,
    pub input_pyramid_enabled: bool,
    pub feature_pyramid_enabled: bool,
    pub connection_mode: ConnectionMode,
    pub input_size: (usize, usize),
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            scales: 5,
            mcu_base: 32,
            cu_base: 64,
            mcu_kernels: vec![7, 5, 3],
            cu_kernels: vec![3, 3],
            input_pyramid_enabled: true,
            feature_pyramid_enabled: true,
            connection_mode: ConnectionMode::Nested,
            input_size: (128, 128),
        }
    }
}

impl ArchConfig {
    /// Three scales, bases 4/8, 32x32 input: small enough to train on a laptop CPU.
    pub fn tiny() -> Self {
        Self {
            scales: 3,
            mcu_base: 4,
            cu_base: 8,
            input_size: (32, 32),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales < 2 {
            return Err(config_err!("scales must be at least 2, got {}", self.scales));
        }
        if self.scales > 16 {
            return Err(config_err!("scales must be at most 16, got {}", self.scales));
        }
        if self.mcu_base == 0 {
            return Err(config_err!("mcu_base must be at least 1"));
        }
        if self.cu_base == 0 {
            return Err(config_err!("cu_base must be at least 1"));
        }
        for (name, kernels) in [("mcu_kernels", &self.mcu_kernels), ("cu_kernels", &self.cu_kernels)] {
            if kernels.is_empty() {
                return Err(config_err!("{name} must not be empty"));
            }
            if let Some(k) = kernels.iter().find(|&&k| k % 2 == 0) {
                return Err(config_err!("{name} must all be odd, got {k}"));
            }
        }
        let div = 1usize << (self.scales - 1);
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(config_err!(
                "input_size {h}x{w} must be positive and divisible by 2^(scales-1) = {div}"
            ));
        }
        Ok(())
    }

    pub fn mcu_channels(&self, k: usize) -> usize {
        self.mcu_base << k
    }

    pub fn cu_channels(&self, i: usize) -> usize {
        self.cu_base << i
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| config_err!("invalid ArchConfig JSON: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ArchConfig::default().validate().unwrap();
        ArchConfig::tiny().validate().unwrap();
    }

    #[test]
    fn violations_are_named() {
        let mut c = ArchConfig::default();
        c.input_size = (120, 128);
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("input_size"), "{e}");

        let mut c = ArchConfig::default();
        c.mcu_kernels = vec![7, 4, 3];
        assert!(c.validate().unwrap_err().to_string().contains("mcu_kernels"));

        let mut c = ArchConfig::default();
        c.scales = 1;
        assert!(c.validate().unwrap_err().to_string().contains("scales"));
    }

    #[test]
    fn json_field_names() {
        let v: serde_json::Value = serde_json::from_str(&ArchConfig::default().to_json()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "connection_mode",
                "cu_base",
                "cu_kernels",
                "feature_pyramid_enabled",
                "input_pyramid_enabled",
                "input_size",
                "mcu_base",
                "mcu_kernels",
                "scales"
            ]
        );
        assert_eq!(v["connection_mode"], "nested");
        let back = ArchConfig::from_json(&ArchConfig::default().to_json()).unwrap();
        assert_eq!(back, ArchConfig::default());
    }
}
