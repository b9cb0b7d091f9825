use serde::{Deserialize, Serialize};

use crate::error::{config_err, data_err};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::Result;

/// Clip bounds for the cross-entropy: predictions are clamped to `[rho, mu]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub rho: f64,
    pub mu: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            rho: 1e-15,
            mu: 1.0 - 1e-15,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.rho && self.rho < self.mu && self.mu < 1.0) {
            return Err(config_err!("need 0 < rho < mu < 1, got rho={} mu={}", self.rho, self.mu));
        }
        Ok(())
    }
}

fn check_binary<T: Scalar>(labels: &[T]) -> Result<()> {
    match labels.iter().find(|&&y| y != T::ZERO && y != T::ONE) {
        Some(y) => Err(data_err!("labels must be 0 or 1, found {:?}", y)),
        None => Ok(()),
    }
}

/// Mean clipped binary cross-entropy of predictions `z` against binary labels.
pub fn clipped_bce<T: Scalar>(tape: &mut Tape<T>, z: Var, labels: &Tensor<T>, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    check_binary(labels.data())?;
    tape.clipped_bce(z, labels.clone(), cfg.rho, cfg.mu)
}

/// Same loss on plain slices, without a tape.
pub fn clipped_bce_value(z: &[f64], labels: &[f64], cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    check_binary(labels)?;
    if z.len() != labels.len() {
        return Err(data_err!("{} predictions vs {} labels", z.len(), labels.len()));
    }
    let total: f64 = z
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(cfg.rho, cfg.mu);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / z.len().max(1) as f64)
}
