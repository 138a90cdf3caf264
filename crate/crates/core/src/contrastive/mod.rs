//! InfoNCE objectives over an EMA memory bank, with optional within-instance
//! negatives.

mod bank;
mod infonce;
mod loss;

pub use bank::{sample_negatives, MemoryBank};
pub use infonce::{cosine_score, info_nce, info_nce_grad, InfoNceGrad};
pub use loss::{mode_loss, pgcon_loss, wincon_loss, BatchEntry, LossOutput};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Pgcon,
    Wincon,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pgcon" => Ok(LossMode::Pgcon),
            "wincon" => Ok(LossMode::Wincon),
            other => Err(Error::config("loss.mode", format!("unknown mode `{other}` (pgcon|wincon)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Bank negatives per loss term. Zero is accepted as an override for
    /// degenerate datasets; the WIN negatives then carry the contrast.
    pub k: usize,
    pub mode: LossMode,
    pub bank_momentum: f64,
    /// Stop gradients through `z_win`.
    pub detach_win: bool,
    /// Let WINCon run with an empty WIN list (reduces to PGCon).
    pub allow_empty_win: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            alpha: 0.5,
            beta: 0.5,
            k: 200,
            mode: LossMode::Pgcon,
            bank_momentum: 0.5,
            detach_win: false,
            allow_empty_win: false,
        }
    }
}

impl LossConfig {
    /// Checks the ranges; `n` is the dataset size when known.
    pub fn validate(&self, n: Option<usize>) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config("loss.tau", "must be positive"));
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::config("loss.alpha", "alpha and beta must be non-negative"));
        }
        if !(self.bank_momentum > 0.0 && self.bank_momentum < 1.0) {
            return Err(Error::config("loss.bank_momentum", "must lie in (0, 1)"));
        }
        if let Some(n) = n {
            if self.k > n.saturating_sub(1) {
                return Err(Error::config("loss.k", format!("{} negatives requested but only {} other instances", self.k, n.saturating_sub(1))));
            }
        }
        Ok(())
    }
}
