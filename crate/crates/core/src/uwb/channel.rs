use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::UwbError;

/// Radio channel parameters as they appear in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    /// Ranging noise standard deviation, meters.
    pub noise_sigma: f64,
    /// Constant ranging bias, meters.
    pub bias: f64,
    /// Independent loss probability per message.
    pub loss_prob: f64,
    pub max_range: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            noise_sigma: 0.05,
            bias: 0.0,
            loss_prob: 0.01,
            max_range: 60.0,
        }
    }
}

impl ChannelParams {
    /// Returns the offending field name and a message on failure.
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(("noise_sigma", format!("must be finite and >= 0, got {}", self.noise_sigma)));
        }
        if !self.bias.is_finite() {
            return Err(("bias", format!("must be finite, got {}", self.bias)));
        }
        if !(0.0..1.0).contains(&self.loss_prob) {
            return Err(("loss_prob", format!("must be in [0, 1), got {}", self.loss_prob)));
        }
        if !(self.max_range.is_finite() && self.max_range > 0.0) {
            return Err(("max_range", format!("must be finite and > 0, got {}", self.max_range)));
        }
        Ok(())
    }
}

/// Stochastic radio channel owned by one scenario. Every random draw comes
/// from a single seeded stream, so the same seed and call sequence always
/// reproduce the same losses and noise.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    params: ChannelParams,
    rng: ChaCha8Rng,
    blocked: HashSet<(String, String)>,
}

impl ChannelModel {
    pub fn new(params: ChannelParams, seed: u64) -> Result<Self, UwbError> {
        params
            .check()
            .map_err(|(field, msg)| UwbError::InvalidChannel(format!("{field}: {msg}")))?;
        Ok(Self {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            blocked: HashSet::new(),
        })
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    /// Forces every message from `src` to `dst` to be lost.
    pub fn block_link(&mut self, src: &str, dst: &str) {
        self.blocked.insert((src.to_string(), dst.to_string()));
    }

    pub fn unblock_link(&mut self, src: &str, dst: &str) {
        self.blocked.remove(&(src.to_string(), dst.to_string()));
    }

    /// Draws one loss decision for a message from `src` to `dst`.
    pub fn message_lost(&mut self, src: &str, dst: &str) -> bool {
        let u: f64 = self.rng.gen();
        u < self.params.loss_prob || self.blocked.contains(&(src.to_string(), dst.to_string()))
    }

    /// Draws one ranging error (bias plus Gaussian noise), meters.
    pub(crate) fn range_error(&mut self) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        self.params.bias + self.params.noise_sigma * z
    }
}
