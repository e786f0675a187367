use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_rope_theta() -> f64 {
    10_000.0
}

fn default_norm_eps() -> f64 {
    1e-5
}

/// Architecture hyperparameters of the decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    #[serde(default = "default_rope_theta")]
    pub rope_theta: f64,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
    /// When set, logits use the transposed embedding and no `lm_head` tensor exists.
    #[serde(default)]
    pub tied_lm_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            vocab_size: 544,
            max_seq_len: 128,
            rope_theta: default_rope_theta(),
            norm_eps: default_norm_eps(),
            tied_lm_head: false,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return fail("layer count and widths must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.head_dim() % 2 != 0 {
            return fail(format!("head_dim {} must be even for rotary pairing", self.head_dim()));
        }
        if self.vocab_size < 2 {
            return fail("vocab_size must be at least 2".into());
        }
        if self.max_seq_len < 2 {
            return fail("max_seq_len must be at least 2".into());
        }
        if !(self.norm_eps > 0.0) || !(self.rope_theta > 0.0) {
            return fail("norm_eps and rope_theta must be positive".into());
        }
        Ok(())
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let per_layer = 4 * d * d + 3 * d * self.d_ff + 2 * d;
        let lm_head = if self.tied_lm_head { 0 } else { self.vocab_size * d };
        self.n_layers * per_layer + d + self.vocab_size * d + lm_head
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_head_split() {
        let cfg = ModelConfig { n_heads: 3, ..ModelConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ModelConfig { d_model: 12, n_heads: 4, ..ModelConfig::default() };
        assert!(cfg.validate().is_err(), "odd head_dim must be rejected");
        let cfg = ModelConfig { vocab_size: 1, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn closed_form_count_for_reference_shape() {
        let cfg = ModelConfig { vocab_size: 512, ..ModelConfig::default() };
        assert_eq!(cfg.param_count(), 4 * (4 * 64 * 64 + 3 * 64 * 256 + 2 * 64) + 64 + 2 * 512 * 64);
        assert_eq!(cfg.param_count(), 328_256);
    }
}
