use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

/// Reserved end-of-sequence token.
pub const EOS: u32 = 0;

/// Shape and seed of a [`ToyDecoder`](super::ToyDecoder).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Width of the FFN intermediate layer, i.e. the down projection's input.
    pub d_ffn: usize,
    pub max_seq_len: usize,
    pub rng_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            d_ffn: 256,
            max_seq_len: 128,
            rng_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ffn", self.d_ffn),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return usage(format!("{name} must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return usage(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_ffn < self.d_model {
            return usage(format!("d_ffn {} must be at least d_model {}", self.d_ffn, self.d_model));
        }
        if self.max_seq_len < 2 {
            return usage("max_seq_len must be at least 2");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Maps a 1-based layer ordinal from a reference depth onto this model's
    /// 0-based layer index, rounding to the nearest valid layer. E.g. the 27th
    /// of 32 layers becomes the 3rd of 4, index 2.
    pub fn scaled_layer(&self, reference_ordinal: usize, reference_depth: usize) -> usize {
        let scaled = reference_ordinal as f64 * self.n_layers as f64 / reference_depth as f64;
        (scaled.round() as usize).clamp(1, self.n_layers) - 1
    }

    /// Default GRACE / A-GRACE adapter layer (27 of 32).
    pub fn grace_layer(&self) -> usize {
        self.scaled_layer(27, 32)
    }

    /// Default FT-L layer (21 of 32).
    pub fn ftl_layer(&self) -> usize {
        self.scaled_layer(21, 32)
    }

    /// Default rank-one edit layer (5 of 32).
    pub fn rome_layer(&self) -> usize {
        self.scaled_layer(5, 32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let base = ModelConfig::default();
        assert!(ModelConfig { n_heads: 3, ..base }.validate().is_err());
        assert!(ModelConfig { d_ffn: 32, ..base }.validate().is_err());
        assert!(ModelConfig { max_seq_len: 1, ..base }.validate().is_err());
        assert!(ModelConfig { vocab_size: 0, ..base }.validate().is_err());
    }

    #[test]
    fn layer_scaling() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.grace_layer(), 2);
        assert_eq!(cfg.ftl_layer(), 2);
        assert_eq!(cfg.rome_layer(), 0);
        let deep = ModelConfig { n_layers: 32, ..cfg };
        assert_eq!(deep.grace_layer(), 26);
        assert_eq!(deep.ftl_layer(), 20);
        assert_eq!(deep.rome_layer(), 4);
        let shallow = ModelConfig { n_layers: 1, ..cfg };
        assert_eq!(shallow.grace_layer(), 0);
    }
}
