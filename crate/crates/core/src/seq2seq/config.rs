use super::Seq2SeqError;

/// Transformer hyperparameters shared by every branch of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub feedforward_dim: usize,
    /// Upper bound on sequence length, BOS and EOS included.
    pub max_sequence_length: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            model_dim: 128,
            heads: 4,
            feedforward_dim: 512,
            max_sequence_length: 256,
            dropout_rate: 0.1,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), Seq2SeqError> {
        let bad = |msg: String| Err(Seq2SeqError::InvalidConfig(msg));
        if self.layers == 0 || self.model_dim == 0 || self.heads == 0 || self.feedforward_dim == 0 {
            return bad("layers, model_dim, heads and feedforward_dim must be >= 1".into());
        }
        if self.max_sequence_length < 2 {
            return bad("max_sequence_length must leave room for BOS and EOS".into());
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    /// Stable `key=value` lines, also embedded in checkpoints.
    pub fn to_kv(&self) -> String {
        format!(
            "layers={}\nmodel_dim={}\nheads={}\nfeedforward_dim={}\nmax_sequence_length={}\ndropout_rate={}\nseed={}\n",
            self.layers,
            self.model_dim,
            self.heads,
            self.feedforward_dim,
            self.max_sequence_length,
            self.dropout_rate,
            self.seed
        )
    }

    pub fn from_kv(text: &str) -> Option<Self> {
        let mut cfg = Self::default();
        let mut seen = 0;
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (key, value) = line.split_once('=')?;
            match key {
                "layers" => cfg.layers = value.parse().ok()?,
                "model_dim" => cfg.model_dim = value.parse().ok()?,
                "heads" => cfg.heads = value.parse().ok()?,
                "feedforward_dim" => cfg.feedforward_dim = value.parse().ok()?,
                "max_sequence_length" => cfg.max_sequence_length = value.parse().ok()?,
                "dropout_rate" => cfg.dropout_rate = value.parse().ok()?,
                "seed" => cfg.seed = value.parse().ok()?,
                _ => return None,
            }
            seen += 1;
        }
        (seen == 7).then_some(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let cfg = ModelConfig { heads: 3, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { dropout_rate: 1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { layers: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn kv_roundtrip() {
        let cfg = ModelConfig { dropout_rate: 0.25, seed: 99, ..Default::default() };
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()), Some(cfg));
        assert_eq!(ModelConfig::from_kv("layers=2\n"), None);
    }
}
