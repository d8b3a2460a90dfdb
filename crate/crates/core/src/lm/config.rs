use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Shape of the decoder. Defaults are desk-scale: minutes of CPU training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub context_length: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            model_dim: 64,
            heads: 4,
            ffn_dim: 256,
            context_length: 64,
            vocab_size: 8000,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.model_dim == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return bad("layers, model_dim, heads and ffn_dim must be positive".into());
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            ));
        }
        if self.context_length < 32 {
            return bad(format!("context_length {} below 32", self.context_length));
        }
        if self.vocab_size < 4 {
            return bad(format!("vocab_size {} below 4", self.vocab_size));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "layers = {}", self.layers);
        let _ = writeln!(s, "model_dim = {}", self.model_dim);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "ffn_dim = {}", self.ffn_dim);
        let _ = writeln!(s, "context_length = {}", self.context_length);
        let _ = writeln!(s, "vocab_size = {}", self.vocab_size);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        fn get<T: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
            kv.get(key)
                .ok_or_else(|| Error::Config(format!("missing key `{key}`")))?
                .parse()
                .map_err(|_| Error::Config(format!("bad value for `{key}`")))
        }
        let cfg = Self {
            layers: get(&kv, "layers")?,
            model_dim: get(&kv, "model_dim")?,
            heads: get(&kv, "heads")?,
            ffn_dim: get(&kv, "ffn_dim")?,
            context_length: get(&kv, "context_length")?,
            vocab_size: get(&kv, "vocab_size")?,
            seed: get(&kv, "seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parse `key = value` lines. `#` starts a comment line; blank lines are
/// ignored; later keys override earlier ones.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip_and_validation() {
        let cfg = ModelConfig {
            vocab_size: 123,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        let bad = ModelConfig {
            heads: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let short = ModelConfig {
            context_length: 16,
            ..Default::default()
        };
        assert!(short.validate().is_err());
        assert!(ModelConfig::from_text("layers = 2\n").is_err());
    }
}
