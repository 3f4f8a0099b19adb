use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pooling mechanism of an encoder layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArchKind {
    /// Post-norm reference encoder with softmax attention.
    Bert,
    /// Modified encoder: softmax attention with pre-residual normalization.
    Mte,
    /// Logits standardized along the sequence with trainable scalar gain/bias.
    Nap,
    /// Raw logits as weights, scaled by `1/sqrt(N)` and passed through GELU.
    Non,
    /// Sum over the sequence, broadcast back to every position.
    Sum,
    /// Coordinatewise max over the sequence, broadcast back.
    Max,
}

impl ArchKind {
    pub const ALL: [ArchKind; 6] = [ArchKind::Bert, ArchKind::Mte, ArchKind::Nap, ArchKind::Non, ArchKind::Sum, ArchKind::Max];

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Bert => "bert",
            ArchKind::Mte => "mte",
            ArchKind::Nap => "nap",
            ArchKind::Non => "non",
            ArchKind::Sum => "sum",
            ArchKind::Max => "max",
        }
    }

    pub fn is_attention(self) -> bool {
        !matches!(self, ArchKind::Sum | ArchKind::Max)
    }
}

/// Architecture kind plus the switches that walk from the BERT reference to
/// the modified encoder one change at a time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ArchVariant {
    pub kind: ArchKind,
    pub use_warmup: bool,
    pub use_grad_clip: bool,
    pub pre_residual_norm: bool,
    pub extra_gelu: bool,
}

/// Names of the cumulative ablation steps starting from `bert`.
pub const LADDER: [&str; 5] = ["bert", "bert/no-warmup", "bert/no-clip", "bert/normalize", "bert/gelu"];

impl ArchVariant {
    pub fn of(kind: ArchKind) -> Self {
        let bert = kind == ArchKind::Bert;
        ArchVariant { kind, use_warmup: bert, use_grad_clip: bert, pre_residual_norm: !bert, extra_gelu: !bert }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != ArchKind::Bert && *self != ArchVariant::of(self.kind) {
            return Err(Error::config(format!(
                "ablation flags can only be changed on the bert variant, not {}",
                self.kind.name()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for ArchVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.kind != ArchKind::Bert || *self == ArchVariant::of(ArchKind::Bert) {
            return f.write_str(self.kind.name());
        }
        for (i, name) in LADDER.iter().enumerate().skip(1) {
            if *self == ladder_step(i) {
                return f.write_str(name);
            }
        }
        write!(
            f,
            "bert[warmup={},clip={},prenorm={},gelu={}]",
            self.use_warmup, self.use_grad_clip, self.pre_residual_norm, self.extra_gelu
        )
    }
}

fn ladder_step(i: usize) -> ArchVariant {
    ArchVariant {
        kind: ArchKind::Bert,
        use_warmup: i < 1,
        use_grad_clip: i < 2,
        pre_residual_norm: i >= 3,
        extra_gelu: i >= 4,
    }
}

impl FromStr for ArchVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(i) = LADDER.iter().position(|&n| n == s) {
            return Ok(ladder_step(i));
        }
        ArchKind::ALL
            .iter()
            .find(|k| k.name() == s)
            .map(|&k| ArchVariant::of(k))
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown architecture {s:?} (expected one of bert, mte, nap, non, sum, max, {})",
                    LADDER[1..].join(", ")
                ))
            })
    }
}

impl Serialize for ArchVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ArchVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Output head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// One logit per position; softmax runs over the sequence.
    PerToken,
    /// Affine map from the position-0 embedding to `n_max` position logits.
    FirstToken,
    /// Affine map from the position-0 embedding to `vocab` class logits.
    Mode,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::config(format!("unknown precision {s:?} (expected f32 or f64)"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: ArchVariant,
    /// Model dimension.
    pub d: usize,
    /// Attention heads.
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Encoder layers.
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// Longest supported sequence; sizes the positional table and the
    /// first-token head.
    pub n_max: usize,
    /// Vocabulary size.
    pub vocab: usize,
    pub head: HeadKind,
    #[serde(default = "default_true")]
    pub positional: bool,
    #[serde(default)]
    pub dropout: f64,
}

fn default_heads() -> usize {
    4
}

fn default_layers() -> usize {
    2
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    /// Defaults used throughout: `M = 4`, `L = 2`, positional embeddings on,
    /// no dropout.
    pub fn new(arch: ArchVariant, d: usize, n_max: usize, vocab: usize, head: HeadKind) -> Self {
        ModelConfig {
            arch,
            d,
            heads: default_heads(),
            layers: default_layers(),
            n_max,
            vocab,
            head,
            positional: true,
            dropout: 0.0,
        }
    }

    pub fn ffn_hidden(&self) -> usize {
        if self.arch.kind.is_attention() {
            4 * self.d
        } else {
            6 * self.d
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let positive = [("d", self.d), ("layers", self.layers), ("n_max", self.n_max), ("vocab", self.vocab)];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.arch.kind.is_attention() && (self.heads == 0 || !self.d.is_multiple_of(self.heads)) {
            return Err(Error::config(format!(
                "model dimension {} is not divisible by {} heads",
                self.d, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Number of trainable scalars, counted in closed form.
    pub fn param_count(&self) -> usize {
        let (d, h, k) = (self.d, self.ffn_hidden(), self.arch.kind);
        let mut n = self.vocab * d + 2 * d;
        if self.positional {
            n += self.n_max * d;
        }
        let mut layer = 2 * d * h + h + d;
        if k.is_attention() {
            layer += 4 * (d * d + d);
        }
        if k == ArchKind::Nap {
            layer += 2 * self.heads;
        }
        layer += if self.arch.pre_residual_norm {
            let pool_norm = if k == ArchKind::Non { 0 } else { 2 * d };
            pool_norm + 2 * d + 2 * h + 2 * d
        } else {
            4 * d
        };
        n += self.layers * layer;
        n += match self.head {
            HeadKind::PerToken => d + 1,
            HeadKind::FirstToken => (d + 1) * self.n_max,
            HeadKind::Mode => (d + 1) * self.vocab,
        };
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for name in ["bert", "mte", "nap", "non", "sum", "max", "bert/no-warmup", "bert/no-clip", "bert/normalize", "bert/gelu"] {
            let v: ArchVariant = name.parse().unwrap();
            assert_eq!(v.to_string(), name);
        }
        assert!("transformer".parse::<ArchVariant>().unwrap_err().is_config());
    }

    #[test]
    fn ladder_is_cumulative() {
        let end: ArchVariant = "bert/gelu".parse().unwrap();
        assert!(!end.use_warmup && !end.use_grad_clip && end.pre_residual_norm && end.extra_gelu);
        let clip: ArchVariant = "bert/no-clip".parse().unwrap();
        assert!(!clip.use_warmup && !clip.use_grad_clip && !clip.pre_residual_norm);
    }

    #[test]
    fn flags_only_vary_on_bert() {
        let mut v = ArchVariant::of(ArchKind::Nap);
        assert!(v.validate().is_ok());
        v.use_warmup = true;
        assert!(v.validate().unwrap_err().is_config());
    }

    #[test]
    fn head_dimension_is_d_over_m() {
        let c = ModelConfig::new(ArchVariant::of(ArchKind::Nap), 128, 128, 100, HeadKind::PerToken);
        assert_eq!(c.head_dim(), 32);
        let mut bad = c.clone();
        bad.heads = 3;
        assert!(bad.validate().unwrap_err().is_config());
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let ok = r#"{"arch":"nap","d":8,"n_max":4,"vocab":10,"head":"per_token"}"#;
        let c: ModelConfig = serde_json::from_str(ok).unwrap();
        assert_eq!((c.heads, c.layers, c.positional), (4, 2, true));
        let bad = r#"{"arch":"nap","d":8,"n_max":4,"vocab":10,"head":"per_token","colour":1}"#;
        assert!(serde_json::from_str::<ModelConfig>(bad).is_err());
    }
}
