// SPDX-License-Identifier: MIT OR Apache-2.0

//! Architecture hyperparameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Epsilon used by every normalization layer.
pub const NORM_EPS: f32 = 1e-6;

/// Base frequency for rotary position embeddings.
pub const ROPE_THETA: f32 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Rms,
    Layernorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Gelu,
    GatedGelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positional {
    Learned,
    Rotary,
    None,
}

/// Decoder-only pre-norm transformer shape.
///
/// Serialized as a flat JSON object. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    /// Longest sequence the model accepts; sizes the learned position table.
    pub n_ctx: usize,
    pub norm_kind: NormKind,
    pub activation: Activation,
    pub positional: Positional,
    #[serde(default)]
    pub logit_softcap: Option<f32>,
    pub tie_embeddings: bool,
    /// Q/K/V/O projections carry bias vectors.
    #[serde(default)]
    pub attn_bias: bool,
}

impl ModelConfig {
    /// The 2B checkpoint the toolkit was designed around: 26 layers of
    /// 8 query heads (208 heads) and 9216 MLP neurons per layer.
    pub fn full_scale() -> Self {
        Self {
            n_layers: 26,
            n_heads: 8,
            n_kv_heads: 4,
            d_model: 2304,
            d_head: 256,
            d_mlp: 9216,
            vocab_size: 256_000,
            n_ctx: 8192,
            norm_kind: NormKind::Rms,
            activation: Activation::GatedGelu,
            positional: Positional::Rotary,
            logit_softcap: Some(30.0),
            tie_embeddings: true,
            attn_bias: false,
        }
    }

    /// Width of the concatenated head outputs consumed by `W_O`.
    #[inline]
    pub fn attn_width(&self) -> usize {
        self.n_heads * self.d_head
    }

    #[inline]
    pub fn kv_width(&self) -> usize {
        self.n_kv_heads * self.d_head
    }

    /// Query heads sharing one key/value head.
    #[inline]
    pub fn group_size(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }

    /// KV head feeding query head `head`.
    #[inline]
    pub fn kv_head_of(&self, head: usize) -> usize {
        head / self.group_size()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, v) in [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("d_mlp", self.d_mlp),
            ("vocab_size", self.vocab_size),
            ("n_ctx", self.n_ctx),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.n_heads % self.n_kv_heads != 0 {
            return bad(format!(
                "n_kv_heads ({}) must divide n_heads ({})",
                self.n_kv_heads, self.n_heads
            ));
        }
        if self.positional == Positional::Rotary && self.d_head % 2 != 0 {
            return bad(format!(
                "rotary embeddings need an even d_head, got {}",
                self.d_head
            ));
        }
        if let Some(cap) = self.logit_softcap {
            if !(cap.is_finite() && cap > 0.0) {
                return bad(format!("logit_softcap must be positive, got {cap}"));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

/// One attention head, addressed as `L{layer}H{head}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeadRef {
    pub layer: usize,
    pub head: usize,
}

impl HeadRef {
    pub const fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }

    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.layer >= cfg.n_layers || self.head >= cfg.n_heads {
            return Err(Error::InvalidIntervention(format!(
                "{self} is outside a model with {} layers of {} heads",
                cfg.n_layers, cfg.n_heads
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for HeadRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}H{}", self.layer, self.head)
    }
}
