// SPDX-License-Identifier: MIT OR Apache-2.0

//! Parameter tensors and their container naming scheme.
//!
//! | name                          | shape                       | present when          |
//! |-------------------------------|-----------------------------|-----------------------|
//! | `embed`                       | `[vocab_size, d_model]`     | always                |
//! | `pos_embed`                   | `[n_ctx, d_model]`          | `positional = learned`|
//! | `unembed`                     | `[d_model, vocab_size]`     | `!tie_embeddings`     |
//! | `final_norm.gamma`            | `[d_model]`                 | always                |
//! | `layers.{i}.attn_norm.gamma`  | `[d_model]`                 | always                |
//! | `layers.{i}.attn.w_q`         | `[d_model, n_heads*d_head]` | always                |
//! | `layers.{i}.attn.w_k`         | `[d_model, n_kv_heads*d_head]` | always             |
//! | `layers.{i}.attn.w_v`         | `[d_model, n_kv_heads*d_head]` | always             |
//! | `layers.{i}.attn.w_o`         | `[n_heads*d_head, d_model]` | always                |
//! | `layers.{i}.attn.b_{q,k,v}`   | width of the projection     | `attn_bias`           |
//! | `layers.{i}.attn.b_o`         | `[d_model]`                 | `attn_bias`           |
//! | `layers.{i}.mlp_norm.gamma`   | `[d_model]`                 | always                |
//! | `layers.{i}.mlp.w_in`         | `[d_model, d_mlp]`          | always                |
//! | `layers.{i}.mlp.w_gate`       | `[d_model, d_mlp]`          | `gated-gelu`          |
//! | `layers.{i}.mlp.w_out`        | `[d_mlp, d_model]`          | always                |
//!
//! Head `h` owns columns `h*d_head..(h+1)*d_head` of `w_q` and rows
//! `h*d_head..(h+1)*d_head` of `w_o`. KV head `g` owns the same column range
//! (with `g` in place of `h`) of `w_k` and `w_v`.

use std::collections::BTreeMap;

use crate::config::{Activation, ModelConfig, Positional};
use crate::container::{TensorData, TensorMap};
use crate::error::{Error, Result};
use crate::tensor::{all_finite, Tensor2D};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<f32>,
    pub w_q: Tensor2D,
    pub w_k: Tensor2D,
    pub w_v: Tensor2D,
    pub w_o: Tensor2D,
    pub b_q: Option<Vec<f32>>,
    pub b_k: Option<Vec<f32>>,
    pub b_v: Option<Vec<f32>>,
    pub b_o: Option<Vec<f32>>,
    pub mlp_norm: Vec<f32>,
    pub w_in: Tensor2D,
    pub w_gate: Option<Tensor2D>,
    pub w_out: Tensor2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub embed: Tensor2D,
    pub pos_embed: Option<Tensor2D>,
    /// `None` when the embedding matrix is tied.
    pub unembed: Option<Tensor2D>,
    pub final_norm: Vec<f32>,
    pub layers: Vec<LayerWeights>,
}

/// Expected tensor names and shapes for `cfg`.
pub fn expected_shapes(cfg: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    let d = cfg.d_model;
    let mut m = BTreeMap::new();
    m.insert("embed".to_string(), vec![cfg.vocab_size, d]);
    if cfg.positional == Positional::Learned {
        m.insert("pos_embed".to_string(), vec![cfg.n_ctx, d]);
    }
    if !cfg.tie_embeddings {
        m.insert("unembed".to_string(), vec![d, cfg.vocab_size]);
    }
    m.insert("final_norm.gamma".to_string(), vec![d]);
    for i in 0..cfg.n_layers {
        let p = format!("layers.{i}");
        m.insert(format!("{p}.attn_norm.gamma"), vec![d]);
        m.insert(format!("{p}.attn.w_q"), vec![d, cfg.attn_width()]);
        m.insert(format!("{p}.attn.w_k"), vec![d, cfg.kv_width()]);
        m.insert(format!("{p}.attn.w_v"), vec![d, cfg.kv_width()]);
        m.insert(format!("{p}.attn.w_o"), vec![cfg.attn_width(), d]);
        if cfg.attn_bias {
            m.insert(format!("{p}.attn.b_q"), vec![cfg.attn_width()]);
            m.insert(format!("{p}.attn.b_k"), vec![cfg.kv_width()]);
            m.insert(format!("{p}.attn.b_v"), vec![cfg.kv_width()]);
            m.insert(format!("{p}.attn.b_o"), vec![d]);
        }
        m.insert(format!("{p}.mlp_norm.gamma"), vec![d]);
        m.insert(format!("{p}.mlp.w_in"), vec![d, cfg.d_mlp]);
        if cfg.activation == Activation::GatedGelu {
            m.insert(format!("{p}.mlp.w_gate"), vec![d, cfg.d_mlp]);
        }
        m.insert(format!("{p}.mlp.w_out"), vec![cfg.d_mlp, d]);
    }
    m
}

/// Number of tensors a container for `cfg` holds.
pub fn tensor_count(cfg: &ModelConfig) -> usize {
    let per_layer = 8
        + if cfg.attn_bias { 4 } else { 0 }
        + usize::from(cfg.activation == Activation::GatedGelu);
    2 + usize::from(cfg.positional == Positional::Learned)
        + usize::from(!cfg.tie_embeddings)
        + cfg.n_layers * per_layer
}

fn vector(t: TensorData) -> Vec<f32> {
    t.data
}

fn matrix(t: TensorData) -> Tensor2D {
    Tensor2D::new(t.shape[0], t.shape[1], t.data).expect("shape validated")
}

fn mat_entry(name: &str, t: &Tensor2D) -> (String, TensorData) {
    (
        name.to_string(),
        TensorData::new(vec![t.rows(), t.cols()], t.data().to_vec()),
    )
}

fn vec_entry(name: &str, v: &[f32]) -> (String, TensorData) {
    (name.to_string(), TensorData::new(vec![v.len()], v.to_vec()))
}

impl Weights {
    /// Builds weights from a tensor map, requiring exactly the tensors
    /// `cfg` implies, each with its exact shape and finite values.
    pub fn from_tensor_map(cfg: &ModelConfig, mut map: TensorMap) -> Result<Self> {
        let expected = expected_shapes(cfg);
        if let Some(extra) = map.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::UnexpectedTensor(extra.clone()));
        }
        for (name, shape) in &expected {
            let t = map
                .get(name)
                .ok_or_else(|| Error::MissingTensor(name.clone()))?;
            if &t.shape != shape {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape.clone(),
                });
            }
            if !all_finite(&t.data) {
                return Err(Error::NonFiniteWeight(name.clone()));
            }
        }
        let mut take = |name: &str| map.remove(name).expect("presence checked");

        let embed = matrix(take("embed"));
        let pos_embed = (cfg.positional == Positional::Learned).then(|| matrix(take("pos_embed")));
        let unembed = (!cfg.tie_embeddings).then(|| matrix(take("unembed")));
        let final_norm = vector(take("final_norm.gamma"));
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let p = format!("layers.{i}");
            let bias = |take: &mut dyn FnMut(&str) -> TensorData, n: &str| {
                cfg.attn_bias
                    .then(|| vector(take(&format!("{p}.attn.{n}"))))
            };
            let b_q = bias(&mut take, "b_q");
            let b_k = bias(&mut take, "b_k");
            let b_v = bias(&mut take, "b_v");
            let b_o = bias(&mut take, "b_o");
            layers.push(LayerWeights {
                attn_norm: vector(take(&format!("{p}.attn_norm.gamma"))),
                w_q: matrix(take(&format!("{p}.attn.w_q"))),
                w_k: matrix(take(&format!("{p}.attn.w_k"))),
                w_v: matrix(take(&format!("{p}.attn.w_v"))),
                w_o: matrix(take(&format!("{p}.attn.w_o"))),
                b_q,
                b_k,
                b_v,
                b_o,
                mlp_norm: vector(take(&format!("{p}.mlp_norm.gamma"))),
                w_in: matrix(take(&format!("{p}.mlp.w_in"))),
                w_gate: (cfg.activation == Activation::GatedGelu)
                    .then(|| matrix(take(&format!("{p}.mlp.w_gate")))),
                w_out: matrix(take(&format!("{p}.mlp.w_out"))),
            });
        }
        Ok(Self {
            embed,
            pos_embed,
            unembed,
            final_norm,
            layers,
        })
    }

    pub fn to_tensor_map(&self) -> TensorMap {
        let mut m = TensorMap::new();
        m.extend([mat_entry("embed", &self.embed)]);
        if let Some(p) = &self.pos_embed {
            m.extend([mat_entry("pos_embed", p)]);
        }
        if let Some(u) = &self.unembed {
            m.extend([mat_entry("unembed", u)]);
        }
        m.extend([vec_entry("final_norm.gamma", &self.final_norm)]);
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            m.extend([
                vec_entry(&format!("{p}.attn_norm.gamma"), &l.attn_norm),
                mat_entry(&format!("{p}.attn.w_q"), &l.w_q),
                mat_entry(&format!("{p}.attn.w_k"), &l.w_k),
                mat_entry(&format!("{p}.attn.w_v"), &l.w_v),
                mat_entry(&format!("{p}.attn.w_o"), &l.w_o),
                vec_entry(&format!("{p}.mlp_norm.gamma"), &l.mlp_norm),
                mat_entry(&format!("{p}.mlp.w_in"), &l.w_in),
                mat_entry(&format!("{p}.mlp.w_out"), &l.w_out),
            ]);
            for (n, b) in [
                ("b_q", &l.b_q),
                ("b_k", &l.b_k),
                ("b_v", &l.b_v),
                ("b_o", &l.b_o),
            ] {
                if let Some(b) = b {
                    m.extend([vec_entry(&format!("{p}.attn.{n}"), b)]);
                }
            }
            if let Some(g) = &l.w_gate {
                m.extend([mat_entry(&format!("{p}.mlp.w_gate"), g)]);
            }
        }
        m
    }

    /// Checks that every tensor matches `cfg`.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        Self::from_tensor_map(cfg, self.to_tensor_map()).map(|_| ())
    }

    /// Unembedding direction of token `id`, length `d_model`.
    pub fn unembed_column(&self, id: usize) -> Vec<f32> {
        match &self.unembed {
            Some(u) => u.column(id),
            None => self.embed.row(id).to_vec(),
        }
    }

    /// Rows of `W_O` belonging to `head`: `d_head × d_model`.
    pub fn w_o_slice(&self, cfg: &ModelConfig, layer: usize, head: usize) -> Tensor2D {
        self.layers[layer]
            .w_o
            .row_block(head * cfg.d_head, cfg.d_head)
    }
}
