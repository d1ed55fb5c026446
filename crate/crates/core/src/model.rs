// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pre-norm decoder-only transformer with a full activation cache.
//!
//! Per layer:
//!
//! ```text
//! h     = norm(x) * attn_gamma
//! z_h   = softmax(causal(q_h k_gᵀ / sqrt(d_head))) (alpha_h * v_g)   for each query head h
//! x    += concat(z) W_O (+ b_O)
//! h'    = norm(x) * mlp_gamma
//! a     = gelu(h' W_in)                 or gelu(h' W_gate) * (h' W_in)
//! x    += a W_out
//! ```
//!
//! and finally `logits = (norm(x) * final_gamma) W_U`, optionally
//! soft-capped as `cap * tanh(logits / cap)`.
//!
//! The final-norm scale applied at each position is recorded in the cache.
//! Treating it as a constant makes the final projection linear in the
//! residual, so per-component logit contributions sum exactly to the
//! pre-softcap logits.

use std::path::Path;

use crate::config::{Activation, ModelConfig, NormKind, Positional, NORM_EPS, ROPE_THETA};
use crate::container;
use crate::error::{Error, Result};
use crate::intervention::{apply_scaling, InterventionSpec};
use crate::tensor::{
    add_assign, check_finite, dot, gelu, layernorm, layernorm_scale, matmul, matmul_bt, rms_scale,
    rmsnorm, softmax_row, vecmat, Tensor2D,
};
use crate::weights::Weights;

/// Everything recorded during one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCache {
    pub tokens: Vec<u32>,
    /// Token embedding plus positional embedding, `T × d_model`.
    pub embed: Tensor2D,
    /// Residual stream entering each layer.
    pub resid_in: Vec<Tensor2D>,
    /// Attention-block output added to the residual, per layer.
    pub attn_out: Vec<Tensor2D>,
    /// MLP-block output added to the residual, per layer.
    pub mlp_out: Vec<Tensor2D>,
    /// Head outputs before `W_O`, `[layer][head]`, each `T × d_head`.
    pub z: Vec<Vec<Tensor2D>>,
    /// Attention weights, `[layer][head]`, each `T × T` (zero above the diagonal).
    pub pattern: Vec<Vec<Tensor2D>>,
    /// Post-nonlinearity MLP activations per layer, `T × d_mlp`.
    pub mlp_act: Vec<Tensor2D>,
    pub final_resid: Tensor2D,
    /// Scale the final norm multiplied each position by.
    pub final_scale: Vec<f32>,
    /// Logits before softcapping; `None` when the model has no softcap
    /// (they then equal the returned logits).
    pub pre_softcap_logits: Option<Tensor2D>,
    /// Interventions active during the pass.
    pub interventions: Vec<InterventionSpec>,
}

impl ActivationCache {
    pub fn seq_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn n_layers(&self) -> usize {
        self.resid_in.len()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `T × vocab_size`.
    pub logits: Tensor2D,
    pub cache: ActivationCache,
}

impl ForwardOutput {
    /// Pre-softcap logits (the ones attribution decomposes).
    pub fn pre_softcap_logits(&self) -> &Tensor2D {
        self.cache
            .pre_softcap_logits
            .as_ref()
            .unwrap_or(&self.logits)
    }
}

/// A validated config together with its weights.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    weights: Weights,
}

struct Pass {
    logits: Tensor2D,
    cache: Option<ActivationCache>,
}

impl Model {
    pub fn new(config: ModelConfig, weights: Weights) -> Result<Self> {
        config.validate()?;
        weights.validate(&config)?;
        Ok(Self { config, weights })
    }

    /// Loads a container and its config, rejecting any tensor the config
    /// does not imply.
    pub fn load(container_path: impl AsRef<Path>, config_path: impl AsRef<Path>) -> Result<Self> {
        let config = ModelConfig::load(config_path)?;
        let tensors = container::read_container(container_path)?;
        let weights = Weights::from_tensor_map(&config, tensors)?;
        Ok(Self { config, weights })
    }

    pub fn save(
        &self,
        container_path: impl AsRef<Path>,
        config_path: impl AsRef<Path>,
    ) -> Result<()> {
        container::write_container(container_path, &self.weights.to_tensor_map())?;
        self.config.save(config_path)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn into_parts(self) -> (ModelConfig, Weights) {
        (self.config, self.weights)
    }

    /// Full forward pass over `tokens`, caching every intermediate.
    pub fn forward(
        &self,
        tokens: &[u32],
        interventions: &[InterventionSpec],
    ) -> Result<ForwardOutput> {
        let pass = self.run(tokens, interventions, true)?;
        Ok(ForwardOutput {
            logits: pass.logits,
            cache: pass.cache.expect("capture requested"),
        })
    }

    /// Logits at the last position only, without building a cache.
    pub fn next_token_logits(
        &self,
        tokens: &[u32],
        interventions: &[InterventionSpec],
    ) -> Result<Vec<f32>> {
        Ok(self.run(tokens, interventions, false)?.logits.into_data())
    }

    /// Greedy decoding: appends the argmax token (lowest id on ties) up to
    /// `max_new` times, recomputing the full forward each step with the same
    /// interventions. Stops before emitting `stop` if it becomes the argmax.
    /// Returns only the generated ids.
    pub fn generate_greedy(
        &self,
        prompt: &[u32],
        max_new: usize,
        interventions: &[InterventionSpec],
        stop: Option<u32>,
    ) -> Result<Vec<u32>> {
        if max_new == 0 {
            return Err(Error::InvalidArgument(
                "generation budget must be at least one token".into(),
            ));
        }
        let mut seq = prompt.to_vec();
        let mut out = Vec::with_capacity(max_new);
        for _ in 0..max_new {
            let logits = self.next_token_logits(&seq, interventions)?;
            let next = argmax_lowest(&logits) as u32;
            if Some(next) == stop {
                break;
            }
            seq.push(next);
            out.push(next);
        }
        Ok(out)
    }

    fn check_inputs(&self, tokens: &[u32], interventions: &[InterventionSpec]) -> Result<()> {
        let cfg = &self.config;
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        if tokens.len() > cfg.n_ctx {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                n_ctx: cfg.n_ctx,
            });
        }
        if let Some(&id) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
        for spec in interventions {
            spec.validate(cfg)?;
        }
        Ok(())
    }

    fn norm_rows(&self, x: &Tensor2D, gamma: &[f32]) -> Result<Tensor2D> {
        let mut out = Tensor2D::zeros(x.rows(), x.cols());
        for p in 0..x.rows() {
            let y = match self.config.norm_kind {
                NormKind::Rms => rmsnorm(x.row(p), gamma, NORM_EPS)?,
                NormKind::Layernorm => layernorm(x.row(p), gamma, NORM_EPS)?,
            };
            out.row_mut(p).copy_from_slice(&y);
        }
        Ok(out)
    }

    fn run(
        &self,
        tokens: &[u32],
        interventions: &[InterventionSpec],
        capture: bool,
    ) -> Result<Pass> {
        self.check_inputs(tokens, interventions)?;
        let cfg = &self.config;
        let w = &self.weights;
        let t_len = tokens.len();
        let d = cfg.d_model;
        let dh = cfg.d_head;
        let inv_sqrt_dh = 1.0 / (dh as f32).sqrt();

        let mut x = Tensor2D::zeros(t_len, d);
        for (p, &tok) in tokens.iter().enumerate() {
            let row = x.row_mut(p);
            row.copy_from_slice(w.embed.row(tok as usize));
            if let Some(pe) = &w.pos_embed {
                add_assign(row, pe.row(p));
            }
        }
        check_finite("embedding", x.data())?;

        let rope = (cfg.positional == Positional::Rotary).then(|| RopeTable::new(t_len, dh));

        let n_layers = cfg.n_layers;
        let mut cache = capture.then(|| ActivationCache {
            tokens: tokens.to_vec(),
            embed: x.clone(),
            resid_in: Vec::with_capacity(n_layers),
            attn_out: Vec::with_capacity(n_layers),
            mlp_out: Vec::with_capacity(n_layers),
            z: Vec::with_capacity(n_layers),
            pattern: Vec::with_capacity(n_layers),
            mlp_act: Vec::with_capacity(n_layers),
            final_resid: Tensor2D::zeros(0, 0),
            final_scale: Vec::new(),
            pre_softcap_logits: None,
            interventions: interventions.to_vec(),
        });

        for (li, lw) in w.layers.iter().enumerate() {
            if let Some(c) = cache.as_mut() {
                c.resid_in.push(x.clone());
            }

            let h = self.norm_rows(&x, &lw.attn_norm)?;
            let mut q = matmul(&h, &lw.w_q)?;
            let mut k = matmul(&h, &lw.w_k)?;
            let mut v = matmul(&h, &lw.w_v)?;
            add_bias(&mut q, lw.b_q.as_deref());
            add_bias(&mut k, lw.b_k.as_deref());
            add_bias(&mut v, lw.b_v.as_deref());
            if let Some(rope) = &rope {
                rope.apply(&mut q, cfg.n_heads, dh);
                rope.apply(&mut k, cfg.n_kv_heads, dh);
            }

            let mut z_cat = Tensor2D::zeros(t_len, cfg.attn_width());
            let mut z_heads = Vec::with_capacity(if capture { cfg.n_heads } else { 0 });
            let mut patterns = Vec::with_capacity(if capture { cfg.n_heads } else { 0 });
            for head in 0..cfg.n_heads {
                let g = cfg.kv_head_of(head);
                let mut v_h = v.col_block(g * dh, dh);
                for spec in interventions.iter().filter(|s| s.targets(li, head)) {
                    v_h = apply_scaling(spec, &v_h);
                }
                let mut pattern = Tensor2D::zeros(t_len, t_len);
                let mut z_h = Tensor2D::zeros(t_len, dh);
                for p in 0..t_len {
                    let q_p = &q.row(p)[head * dh..(head + 1) * dh];
                    let scores: Vec<f32> = (0..=p)
                        .map(|j| dot(q_p, &k.row(j)[g * dh..(g + 1) * dh]) * inv_sqrt_dh)
                        .collect();
                    let probs = softmax_row(&scores)?;
                    let z_row = z_h.row_mut(p);
                    for (j, &a) in probs.iter().enumerate() {
                        for (o, &vv) in z_row.iter_mut().zip(v_h.row(j)) {
                            *o += a * vv;
                        }
                    }
                    pattern.row_mut(p)[..=p].copy_from_slice(&probs);
                }
                check_finite("attention", z_h.data())?;
                for p in 0..t_len {
                    z_cat.row_mut(p)[head * dh..(head + 1) * dh].copy_from_slice(z_h.row(p));
                }
                if capture {
                    z_heads.push(z_h);
                    patterns.push(pattern);
                }
            }
            let mut attn_out = matmul(&z_cat, &lw.w_o)?;
            add_bias(&mut attn_out, lw.b_o.as_deref());
            for p in 0..t_len {
                add_assign(x.row_mut(p), attn_out.row(p));
            }

            let h2 = self.norm_rows(&x, &lw.mlp_norm)?;
            let up = matmul(&h2, &lw.w_in)?;
            let act = match (cfg.activation, &lw.w_gate) {
                (Activation::GatedGelu, Some(w_gate)) => {
                    let gate = matmul(&h2, w_gate)?;
                    let data = gate
                        .data()
                        .iter()
                        .zip(up.data())
                        .map(|(g, u)| gelu(*g) * u)
                        .collect();
                    Tensor2D::new(t_len, cfg.d_mlp, data)?
                }
                _ => {
                    let data = up.data().iter().map(|u| gelu(*u)).collect();
                    Tensor2D::new(t_len, cfg.d_mlp, data)?
                }
            };
            check_finite("mlp activation", act.data())?;
            let mlp_out = matmul(&act, &lw.w_out)?;
            for p in 0..t_len {
                add_assign(x.row_mut(p), mlp_out.row(p));
            }
            check_finite("residual", x.data())?;

            if let Some(c) = cache.as_mut() {
                c.attn_out.push(attn_out);
                c.mlp_out.push(mlp_out);
                c.z.push(z_heads);
                c.pattern.push(patterns);
                c.mlp_act.push(act);
            }
        }

        let final_scale: Vec<f32> = (0..t_len)
            .map(|p| match cfg.norm_kind {
                NormKind::Rms => rms_scale(x.row(p), NORM_EPS),
                NormKind::Layernorm => layernorm_scale(x.row(p), NORM_EPS),
            })
            .collect();

        let logits = if capture {
            let normed = self.norm_rows(&x, &w.final_norm)?;
            self.unembed(&normed)?
        } else {
            let last = Tensor2D::new(1, d, x.row(t_len - 1).to_vec())?;
            let normed = self.norm_rows(&last, &w.final_norm)?;
            self.unembed(&normed)?
        };

        let (logits, pre_softcap) = match cfg.logit_softcap {
            Some(cap) => {
                let data = logits
                    .data()
                    .iter()
                    .map(|l| cap * (l / cap).tanh())
                    .collect();
                let capped = Tensor2D::new(logits.rows(), logits.cols(), data)?;
                (capped, Some(logits))
            }
            None => (logits, None),
        };

        if let Some(c) = cache.as_mut() {
            c.final_resid = x;
            c.final_scale = final_scale;
            c.pre_softcap_logits = pre_softcap;
        }
        Ok(Pass { logits, cache })
    }

    fn unembed(&self, normed: &Tensor2D) -> Result<Tensor2D> {
        match &self.weights.unembed {
            Some(u) => matmul(normed, u),
            None => matmul_bt(normed, &self.weights.embed),
        }
    }

    /// Residual-space contribution of one head at every position:
    /// `z_h × W_O[h]`, `T × d_model`.
    pub fn head_contribution(
        &self,
        cache: &ActivationCache,
        layer: usize,
        head: usize,
    ) -> Result<Tensor2D> {
        let slice = self.weights.w_o_slice(&self.config, layer, head);
        matmul(&cache.z[layer][head], &slice)
    }

    /// Projects one residual-space vector through the final norm (with the
    /// realized scale at `position`) and the unembedding.
    pub fn project_with_frozen_scale(
        &self,
        cache: &ActivationCache,
        position: usize,
        v: &[f32],
    ) -> Result<Vec<f32>> {
        let scaled = frozen_norm(
            &self.config,
            &self.weights.final_norm,
            cache.final_scale[position],
            v,
        );
        match &self.weights.unembed {
            Some(u) => vecmat(&scaled, u),
            None => {
                let t = Tensor2D::new(1, scaled.len(), scaled)?;
                Ok(matmul_bt(&t, &self.weights.embed)?.into_data())
            }
        }
    }
}

/// Applies the final norm as a fixed linear map: centering (layernorm only),
/// multiplication by `scale`, then by `gamma`.
pub fn frozen_norm(cfg: &ModelConfig, gamma: &[f32], scale: f32, v: &[f32]) -> Vec<f32> {
    match cfg.norm_kind {
        NormKind::Rms => v.iter().zip(gamma).map(|(x, g)| x * scale * g).collect(),
        NormKind::Layernorm => {
            let mu = crate::tensor::mean(v);
            v.iter()
                .zip(gamma)
                .map(|(x, g)| (x - mu) * scale * g)
                .collect()
        }
    }
}

fn add_bias(t: &mut Tensor2D, bias: Option<&[f32]>) {
    if let Some(b) = bias {
        for p in 0..t.rows() {
            add_assign(t.row_mut(p), b);
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax_lowest(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Rotate-half rotary embedding: dimension `i` pairs with `i + d_head/2`.
struct RopeTable {
    cos: Vec<f32>,
    sin: Vec<f32>,
    half: usize,
}

impl RopeTable {
    fn new(t_len: usize, d_head: usize) -> Self {
        let half = d_head / 2;
        let mut cos = Vec::with_capacity(t_len * half);
        let mut sin = Vec::with_capacity(t_len * half);
        for p in 0..t_len {
            for i in 0..half {
                let freq = (ROPE_THETA as f64).powf(-2.0 * i as f64 / d_head as f64);
                let angle = p as f64 * freq;
                cos.push(angle.cos() as f32);
                sin.push(angle.sin() as f32);
            }
        }
        Self { cos, sin, half }
    }

    fn apply(&self, t: &mut Tensor2D, n_heads: usize, d_head: usize) {
        let half = self.half;
        for p in 0..t.rows() {
            let cos = &self.cos[p * half..(p + 1) * half];
            let sin = &self.sin[p * half..(p + 1) * half];
            let row = t.row_mut(p);
            for h in 0..n_heads {
                let block = &mut row[h * d_head..(h + 1) * d_head];
                for i in 0..half {
                    let (a, b) = (block[i], block[i + half]);
                    block[i] = a * cos[i] - b * sin[i];
                    block[i + half] = a * sin[i] + b * cos[i];
                }
            }
        }
    }
}
