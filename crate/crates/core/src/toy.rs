// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small models for tests, demos and invariant checks.
//!
//! [`random_config`] and [`random_weights`] draw seeded random architectures
//! covering every config option. [`copy_head_fixture`] builds a hand-wired
//! two-layer model in which one head copies the instrument noun into the
//! final position, so greedy decoding produces the instrument unless that
//! head's value stream is scaled down.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Activation, HeadRef, ModelConfig, NormKind, Positional};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::suite::{render_prompt, word_level_vocab, PromptItem};
use crate::tensor::Tensor2D;
use crate::tokenizer::{Vocab, EOS};
use crate::weights::{LayerWeights, Weights};

/// Context length of every random toy config.
pub const TOY_N_CTX: usize = 64;

/// Random architecture: 2–4 layers, 2–8 heads, `d_model` 16–64, and a
/// random choice of every structural option.
pub fn random_config(seed: u64, vocab_size: usize) -> ModelConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0f1);
    let n_heads = rng.random_range(2..=8usize);
    let divisors: Vec<usize> = (1..=n_heads).filter(|k| n_heads % k == 0).collect();
    let n_kv_heads = divisors[rng.random_range(0..divisors.len())];
    ModelConfig {
        n_layers: rng.random_range(2..=4),
        n_heads,
        n_kv_heads,
        d_model: rng.random_range(16..=64),
        d_head: 2 * rng.random_range(2..=8usize),
        d_mlp: rng.random_range(8..=64),
        vocab_size,
        n_ctx: TOY_N_CTX,
        norm_kind: if rng.random_bool(0.5) {
            NormKind::Rms
        } else {
            NormKind::Layernorm
        },
        activation: if rng.random_bool(0.5) {
            Activation::Gelu
        } else {
            Activation::GatedGelu
        },
        positional: match rng.random_range(0..3) {
            0 => Positional::Learned,
            1 => Positional::Rotary,
            _ => Positional::None,
        },
        logit_softcap: rng.random_bool(0.5).then(|| rng.random_range(5.0f32..30.0)),
        tie_embeddings: rng.random_bool(0.5),
        attn_bias: rng.random_bool(0.3),
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f32) -> Tensor2D {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0f32..1.0) * scale)
        .collect();
    Tensor2D::new(rows, cols, data).expect("sized by construction")
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, center: f32, spread: f32) -> Vec<f32> {
    (0..n)
        .map(|_| center + rng.random_range(-spread..spread))
        .collect()
}

/// Seeded weights for `cfg`: matrices and embeddings uniform in
/// ±1/sqrt(fan_in), norm gains near 1, small biases.
pub fn random_weights(cfg: &ModelConfig, seed: u64) -> Weights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.d_model;
    let inv = |n: usize| 1.0 / (n as f32).sqrt();
    let embed = uniform_matrix(&mut rng, cfg.vocab_size, d, inv(d));
    let pos_embed = (cfg.positional == Positional::Learned)
        .then(|| uniform_matrix(&mut rng, cfg.n_ctx, d, inv(d)));
    let unembed =
        (!cfg.tie_embeddings).then(|| uniform_matrix(&mut rng, d, cfg.vocab_size, inv(d)));
    let final_norm = uniform_vec(&mut rng, d, 1.0, 0.2);
    let layers = (0..cfg.n_layers)
        .map(|_| {
            let bias =
                |rng: &mut ChaCha8Rng, n| cfg.attn_bias.then(|| uniform_vec(rng, n, 0.0, 0.1));
            LayerWeights {
                attn_norm: uniform_vec(&mut rng, d, 1.0, 0.2),
                w_q: uniform_matrix(&mut rng, d, cfg.attn_width(), inv(d)),
                w_k: uniform_matrix(&mut rng, d, cfg.kv_width(), inv(d)),
                w_v: uniform_matrix(&mut rng, d, cfg.kv_width(), inv(d)),
                w_o: uniform_matrix(&mut rng, cfg.attn_width(), d, inv(cfg.attn_width())),
                b_q: bias(&mut rng, cfg.attn_width()),
                b_k: bias(&mut rng, cfg.kv_width()),
                b_v: bias(&mut rng, cfg.kv_width()),
                b_o: bias(&mut rng, d),
                mlp_norm: uniform_vec(&mut rng, d, 1.0, 0.2),
                w_in: uniform_matrix(&mut rng, d, cfg.d_mlp, inv(d)),
                w_gate: (cfg.activation == Activation::GatedGelu)
                    .then(|| uniform_matrix(&mut rng, d, cfg.d_mlp, inv(d))),
                w_out: uniform_matrix(&mut rng, cfg.d_mlp, d, inv(cfg.d_mlp)),
            }
        })
        .collect();
    Weights {
        embed,
        pos_embed,
        unembed,
        final_norm,
        layers,
    }
}

/// Random model over `vocab_size` tokens.
pub fn random_model(seed: u64, vocab_size: usize) -> Model {
    let cfg = random_config(seed, vocab_size);
    let w = random_weights(&cfg, seed);
    Model::new(cfg, w).expect("random weights match their config")
}

/// Hand-wired copy-head model together with its vocabulary.
#[derive(Debug, Clone)]
pub struct CopyHeadFixture {
    pub model: Model,
    pub vocab: Vocab,
    /// Head that copies the instrument noun.
    pub copy_head: HeadRef,
    /// Head that copies the attribute noun.
    pub attribute_head: HeadRef,
}

/// Position of the instrument and attribute nouns in a rendered prompt:
/// `<bos> A subj has a INSTR . A obj has a ATTR . The subj verb the obj prep a`.
pub const INSTRUMENT_POS: usize = 5;
pub const ATTRIBUTE_POS: usize = 11;
pub const PROMPT_LEN: usize = 20;

const FIXTURE_N_CTX: usize = 32;
/// Residual weight the copy heads write onto the copied noun.
const INSTRUMENT_WRITE: f32 = 4.0;
const ATTRIBUTE_WRITE: f32 = 2.0;
/// Unembedding weight of `<eos>` on the noun flag: larger than any noun
/// logit once a noun token itself sits at the last position.
const EOS_WEIGHT: f32 = 8.0;
/// Target pre-softmax score of the copied position.
const ATTN_SCORE: f32 = 30.0;
const NOISE: f32 = 0.01;

/// Builds the copy-head model for `items` (every prompt must render to
/// [`PROMPT_LEN`] single-token words).
///
/// Residual layout: one dimension per noun token, a noun flag, a constant
/// dimension and one-hot positions. Noun tokens embed as their own
/// dimension plus the flag; every other token embeds as zero. Layer 0
/// head 2 attends from every query to position [`INSTRUMENT_POS`] and
/// writes the noun found there; head 0 does the same for
/// [`ATTRIBUTE_POS`] with half the weight. The unembedding reads noun
/// dimensions directly and maps the flag to `<eos>`, so decoding emits the
/// more strongly written noun and then stops. All remaining weights are
/// small seeded noise.
pub fn copy_head_fixture(items: &[PromptItem], seed: u64) -> Result<CopyHeadFixture> {
    let vocab = word_level_vocab(items)?;
    for item in items {
        let n = vocab.encode(&render_prompt(item)).len();
        if n != PROMPT_LEN {
            return Err(Error::InvalidArgument(format!(
                "item {} renders to {n} tokens, the fixture needs {PROMPT_LEN}",
                item.id
            )));
        }
    }
    let nouns: BTreeSet<u32> = items
        .iter()
        .flat_map(|it| [it.instrument(), it.attribute()])
        .map(|w| vocab.first_token_id(w, "a").map(|t| t.id))
        .collect::<Result<_>>()?;
    let nouns: Vec<u32> = nouns.into_iter().collect();
    let n_nouns = nouns.len();
    let flag = n_nouns;
    let constant = n_nouns + 1;
    let pos0 = n_nouns + 2;
    let d = pos0 + FIXTURE_N_CTX;
    let d_head = n_nouns.next_multiple_of(8);

    let cfg = ModelConfig {
        n_layers: 2,
        n_heads: 3,
        n_kv_heads: 3,
        d_model: d,
        d_head,
        d_mlp: 16,
        vocab_size: vocab.len(),
        n_ctx: FIXTURE_N_CTX,
        norm_kind: NormKind::Rms,
        activation: Activation::Gelu,
        positional: Positional::Learned,
        logit_softcap: None,
        tie_embeddings: false,
        attn_bias: false,
    };

    let mut w = random_weights(&cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut noise = |t: &mut Tensor2D| {
        for v in t.data_mut() {
            *v = rng.random_range(-NOISE..NOISE);
        }
    };
    w.final_norm = vec![1.0; d];
    for lw in &mut w.layers {
        lw.attn_norm = vec![1.0; d];
        lw.mlp_norm = vec![1.0; d];
        for t in [
            &mut lw.w_q,
            &mut lw.w_k,
            &mut lw.w_v,
            &mut lw.w_o,
            &mut lw.w_in,
            &mut lw.w_out,
        ] {
            noise(t);
        }
    }

    let mut embed = Tensor2D::zeros(cfg.vocab_size, d);
    for (slot, &id) in nouns.iter().enumerate() {
        embed.set(id as usize, slot, 1.0);
        embed.set(id as usize, flag, 1.0);
    }
    let mut pos_embed = Tensor2D::zeros(FIXTURE_N_CTX, d);
    for p in 0..FIXTURE_N_CTX {
        pos_embed.set(p, constant, 1.0);
        pos_embed.set(p, pos0 + p, 1.0);
    }
    let mut unembed = Tensor2D::zeros(d, cfg.vocab_size);
    for (slot, &id) in nouns.iter().enumerate() {
        unembed.set(slot, id as usize, 1.0);
    }
    unembed.set(flag, EOS as usize, EOS_WEIGHT);

    // RMS scales with unit gains: a function-word position has two unit
    // entries, a noun position four.
    let s_fn = (d as f32 / 2.0).sqrt();
    let s_noun = (d as f32 / 4.0).sqrt();
    let gain = ATTN_SCORE * (d_head as f32).sqrt() / (s_fn * s_noun);

    let copy_head = HeadRef::new(0, 2);
    let attribute_head = HeadRef::new(0, 0);
    let l0 = &mut w.layers[0];
    for (head, src, write) in [
        (copy_head.head, INSTRUMENT_POS, INSTRUMENT_WRITE),
        (attribute_head.head, ATTRIBUTE_POS, ATTRIBUTE_WRITE),
    ] {
        let base = head * d_head;
        for c in base..base + d_head {
            for r in 0..d {
                l0.w_q.set(r, c, 0.0);
                l0.w_k.set(r, c, 0.0);
                l0.w_v.set(r, c, 0.0);
                l0.w_o.set(c, r, 0.0);
            }
        }
        l0.w_q.set(constant, base, gain);
        l0.w_k.set(pos0 + src, base, 1.0);
        for slot in 0..n_nouns {
            l0.w_v.set(slot, base + slot, 1.0);
            l0.w_o.set(base + slot, slot, write / s_noun);
        }
    }

    w.embed = embed;
    w.pos_embed = Some(pos_embed);
    w.unembed = Some(unembed);
    Ok(CopyHeadFixture {
        model: Model::new(cfg, w)?,
        vocab,
        copy_head,
        attribute_head,
    })
}
