// SPDX-License-Identifier: MIT OR Apache-2.0

mod support;

use ppscope_core::config::{Activation, ModelConfig, NormKind, Positional};
use ppscope_core::model::{argmax_lowest, Model};
use ppscope_core::tensor::{rmsnorm, Tensor2D};
use ppscope_core::toy::{random_config, random_weights};
use support::reference::RefModel;
use support::{max_abs_diff, suite_prompts, toy};

fn small_cfg(vocab: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        n_kv_heads: 2,
        d_model: 8,
        d_head: 4,
        d_mlp: 16,
        vocab_size: vocab,
        n_ctx: 16,
        norm_kind: NormKind::Rms,
        activation: Activation::Gelu,
        positional: Positional::Learned,
        logit_softcap: None,
        tie_embeddings: false,
        attn_bias: false,
    }
}

fn assert_parity(m: &Model, tokens: &[u32], tol: f64) {
    let got = m.forward(tokens, &[]).unwrap().logits;
    let want = RefModel::new(m.config(), m.weights()).forward(tokens);
    for (p, row) in want.iter().enumerate() {
        for (t, &w) in row.iter().enumerate() {
            let g = got.get(p, t) as f64;
            assert!((g - w).abs() < tol, "pos {p} token {t}: {g} vs {w}");
        }
    }
}

#[test]
fn seed_42_small_model_matches_reference() {
    let cfg = small_cfg(12);
    let m = Model::new(cfg.clone(), random_weights(&cfg, 42)).unwrap();
    assert_parity(&m, &[1, 4, 7, 11, 5, 5, 9], 1e-5);
}

#[test]
fn random_models_match_reference() {
    let (_, vocab, prompts) = suite_prompts(20);
    for seed in 0..20 {
        let m = toy(seed, &vocab);
        assert_parity(&m, &prompts[seed as usize], 1e-5);
    }
}

#[test]
fn cache_invariants_hold_on_100_models() {
    let (_, vocab, prompts) = suite_prompts(3);
    for seed in 0..100 {
        let m = toy(seed, &vocab);
        let cfg = m.config();
        let c = m.forward(&prompts[(seed % 3) as usize], &[]).unwrap().cache;
        for l in 0..cfg.n_layers {
            let next = if l + 1 < cfg.n_layers {
                &c.resid_in[l + 1]
            } else {
                &c.final_resid
            };
            let sum = c.resid_in[l]
                .add(&c.attn_out[l])
                .unwrap()
                .add(&c.mlp_out[l])
                .unwrap();
            assert!(
                max_abs_diff(next.data(), sum.data()) < 1e-5,
                "seed {seed} layer {l}"
            );

            let mut heads = Tensor2D::zeros(c.seq_len(), cfg.d_model);
            for h in 0..cfg.n_heads {
                heads = heads.add(&m.head_contribution(&c, l, h).unwrap()).unwrap();
            }
            if let Some(b) = &m.weights().layers[l].b_o {
                for p in 0..c.seq_len() {
                    for (x, y) in heads.row_mut(p).iter_mut().zip(b) {
                        *x += y;
                    }
                }
            }
            assert!(
                max_abs_diff(c.attn_out[l].data(), heads.data()) < 1e-5,
                "seed {seed} layer {l}"
            );
        }
        // full residual additivity from the embedding
        let mut total = c.embed.clone();
        for l in 0..cfg.n_layers {
            total = total
                .add(&c.attn_out[l])
                .unwrap()
                .add(&c.mlp_out[l])
                .unwrap();
        }
        assert!(
            max_abs_diff(total.data(), c.final_resid.data()) < 1e-5,
            "seed {seed}"
        );
    }
}

#[test]
fn forward_is_causal() {
    let (_, vocab, prompts) = suite_prompts(1);
    for seed in 0..10 {
        let m = toy(seed, &vocab);
        let a = prompts[0].clone();
        let p = 9;
        let mut b = a.clone();
        b[p] = (b[p] + 17) % vocab.len() as u32;
        let la = m.forward(&a, &[]).unwrap().logits;
        let lb = m.forward(&b, &[]).unwrap().logits;
        for q in 0..p {
            assert_eq!(la.row(q), lb.row(q), "seed {seed} position {q}");
        }
        assert_ne!(la.row(p), lb.row(p));
    }
}

#[test]
fn forward_is_deterministic_across_threads() {
    let (_, vocab, prompts) = suite_prompts(1);
    let m = toy(11, &vocab);
    let first = m.forward(&prompts[0], &[]).unwrap();
    let again = m.forward(&prompts[0], &[]).unwrap();
    assert_eq!(first.logits, again.logits);
    assert_eq!(first.cache, again.cache);
    let threaded = std::thread::scope(|s| {
        let hs: Vec<_> = (0..4)
            .map(|_| s.spawn(|| m.forward(&prompts[0], &[]).unwrap().logits))
            .collect();
        hs.into_iter()
            .map(|h| h.join().unwrap())
            .collect::<Vec<_>>()
    });
    for l in threaded {
        assert_eq!(l, first.logits);
    }
}

#[test]
fn zero_blocks_reduce_to_embedding_readout() {
    let mut cfg = small_cfg(10);
    cfg.tie_embeddings = true;
    cfg.positional = Positional::None;
    let mut w = random_weights(&cfg, 3);
    for lw in &mut w.layers {
        for t in [
            &mut lw.w_q,
            &mut lw.w_k,
            &mut lw.w_v,
            &mut lw.w_o,
            &mut lw.w_in,
            &mut lw.w_out,
        ] {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let m = Model::new(cfg.clone(), w.clone()).unwrap();
    let tokens = [1u32, 6, 8];
    let logits = m.forward(&tokens, &[]).unwrap().logits;
    for (p, &t) in tokens.iter().enumerate() {
        let h = rmsnorm(w.embed.row(t as usize), &w.final_norm, 1e-6).unwrap();
        for v in 0..cfg.vocab_size {
            let want: f32 = h.iter().zip(w.embed.row(v)).map(|(a, b)| a * b).sum();
            assert!((logits.get(p, v) - want).abs() < 1e-6);
        }
    }
}

#[test]
fn forced_unembedding_is_a_greedy_fixed_point() {
    let cfg = small_cfg(10);
    let mut w = random_weights(&cfg, 5);
    // Every token embeds as the all-ones vector and the blocks write
    // nothing, so the final residual is positive everywhere.
    w.embed = Tensor2D::new(
        cfg.vocab_size,
        cfg.d_model,
        vec![1.0; cfg.vocab_size * cfg.d_model],
    )
    .unwrap();
    w.pos_embed = Some(Tensor2D::zeros(cfg.n_ctx, cfg.d_model));
    w.final_norm = vec![1.0; cfg.d_model];
    for lw in &mut w.layers {
        lw.w_o.data_mut().iter_mut().for_each(|v| *v = 0.0);
        lw.w_out.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut u = Tensor2D::zeros(cfg.d_model, cfg.vocab_size);
    for i in 0..cfg.d_model {
        u.set(i, 5, 1.0);
    }
    w.unembed = Some(u);
    let m = Model::new(cfg, w).unwrap();
    assert_eq!(
        m.generate_greedy(&[1, 2], 4, &[], None).unwrap(),
        vec![5; 4]
    );
    assert!(m
        .generate_greedy(&[1, 2], 4, &[], Some(5))
        .unwrap()
        .is_empty());
}

#[test]
fn all_tied_logits_emit_token_zero() {
    let cfg = small_cfg(10);
    let mut w = random_weights(&cfg, 5);
    w.final_norm = vec![0.0; cfg.d_model];
    let m = Model::new(cfg, w).unwrap();
    assert_eq!(
        m.generate_greedy(&[1, 2], 3, &[], None).unwrap(),
        vec![0, 0, 0]
    );
}

#[test]
fn tied_logits_pick_lowest_id() {
    let mut l = vec![-1.0f32; 12];
    l[9] = 2.0;
    l[7] = 2.0;
    assert_eq!(argmax_lowest(&l), 7);
}

#[test]
fn greedy_matches_manual_argmax_loop() {
    let (_, vocab, prompts) = suite_prompts(2);
    for seed in [2u64, 8, 31] {
        let m = toy(seed, &vocab);
        let out = m.generate_greedy(&prompts[1], 4, &[], None).unwrap();
        let mut seq = prompts[1].clone();
        for &t in &out {
            let logits = m.forward(&seq, &[]).unwrap().logits;
            assert_eq!(argmax_lowest(logits.row(seq.len() - 1)) as u32, t);
            seq.push(t);
        }
        assert_eq!(out.len(), 4);
    }
}

#[test]
fn softcap_bounds_logits_and_keeps_raw_values() {
    let (_, vocab, prompts) = suite_prompts(1);
    for seed in 0..40 {
        let cfg = random_config(seed, vocab.len());
        let Some(cap) = cfg.logit_softcap else {
            continue;
        };
        let m = Model::new(cfg.clone(), random_weights(&cfg, seed)).unwrap();
        let out = m.forward(&prompts[0], &[]).unwrap();
        let raw = out.cache.pre_softcap_logits.as_ref().unwrap();
        for (l, r) in out.logits.data().iter().zip(raw.data()) {
            assert!(l.abs() <= cap);
            assert_eq!(*l, cap * (r / cap).tanh());
        }
    }
}

#[test]
fn container_roundtrip_preserves_forward() {
    let (_, vocab, prompts) = suite_prompts(1);
    let m = toy(17, &vocab);
    let dir = tempfile::tempdir().unwrap();
    let (wp, cp) = (dir.path().join("m.ppsc"), dir.path().join("c.json"));
    m.save(&wp, &cp).unwrap();
    let back = Model::load(&wp, &cp).unwrap();
    assert_eq!(
        back.forward(&prompts[0], &[]).unwrap().logits,
        m.forward(&prompts[0], &[]).unwrap().logits
    );
}
