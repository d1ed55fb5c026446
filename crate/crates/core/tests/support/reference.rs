// SPDX-License-Identifier: MIT OR Apache-2.0

//! Naive double-precision forward pass written from the architecture
//! description alone. Shares no arithmetic with the engine; it reads
//! weights through the serialized tensor map so layout assumptions are
//! checked too.

#![allow(clippy::needless_range_loop)]

use std::collections::HashMap;

use ppscope_core::config::{Activation, ModelConfig, NormKind, Positional};
use ppscope_core::Weights;

pub struct RefModel {
    cfg: ModelConfig,
    t: HashMap<String, (Vec<usize>, Vec<f64>)>,
}

impl RefModel {
    pub fn new(cfg: &ModelConfig, w: &Weights) -> Self {
        let t = w
            .to_tensor_map()
            .into_iter()
            .map(|(k, v)| {
                (
                    k,
                    (v.shape.clone(), v.data.iter().map(|&x| x as f64).collect()),
                )
            })
            .collect();
        Self {
            cfg: cfg.clone(),
            t,
        }
    }

    fn has(&self, name: &str) -> bool {
        self.t.contains_key(name)
    }

    fn at(&self, name: &str, r: usize, c: usize) -> f64 {
        let (shape, data) = &self.t[name];
        data[r * shape[1] + c]
    }

    fn v(&self, name: &str, i: usize) -> f64 {
        self.t[name].1[i]
    }

    fn norm(&self, x: &[f64], gamma: &str) -> Vec<f64> {
        let n = x.len() as f64;
        let eps = 1e-6;
        let mut out = vec![0.0; x.len()];
        match self.cfg.norm_kind {
            NormKind::Rms => {
                let mut ss = 0.0;
                for i in 0..x.len() {
                    ss += x[i] * x[i];
                }
                let denom = (ss / n + eps).sqrt();
                for i in 0..x.len() {
                    out[i] = x[i] / denom * self.v(gamma, i);
                }
            }
            NormKind::Layernorm => {
                let mut mu = 0.0;
                for i in 0..x.len() {
                    mu += x[i];
                }
                mu /= n;
                let mut var = 0.0;
                for i in 0..x.len() {
                    var += (x[i] - mu) * (x[i] - mu);
                }
                let denom = (var / n + eps).sqrt();
                for i in 0..x.len() {
                    out[i] = (x[i] - mu) / denom * self.v(gamma, i);
                }
            }
        }
        out
    }

    fn project(&self, x: &[f64], w: &str, bias: Option<String>, cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; cols];
        for c in 0..cols {
            let mut s = 0.0;
            for r in 0..x.len() {
                s += x[r] * self.at(w, r, c);
            }
            if let Some(b) = &bias {
                s += self.v(b, c);
            }
            out[c] = s;
        }
        out
    }

    fn rotate(&self, vec: &mut [f64], pos: usize) {
        let d = vec.len();
        let half = d / 2;
        for i in 0..half {
            let theta = pos as f64 * 10000f64.powf(-(2.0 * i as f64) / d as f64);
            let (a, b) = (vec[i], vec[i + half]);
            vec[i] = a * theta.cos() - b * theta.sin();
            vec[i + half] = a * theta.sin() + b * theta.cos();
        }
    }

    /// Logits (after softcap) for every position. `alpha(layer, head)`
    /// scales that query head's value vectors.
    pub fn forward_scaled(
        &self,
        tokens: &[u32],
        alpha: &dyn Fn(usize, usize) -> f64,
    ) -> Vec<Vec<f64>> {
        let c = &self.cfg;
        let (d, dh, nh, nkv) = (c.d_model, c.d_head, c.n_heads, c.n_kv_heads);
        let tl = tokens.len();
        let mut x: Vec<Vec<f64>> = (0..tl)
            .map(|p| {
                (0..d)
                    .map(|i| {
                        let mut e = self.at("embed", tokens[p] as usize, i);
                        if c.positional == Positional::Learned {
                            e += self.at("pos_embed", p, i);
                        }
                        e
                    })
                    .collect()
            })
            .collect();

        for l in 0..c.n_layers {
            let pre = format!("layers.{l}");
            let bias = |n: &str| {
                let name = format!("{pre}.attn.{n}");
                self.has(&name).then_some(name)
            };
            let mut q = Vec::new();
            let mut k = Vec::new();
            let mut v = Vec::new();
            for p in 0..tl {
                let h = self.norm(&x[p], &format!("{pre}.attn_norm.gamma"));
                q.push(self.project(&h, &format!("{pre}.attn.w_q"), bias("b_q"), nh * dh));
                k.push(self.project(&h, &format!("{pre}.attn.w_k"), bias("b_k"), nkv * dh));
                v.push(self.project(&h, &format!("{pre}.attn.w_v"), bias("b_v"), nkv * dh));
            }
            if c.positional == Positional::Rotary {
                for p in 0..tl {
                    for h in 0..nh {
                        self.rotate(&mut q[p][h * dh..(h + 1) * dh], p);
                    }
                    for g in 0..nkv {
                        self.rotate(&mut k[p][g * dh..(g + 1) * dh], p);
                    }
                }
            }
            let per_group = nh / nkv;
            let mut z = vec![vec![0.0; nh * dh]; tl];
            for h in 0..nh {
                let g = h / per_group;
                let a = alpha(l, h);
                for p in 0..tl {
                    let mut scores = Vec::new();
                    for j in 0..=p {
                        let mut s = 0.0;
                        for i in 0..dh {
                            s += q[p][h * dh + i] * k[j][g * dh + i];
                        }
                        scores.push(s / (dh as f64).sqrt());
                    }
                    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                    let total: f64 = e.iter().sum();
                    for j in 0..=p {
                        for i in 0..dh {
                            z[p][h * dh + i] += e[j] / total * a * v[j][g * dh + i];
                        }
                    }
                }
            }
            for p in 0..tl {
                let o = self.project(&z[p], &format!("{pre}.attn.w_o"), bias("b_o"), d);
                for i in 0..d {
                    x[p][i] += o[i];
                }
            }
            for p in 0..tl {
                let h = self.norm(&x[p], &format!("{pre}.mlp_norm.gamma"));
                let up = self.project(&h, &format!("{pre}.mlp.w_in"), None, c.d_mlp);
                let act: Vec<f64> = match c.activation {
                    Activation::Gelu => up.iter().map(|&u| gelu(u)).collect(),
                    Activation::GatedGelu => {
                        let gate = self.project(&h, &format!("{pre}.mlp.w_gate"), None, c.d_mlp);
                        gate.iter().zip(&up).map(|(&g, &u)| gelu(g) * u).collect()
                    }
                };
                let o = self.project(&act, &format!("{pre}.mlp.w_out"), None, d);
                for i in 0..d {
                    x[p][i] += o[i];
                }
            }
        }

        let mut logits = Vec::new();
        for p in 0..tl {
            let h = self.norm(&x[p], "final_norm.gamma");
            let mut row = Vec::with_capacity(c.vocab_size);
            for t in 0..c.vocab_size {
                let mut s = 0.0;
                for i in 0..d {
                    let u = if c.tie_embeddings {
                        self.at("embed", t, i)
                    } else {
                        self.at("unembed", i, t)
                    };
                    s += h[i] * u;
                }
                if let Some(cap) = c.logit_softcap {
                    let cap = cap as f64;
                    s = cap * (s / cap).tanh();
                }
                row.push(s);
            }
            logits.push(row);
        }
        logits
    }

    pub fn forward(&self, tokens: &[u32]) -> Vec<Vec<f64>> {
        self.forward_scaled(tokens, &|_, _| 1.0)
    }
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}
